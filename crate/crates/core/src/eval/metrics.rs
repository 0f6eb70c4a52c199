use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Text normalization applied before comparing predictions with ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Normalization {
    pub case_sensitive: bool,
}

impl Normalization {
    /// Drops non-alphanumeric characters and, unless case sensitive, lowercases.
    pub fn apply(&self, s: &str) -> String {
        s.chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(|c| {
                let v: Vec<char> = if self.case_sensitive {
                    vec![c]
                } else {
                    c.to_lowercase().collect()
                };
                v
            })
            .collect()
    }
}

fn check_lengths(preds: &[String], gts: &[String]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} ground-truth strings",
            preds.len(),
            gts.len()
        )));
    }
    if gts.is_empty() {
        return Err(Error::Contract("empty ground-truth corpus".into()));
    }
    Ok(())
}

pub fn word_accuracy(preds: &[String], gts: &[String], norm: Normalization) -> Result<f64> {
    check_lengths(preds, gts)?;
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| norm.apply(p) == norm.apply(g))
        .count();
    Ok(hits as f64 / gts.len() as f64)
}

/// Edit operation of an alignment, in tie-break preference order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EditOp {
    Match,
    Substitute,
    /// A ground-truth character with no predicted counterpart.
    Delete,
    /// A predicted character with no ground-truth counterpart.
    Insert,
}

/// Minimum-edit-distance alignment of `pred` against `gt` (unit costs). Among
/// optimal alignments the traceback, running from the ends of both strings,
/// prefers match, then substitution, deletion, insertion. Ops are returned in
/// left-to-right order.
pub fn align(pred: &[char], gt: &[char]) -> Vec<EditOp> {
    let (n, k) = (gt.len(), pred.len());
    let mut dist = vec![vec![0usize; k + 1]; n + 1];
    for (i, row) in dist.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=k {
        dist[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=k {
            let diag = dist[i - 1][j - 1] + usize::from(gt[i - 1] != pred[j - 1]);
            dist[i][j] = diag.min(dist[i - 1][j] + 1).min(dist[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(k));
    let (mut i, mut j) = (n, k);
    while i > 0 || j > 0 {
        let here = dist[i][j];
        if i > 0 && j > 0 && gt[i - 1] == pred[j - 1] && dist[i - 1][j - 1] == here {
            ops.push(EditOp::Match);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && gt[i - 1] != pred[j - 1] && dist[i - 1][j - 1] + 1 == here {
            ops.push(EditOp::Substitute);
            i -= 1;
            j -= 1;
        } else if i > 0 && dist[i - 1][j] + 1 == here {
            ops.push(EditOp::Delete);
            i -= 1;
        } else {
            ops.push(EditOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn aligned_matches(pred: &str, gt: &str) -> usize {
    let p: Vec<char> = pred.chars().collect();
    let g: Vec<char> = gt.chars().collect();
    align(&p, &g).iter().filter(|&&op| op == EditOp::Match).count()
}

/// Character recall and precision over a corpus.
///
/// A zero denominator gives 1 when the other side is empty too and 0 otherwise.
pub fn char_prf(preds: &[String], gts: &[String], norm: Normalization) -> Result<(f64, f64)> {
    check_lengths(preds, gts)?;
    let (mut matches, mut gt_len, mut pred_len) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        let (p, g) = (norm.apply(p), norm.apply(g));
        matches += aligned_matches(&p, &g);
        gt_len += g.chars().count();
        pred_len += p.chars().count();
    }
    let ratio = |den: usize, other: usize| {
        if den == 0 {
            if other == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            matches as f64 / den as f64
        }
    };
    Ok((ratio(gt_len, pred_len), ratio(pred_len, gt_len)))
}

/// One contrastive feature row per valid decoder position.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: usize,
    pub pos: usize,
    pub gt: usize,
    pub pred: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureDump {
    pub rows: Vec<FeatureRow>,
}

impl FeatureDump {
    /// `id pos gt pred v1 .. vd`, one row per line; tokens rendered by `token_name`.
    pub fn to_text(&self, token_name: impl Fn(usize) -> String) -> String {
        let mut out = String::new();
        for r in &self.rows {
            write!(out, "{} {} {} {}", r.id, r.pos, token_name(r.gt), token_name(r.pred)).unwrap();
            for v in &r.features {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

const MAX_PAIRS: usize = 1_000_000;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity over same-class pairs and over different-class pairs,
/// classes given by ground truth. Above a million pairs a fixed-seed sample is used.
pub fn cluster_stats(dump: &FeatureDump) -> Result<(f64, f64)> {
    let rows = &dump.rows;
    let n = rows.len();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    let mut visit = |i: usize, j: usize| {
        let c = cosine(&rows[i].features, &rows[j].features);
        if rows[i].gt == rows[j].gt {
            intra += c;
            n_intra += 1;
        } else {
            inter += c;
            n_inter += 1;
        }
    };
    if total_pairs <= MAX_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                visit(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc1a5);
        let mut drawn = 0;
        while drawn < MAX_PAIRS {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                visit(i, j);
                drawn += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(Error::Contract(
            "cluster statistics need two classes and a class with two samples".into(),
        ));
    }
    Ok((intra / n_intra as f64, inter / n_inter as f64))
}

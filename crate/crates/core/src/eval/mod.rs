//! Recognition metrics, feature dumps and the ablation runner.

mod ablation;
mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationGrid, AblationRow, AblationTable};
pub use metrics::{
    align, aligned_matches, char_prf, cluster_stats, word_accuracy, EditOp, FeatureDump, FeatureRow,
    Normalization,
};

use crate::data::{Charset, Dataset, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{argmax, Model};
use crate::train::pipeline_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub word_acc: f64,
    pub char_recall: f64,
    pub char_precision: f64,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn from_predictions(preds: &[String], gts: &[String], norm: Normalization) -> Result<Self> {
        let word_acc = word_accuracy(preds, gts, norm)?;
        let (char_recall, char_precision) = char_prf(preds, gts, norm)?;
        Ok(Self {
            word_acc,
            char_recall,
            char_precision,
            n_samples: gts.len(),
        })
    }

    pub const TSV_HEADER: &'static str = "word_acc\tchar_recall\tchar_precision\tn_samples";

    pub fn tsv_row(&self) -> String {
        format!(
            "{:.4}\t{:.4}\t{:.4}\t{}",
            self.word_acc, self.char_recall, self.char_precision, self.n_samples
        )
    }

    pub fn to_tsv(&self) -> String {
        format!("{}\n{}\n", Self::TSV_HEADER, self.tsv_row())
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "word_acc={:?}\nchar_recall={:?}\nchar_precision={:?}\nn_samples={}\n",
            self.word_acc, self.char_recall, self.char_precision, self.n_samples
        )
    }
}

/// Greedy predictions for every sample, in dataset order.
pub fn predict(model: &Model, data: &Dataset, batch_size: usize) -> Result<Vec<String>> {
    let pipeline = pipeline_for(&model.config)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut preds = Vec::with_capacity(data.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.assemble_batch(chunk, &pipeline, None)?;
        preds.extend(model.recognize(&batch.images, &batch.corners)?);
    }
    Ok(preds)
}

pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize, norm: Normalization) -> Result<(EvalReport, Vec<String>)> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let preds = predict(model, data, batch_size)?;
    let gts: Vec<String> = data.samples.iter().map(|s| s.text.clone()).collect();
    Ok((EvalReport::from_predictions(&preds, &gts, norm)?, preds))
}

/// Teacher-forced projected features for every non-PAD target position.
pub fn feature_dump(model: &Model, data: &Dataset, batch_size: usize) -> Result<FeatureDump> {
    let pipeline = pipeline_for(&model.config)?;
    let p = model.bind(false);
    let indices: Vec<usize> = (0..data.len()).collect();
    let v = model.config.vocab_size;
    let d = model.config.proj_out;
    let m = model.config.max_len;
    let mut dump = FeatureDump::default();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.assemble_batch(chunk, &pipeline, None)?;
        let memory = model.encode(&p, &batch.images, &batch.corners)?;
        let out = model.decode(&p, &memory, &batch.decoder_input)?;
        let z = model.project(&p, &out.hidden)?;
        let (logits, feats) = (out.logits.data(), z.data());
        for (b, &id) in chunk.iter().enumerate() {
            for pos in 0..m {
                let r = b * m + pos;
                let gt = batch.targets[r];
                if gt == PAD {
                    continue;
                }
                dump.rows.push(FeatureRow {
                    id,
                    pos,
                    gt,
                    pred: argmax(&logits[r * v..(r + 1) * v]),
                    features: feats[r * d..(r + 1) * d].to_vec(),
                });
            }
        }
    }
    Ok(dump)
}

/// Printable name of a token id.
pub fn token_name(charset: &Charset, id: usize) -> String {
    match id {
        PAD => "<pad>".into(),
        BOS => "<bos>".into(),
        EOS => "<eos>".into(),
        _ => charset.symbol(id).map_or_else(|| format!("<{id}>"), |c| c.to_string()),
    }
}

/// Predictions next to ground truth, one `gt<TAB>pred` line per sample.
pub fn predictions_tsv(data: &Dataset, preds: &[String]) -> String {
    let mut s = String::new();
    for (sample, p) in data.samples.iter().zip(preds) {
        writeln!(s, "{}\t{}", sample.text, p).unwrap();
    }
    s
}

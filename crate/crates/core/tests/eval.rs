mod common;

use cornerstr::data::{default_lexicon, Dataset, SynthSpec, EOS};
use cornerstr::eval::{
    char_prf, cluster_stats, evaluate, feature_dump, predict, token_name, word_accuracy, AblationGrid, FeatureDump,
    FeatureRow, Normalization,
};
use cornerstr::model::{FusionMode, Model};
use cornerstr::train::pipeline_for;
use rand::Rng;

use common::{align_oracle, all_strings, rng, tiny_model_config};

fn unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn random_dump(seed: u64, n: usize, d: usize, classes: usize) -> FeatureDump {
    let mut r = rng(seed);
    FeatureDump {
        rows: (0..n)
            .map(|i| FeatureRow {
                id: i,
                pos: 0,
                gt: r.random_range(0..classes),
                pred: 0,
                features: unit(&mut r, d),
            })
            .collect(),
    }
}

/// Orthogonal matrix from Gram-Schmidt on random rows.
fn orthogonal(seed: u64, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn random_directions_show_no_clustering() {
    let (intra, inter) = cluster_stats(&random_dump(1, 500, 32, 10)).unwrap();
    assert!((intra - inter).abs() < 0.05, "intra {intra} inter {inter}");
}

#[test]
fn cluster_statistics_are_rotation_invariant() {
    let d = 12;
    let dump = random_dump(2, 120, d, 4);
    let q = orthogonal(3, d);
    let mut rotated = dump.clone();
    for row in &mut rotated.rows {
        row.features = q.iter().map(|qr| qr.iter().zip(&row.features).map(|(a, b)| a * b).sum()).collect();
    }
    let (a, b) = cluster_stats(&dump).unwrap();
    let (ra, rb) = cluster_stats(&rotated).unwrap();
    assert!((a - ra).abs() < 1e-12 && (b - rb).abs() < 1e-12);
}

#[test]
fn identical_features_are_perfectly_similar() {
    let mut dump = random_dump(4, 30, 8, 3);
    let v = dump.rows[0].features.clone();
    dump.rows.iter_mut().for_each(|r| r.features = v.clone());
    let (intra, inter) = cluster_stats(&dump).unwrap();
    assert!((intra - 1.0).abs() < 1e-12 && (inter - 1.0).abs() < 1e-12);
    let one_class = FeatureDump {
        rows: dump.rows.iter().cloned().map(|r| FeatureRow { gt: 0, ..r }).collect(),
    };
    assert!(cluster_stats(&one_class).is_err());
}

#[test]
fn case_folding_is_optional() {
    let (p, g) = (strings(&["CaT", "dog!"]), strings(&["cat", "dog"]));
    assert_eq!(word_accuracy(&p, &g, Normalization::default()).unwrap(), 1.0);
    let sensitive = Normalization { case_sensitive: true };
    assert_eq!(word_accuracy(&p, &g, sensitive).unwrap(), 0.5);
    assert_eq!(char_prf(&p, &g, Normalization::default()).unwrap(), (1.0, 1.0));
}

#[test]
fn full_character_scores_only_for_exact_matches() {
    let all = all_strings(&['a', 'b', 'c'], 3);
    let norm = Normalization::default();
    for g in all.iter().filter(|s| !s.is_empty()) {
        for p in &all {
            let (rec, prec) = char_prf(std::slice::from_ref(p), std::slice::from_ref(g), norm).unwrap();
            assert_eq!(rec == 1.0 && prec == 1.0, p == g, "{p:?} vs {g:?}");
            assert_eq!((rec, prec), align_oracle::prf(p, g), "{p:?} vs {g:?}");
        }
    }
}

#[test]
fn feature_dump_covers_every_labelled_position() {
    let cfg = tiny_model_config();
    let model = Model::new(cfg.clone()).unwrap();
    let pipeline = pipeline_for(&cfg).unwrap();
    let data = Dataset::synthetic(&SynthSpec::parse("count=7,seed=5").unwrap(), &default_lexicon(), &pipeline).unwrap();
    let dump = feature_dump(&model, &data, 3).unwrap();
    let expected: usize = data.samples.iter().map(|s| s.text.chars().count() + 1).sum();
    assert_eq!(dump.rows.len(), expected);
    for row in &dump.rows {
        let s = &data.samples[row.id];
        assert_eq!(row.gt, s.label.ids()[row.pos]);
        assert_eq!(row.gt == EOS, row.pos == s.text.chars().count());
        assert_eq!(row.features.len(), cfg.proj_out);
        assert!((row.features.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(feature_dump(&model, &data, 64).unwrap(), dump);

    let charset = cfg.charset().unwrap();
    let text = dump.to_text(|id| token_name(&charset, id));
    for (line, row) in text.lines().zip(&dump.rows) {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f.len(), 4 + cfg.proj_out);
        assert_eq!(f[0].parse::<usize>().unwrap(), row.id);
        assert_eq!(f[2], token_name(&charset, row.gt));
        let back: Vec<f64> = f[4..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(back, row.features);
    }
    assert!(text.contains(" <eos> "));
}

#[test]
fn predictions_do_not_depend_on_batching() {
    let cfg = tiny_model_config();
    let model = Model::new(cfg.clone()).unwrap();
    let pipeline = pipeline_for(&cfg).unwrap();
    let data = Dataset::synthetic(&SynthSpec::parse("count=5,seed=6").unwrap(), &default_lexicon(), &pipeline).unwrap();
    let one = predict(&model, &data, 1).unwrap();
    assert_eq!(one, predict(&model, &data, 4).unwrap());
    let (report, preds) = evaluate(&model, &data, 2, Normalization::default()).unwrap();
    assert_eq!(preds, one);
    assert_eq!(report.n_samples, 5);
    let gts: Vec<String> = data.samples.iter().map(|s| s.text.clone()).collect();
    assert_eq!(report.word_acc, word_accuracy(&preds, &gts, Normalization::default()).unwrap());
}

#[test]
fn default_grid_compares_corner_query_with_no_fusion() {
    let variants = AblationGrid::default().variants();
    let modes: Vec<FusionMode> = variants.iter().map(|(m, _)| m.fusion_mode).collect();
    assert_eq!(modes, [FusionMode::CornerQuery, FusionMode::None]);
    let grid = AblationGrid::from_json(r#"{"fusion_modes":["add","concat"],"lambdas":[0,0.1,0.2],"taus":[0.05,0.1]}"#).unwrap();
    assert_eq!(grid.variants().len(), 12);
    assert!(AblationGrid::from_json(r#"{"fusion_modes":["sideways"]}"#).is_err());
}

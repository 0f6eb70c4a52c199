//! Trains a small recognizer for a few hundred steps, then reports word accuracy,
//! character recall and precision, a few predictions, and feature cluster statistics.
//!
//! ```text
//! cargo run --release --example evaluate -- [checkpoint]
//! ```

use cornerstr::data::{default_lexicon, AugmentPolicy, Dataset, SynthSpec};
use cornerstr::eval::{cluster_stats, evaluate, feature_dump, Normalization};
use cornerstr::model::{Model, ModelConfig};
use cornerstr::train::{pipeline_for, TrainConfig, Trainer};

fn small_model() -> cornerstr::Result<Model> {
    let cfg = ModelConfig {
        d_model: 32,
        n_heads: 2,
        n_enc_blocks: 2,
        n_dec_blocks: 1,
        ffn_dim: 64,
        proj_hidden: 32,
        proj_out: 32,
        image_h: 16,
        image_w: 64,
        max_len: 12,
        ..ModelConfig::toy()
    };
    let train = TrainConfig {
        lr: 1e-3,
        batch_size: 16,
        epochs: 20,
        decay_epoch: 20,
        augment: AugmentPolicy::disabled(),
        ..TrainConfig::default()
    };
    let pipeline = pipeline_for(&cfg)?;
    let data = Dataset::synthetic(&SynthSpec::parse("count=40,seed=1")?, &default_lexicon(), &pipeline)?;
    let mut trainer = Trainer::new(Model::new(cfg)?, train)?;
    trainer.fit(&data, None, |_| Ok(true))?;
    Ok(trainer.model)
}

fn main() -> cornerstr::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => Model::load(path.as_ref())?,
        None => small_model()?,
    };
    let pipeline = pipeline_for(&model.config)?;
    let data = Dataset::synthetic(&SynthSpec::parse("count=40,seed=1")?, &default_lexicon(), &pipeline)?;
    let (report, preds) = evaluate(&model, &data, 20, Normalization::default())?;
    print!("{}", report.to_tsv());
    for (s, p) in data.samples.iter().zip(&preds).take(8) {
        println!("{:<12} -> {p}", s.text);
    }
    let (intra, inter) = cluster_stats(&feature_dump(&model, &data, 20)?)?;
    println!("mean cosine: same character {intra:.3}, different {inter:.3}");
    Ok(())
}

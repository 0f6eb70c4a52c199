//! Memorizes a small synthetic word set and reports word accuracy as training runs.
//!
//! ```text
//! cargo run --release --example train_overfit -- [words] [max_steps] [lambda]
//! ```

use std::time::Instant;

use cornerstr::data::{default_lexicon, AugmentPolicy, Dataset, SynthSpec};
use cornerstr::eval::{cluster_stats, evaluate, feature_dump, Normalization};
use cornerstr::model::{Model, ModelConfig};
use cornerstr::train::{pipeline_for, TrainConfig, Trainer};

fn main() -> cornerstr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let words: usize = args.first().map_or(200, |a| a.parse().unwrap());
    let max_steps: usize = args.get(1).map_or(3000, |a| a.parse().unwrap());
    let lambda: f64 = args.get(2).map_or(0.1, |a| a.parse().unwrap());
    let stop_at_max = args.get(3).is_some_and(|a| a == "full");

    let model_cfg = ModelConfig {
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
    let train_cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 16,
        epochs: 1000,
        decay_epoch: 1000,
        max_steps: Some(max_steps),
        lambda,
        augment: AugmentPolicy::disabled(),
        seed: 7,
        ..TrainConfig::default()
    };
    let pipeline = pipeline_for(&model_cfg)?;
    let spec = SynthSpec::parse(&format!("synth:count={words},seed=7"))?;
    let data = Dataset::synthetic(&spec, &default_lexicon(), &pipeline)?;
    let mut trainer = Trainer::new(Model::new(model_cfg)?, train_cfg)?;
    let start = Instant::now();
    trainer.fit(&data, None, |t| {
        if t.state.epoch % 10 != 0 {
            return Ok(true);
        }
        let (report, _) = evaluate(&t.model, &data, 100, Normalization::default())?;
        println!(
            "epoch {:4} step {:5} loss {} word_acc {:.3} ({:.0?})",
            t.state.epoch,
            t.state.step,
            t.log.last().unwrap(),
            report.word_acc,
            start.elapsed()
        );
        Ok(report.word_acc < 0.95 || stop_at_max)
    })?;
    let (report, _) = evaluate(&trainer.model, &data, 100, Normalization::default())?;
    println!("final step {} {}", trainer.state.step, report.to_tsv());
    let (intra, inter) = cluster_stats(&feature_dump(&trainer.model, &data, 100)?)?;
    println!("intra-class cosine {intra:.4}, inter-class cosine {inter:.4}, gap {:.4}", intra - inter);
    Ok(())
}

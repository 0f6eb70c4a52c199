//! Runs every fusion variant on a tiny model and a tiny synthetic set and prints the
//! comparison table. Pass a grid JSON file to run that grid instead.
//!
//! ```text
//! cargo run --release --example ablation -- [grid.json]
//! ```

use cornerstr::data::AugmentPolicy;
use cornerstr::eval::{run_ablation, AblationGrid};
use cornerstr::model::{FusionMode, ModelConfig};
use cornerstr::train::TrainConfig;

fn main() -> cornerstr::Result<()> {
    let grid = match std::env::args().nth(1) {
        Some(path) => AblationGrid::from_json(&std::fs::read_to_string(&path).expect("readable grid file"))?,
        None => AblationGrid {
            fusion_modes: FusionMode::ALL.to_vec(),
            model: ModelConfig {
                d_model: 16,
                n_heads: 2,
                n_enc_blocks: 1,
                n_dec_blocks: 1,
                ffn_dim: 32,
                proj_hidden: 16,
                proj_out: 16,
                image_h: 16,
                image_w: 64,
                max_len: 12,
                ..ModelConfig::toy()
            },
            train: TrainConfig {
                lr: 1e-3,
                batch_size: 8,
                epochs: 3,
                decay_epoch: 3,
                augment: AugmentPolicy::disabled(),
                ..TrainConfig::default()
            },
            train_data: "synth:count=16,seed=2".into(),
            eval_batch_size: 16,
            ..AblationGrid::default()
        },
    };
    println!("{}", serde_json::to_string(&grid).expect("grid serializes"));
    let table = run_ablation(&grid, |row| eprintln!("{}: {}", row.fusion_mode, row.status))?;
    print!("{}", table.to_tsv());
    Ok(())
}

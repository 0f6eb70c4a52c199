//! Character contrastive loss on hand-made features: tight same-character clusters
//! give a low loss, scrambled features a high one, and a lower temperature sharpens
//! the gap.
//!
//! ```text
//! cargo run --release --example contrastive_loss
//! ```

use cornerstr::losses::{cc_loss, cc_valid, CcOptions};
use cornerstr::Tensor;

fn features(rows: &[[f64; 2]]) -> cornerstr::Result<Tensor> {
    Tensor::new(&[rows.len(), 2], rows.iter().flatten().copied().collect())?.l2_normalize(1, 1e-12)
}

fn main() -> cornerstr::Result<()> {
    // token ids of two decoded characters, repeated, then a padded slot
    let labels = [5, 5, 9, 9, 5, 9, 0];
    let clustered = features(&[[1.0, 0.1], [1.0, -0.1], [0.1, 1.0], [-0.1, 1.0], [1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])?;
    let scrambled = features(&[[1.0, 0.1], [0.1, 1.0], [1.0, -0.1], [-0.1, 1.0], [0.0, 1.0], [1.0, 0.0], [0.7, 0.7]])?;
    let valid = cc_valid(&labels, false);
    for tau in [0.5, 0.1, 0.05] {
        let opts = CcOptions { tau, ..CcOptions::default() };
        let a = cc_loss(&clustered, &labels, &valid, &opts)?.item()?;
        let b = cc_loss(&scrambled, &labels, &valid, &opts)?.item()?;
        println!("tau {tau:<5} clustered {a:8.4}  scrambled {b:8.4}");
    }
    let with_pad = CcOptions { include_pad: true, ..CcOptions::default() };
    let all = cc_valid(&labels, true);
    println!("pad as anchor: {:.4}", cc_loss(&clustered, &labels, &all, &with_pad)?.item()?);
    Ok(())
}

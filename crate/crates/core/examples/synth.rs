//! Renders a few words with the default decorative style and writes them, with a
//! manifest, to a directory.
//!
//! ```text
//! cargo run --release --example synth -- [out_dir] [count]
//! ```

use std::path::PathBuf;

use cornerstr::data::{default_lexicon, Dataset, SynthSpec};
use cornerstr::model::ModelConfig;
use cornerstr::train::pipeline_for;

fn main() -> cornerstr::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_words".into()));
    let count: usize = args.next().map_or(12, |c| c.parse().expect("count must be an integer"));
    let pipeline = pipeline_for(&ModelConfig::toy())?;
    let data = Dataset::synthetic(&SynthSpec { count, seed: 3, style: Default::default() }, &default_lexicon(), &pipeline)?;
    data.write_to_dir(&out)?;
    for s in &data.samples {
        println!("{:<12} {:>3} corners", s.text, s.corners.count());
    }
    println!("wrote {} images to {}", data.len(), out.display());
    Ok(())
}

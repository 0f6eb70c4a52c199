//! Renders a word, runs both corner detectors on it and prints the strongest corners
//! of each. Pass a PNG path to detect on your own image instead.
//!
//! ```text
//! cargo run --release --example corners -- [image.png]
//! ```

use cornerstr::corners::{detect_corners, DetectorParams};
use cornerstr::data::{render_text, RenderStyle};
use cornerstr::image::read_png;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cornerstr::Result<()> {
    let image = match std::env::args().nth(1) {
        Some(path) => read_png(path.as_ref())?,
        None => render_text("Corner", &RenderStyle::default(), &mut ChaCha8Rng::seed_from_u64(1))?,
    };
    println!("image {}x{}", image.height, image.width);
    for params in [DetectorParams::default(), DetectorParams::harris()] {
        let map = detect_corners(&image, &params)?;
        println!("{}: {} corners", params.kind, map.count());
        for line in map.corner_list().lines().take(5) {
            println!("  {line}");
        }
    }
    Ok(())
}

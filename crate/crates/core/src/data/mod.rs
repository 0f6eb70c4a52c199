//! Tokenization, synthetic rendering, augmentation and batch assembly.

pub mod augment;
pub mod charset;
pub mod font;
pub mod manifest;
pub mod render;

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentPolicy};
pub use charset::{Charset, LabelSeq, BOS, EOS, PAD};
pub use manifest::{load_manifest, Manifest, ManifestEntry};
pub use render::{render_text, RenderStyle, RENDER_H, RENDER_W};

use crate::corners::{detect_corners, CornerMap, DetectorParams};
use crate::error::{Error, Result};
use crate::image::{read_png, write_png, RgbImage};
use crate::tensor::Tensor;

const LEXICON: &str = include_str!("lexicon.txt");

/// The embedded 1000-word lexicon.
pub fn default_lexicon() -> Vec<String> {
    LEXICON.lines().map(str::to_string).collect()
}

pub fn read_lexicon(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Builds a dataset from `synth:count=..,seed=..` or a manifest path. Synthetic sets
/// draw from `lexicon`, or from the embedded list when `None`.
pub fn load_dataset(spec: &str, pipeline: &SamplePipeline, lexicon: Option<&[String]>) -> Result<Dataset> {
    if spec.starts_with("synth:") {
        let synth = SynthSpec::parse(spec)?;
        match lexicon {
            Some(words) => Dataset::synthetic(&synth, words, pipeline),
            None => Dataset::synthetic(&synth, &default_lexicon(), pipeline),
        }
    } else {
        Dataset::from_manifest(&load_manifest(Path::new(spec))?, pipeline)
    }
}

/// One training/evaluation example: image, its corner map and the label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub text: String,
    pub label: LabelSeq,
    pub corners: CornerMap,
}

/// Everything needed to turn raw images and strings into model-ready samples.
#[derive(Debug, Clone)]
pub struct SamplePipeline {
    pub charset: Charset,
    pub max_len: usize,
    pub detector: DetectorParams,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for SamplePipeline {
    fn default() -> Self {
        Self {
            charset: Charset::lowercase_alnum(),
            max_len: 25,
            detector: DetectorParams::default(),
            image_h: RENDER_H,
            image_w: RENDER_W,
        }
    }
}

impl SamplePipeline {
    /// Resizes to the configured geometry, then detects corners on the result.
    pub fn make_sample(&self, image: RgbImage, text: &str) -> Result<Sample> {
        let label = self.charset.tokenize(text, self.max_len)?;
        let image = if (image.height, image.width) == (self.image_h, self.image_w) {
            image
        } else {
            image.resize(self.image_h, self.image_w)
        };
        let corners = detect_corners(&image, &self.detector)?;
        Ok(Sample {
            image,
            text: self.charset.normalize(text),
            label,
            corners,
        })
    }

    pub fn render_word(&self, text: &str, style: &RenderStyle, rng: &mut ChaCha8Rng) -> Result<Sample> {
        self.charset.tokenize(text, self.max_len)?;
        let image = render_text(text, style, rng)?;
        self.make_sample(image, text)
    }

    pub fn load_sample(&self, manifest: &Manifest, index: usize) -> Result<Sample> {
        let entry = manifest
            .entries
            .get(index)
            .ok_or_else(|| Error::Data(format!("manifest index {index} out of range")))?;
        let path = manifest.path_of(index);
        read_png(&path)
            .and_then(|image| self.make_sample(image, &entry.label))
            .map_err(|e| Error::Data(format!("{} (line {}): {e}", entry.filename, entry.line)))
    }

    fn accepts(&self, word: &str) -> bool {
        self.charset.tokenize(word, self.max_len).is_ok() && word.chars().all(font::has_glyph)
    }
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub style: RenderStyle,
}

impl SynthSpec {
    /// Parses `synth:count=200,seed=7` (the `synth:` prefix is optional).
    pub fn parse(spec: &str) -> Result<Self> {
        let body = spec.strip_prefix("synth:").unwrap_or(spec);
        let mut out = SynthSpec {
            count: 100,
            seed: 0,
            style: RenderStyle::default(),
        };
        for part in body.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad synth option {part:?}")))?;
            let bad = || Error::Config(format!("bad value in synth option {part:?}"));
            match k {
                "count" => out.count = v.parse().map_err(|_| bad())?,
                "seed" => out.seed = v.parse().map_err(|_| bad())?,
                "plain" if v == "true" => out.style = RenderStyle::plain(2.5),
                "plain" if v == "false" => {}
                _ => return Err(Error::Config(format!("unknown synth option {k:?}"))),
            }
        }
        Ok(out)
    }
}

/// An ordered, in-memory collection of samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

/// Model-ready tensors for a batch of samples.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B,3,H,W]`
    pub images: Tensor,
    /// `[B,1,H,W]`
    pub corners: Tensor,
    /// Teacher-forced decoder input, `B·m` token ids.
    pub decoder_input: Vec<usize>,
    /// Targets, `B·m` token ids.
    pub targets: Vec<usize>,
    /// Positions up to and including EOS, `B·m`.
    pub loss_mask: Vec<bool>,
    pub texts: Vec<String>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Renders `spec.count` words drawn from `lexicon`. Sample `i` uses its own
    /// random stream, so the result does not depend on generation order.
    pub fn synthetic(spec: &SynthSpec, lexicon: &[String], pipeline: &SamplePipeline) -> Result<Self> {
        let words: Vec<&String> = lexicon.iter().filter(|w| pipeline.accepts(w)).collect();
        if words.is_empty() {
            return Err(Error::Data("no lexicon word is renderable with this charset".into()));
        }
        let samples = (0..spec.count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(i as u64);
                let word = words.choose(&mut rng).unwrap();
                pipeline.render_word(word, &spec.style, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples })
    }

    /// Loads every manifest entry; failures are collected and reported together.
    pub fn from_manifest(manifest: &Manifest, pipeline: &SamplePipeline) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.len());
        let mut problems = Vec::new();
        for i in 0..manifest.len() {
            match pipeline.load_sample(manifest, i) {
                Ok(s) => samples.push(s),
                Err(e) => problems.push(e.to_string()),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Data(problems.join("; ")));
        }
        Ok(Self { samples })
    }

    /// Writes `NNNNNN.png` files and a `manifest.tsv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, s) in self.samples.iter().enumerate() {
            let name = format!("{i:06}.png");
            write_png(&dir.join(&name), &s.image)?;
            entries.push(ManifestEntry {
                filename: name,
                label: s.text.clone(),
                line: i + 1,
            });
        }
        let manifest = Manifest {
            root: dir.to_path_buf(),
            entries,
        };
        let path = dir.join("manifest.tsv");
        std::fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Sample order for `epoch`, a pure function of `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Stacks samples in the given order. With an augmentation policy, each image is
    /// augmented from a stream keyed by `(seed, epoch, index)` and its corner map is
    /// recomputed from the augmented pixels.
    pub fn assemble_batch(
        &self,
        indices: &[usize],
        pipeline: &SamplePipeline,
        augmentation: Option<(&AugmentPolicy, u64, usize)>,
    ) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let first = &self.samples[indices[0]];
        let (h, w) = (first.image.height, first.image.width);
        let m = first.label.len();
        let mut images = Vec::with_capacity(indices.len() * 3 * h * w);
        let mut corners = Vec::with_capacity(indices.len() * h * w);
        let mut batch = Batch {
            images: Tensor::scalar(0.0),
            corners: Tensor::scalar(0.0),
            decoder_input: Vec::with_capacity(indices.len() * m),
            targets: Vec::with_capacity(indices.len() * m),
            loss_mask: Vec::with_capacity(indices.len() * m),
            texts: Vec::with_capacity(indices.len()),
            indices: indices.to_vec(),
        };
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
            if (s.image.height, s.image.width) != (h, w) || s.label.len() != m {
                return Err(Error::Dimension("samples in a batch differ in geometry".into()));
            }
            match augmentation {
                Some((policy, seed, epoch)) if policy.is_enabled() => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a09e);
                    rng.set_stream(((epoch as u64) << 32) | i as u64);
                    let img = augment(&s.image, &mut rng, policy);
                    let map = detect_corners(&img, &pipeline.detector)?;
                    images.extend_from_slice(&img.data);
                    corners.extend(map.as_f64());
                }
                _ => {
                    images.extend_from_slice(&s.image.data);
                    corners.extend(s.corners.as_f64());
                }
            }
            batch.decoder_input.extend(s.label.shifted_right());
            batch.targets.extend_from_slice(s.label.ids());
            batch.loss_mask.extend(s.label.loss_mask());
            batch.texts.push(s.text.clone());
        }
        let b = indices.len();
        batch.images = Tensor::new(&[b, 3, h, w], images)?;
        batch.corners = Tensor::new(&[b, 1, h, w], corners)?;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_has_1000_words() {
        let lex = default_lexicon();
        assert_eq!(lex.len(), 1000);
        let p = SamplePipeline::default();
        assert!(lex.iter().all(|w| p.accepts(w)));
    }

    #[test]
    fn synth_spec_parsing() {
        let s = SynthSpec::parse("synth:count=20,seed=9").unwrap();
        assert_eq!((s.count, s.seed), (20, 9));
        assert!(SynthSpec::parse("synth:bogus=1").is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let p = SamplePipeline::default();
        let spec = SynthSpec::parse("count=6,seed=3").unwrap();
        let a = Dataset::synthetic(&spec, &default_lexicon(), &p).unwrap();
        let b = Dataset::synthetic(&spec, &default_lexicon(), &p).unwrap();
        assert_eq!(a.samples, b.samples);
        for s in &a.samples {
            assert!(s.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.corners.mask.iter().all(|&m| m <= 1));
            assert!(LabelSeq::from_ids(s.label.ids().to_vec()).is_ok());
            assert_eq!((s.image.height, s.image.width), (32, 128));
        }
    }

    #[test]
    fn batch_preserves_order() {
        let p = SamplePipeline::default();
        let d = Dataset::synthetic(&SynthSpec::parse("count=4,seed=1").unwrap(), &default_lexicon(), &p).unwrap();
        let b = d.assemble_batch(&[2, 0, 3], &p, None).unwrap();
        assert_eq!(b.images.shape(), &[3, 3, 32, 128]);
        assert_eq!(b.texts, vec![d.samples[2].text.clone(), d.samples[0].text.clone(), d.samples[3].text.clone()]);
        assert_eq!(&b.targets[..25], d.samples[2].label.ids());
        assert_eq!(d.epoch_order(5, 2, true), d.epoch_order(5, 2, true));
        let mut sorted = d.epoch_order(5, 3, true);
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }
}

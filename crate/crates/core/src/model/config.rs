use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corners::DetectorParams;
use crate::data::Charset;
use crate::error::{Error, Result};

/// How corner features are combined with image features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Corner features query the image features in every encoder block.
    CornerQuery,
    /// Image features query the corner features.
    CornerKv,
    /// Channel concatenation of the stem outputs, projected back to `d_model`.
    Concat,
    Add,
    Multiply,
    /// The second stem sees the image instead of the corner map.
    ImageImage,
    /// A second self-attention in place of the cross-attention.
    SelfAttnX2,
    /// Self-attention and feed-forward only.
    None,
}

impl FusionMode {
    pub const ALL: [FusionMode; 8] = [
        FusionMode::CornerQuery,
        FusionMode::CornerKv,
        FusionMode::Concat,
        FusionMode::Add,
        FusionMode::Multiply,
        FusionMode::ImageImage,
        FusionMode::SelfAttnX2,
        FusionMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::CornerQuery => "corner_query",
            FusionMode::CornerKv => "corner_kv",
            FusionMode::Concat => "concat",
            FusionMode::Add => "add",
            FusionMode::Multiply => "multiply",
            FusionMode::ImageImage => "image_image",
            FusionMode::SelfAttnX2 => "self_attn_x2",
            FusionMode::None => "none",
        }
    }

    /// Modes that merge the two stems once, before the encoder stack.
    pub fn fuses_early(self) -> bool {
        matches!(self, FusionMode::Concat | FusionMode::Add | FusionMode::Multiply)
    }

    /// Modes whose encoder blocks carry a middle attention sublayer.
    pub fn has_middle_sublayer(self) -> bool {
        matches!(
            self,
            FusionMode::CornerQuery | FusionMode::CornerKv | FusionMode::ImageImage | FusionMode::SelfAttnX2
        )
    }

    /// Whether the encoder output depends on the corner map at all.
    pub fn uses_corners(self) -> bool {
        !matches!(self, FusionMode::SelfAttnX2 | FusionMode::None | FusionMode::ImageImage)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_blocks: usize,
    pub n_dec_blocks: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub fusion_mode: FusionMode,
    pub charset: String,
    pub vocab_size: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub detector: DetectorParams,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale default.
    pub fn toy() -> Self {
        let charset = Charset::lowercase_alnum();
        Self {
            d_model: 64,
            n_heads: 4,
            n_enc_blocks: 3,
            n_dec_blocks: 2,
            ffn_dim: 256,
            max_len: 25,
            proj_hidden: 128,
            proj_out: 128,
            fusion_mode: FusionMode::CornerQuery,
            vocab_size: charset.vocab_size(),
            charset: charset.as_string(),
            image_h: 32,
            image_w: 128,
            detector: DetectorParams::default(),
            init_seed: 0,
        }
    }

    /// The published full-size configuration.
    pub fn full() -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            n_enc_blocks: 12,
            n_dec_blocks: 6,
            ffn_dim: 2048,
            proj_hidden: 2048,
            proj_out: 2048,
            ..Self::toy()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn feature_h(&self) -> usize {
        self.image_h / 4
    }

    pub fn feature_w(&self) -> usize {
        self.image_w / 4
    }

    pub fn seq_len(&self) -> usize {
        self.feature_h() * self.feature_w()
    }

    pub fn charset(&self) -> Result<Charset> {
        Charset::new(self.charset.chars())
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("proj_hidden", self.proj_hidden),
            ("proj_out", self.proj_out),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model {} must be even", self.d_model)));
        }
        if !self.image_h.is_multiple_of(4) || !self.image_w.is_multiple_of(4) || self.image_h == 0 || self.image_w == 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be a positive multiple of 4",
                self.image_h, self.image_w
            )));
        }
        let cs = self.charset()?;
        if cs.vocab_size() != self.vocab_size {
            return Err(Error::Config(format!(
                "vocab_size {} does not match charset ({} symbols + 3 specials)",
                self.vocab_size,
                cs.symbols().len()
            )));
        }
        self.detector.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("sideways".parse::<FusionMode>().is_err());
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::toy().validate().is_ok());
        assert!(ModelConfig::full().validate().is_ok());
        let bad = ModelConfig { n_heads: 3, ..ModelConfig::toy() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ModelConfig { vocab_size: 10, ..ModelConfig::toy() };
        assert!(bad.validate().is_err());
        let cfg = ModelConfig::from_json(r#"{"d_model": 32, "n_heads": 2}"#).unwrap();
        assert_eq!(cfg.d_model, 32);
        assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

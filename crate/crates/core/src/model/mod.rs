//! The corner-guided encoder/decoder network.

mod config;
pub mod layers;
mod params;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{FusionMode, ModelConfig};
pub use layers::AttnTrace;
pub use params::{Bound, Param, ParamStore};

use crate::checkpoint::Checkpoint;
use crate::data::{Charset, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use layers::{
    attention, causal_mask, conv_stem, feed_forward, init_attention, init_conv, init_layer_norm, init_linear,
    layer_norm, linear, pos_encoding_1d, pos_encoding_2d, L2_EPS,
};

/// Per-position decoder outputs, all shaped `[B, L, ·]`.
pub struct DecoderOutput {
    pub hidden: Tensor,
    pub logits: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Builds and initializes a model from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut s = ParamStore::new();
        let d = config.d_model;
        let r = &mut rng;

        init_conv(&mut s, "stem.img.conv1", 3, d, r);
        init_conv(&mut s, "stem.img.conv2", d, d, r);
        let corner_in = if config.fusion_mode == FusionMode::ImageImage { 3 } else { 1 };
        init_conv(&mut s, "stem.corner.conv1", corner_in, d, r);
        init_conv(&mut s, "stem.corner.conv2", d, d, r);
        if config.fusion_mode == FusionMode::Concat {
            init_linear(&mut s, "fuse", 2 * d, d, r);
        }
        for i in 0..config.n_enc_blocks {
            let b = format!("enc.{i}");
            init_attention(&mut s, &format!("{b}.sa"), d, r);
            init_layer_norm(&mut s, &format!("{b}.ln1"), d);
            if config.fusion_mode.has_middle_sublayer() {
                init_attention(&mut s, &format!("{b}.ca"), d, r);
                init_layer_norm(&mut s, &format!("{b}.ln2"), d);
            }
            init_linear(&mut s, &format!("{b}.ff.1"), d, config.ffn_dim, r);
            init_linear(&mut s, &format!("{b}.ff.2"), config.ffn_dim, d, r);
            init_layer_norm(&mut s, &format!("{b}.ln3"), d);
        }
        s.uniform("dec.embed", &[config.vocab_size, d], 1, r);
        for i in 0..config.n_dec_blocks {
            let b = format!("dec.{i}");
            init_attention(&mut s, &format!("{b}.sa"), d, r);
            init_layer_norm(&mut s, &format!("{b}.ln1"), d);
            init_attention(&mut s, &format!("{b}.ca"), d, r);
            init_layer_norm(&mut s, &format!("{b}.ln2"), d);
            init_linear(&mut s, &format!("{b}.ff.1"), d, config.ffn_dim, r);
            init_linear(&mut s, &format!("{b}.ff.2"), config.ffn_dim, d, r);
            init_layer_norm(&mut s, &format!("{b}.ln3"), d);
        }
        init_linear(&mut s, "head", d, config.vocab_size, r);
        init_linear(&mut s, "proj.1", d, config.proj_hidden, r);
        init_linear(&mut s, "proj.2", config.proj_hidden, config.proj_out, r);
        Ok(Self { config, params: s })
    }

    pub fn bind(&self, trainable: bool) -> Bound {
        self.params.bind(trainable)
    }

    fn check_inputs(&self, images: &Tensor, corners: &Tensor) -> Result<()> {
        let c = &self.config;
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != c.image_h || s[3] != c.image_w {
            return Err(Error::Dimension(format!(
                "expected images [B,3,{},{}], got {:?}",
                c.image_h, c.image_w, s
            )));
        }
        let k = corners.shape();
        if k != [s[0], 1, c.image_h, c.image_w] {
            return Err(Error::Dimension(format!(
                "corner maps {:?} do not align with images {:?}",
                k, s
            )));
        }
        Ok(())
    }

    /// Image and corner features after the stems and positional encoding, `[B, L, d]`.
    /// The second element is `None` for modes that fuse early or ignore corners.
    pub fn stem_features(&self, p: &Bound, images: &Tensor, corners: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        self.check_inputs(images, corners)?;
        let c = &self.config;
        let pe = pos_encoding_2d(c.feature_h(), c.feature_w(), c.d_model)?;
        let img = conv_stem(p, "stem.img", images)?;
        let corner_src = if c.fusion_mode == FusionMode::ImageImage { images } else { corners };
        match c.fusion_mode {
            FusionMode::Concat | FusionMode::Add | FusionMode::Multiply => {
                let cf = conv_stem(p, "stem.corner", corner_src)?;
                let fused = match c.fusion_mode {
                    FusionMode::Concat => linear(p, "fuse", &img.concat_last(&cf)?)?,
                    FusionMode::Add => img.add(&cf)?,
                    _ => img.mul(&cf)?,
                };
                Ok((fused.add(&pe)?, None))
            }
            FusionMode::CornerQuery | FusionMode::CornerKv | FusionMode::ImageImage => {
                let cf = conv_stem(p, "stem.corner", corner_src)?.add(&pe)?;
                Ok((img.add(&pe)?, Some(cf)))
            }
            FusionMode::SelfAttnX2 | FusionMode::None => Ok((img.add(&pe)?, None)),
        }
    }

    /// One encoder block. Returns the block output and the trace of its middle attention.
    pub fn encoder_block(
        &self,
        p: &Bound,
        index: usize,
        x: &Tensor,
        corner: Option<&Tensor>,
    ) -> Result<(Tensor, Option<AttnTrace>)> {
        let c = &self.config;
        let b = format!("enc.{index}");
        let (sa, _) = attention(p, &format!("{b}.sa"), x, x, c.n_heads, None)?;
        let mut x = layer_norm(p, &format!("{b}.ln1"), &x.add(&sa)?)?;
        let mut trace = None;
        if c.fusion_mode.has_middle_sublayer() {
            let name = format!("{b}.ca");
            let (out, t) = match (c.fusion_mode, corner) {
                (FusionMode::SelfAttnX2, _) => attention(p, &name, &x, &x, c.n_heads, None)?,
                (FusionMode::CornerKv, Some(m)) => {
                    check_same_len(&x, m)?;
                    attention(p, &name, &x, m, c.n_heads, None)?
                }
                (_, Some(m)) => {
                    check_same_len(&x, m)?;
                    attention(p, &name, m, &x, c.n_heads, None)?
                }
                (mode, None) => {
                    return Err(Error::Contract(format!("fusion mode {mode} needs corner features")))
                }
            };
            x = layer_norm(p, &format!("{b}.ln2"), &x.add(&out)?)?;
            trace = Some(t);
        }
        let ff = feed_forward(p, &format!("{b}.ff"), &x)?;
        let x = layer_norm(p, &format!("{b}.ln3"), &x.add(&ff)?)?;
        Ok((x, trace))
    }

    /// Encoder memory `[B, L, d]` with `L = (H/4)·(W/4)`.
    pub fn encode(&self, p: &Bound, images: &Tensor, corners: &Tensor) -> Result<Tensor> {
        let (mut x, corner) = self.stem_features(p, images, corners)?;
        for i in 0..self.config.n_enc_blocks {
            x = self.encoder_block(p, i, &x, corner.as_ref())?.0;
        }
        Ok(x)
    }

    /// Teacher-forced decoding of `tokens` (`B·len` ids, `len ≤ max_len`) against `memory`.
    pub fn decode(&self, p: &Bound, memory: &Tensor, tokens: &[usize]) -> Result<DecoderOutput> {
        let c = &self.config;
        let b = memory.shape()[0];
        if tokens.is_empty() || !tokens.len().is_multiple_of(b) || tokens.len() / b > c.max_len {
            return Err(Error::Dimension(format!(
                "{} tokens do not form {b} sequences of length at most {}",
                tokens.len(),
                c.max_len
            )));
        }
        let len = tokens.len() / b;
        let d = c.d_model;
        let emb = p["dec.embed"].gather_rows(tokens)?.reshape(&[b, len, d])?;
        let pe = Tensor::new(&[len, d], pos_encoding_1d(len, d))?;
        let mut x = emb.add(&pe)?;
        let mask = causal_mask(len);
        for i in 0..c.n_dec_blocks {
            let blk = format!("dec.{i}");
            let (sa, _) = attention(p, &format!("{blk}.sa"), &x, &x, c.n_heads, Some(&mask))?;
            x = layer_norm(p, &format!("{blk}.ln1"), &x.add(&sa)?)?;
            let (ca, _) = attention(p, &format!("{blk}.ca"), &x, memory, c.n_heads, None)?;
            x = layer_norm(p, &format!("{blk}.ln2"), &x.add(&ca)?)?;
            let ff = feed_forward(p, &format!("{blk}.ff"), &x)?;
            x = layer_norm(p, &format!("{blk}.ln3"), &x.add(&ff)?)?;
        }
        let logits = linear(p, "head", &x)?;
        Ok(DecoderOutput { hidden: x, logits })
    }

    /// Unit-norm contrastive features `[B, L, proj_out]`.
    pub fn project(&self, p: &Bound, hidden: &Tensor) -> Result<Tensor> {
        let h = linear(p, "proj.1", hidden)?.relu();
        let z = linear(p, "proj.2", &h)?;
        let axis = z.ndim() - 1;
        z.l2_normalize(axis, L2_EPS)
    }

    /// Greedy decoding of a batch of memories. Argmax ties go to the lowest id.
    pub fn greedy_decode(&self, p: &Bound, memory: &Tensor, charset: &Charset) -> Result<Vec<String>> {
        Ok(self
            .greedy_decode_ids(p, memory)?
            .iter()
            .map(|ids| charset.detokenize(ids))
            .collect())
    }

    /// Predicted token ids per sample, truncated after the first EOS or PAD.
    pub fn greedy_decode_ids(&self, p: &Bound, memory: &Tensor) -> Result<Vec<Vec<usize>>> {
        let b = memory.shape()[0];
        let m = self.config.max_len;
        let v = self.config.vocab_size;
        let mut inputs: Vec<Vec<usize>> = vec![vec![BOS]; b];
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        for t in 0..m {
            let tokens: Vec<usize> = inputs.iter().flatten().copied().collect();
            let out = self.decode(p, memory, &tokens)?;
            let logits = out.logits.data();
            for s in 0..b {
                let row = &logits[(s * (t + 1) + t) * v..(s * (t + 1) + t + 1) * v];
                let id = argmax(row);
                if !done[s] {
                    outputs[s].push(id);
                    done[s] = id == EOS || id == PAD;
                }
                inputs[s].push(id);
            }
            if done.iter().all(|&x| x) {
                break;
            }
        }
        Ok(outputs)
    }

    /// Encodes and greedily decodes a batch.
    pub fn recognize(&self, images: &Tensor, corners: &Tensor) -> Result<Vec<String>> {
        let p = self.bind(false);
        let memory = self.encode(&p, images, corners)?;
        self.greedy_decode(&p, &memory, &self.config.charset()?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("model_config", self.config.to_json());
        for (name, prm) in self.params.iter() {
            ck.insert(format!("param.{name}"), &prm.shape, prm.data.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let json = ck
            .meta("model_config")
            .ok_or_else(|| Error::Checkpoint("checkpoint has no model_config".into()))?;
        let mut model = Model::new(ModelConfig::from_json(json)?)?;
        let mut loaded = ParamStore::new();
        for (name, t) in &ck.tensors {
            if let Some(pname) = name.strip_prefix("param.") {
                loaded.insert(pname, &t.shape, t.data.clone());
            }
        }
        model.params.check_compatible(&loaded)?;
        model.params = loaded;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn check_same_len(x: &Tensor, corner: &Tensor) -> Result<()> {
    if x.shape() != corner.shape() {
        return Err(Error::Dimension(format!(
            "corner features {:?} do not match image features {:?}",
            corner.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

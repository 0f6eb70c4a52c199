//! Adam optimization loop with deterministic shuffling, checkpointing and resume.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{AugmentPolicy, Batch, Dataset, SamplePipeline};
use crate::error::{Error, Result};
use crate::losses::{cc_loss, cc_valid, ce_loss, total_loss, CcOptions, LossReport};
use crate::model::{Model, ModelConfig, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Zero-based epoch from which the decayed rate applies.
    pub decay_epoch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub lambda: f64,
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: Option<f64>,
    pub augment: AugmentPolicy,
    pub shuffle: bool,
    pub cc_include_pad: bool,
    pub cc_raw_sum: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            lr_decay_factor: 0.1,
            decay_epoch: 4,
            batch_size: 32,
            epochs: 6,
            max_steps: None,
            seed: 0,
            lambda: 0.1,
            tau: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            augment: AugmentPolicy::default(),
            shuffle: true,
            cc_include_pad: false,
            cc_raw_sum: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.decay_epoch == 0 || self.decay_epoch > self.epochs {
            return Err(Error::Config(format!(
                "decay_epoch {} must lie in 1..={}",
                self.decay_epoch, self.epochs
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Param(format!("temperature must be positive, got {}", self.tau)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }

    pub fn cc_options(&self) -> CcOptions {
        CcOptions {
            tau: self.tau,
            include_pad: self.cc_include_pad,
            raw_sum: self.cc_raw_sum,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Adam moments and counters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl TrainState {
    pub fn for_params(params: &ParamStore) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(k, p)| (k.clone(), vec![0.0; p.data.len()]))
            .collect();
        Self {
            step: 0,
            epoch: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut TrainState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads {
        if g.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric(format!("NaN gradient for parameter {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter {name}")))?;
        let m = state.m.get_mut(name).expect("moment buffers match parameters");
        let v = state.v.get_mut(name).expect("moment buffers match parameters");
        for i in 0..p.data.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            p.data[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `cap`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, cap: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > cap {
        let s = cap / norm;
        for g in grads.values_mut().flatten() {
            *g *= s;
        }
    }
    norm
}

/// Pipeline matching a model's input geometry, charset and detector.
pub fn pipeline_for(cfg: &ModelConfig) -> Result<SamplePipeline> {
    Ok(SamplePipeline {
        charset: cfg.charset()?,
        max_len: cfg.max_len,
        detector: cfg.detector,
        image_h: cfg.image_h,
        image_w: cfg.image_w,
    })
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub state: TrainState,
    pub pipeline: SamplePipeline,
    /// `step<TAB>ce<TAB>cc<TAB>total` for every step taken by this trainer.
    pub log: Vec<String>,
}

pub const LOG_HEADER: &str = "step\tce\tcc\ttotal";

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = TrainState::for_params(&model.params);
        let pipeline = pipeline_for(&model.config)?;
        Ok(Self {
            model,
            config,
            state,
            pipeline,
            log: Vec::new(),
        })
    }

    /// Forward, loss, backward and update on one batch.
    pub fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<LossReport> {
        let cfg = &self.config;
        let p = self.model.bind(true);
        let memory = self.model.encode(&p, &batch.images, &batch.corners)?;
        let out = self.model.decode(&p, &memory, &batch.decoder_input)?;
        let ce = ce_loss(&out.logits, &batch.targets, &batch.loss_mask)?;
        let (total, cc_value) = if cfg.lambda > 0.0 {
            let z = self.model.project(&p, &out.hidden)?;
            let valid = cc_valid(&batch.targets, cfg.cc_include_pad);
            let cc = cc_loss(&z, &batch.targets, &valid, &cfg.cc_options())?;
            let v = cc.item()?;
            (ce.add(&cc.scale(cfg.lambda))?, v)
        } else {
            (ce.clone(), 0.0)
        };
        let report = total_loss(ce.item()?, cc_value, cfg.lambda, cfg.tau);
        let step = self.state.step + 1;
        if !report.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {} at step {step}", report.total)));
        }
        total.backward()?;
        let mut grads = p.grads();
        drop(p);
        if let Some(cap) = cfg.grad_clip {
            clip_grad_norm(&mut grads, cap);
        }
        adam_step(&mut self.model.params, &grads, &mut self.state, lr, &self.config)?;
        self.log.push(report.log_line(self.state.step));
        Ok(report)
    }

    fn steps_exhausted(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.state.step >= m)
    }

    /// Runs the remaining epochs. `on_epoch_end` may stop training early by returning
    /// `false`. With `out_dir`, a checkpoint and the metrics log are written after
    /// every epoch.
    pub fn fit(
        &mut self,
        data: &Dataset,
        out_dir: Option<&Path>,
        mut on_epoch_end: impl FnMut(&Trainer) -> Result<bool>,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.state.epoch < self.config.epochs && !self.steps_exhausted() {
            let epoch = self.state.epoch;
            let lr = self.config.lr_at(epoch);
            let order = data.epoch_order(self.config.seed, epoch, self.config.shuffle);
            for chunk in order.chunks(self.config.batch_size) {
                if self.steps_exhausted() {
                    break;
                }
                let aug = self
                    .config
                    .augment
                    .is_enabled()
                    .then_some((&self.config.augment, self.config.seed, epoch));
                let batch = data.assemble_batch(chunk, &self.pipeline, aug)?;
                self.train_step(&batch, lr)?;
            }
            self.state.epoch += 1;
            if let Some(dir) = out_dir {
                self.save_checkpoint(&dir.join("checkpoint.ckpt"))?;
                self.write_log(&dir.join("metrics.tsv"))?;
            }
            if !on_epoch_end(self)? {
                break;
            }
        }
        if let Some(dir) = out_dir {
            self.save_checkpoint(&dir.join("checkpoint.ckpt"))?;
            self.write_log(&dir.join("metrics.tsv"))?;
        }
        Ok(())
    }

    pub fn log_text(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for l in &self.log {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.log_text().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Model parameters plus optimizer state and configuration.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.set_meta("train_config", self.config.to_json());
        ck.set_meta("step", self.state.step);
        ck.set_meta("epoch", self.state.epoch);
        for (k, m) in &self.state.m {
            let shape = &self.model.params.get(k).expect("moment names match parameters").shape;
            ck.insert(format!("adam.m.{k}"), shape, m.clone());
            ck.insert(format!("adam.v.{k}"), shape, self.state.v[k].clone());
        }
        ck
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Restores a trainer, including optimizer state, from a checkpoint written by
    /// [`Trainer::save_checkpoint`]. The metrics log starts empty.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = Model::from_checkpoint(ck)?;
        let config = TrainConfig::from_json(
            ck.meta("train_config")
                .ok_or_else(|| Error::Checkpoint("checkpoint has no train_config".into()))?,
        )?;
        let num = |key: &str| -> Result<usize> {
            ck.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no valid {key}")))
        };
        let mut t = Trainer::new(model, config)?;
        t.state.step = num("step")?;
        t.state.epoch = num("epoch")?;
        for (k, buf) in t.state.m.iter_mut() {
            *buf = moment(ck, &format!("adam.m.{k}"), buf.len())?;
        }
        for (k, buf) in t.state.v.iter_mut() {
            *buf = moment(ck, &format!("adam.v.{k}"), buf.len())?;
        }
        Ok(t)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn moment(ck: &Checkpoint, name: &str, len: usize) -> Result<Vec<f64>> {
    match ck.get(name) {
        Some(t) if t.data.len() == len => Ok(t.data.clone()),
        Some(_) => Err(Error::Checkpoint(format!("{name} has the wrong size"))),
        None => Err(Error::Checkpoint(format!("checkpoint lacks {name}"))),
    }
}

/// Where `train` writes its outputs.
pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint.ckpt")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_scalar_transcription() {
        let cfg = TrainConfig::default();
        let mut params = ParamStore::new();
        params.insert("w", &[1], vec![0.5]);
        let mut state = TrainState::for_params(&params);
        let grads = BTreeMap::from([("w".to_string(), vec![1.0])]);
        adam_step(&mut params, &grads, &mut state, 1e-3, &cfg).unwrap();
        let m = (1.0 - 0.9) * 1.0;
        let v = (1.0 - 0.999) * 1.0;
        let mh = m / (1.0 - 0.9);
        let vh = v / (1.0 - 0.999);
        let expected = 0.5 - 1e-3 * mh / (f64::sqrt(vh) + 1e-8);
        assert_eq!(params.get("w").unwrap().data[0], expected);
    }

    #[test]
    fn zero_gradient_is_fixed_point_and_nan_is_named() {
        let cfg = TrainConfig::default();
        let mut params = ParamStore::new();
        params.insert("enc.w", &[2], vec![0.5, -1.0]);
        let mut state = TrainState::for_params(&params);
        let zero = BTreeMap::from([("enc.w".to_string(), vec![0.0, 0.0])]);
        adam_step(&mut params, &zero, &mut state, 1e-3, &cfg).unwrap();
        assert_eq!(params.get("enc.w").unwrap().data, vec![0.5, -1.0]);
        let nan = BTreeMap::from([("enc.w".to_string(), vec![f64::NAN, 0.0])]);
        let e = adam_step(&mut params, &nan, &mut state, 1e-3, &cfg).unwrap_err();
        assert!(e.to_string().contains("enc.w"));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = BTreeMap::from([("a".to_string(), vec![3.0]), ("b".to_string(), vec![4.0])]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!(global_norm(&g) <= 1.0 + 1e-12);
    }

    #[test]
    fn schedule_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(3), 3e-4);
        assert!((cfg.lr_at(4) - 3e-5).abs() < 1e-20);
        assert!(TrainConfig { decay_epoch: 0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { tau: 0.0, ..cfg }.validate().is_err());
    }
}

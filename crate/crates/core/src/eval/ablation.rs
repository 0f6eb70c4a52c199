use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport, Normalization};
use crate::corners::DetectorKind;
use crate::data::load_dataset;
use crate::error::{Error, Result};
use crate::model::{FusionMode, Model, ModelConfig};
use crate::train::{pipeline_for, TrainConfig, Trainer};

/// Cartesian grid of variants sharing one base configuration. Empty axes fall back
/// to the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub fusion_modes: Vec<FusionMode>,
    pub detectors: Vec<DetectorKind>,
    pub lambdas: Vec<f64>,
    pub taus: Vec<f64>,
    pub proj_outs: Vec<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// `synth:count=..,seed=..` or a manifest path.
    pub train_data: String,
    /// Defaults to the training data.
    pub eval_data: Option<String>,
    pub eval_batch_size: usize,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            fusion_modes: vec![FusionMode::CornerQuery, FusionMode::None],
            detectors: Vec::new(),
            lambdas: Vec::new(),
            taus: Vec::new(),
            proj_outs: Vec::new(),
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
            train_data: "synth:count=64,seed=0".into(),
            eval_data: None,
            eval_batch_size: 64,
        }
    }
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl AblationGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("ablation grid: {e}")))
    }

    /// Every variant as `(model config, train config)`, in row order.
    pub fn variants(&self) -> Vec<(ModelConfig, TrainConfig)> {
        let modes = or_base(&self.fusion_modes, self.model.fusion_mode);
        let dets = or_base(&self.detectors, self.model.detector.kind);
        let lambdas = or_base(&self.lambdas, self.train.lambda);
        let taus = or_base(&self.taus, self.train.tau);
        let projs = or_base(&self.proj_outs, self.model.proj_out);
        let mut out = Vec::new();
        for &mode in &modes {
            for &det in &dets {
                for &lambda in &lambdas {
                    for &tau in &taus {
                        for &proj_out in &projs {
                            let mut m = self.model.clone();
                            m.fusion_mode = mode;
                            m.detector.kind = det;
                            m.proj_out = proj_out;
                            let t = TrainConfig {
                                lambda,
                                tau,
                                ..self.train.clone()
                            };
                            out.push((m, t));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fusion_mode: FusionMode,
    pub detector: DetectorKind,
    pub lambda: f64,
    pub tau: f64,
    pub proj_out: usize,
    pub report: Option<EvalReport>,
    pub final_loss: f64,
    /// `ok`, or the failure message.
    pub status: String,
}

impl AblationRow {
    pub fn failed(&self) -> bool {
        self.status != "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const HEADER: &'static str =
        "fusion_mode\tdetector\tlambda\ttau\tproj_out\tword_acc\tchar_recall\tchar_precision\tfinal_loss\tstatus";

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(AblationRow::failed)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let metrics = match &r.report {
                Some(e) => format!("{:.4}\t{:.4}\t{:.4}", e.word_acc, e.char_recall, e.char_precision),
                None => "nan\tnan\tnan".into(),
            };
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{metrics}\t{:.6}\t{}",
                r.fusion_mode, r.detector, r.lambda, r.tau, r.proj_out, r.final_loss, r.status
            )
            .unwrap();
        }
        s
    }
}

fn run_variant(grid: &AblationGrid, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Result<(EvalReport, f64)> {
    let pipeline = pipeline_for(&model_cfg)?;
    let train_set = load_dataset(&grid.train_data, &pipeline, None)?;
    let eval_set = match &grid.eval_data {
        Some(spec) => load_dataset(spec, &pipeline, None)?,
        None => train_set.clone(),
    };
    let mut trainer = Trainer::new(Model::new(model_cfg)?, train_cfg)?;
    trainer.fit(&train_set, None, |_| Ok(true))?;
    let last = trainer
        .log
        .last()
        .and_then(|l| l.rsplit('\t').next())
        .and_then(|v| v.parse::<f64>().ok())
        .unwrap_or(f64::NAN);
    let (report, _) = evaluate(&trainer.model, &eval_set, grid.eval_batch_size, Normalization::default())?;
    Ok((report, last))
}

/// Trains and evaluates every variant. A variant that fails (for example by
/// producing a non-finite loss) becomes a failure row instead of aborting the run.
pub fn run_ablation(grid: &AblationGrid, mut progress: impl FnMut(&AblationRow)) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for (m, t) in grid.variants() {
        let mut row = AblationRow {
            fusion_mode: m.fusion_mode,
            detector: m.detector.kind,
            lambda: t.lambda,
            tau: t.tau,
            proj_out: m.proj_out,
            report: None,
            final_loss: f64::NAN,
            status: "ok".into(),
        };
        match run_variant(grid, m, t) {
            Ok((report, loss)) => {
                row.report = Some(report);
                row.final_loss = loss;
                if !loss.is_finite() {
                    row.status = "non-finite loss".into();
                }
            }
            Err(e @ (Error::Config(_) | Error::Io { .. })) => return Err(e),
            Err(e) => row.status = e.to_string().replace(['\t', '\n'], " "),
        }
        progress(&row);
        table.rows.push(row);
    }
    Ok(table)
}

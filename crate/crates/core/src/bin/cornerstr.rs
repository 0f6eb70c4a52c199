use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cornerstr::corners::{detect_corners, DetectorKind, DetectorParams};
use cornerstr::data::{default_lexicon, load_dataset, read_lexicon, Dataset, SynthSpec};
use cornerstr::diagnostics::run_gradient_checks;
use cornerstr::eval::{
    cluster_stats, evaluate, feature_dump, predictions_tsv, run_ablation, token_name, AblationGrid, Normalization,
};
use cornerstr::image::{read_png, write_pgm};
use cornerstr::model::{FusionMode, Model, ModelConfig};
use cornerstr::train::{pipeline_for, TrainConfig, Trainer};
use cornerstr::{Error, Result};

const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "cornerstr", version, about = "Corner-guided transformer for artistic text recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a recognizer and write checkpoint.ckpt and metrics.tsv to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate every variant of an ablation grid.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        /// Write the table here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect corners in a PNG.
    Corners(CornersArgs),
    /// Render a synthetic word-image dataset.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Word list, one per line. Defaults to the embedded list.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Render without decorative styling.
        #[arg(long)]
        plain: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// ModelConfig JSON. Defaults to the toy configuration.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// TrainConfig JSON. Defaults to six epochs at 3e-4, decaying tenfold after four.
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Manifest path or `synth:count=N,seed=S`.
    #[arg(long)]
    data: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fusion_mode: Option<FusionMode>,
    /// Count PAD positions as contrastive anchors.
    #[arg(long)]
    cc_include_pad: bool,
    /// Sum the contrastive loss over anchors instead of averaging.
    #[arg(long)]
    cc_raw_sum: bool,
    /// Continue from a trainer checkpoint; config flags are then ignored.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest path or `synth:count=N,seed=S`.
    #[arg(long)]
    data: String,
    #[arg(long)]
    case_sensitive: bool,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Print `key=value` lines instead of TSV.
    #[arg(long)]
    kv: bool,
    /// Write `gt<TAB>pred` lines here.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Write projected features of every valid position here.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

#[derive(Args)]
struct CornersArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "shi_tomasi")]
    detector: DetectorKind,
    #[arg(long)]
    quality_level: Option<f64>,
    #[arg(long)]
    min_distance: Option<usize>,
    /// Binary PGM map. Defaults to <image>.corners.pgm.
    #[arg(long)]
    map: Option<PathBuf>,
    /// `row col response` list. Defaults to stdout.
    #[arg(long)]
    list: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => Trainer::load_checkpoint(path)?,
        None => {
            let mut model_cfg = match &a.model_config {
                Some(p) => ModelConfig::from_json(&read_text(p)?)?,
                None => ModelConfig::toy(),
            };
            if let Some(mode) = a.fusion_mode {
                model_cfg.fusion_mode = mode;
            }
            let mut train_cfg = match &a.train_config {
                Some(p) => TrainConfig::from_json(&read_text(p)?)?,
                None => TrainConfig::default(),
            };
            train_cfg.cc_include_pad |= a.cc_include_pad;
            train_cfg.cc_raw_sum |= a.cc_raw_sum;
            Trainer::new(Model::new(model_cfg)?, train_cfg)?
        }
    };
    let lexicon = a.lexicon.as_deref().map(read_lexicon).transpose()?;
    let data = load_dataset(&a.data, &trainer.pipeline, lexicon.as_deref())?;
    eprintln!(
        "training {} parameters on {} samples, fusion {}",
        trainer.model.params.num_scalars(),
        data.len(),
        trainer.model.config.fusion_mode
    );
    trainer.fit(&data, Some(&a.out), |t| {
        let last = t.log.last().map_or("", String::as_str);
        eprintln!("epoch {} done: {last}", t.state.epoch);
        Ok(true)
    })?;
    println!("{}", a.out.join("checkpoint.ckpt").display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = Model::load(&a.checkpoint)?;
    let pipeline = pipeline_for(&model.config)?;
    let data = load_dataset(&a.data, &pipeline, None)?;
    let norm = Normalization {
        case_sensitive: a.case_sensitive,
    };
    let (report, preds) = evaluate(&model, &data, a.batch_size, norm)?;
    if let Some(path) = &a.predictions {
        write_text(path, &predictions_tsv(&data, &preds))?;
    }
    if let Some(path) = &a.dump_features {
        let dump = feature_dump(&model, &data, a.batch_size)?;
        let charset = model.config.charset()?;
        write_text(path, &dump.to_text(|id| token_name(&charset, id)))?;
        if let Ok((intra, inter)) = cluster_stats(&dump) {
            eprintln!("mean cosine: intra {intra:.4} inter {inter:.4}");
        }
    }
    print!("{}", if a.kv { report.to_kv() } else { report.to_tsv() });
    Ok(())
}

fn gradcheck(seed: u64) -> Result<bool> {
    let mut ok = true;
    for r in run_gradient_checks(seed)? {
        let pass = r.max_rel_error <= GRAD_TOLERANCE;
        ok &= pass;
        println!("{:<32}{:>12.3e}  {}", r.name, r.max_rel_error, if pass { "ok" } else { "FAIL" });
    }
    Ok(ok)
}

fn ablate(grid: &Path, out: Option<&Path>) -> Result<bool> {
    let grid = AblationGrid::from_json(&read_text(grid)?)?;
    let table = run_ablation(&grid, |row| {
        eprintln!("{} {} lambda={} tau={}: {}", row.fusion_mode, row.detector, row.lambda, row.tau, row.status)
    })?;
    let tsv = table.to_tsv();
    if let Some(path) = out {
        write_text(path, &tsv)?;
    }
    print!("{tsv}");
    Ok(!table.any_failed())
}

fn corners(a: CornersArgs) -> Result<()> {
    let mut params = match a.detector {
        DetectorKind::Harris => DetectorParams::harris(),
        DetectorKind::ShiTomasi => DetectorParams::default(),
    };
    if let Some(q) = a.quality_level {
        params.quality_level = q;
    }
    if let Some(d) = a.min_distance {
        params.min_distance = d;
    }
    let img = read_png(&a.image)?;
    let map = detect_corners(&img, &params)?;
    let map_path = a.map.unwrap_or_else(|| a.image.with_extension("corners.pgm"));
    write_pgm(&map_path, map.height, map.width, &map.pgm_bytes())?;
    match &a.list {
        Some(path) => write_text(path, &map.corner_list())?,
        None => print!("{}", map.corner_list()),
    }
    eprintln!("{} corners, map written to {}", map.count(), map_path.display());
    Ok(())
}

fn synth(count: usize, seed: u64, out: &Path, lexicon: Option<&Path>, plain: bool) -> Result<()> {
    let words = match lexicon {
        Some(p) => read_lexicon(p)?,
        None => default_lexicon(),
    };
    let spec = SynthSpec::parse(&format!("count={count},seed={seed},plain={plain}"))?;
    let pipeline = pipeline_for(&ModelConfig::toy())?;
    let data = Dataset::synthetic(&spec, &words, &pipeline)?;
    let manifest = data.write_to_dir(out)?;
    println!("{} images, manifest {}", manifest.entries.len(), out.join("manifest.tsv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::Ablate { grid, out } => ablate(&grid, out.as_deref()),
        Command::Corners(a) => corners(a).map(|_| true),
        Command::Synth {
            count,
            seed,
            out,
            lexicon,
            plain,
        } => synth(count, seed, &out, lexicon.as_deref(), plain).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;

use cats_edge::config::RunConfig;
use cats_edge::eval::{self, Protocol};
use cats_edge::gradcheck::CheckOptions;
use cats_edge::loss::EdgeLabel;
use cats_edge::net::{self, FusionMode, ModelState};
use cats_edge::par::{self, Execution};
use cats_edge::synth::{self, Manifest};
use cats_edge::train::{self, Sample};
use cats_edge::{pgm, verify, Error, Grid, Result};

#[derive(Parser)]
#[command(name = "cats", version, about = "Crisp edge detection: data, training, prediction and evaluation")]
struct Cli {
    /// Worker threads for per-sample work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Write fused, side and fusion-weight maps for every image.
    Predict(PredictArgs),
    /// Score prediction maps against labels (PR curve, ODS, OIS).
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of every component.
    Gradcheck(GradcheckArgs),
    /// Print a configuration preset as JSON.
    Config(ConfigArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides synth.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides synth.image_size.
    #[arg(long)]
    size: Option<usize>,
    /// Overrides synth.num_images.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossKind {
    /// Weighted cross entropy only.
    Ce,
    /// Cross entropy plus boundary tracing and texture suppression.
    Tracing,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides net.fusion.
    #[arg(long)]
    fusion: Option<FusionMode>,
    #[arg(long, value_enum, default_value = "tracing")]
    loss: LossKind,
    /// Force the boundary tracing term on (default: on for --loss tracing).
    #[arg(long, overrides_with = "no_bdry")]
    bdry: bool,
    #[arg(long, overrides_with = "bdry")]
    no_bdry: bool,
    /// Force the texture suppression term on (default: on for --loss tracing).
    #[arg(long, overrides_with = "no_tex")]
    tex: bool,
    #[arg(long, overrides_with = "tex")]
    no_tex: bool,
    /// Overrides train.epochs.
    #[arg(long)]
    epochs: Option<u32>,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a saved model or checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory (uses its images/) or a directory of PGM images.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of prediction PGMs, matched to labels by file name.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of consensus label PGMs (a dataset's labels/).
    #[arg(long)]
    labels: PathBuf,
    /// Overrides eval.protocol.
    #[arg(long)]
    protocol: Option<ProtocolArg>,
    /// Overrides eval.tolerance (fraction of the image diagonal; default 0.0075).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Write the PR curve CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Standard,
    Crisp,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length of the random test grids.
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Random instances per component.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Scale every analytic gradient by 1.01 (checks that the suite can fail).
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// desk or full.
    #[arg(long, default_value = "desk")]
    preset: String,
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = format!(
        "Configuration files are JSON with sections synth, net, train, loss and eval. \
         Keys left out keep these defaults:\n\n{}",
        RunConfig::default().to_json()
    );
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    par::init_workers(cli.jobs);
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) | Error::Format { .. } | Error::Io { .. } => 2,
        _ => 1,
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Config(a) => {
            print!("{}", RunConfig::preset(&a.preset)?.to_json());
            Ok(Outcome::Ok)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn gen(a: GenArgs) -> Result<Outcome> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    if let Some(s) = a.size {
        cfg.synth.image_size = s;
    }
    if let Some(n) = a.count {
        cfg.synth.num_images = n;
    }
    cfg.synth.validate()?;
    let items = synth::generate_with(&cfg.synth, Execution::available_parallel())?;
    synth::write_dataset(&a.out, &cfg.synth, &items)?;
    info!("wrote {} images to {}", items.len(), a.out.display());
    Ok(Outcome::Ok)
}

fn train_cmd(a: TrainArgs) -> Result<Outcome> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(f) = a.fusion {
        cfg.net.fusion = f;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let tracing = a.loss == LossKind::Tracing;
    let bdry = if a.bdry { true } else if a.no_bdry { false } else { tracing };
    let tex = if a.tex { true } else if a.no_tex { false } else { tracing };
    cfg.loss.set_bdry(bdry);
    cfg.loss.set_tex(tex);
    cfg.validate()?;

    let (_, items) = synth::read_dataset(&a.data)?;
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("no images under {}", a.data.join("images").display())));
    }
    let data = items
        .into_iter()
        .map(|it| {
            Ok(Sample {
                label: cfg.loss.label(&it.consensus)?,
                image: it.image,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let net_cfg = cfg.net_config();
    let state = match &a.resume {
        Some(p) => ModelState::load(p)?,
        None => ModelState::init_with(net_cfg.arch, cfg.train.seed, cfg.train.init)?,
    };
    mkdir(&a.out)?;
    let cfg_path = a.out.join("config.json");
    std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
    let every = cfg.train.checkpoint_every;
    let out_dir = a.out.clone();
    let outcome = train::train_from(state, &data, &net_cfg, &cfg.train, Execution::available_parallel(), |s, e| {
        if every > 0 && e.epoch % every == 0 {
            s.save(&out_dir.join(format!("checkpoint_{:04}.bin", e.epoch)))?;
        }
        Ok(())
    })?;
    outcome.state.save(&a.out.join("model.bin"))?;
    train::write_loss_csv(&a.out.join("loss.csv"), &outcome.trace)?;
    info!("saved {}", a.out.join("model.bin").display());
    Ok(Outcome::Ok)
}

/// `dir/images/*.pgm` when present, else `dir/*.pgm`.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let sub = dir.join("images");
    synth::list_pgm(if sub.is_dir() { &sub } else { dir })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn predict(a: PredictArgs) -> Result<Outcome> {
    let state = ModelState::load(&a.model)?;
    let files = image_files(&a.data)?;
    let images = files.iter().map(|p| pgm::read_pgm(p)).collect::<Result<Vec<Grid>>>()?;
    let preds = par::map_slice(&images, Execution::available_parallel(), |img| net::predict(&state, img));
    let stages = state.arch.stages;
    let mut dirs = vec![a.out.join("final")];
    dirs.extend((1..=stages).map(|s| a.out.join(format!("side_{s}"))));
    if state.arch.fusion == FusionMode::CoFusion {
        dirs.extend((1..=stages).map(|s| a.out.join(format!("weight_{s}"))));
    }
    for d in &dirs {
        mkdir(d)?;
    }
    for (p, pred) in files.iter().zip(preds) {
        let pred = pred?;
        let name = file_name(p);
        pgm::write_pgm(&pred.fused, &dirs[0].join(&name))?;
        for (s, side) in pred.sides.iter().enumerate() {
            pgm::write_pgm(side, &dirs[1 + s].join(&name))?;
        }
        if let Some(w) = &pred.weights {
            for s in 0..stages {
                pgm::write_pgm(&w.channel(s), &dirs[1 + stages + s].join(&name))?;
            }
        }
    }
    info!("wrote maps for {} images to {}", files.len(), a.out.display());
    Ok(Outcome::Ok)
}

/// Annotator count from a manifest next to the labels directory, if any.
fn annotators_near(labels: &Path) -> Option<usize> {
    let m = labels.parent()?.join("manifest.json");
    let text = std::fs::read_to_string(m).ok()?;
    serde_json::from_str::<Manifest>(&text).ok().map(|m| m.spec.annotators)
}

fn eval_cmd(a: EvalArgs) -> Result<Outcome> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(p) = a.protocol {
        cfg.eval.protocol = match p {
            ProtocolArg::Standard => Protocol::Standard,
            ProtocolArg::Crisp => Protocol::Crisp,
        };
    }
    if let Some(t) = a.tolerance {
        cfg.eval.tolerance = t;
    }
    cfg.eval.validate()?;
    let label_files = synth::list_pgm(&a.labels)?;
    if label_files.is_empty() {
        return Err(Error::InvalidArgument(format!("no label images in {}", a.labels.display())));
    }
    let snap = annotators_near(&a.labels);
    let mut preds = Vec::with_capacity(label_files.len());
    let mut labels = Vec::with_capacity(label_files.len());
    for lp in &label_files {
        let mut consensus = pgm::read_pgm(lp)?;
        if let Some(n) = snap {
            let n = n as f64;
            consensus = consensus.map(|v| (v * n).round() / n);
        }
        labels.push(EdgeLabel::derive(&consensus, cfg.loss.delta, 1)?);
        preds.push(pgm::read_pgm(&a.pred.join(file_name(lp)))?);
    }
    let r = eval::evaluate(&preds, &labels, &cfg.eval, Execution::available_parallel())?;
    if let Some(out) = &a.out {
        eval::write_pr_csv(out, &r)?;
    }
    println!(
        "protocol {} tolerance {} images {}",
        cfg.eval.protocol,
        cfg.eval.tolerance,
        preds.len()
    );
    let o = &r.ods;
    println!("ODS F {:.4} P {:.4} R {:.4} threshold {:.2}", o.f, o.precision, o.recall, o.threshold);
    println!("OIS F {:.4} P {:.4} R {:.4}", r.ois.f, r.ois.precision, r.ois.recall);
    Ok(Outcome::Ok)
}

fn gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let opts = verify::SuiteOptions {
        seed: a.seed,
        size: a.size,
        seeds: a.seeds,
        check: CheckOptions {
            analytic_scale: if a.corrupt_gradient { 1.01 } else { 1.0 },
            ..CheckOptions::default()
        },
    };
    let mut ok = true;
    for r in verify::run_all(&opts)? {
        let pass = r.passes();
        ok &= pass;
        println!(
            "{:<9} max_rel_err {:.3e} checked {} skipped {} {}",
            r.component,
            r.report.max_rel_error,
            r.report.checked,
            r.report.skipped,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
}

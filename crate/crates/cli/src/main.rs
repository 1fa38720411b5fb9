//! `rrid`: synthetic data, training, embedding extraction, evaluation,
//! ablations and the gradient oracle from one binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! format error, 3 gradient check ran but failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rrid_core::eval::{ablation_run, default_grid, embed_split, evaluate_sets, Report};
use rrid_core::gradsuite::run_suite;
use rrid_core::io::{
    load_config, load_manifest, read_embeddings, synth_generate, write_embeddings, RunConfig, Split, SynthSpec,
};
use rrid_core::par::{init_threads_from_env, Exec};
use rrid_core::training::{train_with, Checkpoint, Model};
use rrid_core::Error;

#[derive(Parser)]
#[command(name = "rrid", version, about = "Part-based person re-identification head: train, extract, evaluate")]
struct Cli {
    /// Log progress (per-epoch losses, ablation variants) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic feature-map dataset.
    Synth(SynthArgs),
    /// Train the head and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Manifest path; falls back to the config's `data` field.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path; falls back to the config's `out` field.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed one split of a manifest with a trained checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score query embeddings against gallery embeddings.
    Eval {
        #[arg(long)]
        query_emb: PathBuf,
        #[arg(long)]
        gallery_emb: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score every ablation variant; writes a text table and `<out>.json`.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Total identities, including held-out ones.
    #[arg(long)]
    ids: usize,
    /// Held-out identities for query/gallery (default: a third of --ids).
    #[arg(long)]
    eval_ids: Option<usize>,
    #[arg(long)]
    imgs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    shared_attribute_prob: Option<f64>,
    #[arg(long)]
    clutter_row_prob: Option<f64>,
    #[arg(long)]
    occlusion_band_prob: Option<f64>,
    #[arg(long)]
    cameras: Option<usize>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Core(Error),
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn resolve(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Failure::Usage(format!("no {what} path: pass --{what} or set it in the config")))
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = SynthSpec::new(a.ids, a.imgs, a.seed);
    if let Some(v) = a.eval_ids {
        spec.eval_ids = v;
    }
    spec.height = a.height.unwrap_or(spec.height);
    spec.width = a.width.unwrap_or(spec.width);
    spec.channels = a.channels.unwrap_or(spec.channels);
    spec.noise_sigma = a.noise_sigma.unwrap_or(spec.noise_sigma);
    spec.shared_attribute_prob = a.shared_attribute_prob.unwrap_or(spec.shared_attribute_prob);
    spec.clutter_row_prob = a.clutter_row_prob.unwrap_or(spec.clutter_row_prob);
    spec.occlusion_band_prob = a.occlusion_band_prob.unwrap_or(spec.occlusion_band_prob);
    spec.n_cameras = a.cameras.unwrap_or(spec.n_cameras);
    let manifest = synth_generate(&spec, &a.out, a.overwrite)?;
    println!("{}", manifest.display());
    Ok(())
}

fn train_cmd(config: &Path, data: Option<PathBuf>, out: Option<PathBuf>, exec: Exec) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let data = resolve(data, &cfg.data, "data")?;
    let out = resolve(out, &cfg.out, "out")?;
    let (head, train) = (cfg.head(), cfg.train());
    head.validate()?;
    train.validate()?;
    let manifest = load_manifest(&data)?;
    let set = manifest.train_set(exec)?;
    let outcome = train_with(&train, &head, &set, |e| {
        log::info!("epoch {} loss {:.5}", e.epoch, e.loss);
    })?;
    outcome.checkpoint.save(&out)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} epochs on {} images ({} identities), final loss {:.5}",
            last.epoch,
            set.len(),
            set.classes,
            last.loss
        );
    }
    println!("{}", out.display());
    Ok(())
}

fn extract(checkpoint: &Path, data: &Path, split: Split, out: &Path, exec: Exec) -> Result<(), Failure> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let config = RunConfig::from_parts(&ck.meta.head, &ck.meta.train).to_json();
    let manifest = load_manifest(data)?;
    let set = embed_split(&model, &manifest, split, config, exec)?;
    write_embeddings(out, &set)?;
    println!("{} {} embeddings of dimension {} -> {}", set.len(), split, set.dim, out.display());
    Ok(())
}

fn eval(query: &Path, gallery: &Path, out: Option<PathBuf>, exec: Exec) -> Result<(), Failure> {
    let q = read_embeddings(query)?;
    let g = read_embeddings(gallery)?;
    let result = evaluate_sets(&q, &g, exec)?;
    let report = Report::new(q.meta.config.clone(), &result);
    print!("{}", report.to_text());
    if let Some(out) = out {
        std::fs::write(&out, report.to_json()).map_err(|e| Failure::Core(io_error(&out, e)))?;
    }
    Ok(())
}

fn ablate(config: &Path, data: Option<PathBuf>, out: &Path, exec: Exec) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let data = resolve(data, &cfg.data, "data")?;
    let train = cfg.train();
    train.validate()?;
    let manifest = load_manifest(&data)?;
    let grid = default_grid(&cfg.head());
    let table = ablation_run(&train, &manifest, &grid, cfg.to_json(), exec)?;
    let text = table.to_text();
    print!("{text}");
    std::fs::write(out, &text).map_err(|e| Failure::Core(io_error(out, e)))?;
    let mut json_path = out.as_os_str().to_owned();
    json_path.push(".json");
    let json_path = PathBuf::from(json_path);
    std::fs::write(&json_path, table.to_json()).map_err(|e| Failure::Core(io_error(&json_path, e)))?;
    Ok(())
}

fn gradcheck(seed: u64, exec: Exec) -> Result<(), Failure> {
    let started = std::time::Instant::now();
    let report = run_suite(seed, exec)?;
    print!("{}", report.to_text());
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    if report.pass() {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads_from_env()?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train { config, data, out } => train_cmd(&config, data, out, exec),
        Command::Extract {
            checkpoint,
            data,
            split,
            out,
        } => extract(&checkpoint, &data, split, &out, exec),
        Command::Eval {
            query_emb,
            gallery_emb,
            out,
        } => eval(&query_emb, &gallery_emb, out, exec),
        Command::Ablate { config, data, out } => ablate(&config, data, &out, exec),
        Command::Gradcheck { seed } => gradcheck(seed, exec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
        Err(Failure::CheckFailed) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(3)
        }
    }
}

//! `navcurate`: batch front end for trajectory curation and evaluation.

mod commands;
mod config;
mod failure;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use navcurate_core::loss::LossWeights;

use config::{ConventionFlags, FilterFlags, PipelineConfig, SamplerFlags};
use failure::Failure;
use manifest::{sibling_manifest, stale_inputs, Manifest, StageParams};

#[derive(Debug, Parser)]
#[command(
    name = "navcurate",
    version,
    about = "Curate pose trajectories into navigation training samples and score predictions"
)]
struct Cli {
    /// Worker threads [default: number of processors].
    #[arg(long, global = true, env = "NAVCURATE_WORKERS", value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut pose trajectories into fixed-length clips anchored at their first pose.
    Segment {
        /// Pose file, or directory of `*.txt` pose files.
        #[arg(long, value_name = "POSES")]
        input: PathBuf,
        #[arg(long, value_name = "F")]
        fps: f64,
        #[arg(long, value_name = "S", default_value_t = navcurate_core::clip::DEFAULT_CLIP_SECONDS)]
        clip_seconds: f64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Judge clips against the pitch, view-divergence and crowd rules.
    Filter {
        #[arg(long, value_name = "DIR")]
        clips: PathBuf,
        /// Detection file shared by all clips, or directory of `<source_id>.jsonl`.
        #[arg(long, value_name = "FILE")]
        detections: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "OUT")]
        report: PathBuf,
        /// Accepted clip id list [default: accepted.txt beside the report].
        #[arg(long, value_name = "OUT")]
        accepted: Option<PathBuf>,
        /// [default: <report>.manifest.json]
        #[arg(long, value_name = "OUT")]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        thresholds: FilterFlags,
        #[command(flatten)]
        convention: ConventionFlags,
    },
    /// Draw training samples for landmarks on accepted clips.
    Samples {
        #[arg(long, value_name = "DIR")]
        clips: PathBuf,
        #[arg(long, value_name = "FILE")]
        landmarks: PathBuf,
        #[arg(long, value_name = "LIST")]
        accepted: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// [default: <out>.manifest.json]
        #[arg(long, value_name = "OUT")]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerFlags,
        #[command(flatten)]
        convention: ConventionFlags,
    },
    /// Score waypoint predictions.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// [default: <out>.manifest.json]
        #[arg(long, value_name = "OUT")]
        manifest: Option<PathBuf>,
    },
    /// Generate synthetic trajectories, detections and landmarks.
    Synth {
        /// Corpus description (JSON) [default: the built-in ten-clip oracle corpus].
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate the loss kernels on a JSON record and print components and total.
    Loss {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        lambda_reg: Option<f64>,
        #[arg(long)]
        lambda_ori: Option<f64>,
        #[arg(long)]
        lambda_arr: Option<f64>,
        #[arg(long)]
        lambda_hall: Option<f64>,
    },
    /// Re-run a stage from its manifest and check the outputs are unchanged.
    Replay {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
    },
}

fn resolve_config(
    path: Option<&Path>,
    apply: impl FnOnce(&mut PipelineConfig),
) -> Result<(PipelineConfig, Option<Vec<u8>>), Failure> {
    let bytes = match path {
        Some(p) => Some(std::fs::read(p).map_err(|e| Failure::io(p, e))?),
        None => None,
    };
    let mut cfg = PipelineConfig::load(path)?;
    apply(&mut cfg);
    Ok((cfg, bytes))
}

fn finish(mut m: Manifest, config_file: Option<(&Path, Vec<u8>)>) -> Result<(), Failure> {
    if let Some((path, bytes)) = config_file {
        m.input(path, &bytes);
    }
    m.write()?;
    println!("{}", serde_json::json!({ "stage": m.params.name(), "counts": m.counts }));
    Ok(())
}

fn run_stage(params: StageParams, config: Option<serde_json::Value>) -> Result<Manifest, Failure> {
    let pipeline = || -> Result<PipelineConfig, Failure> {
        let value = config.clone().unwrap_or(serde_json::Value::Null);
        serde_json::from_value(value).map_err(|e| Failure::invalid("parse", format!("manifest config: {e}")))
    };
    match &params {
        StageParams::Segment { .. } => commands::segment_stage(params),
        StageParams::Filter { .. } => commands::filter_stage(params, &pipeline()?),
        StageParams::Samples { .. } => commands::samples_stage(params, &pipeline()?),
        StageParams::Eval { .. } => commands::eval_stage(params),
        StageParams::Synth { spec, .. } => {
            let corpus = serde_json::from_value(config.unwrap_or_default())
                .map_err(|e| Failure::invalid("parse", format!("manifest config: {e}")))?;
            let bytes = match spec {
                Some(p) => Some(std::fs::read(p).map_err(|e| Failure::io(p, e))?),
                None => None,
            };
            commands::synth_stage(params, &corpus, bytes.as_deref())
        }
    }
}

fn replay(path: &Path) -> Result<(), Failure> {
    let old = Manifest::load(path)?;
    let stale = stale_inputs(&old)?;
    if !stale.is_empty() {
        return Err(Failure::invalid(
            "stale_input",
            format!("inputs changed since the manifest was written: {}", stale.join(", ")),
        ));
    }
    let mut new = run_stage(old.params.clone(), old.config.clone())?;
    // Config files are recorded as inputs but not re-read; carry them over.
    for (k, v) in &old.inputs {
        new.inputs.entry(k.clone()).or_insert_with(|| v.clone());
    }
    if new.outputs != old.outputs || new.counts != old.counts {
        return Err(Failure::invalid("replay_mismatch", "re-run produced different outputs"));
    }
    new.write()?;
    println!("{}", serde_json::json!({ "stage": new.params.name(), "replayed": true, "outputs": new.outputs.len() }));
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Segment { input, fps, clip_seconds, out } => {
            let m = commands::segment_stage(StageParams::Segment { input, fps, clip_seconds, out })?;
            finish(m, None)
        }
        Command::Filter { clips, detections, config, report, accepted, manifest, thresholds, convention } => {
            let (cfg, bytes) = resolve_config(config.as_deref(), |c| {
                thresholds.apply(&mut c.filter);
                convention.apply(&mut c.convention);
            })?;
            let accepted = accepted.unwrap_or_else(|| report.with_file_name("accepted.txt"));
            let manifest = manifest.unwrap_or_else(|| sibling_manifest(&report));
            let params = StageParams::Filter { clips, detections, report, accepted, manifest };
            let m = commands::filter_stage(params, &cfg)?;
            finish(m, config.as_deref().zip(bytes))
        }
        Command::Samples { clips, landmarks, accepted, config, out, manifest, sampler, convention } => {
            let (cfg, bytes) = resolve_config(config.as_deref(), |c| {
                sampler.apply(&mut c.sampler);
                convention.apply(&mut c.convention);
            })?;
            let manifest = manifest.unwrap_or_else(|| sibling_manifest(&out));
            let params = StageParams::Samples { clips, landmarks, accepted, out, manifest };
            let m = commands::samples_stage(params, &cfg)?;
            finish(m, config.as_deref().zip(bytes))
        }
        Command::Eval { pred, out, manifest } => {
            let manifest = manifest.unwrap_or_else(|| sibling_manifest(&out));
            finish(commands::eval_stage(StageParams::Eval { pred, out, manifest })?, None)
        }
        Command::Synth { spec, out } => {
            let (corpus, bytes) = commands::load_synth_corpus(spec.as_deref())?;
            let m = commands::synth_stage(StageParams::Synth { spec, out }, &corpus, bytes.as_deref())?;
            finish(m, None)
        }
        Command::Loss { input, lambda_reg, lambda_ori, lambda_arr, lambda_hall } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Failure::io(&input, e))?;
            let record: commands::LossInput = serde_json::from_str(&text).map_err(|e| Failure::parse(&input, e))?;
            let mut w: LossWeights = record.weights;
            for (slot, flag) in [
                (&mut w.lambda_reg, lambda_reg),
                (&mut w.lambda_ori, lambda_ori),
                (&mut w.lambda_arr, lambda_arr),
                (&mut w.lambda_hall, lambda_hall),
            ] {
                if let Some(v) = flag {
                    *slot = v;
                }
            }
            let out = commands::loss_command(record, w)?;
            print!("{}", navcurate_core::io::format_report(&out)?);
            Ok(())
        }
        Command::Replay { manifest } => replay(&manifest),
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str().to_ascii_lowercase(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::invalid("usage", e.to_string().split_whitespace().collect::<Vec<_>>().join(" "));
            eprintln!("{}", f.record());
            return ExitCode::from(f.code as u8);
        }
    };
    init_logging();
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            let f = Failure::invalid("usage", format!("cannot start {workers} workers: {e}"));
            eprintln!("{}", f.record());
            return ExitCode::from(f.code as u8);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.record());
            ExitCode::from(f.code as u8)
        }
    }
}

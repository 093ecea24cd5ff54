mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use manifest::{sidecar, Recorder, MANIFEST_FILE};
use trajflow::checkpoint::Checkpoint;
use trajflow::config::{Paradigm, TrainConfig};
use trajflow::harmonize::{benchmark_csv, compression_benchmark, Method, DEFAULT_L};
use trajflow::io::{read_jsonl, write_json, write_jsonl};
use trajflow::metrics::{evaluate, per_mode_distances, BBox, MetricReportJson};
use trajflow::pipeline;
use trajflow::synth::{make_dataset, make_world_with_curvature, Dataset, Scale, DEFAULT_CURVATURE, TRAJECTORIES_FILE};
use trajflow::train::history_csv;
use trajflow::{Error, Trajectory};

#[derive(Parser)]
#[command(name = "trajflow", version, about = "Trajectory generation with conditional flow matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset with an 80/10/10 split.
    Synth(SynthArgs),
    /// Reconstruction fidelity of the parameterization methods.
    CompressBench(BenchArgs),
    /// Train a flow or diffusion model.
    Train(TrainArgs),
    /// Generate trajectories from a checkpoint.
    Generate(GenerateArgs),
    /// Compare generated trajectories against real ones.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// urban, metro or nationwide
    #[arg(long, default_value = "urban")]
    scale: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_CURVATURE)]
    curvature: f64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset directory or trajectory JSONL file.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated method names, or `all`.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30")]
    ks: Vec<usize>,
    /// Working resolution of the resampled paths.
    #[arg(long, default_value_t = DEFAULT_L)]
    l: usize,
    /// Use only the first N trajectories.
    #[arg(long)]
    limit: Option<usize>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured paradigm (flow or ddpm).
    #[arg(long)]
    paradigm: Option<String>,
    /// Overrides the configured total epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint to continue training from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory for the checkpoint, loss curve and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSONL file of conditions.
    #[arg(long, conflicts_with = "from_test_split", required_unless_present = "from_test_split")]
    conditions: Option<PathBuf>,
    /// Dataset directory whose test-split conditions are used.
    #[arg(long)]
    from_test_split: Option<PathBuf>,
    /// Number of trajectories; defaults to one per condition.
    #[arg(long)]
    n: Option<usize>,
    /// Sampling steps; defaults to the configured value.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    guidance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trajectory JSONL file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Real trajectories: a JSONL file, or a dataset directory whose test
    /// split is used.
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. }
            | Error::InvalidArgument(_)
            | Error::ArchitectureMismatch { .. }
            | Error::HashMismatch { .. }
            | Error::Format(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_exists(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn prepare_output_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create `{}`: {e}", dir.display())))
}

fn prepare_output_file(path: &Path) -> CmdResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => prepare_output_dir(p),
        _ => Ok(()),
    }
}

fn read_dataset(dir: &Path, rec: &mut Recorder) -> Result<Dataset, Failure> {
    require_exists(dir, "dataset")?;
    rec.input(&dir.join(TRAJECTORIES_FILE))?;
    Ok(Dataset::read(dir)?)
}

/// Trajectories from a JSONL file, or from a dataset directory (all of them,
/// or the test split).
fn read_trajectories(path: &Path, test_only: bool, rec: &mut Recorder) -> Result<Vec<Trajectory>, Failure> {
    require_exists(path, "input")?;
    if path.is_dir() {
        let d = read_dataset(path, rec)?;
        if !test_only {
            return Ok(d.trajectories);
        }
        let (_, _, test) = d.split.partition(&d.trajectories);
        Ok(test.into_iter().cloned().collect())
    } else {
        rec.input(path)?;
        Ok(read_jsonl(path)?)
    }
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let rec = Recorder::start("synth");
    let scale: Scale = a.scale.parse().map_err(Failure::from)?;
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(a.curvature >= 0.0 && a.curvature.is_finite()) {
        return Err(usage(format!("--curvature must be non-negative, got {}", a.curvature)));
    }
    prepare_output_dir(&a.out)?;
    let world = make_world_with_curvature(a.seed, scale, a.curvature);
    let dataset = make_dataset(&world, a.n, a.seed)?;
    dataset.write(&a.out)?;
    let outputs: Vec<PathBuf> = [TRAJECTORIES_FILE, "split.json", "world.json"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    let config = json!({ "scale": scale.as_str(), "n": a.n, "curvature": a.curvature });
    rec.finish(config, Some(a.seed), &outputs, None, &a.out.join(MANIFEST_FILE))?;
    println!("wrote {} trajectories to {}", a.n, a.out.display());
    Ok(())
}

fn parse_methods(spec: &str) -> Result<Vec<Method>, Failure> {
    if spec.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<Method>().map_err(Failure::from))
        .collect()
}

fn cmd_compress_bench(a: BenchArgs) -> CmdResult {
    let mut rec = Recorder::start("compress-bench");
    let methods = parse_methods(&a.methods)?;
    if a.ks.is_empty() {
        return Err(usage("--ks needs at least one budget"));
    }
    if let Some(&k) = a.ks.iter().find(|&&k| k < 2 || k > a.l) {
        return Err(usage(format!("budget K={k} must lie in [2, {}]", a.l)));
    }
    let mut data = read_trajectories(&a.data, false, &mut rec)?;
    if let Some(n) = a.limit {
        data.truncate(n);
    }
    prepare_output_file(&a.out)?;
    let rows = compression_benchmark(&data, &methods, &a.ks, a.l)?;
    fs::write(&a.out, benchmark_csv(&rows)).map_err(Error::from)?;
    let names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
    let config = json!({ "methods": names, "ks": a.ks, "l": a.l, "n_trajectories": data.len() });
    rec.finish(config, None, &[a.out.clone()], None, &sidecar(&a.out))?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut rec = Recorder::start("train");
    let resume = match &a.resume {
        Some(p) => {
            require_exists(p, "checkpoint")?;
            rec.input(p)?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    let mut cfg = match (&a.config, &resume) {
        (Some(p), _) => {
            require_exists(p, "config")?;
            rec.input(p)?;
            let text = fs::read_to_string(p).map_err(Error::from)?;
            TrainConfig::parse(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        (None, Some(ck)) => ck.config.clone(),
        (None, None) => TrainConfig::default(),
    };
    if let Some(p) = &a.paradigm {
        cfg.paradigm = p.parse::<Paradigm>()?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let dataset = read_dataset(&a.data, &mut rec)?;
    prepare_output_dir(&a.out)?;

    let (ck, outcome) = pipeline::fit(&dataset, &cfg, resume.as_ref(), |_| {})?;
    let ckpt_path = a.out.join("checkpoint.json");
    let loss_path = a.out.join("loss.csv");
    let config_path = a.out.join("config.txt");
    ck.save(&ckpt_path)?;
    fs::write(&loss_path, history_csv(&outcome.history)).map_err(Error::from)?;
    fs::write(&config_path, cfg.to_text()).map_err(Error::from)?;
    let config = json!({
        "train": cfg,
        "architecture_hash": ck.architecture_hash,
        "resumed_from_step": resume.as_ref().map(|c| c.step),
        "final_step": outcome.state.step,
        "stop": outcome.stop,
    });
    let outputs = [ckpt_path.clone(), loss_path, config_path];
    rec.finish(config, Some(cfg.seed), &outputs, None, &a.out.join(MANIFEST_FILE))?;
    println!(
        "{} training finished at epoch {} step {}; checkpoint {}",
        cfg.paradigm,
        outcome.state.epoch,
        outcome.state.step,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let mut rec = Recorder::start("generate");
    require_exists(&a.model, "checkpoint")?;
    rec.input(&a.model)?;
    let ck = Checkpoint::load(&a.model)?;
    let model = ck.model()?;
    let specs = match (&a.conditions, &a.from_test_split) {
        (Some(p), _) => {
            require_exists(p, "conditions")?;
            rec.input(p)?;
            let records = pipeline::read_condition_records(p)?;
            pipeline::resolve_records(&records, &ck.empirical, a.seed)?
        }
        (None, Some(dir)) => {
            let d = read_dataset(dir, &mut rec)?;
            if d.world != ck.world {
                return Err(usage("dataset world differs from the checkpoint's world"));
            }
            pipeline::test_split_specs(&d)?
        }
        (None, None) => return Err(usage("either --conditions or --from-test-split is required")),
    };
    let n = a.n.unwrap_or(specs.len());
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let steps = a.steps.unwrap_or(ck.config.sample_steps);
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    if !(a.guidance >= 0.0 && a.guidance.is_finite()) {
        return Err(usage(format!("--guidance must be non-negative, got {}", a.guidance)));
    }
    let sampler = ck.sampler(steps, a.guidance)?;
    let requests = pipeline::requests(&specs, n, ck.config.l)?;
    prepare_output_file(&a.out)?;

    let t0 = Instant::now();
    let generated = trajflow::generate::generate(&model, &sampler, &ck.world, &requests, a.seed)?;
    let sampling = t0.elapsed().as_secs_f64();
    write_jsonl(&a.out, &generated)?;
    let config = json!({
        "paradigm": ck.paradigm,
        "architecture_hash": ck.architecture_hash,
        "steps": steps,
        "guidance": a.guidance,
        "n": n,
    });
    let m = rec.finish(config, Some(a.seed), &[a.out.clone()], Some((sampling, n)), &sidecar(&a.out))?;
    println!(
        "generated {n} trajectories in {sampling:.3} s ({:.6} s/sample) to {}",
        m.timings.sec_per_sample.unwrap_or(0.0),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let mut rec = Recorder::start("eval");
    if a.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let real = read_trajectories(&a.real, true, &mut rec)?;
    let generated = read_trajectories(&a.generated, false, &mut rec)?;
    let (Some(rb), Some(gb)) = (BBox::of_trajectories(&real), BBox::of_trajectories(&generated)) else {
        return Err(Failure::Runtime("both trajectory sets must be non-empty".into()));
    };
    let bbox = match rb.intersection(&gb) {
        Some(b) if !b.is_degenerate() => b,
        _ => {
            return Err(Failure::Runtime(format!(
                "bounding boxes do not overlap: real {rb:?}, generated {gb:?}"
            )))
        }
    };
    prepare_output_file(&a.out)?;
    let report = evaluate(&real, &generated, bbox, (a.bins, a.bins))?;
    let per_mode = per_mode_distances(&real, &generated);
    let report_json = MetricReportJson::from(&report);
    write_json(&a.out, &json!({ "report": report_json, "per_mode": per_mode }))?;
    let config = json!({ "bins": a.bins, "bbox": [bbox.lat_min, bbox.lat_max, bbox.lon_min, bbox.lon_max] });
    rec.finish(config, None, &[a.out.clone()], None, &sidecar(&a.out))?;

    println!("density_js {:.6}", report.density_js);
    println!("dtw median {:.4} km, frechet median {:.4} km over {} pairs", report.dtw.median, report.frechet.median, report.n_pairs);
    println!("mode   real_km  generated_km");
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    for r in &per_mode {
        println!("{:<6} {:>8} {:>13}", r.mode.as_str(), fmt(r.real_mean_km), fmt(r.generated_mean_km));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::CompressBench(a) => cmd_compress_bench(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

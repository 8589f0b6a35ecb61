use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use depfn::acq::{AcqRule, Source};
use depfn::harness::al::{run_al, AlConfig};
use depfn::harness::bo::{run_bo, BoConfig};
use depfn::harness::report::report;
use depfn::harness::teaser::teaser_demo;
use depfn::harness::{RankScope, RunStatus, SurrogateSpec, OUTPUT_ROOT_ENV};
use depfn::model::{train, Checkpoint, ModelSpec, TaskSource, TrainConfig};
use depfn::prior::{read_tasks_jsonl, write_tasks_jsonl, TaskPriorConfig};
use depfn::{Error, Result};

#[derive(Parser)]
#[command(name = "depfn", version, about = "Decoupled binned surrogates: training, BO and AL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic tasks from the prior into a JSONL file.
    GenTasks(GenTasksArgs),
    /// Train an in-context surrogate and write a checkpoint.
    Train(TrainArgs),
    /// Bayesian-optimization sweep over seeds for one benchmark and method.
    BoRun(BoArgs),
    /// Pool-based active-learning sweep over seeds.
    AlRun(AlArgs),
    /// Heteroscedastic 1D demo: epistemic versus total LCB.
    Teaser(TeaserArgs),
    /// Rank methods by median final regret across benchmarks.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenTasksArgs {
    /// Prior configuration (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Training job as read from a config file.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default)]
struct TrainJob {
    model: ModelSpec,
    train: TrainConfig,
    /// Defaults to the synthetic prior.
    source: Option<TaskSource>,
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train on a fixed task file instead of fresh prior draws.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss, learning rate and gradient norm as CSV.
    #[arg(long)]
    log_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Decoupled,
    Tuned,
}

#[derive(Clone, Copy, ValueEnum)]
enum SurrogateArg {
    Gp,
    GpKnown,
    DecIcl,
    TunedIcl,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum)]
    surrogate: Option<SurrogateArg>,
    /// Required by the ICL surrogates.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// ei, logei, lcb, ts, bald, epig, var or random.
    #[arg(long)]
    rule: Option<AcqRule>,
    /// epistemic or total.
    #[arg(long)]
    source: Option<Source>,
    #[arg(long)]
    beta: Option<f64>,
    /// `0..10` or a comma list.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    /// Record wall-clock time per step.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct BoArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_init: Option<usize>,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args)]
struct AlArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    acquisitions: Option<usize>,
    #[arg(long)]
    metric_every: Option<usize>,
    /// Probability that a task has input-dependent noise.
    #[arg(long)]
    p_hetero: Option<f64>,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args)]
struct TeaserArgs {
    #[arg(long, value_parser = parse_seeds, default_value = "0..10")]
    seeds: Seeds,
    #[arg(long, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    output_root: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    output_root: PathBuf,
    /// Average each method over the benchmarks it has, instead of the shared ones.
    #[arg(long)]
    available: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',').map(|t| t.trim().parse::<u64>().map_err(|e| format!("{t}: {e}"))).collect::<std::result::Result<_, _>>().map(Seeds)
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)?;
    let bad = |e: String| Error::Config(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
        _ => toml::from_str(&text).map_err(|e| bad(e.to_string())),
    }
}

fn apply_method(m: MethodArgs, surrogate: &mut SurrogateSpec, acq: &mut depfn::acq::AcqSpec, seeds: &mut Vec<u64>, out: &mut PathBuf, timing: &mut bool) -> Result<()> {
    if let Some(s) = m.surrogate {
        let ckpt = || m.checkpoint.clone().ok_or_else(|| Error::Config("--checkpoint is required for ICL surrogates".into()));
        *surrogate = match s {
            SurrogateArg::Gp => SurrogateSpec::GpOracle { known_noise: false },
            SurrogateArg::GpKnown => SurrogateSpec::GpOracle { known_noise: true },
            SurrogateArg::DecIcl => SurrogateSpec::DecoupledIcl { checkpoint: ckpt()? },
            SurrogateArg::TunedIcl => SurrogateSpec::TunedIcl { checkpoint: ckpt()? },
        };
    }
    if let Some(r) = m.rule {
        acq.rule = r;
    }
    if let Some(s) = m.source {
        acq.source = s;
    }
    if let Some(b) = m.beta {
        acq.beta = b;
    }
    if let Some(Seeds(s)) = m.seeds {
        *seeds = s;
    }
    if let Some(o) = m.output_root {
        *out = o;
    }
    *timing |= m.timing;
    Ok(())
}

fn gen_tasks(a: GenTasksArgs) -> Result<()> {
    let cfg: TaskPriorConfig = load_config(a.config.as_deref())?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    write_tasks_jsonl(&cfg, a.first_seed, a.count, &mut out)?;
    out.flush()?;
    log::info!("wrote {} tasks to {}", a.count, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LogRow {
    step: usize,
    loss: f64,
    learning_rate: f64,
    grad_norm: f64,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut job: TrainJob = load_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        job.train.steps = s;
    }
    if let Some(s) = a.seed {
        job.seed = s;
    }
    if let Some(v) = a.variant {
        job.model.variant = match v {
            VariantArg::Decoupled => depfn::model::Variant::Decoupled,
            VariantArg::Tuned => depfn::model::Variant::Tuned,
        };
    }
    let source = match (a.tasks, job.source.take()) {
        (Some(path), _) => TaskSource::Frozen(read_tasks_jsonl(BufReader::new(File::open(path)?))?),
        (None, Some(s)) => s,
        (None, None) => {
            // The default prior is narrowed to what the model can take.
            let mut prior = TaskPriorConfig::default();
            prior.dim_range.1 = prior.dim_range.1.min(job.model.input_dim_max);
            prior.dim_range.0 = prior.dim_range.0.min(prior.dim_range.1);
            TaskSource::Prior(prior)
        }
    };
    let (params, log) = train(&job.model, &job.train, &source, job.seed)?;
    Checkpoint::new(&params, &job.train, job.seed, job.train.steps).save(&a.out)?;
    if let Some(path) = a.log_csv {
        let mut w = csv::Writer::from_path(path)?;
        for (step, ((&loss, &learning_rate), &grad_norm)) in
            log.losses.iter().zip(&log.learning_rates).zip(&log.grad_norms).enumerate()
        {
            w.serialize(LogRow { step, loss, learning_rate, grad_norm })?;
        }
        w.flush()?;
    }
    if let Some(last) = log.losses.last() {
        println!("final loss {last:.6}; checkpoint {}", a.out.display());
    }
    Ok(())
}

fn bo_cmd(a: BoArgs) -> Result<()> {
    let mut cfg: BoConfig = load_config(a.config.as_deref())?;
    if let Some(b) = a.benchmark {
        cfg.benchmark = b;
    }
    if let Some(s) = a.steps {
        cfg.n_steps = s;
    }
    if let Some(n) = a.n_init {
        cfg.n_init = n;
    }
    apply_method(a.method, &mut cfg.surrogate, &mut cfg.acq, &mut cfg.seeds, &mut cfg.output_dir, &mut cfg.record_timing)?;
    let records = run_bo(&cfg)?;
    for r in &records {
        match r.summary.final_regret {
            Some(g) => println!("seed {:>3}  regret {g:.6}", r.seed),
            None => println!("seed {:>3}  failed: {}", r.seed, r.summary.error.as_deref().unwrap_or("")),
        }
    }
    println!("{}", cfg.method_dir().join("summary.csv").display());
    failed_seeds(records.iter().map(|r| r.summary.status))
}

fn al_cmd(a: AlArgs) -> Result<()> {
    let mut cfg: AlConfig = load_config(a.config.as_deref())?;
    if let Some(n) = a.n_init {
        cfg.n_init = n;
    }
    if let Some(n) = a.pool {
        cfg.n_pool = n;
    }
    if let Some(n) = a.test {
        cfg.n_test = n;
    }
    if let Some(n) = a.acquisitions {
        cfg.n_acquisitions = n;
    }
    if let Some(n) = a.metric_every {
        cfg.metric_every = n;
    }
    if let Some(p) = a.p_hetero {
        cfg.prior.p_hetero = p;
    }
    apply_method(a.method, &mut cfg.surrogate, &mut cfg.acq, &mut cfg.seeds, &mut cfg.output_dir, &mut cfg.record_timing)?;
    let records = run_al(&cfg)?;
    for r in &records {
        match &r.summary.final_metrics {
            Some(m) => println!("seed {:>3}  rmse {:.5}  nll {:.5}  crps {:.5}", r.seed, m.rmse, m.gaussian_nll, m.crps),
            None => println!("seed {:>3}  failed: {}", r.seed, r.summary.error.as_deref().unwrap_or("")),
        }
    }
    println!("{}", cfg.method_dir().join("summary.csv").display());
    failed_seeds(records.iter().map(|r| r.summary.status))
}

/// Failed seeds are recorded and reported, and turn the exit code numeric.
fn failed_seeds(statuses: impl Iterator<Item = RunStatus>) -> Result<()> {
    let n = statuses.filter(|s| *s == RunStatus::Failed).count();
    if n > 0 {
        return Err(Error::Numeric(format!("{n} seed(s) failed; see the summary")));
    }
    Ok(())
}

fn teaser_cmd(a: TeaserArgs) -> Result<()> {
    println!("seed  epi_gap  tot_gap  tot_high_noise");
    for seed in a.seeds.0 {
        let dir = a.output_root.join("teaser1d").join(format!("seed-{seed}"));
        let r = teaser_demo(seed, Some(&dir))?;
        println!(
            "{seed:>4}  {:>7.2}  {:>7.2}  {:>14}",
            r.epistemic.gap_fraction, r.total.gap_fraction, r.total.high_noise_count
        );
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let scope = if a.available { RankScope::Available } else { RankScope::Common };
    let table = report(&a.output_root, scope)?;
    print!("{}", table.to_text());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTasks(a) => gen_tasks(a),
        Command::Train(a) => train_cmd(a),
        Command::BoRun(a) => bo_cmd(a),
        Command::AlRun(a) => al_cmd(a),
        Command::Teaser(a) => teaser_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3"), Ok(Seeds(vec![0, 1, 2])));
        assert_eq!(parse_seeds("4, 7,9"), Ok(Seeds(vec![4, 7, 9])));
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn config_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("bo.toml");
        std::fs::write(&t, "benchmark = \"hartmann6\"\nn_steps = 7\n[acq]\nrule = \"lcb\"\nsource = \"total\"\n").unwrap();
        let cfg: BoConfig = load_config(Some(&t)).unwrap();
        assert_eq!((cfg.benchmark.as_str(), cfg.n_steps, cfg.acq.rule), ("hartmann6", 7, AcqRule::Lcb));
        let j = dir.path().join("al.json");
        std::fs::write(&j, r#"{"n_pool": 50, "surrogate": {"kind": "gp-oracle", "known_noise": true}}"#).unwrap();
        let cfg: AlConfig = load_config(Some(&j)).unwrap();
        assert_eq!(cfg.n_pool, 50);
        assert_eq!(cfg.surrogate, SurrogateSpec::GpOracle { known_noise: true });
        std::fs::write(&t, "n_steps = \"many\"").unwrap();
        assert!(matches!(load_config::<BoConfig>(Some(&t)), Err(Error::Config(_))));
    }
}

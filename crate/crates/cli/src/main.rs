//! `sparse-node` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_node::data;
use sparse_node::eval::{evaluate, EvalError, FitReport, Metric};
use sparse_node::repro::{self, preset, run_table, ConfigError, RowOutcome, RunConfig, RunError, Table};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "SPARSE_NODE_OUT";

#[derive(Parser)]
#[command(name = "sparse-node", version, about = "Sparse, structure-preserving ODE identification")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate and save the dataset described by a config.
    Generate(Common),
    /// Train the configured model and write its report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Disable magnitude pruning.
        #[arg(long)]
        no_prune: bool,
        /// Override the iteration count.
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Compute metric series for a trained report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Report directory (defaults to the config's output).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Rollout horizon in seconds.
        #[arg(long)]
        horizon: Option<f64>,
        /// Metric to compute (mse, dEdt, dSdt, hamiltonian); repeatable.
        #[arg(long = "metric")]
        metrics: Vec<String>,
    },
    /// Run the desk-scale reproduction of a table.
    Repro {
        /// table1, table2, table3, duffing, ablation or baseline.
        table: String,
        /// Directory for per-row reports.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    config: PathBuf,
    /// Override the dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::WrongKind { .. } | EvalError::Options(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn system_label(cfg: &RunConfig) -> String {
    cfg.system_def().map(|d| d.name).unwrap_or_else(|_| "run".into())
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", c.config.display())))?;
    let mut cfg: RunConfig =
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {}", c.config.display(), e.message())))?;
    if let Some(d) = &c.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &c.output {
        cfg.output = Some(o.clone());
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output
        .clone()
        .unwrap_or_else(|| out_root().join(format!("{}-{}", system_label(cfg), cfg.model.kind.name())))
}

fn generate(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let dir = cfg.dataset.clone().unwrap_or_else(|| out_root().join(format!("{}-data", system_label(&cfg))));
    let ds = data::generate(&cfg.system_def()?, cfg.counts, cfg.seed).map_err(runtime)?;
    data::save(&ds, &dir).map_err(runtime)?;
    println!(
        "{}: {} states, {} samples (dt {}), {}/{}/{} trajectories -> {}",
        ds.meta.system.name,
        ds.n(),
        ds.num_samples(),
        ds.meta.dt,
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        dir.display()
    );
    Ok(())
}

fn train(common: &Common, no_prune: bool, n_max: Option<usize>) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if no_prune {
        cfg.train.prune_enabled = false;
    }
    if let Some(n) = n_max {
        cfg.train.n_max = n;
    }
    cfg.validate()?;
    let dir = output_dir(&cfg);
    let every = (cfg.train.n_max / 10).max(1);
    let out = repro::run(&cfg, |r, _| {
        if r.iter % every == 0 || r.iter + 1 == cfg.train.n_max {
            log::info!("iter {:>5}  loss {:.6e}  lr {:.3e}  nnz {}", r.iter, r.loss, r.lr, r.nnz);
        }
    })?;
    out.report.write(&dir).map_err(runtime)?;
    for line in &out.report.equations {
        println!("{line}");
    }
    if let Some(d) = out.report.delta {
        println!("delta = {d:.6}");
    }
    if let Some(s) = &out.report.score {
        println!("support_exact {}  max_abs_err {:.3e}  nnz {}", s.support_exact, s.max_abs_err, out.report.nnz());
    }
    println!("report -> {} ({:.1} s)", dir.display(), out.elapsed.as_secs_f64());
    Ok(())
}

fn eval(common: &Common, report: Option<&Path>, horizon: Option<f64>, metrics: &[String]) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if horizon.is_some() {
        cfg.eval.horizon = horizon;
    }
    if !metrics.is_empty() {
        cfg.eval.metrics = metrics
            .iter()
            .map(|m| Metric::parse(m).ok_or_else(|| Failure::Usage(format!("unknown metric `{m}`"))))
            .collect::<Result<_, _>>()?;
    }
    let dir = report.map_or_else(|| output_dir(&cfg), Path::to_path_buf);
    let mut rep = FitReport::read(&dir).map_err(runtime)?;
    cfg.eval.resolve_metrics(rep.kind())?;
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let series = evaluate(&rep, &ds, &cfg.eval)?;
    for (name, s) in &series {
        let m = Metric::parse(name).expect("evaluate only emits known metrics");
        let path = dir.join(m.file_name());
        s.write_tsv(&path).map_err(runtime)?;
        println!("{} ({} rows) -> {}", name, s.len(), path.display());
    }
    rep.metrics.extend(series);
    rep.write(&dir).map_err(runtime)?;
    Ok(())
}

fn print_row(table: Table, r: &RowOutcome) {
    println!("== {} / {} ({:.1} s)", table.name(), r.label, r.elapsed.as_secs_f64());
    for (a, b) in r.identified.iter().zip(r.truth.iter().chain(std::iter::repeat(&String::new()))) {
        println!("   identified  {a}");
        if !b.is_empty() {
            println!("   truth       {b}");
        }
    }
    for (k, v) in &r.stats {
        println!("   {k} = {v:.6e}");
    }
    for c in &r.checks {
        println!("   {c}");
    }
}

fn repro_cmd(name: &str, output: Option<&Path>) -> Result<(), Failure> {
    let table = Table::parse(name).ok_or_else(|| {
        let all: Vec<&str> = Table::ALL.iter().map(|t| t.name()).collect();
        Failure::Usage(format!("unknown table `{name}` (expected one of {})", all.join(", ")))
    })?;
    let root = output.map_or_else(|| out_root().join(table.name()), Path::to_path_buf);
    let rows = run_table(&preset(table), |r| print_row(table, r));
    let mut summary = String::from("row\tcheck\tvalue\tbound\tpass\n");
    for r in &rows {
        for c in &r.checks {
            summary.push_str(&format!("{}\t{}\t{:e}\t{}\t{}\n", r.label, c.name, c.value, c.bound, c.pass));
        }
        if let Some(out) = &r.output {
            out.report.write(&root.join(r.label.replace(' ', "_"))).map_err(runtime)?;
        }
    }
    fs::create_dir_all(&root).and_then(|_| fs::write(root.join("summary.tsv"), summary)).map_err(runtime)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.label.as_str()).collect();
    if failed.is_empty() {
        println!("{}: all {} rows pass", table.name(), rows.len());
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{}: failing rows: {}", table.name(), failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.cmd {
        Cmd::Generate(c) => generate(c),
        Cmd::Train { common, no_prune, n_max } => train(common, *no_prune, *n_max),
        Cmd::Eval { common, report, horizon, metrics } => eval(common, report.as_deref(), *horizon, metrics),
        Cmd::Repro { table, output } => repro_cmd(table, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

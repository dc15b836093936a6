use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmliv::datagen::{read_observations, write_observations};
use dmliv::estimation::Method;
use dmliv_harness::config::{load, ExperimentConfig};
use dmliv_harness::diagnose::run_diagnostics;
use dmliv_harness::report::{read_report, ReportRow};
use dmliv_harness::run::{cell_data, data_seed, run_cell_with_data, run_experiment_in, stage_cell, Cell};
use dmliv_harness::summary::{plot_data, summarize};
use dmliv_harness::Result;
use serde_json::json;

#[derive(Parser)]
#[command(name = "dmliv", version, about = "Run and summarize debiased IV regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one dataset as CSV plus a JSON sidecar.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Sample size; defaults to the first of `sample_sizes`.
        #[arg(long)]
        n: Option<usize>,
        /// Repetition index; defaults to the first of `seeds`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit and evaluate a single cell.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to the first of `methods`.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fit this CSV instead of generating data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the full grid, resuming any cells already in report.csv.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Orthogonality, relevance and rate checks; exits 1 when any fails.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-group statistics of a report.
    Summarize {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "method,N")]
        group_by: Vec<String>,
        /// Defaults to summary.csv next to the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready JSON (x = N, one series per method).
    PlotData {
        #[arg(long)]
        report: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config file, `--set` overrides, then the typed flags, in that order.
#[derive(Args)]
struct ConfigArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set fit.stage2.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long, value_delimiter = ',')]
    sample_sizes: Vec<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    iv_strength: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    root_seed: Option<u64>,
    /// Number of cross-fitting folds.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    action_grid: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn list<T: ToString>(items: &[T], quote: bool) -> String {
    let parts: Vec<String> = items.iter().map(|x| if quote { quoted(&x.to_string()) } else { x.to_string() }).collect();
    format!("[{}]", parts.join(", "))
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        let mut push = |k: &str, v: String| o.push(format!("{k}={v}"));
        if let Some(v) = &self.dataset {
            push("dataset", quoted(v));
        }
        if !self.methods.is_empty() {
            push("methods", list(&self.methods, true));
        }
        if let Some(v) = &self.estimator {
            push("estimator", quoted(v));
        }
        if !self.sample_sizes.is_empty() {
            push("sample_sizes", list(&self.sample_sizes, false));
        }
        if let Some(v) = self.rho {
            push("rho", format!("{v:?}"));
        }
        if let Some(v) = self.iv_strength {
            push("iv_strength", format!("{v:?}"));
        }
        if !self.seeds.is_empty() {
            push("seeds", list(&self.seeds, false));
        }
        if let Some(v) = self.root_seed {
            push("root_seed", v.to_string());
        }
        if let Some(v) = self.k {
            push("fit.k_folds", v.to_string());
        }
        if let Some(v) = self.mc_samples {
            push("fit.mc_samples", v.to_string());
        }
        if let Some(v) = self.action_grid {
            push("eval.action_grid", v.to_string());
        }
        if let Some(v) = self.jobs {
            push("jobs", v.to_string());
        }
        if let Some(v) = &self.output_dir {
            push("output_dir", quoted(&v.to_string_lossy()));
        }
        o
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        load(self.config.as_deref(), &self.overrides())
    }
}

fn print_row(row: &ReportRow) {
    let mse = row.mse_h.map_or("-".to_string(), |m| format!("{m:.4}"));
    let subopt = row.subopt.map_or("-".to_string(), |m| format!("{m:.4}"));
    let status = if row.is_ok() { "ok".to_string() } else { format!("error: {}", row.error) };
    eprintln!(
        "{} N={} seed={} mse_h={mse} subopt={subopt} {:.1}s {status}",
        row.method, row.n, row.seed, row.wall_clock_s
    );
}

fn generate(cfg: &ExperimentConfig, n: Option<usize>, seed: Option<u64>, out: &Path) -> Result<()> {
    let n = n.unwrap_or(cfg.sample_sizes[0]);
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let data = cfg.generate(n, data_seed(cfg, n, seed))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let meta = json!({
        "dataset": cfg.dataset,
        "n_samples": n,
        "rho": cfg.rho,
        "iv_strength": cfg.iv_strength,
        "semisynth": cfg.semisynth,
        "root_seed": cfg.root_seed,
        "seed_index": seed,
    });
    write_observations(&data, out, Some(data_seed(cfg, n, seed)), meta)?;
    eprintln!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn fit(
    cfg: &ExperimentConfig,
    method: Option<Method>,
    n: Option<usize>,
    seed: Option<u64>,
    data_path: Option<&Path>,
) -> Result<bool> {
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let method = method.unwrap_or(cfg.methods[0]);
    let (data, n) = match data_path {
        Some(p) => {
            let d = read_observations(p)?;
            let n = d.len();
            (d, n)
        }
        None => {
            let n = n.unwrap_or(cfg.sample_sizes[0]);
            (cell_data(cfg, &Cell { method, n, seed })?, n)
        }
    };
    let cell = Cell { method, n, seed };
    let dir = cfg.output_path_from_env().join("fit");
    std::fs::create_dir_all(&dir)?;
    cfg.write_lock(&dir)?;
    let res = run_cell_with_data(cfg, &cfg.digest(), &cell, &data);
    if let Some(est) = &res.estimate {
        let staged = stage_cell(&dir, &cell, est)?;
        std::fs::write(staged.join("row.json"), serde_json::to_string_pretty(&res.row)?)?;
    }
    print_row(&res.row);
    println!("{}", serde_json::to_string_pretty(&res.row)?);
    Ok(res.row.is_ok())
}

fn sweep(cfg: &ExperimentConfig) -> Result<bool> {
    let dir = cfg.output_path_from_env();
    let report = run_experiment_in(cfg, &dir, &mut print_row)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&json!({
            "format": "dmliv-report",
            "version": dmliv::VERSION,
            "config_digest": report.config_digest,
            "rows": report.rows.len(),
            "units": {
                "mse_h": "standardized outcome units",
                "reward_in_dist, reward_ood, subopt, subopt_ood, subopt_random": "raw outcome units",
                "reward_in_dist_std, reward_ood_std, subopt_std": "standardized outcome units",
            },
        }))?,
    )?;
    let summary = summarize(&report.rows, &["method", "N"])?;
    summary.write_csv(std::fs::File::create(dir.join("summary.csv"))?)?;
    std::fs::write(dir.join("plot.json"), serde_json::to_string_pretty(&plot_data(&report.rows)?)?)?;
    let errors = report.rows.iter().filter(|r| !r.is_ok()).count();
    eprintln!("{} rows ({} errors) in {}", report.rows.len(), errors, report.report_path.display());
    Ok(true)
}

fn diagnose(cfg: &ExperimentConfig) -> Result<bool> {
    let dir = cfg.output_path_from_env();
    std::fs::create_dir_all(&dir)?;
    cfg.write_lock(&dir)?;
    let rep = run_diagnostics(cfg, &dir);
    std::fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&rep)?)?;
    for c in &rep.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(rep.passed())
}

fn summarize_cmd(report: &Path, group_by: &[String], out: Option<&Path>) -> Result<bool> {
    let rows = read_report(report)?;
    let summary = summarize(&rows, group_by)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| report.with_file_name("summary.csv"));
    summary.write_csv(std::fs::File::create(&out)?)?;
    eprintln!("{} groups written to {}", summary.rows.len(), out.display());
    Ok(true)
}

fn plot_cmd(report: &Path, out: Option<&Path>) -> Result<bool> {
    let text = serde_json::to_string_pretty(&plot_data(&read_report(report)?)?)?;
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate { cfg, n, seed, out } => {
            cfg.resolve().and_then(|c| generate(&c, *n, *seed, out).map(|_| true))
        }
        Command::Fit { cfg, method, n, seed, data } => {
            cfg.resolve().and_then(|c| fit(&c, *method, *n, *seed, data.as_deref()))
        }
        Command::Sweep { cfg } => cfg.resolve().and_then(|c| sweep(&c)),
        Command::Diagnose { cfg } => cfg.resolve().and_then(|c| diagnose(&c)),
        Command::Summarize { report, group_by, out } => summarize_cmd(report, group_by, out.as_deref()),
        Command::PlotData { report, out } => plot_cmd(report, out.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

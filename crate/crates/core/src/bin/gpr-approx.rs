use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use gpr_approx::data::{generate_synthetic, write_dataset, SyntheticSpec};
use gpr_approx::harness::{
    compare_fixed_vs_learned, curves, emit_results, emit_trace, merge_shards, run_experiment, run_on_dataset,
    write_curves_csv, write_deltas_csv, ExperimentConfig, ExperimentReport, OutputFormat, Shard, TraceConfig,
    SCHEMA_VERSION,
};
use gpr_approx::{GprError, Result};

#[derive(Parser)]
#[command(
    name = "gpr-approx",
    version,
    about = "Approximate Gaussian process regression benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file (must carry "schema": 1).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker processes for independent grid cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Synth2,
    Synth8,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (train.csv, test.csv, manifest.json).
    Gen {
        #[command(flatten)]
        common: Common,
        /// Built-in recipe used when no --config is given.
        #[arg(long, value_enum, default_value = "synth2")]
        preset: Preset,
        #[arg(long, default_value_t = 8192)]
        n_train: usize,
        #[arg(long, default_value_t = 4096)]
        n_test: usize,
    },
    /// Run an experiment grid and write results.csv, report.json and curves.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run the grid twice, learned and at the generating hyperparameters,
        /// and also write paired deltas.
        #[arg(long)]
        compare: bool,
        #[arg(long, hide = true)]
        shard: Option<usize>,
        #[arg(long, hide = true)]
        shards: Option<usize>,
    },
    /// Aggregate one or more report.json files into curves.csv.
    Curves {
        #[command(flatten)]
        common: Common,
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
    },
    /// CG residual and test-error traces with SoD reference points.
    Trace {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenConfig {
    schema: u32,
    synthetic: SyntheticSpec,
}

fn require_config(common: &Common) -> Result<&Path> {
    common
        .config
        .as_deref()
        .ok_or_else(|| GprError::Config("--config is required".into()))
}

fn gen(common: &Common, preset: Preset, n_train: usize, n_test: usize) -> Result<ExitCode> {
    let mut spec = match &common.config {
        Some(path) => {
            let cfg: GenConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if cfg.schema != SCHEMA_VERSION {
                return Err(GprError::Config(format!("unsupported config schema {}", cfg.schema)));
            }
            cfg.synthetic
        }
        None => match preset {
            Preset::Synth2 => SyntheticSpec::synth2(n_train, n_test, 0),
            Preset::Synth8 => SyntheticSpec::synth8(n_train, n_test, 0),
        },
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let ds = generate_synthetic(&spec)?;
    let manifest = write_dataset(&ds, &common.out)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(ExitCode::SUCCESS)
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(require_config(common)?)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_for(report: &ExperimentReport) -> ExitCode {
    let failed = report.failed_cells();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", report.cells.len());
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

/// Runs shards in child processes of this binary and merges their reports.
fn run_sharded(common: &Common, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let config = require_config(common)?;
    let exe = std::env::current_exe()?;
    let scratch = common.out.join("shards");
    let mut children = Vec::new();
    for index in 0..common.jobs {
        let dir = scratch.join(format!("shard-{index}"));
        let mut cmd = Command::new(&exe);
        cmd.arg("run")
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(&dir)
            .arg("--shard")
            .arg(index.to_string())
            .arg("--shards")
            .arg(common.jobs.to_string())
            .arg("--seed")
            .arg(cfg.seed.to_string());
        children.push((dir, cmd.spawn()?));
    }
    let mut parts = Vec::new();
    for (dir, mut child) in children {
        let status = child.wait()?;
        let path = dir.join(OutputFormat::Json.file_name());
        match ExperimentReport::load_json(&path) {
            Ok(r) => parts.push(r),
            Err(e) => log::error!("worker in {} ({status}) left no report: {e}", dir.display()),
        }
    }
    let report = merge_shards(cfg, parts)?;
    std::fs::remove_dir_all(&scratch)?;
    Ok(report)
}

fn run(common: &Common, compare: bool, shard: Option<usize>, shards: Option<usize>) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    if let (Some(index), Some(count)) = (shard, shards) {
        if index >= count {
            return Err(GprError::Config(format!("shard {index} of {count}")));
        }
        let ds = cfg.resolve_dataset()?;
        let report = run_on_dataset(&cfg, &ds, Some(Shard { index, count }))?;
        emit_results(&report, &common.out, &[OutputFormat::Json])?;
        return Ok(ExitCode::SUCCESS);
    }
    if compare {
        let paired = compare_fixed_vs_learned(&cfg)?;
        emit_results(&paired.learned, &common.out.join("learned"), &OutputFormat::ALL)?;
        emit_results(&paired.fixed, &common.out.join("fixed"), &OutputFormat::ALL)?;
        let file = std::fs::File::create(common.out.join("deltas.csv"))?;
        write_deltas_csv(&paired.deltas, std::io::BufWriter::new(file))?;
        let failed = paired.learned.failed_cells() + paired.fixed.failed_cells();
        return Ok(if failed > 0 {
            ExitCode::from(2)
        } else {
            ExitCode::SUCCESS
        });
    }
    let report = if common.jobs > 1 {
        run_sharded(common, &cfg)?
    } else {
        run_experiment(&cfg)?
    };
    for path in emit_results(&report, &common.out, &OutputFormat::ALL)? {
        println!("wrote {}", path.display());
    }
    Ok(exit_for(&report))
}

fn curves_cmd(common: &Common, reports: &[PathBuf]) -> Result<ExitCode> {
    let mut cells = Vec::new();
    let mut n_test = None;
    for path in reports {
        let r = ExperimentReport::load_json(path)?;
        if n_test.is_some_and(|t| t != r.dataset.n_test) {
            return Err(GprError::Config("reports cover datasets of different test size".into()));
        }
        n_test = Some(r.dataset.n_test);
        cells.extend(r.cells);
    }
    std::fs::create_dir_all(&common.out)?;
    let path = common.out.join(OutputFormat::Curves.file_name());
    write_curves_csv(
        &curves(&cells, n_test.unwrap_or(0)),
        std::io::BufWriter::new(std::fs::File::create(&path)?),
    )?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn trace(common: &Common) -> Result<ExitCode> {
    let mut cfg = TraceConfig::load(require_config(common)?)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let report = gpr_approx::harness::run_trace(&cfg)?;
    for path in emit_trace(&report, &common.out)? {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Gen {
            common,
            preset,
            n_train,
            n_test,
        } => gen(common, *preset, *n_train, *n_test),
        Cmd::Run {
            common,
            compare,
            shard,
            shards,
        } => run(common, *compare, *shard, *shards),
        Cmd::Curves { common, reports } => curves_cmd(common, reports),
        Cmd::Trace { common } => trace(common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

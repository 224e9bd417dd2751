use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maharam_core::report::{emit, run, ExperimentConfig, ExperimentSpec};
use maharam_core::{LabError, Result};
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(name = "maharam", version, about = "Non-singular Bernoulli shift experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON). Without it the Z demo family is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for report.json and the CSV tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Kakutani and divergence partial sums.
    CheckKakutani {
        #[arg(long, allow_hyphen_values = true)]
        g: Option<String>,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<u32>>,
    },
    /// Conservativity partial sums.
    CheckConservativity {
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<u32>>,
        #[arg(long)]
        inner: Option<u32>,
    },
    /// KS distance of the standardized walk to N(0,1).
    Clt {
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Build the partial transformation φ and summarize it.
    BuildPhi {
        #[arg(long, allow_hyphen_values = true)]
        t: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        /// JSON list of element normal forms, e.g. '["0","1"]'.
        #[arg(long)]
        window: Option<String>,
    },
    /// Ratio-set coverage from return and witness scans.
    RatioSet {
        /// JSON list of [element, symbol] pairs, e.g. '[["0",0]]'.
        #[arg(long)]
        cylinder: Option<String>,
        /// Comma-separated or JSON list of targets.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        radius: Option<u32>,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Exact preservation check of the skew product on a finitely perturbed family.
    MaharamCheck {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        g: Option<Vec<String>>,
        #[arg(long)]
        cylinder: Option<String>,
    },
    /// Squared-deviation tail profile.
    L2Tail {
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<u32>>,
    },
    /// Run every experiment in the config.
    Report,
}

fn parse_json(s: &str, what: &str) -> Result<Value> {
    serde_json::from_str(s).map_err(|e| LabError::Parse(format!("{what}: {e}")))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let t = s.trim();
    if t.starts_with('[') {
        return serde_json::from_str(t).map_err(|e| LabError::Parse(format!("grid: {e}")));
    }
    t.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| LabError::Parse(format!("grid value {v:?}: {e}"))))
        .collect()
}

fn select(config: &ExperimentConfig, kind: &str) -> Result<ExperimentSpec> {
    match config.experiments.iter().find(|e| e.kind() == kind) {
        Some(e) => Ok(e.clone()),
        None => ExperimentSpec::default_for(kind),
    }
}

fn experiment_for(config: &ExperimentConfig, command: Command) -> Result<Option<ExperimentSpec>> {
    let spec = match command {
        Command::Report => return Ok(None),
        Command::CheckKakutani { g: og, radii: or } => {
            let mut e = select(config, "kakutani")?;
            if let ExperimentSpec::Kakutani { g, radii } = &mut e {
                if og.is_some() {
                    *g = og;
                }
                if let Some(r) = or {
                    *radii = r;
                }
            }
            e
        }
        Command::CheckConservativity { radii: or, inner: oi } => {
            let mut e = select(config, "conservativity")?;
            if let ExperimentSpec::Conservativity { radii, inner, .. } = &mut e {
                if let Some(r) = or {
                    *radii = r;
                }
                if let Some(i) = oi {
                    *inner = i;
                }
            }
            e
        }
        Command::Clt { n: on, samples: os } => {
            let mut e = select(config, "clt")?;
            if let ExperimentSpec::Clt { n, samples, .. } = &mut e {
                if let Some(v) = on {
                    *n = v;
                }
                if let Some(v) = os {
                    *samples = v;
                }
            }
            e
        }
        Command::BuildPhi { t: ot, eps: oe, window: ow } => {
            let mut e = select(config, "build-phi")?;
            if let ExperimentSpec::BuildPhi { t, eps, window, .. } = &mut e {
                if let Some(v) = ot {
                    *t = v;
                }
                if let Some(v) = oe {
                    *eps = v;
                }
                if let Some(w) = ow {
                    *window = serde_json::from_value(parse_json(&w, "window")?)
                        .map_err(|e| LabError::Parse(format!("window: {e}")))?;
                }
            }
            e
        }
        Command::RatioSet { cylinder: oc, grid: og, eps: oe, radius: or, seeds: os } => {
            let mut e = select(config, "ratio-set")?;
            if let ExperimentSpec::RatioSet { cylinder, grid, eps, radius, seeds, .. } = &mut e {
                if let Some(c) = oc {
                    *cylinder = parse_json(&c, "cylinder")?;
                }
                if let Some(g) = og {
                    *grid = parse_grid(&g)?;
                }
                if let Some(v) = oe {
                    *eps = v;
                }
                if let Some(v) = or {
                    *radius = v;
                }
                if let Some(v) = os {
                    *seeds = v;
                }
            }
            e
        }
        Command::MaharamCheck { g: og, cylinder: oc } => {
            let mut e = select(config, "maharam-check")?;
            if let ExperimentSpec::MaharamCheck { g, cylinder, .. } = &mut e {
                if let Some(v) = og {
                    *g = v;
                }
                if let Some(c) = oc {
                    *cylinder = parse_json(&c, "cylinder")?;
                }
            }
            e
        }
        Command::L2Tail { radii: or } => {
            let mut e = select(config, "l2-tail")?;
            if let ExperimentSpec::L2Tail { radii } = &mut e {
                if let Some(r) = or {
                    *radii = r;
                }
            }
            e
        }
    };
    Ok(Some(spec))
}

fn main_inner(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    }
    let mut config = match &cli.common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::z_demo(0),
    };
    if let Some(s) = cli.common.seed {
        config.master_seed = s;
    }
    if let Some(spec) = experiment_for(&config, cli.command)? {
        config.experiments = vec![spec];
    }
    let report = run(&config)?;
    let written = emit(&report, &cli.common.out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

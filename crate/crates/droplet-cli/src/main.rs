use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use droplet::experiments::{
    run, validate, write_bundle, ExperimentConfig, ExperimentError, ExperimentKind, KappaSource, VolumeRule,
};

/// Lattice-gas droplet experiments.
///
/// Every run subcommand starts from `--config` (or built-in defaults), applies
/// the flags given on the command line, and writes `summary.json`,
/// `table.csv` and `manifest.json` into `--out`. The exit code is 0 only if
/// all checks of the run pass, 1 if some check fails and 2 on errors.
#[derive(Parser)]
#[command(name = "droplet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Droplet variational problem at one Delta.
    Theory {
        #[command(flatten)]
        common: Common,
        /// Droplet parameter [default: 1.0]
        #[arg(long)]
        delta: Option<f64>,
        /// Dimension [default: 2]
        #[arg(long)]
        d: Option<u32>,
    },
    /// Exact canonical pressure between two rectangles.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Inner rectangle as WxH [default: 2x2]
        #[arg(long, value_parser = parse_rect)]
        inner: Option<[u32; 2]>,
        /// Outer rectangle as WxH [default: 2x3]
        #[arg(long, value_parser = parse_rect)]
        outer: Option<[u32; 2]>,
        /// Particle number [default: 2]
        #[arg(long)]
        n: Option<usize>,
        /// Chemical potential of the probability-ratio split [default: -2]
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<f64>,
    },
    /// Certified cluster-expansion pressure, checked against the transfer matrix.
    Cluster {
        #[command(flatten)]
        common: Common,
        /// Chemical potential [default: -4]
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<f64>,
        /// Largest polymer size [default: 8]
        #[arg(long)]
        n_max: Option<usize>,
        /// Transfer-matrix strip widths, comma separated [default: 8,...,14]
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<u32>>,
    },
    /// Particle-number rate function at fixed Delta over several box sizes.
    McLdp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        phase: PhaseArgs,
        /// Box sides, comma separated [default: 64,96,128]
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u32>>,
    },
    /// Event classification of canonical samples.
    McDroplet {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        phase: PhaseArgs,
        #[command(flatten)]
        droplet: DropletArgs,
    },
    /// Exterior gas density around the droplet.
    GtDensity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        phase: PhaseArgs,
        #[command(flatten)]
        droplet: DropletArgs,
    },
    /// Pressure above the droplet from an enlarged box.
    GtPressure {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        phase: PhaseArgs,
        #[command(flatten)]
        droplet: DropletArgs,
        /// |Lambda' \ Lambda| / v_L [default: 0.1]
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Check a config file without running it.
    Validate {
        /// TOML config
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: runs/<subcommand>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Inverse temperature [default: 3]
    #[arg(long)]
    beta: Option<f64>,
    /// Print the summary JSON to stdout
    #[arg(long)]
    print: bool,
}

#[derive(Args)]
struct PhaseArgs {
    /// Droplet parameter [default: 1.5]
    #[arg(long)]
    delta: Option<f64>,
    /// Fixed compressibility instead of a Monte Carlo estimate
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct DropletArgs {
    /// Box side [default: 48]
    #[arg(long)]
    l: Option<u32>,
    /// Droplet window half-width [default: 0.15]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Threshold constant K; calibrated when omitted
    #[arg(long)]
    k_log: Option<f64>,
    /// Independent chains [default: 8]
    #[arg(long)]
    chains: Option<usize>,
    /// Samples per chain [default: 25]
    #[arg(long)]
    samples: Option<usize>,
    /// Sweeps between samples [default: 40]
    #[arg(long)]
    thin: Option<usize>,
}

fn parse_rect(s: &str) -> Result<[u32; 2], String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(w)?, p(h)?])
}

fn base(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_toml(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::new(kind),
    };
    if cfg.kind != kind {
        return Err(ExperimentError::Invalid(vec![format!(
            "config is for {}, not {}",
            cfg.kind.name(),
            kind.name()
        )]));
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(b) = common.beta {
        cfg.beta = b;
    }
    Ok(cfg)
}

fn apply_phase(cfg: &mut ExperimentConfig, p: &PhaseArgs) {
    if let Some(delta) = p.delta {
        cfg.geometry.volume = VolumeRule::Delta { delta };
    }
    if let Some(kappa) = p.kappa {
        cfg.kappa = KappaSource::Value { kappa };
    }
}

fn apply_droplet(cfg: &mut ExperimentConfig, d: &DropletArgs) {
    if let Some(l) = d.l {
        cfg.geometry.l = l;
    }
    if let Some(e) = d.epsilon {
        cfg.droplet.epsilon = e;
    }
    if d.k_log.is_some() {
        cfg.droplet.k_log = d.k_log;
    }
    if let Some(c) = d.chains {
        cfg.budget.chains = c;
    }
    if let Some(s) = d.samples {
        cfg.budget.samples_per_chain = s;
    }
    if let Some(t) = d.thin {
        cfg.budget.thin_sweeps = t;
    }
}

fn build(cmd: &Command) -> Result<(ExperimentConfig, &Common), ExperimentError> {
    Ok(match cmd {
        Command::Theory { common, delta, d } => {
            let mut cfg = base(ExperimentKind::Theory, common)?;
            if common.config.is_none() {
                cfg.geometry.volume = VolumeRule::Delta { delta: 1.0 };
            }
            if let Some(delta) = delta {
                cfg.geometry.volume = VolumeRule::Delta { delta: *delta };
            }
            if let Some(d) = d {
                cfg.d = *d;
            }
            (cfg, common)
        }
        Command::Oracle { common, inner, outer, n, mu } => {
            let mut cfg = base(ExperimentKind::Oracle, common)?;
            if let Some(r) = inner {
                cfg.oracle.inner = *r;
            }
            if let Some(r) = outer {
                cfg.oracle.outer = *r;
            }
            if let Some(n) = n {
                cfg.oracle.n = *n;
            }
            if let Some(mu) = mu {
                cfg.oracle.mu = *mu;
            }
            (cfg, common)
        }
        Command::Cluster { common, mu, n_max, widths } => {
            let mut cfg = base(ExperimentKind::Cluster, common)?;
            if common.config.is_none() && common.beta.is_none() {
                cfg.beta = 1.0;
            }
            if let Some(mu) = mu {
                cfg.cluster.mu = *mu;
            }
            if let Some(n) = n_max {
                cfg.cluster.n_max = *n;
            }
            if let Some(w) = widths {
                cfg.cluster.widths = w.clone();
            }
            (cfg, common)
        }
        Command::McLdp { common, phase, sizes } => {
            let mut cfg = base(ExperimentKind::McLdp, common)?;
            apply_phase(&mut cfg, phase);
            if let Some(s) = sizes {
                cfg.geometry.sizes = s.clone();
            }
            (cfg, common)
        }
        Command::McDroplet { common, phase, droplet } => {
            let mut cfg = base(ExperimentKind::McDroplet, common)?;
            apply_phase(&mut cfg, phase);
            apply_droplet(&mut cfg, droplet);
            (cfg, common)
        }
        Command::GtDensity { common, phase, droplet } => {
            let mut cfg = base(ExperimentKind::GtDensity, common)?;
            apply_phase(&mut cfg, phase);
            apply_droplet(&mut cfg, droplet);
            (cfg, common)
        }
        Command::GtPressure { common, phase, droplet, eta } => {
            let mut cfg = base(ExperimentKind::GtPressure, common)?;
            apply_phase(&mut cfg, phase);
            apply_droplet(&mut cfg, droplet);
            if eta.is_some() {
                cfg.geometry.eta = *eta;
            } else if cfg.geometry.eta.is_none() {
                cfg.geometry.eta = Some(0.1);
            }
            (cfg, common)
        }
        Command::Validate { .. } => unreachable!("handled separately"),
    })
}

fn execute(cli: Cli) -> Result<bool, ExperimentError> {
    if let Command::Validate { config } = &cli.command {
        let cfg = ExperimentConfig::from_toml(&fs::read_to_string(config)?)?;
        let report = validate(&cfg);
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(report.is_valid());
    }
    let (cfg, common) = build(&cli.command)?;
    let out = run(&cfg)?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.kind.name()));
    let files = write_bundle(&out, &dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    if common.print {
        println!("{}", serde_json::to_string_pretty(&out)?);
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    for (name, ok) in &out.manifest.checks {
        eprintln!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(out.passed())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Config-driven runs with reproducibility manifests.
//!
//! A run is described by an [`ExperimentConfig`] (TOML), checked by
//! [`validate`], executed by [`run`] and written out by [`write_bundle`]
//! as `summary.json`, one CSV table and `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{self, ClusterError, KpMoments, ThetaTable};
use crate::lattice::{LatticeError, Region};
use crate::mc::droplet::{
    calibrate_k, derived_seed, droplet_experiment, ldp_check, pressure_difference, ChainBudget, DropletGeometry,
    DropletSummary, KCalibration, LdpTable, PressureReport,
};
use crate::mc::multicanonical::FlatHistogram;
use crate::mc::observables::{estimate_kappa_parallel, KappaMethod};
use crate::mc::McError;
use crate::oracle::{self, OracleError};
use crate::theory::{self, PhaseData, TheoryError, WindowReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Theory,
    Oracle,
    Cluster,
    McLdp,
    McDroplet,
    GtDensity,
    GtPressure,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Theory => "theory",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::Cluster => "cluster",
            ExperimentKind::McLdp => "mc-ldp",
            ExperimentKind::McDroplet => "mc-droplet",
            ExperimentKind::GtDensity => "gt-density",
            ExperimentKind::GtPressure => "gt-pressure",
        }
    }

    fn needs_phase(self) -> bool {
        matches!(self, ExperimentKind::McLdp | ExperimentKind::McDroplet | ExperimentKind::GtDensity | ExperimentKind::GtPressure)
    }
}

/// How the excess volume `v_L` is chosen for a box of side `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VolumeRule {
    /// `v_L` from the droplet parameter, with `N` rounded to the nearest integer.
    Delta { delta: f64 },
    /// `v_L = coefficient * L^exponent`.
    Power { coefficient: f64, exponent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub l: u32,
    /// Box sides of an LDP scan.
    pub sizes: Vec<u32>,
    pub volume: VolumeRule,
    /// Round a non-integer particle number instead of rejecting the rule.
    pub round_n: bool,
    /// `|Lambda' \ Lambda| / v_L` for pressure events.
    pub eta: Option<f64>,
    pub eta_max: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            l: 48,
            sizes: vec![64, 96, 128],
            volume: VolumeRule::Delta { delta: 1.5 },
            round_n: true,
            eta: None,
            eta_max: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KappaSource {
    Value { kappa: f64 },
    /// Bulk-window variance estimate in an `l x l` box.
    Mc { l: u32, sweeps: u64, chains: u64 },
}

impl Default for KappaSource {
    fn default() -> Self {
        KappaSource::Mc { l: 64, sweeps: 20_000, chains: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropletConfig {
    pub epsilon: f64,
    /// Fixed threshold constant; calibrated from a pilot when absent.
    pub k_log: Option<f64>,
    pub k_quantile: f64,
    pub k_samples: usize,
    pub pressure_sweeps: usize,
}

impl Default for DropletConfig {
    fn default() -> Self {
        DropletConfig { epsilon: 0.15, k_log: None, k_quantile: 0.999, k_samples: 4000, pressure_sweeps: 50_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub inner: [u32; 2],
    pub outer: [u32; 2],
    pub n: usize,
    pub mu: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { inner: [2, 2], outer: [2, 3], n: 2, mu: -2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub mu: f64,
    pub n_max: usize,
    /// Polymer sizes whose incompatibility sums are computed exactly in the KP check.
    pub kp_sizes: usize,
    /// Strip widths of the transfer-matrix cross-check; empty skips it.
    pub widths: Vec<u32>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { mu: -4.0, n_max: 8, kp_sizes: cluster::MAX_POLYMER_SIZE, widths: (8..=14).collect() }
    }
}

/// Pass thresholds of the checks each run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub identity: f64,
    pub subcritical_fraction: f64,
    pub unique_large_fraction: f64,
    pub gt_density_factor: [f64; 2],
    pub gt_pressure_factor: f64,
    pub ldp_relative: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity: 1e-10,
            subcritical_fraction: 0.95,
            unique_large_fraction: 0.9,
            gt_density_factor: [0.5, 1.5],
            gt_pressure_factor: 2.0,
            ldp_relative: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_d")]
    pub d: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub droplet: DropletConfig,
    #[serde(default)]
    pub kappa: KappaSource,
    #[serde(default)]
    pub budget: ChainBudget,
    #[serde(default)]
    pub flat_histogram: FlatHistogram,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_beta() -> f64 {
    3.0
}
fn default_d() -> u32 {
    2
}
fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            beta: default_beta(),
            d: default_d(),
            seed: default_seed(),
            geometry: GeometryConfig::default(),
            droplet: DropletConfig::default(),
            kappa: KappaSource::default(),
            budget: ChainBudget::default(),
            flat_histogram: FlatHistogram::default(),
            oracle: OracleConfig::default(),
            cluster: ClusterConfig::default(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn delta(&self) -> Option<f64> {
        match self.geometry.volume {
            VolumeRule::Delta { delta } => Some(delta),
            VolumeRule::Power { .. } => None,
        }
    }
}

/// Findings of [`validate`]; `errors` make a config unrunnable, `warnings` do not.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    /// Particle number per box side.
    pub particles: BTreeMap<u32, f64>,
    pub window: Option<WindowReport>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Phase data for geometry checks; a Monte Carlo `kappa` source is replaced by a short pilot.
fn geometry_phase(cfg: &ExperimentConfig) -> Result<(PhaseData, bool), ExperimentError> {
    let (kappa, pilot) = match cfg.kappa {
        KappaSource::Value { kappa } => (kappa, false),
        KappaSource::Mc { .. } => {
            let est = estimate_kappa_parallel(32, cfg.beta, KappaMethod::Variance, 2000, 1, derived_seed(cfg.seed, 1000))?;
            (est.kappa.mean, true)
        }
    };
    Ok((theory::onsager_phase_data(cfg.beta, kappa)?, pilot))
}

fn raw_particles(cfg: &ExperimentConfig, phase: &PhaseData, l: u32) -> f64 {
    let vol = (l as f64).powi(2);
    let v = match cfg.geometry.volume {
        VolumeRule::Delta { delta } => phase.v_for_delta(delta, vol),
        VolumeRule::Power { coefficient, exponent } => coefficient * (l as f64).powf(exponent),
    };
    phase.particles_for(v, vol)
}

pub fn validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let g = &cfg.geometry;
    if !(cfg.beta.is_finite() && cfg.beta > 0.0) {
        r.errors.push(format!("beta = {} must be positive", cfg.beta));
    }
    if cfg.d != 2 && cfg.kind != ExperimentKind::Theory {
        r.errors.push(format!("d = {}: the lattice model is two-dimensional", cfg.d));
    }
    if let Some(eta) = g.eta {
        if !(eta > 0.0 && eta <= g.eta_max) {
            r.errors.push(format!(
                "eta = {eta} violates the thermodynamic-limit constraint 0 < |Lambda' \\ Lambda| / v_L <= eta_0 = {}",
                g.eta_max
            ));
        }
    } else if cfg.kind == ExperimentKind::GtPressure {
        r.errors.push("gt-pressure needs geometry.eta".into());
    }
    if !(0.0..1.0).contains(&cfg.droplet.epsilon) || cfg.droplet.epsilon == 0.0 {
        r.errors.push(format!("epsilon = {} must lie in (0, 1)", cfg.droplet.epsilon));
    }
    if !(0.0..=1.0).contains(&cfg.budget.swap_mix) {
        r.errors.push(format!("swap_mix = {} outside [0, 1]", cfg.budget.swap_mix));
    }
    match &cfg.geometry.volume {
        VolumeRule::Delta { delta } if !(delta.is_finite() && *delta >= 0.0) => {
            r.errors.push(format!("delta = {delta} must be nonnegative"))
        }
        VolumeRule::Power { coefficient, exponent } if !(*coefficient > 0.0 && exponent.is_finite()) => {
            r.errors.push(format!("volume rule {coefficient} L^{exponent} is not positive"))
        }
        VolumeRule::Power { exponent, .. } => {
            // Tilde V = eta v_L must outgrow L^{2 (1 - 2/d + 1/(d+1))}
            let lower = 2.0 * (1.0 - 2.0 / cfg.d as f64 + 1.0 / (cfg.d as f64 + 1.0));
            if g.eta.is_some() && *exponent <= lower {
                r.errors.push(format!("v_L ~ L^{exponent} leaves tilde V below the window exponent {lower:.4}"));
            }
        }
        _ => {}
    }
    if cfg.kind.needs_phase() && cfg.beta > 0.0 && cfg.d == 2 {
        match geometry_phase(cfg) {
            Ok((phase, pilot)) => {
                if pilot {
                    r.warnings.push(format!("particle numbers use a pilot kappa = {:.3e}", phase.kappa));
                }
                let sides: Vec<u32> = match cfg.kind {
                    ExperimentKind::McLdp => g.sizes.clone(),
                    _ => vec![g.l],
                };
                if sides.is_empty() {
                    r.errors.push("geometry.sizes is empty".into());
                }
                for l in sides {
                    let n = raw_particles(cfg, &phase, l);
                    r.particles.insert(l, n);
                    if !(n.is_finite() && n >= 0.0 && n <= (l as f64).powi(2)) {
                        r.errors.push(format!("L = {l}: particle number {n:.3} is infeasible"));
                    } else if !g.round_n && (n - n.round()).abs() > 1e-9 {
                        r.errors.push(format!("L = {l}: the volume rule gives non-integer N = {n:.6}"));
                    }
                }
                if let Some(eta) = g.eta {
                    let vol = (g.l as f64).powi(2);
                    let n = raw_particles(cfg, &phase, g.l);
                    let v = phase.v_for_particles(n.round().max(0.0) as u64, vol);
                    let tilde = (eta * v).ceil().max(1.0);
                    match theory::window_check(vol, v.max(f64::MIN_POSITIVE), tilde, cfg.d) {
                        Ok(w) => {
                            if !w.above_lower {
                                r.warnings.push(format!(
                                    "tilde V = {tilde} is only {:.2} x V^{:.3} at L = {}",
                                    w.lower_ratio, w.exponent, g.l
                                ));
                            }
                            if !w.below_upper {
                                r.warnings.push(format!("tilde V = {tilde} is {:.2} x v_L (upper window)", w.upper_ratio));
                            }
                            r.window = Some(w);
                        }
                        Err(e) => r.errors.push(e.to_string()),
                    }
                }
            }
            Err(e) => r.errors.push(e.to_string()),
        }
    }
    if cfg.kind == ExperimentKind::Oracle {
        let o = &cfg.oracle;
        let fits = o.inner[0] <= o.outer[0] && o.inner[1] <= o.outer[1];
        if !fits || o.inner == o.outer {
            r.errors.push(format!("oracle inner {:?} is not strictly inside outer {:?}", o.inner, o.outer));
        }
        if o.n > (o.inner[0] * o.inner[1]) as usize {
            r.errors.push(format!("N = {} exceeds the inner region", o.n));
        }
    }
    if cfg.kind == ExperimentKind::McDroplet || cfg.kind == ExperimentKind::GtDensity {
        if cfg.delta().is_none() {
            r.warnings.push("droplet windows are evaluated at the Delta implied by the rounded N".into());
        }
    }
    r
}

/// Numbers written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Theory(TheoryOutcome),
    Oracle(OracleOutcome),
    Cluster(ClusterOutcome),
    McLdp { phase: PhaseData, table: LdpTable },
    McDroplet { phase: PhaseData, k: KSource, summary: DropletSummary },
    GtDensity { phase: PhaseData, k: KSource, summary: DropletSummary, ratio: Option<f64> },
    GtPressure { phase: PhaseData, report: PressureReport, droplet: DropletSummary, center: Option<f64>, ratio: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryOutcome {
    pub delta: f64,
    pub d: u32,
    pub delta_c: f64,
    pub lambda: Option<f64>,
    pub phi_star: f64,
    pub minimizers: Vec<f64>,
    pub bracket_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleOutcome {
    pub inner: [u32; 2],
    pub outer: [u32; 2],
    pub n: usize,
    pub pressure: f64,
    pub beta_p_l: f64,
    pub grand: f64,
    pub probability: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterOutcome {
    pub kp: cluster::KpReport,
    pub series: Option<cluster::SeriesValue>,
    pub wall_tension: Option<cluster::SeriesValue>,
    pub transfer_matrix: Option<oracle::PressureExtrapolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "from", rename_all = "kebab-case")]
pub enum KSource {
    Config { k_log: f64 },
    Calibrated(KCalibration),
}

impl KSource {
    fn k_log(&self) -> f64 {
        match self {
            KSource::Config { k_log } => *k_log,
            KSource::Calibrated(c) => c.k_log,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub tolerances: Tolerances,
    pub wall_clock_seconds: f64,
    pub threads: usize,
    pub checks: BTreeMap<String, bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub outcome: Outcome,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.manifest.checks.values().all(|&ok| ok)
    }
}

fn phase_data(cfg: &ExperimentConfig) -> Result<PhaseData, ExperimentError> {
    let kappa = match cfg.kappa {
        KappaSource::Value { kappa } => kappa,
        KappaSource::Mc { l, sweeps, chains } => {
            estimate_kappa_parallel(l, cfg.beta, KappaMethod::Variance, sweeps, chains, derived_seed(cfg.seed, 1000))?
                .kappa
                .mean
        }
    };
    Ok(theory::onsager_phase_data(cfg.beta, kappa)?)
}

fn k_source(cfg: &ExperimentConfig) -> Result<KSource, ExperimentError> {
    Ok(match cfg.droplet.k_log {
        Some(k_log) => KSource::Config { k_log },
        None => KSource::Calibrated(calibrate_k(
            cfg.geometry.l,
            cfg.beta,
            cfg.droplet.k_samples,
            10,
            cfg.droplet.k_quantile,
            derived_seed(cfg.seed, 2000),
        )?),
    })
}

fn droplet_geometry(cfg: &ExperimentConfig, phase: &PhaseData, l: u32) -> Result<DropletGeometry, ExperimentError> {
    let delta = match cfg.geometry.volume {
        VolumeRule::Delta { delta } => delta,
        VolumeRule::Power { .. } => {
            let vol = (l as f64).powi(2);
            let n = raw_particles(cfg, phase, l).round();
            phase.delta_of(phase.v_for_particles(n as u64, vol).max(0.0), vol)
        }
    };
    Ok(DropletGeometry::new(phase, l, delta)?)
}

fn ratio(measured: Option<f64>, center: Option<f64>) -> Option<f64> {
    Some(measured? / center?)
}

/// Validate and execute a config.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let report = validate(cfg);
    if !report.is_valid() {
        return Err(ExperimentError::Invalid(report.errors));
    }
    let t0 = Instant::now();
    let tol = &cfg.tolerances;
    let mut checks = BTreeMap::new();
    let outcome = match cfg.kind {
        ExperimentKind::Theory => {
            let delta = cfg.delta().unwrap_or(1.0);
            let sol = theory::phi_star(delta, cfg.d)?;
            let bracket_residual = match sol.lambda_delta {
                Some(_) => {
                    let (lhs, rhs) = theory::bracket_identity(delta, cfg.d)?;
                    Some(lhs - rhs)
                }
                None => None,
            };
            if let Some(res) = bracket_residual {
                checks.insert("bracket_identity".into(), res.abs() < tol.identity);
            }
            Outcome::Theory(TheoryOutcome {
                delta,
                d: cfg.d,
                delta_c: theory::delta_c(cfg.d)?,
                lambda: sol.lambda_delta,
                phi_star: sol.phi_star,
                minimizers: sol.minimizers,
                bracket_residual,
            })
        }
        ExperimentKind::Oracle => {
            let o = &cfg.oracle;
            let inner = Region::rectangle(o.inner[0], o.inner[1])?;
            let outer = Region::rectangle(o.outer[0], o.outer[1])?;
            let pressure = oracle::pressure_pl_exact(&inner, &outer, cfg.beta, o.n)?;
            let split = oracle::pressure_split(&inner, &outer, cfg.beta, o.mu, o.n)?;
            checks.insert("probability_ratio_identity".into(), split.residual().abs() < tol.identity);
            Outcome::Oracle(OracleOutcome {
                inner: o.inner,
                outer: o.outer,
                n: o.n,
                pressure,
                beta_p_l: split.beta_p_l,
                grand: split.grand,
                probability: split.probability,
                residual: split.residual(),
            })
        }
        ExperimentKind::Cluster => {
            let c = &cfg.cluster;
            let moments = KpMoments::new(cfg.beta, c.mu, c.kp_sizes)?;
            let kp = match moments.best(c.n_max) {
                Some(r) => r,
                None => moments.report(0.1, 1.0)?,
            };
            checks.insert("kp_certified".into(), kp.pass);
            let (series, wall_tension) = if kp.pass {
                let table = ThetaTable::new(cfg.beta, c.mu, c.n_max)?;
                (Some(cluster::pressure_series(&table, &kp)?), Some(cluster::wall_tension_series(&table, &kp)?))
            } else {
                (None, None)
            };
            let transfer_matrix =
                if c.widths.is_empty() { None } else { Some(oracle::extrapolate_pinf(&c.widths, cfg.beta, c.mu)?) };
            if let (Some(s), Some(tm)) = (&series, &transfer_matrix) {
                checks.insert("series_vs_transfer_matrix".into(), (s.value - tm.beta_p_inf).abs() <= s.tail + tm.fit_error);
            }
            Outcome::Cluster(ClusterOutcome { kp, series, wall_tension, transfer_matrix })
        }
        ExperimentKind::McLdp => {
            let phase = phase_data(cfg)?;
            let delta = match cfg.delta() {
                Some(d) => d,
                None => droplet_geometry(cfg, &phase, cfg.geometry.sizes[0])?.delta,
            };
            let table = ldp_check(&cfg.geometry.sizes, delta, &phase, &cfg.flat_histogram, cfg.seed)?;
            checks.insert("ldp_monotone".into(), table.monotone);
            checks.insert("ldp_extrapolation".into(), table.relative_gap <= tol.ldp_relative);
            Outcome::McLdp { phase, table }
        }
        ExperimentKind::McDroplet | ExperimentKind::GtDensity => {
            let phase = phase_data(cfg)?;
            let k = k_source(cfg)?;
            let geom = droplet_geometry(cfg, &phase, cfg.geometry.l)?;
            let summary = droplet_experiment(&geom, &phase, cfg.droplet.epsilon, k.k_log(), &cfg.budget, cfg.seed)?;
            if cfg.kind == ExperimentKind::McDroplet {
                if geom.lambda.is_some() {
                    checks.insert("unique_large_fraction".into(), summary.unique_large_fraction >= tol.unique_large_fraction);
                } else {
                    checks.insert("subcritical_fraction".into(), summary.subcritical_fraction >= tol.subcritical_fraction);
                }
                Outcome::McDroplet { phase, k, summary }
            } else {
                let r = ratio(summary.median_excess_density, summary.gt_density_center);
                let [lo, hi] = tol.gt_density_factor;
                checks.insert("gt_density_factor".into(), r.is_some_and(|r| lo <= r && r <= hi));
                Outcome::GtDensity { phase, k, summary, ratio: r }
            }
        }
        ExperimentKind::GtPressure => {
            let phase = phase_data(cfg)?;
            let k = k_source(cfg)?;
            let geom = droplet_geometry(cfg, &phase, cfg.geometry.l)?;
            let eta = cfg.geometry.eta.expect("validated");
            let droplet = droplet_experiment(&geom, &phase, cfg.droplet.epsilon, k.k_log(), &cfg.budget, cfg.seed)?;
            let report =
                pressure_difference(&geom, &phase, eta, &cfg.budget, cfg.droplet.pressure_sweeps, derived_seed(cfg.seed, 3000))?;
            let center = droplet.median_volume.map(|v| theory::gt_pressure(&phase, v, 0.0).map(|b| b.center)).transpose()?;
            let r = ratio(Some(report.beta_dp.mean), center);
            let f = tol.gt_pressure_factor;
            checks.insert("gt_pressure_factor".into(), r.is_some_and(|r| r >= 1.0 / f && r <= f));
            Outcome::GtPressure { phase, report, droplet, center, ratio: r }
        }
    };
    let seeds = match cfg.kind {
        ExperimentKind::Theory | ExperimentKind::Oracle | ExperimentKind::Cluster => vec![],
        ExperimentKind::McLdp => (0..cfg.geometry.sizes.len() as u64).map(|i| derived_seed(cfg.seed, i)).collect(),
        _ => (0..cfg.budget.chains as u64).map(|c| derived_seed(cfg.seed, c)).collect(),
    };
    Ok(RunOutput {
        manifest: RunManifest {
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: cfg.kind,
            seeds,
            tolerances: tol.clone(),
            wall_clock_seconds: t0.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            checks,
        },
        outcome,
        warnings: report.warnings,
    })
}

#[derive(Serialize)]
struct LdpCsvRow {
    config_hash: String,
    l: u32,
    n: usize,
    v_l: f64,
    delta: f64,
    log_p: f64,
    log_p_error: f64,
    rate: f64,
    rate_error: f64,
}

#[derive(Serialize)]
struct EventCsvRow<'a> {
    config_hash: &'a str,
    sample: usize,
    verdict: &'a str,
    max_diameter: f64,
    large_external: usize,
    volume: Option<usize>,
    exterior_density: Option<f64>,
}

#[derive(Serialize)]
struct ValueCsvRow<'a> {
    config_hash: &'a str,
    quantity: &'a str,
    value: f64,
}

fn event_rows<'a>(hash: &'a str, s: &'a DropletSummary) -> impl Iterator<Item = EventCsvRow<'a>> {
    s.verdicts.iter().enumerate().map(move |(i, v)| {
        let (verdict, stats) = match &v.kind {
            crate::contour::EventKind::SubcriticalOk => ("subcritical-ok", None),
            crate::contour::EventKind::UniqueLarge { stats } => ("unique-large", Some(stats)),
            crate::contour::EventKind::Anomalous => ("anomalous", None),
        };
        EventCsvRow {
            config_hash: hash,
            sample: i,
            verdict,
            max_diameter: v.max_diameter,
            large_external: v.large_external,
            volume: stats.map(|s| s.volume),
            exterior_density: stats.map(|s| s.exterior_density),
        }
    })
}

/// Write `summary.json`, `table.csv` and `manifest.json` into `dir`.
pub fn write_bundle(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;
    let hash = out.manifest.config_hash.as_str();
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(out)?)?;
    let manifest = dir.join("manifest.json");
    fs::write(&manifest, serde_json::to_string_pretty(&out.manifest)?)?;
    let table = dir.join("table.csv");
    let mut w = csv::Writer::from_path(&table)?;
    match &out.outcome {
        Outcome::McLdp { table, .. } => {
            for r in &table.rows {
                w.serialize(LdpCsvRow {
                    config_hash: hash.to_string(),
                    l: r.geometry.l,
                    n: r.geometry.n,
                    v_l: r.geometry.v_l,
                    delta: r.geometry.delta,
                    log_p: r.log_p,
                    log_p_error: r.log_p_error,
                    rate: r.rate,
                    rate_error: r.rate_error,
                })?;
            }
        }
        Outcome::McDroplet { summary, .. } | Outcome::GtDensity { summary, .. } | Outcome::GtPressure { droplet: summary, .. } => {
            for row in event_rows(hash, summary) {
                w.serialize(row)?;
            }
        }
        Outcome::Theory(t) => {
            let mut vals = vec![("delta", t.delta), ("delta_c", t.delta_c), ("phi_star", t.phi_star)];
            if let Some(l) = t.lambda {
                vals.push(("lambda", l));
            }
            for (q, v) in vals {
                w.serialize(ValueCsvRow { config_hash: hash, quantity: q, value: v })?;
            }
        }
        Outcome::Oracle(o) => {
            for (q, v) in [("pressure", o.pressure), ("grand", o.grand), ("probability", o.probability), ("residual", o.residual)] {
                w.serialize(ValueCsvRow { config_hash: hash, quantity: q, value: v })?;
            }
        }
        Outcome::Cluster(c) => {
            if let Some(s) = &c.series {
                w.serialize(ValueCsvRow { config_hash: hash, quantity: "beta_p_series", value: s.value })?;
                w.serialize(ValueCsvRow { config_hash: hash, quantity: "series_tail", value: s.tail })?;
            }
            if let Some(tm) = &c.transfer_matrix {
                w.serialize(ValueCsvRow { config_hash: hash, quantity: "beta_p_transfer", value: tm.beta_p_inf })?;
                w.serialize(ValueCsvRow { config_hash: hash, quantity: "transfer_fit_error", value: tm.fit_error })?;
            }
        }
    }
    w.flush()?;
    Ok(vec![summary, table, manifest])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_config_reports_lambda() {
        let cfg = ExperimentConfig::from_toml("kind = \"theory\"\n[geometry.volume]\nrule = \"delta\"\ndelta = 1.0\n").unwrap();
        let out = run(&cfg).unwrap();
        let Outcome::Theory(t) = &out.outcome else { panic!() };
        assert!((t.lambda.unwrap() - 0.70151).abs() < 1e-5);
        assert!(out.passed());
    }

    #[test]
    fn oracle_config_reproduces_small_pressure() {
        let cfg = ExperimentConfig { beta: 1.0, ..ExperimentConfig::new(ExperimentKind::Oracle) };
        let out = run(&cfg).unwrap();
        let Outcome::Oracle(o) = &out.outcome else { panic!() };
        assert!((o.pressure - 0.37086).abs() < 1e-5);
        assert!(out.passed());
    }

    #[test]
    fn zero_eta_is_rejected_with_the_constraint_named() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::GtPressure);
        cfg.geometry.eta = Some(0.0);
        let r = validate(&cfg);
        assert!(!r.is_valid());
        assert!(r.errors[0].contains("thermodynamic-limit"), "{:?}", r.errors);
        assert!(matches!(run(&cfg), Err(ExperimentError::Invalid(_))));
    }

    #[test]
    fn window_rules() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::GtPressure);
        cfg.geometry.eta = Some(0.05);
        cfg.geometry.volume = VolumeRule::Power { coefficient: 1.0, exponent: 4.0 / 3.0 };
        assert!(validate(&cfg).is_valid());
        cfg.geometry.eta = Some(1.0);
        assert!(!validate(&cfg).is_valid());
        cfg.geometry.eta = Some(0.05);
        cfg.geometry.volume = VolumeRule::Power { coefficient: 1.0, exponent: 0.5 };
        assert!(!validate(&cfg).is_valid());
    }

    #[test]
    fn non_integer_particle_rule_is_rejected() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::McDroplet);
        cfg.geometry.round_n = false;
        cfg.geometry.volume = VolumeRule::Power { coefficient: 1.0, exponent: 4.0 / 3.0 };
        let r = validate(&cfg);
        assert!(r.errors.iter().any(|e| e.contains("non-integer")), "{:?}", r.errors);
        cfg.geometry.round_n = true;
        assert!(validate(&cfg).is_valid());
    }

    #[test]
    fn hash_is_stable_under_reparse() {
        let cfg = ExperimentConfig::new(ExperimentKind::McLdp);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert!(ExperimentConfig::from_toml("kind = \"theory\"\nbogus = 1\n").is_err());
    }
}

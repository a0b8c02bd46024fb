//! Canonical droplet experiments: event frequencies, exterior density,
//! pressure above the droplet and the particle-number rate function.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::multicanonical::{multicanonical_pn, FlatHistogram, LdpEstimate};
use super::{chain_rng, planted_droplet, random_config, Chain, EstimatorReport, McError};
use crate::contour::{self, EventKind, EventSpec, EventVerdict};
use crate::lattice::{BoundaryCondition, Config, Region, Site, MU_COEXISTENCE};
use crate::theory::{self, PhaseData};

/// Seed of chain `c` in a run seeded with `seed`.
pub fn derived_seed(seed: u64, c: u64) -> u64 {
    seed ^ c.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Square box with the particle number realizing a target droplet parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropletGeometry {
    pub l: u32,
    pub sites: usize,
    pub n: usize,
    /// Excess volume implied by the integer `n`.
    pub v_l: f64,
    pub delta_target: f64,
    /// Droplet parameter of the rounded geometry.
    pub delta: f64,
    pub lambda: Option<f64>,
}

impl DropletGeometry {
    pub fn new(phase: &PhaseData, l: u32, delta_target: f64) -> Result<Self, McError> {
        let sites = (l as usize) * (l as usize);
        let vol = sites as f64;
        let v = phase.v_for_delta(delta_target, vol);
        let n = phase.particles_for(v, vol).round().max(0.0) as usize;
        if n > sites {
            return Err(McError::ParticleCount { n, max: sites });
        }
        let v_l = phase.v_for_particles(n as u64, vol);
        let delta = phase.delta_of(v_l.max(0.0), vol);
        let lambda = theory::lambda_delta(delta, 2).ok().flatten();
        Ok(DropletGeometry { l, sites, n, v_l, delta_target, delta, lambda })
    }

    pub fn region(&self) -> Result<Arc<Region>, McError> {
        Ok(Arc::new(Region::square(self.l)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainBudget {
    pub chains: usize,
    pub samples_per_chain: usize,
    pub thermalize_sweeps: usize,
    pub thin_sweeps: usize,
    pub swap_mix: f64,
}

impl Default for ChainBudget {
    fn default() -> Self {
        ChainBudget { chains: 8, samples_per_chain: 25, thermalize_sweeps: 4000, thin_sweeps: 40, swap_mix: 0.5 }
    }
}

/// Initial state: a planted droplet of `lambda v_L` sites when the theory predicts one, else uniform.
fn start_config(geom: &DropletGeometry, phase: &PhaseData, rng: &mut impl rand::Rng) -> Result<Config, McError> {
    let region = geom.region()?;
    match geom.lambda {
        Some(lam) => {
            let size = ((lam * geom.v_l * phase.rho_l).round() as usize).min(geom.n);
            planted_droplet(region, geom.n, size, rng)
        }
        None => random_config(region, geom.n, rng),
    }
}

/// Threshold constant `K` from the largest contour diameters of a grand-canonical pilot at coexistence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCalibration {
    pub l: u32,
    pub beta: f64,
    pub quantile: f64,
    /// `quantile` of the largest contour diameter per sample.
    pub diameter_quantile: f64,
    pub k_log: f64,
    pub samples: usize,
}

pub fn calibrate_k(l: u32, beta: f64, samples: usize, thin: usize, quantile: f64, seed: u64) -> Result<KCalibration, McError> {
    let region = Arc::new(Region::square(l)?);
    let mut g = Chain::grand(Config::empty(region), BoundaryCondition::Vacant, beta, MU_COEXISTENCE, seed, 0)?;
    g.sweeps(1000);
    let mut diam: Vec<f64> = (0..samples)
        .map(|_| {
            g.sweeps(thin);
            contour::extract_contours(&g.config()).iter().map(|c| c.diameter).fold(0.0, f64::max)
        })
        .collect();
    diam.sort_by(|a, b| a.partial_cmp(b).expect("finite diameters"));
    let idx = ((quantile * samples as f64).ceil() as usize).clamp(1, samples) - 1;
    let dq = diam[idx];
    // the threshold sits just above the observed quantile
    let k_log = (dq + 0.5) / (l as f64).ln();
    Ok(KCalibration { l, beta, quantile, diameter_quantile: dq, k_log, samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropletSummary {
    pub geometry: DropletGeometry,
    pub epsilon: f64,
    pub k_log: f64,
    pub threshold: f64,
    pub samples: usize,
    pub subcritical_fraction: f64,
    pub unique_large_fraction: f64,
    pub anomalous_fraction: f64,
    /// `|V(gamma_0)|` of every unique-large sample.
    pub droplet_volumes: Vec<usize>,
    /// `rho_ext - rho_g` of every unique-large sample.
    pub excess_densities: Vec<f64>,
    pub median_volume: Option<f64>,
    pub median_excess_density: Option<f64>,
    /// Density band center at the median droplet volume.
    pub gt_density_center: Option<f64>,
    /// Fraction of unique-large samples inside the density band.
    pub gt_density_fraction: Option<f64>,
    pub verdicts: Vec<EventVerdict>,
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Canonical chains at the geometry's `N`, classified every `thin_sweeps` sweeps.
pub fn droplet_experiment(
    geom: &DropletGeometry,
    phase: &PhaseData,
    epsilon: f64,
    k_log: f64,
    budget: &ChainBudget,
    seed: u64,
) -> Result<DropletSummary, McError> {
    let spec = EventSpec { phase: phase.clone(), v_l: geom.v_l, epsilon, k_log, pressure: None };
    let per_chain: Vec<Vec<EventVerdict>> = (0..budget.chains as u64)
        .into_par_iter()
        .map(|c| {
            let s = derived_seed(seed, c);
            let start = start_config(geom, phase, &mut chain_rng(s, 100))?;
            let mut chain = Chain::canonical(start, phase.beta, budget.swap_mix, s, 0)?;
            chain.sweeps(budget.thermalize_sweeps);
            (0..budget.samples_per_chain)
                .map(|_| {
                    chain.sweeps(budget.thin_sweeps);
                    Ok(contour::classify_event(&chain.config(), &spec)?)
                })
                .collect()
        })
        .collect::<Result<_, McError>>()?;
    let verdicts: Vec<EventVerdict> = per_chain.into_iter().flatten().collect();
    let total = verdicts.len() as f64;
    let frac = |f: &dyn Fn(&EventKind) -> bool| verdicts.iter().filter(|v| f(&v.kind)).count() as f64 / total;
    let mut droplet_volumes = Vec::new();
    let mut excess_densities = Vec::new();
    let mut in_band = 0usize;
    for v in &verdicts {
        if let EventKind::UniqueLarge { stats } = &v.kind {
            droplet_volumes.push(stats.volume);
            excess_densities.push(stats.exterior_density - phase.rho_g);
            in_band += v.checks.get("gt_density").copied().unwrap_or(false) as usize;
        }
    }
    let median_volume = median(&droplet_volumes.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let gt_density_center = median_volume
        .map(|v| theory::gt_density(phase, v, 0.0).map(|b| b.center))
        .transpose()?;
    let threshold = k_log * (geom.l as f64).ln();
    Ok(DropletSummary {
        geometry: geom.clone(),
        epsilon,
        k_log,
        threshold,
        samples: verdicts.len(),
        subcritical_fraction: frac(&|k| matches!(k, EventKind::SubcriticalOk)),
        unique_large_fraction: frac(&|k| matches!(k, EventKind::UniqueLarge { .. })),
        anomalous_fraction: frac(&|k| matches!(k, EventKind::Anomalous)),
        median_excess_density: median(&excess_densities),
        gt_density_fraction: (!droplet_volumes.is_empty()).then(|| in_band as f64 / droplet_volumes.len() as f64),
        droplet_volumes,
        excess_densities,
        median_volume,
        gt_density_center,
        verdicts,
    })
}

/// `Lambda` plus a centered run of `k` sites directly above its top row.
pub fn extended_region(l: u32, k: u32) -> Result<(Arc<Region>, Arc<Region>, Vec<Site>), McError> {
    let inner = Arc::new(Region::square(l)?);
    let x0 = (l as i32 - k as i32) / 2;
    let extra: Vec<Site> = (0..k as i32).map(|i| Site::new(x0 + i, l as i32)).collect();
    let outer = Arc::new(Region::from_sites(inner.sites().iter().copied().chain(extra.iter().copied()))?);
    Ok((inner, outer, extra))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureReport {
    pub geometry: DropletGeometry,
    pub eta: f64,
    /// `|Lambda' \ Lambda|`.
    pub added_sites: usize,
    /// Canonical `log P(added sites all vacant)` in `Lambda'` at the geometry's `N`.
    pub log_empty_canonical: EstimatorReport,
    /// Grand-canonical `log P(added sites all vacant)` in `Lambda'` at coexistence.
    pub log_empty_grand: EstimatorReport,
    /// `beta p_L`, equal to `-log_empty_canonical / |V~|`.
    pub beta_p_l: EstimatorReport,
    /// `(1/|V~|) log(P_{Lambda'}(N) / P_Lambda(N))`, the estimate of `beta (p_L - p_inf)`.
    pub beta_dp: EstimatorReport,
}

fn log_empty(chains: Vec<Chain>, extra: &[usize], sweeps: usize, thermalize: usize, seed: u64) -> Result<EstimatorReport, McError> {
    let reps: Vec<EstimatorReport> = chains
        .into_par_iter()
        .map(|mut ch| {
            ch.sweeps(thermalize);
            let xs: Vec<f64> = (0..sweeps)
                .map(|_| {
                    ch.sweep();
                    extra.iter().all(|&i| !ch.occupied(i)) as u8 as f64
                })
                .collect();
            EstimatorReport::from_series(&xs, seed, 0)
        })
        .collect::<Result<_, _>>()?;
    let p = EstimatorReport::combine(&reps).ok_or(McError::TooFewSamples(0))?;
    if p.mean <= 0.0 {
        return Err(McError::TooFewSamples(0));
    }
    Ok(EstimatorReport { mean: p.mean.ln(), std_error: p.std_error / p.mean, ..p })
}

/// Pressure above the droplet from the vacancy probability of the added sites.
pub fn pressure_difference(
    geom: &DropletGeometry,
    phase: &PhaseData,
    eta: f64,
    budget: &ChainBudget,
    sweeps: usize,
    seed: u64,
) -> Result<PressureReport, McError> {
    let k = (eta * geom.v_l).ceil().max(1.0) as u32;
    let (_, outer, extra) = extended_region(geom.l, k)?;
    let idx: Vec<usize> = extra.iter().map(|s| outer.index_of(*s).expect("added site")).collect();
    let mut canon = Vec::with_capacity(budget.chains);
    let mut grand = Vec::with_capacity(budget.chains);
    for c in 0..budget.chains as u64 {
        let s = derived_seed(seed, c);
        let start = start_config(geom, phase, &mut chain_rng(s, 100))?;
        // same particles, embedded in the larger region
        let occupied: Vec<Site> = start.occupied_sites();
        let cfg = Config::from_sites(outer.clone(), &occupied)?;
        canon.push(Chain::canonical(cfg, phase.beta, budget.swap_mix, s, 0)?);
        grand.push(Chain::grand(
            Config::empty(outer.clone()),
            BoundaryCondition::Vacant,
            phase.beta,
            MU_COEXISTENCE,
            s,
            1,
        )?);
    }
    let log_empty_canonical = log_empty(canon, &idx, sweeps, budget.thermalize_sweeps, seed)?;
    let log_empty_grand = log_empty(grand, &idx, sweeps, budget.thermalize_sweeps, seed)?;
    let kk = k as f64;
    let beta_p_l = EstimatorReport {
        mean: -log_empty_canonical.mean / kk,
        std_error: log_empty_canonical.std_error / kk,
        ..log_empty_canonical.clone()
    };
    let beta_dp = EstimatorReport {
        mean: (log_empty_grand.mean - log_empty_canonical.mean) / kk,
        std_error: log_empty_grand.std_error.hypot(log_empty_canonical.std_error) / kk,
        ..log_empty_canonical.clone()
    };
    Ok(PressureReport {
        geometry: geom.clone(),
        eta,
        added_sites: k as usize,
        log_empty_canonical,
        log_empty_grand,
        beta_p_l,
        beta_dp,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub geometry: DropletGeometry,
    pub log_p: f64,
    pub log_p_error: f64,
    /// `-log P / sqrt(v_L)`.
    pub rate: f64,
    pub rate_error: f64,
    pub estimate: LdpEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpTable {
    pub delta_target: f64,
    pub rows: Vec<LdpRow>,
    /// `w1 Phi*` at the target.
    pub limit: f64,
    pub monotone: bool,
    /// Intercept of `rate = r_inf + b / sqrt(v_L)`.
    pub extrapolated: f64,
    pub slope: f64,
    pub relative_gap: f64,
}

/// Window start: three standard deviations below the typical particle number.
fn window_start(phase: &PhaseData, sites: usize) -> usize {
    let vol = sites as f64;
    (phase.rho_g * vol - 3.0 * (phase.kappa * vol).sqrt()).floor().max(0.0) as usize
}

/// Large-deviation rate of the particle number at fixed `Delta` over several box sizes.
pub fn ldp_check(ls: &[u32], delta_target: f64, phase: &PhaseData, params: &FlatHistogram, seed: u64) -> Result<LdpTable, McError> {
    let rows: Vec<LdpRow> = ls
        .par_iter()
        .enumerate()
        .map(|(i, &l)| {
            let geom = DropletGeometry::new(phase, l, delta_target)?;
            let lo = window_start(phase, geom.sites).min(geom.n);
            let est = multicanonical_pn(geom.region()?, phase.beta, MU_COEXISTENCE, (lo, geom.n), params, derived_seed(seed, i as u64))?;
            let (log_p, log_p_error) = est.log_p_at(geom.n).expect("target inside window");
            let sv = geom.v_l.sqrt();
            Ok(LdpRow { geometry: geom, log_p, log_p_error, rate: -log_p / sv, rate_error: log_p_error / sv, estimate: est })
        })
        .collect::<Result<_, McError>>()?;
    let sol = theory::phi_star(delta_target, 2)?;
    let limit = phase.w1 * sol.phi_star;
    let monotone = rows.windows(2).all(|w| w[1].rate <= w[0].rate) || rows.windows(2).all(|w| w[1].rate >= w[0].rate);
    // weighted least squares of rate against 1 / sqrt(v)
    let pts: Vec<(f64, f64, f64)> =
        rows.iter().map(|r| (r.geometry.v_l.sqrt().recip(), r.rate, r.rate_error.max(1e-9).powi(-2))).collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let extrapolated = my - slope * mx;
    Ok(LdpTable {
        delta_target,
        rows,
        limit,
        monotone,
        extrapolated,
        slope,
        relative_gap: (extrapolated - limit).abs() / limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phase() -> PhaseData {
        theory::onsager_phase_data(3.0, 0.004).unwrap()
    }

    #[test]
    fn geometry_rounds_to_integer_particles() {
        let g = DropletGeometry::new(&phase(), 48, 1.5).unwrap();
        let p = phase();
        assert!((p.particles_for(g.v_l, g.sites as f64) - g.n as f64).abs() < 1e-9);
        assert!((g.delta - 1.5).abs() < 0.1);
        assert!(g.lambda.unwrap() > 2.0 / 3.0);
        let s = DropletGeometry::new(&p, 48, 0.5).unwrap();
        assert!(s.lambda.is_none());
    }

    #[test]
    fn extended_region_adds_a_centered_run() {
        let (inner, outer, extra) = extended_region(6, 2).unwrap();
        assert_eq!(outer.len(), 38);
        assert_eq!(extra, vec![Site::new(2, 6), Site::new(3, 6)]);
        assert!(inner.is_subset_of(&outer));
        // the run replaces two top boundary sites with the two sites above it
        assert_eq!(outer.boundary().len(), inner.boundary().len());
    }

    #[test]
    fn planted_droplet_is_found() {
        let p = phase();
        let g = DropletGeometry::new(&p, 32, 1.5).unwrap();
        let cfg = start_config(&g, &p, &mut chain_rng(1, 0)).unwrap();
        let spec = EventSpec { phase: p.clone(), v_l: g.v_l, epsilon: 0.3, k_log: 0.6, pressure: None };
        let v = contour::classify_event(&cfg, &spec).unwrap();
        assert!(v.large_external >= 1);
        assert_eq!(cfg.particle_count(), g.n);
    }
}

//! Thermodynamic observables estimated from grand-canonical chains.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::stats::batch_means;
use super::{Chain, EstimatorReport, McError};
use crate::contour;
use crate::lattice::{beta_critical, BoundaryCondition, Config, Region, MU_COEXISTENCE};

/// Density and particle-number variance of a grand-canonical run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcSummary {
    pub density: EstimatorReport,
    /// `Var(N) / |region|` with a batch-means error.
    pub n_variance_per_site: EstimatorReport,
}

/// Grand-canonical Metropolis run, one sample per sweep after `thermalize` sweeps.
pub fn gc_run(
    region: Arc<Region>,
    beta: f64,
    mu: f64,
    bc: BoundaryCondition,
    thermalize: u64,
    sweeps: u64,
    seed: u64,
) -> Result<(Chain, GcSummary), McError> {
    let mut chain = Chain::grand(Config::empty(region.clone()), bc, beta, mu, seed, 0)?;
    chain.sweeps(thermalize as usize);
    let v = region.len() as f64;
    let ns: Vec<f64> = (0..sweeps)
        .map(|_| {
            chain.sweep();
            chain.particle_count() as f64
        })
        .collect();
    let dens: Vec<f64> = ns.iter().map(|n| n / v).collect();
    let density = EstimatorReport::from_series(&dens, seed, 0)?;
    let (var, err) = batch_means(&ns, 16, |b| {
        let m = b.iter().sum::<f64>() / b.len() as f64;
        b.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b.len() - 1) as f64 / v
    })?;
    let n_variance_per_site =
        EstimatorReport { mean: var, std_error: err, tau_int: density.tau_int, n_samples: ns.len(), seed, stream: 0 };
    Ok((chain, GcSummary { density, n_variance_per_site }))
}

/// Grand-canonical frequency of every particle number, one sample per sweep.
pub fn gc_pn(region: Arc<Region>, beta: f64, mu: f64, thermalize: u64, sweeps: u64, seed: u64) -> Result<Vec<EstimatorReport>, McError> {
    let mut chain = Chain::grand(Config::empty(region.clone()), BoundaryCondition::Vacant, beta, mu, seed, 0)?;
    chain.sweeps(thermalize as usize);
    let ns: Vec<usize> = (0..sweeps)
        .map(|_| {
            chain.sweep();
            chain.particle_count()
        })
        .collect();
    (0..=region.len())
        .map(|n| {
            let xs: Vec<f64> = ns.iter().map(|&m| (m == n) as u8 as f64).collect();
            EstimatorReport::from_series(&xs, seed, 0)
        })
        .collect()
}

/// One line of the observable stream written by canonical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u64,
    pub n: usize,
    pub energy: f64,
    pub largest_contour_volume: usize,
}

/// Canonical run recording an [`Observation`] every `thin` sweeps.
pub fn canonical_run(
    config: Config,
    beta: f64,
    swap_mix: f64,
    samples: usize,
    thin: usize,
    seed: u64,
    stream: u64,
) -> Result<(Chain, Vec<Observation>), McError> {
    let mut chain = Chain::canonical(config, beta, swap_mix, seed, stream)?;
    let mut obs = Vec::with_capacity(samples);
    for _ in 0..samples {
        chain.sweeps(thin);
        let largest = contour::extract_contours(&chain.config()).iter().map(|c| c.volume()).max().unwrap_or(0);
        obs.push(Observation {
            step: chain.steps(),
            n: chain.particle_count(),
            energy: -(chain.bonds() as f64),
            largest_contour_volume: largest,
        });
    }
    Ok((chain, obs))
}

/// Chi-square test that two samplers produce the same distribution over labelled states.
pub fn chi_square_same(a: &HashMap<u64, u64>, b: &HashMap<u64, u64>) -> (f64, usize, f64) {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    let (ka, kb) = ((nb as f64 / na as f64).sqrt(), (na as f64 / nb as f64).sqrt());
    let mut keys: Vec<u64> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let mut stat = 0.0;
    let mut dof = 0usize;
    for k in keys {
        let (x, y) = (*a.get(&k).unwrap_or(&0) as f64, *b.get(&k).unwrap_or(&0) as f64);
        if x + y > 0.0 {
            stat += (ka * x - kb * y).powi(2) / (x + y);
            dof += 1;
        }
    }
    let dof = dof.saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat);
    (stat, dof, p)
}

/// Compare grand-canonical samples conditioned on `N = n` with a canonical chain at `n`.
pub fn conditional_consistency(
    region: Arc<Region>,
    beta: f64,
    mu: f64,
    n: usize,
    samples: usize,
    thin: usize,
    seed: u64,
) -> Result<(f64, usize, f64), McError> {
    let key = |c: &Chain| c.occupancy().iter().enumerate().fold(0u64, |m, (i, &o)| m | (o as u64) << i);
    let mut gc = Chain::grand(Config::empty(region.clone()), BoundaryCondition::Vacant, beta, mu, seed, 0)?;
    gc.sweeps(100);
    let mut a: HashMap<u64, u64> = HashMap::new();
    let mut got = 0;
    while got < samples {
        gc.sweeps(thin);
        if gc.particle_count() == n {
            *a.entry(key(&gc)).or_insert(0) += 1;
            got += 1;
        }
    }
    let start = super::random_config(region, n, gc.rng_mut())?;
    let mut can = Chain::canonical(start, beta, 0.5, seed, 1)?;
    can.sweeps(100);
    let mut b: HashMap<u64, u64> = HashMap::new();
    for _ in 0..samples {
        can.sweeps(thin);
        *b.entry(key(&can)).or_insert(0) += 1;
    }
    Ok(chi_square_same(&a, &b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KappaMethod {
    /// `Var(N_W) / |W|` over a central window.
    Variance,
    /// Sum of truncated correlations out to an l-infinity radius.
    CorrSum { radius: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kappa: EstimatorReport,
    pub bulk_density: EstimatorReport,
    pub method: KappaMethod,
}

/// Window of the central half of an `l x l` box, as `(lo, hi)` in both coordinates.
fn bulk_window(l: u32) -> (usize, usize) {
    let l = l as usize;
    (l / 4, l - l / 4)
}

/// Compressibility `kappa` of the gas at coexistence, from an `l x l` box with vacant boundary.
pub fn estimate_kappa(l: u32, beta: f64, method: KappaMethod, sweeps: u64, seed: u64) -> Result<KappaEstimate, McError> {
    if beta != 0.0 && beta <= beta_critical() {
        return Err(McError::NotCoexisting(beta));
    }
    let region = Arc::new(Region::square(l)?);
    let mut chain = Chain::grand(Config::empty(region), BoundaryCondition::Vacant, beta, MU_COEXISTENCE, seed, 0)?;
    chain.sweeps(500);
    let (lo, hi) = bulk_window(l);
    let lu = l as usize;
    let w = hi - lo;
    let mut dens = Vec::with_capacity(sweeps as usize);
    let mut counts = Vec::with_capacity(sweeps as usize);
    // corr-sum accumulators per sample: mean n_c S_c, mean n_c, mean S_c
    let mut a_s = Vec::new();
    let mut b_s = Vec::new();
    let mut c_s = Vec::new();
    let mut prefix = vec![0u32; (lu + 1) * (lu + 1)];
    for _ in 0..sweeps {
        chain.sweep();
        let occ = chain.occupancy();
        let mut n_w = 0usize;
        for y in lo..hi {
            for x in lo..hi {
                n_w += occ[y * lu + x] as usize;
            }
        }
        dens.push(n_w as f64 / (w * w) as f64);
        counts.push(n_w as f64);
        if let KappaMethod::CorrSum { radius } = method {
            let r = radius as usize;
            for y in 0..lu {
                for x in 0..lu {
                    prefix[(y + 1) * (lu + 1) + x + 1] = occ[y * lu + x] as u32 + prefix[y * (lu + 1) + x + 1]
                        + prefix[(y + 1) * (lu + 1) + x]
                        - prefix[y * (lu + 1) + x];
                }
            }
            let box_sum = |x0: usize, y0: usize, x1: usize, y1: usize| {
                (prefix[y1 * (lu + 1) + x1] + prefix[y0 * (lu + 1) + x0]
                    - prefix[y0 * (lu + 1) + x1]
                    - prefix[y1 * (lu + 1) + x0]) as f64
            };
            let (clo, chi) = (lo.max(r), hi.min(lu - r));
            let (mut a, mut b, mut c, mut m) = (0.0, 0.0, 0.0, 0.0);
            for y in clo..chi {
                for x in clo..chi {
                    let s = box_sum(x - r, y - r, x + r + 1, y + r + 1);
                    let n0 = occ[y * lu + x] as f64;
                    a += n0 * s;
                    b += n0;
                    c += s;
                    m += 1.0;
                }
            }
            a_s.push(a / m);
            b_s.push(b / m);
            c_s.push(c / m);
        }
    }
    let bulk_density = EstimatorReport::from_series(&dens, seed, 0)?;
    if beta > beta_critical() && bulk_density.mean > 0.5 {
        return Err(McError::PhaseContamination { density: bulk_density.mean });
    }
    let batches = 20;
    let (mean, err) = match method {
        KappaMethod::Variance => batch_means(&counts, batches, |b| {
            let m = b.iter().sum::<f64>() / b.len() as f64;
            b.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b.len() - 1) as f64 / (w * w) as f64
        })?,
        KappaMethod::CorrSum { .. } => {
            let idx: Vec<f64> = (0..a_s.len()).map(|i| i as f64).collect();
            batch_means(&idx, batches, |b| {
                let (i0, i1) = (b[0] as usize, b[b.len() - 1] as usize + 1);
                let k = (i1 - i0) as f64;
                let a = a_s[i0..i1].iter().sum::<f64>() / k;
                let bb = b_s[i0..i1].iter().sum::<f64>() / k;
                let c = c_s[i0..i1].iter().sum::<f64>() / k;
                a - bb * c
            })?
        }
    };
    Ok(KappaEstimate {
        kappa: EstimatorReport { mean, std_error: err, tau_int: bulk_density.tau_int, n_samples: dens.len(), seed, stream: 0 },
        bulk_density,
        method,
    })
}

/// `kappa` from several independent chains run in parallel.
pub fn estimate_kappa_parallel(
    l: u32,
    beta: f64,
    method: KappaMethod,
    sweeps: u64,
    chains: u64,
    seed: u64,
) -> Result<KappaEstimate, McError> {
    let runs: Vec<KappaEstimate> = (0..chains)
        .into_par_iter()
        .map(|c| estimate_kappa(l, beta, method, sweeps, seed.wrapping_add(c.wrapping_mul(0x9E37_79B9_7F4A_7C15))))
        .collect::<Result<_, _>>()?;
    let kappa = EstimatorReport::combine(&runs.iter().map(|r| r.kappa.clone()).collect::<Vec<_>>()).expect("chains > 0");
    let bulk_density =
        EstimatorReport::combine(&runs.iter().map(|r| r.bulk_density.clone()).collect::<Vec<_>>()).expect("chains > 0");
    Ok(KappaEstimate { kappa: EstimatorReport { seed, ..kappa }, bulk_density: EstimatorReport { seed, ..bulk_density }, method })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tau2Report {
    /// Sum over distance from the wall of `rho_wall(l) - rho_bulk`, tail included.
    pub tau2: EstimatorReport,
    pub bulk_density: EstimatorReport,
    /// `(distance, rho_bulk - rho_wall(distance), standard error)`.
    pub depletion: Vec<(usize, f64, f64)>,
    /// Extrapolated contribution beyond the last distance (already in `tau2`).
    pub tail: f64,
    pub decay_rate: Option<f64>,
    /// Profile sums from each of the four walls separately.
    pub wall_sums: [f64; 4],
    pub wall_spread: f64,
}

/// Wall coefficient of the density profile in an `l x l` box with vacant boundary.
pub fn estimate_tau2(beta: f64, mu: f64, l: u32, sweeps: u64, seed: u64) -> Result<Tau2Report, McError> {
    if beta <= beta_critical() {
        return Err(McError::NotCoexisting(beta));
    }
    let lu = l as usize;
    let depth = (lu / 4).max(1);
    let region = Arc::new(Region::square(l)?);
    let mut chain = Chain::grand(Config::empty(region), BoundaryCondition::Vacant, beta, mu, seed, 0)?;
    chain.sweeps(500);
    let (clo, chi) = bulk_window(l);
    let cols = chi - clo;
    // per sample: bulk density, and per wall per distance the density
    let mut bulk = Vec::with_capacity(sweeps as usize);
    let mut prof = vec![vec![Vec::with_capacity(sweeps as usize); depth]; 4];
    for _ in 0..sweeps {
        chain.sweep();
        let occ = chain.occupancy();
        let at = |x: usize, y: usize| occ[y * lu + x] as f64;
        let mut nb = 0.0;
        for y in clo..chi {
            for x in clo..chi {
                nb += at(x, y);
            }
        }
        bulk.push(nb / (cols * cols) as f64);
        for d in 0..depth {
            let (mut s, mut n, mut w, mut e) = (0.0, 0.0, 0.0, 0.0);
            for t in clo..chi {
                s += at(t, d);
                n += at(t, lu - 1 - d);
                w += at(d, t);
                e += at(lu - 1 - d, t);
            }
            for (k, v) in [s, n, w, e].into_iter().enumerate() {
                prof[k][d].push(v / cols as f64);
            }
        }
    }
    let bulk_density = EstimatorReport::from_series(&bulk, seed, 0)?;
    let mut depletion = Vec::with_capacity(depth);
    for d in 0..depth {
        let series: Vec<f64> = (0..bulk.len())
            .map(|t| bulk[t] - (0..4).map(|k| prof[k][d][t]).sum::<f64>() / 4.0)
            .collect();
        let r = EstimatorReport::from_series(&series, seed, 0)?;
        depletion.push((d + 1, r.mean, r.std_error));
    }
    // exponential tail from the resolved points
    let resolved: Vec<(f64, f64)> =
        depletion.iter().filter(|(_, m, e)| *m > 2.0 * e && *m > 0.0).map(|(d, m, _)| (*d as f64, m.ln())).collect();
    let (tail, decay_rate) = if resolved.len() >= 2 {
        let n = resolved.len() as f64;
        let (sx, sy) = resolved.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / n, sy / n);
        let sxx: f64 = resolved.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = resolved.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        if slope >= 0.0 {
            return Err(McError::TailNotDecaying { slope });
        }
        let r = slope.exp();
        let last = depletion.last().expect("depth >= 1");
        let fit_last = (my + slope * (last.0 as f64 - mx)).exp();
        (fit_last * r / (1.0 - r), Some(-slope))
    } else {
        (0.0, None)
    };
    let total: Vec<f64> = (0..bulk.len())
        .map(|t| (0..depth).map(|d| (0..4).map(|k| prof[k][d][t]).sum::<f64>() / 4.0 - bulk[t]).sum())
        .collect();
    let mut tau2 = EstimatorReport::from_series(&total, seed, 0)?;
    tau2.mean -= tail;
    let mut wall_sums = [0.0; 4];
    for (k, ws) in wall_sums.iter_mut().enumerate() {
        *ws = (0..depth).map(|d| prof[k][d].iter().sum::<f64>() / bulk.len() as f64).sum::<f64>()
            - depth as f64 * bulk_density.mean;
    }
    let mean_wall = wall_sums.iter().sum::<f64>() / 4.0;
    let wall_spread = wall_sums.iter().map(|w| (w - mean_wall).abs()).fold(0.0, f64::max);
    Ok(Tau2Report { tau2, bulk_density, depletion, tail, decay_rate, wall_sums, wall_spread })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::CountTable;

    #[test]
    fn kappa_of_independent_bits() {
        let k = estimate_kappa(16, 0.0, KappaMethod::Variance, 4000, 3).unwrap();
        assert!(k.kappa.within(0.25, 4.0), "{:?}", k.kappa);
        let c = estimate_kappa(16, 0.0, KappaMethod::CorrSum { radius: 2 }, 4000, 3).unwrap();
        assert!(c.kappa.within(0.25, 4.0), "{:?}", c.kappa);
        assert_eq!(estimate_kappa(8, 1.0, KappaMethod::Variance, 10, 1), Err(McError::NotCoexisting(1.0)));
    }

    #[test]
    fn gc_variance_matches_enumeration() {
        let r = Arc::new(Region::square(4).unwrap());
        let t = CountTable::enumerate(&r, &BoundaryCondition::Vacant).unwrap();
        let p = t.distribution(1.2, -1.0);
        let m: f64 = p.iter().enumerate().map(|(n, q)| n as f64 * q).sum();
        let var: f64 = p.iter().enumerate().map(|(n, q)| (n as f64 - m).powi(2) * q).sum();
        let (_, s) = gc_run(r, 1.2, -1.0, BoundaryCondition::Vacant, 200, 100_000, 21).unwrap();
        assert!(s.density.within(m / 16.0, 3.0), "{:?} vs {}", s.density, m / 16.0);
        assert!(s.n_variance_per_site.within(var / 16.0, 4.0), "{:?} vs {}", s.n_variance_per_site, var / 16.0);
    }

    #[test]
    fn tau2_vanishes_for_empty_lattice() {
        let r = estimate_tau2(3.0, -40.0, 16, 200, 1).unwrap();
        assert_eq!(r.tau2.mean, 0.0);
        assert_eq!(r.tail, 0.0);
    }

    #[test]
    fn chi_square_detects_difference() {
        let a: HashMap<u64, u64> = [(0, 500), (1, 500)].into();
        let b: HashMap<u64, u64> = [(0, 700), (1, 300)].into();
        assert!(chi_square_same(&a, &b).2 < 1e-6);
        assert!(chi_square_same(&a, &a).2 > 0.99);
    }
}

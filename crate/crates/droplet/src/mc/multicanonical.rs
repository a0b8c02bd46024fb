//! Flat-histogram estimates of the particle-number distribution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{chain_rng, random_config, Chain, Ensemble, EstimatorReport, McError};
use crate::lattice::{BoundaryCondition, Config, Region};

/// Budget and schedule for weight learning and the production run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatHistogram {
    pub ln_f_initial: f64,
    pub ln_f_final: f64,
    /// Required `min / mean` of the visit histogram before `ln f` is halved.
    pub flatness: f64,
    pub check_sweeps: u64,
    pub max_learning_sweeps: u64,
    pub production_sweeps: u64,
    pub batches: usize,
    /// Grand-canonical sweeps used to normalize a partial window.
    pub anchor_sweeps: u64,
}

impl Default for FlatHistogram {
    fn default() -> Self {
        FlatHistogram {
            ln_f_initial: 1.0,
            ln_f_final: 1e-5,
            flatness: 0.8,
            check_sweeps: 20,
            max_learning_sweeps: 200_000,
            production_sweeps: 20_000,
            batches: 16,
            anchor_sweeps: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpEstimate {
    pub beta: f64,
    pub mu: f64,
    pub n_lo: usize,
    pub n_hi: usize,
    /// `log P(N)` for `N = n_lo..=n_hi`.
    pub log_p: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Sum of `exp(log_p)` over the window.
    pub window_mass: f64,
    /// Grand-canonical frequency of the window used for normalization (1 for the full range).
    pub anchor: Option<EstimatorReport>,
    pub learning_sweeps: u64,
    pub final_flatness: f64,
    pub seed: u64,
}

impl LdpEstimate {
    pub fn log_p_at(&self, n: usize) -> Option<(f64, f64)> {
        if n < self.n_lo || n > self.n_hi {
            return None;
        }
        Some((self.log_p[n - self.n_lo], self.std_error[n - self.n_lo]))
    }

    /// Largest `|sum exp(log_p) - 1|`-style excess allowed by the error bars, as a check value.
    pub fn mass_excess(&self) -> f64 {
        let err: f64 = self
            .log_p
            .iter()
            .zip(&self.std_error)
            .map(|(l, e)| (l.exp() * e).powi(2))
            .sum::<f64>()
            .sqrt();
        self.window_mass - 1.0 - 3.0 * err
    }
}

fn flatness(h: &[u64]) -> f64 {
    let mean = h.iter().sum::<u64>() as f64 / h.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    *h.iter().min().unwrap() as f64 / mean
}

/// Wang-Landau learning of `log_weights`, ending with the `1/t` schedule.
pub fn learn_weights(chain: &mut Chain, params: &FlatHistogram) -> Result<(u64, f64), McError> {
    let (n_lo, n_hi) = match chain.ensemble() {
        Ensemble::Multicanonical { n_lo, n_hi, .. } => (*n_lo, *n_hi),
        _ => return Err(McError::Window { lo: 0, hi: 0, sites: chain.region().len() }),
    };
    let bins = n_hi - n_lo + 1;
    let sites = chain.region().len();
    if bins == 1 {
        return Ok((0, 1.0));
    }
    let mut hist = vec![0u64; bins];
    let mut ln_f = params.ln_f_initial;
    let mut one_over_t = false;
    let mut sweeps = 0u64;
    let mut attempts = 0u64;
    let mut last_flat = 0.0;
    while ln_f > params.ln_f_final {
        for _ in 0..params.check_sweeps {
            for _ in 0..sites {
                chain.step();
                chain.bump_log_weight(ln_f);
                hist[chain.particle_count() - n_lo] += 1;
                attempts += 1;
            }
            if one_over_t {
                ln_f = bins as f64 / attempts as f64;
            }
        }
        sweeps += params.check_sweeps;
        last_flat = flatness(&hist);
        if !one_over_t && last_flat >= params.flatness {
            ln_f /= 2.0;
            hist.iter_mut().for_each(|h| *h = 0);
            if ln_f < bins as f64 / attempts as f64 {
                one_over_t = true;
            }
        }
        if sweeps >= params.max_learning_sweeps {
            return Err(McError::NotFlat { sweeps, flatness: last_flat });
        }
    }
    Ok((sweeps, last_flat))
}

/// Estimate `log P(N)` on `n_lo..=n_hi` for a region with vacant boundary.
pub fn multicanonical_pn(
    region: Arc<Region>,
    beta: f64,
    mu: f64,
    window: (usize, usize),
    params: &FlatHistogram,
    seed: u64,
) -> Result<LdpEstimate, McError> {
    let (n_lo, n_hi) = window;
    if n_lo > n_hi || n_hi > region.len() {
        return Err(McError::Window { lo: n_lo, hi: n_hi, sites: region.len() });
    }
    let bins = n_hi - n_lo + 1;
    let mut rng = chain_rng(seed, 0);
    let start = random_config(region.clone(), n_lo, &mut rng)?;
    let ens = Ensemble::Multicanonical { beta, mu, n_lo, n_hi, log_weights: vec![0.0; bins] };
    let mut chain = Chain::new(start, BoundaryCondition::Vacant, ens, seed, 1)?;
    let (learning_sweeps, final_flatness) = learn_weights(&mut chain, params)?;
    let w = match chain.ensemble() {
        Ensemble::Multicanonical { log_weights, .. } => log_weights.clone(),
        _ => unreachable!(),
    };
    let sites = region.len();
    let per_batch = (params.production_sweeps / params.batches as u64).max(1);
    let mut batch_p: Vec<Vec<f64>> = Vec::with_capacity(params.batches);
    for _ in 0..params.batches {
        let mut h = vec![0u64; bins];
        for _ in 0..per_batch {
            for _ in 0..sites {
                chain.step();
                h[chain.particle_count() - n_lo] += 1;
            }
        }
        let shift = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = h.iter().zip(&w).map(|(&c, &wi)| c as f64 * (wi - shift).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        batch_p.push(p);
    }
    let nb = params.batches as f64;
    let mut log_p = Vec::with_capacity(bins);
    let mut std_error = Vec::with_capacity(bins);
    for k in 0..bins {
        let m = batch_p.iter().map(|p| p[k]).sum::<f64>() / nb;
        if m <= 0.0 {
            return Err(McError::NotFlat { sweeps: learning_sweeps, flatness: 0.0 });
        }
        let v = batch_p.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (nb - 1.0);
        log_p.push(m.ln());
        std_error.push((v / nb).sqrt() / m);
    }
    let anchor = if n_lo == 0 && n_hi == region.len() {
        None
    } else {
        let rep = window_frequency(region.clone(), beta, mu, window, params.anchor_sweeps, seed)?;
        if rep.mean <= 0.0 {
            return Err(McError::Unanchored);
        }
        let rel = rep.std_error / rep.mean;
        for (l, e) in log_p.iter_mut().zip(std_error.iter_mut()) {
            *l += rep.mean.ln();
            *e = (e.powi(2) + rel * rel).sqrt();
        }
        Some(rep)
    };
    let window_mass = log_p.iter().map(|l| l.exp()).sum();
    Ok(LdpEstimate {
        beta,
        mu,
        n_lo,
        n_hi,
        log_p,
        std_error,
        window_mass,
        anchor,
        learning_sweeps,
        final_flatness,
        seed,
    })
}

/// Grand-canonical frequency of `n_lo <= N <= n_hi`, one sample per sweep.
pub fn window_frequency(
    region: Arc<Region>,
    beta: f64,
    mu: f64,
    window: (usize, usize),
    sweeps: u64,
    seed: u64,
) -> Result<EstimatorReport, McError> {
    let mut g = Chain::grand(Config::empty(region), BoundaryCondition::Vacant, beta, mu, seed, 2)?;
    g.sweeps(200);
    let xs: Vec<f64> = (0..sweeps)
        .map(|_| {
            g.sweep();
            let n = g.particle_count();
            (window.0 <= n && n <= window.1) as u8 as f64
        })
        .collect();
    EstimatorReport::from_series(&xs, seed, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::MU_COEXISTENCE;
    use crate::oracle::CountTable;

    fn quick() -> FlatHistogram {
        FlatHistogram { ln_f_final: 1e-4, production_sweeps: 40_000, anchor_sweeps: 40_000, ..Default::default() }
    }

    #[test]
    fn full_window_matches_enumeration() {
        let r = Arc::new(Region::square(3).unwrap());
        let t = CountTable::enumerate(&r, &BoundaryCondition::Vacant).unwrap();
        let est = multicanonical_pn(r, 1.2, MU_COEXISTENCE, (0, 9), &quick(), 9).unwrap();
        assert!(est.anchor.is_none());
        for n in 0..=9 {
            let exact = t.log_pn(1.2, MU_COEXISTENCE, n).unwrap();
            let (l, e) = est.log_p_at(n).unwrap();
            assert!((l - exact).abs() < 4.0 * e + 1e-3, "N = {n}: {l} vs {exact} +- {e}");
        }
        assert!((est.window_mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_window_is_anchored() {
        let r = Arc::new(Region::square(3).unwrap());
        let t = CountTable::enumerate(&r, &BoundaryCondition::Vacant).unwrap();
        let est = multicanonical_pn(r.clone(), 1.0, -1.0, (2, 6), &quick(), 4).unwrap();
        for n in 2..=6 {
            let exact = t.log_pn(1.0, -1.0, n).unwrap();
            let (l, e) = est.log_p_at(n).unwrap();
            assert!((l - exact).abs() < 4.0 * e, "N = {n}: {l} vs {exact} +- {e}");
        }
        let single = multicanonical_pn(r, 1.0, -1.0, (3, 3), &quick(), 4).unwrap();
        let (l, e) = single.log_p_at(3).unwrap();
        assert!((l - t.log_pn(1.0, -1.0, 3).unwrap()).abs() < 4.0 * e);
    }
}

//! Markov chain Monte Carlo for the lattice gas.
//!
//! One [`Chain`] type carries the state for all three ensembles. Grand
//! canonical and multicanonical chains use single-site Metropolis flips;
//! canonical chains use particle-vacancy exchanges, a fraction of them long
//! range. Every chain owns a ChaCha8 stream, so runs are reproducible from
//! `(seed, stream)` alone and independent of the rayon thread count.

pub mod droplet;
pub mod multicanonical;
pub mod observables;
pub mod stats;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{BoundaryCondition, Config, LatticeError, Nbr, Region, Site};

pub use stats::EstimatorReport;

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("particle number {n} is outside 0..={max}")]
    ParticleCount { n: usize, max: usize },
    #[error("multicanonical window {lo}..={hi} is invalid for {sites} sites")]
    Window { lo: usize, hi: usize, sites: usize },
    #[error("swap mix {0} outside [0, 1]")]
    SwapMix(f64),
    #[error("histogram not flat after {sweeps} sweeps (min/mean = {flatness:.3})")]
    NotFlat { sweeps: u64, flatness: f64 },
    #[error("grand-canonical anchor never visited the window")]
    Unanchored,
    #[error("bulk density {density:.4} indicates the liquid phase")]
    PhaseContamination { density: f64 },
    #[error("wall profile tail does not decay (slope {slope:.3e})")]
    TailNotDecaying { slope: f64 },
    #[error("inverse temperature {0} is not above the critical point")]
    NotCoexisting(f64),
    #[error("too few samples: {0}")]
    TooFewSamples(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Theory(#[from] crate::theory::TheoryError),
    #[error(transparent)]
    Contour(#[from] crate::contour::ContourError),
}

/// Stationary measure targeted by a chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Ensemble {
    Grand { beta: f64, mu: f64 },
    Canonical { beta: f64, n: usize, swap_mix: f64 },
    /// Grand canonical at `mu` times `exp(-log_weights[N - n_lo])`, restricted to `n_lo..=n_hi`.
    Multicanonical { beta: f64, mu: f64, n_lo: usize, n_hi: usize, log_weights: Vec<f64> },
}

impl Ensemble {
    pub fn beta(&self) -> f64 {
        match self {
            Ensemble::Grand { beta, .. } | Ensemble::Canonical { beta, .. } | Ensemble::Multicanonical { beta, .. } => {
                *beta
            }
        }
    }
}

const NONE: u32 = u32::MAX;

/// `ChaCha8Rng` for chain `stream` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug)]
pub struct Chain {
    region: Arc<Region>,
    bc: BoundaryCondition,
    ensemble: Ensemble,
    occ: Vec<u8>,
    field: Vec<u8>,
    nb: Vec<[u32; 4]>,
    n: usize,
    bonds: i64,
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    steps: u64,
    /// Canonical chains: occupied and vacant site lists with each site's slot.
    particles: Vec<u32>,
    holes: Vec<u32>,
    slot: Vec<u32>,
    /// `exp(-beta dH)` for adding (row 0) or removing (row 1) a particle with `k` occupied neighbors.
    flip_accept: [[f64; 5]; 2],
    /// `-beta dH` for the same moves, unclipped.
    flip_log_weight: [[f64; 5]; 2],
    /// `exp(-beta dH)` for a move changing the bond count by `d - 4`.
    swap_accept: [f64; 9],
}

impl Chain {
    pub fn new(
        config: Config,
        bc: BoundaryCondition,
        ensemble: Ensemble,
        seed: u64,
        stream: u64,
    ) -> Result<Self, McError> {
        let region = config.region().clone();
        let field = bc.field(&region)?;
        let nb = (0..region.len())
            .map(|i| {
                region.nbrs(i).map(|n| match n {
                    Nbr::Inside(j) => j,
                    Nbr::Boundary(_) => NONE,
                })
            })
            .collect();
        let occ: Vec<u8> = (0..config.len()).map(|i| config.get(i) as u8).collect();
        let n = config.particle_count();
        let bonds = config.occupied_bonds(&field) as i64;
        match &ensemble {
            Ensemble::Canonical { n: want, swap_mix, .. } => {
                if *want != n {
                    return Err(McError::ParticleCount { n: *want, max: region.len() });
                }
                if !(0.0..=1.0).contains(swap_mix) {
                    return Err(McError::SwapMix(*swap_mix));
                }
            }
            Ensemble::Multicanonical { n_lo, n_hi, log_weights, .. } => {
                if n_lo > n_hi || *n_hi > region.len() || log_weights.len() != n_hi - n_lo + 1 || n < *n_lo || n > *n_hi {
                    return Err(McError::Window { lo: *n_lo, hi: *n_hi, sites: region.len() });
                }
            }
            Ensemble::Grand { .. } => {}
        }
        let beta = ensemble.beta();
        let mu = match &ensemble {
            Ensemble::Grand { mu, .. } | Ensemble::Multicanonical { mu, .. } => *mu,
            Ensemble::Canonical { .. } => 0.0,
        };
        let mut flip_log_weight = [[0.0; 5]; 2];
        for k in 0..5 {
            let dh = -(k as f64 + mu);
            flip_log_weight[0][k] = -beta * dh;
            flip_log_weight[1][k] = beta * dh;
        }
        let flip_accept = flip_log_weight.map(|row| row.map(|l: f64| l.exp().min(1.0)));
        let mut swap_accept = [0.0; 9];
        for (d, a) in swap_accept.iter_mut().enumerate() {
            *a = (beta * (d as f64 - 4.0)).exp().min(1.0);
        }
        let mut chain = Chain {
            region,
            bc,
            ensemble,
            occ,
            field,
            nb,
            n,
            bonds,
            rng: chain_rng(seed, stream),
            seed,
            stream,
            steps: 0,
            particles: Vec::new(),
            holes: Vec::new(),
            slot: Vec::new(),
            flip_accept,
            flip_log_weight,
            swap_accept,
        };
        chain.rebuild_lists();
        Ok(chain)
    }

    /// Grand-canonical chain started from `config`.
    pub fn grand(config: Config, bc: BoundaryCondition, beta: f64, mu: f64, seed: u64, stream: u64) -> Result<Self, McError> {
        Self::new(config, bc, Ensemble::Grand { beta, mu }, seed, stream)
    }

    /// Canonical chain with vacant boundary, started from `config`.
    pub fn canonical(config: Config, beta: f64, swap_mix: f64, seed: u64, stream: u64) -> Result<Self, McError> {
        let n = config.particle_count();
        Self::new(config, BoundaryCondition::Vacant, Ensemble::Canonical { beta, n, swap_mix }, seed, stream)
    }

    fn rebuild_lists(&mut self) {
        self.particles.clear();
        self.holes.clear();
        self.slot = vec![0; self.occ.len()];
        if !matches!(self.ensemble, Ensemble::Canonical { .. }) {
            return;
        }
        for i in 0..self.occ.len() {
            if self.occ[i] == 1 {
                self.slot[i] = self.particles.len() as u32;
                self.particles.push(i as u32);
            } else {
                self.slot[i] = self.holes.len() as u32;
                self.holes.push(i as u32);
            }
        }
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn boundary(&self) -> &BoundaryCondition {
        &self.bc
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn particle_count(&self) -> usize {
        self.n
    }

    /// Occupied bonds touching the region, boundary bonds included.
    pub fn bonds(&self) -> i64 {
        self.bonds
    }

    /// `H = -bonds - mu N` at the given chemical potential.
    pub fn energy(&self, mu: f64) -> f64 {
        -(self.bonds as f64) - mu * self.n as f64
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occ
    }

    #[inline]
    pub fn occupied(&self, i: usize) -> bool {
        self.occ[i] == 1
    }

    pub fn config(&self) -> Config {
        let mut c = Config::empty(self.region.clone());
        for (i, &o) in self.occ.iter().enumerate() {
            if o == 1 {
                c.set(i, true);
            }
        }
        c
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    #[inline]
    fn neighbors_occupied(&self, i: usize) -> usize {
        let mut k = self.field[i] as usize;
        for &j in &self.nb[i] {
            if j != NONE {
                k += self.occ[j as usize] as usize;
            }
        }
        k
    }

    /// Replace the multicanonical weights, keeping the window.
    pub fn set_log_weights(&mut self, w: &[f64]) {
        if let Ensemble::Multicanonical { log_weights, .. } = &mut self.ensemble {
            log_weights.copy_from_slice(w);
        }
    }

    /// Add `by` to the weight of the current particle number (Wang-Landau update).
    #[inline]
    pub fn bump_log_weight(&mut self, by: f64) {
        if let Ensemble::Multicanonical { log_weights, n_lo, .. } = &mut self.ensemble {
            log_weights[self.n - *n_lo] += by;
        }
    }

    /// One elementary move of the chain's ensemble.
    #[inline]
    pub fn step(&mut self) {
        self.steps += 1;
        match self.ensemble {
            Ensemble::Grand { .. } => self.flip_step(),
            Ensemble::Canonical { swap_mix, .. } => self.kawasaki_step(swap_mix),
            Ensemble::Multicanonical { .. } => self.multicanonical_step(),
        }
    }

    /// `|region|` elementary moves.
    pub fn sweep(&mut self) {
        for _ in 0..self.occ.len() {
            self.step();
        }
    }

    pub fn sweeps(&mut self, k: usize) {
        for _ in 0..k {
            self.sweep();
        }
    }

    #[inline]
    fn flip_step(&mut self) {
        let i = self.rng.gen_range(0..self.occ.len());
        let k = self.neighbors_occupied(i);
        let o = self.occ[i] as usize;
        let a = self.flip_accept[o][k];
        if a >= 1.0 || self.rng.gen::<f64>() < a {
            self.apply_flip(i, k);
        }
    }

    #[inline]
    fn apply_flip(&mut self, i: usize, k: usize) {
        if self.occ[i] == 1 {
            self.occ[i] = 0;
            self.n -= 1;
            self.bonds -= k as i64;
        } else {
            self.occ[i] = 1;
            self.n += 1;
            self.bonds += k as i64;
        }
    }

    fn multicanonical_step(&mut self) {
        let (n_lo, n_hi) = match &self.ensemble {
            Ensemble::Multicanonical { n_lo, n_hi, .. } => (*n_lo, *n_hi),
            _ => unreachable!(),
        };
        let i = self.rng.gen_range(0..self.occ.len());
        let k = self.neighbors_occupied(i);
        let o = self.occ[i] as usize;
        let n_new = if o == 1 { self.n - 1 } else { self.n + 1 };
        if n_new < n_lo || n_new > n_hi {
            return;
        }
        let Ensemble::Multicanonical { log_weights, .. } = &self.ensemble else { unreachable!() };
        let dw = log_weights[n_new - n_lo] - log_weights[self.n - n_lo];
        let a = (self.flip_log_weight[o][k] - dw).exp();
        if a >= 1.0 || self.rng.gen::<f64>() < a {
            self.apply_flip(i, k);
        }
    }

    fn kawasaki_step(&mut self, swap_mix: f64) {
        if self.particles.is_empty() || self.holes.is_empty() {
            return;
        }
        let p = self.particles[self.rng.gen_range(0..self.particles.len())] as usize;
        let h = if self.rng.gen::<f64>() < swap_mix {
            self.holes[self.rng.gen_range(0..self.holes.len())] as usize
        } else {
            let j = self.nb[p][self.rng.gen_range(0..4)];
            if j == NONE || self.occ[j as usize] == 1 {
                return;
            }
            j as usize
        };
        let k_from = self.neighbors_occupied(p);
        let adjacent = self.nb[h].contains(&(p as u32));
        let k_to = self.neighbors_occupied(h) - adjacent as usize;
        // bonds change by k_to - k_from
        let d = k_to as i64 - k_from as i64;
        let a = self.swap_accept[(d + 4) as usize];
        if a >= 1.0 || self.rng.gen::<f64>() < a {
            self.occ[p] = 0;
            self.occ[h] = 1;
            self.bonds += d;
            let (sp, sh) = (self.slot[p], self.slot[h]);
            self.particles[sp as usize] = h as u32;
            self.holes[sh as usize] = p as u32;
            self.slot[h] = sp;
            self.slot[p] = sh;
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            sites: self.region.sites().iter().map(|s| (s.x, s.y)).collect(),
            occupancy: self.occ.iter().map(|&o| if o == 1 { '1' } else { '0' }).collect(),
            bc: self.bc.clone(),
            ensemble: self.ensemble.clone(),
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos().to_string(),
            steps: self.steps,
        }
    }

    pub fn restore(cp: &Checkpoint) -> Result<Self, McError> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(McError::Checkpoint(format!("unsupported version {}", cp.version)));
        }
        if cp.occupancy.len() != cp.sites.len() {
            return Err(McError::Checkpoint("occupancy length differs from site count".into()));
        }
        let region = Arc::new(Region::from_sites(cp.sites.iter().map(|&(x, y)| Site::new(x, y)))?);
        // sites come back in row order; map occupancy through the stored order
        let mut config = Config::empty(region.clone());
        for (&(x, y), ch) in cp.sites.iter().zip(cp.occupancy.chars()) {
            match ch {
                '0' => {}
                '1' => config.set(region.index_of(Site::new(x, y)).expect("site just inserted"), true),
                _ => return Err(McError::Checkpoint(format!("bad occupancy character {ch:?}"))),
            }
        }
        let word_pos: u128 =
            cp.word_pos.parse().map_err(|_| McError::Checkpoint("word_pos is not an integer".into()))?;
        let mut chain = Chain::new(config, cp.bc.clone(), cp.ensemble.clone(), cp.seed, cp.stream)?;
        chain.rng.set_word_pos(word_pos);
        chain.steps = cp.steps;
        Ok(chain)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Full chain state, sufficient to resume a run bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub sites: Vec<(i32, i32)>,
    pub occupancy: String,
    pub bc: BoundaryCondition,
    pub ensemble: Ensemble,
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub word_pos: String,
    pub steps: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn parse(text: &str) -> Result<Self, McError> {
        serde_json::from_str(text).map_err(|e| McError::Checkpoint(e.to_string()))
    }
}

/// Uniformly random configuration with exactly `n` particles.
pub fn random_config(region: Arc<Region>, n: usize, rng: &mut impl Rng) -> Result<Config, McError> {
    if n > region.len() {
        return Err(McError::ParticleCount { n, max: region.len() });
    }
    let mut c = Config::empty(region.clone());
    for i in rand::seq::index::sample(rng, region.len(), n) {
        c.set(i, true);
    }
    Ok(c)
}

/// Configuration with an approximately square droplet of `droplet` sites near the center
/// and the remaining particles spread uniformly outside it.
pub fn planted_droplet(region: Arc<Region>, n: usize, droplet: usize, rng: &mut impl Rng) -> Result<Config, McError> {
    if n > region.len() || droplet > n {
        return Err(McError::ParticleCount { n, max: region.len() });
    }
    let (xmin, xmax, ymin, ymax) = region.bounding_box();
    let side = (droplet as f64).sqrt().ceil() as i32;
    let cx = (xmin + xmax) / 2 - side / 2;
    let cy = (ymin + ymax) / 2 - side / 2;
    let mut c = Config::empty(region.clone());
    let mut placed = 0;
    'fill: for dy in 0..side {
        for dx in 0..side {
            if placed == droplet {
                break 'fill;
            }
            if let Some(i) = region.index_of(Site::new(cx + dx, cy + dy)) {
                c.set(i, true);
                placed += 1;
            }
        }
    }
    let free: Vec<usize> = (0..region.len()).filter(|&i| !c.get(i)).collect();
    for k in rand::seq::index::sample(rng, free.len(), n - placed) {
        c.set(free[k], true);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::CountTable;
    use std::collections::HashMap;

    fn square(l: u32) -> Arc<Region> {
        Arc::new(Region::square(l).unwrap())
    }

    fn state(c: &Chain) -> usize {
        c.occupancy().iter().enumerate().map(|(i, &o)| (o as usize) << i).sum()
    }

    fn flux(mut chain: Chain, steps: usize) -> HashMap<(usize, usize), u64> {
        let mut counts = HashMap::new();
        let mut s = state(&chain);
        for _ in 0..steps {
            chain.step();
            let t = state(&chain);
            if t != s {
                *counts.entry((s, t)).or_insert(0) += 1;
            }
            s = t;
        }
        counts
    }

    fn assert_balanced(counts: &HashMap<(usize, usize), u64>) {
        assert!(counts.len() > 4);
        for (&(a, b), &f) in counts {
            let r = counts.get(&(b, a)).copied().unwrap_or(0);
            let sd = ((f + r) as f64).sqrt();
            assert!((f as f64 - r as f64).abs() < 5.0 * sd + 3.0, "{a}->{b}: {f} vs {r}");
        }
    }

    #[test]
    fn detailed_balance_on_2x2() {
        let r = square(2);
        let g = Chain::grand(Config::empty(r.clone()), BoundaryCondition::Vacant, 1.3, -1.0, 1, 0).unwrap();
        assert_balanced(&flux(g, 1_000_000));
        let c0 = Config::from_sites(r.clone(), &[Site::new(0, 0), Site::new(1, 1)]).unwrap();
        let k = Chain::canonical(c0, 1.3, 0.5, 2, 0).unwrap();
        assert_balanced(&flux(k, 1_000_000));
        let ens = Ensemble::Multicanonical { beta: 1.3, mu: -1.0, n_lo: 0, n_hi: 4, log_weights: vec![0.0, 1.0, -0.5, 0.2, 2.0] };
        let m = Chain::new(Config::empty(r), BoundaryCondition::Vacant, ens, 3, 0).unwrap();
        assert_balanced(&flux(m, 1_000_000));
    }

    #[test]
    fn bookkeeping_matches_recount() {
        let r = square(6);
        let field = BoundaryCondition::Occupied.field(&r).unwrap();
        let mut g = Chain::grand(Config::empty(r.clone()), BoundaryCondition::Occupied, 1.0, -1.5, 7, 0).unwrap();
        g.sweeps(50);
        let c = g.config();
        assert_eq!(g.particle_count(), c.particle_count());
        assert_eq!(g.bonds(), c.occupied_bonds(&field) as i64);
        let mut k = Chain::canonical(c.clone(), 2.0, 0.3, 8, 0).unwrap();
        k.sweeps(50);
        let field_v = BoundaryCondition::Vacant.field(&r).unwrap();
        assert_eq!(k.particle_count(), c.particle_count());
        assert_eq!(k.bonds(), k.config().occupied_bonds(&field_v) as i64);
    }

    #[test]
    fn zero_cost_moves_always_accepted() {
        let g = Chain::grand(Config::empty(square(3)), BoundaryCondition::Vacant, 1.0, 0.0, 1, 0).unwrap();
        assert_eq!(g.flip_accept[0][0], 1.0);
        assert_eq!(g.flip_accept[1][0], 1.0);
        assert_eq!(g.swap_accept[4], 1.0);
    }

    #[test]
    fn frozen_empty_canonical_chain() {
        let mut k = Chain::canonical(Config::empty(square(4)), 1.0, 0.5, 1, 0).unwrap();
        k.sweeps(10);
        assert_eq!(k.particle_count(), 0);
    }

    #[test]
    fn checkpoint_resumes_bit_for_bit() {
        let r = Arc::new(Region::from_sites([Site::new(0, 0), Site::new(1, 0), Site::new(1, 1), Site::new(5, 5)]).unwrap());
        let mut a = Chain::grand(Config::empty(r), BoundaryCondition::Vacant, 1.0, -0.5, 42, 3).unwrap();
        a.sweeps(17);
        let text = a.checkpoint().to_json();
        let mut b = Chain::restore(&Checkpoint::parse(&text).unwrap()).unwrap();
        a.sweeps(100);
        b.sweeps(100);
        assert_eq!(a.occupancy(), b.occupancy());
        assert_eq!(a.steps(), b.steps());
        assert!(Checkpoint::parse("{}").is_err());
    }

    #[test]
    fn grand_chain_matches_exact_mean() {
        let r = square(4);
        let exact = CountTable::enumerate(&r, &BoundaryCondition::Vacant).unwrap().mean_density(1.2, -1.0) * 16.0;
        let mut g = Chain::grand(Config::empty(r), BoundaryCondition::Vacant, 1.2, -1.0, 11, 0).unwrap();
        g.sweeps(1000);
        let mut xs = Vec::new();
        for _ in 0..100_000 {
            g.sweep();
            xs.push(g.particle_count() as f64);
        }
        let rep = EstimatorReport::from_series(&xs, 11, 0).unwrap();
        assert!((rep.mean - exact).abs() < 3.0 * rep.std_error, "{rep:?} vs {exact}");
    }
}

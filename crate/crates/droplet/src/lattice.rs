//! Lattice-gas configurations on finite regions of Z^2.
//!
//! Energy convention: H = -sum over bonds touching the region of n_x n_y - mu * N.
//! Bonds with both endpoints outside the region are not counted.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chemical potential at which gas and liquid coexist for this Hamiltonian.
pub const MU_COEXISTENCE: f64 = -2.0;

/// Largest region accepted by [`Region`].
pub const MAX_SITES: usize = 1 << 20;

/// Inverse critical temperature of the lattice gas, `2 ln(1 + sqrt 2)`.
pub fn beta_critical() -> f64 {
    2.0 * (1.0 + 2f64.sqrt()).ln()
}

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("region has no sites")]
    EmptyRegion,
    #[error("region has {0} sites, limit is {MAX_SITES}")]
    RegionTooLarge(usize),
    #[error("site {0} listed twice")]
    DuplicateSite(Site),
    #[error("site {0} is not in the region")]
    SiteOutsideRegion(Site),
    #[error("no boundary value given for {0}")]
    MissingBoundaryValue(Site),
    #[error("{0} is not a boundary site of the region")]
    NotABoundarySite(Site),
    #[error("configuration belongs to a different region")]
    RegionMismatch,
    #[error("spin value {0} is not +1 or -1")]
    BadSpin(i8),
    #[error("expected {expected} entries, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("inverse temperature must be finite and non-negative, got {0}")]
    BadBeta(f64),
    #[error("chemical potential must be finite, got {0}")]
    BadMu(f64),
    #[error("swap needs one occupied and one vacant site")]
    InvalidSwap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    /// Right, up, left, down.
    pub fn neighbors(self) -> [Site; 4] {
        [
            Site::new(self.x + 1, self.y),
            Site::new(self.x, self.y + 1),
            Site::new(self.x - 1, self.y),
            Site::new(self.x, self.y - 1),
        ]
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Neighbor slot of a site: another site of the region or a boundary site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nbr {
    Inside(u32),
    Boundary(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Rectangle { x0: i32, y0: i32, width: u32, height: u32 },
    Arbitrary,
}

/// A finite set of sites with precomputed neighbor tables and outer boundary.
///
/// Sites are stored row-major (sorted by `y`, then `x`).
#[derive(Clone, Debug)]
pub struct Region {
    sites: Vec<Site>,
    index: HashMap<Site, u32>,
    nbrs: Vec<[Nbr; 4]>,
    boundary: Vec<Site>,
    shape: Shape,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.sites == other.sites
    }
}

impl Region {
    pub fn rectangle(width: u32, height: u32) -> Result<Self, LatticeError> {
        Self::rectangle_at(0, 0, width, height)
    }

    pub fn square(side: u32) -> Result<Self, LatticeError> {
        Self::rectangle(side, side)
    }

    pub fn rectangle_at(x0: i32, y0: i32, width: u32, height: u32) -> Result<Self, LatticeError> {
        let n = width as usize * height as usize;
        if n == 0 {
            return Err(LatticeError::EmptyRegion);
        }
        if n > MAX_SITES {
            return Err(LatticeError::RegionTooLarge(n));
        }
        let mut sites = Vec::with_capacity(n);
        for y in 0..height as i32 {
            for x in 0..width as i32 {
                sites.push(Site::new(x0 + x, y0 + y));
            }
        }
        let mut r = Self::build(sites);
        r.shape = Shape::Rectangle { x0, y0, width, height };
        Ok(r)
    }

    pub fn from_sites<I: IntoIterator<Item = Site>>(sites: I) -> Result<Self, LatticeError> {
        let mut v: Vec<Site> = sites.into_iter().collect();
        if v.is_empty() {
            return Err(LatticeError::EmptyRegion);
        }
        if v.len() > MAX_SITES {
            return Err(LatticeError::RegionTooLarge(v.len()));
        }
        v.sort_by_key(|s| (s.y, s.x));
        for w in v.windows(2) {
            if w[0] == w[1] {
                return Err(LatticeError::DuplicateSite(w[0]));
            }
        }
        let mut r = Self::build(v);
        r.shape = r.detect_rectangle();
        Ok(r)
    }

    fn build(sites: Vec<Site>) -> Self {
        let index: HashMap<Site, u32> =
            sites.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
        let mut boundary_index: BTreeMap<Site, u32> = BTreeMap::new();
        for s in &sites {
            for t in s.neighbors() {
                if !index.contains_key(&t) {
                    boundary_index.entry(t).or_insert(0);
                }
            }
        }
        let boundary: Vec<Site> = {
            let mut b: Vec<Site> = boundary_index.keys().copied().collect();
            b.sort_by_key(|s| (s.y, s.x));
            b
        };
        for (i, s) in boundary.iter().enumerate() {
            boundary_index.insert(*s, i as u32);
        }
        let nbrs = sites
            .iter()
            .map(|s| {
                s.neighbors().map(|t| match index.get(&t) {
                    Some(&j) => Nbr::Inside(j),
                    None => Nbr::Boundary(boundary_index[&t]),
                })
            })
            .collect();
        Region { sites, index, nbrs, boundary, shape: Shape::Arbitrary }
    }

    fn detect_rectangle(&self) -> Shape {
        let (xmin, xmax, ymin, ymax) = self.bounding_box();
        let w = (xmax - xmin + 1) as u32;
        let h = (ymax - ymin + 1) as u32;
        if w as usize * h as usize == self.sites.len() {
            Shape::Rectangle { x0: xmin, y0: ymin, width: w, height: h }
        } else {
            Shape::Arbitrary
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> Site {
        self.sites[i]
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.index.get(&s).map(|&i| i as usize)
    }

    pub fn contains(&self, s: Site) -> bool {
        self.index.contains_key(&s)
    }

    pub fn nbrs(&self, i: usize) -> &[Nbr; 4] {
        &self.nbrs[i]
    }

    /// Sites outside the region joined to it by a bond.
    pub fn boundary(&self) -> &[Site] {
        &self.boundary
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> Option<(u32, u32)> {
        match self.shape {
            Shape::Rectangle { width, height, .. } => Some((width, height)),
            Shape::Arbitrary => None,
        }
    }

    /// Ratio of long to short side for rectangles.
    pub fn aspect_ratio(&self) -> Option<f64> {
        self.dims().map(|(w, h)| w.max(h) as f64 / w.min(h) as f64)
    }

    /// `sqrt(|region|)`, the side length for squares.
    pub fn linear_size(&self) -> f64 {
        (self.len() as f64).sqrt()
    }

    pub fn bounding_box(&self) -> (i32, i32, i32, i32) {
        let mut b = (i32::MAX, i32::MIN, i32::MAX, i32::MIN);
        for s in &self.sites {
            b.0 = b.0.min(s.x);
            b.1 = b.1.max(s.x);
            b.2 = b.2.min(s.y);
            b.3 = b.3.max(s.y);
        }
        b
    }

    /// Bonds with both ends inside, as index pairs `(i, j)` with `i < j`.
    pub fn interior_bonds(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.nbrs.iter().enumerate() {
            for n in &nb[..2] {
                if let Nbr::Inside(j) = *n {
                    out.push((i, j as usize));
                }
            }
        }
        out
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.sites.iter().all(|s| other.contains(*s))
    }

    /// Sites of `other` missing from `self`.
    pub fn sites_not_in(&self, other: &Region) -> Vec<Site> {
        other.sites.iter().copied().filter(|s| !self.contains(*s)).collect()
    }
}

/// Boundary condition: every boundary site vacant, every one occupied, or listed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Vacant,
    Occupied,
    Explicit(BTreeMap<Site, bool>),
}

impl BoundaryCondition {
    /// Occupancy of each boundary site of `region`, in boundary order.
    pub fn resolve(&self, region: &Region) -> Result<Vec<bool>, LatticeError> {
        match self {
            BoundaryCondition::Vacant => Ok(vec![false; region.boundary().len()]),
            BoundaryCondition::Occupied => Ok(vec![true; region.boundary().len()]),
            BoundaryCondition::Explicit(map) => {
                for s in map.keys() {
                    if region.boundary().binary_search_by_key(&(s.y, s.x), |b| (b.y, b.x)).is_err() {
                        return Err(LatticeError::NotABoundarySite(*s));
                    }
                }
                region
                    .boundary()
                    .iter()
                    .map(|s| map.get(s).copied().ok_or(LatticeError::MissingBoundaryValue(*s)))
                    .collect()
            }
        }
    }

    /// Number of occupied boundary neighbors of each site.
    pub fn field(&self, region: &Region) -> Result<Vec<u8>, LatticeError> {
        let occ = self.resolve(region)?;
        Ok((0..region.len())
            .map(|i| {
                region.nbrs(i)
                    .iter()
                    .filter(|n| matches!(n, Nbr::Boundary(b) if occ[*b as usize]))
                    .count() as u8
            })
            .collect())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BoundaryCondition::Vacant => "vacant",
            BoundaryCondition::Occupied => "occupied",
            BoundaryCondition::Explicit(_) => "explicit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub mu: f64,
}

impl ModelParams {
    pub fn new(beta: f64, mu: f64) -> Result<Self, LatticeError> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(LatticeError::BadBeta(beta));
        }
        if !mu.is_finite() {
            return Err(LatticeError::BadMu(mu));
        }
        Ok(ModelParams { beta, mu })
    }

    pub fn at_coexistence(beta: f64) -> Result<Self, LatticeError> {
        Self::new(beta, MU_COEXISTENCE)
    }

    /// Ising coupling and uniform field of the spin picture `sigma = 2n - 1`.
    pub fn ising(&self) -> IsingParams {
        IsingParams { coupling: 0.25, field: (self.mu - MU_COEXISTENCE) / 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsingParams {
    pub coupling: f64,
    pub field: f64,
}

/// Bit-packed occupation numbers on a region.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    region: Arc<Region>,
    bits: Vec<u64>,
}

impl Config {
    pub fn empty(region: Arc<Region>) -> Self {
        let words = region.len().div_ceil(64);
        Config { region, bits: vec![0; words] }
    }

    pub fn full(region: Arc<Region>) -> Self {
        let mut c = Self::empty(region);
        for i in 0..c.len() {
            c.set(i, true);
        }
        c
    }

    pub fn from_occupancy(region: Arc<Region>, occ: &[bool]) -> Result<Self, LatticeError> {
        if occ.len() != region.len() {
            return Err(LatticeError::LengthMismatch { expected: region.len(), found: occ.len() });
        }
        let mut c = Self::empty(region);
        for (i, &o) in occ.iter().enumerate() {
            c.set(i, o);
        }
        Ok(c)
    }

    /// Configuration with exactly the listed sites occupied.
    pub fn from_sites(region: Arc<Region>, occupied: &[Site]) -> Result<Self, LatticeError> {
        let mut c = Self::empty(region);
        for s in occupied {
            let i = c.region.index_of(*s).ok_or(LatticeError::SiteOutsideRegion(*s))?;
            c.set(i, true);
        }
        Ok(c)
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.bits[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        let m = 1u64 << (i & 63);
        if v {
            self.bits[i >> 6] |= m;
        } else {
            self.bits[i >> 6] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.bits[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn occupied_at(&self, s: Site) -> bool {
        self.region.index_of(s).is_some_and(|i| self.get(i))
    }

    pub fn particle_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.particle_count() as f64 / self.len() as f64
    }

    pub fn occupied_sites(&self) -> Vec<Site> {
        (0..self.len()).filter(|&i| self.get(i)).map(|i| self.region.site(i)).collect()
    }

    pub fn to_occupancy(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    /// Particle-hole image `n -> 1 - n`.
    pub fn complement(&self) -> Self {
        let mut c = self.clone();
        for i in 0..c.len() {
            c.flip(i);
        }
        c
    }

    /// Spin picture `sigma = 2n - 1`.
    pub fn to_spins(&self) -> Vec<i8> {
        (0..self.len()).map(|i| if self.get(i) { 1 } else { -1 }).collect()
    }

    pub fn from_spins(region: Arc<Region>, spins: &[i8]) -> Result<Self, LatticeError> {
        if spins.len() != region.len() {
            return Err(LatticeError::LengthMismatch { expected: region.len(), found: spins.len() });
        }
        let mut c = Self::empty(region);
        for (i, &s) in spins.iter().enumerate() {
            match s {
                1 => c.set(i, true),
                -1 => {}
                other => return Err(LatticeError::BadSpin(other)),
            }
        }
        Ok(c)
    }

    /// Occupied inside neighbors plus occupied boundary neighbors, given the boundary field.
    #[inline]
    pub fn occupied_neighbors(&self, i: usize, field: &[u8]) -> u32 {
        let mut k = field[i] as u32;
        for n in self.region.nbrs(i) {
            if let Nbr::Inside(j) = *n {
                k += self.get(j as usize) as u32;
            }
        }
        k
    }

    /// Number of occupied bonds touching the region.
    pub fn occupied_bonds(&self, field: &[u8]) -> u64 {
        let mut b = 0u64;
        for i in 0..self.len() {
            if !self.get(i) {
                continue;
            }
            b += field[i] as u64;
            for n in &self.region.nbrs(i)[..2] {
                if let Nbr::Inside(j) = *n {
                    b += self.get(j as usize) as u64;
                }
            }
        }
        b
    }
}

/// Elementary updates: single-site flip or occupancy exchange of two sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Flip(usize),
    Swap(usize, usize),
}

pub fn energy(
    config: &Config,
    bc: &BoundaryCondition,
    params: &ModelParams,
) -> Result<f64, LatticeError> {
    let field = bc.field(config.region())?;
    Ok(-(config.occupied_bonds(&field) as f64) - params.mu * config.particle_count() as f64)
}

/// `H(after) - H(before)` without touching the configuration.
pub fn energy_delta(
    config: &Config,
    bc: &BoundaryCondition,
    params: &ModelParams,
    mv: Move,
) -> Result<f64, LatticeError> {
    let field = bc.field(config.region())?;
    delta_with_field(config, &field, params.mu, mv)
}

pub(crate) fn delta_with_field(
    config: &Config,
    field: &[u8],
    mu: f64,
    mv: Move,
) -> Result<f64, LatticeError> {
    match mv {
        Move::Flip(i) => {
            if i >= config.len() {
                return Err(LatticeError::LengthMismatch { expected: config.len(), found: i });
            }
            let k = config.occupied_neighbors(i, field) as f64;
            Ok(if config.get(i) { k + mu } else { -(k + mu) })
        }
        Move::Swap(a, b) => {
            if a >= config.len() || b >= config.len() {
                return Err(LatticeError::LengthMismatch { expected: config.len(), found: a.max(b) });
            }
            let (from, to) = match (config.get(a), config.get(b)) {
                (true, false) => (a, b),
                (false, true) => (b, a),
                _ => return Err(LatticeError::InvalidSwap),
            };
            let k_from = config.occupied_neighbors(from, field) as f64;
            let adjacent = config
                .region()
                .nbrs(to)
                .iter()
                .any(|n| *n == Nbr::Inside(from as u32));
            let k_to = config.occupied_neighbors(to, field) as f64 - adjacent as u8 as f64;
            Ok(k_from - k_to)
        }
    }
}

/// Energy of the Ising picture `-J sum sigma_x sigma_y - h sum sigma_x`, with boundary spins from `bc`.
pub fn ising_energy(
    config: &Config,
    bc: &BoundaryCondition,
    ising: IsingParams,
) -> Result<f64, LatticeError> {
    let region = config.region();
    let occ = bc.resolve(region)?;
    let spin = |n: bool| if n { 1.0 } else { -1.0 };
    let mut bonds = 0.0;
    let mut mag = 0.0;
    for i in 0..region.len() {
        let si = spin(config.get(i));
        mag += si;
        for (k, n) in region.nbrs(i).iter().enumerate() {
            match *n {
                Nbr::Inside(j) if k < 2 => bonds += si * spin(config.get(j as usize)),
                Nbr::Boundary(b) => bonds += si * spin(occ[b as usize]),
                _ => {}
            }
        }
    }
    Ok(-ising.coupling * bonds - ising.field * mag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(l: u32) -> Arc<Region> {
        Arc::new(Region::square(l).unwrap())
    }

    #[test]
    fn critical_beta() {
        assert!((beta_critical() - 1.762_747_174_039_086).abs() < 1e-12);
    }

    #[test]
    fn single_site_energies() {
        let r = square(1);
        let p = ModelParams::new(1.0, -0.5).unwrap();
        let full = Config::full(r.clone());
        assert_eq!(energy(&full, &BoundaryCondition::Vacant, &p).unwrap(), 0.5);
        assert_eq!(energy(&full, &BoundaryCondition::Occupied, &p).unwrap(), -4.0 + 0.5);
    }

    #[test]
    fn two_by_two_full() {
        let r = square(2);
        let p = ModelParams::new(1.0, 0.0).unwrap();
        let full = Config::full(r);
        assert_eq!(energy(&full, &BoundaryCondition::Vacant, &p).unwrap(), -4.0);
        assert_eq!(energy(&full, &BoundaryCondition::Occupied, &p).unwrap(), -12.0);
    }

    #[test]
    fn boundary_size_of_rectangle() {
        let r = Region::rectangle(5, 3).unwrap();
        assert_eq!(r.boundary().len(), 16);
        assert_eq!(r.interior_bonds().len(), 4 * 3 + 5 * 2);
        assert_eq!(r.aspect_ratio(), Some(5.0 / 3.0));
    }

    #[test]
    fn arbitrary_region_detects_rectangles() {
        let r = Region::from_sites((0..3).flat_map(|y| (0..2).map(move |x| Site::new(x, y)))).unwrap();
        assert_eq!(r.dims(), Some((2, 3)));
        let l = Region::from_sites([Site::new(0, 0), Site::new(1, 0), Site::new(0, 1)]).unwrap();
        assert_eq!(l.dims(), None);
        assert_eq!(l.boundary().len(), 7);
    }

    #[test]
    fn region_errors() {
        assert_eq!(Region::rectangle(0, 4), Err(LatticeError::EmptyRegion));
        assert_eq!(
            Region::from_sites([Site::new(0, 0), Site::new(0, 0)]),
            Err(LatticeError::DuplicateSite(Site::new(0, 0)))
        );
        assert!(matches!(Region::rectangle(2048, 1024), Err(LatticeError::RegionTooLarge(_))));
    }

    #[test]
    fn explicit_boundary_must_cover_boundary() {
        let r = Region::square(1).unwrap();
        let mut m = BTreeMap::new();
        m.insert(Site::new(1, 0), true);
        let err = BoundaryCondition::Explicit(m.clone()).resolve(&r).unwrap_err();
        assert!(matches!(err, LatticeError::MissingBoundaryValue(_)));
        m.insert(Site::new(5, 5), true);
        assert_eq!(
            BoundaryCondition::Explicit(m).resolve(&r),
            Err(LatticeError::NotABoundarySite(Site::new(5, 5)))
        );
    }

    #[test]
    fn explicit_matches_uniform() {
        let r = square(3);
        let m: BTreeMap<Site, bool> = r.boundary().iter().map(|s| (*s, true)).collect();
        let c = Config::from_sites(r.clone(), &[Site::new(0, 0), Site::new(1, 1)]).unwrap();
        let p = ModelParams::new(0.7, 0.3).unwrap();
        assert_eq!(
            energy(&c, &BoundaryCondition::Explicit(m), &p).unwrap(),
            energy(&c, &BoundaryCondition::Occupied, &p).unwrap()
        );
    }

    #[test]
    fn ising_map_at_coexistence() {
        let p = ModelParams::at_coexistence(2.0).unwrap();
        assert_eq!(p.ising(), IsingParams { coupling: 0.25, field: 0.0 });
    }

    #[test]
    fn spins_round_trip() {
        let r = square(2);
        let c = Config::from_sites(r.clone(), &[Site::new(1, 0)]).unwrap();
        let s = c.to_spins();
        assert_eq!(s, vec![-1, 1, -1, -1]);
        assert_eq!(Config::from_spins(r.clone(), &s).unwrap(), c);
        assert_eq!(Config::from_spins(r, &[0, 1, 1, 1]), Err(LatticeError::BadSpin(0)));
    }

    #[test]
    fn swap_delta_adjacent_pair() {
        let r = square(3);
        let p = ModelParams::new(1.0, 0.0).unwrap();
        let c = Config::from_sites(r.clone(), &[Site::new(0, 0), Site::new(1, 0)]).unwrap();
        let a = r.index_of(Site::new(1, 0)).unwrap();
        let b = r.index_of(Site::new(2, 0)).unwrap();
        // moving the right particle one step loses the only bond
        let d = energy_delta(&c, &BoundaryCondition::Vacant, &p, Move::Swap(a, b)).unwrap();
        assert_eq!(d, 1.0);
        assert_eq!(
            energy_delta(&c, &BoundaryCondition::Vacant, &p, Move::Swap(b, b)),
            Err(LatticeError::InvalidSwap)
        );
    }
}

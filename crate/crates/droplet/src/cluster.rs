//! Polymer representation of the low-density lattice gas.
//!
//! Polymers are finite connected sets of occupied sites with weight
//! `zeta(P) = exp(beta * bonds(P) + beta * mu * |P|)`. The truncated weights
//! `theta(A)` are the Moebius inverse of `log Z_G` over subsets of `A`.

use std::collections::HashSet;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{BoundaryCondition, Region, Site};
use crate::oracle::{self, OracleError};

/// Largest polymer size enumerated.
pub const MAX_POLYMER_SIZE: usize = 10;
/// Rigorous upper bound on the growth constant of fixed polyominoes.
pub const POLYOMINO_GROWTH_BOUND: f64 = 4.65;
/// Largest set handled by [`theta_weight`].
pub const MAX_THETA_SITES: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("polymer size {0} exceeds the enumeration limit {MAX_POLYMER_SIZE}")]
    TooLarge(usize),
    #[error("set of {0} sites is too large for the Moebius sum")]
    ThetaTooLarge(usize),
    #[error("KP condition not certified at beta = {beta}, mu = {mu}")]
    NotCertified { beta: f64, mu: f64 },
    #[error("certificate was issued for (beta, mu) = ({0}, {1})")]
    CertificateMismatch(f64, f64),
    #[error("aspect ratio {aspect} exceeds theta = {theta}")]
    Aspect { aspect: f64, theta: f64 },
    #[error("margin and scale must be positive")]
    BadMargin,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// A fixed polyomino translated so its lowest row starts at the origin.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Shape(pub Vec<Site>);

impl Shape {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bonds(&self) -> usize {
        bond_count(&self.0)
    }

    /// Sum over occupied rows `r` of the number of cells strictly above `r`.
    fn rows_above(&self) -> usize {
        let mut ys: Vec<i32> = self.0.iter().map(|s| s.y).collect();
        ys.sort_unstable();
        let n = ys.len();
        let mut total = 0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j < n && ys[j] == ys[i] {
                j += 1;
            }
            total += n - j;
            i = j;
        }
        total
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Vec<Site> {
        self.0.iter().map(|s| Site::new(s.x + dx, s.y + dy)).collect()
    }
}

fn bond_count(cells: &[Site]) -> usize {
    let set: HashSet<Site> = cells.iter().copied().collect();
    cells
        .iter()
        .map(|s| set.contains(&Site::new(s.x + 1, s.y)) as usize + set.contains(&Site::new(s.x, s.y + 1)) as usize)
        .sum()
}

/// Translate a set so its lowest-then-leftmost cell sits at the origin, and sort it.
pub fn canonical(cells: &[Site]) -> Shape {
    let o = cells.iter().min_by_key(|s| (s.y, s.x)).copied().unwrap_or(Site::new(0, 0));
    let mut v: Vec<Site> = cells.iter().map(|s| Site::new(s.x - o.x, s.y - o.y)).collect();
    v.sort_by_key(|s| (s.y, s.x));
    Shape(v)
}

pub fn is_connected(cells: &[Site]) -> bool {
    if cells.is_empty() {
        return false;
    }
    let set: HashSet<Site> = cells.iter().copied().collect();
    let mut seen = HashSet::from([cells[0]]);
    let mut stack = vec![cells[0]];
    while let Some(s) = stack.pop() {
        for t in s.neighbors() {
            if set.contains(&t) && seen.insert(t) {
                stack.push(t);
            }
        }
    }
    seen.len() == set.len()
}

/// Fixed polyominoes with `1..=n_max` cells (Redelmeier's method).
fn redelmeier(n_max: usize) -> Vec<Shape> {
    fn allowed(s: Site) -> bool {
        s.y > 0 || (s.y == 0 && s.x >= 0)
    }
    fn grow(untried: &mut Vec<Site>, poly: &mut Vec<Site>, seen: &mut HashSet<Site>, n_max: usize, out: &mut Vec<Shape>) {
        while let Some(c) = untried.pop() {
            poly.push(c);
            let mut v = poly.clone();
            v.sort_by_key(|s| (s.y, s.x));
            out.push(Shape(v));
            if poly.len() < n_max {
                let fresh: Vec<Site> = c
                    .neighbors()
                    .into_iter()
                    .filter(|&t| allowed(t) && !seen.contains(&t))
                    .collect();
                for &t in &fresh {
                    seen.insert(t);
                }
                let mut next = untried.clone();
                next.extend(&fresh);
                grow(&mut next, poly, seen, n_max, out);
                for t in &fresh {
                    seen.remove(t);
                }
            }
            poly.pop();
        }
    }
    let mut out = Vec::new();
    let origin = Site::new(0, 0);
    let mut seen = HashSet::from([origin]);
    grow(&mut vec![origin], &mut Vec::new(), &mut seen, n_max, &mut out);
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn all_shapes() -> &'static [Shape] {
    static SHAPES: OnceLock<Vec<Shape>> = OnceLock::new();
    SHAPES.get_or_init(|| redelmeier(MAX_POLYMER_SIZE))
}

/// Fixed polyominoes with at most `n_max` cells, ordered by size.
pub fn shapes(n_max: usize) -> Result<&'static [Shape], ClusterError> {
    if n_max > MAX_POLYMER_SIZE {
        return Err(ClusterError::TooLarge(n_max));
    }
    let all = all_shapes();
    let end = all.partition_point(|s| s.len() <= n_max);
    Ok(&all[..end])
}

/// Every connected set of at most `n_max` sites containing `anchor`.
pub fn enumerate_animals(n_max: usize, anchor: Site) -> Result<Vec<Vec<Site>>, ClusterError> {
    let mut out = Vec::new();
    for shape in shapes(n_max)? {
        for c in &shape.0 {
            out.push(shape.translated(anchor.x - c.x, anchor.y - c.y));
        }
    }
    Ok(out)
}

/// Polymer weight `exp(beta * bonds + beta * mu * |P|)`.
pub fn polymer_weight(cells: &[Site], beta: f64, mu: f64) -> f64 {
    (beta * bond_count(cells) as f64 + beta * mu * cells.len() as f64).exp()
}

/// `theta(A) = sum over B subset of A of (-1)^{|A \ B|} log Z_G(B)`; zero unless `A` is connected.
pub fn theta_weight(cells: &[Site], beta: f64, mu: f64) -> Result<f64, ClusterError> {
    let n = cells.len();
    if n > MAX_THETA_SITES {
        return Err(ClusterError::ThetaTooLarge(n));
    }
    if n == 0 || !is_connected(cells) {
        return Ok(0.0);
    }
    let masks: Vec<u32> = cells
        .iter()
        .map(|s| {
            s.neighbors().iter().fold(0u32, |m, t| match cells.iter().position(|c| c == t) {
                Some(j) => m | (1 << j),
                None => m,
            })
        })
        .collect();
    let full = 1usize << n;
    // y[B] = Z_G(B) - 1, built as a subset-sum of nonempty configurations
    let mut bonds = vec![0u32; full];
    let mut y = vec![0.0f64; full];
    for c in 1..full {
        let i = c.trailing_zeros() as usize;
        let rest = c & (c - 1);
        bonds[c] = bonds[rest] + (rest as u32 & masks[i]).count_ones();
        y[c] = (beta * bonds[c] as f64 + beta * mu * c.count_ones() as f64).exp();
    }
    for i in 0..n {
        let bit = 1 << i;
        for b in 0..full {
            if b & bit != 0 {
                y[b] += y[b ^ bit];
            }
        }
    }
    let mut theta = 0.0;
    for (b, yb) in y.iter().enumerate() {
        let sign = if (n - b.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
        theta += sign * yb.ln_1p();
    }
    Ok(theta)
}

/// `sum over connected A subset of sites of theta(A)`; equals `log Z_G` of the set with vacant boundary.
pub fn moebius_log_zg(sites: &[Site], beta: f64, mu: f64) -> Result<f64, ClusterError> {
    let n = sites.len();
    if n > MAX_THETA_SITES {
        return Err(ClusterError::ThetaTooLarge(n));
    }
    let mut total = 0.0;
    for mask in 1usize..(1 << n) {
        let a: Vec<Site> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| sites[i]).collect();
        if is_connected(&a) {
            total += theta_weight(&a, beta, mu)?;
        }
    }
    Ok(total)
}

/// Truncated weights of all shapes up to a size, at fixed `(beta, mu)`.
#[derive(Clone, Debug)]
pub struct ThetaTable {
    pub beta: f64,
    pub mu: f64,
    pub n_max: usize,
    shapes: &'static [Shape],
    theta: Vec<f64>,
}

impl ThetaTable {
    pub fn new(beta: f64, mu: f64, n_max: usize) -> Result<Self, ClusterError> {
        let shapes = shapes(n_max)?;
        let theta = shapes
            .par_iter()
            .map(|s| theta_weight(&s.0, beta, mu))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ThetaTable { beta, mu, n_max, shapes, theta })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Shape, f64)> {
        self.shapes.iter().zip(self.theta.iter().copied())
    }

    /// `sum over A containing 0 of theta(A) / |A|`, truncated at `n_max`.
    pub fn pressure_partial(&self) -> f64 {
        // a shape with k cells has k translates through the origin
        self.theta.iter().sum()
    }

    /// Boundary coefficient of `log Z_G`, truncated at `n_max`.
    pub fn wall_tension_partial(&self) -> f64 {
        -self.iter().map(|(s, t)| t * s.rows_above() as f64 / s.len() as f64).sum::<f64>()
    }

    /// `sum over |A| = n containing 0 of |theta(A)|`, for `n = 1..=n_max`.
    pub fn shell_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_max];
        for (s, t) in self.iter() {
            out[s.len() - 1] += s.len() as f64 * t.abs();
        }
        out
    }
}

/// Kotecky-Preiss certificate with `a(P) = scale |P|` and decay margin `d(P) = margin |P|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpReport {
    pub beta: f64,
    pub mu: f64,
    /// Decay margin `a` in `e^{-a n}`.
    pub kp_margin: f64,
    /// Scale `c` in `a(P) = c |P|`; 1 is the customary choice.
    pub kp_scale: f64,
    pub n_max: usize,
    pub growth_constant: f64,
    /// Single-site polymer: enumerated part of the incompatibility sum.
    pub exact_part: f64,
    /// Single-site polymer: bound on polymers larger than `n_max`.
    pub tail_bound: f64,
    /// Largest `(exact + tail) / (scale |P|)` over the checked polymers.
    pub worst_ratio: f64,
    pub worst_size: usize,
    pub checked_polymers: usize,
    pub pass: bool,
}

impl KpReport {
    pub fn total(&self) -> f64 {
        self.exact_part + self.tail_bound
    }

    /// Bound on `sum over A containing 0 with |A| > n of |theta(A)|`.
    pub fn tail_after(&self, n: usize) -> f64 {
        let a = self.kp_margin;
        self.kp_scale * (-a * (n as f64 + 1.0)).exp() / (1.0 - (-a).exp())
    }
}

/// Polymers checked explicitly by the certificate.
const KP_CHECK_SIZE: usize = 4;

fn closure(cells: &[Site]) -> Vec<Site> {
    let mut v: Vec<Site> = cells.iter().flat_map(|s| std::iter::once(*s).chain(s.neighbors())).collect();
    v.sort_by_key(|s| (s.y, s.x));
    v.dedup();
    v
}

/// `m[n-1] = sum over shapes S with n cells of (#translates of S meeting cl(P)) * zeta(S)`.
fn incompatible_moments(p: &[Site], shapes: &[Shape], beta: f64, mu: f64, n_max: usize) -> Vec<f64> {
    let cl = closure(p);
    const R: i32 = 32;
    const SIDE: usize = (2 * R + 1) as usize;
    let per_shape: Vec<(usize, f64)> = shapes
        .par_iter()
        .map(|s| {
            let mut grid = vec![false; SIDE * SIDE];
            let mut count = 0usize;
            for c in &cl {
                for t in &s.0 {
                    let idx = ((c.y - t.y + R) as usize) * SIDE + (c.x - t.x + R) as usize;
                    if !grid[idx] {
                        grid[idx] = true;
                        count += 1;
                    }
                }
            }
            (s.len(), count as f64 * polymer_weight(&s.0, beta, mu))
        })
        .collect();
    let mut m = vec![0.0; n_max];
    for (n, v) in per_shape {
        m[n - 1] += v;
    }
    m
}

/// Bound on the weighted number of polymers larger than `n_max` meeting a set of `cl` sites.
///
/// Uses `a_n <= 4.65^n` for fixed polyominoes and the maximal bond count
/// `2n - ceil(2 sqrt n)` of an `n`-cell polyomino.
pub fn kp_tail_bound(cl: usize, beta: f64, mu: f64, exponent: f64, n_max: usize) -> f64 {
    let x = POLYOMINO_GROWTH_BOUND * (2.0 * beta + beta * mu + exponent).exp();
    if x >= 1.0 {
        return f64::INFINITY;
    }
    let term = |n: usize| {
        let nf = n as f64;
        let bond_deficit = (2.0 * nf.sqrt() - 1e-12).ceil();
        cl as f64 * nf * (nf * x.ln() - beta * bond_deficit).exp()
    };
    let n0 = n_max + 1;
    let n1 = n0 + 20_000;
    let mut sum = 0.0;
    for n in n0..n1 {
        sum += term(n);
    }
    // beyond n1 drop the bond deficit except for its value at n1
    let nf = n1 as f64;
    let rest = cl as f64 * (nf * x.ln() - beta * (2.0 * nf.sqrt()).floor()).exp() * (nf - (nf - 1.0) * x) / (1.0 - x).powi(2);
    sum + rest
}

/// Check the KP condition for all polymers with at most four sites.
pub fn kp_check(beta: f64, mu: f64, kp_margin: f64, n_max: usize) -> Result<KpReport, ClusterError> {
    kp_check_scaled(beta, mu, kp_margin, 1.0, n_max)
}

pub fn kp_check_scaled(beta: f64, mu: f64, kp_margin: f64, kp_scale: f64, n_max: usize) -> Result<KpReport, ClusterError> {
    let moments = KpMoments::new(beta, mu, n_max)?;
    moments.report(kp_margin, kp_scale)
}

/// Precomputed incompatibility sums, reusable across margins and scales.
#[derive(Clone, Debug)]
pub struct KpMoments {
    beta: f64,
    mu: f64,
    n_max: usize,
    /// `(|P|, |cl(P)|, moments)` for each checked polymer shape.
    polymers: Vec<(usize, usize, Vec<f64>)>,
}

impl KpMoments {
    pub fn new(beta: f64, mu: f64, n_max: usize) -> Result<Self, ClusterError> {
        let all = shapes(n_max)?;
        let checked = shapes(KP_CHECK_SIZE.min(MAX_POLYMER_SIZE))?;
        let polymers = checked
            .iter()
            .map(|p| (p.len(), closure(&p.0).len(), incompatible_moments(&p.0, all, beta, mu, n_max)))
            .collect();
        Ok(KpMoments { beta, mu, n_max, polymers })
    }

    pub fn report(&self, kp_margin: f64, kp_scale: f64) -> Result<KpReport, ClusterError> {
        if !(kp_margin > 0.0 && kp_scale > 0.0) {
            return Err(ClusterError::BadMargin);
        }
        let e = kp_scale + kp_margin;
        let mut worst = (0.0f64, 0usize);
        let mut single = (0.0, 0.0);
        for (size, cl, m) in &self.polymers {
            let exact: f64 = m.iter().enumerate().map(|(k, v)| v * (e * (k + 1) as f64).exp()).sum();
            let tail = kp_tail_bound(*cl, self.beta, self.mu, e, self.n_max);
            let ratio = (exact + tail) / (kp_scale * *size as f64);
            if *size == 1 {
                single = (exact, tail);
            }
            if !(ratio <= worst.0) {
                worst = (ratio, *size);
            }
        }
        Ok(KpReport {
            beta: self.beta,
            mu: self.mu,
            kp_margin,
            kp_scale,
            n_max: self.n_max,
            growth_constant: POLYOMINO_GROWTH_BOUND,
            exact_part: single.0,
            tail_bound: single.1,
            worst_ratio: worst.0,
            worst_size: worst.1,
            checked_polymers: self.polymers.len(),
            pass: worst.0 <= 1.0,
        })
    }

    /// Certified `(scale, margin)` pair with the smallest series tail after `n_series`.
    pub fn best(&self, n_series: usize) -> Option<KpReport> {
        let mut best: Option<KpReport> = None;
        for si in 1..=20 {
            let scale = si as f64 * 0.05;
            for ai in 1..=60 {
                let margin = ai as f64 * 0.05;
                let r = self.report(margin, scale).ok()?;
                if r.pass && best.as_ref().is_none_or(|b| r.tail_after(n_series) < b.tail_after(n_series)) {
                    best = Some(r);
                }
            }
        }
        best
    }
}

/// A truncated series together with its certified remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    pub tail: f64,
}

fn require(report: &KpReport, table: &ThetaTable) -> Result<(), ClusterError> {
    if !report.pass {
        return Err(ClusterError::NotCertified { beta: report.beta, mu: report.mu });
    }
    if report.beta != table.beta || report.mu != table.mu {
        return Err(ClusterError::CertificateMismatch(report.beta, report.mu));
    }
    Ok(())
}

/// `beta p_inf` from the cluster series.
pub fn pressure_series(table: &ThetaTable, report: &KpReport) -> Result<SeriesValue, ClusterError> {
    require(report, table)?;
    Ok(SeriesValue { value: table.pressure_partial(), tail: report.tail_after(table.n_max) })
}

/// Wall tension of a straight vacant wall from the cluster series.
pub fn wall_tension_series(table: &ThetaTable, report: &KpReport) -> Result<SeriesValue, ClusterError> {
    require(report, table)?;
    Ok(SeriesValue { value: table.wall_tension_partial(), tail: report.tail_after(table.n_max) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResidual {
    pub width: u32,
    pub height: u32,
    pub log_zg: f64,
    pub bulk: f64,
    pub wall: f64,
    /// `log Z_G - beta p |Lambda| - tau |boundary|`
    pub residual: f64,
    /// `scale (8 G(a) + 4 theta L e^{-a L / theta})`, `L = sqrt(width * height)`.
    pub bound: f64,
}

/// Boundary expansion of `log Z_G` on a rectangle with vacant boundary.
pub fn lemma32_residual(
    width: u32,
    height: u32,
    table: &ThetaTable,
    report: &KpReport,
    theta: f64,
) -> Result<BoundaryResidual, ClusterError> {
    require(report, table)?;
    let region = Region::rectangle(width, height).map_err(OracleError::from)?;
    let aspect = region.aspect_ratio().unwrap_or(1.0);
    if aspect > theta {
        return Err(ClusterError::Aspect { aspect, theta });
    }
    let log_zg = if region.len() <= oracle::MAX_ENUM_SITES {
        oracle::zg_exact(&region, table.beta, table.mu, &BoundaryCondition::Vacant)?
    } else {
        let (w, h) = (width.min(height), width.max(height));
        oracle::rectangle_log_zg(w, h, table.beta, table.mu)?
    };
    let bulk = table.pressure_partial() * region.len() as f64;
    let wall = table.wall_tension_partial() * region.boundary().len() as f64;
    let a = report.kp_margin;
    let g = (-a).exp() / (1.0 - (-a).exp());
    let l = region.linear_size();
    let bound = report.kp_scale * (8.0 * g + 4.0 * theta * l * (-a * l / theta).exp());
    Ok(BoundaryResidual { width, height, log_zg, bulk, wall, residual: log_zg - bulk - wall, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FIXED: [usize; 10] = [1, 2, 6, 19, 63, 216, 760, 2725, 9910, 36446];

    #[test]
    fn polyomino_counts() {
        let all = shapes(10).unwrap();
        for (n, want) in FIXED.iter().enumerate() {
            assert_eq!(all.iter().filter(|s| s.len() == n + 1).count(), *want, "size {}", n + 1);
        }
        assert!(all.iter().all(|s| is_connected(&s.0) && canonical(&s.0) == *s));
    }

    #[test]
    fn anchored_animals() {
        let a = enumerate_animals(3, Site::new(5, -2)).unwrap();
        assert_eq!(a.len(), 1 + 4 + 18);
        assert!(a.iter().all(|p| p.contains(&Site::new(5, -2))));
        assert_eq!(enumerate_animals(11, Site::new(0, 0)), Err(ClusterError::TooLarge(11)));
    }

    #[test]
    fn theta_single_site_and_domino() {
        let (b, mu) = (1.0, -4.0);
        let z = (b * mu as f64).exp();
        assert_relative_eq!(theta_weight(&[Site::new(0, 0)], b, mu).unwrap(), z.ln_1p(), epsilon = 1e-16);
        let dom = [Site::new(0, 0), Site::new(1, 0)];
        let want = (1.0 + 2.0 * z + (2.0 * b * mu + b).exp()).ln() - 2.0 * z.ln_1p();
        assert_relative_eq!(theta_weight(&dom, b, mu).unwrap(), want, epsilon = 1e-16);
        assert_eq!(theta_weight(&[Site::new(0, 0), Site::new(2, 0)], b, mu).unwrap(), 0.0);
    }

    #[test]
    fn wall_tension_to_second_order() {
        let t = ThetaTable::new(1.0, -5.0, 2).unwrap();
        let vertical = theta_weight(&[Site::new(0, 0), Site::new(0, 1)], 1.0, -5.0).unwrap();
        assert_relative_eq!(t.wall_tension_partial(), -0.5 * vertical, epsilon = 1e-18);
        assert!(t.wall_tension_partial() < 0.0);
    }

    #[test]
    fn kp_passes_deep_in_gas() {
        let r = kp_check(1.0, -5.0, 0.1, 8).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.exact_part > (-5f64).exp() * 5.0);
        let near = kp_check(1.0, -2.5, 0.1, 8).unwrap();
        assert!(!near.pass);
    }

    #[test]
    fn uncertified_series_refused() {
        let t = ThetaTable::new(1.0, -2.5, 4).unwrap();
        let r = kp_check(1.0, -2.5, 0.1, 4).unwrap();
        assert_eq!(pressure_series(&t, &r), Err(ClusterError::NotCertified { beta: 1.0, mu: -2.5 }));
    }

    #[test]
    fn tail_bound_diverges_when_growth_wins() {
        assert_eq!(kp_tail_bound(5, 1.0, -1.0, 1.0, 8), f64::INFINITY);
        assert!(kp_tail_bound(5, 1.0, -6.0, 1.0, 8) < 1e-6);
    }

    #[test]
    fn moebius_reconstructs_log_zg() {
        let sites = [Site::new(0, 0), Site::new(1, 0), Site::new(2, 0), Site::new(1, 1), Site::new(3, 2)];
        let region = Region::from_sites(sites).unwrap();
        for &(b, mu) in &[(0.7, -1.3), (2.0, -3.0), (1.0, 0.5)] {
            let want = oracle::zg_exact(&region, b, mu, &BoundaryCondition::Vacant).unwrap();
            assert_relative_eq!(moebius_log_zg(&sites, b, mu).unwrap(), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_residual_is_flat_and_bounded() {
        let t = ThetaTable::new(1.0, -5.0, 10).unwrap();
        let r = KpMoments::new(1.0, -5.0, 10).unwrap().best(10).unwrap();
        let res: Vec<BoundaryResidual> = (3..=5).map(|l| lemma32_residual(l, l, &t, &r, 1.0).unwrap()).collect();
        for x in &res {
            assert!(x.residual.abs() < x.bound);
            assert_relative_eq!(x.residual, res[0].residual, max_relative = 0.05);
        }
        let long = lemma32_residual(2, 8, &t, &r, 4.0).unwrap();
        assert!(long.residual.abs() < long.bound);
        assert!(matches!(lemma32_residual(2, 8, &t, &r, 2.0), Err(ClusterError::Aspect { .. })));
    }

    #[test]
    fn shell_sums_decay_at_certified_rate() {
        let t = ThetaTable::new(1.0, -5.0, 8).unwrap();
        let r = KpMoments::new(1.0, -5.0, 8).unwrap().report(0.5, 0.2).unwrap();
        assert!(r.pass);
        for (k, s) in t.shell_sums().iter().enumerate() {
            assert!(*s <= r.kp_scale * (-r.kp_margin * (k + 1) as f64).exp(), "n = {}", k + 1);
        }
    }
}

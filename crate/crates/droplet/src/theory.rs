//! Closed-form droplet theory: the variational problem for the droplet fraction,
//! Gibbs-Thomson centers, and the Wulff constant of the square-lattice gas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::beta_critical;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(u32),
    #[error("{name} must be finite and positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("densities must satisfy 0 <= rho_g < rho_l <= 1 (got {rho_g}, {rho_l})")]
    Densities { rho_g: f64, rho_l: f64 },
    #[error("beta = {0} is not above the critical value")]
    NotBelowCritical(f64),
    #[error("delta = {delta} is at or below the critical value {delta_c}, no droplet branch")]
    Subcritical { delta: f64, delta_c: f64 },
    #[error("window inputs must satisfy V > 0, 0 < tilde V, 0 < delta V")]
    Window,
}

/// Thermodynamic input shared by the droplet formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseData {
    pub beta: f64,
    pub rho_g: f64,
    pub rho_l: f64,
    pub kappa: f64,
    pub w1: f64,
    pub d: u32,
}

fn positive(name: &'static str, value: f64) -> Result<f64, TheoryError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(TheoryError::NotPositive { name, value })
    }
}

fn check_dim(d: u32) -> Result<f64, TheoryError> {
    if d < 2 {
        Err(TheoryError::Dimension(d))
    } else {
        Ok(d as f64)
    }
}

impl PhaseData {
    pub fn new(beta: f64, rho_g: f64, rho_l: f64, kappa: f64, w1: f64, d: u32) -> Result<Self, TheoryError> {
        let p = PhaseData { beta, rho_g, rho_l, kappa, w1, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        check_dim(self.d)?;
        positive("beta", self.beta)?;
        positive("kappa", self.kappa)?;
        positive("w1", self.w1)?;
        let ok = self.rho_g.is_finite()
            && self.rho_l.is_finite()
            && self.rho_g >= 0.0
            && self.rho_g < self.rho_l
            && self.rho_l <= 1.0;
        if !ok {
            return Err(TheoryError::Densities { rho_g: self.rho_g, rho_l: self.rho_l });
        }
        Ok(())
    }

    pub fn density_gap(&self) -> f64 {
        self.rho_l - self.rho_g
    }

    /// Prefactor `c` in `Delta = c * v^{(d+1)/d} / |Lambda|`.
    pub fn delta_prefactor(&self) -> f64 {
        self.density_gap().powi(2) / (2.0 * self.kappa * self.w1)
    }

    /// Finite-size `Delta` for excess volume `v` in a region of `volume` sites.
    pub fn delta_of(&self, v: f64, volume: f64) -> f64 {
        let d = self.d as f64;
        self.delta_prefactor() * v.powf((d + 1.0) / d) / volume
    }

    /// Excess volume that realises `delta` in a region of `volume` sites.
    pub fn v_for_delta(&self, delta: f64, volume: f64) -> f64 {
        let d = self.d as f64;
        (delta * volume / self.delta_prefactor()).powf(d / (d + 1.0))
    }

    /// Particle number `rho_g |Lambda| + (rho_l - rho_g) v`.
    pub fn particles_for(&self, v: f64, volume: f64) -> f64 {
        self.rho_g * volume + self.density_gap() * v
    }

    /// Excess volume implied by an integer particle number.
    pub fn v_for_particles(&self, n: u64, volume: f64) -> f64 {
        (n as f64 - self.rho_g * volume) / self.density_gap()
    }
}

/// `Delta_c(d) = (1/d) ((d+1)/2)^{(d+1)/d}`.
pub fn delta_c(d: u32) -> Result<f64, TheoryError> {
    let d = check_dim(d)?;
    Ok(((d + 1.0) / 2.0).powf((d + 1.0) / d) / d)
}

/// `Phi_Delta(lambda) = lambda^{(d-1)/d} + Delta (1 - lambda)^2`.
pub fn phi(delta: f64, lambda: f64, d: u32) -> f64 {
    let d = d as f64;
    lambda.powf((d - 1.0) / d) + delta * (1.0 - lambda).powi(2)
}

/// Largest root in (0, 1) of `((d-1)/d) lambda^{-1/d} = 2 Delta (1 - lambda)`.
///
/// `None` when the equation has no root. At `Delta_c` the root is `2/(d+1)`.
pub fn lambda_delta(delta: f64, d: u32) -> Result<Option<f64>, TheoryError> {
    let df = check_dim(d)?;
    positive("delta", delta)?;
    let a = (df - 1.0) / df;
    let g = |l: f64| 2.0 * delta * (1.0 - l) - a * l.powf(-1.0 / df);
    let dg = |l: f64| -2.0 * delta + a / df * l.powf(-1.0 / df - 1.0);
    // g is concave on (0, 1); its maximum sits at lstar
    let lstar = (a / (2.0 * delta * df)).powf(df / (df + 1.0));
    if lstar >= 1.0 {
        return Ok(None);
    }
    let gmax = g(lstar);
    let scale = a * lstar.powf(-1.0 / df);
    if gmax < -1e-14 * scale {
        return Ok(None);
    }
    if gmax <= 1e-14 * scale {
        return Ok(Some(lstar));
    }
    let (mut lo, mut hi) = (lstar, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut l = 0.5 * (lo + hi);
    for _ in 0..3 {
        let step = g(l) / dg(l);
        let next = l - step;
        if next > lstar && next < 1.0 {
            l = next;
        }
    }
    Ok(Some(l))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropletSolution {
    pub delta: f64,
    pub d: u32,
    /// Nontrivial stationary point, when it exists.
    pub lambda_delta: Option<f64>,
    pub phi_star: f64,
    /// All global minimisers in [0, 1]; two entries at exactly `Delta_c`.
    pub minimizers: Vec<f64>,
}

impl DropletSolution {
    pub fn degenerate(&self) -> bool {
        self.minimizers.len() > 1
    }
}

/// Global minimum of `Phi_Delta` over [0, 1].
pub fn phi_star(delta: f64, d: u32) -> Result<DropletSolution, TheoryError> {
    let lam = lambda_delta(delta, d)?;
    let mut cands = vec![(0.0, delta), (1.0, 1.0)];
    if let Some(l) = lam {
        cands.push((l, phi(delta, l, d)));
    }
    let best = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * best.abs().max(1.0);
    let mut minimizers: Vec<f64> = cands.iter().filter(|c| c.1 - best <= tol).map(|c| c.0).collect();
    minimizers.sort_by(f64::total_cmp);
    minimizers.dedup();
    Ok(DropletSolution { delta, d, lambda_delta: lam, phi_star: best, minimizers })
}

/// Both sides of `((d-1)/d) Phi* + ((d+1)/d) Delta (1-lambda)^2 = ((d-1)/d) lambda^{-1/d}`
/// on the droplet branch.
pub fn bracket_identity(delta: f64, d: u32) -> Result<(f64, f64), TheoryError> {
    let dc = delta_c(d)?;
    let lam = match lambda_delta(delta, d)? {
        Some(l) => l,
        None => return Err(TheoryError::Subcritical { delta, delta_c: dc }),
    };
    let df = d as f64;
    let lhs = (df - 1.0) / df * phi(delta, lam, d) + (df + 1.0) / df * delta * (1.0 - lam).powi(2);
    let rhs = (df - 1.0) / df * lam.powf(-1.0 / df);
    Ok((lhs, rhs))
}

/// Center of a Gibbs-Thomson prediction and its `(1 -+ eps)` band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBand {
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
}

impl GtBand {
    fn new(center: f64, eps: f64) -> Self {
        GtBand { center, lower: (1.0 - eps) * center, upper: (1.0 + eps) * center }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower.min(self.upper) && x <= self.lower.max(self.upper)
    }
}

/// Excess gas density around a droplet of `volume` sites.
pub fn gt_density(phase: &PhaseData, volume: f64, eps: f64) -> Result<GtBand, TheoryError> {
    phase.validate()?;
    positive("droplet volume", volume)?;
    let d = phase.d as f64;
    let c = (d - 1.0) / d * phase.kappa * phase.w1 / (phase.density_gap() * volume.powf(1.0 / d));
    Ok(GtBand::new(c, eps))
}

/// `beta (p_L - p_inf)` for a droplet of `volume` sites.
pub fn gt_pressure(phase: &PhaseData, volume: f64, eps: f64) -> Result<GtBand, TheoryError> {
    phase.validate()?;
    positive("droplet volume", volume)?;
    let d = phase.d as f64;
    let c = (d - 1.0) / d * phase.rho_g * phase.w1 / (phase.density_gap() * volume.powf(1.0 / d));
    Ok(GtBand::new(c, eps))
}

/// Effective droplet-problem parameter after enlarging the box by `tilde_v` sites.
///
/// Returns `(alpha, alpha^{(d+1)/d} Delta)`.
pub fn alpha_shift(
    rho_g: f64,
    rho_l: f64,
    delta_v: f64,
    tilde_v: f64,
    d: u32,
    delta: f64,
) -> Result<(f64, f64), TheoryError> {
    let df = check_dim(d)?;
    positive("delta V", delta_v)?;
    if !(rho_g >= 0.0 && rho_g < rho_l) {
        return Err(TheoryError::Densities { rho_g, rho_l });
    }
    let alpha = 1.0 - rho_g / (rho_l - rho_g) * (tilde_v / delta_v);
    Ok((alpha, alpha.powf((df + 1.0) / df) * delta))
}

/// Where `tilde V` sits inside `V^{1 - 2/d + 1/(d+1)} << tilde V << delta V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub exponent: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `tilde V / lower_bound`
    pub lower_ratio: f64,
    /// `tilde V / upper_bound`
    pub upper_ratio: f64,
    pub above_lower: bool,
    pub below_upper: bool,
}

/// Ratio that counts as "much larger" in [`window_check`].
pub const WINDOW_SEPARATION: f64 = 4.0;

pub fn window_check(volume: f64, delta_v: f64, tilde_v: f64, d: u32) -> Result<WindowReport, TheoryError> {
    let df = check_dim(d)?;
    if !(volume > 0.0 && delta_v > 0.0 && tilde_v > 0.0) {
        return Err(TheoryError::Window);
    }
    let exponent = 1.0 - 2.0 / df + 1.0 / (df + 1.0);
    let lower_bound = volume.powf(exponent);
    let lower_ratio = tilde_v / lower_bound;
    let upper_ratio = tilde_v / delta_v;
    Ok(WindowReport {
        exponent,
        lower_bound,
        upper_bound: delta_v,
        lower_ratio,
        upper_ratio,
        above_lower: lower_ratio >= WINDOW_SEPARATION,
        below_upper: upper_ratio <= 1.0 / WINDOW_SEPARATION,
    })
}

/// Surface area of the unit sphere in R^d.
pub fn unit_sphere_area(d: u32) -> f64 {
    let d = d as f64;
    2.0 * std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0)
}

/// Wulff constant for an isotropic surface tension `beta sigma`.
pub fn iso_w1(d: u32, beta_sigma: f64) -> Result<f64, TheoryError> {
    let df = check_dim(d)?;
    positive("beta sigma", beta_sigma)?;
    let s = unit_sphere_area(d);
    Ok(beta_sigma * s * (s / df).powf(-(df - 1.0) / df))
}

/// Onsager spontaneous magnetization of the Ising model at coupling `k`.
pub fn onsager_magnetization(k: f64) -> f64 {
    let s = (2.0 * k).sinh();
    let x = 1.0 - s.powi(-4);
    if x <= 0.0 {
        0.0
    } else {
        x.powf(0.125)
    }
}

/// Coexisting densities `(rho_g, rho_l)` of the lattice gas at inverse temperature `beta`.
pub fn coexistence_densities(beta: f64) -> Result<(f64, f64), TheoryError> {
    positive("beta", beta)?;
    if beta <= beta_critical() {
        return Err(TheoryError::NotBelowCritical(beta));
    }
    let m = onsager_magnetization(beta / 4.0);
    Ok(((1.0 - m) / 2.0, (1.0 + m) / 2.0))
}

/// Phase data from the exact solution plus a measured compressibility.
pub fn onsager_phase_data(beta: f64, kappa: f64) -> Result<PhaseData, TheoryError> {
    let (rho_g, rho_l) = coexistence_densities(beta)?;
    PhaseData::new(beta, rho_g, rho_l, kappa, exact_w1(beta)?, 2)
}

/// Surface tension (times beta) of an axis-parallel interface, `2K + ln tanh K` at `K = beta/4`.
pub fn tau_axis(beta: f64) -> f64 {
    let k = beta / 4.0;
    (2.0 * k + k.tanh().ln()).max(0.0)
}

/// Exact surface tension (times beta) of the square-lattice Ising model at coupling `k`
/// for an interface with unit normal at angle `theta`.
///
/// Uses the support-function form: `tau = |c| asinh(|c| m) + |s| asinh(|s| m)` where
/// `m >= 0` solves `sqrt(1 + c^2 m^2) + sqrt(1 + s^2 m^2) = cosh^2(2k) / sinh(2k)`.
pub fn ising_surface_tension(k: f64, theta: f64) -> f64 {
    let big_c = (2.0 * k).cosh().powi(2) / (2.0 * k).sinh();
    if !(big_c > 2.0) {
        return 0.0;
    }
    let (c, s) = (theta.cos().abs(), theta.sin().abs());
    let f = |m: f64| (1.0 + c * c * m * m).sqrt() + (1.0 + s * s * m * m).sqrt() - big_c;
    let (mut lo, mut hi) = (0.0, 2.0 * big_c);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let m = 0.5 * (lo + hi);
    c * (c * m).asinh() + s * (s * m).asinh()
}

/// Area of the Wulff shape `{x : x.n(theta) <= tau(theta) for all theta}` by polygonal
/// approximation with `samples` directions, Richardson-extrapolated.
pub fn wulff_area<F: Fn(f64) -> f64>(tau: F, samples: usize) -> f64 {
    let poly = |m: usize| {
        let dt = std::f64::consts::TAU / m as f64;
        let lines: Vec<(f64, f64, f64)> = (0..m)
            .map(|i| {
                let t = i as f64 * dt;
                (t.cos(), t.sin(), tau(t))
            })
            .collect();
        let mut pts = Vec::with_capacity(m);
        for i in 0..m {
            let (a1, b1, c1) = lines[i];
            let (a2, b2, c2) = lines[(i + 1) % m];
            let det = a1 * b2 - a2 * b1;
            pts.push(((c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det));
        }
        let mut area = 0.0;
        for i in 0..m {
            let (x1, y1) = pts[i];
            let (x2, y2) = pts[(i + 1) % m];
            area += x1 * y2 - x2 * y1;
        }
        0.5 * area
    };
    let a1 = poly(samples);
    let a2 = poly(2 * samples);
    (4.0 * a2 - a1) / 3.0
}

/// Wulff constant `w1 = 2 sqrt(area of the Wulff shape)` for the lattice gas at `beta`.
pub fn exact_w1(beta: f64) -> Result<f64, TheoryError> {
    positive("beta", beta)?;
    if beta <= beta_critical() {
        return Err(TheoryError::NotBelowCritical(beta));
    }
    let k = beta / 4.0;
    let area = wulff_area(|t| ising_surface_tension(k, t), 1 << 14);
    Ok(2.0 * area.sqrt())
}

//! Peierls contours and droplet events.
//!
//! A contour is a closed loop on the dual lattice separating occupied from
//! vacant sites. Site `(x, y)` is the unit square `[x, x+1] x [y, y+1]`, so
//! dual vertices are integer points. Sites outside the region count as vacant.
//! At a vertex touched by two diagonal occupied squares the loop turns so the
//! squares end up on different contours.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Config, Region, Site};
use crate::theory::{self, PhaseData, TheoryError};

#[derive(Debug, Error, PartialEq)]
pub enum ContourError {
    #[error("droplet interior covers the whole region")]
    NoExterior,
    #[error("contour dump: {0}")]
    Json(String),
    #[error("contour {index}: {reason}")]
    BadContour { index: usize, reason: String },
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

/// Direction of a dual edge: east, north, west, south.
const STEP: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    /// Dual vertices in order; the loop closes from the last back to the first.
    pub vertices: Vec<(i32, i32)>,
    /// Enclosed sites of the region, sorted by row then column.
    pub interior: Vec<Site>,
    pub diameter: f64,
    pub is_external: bool,
}

impl Contour {
    pub fn edge_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn volume(&self) -> usize {
        self.interior.len()
    }

    pub fn contains(&self, s: Site) -> bool {
        self.interior.binary_search_by_key(&(s.y, s.x), |t| (t.y, t.x)).is_ok()
    }

    /// Undirected dual edges, each as an ordered pair of endpoints.
    pub fn edges(&self) -> Vec<((i32, i32), (i32, i32))> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }

    /// Twice the signed area; positive for loops around occupied squares.
    pub fn signed_area2(&self) -> i64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.0 as i64 * b.1 as i64 - b.0 as i64 * a.1 as i64
            })
            .sum()
    }
}

struct Grid {
    x0: i32,
    y0: i32,
    w: usize,
    h: usize,
}

impl Grid {
    fn around(region: &Region, pad: i32) -> Self {
        let (xmin, xmax, ymin, ymax) = region.bounding_box();
        Grid {
            x0: xmin - pad,
            y0: ymin - pad,
            w: (xmax - xmin + 1 + 2 * pad) as usize,
            h: (ymax - ymin + 1 + 2 * pad) as usize,
        }
    }

    fn idx(&self, x: i32, y: i32) -> usize {
        (y - self.y0) as usize * self.w + (x - self.x0) as usize
    }
}

/// All contours of a configuration, with `is_external` unset.
pub fn extract_contours(config: &Config) -> Vec<Contour> {
    let region = config.region();
    // squares live on a grid padded by one vacant ring; vertices on a grid one larger
    let sq = Grid::around(region, 1);
    let mut occ = vec![false; sq.w * sq.h];
    for i in 0..config.len() {
        if config.get(i) {
            let s = region.site(i);
            occ[sq.idx(s.x, s.y)] = true;
        }
    }
    let vx = Grid { x0: sq.x0, y0: sq.y0, w: sq.w + 1, h: sq.h + 1 };
    let mut out_dirs = vec![0u8; vx.w * vx.h];
    let at = |x: i32, y: i32| occ[sq.idx(x, y)];
    for i in 0..config.len() {
        if !config.get(i) {
            continue;
        }
        let s = region.site(i);
        let (x, y) = (s.x, s.y);
        if !at(x, y - 1) {
            out_dirs[vx.idx(x, y)] |= 1 << 0;
        }
        if !at(x + 1, y) {
            out_dirs[vx.idx(x + 1, y)] |= 1 << 1;
        }
        if !at(x, y + 1) {
            out_dirs[vx.idx(x + 1, y + 1)] |= 1 << 2;
        }
        if !at(x - 1, y) {
            out_dirs[vx.idx(x, y + 1)] |= 1 << 3;
        }
    }
    let mut contours = Vec::new();
    for start in 0..out_dirs.len() {
        while out_dirs[start] != 0 {
            let d0 = out_dirs[start].trailing_zeros() as usize;
            let mut v = ((start % vx.w) as i32 + vx.x0, (start / vx.w) as i32 + vx.y0);
            let mut d = d0;
            let mut vertices = Vec::new();
            loop {
                out_dirs[vx.idx(v.0, v.1)] &= !(1 << d);
                vertices.push(v);
                v = (v.0 + STEP[d].0, v.1 + STEP[d].1);
                let here = vx.idx(v.0, v.1);
                // the consumed first edge still counts when choosing the turn at the start
                let avail = out_dirs[here] | if here == start { 1 << d0 } else { 0 };
                match [(d + 1) % 4, d, (d + 3) % 4].into_iter().find(|&e| avail >> e & 1 == 1) {
                    Some(e) if here == start && e == d0 => break,
                    Some(e) => d = e,
                    None => break,
                }
            }
            let interior = enclosed_sites(&vertices, region);
            let diameter = diameter(&interior);
            contours.push(Contour { vertices, interior, diameter, is_external: false });
        }
    }
    contours
}

fn enclosed_sites(vertices: &[(i32, i32)], region: &Region) -> Vec<Site> {
    let n = vertices.len();
    let mut rows: BTreeMap<i32, Vec<i32>> = BTreeMap::new();
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        if a.0 == b.0 {
            rows.entry(a.1.min(b.1)).or_default().push(a.0);
        }
    }
    let mut sites = Vec::new();
    for (y, mut xs) in rows {
        xs.sort_unstable();
        for pair in xs.chunks(2) {
            if let [a, b] = pair {
                sites.extend((*a..*b).map(|x| Site::new(x, y)).filter(|s| region.contains(*s)));
            }
        }
    }
    sites
}

/// Largest Euclidean distance between sites of a set sorted by row.
pub fn diameter(sites: &[Site]) -> f64 {
    // the farthest pair lies on the convex hull, hence among the row extremes
    let mut cand: Vec<Site> = Vec::new();
    let mut i = 0;
    while i < sites.len() {
        let mut j = i;
        while j + 1 < sites.len() && sites[j + 1].y == sites[i].y {
            j += 1;
        }
        cand.push(sites[i]);
        if j > i {
            cand.push(sites[j]);
        }
        i = j + 1;
    }
    if cand.len() > 2000 {
        cand = convex_hull(cand);
    }
    let mut best = 0i64;
    for a in 0..cand.len() {
        for b in a + 1..cand.len() {
            let dx = (cand[a].x - cand[b].x) as i64;
            let dy = (cand[a].y - cand[b].y) as i64;
            best = best.max(dx * dx + dy * dy);
        }
    }
    (best as f64).sqrt()
}

fn convex_hull(mut pts: Vec<Site>) -> Vec<Site> {
    pts.sort_by_key(|s| (s.x, s.y));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Site, a: Site, b: Site| {
        (a.x - o.x) as i64 * (b.y - o.y) as i64 - (a.y - o.y) as i64 * (b.x - o.x) as i64
    };
    let mut hull: Vec<Site> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Site>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Mark contours whose interior is not enclosed by another contour.
pub fn classify_external(contours: &mut [Contour]) {
    let mut order: Vec<usize> = (0..contours.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(contours[i].volume()));
    let mut covered = std::collections::HashSet::new();
    for i in order {
        let c = &mut contours[i];
        let rep = match c.interior.first() {
            Some(s) => *s,
            None => {
                c.is_external = false;
                continue;
            }
        };
        c.is_external = !covered.contains(&rep);
        if c.is_external {
            covered.extend(c.interior.iter().copied());
        }
    }
}

/// Contours with externality resolved.
pub fn contours_of(config: &Config) -> Vec<Contour> {
    let mut c = extract_contours(config);
    classify_external(&mut c);
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropletStats {
    pub volume: usize,
    pub interior_particles: usize,
    pub exterior_particles: usize,
    pub exterior_density: f64,
}

pub fn droplet_stats(config: &Config, gamma0: &Contour) -> Result<DropletStats, ContourError> {
    let volume = gamma0.volume();
    let outside = config.len() - volume;
    if outside == 0 {
        return Err(ContourError::NoExterior);
    }
    let region = config.region();
    let interior_particles = gamma0
        .interior
        .iter()
        .filter(|s| region.index_of(**s).is_some_and(|i| config.get(i)))
        .count();
    let exterior_particles = config.particle_count() - interior_particles;
    Ok(DropletStats {
        volume,
        interior_particles,
        exterior_particles,
        exterior_density: exterior_particles as f64 / outside as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    SubcriticalOk,
    UniqueLarge { stats: DropletStats },
    Anomalous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventVerdict {
    pub kind: EventKind,
    pub checks: BTreeMap<String, bool>,
    pub threshold: f64,
    pub max_diameter: f64,
    pub large_external: usize,
    /// Stats of the largest external contour, when one exists.
    pub largest: Option<DropletStats>,
}

/// Inputs fixed across the configurations of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSpec {
    pub phase: PhaseData,
    pub v_l: f64,
    pub epsilon: f64,
    /// Contours longer than `k_log * ln L` count as large.
    pub k_log: f64,
    /// Measured `beta (p_L - p_inf)`, checked against the pressure band when present.
    pub pressure: Option<f64>,
}

pub fn classify_event(config: &Config, spec: &EventSpec) -> Result<EventVerdict, ContourError> {
    let contours = contours_of(config);
    let region = config.region();
    let threshold = spec.k_log * region.linear_size().ln();
    let max_diameter = contours.iter().map(|c| c.diameter).fold(0.0, f64::max);
    let large: Vec<&Contour> = contours.iter().filter(|c| c.is_external && c.diameter > threshold).collect();
    let largest = contours
        .iter()
        .filter(|c| c.is_external)
        .max_by_key(|c| c.volume())
        .map(|c| droplet_stats(config, c))
        .transpose()
        .ok()
        .flatten();
    let mut checks = BTreeMap::new();
    let any_large = contours.iter().any(|c| c.diameter > threshold);
    checks.insert("all_small".to_string(), !any_large);
    checks.insert("unique_large".to_string(), large.len() == 1);
    let mut verdict = EventVerdict {
        kind: EventKind::Anomalous,
        checks,
        threshold,
        max_diameter,
        large_external: large.len(),
        largest,
    };
    if !any_large {
        verdict.kind = EventKind::SubcriticalOk;
        return Ok(verdict);
    }
    if large.len() != 1 {
        return Ok(verdict);
    }
    let stats = droplet_stats(config, large[0])?;
    let delta = spec.phase.delta_of(spec.v_l, region.len() as f64);
    let Some(lambda) = theory::lambda_delta(delta, 2)? else {
        verdict.checks.insert("lambda_exists".to_string(), false);
        return Ok(verdict);
    };
    let eps = spec.epsilon;
    let v0 = lambda * spec.v_l;
    let vol = stats.volume as f64;
    let inside = stats.interior_particles as f64;
    let rho_l = spec.phase.rho_l;
    let volume_ok = v0 * (1.0 - eps) <= vol && vol <= v0 * (1.0 + eps);
    let particles_ok = rho_l * v0 * (1.0 - eps) <= inside && inside <= rho_l * v0 * (1.0 + eps);
    let density_band = theory::gt_density(&spec.phase, vol, eps)?;
    let c = &mut verdict.checks;
    c.insert("volume_window".to_string(), volume_ok);
    c.insert("particle_window".to_string(), particles_ok);
    c.insert("gt_density".to_string(), density_band.contains(stats.exterior_density - spec.phase.rho_g));
    if let Some(p) = spec.pressure {
        c.insert("gt_pressure".to_string(), theory::gt_pressure(&spec.phase, vol, eps)?.contains(p));
    }
    if volume_ok && particles_ok {
        verdict.kind = EventKind::UniqueLarge { stats };
    }
    Ok(verdict)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourRecord {
    pub vertices: Vec<(i32, i32)>,
    pub interior_size: usize,
    pub diameter: f64,
    pub external: bool,
}

impl From<&Contour> for ContourRecord {
    fn from(c: &Contour) -> Self {
        ContourRecord {
            vertices: c.vertices.clone(),
            interior_size: c.volume(),
            diameter: c.diameter,
            external: c.is_external,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourDump {
    pub version: u32,
    pub contours: Vec<ContourRecord>,
}

pub const DUMP_VERSION: u32 = 1;

pub fn write_dump(contours: &[Contour]) -> String {
    let dump = ContourDump { version: DUMP_VERSION, contours: contours.iter().map(ContourRecord::from).collect() };
    serde_json::to_string_pretty(&dump).expect("contour dump serializes")
}

/// Parse a dump and check that every loop is closed and made of unit steps.
pub fn parse_dump(text: &str) -> Result<ContourDump, ContourError> {
    let dump: ContourDump = serde_json::from_str(text).map_err(|e| ContourError::Json(e.to_string()))?;
    if dump.version != DUMP_VERSION {
        return Err(ContourError::Json(format!("unsupported version {}", dump.version)));
    }
    for (index, c) in dump.contours.iter().enumerate() {
        let bad = |reason: &str| ContourError::BadContour { index, reason: reason.to_string() };
        let n = c.vertices.len();
        if n < 4 || n % 2 == 1 {
            return Err(bad("a loop needs an even number of at least 4 edges"));
        }
        for i in 0..n {
            let (a, b) = (c.vertices[i], c.vertices[(i + 1) % n]);
            let step = (b.0 as i64 - a.0 as i64).abs() + (b.1 as i64 - a.1 as i64).abs();
            if step != 1 {
                return Err(bad("consecutive vertices are not adjacent"));
            }
        }
        if !(c.diameter.is_finite() && c.diameter >= 0.0) {
            return Err(bad("diameter must be finite and nonnegative"));
        }
    }
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn cfg(w: u32, h: u32, sites: &[(i32, i32)]) -> Config {
        let r = Arc::new(Region::rectangle(w, h).unwrap());
        let s: Vec<Site> = sites.iter().map(|&(x, y)| Site::new(x, y)).collect();
        Config::from_sites(r, &s).unwrap()
    }

    #[test]
    fn single_site_and_block() {
        let c = contours_of(&cfg(3, 3, &[(1, 1)]));
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].edge_count(), c[0].volume(), c[0].diameter), (4, 1, 0.0));
        assert!(c[0].is_external);
        let b = contours_of(&cfg(4, 4, &[(1, 1), (2, 1), (1, 2), (2, 2)]));
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].edge_count(), b[0].volume()), (8, 4));
        assert!((b[0].diameter - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b[0].signed_area2(), 8);
    }

    #[test]
    fn diagonal_pair_splits() {
        let c = contours_of(&cfg(3, 3, &[(0, 0), (1, 1)]));
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|k| k.edge_count() == 4 && k.is_external));
        let d = contours_of(&cfg(3, 3, &[(1, 0), (0, 1)]));
        assert_eq!(d.len(), 2);
        // a loop traced from a saddle vertex must close there
        let e = contours_of(&cfg(4, 4, &[(1, 1), (0, 0), (2, 2), (1, 3), (3, 1)]));
        assert_eq!(e.len(), 5);
        assert!(e.iter().all(|k| k.edge_count() == 4));
    }

    #[test]
    fn ring_has_inner_contour() {
        let ring: Vec<(i32, i32)> =
            (0..3).flat_map(|x| (0..3).map(move |y| (x, y))).filter(|&p| p != (1, 1)).collect();
        let mut c = contours_of(&cfg(5, 5, &ring.iter().map(|&(x, y)| (x + 1, y + 1)).collect::<Vec<_>>()));
        c.sort_by_key(|k| std::cmp::Reverse(k.volume()));
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].volume(), c[0].is_external), (9, true));
        assert_eq!((c[1].volume(), c[1].is_external), (1, false));
        assert_eq!(c[1].interior, vec![Site::new(2, 2)]);
        assert!(c[1].signed_area2() < 0);
    }

    #[test]
    fn stats_partition() {
        let mut s = vec![(4, 4), (5, 4), (4, 5), (5, 5)];
        let c = cfg(10, 10, &s);
        let k = &contours_of(&c)[0];
        let st = droplet_stats(&c, k).unwrap();
        assert_eq!((st.volume, st.interior_particles, st.exterior_density), (4, 4, 0.0));
        s.push((0, 9));
        let c = cfg(10, 10, &s);
        let k = contours_of(&c).into_iter().max_by_key(|k| k.volume()).unwrap();
        let st = droplet_stats(&c, &k).unwrap();
        assert_eq!(st.exterior_particles, 1);
        assert!((st.exterior_density - 1.0 / 96.0).abs() < 1e-15);
        let full = Config::full(Arc::new(Region::rectangle(2, 2).unwrap()));
        assert_eq!(droplet_stats(&full, &contours_of(&full)[0]), Err(ContourError::NoExterior));
    }

    #[test]
    fn hull_diameter_matches_brute_force() {
        let pts: Vec<Site> = (0..60).flat_map(|y| (0..60).map(move |x| Site::new(x, y)))
            .filter(|s| (s.x - 30).pow(2) + (s.y - 30).pow(2) <= 800).collect();
        let hull = convex_hull(pts.clone());
        let brute = pts.iter().flat_map(|a| pts.iter().map(move |b| {
            ((a.x - b.x).pow(2) + (a.y - b.y).pow(2)) as f64
        })).fold(0.0, f64::max).sqrt();
        assert!((diameter(&pts) - brute).abs() < 1e-12);
        assert!(hull.len() < pts.len());
    }

    #[test]
    fn dump_round_trip_and_rejects_open_loops() {
        let c = contours_of(&cfg(4, 4, &[(0, 0), (1, 0), (3, 3)]));
        let text = write_dump(&c);
        let d = parse_dump(&text).unwrap();
        assert_eq!(d.contours.len(), 2);
        let mut broken = d.clone();
        broken.contours[0].vertices.pop();
        broken.contours[0].vertices.pop();
        broken.contours[0].vertices.push((50, 50));
        let t = serde_json::to_string(&broken).unwrap();
        assert!(matches!(parse_dump(&t), Err(ContourError::BadContour { index: 0, .. })));
        assert!(matches!(parse_dump("{"), Err(ContourError::Json(_))));
    }
}

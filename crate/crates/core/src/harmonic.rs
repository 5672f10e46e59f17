//! Simple random walks and discrete harmonic functions on `Z^2`.
//!
//! Regions are finite vertex sets; a vertex is interior when all four
//! lattice neighbours belong to the region. Harmonic functions satisfy the
//! four-point mean value property at interior vertices.

use std::collections::{HashMap, HashSet};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::DobrushinDomain;
use crate::rng::RngStream;

/// Direct solves up to this many unknowns, conjugate gradients beyond.
pub const DIRECT_LIMIT: usize = 100_000;
/// Residual target of every solve.
pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn neighbours(self) -> [Site; 4] {
        let Site { x, y } = self;
        [Site::new(x + 1, y), Site::new(x, y + 1), Site::new(x - 1, y), Site::new(x, y - 1)]
    }

    #[cfg(test)]
    fn adjacent(self, other: Site) -> bool {
        (self.x - other.x).abs() + (self.y - other.y).abs() == 1
    }
}

/// Finite set of lattice sites with interior/boundary classification.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeRegion {
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
    interior: Vec<bool>,
}

impl LatticeRegion {
    pub fn from_sites(sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        let mut sites: Vec<Site> = sites.into_iter().collect();
        sites.sort_by_key(|s| (s.y, s.x));
        sites.dedup();
        if sites.is_empty() {
            return Err(Error::InvalidArgument("empty region".into()));
        }
        let index: HashMap<Site, usize> = sites.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let interior = sites.iter().map(|s| s.neighbours().iter().all(|n| index.contains_key(n))).collect();
        Ok(Self { sites, index, interior })
    }

    /// Sites of `[0, w] x [0, h]`.
    pub fn rectangle(w: i32, h: i32) -> Result<Self> {
        Self::from_sites((0..=h).flat_map(|y| (0..=w).map(move |x| Site::new(x, y))))
    }

    /// Sites inside or on a simple polygon with lattice corners.
    pub fn from_polygon(corners: &[Site]) -> Result<Self> {
        if corners.len() < 3 {
            return Err(Error::InvalidArgument("polygon needs three corners".into()));
        }
        let (x0, x1) = (corners.iter().map(|c| c.x).min().unwrap(), corners.iter().map(|c| c.x).max().unwrap());
        let (y0, y1) = (corners.iter().map(|c| c.y).min().unwrap(), corners.iter().map(|c| c.y).max().unwrap());
        let poly: Vec<(f64, f64)> = corners.iter().map(|c| (c.x as f64, c.y as f64)).collect();
        let sites = (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| Site::new(x, y))).filter(|s| inside_or_on(&poly, s.x as f64, s.y as f64));
        Self::from_sites(sites.collect::<Vec<_>>())
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

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.index.get(&s).copied()
    }

    pub fn contains(&self, s: Site) -> bool {
        self.index.contains_key(&s)
    }

    pub fn is_interior(&self, s: Site) -> bool {
        self.index_of(s).is_some_and(|i| self.interior[i])
    }

    pub fn interior_sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.sites.iter().zip(&self.interior).filter(|(_, &i)| i).map(|(&s, _)| s)
    }

    pub fn boundary_sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.sites.iter().zip(&self.interior).filter(|(_, &i)| !i).map(|(&s, _)| s)
    }

    pub fn neighbours_in(&self, s: Site) -> impl Iterator<Item = Site> + '_ {
        s.neighbours().into_iter().filter(move |n| self.contains(*n))
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for n in self.neighbours_in(self.sites[i]) {
                let j = self.index[&n];
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.len()
    }
}

fn inside_or_on(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (ax, ay) = poly[i];
        let (bx, by) = poly[(i + 1) % n];
        let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
        if cross.abs() < 1e-12 && x >= ax.min(bx) - 1e-12 && x <= ax.max(bx) + 1e-12 && y >= ay.min(by) - 1e-12 && y <= ay.max(by) + 1e-12 {
            return true;
        }
        if (ay > y) != (by > y) && x < ax + (y - ay) * (bx - ax) / (by - ay) {
            inside = !inside;
        }
    }
    inside
}

/// Graph a walk moves on.
#[derive(Debug, Clone, Copy)]
pub enum WalkGraph<'a> {
    Plane,
    /// Uniform steps among the neighbours inside the region.
    Region(&'a LatticeRegion),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Hit,
    Cap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    pub sites: Vec<Site>,
    pub stop: StopReason,
}

impl WalkPath {
    pub fn steps(&self) -> usize {
        self.sites.len() - 1
    }

    pub fn end(&self) -> Site {
        *self.sites.last().expect("walk has a start")
    }
}

/// Nearest-neighbour walk from `start` until it enters `stop` or makes
/// `cap` steps. Hitting the cap is reported in the path, not as an error.
pub fn run_walk<R: Rng>(graph: WalkGraph<'_>, start: Site, stop: &HashSet<Site>, rng: &mut R, cap: usize) -> Result<WalkPath> {
    if stop.is_empty() {
        return Err(Error::InvalidArgument("empty stop set".into()));
    }
    if let WalkGraph::Region(r) = graph {
        if !r.contains(start) {
            return Err(Error::InvalidArgument(format!("start {start:?} outside the region")));
        }
    }
    let mut sites = vec![start];
    let mut here = start;
    let mut buf = [Site::new(0, 0); 4];
    while !stop.contains(&here) {
        if sites.len() > cap {
            return Ok(WalkPath { sites, stop: StopReason::Cap });
        }
        here = match graph {
            WalkGraph::Plane => here.neighbours()[rng.random_range(0..4)],
            WalkGraph::Region(r) => {
                let mut k = 0;
                for n in r.neighbours_in(here) {
                    buf[k] = n;
                    k += 1;
                }
                if k == 0 {
                    return Err(Error::InvalidArgument(format!("{here:?} has no neighbours in the region")));
                }
                buf[rng.random_range(0..k)]
            }
        };
        sites.push(here);
    }
    Ok(WalkPath { sites, stop: StopReason::Hit })
}

/// Chronological loop erasure.
pub fn loop_erase(sites: &[Site]) -> Vec<Site> {
    let mut out: Vec<Site> = Vec::new();
    let mut at: HashMap<Site, usize> = HashMap::new();
    for &s in sites {
        if let Some(&k) = at.get(&s) {
            for r in out.drain(k + 1..) {
                at.remove(&r);
            }
        } else {
            at.insert(s, out.len());
            out.push(s);
        }
    }
    out
}

/// Cumulative angle wound around `centre`; entry `k` covers the first `k`
/// steps. Each increment is the signed angle in `(-pi, pi]` between the
/// positions before and after the step, zero for collinear steps.
pub fn walk_winding(sites: &[Site], centre: (f64, f64)) -> Result<Vec<f64>> {
    let rel = |s: &Site| (s.x as f64 - centre.0, s.y as f64 - centre.1);
    if sites.iter().any(|s| rel(s) == (0.0, 0.0)) {
        return Err(Error::InvalidArgument("the walk visits the centre".into()));
    }
    let mut out = Vec::with_capacity(sites.len());
    let mut total = 0.0;
    out.push(0.0);
    for w in sites.windows(2) {
        let (a, b) = (rel(&w[0]), rel(&w[1]));
        let cross = a.0 * b.1 - a.1 * b.0;
        let dot = a.0 * b.0 + a.1 * b.1;
        let phi = if cross == 0.0 {
            if dot < 0.0 {
                std::f64::consts::PI
            } else {
                0.0
            }
        } else {
            cross.atan2(dot)
        };
        total += phi;
        out.push(total);
    }
    Ok(out)
}

/// `sup_k Theta(k)^2` for a plane walk of `n` steps from the origin around
/// `(1/2, 1/2)`, using a caller-supplied generator.
pub fn sup_winding_squared<R: Rng>(n: usize, rng: &mut R) -> f64 {
    let (cx, cy) = (0.5, 0.5);
    let (mut x, mut y) = (0i32, 0i32);
    let (mut total, mut best) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (px, py) = (x as f64 - cx, y as f64 - cy);
        match rng.random_range(0..4u8) {
            0 => x += 1,
            1 => y += 1,
            2 => x -= 1,
            _ => y -= 1,
        }
        let (qx, qy) = (x as f64 - cx, y as f64 - cy);
        total += (px * qy - py * qx).atan2(px * qx + py * qy);
        best = best.max(total * total);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HittingMode {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

/// Harmonic measure of each boundary site seen from `start`, in the order
/// of [`LatticeRegion::boundary_sites`].
pub fn hitting_distribution(region: &LatticeRegion, start: Site, mode: HittingMode) -> Result<Vec<(Site, f64)>> {
    if !region.is_interior(start) {
        return Err(Error::InvalidArgument(format!("{start:?} is not an interior site")));
    }
    let boundary: Vec<Site> = region.boundary_sites().collect();
    match mode {
        HittingMode::Exact => {
            // Expected visits g to interior sites solve (I - P) g = e_start;
            // P is symmetric, so the same matrix as the Dirichlet problem.
            let system = Laplacian::new(region)?;
            let mut rhs = vec![0.0; system.unknowns.len()];
            rhs[system.slot[&start]] = 4.0;
            let g = system.solve(&rhs)?;
            Ok(boundary
                .iter()
                .map(|&z| {
                    let mass: f64 = z.neighbours().iter().filter_map(|n| system.slot.get(n)).map(|&k| g[k] / 4.0).sum();
                    (z, mass)
                })
                .collect())
        }
        HittingMode::MonteCarlo { samples, seed } => {
            let stop: HashSet<Site> = boundary.iter().copied().collect();
            let slot: HashMap<Site, usize> = boundary.iter().enumerate().map(|(i, &s)| (s, i)).collect();
            let mut counts = vec![0u64; boundary.len()];
            let mut rng = RngStream::new(seed, 0).rng();
            for _ in 0..samples {
                let w = run_walk(WalkGraph::Region(region), start, &stop, &mut rng, usize::MAX)?;
                counts[slot[&w.end()]] += 1;
            }
            Ok(boundary.iter().zip(counts).map(|(&s, c)| (s, c as f64 / samples.max(1) as f64)).collect())
        }
    }
}

/// `4 u(x) - sum of interior neighbours` on the interior unknowns.
struct Laplacian {
    unknowns: Vec<Site>,
    slot: HashMap<Site, usize>,
    links: Vec<Vec<usize>>,
}

impl Laplacian {
    fn new(region: &LatticeRegion) -> Result<Self> {
        if !region.is_connected() {
            return Err(Error::InvalidArgument("region is not connected".into()));
        }
        let mut unknowns: Vec<Site> = region.interior_sites().collect();
        if unknowns.is_empty() {
            return Err(Error::InvalidArgument("region has no interior sites".into()));
        }
        // Order along the longer side so the band is as narrow as the
        // shorter one.
        let (w, h) = extent(&unknowns);
        if w > h {
            unknowns.sort_by_key(|s| (s.x, s.y));
        }
        let slot: HashMap<Site, usize> = unknowns.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let links = unknowns.iter().map(|s| s.neighbours().iter().filter_map(|n| slot.get(n).copied()).collect()).collect();
        Ok(Self { unknowns, slot, links })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, l) in self.links.iter().enumerate() {
            out[i] = 4.0 * x[i] - l.iter().map(|&j| x[j]).sum::<f64>();
        }
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.unknowns.len() <= DIRECT_LIMIT {
            self.solve_banded(rhs)
        } else {
            self.solve_cg(rhs)
        }
    }

    fn solve_banded(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.unknowns.len();
        let p = self.links.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&j| i.abs_diff(j))).max().unwrap_or(0);
        let w = p + 1;
        // Row i holds columns i - p ..= i at offsets 0 ..= p.
        let mut band = vec![0.0; n * w];
        for (i, l) in self.links.iter().enumerate() {
            band[i * w + p] = 4.0;
            for &j in l.iter().filter(|&&j| j < i) {
                band[i * w + p - (i - j)] = -1.0;
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(p);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(p));
                let mut s: f64 = band[i * w + p - (i - j)];
                for k in klo..j {
                    s -= band[i * w + p - (i - k)] * band[j * w + p - (j - k)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Numerical("matrix is not positive definite".into()));
                    }
                    band[i * w + p] = s.sqrt();
                } else {
                    band[i * w + p - (i - j)] = s / band[j * w + p];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(p);
            let s: f64 = (lo..i).map(|k| band[i * w + p - (i - k)] * y[k]).sum();
            y[i] = (y[i] - s) / band[i * w + p];
        }
        for i in (0..n).rev() {
            let hi = (i + p).min(n - 1);
            let s: f64 = (i + 1..=hi).map(|k| band[k * w + p - (k - i)] * y[k]).sum();
            y[i] = (y[i] - s) / band[i * w + p];
        }
        Ok(y)
    }

    /// Conjugate gradients with the (constant) Jacobi preconditioner.
    fn solve_cg(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().map(|v| v / 4.0).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let target = TOLERANCE * 1e-3;
        for _ in 0..20 * n.max(100) {
            self.apply(&p, &mut ap);
            let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) < target {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] / 4.0;
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::Numerical("conjugate gradients did not converge".into()))
    }
}

fn extent(sites: &[Site]) -> (i32, i32) {
    let w = sites.iter().map(|s| s.x).max().unwrap() - sites.iter().map(|s| s.x).min().unwrap();
    let h = sites.iter().map(|s| s.y).max().unwrap() - sites.iter().map(|s| s.y).min().unwrap();
    (w, h)
}

/// Discrete harmonic function on a region.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSolution {
    pub region: LatticeRegion,
    /// Value per region site, in region order.
    pub values: Vec<f64>,
    /// Largest `|u(x) - average of neighbours|` over interior sites.
    pub residual: f64,
}

impl HarmonicSolution {
    pub fn value(&self, s: Site) -> Option<f64> {
        self.region.index_of(s).map(|i| self.values[i])
    }

    /// Grid table with columns `x,y,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,value\n");
        for (s, v) in self.region.sites().iter().zip(&self.values) {
            out.push_str(&format!("{},{},{}\n", s.x, s.y, v));
        }
        out
    }
}

pub fn solve_dirichlet(region: &LatticeRegion, boundary: impl Fn(Site) -> f64) -> Result<HarmonicSolution> {
    let system = Laplacian::new(region)?;
    let rhs: Vec<f64> = system
        .unknowns
        .iter()
        .map(|s| s.neighbours().iter().filter(|n| !system.slot.contains_key(n) && region.contains(**n)).map(|&n| boundary(n)).sum())
        .collect();
    let u = system.solve(&rhs)?;
    let values: Vec<f64> = region.sites().iter().map(|s| system.slot.get(s).map_or_else(|| boundary(*s), |&k| u[k])).collect();
    let residual = region
        .interior_sites()
        .map(|s| {
            let avg = s.neighbours().iter().map(|n| values[region.index[n]]).sum::<f64>() / 4.0;
            (values[region.index[&s]] - avg).abs()
        })
        .fold(0.0, f64::max);
    if residual > TOLERANCE {
        return Err(Error::Numerical(format!("residual {residual:e} above tolerance")));
    }
    Ok(HarmonicSolution { region: region.clone(), values, residual })
}

/// Derivative of the conformal map onto the strip `R x (0, 1)` whose
/// imaginary part is the given harmonic function, on interior sites at
/// least `collar` lattice steps from both marked points.
#[derive(Debug, Clone, PartialEq)]
pub struct StripDerivative {
    pub mesh: f64,
    values: HashMap<Site, Complex64>,
}

impl StripDerivative {
    pub fn get(&self, s: Site) -> Option<Complex64> {
        self.values.get(&s).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bilinear interpolation at a continuum point; `None` unless all four
    /// surrounding sites carry a value.
    pub fn at(&self, z: Complex64) -> Option<Complex64> {
        let (x, y) = (z.re / self.mesh, z.im / self.mesh);
        let (i, j) = (x.floor() as i32, y.floor() as i32);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let g = |a: i32, b: i32| self.get(Site::new(a, b));
        Some(g(i, j)? * (1.0 - fx) * (1.0 - fy) + g(i + 1, j)? * fx * (1.0 - fy) + g(i, j + 1)? * (1.0 - fx) * fy + g(i + 1, j + 1)? * fx * fy)
    }
}

/// `F' = d_y u + i d_x u` by central differences, per unit length.
pub fn strip_map_derivative(solution: &HarmonicSolution, a: Site, b: Site, collar: f64, mesh: f64) -> Result<StripDerivative> {
    let region = &solution.region;
    let far = |s: Site, m: Site| (((s.x - m.x) as f64).powi(2) + ((s.y - m.y) as f64).powi(2)).sqrt() >= collar;
    let u = |s: Site| solution.values[region.index[&s]];
    let values: HashMap<Site, Complex64> = region
        .interior_sites()
        .filter(|&s| far(s, a) && far(s, b))
        .map(|s| {
            let dx = (u(Site::new(s.x + 1, s.y)) - u(Site::new(s.x - 1, s.y))) / (2.0 * mesh);
            let dy = (u(Site::new(s.x, s.y + 1)) - u(Site::new(s.x, s.y - 1))) / (2.0 * mesh);
            (s, Complex64::new(dy, dx))
        })
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument("every interior site lies in the collar".into()));
    }
    Ok(StripDerivative { mesh, values })
}

/// Harmonic function equal to 1 on the counterclockwise arc from `b` to
/// `a` of a domain and 0 on the other arc (1/2 at the marked points), on the
/// domain's polygon refined `refine` times, with its strip-map derivative.
pub fn dobrushin_strip_map(domain: &DobrushinDomain, refine: u32, collar: f64) -> Result<(HarmonicSolution, StripDerivative)> {
    if refine == 0 {
        return Err(Error::InvalidArgument("refinement must be positive".into()));
    }
    let k = refine as i32;
    let (walk, wa, wb) = domain.boundary_walk();
    let m = walk.len();
    let scaled: Vec<Site> = walk.iter().map(|p| Site::new(p.x / 2 * k, p.y / 2 * k)).collect();
    let mut data: HashMap<Site, f64> = HashMap::new();
    for i in 0..m {
        // Step i runs from walk[i] to walk[i + 1]; it lies on the arc
        // from a to b when i is in [wa, wb) cyclically.
        let on_ab = (i + m - wa) % m < (wb + m - wa) % m;
        let (p, q) = (scaled[i], scaled[(i + 1) % m]);
        for t in 0..=k {
            let s = Site::new(p.x + (q.x - p.x) / k * t, p.y + (q.y - p.y) / k * t);
            data.insert(s, if on_ab { 0.0 } else { 1.0 });
        }
    }
    let (a, b) = (scaled[wa], scaled[wb]);
    data.insert(a, 0.5);
    data.insert(b, 0.5);
    let corners: Vec<Site> = domain.polygon().iter().map(|p| Site::new(p.x / 2 * k, p.y / 2 * k)).collect();
    let region = LatticeRegion::from_polygon(&corners)?;
    let sol = solve_dirichlet(&region, |s| data.get(&s).copied().unwrap_or(f64::NAN))?;
    if sol.values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("boundary data missing on part of the region boundary".into()));
    }
    let mesh = domain.mesh() / refine as f64;
    let d = strip_map_derivative(&sol, a, b, collar * refine as f64, mesh)?;
    Ok((sol, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_rectangle_domain, Corner};
    use proptest::prelude::*;

    #[test]
    fn walks() {
        let stop: HashSet<Site> = [Site::new(0, 0)].into();
        let mut rng = RngStream::new(1, 0).rng();
        let w = run_walk(WalkGraph::Plane, Site::new(0, 0), &stop, &mut rng, 10).unwrap();
        assert_eq!(w.steps(), 0);
        assert!(run_walk(WalkGraph::Plane, Site::new(0, 0), &HashSet::new(), &mut rng, 10).is_err());
        let far: HashSet<Site> = [Site::new(1000, 0)].into();
        let w = run_walk(WalkGraph::Plane, Site::new(0, 0), &far, &mut rng, 50).unwrap();
        assert_eq!((w.stop, w.steps()), (StopReason::Cap, 50));
        assert!(w.sites.windows(2).all(|p| p[0].adjacent(p[1])));
    }

    #[test]
    fn corridor_gamblers_ruin() {
        let r = LatticeRegion::from_sites([Site::new(0, 0), Site::new(1, 0), Site::new(2, 0)]).unwrap();
        let stop: HashSet<Site> = [Site::new(0, 0), Site::new(2, 0)].into();
        let mut rng = RngStream::new(2, 0).rng();
        let n = 10_000;
        let left = (0..n).filter(|_| run_walk(WalkGraph::Region(&r), Site::new(1, 0), &stop, &mut rng, 10).unwrap().end() == Site::new(0, 0)).count();
        let p = left as f64 / n as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn exit_time_scales_quadratically() {
        let mut rng = RngStream::new(3, 0).rng();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for l in [8, 16, 32] {
            let r = LatticeRegion::rectangle(l, l).unwrap();
            let stop: HashSet<Site> = r.boundary_sites().collect();
            let n = 400;
            let mean = (0..n).map(|_| run_walk(WalkGraph::Plane, Site::new(l / 2, l / 2), &stop, &mut rng, usize::MAX).unwrap().steps() as f64).sum::<f64>()
                / n as f64;
            xs.push((l as f64).ln());
            ys.push(mean.ln());
        }
        let (_, slope, _) = crate::stats::linear_fit(&xs, &ys);
        assert!((slope - 2.0).abs() < 0.15, "{slope}");
    }

    #[test]
    fn symmetric_hitting() {
        let r = LatticeRegion::rectangle(8, 8).unwrap();
        let h = hitting_distribution(&r, Site::new(4, 4), HittingMode::Exact).unwrap();
        let total: f64 = h.iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let side = |f: &dyn Fn(Site) -> bool| h.iter().filter(|(s, _)| f(*s)).map(|x| x.1).sum::<f64>();
        for m in [side(&|s| s.y == 0), side(&|s| s.y == 8), side(&|s| s.x == 0), side(&|s| s.x == 8)] {
            assert!((m - 0.25).abs() < 1e-12);
        }
        // Corners are never reached from the interior.
        assert_eq!(h.iter().find(|x| x.0 == Site::new(0, 0)).unwrap().1, 0.0);
        assert!(hitting_distribution(&r, Site::new(0, 4), HittingMode::Exact).is_err());
    }

    #[test]
    fn hitting_exact_against_sampling() {
        let r = LatticeRegion::rectangle(6, 4).unwrap();
        let exact = hitting_distribution(&r, Site::new(2, 1), HittingMode::Exact).unwrap();
        let mc = hitting_distribution(&r, Site::new(2, 1), HittingMode::MonteCarlo { samples: 200_000, seed: 9 }).unwrap();
        let tv: f64 = exact.iter().zip(&mc).map(|(a, b)| (a.1 - b.1).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.01, "{tv}");
    }

    #[test]
    fn corner_masses_decrease() {
        let r = LatticeRegion::rectangle(64, 64).unwrap();
        let h = hitting_distribution(&r, Site::new(32, 32), HittingMode::Exact).unwrap();
        // Equal segments of length 4 along the bottom, listed from the
        // middle of the side towards the corner: mass never increases.
        let bottom: Vec<f64> = (1..=32).rev().map(|x| h.iter().find(|p| p.0 == Site::new(x, 0)).unwrap().1).collect();
        let masses: Vec<f64> = bottom.chunks(4).map(|c| c.iter().sum()).collect();
        assert!(masses.windows(2).all(|w| w[0] >= w[1]), "{masses:?}");
    }

    #[test]
    fn dirichlet_basics() {
        let r = LatticeRegion::rectangle(10, 10).unwrap();
        let c = solve_dirichlet(&r, |_| 2.5).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let s = solve_dirichlet(&r, |s| if s.y == 10 && s.x > 0 && s.x < 10 { 1.0 } else { 0.0 }).unwrap();
        assert!((s.value(Site::new(5, 5)).unwrap() - 0.25).abs() < 1e-12);
        assert!(s.residual <= TOLERANCE);
        let split = LatticeRegion::from_sites([Site::new(0, 0), Site::new(5, 5)]).unwrap();
        assert!(solve_dirichlet(&split, |_| 0.0).is_err());
    }

    #[test]
    fn dirichlet_matches_harmonic_measure() {
        let r = LatticeRegion::rectangle(12, 9).unwrap();
        let data = |s: Site| (s.x * 3 - s.y * s.y) as f64 / 7.0 + if s.x == 12 { 1.0 } else { 0.0 };
        let sol = solve_dirichlet(&r, data).unwrap();
        for p in [Site::new(1, 1), Site::new(6, 4), Site::new(11, 8), Site::new(3, 7), Site::new(9, 2)] {
            let h = hitting_distribution(&r, p, HittingMode::Exact).unwrap();
            let avg: f64 = h.iter().map(|(s, m)| m * data(*s)).sum();
            assert!((avg - sol.value(p).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn conjugate_gradients_agree_with_direct_solve() {
        let r = LatticeRegion::rectangle(30, 20).unwrap();
        let sys = Laplacian::new(&r).unwrap();
        let rhs: Vec<f64> = (0..sys.unknowns.len()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let a = sys.solve_banded(&rhs).unwrap();
        let b = sys.solve_cg(&rhs).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn loop_erasure() {
        let s = |x, y| Site::new(x, y);
        assert_eq!(loop_erase(&[s(0, 0), s(1, 0), s(0, 0), s(0, 1)]), vec![s(0, 0), s(0, 1)]);
        let straight = [s(0, 0), s(1, 0), s(2, 0)];
        assert_eq!(loop_erase(&straight), straight.to_vec());
        let stop: HashSet<Site> = [s(10_000, 0)].into();
        let mut rng = RngStream::new(4, 0).rng();
        let w = run_walk(WalkGraph::Plane, s(0, 0), &stop, &mut rng, 10_000).unwrap();
        let e = loop_erase(&w.sites);
        assert_eq!(e.first(), w.sites.first());
        assert_eq!(e.last(), w.sites.last());
        assert_eq!(e.iter().collect::<HashSet<_>>().len(), e.len());
        assert!(e.windows(2).all(|p| p[0].adjacent(p[1])));
        assert_eq!(loop_erase(&e), e);
    }

    #[test]
    fn windings() {
        let s = |x, y| Site::new(x, y);
        let straight: Vec<Site> = (0..20).map(|x| s(x, 0)).collect();
        let th = walk_winding(&straight, (5.0, 100.0)).unwrap();
        assert!(th.last().unwrap().abs() < std::f64::consts::PI);
        let square = [s(0, 0), s(1, 0), s(1, 1), s(0, 1), s(0, 0)];
        let th = walk_winding(&square, (0.5, 0.5)).unwrap();
        assert!((th[4] - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!(walk_winding(&square, (1.0, 1.0)).is_err());
    }

    #[test]
    fn truncated_strip_is_the_identity() {
        // Long strip of height 1 with marked points in the middle of the ends.
        let n = 16;
        let r = LatticeRegion::rectangle(10 * n, n).unwrap();
        let (a, b) = (Site::new(0, n / 2), Site::new(10 * n, n / 2));
        let sol = solve_dirichlet(&r, |s| {
            if s.y == n || ((s.x == 0 || s.x == 10 * n) && s.y > n / 2) {
                1.0
            } else if s == a || s == b {
                0.5
            } else {
                0.0
            }
        })
        .unwrap();
        let d = strip_map_derivative(&sol, a, b, 4.0, 1.0 / n as f64).unwrap();
        for x in [4 * n, 5 * n, 6 * n] {
            for y in 1..n {
                assert!((d.get(Site::new(x, y)).unwrap() - 1.0).norm() < 1e-3);
            }
        }
        assert!(d.get(Site::new(1, n / 2)).is_none());
    }

    #[test]
    fn square_derivative_is_mirror_symmetric() {
        let dom = build_rectangle_domain(8, 8, 1.0 / 8.0, Corner::SW, Corner::NE).unwrap();
        let (_, d) = dobrushin_strip_map(&dom, 2, 1.0).unwrap();
        // Reflection in the anti-diagonal swaps a and b.
        for (x, y) in [(3, 5), (6, 2), (8, 8), (4, 11)] {
            let p = d.get(Site::new(x, y)).unwrap();
            let q = d.get(Site::new(16 - y, 16 - x)).unwrap();
            assert!((p.norm() - q.norm()).abs() < 1e-12);
        }
    }

    /// Derivative of the strip map of the rectangle `[0, 2] x [0, 1]` with
    /// a = 0 and b = 2 + i, from the closed form through Jacobi elliptic
    /// functions (modulus 1/sqrt 2), evaluated once in high precision.
    const RECTANGLE_ORACLE: [(f64, f64, f64, f64); 5] = [
        (0.5, 0.5, 0.916_991_251_621_117_3, -0.417_313_420_837_036_6),
        (1.0, 0.5, 0.992_544_178_491_057_4, -0.172_856_878_671_011_5),
        (1.5, 0.5, 0.916_991_251_621_117_3, -0.417_313_420_837_036_6),
        (1.0, 0.25, 0.999_986_050_679_221_4, -0.122_683_923_997_182_8),
        (1.0, 0.75, 0.999_986_050_679_221_4, -0.122_683_923_997_182_8),
    ];

    #[test]
    fn rectangle_matches_elliptic_oracle() {
        let dom = build_rectangle_domain(16, 8, 1.0 / 8.0, Corner::SW, Corner::NE).unwrap();
        let (sol, d) = dobrushin_strip_map(&dom, 8, 1.0).unwrap();
        assert!(sol.residual <= TOLERANCE);
        for (x, y, re, im) in RECTANGLE_ORACLE {
            let got = d.at(Complex64::new(x, y)).unwrap();
            assert!((got - Complex64::new(re, im)).norm() < 2e-3, "{x},{y}: {got}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn winding_steps_and_erasure(seed in 0u64..1000, n in 1usize..400) {
            let mut rng = RngStream::new(seed, 0).rng();
            let far: HashSet<Site> = [Site::new(1 << 20, 0)].into();
            let w = run_walk(WalkGraph::Plane, Site::new(0, 0), &far, &mut rng, n).unwrap();
            let th = walk_winding(&w.sites, (0.5, 0.5)).unwrap();
            for k in 1..th.len() {
                let step = th[k] - th[k - 1];
                prop_assert!(step > -std::f64::consts::PI && step <= std::f64::consts::PI);
            }
            let e = loop_erase(&w.sites);
            prop_assert_eq!(loop_erase(&e), e);
        }
    }
}

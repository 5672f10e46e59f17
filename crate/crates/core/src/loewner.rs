//! Chordal Loewner chains: driving functions of curves by the zipper
//! with tilted-slit maps, SLE traces, diffusivity estimates and the
//! Fréchet distance between curves.
//!
//! The elementary map removes a straight slit from `H`. With
//! `0 < alpha < 1` the slit leaves the real axis at angle
//! `(1 - alpha) pi` and
//!
//! ```text
//! f(w) = (w - x_l)^alpha (w - x_r)^(1 - alpha),   alpha x_l + (1 - alpha) x_r = 0,
//! ```
//!
//! maps `H` onto `H` minus the slit with `f(w) = w - 2t/w + ...`. The tip
//! is the image of the critical point `w_c = alpha x_r + (1 - alpha) x_l`,
//! which is where the driving function moves during the step.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploration::{path_to_midpoint_curve, sample_exploration_until, ExplorationPath};
use crate::lattice::DobrushinDomain;
use crate::rng::RngStream;

/// Principal argument with the real axis read from above.
fn arg_upper(z: Complex64) -> f64 {
    f64::atan2(if z.im > 0.0 { z.im } else { 0.0 }, z.re)
}

fn ln_upper(z: Complex64) -> Complex64 {
    Complex64::new(z.norm().ln(), arg_upper(z))
}

/// Half-plane capacity of the straight slit from 0 to `u`.
pub fn slit_capacity(u: Complex64) -> f64 {
    let alpha = 1.0 - arg_upper(u) / PI;
    u.norm_sqr() / 4.0 * alpha.powf(1.0 - 2.0 * alpha) * (1.0 - alpha).powf(2.0 * alpha - 1.0)
}

/// One tilted-slit step of a Loewner chain, attached at the real point
/// `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlitMap {
    base: f64,
    alpha: f64,
    capacity: f64,
    xl: f64,
    xr: f64,
}

impl SlitMap {
    fn with(base: f64, alpha: f64, capacity: f64) -> Self {
        let xl = -2.0 * (capacity * (1.0 - alpha) / alpha).sqrt();
        let xr = 2.0 * (capacity * alpha / (1.0 - alpha)).sqrt();
        Self { base, alpha, capacity, xl, xr }
    }

    /// Slit from `base` to the point `tip` of the open upper half-plane.
    pub fn from_tip(base: f64, tip: Complex64) -> Result<Self> {
        let u = tip - base;
        if !(u.im > 0.0) || !u.re.is_finite() {
            return Err(Error::Numerical(format!("slit tip {tip} is not in the upper half-plane")));
        }
        let alpha = 1.0 - u.arg() / PI;
        Ok(Self::with(base, alpha, slit_capacity(u)))
    }

    /// Slit of capacity `dt` across which the driving function moves by
    /// `dw`.
    pub fn from_driving(base: f64, dw: f64, dt: f64) -> Self {
        let s = dw / (2.0 * dt.sqrt());
        let beta = s / (s * s + 4.0).sqrt();
        Self::with(base, (1.0 + beta) / 2.0, dt)
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    fn critical(&self) -> f64 {
        self.alpha * self.xr + (1.0 - self.alpha) * self.xl
    }

    /// Driving value at the end of the step.
    pub fn end(&self) -> f64 {
        self.base + self.critical()
    }

    fn log_f(&self, w: Complex64) -> Complex64 {
        ln_upper(w - self.xl) * self.alpha + ln_upper(w - self.xr) * (1.0 - self.alpha)
    }

    /// The map from `H` onto `H` minus the slit.
    pub fn forward(&self, w: Complex64) -> Complex64 {
        let v = w - self.base;
        if v.norm() > 1e8 * (self.xr - self.xl) {
            return w - 2.0 * self.capacity / v;
        }
        self.base + self.log_f(v).exp()
    }

    pub fn tip(&self) -> Complex64 {
        self.forward(Complex64::new(self.end(), 0.0))
    }

    /// The map from `H` minus the slit back onto `H`, by damped Newton
    /// iteration on `log f`. `None` when the preimage cannot be resolved
    /// in double precision, which happens deep inside the pocket under a
    /// nearly flat slit where the map squeezes distances exponentially.
    pub fn inverse(&self, z: Complex64) -> Option<Complex64> {
        let u = z - self.base;
        let scale = self.xr - self.xl;
        if u.norm() > 1e8 * scale {
            return Some(z + 2.0 * self.capacity / u);
        }
        let wc = self.critical();
        let tip = self.log_f(Complex64::new(wc, 0.0)).exp();
        let target = ln_upper(u);
        let h = |w: Complex64| self.log_f(w) - target;
        let dh = |w: Complex64| self.alpha / (w - self.xl) + (1.0 - self.alpha) / (w - self.xr);
        // Projection onto the slit: fraction along it and signed offset,
        // positive on the side facing the negative real axis.
        let along = (u * tip.conj()).re / tip.norm_sqr();
        let offset = (tip.conj() * u).im / tip.norm();
        let mut w = if (u - tip).norm() < 0.25 * tip.norm() {
            // f(w) - tip ~ f''(w_c) (w - w_c)^2 / 2 near the tip.
            let d2 = -(self.alpha / (wc - self.xl).powi(2) + (1.0 - self.alpha) / (wc - self.xr).powi(2));
            let root = (2.0 * (u - tip) / (tip * d2)).sqrt();
            Complex64::new(wc, 0.0) + if root.im < 0.0 { -root } else { root }
        } else if along > 0.0 && along < 1.0 && offset.abs() < 0.5 * tip.norm() {
            // Each side of the slit is the image of one side of w_c on the
            // real axis, along which |f| is monotone.
            let rho = along * tip.norm();
            let (mut lo, mut hi) = if offset > 0.0 { (self.xl, wc) } else { (wc, self.xr) };
            let modulus = |x: f64| self.log_f(Complex64::new(x, 0.0)).re;
            let rising = offset > 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (modulus(mid) < rho.ln()) == rising {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let x = Complex64::new(0.5 * (lo + hi), 0.0);
            let fx = self.log_f(x).exp();
            let w = x + (u - fx) / (fx * dh(x));
            Complex64::new(w.re, w.im.max(1e-12 * scale))
        } else {
            let s = (u * u + 8.0 * self.capacity).sqrt();
            let s = if (u + s).norm() >= (u - s).norm() { s } else { -s };
            (u + s) / 2.0
        };
        if !(w.im > 0.0) {
            w.im = 1e-3 * scale;
        }
        let mut r = h(w);
        for _ in 0..100 {
            let step = r / dh(w);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let next = w - step * lambda;
                if next.im > 0.0 {
                    let rn = h(next);
                    if rn.norm() < r.norm() {
                        w = next;
                        r = rn;
                        accepted = true;
                        break;
                    }
                }
                lambda /= 2.0;
            }
            if !accepted || (step * lambda).norm() <= 1e-15 * (w.norm() + scale) {
                break;
            }
        }
        (w.re.is_finite() && w.im > 0.0 && r.norm() < 1e-6).then_some(w + self.base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrivingSource {
    Percolation,
    Synthetic { kappa: f64 },
    Slit,
}

/// Driving function sampled at the capacity times of a Loewner chain.
/// `values[0]` is the real starting point of the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub capacity_step: f64,
    pub source: DrivingSource,
    /// Curve points the zipper could not map and skipped.
    #[serde(default)]
    pub dropped: usize,
}

impl DrivingFunction {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn total_capacity(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Number of samples lying on the grid `k * capacity_step`.
    pub fn grid_len(&self) -> usize {
        self.times.iter().enumerate().take_while(|&(k, &t)| (t - k as f64 * self.capacity_step).abs() <= 1e-6 * self.capacity_step * (k.max(1) as f64)).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,W\n");
        for (t, w) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t},{w}\n"));
        }
        out
    }
}

/// Driving function of a curve starting on the real axis and staying in
/// the open upper half-plane, by the zipper.
///
/// Each step removes the straight slit from the current base to the first
/// point of the remaining mapped curve whose slit capacity reaches
/// `capacity_step`, bisecting along the mapped chord so the step has
/// exactly that capacity. Points skipped inside a step are dropped, as
/// are later points left unresolvable under a flat chord (counted in
/// `dropped`). The last step may be shorter.
pub fn extract_driving(curve: &[Complex64], capacity_step: f64) -> Result<DrivingFunction> {
    if !(capacity_step > 0.0) || !capacity_step.is_finite() {
        return Err(Error::InvalidArgument(format!("capacity step must be positive, got {capacity_step}")));
    }
    let Some(&start) = curve.first() else {
        return Err(Error::InvalidArgument("empty curve".into()));
    };
    let scale = curve.iter().map(|z| (z - start).norm()).fold(0.0, f64::max).max(1e-300);
    if start.im.abs() > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("curve starts at {start}, off the real axis")));
    }
    if let Some(z) = curve[1..].iter().find(|z| !(z.im > 0.0)) {
        return Err(Error::InvalidArgument(format!("curve leaves the upper half-plane at {z}")));
    }
    let mut base = start.re;
    let mut times = vec![0.0];
    let mut values = vec![base];
    let mut maps: Vec<SlitMap> = Vec::new();
    let mut pts: Vec<Complex64> = curve[1..].to_vec();
    let mut level = vec![0usize; pts.len()];
    let mut prev = Complex64::new(base, 0.0);
    let mut total = 0.0;
    let mut j = 0;
    let mut dropped = 0;
    while j < pts.len() {
        let mut lost = false;
        for m in &maps[level[j]..] {
            match m.inverse(pts[j]) {
                Some(w) => pts[j] = w,
                None => {
                    lost = true;
                    break;
                }
            }
        }
        level[j] = maps.len();
        let cur = pts[j];
        if lost && j + 1 < pts.len() {
            dropped += 1;
            j += 1;
            continue;
        }
        if lost {
            break;
        }
        let cap = slit_capacity(cur - base);
        let last = j + 1 == pts.len();
        if cap < capacity_step * (1.0 - 1e-9) && !last {
            prev = cur;
            j += 1;
            continue;
        }
        let target = if cap <= capacity_step * (1.0 + 1e-9) {
            j += 1;
            cur
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if slit_capacity(prev + (cur - prev) * mid - base) < capacity_step {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            prev + (cur - prev) * hi
        };
        let m = SlitMap::from_tip(base, target)?;
        total += m.capacity();
        base = m.end();
        times.push(total);
        values.push(base);
        maps.push(m);
        prev = Complex64::new(base, 0.0);
    }
    Ok(DrivingFunction { times, values, capacity_step, source: DrivingSource::Slit, dropped })
}

/// The start `0` followed by `n_steps` tips of an approximate SLE trace:
/// the driving function takes Gaussian steps of variance `kappa * dt` and
/// each step is realised exactly by one tilted slit.
pub fn sample_sle_trace<R: Rng + ?Sized>(kappa: f64, n_steps: usize, dt: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    if !(kappa >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("need kappa >= 0 and dt > 0, got {kappa}, {dt}")));
    }
    let mut maps: Vec<SlitMap> = Vec::with_capacity(n_steps);
    let mut trace = Vec::with_capacity(n_steps + 1);
    trace.push(Complex64::new(0.0, 0.0));
    let mut w = 0.0;
    for _ in 0..n_steps {
        let z: f64 = rng.sample(StandardNormal);
        let m = SlitMap::from_driving(w, (kappa * dt).sqrt() * z, dt);
        w = m.end();
        let tip = maps.iter().rev().fold(m.tip(), |p, g| g.forward(p));
        maps.push(m);
        trace.push(tip);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub stderr: f64,
    pub paths: usize,
    /// Longest grid reached by any path.
    pub grid_len: usize,
    pub capacity_step: f64,
}

/// Diffusivity from driving functions on a common capacity grid.
///
/// Paths end at different capacities, so each one is frozen at its last
/// grid point: `X_k = W(t_min(k, L)) - W_0` is Brownian motion with variance
/// `kappa` stopped at a stopping time, and `E[X_k^2] = kappa E[T_k]` still
/// holds. The estimate is the least-squares slope through the origin of the
/// path means of `X_k^2` against those of `T_k`, over every grid index any
/// path reaches. The standard error is a jackknife over paths.
pub fn estimate_kappa(drivings: &[DrivingFunction]) -> Result<KappaEstimate> {
    if drivings.len() < 30 {
        return Err(Error::InvalidArgument(format!("need at least 30 driving functions, got {}", drivings.len())));
    }
    let step = drivings[0].capacity_step;
    if let Some(d) = drivings.iter().find(|d| (d.capacity_step - step).abs() > 1e-9 * step) {
        return Err(Error::InvalidArgument(format!("capacity steps differ: {} and {}", step, d.capacity_step)));
    }
    let lens: Vec<usize> = drivings.iter().map(DrivingFunction::grid_len).collect();
    let grid = lens.iter().copied().max().unwrap_or(0);
    if grid < 2 || lens.contains(&0) {
        return Err(Error::InvalidArgument("driving functions share no grid beyond t = 0".into()));
    }
    // Per-path stopped sequences, summed over paths.
    fn stopped(d: &DrivingFunction, len: usize, grid: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..grid).map(move |k| {
            let i = k.min(len - 1);
            (d.times[i], (d.values[i] - d.values[0]).powi(2))
        })
    }
    let (mut t_sum, mut x_sum) = (vec![0.0; grid], vec![0.0; grid]);
    for (d, &len) in drivings.iter().zip(&lens) {
        for (k, (t, x)) in stopped(d, len, grid).enumerate() {
            t_sum[k] += t;
            x_sum[k] += x;
        }
    }
    let slope = |t: &[f64], x: &[f64]| {
        let num: f64 = t.iter().zip(x).map(|(t, x)| t * x).sum();
        num / t.iter().map(|t| t * t).sum::<f64>()
    };
    let n = drivings.len() as f64;
    let kappa = slope(&t_sum, &x_sum);
    let leave_out: Vec<f64> = drivings
        .iter()
        .zip(&lens)
        .map(|(d, &len)| {
            let (mut t, mut x) = (t_sum.clone(), x_sum.clone());
            for (k, (tk, xk)) in stopped(d, len, grid).enumerate() {
                t[k] -= tk;
                x[k] -= xk;
            }
            slope(&t, &x)
        })
        .collect();
    let mean = leave_out.iter().sum::<f64>() / n;
    let var = leave_out.iter().map(|k| (k - mean).powi(2)).sum::<f64>() * (n - 1.0) / n;
    Ok(KappaEstimate { kappa, stderr: var.sqrt(), paths: drivings.len(), grid_len: grid, capacity_step: step })
}

/// Discrete Fréchet distance with a monotone coupling that attains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDistanceReport {
    pub value: f64,
    pub witness: Vec<(usize, usize)>,
}

pub fn curve_distance(a: &[Complex64], b: &[Complex64]) -> Result<CurveDistanceReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("curves must be nonempty".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = (a[i] - b[j]).norm();
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => dp[j - 1],
                (_, 0) => dp[(i - 1) * m],
                _ => dp[(i - 1) * m + j].min(dp[i * m + j - 1]).min(dp[(i - 1) * m + j - 1]),
            };
            dp[i * m + j] = d.max(best);
        }
    }
    let mut witness = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        (i, j) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => [(i - 1, j - 1), (i - 1, j), (i, j - 1)].into_iter().min_by(|p, q| dp[p.0 * m + p.1].total_cmp(&dp[q.0 * m + q.1])).expect("three candidates"),
        };
        witness.push((i, j));
    }
    witness.reverse();
    Ok(CurveDistanceReport { value: dp[n * m - 1], witness })
}

/// Distances from the marked point `a` to the left, right and top sides
/// of a rectangular domain with `a` inside its bottom side.
fn bottom_anchor(domain: &DobrushinDomain) -> Result<(Complex64, [f64; 3])> {
    let poly = domain.polygon();
    let xs = poly.iter().map(|p| p.x);
    let ys = poly.iter().map(|p| p.y);
    let (x0, x1) = (xs.clone().min().unwrap_or(0), xs.max().unwrap_or(0));
    let (y0, y1) = (ys.clone().min().unwrap_or(0), ys.max().unwrap_or(0));
    if poly.len() != 4 || poly.iter().any(|p| (p.x != x0 && p.x != x1) || (p.y != y0 && p.y != y1)) {
        return Err(Error::InvalidDomain("half-plane embedding needs a rectangle".into()));
    }
    if (x1 - x0) < 2 * (y1 - y0) {
        return Err(Error::InvalidDomain("half-plane embedding needs width at least twice the height".into()));
    }
    let (a, _) = domain.marked_points();
    if a.y != y0 || a.x <= x0 || a.x >= x1 {
        return Err(Error::InvalidDomain(format!("marked point {a:?} is not inside the bottom side")));
    }
    let h = domain.mesh() / 2.0;
    Ok((a.plane(domain.mesh()), [(a.x - x0) as f64 * h, (x1 - a.x) as f64 * h, (y1 - a.y) as f64 * h]))
}

/// Default stop radius: half the distance from `a` to the nearest side.
pub fn default_stop_radius(domain: &DobrushinDomain) -> Result<f64> {
    let (_, d) = bottom_anchor(domain)?;
    Ok(d.iter().copied().fold(f64::INFINITY, f64::min) / 2.0)
}

/// The exploration path seen from `a` as a curve in the upper half-plane:
/// the midpoint curve translated so it starts at the origin, whose real
/// axis is the line through the outer end of the entry edge, cut before
/// the first point at distance `stop_radius` or more.
pub fn half_plane_embed(domain: &DobrushinDomain, path: &ExplorationPath, stop_radius: Option<f64>) -> Result<Vec<Complex64>> {
    let (_, sides) = bottom_anchor(domain)?;
    let nearest = sides.iter().copied().fold(f64::INFINITY, f64::min);
    let stop = match stop_radius {
        None => nearest / 2.0,
        Some(r) if r > 0.0 && r <= nearest => r,
        Some(r) => return Err(Error::InvalidArgument(format!("stop radius {r} outside (0, {nearest}]"))),
    };
    let curve = path_to_midpoint_curve(domain, path);
    let Some(&start) = curve.first() else {
        return Err(Error::InvalidArgument("empty path".into()));
    };
    let out: Vec<Complex64> = curve.iter().map(|z| z - start).take_while(|z| z.norm() < stop).collect();
    if let Some(z) = out[1..].iter().find(|z| !(z.im > 0.0)) {
        return Err(Error::Exploration(format!("embedded curve meets the real axis at {z}")));
    }
    Ok(out)
}

/// Driving functions of `samples` exploration paths of `domain`, each
/// sampled lazily only until it leaves the stop radius around `a`.
pub fn exploration_drivings(
    domain: &DobrushinDomain,
    samples: usize,
    seed: u64,
    stop_radius: Option<f64>,
    capacity_step: Option<f64>,
) -> Result<Vec<DrivingFunction>> {
    let stop = match stop_radius {
        Some(r) => r,
        None => default_stop_radius(domain)?,
    };
    let step = capacity_step.unwrap_or(1e-3 * stop * stop);
    (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let mut path = ExplorationPath::default();
            let (a, _) = bottom_anchor(domain)?;
            sample_exploration_until(domain, 0.5, &mut rng, |v| (domain.position(crate::lattice::EdgeId(v)) - a).norm() >= stop + domain.mesh(), &mut path)?;
            let curve = half_plane_embed(domain, &path, Some(stop))?;
            let mut d = extract_driving(&curve, step)?;
            d.source = DrivingSource::Percolation;
            Ok(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_rectangle_domain_at;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(x: f64, y: f64) -> Complex64 {
        Complex64::new(x, y)
    }

    #[test]
    fn slit_map_round_trips() {
        for (base, tip) in [(0.0, c(0.0, 1.0)), (0.3, c(1.2, 0.4)), (-1.0, c(-3.0, 0.2)), (2.0, c(2.01, 3.0))] {
            let m = SlitMap::from_tip(base, tip).unwrap();
            assert!((m.tip() - tip).norm() < 1e-12, "{tip} {}", m.tip());
            assert!((m.capacity() - slit_capacity(tip - base)).abs() < 1e-15);
            for z in [c(0.1, 0.01), c(-5.0, 2.0), c(3.0, 0.001), tip + c(1e-7, 1e-7), tip + c(-0.3, 0.1), c(1e9, 1.0)] {
                let w = m.inverse(z).unwrap();
                assert!(w.im > 0.0);
                assert!((m.forward(w) - z).norm() < 1e-9 * (1.0 + z.norm()), "{z} -> {w} -> {}", m.forward(w));
            }
            for w in [c(0.0, 1e-3), c(10.0, 0.5), c(m.end(), 1e-4)] {
                assert!((m.inverse(m.forward(w)).unwrap() - w).norm() < 1e-8, "{tip} {w} {}", m.inverse(m.forward(w)).unwrap());
            }
        }
    }

    #[test]
    fn pocket_under_a_flat_slit() {
        // The preimage lies about 1e-19 from the foot of the slit.
        let m = SlitMap::from_tip(0.0, c(28.7, 4.89)).unwrap();
        assert_eq!(m.inverse(c(2.77, 0.234)), None);
        let w = m.inverse(c(2.77, 0.6)).unwrap();
        assert!((m.forward(w) - c(2.77, 0.6)).norm() < 1e-9);
    }

    #[test]
    fn slit_parameters_from_driving() {
        for dw in [-2.0, -0.1, 0.0, 0.5, 3.0] {
            let m = SlitMap::from_driving(1.0, dw, 0.25);
            assert!((m.end() - 1.0 - dw).abs() < 1e-12);
            assert!((slit_capacity(m.tip() - 1.0) - 0.25).abs() < 1e-12);
        }
        // Vertical slit of height 1 has capacity 1/4.
        assert!((slit_capacity(c(0.0, 1.0)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn vertical_slit() {
        let h = 2.0;
        let d = extract_driving(&[c(0.7, 0.0), c(0.7, h)], h * h / 40.0).unwrap();
        assert_eq!(d.len(), 11);
        assert!(d.values.iter().all(|w| (w - 0.7).abs() < 1e-9));
        assert!((d.total_capacity() - h * h / 4.0).abs() < 1e-9);
        let sum: f64 = d.times.windows(2).map(|w| w[1] - w[0]).sum();
        assert!((sum - d.total_capacity()).abs() < 1e-12);
        assert_eq!(d.grid_len(), 11);
    }

    #[test]
    fn mirrored_curve_negates_driving() {
        let curve = [c(0.0, 0.0), c(0.3, 0.5), c(-0.2, 1.1), c(0.4, 1.3), c(1.0, 0.6)];
        let mirror: Vec<Complex64> = curve.iter().map(|z| c(-z.re, z.im)).collect();
        let a = extract_driving(&curve, 0.01).unwrap();
        let b = extract_driving(&mirror, 0.01).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x + y).abs() < 1e-9);
        }
        for (x, y) in a.times.iter().zip(&b.times) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_is_additive_and_scales() {
        let mut rng = RngStream::new(4, 0).rng();
        let trace = sample_sle_trace(3.0, 120, 0.01, &mut rng).unwrap();
        let d = extract_driving(&trace, 0.01).unwrap();
        let sum: f64 = d.times.windows(2).map(|w| w[1] - w[0]).sum();
        assert!((sum - d.total_capacity()).abs() < 1e-8);
        // A trace built from slits of capacity dt is taken apart by the
        // same slits.
        assert!((d.total_capacity() - 1.2).abs() < 1e-8);
        let lambda = 3.0;
        let scaled: Vec<Complex64> = trace.iter().map(|z| z * lambda).collect();
        let e = extract_driving(&scaled, 0.01 * lambda * lambda).unwrap();
        assert_eq!(d.len(), e.len());
        for k in 0..d.len() {
            assert!((e.values[k] - lambda * d.values[k]).abs() < 0.01 * (1.0 + lambda * d.values[k].abs()));
            assert!((e.times[k] - lambda * lambda * d.times[k]).abs() < 0.01 * lambda * lambda * d.times[k].max(1e-3));
        }
    }

    #[test]
    fn deterministic_traces() {
        let line = sample_sle_trace(0.0, 50, 0.04, &mut RngStream::new(1, 0).rng()).unwrap();
        for (k, z) in line.iter().enumerate() {
            assert!(z.re.abs() < 1e-12);
            assert!((z.im - 2.0 * (k as f64 * 0.04).sqrt()).abs() < 1e-9);
        }
        let a = sample_sle_trace(6.0, 40, 0.01, &mut RngStream::new(1, 0).rng()).unwrap();
        let b = sample_sle_trace(6.0, 40, 0.01, &mut RngStream::new(2, 0).rng()).unwrap();
        let a2 = sample_sle_trace(6.0, 40, 0.01, &mut RngStream::new(1, 0).rng()).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a, b);
        assert_eq!(a, a2);
        assert!(sample_sle_trace(-1.0, 4, 0.1, &mut RngStream::new(1, 0).rng()).is_err());
    }

    fn round_trip(kappa: f64) -> KappaEstimate {
        let drivings: Vec<DrivingFunction> = (0..200)
            .map(|k| {
                let trace = sample_sle_trace(kappa, 100, 0.01, &mut RngStream::new(9, k).rng()).unwrap();
                extract_driving(&trace, 0.01).unwrap()
            })
            .collect();
        estimate_kappa(&drivings).unwrap()
    }

    #[test]
    fn sle_round_trip_recovers_kappa() {
        for kappa in [2.0, 6.0] {
            let est = round_trip(kappa);
            assert_eq!(est.grid_len, 101);
            assert!((est.kappa - kappa).abs() < 0.15 * kappa, "{kappa}: {est:?}");
        }
    }

    #[test]
    fn kappa_estimator() {
        let step = 0.01;
        let zero: Vec<DrivingFunction> = (0..30)
            .map(|_| DrivingFunction {
                times: (0..10).map(|k| k as f64 * step).collect(),
                values: vec![0.5; 10],
                capacity_step: step,
                source: DrivingSource::Slit,
                dropped: 0,
            })
            .collect();
        assert_eq!(estimate_kappa(&zero).unwrap().kappa, 0.0);
        assert!(estimate_kappa(&zero[..29]).is_err());
        let mut mixed = zero.clone();
        mixed[3].capacity_step = 0.02;
        assert!(estimate_kappa(&mixed).is_err());
        // Brownian driving with diffusivity 6 sampled directly.
        let mut rng = RngStream::new(12, 0).rng();
        let walks: Vec<DrivingFunction> = (0..400)
            .map(|_| {
                let mut w = 0.0;
                let values = (0..50)
                    .map(|k| {
                        if k > 0 {
                            w += (6.0 * step).sqrt() * rng.sample::<f64, _>(StandardNormal);
                        }
                        w
                    })
                    .collect();
                DrivingFunction {
                    times: (0..50).map(|k| k as f64 * step).collect(),
                    values,
                    capacity_step: step,
                    source: DrivingSource::Synthetic { kappa: 6.0 },
                    dropped: 0,
                }
            })
            .collect();
        let est = estimate_kappa(&walks).unwrap();
        assert!((est.kappa - 6.0).abs() < 3.0 * est.stderr, "{est:?}");
        // Cut each walk when it first leaves [-0.6, 0.6]: a stopping time
        // that favours large excursions, which freezing must not bias.
        let cut: Vec<DrivingFunction> = walks
            .iter()
            .map(|d| {
                let end = d.values.iter().position(|w| w.abs() >= 0.6).map_or(d.len(), |k| k + 1);
                DrivingFunction { times: d.times[..end].to_vec(), values: d.values[..end].to_vec(), ..d.clone() }
            })
            .collect();
        assert!(cut.iter().any(|d| d.len() < 20));
        let est = estimate_kappa(&cut).unwrap();
        assert_eq!(est.grid_len, 50);
        assert!((est.kappa - 6.0).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn extraction_rejects_bad_curves() {
        assert!(extract_driving(&[c(0.0, 0.0), c(0.0, 1.0)], 0.0).is_err());
        assert!(extract_driving(&[c(0.0, 0.1), c(0.0, 1.0)], 0.1).is_err());
        assert!(extract_driving(&[c(0.0, 0.0), c(0.0, 1.0), c(1.0, -0.1)], 0.1).is_err());
    }

    #[test]
    fn frechet_examples() {
        let a = [c(0.0, 0.0), c(1.0, 0.5), c(2.0, 0.0), c(3.0, 1.0)];
        assert_eq!(curve_distance(&a, &a).unwrap().value, 0.0);
        let dup = [a[0], a[1], a[1], a[2], a[3], a[3]];
        let r = curve_distance(&a, &dup).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.witness.first(), Some(&(0, 0)));
        assert_eq!(r.witness.last(), Some(&(3, 5)));
        let eps = 0.125;
        let shifted: Vec<Complex64> = a.iter().map(|z| z + eps).collect();
        assert!(curve_distance(&a, &shifted).unwrap().value <= eps);
        assert!(curve_distance(&a, &[]).is_err());
    }

    fn curve_strategy() -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12).prop_map(|v| v.into_iter().map(|(x, y)| c(x, y)).collect())
    }

    proptest! {
        #[test]
        fn frechet_is_a_pseudometric(a in curve_strategy(), b in curve_strategy(), d in curve_strategy()) {
            let ab = curve_distance(&a, &b).unwrap();
            let ba = curve_distance(&b, &a).unwrap().value;
            let bd = curve_distance(&b, &d).unwrap().value;
            let ad = curve_distance(&a, &d).unwrap().value;
            prop_assert!((ab.value - ba).abs() < 1e-12);
            prop_assert!(ad <= ab.value + bd + 1e-12);
            // The witness is a monotone coupling realising the value.
            let realised = ab.witness.iter().map(|&(i, j)| (a[i] - b[j]).norm()).fold(0.0, f64::max);
            prop_assert!((realised - ab.value).abs() < 1e-12);
            prop_assert!(ab.witness.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1 && w[1].0 + w[1].1 > w[0].0 + w[0].1));
        }

        #[test]
        fn inverse_undoes_forward(base in -2.0f64..2.0, x in -3.0f64..3.0, y in 0.05f64..3.0, wx in -5.0f64..5.0, wy in 1e-9f64..5.0) {
            let m = SlitMap::from_tip(base, c(x, y)).unwrap();
            let w = c(wx, wy);
            let z = m.forward(w);
            prop_assert!(z.im > 0.0);
            let back = m.inverse(z).unwrap();
            prop_assert!((back - w).norm() < 1e-6 * (1.0 + w.norm()), "{} vs {}", back, w);
        }
    }

    #[test]
    fn embedding_contract() {
        let d = build_rectangle_domain_at(64, 32, 1.0, (32, 0), (32, 32)).unwrap();
        assert_eq!(default_stop_radius(&d).unwrap(), 16.0);
        let mut rng = RngStream::new(3, 0).rng();
        let mut path = ExplorationPath::default();
        sample_exploration_until(&d, 0.5, &mut rng, |_| false, &mut path).unwrap();
        let curve = half_plane_embed(&d, &path, None).unwrap();
        assert_eq!(curve[0], c(0.0, 0.0));
        assert!(curve[1].im > 0.0 && curve[1].im < 1.0);
        assert!(curve.iter().all(|z| z.norm() < 16.0));
        assert!(half_plane_embed(&d, &path, Some(33.0)).is_err());
        let side = build_rectangle_domain_at(64, 32, 1.0, (0, 8), (32, 32)).unwrap();
        assert!(half_plane_embed(&side, &path, None).is_err());
        let tall = build_rectangle_domain_at(32, 32, 1.0, (16, 0), (16, 32)).unwrap();
        assert!(default_stop_radius(&tall).is_err());
    }

    #[test]
    fn exploration_drivings_are_reproducible() {
        let d = build_rectangle_domain_at(64, 32, 1.0, (32, 0), (32, 32)).unwrap();
        let a = exploration_drivings(&d, 4, 5, None, None).unwrap();
        let b = exploration_drivings(&d, 4, 5, None, None).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.source == DrivingSource::Percolation && x.grid_len() >= 2));
    }
}

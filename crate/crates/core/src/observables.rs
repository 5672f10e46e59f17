//! The parafermionic observable of the exploration path.
//!
//! For a medial edge `e`,
//! `F(e) = E[exp(i W(e, e_b) / 3) 1(e in path)]`, where `W(e, e_b)` is the
//! winding from `e` to the exit edge. Windings are whole quarter turns, so
//! each sample adds one of twelve unit phases to an edge. Fields are
//! accumulated as integer counts per phase class, which makes exact
//! enumeration exact up to the final division and Monte Carlo merges
//! independent of worker scheduling.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploration::{walk_with, ExplorationPath};
use crate::lattice::{DobrushinDomain, EdgeId, EdgeRole, MedialEdgeId, Pt};
use crate::percolation::{enumerate_configurations, fill_bits, Configuration};
use crate::rng::RngStream;

/// Samples drawn from one random stream.
pub const BLOCK: u64 = 4096;

const OPEN: u32 = u32::MAX - 1;
const CLOSED: u32 = u32::MAX;

/// How a field is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    /// Sum over every configuration of the free edges.
    Exact { cap: usize },
    /// Independent samples in blocks of [`BLOCK`], one random stream per
    /// block. `workers = 0` uses rayon's default pool.
    MonteCarlo { samples: u64, seed: u64, workers: usize },
}

impl Mode {
    pub fn monte_carlo(samples: u64, seed: u64) -> Self {
        Mode::MonteCarlo { samples, seed, workers: 0 }
    }
}

fn phase(k: usize) -> Complex64 {
    Complex64::from_polar(1.0, k as f64 * std::f64::consts::PI / 6.0)
}

/// Per-edge tallies of `W(e, e_b)` modulo a full turn, in twelfths of `2 pi`
/// after division by three.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindingCounts {
    pub counts: Vec<[u64; 12]>,
    pub samples: u64,
}

impl WindingCounts {
    pub fn new(edges: usize) -> Self {
        Self { counts: vec![[0; 12]; edges], samples: 0 }
    }

    /// Record the edges of one path, optionally only those passing `keep`.
    fn add(&mut self, path: &ExplorationPath, mut keep: impl FnMut(usize) -> bool) {
        let total = *path.turns.last().expect("path has an entry edge");
        for (k, (e, t)) in path.edges.iter().zip(&path.turns).enumerate() {
            if keep(k) {
                self.counts[e.index()][(total - t).rem_euclid(12) as usize] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.samples += other.samples;
    }

    /// Mean and standard error of real and imaginary parts per edge. Each
    /// sample contributes either zero or a single unit phase to an edge,
    /// so second moments follow from the counts as well.
    pub fn moments(&self) -> (Vec<Complex64>, Vec<(f64, f64)>) {
        let n = self.samples.max(1) as f64;
        self.counts
            .iter()
            .map(|c| {
                let (mut m, mut re2, mut im2) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
                for (k, &count) in c.iter().enumerate() {
                    let z = phase(k) * count as f64;
                    m += z;
                    re2 += count as f64 * phase(k).re.powi(2);
                    im2 += count as f64 * phase(k).im.powi(2);
                }
                m /= n;
                let var_re = (re2 / n - m.re * m.re).max(0.0);
                let var_im = (im2 / n - m.im * m.im).max(0.0);
                let denom = (n - 1.0).max(1.0);
                (m, ((var_re / denom).sqrt(), (var_im / denom).sqrt()))
            })
            .unzip()
    }
}

/// Edge status lookup used by the fast samplers: free slot index, or one
/// of the two forced codes.
pub(crate) fn status_codes(domain: &DobrushinDomain) -> Vec<u32> {
    (0..domain.medial_vertex_count())
        .map(|v| match domain.roles[v] {
            EdgeRole::Free => domain.free_slot[v],
            EdgeRole::Open => OPEN,
            EdgeRole::Closed => CLOSED,
        })
        .collect()
}

#[inline]
pub(crate) fn status(codes: &[u32], bits: &[u64], v: u32) -> bool {
    let c = codes[v as usize];
    if c < OPEN {
        bits[(c >> 6) as usize] >> (c & 63) & 1 == 1
    } else {
        c == OPEN
    }
}

/// Which part of the field a tally collects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    All,
    /// Edges whose vertex is visited exactly once (`true`) or twice.
    Visits(bool),
}

/// Run the sampler for `mode`, handing each traced path to `tally`.
fn drive<T: Send>(
    domain: &DobrushinDomain,
    mode: Mode,
    init: impl Fn() -> T + Sync + Send,
    tally: impl Fn(&mut T, &ExplorationPath) + Sync + Send,
    merge: impl Fn(T, T) -> T + Sync + Send,
) -> Result<(T, u64)> {
    match mode {
        Mode::Exact { cap } => {
            let mut acc = init();
            let mut path = ExplorationPath::default();
            let mut n = 0u64;
            for cfg in enumerate_configurations(domain, cap)? {
                walk_with(domain, |v| cfg.is_open(domain, EdgeId(v)), |_| false, &mut path)?;
                tally(&mut acc, &path);
                n += 1;
            }
            Ok((acc, n))
        }
        Mode::MonteCarlo { samples, seed, workers } => {
            if samples == 0 {
                return Err(Error::InvalidArgument("Monte Carlo needs at least one sample".into()));
            }
            let codes = status_codes(domain);
            let blocks = samples.div_ceil(BLOCK);
            let run = || {
                (0..blocks)
                    .into_par_iter()
                    .map(|b| -> Result<T> {
                        let mut rng = RngStream::new(seed, b).rng();
                        let mut acc = init();
                        let mut path = ExplorationPath::default();
                        let free = domain.free_edge_count();
                        let mut bits = vec![0u64; free.div_ceil(64).max(1)];
                        let count = BLOCK.min(samples - b * BLOCK);
                        for _ in 0..count {
                            fill_bits(&mut bits, free, 0.5, &mut rng);
                            walk_with(domain, |v| status(&codes, &bits, v), |_| false, &mut path)?;
                            tally(&mut acc, &path);
                        }
                        Ok(acc)
                    })
                    .try_reduce(&init, |a, b| Ok(merge(a, b)))
            };
            let acc = if workers == 0 {
                run()?
            } else {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
                pool.install(run)?
            };
            Ok((acc, samples))
        }
    }
}

fn tally_part(domain: &DobrushinDomain, mode: Mode, part: Part) -> Result<WindingCounts> {
    let edges = domain.medial_edge_slots();
    let nv = domain.medial_vertex_count();
    let (mut acc, n) = drive(
        domain,
        mode,
        || (WindingCounts::new(edges), vec![0u8; nv]),
        |(acc, visits), path| match part {
            Part::All => acc.add(path, |_| true),
            Part::Visits(once) => {
                for v in &path.vertices {
                    visits[v.index()] += 1;
                }
                let last = path.edges.len() - 1;
                acc.add(path, |k| {
                    // The exit edge has no head; classify it by its tail.
                    let v = if k == last { path.vertices[k - 1] } else { path.vertices[k] };
                    (visits[v.index()] == 1) == once
                });
                for v in &path.vertices {
                    visits[v.index()] = 0;
                }
            }
        },
        |(mut a, v), (b, _)| {
            a.merge(&b);
            (a, v)
        },
    )?;
    acc.0.samples = n;
    Ok(acc.0)
}

/// Tallies behind [`edge_observable`], exposed for callers that merge runs.
pub fn winding_counts(domain: &DobrushinDomain, mode: Mode) -> Result<WindingCounts> {
    tally_part(domain, mode, Part::All)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FieldMode {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

/// Complex value per medial edge id; absent ids hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableField {
    pub domain_hash: String,
    pub mode: FieldMode,
    pub values: Vec<Complex64>,
    /// Standard errors of real and imaginary parts (Monte Carlo only).
    pub stderr: Option<Vec<(f64, f64)>>,
}

impl ObservableField {
    pub fn from_counts(domain: &DobrushinDomain, counts: &WindingCounts, mode: Mode) -> Self {
        let (values, stderr) = counts.moments();
        let (mode, stderr) = match mode {
            Mode::Exact { .. } => (FieldMode::Exact, None),
            Mode::MonteCarlo { samples, seed, .. } => (FieldMode::MonteCarlo { samples, seed }, Some(stderr)),
        };
        Self { domain_hash: domain.hash().to_owned(), mode, values, stderr }
    }

    pub fn zero(domain: &DobrushinDomain) -> Self {
        Self { domain_hash: domain.hash().to_owned(), mode: FieldMode::Exact, values: vec![Complex64::new(0.0, 0.0); domain.medial_edge_slots()], stderr: None }
    }

    pub fn get(&self, e: MedialEdgeId) -> Complex64 {
        self.values[e.index()]
    }

    fn check(&self, domain: &DobrushinDomain) -> Result<()> {
        if self.domain_hash != domain.hash() {
            return Err(Error::DomainMismatch(format!("field for {} used on {}", self.domain_hash, domain.hash())));
        }
        Ok(())
    }

    /// Field table with columns `medial_id,x,y,re,im,stderr_re,stderr_im`.
    pub fn to_csv(&self, domain: &DobrushinDomain) -> String {
        let mut out = String::from("medial_id,x,y,re,im,stderr_re,stderr_im\n");
        for e in domain.medial_edges() {
            let z = domain.medial_midpoint(e);
            let v = self.values[e.index()];
            let (sr, si) = self.stderr.as_ref().map_or((0.0, 0.0), |s| s[e.index()]);
            let _ = writeln!(out, "{},{},{},{},{},{},{}", e.0, z.re, z.im, v.re, v.im, sr, si);
        }
        out
    }
}

/// `F(e)` for every medial edge.
pub fn edge_observable(domain: &DobrushinDomain, mode: Mode) -> Result<ObservableField> {
    let counts = winding_counts(domain, mode)?;
    Ok(ObservableField::from_counts(domain, &counts, mode))
}

/// `F` split by how often the path visits the vertex of each edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedField {
    /// Paths through the vertex once, using two of its medial edges.
    pub one: ObservableField,
    /// Paths through the vertex twice, using all four.
    pub two: ObservableField,
}

pub fn decompose(domain: &DobrushinDomain, mode: Mode) -> Result<DecomposedField> {
    let one = tally_part(domain, mode, Part::Visits(true))?;
    let two = tally_part(domain, mode, Part::Visits(false))?;
    Ok(DecomposedField { one: ObservableField::from_counts(domain, &one, mode), two: ObservableField::from_counts(domain, &two, mode) })
}

/// Vertex values `F(v)` and `F*(v)` for every medial vertex with at least
/// two medial edges; others hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexField {
    pub values: Vec<Option<Complex64>>,
    pub dual_values: Vec<Option<Complex64>>,
}

impl VertexField {
    pub fn get(&self, v: EdgeId) -> Option<Complex64> {
        self.values[v.index()]
    }
}

fn exit_prefactor(domain: &DobrushinDomain) -> Complex64 {
    // Principal cube root of the exit direction, inverted.
    let theta = domain.exit_direction().arg();
    Complex64::from_polar(1.0, -theta / 3.0)
}

/// `F(v) = e_b^{-1/3} (e^{-i pi/4} (F(A) + F(C)) + e^{i pi/4} (F(B) + F(D))) / 2`
/// at interior vertices; with only two medial edges present the missing
/// terms vanish and the halving is dropped.
pub fn vertex_observable(domain: &DobrushinDomain, field: &ObservableField, v: EdgeId) -> Result<Complex64> {
    vertex_combination(domain, field, v, false)
}

/// `F*(v)`, the same combination with the two phases exchanged.
pub fn dual_vertex_observable(domain: &DobrushinDomain, field: &ObservableField, v: EdgeId) -> Result<Complex64> {
    vertex_combination(domain, field, v, true)
}

fn vertex_combination(domain: &DobrushinDomain, field: &ObservableField, v: EdgeId, dual: bool) -> Result<Complex64> {
    field.check(domain)?;
    let labels = domain.labelled_edges(v);
    let present = labels.iter().flatten().count();
    if present < 2 {
        return Err(Error::InvalidArgument(format!("medial vertex {:?} has {present} medial edges", domain.centre(v))));
    }
    let f = |k: usize| labels[k].map_or(Complex64::new(0.0, 0.0), |e| field.get(e));
    let (p, q) = (Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4), Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4));
    let (p, q) = if dual { (q, p) } else { (p, q) };
    let scale = if present == 4 { 0.5 } else { 1.0 };
    Ok(exit_prefactor(domain) * (p * (f(0) + f(2)) + q * (f(1) + f(3))) * scale)
}

pub fn vertex_field(domain: &DobrushinDomain, field: &ObservableField) -> Result<VertexField> {
    field.check(domain)?;
    let (mut values, mut dual_values) = (Vec::new(), Vec::new());
    for v in domain.edges() {
        if domain.degree(v) >= 2 {
            values.push(Some(vertex_observable(domain, field, v)?));
            dual_values.push(Some(dual_vertex_observable(domain, field, v)?));
        } else {
            values.push(None);
            dual_values.push(None);
        }
    }
    Ok(VertexField { values, dual_values })
}

/// `F(A) - F(C) - i (F(B) - F(D))` at a vertex with all four edges.
pub fn cr_residual(domain: &DobrushinDomain, field: &ObservableField, v: EdgeId) -> Result<Complex64> {
    field.check(domain)?;
    let l = domain.labelled_edges(v);
    let [Some(a), Some(b), Some(c), Some(d)] = l else {
        return Err(Error::InvalidArgument(format!("medial vertex {:?} is not interior", domain.centre(v))));
    };
    Ok(field.get(a) - field.get(c) - Complex64::i() * (field.get(b) - field.get(d)))
}

/// Largest residual modulus over all interior vertices.
pub fn max_cr_residual(domain: &DobrushinDomain, field: &ObservableField) -> Result<f64> {
    let mut worst = 0.0f64;
    for v in domain.edges().filter(|&v| domain.is_interior_vertex(v)) {
        worst = worst.max(cr_residual(domain, field, v)?.norm());
    }
    Ok(worst)
}

/// Residual of the relation at `v` divided by its standard error, using
/// independent errors of the four edge estimates.
pub fn cr_residual_sigma(domain: &DobrushinDomain, field: &ObservableField, v: EdgeId) -> Result<f64> {
    let r = cr_residual(domain, field, v)?;
    let Some(se) = &field.stderr else { return Ok(0.0) };
    let l = domain.labelled_edges(v);
    // Real part of the residual mixes Re A, Re C, Im B, Im D; the imaginary
    // part mixes Im A, Im C, Re B, Re D.
    let s = |k: usize| se[l[k].expect("interior vertex").index()];
    let var_re = s(0).0.powi(2) + s(2).0.powi(2) + s(1).1.powi(2) + s(3).1.powi(2);
    let var_im = s(0).1.powi(2) + s(2).1.powi(2) + s(1).0.powi(2) + s(3).0.powi(2);
    Ok((r.re.abs() / var_re.sqrt().max(1e-300)).max(r.im.abs() / var_im.sqrt().max(1e-300)))
}

/// `sum_j (z_{j+1} - z_j) F(v_j)^power` along a path of primal vertices
/// (doubled coordinates), `v_j` being the centre of the step.
pub fn line_integral(domain: &DobrushinDomain, vertices: &VertexField, path: &[Pt], power: i32) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for w in path.windows(2) {
        let (z0, z1) = (w[0], w[1]);
        if (z1.x - z0.x).abs() + (z1.y - z0.y).abs() != 2 || !z0.is_primal() {
            return Err(Error::InvalidArgument(format!("{z0:?} and {z1:?} are not adjacent primal vertices")));
        }
        let mid = Pt::new((z0.x + z1.x) / 2, (z0.y + z1.y) / 2);
        let v = domain.vertex_at(mid).ok_or_else(|| Error::InvalidArgument(format!("step {z0:?} -> {z1:?} leaves the domain")))?;
        let f = vertices.get(v).ok_or_else(|| Error::InvalidArgument(format!("no vertex value at {mid:?}")))?;
        sum += (z1.plane(domain.mesh()) - z0.plane(domain.mesh())) * f.powi(power);
    }
    Ok(sum)
}

/// Integral of `F^3` along `path`, without the `1 / mesh` normalisation.
pub fn line_integral_cubed(domain: &DobrushinDomain, vertices: &VertexField, path: &[Pt]) -> Result<Complex64> {
    line_integral(domain, vertices, path, 3)
}

/// Staircase of primal vertices from the side entering `b` to the side
/// leaving it, keeping each vertex as close as possible to the circle of
/// `radius` lattice units around `b`.
pub fn near_b_path(domain: &DobrushinDomain, radius: u32) -> Result<Vec<Pt>> {
    let (walk, _, wb) = domain.boundary_walk();
    let m = walk.len();
    let b = walk[wb];
    let unit = |p: Pt, q: Pt| ((q.x - p.x) / 2, (q.y - p.y) / 2);
    let d_in = unit(walk[(wb + m - 1) % m], b);
    let d_out = unit(b, walk[(wb + 1) % m]);
    let r = radius as i32;
    let on_walk = |k: i32| {
        (1..=r).all(|s| {
            walk[((wb as i32 + k * s).rem_euclid(m as i32)) as usize]
                == b.shift(2 * s * if k > 0 { d_out.0 } else { -d_in.0 }, 2 * s * if k > 0 { d_out.1 } else { -d_in.1 })
        })
    };
    if radius < 2 || 2 * radius as usize > m || !on_walk(1) || !on_walk(-1) {
        return Err(Error::InvalidArgument(format!("no room for a path of radius {radius} around b")));
    }
    let start = b.shift(-2 * r * d_in.0, -2 * r * d_in.1);
    let end = b.shift(2 * r * d_out.0, 2 * r * d_out.1);
    let dist = |p: Pt| (((p.x - b.x) as f64).powi(2) + ((p.y - b.y) as f64).powi(2)).sqrt() / 2.0;
    let mut path = vec![start];
    let mut p = start;
    while p != end {
        let options = [p.shift(2 * d_in.0, 2 * d_in.1), p.shift(2 * d_out.0, 2 * d_out.1)];
        let ahead = |q: Pt| {
            let (dx, dy) = ((end.x - q.x) / 2, (end.y - q.y) / 2);
            // Never step past the end along either axis.
            dx * (d_in.0 + d_out.0) >= 0 && dy * (d_in.1 + d_out.1) >= 0
        };
        p = options
            .into_iter()
            .filter(|&q| ahead(q))
            .min_by(|&q1, &q2| (dist(q1) - r as f64).abs().total_cmp(&(dist(q2) - r as f64).abs()))
            .expect("one step always remains");
        path.push(p);
    }
    Ok(path)
}

/// Lattice radius of the near-`b` path: `mesh^{1/3}` in continuum units.
pub fn default_c_delta_radius(mesh: f64) -> u32 {
    (mesh.powf(1.0 / 3.0) / mesh).round() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CDelta {
    pub value: f64,
    pub stderr: f64,
    pub radius: u32,
}

/// `c_delta = Im sum_j (z_{j+1} - z_j) mesh^{-1} F(v_j)^3` along the near-`b`
/// path. In Monte Carlo mode the samples are split into `batches` equal
/// batches and the error comes from batch means of the linearised estimator.
pub fn estimate_c_delta(domain: &DobrushinDomain, mode: Mode, batches: u64) -> Result<CDelta> {
    let radius = default_c_delta_radius(domain.mesh());
    let path = near_b_path(domain, radius)?;
    let weights = |vf: &VertexField| -> Result<Vec<(Complex64, Complex64)>> {
        path.windows(2)
            .map(|w| {
                let mid = Pt::new((w[0].x + w[1].x) / 2, (w[0].y + w[1].y) / 2);
                let v = domain.vertex_at(mid).ok_or_else(|| Error::InvalidArgument("path leaves the domain".into()))?;
                let dz = (w[1].plane(domain.mesh()) - w[0].plane(domain.mesh())) / domain.mesh();
                Ok((dz, vf.get(v).unwrap_or_default()))
            })
            .collect()
    };
    let value_of = |terms: &[(Complex64, Complex64)]| terms.iter().map(|(dz, f)| dz * f.powi(3)).sum::<Complex64>().im;
    match mode {
        Mode::Exact { .. } => {
            let vf = vertex_field(domain, &edge_observable(domain, mode)?)?;
            Ok(CDelta { value: value_of(&weights(&vf)?), stderr: 0.0, radius })
        }
        Mode::MonteCarlo { samples, seed, workers } => {
            let batches = batches.max(2);
            let per = samples / batches;
            if per == 0 {
                return Err(Error::InvalidArgument("fewer samples than batches".into()));
            }
            let mut total = WindingCounts::new(domain.medial_edge_slots());
            let mut parts = Vec::new();
            for k in 0..batches {
                let m = Mode::MonteCarlo { samples: per, seed: seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15)), workers };
                let counts = winding_counts(domain, m)?;
                total.merge(&counts);
                let f = ObservableField::from_counts(domain, &counts, m);
                parts.push(weights(&vertex_field(domain, &f)?)?);
            }
            let mean_field = ObservableField::from_counts(domain, &total, mode);
            let mean = weights(&vertex_field(domain, &mean_field)?)?;
            let value = value_of(&mean);
            // Linearise F^3 around the pooled mean.
            let lin: Vec<f64> = parts.iter().map(|p| mean.iter().zip(p).map(|((dz, f0), (_, f))| dz * 3.0 * f0 * f0 * f).sum::<Complex64>().im).collect();
            let (mu, var) = crate::stats::mean_var(&lin);
            let _ = mu;
            Ok(CDelta { value, stderr: (var / batches as f64).sqrt(), radius })
        }
    }
}

/// Result of comparing slit-domain observables with conditional expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    /// Distinct partial paths examined.
    pub prefixes: usize,
    pub max_deviation: f64,
}

/// For every partial path `gamma[0, n]` that occurs, compare the exact
/// observable of the slit domain left after `n` steps with the average of
/// `exp(iW/3) 1(e in gamma)` over the configurations of `domain` whose path
/// starts with `gamma[0, n]`. Both sides are computed by enumeration.
pub fn slit_martingale_check(domain: &DobrushinDomain, cap: usize) -> Result<MartingaleCheck> {
    use crate::exploration::{slit_domain, trace_exploration};
    use std::collections::HashMap;

    struct Class {
        count: u64,
        sums: Vec<Complex64>,
        witness: (Configuration, ExplorationPath, usize),
    }
    let slots = domain.medial_edge_slots();
    let mut classes: HashMap<Vec<MedialEdgeId>, Class> = HashMap::new();
    for cfg in enumerate_configurations(domain, cap)? {
        let p = trace_exploration(domain, &cfg)?;
        let last = p.edges.len() - 1;
        let phases: Vec<Complex64> = (0..p.edges.len()).map(|k| Complex64::from_polar(1.0, p.winding(k, last) / 3.0)).collect();
        for n in 1..p.len() {
            let class = classes.entry(p.edges[..=n].to_vec()).or_insert_with(|| Class {
                count: 0,
                sums: vec![Complex64::new(0.0, 0.0); slots],
                witness: (cfg.clone(), p.clone(), n),
            });
            class.count += 1;
            for k in n..p.edges.len() {
                class.sums[p.edges[k].index()] += phases[k];
            }
        }
    }
    let mut max_deviation = 0.0f64;
    for class in classes.values() {
        let (cfg, path, n) = &class.witness;
        let slit = slit_domain(domain, cfg, path, *n)?;
        let f = edge_observable(&slit, Mode::Exact { cap })?;
        for (sum, value) in class.sums.iter().zip(&f.values) {
            max_deviation = max_deviation.max((sum / class.count as f64 - value).norm());
        }
    }
    Ok(MartingaleCheck { prefixes: classes.len(), max_deviation })
}

/// `|F|` at matched labels of two adjacent parallel medial vertices; the
/// largest difference over labels present at both.
pub fn translational_gap(domain: &DobrushinDomain, field: &ObservableField, v0: EdgeId, v1: EdgeId) -> Result<f64> {
    field.check(domain)?;
    let (c0, c1) = (domain.centre(v0), domain.centre(v1));
    let (dx, dy) = ((c1.x - c0.x).abs(), (c1.y - c0.y).abs());
    if !((dx == 2 && dy == 0) || (dx == 0 && dy == 2)) {
        return Err(Error::InvalidArgument(format!("{c0:?} and {c1:?} are not adjacent parallel medial vertices")));
    }
    let (l0, l1) = (domain.labelled_edges(v0), domain.labelled_edges(v1));
    Ok(l0.iter().zip(&l1).filter_map(|(a, b)| Some((field.get((*a)?) - field.get((*b)?)).norm())).fold(0.0, f64::max))
}

/// Modulus ratio of `F` between meshes at one continuum point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRatio {
    pub x: f64,
    pub y: f64,
    /// `|F|` on the fine mesh over `|F|` on the coarse mesh.
    pub ratio: f64,
    pub stderr: f64,
}

/// Outcome of comparing discrete fields on two meshes with the strip map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub core_vertices: usize,
    /// Quantiles 0.1, 0.5, 0.9 of `|arg(F(v)^3 / F'(v))|` on the fine mesh.
    pub phase_error_quantiles: [f64; 3],
    pub phase_error_median_coarse: f64,
    pub probes: Vec<ProbeRatio>,
    /// `2^{-1/3}`, the ratio expected from `|F| ~ mesh^{1/3}`.
    pub modulus_ratio_target: f64,
}

/// Compare `F(v)^3` against the strip-map derivative on the core of the
/// domain (points at least `core * shorter side` from the boundary), and
/// `|F|` between meshes `2h` and `h` at each probe. `|F|` at a probe is the
/// mean over the four medial vertices around the nearest primal vertex.
pub fn continuum_compare(
    coarse: (&DobrushinDomain, &ObservableField),
    fine: (&DobrushinDomain, &ObservableField),
    derivative: impl Fn(Complex64) -> Option<Complex64>,
    probes: &[Complex64],
    core: f64,
) -> Result<ComparisonReport> {
    let (dc, fc) = coarse;
    let (df, ff) = fine;
    if (dc.mesh() - 2.0 * df.mesh()).abs() > 1e-9 * dc.mesh() {
        return Err(Error::InvalidArgument(format!("meshes {} and {} are not in ratio two", dc.mesh(), df.mesh())));
    }
    let poly: Vec<Complex64> = df.polygon().iter().map(|p| p.plane(df.mesh())).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = poly.iter().map(|z| (z.re, z.im)).unzip();
    let span = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
    let margin = core * span(&xs).min(span(&ys));
    let (vc, vf) = (vertex_field(dc, fc)?, vertex_field(df, ff)?);
    let errors = |d: &DobrushinDomain, vf: &VertexField| -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for v in d.edges().filter(|&v| d.is_interior_vertex(v)) {
            let z = d.position(v);
            if d.boundary_distance(z) < margin {
                continue;
            }
            let fp = derivative(z).ok_or_else(|| Error::InvalidArgument(format!("strip solution undefined at {z}")))?;
            let fv = vf.get(v).expect("interior vertex");
            out.push((fv.powi(3) / fp).arg().abs());
        }
        Ok(out)
    };
    let mut fine_err = errors(df, &vf)?;
    let mut coarse_err = errors(dc, &vc)?;
    if fine_err.is_empty() || coarse_err.is_empty() {
        return Err(Error::InvalidArgument("the core contains no interior vertex".into()));
    }
    let q = |v: &mut Vec<f64>, p: f64| crate::stats::quantile(v, p);
    let phase_error_quantiles = [q(&mut fine_err, 0.1), q(&mut fine_err, 0.5), q(&mut fine_err, 0.9)];
    let phase_error_median_coarse = q(&mut coarse_err, 0.5);

    let around = |d: &DobrushinDomain, f: &ObservableField, vf: &VertexField, z: Complex64| -> Result<(f64, f64)> {
        let h = d.mesh();
        let p = Pt::new(2 * (z.re / h).round() as i32, 2 * (z.im / h).round() as i32);
        let (mut sum, mut var) = (0.0, 0.0f64);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let v = d
                .vertex_at(p.shift(dx, dy))
                .filter(|&v| d.is_interior_vertex(v))
                .ok_or_else(|| Error::InvalidArgument(format!("probe {z} is not inside the domain")))?;
            let value = vf.get(v).expect("interior vertex");
            sum += value.norm();
            if let Some(se) = &f.stderr {
                // Each edge enters with weight 1/2; project its error on the
                // direction of F(v).
                let u = value / value.norm().max(1e-300);
                for e in d.labelled_edges(v).iter().flatten() {
                    let (sr, si) = se[e.index()];
                    var += (0.5f64 / 4.0).powi(2) * (sr * sr + si * si) * (u.re.powi(2) + u.im.powi(2)) / 2.0;
                }
            }
        }
        Ok((sum / 4.0, var.sqrt()))
    };
    let probes = probes
        .iter()
        .map(|&z| {
            let (mc, sc) = around(dc, fc, &vc, z)?;
            let (mf, sf) = around(df, ff, &vf, z)?;
            let ratio = mf / mc;
            Ok(ProbeRatio { x: z.re, y: z.im, ratio, stderr: ratio * ((sf / mf).powi(2) + (sc / mc).powi(2)).sqrt() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport {
        core_vertices: fine_err.len(),
        phase_error_quantiles,
        phase_error_median_coarse,
        probes,
        modulus_ratio_target: 2f64.powf(-1.0 / 3.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exploration::trace_exploration;
    use crate::lattice::{build_rectangle_domain, Corner};
    use crate::percolation::Configuration;

    const EXACT: Mode = Mode::Exact { cap: 24 };

    /// Independent oracle: trace every configuration and sum phases in
    /// floating point, straight from the definition.
    fn oracle(d: &DobrushinDomain) -> Vec<Complex64> {
        let mut sum = vec![Complex64::new(0.0, 0.0); d.medial_edge_slots()];
        let n = 1u64 << d.free_edge_count();
        for i in 0..n {
            let cfg = Configuration::from_index(d, i);
            let p = trace_exploration(d, &cfg).unwrap();
            for (k, e) in p.edges.iter().enumerate() {
                let w = p.winding(k, p.edges.len() - 1);
                sum[e.index()] += Complex64::from_polar(1.0, w / 3.0);
            }
        }
        sum.iter().map(|z| z / n as f64).collect()
    }

    fn square(n: u32) -> DobrushinDomain {
        build_rectangle_domain(n, n, 1.0, Corner::SW, Corner::NE).unwrap()
    }

    #[test]
    fn slit_observable_is_the_conditional_expectation() {
        let d = build_rectangle_domain(2, 2, 1.0, Corner::SW, Corner::NE).unwrap();
        let c = slit_martingale_check(&d, 24).unwrap();
        assert!(c.prefixes > 10);
        assert!(c.max_deviation < 1e-12, "{c:?}");
    }

    #[test]
    fn unit_square_values() {
        let d = square(1);
        let f = edge_observable(&d, EXACT).unwrap();
        let o = oracle(&d);
        for e in d.medial_edges() {
            assert!((f.get(e) - o[e.index()]).norm() < 1e-14);
        }
        // Frozen from the oracle: four configurations, three of which pass
        // each side edge with a sixth of a turn left to wind.
        let at = |t: (i32, i32), h: (i32, i32)| {
            let (t, h) = (d.vertex_at(Pt::new(t.0, t.1)).unwrap(), d.vertex_at(Pt::new(h.0, h.1)).unwrap());
            f.get(d.medial_edges().find(|&e| d.medial_edge(e).tail == Some(t) && d.medial_edge(e).head == Some(h)).unwrap())
        };
        let sixth = std::f64::consts::PI / 6.0;
        assert!((f.get(d.entry_edge()) - 1.0).norm() < 1e-15);
        assert!((f.get(d.exit_edge()) - 1.0).norm() < 1e-15);
        assert!((at((1, 0), (2, -1)) - Complex64::from_polar(0.75, sixth)).norm() < 1e-15);
        assert!((at((3, 0), (2, 1)) - Complex64::from_polar(0.75, -sixth)).norm() < 1e-15);
        assert!((at((2, 1), (1, 0)) - 0.25).norm() < 1e-15);
        assert!((at((0, 1), (1, 2)) - 0.75).norm() < 1e-15);
    }

    #[test]
    fn exact_matches_oracle_and_is_bounded() {
        for d in [square(2), build_rectangle_domain(2, 3, 1.0, Corner::SW, Corner::NE).unwrap()] {
            let f = edge_observable(&d, EXACT).unwrap();
            let o = oracle(&d);
            for e in d.medial_edges() {
                assert!((f.get(e) - o[e.index()]).norm() < 1e-12);
                assert!(f.get(e).norm() <= 1.0 + 1e-12);
            }
            assert_eq!(f, edge_observable(&d, EXACT).unwrap());
        }
    }

    #[test]
    fn cauchy_riemann_holds_exactly() {
        for d in [square(2), build_rectangle_domain(2, 3, 1.0, Corner::SW, Corner::NE).unwrap()] {
            let f = edge_observable(&d, EXACT).unwrap();
            let worst = max_cr_residual(&d, &f).unwrap();
            assert!(worst < 1e-12, "{worst}");
            assert_eq!(max_cr_residual(&d, &ObservableField::zero(&d)).unwrap(), 0.0);
        }
    }

    #[test]
    fn cauchy_riemann_within_noise() {
        let d = build_rectangle_domain(6, 6, 1.0, Corner::SW, Corner::NE).unwrap();
        let f = edge_observable(&d, Mode::monte_carlo(100_000, 3)).unwrap();
        for v in d.edges().filter(|&v| d.is_interior_vertex(v)) {
            assert!(cr_residual_sigma(&d, &f, v).unwrap() < 5.0);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let d = build_rectangle_domain(2, 3, 1.0, Corner::SW, Corner::NE).unwrap();
        let exact = edge_observable(&d, EXACT).unwrap();
        let mc = edge_observable(&d, Mode::monte_carlo(40_000, 17)).unwrap();
        let se = mc.stderr.as_ref().unwrap();
        for e in d.medial_edges() {
            let (a, b) = (exact.get(e), mc.get(e));
            let (sr, si) = se[e.index()];
            assert!((a.re - b.re).abs() <= 4.0 * sr + 1e-12);
            assert!((a.im - b.im).abs() <= 4.0 * si + 1e-12);
        }
    }

    #[test]
    fn monte_carlo_is_reproducible_across_workers() {
        let d = square(5);
        let a = edge_observable(&d, Mode::MonteCarlo { samples: 10_000, seed: 5, workers: 1 }).unwrap();
        let b = edge_observable(&d, Mode::MonteCarlo { samples: 10_000, seed: 5, workers: 3 }).unwrap();
        assert_eq!(a, b);
        assert!(edge_observable(&d, Mode::monte_carlo(0, 5)).is_err());
    }

    #[test]
    fn decomposition_partitions_the_field() {
        let d = square(2);
        let f = edge_observable(&d, EXACT).unwrap();
        let parts = decompose(&d, EXACT).unwrap();
        for e in d.medial_edges() {
            assert!((parts.one.get(e) + parts.two.get(e) - f.get(e)).norm() < 1e-12);
        }
        assert!(d.medial_edges().any(|e| parts.two.get(e).norm() > 1e-3));
    }

    #[test]
    fn decomposition_without_double_visits() {
        // Every free edge open: a single path hugging the dual arc, no
        // vertex visited twice.
        let d = build_rectangle_domain(3, 2, 1.0, Corner::SW, Corner::NE).unwrap();
        let mut counts = WindingCounts::new(d.medial_edge_slots());
        let p = trace_exploration(&d, &Configuration::all_open(&d)).unwrap();
        let mut vs = p.vertices.clone();
        vs.sort();
        vs.dedup();
        assert_eq!(vs.len(), p.vertices.len());
        counts.add(&p, |_| true);
        counts.samples = 1;
        assert_eq!(counts.moments().0[d.exit_edge().index()], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn vertex_formula_cases() {
        let d = square(2);
        let zero = ObservableField::zero(&d);
        for v in d.edges().filter(|&v| d.degree(v) >= 2) {
            assert_eq!(vertex_observable(&d, &zero, v).unwrap(), Complex64::new(0.0, 0.0));
        }
        // Interior vertex with F(A) = F(C) = sqrt2 e^{i pi/4}, B = D = 0; the
        // exit direction here is e^{i pi/4}, whose cube root is undone.
        let v = d.edges().find(|&v| d.is_interior_vertex(v)).unwrap();
        let mut f = ObservableField::zero(&d);
        let l = d.labelled_edges(v);
        let val = Complex64::from_polar(2f64.sqrt(), std::f64::consts::FRAC_PI_4);
        f.values[l[0].unwrap().index()] = val;
        f.values[l[2].unwrap().index()] = val;
        let got = vertex_observable(&d, &f, v).unwrap() / exit_prefactor(&d);
        assert!((got - Complex64::new(2f64.sqrt(), 0.0)).norm() < 1e-14);
        // Boundary vertex: two edges, no halving.
        let w = d.edges().find(|&w| d.degree(w) == 2).unwrap();
        let mut g = ObservableField::zero(&d);
        let lw = d.labelled_edges(w);
        for e in lw.iter().flatten() {
            g.values[e.index()] = Complex64::new(1.0, 0.0);
        }
        let present: Vec<usize> = (0..4).filter(|&k| lw[k].is_some()).collect();
        let phase = |k: usize| Complex64::from_polar(1.0, if k % 2 == 0 { -1.0 } else { 1.0 } * std::f64::consts::FRAC_PI_4);
        let expected: Complex64 = present.iter().map(|&k| phase(k)).sum::<Complex64>() * exit_prefactor(&d);
        assert!((vertex_observable(&d, &g, w).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn closed_contours_vanish() {
        let d = build_rectangle_domain(2, 3, 1.0, Corner::SW, Corner::NE).unwrap();
        let vf = vertex_field(&d, &edge_observable(&d, EXACT).unwrap()).unwrap();
        // Every unit face and the whole boundary of the region.
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2)] {
            let p = Pt::new(2 * x, 2 * y);
            let loop_ = [p, p.shift(2, 0), p.shift(2, 2), p.shift(0, 2), p];
            assert!(line_integral(&d, &vf, &loop_, 1).unwrap().norm() < 1e-12);
        }
        let outer = [
            Pt::new(0, 0),
            Pt::new(2, 0),
            Pt::new(4, 0),
            Pt::new(4, 2),
            Pt::new(4, 4),
            Pt::new(4, 6),
            Pt::new(2, 6),
            Pt::new(0, 6),
            Pt::new(0, 4),
            Pt::new(0, 2),
            Pt::new(0, 0),
        ];
        assert!(line_integral(&d, &vf, &outer, 1).unwrap().norm() < 1e-12);
        assert!(line_integral(&d, &vf, &[Pt::new(0, 0), Pt::new(4, 0)], 1).is_err());
    }

    #[test]
    fn telescoping_integrals() {
        let d = square(3);
        let one = VertexField { values: vec![Some(Complex64::new(1.0, 0.0)); d.medial_vertex_count()], dual_values: vec![] };
        let path = [Pt::new(0, 0), Pt::new(2, 0), Pt::new(2, 2), Pt::new(4, 2)];
        let got = line_integral_cubed(&d, &one, &path).unwrap();
        assert!((got - Complex64::new(2.0, 1.0)).norm() < 1e-14);
        let closed = [Pt::new(0, 0), Pt::new(2, 0), Pt::new(2, 2), Pt::new(0, 2), Pt::new(0, 0)];
        assert!(line_integral_cubed(&d, &one, &closed).unwrap().norm() < 1e-14);
    }

    #[test]
    fn near_b_staircase() {
        let d = build_rectangle_domain(16, 16, 1.0 / 16.0, Corner::SW, Corner::NE).unwrap();
        let r = default_c_delta_radius(d.mesh());
        assert_eq!(r, 6);
        let p = near_b_path(&d, r).unwrap();
        assert_eq!(p.first(), Some(&Pt::new(32, 32 - 12)));
        assert_eq!(p.last(), Some(&Pt::new(32 - 12, 32)));
        assert_eq!(p.len(), 2 * r as usize + 1);
        assert!(estimate_c_delta(&square(2), EXACT, 2).is_err());
    }

    #[test]
    fn comparison_contracts() {
        let coarse = build_rectangle_domain(4, 4, 0.5, Corner::SW, Corner::NE).unwrap();
        let fine = build_rectangle_domain(8, 8, 0.25, Corner::SW, Corner::NE).unwrap();
        let fc = edge_observable(&coarse, Mode::monte_carlo(4096, 1)).unwrap();
        let ff = edge_observable(&fine, Mode::monte_carlo(4096, 2)).unwrap();
        let one = |_| Some(Complex64::new(1.0, 0.0));
        let centre = [Complex64::new(1.0, 1.0)];
        let r = continuum_compare((&coarse, &fc), (&fine, &ff), one, &centre, 0.2).unwrap();
        assert_eq!(r.probes.len(), 1);
        assert!(r.phase_error_quantiles[0] <= r.phase_error_quantiles[2]);
        assert!(continuum_compare((&fine, &ff), (&fine, &ff), one, &centre, 0.2).is_err());
        assert!(continuum_compare((&coarse, &fc), (&fine, &ff), one, &[Complex64::new(5.0, 5.0)], 0.2).is_err());
    }

    #[test]
    fn gaps() {
        let d = square(2);
        let f = edge_observable(&d, EXACT).unwrap();
        let v0 = d.vertex_at(Pt::new(1, 2)).unwrap();
        let v1 = d.vertex_at(Pt::new(3, 2)).unwrap();
        let g = translational_gap(&d, &f, v0, v1).unwrap();
        assert_eq!(g, translational_gap(&d, &f, v1, v0).unwrap());
        assert!(g > 0.0);
        let far = d.vertex_at(Pt::new(0, 1)).unwrap();
        assert!(translational_gap(&d, &f, v0, far).is_err());
    }
}

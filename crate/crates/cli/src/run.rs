//! Executing one experiment: compute, then hand back files and verdicts.

use std::fmt::Write as _;

use percolab::arms::{self, ArmSignature, Geometry};
use percolab::harmonic::{dobrushin_strip_map, sup_winding_squared};
use percolab::lattice::{build_rectangle_domain, Corner, Pt};
use percolab::loewner::{default_stop_radius, estimate_kappa, exploration_drivings};
use percolab::observables::{self, Mode};
use percolab::percolation::BondRectangle;
use percolab::rng::RngStream;
use percolab::stats::mean_var;
use percolab::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    ArmsParams, CDeltaParams, CardyParams, CompareParams, DomainParams, DrivingParams, EnumerateParams, Experiment, ExperimentConfig, WalksParams,
};

/// Samples per random stream in the runner's own Monte Carlo loops.
const BLOCK: u64 = 4096;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(id: &str, pass: bool, detail: String) -> Self {
        Self { id: id.into(), pass, detail }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    /// File name and contents, in write order.
    pub files: Vec<(String, String)>,
    pub summary: Value,
    /// Parameters the run actually used, defaults resolved.
    pub parameters: Value,
    pub verdicts: Vec<Verdict>,
}

/// Errors split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// The config parsed but describes something impossible.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] percolab::Error),
}

type Result<T> = std::result::Result<T, RunError>;

fn config_err(e: percolab::Error) -> RunError {
    RunError::Config(e.to_string())
}

fn need_samples(cfg: &ExperimentConfig, kind: &str) -> Result<u64> {
    cfg.samples.ok_or_else(|| RunError::Config(format!("{kind} needs \"samples\"")))
}

fn mode(cfg: &ExperimentConfig, cap: usize) -> Mode {
    match cfg.samples {
        Some(samples) => Mode::MonteCarlo { samples, seed: cfg.seed, workers: cfg.workers },
        None => Mode::Exact { cap },
    }
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    match &cfg.experiment {
        Experiment::Observable(p) => observable(cfg, p),
        Experiment::Decompose(p) => decompose(cfg, p),
        Experiment::EnumerateCheck(p) => enumerate_check(p),
        Experiment::Cardy(p) => cardy(cfg, p),
        Experiment::Arms(p) => arm_events(cfg, p),
        Experiment::Driving(p) => driving(cfg, p),
        Experiment::Walks(p) => walks(cfg, p),
        Experiment::CDelta(p) => c_delta(cfg, p),
        Experiment::Compare(p) => compare(cfg, p),
    }
}

fn observable(cfg: &ExperimentConfig, p: &DomainParams) -> Result<Outcome> {
    let d = p.domain.build().map_err(config_err)?;
    let f = observables::edge_observable(&d, mode(cfg, p.cap))?;
    let residual = observables::max_cr_residual(&d, &f)?;
    Ok(Outcome {
        files: vec![("field.csv".into(), f.to_csv(&d)), ("geometry.csv".into(), d.geometry_csv())],
        summary: json!({ "domain_hash": d.hash(), "free_edges": d.free_edge_count(), "cr_residual_max": residual }),
        parameters: json!({ "mesh": d.mesh(), "mode": mode(cfg, p.cap) }),
        verdicts: vec![],
    })
}

fn decompose(cfg: &ExperimentConfig, p: &DomainParams) -> Result<Outcome> {
    let d = p.domain.build().map_err(config_err)?;
    let m = mode(cfg, p.cap);
    let f = observables::edge_observable(&d, m)?;
    let parts = observables::decompose(&d, m)?;
    let deviation = d.medial_edges().map(|e| (parts.one.get(e) + parts.two.get(e) - f.get(e)).norm()).fold(0.0, f64::max);
    Ok(Outcome {
        files: vec![("field.csv".into(), f.to_csv(&d)), ("one.csv".into(), parts.one.to_csv(&d)), ("two.csv".into(), parts.two.to_csv(&d))],
        summary: json!({ "domain_hash": d.hash(), "partition_deviation_max": deviation }),
        parameters: json!({ "mesh": d.mesh(), "mode": m }),
        verdicts: vec![],
    })
}

fn enumerate_check(p: &EnumerateParams) -> Result<Outcome> {
    let domains = p.domains.iter().map(|c| c.build().map_err(config_err)).collect::<Result<Vec<_>>>()?;
    if domains.is_empty() {
        return Err(RunError::Config("enumerate-check needs at least one domain".into()));
    }
    let m = Mode::Exact { cap: p.cap };
    let mut csv = String::from("domain,hash,free_edges,cr_residual_max,partition_deviation_max,martingale_deviation_max,prefixes\n");
    let (mut cr, mut part, mut mart) = (0.0f64, 0.0f64, 0.0f64);
    for (k, d) in domains.iter().enumerate() {
        let f = observables::edge_observable(d, m)?;
        let r = observables::max_cr_residual(d, &f)?;
        let parts = observables::decompose(d, m)?;
        let dev = d.medial_edges().map(|e| (parts.one.get(e) + parts.two.get(e) - f.get(e)).norm()).fold(0.0, f64::max);
        let check = if p.martingale { Some(observables::slit_martingale_check(d, p.cap)?) } else { None };
        let (md, prefixes) = check.map_or((f64::NAN, 0), |c| (c.max_deviation, c.prefixes));
        let _ = writeln!(csv, "{k},{},{},{r:e},{dev:e},{md:e},{prefixes}", d.hash(), d.free_edge_count());
        cr = cr.max(r);
        part = part.max(dev);
        if p.martingale {
            mart = mart.max(md);
        }
    }
    let mut verdicts = vec![
        Verdict::new("AC-1", cr < 1e-12, format!("max CR residual {cr:e} over {} domains", domains.len())),
        Verdict::new("AC-2", part < 1e-12, format!("max |F_one + F_two - F| {part:e}")),
    ];
    if p.martingale {
        verdicts.push(Verdict::new("AC-9", mart < 1e-12, format!("max slit-domain deviation {mart:e}")));
    }
    Ok(Outcome {
        files: vec![("checks.csv".into(), csv)],
        summary: json!({ "cr_residual_max": cr, "partition_deviation_max": part, "martingale_deviation_max": p.martingale.then_some(mart) }),
        parameters: json!({ "cap": p.cap, "martingale": p.martingale }),
        verdicts,
    })
}

/// Open left-right crossings: exact when `samples` is absent.
fn cardy(cfg: &ExperimentConfig, p: &CardyParams) -> Result<Outcome> {
    let r = BondRectangle::new(p.width, p.height).map_err(config_err)?;
    let n = r.edge_count();
    let (hits, trials, exact) = match cfg.samples {
        None => {
            if n > 30 {
                return Err(RunError::Config(format!("{n} edges are too many to enumerate; give \"samples\"")));
            }
            let hits = (0..1u64 << n).into_par_iter().filter(|&i| r.has_open_crossing(&[i])).count() as u64;
            (hits, 1u64 << n, true)
        }
        Some(samples) => {
            let hits: u64 = blocks(samples)
                .into_par_iter()
                .map(|(b, len)| {
                    let mut rng = RngStream::new(cfg.seed, b).rng();
                    (0..len).filter(|_| r.has_open_crossing(&r.sample(0.5, &mut rng))).count() as u64
                })
                .collect::<Vec<_>>()
                .iter()
                .sum();
            (hits, samples, false)
        }
    };
    let estimate = hits as f64 / trials as f64;
    let stderr = if exact { 0.0 } else { (estimate * (1.0 - estimate) / trials as f64).sqrt() };
    let dev = (estimate - 0.5).abs();
    let pass = if exact { dev < 1e-12 } else { dev <= 3.0 * stderr };
    Ok(Outcome {
        files: vec![(
            "crossing.csv".into(),
            format!("width,height,trials,hits,estimate,stderr\n{},{},{trials},{hits},{estimate},{stderr}\n", p.width, p.height),
        )],
        summary: json!({ "estimate": estimate, "stderr": stderr, "exact": exact }),
        parameters: json!({ "p": 0.5, "edges": n }),
        verdicts: vec![Verdict::new("AC-3", pass, format!("crossing {estimate} ± {stderr} against 1/2"))],
    })
}

fn blocks(samples: u64) -> Vec<(u64, u64)> {
    (0..samples.div_ceil(BLOCK)).map(|b| (b, BLOCK.min(samples - b * BLOCK))).collect()
}

fn arm_events(cfg: &ExperimentConfig, p: &ArmsParams) -> Result<Outcome> {
    let samples = need_samples(cfg, "arms")?;
    if p.boundary {
        return boundary_arm(cfg, p, samples);
    }
    let sig = ArmSignature::new(&p.signature, p.geometry).map_err(config_err)?;
    let radii: Vec<i32> = p.radii.iter().map(|&r| r as i32).collect();
    let est = arms::estimate_exponent(&sig, p.inner as i32, &radii, samples, cfg.seed).map_err(|e| match e {
        percolab::Error::InvalidArgument(m) => RunError::Config(m),
        e => e.into(),
    })?;
    let mut verdicts = vec![];
    if sig.geometry == Geometry::HalfPlane && sig.text() == "010" {
        let pass = (est.exponent - 2.0).abs() <= 0.2;
        verdicts.push(Verdict::new("AC-5", pass, format!("exponent {} ± {} against 2 ± 0.2", est.exponent, est.stderr)));
    }
    Ok(Outcome {
        files: vec![("arms.csv".into(), est.to_csv())],
        summary: serde_json::to_value(&est).expect("serialisable"),
        parameters: json!({ "signature": sig.text(), "geometry": sig.geometry, "inner": p.inner, "radii": p.radii, "samples": samples }),
        verdicts,
    })
}

/// Boundary one-arm probabilities at the middle of the bottom side of a
/// wide, flat rectangle.
fn boundary_arm(cfg: &ExperimentConfig, p: &ArmsParams, samples: u64) -> Result<Outcome> {
    let largest = *p.radii.iter().max().ok_or_else(|| RunError::Config("radii are empty".into()))?;
    if p.radii.len() < 3 || p.radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunError::Config("need at least three strictly increasing radii".into()));
    }
    let cols = 2 * largest + 16;
    let d = build_rectangle_domain(cols, 4, 1.0, Corner::SW, Corner::NE).map_err(config_err)?;
    let v = Pt::new(cols as i32, 0);
    let mut csv = String::from("R,samples,hits,probability,stderr\n");
    let mut hits = vec![];
    for (k, &r) in p.radii.iter().enumerate() {
        let e = arms::boundary_one_arm(&d, v, r, samples, cfg.seed.wrapping_add(k as u64))?;
        let _ = writeln!(csv, "{r},{samples},{},{},{}", e.hits, e.value, e.stderr);
        hits.push(e.hits);
    }
    let radii: Vec<i32> = p.radii.iter().map(|&r| r as i32).collect();
    let (exponent, stderr) = arms::fit_exponent(&radii, &hits, &vec![samples; radii.len()])?;
    let pass = (exponent - 1.0 / 3.0).abs() <= 0.05;
    Ok(Outcome {
        files: vec![("boundary_arm.csv".into(), csv)],
        summary: json!({ "exponent": exponent, "stderr": stderr, "reference": 1.0 / 3.0 }),
        parameters: json!({ "radii": p.radii, "samples": samples, "domain_cols": cols }),
        verdicts: vec![Verdict::new("AC-4", pass, format!("exponent {exponent} ± {stderr} against 1/3 ± 0.05"))],
    })
}

fn driving(cfg: &ExperimentConfig, p: &DrivingParams) -> Result<Outcome> {
    let paths = need_samples(cfg, "driving")? as usize;
    let d = p.domain.build().map_err(config_err)?;
    let stop = match p.stop_radius {
        Some(r) => r,
        None => default_stop_radius(&d).map_err(config_err)?,
    };
    let step = p.capacity_step.unwrap_or(1e-3 * stop * stop);
    let drivings = exploration_drivings(&d, paths, cfg.seed, Some(stop), Some(step))?;
    let est = estimate_kappa(&drivings)?;
    let mut index = String::from("path,grid_points,final_capacity,final_value,dropped\n");
    let mut files = vec![];
    for (k, dr) in drivings.iter().enumerate() {
        let _ = writeln!(index, "{k},{},{},{},{}", dr.grid_len(), dr.total_capacity(), dr.values.last().copied().unwrap_or(0.0), dr.dropped);
        if p.write_paths {
            files.push((format!("driving_{k:04}.csv"), dr.to_csv()));
        }
    }
    files.insert(0, ("drivings.csv".into(), index));
    let pass = (est.kappa - 6.0).abs() <= 1.0;
    Ok(Outcome {
        files,
        summary: serde_json::to_value(est).expect("serialisable"),
        parameters: json!({ "paths": paths, "stop_radius": stop, "capacity_step": step, "mesh": d.mesh() }),
        verdicts: vec![Verdict::new("AC-6", pass, format!("kappa {} ± {} against 6 ± 1", est.kappa, est.stderr))],
    })
}

/// Row of the walk-winding table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WindingRow {
    pub n: usize,
    pub ratio: f64,
    pub stderr: f64,
}

/// `E[sup Theta^2] / log^2 n` from `walks` walks per length, walk `k` of
/// length index `i` drawing from stream `(seed, i * walks + k)`.
pub fn winding_table(lengths: &[usize], walks: u64, seed: u64) -> Vec<WindingRow> {
    lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let values: Vec<f64> = (0..walks).into_par_iter().map(|k| sup_winding_squared(n, &mut RngStream::new(seed, i as u64 * walks + k).rng())).collect();
            let (mean, var) = mean_var(&values);
            let l2 = (n as f64).ln().powi(2);
            WindingRow { n, ratio: mean / l2, stderr: (var / walks as f64).sqrt() / l2 }
        })
        .collect()
}

fn walks(cfg: &ExperimentConfig, p: &WalksParams) -> Result<Outcome> {
    let walks = cfg.samples.unwrap_or(1000);
    if p.lengths.iter().any(|&n| n < 2) || p.lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunError::Config("lengths must be increasing and at least 2".into()));
    }
    let rows = winding_table(&p.lengths, walks, cfg.seed);
    let mut csv = String::from("n,walks,ratio,stderr\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{walks},{},{}", r.n, r.ratio, r.stderr);
    }
    // Non-increasing from n = 1000 on, up to two combined standard errors.
    let tail: Vec<&WindingRow> = rows.iter().filter(|r| r.n >= 1000).collect();
    let monotone = tail.windows(2).all(|w| w[1].ratio <= w[0].ratio + 2.0 * w[0].stderr.hypot(w[1].stderr));
    let bound = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(Outcome {
        files: vec![("winding.csv".into(), csv)],
        summary: json!({ "rows": rows, "max_ratio": bound }),
        parameters: json!({ "lengths": p.lengths, "walks": walks }),
        verdicts: vec![Verdict::new("AC-8", monotone && bound.is_finite(), format!("max ratio {bound}, non-increasing from 1000: {monotone}"))],
    })
}

fn c_delta(cfg: &ExperimentConfig, p: &CDeltaParams) -> Result<Outcome> {
    let mut csv = String::from("side,mesh,radius,value,stderr\n");
    let mut values = vec![];
    for &side in &p.sides {
        let d = build_rectangle_domain(side, side, 1.0 / side as f64, Corner::SW, Corner::NE).map_err(config_err)?;
        let m = match cfg.samples {
            Some(samples) => Mode::MonteCarlo { samples, seed: cfg.seed.wrapping_add(side as u64), workers: cfg.workers },
            None => Mode::Exact { cap: 24 },
        };
        let c = observables::estimate_c_delta(&d, m, p.batches)?;
        let _ = writeln!(csv, "{side},{},{},{},{}", d.mesh(), c.radius, c.value, c.stderr);
        values.push(c);
    }
    let mut verdicts = vec![];
    if let [a, b] = values[..] {
        let ratio = b.value / a.value;
        let se = ratio * ((a.stderr / a.value).powi(2) + (b.stderr / b.value).powi(2)).sqrt();
        let pass = a.value > 0.0 && b.value > 0.0 && ratio + se >= 0.8 && ratio - se <= 1.2;
        verdicts.push(Verdict::new("AC-10", pass, format!("ratio {ratio} ± {se}")));
    }
    Ok(Outcome {
        files: vec![("c_delta.csv".into(), csv)],
        summary: json!({ "values": values }),
        parameters: json!({ "sides": p.sides, "batches": p.batches, "samples": cfg.samples }),
        verdicts,
    })
}

fn compare(cfg: &ExperimentConfig, p: &CompareParams) -> Result<Outcome> {
    let samples = need_samples(cfg, "compare")?;
    if p.cols < 4 || p.cols % 4 != 0 {
        return Err(RunError::Config("cols must be a positive multiple of 4".into()));
    }
    let n = p.cols;
    let coarse = build_rectangle_domain(n / 2, n / 4, 2.0 / n as f64, Corner::SW, Corner::NE).map_err(config_err)?;
    let fine = build_rectangle_domain(n, n / 2, 1.0 / n as f64, Corner::SW, Corner::NE).map_err(config_err)?;
    let m = |seed| Mode::MonteCarlo { samples, seed, workers: cfg.workers };
    let fc = observables::edge_observable(&coarse, m(cfg.seed))?;
    let ff = observables::edge_observable(&fine, m(cfg.seed.wrapping_add(1)))?;
    let (_, deriv) = dobrushin_strip_map(&fine, p.refine, 1.0)?;
    let probes: Vec<Complex64> = match &p.probes {
        Some(v) => v.iter().map(|&(x, y)| Complex64::new(x, y)).collect(),
        None => default_probes(),
    };
    let report = observables::continuum_compare((&coarse, &fc), (&fine, &ff), |z| deriv.at(z), &probes, p.core)?;
    let mut csv = String::from("x,y,ratio,stderr\n");
    for pr in &report.probes {
        let _ = writeln!(csv, "{},{},{},{}", pr.x, pr.y, pr.ratio, pr.stderr);
    }
    let target = report.modulus_ratio_target;
    let median = report.phase_error_quantiles[1];
    let ratios_ok = report.probes.iter().all(|pr| (pr.ratio - target).abs() <= 0.1 * target);
    Ok(Outcome {
        files: vec![("probes.csv".into(), csv), ("field_fine.csv".into(), ff.to_csv(&fine))],
        summary: serde_json::to_value(&report).expect("serialisable"),
        parameters: json!({ "cols": n, "samples": samples, "refine": p.refine, "core": p.core, "probes": probes.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>() }),
        verdicts: vec![Verdict::new(
            "AC-7",
            median < 0.15 && ratios_ok,
            format!("median phase error {median}, probe ratios within 10% of {target}: {ratios_ok}"),
        )],
    })
}

/// Five core points of the `2 x 1` rectangle.
pub fn default_probes() -> Vec<Complex64> {
    [(0.5, 0.5), (1.0, 0.5), (1.5, 0.5), (1.0, 0.25), (1.0, 0.75)].iter().map(|&(x, y)| Complex64::new(x, y)).collect()
}

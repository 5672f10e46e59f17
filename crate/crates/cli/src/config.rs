//! Experiment configuration files.
//!
//! A config is one JSON object:
//!
//! ```json
//! {
//!   "experiment": { "kind": "cardy", "params": { "width": 33, "height": 32 } },
//!   "samples": 100000,
//!   "seed": 7,
//!   "workers": 1,
//!   "output": "runs/cardy"
//! }
//! ```
//!
//! `samples` absent means exact enumeration for the kinds that support it.
//! Unknown keys are rejected at every level.

use std::path::PathBuf;

use percolab::arms::Geometry;
use percolab::lattice::{self, BoundarySpec, Corner, DobrushinDomain};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Threads for Monte Carlo work. Results do not depend on it.
    #[serde(default = "one")]
    pub workers: usize,
    /// Run directory. Defaults to `$PERCOLAB_OUT/<kind>-<hash prefix>`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Observable(DomainParams),
    Decompose(DomainParams),
    EnumerateCheck(EnumerateParams),
    Cardy(CardyParams),
    Arms(ArmsParams),
    Driving(DrivingParams),
    Walks(WalksParams),
    CDelta(CDeltaParams),
    Compare(CompareParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Observable(_) => "observable",
            Experiment::Decompose(_) => "decompose",
            Experiment::EnumerateCheck(_) => "enumerate-check",
            Experiment::Cardy(_) => "cardy",
            Experiment::Arms(_) => "arms",
            Experiment::Driving(_) => "driving",
            Experiment::Walks(_) => "walks",
            Experiment::CDelta(_) => "c-delta",
            Experiment::Compare(_) => "compare",
        }
    }
}

/// Where a Dobrushin domain comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    /// Rectangle with marked corners.
    Rectangle {
        cols: u32,
        rows: u32,
        #[serde(default = "unit")]
        mesh: f64,
        a: Corner,
        b: Corner,
    },
    /// Rectangle with marked lattice points on its boundary.
    RectangleAt {
        cols: u32,
        rows: u32,
        #[serde(default = "unit")]
        mesh: f64,
        a: (u32, u32),
        b: (u32, u32),
    },
    Polygon(BoundarySpec),
}

fn unit() -> f64 {
    1.0
}

impl DomainConfig {
    pub fn build(&self) -> percolab::Result<DobrushinDomain> {
        match *self {
            DomainConfig::Rectangle { cols, rows, mesh, a, b } => lattice::build_rectangle_domain(cols, rows, mesh, a, b),
            DomainConfig::RectangleAt { cols, rows, mesh, a, b } => lattice::build_rectangle_domain_at(cols, rows, mesh, a, b),
            DomainConfig::Polygon(ref spec) => lattice::build_condition_c_domain(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainParams {
    pub domain: DomainConfig,
    /// Largest number of free edges enumerated in exact mode.
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn default_cap() -> usize {
    24
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerateParams {
    pub domains: Vec<DomainConfig>,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Also compare slit-domain observables with conditional expectations.
    #[serde(default)]
    pub martingale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardyParams {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmsParams {
    /// Arm colours from `0`/`1`, e.g. `"010"`. Ignored for the boundary estimator.
    #[serde(default = "default_signature")]
    pub signature: String,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    /// Inner radius r.
    #[serde(default)]
    pub inner: u32,
    /// Outer radii R, increasing.
    pub radii: Vec<u32>,
    /// Estimate the boundary one-arm probability on a long straight side
    /// instead of an annulus event.
    #[serde(default)]
    pub boundary: bool,
}

fn default_signature() -> String {
    "1".into()
}

fn default_geometry() -> Geometry {
    Geometry::HalfPlane
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingParams {
    pub domain: DomainConfig,
    /// Defaults to half the distance from the start to the other sides.
    #[serde(default)]
    pub stop_radius: Option<f64>,
    /// Defaults to `1e-3 stop_radius^2`.
    #[serde(default)]
    pub capacity_step: Option<f64>,
    /// Write one `t,W` CSV per path.
    #[serde(default)]
    pub write_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalksParams {
    /// Walk lengths n.
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CDeltaParams {
    /// Side lengths of unit squares with mesh `1 / side`, marked SW and NE.
    pub sides: Vec<u32>,
    #[serde(default = "default_batches")]
    pub batches: u64,
}

fn default_batches() -> u64 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareParams {
    /// The fine mesh is `1 / cols` on a `2 x 1` rectangle with `cols x cols/2`
    /// cells; the coarse mesh doubles it.
    pub cols: u32,
    /// Refinement of the harmonic solver grid relative to the fine mesh.
    #[serde(default = "default_refine")]
    pub refine: u32,
    /// Core margin as a fraction of the shorter side.
    #[serde(default = "default_core")]
    pub core: f64,
    /// Probe points; defaults to five points in the core.
    #[serde(default)]
    pub probes: Option<Vec<(f64, f64)>>,
}

fn default_refine() -> u32 {
    4
}

fn default_core() -> f64 {
    0.25
}

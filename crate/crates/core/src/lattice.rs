//! Discrete Dobrushin domains and their medial lattice.
//!
//! All coordinates are doubled integers. Primal vertex `(i, j)` sits at
//! `(2i, 2j)`, dual vertices at odd-odd points and medial vertices (edge
//! centres) at the mixed-parity points. Medial edges join diagonal
//! neighbours and are oriented counterclockwise around the primal vertex
//! they border, so the primal vertex is on their left and the dual vertex
//! on their right.
//!
//! A domain is a simple rectilinear polygon with two marked boundary
//! vertices `a` and `b`. Boundary edges on the counterclockwise arc from `b`
//! to `a` are wired open. Along the arc from `a` to `b` every lattice
//! vertex strictly between the marked points receives closed "stub" edges
//! pointing out of the polygon; their duals form the wired dual arc, and
//! their centres are the outermost medial vertices on that side. Stubs are
//! counted in the medial graph but not among the region's own edges.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) const NONE: u32 = u32::MAX;

/// A point of the doubled lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pt {
    pub x: i32,
    pub y: i32,
}

impl Pt {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn shift(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn step(self, d: Dir) -> Self {
        let (dx, dy) = d.offset();
        self.shift(dx, dy)
    }

    /// Centre of a horizontal primal edge.
    pub fn is_horizontal_centre(self) -> bool {
        self.x.rem_euclid(2) == 1 && self.y.rem_euclid(2) == 0
    }

    pub fn is_vertical_centre(self) -> bool {
        self.x.rem_euclid(2) == 0 && self.y.rem_euclid(2) == 1
    }

    pub fn is_primal(self) -> bool {
        self.x.rem_euclid(2) == 0 && self.y.rem_euclid(2) == 0
    }

    pub fn is_dual(self) -> bool {
        self.x.rem_euclid(2) == 1 && self.y.rem_euclid(2) == 1
    }

    /// Position in the plane for mesh `delta`.
    pub fn plane(self, delta: f64) -> Complex64 {
        Complex64::new(self.x as f64 * delta / 2.0, self.y as f64 * delta / 2.0)
    }

    /// The two primal endpoints of the edge centred here.
    pub fn primal_ends(self) -> (Pt, Pt) {
        if self.is_horizontal_centre() {
            (self.shift(-1, 0), self.shift(1, 0))
        } else {
            (self.shift(0, -1), self.shift(0, 1))
        }
    }

    /// The two dual endpoints of the dual edge crossing the edge centred here.
    pub fn dual_ends(self) -> (Pt, Pt) {
        if self.is_horizontal_centre() {
            (self.shift(0, -1), self.shift(0, 1))
        } else {
            (self.shift(-1, 0), self.shift(1, 0))
        }
    }
}

/// Diagonal directions of the medial lattice, counterclockwise from NE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    NE = 0,
    NW = 1,
    SW = 2,
    SE = 3,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::NE, Dir::NW, Dir::SW, Dir::SE];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Self::ALL[i & 3]
    }

    pub fn offset(self) -> (i32, i32) {
        match self {
            Dir::NE => (1, 1),
            Dir::NW => (-1, 1),
            Dir::SW => (-1, -1),
            Dir::SE => (1, -1),
        }
    }

    /// Rotation by a quarter turn counterclockwise.
    pub fn left(self) -> Dir {
        Self::from_index(self.index() + 1)
    }

    pub fn right(self) -> Dir {
        Self::from_index(self.index() + 3)
    }

    pub fn opposite(self) -> Dir {
        Self::from_index(self.index() + 2)
    }

    /// Unit vector `exp(i(pi/4 + k pi/2))`.
    pub fn unit(self) -> Complex64 {
        Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4 * (1 + 2 * self.index()) as f64)
    }
}

/// Whether a medial edge leaving a centre in direction `d` is outbound.
pub(crate) fn is_outbound_slot(centre: Pt, d: Dir) -> bool {
    if centre.is_horizontal_centre() {
        matches!(d, Dir::NW | Dir::SE)
    } else {
        matches!(d, Dir::SW | Dir::NE)
    }
}

/// Slots in label order A, B, C, D. A and C are the inbound slots; A is
/// the lower one. The order is clockwise, the orientation under which
/// `F(A) - F(C) = i (F(B) - F(D))` holds for the observable as defined
/// (counterclockwise labels flip the sign of the right-hand side).
pub(crate) fn label_slots(centre: Pt) -> [Dir; 4] {
    if centre.is_horizontal_centre() {
        [Dir::SW, Dir::NW, Dir::NE, Dir::SE]
    } else {
        [Dir::SE, Dir::SW, Dir::NW, Dir::NE]
    }
}

/// Index of a primal edge, equivalently of the medial vertex at its centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index of a directed medial edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MedialEdgeId(pub u32);

impl MedialEdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// How the status of a primal edge is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeRole {
    Free,
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedialEdge {
    /// Tail vertex, `None` for the entry edge.
    pub tail: Option<EdgeId>,
    /// Head vertex, `None` for the exit edge.
    pub head: Option<EdgeId>,
    /// Direction of travel.
    pub dir: Dir,
    pub present: bool,
}

/// Corners of a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Corner {
    SW,
    SE,
    NE,
    NW,
}

impl Corner {
    fn polygon_index(self) -> usize {
        match self {
            Corner::SW => 0,
            Corner::SE => 1,
            Corner::NE => 2,
            Corner::NW => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub dx: i32,
    pub dy: i32,
}

/// Rectilinear boundary in lattice units, traversed counterclockwise from
/// the origin. `a` and `b` index polygon corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub segments: Vec<Segment>,
    pub a: usize,
    pub b: usize,
    pub mesh: f64,
    /// Shortest admissible segment in continuum units. Defaults to
    /// `max(4 mesh, 1 / ceil(ln(1 / mesh)))`.
    #[serde(default)]
    pub min_segment_length: Option<f64>,
}

impl BoundarySpec {
    pub fn default_min_segment_length(mesh: f64) -> f64 {
        let logs = (1.0 / mesh).ln().ceil().max(1.0);
        (4.0 * mesh).max(1.0 / logs)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// A discrete Dobrushin domain together with its medial graph.
#[derive(Debug, Clone)]
pub struct DobrushinDomain {
    pub(crate) mesh: f64,
    pub(crate) centres: Vec<Pt>,
    pub(crate) roles: Vec<EdgeRole>,
    pub(crate) region_edges: usize,
    pub(crate) free: Vec<u32>,
    pub(crate) free_slot: Vec<u32>,
    /// Medial edge ids by slot direction; `NONE` where absent.
    pub(crate) slots: Vec<[u32; 4]>,
    pub(crate) medial: Vec<MedialEdge>,
    pub(crate) index: HashMap<Pt, u32>,
    pub(crate) entry: u32,
    pub(crate) exit: u32,
    pub(crate) start: u32,
    pub(crate) end: u32,
    pub(crate) a: Pt,
    pub(crate) b: Pt,
    /// Counterclockwise polygon corners, doubled coordinates.
    pub(crate) polygon: Vec<Pt>,
    /// Unit boundary walk, doubled coordinates, and the walk positions of
    /// the marked points.
    pub(crate) walk: Vec<Pt>,
    pub(crate) walk_a: usize,
    pub(crate) walk_b: usize,
    pub(crate) hash: String,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Place {
    Inside,
    On,
    Outside,
}

/// Location of `p` relative to a simple rectilinear polygon (doubled coords).
fn locate(poly: &[Pt], p: Pt) -> Place {
    let n = poly.len();
    let mut crossings = 0;
    for k in 0..n {
        let (u, v) = (poly[k], poly[(k + 1) % n]);
        if u.x == v.x {
            let (lo, hi) = (u.y.min(v.y), u.y.max(v.y));
            if p.x == u.x && (lo..=hi).contains(&p.y) {
                return Place::On;
            }
            if u.x > p.x && lo <= p.y && p.y < hi {
                crossings += 1;
            }
        } else {
            let (lo, hi) = (u.x.min(v.x), u.x.max(v.x));
            if p.y == u.y && (lo..=hi).contains(&p.x) {
                return Place::On;
            }
        }
    }
    if crossings % 2 == 1 {
        Place::Inside
    } else {
        Place::Outside
    }
}

fn in_closed(poly: &[Pt], p: Pt) -> bool {
    locate(poly, p) != Place::Outside
}

/// Build a domain from lattice-unit polygon corners (counterclockwise) with
/// marked corners `ia` and `ib`.
fn build(corners: &[(i32, i32)], ia: usize, ib: usize, mesh: f64) -> Result<DobrushinDomain> {
    let n = corners.len();
    if ia >= n || ib >= n {
        return Err(Error::InvalidDomain(format!("marked corner out of range ({ia}, {ib}) for {n} corners")));
    }
    for k in [ia, ib] {
        let (p, u, v) = (corners[(k + n - 1) % n], corners[k], corners[(k + 1) % n]);
        let turn = (u.0 - p.0) as i64 * (v.1 - u.1) as i64 - (u.1 - p.1) as i64 * (v.0 - u.0) as i64;
        if turn < 0 {
            return Err(Error::InvalidDomain(format!("marked corner {k} is reflex; marked points must sit at convex corners")));
        }
    }
    let lens: Vec<usize> = (0..n)
        .map(|k| {
            let (u, v) = (corners[k], corners[(k + 1) % n]);
            ((v.0 - u.0).abs() + (v.1 - u.1).abs()) as usize
        })
        .collect();
    let pos = |k: usize| lens[..k].iter().sum::<usize>();
    build_marked(corners, pos(ia), pos(ib), mesh)
}

/// Build with marked points given as positions along the unit boundary walk
/// that starts at the first corner.
fn build_marked(corners: &[(i32, i32)], wa: usize, wb: usize, mesh: f64) -> Result<DobrushinDomain> {
    let bad = |m: String| Err(Error::InvalidDomain(m));
    let n = corners.len();
    if !(mesh.is_finite() && mesh > 0.0) {
        return bad(format!("mesh must be positive, got {mesh}"));
    }
    if n < 4 {
        return bad("a rectilinear polygon needs at least four corners".into());
    }
    if wa == wb {
        return bad("marked points a and b coincide".into());
    }
    let poly: Vec<Pt> = corners.iter().map(|&(x, y)| Pt::new(2 * x, 2 * y)).collect();

    // Unit boundary walk.
    let mut walk = Vec::new();
    for k in 0..n {
        let (u, v) = (corners[k], corners[(k + 1) % n]);
        let (dx, dy) = (v.0 - u.0, v.1 - u.1);
        if (dx == 0) == (dy == 0) {
            return bad(format!("segment {k} is not a nonzero axis-parallel step"));
        }
        let len = dx.abs() + dy.abs();
        for s in 0..len {
            walk.push(Pt::new(2 * (u.0 + dx.signum() * s), 2 * (u.1 + dy.signum() * s)));
        }
    }
    let m = walk.len();
    let mut seen = HashSet::with_capacity(m);
    if !walk.iter().all(|p| seen.insert(*p)) {
        return bad("boundary is not simple".into());
    }
    let twice_area: i64 = (0..n)
        .map(|k| {
            let (u, v) = (corners[k], corners[(k + 1) % n]);
            u.0 as i64 * v.1 as i64 - v.0 as i64 * u.1 as i64
        })
        .sum();
    if twice_area <= 0 {
        return bad("boundary must be traversed counterclockwise".into());
    }
    if wa >= m || wb >= m {
        return bad(format!("marked positions ({wa}, {wb}) outside a boundary of length {m}"));
    }
    let arc_ab = (wb + m - wa) % m;
    if arc_ab < 2 {
        return bad("the arc from a to b needs a lattice vertex strictly between them".into());
    }
    let dir_at = |k: usize| {
        let (u, v) = (walk[k % m], walk[(k + 1) % m]);
        ((v.x - u.x) / 2, (v.y - u.y) / 2)
    };

    // Region edges: unit edges whose centre lies in the closed polygon.
    let (xmin, xmax) = (poly.iter().map(|p| p.x).min().unwrap(), poly.iter().map(|p| p.x).max().unwrap());
    let (ymin, ymax) = (poly.iter().map(|p| p.y).min().unwrap(), poly.iter().map(|p| p.y).max().unwrap());
    let mut region = Vec::new();
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let c = Pt::new(x, y);
            if (c.is_horizontal_centre() || c.is_vertical_centre()) && in_closed(&poly, c) {
                region.push(c);
            }
        }
    }
    let region_set: HashSet<Pt> = region.iter().copied().collect();
    let primal: HashSet<Pt> = region
        .iter()
        .flat_map(|c| {
            let (u, v) = c.primal_ends();
            [u, v]
        })
        .collect();

    // Edges on the arc from b to a are wired open.
    let mut open = HashSet::new();
    for k in 0..(m - arc_ab) {
        let i = (wb + k) % m;
        let (u, v) = (walk[i], walk[(i + 1) % m]);
        open.insert(Pt::new((u.x + v.x) / 2, (u.y + v.y) / 2));
    }

    // Outward stubs at vertices strictly inside the arc from a to b.
    let mut stubs = Vec::new();
    let mut stub_set = HashSet::new();
    for k in 1..arc_ab {
        let i = (wa + k) % m;
        let p = walk[i];
        for d in [dir_at(i + m - 1), dir_at(i)] {
            let normal = (d.1, -d.0);
            let c = p.shift(normal.0, normal.1);
            if !region_set.contains(&c) && !in_closed(&poly, c) && stub_set.insert(c) {
                stubs.push(c);
            }
        }
    }
    stubs.sort_by_key(|c| (c.y, c.x));

    let mut centres = region;
    let region_edges = centres.len();
    centres.extend(stubs.iter().copied());
    let roles: Vec<EdgeRole> = centres
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i >= region_edges {
                EdgeRole::Closed
            } else if open.contains(c) {
                EdgeRole::Open
            } else {
                EdgeRole::Free
            }
        })
        .collect();
    let index: HashMap<Pt, u32> = centres.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();

    // Medial edges around primal vertices of the region.
    let nv = centres.len();
    let mut slots = vec![[NONE; 4]; nv];
    let mut medial = Vec::new();
    for (v, &c) in centres.iter().enumerate() {
        for d in Dir::ALL {
            if !is_outbound_slot(c, d) {
                continue;
            }
            let w = c.step(d);
            let pivot = if c.is_horizontal_centre() { c.shift(d.offset().0, 0) } else { c.shift(0, d.offset().1) };
            let Some(&wi) = index.get(&w) else { continue };
            if !primal.contains(&pivot) {
                continue;
            }
            let id = medial.len() as u32;
            medial.push(MedialEdge { tail: Some(EdgeId(v as u32)), head: Some(EdgeId(wi)), dir: d, present: true });
            slots[v][d.index()] = id;
            slots[wi as usize][d.opposite().index()] = id;
        }
    }

    let centre_of = |i: usize| {
        let (u, v) = (walk[i % m], walk[(i + 1) % m]);
        Pt::new((u.x + v.x) / 2, (u.y + v.y) / 2)
    };
    let start = index[&centre_of(wa)];
    let end = index[&centre_of(wa + arc_ab - 1)];

    // Entry and exit edges fill the single missing slot at each end.
    let missing = |v: u32, outbound: bool| -> Result<Dir> {
        let c = centres[v as usize];
        let gaps: Vec<Dir> = Dir::ALL.into_iter().filter(|&d| is_outbound_slot(c, d) == outbound && slots[v as usize][d.index()] == NONE).collect();
        match gaps.as_slice() {
            [d] => Ok(*d),
            _ => Err(Error::InvalidDomain(format!("marked vertex at {c:?} has {} open slots", gaps.len()))),
        }
    };
    let entry_slot = missing(start, false)?;
    let exit_slot = missing(end, true)?;
    let entry = medial.len() as u32;
    medial.push(MedialEdge { tail: None, head: Some(EdgeId(start)), dir: entry_slot.opposite(), present: true });
    slots[start as usize][entry_slot.index()] = entry;
    let exit = medial.len() as u32;
    medial.push(MedialEdge { tail: Some(EdgeId(end)), head: None, dir: exit_slot, present: true });
    slots[end as usize][exit_slot.index()] = exit;

    // Every vertex must route the path without escaping.
    for (v, &c) in centres.iter().enumerate() {
        let present: Vec<Dir> = Dir::ALL.into_iter().filter(|d| slots[v][d.index()] != NONE).collect();
        let ins: Vec<Dir> = present.iter().copied().filter(|&d| !is_outbound_slot(c, d)).collect();
        let outs: Vec<Dir> = present.iter().copied().filter(|&d| is_outbound_slot(c, d)).collect();
        match (ins.len(), outs.len(), roles[v]) {
            (2, 2, _) => {}
            (1, 1, role) if role != EdgeRole::Free => {
                let travel = ins[0].opposite();
                let needed = if outs[0] == travel.right() { EdgeRole::Open } else { EdgeRole::Closed };
                if needed != role {
                    return bad(format!("boundary vertex at {c:?} would let the path escape"));
                }
            }
            (i, o, _) => return bad(format!("medial vertex at {c:?} has {i} inbound and {o} outbound edges")),
        }
    }

    let free: Vec<u32> = (0..nv as u32).filter(|&i| roles[i as usize] == EdgeRole::Free).collect();
    let mut free_slot = vec![NONE; nv];
    for (k, &e) in free.iter().enumerate() {
        free_slot[e as usize] = k as u32;
    }

    let mut domain = DobrushinDomain {
        mesh,
        centres,
        roles,
        region_edges,
        free,
        free_slot,
        slots,
        medial,
        index,
        entry,
        exit,
        start,
        end,
        a: walk[wa],
        b: walk[wb],
        polygon: poly,
        walk,
        walk_a: wa,
        walk_b: wb,
        hash: String::new(),
    };
    domain.rehash();
    Ok(domain)
}

/// Rectangle of `cols` by `rows` lattice units with marked corners.
pub fn build_rectangle_domain(cols: u32, rows: u32, mesh: f64, a: Corner, b: Corner) -> Result<DobrushinDomain> {
    if cols == 0 || rows == 0 {
        return Err(Error::InvalidDomain("rectangle dimensions must be positive".into()));
    }
    if a == b {
        return Err(Error::InvalidDomain("marked corners coincide".into()));
    }
    let (c, r) = (cols as i32, rows as i32);
    build(&[(0, 0), (c, 0), (c, r), (0, r)], a.polygon_index(), b.polygon_index(), mesh)
}

/// Rectangle with marked points anywhere on its boundary, given in lattice
/// units. Points in the middle of a side are allowed.
pub fn build_rectangle_domain_at(cols: u32, rows: u32, mesh: f64, a: (u32, u32), b: (u32, u32)) -> Result<DobrushinDomain> {
    if cols == 0 || rows == 0 {
        return Err(Error::InvalidDomain("rectangle dimensions must be positive".into()));
    }
    let pos = |(x, y): (u32, u32)| -> Result<usize> {
        let (c, r) = (cols as usize, rows as usize);
        let (x, y) = (x as usize, y as usize);
        if x > c || y > r {
            return Err(Error::InvalidDomain(format!("point ({x}, {y}) outside the rectangle")));
        }
        Ok(if y == 0 {
            x
        } else if x == c {
            c + y
        } else if y == r {
            c + r + (c - x)
        } else if x == 0 {
            2 * c + r + (r - y)
        } else {
            return Err(Error::InvalidDomain(format!("point ({x}, {y}) is not on the boundary")));
        })
    };
    let (c, r) = (cols as i32, rows as i32);
    build_marked(&[(0, 0), (c, 0), (c, r), (0, r)], pos(a)?, pos(b)?, mesh)
}

/// Domain from a rectilinear boundary description. Segment lengths are in
/// lattice units; each must be at least the minimal length in continuum
/// units once scaled by the mesh.
pub fn build_condition_c_domain(spec: &BoundarySpec) -> Result<DobrushinDomain> {
    let bad = |m: String| Err(Error::InvalidDomain(m));
    let n = spec.segments.len();
    if n < 4 {
        return bad("boundary needs at least four segments".into());
    }
    if !(spec.mesh.is_finite() && spec.mesh > 0.0) {
        return bad(format!("mesh must be positive, got {}", spec.mesh));
    }
    let min_len = spec.min_segment_length.unwrap_or_else(|| BoundarySpec::default_min_segment_length(spec.mesh));
    let mut corners = Vec::with_capacity(n);
    let (mut x, mut y) = (0i32, 0i32);
    for (k, s) in spec.segments.iter().enumerate() {
        if (s.dx == 0) == (s.dy == 0) {
            return bad(format!("segment {k} must be a nonzero axis-parallel step"));
        }
        let next = &spec.segments[(k + 1) % n];
        let parallel = (s.dx == 0) == (next.dx == 0);
        if parallel {
            return bad(format!("segments {k} and {} do not meet at a right angle", (k + 1) % n));
        }
        let len = (s.dx.abs() + s.dy.abs()) as f64 * spec.mesh;
        if len + 1e-12 < min_len {
            return bad(format!("segment {k} has length {len} below the minimum {min_len}"));
        }
        corners.push((x, y));
        x += s.dx;
        y += s.dy;
    }
    if (x, y) != (0, 0) {
        return bad("boundary does not close".into());
    }
    build(&corners, spec.a, spec.b, spec.mesh)
}

impl DobrushinDomain {
    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    /// Number of medial vertices, equal to the number of primal edges
    /// including stubs.
    pub fn medial_vertex_count(&self) -> usize {
        self.centres.len()
    }

    pub fn primal_edge_count(&self) -> usize {
        self.centres.len()
    }

    /// Edges of the polygonal region itself, without stubs.
    pub fn region_edge_count(&self) -> usize {
        self.region_edges
    }

    pub fn stub_count(&self) -> usize {
        self.centres.len() - self.region_edges
    }

    pub fn free_edge_count(&self) -> usize {
        self.free.len()
    }

    pub fn free_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.free.iter().map(|&e| EdgeId(e))
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.centres.len() as u32).map(EdgeId)
    }

    pub fn role(&self, e: EdgeId) -> EdgeRole {
        self.roles[e.index()]
    }

    pub fn centre(&self, e: EdgeId) -> Pt {
        self.centres[e.index()]
    }

    pub fn position(&self, e: EdgeId) -> Complex64 {
        self.centres[e.index()].plane(self.mesh)
    }

    pub fn vertex_at(&self, p: Pt) -> Option<EdgeId> {
        self.index.get(&p).map(|&i| EdgeId(i))
    }

    pub fn medial_edge(&self, e: MedialEdgeId) -> &MedialEdge {
        &self.medial[e.index()]
    }

    /// Total number of medial edge ids, present or not.
    pub fn medial_edge_slots(&self) -> usize {
        self.medial.len()
    }

    pub fn medial_edges(&self) -> impl Iterator<Item = MedialEdgeId> + '_ {
        (0..self.medial.len() as u32).map(MedialEdgeId).filter(|&e| self.medial[e.index()].present)
    }

    /// Centre of the medial edge in the plane. The entry and exit edges
    /// are drawn with their missing endpoint one diagonal step away.
    pub fn medial_midpoint(&self, e: MedialEdgeId) -> Complex64 {
        let m = &self.medial[e.index()];
        let (dx, dy) = m.dir.offset();
        let (p, sign) = match (m.tail, m.head) {
            (Some(t), _) => (self.centres[t.index()], 1.0),
            (None, Some(h)) => (self.centres[h.index()], -1.0),
            (None, None) => unreachable!("medial edge without endpoints"),
        };
        p.plane(self.mesh) + Complex64::new(dx as f64, dy as f64) * (sign * self.mesh / 4.0)
    }

    pub fn entry_edge(&self) -> MedialEdgeId {
        MedialEdgeId(self.entry)
    }

    pub fn exit_edge(&self) -> MedialEdgeId {
        MedialEdgeId(self.exit)
    }

    /// The medial vertex `a` diamond where the path starts.
    pub fn start_vertex(&self) -> EdgeId {
        EdgeId(self.start)
    }

    pub fn end_vertex(&self) -> EdgeId {
        EdgeId(self.end)
    }

    /// Marked primal points in doubled coordinates.
    pub fn marked_points(&self) -> (Pt, Pt) {
        (self.a, self.b)
    }

    /// Unit direction of the exit edge.
    pub fn exit_direction(&self) -> Complex64 {
        self.medial[self.exit as usize].dir.unit()
    }

    /// Counterclockwise polygon corners in doubled coordinates.
    pub fn polygon(&self) -> &[Pt] {
        &self.polygon
    }

    /// Medial edges at `v` in label order A, B, C, D.
    pub fn labelled_edges(&self, v: EdgeId) -> [Option<MedialEdgeId>; 4] {
        let c = self.centres[v.index()];
        label_slots(c).map(|d| {
            let id = self.slots[v.index()][d.index()];
            (id != NONE).then_some(MedialEdgeId(id))
        })
    }

    /// Number of medial edges present at `v`.
    pub fn degree(&self, v: EdgeId) -> usize {
        self.slots[v.index()].iter().filter(|&&s| s != NONE).count()
    }

    pub fn is_interior_vertex(&self, v: EdgeId) -> bool {
        self.degree(v) == 4
    }

    /// Primal vertices touched by any edge, doubled coordinates, sorted.
    pub fn primal_vertices(&self) -> Vec<Pt> {
        let mut set: Vec<Pt> = self
            .centres
            .iter()
            .flat_map(|c| {
                let (u, v) = c.primal_ends();
                [u, v]
            })
            .collect();
        set.sort_by_key(|p| (p.y, p.x));
        set.dedup();
        set
    }

    /// Dual vertices touched by any dual edge, doubled coordinates, sorted.
    pub fn dual_vertices(&self) -> Vec<Pt> {
        let mut set: Vec<Pt> = self
            .centres
            .iter()
            .flat_map(|c| {
                let (u, v) = c.dual_ends();
                [u, v]
            })
            .collect();
        set.sort_by_key(|p| (p.y, p.x));
        set.dedup();
        set
    }

    /// Euclidean distance from a plane point to the polygon boundary.
    pub fn boundary_distance(&self, z: Complex64) -> f64 {
        let n = self.polygon.len();
        (0..n)
            .map(|k| {
                let u = self.polygon[k].plane(self.mesh);
                let v = self.polygon[(k + 1) % n].plane(self.mesh);
                segment_distance(z, u, v)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Boundary unit walk in doubled coordinates with the walk positions of
    /// `a` and `b`.
    pub fn boundary_walk(&self) -> (&[Pt], usize, usize) {
        (&self.walk, self.walk_a, self.walk_b)
    }

    /// Short stable fingerprint of the domain's combinatorics.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub(crate) fn rehash(&mut self) {
        let mut h = Sha256::new();
        h.update(self.mesh.to_le_bytes());
        for (c, r) in self.centres.iter().zip(&self.roles) {
            h.update(c.x.to_le_bytes());
            h.update(c.y.to_le_bytes());
            h.update([*r as u8]);
        }
        for m in &self.medial {
            h.update([m.present as u8]);
        }
        h.update(self.entry.to_le_bytes());
        self.hash = hex::encode(&h.finalize()[..8]);
    }

    /// Geometry table with columns `id,x,y,kind`.
    pub fn geometry_csv(&self) -> String {
        let mut out = String::from("id,x,y,kind\n");
        let mut id = 0usize;
        let mut row = |p: Pt, kind: &str| {
            let z = p.plane(self.mesh);
            let _ = writeln!(out, "{id},{},{},{kind}", z.re, z.im);
            id += 1;
        };
        for p in self.primal_vertices() {
            row(p, "primal");
        }
        for p in self.dual_vertices() {
            row(p, "dual");
        }
        for (v, &c) in self.centres.iter().enumerate() {
            let kind = match self.roles[v] {
                EdgeRole::Free => "medial",
                EdgeRole::Open => "medial_open",
                EdgeRole::Closed => "medial_closed",
            };
            row(c, kind);
        }
        out
    }
}

pub(crate) fn segment_distance(z: Complex64, u: Complex64, v: Complex64) -> f64 {
    let d = v - u;
    let t = (((z - u) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0);
    (z - (u + d * t)).norm()
}

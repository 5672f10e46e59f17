//! Multi-arm events in square annuli of the whole plane, the upper
//! half-plane and the first quadrant.
//!
//! Arms are found through crossing clusters. Every open cluster joining the
//! inner to the outer boundary, and every such dual cluster, occupies its
//! own sector of the annulus, so the crossing clusters come in a
//! well-defined (cyclic or linear) order. A signature is realised when its
//! arms can be handed out to clusters in that order, each cluster taking a
//! consecutive block of its own type no larger than its number of
//! vertex-disjoint crossings.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::Site;
use crate::lattice::{DobrushinDomain, Pt};
use crate::percolation::fill_bits;
use crate::rng::RngStream;
use crate::unionfind::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    FullPlane,
    HalfPlane,
    QuarterPlane,
}

impl Geometry {
    fn admits(self, dx: f64, dy: f64) -> bool {
        match self {
            Geometry::FullPlane => true,
            Geometry::HalfPlane => dy >= 0.0,
            Geometry::QuarterPlane => dx >= 0.0 && dy >= 0.0,
        }
    }
}

/// Arm types in counterclockwise order: 1 open, 0 dual-open.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArmSignature {
    arms: Vec<u8>,
    pub geometry: Geometry,
}

impl ArmSignature {
    pub fn new(arms: &str, geometry: Geometry) -> Result<Self> {
        let arms: Vec<u8> = arms
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::InvalidArgument(format!("arm type {c:?} is not 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        if arms.is_empty() || arms.len() > 6 {
            return Err(Error::InvalidArgument("a signature has one to six arms".into()));
        }
        Ok(Self { arms, geometry })
    }

    pub fn arms(&self) -> &[u8] {
        &self.arms
    }

    pub fn text(&self) -> String {
        self.arms.iter().map(|a| char::from(b'0' + a)).collect()
    }

    /// Same geometry with 0 and 1 exchanged.
    pub fn swapped(&self) -> Self {
        Self { arms: self.arms.iter().map(|a| 1 - a).collect(), geometry: self.geometry }
    }

    /// Exponent fixed by theory for this event, where one is known.
    pub fn reference_exponent(&self) -> Option<f64> {
        match (self.geometry, self.text().as_str()) {
            (Geometry::HalfPlane, "1" | "0") => Some(1.0 / 3.0),
            (Geometry::HalfPlane, "01" | "10") => Some(1.0),
            (Geometry::HalfPlane, "010" | "101") => Some(2.0),
            (Geometry::FullPlane, "01011") => Some(2.0),
            _ => None,
        }
    }
}

/// Bond configuration on the sites of a box `[x0, x0 + w] x [y0, y0 + h]`.
/// Horizontal edges come first, row by row, then vertical ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxConfig {
    x0: i32,
    y0: i32,
    w: i32,
    h: i32,
    bits: Vec<u64>,
}

impl BoxConfig {
    pub fn closed(x0: i32, y0: i32, w: i32, h: i32) -> Self {
        let n = Self::count(w, h);
        Self { x0, y0, w, h, bits: vec![0; n.div_ceil(64).max(1)] }
    }

    pub fn open(x0: i32, y0: i32, w: i32, h: i32) -> Self {
        let mut c = Self::closed(x0, y0, w, h);
        for i in 0..Self::count(w, h) {
            c.bits[i / 64] |= 1 << (i % 64);
        }
        c
    }

    pub fn sample<R: Rng>(x0: i32, y0: i32, w: i32, h: i32, p: f64, rng: &mut R) -> Self {
        let mut c = Self::closed(x0, y0, w, h);
        fill_bits(&mut c.bits, Self::count(w, h), p, rng);
        c
    }

    /// Smallest box holding the annulus of outer radius `big` around `centre`.
    pub fn around(centre: Site, big: i32, geometry: Geometry) -> (i32, i32, i32, i32) {
        let (x0, y0) = match geometry {
            Geometry::FullPlane => (centre.x - big, centre.y - big),
            Geometry::HalfPlane => (centre.x - big, centre.y),
            Geometry::QuarterPlane => (centre.x, centre.y),
        };
        (x0, y0, centre.x + big - x0, centre.y + big - y0)
    }

    fn count(w: i32, h: i32) -> usize {
        (w * (h + 1) + (w + 1) * h) as usize
    }

    pub fn edge_count(&self) -> usize {
        Self::count(self.w, self.h)
    }

    pub fn contains(&self, s: Site) -> bool {
        s.x >= self.x0 && s.x <= self.x0 + self.w && s.y >= self.y0 && s.y <= self.y0 + self.h
    }

    fn index(&self, a: Site, b: Site) -> Option<usize> {
        if !self.contains(a) || !self.contains(b) {
            return None;
        }
        let (lo, hi) = if (a.x, a.y) <= (b.x, b.y) { (a, b) } else { (b, a) };
        let (x, y) = (lo.x - self.x0, lo.y - self.y0);
        match (hi.x - lo.x, hi.y - lo.y) {
            (1, 0) => Some((y * self.w + x) as usize),
            (0, 1) => Some((self.w * (self.h + 1) + y * (self.w + 1) + x) as usize),
            _ => None,
        }
    }

    /// State of the edge between two adjacent sites of the box.
    pub fn is_open(&self, a: Site, b: Site) -> bool {
        let i = self.index(a, b).expect("edge inside the box");
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, a: Site, b: Site, open: bool) -> Result<()> {
        let i = self.index(a, b).ok_or_else(|| Error::InvalidArgument(format!("{a:?}-{b:?} is not an edge of the box")))?;
        if open {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
        Ok(())
    }

    /// Every edge flipped.
    pub fn complement(&self) -> Self {
        let mut c = self.clone();
        for (i, w) in c.bits.iter_mut().enumerate() {
            let valid = (self.edge_count() - 64 * i).min(64);
            let mask = if valid == 64 { u64::MAX } else { (1u64 << valid) - 1 };
            *w = !*w & mask;
        }
        c
    }
}

/// Sites (primal or dual) of one colour class restricted to the annulus,
/// in doubled coordinates relative to the centre so dual sites are
/// integral.
struct Layer {
    pos: Vec<(i32, i32)>,
    links: Vec<Vec<usize>>,
    inner: Vec<bool>,
    outer: Vec<bool>,
    span: i32,
    slot: Vec<usize>,
}

impl Layer {
    fn find(&self, p: (i32, i32)) -> Option<usize> {
        let side = 2 * self.span + 1;
        if p.0.abs() > self.span || p.1.abs() > self.span {
            return None;
        }
        let i = self.slot[((p.1 + self.span) * side + p.0 + self.span) as usize];
        (i != usize::MAX).then_some(i)
    }
}

fn sup(p: (i32, i32)) -> i32 {
    p.0.abs().max(p.1.abs())
}

/// Primal edge crossed by the dual edge from `p` to `q`, or the reverse.
fn crossed(p: (i32, i32), q: (i32, i32)) -> ((i32, i32), (i32, i32)) {
    let (mx, my) = ((p.0 + q.0) / 2, (p.1 + q.1) / 2);
    if p.1 == q.1 {
        ((mx, my - 1), (mx, my + 1))
    } else {
        ((mx - 1, my), (mx + 1, my))
    }
}

/// Open (`kind = 1`) or dual-open (`kind = 0`) graph of the annulus
/// `r <= |z|_inf <= big` around the centre. Dual sites sit at
/// `r + 1/2 ..= big - 1/2`.
fn layer(cfg: &BoxConfig, centre: Site, r: i32, big: i32, geometry: Geometry, kind: u8) -> Layer {
    let (lo, hi, off) = if kind == 1 { (2 * r, 2 * big, 0) } else { (2 * r + 1, 2 * big - 1, 1) };
    let span = 2 * big;
    let side = (2 * span + 1) as usize;
    let mut pos = Vec::new();
    let mut slot = vec![usize::MAX; side * side];
    let mut y = -span + off;
    while y <= span {
        let mut x = -span + off;
        while x <= span {
            let s = sup((x, y));
            if s >= lo && s <= hi && geometry.admits(x as f64, y as f64) {
                slot[((y + span) as usize) * side + (x + span) as usize] = pos.len();
                pos.push((x, y));
            }
            x += 2;
        }
        y += 2;
    }
    let mut l = Layer { links: vec![Vec::new(); pos.len()], inner: Vec::new(), outer: Vec::new(), pos, span, slot };
    let to_site = |p: (i32, i32)| Site::new(centre.x + p.0 / 2, centre.y + p.1 / 2);
    for i in 0..l.pos.len() {
        let p = l.pos[i];
        for q in [(p.0 + 2, p.1), (p.0, p.1 + 2)] {
            let Some(j) = l.find(q) else { continue };
            let open = if kind == 1 {
                cfg.is_open(to_site(p), to_site(q))
            } else {
                let (a, b) = crossed(p, q);
                !cfg.is_open(to_site(a), to_site(b))
            };
            if open {
                l.links[i].push(j);
                l.links[j].push(i);
            }
        }
    }
    l.inner = l.pos.iter().map(|&p| sup(p) == lo).collect();
    l.outer = l.pos.iter().map(|&p| sup(p) == hi).collect();
    l
}

/// Number of vertex-disjoint inner-to-outer paths through `members`, up
/// to `limit`, by unit-capacity augmenting paths on the split graph.
fn disjoint_crossings(layer: &Layer, members: &[usize], limit: usize) -> usize {
    let n = members.len();
    let local: std::collections::HashMap<usize, usize> = members.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    // Node 2k is the entry of member k, 2k + 1 its exit; 2n source, 2n + 1 sink.
    let (src, snk) = (2 * n, 2 * n + 1);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 2 * n + 2];
    let mut to = Vec::new();
    let mut cap = Vec::new();
    let mut add = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        adj[a].push(to.len());
        to.push(b);
        cap.push(1u8);
        adj[b].push(to.len());
        to.push(a);
        cap.push(0u8);
    };
    for (k, &v) in members.iter().enumerate() {
        add(&mut adj, 2 * k, 2 * k + 1);
        if layer.inner[v] {
            add(&mut adj, src, 2 * k);
        }
        if layer.outer[v] {
            add(&mut adj, 2 * k + 1, snk);
        }
        for w in &layer.links[v] {
            if let Some(&m) = local.get(w) {
                add(&mut adj, 2 * k + 1, 2 * m);
            }
        }
    }
    let mut flow = 0;
    while flow < limit {
        let mut prev = vec![usize::MAX; 2 * n + 2];
        let mut queue = VecDeque::from([src]);
        prev[src] = usize::MAX - 1;
        while let Some(u) = queue.pop_front() {
            if u == snk {
                break;
            }
            for &e in &adj[u] {
                let v = to[e];
                if cap[e] > 0 && prev[v] == usize::MAX {
                    prev[v] = e;
                    queue.push_back(v);
                }
            }
        }
        if prev[snk] == usize::MAX {
            break;
        }
        let mut v = snk;
        while v != src {
            let e = prev[v];
            cap[e] -= 1;
            cap[e ^ 1] += 1;
            v = to[e ^ 1];
        }
        flow += 1;
    }
    flow
}

/// Connected components of a layer, with a flag per root telling whether
/// the component joins the two boundaries.
fn components(l: &Layer) -> (Vec<usize>, Vec<bool>) {
    let n = l.pos.len();
    let mut uf = UnionFind::new(n);
    for (i, ls) in l.links.iter().enumerate() {
        for &j in ls {
            uf.union(i as u32, j as u32);
        }
    }
    let root: Vec<usize> = (0..n).map(|i| uf.find(i as u32) as usize).collect();
    let (mut inner, mut outer) = (vec![false; n], vec![false; n]);
    for i in 0..n {
        inner[root[i]] |= l.inner[i];
        outer[root[i]] |= l.outer[i];
    }
    (root, (0..n).map(|i| inner[i] && outer[i]).collect())
}

/// A place where arms can run: one dual crossing cluster, or one sector of
/// the annulus between consecutive dual crossing clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    kind: u8,
    id: usize,
    capacity: usize,
}

/// Whether arms of the given types can be handed out in order to the
/// slots in order, each slot serving one block of its own type.
fn embeds(slots: &[Slot], arms: &[u8]) -> bool {
    let mut j: Option<usize> = None;
    let mut used = 0;
    for &a in arms {
        if let Some(k) = j {
            if slots[k].kind == a && used < slots[k].capacity {
                used += 1;
                continue;
            }
        }
        let from = j.map_or(0, |k| k + 1);
        match (from..slots.len()).find(|&k| slots[k].kind == a) {
            Some(k) => {
                j = Some(k);
                used = 1;
            }
            None => return false,
        }
    }
    true
}

/// Whether `cfg` has arms of the signature's types, in counterclockwise
/// order, between the boundaries at sup-distance `r` and `big` from
/// `centre`. Arms are vertex-disjoint.
///
/// Dual crossing clusters cannot pass beneath one another, so they come in
/// a definite order and cut the rest of the annulus into sectors. Every
/// sector between two of them holds an open crossing, while one open
/// cluster may reach several sectors by running along the inner or outer
/// boundary. Open arms are therefore counted per sector.
pub fn detect_arms(cfg: &BoxConfig, centre: Site, r: i32, big: i32, signature: &ArmSignature) -> Result<bool> {
    if r < 0 || big < r + 2 {
        return Err(Error::InvalidArgument(format!("need 0 <= r and R >= r + 2, got r = {r}, R = {big}")));
    }
    let (x0, y0, w, h) = BoxConfig::around(centre, big, signature.geometry);
    if !cfg.contains(Site::new(x0, y0)) || !cfg.contains(Site::new(x0 + w, y0 + h)) {
        return Err(Error::InvalidArgument("the annulus leaves the configuration box".into()));
    }
    let arms = signature.arms();
    let full = signature.geometry == Geometry::FullPlane;
    let k = arms.len();
    let need = (0..k).map(|s| (0..k).take_while(|&t| (full || s + t < k) && arms[(s + t) % k] == arms[s]).count()).max().unwrap_or(1);
    let dual = layer(cfg, centre, r, big, signature.geometry, 0);
    let (droot, dcross) = components(&dual);
    // Blocks of dual arms separated by open arms lie in distinct dual
    // crossing clusters.
    let blocks = (0..k).filter(|&i| arms[i] == 0 && (if full || i > 0 { arms[(i + k - 1) % k] == 1 } else { true })).count();
    let blocks = if full && blocks == 0 && arms[0] == 0 { 1 } else { blocks };
    if (0..dual.pos.len()).filter(|&i| droot[i] == i && dcross[i]).count() < blocks {
        return Ok(false);
    }
    let open = layer(cfg, centre, r, big, signature.geometry, 1);

    // Sectors: interior primal sites joined by lattice edges whose dual
    // edge is not part of a dual crossing cluster.
    let interior = |p: (i32, i32)| sup(p) > 2 * r && sup(p) < 2 * big;
    let mut uf = UnionFind::new(open.pos.len());
    for (i, &p) in open.pos.iter().enumerate() {
        if !interior(p) {
            continue;
        }
        for q in [(p.0 + 2, p.1), (p.0, p.1 + 2)] {
            let Some(j) = open.find(q).filter(|&j| interior(open.pos[j])) else { continue };
            let (a, b) = crossed(p, q);
            let cut = match (dual.find(a), dual.find(b)) {
                (Some(u), Some(v)) => dual.links[u].contains(&v) && dcross[droot[u]],
                _ => false,
            };
            if !cut {
                uf.union(i as u32, j as u32);
            }
        }
    }
    let sector = |i: usize, uf: &mut UnionFind| uf.find(i as u32) as usize;

    // Walk the ring at distance r + 1/2, recording dual crossing clusters
    // and the sectors entered by open edges leaving the inner boundary.
    let mut ring: Vec<(f64, u8, usize)> = Vec::new();
    for (i, &p) in dual.pos.iter().enumerate() {
        if dual.inner[i] && dcross[droot[i]] {
            ring.push(((p.1 as f64).atan2(p.0 as f64), 0, droot[i]));
        }
    }
    let mut members: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for i in 0..open.pos.len() {
        let p = open.pos[i];
        if interior(p) {
            members.entry(sector(i, &mut uf)).or_default().push(i);
        }
    }
    let mut ends: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for (i, &p) in open.pos.iter().enumerate() {
        if interior(p) {
            continue;
        }
        for q in [(p.0 + 2, p.1), (p.0 - 2, p.1), (p.0, p.1 + 2), (p.0, p.1 - 2)] {
            let Some(j) = open.find(q).filter(|&j| interior(open.pos[j])) else { continue };
            if !open.links[i].contains(&j) {
                continue;
            }
            let s = sector(j, &mut uf);
            if open.inner[i] {
                let m = (p.0 + q.0, p.1 + q.1);
                ring.push(((m.1 as f64).atan2(m.0 as f64), 1, s));
            }
            ends.entry(s).or_default().push(i);
        }
    }
    let angle = |a: f64| if full { a } else { a.rem_euclid(std::f64::consts::TAU) };
    ring.sort_by(|a, b| angle(a.0).total_cmp(&angle(b.0)));

    let mut capacity: std::collections::HashMap<(u8, usize), usize> = Default::default();
    let mut slots: Vec<Slot> = Vec::new();
    for &(_, kind, id) in &ring {
        let c = *capacity.entry((kind, id)).or_insert_with(|| {
            if kind == 0 {
                if need == 1 {
                    return 1;
                }
                let m: Vec<usize> = (0..dual.pos.len()).filter(|&i| droot[i] == id).collect();
                disjoint_crossings(&dual, &m, need)
            } else {
                let mut m = members.get(&id).cloned().unwrap_or_default();
                let mut e = ends.get(&id).cloned().unwrap_or_default();
                e.sort_unstable();
                e.dedup();
                m.extend(e);
                disjoint_crossings(&open, &m, need)
            }
        });
        if c == 0 || slots.last().is_some_and(|s| s.kind == kind && s.id == id) {
            continue;
        }
        slots.push(Slot { kind, id, capacity: c });
    }
    if full && slots.len() > 1 && slots.first() == slots.last() {
        slots.pop();
    }
    if slots.is_empty() {
        return Ok(false);
    }
    if full {
        let m = slots.len();
        for s in 0..m {
            let rot: Vec<Slot> = (0..m).map(|i| slots[(s + i) % m]).collect();
            for t in 0..k {
                let arms_rot: Vec<u8> = (0..k).map(|i| arms[(t + i) % k]).collect();
                if embeds(&rot, &arms_rot) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    } else {
        Ok(embeds(&slots, arms))
    }
}

/// Lazily sampled bonds in a square window, reset in O(1) between samples.
struct LazyBonds {
    half: i32,
    side: usize,
    stamp: Vec<u32>,
    state: Vec<bool>,
    now: u32,
}

impl LazyBonds {
    fn new(half: i32) -> Self {
        let side = (2 * half + 2) as usize;
        Self { half, side, stamp: vec![0; 2 * side * side], state: vec![false; 2 * side * side], now: 0 }
    }

    fn reset(&mut self) {
        self.now += 1;
    }

    /// Edge from `(x, y)` to `(x + 1, y)` (`vertical = false`) or
    /// `(x, y + 1)`, open with probability 1/2.
    fn open<R: Rng>(&mut self, x: i32, y: i32, vertical: bool, rng: &mut R) -> bool {
        let i = (((y + self.half) as usize) * self.side + (x + self.half) as usize) * 2 + vertical as usize;
        if self.stamp[i] != self.now {
            self.stamp[i] = self.now;
            self.state[i] = rng.random::<bool>();
        }
        self.state[i]
    }
}

/// Open cluster of the origin in the half- or quarter-plane (or plane)
/// explored lazily until it reaches sup-distance `big`.
fn one_arm_sample<R: Rng>(bonds: &mut LazyBonds, big: i32, geometry: Geometry, seen: &mut Vec<u32>, rng: &mut R) -> bool {
    bonds.reset();
    let now = bonds.now;
    let side = bonds.side;
    let half = bonds.half;
    let at = |x: i32, y: i32| ((y + half) as usize) * side + (x + half) as usize;
    let mut stack = vec![(0i32, 0i32)];
    seen[at(0, 0)] = now;
    while let Some((x, y)) = stack.pop() {
        if sup((x, y)) >= big {
            return true;
        }
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if !geometry.admits(nx as f64, ny as f64) || seen[at(nx, ny)] == now {
                continue;
            }
            let open = match (dx, dy) {
                (1, 0) => bonds.open(x, y, false, rng),
                (-1, 0) => bonds.open(nx, ny, false, rng),
                (0, 1) => bonds.open(x, y, true, rng),
                _ => bonds.open(nx, ny, true, rng),
            };
            if open {
                seen[at(nx, ny)] = now;
                stack.push((nx, ny));
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmEstimate {
    pub signature: String,
    pub geometry: Geometry,
    pub inner: i32,
    pub radii: Vec<i32>,
    pub hits: Vec<u64>,
    pub trials: Vec<u64>,
    /// Decay exponent: minus the log-log slope of probability against `R`.
    pub exponent: f64,
    pub stderr: f64,
    pub reference: Option<f64>,
}

impl ArmEstimate {
    /// Rows `signature,r,R,hits,trials`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("signature,r,R,hits,trials\n");
        for ((big, hits), trials) in self.radii.iter().zip(&self.hits).zip(&self.trials) {
            out.push_str(&format!("{},{},{},{},{}\n", self.signature, self.inner, big, hits, trials));
        }
        out
    }
}

/// Fit `P(R) ~ R^{-exponent}` from hit counts, weighting each radius by
/// the binomial variance of its log-frequency.
pub fn fit_exponent(radii: &[i32], hits: &[u64], trials: &[u64]) -> Result<(f64, f64)> {
    if let Some(k) = hits.iter().position(|&h| h == 0) {
        return Err(Error::Numerical(format!("no hits at R = {}; increase the sample count", radii[k])));
    }
    let x: Vec<f64> = radii.iter().map(|&r| (r as f64).ln()).collect();
    let y: Vec<f64> = hits.iter().zip(trials).map(|(&h, &n)| (h as f64 / n as f64).ln()).collect();
    let w: Vec<f64> = hits
        .iter()
        .zip(trials)
        .map(|(&h, &n)| {
            let p = h as f64 / n as f64;
            n as f64 * p / (1.0 - p).max(1.0 / n as f64)
        })
        .collect();
    let (_, slope, se) = crate::stats::weighted_fit(&x, &y, &w);
    Ok((-slope, se))
}

/// Estimate the decay exponent of an arm event over outer radii `radii`
/// with inner radius `r`, from `samples` independent configurations per
/// radius. Single arms from the origin are explored lazily.
pub fn estimate_exponent(signature: &ArmSignature, r: i32, radii: &[i32], samples: u64, seed: u64) -> Result<ArmEstimate> {
    if radii.len() < 3 || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("need at least three strictly increasing radii".into()));
    }
    if samples < 1000 {
        return Err(Error::InvalidArgument("need at least 1000 samples per radius".into()));
    }
    if radii[0] <= r {
        return Err(Error::InvalidArgument("outer radii must exceed the inner radius".into()));
    }
    let mut hits = Vec::new();
    for (k, &big) in radii.iter().enumerate() {
        let mut rng = RngStream::new(seed, k as u64).rng();
        let lazy = r == 0 && signature.arms() == [1];
        let mut count = 0;
        if lazy {
            let mut bonds = LazyBonds::new(big + 1);
            let mut seen = vec![0u32; bonds.side * bonds.side];
            for _ in 0..samples {
                count += one_arm_sample(&mut bonds, big, signature.geometry, &mut seen, &mut rng) as u64;
            }
        } else {
            let centre = Site::new(0, 0);
            let (x0, y0, w, h) = BoxConfig::around(centre, big, signature.geometry);
            for _ in 0..samples {
                let cfg = BoxConfig::sample(x0, y0, w, h, 0.5, &mut rng);
                count += detect_arms(&cfg, centre, r, big, signature)? as u64;
            }
        }
        hits.push(count);
    }
    let trials = vec![samples; radii.len()];
    let (exponent, stderr) = fit_exponent(radii, &hits, &trials)?;
    Ok(ArmEstimate {
        signature: signature.text(),
        geometry: signature.geometry,
        inner: r,
        radii: radii.to_vec(),
        hits,
        trials,
        exponent,
        stderr,
        reference: signature.reference_exponent(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub value: f64,
    pub stderr: f64,
    pub hits: u64,
    pub samples: u64,
}

/// Local frame of a boundary point: the point and the unit step along the
/// counterclockwise boundary, in lattice units.
fn boundary_frame(domain: &DobrushinDomain, v: Pt, radius: u32) -> Result<()> {
    let (walk, _, _) = domain.boundary_walk();
    let m = walk.len();
    let k = walk.iter().position(|&p| p == v).ok_or_else(|| Error::InvalidArgument(format!("{v:?} is not on the boundary")))?;
    let step = |i: usize| {
        let (p, q) = (walk[i % m], walk[(i + 1) % m]);
        ((q.x - p.x) / 2, (q.y - p.y) / 2)
    };
    let d = step(k);
    let reach = radius as usize;
    // The boundary must run straight for `radius` steps on both sides.
    if reach * 2 >= m || (0..reach).any(|t| step(k + t) != d || step(k + m - 1 - t) != d) {
        return Err(Error::InvalidArgument(format!("{v:?} is within {radius} steps of a corner")));
    }
    Ok(())
}

/// Outcome of one sample: the dual edge crossing the first outward edge
/// from the boundary point is dual-open and its dual cluster, kept outside
/// the boundary line, reaches a dual vertex at distance at least
/// `radius / 2` from the point.
fn boundary_arm_sample<R: Rng>(bonds: &mut LazyBonds, seen: &mut [u32], radius: u32, rng: &mut R) -> bool {
    bonds.reset();
    let now = bonds.now;
    let (side, half) = (bonds.side, bonds.half);
    // Dual vertex (i, j) sits at (i + 1/2, j + 1/2) in a frame with the
    // boundary along the real axis and the outside above it. Its edges to
    // (i + 1, j) and (i, j + 1) are stored under the index (i, j).
    let at = |i: i32, j: i32| ((j + half) as usize) * side + (i + half) as usize;
    let reach2 = (radius as f64 / 2.0).powi(2);
    let far = |i: i32, j: i32| (i as f64 + 0.5).powi(2) + (j as f64 + 0.5).powi(2) >= reach2;
    if !bonds.open(-1, 0, false, rng) {
        return false;
    }
    let mut stack = vec![(-1, 0), (0, 0)];
    seen[at(-1, 0)] = now;
    seen[at(0, 0)] = now;
    while let Some((i, j)) = stack.pop() {
        if far(i, j) {
            return true;
        }
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (ni, nj) = (i + di, j + dj);
            if nj < 0 || seen[at(ni, nj)] == now {
                continue;
            }
            let open = match (di, dj) {
                (1, 0) => bonds.open(i, j, false, rng),
                (-1, 0) => bonds.open(ni, nj, false, rng),
                (0, 1) => bonds.open(i, j, true, rng),
                _ => bonds.open(ni, nj, true, rng),
            };
            if open {
                seen[at(ni, nj)] = now;
                stack.push((ni, nj));
            }
        }
    }
    false
}

/// Probability that the dual edge just outside the boundary point `v`
/// (a primal vertex of a straight boundary segment, doubled coordinates)
/// starts a dual-open arm outside the domain reaching distance
/// `radius / 2` lattice units. The event only involves bonds outside the
/// domain, so it depends on the geometry through the straightness check.
pub fn boundary_one_arm(domain: &DobrushinDomain, v: Pt, radius: u32, samples: u64, seed: u64) -> Result<ProbabilityEstimate> {
    if radius == 0 || samples == 0 {
        return Err(Error::InvalidArgument("radius and samples must be positive".into()));
    }
    boundary_frame(domain, v, radius)?;
    let mut bonds = LazyBonds::new(radius as i32 + 2);
    let mut seen = vec![0u32; bonds.side * bonds.side];
    let mut rng = RngStream::new(seed, 0).rng();
    let hits = (0..samples).filter(|_| boundary_arm_sample(&mut bonds, &mut seen, radius, &mut rng)).count() as u64;
    let p = hits as f64 / samples as f64;
    Ok(ProbabilityEstimate { value: p, stderr: (p * (1.0 - p) / samples as f64).sqrt(), hits, samples })
}

/// Exact value of the boundary arm probability, by branching on each bond
/// the first time the cluster exploration needs it.
pub fn boundary_one_arm_exact(radius: u32) -> f64 {
    use std::collections::HashSet;
    let reach2 = (radius as f64 / 2.0).powi(2);
    let far = |(i, j): (i32, i32)| (i as f64 + 0.5).powi(2) + (j as f64 + 0.5).powi(2) >= reach2;
    type Bond = ((i32, i32), (i32, i32));
    fn explore(cluster: &mut HashSet<(i32, i32)>, frontier: &mut Vec<Bond>, decided: &mut HashSet<Bond>, far: &dyn Fn((i32, i32)) -> bool) -> f64 {
        let Some((a, b)) = frontier.pop() else { return 0.0 };
        if decided.contains(&(a, b)) || cluster.contains(&b) {
            let p = explore(cluster, frontier, decided, far);
            frontier.push((a, b));
            return p;
        }
        // Closed branch.
        decided.insert((a, b));
        decided.insert((b, a));
        let closed = explore(cluster, frontier, decided, far);
        // Open branch.
        let open = if far(b) {
            1.0
        } else {
            cluster.insert(b);
            let before = frontier.len();
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let c = (b.0 + di, b.1 + dj);
                if c.1 >= 0 && !cluster.contains(&c) && !decided.contains(&(b, c)) {
                    frontier.push((b, c));
                }
            }
            let p = explore(cluster, frontier, decided, far);
            frontier.truncate(before);
            cluster.remove(&b);
            p
        };
        decided.remove(&(a, b));
        decided.remove(&(b, a));
        frontier.push((a, b));
        0.5 * closed + 0.5 * open
    }
    let (s, t) = ((-1, 0), (0, 0));
    if far(s) || far(t) {
        return 0.5;
    }
    let mut cluster: HashSet<(i32, i32)> = [s, t].into();
    let mut decided: HashSet<Bond> = [(s, t), (t, s)].into();
    let mut frontier = Vec::new();
    for b in [s, t] {
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let c = (b.0 + di, b.1 + dj);
            if c.1 >= 0 && !cluster.contains(&c) {
                frontier.push((b, c));
            }
        }
    }
    0.5 * explore(&mut cluster, &mut frontier, &mut decided, &far)
}

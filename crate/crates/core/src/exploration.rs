//! The exploration path and its winding.
//!
//! The path enters the domain through the entry edge and follows the medial
//! lattice: at each medial vertex it turns right when the primal edge there
//! is open and left when it is closed. This keeps open edges on its left
//! and dual-open edges on its right. Turns are counted in quarter turns,
//! counterclockwise positive.

use std::collections::VecDeque;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{DobrushinDomain, EdgeId, EdgeRole, MedialEdge, MedialEdgeId, NONE};
use crate::percolation::Configuration;

/// A traced exploration path.
///
/// `edges[0]` is the entry edge and the last entry is the exit edge;
/// `vertices[k]` is the head of `edges[k]`. `turns[k]` is the winding, in
/// quarter turns, accumulated from `edges[0]` to `edges[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExplorationPath {
    pub vertices: Vec<EdgeId>,
    pub edges: Vec<MedialEdgeId>,
    pub turns: Vec<i32>,
}

impl ExplorationPath {
    /// Number of medial vertices visited, counting repeats.
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Winding in radians from edge `i` to edge `j` along the path.
    pub fn winding(&self, i: usize, j: usize) -> f64 {
        (self.turns[j] - self.turns[i]) as f64 * std::f64::consts::FRAC_PI_2
    }

    /// Quarter turns from edge `i` to the exit edge.
    pub fn turns_to_exit(&self, i: usize) -> i32 {
        self.turns[self.turns.len() - 1] - self.turns[i]
    }

    /// Path table with columns `step,x,y,cumulative_winding`.
    pub fn to_csv(&self, domain: &DobrushinDomain) -> String {
        let mut out = String::from("step,x,y,cumulative_winding\n");
        for (k, v) in self.vertices.iter().enumerate() {
            let z = domain.position(*v);
            let w = self.turns[k] as f64 * std::f64::consts::FRAC_PI_2;
            let _ = writeln!(out, "{k},{},{},{w}", z.re, z.im);
        }
        out
    }
}

/// Outcome of a walk that may stop before the exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Walk {
    Exited,
    Stopped,
}

/// Follow the turning rule from the entry edge. `open` reports the status of
/// the primal edge at a medial vertex; `stop` may end the walk early at a
/// vertex. The path buffer is cleared first.
pub fn walk_with(domain: &DobrushinDomain, mut open: impl FnMut(u32) -> bool, mut stop: impl FnMut(u32) -> bool, path: &mut ExplorationPath) -> Result<Walk> {
    path.vertices.clear();
    path.edges.clear();
    path.turns.clear();
    let mut edge = domain.entry;
    let mut turns = 0i32;
    let limit = domain.medial.len() + 1;
    loop {
        let MedialEdge { head, dir, .. } = domain.medial[edge as usize];
        path.edges.push(MedialEdgeId(edge));
        path.turns.push(turns);
        let Some(v) = head else { return Ok(Walk::Exited) };
        let v = v.0;
        path.vertices.push(EdgeId(v));
        if stop(v) {
            return Ok(Walk::Stopped);
        }
        if path.edges.len() > limit {
            return Err(Error::Exploration("path exceeded the number of medial edges".into()));
        }
        let (next, turn) = if open(v) { (dir.right(), -1) } else { (dir.left(), 1) };
        let id = domain.slots[v as usize][next.index()];
        if id == NONE {
            return Err(Error::Exploration(format!("path escapes the domain at {:?}", domain.centres[v as usize])));
        }
        turns += turn;
        edge = id;
    }
}

/// Trace the full exploration path of a configuration.
pub fn trace_exploration(domain: &DobrushinDomain, cfg: &Configuration) -> Result<ExplorationPath> {
    cfg.check(domain)?;
    let mut path = ExplorationPath::default();
    walk_with(domain, |v| cfg.is_open(domain, EdgeId(v)), |_| false, &mut path)?;
    Ok(path)
}

/// Sample the path at edge density `p` without drawing a full
/// configuration: each free edge is decided the first time the walk
/// reaches it. The walk ends at the exit or where `stop` fires.
pub fn sample_exploration_until<R: Rng + ?Sized>(
    domain: &DobrushinDomain,
    p: f64,
    rng: &mut R,
    stop: impl FnMut(u32) -> bool,
    path: &mut ExplorationPath,
) -> Result<Walk> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("edge density {p} outside [0, 1]")));
    }
    // 0 undecided, 1 open, 2 closed.
    let mut state = vec![0u8; domain.medial_vertex_count()];
    walk_with(
        domain,
        |v| match domain.role(EdgeId(v)) {
            EdgeRole::Open => true,
            EdgeRole::Closed => false,
            EdgeRole::Free => {
                let s = &mut state[v as usize];
                if *s == 0 {
                    *s = if rng.random::<f64>() < p { 1 } else { 2 };
                }
                *s == 1
            }
        },
        stop,
        path,
    )
}

/// Medial vertex positions along the path; consecutive points are
/// `mesh / sqrt 2` apart.
pub fn path_to_polyline(domain: &DobrushinDomain, path: &ExplorationPath) -> Vec<Complex64> {
    path.vertices.iter().map(|&v| domain.position(v)).collect()
}

/// The path as a simple curve through the midpoints of its medial edges,
/// starting at the outer end of the entry edge. Revisited medial vertices
/// are cut on opposite sides, so the curve never touches itself.
pub fn path_to_midpoint_curve(domain: &DobrushinDomain, path: &ExplorationPath) -> Vec<Complex64> {
    let Some(&first) = path.edges.first() else { return Vec::new() };
    let e = domain.medial_edge(first);
    let (dx, dy) = e.dir.offset();
    let start = match e.head {
        Some(h) => domain.position(h) - Complex64::new(dx as f64, dy as f64) * (domain.mesh() / 2.0),
        None => domain.medial_midpoint(first),
    };
    std::iter::once(start).chain(path.edges.iter().skip(1).map(|&m| domain.medial_midpoint(m))).collect()
}

/// The domain left for the rest of the path once its first `n` steps are
/// known: the tip is `vertices[n]`, entered through `edges[n]`.
///
/// Edges at the visited vertices become forced to their observed status,
/// the traversed medial edges are removed and only the part of the medial
/// graph still connected to the exit is kept. Edge ids are shared with the
/// original domain.
pub fn slit_domain(domain: &DobrushinDomain, cfg: &Configuration, path: &ExplorationPath, n: usize) -> Result<DobrushinDomain> {
    cfg.check(domain)?;
    if n == 0 || n >= path.len() {
        return Err(Error::InvalidArgument(format!("slit length {n} must lie in 1..{}", path.len())));
    }
    let mut d = domain.clone();
    for &v in &path.vertices[..n] {
        if d.roles[v.index()] == EdgeRole::Free {
            d.roles[v.index()] = if cfg.is_open(domain, v) { EdgeRole::Open } else { EdgeRole::Closed };
        }
    }
    let detach = |d: &mut DobrushinDomain, id: u32| {
        let m = d.medial[id as usize];
        d.medial[id as usize].present = false;
        for (end, slot) in [(m.tail, m.dir), (m.head, m.dir.opposite())] {
            if let Some(v) = end {
                d.slots[v.index()][slot.index()] = NONE;
            }
        }
    };
    for &e in &path.edges[..n] {
        detach(&mut d, e.0);
    }
    let entry = path.edges[n].0;
    let m = d.medial[entry as usize];
    if let Some(t) = m.tail {
        d.slots[t.index()][m.dir.index()] = NONE;
        d.medial[entry as usize].tail = None;
    }
    d.entry = entry;
    d.start = path.vertices[n].0;

    // Keep the component of the exit.
    let mut seen = vec![false; d.centres.len()];
    let mut queue = VecDeque::from([d.end]);
    seen[d.end as usize] = true;
    while let Some(v) = queue.pop_front() {
        for id in d.slots[v as usize] {
            if id == NONE {
                continue;
            }
            let m = d.medial[id as usize];
            for w in [m.tail, m.head].into_iter().flatten() {
                if !seen[w.index()] {
                    seen[w.index()] = true;
                    queue.push_back(w.0);
                }
            }
        }
    }
    if !seen[d.start as usize] {
        return Err(Error::Exploration("slit tip is cut off from the exit".into()));
    }
    for v in 0..d.centres.len() {
        if !seen[v] {
            for id in d.slots[v] {
                if id != NONE {
                    detach(&mut d, id);
                }
            }
            if d.roles[v] == EdgeRole::Free {
                d.roles[v] = EdgeRole::Closed;
            }
        }
    }
    d.free = (0..d.centres.len() as u32).filter(|&i| d.roles[i as usize] == EdgeRole::Free).collect();
    d.free_slot = vec![NONE; d.centres.len()];
    for (k, &e) in d.free.iter().enumerate() {
        d.free_slot[e as usize] = k as u32;
    }
    d.rehash();
    Ok(d)
}

/// Extend a configuration of a slit domain to its parent domain, copying
/// the statuses forced by the slit and leaving detached edges closed.
pub fn lift_configuration(parent: &DobrushinDomain, slit: &DobrushinDomain, cfg: &Configuration) -> Result<Configuration> {
    cfg.check(slit)?;
    let mut out = Configuration::all_closed(parent);
    for (k, &e) in parent.free.iter().enumerate() {
        out.set_free(k, cfg.is_open(slit, EdgeId(e)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_condition_c_domain, build_rectangle_domain, BoundarySpec, Corner, Dir, Pt, Segment};
    use crate::percolation::{enumerate_configurations, sample_configuration, DomainGraph};
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn l_shape() -> DobrushinDomain {
        let s = |dx, dy| Segment { dx, dy };
        let spec =
            BoundarySpec { segments: vec![s(3, 0), s(0, 1), s(-1, 0), s(0, 2), s(-2, 0), s(0, -3)], a: 0, b: 4, mesh: 1.0, min_segment_length: Some(0.0) };
        build_condition_c_domain(&spec).unwrap()
    }

    fn fixtures() -> Vec<DobrushinDomain> {
        vec![
            build_rectangle_domain(1, 1, 1.0, Corner::SW, Corner::NE).unwrap(),
            build_rectangle_domain(2, 2, 1.0, Corner::SW, Corner::NE).unwrap(),
            build_rectangle_domain(2, 3, 1.0, Corner::SW, Corner::NE).unwrap(),
            build_rectangle_domain(3, 2, 1.0, Corner::SE, Corner::NW).unwrap(),
            l_shape(),
        ]
    }

    /// Walk backwards from the exit: the edge before `e` at vertex `v` is the
    /// inbound one that the turning rule maps onto `e`.
    fn reverse_trace(d: &DobrushinDomain, cfg: &Configuration) -> Vec<MedialEdgeId> {
        let mut out = vec![d.exit_edge()];
        let mut e = d.exit_edge();
        loop {
            let m = *d.medial_edge(e);
            let Some(v) = m.tail else { break };
            let before = if cfg.is_open(d, v) { m.dir.left() } else { m.dir.right() };
            let id = d.slots[v.index()][before.opposite().index()];
            assert_ne!(id, NONE);
            e = MedialEdgeId(id);
            out.push(e);
        }
        out.reverse();
        out
    }

    #[test]
    fn unit_square_by_hand() {
        let d = build_rectangle_domain(1, 1, 1.0, Corner::SW, Corner::NE).unwrap();
        // Free edges in order: bottom (1,0) and right (2,1).
        let at = |x, y| d.vertex_at(Pt::new(x, y)).unwrap();
        let both_open = Configuration::from_index(&d, 0b11);
        let p = trace_exploration(&d, &both_open).unwrap();
        // Open bottom: right turn to the stub below, left back up, right turn exits.
        let seq: Vec<Pt> = p.vertices.iter().map(|&v| d.centre(v)).collect();
        assert_eq!(seq, vec![Pt::new(1, 0), Pt::new(2, -1), Pt::new(3, 0), Pt::new(2, 1)]);
        assert_eq!(*p.vertices.last().unwrap(), at(2, 1));
        // Closed right edge: the path is turned back, circles the square
        // through the wired sides and meets both marked vertices twice.
        let q = trace_exploration(&d, &Configuration::from_index(&d, 0b01)).unwrap();
        let seq: Vec<Pt> = q.vertices.iter().map(|&v| d.centre(v)).collect();
        assert_eq!(seq, vec![Pt::new(1, 0), Pt::new(2, -1), Pt::new(3, 0), Pt::new(2, 1), Pt::new(1, 0), Pt::new(0, 1), Pt::new(1, 2), Pt::new(2, 1)]);
        for p in [&p, &q] {
            assert_eq!(p.turns_to_exit(0).rem_euclid(4), 0);
        }
    }

    #[test]
    fn every_configuration_reaches_the_exit() {
        for d in fixtures() {
            assert!(d.free_edge_count() <= 20);
            let enter = d.medial_edge(d.entry_edge()).dir.index() as i32;
            let leave = d.medial_edge(d.exit_edge()).dir.index() as i32;
            for cfg in enumerate_configurations(&d, 24).unwrap() {
                let p = trace_exploration(&d, &cfg).unwrap();
                assert_eq!(p.vertices[0], d.start_vertex());
                assert_eq!(*p.vertices.last().unwrap(), d.end_vertex());
                assert_eq!(*p.edges.last().unwrap(), d.exit_edge());
                let mut used = p.edges.clone();
                used.sort();
                used.dedup();
                assert_eq!(used.len(), p.edges.len(), "medial edge reused");
                // Total winding agrees with the end directions modulo a full turn.
                assert_eq!((p.turns_to_exit(0) - (leave - enter)).rem_euclid(4), 0);
                assert_eq!(reverse_trace(&d, &cfg), p.edges);
            }
        }
    }

    #[test]
    fn l_shape_is_small_enough_to_enumerate() {
        let d = l_shape();
        assert!(d.free_edge_count() >= 8 && d.free_edge_count() <= 20, "{}", d.free_edge_count());
    }

    #[test]
    fn left_side_is_open_cluster_of_the_wired_arc() {
        let d = build_rectangle_domain(12, 9, 1.0, Corner::SW, Corner::NE).unwrap();
        let g = DomainGraph::new(&d);
        let (_, b) = d.marked_points();
        let outer_dual = Pt::new(2 * 12 + 1, -1);
        let mut rng = RngStream::new(11, 0).rng();
        for _ in 0..50 {
            let cfg = sample_configuration(&d, 0.5, &mut rng).unwrap();
            let p = trace_exploration(&d, &cfg).unwrap();
            let open = g.open_clusters(&d, &cfg);
            let dual = g.dual_clusters(&d, &cfg);
            let wired = open[g.primal_id(b).unwrap() as usize];
            let dual_wired = dual[g.dual_id(outer_dual).unwrap() as usize];
            for &e in &p.edges[1..p.edges.len() - 1] {
                let m = d.medial_edge(e);
                let c = d.centre(m.tail.unwrap());
                let (dx, dy) = m.dir.offset();
                let (left, right) = if c.is_horizontal_centre() { (c.shift(dx, 0), c.shift(0, dy)) } else { (c.shift(0, dy), c.shift(dx, 0)) };
                assert_eq!(open[g.primal_id(left).unwrap() as usize], wired);
                assert_eq!(dual[g.dual_id(right).unwrap() as usize], dual_wired);
            }
        }
    }

    #[test]
    fn polylines() {
        let d = build_rectangle_domain(6, 4, 0.5, Corner::SW, Corner::NE).unwrap();
        let cfg = sample_configuration(&d, 0.5, &mut RngStream::new(2, 0).rng()).unwrap();
        let p = trace_exploration(&d, &cfg).unwrap();
        let line = path_to_polyline(&d, &p);
        let length: f64 = line.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        let expected = (line.len() - 1) as f64 * 0.5 / 2f64.sqrt();
        assert!((length - expected).abs() < 1e-9);
        let curve = path_to_midpoint_curve(&d, &p);
        assert_eq!(curve.len(), p.edges.len());
        // The entry edge starts on the line of the stubs, half a mesh below.
        assert!((curve[0].im + 0.25).abs() < 1e-12);
        let mut pts: Vec<(i64, i64)> = curve.iter().map(|z| ((z.re * 8.0).round() as i64, (z.im * 8.0).round() as i64)).collect();
        pts.sort();
        pts.dedup();
        assert_eq!(pts.len(), curve.len());
        assert!(p.to_csv(&d).lines().count() == p.len() + 1);
    }

    #[test]
    fn slit_domain_shape() {
        let d = build_rectangle_domain(2, 3, 1.0, Corner::SW, Corner::NE).unwrap();
        for cfg in enumerate_configurations(&d, 24).unwrap().step_by(37) {
            let p = trace_exploration(&d, &cfg).unwrap();
            // No steps known: not a slit.
            assert!(slit_domain(&d, &cfg, &p, 0).is_err());
            let s = slit_domain(&d, &cfg, &p, 1).unwrap();
            assert_eq!(s.start_vertex(), p.vertices[1]);
            assert!(s.free_edge_count() < d.free_edge_count());
            let last = p.len() - 1;
            let s = slit_domain(&d, &cfg, &p, last).unwrap();
            let mut restricted = Configuration::all_closed(&s);
            for (k, e) in s.free_edges().enumerate() {
                restricted.set_free(k, cfg.is_open(&d, e));
            }
            // The whole path is known: only the exit step remains.
            let rest = trace_exploration(&s, &restricted).unwrap();
            assert_eq!(rest.vertices, vec![p.vertices[last]]);
            let lifted = lift_configuration(&d, &s, &restricted).unwrap();
            assert_eq!(trace_exploration(&d, &lifted).unwrap().edges, p.edges);
        }
    }

    #[test]
    fn slit_path_continues_the_original() {
        let d = build_rectangle_domain(8, 6, 1.0, Corner::SW, Corner::NE).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..40 {
            let cfg = sample_configuration(&d, 0.5, &mut rng).unwrap();
            let p = trace_exploration(&d, &cfg).unwrap();
            let n = p.len() / 2;
            let s = slit_domain(&d, &cfg, &p, n).unwrap();
            let mut restricted = Configuration::all_closed(&s);
            for (k, e) in s.free_edges().enumerate() {
                restricted.set_free(k, cfg.is_open(&d, e));
            }
            let q = trace_exploration(&s, &restricted).unwrap();
            assert_eq!(q.edges[..], p.edges[n..]);
            assert_eq!(q.turns_to_exit(0), p.turns_to_exit(n));
        }
    }

    #[test]
    fn entry_direction_fixed() {
        let d = build_rectangle_domain(3, 3, 1.0, Corner::SW, Corner::NE).unwrap();
        assert_eq!(d.medial_edge(d.entry_edge()).dir, Dir::NE);
    }

    proptest! {
        #[test]
        fn winding_is_additive(seed in any::<u64>(), i in 0usize..1000, j in 0usize..1000, k in 0usize..1000) {
            let d = build_rectangle_domain(6, 5, 1.0, Corner::SW, Corner::NE).unwrap();
            let cfg = sample_configuration(&d, 0.5, &mut RngStream::new(seed, 9).rng()).unwrap();
            let p = trace_exploration(&d, &cfg).unwrap();
            let n = p.edges.len();
            let (i, j, k) = (i % n, j % n, k % n);
            prop_assert!((p.winding(i, j) + p.winding(j, k) - p.winding(i, k)).abs() < 1e-12);
        }
    }
}

//! Bond configurations on Dobrushin domains and on plain rectangles.
//!
//! A configuration stores one bit per free edge of its domain, in free-edge
//! order; forced edges are answered from the domain's roles. The textual
//! form is `<domain hash>:<hex>` with bit `i` of byte `j` holding free edge
//! `8j + i`.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{segment_distance, DobrushinDomain, EdgeId, EdgeRole, Pt};
use crate::unionfind::UnionFind;

/// Largest number of free edges any enumeration will accept.
pub const ENUMERATION_HARD_CAP: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    domain_hash: String,
    free: usize,
    bits: Vec<u64>,
}

impl Configuration {
    pub fn all_closed(domain: &DobrushinDomain) -> Self {
        Self { domain_hash: domain.hash().to_owned(), free: domain.free_edge_count(), bits: vec![0; domain.free_edge_count().div_ceil(64)] }
    }

    pub fn all_open(domain: &DobrushinDomain) -> Self {
        let mut c = Self::all_closed(domain);
        for k in 0..c.free {
            c.set_free(k, true);
        }
        c
    }

    /// Configuration whose free edge `k` is bit `k` of `index`.
    pub fn from_index(domain: &DobrushinDomain, index: u64) -> Self {
        let mut c = Self::all_closed(domain);
        if let Some(w) = c.bits.first_mut() {
            let mask = if c.free >= 64 { u64::MAX } else { (1u64 << c.free) - 1 };
            *w = index & mask;
        }
        c
    }

    pub fn domain_hash(&self) -> &str {
        &self.domain_hash
    }

    pub fn free_len(&self) -> usize {
        self.free
    }

    pub fn free_bit(&self, k: usize) -> bool {
        self.bits[k >> 6] >> (k & 63) & 1 == 1
    }

    pub fn set_free(&mut self, k: usize, open: bool) {
        let (w, b) = (k >> 6, k & 63);
        if open {
            self.bits[w] |= 1 << b;
        } else {
            self.bits[w] &= !(1 << b);
        }
    }

    /// Status of any edge of `domain`, forced or free.
    pub fn is_open(&self, domain: &DobrushinDomain, e: EdgeId) -> bool {
        match domain.roles[e.index()] {
            EdgeRole::Open => true,
            EdgeRole::Closed => false,
            EdgeRole::Free => self.free_bit(domain.free_slot[e.index()] as usize),
        }
    }

    pub fn check(&self, domain: &DobrushinDomain) -> Result<()> {
        if self.domain_hash != domain.hash() || self.free != domain.free_edge_count() {
            return Err(Error::DomainMismatch(format!("configuration for {} used on {}", self.domain_hash, domain.hash())));
        }
        Ok(())
    }

    pub fn open_free_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = (0..self.free.div_ceil(8)).map(|j| (self.bits[j / 8] >> (8 * (j % 8))) as u8).collect();
        format!("{}:{}", self.domain_hash, hex::encode(bytes))
    }

    pub fn from_hex(domain: &DobrushinDomain, text: &str) -> Result<Self> {
        let (hash, body) = text.trim().split_once(':').ok_or_else(|| Error::Parse("missing domain hash header".into()))?;
        if hash != domain.hash() {
            return Err(Error::DomainMismatch(format!("header {hash} does not match domain {}", domain.hash())));
        }
        let bytes = hex::decode(body).map_err(|e| Error::Parse(e.to_string()))?;
        let mut c = Self::all_closed(domain);
        if bytes.len() != c.free.div_ceil(8) {
            return Err(Error::Parse(format!("expected {} bytes, found {}", c.free.div_ceil(8), bytes.len())));
        }
        for (j, byte) in bytes.iter().enumerate() {
            c.bits[j / 8] |= (*byte as u64) << (8 * (j % 8));
        }
        if c.free % 64 != 0 && c.bits.last().is_some_and(|w| w >> (c.free % 64) != 0) {
            return Err(Error::Parse("bits set beyond the last free edge".into()));
        }
        Ok(c)
    }
}

/// Independent bond configuration with edge density `p` on the free edges.
pub fn sample_configuration<R: Rng + ?Sized>(domain: &DobrushinDomain, p: f64, rng: &mut R) -> Result<Configuration> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("edge density {p} outside [0, 1]")));
    }
    let mut c = Configuration::all_closed(domain);
    fill_bits(&mut c.bits, c.free, p, rng);
    Ok(c)
}

pub(crate) fn fill_bits<R: Rng + ?Sized>(bits: &mut [u64], len: usize, p: f64, rng: &mut R) {
    if p == 0.5 {
        for w in bits.iter_mut() {
            *w = rng.random();
        }
    } else {
        bits.iter_mut().for_each(|w| *w = 0);
        for k in 0..len {
            if rng.random::<f64>() < p {
                bits[k >> 6] |= 1 << (k & 63);
            }
        }
    }
    if len % 64 != 0 {
        if let Some(w) = bits.last_mut() {
            *w &= (1u64 << (len % 64)) - 1;
        }
    }
}

/// Every assignment of the free edges, in increasing binary order.
pub fn enumerate_configurations(domain: &DobrushinDomain, cap: usize) -> Result<impl Iterator<Item = Configuration> + '_> {
    let free = domain.free_edge_count();
    let cap = cap.min(ENUMERATION_HARD_CAP);
    if free > cap {
        return Err(Error::EnumerationTooLarge { free, cap });
    }
    Ok((0..1u64 << free).map(move |i| Configuration::from_index(domain, i)))
}

/// Primal and dual graphs of a domain, with vertices indexed densely.
#[derive(Debug, Clone)]
pub struct DomainGraph {
    pub primal: Vec<Pt>,
    pub dual: Vec<Pt>,
    primal_ends: Vec<(u32, u32)>,
    dual_ends: Vec<(u32, u32)>,
    dual_index: HashMap<Pt, u32>,
    primal_index: HashMap<Pt, u32>,
}

impl DomainGraph {
    pub fn new(domain: &DobrushinDomain) -> Self {
        let primal = domain.primal_vertices();
        let dual = domain.dual_vertices();
        let primal_index: HashMap<Pt, u32> = primal.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect();
        let dual_index: HashMap<Pt, u32> = dual.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect();
        let primal_ends = domain
            .centres
            .iter()
            .map(|c| {
                let (u, v) = c.primal_ends();
                (primal_index[&u], primal_index[&v])
            })
            .collect();
        let dual_ends = domain
            .centres
            .iter()
            .map(|c| {
                let (u, v) = c.dual_ends();
                (dual_index[&u], dual_index[&v])
            })
            .collect();
        Self { primal, dual, primal_ends, dual_ends, dual_index, primal_index }
    }

    pub fn primal_id(&self, p: Pt) -> Option<u32> {
        self.primal_index.get(&p).copied()
    }

    pub fn dual_id(&self, p: Pt) -> Option<u32> {
        self.dual_index.get(&p).copied()
    }

    /// Cluster label of every primal vertex under open edges.
    pub fn open_clusters(&self, domain: &DobrushinDomain, cfg: &Configuration) -> Vec<u32> {
        let mut uf = UnionFind::new(self.primal.len());
        for e in domain.edges() {
            if cfg.is_open(domain, e) {
                let (u, v) = self.primal_ends[e.index()];
                uf.union(u, v);
            }
        }
        (0..self.primal.len() as u32).map(|i| uf.find(i)).collect()
    }

    /// Cluster label of every dual vertex under dual-open edges, that is
    /// duals of closed primal edges.
    pub fn dual_clusters(&self, domain: &DobrushinDomain, cfg: &Configuration) -> Vec<u32> {
        let mut uf = self.dual_union(domain, cfg);
        (0..self.dual.len() as u32).map(|i| uf.find(i)).collect()
    }

    fn dual_union(&self, domain: &DobrushinDomain, cfg: &Configuration) -> UnionFind {
        let mut uf = UnionFind::new(self.dual.len() + 2);
        for e in domain.edges() {
            if !cfg.is_open(domain, e) {
                let (u, v) = self.dual_ends[e.index()];
                uf.union(u, v);
            }
        }
        uf
    }

    /// Dual vertices within `radius` of a polyline given in plane coordinates.
    pub fn dual_near(&self, domain: &DobrushinDomain, side: &[Complex64], radius: f64) -> Vec<u32> {
        let h = domain.mesh();
        (0..self.dual.len() as u32)
            .filter(|&i| {
                let z = self.dual[i as usize].plane(h);
                match side {
                    [p] => (z - p).norm() <= radius + 1e-9 * h,
                    _ => side.windows(2).any(|w| segment_distance(z, w[0], w[1]) <= radius + 1e-9 * h),
                }
            })
            .collect()
    }

    /// Whether a single dual-open cluster meets both sides. Sides are
    /// polylines; a dual vertex belongs to a side when it lies within half a
    /// mesh of it.
    pub fn has_dual_crossing(&self, domain: &DobrushinDomain, cfg: &Configuration, side1: &[Complex64], side2: &[Complex64]) -> Result<bool> {
        cfg.check(domain)?;
        let r = domain.mesh() / 2.0;
        let (s1, s2) = (self.dual_near(domain, side1, r), self.dual_near(domain, side2, r));
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::InvalidArgument("a side has no dual vertex within half a mesh".into()));
        }
        let mut uf = self.dual_union(domain, cfg);
        let (t1, t2) = (self.dual.len() as u32, self.dual.len() as u32 + 1);
        s1.iter().for_each(|&d| uf.union(d, t1));
        s2.iter().for_each(|&d| uf.union(d, t2));
        Ok(uf.same(t1, t2))
    }
}

/// Rectangle of `width` by `height` primal vertices in which every edge is
/// free. Horizontal edges come first, row by row, then vertical edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BondRectangle {
    pub width: u32,
    pub height: u32,
}

impl BondRectangle {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width < 2 || height < 1 {
            return Err(Error::InvalidArgument("rectangle needs at least two columns and one row".into()));
        }
        Ok(Self { width, height })
    }

    fn horizontal(&self) -> usize {
        ((self.width - 1) * self.height) as usize
    }

    pub fn edge_count(&self) -> usize {
        self.horizontal() + (self.width * (self.height - 1)) as usize
    }

    fn ends(&self, e: usize) -> (u32, u32) {
        let w = self.width;
        if e < self.horizontal() {
            let (row, col) = (e as u32 / (w - 1), e as u32 % (w - 1));
            (row * w + col, row * w + col + 1)
        } else {
            let k = (e - self.horizontal()) as u32;
            (k, k + w)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Vec<u64> {
        let mut bits = vec![0; self.edge_count().div_ceil(64)];
        fill_bits(&mut bits, self.edge_count(), p, rng);
        bits
    }

    /// Open path from the left column to the right column.
    pub fn has_open_crossing(&self, bits: &[u64]) -> bool {
        let n = (self.width * self.height) as usize;
        let mut uf = UnionFind::new(n + 2);
        let (left, right) = (n as u32, n as u32 + 1);
        for row in 0..self.height {
            uf.union(row * self.width, left);
            uf.union(row * self.width + self.width - 1, right);
        }
        for e in 0..self.edge_count() {
            if bits[e >> 6] >> (e & 63) & 1 == 1 {
                let (u, v) = self.ends(e);
                uf.union(u, v);
            }
        }
        uf.same(left, right)
    }

    /// Dual-open path from below the bottom row to above the top row.
    pub fn has_dual_crossing(&self, bits: &[u64]) -> bool {
        // Dual vertex (i + 1/2, j - 1/2) for i < width - 1, j <= height.
        let cols = self.width - 1;
        let n = (cols * (self.height + 1)) as usize;
        let mut uf = UnionFind::new(n);
        let id = |i: u32, j: u32| j * cols + i;
        for e in 0..self.edge_count() {
            if bits[e >> 6] >> (e & 63) & 1 == 1 {
                continue;
            }
            if e < self.horizontal() {
                let (row, col) = (e as u32 / cols, e as u32 % cols);
                uf.union(id(col, row), id(col, row + 1));
            } else {
                let k = (e - self.horizontal()) as u32;
                let (row, col) = (k / self.width, k % self.width);
                if col > 0 && col < self.width - 1 {
                    uf.union(id(col - 1, row + 1), id(col, row + 1));
                }
            }
        }
        let top = self.height;
        (0..cols).any(|i| (0..cols).any(|k| uf.same(id(i, 0), id(k, top))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_rectangle_domain, Corner};
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn square() -> DobrushinDomain {
        build_rectangle_domain(2, 2, 1.0, Corner::SW, Corner::NE).unwrap()
    }

    #[test]
    fn forced_edges_follow_roles() {
        let d = square();
        let c = Configuration::all_closed(&d);
        for e in d.edges() {
            match d.role(e) {
                EdgeRole::Open => assert!(c.is_open(&d, e)),
                _ => assert!(!c.is_open(&d, e)),
            }
        }
        let c = Configuration::all_open(&d);
        assert_eq!(c.open_free_count(), d.free_edge_count());
    }

    #[test]
    fn enumeration_covers_everything_once() {
        let d = square();
        let all: Vec<_> = enumerate_configurations(&d, 24).unwrap().collect();
        assert_eq!(all.len(), 256);
        let distinct: std::collections::HashSet<_> = all.iter().map(|c| c.to_hex()).collect();
        assert_eq!(distinct.len(), 256);
        let big = build_rectangle_domain(6, 6, 1.0, Corner::SW, Corner::NE).unwrap();
        assert!(matches!(enumerate_configurations(&big, 24), Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn sampling_density() {
        let d = build_rectangle_domain(20, 20, 1.0, Corner::SW, Corner::NE).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        let mut open = 0;
        let trials = 200;
        for _ in 0..trials {
            open += sample_configuration(&d, 0.5, &mut rng).unwrap().open_free_count();
        }
        let n = (trials * d.free_edge_count()) as f64;
        let sigma = (0.25 / n).sqrt();
        assert!((open as f64 / n - 0.5).abs() < 5.0 * sigma);
        let c = sample_configuration(&d, 0.3, &mut rng).unwrap();
        assert!(c.open_free_count() < d.free_edge_count() / 2);
        assert!(sample_configuration(&d, 1.5, &mut rng).is_err());
    }

    #[test]
    fn hex_rejects_foreign_header() {
        let d = square();
        let other = build_rectangle_domain(2, 3, 1.0, Corner::SW, Corner::NE).unwrap();
        let text = Configuration::all_open(&d).to_hex();
        assert!(Configuration::from_hex(&other, &text).is_err());
        assert_eq!(Configuration::from_hex(&d, &text).unwrap(), Configuration::all_open(&d));
    }

    #[test]
    fn small_rectangle_crossing_is_exactly_half() {
        // Three columns by two rows of vertices: the dual is the same graph turned.
        let r = BondRectangle::new(3, 2).unwrap();
        let n = r.edge_count();
        assert_eq!(n, 7);
        let hits = (0..1u64 << n).filter(|&i| r.has_open_crossing(&[i])).count();
        assert_eq!(2 * hits, 1 << n);
    }

    #[test]
    fn open_and_dual_crossings_are_exclusive() {
        let r = BondRectangle::new(5, 4).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        for _ in 0..500 {
            let bits = r.sample(0.5, &mut rng);
            assert_ne!(r.has_open_crossing(&bits), r.has_dual_crossing(&bits));
        }
    }

    #[test]
    fn dual_crossing_on_domain() {
        let d = build_rectangle_domain(4, 4, 1.0, Corner::SW, Corner::NE).unwrap();
        let g = DomainGraph::new(&d);
        let h = d.mesh();
        let bottom = [Complex64::new(0.0, -0.5 * h), Complex64::new(4.0, -0.5 * h)];
        let top_inside = [Complex64::new(0.0, 3.5), Complex64::new(3.0, 3.5)];
        // Everything open: no dual edge is open.
        let open = Configuration::all_open(&d);
        assert!(!g.has_dual_crossing(&d, &open, &bottom, &top_inside).unwrap());
        // Close the column of horizontal edges at x = 1.5.
        let mut c = Configuration::all_open(&d);
        for (k, e) in d.free_edges().enumerate() {
            let p = d.centre(e);
            if p.x == 3 && p.y % 2 == 0 {
                c.set_free(k, false);
            }
        }
        assert!(g.has_dual_crossing(&d, &c, &bottom, &top_inside).unwrap());
        let labels = g.dual_clusters(&d, &c);
        let (lo, hi) = (g.dual_id(Pt::new(3, -1)).unwrap(), g.dual_id(Pt::new(3, 7)).unwrap());
        assert_eq!(labels[lo as usize], labels[hi as usize]);
    }

    proptest! {
        #[test]
        fn hex_round_trip(seed in any::<u64>(), cols in 1u32..7, rows in 1u32..7) {
            let d = build_rectangle_domain(cols, rows, 1.0, Corner::SW, Corner::NE).unwrap();
            let c = sample_configuration(&d, 0.5, &mut RngStream::new(seed, 0).rng()).unwrap();
            let back = Configuration::from_hex(&d, &c.to_hex()).unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn open_clusters_respect_open_edges(seed in any::<u64>()) {
            let d = build_rectangle_domain(5, 4, 1.0, Corner::SW, Corner::NE).unwrap();
            let g = DomainGraph::new(&d);
            let c = sample_configuration(&d, 0.5, &mut RngStream::new(seed, 1).rng()).unwrap();
            let labels = g.open_clusters(&d, &c);
            for e in d.edges() {
                let (u, v) = d.centre(e).primal_ends();
                let (u, v) = (g.primal_id(u).unwrap() as usize, g.primal_id(v).unwrap() as usize);
                if c.is_open(&d, e) {
                    prop_assert_eq!(labels[u], labels[v]);
                }
            }
        }
    }
}

//! Combinatorics of the d-dimensional cube with vertices as bitmasks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertex identifier: bit `i` is coordinate `i`.
pub type Vertex = u32;

/// Largest supported dimension.
pub const MAX_DIMENSION: u32 = 24;

/// Binomial coefficient C(n, k); zero when k > n.
pub fn binomial(n: u32, k: u32) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Hamming distance between two vertices.
#[inline]
pub fn distance(a: Vertex, b: Vertex) -> u32 {
    (a ^ b).count_ones()
}

/// Scatter the low bits of `bits` onto the set positions of `mask`.
#[inline]
fn deposit(mut bits: u32, mut mask: u32) -> u32 {
    let mut out = 0;
    while mask != 0 && bits != 0 {
        let low = mask & mask.wrapping_neg();
        if bits & 1 == 1 {
            out |= low;
        }
        bits >>= 1;
        mask &= mask - 1;
    }
    out
}

/// All subsets of `mask` with exactly `m` elements, in ascending numeric order.
pub fn subsets_of_size(mask: u32, m: u32) -> Vec<u32> {
    let k = mask.count_ones();
    if m > k {
        return Vec::new();
    }
    if m == 0 {
        return vec![0];
    }
    let mut out = Vec::with_capacity(binomial(k, m) as usize);
    let limit: u64 = 1u64 << k;
    let mut x: u64 = (1u64 << m) - 1;
    while x < limit {
        out.push(deposit(x as u32, mask));
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
    out
}

/// Canonical undirected edge: the endpoint with bit `dim` clear, plus `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId {
    pub lower: Vertex,
    pub dim: u32,
}

impl EdgeId {
    pub fn upper(&self) -> Vertex {
        self.lower | (1 << self.dim)
    }

    /// The endpoint opposite `x`.
    pub fn other(&self, x: Vertex) -> Vertex {
        x ^ (1 << self.dim)
    }
}

/// Sizes of layer `m` relative to a fixed vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSizes {
    pub vertices: u64,
    /// |E_m|, undefined for m = 0.
    pub edges: Option<u64>,
}

/// The cube Q^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cube {
    d: u32,
}

impl Cube {
    pub fn new(d: u32) -> Result<Cube> {
        if d == 0 || d > MAX_DIMENSION {
            return Err(Error::DimensionOutOfRange { d, max: MAX_DIMENSION });
        }
        Ok(Cube { d })
    }

    pub fn dim(&self) -> u32 {
        self.d
    }

    pub fn vertex_count(&self) -> usize {
        1usize << self.d
    }

    pub fn edge_count(&self) -> usize {
        (self.d as usize) << (self.d - 1)
    }

    /// Bitmask with all d coordinates set.
    pub fn full_mask(&self) -> u32 {
        if self.d == 32 {
            u32::MAX
        } else {
            (1u32 << self.d) - 1
        }
    }

    pub fn antipode(&self, x: Vertex) -> Vertex {
        x ^ self.full_mask()
    }

    pub fn check_vertex(&self, x: Vertex) -> Result<()> {
        if (x as u64) >> self.d != 0 {
            return Err(Error::VertexOutOfRange { vertex: x as u64, d: self.d });
        }
        Ok(())
    }

    /// The d neighbours of `x`, ascending by flipped coordinate.
    pub fn neighbors(&self, x: Vertex) -> Result<Vec<Vertex>> {
        self.check_vertex(x)?;
        Ok((0..self.d).map(|j| x ^ (1 << j)).collect())
    }

    pub fn layer_sizes(&self, m: u32) -> Result<LayerSizes> {
        if m > self.d {
            return Err(Error::LayerOutOfRange { m, d: self.d });
        }
        let v = binomial(self.d, m);
        Ok(LayerSizes { vertices: v, edges: (m > 0).then(|| m as u64 * v) })
    }

    /// For adjacent `u`, `v`: the d−1 pairs (w1, w2) with w1 = u⊕e_j and w2 = w1⊕(u⊕v),
    /// ascending in j. Each pair gives the 3-path u–w1–w2–v.
    pub fn neighborhood_matching(&self, u: Vertex, v: Vertex) -> Result<Vec<(Vertex, Vertex)>> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        let diff = u ^ v;
        if diff.count_ones() != 1 {
            return Err(Error::NotAdjacent { u, v });
        }
        Ok((0..self.d)
            .filter(|&j| (1 << j) != diff)
            .map(|j| {
                let w1 = u ^ (1 << j);
                (w1, w1 ^ diff)
            })
            .collect())
    }

    pub fn subcube(&self, u: Vertex, v: Vertex) -> Result<Subcube> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        if u == v {
            return Err(Error::SameVertex(u));
        }
        Ok(Subcube::spanning(u, v))
    }

    /// S_u(v): vertices of Q(u,v) at distance `ell` from `u`, ascending.
    pub fn boundary_set(&self, u: Vertex, v: Vertex, ell: u32) -> Result<Vec<Vertex>> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        let sub = Subcube::spanning(u, v);
        if ell > sub.k {
            return Err(Error::LayerOutOfRange { m: ell, d: sub.k });
        }
        Ok(sub.layer(ell))
    }

    /// V_m(u), ascending.
    pub fn layer_vertices(&self, u: Vertex, m: u32) -> Vec<Vertex> {
        subsets_of_size(self.full_mask(), m).into_iter().map(|s| s ^ u).collect()
    }

    /// Canonical edge between adjacent `a` and `b`.
    pub fn edge_between(&self, a: Vertex, b: Vertex) -> Result<EdgeId> {
        self.check_vertex(a)?;
        self.check_vertex(b)?;
        let diff = a ^ b;
        if diff.count_ones() != 1 {
            return Err(Error::NotAdjacent { u: a, v: b });
        }
        Ok(EdgeId { lower: a & !diff, dim: diff.trailing_zeros() })
    }

    /// Array index of an edge: dim·2^{d−1} + lower with bit `dim` squeezed out.
    #[inline]
    pub fn edge_index(&self, e: EdgeId) -> usize {
        let low = e.lower & ((1u32 << e.dim) - 1);
        let high = (e.lower >> (e.dim + 1)) << e.dim;
        ((e.dim as usize) << (self.d - 1)) | (low | high) as usize
    }

    /// Index of the edge joining `x` and `x ⊕ e_dim`.
    #[inline]
    pub fn edge_index_at(&self, x: Vertex, dim: u32) -> usize {
        self.edge_index(EdgeId { lower: x & !(1 << dim), dim })
    }

    #[inline]
    pub fn edge_at(&self, index: usize) -> EdgeId {
        let half = self.d - 1;
        let dim = (index >> half) as u32;
        let c = (index & ((1usize << half) - 1)) as u32;
        let low = c & ((1u32 << dim) - 1);
        let high = (c >> dim) << (dim + 1);
        EdgeId { lower: low | high, dim }
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edge_count()).map(move |i| self.edge_at(i))
    }

    /// Edge layer of `e` relative to `u`: m such that e joins V_{m−1}(u) and V_m(u).
    #[inline]
    pub fn edge_layer(&self, u: Vertex, e: EdgeId) -> u32 {
        distance(u, e.lower).max(distance(u, e.upper()))
    }
}

/// The face Q(u,v): all sets containing u∩v and contained in u∪v.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subcube {
    pub u: Vertex,
    pub v: Vertex,
    pub k: u32,
    pub fixed_bits: u32,
    pub free_bits: u32,
}

impl Subcube {
    pub fn spanning(u: Vertex, v: Vertex) -> Subcube {
        let free = u ^ v;
        Subcube { u, v, k: free.count_ones(), fixed_bits: u & v, free_bits: free }
    }

    /// Membership: agrees with `u` outside the free coordinates.
    #[inline]
    pub fn contains(&self, x: Vertex) -> bool {
        (x ^ self.u) & !self.free_bits == 0
    }

    pub fn vertex_count(&self) -> u64 {
        1u64 << self.k
    }

    /// Distance from `u` for a member vertex.
    #[inline]
    pub fn layer_of(&self, x: Vertex) -> u32 {
        ((x ^ self.u) & self.free_bits).count_ones()
    }

    /// Members at distance `m` from `u`, ascending by the flipped-bit set.
    pub fn layer(&self, m: u32) -> Vec<Vertex> {
        subsets_of_size(self.free_bits, m).into_iter().map(|s| s ^ self.u).collect()
    }

    pub fn vertices(&self) -> Vec<Vertex> {
        (0..=self.k).flat_map(|m| self.layer(m)).collect()
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        self.free_bits & (1 << e.dim) != 0 && self.contains(e.lower)
    }

    /// Edge layer within the face, if `e` lies in it.
    pub fn edge_layer(&self, e: EdgeId) -> Option<u32> {
        self.contains_edge(e).then(|| self.layer_of(e.lower).max(self.layer_of(e.upper())))
    }

    /// Coordinates that are free, ascending.
    pub fn free_dims(&self) -> Vec<u32> {
        (0..32).filter(|&j| self.free_bits & (1 << j) != 0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_examples() {
        let c = Cube::new(3).unwrap();
        assert_eq!(c.neighbors(0b000).unwrap(), vec![0b001, 0b010, 0b100]);
        assert_eq!(Cube::new(1).unwrap().neighbors(0).unwrap(), vec![1]);
        let c4 = Cube::new(4).unwrap();
        assert_eq!(c4.neighbors(0b0101).unwrap(), vec![0b0100, 0b0111, 0b0001, 0b1101]);
        assert!(c.neighbors(8).is_err());
    }

    #[test]
    fn dimension_cap() {
        assert!(Cube::new(0).is_err());
        assert!(Cube::new(25).is_err());
        assert!(Cube::new(24).is_ok());
    }

    #[test]
    fn layer_size_examples() {
        let c4 = Cube::new(4).unwrap();
        assert_eq!(c4.layer_sizes(2).unwrap(), LayerSizes { vertices: 6, edges: Some(12) });
        let c3 = Cube::new(3).unwrap();
        assert_eq!(c3.layer_sizes(0).unwrap(), LayerSizes { vertices: 1, edges: None });
        let c16 = Cube::new(16).unwrap();
        assert_eq!(c16.layer_sizes(8).unwrap(), LayerSizes { vertices: 12870, edges: Some(102960) });
        assert!(c3.layer_sizes(4).is_err());
    }

    #[test]
    fn matching_examples() {
        let c3 = Cube::new(3).unwrap();
        assert_eq!(c3.neighborhood_matching(0, 1).unwrap(), vec![(0b010, 0b011), (0b100, 0b101)]);
        let c2 = Cube::new(2).unwrap();
        assert_eq!(c2.neighborhood_matching(0, 1).unwrap(), vec![(0b10, 0b11)]);
        let c4 = Cube::new(4).unwrap();
        let m = c4.neighborhood_matching(0, 0b1000).unwrap();
        assert_eq!(m.len(), 3);
        for (w1, w2) in m {
            assert_eq!(w2, w1 | 0b1000);
        }
        assert!(c3.neighborhood_matching(0, 3).is_err());
    }

    #[test]
    fn subcube_examples() {
        let c4 = Cube::new(4).unwrap();
        let s = c4.subcube(0, 0b0110).unwrap();
        assert_eq!(s.k, 2);
        let mut vs = s.vertices();
        vs.sort();
        assert_eq!(vs, vec![0b0000, 0b0010, 0b0100, 0b0110]);
        let s3 = Cube::new(3).unwrap().subcube(0, 7).unwrap();
        assert_eq!(s3.k, 3);
        assert_eq!(s3.vertex_count(), 8);
        let s5 = Cube::new(5).unwrap().subcube(0b00001, 0b11001).unwrap();
        assert_eq!((s5.k, s5.fixed_bits), (2, 0b00001));
        assert!(c4.subcube(3, 3).is_err());
    }

    #[test]
    fn boundary_examples() {
        let c4 = Cube::new(4).unwrap();
        let mut b = c4.boundary_set(0, 0b1110, 1).unwrap();
        b.sort();
        assert_eq!(b, vec![0b0010, 0b0100, 0b1000]);
        assert_eq!(c4.boundary_set(5, 0b1110, 0).unwrap(), vec![5]);
        assert_eq!(Cube::new(6).unwrap().boundary_set(0, 63, 2).unwrap().len(), 15);
        assert!(c4.boundary_set(0, 0b1110, 4).is_err());
    }

    #[test]
    fn edge_index_roundtrip() {
        for d in 1..=8 {
            let c = Cube::new(d).unwrap();
            let mut seen = vec![false; c.edge_count()];
            for x in 0..c.vertex_count() as u32 {
                for j in 0..d {
                    let e = c.edge_between(x, x ^ (1 << j)).unwrap();
                    let i = c.edge_index(e);
                    assert_eq!(c.edge_at(i), e);
                    assert_eq!(c.edge_index_at(x, j), i);
                    seen[i] = true;
                }
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn subsets_enumeration_counts() {
        for k in 0..=10u32 {
            let mask = (1u32 << k) - 1;
            for m in 0..=k {
                let s = subsets_of_size(mask << 3, m);
                assert_eq!(s.len() as u64, binomial(k, m));
                assert!(s.windows(2).all(|w| w[0] < w[1]));
                assert!(s.iter().all(|x| x.count_ones() == m && x & !(mask << 3) == 0));
            }
        }
    }
}

//! Hermite tensor basis, Gauss–Hermite quadrature and assembly of
//! quasi-periodic potentials into Fourier-indexed block matrices.

mod hermite;
mod potential;
mod quadrature;

pub use hermite::{hermite_deriv2_by_recurrence, hermite_fn, hermite_fns, hermite_tensor_eval};
pub use potential::{
    assemble_potential_matrix, AssemblyReport, ClosedForm, PotentialSpec, PotentialTerm,
    QuadOptions, ThetaProfile, XProfile,
};
pub use quadrature::{gauss_hermite_rule, GaussHermiteRule};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("dimension d must be at least 1")]
    ZeroDimension,
    #[error("w_max = {w_max} is below the minimal weight d = {d}")]
    WMaxTooSmall { d: usize, w_max: u32 },
    #[error("Hermite index {0} is not a positive odd integer")]
    BadIndex(u32),
    #[error("quadrature order {0} outside the supported range 1..=700")]
    QuadOrder(usize),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("basis of dimension {got} does not match potential dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
}

/// A multi-index `(i_1, ..., i_d)` of odd positive integers; its weight
/// `j = Σ i_m` is the unperturbed eigenvalue of `-Δ + |x|²`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisIndex {
    pub tuple: Vec<u32>,
}

impl BasisIndex {
    pub fn weight(&self) -> u32 {
        self.tuple.iter().sum()
    }
}

/// Contiguous range of basis positions sharing one weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cluster {
    pub weight: u32,
    pub start: usize,
    pub len: usize,
}

impl Cluster {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Truncated Hermite basis `{Φ_a : w_a ≤ w_max}` ordered by weight, then
/// lexicographically inside a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    d: usize,
    w_max: u32,
    indices: Vec<BasisIndex>,
    clusters: Vec<Cluster>,
    cluster_of: Vec<usize>,
}

impl BasisSet {
    pub fn d(&self) -> usize {
        self.d
    }
    /// Largest weight actually present (same parity as `d`).
    pub fn w_max(&self) -> u32 {
        self.w_max
    }
    pub fn dim(&self) -> usize {
        self.indices.len()
    }
    pub fn indices(&self) -> &[BasisIndex] {
        &self.indices
    }
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }
    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }
    pub fn cluster_of(&self, pos: usize) -> usize {
        self.cluster_of[pos]
    }
    pub fn weight(&self, pos: usize) -> u32 {
        self.clusters[self.cluster_of[pos]].weight
    }
    pub fn weights(&self) -> Vec<f64> {
        (0..self.dim()).map(|p| self.weight(p) as f64).collect()
    }
    /// Largest one-dimensional Hermite index occurring in the basis.
    pub fn max_index(&self) -> u32 {
        self.indices.iter().flat_map(|b| b.tuple.iter().copied()).max().unwrap_or(1)
    }
    pub fn position(&self, idx: &BasisIndex) -> Option<usize> {
        let c = self.clusters.iter().find(|c| c.weight == idx.weight())?;
        self.indices[c.range()].binary_search(idx).ok().map(|p| p + c.start)
    }
}

/// Enumerate the basis up to weight `w_max`. A `w_max` of the wrong parity
/// is rounded down to the nearest admissible weight.
pub fn enumerate_basis(d: usize, w_max: u32) -> Result<BasisSet, BasisError> {
    if d == 0 {
        return Err(BasisError::ZeroDimension);
    }
    if (w_max as usize) < d {
        return Err(BasisError::WMaxTooSmall { d, w_max });
    }
    let w_max = if (w_max as usize - d) % 2 == 1 { w_max - 1 } else { w_max };
    let mut indices = Vec::new();
    let mut clusters = Vec::new();
    let mut cluster_of = Vec::new();
    let mut j = d as u32;
    while j <= w_max {
        let start = indices.len();
        let mut tuple = Vec::with_capacity(d);
        odd_compositions(j, d, &mut tuple, &mut indices);
        let len = indices.len() - start;
        cluster_of.extend(std::iter::repeat_n(clusters.len(), len));
        clusters.push(Cluster { weight: j, start, len });
        j += 2;
    }
    Ok(BasisSet { d, w_max, indices, clusters, cluster_of })
}

fn odd_compositions(rest: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<BasisIndex>) {
    if parts == 1 {
        if rest % 2 == 1 {
            prefix.push(rest);
            out.push(BasisIndex { tuple: prefix.clone() });
            prefix.pop();
        }
        return;
    }
    let mut first = 1;
    while first + (parts as u32 - 1) <= rest {
        prefix.push(first);
        odd_compositions(rest - first, parts - 1, prefix, out);
        prefix.pop();
        first += 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d1_has_one_index_per_odd_weight() {
        let b = enumerate_basis(1, 41).unwrap();
        assert_eq!(b.dim(), 21);
        assert!(b.clusters().iter().all(|c| c.len == 1));
        assert_eq!(b.weight(20), 41);
    }

    #[test]
    fn d2_small_clusters() {
        let b = enumerate_basis(2, 6).unwrap();
        let sizes: Vec<_> = b.clusters().iter().map(|c| (c.weight, c.len)).collect();
        assert_eq!(sizes, vec![(2, 1), (4, 2), (6, 3)]);
        assert_eq!(b.indices()[1].tuple, vec![1, 3]);
        assert_eq!(b.indices()[2].tuple, vec![3, 1]);
    }

    #[test]
    fn wrong_parity_rounds_down() {
        let b = enumerate_basis(1, 8).unwrap();
        assert_eq!(b.w_max(), 7);
        assert!(matches!(enumerate_basis(3, 2), Err(BasisError::WMaxTooSmall { .. })));
        assert!(matches!(enumerate_basis(0, 5), Err(BasisError::ZeroDimension)));
    }

    #[test]
    fn position_roundtrip() {
        let b = enumerate_basis(3, 11).unwrap();
        for (p, idx) in b.indices().iter().enumerate() {
            assert_eq!(b.position(idx), Some(p));
        }
    }
}

use crate::linalg::CMatrix;
use crate::{Error, Real, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Subset `I ⊆ {0..n}` selecting which coordinates of a chart are `q`'s.
///
/// Members are 0-based and sorted; a chart over `I` uses the mixed
/// coordinates `y_j = q_j` for `j ∈ I` and `y_j = p_j` otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSet {
    n: usize,
    members: Vec<usize>,
}

impl IndexSet {
    pub fn new(n: usize, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.iter().any(|&j| j >= n) {
            return Err(Error::InvalidInput(format!("index set member out of range 0..{}", n)));
        }
        Ok(Self { n, members })
    }

    /// The full set: a pure `q`-chart.
    pub fn full(n: usize) -> Self {
        Self { n, members: (0..n).collect() }
    }

    /// The empty set: a pure `p`-chart.
    pub fn empty(n: usize) -> Self {
        Self { n, members: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn complement(&self) -> Vec<usize> {
        (0..self.n).filter(|j| !self.contains(*j)).collect()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.binary_search(&j).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Size of the complement `|Ī|`.
    pub fn co_len(&self) -> usize {
        self.n - self.members.len()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() == self.n
    }

    /// All subsets of `{0..n}` in lexicographic order of their sorted members.
    pub fn all_subsets(n: usize) -> Vec<IndexSet> {
        let mut out: Vec<IndexSet> =
            (0u64..(1u64 << n)).map(|mask| IndexSet { n, members: (0..n).filter(|j| mask & (1 << j) != 0).collect() }).collect();
        out.sort_by(|a, b| a.members.cmp(&b.members));
        out
    }

    /// Mixed chart coordinates `y` of a phase point `(p, q)`.
    pub fn chart_coords<T: Real>(&self, point: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n).map(|j| if self.contains(j) { point[n + j] } else { point[j] }).collect()
    }

    /// Complementary coordinates `w = (p_I, q_Ī)` of a phase point.
    pub fn fiber_coords<T: Real>(&self, point: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n).map(|j| if self.contains(j) { point[j] } else { point[n + j] }).collect()
    }

    /// Phase point `(p, q)` from chart coordinates `y` and fiber coordinates `w`.
    pub fn join<T: Real>(&self, y: &[T], w: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); 2 * n];
        for j in 0..n {
            if self.contains(j) {
                out[n + j] = y[j];
                out[j] = w[j];
            } else {
                out[j] = y[j];
                out[n + j] = w[j];
            }
        }
        out
    }

    /// Symplectic rotation `γ_I`: `(p_I, q_I)` fixed, `(p_Ī, q_Ī) ↦ (−q_Ī, p_Ī)`.
    ///
    /// Afterwards the chart is a pure `q`-chart in the new coordinates.
    pub fn gamma<T: Real>(&self, point: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = point.to_vec();
        for j in self.complement() {
            out[j] = -point[n + j];
            out[n + j] = point[j];
        }
        out
    }

    pub fn gamma_inverse<T: Real>(&self, point: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = point.to_vec();
        for j in self.complement() {
            out[j] = point[n + j];
            out[n + j] = -point[j];
        }
        out
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.members.iter().map(|j| (j + 1).to_string()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Picks the index set maximizing `|det ∂(Q_I, P_Ī)/∂α|` over all subsets.
///
/// `dp` and `dq` are the `n×m` Jacobians of `P` and `Q` at a point of `Γ`.
/// Ties keep the lexicographically smallest set.
pub fn select_nonsingular_index<T: Real>(dp: &CMatrix<T>, dq: &CMatrix<T>) -> Result<IndexSet> {
    let n = dp.rows();
    if dq.rows() != n || dp.cols() != dq.cols() {
        return Err(Error::InvalidInput("dP and dQ must have equal shapes".into()));
    }
    if dp.cols() != n {
        return Err(Error::InvalidInput("Lagrangian charts need m = n parameters".into()));
    }
    if n > 12 {
        return Err(Error::InvalidInput("exhaustive index selection is limited to n ≤ 12".into()));
    }
    let mut best: Option<(T, IndexSet)> = None;
    for set in IndexSet::all_subsets(n) {
        let m = CMatrix::from_fn(n, n, |i, k| if set.contains(i) { dq[(i, k)] } else { dp[(i, k)] });
        let v = m.det().norm();
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, set));
        }
    }
    let (v, set) = best.expect("at least one subset");
    if !(v > T::lit(1e-12)) {
        return Err(Error::DegenerateChart("no index set gives a nonsingular chart".into()));
    }
    Ok(set)
}

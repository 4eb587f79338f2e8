use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Sparse vector in coordinate form. Indices need not be sorted but must be
/// unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut out = Self::new();
        for (i, v) in pairs {
            out.push(i, v);
        }
        out
    }

    /// Keeps the nonzero entries of `dense`, offset by `start`.
    pub fn from_dense(dense: &[f64], start: usize) -> Self {
        Self::from_pairs(
            dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (start + i, *v)),
        )
    }

    pub fn push(&mut self, i: usize, v: f64) {
        self.idx.push(i);
        self.val.push(v);
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn dot(&self, z: &DVector<f64>) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * z[i]).sum()
    }

    /// `out += alpha * self`
    pub fn axpy_into(&self, alpha: f64, out: &mut DVector<f64>) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i] += alpha * v;
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        self.idx.iter().copied().max()
    }
}

/// One term `coef · ‖mat · z[cols] + offset‖₂` of a cone row.
#[derive(Clone, Debug, PartialEq)]
pub struct NormAtom {
    pub coef: f64,
    pub cols: Vec<usize>,
    pub mat: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl NormAtom {
    pub fn new(coef: f64, cols: Vec<usize>, mat: DMatrix<f64>, offset: DVector<f64>) -> Self {
        Self {
            coef,
            cols,
            mat,
            offset,
        }
    }

    /// Dense-column constructor: keeps only the columns of `mat` with a
    /// nonzero entry.
    pub fn from_dense(coef: f64, mat: &DMatrix<f64>, offset: DVector<f64>) -> Self {
        let cols: Vec<usize> = (0..mat.ncols())
            .filter(|&j| mat.column(j).iter().any(|v| *v != 0.0))
            .collect();
        let sub = mat.select_columns(cols.iter());
        Self::new(coef, cols, sub, offset)
    }

    pub fn rows(&self) -> usize {
        self.mat.nrows()
    }

    /// The affine image `M z + m`.
    pub fn image(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = self.offset.clone();
        for (c, &j) in self.cols.iter().enumerate() {
            let zj = z[j];
            if zj != 0.0 {
                out.axpy(zj, &self.mat.column(c), 1.0);
            }
        }
        out
    }

    /// `out[cols] += Mᵀ y`
    pub fn transpose_apply_into(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        for (c, &j) in self.cols.iter().enumerate() {
            out[j] += self.mat.column(c).dot(y);
        }
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.coef * self.image(z).norm()
    }
}

/// `linearᵀ z + constant + Σ coef·‖M z + m‖₂ ≤ 0`
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConeRow {
    pub linear: SparseVec,
    pub constant: f64,
    pub atoms: Vec<NormAtom>,
}

impl ConeRow {
    pub fn linear(linear: SparseVec, constant: f64) -> Self {
        Self {
            linear,
            constant,
            atoms: Vec::new(),
        }
    }

    pub fn with_atom(mut self, atom: NormAtom) -> Self {
        self.atoms.push(atom);
        self
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.linear.dot(z) + self.constant + self.atoms.iter().map(|a| a.value(z)).sum::<f64>()
    }
}

/// Convex program with a quadratic objective `½ zᵀPz + qᵀz + constant`,
/// linear equalities and sum-of-norms inequality rows.
///
/// `P` is kept as upper-triangular triplets `(i, j, v)` with `i <= j`; an
/// off-diagonal triplet stands for both `P_ij` and `P_ji`.
#[derive(Clone, Debug)]
pub struct ConeProgram {
    dim: usize,
    pub(crate) p_upper: Vec<(usize, usize, f64)>,
    pub(crate) q: DVector<f64>,
    pub(crate) constant: f64,
    pub(crate) eq_rows: Vec<SparseVec>,
    pub(crate) eq_rhs: Vec<f64>,
    pub(crate) rows: Vec<ConeRow>,
}

impl ConeProgram {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            p_upper: Vec::new(),
            q: DVector::zeros(dim),
            constant: 0.0,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `v` to `P_ij` (and `P_ji`).
    pub fn add_quadratic(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.p_upper.push((a, b, v));
    }

    /// Adds the dense symmetric block `block` to `P` at rows/cols
    /// `offset..offset + block.nrows()`.
    pub fn add_quadratic_block(&mut self, offset: usize, block: &DMatrix<f64>) {
        for i in 0..block.nrows() {
            for j in i..block.ncols() {
                let v = 0.5 * (block[(i, j)] + block[(j, i)]);
                if v != 0.0 {
                    self.add_quadratic(offset + i, offset + j, v);
                }
            }
        }
    }

    pub fn set_linear_objective(&mut self, q: DVector<f64>) {
        self.q = q;
    }

    pub fn add_linear_objective(&mut self, i: usize, v: f64) {
        self.q[i] += v;
    }

    pub fn set_constant(&mut self, c: f64) {
        self.constant = c;
    }

    pub fn add_equality(&mut self, row: SparseVec, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_row(&mut self, row: ConeRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[ConeRow] {
        &self.rows
    }

    pub fn equalities(&self) -> impl Iterator<Item = (&SparseVec, f64)> {
        self.eq_rows.iter().zip(self.eq_rhs.iter().copied())
    }

    pub fn n_equalities(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn linear_objective(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn quadratic_triplets(&self) -> &[(usize, usize, f64)] {
        &self.p_upper
    }

    pub fn n_atoms(&self) -> usize {
        self.rows.iter().map(|r| r.atoms.len()).sum()
    }

    /// `P z`
    pub fn p_apply(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for &(i, j, v) in &self.p_upper {
            out[i] += v * z[j];
            if i != j {
                out[j] += v * z[i];
            }
        }
        out
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&self.p_apply(z)) + self.q.dot(z) + self.constant
    }

    pub fn p_dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.p_upper {
            p[(i, j)] += v;
            if i != j {
                p[(j, i)] += v;
            }
        }
        p
    }

    /// Checks the structural invariants: indices in range, finite data,
    /// nonnegative atom coefficients, consistent atom shapes, and (for
    /// programs small enough to afford an eigen-decomposition) `P ⪰ 0`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.q.len() != d {
            return bad(format!("q has length {}, expected {d}", self.q.len()));
        }
        for &(i, j, v) in &self.p_upper {
            if i >= d || j >= d || !v.is_finite() {
                return bad(format!("P entry ({i}, {j}) = {v} out of range or non-finite"));
            }
        }
        for (r, (row, rhs)) in self.equalities().enumerate() {
            if row.max_index().is_some_and(|m| m >= d) || !rhs.is_finite() {
                return bad(format!("equality {r} out of range or non-finite"));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.linear.max_index().is_some_and(|m| m >= d) || !row.constant.is_finite() {
                return bad(format!("cone row {r}: linear part out of range or non-finite"));
            }
            for atom in &row.atoms {
                if !(atom.coef >= 0.0) || !atom.coef.is_finite() {
                    return bad(format!("cone row {r}: negative or non-finite atom coefficient"));
                }
                if atom.mat.ncols() != atom.cols.len() || atom.mat.nrows() != atom.offset.len() {
                    return bad(format!("cone row {r}: atom shape mismatch"));
                }
                if atom.cols.iter().any(|&j| j >= d) {
                    return bad(format!("cone row {r}: atom column out of range"));
                }
                if !linalg::all_finite(&atom.mat) || atom.offset.iter().any(|v| !v.is_finite()) {
                    return bad(format!("cone row {r}: non-finite atom data"));
                }
            }
        }
        if d <= 300 && !self.p_upper.is_empty() && !linalg::is_psd(&self.p_dense()) {
            return bad("objective matrix P is not positive semidefinite".into());
        }
        Ok(())
    }
}

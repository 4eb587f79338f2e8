//! Symmetric matrices in profile (envelope) storage and their LDLᵀ
//! factorization without pivoting.
//!
//! Row `i` stores columns `first[i]..=i`. Fill-in during factorization
//! stays inside the envelope, so an ordering that keeps each row's
//! neighbours contiguous (a post-order for tree-structured problems) makes
//! the factorization cost proportional to the envelope rather than `n³`.

use nalgebra::DVector;

#[derive(Clone, Debug)]
pub struct ProfileMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl ProfileMatrix {
    /// `first[i] <= i` is the leftmost structurally nonzero column of row `i`.
    pub fn with_envelope(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut at = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(at);
            at += i - f + 1;
        }
        start.push(at);
        Self {
            first,
            start,
            data: vec![0.0; at],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.data.len()
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(c >= self.first[r], "entry ({r}, {c}) outside envelope");
        self.start[r] + (c - self.first[r])
    }

    /// Adds `v` to the symmetric pair `(i, j)`/`(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            0.0
        } else {
            self.data[self.slot(r, c)]
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let f = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let mut acc = 0.0;
            for (c, &a) in row[..row.len() - 1].iter().enumerate() {
                let j = f + c;
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc + row[row.len() - 1] * x[i];
        }
        y
    }
}

/// Four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// `L D Lᵀ` factors in the same envelope; the diagonal slot holds `D`.
#[derive(Clone, Debug)]
pub struct ProfileLdl {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
    /// Pivots that had to be pushed away from zero.
    pub bumped: usize,
}

impl ProfileLdl {
    /// Factors `m`. `signs[i]` is the expected sign of pivot `i` (quasi-definite
    /// matrices have a fixed sign pattern); pivots of the wrong sign or with
    /// magnitude below `min_pivot` are replaced by `signs[i] * min_pivot`.
    pub fn factor(m: &ProfileMatrix, signs: &[f64], min_pivot: f64) -> Self {
        let n = m.dim();
        let first = m.first.clone();
        let start = m.start.clone();
        let mut data = m.data.clone();
        let mut bumped = 0;
        // scratch: t_k = L_ik D_k for the row being built
        let mut t = vec![0.0; n];
        for i in 0..n {
            let fi = first[i];
            let si = start[i];
            for j in fi..i {
                let fj = first[j];
                let sj = start[j];
                let k0 = fi.max(fj);
                let acc = data[si + (j - fi)] - dot(&t[k0..j], &data[sj + (k0 - fj)..sj + (j - fj)]);
                t[j] = acc;
                let dj = data[sj + (j - fj)];
                data[si + (j - fi)] = acc / dj;
            }
            let mut d = data[si + (i - fi)] - dot(&t[fi..i], &data[si..si + (i - fi)]);
            let s = signs[i];
            if !(d * s >= min_pivot) {
                d = s * min_pivot;
                bumped += 1;
            }
            data[si + (i - fi)] = d;
        }
        Self {
            first,
            start,
            data,
            bumped,
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.first.len();
        let mut y = b.clone();
        // L y = b
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let mut acc = y[i];
            for (c, &l) in row[..row.len() - 1].iter().enumerate() {
                acc -= l * y[fi + c];
            }
            y[i] = acc;
        }
        for i in 0..n {
            y[i] /= self.data[self.start[i + 1] - 1];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let xi = y[i];
            for (c, &l) in row[..row.len() - 1].iter().enumerate() {
                y[fi + c] -= l * xi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn to_profile(a: &DMatrix<f64>) -> ProfileMatrix {
        let n = a.nrows();
        let first: Vec<usize> = (0..n)
            .map(|i| (0..=i).find(|&j| a[(i, j)] != 0.0).unwrap_or(i))
            .collect();
        let mut m = ProfileMatrix::with_envelope(first);
        for i in 0..n {
            for j in 0..=i {
                if a[(i, j)] != 0.0 {
                    m.add(i, j, a[(i, j)]);
                }
            }
        }
        m
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [H Aᵀ; A -δ] with H SPD (banded) and one equality row
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[4.0, 1.0, 0.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.0, 0.5, 2.0, 0.3, 0.0, 0.0, 0.3, 1.0],
        );
        let mut k = DMatrix::zeros(5, 5);
        k.view_mut((0, 0), (4, 4)).copy_from(&h);
        let a = [1.0, 0.0, 2.0, -1.0];
        for j in 0..4 {
            k[(4, j)] = a[j];
            k[(j, 4)] = a[j];
        }
        k[(4, 4)] = -1e-12;
        let m = to_profile(&k);
        assert!(m.stored() < 15);
        let f = ProfileLdl::factor(&m, &[1.0, 1.0, 1.0, 1.0, -1.0], 1e-14);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.25]);
        let x = f.solve(&b);
        assert!((&k * &x - &b).amax() < 1e-9);
        assert!((m.mul_vec(&x) - &k * &x).amax() < 1e-12);
    }
}

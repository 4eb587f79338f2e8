//! Nonnegative orthant and second-order cone primitives: Jordan algebra,
//! Nesterov–Todd scaling and step-to-boundary.

use nalgebra::DVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeKind {
    Nonneg(usize),
    /// `{(t, v) : ‖v‖₂ ≤ t}` of total dimension `dim`.
    Soc(usize),
}

impl ConeKind {
    pub fn dim(&self) -> usize {
        match *self {
            ConeKind::Nonneg(n) | ConeKind::Soc(n) => n,
        }
    }

    pub fn degree(&self) -> usize {
        match *self {
            ConeKind::Nonneg(n) => n,
            ConeKind::Soc(_) => 1,
        }
    }
}

/// Cone blocks laid out back to back in one vector.
#[derive(Clone, Debug, Default)]
pub struct ConeSet {
    pub blocks: Vec<(ConeKind, usize)>,
    pub dim: usize,
}

impl ConeSet {
    pub fn new(kinds: &[ConeKind]) -> Self {
        let mut blocks = Vec::with_capacity(kinds.len());
        let mut at = 0;
        for &k in kinds {
            if k.dim() == 0 {
                continue;
            }
            blocks.push((k, at));
            at += k.dim();
        }
        Self { blocks, dim: at }
    }

    pub fn degree(&self) -> usize {
        self.blocks.iter().map(|(k, _)| k.degree()).sum()
    }

    /// `v += alpha · e` with `e` the identity element of the product cone.
    pub fn add_identity(&self, v: &mut DVector<f64>, alpha: f64) {
        for &(k, at) in &self.blocks {
            match k {
                ConeKind::Nonneg(n) => {
                    for i in at..at + n {
                        v[i] += alpha;
                    }
                }
                ConeKind::Soc(_) => v[at] += alpha,
            }
        }
    }

    /// Moves `v` into the interior when it is not already well inside.
    pub fn shift_interior(&self, v: &mut DVector<f64>) {
        for &(k, at) in &self.blocks {
            let b = &mut v.as_mut_slice()[at..at + k.dim()];
            match k {
                ConeKind::Nonneg(_) => {
                    let m = b.iter().copied().fold(f64::INFINITY, f64::min);
                    if m < 1e-8 {
                        b.iter_mut().for_each(|x| *x += 1.0 - m);
                    }
                }
                ConeKind::Soc(_) => {
                    let m = b[0] - norm(&b[1..]);
                    if m < 1e-8 {
                        b[0] += 1.0 - m;
                    }
                }
            }
        }
    }

    /// Jordan product `u ∘ v`.
    pub fn jordan(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for &(k, at) in &self.blocks {
            let n = k.dim();
            let (ub, vb) = (&u.as_slice()[at..at + n], &v.as_slice()[at..at + n]);
            let ob = &mut out.as_mut_slice()[at..at + n];
            match k {
                ConeKind::Nonneg(_) => {
                    for i in 0..n {
                        ob[i] = ub[i] * vb[i];
                    }
                }
                ConeKind::Soc(_) => {
                    ob[0] = dot(ub, vb);
                    for i in 1..n {
                        ob[i] = ub[0] * vb[i] + vb[0] * ub[i];
                    }
                }
            }
        }
        out
    }

    /// Solves `λ ∘ x = ξ` for `x`.
    pub fn jordan_div(&self, lambda: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for &(k, at) in &self.blocks {
            let n = k.dim();
            let (lb, xb) = (&lambda.as_slice()[at..at + n], &xi.as_slice()[at..at + n]);
            let ob = &mut out.as_mut_slice()[at..at + n];
            match k {
                ConeKind::Nonneg(_) => {
                    for i in 0..n {
                        ob[i] = xb[i] / lb[i];
                    }
                }
                ConeKind::Soc(_) => {
                    let l0 = lb[0];
                    let det = l0 * l0 - dot(&lb[1..], &lb[1..]);
                    let lx = dot(&lb[1..], &xb[1..]);
                    let x0 = (l0 * xb[0] - lx) / det;
                    ob[0] = x0;
                    for i in 1..n {
                        ob[i] = (xb[i] - x0 * lb[i]) / l0;
                    }
                }
            }
        }
        out
    }

    /// Largest `α ∈ [0, cap]` keeping `v + α dv` in the cone.
    pub fn max_step(&self, v: &DVector<f64>, dv: &DVector<f64>, cap: f64) -> f64 {
        let mut alpha = cap;
        for &(k, at) in &self.blocks {
            let n = k.dim();
            let (vb, db) = (&v.as_slice()[at..at + n], &dv.as_slice()[at..at + n]);
            match k {
                ConeKind::Nonneg(_) => {
                    for i in 0..n {
                        if db[i] < 0.0 {
                            alpha = alpha.min(-vb[i] / db[i]);
                        }
                    }
                }
                ConeKind::Soc(_) => alpha = alpha.min(soc_step(vb, db, cap)),
            }
        }
        alpha.max(0.0)
    }
}

fn soc_step(v: &[f64], d: &[f64], cap: f64) -> f64 {
    let a = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let b = 2.0 * (v[0] * d[0] - dot(&v[1..], &d[1..]));
    let c = (v[0] * v[0] - dot(&v[1..], &v[1..])).max(0.0);
    let mut alpha = cap;
    if d[0] < 0.0 {
        alpha = alpha.min(-v[0] / d[0]);
    }
    // smallest positive root of a α² + b α + c
    let scale = a.abs().max(b.abs()).max(c.abs()).max(f64::MIN_POSITIVE);
    if a.abs() <= 1e-14 * scale {
        if b < 0.0 {
            alpha = alpha.min(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let qv = -0.5 * (b + b.signum() * sq);
            let mut roots = [qv / a, if qv != 0.0 { c / qv } else { f64::INFINITY }];
            roots.sort_by(|x, y| x.total_cmp(y));
            if let Some(r) = roots.iter().find(|r| **r > 0.0) {
                alpha = alpha.min(*r);
            }
        }
    }
    alpha
}

/// Nesterov–Todd scaling `W` with `W z = W⁻¹ s = λ`, one factor per block.
#[derive(Clone, Debug)]
pub enum BlockScaling {
    /// `W = diag(sqrt(s / z))`
    Nonneg(Vec<f64>),
    /// `W = η [w₀ w₁ᵀ; w₁ I + w₁w₁ᵀ/(1 + w₀)]`
    Soc { eta: f64, w: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct Scaling {
    pub blocks: Vec<BlockScaling>,
    pub lambda: DVector<f64>,
}

impl Scaling {
    pub fn compute(cones: &ConeSet, s: &DVector<f64>, z: &DVector<f64>) -> Self {
        let mut blocks = Vec::with_capacity(cones.blocks.len());
        for &(k, at) in &cones.blocks {
            let n = k.dim();
            let (sb, zb) = (&s.as_slice()[at..at + n], &z.as_slice()[at..at + n]);
            blocks.push(match k {
                ConeKind::Nonneg(_) => {
                    BlockScaling::Nonneg(sb.iter().zip(zb).map(|(s, z)| (s / z).sqrt()).collect())
                }
                ConeKind::Soc(_) => {
                    let sres = (sb[0] * sb[0] - dot(&sb[1..], &sb[1..])).max(f64::MIN_POSITIVE);
                    let zres = (zb[0] * zb[0] - dot(&zb[1..], &zb[1..])).max(f64::MIN_POSITIVE);
                    let (ss, zs) = (sres.sqrt(), zres.sqrt());
                    let sbar: Vec<f64> = sb.iter().map(|v| v / ss).collect();
                    let zbar: Vec<f64> = zb.iter().map(|v| v / zs).collect();
                    let gamma = ((1.0 + dot(&sbar, &zbar)) * 0.5).sqrt();
                    let mut w = vec![0.0; n];
                    w[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                    for i in 1..n {
                        w[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
                    }
                    BlockScaling::Soc {
                        eta: (sres / zres).sqrt().sqrt(),
                        w,
                    }
                }
            });
        }
        let mut out = Self {
            blocks,
            lambda: DVector::zeros(cones.dim),
        };
        out.lambda = out.apply_w(cones, z);
        out
    }

    pub fn apply_w(&self, cones: &ConeSet, v: &DVector<f64>) -> DVector<f64> {
        self.apply(cones, v, false)
    }

    pub fn apply_winv(&self, cones: &ConeSet, v: &DVector<f64>) -> DVector<f64> {
        self.apply(cones, v, true)
    }

    /// `W⁻² v`
    pub fn apply_winv2(&self, cones: &ConeSet, v: &DVector<f64>) -> DVector<f64> {
        self.apply_winv(cones, &self.apply_winv(cones, v))
    }

    /// `W² v`
    pub fn apply_w2(&self, cones: &ConeSet, v: &DVector<f64>) -> DVector<f64> {
        self.apply_w(cones, &self.apply_w(cones, v))
    }

    fn apply(&self, cones: &ConeSet, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(cones.dim);
        for (b, &(k, at)) in self.blocks.iter().zip(&cones.blocks) {
            let n = k.dim();
            apply_block(
                b,
                &v.as_slice()[at..at + n],
                &mut out.as_mut_slice()[at..at + n],
                inverse,
            );
        }
        out
    }

    pub fn block(&self, i: usize) -> &BlockScaling {
        &self.blocks[i]
    }
}

/// Applies one block of `W` (or `W⁻¹`) to `v`, writing into `out`.
pub fn apply_block(b: &BlockScaling, v: &[f64], out: &mut [f64], inverse: bool) {
    match b {
        BlockScaling::Nonneg(w) => {
            for i in 0..v.len() {
                out[i] = if inverse { v[i] / w[i] } else { v[i] * w[i] };
            }
        }
        BlockScaling::Soc { eta, w } => {
            let n = v.len();
            let sign = if inverse { -1.0 } else { 1.0 };
            let scale = if inverse { 1.0 / eta } else { *eta };
            let w1v1 = dot(&w[1..], &v[1..]);
            out[0] = scale * (w[0] * v[0] + sign * w1v1);
            let coef = sign * v[0] + w1v1 / (1.0 + w[0]);
            for i in 1..n {
                out[i] = scale * (v[i] + coef * w[i]);
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soc_point(v: &[f64], margin: f64) -> Vec<f64> {
        let mut out = v.to_vec();
        out[0] = norm(&v[1..]) + margin;
        out
    }

    #[test]
    fn nt_scaling_maps_both_sides_to_lambda() {
        let cones = ConeSet::new(&[ConeKind::Nonneg(2), ConeKind::Soc(4)]);
        let mut s = vec![0.5, 2.0];
        s.extend(soc_point(&[0.0, 0.3, -1.2, 0.4], 0.7));
        let mut z = vec![3.0, 0.1];
        z.extend(soc_point(&[0.0, -0.5, 0.2, 0.9], 0.2));
        let (s, z) = (DVector::from_vec(s), DVector::from_vec(z));
        let sc = Scaling::compute(&cones, &s, &z);
        let lhs = sc.apply_winv(&cones, &s);
        assert!((&lhs - &sc.lambda).amax() < 1e-12);
        let back = sc.apply_w(&cones, &sc.apply_winv(&cones, &s));
        assert!((&back - &s).amax() < 1e-12);
        // λ∘λ = (W⁻¹s)∘(Wz) and ⟨λ, λ⟩ = ⟨s, z⟩
        assert!((sc.lambda.dot(&sc.lambda) - s.dot(&z)).abs() < 1e-12);
    }

    #[test]
    fn jordan_div_inverts_product() {
        let cones = ConeSet::new(&[ConeKind::Soc(3), ConeKind::Nonneg(1)]);
        let lam = DVector::from_vec(vec![2.0, 0.5, -0.7, 1.5]);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 4.0]);
        let xi = cones.jordan(&lam, &x);
        assert!((cones.jordan_div(&lam, &xi) - x).amax() < 1e-12);
    }

    #[test]
    fn soc_step_hits_boundary() {
        let cones = ConeSet::new(&[ConeKind::Soc(3)]);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let d = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let a = cones.max_step(&v, &d, 10.0);
        assert!((a - 1.0).abs() < 1e-12);
        let d2 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(cones.max_step(&v, &d2, 10.0), 10.0);
    }
}

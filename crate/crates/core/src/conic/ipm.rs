//! Primal-dual interior-point method on the homogeneous self-dual embedding
//! of the canonical problem, with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector step.
//!
//! Embedding residuals (zero at a solution):
//!
//! ```text
//! r_x = P x + A_eqᵀ y + Gᵀ z + q τ
//! r_y = A_eq x − b_eq τ
//! r_z = G x + s − h τ
//! r_τ = κ + qᵀx + b_eqᵀ y + hᵀ z + xᵀP x / τ
//! ```
//!
//! Each Newton system is reduced to `[P + GᵀW⁻²G, A_eqᵀ; A_eq, 0]`, which is
//! quasi-definite after static regularization and factored in profile
//! storage.

use nalgebra::{DMatrix, DVector};

use super::canon::{Canonical, RowDual};
use super::cones::{apply_block, BlockScaling, ConeKind, ConeSet, Scaling};
use super::profile::{ProfileLdl, ProfileMatrix};
use super::program::{ConeProgram, SparseVec};
use super::{kkt_residuals, ConeSolution, Duals, KktResiduals, SolverSettings, Status};

trait AmaxSafe {
    fn amax_safe(&self) -> f64;
}

impl AmaxSafe for DVector<f64> {
    fn amax_safe(&self) -> f64 {
        self.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

struct SocBlock {
    at: usize,
    cols: Vec<usize>,
    /// Dense rows of `G` restricted to `cols`.
    mat: DMatrix<f64>,
}

struct Workspace<'a> {
    c: &'a Canonical,
    cones: ConeSet,
    n_eq: usize,
    /// Row index of every nonnegative-orthant constraint.
    lin_rows: Vec<usize>,
    socs: Vec<SocBlock>,
    kkt: ProfileMatrix,
    signs: Vec<f64>,
    reg: f64,
}

impl<'a> Workspace<'a> {
    fn new(c: &'a Canonical, settings: &SolverSettings) -> Self {
        let cones = ConeSet::new(&c.cones);
        let n = c.nx + c.a_eq.len();
        let mut first: Vec<usize> = (0..n).collect();
        let mut touch = |idx: &[usize]| {
            if let Some(&lo) = idx.iter().min() {
                for &i in idx {
                    first[i] = first[i].min(lo);
                }
            }
        };
        for &(i, j, _) in &c.p_upper {
            touch(&[i, j]);
        }
        let mut lin_rows = Vec::new();
        let mut socs = Vec::new();
        for &(k, at) in &cones.blocks {
            match k {
                ConeKind::Nonneg(m) => {
                    for r in at..at + m {
                        touch(&c.g[r].idx);
                        lin_rows.push(r);
                    }
                }
                ConeKind::Soc(m) => {
                    let mut cols: Vec<usize> =
                        (at..at + m).flat_map(|r| c.g[r].idx.iter().copied()).collect();
                    cols.sort_unstable();
                    cols.dedup();
                    touch(&cols);
                    let mut mat = DMatrix::zeros(m, cols.len());
                    for r in 0..m {
                        let row = &c.g[at + r];
                        for (&j, &v) in row.idx.iter().zip(&row.val) {
                            let cpos = cols.binary_search(&j).unwrap();
                            mat[(r, cpos)] += v;
                        }
                    }
                    socs.push(SocBlock { at, cols, mat });
                }
            }
        }
        for (e, row) in c.a_eq.iter().enumerate() {
            let mut idx = row.idx.clone();
            idx.push(c.nx + e);
            touch(&idx);
        }
        let mut signs = vec![1.0; n];
        for s in signs.iter_mut().skip(c.nx) {
            *s = -1.0;
        }
        Self {
            c,
            cones,
            n_eq: c.a_eq.len(),
            lin_rows,
            socs,
            kkt: ProfileMatrix::with_envelope(first),
            signs,
            reg: settings.static_reg,
        }
    }

    // SOC blocks go through their dense copies; gathered gemv is much
    // faster than row-by-row sparse dots on the large enumeration problems.
    fn g_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.c.g.len());
        for &r in &self.lin_rows {
            out[r] = self.c.g[r].dot(x);
        }
        for soc in &self.socs {
            let xs = DVector::from_iterator(soc.cols.len(), soc.cols.iter().map(|&j| x[j]));
            let m = soc.mat.nrows();
            out.rows_mut(soc.at, m).gemv(1.0, &soc.mat, &xs, 0.0);
        }
        out
    }

    fn gt_apply(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.c.nx);
        for &r in &self.lin_rows {
            if z[r] != 0.0 {
                self.c.g[r].axpy_into(z[r], &mut out);
            }
        }
        for soc in &self.socs {
            let zs = z.rows(soc.at, soc.mat.nrows());
            let y = soc.mat.tr_mul(&zs);
            for (&j, v) in soc.cols.iter().zip(y.iter()) {
                out[j] += v;
            }
        }
        out
    }

    fn aeq_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_eq, self.c.a_eq.iter().map(|r| r.dot(x)))
    }

    fn aeqt_apply(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.c.nx);
        for (e, row) in self.c.a_eq.iter().enumerate() {
            row.axpy_into(y[e], &mut out);
        }
        out
    }

    fn p_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.c.nx);
        for &(i, j, v) in &self.c.p_upper {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    /// Assembles and factors the reduced KKT matrix for scaling `w`
    /// (`None` means `W = I`).
    fn factor(&mut self, w: Option<&Scaling>) -> ProfileLdl {
        let nx = self.c.nx;
        self.kkt.clear();
        for &(i, j, v) in &self.c.p_upper {
            self.kkt.add(i, j, v);
        }
        for i in 0..nx {
            self.kkt.add(i, i, self.reg);
        }
        for (e, row) in self.c.a_eq.iter().enumerate() {
            for (&j, &v) in row.idx.iter().zip(&row.val) {
                self.kkt.add(nx + e, j, v);
            }
            self.kkt.add(nx + e, nx + e, -self.reg);
        }
        // nonnegative rows: (z/s) g gᵀ
        let mut block_iter = 0usize;
        if let Some(&(ConeKind::Nonneg(_), _)) = self.cones.blocks.first() {
            block_iter = 1;
            let wdiag: Option<&Vec<f64>> = match w.map(|w| w.block(0)) {
                Some(BlockScaling::Nonneg(d)) => Some(d),
                _ => None,
            };
            for (k, &r) in self.lin_rows.iter().enumerate() {
                let scale = wdiag.map_or(1.0, |d| 1.0 / (d[k] * d[k]));
                let row = &self.c.g[r];
                for a in 0..row.idx.len() {
                    let (ia, va) = (row.idx[a], row.val[a]);
                    for b in 0..=a {
                        let (ib, vb) = (row.idx[b], row.val[b]);
                        let v = scale * va * vb;
                        if ia == ib && a != b {
                            self.kkt.add(ia, ib, 2.0 * v);
                        } else {
                            self.kkt.add(ia, ib, v);
                        }
                    }
                }
            }
        }
        // second-order cones: (W⁻¹ G_b)ᵀ (W⁻¹ G_b)
        for (b, soc) in self.socs.iter().enumerate() {
            let m = soc.mat.nrows();
            let ncol = soc.cols.len();
            let scaled = match w {
                Some(w) => {
                    let bs = w.block(b + block_iter);
                    let mut out = DMatrix::zeros(m, ncol);
                    let mut buf = vec![0.0; m];
                    for cc in 0..ncol {
                        let col: Vec<f64> = soc.mat.column(cc).iter().copied().collect();
                        apply_block(bs, &col, &mut buf, true);
                        out.column_mut(cc).copy_from_slice(&buf);
                    }
                    out
                }
                None => soc.mat.clone(),
            };
            let gram = scaled.transpose() * &scaled;
            for a in 0..ncol {
                for bb in 0..=a {
                    let v = gram[(a, bb)];
                    if v != 0.0 {
                        self.kkt.add(soc.cols[a], soc.cols[bb], v);
                    }
                }
            }
        }
        ProfileLdl::factor(&self.kkt, &self.signs, self.reg * 1e-2)
    }

    fn winv2(&self, w: Option<&Scaling>, v: &DVector<f64>) -> DVector<f64> {
        match w {
            Some(w) => w.apply_winv2(&self.cones, v),
            None => v.clone(),
        }
    }

    fn w2(&self, w: Option<&Scaling>, v: &DVector<f64>) -> DVector<f64> {
        match w {
            Some(w) => w.apply_w2(&self.cones, v),
            None => v.clone(),
        }
    }

    fn reduced_solve(
        &self,
        ldl: &ProfileLdl,
        w: Option<&Scaling>,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
        rz: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let nx = self.c.nx;
        let top = rx + self.gt_apply(&self.winv2(w, rz));
        let mut rhs = DVector::zeros(nx + self.n_eq);
        rhs.rows_mut(0, nx).copy_from(&top);
        rhs.rows_mut(nx, self.n_eq).copy_from(ry);
        let sol = ldl.solve(&rhs);
        let dx = sol.rows(0, nx).into_owned();
        let dy = sol.rows(nx, self.n_eq).into_owned();
        let dz = self.winv2(w, &(self.g_apply(&dx) - rz));
        (dx, dy, dz)
    }

    /// Solves `[P Aᵀ Gᵀ; A 0 0; G 0 −W²] d = r` with iterative refinement on
    /// the unregularized system.
    fn solve(
        &self,
        ldl: &ProfileLdl,
        w: Option<&Scaling>,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
        rz: &DVector<f64>,
        refine: usize,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy, mut dz) = self.reduced_solve(ldl, w, rx, ry, rz);
        let norm_r = rx.amax_safe().max(ry.amax_safe()).max(rz.amax_safe());
        let mut prev = f64::INFINITY;
        for _ in 0..refine {
            let ex = rx - (self.p_apply(&dx) + self.aeqt_apply(&dy) + self.gt_apply(&dz));
            let ey = ry - self.aeq_apply(&dx);
            let ez = rz - (self.g_apply(&dx) - self.w2(w, &dz));
            let err = ex.amax_safe().max(ey.amax_safe()).max(ez.amax_safe());
            // stop once converged or when a correction no longer pays off
            if err <= 1e-14 * (1.0 + norm_r) || err > 0.25 * prev {
                break;
            }
            prev = err;
            let (cx, cy, cz) = self.reduced_solve(ldl, w, &ex, &ey, &ez);
            dx += cx;
            dy += cy;
            dz += cz;
        }
        (dx, dy, dz)
    }
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

pub(crate) fn solve(p: &ConeProgram, c: &Canonical, settings: &SolverSettings) -> ConeSolution {
    let mut ws = Workspace::new(c, settings);
    let nx = c.nx;
    let n_eq = ws.n_eq;
    let m = c.g.len();
    let nu = ws.cones.degree() as f64;

    let b_scale = c.b_eq.amax_safe().max(c.h.amax_safe());
    let q_scale = c.q.amax_safe();

    // Initial point from the W = I system.
    let ldl0 = ws.factor(None);
    let (x0, y0, zz) = ws.solve(&ldl0, None, &(-&c.q), &c.b_eq, &c.h, settings.refine_steps);
    let mut s0 = -&zz;
    let mut z0 = zz;
    ws.cones.shift_interior(&mut s0);
    ws.cones.shift_interior(&mut z0);
    let mut it = Iterate {
        x: x0,
        y: y0,
        z: z0,
        s: s0,
        tau: 1.0,
        kappa: 1.0,
    };

    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>)> = None;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let px = ws.p_apply(&it.x);
        let xpx = it.x.dot(&px);
        let r_x = &px + ws.aeqt_apply(&it.y) + ws.gt_apply(&it.z) + &c.q * it.tau;
        let r_y = ws.aeq_apply(&it.x) - &c.b_eq * it.tau;
        let r_z = ws.g_apply(&it.x) + &it.s - &c.h * it.tau;
        let r_tau =
            it.kappa + c.q.dot(&it.x) + c.b_eq.dot(&it.y) + c.h.dot(&it.z) + xpx / it.tau;

        // convergence on the normalized iterate
        let inv = 1.0 / it.tau;
        let xh = &it.x * inv;
        let pres = (r_y.amax_safe().max(if m > 0 { r_z.amax_safe() } else { 0.0 })) * inv;
        let dres = r_x.amax_safe() * inv;
        let pcost = 0.5 * xpx * inv * inv + c.q.dot(&xh);
        let dcost = -0.5 * xpx * inv * inv - (c.b_eq.dot(&it.y) + c.h.dot(&it.z)) * inv;
        let gap = (pcost - dcost).abs();
        let inner = settings.tol * 0.1;
        let rel_gap = gap / (1.0 + pcost.abs().min(dcost.abs()));
        // each measure against its own target, so the best iterate is the
        // one closest to meeting all of them
        let merit = (pres / (inner * (1.0 + b_scale)))
            .max(dres / (inner * (1.0 + q_scale)))
            .max(rel_gap / settings.tol_gap);
        if best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, xh.clone(), &it.y * inv, &it.z * inv));
        }
        if merit <= 1.0 {
            let (sol_z, duals) = recover(c, &xh, &(&it.y * inv), &(&it.z * inv));
            let res = kkt_residuals(p, &sol_z, &duals);
            if res.within(p, &sol_z, settings.tol) {
                return finish(p, sol_z, duals, res, Status::Optimal, iter);
            }
        }

        // infeasibility certificates (τ collapsing relative to κ)
        if it.tau < it.kappa {
            let yz_norm = it.y.amax_safe().max(if m > 0 { it.z.amax_safe() } else { 0.0 });
            if yz_norm > 0.0 {
                let bz = -(c.b_eq.dot(&it.y) + c.h.dot(&it.z)) / yz_norm;
                let atz = (ws.aeqt_apply(&it.y) + ws.gt_apply(&it.z)).amax_safe() / yz_norm;
                if bz > 0.0 && atz <= settings.tol_infeasible * bz.max(1e-300) {
                    status = Status::Infeasible;
                    break;
                }
            }
            let x_norm = it.x.amax_safe();
            if x_norm > 0.0 {
                let qx = c.q.dot(&it.x) / x_norm;
                if qx < 0.0 {
                    let thr = settings.tol_infeasible * (-qx);
                    let ok = px.amax_safe() / x_norm <= thr
                        && ws.aeq_apply(&it.x).amax_safe() / x_norm <= thr
                        && (m == 0 || (ws.g_apply(&it.x) + &it.s).amax_safe() / x_norm <= thr);
                    if ok {
                        status = Status::Unbounded;
                        break;
                    }
                }
            }
        }
        if iter == settings.max_iter {
            break;
        }

        // Newton step
        let sc = Scaling::compute(&ws.cones, &it.s, &it.z);
        let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / (nu + 1.0);
        let ldl = ws.factor(Some(&sc));
        let (dx1, dy1, dz1) = ws.solve(
            &ldl,
            Some(&sc),
            &(-&c.q),
            &c.b_eq,
            &c.h,
            settings.refine_steps,
        );
        let cvec = &c.q + &px * (2.0 * inv);
        let denom_base = -it.kappa / it.tau + cvec.dot(&dx1) + c.b_eq.dot(&dy1) + c.h.dot(&dz1)
            - xpx * inv * inv;

        let lam = &sc.lambda;
        let lam_sq = ws.cones.jordan(lam, lam);

        let direction = |sigma: f64,
                         xi: &DVector<f64>,
                         xi_tau: f64|
         -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, f64, f64) {
            let f = 1.0 - sigma;
            let w_lam_xi = sc.apply_w(&ws.cones, &ws.cones.jordan_div(lam, xi));
            let (dx0, dy0, dz0) = ws.solve(
                &ldl,
                Some(&sc),
                &(-&r_x * f),
                &(-&r_y * f),
                &(-&r_z * f - &w_lam_xi),
                settings.refine_steps,
            );
            let num = -f * r_tau - xi_tau / it.tau
                - (cvec.dot(&dx0) + c.b_eq.dot(&dy0) + c.h.dot(&dz0));
            let dtau = num / denom_base;
            let dx = dx0 + &dx1 * dtau;
            let dy = dy0 + &dy1 * dtau;
            let dz = dz0 + &dz1 * dtau;
            let ds = &w_lam_xi - sc.apply_w2(&ws.cones, &dz);
            let dkappa = (xi_tau - it.kappa * dtau) / it.tau;
            (dx, dy, dz, ds, dtau, dkappa)
        };

        let step_len = |dz: &DVector<f64>, ds: &DVector<f64>, dtau: f64, dkappa: f64| {
            let mut a = ws.cones.max_step(&it.s, ds, 1.0);
            a = a.min(ws.cones.max_step(&it.z, dz, 1.0));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // predictor
        let xi_aff = -&lam_sq;
        let (_, _, dz_a, ds_a, dtau_a, dkappa_a) = direction(0.0, &xi_aff, -it.tau * it.kappa);
        let alpha_aff = step_len(&dz_a, &ds_a, dtau_a, dkappa_a);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // corrector
        let corr = ws.cones.jordan(
            &sc.apply_winv(&ws.cones, &ds_a),
            &sc.apply_w(&ws.cones, &dz_a),
        );
        let mut xi = -&lam_sq - corr;
        ws.cones.add_identity(&mut xi, sigma * mu);
        let xi_tau = sigma * mu - it.tau * it.kappa - dtau_a * dkappa_a;
        let (dx, dy, dz, ds, dtau, dkappa) = direction(sigma, &xi, xi_tau);
        let alpha = (settings.step_fraction * step_len(&dz, &ds, dtau, dkappa)).min(1.0);
        if !(alpha > 0.0) || !alpha.is_finite() {
            break;
        }
        it.x += dx * alpha;
        it.y += dy * alpha;
        it.z += dz * alpha;
        it.s += ds * alpha;
        it.tau += dtau * alpha;
        it.kappa += dkappa * alpha;
        if !(it.tau > 0.0) || !it.x.iter().all(|v| v.is_finite()) {
            break;
        }
    }

    match status {
        Status::Infeasible | Status::Unbounded => {
            let z = it.x.rows(0, c.n_orig).into_owned();
            let duals = Duals::zeros(p);
            let res = KktResiduals::default();
            finish(p, z, duals, res, status, iterations)
        }
        _ => {
            let (_, xh, yh, zh) = best.unwrap_or_else(|| {
                (f64::INFINITY, DVector::zeros(nx), DVector::zeros(n_eq), DVector::zeros(m))
            });
            let (sol_z, duals) = recover(c, &xh, &yh, &zh);
            let res = kkt_residuals(p, &sol_z, &duals);
            let status = if res.within(p, &sol_z, settings.tol) {
                Status::Optimal
            } else {
                Status::MaxIterations
            };
            finish(p, sol_z, duals, res, status, iterations)
        }
    }
}

fn finish(
    p: &ConeProgram,
    z: DVector<f64>,
    duals: Duals,
    residuals: KktResiduals,
    status: Status,
    iterations: usize,
) -> ConeSolution {
    ConeSolution {
        objective: p.objective(&z),
        z,
        duals,
        residuals,
        status,
        iterations,
    }
}

/// Maps canonical `(x, y, z)` back to original variables and row duals.
fn recover(
    c: &Canonical,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, Duals) {
    let sol = x.rows(0, c.n_orig).into_owned();
    let mut rows = Vec::with_capacity(c.row_dual.len());
    let mut atoms = Vec::with_capacity(c.row_dual.len());
    // first pass: row multipliers
    for rd in &c.row_dual {
        rows.push(match rd {
            RowDual::Linear { zrow } | RowDual::Epigraph { zrow, .. } => z[*zrow],
            RowDual::Direct { zrow, coef, .. } => z[*zrow] / coef,
        });
    }
    for (r, rd) in c.row_dual.iter().enumerate() {
        match rd {
            RowDual::Linear { .. } => atoms.push(Vec::new()),
            RowDual::Direct { zrow, atom, dim, .. } => {
                let mut v = vec![DVector::zeros(0); *atom + 1];
                v[*atom] = -z.rows(*zrow + 1, dim - 1).into_owned();
                atoms.push(v);
            }
            RowDual::Epigraph { atoms: map, .. } => {
                let mut v = Vec::with_capacity(map.len());
                for e in map {
                    match e {
                        None => v.push(DVector::zeros(0)),
                        Some(e) => {
                            let epi = &c.epigraphs[*e];
                            let zt = z[epi.zrow];
                            let zv = z.rows(epi.zrow + 1, epi.dim - 1);
                            let share = if zt > 0.0 {
                                coef_of(c, r, map, *e) * rows[r] / zt
                            } else {
                                0.0
                            };
                            v.push(-zv * share);
                        }
                    }
                }
                atoms.push(v);
            }
        }
    }
    (
        sol,
        Duals {
            eq: y.clone(),
            rows,
            atoms,
        },
    )
}

fn coef_of(c: &Canonical, r: usize, map: &[Option<usize>], e: usize) -> f64 {
    let zrow = match &c.row_dual[r] {
        RowDual::Epigraph { zrow, .. } => *zrow,
        _ => return 0.0,
    };
    let t = c.epigraphs[e].t_var;
    let _ = map;
    let row: &SparseVec = &c.g[zrow];
    row.idx
        .iter()
        .zip(&row.val)
        .filter(|(&i, _)| i == t)
        .map(|(_, &v)| v)
        .sum()
}

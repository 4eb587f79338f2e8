//! Robust counterpart of the stage constraints.
//!
//! The disturbance entering at step `j` is `w_j = Δ_j (Ẽ1 x̄_j + E2 v_j)`
//! with `Ẽ1 = E1 − E2 K`; its effect on step `k` is `F̃^{k−j−1} H w_j`. The
//! bounds used are
//!
//! ```text
//! ρ_i      = ‖E F̃ⁱ H‖₂                       (E = E1 by default, Ẽ1 optionally)
//! c(k, i)  = ρ_{k−i−1} + Σ_{j=0}^{k−i−2} ρ_j c(k−j−1, i)
//! φ_k      = ‖Ẽ1 x_k + E2 v_k‖₂
//! φ̄_k      = φ_k + Σ_{i<k} c(k, i) φ_i
//! ```
//!
//! and row `i` at step `k` is tightened by `Σ_{j<k} ‖Ã_k⁽ⁱ⁾ F̃^{k−j−1} H‖₂ φ̄_j`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{mat_pow, max_abs, op_norm2, rank, spectral_radius};
use crate::model::{ConstraintSchedule, NominalSystem, UncertainSystem};

/// Atoms with a coefficient at or below this are dropped.
pub const ATOM_COEF_FLOOR: f64 = 1e-12;

/// Auxiliary feedback `K̃` governing disturbance propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeGain {
    pub ktilde: DMatrix<f64>,
    pub ftilde: DMatrix<f64>,
}

impl TubeGain {
    /// Wraps a user-supplied gain; rejects gains whose closed loop is not
    /// Schur stable.
    pub fn from_gain(sys: &NominalSystem, ktilde: DMatrix<f64>) -> Result<Self> {
        if ktilde.shape() != (sys.m(), sys.n()) {
            return Err(Error::Dimension(format!(
                "K̃ is {}x{}, expected {}x{}",
                ktilde.nrows(),
                ktilde.ncols(),
                sys.m(),
                sys.n()
            )));
        }
        let ftilde = sys.f() - sys.g() * &ktilde;
        let rho = spectral_radius(&ftilde);
        if !(rho < 1.0) {
            return Err(Error::UnstableTube(rho));
        }
        Ok(Self { ktilde, ftilde })
    }

    /// Smallest `d ≤ n` with `‖F̃^d‖ ≤ tol·(1 + ‖F̃‖)`, if any.
    pub fn nilpotency_index(&self, tol: f64) -> Option<usize> {
        let n = self.ftilde.nrows();
        let scale = 1.0 + max_abs(&self.ftilde);
        let mut p = DMatrix::identity(n, n);
        for d in 1..=n {
            p = &p * &self.ftilde;
            if max_abs(&p) <= tol * scale.powi(d as i32) {
                return Some(d);
            }
        }
        None
    }
}

fn controllability(f: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.nrows();
    let m = g.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut blk = g.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = f * blk;
    }
    c
}

fn input_directions(m: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..m)
        .map(|j| {
            let mut e = DVector::zeros(m);
            e[j] = 1.0;
            e
        })
        .collect();
    if m > 1 {
        out.push(DVector::from_element(m, 1.0));
        out.push(DVector::from_fn(m, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }));
        // a few fixed irrational mixes for pairs the simple candidates miss
        for s in 1..=4 {
            out.push(DVector::from_fn(m, |i, _| ((i + 1) as f64 * s as f64 * 0.618_033_988_75).fract() - 0.5));
        }
    }
    out
}

/// Places every closed-loop eigenvalue at the origin. Multi-input pairs are
/// reduced to a single input direction `w` (the best-conditioned
/// controllable one), then Ackermann's formula `k = e_nᵀ C⁻¹ Fⁿ` gives
/// `K̃ = w k`.
pub fn deadbeat_gain(sys: &NominalSystem) -> Result<TubeGain> {
    let (f, g) = (sys.f(), sys.g());
    let n = sys.n();
    let scale = 1.0 + max_abs(f);
    if max_abs(&mat_pow(f, n)) <= 1e-12 * scale.powi(n as i32) {
        return TubeGain::from_gain(sys, DMatrix::zeros(sys.m(), n));
    }
    let full_rank = rank(&controllability(f, g), 1e-10);
    if full_rank < n {
        return Err(Error::Uncontrollable { rank: full_rank, n });
    }
    let fn_pow = mat_pow(f, n);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for w in input_directions(sys.m()) {
        let b = g * &w;
        let c = controllability(f, &DMatrix::from_column_slice(n, 1, b.as_slice()));
        let sv = c.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-10 * smax) {
            continue;
        }
        let cond = smax / smin;
        if best.as_ref().map_or(true, |(bc, _)| cond < *bc) {
            let Some(c_inv) = c.try_inverse() else { continue };
            let k_row = c_inv.row(n - 1) * &fn_pow;
            best = Some((cond, &w * k_row));
        }
    }
    match best {
        Some((_, kt)) => TubeGain::from_gain(sys, kt),
        None => Err(Error::Uncontrollable { rank: full_rank, n }),
    }
}

/// `ρ_i = ‖E F̃ⁱ H‖₂` for `i = 0..len`.
pub fn rho_sequence(e: &DMatrix<f64>, h: &DMatrix<f64>, ftilde: &DMatrix<f64>, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut p = h.clone();
    for _ in 0..len {
        out.push(op_norm2(&(e * &p)));
        p = ftilde * p;
    }
    out
}

/// Lower-triangular `c(k, i)` for `0 ≤ i < k ≤ N`.
#[derive(Clone, Debug, PartialEq)]
pub struct CTable {
    rows: Vec<Vec<f64>>,
}

impl CTable {
    pub fn horizon(&self) -> usize {
        self.rows.len() - 1
    }

    /// `c(k, i)`; panics unless `i < k ≤ N`.
    pub fn get(&self, k: usize, i: usize) -> f64 {
        assert!(i < k, "c({k}, {i}) requires i < k");
        self.rows[k][i]
    }
}

pub fn c_table(rho: &[f64], horizon: usize) -> Result<CTable> {
    if rho.len() < horizon {
        return Err(Error::InvalidArgument(format!(
            "need {horizon} ρ values, got {}",
            rho.len()
        )));
    }
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); horizon + 1];
    for k in 1..=horizon {
        let mut row = vec![0.0; k];
        for (i, slot) in row.iter_mut().enumerate() {
            let mut v = rho[k - i - 1];
            for j in 0..(k - i).saturating_sub(1) {
                v += rho[j] * rows[k - j - 1][i];
            }
            *slot = v;
        }
        rows[k] = row;
    }
    Ok(CTable { rows })
}

/// `‖Ẽ1 x + E2 v‖₂`.
pub fn phi(e1tilde: &DMatrix<f64>, e2: &DMatrix<f64>, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (e1tilde * x + e2 * v).norm()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RhoVariant {
    #[default]
    E1,
    E1Tilde,
}

impl std::str::FromStr for RhoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e1" => Ok(Self::E1),
            "e1tilde" => Ok(Self::E1Tilde),
            _ => Err(Error::InvalidArgument(format!("unknown rho variant '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TighteningTables {
    pub e1tilde: DMatrix<f64>,
    pub e2: DMatrix<f64>,
    pub rho: Vec<f64>,
    pub ctable: CTable,
    /// `row_gains[k][i][j] = ‖Ã_k⁽ⁱ⁾ F̃^{k−j−1} H‖₂` for `j < k`.
    pub row_gains: Vec<Vec<Vec<f64>>>,
    /// `Ã_k = A_k − B_k K` for `k = 0..N-1`.
    pub atilde: Vec<DMatrix<f64>>,
    pub variant: RhoVariant,
    pub horizon: usize,
}

impl TighteningTables {
    pub fn build(
        sys: &UncertainSystem,
        k: &DMatrix<f64>,
        tube: &TubeGain,
        con: &ConstraintSchedule,
        horizon: usize,
        variant: RhoVariant,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if con.n() != sys.n() || con.m() != sys.m() {
            return Err(Error::Dimension("constraints do not match the system".into()));
        }
        let (h, e1, e2) = (sys.unc.h(), sys.unc.e1(), sys.unc.e2());
        let e1tilde = e1 - e2 * k;
        let e = match variant {
            RhoVariant::E1 => e1,
            RhoVariant::E1Tilde => &e1tilde,
        };
        let rho = rho_sequence(e, h, &tube.ftilde, horizon);
        let ctable = c_table(&rho, horizon)?;

        // F̃^d H for d = 0..N-1
        let mut prop = Vec::with_capacity(horizon);
        let mut p = h.clone();
        for _ in 0..horizon {
            prop.push(p.clone());
            p = &tube.ftilde * p;
        }
        let mut atilde = Vec::with_capacity(horizon);
        let mut row_gains = Vec::with_capacity(horizon);
        for step in 0..horizon {
            let c = con.at(step);
            let at = c.a() - c.b() * k;
            let gains = (0..c.q())
                .map(|i| {
                    let row = at.row(i);
                    (0..step)
                        .map(|j| (row * &prop[step - j - 1]).norm())
                        .collect::<Vec<f64>>()
                })
                .collect();
            atilde.push(at);
            row_gains.push(gains);
        }
        Ok(Self {
            e1tilde,
            e2: e2.clone(),
            rho,
            ctable,
            row_gains,
            atilde,
            variant,
            horizon,
        })
    }

    /// `φ̄_0..φ̄_{N-1}` along a nominal plan.
    pub fn phi_bar(&self, xs: &[DVector<f64>], vs: &[DVector<f64>]) -> Vec<f64> {
        let n = self.horizon.min(vs.len()).min(xs.len());
        let phis: Vec<f64> = (0..n).map(|j| phi(&self.e1tilde, &self.e2, &xs[j], &vs[j])).collect();
        (0..n)
            .map(|j| phis[j] + (0..j).map(|i| self.ctable.get(j, i) * phis[i]).sum::<f64>())
            .collect()
    }

    /// Structured-text dump of `ρ`, `c` and the row gains.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# tightening tables")?;
        writeln!(out, "horizon = {}", self.horizon)?;
        writeln!(
            out,
            "rho_variant = \"{}\"",
            match self.variant {
                RhoVariant::E1 => "e1",
                RhoVariant::E1Tilde => "e1tilde",
            }
        )?;
        writeln!(out, "rho = [{}]", join(&self.rho))?;
        writeln!(out, "[c]")?;
        for k in 1..=self.horizon {
            let row: Vec<f64> = (0..k).map(|i| self.ctable.get(k, i)).collect();
            writeln!(out, "k{k} = [{}]", join(&row))?;
        }
        writeln!(out, "[row_gains]")?;
        for (k, rows) in self.row_gains.iter().enumerate().skip(1) {
            for (i, g) in rows.iter().enumerate() {
                writeln!(out, "k{k}_r{i} = [{}]", join(g))?;
            }
        }
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(", ")
}

/// Coefficient on `φ_t(x_t, v_t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiAtom {
    pub t: usize,
    pub coef: f64,
}

/// `ã·x_k + b·v_k + c + Σ coef·φ_t ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustRow {
    pub step: usize,
    pub row: usize,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub atoms: Vec<PhiAtom>,
}

impl RobustRow {
    pub fn value(
        &self,
        tables: &TighteningTables,
        xs: &[DVector<f64>],
        vs: &[DVector<f64>],
    ) -> f64 {
        let k = self.step;
        self.a.dot(&xs[k])
            + self.b.dot(&vs[k])
            + self.c
            + self
                .atoms
                .iter()
                .map(|a| a.coef * phi(&tables.e1tilde, &tables.e2, &xs[a.t], &vs[a.t]))
                .sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct RobustConstraintSystem {
    pub rows: Vec<RobustRow>,
    pub horizon: usize,
}

impl RobustConstraintSystem {
    pub fn n_atoms(&self) -> usize {
        self.rows.iter().map(|r| r.atoms.len()).sum()
    }

    /// Largest row value along a plan (≤ 0 when satisfied).
    pub fn worst(&self, tables: &TighteningTables, xs: &[DVector<f64>], vs: &[DVector<f64>]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.value(tables, xs, vs))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Emits rows for steps `0..N-1`. The coefficient on `φ_t` in row
/// `(k, i)` is `Σ_{j=t}^{k−1} g(k,i,j)·[j = t ? 1 : c(j, t)]`.
pub fn assemble_robust_constraints(
    con: &ConstraintSchedule,
    tables: &TighteningTables,
) -> RobustConstraintSystem {
    let mut rows = Vec::new();
    for k in 0..tables.horizon {
        let c = con.at(k);
        for i in 0..c.q() {
            let g = &tables.row_gains[k][i];
            let atoms = (0..k)
                .filter_map(|t| {
                    let coef = g[t] + (t + 1..k).map(|j| g[j] * tables.ctable.get(j, t)).sum::<f64>();
                    (coef > ATOM_COEF_FLOOR).then_some(PhiAtom { t, coef })
                })
                .collect();
            rows.push(RobustRow {
                step: k,
                row: i,
                a: tables.atilde[k].row(i).transpose(),
                b: c.b().row(i).transpose(),
                c: c.c()[i],
                atoms,
            });
        }
    }
    RobustConstraintSystem {
        rows,
        horizon: tables.horizon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_table_small_cases() {
        let rho = [0.5, 0.2, 0.1, 0.05];
        let c = c_table(&rho, 4).unwrap();
        for k in 1..=4 {
            assert_eq!(c.get(k, k - 1), 0.5);
        }
        for k in 2..=4 {
            assert!((c.get(k, k - 2) - (0.2 + 0.25)).abs() < 1e-15);
        }
        // c(3,0) = ρ2 + ρ0 c(2,0) + ρ1 c(1,0)
        let expect = 0.1 + 0.5 * 0.45 + 0.2 * 0.5;
        assert!((c.get(3, 0) - expect).abs() < 1e-15);
        let zero = c_table(&[0.0; 3], 3).unwrap();
        assert!((1..=3).all(|k| (0..k).all(|i| zero.get(k, i) == 0.0)));
    }

    #[test]
    fn scalar_deadbeat() {
        let sys = NominalSystem::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let t = deadbeat_gain(&sys).unwrap();
        assert!((t.ktilde[(0, 0)] - 2.0).abs() < 1e-14);
        assert!(t.ftilde[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn zero_dynamics_need_no_gain() {
        let sys = NominalSystem::new(DMatrix::zeros(2, 2), DMatrix::from_element(2, 1, 1.0)).unwrap();
        let t = deadbeat_gain(&sys).unwrap();
        assert_eq!(t.ktilde, DMatrix::zeros(1, 2));
    }

    #[test]
    fn uncontrollable_reports_rank() {
        let f = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let g = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sys = NominalSystem::new(f, g).unwrap();
        assert!(matches!(deadbeat_gain(&sys), Err(Error::Uncontrollable { rank: 1, n: 2 })));
    }

    #[test]
    fn rho_scales_with_h() {
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let h = DMatrix::from_column_slice(2, 1, &[0.3, 0.1]);
        let f = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]);
        let r1 = rho_sequence(&e, &h, &f, 4);
        let r2 = rho_sequence(&e, &(&h * 2.0), &f, 4);
        for (a, b) in r1.iter().zip(&r2) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }
}

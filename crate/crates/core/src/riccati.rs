//! LQR recursion and the guaranteed-cost Riccati map.
//!
//! The map used throughout, for a scaling `ε > 0`:
//!
//! ```text
//! X   = (S⁻¹ − ε H Hᵀ)⁻¹                 requires ε⁻¹I − HᵀSH ≻ 0
//! Qε  = Q + ε⁻¹ E1ᵀE1,  Rε = R + ε⁻¹ E2ᵀE2,  Nε = ε⁻¹ E1ᵀE2
//! R̄   = Rε + GᵀXG
//! K   = R̄⁻¹ (GᵀXF + Nεᵀ)
//! S′  = FᵀXF + Qε − (FᵀXG + Nε) K
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_eigenvalue, min_eigenvalue, op_norm2, quad, spd_inverse, symmetrize};
use crate::model::{CostWeights, NominalSystem, UncertainSystem};
use crate::sim::{sample_disturbance, DisturbanceMode};

/// Relative band used for the strict positivity conditions of the map.
pub const FEAS_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LqrSolution {
    /// `K_0..K_{N-1}`.
    pub gains: Vec<DMatrix<f64>>,
    /// `P_0..P_N` (`P_N` is the terminal weight).
    pub costs: Vec<DMatrix<f64>>,
    pub horizon: usize,
}

/// Finite-horizon LQR: `K_k = (R + GᵀP_{k+1}G)⁻¹GᵀP_{k+1}F`,
/// `P_k = FᵀP_{k+1}F + Q − K_kᵀ(R + GᵀP_{k+1}G)K_k`.
pub fn lqr_backward(sys: &NominalSystem, w: &CostWeights, horizon: usize) -> Result<LqrSolution> {
    let (f, g) = (sys.f(), sys.g());
    let mut p = w.terminal().clone();
    let mut gains = vec![DMatrix::zeros(sys.m(), sys.n()); horizon];
    let mut costs = vec![p.clone(); horizon + 1];
    for k in (0..horizon).rev() {
        let m = w.r() + g.transpose() * &p * g;
        let m_inv = spd_inverse(&m).ok_or_else(|| Error::Solver("R + GᵀPG is not positive definite".into()))?;
        let kk = &m_inv * g.transpose() * &p * f;
        p = symmetrize(&(f.transpose() * &p * f + w.q() - kk.transpose() * &m * &kk));
        gains[k] = kk;
        costs[k] = p.clone();
    }
    Ok(LqrSolution {
        gains,
        costs,
        horizon,
    })
}

/// One application of the map.
#[derive(Clone, Debug)]
pub struct GccStep {
    pub s_next: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub rbar: DMatrix<f64>,
}

/// `(Qε, Rε, Nε)`.
pub fn epsilon_weights(
    sys: &UncertainSystem,
    w: &CostWeights,
    eps: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (e1, e2) = (sys.unc.e1(), sys.unc.e2());
    let inv = 1.0 / eps;
    (
        w.q() + e1.transpose() * e1 * inv,
        w.r() + e2.transpose() * e2 * inv,
        e1.transpose() * e2 * inv,
    )
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    Ok(())
}

/// `ε⁻¹I − HᵀSH`, checked for positive definiteness.
fn feasibility_block(s: &DMatrix<f64>, h: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    let hsh = symmetrize(&(h.transpose() * s * h));
    let block = DMatrix::identity(h.ncols(), h.ncols()) / eps - &hsh;
    let scale = (1.0 / eps).max(max_abs(&hsh));
    let lam = min_eigenvalue(&block);
    if !(lam > FEAS_MARGIN * scale) {
        return Err(Error::InfeasibleEpsilon {
            eps,
            reason: format!("min eigenvalue of ε⁻¹I − HᵀSH is {lam:e}"),
        });
    }
    Ok(block)
}

/// `X = (S⁻¹ − εHHᵀ)⁻¹` by direct inversion.
pub fn correction_direct(s: &DMatrix<f64>, h: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    feasibility_block(s, h, eps)?;
    let s_inv = spd_inverse(s).ok_or_else(|| Error::InvalidArgument("S must be positive definite".into()))?;
    let inner = symmetrize(&(s_inv - h * h.transpose() * eps));
    let x = spd_inverse(&inner).ok_or_else(|| Error::InfeasibleEpsilon {
        eps,
        reason: "S⁻¹ − εHHᵀ is not positive definite".into(),
    })?;
    Ok(symmetrize(&x))
}

/// `X = S + SH(ε⁻¹I − HᵀSH)⁻¹HᵀS`.
pub fn correction_woodbury(s: &DMatrix<f64>, h: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    let block = feasibility_block(s, h, eps)?;
    let inv = spd_inverse(&block).expect("checked positive definite");
    let sh = s * h;
    Ok(symmetrize(&(s + &sh * inv * sh.transpose())))
}

pub fn gcc_riccati_map(
    sys: &UncertainSystem,
    w: &CostWeights,
    s: &DMatrix<f64>,
    eps: f64,
) -> Result<GccStep> {
    let (f, g) = (sys.nominal.f(), sys.nominal.g());
    let x = correction_direct(s, sys.unc.h(), eps)?;
    if !(min_eigenvalue(&x) > FEAS_MARGIN * max_abs(&x)) {
        return Err(Error::InfeasibleEpsilon {
            eps,
            reason: "X is not positive definite".into(),
        });
    }
    let (q_eps, r_eps, n_eps) = epsilon_weights(sys, w, eps);
    let rbar = symmetrize(&(r_eps + g.transpose() * &x * g));
    let rbar_inv = spd_inverse(&rbar).ok_or_else(|| Error::InfeasibleEpsilon {
        eps,
        reason: "R̄ is not positive definite".into(),
    })?;
    let l = f.transpose() * &x * g + n_eps;
    let k = &rbar_inv * l.transpose();
    let s_next = symmetrize(&(f.transpose() * &x * f + q_eps - &l * &k));
    Ok(GccStep { s_next, x, k, rbar })
}

#[derive(Clone, Copy, Debug)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// The fixed point is computed for `Q + η‖Q‖₂ I`. The exact Riccati
    /// equation only gives a non-strict Lyapunov inequality (it is tight on
    /// the boundary of the uncertainty ball); `η > 0` makes it strict for
    /// the original `Q`.
    pub strict_margin: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            strict_margin: 1e-6,
        }
    }
}

/// Stationary guaranteed-cost data.
#[derive(Clone, Debug)]
pub struct GccSolution {
    pub s: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub eps: f64,
    pub q_eps: DMatrix<f64>,
    pub r_eps: DMatrix<f64>,
    pub n_eps: DMatrix<f64>,
    pub rbar: DMatrix<f64>,
    pub iterations: usize,
}

impl GccSolution {
    /// `xᵀ S x`.
    pub fn cost_bound(&self, x: &DVector<f64>) -> f64 {
        quad(&self.s, x)
    }
}

/// Weights the fixed point is actually computed for.
pub fn synthesis_weights(w: &CostWeights, strict_margin: f64) -> Result<CostWeights> {
    if !(strict_margin >= 0.0 && strict_margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("strict margin must be ≥ 0, got {strict_margin}")));
    }
    if strict_margin == 0.0 {
        return Ok(w.clone());
    }
    let n = w.q().nrows();
    let q = w.q() + DMatrix::identity(n, n) * (strict_margin * op_norm2(w.q()).max(f64::MIN_POSITIVE));
    CostWeights::new(q, w.r().clone(), w.terminal().clone())
}

fn initial_iterate(q: &DMatrix<f64>) -> DMatrix<f64> {
    // S must be invertible for the first map evaluation
    if min_eigenvalue(q) > FEAS_MARGIN * max_abs(q) && max_abs(q) > 0.0 {
        q.clone()
    } else {
        q + DMatrix::identity(q.nrows(), q.nrows()) * (1e-6 * max_abs(q).max(1.0))
    }
}

pub fn gcc_solve_infinite(
    sys: &UncertainSystem,
    w: &CostWeights,
    eps: f64,
    opts: FixedPointOptions,
) -> Result<GccSolution> {
    check_eps(eps)?;
    let inflated = synthesis_weights(w, opts.strict_margin)?;
    let w = &inflated;
    let mut s = initial_iterate(w.q());
    for it in 1..=opts.max_iter {
        let step = gcc_riccati_map(sys, w, &s, eps)?;
        let diff = max_abs(&(&step.s_next - &s));
        s = step.s_next;
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::InfeasibleEpsilon {
                eps,
                reason: "iterate diverged".into(),
            });
        }
        if diff <= opts.tol * (1.0 + max_abs(&s)) {
            let fin = gcc_riccati_map(sys, w, &s, eps)?;
            let (q_eps, r_eps, n_eps) = epsilon_weights(sys, w, eps);
            // X − S has rank ≤ p, so only X ⪰ S can be checked in general.
            let band = FEAS_MARGIN * max_abs(&fin.x);
            if !(min_eigenvalue(&s) > 0.0) || !(min_eigenvalue(&(&fin.x - &s)) >= -band) {
                return Err(Error::InfeasibleEpsilon {
                    eps,
                    reason: "converged S violates S ≻ 0 or X ⪰ S".into(),
                });
            }
            return Ok(GccSolution {
                s,
                x: fin.x,
                k: fin.k,
                eps,
                q_eps,
                r_eps,
                n_eps,
                rbar: fin.rbar,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence(opts.max_iter))
}

/// Time-varying gains `K_0..K_{N-1}` obtained by applying the map
/// backwards from `S_N = terminal`. Entry `k` holds `S_k`, `X_{k+1}`, `K_k`.
pub fn gcc_finite_horizon(
    sys: &UncertainSystem,
    w: &CostWeights,
    eps: f64,
    terminal: &DMatrix<f64>,
    horizon: usize,
) -> Result<Vec<GccStep>> {
    let mut out = Vec::with_capacity(horizon);
    let mut s = terminal.clone();
    for _ in 0..horizon {
        let step = gcc_riccati_map(sys, w, &s, eps)?;
        s = step.s_next.clone();
        out.push(step);
    }
    out.reverse();
    Ok(out)
}

/// Open interval `(lo, hi)` of admissible `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonInterval {
    pub lo: f64,
    pub hi: f64,
}

impl EpsilonInterval {
    pub fn contains(&self, eps: f64) -> bool {
        eps > self.lo && eps <= self.hi
    }
}

fn feasible(sys: &UncertainSystem, w: &CostWeights, eps: f64) -> bool {
    gcc_solve_infinite(sys, w, eps, FixedPointOptions::default()).is_ok()
}

/// Bisection on the feasibility of [`gcc_solve_infinite`]. Returns `hi`
/// feasible with `hi·(1 + resolution)` infeasible.
pub fn gcc_epsilon_interval(
    sys: &UncertainSystem,
    w: &CostWeights,
    resolution: f64,
) -> Result<EpsilonInterval> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let h = sys.unc.h();
    // S ⪰ Q at any fixed point, so ε < 1/λmax(HᵀQH) is necessary.
    let hqh = max_eigenvalue(&symmetrize(&(h.transpose() * w.q() * h)));
    let (mut lo, mut hi) = if hqh > 0.0 {
        let top = 1.0 / hqh;
        let mut probe = top;
        loop {
            if feasible(sys, w, probe) {
                break (probe, top);
            }
            if probe < top * 1e-12 {
                return Err(Error::NoFeasibleEpsilon(probe));
            }
            probe *= 0.5;
        }
    } else {
        let mut probe = 1.0;
        if !feasible(sys, w, probe) {
            loop {
                probe *= 0.5;
                if feasible(sys, w, probe) {
                    break;
                }
                if probe < 1e-12 {
                    return Err(Error::NoFeasibleEpsilon(probe));
                }
            }
        }
        let mut up = probe * 2.0;
        while feasible(sys, w, up) {
            probe = up;
            up *= 2.0;
            if up > 1e12 {
                return Ok(EpsilonInterval { lo: 0.0, hi: probe });
            }
        }
        (probe, up)
    };
    if lo == hi {
        // top itself was feasible (boundary case)
        return Ok(EpsilonInterval { lo: 0.0, hi });
    }
    while hi > lo * (1.0 + resolution) {
        let mid = 0.5 * (lo + hi);
        if feasible(sys, w, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(EpsilonInterval { lo: 0.0, hi: lo })
}

#[derive(Clone, Debug, Default)]
pub enum EpsilonCriterion {
    #[default]
    Trace,
    /// `x₀ᵀ S x₀`.
    Quadratic(DVector<f64>),
}

impl EpsilonCriterion {
    pub fn eval(&self, sol: &GccSolution) -> f64 {
        match self {
            EpsilonCriterion::Trace => sol.s.trace(),
            EpsilonCriterion::Quadratic(x0) => quad(&sol.s, x0),
        }
    }
}

/// Golden-section search for the criterion minimizer over
/// `[hi·1e-3, hi]`.
pub fn gcc_select_epsilon(
    sys: &UncertainSystem,
    w: &CostWeights,
    criterion: &EpsilonCriterion,
    interval: Option<EpsilonInterval>,
) -> Result<(f64, GccSolution)> {
    let iv = match interval {
        Some(iv) => iv,
        None => gcc_epsilon_interval(sys, w, 1e-4)?,
    };
    let eval = |eps: f64| -> f64 {
        gcc_solve_infinite(sys, w, eps, FixedPointOptions::default())
            .map(|s| criterion.eval(&s))
            .unwrap_or(f64::INFINITY)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (iv.hi * 1e-3, iv.hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    while b - a > 1e-6 * iv.hi {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    let best = 0.5 * (a + b);
    match gcc_solve_infinite(sys, w, best, FixedPointOptions::default()) {
        Ok(sol) => Ok((best, sol)),
        // a flat criterion can drift onto the boundary; step back inside
        Err(_) => {
            let eps = 0.5 * iv.hi;
            Ok((eps, gcc_solve_infinite(sys, w, eps, FixedPointOptions::default())?))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GccVerification {
    pub passed: bool,
    /// Largest eigenvalue found over all sampled `Δ` (negative on success).
    pub worst: f64,
    pub samples: usize,
}

/// Largest eigenvalue of
/// `(F − GK + HΔ(E1 − E2K))ᵀ S (·) − S + Q + KᵀRK`.
pub fn lyapunov_margin(
    sys: &UncertainSystem,
    w: &CostWeights,
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    delta: &DMatrix<f64>,
) -> f64 {
    let (f, g) = (sys.nominal.f(), sys.nominal.g());
    let (h, e1, e2) = (sys.unc.h(), sys.unc.e1(), sys.unc.e2());
    let acl = f - g * k + h * delta * (e1 - e2 * k);
    let lhs = acl.transpose() * s * &acl - s + w.q() + k.transpose() * w.r() * k;
    max_eigenvalue(&symmetrize(&lhs))
}

/// Samples half of the `Δ` on the unit sphere and half inside the ball,
/// plus `Δ = 0`.
pub fn verify_gcc<R: Rng + ?Sized>(
    sys: &UncertainSystem,
    w: &CostWeights,
    sol: &GccSolution,
    n_samples: usize,
    rng: &mut R,
) -> GccVerification {
    let (p, l) = (sys.unc.p(), sys.unc.l());
    let mut worst = lyapunov_margin(sys, w, &sol.s, &sol.k, &DMatrix::zeros(p, l));
    for i in 0..n_samples {
        let mode = if i % 2 == 0 {
            DisturbanceMode::UnitSphere
        } else {
            DisturbanceMode::UniformInterval
        };
        let delta = sample_disturbance(mode, p, l, rng);
        worst = worst.max(lyapunov_margin(sys, w, &sol.s, &sol.k, &delta));
    }
    GccVerification {
        passed: worst < 0.0,
        worst,
        samples: n_samples + 1,
    }
}

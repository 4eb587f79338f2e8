//! TOML problem files.
//!
//! ```toml
//! name = "example"          # optional
//! N = 10                    # horizon
//! F = [[...], ...]          # n×n, row-major nested arrays
//! G = [[...], ...]          # n×m
//! H = [[...], ...]          # n×p
//! E1 = [[...]]              # l×n
//! E2 = [[...]]              # l×m
//! Q = ...                   # n×n
//! R = ...                   # m×m
//! PN = ...                  # optional n×n terminal weight (default Q)
//! A = ...                   # q×n
//! B = ...                   # q×m
//! c = [...]                 # q
//! epsilon = 0.018           # optional pinned ε
//! Ktilde = ...              # optional m×n tube gain
//! x0 = [...]                # optional initial state
//!
//! [sim]                     # optional
//! steps = 20
//! seed = 1
//! mode = "uniform-interval" # or "unit-sphere", "boundary-worst"
//!
//! [[override]]              # optional per-step constraints
//! step = 3
//! A = ...
//! B = ...
//! c = [...]
//! ```

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::model::{
    ConstraintSchedule, CostWeights, NominalSystem, StageConstraints, UncertainSystem, UncertaintyStructure,
};
use crate::sim::DisturbanceMode;

const BUNDLED: &str = include_str!("../data/uncertain_3state.toml");

type Mat = Spanned<Vec<Vec<f64>>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    steps: Option<usize>,
    seed: Option<u64>,
    mode: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverride {
    step: Spanned<usize>,
    #[serde(rename = "A")]
    a: Mat,
    #[serde(rename = "B")]
    b: Mat,
    c: Spanned<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: Option<String>,
    #[serde(rename = "N")]
    horizon: Spanned<usize>,
    #[serde(rename = "F")]
    f: Mat,
    #[serde(rename = "G")]
    g: Mat,
    #[serde(rename = "H")]
    h: Mat,
    #[serde(rename = "E1")]
    e1: Mat,
    #[serde(rename = "E2")]
    e2: Mat,
    #[serde(rename = "Q")]
    q: Mat,
    #[serde(rename = "R")]
    r: Mat,
    #[serde(rename = "PN")]
    pn: Option<Mat>,
    #[serde(rename = "A")]
    a: Mat,
    #[serde(rename = "B")]
    b: Mat,
    c: Spanned<Vec<f64>>,
    epsilon: Option<Spanned<f64>>,
    #[serde(rename = "Ktilde")]
    ktilde: Option<Mat>,
    x0: Option<Spanned<Vec<f64>>>,
    sim: Option<RawSim>,
    #[serde(rename = "override")]
    overrides: Option<Vec<RawOverride>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSection {
    pub steps: usize,
    pub seed: u64,
    pub mode: DisturbanceMode,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            steps: 20,
            seed: 0,
            mode: DisturbanceMode::UniformInterval,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub sys: UncertainSystem,
    pub weights: CostWeights,
    pub constraints: ConstraintSchedule,
    pub horizon: usize,
    pub epsilon: Option<f64>,
    pub ktilde: Option<DMatrix<f64>>,
    pub x0: Option<DVector<f64>>,
    pub sim: SimSection,
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.src[..span.start.min(self.src.len())].matches('\n').count() + 1
    }

    fn err(&self, span: Range<usize>, msg: impl Into<String>) -> Error {
        Error::ProblemFile {
            line: Some(self.line(span)),
            msg: msg.into(),
        }
    }

    fn matrix(&self, name: &str, m: &Mat) -> Result<DMatrix<f64>> {
        let rows = m.get_ref();
        let span = m.span();
        if rows.is_empty() || rows[0].is_empty() {
            return Err(self.err(span, format!("{name} must be a nonempty nested array")));
        }
        let cols = rows[0].len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(self.err(
                span,
                format!("{name} row {i} has {} entries, expected {cols}", r.len()),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(self.err(span, format!("{name} has non-finite entries")));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
    }

    fn expect_shape(&self, name: &str, m: &Mat, got: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
        if got.shape() != shape {
            return Err(self.err(
                m.span(),
                format!("{name} is {}x{}, expected {}x{}", got.nrows(), got.ncols(), shape.0, shape.1),
            ));
        }
        Ok(())
    }

    fn wrap<T>(&self, span: Range<usize>, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::ProblemFile { .. } => e,
            other => self.err(span, other.to_string()),
        })
    }

    fn stage(&self, a: &Mat, b: &Mat, c: &Spanned<Vec<f64>>, n: usize, m: usize) -> Result<StageConstraints> {
        let am = self.matrix("A", a)?;
        let bm = self.matrix("B", b)?;
        let q = am.nrows();
        self.expect_shape("A", a, &am, (q, n))?;
        self.expect_shape("B", b, &bm, (q, m))?;
        if c.get_ref().len() != q {
            return Err(self.err(c.span(), format!("c has {} entries, expected {q}", c.get_ref().len())));
        }
        let cv = DVector::from_vec(c.get_ref().clone());
        self.wrap(c.span(), StageConstraints::new(am, bm, cv))
    }
}

impl Problem {
    pub fn parse(src: &str) -> Result<Self> {
        let raw: RawProblem = toml::from_str(src).map_err(|e| {
            let ctx = Ctx { src };
            Error::ProblemFile {
                line: e.span().map(|s| ctx.line(s)),
                msg: e.message().to_string(),
            }
        })?;
        let ctx = Ctx { src };
        let f = ctx.matrix("F", &raw.f)?;
        let n = f.nrows();
        ctx.expect_shape("F", &raw.f, &f, (n, n))?;
        let g = ctx.matrix("G", &raw.g)?;
        let m = g.ncols();
        ctx.expect_shape("G", &raw.g, &g, (n, m))?;
        let h = ctx.matrix("H", &raw.h)?;
        ctx.expect_shape("H", &raw.h, &h, (n, h.ncols()))?;
        let e1 = ctx.matrix("E1", &raw.e1)?;
        let l = e1.nrows();
        ctx.expect_shape("E1", &raw.e1, &e1, (l, n))?;
        let e2 = ctx.matrix("E2", &raw.e2)?;
        ctx.expect_shape("E2", &raw.e2, &e2, (l, m))?;
        let nominal = ctx.wrap(raw.g.span(), NominalSystem::new(f, g))?;
        let unc = ctx.wrap(raw.h.span(), UncertaintyStructure::new(h, e1, e2))?;
        let sys = ctx.wrap(raw.e2.span(), UncertainSystem::new(nominal, unc))?;

        let q = ctx.matrix("Q", &raw.q)?;
        ctx.expect_shape("Q", &raw.q, &q, (n, n))?;
        let r = ctx.matrix("R", &raw.r)?;
        ctx.expect_shape("R", &raw.r, &r, (m, m))?;
        let (pn, pn_span) = match &raw.pn {
            Some(p) => {
                let pm = ctx.matrix("PN", p)?;
                ctx.expect_shape("PN", p, &pm, (n, n))?;
                (pm, p.span())
            }
            None => (q.clone(), raw.q.span()),
        };
        let weights = ctx.wrap(pn_span, CostWeights::new(q, r, pn))?;

        let base = ctx.stage(&raw.a, &raw.b, &raw.c, n, m)?;
        let mut constraints = ConstraintSchedule::constant(base);
        for o in raw.overrides.iter().flatten() {
            let st = ctx.stage(&o.a, &o.b, &o.c, n, m)?;
            constraints = ctx.wrap(o.step.span(), constraints.with_override(*o.step.get_ref(), st))?;
        }

        let horizon = *raw.horizon.get_ref();
        if horizon == 0 {
            return Err(ctx.err(raw.horizon.span(), "N must be at least 1"));
        }
        let epsilon = match raw.epsilon {
            Some(e) if !(*e.get_ref() > 0.0) => return Err(ctx.err(e.span(), "epsilon must be positive")),
            Some(e) => Some(*e.get_ref()),
            None => None,
        };
        let ktilde = match &raw.ktilde {
            Some(k) => {
                let km = ctx.matrix("Ktilde", k)?;
                ctx.expect_shape("Ktilde", k, &km, (m, n))?;
                Some(km)
            }
            None => None,
        };
        let x0 = match raw.x0 {
            Some(x) if x.get_ref().len() != n => {
                return Err(ctx.err(x.span(), format!("x0 has {} entries, expected {n}", x.get_ref().len())))
            }
            Some(x) => Some(DVector::from_vec(x.into_inner())),
            None => None,
        };
        let mut sim = SimSection::default();
        if let Some(s) = raw.sim {
            if let Some(steps) = s.steps {
                sim.steps = steps;
            }
            if let Some(seed) = s.seed {
                sim.seed = seed;
            }
            if let Some(mode) = s.mode {
                sim.mode = mode
                    .get_ref()
                    .parse()
                    .map_err(|e: Error| ctx.err(mode.span(), e.to_string()))?;
            }
        }
        Ok(Self {
            name: raw.name.unwrap_or_else(|| "unnamed".into()),
            sys,
            weights,
            constraints,
            horizon,
            epsilon,
            ktilde,
            x0,
            sim,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let src = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::ProblemFile {
            line: None,
            msg: format!("cannot read {}: {e}", path.as_ref().display()),
        })?;
        Self::parse(&src)
    }
}

/// Source text of the bundled three-state example.
pub fn bundled_source() -> &'static str {
    BUNDLED
}

pub fn bundled_example() -> Result<Problem> {
    Problem::parse(BUNDLED)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_parses() {
        let p = bundled_example().unwrap();
        assert_eq!(p.horizon, 10);
        assert_eq!(p.sys.n(), 3);
        assert_eq!(p.sys.m(), 2);
        assert_eq!(p.constraints.base().q(), 6);
        assert_eq!(p.epsilon, Some(0.018));
        assert!(p.ktilde.is_some());
    }

    fn line_of(src: &str) -> Option<usize> {
        match Problem::parse(src) {
            Err(Error::ProblemFile { line, .. }) => line,
            other => panic!("expected a problem-file error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_matrix_reports_line() {
        let src = bundled_source().replace("[-1.0, 1.0, 0.0]]", "[-1.0, 1.0]]");
        let expect = src.lines().position(|l| l.starts_with("F =")).unwrap() + 1;
        assert_eq!(line_of(&src), Some(expect));
    }

    #[test]
    fn wrong_shape_reports_line() {
        let src = bundled_source().replace("E2 = [[0.4, -0.4]]", "E2 = [[0.4, -0.4, 1.0]]");
        let expect = src.lines().position(|l| l.starts_with("E2 =")).unwrap() + 1;
        assert_eq!(line_of(&src), Some(expect));
    }

    #[test]
    fn unknown_and_missing_fields_rejected() {
        let extra = format!("{}\nbogus = 1\n", bundled_source().split("[sim]").next().unwrap());
        assert!(line_of(&extra).is_some());
        let missing = bundled_source().replace("N = 10\n", "");
        assert!(matches!(Problem::parse(&missing), Err(Error::ProblemFile { .. })));
    }
}

//! Plain-text dump of the canonical form for cross-checking with other
//! solvers.
//!
//! ```text
//! # gcmpc canonical cone program v1
//! nx <n> neq <e> ncone_rows <m>
//! cones <kind:dim> ...            (kind: l = nonnegative, q = second-order)
//! P <i> <j> <v>                   (upper triangle, 0-based)
//! q <i> <v>
//! A <row> <col> <v>               (A_eq x = b_eq)
//! b <row> <v>
//! G <row> <col> <v>               (G x + s = h, s ∈ cones)
//! h <row> <v>
//! ```

use std::io::Write;

use super::canon::Canonical;
use super::cones::ConeKind;

pub fn write_canonical<W: Write>(c: &Canonical, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# gcmpc canonical cone program v1")?;
    writeln!(out, "nx {} neq {} ncone_rows {}", c.nx, c.a_eq.len(), c.g.len())?;
    write!(out, "cones")?;
    for k in &c.cones {
        match k {
            ConeKind::Nonneg(n) => write!(out, " l:{n}")?,
            ConeKind::Soc(n) => write!(out, " q:{n}")?,
        }
    }
    writeln!(out)?;
    for &(i, j, v) in &c.p_upper {
        writeln!(out, "P {i} {j} {v:e}")?;
    }
    for (i, v) in c.q.iter().enumerate() {
        if *v != 0.0 {
            writeln!(out, "q {i} {v:e}")?;
        }
    }
    for (r, row) in c.a_eq.iter().enumerate() {
        for (j, v) in row.idx.iter().zip(&row.val) {
            writeln!(out, "A {r} {j} {v:e}")?;
        }
        writeln!(out, "b {r} {:e}", c.b_eq[r])?;
    }
    for (r, row) in c.g.iter().enumerate() {
        for (j, v) in row.idx.iter().zip(&row.val) {
            writeln!(out, "G {r} {j} {v:e}")?;
        }
        if c.h[r] != 0.0 {
            writeln!(out, "h {r} {:e}", c.h[r])?;
        }
    }
    Ok(())
}

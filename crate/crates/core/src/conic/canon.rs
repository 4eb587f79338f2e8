//! Reformulation of sum-of-norms rows into standard conic form
//! `G x + s = h, s ∈ R₊ × SOC × … × SOC`.
//!
//! A row with a single norm atom becomes one second-order cone directly:
//! `‖M z + m‖ ≤ -(gᵀz + h) / coef`. A row with several atoms gets one
//! epigraph scalar `t ≥ ‖M z + m‖` per atom and stays linear in `(z, t)`.
//! Atoms with bit-identical affine maps share a single epigraph variable;
//! this is sound because every coefficient multiplying `t` is nonnegative.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::cones::ConeKind;
use super::program::{ConeProgram, SparseVec};

#[derive(Clone, Debug)]
pub(crate) enum RowDual {
    /// Dual is `z[zrow]`.
    Linear { zrow: usize },
    /// Linear row `zrow` plus per-atom epigraph index (`None` for zero
    /// coefficients).
    Epigraph {
        zrow: usize,
        atoms: Vec<Option<usize>>,
    },
    /// Row mapped to a single cone starting at `zrow`; `atom` is the index of
    /// the only nonzero atom.
    Direct {
        zrow: usize,
        atom: usize,
        coef: f64,
        dim: usize,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct Epigraph {
    pub t_var: usize,
    pub zrow: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CanonStats {
    /// Number of second-order cones.
    pub soc_cones: usize,
    /// Epigraph variables introduced for multi-atom rows (after sharing).
    pub epigraph_vars: usize,
    /// Cones created straight from single-atom rows.
    pub direct_cones: usize,
    /// Atoms with a nonzero coefficient, counted per row occurrence.
    pub atom_occurrences: usize,
    /// Rows of the nonnegative orthant block.
    pub linear_rows: usize,
}

/// Standard-form data:
/// minimize `½ xᵀPx + qᵀx` subject to `A_eq x = b_eq`, `G x + s = h`,
/// `s ∈ K`.
#[derive(Clone, Debug)]
pub struct Canonical {
    pub n_orig: usize,
    pub nx: usize,
    pub p_upper: Vec<(usize, usize, f64)>,
    pub q: DVector<f64>,
    pub constant: f64,
    pub a_eq: Vec<SparseVec>,
    pub b_eq: DVector<f64>,
    pub g: Vec<SparseVec>,
    pub h: DVector<f64>,
    pub cones: Vec<ConeKind>,
    pub stats: CanonStats,
    pub(crate) row_dual: Vec<RowDual>,
    pub(crate) epigraphs: Vec<Epigraph>,
}

fn atom_key(cols: &[usize], mat: &DMatrix<f64>, offset: &DVector<f64>) -> Vec<u64> {
    let mut key = Vec::with_capacity(2 + cols.len() + mat.len() + offset.len());
    key.push(cols.len() as u64);
    key.push(offset.len() as u64);
    key.extend(cols.iter().map(|&c| c as u64));
    key.extend(mat.iter().map(|v| v.to_bits()));
    key.extend(offset.iter().map(|v| v.to_bits()));
    key
}

pub fn canonicalize(p: &ConeProgram) -> Canonical {
    let d = p.dim();
    let mut next_var = d;

    let mut lin_g: Vec<SparseVec> = Vec::new();
    let mut lin_h: Vec<f64> = Vec::new();

    // SOC blocks: (rows, rhs)
    let mut epi_blocks: Vec<(Vec<SparseVec>, Vec<f64>)> = Vec::new();
    let mut epi_vars: Vec<usize> = Vec::new();
    let mut direct_blocks: Vec<(Vec<SparseVec>, Vec<f64>)> = Vec::new();
    let mut keys: HashMap<Vec<u64>, usize> = HashMap::new();

    enum Pending {
        Linear(usize),
        Epigraph(usize, Vec<Option<usize>>),
        Direct(usize, usize, f64),
    }
    let mut pending = Vec::with_capacity(p.rows.len());
    let mut occurrences = 0;

    let soc_rows = |cols: &[usize], mat: &DMatrix<f64>, offset: &DVector<f64>| {
        // s_v = M z + m  =>  G = -M, h = m
        let mut rows = Vec::with_capacity(mat.nrows());
        for i in 0..mat.nrows() {
            rows.push(SparseVec::from_pairs(
                cols.iter()
                    .enumerate()
                    .filter(|(c, _)| mat[(i, *c)] != 0.0)
                    .map(|(c, &j)| (j, -mat[(i, c)])),
            ));
        }
        (rows, offset.iter().copied().collect::<Vec<f64>>())
    };

    for row in &p.rows {
        let live: Vec<usize> = (0..row.atoms.len())
            .filter(|&a| row.atoms[a].coef > 0.0)
            .collect();
        occurrences += live.len();
        match live.len() {
            0 => {
                pending.push(Pending::Linear(lin_g.len()));
                lin_g.push(row.linear.clone());
                lin_h.push(-row.constant);
            }
            1 => {
                let a = live[0];
                let atom = &row.atoms[a];
                let inv = 1.0 / atom.coef;
                let mut g0 = row.linear.clone();
                g0.val.iter_mut().for_each(|v| *v *= inv);
                let (mut rows, mut rhs) = soc_rows(&atom.cols, &atom.mat, &atom.offset);
                rows.insert(0, g0);
                rhs.insert(0, -row.constant * inv);
                pending.push(Pending::Direct(direct_blocks.len(), a, atom.coef));
                direct_blocks.push((rows, rhs));
            }
            _ => {
                let mut g = row.linear.clone();
                let mut map = vec![None; row.atoms.len()];
                for &a in &live {
                    let atom = &row.atoms[a];
                    let key = atom_key(&atom.cols, &atom.mat, &atom.offset);
                    let e = *keys.entry(key).or_insert_with(|| {
                        let t = next_var;
                        next_var += 1;
                        let (mut rows, mut rhs) = soc_rows(&atom.cols, &atom.mat, &atom.offset);
                        rows.insert(0, SparseVec::from_pairs([(t, -1.0)]));
                        rhs.insert(0, 0.0);
                        epi_blocks.push((rows, rhs));
                        epi_vars.push(t);
                        epi_blocks.len() - 1
                    });
                    g.push(epi_vars[e], atom.coef);
                    map[a] = Some(e);
                }
                pending.push(Pending::Epigraph(lin_g.len(), map));
                lin_g.push(g);
                lin_h.push(-row.constant);
            }
        }
    }

    let nx = next_var;
    let n_lin = lin_g.len();
    let mut cones = vec![ConeKind::Nonneg(n_lin)];
    let mut g = lin_g;
    let mut h = lin_h;
    let mut epigraphs = Vec::with_capacity(epi_blocks.len());
    for ((rows, rhs), &t) in epi_blocks.into_iter().zip(&epi_vars) {
        epigraphs.push(Epigraph {
            t_var: t,
            zrow: g.len(),
            dim: rows.len(),
        });
        cones.push(ConeKind::Soc(rows.len()));
        g.extend(rows);
        h.extend(rhs);
    }
    let mut direct_start = Vec::with_capacity(direct_blocks.len());
    let direct_dims: Vec<usize> = direct_blocks.iter().map(|(r, _)| r.len()).collect();
    let n_direct = direct_blocks.len();
    for (rows, rhs) in direct_blocks {
        direct_start.push(g.len());
        cones.push(ConeKind::Soc(rows.len()));
        g.extend(rows);
        h.extend(rhs);
    }

    let row_dual = pending
        .into_iter()
        .map(|pd| match pd {
            Pending::Linear(r) => RowDual::Linear { zrow: r },
            Pending::Epigraph(r, atoms) => RowDual::Epigraph { zrow: r, atoms },
            Pending::Direct(b, atom, coef) => RowDual::Direct {
                zrow: direct_start[b],
                atom,
                coef,
                dim: direct_dims[b],
            },
        })
        .collect();

    let mut q = DVector::zeros(nx);
    q.rows_mut(0, d).copy_from(&p.q);

    Canonical {
        n_orig: d,
        nx,
        p_upper: p.p_upper.clone(),
        q,
        constant: p.constant,
        a_eq: p.eq_rows.clone(),
        b_eq: DVector::from_vec(p.eq_rhs.clone()),
        h: DVector::from_vec(h),
        g,
        stats: CanonStats {
            soc_cones: epigraphs.len() + n_direct,
            epigraph_vars: epigraphs.len(),
            direct_cones: n_direct,
            atom_occurrences: occurrences,
            linear_rows: n_lin,
        },
        cones,
        row_dual,
        epigraphs,
    }
}

//! Enumeration-based min-max MPC over the vertices of the `‖Δ‖∞ ≤ 1` box.
//!
//! Every vertex sequence of length `N` is a leaf of a scenario tree; each
//! non-leaf node owns one input, so inputs are shared by all scenarios with
//! the same disturbance history. The problem
//!
//! ```text
//! minimize γ  s.t.  cost(leaf) ≤ γ for every leaf,
//!                   A x + B u + c ≤ 0 at every non-leaf node
//! ```
//!
//! is solved in one conic call, with each `‖y‖² ≤ γ` written as
//! `‖(2y, 1 − γ)‖ ≤ 1 + γ`. Variables are ordered by a post-order walk of
//! the tree (children before parents, `γ` last), which keeps the KKT
//! envelope proportional to `depth × nodes`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::conic::{solve_cone, ConeProgram, ConeRow, NormAtom, SolverSettings, SparseVec, Status};
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, quad};
use crate::model::{ConstraintSchedule, CostWeights, NominalSystem, UncertainSystem, UncertaintyStructure};
use crate::parallel::{map_indexed, ExecMode};

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Vertex applied on the edge from the parent.
    pub vertex: Option<usize>,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ScenarioTree {
    pub depth: usize,
    pub vertices: Vec<DMatrix<f64>>,
    /// Breadth-first; node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl ScenarioTree {
    pub fn branching(&self) -> usize {
        self.vertices.len()
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| self.nodes[i].depth == self.depth)
    }

    pub fn n_leaves(&self) -> usize {
        self.branching().pow(self.depth as u32)
    }

    /// Root-to-node path, root first.
    pub fn path(&self, mut node: usize) -> Vec<usize> {
        let mut out = vec![node];
        while let Some(p) = self.nodes[node].parent {
            out.push(p);
            node = p;
        }
        out.reverse();
        out
    }

    /// Child of `node` reached through `vertex`.
    pub fn child(&self, node: usize, vertex: usize) -> usize {
        self.nodes[node].children[vertex]
    }

    /// Nodes with `depth < N` in post-order.
    pub fn input_postorder(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, false)];
        while let Some((node, expanded)) = stack.pop() {
            if self.nodes[node].depth == self.depth {
                continue;
            }
            if expanded {
                out.push(node);
            } else {
                stack.push((node, true));
                for &c in self.nodes[node].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }
}

/// All sign patterns of a `p × l` matrix.
pub fn box_vertices(p: usize, l: usize) -> Vec<DMatrix<f64>> {
    let k = p * l;
    (0..1usize << k)
        .map(|bits| DMatrix::from_fn(p, l, |i, j| if bits >> (i * l + j) & 1 == 1 { 1.0 } else { -1.0 }))
        .collect()
}

pub fn build_scenario_tree(unc: &UncertaintyStructure, depth: usize, cap: usize) -> Result<ScenarioTree> {
    if unc.p() * unc.l() >= 64 {
        return Err(Error::TreeTooLarge { nodes: u128::MAX, cap });
    }
    tree_over_vertices(box_vertices(unc.p(), unc.l()), depth, cap)
}

/// Scenario tree branching over `vertices` in the given order.
pub fn tree_over_vertices(vertices: Vec<DMatrix<f64>>, depth: usize, cap: usize) -> Result<ScenarioTree> {
    let b = vertices.len() as u128;
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=depth {
        total = total.saturating_add(level);
        level = level.saturating_mul(b);
    }
    if total > cap as u128 {
        return Err(Error::TreeTooLarge { nodes: total, cap });
    }
    let b = vertices.len();
    let mut nodes = vec![TreeNode {
        parent: None,
        depth: 0,
        vertex: None,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for d in 1..=depth {
        let mut next = Vec::with_capacity(frontier.len() * b);
        for &parent in &frontier {
            for v in 0..b {
                let id = nodes.len();
                nodes.push(TreeNode {
                    parent: Some(parent),
                    depth: d,
                    vertex: Some(v),
                    children: Vec::new(),
                });
                nodes[parent].children.push(id);
                next.push(id);
            }
        }
        frontier = next;
    }
    Ok(ScenarioTree { depth, vertices, nodes })
}

#[derive(Clone, Debug)]
pub struct MinMaxSolution {
    /// Input at every non-leaf node, indexed by node id (leaves hold empty
    /// vectors).
    pub inputs: Vec<DVector<f64>>,
    /// Worst-case cost bound.
    pub gamma: f64,
    pub status: Status,
    pub iterations: usize,
    pub solve_time: Duration,
}

impl MinMaxSolution {
    pub fn u0(&self) -> &DVector<f64> {
        &self.inputs[0]
    }
}

/// `x` at a node as `C x_0 + Σ_d M_d u_{ancestor at depth d}`.
#[derive(Clone)]
struct NodeMap {
    c: DMatrix<f64>,
    m: Vec<DMatrix<f64>>,
}

/// Pre-assembled min-max problem; only constants depend on `x_0`.
#[derive(Clone, Debug)]
pub struct ErmpcController {
    pub sys: UncertainSystem,
    pub weights: CostWeights,
    pub horizon: usize,
    pub tree: ScenarioTree,
    pub solver: SolverSettings,
    /// Variable offset of each node's input (`usize::MAX` for leaves).
    offsets: Vec<usize>,
    template: ConeProgram,
    /// Constant of linear row `r` is `row_x0[r]·x_0 + row_c[r]`.
    row_x0: Vec<DVector<f64>>,
    row_c: Vec<f64>,
    /// Offset of leaf atom `l` (rows `0..len-1`) is `leaf_x0[l]·x_0`.
    leaf_x0: Vec<DMatrix<f64>>,
    n_linear: usize,
}

impl ErmpcController {
    pub fn new(
        sys: UncertainSystem,
        weights: CostWeights,
        constraints: &ConstraintSchedule,
        horizon: usize,
        cap: usize,
        mode: ExecMode,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let tree = build_scenario_tree(&sys.unc, horizon, cap)?;
        Self::over_tree(sys, weights, constraints, tree, mode)
    }

    /// Same as [`ErmpcController::new`] with a caller-ordered vertex list.
    pub fn with_vertices(
        sys: UncertainSystem,
        weights: CostWeights,
        constraints: &ConstraintSchedule,
        horizon: usize,
        vertices: Vec<DMatrix<f64>>,
        mode: ExecMode,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if vertices.iter().any(|v| v.shape() != (sys.unc.p(), sys.unc.l())) {
            return Err(Error::Dimension("vertex shape does not match H/E".into()));
        }
        let tree = tree_over_vertices(vertices, horizon, DEFAULT_NODE_CAP)?;
        Self::over_tree(sys, weights, constraints, tree, mode)
    }

    fn over_tree(
        sys: UncertainSystem,
        weights: CostWeights,
        constraints: &ConstraintSchedule,
        tree: ScenarioTree,
        mode: ExecMode,
    ) -> Result<Self> {
        let horizon = tree.depth;
        let (n, m) = (sys.n(), sys.m());
        let order = tree.input_postorder();
        let mut offsets = vec![usize::MAX; tree.nodes.len()];
        for (i, &node) in order.iter().enumerate() {
            offsets[node] = i * m;
        }
        let gamma = order.len() * m;
        let dim = gamma + 1;

        let (f, g) = (sys.nominal.f(), sys.nominal.g());
        let (h, e1, e2) = (sys.unc.h(), sys.unc.e1(), sys.unc.e2());
        let vert_dyn: Vec<(DMatrix<f64>, DMatrix<f64>)> = tree
            .vertices
            .iter()
            .map(|d| (f + h * d * e1, g + h * d * e2))
            .collect();
        // node maps in BFS order (parents first)
        let mut maps: Vec<NodeMap> = Vec::with_capacity(tree.nodes.len());
        maps.push(NodeMap {
            c: DMatrix::identity(n, n),
            m: Vec::new(),
        });
        for node in tree.nodes.iter().skip(1) {
            let parent = &maps[node.parent.unwrap()];
            let (fv, gv) = &vert_dyn[node.vertex.unwrap()];
            let mut mm: Vec<DMatrix<f64>> = parent.m.iter().map(|x| fv * x).collect();
            mm.push(gv.clone());
            maps.push(NodeMap { c: fv * &parent.c, m: mm });
        }

        let mut template = ConeProgram::new(dim);
        template.add_linear_objective(gamma, 1.0);

        let mut row_x0 = Vec::new();
        let mut row_c = Vec::new();
        for &node in &order {
            let d = tree.nodes[node].depth;
            let con = constraints.at(d);
            let path = tree.path(node);
            let map = &maps[node];
            for i in 0..con.q() {
                let a = con.a().row(i);
                let mut lin = SparseVec::new();
                for (dd, &anc) in path.iter().take(d).enumerate() {
                    let coeffs = a * &map.m[dd];
                    for j in 0..m {
                        if coeffs[j] != 0.0 {
                            lin.push(offsets[anc] + j, coeffs[j]);
                        }
                    }
                }
                for j in 0..m {
                    let b = con.b()[(i, j)];
                    if b != 0.0 {
                        lin.push(offsets[node] + j, b);
                    }
                }
                template.add_row(ConeRow::linear(lin, 0.0));
                row_x0.push((a * &map.c).transpose());
                row_c.push(con.c()[i]);
            }
        }
        let n_linear = row_x0.len();

        let q_half = psd_sqrt(weights.q());
        let r_half = psd_sqrt(weights.r());
        let p_half = psd_sqrt(weights.terminal());
        let leaves: Vec<usize> = tree.leaves().collect();
        let stack = horizon * (n + m) + n;
        let offs = &offsets;
        let built: Vec<(ConeRow, DMatrix<f64>)> = map_indexed(leaves.len(), mode, |li| {
            let leaf = leaves[li];
            let path = tree.path(leaf);
            let cols: Vec<usize> = path[..horizon]
                .iter()
                .flat_map(|&nd| (0..m).map(move |j| offs[nd] + j))
                .chain(std::iter::once(gamma))
                .collect();
            let ncols = cols.len();
            let mut mat = DMatrix::zeros(stack + 1, ncols);
            let mut off_x0 = DMatrix::zeros(stack, n);
            let mut r0 = 0;
            for (d, &nd) in path.iter().enumerate() {
                let map = &maps[nd];
                let w = if d == horizon { &p_half } else { &q_half };
                for (dd, md) in map.m.iter().enumerate() {
                    let blk = w * md * 2.0;
                    mat.view_mut((r0, dd * m), (n, m)).copy_from(&blk);
                }
                off_x0.view_mut((r0, 0), (n, n)).copy_from(&(w * &map.c * 2.0));
                r0 += n;
                if d < horizon {
                    mat.view_mut((r0, d * m), (m, m)).copy_from(&(&r_half * 2.0));
                    r0 += m;
                }
            }
            mat[(stack, ncols - 1)] = -1.0;
            let atom = NormAtom::new(1.0, cols, mat, DVector::zeros(stack + 1));
            let row = ConeRow::linear(SparseVec::from_pairs([(gamma, -1.0)]), -1.0).with_atom(atom);
            (row, off_x0)
        });
        let mut leaf_x0 = Vec::with_capacity(built.len());
        for (row, off) in built {
            template.add_row(row);
            leaf_x0.push(off);
        }
        Ok(Self {
            sys,
            weights,
            horizon,
            tree,
            solver: SolverSettings::default(),
            offsets,
            template,
            row_x0,
            row_c,
            leaf_x0,
            n_linear,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.template.dim()
    }

    pub fn program(&self, x0: &DVector<f64>) -> Result<ConeProgram> {
        if x0.len() != self.sys.n() {
            return Err(Error::Dimension(format!("state has length {}, expected {}", x0.len(), self.sys.n())));
        }
        let mut p = self.template.clone();
        for (r, row) in p.rows.iter_mut().enumerate() {
            if r < self.n_linear {
                row.constant = self.row_x0[r].dot(x0) + self.row_c[r];
            } else {
                let atom = &mut row.atoms[0];
                let stack = atom.offset.len() - 1;
                let off = &self.leaf_x0[r - self.n_linear] * x0;
                atom.offset.rows_mut(0, stack).copy_from(&off);
                atom.offset[stack] = 1.0;
            }
        }
        Ok(p)
    }

    pub fn solve(&self, x0: &DVector<f64>) -> Result<MinMaxSolution> {
        let prog = self.program(x0)?;
        let start = Instant::now();
        let sol = solve_cone(&prog, &self.solver)?;
        let solve_time = start.elapsed();
        match sol.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(Error::RobustInfeasible),
            s => return Err(Error::Solver(format!("min-max solve ended with status {s}"))),
        }
        let m = self.sys.m();
        let inputs = self
            .offsets
            .iter()
            .map(|&o| {
                if o == usize::MAX {
                    DVector::zeros(0)
                } else {
                    sol.z.rows(o, m).into_owned()
                }
            })
            .collect();
        Ok(MinMaxSolution {
            inputs,
            gamma: sol.z[self.n_vars() - 1],
            status: sol.status,
            iterations: sol.iterations,
            solve_time,
        })
    }

    pub fn control_step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve(x)?.u0().clone())
    }

    /// Cost of the scenario that follows `vertices` (one per stage) under
    /// the tree inputs.
    pub fn scenario_cost(&self, sol: &MinMaxSolution, x0: &DVector<f64>, vertices: &[usize]) -> f64 {
        let (f, g) = (self.sys.nominal.f(), self.sys.nominal.g());
        let (h, e1, e2) = (self.sys.unc.h(), self.sys.unc.e1(), self.sys.unc.e2());
        let mut node = 0;
        let mut x = x0.clone();
        let mut cost = 0.0;
        for &v in vertices.iter().take(self.horizon) {
            let u = &sol.inputs[node];
            cost += self.weights.stage_cost(&x, u);
            let d = &self.tree.vertices[v];
            x = (f + h * d * e1) * &x + (g + h * d * e2) * u;
            node = self.tree.child(node, v);
        }
        cost + quad(self.weights.terminal(), &x)
    }
}

/// Builds the scenario tree and solves the min-max problem at `x0`.
pub fn solve_minmax(
    sys: &UncertainSystem,
    weights: &CostWeights,
    constraints: &ConstraintSchedule,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<MinMaxSolution> {
    ErmpcController::new(
        sys.clone(),
        weights.clone(),
        constraints,
        horizon,
        DEFAULT_NODE_CAP,
        ExecMode::default(),
    )?
    .solve(x0)
}

/// Nominal finite-horizon MPC (constraints at `k = 0..N-1`, terminal
/// weight `P_N`). Returns the input sequence and the optimal cost.
pub fn nominal_mpc(
    sys: &NominalSystem,
    weights: &CostWeights,
    constraints: &ConstraintSchedule,
    x0: &DVector<f64>,
    horizon: usize,
    settings: &SolverSettings,
) -> Result<(Vec<DVector<f64>>, f64)> {
    let (n, m) = (sys.n(), sys.m());
    let dim = horizon * m;
    // x_k = F^k x0 + Σ_{j<k} F^{k-1-j} G u_j
    let mut fpow = vec![DMatrix::identity(n, n)];
    let mut phi = vec![DMatrix::zeros(n, dim)];
    for k in 0..horizon {
        fpow.push(sys.f() * &fpow[k]);
        let mut next = sys.f() * &phi[k];
        next.view_mut((0, k * m), (n, m)).copy_from(sys.g());
        phi.push(next);
    }
    let mut hess = DMatrix::zeros(dim, dim);
    let mut grad = DVector::zeros(dim);
    let mut constant = 0.0;
    for k in 0..=horizon {
        let w = if k == horizon { weights.terminal() } else { weights.q() };
        let free = &fpow[k] * x0;
        hess += phi[k].transpose() * w * &phi[k] * 2.0;
        grad += phi[k].transpose() * w * &free * 2.0;
        constant += quad(w, &free);
        if k < horizon {
            let mut blk = hess.view_mut((k * m, k * m), (m, m));
            blk += weights.r() * 2.0;
        }
    }
    let mut p = ConeProgram::new(dim);
    p.add_quadratic_block(0, &hess);
    p.set_linear_objective(grad);
    p.set_constant(constant);
    for k in 0..horizon {
        let con = constraints.at(k);
        let free = &fpow[k] * x0;
        for i in 0..con.q() {
            let a = con.a().row(i);
            let mut lin = (a * &phi[k]).transpose();
            for j in 0..m {
                lin[k * m + j] += con.b()[(i, j)];
            }
            p.add_row(ConeRow::linear(SparseVec::from_dense(lin.as_slice(), 0), (a * &free)[0] + con.c()[i]));
        }
    }
    let sol = solve_cone(&p, settings)?;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => return Err(Error::RobustInfeasible),
        s => return Err(Error::Solver(format!("nominal MPC ended with status {s}"))),
    }
    let inputs = (0..horizon).map(|k| sol.z.rows(k * m, m).into_owned()).collect();
    Ok((inputs, sol.objective))
}

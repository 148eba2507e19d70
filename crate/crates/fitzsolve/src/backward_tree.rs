//! Backward stochastic variational inequalities on a recombining binomial
//! tree, where conditional expectations are exact two-point averages.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitzpatrick::fitz_gap;
use crate::linalg::{dot, norm_inf, pairwise_sum};
use crate::operators::{OperatorKind, OperatorSpec};
use crate::paths::fmt_f64;

const NODE_MAX_ITER: usize = 10_000;
const NODE_TOL: f64 = 1e-13;
/// Largest brute-force program, in scalar unknowns.
pub const BRUTE_FORCE_MAX_UNKNOWNS: usize = 200;
/// Objective the brute-force minimizer must reach.
pub const BRUTE_FORCE_TOL: f64 = 1e-6;

/// Depth-`n` recombining tree on `[0, T]` with steps `±sqrt(dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialTree {
    pub depth: usize,
    pub horizon: f64,
}

impl BinomialTree {
    pub fn new(depth: usize, horizon: f64) -> Result<Self> {
        if depth == 0 || depth > 60 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tree needs 1 <= depth <= 60 and a positive horizon, got {depth}, {horizon}"
            )));
        }
        Ok(BinomialTree { depth, horizon })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.depth as f64
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.dt().sqrt()
    }

    pub fn time(&self, level: usize) -> f64 {
        self.horizon * level as f64 / self.depth as f64
    }

    /// Walk value `B` at node `(level, j)`, `j` the number of up-moves.
    pub fn walk(&self, level: usize, j: usize) -> f64 {
        (2.0 * j as f64 - level as f64) * self.sqrt_dt()
    }

    /// `P(node)` = `C(level, j) / 2^level`.
    pub fn prob(&self, level: usize, j: usize) -> f64 {
        let mut p = 1.0;
        let (n, k) = (level, j.min(level - j));
        for r in 0..k {
            p *= (n - r) as f64 / (r + 1) as f64;
        }
        p * 0.5f64.powi(level as i32)
    }

    pub fn level_probs(&self, level: usize) -> Vec<f64> {
        (0..=level).map(|j| self.prob(level, j)).collect()
    }

    /// Leaf values `f(B_T)`.
    pub fn leaf_values(&self, f: impl Fn(f64) -> Vec<f64>) -> Vec<Vec<f64>> {
        (0..=self.depth)
            .map(|j| f(self.walk(self.depth, j)))
            .collect()
    }
}

/// One vector per node; level `i` holds `i + 1` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeProcess {
    levels: Vec<Vec<Vec<f64>>>,
}

impl TreeProcess {
    pub fn new(levels: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let dim = levels
            .first()
            .and_then(|l| l.first())
            .map(|v| v.len())
            .ok_or_else(|| Error::InvalidParameter("empty tree process".into()))?;
        for (i, l) in levels.iter().enumerate() {
            if l.len() != i + 1 || l.iter().any(|v| v.len() != dim) {
                return Err(Error::InvalidParameter(format!("malformed tree level {i}")));
            }
        }
        Ok(TreeProcess { levels })
    }

    /// Constant value on levels `0..=last`.
    pub fn constant(last: usize, v: Vec<f64>) -> Self {
        TreeProcess {
            levels: (0..=last).map(|i| vec![v.clone(); i + 1]).collect(),
        }
    }

    pub fn from_fn(last: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> Result<Self> {
        Self::new(
            (0..=last)
                .map(|i| (0..=i).map(|j| f(i, j)).collect())
                .collect(),
        )
    }

    pub fn last_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.levels[0][0].len()
    }

    pub fn level(&self, i: usize) -> &[Vec<f64>] {
        &self.levels[i]
    }

    pub fn node(&self, i: usize, j: usize) -> &[f64] {
        &self.levels[i][j]
    }

    pub fn levels(&self) -> &[Vec<Vec<f64>>] {
        &self.levels
    }

    /// `E[V_{i+1} | node (i, j)]`.
    pub fn cond_expect(&self, i: usize, j: usize) -> Vec<f64> {
        let (dn, up) = (&self.levels[i + 1][j], &self.levels[i + 1][j + 1]);
        dn.iter().zip(up).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Two-point martingale difference `(V_up - V_dn) / (2 sqrt(dt))`.
    pub fn martingale_diff(&self, tree: &BinomialTree, i: usize, j: usize) -> Vec<f64> {
        let (dn, up) = (&self.levels[i + 1][j], &self.levels[i + 1][j + 1]);
        let s = 2.0 * tree.sqrt_dt();
        dn.iter().zip(up).map(|(a, b)| (b - a) / s).collect()
    }

    /// `E[f(V_i)]` at level `i`.
    pub fn expect(&self, tree: &BinomialTree, i: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = self.levels[i]
            .iter()
            .enumerate()
            .map(|(j, v)| tree.prob(i, j) * f(v))
            .collect();
        pairwise_sum(&terms)
    }

    pub fn max_dist(&self, other: &TreeProcess) -> f64 {
        self.levels
            .iter()
            .flatten()
            .zip(other.levels.iter().flatten())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }
}

pub type TreeDriverFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Generator `F(t, y, z)`. `Linear` is `a y + b z + c0` with scalar `a, b`.
#[derive(Clone)]
pub enum TreeDriver {
    Linear { a: f64, b: f64, c0: Vec<f64> },
    General(TreeDriverFn),
}

impl std::fmt::Debug for TreeDriver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreeDriver::Linear { a, b, c0 } => write!(f, "Linear {{ a: {a}, b: {b}, c0: {c0:?} }}"),
            TreeDriver::General(_) => write!(f, "General(..)"),
        }
    }
}

impl TreeDriver {
    pub fn zero(dim: usize) -> Self {
        TreeDriver::Linear {
            a: 0.0,
            b: 0.0,
            c0: vec![0.0; dim],
        }
    }

    pub fn linear(a: f64, b: f64, c0: Vec<f64>) -> Self {
        TreeDriver::Linear { a, b, c0 }
    }

    pub fn eval(&self, t: f64, y: &[f64], z: &[f64]) -> Vec<f64> {
        match self {
            TreeDriver::Linear { a, b, c0 } => {
                (0..y.len()).map(|c| a * y[c] + b * z[c] + c0[c]).collect()
            }
            TreeDriver::General(f) => f(t, y, z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsviSolution {
    pub tree: BinomialTree,
    /// Levels `0..=n`.
    pub y: TreeProcess,
    /// Levels `0..n`.
    pub z: TreeProcess,
    /// Levels `0..n`.
    pub h: TreeProcess,
    /// Fitzpatrick gap of `(Y, H)` per node, levels `0..n`.
    pub gaps: Vec<Vec<f64>>,
    pub terminal_defect: f64,
}

impl BsviSolution {
    pub fn max_gap(&self) -> f64 {
        self.gaps
            .iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    /// `max |Y_i - E_i Y_{i+1} - dt F(t_i, Y_i, Z_i) + dt H_i|` over nodes.
    pub fn node_identity_residual(&self, f: &TreeDriver) -> f64 {
        let dt = self.tree.dt();
        let mut worst: f64 = 0.0;
        for i in 0..self.tree.depth {
            for j in 0..=i {
                let e = self.y.cond_expect(i, j);
                let y = self.y.node(i, j);
                let fv = f.eval(self.tree.time(i), y, self.z.node(i, j));
                let h = self.h.node(i, j);
                for c in 0..y.len() {
                    worst = worst.max((y[c] - e[c] - dt * fv[c] + dt * h[c]).abs());
                }
            }
        }
        worst
    }

    /// Per level, `E|Y_{i+1}|^2 - E|Y_i|^2 - E|Z_i|^2 dt - 2E<Y_i, H_i - F_i> dt
    /// - E|H_i - F_i|^2 dt^2`, which vanishes on every scheme output.
    pub fn energy_residuals(&self, f: &TreeDriver) -> Vec<f64> {
        let tree = &self.tree;
        let dt = tree.dt();
        (0..tree.depth)
            .map(|i| {
                let terms: Vec<f64> = (0..=i)
                    .map(|j| {
                        let y = self.y.node(i, j);
                        let z = self.z.node(i, j);
                        let fv = f.eval(tree.time(i), y, z);
                        let d: Vec<f64> = self
                            .h
                            .node(i, j)
                            .iter()
                            .zip(&fv)
                            .map(|(h, f)| h - f)
                            .collect();
                        tree.prob(i, j)
                            * (dot(y, y)
                                + dot(z, z) * dt
                                + 2.0 * dot(y, &d) * dt
                                + dot(&d, &d) * dt * dt)
                    })
                    .collect();
                self.y.expect(tree, i + 1, |v| dot(v, v)) - pairwise_sum(&terms)
            })
            .collect()
    }

    /// Continuous-time energy balance on level `i`:
    /// `E|Y_i|^2 + sum_{r>=i} E|Z_r|^2 dt - E|xi|^2 - 2 sum_{r>=i} E<Y_r, F_r - H_r> dt`.
    pub fn energy_balance(&self, f: &TreeDriver, i: usize) -> f64 {
        let tree = &self.tree;
        let dt = tree.dt();
        let mut acc =
            self.y.expect(tree, i, |v| dot(v, v)) - self.y.expect(tree, tree.depth, |v| dot(v, v));
        for r in i..tree.depth {
            let terms: Vec<f64> = (0..=r)
                .map(|j| {
                    let y = self.y.node(r, j);
                    let z = self.z.node(r, j);
                    let fv = f.eval(tree.time(r), y, z);
                    let d: Vec<f64> = fv
                        .iter()
                        .zip(self.h.node(r, j))
                        .map(|(f, h)| f - h)
                        .collect();
                    tree.prob(r, j) * (dot(z, z) - 2.0 * dot(y, &d)) * dt
                })
                .collect();
            acc += pairwise_sum(&terms);
        }
        acc
    }

    /// CSV `level,node,Y,Z,H,gap`; leaves leave `Z`, `H`, `gap` empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.y.dim();
        let cols = |name: &str| -> Vec<String> {
            if d == 1 {
                vec![name.to_string()]
            } else {
                (1..=d).map(|c| format!("{name}{c}")).collect()
            }
        };
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["level".to_string(), "node".to_string()];
        for n in ["Y", "Z", "H"] {
            header.extend(cols(n));
        }
        header.push("gap".into());
        wr.write_record(&header)?;
        for i in 0..=self.tree.depth {
            for j in 0..=i {
                let mut row = vec![i.to_string(), j.to_string()];
                row.extend(self.y.node(i, j).iter().map(|v| fmt_f64(*v)));
                if i < self.tree.depth {
                    row.extend(self.z.node(i, j).iter().map(|v| fmt_f64(*v)));
                    row.extend(self.h.node(i, j).iter().map(|v| fmt_f64(*v)));
                    row.push(fmt_f64(self.gaps[i][j]));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), 2 * d + 1));
                }
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_leaves(phi: &OperatorSpec, tree: &BinomialTree, xi: &[Vec<f64>]) -> Result<()> {
    if xi.len() != tree.depth + 1 {
        return Err(Error::InvalidParameter(format!(
            "expected {} leaf values, got {}",
            tree.depth + 1,
            xi.len()
        )));
    }
    for v in xi {
        if v.len() != phi.dim {
            return Err(Error::Dimension {
                expected: phi.dim,
                got: v.len(),
            });
        }
        let dist = phi.domain_distance(v)?;
        if dist > 1e-12 * (1.0 + norm_inf(v)) {
            return Err(Error::OutsideDomain { distance: dist });
        }
    }
    Ok(())
}

/// How the per-node inclusion is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum NodeStep {
    /// `y = J_dt(w)`.
    Resolvent,
    /// `y + dt A_eps(y) = w`, solved in closed form through `J_{eps+dt}`.
    Penalized { eps: f64 },
}

fn node_map(phi: &OperatorSpec, step: NodeStep, dt: f64, w: &[f64]) -> Result<Vec<f64>> {
    match step {
        NodeStep::Resolvent => phi.resolvent(dt, w),
        NodeStep::Penalized { eps } => {
            let j = phi.resolvent(eps + dt, w)?;
            let r = dt / (eps + dt);
            Ok(w.iter().zip(&j).map(|(a, b)| a - r * (a - b)).collect())
        }
    }
}

/// Backward recursion with `Z` from the two children and the implicit node
/// problem `y = J_dt(E_i Y_{i+1} + dt F(t_i, y, Z_i))` solved by fixed point.
pub fn solve_bsvi_tree(
    phi: &OperatorSpec,
    f: &TreeDriver,
    xi: &[Vec<f64>],
    tree: &BinomialTree,
) -> Result<BsviSolution> {
    solve_bsvi_tree_with(phi, f, xi, tree, NodeStep::Resolvent)
}

pub fn solve_bsvi_tree_with(
    phi: &OperatorSpec,
    f: &TreeDriver,
    xi: &[Vec<f64>],
    tree: &BinomialTree,
    step: NodeStep,
) -> Result<BsviSolution> {
    if !phi.has_potential() {
        return Err(Error::InvalidParameter(
            "operator is not a subdifferential".into(),
        ));
    }
    if let NodeStep::Penalized { eps } = step {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(
                "penalization eps must be positive".into(),
            ));
        }
    }
    check_leaves(phi, tree, xi)?;
    let n = tree.depth;
    let dt = tree.dt();
    let d = phi.dim;
    let mut ys: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n + 1];
    let mut zs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    let mut hs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    ys[n] = xi.to_vec();
    for i in (0..n).rev() {
        let t = tree.time(i);
        let next = &ys[i + 1];
        let nodes = (0..=i)
            .into_par_iter()
            .map(|j| {
                let (dn, up) = (&next[j], &next[j + 1]);
                let e: Vec<f64> = (0..d).map(|c| 0.5 * (dn[c] + up[c])).collect();
                let z: Vec<f64> = (0..d)
                    .map(|c| (up[c] - dn[c]) / (2.0 * tree.sqrt_dt()))
                    .collect();
                let step_at = |y: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
                    let fv = f.eval(t, y, &z);
                    let w: Vec<f64> = (0..d).map(|c| e[c] + dt * fv[c]).collect();
                    if w.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NodeDivergence { level: i, node: j });
                    }
                    let y = node_map(phi, step, dt, &w)?;
                    Ok((w, y))
                };
                let mut y = node_map(phi, step, dt, &e)?;
                let mut converged = false;
                for _ in 0..NODE_MAX_ITER {
                    let (_, y_new) = step_at(&y)?;
                    let delta = y_new
                        .iter()
                        .zip(&y)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    y = y_new;
                    if delta <= NODE_TOL * (1.0 + norm_inf(&y)) {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(Error::NodeDivergence { level: i, node: j });
                }
                // one more step so that (y, h) is an exact graph pair
                let (w, y) = step_at(&y)?;
                let h: Vec<f64> = (0..d).map(|c| (w[c] - y[c]) / dt).collect();
                Ok((y, z, h))
            })
            .collect::<Result<Vec<_>>>()?;
        for (y, z, h) in nodes {
            ys[i].push(y);
            zs[i].push(z);
            hs[i].push(h);
        }
    }
    finish_solution(phi, tree, xi, ys, zs, hs)
}

fn finish_solution(
    phi: &OperatorSpec,
    tree: &BinomialTree,
    xi: &[Vec<f64>],
    ys: Vec<Vec<Vec<f64>>>,
    zs: Vec<Vec<Vec<f64>>>,
    hs: Vec<Vec<Vec<f64>>>,
) -> Result<BsviSolution> {
    let gaps = (0..tree.depth)
        .map(|i| {
            (0..=i)
                .map(|j| Ok(fitz_gap(phi, &ys[i][j], &hs[i][j], None)?.gap))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let terminal_defect = ys[tree.depth]
        .iter()
        .zip(xi)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    Ok(BsviSolution {
        tree: *tree,
        y: TreeProcess::new(ys)?,
        z: TreeProcess::new(zs)?,
        h: TreeProcess::new(hs)?,
        gaps,
        terminal_defect,
    })
}

/// `Y_i = E[eta | node]` and its two-point representation integrand `Z`.
pub fn martingale_representation(
    tree: &BinomialTree,
    eta: &[Vec<f64>],
) -> Result<(Vec<f64>, TreeProcess, TreeProcess)> {
    if eta.len() != tree.depth + 1 {
        return Err(Error::InvalidParameter(
            "one leaf value per terminal node".into(),
        ));
    }
    let n = tree.depth;
    let mut levels: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n + 1];
    levels[n] = eta.to_vec();
    for i in (0..n).rev() {
        levels[i] = (0..=i)
            .map(|j| {
                levels[i + 1][j]
                    .iter()
                    .zip(&levels[i + 1][j + 1])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect()
            })
            .collect();
    }
    let y = TreeProcess::new(levels)?;
    let z = TreeProcess::from_fn(n - 1, |i, j| y.martingale_diff(tree, i, j))?;
    Ok((y.node(0, 0).to_vec(), y, z))
}

/// Largest `|eta(leaf) - Y_0 - sum_i Z_i dB_i|` over all `2^n` paths.
pub fn reconstruction_residual(
    tree: &BinomialTree,
    eta: &[Vec<f64>],
    y0: &[f64],
    z: &TreeProcess,
) -> Result<f64> {
    let n = tree.depth;
    if n > 24 {
        return Err(Error::InvalidParameter(
            "path enumeration limited to depth 24".into(),
        ));
    }
    let s = tree.sqrt_dt();
    let worst = (0..1usize << n)
        .into_par_iter()
        .map(|path| {
            let mut acc = y0.to_vec();
            let mut j = 0;
            for i in 0..n {
                let up = (path >> i) & 1 == 1;
                let db = if up { s } else { -s };
                for (a, zc) in acc.iter_mut().zip(z.node(i, j)) {
                    *a += zc * db;
                }
                j += up as usize;
            }
            acc.iter()
                .zip(&eta[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Per-coordinate potential for separable subdifferentials.
#[derive(Debug, Clone, Copy, PartialEq)]
enum CoordPotential {
    Indicator { lo: f64, hi: f64 },
    Abs { w: f64 },
    Quadratic { c: f64 },
}

fn coord_potentials(phi: &OperatorSpec) -> Result<Vec<CoordPotential>> {
    let d = phi.dim;
    Ok(match &phi.kind {
        OperatorKind::NormalConeBox { lo, hi } => (0..d)
            .map(|c| CoordPotential::Indicator {
                lo: lo[c],
                hi: hi[c],
            })
            .collect(),
        OperatorKind::SubdiffIndicatorInterval { a, b } => {
            vec![CoordPotential::Indicator { lo: *a, hi: *b }; d]
        }
        OperatorKind::SubdiffAbsSum { weights } => {
            weights.iter().map(|&w| CoordPotential::Abs { w }).collect()
        }
        OperatorKind::ScaledIdentity { c } => vec![CoordPotential::Quadratic { c: *c }; d],
        _ => {
            return Err(Error::InvalidParameter(format!(
                "brute force needs a separable potential, got {}",
                phi.tag()
            )))
        }
    })
}

impl CoordPotential {
    fn value(&self, y: f64) -> f64 {
        match *self {
            CoordPotential::Indicator { .. } => 0.0,
            CoordPotential::Abs { w } => w * y.abs(),
            CoordPotential::Quadratic { c } => 0.5 * c * y * y,
        }
    }
}

/// `sup_u [-alpha u^2 + beta u - phi(u)]` and a maximizer; `tie` breaks ties
/// when the maximizer set is an interval.
fn inner_sup_1d(p: CoordPotential, alpha: f64, beta: f64, tie: f64) -> (f64, f64) {
    let val = |u: f64| -alpha * u * u + beta * u - p.value(u);
    match p {
        CoordPotential::Indicator { lo, hi } => {
            let u = if alpha > 0.0 {
                (beta / (2.0 * alpha)).clamp(lo, hi)
            } else if beta > 0.0 {
                hi
            } else if beta < 0.0 {
                lo
            } else {
                tie.clamp(lo, hi)
            };
            if u.is_infinite() {
                (f64::INFINITY, u)
            } else {
                (val(u), u)
            }
        }
        CoordPotential::Abs { w } => {
            let soft = beta.signum() * (beta.abs() - w).max(0.0);
            if alpha > 0.0 {
                let u = soft / (2.0 * alpha);
                (val(u), u)
            } else if soft != 0.0 {
                (f64::INFINITY, soft.signum() * f64::INFINITY)
            } else {
                (0.0, 0.0)
            }
        }
        CoordPotential::Quadratic { c } => {
            let a = alpha + 0.5 * c;
            if a > 0.0 {
                let u = beta / (2.0 * a);
                (val(u), u)
            } else if beta != 0.0 {
                (f64::INFINITY, beta.signum() * f64::INFINITY)
            } else {
                (0.0, tie)
            }
        }
    }
}

/// The backward functional in the node values `Y`, which determine
/// `eta = Y_n`, `G_i = (Y_i - E_i Y_{i+1}) / dt` and `Z` one-to-one. For a
/// linear driver the supremum over `V` is explicit and leaves, per node and
/// coordinate, `sup_U [-alpha U^2 + beta U - phi(U)] + const + phi(Y)` with
/// `beta` and `const` affine and quadratic in `Y`.
struct NodeProgram<'a> {
    tree: BinomialTree,
    pots: Vec<CoordPotential>,
    a: f64,
    b: f64,
    c0: &'a [f64],
    xi: &'a [Vec<f64>],
}

impl NodeProgram<'_> {
    fn dim(&self) -> usize {
        self.pots.len()
    }

    fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * (i + 1) / 2 + j) * self.dim() + c
    }

    fn n_vars(&self) -> usize {
        self.index(self.tree.depth + 1, 0, 0)
    }

    fn n_duals(&self) -> usize {
        self.index(self.tree.depth, 0, 0)
    }

    fn alpha(&self) -> f64 {
        -(self.a + 0.5 * self.b * self.b)
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.tree.prob(i, j) * self.tree.dt()
    }

    /// `(Y, G, Z)` at node `(i, j)`, coordinate `c`.
    fn locals(&self, y: &[f64], i: usize, j: usize, c: usize) -> (f64, f64, f64) {
        let yv = y[self.index(i, j, c)];
        let dn = y[self.index(i + 1, j, c)];
        let up = y[self.index(i + 1, j + 1, c)];
        let g = (yv - 0.5 * (dn + up)) / self.tree.dt();
        let z = (up - dn) / (2.0 * self.tree.sqrt_dt());
        (yv, g, z)
    }

    fn beta_const(&self, y: &[f64], i: usize, j: usize, c: usize) -> (f64, f64) {
        let (a, b, c0) = (self.a, self.b, self.c0[c]);
        let (yv, g, z) = self.locals(y, i, j, c);
        let beta = b * z + c0 - g - a * yv - b * b * yv;
        let konst = yv * (g - b * z - c0) + 0.5 * b * b * yv * yv;
        (beta, konst)
    }

    /// Adds `w * (dY, dG, dZ)` at node `(i, j)` to a gradient in `Y`.
    #[allow(clippy::too_many_arguments)]
    fn scatter(
        &self,
        out: &mut [f64],
        i: usize,
        j: usize,
        c: usize,
        w: f64,
        dy: f64,
        dg: f64,
        dz: f64,
    ) {
        let (dt, s) = (self.tree.dt(), self.tree.sqrt_dt());
        out[self.index(i, j, c)] += w * (dy + dg / dt);
        out[self.index(i + 1, j, c)] += w * (-dg / (2.0 * dt) - dz / (2.0 * s));
        out[self.index(i + 1, j + 1, c)] += w * (-dg / (2.0 * dt) + dz / (2.0 * s));
    }

    /// The objective, with the inner supremum in closed form.
    fn value(&self, y: &[f64]) -> f64 {
        let (n, d) = (self.tree.depth, self.dim());
        let mut terms = Vec::with_capacity(self.n_vars());
        for j in 0..=n {
            for c in 0..d {
                let e = y[self.index(n, j, c)] - self.xi[j][c];
                terms.push(0.5 * self.tree.prob(n, j) * e * e);
            }
        }
        for i in 0..n {
            for j in 0..=i {
                for c in 0..d {
                    let (beta, konst) = self.beta_const(y, i, j, c);
                    let yv = y[self.index(i, j, c)];
                    let pot = self.pots[c];
                    let (sup, _) = inner_sup_1d(pot, self.alpha(), beta, yv);
                    terms.push(self.weight(i, j) * (sup + konst + pot.value(yv)));
                }
            }
        }
        pairwise_sum(&terms)
    }

    /// `beta` per node and coordinate.
    fn betas(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_duals()];
        for i in 0..self.tree.depth {
            for j in 0..=i {
                for c in 0..self.dim() {
                    out[self.index(i, j, c)] = self.beta_const(y, i, j, c).0;
                }
            }
        }
        out
    }

    /// Gradient of the smooth part: terminal term plus weighted `const`.
    fn smooth_grad(&self, y: &[f64]) -> Vec<f64> {
        let (n, d, b) = (self.tree.depth, self.dim(), self.b);
        let mut out = vec![0.0; self.n_vars()];
        for j in 0..=n {
            for c in 0..d {
                let k = self.index(n, j, c);
                out[k] += self.tree.prob(n, j) * (y[k] - self.xi[j][c]);
            }
        }
        for i in 0..n {
            for j in 0..=i {
                for c in 0..d {
                    let (yv, g, z) = self.locals(y, i, j, c);
                    let dy = g - b * z - self.c0[c] + b * b * yv;
                    self.scatter(&mut out, i, j, c, self.weight(i, j), dy, yv, -b * yv);
                }
            }
        }
        out
    }

    /// Gradient in `Y` of `sum_k w_k beta_k(Y) u_k`.
    fn coupling_adjoint(&self, u: &[f64]) -> Vec<f64> {
        let (a, b) = (self.a, self.b);
        let mut out = vec![0.0; self.n_vars()];
        for i in 0..self.tree.depth {
            for j in 0..=i {
                for c in 0..self.dim() {
                    let uk = u[self.index(i, j, c)];
                    self.scatter(
                        &mut out,
                        i,
                        j,
                        c,
                        self.weight(i, j),
                        -(a + b * b) * uk,
                        -uk,
                        b * uk,
                    );
                }
            }
        }
        out
    }

    /// Prox of `tau * sum w_k phi(Y_k)` on levels `< n`; leaves only keep the
    /// domain constraint.
    fn prox(&self, y: &mut [f64], tau: f64) {
        let (n, d) = (self.tree.depth, self.dim());
        for i in 0..=n {
            for j in 0..=i {
                let w = if i < n { tau * self.weight(i, j) } else { 0.0 };
                for c in 0..d {
                    let k = self.index(i, j, c);
                    y[k] = match self.pots[c] {
                        CoordPotential::Indicator { lo, hi } => y[k].clamp(lo, hi),
                        CoordPotential::Abs { w: wc } => {
                            y[k].signum() * (y[k].abs() - w * wc).max(0.0)
                        }
                        CoordPotential::Quadratic { c: cc } => y[k] / (1.0 + w * cc),
                    };
                }
            }
        }
    }

    fn flatten(&self, y: &TreeProcess) -> Vec<f64> {
        y.levels.iter().flatten().flatten().copied().collect()
    }

    fn unflatten(&self, y: &[f64]) -> TreeProcess {
        let d = self.dim();
        TreeProcess {
            levels: (0..=self.tree.depth)
                .map(|i| {
                    (0..=i)
                        .map(|j| y[self.index(i, j, 0)..self.index(i, j, 0) + d].to_vec())
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub solution: BsviSolution,
    pub objective: f64,
    pub iterations: usize,
    /// Running best objective, one entry per evaluation.
    pub trace: Vec<f64>,
}

/// Random feasible starting point: uniform in `[-1, 1]` per node, projected
/// onto the domain.
pub fn random_start(phi: &OperatorSpec, tree: &BinomialTree, seed: u64) -> Result<TreeProcess> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = (0..=tree.depth)
        .map(|i| {
            (0..=i)
                .map(|_| {
                    let v: Vec<f64> = (0..phi.dim)
                        .map(|_| 2.0 * rng.random::<f64>() - 1.0)
                        .collect();
                    phi.project_domain(&v)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    TreeProcess::new(levels)
}

const BRUTE_FORCE_TARGET: f64 = 1e-15;
const BRUTE_FORCE_EVAL_EVERY: usize = 10;

/// Minimizes the backward functional over tree-adapted candidates, starting
/// from `start`. The candidate is parametrized by its node values; the inner
/// supremum is dualized and the saddle problem is solved by a primal-dual
/// proximal iteration (explicit step on the quadratic part, prox of `phi` in
/// `Y`, closed-form prox in the dual variable `U`).
pub fn brute_force_bsvi(
    phi: &OperatorSpec,
    f: &TreeDriver,
    xi: &[Vec<f64>],
    tree: &BinomialTree,
    start: &TreeProcess,
    max_iter: usize,
) -> Result<BruteForceResult> {
    let (a, b, c0) = match f {
        TreeDriver::Linear { a, b, c0 } => (*a, *b, c0.as_slice()),
        TreeDriver::General(_) => {
            return Err(Error::InvalidParameter(
                "brute force needs a linear driver".into(),
            ))
        }
    };
    let d = phi.dim;
    let unknowns = (tree.depth + 1) * (tree.depth + 2) / 2 * d;
    if unknowns > BRUTE_FORCE_MAX_UNKNOWNS {
        return Err(Error::InvalidParameter(format!(
            "{unknowns} unknowns exceed the brute-force limit {BRUTE_FORCE_MAX_UNKNOWNS}"
        )));
    }
    if c0.len() != d || start.dim() != d || start.last_level() != tree.depth {
        return Err(Error::Dimension {
            expected: d,
            got: c0.len(),
        });
    }
    if a + 0.5 * b * b > 0.0 {
        return Err(Error::InvalidParameter("driver is not dissipative".into()));
    }
    check_leaves(phi, tree, xi)?;
    let prog = NodeProgram {
        tree: *tree,
        pots: coord_potentials(phi)?,
        a,
        b,
        c0,
        xi,
    };
    let (nv, nd) = (prog.n_vars(), prog.n_duals());
    let weights: Vec<f64> = (0..tree.depth)
        .flat_map(|i| (0..=i).flat_map(move |j| std::iter::repeat_n((i, j), d)))
        .map(|(i, j)| prog.weight(i, j))
        .collect();

    // operator norms from the explicit matrices of the affine maps
    let zero = vec![0.0; nv];
    let g0 = prog.smooth_grad(&zero);
    let b0 = prog.betas(&zero);
    let mut q = DMatrix::zeros(nv, nv);
    let mut bm = DMatrix::zeros(nd, nv);
    for col in 0..nv {
        let mut e = zero.clone();
        e[col] = 1.0;
        let gq = prog.smooth_grad(&e);
        let be = prog.betas(&e);
        for r in 0..nv {
            q[(r, col)] = gq[r] - g0[r];
        }
        for r in 0..nd {
            bm[(r, col)] = weights[r] * (be[r] - b0[r]);
        }
    }
    let lq = q.symmetric_eigenvalues().max().max(0.0);
    let nb = bm.singular_values().max();
    let sigma = 1.0 / nb;
    let tau = 0.99 / (0.5 * lq + sigma * nb * nb);
    let alpha = prog.alpha();

    let mut y = prog.flatten(start);
    prog.prox(&mut y, 0.0);
    let mut fval = prog.value(&y);
    if !fval.is_finite() {
        return Err(Error::Constraint(
            "objective is infinite at the starting point".into(),
        ));
    }
    let beta = prog.betas(&y);
    let mut u: Vec<f64> = (0..nd)
        .map(|k| inner_sup_1d(prog.pots[k % d], alpha, beta[k], y[k]).1)
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    let mut best = (fval, y.clone());
    let mut trace = vec![fval];
    let mut iterations = 0;
    while iterations < max_iter && best.0 > BRUTE_FORCE_TARGET {
        let gs = prog.smooth_grad(&y);
        let gc = prog.coupling_adjoint(&u);
        let mut y_new: Vec<f64> = (0..nv).map(|k| y[k] - tau * (gs[k] + gc[k])).collect();
        prog.prox(&mut y_new, tau);
        let bar: Vec<f64> = (0..nv).map(|k| 2.0 * y_new[k] - y[k]).collect();
        let beta = prog.betas(&bar);
        for k in 0..nd {
            let sw = sigma * weights[k];
            u[k] = inner_sup_1d(
                prog.pots[k % d],
                alpha + 0.5 / sw,
                u[k] / sw + beta[k],
                u[k],
            )
            .1;
        }
        y = y_new;
        iterations += 1;
        if iterations % BRUTE_FORCE_EVAL_EVERY == 0 {
            fval = prog.value(&y);
            if fval < best.0 {
                best = (fval, y.clone());
            }
            trace.push(best.0);
        }
    }
    let (objective, y) = best;
    if objective > BRUTE_FORCE_TOL {
        return Err(Error::Budget { objective });
    }
    let y = prog.unflatten(&y);
    let n = tree.depth;
    let dt = tree.dt();
    let z = TreeProcess::from_fn(n - 1, |i, j| y.martingale_diff(tree, i, j))?;
    let h = TreeProcess::from_fn(n - 1, |i, j| {
        let yv = y.node(i, j);
        let e = y.cond_expect(i, j);
        let fv = f.eval(tree.time(i), yv, z.node(i, j));
        (0..d).map(|c| fv[c] - (yv[c] - e[c]) / dt).collect()
    })?;
    let solution = finish_solution(phi, tree, xi, y.levels, z.levels, h.levels)?;
    Ok(BruteForceResult {
        solution,
        objective,
        iterations,
        trace,
    })
}

/// Closed-form backward functional for a linear driver, as minimized by
/// [`brute_force_bsvi`].
pub fn node_program_value(
    phi: &OperatorSpec,
    f: &TreeDriver,
    xi: &[Vec<f64>],
    tree: &BinomialTree,
    y: &TreeProcess,
) -> Result<f64> {
    let TreeDriver::Linear { a, b, c0 } = f else {
        return Err(Error::InvalidParameter("linear driver required".into()));
    };
    let prog = NodeProgram {
        tree: *tree,
        pots: coord_potentials(phi)?,
        a: *a,
        b: *b,
        c0,
        xi,
    };
    Ok(prog.value(&prog.flatten(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval() -> OperatorSpec {
        OperatorSpec::interval(1, -1.0, 1.0).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let t = BinomialTree::new(13, 2.0).unwrap();
        for i in 0..=13 {
            let s: f64 = t.level_probs(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!((t.prob(4, 2) - 6.0 / 16.0).abs() < 1e-16);
    }

    #[test]
    fn constant_terminal_value() {
        let t = BinomialTree::new(5, 1.0).unwrap();
        let xi = vec![vec![0.3]; 6];
        let s = solve_bsvi_tree(&interval(), &TreeDriver::zero(1), &xi, &t).unwrap();
        assert!(s.y.levels().iter().flatten().all(|v| v[0] == 0.3));
        assert!(s.z.levels().iter().flatten().all(|v| v[0] == 0.0));
        assert!(s.h.levels().iter().flatten().all(|v| v[0] == 0.0));
    }

    #[test]
    fn interval_martingale_is_conditional_expectation() {
        let t = BinomialTree::new(8, 1.0).unwrap();
        let xi = t.leaf_values(|w| vec![(w * 0.7).sin()]);
        let s = solve_bsvi_tree(&interval(), &TreeDriver::zero(1), &xi, &t).unwrap();
        let (_, y, _) = martingale_representation(&t, &xi).unwrap();
        assert!(s.y.max_dist(&y) < 1e-15);
        assert!(s.h.levels().iter().flatten().all(|v| v[0] == 0.0));
    }

    #[test]
    fn pushing_driver_is_absorbed_by_the_constraint() {
        let phi = OperatorSpec::normal_cone_box(vec![f64::NEG_INFINITY], vec![0.0]).unwrap();
        let t = BinomialTree::new(6, 1.0).unwrap();
        let xi = vec![vec![0.0]; 7];
        let f = TreeDriver::linear(0.0, 0.0, vec![1.0]);
        let s = solve_bsvi_tree(&phi, &f, &xi, &t).unwrap();
        for i in 0..6 {
            for j in 0..=i {
                assert_eq!(s.y.node(i, j), &[0.0]);
                assert!((s.h.node(i, j)[0] - 1.0).abs() < 1e-12);
            }
        }
        assert!(s.max_gap() <= 1e-10);
        assert!(s.node_identity_residual(&f) < 1e-12);
    }

    #[test]
    fn energy_identity_holds_per_level() {
        let t = BinomialTree::new(10, 1.0).unwrap();
        let xi = t.leaf_values(|w| vec![(1.5 * w).clamp(-1.0, 1.0)]);
        let f = TreeDriver::linear(-0.5, 0.2, vec![0.3]);
        let s = solve_bsvi_tree(&interval(), &f, &xi, &t).unwrap();
        assert!(s.energy_residuals(&f).iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn divergent_node_problem_is_reported() {
        let phi = OperatorSpec::scaled_identity(1, 0.0).unwrap();
        let t = BinomialTree::new(1, 10.0).unwrap();
        let f = TreeDriver::linear(1.0, 0.0, vec![0.0]);
        let r = solve_bsvi_tree(&phi, &f, &[vec![1.0], vec![2.0]], &t);
        assert!(matches!(
            r,
            Err(Error::NodeDivergence { level: 0, node: 0 })
        ));
    }

    #[test]
    fn leaves_outside_domain_are_rejected() {
        let t = BinomialTree::new(2, 1.0).unwrap();
        let r = solve_bsvi_tree(
            &interval(),
            &TreeDriver::zero(1),
            &[vec![0.0], vec![2.0], vec![0.0]],
            &t,
        );
        assert!(matches!(r, Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn representation_of_walk_functionals() {
        let t = BinomialTree::new(12, 1.0).unwrap();
        let eta = t.leaf_values(|w| vec![w * w]);
        let (y0, y, z) = martingale_representation(&t, &eta).unwrap();
        assert!((y0[0] - 1.0).abs() < 1e-12);
        for i in 0..12 {
            for j in 0..=i {
                let b = t.walk(i, j);
                assert!((z.node(i, j)[0] - 2.0 * b).abs() < 1e-12);
                assert!((y.node(i, j)[0] - b * b - (1.0 - t.time(i))).abs() < 1e-12);
            }
        }
        assert!(reconstruction_residual(&t, &eta, &y0, &z).unwrap() < 1e-12);
    }

    #[test]
    fn inner_sup_matches_grid_search() {
        let cases = [
            (CoordPotential::Indicator { lo: -1.0, hi: 1.0 }, 0.5, 0.3),
            (CoordPotential::Indicator { lo: -1.0, hi: 1.0 }, 0.0, -0.3),
            (CoordPotential::Indicator { lo: -1.0, hi: 1.0 }, 0.1, 2.0),
            (CoordPotential::Abs { w: 0.4 }, 0.5, 1.0),
            (CoordPotential::Abs { w: 0.4 }, 0.5, -0.2),
            (CoordPotential::Quadratic { c: 1.0 }, 0.25, -0.7),
        ];
        for (p, alpha, beta) in cases {
            let (v, u) = inner_sup_1d(p, alpha, beta, 0.0);
            let grid = (0..=40_000).map(|k| -2.0 + 1e-4 * k as f64);
            let brute = grid
                .filter(|&x| !matches!(p, CoordPotential::Indicator { lo, hi } if x < lo || x > hi))
                .map(|x| -alpha * x * x + beta * x - p.value(x))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v - brute).abs() < 1e-7, "{p:?} {v} {brute}");
            assert!((-alpha * u * u + beta * u - p.value(u) - v).abs() < 1e-15);
        }
    }

    #[test]
    fn node_program_vanishes_at_tree_solution() {
        let t = BinomialTree::new(4, 1.0).unwrap();
        let xi = t.leaf_values(|w| vec![(2.0 * w).clamp(-1.0, 1.0)]);
        for f in [
            TreeDriver::zero(1),
            TreeDriver::linear(-0.5, 0.0, vec![0.0]),
        ] {
            let s = solve_bsvi_tree(&interval(), &f, &xi, &t).unwrap();
            let v = node_program_value(&interval(), &f, &xi, &t, &s.y).unwrap();
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn smooth_part_gradients_match_finite_differences() {
        let t = BinomialTree::new(3, 1.0).unwrap();
        let phi = OperatorSpec::scaled_identity(1, 0.5).unwrap();
        let xi = t.leaf_values(|w| vec![w]);
        let c0 = vec![0.1];
        let prog = NodeProgram {
            tree: t,
            pots: coord_potentials(&phi).unwrap(),
            a: -0.4,
            b: 0.3,
            c0: &c0,
            xi: &xi,
        };
        let y = prog.flatten(&random_start(&phi, &t, 5).unwrap());
        let u: Vec<f64> = (0..prog.n_duals()).map(|k| 0.1 * k as f64 - 0.3).collect();
        // Lagrangian without the U-only and phi terms
        let lag = |y: &[f64]| {
            let mut s = 0.0;
            for j in 0..=3 {
                let e = y[prog.index(3, j, 0)] - xi[j][0];
                s += 0.5 * t.prob(3, j) * e * e;
            }
            for i in 0..3 {
                for j in 0..=i {
                    let (beta, konst) = prog.beta_const(y, i, j, 0);
                    s += prog.weight(i, j) * (beta * u[prog.index(i, j, 0)] + konst);
                }
            }
            s
        };
        let gs = prog.smooth_grad(&y);
        let gc = prog.coupling_adjoint(&u);
        let h = 1e-6;
        for k in 0..prog.n_vars() {
            let mut p = y.clone();
            p[k] += h;
            let mut m = y.clone();
            m[k] -= h;
            let fd = (lag(&p) - lag(&m)) / (2.0 * h);
            assert!(
                (fd - gs[k] - gc[k]).abs() < 1e-7,
                "{k} {fd} {}",
                gs[k] + gc[k]
            );
        }
    }

    #[test]
    fn brute_force_agrees_with_recursion() {
        for depth in [3, 4] {
            let t = BinomialTree::new(depth, 1.0).unwrap();
            let xi = t.leaf_values(|w| vec![(2.0 * w).clamp(-1.0, 1.0)]);
            for f in [
                TreeDriver::zero(1),
                TreeDriver::linear(-0.5, 0.0, vec![0.0]),
            ] {
                let s = solve_bsvi_tree(&interval(), &f, &xi, &t).unwrap();
                let start = random_start(&interval(), &t, 11).unwrap();
                let r = brute_force_bsvi(&interval(), &f, &xi, &t, &start, 200_000).unwrap();
                let dist = r.solution.y.max_dist(&s.y);
                assert!(r.objective <= BRUTE_FORCE_TOL);
                assert!(dist < 1e-5, "depth {depth} {f:?}: {dist:e}");
            }
        }
    }

    #[test]
    fn brute_force_with_z_dependence_and_abs_potential() {
        let t = BinomialTree::new(4, 1.0).unwrap();
        let phi = OperatorSpec::abs_sum(vec![0.3]).unwrap();
        let xi = t.leaf_values(|w| vec![w + 0.2]);
        let f = TreeDriver::linear(-0.5, 0.4, vec![0.1]);
        let s = solve_bsvi_tree(&phi, &f, &xi, &t).unwrap();
        assert!(node_program_value(&phi, &f, &xi, &t, &s.y).unwrap().abs() < 1e-12);
        let start = random_start(&phi, &t, 3).unwrap();
        let r = brute_force_bsvi(&phi, &f, &xi, &t, &start, 200_000).unwrap();
        assert!(r.solution.y.max_dist(&s.y) < 1e-5);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

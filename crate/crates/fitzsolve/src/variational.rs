//! Convex functionals that vanish exactly at solutions: one each for the
//! Skorohod problem, the additive SDE, the backward representation, the SVI
//! and the BSVI. Suprema over infinite sets are replaced by finite probe sets
//! plus closed forms where available, so every reported total is a lower
//! bound of the true functional.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backward_tree::{
    node_program_value, BinomialTree, BsviSolution, TreeDriver, TreeProcess,
};
use crate::error::{Error, Result};
use crate::fitzpatrick::{default_mode, fitz_gap, path_fitz_gap_with, PathGapMode, Sampling};
use crate::forward_sde::{DiffusionPath, FieldCoefficients, SdeEnsemble, WienerEnsemble};
use crate::gsp::{path_gap_over, GspSolution};
use crate::linalg::{dist, dot, matvec, mean_se, norm, pairwise_sum};
use crate::operators::{GraphPair, OperatorKind, OperatorSpec};
use crate::paths::{fmt_f64, BVPath, GridPath};

/// Relative tolerance for the affine constraints on candidates.
pub const CONSTRAINT_TOL: f64 = 1e-9;
pub const CONVEXITY_LAMBDAS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
    pub se: Option<f64>,
}

impl Term {
    fn new(name: &str, value: f64, se: Option<f64>) -> Self {
        Term {
            name: name.into(),
            value,
            se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub label: String,
    pub mean: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub functional: String,
    pub total: f64,
    /// Standard error of `total`; `None` when all expectations are exact.
    pub se: Option<f64>,
    /// Summands of `total`.
    pub terms: Vec<Term>,
    pub probes_used: usize,
    /// The total is a sup over a finite subset of the index set.
    pub certified_lower_bound: bool,
    pub probe_values: Vec<ProbeValue>,
    /// Extra quantities that are not part of `total`.
    pub notes: Vec<Term>,
}

impl FunctionalReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    pub fn note(&self, name: &str) -> Option<f64> {
        self.notes.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

fn ext_sum(xs: &[f64]) -> f64 {
    if xs.contains(&f64::INFINITY) {
        f64::INFINITY
    } else {
        pairwise_sum(xs)
    }
}

fn se_of(xs: &[f64], exact: bool) -> (f64, Option<f64>) {
    if xs.contains(&f64::INFINITY) {
        return (f64::INFINITY, None);
    }
    let (m, se) = mean_se(xs);
    (m, (!exact).then_some(se))
}

/// Candidates closed under affine combination.
pub trait Mixable: Sized {
    /// `lambda * self + (1 - lambda) * other`.
    fn mix(&self, other: &Self, lambda: f64) -> Result<Self>;
}

/// `max_lambda [J(lambda p + (1-lambda) q) - lambda J(p) - (1-lambda) J(q)]`.
/// Pairs with an infinite endpoint value impose no constraint.
pub fn jhat_convexity_probe<C: Mixable>(
    eval: impl Fn(&C) -> Result<f64>,
    p: &C,
    q: &C,
    lambdas: &[f64],
) -> Result<f64> {
    let jp = eval(p)?;
    let jq = eval(q)?;
    if !jp.is_finite() || !jq.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut worst = f64::NEG_INFINITY;
    for &l in lambdas {
        let v = eval(&p.mix(q, l)?)? - l * jp - (1.0 - l) * jq;
        worst = worst.max(v);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Skorohod problem

#[derive(Debug, Clone, PartialEq)]
pub struct GspCandidate {
    pub a: Vec<f64>,
    pub x: GridPath,
    pub k: BVPath,
    pub mu: GridPath,
}

impl GspCandidate {
    pub fn from_solution(x0: &[f64], m: &GridPath, sol: &GspSolution) -> Self {
        GspCandidate {
            a: x0.to_vec(),
            x: sol.x.clone(),
            k: sol.k.clone(),
            mu: m.clone(),
        }
    }

    /// `max_i |x_i + k_i - a - mu_i|`.
    pub fn node_defect(&self) -> Result<f64> {
        self.x.check_same_grid(self.k.grid())?;
        self.x.check_same_grid(self.mu.grid())?;
        let kv = self.k.values();
        let mut worst: f64 = 0.0;
        for (i, k) in kv.iter().enumerate() {
            let x = self.x.value(i);
            let mu = self.mu.value(i);
            let r: Vec<f64> = (0..x.len())
                .map(|c| x[c] + k[c] - self.a[c] - mu[c])
                .collect();
            worst = worst.max(norm(&r));
        }
        Ok(worst)
    }

    fn scale(&self) -> f64 {
        1.0 + norm(&self.a) + self.x.sup_norm() + self.mu.sup_norm() + self.k.total_variation()
    }
}

impl Mixable for GspCandidate {
    fn mix(&self, other: &Self, l: f64) -> Result<Self> {
        Ok(GspCandidate {
            a: self
                .a
                .iter()
                .zip(&other.a)
                .map(|(p, q)| l * p + (1.0 - l) * q)
                .collect(),
            x: self.x.combine(l, &other.x, 1.0 - l)?,
            k: self.k.combine(l, &other.k, 1.0 - l)?,
            mu: self.mu.combine(l, &other.mu, 1.0 - l)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalParams {
    /// Variation budget.
    pub r: f64,
    /// Modulus table `(eps, alpha(eps))`, increasing in `eps`, starting at `(0, 0)`.
    pub alpha: Vec<(f64, f64)>,
    pub probe_nu: Vec<GridPath>,
    pub probe_graph: Vec<GraphPair>,
}

impl FunctionalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidParameter("R must be positive".into()));
        }
        match self.alpha.first() {
            Some(&(e, a)) if e == 0.0 && a == 0.0 => {}
            _ => {
                return Err(Error::InvalidParameter(
                    "alpha table must start at (0, 0)".into(),
                ))
            }
        }
        if self
            .alpha
            .windows(2)
            .any(|w| !(w[1].0 > w[0].0) || w[1].1 < w[0].1)
        {
            return Err(Error::InvalidParameter(
                "alpha must be nondecreasing".into(),
            ));
        }
        for (p, nu) in self.probe_nu.iter().enumerate() {
            for &(e, a) in &self.alpha {
                let md = nu.modulus(e);
                if md > a * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::InvalidParameter(format!(
                        "probe {p} has modulus {md:e} > alpha({e}) = {a:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `alpha` is the empirical grid modulus of `drivers` at `eps = 0, dt,
    /// 2 dt, 4 dt, ...` up to the horizon.
    pub fn from_drivers(
        r: f64,
        drivers: &[GridPath],
        probe_nu: Vec<GridPath>,
        probe_graph: Vec<GraphPair>,
    ) -> Result<Self> {
        let first = drivers
            .first()
            .ok_or_else(|| Error::InvalidParameter("no drivers".into()))?;
        let grid = first.grid();
        let dt = (0..first.steps()).map(|i| first.dt(i)).fold(0.0, f64::max);
        let mut alpha = vec![(0.0, 0.0)];
        let mut e = dt;
        let horizon = grid[grid.len() - 1] - grid[0];
        loop {
            let e_c = e.min(horizon);
            let a = drivers.iter().map(|d| d.modulus(e_c)).fold(0.0, f64::max);
            let prev = alpha.last().unwrap().1;
            alpha.push((e_c, a.max(prev)));
            if e_c >= horizon {
                break;
            }
            e *= 2.0;
        }
        let p = FunctionalParams {
            r,
            alpha,
            probe_nu,
            probe_graph,
        };
        p.validate()?;
        Ok(p)
    }
}

/// `sum_i <nu_{i+1}, dk_i>`.
fn stieltjes(nu: &GridPath, k: &BVPath) -> f64 {
    let terms: Vec<f64> = (0..k.steps())
        .map(|i| dot(nu.value(i + 1), k.increment(i)))
        .collect();
    pairwise_sum(&terms)
}

fn sup_dist(a: &GridPath, b: &GridPath) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(p, q)| dist(p, q))
        .fold(0.0, f64::max)
}

fn gsp_jhat_inner(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    params: &FunctionalParams,
    cand: &GspCandidate,
    include_mu: bool,
) -> Result<FunctionalReport> {
    params.validate()?;
    cand.x.check_same_grid(m.grid())?;
    if cand.a.len() != a.dim || x0.len() != a.dim {
        return Err(Error::Dimension {
            expected: a.dim,
            got: cand.a.len(),
        });
    }
    let defect = cand.node_defect()?;
    if defect > CONSTRAINT_TOL * cand.scale() {
        return Err(Error::Constraint(format!(
            "x + k != a + mu (defect {defect:e})"
        )));
    }
    let tv = cand.k.total_variation();
    if tv > params.r * (1.0 + 1e-12) {
        return Err(Error::Constraint(format!(
            "variation {tv} exceeds R = {}",
            params.r
        )));
    }
    let initial = dist(&cand.a, x0).powi(2);
    let (gap, exact) = path_gap_over(a, &cand.x, &cand.k, &params.probe_graph)?;
    let mu_dist = sup_dist(&cand.mu, m);
    let mu_term = 2.0 * params.r * mu_dist;
    let mu_k = stieltjes(&cand.mu, &cand.k);
    let mut nus: Vec<&GridPath> = params.probe_nu.iter().collect();
    nus.push(m);
    if include_mu {
        nus.push(&cand.mu);
    }
    let mut nu_sup = f64::NEG_INFINITY;
    let mut probe_values = Vec::with_capacity(nus.len());
    for (i, nu) in nus.iter().enumerate() {
        nu.check_same_grid(m.grid())?;
        let v = mu_k - stieltjes(nu, &cand.k) - params.r * sup_dist(nu, m);
        nu_sup = nu_sup.max(v);
        probe_values.push(ProbeValue {
            label: format!("nu{i}"),
            mean: v,
            se: None,
        });
    }
    let terms = vec![
        Term::new("initial", initial, None),
        Term::new("fitz_gap", gap, None),
        Term::new("mu_distance", mu_term, None),
        Term::new("nu_sup", nu_sup, None),
    ];
    let total = ext_sum(&terms.iter().map(|t| t.value).collect::<Vec<_>>());
    Ok(FunctionalReport {
        functional: "gsp".into(),
        total,
        se: None,
        terms,
        probes_used: nus.len() + if exact { 0 } else { params.probe_graph.len() },
        certified_lower_bound: true,
        probe_values,
        notes: vec![Term::new("fitz_gap_exact", exact as u8 as f64, None)],
    })
}

/// `|a - x0|^2 + path gap + 2R|mu - m|_T + sup_nu [<<mu - nu, k>> - R|nu - m|_T]`,
/// with `nu` over `probe_nu ∪ {m, mu}`.
pub fn gsp_jhat(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    params: &FunctionalParams,
    cand: &GspCandidate,
) -> Result<FunctionalReport> {
    gsp_jhat_inner(a, x0, m, params, cand, true)
}

/// The functional with the `nu` set held fixed at `probe_nu ∪ {m}`.
pub fn gsp_jhat_fixed(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    params: &FunctionalParams,
    cand: &GspCandidate,
) -> Result<FunctionalReport> {
    gsp_jhat_inner(a, x0, m, params, cand, false)
}

/// Convexity defect along the segment `[p, q]`, with the probe set
/// `probe_nu ∪ {m, mu_p, mu_q}` shared by all points of the segment.
pub fn gsp_convexity_probe(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    params: &FunctionalParams,
    p: &GspCandidate,
    q: &GspCandidate,
) -> Result<f64> {
    let mut fixed = params.clone();
    fixed.probe_nu.push(p.mu.clone());
    fixed.probe_nu.push(q.mu.clone());
    // the moduli of mu_p, mu_q are not part of the check
    fixed.alpha = vec![(0.0, 0.0)];
    jhat_convexity_probe(
        |c| Ok(gsp_jhat_fixed(a, x0, m, &fixed, c)?.total),
        p,
        q,
        &CONVEXITY_LAMBDAS,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Objective below which the result is flagged converged.
    pub tol: f64,
    /// Objective at which iteration stops early.
    pub stop_at: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iter: 200_000,
            tol: 1e-6,
            stop_at: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub candidate: GspCandidate,
    pub objective: f64,
    /// Running best objective per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl MinimizeResult {
    /// CSV `iter,objective`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iter", "objective"])?;
        for (i, v) in self.trace.iter().enumerate() {
            wr.write_record([i.to_string(), fmt_f64(*v)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// L2 projection onto nonincreasing sequences (pool adjacent violators).
fn isotonic_nonincreasing(v: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v {
        let mut cur = (x, 1usize);
        while let Some(&(m, w)) = blocks.last() {
            if m < cur.0 {
                blocks.pop();
                let tot = w + cur.1;
                cur = ((m * w as f64 + cur.0 * cur.1 as f64) / tot as f64, tot);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(m, w)| std::iter::repeat_n(m, w))
        .collect()
}

/// Makes `k` feasible for the homogeneous objective: `x = b - k` in the set
/// and `dk` in the barrier cone of its support function.
fn repair(a: &OperatorSpec, b: &[Vec<f64>], k: &mut [Vec<f64>]) -> Result<()> {
    let n = k.len();
    let Some((lo, hi)) = a.box_bounds() else {
        for i in 1..n {
            let xi: Vec<f64> = (0..a.dim).map(|c| b[i][c] - k[i][c]).collect();
            let p = a.resolvent(1.0, &xi)?;
            for c in 0..a.dim {
                k[i][c] = b[i][c] - p[c];
            }
        }
        k[0].iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    };
    for c in 0..a.dim {
        let (l, h) = (lo[c], hi[c]);
        let col: Vec<f64> = k.iter().map(|v| v[c]).collect();
        let fixed: Vec<f64> = match (l.is_finite(), h.is_finite()) {
            (true, true) => (0..n)
                .map(|i| b[i][c] - (b[i][c] - col[i]).clamp(l, h))
                .collect(),
            (false, false) => vec![0.0; n],
            (true, false) => {
                let iso = isotonic_nonincreasing(&col);
                let mut cap = 0.0f64;
                (0..n)
                    .map(|i| {
                        if i > 0 {
                            cap = cap.min(b[i][c] - l);
                        }
                        iso[i].min(cap)
                    })
                    .collect()
            }
            (false, true) => {
                let neg: Vec<f64> = col.iter().map(|v| -v).collect();
                let iso = isotonic_nonincreasing(&neg);
                let mut cap = 0.0f64;
                (0..n)
                    .map(|i| {
                        if i > 0 {
                            cap = cap.min(h - b[i][c]);
                        }
                        -(iso[i].min(cap))
                    })
                    .collect()
            }
        };
        for i in 0..n {
            k[i][c] = if i == 0 { 0.0 } else { fixed[i] };
        }
    }
    Ok(())
}

fn homogeneous_objective(
    a: &OperatorSpec,
    b: &[Vec<f64>],
    k: &[Vec<f64>],
    grid: &[f64],
) -> Result<(f64, GridPath, BVPath)> {
    let xs: Vec<Vec<f64>> = b
        .iter()
        .zip(k)
        .map(|(bi, ki)| bi.iter().zip(ki).map(|(p, q)| p - q).collect())
        .collect();
    let x = GridPath::new(grid.to_vec(), xs)?;
    let kp = BVPath::from_values(&GridPath::new(grid.to_vec(), k.to_vec())?)?;
    let v = path_fitz_gap_with(a, &x, &kp, PathGapMode::Homogeneous, None)?;
    Ok((v, x, kp))
}

/// Minimizes the functional over `k` with `a = x0`, `mu = m` held fixed, for
/// normal-cone kinds. The objective `sum_i [sigma_E(dk_i) - <x_{i+1}, dk_i>]`
/// with `x = x0 + m - k in E` splits into a smooth part
/// `-sum <x_{i+1}, dk_i>` (convex, gradient Lipschitz with constant 5), the
/// node constraint (a projection), and `sum sigma_E(D k)`, handled through its
/// dual variable in `E`. Iterates of this primal-dual scheme are repaired
/// to exact feasibility before the objective is evaluated; the best repaired
/// iterate is returned.
pub fn minimize_gsp_jhat(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    if !a.is_cone() {
        return Err(Error::NotACone);
    }
    if x0.len() != a.dim || m.dim() != a.dim {
        return Err(Error::Dimension {
            expected: a.dim,
            got: m.dim(),
        });
    }
    if a.domain_distance(x0)? > 1e-12 {
        return Err(Error::OutsideDomain {
            distance: a.domain_distance(x0)?,
        });
    }
    let n = m.steps();
    let d = a.dim;
    let grid = m.grid().to_vec();
    let b: Vec<Vec<f64>> = (0..=n)
        .map(|i| (0..d).map(|c| x0[c] + m.value(i)[c]).collect())
        .collect();
    let proj_e = |v: &[f64]| a.resolvent(1.0, v);
    let proj_f = |k: &mut [Vec<f64>]| -> Result<()> {
        k[0].iter_mut().for_each(|v| *v = 0.0);
        for i in 1..=n {
            let xi: Vec<f64> = (0..d).map(|c| b[i][c] - k[i][c]).collect();
            let p = proj_e(&xi)?;
            for c in 0..d {
                k[i][c] = b[i][c] - p[c];
            }
        }
        Ok(())
    };
    let lip = 5.0;
    let sigma = 1.0;
    let tau = 0.99 / (lip / 2.0 + 4.0 * sigma);

    let mut k = vec![vec![0.0; d]; n + 1];
    proj_f(&mut k)?;
    let mut y = vec![vec![0.0; d]; n];
    let mut best_k = k.clone();
    repair(a, &b, &mut best_k)?;
    let mut best = homogeneous_objective(a, &b, &best_k, &grid)?.0;
    let mut trace = vec![best];
    let mut iterations = 0;
    while iterations < opts.max_iter && best > opts.stop_at {
        let x: Vec<Vec<f64>> = (0..=n)
            .map(|i| (0..d).map(|c| b[i][c] - k[i][c]).collect())
            .collect();
        let mut k_new = k.clone();
        for j in 1..=n {
            for c in 0..d {
                let mut g = (k[j][c] - k[j - 1][c]) - x[j][c];
                if j < n {
                    g += x[j + 1][c];
                }
                let dty = y[j - 1][c] - if j < n { y[j][c] } else { 0.0 };
                k_new[j][c] = k[j][c] - tau * (g + dty);
            }
        }
        proj_f(&mut k_new)?;
        for i in 0..n {
            let v: Vec<f64> = (0..d)
                .map(|c| {
                    let dk_new = k_new[i + 1][c] - k_new[i][c];
                    let dk_old = k[i + 1][c] - k[i][c];
                    y[i][c] + sigma * (2.0 * dk_new - dk_old)
                })
                .collect();
            y[i] = proj_e(&v)?;
        }
        k = k_new;
        iterations += 1;
        let mut kr = k.clone();
        repair(a, &b, &mut kr)?;
        let (obj, _, _) = homogeneous_objective(a, &b, &kr, &grid)?;
        if obj < best {
            best = obj;
            best_k = kr;
        }
        trace.push(best);
    }
    let (objective, x, kp) = homogeneous_objective(a, &b, &best_k, &grid)?;
    Ok(MinimizeResult {
        candidate: GspCandidate {
            a: x0.to_vec(),
            x,
            k: kp,
            mu: m.clone(),
        },
        objective,
        trace,
        iterations,
        converged: objective <= opts.tol,
    })
}

// ---------------------------------------------------------------------------
// Forward stochastic equations

fn mix_diffusion(
    g1: &DiffusionPath,
    g2: &DiffusionPath,
    l: f64,
    paths: usize,
    steps: usize,
) -> DiffusionPath {
    let lin = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(p, q)| l * p + (1.0 - l) * q)
            .collect()
    };
    match (g1, g2) {
        (DiffusionPath::Constant { matrix: a }, DiffusionPath::Constant { matrix: b }) => {
            DiffusionPath::Constant { matrix: lin(a, b) }
        }
        _ => DiffusionPath::PerPath {
            matrices: (0..paths)
                .map(|p| {
                    (0..steps)
                        .map(|i| lin(g1.matrix(p, i), g2.matrix(p, i)))
                        .collect()
                })
                .collect(),
        },
    }
}

/// Per-path `max_i |X_i + K_i - eta - sum_{r<i} g_r dB_r|`.
fn driven_defect(
    x: &GridPath,
    k: &BVPath,
    eta: &[f64],
    g: &DiffusionPath,
    path: usize,
    db: &[Vec<f64>],
) -> Result<f64> {
    x.check_same_grid(k.grid())?;
    let d = eta.len();
    let kdim = db.first().map_or(0, |v| v.len());
    let kv = k.values();
    let mut m = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for i in 0..=k.steps() {
        if i > 0 {
            let inc = matvec(g.matrix(path, i - 1), d, kdim, &db[i - 1]);
            for (a, v) in m.iter_mut().zip(&inc) {
                *a += v;
            }
        }
        let xi = x.value(i);
        let r: Vec<f64> = (0..d).map(|c| xi[c] + kv[i][c] - eta[c] - m[c]).collect();
        worst = worst.max(norm(&r));
    }
    Ok(worst)
}

fn check_ensemble_shape(
    n_paths: usize,
    ens: &WienerEnsemble,
    xs: &[GridPath],
    xi: &[Vec<f64>],
) -> Result<()> {
    if xs.len() != n_paths || xi.len() != n_paths || ens.n_paths != n_paths {
        return Err(Error::InvalidParameter(format!(
            "candidate has {} paths, data {}, ensemble {}",
            xs.len(),
            xi.len(),
            ens.n_paths
        )));
    }
    for x in xs {
        x.check_same_grid(&ens.grid)?;
    }
    Ok(())
}

/// Candidate `(eta, X, K, g)` for the additive equation, one entry per path.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeCandidate {
    pub eta: Vec<Vec<f64>>,
    pub x: Vec<GridPath>,
    pub k: Vec<BVPath>,
    pub g: DiffusionPath,
}

impl SdeCandidate {
    /// Solver output with `eta = xi` and `g = G`; needs kept paths.
    pub fn from_ensemble(sol: &SdeEnsemble, g: &DiffusionPath) -> Result<Self> {
        let missing =
            || Error::InvalidParameter("ensemble was solved without keeping paths".into());
        Ok(SdeCandidate {
            eta: sol.paths.iter().map(|p| p.xi.clone()).collect(),
            x: sol
                .paths
                .iter()
                .map(|p| p.x.clone().ok_or_else(missing))
                .collect::<Result<_>>()?,
            k: sol
                .paths
                .iter()
                .map(|p| p.k.clone().ok_or_else(missing))
                .collect::<Result<_>>()?,
            g: g.clone(),
        })
    }
}

impl Mixable for SdeCandidate {
    fn mix(&self, other: &Self, l: f64) -> Result<Self> {
        let steps = self.x.first().map_or(0, |x| x.steps());
        Ok(SdeCandidate {
            eta: self
                .eta
                .iter()
                .zip(&other.eta)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(p, q)| l * p + (1.0 - l) * q)
                        .collect()
                })
                .collect(),
            x: self
                .x
                .iter()
                .zip(&other.x)
                .map(|(a, b)| a.combine(l, b, 1.0 - l))
                .collect::<Result<_>>()?,
            k: self
                .k
                .iter()
                .zip(&other.k)
                .map(|(a, b)| a.combine(l, b, 1.0 - l))
                .collect::<Result<_>>()?,
            g: mix_diffusion(&self.g, &other.g, l, self.x.len(), steps),
        })
    }
}

/// `1/2 E|eta - xi|^2 + E[path gap(X, K)] + 1/2 E sum |g - G|^2 dt`, with the
/// constraint `X + K = eta + sum g dB` checked on every path.
pub fn sde_jhat(
    a: &OperatorSpec,
    xi: &[Vec<f64>],
    g_true: &DiffusionPath,
    ens: &WienerEnsemble,
    cand: &SdeCandidate,
    sampling: Option<&Sampling>,
) -> Result<FunctionalReport> {
    let n_paths = cand.x.len();
    check_ensemble_shape(n_paths, ens, &cand.x, xi)?;
    let steps = ens.steps();
    let mut init = Vec::with_capacity(n_paths);
    let mut gap = Vec::with_capacity(n_paths);
    let mut diff = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let db = ens.increments(p);
        let x = &cand.x[p];
        let defect = driven_defect(x, &cand.k[p], &cand.eta[p], &cand.g, p, &db)?;
        let scale = 1.0 + x.sup_norm() + cand.k[p].total_variation();
        if defect > CONSTRAINT_TOL * scale {
            return Err(Error::Constraint(format!(
                "path {p}: X + K != eta + int g dB (defect {defect:e})"
            )));
        }
        init.push(0.5 * dist(&cand.eta[p], &xi[p]).powi(2));
        gap.push(path_fitz_gap_with(
            a,
            x,
            &cand.k[p],
            default_mode(a),
            sampling,
        )?);
        let d: Vec<f64> = (0..steps)
            .map(|i| {
                let e = dist(cand.g.matrix(p, i), g_true.matrix(p, i));
                0.5 * e * e * x.dt(i)
            })
            .collect();
        diff.push(pairwise_sum(&d));
    }
    let exact = ens.is_exact();
    let totals: Vec<f64> = (0..n_paths).map(|p| init[p] + gap[p] + diff[p]).collect();
    let (total, se) = se_of(&totals, exact);
    let t = |name: &str, v: &[f64]| {
        let (m, s) = se_of(v, exact);
        Term::new(name, m, s)
    };
    Ok(FunctionalReport {
        functional: "sde".into(),
        total,
        se,
        terms: vec![
            t("initial", &init),
            t("fitz_gap", &gap),
            t("diffusion", &diff),
        ],
        probes_used: 0,
        certified_lower_bound: false,
        probe_values: Vec::new(),
        notes: vec![Term::new("paths", n_paths as f64, None)],
    })
}

/// Candidate `(eta, X, L, g)` with `X + L = eta + sum g dB` per path.
#[derive(Debug, Clone, PartialEq)]
pub struct SviCandidate {
    pub eta: Vec<Vec<f64>>,
    pub x: Vec<GridPath>,
    pub l: Vec<BVPath>,
    pub g: DiffusionPath,
}

impl SviCandidate {
    /// Solver output: `eta = xi`, `dL_i = dK_i - F(t_i, X_i) dt`, `g_i = G(t_i, X_i)`.
    pub fn from_ensemble(sol: &SdeEnsemble, coeffs: &FieldCoefficients) -> Result<Self> {
        let missing =
            || Error::InvalidParameter("ensemble was solved without keeping paths".into());
        let mut x = Vec::with_capacity(sol.paths.len());
        let mut l = Vec::with_capacity(sol.paths.len());
        let mut g = Vec::with_capacity(sol.paths.len());
        for p in &sol.paths {
            let xp = p.x.clone().ok_or_else(missing)?;
            let kp = p.k.as_ref().ok_or_else(missing)?;
            let mut inc = Vec::with_capacity(kp.steps());
            let mut gp = Vec::with_capacity(kp.steps());
            for i in 0..kp.steps() {
                let t = xp.grid()[i];
                let f = (coeffs.drift)(t, xp.value(i));
                inc.push(
                    kp.increment(i)
                        .iter()
                        .zip(&f)
                        .map(|(k, f)| k - f * xp.dt(i))
                        .collect(),
                );
                gp.push((coeffs.diffusion)(t, xp.value(i)));
            }
            l.push(BVPath::new(xp.grid().to_vec(), inc)?);
            g.push(gp);
            x.push(xp);
        }
        Ok(SviCandidate {
            eta: sol.paths.iter().map(|p| p.xi.clone()).collect(),
            x,
            l,
            g: DiffusionPath::PerPath { matrices: g },
        })
    }
}

impl Mixable for SviCandidate {
    fn mix(&self, other: &Self, l: f64) -> Result<Self> {
        let steps = self.x.first().map_or(0, |x| x.steps());
        Ok(SviCandidate {
            eta: self
                .eta
                .iter()
                .zip(&other.eta)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(p, q)| l * p + (1.0 - l) * q)
                        .collect()
                })
                .collect(),
            x: self
                .x
                .iter()
                .zip(&other.x)
                .map(|(a, b)| a.combine(l, b, 1.0 - l))
                .collect::<Result<_>>()?,
            l: self
                .l
                .iter()
                .zip(&other.l)
                .map(|(a, b)| a.combine(l, b, 1.0 - l))
                .collect::<Result<_>>()?,
            g: mix_diffusion(&self.g, &other.g, l, self.x.len(), steps),
        })
    }
}

/// Probe process `U` for the SVI functional.
#[derive(Debug, Clone, PartialEq)]
pub enum SviProbe {
    /// The same deterministic path on every sample path.
    Path(GridPath),
    /// One path per sample path.
    PerPath(Vec<GridPath>),
}

impl SviProbe {
    fn path(&self, p: usize) -> &GridPath {
        match self {
            SviProbe::Path(u) => u,
            SviProbe::PerPath(us) => &us[p],
        }
    }
}

/// Per-path `J_U`:
/// `1/2|eta - xi|^2 + sum_i [<U_{i+1} - X_{i+1}, F(t_{i+1}, U_{i+1})> dt
///  + 1/2 |g_i - G(t_i, U_i)|^2 dt + <U_{i+1} - X_{i+1}, dL_i>
///  + (phi(X_{i+1}) - phi(U_{i+1})) dt]`.
#[allow(clippy::too_many_arguments)]
fn svi_j_path(
    phi: &OperatorSpec,
    coeffs: &FieldCoefficients,
    xi: &[f64],
    cand: &SviCandidate,
    p: usize,
    u: &GridPath,
    phi_x: &[f64],
) -> Result<f64> {
    let x = &cand.x[p];
    let l = &cand.l[p];
    let mut terms = vec![0.5 * dist(&cand.eta[p], xi).powi(2)];
    for i in 0..l.steps() {
        let dt = x.dt(i);
        let t1 = x.grid()[i + 1];
        let u1 = u.value(i + 1);
        let x1 = x.value(i + 1);
        let phi_u = phi
            .potential(u1)
            .ok_or_else(|| Error::InvalidParameter("operator is not a subdifferential".into()))?;
        if phi_u == f64::INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let du: Vec<f64> = u1.iter().zip(x1).map(|(a, b)| a - b).collect();
        let f = (coeffs.drift)(t1, u1);
        let gu = (coeffs.diffusion)(x.grid()[i], u.value(i));
        let e = dist(cand.g.matrix(p, i), &gu);
        terms.push(
            dot(&du, &f) * dt
                + 0.5 * e * e * dt
                + dot(&du, l.increment(i))
                + (phi_x[i] - phi_u) * dt,
        );
    }
    Ok(pairwise_sum(&terms))
}

/// Sup over `probes ∪ {X}` of the ensemble mean of `J_U`. At `U = X` the
/// value is `1/2 E|eta - xi|^2 + 1/2 E sum |g - G(X)|^2 dt`.
pub fn svi_jhat(
    phi: &OperatorSpec,
    coeffs: &FieldCoefficients,
    xi: &[Vec<f64>],
    ens: &WienerEnsemble,
    cand: &SviCandidate,
    probes: &[SviProbe],
) -> Result<FunctionalReport> {
    let n_paths = cand.x.len();
    check_ensemble_shape(n_paths, ens, &cand.x, xi)?;
    for pr in probes {
        if let SviProbe::PerPath(us) = pr {
            if us.len() != n_paths {
                return Err(Error::InvalidParameter(
                    "per-path probe has the wrong path count".into(),
                ));
            }
        }
    }
    let exact = ens.is_exact();
    let mut phi_x = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let db = ens.increments(p);
        let x = &cand.x[p];
        let defect = driven_defect(x, &cand.l[p], &cand.eta[p], &cand.g, p, &db)?;
        let scale = 1.0 + x.sup_norm() + cand.l[p].total_variation();
        if defect > CONSTRAINT_TOL * scale {
            return Err(Error::Constraint(format!(
                "path {p}: X + L != eta + int g dB (defect {defect:e})"
            )));
        }
        let v: Vec<f64> = (1..=x.steps())
            .map(|i| {
                phi.potential(x.value(i)).ok_or_else(|| {
                    Error::InvalidParameter("operator is not a subdifferential".into())
                })
            })
            .collect::<Result<_>>()?;
        phi_x.push(v);
    }
    let big_phi: Vec<f64> = (0..n_paths)
        .map(|p| {
            ext_sum(
                &phi_x[p]
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * cand.x[p].dt(i))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let init: Vec<f64> = (0..n_paths)
        .map(|p| 0.5 * dist(&cand.eta[p], &xi[p]).powi(2))
        .collect();
    let (init_m, init_se) = se_of(&init, exact);
    if big_phi.contains(&f64::INFINITY) {
        return Ok(FunctionalReport {
            functional: "svi".into(),
            total: f64::INFINITY,
            se: None,
            terms: vec![
                Term::new("initial", init_m, init_se),
                Term::new("potential", f64::INFINITY, None),
            ],
            probes_used: 0,
            certified_lower_bound: false,
            probe_values: Vec::new(),
            notes: Vec::new(),
        });
    }
    let own = SviProbe::PerPath(cand.x.clone());
    let all: Vec<&SviProbe> = std::iter::once(&own).chain(probes.iter()).collect();
    let mut probe_values = Vec::with_capacity(all.len());
    let mut best: Option<(f64, Option<f64>)> = None;
    for (k, pr) in all.iter().enumerate() {
        let vals: Vec<f64> = (0..n_paths)
            .map(|p| svi_j_path(phi, coeffs, &xi[p], cand, p, pr.path(p), &phi_x[p]))
            .collect::<Result<_>>()?;
        let (m, se) = if vals.contains(&f64::NEG_INFINITY) {
            (f64::NEG_INFINITY, None)
        } else {
            se_of(&vals, exact)
        };
        probe_values.push(ProbeValue {
            label: if k == 0 { "X".into() } else { format!("U{k}") },
            mean: m,
            se,
        });
        if best.is_none_or(|b| m > b.0) {
            best = Some((m, se));
        }
    }
    let (total, se) = best.unwrap();
    let own_value = probe_values[0].mean;
    Ok(FunctionalReport {
        functional: "svi".into(),
        total,
        se,
        terms: vec![
            Term::new("initial", init_m, init_se),
            Term::new("diffusion", own_value - init_m, None),
            Term::new("probe_excess", total - own_value, None),
        ],
        probes_used: all.len(),
        certified_lower_bound: true,
        probe_values,
        notes: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Backward equations on the tree

fn leaf_expect(tree: &BinomialTree, v: &[Vec<f64>], f: impl Fn(usize, &[f64]) -> f64) -> f64 {
    let terms: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(j, x)| tree.prob(tree.depth, j) * f(j, x))
        .collect();
    pairwise_sum(&terms)
}

fn check_leaves_len(tree: &BinomialTree, v: &[Vec<f64>], dim: usize) -> Result<()> {
    if v.len() != tree.depth + 1 || v.iter().any(|x| x.len() != dim) {
        return Err(Error::InvalidParameter(format!(
            "expected {} leaf values of dimension {dim}",
            tree.depth + 1
        )));
    }
    Ok(())
}

fn check_tree_shape(tree: &BinomialTree, p: &TreeProcess, last: usize, dim: usize) -> Result<()> {
    if p.last_level() != last || p.dim() != dim || last > tree.depth {
        return Err(Error::InvalidParameter(
            "tree process has the wrong shape".into(),
        ));
    }
    Ok(())
}

fn mix_leaves(a: &[Vec<f64>], b: &[Vec<f64>], l: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .map(|(x, y)| l * x + (1.0 - l) * y)
                .collect()
        })
        .collect()
}

fn mix_tree(a: &TreeProcess, b: &TreeProcess, l: f64) -> Result<TreeProcess> {
    if a.last_level() != b.last_level() || a.dim() != b.dim() {
        return Err(Error::InvalidParameter(
            "tree processes have different shapes".into(),
        ));
    }
    TreeProcess::new(
        a.levels()
            .iter()
            .zip(b.levels())
            .map(|(p, q)| mix_leaves(p, q, l))
            .collect(),
    )
}

fn tree_scale(ps: &[&TreeProcess]) -> f64 {
    1.0 + ps
        .iter()
        .flat_map(|p| p.levels().iter().flatten().flatten())
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Candidate `(eta, Y, H)` with `Y_n = eta`, `Y_i = E_i Y_{i+1} - H_i dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeCandidate {
    pub eta: Vec<Vec<f64>>,
    pub y: TreeProcess,
    pub h: TreeProcess,
}

impl BsdeCandidate {
    /// Builds `Y` from `(eta, H)` by the backward recursion.
    pub fn from_eta_h(tree: &BinomialTree, eta: Vec<Vec<f64>>, h: TreeProcess) -> Result<Self> {
        let n = tree.depth;
        let dt = tree.dt();
        let mut levels: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n + 1];
        levels[n] = eta.clone();
        for i in (0..n).rev() {
            levels[i] = (0..=i)
                .map(|j| {
                    (0..eta[0].len())
                        .map(|c| {
                            0.5 * (levels[i + 1][j][c] + levels[i + 1][j + 1][c])
                                - h.node(i, j)[c] * dt
                        })
                        .collect()
                })
                .collect();
        }
        Ok(BsdeCandidate {
            eta,
            y: TreeProcess::new(levels)?,
            h,
        })
    }

    /// Tree solution for a zero driver.
    pub fn from_solution(sol: &BsviSolution) -> Self {
        BsdeCandidate {
            eta: sol.y.level(sol.tree.depth).to_vec(),
            y: sol.y.clone(),
            h: sol.h.clone(),
        }
    }
}

impl Mixable for BsdeCandidate {
    fn mix(&self, other: &Self, l: f64) -> Result<Self> {
        Ok(BsdeCandidate {
            eta: mix_leaves(&self.eta, &other.eta, l),
            y: mix_tree(&self.y, &other.y, l)?,
            h: mix_tree(&self.h, &other.h, l)?,
        })
    }
}

/// `1/2 E|eta - xi|^2 + sum_i E[H_A(Y_i, H_i) - <Y_i, H_i>] dt
///  + 1/2 sup_{E|zeta|^2 <= R} [E|zeta - eta|^2 - E|zeta - xi|^2]`, the last
/// term in closed form `E|eta|^2 - E|xi|^2 + 2 sqrt(R) |eta - xi|_{L2}` and
/// cross-checked against `probes_zeta ∪ {eta, xi}`.
pub fn bsde_jhat(
    a: &OperatorSpec,
    tree: &BinomialTree,
    xi: &[Vec<f64>],
    r: f64,
    cand: &BsdeCandidate,
    probes_zeta: &[Vec<Vec<f64>>],
    sampling: Option<&Sampling>,
) -> Result<FunctionalReport> {
    let d = a.dim;
    let n = tree.depth;
    let dt = tree.dt();
    check_leaves_len(tree, xi, d)?;
    check_leaves_len(tree, &cand.eta, d)?;
    check_tree_shape(tree, &cand.y, n, d)?;
    check_tree_shape(tree, &cand.h, n - 1, d)?;
    let sq = |v: &[Vec<f64>]| leaf_expect(tree, v, |_, x| dot(x, x));
    let (exi, eeta) = (sq(xi), sq(&cand.eta));
    for (name, v) in [("xi", exi), ("eta", eeta)] {
        if v > r * (1.0 + 1e-12) {
            return Err(Error::Constraint(format!(
                "E|{name}|^2 = {v} exceeds R = {r}"
            )));
        }
    }
    let scale = tree_scale(&[&cand.y, &cand.h]);
    let mut defect: f64 = 0.0;
    for j in 0..=n {
        defect = defect.max(dist(cand.y.node(n, j), &cand.eta[j]));
    }
    for i in 0..n {
        for j in 0..=i {
            let e = cand.y.cond_expect(i, j);
            let r: Vec<f64> = (0..d)
                .map(|c| cand.y.node(i, j)[c] - e[c] + cand.h.node(i, j)[c] * dt)
                .collect();
            defect = defect.max(norm(&r));
        }
    }
    if defect > CONSTRAINT_TOL * scale {
        return Err(Error::Constraint(format!(
            "Y is not the backward image of (eta, H) (defect {defect:e})"
        )));
    }
    let initial = 0.5 * leaf_expect(tree, &cand.eta, |j, x| dist(x, &xi[j]).powi(2));
    let mut gap_terms = Vec::new();
    let mut exact = true;
    for i in 0..n {
        for j in 0..=i {
            let g = fitz_gap(a, cand.y.node(i, j), cand.h.node(i, j), sampling)?;
            exact &= g.exact;
            gap_terms.push(tree.prob(i, j) * g.gap * dt);
        }
    }
    let gap = ext_sum(&gap_terms);
    let l2 = (2.0 * initial).sqrt();
    let zeta_closed = 0.5 * (eeta - exi + 2.0 * r.sqrt() * l2);
    let mut zetas: Vec<&[Vec<f64>]> = probes_zeta.iter().map(|z| z.as_slice()).collect();
    zetas.push(&cand.eta);
    zetas.push(xi);
    let mut probe_values = Vec::new();
    let mut zeta_probe = f64::NEG_INFINITY;
    for (k, z) in zetas.iter().enumerate() {
        check_leaves_len(tree, z, d)?;
        if sq(z) > r * (1.0 + 1e-12) {
            continue;
        }
        let v = 0.5
            * (leaf_expect(tree, z, |j, x| dist(x, &cand.eta[j]).powi(2))
                - leaf_expect(tree, z, |j, x| dist(x, &xi[j]).powi(2)));
        zeta_probe = zeta_probe.max(v);
        probe_values.push(ProbeValue {
            label: format!("zeta{k}"),
            mean: v,
            se: None,
        });
    }
    let terms = vec![
        Term::new("initial", initial, None),
        Term::new("fitz_gap", gap, None),
        Term::new("zeta_sup", zeta_closed, None),
    ];
    Ok(FunctionalReport {
        functional: "bsde".into(),
        total: ext_sum(&[initial, gap, zeta_closed]),
        se: None,
        terms,
        probes_used: probe_values.len(),
        certified_lower_bound: !exact,
        probe_values,
        notes: vec![Term::new("zeta_probe_max", zeta_probe, None)],
    })
}

/// Candidate `(eta, G, Y, Z)` with `Y_n = eta`, `Y_i = E_i Y_{i+1} + G_i dt`
/// and `Z` the two-point martingale difference of `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsviCandidate {
    pub eta: Vec<Vec<f64>>,
    pub g: TreeProcess,
    pub y: TreeProcess,
    pub z: TreeProcess,
}

impl BsviCandidate {
    /// The candidate determined by node values `Y`.
    pub fn from_y(tree: &BinomialTree, y: TreeProcess) -> Result<Self> {
        let n = tree.depth;
        let dt = tree.dt();
        let g = TreeProcess::from_fn(n - 1, |i, j| {
            let e = y.cond_expect(i, j);
            y.node(i, j)
                .iter()
                .zip(&e)
                .map(|(a, b)| (a - b) / dt)
                .collect()
        })?;
        let z = TreeProcess::from_fn(n - 1, |i, j| y.martingale_diff(tree, i, j))?;
        Ok(BsviCandidate {
            eta: y.level(n).to_vec(),
            g,
            y,
            z,
        })
    }

    pub fn from_solution(sol: &BsviSolution) -> Result<Self> {
        Self::from_y(&sol.tree, sol.y.clone())
    }

    /// `eta + s` with `G` unchanged.
    pub fn shift_terminal(&self, tree: &BinomialTree, s: &[f64]) -> Result<Self> {
        let n = tree.depth;
        let y = TreeProcess::from_fn(n, |i, j| {
            self.y
                .node(i, j)
                .iter()
                .zip(s)
                .map(|(a, b)| a + b)
                .collect()
        })?;
        let mut c = Self::from_y(tree, y)?;
        c.g = self.g.clone();
        Ok(c)
    }
}

impl Mixable for BsviCandidate {
    fn mix(&self, other: &Self, l: f64) -> Result<Self> {
        Ok(BsviCandidate {
            eta: mix_leaves(&self.eta, &other.eta, l),
            g: mix_tree(&self.g, &other.g, l)?,
            y: mix_tree(&self.y, &other.y, l)?,
            z: mix_tree(&self.z, &other.z, l)?,
        })
    }
}

fn separable(phi: &OperatorSpec) -> bool {
    matches!(
        phi.kind,
        OperatorKind::NormalConeBox { .. }
            | OperatorKind::SubdiffIndicatorInterval { .. }
            | OperatorKind::SubdiffAbsSum { .. }
            | OperatorKind::ScaledIdentity { .. }
    )
}

/// Sup over `probes ∪ {(Y, Z)}` of
/// `J_(U,V) = 1/2 E|eta - xi|^2 + sum_i E[<U_i - Y_i, F(t_i, U_i, V_i) - G_i>
///  - 1/2 |Z_i - V_i|^2] dt + Phi(Y) - Phi(U)`, `Phi = sum_{i<n} E phi dt`.
///
/// For linear drivers and separable potentials the exact sup is added as a
/// note.
pub fn bsvi_jhat(
    phi: &OperatorSpec,
    f: &TreeDriver,
    tree: &BinomialTree,
    xi: &[Vec<f64>],
    cand: &BsviCandidate,
    probes: &[(TreeProcess, TreeProcess)],
) -> Result<FunctionalReport> {
    let d = phi.dim;
    let n = tree.depth;
    let dt = tree.dt();
    check_leaves_len(tree, xi, d)?;
    check_leaves_len(tree, &cand.eta, d)?;
    check_tree_shape(tree, &cand.y, n, d)?;
    check_tree_shape(tree, &cand.g, n - 1, d)?;
    check_tree_shape(tree, &cand.z, n - 1, d)?;
    let scale = tree_scale(&[&cand.y, &cand.g, &cand.z]);
    let mut defect: f64 = 0.0;
    for j in 0..=n {
        defect = defect.max(dist(cand.y.node(n, j), &cand.eta[j]));
    }
    for i in 0..n {
        for j in 0..=i {
            let e = cand.y.cond_expect(i, j);
            let r: Vec<f64> = (0..d)
                .map(|c| cand.y.node(i, j)[c] - e[c] - cand.g.node(i, j)[c] * dt)
                .collect();
            defect = defect.max(norm(&r));
            defect = defect.max(dist(cand.z.node(i, j), &cand.y.martingale_diff(tree, i, j)));
        }
    }
    if defect > CONSTRAINT_TOL * scale {
        return Err(Error::Constraint(format!(
            "candidate violates the backward constraint (defect {defect:e})"
        )));
    }
    let pot = |v: &[f64]| {
        phi.potential(v)
            .ok_or_else(|| Error::InvalidParameter("operator is not a subdifferential".into()))
    };
    let big_phi = |p: &TreeProcess| -> Result<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                t.push(tree.prob(i, j) * pot(p.node(i, j))? * dt);
            }
        }
        Ok(ext_sum(&t))
    };
    let initial = 0.5 * leaf_expect(tree, &cand.eta, |j, x| dist(x, &xi[j]).powi(2));
    let phi_y = big_phi(&cand.y)?;
    if phi_y == f64::INFINITY {
        return Ok(FunctionalReport {
            functional: "bsvi".into(),
            total: f64::INFINITY,
            se: None,
            terms: vec![
                Term::new("initial", initial, None),
                Term::new("potential", f64::INFINITY, None),
            ],
            probes_used: 0,
            certified_lower_bound: false,
            probe_values: Vec::new(),
            notes: Vec::new(),
        });
    }
    let own = (cand.y.clone(), cand.z.clone());
    let all: Vec<&(TreeProcess, TreeProcess)> =
        std::iter::once(&own).chain(probes.iter()).collect();
    let mut probe_values = Vec::with_capacity(all.len());
    let mut best = f64::NEG_INFINITY;
    for (k, (u, v)) in all.iter().enumerate() {
        if u.last_level() < n - 1 || v.last_level() < n - 1 || u.dim() != d || v.dim() != d {
            return Err(Error::InvalidParameter(format!(
                "probe {k} has the wrong shape"
            )));
        }
        let phi_u = big_phi(u)?;
        let val = if phi_u == f64::INFINITY {
            f64::NEG_INFINITY
        } else {
            let mut t = vec![initial, phi_y, -phi_u];
            for i in 0..n {
                for j in 0..=i {
                    let (ui, vi) = (u.node(i, j), v.node(i, j));
                    let fv = f.eval(tree.time(i), ui, vi);
                    let y = cand.y.node(i, j);
                    let g = cand.g.node(i, j);
                    let z = cand.z.node(i, j);
                    let mut s = 0.0;
                    for c in 0..d {
                        s += (ui[c] - y[c]) * (fv[c] - g[c]) - 0.5 * (z[c] - vi[c]).powi(2);
                    }
                    t.push(tree.prob(i, j) * s * dt);
                }
            }
            pairwise_sum(&t)
        };
        best = best.max(val);
        probe_values.push(ProbeValue {
            label: if k == 0 {
                "YZ".into()
            } else {
                format!("UV{k}")
            },
            mean: val,
            se: None,
        });
    }
    let mut notes = Vec::new();
    if matches!(f, TreeDriver::Linear { .. }) && separable(phi) {
        notes.push(Term::new(
            "closed_form_sup",
            node_program_value(phi, f, xi, tree, &cand.y)?,
            None,
        ));
    }
    Ok(FunctionalReport {
        functional: "bsvi".into(),
        total: best,
        se: None,
        terms: vec![
            Term::new("initial", initial, None),
            Term::new("probe_sup_rest", best - initial, None),
        ],
        probes_used: all.len(),
        certified_lower_bound: true,
        probe_values,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsp::{skorohod_1d_oracle, solve_gsp, Scheme};
    use crate::paths::uniform_grid;

    fn half_line_case(n: usize) -> (OperatorSpec, Vec<f64>, GridPath) {
        let a = OperatorSpec::half_space(1);
        let m =
            GridPath::from_fn(uniform_grid(1.0, n), |t| vec![(6.0 * t).sin() - 1.5 * t]).unwrap();
        (a, vec![0.2], m)
    }

    fn params(r: f64, m: &GridPath) -> FunctionalParams {
        let nus = vec![
            GridPath::constant(m.grid().to_vec(), vec![0.0; m.dim()]).unwrap(),
            m.combine(0.5, m, 0.0).unwrap(),
        ];
        FunctionalParams::from_drivers(r, std::slice::from_ref(m), nus, Vec::new()).unwrap()
    }

    #[test]
    fn isotonic_examples() {
        assert_eq!(
            isotonic_nonincreasing(&[3.0, 1.0, 2.0]),
            vec![3.0, 1.5, 1.5]
        );
        assert_eq!(
            isotonic_nonincreasing(&[1.0, 2.0, 3.0]),
            vec![2.0, 2.0, 2.0]
        );
        assert_eq!(
            isotonic_nonincreasing(&[3.0, 2.0, 1.0]),
            vec![3.0, 2.0, 1.0]
        );
    }

    #[test]
    fn gsp_jhat_zero_at_solution_and_positive_when_displaced() {
        let (a, x0, m) = half_line_case(400);
        let sol = solve_gsp(&a, &x0, &m, Scheme::CatchingUp).unwrap();
        let p = params(2.0 * sol.k.total_variation() + 1.0, &m);
        let c = GspCandidate::from_solution(&x0, &m, &sol);
        let r = gsp_jhat(&a, &x0, &m, &p, &c).unwrap();
        assert!(r.total.abs() <= 1e-8, "{r:?}");
        let delta = 0.3;
        let mut shifted = c.clone();
        shifted.a[0] += delta;
        shifted.x =
            c.x.combine(
                1.0,
                &GridPath::constant(m.grid().to_vec(), vec![delta]).unwrap(),
                1.0,
            )
            .unwrap();
        let r = gsp_jhat(&a, &x0, &m, &p, &shifted).unwrap();
        assert!(r.total >= delta * delta - 1e-12);
    }

    #[test]
    fn gsp_jhat_rejects_unconstrained_candidates() {
        let (a, x0, m) = half_line_case(50);
        let sol = solve_gsp(&a, &x0, &m, Scheme::CatchingUp).unwrap();
        let p = params(10.0, &m);
        let mut c = GspCandidate::from_solution(&x0, &m, &sol);
        c.a[0] += 0.1;
        assert!(matches!(
            gsp_jhat(&a, &x0, &m, &p, &c),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn flipped_step_gives_infinite_gap() {
        let a = OperatorSpec::half_space(1);
        let m = GridPath::from_fn(uniform_grid(1.0, 20), |t| vec![-t]).unwrap();
        let sol = solve_gsp(&a, &[0.0], &m, Scheme::CatchingUp).unwrap();
        let mut inc = sol.k.increments().to_vec();
        inc[5][0] = -inc[5][0];
        let k = BVPath::new(m.grid().to_vec(), inc).unwrap();
        let kv = k.to_grid_path();
        let x = m.combine(1.0, &kv, -1.0).unwrap();
        let c = GspCandidate {
            a: vec![0.0],
            x,
            k,
            mu: m.clone(),
        };
        let r = gsp_jhat(&a, &[0.0], &m, &params(10.0, &m), &c).unwrap();
        assert_eq!(r.total, f64::INFINITY);
    }

    #[test]
    fn minimizer_recovers_half_line_push() {
        let a = OperatorSpec::half_space(1);
        let m = GridPath::from_fn(uniform_grid(1.0, 100), |t| vec![-t]).unwrap();
        let r = minimize_gsp_jhat(&a, &[0.0], &m, &MinimizeOptions::default()).unwrap();
        assert!(r.converged, "{}", r.objective);
        let oracle = skorohod_1d_oracle(0.0, &m).unwrap();
        let dk = r
            .candidate
            .k
            .to_grid_path()
            .sup_dist(&oracle.k.to_grid_path())
            .unwrap();
        assert!(dk <= 1e-4, "{dk}");
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn minimizer_idle_for_interior_start() {
        let a = OperatorSpec::half_space(1);
        let m = GridPath::constant(uniform_grid(1.0, 30), vec![0.0]).unwrap();
        let r = minimize_gsp_jhat(&a, &[0.5], &m, &MinimizeOptions::default()).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.candidate.k.total_variation(), 0.0);
    }

    #[test]
    fn minimizer_matches_solver_on_box_spiral() {
        let a = OperatorSpec::normal_cone_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let m = GridPath::from_fn(uniform_grid(1.0, 200), |t| {
            let th = 4.0 * std::f64::consts::PI * t;
            vec![2.0 * t * th.cos(), 2.0 * t * th.sin()]
        })
        .unwrap();
        let x0 = [0.0, 0.0];
        let r = minimize_gsp_jhat(&a, &x0, &m, &MinimizeOptions::default()).unwrap();
        let sol = solve_gsp(&a, &x0, &m, Scheme::CatchingUp).unwrap();
        let p = params(2.0 * sol.k.total_variation(), &m);
        let jsol = gsp_jhat(&a, &x0, &m, &p, &GspCandidate::from_solution(&x0, &m, &sol))
            .unwrap()
            .total;
        assert!(
            (r.objective - jsol).abs() <= 1e-5,
            "{} vs {jsol}, {} iters",
            r.objective,
            r.iterations
        );
        let dk = r
            .candidate
            .k
            .to_grid_path()
            .sup_dist(&sol.k.to_grid_path())
            .unwrap();
        assert!(dk <= 1e-4, "{dk}");
    }

    #[test]
    fn params_validation() {
        let m = GridPath::from_fn(uniform_grid(1.0, 10), |t| vec![t]).unwrap();
        let mut p = params(1.0, &m);
        assert!(p.validate().is_ok());
        p.probe_nu.push(m.combine(5.0, &m, 0.0).unwrap());
        assert!(p.validate().is_err());
        p.probe_nu.pop();
        p.alpha[0] = (0.0, 0.1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn bsde_functional_examples() {
        let tree = BinomialTree::new(4, 1.0).unwrap();
        let a = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
        let xi = vec![vec![0.25]; 5];
        let c = BsdeCandidate::from_eta_h(&tree, xi.clone(), TreeProcess::constant(3, vec![0.0]))
            .unwrap();
        let r = bsde_jhat(&a, &tree, &xi, 4.0, &c, &[], None).unwrap();
        assert_eq!(r.total, 0.0);
        let eta: Vec<Vec<f64>> = xi.iter().map(|v| vec![v[0] + 1.0]).collect();
        let c = BsdeCandidate::from_eta_h(&tree, eta, TreeProcess::constant(3, vec![0.0])).unwrap();
        let probes = vec![vec![vec![-2.0]; 5], vec![vec![1.0]; 5]];
        let r = bsde_jhat(&a, &tree, &xi, 4.0, &c, &probes, None).unwrap();
        assert!(r.total >= 0.5);
        assert!(r.term("zeta_sup").unwrap() >= r.note("zeta_probe_max").unwrap() - 1e-15);
    }

    #[test]
    fn bsvi_functional_at_tree_solution() {
        let tree = BinomialTree::new(5, 1.0).unwrap();
        let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
        let xi = tree.leaf_values(|w| vec![(1.5 * w).clamp(-1.0, 1.0)]);
        let f = TreeDriver::linear(-0.5, 0.0, vec![0.0]);
        let sol = crate::backward_tree::solve_bsvi_tree(&phi, &f, &xi, &tree).unwrap();
        let c = BsviCandidate::from_solution(&sol).unwrap();
        let r = bsvi_jhat(&phi, &f, &tree, &xi, &c, &[]).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.note("closed_form_sup").unwrap().abs() < 1e-12);
        let shifted = c.shift_terminal(&tree, &[1.0]);
        // eta + 1 leaves the domain at the clipped leaves, so Phi(Y) is infinite
        let r = bsvi_jhat(&phi, &f, &tree, &xi, &shifted.unwrap(), &[]).unwrap();
        assert!(r.total >= 0.5);
    }
}

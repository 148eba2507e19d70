//! Forward multivalued SDEs: additive-noise equations solved pathwise through
//! the Skorohod map, and stochastic variational inequalities solved by a
//! drift/noise step followed by a resolvent.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitzpatrick::{default_mode, path_fitz_gap};
use crate::gsp::{min_window, solve_gsp, Scheme};
use crate::linalg::{dot, matvec, mean_se};
use crate::operators::{GraphPair, OperatorSpec};
use crate::paths::{fmt_f64, BVPath, GridPath};

/// Largest depth for which all `2^n` binomial paths are enumerated.
pub const MAX_ENUMERATION_STEPS: usize = 22;

const XI_STREAM_SALT: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    /// `dB ~ N(0, dt I)`, one ChaCha stream per path.
    Gaussian,
    /// All `2^n` sign patterns `dB_i = ±sqrt(dt_i)`, equally weighted, so
    /// ensemble means are exact expectations for the scaled random walk.
    BinomialEnumeration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerEnsemble {
    pub noise_dim: usize,
    pub grid: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub source: NoiseSource,
}

impl WienerEnsemble {
    pub fn gaussian(noise_dim: usize, grid: Vec<f64>, n_paths: usize, seed: u64) -> Result<Self> {
        if noise_dim == 0 || n_paths == 0 {
            return Err(Error::InvalidParameter("empty ensemble".into()));
        }
        GridPath::constant(grid.clone(), vec![0.0])?;
        Ok(WienerEnsemble {
            noise_dim,
            grid,
            n_paths,
            seed,
            source: NoiseSource::Gaussian,
        })
    }

    /// One-dimensional walk with every sign pattern enumerated.
    pub fn binomial_enumeration(grid: Vec<f64>) -> Result<Self> {
        GridPath::constant(grid.clone(), vec![0.0])?;
        let steps = grid.len() - 1;
        if steps > MAX_ENUMERATION_STEPS {
            return Err(Error::InvalidParameter(format!(
                "enumeration limited to {MAX_ENUMERATION_STEPS} steps"
            )));
        }
        Ok(WienerEnsemble {
            noise_dim: 1,
            grid,
            n_paths: 1 << steps,
            seed: 0,
            source: NoiseSource::BinomialEnumeration,
        })
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    /// Means over this ensemble are exact expectations.
    pub fn is_exact(&self) -> bool {
        self.source == NoiseSource::BinomialEnumeration
    }

    /// `dB` for one path, one vector per step. Step `i` only consumes the
    /// stream after steps `0..i`, so prefixes do not depend on later steps.
    pub fn increments(&self, path: usize) -> Vec<Vec<f64>> {
        let n = self.steps();
        match self.source {
            NoiseSource::Gaussian => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(path as u64);
                (0..n)
                    .map(|i| {
                        let s = (self.grid[i + 1] - self.grid[i]).sqrt();
                        (0..self.noise_dim)
                            .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect()
            }
            NoiseSource::BinomialEnumeration => (0..n)
                .map(|i| {
                    let s = (self.grid[i + 1] - self.grid[i]).sqrt();
                    vec![if (path >> i) & 1 == 1 { s } else { -s }]
                })
                .collect(),
        }
    }

    /// Generator for per-path initial data, independent of the noise stream.
    pub fn xi_rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ XI_STREAM_SALT);
        rng.set_stream(path as u64);
        rng
    }

    /// Same paths restricted to the first `steps` steps.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        let grid = self.grid[..=steps].to_vec();
        match self.source {
            NoiseSource::Gaussian => Self::gaussian(self.noise_dim, grid, self.n_paths, self.seed),
            NoiseSource::BinomialEnumeration => Self::binomial_enumeration(grid),
        }
    }
}

/// Law of the initial condition; samples are projected onto the closed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum XiSampler {
    Constant { value: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: f64 },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    Samples { values: Vec<Vec<f64>> },
}

impl XiSampler {
    pub fn dim(&self) -> usize {
        match self {
            XiSampler::Constant { value } => value.len(),
            XiSampler::Gaussian { mean, .. } => mean.len(),
            XiSampler::Uniform { lo, .. } => lo.len(),
            XiSampler::Samples { values } => values.first().map_or(0, |v| v.len()),
        }
    }

    pub fn sample(&self, ens: &WienerEnsemble, path: usize) -> Result<Vec<f64>> {
        Ok(match self {
            XiSampler::Constant { value } => value.clone(),
            XiSampler::Gaussian { mean, sd } => {
                let mut rng = ens.xi_rng(path);
                mean.iter()
                    .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            XiSampler::Uniform { lo, hi } => {
                let mut rng = ens.xi_rng(path);
                lo.iter()
                    .zip(hi)
                    .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                    .collect()
            }
            XiSampler::Samples { values } => values
                .get(path)
                .cloned()
                .ok_or_else(|| Error::InvalidParameter(format!("no sample for path {path}")))?,
        })
    }
}

/// Diffusion coefficient of the additive equation, `d x k` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DiffusionPath {
    Constant {
        matrix: Vec<f64>,
    },
    /// One matrix per step.
    Deterministic {
        matrices: Vec<Vec<f64>>,
    },
    /// One matrix per path and step.
    PerPath {
        matrices: Vec<Vec<Vec<f64>>>,
    },
}

impl DiffusionPath {
    pub fn matrix(&self, path: usize, step: usize) -> &[f64] {
        match self {
            DiffusionPath::Constant { matrix } => matrix,
            DiffusionPath::Deterministic { matrices } => &matrices[step],
            DiffusionPath::PerPath { matrices } => &matrices[path][step],
        }
    }

    fn check(&self, d: usize, k: usize, steps: usize, paths: usize) -> Result<()> {
        let ok = |m: &Vec<f64>| m.len() == d * k && m.iter().all(|v| v.is_finite());
        let valid = match self {
            DiffusionPath::Constant { matrix } => ok(matrix),
            DiffusionPath::Deterministic { matrices } => {
                matrices.len() == steps && matrices.iter().all(ok)
            }
            DiffusionPath::PerPath { matrices } => {
                matrices.len() == paths
                    && matrices
                        .iter()
                        .all(|p| p.len() == steps && p.iter().all(ok))
            }
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "diffusion must be {d}x{k} per step with finite entries"
            )))
        }
    }
}

pub type FieldFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// State-dependent coefficients `F(t, x)` and `G(t, x)` (row-major `d x k`).
#[derive(Clone)]
pub struct FieldCoefficients {
    pub drift: FieldFn,
    pub diffusion: FieldFn,
    pub dim: usize,
    pub noise_dim: usize,
    /// Asserts `2<x-y, F(x)-F(y)> + |G(x)-G(y)|^2 <= 0`.
    pub dissipative: bool,
}

impl std::fmt::Debug for FieldCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldCoefficients")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("dissipative", &self.dissipative)
            .finish()
    }
}

impl FieldCoefficients {
    /// `F(x) = A x + b`, `G(x) = G0` constant.
    pub fn affine(
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        g0: Vec<f64>,
        noise_dim: usize,
        dissipative: bool,
    ) -> Self {
        let dim = b.len();
        let flat: Vec<f64> = a.into_iter().flatten().collect();
        FieldCoefficients {
            drift: Arc::new(move |_, x| {
                let mut v = matvec(&flat, dim, dim, x);
                for (vi, bi) in v.iter_mut().zip(&b) {
                    *vi += bi;
                }
                v
            }),
            diffusion: Arc::new(move |_, _| g0.clone()),
            dim,
            noise_dim,
            dissipative,
        }
    }

    /// Largest sampled value of `2<x-y, F(t,x)-F(t,y)> + |G(t,x)-G(t,y)|^2`
    /// over random triples in `[0, horizon] x [-r, r]^d x [-r, r]^d`.
    pub fn dissipativity_defect(&self, horizon: f64, r: f64, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..n {
            let t = horizon * rng.random::<f64>();
            let x: Vec<f64> = (0..self.dim)
                .map(|_| r * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let y: Vec<f64> = (0..self.dim)
                .map(|_| r * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let fx = (self.drift)(t, &x);
            let fy = (self.drift)(t, &y);
            let gx = (self.diffusion)(t, &x);
            let gy = (self.diffusion)(t, &y);
            let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
            worst = worst.max(2.0 * dot(&dxy, &df) + dot(&dg, &dg));
        }
        worst
    }

    /// Rejects coefficients whose asserted dissipativity fails on samples.
    pub fn check(&self, horizon: f64) -> Result<()> {
        if self.dissipative {
            let defect = self.dissipativity_defect(horizon, 5.0, 1000, 17);
            if defect > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "coefficients flagged dissipative but sampled defect is {defect:e}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub xi: Vec<f64>,
    pub terminal: Vec<f64>,
    pub sup_x: f64,
    pub tv_k: f64,
    /// Discrete path gap; NaN when the operator has no closed form.
    pub fitz_gap: f64,
    pub x: Option<GridPath>,
    pub k: Option<BVPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n_paths: usize,
    pub e_sup_x2: f64,
    pub e_sup_x2_se: f64,
    pub e_tv_k: f64,
    pub e_tv_k_se: f64,
    pub max_fitz_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeEnsemble {
    pub paths: Vec<SdePath>,
    pub moments: MomentSummary,
}

impl SdeEnsemble {
    fn from_paths(paths: Vec<SdePath>) -> Self {
        let sup2: Vec<f64> = paths.iter().map(|p| p.sup_x * p.sup_x).collect();
        let tv: Vec<f64> = paths.iter().map(|p| p.tv_k).collect();
        let (e_sup_x2, e_sup_x2_se) = mean_se(&sup2);
        let (e_tv_k, e_tv_k_se) = mean_se(&tv);
        let max_fitz_gap = paths
            .iter()
            .map(|p| p.fitz_gap)
            .fold(f64::NEG_INFINITY, f64::max);
        SdeEnsemble {
            moments: MomentSummary {
                n_paths: paths.len(),
                e_sup_x2,
                e_sup_x2_se,
                e_tv_k,
                e_tv_k_se,
                max_fitz_gap,
            },
            paths,
        }
    }

    pub fn terminal_values(&self, coord: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.terminal[coord]).collect()
    }

    /// CSV `path_id,supX,TVK,fitz_gap`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["path_id", "supX", "TVK", "fitz_gap"])?;
        for (i, p) in self.paths.iter().enumerate() {
            wr.write_record([
                i.to_string(),
                fmt_f64(p.sup_x),
                fmt_f64(p.tv_k),
                fmt_f64(p.fitz_gap),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn finish_path(a: &OperatorSpec, xi: Vec<f64>, x: GridPath, k: BVPath, keep: bool) -> SdePath {
    let gap = path_fitz_gap(a, &x, &k, default_mode(a)).unwrap_or(f64::NAN);
    SdePath {
        xi,
        terminal: x.value(x.steps()).to_vec(),
        sup_x: x.sup_norm(),
        tv_k: k.total_variation(),
        fitz_gap: gap,
        x: keep.then_some(x),
        k: keep.then_some(k),
    }
}

/// `dX + A(X)dt ∋ G dB`: per path, `M = sum G dB` and `(X, K)` is the
/// catching-up solution of the Skorohod problem driven by `M` from `xi`.
pub fn solve_sde_additive(
    a: &OperatorSpec,
    xi: &XiSampler,
    g: &DiffusionPath,
    ens: &WienerEnsemble,
    keep_paths: bool,
) -> Result<SdeEnsemble> {
    let (d, kdim) = (a.dim, ens.noise_dim);
    if xi.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: xi.dim(),
        });
    }
    g.check(d, kdim, ens.steps(), ens.n_paths)?;
    let paths = (0..ens.n_paths)
        .into_par_iter()
        .map(|p| {
            let x0 = a.project_domain(&xi.sample(ens, p)?)?;
            let db = ens.increments(p);
            let mut m = Vec::with_capacity(db.len() + 1);
            let mut acc = vec![0.0; d];
            m.push(acc.clone());
            for (i, dbi) in db.iter().enumerate() {
                let inc = matvec(g.matrix(p, i), d, kdim, dbi);
                for (a, v) in acc.iter_mut().zip(&inc) {
                    *a += v;
                }
                m.push(acc.clone());
            }
            let m = GridPath::new(ens.grid.clone(), m)?;
            let sol = solve_gsp(a, &x0, &m, Scheme::CatchingUp)?;
            Ok(finish_path(a, x0, sol.x, sol.k, keep_paths))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SdeEnsemble::from_paths(paths))
}

/// One path of the splitting scheme
/// `X_{i+1} = J_dt(X_i + F(t_i, X_i) dt + G(t_i, X_i) dB_i)`.
pub fn svi_path(
    phi: &OperatorSpec,
    coeffs: &FieldCoefficients,
    x0: &[f64],
    grid: &[f64],
    db: &[Vec<f64>],
) -> Result<(GridPath, BVPath)> {
    let d = phi.dim;
    let mut xs = Vec::with_capacity(grid.len());
    let mut incs = Vec::with_capacity(db.len());
    let mut x = x0.to_vec();
    xs.push(x.clone());
    for (i, dbi) in db.iter().enumerate() {
        let t = grid[i];
        let dt = grid[i + 1] - t;
        let f = (coeffs.drift)(t, &x);
        let gm = (coeffs.diffusion)(t, &x);
        if f.len() != d || gm.len() != d * coeffs.noise_dim {
            return Err(Error::Dimension {
                expected: d,
                got: f.len(),
            });
        }
        let noise = matvec(&gm, d, coeffs.noise_dim, dbi);
        let z: Vec<f64> = (0..d).map(|c| x[c] + f[c] * dt + noise[c]).collect();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coefficients at step {i}")));
        }
        let y = phi.resolvent(dt, &z)?;
        incs.push(z.iter().zip(&y).map(|(p, q)| p - q).collect());
        xs.push(y.clone());
        x = y;
    }
    Ok((
        GridPath::new(grid.to_vec(), xs)?,
        BVPath::new(grid.to_vec(), incs)?,
    ))
}

/// `dX + ∂φ(X)(dt) ∋ F(t, X)dt + G(t, X)dB`.
pub fn solve_svi(
    phi: &OperatorSpec,
    coeffs: &FieldCoefficients,
    xi: &XiSampler,
    ens: &WienerEnsemble,
    keep_paths: bool,
) -> Result<SdeEnsemble> {
    if !phi.has_potential() {
        return Err(Error::InvalidParameter(
            "operator is not a subdifferential".into(),
        ));
    }
    if coeffs.dim != phi.dim || coeffs.noise_dim != ens.noise_dim || xi.dim() != phi.dim {
        return Err(Error::Dimension {
            expected: phi.dim,
            got: coeffs.dim,
        });
    }
    coeffs.check(*ens.grid.last().unwrap())?;
    let paths = (0..ens.n_paths)
        .into_par_iter()
        .map(|p| {
            let x0 = phi.project_domain(&xi.sample(ens, p)?)?;
            let (x, k) = svi_path(phi, coeffs, &x0, &ens.grid, &ens.increments(p))?;
            Ok(finish_path(phi, x0, x, k, keep_paths))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SdeEnsemble::from_paths(paths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviReport {
    /// Min over probes and windows of `sum <X_{r+1} - z, dK_r - z* dt_r>`.
    pub min_a2: f64,
    pub a2_witness: Option<(usize, usize, usize)>,
    /// Max over probe points and windows of
    /// `sum <z - X_{r+1}, dK_r> + (φ(X_{r+1}) - φ(z)) dt_r`.
    pub max_a1: f64,
    pub path_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Pathwise check of `dK ∈ ∂φ(X)(dt)` on all grid windows.
pub fn verify_svi(
    phi: &OperatorSpec,
    x: &GridPath,
    k: &BVPath,
    probes: &[GraphPair],
) -> Result<SviReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("verify_svi needs probes".into()));
    }
    x.check_same_grid(k.grid())?;
    let pot = |v: &[f64]| {
        phi.potential(v)
            .ok_or_else(|| Error::InvalidParameter("operator is not a subdifferential".into()))
    };
    let mut min_a2 = 0.0;
    let mut a2_witness = None;
    let mut max_a1: f64 = 0.0;
    let phix: Vec<f64> = (1..=k.steps())
        .map(|i| pot(x.value(i)))
        .collect::<Result<_>>()?;
    for (p, pr) in probes.iter().enumerate() {
        let phiz = pot(&pr.u)?;
        let mut a2 = Vec::with_capacity(k.steps());
        let mut a1 = Vec::with_capacity(k.steps());
        for r in 0..k.steps() {
            let dt = x.dt(r);
            let xr = x.value(r + 1);
            let dk = k.increment(r);
            let mut s2 = 0.0;
            let mut s1 = 0.0;
            for c in 0..xr.len() {
                s2 += (xr[c] - pr.u[c]) * (dk[c] - pr.ustar[c] * dt);
                s1 += (pr.u[c] - xr[c]) * dk[c];
            }
            a2.push(s2);
            // written as a min-window problem on the negated terms
            a1.push(-(s1 + (phix[r] - phiz) * dt));
        }
        let (v2, s, t) = min_window(&a2);
        if v2 < min_a2 {
            min_a2 = v2;
            a2_witness = Some((p, s, t));
        }
        max_a1 = max_a1.max(-min_window(&a1).0);
    }
    let path_gap = path_fitz_gap(phi, x, k, default_mode(phi))?;
    let tolerance = 1e-7 * (1.0 + x.sup_norm() + k.total_variation());
    let passed = min_a2 >= -tolerance && max_a1 <= tolerance && path_gap <= tolerance;
    Ok(SviReport {
        min_a2,
        a2_witness,
        max_a1,
        path_gap,
        tolerance,
        passed,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level 0.01.
pub fn ks_critical_01(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.627_6 * ((n + m) / (n * m)).sqrt()
}

/// Mean and standard error of `x^2`.
pub fn second_moment(xs: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
    mean_se(&sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::uniform_grid;

    #[test]
    fn gaussian_increments_are_reproducible_and_prefix_stable() {
        let e = WienerEnsemble::gaussian(2, uniform_grid(1.0, 20), 4, 9).unwrap();
        assert_eq!(e.increments(3), e.increments(3));
        assert_ne!(e.increments(2), e.increments(3));
        let t = e.truncated(7).unwrap();
        assert_eq!(t.increments(3)[..], e.increments(3)[..7]);
    }

    #[test]
    fn binomial_enumeration_moments_are_exact() {
        let e = WienerEnsemble::binomial_enumeration(uniform_grid(1.0, 6)).unwrap();
        assert_eq!(e.n_paths, 64);
        let bt: Vec<f64> = (0..64)
            .map(|p| e.increments(p).iter().map(|v| v[0]).sum())
            .collect();
        let (m, _) = mean_se(&bt);
        assert!(m.abs() < 1e-15);
        let (m2, _) = second_moment(&bt);
        assert!((m2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_noise_keeps_interior_start() {
        let a = OperatorSpec::half_space(1);
        let e = WienerEnsemble::gaussian(1, uniform_grid(1.0, 50), 8, 1).unwrap();
        let g = DiffusionPath::Constant { matrix: vec![0.0] };
        let s = solve_sde_additive(&a, &XiSampler::Constant { value: vec![0.3] }, &g, &e, true)
            .unwrap();
        for p in &s.paths {
            assert!(p.x.as_ref().unwrap().values().iter().all(|v| v[0] == 0.3));
            assert_eq!(p.tv_k, 0.0);
        }
    }

    #[test]
    fn svi_without_coefficients_is_catching_up() {
        let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
        let c = FieldCoefficients::affine(vec![vec![0.0]], vec![0.0], vec![0.0], 1, true);
        let e = WienerEnsemble::gaussian(1, uniform_grid(1.0, 10), 3, 1).unwrap();
        let s = solve_svi(
            &phi,
            &c,
            &XiSampler::Constant { value: vec![0.5] },
            &e,
            true,
        )
        .unwrap();
        for p in &s.paths {
            assert!(p.x.as_ref().unwrap().values().iter().all(|v| v[0] == 0.5));
        }
    }

    #[test]
    fn dissipativity_flag_is_checked() {
        let phi = OperatorSpec::half_space(1);
        let c = FieldCoefficients::affine(vec![vec![1.0]], vec![0.0], vec![1.0], 1, true);
        let e = WienerEnsemble::gaussian(1, uniform_grid(1.0, 10), 3, 1).unwrap();
        let r = solve_svi(
            &phi,
            &c,
            &XiSampler::Constant { value: vec![1.0] },
            &e,
            false,
        );
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn ks_statistic_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.1], &[1.0, 2.0]), 1.0);
        assert!((ks_statistic(&[0.0, 1.0, 2.0, 3.0], &[0.5, 1.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn verify_svi_examples() {
        let phi = OperatorSpec::half_space(1);
        let c = FieldCoefficients::affine(vec![vec![-1.0]], vec![0.0], vec![1.0], 1, true);
        let e = WienerEnsemble::gaussian(1, uniform_grid(1.0, 200), 2, 4).unwrap();
        let (x, k) = svi_path(&phi, &c, &[0.0], &e.grid, &e.increments(0)).unwrap();
        let probes = phi.graph_sample(&[-1.0], &[2.0], 50, 0.5, 3).unwrap();
        let r = verify_svi(&phi, &x, &k, &probes).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(k.total_variation() > 0.0);
        // same X but no reflection increments
        let r = verify_svi(&phi, &x, &BVPath::zero(e.grid.clone(), 1), &probes);
        assert!(r.unwrap().passed);
        let free = GridPath::from_fn(e.grid.clone(), |t| vec![-t]).unwrap();
        let r = verify_svi(&phi, &free, &BVPath::zero(e.grid.clone(), 1), &probes).unwrap();
        assert!(!r.passed);
        assert!(r.min_a2 < 0.0);
    }
}

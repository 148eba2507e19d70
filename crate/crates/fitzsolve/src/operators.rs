//! Maximal monotone operators on R^d given through their resolvents.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sub};

/// Relative slack used when testing membership in a closed convex set, so that
/// points produced by projections survive rounding.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

const SUM_MAX_ITER: usize = 10_000;
const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    /// Normal cone of the box `[lo, hi]`; sides may be infinite.
    NormalConeBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Normal cone of the closed ball `B(center, radius)`.
    NormalConeBall { center: Vec<f64>, radius: f64 },
    /// Subdifferential of `x -> sum_i w_i |x_i|`.
    SubdiffAbsSum { weights: Vec<f64> },
    /// Subdifferential of the indicator of `[a, b]^d`.
    SubdiffIndicatorInterval { a: f64, b: f64 },
    /// `x -> M x` with positive semidefinite symmetric part; rows of `M`.
    LinearMonotone { matrix: Vec<Vec<f64>> },
    /// `x -> c x`, `c >= 0`.
    ScaledIdentity { c: f64 },
    /// `M + B` where `B` is one of the subdifferential kinds above.
    Sum {
        matrix: Vec<Vec<f64>>,
        part: Box<OperatorKind>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: OperatorKind,
}

/// A point `(u, u*)` of the graph of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPair {
    pub u: Vec<f64>,
    pub ustar: Vec<f64>,
}

impl GraphPair {
    pub fn new(u: Vec<f64>, ustar: Vec<f64>) -> Self {
        GraphPair { u, ustar }
    }
}

impl OperatorSpec {
    pub fn new(dim: usize, kind: OperatorKind) -> Result<Self> {
        let spec = OperatorSpec { dim, kind };
        spec.validate()?;
        Ok(spec)
    }

    pub fn normal_cone_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        Self::new(lo.len(), OperatorKind::NormalConeBox { lo, hi })
    }

    /// Normal cone of `[0, inf)^d`.
    pub fn half_space(dim: usize) -> Self {
        Self::normal_cone_box(vec![0.0; dim], vec![f64::INFINITY; dim]).expect("valid box")
    }

    pub fn normal_cone_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(
            center.len(),
            OperatorKind::NormalConeBall { center, radius },
        )
    }

    pub fn abs_sum(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights.len(), OperatorKind::SubdiffAbsSum { weights })
    }

    pub fn interval(dim: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(dim, OperatorKind::SubdiffIndicatorInterval { a, b })
    }

    pub fn linear(matrix: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(matrix.len(), OperatorKind::LinearMonotone { matrix })
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        Self::new(dim, OperatorKind::ScaledIdentity { c })
    }

    pub fn sum(matrix: Vec<Vec<f64>>, part: OperatorKind) -> Result<Self> {
        Self::new(
            matrix.len(),
            OperatorKind::Sum {
                matrix,
                part: Box::new(part),
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        validate_kind(&self.kind, self.dim, true)
    }

    /// Short tag used in reports.
    pub fn tag(&self) -> &'static str {
        kind_tag(&self.kind)
    }

    /// Normal cones of closed convex sets: the operators whose Fitzpatrick
    /// function is positively homogeneous in `x*`.
    pub fn is_cone(&self) -> bool {
        matches!(
            self.kind,
            OperatorKind::NormalConeBox { .. }
                | OperatorKind::NormalConeBall { .. }
                | OperatorKind::SubdiffIndicatorInterval { .. }
        )
    }

    /// Coordinate bounds of the constraint set for box-like kinds.
    pub fn box_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            OperatorKind::NormalConeBox { lo, hi } => Some((lo.clone(), hi.clone())),
            OperatorKind::SubdiffIndicatorInterval { a, b } => {
                Some((vec![*a; self.dim], vec![*b; self.dim]))
            }
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `J_eps(x) = (I + eps A)^{-1} x`.
    pub fn resolvent(&self, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        self.check_dim(x)?;
        resolvent_kind(&self.kind, self.dim, eps, x)
    }

    /// `(J_eps x, A_eps x)` with `A_eps x = (x - J_eps x) / eps`.
    pub fn yosida(&self, eps: f64, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let jx = self.resolvent(eps, x)?;
        let ax = x.iter().zip(&jx).map(|(a, b)| (a - b) / eps).collect();
        Ok((jx, ax))
    }

    /// Exact graph pairs obtained by pushing uniform samples of the box
    /// `[lo, hi]` through the Yosida map.
    pub fn graph_sample(
        &self,
        lo: &[f64],
        hi: &[f64],
        n: usize,
        eps: f64,
        seed: u64,
    ) -> Result<Vec<GraphPair>> {
        self.check_dim(lo)?;
        self.check_dim(hi)?;
        if lo
            .iter()
            .zip(hi)
            .any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite())
        {
            return Err(Error::InvalidParameter(
                "sampling box needs finite lo < hi".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect();
            let (u, ustar) = self.yosida(eps, &v)?;
            out.push(GraphPair { u, ustar });
        }
        Ok(out)
    }

    /// Projection onto the closure of the domain (identity for kinds with
    /// full domain).
    pub fn project_domain(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let kind = match &self.kind {
            OperatorKind::Sum { part, .. } => part.as_ref(),
            k => k,
        };
        match kind {
            OperatorKind::NormalConeBox { .. }
            | OperatorKind::NormalConeBall { .. }
            | OperatorKind::SubdiffIndicatorInterval { .. } => {
                resolvent_kind(kind, self.dim, 1.0, x)
            }
            _ => Ok(x.to_vec()),
        }
    }

    /// Distance from `x` to the closure of the domain.
    pub fn domain_distance(&self, x: &[f64]) -> Result<f64> {
        let p = self.project_domain(x)?;
        Ok(norm(&sub(x, &p)))
    }

    /// Membership in the constraint set of a cone kind, with rounding slack.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.kind {
            OperatorKind::NormalConeBox { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&l, &h))| v >= l - slack(l) && v <= h + slack(h)),
            OperatorKind::SubdiffIndicatorInterval { a, b } => {
                x.iter().all(|&v| v >= a - slack(*a) && v <= b + slack(*b))
            }
            OperatorKind::NormalConeBall { center, radius } => {
                norm(&sub(x, center)) <= radius + MEMBERSHIP_TOL * (1.0 + radius)
            }
            _ => true,
        }
    }

    /// Support function of the constraint set of a cone kind.
    pub fn support(&self, v: &[f64]) -> Option<f64> {
        match &self.kind {
            OperatorKind::NormalConeBox { lo, hi } => Some(box_support(lo, hi, v)),
            OperatorKind::SubdiffIndicatorInterval { a, b } => {
                Some(v.iter().map(|&vi| side_support(*a, *b, vi)).sum())
            }
            OperatorKind::NormalConeBall { center, radius } => {
                Some(dot(center, v) + radius * norm(v))
            }
            _ => None,
        }
    }

    /// A convex potential `phi` with `A = d phi`, where one exists. Returns
    /// `None` for non-symmetric linear parts. Indicators give `+inf` outside.
    pub fn potential(&self, x: &[f64]) -> Option<f64> {
        potential_kind(&self.kind, x, self)
    }

    /// Whether the operator is a subdifferential with a computable potential.
    pub fn has_potential(&self) -> bool {
        self.potential(&vec![0.0; self.dim]).is_some()
    }
}

fn slack(bound: f64) -> f64 {
    if bound.is_finite() {
        MEMBERSHIP_TOL * (1.0 + bound.abs())
    } else {
        0.0
    }
}

fn side_support(lo: f64, hi: f64, v: f64) -> f64 {
    if v > 0.0 {
        hi * v
    } else if v < 0.0 {
        lo * v
    } else {
        0.0
    }
}

pub(crate) fn box_support(lo: &[f64], hi: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((&l, &h), &vi) in lo.iter().zip(hi).zip(v) {
        s += side_support(l, h, vi);
    }
    s
}

fn kind_tag(kind: &OperatorKind) -> &'static str {
    match kind {
        OperatorKind::NormalConeBox { .. } => "normal_cone_box",
        OperatorKind::NormalConeBall { .. } => "normal_cone_ball",
        OperatorKind::SubdiffAbsSum { .. } => "subdiff_abs_sum",
        OperatorKind::SubdiffIndicatorInterval { .. } => "subdiff_indicator_interval",
        OperatorKind::LinearMonotone { .. } => "linear_monotone",
        OperatorKind::ScaledIdentity { .. } => "scaled_identity",
        OperatorKind::Sum { .. } => "sum",
    }
}

fn check_len(v: &[f64], dim: usize, what: &str) -> Result<()> {
    if v.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "{what} has length {}, expected {dim}",
            v.len()
        )));
    }
    Ok(())
}

fn validate_kind(kind: &OperatorKind, dim: usize, top: bool) -> Result<()> {
    match kind {
        OperatorKind::NormalConeBox { lo, hi } => {
            check_len(lo, dim, "lo")?;
            check_len(hi, dim, "hi")?;
            for (l, h) in lo.iter().zip(hi) {
                if l.is_nan()
                    || h.is_nan()
                    || l > h
                    || *l == f64::INFINITY
                    || *h == f64::NEG_INFINITY
                {
                    return Err(Error::InvalidParameter(format!(
                        "empty box side [{l}, {h}]"
                    )));
                }
            }
        }
        OperatorKind::NormalConeBall { center, radius } => {
            check_len(center, dim, "center")?;
            if !(*radius > 0.0) || !radius.is_finite() {
                return Err(Error::InvalidParameter(
                    "ball radius must be positive".into(),
                ));
            }
        }
        OperatorKind::SubdiffAbsSum { weights } => {
            check_len(weights, dim, "weights")?;
            if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(Error::InvalidParameter("weights must be positive".into()));
            }
        }
        OperatorKind::SubdiffIndicatorInterval { a, b } => {
            if a.is_nan() || b.is_nan() || a > b || *a == f64::INFINITY || *b == f64::NEG_INFINITY {
                return Err(Error::InvalidParameter(format!(
                    "empty interval [{a}, {b}]"
                )));
            }
        }
        OperatorKind::LinearMonotone { matrix } => validate_matrix(matrix, dim)?,
        OperatorKind::ScaledIdentity { c } => {
            if !(*c >= 0.0) || !c.is_finite() {
                return Err(Error::InvalidParameter("scale must be nonnegative".into()));
            }
        }
        OperatorKind::Sum { matrix, part } => {
            if !top {
                return Err(Error::InvalidParameter(
                    "nested sums are not supported".into(),
                ));
            }
            validate_matrix(matrix, dim)?;
            if matches!(
                part.as_ref(),
                OperatorKind::LinearMonotone { .. } | OperatorKind::Sum { .. }
            ) {
                return Err(Error::InvalidParameter(
                    "sum part must be a subdifferential kind".into(),
                ));
            }
            validate_kind(part, dim, false)?;
        }
    }
    Ok(())
}

fn to_dmatrix(matrix: &[Vec<f64>]) -> DMatrix<f64> {
    let d = matrix.len();
    DMatrix::from_fn(d, d, |i, j| matrix[i][j])
}

fn validate_matrix(matrix: &[Vec<f64>], dim: usize) -> Result<()> {
    if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidParameter(format!(
            "matrix must be {dim}x{dim}"
        )));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix".into()));
    }
    let m = to_dmatrix(matrix);
    let s = (&m + m.transpose()) * 0.5;
    let min_eig = s.symmetric_eigenvalues().min();
    let scale = 1.0 + s.amax();
    if min_eig < -1e-12 * scale {
        return Err(Error::InvalidParameter(format!(
            "symmetric part is not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

fn resolvent_kind(kind: &OperatorKind, dim: usize, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(match kind {
        OperatorKind::NormalConeBox { lo, hi } => x
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect(),
        OperatorKind::SubdiffIndicatorInterval { a, b } => {
            x.iter().map(|&v| v.max(*a).min(*b)).collect()
        }
        OperatorKind::NormalConeBall { center, radius } => {
            let d = sub(x, center);
            let r = norm(&d);
            if r <= *radius {
                x.to_vec()
            } else {
                let s = radius / r;
                center.iter().zip(&d).map(|(c, di)| c + s * di).collect()
            }
        }
        OperatorKind::SubdiffAbsSum { weights } => x
            .iter()
            .zip(weights)
            .map(|(&v, &w)| {
                let t = eps * w;
                if v > t {
                    v - t
                } else if v < -t {
                    v + t
                } else {
                    0.0
                }
            })
            .collect(),
        OperatorKind::ScaledIdentity { c } => x.iter().map(|v| v / (1.0 + eps * c)).collect(),
        OperatorKind::LinearMonotone { matrix } => {
            let m = to_dmatrix(matrix);
            let a = DMatrix::identity(dim, dim) + m * eps;
            let rhs = DVector::from_column_slice(x);
            let y = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::InvalidParameter("singular resolvent system".into()))?;
            y.iter().copied().collect()
        }
        OperatorKind::Sum { matrix, part } => sum_resolvent(matrix, part, dim, eps, x)?,
    })
}

/// Douglas-Rachford splitting of `x ∈ y + eps M y + eps B y` into the
/// strongly monotone affine part `y - x + eps M y` and `eps B`, with step
/// `gamma = (1 + eps |M|_F)^{-1/2}`.
fn sum_resolvent(
    matrix: &[Vec<f64>],
    part: &OperatorKind,
    dim: usize,
    eps: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let m = to_dmatrix(matrix);
    let gamma = 1.0 / (1.0 + eps * m.norm()).sqrt();
    let lu = (DMatrix::identity(dim, dim) * (1.0 + gamma) + &m * (gamma * eps)).lu();
    let mut z = resolvent_kind(part, dim, eps, x)?;
    let mut residual = f64::INFINITY;
    for _ in 0..SUM_MAX_ITER {
        let rhs = DVector::from_iterator(dim, (0..dim).map(|i| z[i] + gamma * x[i]));
        let w: Vec<f64> = lu
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidParameter("singular resolvent system".into()))?
            .iter()
            .copied()
            .collect();
        let reflected: Vec<f64> = (0..dim).map(|i| 2.0 * w[i] - z[i]).collect();
        let v = resolvent_kind(part, dim, gamma * eps, &reflected)?;
        residual = norm(&sub(&v, &w));
        if !residual.is_finite() {
            break;
        }
        if residual <= SUM_TOL * (1.0 + norm(&w)) {
            return Ok(v);
        }
        for i in 0..dim {
            z[i] += v[i] - w[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: SUM_MAX_ITER,
        residual,
    })
}

fn potential_kind(kind: &OperatorKind, x: &[f64], spec: &OperatorSpec) -> Option<f64> {
    match kind {
        OperatorKind::NormalConeBox { .. }
        | OperatorKind::NormalConeBall { .. }
        | OperatorKind::SubdiffIndicatorInterval { .. } => {
            let probe = OperatorSpec {
                dim: spec.dim,
                kind: kind.clone(),
            };
            Some(if probe.contains(x) {
                0.0
            } else {
                f64::INFINITY
            })
        }
        OperatorKind::SubdiffAbsSum { weights } => {
            Some(x.iter().zip(weights).map(|(v, w)| w * v.abs()).sum())
        }
        OperatorKind::ScaledIdentity { c } => Some(0.5 * c * dot(x, x)),
        OperatorKind::LinearMonotone { matrix } => symmetric(matrix).then(|| 0.5 * quad(matrix, x)),
        OperatorKind::Sum { matrix, part } => {
            if !symmetric(matrix) {
                return None;
            }
            let p = potential_kind(part, x, spec)?;
            Some(0.5 * quad(matrix, x) + p)
        }
    }
}

fn symmetric(matrix: &[Vec<f64>]) -> bool {
    let d = matrix.len();
    (0..d).all(|i| (0..d).all(|j| matrix[i][j] == matrix[j][i]))
}

fn quad(matrix: &[Vec<f64>], x: &[f64]) -> f64 {
    matrix.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum()
}

/// Minimum over distinct pairs of `<u - v, u* - v*>`.
pub fn monotonicity_certificate(pairs: &[GraphPair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InvalidParameter(
            "monotonicity certificate needs at least two pairs".into(),
        ));
    }
    let mut min = f64::INFINITY;
    for i in 0..pairs.len() {
        for j in (i + 1)..pairs.len() {
            let du = sub(&pairs[i].u, &pairs[j].u);
            let ds = sub(&pairs[i].ustar, &pairs[j].ustar);
            min = min.min(dot(&du, &ds));
        }
    }
    Ok(min)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bisection on `y + eps * sign(y) = x` for the scalar soft threshold.
    fn soft_threshold_oracle(eps: f64, x: f64) -> f64 {
        if x.abs() <= eps {
            return 0.0;
        }
        let (mut lo, mut hi) = (-x.abs() - 1.0, x.abs() + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let g = mid + eps * mid.signum() - x;
            if g > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn box_resolvent_clamps() {
        let a = OperatorSpec::normal_cone_box(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(a.resolvent(0.5, &[2.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn abs_sum_resolvent_matches_bisection() {
        let a = OperatorSpec::abs_sum(vec![1.0]).unwrap();
        assert_eq!(a.resolvent(0.5, &[0.2]).unwrap(), vec![0.0]);
        for &x in &[-3.0, -0.7, 0.4, 0.6, 2.5] {
            let y = a.resolvent(0.5, &[x]).unwrap()[0];
            assert!((y - soft_threshold_oracle(0.5, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_identity_resolvent_halves() {
        let a = OperatorSpec::scaled_identity(1, 1.0).unwrap();
        assert_eq!(a.resolvent(1.0, &[4.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn yosida_half_line() {
        let a = OperatorSpec::half_space(1);
        let (j, ax) = a.yosida(0.1, &[-0.5]).unwrap();
        assert_eq!(j, vec![0.0]);
        assert!((ax[0] + 5.0).abs() < 1e-12);
        assert!(ax[0] <= 0.0);
        let (j, ax) = a.yosida(0.1, &[0.5]).unwrap();
        assert_eq!((j[0], ax[0]), (0.5, 0.0));
    }

    #[test]
    fn yosida_scaled_identity() {
        let a = OperatorSpec::scaled_identity(1, 1.0).unwrap();
        let (j, ax) = a.yosida(0.5, &[3.0]).unwrap();
        assert!((j[0] - 2.0).abs() < 1e-15);
        assert!((ax[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_resolvent_solves_system() {
        let m = vec![vec![1.0, 2.0], vec![-2.0, 1.0]];
        let a = OperatorSpec::linear(m.clone()).unwrap();
        let x = [0.3, -1.7];
        let y = a.resolvent(0.7, &x).unwrap();
        for i in 0..2 {
            let r = y[i] + 0.7 * dot(&m[i], &y) - x[i];
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn sum_resolvent_satisfies_inclusion() {
        let m = vec![vec![0.5, 0.3], vec![-0.3, 0.5]];
        let part = OperatorKind::NormalConeBox {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
        };
        let a = OperatorSpec::sum(m.clone(), part).unwrap();
        let x = [2.5, -0.2];
        let eps = 0.4;
        let y = a.resolvent(eps, &x).unwrap();
        // x - y - eps M y must lie in eps N_box(y)
        let n: Vec<f64> = (0..2).map(|i| x[i] - y[i] - eps * dot(&m[i], &y)).collect();
        for i in 0..2 {
            assert!(y[i].abs() <= 1.0 + 1e-12);
            if y[i].abs() < 1.0 - 1e-9 {
                assert!(n[i].abs() < 1e-10);
            } else {
                assert!(n[i] * y[i].signum() >= -1e-10);
            }
        }
    }

    #[test]
    fn sum_resolvent_reports_nonconvergence() {
        let m = vec![vec![0.0, 50.0], vec![-50.0, 0.0]];
        let part = OperatorKind::ScaledIdentity { c: 0.0 };
        let a = OperatorSpec::sum(m, part).unwrap();
        let y = a.resolvent(1.0, &[1.0, 1.0]).unwrap();
        let back = [y[0] + 50.0 * y[1], y[1] - 50.0 * y[0]];
        assert!((back[0] - 1.0).abs() < 1e-10 && (back[1] - 1.0).abs() < 1e-10);
        match a.resolvent(1.0, &[f64::NAN, 1.0]) {
            Err(Error::NoConvergence { residual, .. }) => assert!(residual.is_nan()),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn graph_sample_examples() {
        let a = OperatorSpec::scaled_identity(2, 1.0).unwrap();
        assert!(a
            .graph_sample(&[-1.0; 2], &[1.0; 2], 0, 0.5, 1)
            .unwrap()
            .is_empty());
        for p in a.graph_sample(&[-1.0; 2], &[1.0; 2], 20, 0.5, 1).unwrap() {
            for i in 0..2 {
                assert!((p.u[i] - p.ustar[i]).abs() < 1e-15);
            }
        }
        let b = OperatorSpec::normal_cone_box(vec![-0.5, 0.0], vec![0.5, 2.0]).unwrap();
        for p in b.graph_sample(&[-3.0; 2], &[3.0; 2], 200, 0.5, 7).unwrap() {
            assert!(b.contains(&p.u));
        }
        let s1 = b.graph_sample(&[-3.0; 2], &[3.0; 2], 5, 0.5, 7).unwrap();
        let s2 = b.graph_sample(&[-3.0; 2], &[3.0; 2], 5, 0.5, 7).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn certificate_examples() {
        let bad = vec![
            GraphPair::new(vec![0.0], vec![1.0]),
            GraphPair::new(vec![1.0], vec![0.0]),
        ];
        assert_eq!(monotonicity_certificate(&bad).unwrap(), -1.0);
        assert!(monotonicity_certificate(&bad[..1]).is_err());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(OperatorSpec::normal_cone_box(vec![1.0], vec![0.0]).is_err());
        assert!(OperatorSpec::normal_cone_ball(vec![0.0], -1.0).is_err());
        assert!(OperatorSpec::abs_sum(vec![0.0]).is_err());
        assert!(OperatorSpec::linear(vec![vec![-1.0]]).is_err());
        assert!(OperatorSpec::scaled_identity(1, -0.1).is_err());
        assert!(OperatorSpec::linear(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]).is_ok());
    }

    #[test]
    fn potentials() {
        let a = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
        assert_eq!(a.potential(&[0.5]), Some(0.0));
        assert_eq!(a.potential(&[1.5]), Some(f64::INFINITY));
        let b = OperatorSpec::linear(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(!b.has_potential());
        let c = OperatorSpec::scaled_identity(2, 2.0).unwrap();
        assert_eq!(c.potential(&[1.0, 1.0]), Some(2.0));
    }
}

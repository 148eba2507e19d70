//! Brute-force references written independently of the library solvers.

use fitzsolve::paths::GridPath;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Piecewise-linear path through `(knots[i], values[i])`, sampled on `grid`.
pub fn piecewise_linear(grid: &[f64], knots: &[f64], values: &[Vec<f64>]) -> GridPath {
    GridPath::from_fn(grid.to_vec(), |t| {
        let i = knots.partition_point(|&s| s <= t).clamp(1, knots.len() - 1);
        let w = (t - knots[i - 1]) / (knots[i] - knots[i - 1]);
        values[i - 1]
            .iter()
            .zip(&values[i])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    })
    .expect("grid path")
}

/// Random piecewise-linear driver with `m(0) = 0`.
pub fn random_driver(rng: &mut ChaCha8Rng, grid: &[f64], dim: usize, scale: f64) -> GridPath {
    let pieces = rng.random_range(2..9);
    let horizon = *grid.last().unwrap();
    let mut knots: Vec<f64> = (0..pieces - 1)
        .map(|_| rng.random_range(0.0..horizon))
        .collect();
    knots.push(0.0);
    knots.push(horizon);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let values: Vec<Vec<f64>> = (0..knots.len())
        .map(|i| {
            if i == 0 {
                vec![0.0; dim]
            } else {
                (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
            }
        })
        .collect();
    piecewise_linear(grid, &knots, &values)
}

/// `x_i = x0 + m_i + max(0, max_{j<=i} -(x0 + m_j))` and `k = x0 + m - x`,
/// as an explicit double loop.
pub fn reflection_formula(x0: f64, m: &GridPath) -> (Vec<f64>, Vec<f64>) {
    let n = m.grid().len();
    let mut xs = Vec::with_capacity(n);
    let mut ks = Vec::with_capacity(n);
    for i in 0..n {
        let mut worst: f64 = 0.0;
        for j in 0..=i {
            worst = worst.max(-(x0 + m.value(j)[0]));
        }
        ks.push(-worst);
        xs.push(x0 + m.value(i)[0] + worst);
    }
    (xs, ks)
}

/// One-dimensional graphs with `A(u)` written out as an interval.
#[derive(Clone, Copy, Debug)]
pub enum Graph1d {
    Identity,
    HalfLine,
    Abs,
}

impl Graph1d {
    pub fn values(self, u: f64) -> Option<(f64, f64)> {
        match self {
            Graph1d::Identity => Some((u, u)),
            Graph1d::HalfLine if u < 0.0 => None,
            Graph1d::HalfLine if u == 0.0 => Some((f64::NEG_INFINITY, 0.0)),
            Graph1d::HalfLine => Some((0.0, 0.0)),
            Graph1d::Abs if u < 0.0 => Some((-1.0, -1.0)),
            Graph1d::Abs if u == 0.0 => Some((-1.0, 1.0)),
            Graph1d::Abs => Some((1.0, 1.0)),
        }
    }

    /// Sup of `u x* + x u* - u u*` over the graph inside `[-10, 10]^2` with
    /// `u` on a 1e-3 grid; the objective is affine in `u*`, so only the
    /// endpoints of each vertical segment matter.
    pub fn grid_sup(self, x: f64, xs: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in -10_000..=10_000 {
            let u = i as f64 * 1e-3;
            if let Some((lo, hi)) = self.values(u) {
                for us in [lo.max(-10.0), hi.min(10.0)] {
                    if us >= lo && us <= hi {
                        best = best.max(u * xs + x * us - u * us);
                    }
                }
            }
        }
        best
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

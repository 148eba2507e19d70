//! Piecewise-linear paths on a time grid and their bounded-variation companions.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, norm, pairwise_sum};

/// Fixed-width float formatting used for every CSV field: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::GridMismatch("empty grid".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch(
            "grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Uniform grid `0 = t_0 < ... < t_n = horizon`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    let dt = horizon / n as f64;
    (0..=n)
        .map(|i| if i == n { horizon } else { i as f64 * dt })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl GridPath {
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|v| v.len() != d) {
            return Err(Error::GridMismatch("inconsistent value dimension".into()));
        }
        Ok(GridPath { grid, values })
    }

    /// Sample a function of time at every grid node.
    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let values = vec![v; grid.len()];
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of steps (grid length minus one).
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.grid[i + 1] - self.grid[i]
    }

    pub fn increment(&self, i: usize) -> Vec<f64> {
        self.values[i + 1]
            .iter()
            .zip(&self.values[i])
            .map(|(a, b)| a - b)
            .collect()
    }

    /// `max_i |v_i|`; for a piecewise-linear path this is the sup norm.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| norm(v)).fold(0.0, f64::max)
    }

    /// `max_i |v_i - w_i|` over a shared grid.
    pub fn sup_dist(&self, other: &GridPath) -> Result<f64> {
        self.check_same_grid(other.grid())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max))
    }

    pub fn check_same_grid(&self, grid: &[f64]) -> Result<()> {
        if self.grid.as_slice() != grid {
            return Err(Error::GridMismatch("paths live on different grids".into()));
        }
        Ok(())
    }

    /// Grid-restricted modulus of continuity: `max |v_i - v_j|` over nodes with
    /// `|t_i - t_j| <= delta`.
    pub fn modulus(&self, delta: f64) -> f64 {
        let n = self.grid.len();
        let mut m: f64 = 0.0;
        for i in 0..n {
            let mut j = i + 1;
            while j < n && self.grid[j] - self.grid[i] <= delta * (1.0 + 1e-12) {
                m = m.max(dist(&self.values[i], &self.values[j]));
                j += 1;
            }
        }
        m
    }

    /// Pointwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &GridPath, b: f64) -> Result<GridPath> {
        self.check_same_grid(other.grid())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
            .collect();
        GridPath::new(self.grid.clone(), values)
    }

    /// Restriction to the first `n + 1` nodes.
    pub fn truncate(&self, n: usize) -> Result<GridPath> {
        GridPath::new(self.grid[..=n].to_vec(), self.values[..=n].to_vec())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("v{i}")));
        wr.write_record(&header)?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(v.iter().map(|x| fmt_f64(*x)));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (grid, values) = read_table(r, "v")?;
        GridPath::new(grid, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BVPath {
    grid: Vec<f64>,
    increments: Vec<Vec<f64>>,
}

impl BVPath {
    pub fn new(grid: Vec<f64>, increments: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(&grid)?;
        if increments.len() + 1 != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} increments for {} grid points",
                increments.len(),
                grid.len()
            )));
        }
        if let Some(first) = increments.first() {
            let d = first.len();
            if d == 0 || increments.iter().any(|v| v.len() != d) {
                return Err(Error::GridMismatch(
                    "inconsistent increment dimension".into(),
                ));
            }
        }
        if increments.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("increments".into()));
        }
        Ok(BVPath { grid, increments })
    }

    pub fn zero(grid: Vec<f64>, dim: usize) -> Self {
        let n = grid.len() - 1;
        BVPath {
            grid,
            increments: vec![vec![0.0; dim]; n],
        }
    }

    /// Increments of the node values of `path` (which must start at zero).
    pub fn from_values(path: &GridPath) -> Result<Self> {
        if norm(path.value(0)) != 0.0 {
            return Err(Error::Constraint(
                "bounded-variation path must start at 0".into(),
            ));
        }
        let inc = (0..path.steps()).map(|i| path.increment(i)).collect();
        BVPath::new(path.grid().to_vec(), inc)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i]
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn dim(&self) -> usize {
        self.increments.first().map_or(0, |v| v.len())
    }

    /// `sum_i |dk_i|`.
    pub fn total_variation(&self) -> f64 {
        let n: Vec<f64> = self.increments.iter().map(|v| norm(v)).collect();
        pairwise_sum(&n)
    }

    /// Node values `k(t_i)`, with `k(0) = 0`.
    pub fn values(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = vec![0.0; d];
        out.push(acc.clone());
        for inc in &self.increments {
            for (a, v) in acc.iter_mut().zip(inc) {
                *a += v;
            }
            out.push(acc.clone());
        }
        out
    }

    pub fn to_grid_path(&self) -> GridPath {
        GridPath {
            grid: self.grid.clone(),
            values: self.values(),
        }
    }

    pub fn scale(&self, s: f64) -> BVPath {
        BVPath {
            grid: self.grid.clone(),
            increments: self
                .increments
                .iter()
                .map(|v| v.iter().map(|x| s * x).collect())
                .collect(),
        }
    }

    /// `a * self + b * other` increment-wise.
    pub fn combine(&self, a: f64, other: &BVPath, b: f64) -> Result<BVPath> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("paths live on different grids".into()));
        }
        let increments = self
            .increments
            .iter()
            .zip(&other.increments)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
            .collect();
        BVPath::new(self.grid.clone(), increments)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("dk{i}")));
        wr.write_record(&header)?;
        for (t, v) in self.grid[1..].iter().zip(&self.increments) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(v.iter().map(|x| fmt_f64(*x)));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the `t,dk1..` format; the first time column entry is the right
    /// end of the first step, and the grid is assumed to start at 0.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (mut times, inc) = read_table(r, "dk")?;
        times.insert(0, 0.0);
        BVPath::new(times, inc)
    }
}

fn read_table<R: Read>(r: R, prefix: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.get(0) != Some("t") {
        return Err(Error::Io("first column must be `t`".into()));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("{prefix}{}", i + 1) {
            return Err(Error::Io(format!("unexpected column `{h}`")));
        }
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let parsed = parsed.map_err(|e| Error::Io(format!("bad number: {e}")))?;
        times.push(parsed[0]);
        rows.push(parsed[1..].to_vec());
    }
    Ok((times, rows))
}

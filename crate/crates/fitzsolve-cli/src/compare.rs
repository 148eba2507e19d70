use std::collections::BTreeSet;

use fitzsolve::paths::fmt_f64;

use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricDiff {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub abs_diff: f64,
    pub rel_diff: f64,
    pub drift: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<MetricDiff>,
    pub warnings: Vec<String>,
    /// `(dt_a, dt_b)` when the two runs used different step sizes.
    pub refinement: Option<(f64, f64)>,
}

impl CompareReport {
    pub fn drifted(&self) -> bool {
        self.rows.iter().any(|r| r.drift)
    }

    pub fn to_csv(&self) -> String {
        let mut wr = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut header = vec!["metric", "a", "b", "abs_diff", "rel_diff", "drift"];
        if self.refinement.is_some() {
            header.extend(["dt_a", "dt_b"]);
        }
        wr.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut row = vec![
                r.metric.clone(),
                opt(r.a),
                opt(r.b),
                fmt_f64(r.abs_diff),
                fmt_f64(r.rel_diff),
                r.drift.to_string(),
            ];
            if let Some((da, db)) = self.refinement {
                row.extend([fmt_f64(da), fmt_f64(db)]);
            }
            wr.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(wr.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Per-metric differences; a metric drifts when `|a - b| > tol` or it is
/// missing from one run.
pub fn compare(a: &RunManifest, b: &RunManifest, tol: f64) -> Result<CompareReport, String> {
    if a.experiment != b.experiment {
        return Err(format!(
            "experiment kinds differ: {} vs {}",
            a.experiment, b.experiment
        ));
    }
    let mut warnings = Vec::new();
    if a.operator != b.operator || a.config.operator != b.config.operator {
        warnings.push(format!(
            "operators differ ({} vs {}); comparing shared metrics",
            a.operator, b.operator
        ));
    }
    if a.library_version != b.library_version {
        warnings.push(format!(
            "library versions differ: {} vs {}",
            a.library_version, b.library_version
        ));
    }
    let names: BTreeSet<&String> = a.metrics.keys().chain(b.metrics.keys()).collect();
    let rows = names
        .into_iter()
        .map(|name| {
            let (va, vb) = (a.metrics.get(name).copied(), b.metrics.get(name).copied());
            let (abs_diff, rel_diff, drift) = match (va, vb) {
                (Some(x), Some(y)) if same(x, y) => (0.0, 0.0, false),
                (Some(x), Some(y)) => {
                    let d = (x - y).abs();
                    let scale = x.abs().max(y.abs());
                    let rel = if scale > 0.0 { d / scale } else { 0.0 };
                    (d, rel, !(d <= tol))
                }
                _ => (f64::NAN, f64::NAN, true),
            };
            MetricDiff {
                metric: name.clone(),
                a: va,
                b: vb,
                abs_diff,
                rel_diff,
                drift,
            }
        })
        .collect();
    let refinement = match (a.metrics.get("dt"), b.metrics.get("dt")) {
        (Some(&x), Some(&y)) if x != y => Some((x, y)),
        _ => None,
    };
    Ok(CompareReport {
        rows,
        warnings,
        refinement,
    })
}

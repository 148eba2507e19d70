use fitzsolve::fitzpatrick::{fitz_closed_form, fitz_gap};
use fitzsolve::operators::{GraphPair, OperatorKind, OperatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::{dot, norm, Graph1d};
use crate::Check;

/// Two-dimensional built-ins with a closed-form Fitzpatrick function.
pub fn closed_form_kinds() -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::normal_cone_box(vec![0.0, -1.0], vec![1.0, 2.0]).unwrap(),
        OperatorSpec::half_space(2),
        OperatorSpec::normal_cone_ball(vec![0.5, -0.5], 1.5).unwrap(),
        OperatorSpec::interval(2, -1.0, 1.0).unwrap(),
        OperatorSpec::abs_sum(vec![1.0, 0.5]).unwrap(),
        OperatorSpec::scaled_identity(2, 1.5).unwrap(),
        OperatorSpec::linear(vec![vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
    ]
}

/// Distance from `y` to the set `A(u)`, by cases on the kind.
fn dist_to_image(kind: &OperatorKind, u: &[f64], y: &[f64]) -> f64 {
    let interval_cone = |lo: f64, hi: f64, u: f64, y: f64| -> f64 {
        match (u <= lo, u >= hi) {
            (true, true) => 0.0,
            (true, false) => y.max(0.0),
            (false, true) => (-y).max(0.0),
            (false, false) => y.abs(),
        }
    };
    match kind {
        OperatorKind::NormalConeBox { lo, hi } => (0..u.len())
            .map(|c| interval_cone(lo[c], hi[c], u[c], y[c]).powi(2))
            .sum::<f64>()
            .sqrt(),
        OperatorKind::SubdiffIndicatorInterval { a, b } => (0..u.len())
            .map(|c| interval_cone(*a, *b, u[c], y[c]).powi(2))
            .sum::<f64>()
            .sqrt(),
        OperatorKind::NormalConeBall { center, radius } => {
            let d: Vec<f64> = u.iter().zip(center).map(|(a, b)| a - b).collect();
            let r = norm(&d);
            if r < radius * (1.0 - 1e-12) {
                norm(y)
            } else {
                let n: Vec<f64> = d.iter().map(|v| v / r).collect();
                let t = dot(y, &n).max(0.0);
                norm(&y.iter().zip(&n).map(|(a, b)| a - t * b).collect::<Vec<_>>())
            }
        }
        OperatorKind::SubdiffAbsSum { weights } => (0..u.len())
            .map(|c| {
                let w = weights[c];
                let e = if u[c] > 0.0 {
                    y[c] - w
                } else if u[c] < 0.0 {
                    y[c] + w
                } else {
                    (y[c].abs() - w).max(0.0)
                };
                e * e
            })
            .sum::<f64>()
            .sqrt(),
        OperatorKind::ScaledIdentity { c } => {
            norm(&u.iter().zip(y).map(|(a, b)| b - c * a).collect::<Vec<_>>())
        }
        OperatorKind::LinearMonotone { matrix } => norm(
            &matrix
                .iter()
                .zip(y)
                .map(|(row, b)| b - dot(row, u))
                .collect::<Vec<_>>(),
        ),
        OperatorKind::Sum { .. } => unreachable!("no closed form"),
    }
}

/// `sup over pool of <y, x*> + <x, y*> - <y, y*>` minus `<x, x*>`.
fn sampled_floor(pool: &[GraphPair], x: &[f64], xs: &[f64]) -> f64 {
    pool.iter()
        .map(|p| dot(&p.u, xs) + dot(x, &p.ustar) - dot(&p.u, &p.ustar))
        .fold(f64::NEG_INFINITY, f64::max)
        - dot(x, xs)
}

pub fn lower_bound_and_membership() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut parts = Vec::new();
    for a in closed_form_kinds() {
        let tag = a.tag();
        let mut min_gap = f64::INFINITY;
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let xs: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            min_gap = min_gap.min(fitz_gap(&a, &x, &xs, None).unwrap().gap);
        }
        let samples = a
            .graph_sample(&[-4.0, -4.0], &[4.0, 4.0], 1000, 0.8, 7)
            .unwrap();
        let max_on_graph = samples
            .iter()
            .map(|p| fitz_gap(&a, &p.u, &p.ustar, None).unwrap().gap)
            .fold(f64::NEG_INFINITY, f64::max);

        let pool = a
            .graph_sample(&[-6.0, -6.0], &[6.0, 6.0], 20_000, 1.0, 8)
            .unwrap();
        let mut displaced_ok = true;
        let mut min_floor = f64::INFINITY;
        let mut displaced = 0;
        // samples deep inside a cone have no admissible displacement; skip them
        for p in &samples {
            if displaced == 100 {
                break;
            }
            let found = (0..50).find_map(|_| {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let len = rng.random_range(0.1..1.0);
                let xs = vec![p.ustar[0] + len * ang.cos(), p.ustar[1] + len * ang.sin()];
                (dist_to_image(&a.kind, &p.u, &xs) >= 0.1).then_some(xs)
            });
            let Some(xs) = found else { continue };
            displaced += 1;
            let exact = fitz_gap(&a, &p.u, &xs, None).unwrap().gap;
            let floor = sampled_floor(&pool, &p.u, &xs);
            min_floor = min_floor.min(floor);
            displaced_ok &= floor > 0.0 && exact >= floor - 1e-9;
        }
        displaced_ok &= displaced == 100;
        parts.push((
            format!("{tag}: min gap {min_gap:.1e} >= -1e-9"),
            min_gap >= -1e-9,
        ));
        parts.push((
            format!("{tag}: graph gap max {max_on_graph:.1e} <= 1e-8"),
            max_on_graph <= 1e-8,
        ));
        parts.push((
            format!(
                "{tag}: {displaced} displaced gaps above sampled floor (min floor {min_floor:.2e})"
            ),
            displaced_ok,
        ));
    }
    for g in [Graph1d::Identity, Graph1d::HalfLine, Graph1d::Abs] {
        let a = graph_spec(g);
        let pairs = a.graph_sample(&[-3.0], &[3.0], 30, 1.0, 8).unwrap();
        let mut ok = true;
        for p in pairs {
            let (lo, hi) = g.values(p.u[0]).unwrap();
            let shift = rng.random_range(0.1..1.0);
            let up = !lo.is_finite() || rng.random::<bool>();
            let xs = if up { hi + shift } else { lo - shift };
            let exact = fitz_gap(&a, &p.u, &[xs], None).unwrap().gap;
            let floor = g.grid_sup(p.u[0], xs) - p.u[0] * xs;
            ok &= floor > 0.0 && exact >= floor - 1e-9;
        }
        parts.push((format!("{g:?}: displaced gaps above grid-search floor"), ok));
    }
    Check::all(parts)
}

fn graph_spec(g: Graph1d) -> OperatorSpec {
    match g {
        Graph1d::Identity => OperatorSpec::scaled_identity(1, 1.0).unwrap(),
        Graph1d::HalfLine => OperatorSpec::half_space(1),
        Graph1d::Abs => OperatorSpec::abs_sum(vec![1.0]).unwrap(),
    }
}

pub fn closed_form_vs_grid() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut parts = Vec::new();
    for g in [Graph1d::Identity, Graph1d::HalfLine, Graph1d::Abs] {
        let a = graph_spec(g);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            // points where the closed form is finite
            let (x, xs) = match g {
                Graph1d::Identity => (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
                Graph1d::HalfLine => (rng.random_range(0.0..4.0), rng.random_range(-4.0..0.0)),
                Graph1d::Abs => (rng.random_range(-4.0..4.0), rng.random_range(-1.0..1.0)),
            };
            let h = fitz_closed_form(&a, &[x], &[xs]).unwrap();
            worst = worst.max((h - g.grid_sup(x, xs)).abs());
        }
        parts.push((
            format!("{g:?}: max |closed - grid| {worst:.2e} <= 1e-2"),
            worst <= 1e-2,
        ));
    }
    Check::all(parts)
}

use std::f64::consts::TAU;

use fitzsolve::gsp::{estimate_probe, holder_slope, solve_gsp, Scheme};
use fitzsolve::operators::OperatorSpec;
use fitzsolve::paths::{uniform_grid, GridPath};
use fitzsolve::variational::{
    gsp_jhat, minimize_gsp_jhat, FunctionalParams, GspCandidate, MinimizeOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::{random_driver, reflection_formula};
use crate::Check;

pub fn reflection_exactness() -> Check {
    let a = OperatorSpec::half_space(1);
    let grid = uniform_grid(1.0, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = random_driver(&mut rng, &grid, 1, 2.0);
        let x0 = rng.random_range(0.0..1.0);
        let s = solve_gsp(&a, &[x0], &m, Scheme::CatchingUp).unwrap();
        let (xo, ko) = reflection_formula(x0, &m);
        let kv = s.k.values();
        for i in 0..grid.len() {
            worst = worst.max((s.x.value(i)[0] - xo[i]).abs());
            worst = worst.max((kv[i][0] - ko[i]).abs());
        }
    }
    Check::new(
        worst <= 1e-12,
        format!("max node deviation {worst:.2e} <= 1e-12 over 50 drivers"),
    )
}

/// Twenty drivers `a sin(2 pi f t) + b t` with bounded slopes, so the family
/// is equicontinuous.
pub fn half_line_family(n: usize) -> Vec<(Vec<f64>, GridPath)> {
    (0..20)
        .map(|j| {
            let amp = 0.2 + 0.05 * (j % 5) as f64;
            let f = 1.0 + (j % 3) as f64;
            let b = -1.0 + 0.1 * (j % 4) as f64;
            let m = GridPath::from_fn(uniform_grid(1.0, n), move |t| {
                vec![amp * (TAU * f * t).sin() + b * t]
            })
            .unwrap();
            (vec![0.05 * (j % 7) as f64], m)
        })
        .collect()
}

pub fn box_family(n: usize) -> Vec<(Vec<f64>, GridPath)> {
    (0..20)
        .map(|j| {
            let amp = 0.8 + 0.1 * (j % 4) as f64;
            let f = 1.0 + (j % 3) as f64;
            let b = 0.5 - 0.25 * (j % 5) as f64;
            let m = GridPath::from_fn(uniform_grid(1.0, n), move |t| {
                vec![
                    amp * (TAU * f * t).sin() + b * t,
                    amp * (1.0 - (TAU * f * t).cos()) - b * t,
                ]
            })
            .unwrap();
            (vec![0.1 * (j % 5) as f64 - 0.2, 0.05 * (j % 3) as f64], m)
        })
        .collect()
}

fn rel_change(a: f64, b: f64) -> f64 {
    (b / a - 1.0).abs()
}

pub fn estimate_harness() -> Check {
    let eps = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
    let half = OperatorSpec::half_space(1);
    let bx = OperatorSpec::normal_cone_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let mut parts = Vec::new();
    type Family = fn(usize) -> Vec<(Vec<f64>, GridPath)>;
    let cases: [(&str, &OperatorSpec, Family); 2] = [
        ("half-line", &half, half_line_family),
        ("box", &bx, box_family),
    ];
    for (name, a, family) in cases {
        let coarse = estimate_probe(a, &family(250)).unwrap();
        let fine = estimate_probe(a, &family(1000)).unwrap();
        let (ch, fh) = (coarse.c_holder.unwrap(), fine.c_holder.unwrap());
        let da = rel_change(coarse.c_apriori, fine.c_apriori);
        let dh = rel_change(ch, fh);
        parts.push((
            format!(
                "{name}: C_apriori {:.4} -> {:.4} (change {:.1}%)",
                coarse.c_apriori,
                fine.c_apriori,
                100.0 * da
            ),
            coarse.c_apriori.is_finite() && fine.c_apriori.is_finite() && da < 0.2,
        ));
        parts.push((
            format!(
                "{name}: C_holder {ch:.4} -> {fh:.4} (change {:.1}%)",
                100.0 * dh
            ),
            ch.is_finite() && fh.is_finite() && dh < 0.2,
        ));
        let (x0, m) = &family(1000)[1];
        let w = GridPath::from_fn(m.grid().to_vec(), |t| {
            let v = (7.0 * t).sin() - 2.0 * t;
            vec![v; a.dim]
        })
        .unwrap();
        let slope = holder_slope(a, x0, m, &w, &eps).unwrap();
        parts.push((
            format!("{name}: log-log slope {slope:.3} in [0.45, 0.75]"),
            (0.45..=0.75).contains(&slope),
        ));
    }
    Check::all(parts)
}

pub fn minimization() -> Check {
    let mut parts = Vec::new();
    let half = OperatorSpec::half_space(1);
    let m = GridPath::from_fn(uniform_grid(1.0, 100), |t| vec![-t]).unwrap();
    let r = minimize_gsp_jhat(&half, &[0.0], &m, &MinimizeOptions::default()).unwrap();
    let (_, ko) = reflection_formula(0.0, &m);
    let dk = r
        .candidate
        .k
        .values()
        .iter()
        .zip(&ko)
        .map(|(a, b)| (a[0] - b).abs())
        .fold(0.0, f64::max);
    parts.push((
        format!("half-line objective {:.2e} <= 1e-6", r.objective),
        r.objective <= 1e-6,
    ));
    parts.push((
        format!("half-line |k - k_oracle| {dk:.2e} <= 1e-4"),
        dk <= 1e-4,
    ));

    let bx = OperatorSpec::normal_cone_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let m = GridPath::from_fn(uniform_grid(1.0, 200), |t| {
        let th = 2.0 * TAU * t;
        vec![2.0 * t * th.cos(), 2.0 * t * th.sin()]
    })
    .unwrap();
    let x0 = [0.0, 0.0];
    let r = minimize_gsp_jhat(&bx, &x0, &m, &MinimizeOptions::default()).unwrap();
    let sol = solve_gsp(&bx, &x0, &m, Scheme::CatchingUp).unwrap();
    let nus = vec![
        GridPath::constant(m.grid().to_vec(), vec![0.0, 0.0]).unwrap(),
        m.combine(0.5, &m, 0.0).unwrap(),
    ];
    let params = FunctionalParams::from_drivers(
        2.0 * sol.k.total_variation(),
        std::slice::from_ref(&m),
        nus,
        Vec::new(),
    )
    .unwrap();
    let jsol = gsp_jhat(
        &bx,
        &x0,
        &m,
        &params,
        &GspCandidate::from_solution(&x0, &m, &sol),
    )
    .unwrap()
    .total;
    let d = (r.objective - jsol).abs();
    parts.push((
        format!(
            "box spiral objective {:.2e} vs solver value {jsol:.2e} (diff {d:.2e} <= 1e-5)",
            r.objective
        ),
        d <= 1e-5,
    ));
    Check::all(parts)
}

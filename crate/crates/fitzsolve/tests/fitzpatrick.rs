mod common;

use common::{closed_form_kinds, dot};
use fitzsolve::fitzpatrick::{
    fenchel_gap, fitz_closed_form, fitz_gap, fitz_pointwise, fitz_sampled, membership_test,
    path_fitz_gap, PathGapMode, Sampling,
};
use fitzsolve::operators::OperatorSpec;
use fitzsolve::paths::{uniform_grid, BVPath, GridPath};
use proptest::prelude::*;

/// One-dimensional graphs written out by hand: `A(u)` as an interval.
#[derive(Clone, Copy, Debug)]
enum Graph1d {
    Identity,
    HalfLine,
    Abs,
}

impl Graph1d {
    fn spec(self) -> OperatorSpec {
        match self {
            Graph1d::Identity => OperatorSpec::scaled_identity(1, 1.0).unwrap(),
            Graph1d::HalfLine => OperatorSpec::half_space(1),
            Graph1d::Abs => OperatorSpec::abs_sum(vec![1.0]).unwrap(),
        }
    }

    fn values(self, u: f64) -> Option<(f64, f64)> {
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

    /// Sup of `u x* + x u* - u u*` over the graph inside `[-10, 10]^2`, `u`
    /// on a 1e-3 grid. The objective is affine in `u*`, so the sup over each
    /// vertical segment sits at an endpoint.
    fn grid_sup(self, x: f64, xs: f64) -> f64 {
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

#[test]
fn pointwise_examples_match_grid_search() {
    let cases = [
        (Graph1d::Identity, 1.0, 1.0, 1.0, 0.0),
        (Graph1d::Identity, 1.0, 3.0, 4.0, 1.0),
        (Graph1d::HalfLine, 2.0, -3.0, 0.0, 6.0),
        (Graph1d::Abs, -2.0, 0.5, 2.0, 3.0),
    ];
    for (g, x, xs, h, gap) in cases {
        let a = g.spec();
        let v = fitz_pointwise(&a, &[x], &[xs], None).unwrap();
        assert!(v.exact);
        assert!((v.value - h).abs() < 1e-12, "{g:?}");
        assert!((fitz_gap(&a, &[x], &[xs], None).unwrap().gap - gap).abs() < 1e-12);
        assert!(
            (g.grid_sup(x, xs) - h).abs() < 1e-2,
            "{g:?} oracle {}",
            g.grid_sup(x, xs)
        );
    }
}

#[test]
fn sampled_kind_needs_sampling() {
    let a = common::builtins().pop().unwrap();
    assert!(fitz_pointwise(&a, &[0.0, 0.0], &[0.0, 0.0], None).is_err());
    let s = Sampling::cube(2, 5.0, 500, 1);
    let v = fitz_pointwise(&a, &[0.3, -0.2], &[1.0, 0.0], Some(&s)).unwrap();
    assert!(!v.exact);
    assert!(v.value >= 0.3 - 1e-12);
}

#[test]
fn membership_examples() {
    let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
    assert!(membership_test(&id, &[2.0], &[2.0], 1e-9, None).unwrap().0);
    let h = OperatorSpec::half_space(1);
    let (ok, rep) = membership_test(&h, &[0.0], &[-5.0], 1e-9, None).unwrap();
    assert!(ok && rep.gap.abs() < 1e-12);
    let (ok, rep) = membership_test(&h, &[1.0], &[-5.0], 1e-9, None).unwrap();
    assert!(!ok);
    assert!((rep.gap - 5.0).abs() < 1e-12);
}

/// `sup_{(y, y*)} <y, x*> + <x, y*> - H(y, y*)` over a grid on `[-6, 6]^2`.
fn grid_conjugate(h: impl Fn(f64, f64) -> f64, x: f64, xs: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for i in -600..=600 {
        for j in -600..=600 {
            let (y, ys) = (i as f64 * 1e-2, j as f64 * 1e-2);
            let hv = h(y, ys);
            if hv.is_finite() {
                best = best.max(y * xs + x * ys - hv);
            }
        }
    }
    best
}

#[test]
fn fenchel_gap_examples_match_grid_conjugate() {
    let s = Sampling::cube(1, 6.0, 4000, 3);
    let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
    let h_id = |y: f64, ys: f64| 0.25 * (y + ys) * (y + ys);
    let g = fenchel_gap(&id, &[1.0], &[1.0], &s).unwrap();
    assert!(g.abs() < 1e-6, "{g}");
    let oracle = h_id(1.0, 1.0) + grid_conjugate(h_id, 1.0, 1.0) - 2.0;
    assert!(oracle.abs() < 1e-6, "{oracle}");
    let g = fenchel_gap(&id, &[0.0], &[2.0], &s).unwrap();
    let oracle = h_id(0.0, 2.0) + grid_conjugate(h_id, 0.0, 2.0);
    assert!(g > 0.5 && oracle > 0.5);
    assert!((g - oracle).abs() < 1e-2, "{g} vs {oracle}");

    let h = OperatorSpec::half_space(1);
    let h_half = |y: f64, ys: f64| {
        if y >= 0.0 && ys <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let g = fenchel_gap(&h, &[0.0], &[-1.0], &s).unwrap();
    assert!(g.abs() < 1e-6, "{g}");
    assert!(grid_conjugate(h_half, 0.0, -1.0).abs() < 1e-6);
}

#[test]
fn path_gap_examples() {
    let a = OperatorSpec::half_space(1);
    let grid = uniform_grid(1.0, 50);
    let x = GridPath::constant(grid.clone(), vec![0.0]).unwrap();
    let dt = 1.0 / 50.0;
    let mut inc = vec![vec![-dt]; 50];
    let k = BVPath::new(grid.clone(), inc.clone()).unwrap();
    assert!(
        path_fitz_gap(&a, &x, &k, PathGapMode::Homogeneous)
            .unwrap()
            .abs()
            < 1e-15
    );
    assert!(
        path_fitz_gap(&a, &x, &k, PathGapMode::Density)
            .unwrap()
            .abs()
            < 1e-15
    );
    inc[17] = vec![dt];
    let k = BVPath::new(grid, inc).unwrap();
    assert_eq!(
        path_fitz_gap(&a, &x, &k, PathGapMode::Homogeneous).unwrap(),
        f64::INFINITY
    );
    let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
    assert!(path_fitz_gap(&id, &x, &k, PathGapMode::Homogeneous).is_err());
}

#[test]
fn graph_samples_have_zero_gap() {
    for a in closed_form_kinds() {
        let d = a.dim;
        let pairs = a
            .graph_sample(&vec![-4.0; d], &vec![4.0; d], 1000, 0.8, 5)
            .unwrap();
        for p in &pairs {
            let g = fitz_gap(&a, &p.u, &p.ustar, None).unwrap().gap;
            assert!((-1e-9..=1e-8).contains(&g), "{}: {g}", a.tag());
        }
    }
}

#[test]
fn displaced_points_exceed_grid_floor() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for g in [Graph1d::Identity, Graph1d::HalfLine, Graph1d::Abs] {
        let a = g.spec();
        let pairs = a.graph_sample(&[-3.0], &[3.0], 30, 1.0, 8).unwrap();
        for p in pairs {
            // move x* away from A(u) by at least 0.1, keeping u in the domain
            let (lo, hi) = g.values(p.u[0]).unwrap();
            let shift = rng.random_range(0.1..1.0);
            let up = !lo.is_finite() || rng.random::<bool>();
            let xs = if up { hi + shift } else { lo - shift };
            let exact = fitz_gap(&a, &p.u, &[xs], None).unwrap().gap;
            let floor = g.grid_sup(p.u[0], xs) - p.u[0] * xs;
            assert!(floor > 0.0, "{g:?} u={} xs={xs}", p.u[0]);
            assert!(exact >= floor - 1e-9, "{g:?}: {exact} < {floor}");
        }
    }
}

fn pt(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn lower_bound_law(x in pt(2), xs in pt(2)) {
        for a in closed_form_kinds() {
            let d = a.dim;
            let h = fitz_closed_form(&a, &x[..d], &xs[..d]).unwrap();
            prop_assert!(h >= dot(&x[..d], &xs[..d]) - 1e-9, "{}", a.tag());
        }
    }

    #[test]
    fn midpoint_convexity(x in pt(2), xs in pt(2), y in pt(2), ys in pt(2)) {
        for a in closed_form_kinds() {
            let d = a.dim;
            let h1 = fitz_closed_form(&a, &x[..d], &xs[..d]).unwrap();
            let h2 = fitz_closed_form(&a, &y[..d], &ys[..d]).unwrap();
            if !(h1.is_finite() && h2.is_finite()) {
                continue;
            }
            let mx: Vec<f64> = (0..d).map(|i| 0.5 * (x[i] + y[i])).collect();
            let ms: Vec<f64> = (0..d).map(|i| 0.5 * (xs[i] + ys[i])).collect();
            let hm = fitz_closed_form(&a, &mx, &ms).unwrap();
            prop_assert!(hm <= 0.5 * (h1 + h2) + 1e-9 * (1.0 + h1.abs() + h2.abs()), "{}", a.tag());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sampled_sup_is_a_lower_bound_and_grows(x in pt(2), xs in pt(2), seed in 0u64..10_000, n in 1usize..300) {
        for a in closed_form_kinds() {
            let d = a.dim;
            let h = fitz_closed_form(&a, &x[..d], &xs[..d]).unwrap();
            let pairs = a.graph_sample(&vec![-5.0; d], &vec![5.0; d], n, 1.0, seed).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for m in [1, n / 2 + 1, n] {
                let (s, _) = fitz_sampled(&pairs[..m], &x[..d], &xs[..d]);
                prop_assert!(s <= h + 1e-9 * (1.0 + h.abs().min(1e12)), "{}", a.tag());
                prop_assert!(s >= prev);
                prev = s;
            }
        }
    }
}

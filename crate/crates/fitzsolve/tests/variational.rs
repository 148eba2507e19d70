use fitzsolve::backward_tree::{solve_bsvi_tree, BinomialTree, TreeDriver, TreeProcess};
use fitzsolve::forward_sde::{
    solve_sde_additive, solve_svi, DiffusionPath, FieldCoefficients, WienerEnsemble, XiSampler,
};
use fitzsolve::gsp::{solve_gsp, Scheme};
use fitzsolve::operators::OperatorSpec;
use fitzsolve::paths::{uniform_grid, BVPath, GridPath};
use fitzsolve::variational::{
    bsde_jhat, bsvi_jhat, gsp_convexity_probe, gsp_jhat, jhat_convexity_probe, minimize_gsp_jhat,
    sde_jhat, svi_jhat, BsdeCandidate, BsviCandidate, FunctionalParams, GspCandidate,
    MinimizeOptions, SdeCandidate, SviCandidate, SviProbe, CONVEXITY_LAMBDAS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gsp_params(r: f64, m: &GridPath) -> FunctionalParams {
    let nus = vec![
        GridPath::constant(m.grid().to_vec(), vec![0.0; m.dim()]).unwrap(),
        m.combine(0.5, m, 0.0).unwrap(),
        m.combine(-1.0, m, 0.0).unwrap(),
    ];
    FunctionalParams::from_drivers(r, std::slice::from_ref(m), nus, Vec::new()).unwrap()
}

fn half_line_driver(n: usize) -> GridPath {
    GridPath::from_fn(uniform_grid(1.0, n), |t| vec![(5.0 * t).sin() - t]).unwrap()
}

/// `x >= 0` and nonincreasing `k` on the half-line, `mu = x + k - a`.
fn half_line_candidate(rng: &mut ChaCha8Rng, grid: &[f64]) -> GspCandidate {
    let n = grid.len() - 1;
    let a = vec![rng.random_range(-0.5..1.0)];
    let x = GridPath::new(
        grid.to_vec(),
        (0..=n).map(|_| vec![rng.random_range(0.0..1.0)]).collect(),
    )
    .unwrap();
    let k = BVPath::new(
        grid.to_vec(),
        (0..n).map(|_| vec![-rng.random_range(0.0..0.1)]).collect(),
    )
    .unwrap();
    let kv = k.values();
    let mu = GridPath::new(
        grid.to_vec(),
        (0..=n)
            .map(|i| vec![x.value(i)[0] + kv[i][0] - a[0]])
            .collect(),
    )
    .unwrap();
    GspCandidate { a, x, k, mu }
}

#[test]
fn gsp_functional_vanishes_at_solver_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ball = OperatorSpec::normal_cone_ball(vec![0.0, 0.0], 1.0).unwrap();
    let grid = uniform_grid(1.0, 200);
    let knots: Vec<(f64, f64)> = (0..8)
        .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect();
    let m = GridPath::from_fn(grid, |t| {
        let s = t * 7.0;
        let (i, w) = (s.floor() as usize, s.fract());
        let (p, q) = (knots[i.min(7)], knots[(i + 1).min(7)]);
        let base = (p.0 * (1.0 - w) + q.0 * w, p.1 * (1.0 - w) + q.1 * w);
        vec![base.0 - knots[0].0, base.1 - knots[0].1]
    })
    .unwrap();
    let x0 = [0.3, -0.2];
    let half = OperatorSpec::half_space(1);
    let hm = half_line_driver(300);
    for (a, x0, m) in [(&ball, &x0[..], &m), (&half, &[0.1][..], &hm)] {
        let sol = solve_gsp(a, x0, m, Scheme::CatchingUp).unwrap();
        let p = gsp_params(2.0 * sol.k.total_variation() + 1.0, m);
        let r = gsp_jhat(a, x0, m, &p, &GspCandidate::from_solution(x0, m, &sol)).unwrap();
        assert!(r.total <= 1e-8 && r.total >= -1e-9, "{}", r.total);
        assert!(r.certified_lower_bound);
    }
}

#[test]
fn gsp_displaced_start_costs_its_square() {
    let a = OperatorSpec::half_space(1);
    let m = half_line_driver(100);
    let sol = solve_gsp(&a, &[0.0], &m, Scheme::CatchingUp).unwrap();
    let p = gsp_params(2.0 * sol.k.total_variation(), &m);
    for delta in [0.05, 0.3, 1.0] {
        let mut c = GspCandidate::from_solution(&[0.0], &m, &sol);
        c.a[0] += delta;
        c.x =
            c.x.combine(
                1.0,
                &GridPath::constant(m.grid().to_vec(), vec![delta]).unwrap(),
                1.0,
            )
            .unwrap();
        let r = gsp_jhat(&a, &[0.0], &m, &p, &c).unwrap();
        assert!((r.term("initial").unwrap() - delta * delta).abs() < 1e-15);
        assert!(r.total >= delta * delta - 1e-12);
    }
}

#[test]
fn gsp_probe_monotonicity() {
    let a = OperatorSpec::half_space(1);
    let m = half_line_driver(60);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let c = half_line_candidate(&mut rng, m.grid());
        let mut p = gsp_params(20.0, &m);
        let mut prev = f64::NEG_INFINITY;
        let extra = p.probe_nu.split_off(0);
        for nu in std::iter::once(None).chain(extra.into_iter().map(Some)) {
            if let Some(nu) = nu {
                p.probe_nu.push(nu);
            }
            let v = gsp_jhat(&a, &[0.0], &m, &p, &c).unwrap().total;
            assert!(v >= prev);
            prev = v;
        }
    }
}

#[test]
fn gsp_convexity_examples() {
    let a = OperatorSpec::half_space(1);
    let m = half_line_driver(40);
    let p = gsp_params(20.0, &m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = half_line_candidate(&mut rng, m.grid());
    assert!(
        gsp_convexity_probe(&a, &[0.0], &m, &p, &c, &c)
            .unwrap()
            .abs()
            <= 1e-12
    );
    let mut bad = c.clone();
    bad.a[0] += 1.0;
    assert!(gsp_convexity_probe(&a, &[0.0], &m, &p, &c, &bad).is_err());
}

#[test]
fn minimizer_agrees_with_solver() {
    let a = OperatorSpec::half_space(1);
    let m = half_line_driver(80);
    let r = minimize_gsp_jhat(&a, &[0.2], &m, &MinimizeOptions::default()).unwrap();
    let sol = solve_gsp(&a, &[0.2], &m, Scheme::CatchingUp).unwrap();
    assert!(r.converged && r.objective <= 1e-6);
    let dk = r
        .candidate
        .k
        .to_grid_path()
        .sup_dist(&sol.k.to_grid_path())
        .unwrap();
    assert!(dk <= 1e-4, "{dk}");
    assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    let ball = OperatorSpec::normal_cone_ball(vec![0.0, 0.0], 1.0).unwrap();
    let m2 = GridPath::from_fn(uniform_grid(1.0, 60), |t| vec![2.0 * t, -t]).unwrap();
    assert!(minimize_gsp_jhat(
        &OperatorSpec::scaled_identity(1, 1.0).unwrap(),
        &[0.0],
        &m,
        &MinimizeOptions::default()
    )
    .is_err());
    let r = minimize_gsp_jhat(&ball, &[0.0, 0.0], &m2, &MinimizeOptions::default()).unwrap();
    let sol = solve_gsp(&ball, &[0.0, 0.0], &m2, Scheme::CatchingUp).unwrap();
    let dk = r
        .candidate
        .k
        .to_grid_path()
        .sup_dist(&sol.k.to_grid_path())
        .unwrap();
    assert!(dk <= 1e-4, "{dk}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gsp_sign_law(seed in 0u64..100_000, free_k in any::<bool>()) {
        let a = OperatorSpec::half_space(1);
        let m = half_line_driver(30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = half_line_candidate(&mut rng, m.grid());
        if free_k {
            // arbitrary signs in k: the gap may be infinite
            let inc: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-0.1..0.1)]).collect();
            c.k = BVPath::new(m.grid().to_vec(), inc).unwrap();
            let kv = c.k.values();
            c.mu = GridPath::new(m.grid().to_vec(), (0..=30).map(|i| vec![c.x.value(i)[0] + kv[i][0] - c.a[0]]).collect()).unwrap();
        }
        let r = gsp_jhat(&a, &[0.0], &m, &gsp_params(20.0, &m), &c).unwrap();
        prop_assert!(r.total >= -1e-9);
    }

    #[test]
    fn gsp_convexity_on_random_pairs(s1 in 0u64..100_000, s2 in 0u64..100_000) {
        let a = OperatorSpec::half_space(1);
        let m = half_line_driver(30);
        let p = half_line_candidate(&mut ChaCha8Rng::seed_from_u64(s1), m.grid());
        let q = half_line_candidate(&mut ChaCha8Rng::seed_from_u64(s2), m.grid());
        let v = gsp_convexity_probe(&a, &[0.0], &m, &gsp_params(20.0, &m), &p, &q).unwrap();
        prop_assert!(v <= 1e-9, "{v}");
    }
}

// forward functionals on the exact binomial enumeration

fn enumeration(n: usize) -> WienerEnsemble {
    WienerEnsemble::binomial_enumeration(uniform_grid(1.0, n)).unwrap()
}

fn xi_leaves(n_paths: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_paths)
        .map(|_| vec![rng.random_range(0.0..1.0)])
        .collect()
}

/// Shifts `X` down by a nonincreasing deterministic `s` and adds `s` to `K`.
fn shift_push(x: &GridPath, k: &BVPath, s: &[f64]) -> (GridPath, BVPath) {
    let n = x.steps();
    let xs = GridPath::new(
        x.grid().to_vec(),
        (0..=n).map(|i| vec![x.value(i)[0] - s[i]]).collect(),
    )
    .unwrap();
    let ks = BVPath::new(
        x.grid().to_vec(),
        (0..n)
            .map(|i| vec![k.increment(i)[0] + s[i + 1] - s[i]])
            .collect(),
    )
    .unwrap();
    (xs, ks)
}

fn random_shift(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut s = vec![0.0];
    for _ in 0..n {
        let last = *s.last().unwrap();
        s.push(last - rng.random_range(0.0..0.1));
    }
    s
}

#[test]
fn sde_functional_examples() {
    let a = OperatorSpec::half_space(1);
    let ens = enumeration(8);
    let xi = xi_leaves(ens.n_paths, 1);
    let g = DiffusionPath::Constant { matrix: vec![1.0] };
    let sol = solve_sde_additive(
        &a,
        &XiSampler::Samples { values: xi.clone() },
        &g,
        &ens,
        true,
    )
    .unwrap();
    let cand = SdeCandidate::from_ensemble(&sol, &g).unwrap();
    let r = sde_jhat(&a, &xi, &g, &ens, &cand, None).unwrap();
    assert!(r.total.abs() <= 1e-8, "{}", r.total);

    // full-domain operator so that perturbed paths keep a finite gap
    let s = OperatorSpec::abs_sum(vec![1.0]).unwrap();
    let g_ens = WienerEnsemble::gaussian(1, uniform_grid(1.0, 100), 400, 3).unwrap();
    let xi = xi_leaves(400, 2);
    let sol = solve_sde_additive(
        &s,
        &XiSampler::Samples { values: xi.clone() },
        &g,
        &g_ens,
        true,
    )
    .unwrap();
    let base = SdeCandidate::from_ensemble(&sol, &g).unwrap();
    let r = sde_jhat(&s, &xi, &g, &g_ens, &base, None).unwrap();
    assert!(
        r.total <= 3.0 * r.se.unwrap() + 1e-8,
        "{} se {:?}",
        r.total,
        r.se
    );

    let mut c = base.clone();
    c.g = DiffusionPath::Constant { matrix: vec![2.0] };
    for (p, x) in c.x.iter_mut().enumerate() {
        let db = g_ens.increments(p);
        let mut b = vec![vec![0.0]];
        for d in &db {
            b.push(vec![b.last().unwrap()[0] + d[0]]);
        }
        *x = x
            .combine(1.0, &GridPath::new(x.grid().to_vec(), b).unwrap(), 1.0)
            .unwrap();
    }
    let r = sde_jhat(&s, &xi, &g, &g_ens, &c, None).unwrap();
    assert!(r.total >= 0.5 - 3.0 * r.se.unwrap(), "{}", r.total);
    assert!((r.term("diffusion").unwrap() - 0.5).abs() < 1e-12);

    let mut c = base.clone();
    for (eta, x) in c.eta.iter_mut().zip(c.x.iter_mut()) {
        eta[0] += 1.0;
        *x = x
            .combine(
                1.0,
                &GridPath::constant(x.grid().to_vec(), vec![1.0]).unwrap(),
                1.0,
            )
            .unwrap();
    }
    let r = sde_jhat(&s, &xi, &g, &g_ens, &c, None).unwrap();
    assert!(r.total >= 0.5 - 3.0 * r.se.unwrap());
    assert!((r.term("initial").unwrap() - 0.5).abs() < 1e-12);

    let mut broken = base;
    broken.eta[0][0] += 0.5;
    assert!(sde_jhat(&s, &xi, &g, &g_ens, &broken, None).is_err());
}

fn ou_coeffs() -> FieldCoefficients {
    FieldCoefficients::affine(vec![vec![-1.0]], vec![0.0], vec![1.0], 1, true)
}

fn constant_probes(grid: &[f64]) -> Vec<SviProbe> {
    [0.0, 0.25, 0.5, 1.0, 2.0]
        .iter()
        .map(|c| SviProbe::Path(GridPath::constant(grid.to_vec(), vec![*c]).unwrap()))
        .collect()
}

#[test]
fn svi_functional_examples() {
    let phi = OperatorSpec::half_space(1);
    let grid = uniform_grid(1.0, 400);
    let ens = WienerEnsemble::gaussian(1, grid.clone(), 300, 4).unwrap();
    let xi = xi_leaves(300, 3);
    let zero = FieldCoefficients::affine(vec![vec![0.0]], vec![0.0], vec![1.0], 1, false);
    for coeffs in [zero, ou_coeffs()] {
        let sol = solve_svi(
            &phi,
            &coeffs,
            &XiSampler::Samples { values: xi.clone() },
            &ens,
            true,
        )
        .unwrap();
        let c = SviCandidate::from_ensemble(&sol, &coeffs).unwrap();
        let r = svi_jhat(&phi, &coeffs, &xi, &ens, &c, &constant_probes(&grid)).unwrap();
        let tol = 3.0 * r.se.unwrap_or(0.0) + 1e-8;
        for pv in &r.probe_values {
            assert!(
                pv.mean <= 3.0 * pv.se.unwrap_or(0.0) + 1e-8 + grid[1].sqrt(),
                "{pv:?}"
            );
        }
        assert!(r.total <= tol + grid[1].sqrt(), "{} vs {tol}", r.total);
        assert!(r.total >= -1e-9);
    }

    // g = 0 against G = 1 on a full-domain potential
    let s = OperatorSpec::abs_sum(vec![1.0]).unwrap();
    let coeffs = FieldCoefficients::affine(vec![vec![0.0]], vec![0.0], vec![1.0], 1, false);
    let sol = solve_svi(
        &s,
        &coeffs,
        &XiSampler::Samples { values: xi.clone() },
        &ens,
        true,
    )
    .unwrap();
    let mut c = SviCandidate::from_ensemble(&sol, &coeffs).unwrap();
    let r = svi_jhat(&s, &coeffs, &xi, &ens, &c, &[]).unwrap();
    assert_eq!(r.probes_used, 1);
    assert_eq!(
        r.total,
        r.term("initial").unwrap() + r.term("diffusion").unwrap()
    );
    assert!(r.total.abs() < 1e-12);
    for (p, x) in c.x.iter_mut().enumerate() {
        let db = ens.increments(p);
        let mut b = vec![vec![0.0]];
        for d in &db {
            b.push(vec![b.last().unwrap()[0] + d[0]]);
        }
        *x = x
            .combine(1.0, &GridPath::new(grid.clone(), b).unwrap(), -1.0)
            .unwrap();
    }
    c.g = DiffusionPath::Constant { matrix: vec![0.0] };
    let r = svi_jhat(&s, &coeffs, &xi, &ens, &c, &[]).unwrap();
    assert!(r.total >= 0.5 - 3.0 * r.se.unwrap_or(0.0), "{}", r.total);
}

#[test]
fn forward_functionals_convex_and_monotone_in_probes() {
    let phi = OperatorSpec::half_space(1);
    let ens = enumeration(8);
    let xi = xi_leaves(ens.n_paths, 7);
    let g = DiffusionPath::Constant { matrix: vec![1.0] };
    let sol = solve_sde_additive(
        &phi,
        &XiSampler::Samples { values: xi.clone() },
        &g,
        &ens,
        true,
    )
    .unwrap();
    let base = SdeCandidate::from_ensemble(&sol, &g).unwrap();
    let coeffs = ou_coeffs();
    let svi_sol = solve_svi(
        &phi,
        &coeffs,
        &XiSampler::Samples { values: xi.clone() },
        &ens,
        true,
    )
    .unwrap();
    let svi_base = SviCandidate::from_ensemble(&svi_sol, &coeffs).unwrap();
    let probes = constant_probes(&ens.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let make = |rng: &mut ChaCha8Rng| {
            let s = random_shift(rng, 8);
            let mut c = base.clone();
            let mut v = svi_base.clone();
            for p in 0..c.x.len() {
                (c.x[p], c.k[p]) = shift_push(&c.x[p], &c.k[p], &s);
                (v.x[p], v.l[p]) = shift_push(&v.x[p], &v.l[p], &s);
            }
            (c, v)
        };
        let (p, pv) = make(&mut rng);
        let (q, qv) = make(&mut rng);
        let sde = |c: &SdeCandidate| Ok(sde_jhat(&phi, &xi, &g, &ens, c, None)?.total);
        let v = jhat_convexity_probe(sde, &p, &q, &CONVEXITY_LAMBDAS).unwrap();
        assert!(v <= 1e-9, "sde {v}");
        assert!(sde(&p).unwrap() >= -1e-9);
        let svi = |c: &SviCandidate| Ok(svi_jhat(&phi, &coeffs, &xi, &ens, c, &probes)?.total);
        let v = jhat_convexity_probe(svi, &pv, &qv, &CONVEXITY_LAMBDAS).unwrap();
        assert!(v <= 1e-9, "svi {v}");
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=probes.len() {
            let t = svi_jhat(&phi, &coeffs, &xi, &ens, &pv, &probes[..k])
                .unwrap()
                .total;
            assert!(t >= prev && t >= -1e-9);
            prev = t;
        }
    }
}

// backward functionals

fn random_tree(rng: &mut ChaCha8Rng, last: usize, lo: f64, hi: f64) -> TreeProcess {
    TreeProcess::new(
        (0..=last)
            .map(|i| (0..=i).map(|_| vec![rng.random_range(lo..hi)]).collect())
            .collect(),
    )
    .unwrap()
}

#[test]
fn bsde_functional_examples() {
    let tree = BinomialTree::new(6, 1.0).unwrap();
    let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
    let xi = tree.leaf_values(|b| vec![(b * 0.8).clamp(-1.0, 1.0)]);
    let sol = solve_bsvi_tree(&phi, &TreeDriver::zero(1), &xi, &tree).unwrap();
    let r = bsde_jhat(
        &phi,
        &tree,
        &xi,
        4.0,
        &BsdeCandidate::from_solution(&sol),
        &[],
        None,
    )
    .unwrap();
    assert!(r.total.abs() <= 1e-8, "{}", r.total);

    let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
    let c = tree.leaf_values(|_| vec![0.4]);
    let cand =
        BsdeCandidate::from_eta_h(&tree, c.clone(), TreeProcess::constant(5, vec![0.0])).unwrap();
    let r = bsde_jhat(&id, &tree, &c, 4.0, &cand, &[], None).unwrap();
    // Y = 0.4 with H = 0 is off the identity graph
    assert!(r.term("fitz_gap").unwrap() > 0.0);
    let sol = solve_bsvi_tree(&id, &TreeDriver::zero(1), &xi, &tree).unwrap();
    let base = BsdeCandidate::from_solution(&sol);
    let r = bsde_jhat(&id, &tree, &xi, 4.0, &base, &[], None).unwrap();
    assert!(r.total.abs() <= 1e-8);
    let shifted: Vec<Vec<f64>> = xi.iter().map(|v| vec![v[0] + 1.0]).collect();
    let cand = BsdeCandidate::from_eta_h(&tree, shifted, base.h.clone()).unwrap();
    let r = bsde_jhat(&id, &tree, &xi, 4.0, &cand, &[], None).unwrap();
    assert!(r.total >= 0.5);
    assert!(bsde_jhat(&id, &tree, &xi, 0.5, &cand, &[], None).is_err());
    let mut broken = cand;
    broken.eta[0][0] += 0.1;
    assert!(bsde_jhat(&id, &tree, &xi, 4.0, &broken, &[], None).is_err());
}

#[test]
fn bsvi_functional_examples() {
    let tree = BinomialTree::new(6, 1.0).unwrap();
    let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
    let xi = tree.leaf_values(|b| vec![(0.5 * b).clamp(-1.0, 1.0)]);
    let f = TreeDriver::linear(-0.5, 0.3, vec![0.2]);
    let sol = solve_bsvi_tree(&phi, &f, &xi, &tree).unwrap();
    let c = BsviCandidate::from_solution(&sol).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let probes: Vec<(TreeProcess, TreeProcess)> = (0..30)
        .map(|_| {
            (
                random_tree(&mut rng, 5, -1.0, 1.0),
                random_tree(&mut rng, 5, -2.0, 2.0),
            )
        })
        .collect();
    let r = bsvi_jhat(&phi, &f, &tree, &xi, &c, &probes).unwrap();
    assert!(
        r.probe_values.iter().all(|p| p.mean <= 1e-8),
        "{:?}",
        r.probe_values
    );
    assert!(r.total >= 0.0 && r.total <= 1e-8);
    assert!(r.note("closed_form_sup").unwrap().abs() <= 1e-8);
    assert_eq!(bsvi_jhat(&phi, &f, &tree, &xi, &c, &[]).unwrap().total, 0.0);

    // leaves in [-0.5, 0.5] shifted by 0.4 stay inside [-1, 1]
    let small = tree.leaf_values(|b| vec![(0.1 * b).clamp(-0.5, 0.5)]);
    let sol = solve_bsvi_tree(&phi, &f, &small, &tree).unwrap();
    let c = BsviCandidate::from_solution(&sol).unwrap();
    let shifted = c.shift_terminal(&tree, &[0.4]).unwrap();
    let r = bsvi_jhat(&phi, &f, &tree, &small, &shifted, &[]).unwrap();
    assert!(r.total.is_finite());
    assert!((r.term("initial").unwrap() - 0.08).abs() < 1e-12);
    let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
    let sol = solve_bsvi_tree(&id, &f, &xi, &tree).unwrap();
    let shifted = BsviCandidate::from_solution(&sol)
        .unwrap()
        .shift_terminal(&tree, &[1.0])
        .unwrap();
    assert!(bsvi_jhat(&id, &f, &tree, &xi, &shifted, &[]).unwrap().total >= 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn backward_sign_law_and_convexity(s1 in 0u64..100_000, s2 in 0u64..100_000) {
        let tree = BinomialTree::new(4, 1.0).unwrap();
        let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
        let xi = tree.leaf_values(|b| vec![0.3 * b]);
        let make = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eta: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
            BsdeCandidate::from_eta_h(&tree, eta, random_tree(&mut rng, 3, -1.0, 1.0)).unwrap()
        };
        let (p, q) = (make(s1), make(s2));
        let zetas = vec![tree.leaf_values(|_| vec![1.5]), tree.leaf_values(|b| vec![-b])];
        let bsde = |c: &BsdeCandidate| Ok(bsde_jhat(&id, &tree, &xi, 4.0, c, &zetas, None)?.total);
        prop_assert!(bsde(&p).unwrap() >= -1e-9);
        let v = jhat_convexity_probe(bsde, &p, &q, &CONVEXITY_LAMBDAS).unwrap();
        prop_assert!(v <= 1e-9, "bsde {}", v);

        let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
        let f = TreeDriver::linear(-0.5, 0.3, vec![0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(s1 ^ 0x5555);
        let probes: Vec<(TreeProcess, TreeProcess)> = (0..8)
            .map(|_| (random_tree(&mut rng, 3, -1.0, 1.0), random_tree(&mut rng, 3, -2.0, 2.0)))
            .collect();
        let p = BsviCandidate::from_y(&tree, random_tree(&mut ChaCha8Rng::seed_from_u64(s1), 4, -1.0, 1.0)).unwrap();
        let q = BsviCandidate::from_y(&tree, random_tree(&mut ChaCha8Rng::seed_from_u64(s2), 4, -1.0, 1.0)).unwrap();
        let bsvi = |c: &BsviCandidate| Ok(bsvi_jhat(&phi, &f, &tree, &xi, c, &probes)?.total);
        prop_assert!(bsvi(&p).unwrap() >= -1e-9);
        let v = jhat_convexity_probe(bsvi, &p, &q, &CONVEXITY_LAMBDAS).unwrap();
        prop_assert!(v <= 1e-9, "bsvi {}", v);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=probes.len() {
            let t = bsvi_jhat(&phi, &f, &tree, &xi, &p, &probes[..k]).unwrap().total;
            prop_assert!(t >= prev);
            prev = t;
        }
    }
}

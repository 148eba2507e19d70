use fitzsolve::backward_tree::{solve_bsvi_tree, BinomialTree, TreeDriver, TreeProcess};
use fitzsolve::forward_sde::{
    solve_sde_additive, solve_svi, DiffusionPath, FieldCoefficients, WienerEnsemble, XiSampler,
};
use fitzsolve::gsp::{solve_gsp, Scheme};
use fitzsolve::operators::OperatorSpec;
use fitzsolve::paths::{uniform_grid, BVPath, GridPath};
use fitzsolve::variational::{
    bsde_jhat, bsvi_jhat, gsp_convexity_probe, gsp_jhat, jhat_convexity_probe, sde_jhat, svi_jhat,
    BsdeCandidate, BsviCandidate, FunctionalParams, GspCandidate, SdeCandidate, SviCandidate,
    SviProbe, CONVEXITY_LAMBDAS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Check;

const SAMPLES: usize = 100;

/// Running summary of one functional.
struct Tally {
    name: &'static str,
    min_value: f64,
    max_violation: f64,
    parts: Vec<(String, bool)>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            min_value: f64::INFINITY,
            max_violation: f64::NEG_INFINITY,
            parts: Vec::new(),
        }
    }

    fn push(&mut self, what: String, ok: bool) {
        self.parts.push((format!("{}: {what}", self.name), ok));
    }

    fn finish(mut self) -> Vec<(String, bool)> {
        let (m, v) = (self.min_value, self.max_violation);
        self.push(
            format!("min over {SAMPLES} candidates {m:.1e} >= -1e-9"),
            m >= -1e-9,
        );
        self.push(
            format!("max convexity violation over {SAMPLES} pairs {v:.1e} <= 1e-9"),
            v <= 1e-9,
        );
        self.parts
    }
}

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

/// `x >= 0`, `k` nonincreasing, `mu = x + k - a`.
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

fn gsp() -> Vec<(String, bool)> {
    let mut t = Tally::new("GSP");
    let a = OperatorSpec::half_space(1);
    let m = half_line_driver(30);
    let p = gsp_params(20.0, &m);
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    for _ in 0..SAMPLES {
        let c = half_line_candidate(&mut rng, m.grid());
        t.min_value = t
            .min_value
            .min(gsp_jhat(&a, &[0.0], &m, &p, &c).unwrap().total);
        let d = half_line_candidate(&mut rng, m.grid());
        t.max_violation = t
            .max_violation
            .max(gsp_convexity_probe(&a, &[0.0], &m, &p, &c, &d).unwrap());
    }

    let ball = OperatorSpec::normal_cone_ball(vec![0.0, 0.0], 1.0).unwrap();
    let bm = GridPath::from_fn(uniform_grid(1.0, 200), |s| {
        vec![2.0 * (3.0 * s).sin(), 1.5 * s - (5.0 * s).cos() + 1.0]
    })
    .unwrap();
    let hm = half_line_driver(300);
    let mut worst: f64 = 0.0;
    for (a, x0, m) in [(&ball, &[0.3, -0.2][..], &bm), (&a, &[0.1][..], &hm)] {
        let sol = solve_gsp(a, x0, m, Scheme::CatchingUp).unwrap();
        let p = gsp_params(2.0 * sol.k.total_variation() + 1.0, m);
        let v = gsp_jhat(a, x0, m, &p, &GspCandidate::from_solution(x0, m, &sol))
            .unwrap()
            .total;
        worst = worst.max(v.abs());
    }
    t.push(
        format!("solver outputs |J| {worst:.1e} <= 1e-8"),
        worst <= 1e-8,
    );

    let m = half_line_driver(100);
    let sol = solve_gsp(&a, &[0.0], &m, Scheme::CatchingUp).unwrap();
    let p = gsp_params(2.0 * sol.k.total_variation(), &m);
    let mut ok = true;
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
        ok &= gsp_jhat(&a, &[0.0], &m, &p, &c).unwrap().total >= delta * delta - 1e-12;
    }
    t.push("displaced start costs at least delta^2".into(), ok);
    t.finish()
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

fn brownian(ens: &WienerEnsemble, p: usize, scale: f64) -> GridPath {
    let mut b = vec![vec![0.0]];
    for d in ens.increments(p) {
        b.push(vec![b.last().unwrap()[0] + scale * d[0]]);
    }
    GridPath::new(ens.grid.clone(), b).unwrap()
}

fn sde() -> Vec<(String, bool)> {
    let mut t = Tally::new("SDE");
    let phi = OperatorSpec::half_space(1);
    let ens = WienerEnsemble::binomial_enumeration(uniform_grid(1.0, 8)).unwrap();
    let xi = xi_leaves(ens.n_paths, 601);
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
    let eval = |c: &SdeCandidate| Ok(sde_jhat(&phi, &xi, &g, &ens, c, None)?.total);
    let v = eval(&base).unwrap();
    t.push(
        format!("enumerated solver output |J| {v:.1e} <= 1e-8"),
        v.abs() <= 1e-8,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(602);
    let make = |rng: &mut ChaCha8Rng| {
        let s = random_shift(rng, 8);
        let mut c = base.clone();
        for p in 0..c.x.len() {
            (c.x[p], c.k[p]) = shift_push(&c.x[p], &c.k[p], &s);
        }
        c
    };
    for _ in 0..SAMPLES {
        let (p, q) = (make(&mut rng), make(&mut rng));
        t.min_value = t.min_value.min(eval(&p).unwrap());
        t.max_violation = t
            .max_violation
            .max(jhat_convexity_probe(eval, &p, &q, &CONVEXITY_LAMBDAS).unwrap());
    }

    let s = OperatorSpec::abs_sum(vec![1.0]).unwrap();
    let g_ens = WienerEnsemble::gaussian(1, uniform_grid(1.0, 100), 400, 603).unwrap();
    let xi = xi_leaves(400, 604);
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
    let se = r.se.unwrap_or(0.0);
    t.push(
        format!(
            "Monte Carlo solver output {:.1e} <= 3 SE {:.1e}",
            r.total,
            3.0 * se
        ),
        r.total <= 3.0 * se + 1e-8,
    );

    let mut c = base.clone();
    c.g = DiffusionPath::Constant { matrix: vec![2.0] };
    for (p, x) in c.x.iter_mut().enumerate() {
        *x = x.combine(1.0, &brownian(&g_ens, p, 1.0), 1.0).unwrap();
    }
    let r = sde_jhat(&s, &xi, &g, &g_ens, &c, None).unwrap();
    let wrong_g = r.total >= 0.5 - 3.0 * r.se.unwrap_or(0.0);
    let mut c = base;
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
    let wrong_eta = r.total >= 0.5 - 3.0 * r.se.unwrap_or(0.0);
    t.push(
        "diffusion and initial perturbations cost at least 1/2".into(),
        wrong_g && wrong_eta,
    );
    t.finish()
}

fn constant_probes(grid: &[f64]) -> Vec<SviProbe> {
    [0.0, 0.25, 0.5, 1.0, 2.0]
        .iter()
        .map(|c| SviProbe::Path(GridPath::constant(grid.to_vec(), vec![*c]).unwrap()))
        .collect()
}

fn svi() -> Vec<(String, bool)> {
    let mut t = Tally::new("SVI");
    let phi = OperatorSpec::half_space(1);
    let coeffs = FieldCoefficients::affine(vec![vec![-1.0]], vec![0.0], vec![1.0], 1, true);
    let ens = WienerEnsemble::binomial_enumeration(uniform_grid(1.0, 8)).unwrap();
    let xi = xi_leaves(ens.n_paths, 611);
    let sol = solve_svi(
        &phi,
        &coeffs,
        &XiSampler::Samples { values: xi.clone() },
        &ens,
        true,
    )
    .unwrap();
    let base = SviCandidate::from_ensemble(&sol, &coeffs).unwrap();
    let mut probes = constant_probes(&ens.grid);
    for c in [0.0, 0.3, 1.0] {
        let lift = GridPath::constant(ens.grid.clone(), vec![c]).unwrap();
        probes.push(SviProbe::PerPath(
            base.x
                .iter()
                .map(|x| x.combine(1.0, &lift, 1.0).unwrap())
                .collect(),
        ));
    }
    let eval = |c: &SviCandidate| Ok(svi_jhat(&phi, &coeffs, &xi, &ens, c, &probes)?.total);
    let mut rng = ChaCha8Rng::seed_from_u64(612);
    let make = |rng: &mut ChaCha8Rng| {
        let s = random_shift(rng, 8);
        let mut c = base.clone();
        for p in 0..c.x.len() {
            (c.x[p], c.l[p]) = shift_push(&c.x[p], &c.l[p], &s);
        }
        c
    };
    for _ in 0..SAMPLES {
        let (p, q) = (make(&mut rng), make(&mut rng));
        t.min_value = t.min_value.min(eval(&p).unwrap());
        t.max_violation = t
            .max_violation
            .max(jhat_convexity_probe(eval, &p, &q, &CONVEXITY_LAMBDAS).unwrap());
    }

    let grid = uniform_grid(1.0, 400);
    let g_ens = WienerEnsemble::gaussian(1, grid.clone(), 300, 613).unwrap();
    let xi = xi_leaves(300, 614);
    let r = {
        let sol = solve_svi(
            &phi,
            &coeffs,
            &XiSampler::Samples { values: xi.clone() },
            &g_ens,
            true,
        )
        .unwrap();
        let c = SviCandidate::from_ensemble(&sol, &coeffs).unwrap();
        svi_jhat(&phi, &coeffs, &xi, &g_ens, &c, &constant_probes(&grid)).unwrap()
    };
    let tol = 3.0 * r.se.unwrap_or(0.0) + 1e-8;
    t.push(
        format!(
            "Monte Carlo solver output {:.2e} <= 3 SE {tol:.2e}",
            r.total
        ),
        r.total <= tol,
    );

    let s = OperatorSpec::abs_sum(vec![1.0]).unwrap();
    let free = FieldCoefficients::affine(vec![vec![0.0]], vec![0.0], vec![1.0], 1, false);
    let sol = solve_svi(
        &s,
        &free,
        &XiSampler::Samples { values: xi.clone() },
        &g_ens,
        true,
    )
    .unwrap();
    let mut c = SviCandidate::from_ensemble(&sol, &free).unwrap();
    for (p, x) in c.x.iter_mut().enumerate() {
        *x = x.combine(1.0, &brownian(&g_ens, p, 1.0), -1.0).unwrap();
    }
    c.g = DiffusionPath::Constant { matrix: vec![0.0] };
    let r = svi_jhat(&s, &free, &xi, &g_ens, &c, &[]).unwrap();
    t.push(
        format!(
            "zero diffusion against unit noise costs {:.3} >= 1/2 - 3 SE",
            r.total
        ),
        r.total >= 0.5 - 3.0 * r.se.unwrap_or(0.0),
    );
    t.finish()
}

fn random_tree(rng: &mut ChaCha8Rng, last: usize, lo: f64, hi: f64) -> TreeProcess {
    TreeProcess::new(
        (0..=last)
            .map(|i| (0..=i).map(|_| vec![rng.random_range(lo..hi)]).collect())
            .collect(),
    )
    .unwrap()
}

fn bsde() -> Vec<(String, bool)> {
    let mut t = Tally::new("BSDE");
    let tree = BinomialTree::new(4, 1.0).unwrap();
    let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
    let xi = tree.leaf_values(|b| vec![0.3 * b]);
    let zetas = vec![
        tree.leaf_values(|_| vec![1.5]),
        tree.leaf_values(|b| vec![-b]),
    ];
    let eval = |c: &BsdeCandidate| Ok(bsde_jhat(&id, &tree, &xi, 4.0, c, &zetas, None)?.total);
    let mut rng = ChaCha8Rng::seed_from_u64(620);
    let make = |rng: &mut ChaCha8Rng| {
        let eta: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        BsdeCandidate::from_eta_h(&tree, eta, random_tree(rng, 3, -1.0, 1.0)).unwrap()
    };
    for _ in 0..SAMPLES {
        let (p, q) = (make(&mut rng), make(&mut rng));
        t.min_value = t.min_value.min(eval(&p).unwrap());
        t.max_violation = t
            .max_violation
            .max(jhat_convexity_probe(eval, &p, &q, &CONVEXITY_LAMBDAS).unwrap());
    }

    let tree = BinomialTree::new(6, 1.0).unwrap();
    let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
    let xi = tree.leaf_values(|b| vec![(b * 0.8).clamp(-1.0, 1.0)]);
    let sol = solve_bsvi_tree(&phi, &TreeDriver::zero(1), &xi, &tree).unwrap();
    let v = bsde_jhat(
        &phi,
        &tree,
        &xi,
        4.0,
        &BsdeCandidate::from_solution(&sol),
        &[],
        None,
    )
    .unwrap()
    .total;
    t.push(
        format!("solver output |J| {v:.1e} <= 1e-8"),
        v.abs() <= 1e-8,
    );

    let sol = solve_bsvi_tree(&id, &TreeDriver::zero(1), &xi, &tree).unwrap();
    let base = BsdeCandidate::from_solution(&sol);
    let shifted: Vec<Vec<f64>> = xi.iter().map(|v| vec![v[0] + 1.0]).collect();
    let cand = BsdeCandidate::from_eta_h(&tree, shifted, base.h.clone()).unwrap();
    let v = bsde_jhat(&id, &tree, &xi, 4.0, &cand, &[], None)
        .unwrap()
        .total;
    t.push(format!("terminal shift by 1 costs {v:.3} >= 1/2"), v >= 0.5);
    t.finish()
}

fn bsvi() -> Vec<(String, bool)> {
    let mut t = Tally::new("BSVI");
    let tree = BinomialTree::new(4, 1.0).unwrap();
    let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
    let xi = tree.leaf_values(|b| vec![0.3 * b]);
    let f = TreeDriver::linear(-0.5, 0.3, vec![0.1]);
    let mut rng = ChaCha8Rng::seed_from_u64(630);
    let probes: Vec<(TreeProcess, TreeProcess)> = (0..8)
        .map(|_| {
            (
                random_tree(&mut rng, 3, -1.0, 1.0),
                random_tree(&mut rng, 3, -2.0, 2.0),
            )
        })
        .collect();
    let eval = |c: &BsviCandidate| Ok(bsvi_jhat(&phi, &f, &tree, &xi, c, &probes)?.total);
    for _ in 0..SAMPLES {
        let p = BsviCandidate::from_y(&tree, random_tree(&mut rng, 4, -1.0, 1.0)).unwrap();
        let q = BsviCandidate::from_y(&tree, random_tree(&mut rng, 4, -1.0, 1.0)).unwrap();
        t.min_value = t.min_value.min(eval(&p).unwrap());
        t.max_violation = t
            .max_violation
            .max(jhat_convexity_probe(eval, &p, &q, &CONVEXITY_LAMBDAS).unwrap());
    }

    let tree = BinomialTree::new(6, 1.0).unwrap();
    let xi = tree.leaf_values(|b| vec![(0.5 * b).clamp(-1.0, 1.0)]);
    let f = TreeDriver::linear(-0.5, 0.3, vec![0.2]);
    let sol = solve_bsvi_tree(&phi, &f, &xi, &tree).unwrap();
    let probes: Vec<(TreeProcess, TreeProcess)> = (0..30)
        .map(|_| {
            (
                random_tree(&mut rng, 5, -1.0, 1.0),
                random_tree(&mut rng, 5, -2.0, 2.0),
            )
        })
        .collect();
    let r = bsvi_jhat(
        &phi,
        &f,
        &tree,
        &xi,
        &BsviCandidate::from_solution(&sol).unwrap(),
        &probes,
    )
    .unwrap();
    let sup = r.note("closed_form_sup").unwrap_or(f64::INFINITY);
    t.push(
        format!(
            "solver output {:.1e}, closed-form sup {sup:.1e}, both <= 1e-8",
            r.total
        ),
        r.total <= 1e-8 && sup.abs() <= 1e-8,
    );

    let id = OperatorSpec::scaled_identity(1, 1.0).unwrap();
    let sol = solve_bsvi_tree(&id, &f, &xi, &tree).unwrap();
    let shifted = BsviCandidate::from_solution(&sol)
        .unwrap()
        .shift_terminal(&tree, &[1.0])
        .unwrap();
    let v = bsvi_jhat(&id, &f, &tree, &xi, &shifted, &[]).unwrap().total;
    t.push(format!("terminal shift by 1 costs {v:.3} >= 1/2"), v >= 0.5);
    t.finish()
}

pub fn sign_zero_convexity() -> Check {
    let mut parts = Vec::new();
    for f in [gsp, sde, svi, bsde, bsvi] {
        parts.extend(f());
    }
    Check::all(parts)
}

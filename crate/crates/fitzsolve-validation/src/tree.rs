use fitzsolve::backward_tree::{
    brute_force_bsvi, martingale_representation, node_program_value, random_start,
    reconstruction_residual, solve_bsvi_tree, BinomialTree, TreeDriver,
};
use fitzsolve::operators::OperatorSpec;
use fitzsolve::variational::{bsvi_jhat, BsviCandidate};

use crate::Check;

pub fn brute_force_agreement() -> Check {
    let phi = OperatorSpec::interval(1, -1.0, 1.0).unwrap();
    let mut parts = Vec::new();
    for depth in [3, 4] {
        let tree = BinomialTree::new(depth, 1.0).unwrap();
        let xi = tree.leaf_values(|b| vec![(2.0 * b).clamp(-1.0, 1.0)]);
        for (fname, f) in [
            ("F = 0", TreeDriver::zero(1)),
            ("F = -y/2", TreeDriver::linear(-0.5, 0.0, vec![0.0])),
        ] {
            let rec = solve_bsvi_tree(&phi, &f, &xi, &tree).unwrap();
            let start = random_start(&phi, &tree, 100 + depth as u64).unwrap();
            let label = format!("depth {depth}, {fname}");
            match brute_force_bsvi(&phi, &f, &xi, &tree, &start, 500_000) {
                Ok(bf) => {
                    let d = bf.solution.y.max_dist(&rec.y);
                    parts.push((format!("{label}: node distance {d:.1e} <= 1e-5"), d <= 1e-5));
                }
                Err(e) => parts.push((format!("{label}: brute force failed: {e}"), false)),
            }
            let exact = node_program_value(&phi, &f, &xi, &tree, &rec.y).unwrap();
            let probe = bsvi_jhat(
                &phi,
                &f,
                &tree,
                &xi,
                &BsviCandidate::from_solution(&rec).unwrap(),
                &[],
            )
            .unwrap()
            .note("closed_form_sup")
            .unwrap_or(f64::INFINITY);
            parts.push((
                format!("{label}: functional {exact:.1e} (closed-form sup {probe:.1e}) <= 1e-8"),
                exact <= 1e-8 && probe.abs() <= 1e-8,
            ));
        }
    }
    Check::all(parts)
}

pub fn representation() -> Check {
    let mut parts = Vec::new();
    for depth in [1, 5, 12] {
        let tree = BinomialTree::new(depth, 1.0).unwrap();
        type Payoff = fn(f64) -> Vec<f64>;
        let payoffs: [(&str, Payoff); 3] = [
            ("c", |_| vec![0.75]),
            ("B_T", |b| vec![b]),
            ("B_T^2", |b| vec![b * b]),
        ];
        for (name, f) in payoffs {
            let eta = tree.leaf_values(f);
            let (y0, _, z) = martingale_representation(&tree, &eta).unwrap();
            let r = reconstruction_residual(&tree, &eta, &y0, &z).unwrap();
            parts.push((
                format!("depth {depth}, {name}: residual {r:.1e}"),
                r <= 1e-12,
            ));
        }
    }
    Check::all(parts)
}

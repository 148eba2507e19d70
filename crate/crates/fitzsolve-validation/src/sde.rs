use fitzsolve::forward_sde::{
    ks_critical_01, ks_statistic, second_moment, solve_sde_additive, DiffusionPath, WienerEnsemble,
    XiSampler,
};
use fitzsolve::operators::OperatorSpec;
use fitzsolve::paths::uniform_grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Check;

pub fn reflected_law() -> Check {
    let n_paths = 10_000;
    let dt: f64 = 1e-3;
    let ens = WienerEnsemble::gaussian(1, uniform_grid(1.0, 1000), n_paths, 1007).unwrap();
    let sol = solve_sde_additive(
        &OperatorSpec::half_space(1),
        &XiSampler::Constant { value: vec![0.0] },
        &DiffusionPath::Constant { matrix: vec![1.0] },
        &ens,
        false,
    )
    .unwrap();
    let xt = sol.terminal_values(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2_000_007);
    let abs_b: Vec<f64> = (0..n_paths)
        .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
        .collect();
    let ks = ks_statistic(&xt, &abs_b);
    let crit = ks_critical_01(xt.len(), abs_b.len());
    let (m1, se1) = second_moment(&xt);
    let (m2, se2) = second_moment(&abs_b);
    let se = (se1 * se1 + se2 * se2).sqrt();
    let allow = 3.0 * se + 2.0 * dt.sqrt();
    Check::all(vec![
        (format!("KS {ks:.4} < {crit:.4}"), ks < crit),
        (
            format!(
                "E X_T^2 {m1:.4} vs {m2:.4}, |diff| {:.4} <= {allow:.4}",
                (m1 - m2).abs()
            ),
            (m1 - m2).abs() <= allow,
        ),
    ])
}

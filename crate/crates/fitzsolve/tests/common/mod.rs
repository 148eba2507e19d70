#![allow(dead_code)]

use fitzsolve::operators::{OperatorKind, OperatorSpec};

/// Two-dimensional instance of every operator kind.
pub fn builtins() -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::normal_cone_box(vec![0.0, -1.0], vec![1.0, 2.0]).unwrap(),
        OperatorSpec::half_space(2),
        OperatorSpec::normal_cone_ball(vec![0.5, -0.5], 1.5).unwrap(),
        OperatorSpec::abs_sum(vec![1.0, 0.5]).unwrap(),
        OperatorSpec::interval(2, -1.0, 1.0).unwrap(),
        OperatorSpec::linear(vec![vec![2.0, 1.0], vec![-1.0, 0.5]]).unwrap(),
        OperatorSpec::scaled_identity(2, 1.5).unwrap(),
        OperatorSpec::sum(
            vec![vec![1.0, 0.5], vec![-0.5, 1.0]],
            OperatorKind::SubdiffAbsSum {
                weights: vec![1.0, 1.0],
            },
        )
        .unwrap(),
    ]
}

/// Kinds with a closed-form Fitzpatrick function (dimension 2 unless noted).
pub fn closed_form_kinds() -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::normal_cone_box(vec![0.0, -1.0], vec![1.0, 2.0]).unwrap(),
        OperatorSpec::half_space(2),
        OperatorSpec::normal_cone_ball(vec![0.5, -0.5], 1.5).unwrap(),
        OperatorSpec::interval(2, -1.0, 1.0).unwrap(),
        OperatorSpec::abs_sum(vec![1.0]).unwrap(),
        OperatorSpec::scaled_identity(2, 1.0).unwrap(),
        OperatorSpec::linear(vec![vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
    ]
}

pub fn cone_kinds() -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::normal_cone_box(vec![0.0, -1.0], vec![1.0, 2.0]).unwrap(),
        OperatorSpec::half_space(2),
        OperatorSpec::normal_cone_ball(vec![0.5, -0.5], 1.5).unwrap(),
        OperatorSpec::interval(2, -1.0, 1.0).unwrap(),
    ]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

use std::path::{Path, PathBuf};

use fitzsolve::backward_tree::BinomialTree;
use fitzsolve::forward_sde::{DiffusionPath, XiSampler};
use fitzsolve::gsp::Scheme;
use fitzsolve::operators::OperatorSpec;
use fitzsolve::variational::MinimizeOptions;
use serde::{Deserialize, Serialize};

use crate::expr::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FitzCheck,
    GspSolve,
    GspMinimize,
    SdeRun,
    SviRun,
    BsdeRun,
    Verify,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::FitzCheck => "fitz-check",
            Experiment::GspSolve => "gsp-solve",
            Experiment::GspMinimize => "gsp-minimize",
            Experiment::SdeRun => "sde-run",
            Experiment::SviRun => "svi-run",
            Experiment::BsdeRun => "bsde-run",
            Experiment::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub operator: OperatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverConfig>,
    #[serde(default)]
    pub probes: ProbeConfig,
    #[serde(default)]
    pub gsp: GspConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimize: Option<MinimizeOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitz: Option<FitzConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svi: Option<SviConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<CandidateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub x0: Vec<f64>,
    #[serde(flatten)]
    pub form: DriverForm,
}

/// Driver path `m` with `m(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DriverForm {
    /// `m(t) = v t`.
    Linear { velocity: Vec<f64> },
    /// `m_c(t) = a_c sin(2 pi f t)`.
    Sine { amplitude: Vec<f64>, frequency: f64 },
    /// `m(t) = r t (cos 2 pi n t, sin 2 pi n t)`.
    Spiral { radius_rate: f64, turns: f64 },
    /// Gaussian walk with per-coordinate scale, seeded by the run seed.
    RandomWalk { scale: Vec<f64> },
    /// CSV `t,v1..`; the grid section is ignored.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Number of exact graph samples.
    pub graph: usize,
    pub half_width: f64,
    pub eps: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            graph: 64,
            half_width: 5.0,
            eps: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GspConfig {
    #[serde(flatten)]
    pub scheme: Scheme,
}

impl Default for GspConfig {
    fn default() -> Self {
        GspConfig {
            scheme: Scheme::CatchingUp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitzConfig {
    /// Random `(x, x*)` points for the lower-bound check.
    pub points: usize,
    pub graph_samples: usize,
    pub half_width: f64,
    /// Sampling budget for operators without a closed form.
    pub sup_samples: usize,
}

impl Default for FitzConfig {
    fn default() -> Self {
        FitzConfig {
            points: 1000,
            graph_samples: 1000,
            half_width: 5.0,
            sup_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub paths: usize,
    #[serde(default = "one")]
    pub noise_dim: usize,
    pub xi: XiSampler,
    pub diffusion: DiffusionPath,
    /// Evaluate the functional at the solver output (keeps all paths in memory).
    #[serde(default)]
    pub functional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SviConfig {
    pub paths: usize,
    #[serde(default = "one")]
    pub noise_dim: usize,
    pub xi: XiSampler,
    /// `F(x) = drift_matrix x + drift_offset`.
    pub drift_matrix: Vec<Vec<f64>>,
    pub drift_offset: Vec<f64>,
    /// Constant `G`, row-major `d x k`.
    pub diffusion: Vec<f64>,
    #[serde(default)]
    pub dissipative: bool,
    /// Paths re-solved and checked window by window.
    #[serde(default = "ten")]
    pub verify_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub depth: usize,
    pub horizon: f64,
    /// One expression per coordinate; exclusive with `leaves`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaves: Option<Vec<Vec<f64>>>,
    /// `F(t, y, z) = a y + b z + c0`.
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<Vec<f64>>,
    #[serde(default)]
    pub brute_force: bool,
    #[serde(default = "brute_iters")]
    pub brute_force_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateConfig {
    /// CSV `t,v1..`.
    pub x: PathBuf,
    /// CSV `t,dk1..`.
    pub k: PathBuf,
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

fn brute_iters() -> usize {
    200_000
}

/// Validated config with resolved paths and parsed payoffs.
pub struct Prepared {
    pub config: RunConfig,
    pub base: PathBuf,
    pub payoff: Option<Vec<Expr>>,
}

fn need<'a, T>(v: &'a Option<T>, section: &str, kind: Experiment) -> Result<&'a T, String> {
    v.as_ref()
        .ok_or_else(|| format!("experiment `{}` needs a [{section}] section", kind.name()))
}

impl Prepared {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Parses a config, or the config echoed in a run manifest.
pub fn parse(text: &str, base: &Path) -> Result<Prepared, String> {
    let value: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
    let config: RunConfig = match value.get("config") {
        Some(toml::Value::Table(t)) if value.contains_key("library_version") => t
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?,
        _ => value
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?,
    };
    validate(config, base)
}

fn validate(config: RunConfig, base: &Path) -> Result<Prepared, String> {
    config.operator.validate().map_err(|e| e.to_string())?;
    let kind = config.experiment;
    let d = config.operator.dim;
    let mut prepared = Prepared {
        config,
        base: base.to_path_buf(),
        payoff: None,
    };
    let c = &prepared.config;
    let check_grid = |g: &GridConfig| -> Result<(), String> {
        if !(g.horizon > 0.0) || !g.horizon.is_finite() || g.steps == 0 {
            return Err("grid needs horizon > 0 and steps >= 1".into());
        }
        Ok(())
    };
    let check_driver = |dr: &DriverConfig, grid: Option<&GridConfig>| -> Result<(), String> {
        if dr.x0.len() != d {
            return Err(format!("driver.x0 must have dimension {d}"));
        }
        match &dr.form {
            DriverForm::Linear { velocity: v } | DriverForm::RandomWalk { scale: v }
                if v.len() != d =>
            {
                Err(format!("driver vector must have dimension {d}"))
            }
            DriverForm::Sine { amplitude, .. } if amplitude.len() != d => {
                Err(format!("driver.amplitude must have dimension {d}"))
            }
            DriverForm::Spiral { .. } if d != 2 => Err("spiral driver needs dimension 2".into()),
            DriverForm::File { path } => {
                let p = prepared.resolve(path);
                if !p.is_file() {
                    return Err(format!("driver file {} does not exist", p.display()));
                }
                Ok(())
            }
            _ => grid
                .ok_or_else(|| "driver needs a [grid] section".to_string())
                .and_then(check_grid),
        }
    };
    if c.probes.graph == 0 || !(c.probes.half_width > 0.0) || !(c.probes.eps > 0.0) {
        return Err("probes need graph >= 1, half_width > 0, eps > 0".into());
    }
    match kind {
        Experiment::FitzCheck => {
            if c.fitz
                .as_ref()
                .is_some_and(|f| f.points == 0 || f.graph_samples == 0 || !(f.half_width > 0.0))
            {
                return Err("fitz needs points, graph_samples >= 1 and half_width > 0".into());
            }
        }
        Experiment::GspSolve | Experiment::GspMinimize => {
            check_driver(need(&c.driver, "driver", kind)?, c.grid.as_ref())?;
            if kind == Experiment::GspMinimize && !c.operator.is_cone() {
                return Err("gsp-minimize needs a normal-cone operator".into());
            }
        }
        Experiment::Verify => {
            check_driver(need(&c.driver, "driver", kind)?, c.grid.as_ref())?;
            let cand = need(&c.candidate, "candidate", kind)?;
            for p in [&cand.x, &cand.k] {
                let r = prepared.resolve(p);
                if !r.is_file() {
                    return Err(format!("candidate file {} does not exist", r.display()));
                }
            }
        }
        Experiment::SdeRun => {
            let g = need(&c.grid, "grid", kind)?;
            check_grid(g)?;
            let s = need(&c.sde, "sde", kind)?;
            if s.paths == 0 || s.noise_dim == 0 || s.xi.dim() != d {
                return Err(format!(
                    "sde needs paths >= 1, noise_dim >= 1, xi of dimension {d}"
                ));
            }
        }
        Experiment::SviRun => {
            let g = need(&c.grid, "grid", kind)?;
            check_grid(g)?;
            let s = need(&c.svi, "svi", kind)?;
            if !c.operator.has_potential() {
                return Err("svi-run needs a subdifferential operator".into());
            }
            if s.paths == 0
                || s.xi.dim() != d
                || s.drift_offset.len() != d
                || s.drift_matrix.len() != d
                || s.drift_matrix.iter().any(|r| r.len() != d)
                || s.diffusion.len() != d * s.noise_dim
            {
                return Err(format!(
                    "svi coefficients must match dimension {d} and noise_dim {}",
                    s.noise_dim
                ));
            }
        }
        Experiment::BsdeRun => {
            let t = need(&c.tree, "tree", kind)?;
            BinomialTree::new(t.depth, t.horizon).map_err(|e| e.to_string())?;
            if !c.operator.has_potential() {
                return Err("bsde-run needs a subdifferential operator".into());
            }
            if t.c0.as_ref().is_some_and(|c0| c0.len() != d) {
                return Err(format!("tree.c0 must have dimension {d}"));
            }
            match (&t.payoff, &t.leaves) {
                (Some(exprs), None) => {
                    if exprs.len() != d {
                        return Err(format!("tree.payoff needs {d} expressions"));
                    }
                    let parsed = exprs
                        .iter()
                        .map(|s| Expr::parse(s).map_err(|e| format!("payoff `{s}`: {e}")))
                        .collect::<Result<Vec<_>, _>>()?;
                    prepared.payoff = Some(parsed);
                }
                (None, Some(leaves)) => {
                    if leaves.len() != t.depth + 1 || leaves.iter().any(|l| l.len() != d) {
                        return Err(format!(
                            "tree.leaves needs {} rows of dimension {d}",
                            t.depth + 1
                        ));
                    }
                }
                _ => return Err("tree needs exactly one of `payoff` and `leaves`".into()),
            }
        }
    }
    Ok(prepared)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "gsp-solve"
seed = 1
[operator]
dim = 1
kind = "normal_cone_box"
lo = [0.0]
hi = [inf]
[grid]
horizon = 1.0
steps = 10
[driver]
x0 = [0.0]
form = "linear"
velocity = [-1.0]
"#;

    #[test]
    fn parses_base_config() {
        let p = parse(BASE, Path::new(".")).unwrap();
        assert_eq!(p.config.experiment, Experiment::GspSolve);
        assert_eq!(p.config.probes.graph, 64);
        assert_eq!(p.config.gsp.scheme, Scheme::CatchingUp);
        let back = toml::to_string(&p.config).unwrap();
        assert_eq!(parse(&back, Path::new(".")).unwrap().config, p.config);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            BASE.replace("seed = 1\n", ""),
            BASE.replace("velocity = [-1.0]", "velocity = [-1.0, 2.0]"),
            BASE.replace("steps = 10", "steps = 0"),
            BASE.replace("gsp-solve", "gsp-dance"),
            BASE.replace("[grid]", "[grid]\nbogus = 1"),
            BASE.replace(
                "form = \"linear\"",
                "form = \"file\"\npath = \"missing.csv\"",
            ),
        ];
        for c in cases {
            assert!(parse(&c, Path::new(".")).is_err(), "{c}");
        }
    }

    #[test]
    fn payoff_is_parsed() {
        let cfg = r#"
experiment = "bsde-run"
seed = 3
[operator]
dim = 1
kind = "subdiff_indicator_interval"
a = -1.0
b = 1.0
[tree]
depth = 4
horizon = 1.0
payoff = ["clip(w, -1, 1)"]
"#;
        let p = parse(cfg, Path::new(".")).unwrap();
        assert_eq!(p.payoff.unwrap()[0].eval(2.0), 1.0);
        assert!(parse(&cfg.replace("clip(w, -1, 1)", "clip(w)"), Path::new(".")).is_err());
    }
}

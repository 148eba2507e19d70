use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::time::Instant;

use fitzsolve::backward_tree::{
    brute_force_bsvi, random_start, solve_bsvi_tree, BinomialTree, TreeDriver,
};
use fitzsolve::fitzpatrick::{
    default_mode, fitz_gap, path_fitz_terms, write_gap_csv, GapRecord, Sampling,
};
use fitzsolve::forward_sde::{
    solve_sde_additive, solve_svi, svi_path, verify_svi, FieldCoefficients, SdeEnsemble,
    WienerEnsemble,
};
use fitzsolve::gsp::{solve_gsp, verify_gsp, Scheme};
use fitzsolve::operators::GraphPair;
use fitzsolve::paths::{fmt_f64, uniform_grid, BVPath, GridPath};
use fitzsolve::variational::{
    bsde_jhat, bsvi_jhat, gsp_jhat, minimize_gsp_jhat, sde_jhat, BsdeCandidate, BsviCandidate,
    FunctionalParams, GspCandidate, SdeCandidate,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DriverForm, Experiment, Prepared};
use crate::manifest::{RunManifest, Verdict};

#[derive(Debug)]
pub enum RunError {
    /// Unreadable or inconsistent input; exit status 2.
    Config(String),
    /// Solver or evaluator failure; exit status 3.
    Numeric(fitzsolve::Error),
    /// Output could not be written; exit status 3.
    Output(String),
}

impl From<fitzsolve::Error> for RunError {
    fn from(e: fitzsolve::Error) -> Self {
        RunError::Numeric(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(s) => write!(f, "config error: {s}"),
            RunError::Numeric(e) => write!(f, "numerical failure: {e}"),
            RunError::Output(s) => write!(f, "output error: {s}"),
        }
    }
}

type Res<T> = std::result::Result<T, RunError>;

/// Outputs collected in memory and written only once the run has finished.
#[derive(Default)]
struct Collected {
    files: Vec<(String, Vec<u8>)>,
    metrics: BTreeMap<String, f64>,
    verdicts: Vec<Verdict>,
}

impl Collected {
    fn csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> fitzsolve::Result<()>,
    ) -> Res<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    fn verdict(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }
}

pub fn run(p: &Prepared, out: &Path) -> Res<RunManifest> {
    let start = Instant::now();
    let mut c = Collected::default();
    match p.config.experiment {
        Experiment::FitzCheck => fitz_check(p, &mut c)?,
        Experiment::GspSolve => gsp_solve(p, &mut c)?,
        Experiment::GspMinimize => gsp_minimize(p, &mut c)?,
        Experiment::Verify => verify(p, &mut c)?,
        Experiment::SdeRun => sde_run(p, &mut c)?,
        Experiment::SviRun => svi_run(p, &mut c)?,
        Experiment::BsdeRun => bsde_run(p, &mut c)?,
    }
    std::fs::create_dir_all(out)
        .map_err(|e| RunError::Output(format!("{}: {e}", out.display())))?;
    let mut outputs = Vec::new();
    for (name, bytes) in &c.files {
        let path = out.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| RunError::Output(format!("{}: {e}", path.display())))?;
        outputs.push(name.clone());
    }
    let manifest = RunManifest {
        experiment: p.config.experiment.name().into(),
        library_version: env!("CARGO_PKG_VERSION").into(),
        operator: p.config.operator.tag().into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        metrics: c.metrics,
        verdicts: c.verdicts,
        config: p.config.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| RunError::Output(e.to_string()))?;
    let path = out.join("manifest.toml");
    std::fs::write(&path, text)
        .map_err(|e| RunError::Output(format!("{}: {e}", path.display())))?;
    Ok(manifest)
}

fn grid_of(p: &Prepared) -> Res<Vec<f64>> {
    let g = p
        .config
        .grid
        .as_ref()
        .ok_or_else(|| RunError::Config("missing [grid]".into()))?;
    Ok(uniform_grid(g.horizon, g.steps))
}

fn build_driver(p: &Prepared) -> Res<(Vec<f64>, GridPath)> {
    let dr = p
        .config
        .driver
        .as_ref()
        .ok_or_else(|| RunError::Config("missing [driver]".into()))?;
    let d = p.config.operator.dim;
    let tau = std::f64::consts::TAU;
    let m = match &dr.form {
        DriverForm::Linear { velocity } => {
            GridPath::from_fn(grid_of(p)?, |t| velocity.iter().map(|v| v * t).collect())?
        }
        DriverForm::Sine {
            amplitude,
            frequency,
        } => GridPath::from_fn(grid_of(p)?, |t| {
            amplitude
                .iter()
                .map(|a| a * (tau * frequency * t).sin())
                .collect()
        })?,
        DriverForm::Spiral { radius_rate, turns } => GridPath::from_fn(grid_of(p)?, |t| {
            let th = tau * turns * t;
            vec![radius_rate * t * th.cos(), radius_rate * t * th.sin()]
        })?,
        DriverForm::RandomWalk { scale } => {
            let grid = grid_of(p)?;
            let ens = WienerEnsemble::gaussian(d, grid.clone(), 1, p.config.seed)?;
            let mut acc = vec![0.0; d];
            let mut vals = vec![acc.clone()];
            for db in ens.increments(0) {
                for c in 0..d {
                    acc[c] += scale[c] * db[c];
                }
                vals.push(acc.clone());
            }
            GridPath::new(grid, vals)?
        }
        DriverForm::File { path } => {
            let f = File::open(p.resolve(path))
                .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            GridPath::read_csv(f)
                .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?
        }
    };
    if m.dim() != d {
        return Err(RunError::Config(format!(
            "driver has dimension {}, operator {d}",
            m.dim()
        )));
    }
    Ok((dr.x0.clone(), m))
}

fn graph_probes(p: &Prepared, seed_offset: u64) -> Res<Vec<GraphPair>> {
    let pc = &p.config.probes;
    let d = p.config.operator.dim;
    Ok(p.config.operator.graph_sample(
        &vec![-pc.half_width; d],
        &vec![pc.half_width; d],
        pc.graph,
        pc.eps,
        p.config.seed.wrapping_add(seed_offset),
    )?)
}

fn max_dt(grid: &[f64]) -> f64 {
    grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

fn step_gaps_csv(buf: &mut Vec<u8>, gaps: &[f64]) -> fitzsolve::Result<()> {
    let mut wr = csv::Writer::from_writer(buf);
    wr.write_record(["step", "gap"])?;
    for (i, g) in gaps.iter().enumerate() {
        wr.write_record([i.to_string(), fmt_f64(*g)])?;
    }
    wr.flush()?;
    Ok(())
}

fn fitz_check(p: &Prepared, c: &mut Collected) -> Res<()> {
    let a = &p.config.operator;
    let fc = p.config.fitz.clone().unwrap_or_default();
    let d = a.dim;
    let hw = fc.half_width;
    let sampling = Sampling::cube(d, hw, fc.sup_samples, p.config.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(p.config.seed);
    let mut rows = Vec::with_capacity(fc.points + fc.graph_samples);
    let mut min_random = f64::INFINITY;
    let mut exact = true;
    for _ in 0..fc.points {
        let x: Vec<f64> = (0..d)
            .map(|_| hw * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let xs: Vec<f64> = (0..d)
            .map(|_| hw * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let r = fitz_gap(a, &x, &xs, Some(&sampling))?;
        min_random = min_random.min(r.gap);
        exact &= r.exact;
        rows.push(GapRecord {
            operator: a.tag().into(),
            x,
            xstar: xs,
            report: r,
        });
    }
    let pairs = a.graph_sample(
        &vec![-hw; d],
        &vec![hw; d],
        fc.graph_samples,
        1.0,
        p.config.seed.wrapping_add(2),
    )?;
    let mut max_graph: f64 = f64::NEG_INFINITY;
    for g in pairs {
        let r = fitz_gap(a, &g.u, &g.ustar, Some(&sampling))?;
        max_graph = max_graph.max(r.gap);
        rows.push(GapRecord {
            operator: a.tag().into(),
            x: g.u,
            xstar: g.ustar,
            report: r,
        });
    }
    c.csv("gaps.csv", |b| write_gap_csv(b, &rows))?;
    c.metric("min_gap_random", min_random);
    c.metric("max_gap_graph", max_graph);
    c.metric("closed_form", if exact { 1.0 } else { 0.0 });
    c.verdict(Verdict::at_least("lower_bound", min_random, -1e-9));
    c.verdict(Verdict::at_most("graph_membership", max_graph, 1e-8));
    Ok(())
}

fn gsp_solve(p: &Prepared, c: &mut Collected) -> Res<()> {
    let a = &p.config.operator;
    let (x0, m) = build_driver(p)?;
    let scheme = p.config.gsp.scheme;
    let sol = solve_gsp(a, &x0, &m, scheme)?;
    let probes = graph_probes(p, 0)?;
    let rep = verify_gsp(a, &x0, &m, &sol.x, &sol.k, &probes)?;
    let tv = sol.k.total_variation();
    let r = if tv > 0.0 { 2.0 * tv } else { 1.0 };
    let zero = GridPath::constant(m.grid().to_vec(), vec![0.0; a.dim])?;
    let params =
        FunctionalParams::from_drivers(r, std::slice::from_ref(&m), vec![zero], probes.clone())?;
    let jhat = gsp_jhat(
        a,
        &x0,
        &m,
        &params,
        &GspCandidate::from_solution(&x0, &m, &sol),
    )?;

    c.csv("x.csv", |b| sol.x.write_csv(b))?;
    c.csv("k.csv", |b| sol.k.write_csv(b))?;
    if let Ok(gaps) = path_fitz_terms(a, &sol.x, &sol.k, default_mode(a), None) {
        c.csv("gaps.csv", |b| step_gaps_csv(b, &gaps))?;
    }
    c.metric("dt", max_dt(m.grid()));
    c.metric("steps", m.steps() as f64);
    c.metric("sup_norm", sol.diagnostics.sup_norm);
    c.metric("total_variation", tv);
    c.metric("node_defect", rep.node_defect);
    c.metric("min_integral", rep.min_integral);
    c.metric("fitz_gap", rep.path_gap);
    c.metric("jhat", jhat.total);
    c.metric(
        "terminal_x_norm",
        fitzsolve::linalg::norm(sol.x.value(m.steps())),
    );
    c.verdict(Verdict::at_most(
        "node_defect",
        rep.node_defect,
        rep.tolerance,
    ));
    c.verdict(Verdict::at_least(
        "monotone_integrals",
        rep.min_integral,
        -rep.tolerance,
    ));
    if scheme == Scheme::CatchingUp {
        c.verdict(Verdict::at_most("fitz_gap", rep.path_gap, 1e-9));
        c.verdict(Verdict::at_most("jhat", jhat.total, 1e-8));
    }
    Ok(())
}

fn gsp_minimize(p: &Prepared, c: &mut Collected) -> Res<()> {
    let a = &p.config.operator;
    let (x0, m) = build_driver(p)?;
    let opts = p.config.minimize.unwrap_or_default();
    let res = minimize_gsp_jhat(a, &x0, &m, &opts)?;
    let sol = solve_gsp(a, &x0, &m, Scheme::CatchingUp)?;
    let dk = res
        .candidate
        .k
        .to_grid_path()
        .sup_dist(&sol.k.to_grid_path())?;
    c.csv("trace.csv", |b| res.write_trace_csv(b))?;
    c.csv("x.csv", |b| res.candidate.x.write_csv(b))?;
    c.csv("k.csv", |b| res.candidate.k.write_csv(b))?;
    c.metric("dt", max_dt(m.grid()));
    c.metric("objective", res.objective);
    c.metric("iterations", res.iterations as f64);
    c.metric("k_distance_to_solver", dk);
    c.verdict(Verdict::at_most("objective", res.objective, opts.tol));
    c.verdict(Verdict::at_most("k_distance_to_solver", dk, 1e-4));
    Ok(())
}

fn verify(p: &Prepared, c: &mut Collected) -> Res<()> {
    let a = &p.config.operator;
    let (x0, m) = build_driver(p)?;
    let cand = p
        .config
        .candidate
        .as_ref()
        .ok_or_else(|| RunError::Config("missing [candidate]".into()))?;
    let open = |path: &Path| {
        File::open(p.resolve(path))
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    };
    let x = GridPath::read_csv(open(&cand.x)?)
        .map_err(|e| RunError::Config(format!("candidate x: {e}")))?;
    let k = BVPath::read_csv(open(&cand.k)?)
        .map_err(|e| RunError::Config(format!("candidate k: {e}")))?;
    for (name, g) in [("x", x.grid()), ("k", k.grid())] {
        if g != m.grid() {
            return Err(RunError::Config(format!(
                "candidate {name} is not on the driver grid"
            )));
        }
    }
    let probes = graph_probes(p, 0)?;
    let rep = verify_gsp(a, &x0, &m, &x, &k, &probes)?;
    c.csv("report.csv", |buf| {
        let mut wr = csv::Writer::from_writer(buf);
        wr.write_record(["check", "value", "threshold", "passed"])?;
        for (name, v, t, ok) in [
            ("node_defect", rep.node_defect, rep.tolerance, rep.defect_ok),
            (
                "min_integral",
                rep.min_integral,
                -rep.tolerance,
                rep.integral_ok,
            ),
            ("fitz_gap", rep.path_gap, rep.tolerance, rep.gap_ok),
        ] {
            wr.write_record([name.to_string(), fmt_f64(v), fmt_f64(t), ok.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    c.csv("witness.csv", |buf| {
        let mut wr = csv::Writer::from_writer(buf);
        wr.write_record(["probe", "s", "t", "value"])?;
        if let Some(w) = &rep.witness {
            wr.write_record([
                w.probe.to_string(),
                w.s.to_string(),
                w.t.to_string(),
                fmt_f64(w.value),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    c.metric("dt", max_dt(m.grid()));
    c.metric("node_defect", rep.node_defect);
    c.metric("min_integral", rep.min_integral);
    c.metric("fitz_gap", rep.path_gap);
    c.verdict(Verdict::at_most(
        "node_defect",
        rep.node_defect,
        rep.tolerance,
    ));
    c.verdict(Verdict::at_least(
        "monotone_integrals",
        rep.min_integral,
        -rep.tolerance,
    ));
    c.verdict(Verdict::at_most("fitz_gap", rep.path_gap, rep.tolerance));
    Ok(())
}

fn ensemble_outputs(c: &mut Collected, sol: &SdeEnsemble, grid: &[f64]) -> Res<()> {
    c.csv("summary.csv", |b| sol.write_summary_csv(b))?;
    c.csv("terminal.csv", |buf| {
        let mut wr = csv::Writer::from_writer(buf);
        let d = sol.paths.first().map_or(0, |p| p.terminal.len());
        let mut header = vec!["path_id".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for (i, p) in sol.paths.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(p.terminal.iter().map(|v| fmt_f64(*v)));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    let m = &sol.moments;
    let xt2: Vec<f64> = sol
        .paths
        .iter()
        .map(|p| p.terminal.iter().map(|v| v * v).sum())
        .collect();
    let (e_xt2, e_xt2_se) = fitzsolve::linalg::mean_se(&xt2);
    c.metric("dt", max_dt(grid));
    c.metric("paths", m.n_paths as f64);
    c.metric("e_sup_x2", m.e_sup_x2);
    c.metric("e_sup_x2_se", m.e_sup_x2_se);
    c.metric("e_tv_k", m.e_tv_k);
    c.metric("e_tv_k_se", m.e_tv_k_se);
    c.metric("e_xt2", e_xt2);
    c.metric("e_xt2_se", e_xt2_se);
    if m.max_fitz_gap.is_finite() {
        c.metric("max_fitz_gap", m.max_fitz_gap);
        c.verdict(Verdict::at_most("fitz_gap", m.max_fitz_gap, 1e-9));
    }
    Ok(())
}

fn sde_run(p: &Prepared, c: &mut Collected) -> Res<()> {
    let a = &p.config.operator;
    let s = p
        .config
        .sde
        .as_ref()
        .ok_or_else(|| RunError::Config("missing [sde]".into()))?;
    let grid = grid_of(p)?;
    let ens = WienerEnsemble::gaussian(s.noise_dim, grid.clone(), s.paths, p.config.seed)?;
    let sol = solve_sde_additive(a, &s.xi, &s.diffusion, &ens, s.functional)?;
    ensemble_outputs(c, &sol, &grid)?;
    if s.functional {
        let xi: Vec<Vec<f64>> = sol.paths.iter().map(|q| q.xi.clone()).collect();
        let cand = SdeCandidate::from_ensemble(&sol, &s.diffusion)?;
        let sampling = Sampling::cube(
            a.dim,
            p.config.probes.half_width,
            p.config.probes.graph,
            p.config.seed,
        );
        let rep = sde_jhat(a, &xi, &s.diffusion, &ens, &cand, Some(&sampling))?;
        let se = rep.se.unwrap_or(0.0);
        c.metric("jhat", rep.total);
        c.metric("jhat_se", se);
        c.verdict(Verdict::at_most("jhat", rep.total, 3.0 * se + 1e-9));
    }
    Ok(())
}

fn svi_run(p: &Prepared, c: &mut Collected) -> Res<()> {
    let phi = &p.config.operator;
    let s = p
        .config
        .svi
        .as_ref()
        .ok_or_else(|| RunError::Config("missing [svi]".into()))?;
    let grid = grid_of(p)?;
    let coeffs = FieldCoefficients::affine(
        s.drift_matrix.clone(),
        s.drift_offset.clone(),
        s.diffusion.clone(),
        s.noise_dim,
        s.dissipative,
    );
    let ens = WienerEnsemble::gaussian(s.noise_dim, grid.clone(), s.paths, p.config.seed)?;
    let sol = solve_svi(phi, &coeffs, &s.xi, &ens, false)?;
    ensemble_outputs(c, &sol, &grid)?;
    let probes = graph_probes(p, 0)?;
    let mut worst_a2: f64 = 0.0;
    let mut passed = 0usize;
    let n_check = s.verify_paths.min(s.paths);
    for path in 0..n_check {
        let x0 = phi.project_domain(&s.xi.sample(&ens, path)?)?;
        let (x, k) = svi_path(phi, &coeffs, &x0, &grid, &ens.increments(path))?;
        let rep = verify_svi(phi, &x, &k, &probes)?;
        worst_a2 = worst_a2.min(rep.min_a2);
        passed += rep.passed as usize;
    }
    c.metric("verify_min_a2", worst_a2);
    c.verdict(Verdict::at_least(
        "verified_paths",
        passed as f64,
        n_check as f64,
    ));
    Ok(())
}

fn bsde_run(p: &Prepared, c: &mut Collected) -> Res<()> {
    let phi = &p.config.operator;
    let t = p
        .config
        .tree
        .as_ref()
        .ok_or_else(|| RunError::Config("missing [tree]".into()))?;
    let tree = BinomialTree::new(t.depth, t.horizon)?;
    let xi = match (&p.payoff, &t.leaves) {
        (Some(exprs), _) => tree.leaf_values(|w| exprs.iter().map(|e| e.eval(w)).collect()),
        (None, Some(leaves)) => leaves.clone(),
        (None, None) => return Err(RunError::Config("tree needs payoff or leaves".into())),
    };
    let c0 = t.c0.clone().unwrap_or_else(|| vec![0.0; phi.dim]);
    let zero_driver = t.a == 0.0 && t.b == 0.0 && c0.iter().all(|v| *v == 0.0);
    let f = TreeDriver::linear(t.a, t.b, c0);
    let sol = solve_bsvi_tree(phi, &f, &xi, &tree)?;
    c.csv("tree.csv", |b| sol.write_csv(b))?;
    let jb = bsvi_jhat(
        phi,
        &f,
        &tree,
        &xi,
        &BsviCandidate::from_solution(&sol)?,
        &[],
    )?;
    c.metric("dt", tree.dt());
    c.metric("max_gap", sol.max_gap());
    c.metric("node_identity_residual", sol.node_identity_residual(&f));
    c.metric("terminal_defect", sol.terminal_defect);
    c.metric("y0", sol.y.node(0, 0)[0]);
    c.metric("bsvi_jhat", jb.total);
    c.verdict(Verdict::at_most("max_gap", sol.max_gap(), 1e-10));
    c.verdict(Verdict::at_most(
        "node_identity",
        sol.node_identity_residual(&f),
        1e-10,
    ));
    c.verdict(Verdict::at_most("bsvi_jhat", jb.total, 1e-8));
    if zero_driver {
        let exi: f64 = (0..=tree.depth)
            .map(|j| tree.prob(tree.depth, j) * xi[j].iter().map(|v| v * v).sum::<f64>())
            .sum();
        let r = 2.0 * exi + 1.0;
        let jd = bsde_jhat(
            phi,
            &tree,
            &xi,
            r,
            &BsdeCandidate::from_solution(&sol),
            &[],
            None,
        )?;
        c.metric("bsde_jhat", jd.total);
        c.verdict(Verdict::at_most("bsde_jhat", jd.total, 1e-8));
    }
    if t.brute_force {
        let start = random_start(phi, &tree, p.config.seed)?;
        let bf = brute_force_bsvi(phi, &f, &xi, &tree, &start, t.brute_force_iters)?;
        let dist = bf.solution.y.max_dist(&sol.y);
        c.csv("brute_trace.csv", |buf| {
            let mut wr = csv::Writer::from_writer(buf);
            wr.write_record(["eval", "objective"])?;
            for (i, v) in bf.trace.iter().enumerate() {
                wr.write_record([i.to_string(), fmt_f64(*v)])?;
            }
            wr.flush()?;
            Ok(())
        })?;
        c.metric("brute_force_objective", bf.objective);
        c.metric("brute_force_distance", dist);
        c.verdict(Verdict::at_most(
            "brute_force_objective",
            bf.objective,
            1e-6,
        ));
        c.verdict(Verdict::at_most("brute_force_distance", dist, 1e-5));
    }
    Ok(())
}

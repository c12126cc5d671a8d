//! Command implementations. Each command computes everything in memory and
//! returns an [`Outcome`]; nothing touches the output directory until the
//! whole computation has finished.

use std::path::Path;

use mdrate_core::fredholm::{evaluate_rate, FredholmError, RateResult};
use mdrate_core::oracle::{min_rate_terminal, oracle_rate, standard_battery, BatteryCase, SignPattern};
use mdrate_core::paths::{forward_q, kiefer_from_sheet, lln_path, EndpointConstraints};
use mdrate_core::sim::{
    decomposition, lln_check, lln_statistic, seed_permutation_check, simulate, tail_row, ConvolutionRule, ScalingRegime, SimSpec,
};
use mdrate_core::{GridField2D, GridPath, ModelParams, ServiceDist};
use serde_json::{json, Value};

use crate::config::{battery_case, Command, PathConfig, RunConfig};
use crate::csvio;
use crate::error::CliError;
use crate::parallel::{replicate, stream_index};

/// Results of a finished command.
#[derive(Debug)]
pub struct Outcome {
    pub results: Value,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, Vec<u8>)>,
    /// Set when a tolerance check failed.
    pub failure: Option<String>,
}

impl Outcome {
    fn new(results: Value) -> Self {
        Self { results, files: Vec::new(), failure: None }
    }

    fn fail(&mut self, message: String) {
        match &mut self.failure {
            Some(m) => {
                m.push_str("; ");
                m.push_str(&message);
            }
            None => self.failure = Some(message),
        }
    }

    fn add_file(&mut self, name: impl Into<String>, write: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }
}

pub fn execute(cfg: &RunConfig, base: &Path) -> Result<Outcome, CliError> {
    match cfg.command {
        Command::Rate => rate(cfg, base, false),
        Command::Controls => rate(cfg, base, true),
        Command::OracleCheck => oracle_check(cfg, base),
        Command::Simulate => simulate_ladder(cfg),
        Command::IdentityCheck => identity_check(cfg),
        Command::KieferCheck => kiefer_check(cfg),
        Command::DistInfo => dist_info(cfg),
    }
}

fn params(cfg: &RunConfig, d: &ServiceDist, beta: f64, q0: f64) -> Result<ModelParams, CliError> {
    ModelParams::new(d.mean_rate(), cfg.model.sigma, beta, q0).map_err(|e| CliError::Config(format!("model: {e}")))
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn fredholm_error(e: FredholmError) -> CliError {
    match e {
        FredholmError::InitialValue { .. } => CliError::Config(format!("path: {e}")),
        other => numerical(other),
    }
}

/// The configured path together with the parameters it belongs to.
fn build_path(cfg: &RunConfig, base: &Path, d: &ServiceDist) -> Result<(GridPath, ModelParams, String), CliError> {
    let grid = &cfg.grid;
    let grid_err = |e: mdrate_core::GridError| CliError::Config(format!("grid: {e}"));
    match &cfg.path {
        PathConfig::Zero => {
            Ok((GridPath::zeros(grid.horizon, grid.steps).map_err(grid_err)?, params(cfg, d, cfg.model.beta, cfg.model.q0)?, "zero".into()))
        }
        PathConfig::Lln => {
            let pm = params(cfg, d, cfg.model.beta, cfg.model.q0)?;
            let q = lln_path(&pm, d, grid.horizon, grid.steps, &cfg.tolerances.renewal()).map_err(numerical)?;
            Ok((q, pm, "lln".into()))
        }
        PathConfig::Polynomial { coefficients } => {
            let q = GridPath::from_fn(grid.horizon, grid.steps, |t| coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c))
                .map_err(grid_err)?;
            Ok((q, params(cfg, d, cfg.model.beta, cfg.model.q0)?, "polynomial".into()))
        }
        PathConfig::Battery { case } => {
            let c = battery_case(case)?;
            Ok((c.grid_path(grid.steps), params(cfg, d, c.beta, c.q0)?, format!("battery:{}", c.name)))
        }
        PathConfig::Csv { file } => {
            let f = std::fs::File::open(base.join(file)).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
            Ok((csvio::read_path(f)?, params(cfg, d, cfg.model.beta, cfg.model.q0)?, format!("csv:{}", file.display())))
        }
    }
}

fn rate_summary(r: &RateResult, pm: &ModelParams) -> Value {
    json!({
        "rate": r.rate,
        "dual_value": r.dual,
        "saddle_gap": (r.rate - r.dual).abs(),
        "primal_energy": r.primal_energy,
        "projected_energy": r.projected_energy,
        "duality_gap": r.duality_gap,
        "bridge_endpoint": r.controls.bridge_endpoint(),
        "kiefer_endpoint": r.controls.kiefer_endpoint(),
        "fredholm_residual": r.residual,
        "solver": format!("{:?}", r.method).to_lowercase(),
        "picard_iterations": r.picard_iterations,
        "truncation_horizon": r.horizon,
        "tail_mass": r.tail_mass,
        "truncation_flagged": r.truncation_flagged,
        "adjoint_at_horizon": r.adjoint.values()[r.steps],
        "steps": r.steps,
        "params": {"mu": pm.mu, "sigma": pm.sigma, "beta": pm.beta, "q0": pm.q0},
    })
}

fn rate(cfg: &RunConfig, base: &Path, with_controls: bool) -> Result<Outcome, CliError> {
    let d = cfg.service.build()?;
    let (q, pm, label) = build_path(cfg, base, &d)?;
    let opts = cfg.tolerances.rate();
    let r = evaluate_rate(&q, &pm, &d, &opts).map_err(fredholm_error)?;
    let mut summary = rate_summary(&r, &pm);
    summary["path"] = json!(label);
    let mut out = Outcome::new(Value::Null);
    if (r.rate - r.dual).abs() > 1e-6 * (1.0 + r.rate) {
        out.fail(format!("rate {} and dual value {} disagree", r.rate, r.dual));
    }
    out.add_file("q.csv", |b| csvio::write_path(b, &q))?;
    out.add_file("forcing.csv", |b| csvio::write_path(b, &r.forcing))?;
    out.add_file("adjoint.csv", |b| csvio::write_path(b, &r.adjoint))?;
    if with_controls {
        let back = forward_q(&r.controls, &pm, &d, &opts.renewal).map_err(numerical)?;
        let scale = q.sup_norm().max(f64::MIN_POSITIVE);
        let round_trip = back.sup_distance(&q).map_err(numerical)? / scale;
        summary["round_trip_error"] = json!(round_trip);
        summary["recovered_x_steps"] = json!(r.controls.w0_dot.steps());
        if round_trip > cfg.tolerances.round_trip {
            out.fail(format!("round trip error {round_trip:e} exceeds {:e}", cfg.tolerances.round_trip));
        }
        let c = &r.controls;
        out.add_file("w0_dot.csv", |b| csvio::write_table(b, &["x", "value"], &rows_of(&c.w0_dot)))?;
        out.add_file("w_dot.csv", |b| csvio::write_path(b, &c.w_dot))?;
        out.add_file("k_dot.csv", |b| csvio::write_field(b, &c.k_dot, "tau"))?;
        out.add_file("q_round_trip.csv", |b| csvio::write_path(b, &back))?;
    }
    out.results = summary;
    Ok(out)
}

fn rows_of(p: &GridPath) -> Vec<Vec<String>> {
    p.times().zip(p.values()).map(|(t, v)| vec![t.to_string(), v.to_string()]).collect()
}

fn oracle_check(cfg: &RunConfig, base: &Path) -> Result<Outcome, CliError> {
    let d = cfg.service.build()?;
    let cases: Vec<(String, GridPath, ModelParams)> = if cfg.oracle.battery {
        if d.mean_rate() != 1.0 || cfg.model.sigma != 1.0 {
            return Err(CliError::Config("the standard battery uses exponential(1) service and sigma = 1".into()));
        }
        standard_battery()
            .into_iter()
            .map(|c: BatteryCase| Ok((c.name.to_string(), c.grid_path(cfg.grid.steps), params(cfg, &d, c.beta, c.q0)?)))
            .collect::<Result<_, CliError>>()?
    } else {
        let (q, pm, label) = build_path(cfg, base, &d)?;
        vec![(label, q, pm)]
    };
    let m = cfg.grid.x_steps;
    let tol = cfg.tolerances.oracle_relative_gap;
    let mut out = Outcome::new(Value::Null);
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (name, q, pm) in &cases {
        let fred = evaluate_rate(q, pm, &d, &cfg.tolerances.rate()).map_err(fredholm_error)?;
        let off = oracle_rate(q, pm, &d, m, EndpointConstraints::default()).map_err(numerical)?;
        let on = oracle_rate(q, pm, &d, m, EndpointConstraints { bridge: true, kiefer: true }).map_err(numerical)?;
        let diff = (off.value - fred.rate).abs();
        let rel_gap = diff / (1.0 + fred.rate);
        let rel_gap_strict = if fred.rate > 0.0 { diff / fred.rate } else { f64::NAN };
        if rel_gap > tol {
            out.fail(format!("{name}: relative gap {rel_gap:e} exceeds {tol:e}"));
        }
        reports.push(json!({
            "case": name,
            "value": off.value,
            "flagsOff": off.value,
            "flagsOn": on.value,
            "fredholmValue": fred.rate,
            "relGap": rel_gap,
            "relGapStrict": rel_gap_strict,
            "regularized": off.regularized || on.regularized,
            "N": q.steps(),
            "M": m,
        }));
        rows.push(vec![
            name.clone(),
            fred.rate.to_string(),
            off.value.to_string(),
            on.value.to_string(),
            rel_gap.to_string(),
            rel_gap_strict.to_string(),
        ]);
    }
    out.add_file("oracle.csv", |b| {
        csvio::write_table(b, &["case", "fredholm", "flags_off", "flags_on", "rel_gap", "rel_gap_strict"], &rows)
    })?;
    out.results = json!({"cases": reports, "tolerance": tol});
    Ok(out)
}

fn regime(cfg: &RunConfig, n: u64) -> Result<ScalingRegime, CliError> {
    ScalingRegime::new(n, cfg.simulation.b_rule.build()).map_err(|e| CliError::Config(format!("simulation: {e}")))
}

fn simulate_ladder(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let d = cfg.service.build()?;
    let pm = params(cfg, &d, cfg.model.beta, cfg.model.q0)?;
    let sim = &cfg.simulation;
    let event = sim.event.map(|e| e.build());
    let horizon = event.map_or(sim.horizon, |e| sim.horizon.max(e.time()));
    let arrivals = sim.interarrival.build();
    let alt_seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut out = Outcome::new(Value::Null);
    let mut levels = Vec::new();
    let mut samples = Vec::new();
    let mut tail_rows = Vec::new();
    let mut warnings = Vec::new();
    let implied = arrivals.implied_sigma(pm.mu);
    if (implied - pm.sigma).abs() > 1e-9 {
        warnings.push(format!("interarrival law implies sigma = {implied}, model uses {}", pm.sigma));
    }
    for (level, &n) in sim.ladder.iter().enumerate() {
        let sr = regime(cfg, n)?;
        let rho = sr.rho(pm.beta);
        if !sr.rule.condition_holds() {
            warnings.push(format!("n = {n}: the b rule does not send the condition value to zero"));
        }
        if rho >= 1.0 + 1e-12 {
            warnings.push(format!("n = {n}: rho = {rho} is above one"));
        }
        let spec = SimSpec { params: pm, regime: sr, interarrival: arrivals, horizon };
        let run = |seed: u64| {
            replicate(sim.replications, |rep| {
                simulate(&spec, &d, seed, stream_index(level, rep)).map(|t| {
                    let stat = lln_statistic(&t, sim.horizon);
                    let hit = event.is_some_and(|e| e.occurred(&t));
                    let trace_csv = (rep == 0 && sim.export_traces).then(|| {
                        let mut b = Vec::new();
                        csvio::write_trace(&mut b, &t).map(|_| b)
                    });
                    (stat, hit, trace_csv)
                })
            })
        };
        let primary = run(cfg.seed).into_iter().collect::<Result<Vec<_>, _>>().map_err(|e| CliError::Config(format!("simulation: {e}")))?;
        let secondary: Vec<f64> = run(alt_seed)
            .into_iter()
            .map(|r| r.map(|(s, _, _)| s))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("simulation: {e}")))?;
        let stats: Vec<f64> = primary.iter().map(|(s, _, _)| *s).collect();
        let perm = seed_permutation_check(&stats, &secondary);
        let hits = primary.iter().filter(|(_, h, _)| *h).count() as u64;
        if let Some(Some(csv)) = primary.into_iter().next().map(|(_, _, c)| c) {
            let bytes = csv?;
            out.files.push((format!("trace_n{n}.csv"), bytes));
        }
        levels.push(json!({
            "n": n,
            "b": sr.b(),
            "rho": rho,
            "arrival_rate": sr.arrival_rate(pm.mu, pm.beta).map_err(|e| CliError::Config(e.to_string()))?,
            "initial_count": sr.initial_count(pm.q0),
            "condition_value": sr.condition_value(),
            "condition_holds_asymptotically": sr.rule.condition_holds(),
            "seed_permutation_ks": perm.statistic,
            "seed_permutation_p_value": perm.p_value,
        }));
        if event.is_some() {
            tail_rows.push(tail_row(n, sr.b(), hits, sim.replications));
        }
        samples.push((n, stats));
    }
    let lln = lln_check(sim.horizon, &samples);
    let lln_rows: Vec<Vec<String>> = lln
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.replications.to_string(),
                r.mean.to_string(),
                r.median.to_string(),
                r.q99.to_string(),
                r.max.to_string(),
            ]
        })
        .collect();
    out.add_file("lln.csv", |b| csvio::write_table(b, &["n", "replications", "mean", "median", "q99", "max"], &lln_rows))?;
    let mut results = json!({
        "ladder": levels,
        "lln": {
            "horizon": lln.horizon,
            "q99_decreasing": lln.q99_decreasing,
            "rows": lln.rows.iter().map(|r| json!({"n": r.n, "mean": r.mean, "median": r.median, "q99": r.q99, "max": r.max})).collect::<Vec<_>>(),
        },
        "replications": sim.replications,
        "warnings": warnings,
    });
    if let Some(ev) = event {
        let comparison = if ev.level().is_finite() {
            let steps = cfg.grid.steps;
            let pattern = SignPattern::all(ev.level() > 0.0, steps);
            min_rate_terminal(ev.level(), ev.time(), &pm, &d, steps, cfg.grid.x_steps, &pattern, 50).ok()
        } else {
            None
        };
        let comp_value = comparison.as_ref().map(|c| c.value);
        let rows: Vec<Vec<String>> = tail_rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.b.to_string(),
                    r.hits.to_string(),
                    r.replications.to_string(),
                    r.p_hat.to_string(),
                    r.wilson_low.to_string(),
                    r.wilson_high.to_string(),
                    r.slope.map_or(String::new(), |s| s.to_string()),
                    comp_value.map_or(String::new(), |v| v.to_string()),
                ]
            })
            .collect();
        out.add_file("tail.csv", |b| {
            csvio::write_table(
                b,
                &["n", "b", "hits", "replications", "p_hat", "wilson_low", "wilson_high", "slope", "terminal_rate"],
                &rows,
            )
        })?;
        results["tail"] = json!({
            "event": match ev {
                mdrate_core::sim::TailEvent::SupAbove { .. } => "sup",
                mdrate_core::sim::TailEvent::TerminalAbove { .. } => "terminal",
            },
            "t": ev.time(),
            "a": if ev.level().is_finite() { json!(ev.level()) } else { Value::Null },
            "rows": tail_rows.iter().map(|r| json!({
                "n": r.n, "b": r.b, "hits": r.hits, "p_hat": r.p_hat,
                "wilson": [r.wilson_low, r.wilson_high], "slope": r.slope, "censored": r.censored(),
            })).collect::<Vec<_>>(),
            "terminal_rate": comparison.as_ref().map(|c| json!({"value": c.value, "pattern_stable": c.stable, "iterations": c.iterations})),
            "note": "trend diagnostic only; no threshold ties these estimates to the rate function",
        });
    }
    out.results = results;
    Ok(out)
}

fn identity_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let d = cfg.service.build()?;
    let pm = params(cfg, &d, cfg.model.beta, cfg.model.q0)?;
    let sim = &cfg.simulation;
    let steps = sim.decomposition_steps;
    let arrivals = sim.interarrival.build();
    let mut out = Outcome::new(Value::Null);
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let mut worst_flow = 0u64;
    let mut worst_exact = 0.0_f64;
    let mut bound_violations = 0usize;
    let mut first_report = None;
    for (level, &n) in sim.ladder.iter().enumerate() {
        let spec = SimSpec { params: pm, regime: regime(cfg, n)?, interarrival: arrivals, horizon: sim.horizon };
        let results = replicate(sim.replications, |rep| -> Result<_, String> {
            let t = simulate(&spec, &d, cfg.seed, stream_index(level, rep)).map_err(|e| e.to_string())?;
            let exact = decomposition(&t, &d, steps, ConvolutionRule::Exact).map_err(|e| e.to_string())?;
            let coarse = decomposition(&t, &d, steps, ConvolutionRule::Grid).map_err(|e| e.to_string())?;
            let fine = decomposition(&t, &d, 2 * steps, ConvolutionRule::Grid).map_err(|e| e.to_string())?;
            Ok((t.flow_balance_defect(), exact.sup_residual, coarse, fine.sup_residual))
        });
        for (rep, r) in results.into_iter().enumerate() {
            let (flow, exact, coarse, fine) = r.map_err(|e| CliError::Config(format!("simulation: {e}")))?;
            worst_flow = worst_flow.max(flow);
            worst_exact = worst_exact.max(exact);
            if coarse.sup_residual > coarse.residual_bound {
                bound_violations += 1;
            }
            if coarse.sup_residual > 0.0 {
                ratios.push(fine / coarse.sup_residual);
            }
            rows.push(vec![
                n.to_string(),
                rep.to_string(),
                flow.to_string(),
                exact.to_string(),
                coarse.sup_residual.to_string(),
                fine.to_string(),
                coarse.residual_bound.to_string(),
            ]);
            if first_report.is_none() {
                first_report = Some(coarse);
            }
        }
    }
    let mean_ratio = if ratios.is_empty() { f64::NAN } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
    if worst_flow != 0 {
        out.fail(format!("flow balance violated by {worst_flow}"));
    }
    if worst_exact > 1e-8 {
        out.fail(format!("exact decomposition residual {worst_exact:e} exceeds 1e-8"));
    }
    if bound_violations > 0 {
        out.fail(format!("{bound_violations} traces exceed the quadrature error bound"));
    }
    if mean_ratio.is_nan() || mean_ratio > 0.6 {
        out.fail(format!("residual ratio under grid halving is {mean_ratio}, expected at most 0.6"));
    }
    out.add_file("identity.csv", |b| {
        csvio::write_table(b, &["n", "replication", "flow_defect", "exact_residual", "grid_residual", "grid_residual_fine", "bound"], &rows)
    })?;
    if let Some(r) = &first_report {
        let cols: Vec<Vec<String>> = (0..=r.x.steps())
            .map(|i| {
                let v = |p: &GridPath| p.values()[i].to_string();
                vec![
                    r.x.time(i).to_string(),
                    v(&r.x),
                    v(&r.y),
                    v(&r.x0),
                    v(&r.h),
                    v(&r.conv_x_plus),
                    v(&r.theta),
                    v(&r.j),
                    v(&r.m),
                    v(&r.residual),
                ]
            })
            .collect();
        out.add_file("decomposition.csv", |b| {
            csvio::write_table(b, &["t", "x", "y", "x0", "h", "conv_x_plus", "theta", "j", "m", "residual"], &cols)
        })?;
    }
    out.results = json!({
        "traces": rows.len(),
        "steps": steps,
        "max_flow_defect": worst_flow,
        "max_exact_residual": worst_exact,
        "bound_violations": bound_violations,
        "mean_halving_ratio": mean_ratio,
    });
    Ok(out)
}

fn kiefer_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let k = &cfg.kiefer;
    let sheet = GridField2D::from_fn(k.x_steps, 1.0, k.t_steps, |_, _| k.level).map_err(numerical)?;
    let tr = kiefer_from_sheet(&sheet);
    let eb = tr.sheet_energy();
    let ek = tr.energy();
    let energy_error = (ek - eb).abs() / eb;
    let spot = if k.x_steps.is_multiple_of(2) {
        tr.k().get(k.x_steps / 2, k.t_steps)
    } else {
        let a = k.x_steps / 2;
        0.5 * (tr.k().get(a, k.t_steps) + tr.k().get(a + 1, k.t_steps))
    };
    let spot_exact = k.level * 0.5 * std::f64::consts::LN_2;
    let spot_error = (spot - spot_exact).abs();
    let mut out = Outcome::new(json!({
        "x_steps": k.x_steps,
        "t_steps": k.t_steps,
        "level": k.level,
        "sheet_energy": eb,
        "kiefer_energy": ek,
        "energy_relative_error": energy_error,
        "k_half_one": spot,
        "k_half_one_exact": spot_exact,
        "spot_error": spot_error,
    }));
    if energy_error > cfg.tolerances.kiefer_energy {
        out.fail(format!("energy identity error {energy_error:e}"));
    }
    if spot_error > cfg.tolerances.kiefer_spot {
        out.fail(format!("k(0.5, 1) error {spot_error:e}"));
    }
    out.add_file("kiefer.csv", |b| csvio::write_field(b, tr.k(), "t"))?;
    Ok(out)
}

fn dist_info(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let d = cfg.service.build()?;
    let g = &cfg.grid;
    let rows: Vec<Vec<String>> = (0..=g.steps)
        .map(|i| {
            let t = g.horizon * i as f64 / g.steps as f64;
            vec![t.to_string(), d.cdf_at(t).to_string(), d.pdf_at(t).to_string(), d.eq_cdf_at(t).to_string(), d.eq_pdf_at(t).to_string()]
        })
        .collect();
    let median = d.quantile(0.5).map_err(numerical)?;
    let mut out = Outcome::new(json!({
        "mean": d.mean(),
        "mean_rate": d.mean_rate(),
        "scv": d.scv(),
        "pdf_sup": d.pdf_sup(),
        "median": median,
        "eq_median": d.eq_quantile(0.5).map_err(numerical)?,
        "survival_at_horizon": d.survival_at(g.horizon),
    }));
    out.add_file("dist.csv", |b| csvio::write_table(b, &["t", "cdf", "pdf", "eq_cdf", "eq_pdf"], &rows))?;
    Ok(out)
}

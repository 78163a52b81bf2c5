use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use stackmarket::centralized::{
    bound_tightening, write_round_log_csv, CentralSolution, CentralizedError, TighteningConfig,
};
use stackmarket::distributed::{
    best_response_dynamics, user_best_response, verify_equilibrium, write_trace_csv, DistributedError, DynamicsConfig,
    EquilibriumReport, EquilibriumResult, PriceVector,
};
use stackmarket::model::{generate_scenario, Scenario, ScenarioRanges};
use stackmarket::oracle::{
    best_response_sweep, deviation_scan, enumerate_centralized, OracleReport, MAX_ENUM_MSPS, MAX_ENUM_USERS,
};

use crate::output::{write_atomic, write_csv, write_json};
use crate::{Cli, Command, RunOptions, SweepAxis, EXIT_NOT_CONVERGED};

/// Tolerance of the equilibrium checks reported by `distributed`.
const EQUILIBRIUM_TOL: f64 = 1e-3;
const ORACLE_DRAWS: usize = 10_000;
const ORACLE_RESOLUTION: f64 = 1e-4;
const DEVIATION_GRID: usize = 1000;
const ENUM_RESOLUTION: f64 = 1e-3;
/// Allowed distance between bound tightening and the enumeration oracle.
const ENUM_TOL: f64 = 5e-2;

pub fn run(cli: &Cli) -> Result<u8> {
    let o = &cli.opts;
    validate(cli)?;
    std::fs::create_dir_all(&o.out).with_context(|| format!("creating {}", o.out.display()))?;
    match cli.command {
        Command::Gen => cmd_gen(o),
        Command::Distributed => cmd_distributed(o),
        Command::Centralized => cmd_centralized(o),
        Command::Compare => cmd_compare(o),
        Command::Sweep => cmd_sweep(o),
        Command::OracleCheck => cmd_oracle_check(o),
    }
}

fn validate(cli: &Cli) -> Result<()> {
    let o = &cli.opts;
    if o.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    if o.users == 0 || o.msps == 0 {
        bail!("--users and --msps must be positive");
    }
    if cli.command == Command::Sweep {
        if o.sweep_axis.is_none() {
            bail!("sweep needs --sweep-axis");
        }
        if o.sweep_values.is_empty() {
            bail!("sweep needs --sweep-values");
        }
    }
    if o.sweep_values.windows(2).any(|w| !(w[0] <= w[1])) {
        bail!("--sweep-values must be sorted ascending");
    }
    Ok(())
}

fn out(o: &RunOptions, name: &str) -> PathBuf {
    o.out.join(name)
}

fn generate(o: &RunOptions) -> Result<Scenario> {
    let mut ranges = ScenarioRanges::default();
    if let Some(p) = o.pmax {
        ranges.p_max = p;
    }
    if let Some(c) = o.capacity {
        ranges.capacities = vec![Some(c)];
    }
    Ok(generate_scenario(o.users, o.msps, o.seed, &ranges)?)
}

/// The scenario file, or a generated one, with command-line overrides.
fn load_scenario(o: &RunOptions) -> Result<Scenario> {
    let Some(path) = &o.scenario else {
        return generate(o);
    };
    let mut sc = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(c) = o.capacity {
        sc = sc.with_uniform_capacity(Some(c));
    }
    if let Some(p) = o.pmax {
        sc.msps.iter_mut().for_each(|m| m.p_max = p);
        sc.validate()?;
    }
    Ok(sc)
}

fn dynamics_config(o: &RunOptions) -> DynamicsConfig {
    DynamicsConfig { step_dp: o.dp, learning_rate: o.mu, convergence_tol: o.tol, ..Default::default() }
}

fn tightening_config(o: &RunOptions) -> TighteningConfig {
    TighteningConfig { beta: o.beta, epsilon: o.epsilon, gap_tol: o.gap, ..Default::default() }
}

fn cmd_gen(o: &RunOptions) -> Result<u8> {
    let sc = generate(o)?;
    let path = out(o, "scenario.json");
    let mut text = sc.to_json()?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    println!("wrote {} ({} users, {} providers)", path.display(), sc.n_users(), sc.n_msps());
    Ok(0)
}

/// Runs the dynamics from `p_max / 2`; the flag is false when it stopped
/// without converging.
fn run_distributed(sc: &Scenario, o: &RunOptions) -> Result<(EquilibriumResult, bool)> {
    let config = dynamics_config(o);
    let init = PriceVector::new(sc.msps.iter().map(|m| m.p_max / 2.0).collect(), config.price_floor)?;
    match best_response_dynamics(sc, &config, &init) {
        Ok(r) => Ok((r, true)),
        Err(DistributedError::NotConverged(r)) => Ok((*r, false)),
        Err(e) => Err(e.into()),
    }
}

/// Bound tightening; on a round limit the incumbent is returned with the
/// flag cleared.
fn run_centralized(sc: &Scenario, config: &TighteningConfig) -> Result<(CentralSolution, bool)> {
    match bound_tightening(sc, config) {
        Ok(s) => Ok((s, true)),
        Err(CentralizedError::RoundLimit { incumbent, .. }) => Ok((*incumbent, false)),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct DistributedSummary<'a> {
    prices: &'a [f64],
    sales: &'a [Vec<f64>],
    probabilities: &'a [Vec<f64>],
    revenues: &'a [f64],
    utilities: &'a [f64],
    total_revenue: f64,
    converged: bool,
    iterations: usize,
    verification: EquilibriumReport,
}

fn distributed_summary<'a>(r: &'a EquilibriumResult, sc: &Scenario) -> DistributedSummary<'a> {
    DistributedSummary {
        prices: &r.prices,
        sales: &r.sales,
        probabilities: &r.probabilities,
        revenues: &r.revenues,
        utilities: &r.utilities,
        total_revenue: r.total_revenue(),
        converged: r.converged,
        iterations: r.iterations,
        verification: verify_equilibrium(r, sc, EQUILIBRIUM_TOL),
    }
}

fn write_distributed(o: &RunOptions, sc: &Scenario, r: &EquilibriumResult) -> Result<()> {
    write_csv(&out(o, "distributed_trace.csv"), |buf| write_trace_csv(r, sc, buf))?;
    write_json(&out(o, "distributed.json"), &distributed_summary(r, sc))
}

fn write_centralized(o: &RunOptions, s: &CentralSolution) -> Result<()> {
    write_csv(&out(o, "rounds.csv"), |buf| write_round_log_csv(s, buf))?;
    write_json(&out(o, "centralized.json"), s)
}

fn fmt_prices(p: &[f64]) -> String {
    p.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
}

fn cmd_distributed(o: &RunOptions) -> Result<u8> {
    let sc = load_scenario(o)?;
    let (r, converged) = run_distributed(&sc, o)?;
    write_distributed(o, &sc, &r)?;
    println!(
        "distributed: prices [{}], total revenue {:.6}, {} iterations{}",
        fmt_prices(&r.prices),
        r.total_revenue(),
        r.iterations,
        if converged { "" } else { ", NOT converged" }
    );
    Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_centralized(o: &RunOptions) -> Result<u8> {
    let sc = load_scenario(o)?;
    let (s, converged) = run_centralized(&sc, &tightening_config(o))?;
    write_centralized(o, &s)?;
    println!(
        "centralized: prices [{}], objective {:.6}, total revenue {:.6}, gap {:.3e}, {} rounds{}",
        fmt_prices(&s.prices),
        s.objective,
        s.total_revenue(),
        s.gap,
        s.rounds,
        if converged { "" } else { ", NOT converged" }
    );
    Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
}

/// One row per (scheme, user, provider) pair.
fn write_decisions(path: &Path, r: &EquilibriumResult, s: &CentralSolution) -> Result<()> {
    write_csv(path, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["scheme", "user", "msp", "price", "sales", "share"])?;
        for (i, row) in r.sales.iter().enumerate() {
            for (j, sales) in row.iter().enumerate() {
                let share = r.probabilities[i][j];
                w.write_record([
                    "distributed",
                    &i.to_string(),
                    &j.to_string(),
                    &r.prices[j].to_string(),
                    &sales.to_string(),
                    &share.to_string(),
                ])?;
            }
        }
        for (i, row) in s.sales.iter().enumerate() {
            for (j, sales) in row.iter().enumerate() {
                let share = s.association[i][j];
                w.write_record([
                    "centralized",
                    &i.to_string(),
                    &j.to_string(),
                    &s.prices[j].to_string(),
                    &sales.to_string(),
                    &share.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

fn cmd_compare(o: &RunOptions) -> Result<u8> {
    let sc = load_scenario(o)?;
    let (r, d_ok) = run_distributed(&sc, o)?;
    write_distributed(o, &sc, &r)?;
    let (s, c_ok) = run_centralized(&sc, &tightening_config(o))?;
    write_centralized(o, &s)?;
    write_decisions(&out(o, "decisions.csv"), &r, &s)?;
    let report = json!({
        "distributed_total": r.total_revenue(),
        "distributed_revenues": r.revenues,
        "distributed_prices": r.prices,
        "distributed_converged": d_ok,
        "centralized_total": s.total_revenue(),
        "centralized_revenues": s.msp_revenues(),
        "centralized_objective": s.objective,
        "centralized_prices": s.prices,
        "centralized_gap": s.gap,
        "centralized_rounds": s.rounds,
        "centralized_converged": c_ok,
    });
    write_json(&out(o, "compare.json"), &report)?;
    println!("distributed total {:.6} at [{}]", r.total_revenue(), fmt_prices(&r.prices));
    println!("centralized total {:.6} at [{}]", s.total_revenue(), fmt_prices(&s.prices));
    Ok(if d_ok && c_ok { 0 } else { EXIT_NOT_CONVERGED })
}

/// Outcome of one centralized sweep point.
#[derive(Debug, Clone, Serialize)]
struct CentralPoint {
    value: f64,
    objective: f64,
    total: f64,
    gap: f64,
    rounds: usize,
    termination: String,
    prices: Vec<f64>,
}

fn central_point(value: f64, sc: &Scenario, config: &TighteningConfig) -> Result<(CentralPoint, bool)> {
    let (s, ok) = run_centralized(sc, config)?;
    let termination = if ok { format!("{:?}", s.termination) } else { "RoundLimit".to_string() };
    let point = CentralPoint {
        value,
        objective: s.objective,
        total: s.total_revenue(),
        gap: s.gap,
        rounds: s.rounds,
        termination,
        prices: s.prices.clone(),
    };
    Ok((point, ok))
}

/// Solves every sweep point on a pool of `jobs` threads; each point's result
/// is also written to its own file as soon as it is known.
fn central_sweep<F>(o: &RunOptions, axis: &str, make: F) -> Result<(Vec<CentralPoint>, bool)>
where
    F: Fn(f64) -> Result<Scenario> + Sync,
{
    let config = tightening_config(o);
    let dir = o.out.join("points");
    std::fs::create_dir_all(&dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(o.jobs).build()?;
    let results: Vec<Result<(CentralPoint, bool)>> = pool.install(|| {
        o.sweep_values
            .par_iter()
            .enumerate()
            .map(|(k, &v)| {
                let sc = make(v)?;
                let (point, ok) = central_point(v, &sc, &config)?;
                log::info!("{axis} = {v}: objective {} ({})", point.objective, point.termination);
                write_json(&dir.join(format!("{axis}_{k}.json")), &point)?;
                Ok((point, ok))
            })
            .collect()
    });
    let mut points = Vec::with_capacity(results.len());
    let mut all_ok = true;
    for r in results {
        let (p, ok) = r?;
        all_ok &= ok;
        points.push(p);
    }
    Ok((points, all_ok))
}

fn write_points_csv(path: &Path, axis: &str, points: &[CentralPoint], extra: Option<(&str, f64)>) -> Result<()> {
    let nj = points.first().map_or(0, |p| p.prices.len());
    write_csv(path, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header: Vec<String> = [
            axis,
            "centralized_objective",
            "centralized_total",
            "centralized_gap",
            "centralized_rounds",
            "termination",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..nj).map(|j| format!("price_{j}")));
        if let Some((name, _)) = extra {
            header.push(name.to_string());
        }
        w.write_record(&header)?;
        for p in points {
            let mut row = vec![
                p.value.to_string(),
                p.objective.to_string(),
                p.total.to_string(),
                p.gap.to_string(),
                p.rounds.to_string(),
                p.termination.clone(),
            ];
            row.extend(p.prices.iter().map(|v| v.to_string()));
            if let Some((_, v)) = extra {
                row.push(v.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn cmd_sweep(o: &RunOptions) -> Result<u8> {
    let sc = load_scenario(o)?;
    let axis = o.sweep_axis.expect("validated");
    let (path, ok) = match axis {
        SweepAxis::Capacity => {
            let (r, d_ok) = run_distributed(&sc, o)?;
            let (points, c_ok) = central_sweep(o, "capacity", |c| Ok(sc.with_uniform_capacity(Some(c))))?;
            let path = out(o, "sweep_capacity.csv");
            write_points_csv(&path, "capacity", &points, Some(("distributed_total", r.total_revenue())))?;
            (path, d_ok && c_ok)
        }
        SweepAxis::AlphaMean => {
            let mean = sc.users.iter().map(|u| u.alpha).sum::<f64>() / sc.n_users() as f64;
            let (points, ok) = central_sweep(o, "alpha_mean", |v| {
                if !(v > 0.0) {
                    bail!("alpha mean must be positive, got {v}");
                }
                let mut s = sc.clone();
                s.users.iter_mut().for_each(|u| u.alpha *= v / mean);
                s.validate()?;
                Ok(s)
            })?;
            let path = out(o, "sweep_alpha_mean.csv");
            write_points_csv(&path, "alpha_mean", &points, None)?;
            (path, ok)
        }
        SweepAxis::Quality => {
            let (points, ok) = central_sweep(o, "quality", |v| {
                let mut s = sc.clone();
                s.msps[0].quality = v;
                s.validate()?;
                Ok(s)
            })?;
            let path = out(o, "sweep_quality.csv");
            write_points_csv(&path, "quality", &points, None)?;
            (path, ok)
        }
        SweepAxis::Price => {
            let path = out(o, "sweep_price.csv");
            write_csv(&path, |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["price", "user", "alpha", "s_max", "sales"])?;
                for &p in &o.sweep_values {
                    for (i, u) in sc.users.iter().enumerate() {
                        let s = user_best_response(u, p);
                        w.write_record([
                            p.to_string(),
                            i.to_string(),
                            u.alpha.to_string(),
                            u.s_max.to_string(),
                            s.to_string(),
                        ])?;
                    }
                }
                w.flush()?;
                Ok(())
            })?;
            (path, true)
        }
    };
    println!("wrote {}", path.display());
    Ok(if ok { 0 } else { EXIT_NOT_CONVERGED })
}

#[derive(Serialize)]
struct Check {
    report: OracleReport,
    tolerance: f64,
    passed: bool,
}

fn check(report: OracleReport, tolerance: f64) -> Check {
    let passed = report.max_abs_error <= tolerance;
    println!(
        "{:<28} {} (max error {:.3e}, tolerance {:.0e}, {} cases)",
        report.target,
        if passed { "PASS" } else { "FAIL" },
        report.max_abs_error,
        tolerance,
        report.cases
    );
    Check { report, tolerance, passed }
}

fn cmd_oracle_check(o: &RunOptions) -> Result<u8> {
    let sc = load_scenario(o)?;
    let mut checks = vec![check(best_response_sweep(ORACLE_DRAWS, o.seed, ORACLE_RESOLUTION)?, ORACLE_RESOLUTION)];

    let (r, d_ok) = run_distributed(&sc, o)?;
    let prices = PriceVector::new(r.prices.clone(), r.price_floor)?;
    checks.push(check(deviation_scan(&prices, &sc, DEVIATION_GRID)?, EQUILIBRIUM_TOL));

    if sc.n_users() <= MAX_ENUM_USERS && sc.n_msps() <= MAX_ENUM_MSPS {
        let truth = enumerate_centralized(&sc, ENUM_RESOLUTION)?;
        let (s, _) = run_centralized(&sc, &tightening_config(o))?;
        let mut report = OracleReport::new("enumerate_centralized");
        report.record(
            (s.objective - truth).abs(),
            truth,
            || json!({ "bound_tightening": s.objective, "enumeration": truth, "prices": s.prices }),
        );
        checks.push(check(report, ENUM_TOL));
    } else {
        println!("enumerate_centralized        skipped ({}x{} is too large)", sc.n_users(), sc.n_msps());
    }

    for c in &checks {
        write_json(&out(o, &format!("oracle_{}.json", c.report.target)), &c.report)?;
    }
    write_json(&out(o, "oracle_check.json"), &checks)?;
    if !d_ok {
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackmarket::centralized::{bound_tightening, CentralSolution, TighteningConfig};
use stackmarket::distributed::{
    best_response_dynamics, standard_function, standard_response, user_best_response, DynamicsConfig,
    EquilibriumResult, PriceVector, DEFAULT_PRICE_FLOOR,
};
use stackmarket::milp::{solve_milp, MilpProblem, Relation, SolveStatus};
use stackmarket::model::{generate_scenario, MspProfile, Scenario, ScenarioRanges, UserProfile};
use stackmarket::oracle::{best_response_sweep, deviation_scan, enumerate_centralized};

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

/// Every bound tightening run made by the other criteria, for the bound
/// behavior check.
type Runs = Vec<(String, TighteningConfig, CentralSolution)>;

fn main() -> ExitCode {
    let mut runs: Runs = Vec::new();
    let mut outcomes = vec![
        timed(1, "follower response matches the grid oracle", Duration::from_secs(10), follower_oracle),
        timed(2, "standard function axioms", Duration::from_secs(10), standard_axioms),
        timed(3, "distributed convergence and fixed point", Duration::from_secs(60), distributed_fixed_point),
        timed(4, "equilibrium uniqueness", Duration::MAX, uniqueness),
        timed(5, "centralized optimum matches enumeration", Duration::from_secs(300), || global_optimality(&mut runs)),
    ];
    let capacity = timed(7, "capacity sweep shape", Duration::MAX, || capacity_sweep(&mut runs));
    let closed_form = timed(8, "sales drop from price 3 to 9", Duration::MAX, sales_drop);
    let direction = timed(9, "centralized price direction", Duration::MAX, || price_direction(&mut runs));
    let milp = timed(10, "MILP matches exhaustive enumeration", Duration::from_secs(60), milp_enumeration);
    outcomes.push(timed(6, "bound tightening bounds and rounds", Duration::MAX, || bound_behavior(&runs)));
    outcomes.extend([capacity, closed_form, direction, milp]);
    outcomes.sort_by_key(|o| o.id);

    println!();
    for o in &outcomes {
        println!("{} criterion {:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title, o.detail);
    }
    if outcomes.iter().all(|o| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn timed(id: usize, title: &'static str, limit: Duration, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    eprintln!("running criterion {id}: {title}");
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    detail.push_str(&format!(" [{:.1} s]", elapsed.as_secs_f64()));
    if elapsed > limit {
        pass = false;
        detail.push_str(&format!(" exceeds the {} s limit", limit.as_secs()));
    }
    Outcome { id, title, pass, detail }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn default_scenario(seed: u64) -> Scenario {
    generate_scenario(10, 3, seed, &ScenarioRanges::default()).unwrap()
}

fn prices(p: Vec<f64>) -> PriceVector {
    PriceVector::new(p, DEFAULT_PRICE_FLOOR).unwrap()
}

fn dynamics(scenario: &Scenario, init: Vec<f64>) -> Result<EquilibriumResult, String> {
    best_response_dynamics(scenario, &DynamicsConfig::default(), &prices(init)).map_err(|e| e.to_string())
}

fn midpoint(scenario: &Scenario) -> Vec<f64> {
    scenario.msps.iter().map(|m| m.p_max / 2.0).collect()
}

fn tighten(runs: &mut Runs, label: String, scenario: &Scenario) -> Result<CentralSolution, String> {
    let config = TighteningConfig::default();
    let sol = bound_tightening(scenario, &config).map_err(|e| format!("{label}: {e}"))?;
    runs.push((label, config, sol.clone()));
    Ok(sol)
}

// ---- criterion 1 -----------------------------------------------------------

fn follower_oracle() -> Result<String, String> {
    let resolution = 1e-4;
    let report = best_response_sweep(10_000, 1, resolution).map_err(|e| e.to_string())?;
    ensure(report.cases == 10_000, || format!("only {} draws", report.cases))?;
    ensure(report.max_abs_error <= resolution, || {
        format!("max error {:.3e} > {resolution:e}, worst {}", report.max_abs_error, report.worst_case)
    })?;
    Ok(format!("{} draws, max error {:.3e} <= {resolution:e}", report.cases, report.max_abs_error))
}

// ---- criterion 2 -----------------------------------------------------------

fn standard_axioms() -> Result<String, String> {
    let scenario = default_scenario(0);
    let p_max = scenario.msps[0].p_max;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut positivity, mut monotonicity, mut scalability) = (0, 0, 0);
    let draws = 10_000;
    for _ in 0..draws {
        let p: Vec<f64> = (0..3).map(|_| rng.gen_range(DEFAULT_PRICE_FLOOR..=p_max)).collect();
        let higher: Vec<f64> =
            p.iter().map(|&v| if rng.gen_bool(0.3) { v } else { v + rng.gen_range(0.0..p_max) }).collect();
        let a = rng.gen_range(1.0..3.0);
        let scaled: Vec<f64> = p.iter().map(|v| a * v).collect();
        let (p, higher, scaled) = (prices(p), prices(higher), prices(scaled));
        for j in 0..3 {
            let f = standard_function(j, &p, &scenario).unwrap();
            if !(f > 0.0) {
                positivity += 1;
            }
            if !(standard_function(j, &higher, &scenario).unwrap() >= f) {
                monotonicity += 1;
            }
            if !(a * f > standard_function(j, &scaled, &scenario).unwrap()) {
                scalability += 1;
            }
        }
    }
    let detail = format!(
        "{draws} price vectors: {positivity} positivity, {monotonicity} monotonicity, {scalability} scalability violations"
    );
    ensure(positivity + monotonicity + scalability == 0, || detail.clone())?;
    Ok(detail)
}

// ---- criterion 3 -----------------------------------------------------------

fn distributed_fixed_point() -> Result<String, String> {
    let (mut worst_residual, mut worst_gain, mut max_iters) = (0.0f64, 0.0f64, 0);
    let mut settled = 0;
    for seed in 0..20 {
        let scenario = default_scenario(seed);
        let r = dynamics(&scenario, midpoint(&scenario)).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(r.converged && r.iterations <= 100_000, || format!("seed {seed}: no convergence"))?;
        max_iters = max_iters.max(r.iterations);
        let pv = prices(r.prices.clone());
        for j in 0..scenario.n_msps() {
            let target = standard_response(j, &pv, &scenario).unwrap();
            worst_residual = worst_residual.max((r.prices[j] - target).abs());
        }
        let scan = deviation_scan(&pv, &scenario, 1000).map_err(|e| e.to_string())?;
        worst_gain = worst_gain.max(scan.max_abs_error);
        if tail_settles(&r.trace) {
            settled += 1;
        }
    }
    let detail = format!(
        "20 seeds, at most {max_iters} iterations, fixed point residual {worst_residual:.2e}, best deviation gain {worst_gain:.2e}, {settled}/20 traces settle monotonically"
    );
    ensure(worst_residual < 1e-3 && worst_gain <= 1e-3, || detail.clone())?;
    Ok(detail)
}

/// Whether every price moves monotonically over the last half of the trace.
fn tail_settles(trace: &[Vec<f64>]) -> bool {
    let tail = &trace[trace.len() / 2..];
    (0..tail[0].len()).all(|j| {
        let steps: Vec<f64> = tail.windows(2).map(|w| w[1][j] - w[0][j]).collect();
        steps.iter().all(|&d| d >= 0.0) || steps.iter().all(|&d| d <= 0.0)
    })
}

// ---- criterion 4 -----------------------------------------------------------

fn uniqueness() -> Result<String, String> {
    let scenario = default_scenario(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut found: Vec<Vec<f64>> = Vec::new();
    for k in 0..20 {
        let init = scenario.msps.iter().map(|m| rng.gen_range(DEFAULT_PRICE_FLOOR..=m.p_max)).collect();
        let r = dynamics(&scenario, init).map_err(|e| format!("start {k}: {e}"))?;
        found.push(r.prices);
    }
    let spread = (0..scenario.n_msps())
        .map(|j| {
            let col = found.iter().map(|p| p[j]);
            col.clone().fold(f64::NEG_INFINITY, f64::max) - col.fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let detail = format!("20 random starts, largest price spread {spread:.2e}");
    ensure(spread <= 1e-3, || detail.clone())?;
    Ok(detail)
}

// ---- criterion 5 -----------------------------------------------------------

fn global_optimality(runs: &mut Runs) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for k in 0..10 {
        let users = rng.gen_range(2..=5);
        let msps = rng.gen_range(1..=2);
        let scenario = generate_scenario(users, msps, 100 + k, &ScenarioRanges::default()).unwrap();
        let label = format!("oracle instance {k} ({users}x{msps})");
        let sol = tighten(runs, label.clone(), &scenario)?;
        let truth = enumerate_centralized(&scenario, 1e-3).map_err(|e| e.to_string())?;
        let err = (sol.objective - truth).abs();
        eprintln!("  {label}: bound tightening {:.6}, enumeration {truth:.6}", sol.objective);
        worst = worst.max(err);
        ensure(err <= 5e-2, || format!("{label}: {} vs enumeration {truth}", sol.objective))?;
    }
    Ok(format!("10 instances, largest difference {worst:.2e} <= 5e-2"))
}

// ---- criterion 6 -----------------------------------------------------------

fn bound_behavior(runs: &Runs) -> Result<String, String> {
    let mut problems = Vec::new();
    let mut most_rounds = 0;
    for (label, config, sol) in runs {
        let h = &sol.lb_ub_history;
        most_rounds = most_rounds.max(sol.rounds);
        if h.windows(2).any(|w| w[1].ub > w[0].ub) {
            problems.push(format!("{label}: UB increased"));
        }
        if h.windows(2).any(|w| w[1].lb < w[0].lb) {
            problems.push(format!("{label}: LB decreased"));
        }
        let threshold = config.gap_threshold(sol.objective_ub);
        if !(sol.gap <= threshold) {
            problems.push(format!("{label}: final gap {:.3e} > {threshold:.3e}", sol.gap));
        }
        if sol.rounds > 10 {
            problems.push(format!("{label}: {} rounds", sol.rounds));
        }
    }
    let detail = format!("{} runs, at most {most_rounds} rounds", runs.len());
    ensure(problems.is_empty(), || format!("{detail}; {}", problems.join("; ")))?;
    Ok(detail)
}

// ---- criterion 7 -----------------------------------------------------------

fn capacity_sweep(runs: &mut Runs) -> Result<String, String> {
    let template = default_scenario(0);
    let min_s_min = template.users.iter().map(|u| u.s_min).fold(f64::INFINITY, f64::min);
    let demand: f64 = template.users.iter().map(|u| u.s_max).sum();
    let capacities = [0.0, 1.0, 2.0, 3.0, 5.0, 20.0, 40.0, 80.0, 160.0, 320.0];
    assert!(capacities[1] < min_s_min && capacities[8] >= demand);

    let distributed = dynamics(&template, midpoint(&template))?.total_revenue();
    let mut objective = Vec::new();
    let mut total = Vec::new();
    let mut tol = Vec::new();
    for &c in &capacities {
        let sol = tighten(runs, format!("capacity {c}"), &template.with_uniform_capacity(Some(c)))?;
        eprintln!("  capacity {c}: objective {:.6}, total {:.6}", sol.objective, sol.total_revenue());
        tol.push(sol.gap.max(1e-9));
        objective.push(sol.objective);
        total.push(sol.total_revenue());
    }

    let plateau = *objective.last().unwrap();
    let mut problems = Vec::new();
    for (k, &c) in capacities.iter().enumerate() {
        if c < min_s_min && (objective[k] != 0.0 || total[k] != 0.0) {
            problems.push(format!("revenue {} at capacity {c} below min s_min", total[k]));
        }
        if c >= demand && (objective[k] - plateau).abs() > tol[k] + tol[tol.len() - 1] {
            problems.push(format!("capacity {c} is past saturation but differs from the plateau"));
        }
    }
    let saturated = |k: usize| (objective[k] - plateau).abs() <= tol[k] + tol[tol.len() - 1];
    let mid: Vec<usize> = (0..capacities.len()).filter(|&k| capacities[k] >= min_s_min).collect();
    for w in mid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if saturated(a) {
            if !saturated(b) {
                problems.push(format!("not constant after saturation at capacity {}", capacities[b]));
            }
        } else if !(objective[b] > objective[a] + tol[a] + tol[b]) {
            problems.push(format!("not strictly increasing from {} to {}", capacities[a], capacities[b]));
        }
    }
    let plateau_total = *total.last().unwrap();
    if !(plateau_total >= distributed) {
        problems.push(format!("plateau total {plateau_total:.4} below distributed {distributed:.4}"));
    }
    let unweighted_monotone = total.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    let detail = format!(
        "weighted objective {:?}; unweighted total {:?} ({}); distributed {distributed:.3}",
        objective.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
        total.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
        if unweighted_monotone { "monotone" } else { "not monotone" },
    );
    ensure(problems.is_empty(), || format!("{detail}; {}", problems.join("; ")))?;
    Ok(detail)
}

// ---- criterion 8 -----------------------------------------------------------

fn sales_drop() -> Result<String, String> {
    let user = UserProfile::new(0.5, 1.0, 11.0);
    let (low, high) = (user_best_response(&user, 3.0), user_best_response(&user, 9.0));
    let drop = (low - high) / low;
    ensure(low == 8.0 && high == 2.0 && drop == 0.75 && drop > 0.7, || format!("sales {low} -> {high}"))?;
    Ok(format!("sales {low} -> {high}, a {:.0}% drop", drop * 100.0))
}

// ---- criterion 9 -----------------------------------------------------------

/// Identical users split across two providers that differ only in quality.
/// Capacity and the minimum purchase cap how many users one provider can
/// take, so both serve someone.
fn symmetric(users: usize, alpha: f64, s_min: f64, s_max: f64, capacity: f64, quality: [f64; 2]) -> Scenario {
    let msps = quality.iter().map(|&q| MspProfile { quality: q, p_max: 12.0, capacity: Some(capacity) }).collect();
    Scenario::new(vec![UserProfile::new(alpha, s_min, s_max); users], msps).unwrap()
}

fn served(sol: &CentralSolution, j: usize) -> bool {
    sol.association.iter().any(|row| row[j] == 1)
}

fn price_direction(runs: &mut Runs) -> Result<String, String> {
    let cases: [(&str, usize, f64, f64, f64, f64); 2] =
        [("three users", 3, 0.6, 4.0, 11.0, 10.0), ("five users", 5, 0.4, 3.0, 12.0, 9.0)];
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    for (name, users, alpha, s_min, s_max, cap) in cases {
        // quality direction
        let sol = tighten(runs, format!("{name}, q 0.3/0.7"), &symmetric(users, alpha, s_min, s_max, cap, [0.3, 0.7]))?;
        if !(served(&sol, 0) && served(&sol, 1)) {
            problems.push(format!("{name}: a provider serves nobody, so its price is arbitrary"));
        } else if !(sol.prices[1] >= sol.prices[0] - 1e-6) {
            problems.push(format!("{name}: q=0.7 priced {:.6} below q=0.3 at {:.6}", sol.prices[1], sol.prices[0]));
        }
        notes.push(format!("{name} {:.4}/{:.4}", sol.prices[0], sol.prices[1]));

        // alpha direction
        let mut previous: Option<CentralSolution> = None;
        for scale in [0.75, 1.0, 1.25, 1.5] {
            let a = alpha * scale;
            let sc = symmetric(users, a, s_min, s_max, cap, [0.3, 0.7]);
            let sol = tighten(runs, format!("{name}, alpha {a}"), &sc)?;
            if let Some(prev) = &previous {
                for j in 0..2 {
                    if served(prev, j) && served(&sol, j) && sol.prices[j] < prev.prices[j] - 1e-6 {
                        problems.push(format!(
                            "{name}: provider {j} price fell from {:.6} to {:.6} at alpha {a}",
                            prev.prices[j], sol.prices[j]
                        ));
                    }
                }
            }
            previous = Some(sol);
        }
    }
    let detail = format!("low/high quality prices: {}", notes.join(", "));
    ensure(problems.is_empty(), || format!("{detail}; {}", problems.join("; ")))?;
    Ok(detail)
}

// ---- criterion 10 ----------------------------------------------------------

fn milp_enumeration() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut infeasible = 0;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let p = random_milp(&mut rng);
        let truth = enumerate_milp(&p);
        let s = solve_milp(&p).map_err(|e| e.to_string())?;
        match truth {
            None => {
                infeasible += 1;
                ensure(s.status == SolveStatus::Infeasible, || {
                    format!("case {case}: {:?}, expected infeasible", s.status)
                })?;
            }
            Some(v) => {
                ensure(s.is_optimal(), || format!("case {case}: {:?}", s.status))?;
                let err = (s.objective - v).abs();
                worst = worst.max(err);
                ensure(err <= 1e-6, || format!("case {case}: {} vs enumeration {v}", s.objective))?;
            }
        }
    }
    Ok(format!("100 instances ({infeasible} infeasible), largest difference {worst:.2e}"))
}

/// Up to 12 binaries and 3 bounded continuous variables under random rows.
fn random_milp(rng: &mut ChaCha8Rng) -> MilpProblem {
    let nb = rng.gen_range(1..=12);
    let nc = rng.gen_range(0..=3);
    let mut p = MilpProblem::new();
    for j in 0..nb {
        p.add_var(format!("z{j}"), 0.0, 1.0, true, rng.gen_range(-2.0..5.0));
    }
    for j in 0..nc {
        let lo = rng.gen_range(-2.0..1.0);
        p.add_var(format!("x{j}"), lo, lo + rng.gen_range(0.5..4.0), false, rng.gen_range(-3.0..3.0));
    }
    for i in 0..rng.gen_range(1..=4) {
        let mut coeffs = Vec::new();
        for j in 0..nb + nc {
            if rng.gen_bool(0.7) {
                coeffs.push((j, rng.gen_range(-1.0..4.0)));
            }
        }
        let relation = if rng.gen_bool(0.15) { Relation::Ge } else { Relation::Le };
        p.add_constraint(format!("r{i}"), coeffs, relation, rng.gen_range(0.0..(nb as f64)));
    }
    p
}

/// Best objective over every binary assignment, with the continuous part
/// solved by vertex enumeration.
fn enumerate_milp(p: &MilpProblem) -> Option<f64> {
    let ints: Vec<usize> = (0..p.num_vars()).filter(|&j| p.variables[j].integer).collect();
    let cont: Vec<usize> = (0..p.num_vars()).filter(|&j| !p.variables[j].integer).collect();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << ints.len()) {
        let mut x = vec![0.0; p.num_vars()];
        for (k, &j) in ints.iter().enumerate() {
            x[j] = f64::from((mask >> k) & 1);
        }
        if let Some(v) = best_vertex(p, &cont, &x) {
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

fn best_vertex(p: &MilpProblem, cont: &[usize], fixed: &[f64]) -> Option<f64> {
    let n = cont.len();
    // rows over the continuous variables: a x <= b after moving the binaries
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &p.constraints {
        let mut a = vec![0.0; n];
        let mut b = c.rhs;
        for &(j, v) in &c.coeffs {
            match cont.iter().position(|&k| k == j) {
                Some(k) => a[k] += v,
                None => b -= v * fixed[j],
            }
        }
        rows.push((a, b));
    }
    for (k, &j) in cont.iter().enumerate() {
        let mut a = vec![0.0; n];
        a[k] = 1.0;
        rows.push((a.clone(), p.variables[j].lower));
        rows.push((a, p.variables[j].upper));
    }
    let mut best: Option<f64> = None;
    let mut pick = Vec::with_capacity(n);
    choose(rows.len(), n, 0, &mut pick, &mut |pick| {
        let a: Vec<Vec<f64>> = pick.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = pick.iter().map(|&i| rows[i].1).collect();
        let Some(y) = solve_dense(a, b) else { return };
        let mut x = fixed.to_vec();
        for (k, &j) in cont.iter().enumerate() {
            x[j] = y[k];
        }
        if p.max_violation(&x) <= 1e-9 {
            let v = p.objective_value(&x);
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    });
    best
}

fn choose(n: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..n {
        pick.push(i);
        choose(n, k, i + 1, pick, f);
        pick.pop();
    }
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs()))?;
        if a[piv][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

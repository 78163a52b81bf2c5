use super::*;
use crate::milp::{solve_lp, solve_milp, write_lp};
use crate::model::{generate_scenario, MspProfile, Scenario, ScenarioRanges, UserProfile};
use approx::assert_abs_diff_eq;

fn single(capacity: Option<f64>) -> Scenario {
    Scenario::new(vec![UserProfile::new(0.5, 1.0, 10.0)], vec![MspProfile { quality: 0.5, p_max: 12.0, capacity }])
        .unwrap()
}

#[test]
fn weights_are_normalized_quality() {
    let m = |q| MspProfile { quality: q, p_max: 12.0, capacity: None };
    assert_eq!(compute_weights(&[m(0.4)]), vec![1.0]);
    let w = compute_weights(&[m(0.2), m(0.2), m(0.6)]);
    assert_abs_diff_eq!(w.as_slice(), [0.2, 0.2, 0.6].as_slice(), epsilon = 1e-15);
    assert_eq!(compute_weights(&[m(1.0), m(3.0)]), vec![0.25, 0.75]);
}

#[test]
fn true_objective_examples() {
    assert_eq!(true_objective(&[3.0], &[vec![0.0], vec![0.0]], &[1.0]), 0.0);
    assert_eq!(true_objective(&[5.0], &[vec![5.0]], &[1.0]), 25.0);
    let v = true_objective(&[2.0, 4.0], &[vec![1.0, 0.0], vec![0.0, 3.0]], &[0.25, 0.75]);
    assert_abs_diff_eq!(v, 9.5, epsilon = 1e-12);
}

#[test]
fn partition_insert_merges_near_duplicates() {
    let sc = single(None);
    let mut p = PartitionSet::initial(&sc);
    assert!(p.insert(0, 4.0));
    assert!(!p.insert(0, 4.0 + 1e-10));
    assert!(!p.insert(0, 12.0));
    assert!(p.insert(0, 6.0));
    assert_eq!(p.points(0), &[0.0, 4.0, 6.0, 12.0]);
    assert_eq!(p.interval(0, 1), (4.0, 6.0));
    assert!(PartitionSet::new(vec![vec![0.0, 5.0]], &sc).is_err());
    assert!(PartitionSet::new(vec![vec![0.0, 6.0, 6.0, 12.0]], &sc).is_err());
    assert!(PartitionSet::new(vec![vec![0.0, 6.0, 12.0]], &sc).is_ok());
}

#[test]
fn single_pair_has_seven_columns() {
    let sc = single(Some(20.0));
    let lin = build_milp(&sc, &PartitionSet::initial(&sc)).unwrap();
    assert_eq!(lin.problem.num_vars(), 7);
    let mut text = Vec::new();
    write_lp(&lin.problem, &mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    for name in ["p_0", "s_0_0", "x_0_0", "px_0_0", "ps_0_0", "y_0_0", "ys_0_0_0"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn single_pair_reaches_analytic_optimum() {
    let sol = bound_tightening(&single(Some(20.0)), &TighteningConfig::default()).unwrap();
    // revenue is flat at the optimum: a price off by d loses only d^2 / (2 alpha)
    assert_abs_diff_eq!(sol.prices[0], 5.0, epsilon = 1e-2);
    assert_abs_diff_eq!(sol.sales[0][0], 5.0, epsilon = 1e-2);
    assert_abs_diff_eq!(sol.objective, 25.0, epsilon = 1e-4);
    assert_eq!(sol.association, vec![vec![1]]);
    assert!(sol.objective_lb <= sol.objective_ub + 1e-9);
}

#[test]
fn capacity_below_every_minimum_serves_nobody() {
    let sc = single(Some(0.5));
    let sol = bound_tightening(&sc, &TighteningConfig::default()).unwrap();
    assert_eq!(sol.objective, 0.0);
    assert_eq!(sol.association, vec![vec![0]]);
    assert_eq!(sol.termination, Termination::GapClosed);
}

#[test]
fn envelopes_are_exact_for_integral_points() {
    // fix x and y at integral values and check px = p x and ys = y s
    let sc = Scenario::new(
        vec![UserProfile::new(0.5, 1.0, 10.0), UserProfile::new(0.8, 2.0, 11.0)],
        vec![MspProfile { quality: 0.5, p_max: 12.0, capacity: Some(30.0) }],
    )
    .unwrap();
    let parts = PartitionSet::new(vec![vec![0.0, 3.0, 7.0, 12.0]], &sc).unwrap();
    let lin = build_milp(&sc, &parts).unwrap();
    let lay = &lin.layout;
    let sol = solve_milp(&lin.problem).unwrap();
    assert!(sol.is_optimal());
    let v = &sol.values;
    let p = v[lay.p[0]];
    for i in 0..2 {
        let x = v[lay.x[i][0]];
        assert_abs_diff_eq!(v[lay.px[i][0]], p * x, epsilon = 1e-7);
        for k in 0..3 {
            assert_abs_diff_eq!(v[lay.ys[i][0][k]], v[lay.y[0][k]] * v[lay.s[i][0]], epsilon = 1e-7);
        }
    }
    let k = (0..3).find(|&k| v[lay.y[0][k]] > 0.5).unwrap();
    let (l, u) = parts.interval(0, k);
    assert!(l - 1e-7 <= p && p <= u + 1e-7);
}

#[test]
fn relaxation_dominates_true_optimum() {
    // two users on one provider; the true optimum is found on a fine grid
    let sc = Scenario::new(
        vec![UserProfile::new(0.5, 1.0, 10.0), UserProfile::new(0.9, 3.0, 11.0)],
        vec![MspProfile { quality: 0.5, p_max: 12.0, capacity: Some(15.0) }],
    )
    .unwrap();
    let lin = build_milp(&sc, &PartitionSet::initial(&sc)).unwrap();
    let relaxed = solve_milp(&lin.problem).unwrap().objective;
    let lp = solve_lp(&lin.problem).unwrap().objective;
    let mut best: f64 = 0.0;
    for mask in 0..4u32 {
        for k in 0..=12_000 {
            let p = k as f64 * 1e-3;
            let mut total = 0.0;
            let mut ok = true;
            for (i, u) in sc.users.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    let s = u.s_max - p / (2.0 * u.alpha);
                    ok &= s >= u.s_min;
                    total += s;
                }
            }
            if ok && total <= 15.0 {
                best = best.max(p * total);
            }
        }
    }
    assert!(relaxed >= best - 1e-9, "{relaxed} < {best}");
    assert!(lp >= relaxed - 1e-9);
}

#[test]
fn bounds_move_monotonically() {
    let sc = Scenario::new(
        vec![UserProfile::new(0.3, 1.0, 10.5), UserProfile::new(0.7, 2.0, 11.5), UserProfile::new(0.5, 1.5, 11.0)],
        vec![
            MspProfile { quality: 0.3, p_max: 12.0, capacity: Some(12.0) },
            MspProfile { quality: 0.7, p_max: 12.0, capacity: Some(15.0) },
        ],
    )
    .unwrap();
    let sol = bound_tightening(&sc, &TighteningConfig::default()).unwrap();
    for w in sol.lb_ub_history.windows(2) {
        assert!(w[1].ub <= w[0].ub);
        assert!(w[1].lb >= w[0].lb);
    }
    // incumbent feasibility
    for (i, u) in sc.users.iter().enumerate() {
        let served: u8 = sol.association[i].iter().sum();
        assert!(served <= 1);
        for j in 0..2 {
            let s = sol.sales[i][j];
            if sol.association[i][j] == 1 {
                assert!(s >= u.s_min && s <= u.s_max);
                assert!((s - (u.s_max - sol.prices[j] / (2.0 * u.alpha))).abs() <= 1e-6);
            } else {
                assert_eq!(s, 0.0);
            }
        }
    }
    for (j, m) in sc.msps.iter().enumerate() {
        let total: f64 = sol.sales.iter().map(|r| r[j]).sum();
        assert!(total <= m.capacity.unwrap() + 1e-9);
    }
    let mut csv = Vec::new();
    write_round_log_csv(&sol, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("round,lb,ub,gap,L_a_0,U_a_0,p_0,L_a_1,U_a_1,p_1\n"));
    assert_eq!(text.lines().count(), sol.rounds + 1);
}

#[test]
fn rejects_bad_config() {
    let sc = single(None);
    for cfg in [
        TighteningConfig { beta: 1.0, ..Default::default() },
        TighteningConfig { epsilon: 0.0, ..Default::default() },
        TighteningConfig { max_rounds: 0, ..Default::default() },
    ] {
        assert!(matches!(bound_tightening(&sc, &cfg), Err(CentralizedError::InvalidConfig(_))));
    }
}

#[test]
fn round_limit_carries_incumbent() {
    let sc = generate_scenario(5, 2, 100, &ScenarioRanges::default()).unwrap();
    let cfg = TighteningConfig { max_rounds: 1, ..Default::default() };
    match bound_tightening(&sc, &cfg) {
        Err(CentralizedError::RoundLimit { incumbent, gap }) => {
            assert!(gap > 0.0);
            assert_eq!(incumbent.rounds, 1);
            assert!(incumbent.objective > 0.0);
        }
        other => panic!("expected round limit, got {other:?}"),
    }
}

use super::{compute_weights, CentralizedError, PartitionSet};
use crate::milp::{MilpProblem, Relation};
use crate::model::Scenario;

/// Column indices of every variable family in the linearized problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpLayout {
    pub p: Vec<usize>,
    /// `[i][j]` families.
    pub s: Vec<Vec<usize>>,
    pub x: Vec<Vec<usize>>,
    pub px: Vec<Vec<usize>>,
    pub ps: Vec<Vec<usize>>,
    /// `y[j][k]`: piece `k` of provider `j` is active.
    pub y: Vec<Vec<usize>>,
    /// `ys[i][j][k]` stands for `y[j][k] * s[i][j]`.
    pub ys: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone)]
pub struct LinearizedMilp {
    pub problem: MilpProblem,
    pub layout: MilpLayout,
    pub weights: Vec<f64>,
}

/// Builds the piecewise-McCormick relaxation over `partitions`.
///
/// `ys` is linked to `s` through `sum_k ys_ijk = s_ij` and
/// `0 <= ys_ijk <= s_max_i y_jk`; with one active piece this is exactly
/// `ys_ijk = y_jk s_ij`, and it implies the remaining two McCormick
/// inequalities, so they are not emitted.
pub fn build_milp(scenario: &Scenario, partitions: &PartitionSet) -> Result<LinearizedMilp, CentralizedError> {
    build_milp_with(scenario, partitions, false)
}

/// Like [`build_milp`], optionally adding tangent cuts.
///
/// At an integral point `p s = x (s_max p - p^2 / (2 alpha))`, a concave
/// function of `p` scaled by `x`. Every tangent of it at a price `t` gives
/// the valid row `ps <= t^2 / (2 alpha) x + (s_max - t / alpha) px`, which
/// is linear in `(ps, x, px)`. With `tangent_cuts` set a cut is added at
/// each breakpoint of the provider's partition and at the user's revenue
/// maximizer `alpha s_max`. The cuts tighten as the partition is refined,
/// so the relaxation gap near the candidate prices shrinks much faster than
/// with the envelopes alone.
pub fn build_milp_with(
    scenario: &Scenario,
    partitions: &PartitionSet,
    tangent_cuts: bool,
) -> Result<LinearizedMilp, CentralizedError> {
    partitions.validate(scenario)?;
    let (ni, nj) = (scenario.n_users(), scenario.n_msps());
    let weights = compute_weights(&scenario.msps);
    let mut lp = MilpProblem::new();

    let p: Vec<usize> = (0..nj).map(|j| lp.add_continuous(format!("p_{j}"), 0.0, scenario.msps[j].p_max)).collect();
    let mut s = vec![vec![0; nj]; ni];
    let mut x = vec![vec![0; nj]; ni];
    let mut px = vec![vec![0; nj]; ni];
    let mut ps = vec![vec![0; nj]; ni];
    for (i, u) in scenario.users.iter().enumerate() {
        for j in 0..nj {
            let pmax = scenario.msps[j].p_max;
            s[i][j] = lp.add_continuous(format!("s_{i}_{j}"), 0.0, u.s_max);
            x[i][j] = lp.add_binary(format!("x_{i}_{j}"));
            px[i][j] = lp.add_continuous(format!("px_{i}_{j}"), 0.0, pmax);
            ps[i][j] = lp.add_var(format!("ps_{i}_{j}"), 0.0, pmax * u.s_max, false, weights[j]);
        }
    }
    let y: Vec<Vec<usize>> = (0..nj)
        .map(|j| (0..partitions.num_partitions(j)).map(|k| lp.add_binary(format!("y_{j}_{k}"))).collect())
        .collect();
    let mut ys = vec![vec![Vec::new(); nj]; ni];
    for (i, u) in scenario.users.iter().enumerate() {
        for j in 0..nj {
            ys[i][j] = (0..partitions.num_partitions(j))
                .map(|k| lp.add_continuous(format!("ys_{i}_{j}_{k}"), 0.0, u.s_max))
                .collect();
        }
    }

    for (i, u) in scenario.users.iter().enumerate() {
        lp.add_constraint(format!("assign_{i}"), (0..nj).map(|j| (x[i][j], 1.0)).collect(), Relation::Le, 1.0);
        for j in 0..nj {
            let pmax = scenario.msps[j].p_max;
            let (sv, xv, pxv, psv, pv) = (s[i][j], x[i][j], px[i][j], ps[i][j], p[j]);
            lp.add_constraint(format!("smin_{i}_{j}"), vec![(sv, 1.0), (xv, -u.s_min)], Relation::Ge, 0.0);
            lp.add_constraint(format!("smax_{i}_{j}"), vec![(sv, 1.0), (xv, -u.s_max)], Relation::Le, 0.0);
            // s = s_max x - px / (2 alpha), scaled by 2 alpha
            let two_a = 2.0 * u.alpha;
            lp.add_constraint(
                format!("resp_{i}_{j}"),
                vec![(sv, two_a), (xv, -two_a * u.s_max), (pxv, 1.0)],
                Relation::Eq,
                0.0,
            );
            lp.add_constraint(format!("pxlo_{i}_{j}"), vec![(pxv, 1.0), (xv, -pmax), (pv, -1.0)], Relation::Ge, -pmax);
            lp.add_constraint(format!("pxp_{i}_{j}"), vec![(pxv, 1.0), (pv, -1.0)], Relation::Le, 0.0);
            lp.add_constraint(format!("pxx_{i}_{j}"), vec![(pxv, 1.0), (xv, -pmax)], Relation::Le, 0.0);

            // envelopes of p s over the active piece, with L_a s and U_a s
            // written through ys
            let pieces: Vec<(f64, f64)> =
                (0..partitions.num_partitions(j)).map(|k| partitions.interval(j, k)).collect();
            let ysk = &ys[i][j];
            let sm = u.s_max;
            let mut a = vec![(psv, 1.0)];
            a.extend(ysk.iter().zip(&pieces).map(|(&v, &(l, _))| (v, -l)));
            lp.add_constraint(format!("ps1_{i}_{j}"), a, Relation::Ge, 0.0);

            let mut b = vec![(psv, 1.0), (pv, -sm)];
            b.extend(ysk.iter().zip(&pieces).map(|(&v, &(_, h))| (v, -h)));
            b.extend(y[j].iter().zip(&pieces).map(|(&v, &(_, h))| (v, sm * h)));
            lp.add_constraint(format!("ps2_{i}_{j}"), b, Relation::Ge, 0.0);

            let mut c = vec![(psv, 1.0), (pv, -sm)];
            c.extend(ysk.iter().zip(&pieces).map(|(&v, &(l, _))| (v, -l)));
            c.extend(y[j].iter().zip(&pieces).map(|(&v, &(l, _))| (v, sm * l)));
            lp.add_constraint(format!("ps3_{i}_{j}"), c, Relation::Le, 0.0);

            let mut d = vec![(psv, 1.0)];
            d.extend(ysk.iter().zip(&pieces).map(|(&v, &(_, h))| (v, -h)));
            lp.add_constraint(format!("ps4_{i}_{j}"), d, Relation::Le, 0.0);

            if tangent_cuts {
                // tangents of the concave revenue p s_max - p^2 / (2 alpha)
                // at every breakpoint and at the unconstrained maximizer
                let mut ts: Vec<f64> = partitions.points(j).to_vec();
                ts.push((u.alpha * u.s_max).min(pmax));
                for (k, t) in ts.into_iter().enumerate() {
                    lp.add_constraint(
                        format!("tan_{i}_{j}_{k}"),
                        vec![(psv, 1.0), (xv, -t * t / two_a), (pxv, -(u.s_max - t / u.alpha))],
                        Relation::Le,
                        0.0,
                    );
                }
            }
            for (k, &v) in ysk.iter().enumerate() {
                lp.add_constraint(format!("ys_{i}_{j}_{k}"), vec![(v, 1.0), (y[j][k], -sm)], Relation::Le, 0.0);
            }
            let mut sum = vec![(sv, -1.0)];
            sum.extend(ysk.iter().map(|&v| (v, 1.0)));
            lp.add_constraint(format!("yssum_{i}_{j}"), sum, Relation::Eq, 0.0);
        }
    }

    for (j, m) in scenario.msps.iter().enumerate() {
        if let Some(cap) = m.capacity {
            lp.add_constraint(format!("cap_{j}"), (0..ni).map(|i| (s[i][j], 1.0)).collect(), Relation::Le, cap);
        }
        lp.add_constraint(format!("piece_{j}"), y[j].iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
        let pieces: Vec<(f64, f64)> = (0..partitions.num_partitions(j)).map(|k| partitions.interval(j, k)).collect();
        let mut lo = vec![(p[j], 1.0)];
        lo.extend(y[j].iter().zip(&pieces).map(|(&v, &(l, _))| (v, -l)));
        lp.add_constraint(format!("pla_{j}"), lo, Relation::Ge, 0.0);
        let mut hi = vec![(p[j], 1.0)];
        hi.extend(y[j].iter().zip(&pieces).map(|(&v, &(_, h))| (v, -h)));
        lp.add_constraint(format!("pua_{j}"), hi, Relation::Le, 0.0);
    }

    Ok(LinearizedMilp { problem: lp, layout: MilpLayout { p, s, x, px, ps, y, ys }, weights })
}

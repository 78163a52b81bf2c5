use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;

use super::simplex::{finish, LpOutcome, Simplex, WarmStart};
use super::{MilpError, MilpProblem, MilpSolution, SolveStatus, INTEGRALITY_TOL};

/// Warm-started node solutions violating the original rows by more than this
/// are recomputed from scratch.
const NODE_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    /// Maximum number of LP relaxations solved before giving up.
    pub node_limit: usize,
    /// A node is pruned when its bound does not beat the incumbent by more
    /// than this.
    pub prune_tol: f64,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self { node_limit: 1_000_000, prune_tol: 1e-9 }
    }
}

struct Node {
    bound: f64,
    id: usize,
    /// Bounds of the integer variables, indexed like `ints`.
    bounds: Vec<(f64, f64)>,
    /// Final basis of the parent.
    warm: Option<Rc<WarmStart>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: larger bound first, then smaller id
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Solves `problem` to optimality with default options.
pub fn solve_milp(problem: &MilpProblem) -> Result<MilpSolution, MilpError> {
    solve_milp_with(problem, &MilpOptions::default())
}

pub fn solve_milp_with(problem: &MilpProblem, options: &MilpOptions) -> Result<MilpSolution, MilpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let ints: Vec<usize> = (0..n).filter(|&j| problem.variables[j].integer).collect();

    let mut work = Simplex::new(problem);
    let root_outcome = work.optimize();
    if root_outcome != LpOutcome::Optimal {
        return Ok(MilpSolution::without_point(root_outcome.into(), n, 1));
    }
    if ints.is_empty() {
        return Ok(finish(problem, &work, LpOutcome::Optimal, 1));
    }

    let root_bounds: Vec<(f64, f64)> = ints
        .iter()
        .map(|&j| {
            let v = &problem.variables[j];
            (v.lower.ceil(), v.upper.floor())
        })
        .collect();
    if root_bounds.iter().any(|&(l, h)| l > h) {
        return Ok(MilpSolution::without_point(SolveStatus::Infeasible, n, 1));
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::INFINITY, id: 0, bounds: root_bounds, warm: None });
    let mut next_id = 1usize;

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        let best = incumbent.as_ref().map_or(f64::NEG_INFINITY, |(v, _)| *v);
        if node.bound <= best + options.prune_tol {
            continue;
        }
        if nodes >= options.node_limit {
            hit_limit = true;
            break;
        }
        nodes += 1;
        apply_bounds(&mut work, &ints, &node.bounds);
        if let Some(ws) = &node.warm {
            work.install(ws);
        }
        let mut outcome = work.optimize();
        // negated so that a NaN violation also triggers the fallback
        if outcome == LpOutcome::Optimal && !(problem.max_violation(&work.values()) <= NODE_CHECK_TOL) {
            outcome = LpOutcome::IterLimit;
        }
        if outcome == LpOutcome::IterLimit {
            log::debug!("node {nodes}: warm solve failed, solving from scratch");
            work = Simplex::new(problem);
            apply_bounds(&mut work, &ints, &node.bounds);
            outcome = work.optimize();
        }
        match outcome {
            LpOutcome::Optimal => {}
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded | LpOutcome::IterLimit => {
                return Ok(MilpSolution::without_point(outcome.into(), n, nodes));
            }
        }
        let obj = work.objective();
        if obj <= best + options.prune_tol {
            continue;
        }
        let values = work.values();

        let mut branch: Option<(usize, f64)> = None;
        let mut best_dist = f64::INFINITY;
        for (k, &j) in ints.iter().enumerate() {
            let v = values[j];
            let frac = v - v.floor();
            if frac.min(1.0 - frac) <= INTEGRALITY_TOL {
                continue;
            }
            let dist = (frac - 0.5).abs();
            if dist < best_dist {
                best_dist = dist;
                branch = Some((k, v));
            }
        }
        let Some((k, v)) = branch else {
            let mut point = values;
            for &j in &ints {
                point[j] = point[j].round();
            }
            log::debug!("node {nodes}: incumbent {obj}");
            incumbent = Some((obj, point));
            continue;
        };

        let (lo, hi) = node.bounds[k];
        let mut down = node.bounds.clone();
        down[k] = (lo, v.floor());
        let mut up = node.bounds;
        up[k] = (v.ceil(), hi);
        let (near, far) = if v - v.floor() >= 0.5 { (up, down) } else { (down, up) };
        let ws = Rc::new(work.warm_start());
        heap.push(Node { bound: obj, id: next_id, bounds: near, warm: Some(Rc::clone(&ws)) });
        heap.push(Node { bound: obj, id: next_id + 1, bounds: far, warm: Some(ws) });
        next_id += 2;
    }

    log::debug!("branch and bound: {nodes} nodes, {} pivots in the last solve", work.iterations());
    let Some((_, point)) = incumbent else {
        let status = if hit_limit { SolveStatus::IterLimit } else { SolveStatus::Infeasible };
        return Ok(MilpSolution::without_point(status, n, nodes));
    };

    let mut solution = polish(problem, &ints, &point, nodes);
    if hit_limit {
        solution.status = SolveStatus::IterLimit;
    }
    Ok(solution)
}

fn apply_bounds(work: &mut Simplex, ints: &[usize], bounds: &[(f64, f64)]) {
    for (&j, &(lo, hi)) in ints.iter().zip(bounds) {
        work.set_bounds(j, lo, hi);
    }
}

/// Re-solves the continuous part with every integer fixed at its incumbent
/// value, which removes drift left over from warm-started solves.
fn polish(problem: &MilpProblem, ints: &[usize], point: &[f64], nodes: usize) -> MilpSolution {
    let mut fixed = problem.clone();
    for &j in ints {
        fixed.variables[j].lower = point[j];
        fixed.variables[j].upper = point[j];
    }
    let mut tab = Simplex::new(&fixed);
    let outcome = tab.optimize();
    let fallback = || {
        let mut values = point.to_vec();
        for (v, var) in values.iter_mut().zip(&problem.variables) {
            *v = v.clamp(var.lower, var.upper);
        }
        MilpSolution {
            status: SolveStatus::Optimal,
            objective: problem.objective_value(&values),
            values,
            node_count: nodes,
        }
    };
    if outcome != LpOutcome::Optimal {
        log::warn!("polishing the incumbent returned {outcome:?}");
        return fallback();
    }
    let polished = finish(&fixed, &tab, outcome, nodes);
    if problem.max_violation(&polished.values) <= problem.max_violation(point).max(super::FEASIBILITY_TOL) {
        polished
    } else {
        fallback()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heap_prefers_higher_bound_then_lower_id() {
        let mut h = BinaryHeap::new();
        h.push(Node { bound: 1.0, id: 0, bounds: vec![], warm: None });
        h.push(Node { bound: 2.0, id: 2, bounds: vec![], warm: None });
        h.push(Node { bound: 2.0, id: 1, bounds: vec![], warm: None });
        let order: Vec<usize> = std::iter::from_fn(|| h.pop().map(|n| n.id)).collect();
        assert_eq!(order, vec![1, 2, 0]);
    }
}

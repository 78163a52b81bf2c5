//! Revised bounded-variable simplex.
//!
//! Row `i` of the problem becomes `r_i - a_i x = 0` with the logical
//! variable `r_i` bounded by the relation: `(-inf, b]`, `[b, inf)` or
//! `[b, b]`. With `M = [-A | I]` every iterate satisfies `M z = 0`, so the
//! basic values are `x_B = -B^-1 N x_N`.
//!
//! The basis is held as a sparse LU factorization (see `lu`). A dual simplex
//! runs whenever the basis is dual feasible, which is the normal situation
//! after a bound change in branch-and-bound; otherwise a composite primal
//! simplex (phase 1 on the signed sum of infeasibilities, then phase 2)
//! takes over. Infeasibility verdicts are checked against the original rows
//! before they are reported.

use std::sync::Arc;

use super::lu::Factor;
use super::{MilpError, MilpProblem, MilpSolution, Relation, SolveStatus, FEASIBILITY_TOL};

const PRIMAL_TOL: f64 = 1e-9;
/// Residual infeasibility below which a stalled phase is accepted instead of
/// declaring the problem infeasible.
const VERDICT_TOL: f64 = 1e-7;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

impl From<LpOutcome> for SolveStatus {
    fn from(o: LpOutcome) -> Self {
        match o {
            LpOutcome::Optimal => SolveStatus::Optimal,
            LpOutcome::Infeasible => SolveStatus::Infeasible,
            LpOutcome::Unbounded => SolveStatus::Unbounded,
            LpOutcome::IterLimit => SolveStatus::IterLimit,
        }
    }
}

/// How a phase ended.
enum Phase {
    Done(LpOutcome),
    /// Numerical trouble was repaired by refactoring; run the loop again.
    Restart,
}

enum Step {
    Pivot { pos: usize, to_upper: bool, length: f64 },
    Flip { length: f64 },
    Unbounded,
}

/// A basis that can be reinstalled later, e.g. in a child node.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    basis: Vec<u32>,
    state: Vec<VarState>,
}

/// Constraint matrix `[-A | I]` by column and by row.
#[derive(Debug)]
struct Matrix {
    cols: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone)]
pub(crate) struct Simplex {
    m: usize,
    n_struct: usize,
    ncols: usize,
    mat: Arc<Matrix>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    /// Reduced costs of the maximized objective.
    d: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    factor: Arc<Factor>,
    /// Basic values are out of date after a bound change.
    stale: bool,
    iterations: usize,
    max_iterations: usize,
    degenerate_run: usize,
    /// Primal feasibility tolerance of the current solve.
    ptol: f64,
    /// Whether the last infeasible verdict was confirmed on the original rows.
    certified: bool,
    col_buf: Vec<f64>,
    row_buf: Vec<f64>,
}

impl Simplex {
    pub(crate) fn new(problem: &MilpProblem) -> Self {
        let n = problem.num_vars();
        let m = problem.constraints.len();
        let ncols = n + m;
        let mut lo: Vec<f64> = problem.variables.iter().map(|v| v.lower).collect();
        let mut hi: Vec<f64> = problem.variables.iter().map(|v| v.upper).collect();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
        for (i, c) in problem.constraints.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(c.coeffs.len() + 1);
            for &(j, a) in &c.coeffs {
                match row.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 -= a,
                    None => row.push((j, -a)),
                }
            }
            row.retain(|e| e.1 != 0.0);
            row.push((n + i, 1.0));
            rows.push(row);
            let (l, h) = match c.relation {
                Relation::Le => (f64::NEG_INFINITY, c.rhs),
                Relation::Ge => (c.rhs, f64::INFINITY),
                Relation::Eq => (c.rhs, c.rhs),
            };
            lo.push(l);
            hi.push(h);
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        for (i, row) in rows.iter().enumerate() {
            for &(j, a) in row {
                cols[j].push((i, a));
            }
        }
        let mut cost = problem.objective.clone();
        cost.resize(ncols, 0.0);

        let mut x = vec![0.0; ncols];
        let mut state = vec![VarState::Basic; ncols];
        for j in 0..n {
            let (s, v) = resting_state(lo[j], hi[j], VarState::AtLower);
            state[j] = s;
            x[j] = v;
        }
        let basis: Vec<usize> = (n..ncols).collect();
        let slack_cols: Vec<Vec<(usize, f64)>> = (0..m).map(|i| vec![(i, 1.0)]).collect();
        let factor = Factor::new(m, &slack_cols).expect("identity basis");
        let mut s = Self {
            m,
            n_struct: n,
            ncols,
            mat: Arc::new(Matrix { cols, rows }),
            d: vec![0.0; ncols],
            cost,
            lo,
            hi,
            x,
            basis,
            state,
            factor: Arc::new(factor),
            stale: true,
            iterations: 0,
            max_iterations: 20 * (m + ncols) + 10_000,
            degenerate_run: 0,
            ptol: PRIMAL_TOL,
            certified: false,
            col_buf: vec![0.0; m],
            row_buf: vec![0.0; ncols],
        };
        s.compute_primal();
        s.compute_duals();
        s
    }

    pub(crate) fn values(&self) -> Vec<f64> {
        self.x[..self.n_struct].to_vec()
    }

    pub(crate) fn objective(&self) -> f64 {
        self.cost[..self.n_struct].iter().zip(&self.x).map(|(c, x)| c * x).sum()
    }

    pub(crate) fn iterations(&self) -> usize {
        self.iterations
    }

    pub(crate) fn warm_start(&self) -> WarmStart {
        WarmStart { basis: self.basis.iter().map(|&b| b as u32).collect(), state: self.state.clone() }
    }

    /// Reinstalls a basis saved by [`Self::warm_start`] under the current
    /// bounds. The current factors are kept when the basis is unchanged,
    /// which is the case for a child solved right after its parent.
    pub(crate) fn install(&mut self, ws: &WarmStart) {
        let same = self.basis.iter().zip(&ws.basis).all(|(&a, &b)| a == b as usize);
        if !same {
            self.basis = ws.basis.iter().map(|&b| b as usize).collect();
        }
        self.state.clone_from(&ws.state);
        for j in 0..self.ncols {
            if self.state[j] != VarState::Basic {
                let (s, v) = resting_state(self.lo[j], self.hi[j], self.state[j]);
                self.state[j] = s;
                self.x[j] = v;
            }
        }
        if same && self.factor.num_etas() <= REFACTOR_EVERY / 2 {
            self.compute_primal();
            self.compute_duals();
        } else {
            self.refresh();
        }
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lo[j] == self.hi[j]
    }

    /// Refactors the basis, swapping in logical columns for any part of it
    /// that turns out singular.
    fn refactor(&mut self) {
        loop {
            let cols: Vec<&[(usize, f64)]> = self.basis.iter().map(|&j| self.mat.cols[j].as_slice()).collect();
            match Factor::new(self.m, &cols) {
                Ok(f) => {
                    self.factor = Arc::new(f);
                    return;
                }
                Err(sing) => {
                    log::debug!("singular basis, replacing {} columns", sing.positions.len());
                    for (&pos, &row) in sing.positions.iter().zip(&sing.rows) {
                        let out = self.basis[pos];
                        let (s, v) = nearest_bound(self.x[out], self.lo[out], self.hi[out]);
                        self.state[out] = s;
                        self.x[out] = v;
                        let slack = self.n_struct + row;
                        self.basis[pos] = slack;
                        self.state[slack] = VarState::Basic;
                    }
                }
            }
        }
    }

    fn compute_primal(&mut self) {
        let mut rhs = std::mem::take(&mut self.col_buf);
        rhs.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.ncols {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for &(i, a) in &self.mat.cols[j] {
                    rhs[i] -= a * self.x[j];
                }
            }
        }
        let mut out = vec![0.0; self.m];
        self.factor.ftran(&mut rhs, &mut out);
        for (k, &b) in self.basis.iter().enumerate() {
            self.x[b] = out[k];
        }
        self.col_buf = rhs;
        self.stale = false;
    }

    /// Reduced costs `c_j - y^T M_j` (with `c_j` zero unless `use_cost`) for
    /// basic costs `cb` by position, together with `y`.
    fn reduced_costs(&self, cb: &mut [f64], use_cost: bool) -> (Vec<f64>, Vec<f64>) {
        let mut y = vec![0.0; self.m];
        self.factor.btran(cb, &mut y);
        let mut d = vec![0.0; self.ncols];
        for j in 0..self.ncols {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let mut v = if use_cost { self.cost[j] } else { 0.0 };
            for &(i, a) in &self.mat.cols[j] {
                v -= y[i] * a;
            }
            d[j] = v;
        }
        (d, y)
    }

    fn compute_duals(&mut self) {
        let mut cb: Vec<f64> = self.basis.iter().map(|&b| self.cost[b]).collect();
        self.d = self.reduced_costs(&mut cb, true).0;
    }

    fn refresh(&mut self) {
        self.refactor();
        self.compute_primal();
        self.compute_duals();
    }

    /// Signed infeasibility of basic position `k`: negative below the lower
    /// bound, positive above the upper bound.
    fn infeasibility(&self, k: usize) -> f64 {
        let b = self.basis[k];
        let v = self.x[b];
        if v < self.lo[b] - self.ptol {
            v - self.lo[b]
        } else if v > self.hi[b] + self.ptol {
            v - self.hi[b]
        } else {
            0.0
        }
    }

    fn primal_feasible(&self) -> bool {
        (0..self.m).all(|k| self.infeasibility(k) == 0.0)
    }

    fn dual_feasible(&self) -> bool {
        (0..self.ncols).all(|j| {
            if self.is_fixed(j) {
                return true;
            }
            match self.state[j] {
                VarState::Basic => true,
                VarState::AtLower => self.d[j] <= DUAL_TOL,
                VarState::AtUpper => self.d[j] >= -DUAL_TOL,
                VarState::Free => self.d[j].abs() <= DUAL_TOL,
            }
        })
    }

    /// Moves boxed nonbasic variables to the bound their reduced cost
    /// favours. Returns whether anything moved.
    fn flip_to_dual_feasible(&mut self) -> bool {
        let mut moved = false;
        for j in 0..self.ncols {
            if self.is_fixed(j) || !self.lo[j].is_finite() || !self.hi[j].is_finite() {
                continue;
            }
            match self.state[j] {
                VarState::AtLower if self.d[j] > DUAL_TOL => {
                    self.state[j] = VarState::AtUpper;
                    self.x[j] = self.hi[j];
                    moved = true;
                }
                VarState::AtUpper if self.d[j] < -DUAL_TOL => {
                    self.state[j] = VarState::AtLower;
                    self.x[j] = self.lo[j];
                    moved = true;
                }
                _ => {}
            }
        }
        if moved {
            self.compute_primal();
        }
        moved
    }

    /// Changes the bounds of variable `j`, keeping a nonbasic variable on the
    /// same side so dual feasibility is preserved.
    pub(crate) fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        if self.lo[j] == lo && self.hi[j] == hi {
            return;
        }
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.state[j] == VarState::Basic {
            return;
        }
        let (s, v) = resting_state(lo, hi, self.state[j]);
        self.state[j] = s;
        if self.x[j] != v {
            self.x[j] = v;
            self.stale = true;
        }
    }

    /// Solves from the current basis.
    pub(crate) fn optimize(&mut self) -> LpOutcome {
        self.ptol = PRIMAL_TOL;
        self.certified = false;
        let budget = self.iterations + self.max_iterations;
        if self.factor.num_etas() > REFACTOR_EVERY {
            self.refresh();
        } else if self.stale {
            self.compute_primal();
        }
        let mut uncertified = 0;
        let mut unconfirmed = 0;
        let mut restarts = 0;
        loop {
            self.flip_to_dual_feasible();
            let phase = if self.dual_feasible() { self.dual(budget) } else { self.primal(budget) };
            match phase {
                Phase::Restart => {
                    restarts += 1;
                    if restarts > 50 {
                        return LpOutcome::IterLimit;
                    }
                }
                Phase::Done(LpOutcome::Optimal) => {
                    // recompute from the factors; refactor once they are
                    // long or a previous confirmation failed
                    if unconfirmed > 0 || self.factor.num_etas() > REFACTOR_EVERY / 2 {
                        self.refresh();
                    } else {
                        self.compute_primal();
                        self.compute_duals();
                    }
                    self.flip_to_dual_feasible();
                    if self.primal_feasible() && self.dual_feasible() {
                        return LpOutcome::Optimal;
                    }
                    unconfirmed += 1;
                    if unconfirmed > 3 {
                        return LpOutcome::IterLimit;
                    }
                }
                Phase::Done(LpOutcome::Infeasible) => {
                    if self.certified {
                        return LpOutcome::Infeasible;
                    }
                    uncertified += 1;
                    if uncertified > 2 {
                        log::warn!("infeasible verdict without a certificate after {} pivots", self.iterations);
                        return LpOutcome::Infeasible;
                    }
                    self.refresh();
                }
                Phase::Done(other) => return other,
            }
        }
    }

    /// Row `k` of `B^-1 M` for every column, with `rho = B^-T e_k`.
    fn pivot_row(&mut self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut e = vec![0.0; self.m];
        e[k] = 1.0;
        let mut rho = vec![0.0; self.m];
        self.factor.btran(&mut e, &mut rho);
        let mut alpha = std::mem::take(&mut self.row_buf);
        alpha.iter_mut().for_each(|v| *v = 0.0);
        for (i, &r) in rho.iter().enumerate() {
            if r != 0.0 {
                for &(j, a) in &self.mat.rows[i] {
                    alpha[j] += r * a;
                }
            }
        }
        (alpha, rho)
    }

    /// `B^-1 M_q` by basis position.
    fn column(&mut self, q: usize) -> Vec<f64> {
        let mut a = std::mem::take(&mut self.col_buf);
        a.iter_mut().for_each(|v| *v = 0.0);
        for &(i, v) in &self.mat.cols[q] {
            a[i] = v;
        }
        let mut w = vec![0.0; self.m];
        self.factor.ftran(&mut a, &mut w);
        self.col_buf = a;
        w
    }

    /// Replaces the variable at basis position `pos` with `q`, where `w` is
    /// `B^-1 M_q`.
    fn change_basis(&mut self, pos: usize, q: usize, w: &[f64]) {
        self.basis[pos] = q;
        self.state[q] = VarState::Basic;
        self.d[q] = 0.0;
        Arc::make_mut(&mut self.factor).update(pos, w);
    }

    fn dual(&mut self, budget: usize) -> Phase {
        loop {
            if self.iterations >= budget {
                return Phase::Done(LpOutcome::IterLimit);
            }
            if self.factor.num_etas() >= REFACTOR_EVERY {
                self.refresh();
                if self.flip_to_dual_feasible() || !self.dual_feasible() {
                    return Phase::Restart;
                }
            }
            let bland = self.degenerate_run > DEGENERATE_SWITCH;
            let mut leave: Option<(usize, f64)> = None;
            for k in 0..self.m {
                let inf = self.infeasibility(k);
                if inf == 0.0 {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((r, best)) => {
                        if bland {
                            self.basis[k] < self.basis[r]
                        } else {
                            inf.abs() > best.abs()
                        }
                    }
                };
                if better {
                    leave = Some((k, inf));
                }
            }
            let Some((r, inf)) = leave else {
                return Phase::Done(LpOutcome::Optimal);
            };
            let increase = inf < 0.0;
            let (alpha, rho) = self.pivot_row(r);

            // (col, exact ratio, relaxed ratio, |alpha|)
            let mut cands: Vec<(usize, f64, f64, f64)> = Vec::new();
            for j in 0..self.ncols {
                if self.state[j] == VarState::Basic || self.is_fixed(j) {
                    continue;
                }
                let a = alpha[j];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                // the leaving basic moves by -a * dir per unit of x_j
                let dir = match self.state[j] {
                    VarState::AtLower => 1.0,
                    VarState::AtUpper => -1.0,
                    _ => {
                        if increase {
                            -a.signum()
                        } else {
                            a.signum()
                        }
                    }
                };
                if (-a * dir > 0.0) != increase {
                    continue;
                }
                let dj = self.d[j].abs();
                cands.push((j, dj / a.abs(), (dj + DUAL_TOL) / a.abs(), a.abs()));
            }
            if cands.is_empty() {
                self.row_buf = alpha;
                if self.relax_tolerance() {
                    continue;
                }
                self.certified = self.certify_infeasible(&rho);
                return Phase::Done(LpOutcome::Infeasible);
            }
            if cands.iter().any(|c| !c.1.is_finite()) {
                log::debug!("non-finite dual ratio in row {r}, refactoring");
                self.row_buf = alpha;
                self.refresh();
                return Phase::Restart;
            }
            let chosen = if bland {
                let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
                *cands.iter().filter(|c| c.1 <= min + 1e-12).min_by_key(|c| c.0).expect("finite ratios")
            } else {
                let theta = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
                *cands
                    .iter()
                    .filter(|c| c.1 <= theta)
                    .max_by(|a, b| a.3.total_cmp(&b.3).then(b.0.cmp(&a.0)))
                    .expect("finite ratios")
            };
            let (q, ratio, _, _) = chosen;
            let w = self.column(q);
            if w[r].abs() < PIVOT_TOL || (w[r] - alpha[q]).abs() > 1e-7 * (1.0 + alpha[q].abs()) {
                // row and column disagree: the factors have drifted
                self.row_buf = alpha;
                self.refresh();
                return Phase::Restart;
            }
            self.iterations += 1;

            let leaving = self.basis[r];
            let target = if increase { self.lo[leaving] } else { self.hi[leaving] };
            let t = (self.x[leaving] - target) / w[r];
            self.x[q] += t;
            for (k, &wk) in w.iter().enumerate() {
                if wk != 0.0 {
                    let b = self.basis[k];
                    self.x[b] -= wk * t;
                }
            }
            self.x[leaving] = target;
            self.state[leaving] = if increase { VarState::AtLower } else { VarState::AtUpper };

            let theta = self.d[q] / alpha[q];
            if theta != 0.0 {
                for j in 0..self.ncols {
                    if self.state[j] != VarState::Basic && alpha[j] != 0.0 {
                        self.d[j] -= theta * alpha[j];
                    }
                }
            }
            self.d[leaving] = -theta;
            self.row_buf = alpha;
            self.change_basis(r, q, &w);
            self.note_step(ratio);
        }
    }

    fn entering_state(&self, j: usize, e: f64) -> Option<f64> {
        if self.is_fixed(j) {
            return None;
        }
        match self.state[j] {
            VarState::AtLower if e > DUAL_TOL => Some(1.0),
            VarState::AtUpper if e < -DUAL_TOL => Some(-1.0),
            VarState::Free if e.abs() > DUAL_TOL => Some(e.signum()),
            _ => None,
        }
    }

    fn primal(&mut self, budget: usize) -> Phase {
        loop {
            if self.iterations >= budget {
                return Phase::Done(LpOutcome::IterLimit);
            }
            if self.factor.num_etas() >= REFACTOR_EVERY {
                self.refresh();
            }
            let bland = self.degenerate_run > DEGENERATE_SWITCH;

            // phase-one costs on infeasible basics
            let mut phase_one = false;
            let mut cb: Vec<f64> = (0..self.m)
                .map(|k| {
                    let inf = self.infeasibility(k);
                    if inf < 0.0 {
                        phase_one = true;
                        1.0
                    } else if inf > 0.0 {
                        phase_one = true;
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            if !phase_one {
                for (c, &b) in cb.iter_mut().zip(&self.basis) {
                    *c = self.cost[b];
                }
            }
            let (reduced, y) = self.reduced_costs(&mut cb, !phase_one);

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                if let Some(dir) = self.entering_state(j, reduced[j]) {
                    if bland {
                        entering = Some((j, dir));
                        break;
                    }
                    let score = reduced[j].abs();
                    if score > best {
                        best = score;
                        entering = Some((j, dir));
                    }
                }
            }
            if !phase_one {
                self.d = reduced;
            }
            let Some((q, dir)) = entering else {
                if !phase_one {
                    return Phase::Done(LpOutcome::Optimal);
                }
                if self.relax_tolerance() {
                    continue;
                }
                self.certified = self.certify_infeasible(&y);
                return Phase::Done(LpOutcome::Infeasible);
            };

            let w = self.column(q);
            if w.iter().any(|v| !v.is_finite()) {
                self.refresh();
                return Phase::Restart;
            }
            self.iterations += 1;
            match self.primal_ratio(&w, q, dir, phase_one, bland) {
                Step::Unbounded => {
                    if phase_one {
                        // an improving ray that repairs nothing means the
                        // factors are off
                        self.refresh();
                        return Phase::Restart;
                    }
                    return Phase::Done(LpOutcome::Unbounded);
                }
                Step::Flip { length } => {
                    self.shift(q, &w, dir * length);
                    if dir > 0.0 {
                        self.x[q] = self.hi[q];
                        self.state[q] = VarState::AtUpper;
                    } else {
                        self.x[q] = self.lo[q];
                        self.state[q] = VarState::AtLower;
                    }
                    self.note_step(length);
                }
                Step::Pivot { pos, to_upper, length } => {
                    self.shift(q, &w, dir * length);
                    let leaving = self.basis[pos];
                    if to_upper {
                        self.x[leaving] = self.hi[leaving];
                        self.state[leaving] = VarState::AtUpper;
                    } else {
                        self.x[leaving] = self.lo[leaving];
                        self.state[leaving] = VarState::AtLower;
                    }
                    self.change_basis(pos, q, &w);
                    self.note_step(length);
                }
            }
        }
    }

    /// Moves nonbasic `q` by `delta` and shifts every basic variable along.
    fn shift(&mut self, q: usize, w: &[f64], delta: f64) {
        if delta == 0.0 {
            return;
        }
        self.x[q] += delta;
        for (k, &wk) in w.iter().enumerate() {
            if wk != 0.0 {
                let b = self.basis[k];
                self.x[b] -= wk * delta;
            }
        }
    }

    /// Called when a phase stalls on infeasible rows: refreshes the values
    /// and, if only roundoff-sized violations remain, widens the tolerance so
    /// they are accepted. Returns whether the caller should retry.
    fn relax_tolerance(&mut self) -> bool {
        if self.ptol >= VERDICT_TOL {
            return false;
        }
        self.refresh();
        let worst = (0..self.m).map(|k| self.infeasibility(k).abs()).fold(0.0, f64::max);
        if worst <= VERDICT_TOL {
            self.ptol = VERDICT_TOL;
            return true;
        }
        false
    }

    /// Checks that the row combination `y^T M z = 0` cannot hold anywhere
    /// inside the variable bounds, using the original coefficients.
    fn certify_infeasible(&self, y: &[f64]) -> bool {
        let mut c = vec![0.0; self.ncols];
        for (row, &yi) in self.mat.rows.iter().zip(y) {
            if yi != 0.0 {
                for &(j, a) in row {
                    c[j] += yi * a;
                }
            }
        }
        let scale = y.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let (mut min, mut max) = (0.0, 0.0);
        for (j, &cj) in c.iter().enumerate() {
            if cj.abs() <= 1e-12 * scale {
                continue;
            }
            let (a, b) = (cj * self.lo[j], cj * self.hi[j]);
            min += a.min(b);
            max += a.max(b);
        }
        let tol = VERDICT_TOL * scale;
        !min.is_nan() && !max.is_nan() && (min > tol || max < -tol)
    }

    fn note_step(&mut self, length: f64) {
        if length < 1e-12 {
            self.degenerate_run += 1;
        } else {
            self.degenerate_run = 0;
        }
    }

    /// Harris two-pass ratio test for entering column `q` moving in
    /// direction `dir`; `w` is `B^-1 M_q`.
    fn primal_ratio(&self, w: &[f64], q: usize, dir: f64, phase_one: bool, bland: bool) -> Step {
        let flip = self.hi[q] - self.lo[q];
        // (pos, exact ratio, relaxed ratio, |alpha|, to_upper)
        let mut cands: Vec<(usize, f64, f64, f64, bool)> = Vec::new();
        for (k, &wk) in w.iter().enumerate() {
            let alpha = -wk * dir;
            if alpha.abs() <= PIVOT_TOL {
                continue;
            }
            let b = self.basis[k];
            let v = self.x[b];
            let (lo, hi) = (self.lo[b], self.hi[b]);
            let below = v < lo - self.ptol;
            let above = v > hi + self.ptol;
            if phase_one && below {
                if alpha > 0.0 {
                    let r = (lo - v) / alpha;
                    cands.push((k, r, r, alpha.abs(), false));
                }
            } else if phase_one && above {
                if alpha < 0.0 {
                    let r = (v - hi) / -alpha;
                    cands.push((k, r, r, alpha.abs(), true));
                }
            } else if alpha > 0.0 {
                if hi.is_finite() {
                    let r = ((hi - v) / alpha).max(0.0);
                    let relaxed = ((hi + self.ptol - v) / alpha).max(0.0);
                    cands.push((k, r, relaxed, alpha, true));
                }
            } else if lo.is_finite() {
                let r = ((v - lo) / -alpha).max(0.0);
                let relaxed = ((v - lo + self.ptol) / -alpha).max(0.0);
                cands.push((k, r, relaxed, -alpha, false));
            }
        }
        if cands.is_empty() {
            return if flip.is_finite() { Step::Flip { length: flip } } else { Step::Unbounded };
        }
        let chosen = if bland {
            let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            cands.iter().filter(|c| c.1 <= min + 1e-12).min_by_key(|c| self.basis[c.0]).copied().unwrap()
        } else {
            let theta = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
            cands
                .iter()
                .filter(|c| c.1 <= theta)
                .max_by(|a, b| a.3.total_cmp(&b.3).then(b.0.cmp(&a.0)))
                .copied()
                .unwrap()
        };
        if flip.is_finite() && flip <= chosen.1 {
            return Step::Flip { length: flip };
        }
        Step::Pivot { pos: chosen.0, to_upper: chosen.4, length: chosen.1 }
    }
}

/// Nonbasic state and value for bounds `[lo, hi]`, keeping `prefer`'s side
/// when that bound is finite.
fn resting_state(lo: f64, hi: f64, prefer: VarState) -> (VarState, f64) {
    match prefer {
        VarState::AtUpper if hi.is_finite() => (VarState::AtUpper, hi),
        _ if lo.is_finite() => (VarState::AtLower, lo),
        _ if hi.is_finite() => (VarState::AtUpper, hi),
        _ => (VarState::Free, 0.0),
    }
}

/// Nonbasic state for a variable leaving the basis at value `v`.
fn nearest_bound(v: f64, lo: f64, hi: f64) -> (VarState, f64) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) if (hi - v).abs() < (v - lo).abs() => (VarState::AtUpper, hi),
        (true, _) => (VarState::AtLower, lo),
        (false, true) => (VarState::AtUpper, hi),
        (false, false) => (VarState::Free, 0.0),
    }
}

/// Solves the linear relaxation of `problem`, ignoring integrality flags.
pub fn solve_lp(problem: &MilpProblem) -> Result<MilpSolution, MilpError> {
    problem.validate()?;
    let mut lp = Simplex::new(problem);
    let outcome = lp.optimize();
    Ok(finish(problem, &lp, outcome, 0))
}

pub(crate) fn finish(problem: &MilpProblem, lp: &Simplex, outcome: LpOutcome, nodes: usize) -> MilpSolution {
    if outcome != LpOutcome::Optimal {
        return MilpSolution::without_point(outcome.into(), problem.num_vars(), nodes);
    }
    let mut values = lp.values();
    // snap values that sit within tolerance of a bound
    for (v, var) in values.iter_mut().zip(&problem.variables) {
        if *v < var.lower {
            *v = var.lower;
        } else if *v > var.upper {
            *v = var.upper;
        }
    }
    let violation = problem.max_violation(&values);
    if violation > FEASIBILITY_TOL {
        log::warn!("lp solution violates constraints by {violation:e} after {} pivots", lp.iterations());
    }
    MilpSolution {
        status: SolveStatus::Optimal,
        objective: problem.objective_value(&values),
        values,
        node_count: nodes,
    }
}

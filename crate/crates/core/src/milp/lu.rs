//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! Pivots are chosen by a Markowitz search with threshold partial pivoting.
//! Unit columns (logical variables) are eliminated first, so the numerical
//! work is confined to the structural kernel. After factorization the basis
//! can be changed one column at a time; each change appends an eta matrix
//! that the solves apply on top of the factors.

/// Entries below this magnitude are dropped during elimination.
const DROP: f64 = 1e-14;
/// A kernel pivot must be at least this fraction of its column's largest
/// entry.
const THRESHOLD: f64 = 0.1;
/// Pivots smaller than this are treated as zero.
const SINGULAR: f64 = 1e-11;
/// Number of lowest-count columns examined per Markowitz step.
const SEARCH_COLS: usize = 4;

/// Basis positions that could not be pivoted, paired with rows left over.
#[derive(Debug)]
pub(crate) struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    rest: Vec<(usize, f64)>,
}

#[derive(Clone)]
pub(crate) struct Factor {
    m: usize,
    /// `(row, basis position)` of every pivot in elimination order.
    pivots: Vec<(usize, usize)>,
    /// Row multipliers recorded at each step.
    lower: Vec<Vec<(usize, f64)>>,
    /// Off-diagonal entries of each pivot row, by basis position.
    upper: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    etas: Vec<Eta>,
}

impl Factor {
    /// Factorizes the `m x m` matrix whose column `k` is `cols[k]`, given as
    /// `(row, value)` pairs.
    pub(crate) fn new<C: AsRef<[(usize, f64)]>>(m: usize, cols: &[C]) -> Result<Self, Singular> {
        debug_assert_eq!(cols.len(), m);
        // active rows hold (position, value); columns hold row patterns
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (k, col) in cols.iter().enumerate() {
            for &(i, v) in col.as_ref() {
                if v != 0.0 {
                    rows[i].push((k, v));
                    pattern[k].push(i);
                }
            }
        }
        let mut row_done = vec![false; m];
        let mut col_done = vec![false; m];
        let mut f = Self {
            m,
            pivots: Vec::with_capacity(m),
            lower: Vec::with_capacity(m),
            upper: Vec::with_capacity(m),
            diag: Vec::with_capacity(m),
            etas: Vec::new(),
        };
        let mut work = vec![0.0; m];
        let mut mark = vec![false; m];

        // unit-like column singletons need no elimination at all
        for k in 0..m {
            if pattern[k].len() == 1 {
                let i = pattern[k][0];
                if row_done[i] {
                    continue;
                }
                let v = rows[i].iter().find(|e| e.0 == k).map_or(0.0, |e| e.1);
                if v.abs() < SINGULAR {
                    continue;
                }
                f.eliminate(i, k, &mut rows, &mut pattern, &mut row_done, &mut col_done, &mut work, &mut mark);
            }
        }

        let mut remaining: Vec<usize> = (0..m).filter(|&k| !col_done[k]).collect();
        let mut sparsest: Vec<usize> = Vec::with_capacity(SEARCH_COLS + 1);
        while !remaining.is_empty() {
            sparsest.clear();
            for &k in &remaining {
                let len = pattern[k].len();
                if sparsest.len() == SEARCH_COLS && len >= pattern[sparsest[SEARCH_COLS - 1]].len() {
                    continue;
                }
                let at = sparsest.partition_point(|&c| pattern[c].len() <= len);
                sparsest.insert(at, k);
                sparsest.truncate(SEARCH_COLS);
            }
            let mut best: Option<(usize, usize, usize, f64)> = None; // (row, pos, cost, |a|)
            for &k in &sparsest {
                let entries: Vec<(usize, f64)> =
                    pattern[k].iter().map(|&i| (i, rows[i].iter().find(|e| e.0 == k).map_or(0.0, |e| e.1))).collect();
                let cmax = entries.iter().fold(0.0_f64, |a, e| a.max(e.1.abs()));
                if cmax < SINGULAR {
                    continue;
                }
                let cc = pattern[k].len() - 1;
                for &(i, v) in &entries {
                    if v.abs() < THRESHOLD * cmax {
                        continue;
                    }
                    let cost = (rows[i].len() - 1) * cc;
                    let better = match best {
                        None => true,
                        Some((_, _, c, a)) => cost < c || (cost == c && v.abs() > a),
                    };
                    if better {
                        best = Some((i, k, cost, v.abs()));
                    }
                }
            }
            let Some((i, k, _, _)) = best.or_else(|| {
                // fall back to the largest entry anywhere in the kernel
                let mut fb: Option<(usize, usize, usize, f64)> = None;
                for &k in &remaining {
                    for &i in &pattern[k] {
                        let v = rows[i].iter().find(|e| e.0 == k).map_or(0.0, |e| e.1).abs();
                        if v >= SINGULAR && fb.is_none_or(|b| v > b.3) {
                            fb = Some((i, k, 0, v));
                        }
                    }
                }
                fb
            }) else {
                return Err(Singular { positions: remaining, rows: (0..m).filter(|&i| !row_done[i]).collect() });
            };
            f.eliminate(i, k, &mut rows, &mut pattern, &mut row_done, &mut col_done, &mut work, &mut mark);
            remaining.retain(|&c| c != k);
        }
        Ok(f)
    }

    #[allow(clippy::too_many_arguments)]
    fn eliminate(
        &mut self,
        p: usize,
        q: usize,
        rows: &mut [Vec<(usize, f64)>],
        pattern: &mut [Vec<usize>],
        row_done: &mut [bool],
        col_done: &mut [bool],
        work: &mut [f64],
        mark: &mut [bool],
    ) {
        let prow = std::mem::take(&mut rows[p]);
        let piv = prow.iter().find(|e| e.0 == q).map(|e| e.1).unwrap();
        for &(c, v) in &prow {
            work[c] = v;
            mark[c] = true;
            pattern[c].retain(|&r| r != p);
        }
        let targets: Vec<usize> = pattern[q].clone();
        let mut mults = Vec::with_capacity(targets.len());
        for i in targets {
            let row = &mut rows[i];
            let Some(at) = row.iter().position(|e| e.0 == q) else { continue };
            let l = row[at].1 / piv;
            row.swap_remove(at);
            mults.push((i, l));
            // update existing entries, then add fill
            for e in row.iter_mut() {
                if mark[e.0] {
                    e.1 -= l * work[e.0];
                    mark[e.0] = false;
                }
            }
            for &(c, v) in &prow {
                if c != q && mark[c] {
                    let nv = -l * v;
                    if nv.abs() > DROP {
                        row.push((c, nv));
                        pattern[c].push(i);
                    }
                }
            }
            // restore marks for the next target row
            for &(c, _) in &prow {
                mark[c] = true;
            }
        }
        for &(c, _) in &prow {
            mark[c] = false;
            work[c] = 0.0;
        }
        pattern[q].clear();
        row_done[p] = true;
        col_done[q] = true;
        self.pivots.push((p, q));
        self.lower.push(mults);
        self.upper.push(prow.into_iter().filter(|e| e.0 != q).collect());
        self.diag.push(piv);
    }

    pub(crate) fn num_etas(&self) -> usize {
        self.etas.len()
    }

    /// Solves `B w = a`. `a` is indexed by row, the result by basis position.
    pub(crate) fn ftran(&self, a: &mut [f64], out: &mut [f64]) {
        for (&(p, _), l) in self.pivots.iter().zip(&self.lower) {
            let v = a[p];
            if v != 0.0 {
                for &(i, m) in l {
                    a[i] -= m * v;
                }
            }
        }
        for k in (0..self.m).rev() {
            let (p, q) = self.pivots[k];
            let mut v = a[p];
            for &(c, u) in &self.upper[k] {
                v -= u * out[c];
            }
            out[q] = v / self.diag[k];
        }
        for eta in &self.etas {
            let v = out[eta.pos] / eta.pivot;
            out[eta.pos] = v;
            if v != 0.0 {
                for &(i, w) in &eta.rest {
                    out[i] -= w * v;
                }
            }
        }
    }

    /// Solves `B^T y = e`. `e` is indexed by basis position, the result by row.
    pub(crate) fn btran(&self, e: &mut [f64], out: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut v = e[eta.pos];
            for &(i, w) in &eta.rest {
                v -= w * e[i];
            }
            e[eta.pos] = v / eta.pivot;
        }
        for k in 0..self.m {
            let (p, q) = self.pivots[k];
            let z = e[q] / self.diag[k];
            out[p] = z;
            if z != 0.0 {
                for &(c, u) in &self.upper[k] {
                    e[c] -= u * z;
                }
            }
        }
        for k in (0..self.m).rev() {
            let p = self.pivots[k].0;
            let mut v = out[p];
            for &(i, m) in &self.lower[k] {
                v -= m * out[i];
            }
            out[p] = v;
        }
    }

    /// Records that the column at `pos` was replaced by one whose solve
    /// `B^-1 a` is `w`.
    pub(crate) fn update(&mut self, pos: usize, w: &[f64]) {
        let rest = w.iter().enumerate().filter(|&(i, &v)| i != pos && v.abs() > DROP).map(|(i, &v)| (i, v)).collect();
        self.etas.push(Eta { pos, pivot: w[pos], rest });
    }
}

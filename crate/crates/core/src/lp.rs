//! Dense two-phase primal simplex for `min c^T x  s.t.  A x <= b, x >= 0`.
//!
//! Pivoting follows Bland's smallest-index rule in both phases, so the
//! method terminates on degenerate problems. After the final pivot the basic
//! solution and the row duals are recomputed from the original data with an
//! LU factorization of the basis, and the recomputed point is checked
//! against the constraints before `Optimal` is reported.
//!
//! [`LpBuilder`] accepts free and bounded variables and `>=`/`=` rows and
//! rewrites them into the standard form above.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Lu;

pub const DEFAULT_FEAS_TOL: f64 = 1e-8;
/// Pivots smaller than this are a numerical breakdown.
pub const PIVOT_TOL: f64 = 1e-11;
/// Degenerate pivots tolerated before falling back to Bland's rule.
const DEGENERATE_STREAK: usize = 20;
/// Smallest column entry eligible in the ratio test.
const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    c: Array1<f64>,
    a: Array2<f64>,
    b: Array1<f64>,
}

impl LpProblem {
    pub fn new(c: Array1<f64>, a: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        let (k, m) = a.dim();
        if c.len() != m || b.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "A is {k}x{m}, c has {} entries, b has {}",
                c.len(),
                b.len()
            )));
        }
        if m == 0 {
            return Err(Error::InvalidInput("LP without variables".into()));
        }
        if c.iter().chain(a.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LP data".into()));
        }
        Ok(LpProblem { c, a, b })
    }

    pub fn c(&self) -> &Array1<f64> {
        &self.c
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn num_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Largest of `max_i (A x - b)_i`, `max_j -x_j` and zero.
    pub fn max_violation(&self, x: &Array1<f64>) -> f64 {
        let ax = self.a.dot(x);
        let rows = ax
            .iter()
            .zip(self.b.iter())
            .map(|(l, r)| l - r)
            .fold(0.0f64, f64::max);
        let bounds = x.iter().map(|v| -v).fold(0.0f64, f64::max);
        rows.max(bounds)
    }

    /// Column `j` of `[A I]`.
    fn extended_column(&self, j: usize) -> Array1<f64> {
        let m = self.num_vars();
        if j < m {
            self.a.column(j).to_owned()
        } else {
            let mut e = Array1::zeros(self.num_rows());
            e[j - m] = 1.0;
            e
        }
    }

    fn extended_cost(&self, j: usize) -> f64 {
        if j < self.num_vars() {
            self.c[j]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Array1<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// Row multipliers `u >= 0` with `c + A^T u >= 0` at optimality; the
    /// dual bound is `-b^T u`.
    pub duals: Array1<f64>,
    /// Basic columns of `[A I]`; indices `>= num_vars` are slacks.
    pub basis: Vec<usize>,
    pub pivots: usize,
    pub message: Option<String>,
}

struct Tableau {
    width: usize,
    data: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    pivot_limit: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    Failure(String),
}

impl Tableau {
    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[r * w + e];
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].iter().map(|v| v * inv).collect();
        for i in 0..self.rows() {
            if i == r {
                continue;
            }
            let row = &mut self.data[i * w..(i + 1) * w];
            let f = row[e];
            if f != 0.0 {
                for (t, p) in row.iter_mut().zip(pivot_row.iter()) {
                    *t -= f * p;
                }
                row[e] = 0.0;
            }
        }
        let f = self.obj[e];
        if f != 0.0 {
            for (t, p) in self.obj.iter_mut().zip(pivot_row.iter()) {
                *t -= f * p;
            }
            self.obj[e] = 0.0;
        }
        self.data[r * w..(r + 1) * w].copy_from_slice(&pivot_row);
        self.data[r * w + e] = 1.0;
        self.basis[r] = e;
        self.pivots += 1;
    }

    /// Most-negative reduced cost over columns `0..allowed`, switching to
    /// Bland's rule after `DEGENERATE_STREAK` pivots without progress and
    /// staying there until the objective strictly improves.
    fn run(&mut self, allowed: usize, opt_tol: f64) -> Outcome {
        let rhs = self.rhs_col();
        let mut stalled = 0usize;
        loop {
            if self.pivots >= self.pivot_limit {
                return Outcome::Failure(format!("pivot limit {} reached", self.pivot_limit));
            }
            let entering = if stalled >= DEGENERATE_STREAK {
                (0..allowed).find(|&j| self.obj[j] < -opt_tol)
            } else {
                (0..allowed)
                    .filter(|&j| self.obj[j] < -opt_tol)
                    .fold(None, |best: Option<usize>, j| match best {
                        Some(b) if self.obj[b] <= self.obj[j] => Some(b),
                        _ => Some(j),
                    })
            };
            let Some(e) = entering else {
                return Outcome::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            let mut tiny_positive = false;
            for i in 0..self.rows() {
                let a = self.at(i, e);
                if a > RATIO_TOL {
                    let ratio = self.at(i, rhs).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, best)) => {
                            let slack = 1e-12 * best.abs().max(1.0);
                            if ratio < best - slack
                                || (ratio <= best + slack && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, best))
                            }
                        }
                    };
                } else if a > PIVOT_TOL {
                    tiny_positive = true;
                }
            }
            match leave {
                Some((r, ratio)) => {
                    if ratio * -self.obj[e] > 1e-12 {
                        stalled = 0;
                    } else {
                        stalled += 1;
                    }
                    self.pivot(r, e)
                }
                None if tiny_positive => {
                    return Outcome::Failure(format!(
                        "column {e} has only sub-tolerance positive entries"
                    ))
                }
                None => return Outcome::Unbounded,
            }
        }
    }
}

/// Two-phase dense tableau simplex.
pub fn solve_lp(problem: &LpProblem, feas_tol: f64) -> Result<LpSolution> {
    if !(feas_tol > 0.0) {
        return Err(Error::InvalidConfig(format!("feas_tol = {feas_tol}")));
    }
    let (k, m) = problem.a.dim();
    let artificial_rows: Vec<usize> = (0..k).filter(|&i| problem.b[i] < 0.0).collect();
    let na = artificial_rows.len();
    let width = m + k + na + 1;
    let rhs = width - 1;
    let mut data = vec![0.0; k * width];
    let mut basis = vec![0; k];
    let mut art = 0;
    for i in 0..k {
        let row = &mut data[i * width..(i + 1) * width];
        let sign = if problem.b[i] < 0.0 { -1.0 } else { 1.0 };
        for (dst, &a) in row[..m].iter_mut().zip(problem.a.row(i)) {
            *dst = sign * a;
        }
        row[m + i] = sign;
        row[rhs] = sign * problem.b[i];
        if sign < 0.0 {
            row[m + k + art] = 1.0;
            basis[i] = m + k + art;
            art += 1;
        } else {
            basis[i] = m + i;
        }
    }
    let mut tab = Tableau {
        width,
        data,
        obj: vec![0.0; width],
        basis,
        pivots: 0,
        pivot_limit: 50 * (k + m) + 1000,
    };

    if na > 0 {
        for &i in &artificial_rows {
            for j in 0..(m + k) {
                tab.obj[j] -= tab.at(i, j);
            }
            tab.obj[rhs] -= tab.at(i, rhs);
        }
        if let Outcome::Failure(msg) = tab.run(m + k, feas_tol) {
            return Ok(failure(problem, &tab, msg));
        }
        let infeasibility = -tab.obj[rhs];
        if infeasibility > feas_tol {
            let x = basic_point(&tab, m);
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective: problem.c.dot(&x),
                max_violation: problem.max_violation(&x),
                x,
                duals: Array1::zeros(k),
                basis: tab.basis.clone(),
                pivots: tab.pivots,
                message: Some(format!("phase-1 optimum {infeasibility:e}")),
            });
        }
        // Drive zero-level artificials out of the basis.
        for r in 0..k {
            if tab.basis[r] >= m + k {
                let (j, mag) = (0..(m + k))
                    .map(|j| (j, tab.at(r, j).abs()))
                    .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                if mag < PIVOT_TOL {
                    return Ok(failure(
                        problem,
                        &tab,
                        format!("cannot remove artificial from row {r}"),
                    ));
                }
                tab.pivot(r, j);
            }
        }
        // Drop artificial columns.
        let new_width = m + k + 1;
        let mut compact = vec![0.0; k * new_width];
        for i in 0..k {
            compact[i * new_width..i * new_width + m + k]
                .copy_from_slice(&tab.data[i * width..i * width + m + k]);
            compact[i * new_width + m + k] = tab.data[i * width + rhs];
        }
        tab.data = compact;
        tab.width = new_width;
    }

    let mut obj = vec![0.0; tab.width];
    obj[..m].copy_from_slice(problem.c.as_slice().expect("contiguous c"));
    for i in 0..k {
        let cb = problem.extended_cost(tab.basis[i]);
        if cb != 0.0 {
            for (j, o) in obj.iter_mut().enumerate().take(tab.width) {
                *o -= cb * tab.at(i, j);
            }
        }
    }
    for i in 0..k {
        obj[tab.basis[i]] = 0.0;
    }
    tab.obj = obj;

    match tab.run(m + k, feas_tol) {
        Outcome::Failure(msg) => Ok(failure(problem, &tab, msg)),
        Outcome::Unbounded => {
            let x = basic_point(&tab, m);
            Ok(LpSolution {
                status: LpStatus::Unbounded,
                objective: f64::NEG_INFINITY,
                max_violation: problem.max_violation(&x),
                x,
                duals: Array1::zeros(k),
                basis: tab.basis.clone(),
                pivots: tab.pivots,
                message: None,
            })
        }
        Outcome::Optimal => Ok(finish_optimal(problem, &tab, feas_tol)),
    }
}

fn basic_point(tab: &Tableau, m: usize) -> Array1<f64> {
    let mut x = Array1::zeros(m);
    let rhs = tab.rhs_col();
    for (i, &j) in tab.basis.iter().enumerate() {
        if j < m {
            x[j] = tab.at(i, rhs);
        }
    }
    x
}

fn failure(problem: &LpProblem, tab: &Tableau, msg: String) -> LpSolution {
    let x = basic_point(tab, problem.num_vars());
    LpSolution {
        status: LpStatus::NumericalFailure,
        objective: problem.c.dot(&x),
        max_violation: problem.max_violation(&x),
        x,
        duals: Array1::zeros(problem.num_rows()),
        basis: tab.basis.clone(),
        pivots: tab.pivots,
        message: Some(msg),
    }
}

/// Primal point and duals recomputed from the basis with the original data.
fn basis_solution(problem: &LpProblem, basis: &[usize]) -> Result<(Array1<f64>, Array1<f64>)> {
    let k = problem.num_rows();
    let m = problem.num_vars();
    let mut bmat = Array2::zeros((k, k));
    for (col, &j) in basis.iter().enumerate() {
        bmat.column_mut(col).assign(&problem.extended_column(j));
    }
    let lu = Lu::factor(&bmat, 1e-14)?;
    let xb = lu.solve(&problem.b);
    let cb: Array1<f64> = basis.iter().map(|&j| problem.extended_cost(j)).collect();
    let y = lu.solve_transpose(&cb);
    let mut x = Array1::zeros(m);
    for (i, &j) in basis.iter().enumerate() {
        if j < m {
            x[j] = xb[i];
        }
    }
    Ok((x, -y))
}

fn finish_optimal(problem: &LpProblem, tab: &Tableau, feas_tol: f64) -> LpSolution {
    let (x, duals) = match basis_solution(problem, &tab.basis) {
        Ok(pair) => pair,
        Err(e) => return failure(problem, tab, e.to_string()),
    };
    let max_violation = problem.max_violation(&x);
    if max_violation > feas_tol {
        let mut out = failure(problem, tab, format!("refined point violates constraints by {max_violation:e}"));
        out.x = x;
        out.max_violation = max_violation;
        return out;
    }
    LpSolution {
        status: LpStatus::Optimal,
        objective: problem.c.dot(&x),
        max_violation,
        x,
        duals,
        basis: tab.basis.clone(),
        pivots: tab.pivots,
        message: None,
    }
}

/// Independent re-verification of a returned solution.
#[derive(Debug, Clone, Serialize)]
pub struct LpDiagnostics {
    pub max_violation: f64,
    pub objective: f64,
    pub objective_error: f64,
    pub primal_feasible: bool,
    /// Most negative reduced cost of `[A I]` under duals rebuilt from the
    /// basis; only for solutions claimed optimal.
    pub min_reduced_cost: Option<f64>,
    pub dual_bound: Option<f64>,
    pub duality_gap: Option<f64>,
    pub optimality_verified: bool,
}

pub fn check_solution(problem: &LpProblem, s: &LpSolution, feas_tol: f64) -> LpDiagnostics {
    let max_violation = problem.max_violation(&s.x);
    let objective = problem.c.dot(&s.x);
    let objective_error = if s.objective.is_finite() {
        (objective - s.objective).abs()
    } else {
        f64::INFINITY
    };
    let primal_feasible = max_violation <= feas_tol;
    let mut diag = LpDiagnostics {
        max_violation,
        objective,
        objective_error,
        primal_feasible,
        min_reduced_cost: None,
        dual_bound: None,
        duality_gap: None,
        optimality_verified: false,
    };
    if s.status != LpStatus::Optimal || s.basis.len() != problem.num_rows() {
        return diag;
    }
    if let Ok((_, u)) = basis_solution(problem, &s.basis) {
        let reduced = &problem.c + &problem.a.t().dot(&u);
        let min_reduced = reduced
            .iter()
            .chain(u.iter())
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let bound = -problem.b.dot(&u);
        diag.min_reduced_cost = Some(min_reduced);
        diag.dual_bound = Some(bound);
        diag.duality_gap = Some(objective - bound);
        diag.optimality_verified = primal_feasible
            && min_reduced >= -feas_tol
            && (objective - bound).abs() <= feas_tol * objective.abs().max(1.0);
    }
    diag
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarBounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl VarBounds {
    pub const NON_NEGATIVE: VarBounds = VarBounds {
        lower: Some(0.0),
        upper: None,
    };
    pub const FREE: VarBounds = VarBounds {
        lower: None,
        upper: None,
    };

    pub fn between(lower: f64, upper: f64) -> VarBounds {
        VarBounds {
            lower: Some(lower),
            upper: Some(upper),
        }
    }
}

/// How an original variable is expressed in standard-form columns:
/// `x = offset + sum(sign * x_std[col])`.
#[derive(Debug, Clone)]
struct VarMap {
    offset: f64,
    parts: Vec<(usize, f64)>,
}

/// General-form LP: `min c^T x` over bounded or free variables with
/// `<=`, `>=` and `=` rows.
#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    cost: Vec<f64>,
    l1_weight: Vec<f64>,
    bounds: Vec<VarBounds>,
    rows: Vec<(Vec<f64>, RowSense, f64)>,
}

/// Standard-form problem produced by [`LpBuilder::build`].
#[derive(Debug, Clone)]
pub struct StandardForm {
    pub problem: LpProblem,
    maps: Vec<VarMap>,
    objective_offset: f64,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, bounds: VarBounds) -> usize {
        self.cost.push(cost);
        self.l1_weight.push(0.0);
        self.bounds.push(bounds);
        self.cost.len() - 1
    }

    /// Free variable contributing `weight * |x|` to the objective.
    pub fn add_l1_var(&mut self, weight: f64) -> usize {
        let v = self.add_var(0.0, VarBounds::FREE);
        self.l1_weight[v] = weight;
        v
    }

    /// `coeffs` is dense over the variables added so far (shorter rows are
    /// zero-padded).
    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: RowSense, rhs: f64) {
        self.rows.push((coeffs, sense, rhs));
    }

    pub fn build(&self) -> Result<StandardForm> {
        let nvars = self.cost.len();
        let mut maps = Vec::with_capacity(nvars);
        let mut ncols = 0;
        // Extra rows from doubly bounded variables: (column, upper - lower).
        let mut bound_rows = Vec::new();
        for b in &self.bounds {
            let map = match (b.lower, b.upper) {
                (Some(lo), hi) => {
                    if let Some(hi) = hi {
                        if hi < lo {
                            return Err(Error::InvalidInput(format!(
                                "variable bounds [{lo}, {hi}] are empty"
                            )));
                        }
                        bound_rows.push((ncols, hi - lo));
                    }
                    ncols += 1;
                    VarMap {
                        offset: lo,
                        parts: vec![(ncols - 1, 1.0)],
                    }
                }
                (None, Some(hi)) => {
                    ncols += 1;
                    VarMap {
                        offset: hi,
                        parts: vec![(ncols - 1, -1.0)],
                    }
                }
                (None, None) => {
                    ncols += 2;
                    VarMap {
                        offset: 0.0,
                        parts: vec![(ncols - 2, 1.0), (ncols - 1, -1.0)],
                    }
                }
            };
            maps.push(map);
        }
        let mut std_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for (coeffs, sense, rhs) in &self.rows {
            if coeffs.len() > nvars {
                return Err(Error::DimensionMismatch(format!(
                    "row has {} coefficients for {nvars} variables",
                    coeffs.len()
                )));
            }
            let mut row = vec![0.0; ncols];
            let mut shift = 0.0;
            for (v, &a) in coeffs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                shift += a * maps[v].offset;
                for &(col, sign) in &maps[v].parts {
                    row[col] += a * sign;
                }
            }
            let r = rhs - shift;
            match sense {
                RowSense::Le => std_rows.push((row, r)),
                RowSense::Ge => std_rows.push((row.iter().map(|v| -v).collect(), -r)),
                RowSense::Eq => {
                    std_rows.push((row.iter().map(|v| -v).collect(), -r));
                    std_rows.push((row, r));
                }
            }
        }
        for (col, width) in bound_rows {
            let mut row = vec![0.0; ncols];
            row[col] = 1.0;
            std_rows.push((row, width));
        }
        let mut c = Array1::zeros(ncols);
        let mut objective_offset = 0.0;
        for (v, &cost) in self.cost.iter().enumerate() {
            objective_offset += cost * maps[v].offset;
            for &(col, sign) in &maps[v].parts {
                c[col] += cost * sign + self.l1_weight[v];
            }
        }
        let k = std_rows.len();
        let mut a = Array2::zeros((k, ncols));
        let mut b = Array1::zeros(k);
        for (i, (row, r)) in std_rows.into_iter().enumerate() {
            a.row_mut(i).assign(&Array1::from(row));
            b[i] = r;
        }
        Ok(StandardForm {
            problem: LpProblem::new(c, a, b)?,
            maps,
            objective_offset,
        })
    }
}

impl StandardForm {
    /// Maps a standard-form point back to the original variables.
    pub fn recover(&self, x_std: &Array1<f64>) -> Array1<f64> {
        self.maps
            .iter()
            .map(|m| m.offset + m.parts.iter().map(|&(c, s)| s * x_std[c]).sum::<f64>())
            .collect()
    }

    pub fn objective_offset(&self) -> f64 {
        self.objective_offset
    }
}

//! Semidefinite programs over affine matrix expressions.
//!
//! An [`SdpProblem`] collects named decision variables, constraints
//! (positive semidefinite, entry-wise nonnegative, equality) and a linear
//! objective. [`solve`] hands the problem to the wired-in backend and then
//! re-checks every constraint at the returned point with an independent
//! eigenvalue computation before reporting `Optimal`.

mod backend;
mod expr;
mod region;
mod robust;

use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

pub use backend::{ClarabelBackend, ConicData, Cone, RawSolution, RawStatus, SdpBackend};
pub use expr::{LinExpr, MatExpr, Term};
pub use region::{Face, UncertaintyRegion};
pub use robust::{robust_lmi, robust_lmi_ball, robust_lmi_vertices, RobustBall, RobustMethod};

use crate::linalg;

/// Default primal feasibility tolerance for independent re-verification.
pub const DEFAULT_FEAS_TOL: f64 = 1e-7;

static FEAS_TOL_BITS: AtomicU64 = AtomicU64::new(0);

/// Process-wide feasibility tolerance used by [`SolveOptions::default`].
pub fn feas_tol() -> f64 {
    match FEAS_TOL_BITS.load(Ordering::Relaxed) {
        0 => DEFAULT_FEAS_TOL,
        bits => f64::from_bits(bits),
    }
}

/// Overrides the process-wide feasibility tolerance (the CLI wires the
/// `OBSV_SOLVER_TOL` environment variable to this). Non-positive or
/// non-finite values restore the default.
pub fn set_feas_tol(tol: f64) {
    let bits = if tol.is_finite() && tol > 0.0 { tol.to_bits() } else { 0 };
    FEAS_TOL_BITS.store(bits, Ordering::Relaxed);
}

/// Margin used to turn a strict inequality `X ≺ 0` into `X ⪯ −εI`:
/// `ε = 1e-6 (1 + ‖A‖₂)`.
pub fn strict_margin(a: &DMatrix<f64>) -> f64 {
    1e-6 * (1.0 + linalg::spectral_norm(a))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmiError {
    #[error("semidefinite program is infeasible ({0})")]
    Infeasible(String),
    #[error("numerical trouble in semidefinite program ({0})")]
    NumericalTrouble(String),
    #[error("uncertainty region is empty")]
    EmptyRegion,
    #[error("invalid uncertainty region: {0}")]
    InvalidRegion(String),
    #[error("region form not supported here: {0}")]
    UnsupportedRegionForm(String),
}

/// Scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scalar(pub usize);

impl Scalar {
    pub fn expr(self) -> LinExpr {
        LinExpr::var(self.0)
    }
}

/// Symmetric matrix variable; entry `(j,k)` and `(k,j)` share one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymVar {
    pub n: usize,
    pub start: usize,
}

impl SymVar {
    pub fn index(&self, j: usize, k: usize) -> usize {
        let (a, b) = if j <= k { (j, k) } else { (k, j) };
        // Row-major upper triangle.
        self.start + a * self.n - a * (a + 1) / 2 + b
    }

    pub fn expr(&self) -> MatExpr {
        let mut e = MatExpr::zeros(self.n, self.n);
        for j in 0..self.n {
            for k in 0..self.n {
                e.terms.push(Term { var: self.index(j, k), row: j, col: k, coef: 1.0 });
            }
        }
        e
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |j, k| x[self.index(j, k)])
    }

    pub fn trace(&self) -> LinExpr {
        LinExpr { constant: 0.0, terms: (0..self.n).map(|i| (self.index(i, i), 1.0)).collect() }
    }
}

/// General matrix variable (vectors are `len × 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatVar {
    pub rows: usize,
    pub cols: usize,
    pub start: usize,
}

impl MatVar {
    pub fn index(&self, i: usize, j: usize) -> usize {
        self.start + i * self.cols + j
    }

    pub fn expr(&self) -> MatExpr {
        let mut e = MatExpr::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                e.terms.push(Term { var: self.index(i, j), row: i, col: j, coef: 1.0 });
            }
        }
        e
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| x[self.index(i, j)])
    }

    pub fn vector_value(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.rows * self.cols, (0..self.rows * self.cols).map(|k| x[self.start + k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Symmetric matrix expression positive semidefinite.
    Psd,
    /// Every entry nonnegative.
    Nonneg,
    /// Every entry zero.
    Eq,
}

impl ConstraintKind {
    fn block_code(self) -> u8 {
        match self {
            ConstraintKind::Psd => 1,
            ConstraintKind::Nonneg => 2,
            ConstraintKind::Eq => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub label: String,
    pub kind: ConstraintKind,
    pub expr: MatExpr,
}

/// Index of a constraint within its problem.
pub type ConstraintId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    names: Vec<String>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    sense: Sense,
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProblem {
    pub fn new() -> Self {
        Self { names: Vec::new(), constraints: Vec::new(), objective: LinExpr::default(), sense: Sense::Minimize }
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> (&LinExpr, Sense) {
        (&self.objective, self.sense)
    }

    pub fn scalar(&mut self, name: &str) -> Scalar {
        self.names.push(name.to_string());
        Scalar(self.names.len() - 1)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> SymVar {
        let start = self.names.len();
        for j in 0..n {
            for k in j..n {
                self.names.push(format!("{name}[{},{}]", j + 1, k + 1));
            }
        }
        SymVar { n, start }
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> MatVar {
        let start = self.names.len();
        for i in 0..rows {
            for j in 0..cols {
                self.names.push(format!("{name}[{},{}]", i + 1, j + 1));
            }
        }
        MatVar { rows, cols, start }
    }

    pub fn vector(&mut self, name: &str, len: usize) -> MatVar {
        let start = self.names.len();
        for i in 0..len {
            self.names.push(format!("{name}[{}]", i + 1));
        }
        MatVar { rows: len, cols: 1, start }
    }

    fn push(&mut self, label: &str, kind: ConstraintKind, expr: MatExpr) -> ConstraintId {
        if let Some(bad) = expr.terms.iter().find(|t| t.var >= self.names.len()) {
            panic!("constraint `{label}` references undeclared variable {}", bad.var);
        }
        self.constraints.push(Constraint { label: label.to_string(), kind, expr });
        self.constraints.len() - 1
    }

    /// `expr ⪰ 0`; the expression is symmetrized.
    pub fn psd(&mut self, label: &str, expr: MatExpr) -> ConstraintId {
        assert_eq!(expr.nrows(), expr.ncols(), "PSD constraint `{label}` must be square");
        let e = expr.sym();
        self.push(label, ConstraintKind::Psd, e)
    }

    /// `expr ⪯ −margin · I`.
    pub fn nsd(&mut self, label: &str, expr: MatExpr, margin: f64) -> ConstraintId {
        let n = expr.nrows();
        let e = -expr + &(-margin * DMatrix::identity(n, n));
        self.psd(label, e)
    }

    pub fn nonneg(&mut self, label: &str, expr: LinExpr) -> ConstraintId {
        self.push(label, ConstraintKind::Nonneg, expr.to_mat())
    }

    pub fn eq_zero(&mut self, label: &str, expr: MatExpr) -> ConstraintId {
        let e = expr.canonical();
        self.push(label, ConstraintKind::Eq, e)
    }

    pub fn minimize(&mut self, obj: LinExpr) {
        self.objective = obj;
        self.sense = Sense::Minimize;
    }

    pub fn maximize(&mut self, obj: LinExpr) {
        self.objective = obj;
        self.sense = Sense::Maximize;
    }

    /// Standard conic form `A x + s = b`, `s ∈ K`, `min qᵀx`.
    pub fn to_conic(&self) -> ConicData {
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        for c in &self.constraints {
            let base = b.len();
            let (nr, nc) = c.expr.shape();
            match c.kind {
                ConstraintKind::Psd => {
                    // svec: upper triangle, column-major, off-diagonal × √2.
                    let svec = |i: usize, j: usize| j * (j + 1) / 2 + i;
                    for j in 0..nc {
                        for i in 0..=j {
                            let v = c.expr.constant[(i, j)];
                            b.push(if i == j { v } else { v * sqrt2 });
                        }
                    }
                    for t in &c.expr.terms {
                        let (i, j) = if t.row <= t.col { (t.row, t.col) } else { (t.col, t.row) };
                        let coef = if i == j { t.coef } else { t.coef / sqrt2 };
                        rows.push(base + svec(i, j));
                        cols.push(t.var);
                        vals.push(-coef);
                    }
                    cones.push(Cone::Psd(nr));
                }
                ConstraintKind::Nonneg | ConstraintKind::Eq => {
                    let idx = |i: usize, j: usize| j * nr + i;
                    for j in 0..nc {
                        for i in 0..nr {
                            b.push(c.expr.constant[(i, j)]);
                        }
                    }
                    for t in &c.expr.terms {
                        rows.push(base + idx(t.row, t.col));
                        cols.push(t.var);
                        vals.push(-t.coef);
                    }
                    let len = nr * nc;
                    cones.push(if c.kind == ConstraintKind::Eq { Cone::Zero(len) } else { Cone::Nonneg(len) });
                }
            }
        }
        let mut q = vec![0.0; self.num_vars()];
        let sign = if self.sense == Sense::Maximize { -1.0 } else { 1.0 };
        for &(v, c) in &self.objective.terms {
            q[v] += sign * c;
        }
        ConicData { num_vars: self.num_vars(), q, a_rows: rows, a_cols: cols, a_vals: vals, b, cones }
    }

    /// Sparse text dump: one line per nonzero
    /// `constraint_id block row col var_id coef`. Constraint ids start at
    /// 1 (0 is the objective), block codes are 1 = PSD, 2 = nonnegative,
    /// 3 = equality, rows/cols are 1-based, and variable id 0 denotes the
    /// constant term. PSD blocks list the upper triangle only.
    pub fn dump_sparse(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "# obsv sparse SDP dump")?;
        writeln!(w, "# sense {}", if self.sense == Sense::Minimize { "min" } else { "max" })?;
        for (v, name) in self.names.iter().enumerate() {
            writeln!(w, "# var {} {}", v + 1, name)?;
        }
        for (cid, c) in self.constraints.iter().enumerate() {
            writeln!(w, "# con {} {} {}x{} {}", cid + 1, c.kind.block_code(), c.expr.nrows(), c.expr.ncols(), c.label)?;
        }
        if self.objective.constant != 0.0 {
            writeln!(w, "0 0 1 1 0 {:.17e}", self.objective.constant)?;
        }
        for &(v, coef) in &self.objective.terms {
            writeln!(w, "0 0 1 1 {} {:.17e}", v + 1, coef)?;
        }
        for (cid, c) in self.constraints.iter().enumerate() {
            let upper = c.kind == ConstraintKind::Psd;
            let code = c.kind.block_code();
            for j in 0..c.expr.ncols() {
                for i in 0..c.expr.nrows() {
                    let v = c.expr.constant[(i, j)];
                    if v != 0.0 && (!upper || i <= j) {
                        writeln!(w, "{} {} {} {} 0 {:.17e}", cid + 1, code, i + 1, j + 1, v)?;
                    }
                }
            }
            for t in &c.expr.terms {
                if !upper || t.row <= t.col {
                    writeln!(w, "{} {} {} {} {} {:.17e}", cid + 1, code, t.row + 1, t.col + 1, t.var + 1, t.coef)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { feas_tol: feas_tol(), max_iter: 200, verbose: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Flat decision vector (empty when the backend returned nothing usable).
    pub x: Vec<f64>,
    /// Objective in the problem's own sense.
    pub objective: f64,
    /// Largest constraint violation found by re-verification (absolute).
    pub worst_residual: f64,
    /// Minimum eigenvalue per PSD constraint (NaN for other kinds).
    pub min_eigs: Vec<f64>,
    pub iterations: u32,
    pub backend_status: String,
    pub message: String,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Converts a non-optimal status into the matching error.
    pub fn into_result(self) -> Result<SolveReport, LmiError> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible => Err(LmiError::Infeasible(self.message)),
            SolveStatus::NumericalTrouble => Err(LmiError::NumericalTrouble(self.message)),
        }
    }
}

/// Result of independently checking every constraint at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub worst_residual: f64,
    pub min_eigs: Vec<f64>,
    /// Label of the first constraint outside its (relative) tolerance.
    pub failed: Option<String>,
}

/// Re-checks each constraint: PSD blocks by their smallest eigenvalue,
/// other kinds entry-wise. The tolerance for a constraint is
/// `feas_tol · (1 + magnitude)` with magnitude the largest entry-wise
/// `|constant| + Σ|coef·x|`.
pub fn verify(problem: &SdpProblem, x: &[f64], feas_tol: f64) -> Verification {
    let mut worst = 0.0_f64;
    let mut failed = None;
    let mut min_eigs = Vec::with_capacity(problem.constraints.len());
    for c in &problem.constraints {
        let m = c.expr.eval(x);
        let tol = feas_tol * (1.0 + c.expr.magnitude(x));
        let (viol, eig) = match c.kind {
            ConstraintKind::Psd => {
                let e = linalg::lambda_min_sym(&m);
                ((-e).max(0.0), e)
            }
            ConstraintKind::Nonneg => (m.iter().fold(0.0_f64, |a, v| a.max(-v)), f64::NAN),
            ConstraintKind::Eq => (linalg::max_abs(&m), f64::NAN),
        };
        if !viol.is_finite() || viol > tol {
            failed.get_or_insert_with(|| format!("{} (violation {viol:.3e} > tol {tol:.3e})", c.label));
        }
        worst = worst.max(viol);
        min_eigs.push(eig);
    }
    Verification { worst_residual: worst, min_eigs, failed }
}

/// Solves with the reference backend and default options.
pub fn solve(problem: &SdpProblem) -> SolveReport {
    solve_with(problem, &ClarabelBackend, &SolveOptions::default())
}

pub fn solve_with(problem: &SdpProblem, backend: &dyn SdpBackend, opts: &SolveOptions) -> SolveReport {
    let data = problem.to_conic();
    let raw = backend.solve(&data, opts);
    let backend_status = format!("{}:{:?}", backend.name(), raw.status);
    let mut report = SolveReport {
        status: SolveStatus::NumericalTrouble,
        x: Vec::new(),
        objective: f64::NAN,
        worst_residual: f64::INFINITY,
        min_eigs: Vec::new(),
        iterations: raw.iterations,
        backend_status,
        message: String::new(),
    };
    match raw.status {
        RawStatus::Infeasible => {
            report.status = SolveStatus::Infeasible;
            report.message = "backend returned a primal infeasibility certificate".into();
            return report;
        }
        RawStatus::Unbounded => {
            report.message = "objective unbounded (dual infeasible)".into();
            return report;
        }
        RawStatus::Failed(ref why) => {
            report.message = format!("backend failure: {why}");
        }
        RawStatus::Solved | RawStatus::AlmostSolved => {}
    }
    if raw.x.len() != problem.num_vars() || raw.x.iter().any(|v| !v.is_finite()) {
        if report.message.is_empty() {
            report.message = "backend returned a non-finite point".into();
        }
        return report;
    }
    let v = verify(problem, &raw.x, opts.feas_tol);
    report.objective = problem.objective.eval(&raw.x);
    report.worst_residual = v.worst_residual;
    report.min_eigs = v.min_eigs;
    report.x = raw.x;
    if matches!(raw.status, RawStatus::Solved | RawStatus::AlmostSolved) {
        match v.failed {
            None => report.status = SolveStatus::Optimal,
            Some(label) => report.message = format!("re-verification failed at constraint {label}"),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_psd() {
        let mut p = SdpProblem::new();
        let s = p.scalar("s");
        let m = s.expr().times_identity(2) + &DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]);
        p.psd("blk", m);
        p.minimize(s.expr());
        let r = solve(&p);
        assert!(r.is_optimal(), "{r:?}");
        assert!((r.objective - 3.0).abs() < 1e-6);
    }

    #[test]
    fn smallest_eigenvalue_by_max() {
        let mut p = SdpProblem::new();
        let a = p.scalar("alpha");
        p.nsd("aI<=D", a.expr().times_identity(2) - MatExpr::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))), 0.0);
        p.maximize(a.expr());
        let r = solve(&p);
        assert!(r.is_optimal());
        assert!((r.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = SdpProblem::new();
        let s = p.scalar("s");
        p.nonneg("s>=1", s.expr() + (-1.0));
        p.nonneg("s<=0", s.expr() * -1.0);
        p.minimize(s.expr());
        assert_eq!(solve(&p).status, SolveStatus::Infeasible);
    }

    #[test]
    fn symmetric_variable_and_equality() {
        // min tr(P) s.t. P ⪰ [[2,1],[1,2]], P12 = 0.5
        let mut p = SdpProblem::new();
        let pv = p.symmetric("P", 2);
        let target = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        p.psd("P>=T", pv.expr() - MatExpr::constant(target.clone()));
        let mut e = MatExpr::zeros(1, 1) + &DMatrix::from_element(1, 1, -0.5);
        e.terms.push(Term { var: pv.index(0, 1), row: 0, col: 0, coef: 1.0 });
        p.eq_zero("P12", e);
        p.minimize(pv.trace());
        let r = solve(&p);
        assert!(r.is_optimal(), "{r:?}");
        let pm = pv.value(&r.x);
        assert!((pm[(0, 1)] - 0.5).abs() < 1e-6);
        assert!(linalg::lambda_min_sym(&(pm - target)) > -1e-6);
    }

    #[test]
    fn verification_catches_bad_points() {
        let mut p = SdpProblem::new();
        let s = p.scalar("s");
        p.psd("s>=0", s.expr().to_mat());
        assert!(verify(&p, &[-1.0], 1e-7).failed.is_some());
        assert!(verify(&p, &[1.0], 1e-7).failed.is_none());
    }

    #[test]
    fn dump_lists_nonzeros() {
        let mut p = SdpProblem::new();
        let s = p.scalar("s");
        p.psd("blk", s.expr().times_identity(2) + &DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]));
        p.minimize(s.expr());
        let mut buf = Vec::new();
        p.dump_sparse(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        // objective, one constant off-diagonal, two diagonal terms
        assert_eq!(data.len(), 4, "{text}");
        assert!(data.contains(&"1 1 1 2 0 3.00000000000000000e0"));
    }

    #[test]
    fn feas_tol_override() {
        assert_eq!(SolveOptions::default().feas_tol, DEFAULT_FEAS_TOL);
        assert_eq!(strict_margin(&DMatrix::zeros(2, 2)), 1e-6);
    }
}

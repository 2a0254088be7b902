//! The solver contract and the reference Clarabel implementation.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};

use super::SolveOptions;

/// Cone blocks of the standard form, in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    /// Symmetric `k×k` block in scaled upper-triangular column-major form.
    Psd(usize),
}

/// `min qᵀx  s.t.  A x + s = b,  s ∈ K`, with `A` given as triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicData {
    pub num_vars: usize,
    pub q: Vec<f64>,
    pub a_rows: Vec<usize>,
    pub a_cols: Vec<usize>,
    pub a_vals: Vec<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawStatus {
    Solved,
    AlmostSolved,
    Infeasible,
    Unbounded,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSolution {
    pub status: RawStatus,
    pub x: Vec<f64>,
    pub iterations: u32,
}

/// A backend turns standard-form data into a raw solution. Verification
/// happens afterwards and never trusts the backend's own status alone.
pub trait SdpBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, data: &ConicData, opts: &SolveOptions) -> RawSolution;
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, data: &ConicData, opts: &SolveOptions) -> RawSolution {
        let n = data.num_vars;
        let m = data.b.len();
        let p = CscMatrix::<f64>::zeros((n, n));
        let a = CscMatrix::new_from_triplets(m, n, data.a_rows.clone(), data.a_cols.clone(), data.a_vals.clone());
        let cones: Vec<SupportedConeT<f64>> = data
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(k) => ZeroConeT(k),
                Cone::Nonneg(k) => NonnegativeConeT(k),
                Cone::Psd(k) => PSDTriangleConeT(k),
            })
            .collect();
        let settings = match DefaultSettingsBuilder::default().verbose(opts.verbose).max_iter(opts.max_iter).build() {
            Ok(s) => s,
            Err(e) => return failed(format!("settings: {e}")),
        };
        let mut solver = match DefaultSolver::new(&p, &data.q, &a, &data.b, &cones, settings) {
            Ok(s) => s,
            Err(e) => return failed(format!("setup: {e:?}")),
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => RawStatus::Solved,
            SolverStatus::AlmostSolved => RawStatus::AlmostSolved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => RawStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => RawStatus::Unbounded,
            other => RawStatus::Failed(format!("{other:?}")),
        };
        RawSolution { status, x: sol.x.clone(), iterations: sol.iterations }
    }
}

fn failed(msg: String) -> RawSolution {
    RawSolution { status: RawStatus::Failed(msg), x: Vec::new(), iterations: 0 }
}

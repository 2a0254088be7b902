//! Observer gain synthesis and certification.
//!
//! All designs are certified through the error-dynamics LMI
//! `P(A_y + LC) + (A_y + LC)ᵀP ⪯ −m I` for every `y` in a region `Y`, which
//! is affine in `y` because `A_y = A + Σ y_i K_i`. With `R = PL` it is also
//! affine in `(P, R)`, which is how gains are synthesized.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::lmi::{self, LinExpr, LmiError, MatExpr, RobustMethod, SdpProblem, UncertaintyRegion};
use crate::model::{self, ModelError, QuadSystem};
use crate::serde_util;
use crate::trapping::{self, Ball, TrapError, TrappingCert};

/// Condition number of `P` above which a warning is attached to a design.
pub const COND_WARN: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("synthesis infeasible: {reason}{}", pbh_suffix(pbh_point))]
    Infeasible { reason: String, pbh_point: Option<Vec<f64>> },
    #[error("synthesis numerical trouble: {0}")]
    NumericalTrouble(String),
    #[error("non-positive argument: {0}")]
    NonPositiveArgument(String),
    #[error("region mismatch: {0}")]
    RegionMismatch(String),
    #[error("iteration {k} stalled in step {step}: {msg}")]
    IterationStalled { k: usize, step: usize, msg: String },
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn pbh_suffix(p: &Option<Vec<f64>>) -> String {
    match p {
        Some(y) => format!(" (PBH detectability test fails at y = {y:?})"),
        None => String::new(),
    }
}

fn from_lmi(e: LmiError) -> SynthError {
    match e {
        LmiError::Infeasible(m) => SynthError::Infeasible { reason: m, pbh_point: None },
        LmiError::NumericalTrouble(m) => SynthError::NumericalTrouble(m),
        other => SynthError::RegionMismatch(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Local,
    Global,
    Iterative,
}

/// `α₁ I ⪯ P ⪯ α₂ I` and the decay margin `α₃` of the certified LMI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverDesign {
    #[serde(rename = "L", with = "serde_util::mat")]
    pub l: DMatrix<f64>,
    #[serde(rename = "P", with = "serde_util::mat")]
    pub p: DMatrix<f64>,
    pub region: UncertaintyRegion,
    pub margins: Margins,
    pub gamma: f64,
    pub method: Method,
    #[serde(with = "serde_util::extended_f64")]
    pub convergence_radius: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ObserverDesign {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::ParseError {
            line: e.line(),
            column: e.column(),
            field: None,
            msg: e.to_string(),
        })
    }
}

/// `ρ₀ = (α₃ / (2γα₂)) √(α₁/α₂)`; infinite for `γ = 0`.
pub fn convergence_radius(alpha1: f64, alpha2: f64, alpha3: f64, gamma: f64) -> Result<f64, SynthError> {
    for (name, v) in [("alpha1", alpha1), ("alpha2", alpha2), ("alpha3", alpha3)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SynthError::NonPositiveArgument(format!("{name} = {v}")));
        }
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(SynthError::NonPositiveArgument(format!("gamma = {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(alpha3 / (2.0 * gamma * alpha2) * (alpha1 / alpha2).sqrt())
}

/// PBH test: every eigenvalue of `a` with nonnegative real part is
/// observable through `c`.
pub fn pbh_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let scale = 1.0 + linalg::spectral_norm(a) + linalg::spectral_norm(c);
    for ev in a.complex_eigenvalues().iter() {
        if ev.re < -1e-10 * scale {
            continue;
        }
        // Real embedding of the complex matrix [A − λI; C].
        let p = c.nrows();
        let m = DMatrix::from_fn(2 * (n + p), 2 * n, |r, col| {
            let (blk_r, i) = (r / (n + p), r % (n + p));
            let (blk_c, j) = (col / n, col % n);
            let (re, im) = if i < n {
                (a[(i, j)] - if i == j { ev.re } else { 0.0 }, if i == j { -ev.im } else { 0.0 })
            } else {
                (c[(i - n, j)], 0.0)
            };
            match (blk_r, blk_c) {
                (0, 0) | (1, 1) => re,
                (0, 1) => -im,
                _ => im,
            }
        });
        if linalg::rank(&m, 1e-9) < 2 * n {
            return false;
        }
    }
    true
}

/// First probe point of `y` (center and axis extremes) at which
/// `(A_y, C)` fails the PBH test.
fn pbh_failure(sys: &QuadSystem, y: &UncertaintyRegion) -> Result<Option<DVector<f64>>, SynthError> {
    for pt in y.probe_points() {
        let ay = model::perturbed_a(sys, &pt)?;
        if !pbh_detectable(&ay, sys.c()) {
            return Ok(Some(pt));
        }
    }
    Ok(None)
}

fn check_region(sys: &QuadSystem, y: &UncertaintyRegion) -> Result<(), SynthError> {
    y.validate().map_err(from_lmi)?;
    if y.dim() != sys.n() {
        return Err(SynthError::RegionMismatch(format!("region has dimension {} but the system has n = {}", y.dim(), sys.n())));
    }
    Ok(())
}

/// Adds `P(A_y + X) + (A_y + X)ᵀP + extra ⪯ −margin I` for all `y ∈ Y`,
/// where `pa_extra` is the `y`-independent part `PX` (e.g. `RC` or `PLC`)
/// and `extra` a symmetric term such as `α₃ I`.
#[allow(clippy::too_many_arguments)]
fn robust_decrease(
    prob: &mut SdpProblem,
    label: &str,
    sys: &QuadSystem,
    p: &MatExpr,
    pa_extra: &MatExpr,
    extra: &MatExpr,
    margin: f64,
    y: &UncertaintyRegion,
    method: RobustMethod,
) -> Result<(), SynthError> {
    let n = sys.n();
    let pa = p.right_mul(sys.a()) + pa_extra.clone();
    let f0 = -(pa.plus_transpose() + extra.clone()) + &(-margin * DMatrix::identity(n, n));
    let fs: Vec<MatExpr> = model::perturbation_basis(sys).iter().map(|k| -p.right_mul(k).plus_transpose()).collect();
    lmi::robust_lmi(prob, label, &f0, &fs, y, method).map_err(from_lmi)?;
    Ok(())
}

/// `L = P⁻¹ R` through a Cholesky solve, with a conditioning warning.
fn gain_from(p: &DMatrix<f64>, r: &DMatrix<f64>, warnings: &mut Vec<String>) -> Result<DMatrix<f64>, SynthError> {
    let eig = linalg::sym_eigenvalues(p);
    let (lmin, lmax) = (eig[0], eig[eig.len() - 1]);
    if lmin <= 0.0 {
        return Err(SynthError::NumericalTrouble(format!("P is not positive definite (λmin = {lmin:.3e})")));
    }
    let cond = lmax / lmin;
    if cond > COND_WARN {
        warnings.push(format!("P is ill conditioned (condition number {cond:.3e})"));
    }
    let chol = linalg::sym(p).cholesky().ok_or_else(|| SynthError::NumericalTrouble("Cholesky factorization of P failed".into()))?;
    Ok(chol.solve(r))
}

fn design_from(
    sys: &QuadSystem,
    l: DMatrix<f64>,
    p: DMatrix<f64>,
    region: UncertaintyRegion,
    alpha3: f64,
    method: Method,
    warnings: Vec<String>,
) -> Result<ObserverDesign, SynthError> {
    let eig = linalg::sym_eigenvalues(&p);
    let margins = Margins { alpha1: eig[0], alpha2: eig[eig.len() - 1], alpha3 };
    let gamma = model::n_norm(sys);
    let convergence_radius = match method {
        Method::Global => f64::INFINITY,
        _ => convergence_radius(margins.alpha1, margins.alpha2, alpha3, gamma)?,
    };
    Ok(ObserverDesign { l, p, region, margins, gamma, method, convergence_radius, warnings })
}

/// Local synthesis: maximize `α₃` subject to `P − α₁I ≻ 0`, `P ⪯ α₂I`,
/// `‖RC‖₂ <= α₂` and `PA_y + A_yᵀP + RC + CᵀRᵀ ⪯ −α₃I` on `Y`.
pub fn local_synth(sys: &QuadSystem, y: &UncertaintyRegion, alpha1: f64, alpha2: f64) -> Result<ObserverDesign, SynthError> {
    local_synth_with(sys, y, alpha1, alpha2, RobustMethod::Auto)
}

pub fn local_synth_with(
    sys: &QuadSystem,
    y: &UncertaintyRegion,
    alpha1: f64,
    alpha2: f64,
    method: RobustMethod,
) -> Result<ObserverDesign, SynthError> {
    check_region(sys, y)?;
    if !(alpha1 > 0.0 && alpha2 > alpha1) {
        return Err(SynthError::NonPositiveArgument(format!("need 0 < alpha1 < alpha2, got {alpha1}, {alpha2}")));
    }
    if let Some(pt) = pbh_failure(sys, y)? {
        return Err(SynthError::Infeasible {
            reason: "(A_y, C) is not detectable at a point of the region".into(),
            pbh_point: Some(pt.iter().copied().collect()),
        });
    }
    let (n, p) = (sys.n(), sys.p());
    let eps = lmi::strict_margin(sys.a());
    let mut prob = SdpProblem::new();
    let pv = prob.symmetric("P", n);
    let rv = prob.matrix("R", n, p);
    let a3 = prob.scalar("alpha3");
    let pe = pv.expr();
    let rc = rv.expr().right_mul(sys.c());
    prob.psd("P-a1I>0", pe.clone() + &(-(alpha1 + eps) * DMatrix::identity(n, n)));
    prob.psd("P<=a2I", -pe.clone() + &(alpha2 * DMatrix::identity(n, n)));
    let a2i = MatExpr::constant(alpha2 * DMatrix::identity(n, n));
    let rct = rc.transpose();
    prob.psd("|RC|<=a2", MatExpr::bmat(&[vec![Some(&a2i), Some(&rc)], vec![Some(&rct), Some(&a2i)]]));
    robust_decrease(&mut prob, "decrease", sys, &pe, &rc, &a3.expr().times_identity(n), eps, y, method)?;
    prob.maximize(a3.expr());
    let rep = lmi::solve(&prob).into_result().map_err(from_lmi)?;
    let alpha3 = rep.x[a3.0];
    if alpha3 <= 0.0 {
        return Err(SynthError::Infeasible { reason: format!("best decay margin α3 = {alpha3:.3e} is not positive"), pbh_point: None });
    }
    let pm = pv.value(&rep.x);
    let mut warnings = Vec::new();
    let l = gain_from(&pm, &rv.value(&rep.x), &mut warnings)?;
    design_from(sys, l, pm, y.clone(), alpha3, Method::Local, warnings)
}

/// Single-point sufficient condition: `0 ≺ P ≺ α(4γr)⁻¹ I` with
/// `PA_d + A_dᵀP + RC + CᵀRᵀ ⪯ −αI`. The condition is homogeneous, so
/// `α = 1` and the bound on `P` is tightened as far as possible; the
/// certified margin on `B_r(d)` is then `α₃ = 1 − 4γr λmax(P)`.
pub fn local_synth_at_center(sys: &QuadSystem, d: &DVector<f64>, r: f64) -> Result<ObserverDesign, SynthError> {
    let n = sys.n();
    if d.len() != n || !(r >= 0.0) {
        return Err(SynthError::RegionMismatch("center length must equal n and r >= 0".into()));
    }
    let gamma = model::n_norm(sys);
    let ad = model::perturbed_a(sys, d)?;
    let region = UncertaintyRegion::ball2(d.clone(), r);
    let sym_max = linalg::lambda_max_sym(&ad);
    if gamma * r == 0.0 && sym_max < 0.0 {
        let pm = DMatrix::identity(n, n);
        let l = DMatrix::zeros(n, sys.p());
        return design_from(sys, l, pm, region, -2.0 * sym_max, Method::Local, Vec::new());
    }
    let eps = lmi::strict_margin(sys.a());
    let mut prob = SdpProblem::new();
    let pv = prob.symmetric("P", n);
    let rv = prob.matrix("R", n, sys.p());
    let tau = prob.scalar("tau");
    let pe = pv.expr();
    prob.psd("P>0", pe.clone() + &(-eps * DMatrix::identity(n, n)));
    prob.psd("P<=tau", tau.expr().times_identity(n) - pe.clone());
    if gamma * r > 0.0 {
        prob.nonneg("tau<bound", LinExpr::constant(1.0 / (4.0 * gamma * r) - eps) - tau.expr());
    }
    let lyap = pe.right_mul(&ad) + rv.expr().right_mul(sys.c());
    prob.nsd("center", lyap.plus_transpose(), 1.0);
    prob.minimize(tau.expr());
    let rep = lmi::solve(&prob).into_result().map_err(from_lmi)?;
    let pm = pv.value(&rep.x);
    let alpha3 = 1.0 - 4.0 * gamma * r * linalg::lambda_max_sym(&pm);
    if alpha3 <= 0.0 {
        return Err(SynthError::Infeasible { reason: format!("residual margin {alpha3:.3e} is not positive"), pbh_point: None });
    }
    let mut warnings = Vec::new();
    let l = gain_from(&pm, &rv.value(&rep.x), &mut warnings)?;
    design_from(sys, l, pm, region, alpha3, Method::Local, warnings)
}

/// Outcome of the four-step design pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg1Outcome {
    pub state_cert: TrappingCert,
    /// Whether `Y` contains the state ball; `None` when the region form
    /// cannot be tested. A `false` here is reported, not fatal, since the
    /// inclusion test of Step 4 subsumes it.
    pub state_in_region: Option<bool>,
    pub design: ObserverDesign,
    /// Observer trapping ball (Step 3) when it could be certified.
    pub obs_cert: Option<TrappingCert>,
    /// Why Step 3 failed, if it did.
    pub obs_failure: Option<String>,
    /// `½(state ball ⊕ observer ball) ⊂ Y` (Step 4).
    pub inclusion: bool,
    #[serde(rename = "Q", with = "serde_util::mat")]
    pub q: DMatrix<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
}

fn inclusion(y: &UncertaintyRegion, state: &Ball, obs: Option<&Ball>) -> bool {
    obs.map(|o| trapping::region_contains(y, &trapping::half_minkowski(state, o)).unwrap_or(false)).unwrap_or(false)
}

/// Step 1 state ball, Step 2 local gain, Step 3 observer ball, Step 4
/// inclusion test. A failing Step 3 is reported in the outcome rather than
/// as an error so that the refinement iteration can still start.
pub fn alg1(
    sys: &QuadSystem,
    q: &DMatrix<f64>,
    y: &UncertaintyRegion,
    alpha1: f64,
    alpha2: f64,
) -> Result<Alg1Outcome, SynthError> {
    check_region(sys, y)?;
    let state_cert = trapping::state_trap_sdp(sys, q)?;
    let state_in_region = trapping::region_contains(y, &state_cert.ball).ok();
    let design = local_synth(sys, y, alpha1, alpha2)?;
    let (obs_cert, obs_failure) = match trapping::observer_trap_sdp(sys, &design.l, &state_cert.ball, q) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(format!("observer trapping ball not certified: {e}"))),
    };
    let inclusion = inclusion(y, &state_cert.ball, obs_cert.as_ref().map(|c| &c.ball));
    Ok(Alg1Outcome { state_cert, state_in_region, design, obs_cert, obs_failure, inclusion, q: q.clone(), alpha1, alpha2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg2Options {
    /// Upper bound `P ⪯ κI` in Step 1; defaults to the pipeline's `α₂`.
    pub pcap: Option<f64>,
    /// Second Step-2 stage minimizing `tr((LC)ᵀLC)` at the optimal `β`.
    pub trace_tie_break: bool,
    pub method: RobustMethod,
    /// Strictness margin for Steps 1 and 2; defaults to the global
    /// strictness margin scaled by `max(1, cap)`.
    pub margin: Option<f64>,
}

impl Default for Alg2Options {
    fn default() -> Self {
        Self { pcap: None, trace_tie_break: false, method: RobustMethod::Auto, margin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg2State {
    pub k: usize,
    #[serde(rename = "P", with = "serde_util::mat")]
    pub p: DMatrix<f64>,
    #[serde(rename = "L", with = "serde_util::mat")]
    pub l: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// `‖L_k C‖₂`.
    pub lc_norm: f64,
    pub obs_ball: Option<Ball>,
    pub obs_failure: Option<String>,
    pub inclusion: bool,
    /// `‖L_k C‖₂ <= β_k / α_k`.
    pub gain_bound_holds: bool,
    /// The previous `(P, λmin(P))` was feasible for this round's Step 1.
    pub warm_start_ok: bool,
}

/// Largest `m` (possibly negative) with `P(A_y + LC) + (·)ᵀP ⪯ −mI` on `Y`
/// as certified by the robust reformulation.
pub fn design_margin(
    sys: &QuadSystem,
    l: &DMatrix<f64>,
    p: &DMatrix<f64>,
    y: &UncertaintyRegion,
    method: RobustMethod,
) -> Result<f64, SynthError> {
    check_region(sys, y)?;
    let n = sys.n();
    let mut prob = SdpProblem::new();
    let m = prob.scalar("m");
    let pe = MatExpr::constant(p.clone());
    let plc = MatExpr::constant(p * l * sys.c());
    robust_decrease(&mut prob, "margin", sys, &pe, &plc, &m.expr().times_identity(n), 0.0, y, method)?;
    prob.maximize(m.expr());
    let rep = lmi::solve(&prob).into_result().map_err(from_lmi)?;
    Ok(rep.x[m.0])
}

/// Certified decay margin `max(m, 0)`; zero means "not certified".
pub fn verify_design(sys: &QuadSystem, l: &DMatrix<f64>, p: &DMatrix<f64>, y: &UncertaintyRegion) -> f64 {
    if p.shape() != (sys.n(), sys.n()) || l.shape() != (sys.n(), sys.p()) || linalg::lambda_min_sym(p) <= 0.0 {
        return 0.0;
    }
    design_margin(sys, l, p, y, RobustMethod::Auto).map(|m| m.max(0.0)).unwrap_or(0.0)
}

/// `min_y −λmax(P(A_y + LC) + (·)ᵀP)` over the probe points and `samples`
/// random points of `Y`. An upper bound on the true margin.
pub fn sampled_margin(
    sys: &QuadSystem,
    l: &DMatrix<f64>,
    p: &DMatrix<f64>,
    y: &UncertaintyRegion,
    samples: usize,
    seed: u64,
) -> Result<f64, SynthError> {
    check_region(sys, y)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let lc = l * sys.c();
    let at = |pt: &DVector<f64>| -> Result<f64, SynthError> {
        let m = p * (model::perturbed_a(sys, pt)? + &lc);
        Ok(-linalg::lambda_max_sym(&(&m + m.transpose())))
    };
    let mut worst = f64::INFINITY;
    for pt in y.probe_points() {
        worst = worst.min(at(&pt)?);
    }
    for _ in 0..samples {
        worst = worst.min(at(&y.sample(&mut rng))?);
    }
    Ok(worst)
}

/// Iterative refinement of a pipeline outcome: alternately re-fit `P` for
/// the current gain and `L` for the new `P`, recomputing the observer ball
/// until the inclusion test passes or `max_iter` rounds have run.
pub fn alg2_iterate(
    sys: &QuadSystem,
    init: &Alg1Outcome,
    max_iter: usize,
    opts: &Alg2Options,
) -> Result<Vec<Alg2State>, SynthError> {
    let y = &init.design.region;
    check_region(sys, y)?;
    let (n, p) = (sys.n(), sys.p());
    let cap = opts.pcap.unwrap_or(init.alpha2);
    if !(cap > 0.0) {
        return Err(SynthError::NonPositiveArgument(format!("pcap = {cap}")));
    }
    // Both steps are homogeneous in P, so the strictness margin is scaled
    // with the cap to stay meaningful relative to the size of P.
    let eps = opts.margin.unwrap_or_else(|| lmi::strict_margin(sys.a()) * cap.max(1.0));
    let state_ball = &init.state_cert.ball;
    let mut l_k = init.design.l.clone();
    let mut p_prev = {
        let lmax = linalg::lambda_max_sym(&init.design.p);
        if lmax > cap { &init.design.p * (cap / lmax) } else { init.design.p.clone() }
    };
    let mut out = Vec::new();
    for k in 1..=max_iter {
        let warm_start_ok = design_margin(sys, &l_k, &p_prev, y, opts.method)
            .map(|m| m >= -10.0 * lmi::feas_tol() * (1.0 + linalg::spectral_norm(&p_prev)))
            .unwrap_or(false);

        // Step 1: best-conditioned Lyapunov matrix for the current gain.
        let mut prob = SdpProblem::new();
        let pv = prob.symmetric("P", n);
        let al = prob.scalar("alpha");
        let pe = pv.expr();
        prob.psd("P>=aI", pe.clone() - al.expr().times_identity(n));
        prob.psd("P<=cap", -pe.clone() + &(cap * DMatrix::identity(n, n)));
        let plc = pe.right_mul(&(&l_k * sys.c()));
        robust_decrease(&mut prob, "step1", sys, &pe, &plc, &MatExpr::zeros(n, n), eps, y, opts.method)?;
        prob.maximize(al.expr());
        let rep = lmi::solve(&prob)
            .into_result()
            .map_err(|e| SynthError::IterationStalled { k, step: 1, msg: e.to_string() })?;
        let p_k = pv.value(&rep.x);
        let alpha = rep.x[al.0];

        // Step 2: smallest-norm gain for the new Lyapunov matrix.
        let (l_next, beta) = alg2_step2(sys, &p_k, y, eps, opts, k)?;
        let lc_norm = linalg::spectral_norm(&(&l_next * sys.c()));
        let gain_bound_holds = alpha > 0.0 && lc_norm <= beta / alpha * (1.0 + 1e-6) + 1e-9;

        // Steps 3 and 4.
        let (obs_ball, obs_failure) = match trapping::observer_trap_sdp(sys, &l_next, state_ball, &init.q) {
            Ok(c) => (Some(c.ball), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let inc = inclusion(y, state_ball, obs_ball.as_ref());
        out.push(Alg2State {
            k,
            p: p_k.clone(),
            l: l_next.clone(),
            alpha,
            beta,
            lc_norm,
            obs_ball,
            obs_failure,
            inclusion: inc,
            gain_bound_holds,
            warm_start_ok,
        });
        l_k = l_next;
        p_prev = p_k;
        if inc {
            break;
        }
    }
    debug_assert!(out.iter().all(|s| s.l.shape() == (n, p)));
    Ok(out)
}

fn alg2_step2(
    sys: &QuadSystem,
    p_k: &DMatrix<f64>,
    y: &UncertaintyRegion,
    eps: f64,
    opts: &Alg2Options,
    k: usize,
) -> Result<(DMatrix<f64>, f64), SynthError> {
    let (n, p) = (sys.n(), sys.p());
    let build = |prob: &mut SdpProblem| -> Result<(lmi::MatVar, lmi::Scalar, MatExpr), SynthError> {
        let lv = prob.matrix("L", n, p);
        let be = prob.scalar("beta");
        let lc = lv.expr().right_mul(sys.c());
        let bi = be.expr().times_identity(n);
        let lct = lc.transpose();
        prob.psd("|LC|<=beta", MatExpr::bmat(&[vec![Some(&bi), Some(&lc)], vec![Some(&lct), Some(&bi)]]));
        let pe = MatExpr::constant(p_k.clone());
        robust_decrease(prob, "step2", sys, &pe, &lc.left_mul(p_k), &MatExpr::zeros(n, n), eps, y, opts.method)?;
        Ok((lv, be, lc))
    };
    let mut prob = SdpProblem::new();
    let (lv, be, _) = build(&mut prob)?;
    prob.minimize(be.expr());
    let rep = lmi::solve(&prob)
        .into_result()
        .map_err(|e| SynthError::IterationStalled { k, step: 2, msg: e.to_string() })?;
    let beta = rep.x[be.0];
    let mut l = lv.value(&rep.x);
    if opts.trace_tie_break {
        let mut prob = SdpProblem::new();
        let (lv2, be2, lc) = build(&mut prob)?;
        prob.nonneg("beta<=beta*", LinExpr::constant(beta * (1.0 + 1e-6) + 1e-9) - be2.expr());
        let w = prob.symmetric("W", n);
        let we = w.expr();
        let lct = lc.transpose();
        let id = MatExpr::identity(n);
        prob.psd("W>=(LC)'LC", MatExpr::bmat(&[vec![Some(&we), Some(&lct)], vec![Some(&lc), Some(&id)]]));
        prob.minimize(w.trace());
        if let Ok(rep2) = lmi::solve(&prob).into_result() {
            l = lv2.value(&rep2.x);
        }
    }
    Ok((l, beta))
}

/// Packages the last refinement round as a region-certified design.
pub fn alg2_design(sys: &QuadSystem, init: &Alg1Outcome, states: &[Alg2State]) -> Result<ObserverDesign, SynthError> {
    let last = states.last().ok_or_else(|| SynthError::NumericalTrouble("no refinement rounds were run".into()))?;
    let y = &init.design.region;
    let m = design_margin(sys, &last.l, &last.p, y, RobustMethod::Auto)?;
    if m <= 0.0 {
        return Err(SynthError::Infeasible { reason: format!("final design margin {m:.3e} is not positive"), pbh_point: None });
    }
    let mut warnings = Vec::new();
    if !last.inclusion {
        warnings.push(format!("inclusion test not satisfied after {} rounds", last.k));
    }
    design_from(sys, last.l.clone(), last.p.clone(), y.clone(), m, Method::Iterative, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalOptions {
    /// `I ⪯ P ⪯ κI` and `‖RC‖₂ <= κ`; defaults to `κ = 1000`. The problem
    /// is homogeneous in `(P, R, m)`, so fixing the lower bound at `I` loses
    /// nothing and `κ` acts as a bound on the condition number of `P`.
    pub pcap: Option<f64>,
    pub method: RobustMethod,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        Self { pcap: None, method: RobustMethod::Auto }
    }
}

/// Global synthesis with `P` restricted to the subspace on which the
/// nonlinearity drops out of the Lyapunov derivative.
pub fn global_synth(
    sys: &QuadSystem,
    y: &UncertaintyRegion,
    state_cert: &TrappingCert,
    opts: &GlobalOptions,
) -> Result<ObserverDesign, SynthError> {
    check_region(sys, y)?;
    let mut warnings = Vec::new();
    if let Ok(false) = trapping::region_contains(y, &state_cert.ball) {
        warnings.push("Y does not contain the certified state ball".to_string());
    }
    let n = sys.n();
    let sn = model::sn_basis(sys)?;
    let cap = opts.pcap.unwrap_or(1e3);
    if !(cap >= 1.0) {
        return Err(SynthError::NonPositiveArgument(format!("pcap must be >= 1, got {cap}")));
    }
    let eps = lmi::strict_margin(sys.a());
    let mut prob = SdpProblem::new();
    let coef = prob.vector("c", sn.dim);
    let rv = prob.matrix("R", n, sys.p());
    let m = prob.scalar("m");
    let vars: Vec<usize> = (0..sn.dim).map(|j| coef.index(j, 0)).collect();
    let pe = MatExpr::combination(&vars, &sn.basis);
    prob.psd("P>=I", pe.clone() + &(-DMatrix::identity(n, n)));
    prob.psd("P<=cap", -pe.clone() + &(cap * DMatrix::identity(n, n)));
    prob.nonneg("m>=eps", m.expr() + (-eps));
    let rc = rv.expr().right_mul(sys.c());
    let ki = MatExpr::constant(cap * DMatrix::identity(n, n));
    let rct = rc.transpose();
    prob.psd("|RC|<=cap", MatExpr::bmat(&[vec![Some(&ki), Some(&rc)], vec![Some(&rct), Some(&ki)]]));
    robust_decrease(&mut prob, "global", sys, &pe, &rc, &m.expr().times_identity(n), 0.0, y, opts.method)?;
    prob.maximize(m.expr());
    let rep = lmi::solve(&prob).into_result().map_err(from_lmi)?;
    let pm = pe.eval(&rep.x);
    let l = gain_from(&pm, &rv.value(&rep.x), &mut warnings)?;
    design_from(sys, l, pm, y.clone(), rep.x[m.0], Method::Global, warnings)
}

/// Largest `γ` with `[[PA + AᵀP + RC + CᵀRᵀ + I, P], [P, −γ⁻²I]] ≺ 0`
/// feasible, found by minimizing `μ = γ⁻²`.
pub fn lipschitz_margin(sys: &QuadSystem) -> Result<f64, SynthError> {
    let n = sys.n();
    let eps = lmi::strict_margin(sys.a());
    let mut prob = SdpProblem::new();
    let pv = prob.symmetric("P", n);
    let rv = prob.matrix("R", n, sys.p());
    let mu = prob.scalar("mu");
    let pe = pv.expr();
    prob.psd("P>0", pe.clone() + &(-eps * DMatrix::identity(n, n)));
    let top = (pe.right_mul(sys.a()) + rv.expr().right_mul(sys.c())).plus_transpose() + &DMatrix::identity(n, n);
    let corner = -mu.expr().times_identity(n);
    prob.nsd("lipschitz", MatExpr::bmat(&[vec![Some(&top), Some(&pe)], vec![Some(&pe), Some(&corner)]]), eps);
    prob.minimize(mu.expr());
    let rep = lmi::solve(&prob).into_result().map_err(from_lmi)?;
    let m = rep.x[mu.0];
    if !(m > 0.0) {
        return Err(SynthError::NumericalTrouble(format!("non-positive μ* = {m:.3e}")));
    }
    Ok(1.0 / m.sqrt())
}

/// `(A_{(x+x̂)/2} − A)(x − x̂)`, which equals `N(x)x − N(x̂)x̂`.
pub fn error_rewrite(sys: &QuadSystem, x: &DVector<f64>, xhat: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    let mid = (x + xhat) * 0.5;
    Ok((model::perturbed_a(sys, &mid)? - sys.a()) * (x - xhat))
}

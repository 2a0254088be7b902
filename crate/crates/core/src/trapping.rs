//! Invariant balls for the plant and for the observer.
//!
//! The plant certificate comes from the SDP
//! `min s` over `(s, t, z)` with
//! `[[s, (Az)ᵀ], [Az, sI]] ⪰ 0`, `tA + (A_z − A) + I ⪯ 0`, `t >= 0`, `Qz = 0`,
//! whose optimum yields the invariant ball `B_s(z/t)` with decay rate
//! `1/t`. The observer version adds the output injection `LC` and the
//! state ball it is driven by.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::lmi::{self, LinExpr, LmiError, MatExpr, SdpProblem, UncertaintyRegion};
use crate::model::{self, FluidModel, ModelError, QuadSystem};
use crate::serde_util;

/// Threshold on `s*` and `‖z*‖` below which the plant certificate is the
/// degenerate "any ball around the origin" outcome.
pub const DEGENERATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrapError {
    #[error("A_d + αI is not negative semidefinite: largest eigenvalue exceeds the bound by {excess:.3e}")]
    NotDissipative { excess: f64 },
    #[error("closed loop A + LC is not Hurwitz (spectral abscissa {abscissa:.6})")]
    UnstableClosedLoop { abscissa: f64 },
    #[error("Q does not satisfy the kernel condition: {0}")]
    InvalidQ(String),
    #[error("ker A ∩ ker Q is nontrivial, so the trapping SDP need not attain its minimum")]
    KernelIntersection,
    #[error("trapping SDP infeasible: {0}")]
    Infeasible(String),
    #[error("trapping SDP numerical trouble: {0}")]
    NumericalTrouble(String),
    #[error("unsupported region form: {0}")]
    UnsupportedRegionForm(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<LmiError> for TrapError {
    fn from(e: LmiError) -> Self {
        match e {
            LmiError::Infeasible(m) => TrapError::Infeasible(m),
            LmiError::UnsupportedRegionForm(m) => TrapError::UnsupportedRegionForm(m),
            other => TrapError::NumericalTrouble(other.to_string()),
        }
    }
}

/// Closed Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    #[serde(with = "serde_util::vec")]
    pub center: DVector<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: DVector<f64>, radius: f64) -> Self {
        assert!(radius >= 0.0, "ball radius must be nonnegative");
        Self { center, radius }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (x - &self.center).norm() <= self.radius
    }

    pub fn to_region(&self) -> UncertaintyRegion {
        UncertaintyRegion::ball2(self.center.clone(), self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertKind {
    State,
    Observer,
    Fluid,
    Degenerate,
}

/// Optimal `(s, t, z)` of the trapping SDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub s: f64,
    pub t: f64,
    #[serde(with = "serde_util::vec")]
    pub z: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappingCert {
    pub ball: Ball,
    /// Decay rate `1/t*`.
    pub alpha: f64,
    pub witness: Witness,
    pub kind: CertKind,
}

impl TrappingCert {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate fields are finite")
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

fn verify_tol(scale: f64) -> f64 {
    10.0 * lmi::feas_tol() * (1.0 + scale)
}

/// Smallest radius `(1/α) ‖A d + N(d) d‖` of an invariant ball around `d`
/// given that `A_d + αI ⪯ 0`.
pub fn trap_radius(sys: &QuadSystem, d: &DVector<f64>, alpha: f64) -> Result<f64, TrapError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TrapError::NotDissipative { excess: f64::INFINITY });
    }
    let ad = model::perturbed_a(sys, d)?;
    let excess = linalg::lambda_max_sym(&ad) + alpha;
    if excess > 1e-9 * (1.0 + linalg::spectral_norm(&ad)) {
        return Err(TrapError::NotDissipative { excess });
    }
    Ok((sys.a() * d + sys.quad(d)).norm() / alpha)
}

/// Validates `Q` against the kernel condition and returns it.
fn check_q(sys: &QuadSystem, q: &DMatrix<f64>) -> Result<(), TrapError> {
    let n = sys.n();
    if q.shape() != (n, n) {
        return Err(ModelError::DimensionMismatch {
            what: "Q".into(),
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", q.nrows(), q.ncols()),
        }
        .into());
    }
    let kernel = linalg::nullspace(q, model::NULLSPACE_TOL);
    if kernel.ncols() > 0 && !model::kernel_q(sys, Some(&kernel))?.valid {
        return Err(TrapError::InvalidQ("N(d)d does not vanish on ker Q".into()));
    }
    let stacked = DMatrix::from_fn(2 * n, n, |r, c| if r < n { sys.a()[(r, c)] } else { q[(r - n, c)] });
    if linalg::rank(&stacked, 1e-12) < n {
        return Err(TrapError::KernelIntersection);
    }
    Ok(())
}

/// `[[w, vᵀ], [v, w I]]` with `w` scalar and `v` an `n×1` expression.
fn norm_block(w: &LinExpr, v: &MatExpr) -> MatExpr {
    let n = v.nrows();
    let w1 = w.to_mat();
    let wn = w.times_identity(n);
    let vt = v.transpose();
    MatExpr::bmat(&[vec![Some(&w1), Some(&vt)], vec![Some(v), Some(&wn)]])
}

struct TrapVars {
    prob: SdpProblem,
    s: lmi::Scalar,
    t: lmi::Scalar,
    z: lmi::MatVar,
}

/// Shared skeleton of both trapping SDPs: `closed` is `A` for the plant and
/// `A + LC` for the observer, `v` builds the off-diagonal vector and `shift`
/// is subtracted from `s` on the block diagonal.
fn trap_problem(
    sys: &QuadSystem,
    q: &DMatrix<f64>,
    closed: &DMatrix<f64>,
    shift_per_t: f64,
    v: impl Fn(&lmi::Scalar, &MatExpr) -> MatExpr,
) -> TrapVars {
    let n = sys.n();
    let mut prob = SdpProblem::new();
    let s = prob.scalar("s");
    let t = prob.scalar("t");
    let z = prob.vector("z", n);
    let w = s.expr() - t.expr().scale(shift_per_t);
    let ve = v(&t, &z.expr());
    prob.psd("norm-bound", norm_block(&w, &ve));
    let zvars: Vec<usize> = (0..n).map(|i| z.index(i, 0)).collect();
    let decay = MatExpr::var_times(t.0, closed) + MatExpr::combination(&zvars, &model::perturbation_basis(sys))
        + &DMatrix::identity(n, n);
    prob.nsd("decay", decay, 0.0);
    prob.nonneg("t>=0", t.expr());
    if linalg::max_abs(q) > 0.0 {
        prob.eq_zero("Qz=0", z.expr().left_mul(q));
    }
    prob.minimize(s.expr());
    TrapVars { prob, s, t, z }
}

fn finish(
    sys: &QuadSystem,
    vars: &TrapVars,
    closed_offset: &DMatrix<f64>,
    kind: CertKind,
) -> Result<TrappingCert, TrapError> {
    let rep = lmi::solve(&vars.prob).into_result()?;
    let s = rep.x[vars.s.0];
    let t = rep.x[vars.t.0];
    let z = vars.z.vector_value(&rep.x);
    let witness = Witness { s, t, z: z.clone() };
    if s <= DEGENERATE_TOL && z.norm() <= DEGENERATE_TOL {
        let sa = linalg::lambda_max_sym(&(sys.a() + closed_offset));
        if sa >= 0.0 {
            return Err(TrapError::NumericalTrouble(format!(
                "degenerate optimum but the symmetric part of the dynamics has eigenvalue {sa:.3e} >= 0"
            )));
        }
        let ball = Ball::new(DVector::zeros(sys.n()), s.max(0.0));
        return Ok(TrappingCert { ball, alpha: 1.0 / t, witness, kind: CertKind::Degenerate });
    }
    if t <= 0.0 {
        return Err(TrapError::NumericalTrouble(format!("non-positive t* = {t:.3e}")));
    }
    let d = &z / t;
    let alpha = 1.0 / t;
    // Independent check of the dissipativity inequality at the center.
    let ad = model::perturbed_a(sys, &d)? + closed_offset;
    let lmax = linalg::lambda_max_sym(&ad);
    let scale = linalg::spectral_norm(&ad) + alpha;
    if lmax > -alpha + verify_tol(scale) * (1.0 + alpha) {
        return Err(TrapError::NumericalTrouble(format!(
            "certificate check failed: λmax(sym A_d) = {lmax:.6e} > −α = {:.6e}",
            -alpha
        )));
    }
    Ok(TrappingCert { ball: Ball::new(d, s.max(0.0)), alpha, witness, kind })
}

/// Plant trapping ball from the SDP with kernel constraint `Qz = 0`.
pub fn state_trap_sdp(sys: &QuadSystem, q: &DMatrix<f64>) -> Result<TrappingCert, TrapError> {
    check_q(sys, q)?;
    let a = sys.a().clone();
    let vars = trap_problem(sys, q, &a, 0.0, |_, z| z.left_mul(&a));
    let cert = finish(sys, &vars, &DMatrix::zeros(sys.n(), sys.n()), CertKind::State)?;
    if cert.kind == CertKind::State {
        // The optimum is the smallest-ball formula at its own center.
        let formula = trap_radius(sys, &cert.ball.center, cert.alpha * (1.0 - 1e-9)).unwrap_or(f64::NAN);
        if !(formula <= cert.ball.radius + verify_tol(cert.ball.radius)) {
            return Err(TrapError::NumericalTrouble(format!(
                "radius {} is below the invariance bound {formula}",
                cert.ball.radius
            )));
        }
    }
    Ok(cert)
}

/// Observer trapping ball for a fixed gain `L` driven by a plant trapped in
/// `state_ball`.
pub fn observer_trap_sdp(
    sys: &QuadSystem,
    l: &DMatrix<f64>,
    state_ball: &Ball,
    q: &DMatrix<f64>,
) -> Result<TrappingCert, TrapError> {
    let (n, p) = (sys.n(), sys.p());
    if l.shape() != (n, p) {
        return Err(ModelError::DimensionMismatch {
            what: "L".into(),
            expected: format!("{n}x{p}"),
            got: format!("{}x{}", l.nrows(), l.ncols()),
        }
        .into());
    }
    if state_ball.center.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "state ball center".into(),
            expected: n.to_string(),
            got: state_ball.center.len().to_string(),
        }
        .into());
    }
    let lc = l * sys.c();
    let closed = sys.a() + &lc;
    let abscissa = linalg::spectral_abscissa(&closed);
    if abscissa >= 0.0 {
        return Err(TrapError::UnstableClosedLoop { abscissa });
    }
    if linalg::max_abs(&lc) == 0.0 {
        return state_trap_sdp(sys, q);
    }
    check_q(sys, q)?;
    let nlc = linalg::spectral_norm(&lc);
    let r = state_ball.radius;
    let lcd = &lc * &state_ball.center;
    let vars = trap_problem(sys, q, &closed, r * nlc, |t, z| {
        MatExpr::var_times(t.0, &DMatrix::from_column_slice(n, 1, lcd.as_slice())) - z.left_mul(&closed)
    });
    let cert = finish(sys, &vars, &lc, CertKind::Observer)?;
    Ok(cert)
}

/// Ellipsoid `Σ λ_i (u_i − m_i)² <= ρ²` in shifted coordinates `u = x + c`
/// outside of which `½‖u‖²` strictly decreases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidTrap {
    /// `B_r(−c)`.
    pub ball: Ball,
    pub degenerate: bool,
    #[serde(with = "serde_util::vec")]
    pub ellipsoid_center: DVector<f64>,
    #[serde(with = "serde_util::vec")]
    pub ellipsoid_weights: DVector<f64>,
    pub ellipsoid_level: f64,
}

/// Smallest ball around `−c` containing the ellipsoid on which the kinetic
/// energy of the full flow `u = x + c` can grow; that ball is invariant.
pub fn fluid_trap(fm: &FluidModel) -> Result<FluidTrap, TrapError> {
    let n = fm.n();
    let sys0 = QuadSystem::new_unchecked(DMatrix::zeros(n, n), fm.nmats.clone(), fm.cmat.clone())?;
    let lam = &fm.lambda;
    let g = fm.big_lambda() * &fm.c / fm.re + sys0.quad(&fm.c);
    let m = DVector::from_fn(n, |i, _| -fm.re * g[i] / (2.0 * lam[i]));
    let rho2: f64 = (0..n).map(|i| fm.re * fm.re * g[i] * g[i] / (4.0 * lam[i])).sum();
    let center = -&fm.c;
    let mk = |radius: f64, degenerate: bool| FluidTrap {
        ball: Ball::new(center.clone(), radius),
        degenerate,
        ellipsoid_center: m.clone(),
        ellipsoid_weights: lam.clone(),
        ellipsoid_level: rho2,
    };
    if rho2 <= f64::MIN_POSITIVE {
        return Ok(mk(0.0, true));
    }
    Ok(mk(max_norm_on_ellipsoid(lam, &m, rho2), false))
}

/// `max ‖u‖` subject to `Σ λ_i (u_i − m_i)² <= ρ²` via the secular equation
/// `Σ λ_i m_i² / (μλ_i − 1)² = ρ²` on `μ > 1/λ_min`.
pub fn max_norm_on_ellipsoid(lam: &DVector<f64>, m: &DVector<f64>, rho2: f64) -> f64 {
    let n = lam.len();
    let lmin = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let is_min: Vec<bool> = lam.iter().map(|l| *l <= lmin * (1.0 + 1e-12)).collect();
    let mscale = m.amax().max(rho2.sqrt());
    let hard = (0..n).filter(|&i| is_min[i]).all(|i| m[i].abs() <= 1e-14 * mscale);
    let phi = |mu: f64| -> f64 {
        (0..n)
            .filter(|&i| !(hard && is_min[i]))
            .map(|i| lam[i] * m[i] * m[i] / (mu * lam[i] - 1.0).powi(2))
            .sum()
    };
    let u_of = |mu: f64| DVector::from_fn(n, |i, _| mu * lam[i] * m[i] / (mu * lam[i] - 1.0));
    let mu0 = 1.0 / lmin;
    if hard {
        let phi0 = phi(mu0);
        if phi0 <= rho2 {
            let nonmin: f64 = (0..n)
                .filter(|&i| !is_min[i])
                .map(|i| (mu0 * lam[i] * m[i] / (mu0 * lam[i] - 1.0)).powi(2))
                .sum();
            return (nonmin + (rho2 - phi0) / lmin).sqrt();
        }
    }
    let mut lo = mu0;
    let mut hi = 2.0 * mu0;
    while phi(hi) > rho2 {
        lo = hi;
        hi *= 2.0;
    }
    // φ is decreasing on (1/λ_min, ∞).
    while (hi - lo) > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > rho2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = u_of(0.5 * (lo + hi));
    if hard {
        for i in 0..n {
            if is_min[i] {
                u[i] = 0.0;
            }
        }
    }
    u.norm()
}

/// `½ (B_{r1}(d1) ⊕ B_{r2}(d2)) = B_{(r1+r2)/2}((d1+d2)/2)`.
pub fn half_minkowski(b1: &Ball, b2: &Ball) -> Ball {
    Ball::new((&b1.center + &b2.center) * 0.5, 0.5 * (b1.radius + b2.radius))
}

/// Exact ball-in-region test.
pub fn region_contains(y: &UncertaintyRegion, b: &Ball) -> Result<bool, TrapError> {
    let slack = |lhs: f64, rhs: f64| lhs <= rhs + 1e-12 * (1.0 + rhs.abs());
    match y {
        UncertaintyRegion::Ball2 { center, radius } => Ok(slack((center - &b.center).norm() + b.radius, *radius)),
        UncertaintyRegion::Ball1 { center, radius } => {
            let n = center.len() as f64;
            Ok(slack((&b.center - center).lp_norm(1) + b.radius * n.sqrt(), *radius))
        }
        UncertaintyRegion::Polytope { faces: Some(faces), .. } => {
            Ok(faces.iter().all(|f| slack(f.normal.dot(&b.center) + b.radius * f.normal.norm(), f.offset)))
        }
        UncertaintyRegion::Polytope { faces: None, .. } => Err(TrapError::UnsupportedRegionForm(
            "containment in a vertex-only polytope is not supported; give the face form".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lmi::Face;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn neg_identity(n: usize) -> QuadSystem {
        model::build_system(-DMatrix::identity(n, n), vec![DMatrix::zeros(n, n); n], DMatrix::identity(n, n))
            .unwrap()
    }

    fn q_lorenz() -> DMatrix<f64> {
        DMatrix::from_diagonal(&v(&[1.0, 0.0, 0.0]))
    }

    #[test]
    fn trap_radius_examples() {
        let s = fixtures::lorenz();
        let r = trap_radius(&s, &v(&[0.0, 0.0, 37.5]), 0.9930).unwrap();
        assert!((r - 100.0 / 0.9930).abs() < 1e-9);
        assert_eq!(trap_radius(&neg_identity(2), &DVector::zeros(2), 1.0).unwrap(), 0.0);
        assert!(matches!(trap_radius(&s, &DVector::zeros(3), 0.5), Err(TrapError::NotDissipative { .. })));
    }

    #[test]
    fn lorenz_state_trap() {
        let c = state_trap_sdp(&fixtures::lorenz(), &q_lorenz()).unwrap();
        assert_eq!(c.kind, CertKind::State);
        assert!((c.ball.radius - 100.7).abs() < 0.01 * 100.7, "{c:?}");
        assert!((&c.ball.center - v(&[0.0, 0.0, 37.5])).norm() < 0.5);
        // The SDP optimum agrees with the closed-form radius at its own center.
        let formula = trap_radius(&fixtures::lorenz(), &c.ball.center, c.alpha * (1.0 - 1e-7)).unwrap();
        assert!((formula - c.ball.radius).abs() < 1e-4 * c.ball.radius);
    }

    #[test]
    fn degenerate_for_stable_linear() {
        let c = state_trap_sdp(&neg_identity(3), &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(c.kind, CertKind::Degenerate);
        assert!(c.witness.s <= 1e-6 && c.witness.z.norm() <= 1e-6);
    }

    #[test]
    fn invalid_q_rejected() {
        // N(d)d = (0, 0, 1) for d = e1 + e2, so that direction may not lie in ker Q.
        let b = v(&[1.0, 1.0, 0.0]) / 2.0_f64.sqrt();
        let q = DMatrix::identity(3, 3) - &b * b.transpose();
        assert!(matches!(state_trap_sdp(&fixtures::lorenz(), &q), Err(TrapError::InvalidQ(_))));
    }

    #[test]
    fn observer_trap_delegation_and_instability() {
        let lin = neg_identity(2);
        let c = observer_trap_sdp(&lin, &DMatrix::zeros(2, 2), &Ball::new(DVector::zeros(2), 1.0), &DMatrix::zeros(2, 2))
            .unwrap();
        assert_eq!(c.kind, CertKind::Degenerate);
        let lor = fixtures::lorenz();
        let ball = Ball::new(v(&[0.0, 0.0, 37.5]), 100.7);
        let err = observer_trap_sdp(&lor, &DMatrix::zeros(3, 1), &ball, &q_lorenz()).unwrap_err();
        assert!(matches!(err, TrapError::UnstableClosedLoop { .. }));
    }

    #[test]
    fn observer_trap_lorenz_l5() {
        let lor = fixtures::lorenz();
        let state = state_trap_sdp(&lor, &q_lorenz()).unwrap();
        let l5 = DMatrix::from_column_slice(3, 1, &[-10.0, -13.3, 0.0]);
        let c = observer_trap_sdp(&lor, &l5, &state.ball, &q_lorenz()).unwrap();
        assert_eq!(c.kind, CertKind::Observer);
        // Necessary condition from the norm block.
        let nlc = linalg::spectral_norm(&(&l5 * lor.c()));
        assert!(c.ball.radius >= state.ball.radius * nlc * c.witness.t - 1e-6);
        assert!((&c.ball.center - v(&[0.0, 0.0, 9.2])).norm() < 0.5, "{:?}", c.ball);
    }

    #[test]
    fn fluid_trap_examples() {
        let t = fluid_trap(&fixtures::mfe9()).unwrap();
        assert!(!t.degenerate);
        assert!((t.ball.radius - 1.0).abs() < 1e-8, "{}", t.ball.radius);
        assert_eq!(t.ball.center[0], -1.0);

        let mut zero_c = fixtures::mfe9();
        zero_c.c = DVector::zeros(9);
        let t0 = fluid_trap(&zero_c).unwrap();
        assert!(t0.degenerate && t0.ball.radius == 0.0);
    }

    fn toy_fluid() -> FluidModel {
        FluidModel::new(v(&[1.0, 2.0]), v(&[1.0, 0.0]), 1.0, vec![DMatrix::zeros(2, 2); 2], DMatrix::identity(1, 2))
            .unwrap()
    }

    #[test]
    fn fluid_toy_matches_grid_oracle() {
        let t = fluid_trap(&toy_fluid()).unwrap();
        // Grid oracle: parametrize the ellipsoid boundary and maximize ‖u‖.
        let (m, lam, rho2) = (&t.ellipsoid_center, &t.ellipsoid_weights, t.ellipsoid_level);
        let mut best = 0.0_f64;
        let steps = 2_000_000;
        for k in 0..steps {
            let th = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
            let u0 = m[0] + (rho2 / lam[0]).sqrt() * th.cos();
            let u1 = m[1] + (rho2 / lam[1]).sqrt() * th.sin();
            best = best.max((u0 * u0 + u1 * u1).sqrt());
        }
        assert!((t.ball.radius - best).abs() < 1e-6, "{} vs {best}", t.ball.radius);
        assert!((t.ball.radius - 1.0).abs() < 1e-8);
    }

    #[test]
    fn secular_solver_generic_case() {
        // Off-axis center so the maximizer is not on a coordinate axis.
        let lam = v(&[1.0, 3.0, 5.0]);
        let m = v(&[0.4, -0.7, 0.2]);
        let rho2 = 1.3;
        let r = max_norm_on_ellipsoid(&lam, &m, rho2);
        let mut best = 0.0_f64;
        let k = 400;
        for i in 0..k {
            let th = std::f64::consts::PI * (i as f64 + 0.5) / k as f64;
            for j in 0..2 * k {
                let ph = std::f64::consts::PI * j as f64 / k as f64;
                let dir = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                let u = DVector::from_fn(3, |q, _| m[q] + (rho2 / lam[q]).sqrt() * dir[q]);
                best = best.max(u.norm());
            }
        }
        assert!(r >= best - 1e-9 && r - best < 1e-3, "{r} vs {best}");
    }

    #[test]
    fn minkowski_and_containment() {
        let b1 = Ball::new(v(&[0.0, 0.0, 37.5]), 100.7);
        let b2 = Ball::new(v(&[0.0, 0.0, 9.2]), 1282.6);
        let h = half_minkowski(&b1, &b2);
        assert!((h.radius - 691.65).abs() < 1e-9);
        assert!((&h.center - v(&[0.0, 0.0, 23.35])).norm() < 1e-12);
        assert_eq!(half_minkowski(&b1, &b1), b1);
        let pt = Ball::new(v(&[0.0, 0.0, 1.5]), 0.0);
        let hp = half_minkowski(&b1, &pt);
        assert!((hp.radius - 50.35).abs() < 1e-12 && (hp.center[2] - 19.5).abs() < 1e-12);

        let y = UncertaintyRegion::ball2(v(&[0.0, 0.0, 37.5]), 1200.0);
        assert!(region_contains(&y, &h).unwrap());
        assert!(region_contains(&b1.to_region(), &b1).unwrap());
        let l1 = UncertaintyRegion::ball1(DVector::zeros(2), 2.0_f64.sqrt());
        assert!(region_contains(&l1, &Ball::new(DVector::zeros(2), 1.0)).unwrap());
        assert!(!region_contains(&l1, &Ball::new(DVector::zeros(2), 1.0 + 1e-9)).unwrap());
    }

    #[test]
    fn polytope_containment() {
        let faces = vec![
            Face { normal: v(&[1.0, 0.0]), offset: 1.0 },
            Face { normal: v(&[-1.0, 0.0]), offset: 1.0 },
            Face { normal: v(&[0.0, 1.0]), offset: 1.0 },
            Face { normal: v(&[0.0, -1.0]), offset: 1.0 },
        ];
        let square = UncertaintyRegion::Polytope { vertices: vec![v(&[1.0, 1.0])], faces: Some(faces) };
        assert!(region_contains(&square, &Ball::new(DVector::zeros(2), 1.0)).unwrap());
        assert!(!region_contains(&square, &Ball::new(v(&[0.5, 0.0]), 0.6)).unwrap());
        let vonly = UncertaintyRegion::Polytope { vertices: vec![v(&[1.0, 1.0])], faces: None };
        assert!(matches!(region_contains(&vonly, &Ball::new(DVector::zeros(2), 1.0)), Err(TrapError::UnsupportedRegionForm(_))));
    }

    #[test]
    fn cert_json_round_trip() {
        let c = state_trap_sdp(&fixtures::lorenz(), &q_lorenz()).unwrap();
        assert_eq!(TrappingCert::from_json(&c.to_json()).unwrap(), c);
    }
}

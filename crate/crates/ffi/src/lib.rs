//! C interface to `obsv`.
//!
//! Systems and designs are opaque handles created by `obsv_*` constructors
//! and released with the matching `*_free` function. Every fallible call
//! returns an [`ObsvStatus`]; on failure a message is available from
//! [`obsv_last_error`] on the calling thread. Matrices cross the boundary
//! as row-major `double` arrays. Panics are caught and reported as
//! `OBSV_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use obsv::lmi::UncertaintyRegion;
use obsv::model::{self, ModelError, QuadSystem};
use obsv::sim::{self, SimError};
use obsv::synth::{self, ObserverDesign, SynthError};
use obsv::trapping::{self, TrapError};

/// Result codes. The numeric values of the first six match the exit codes
/// of the command-line tool where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Infeasible = 3,
    SimulationBlowup = 4,
    VerificationFailed = 5,
    Panic = 6,
    BufferTooSmall = 7,
}

/// Region shapes accepted by the synthesis calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsvRegionKind {
    /// Euclidean ball.
    Ball2 = 0,
    /// 1-norm ball.
    Ball1 = 1,
}

/// Opaque plant handle.
pub struct ObsvSystem {
    sys: QuadSystem,
}

/// Opaque observer design handle.
pub struct ObsvDesign {
    design: ObserverDesign,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Failure = (ObsvStatus, String);

fn invalid(msg: impl Into<String>) -> Failure {
    (ObsvStatus::InvalidArgument, msg.into())
}

fn from_model(e: ModelError) -> Failure {
    invalid(e.to_string())
}

fn from_trap(e: TrapError) -> Failure {
    match e {
        TrapError::Infeasible(_) | TrapError::NumericalTrouble(_) | TrapError::NotDissipative { .. } | TrapError::UnstableClosedLoop { .. } => {
            (ObsvStatus::Infeasible, e.to_string())
        }
        _ => invalid(e.to_string()),
    }
}

fn from_synth(e: SynthError) -> Failure {
    match e {
        SynthError::Trap(t) => from_trap(t),
        SynthError::Model(_) | SynthError::NonPositiveArgument(_) | SynthError::RegionMismatch(_) => invalid(e.to_string()),
        _ => (ObsvStatus::Infeasible, e.to_string()),
    }
}

fn from_sim(e: SimError) -> Failure {
    match e {
        SimError::NonFinite { .. } => (ObsvStatus::SimulationBlowup, e.to_string()),
        _ => invalid(e.to_string()),
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ObsvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ObsvStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            ObsvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((ObsvStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err((ObsvStatus::NullArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| (ObsvStatus::NullArgument, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| (ObsvStatus::NullArgument, format!("{what} is null")))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

unsafe fn write_out(buf: *mut f64, len: usize, data: &[f64], what: &str) -> Result<(), Failure> {
    if len < data.len() {
        return Err((ObsvStatus::BufferTooSmall, format!("{what} needs {} entries, got {len}", data.len())));
    }
    if buf.is_null() {
        return Err((ObsvStatus::NullArgument, format!("{what} is null")));
    }
    std::ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
    Ok(())
}

unsafe fn region(kind: ObsvRegionKind, center: *const f64, n: usize, radius: f64) -> Result<UncertaintyRegion, Failure> {
    let c = DVector::from_column_slice(slice_arg(center, n, "center")?);
    let r = match kind {
        ObsvRegionKind::Ball2 => UncertaintyRegion::ball2(c, radius),
        ObsvRegionKind::Ball1 => UncertaintyRegion::ball1(c, radius),
    };
    r.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(r)
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next `obsv_*` call on the same thread.
#[no_mangle]
pub extern "C" fn obsv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn obsv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sets the solver feasibility tolerance used for verification; a
/// non-positive value restores the default.
#[no_mangle]
pub extern "C" fn obsv_set_feas_tol(tol: f64) {
    obsv::lmi::set_feas_tol(tol);
}

/// Loads a shipped fixture (`"lorenz"` or `"mfe9"`).
#[no_mangle]
pub unsafe extern "C" fn obsv_system_from_fixture(name: *const c_char, out: *mut *mut ObsvSystem) -> ObsvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let name = str_arg(name, "name")?;
        let m = obsv::fixtures::by_name(name).ok_or_else(|| invalid(format!("unknown fixture '{name}'")))?;
        let sys = m.to_system().map_err(from_model)?;
        *out = Box::into_raw(Box::new(ObsvSystem { sys }));
        Ok(())
    })
}

/// Parses a model from JSON text (either the plain or the fluid form).
#[no_mangle]
pub unsafe extern "C" fn obsv_system_from_json(json: *const c_char, out: *mut *mut ObsvSystem) -> ObsvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(json, "json")?;
        let sys = model::parse_model(text).and_then(|m| m.to_system()).map_err(from_model)?;
        *out = Box::into_raw(Box::new(ObsvSystem { sys }));
        Ok(())
    })
}

/// Releases a system; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn obsv_system_free(sys: *mut ObsvSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State and output dimensions.
#[no_mangle]
pub unsafe extern "C" fn obsv_system_dims(sys: *const ObsvSystem, n: *mut usize, p: *mut usize) -> ObsvStatus {
    guard(|| {
        let s = ref_arg(sys, "sys")?;
        *out_arg(n, "n")? = s.sys.n();
        *out_arg(p, "p")? = s.sys.p();
        Ok(())
    })
}

/// Bound `γ` with `‖N(x)y‖ <= γ‖x‖‖y‖`-type estimates used for
/// convergence radii.
#[no_mangle]
pub unsafe extern "C" fn obsv_n_norm(sys: *const ObsvSystem, gamma: *mut f64) -> ObsvStatus {
    guard(|| {
        let s = ref_arg(sys, "sys")?;
        *out_arg(gamma, "gamma")? = model::n_norm(&s.sys);
        Ok(())
    })
}

/// Certifies a trapping ball with `ker Q` spanned by the unit vectors whose
/// zero-based indices are listed in `ker_idx`. `center` receives `n`
/// entries.
#[no_mangle]
pub unsafe extern "C" fn obsv_state_trap(
    sys: *const ObsvSystem,
    ker_idx: *const usize,
    nker: usize,
    center: *mut f64,
    center_len: usize,
    radius: *mut f64,
) -> ObsvStatus {
    guard(|| {
        let s = &ref_arg(sys, "sys")?.sys;
        let q = kernel_projector(s, ker_idx, nker)?;
        let cert = trapping::state_trap_sdp(s, &q).map_err(from_trap)?;
        let r = out_arg(radius, "radius")?;
        write_out(center, center_len, cert.ball.center.as_slice(), "center")?;
        *r = cert.ball.radius;
        Ok(())
    })
}

unsafe fn kernel_projector(s: &QuadSystem, ker_idx: *const usize, nker: usize) -> Result<DMatrix<f64>, Failure> {
    let n = s.n();
    let idx: &[usize] = if nker == 0 {
        &[]
    } else if ker_idx.is_null() {
        return Err((ObsvStatus::NullArgument, "ker_idx is null".into()));
    } else {
        std::slice::from_raw_parts(ker_idx, nker)
    };
    if let Some(bad) = idx.iter().find(|&&i| i >= n) {
        return Err(invalid(format!("kernel index {bad} out of range for n = {n}")));
    }
    let b = DMatrix::from_fn(n, idx.len(), |r, c| if r == idx[c] { 1.0 } else { 0.0 });
    let kq = model::kernel_q(s, Some(&b)).map_err(from_model)?;
    if !kq.valid {
        return Err(invalid("the listed vectors do not span an admissible kernel"));
    }
    Ok(kq.q)
}

/// Local synthesis over a ball region with `α₁ I ≺ P ⪯ α₂ I`.
#[no_mangle]
pub unsafe extern "C" fn obsv_local_synth(
    sys: *const ObsvSystem,
    kind: ObsvRegionKind,
    center: *const f64,
    radius: f64,
    alpha1: f64,
    alpha2: f64,
    out: *mut *mut ObsvDesign,
) -> ObsvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = &ref_arg(sys, "sys")?.sys;
        let y = region(kind, center, s.n(), radius)?;
        let design = synth::local_synth(s, &y, alpha1, alpha2).map_err(from_synth)?;
        *out = Box::into_raw(Box::new(ObsvDesign { design }));
        Ok(())
    })
}

/// Global synthesis over a ball region. The plant's trapping ball is
/// certified first with `ker Q` given as in `obsv_state_trap`; `pcap <= 0`
/// selects the default condition-number cap.
#[no_mangle]
pub unsafe extern "C" fn obsv_global_synth(
    sys: *const ObsvSystem,
    ker_idx: *const usize,
    nker: usize,
    kind: ObsvRegionKind,
    center: *const f64,
    radius: f64,
    pcap: f64,
    out: *mut *mut ObsvDesign,
) -> ObsvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = &ref_arg(sys, "sys")?.sys;
        let q = kernel_projector(s, ker_idx, nker)?;
        let y = region(kind, center, s.n(), radius)?;
        let cert = trapping::state_trap_sdp(s, &q).map_err(from_trap)?;
        let opts = synth::GlobalOptions { pcap: (pcap > 0.0).then_some(pcap), ..Default::default() };
        let design = synth::global_synth(s, &y, &cert, &opts).map_err(from_synth)?;
        *out = Box::into_raw(Box::new(ObsvDesign { design }));
        Ok(())
    })
}

/// Parses a design previously produced by `obsv_design_to_json` or the CLI.
#[no_mangle]
pub unsafe extern "C" fn obsv_design_from_json(json: *const c_char, out: *mut *mut ObsvDesign) -> ObsvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let design = ObserverDesign::from_json(str_arg(json, "json")?).map_err(from_model)?;
        *out = Box::into_raw(Box::new(ObsvDesign { design }));
        Ok(())
    })
}

/// Releases a design; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn obsv_design_free(design: *mut ObsvDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Copies the `n × p` gain into `buf` in row-major order.
#[no_mangle]
pub unsafe extern "C" fn obsv_design_gain(design: *const ObsvDesign, buf: *mut f64, len: usize) -> ObsvStatus {
    guard(|| {
        let d = ref_arg(design, "design")?;
        write_out(buf, len, &row_major(&d.design.l), "buf")
    })
}

/// Copies the `n × n` Lyapunov matrix into `buf` in row-major order.
#[no_mangle]
pub unsafe extern "C" fn obsv_design_lyapunov(design: *const ObsvDesign, buf: *mut f64, len: usize) -> ObsvStatus {
    guard(|| {
        let d = ref_arg(design, "design")?;
        write_out(buf, len, &row_major(&d.design.p), "buf")
    })
}

/// Certified decay margin and convergence radius (infinite for global
/// designs).
#[no_mangle]
pub unsafe extern "C" fn obsv_design_margins(design: *const ObsvDesign, margin: *mut f64, convergence_radius: *mut f64) -> ObsvStatus {
    guard(|| {
        let d = ref_arg(design, "design")?;
        *out_arg(margin, "margin")? = d.design.margins.alpha3;
        *out_arg(convergence_radius, "convergence_radius")? = d.design.convergence_radius;
        Ok(())
    })
}

/// Serializes a design to JSON. Release the string with `obsv_string_free`.
#[no_mangle]
pub unsafe extern "C" fn obsv_design_to_json(design: *const ObsvDesign, out: *mut *mut c_char) -> ObsvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let d = ref_arg(design, "design")?;
        *out = CString::new(d.design.to_json()).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn obsv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Certified margin of a row-major gain `l` (`n × p`) and Lyapunov matrix
/// `p_mat` (`n × n`) over a ball. Returns `OBSV_STATUS_VERIFICATION_FAILED`
/// (with `*margin = 0`) when no positive margin is certified.
#[no_mangle]
pub unsafe extern "C" fn obsv_verify(
    sys: *const ObsvSystem,
    l: *const f64,
    p_mat: *const f64,
    kind: ObsvRegionKind,
    center: *const f64,
    radius: f64,
    margin: *mut f64,
) -> ObsvStatus {
    guard(|| {
        let s = &ref_arg(sys, "sys")?.sys;
        let (n, p) = (s.n(), s.p());
        let lm = DMatrix::from_row_slice(n, p, slice_arg(l, n * p, "l")?);
        let pm = DMatrix::from_row_slice(n, n, slice_arg(p_mat, n * n, "p_mat")?);
        let y = region(kind, center, n, radius)?;
        let m = synth::verify_design(s, &lm, &pm, &y);
        *out_arg(margin, "margin")? = m;
        if m > 0.0 {
            Ok(())
        } else {
            Err((ObsvStatus::VerificationFailed, "no positive margin certified".into()))
        }
    })
}

/// Simulates plant and observer with RK4 and reports `‖x − x̂‖` at `t_end`.
#[no_mangle]
pub unsafe extern "C" fn obsv_simulate_observer(
    sys: *const ObsvSystem,
    l: *const f64,
    x0: *const f64,
    xhat0: *const f64,
    t_end: f64,
    dt: f64,
    err_final: *mut f64,
) -> ObsvStatus {
    guard(|| {
        let s = &ref_arg(sys, "sys")?.sys;
        let (n, p) = (s.n(), s.p());
        let lm = DMatrix::from_row_slice(n, p, slice_arg(l, n * p, "l")?);
        let x = DVector::from_column_slice(slice_arg(x0, n, "x0")?);
        let xh = DVector::from_column_slice(slice_arg(xhat0, n, "xhat0")?);
        let stride = ((t_end / dt).round() as usize).max(1);
        let tr = sim::integrate_observer_strided(s, &lm, &x, &xh, t_end, dt, stride).map_err(from_sim)?;
        let e = tr.err2.as_ref().and_then(|e| e.last().copied()).unwrap_or(f64::NAN);
        *out_arg(err_final, "err_final")? = e;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(ObsvStatus::Ok as i32, 0);
        assert_eq!(ObsvStatus::Infeasible as i32, 3);
        assert_eq!(ObsvStatus::VerificationFailed as i32, 5);
    }

    #[test]
    fn panics_are_contained() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, ObsvStatus::Panic);
        let msg = unsafe { CStr::from_ptr(obsv_last_error()) }.to_str().unwrap().to_string();
        assert!(msg.contains("boom"));
    }
}

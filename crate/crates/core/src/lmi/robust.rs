//! Finite reformulations of `F0 + Σ y_i F_i ⪰ 0 for all y in a region`.

use nalgebra::DVector;

use super::{ConstraintId, LmiError, MatExpr, SdpProblem, SymVar, UncertaintyRegion};

/// Which reformulation to use for a robust constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum RobustMethod {
    /// Euclidean balls use the ball method; everything else uses vertices.
    #[default]
    Auto,
    /// Enumerate vertices. A Euclidean ball is first enclosed in the 1-norm
    /// ball of radius `r√n`.
    Vertices,
    /// Sufficient ball condition. A 1-norm ball is enclosed in the Euclidean
    /// ball of the same radius, a polytope in its smallest ball around the
    /// vertex mean.
    Ball,
}

/// Constraints and auxiliary variables added by [`robust_lmi_ball`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustBall {
    pub constraints: Vec<ConstraintId>,
    /// `(S, Q)`; absent when every `F_i` vanishes and the condition reduces
    /// to `F0 ⪰ 0`.
    pub aux: Option<(SymVar, SymVar)>,
}

/// One LMI `F0 + Σ (y_v)_i F_i ⪰ 0` per extreme point `y_v` of a 1-norm ball
/// or polytope. By convexity this certifies the whole hull.
pub fn robust_lmi_vertices(
    prob: &mut SdpProblem,
    label: &str,
    f0: &MatExpr,
    fs: &[MatExpr],
    region: &UncertaintyRegion,
) -> Result<Vec<ConstraintId>, LmiError> {
    let verts = region.vertices()?;
    check_len(fs, region.dim())?;
    Ok(verts
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let e = at_point(f0, fs, y);
            prob.psd(&format!("{label}@vertex{}", k + 1), e)
        })
        .collect())
}

/// Sufficient condition for `F0 + Σ δ_i F_i ⪰ 0` whenever `‖δ‖₂ <= r`:
/// fresh symmetric `S, Q` with `S + Q ⪯ 2 F0` and the arrow LMI
/// `[[S, rF_1, …, rF_k], [rF_1, Q, 0, …], …, [rF_k, 0, …, Q]] ⪰ 0`.
/// Vanishing `F_i` are dropped from the arrow.
pub fn robust_lmi_ball(prob: &mut SdpProblem, label: &str, f0: &MatExpr, fs: &[MatExpr], r: f64) -> RobustBall {
    assert!(r >= 0.0 && r.is_finite(), "ball radius must be finite and nonnegative");
    let m = f0.nrows();
    let scaled: Vec<MatExpr> = fs.iter().filter(|f| !f.is_zero()).map(|f| f.sym().scale(r)).collect();
    if scaled.is_empty() || r == 0.0 {
        let c = prob.psd(&format!("{label}@nominal"), f0.clone());
        return RobustBall { constraints: vec![c], aux: None };
    }
    let s = prob.symmetric(&format!("{label}.S"), m);
    let q = prob.symmetric(&format!("{label}.Q"), m);
    let (se, qe) = (s.expr(), q.expr());
    let c1 = prob.psd(&format!("{label}@sum"), f0.clone().scale(2.0) - se.clone() - qe.clone());
    let k = scaled.len();
    let mut blocks: Vec<Vec<Option<&MatExpr>>> = vec![vec![None; k + 1]; k + 1];
    blocks[0][0] = Some(&se);
    for (i, f) in scaled.iter().enumerate() {
        blocks[0][i + 1] = Some(f);
        blocks[i + 1][0] = Some(f);
        blocks[i + 1][i + 1] = Some(&qe);
    }
    let c2 = prob.psd(&format!("{label}@arrow"), MatExpr::bmat(&blocks));
    RobustBall { constraints: vec![c1, c2], aux: Some((s, q)) }
}

/// Robust constraint `F0 + Σ y_i F_i ⪰ 0` for all `y` in `region`, routed
/// according to `method`.
pub fn robust_lmi(
    prob: &mut SdpProblem,
    label: &str,
    f0: &MatExpr,
    fs: &[MatExpr],
    region: &UncertaintyRegion,
    method: RobustMethod,
) -> Result<Vec<ConstraintId>, LmiError> {
    region.validate()?;
    check_len(fs, region.dim())?;
    let ball = |prob: &mut SdpProblem, c: &DVector<f64>, r: f64| {
        robust_lmi_ball(prob, label, &at_point(f0, fs, c), fs, r).constraints
    };
    match (region, method) {
        (UncertaintyRegion::Ball2 { center, radius }, RobustMethod::Auto | RobustMethod::Ball) => {
            Ok(ball(prob, center, *radius))
        }
        (UncertaintyRegion::Ball2 { center, radius }, RobustMethod::Vertices) => {
            let outer = UncertaintyRegion::ball1(center.clone(), radius * (center.len() as f64).sqrt());
            robust_lmi_vertices(prob, label, f0, fs, &outer)
        }
        (_, RobustMethod::Ball) => {
            let (c, r) = region.enclosing_ball2();
            Ok(ball(prob, &c, r))
        }
        (_, _) => robust_lmi_vertices(prob, label, f0, fs, region),
    }
}

/// `F0 + Σ y_i F_i`.
pub fn at_point(f0: &MatExpr, fs: &[MatExpr], y: &DVector<f64>) -> MatExpr {
    let mut e = f0.clone();
    for (yi, f) in y.iter().zip(fs) {
        if *yi != 0.0 && !f.is_zero() {
            e = e + f.clone().scale(*yi);
        }
    }
    e.canonical()
}

fn check_len(fs: &[MatExpr], dim: usize) -> Result<(), LmiError> {
    if fs.len() != dim {
        return Err(LmiError::InvalidRegion(format!(
            "region has dimension {dim} but {} parameter matrices were given",
            fs.len()
        )));
    }
    Ok(())
}

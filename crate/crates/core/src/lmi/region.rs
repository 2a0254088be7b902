//! Uncertainty regions for robust LMIs.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LmiError;
use crate::serde_util;

/// Half-space `normalᵀ x <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    #[serde(with = "serde_util::vec")]
    pub normal: DVector<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum UncertaintyRegion {
    /// Euclidean ball.
    Ball2 {
        #[serde(with = "serde_util::vec")]
        center: DVector<f64>,
        radius: f64,
    },
    /// 1-norm ball.
    Ball1 {
        #[serde(with = "serde_util::vec")]
        center: DVector<f64>,
        radius: f64,
    },
    /// Convex hull of the vertices; `faces` optionally gives the same set
    /// in half-space form (needed for containment tests).
    Polytope {
        #[serde(with = "vertex_list")]
        vertices: Vec<DVector<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        faces: Option<Vec<Face>>,
    },
}

mod vertex_list {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|d| d.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(DVector::from_vec).collect())
    }
}

impl UncertaintyRegion {
    pub fn ball2(center: DVector<f64>, radius: f64) -> Self {
        Self::Ball2 { center, radius }
    }

    pub fn ball1(center: DVector<f64>, radius: f64) -> Self {
        Self::Ball1 { center, radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ball2 { center, .. } | Self::Ball1 { center, .. } => center.len(),
            Self::Polytope { vertices, .. } => vertices.first().map_or(0, |v| v.len()),
        }
    }

    /// Ball center, or the vertex mean of a polytope.
    pub fn center(&self) -> DVector<f64> {
        match self {
            Self::Ball2 { center, .. } | Self::Ball1 { center, .. } => center.clone(),
            Self::Polytope { vertices, .. } => {
                let mut c = DVector::zeros(self.dim());
                for v in vertices {
                    c += v;
                }
                c / vertices.len().max(1) as f64
            }
        }
    }

    pub fn validate(&self) -> Result<(), LmiError> {
        match self {
            Self::Ball2 { center, radius } | Self::Ball1 { center, radius } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(LmiError::InvalidRegion(format!("radius must be finite and >= 0, got {radius}")));
                }
                if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
                    return Err(LmiError::InvalidRegion("center must be a nonempty finite vector".into()));
                }
            }
            Self::Polytope { vertices, faces } => {
                if vertices.is_empty() {
                    return Err(LmiError::EmptyRegion);
                }
                let n = vertices[0].len();
                if n == 0 || vertices.iter().any(|v| v.len() != n || v.iter().any(|x| !x.is_finite())) {
                    return Err(LmiError::InvalidRegion("vertices must be finite vectors of equal length".into()));
                }
                if let Some(f) = faces {
                    if f.iter().any(|f| f.normal.len() != n) {
                        return Err(LmiError::InvalidRegion("face normals must match the vertex dimension".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Extreme points: `center ± r e_i` for a 1-norm ball, the vertex list
    /// for a polytope. Euclidean balls have no finite vertex set.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>, LmiError> {
        self.validate()?;
        match self {
            Self::Ball1 { center, radius } => {
                let n = center.len();
                let mut out = Vec::with_capacity(2 * n);
                for i in 0..n {
                    for s in [1.0, -1.0] {
                        let mut v = center.clone();
                        v[i] += s * radius;
                        out.push(v);
                    }
                }
                Ok(out)
            }
            Self::Polytope { vertices, .. } => Ok(vertices.clone()),
            Self::Ball2 { .. } => {
                Err(LmiError::UnsupportedRegionForm("a Euclidean ball has no finite vertex set".into()))
            }
        }
    }

    /// Smallest Euclidean ball around [`center`](Self::center) containing the
    /// region (for a 1-norm ball this is the ball of the same radius).
    pub fn enclosing_ball2(&self) -> (DVector<f64>, f64) {
        match self {
            Self::Ball2 { center, radius } | Self::Ball1 { center, radius } => (center.clone(), *radius),
            Self::Polytope { vertices, .. } => {
                let c = self.center();
                let r = vertices.iter().map(|v| (v - &c).norm()).fold(0.0_f64, f64::max);
                (c, r)
            }
        }
    }

    /// Center plus the points `center ± r e_i` on each axis (vertices for a
    /// polytope). These all lie in the region.
    pub fn probe_points(&self) -> Vec<DVector<f64>> {
        match self {
            Self::Ball2 { center, radius } | Self::Ball1 { center, radius } => {
                let mut out = vec![center.clone()];
                for i in 0..center.len() {
                    for s in [1.0, -1.0] {
                        let mut v = center.clone();
                        v[i] += s * radius;
                        out.push(v);
                    }
                }
                out
            }
            Self::Polytope { vertices, .. } => {
                let mut out = vec![self.center()];
                out.extend(vertices.iter().cloned());
                out
            }
        }
    }

    /// A random point of the region: uniform for balls, Dirichlet(1)
    /// weights over the vertices for polytopes.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Self::Ball2 { center, radius } => {
                let n = center.len();
                let mut g = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let norm = g.norm();
                if norm > 0.0 {
                    g /= norm;
                }
                let u: f64 = rng.random();
                center + g * (radius * u.powf(1.0 / n as f64))
            }
            Self::Ball1 { center, radius } => {
                // Uniform on the cross-polytope: n+1 exponentials, normalized,
                // with random signs on the first n.
                let n = center.len();
                let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = e.iter().sum();
                DVector::from_fn(n, |i, _| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    center[i] + radius * sign * e[i] / total
                })
            }
            Self::Polytope { vertices, .. } => {
                let w: Vec<f64> = vertices.iter().map(|_| Exp1.sample(rng)).collect();
                let total: f64 = w.iter().sum();
                let mut x = DVector::zeros(self.dim());
                for (v, wi) in vertices.iter().zip(&w) {
                    x += v * (wi / total);
                }
                x
            }
        }
    }

    /// Membership test with absolute slack `tol`.
    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> Result<bool, LmiError> {
        match self {
            Self::Ball2 { center, radius } => Ok((x - center).norm() <= radius + tol),
            Self::Ball1 { center, radius } => Ok((x - center).lp_norm(1) <= radius + tol),
            Self::Polytope { faces: Some(faces), .. } => {
                Ok(faces.iter().all(|f| f.normal.dot(x) <= f.offset + tol))
            }
            Self::Polytope { faces: None, .. } => Err(LmiError::UnsupportedRegionForm(
                "membership needs the half-space description of the polytope".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cross_polytope_vertices() {
        let r = UncertaintyRegion::ball1(DVector::zeros(2), 2.0);
        let v = r.vertices().unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.contains(&DVector::from_vec(vec![2.0, 0.0])));
        assert!(v.contains(&DVector::from_vec(vec![0.0, -2.0])));
    }

    #[test]
    fn empty_polytope_rejected() {
        let r = UncertaintyRegion::Polytope { vertices: vec![], faces: None };
        assert_eq!(r.vertices().unwrap_err(), LmiError::EmptyRegion);
    }

    #[test]
    fn samples_stay_inside() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        for reg in [UncertaintyRegion::ball2(c.clone(), 1.5), UncertaintyRegion::ball1(c.clone(), 1.5)] {
            for _ in 0..2000 {
                let x = reg.sample(&mut rng);
                assert!(reg.contains_point(&x, 1e-12).unwrap());
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let reg = UncertaintyRegion::ball1(DVector::from_vec(vec![-0.9477, 0.0]), 2.8431);
        let s = serde_json::to_string(&reg).unwrap();
        assert!(s.contains("\"type\":\"Ball1\""));
        assert_eq!(serde_json::from_str::<UncertaintyRegion>(&s).unwrap(), reg);
    }
}

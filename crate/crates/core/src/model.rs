//! Quadratic energy-preserving systems and the structures derived from them.
//!
//! A [`QuadSystem`] stores `A`, the coefficient matrices `M_i` of
//! `N(x) = Σ x_i M_i`, and the output map `C`. Construction checks the
//! energy-preserving identity `xᵀ N(x) x = 0` exactly on the coefficients.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::serde_util::{matrix_to_rows, rows_to_matrix};

/// Relative tolerance of the coefficient-level energy test.
pub const ENERGY_TOL: f64 = 1e-10;
/// Relative singular-value threshold for null-space computations.
pub const NULLSPACE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: String, got: String },
    #[error(
        "nonlinearity is not energy preserving: symmetrized coefficient sum for index triple \
         ({i},{j},{k}) is {sum:e}"
    )]
    NotEnergyPreserving { i: usize, j: usize, k: usize, sum: f64 },
    #[error("invalid fluid model: {0}")]
    InvalidFluid(String),
    #[error("the intersection of the quadratic-form kernels is {{0}}")]
    EmptySubspace,
    #[error("parse error{}: {msg}", location(*line, *column, field))]
    ParseError { line: usize, column: usize, field: Option<String>, msg: String },
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("internal error: {0}")]
    Internal(String),
}

fn location(line: usize, column: usize, field: &Option<String>) -> String {
    let mut s = String::new();
    if line > 0 {
        s.push_str(&format!(" at line {line}, column {column}"));
    }
    if let Some(f) = field {
        s.push_str(&format!(" (field `{f}`)"));
    }
    s
}

fn mismatch(what: &str, expected: impl ToString, got: impl ToString) -> ModelError {
    ModelError::DimensionMismatch {
        what: what.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// `x' = A x + N(x) x`, `y = C x` with `N(x) = Σ x_i M_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSystem {
    n: usize,
    p: usize,
    a: DMatrix<f64>,
    nmats: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
}

fn check_dims(a: &DMatrix<f64>, nmats: &[DMatrix<f64>], c: &DMatrix<f64>) -> Result<(usize, usize), ModelError> {
    let n = a.nrows();
    if n == 0 {
        return Err(mismatch("A", "a positive state dimension", "0"));
    }
    if a.ncols() != n {
        return Err(mismatch("A", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
    }
    if nmats.len() != n {
        return Err(mismatch("N", format!("{n} coefficient matrices"), nmats.len()));
    }
    for (i, m) in nmats.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(mismatch(
                &format!("N[{i}]"),
                format!("{n}x{n}"),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
    }
    if c.ncols() != n || c.nrows() == 0 {
        return Err(mismatch("C", format!("px{n} with p >= 1"), format!("{}x{}", c.nrows(), c.ncols())));
    }
    let all_finite = a.iter().chain(c.iter()).chain(nmats.iter().flat_map(|m| m.iter())).all(|v| v.is_finite());
    if !all_finite {
        return Err(mismatch("entries", "finite numbers", "a non-finite value"));
    }
    Ok((n, c.nrows()))
}

/// Exact coefficient test of `xᵀ N(x) x ≡ 0`: for every index multiset
/// `{i,j,k}` the sum of `M_{σ1}[σ2,σ3]` over all permutations must vanish.
/// Returns the worst offending triple (0-based) if any.
pub fn energy_violation(nmats: &[DMatrix<f64>]) -> Option<(usize, usize, usize, f64)> {
    let n = nmats.len();
    let scale = nmats.iter().map(linalg::max_abs).fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return None;
    }
    let mut worst: Option<(usize, usize, usize, f64)> = None;
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                let perms = [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)];
                // Permutations of a multiset with repeats are counted with
                // multiplicity; the zero test is unaffected.
                let sum: f64 = perms.iter().map(|&(a, b, c)| nmats[a][(b, c)]).sum();
                if sum.abs() > ENERGY_TOL * scale && worst.is_none_or(|w| sum.abs() > w.3.abs()) {
                    worst = Some((i, j, k, sum));
                }
            }
        }
    }
    worst
}

/// Validates and assembles a system.
pub fn build_system(a: DMatrix<f64>, nmats: Vec<DMatrix<f64>>, c: DMatrix<f64>) -> Result<QuadSystem, ModelError> {
    let sys = QuadSystem::new_unchecked(a, nmats, c)?;
    if let Some((i, j, k, sum)) = energy_violation(&sys.nmats) {
        return Err(ModelError::NotEnergyPreserving { i: i + 1, j: j + 1, k: k + 1, sum });
    }
    Ok(sys)
}

impl QuadSystem {
    /// Checks dimensions only. Used for diagnostics on nonlinearities that
    /// fail the energy test; every downstream algorithm expects a system
    /// built through [`build_system`].
    pub fn new_unchecked(a: DMatrix<f64>, nmats: Vec<DMatrix<f64>>, c: DMatrix<f64>) -> Result<Self, ModelError> {
        let (n, p) = check_dims(&a, &nmats, &c)?;
        Ok(Self { n, p, a, nmats, c })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn nmats(&self) -> &[DMatrix<f64>] {
        &self.nmats
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Same dynamics with a different output map.
    pub fn with_output(&self, c: DMatrix<f64>) -> Result<Self, ModelError> {
        build_system(self.a.clone(), self.nmats.clone(), c)
    }

    /// `N(x) = Σ x_i M_i`.
    pub fn n_of(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (xi, m) in x.iter().zip(&self.nmats) {
            if *xi != 0.0 {
                out += m * *xi;
            }
        }
        out
    }

    /// `N(x) x`.
    pub fn quad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.n_of(x) * x
    }

    /// `A x + N(x) x`.
    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + self.quad(x)
    }

    pub fn is_linear(&self) -> bool {
        self.nmats.iter().all(|m| m.iter().all(|v| *v == 0.0))
    }

    fn check_len(&self, what: &str, v: &DVector<f64>) -> Result<(), ModelError> {
        if v.len() != self.n {
            return Err(mismatch(what, self.n, v.len()));
        }
        Ok(())
    }
}

/// `xᵀ N(x) x` evaluated directly.
pub fn energy_residual(sys: &QuadSystem, x: &DVector<f64>) -> Result<f64, ModelError> {
    sys.check_len("x", x)?;
    Ok(x.dot(&sys.quad(x)))
}

/// Matrix of `x ↦ A x + N(x) d + N(d) x`.
pub fn perturbed_a(sys: &QuadSystem, d: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
    sys.check_len("d", d)?;
    let mut ad = &sys.a + sys.n_of(d);
    for j in 0..sys.n {
        let col = &sys.nmats[j] * d;
        let mut dst = ad.column_mut(j);
        dst += col;
    }
    Ok(ad)
}

/// Matrices `K_i` with `A_d = A + Σ d_i K_i`.
pub fn perturbation_basis(sys: &QuadSystem) -> Vec<DMatrix<f64>> {
    (0..sys.n)
        .map(|i| {
            let mut k = sys.nmats[i].clone();
            for j in 0..sys.n {
                let col = sys.nmats[j].column(i).into_owned();
                let mut dst = k.column_mut(j);
                dst += col;
            }
            k
        })
        .collect()
}

/// Symmetric quadratic forms with `N(d) d = (dᵀ Q_i d)_i`, their
/// re-indexed companions and the Frobenius Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormRep {
    pub qsym: Vec<DMatrix<f64>>,
    pub qtilde: Vec<DMatrix<f64>>,
    pub theta: DMatrix<f64>,
}

pub fn quad_forms(sys: &QuadSystem) -> QuadFormRep {
    let n = sys.n;
    let m = &sys.nmats;
    let qsym: Vec<DMatrix<f64>> = (0..n)
        .map(|i| DMatrix::from_fn(n, n, |j, k| 0.5 * (m[j][(i, k)] + m[k][(i, j)])))
        .collect();
    let qtilde: Vec<DMatrix<f64>> =
        (0..n).map(|k| DMatrix::from_fn(n, n, |i, j| qsym[i][(j, k)])).collect();
    let theta = DMatrix::from_fn(n, n, |i, j| linalg::frobenius_inner(&qtilde[i], &qtilde[j]));
    QuadFormRep { qsym, qtilde, theta }
}

impl QuadFormRep {
    /// `(dᵀ Q_i d)_i`.
    pub fn eval(&self, d: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.qsym.len(), self.qsym.iter().map(|q| d.dot(&(q * d))))
    }

    /// `Σ x_i Q̃_i`.
    pub fn qtilde_combination(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.qsym.len();
        let mut out = DMatrix::zeros(n, n);
        for (xi, q) in x.iter().zip(&self.qtilde) {
            out += q * *xi;
        }
        out
    }
}

/// The constant `γ = λ_max(Θ)^{1/2}` bounding the nonlinearity.
pub fn n_norm(sys: &QuadSystem) -> f64 {
    let theta = quad_forms(sys).theta;
    linalg::lambda_max_sym(&theta).max(0.0).sqrt()
}

/// Orthonormal (Frobenius) basis of the symmetric matrices `P` with
/// `eᵀ P N(e) e ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnBasis {
    pub basis: Vec<DMatrix<f64>>,
    pub dim: usize,
}

/// Frobenius-orthonormal basis of Sym(n): `E_jj` then `(E_jk + E_kj)/√2`.
pub fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for k in j..n {
            let mut e = DMatrix::zeros(n, n);
            if j == k {
                e[(j, j)] = 1.0;
            } else {
                e[(j, k)] = std::f64::consts::FRAC_1_SQRT_2;
                e[(k, j)] = std::f64::consts::FRAC_1_SQRT_2;
            }
            out.push(e);
        }
    }
    out
}

/// Monomial coefficients of the cubic `e ↦ eᵀ P N(e) e`, indexed by sorted
/// triples `i <= j <= k`.
pub fn cubic_coefficients(sys: &QuadSystem, p: &DMatrix<f64>) -> Vec<f64> {
    let n = sys.n;
    let idx = |i: usize, j: usize, k: usize| -> usize {
        let mut t = [i, j, k];
        t.sort_unstable();
        monomial_index(n, t[0], t[1], t[2])
    };
    let mut coef = vec![0.0; n * (n + 1) * (n + 2) / 6];
    // eᵀ P N(e) e = Σ_{i,j,k} e_i e_j e_k (P M_j)[i,k]
    for j in 0..n {
        let pm = p * &sys.nmats[j];
        for i in 0..n {
            for k in 0..n {
                let v = pm[(i, k)];
                if v != 0.0 {
                    coef[idx(i, j, k)] += v;
                }
            }
        }
    }
    coef
}

fn monomial_index(n: usize, i: usize, j: usize, k: usize) -> usize {
    // Rank of (i,j,k), i<=j<=k, in lexicographic enumeration.
    let mut r = 0;
    for a in 0..i {
        let m = n - a;
        r += m * (m + 1) / 2;
    }
    for b in i..j {
        r += n - b;
    }
    r + (k - j)
}

pub fn sn_basis(sys: &QuadSystem) -> Result<SnBasis, ModelError> {
    let sb = sym_basis(sys.n);
    let cols: Vec<DVector<f64>> =
        sb.iter().map(|e| DVector::from_vec(cubic_coefficients(sys, e))).collect();
    let rows = cols.first().map_or(0, |c| c.len());
    let map = linalg::columns_to_matrix(&cols, rows);
    let ns = linalg::nullspace(&map, NULLSPACE_TOL);
    let basis: Vec<DMatrix<f64>> = (0..ns.ncols())
        .map(|c| {
            let mut p = DMatrix::zeros(sys.n, sys.n);
            for (w, e) in ns.column(c).iter().zip(&sb) {
                p += e * *w;
            }
            p
        })
        .collect();
    if basis.is_empty() {
        // The identity always qualifies, so an empty result means the
        // numerics went wrong.
        return Err(ModelError::Internal("S_N basis came out empty although I belongs to it".into()));
    }
    let dim = basis.len();
    Ok(SnBasis { basis, dim })
}

/// Result of the kernel test for a candidate subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelQ {
    /// `Bᵀ Q_i B = 0` for all `i`, so `N(d) d = 0` on `span(B)`.
    pub valid: bool,
    /// Orthogonal projector onto the complement of `span(B)`.
    pub q: DMatrix<f64>,
    /// Orthonormal basis of `span(B)`.
    pub basis: DMatrix<f64>,
}

/// Checks a candidate subspace `span(B)` or, with `b = None`, computes the
/// intersection of the kernels of all `Q_i`.
pub fn kernel_q(sys: &QuadSystem, b: Option<&DMatrix<f64>>) -> Result<KernelQ, ModelError> {
    let n = sys.n;
    let qf = quad_forms(sys);
    let basis = match b {
        Some(b) => {
            if b.nrows() != n {
                return Err(mismatch("B", format!("{n} rows"), b.nrows()));
            }
            orthonormal_range(b)
        }
        None => {
            let stacked = DMatrix::from_fn(n * n, n, |r, c| qf.qsym[r / n][(r % n, c)]);
            let ns = linalg::nullspace(&stacked, NULLSPACE_TOL);
            if ns.ncols() == 0 {
                return Err(ModelError::EmptySubspace);
            }
            ns
        }
    };
    let scale = qf.qsym.iter().map(linalg::max_abs).fold(0.0_f64, f64::max);
    let valid = qf
        .qsym
        .iter()
        .all(|q| linalg::max_abs(&(basis.transpose() * q * &basis)) <= 1e-10 * scale.max(1e-300));
    let q = DMatrix::identity(n, n) - &basis * basis.transpose();
    Ok(KernelQ { valid, q, basis })
}

/// Orthonormal basis of the column space of `b`.
pub fn orthonormal_range(b: &DMatrix<f64>) -> DMatrix<f64> {
    if b.ncols() == 0 || linalg::max_abs(b) == 0.0 {
        return DMatrix::zeros(b.nrows(), 0);
    }
    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > NULLSPACE_TOL * smax).collect();
    DMatrix::from_fn(b.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Galerkin model in fluid form: `x' = (1/Re) Λ x + N(c) x + N(x) c + N(x) x`
/// with `Λ = −diag(λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidModel {
    /// Positive decay rates `λ_i`; the diagonal of `Λ` is `−λ`.
    pub lambda: DVector<f64>,
    pub c: DVector<f64>,
    pub re: f64,
    pub nmats: Vec<DMatrix<f64>>,
    /// Output map.
    pub cmat: DMatrix<f64>,
}

impl FluidModel {
    pub fn new(
        lambda: DVector<f64>,
        c: DVector<f64>,
        re: f64,
        nmats: Vec<DMatrix<f64>>,
        cmat: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let fm = Self { lambda, c, re, nmats, cmat };
        fm.validate()?;
        Ok(fm)
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// `Λ = −diag(λ)`.
    pub fn big_lambda(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&(-&self.lambda))
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n = self.lambda.len();
        if !self.lambda.iter().all(|l| l.is_finite() && *l > 0.0) {
            return Err(ModelError::InvalidFluid("every decay rate must be positive (Λ strictly negative)".into()));
        }
        if !(self.re.is_finite() && self.re > 0.0) {
            return Err(ModelError::InvalidFluid(format!("Re must be positive, got {}", self.re)));
        }
        if self.c.len() != n {
            return Err(mismatch("c", n, self.c.len()));
        }
        check_dims(&DMatrix::zeros(n, n), &self.nmats, &self.cmat)?;
        Ok(())
    }
}

/// Assembles `A = (1/Re) Λ + N(c)· + N(·) c` and re-runs the energy test.
pub fn fluid_to_system(fm: &FluidModel) -> Result<QuadSystem, ModelError> {
    fm.validate()?;
    let base = QuadSystem::new_unchecked(fm.big_lambda() / fm.re, fm.nmats.clone(), fm.cmat.clone())?;
    // The perturbed matrix of the scaled-Λ system at c is exactly A.
    let a = perturbed_a(&base, &fm.c)?;
    build_system(a, fm.nmats.clone(), fm.cmat.clone())
}

/// A model file holds either form.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Quad(QuadSystem),
    Fluid(FluidModel),
}

impl Model {
    /// The system in `x' = A x + N(x) x` form.
    pub fn to_system(&self) -> Result<QuadSystem, ModelError> {
        match self {
            Model::Quad(s) => Ok(s.clone()),
            Model::Fluid(f) => fluid_to_system(f),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: String,
    n: usize,
    p: usize,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "N")]
    nmats: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<Vec<f64>>,
    #[serde(rename = "c", default, skip_serializing_if = "Option::is_none")]
    cvec: Option<Vec<f64>>,
    #[serde(rename = "Re", default, skip_serializing_if = "Option::is_none")]
    re: Option<f64>,
}

fn field_err(field: &str, msg: impl Into<String>) -> ModelError {
    ModelError::ParseError { line: 0, column: 0, field: Some(field.to_string()), msg: msg.into() }
}

fn matrix_field(field: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>, ModelError> {
    let m = rows_to_matrix(rows).ok_or_else(|| field_err(field, "ragged rows"))?;
    if m.nrows() != r || m.ncols() != c {
        return Err(field_err(field, format!("expected {r}x{c}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

/// Parses a model from JSON text.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let raw: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::ParseError {
        line: e.line(),
        column: e.column(),
        field: None,
        msg: e.to_string(),
    })?;
    let (n, p) = (raw.n, raw.p);
    if n == 0 {
        return Err(field_err("n", "must be positive"));
    }
    if p == 0 {
        return Err(field_err("p", "must be positive"));
    }
    if raw.nmats.is_empty() {
        return Err(field_err("N", "empty list of coefficient matrices"));
    }
    if raw.nmats.len() != n {
        return Err(field_err("N", format!("expected {n} matrices, got {}", raw.nmats.len())));
    }
    let nmats = raw
        .nmats
        .iter()
        .enumerate()
        .map(|(i, m)| matrix_field(&format!("N[{i}]"), m, n, n))
        .collect::<Result<Vec<_>, _>>()?;
    let c = matrix_field("C", &raw.c, p, n)?;
    match raw.kind.as_str() {
        "quad" => {
            for (name, present) in [("lambda", raw.lambda.is_some()), ("c", raw.cvec.is_some()), ("Re", raw.re.is_some())] {
                if present {
                    return Err(field_err(name, "not allowed for kind \"quad\""));
                }
            }
            let a = matrix_field("A", raw.a.as_deref().ok_or_else(|| field_err("A", "missing"))?, n, n)?;
            Ok(Model::Quad(build_system(a, nmats, c)?))
        }
        "fluid" => {
            if raw.a.is_some() {
                return Err(field_err("A", "not allowed for kind \"fluid\""));
            }
            let lambda = raw.lambda.ok_or_else(|| field_err("lambda", "missing"))?;
            let cvec = raw.cvec.ok_or_else(|| field_err("c", "missing"))?;
            let re = raw.re.ok_or_else(|| field_err("Re", "missing"))?;
            if lambda.len() != n {
                return Err(field_err("lambda", format!("expected {n} entries, got {}", lambda.len())));
            }
            if cvec.len() != n {
                return Err(field_err("c", format!("expected {n} entries, got {}", cvec.len())));
            }
            let fm = FluidModel::new(DVector::from_vec(lambda), DVector::from_vec(cvec), re, nmats, c)?;
            // Energy preservation is a property of N; check it on load.
            fluid_to_system(&fm)?;
            Ok(Model::Fluid(fm))
        }
        other => Err(field_err("kind", format!("expected \"quad\" or \"fluid\", got {other:?}"))),
    }
}

/// Serializes a model to pretty JSON.
pub fn model_to_json(model: &Model) -> String {
    let raw = match model {
        Model::Quad(s) => ModelFile {
            kind: "quad".into(),
            n: s.n,
            p: s.p,
            a: Some(matrix_to_rows(&s.a)),
            nmats: s.nmats.iter().map(matrix_to_rows).collect(),
            c: matrix_to_rows(&s.c),
            lambda: None,
            cvec: None,
            re: None,
        },
        Model::Fluid(f) => ModelFile {
            kind: "fluid".into(),
            n: f.n(),
            p: f.cmat.nrows(),
            a: None,
            nmats: f.nmats.iter().map(matrix_to_rows).collect(),
            c: matrix_to_rows(&f.cmat),
            lambda: Some(f.lambda.iter().copied().collect()),
            cvec: Some(f.c.iter().copied().collect()),
            re: Some(f.re),
        },
    };
    serde_json::to_string_pretty(&raw).expect("model serialization cannot fail for finite values")
}

pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_model(&text)
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, model_to_json(model) + "\n")
        .map_err(|e| ModelError::Io { path: path.display().to_string(), msg: e.to_string() })
}

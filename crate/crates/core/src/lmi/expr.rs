//! Affine scalar and matrix expressions over the flat decision vector.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

/// `constant + Σ coef · x[var]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(v: usize) -> Self {
        Self { constant: 0.0, terms: vec![(v, 1.0)] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    /// `self · I_n`.
    pub fn times_identity(&self, n: usize) -> MatExpr {
        let mut constant = DMatrix::zeros(n, n);
        constant.fill_diagonal(self.constant);
        let mut terms = Vec::with_capacity(n * self.terms.len());
        for i in 0..n {
            for &(v, c) in &self.terms {
                terms.push(Term { var: v, row: i, col: i, coef: c });
            }
        }
        MatExpr { constant, terms }
    }

    /// The expression as a 1×1 matrix.
    pub fn to_mat(&self) -> MatExpr {
        self.times_identity(1)
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.constant *= s;
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + rhs.scale(-1.0)
    }
}

impl Add<f64> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: f64) -> LinExpr {
        self.constant += rhs;
        self
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scale(rhs)
    }
}

/// One entry `coef · x[var]` at position `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub var: usize,
    pub row: usize,
    pub col: usize,
    pub coef: f64,
}

/// Matrix whose entries are affine in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    pub constant: DMatrix<f64>,
    pub terms: Vec<Term>,
}

impl MatExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { constant: m, terms: Vec::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    /// `x[var] · M`.
    pub fn var_times(var: usize, m: &DMatrix<f64>) -> Self {
        let mut e = Self::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    e.terms.push(Term { var, row: i, col: j, coef: m[(i, j)] });
                }
            }
        }
        e
    }

    /// `Σ_k x[vars[k]] · mats[k]`.
    pub fn combination(vars: &[usize], mats: &[DMatrix<f64>]) -> Self {
        assert_eq!(vars.len(), mats.len(), "combination: length mismatch");
        let (r, c) = mats.first().map_or((0, 0), |m| m.shape());
        let mut e = Self::zeros(r, c);
        for (&v, m) in vars.iter().zip(mats) {
            e.terms.extend(Self::var_times(v, m).terms);
        }
        e
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    /// True when the expression is identically zero.
    pub fn is_zero(&self) -> bool {
        self.constant.iter().all(|v| *v == 0.0) && self.terms.iter().all(|t| t.coef == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for t in &self.terms {
            m[(t.row, t.col)] += t.coef * x[t.var];
        }
        m
    }

    /// Entry-wise magnitude bound `|constant| + Σ |coef · x|`, used to scale
    /// verification tolerances.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        let mut m = self.constant.map(f64::abs);
        for t in &self.terms {
            m[(t.row, t.col)] += (t.coef * x[t.var]).abs();
        }
        m.iter().fold(0.0_f64, |a, v| a.max(*v))
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|t| Term { row: t.col, col: t.row, ..*t }).collect(),
        }
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.constant *= s;
        self.terms.iter_mut().for_each(|t| t.coef *= s);
        self
    }

    /// `(E + Eᵀ)/2`.
    pub fn sym(&self) -> Self {
        (self.clone() + self.transpose()).scale(0.5).canonical()
    }

    /// `E + Eᵀ`.
    pub fn plus_transpose(&self) -> Self {
        (self.clone() + self.transpose()).canonical()
    }

    /// `M · E`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.nrows(), "left_mul shape mismatch");
        let mut terms = Vec::with_capacity(self.terms.len() * m.nrows());
        for t in &self.terms {
            for i in 0..m.nrows() {
                let f = m[(i, t.row)];
                if f != 0.0 {
                    terms.push(Term { row: i, coef: f * t.coef, ..*t });
                }
            }
        }
        Self { constant: m * &self.constant, terms }.canonical()
    }

    /// `E · M`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.ncols(), m.nrows(), "right_mul shape mismatch");
        let mut terms = Vec::with_capacity(self.terms.len() * m.ncols());
        for t in &self.terms {
            for j in 0..m.ncols() {
                let f = m[(t.col, j)];
                if f != 0.0 {
                    terms.push(Term { col: j, coef: f * t.coef, ..*t });
                }
            }
        }
        Self { constant: &self.constant * m, terms }.canonical()
    }

    /// Block matrix. Each row of blocks must agree in height and each
    /// column in width; `None` blocks are zero and take their size from the
    /// other blocks in the same block row and column.
    pub fn bmat(blocks: &[Vec<Option<&MatExpr>>]) -> Self {
        let br = blocks.len();
        let bc = blocks.first().map_or(0, Vec::len);
        let mut heights = vec![None; br];
        let mut widths = vec![None; bc];
        for (i, row) in blocks.iter().enumerate() {
            assert_eq!(row.len(), bc, "bmat: ragged block rows");
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    let (r, c) = b.shape();
                    assert!(heights[i].is_none_or(|h| h == r), "bmat: inconsistent block height");
                    assert!(widths[j].is_none_or(|w| w == c), "bmat: inconsistent block width");
                    heights[i] = Some(r);
                    widths[j] = Some(c);
                }
            }
        }
        let heights: Vec<usize> = heights.into_iter().map(|h| h.expect("bmat: empty block row")).collect();
        let widths: Vec<usize> = widths.into_iter().map(|w| w.expect("bmat: empty block column")).collect();
        let roff: Vec<usize> = heights.iter().scan(0, |acc, h| { let o = *acc; *acc += h; Some(o) }).collect();
        let coff: Vec<usize> = widths.iter().scan(0, |acc, w| { let o = *acc; *acc += w; Some(o) }).collect();
        let mut out = MatExpr::zeros(heights.iter().sum(), widths.iter().sum());
        for (i, row) in blocks.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    out.constant.view_mut((roff[i], coff[j]), b.shape()).copy_from(&b.constant);
                    out.terms.extend(b.terms.iter().map(|t| Term { row: t.row + roff[i], col: t.col + coff[j], ..*t }));
                }
            }
        }
        out
    }

    /// Merges duplicate `(var,row,col)` terms and drops zero coefficients.
    pub fn canonical(mut self) -> Self {
        self.terms.sort_by_key(|t| (t.var, t.col, t.row));
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            match merged.last_mut() {
                Some(last) if (last.var, last.row, last.col) == (t.var, t.row, t.col) => last.coef += t.coef,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coef != 0.0);
        self.terms = merged;
        self
    }
}

impl Add for MatExpr {
    type Output = MatExpr;
    fn add(mut self, rhs: MatExpr) -> MatExpr {
        assert_eq!(self.shape(), rhs.shape(), "MatExpr addition shape mismatch");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for MatExpr {
    type Output = MatExpr;
    fn sub(self, rhs: MatExpr) -> MatExpr {
        self + rhs.scale(-1.0)
    }
}

impl Neg for MatExpr {
    type Output = MatExpr;
    fn neg(self) -> MatExpr {
        self.scale(-1.0)
    }
}

impl Add<&DMatrix<f64>> for MatExpr {
    type Output = MatExpr;
    fn add(mut self, rhs: &DMatrix<f64>) -> MatExpr {
        self.constant += rhs;
        self
    }
}

impl Mul<f64> for MatExpr {
    type Output = MatExpr;
    fn mul(self, rhs: f64) -> MatExpr {
        self.scale(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var_mat(r: usize, c: usize) -> MatExpr {
        let mut e = MatExpr::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                e.terms.push(Term { var: i * c + j, row: i, col: j, coef: 1.0 });
            }
        }
        e
    }

    #[test]
    fn products_match_dense_evaluation() {
        let x: Vec<f64> = (0..6).map(|v| v as f64 * 0.7 - 1.0).collect();
        let e = var_mat(2, 3) + &DMatrix::from_element(2, 3, 0.5);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let r = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 4.0]);
        let dense = e.eval(&x);
        assert!((e.left_mul(&l).eval(&x) - &l * &dense).norm() < 1e-14);
        assert!((e.right_mul(&r).eval(&x) - &dense * &r).norm() < 1e-14);
        assert_eq!(e.transpose().eval(&x), dense.transpose());
    }

    #[test]
    fn bmat_places_blocks() {
        let x = vec![2.0];
        let s = LinExpr::var(0).times_identity(2);
        let c = MatExpr::constant(DMatrix::from_row_slice(2, 1, &[1.0, 3.0]));
        let ct = c.transpose();
        let b = MatExpr::bmat(&[vec![Some(&s), Some(&c)], vec![Some(&ct), None]]);
        let m = b.eval(&x);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(1, 2)], 3.0);
        assert_eq!(m[(2, 2)], 0.0);
    }

    #[test]
    fn canonical_merges() {
        let mut e = MatExpr::zeros(1, 1);
        e.terms.push(Term { var: 0, row: 0, col: 0, coef: 1.0 });
        e.terms.push(Term { var: 0, row: 0, col: 0, coef: -1.0 });
        assert!(e.canonical().is_zero());
    }
}

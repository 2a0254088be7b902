//! Fixed-step RK4 simulation of plants and observers, invariance checks and
//! CSV output.
//!
//! The observer is `x̂' = A x̂ + N(x̂) x̂ − L(y − C x̂)` with `y = C x`, so the
//! error `e = x − x̂` is driven by `A + LC`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::model::QuadSystem;
use crate::trapping::Ball;

/// States with a norm above this abort the integration.
pub const BLOWUP_NORM: f64 = 1e12;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("state became non-finite or exceeded {BLOWUP_NORM:e} at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("invalid simulation argument: {0}")]
    InvalidArgument(String),
    #[error("CSV error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sampled trajectory. `xhat` and `err2` are present together.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub xhat: Option<Vec<DVector<f64>>>,
    pub err2: Option<Vec<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n(&self) -> usize {
        self.x.first().map_or(0, |x| x.len())
    }

    /// `err2` sample closest to time `t`.
    pub fn err2_at(&self, t: f64) -> Option<f64> {
        let e = self.err2.as_ref()?;
        let k = self.t.iter().enumerate().min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?.0;
        Some(e[k])
    }
}

/// Vector field with the quadratic part stored as sparse triples.
struct Field {
    n: usize,
    a: Vec<f64>,
    /// `(i, j, k, coef)`: contributes `coef · x_j · x_k` to component `i`.
    quad: Vec<(usize, usize, usize, f64)>,
}

impl Field {
    fn new(sys: &QuadSystem) -> Self {
        let n = sys.n();
        let a = (0..n * n).map(|idx| sys.a()[(idx / n, idx % n)]).collect();
        let mut quad = Vec::new();
        for (j, m) in sys.nmats().iter().enumerate() {
            for i in 0..n {
                for k in 0..n {
                    let c = m[(i, k)];
                    if c != 0.0 {
                        quad.push((i, j, k, c));
                    }
                }
            }
        }
        Self { n, a, quad }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (o, row) in out.iter_mut().zip(self.a.chunks_exact(n)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        for &(i, j, k, c) in &self.quad {
            out[i] += c * x[j] * x[k];
        }
    }
}

/// One classical RK4 step of `f` on `x` in place.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Self { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }

    fn step(&mut self, x: &mut [f64], dt: f64, f: &mut impl FnMut(&[f64], &mut [f64])) {
        let stage = |tmp: &mut [f64], x: &[f64], k: &[f64], h: f64| {
            for ((t, xi), ki) in tmp.iter_mut().zip(x).zip(k) {
                *t = xi + h * ki;
            }
        };
        f(x, &mut self.k1);
        stage(&mut self.tmp, x, &self.k1, 0.5 * dt);
        f(&self.tmp, &mut self.k2);
        stage(&mut self.tmp, x, &self.k2, 0.5 * dt);
        f(&self.tmp, &mut self.k3);
        stage(&mut self.tmp, x, &self.k3, dt);
        f(&self.tmp, &mut self.k4);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<usize, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= dt && t_end.is_finite()) {
        return Err(SimError::InvalidArgument(format!("t_end must be >= dt, got {t_end}")));
    }
    Ok((t_end / dt).round().max(1.0) as usize)
}

fn blown_up(x: &[f64]) -> bool {
    let s: f64 = x.iter().map(|v| v * v).sum();
    !(s.sqrt() <= BLOWUP_NORM)
}

/// Integrates the plant from `x0` over `[0, t_end]`, recording every step.
pub fn integrate(sys: &QuadSystem, x0: &DVector<f64>, t_end: f64, dt: f64) -> Result<Trace, SimError> {
    integrate_strided(sys, x0, t_end, dt, 1)
}

/// As [`integrate`], keeping every `stride`-th step plus the final one.
pub fn integrate_strided(sys: &QuadSystem, x0: &DVector<f64>, t_end: f64, dt: f64, stride: usize) -> Result<Trace, SimError> {
    let n = sys.n();
    if x0.len() != n {
        return Err(SimError::InvalidArgument(format!("x0 has length {} but n = {n}", x0.len())));
    }
    let steps = step_count(t_end, dt)?;
    let stride = stride.max(1);
    let field = Field::new(sys);
    let mut rk = Rk4::new(n);
    let mut x: Vec<f64> = x0.iter().copied().collect();
    let mut tr = Trace { t: vec![0.0], x: vec![x0.clone()], xhat: None, err2: None };
    let mut f = |s: &[f64], o: &mut [f64]| field.eval(s, o);
    for step in 1..=steps {
        rk.step(&mut x, dt, &mut f);
        let t = step as f64 * dt;
        if blown_up(&x) {
            return Err(SimError::NonFinite { step, t });
        }
        if step % stride == 0 || step == steps {
            tr.t.push(t);
            tr.x.push(DVector::from_column_slice(&x));
        }
    }
    Ok(tr)
}

/// Integrates plant and observer jointly.
pub fn integrate_observer(
    sys: &QuadSystem,
    l: &DMatrix<f64>,
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trace, SimError> {
    integrate_observer_strided(sys, l, x0, xhat0, t_end, dt, 1)
}

pub fn integrate_observer_strided(
    sys: &QuadSystem,
    l: &DMatrix<f64>,
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<Trace, SimError> {
    let (n, p) = (sys.n(), sys.p());
    if x0.len() != n || xhat0.len() != n {
        return Err(SimError::InvalidArgument(format!("initial states must have length n = {n}")));
    }
    if l.shape() != (n, p) {
        return Err(SimError::InvalidArgument(format!("L must be {n}x{p}, got {}x{}", l.nrows(), l.ncols())));
    }
    let steps = step_count(t_end, dt)?;
    let stride = stride.max(1);
    let field = Field::new(sys);
    // The injection term is L C (x̂ − x).
    let lc = l * sys.c();
    let lc: Vec<f64> = (0..n * n).map(|idx| lc[(idx / n, idx % n)]).collect();
    let mut f = |s: &[f64], o: &mut [f64]| {
        let (x, xh) = s.split_at(n);
        let (ox, oxh) = o.split_at_mut(n);
        field.eval(x, ox);
        field.eval(xh, oxh);
        for i in 0..n {
            let row = &lc[i * n..(i + 1) * n];
            oxh[i] += (0..n).map(|j| row[j] * (xh[j] - x[j])).sum::<f64>();
        }
    };
    let mut rk = Rk4::new(2 * n);
    let mut s: Vec<f64> = x0.iter().chain(xhat0.iter()).copied().collect();
    let err = |s: &[f64]| (0..n).map(|i| (s[i] - s[n + i]).powi(2)).sum::<f64>().sqrt();
    let mut tr = Trace { t: vec![0.0], x: vec![x0.clone()], xhat: Some(vec![xhat0.clone()]), err2: Some(vec![err(&s)]) };
    for step in 1..=steps {
        rk.step(&mut s, dt, &mut f);
        let t = step as f64 * dt;
        if blown_up(&s) {
            return Err(SimError::NonFinite { step, t });
        }
        if step % stride == 0 || step == steps {
            tr.t.push(t);
            tr.x.push(DVector::from_column_slice(&s[..n]));
            tr.xhat.as_mut().unwrap().push(DVector::from_column_slice(&s[n..]));
            tr.err2.as_mut().unwrap().push(err(&s));
        }
    }
    Ok(tr)
}

/// Once a sample lies in the ball, every later sample stays within
/// `radius·(1 + tol)` of the center. Traces that never enter pass.
pub fn check_invariance(trace: &Trace, ball: &Ball, tol: f64) -> bool {
    let dist = |x: &DVector<f64>| (x - &ball.center).norm();
    match trace.x.iter().position(|x| dist(x) <= ball.radius) {
        None => true,
        Some(k) => trace.x[k..].iter().all(|x| dist(x) <= ball.radius * (1.0 + tol)),
    }
}

/// Writes `t,x1..xn[,xh1..xhn,err2]` with 17 significant digits.
pub fn export_csv(trace: &Trace, path: &Path) -> Result<(), SimError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_csv(trace, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv(trace: &Trace, w: &mut dyn Write) -> Result<(), SimError> {
    let n = trace.n();
    let mut header = String::from("t");
    for i in 1..=n {
        write!(header, ",x{i}").unwrap();
    }
    if trace.xhat.is_some() {
        for i in 1..=n {
            write!(header, ",xh{i}").unwrap();
        }
        header.push_str(",err2");
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for k in 0..trace.len() {
        line.clear();
        write!(line, "{:.16e}", trace.t[k]).unwrap();
        for v in trace.x[k].iter() {
            write!(line, ",{v:.16e}").unwrap();
        }
        if let (Some(xh), Some(e)) = (&trace.xhat, &trace.err2) {
            for v in xh[k].iter() {
                write!(line, ",{v:.16e}").unwrap();
            }
            write!(line, ",{:.16e}", e[k]).unwrap();
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn import_csv(path: &Path) -> Result<Trace, SimError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or(SimError::Csv { line: 1, msg: "empty file".into() })??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(SimError::Csv { line: 1, msg: "first column must be t".into() });
    }
    let n = cols.iter().filter(|c| c.starts_with('x') && !c.starts_with("xh")).count();
    let observer = cols.last() == Some(&"err2");
    let expect = 1 + n + if observer { n + 1 } else { 0 };
    if cols.len() != expect {
        return Err(SimError::Csv { line: 1, msg: format!("unexpected header {header}") });
    }
    let mut tr = Trace {
        t: Vec::new(),
        x: Vec::new(),
        xhat: observer.then(Vec::new),
        err2: observer.then(Vec::new),
    };
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SimError::Csv { line: idx + 2, msg: e.to_string() })?;
        if vals.len() != expect {
            return Err(SimError::Csv { line: idx + 2, msg: format!("expected {expect} fields, got {}", vals.len()) });
        }
        tr.t.push(vals[0]);
        tr.x.push(DVector::from_column_slice(&vals[1..=n]));
        if observer {
            tr.xhat.as_mut().unwrap().push(DVector::from_column_slice(&vals[n + 1..=2 * n]));
            tr.err2.as_mut().unwrap().push(vals[2 * n + 1]);
        }
    }
    Ok(tr)
}

/// A gnuplot script plotting the error norm (observer traces, log scale) or
/// the state components of `csv_name`.
pub fn plot_script(trace: &Trace, csv_name: &str) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n");
    if trace.err2.is_some() {
        let col = 2 * trace.n() + 2;
        writeln!(s, "set logscale y\nset ylabel '|x - xhat|'\nplot '{csv_name}' using 1:{col} with lines").unwrap();
    } else {
        let parts: Vec<String> = (2..=trace.n() + 1).map(|c| format!("'{csv_name}' using 1:{c} with lines")).collect();
        writeln!(s, "plot {}", parts.join(", ")).unwrap();
    }
    s
}

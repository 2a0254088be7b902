//! The `obsv` command-line front end.
//!
//! Every subcommand loads a model (a shipped fixture or a JSON file), runs
//! one workflow, prints a short report and writes its artifacts under
//! `--out` together with `manifest.json`, which records the configuration,
//! tool versions and SHA-256 checksums of every artifact in the directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lmi::{self, LmiError, RobustMethod, UncertaintyRegion};
use crate::model::{self, Model, ModelError, QuadSystem};
use crate::sim::{self, SimError};
use crate::synth::{self, ObserverDesign, SynthError};
use crate::trapping::{self, CertKind, TrapError};
use crate::{fixtures, linalg};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_BLOWUP: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

/// Environment variable overriding the solver feasibility tolerance.
pub const TOL_ENV: &str = "OBSV_SOLVER_TOL";
const BACKEND_VERSION: &str = "clarabel 0.11";

#[derive(Debug, Parser)]
#[command(name = "obsv", version, about = "Observer synthesis for quadratic energy-preserving systems")]
pub struct Cli {
    /// Directory receiving artifacts and the manifest.
    #[arg(long, global = true, default_value = "obsv-out")]
    pub out: PathBuf,
    /// Seed for sampling-based checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Shipped fixture: lorenz or mfe9.
    #[arg(long, conflicts_with = "model")]
    pub fixture: Option<String>,
    /// Model JSON file.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SynthMethod {
    Local,
    Global,
    Iterative,
    /// Single-point condition at the center of a Euclidean ball.
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum RobustArg {
    Auto,
    Vertices,
    Ball,
}

impl From<RobustArg> for RobustMethod {
    fn from(r: RobustArg) -> Self {
        match r {
            RobustArg::Auto => RobustMethod::Auto,
            RobustArg::Vertices => RobustMethod::Vertices,
            RobustArg::Ball => RobustMethod::Ball,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Validate a model and print its structural constants.
    Check {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Certify a trapping ball for the plant.
    Trap {
        #[command(flatten)]
        model: ModelArgs,
        /// Kernel of Q: unit vectors `e2,e3`, or `auto` for the largest
        /// admissible subspace.
        #[arg(long)]
        kerq: Option<String>,
    },
    /// Synthesize an observer gain.
    Synth(SynthArgs),
    /// Simulate the plant and, given a gain, the observer.
    Simulate(SimulateArgs),
    /// Certify a given (L, P) pair over a region.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "local")]
    pub method: SynthMethod,
    /// Region: `ball:R@c1,..,cn`, `l1:R@c1,..,cn` or `poly:FILE`. A `...`
    /// entry repeats the preceding value up to length n.
    #[arg(long = "Y", alias = "y")]
    pub region: Option<String>,
    #[arg(long)]
    pub kerq: Option<String>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long, default_value_t = 1e3)]
    pub alpha2: f64,
    /// Cap `P ⪯ κI` for refinement and global synthesis.
    #[arg(long)]
    pub pcap: Option<f64>,
    /// Refinement rounds after the local design (0 keeps it as is).
    #[arg(long = "max-iter", alias = "iters")]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    pub robust: RobustArg,
    /// Lexicographic trace minimization of the refined gain.
    #[arg(long)]
    pub tie_break: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Design JSON from `obsv synth`.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Gain as rows separated by `;` (a single column may be given as a list).
    #[arg(long = "L", allow_hyphen_values = true)]
    pub gain: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    /// Observer initial state; defaults to zero.
    #[arg(long, allow_hyphen_values = true)]
    pub xhat0: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = sim::DEFAULT_DT)]
    pub dt: f64,
    /// Keep every k-th step in the CSV.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long = "L", allow_hyphen_values = true)]
    pub gain: Option<String>,
    /// `diag:v1,..,vn` or rows separated by `;`.
    #[arg(long = "P", allow_hyphen_values = true)]
    pub lyap: Option<String>,
    #[arg(long = "Y", alias = "y")]
    pub region: Option<String>,
    /// Random region points for the sampling cross-check.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    fn parse(msg: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, msg: msg.into() }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = if matches!(e, ModelError::Io { .. }) { EXIT_IO } else { EXIT_PARSE };
        Self { code, msg: e.to_string() }
    }
}

impl From<LmiError> for CliError {
    fn from(e: LmiError) -> Self {
        let code = match e {
            LmiError::Infeasible(_) | LmiError::NumericalTrouble(_) => EXIT_INFEASIBLE,
            _ => EXIT_PARSE,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<TrapError> for CliError {
    fn from(e: TrapError) -> Self {
        let code = match e {
            TrapError::Model(_) | TrapError::InvalidQ(_) | TrapError::KernelIntersection | TrapError::UnsupportedRegionForm(_) => {
                EXIT_PARSE
            }
            _ => EXIT_INFEASIBLE,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        let code = match &e {
            SynthError::Trap(t) => return CliError::from(t.clone()),
            SynthError::Model(_) | SynthError::NonPositiveArgument(_) | SynthError::RegionMismatch(_) => EXIT_PARSE,
            _ => EXIT_INFEASIBLE,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::NonFinite { .. } => EXIT_BLOWUP,
            SimError::Io(_) => EXIT_IO,
            _ => EXIT_PARSE,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_IO, msg: e.to_string() }
    }
}

/// Parses arguments, runs the subcommand and returns the exit code.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_PARSE,
            };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            e.code
        }
    }
}

fn apply_tol_env() -> Result<Option<f64>, CliError> {
    match std::env::var(TOL_ENV) {
        Ok(v) => {
            let tol: f64 = v.trim().parse().map_err(|_| CliError::parse(format!("{TOL_ENV}={v} is not a number")))?;
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(CliError::parse(format!("{TOL_ENV} must be positive, got {v}")));
            }
            lmi::set_feas_tol(tol);
            Ok(Some(tol))
        }
        Err(_) => {
            lmi::set_feas_tol(lmi::DEFAULT_FEAS_TOL);
            Ok(None)
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    apply_tol_env()?;
    let mut out = Output::new(&cli.out);
    let code = match &cli.command {
        Command::Check { model } => cmd_check(model, &mut out)?,
        Command::Trap { model, kerq } => cmd_trap(model, kerq.as_deref(), &mut out)?,
        Command::Synth(a) => cmd_synth(a, &mut out)?,
        Command::Simulate(a) => cmd_simulate(a, &mut out)?,
        Command::Verify(a) => cmd_verify(a, cli.seed, &mut out)?,
    };
    out.finish(cli, code)?;
    Ok(code)
}

// ---------------------------------------------------------------------------
// Model, region and matrix arguments

struct Loaded {
    name: String,
    model: Model,
    sys: QuadSystem,
}

fn load(args: &ModelArgs) -> Result<Loaded, CliError> {
    let (name, model) = match (&args.fixture, &args.model) {
        (Some(f), None) => {
            let m = fixtures::by_name(f)
                .ok_or_else(|| CliError::parse(format!("unknown fixture '{f}' (known: {})", fixtures::NAMES.join(", "))))?;
            (f.clone(), m)
        }
        (None, Some(p)) => (p.display().to_string(), model::load_model(p)?),
        _ => return Err(CliError::parse("exactly one of --fixture or --model is required")),
    };
    let sys = model.to_system()?;
    Ok(Loaded { name, model, sys })
}

/// Splits a comma list, expanding `...` by repeating the preceding entry
/// until the list has `n` entries.
pub fn parse_list(text: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let tokens: Vec<&str> = text.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    let mut vals = Vec::new();
    let mut ellipsis_at = None;
    for tok in &tokens {
        if *tok == "..." || *tok == "…" {
            if ellipsis_at.is_some() || vals.is_empty() {
                return Err(CliError::parse(format!("misplaced '...' in '{text}'")));
            }
            ellipsis_at = Some(vals.len());
            continue;
        }
        vals.push(tok.parse::<f64>().map_err(|_| CliError::parse(format!("'{tok}' is not a number in '{text}'")))?);
    }
    if let Some(pos) = ellipsis_at {
        if vals.len() > n {
            return Err(CliError::parse(format!("'{text}' has more than {n} entries")));
        }
        let fill = vals[pos - 1];
        let missing = n - vals.len();
        vals.splice(pos..pos, std::iter::repeat_n(fill, missing));
    }
    if vals.len() != n {
        return Err(CliError::parse(format!("expected {n} entries, got {} in '{text}'", vals.len())));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(CliError::parse(format!("non-finite entry in '{text}'")));
    }
    Ok(vals)
}

pub fn parse_vector(text: &str, n: usize) -> Result<DVector<f64>, CliError> {
    Ok(DVector::from_vec(parse_list(text, n)?))
}

/// `diag:v1,..` or rows separated by `;`. A single row of length `rows`
/// is read as a column when `cols == 1`.
pub fn parse_matrix(text: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, CliError> {
    if let Some(d) = text.strip_prefix("diag:") {
        if rows != cols {
            return Err(CliError::parse("diag: needs a square matrix"));
        }
        return Ok(DMatrix::from_diagonal(&parse_vector(d, rows)?));
    }
    let parts: Vec<&str> = text.split(';').collect();
    if parts.len() == 1 && cols == 1 {
        return Ok(DMatrix::from_column_slice(rows, 1, &parse_list(parts[0], rows)?));
    }
    if parts.len() != rows {
        return Err(CliError::parse(format!("expected {rows} rows separated by ';', got {}", parts.len())));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (i, p) in parts.iter().enumerate() {
        for (j, v) in parse_list(p, cols)?.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PolyFile {
    Region(UncertaintyRegion),
    Vertices(Vec<Vec<f64>>),
}

/// Region grammar `ball:R@c1,..,cn`, `l1:R@c1,..,cn`, `poly:FILE`. An
/// omitted center means the origin.
pub fn parse_region(text: &str, n: usize) -> Result<UncertaintyRegion, CliError> {
    let (kind, rest) = text.split_once(':').ok_or_else(|| CliError::parse(format!("region '{text}' lacks a kind prefix")))?;
    let region = match kind {
        "ball" | "l1" => {
            let (r, c) = match rest.split_once('@') {
                Some((r, c)) => (r, Some(c)),
                None => (rest, None),
            };
            let radius: f64 = r.trim().parse().map_err(|_| CliError::parse(format!("bad radius '{r}'")))?;
            let center = match c {
                Some(c) => parse_vector(c, n)?,
                None => DVector::zeros(n),
            };
            if kind == "ball" {
                UncertaintyRegion::ball2(center, radius)
            } else {
                UncertaintyRegion::ball1(center, radius)
            }
        }
        "poly" => {
            let body = std::fs::read_to_string(rest)
                .map_err(|e| CliError { code: EXIT_IO, msg: format!("cannot read polytope file {rest}: {e}") })?;
            let parsed: PolyFile =
                serde_json::from_str(&body).map_err(|e| CliError::parse(format!("polytope file {rest}: {e}")))?;
            match parsed {
                PolyFile::Region(r @ UncertaintyRegion::Polytope { .. }) => r,
                PolyFile::Region(_) => return Err(CliError::parse("poly: file must describe a polytope")),
                PolyFile::Vertices(v) => UncertaintyRegion::Polytope {
                    vertices: v.into_iter().map(DVector::from_vec).collect(),
                    faces: None,
                },
            }
        }
        other => return Err(CliError::parse(format!("unknown region kind '{other}' (use ball, l1 or poly)"))),
    };
    region.validate()?;
    if region.dim() != n {
        return Err(CliError::parse(format!("region has dimension {} but the model has n = {n}", region.dim())));
    }
    Ok(region)
}

/// Projector with kernel spanned by the listed unit vectors, or the
/// largest admissible kernel for `auto`.
pub fn parse_kerq(spec: &str, sys: &QuadSystem) -> Result<DMatrix<f64>, CliError> {
    let n = sys.n();
    if spec == "auto" {
        return Ok(model::kernel_q(sys, None)?.q);
    }
    let mut idx = Vec::new();
    for tok in spec.split(',').map(str::trim) {
        let k: usize = tok
            .strip_prefix('e')
            .and_then(|s| s.parse().ok())
            .filter(|&k| k >= 1 && k <= n)
            .ok_or_else(|| CliError::parse(format!("bad kernel vector '{tok}' (expected e1..e{n})")))?;
        idx.push(k - 1);
    }
    let b = DMatrix::from_fn(n, idx.len(), |r, c| if r == idx[c] { 1.0 } else { 0.0 });
    let kq = model::kernel_q(sys, Some(&b))?;
    if !kq.valid {
        return Err(CliError::parse(format!("span({spec}) is not in the kernel of every Q_i")));
    }
    Ok(kq.q)
}

fn default_kerq(name: &str) -> &'static str {
    match name {
        "lorenz" => "e2,e3",
        "mfe9" => "e1",
        _ => "auto",
    }
}

fn default_alpha1(name: &str) -> f64 {
    if name == "mfe9" {
        1.0
    } else {
        1e-3
    }
}

// ---------------------------------------------------------------------------
// Artifacts and manifest

struct Output {
    dir: PathBuf,
    written: Vec<String>,
    summary: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize, Default)]
struct Manifest {
    tool: String,
    versions: serde_json::Map<String, serde_json::Value>,
    runs: Vec<serde_json::Value>,
    /// Artifact name to SHA-256 hex digest.
    files: std::collections::BTreeMap<String, String>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Output {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), written: Vec::new(), summary: serde_json::Map::new() }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)?;
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    fn finish(&mut self, cli: &Cli, code: i32) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join("manifest.json");
        let mut man: Manifest = std::fs::read_to_string(&path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        man.tool = "obsv".into();
        man.versions.insert("obsv".into(), env!("CARGO_PKG_VERSION").into());
        man.versions.insert("sdp_backend".into(), BACKEND_VERSION.into());
        man.runs.push(serde_json::json!({
            "config": cli.command,
            "out": cli.out.display().to_string(),
            "seed": cli.seed,
            "feas_tol": lmi::feas_tol(),
            "exit_code": code,
            "artifacts": self.written,
            "summary": self.summary,
        }));
        // Refresh digests of every artifact still present in the directory.
        let mut names: Vec<String> = man.files.keys().cloned().collect();
        names.extend(self.written.iter().cloned());
        man.files.clear();
        for name in names {
            if let Ok(bytes) = std::fs::read(self.dir.join(&name)) {
                man.files.insert(name, sha256_hex(&bytes));
            }
        }
        let text = serde_json::to_string_pretty(&man).expect("manifest serializes");
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.6}", x + 0.0)).collect();
    format!("({})", parts.join(", "))
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_check(args: &ModelArgs, out: &mut Output) -> Result<i32, CliError> {
    let m = load(args)?;
    let sys = &m.sys;
    let gamma = model::n_norm(sys);
    let sn = model::sn_basis(sys)?;
    let energy = model::energy_violation(sys.nmats());
    println!("model: {}", m.name);
    println!("n = {}, p = {}", sys.n(), sys.p());
    println!("energy check: pass");
    println!("gamma = {gamma:.10}");
    println!("dim S_N = {}", sn.dim);
    println!("spectral abscissa of A = {:.6}", linalg::spectral_abscissa(sys.a()));
    if let Model::Fluid(f) = &m.model {
        println!("fluid form: Re = {}, c = {}", f.re, fmt_vec(&f.c));
    }
    let report = serde_json::json!({
        "model": m.name,
        "n": sys.n(),
        "p": sys.p(),
        "energy_preserving": energy.is_none(),
        "gamma": gamma,
        "sn_dim": sn.dim,
        "spectral_abscissa": linalg::spectral_abscissa(sys.a()),
    });
    out.note("gamma", gamma);
    out.note("sn_dim", sn.dim);
    out.write("check.json", &json(&report))?;
    Ok(EXIT_OK)
}

fn cmd_trap(args: &ModelArgs, kerq: Option<&str>, out: &mut Output) -> Result<i32, CliError> {
    let m = load(args)?;
    let spec = kerq.unwrap_or_else(|| default_kerq(&m.name));
    let q = parse_kerq(spec, &m.sys)?;
    let cert = trapping::state_trap_sdp(&m.sys, &q)?;
    println!("model: {}, ker Q = {spec}", m.name);
    if cert.kind == CertKind::Degenerate {
        println!("degenerate: every ball centered at the origin is trapping (s* = {:.3e})", cert.witness.s);
    } else {
        println!("trapping radius r = {:.6}", cert.ball.radius);
        println!("center d = {}", fmt_vec(&cert.ball.center));
        println!("decay rate alpha = {:.6}", cert.alpha);
    }
    out.note("radius", cert.ball.radius);
    out.note("kind", cert.kind);
    out.write("state_cert.json", cert.to_json().as_bytes())?;
    if let Model::Fluid(f) = &m.model {
        let ft = trapping::fluid_trap(f)?;
        println!("energy-ellipsoid ball: r = {:.6} around {}", ft.ball.radius, fmt_vec(&ft.ball.center));
        out.write("fluid_trap.json", &json(&ft))?;
    }
    Ok(EXIT_OK)
}

fn cmd_synth(a: &SynthArgs, out: &mut Output) -> Result<i32, CliError> {
    let m = load(&a.model)?;
    let sys = &m.sys;
    let n = sys.n();
    let spec = a.kerq.clone().unwrap_or_else(|| default_kerq(&m.name).to_string());
    let q = parse_kerq(&spec, sys)?;
    let alpha1 = a.alpha1.unwrap_or_else(|| default_alpha1(&m.name));
    let region = match &a.region {
        Some(r) => parse_region(r, n)?,
        None => {
            let cert = trapping::state_trap_sdp(sys, &q)?;
            println!("no --Y given; using the certified state ball");
            cert.ball.to_region()
        }
    };
    let method: RobustMethod = a.robust.into();
    let design = match a.method {
        SynthMethod::Global => {
            let cert = trapping::state_trap_sdp(sys, &q)?;
            out.write("state_cert.json", cert.to_json().as_bytes())?;
            let opts = synth::GlobalOptions { pcap: a.pcap, method };
            synth::global_synth(sys, &region, &cert, &opts)?
        }
        SynthMethod::Center => {
            let (c, r) = match &region {
                UncertaintyRegion::Ball2 { center, radius } => (center.clone(), *radius),
                _ => return Err(CliError::parse("--method center needs a ball: region")),
            };
            synth::local_synth_at_center(sys, &c, r)?
        }
        SynthMethod::Local if a.max_iter.unwrap_or(0) == 0 => synth::local_synth_with(sys, &region, alpha1, a.alpha2, method)?,
        SynthMethod::Local | SynthMethod::Iterative => {
            let rounds = a.max_iter.unwrap_or(10);
            let init = synth::alg1(sys, &q, &region, alpha1, a.alpha2)?;
            out.write("state_cert.json", init.state_cert.to_json().as_bytes())?;
            if let Some(c) = &init.obs_cert {
                out.write("obs_cert_initial.json", c.to_json().as_bytes())?;
            }
            if let Some(f) = &init.obs_failure {
                println!("initial design: {f}");
            }
            if init.inclusion || rounds == 0 {
                println!("inclusion test passed for the initial design");
                init.design.clone()
            } else {
                let opts = synth::Alg2Options { pcap: a.pcap, trace_tie_break: a.tie_break, method, margin: None };
                let states = synth::alg2_iterate(sys, &init, rounds, &opts)?;
                for s in &states {
                    println!(
                        "round {:2}: alpha = {:.4e}, beta = {:.4e}, |LC| = {:.4e}, observer ball r = {}, inclusion = {}",
                        s.k,
                        s.alpha,
                        s.beta,
                        s.lc_norm,
                        s.obs_ball.as_ref().map_or("n/a".to_string(), |b| format!("{:.4}", b.radius)),
                        s.inclusion
                    );
                }
                out.write("refinement.json", &json(&states))?;
                out.note("rounds", states.len());
                out.note("inclusion", states.last().is_some_and(|s| s.inclusion));
                synth::alg2_design(sys, &init, &states)?
            }
        }
    };
    print_design(&design);
    out.note("method", design.method);
    out.note("alpha3", design.margins.alpha3);
    out.write("design.json", design.to_json().as_bytes())?;
    Ok(EXIT_OK)
}

fn print_design(d: &ObserverDesign) {
    println!("method: {:?}", d.method);
    println!("L =");
    for row in d.l.row_iter() {
        let parts: Vec<String> = row.iter().map(|v| format!("{:>13.6e}", v + 0.0)).collect();
        println!("  [{}]", parts.join(" "));
    }
    println!("P eigenvalues in [{:.6e}, {:.6e}]", d.margins.alpha1, d.margins.alpha2);
    println!("certified margin = {:.6e}", d.margins.alpha3);
    println!("gamma = {:.6}", d.gamma);
    println!("convergence radius = {}", d.convergence_radius);
    for w in &d.warnings {
        println!("warning: {w}");
    }
}

fn load_design(path: &Path) -> Result<ObserverDesign, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError { code: EXIT_IO, msg: format!("cannot read design {}: {e}", path.display()) })?;
    Ok(ObserverDesign::from_json(&text)?)
}

fn cmd_simulate(a: &SimulateArgs, out: &mut Output) -> Result<i32, CliError> {
    let m = load(&a.model)?;
    let sys = &m.sys;
    let n = sys.n();
    let x0 = parse_vector(&a.x0, n)?;
    let gain = match (&a.design, &a.gain) {
        (Some(p), None) => Some(load_design(p)?.l),
        (None, Some(g)) => Some(parse_matrix(g, n, sys.p())?),
        (None, None) => None,
        _ => return Err(CliError::parse("give at most one of --design or --L")),
    };
    let trace = match &gain {
        Some(l) => {
            if l.shape() != (n, sys.p()) {
                return Err(CliError::parse(format!("gain must be {n}x{}", sys.p())));
            }
            let xh = match &a.xhat0 {
                Some(s) => parse_vector(s, n)?,
                None => DVector::zeros(n),
            };
            sim::integrate_observer_strided(sys, l, &x0, &xh, a.t_end, a.dt, a.stride)?
        }
        None => sim::integrate_strided(sys, &x0, a.t_end, a.dt, a.stride)?,
    };
    let mut csv = Vec::new();
    sim::write_csv(&trace, &mut csv)?;
    out.write("trace.csv", &csv)?;
    out.write("plot.gp", sim::plot_script(&trace, "trace.csv").as_bytes())?;
    println!("samples: {}, final t = {}", trace.len(), trace.t.last().copied().unwrap_or(0.0));
    println!("final state = {}", fmt_vec(trace.x.last().expect("trace is nonempty")));
    if let Some(e) = &trace.err2 {
        println!("err2(0) = {:.6e}, err2(end) = {:.6e}", e[0], e[e.len() - 1]);
        out.note("err2_final", e[e.len() - 1]);
    }
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs, seed: u64, out: &mut Output) -> Result<i32, CliError> {
    let m = load(&a.model)?;
    let sys = &m.sys;
    let n = sys.n();
    let design = a.design.as_deref().map(load_design).transpose()?;
    let l = match (&a.gain, &design) {
        (Some(g), _) => parse_matrix(g, n, sys.p())?,
        (None, Some(d)) => d.l.clone(),
        (None, None) => return Err(CliError::parse("--L or --design is required")),
    };
    let p = match (&a.lyap, &design) {
        (Some(s), _) => parse_matrix(s, n, n)?,
        (None, Some(d)) => d.p.clone(),
        (None, None) => return Err(CliError::parse("--P or --design is required")),
    };
    let region = match (&a.region, &design) {
        (Some(r), _) => parse_region(r, n)?,
        (None, Some(d)) => d.region.clone(),
        (None, None) => return Err(CliError::parse("--Y or --design is required")),
    };
    if l.shape() != (n, sys.p()) || p.shape() != (n, n) {
        return Err(CliError::parse("L or P has the wrong shape"));
    }
    let margin = synth::verify_design(sys, &l, &p, &region);
    let sampled = synth::sampled_margin(sys, &l, &p, &region, a.samples, seed)?;
    println!("certified margin m = {margin:.6e}");
    println!("sampled margin over {} points = {sampled:.6e}", a.samples);
    // A zero margin certifies nothing, so there is nothing to contradict.
    let agree = margin == 0.0 || sampled >= margin - 1e-6 * (1.0 + linalg::spectral_norm(&p));
    println!("sampling agrees with certificate: {agree}");
    let report = serde_json::json!({
        "margin": margin,
        "sampled_margin": sampled,
        "samples": a.samples,
        "seed": seed,
        "agree": agree,
        "region": region,
    });
    out.note("margin", margin);
    out.write("verify.json", &json(&report))?;
    if margin > 0.0 {
        Ok(EXIT_OK)
    } else {
        println!("verification failed: no positive margin");
        Ok(EXIT_VERIFY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_expansion() {
        assert_eq!(parse_list("-0.9477,0,...,0", 9).unwrap()[..3], [-0.9477, 0.0, 0.0]);
        assert_eq!(parse_list("-0.5,0.5,...", 4).unwrap(), vec![-0.5, 0.5, 0.5, 0.5]);
        assert_eq!(parse_list("1,2,3", 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_list("1,2", 3).is_err());
        assert!(parse_list("...,1", 3).is_err());
        assert!(parse_list("1,x,3", 3).is_err());
    }

    #[test]
    fn region_grammar() {
        let r = parse_region("ball:100.7@0,0,37.5", 3).unwrap();
        assert_eq!(r, UncertaintyRegion::ball2(DVector::from_vec(vec![0.0, 0.0, 37.5]), 100.7));
        let r = parse_region("l1:2.8431@-0.9477,0,...,0", 9).unwrap();
        assert!(matches!(r, UncertaintyRegion::Ball1 { radius, .. } if radius == 2.8431));
        assert_eq!(parse_region("ball:2", 2).unwrap().center(), DVector::zeros(2));
        assert_eq!(parse_region("cube:1@0,0", 2).unwrap_err().code, EXIT_PARSE);
        assert_eq!(parse_region("ball:-1@0,0", 2).unwrap_err().code, EXIT_PARSE);
        assert_eq!(parse_region("ball:1@0,0", 3).unwrap_err().code, EXIT_PARSE);

        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.json");
        std::fs::write(&f, "[[0,0],[1,0],[0,1]]").unwrap();
        let r = parse_region(&format!("poly:{}", f.display()), 2).unwrap();
        assert_eq!(r.vertices().unwrap().len(), 3);
    }

    #[test]
    fn matrices() {
        assert_eq!(parse_matrix("diag:1,2", 2, 2).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])));
        assert_eq!(parse_matrix("-9.6,-704.4,0", 3, 1).unwrap(), DMatrix::from_column_slice(3, 1, &[-9.6, -704.4, 0.0]));
        assert_eq!(parse_matrix("1,2;3,4", 2, 2).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn kerq_specs() {
        let lor = fixtures::lorenz();
        let q = parse_kerq("e2,e3", &lor).unwrap();
        assert!((q - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]))).norm() < 1e-14);
        assert!(parse_kerq("e4", &lor).is_err());
        // N(e2)e3 is not zero for Lorenz, so e1,e2 together is invalid.
        assert_eq!(parse_kerq("e1,e2", &lor).unwrap_err().code, EXIT_PARSE);
        // The common null space of the Lorenz forms is trivial.
        assert!(parse_kerq("auto", &lor).is_err());
    }

    #[test]
    fn atomic_write_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"abc").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"abc");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}

//! Command-line front end: `certify`, `embed`, `verify`, `simulate` and
//! `gates`.
//!
//! Exit codes are 0 on success, 1 when a checked property fails (no
//! certificate, a failed verification, an aborted integration) and 2 on
//! invalid input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use euler_embed::certificate::CertificateSource;
use euler_embed::dynamics::{integrate, integrate_midpoint, DynamicsError, Method, Trajectory, DEFAULT_FP_TOL};
use euler_embed::gates::{build, GateId, GateSpec};
use euler_embed::model::parse_param_list;
use euler_embed::sampling::{derive_seed, gaussian_vector, rng_from_seed};
use euler_embed::verify::{run_all, VerifyOptions};
use euler_embed::{
    build_smap, euclideanize, find_certificate, particle_flow, CertificateOptions, CertificateResult, Embedding,
    EmbeddingOptions, Error, InnerProduct, Model, OrthMat, Result,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "euler-embed",
    version,
    about = "Embed energy-conserving quadratic ODEs into incompressible Euler flows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for a conserved inner product.
    Certify(CertifyArgs),
    /// Build the embedding and print its data.
    Embed(EmbedArgs),
    /// Run every numerical check; one JSON object per line.
    Verify(VerifyArgs),
    /// Integrate the ODE and optionally the particle flow on SO(n).
    Simulate(SimulateArgs),
    /// List the built-in gates, or export one as a dense model file.
    Gates(GatesArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model JSON file.
    #[arg(long, conflicts_with = "gate")]
    pub model: Option<PathBuf>,
    /// Built-in gate: rotor, pump, amplifier or rigid_body.
    #[arg(long)]
    pub gate: Option<String>,
    /// Gate parameters as K=V,... (alpha; i1, i2, i3 for rigid_body).
    #[arg(long, requires = "gate")]
    pub params: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Largest accepted cancellation residual.
    #[arg(long, default_value_t = 1e-10, allow_hyphen_values = true)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 1e-10, allow_hyphen_values = true)]
    pub tol: f64,
    /// Points sampled when choosing C.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Perturb entry (0,1) of the first S generator so it is no longer skew.
    Skew,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 1e-10, allow_hyphen_values = true)]
    pub tol: f64,
    /// Pointwise sample count; covelocity uses twice this, full Euler a fifth.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    /// Monte Carlo samples for the divergence and Gram checks.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub mc_samples: u64,
    /// Finite-difference step of the full Euler check.
    #[arg(long, default_value_t = 1e-4, allow_hyphen_values = true)]
    pub step: f64,
    /// Break the construction on purpose (negative control).
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Initial state as comma-separated values; drawn from --seed if absent.
    #[arg(long, allow_hyphen_values = true)]
    pub y0: Option<String>,
    #[arg(long, default_value = "0:10", allow_hyphen_values = true)]
    pub tspan: String,
    #[arg(long, default_value_t = 1e-3, allow_hyphen_values = true)]
    pub step: f64,
    /// rk4 or midpoint.
    #[arg(long, default_value = "rk4", value_parser = parse_method)]
    pub method: Method,
    /// Fixed-point tolerance of the midpoint rule.
    #[arg(long, allow_hyphen_values = true)]
    pub tol: Option<f64>,
    /// Append the flattened particle rotation Q(t), row-major.
    #[arg(long)]
    pub particles: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GatesArgs {
    #[arg(long)]
    pub gate: Option<String>,
    #[arg(long, requires = "gate")]
    pub params: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Failed = 1,
    Invalid = 2,
}

/// Result of one invocation: the document to emit and a diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub body: String,
    pub message: Option<String>,
}

impl Outcome {
    fn ok(body: String) -> Self {
        Self {
            status: Status::Ok,
            body,
            message: None,
        }
    }

    fn failed(body: String, message: String) -> Self {
        Self {
            status: Status::Failed,
            body,
            message: Some(message),
        }
    }

    pub fn code(&self) -> i32 {
        self.status as i32
    }
}

/// Runs a parsed command. Output goes to `--out` when given, otherwise into
/// [`Outcome::body`] for the caller to print.
pub fn execute(cli: &Cli) -> Outcome {
    let (result, out) = match &cli.command {
        Command::Certify(a) => (certify(a), a.output.out.as_ref()),
        Command::Embed(a) => (embed(a), a.output.out.as_ref()),
        Command::Verify(a) => (verify(a), a.output.out.as_ref()),
        Command::Simulate(a) => (simulate(a), a.output.out.as_ref()),
        Command::Gates(a) => (gates(a), a.out.as_ref()),
    };
    let mut outcome = match result {
        Ok(o) => o,
        Err(e) => {
            return Outcome {
                status: Status::Invalid,
                body: String::new(),
                message: Some(e.to_string()),
            }
        }
    };
    if let Some(path) = out {
        if let Err(e) = std::fs::write(path, &outcome.body) {
            return Outcome {
                status: Status::Invalid,
                body: String::new(),
                message: Some(format!("cannot write {}: {e}", path.display())),
            };
        }
        outcome.body.clear();
    }
    outcome
}

/// Parses `args` (including the program name) and runs them.
pub fn run_args<I, S>(args: I) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let status = if e.use_stderr() { Status::Invalid } else { Status::Ok };
            let text = e.render().to_string();
            match status {
                Status::Ok => Outcome::ok(text),
                _ => Outcome {
                    status,
                    body: String::new(),
                    message: Some(text),
                },
            }
        }
    }
}

fn load_model(args: &ModelArgs) -> Result<Model> {
    match (&args.model, &args.gate) {
        (Some(path), None) => Model::from_path(path),
        (None, Some(name)) => Model::from_gate(gate_spec(name, args.params.as_deref())?),
        _ => Err(Error::InvalidInput("give exactly one of --model or --gate".into())),
    }
}

fn gate_spec(name: &str, params: Option<&str>) -> Result<GateSpec<f64>> {
    let id = GateId::parse(name)?;
    if id == GateId::Custom {
        return Err(Error::InvalidInput(
            "the custom gate has no built-in definition; use --model".into(),
        ));
    }
    GateSpec::from_params(id, &parse_param_list(params.unwrap_or(""))?)
}

fn positive(name: &str, x: f64) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Error::InvalidInput(format!(
            "--{name} must be a positive number, got {x}"
        )))
    }
}

fn certificate(model: &Model, seed: u64, tol: f64) -> Result<CertificateResult<f64>> {
    let mut opts = CertificateOptions {
        residual_tol: positive("tol", tol)?,
        ..CertificateOptions::default()
    }
    .with_seed(seed);
    if let Some(g) = model.named_inner_product() {
        opts = opts.with_candidate(g);
    }
    find_certificate(&model.b, &opts)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn json_line<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct WitnessJson {
    y: Vec<f64>,
    lambda: f64,
    residual: f64,
}

#[derive(Serialize)]
struct CertificateJson {
    status: &'static str,
    model: &'static str,
    n: usize,
    #[serde(rename = "G")]
    gram: Option<Vec<Vec<f64>>>,
    #[serde(rename = "L")]
    cholesky: Option<Vec<Vec<f64>>>,
    min_eigenvalue: Option<f64>,
    null_space_dim: usize,
    source: Option<String>,
    witness: Option<WitnessJson>,
}

fn certificate_json(model: &Model, cert: &CertificateResult<f64>) -> CertificateJson {
    CertificateJson {
        status: if cert.is_found() { "found" } else { "not-found" },
        model: model.name(),
        n: model.dim(),
        gram: cert.gram.as_ref().map(|g| rows(g.gram())),
        cholesky: cert.cholesky.as_ref().map(rows),
        min_eigenvalue: cert.min_eigenvalue,
        null_space_dim: cert.null_space_dim,
        source: cert.source.map(|s| match s {
            CertificateSource::Candidate(i) => format!("candidate:{i}"),
            CertificateSource::Identity => "identity".into(),
            CertificateSource::Search => "search".into(),
        }),
        witness: cert.witness.as_ref().map(|w| WitnessJson {
            y: w.y.iter().copied().collect(),
            lambda: w.lambda,
            residual: w.residual,
        }),
    }
}

fn not_found_message(cert: &CertificateResult<f64>) -> String {
    match &cert.witness {
        Some(w) => format!(
            "no conserved inner product: B(y,y) = {:.6} y for y = {:?}",
            w.lambda,
            w.y.as_slice()
        ),
        None => "no conserved inner product found".into(),
    }
}

pub fn certify(args: &CertifyArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let cert = certificate(&model, args.output.seed, args.tol)?;
    let body = json_line(&certificate_json(&model, &cert));
    Ok(if cert.is_found() {
        Outcome::ok(body)
    } else {
        Outcome::failed(body, not_found_message(&cert))
    })
}

/// Certified model in Euclidean coordinates, ready for the embedding.
struct Certified {
    model: Model,
    cholesky: DMatrix<f64>,
    euclidean: euler_embed::SymBilinearMap<f64>,
}

fn certified(args: &ModelArgs, seed: u64, tol: f64) -> Result<Certified> {
    let model = load_model(args)?;
    let cert = certificate(&model, seed, tol)?;
    if !cert.is_found() {
        return Err(Error::Precondition(format!(
            "model cannot be embedded: {}",
            not_found_message(&cert)
        )));
    }
    let euclidean = euclideanize(&model.b, &cert)?;
    let cholesky = cert.cholesky.clone().expect("found certificates carry a factor");
    Ok(Certified {
        model,
        cholesky,
        euclidean,
    })
}

#[derive(Serialize)]
struct ChartJson {
    base: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct EmbedJson {
    model: &'static str,
    n: usize,
    manifold_dim: usize,
    #[serde(rename = "C")]
    c: f64,
    basis_change: Vec<Vec<f64>>,
    generators: Vec<Vec<Vec<f64>>>,
    charts: Vec<ChartJson>,
}

pub fn embed(args: &EmbedArgs) -> Result<Outcome> {
    let cm = certified(&args.model, args.output.seed, args.tol)?;
    let opts = EmbeddingOptions {
        seed: args.output.seed,
        c_samples: args.samples as usize,
        ..EmbeddingOptions::default()
    };
    let emb = Embedding::build(&cm.euclidean, &opts)?;
    let n = emb.n();
    let doc = EmbedJson {
        model: cm.model.name(),
        n,
        manifold_dim: n * (n - 1) / 2 + n + 1,
        c: emb.c(),
        basis_change: rows(&cm.cholesky.transpose()),
        generators: emb.smap().generators().iter().map(rows).collect(),
        charts: emb
            .charts()
            .iter()
            .map(|c| ChartJson {
                base: rows(c.base().matrix()),
            })
            .collect(),
    };
    Ok(Outcome::ok(json_line(&doc)))
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome> {
    let cm = certified(&args.model, args.output.seed, args.tol)?;
    let emb = Embedding::build(
        &cm.euclidean,
        &EmbeddingOptions {
            seed: args.output.seed,
            ..EmbeddingOptions::default()
        },
    )?;
    let smap = match args.inject_fault {
        Some(Fault::Skew) => emb.smap().with_perturbed_entry(0, 0, 1, 0.1),
        None => emb.smap().clone(),
    };
    let opts = VerifyOptions {
        seed: args.output.seed,
        mc_samples: args.mc_samples as usize,
        fd_step: positive("step", args.step)?,
        ..VerifyOptions::default().with_samples(args.samples as usize)
    };
    let reports = run_all(&smap, emb.c(), &cm.model.b, &cm.cholesky, &opts)?;
    let body: String = reports.iter().map(json_line).collect();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    Ok(if failed.is_empty() {
        Outcome::ok(body)
    } else {
        Outcome::failed(body, format!("failed checks: {}", failed.join(", ")))
    })
}

fn parse_tspan(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidInput(format!("--tspan '{s}' is not of the form A:B with A < B"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if a.is_finite() && b.is_finite() && a < b {
        Ok((a, b))
    } else {
        Err(bad())
    }
}

fn parse_state(s: &str, n: usize) -> Result<DVector<f64>> {
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidInput(format!("--y0 entry '{}' is not a finite number", v.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != n {
        return Err(Error::InvalidInput(format!(
            "--y0 has {} entries, model has n = {n}",
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

/// CSV with header `t,y1..yn,energy[,q11..qnn]`.
fn trajectory_csv(traj: &Trajectory<f64>, particles: Option<&[OrthMat<f64>]>, n: usize) -> String {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("y{i}")));
    header.push("energy".into());
    if particles.is_some() {
        for i in 1..=n {
            header.extend((1..=n).map(|j| format!("q{i}{j}")));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for (k, (t, y)) in traj.times.iter().zip(&traj.states).enumerate() {
        let _ = write!(out, "{t:.16e}");
        for v in y.iter() {
            let _ = write!(out, ",{v:.16e}");
        }
        let _ = write!(out, ",{:.16e}", traj.energies[k]);
        if let Some(q) = particles.and_then(|p| p.get(k)) {
            for i in 0..n {
                for j in 0..n {
                    let _ = write!(out, ",{:.16e}", q.matrix()[(i, j)]);
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let n = model.dim();
    let seed = args.output.seed;
    let span = parse_tspan(&args.tspan)?;
    let step = positive("step", args.step)?;
    let y0 = match &args.y0 {
        Some(s) => parse_state(s, n)?,
        None => gaussian_vector(&mut rng_from_seed(derive_seed(seed, 1)), n),
    };
    let needs_cert = args.particles || model.named_inner_product().is_none();
    let cert = if needs_cert {
        Some(certificate(&model, seed, 1e-10)?)
    } else {
        None
    };
    let found = cert.as_ref().filter(|c| c.is_found());
    if args.particles && found.is_none() {
        return Err(Error::Precondition(format!(
            "--particles needs an embeddable model: {}",
            not_found_message(cert.as_ref().expect("computed above"))
        )));
    }
    let g = model
        .named_inner_product()
        .or_else(|| found.and_then(|c| c.gram.clone()))
        .unwrap_or_else(|| InnerProduct::identity(n));

    let result = match args.method {
        Method::Midpoint => {
            let tol = positive("tol", args.tol.unwrap_or(DEFAULT_FP_TOL))?;
            integrate_midpoint(&model.b, &g, &y0, span, step, tol)
        }
        Method::Rk4 => integrate(Method::Rk4, &model.b, &g, &y0, span, step),
    };
    let (traj, failure) = match result {
        Ok(t) => (t, None),
        Err(DynamicsError::Invalid(e)) => return Err(e),
        Err(DynamicsError::Failed(f)) => (f.partial, Some(f.reason)),
    };

    let particles = match found {
        Some(cert) if args.particles && traj.len() > 1 => {
            let smap = build_smap(&euclideanize(&model.b, cert)?)?;
            let lt = cert
                .cholesky
                .as_ref()
                .expect("found certificates carry a factor")
                .transpose();
            let euclidean = Trajectory {
                times: traj.times.clone(),
                states: traj.states.iter().map(|y| &lt * y).collect(),
                energies: traj.energies.clone(),
            };
            Some(particle_flow(&smap, &euclidean, &OrthMat::identity(n), step)?)
        }
        Some(_) if args.particles => Some(vec![OrthMat::identity(n); traj.len()]),
        _ => None,
    };

    let mut body = trajectory_csv(&traj, particles.as_deref(), n);
    Ok(match failure {
        None => Outcome::ok(body),
        Some(reason) => {
            let _ = writeln!(body, "# status: failed: {reason}");
            Outcome::failed(body, format!("integration failed: {reason}"))
        }
    })
}

fn gate_params(spec: &GateSpec<f64>) -> BTreeMap<&'static str, f64> {
    match spec {
        GateSpec::Rotor { alpha } | GateSpec::Pump { alpha } | GateSpec::Amplifier { alpha } => {
            BTreeMap::from([("alpha", *alpha)])
        }
        GateSpec::RigidBody { inertia } => BTreeMap::from([("i1", inertia[0]), ("i2", inertia[1]), ("i3", inertia[2])]),
        GateSpec::Custom(_) => BTreeMap::new(),
    }
}

#[derive(Serialize)]
struct GateJson {
    gate: &'static str,
    n: usize,
    params: BTreeMap<&'static str, f64>,
    inner_product: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct DenseModelJson {
    n: usize,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
}

pub fn gates(args: &GatesArgs) -> Result<Outcome> {
    match &args.gate {
        Some(name) => {
            let b = build(&gate_spec(name, args.params.as_deref())?)?;
            Ok(Outcome::ok(json_line(&DenseModelJson {
                n: b.dim(),
                b: b.to_nested(),
            })))
        }
        None => {
            let mut body = String::new();
            for id in GateId::builtin() {
                let spec = GateSpec::<f64>::default_for(id)?;
                body.push_str(&json_line(&GateJson {
                    gate: id.name(),
                    n: spec.dim(),
                    params: gate_params(&spec),
                    inner_product: spec.conserved_inner_product().map(|g| rows(g.gram())),
                }));
            }
            Ok(Outcome::ok(body))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tspan_parsing() {
        assert_eq!(parse_tspan("0:10").unwrap(), (0.0, 10.0));
        assert_eq!(parse_tspan("-1.5 : 2").unwrap(), (-1.5, 2.0));
        for bad in ["10:0", "1", "a:b", "0:inf", "3:3"] {
            assert!(parse_tspan(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn state_parsing() {
        assert_eq!(
            parse_state("0, 1,1", 3).unwrap(),
            DVector::from_column_slice(&[0.0, 1.0, 1.0])
        );
        assert!(parse_state("0,1", 3).is_err());
        assert!(parse_state("0,x,1", 3).is_err());
    }

    #[test]
    fn csv_layout() {
        let traj = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![
                DVector::from_column_slice(&[1.0, 0.0]),
                DVector::from_column_slice(&[0.5, 0.25]),
            ],
            energies: vec![1.0, 0.3125],
        };
        let csv = trajectory_csv(&traj, None, 2);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,y1,y2,energy"));
        assert_eq!(
            lines.next(),
            Some("0.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0,1.0000000000000000e0")
        );
        let q = vec![OrthMat::identity(2); 2];
        let csv = trajectory_csv(&traj, Some(&q), 2);
        assert!(csv.starts_with("t,y1,y2,energy,q11,q12,q21,q22\n"));
        assert_eq!(csv.lines().nth(2).unwrap().split(',').count(), 8);
    }
}

//! Command-line interface: one command per process, every artifact written
//! under the configured output directory, every report carrying the full
//! configuration and the code version.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 numerical breakdown.

pub mod config;
pub mod verify;

use crate::calculus::{Coeff, Discretization, FormKind};
use crate::deform::{deformed_generators, modified_coefficient, solve_beltrami, GridParams, FIT_TOL};
use crate::error::{Error, Result};
use crate::spectral::spectrum_with_logdet;
use crate::surface::Moebius;
use crate::tensors::{self, formulas};
use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use verify::Instance;

pub const REPORT_FORMAT: &str = "kahler-moduli/report";
pub const REPORT_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "kahler-moduli", version, about = "Kähler geometry of moduli of surfaces with flat unitary bundles, at desk scale")]
pub struct Cli {
    /// Key–value configuration file; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mesh refinement level.
    #[arg(long, global = true)]
    pub level: Option<usize>,
    /// Rank of the bundle.
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Seed of the random representation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the mesh, the representation and the mesh validation report.
    Init,
    /// Write harmonic bases, their dimensions and the ∂̄ operators.
    Hodge,
    /// Evaluate a tensor formula.
    Tensors {
        #[arg(long, value_enum)]
        formula: FormulaName,
        /// Also write the sign and variant audit and print its table.
        #[arg(long)]
        audit: bool,
    },
    /// Compute a Laplacian spectrum and its regularized determinant.
    Spectral {
        #[arg(long, value_enum)]
        operator: OperatorName,
        /// Number of eigenvalues; defaults to a tenth of the unknowns.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Solve the Beltrami equation along a deformation direction.
    Beltrami {
        /// Multiple of the harmonic Beltrami differential.
        #[arg(long, default_value_t = 1e-2)]
        scale: f64,
        #[arg(long, default_value_t = 0.95)]
        trunc_radius: f64,
        #[arg(long, default_value_t = 400)]
        max_iter: usize,
        /// Index of the harmonic Beltrami differential (0, 1 or 2).
        #[arg(long, default_value_t = 0)]
        direction: usize,
    },
    /// Run the acceptance suite, or one criterion of it.
    Verify {
        #[arg(long)]
        criterion: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormulaName {
    /// Hessian of the metric on the tangent space.
    Metric,
    /// Ricci form of the metric.
    Ricci,
    /// Both sides of the Ricci-potential identity.
    Identity,
    /// First-variation cancellation of the Kähler form.
    Kahler,
}

impl FormulaName {
    fn name(self) -> &'static str {
        match self {
            FormulaName::Metric => "metric",
            FormulaName::Ricci => "ricci",
            FormulaName::Identity => "identity",
            FormulaName::Kahler => "kahler",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OperatorName {
    /// Laplacian on functions.
    #[value(name = "lap0")]
    Lap0,
    /// Laplacian on sections of the adjoint bundle.
    #[value(name = "lapAdE")]
    LapAdE,
}

/// Maps an error to its exit code: malformed or unsupported input is a
/// configuration error, everything else a numerical breakdown.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::UnsupportedGenus(_)
        | Error::UnsupportedDegree(_)
        | Error::UnsupportedRank(_)
        | Error::LevelOutOfRange(_)
        | Error::FormulaType { .. }
        | Error::EllipticityViolated(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Structured diagnostic printed on failure.
pub fn diagnostic(e: &Error) -> Value {
    let kind = format!("{e:?}");
    let kind = kind.split(['(', ' ', '{']).next().unwrap_or("").to_string();
    json!({ "error": kind, "message": e.to_string(), "exit_code": exit_code(e), "code_version": CODE_VERSION })
}

/// Loads the configuration file, if any, and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = cli.level {
        c.level = v;
    }
    if let Some(v) = cli.rank {
        c.n = v;
    }
    if let Some(v) = cli.seed {
        c.seed = v;
    }
    if let Some(v) = &cli.output {
        c.output = v.clone();
    }
    if let Command::Tensors { audit: true, .. } = cli.command {
        c.audit = true;
    }
    c.validate()?;
    Ok(c)
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = resolve_config(&cli).and_then(|c| execute(&cli.command, &c));
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&diagnostic(&e)).expect("diagnostic serializes"));
            exit_code(&e)
        }
    }
}

/// Report envelope shared by every command.
pub fn report(command: &str, config: &RunConfig, result: Value) -> Value {
    json!({
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "code_version": CODE_VERSION,
        "command": command,
        "config": config,
        "config_text": config.to_kv(),
        "result": result,
    })
}

fn to_value<T: Serialize>(t: &T) -> Result<Value> {
    Ok(serde_json::to_value(t)?)
}

/// Parses a document this crate wrote so it can be nested in a report.
fn parsed(doc: &str) -> Result<Value> {
    Ok(serde_json::from_str(doc)?)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, text)?;
    Ok(p)
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<PathBuf> {
    write_text(dir, name, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn base_disc(c: &RunConfig) -> Result<Discretization> {
    let mut d = Discretization::bolza(c.level, c.n, c.seed)?;
    d.solver = c.solver;
    if c.k != 0 {
        return Err(Error::UnsupportedDegree(c.k));
    }
    Ok(d)
}

fn moebius_json(m: &Moebius) -> Value {
    json!(m.entries().iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
}

/// Runs one command with a resolved configuration.
pub fn execute(command: &Command, c: &RunConfig) -> Result<i32> {
    let dir = c.output.clone();
    std::fs::create_dir_all(&dir)?;
    match command {
        Command::Init => {
            let d = base_disc(c)?;
            let v = crate::surface::validate_mesh(&d.mesh);
            write_text(&dir, "mesh.json", &d.mesh.to_json())?;
            write_text(&dir, "rep.json", &d.rep.to_json())?;
            let r = json!({ "vertices": d.mesh.vertices.len(), "triangles": d.mesh.triangles.len(), "validation": to_value(&v)? });
            write_json(&dir, "init.json", &report("init", c, r))?;
            println!("mesh level {}: {} triangles, area error {:.2e}", c.level, d.mesh.triangles.len(), v.area_error);
            Ok(if v.passed { EXIT_OK } else { EXIT_NUMERICAL })
        }
        Command::Hodge => {
            let i = Instance::build(c, c.level)?;
            let mut dims = serde_json::Map::new();
            for (name, b) in [("tx", &i.tx), ("end", &i.end), ("ad", &i.ad)] {
                write_text(&dir, &format!("basis_{name}.json"), &b.to_json())?;
                dims.insert(name.into(), json!({ "dim": b.dim(), "gap_ratio": b.gap_ratio }));
            }
            for (name, coeff) in [("trivial", Coeff::Trivial), ("tx", Coeff::TX), ("end", Coeff::EndE), ("ad", Coeff::AdE)] {
                let op = i.disc.dbar(FormKind::function(coeff))?;
                let f = std::fs::File::create(dir.join(format!("dbar_{name}.mtx")))?;
                i.disc.export_matrix_market(&op, std::io::BufWriter::new(f))?;
            }
            write_json(&dir, "hodge.json", &report("hodge", c, Value::Object(dims)))?;
            println!("dim H¹(TX) = {}, dim H¹(End E) = {}, dim H¹(Ad E) = {}", i.tx.dim(), i.end.dim(), i.ad.dim());
            Ok(EXIT_OK)
        }
        Command::Tensors { formula, audit } => {
            let i = Instance::build(c, c.level)?;
            let name = formula.name();
            let mut r = serde_json::Map::new();
            match formula {
                FormulaName::Metric | FormulaName::Ricci => {
                    let ctx = if *formula == FormulaName::Metric { i.end_ctx(c)? } else { i.ad_ctx(c)? };
                    let doc = if *formula == FormulaName::Metric { tensors::metric_formula(&ctx) } else { tensors::ricci_formula(&ctx) };
                    write_text(&dir, &format!("formula_{name}.json"), &doc.to_json())?;
                    let t = if *formula == FormulaName::Metric { tensors::metric_hessian(&ctx)? } else { tensors::ricci_form(&ctx)? };
                    write_text(&dir, &format!("tensor_{name}.json"), &t.to_json())?;
                    r.insert("tensor".into(), parsed(&t.to_json())?);
                    if *audit {
                        let a = tensors::audit(&ctx, name)?;
                        write_text(&dir, &format!("audit_{name}.json"), &a.to_json())?;
                        print!("{}", a.table());
                        r.insert("audit".into(), to_value(&a)?);
                    }
                }
                FormulaName::Identity => {
                    if *audit {
                        return Err(Error::Config("the audit applies to the metric and ricci formulas".into()));
                    }
                    let id = tensors::ricci_potential_identity(&i.ad_ctx(c)?)?;
                    write_text(&dir, "identity.json", &id.to_json())?;
                    println!("relative residual {:.4e}", id.relative_residual);
                    r.insert("identity".into(), parsed(&id.to_json())?);
                }
                FormulaName::Kahler => {
                    if *audit {
                        return Err(Error::Config("the audit applies to the metric and ricci formulas".into()));
                    }
                    write_text(&dir, "formula_kahler.json", &formulas::kahler().to_json())?;
                    let k = tensors::kahler_residual(&i.end_ctx(c)?)?;
                    println!("normalized residual {:.3e}", k.residual / k.scale);
                    r.insert("residual".into(), json!(k.residual));
                    r.insert("scale".into(), json!(k.scale));
                }
            }
            write_json(&dir, &format!("tensors_{name}.json"), &report("tensors", c, Value::Object(r)))?;
            Ok(EXIT_OK)
        }
        Command::Spectral { operator, count } => {
            let d = base_disc(c)?;
            let (name, coeff) = match operator {
                OperatorName::Lap0 => ("lap0", Coeff::Trivial),
                OperatorName::LapAdE => ("lapAdE", Coeff::AdE),
            };
            let m = count.unwrap_or_else(|| crate::spectral::default_count(&d, coeff));
            if m == 0 {
                return Err(Error::Config("count must be positive".into()));
            }
            let s = spectrum_with_logdet(&d, coeff, m)?;
            write_text(&dir, &format!("spectrum_{name}.csv"), &s.to_csv())?;
            write_json(&dir, &format!("spectral_{name}.json"), &report("spectral", c, parsed(&s.to_json())?))?;
            println!("{name}: {} eigenvalues, log det′ = {:.6} ± {:.1e}", s.count(), s.logdet.unwrap_or(f64::NAN), s.err.unwrap_or(f64::NAN));
            Ok(EXIT_OK)
        }
        Command::Beltrami { scale, trunc_radius, max_iter, direction } => {
            if *direction > 2 {
                return Err(Error::Config(format!("direction {direction} outside 0..=2")));
            }
            if !(*trunc_radius > 0.0 && *trunc_radius < 1.0) {
                return Err(Error::Config(format!("trunc-radius {trunc_radius} outside (0, 1)")));
            }
            let i = Instance::build(c, c.level)?;
            let p = GridParams { trunc_radius: *trunc_radius, max_iter: *max_iter, ..GridParams::default() };
            let coeff = modified_coefficient(&i.disc, &verify::mu_only(&i, *direction), *scale, &p)?;
            let map = solve_beltrami(&coeff, &p)?;
            map.write(&dir.join("mapping"))?;
            let g = deformed_generators(&map, &i.disc.group, FIT_TOL)?;
            let r = json!({
                "scale": scale,
                "direction": direction,
                "iterations": map.iterations,
                "residual_estimate": map.residual_estimate,
                "generators": g.group.generators.iter().map(moebius_json).collect::<Vec<_>>(),
                "side_pairings": g.group.side_pairings.iter().map(moebius_json).collect::<Vec<_>>(),
                "fit_residual": g.fit_residual,
                "relator_residual": g.relator_residual,
                "condition": g.condition,
            });
            write_json(&dir, "beltrami.json", &report("beltrami", c, r))?;
            println!("{} iterations, relator residual {:.3e}", map.iterations, g.relator_residual);
            Ok(EXIT_OK)
        }
        Command::Verify { criterion } => {
            let rep = match criterion {
                Some(id) => {
                    let one = verify::verify_one(c, *id)?;
                    verify::VerifyReport { passed: one.passed, criteria: vec![one] }
                }
                None => verify::verify(c),
            };
            for r in &rep.criteria {
                println!("{}", r.line());
            }
            write_json(&dir, "verify.json", &report("verify", c, to_value(&rep)?))?;
            Ok(if rep.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
    }
}

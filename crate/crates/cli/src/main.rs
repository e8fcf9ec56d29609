//! `newton-spectra`: generate test surfaces, compute spectra of
//! `-div(P_r ∇·) - W_r²`, scan the Birman-Schwinger kernel and check the
//! geometric identities.
//!
//! Exit codes: 0 success, 2 a theorem-level check failed, 3 a precondition
//! on the input failed, 64 usage error, 1 any other failure.

mod commands;
mod config;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, Shape};
use report::EXIT_USAGE;

#[derive(Debug, Parser)]
#[command(
    name = "newton-spectra",
    version,
    about = "Spectra of Newton-transformation Schrodinger operators on surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an analytic test surface as an OFF mesh.
    Generate(GenerateArgs),
    /// Run the full pipeline and classify the second eigenvalue.
    Verify(CommonArgs),
    /// Smallest eigenvalues of the operator pencil.
    Spectrum(SpectrumArgs),
    /// Scan the Birman-Schwinger kernel over a geometric mu grid.
    BsScan(ScanArgs),
    /// Position, Minkowski and resolvent identities.
    Identities(CommonArgs),
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    /// sphere, ellipsoid, bumped or torus.
    #[arg(long)]
    shape: Option<Shape>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Torus major radius.
    #[arg(long, visible_alias = "R")]
    major: Option<f64>,
    /// Torus minor radius.
    #[arg(long, visible_alias = "r")]
    minor: Option<f64>,
    /// Bump amplitude of the bumped sphere.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Bump frequency of the bumped sphere.
    #[arg(long)]
    frequency: Option<u32>,
    #[arg(long)]
    subdiv: Option<u32>,
    /// Torus grid size around the major circle.
    #[arg(long)]
    nu: Option<usize>,
    /// Torus grid size around the tube.
    #[arg(long)]
    nv: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    surface: SurfaceArgs,
    /// Output OFF path; defaults to `<output-dir>/<shape>.off`.
    #[arg(short, long)]
    output: Option<String>,
    /// Defaults to the NEWTON_SPECTRA_OUT_DIR environment variable.
    #[arg(long)]
    output_dir: Option<String>,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input mesh (OFF or OBJ); alternative to --shape.
    #[arg(long)]
    mesh: Option<String>,
    #[command(flatten)]
    surface: SurfaceArgs,
    /// Curvature order r (0 or 1).
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eig_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Number of smallest eigenvalues computed.
    #[arg(long)]
    eigen_count: Option<usize>,
    #[arg(long, value_parser = ["auto", "dense", "iterative"])]
    method: Option<String>,
    /// tol_sphere = factor · mean W².
    #[arg(long)]
    tol_sphere_factor: Option<f64>,
    #[arg(long)]
    tol_identity: Option<f64>,
    #[arg(long)]
    tol_orth: Option<f64>,
    #[arg(long)]
    multiplet_tol: Option<f64>,
    #[arg(long)]
    sphere_distance_threshold: Option<f64>,
    #[arg(long)]
    comparison_tol: Option<f64>,
    /// Shift of the random resolvent bound check.
    #[arg(long)]
    resolvent_mu: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// JSON report path; defaults to `<output-dir>/<command>.json`, else stdout.
    #[arg(long)]
    report: Option<String>,
    /// Defaults to the NEWTON_SPECTRA_OUT_DIR environment variable.
    #[arg(long)]
    output_dir: Option<String>,
    /// Record stage timings (makes reports non-reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// CSV of `index,eigenvalue,residual`.
    #[arg(long)]
    csv: Option<String>,
    /// CSV of the stiffness, mass and potential-mass entries.
    #[arg(long)]
    matrices: Option<String>,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    mu_min: Option<f64>,
    #[arg(long)]
    mu_max: Option<f64>,
    #[arg(long)]
    mu_steps: Option<usize>,
    /// Kernel eigenvalue branches tracked.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    scan_eig_tol: Option<f64>,
    #[arg(long)]
    crossing_tol: Option<f64>,
    #[arg(long)]
    match_tol: Option<f64>,
    /// CSV of `mu,top_1..top_k`.
    #[arg(long)]
    csv: Option<String>,
}

type Pairs = Vec<(&'static str, String)>;

macro_rules! collect {
    ($pairs:ident, $src:expr; $($field:ident => $key:literal),* $(,)?) => {
        $(if let Some(v) = &$src.$field {
            $pairs.push(($key, v.to_string()));
        })*
    };
}

impl SurfaceArgs {
    fn pairs(&self, p: &mut Pairs) {
        collect!(p, self; shape => "shape", radius => "radius", a => "a", b => "b", c => "c",
            major => "major", minor => "minor", amplitude => "amplitude", frequency => "frequency",
            subdiv => "subdiv", nu => "nu", nv => "nv");
    }
}

impl CommonArgs {
    fn pairs(&self, p: &mut Pairs) {
        collect!(p, self; mesh => "mesh", order => "order", seed => "seed", eig_tol => "eig-tol",
            max_iter => "max-iter", eigen_count => "eigen-count", method => "method",
            tol_sphere_factor => "tol-sphere-factor", tol_identity => "tol-identity", tol_orth => "tol-orth",
            multiplet_tol => "multiplet-tol", sphere_distance_threshold => "sphere-distance-threshold",
            comparison_tol => "comparison-tol", resolvent_mu => "resolvent-mu", trials => "trials",
            report => "report", output_dir => "output-dir");
        self.surface.pairs(p);
        if self.timings {
            p.push(("timings", "true".into()));
        }
    }
}

/// Resolution order: defaults, config file, flags, then the environment
/// for a still-unset output directory.
fn resolve(command: &str, file: Option<&PathBuf>, pairs: &Pairs) -> Result<RunConfig, String> {
    let mut config = RunConfig::new(command);
    if let Some(path) = file {
        config.apply_file(path)?;
    }
    for (k, v) in pairs {
        config.set(k, v)?;
    }
    config.apply_env();
    config.check()?;
    Ok(config)
}

fn build(command: Command) -> Result<RunConfig, String> {
    let mut p = Pairs::new();
    match command {
        Command::Generate(g) => {
            g.surface.pairs(&mut p);
            collect!(p, g; output => "output", output_dir => "output-dir");
            resolve("generate", g.config.as_ref(), &p)
        }
        Command::Verify(c) => {
            c.pairs(&mut p);
            resolve("verify", c.config.as_ref(), &p)
        }
        Command::Identities(c) => {
            c.pairs(&mut p);
            resolve("identities", c.config.as_ref(), &p)
        }
        Command::Spectrum(s) => {
            s.common.pairs(&mut p);
            collect!(p, s; csv => "csv", matrices => "matrices");
            resolve("spectrum", s.common.config.as_ref(), &p)
        }
        Command::BsScan(s) => {
            s.common.pairs(&mut p);
            collect!(p, s; mu_min => "mu-min", mu_max => "mu-max", mu_steps => "mu-steps", top_k => "top-k",
                scan_eig_tol => "scan-eig-tol", crossing_tol => "crossing-tol", match_tol => "match-tol",
                csv => "csv");
            resolve("bs-scan", s.common.config.as_ref(), &p)
        }
    }
}

fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    let config = match build(cli.command) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("usage error: {msg}");
            return EXIT_USAGE;
        }
    };
    if config.command == "generate" {
        return commands::cmd_generate(&config).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            report::exit_code(&e)
        });
    }
    commands::run_analysis(config)
}

fn main() {
    std::process::exit(run(std::env::args_os()));
}

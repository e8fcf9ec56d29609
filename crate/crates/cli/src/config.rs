//! Resolved run configuration: defaults, then a `key = value` file, then
//! command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use newton_spectra::eigen::Method;
use newton_spectra::identities::IdentityOptions;
use newton_spectra::{AnalyticSurface, ScanOptions, VerifyConfig};
use serde::Serialize;

/// Default output directory when neither a flag nor the config file sets one.
pub const OUT_DIR_ENV: &str = "NEWTON_SPECTRA_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Ellipsoid,
    Bumped,
    Torus,
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "ellipsoid" => Ok(Self::Ellipsoid),
            "bumped" => Ok(Self::Bumped),
            "torus" => Ok(Self::Torus),
            _ => Err(format!(
                "unknown shape '{s}' (expected sphere, ellipsoid, bumped or torus)"
            )),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Sphere => "sphere",
            Self::Ellipsoid => "ellipsoid",
            Self::Bumped => "bumped",
            Self::Torus => "torus",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceConfig {
    pub shape: Option<Shape>,
    pub radius: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub major: f64,
    pub minor: f64,
    pub amplitude: f64,
    pub frequency: u32,
    pub subdiv: u32,
    /// Torus grid; both default from `subdiv` when unset.
    pub nu: Option<usize>,
    pub nv: Option<usize>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            shape: None,
            radius: 1.0,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            major: 2.0,
            minor: 0.5,
            amplitude: 0.05,
            frequency: 3,
            subdiv: 3,
            nu: None,
            nv: None,
        }
    }
}

impl SurfaceConfig {
    pub fn analytic(&self) -> Option<AnalyticSurface> {
        Some(match self.shape? {
            Shape::Sphere => AnalyticSurface::Sphere { radius: self.radius },
            Shape::Ellipsoid => AnalyticSurface::Ellipsoid {
                a: self.a,
                b: self.b,
                c: self.c,
            },
            Shape::Bumped => AnalyticSurface::BumpedSphere {
                radius: self.radius,
                amplitude: self.amplitude,
                frequency: self.frequency,
            },
            Shape::Torus => AnalyticSurface::Torus {
                major: self.major,
                minor: self.minor,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanConfig {
    pub mu_min: Option<f64>,
    pub mu_max: Option<f64>,
    pub steps: usize,
    pub k: usize,
    pub eig_tol: f64,
    pub crossing_tol: f64,
    pub match_tol: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let d = ScanOptions::default();
        Self {
            mu_min: d.mu_min,
            mu_max: d.mu_max,
            steps: d.steps,
            k: d.k,
            eig_tol: d.eig_tol,
            crossing_tol: d.crossing_tol,
            match_tol: d.match_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityConfig {
    /// Shift of the resolvent in the random bound check.
    pub mu: f64,
    pub trials: usize,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        let d = IdentityOptions::default();
        Self {
            mu: d.mu,
            trials: d.trials,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub mesh: Option<PathBuf>,
    pub surface: SurfaceConfig,
    pub order: usize,
    pub verify: VerifyConfig,
    pub scan: ScanConfig,
    pub identity: IdentityConfig,
    pub output_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub matrices: Option<PathBuf>,
    pub timings: bool,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

fn parse_method(value: &str) -> Result<Option<Method>, String> {
    match value {
        "auto" => Ok(None),
        "dense" => Ok(Some(Method::Dense)),
        "iterative" => Ok(Some(Method::Iterative)),
        _ => Err(format!("unknown method '{value}' (expected auto, dense or iterative)")),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid value '{value}' for '{key}'")),
    }
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Self::default()
        }
    }

    /// Sets one option by its long flag name; underscores and dashes are
    /// interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let k = key.as_str();
        let s = &mut self.surface;
        let v = &mut self.verify;
        match k {
            "mesh" => self.mesh = Some(PathBuf::from(value)),
            "shape" => s.shape = Some(value.parse()?),
            "radius" => s.radius = parse(k, value)?,
            "a" => s.a = parse(k, value)?,
            "b" => s.b = parse(k, value)?,
            "c" => s.c = parse(k, value)?,
            "major" | "R" => s.major = parse(k, value)?,
            "minor" => s.minor = parse(k, value)?,
            "amplitude" => s.amplitude = parse(k, value)?,
            "frequency" => s.frequency = parse(k, value)?,
            "subdiv" => s.subdiv = parse(k, value)?,
            "nu" => s.nu = Some(parse(k, value)?),
            "nv" => s.nv = Some(parse(k, value)?),
            "order" => self.order = parse(k, value)?,
            "seed" => v.seed = parse(k, value)?,
            "eig-tol" => v.eig_tol = parse(k, value)?,
            "max-iter" => v.max_iter = parse(k, value)?,
            "eigen-count" => v.eigen_count = parse(k, value)?,
            "method" => v.method = parse_method(value)?,
            "tol-sphere-factor" => v.tol_sphere_factor = parse(k, value)?,
            "tol-identity" => v.tol_identity = parse(k, value)?,
            "tol-orth" => v.tol_orth = parse(k, value)?,
            "multiplet-tol" => v.multiplet_tol = parse(k, value)?,
            "sphere-distance-threshold" => v.sphere_distance_threshold = parse(k, value)?,
            "comparison-tol" => v.comparison_tol = parse(k, value)?,
            "mu-min" => self.scan.mu_min = Some(parse(k, value)?),
            "mu-max" => self.scan.mu_max = Some(parse(k, value)?),
            "mu-steps" => self.scan.steps = parse(k, value)?,
            "top-k" => self.scan.k = parse(k, value)?,
            "scan-eig-tol" => self.scan.eig_tol = parse(k, value)?,
            "crossing-tol" => self.scan.crossing_tol = parse(k, value)?,
            "match-tol" => self.scan.match_tol = parse(k, value)?,
            "resolvent-mu" => self.identity.mu = parse(k, value)?,
            "trials" => self.identity.trials = parse(k, value)?,
            "output-dir" => self.output_dir = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "report" => self.report = Some(PathBuf::from(value)),
            "csv" => self.csv = Some(PathBuf::from(value)),
            "matrices" => self.matrices = Some(PathBuf::from(value)),
            "timings" => self.timings = parse_bool(k, value)?,
            _ => return Err(format!("unknown option '{key}'")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected 'key = value'", i + 1))?;
            self.set(key, value).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Fills the output directory from the environment if still unset.
    pub fn apply_env(&mut self) {
        if self.output_dir.is_none() {
            self.output_dir = std::env::var_os(OUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from);
        }
    }

    /// Cross-field checks that clap cannot express.
    pub fn check(&self) -> Result<(), String> {
        if let (Some(lo), Some(hi)) = (self.scan.mu_min, self.scan.mu_max) {
            if !(lo > 0.0 && lo < hi) {
                return Err(format!("empty mu range [{lo}, {hi}]"));
            }
        }
        if self.scan.steps < 2 {
            return Err("mu-steps must be at least 2".into());
        }
        if self.order > 1 {
            return Err(format!("order must be 0 or 1, got {}", self.order));
        }
        if self.verify.eigen_count < 2 {
            return Err("eigen-count must be at least 2".into());
        }
        Ok(())
    }

    /// Explicit path, else `<output-dir>/<command>.<ext>`.
    pub fn resolve(&self, explicit: &Option<PathBuf>, ext: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| {
            self.output_dir
                .as_ref()
                .map(|d| d.join(format!("{}.{ext}", self.command)))
        })
    }

    pub fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            mu_min: self.scan.mu_min,
            mu_max: self.scan.mu_max,
            steps: self.scan.steps,
            k: self.scan.k,
            seed: self.verify.seed,
            eig_tol: self.scan.eig_tol,
            crossing_tol: self.scan.crossing_tol,
            match_tol: self.scan.match_tol,
        }
    }

    pub fn identity_options(&self) -> IdentityOptions {
        IdentityOptions {
            mu: self.identity.mu,
            trials: self.identity.trials,
            seed: self.verify.seed,
            tol_identity: self.verify.tol_identity,
            tol_orth: self.verify.tol_orth,
        }
    }
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use newton_spectra::assemble::assemble_pencil;
use newton_spectra::birman::scan_crossings;
use newton_spectra::curvature::{build_fields, CurvatureField};
use newton_spectra::identities::identity_report;
use newton_spectra::mesh::{load_mesh, save_off};
use newton_spectra::surfaces::{generate, torus_grid};
use newton_spectra::verify::{lemma_two_negative, theorem_report, verify_corollary, Verdict};
use newton_spectra::{Analysis, AnalyticSurface, Error, Result, TriMesh};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{exit_code, ErrorBlock, MeshStats, Report, SpectrumSection, Verdicts, EXIT_VIOLATION};

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut buf = Vec::new();
    contents(&mut buf).map_err(|e| io_error(path, e))?;
    fs::write(path, buf).map_err(|e| io_error(path, e))
}

/// Ignores a closed pipe on stdout rather than panicking.
fn print_stdout(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn surface_mesh(config: &RunConfig, surface: &AnalyticSurface) -> Result<TriMesh> {
    let s = &config.surface;
    match (*surface, s.nu, s.nv) {
        (AnalyticSurface::Torus { major, minor }, Some(nu), Some(nv)) => torus_grid(major, minor, nu, nv),
        (AnalyticSurface::Torus { .. }, Some(_), None) | (AnalyticSurface::Torus { .. }, None, Some(_)) => {
            Err(Error::InvalidArgument("torus grid needs both nu and nv".into()))
        }
        _ => generate(surface, s.subdiv),
    }
}

fn source_mesh(config: &RunConfig) -> Result<TriMesh> {
    match (&config.mesh, config.surface.analytic()) {
        (Some(path), _) => load_mesh(path, None),
        (None, Some(surface)) => surface_mesh(config, &surface),
        (None, None) => Err(Error::InvalidArgument("either --mesh or --shape is required".into())),
    }
}

fn mesh_stats(mesh: &TriMesh) -> MeshStats {
    MeshStats {
        validation: mesh.validate(),
        total_area: mesh.total_area(),
    }
}

#[derive(Serialize)]
struct GenerateSummary<'a> {
    path: &'a Path,
    mesh_stats: MeshStats,
}

/// Writes the analytic surface as OFF and prints its statistics.
pub fn cmd_generate(config: &RunConfig) -> Result<i32> {
    let surface = config
        .surface
        .analytic()
        .ok_or_else(|| Error::InvalidArgument("generate needs --shape".into()))?;
    let name = config.surface.shape.map(|s| s.to_string()).unwrap_or_default();
    let path: PathBuf = config
        .output
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|d| d.join(format!("{name}.off"))))
        .ok_or_else(|| Error::InvalidArgument("generate needs -o or an output directory".into()))?;
    let mesh = surface_mesh(config, &surface)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_off(&mesh, &path)?;
    let summary = GenerateSummary {
        path: &path,
        mesh_stats: mesh_stats(&mesh),
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    print_stdout(&json);
    Ok(0)
}

/// Mesh, curvature and assembly stages shared by the analysis commands.
fn prepare(report: &mut Report) -> Result<Analysis> {
    let config = report.config.clone();
    let mesh = report.timed("mesh", || source_mesh(&config))?;
    report.mesh_stats = Some(mesh_stats(&mesh));
    let raw = report.timed("curvature", || CurvatureField::estimate(&mesh))?;
    report.curvature_summary = Some(raw.summary());
    let field = build_fields(&raw, config.order)?;
    report.curvature_summary = Some(field.summary());
    let pencil = report.timed("assembly", || assemble_pencil(&mesh, &field, config.order))?;
    Ok(Analysis { mesh, field, pencil })
}

fn verify(report: &mut Report) -> Result<i32> {
    let analysis = prepare(report)?;
    let config = report.config.verify.clone();
    let spectrum = report.timed("spectrum", || analysis.spectrum(&config))?;
    report.spectrum = Some(SpectrumSection::new(&spectrum, config.eig_tol, config.multiplet_tol));
    let options = report.config.identity_options();
    report.identities = Some(report.timed("identities", || {
        identity_report(&analysis.mesh, &analysis.field, &analysis.pencil, &options)
    })?);
    let lemma = report.timed("lemma", || lemma_two_negative(&analysis, &config, Some(&spectrum)))?;
    let theorem = theorem_report(&analysis, &config, spectrum)?;
    let corollary = report
        .timed("corollary", || {
            verify_corollary(&analysis, &config, Some(theorem.lambda_2))
        })
        .map_err(|e| e.to_string());
    let passed = theorem.verdict != Verdict::Violation
        && theorem.consistent
        && lemma.holds
        && corollary.as_ref().is_ok_and(|c| c.holds);
    report.verdicts = Some(Verdicts {
        theorem,
        corollary,
        lemma,
        passed,
    });
    Ok(if passed { 0 } else { EXIT_VIOLATION })
}

fn spectrum(report: &mut Report) -> Result<i32> {
    let analysis = prepare(report)?;
    let config = report.config.verify.clone();
    if let Some(path) = &report.config.matrices {
        write_file(path, |out| analysis.pencil.write_coordinates(out))?;
    }
    let spectrum = report.timed("spectrum", || analysis.spectrum(&config))?;
    if let Some(path) = report.config.resolve(&report.config.csv, "csv") {
        write_file(&path, |out| spectrum.write_csv(out))?;
    }
    report.spectrum = Some(SpectrumSection::new(&spectrum, config.eig_tol, config.multiplet_tol));
    Ok(0)
}

fn bs_scan(report: &mut Report) -> Result<i32> {
    let analysis = prepare(report)?;
    let options = report.config.scan_options();
    let scan = report.timed("birman_schwinger", || scan_crossings(&analysis.pencil, &options))?;
    if let Some(path) = report.config.resolve(&report.config.csv, "csv") {
        write_file(&path, |out| scan.write_csv(out))?;
    }
    report.birman_schwinger = Some(scan);
    Ok(0)
}

fn identities(report: &mut Report) -> Result<i32> {
    let analysis = prepare(report)?;
    let options = report.config.identity_options();
    report.identities = Some(report.timed("identities", || {
        identity_report(&analysis.mesh, &analysis.field, &analysis.pencil, &options)
    })?);
    Ok(0)
}

/// Runs an analysis command and emits its report, including on failure.
pub fn run_analysis(config: RunConfig) -> i32 {
    let command = config.command.clone();
    let mut report = Report::new(config);
    let outcome = match command.as_str() {
        "verify" => verify(&mut report),
        "spectrum" => spectrum(&mut report),
        "bs-scan" => bs_scan(&mut report),
        "identities" => identities(&mut report),
        other => Err(Error::InvalidArgument(format!("unknown command '{other}'"))),
    };
    let code = match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            report.error = Some(ErrorBlock::from_error(&e));
            exit_code(&e)
        }
    };
    let json = report.to_json();
    match report.config.resolve(&report.config.report, "json") {
        Some(path) => {
            if let Err(e) = write_file(&path, |out| out.write_all(json.as_bytes())) {
                eprintln!("error: {e}");
                return exit_code(&e).max(1);
            }
        }
        None => print_stdout(&json),
    }
    code
}

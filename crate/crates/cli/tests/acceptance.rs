//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::error::Error as StdError;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use newton_spectra::birman::{
    dense_kernel_eigenvalues, kernel_bound_check, scan_crossings, KernelOperator, Restriction,
};
use newton_spectra::curvalg::{
    elementary_symmetric, maclaurin_gap, newton_eigenvalues, newton_eigenvalues_by_recursion, CurvatureTuple,
};
use newton_spectra::curvature::{build_fields, CurvatureField};
use newton_spectra::eigen::{dense_smallest, smallest_eigenpairs, Method, SolverOptions};
use newton_spectra::identities::{lr_position_residual, minkowski_residual, resolvent_bound_check};
use newton_spectra::mesh::save_off;
use newton_spectra::surfaces::{generate, torus_grid};
use newton_spectra::verify::{corollary_potential, lemma_two_negative, verify_corollary, verify_theorem};
use newton_spectra::{Analysis, AnalyticSurface, OperatorPencil, ScanOptions, TriMesh, VerifyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res = Result<String, Box<dyn StdError>>;
type Criterion = (&'static str, fn() -> Res);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+).into());
        }
    };
}

const SPHERE: AnalyticSurface = AnalyticSurface::Sphere { radius: 1.0 };
const ELLIPSOID: AnalyticSurface = AnalyticSurface::Ellipsoid { a: 2.0, b: 1.0, c: 1.0 };
const MILD_ELLIPSOID: AnalyticSurface = AnalyticSurface::Ellipsoid { a: 1.2, b: 1.0, c: 1.0 };
const BUMPED: AnalyticSurface = AnalyticSurface::BumpedSphere {
    radius: 1.0,
    amplitude: 0.05,
    frequency: 3,
};
const SEED: u64 = 0x5eed;

fn analysis(s: &AnalyticSurface, subdiv: u32, r: usize) -> Result<Analysis, Box<dyn StdError>> {
    Ok(Analysis::new(generate(s, subdiv)?, r)?)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn sphere_equality() -> Res {
    let config = VerifyConfig::default();
    let mut notes = Vec::new();
    for r in [0, 1] {
        let mut l2 = Vec::new();
        for subdiv in 3..=5 {
            let start = Instant::now();
            let t = verify_theorem(&analysis(&SPHERE, subdiv, r)?, &config)?;
            let elapsed = start.elapsed();
            ensure!(
                elapsed <= Duration::from_secs(60),
                "r={r} subdiv {subdiv} took {elapsed:?}"
            );
            if subdiv == 4 {
                ensure!((t.lambda_1 + 2.0).abs() <= 0.05, "r={r}: λ₁ = {}", t.lambda_1);
                ensure!(t.lambda_2.abs() <= 0.05, "r={r}: λ₂ = {}", t.lambda_2);
                ensure!(
                    t.lambda_2_multiplicity == 3,
                    "r={r}: multiplicity {}",
                    t.lambda_2_multiplicity
                );
            }
            l2.push(t.lambda_2.abs());
        }
        ensure!(strictly_decreasing(&l2), "r={r}: |λ₂| not decreasing {l2:?}");
        notes.push(format!("r={r} |λ₂| {:.1e}→{:.1e}→{:.1e}", l2[0], l2[1], l2[2]));
    }
    Ok(notes.join("; "))
}

fn strict_case() -> Res {
    let config = VerifyConfig::default();
    let mut notes = Vec::new();
    for r in [0, 1] {
        let l4 = verify_theorem(&analysis(&ELLIPSOID, 4, r)?, &config)?.lambda_2;
        let l5 = verify_theorem(&analysis(&ELLIPSOID, 5, r)?, &config)?.lambda_2;
        let change = (l5 - l4).abs() / l4.abs();
        ensure!(l4 <= -0.1 && l5 <= -0.1, "r={r}: λ₂ = {l4}, {l5}");
        ensure!(change <= 0.1, "r={r}: λ₂ moved {:.1}%", 100.0 * change);
        notes.push(format!("r={r} λ₂ {l4:.3}→{l5:.3} ({:.1}%)", 100.0 * change));
    }
    Ok(notes.join("; "))
}

fn birman_schwinger() -> Res {
    let config = VerifyConfig::default();
    let mut notes = Vec::new();
    for r in [0, 1] {
        let a = analysis(&ELLIPSOID, 3, r)?;
        let spectrum = a.spectrum(&config)?;
        let scan = scan_crossings(&a.pencil, &ScanOptions::default())?;
        ensure!(
            scan.counts_agree,
            "r={r}: {} crossings vs {} negative eigenvalues",
            scan.crossings.len(),
            scan.negative_in_window
        );
        let mut worst: f64 = 0.0;
        for j in 0..2 {
            let lambda = spectrum.eigenvalues[j];
            ensure!(lambda < 0.0, "r={r}: eigenvalue {j} = {lambda} not negative");
            let c = scan
                .crossings
                .iter()
                .find(|c| c.branch == j + 1)
                .ok_or_else(|| format!("r={r}: no crossing on branch {}", j + 1))?;
            let err = (c.mu + lambda).abs() / lambda.abs();
            ensure!(err <= 1e-5, "r={r}: branch {} μ₀ = {} vs −λ = {}", j + 1, c.mu, -lambda);
            worst = worst.max(err);
        }
        notes.push(format!(
            "r={r} {} crossings, max rel err {worst:.1e}",
            scan.crossings.len()
        ));
    }
    Ok(notes.join("; "))
}

fn resolvent_and_kernel_bounds() -> Res {
    let meshes = [(SPHERE, 3), (ELLIPSOID, 3), (MILD_ELLIPSOID, 3), (BUMPED, 3)];
    let mut min_resolvent = f64::INFINITY;
    let mut min_kernel = f64::INFINITY;
    let mut count = 0;
    for (surface, subdiv) in meshes {
        for r in [0, 1] {
            let a = analysis(&surface, subdiv, r)?;
            for mu in [0.1, 1.0, 10.0] {
                let c = resolvent_bound_check(&a.pencil, mu, 100, SEED)?;
                ensure!(
                    c.min_slack >= -1e-8,
                    "{surface:?} r={r} μ={mu}: resolvent slack {}",
                    c.min_slack
                );
                min_resolvent = min_resolvent.min(c.min_slack);
            }
            let k = kernel_bound_check(&a.pencil, 100, SEED)?;
            ensure!(
                k.min_slack >= -1e-8,
                "{surface:?} r={r}: kernel slack {} at μ={}",
                k.min_slack,
                k.worst_mu
            );
            min_kernel = min_kernel.min(k.min_slack);
            count += 1;
        }
    }
    Ok(format!(
        "{count} pencils × 100 trials; min slack resolvent {min_resolvent:.1e}, kernel {min_kernel:.1e}"
    ))
}

fn field(s: &AnalyticSurface, subdiv: u32, r: usize) -> Result<(TriMesh, CurvatureField), Box<dyn StdError>> {
    let mesh = generate(s, subdiv)?;
    let field = build_fields(&CurvatureField::estimate(&mesh)?, r)?;
    Ok((mesh, field))
}

fn minkowski() -> Res {
    let mut notes = Vec::new();
    for (name, surface, limit) in [("sphere", SPHERE, 0.01), ("ellipsoid", ELLIPSOID, 0.02)] {
        for r in [0, 1] {
            let mut res = Vec::new();
            for subdiv in 3..=5 {
                let (mesh, f) = field(&surface, subdiv, r)?;
                res.push(minkowski_residual(&mesh, &f, r)?);
            }
            ensure!(res[1] <= limit, "{name} r={r}: residual {} > {limit}", res[1]);
            ensure!(strictly_decreasing(&res), "{name} r={r}: not decreasing {res:?}");
            notes.push(format!("{name} r={r} {:.1e}", res[1]));
        }
    }
    Ok(notes.join("; "))
}

fn position_identity() -> Res {
    let mut notes = Vec::new();
    for radius in [1.0, 2.0] {
        let surface = AnalyticSurface::Sphere { radius };
        for r in [0, 1] {
            let mut res = Vec::new();
            for subdiv in 3..=5 {
                let a = analysis(&surface, subdiv, r)?;
                let v = lr_position_residual(&a.mesh, &a.field, &a.pencil)?;
                res.push(v.into_iter().fold(0.0, f64::max));
            }
            ensure!(res[1] <= 0.05, "R={radius} r={r}: residual {}", res[1]);
            ensure!(strictly_decreasing(&res), "R={radius} r={r}: not decreasing {res:?}");
            notes.push(format!("R={radius} r={r} {:.1e}", res[1]));
        }
    }
    Ok(notes.join("; "))
}

fn two_negative_lemma() -> Res {
    let config = VerifyConfig::default();
    let mut notes = Vec::new();
    for r in [0, 1] {
        let a = analysis(&ELLIPSOID, 4, r)?;
        let l = lemma_two_negative(&a, &config, None)?;
        ensure!(
            l.d.iter().any(|d| *d > 0.0) && l.applicable,
            "ellipsoid r={r}: d = {:?}",
            l.d
        );
        ensure!(
            l.negative_count >= 2,
            "ellipsoid r={r}: {} negative eigenvalues",
            l.negative_count
        );
        let negatives = l.negative_count;

        let s = analysis(&SPHERE, 4, r)?;
        let spectrum = s.spectrum(&config)?;
        let l = lemma_two_negative(&s, &config, Some(&spectrum))?;
        for i in 0..3 {
            ensure!(
                l.d[i].abs() <= 0.05 * l.f_norms_sq[i],
                "sphere r={r}: d_{} = {}",
                i + 1,
                l.d[i]
            );
        }
        let below = spectrum.count_below(-config.tol_sphere(&s.pencil));
        ensure!(below == 1, "sphere r={r}: {below} eigenvalues below −tol");
        notes.push(format!(
            "r={r} ellipsoid {} negative, sphere max|d| {:.1e}",
            negatives,
            l.d.iter().fold(0.0f64, |m, d| m.max(d.abs()))
        ));
    }
    Ok(notes.join("; "))
}

fn random_tuple(rng: &mut ChaCha8Rng, positive: bool) -> Vec<f64> {
    let n = rng.random_range(if positive { 2..=8 } else { 1..=8 });
    (0..n)
        .map(|_| {
            if positive {
                rng.random_range(0.05..4.0)
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect()
}

fn curvature_algebra() -> Res {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    const TRIALS: usize = 1000;
    for _ in 0..TRIALS {
        let k = random_tuple(&mut rng, false);
        let n = k.len();
        let t = CurvatureTuple::new(k.clone())?;
        let r = rng.random_range(0..=n);
        let scale = k.iter().fold(1.0f64, |m, x| m.max(x.abs())).powi(r as i32) * (1u64 << n) as f64;
        let eig = newton_eigenvalues(&t, r)?.eigenvalues;
        let s_r = elementary_symmetric(&t, r)?;
        let trace: f64 = eig.iter().sum();
        ensure!(
            (trace - (n - r) as f64 * s_r).abs() <= 1e-10 * scale,
            "trace identity fails on {k:?}, r={r}"
        );
    }
    for _ in 0..TRIALS {
        let k = random_tuple(&mut rng, false);
        let t = CurvatureTuple::new(k.clone())?;
        let r = rng.random_range(0..=k.len());
        let scale = k.iter().fold(1.0f64, |m, x| m.max(x.abs())).powi(r as i32) * (1u64 << k.len()) as f64;
        let a = newton_eigenvalues(&t, r)?.eigenvalues;
        let b = newton_eigenvalues_by_recursion(&t, r)?.eigenvalues;
        ensure!(
            a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-10 * scale),
            "recursion differs on {k:?}, r={r}"
        );
    }
    for _ in 0..TRIALS {
        let k = random_tuple(&mut rng, true);
        let t = CurvatureTuple::new(k.clone())?;
        let r = rng.random_range(1..k.len());
        let mean = k.iter().sum::<f64>() / k.len() as f64;
        ensure!(
            maclaurin_gap(&t, r)? >= -1e-10 * mean,
            "Maclaurin gap negative on {k:?}"
        );
        let c = rng.random_range(0.05..4.0);
        let mut umbilic = vec![c; k.len()];
        ensure!(
            maclaurin_gap(&CurvatureTuple::new(umbilic.clone())?, r)?.abs() <= 1e-10 * c,
            "gap nonzero at umbilic"
        );
        umbilic[0] *= 1.0 + rng.random_range(0.1..1.0);
        ensure!(
            maclaurin_gap(&CurvatureTuple::new(umbilic)?, r)? > 0.0,
            "gap zero off umbilic"
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed <= Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("3 × {TRIALS} tuples in {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

fn test_pencils() -> Result<Vec<(String, OperatorPencil)>, Box<dyn StdError>> {
    let mut out = Vec::new();
    for (name, s) in [
        ("sphere", SPHERE),
        ("ellipsoid", ELLIPSOID),
        ("mild ellipsoid", MILD_ELLIPSOID),
        ("bumped", BUMPED),
    ] {
        for r in [0, 1] {
            out.push((format!("{name} r={r}"), analysis(&s, 3, r)?.pencil));
        }
    }
    out.push((
        "torus r=0".into(),
        Analysis::new(torus_grid(2.0, 0.5, 32, 16)?, 0)?.pencil,
    ));
    Ok(out)
}

fn oracle_equivalence() -> Res {
    let mut worst_eig: f64 = 0.0;
    let pencils = test_pencils()?;
    for (name, p) in &pencils {
        ensure!(p.dim() <= 2000, "{name}: {} vertices", p.dim());
        let opts = SolverOptions {
            method: Some(Method::Iterative),
            shift: Some(p.default_shift()),
            tol: 1e-10,
            seed: SEED,
            ..Default::default()
        };
        let a = p.operator_matrix();
        let it = smallest_eigenpairs(&a, p.mass(), 6, &opts)?;
        let dense = dense_smallest(&a, p.mass(), 6)?;
        for (x, y) in it.eigenvalues.iter().zip(&dense.eigenvalues) {
            ensure!(close(*x, *y, 1e-8), "{name}: iterative {x} vs dense {y}");
            worst_eig = worst_eig.max((x - y).abs());
        }
    }
    let mut worst_k: f64 = 0.0;
    let mut kernels = 0;
    for (s, subdiv) in [(SPHERE, 2), (ELLIPSOID, 3), (BUMPED, 2)] {
        for r in [0, 1] {
            let p = analysis(&s, subdiv, r)?.pencil;
            ensure!(p.dim() <= 1000, "{s:?}: {} vertices", p.dim());
            for mu in [0.3, 2.0, 20.0] {
                for restriction in [Restriction::Full, Restriction::MeanZero] {
                    let op = KernelOperator::new(&p, mu, restriction)?.top_eigenvalues(4, SEED, 1e-12)?;
                    let dense = dense_kernel_eigenvalues(&p, mu, restriction)?;
                    for (x, y) in op.iter().zip(&dense) {
                        ensure!(close(*x, *y, 1e-8), "{s:?} r={r} μ={mu} {restriction:?}: {x} vs {y}");
                        worst_k = worst_k.max((x - y).abs());
                    }
                    kernels += 1;
                }
            }
        }
    }
    Ok(format!(
        "{} pencils max |Δλ| {worst_eig:.1e}; {kernels} kernels max |Δt| {worst_k:.1e}",
        pencils.len()
    ))
}

fn corollary() -> Res {
    let config = VerifyConfig::default();
    let mut min_gap = f64::INFINITY;
    let mut sphere_t = 0.0f64;
    for (s, subdiv) in [(SPHERE, 4), (ELLIPSOID, 3), (MILD_ELLIPSOID, 3), (BUMPED, 3)] {
        for r in [0, 1] {
            let a = analysis(&s, subdiv, r)?;
            let potential = corollary_potential(&a.field, r)?;
            for (v, (t, w)) in potential.iter().zip(a.pencil.w_squared()).enumerate() {
                ensure!(
                    t - w >= -1e-10,
                    "{s:?} r={r}: domination fails at vertex {v} by {}",
                    t - w
                );
                min_gap = min_gap.min(t - w);
            }
            let c = verify_corollary(&a, &config, None)?;
            ensure!(
                c.lambda_2_t <= c.lambda_2_l + 1e-8,
                "{s:?} r={r}: λ₂(T) {} > λ₂(ℒ) {}",
                c.lambda_2_t,
                c.lambda_2_l
            );
            if s == SPHERE {
                ensure!(c.lambda_2_t.abs() <= 0.05, "sphere r={r}: λ₂(T) = {}", c.lambda_2_t);
                sphere_t = sphere_t.max(c.lambda_2_t.abs());
            }
        }
    }
    Ok(format!(
        "min pointwise gap {min_gap:.1e}; sphere max |λ₂(T)| {sphere_t:.1e}"
    ))
}

fn precondition_gate() -> Res {
    let dir = std::env::temp_dir().join(format!("newton-spectra-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let mesh = torus_grid(2.0, 0.5, 64, 32)?;
    let path = dir.join("torus.off");
    save_off(&mesh, &path)?;
    let run = |order: &str| {
        Command::new(env!("CARGO_BIN_EXE_newton-spectra"))
            .args(["verify", "--mesh", path.to_str().unwrap(), "--order", order])
            .env_remove("NEWTON_SPECTRA_OUT_DIR")
            .output()
    };
    let out = run("1")?;
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    ensure!(
        out.status.code() == Some(3),
        "r=1 exit {:?}: {stderr}",
        out.status.code()
    );
    let vertex: usize = stderr
        .split("at vertex ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("no vertex named in '{}'", stderr.trim()))?;
    ensure!(stderr.contains("H_2"), "message does not cite H_2: {stderr}");
    let h2 = CurvatureField::estimate(&mesh)?.vertex_mean_curvature(2)[vertex];
    ensure!(h2 <= 0.0, "named vertex {vertex} has H_2 = {h2}");

    let out = run("0")?;
    ensure!(out.status.code() == Some(0), "r=0 exit {:?}", out.status.code());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout)?;
    let l2 = report["verdicts"]["theorem"]["lambda_2"]
        .as_f64()
        .ok_or("no λ₂ in report")?;
    ensure!(l2 <= 0.0, "r=0 λ₂ = {l2}");
    std::fs::remove_dir_all(&dir)?;
    Ok(format!(
        "r=1 exit 3 at vertex {vertex} (H_2 = {h2:.2}); r=0 λ₂ = {l2:.3}"
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("sphere equality case", sphere_equality),
        ("strict case on the ellipsoid", strict_case),
        ("Birman-Schwinger correspondence", birman_schwinger),
        ("resolvent and kernel bounds", resolvent_and_kernel_bounds),
        ("Minkowski formula", minkowski),
        ("position identity", position_identity),
        ("two-negative-eigenvalue criterion", two_negative_lemma),
        ("curvature-algebra properties", curvature_algebra),
        ("oracle equivalence", oracle_equivalence),
        ("comparison operator", corollary),
        ("precondition gate", precondition_gate),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut run = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}: {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        run += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{label:<50} PASS ({secs:.1}s) {detail}"),
            Err(e) => {
                failed += 1;
                println!("{label:<50} FAIL ({secs:.1}s) {e}");
            }
        }
    }
    println!("acceptance: {} of {run} criteria passed", run - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

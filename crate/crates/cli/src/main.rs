//! Command-line surface over the core library: fit, sample, density-grid,
//! check, and aic subcommands working on CSV data and JSON model files.
//!
//! Exit codes are a stable contract: 0 success, 2 input error, 3 fit did
//! not converge, 4 solver failure, 5 violated check.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgm_core::density::density_grid;
use sgm_core::geometry::{from_lon_lat_deg, uniform_sample, SpherePoint};
use sgm_core::inference::{
    compare_models, data_fingerprint, mle_fit, FitOptions, FitReport, ModelSpec,
};
use sgm_core::potential::{ModelFile, PotentialSpec};
use sgm_core::sampler::{sample_batch, write_lonlat_csv, write_xyz_csv, SolverOptions};
use sgm_core::verify::{
    check_c_convexity_on, check_factored_jacobian, check_jacobian_inequality,
    check_log_sigma_concavity, check_sliding_mountain, unit_grid, CTransformMesh, CheckOutcome,
    CheckReport,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_CHECK: u8 = 5;

#[derive(Parser)]
#[command(name = "sgm", about = "Spherical gradient-map model toolkit", version)]
struct Cli {
    /// Worker threads for internal parallelism (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SampleFormat {
    Xyz,
    Lonlat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    CConvexity,
    Jacobian,
    SlidingMountain,
    Factored,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum-likelihood fit of a model structure to CSV data.
    Fit {
        /// Data CSV with header `x,y,z` or `lon_deg,lat_deg`.
        #[arg(long)]
        data: PathBuf,
        /// Model JSON giving the structure; stored parameters are ignored.
        #[arg(long)]
        model: PathBuf,
        /// Fit-report JSON destination.
        #[arg(long)]
        out: PathBuf,
        /// Duality-gap tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Constraint margin; defaults to the model file's delta, or 1e-6.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 500)]
        max_iter: u32,
    },
    /// Draw exact samples from a model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SampleFormat::Xyz)]
        format: SampleFormat,
    },
    /// Evaluate the density on a lon/lat grid (S^2 models only).
    DensityGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 90)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run numerical verification suites against a model.
    Check {
        #[arg(long)]
        model: PathBuf,
        /// Second model for blend-based checks; defaults to the null model.
        #[arg(long)]
        model2: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coarse mesh size for the c-convexity suite.
        #[arg(long, default_value_t = 4000)]
        resolution: usize,
        /// Check-report JSON destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank fit reports by AIC.
    Aic {
        /// Fit-report JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Ranking JSON destination (optional).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn read_model(path: &Path) -> Result<ModelFile, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Data CSV by header: `x,y,z` unit vectors or `lon_deg,lat_deg`
/// geographic degrees. Errors carry the 1-based line number.
fn read_data(path: &Path) -> Result<Vec<SpherePoint>, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h.trim().to_string(),
        Some((_, Err(e))) => return Err(format!("{}: {e}", path.display())),
        None => return Err(format!("{}: empty file, expected a header", path.display())),
    };
    let lonlat = match header.as_str() {
        "x,y,z" => false,
        "lon_deg,lat_deg" => true,
        other => {
            return Err(format!(
                "{}: unrecognized header {other:?}, expected \"x,y,z\" or \"lon_deg,lat_deg\"",
                path.display()
            ))
        }
    };
    let mut points = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| format!("{}:{lineno}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{}:{lineno}: {e}", path.display()))?;
        let expected = if lonlat { 2 } else { 3 };
        if fields.len() != expected {
            return Err(format!(
                "{}:{lineno}: expected {expected} fields, got {}",
                path.display(),
                fields.len()
            ));
        }
        let point = if lonlat {
            let (lon, lat) = (fields[0], fields[1]);
            if !(-180.0..180.0).contains(&lon) {
                return Err(format!("{}:{lineno}: lon {lon} outside [-180, 180)", path.display()));
            }
            if !(-90.0..=90.0).contains(&lat) {
                return Err(format!("{}:{lineno}: lat {lat} outside [-90, 90]", path.display()));
            }
            from_lon_lat_deg(lon, lat)
        } else {
            SpherePoint::try_new(nalgebra::DVector::from_row_slice(&fields))
                .map_err(|e| format!("{}:{lineno}: {e}", path.display()))?
        };
        points.push(point);
    }
    Ok(points)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), String> {
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| e.to_string())?;
    writeln!(w).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            return fail(EXIT_INPUT, e);
        }
    }
    match cli.command {
        Command::Fit {
            data,
            model,
            out,
            tol,
            delta,
            max_iter,
        } => cmd_fit(&data, &model, &out, tol, delta, max_iter),
        Command::Sample {
            model,
            n,
            seed,
            out,
            format,
        } => cmd_sample(&model, n, seed, &out, format),
        Command::DensityGrid {
            model,
            resolution,
            out,
        } => cmd_density_grid(&model, resolution, &out),
        Command::Check {
            model,
            model2,
            suite,
            seed,
            resolution,
            out,
        } => cmd_check(&model, model2.as_deref(), suite, seed, resolution, out.as_deref()),
        Command::Aic { reports, out } => cmd_aic(&reports, out.as_deref()),
    }
}

fn cmd_fit(
    data_path: &Path,
    model_path: &Path,
    out: &Path,
    tol: f64,
    delta: Option<f64>,
    max_iter: u32,
) -> ExitCode {
    let data = match read_data(data_path) {
        Ok(d) if d.is_empty() => {
            return fail(EXIT_INPUT, format!("{}: no data rows", data_path.display()))
        }
        Ok(d) => d,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let file = match read_model(model_path) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let model = match ModelSpec::from_model_file(&file) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    if model.ambient_dim() != data[0].ambient_dim() {
        return fail(
            EXIT_INPUT,
            format!(
                "model ambient dimension {} does not match data dimension {}",
                model.ambient_dim(),
                data[0].ambient_dim()
            ),
        );
    }
    let options = FitOptions {
        tol,
        max_iterations: max_iter,
        delta: delta
            .or_else(|| (file.delta() > 0.0).then(|| file.delta()))
            .unwrap_or(1e-6),
        ..FitOptions::default()
    };
    let fit = match mle_fit(&model, &data, &options) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let report = FitReport {
        model: model.to_model_file(&fit.theta_hat),
        theta_hat: fit.theta_hat.clone(),
        loglik: fit.loglik,
        aic: fit.aic,
        dim: model.aic_dim(),
        converged: fit.converged,
        iterations: fit.iterations,
        data_fingerprint: data_fingerprint(&data),
    };
    if let Err(e) = write_json(out, &report) {
        return fail(EXIT_INPUT, e);
    }
    println!(
        "fit: loglik {:.6}, aic {:.6}, {} iterations, converged {}",
        fit.loglik, fit.aic, fit.iterations, fit.converged
    );
    if fit.converged {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_NOT_CONVERGED, "fit did not converge within the iteration cap")
    }
}

fn load_potential(path: &Path) -> Result<PotentialSpec, String> {
    read_model(path)?
        .to_potential()
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_sample(model_path: &Path, n: usize, seed: u64, out: &Path, format: SampleFormat) -> ExitCode {
    let spec = match load_potential(model_path) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let points = match sample_batch(&spec, n, seed, &SolverOptions::default()) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_SOLVER, e),
    };
    let file = match File::create(out) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", out.display())),
    };
    let mut w = BufWriter::new(file);
    let written = match format {
        SampleFormat::Xyz => write_xyz_csv(&points, &mut w),
        SampleFormat::Lonlat => {
            if spec.ambient_dim() != 3 {
                return fail(EXIT_INPUT, "lonlat format requires an S^2 model");
            }
            write_lonlat_csv(&points, &mut w)
        }
    };
    if let Err(e) = written.and_then(|()| w.flush()) {
        return fail(EXIT_INPUT, e);
    }
    ExitCode::SUCCESS
}

fn cmd_density_grid(model_path: &Path, resolution: usize, out: &Path) -> ExitCode {
    let spec = match load_potential(model_path) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let grid = match density_grid(&spec, resolution) {
        Ok(g) => g,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let file = match File::create(out) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", out.display())),
    };
    let mut w = BufWriter::new(file);
    if let Err(e) = grid.write_csv(&mut w).and_then(|()| w.flush()) {
        return fail(EXIT_INPUT, e);
    }
    ExitCode::SUCCESS
}

fn cmd_check(
    model_path: &Path,
    model2_path: Option<&Path>,
    suite: Suite,
    seed: u64,
    resolution: usize,
    out: Option<&Path>,
) -> ExitCode {
    let spec = match load_potential(model_path) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let spec2 = match model2_path {
        Some(p) => match load_potential(p) {
            Ok(s) => s,
            Err(e) => return fail(EXIT_INPUT, e),
        },
        None => PotentialSpec::empty(spec.ambient_dim()),
    };
    if spec.ambient_dim() != 3 {
        return fail(EXIT_INPUT, "check suites require S^2 models");
    }
    let mut checks = Vec::new();
    let run_cc = matches!(suite, Suite::CConvexity | Suite::All);
    let run_jac = matches!(suite, Suite::Jacobian | Suite::All);
    let run_sm = matches!(suite, Suite::SlidingMountain | Suite::All);
    let run_fact = matches!(suite, Suite::Factored | Suite::All);
    let t_grid = unit_grid(21);

    if run_cc {
        let coarse = CTransformMesh::build(resolution);
        let fine = CTransformMesh::build(2 * resolution);
        match check_c_convexity_on(&coarse, &fine, &spec) {
            Ok(report) => checks.push(CheckOutcome {
                name: "c-convexity".into(),
                passed: report.passed,
                detail: serde_json::to_value(report).unwrap(),
            }),
            Err(e) => return fail(EXIT_INPUT, e),
        }
    }
    if run_jac {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: Option<sgm_core::verify::JacobianInequalityReport> = None;
        let mut all_pass = true;
        for _ in 0..100 {
            let x = uniform_sample(3, &mut rng);
            match check_jacobian_inequality(&spec, &spec2, &x, &t_grid) {
                Ok(r) => {
                    all_pass &= r.passed;
                    let replace = worst
                        .as_ref()
                        .is_none_or(|w| r.min_margin < w.min_margin);
                    if replace {
                        worst = Some(r);
                    }
                }
                Err(e) => return fail(EXIT_INPUT, e),
            }
        }
        checks.push(CheckOutcome {
            name: "jacobian-inequality".into(),
            passed: all_pass,
            detail: serde_json::to_value(worst.unwrap()).unwrap(),
        });
    }
    if run_sm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut min_sd = f64::INFINITY;
        let mut all_pass = true;
        let mut done = 0;
        while done < 100 {
            let pts: Vec<SpherePoint> = (0..4).map(|_| uniform_sample(3, &mut rng)).collect();
            match check_sliding_mountain(&pts[0], &pts[1], &pts[2], &pts[3], &t_grid) {
                Ok(r) => {
                    all_pass &= r.passed;
                    min_sd = min_sd.min(r.min_second_diff);
                    done += 1;
                }
                // Quadruplet hit the antipode guard; redraw.
                Err(_) => continue,
            }
        }
        checks.push(CheckOutcome {
            name: "sliding-mountain".into(),
            passed: all_pass,
            detail: serde_json::json!({ "min_second_diff": min_sd }),
        });
    }
    if run_fact {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let mut worst_rel = 0.0f64;
        let mut sigma_sd = f64::NEG_INFINITY;
        let mut all_pass = true;
        for _ in 0..100 {
            let x = uniform_sample(3, &mut rng);
            match check_factored_jacobian(&spec, &x) {
                Ok(r) => {
                    all_pass &= r.passed;
                    worst_rel = worst_rel.max(r.relative_mismatch);
                }
                Err(e) => return fail(EXIT_INPUT, e),
            }
            match check_log_sigma_concavity(&spec, &spec2, &x, &t_grid) {
                Ok(r) => {
                    all_pass &= r.passed;
                    sigma_sd = sigma_sd.max(r.max_second_diff);
                }
                Err(e) => return fail(EXIT_INPUT, e),
            }
        }
        checks.push(CheckOutcome {
            name: "factored-jacobian".into(),
            passed: all_pass,
            detail: serde_json::json!({
                "max_relative_mismatch": worst_rel,
                "log_sigma_max_second_diff": sigma_sd,
            }),
        });
    }

    let report = CheckReport::new(seed, checks);
    for check in &report.checks {
        println!(
            "{}: {}",
            check.name,
            if check.passed { "pass" } else { "FAIL" }
        );
    }
    let written = match out {
        Some(path) => write_json(path, &report),
        None => serde_json::to_string_pretty(&report)
            .map_err(|e| e.to_string())
            .map(|s| println!("{s}")),
    };
    if let Err(e) = written {
        return fail(EXIT_INPUT, e);
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_CHECK, "one or more checks violated")
    }
}

fn cmd_aic(report_paths: &[PathBuf], out: Option<&Path>) -> ExitCode {
    let mut reports = Vec::new();
    for path in report_paths {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", path.display())),
        };
        match serde_json::from_str::<FitReport>(&text) {
            Ok(r) => reports.push(r),
            Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", path.display())),
        }
    }
    let order = match compare_models(&reports) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    println!("{:<6} {:<40} {:>12} {:>5} {:>12}", "rank", "report", "loglik", "dim", "aic");
    let mut ranking = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let r = &reports[i];
        println!(
            "{:<6} {:<40} {:>12.6} {:>5} {:>12.6}",
            rank + 1,
            report_paths[i].display(),
            r.loglik,
            r.dim,
            r.aic
        );
        ranking.push(serde_json::json!({
            "rank": rank + 1,
            "report": report_paths[i].display().to_string(),
            "loglik": r.loglik,
            "dim": r.dim,
            "aic": r.aic,
        }));
    }
    if let Some(path) = out {
        if let Err(e) = write_json(path, &ranking) {
            return fail(EXIT_INPUT, e);
        }
    }
    ExitCode::SUCCESS
}

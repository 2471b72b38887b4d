//! Command-line front end: singular-potential evaluation, moment-set
//! queries, grid sweeps for contour data, Taylor/Yosida approximations,
//! mean-field scans and the discriminant tables.
//!
//! Exit codes: 0 success, 2 configuration/usage errors, 3 solver
//! non-convergence (partial output is still written and flagged).

mod grid;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use maxent::approximation;
use maxent::config::ModelConfig;
use maxent::dual_solver::{self, SolveOptions};
use maxent::mean_field::{self, MeanFieldModel, StabilityVerdict};
use maxent::models::{self, ClosedFormQ};
use maxent::moment_geometry::Membership;
use maxent::Model;
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use grid::{Axis, GridSpec};

#[derive(Parser)]
#[command(name = "maxent", version, about = "Maximum-entropy singular potentials over moment constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// TOML model description (see the config module documentation).
    #[arg(long, conflicts_with = "model")]
    config: Option<PathBuf>,
    /// Built-in model: mcmillan | table1..table4 | sphere-chain.
    #[arg(long)]
    model: Option<String>,
    /// Quadrature order hint for built-in models.
    #[arg(long)]
    order: Option<usize>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Singular-potential values.
    Psi {
        #[command(subcommand)]
        command: PsiCommand,
    },
    /// Membership test for a moment vector with a certificate direction.
    Membership {
        #[command(flatten)]
        model: ModelArgs,
        /// Moment vector, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        n_directions: usize,
    },
    /// Support function value in one direction.
    Support {
        #[command(flatten)]
        model: ModelArgs,
        /// Direction, comma-separated (any nonzero vector).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Vec<f64>,
    },
    /// Fourth-order Taylor expansion about the isotropic state.
    Taylor {
        #[command(flatten)]
        model: ModelArgs,
        /// Also evaluate the quartic on a grid, long-format CSV.
        #[arg(long)]
        grid_out: Option<PathBuf>,
        #[arg(long, default_value_t = 80)]
        nx: usize,
        #[arg(long, default_value_t = 80)]
        ny: usize,
        /// Per-axis ranges "min:max[,min:max]".
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
    },
    /// Yosida-Moreau envelope at one point.
    Yosida {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Vec<f64>,
        #[arg(long, value_name = "J")]
        j: f64,
    },
    /// Yosida-Moreau envelope over a grid (finite on all of moment space).
    YosidaGrid {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "J")]
        j: f64,
        #[arg(long, default_value_t = 80)]
        nx: usize,
        #[arg(long, default_value_t = 80)]
        ny: usize,
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Long-format companion CSV (kind column `yosidaJ`).
        #[arg(long)]
        contour_out: Option<PathBuf>,
    },
    /// Mean-field free-energy analysis in the dual order parameter.
    Meanfield {
        #[command(subcommand)]
        command: MeanfieldCommand,
    },
    /// The interval discriminant table as CSV.
    Tables {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        order: usize,
    },
}

#[derive(Subcommand)]
enum PsiCommand {
    /// Evaluate psi_s at one moment vector, JSON to stdout.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Vec<f64>,
    },
    /// Sweep psi_s over a rectangular grid, CSV output.
    Grid {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 80)]
        nx: usize,
        #[arg(long, default_value_t = 80)]
        ny: usize,
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
        /// Boundary-band exclusion distance.
        #[arg(long, default_value_t = 1e-2)]
        band: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Long-format companion CSV (kind column `psi`).
        #[arg(long)]
        contour_out: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        n_directions: usize,
    },
}

#[derive(Subcommand)]
enum MeanfieldCommand {
    /// Scan temperatures; per-T global minimiser, energy and verdict.
    Scan {
        #[command(flatten)]
        model: ModelArgs,
        /// Temperature range "start:stop:count".
        #[arg(long = "T-range")]
        t_range: String,
        /// Interaction strength (K = value * identity).
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// External field, comma-separated (defaults to zero).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full critical-point report at one temperature, JSON.
    Critical {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multi-start count (default 8 per moment dimension).
        #[arg(long)]
        starts: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

/// Exit-code classification for library errors.
fn classify(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<maxent::Error>() {
        match e {
            maxent::Error::Config(_)
            | maxent::Error::InvalidArgument(_)
            | maxent::Error::Precondition(_)
            | maxent::Error::Infeasible(_)
            | maxent::Error::Io(_) => 2,
            _ => 3,
        }
    } else {
        2
    }
}

fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify(&err)
        }
    }
}

struct Loaded {
    model: Model,
    closed_q: Option<ClosedFormQ>,
    name: String,
    opts: SolveOptions,
}

fn load(args: &ModelArgs) -> anyhow::Result<Loaded> {
    if let Some(n) = args.threads {
        // A process-wide pool; later installs are ignored, which is fine for
        // a one-command process.
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    match (&args.config, &args.model) {
        (Some(path), _) => {
            let cfg = ModelConfig::from_path(path)?;
            let (model, closed_q) = cfg.build()?;
            Ok(Loaded { model, closed_q, name: path.display().to_string(), opts: cfg.solve_options() })
        }
        (None, Some(name)) => {
            let bm = models::by_name(name, args.order)?;
            Ok(Loaded { model: bm.model, closed_q: bm.closed_form_q, name: bm.name, opts: SolveOptions::default() })
        }
        (None, None) => anyhow::bail!(maxent::Error::Config("one of --config or --model is required".into())),
    }
}

fn json_value(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn json_vec(v: &DVector<f64>) -> serde_json::Value {
    serde_json::Value::Array(v.iter().map(|x| json_value(*x)).collect())
}

fn parse_ranges(range: &Option<String>, k: usize, name: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    match range {
        Some(text) => {
            let parts: Vec<&str> = text.split(',').collect();
            anyhow::ensure!(parts.len() == k, "--range needs {k} min:max pairs, got {}", parts.len());
            parts
                .iter()
                .map(|p| {
                    let (a, b) = p
                        .split_once(':')
                        .ok_or_else(|| anyhow::anyhow!("range component '{p}' is not min:max"))?;
                    Ok((a.trim().parse::<f64>()?, b.trim().parse::<f64>()?))
                })
                .collect()
        }
        None => match (name, k) {
            (_, 1) => Ok(vec![(-1.2, 1.2)]),
            ("mcmillan", 2) => Ok(vec![(-0.7, 1.2), (-1.2, 1.2)]),
            (_, 2) => Ok(vec![(-1.2, 1.2), (-1.2, 1.2)]),
            _ => anyhow::bail!(maxent::Error::Config(format!(
                "no default grid range for k = {k}; pass --range"
            ))),
        },
    }
}

fn make_spec(loaded: &Loaded, nx: usize, ny: usize, range: &Option<String>, band: f64) -> anyhow::Result<GridSpec> {
    let k = loaded.model.k();
    anyhow::ensure!(k <= 2, maxent::Error::Config(format!("grid sweeps support k <= 2, model has k = {k}")));
    let ranges = parse_ranges(range, k, &loaded.name)?;
    let mut axes = vec![Axis { min: ranges[0].0, max: ranges[0].1, count: nx }];
    if k == 2 {
        axes.push(Axis { min: ranges[1].0, max: ranges[1].1, count: ny });
    }
    for a in &axes {
        a.validate()?;
    }
    Ok(GridSpec { axes, band })
}

fn open_out(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| {
            anyhow::anyhow!(maxent::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
        })?)),
        None => Box::new(std::io::BufWriter::new(std::io::stdout())),
    })
}

fn interaction_matrix(k_scalar: f64, dims: usize) -> DMatrix<f64> {
    DMatrix::identity(dims, dims) * k_scalar
}

fn field_vector(h: &Option<Vec<f64>>, dims: usize) -> anyhow::Result<DVector<f64>> {
    match h {
        None => Ok(DVector::zeros(dims)),
        Some(values) => {
            anyhow::ensure!(values.len() == dims, "--h needs {dims} components");
            Ok(DVector::from_vec(values.clone()))
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Psi { command } => match command {
            PsiCommand::Eval { model, b } => {
                let loaded = load(&model)?;
                let b = DVector::from_vec(b);
                match dual_solver::solve_model(&loaded.model, &b, &loaded.opts) {
                    Ok(sol) => {
                        let out = json!({
                            "b": json_vec(&b),
                            "alpha": json_value(sol.alpha),
                            "lambda": json_vec(&sol.lambda),
                            "psi": json_value(sol.psi_value),
                            "moment_residual": json_vec(&sol.moment_residual),
                            "normalization_residual": json_value(sol.normalization_residual),
                            "iterations": sol.iterations,
                            "converged": sol.converged,
                        });
                        println!("{out}");
                        Ok(0)
                    }
                    Err(maxent::Error::UnattainedDual { .. }) => {
                        let out = json!({
                            "b": json_vec(&b),
                            "psi": "inf",
                            "converged": false,
                            "error": "unattained dual (moment vector outside or on the boundary of Q)",
                        });
                        println!("{out}");
                        Ok(3)
                    }
                    Err(e) => Err(e.into()),
                }
            }
            PsiCommand::Grid { model, nx, ny, range, band, out, contour_out, n_directions } => {
                let loaded = load(&model)?;
                let spec = make_spec(&loaded, nx, ny, &range, band)?;
                let outcome = grid::sweep(&loaded.model, &spec, &loaded.opts, None, n_directions)?;
                let mut w = open_out(&out)?;
                grid::write_grid_csv(&mut w, loaded.model.k(), "psi", &outcome)?;
                w.flush()?;
                if let Some(path) = contour_out {
                    let rows: Vec<(DVector<f64>, Option<f64>)> = outcome
                        .rows
                        .iter()
                        .map(|(b, r)| {
                            let v = match r {
                                grid::PointResult::Outside => Some(f64::INFINITY),
                                grid::PointResult::Excluded => None,
                                grid::PointResult::Solved { psi, .. } => Some(*psi),
                            };
                            (b.clone(), v)
                        })
                        .collect();
                    let mut w = open_out(&Some(path))?;
                    grid::write_contour_csv(&mut w, loaded.model.k(), "psi", &rows)?;
                    w.flush()?;
                }
                if outcome.failed > 0 {
                    eprintln!("warning: {} grid points did not converge (flagged converged=false)", outcome.failed);
                    return Ok(3);
                }
                Ok(0)
            }
        },
        Command::Membership { model, b, n_directions } => {
            let loaded = load(&model)?;
            let b = DVector::from_vec(b);
            let geometry = loaded.model.geometry();
            let verdict = geometry.membership(&b, n_directions)?;
            let (name, margin, direction) = match &verdict {
                Membership::Inside { margin, nearest_direction } => ("inside", *margin, nearest_direction),
                Membership::Outside { violation, witness } => ("outside", -*violation, witness),
                Membership::Indeterminate { margin, direction } => ("indeterminate", *margin, direction),
            };
            // Cross-check against the closed-form moment set when the model
            // carries one.
            let closed = loaded.closed_q.as_ref().map(|q| q.contains(&b));
            let out = json!({
                "b": json_vec(&b),
                "verdict": name,
                "margin": json_value(margin),
                "witness_u": json_vec(direction),
                "closed_form_inside": closed,
            });
            println!("{out}");
            Ok(0)
        }
        Command::Support { model, u } => {
            let loaded = load(&model)?;
            let u = DVector::from_vec(u);
            let s = loaded.model.geometry().support(&u)?;
            let out = json!({
                "u": json_vec(&u),
                "value": json_value(s.value),
                "argmax": s.argmax,
            });
            println!("{out}");
            Ok(0)
        }
        Command::Taylor { model, grid_out, nx, ny, range } => {
            let loaded = load(&model)?;
            let q = approximation::taylor4(&loaded.model.space, &loaded.model.constraints, &loaded.model.entropy)?;
            let k = loaded.model.k();
            let vars = ["b1", "b2", "b3", "b4"];
            let mut terms: Vec<String> = Vec::new();
            for (powers, coeff) in q.monomial_coefficients() {
                let mono: Vec<String> = powers
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(i, &p)| if p == 1 { vars[i].to_string() } else { format!("{}^{p}", vars[i]) })
                    .collect();
                terms.push(format!("{:+.12} {}", coeff, mono.join(" ")));
            }
            println!("psi4(b) = {:.12} {}", q.constant, terms.join(" "));
            let coeff_json: Vec<serde_json::Value> = q
                .monomial_coefficients()
                .iter()
                .map(|(p, c)| json!({ "powers": p, "coefficient": c }))
                .collect();
            let report = approximation::quartic_shape_report(&q, &[]);
            let out = json!({
                "constant": json_value(q.constant),
                "coefficients": coeff_json,
                "coercive": report.coercive,
                "quartic_form_eigenvalues": report.quartic_form_eigenvalues,
            });
            println!("{out}");
            if let Some(path) = grid_out {
                anyhow::ensure!(k <= 2, maxent::Error::Config("taylor grids support k <= 2".into()));
                let spec = make_spec(&loaded, nx, ny, &range, 0.0)?;
                let mut rows = Vec::new();
                for row in 0..spec.n_rows() {
                    for col in 0..spec.n_cols() {
                        let b = spec.point(row, col);
                        rows.push((b.clone(), Some(q.eval(&b))));
                    }
                }
                let mut w = open_out(&Some(path))?;
                grid::write_contour_csv(&mut w, k, "taylor4", &rows)?;
                w.flush()?;
            }
            Ok(0)
        }
        Command::Yosida { model, b, j } => {
            let loaded = load(&model)?;
            let b = DVector::from_vec(b);
            let y = approximation::yosida(&loaded.model, &b, j, &loaded.opts)?;
            let out = json!({
                "b": json_vec(&b),
                "J": j,
                "value": json_value(y.value),
                "prox_point": json_vec(&y.prox_point),
                "gradient": json_vec(&y.gradient),
                "iterations": y.iterations,
            });
            println!("{out}");
            Ok(0)
        }
        Command::YosidaGrid { model, j, nx, ny, range, out, contour_out } => {
            anyhow::ensure!(j > 0.0, maxent::Error::Config("--J must be positive".into()));
            let loaded = load(&model)?;
            let spec = make_spec(&loaded, nx, ny, &range, 0.0)?;
            let outcome = grid::sweep(&loaded.model, &spec, &loaded.opts, Some(j), 64)?;
            let mut w = open_out(&out)?;
            grid::write_grid_csv(&mut w, loaded.model.k(), "psi_j", &outcome)?;
            w.flush()?;
            if let Some(path) = contour_out {
                let rows: Vec<(DVector<f64>, Option<f64>)> = outcome
                    .rows
                    .iter()
                    .map(|(b, r)| {
                        let v = match r {
                            grid::PointResult::Solved { psi, .. } => Some(*psi),
                            _ => Some(f64::INFINITY),
                        };
                        (b.clone(), v)
                    })
                    .collect();
                let mut w = open_out(&Some(path))?;
                grid::write_contour_csv(&mut w, loaded.model.k(), "yosidaJ", &rows)?;
                w.flush()?;
            }
            if outcome.failed > 0 {
                eprintln!("warning: {} grid points did not converge (flagged converged=false)", outcome.failed);
                return Ok(3);
            }
            Ok(0)
        }
        Command::Meanfield { command } => match command {
            MeanfieldCommand::Scan { model, t_range, k, h, seed, out } => {
                let loaded = load(&model)?;
                // The stability bounds assume orthonormal constraints.
                let m = loaded.model.orthonormalized()?;
                let dims = m.k();
                let (t0, t1, count) = parse_t_range(&t_range)?;
                let field = field_vector(&h, dims)?;
                let mut w = open_out(&out)?;
                let mut header: Vec<String> = vec!["T".into()];
                header.extend((1..=dims).map(|i| format!("b_{i}")));
                header.extend(["energy".into(), "verdict".into(), "n_critical".into()]);
                writeln!(w, "{}", header.join(","))?;
                for i in 0..count {
                    let t = if count <= 1 { t0 } else { t0 + (t1 - t0) * i as f64 / (count - 1) as f64 };
                    let mf = MeanFieldModel::new(&m, t, interaction_matrix(k, dims), field.clone())?;
                    let verdict = match mean_field::stability_report(&mf)?.verdict {
                        StabilityVerdict::GloballyStable => "globally-stable",
                        StabilityVerdict::Indeterminate => "indeterminate",
                        StabilityVerdict::Unstable => "unstable",
                    };
                    let report = mean_field::minimize_free_energy(&mf, 8 * dims, seed)?;
                    let global = &report.critical_points[report.global_index];
                    let mut row = vec![grid::fmt_value(t)];
                    row.extend(global.b.iter().map(|v| grid::fmt_value(*v)));
                    row.push(grid::fmt_value(global.energy));
                    row.push(verdict.into());
                    row.push(report.critical_points.len().to_string());
                    writeln!(w, "{}", row.join(","))?;
                }
                w.flush()?;
                Ok(0)
            }
            MeanfieldCommand::Critical { model, t, k, h, seed, starts } => {
                let loaded = load(&model)?;
                let m = loaded.model.orthonormalized()?;
                let dims = m.k();
                let field = field_vector(&h, dims)?;
                let mf = MeanFieldModel::new(&m, t, interaction_matrix(k, dims), field)?;
                let stability = mean_field::stability_report(&mf)?;
                let report = mean_field::minimize_free_energy(&mf, starts.unwrap_or(8 * dims), seed)?;
                let points: Vec<serde_json::Value> = report
                    .critical_points
                    .iter()
                    .map(|cp| {
                        json!({
                            "lambda": json_vec(&cp.lambda),
                            "b": json_vec(&cp.b),
                            "energy": json_value(cp.energy),
                            "hessian_eigenvalues": cp.hessian_eigenvalues,
                            "classification": format!("{:?}", cp.classification),
                            "residual": json_value(cp.residual),
                        })
                    })
                    .collect();
                let out = json!({
                    "T": t,
                    "global_stable_bound": json_value(stability.global_stable_bound),
                    "local_stable_bound": json_value(stability.local_stable_bound),
                    "verdict": format!("{:?}", stability.verdict),
                    "critical_points": points,
                    "global_index": report.global_index,
                    "n_starts": report.n_starts,
                    "n_converged": report.n_converged,
                });
                println!("{out}");
                Ok(0)
            }
        },
        Command::Tables { out, order } => {
            let mut w = open_out(&out)?;
            writeln!(w, "constraint,m2,m3,m4,d1,coercive,d2,single_critical_point,d3,convex")?;
            let names = ["x", "x^4-7x^3-2x^2+3x+7/15", "7x^3-x^2+x+1/3", "x^3"];
            for (i, name) in names.iter().enumerate() {
                let bm = models::table_model(i + 1, order)?;
                let d = approximation::discriminants_1d(&bm.model.space, &bm.model.constraints)?;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    name,
                    grid::fmt_value(d.m2),
                    grid::fmt_value(d.m3),
                    grid::fmt_value(d.m4),
                    grid::fmt_value(d.d1),
                    yes_no(d.coercive),
                    grid::fmt_value(d.d2),
                    yes_no(d.single_critical_point),
                    grid::fmt_value(d.d3),
                    yes_no(d.convex),
                )?;
            }
            w.flush()?;
            Ok(0)
        }
    }
}

fn yes_no(v: bool) -> &'static str {
    if v {
        "yes"
    } else {
        "no"
    }
}

fn parse_t_range(text: &str) -> anyhow::Result<(f64, f64, usize)> {
    let parts: Vec<&str> = text.split(':').collect();
    anyhow::ensure!(parts.len() == 3, "--T-range must be start:stop:count");
    let t0: f64 = parts[0].trim().parse()?;
    let t1: f64 = parts[1].trim().parse()?;
    let count: usize = parts[2].trim().parse()?;
    anyhow::ensure!(t0 > 0.0 && t1 >= t0 && count >= 1, "--T-range must satisfy 0 < start <= stop, count >= 1");
    Ok((t0, t1, count))
}

//! Mean-field free energies in the dual order parameter.
//!
//! The macroscopic energy `T psi_s(b) - (1/2) K b . b - H . b` is minimised
//! through its dual-parameter form: for each `lambda` the normalising
//! `alpha_lambda` is unique, the moment `b^lambda` follows from the forward
//! map, and minimisers over `lambda in R^k` correspond one-to-one with
//! minimisers over `Q`. The domain is unconstrained and for the Shannon
//! entropy no inner optimisation is needed at all, which is what makes the
//! dual route attractive for scans.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dual_solver::{self, SolveOptions};
use crate::numeric;
use crate::{Error, Model, Result};

/// Mean-field data on top of a model: temperature, interaction matrix and
/// external field.
#[derive(Clone)]
pub struct MeanFieldModel<'a> {
    pub model: &'a Model,
    pub temperature: f64,
    /// Symmetric positive definite `k x k` interaction.
    pub interaction: DMatrix<f64>,
    pub field: DVector<f64>,
}

/// How a critical point sits in the dual-parameter energy landscape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Minimum,
    Saddle,
    /// All eigenvalues negative: a maximum of the dual-parameter energy.
    /// Primal local maxima do not correspond to these, so no primal claim is
    /// attached.
    MaximumInRestriction,
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub lambda: DVector<f64>,
    pub b: DVector<f64>,
    pub energy: f64,
    pub hessian_eigenvalues: Vec<f64>,
    pub classification: Classification,
    /// `|T lambda + grad f(b)|`, the fixed-point residual.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    /// Deduplicated critical points sorted by energy, then lexicographically.
    pub critical_points: Vec<CriticalPoint>,
    /// Index of the global minimiser (always 0 after sorting; kept explicit).
    pub global_index: usize,
    pub n_starts: usize,
    pub n_converged: usize,
}

/// Stability verdict for the isotropic (uniform) state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityVerdict {
    /// `T` above the global bound: the isotropic state is the only critical
    /// point and the global minimiser.
    GloballyStable,
    /// Between the bounds: locally stable, global status undecided by the
    /// bounds alone.
    Indeterminate,
    /// `T` below the local bound: the isotropic state is unstable.
    Unstable,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// `|a|_inf^2 lambda_max(K)`.
    pub global_stable_bound: f64,
    /// `lambda_max(K) / mu(X)`.
    pub local_stable_bound: f64,
    pub verdict: StabilityVerdict,
}

impl<'a> MeanFieldModel<'a> {
    pub fn new(model: &'a Model, temperature: f64, interaction: DMatrix<f64>, field: DVector<f64>) -> Result<Self> {
        let k = model.k();
        if interaction.nrows() != k || interaction.ncols() != k {
            return Err(Error::InvalidArgument(format!(
                "interaction matrix is {}x{}, expected {k}x{k}",
                interaction.nrows(),
                interaction.ncols()
            )));
        }
        if field.len() != k {
            return Err(Error::InvalidArgument(format!("field has length {}, expected {k}", field.len())));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
        }
        let asym = (&interaction - interaction.transpose()).abs().max();
        if asym > 1e-12 * interaction.abs().max().max(1.0) {
            return Err(Error::InvalidArgument("interaction matrix must be symmetric".into()));
        }
        let eig = interaction.clone().symmetric_eigen().eigenvalues;
        if eig.min() <= 0.0 {
            return Err(Error::InvalidArgument("interaction matrix must be positive definite".into()));
        }
        Ok(Self { model, temperature, interaction, field })
    }

    /// Largest eigenvalue of the interaction matrix.
    pub fn lambda_max(&self) -> f64 {
        self.interaction.clone().symmetric_eigen().eigenvalues.max()
    }

    /// `grad f(b) = -K b - H` for the macroscopic term
    /// `f(b) = -(1/2) K b . b - H . b`.
    pub fn grad_f(&self, b: &DVector<f64>) -> DVector<f64> {
        -(&self.interaction * b) - &self.field
    }

    fn f(&self, b: &DVector<f64>) -> f64 {
        -0.5 * (b.transpose() * &self.interaction * b)[(0, 0)] - self.field.dot(b)
    }
}

struct DualEnergyEval {
    energy: f64,
    b: DVector<f64>,
    /// `db/dlambda`, the covariance-type matrix; symmetric positive definite.
    jacobian: DMatrix<f64>,
}

/// Energy, moment and moment Jacobian at a dual parameter.
fn eval_dual_energy(mf: &MeanFieldModel<'_>, lambda: &DVector<f64>) -> Result<DualEnergyEval> {
    let model = mf.model;
    let space = &model.space;
    let cs = &model.constraints;
    let phi = &model.entropy;
    let k = cs.k();

    let alpha = dual_solver::alpha_for_lambda(space, cs, phi, lambda)?;
    let mut b = DVector::zeros(k);
    let mut conj_int = 0.0;
    let mut sigma_tot = 0.0;
    let mut sigma_first = DVector::<f64>::zeros(k);
    let mut sigma_second = DMatrix::<f64>::zeros(k, k);
    for j in 0..space.n_nodes() {
        let a = cs.at_node(j);
        let w = space.weights()[j];
        let s = alpha + lambda.dot(&a);
        let (c, rho) = phi.conjugate_with_derivative(s);
        conj_int += w * c;
        b.axpy(w * rho, &a.clone_owned(), 1.0);
        if rho > 0.0 {
            let sigma = w / phi.d2phi(rho);
            sigma_tot += sigma;
            for r in 0..k {
                sigma_first[r] += sigma * a[r];
                for c2 in 0..k {
                    sigma_second[(r, c2)] += sigma * a[r] * a[c2];
                }
            }
        }
    }
    // psi_s(b^lambda) through the dual expression; for Shannon the conjugate
    // integral is exactly one and this is lambda . b - ln Z.
    let psi = alpha + lambda.dot(&b) - conj_int;
    let energy = mf.temperature * psi + mf.f(&b);
    let jacobian = sigma_second - &sigma_first * sigma_first.transpose() / sigma_tot;
    Ok(DualEnergyEval { energy, b, jacobian })
}

/// The dual-parameter free energy
/// `T psi_s(b^lambda) + f(b^lambda)`; for the Shannon entropy this is the
/// Onsager form `T (lambda . b^lambda - ln Z_lambda) + f(b^lambda)`.
pub fn onsager_dual_energy(mf: &MeanFieldModel<'_>, lambda: &DVector<f64>) -> Result<f64> {
    Ok(eval_dual_energy(mf, lambda)?.energy)
}

/// Gradient of the dual-parameter energy:
/// `C(lambda) (T lambda + grad f(b^lambda))` with `C = db/dlambda`.
fn dual_energy_gradient(mf: &MeanFieldModel<'_>, lambda: &DVector<f64>) -> Result<(f64, DVector<f64>, DualEnergyEval)> {
    let eval = eval_dual_energy(mf, lambda)?;
    let inner = lambda * mf.temperature + mf.grad_f(&eval.b);
    let grad = &eval.jacobian * inner;
    Ok((eval.energy, grad, eval))
}

/// Fixed-point residual `|T lambda + grad f(b^lambda)|_2`; zero exactly at
/// critical points of the macroscopic energy.
pub fn critical_point_residual(mf: &MeanFieldModel<'_>, lambda: &DVector<f64>) -> Result<f64> {
    let eval = eval_dual_energy(mf, lambda)?;
    Ok((lambda * mf.temperature + mf.grad_f(&eval.b)).norm())
}

/// BFGS descent on the dual-parameter energy from one start.
fn descend(mf: &MeanFieldModel<'_>, start: &DVector<f64>, tol: f64, max_iter: usize) -> Result<(DVector<f64>, f64)> {
    let k = start.len();
    let mut x = start.clone();
    let (mut fx, mut gx, _) = dual_energy_gradient(mf, &x)?;
    let mut hinv = DMatrix::identity(k, k);
    for _ in 0..max_iter {
        if gx.amax() <= tol {
            return Ok((x, fx));
        }
        let mut dir = -(&hinv * &gx);
        if dir.dot(&gx) >= 0.0 {
            hinv = DMatrix::identity(k, k);
            dir = -gx.clone();
        }
        let slope = gx.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            if let Ok((fc, gc, _)) = dual_energy_gradient(mf, &cand) {
                if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No progress possible; accept if first-order stationary enough.
            if gx.amax() <= tol.max(1e-9) {
                return Ok((x, fx));
            }
            return Err(Error::NonConvergence {
                iterations: max_iter,
                residual: gx.amax(),
                best: Box::new(crate::dual_solver::DualSolution {
                    alpha: 0.0,
                    lambda: x,
                    psi_value: fx,
                    moment_residual: gx.clone(),
                    normalization_residual: 0.0,
                    iterations: max_iter,
                    converged: false,
                }),
            });
        };
        let s = &xn - &x;
        let y = &gn - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // Standard BFGS inverse update.
            let rho = 1.0 / sy;
            let i = DMatrix::identity(k, k);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            hinv = &left * hinv * right + &s * s.transpose() * rho;
        }
        x = xn;
        fx = fn_;
        gx = gn;
    }
    if gx.amax() <= tol.max(1e-8) {
        Ok((x, fx))
    } else {
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: gx.amax(),
            best: Box::new(crate::dual_solver::DualSolution {
                alpha: 0.0,
                lambda: x,
                psi_value: fx,
                moment_residual: gx,
                normalization_residual: 0.0,
                iterations: max_iter,
                converged: false,
            }),
        })
    }
}

/// Multi-start minimisation of the dual-parameter energy.
///
/// The origin is always one of the starts (it is a critical point whenever
/// the field vanishes); the rest are Gaussian draws from a deterministic
/// seed. Converged points are deduplicated, classified by the eigenvalues of
/// the dual-energy Hessian `T C - C K C`, and sorted by energy then
/// lexicographically.
pub fn minimize_free_energy(mf: &MeanFieldModel<'_>, n_starts: usize, seed: u64) -> Result<EquilibriumReport> {
    let k = mf.model.k();
    let n_starts = n_starts.max(1);
    let scale = 2.0 * (1.0 + mf.lambda_max() / mf.temperature);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![DVector::zeros(k)];
    for _ in 1..n_starts {
        starts.push(DVector::from_fn(k, |_, _| scale * numeric::standard_normal(&mut rng)));
    }

    let tol = 1e-10 * mf.temperature.max(1.0);
    let runs: Vec<Result<(DVector<f64>, f64)>> = starts
        .par_iter()
        .map(|s| descend(mf, s, tol, 400))
        .collect();

    let mut found: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut n_converged = 0;
    for run in runs.into_iter().flatten() {
        n_converged += 1;
        if found.iter().all(|(l, _)| (l - &run.0).norm() > 1e-6) {
            found.push(run);
        }
    }
    if found.is_empty() {
        return Err(Error::Numerical("no multi-start descent converged".into()));
    }

    let mut critical_points = Vec::with_capacity(found.len());
    for (lambda, energy) in found {
        let eval = eval_dual_energy(mf, &lambda)?;
        let c = &eval.jacobian;
        // Hessian of the dual-parameter energy at a critical point:
        // T C - C K C (symmetrised against roundoff).
        let h = c * mf.temperature - c * &mf.interaction * c;
        let h = (&h + h.transpose()) * 0.5;
        let mut eig: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().cloned().collect();
        eig.sort_by(f64::total_cmp);
        let eps = 1e-8 * (1.0 + eig.iter().map(|e| e.abs()).fold(0.0, f64::max));
        let classification = if eig[0] > eps {
            Classification::Minimum
        } else if eig[eig.len() - 1] < -eps {
            Classification::MaximumInRestriction
        } else {
            Classification::Saddle
        };
        let residual = (&lambda * mf.temperature + mf.grad_f(&eval.b)).norm();
        critical_points.push(CriticalPoint {
            lambda,
            b: eval.b,
            energy,
            hessian_eigenvalues: eig,
            classification,
            residual,
        });
    }
    critical_points.sort_by(|p, q| {
        p.energy
            .total_cmp(&q.energy)
            .then_with(|| p.lambda.iter().cloned().partial_cmp(q.lambda.iter().cloned()).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(EquilibriumReport { critical_points, global_index: 0, n_starts, n_converged })
}

/// Stability thresholds for the isotropic state; requires orthonormal
/// constraints.
pub fn stability_report(mf: &MeanFieldModel<'_>) -> Result<StabilityReport> {
    let model = mf.model;
    let space = &model.space;
    let cs = &model.constraints;
    let k = cs.k();
    // The proposition assumes L2-orthonormal, mean-free constraints.
    for i in 0..k {
        let mean = space.integrate(|j| cs.values()[(i, j)]);
        if mean.abs() > 1e-8 * space.total_mass().max(1.0) {
            return Err(Error::Precondition(
                "stability bounds need mean-free constraints; call orthonormalize first".into(),
            ));
        }
        for l in i..k {
            let g = space.integrate(|j| cs.values()[(i, j)] * cs.values()[(l, j)]);
            let expect = if i == l { 1.0 } else { 0.0 };
            if (g - expect).abs() > 1e-8 {
                return Err(Error::Precondition(
                    "stability bounds need L2-orthonormal constraints; call orthonormalize first".into(),
                ));
            }
        }
    }
    let lmax = mf.lambda_max();
    let global = cs.sup_norm_vector().powi(2) * lmax;
    let local = lmax / space.total_mass();
    let t = mf.temperature;
    let verdict = if t > global {
        StabilityVerdict::GloballyStable
    } else if t > local {
        StabilityVerdict::Indeterminate
    } else if t < local {
        StabilityVerdict::Unstable
    } else {
        StabilityVerdict::Indeterminate
    };
    Ok(StabilityReport { global_stable_bound: global, local_stable_bound: local, verdict })
}

/// A scalar constraint `g(b) = 0` on moment space, with an optional
/// closed-form gradient (central differences otherwise).
#[derive(Clone)]
pub struct ScalarConstraint {
    pub g: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    pub grad: Option<Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>>,
}

impl ScalarConstraint {
    pub fn new(g: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self { g: Arc::new(g), grad: None }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn value(&self, b: &DVector<f64>) -> f64 {
        (self.g)(b)
    }

    pub fn gradient(&self, b: &DVector<f64>) -> DVector<f64> {
        if let Some(g) = &self.grad {
            return (g)(b);
        }
        let h = 1e-6;
        DVector::from_fn(b.len(), |i, _| {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            ((self.g)(&bp) - (self.g)(&bm)) / (2.0 * h)
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedOptions {
    pub max_iterations: usize,
    pub tol: f64,
    pub n_feasible_directions: usize,
    pub initial_step: f64,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        Self { max_iterations: 300, tol: 1e-8, n_feasible_directions: 64, initial_step: 0.2 }
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedOptimum {
    pub b: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Multiplier in the stationarity relation `lambda = eta grad g(b)`.
    pub eta: f64,
    pub psi_value: f64,
    pub iterations: usize,
}

/// Minimise `psi_s` over the level set `{ g(b) = 0 }` by tangent-projected
/// descent in moment space, using that `grad psi_s(b) = lambda(b)`.
pub fn constrained_max_entropy(
    model: &Model,
    constraint: &ScalarConstraint,
    opts: &ConstrainedOptions,
) -> Result<ConstrainedOptimum> {
    let k = model.k();
    let geometry = model.geometry();
    let n_dirs = opts.n_feasible_directions.max(8);

    // Feasible start: the origin if it satisfies the constraint, otherwise a
    // sign change of g along rays from the origin.
    let origin = DVector::zeros(k);
    let g0 = constraint.value(&origin);
    let mut b = if g0.abs() <= 1e-12 {
        origin.clone()
    } else {
        let mut feasible = None;
        'rays: for dir in numeric::unit_directions(k, n_dirs) {
            // Extent of Q along the ray by membership bisection.
            let mut t_hi = 1e-3;
            while geometry.membership(&(&dir * t_hi), 64)?.is_inside() && t_hi < 1e6 {
                t_hi *= 2.0;
            }
            let mut lo = 0.0;
            let mut hi = t_hi;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if geometry.membership(&(&dir * mid), 64)?.is_inside() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t_q = 0.95 * lo;
            // Scan g for a sign change.
            let samples = 48;
            let mut prev_t = 0.0;
            let mut prev_g = g0;
            for i in 1..=samples {
                let t = t_q * i as f64 / samples as f64;
                let gt = constraint.value(&(&dir * t));
                if prev_g == 0.0 || gt == 0.0 || (prev_g < 0.0) != (gt < 0.0) {
                    let mut lo_t = prev_t;
                    let mut hi_t = t;
                    let mut lo_g = prev_g;
                    for _ in 0..80 {
                        let mid = 0.5 * (lo_t + hi_t);
                        let gm = constraint.value(&(&dir * mid));
                        if gm == 0.0 {
                            lo_t = mid;
                            break;
                        }
                        if (gm < 0.0) == (lo_g < 0.0) {
                            lo_t = mid;
                            lo_g = gm;
                        } else {
                            hi_t = mid;
                        }
                    }
                    feasible = Some(&dir * (0.5 * (lo_t + hi_t)));
                    break 'rays;
                }
                prev_t = t;
                prev_g = gt;
            }
        }
        feasible.ok_or_else(|| {
            Error::Infeasible("no zero of g found along sampled rays inside Q".into())
        })?
    };

    let mut solver_opts = SolveOptions::default();
    let mut sol = dual_solver::solve_model(model, &b, &solver_opts)?;
    let mut step = opts.initial_step;
    let mut iterations = 0;

    loop {
        let grad_g = constraint.gradient(&b);
        let gnorm = grad_g.norm();
        // Tangential part of grad psi_s = lambda; with a degenerate
        // constraint gradient the stationarity test falls back to lambda
        // itself.
        let tangential = if gnorm > 1e-10 {
            let unit = &grad_g / gnorm;
            &sol.lambda - &unit * sol.lambda.dot(&unit)
        } else {
            sol.lambda.clone()
        };
        let scale = sol.lambda.norm().max(1.0);
        if tangential.norm() <= opts.tol * scale || iterations >= opts.max_iterations {
            if iterations >= opts.max_iterations && tangential.norm() > opts.tol * scale {
                return Err(Error::Numerical(format!(
                    "constrained descent stalled with tangential residual {:e}",
                    tangential.norm()
                )));
            }
            let eta = if gnorm > 1e-10 { sol.lambda.dot(&grad_g) / (gnorm * gnorm) } else { 0.0 };
            return Ok(ConstrainedOptimum { b, lambda: sol.lambda, eta, psi_value: sol.psi_value, iterations });
        }
        iterations += 1;

        // Step along the negative tangential gradient, restore feasibility
        // by Newton on g along its own gradient, backtrack on psi.
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = &b - &tangential * step;
            let mut ok = true;
            for _ in 0..12 {
                let gv = constraint.value(&cand);
                if gv.abs() <= 1e-12 {
                    break;
                }
                let gg = constraint.gradient(&cand);
                let n2 = gg.norm_squared();
                if n2 < 1e-16 {
                    ok = false;
                    break;
                }
                cand -= gg * (gv / n2);
            }
            if ok && constraint.value(&cand).abs() > 1e-9 {
                ok = false;
            }
            if ok {
                let warm = solver_opts.clone().warm(sol.alpha, sol.lambda.clone());
                match dual_solver::solve_model(model, &cand, &warm) {
                    Ok(cand_sol)
                        if cand_sol.psi_value
                            <= sol.psi_value - 1e-4 * step * tangential.norm_squared() =>
                    {
                        b = cand;
                        sol = cand_sol;
                        accepted = true;
                        step = (step * 1.5).min(1.0);
                        break;
                    }
                    _ => {}
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // Cannot improve further at machine precision; treat as
            // converged if the residual is small.
            let eta = if gnorm > 1e-10 { sol.lambda.dot(&grad_g) / (gnorm * gnorm) } else { 0.0 };
            if tangential.norm() <= 1e-6 * scale {
                return Ok(ConstrainedOptimum { b, lambda: sol.lambda, eta, psi_value: sol.psi_value, iterations });
            }
            return Err(Error::Numerical(format!(
                "constrained descent could not reduce psi (tangential residual {:e})",
                tangential.norm()
            )));
        }
        solver_opts = SolveOptions::default();
    }
}

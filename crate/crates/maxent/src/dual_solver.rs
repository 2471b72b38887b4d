//! Concave dual optimisation for the singular potential.
//!
//! For a moment vector `b` inside `Q` the potential is the value of
//!
//! ```text
//! max_{alpha, lambda}  alpha + lambda . b - \int phi*(alpha + lambda . a(t)) dmu
//! ```
//!
//! whose gradient is exactly the constraint residual
//! `(1 - \int rho dmu, b - \int a rho dmu)` with
//! `rho = (phi')^{-1}(alpha + lambda . a)`. The objective is globally and
//! strictly concave, so a damped Newton method converges from any start; the
//! line search also guards against overflow of `phi*` far from the optimum.
//! An optional quadratic penalty `-|lambda|^2 / (2 J)` turns the same
//! iteration into the dual form of the Yosida-Moreau envelope, which is
//! attained for every real `b`.

use nalgebra::{DMatrix, DVector};

use crate::entropy::EntropyFunction;
use crate::state_space::{ConstraintSet, StateSpace};
use crate::{Error, Model, Result};

/// Solver knobs; the defaults implement the documented contract.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Stop when the sup-norm of the dual gradient is below
    /// `grad_tol * max(1, |b|)`.
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Declare the dual unattained when `|lambda|_inf` exceeds this cap
    /// (disabled for penalised solves).
    pub lambda_cap: f64,
    /// Newton systems with condition estimate above this fall back to a
    /// gradient step.
    pub condition_limit: f64,
    /// Warm start `(alpha, lambda)`.
    pub init: Option<(f64, DVector<f64>)>,
    /// Yosida-Moreau penalty strength `J`; `None` solves the plain dual.
    pub proximal_penalty: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iterations: 200,
            lambda_cap: 1e4,
            condition_limit: 1e12,
            init: None,
            proximal_penalty: None,
        }
    }
}

impl SolveOptions {
    pub fn warm(mut self, alpha: f64, lambda: DVector<f64>) -> Self {
        self.init = Some((alpha, lambda));
        self
    }
}

/// Converged (or best-effort) state of the dual maximisation.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: f64,
    pub lambda: DVector<f64>,
    /// Dual objective value; equals `psi_s(b)` (or `psi^J(b)` when
    /// penalised) at the optimum.
    pub psi_value: f64,
    /// Lambda block of the dual gradient. For plain solves this is
    /// `b - \int a rho dmu`.
    pub moment_residual: DVector<f64>,
    /// Alpha block of the dual gradient, `1 - \int rho dmu`.
    pub normalization_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DualSolution {
    pub fn residual_norm(&self) -> f64 {
        self.moment_residual
            .iter()
            .fold(self.normalization_residual.abs(), |m, r| m.max(r.abs()))
    }
}

/// Node values of a primal density together with the space it lives on.
#[derive(Debug, Clone)]
pub struct Density<'a> {
    pub values: Vec<f64>,
    pub space: &'a StateSpace,
}

impl Density<'_> {
    /// `\int rho dmu`.
    pub fn mass(&self) -> f64 {
        self.space.integrate(|j| self.values[j])
    }

    /// Moment vector `\int a rho dmu`.
    pub fn moments(&self, constraints: &ConstraintSet) -> DVector<f64> {
        let k = constraints.k();
        let mut m = DVector::zeros(k);
        for j in 0..self.space.n_nodes() {
            let w = self.space.weights()[j] * self.values[j];
            m.axpy(w, &constraints.at_node(j).clone_owned(), 1.0);
        }
        m
    }
}

struct DualState {
    value: f64,
    grad: DVector<f64>, // length k + 1, alpha block first
    rho: Vec<f64>,
}

fn eval_dual(
    space: &StateSpace,
    cs: &ConstraintSet,
    phi: &EntropyFunction,
    b: &DVector<f64>,
    alpha: f64,
    lambda: &DVector<f64>,
    penalty: Option<f64>,
    with_rho: bool,
) -> DualState {
    let k = cs.k();
    let n = space.n_nodes();
    let mut value = alpha + lambda.dot(b);
    let mut mass = 0.0;
    let mut moments = DVector::zeros(k);
    let mut rho = if with_rho { vec![0.0; n] } else { Vec::new() };
    for j in 0..n {
        let a = cs.at_node(j);
        let s = alpha + lambda.dot(&a);
        let w = space.weights()[j];
        let (c, r) = phi.conjugate_with_derivative(s);
        value -= w * c;
        mass += w * r;
        moments.axpy(w * r, &a.clone_owned(), 1.0);
        if with_rho {
            rho[j] = r;
        }
    }
    let mut grad = DVector::zeros(k + 1);
    grad[0] = 1.0 - mass;
    for i in 0..k {
        grad[i + 1] = b[i] - moments[i];
    }
    if let Some(j) = penalty {
        value -= lambda.norm_squared() / (2.0 * j);
        for i in 0..k {
            grad[i + 1] -= lambda[i] / j;
        }
    }
    DualState { value, grad, rho }
}

/// Negated dual Hessian `\int (1,a) (1,a)^T / phi''(rho) dmu` (positive
/// definite), plus the penalty block when active.
fn negated_hessian(
    space: &StateSpace,
    cs: &ConstraintSet,
    phi: &EntropyFunction,
    rho: &[f64],
    penalty: Option<f64>,
) -> DMatrix<f64> {
    let k = cs.k();
    let mut h = DMatrix::zeros(k + 1, k + 1);
    for j in 0..space.n_nodes() {
        let r = rho[j];
        if !(r > 0.0) {
            continue; // underflowed density contributes nothing
        }
        let sigma = space.weights()[j] / phi.d2phi(r);
        if !sigma.is_finite() {
            // An infinite curvature entry poisons the Newton system; the
            // caller's conditioning check will route around it.
            h[(0, 0)] = f64::INFINITY;
            continue;
        }
        let a = cs.at_node(j);
        h[(0, 0)] += sigma;
        for r1 in 0..k {
            h[(0, r1 + 1)] += sigma * a[r1];
            for r2 in 0..k {
                h[(r1 + 1, r2 + 1)] += sigma * a[r1] * a[r2];
            }
        }
    }
    for r1 in 0..k {
        h[(r1 + 1, 0)] = h[(0, r1 + 1)];
    }
    if let Some(jpen) = penalty {
        for i in 0..k {
            h[(i + 1, i + 1)] += 1.0 / jpen;
        }
    }
    h
}

/// Solve the dual problem for the moment vector `b`.
///
/// Newton steps with backtracking; gradient ascent when the Newton system is
/// ill-conditioned. Divergence of `|lambda|` (moment vector outside or on the
/// boundary of `Q`) is reported as [`Error::UnattainedDual`]; hitting the
/// iteration budget returns [`Error::NonConvergence`] carrying the best
/// iterate.
pub fn solve(
    space: &StateSpace,
    cs: &ConstraintSet,
    phi: &EntropyFunction,
    b: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<DualSolution> {
    let k = cs.k();
    if b.len() != k {
        return Err(Error::InvalidArgument(format!(
            "moment vector has length {}, expected {k}",
            b.len()
        )));
    }
    let tol = opts.grad_tol * b.norm().max(1.0);
    let (mut alpha, mut lambda) = match &opts.init {
        Some((a, l)) if l.len() == k => (*a, l.clone()),
        _ => (phi.dphi(1.0 / space.total_mass()), DVector::zeros(k)),
    };

    let mut state = eval_dual(space, cs, phi, b, alpha, &lambda, opts.proximal_penalty, true);
    if !state.value.is_finite() {
        // A bad warm start; restart from the uniform-density iterate.
        alpha = phi.dphi(1.0 / space.total_mass());
        lambda = DVector::zeros(k);
        state = eval_dual(space, cs, phi, b, alpha, &lambda, opts.proximal_penalty, true);
    }

    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let mut gnorm = state.grad.amax();
        if gnorm <= tol {
            return Ok(finish(state, alpha, lambda, iterations, true));
        }
        if opts.proximal_penalty.is_none() && lambda.amax() > opts.lambda_cap {
            return Err(Error::UnattainedDual { cap: opts.lambda_cap, iterations });
        }
        iterations += 1;

        // When the normalisation residual dominates, the iterate has
        // drifted off the ridge { mass = 1 } along which the dual either
        // converges or diverges in lambda; snapping alpha back to its exact
        // normaliser is a monotone coordinate-ascent step and keeps the
        // Newton step in lambda meaningful (in particular it lets a
        // divergent lambda race to the cap instead of crawling).
        if state.grad[0].abs() > 0.25 * gnorm && gnorm > 1e3 * tol {
            if let Some((a, s)) = alpha_restore(space, cs, phi, b, &lambda, opts, state.value) {
                alpha = a;
                state = s;
                gnorm = state.grad.amax();
                if gnorm <= tol {
                    return Ok(finish(state, alpha, lambda, iterations, true));
                }
            }
        }

        let hneg = negated_hessian(space, cs, phi, &state.rho, opts.proximal_penalty);
        let mut direction: Option<DVector<f64>> = None;
        if hneg.iter().all(|v| v.is_finite()) {
            if let Some(chol) = hneg.clone().cholesky() {
                // Condition estimate from the Cholesky diagonal; cheap and
                // adequate to spot degeneracy near the boundary of Q.
                let diag = chol.l_dirty().diagonal();
                let dmax = diag.max();
                let dmin = diag.min();
                if dmin > 0.0 && (dmax / dmin).powi(2) <= opts.condition_limit {
                    direction = Some(chol.solve(&state.grad));
                }
            }
        }
        let newton = direction.is_some();
        let dir = direction.unwrap_or_else(|| {
            let g = state.grad.norm();
            if g > 0.0 {
                &state.grad / g
            } else {
                state.grad.clone()
            }
        });

        // Backtracking Armijo line search on the concave objective. Near the
        // optimum the per-step value gain drops below machine precision, so a
        // clear gradient-norm reduction also accepts the step (the local
        // phase of Newton).
        let slope = state.grad.dot(&dir);
        let value_floor = state.value - 1e-12 * (1.0 + state.value.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..70 {
            let cand_alpha = alpha + step * dir[0];
            let cand_lambda = &lambda + step * dir.rows(1, k);
            let cand = eval_dual(space, cs, phi, b, cand_alpha, &cand_lambda, opts.proximal_penalty, true);
            if cand.value.is_finite() {
                let armijo = cand.value >= state.value + 1e-4 * step * slope;
                let local = cand.value >= value_floor && cand.grad.amax() <= 0.9 * gnorm;
                if armijo || local {
                    accepted = Some((cand_alpha, cand_lambda, cand));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((a, l, s)) => {
                alpha = a;
                lambda = l;
                state = s;
            }
            None => {
                if let Some((a, s)) = alpha_restore(space, cs, phi, b, &lambda, opts, state.value) {
                    alpha = a;
                    state = s;
                    continue;
                }
                if newton {
                    // Retry once along the raw gradient before giving up.
                    let g = state.grad.norm();
                    if g > 0.0 {
                        let dir = &state.grad / g;
                        let mut step = 1.0;
                        let mut ok = false;
                        for _ in 0..70 {
                            let cand_alpha = alpha + step * dir[0];
                            let cand_lambda = &lambda + step * dir.rows(1, k);
                            let cand =
                                eval_dual(space, cs, phi, b, cand_alpha, &cand_lambda, opts.proximal_penalty, true);
                            if cand.value.is_finite()
                                && (cand.value > state.value
                                    || (cand.value >= value_floor && cand.grad.amax() < gnorm))
                            {
                                alpha = cand_alpha;
                                lambda = cand_lambda;
                                state = cand;
                                ok = true;
                                break;
                            }
                            step *= 0.5;
                        }
                        if ok {
                            continue;
                        }
                    }
                }
                // Stalled: no ascent direction makes progress at machine
                // precision.
                let best = finish(state, alpha, lambda, iterations, false);
                let residual = best.residual_norm();
                return Err(Error::NonConvergence { iterations, residual, best: Box::new(best) });
            }
        }
    }
    let best = finish(state, alpha, lambda, iterations, false);
    let residual = best.residual_norm();
    Err(Error::NonConvergence { iterations, residual, best: Box::new(best) })
}

/// Maximise the dual over `alpha` alone (the penalty term has no `alpha`
/// dependence, so the maximiser is the normaliser `alpha_lambda`); returns
/// the restored state when it strictly improves the objective.
fn alpha_restore(
    space: &StateSpace,
    cs: &ConstraintSet,
    phi: &EntropyFunction,
    b: &DVector<f64>,
    lambda: &DVector<f64>,
    opts: &SolveOptions,
    current_value: f64,
) -> Option<(f64, DualState)> {
    let alpha = alpha_for_lambda(space, cs, phi, lambda).ok()?;
    let state = eval_dual(space, cs, phi, b, alpha, lambda, opts.proximal_penalty, true);
    if state.value.is_finite() && state.value > current_value + 1e-12 * (1.0 + current_value.abs()) {
        Some((alpha, state))
    } else {
        None
    }
}

fn finish(state: DualState, alpha: f64, lambda: DVector<f64>, iterations: usize, converged: bool) -> DualSolution {
    let k = lambda.len();
    DualSolution {
        alpha,
        lambda,
        psi_value: state.value,
        moment_residual: state.grad.rows(1, k).clone_owned(),
        normalization_residual: state.grad[0],
        iterations,
        converged,
    }
}

/// Convenience wrapper over [`solve`] for a bundled [`Model`].
pub fn solve_model(model: &Model, b: &DVector<f64>, opts: &SolveOptions) -> Result<DualSolution> {
    solve(&model.space, &model.constraints, &model.entropy, b, opts)
}

/// Recover the primal density `rho_b = (phi')^{-1}(alpha + lambda . a)` from
/// a converged dual solution, verifying positivity and normalisation.
pub fn density_from_dual<'a>(
    space: &'a StateSpace,
    cs: &ConstraintSet,
    phi: &EntropyFunction,
    sol: &DualSolution,
) -> Result<Density<'a>> {
    if !sol.converged {
        return Err(Error::Precondition("density requested from an unconverged dual solution".into()));
    }
    let n = space.n_nodes();
    let mut values = vec![0.0; n];
    for (j, value) in values.iter_mut().enumerate() {
        let s = sol.alpha + sol.lambda.dot(&cs.at_node(j));
        let r = phi.inv_dphi(s);
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::Numerical(format!(
                "density positivity violated at node {j}: rho = {r:e}"
            )));
        }
        *value = r;
    }
    let density = Density { values, space };
    let mass = density.mass();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::Numerical(format!("density mass {mass:e} deviates from 1")));
    }
    Ok(density)
}

/// The unique `alpha` normalising the density for a given `lambda`:
/// `\int (phi')^{-1}(alpha + lambda . a) dmu = 1`.
///
/// Shannon entropy admits the closed form `alpha = 1 - ln \int e^{lambda . a} dmu`
/// (evaluated in log-sum-exp form); other entropies use safeguarded root
/// finding on the strictly increasing normalisation map.
pub fn alpha_for_lambda(space: &StateSpace, cs: &ConstraintSet, phi: &EntropyFunction, lambda: &DVector<f64>) -> Result<f64> {
    if lambda.len() != cs.k() {
        return Err(Error::InvalidArgument(format!(
            "lambda has length {}, expected {}",
            lambda.len(),
            cs.k()
        )));
    }
    if phi.is_shannon() {
        return Ok(1.0 - log_partition(space, cs, lambda));
    }
    let f = |alpha: f64| space.integrate(|j| phi.inv_dphi(alpha + lambda.dot(&cs.at_node(j))));
    let df = |alpha: f64| {
        space.integrate(|j| {
            let r = phi.inv_dphi(alpha + lambda.dot(&cs.at_node(j)));
            if r > 0.0 {
                1.0 / phi.d2phi(r)
            } else {
                0.0
            }
        })
    };
    let start = phi.dphi(1.0 / space.total_mass());
    let (lo, hi) = crate::numeric::bracket_increasing_add(&f, 1.0, start, 1.0)?;
    crate::numeric::newton_bisect(f, Some(df), 1.0, lo, hi, 1e-13)
}

/// `ln \int exp(lambda . a) dmu` via log-sum-exp.
pub fn log_partition(space: &StateSpace, cs: &ConstraintSet, lambda: &DVector<f64>) -> f64 {
    let n = space.n_nodes();
    let mut smax = f64::NEG_INFINITY;
    let mut s = vec![0.0; n];
    for (j, sj) in s.iter_mut().enumerate() {
        *sj = lambda.dot(&cs.at_node(j));
        smax = smax.max(*sj);
    }
    let sum: f64 = (0..n).map(|j| space.weights()[j] * (s[j] - smax).exp()).sum();
    smax + sum.ln()
}

/// Forward map `h(alpha, lambda) = (\int rho dmu, \int a rho dmu)`; the dual
/// solver inverts this on the slice `{normalization = 1}`.
pub fn forward_moment_map(
    space: &StateSpace,
    cs: &ConstraintSet,
    phi: &EntropyFunction,
    alpha: f64,
    lambda: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let k = cs.k();
    let mut mass = 0.0;
    let mut moments = DVector::zeros(k);
    for j in 0..space.n_nodes() {
        let a = cs.at_node(j);
        let r = phi.inv_dphi(alpha + lambda.dot(&a));
        let w = space.weights()[j];
        mass += w * r;
        moments.axpy(w * r, &a.clone_owned(), 1.0);
    }
    (mass, moments)
}

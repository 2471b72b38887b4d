//! The singular potential `psi_s`, its first two derivatives, and the moment
//! tensors entering the Taylor expansion.
//!
//! Values are taken from the converged dual (accurate arbitrarily close to
//! the boundary, where evaluating `phi` at near-vanishing densities would
//! lose digits); the primal integral `\int phi(rho_b) dmu` is only used as a
//! consistency check. The gradient is the dual multiplier `lambda` itself and
//! the Hessian comes from the covariance-type formula with
//! `sigma = 1 / phi''(rho)`.

use nalgebra::{DMatrix, DVector};

use crate::dual_solver::{self, Density, DualSolution, SolveOptions};
use crate::entropy::EntropyFunction;
use crate::state_space::{ConstraintSet, StateSpace};
use crate::{Error, Model, Result};

/// Dense symmetric tensor of constraint moments
/// `M^n_{i_1..i_n} = \int a_{i_1} ... a_{i_n} rho dmu`.
#[derive(Debug, Clone)]
pub struct MomentTensor {
    order: usize,
    dims: usize,
    data: Vec<f64>,
}

impl MomentTensor {
    /// Wrap raw row-major data; used by the Taylor-expansion assembly.
    pub(crate) fn from_raw(order: usize, dims: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.pow(order as u32));
        Self { order, dims, data }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| {
            debug_assert!(i < self.dims);
            acc * self.dims + i
        })
    }

    /// Full contraction with copies of the same vector.
    pub fn apply(&self, b: &DVector<f64>) -> f64 {
        let mut idx = vec![0usize; self.order];
        let mut total = 0.0;
        loop {
            let mut prod = self.get(&idx);
            for &i in &idx {
                prod *= b[i];
            }
            total += prod;
            if !advance(&mut idx, self.dims) {
                break;
            }
        }
        total
    }

    pub fn as_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order != 2 {
            return Err(Error::InvalidArgument(format!(
                "only order-2 tensors convert to matrices, this one has order {}",
                self.order
            )));
        }
        Ok(DMatrix::from_fn(self.dims, self.dims, |r, c| self.get(&[r, c])))
    }
}

fn advance(idx: &mut [usize], dims: usize) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < dims {
            return true;
        }
        idx[d] = 0;
    }
    false
}

/// Moment tensor of order `n` (1 through 4) for the given density.
///
/// Each canonical (sorted) index is integrated once and mirrored to its
/// permutations, so the result is symmetric to the last bit.
pub fn moment_tensor(n: usize, density: &Density<'_>, constraints: &ConstraintSet) -> Result<MomentTensor> {
    if !(1..=4).contains(&n) {
        return Err(Error::InvalidArgument(format!("moment tensor order must be in 1..=4, got {n}")));
    }
    let k = constraints.k();
    let space = density.space;
    let mut tensor = MomentTensor { order: n, dims: k, data: vec![0.0; k.pow(n as u32)] };

    let mut idx = vec![0usize; n];
    loop {
        if idx.windows(2).all(|w| w[0] <= w[1]) {
            let value = space.integrate(|j| {
                let a = constraints.at_node(j);
                idx.iter().fold(density.values[j], |acc, &i| acc * a[i])
            });
            // Mirror onto every permutation of the canonical index.
            let mut perm = idx.clone();
            loop {
                let flat = tensor.flat(&perm);
                tensor.data[flat] = value;
                if !next_permutation(&mut perm) {
                    break;
                }
            }
        }
        if !advance(&mut idx, k) {
            break;
        }
    }
    Ok(tensor)
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        p.sort_unstable();
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// `psi_s(b)` from the dual optimum, cross-checked against the primal
/// integral `\int phi(rho_b) dmu`.
pub fn psi(model: &Model, b: &DVector<f64>, opts: &SolveOptions) -> Result<f64> {
    let sol = dual_solver::solve_model(model, b, opts)?;
    let primal = primal_integral(&model.space, &model.constraints, &model.entropy, &sol)?;
    let gap = (sol.psi_value - primal).abs();
    if gap > 1e-8 * sol.psi_value.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "duality gap {gap:e} between dual value {:e} and primal integral {primal:e}",
            sol.psi_value
        )));
    }
    Ok(sol.psi_value)
}

/// `\int phi(rho) dmu` for the density attached to a dual solution.
pub fn primal_integral(
    space: &StateSpace,
    constraints: &ConstraintSet,
    phi: &EntropyFunction,
    sol: &DualSolution,
) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..space.n_nodes() {
        let s = sol.alpha + sol.lambda.dot(&constraints.at_node(j));
        let rho = phi.inv_dphi(s);
        total += space.weights()[j] * phi.phi(rho)?;
    }
    Ok(total)
}

/// `grad psi_s(b) = lambda`.
pub fn gradient(model: &Model, b: &DVector<f64>, opts: &SolveOptions) -> Result<DVector<f64>> {
    Ok(dual_solver::solve_model(model, b, opts)?.lambda)
}

/// Hessian of `psi_s` at `b`.
///
/// Uses the general curvature formula
/// `(1/Z) (\int a (x) a sigma~ dmu - \int a sigma~ dmu (x) \int a sigma~ dmu)^{-1}`
/// with `sigma = 1 / phi''(rho_b)`, `Z = \int sigma dmu`,
/// `sigma~ = sigma / Z`; for the Shannon entropy `sigma = rho_b` and this
/// collapses to `(M^2(rho_b) - b (x) b)^{-1}`.
pub fn hessian(model: &Model, b: &DVector<f64>, opts: &SolveOptions) -> Result<DMatrix<f64>> {
    let sol = dual_solver::solve_model(model, b, opts)?;
    hessian_from_solution(model, &sol)
}

/// Hessian from an already-converged dual solution.
pub fn hessian_from_solution(model: &Model, sol: &DualSolution) -> Result<DMatrix<f64>> {
    let space = &model.space;
    let cs = &model.constraints;
    let phi = &model.entropy;
    let k = cs.k();
    let n = space.n_nodes();

    let mut z = 0.0;
    let mut first = DVector::zeros(k);
    let mut second = DMatrix::zeros(k, k);
    for j in 0..n {
        let a = cs.at_node(j);
        let rho = phi.inv_dphi(sol.alpha + sol.lambda.dot(&a));
        if !(rho > 0.0) {
            continue;
        }
        let sigma = space.weights()[j] / phi.d2phi(rho);
        z += sigma;
        for r in 0..k {
            first[r] += sigma * a[r];
            for c in 0..k {
                second[(r, c)] += sigma * a[r] * a[c];
            }
        }
    }
    if !(z > 0.0) {
        return Err(Error::Numerical("curvature weight integral vanished".into()));
    }
    first /= z;
    second /= z;
    let cov = second - &first * first.transpose();
    let inv = cov
        .try_inverse()
        .ok_or_else(|| Error::Numerical("covariance matrix singular in hessian".into()))?;
    Ok(inv / z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual_solver::solve_model;
    use crate::models;
    use crate::state_space;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn psi_vanishes_at_the_uniform_state() {
        let m = models::table_model(1, 32).unwrap().model;
        let v = psi(&m, &dvector![0.0], &Default::default()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn psi_matches_quadrature_oracle_at_langevin_point() {
        // At lambda = 1: psi = lambda b - ln Z with Z = sinh(1),
        // b = coth(1) - 1.
        let m = models::table_model(1, 64).unwrap().model;
        let b = 1.0 / 1.0_f64.tanh() - 1.0;
        let expected = b - 1.0_f64.sinh().ln();
        let v = psi(&m, &dvector![b], &Default::default()).unwrap();
        assert_relative_eq!(v, expected, max_relative = 1e-9);
        assert_relative_eq!(v, 0.151_595, max_relative = 1e-5);
    }

    #[test]
    fn psi_midpoint_convexity() {
        let bm = models::mcmillan(32, 32).unwrap();
        let pairs = [
            (dvector![0.1, 0.05], dvector![0.6, -0.3]),
            (dvector![-0.3, 0.1], dvector![0.8, 0.4]),
            (dvector![0.0, -0.5], dvector![0.2, 0.55]),
        ];
        for (b1, b2) in pairs {
            let mid = (&b1 + &b2) * 0.5;
            let p1 = psi(&bm.model, &b1, &Default::default()).unwrap();
            let p2 = psi(&bm.model, &b2, &Default::default()).unwrap();
            let pm = psi(&bm.model, &mid, &Default::default()).unwrap();
            assert!(pm <= 0.5 * (p1 + p2) + 1e-10, "midpoint convexity failed: {pm} vs {}", 0.5 * (p1 + p2));
        }
    }

    #[test]
    fn gradient_is_zero_at_origin_and_langevin_elsewhere() {
        let m = models::table_model(1, 64).unwrap().model;
        let g0 = gradient(&m, &dvector![0.0], &Default::default()).unwrap();
        assert!(g0.amax() < 1e-12);
        let b = 1.0 / 1.0_f64.tanh() - 1.0;
        let g = gradient(&m, &dvector![b], &Default::default()).unwrap();
        assert_relative_eq!(g[0], 1.0, max_relative = 1e-8);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let bm = models::mcmillan(32, 32).unwrap();
        let m = &bm.model;
        let h = 1e-4;
        for b in [dvector![0.3, 0.1], dvector![-0.2, 0.25], dvector![0.5, -0.35]] {
            let g = gradient(m, &b, &Default::default()).unwrap();
            for i in 0..2 {
                let mut bp = b.clone();
                let mut bm_ = b.clone();
                bp[i] += h;
                bm_[i] -= h;
                let fd = (psi(m, &bp, &Default::default()).unwrap() - psi(m, &bm_, &Default::default()).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-5, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn hessian_at_origin_orthonormal_is_total_mass_times_identity() {
        let bm = models::mcmillan(32, 32).unwrap();
        let m = bm.model.orthonormalized().unwrap();
        let h = hessian(&m, &dvector![0.0, 0.0], &Default::default()).unwrap();
        let mass = m.space.total_mass();
        for r in 0..2 {
            for c in 0..2 {
                let expect = if r == c { mass } else { 0.0 };
                assert_relative_eq!(h[(r, c)], expect, max_relative = 1e-8, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn hessian_at_origin_interval_is_inverse_second_moment() {
        let m = models::table_model(1, 48).unwrap().model;
        let h = hessian(&m, &dvector![0.0], &Default::default()).unwrap();
        assert_relative_eq!(h[(0, 0)], 3.0, max_relative = 1e-10);
    }

    #[test]
    fn hessian_matches_shannon_shortcut_and_differenced_gradient() {
        let bm = models::mcmillan(32, 32).unwrap();
        let m = &bm.model;
        let b = dvector![0.35, 0.15];
        let sol = solve_model(m, &b, &Default::default()).unwrap();
        let h = hessian_from_solution(m, &sol).unwrap();

        // Shannon shortcut: (M^2(rho_b) - b b^T)^{-1}.
        let rho = crate::dual_solver::density_from_dual(&m.space, &m.constraints, &m.entropy, &sol).unwrap();
        let m2 = moment_tensor(2, &rho, &m.constraints).unwrap().as_matrix().unwrap();
        let shortcut = (m2 - &b * b.transpose()).try_inverse().unwrap();
        assert!((&h - &shortcut).abs().max() < 1e-8 * h.abs().max());

        // Central differences of the gradient.
        let hfd = 1e-4;
        for i in 0..2 {
            let mut bp = b.clone();
            let mut bm_ = b.clone();
            bp[i] += hfd;
            bm_[i] -= hfd;
            let gp = gradient(m, &bp, &Default::default()).unwrap();
            let gm = gradient(m, &bm_, &Default::default()).unwrap();
            for r in 0..2 {
                let fd = (gp[r] - gm[r]) / (2.0 * hfd);
                assert_relative_eq!(h[(r, i)], fd, max_relative = 1e-4, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn hessian_general_formula_for_non_shannon_entropy() {
        // Inverse-square entropy on the interval: validate against central
        // differences of the gradient.
        let base = models::table_model(1, 48).unwrap().model;
        let m = Model::new(base.space.clone(), base.constraints.clone(), crate::EntropyFunction::inverse_square());
        let b = dvector![0.3];
        let h = hessian(&m, &b, &Default::default()).unwrap();
        let hfd = 1e-4;
        let gp = gradient(&m, &dvector![0.3 + hfd], &Default::default()).unwrap();
        let gm = gradient(&m, &dvector![0.3 - hfd], &Default::default()).unwrap();
        let fd = (gp[0] - gm[0]) / (2.0 * hfd);
        assert_relative_eq!(h[(0, 0)], fd, max_relative = 1e-5);
        assert!(h[(0, 0)] > 0.0);
    }

    #[test]
    fn moment_tensors_reproduce_known_values() {
        let bm = models::mcmillan(48, 48).unwrap();
        let m = &bm.model;
        let uniform = Density {
            values: vec![1.0 / m.space.total_mass(); m.space.n_nodes()],
            space: &m.space,
        };
        let m2 = moment_tensor(2, &uniform, &m.constraints).unwrap();
        assert_relative_eq!(m2.get(&[0, 0]), 0.2, max_relative = 1e-12);
        assert_relative_eq!(m2.get(&[1, 1]), 0.1, max_relative = 1e-12);
        assert!(m2.get(&[0, 1]).abs() < 1e-14);

        // First moment of a solved density is the moment vector itself.
        let b = dvector![0.25, -0.1];
        let sol = solve_model(m, &b, &Default::default()).unwrap();
        let rho = crate::dual_solver::density_from_dual(&m.space, &m.constraints, &m.entropy, &sol).unwrap();
        let m1 = moment_tensor(1, &rho, &m.constraints).unwrap();
        assert!((m1.get(&[0]) - b[0]).abs() < 1e-9);
        assert!((m1.get(&[1]) - b[1]).abs() < 1e-9);

        assert!(moment_tensor(5, &uniform, &m.constraints).is_err());
    }

    #[test]
    fn interval_uniform_moments_match_table_row() {
        let m = models::table_model(1, 32).unwrap().model;
        let uniform = Density { values: vec![1.0; m.space.n_nodes()], space: &m.space };
        let m2 = moment_tensor(2, &uniform, &m.constraints).unwrap();
        let m3 = moment_tensor(3, &uniform, &m.constraints).unwrap();
        let m4 = moment_tensor(4, &uniform, &m.constraints).unwrap();
        assert_relative_eq!(m2.get(&[0, 0]), 1.0 / 3.0, max_relative = 1e-12);
        assert!(m3.get(&[0, 0, 0]).abs() < 1e-15);
        assert_relative_eq!(m4.get(&[0, 0, 0, 0]), 1.0 / 5.0, max_relative = 1e-12);
    }

    #[test]
    fn moment_tensor_is_exactly_symmetric() {
        let bm = models::mcmillan(16, 16).unwrap();
        let m = &bm.model;
        let sol = solve_model(m, &dvector![0.3, 0.2], &Default::default()).unwrap();
        let rho = crate::dual_solver::density_from_dual(&m.space, &m.constraints, &m.entropy, &sol).unwrap();
        let t = moment_tensor(3, &rho, &m.constraints).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    let v = t.get(&[i, j, l]);
                    assert_eq!(v, t.get(&[j, i, l]));
                    assert_eq!(v, t.get(&[l, j, i]));
                }
            }
        }
    }

    #[test]
    fn duality_gap_is_tiny_at_interior_points() {
        let bm = models::mcmillan(32, 32).unwrap();
        let m = &bm.model;
        for b in [dvector![0.0, 0.0], dvector![0.5, 0.2], dvector![-0.35, -0.3]] {
            let sol = solve_model(m, &b, &Default::default()).unwrap();
            let primal = primal_integral(&m.space, &m.constraints, &m.entropy, &sol).unwrap();
            assert!((sol.psi_value - primal).abs() <= 1e-8 * sol.psi_value.abs().max(1.0));
        }
    }

    #[test]
    fn sphere_chain_psi_is_rotation_invariant() {
        let bm = models::sphere_chain(32).unwrap();
        let m = &bm.model;
        let r = 0.3;
        let p1 = psi(m, &dvector![r, 0.0, 0.0], &Default::default()).unwrap();
        let p2 = psi(m, &dvector![0.0, r, 0.0], &Default::default()).unwrap();
        let p3 = psi(m, &dvector![0.0, 0.0, r], &Default::default()).unwrap();
        assert_relative_eq!(p1, p2, epsilon = 1e-8);
        assert_relative_eq!(p1, p3, epsilon = 1e-8);

        // Gradient at (r, 0, 0) is the inverse Langevin of r along e_1.
        let g = gradient(m, &dvector![r, 0.0, 0.0], &Default::default()).unwrap();
        let inv_langevin = crate::numeric::newton_bisect(
            |x: f64| 1.0 / x.tanh() - 1.0 / x,
            None::<fn(f64) -> f64>,
            r,
            1e-6,
            50.0,
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(g[0], inv_langevin, max_relative = 1e-6);
        assert!(g[1].abs() < 1e-8 && g[2].abs() < 1e-8);
    }

    #[test]
    fn psi_exceeds_growth_bound_along_a_ray() {
        let bm = models::mcmillan(48, 48).unwrap();
        let m = &bm.model;
        let g = m.geometry();
        // Ray toward the S = 1 edge.
        let mut opts = crate::dual_solver::SolveOptions::default();
        let mut prev = f64::NEG_INFINITY;
        for t in [0.5, 0.7, 0.85, 0.95] {
            let b = dvector![t, 0.0];
            let sol = solve_model(m, &b, &opts).unwrap();
            opts = opts.warm(sol.alpha, sol.lambda.clone());
            let bound = g.growth_lower_bound(&b, &m.entropy, 64).unwrap();
            assert!(sol.psi_value >= bound, "psi {} < bound {bound} at t = {t}", sol.psi_value);
            assert!(sol.psi_value > prev);
            prev = sol.psi_value;
        }
    }

    #[test]
    fn moment_tensor_refinement_stability() {
        // Doubling the quadrature leaves polynomial-exact moments unchanged.
        let coarse = models::mcmillan(24, 24).unwrap();
        let fine = models::mcmillan(48, 48).unwrap();
        for bm in [&coarse, &fine] {
            let s = &bm.model.space;
            let uniform = Density { values: vec![1.0 / s.total_mass(); s.n_nodes()], space: s };
            let m3 = moment_tensor(3, &uniform, &bm.model.constraints).unwrap();
            assert_relative_eq!(m3.get(&[0, 0, 0]), 2.0 / 35.0, max_relative = 1e-12);
            assert_relative_eq!(m3.get(&[0, 1, 1]), 1.0 / 35.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn continuity_of_density_in_b() {
        // |b - b'| = 1e-4 moves the density by O(1e-4) in sup norm; report
        // the constant rather than asserting a universal bound.
        let bm = models::mcmillan(32, 32).unwrap();
        let m = &bm.model;
        let b1 = dvector![0.4, 0.1];
        let b2 = dvector![0.4 + 1e-4, 0.1];
        let s1 = solve_model(m, &b1, &Default::default()).unwrap();
        let s2 = solve_model(m, &b2, &Default::default()).unwrap();
        let r1 = crate::dual_solver::density_from_dual(&m.space, &m.constraints, &m.entropy, &s1).unwrap();
        let r2 = crate::dual_solver::density_from_dual(&m.space, &m.constraints, &m.entropy, &s2).unwrap();
        let diff = r1
            .values
            .iter()
            .zip(&r2.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let c = diff / 1e-4;
        assert!(c.is_finite() && c < 1e3, "continuity constant blew up: {c}");
    }

    #[test]
    fn psi_gradient_on_nonuniform_measure() {
        // Same operations on an unnormalised interval measure (mass 2).
        let space = state_space::build_interval_space(48, false).unwrap();
        let cs = models::polynomial_constraints(&space, &[vec![0.0, 1.0]]).unwrap();
        let m = Model::new(space, cs, crate::EntropyFunction::shannon());
        // psi(0) = mu(X) phi(1/mu(X)) = 2 * (1/2) ln(1/2) = -ln 2.
        let v = psi(&m, &dvector![0.0], &Default::default()).unwrap();
        assert_relative_eq!(v, -(2.0_f64.ln()), max_relative = 1e-10);
    }
}

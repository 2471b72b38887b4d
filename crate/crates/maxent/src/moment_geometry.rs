//! Geometry of the admissible moment set `Q`.
//!
//! `Q` is open, bounded and convex, and is characterised by its support
//! function: `b` lies in `Q` exactly when `b . u < S_u` for every unit
//! direction `u`, where `S_u` is the essential supremum of `u . a` over the
//! state space. For interior points the smallest margin over unit directions
//! equals the distance to the boundary, and near-boundary moment vectors
//! force densities to concentrate on the small sets `E_eps^u`, which is what
//! the growth bound evaluates.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::entropy::EntropyFunction;
use crate::numeric;
use crate::state_space::{ConstraintSet, StateSpace};
use crate::{Error, Result};

/// Support value in one direction.
#[derive(Debug, Clone)]
pub struct SupportResult {
    pub direction: DVector<f64>,
    /// `S_u = esssup u . a`, positively homogeneous in `u`.
    pub value: f64,
    /// A maximising point (refined off-grid when a closed form exists).
    pub argmax: Vec<f64>,
}

/// Verdict of the membership test, with a certificate direction.
#[derive(Debug, Clone)]
pub enum Membership {
    /// `min_u (S_u - b . u) > tol`; the margin equals `d(b, dQ)`.
    Inside { margin: f64, nearest_direction: DVector<f64> },
    /// Some unit `u` has `S_u - b . u <= 0`.
    Outside { violation: f64, witness: DVector<f64> },
    /// Margin within the tolerance band of zero; `Q` is open so the boundary
    /// itself is never attained.
    Indeterminate { margin: f64, direction: DVector<f64> },
}

impl Membership {
    pub fn is_inside(&self) -> bool {
        matches!(self, Membership::Inside { .. })
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Membership::Outside { .. })
    }
}

/// The set `E_eps^u = { t : S_u < u . a(t) + eps }` as a node mask.
#[derive(Debug, Clone)]
pub struct ConcentrationSet {
    pub direction: DVector<f64>,
    pub epsilon: f64,
    pub mask: Vec<bool>,
    /// `mu(E_eps^u)` under the quadrature measure.
    pub measure: f64,
}

/// Distance from an interior point to the boundary of `Q`.
#[derive(Debug, Clone)]
pub struct BoundaryDistance {
    pub distance: f64,
    /// Outward unit normal of the nearest supporting hyperplane.
    pub direction: DVector<f64>,
}

/// Read-only handle over a model's moment set; support profiles are cached
/// per direction count and shared across threads.
pub struct Geometry<'a> {
    space: &'a StateSpace,
    constraints: &'a ConstraintSet,
    /// Margins below this are reported [`Membership::Indeterminate`].
    tol: f64,
    profiles: RwLock<HashMap<usize, Arc<Vec<(DVector<f64>, f64)>>>>,
}

impl<'a> Geometry<'a> {
    pub fn new(space: &'a StateSpace, constraints: &'a ConstraintSet) -> Self {
        let tol = 1e-6 * constraints.sup_norm_vector().max(1e-12);
        Self { space, constraints, tol, profiles: RwLock::new(HashMap::new()) }
    }

    /// Override the indeterminate band.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn k(&self) -> usize {
        self.constraints.k()
    }

    /// Support function `S_u` for any nonzero direction.
    pub fn support(&self, u: &DVector<f64>) -> Result<SupportResult> {
        if u.len() != self.k() {
            return Err(Error::InvalidArgument(format!(
                "direction has length {}, expected {}",
                u.len(),
                self.k()
            )));
        }
        if u.norm() == 0.0 {
            return Err(Error::InvalidArgument("support direction must be nonzero".into()));
        }
        let (argmax, value) = self.constraints.refine_linear_max(self.space, u);
        Ok(SupportResult { direction: u.clone(), value, argmax })
    }

    fn profile(&self, n_directions: usize) -> Arc<Vec<(DVector<f64>, f64)>> {
        if let Some(p) = self.profiles.read().expect("geometry cache poisoned").get(&n_directions) {
            return p.clone();
        }
        let dirs = numeric::unit_directions(self.k(), n_directions);
        let profile: Vec<(DVector<f64>, f64)> = dirs
            .into_par_iter()
            .map(|u| {
                let (_, s) = self.constraints.refine_linear_max(self.space, &u);
                (u, s)
            })
            .collect();
        let profile = Arc::new(profile);
        self.profiles
            .write()
            .expect("geometry cache poisoned")
            .insert(n_directions, profile.clone());
        profile
    }

    /// Smallest sampled margin `S_u - b . u` and its direction.
    fn scan_margin(&self, b: &DVector<f64>, n_directions: usize) -> (f64, DVector<f64>) {
        let profile = self.profile(n_directions);
        let mut best = f64::INFINITY;
        let mut best_u = profile[0].0.clone();
        for (u, s) in profile.iter() {
            let m = s - b.dot(u);
            if m < best {
                best = m;
                best_u = u.clone();
            }
        }
        (best, best_u)
    }

    /// Polish the margin minimiser over unit directions near `u0`
    /// (Nelder-Mead in tangent coordinates; exact already for `k = 1`).
    fn refine_margin(&self, b: &DVector<f64>, u0: &DVector<f64>, scale: f64) -> (f64, DVector<f64>) {
        let k = self.k();
        let margin_of = |u: &DVector<f64>| -> f64 {
            let (_, s) = self.constraints.refine_linear_max(self.space, u);
            s - b.dot(u)
        };
        if k == 1 {
            return (margin_of(u0), u0.clone());
        }
        let basis = tangent_basis(u0);
        let objective = |d: &[f64]| {
            let mut u = u0.clone();
            for (i, col) in basis.iter().enumerate() {
                u += col * d[i];
            }
            let n = u.norm();
            if n < 1e-12 {
                return f64::INFINITY;
            }
            u /= n;
            margin_of(&u)
        };
        let (dbest, _) = numeric::nelder_mead(objective, &vec![0.0; k - 1], scale, 100, 1e-14);
        let mut u = u0.clone();
        for (i, col) in basis.iter().enumerate() {
            u += col * dbest[i];
        }
        u /= u.norm();
        (margin_of(&u), u)
    }

    /// Half-spacing of the sampled direction set, used to decide whether the
    /// scan alone certifies the verdict.
    fn direction_spacing(&self, n: usize) -> f64 {
        match self.k() {
            1 => 0.0,
            2 => std::f64::consts::PI / n.max(4) as f64,
            3 => 2.6 / (n.max(8) as f64).sqrt(),
            _ => 1.0,
        }
    }

    /// Membership test against `n_directions` quasi-uniform unit directions.
    /// A sampled violation is already a certificate; otherwise the margin
    /// minimiser is polished locally so that Inside margins report the
    /// distance to the boundary.
    pub fn membership(&self, b: &DVector<f64>, n_directions: usize) -> Result<Membership> {
        if b.len() != self.k() {
            return Err(Error::InvalidArgument(format!(
                "moment vector has length {}, expected {}",
                b.len(),
                self.k()
            )));
        }
        let (scan_m, scan_u) = self.scan_margin(b, n_directions);
        let (margin, direction) = if scan_m <= 0.0 {
            (scan_m, scan_u)
        } else {
            let spacing = self.direction_spacing(n_directions);
            let refined = self.refine_margin(b, &scan_u, spacing.max(1e-3));
            if refined.0 < scan_m {
                refined
            } else {
                (scan_m, scan_u)
            }
        };
        Ok(if margin <= 0.0 {
            Membership::Outside { violation: -margin, witness: direction }
        } else if margin <= self.tol {
            Membership::Indeterminate { margin, direction }
        } else {
            Membership::Inside { margin, nearest_direction: direction }
        })
    }

    /// `d(b, dQ) = min_u (S_u - b . u)` for interior points, with the
    /// minimising direction polished.
    pub fn distance_to_boundary(&self, b: &DVector<f64>, n_directions: usize) -> Result<BoundaryDistance> {
        match self.membership(b, n_directions)? {
            Membership::Inside { margin, nearest_direction } => {
                Ok(BoundaryDistance { distance: margin, direction: nearest_direction })
            }
            other => Err(Error::Precondition(format!(
                "distance_to_boundary requires an interior point; verdict {other:?}"
            ))),
        }
    }

    /// Concentration set for the nearest boundary direction, with
    /// `eps = sqrt(d(b, dQ))`.
    pub fn concentration_set(&self, b: &DVector<f64>, n_directions: usize) -> Result<ConcentrationSet> {
        let bd = self.distance_to_boundary(b, n_directions)?;
        let epsilon = bd.distance.sqrt();
        if epsilon >= 1.0 - 1e-9 {
            return Err(Error::Inapplicable(format!(
                "concentration bound is vacuous: eps = {epsilon:.3} >= 1"
            )));
        }
        self.concentration_set_for(&bd.direction, epsilon)
    }

    /// `E_eps^u` for an explicit direction and epsilon.
    pub fn concentration_set_for(&self, u: &DVector<f64>, epsilon: f64) -> Result<ConcentrationSet> {
        if epsilon <= 0.0 {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        let s = self.support(u)?.value;
        let n = self.space.n_nodes();
        let mut mask = vec![false; n];
        let mut measure = 0.0;
        for j in 0..n {
            if s < u.dot(&self.constraints.at_node(j)) + epsilon {
                mask[j] = true;
                measure += self.space.weights()[j];
            }
        }
        if measure == 0.0 {
            return Err(Error::Numerical(format!(
                "concentration set empty at quadrature resolution (eps = {epsilon:e})"
            )));
        }
        Ok(ConcentrationSet { direction: u.clone(), epsilon, mask, measure })
    }

    /// Lower bound on the singular potential from mass concentration:
    /// `mu(E) phi((1-eps)/mu(E)) + mu(X \ E) phi(eps / mu(X \ E))`.
    ///
    /// The inequality `psi_s(b) >= bound` is a theorem once `eps` is small
    /// enough that `(1-eps)/mu(E)` lies on the increasing side of `phi`
    /// (automatic near the boundary, where `mu(E)` collapses); the formula
    /// value is returned for any `eps < 1`.
    pub fn growth_lower_bound(&self, b: &DVector<f64>, phi: &EntropyFunction, n_directions: usize) -> Result<f64> {
        let set = self.concentration_set(b, n_directions)?;
        growth_bound_from_measures(set.measure, self.space.total_mass() - set.measure, set.epsilon, phi)
    }

    /// `mu(E_eps^u)` over a list of epsilons (monotone in eps by
    /// construction).
    pub fn concentration_measure_decay(&self, u: &DVector<f64>, epsilons: &[f64]) -> Result<Vec<f64>> {
        let s = self.support(u)?.value;
        let n = self.space.n_nodes();
        Ok(epsilons
            .iter()
            .map(|&eps| {
                (0..n)
                    .filter(|&j| s < u.dot(&self.constraints.at_node(j)) + eps)
                    .map(|j| self.space.weights()[j])
                    .sum()
            })
            .collect())
    }
}

/// The two-term growth bound as a pure function of the measures; exposed so
/// callers can evaluate it with analytically known `mu(E)`.
pub fn growth_bound_from_measures(mu_e: f64, mu_complement: f64, epsilon: f64, phi: &EntropyFunction) -> Result<f64> {
    if epsilon >= 1.0 {
        return Err(Error::Inapplicable(format!("growth bound is vacuous: eps = {epsilon:.3} >= 1")));
    }
    if !(mu_e > 0.0) {
        return Err(Error::InvalidArgument("mu(E) must be positive".into()));
    }
    if mu_complement <= 0.0 {
        // E exhausts X; phi's superlinearity sends the bound to infinity.
        return Ok(f64::INFINITY);
    }
    let t1 = mu_e * phi.phi((1.0 - epsilon) / mu_e)?;
    let t2 = mu_complement * phi.phi(epsilon / mu_complement)?;
    Ok(t1 + t2)
}

/// Orthonormal basis of the hyperplane orthogonal to `u` (Householder
/// columns).
fn tangent_basis(u: &DVector<f64>) -> Vec<DVector<f64>> {
    let k = u.len();
    let mut v = u.clone();
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * u.norm();
    let vnorm2 = v.norm_squared();
    let mut cols = Vec::with_capacity(k - 1);
    for c in 1..k {
        let mut e = DVector::zeros(k);
        e[c] = 1.0;
        let h = &e - &v * (2.0 * v[c] / vnorm2);
        cols.push(h);
    }
    cols
}

/// Reference Gram-like margin matrix used by tests and diagnostics: the
/// matrix `[S_{u_i} - b . u_i]` over a direction profile.
pub fn margin_table(geometry: &Geometry<'_>, b: &DVector<f64>, n_directions: usize) -> DMatrix<f64> {
    let dirs = numeric::unit_directions(geometry.k(), n_directions);
    let mut out = DMatrix::zeros(dirs.len(), 1);
    for (i, u) in dirs.iter().enumerate() {
        let s = geometry.support(u).expect("direction set is nonzero").value;
        out[(i, 0)] = s - b.dot(u);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use approx::assert_relative_eq;

    #[test]
    fn mcmillan_support_values_match_closed_forms() {
        let bm = models::mcmillan(48, 48).unwrap();
        let g = bm.model.geometry();
        let s = g.support(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_relative_eq!(s.value, 1.0, epsilon = 1e-9);
        let s = g.support(&DVector::from_vec(vec![-1.0, 0.0])).unwrap();
        assert_relative_eq!(s.value, 0.5, epsilon = 1e-9);
        let s = g.support(&DVector::from_vec(vec![-1.0 / 3.0, -1.0])).unwrap();
        assert_relative_eq!(s.value, 2.0 / 3.0, epsilon = 1e-9);
        let s = g.support(&DVector::from_vec(vec![-1.0 / 3.0, 1.0])).unwrap();
        assert_relative_eq!(s.value, 2.0 / 3.0, epsilon = 1e-9);
        assert!(g.support(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn interval_support_is_endpoint() {
        let bm = models::table_model(1, 32).unwrap();
        let g = bm.model.geometry();
        let s = g.support(&DVector::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(s.value, 1.0, epsilon = 1e-10);
        assert_relative_eq!(s.argmax[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn support_positive_homogeneity() {
        let bm = models::mcmillan(24, 24).unwrap();
        let g = bm.model.geometry();
        let u = DVector::from_vec(vec![0.3, -0.8]);
        let s1 = g.support(&u).unwrap().value;
        let s3 = g.support(&(&u * 3.0)).unwrap().value;
        assert_relative_eq!(s3, 3.0 * s1, max_relative = 1e-10);
    }

    #[test]
    fn membership_matches_known_mcmillan_points() {
        let bm = models::mcmillan(48, 48).unwrap();
        let g = bm.model.geometry();
        assert!(g.membership(&DVector::from_vec(vec![0.0, 0.0]), 128).unwrap().is_inside());
        // (0, 0.7) violates |sigma| < (S + 2)/3 = 2/3.
        assert!(g.membership(&DVector::from_vec(vec![0.0, 0.7]), 128).unwrap().is_outside());
        // (1, 0) sits on the boundary: not inside.
        let verdict = g.membership(&DVector::from_vec(vec![1.0, 0.0]), 256).unwrap();
        assert!(!verdict.is_inside(), "boundary point classified inside: {verdict:?}");
    }

    #[test]
    fn interval_membership_and_distance() {
        let bm = models::table_model(1, 32).unwrap();
        let g = bm.model.geometry();
        let d = g.distance_to_boundary(&DVector::from_vec(vec![0.0]), 8).unwrap();
        assert_relative_eq!(d.distance, 1.0, epsilon = 1e-9);
        let d = g.distance_to_boundary(&DVector::from_vec(vec![0.9]), 8).unwrap();
        assert_relative_eq!(d.distance, 0.1, epsilon = 1e-9);
        assert_relative_eq!(d.direction[0], 1.0, epsilon = 1e-12);
        assert!(g.distance_to_boundary(&DVector::from_vec(vec![1.2]), 8).is_err());
    }

    #[test]
    fn mcmillan_distance_matches_polygon_distance() {
        let bm = models::mcmillan(48, 48).unwrap();
        let q = bm.closed_form_q.clone().unwrap();
        let g = bm.model.geometry();
        for b in [vec![0.0, 0.0], vec![0.4, 0.2], vec![-0.2, -0.1], vec![0.7, -0.4]] {
            let b = DVector::from_vec(b);
            let d = g.distance_to_boundary(&b, 256).unwrap();
            assert_relative_eq!(d.distance, q.boundary_distance(&b), epsilon = 2e-6);
        }
    }

    #[test]
    fn interval_concentration_set_measure() {
        // b = 1 - eps^2 with eps = 0.1 on dx/2: E = (0.9, 1], mu(E) = 0.05.
        let bm = models::table_model(1, 4096).unwrap();
        let g = bm.model.geometry();
        let eps = 0.1;
        let b = DVector::from_vec(vec![1.0 - eps * eps]);
        let set = g.concentration_set(&b, 8).unwrap();
        assert_relative_eq!(set.epsilon, eps, max_relative = 1e-6);
        assert_relative_eq!(set.measure, 0.05, max_relative = 2e-3);
        assert!(set.mask.iter().any(|&m| m));
        assert!(set.measure < bm.model.space.total_mass());
    }

    #[test]
    fn mcmillan_concentration_set_nonempty() {
        let bm = models::mcmillan(64, 64).unwrap();
        let g = bm.model.geometry();
        let set = g.concentration_set(&DVector::from_vec(vec![0.99, 0.0]), 128).unwrap();
        assert!(set.mask.iter().any(|&m| m));
        assert!(set.measure > 0.0 && set.measure < bm.model.space.total_mass());
    }

    #[test]
    fn concentration_guard_for_large_epsilon() {
        // Distance 1 from b = 0 on the interval: eps = 1, bound vacuous.
        let bm = models::table_model(1, 64).unwrap();
        let g = bm.model.geometry();
        match g.concentration_set(&DVector::from_vec(vec![0.0]), 8) {
            Err(Error::Inapplicable(_)) => {}
            other => panic!("expected Inapplicable, got {other:?}"),
        }
    }

    #[test]
    fn growth_bound_formula_value() {
        // eps = 0.1, mu(E) = 0.05 under the normalised interval measure:
        // 0.05 phi(18) + 0.95 phi(0.1/0.95) for Shannon.
        let phi = EntropyFunction::shannon();
        let bound = growth_bound_from_measures(0.05, 0.95, 0.1, &phi).unwrap();
        let expected = 0.05 * (18.0_f64 * 18.0_f64.ln()) + 0.95 * ((0.1 / 0.95) * (0.1_f64 / 0.95).ln());
        assert_relative_eq!(bound, expected, max_relative = 1e-14);
        assert_relative_eq!(bound, 2.376_205, max_relative = 1e-6);
    }

    #[test]
    fn growth_bound_finite_for_infinite_entropy_at_zero() {
        let phi = EntropyFunction::inverse_square();
        let bound = growth_bound_from_measures(0.05, 0.95, 0.01, &phi).unwrap();
        assert!(bound.is_finite() && bound > 0.0);
    }

    #[test]
    fn growth_bound_below_dual_value() {
        let bm = models::table_model(1, 2048).unwrap();
        let g = bm.model.geometry();
        let b = DVector::from_vec(vec![0.99]);
        let bound = g.growth_lower_bound(&b, &bm.model.entropy, 8).unwrap();
        let sol = crate::dual_solver::solve_model(&bm.model, &b, &Default::default()).unwrap();
        assert!(
            sol.psi_value >= bound,
            "psi = {} below growth bound {bound}",
            sol.psi_value
        );
    }

    #[test]
    fn interval_decay_is_linear_in_epsilon() {
        let bm = models::table_model(1, 4096).unwrap();
        let g = bm.model.geometry();
        let u = DVector::from_vec(vec![1.0]);
        let eps: Vec<f64> = vec![0.4, 0.2, 0.1, 0.05, 0.025];
        let measures = g.concentration_measure_decay(&u, &eps).unwrap();
        for (m, e) in measures.iter().zip(&eps) {
            // mu(E_eps) = eps / 2 under dx/2.
            assert_relative_eq!(*m, e / 2.0, max_relative = 5e-3);
        }
        for w in measures.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn mcmillan_decay_monotone_and_vanishing() {
        let bm = models::mcmillan(64, 64).unwrap();
        let g = bm.model.geometry();
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let eps: Vec<f64> = (0..10).map(|i| 0.5 * 0.6_f64.powi(i)).collect();
        let measures = g.concentration_measure_decay(&u, &eps).unwrap();
        for w in measures.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        assert!(measures.last().unwrap() < &0.05);
        // At the quadrature resolution floor (just past the gap between the
        // refined supremum and the best node) the measure is small but
        // positive.
        let s = g.support(&u).unwrap().value;
        let node_max = (0..bm.model.space.n_nodes())
            .map(|j| bm.model.constraints.values()[(0, j)])
            .fold(f64::NEG_INFINITY, f64::max);
        let floor_eps = 1.5 * (s - node_max).max(1e-12);
        let floor = g.concentration_measure_decay(&u, &[floor_eps]).unwrap()[0];
        assert!(floor > 0.0 && floor < 0.05);
    }

    #[test]
    fn subadditivity_on_random_pairs() {
        let bm = models::mcmillan(24, 24).unwrap();
        let g = bm.model.geometry();
        let pairs = [
            (vec![1.0, 0.2], vec![-0.5, 0.7]),
            (vec![0.1, -0.9], vec![0.4, 0.4]),
            (vec![-1.0, -1.0], vec![2.0, -0.3]),
        ];
        for (u, v) in pairs {
            let u = DVector::from_vec(u);
            let v = DVector::from_vec(v);
            let su = g.support(&u).unwrap().value;
            let sv = g.support(&v).unwrap().value;
            let suv = g.support(&(&u + &v)).unwrap().value;
            assert!(suv <= su + sv + 1e-9);
        }
    }
}

//! Quadrature representation of the measure space `(X, mu)` and of the
//! constraint functions, plus the linear-independence checks the duality
//! framework rests on.
//!
//! Everything downstream integrates against the node/weight representation
//! built here; built-in spaces also carry closed-form constraint evaluators
//! so suprema can be refined off the grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numeric;
use crate::{Error, Result};

/// Which built-in family a space belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// `[-1, 1]` with measure `dx` or the normalised `dx / 2`.
    Interval { normalized: bool },
    /// Reduced McMillan coordinates `(theta, x)` on `[0, pi] x [0, 1]` with
    /// measure `2 pi sin(theta) dtheta dx`; total mass `4 pi`.
    McMillan,
    /// The unit sphere in `(theta, phi)` coordinates with the surface
    /// measure; total mass `4 pi`.
    Sphere2,
    Custom,
}

/// A finite measure space discretised by quadrature nodes.
#[derive(Debug, Clone)]
pub struct StateSpace {
    dim: usize,
    /// Node coordinates, row-major (`n * dim`).
    points: Vec<f64>,
    weights: Vec<f64>,
    total_mass: f64,
    kind: SpaceKind,
    /// Coordinate box containing the nodes; used by off-grid refinement.
    bounds: Vec<(f64, f64)>,
}

impl StateSpace {
    fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>, kind: SpaceKind, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let total_mass = weights.iter().sum();
        let space = Self { dim, points, weights, total_mass, kind, bounds };
        space.validate()?;
        Ok(space)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// `sum_i w_i f(i)`.
    pub fn integrate<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        self.weights.iter().enumerate().map(|(i, &w)| w * f(i)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Config("state space has no quadrature nodes".into()));
        }
        if self.points.len() != self.weights.len() * self.dim {
            return Err(Error::Config("node/weight count mismatch".into()));
        }
        if !self.weights.iter().all(|&w| w > 0.0 && w.is_finite()) {
            return Err(Error::Config("quadrature weights must be positive and finite".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if !((sum - self.total_mass).abs() <= 1e-12 * self.total_mass.abs()) {
            return Err(Error::Config(format!(
                "weights sum {sum:e} disagrees with total mass {:e}",
                self.total_mass
            )));
        }
        Ok(())
    }
}

/// Gauss-Legendre space on `[-1, 1]`; `normalized` rescales the measure to
/// `dx / 2` so the total mass is one.
pub fn build_interval_space(order: usize, normalized: bool) -> Result<StateSpace> {
    if order < 2 {
        return Err(Error::Config(format!("interval quadrature order must be >= 2, got {order}")));
    }
    let (nodes, mut weights) = numeric::gauss_legendre(order);
    if normalized {
        for w in &mut weights {
            *w *= 0.5;
        }
    }
    StateSpace::new(1, nodes, weights, SpaceKind::Interval { normalized }, vec![(-1.0, 1.0)])
}

/// Tensor-product space for the reduced McMillan coordinates.
///
/// The polar direction is integrated in `c = cos(theta)`, which makes every
/// moment of `P_2(cos theta)` polynomial-exact; nodes are stored as
/// `(theta, x)` with weight `2 pi w_c w_x`.
pub fn build_mcmillan_space(n_theta: usize, n_x: usize) -> Result<StateSpace> {
    if n_theta < 2 || n_x < 2 {
        return Err(Error::Config(format!(
            "mcmillan grid must be at least 2 x 2, got {n_theta} x {n_x}"
        )));
    }
    let (c_nodes, c_weights) = numeric::gauss_legendre(n_theta);
    let (x_nodes, x_weights) = numeric::gauss_legendre_on(n_x, 0.0, 1.0);
    let n = n_theta * n_x;
    let mut points = Vec::with_capacity(2 * n);
    let mut weights = Vec::with_capacity(n);
    for (c, wc) in c_nodes.iter().zip(&c_weights) {
        let theta = c.clamp(-1.0, 1.0).acos();
        for (x, wx) in x_nodes.iter().zip(&x_weights) {
            points.push(theta);
            points.push(*x);
            weights.push(2.0 * std::f64::consts::PI * wc * wx);
        }
    }
    StateSpace::new(2, points, weights, SpaceKind::McMillan, vec![(0.0, std::f64::consts::PI), (0.0, 1.0)])
}

/// Unit-sphere space in `(theta, phi)` coordinates: Gauss-Legendre in
/// `cos(theta)` times a uniform azimuthal grid (exact for trigonometric
/// polynomials of degree below the grid size).
pub fn build_sphere2_space(n_polar: usize, n_azimuth: usize) -> Result<StateSpace> {
    if n_polar < 2 || n_azimuth < 4 {
        return Err(Error::Config(format!(
            "sphere quadrature needs n_polar >= 2 and n_azimuth >= 4, got {n_polar} x {n_azimuth}"
        )));
    }
    let (c_nodes, c_weights) = numeric::gauss_legendre(n_polar);
    let wphi = 2.0 * std::f64::consts::PI / n_azimuth as f64;
    let n = n_polar * n_azimuth;
    let mut points = Vec::with_capacity(2 * n);
    let mut weights = Vec::with_capacity(n);
    for (c, wc) in c_nodes.iter().zip(&c_weights) {
        let theta = c.clamp(-1.0, 1.0).acos();
        for j in 0..n_azimuth {
            let phi = wphi * (j as f64 + 0.5);
            points.push(theta);
            points.push(phi);
            weights.push(wc * wphi);
        }
    }
    StateSpace::new(
        2,
        points,
        weights,
        SpaceKind::Sphere2,
        vec![(0.0, std::f64::consts::PI), (0.0, 2.0 * std::f64::consts::PI)],
    )
}

/// Space from explicit nodes and weights (tabulated models).
pub fn build_custom_space(dim: usize, points: Vec<f64>, weights: Vec<f64>, bounds: Option<Vec<(f64, f64)>>) -> Result<StateSpace> {
    if dim == 0 {
        return Err(Error::Config("custom space dimension must be positive".into()));
    }
    let bounds = bounds.unwrap_or_else(|| {
        (0..dim)
            .map(|d| {
                let coords = points.iter().skip(d).step_by(dim);
                let lo = coords.clone().cloned().fold(f64::INFINITY, f64::min);
                let hi = coords.cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect()
    });
    StateSpace::new(dim, points, weights, SpaceKind::Custom, bounds)
}

/// Closed-form evaluator: fills `out` with `a_1(p), ..., a_k(p)`.
pub type AnalyticEval = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Constraint functions sampled at the quadrature nodes.
#[derive(Clone)]
pub struct ConstraintSet {
    /// `k x n` matrix of `a_i(t_j)`; columns are per-node constraint vectors.
    values: DMatrix<f64>,
    /// Essential-sup estimate per function.
    sup_norms: Vec<f64>,
    /// Ess-sup estimate of the Euclidean norm `|a(t)|`.
    sup_norm_vector: f64,
    analytic: Option<AnalyticEval>,
}

impl std::fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("k", &self.k())
            .field("n_nodes", &self.values.ncols())
            .field("sup_norms", &self.sup_norms)
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

impl ConstraintSet {
    /// Build from a closed-form evaluator; node values and refined sup norms
    /// are computed here.
    pub fn from_closure(space: &StateSpace, k: usize, eval: AnalyticEval) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("constraint set must contain at least one function".into()));
        }
        let n = space.n_nodes();
        let mut values = DMatrix::zeros(k, n);
        let mut buf = vec![0.0; k];
        for j in 0..n {
            (eval)(space.point(j), &mut buf);
            for i in 0..k {
                values[(i, j)] = buf[i];
            }
        }
        let mut cs = Self { values, sup_norms: vec![0.0; k], sup_norm_vector: 0.0, analytic: Some(eval) };
        cs.recompute_sup_norms(space);
        cs.check_rows()?;
        Ok(cs)
    }

    /// Build from tabulated node values only; sup norms fall back to node
    /// maxima (no off-grid refinement possible).
    pub fn from_values(space: &StateSpace, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != space.n_nodes() {
            return Err(Error::Config(format!(
                "constraint table has {} columns but the space has {} nodes",
                values.ncols(),
                space.n_nodes()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Config("constraint set must contain at least one function".into()));
        }
        let mut cs = Self { values, sup_norms: Vec::new(), sup_norm_vector: 0.0, analytic: None };
        cs.sup_norms = vec![0.0; cs.k()];
        cs.recompute_sup_norms(space);
        cs.check_rows()?;
        Ok(cs)
    }

    fn check_rows(&self) -> Result<()> {
        for i in 0..self.k() {
            if self.values.row(i).iter().all(|v| *v == 0.0) {
                return Err(Error::Config(format!("constraint function {i} vanishes at every node")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Constraint vector `a(t_j)` as a matrix column view.
    pub fn at_node(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.values.column(j)
    }

    pub fn sup_norm(&self, i: usize) -> f64 {
        self.sup_norms[i]
    }

    pub fn sup_norms(&self) -> &[f64] {
        &self.sup_norms
    }

    /// Ess-sup of the Euclidean norm `|a(t)|`.
    pub fn sup_norm_vector(&self) -> f64 {
        self.sup_norm_vector
    }

    pub fn has_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    /// Evaluate the constraints at an arbitrary point, when a closed form is
    /// available.
    pub fn eval_at(&self, point: &[f64]) -> Option<DVector<f64>> {
        self.analytic.as_ref().map(|f| {
            let mut out = DVector::zeros(self.k());
            (f)(point, out.as_mut_slice());
            out
        })
    }

    /// Maximise the scalar function `p -> c . a(p)` over the space, refining
    /// coordinate-wise within the bounds. Refinement is seeded from several
    /// well-separated top nodes so that two near-tied maxima (common at
    /// edge-normal directions) are both polished; returns the node maximum
    /// when no closed form is attached.
    pub fn refine_linear_max(&self, space: &StateSpace, c: &DVector<f64>) -> (Vec<f64>, f64) {
        let n = space.n_nodes();
        let mut values: Vec<(f64, usize)> = (0..n).map(|j| (c.dot(&self.at_node(j)), j)).collect();
        let (best, best_j) = values.iter().cloned().fold((f64::NEG_INFINITY, 0), |acc, v| {
            if v.0 > acc.0 {
                v
            } else {
                acc
            }
        });
        let point = space.point(best_j).to_vec();
        let Some(eval) = &self.analytic else {
            return (point, best);
        };

        // Seeds: the best node plus further top nodes that are spatially
        // separated from every already-chosen seed. Symmetric models can
        // carry several copies of one maximum (the McMillan corners give
        // four), so the budget must exceed the largest orbit.
        values.sort_by(|a, b| b.0.total_cmp(&a.0));
        let widths: Vec<f64> = space.bounds().iter().map(|(lo, hi)| (hi - lo).max(1e-12)).collect();
        let separated = |a: &[f64], b: &[f64]| -> bool {
            a.iter()
                .zip(b)
                .zip(&widths)
                .any(|((x, y), w)| (x - y).abs() > 0.15 * w)
        };
        let mut seeds: Vec<usize> = vec![best_j];
        for &(_, j) in values.iter().take(128) {
            if seeds.len() >= 8 {
                break;
            }
            if seeds.iter().all(|&s| separated(space.point(s), space.point(j))) {
                seeds.push(j);
            }
        }

        let k = self.k();
        let g = |p: &[f64]| {
            let mut out = vec![0.0; k];
            (eval)(p, &mut out);
            c.iter().zip(&out).map(|(ci, ai)| ci * ai).sum::<f64>()
        };
        let mut champion = (point, best);
        for &s in &seeds {
            let (p, v) = refine_coordinatewise(&g, space.point(s), space.bounds());
            if v > champion.1 {
                champion = (p, v);
            }
        }
        champion
    }

    fn recompute_sup_norms(&mut self, space: &StateSpace) {
        let k = self.k();
        for i in 0..k {
            let mut c = DVector::zeros(k);
            c[i] = 1.0;
            let (_, hi) = self.refine_linear_max(space, &c);
            c[i] = -1.0;
            let (_, lo) = self.refine_linear_max(space, &c);
            self.sup_norms[i] = hi.max(lo);
        }
        // Euclidean norm: node maximum of |a|, refined through |a|^2 when a
        // closed form exists.
        let mut best = 0.0;
        let mut best_j = 0;
        for j in 0..space.n_nodes() {
            let v = self.at_node(j).norm();
            if v > best {
                best = v;
                best_j = j;
            }
        }
        self.sup_norm_vector = best;
        if let Some(eval) = self.analytic.clone() {
            let g = |p: &[f64]| {
                let mut out = vec![0.0; k];
                (eval)(p, &mut out);
                out.iter().map(|a| a * a).sum::<f64>()
            };
            let (_, v2) = refine_coordinatewise(g, space.point(best_j), space.bounds());
            self.sup_norm_vector = self.sup_norm_vector.max(v2.max(0.0).sqrt());
        }
    }
}

/// Alternating per-coordinate scans with golden-section polish, clamped to
/// the coordinate box. Local by construction; callers seed it with the best
/// quadrature node so the right basin is selected.
fn refine_coordinatewise<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], bounds: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let mut p = start.to_vec();
    let mut value = f(&p);
    for _ in 0..3 {
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            let width = (hi - lo).max(1e-12);
            let radius = 0.12 * width;
            let a = (p[d] - radius).max(lo);
            let b = (p[d] + radius).min(hi);
            let pd = p.clone();
            let section = |x: f64| {
                let mut q = pd.clone();
                q[d] = x;
                f(&q)
            };
            let (x, v) = numeric::scan_golden_max(section, a, b, 33, 1e-13 * width);
            if v > value {
                p[d] = x;
                value = v;
            }
        }
    }
    (p, value)
}

/// Result of the pseudo-Haar spot check.
#[derive(Debug, Clone)]
pub struct PseudoHaarReport {
    /// Smallest singular value of the `{1, a_1, ..., a_k}` Gram matrix over
    /// all tested subsets, relative to the largest.
    pub min_singular_value: f64,
    pub pass: bool,
    pub subsets_tested: usize,
    pub floor: f64,
}

/// Necessary-condition check: on random node subsets holding at least half
/// the mass, the Gram matrix of `{1, a_1, ..., a_k}` must stay far from
/// singular. This is a heuristic; it can refute pseudo-Haar but never prove
/// it.
pub fn pseudo_haar_check(space: &StateSpace, constraints: &ConstraintSet, n_subsets: usize) -> PseudoHaarReport {
    let floor = 1e-10;
    let n = space.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9aa2);
    let mut min_rel = f64::INFINITY;
    let mut tested = 0;

    let subset_gram = |mask: &dyn Fn(usize) -> bool| -> Option<f64> {
        let mass: f64 = (0..n).filter(|&j| mask(j)).map(|j| space.weights()[j]).sum();
        if mass <= 1e-12 * space.total_mass() {
            return None; // near-zero mass subsets are skipped
        }
        let k1 = constraints.k() + 1;
        let mut gram = DMatrix::<f64>::zeros(k1, k1);
        for j in 0..n {
            if !mask(j) {
                continue;
            }
            let w = space.weights()[j];
            let a = constraints.at_node(j);
            for r in 0..k1 {
                let ar = if r == 0 { 1.0 } else { a[r - 1] };
                for c in 0..k1 {
                    let ac = if c == 0 { 1.0 } else { a[c - 1] };
                    gram[(r, c)] += w * ar * ac;
                }
            }
        }
        let svd = gram.svd(false, false);
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        Some(if max_sv > 0.0 { min_sv / max_sv } else { 0.0 })
    };

    // Whole space first, then random >= 50%-mass subsets.
    if let Some(rel) = subset_gram(&|_| true) {
        min_rel = min_rel.min(rel);
        tested += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..n_subsets {
        order.shuffle(&mut rng);
        let mut mass = 0.0;
        let mut included = vec![false; n];
        for &j in &order {
            if mass >= 0.5 * space.total_mass() {
                break;
            }
            included[j] = true;
            mass += space.weights()[j];
        }
        if let Some(rel) = subset_gram(&|j| included[j]) {
            min_rel = min_rel.min(rel);
            tested += 1;
        }
    }
    PseudoHaarReport { min_singular_value: min_rel, pass: min_rel > floor, subsets_tested: tested, floor }
}

/// Gram matrix of the constraints themselves (no constant row).
pub fn gram_matrix(space: &StateSpace, constraints: &ConstraintSet) -> DMatrix<f64> {
    let k = constraints.k();
    let mut gram = DMatrix::zeros(k, k);
    for j in 0..space.n_nodes() {
        let w = space.weights()[j];
        let a = constraints.at_node(j);
        for r in 0..k {
            for c in 0..k {
                gram[(r, c)] += w * a[r] * a[c];
            }
        }
    }
    gram
}

/// Return constraints with zero mean and identity Gram matrix under `mu`,
/// spanning `{1, a_1, ..., a_k}` together with the constants.
///
/// The transform is triangular with positive diagonal, so already-orthonormal
/// inputs come back unchanged.
pub fn orthonormalize(constraints: &ConstraintSet, space: &StateSpace) -> Result<ConstraintSet> {
    let k = constraints.k();
    let n = space.n_nodes();
    let mass = space.total_mass();

    let means: DVector<f64> = DVector::from_fn(k, |i, _| {
        space.integrate(|j| constraints.values()[(i, j)]) / mass
    });
    let mut centered = constraints.values().clone();
    for i in 0..k {
        for j in 0..n {
            centered[(i, j)] -= means[i];
        }
    }
    let mut gram = DMatrix::zeros(k, k);
    for j in 0..n {
        let w = space.weights()[j];
        for r in 0..k {
            for c in 0..k {
                gram[(r, c)] += w * centered[(r, j)] * centered[(c, j)];
            }
        }
    }
    let sv: DVector<f64> = gram.clone().svd(false, false).singular_values;
    let cond: f64 = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "centered Gram matrix is numerically singular (condition number {cond:.3e}); \
             the constraints are not linearly independent modulo constants"
        ))
    })?;
    if cond > 1e12 {
        return Err(Error::Numerical(format!(
            "centered Gram matrix is too ill-conditioned to orthonormalize (condition number {cond:.3e})"
        )));
    }

    // Rows become L^{-1} (a - mean); L has positive diagonal so each new
    // function keeps the orientation of the original.
    let linv = chol.l().try_inverse().ok_or_else(|| Error::Numerical("failed to invert Cholesky factor".into()))?;
    let new_values = &linv * &centered;

    match &constraints.analytic {
        Some(eval) => {
            let eval = eval.clone();
            let linv = linv.clone();
            let means = means.clone();
            let composed: AnalyticEval = Arc::new(move |p: &[f64], out: &mut [f64]| {
                let k = out.len();
                let mut raw = DVector::zeros(k);
                (eval)(p, raw.as_mut_slice());
                let adj = &linv * (raw - &means);
                out.copy_from_slice(adj.as_slice());
            });
            ConstraintSet::from_closure(space, k, composed)
        }
        None => ConstraintSet::from_values(space, new_values),
    }
}

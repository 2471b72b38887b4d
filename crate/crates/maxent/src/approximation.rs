//! Globally defined approximations of the singular potential: the
//! fourth-order Taylor expansion about the isotropic state, the 1-D shape
//! discriminants, and the Yosida-Moreau envelope.
//!
//! The Taylor expansion is Shannon-specific; its derivative tensors are
//! assembled from the uniform-state moment tensors `M^2, M^3, M^4` with
//! `V = (M^2)^{-1}`. The envelope `psi^J` reuses the dual Newton solver with
//! the extra smooth term `-|lambda|^2 / (2J)`, which makes the penalised dual
//! attained for every real moment vector.

use nalgebra::{DMatrix, DVector};

use crate::dual_solver::{self, Density, SolveOptions};
use crate::singular_potential::{moment_tensor, MomentTensor};
use crate::state_space::{ConstraintSet, SpaceKind, StateSpace};
use crate::{Error, Model, Result};

/// Moments and sign tests controlling the shape of the 1-D quartic
/// approximation: coercivity (`d1`), a single critical point (`d2`) and
/// convexity (`d3`).
#[derive(Debug, Clone)]
pub struct Discriminants1D {
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub coercive: bool,
    pub single_critical_point: bool,
    pub convex: bool,
}

impl Discriminants1D {
    /// Coefficients `(c2, c3, c4)` of the quartic
    /// `psi^4(b) - psi(0) = c2 b^2 + c3 b^3 + c4 b^4`.
    pub fn taylor_coefficients(&self) -> (f64, f64, f64) {
        let m2 = self.m2;
        let c2 = 1.0 / (2.0 * m2);
        let c3 = -self.m3 / (6.0 * m2.powi(3));
        let c4 = (3.0 * self.m3 * self.m3 - m2 * self.m4 + 3.0 * m2.powi(3)) / (24.0 * m2.powi(5));
        (c2, c3, c4)
    }
}

/// Shape discriminants for a single constraint on the normalised interval.
///
/// The mean is projected out first, then `m_i = (1/2) \int a(x)^i dx`. The
/// flags satisfy convex => single critical point => coercive.
pub fn discriminants_1d(space: &StateSpace, constraints: &ConstraintSet) -> Result<Discriminants1D> {
    if constraints.k() != 1 {
        return Err(Error::InvalidArgument(format!(
            "discriminants are defined for a single constraint, got k = {}",
            constraints.k()
        )));
    }
    if !matches!(space.kind(), SpaceKind::Interval { normalized: true }) {
        return Err(Error::Precondition(
            "discriminants require the normalised interval measure dx/2".into(),
        ));
    }
    let mean = space.integrate(|j| constraints.values()[(0, j)]);
    let centered = |j: usize| constraints.values()[(0, j)] - mean;
    let m2 = space.integrate(|j| centered(j).powi(2));
    let m3 = space.integrate(|j| centered(j).powi(3));
    let m4 = space.integrate(|j| centered(j).powi(4));
    if m2 <= 1e-14 {
        return Err(Error::InvalidArgument(
            "constraint is degenerate: second central moment vanishes".into(),
        ));
    }
    let d1 = 3.0 * m3 * m3 - m2 * m4 + 3.0 * m2.powi(3);
    let d2 = 72.0 * m2.powi(3) - 24.0 * m2 * m4 + 63.0 * m3 * m3;
    let d3 = 6.0 * m2.powi(3) - 2.0 * m2 * m4 + 5.0 * m3 * m3;
    Ok(Discriminants1D {
        m2,
        m3,
        m4,
        d1,
        d2,
        d3,
        coercive: d1 > 0.0,
        single_critical_point: d2 > 0.0,
        convex: d3 > 0.0,
    })
}

/// Fourth-order Taylor polynomial of `psi_s` about `b = 0`.
#[derive(Debug, Clone)]
pub struct TaylorQuartic {
    /// `psi_s(0) = mu(X) phi(1/mu(X))`.
    pub constant: f64,
    /// Second-derivative matrix `V = (M^2(0))^{-1}`.
    pub quadratic: DMatrix<f64>,
    /// Third-derivative tensor.
    pub cubic: MomentTensor,
    /// Fourth-derivative tensor.
    pub quartic: MomentTensor,
}

impl TaylorQuartic {
    pub fn dims(&self) -> usize {
        self.quadratic.nrows()
    }

    pub fn eval(&self, b: &DVector<f64>) -> f64 {
        let quad = (b.transpose() * &self.quadratic * b)[(0, 0)];
        self.constant + 0.5 * quad + self.cubic.apply(b) / 6.0 + self.quartic.apply(b) / 24.0
    }

    pub fn gradient(&self, b: &DVector<f64>) -> DVector<f64> {
        let k = self.dims();
        let mut g = &self.quadratic * b;
        for i in 0..k {
            let mut c3 = 0.0;
            for p in 0..k {
                for q in 0..k {
                    c3 += self.cubic.get(&[i, p, q]) * b[p] * b[q];
                }
            }
            let mut c4 = 0.0;
            for p in 0..k {
                for q in 0..k {
                    for r in 0..k {
                        c4 += self.quartic.get(&[i, p, q, r]) * b[p] * b[q] * b[r];
                    }
                }
            }
            g[i] += c3 / 2.0 + c4 / 6.0;
        }
        g
    }

    pub fn hessian(&self, b: &DVector<f64>) -> DMatrix<f64> {
        let k = self.dims();
        let mut h = self.quadratic.clone();
        for i in 0..k {
            for j in 0..k {
                let mut c3 = 0.0;
                for p in 0..k {
                    c3 += self.cubic.get(&[i, j, p]) * b[p];
                }
                let mut c4 = 0.0;
                for p in 0..k {
                    for q in 0..k {
                        c4 += self.quartic.get(&[i, j, p, q]) * b[p] * b[q];
                    }
                }
                h[(i, j)] += c3 + c4 / 2.0;
            }
        }
        h
    }

    /// Coefficients of the polynomial in monomial form: pairs of
    /// per-variable powers and the coefficient, degree two to four,
    /// zero-coefficient monomials skipped.
    pub fn monomial_coefficients(&self) -> Vec<(Vec<usize>, f64)> {
        let k = self.dims();
        let mut out = Vec::new();
        let mut emit = |powers: Vec<usize>, coeff: f64| {
            if coeff.abs() > 0.0 {
                out.push((powers, coeff));
            }
        };
        // Degree 2: D2_{ij} / (prod p!) with canonical i <= j.
        for i in 0..k {
            for j in i..k {
                let mut powers = vec![0; k];
                powers[i] += 1;
                powers[j] += 1;
                let denom = powers.iter().map(|&p| factorial(p)).product::<f64>();
                emit(powers, self.quadratic[(i, j)] / denom);
            }
        }
        for_canonical(k, 3, |idx| {
            let mut powers = vec![0; k];
            for &i in idx {
                powers[i] += 1;
            }
            let denom = powers.iter().map(|&p| factorial(p)).product::<f64>();
            emit(powers, self.cubic.get(idx) / denom);
        });
        for_canonical(k, 4, |idx| {
            let mut powers = vec![0; k];
            for &i in idx {
                powers[i] += 1;
            }
            let denom = powers.iter().map(|&p| factorial(p)).product::<f64>();
            emit(powers, self.quartic.get(idx) / denom);
        });
        out
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn for_canonical(k: usize, order: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; order];
    loop {
        if idx.windows(2).all(|w| w[0] <= w[1]) {
            f(&idx);
        }
        let mut done = true;
        for d in (0..order).rev() {
            idx[d] += 1;
            if idx[d] < k {
                done = false;
                break;
            }
            idx[d] = 0;
        }
        if done {
            break;
        }
    }
}

/// Build the fourth-order Taylor expansion of `psi_s` at the isotropic state.
///
/// Requires mean-free constraints and the Shannon entropy (the derivative
/// tensors below are specific to it). The expansion reads
///
/// ```text
/// D3_{i1 i2 i3} = -V V V M^3
/// D4 = [three V^5 M^3 M^3 pairings] - V^4 (M^4 - three M^2 M^2 pairings)
/// ```
///
/// with every tensor evaluated at the uniform density.
pub fn taylor4(space: &StateSpace, constraints: &ConstraintSet, entropy: &crate::EntropyFunction) -> Result<TaylorQuartic> {
    if !entropy.is_shannon() {
        return Err(Error::Precondition(
            "the fourth-order expansion is implemented for the Shannon entropy only".into(),
        ));
    }
    let k = constraints.k();
    let scale = constraints.sup_norms().iter().cloned().fold(1.0, f64::max);
    for i in 0..k {
        let mean = space.integrate(|j| constraints.values()[(i, j)]);
        if mean.abs() > 1e-8 * scale * space.total_mass() {
            return Err(Error::Precondition(format!(
                "constraint {i} is not mean-free (integral {mean:e}); orthonormalize or centre it first"
            )));
        }
    }
    let mass = space.total_mass();
    let uniform = Density { values: vec![1.0 / mass; space.n_nodes()], space };
    let m2 = moment_tensor(2, &uniform, constraints)?;
    let m3 = moment_tensor(3, &uniform, constraints)?;
    let m4 = moment_tensor(4, &uniform, constraints)?;
    let m2m = m2.as_matrix()?;
    let v = m2m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("M^2(0) is singular; constraints are dependent".into()))?;

    // psi_s(0) = mu(X) phi(1 / mu(X)) -- for Shannon this is -ln mu(X).
    let constant = mass * entropy.phi(1.0 / mass)?;

    // Third derivative: -V_{i a1} V_{j a2} V_{l a3} M^3_{a1 a2 a3}.
    let mut cubic = vec![0.0; k.pow(3)];
    for i in 0..k {
        for j in 0..k {
            for l in 0..k {
                let mut sum = 0.0;
                for a1 in 0..k {
                    for a2 in 0..k {
                        for a3 in 0..k {
                            sum += v[(i, a1)] * v[(j, a2)] * v[(l, a3)] * m3.get(&[a1, a2, a3]);
                        }
                    }
                }
                cubic[(i * k + j) * k + l] = -sum;
            }
        }
    }

    // Fourth derivative: three M^3 x M^3 pairings through an extra V, minus
    // the bracketed M^4 term.
    let mut quartic = vec![0.0; k.pow(4)];
    for i1 in 0..k {
        for i2 in 0..k {
            for i3 in 0..k {
                for i4 in 0..k {
                    let mut m3m3 = 0.0;
                    for a1 in 0..k {
                        for a2 in 0..k {
                            for a3 in 0..k {
                                for b1 in 0..k {
                                    for b2 in 0..k {
                                        for b3 in 0..k {
                                            let mm = m3.get(&[a1, a2, a3]) * m3.get(&[b1, b2, b3]);
                                            m3m3 += v[(i1, b1)]
                                                * v[(i2, a2)]
                                                * v[(i3, a3)]
                                                * v[(i4, b3)]
                                                * v[(a1, b2)]
                                                * mm;
                                            m3m3 += v[(i1, a1)]
                                                * v[(i2, b1)]
                                                * v[(i3, a3)]
                                                * v[(i4, b3)]
                                                * v[(a2, b2)]
                                                * mm;
                                            m3m3 += v[(i1, a1)]
                                                * v[(i2, a2)]
                                                * v[(i3, b1)]
                                                * v[(i4, b3)]
                                                * v[(a3, b2)]
                                                * mm;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let mut bracket = 0.0;
                    for a1 in 0..k {
                        for a2 in 0..k {
                            for a3 in 0..k {
                                for a4 in 0..k {
                                    let inner = m4.get(&[a1, a2, a3, a4])
                                        - m2.get(&[a1, a2]) * m2.get(&[a3, a4])
                                        - m2.get(&[a1, a3]) * m2.get(&[a2, a4])
                                        - m2.get(&[a1, a4]) * m2.get(&[a2, a3]);
                                    bracket +=
                                        v[(i1, a1)] * v[(i2, a2)] * v[(i3, a3)] * v[(i4, a4)] * inner;
                                }
                            }
                        }
                    }
                    quartic[((i1 * k + i2) * k + i3) * k + i4] = m3m3 - bracket;
                }
            }
        }
    }

    Ok(TaylorQuartic {
        constant,
        quadratic: v,
        cubic: MomentTensor::from_raw(3, k, cubic),
        quartic: MomentTensor::from_raw(4, k, quartic),
    })
}

/// Shape diagnostics for a Taylor quartic.
#[derive(Debug, Clone)]
pub struct ShapeReport {
    pub coercive: bool,
    /// Eigenvalues of the quartic form written as a bilinear form in the
    /// squared variables (`k = 2` with vanishing odd cross terms only).
    pub quartic_form_eigenvalues: Option<Vec<f64>>,
    /// Hessian eigenvalues at the requested sample points.
    pub hessian_eigenvalues: Vec<(DVector<f64>, Vec<f64>)>,
    /// First sampled point whose Hessian has a negative eigenvalue.
    pub nonconvexity_witness: Option<(DVector<f64>, f64)>,
}

/// Inspect coercivity and convexity of a quartic on a grid of sample points.
pub fn quartic_shape_report(q: &TaylorQuartic, sample_points: &[DVector<f64>]) -> ShapeReport {
    let k = q.dims();

    // Coercivity of the leading form: minimum over unit directions.
    let mut min_leading = f64::INFINITY;
    let dirs = crate::numeric::unit_directions(k, 512);
    for u in &dirs {
        min_leading = min_leading.min(q.quartic.apply(u));
    }
    if k == 2 {
        // Polish the circle minimum.
        let f = |t: f64| {
            let u = DVector::from_vec(vec![t.cos(), t.sin()]);
            -q.quartic.apply(&u)
        };
        let (_, neg) = crate::numeric::scan_golden_max(f, 0.0, 2.0 * std::f64::consts::PI, 720, 1e-12);
        min_leading = min_leading.min(-neg);
    }
    let coercive = min_leading > 0.0;

    let quartic_form_eigenvalues = if k == 2 {
        let c40 = q.quartic.get(&[0, 0, 0, 0]) / 24.0;
        let c04 = q.quartic.get(&[1, 1, 1, 1]) / 24.0;
        let c22 = q.quartic.get(&[0, 0, 1, 1]) / 4.0;
        let c31 = q.quartic.get(&[0, 0, 0, 1]) / 6.0;
        let c13 = q.quartic.get(&[0, 1, 1, 1]) / 6.0;
        if c31.abs() <= 1e-9 && c13.abs() <= 1e-9 {
            let m = DMatrix::from_row_slice(2, 2, &[c40, 0.5 * c22, 0.5 * c22, c04]);
            let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().cloned().collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            Some(eig)
        } else {
            None
        }
    } else {
        None
    };

    let mut hessian_eigenvalues = Vec::with_capacity(sample_points.len());
    let mut nonconvexity_witness = None;
    for p in sample_points {
        let h = q.hessian(p);
        let mut eig: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().cloned().collect();
        eig.sort_by(|a, b| a.total_cmp(b));
        if nonconvexity_witness.is_none() && eig[0] < -1e-10 {
            nonconvexity_witness = Some((p.clone(), eig[0]));
        }
        hessian_eigenvalues.push((p.clone(), eig));
    }
    ShapeReport { coercive, quartic_form_eigenvalues, hessian_eigenvalues, nonconvexity_witness }
}

/// Yosida-Moreau envelope value at one point.
#[derive(Debug, Clone)]
pub struct YosidaValue {
    pub j: f64,
    /// `psi^J(b)`.
    pub value: f64,
    /// Proximal point `G_J(b) = b - lambda / J`, the minimiser inside `Q`.
    pub prox_point: DVector<f64>,
    /// `grad psi^J(b) = J (b - G_J(b)) = lambda`.
    pub gradient: DVector<f64>,
    pub iterations: usize,
}

/// Evaluate the Yosida-Moreau envelope
/// `psi^J(b) = min_{b' in Q} psi_s(b') + (J/2) |b' - b|^2`
/// through its dual form: the plain dual objective minus
/// `|lambda|^2 / (2J)`. Defined (and finite) for every real `b`.
pub fn yosida(model: &Model, b: &DVector<f64>, j: f64, opts: &SolveOptions) -> Result<YosidaValue> {
    if !(j > 0.0) {
        return Err(Error::InvalidArgument(format!("Yosida parameter must be positive, got {j}")));
    }
    let mut penalised = opts.clone();
    penalised.proximal_penalty = Some(j);
    penalised.lambda_cap = f64::INFINITY;
    let sol = dual_solver::solve_model(model, b, &penalised)?;
    let prox_point = b - &sol.lambda / j;
    Ok(YosidaValue {
        j,
        value: sol.psi_value,
        prox_point,
        gradient: sol.lambda.clone(),
        iterations: sol.iterations,
    })
}

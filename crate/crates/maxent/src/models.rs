//! Built-in model definitions: the discriminant-table interval examples, the
//! McMillan smectic-A model and the sphere chain.

use std::sync::Arc;

use nalgebra::DVector;

use crate::entropy::EntropyFunction;
use crate::state_space::{self, AnalyticEval, ConstraintSet, StateSpace};
use crate::{Error, Model, Result};

/// Moment sets known in closed form, attached to built-ins where available.
#[derive(Debug, Clone)]
pub enum ClosedFormQ {
    /// Open interval `(lo, hi)` (single constraint).
    Interval { lo: f64, hi: f64 },
    /// Open convex polygon given by its vertices in order (two constraints).
    Polygon { vertices: Vec<[f64; 2]> },
    /// Open ball `|b| < radius`.
    Ball { radius: f64 },
}

impl ClosedFormQ {
    /// Strict membership test.
    pub fn contains(&self, b: &DVector<f64>) -> bool {
        match self {
            ClosedFormQ::Interval { lo, hi } => b[0] > *lo && b[0] < *hi,
            ClosedFormQ::Ball { radius } => b.norm() < *radius,
            ClosedFormQ::Polygon { vertices } => {
                let n = vertices.len();
                for i in 0..n {
                    let p = vertices[i];
                    let q = vertices[(i + 1) % n];
                    // Interior lies to the left of each directed edge
                    // (vertices in counter-clockwise order).
                    let cross = (q[0] - p[0]) * (b[1] - p[1]) - (q[1] - p[1]) * (b[0] - p[0]);
                    if cross <= 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }

    /// Euclidean distance from `b` to the boundary (valid inside or outside).
    pub fn boundary_distance(&self, b: &DVector<f64>) -> f64 {
        match self {
            ClosedFormQ::Interval { lo, hi } => (b[0] - lo).abs().min((b[0] - hi).abs()),
            ClosedFormQ::Ball { radius } => (b.norm() - radius).abs(),
            ClosedFormQ::Polygon { vertices } => {
                let n = vertices.len();
                let mut best = f64::INFINITY;
                for i in 0..n {
                    let p = vertices[i];
                    let q = vertices[(i + 1) % n];
                    best = best.min(point_segment_distance([b[0], b[1]], p, q));
                }
                best
            }
        }
    }
}

fn point_segment_distance(x: [f64; 2], p: [f64; 2], q: [f64; 2]) -> f64 {
    let dx = q[0] - p[0];
    let dy = q[1] - p[1];
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((x[0] - p[0]) * dx + (x[1] - p[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let cx = p[0] + t * dx;
    let cy = p[1] + t * dy;
    ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt()
}

/// A named model together with its closed-form moment set when one is known.
#[derive(Clone)]
pub struct BuiltinModel {
    pub name: String,
    pub model: Model,
    pub closed_form_q: Option<ClosedFormQ>,
}

impl std::fmt::Debug for BuiltinModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltinModel").field("name", &self.name).finish()
    }
}

/// McMillan constraints `a_1 = P_2(cos theta)` and
/// `a_2 = P_2(cos theta) cos(2 pi x)` on a reduced-coordinate space.
pub fn mcmillan_constraints(space: &StateSpace) -> Result<ConstraintSet> {
    let eval: AnalyticEval = Arc::new(|p: &[f64], out: &mut [f64]| {
        let c = p[0].cos();
        let p2 = 0.5 * (3.0 * c * c - 1.0);
        out[0] = p2;
        out[1] = p2 * (2.0 * std::f64::consts::PI * p[1]).cos();
    });
    ConstraintSet::from_closure(space, 2, eval)
}

/// Cartesian components of the sphere point as constraints.
pub fn sphere_constraints(space: &StateSpace) -> Result<ConstraintSet> {
    let eval: AnalyticEval = Arc::new(|p: &[f64], out: &mut [f64]| {
        let (st, ct) = p[0].sin_cos();
        let (sp, cp) = p[1].sin_cos();
        out[0] = st * cp;
        out[1] = st * sp;
        out[2] = ct;
    });
    ConstraintSet::from_closure(space, 3, eval)
}

/// Polynomial constraint `a(x) = sum_j coeffs[j] x^j` on the interval.
pub fn polynomial_constraints(space: &StateSpace, polys: &[Vec<f64>]) -> Result<ConstraintSet> {
    if polys.is_empty() {
        return Err(Error::Config("need at least one polynomial".into()));
    }
    let polys: Vec<Vec<f64>> = polys.to_vec();
    let k = polys.len();
    let eval: AnalyticEval = Arc::new(move |p: &[f64], out: &mut [f64]| {
        for (o, poly) in out.iter_mut().zip(&polys) {
            // Horner evaluation.
            *o = poly.iter().rev().fold(0.0, |acc, &c| acc * p[0] + c);
        }
    });
    ConstraintSet::from_closure(space, k, eval)
}

/// The two-order-parameter McMillan model with measure `2 pi sin(theta)
/// dtheta dx` (total mass `4 pi`) and its closed-form moment set
/// `{ S in (-1/2, 1), |sigma| < (S + 2)/3 }`.
pub fn mcmillan(n_theta: usize, n_x: usize) -> Result<BuiltinModel> {
    let space = state_space::build_mcmillan_space(n_theta, n_x)?;
    let constraints = mcmillan_constraints(&space)?;
    Ok(BuiltinModel {
        name: "mcmillan".into(),
        model: Model::new(space, constraints, EntropyFunction::shannon()),
        closed_form_q: Some(ClosedFormQ::Polygon {
            vertices: vec![[1.0, -1.0], [1.0, 1.0], [-0.5, 0.5], [-0.5, -0.5]],
        }),
    })
}

/// Coefficients (ascending powers) of the four discriminant-table
/// constraints.
pub fn table_polynomial(index: usize) -> Result<Vec<f64>> {
    match index {
        1 => Ok(vec![0.0, 1.0]),
        2 => Ok(vec![7.0 / 15.0, 3.0, -2.0, -7.0, 1.0]),
        3 => Ok(vec![1.0 / 3.0, 1.0, -1.0, 7.0]),
        4 => Ok(vec![0.0, 0.0, 0.0, 1.0]),
        _ => Err(Error::InvalidArgument(format!("table model index must be 1..=4, got {index}"))),
    }
}

/// One of the four interval examples (`index` in `1..=4`) on the normalised
/// measure `dx / 2`.
pub fn table_model(index: usize, order: usize) -> Result<BuiltinModel> {
    let space = state_space::build_interval_space(order, true)?;
    let coeffs = table_polynomial(index)?;
    let constraints = polynomial_constraints(&space, &[coeffs])?;
    let closed_form_q = if index == 1 {
        // a(x) = x generates exactly (-1, 1).
        Some(ClosedFormQ::Interval { lo: -1.0, hi: 1.0 })
    } else {
        None
    };
    Ok(BuiltinModel {
        name: format!("table{index}"),
        model: Model::new(space, constraints, EntropyFunction::shannon()),
        closed_form_q,
    })
}

/// All four table models.
pub fn table_models(order: usize) -> Result<Vec<BuiltinModel>> {
    (1..=4).map(|i| table_model(i, order)).collect()
}

/// Sphere-chain model: `X = S^2`, `a_i(p) = p_i`, `Q` the open unit ball.
pub fn sphere_chain(n_quad: usize) -> Result<BuiltinModel> {
    if n_quad < 4 {
        return Err(Error::Config(format!("sphere-chain quadrature must be >= 4, got {n_quad}")));
    }
    let space = state_space::build_sphere2_space(n_quad, 2 * n_quad)?;
    let constraints = sphere_constraints(&space)?;
    Ok(BuiltinModel {
        name: "sphere-chain".into(),
        model: Model::new(space, constraints, EntropyFunction::shannon()),
        closed_form_q: Some(ClosedFormQ::Ball { radius: 1.0 }),
    })
}

/// Resolve a CLI-style model name.
pub fn by_name(name: &str, order_hint: Option<usize>) -> Result<BuiltinModel> {
    match name {
        "mcmillan" => {
            let n = order_hint.unwrap_or(48);
            mcmillan(n, n)
        }
        "table1" | "table2" | "table3" | "table4" => {
            let index = name.as_bytes()[5] - b'0';
            table_model(index as usize, order_hint.unwrap_or(64))
        }
        "sphere-chain" => sphere_chain(order_hint.unwrap_or(48)),
        other => Err(Error::Config(format!(
            "unknown model '{other}' (expected mcmillan | table1..table4 | sphere-chain)"
        ))),
    }
}

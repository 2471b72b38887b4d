//! Grid sweeps with warm-start continuation and deterministic output.
//!
//! Rows are dispatched to a worker pool; the first column is solved first as
//! a sequential spine so every row can warm-start from the row above, and
//! within a row each point warm-starts from its left neighbour. Output is
//! buffered per row and written in row order, so the bytes do not depend on
//! the thread count.

use std::io::Write;

use maxent::dual_solver::{self, SolveOptions};
use maxent::moment_geometry::Membership;
use maxent::Model;
use nalgebra::DVector;
use rayon::prelude::*;

/// One axis of a rectangular moment-space grid.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn value(&self, i: usize) -> f64 {
        if self.count <= 1 {
            return self.min;
        }
        self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.count >= 2, "grid axes need at least 2 points");
        anyhow::ensure!(self.min < self.max, "grid axis must satisfy min < max");
        Ok(())
    }
}

/// Rectangular grid specification; `band` excludes points whose distance to
/// the boundary of `Q` falls below it.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    pub band: f64,
}

impl GridSpec {
    pub fn n_rows(&self) -> usize {
        if self.axes.len() >= 2 {
            self.axes[1].count
        } else {
            1
        }
    }

    pub fn n_cols(&self) -> usize {
        self.axes[0].count
    }

    pub fn point(&self, row: usize, col: usize) -> DVector<f64> {
        let mut b = DVector::zeros(self.axes.len());
        b[0] = self.axes[0].value(col);
        if self.axes.len() >= 2 {
            b[1] = self.axes[1].value(row);
        }
        b
    }
}

/// Outcome of one grid point.
#[derive(Debug, Clone)]
pub enum PointResult {
    /// Outside `Q`: emitted with the `inf` sentinel.
    Outside,
    /// Inside but within the boundary band (or indeterminate): not emitted.
    Excluded,
    Solved { psi: f64, lambda: DVector<f64>, converged: bool },
}

pub struct GridOutcome {
    /// Row-major `(point, result)` in emission order.
    pub rows: Vec<(DVector<f64>, PointResult)>,
    pub excluded: usize,
    pub failed: usize,
}

/// Sweep `psi_s` (or, with `penalty = Some(j)`, the Yosida envelope `psi^J`)
/// over the grid. The envelope is defined on all of moment space, so no
/// membership test or band exclusion applies there.
pub fn sweep(
    model: &Model,
    spec: &GridSpec,
    opts: &SolveOptions,
    penalty: Option<f64>,
    n_directions: usize,
) -> anyhow::Result<GridOutcome> {
    let geometry = model.geometry();
    let base = {
        let mut o = opts.clone();
        o.proximal_penalty = penalty;
        if penalty.is_some() {
            o.lambda_cap = f64::INFINITY;
        }
        o
    };
    let classify = |b: &DVector<f64>| -> anyhow::Result<Option<PointResult>> {
        if penalty.is_some() {
            return Ok(None); // envelope: solve everywhere
        }
        match geometry.membership(b, n_directions)? {
            Membership::Inside { margin, .. } if margin > spec.band => Ok(None),
            Membership::Inside { .. } | Membership::Indeterminate { .. } => Ok(Some(PointResult::Excluded)),
            Membership::Outside { .. } => Ok(Some(PointResult::Outside)),
        }
    };
    let solve_point = |b: &DVector<f64>, warm: &Option<(f64, DVector<f64>)>| -> PointResult {
        let mut o = base.clone();
        if let Some((a, l)) = warm {
            o.init = Some((*a, l.clone()));
        }
        match dual_solver::solve_model(model, b, &o) {
            Ok(sol) => PointResult::Solved { psi: sol.psi_value, lambda: sol.lambda, converged: sol.converged },
            Err(maxent::Error::UnattainedDual { .. }) => PointResult::Outside,
            Err(maxent::Error::NonConvergence { best, .. }) => {
                PointResult::Solved { psi: best.psi_value, lambda: best.lambda.clone(), converged: false }
            }
            Err(_) => PointResult::Outside,
        }
    };

    let n_rows = spec.n_rows();
    let n_cols = spec.n_cols();

    // Sequential spine down the first column: each row's warm start.
    let mut spine: Vec<Option<(f64, DVector<f64>)>> = Vec::with_capacity(n_rows);
    let mut carry: Option<(f64, DVector<f64>)> = None;
    for row in 0..n_rows {
        let b = spec.point(row, 0);
        if classify(&b)?.is_none() {
            if let PointResult::Solved { lambda, converged: true, .. } = solve_point(&b, &carry) {
                let alpha = dual_solver::alpha_for_lambda(&model.space, &model.constraints, &model.entropy, &lambda)
                    .unwrap_or(0.0);
                carry = Some((alpha, lambda));
            }
        }
        spine.push(carry.clone());
    }

    // Rows in parallel, each sequential with in-row warm starts.
    let row_results: Vec<anyhow::Result<Vec<(DVector<f64>, PointResult)>>> = (0..n_rows)
        .into_par_iter()
        .map(|row| {
            let mut out = Vec::with_capacity(n_cols);
            let mut warm = spine[row].clone();
            for col in 0..n_cols {
                let b = spec.point(row, col);
                let result = match classify(&b)? {
                    Some(r) => r,
                    None => {
                        let r = solve_point(&b, &warm);
                        if let PointResult::Solved { lambda, converged: true, .. } = &r {
                            let alpha = dual_solver::alpha_for_lambda(
                                &model.space,
                                &model.constraints,
                                &model.entropy,
                                lambda,
                            )
                            .unwrap_or(0.0);
                            warm = Some((alpha, lambda.clone()));
                        }
                        r
                    }
                };
                out.push((b, result));
            }
            Ok(out)
        })
        .collect();

    let mut rows = Vec::with_capacity(n_rows * n_cols);
    let mut excluded = 0;
    let mut failed = 0;
    for row in row_results {
        for (b, r) in row? {
            match &r {
                PointResult::Excluded => excluded += 1,
                PointResult::Solved { converged: false, .. } => failed += 1,
                _ => {}
            }
            rows.push((b, r));
        }
    }
    Ok(GridOutcome { rows, excluded, failed })
}

/// Shortest-roundtrip float formatting with the portable `inf` sentinel.
pub fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Write the wide-format grid CSV: `b_1..b_k, psi, lambda_1..lambda_k,
/// converged`, with excluded points counted in a footer comment.
pub fn write_grid_csv<W: Write>(w: &mut W, k: usize, value_name: &str, outcome: &GridOutcome) -> anyhow::Result<()> {
    let mut header: Vec<String> = (1..=k).map(|i| format!("b_{i}")).collect();
    header.push(value_name.into());
    header.extend((1..=k).map(|i| format!("lambda_{i}")));
    header.push("converged".into());
    writeln!(w, "{}", header.join(","))?;
    for (b, r) in &outcome.rows {
        match r {
            PointResult::Excluded => {}
            PointResult::Outside => {
                let mut row: Vec<String> = b.iter().map(|v| fmt_value(*v)).collect();
                row.push("inf".into());
                row.extend(std::iter::repeat_n("inf".to_string(), k));
                row.push("false".into());
                writeln!(w, "{}", row.join(","))?;
            }
            PointResult::Solved { psi, lambda, converged } => {
                let mut row: Vec<String> = b.iter().map(|v| fmt_value(*v)).collect();
                row.push(fmt_value(*psi));
                row.extend(lambda.iter().map(|v| fmt_value(*v)));
                row.push(converged.to_string());
                writeln!(w, "{}", row.join(","))?;
            }
        }
    }
    writeln!(w, "# excluded: {}", outcome.excluded)?;
    Ok(())
}

/// Write the long-format contour CSV (`b..., value, kind`), one kind per
/// file; excluded points are skipped and counted in the footer.
pub fn write_contour_csv<W: Write>(
    w: &mut W,
    k: usize,
    kind: &str,
    rows: &[(DVector<f64>, Option<f64>)],
) -> anyhow::Result<()> {
    let mut header: Vec<String> = (1..=k).map(|i| format!("b_{i}")).collect();
    header.push("value".into());
    header.push("kind".into());
    writeln!(w, "{}", header.join(","))?;
    let mut excluded = 0;
    for (b, v) in rows {
        match v {
            None => excluded += 1,
            Some(v) => {
                let mut row: Vec<String> = b.iter().map(|x| fmt_value(*x)).collect();
                row.push(fmt_value(*v));
                row.push(kind.into());
                writeln!(w, "{}", row.join(","))?;
            }
        }
    }
    writeln!(w, "# excluded: {excluded}")?;
    Ok(())
}

//! Structured model descriptions: the `[space]` / `[constraints]` /
//! `[entropy]` / `[solver]` TOML format shared by the CLI and tests.
//!
//! Tabulated inputs are plain CSV: a node file with one coordinate column
//! per dimension plus a trailing weight column, a constraint file with one
//! column per function (rows matching the node file), and an entropy table
//! with `(x, phi(x))` rows. A single header row is tolerated and skipped.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::dual_solver::SolveOptions;
use crate::entropy::EntropyFunction;
use crate::models::{self, ClosedFormQ};
use crate::state_space::{self, ConstraintSet};
use crate::{Error, Model, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub space: SpaceSection,
    pub constraints: ConstraintsSection,
    #[serde(default)]
    pub entropy: EntropySection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub kind: String,
    /// Quadrature order for interval spaces.
    pub order: Option<usize>,
    #[serde(default = "default_true")]
    pub normalized: bool,
    pub n_theta: Option<usize>,
    pub n_x: Option<usize>,
    pub n_polar: Option<usize>,
    pub n_azimuth: Option<usize>,
    /// Node/weight CSV for custom spaces.
    pub node_file: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    /// monomial | polynomial | mcmillan | sphere | tabulated
    pub family: String,
    /// Monomial degrees, one constraint per entry.
    pub degrees: Option<Vec<u32>>,
    /// Polynomial coefficient rows, ascending powers.
    pub coefficients: Option<Vec<Vec<f64>>>,
    /// CSV with one column per constraint for `family = "tabulated"`.
    pub file: Option<PathBuf>,
    /// Orthonormalize after construction.
    #[serde(default)]
    pub orthonormalize: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySection {
    /// shannon | inverse_square | custom-table
    pub kind: String,
    pub file: Option<PathBuf>,
}

impl Default for EntropySection {
    fn default() -> Self {
        Self { kind: "shannon".into(), file: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub grad_tol: Option<f64>,
    pub max_iterations: Option<usize>,
    pub lambda_cap: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { grad_tol: None, max_iterations: None, lambda_cap: None }
    }
}

impl ModelConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("failed to parse model config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_str(&text)?;
        // File references are resolved relative to the config location.
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(f) = &cfg.space.node_file {
            cfg.space.node_file = Some(base.join(f));
        }
        if let Some(f) = &cfg.constraints.file {
            cfg.constraints.file = Some(base.join(f));
        }
        if let Some(f) = &cfg.entropy.file {
            cfg.entropy.file = Some(base.join(f));
        }
        Ok(cfg)
    }

    /// Solver options with the config's overrides applied.
    pub fn solve_options(&self) -> SolveOptions {
        let mut opts = SolveOptions::default();
        if let Some(t) = self.solver.grad_tol {
            opts.grad_tol = t;
        }
        if let Some(n) = self.solver.max_iterations {
            opts.max_iterations = n;
        }
        if let Some(c) = self.solver.lambda_cap {
            opts.lambda_cap = c;
        }
        opts
    }

    /// Construct the model (and closed-form moment set when one is known).
    pub fn build(&self) -> Result<(Model, Option<ClosedFormQ>)> {
        let space = match self.space.kind.as_str() {
            "interval" => {
                let order = self.space.order.unwrap_or(64);
                state_space::build_interval_space(order, self.space.normalized)?
            }
            "mcmillan" => {
                let nt = self.space.n_theta.unwrap_or(48);
                let nx = self.space.n_x.unwrap_or(48);
                state_space::build_mcmillan_space(nt, nx)?
            }
            "sphere2" => {
                let np = self.space.n_polar.unwrap_or(48);
                let na = self.space.n_azimuth.unwrap_or(2 * np);
                state_space::build_sphere2_space(np, na)?
            }
            "custom" => {
                let path = self
                    .space
                    .node_file
                    .as_ref()
                    .ok_or_else(|| Error::Config("custom space requires node_file".into()))?;
                let rows = read_csv(path)?;
                if rows.is_empty() || rows[0].len() < 2 {
                    return Err(Error::Config("node file needs coordinate columns plus a weight column".into()));
                }
                let dim = rows[0].len() - 1;
                let mut points = Vec::with_capacity(rows.len() * dim);
                let mut weights = Vec::with_capacity(rows.len());
                for row in &rows {
                    if row.len() != dim + 1 {
                        return Err(Error::Config("ragged node file".into()));
                    }
                    points.extend_from_slice(&row[..dim]);
                    weights.push(row[dim]);
                }
                state_space::build_custom_space(dim, points, weights, None)?
            }
            other => return Err(Error::Config(format!("unknown space kind '{other}'"))),
        };

        let mut closed_q = None;
        let constraints = match self.constraints.family.as_str() {
            "monomial" => {
                let degrees = self
                    .constraints
                    .degrees
                    .clone()
                    .ok_or_else(|| Error::Config("monomial family requires degrees".into()))?;
                let polys: Vec<Vec<f64>> = degrees
                    .iter()
                    .map(|&d| {
                        let mut c = vec![0.0; d as usize + 1];
                        c[d as usize] = 1.0;
                        c
                    })
                    .collect();
                if degrees == [1] {
                    closed_q = Some(ClosedFormQ::Interval { lo: -1.0, hi: 1.0 });
                }
                models::polynomial_constraints(&space, &polys)?
            }
            "polynomial" => {
                let coeffs = self
                    .constraints
                    .coefficients
                    .clone()
                    .ok_or_else(|| Error::Config("polynomial family requires coefficients".into()))?;
                models::polynomial_constraints(&space, &coeffs)?
            }
            "mcmillan" => {
                closed_q = Some(ClosedFormQ::Polygon {
                    vertices: vec![[1.0, -1.0], [1.0, 1.0], [-0.5, 0.5], [-0.5, -0.5]],
                });
                models::mcmillan_constraints(&space)?
            }
            "sphere" => {
                closed_q = Some(ClosedFormQ::Ball { radius: 1.0 });
                models::sphere_constraints(&space)?
            }
            "tabulated" => {
                let path = self
                    .constraints
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Config("tabulated constraints require a file".into()))?;
                let rows = read_csv(path)?;
                if rows.len() != space.n_nodes() {
                    return Err(Error::Config(format!(
                        "constraint table has {} rows but the space has {} nodes",
                        rows.len(),
                        space.n_nodes()
                    )));
                }
                let k = rows.first().map(Vec::len).unwrap_or(0);
                if k == 0 {
                    return Err(Error::Config("constraint table is empty".into()));
                }
                let mut values = DMatrix::zeros(k, rows.len());
                for (j, row) in rows.iter().enumerate() {
                    if row.len() != k {
                        return Err(Error::Config("ragged constraint table".into()));
                    }
                    for i in 0..k {
                        values[(i, j)] = row[i];
                    }
                }
                ConstraintSet::from_values(&space, values)?
            }
            other => return Err(Error::Config(format!("unknown constraint family '{other}'"))),
        };
        let constraints = if self.constraints.orthonormalize {
            closed_q = None; // the affine change of basis invalidates it
            state_space::orthonormalize(&constraints, &space)?
        } else {
            constraints
        };

        let entropy = match self.entropy.kind.as_str() {
            "shannon" => EntropyFunction::shannon(),
            "inverse_square" => EntropyFunction::inverse_square(),
            "custom-table" => {
                let path = self
                    .entropy
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Config("custom-table entropy requires a file".into()))?;
                let rows = read_csv(path)?;
                let mut xs = Vec::with_capacity(rows.len());
                let mut phis = Vec::with_capacity(rows.len());
                for row in &rows {
                    if row.len() != 2 {
                        return Err(Error::Config("entropy table needs exactly two columns".into()));
                    }
                    xs.push(row[0]);
                    phis.push(row[1]);
                }
                EntropyFunction::from_table(&xs, &phis)?
            }
            other => return Err(Error::Config(format!("unknown entropy kind '{other}'"))),
        };

        let model = Model::new(space, constraints, entropy);
        model.space.validate()?;
        Ok((model, closed_q))
    }
}

/// Parse a small numeric CSV; `#`-comments and one header row are tolerated.
fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(e) => {
                if lineno == 0 {
                    continue; // header row
                }
                return Err(Error::Config(format!(
                    "{}:{}: cannot parse '{line}': {e}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_and_builds_interval_model() {
        let cfg = ModelConfig::from_str(
            r#"
            [space]
            kind = "interval"
            order = 32
            normalized = true

            [constraints]
            family = "monomial"
            degrees = [1]

            [entropy]
            kind = "shannon"

            [solver]
            grad_tol = 1e-9
            "#,
        )
        .unwrap();
        let (model, q) = cfg.build().unwrap();
        assert_eq!(model.k(), 1);
        assert_relative_eq!(model.space.total_mass(), 1.0, max_relative = 1e-14);
        assert!(matches!(q, Some(ClosedFormQ::Interval { .. })));
        assert_eq!(cfg.solve_options().grad_tol, 1e-9);
    }

    #[test]
    fn parses_mcmillan_and_polynomials() {
        let cfg = ModelConfig::from_str(
            r#"
            [space]
            kind = "mcmillan"
            n_theta = 16
            n_x = 16

            [constraints]
            family = "mcmillan"
            "#,
        )
        .unwrap();
        let (model, q) = cfg.build().unwrap();
        assert_eq!(model.k(), 2);
        assert!(matches!(q, Some(ClosedFormQ::Polygon { .. })));

        let cfg = ModelConfig::from_str(
            r#"
            [space]
            kind = "interval"
            order = 24

            [constraints]
            family = "polynomial"
            coefficients = [[0.3333333333333333, 1.0, -1.0, 7.0]]
            "#,
        )
        .unwrap();
        let (model, _) = cfg.build().unwrap();
        let m2 = model.space.integrate(|j| model.constraints.values()[(0, j)].powi(2));
        assert_relative_eq!(m2, 92.0 / 9.0, max_relative = 1e-9);
    }

    #[test]
    fn orthonormalize_flag_applies() {
        let cfg = ModelConfig::from_str(
            r#"
            [space]
            kind = "interval"
            order = 32

            [constraints]
            family = "monomial"
            degrees = [1]
            orthonormalize = true
            "#,
        )
        .unwrap();
        let (model, q) = cfg.build().unwrap();
        assert!(q.is_none());
        let norm = model.space.integrate(|j| model.constraints.values()[(0, j)].powi(2));
        assert_relative_eq!(norm, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn tabulated_space_and_constraints_roundtrip() {
        let dir = std::env::temp_dir().join(format!("maxent-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        // Three-node toy space with weights summing to one.
        std::fs::write(dir.join("nodes.csv"), "x,w\n-0.5,0.25\n0.0,0.5\n0.5,0.25\n").unwrap();
        std::fs::write(dir.join("a.csv"), "a1\n-0.5\n0.0\n0.5\n").unwrap();
        let cfg_path = dir.join("model.toml");
        std::fs::write(
            &cfg_path,
            r#"
            [space]
            kind = "custom"
            node_file = "nodes.csv"

            [constraints]
            family = "tabulated"
            file = "a.csv"
            "#,
        )
        .unwrap();
        let cfg = ModelConfig::from_path(&cfg_path).unwrap();
        let (model, _) = cfg.build().unwrap();
        assert_eq!(model.space.n_nodes(), 3);
        assert_eq!(model.k(), 1);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_unknown_kinds() {
        let cfg = ModelConfig::from_str(
            r#"
            [space]
            kind = "torus"

            [constraints]
            family = "monomial"
            degrees = [1]
            "#,
        )
        .unwrap();
        assert!(cfg.build().is_err());
        assert!(ModelConfig::from_str("[space]\nbogus = 1").is_err());
    }
}

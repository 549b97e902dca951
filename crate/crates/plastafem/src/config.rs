//! Plain-text problem configuration.
//!
//! A configuration file is a list of `key = value` lines; blank lines and
//! lines starting with `#` are skipped. Parsing collects every problem it
//! finds instead of stopping at the first, so one round trip shows all
//! mistakes. Recognized keys:
//!
//! | key                          | value                                   | default      |
//! |------------------------------|-----------------------------------------|--------------|
//! | `mesh`                       | `unit-square`, `l-shape`, or a file path| `unit-square`|
//! | `dirichlet`                  | segments `(x,y)-(x,y), ...`             | whole boundary, built-in meshes only |
//! | `mu` `lambda` `h_kin` `h_iso` `sigma_y` | material constants           | 1            |
//! | `f`                          | body force `(expr, expr)` in x1, x2     | `(0, 0)`     |
//! | `g`                          | traction `(expr, expr)`                 | `(0, 0)`     |
//! | `g_on`                       | segments carrying the traction          | all Neumann edges |
//! | `theta`                      | marking fraction in (0, 1]              | 0.5          |
//! | `max_levels`                 | adaptive levels                         | 30           |
//! | `max_dofs`                   | dof budget                              | 200000       |
//! | `eta_tol`                    | stop when the estimator drops below     | 0            |
//! | `solver_tol`                 | outer iteration tolerance               | 1e-10        |
//! | `linear_tol`                 | linear solver tolerance                 | 1e-12        |
//! | `max_outer`                  | outer iteration cap                     | 500          |
//! | `initial_uniform_refinements`| uniform refinements before level 0      | 0            |
//! | `out`                        | artifact directory                      | `out`        |
//!
//! Mesh files carry their own boundary tags, so combining `mesh = <path>`
//! with `dirichlet` is rejected.

use std::collections::HashSet;
use std::path::Path;

use crate::adaptivity::{Problem, StopCriteria};
use crate::expr::PairExpr;
use crate::fem::{Loads, Segment, VectorField};
use crate::mesh::{l_shape_mesh, unit_square_mesh, BoundaryKind, Mesh};
use crate::report::read_text_file;
use crate::solver::SolverParams;
use crate::tensor::{Material, Vec2};
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub enum MeshSpec {
    UnitSquare,
    LShape,
    File(String),
}

#[derive(Clone, Debug)]
pub struct Config {
    pub mesh: MeshSpec,
    pub dirichlet: Option<Vec<Segment>>,
    pub material: Material,
    pub body: VectorField,
    pub traction: VectorField,
    pub traction_on: Option<Vec<Segment>>,
    pub theta: f64,
    pub stop: StopCriteria,
    pub solver: SolverParams,
    pub initial_uniform_refinements: usize,
    pub out: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mesh: MeshSpec::UnitSquare,
            dirichlet: None,
            material: Material { mu: 1.0, lambda: 1.0, h_kin: 1.0, h_iso: 1.0, sigma_y: 1.0 },
            body: VectorField::zero(),
            traction: VectorField::zero(),
            traction_on: None,
            theta: 0.5,
            stop: StopCriteria::default(),
            solver: SolverParams::default(),
            initial_uniform_refinements: 0,
            out: "out".into(),
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Config, Error> {
        let mut cfg = Config::parse(&read_text_file(path)?)?;
        // a relative mesh path counts from the config file, not from
        // wherever the tool happens to be invoked
        if let MeshSpec::File(mesh_path) = &cfg.mesh {
            if Path::new(mesh_path).is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.mesh = MeshSpec::File(dir.join(mesh_path).display().to_string());
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Config, Error> {
        let mut cfg = Config::default();
        let mut issues: Vec<String> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();

        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                issues.push(format!("line {n}: expected 'key = value'"));
                continue;
            };
            let key = k.trim();
            let value = v.trim();
            if !seen.insert(key.to_string()) {
                issues.push(format!("line {n}: duplicate key '{key}'"));
                continue;
            }
            let mut float = |target: &mut f64| match value.parse::<f64>() {
                Ok(x) if x.is_finite() => *target = x,
                _ => issues.push(format!("line {n}: '{value}' is not a finite number")),
            };
            match key {
                "mesh" => {
                    cfg.mesh = match value {
                        "unit-square" => MeshSpec::UnitSquare,
                        "l-shape" => MeshSpec::LShape,
                        path => MeshSpec::File(path.to_string()),
                    }
                }
                "dirichlet" => match parse_segments(value) {
                    Ok(s) => cfg.dirichlet = Some(s),
                    Err(m) => issues.push(format!("line {n}: {m}")),
                },
                "g_on" => match parse_segments(value) {
                    Ok(s) => cfg.traction_on = Some(s),
                    Err(m) => issues.push(format!("line {n}: {m}")),
                },
                "f" => match PairExpr::parse(value) {
                    Ok(e) => cfg.body = VectorField::Expr(e),
                    Err(e) => issues.push(format!("line {n}: f: {} (offset {})", e.message, e.pos)),
                },
                "g" => match PairExpr::parse(value) {
                    Ok(e) => cfg.traction = VectorField::Expr(e),
                    Err(e) => issues.push(format!("line {n}: g: {} (offset {})", e.message, e.pos)),
                },
                "mu" => float(&mut cfg.material.mu),
                "lambda" => float(&mut cfg.material.lambda),
                "h_kin" => float(&mut cfg.material.h_kin),
                "h_iso" => float(&mut cfg.material.h_iso),
                "sigma_y" => float(&mut cfg.material.sigma_y),
                "theta" => float(&mut cfg.theta),
                "eta_tol" => float(&mut cfg.stop.eta_tol),
                "solver_tol" => float(&mut cfg.solver.tol),
                "linear_tol" => float(&mut cfg.solver.cg.rel_tol),
                "max_levels" => match value.parse::<u32>() {
                    Ok(x) => cfg.stop.max_levels = x,
                    Err(_) => issues.push(format!("line {n}: '{value}' is not a whole number")),
                },
                "max_dofs" => match value.parse::<usize>() {
                    Ok(x) => cfg.stop.max_dofs = x,
                    Err(_) => issues.push(format!("line {n}: '{value}' is not a whole number")),
                },
                "max_outer" => match value.parse::<usize>() {
                    Ok(x) => cfg.solver.max_outer = x,
                    Err(_) => issues.push(format!("line {n}: '{value}' is not a whole number")),
                },
                "initial_uniform_refinements" => match value.parse::<usize>() {
                    Ok(x) => cfg.initial_uniform_refinements = x,
                    Err(_) => issues.push(format!("line {n}: '{value}' is not a whole number")),
                },
                "out" => cfg.out = value.to_string(),
                _ => issues.push(format!("line {n}: unknown key '{key}'")),
            }
        }

        if matches!(cfg.mesh, MeshSpec::File(_)) && cfg.dirichlet.is_some() {
            issues.push(
                "dirichlet segments apply only to built-in meshes; \
                 mesh files carry their own boundary tags"
                    .into(),
            );
        }
        if let Err(m) = cfg.material.validate() {
            issues.push(m);
        }
        if !(cfg.theta > 0.0 && cfg.theta <= 1.0) {
            issues.push(format!("theta must lie in (0, 1], got {}", cfg.theta));
        }
        if !(cfg.solver.tol > 0.0) {
            issues.push(format!("solver_tol must be positive, got {}", cfg.solver.tol));
        }
        if !(cfg.solver.cg.rel_tol > 0.0) {
            issues.push(format!("linear_tol must be positive, got {}", cfg.solver.cg.rel_tol));
        }
        if !(cfg.stop.eta_tol >= 0.0) {
            issues.push(format!("eta_tol must be nonnegative, got {}", cfg.stop.eta_tol));
        }
        if cfg.stop.max_levels == 0 {
            issues.push("max_levels must be at least 1".into());
        }
        if cfg.solver.max_outer == 0 {
            issues.push("max_outer must be at least 1".into());
        }

        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config { issues })
        }
    }

    /// Builds the initial mesh: a tagged built-in or a mesh file, then any
    /// requested uniform refinements.
    pub fn build_mesh(&self) -> Result<Mesh, Error> {
        let tag = |a: Vec2, b: Vec2| match &self.dirichlet {
            None => BoundaryKind::Dirichlet,
            Some(segs) => {
                if segs.iter().any(|s| s.contains(a) && s.contains(b)) {
                    BoundaryKind::Dirichlet
                } else {
                    BoundaryKind::Neumann
                }
            }
        };
        let mut mesh = match &self.mesh {
            MeshSpec::UnitSquare => unit_square_mesh(tag)?,
            MeshSpec::LShape => l_shape_mesh(tag)?,
            MeshSpec::File(path) => {
                Mesh::from_text(&read_text_file(Path::new(path))?, path)?
            }
        };
        for _ in 0..self.initial_uniform_refinements {
            mesh = mesh.refine_uniform()?;
        }
        Ok(mesh)
    }

    pub fn problem(&self) -> Problem {
        Problem {
            material: self.material,
            loads: Loads {
                body: self.body.clone(),
                traction: self.traction.clone(),
                traction_on: self.traction_on.clone(),
            },
            theta: self.theta,
            solver: self.solver,
        }
    }
}

/// Parses `(x,y)-(x,y)` pairs separated by commas.
fn parse_segments(value: &str) -> Result<Vec<Segment>, String> {
    let mut segments = Vec::new();
    let mut rest = value.trim_start();
    loop {
        let (a, after_a) = parse_point(rest)?;
        let after_a = after_a.trim_start();
        let Some(after_dash) = after_a.strip_prefix('-') else {
            return Err(format!("expected '-' between segment endpoints near '{after_a}'"));
        };
        let (b, after_b) = parse_point(after_dash.trim_start())?;
        if a == b {
            return Err(format!("segment endpoints coincide at ({}, {})", a.x, a.y));
        }
        segments.push(Segment { a, b });
        rest = after_b.trim_start();
        if rest.is_empty() {
            return Ok(segments);
        }
        let Some(next) = rest.strip_prefix(',') else {
            return Err(format!("expected ',' between segments near '{rest}'"));
        };
        rest = next.trim_start();
    }
}

fn parse_point(s: &str) -> Result<(Vec2, &str), String> {
    let Some(open) = s.strip_prefix('(') else {
        return Err(format!("expected '(' to open a point near '{s}'"));
    };
    let Some(close) = open.find(')') else {
        return Err("missing ')' after point coordinates".into());
    };
    let inner = &open[..close];
    let Some((xs, ys)) = inner.split_once(',') else {
        return Err(format!("point '({inner})' needs two comma-separated coordinates"));
    };
    let x: f64 = xs
        .trim()
        .parse()
        .map_err(|_| format!("'{}' is not a number", xs.trim()))?;
    let y: f64 = ys
        .trim()
        .parse()
        .map_err(|_| format!("'{}' is not a number", ys.trim()))?;
    if !x.is_finite() || !y.is_finite() {
        return Err(format!("point ({x}, {y}) must be finite"));
    }
    Ok((Vec2::new(x, y), &open[close + 1..]))
}

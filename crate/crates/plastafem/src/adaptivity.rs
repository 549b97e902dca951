//! Marking and the adaptive solve-estimate-mark-refine loop.

use std::time::Instant;

use crate::estimator::{estimate, ErrorEstimate};
use crate::fem::{prolong_state, Discretization, Loads};
use crate::mesh::Mesh;
use crate::solver::{solve_vi, SolveResult, SolverParams};
use crate::tensor::Material;
use crate::Error;

/// One row of the per-level trace written to `trace.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub level: u32,
    pub n_elements: usize,
    pub n_dofs: usize,
    pub eta_sq: f64,
    pub energy: f64,
    pub n_marked: usize,
    pub wall_ms: u64,
}

/// Termination thresholds for the refinement loops. A run ends at the first
/// level whose estimator drops to `eta_tol` or below, after `max_levels`
/// levels, or when refining once more would push the dof count past
/// `max_dofs`.
#[derive(Clone, Copy, Debug)]
pub struct StopCriteria {
    pub max_levels: u32,
    pub max_dofs: usize,
    pub eta_tol: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria { max_levels: 30, max_dofs: 200_000, eta_tol: 0.0 }
    }
}

/// Everything that defines a single quasi-static step on a given mesh.
#[derive(Clone, Debug)]
pub struct Problem {
    pub material: Material,
    pub loads: Loads,
    pub theta: f64,
    pub solver: SolverParams,
}

/// Per-level artifacts kept for later verification.
pub struct LevelData {
    pub disc: Discretization,
    pub solve: SolveResult,
    pub estimate: ErrorEstimate,
    pub marked: Vec<usize>,
}

pub struct AdaptRun {
    pub levels: Vec<LevelData>,
    pub trace: Vec<TraceRecord>,
}

/// Bulk marking of minimal cardinality: selects the fewest elements whose
/// squared indicators sum to at least `theta` times the total. Elements are
/// taken in order of decreasing indicator, ties broken by ascending element
/// id. Both the total and the marked sum accumulate in element-id order, so
/// the returned set is deterministic and its sum, recomputed the same way,
/// meets the threshold. With `theta = 1` every element with a positive
/// indicator is marked.
pub fn dorfler_mark(eta_sq: &[f64], theta: f64) -> Result<Vec<usize>, Error> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "marking fraction must lie in (0, 1], got {theta}"
        )));
    }
    for (t, &v) in eta_sq.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "indicator of element {t} is {v}; expected a finite nonnegative value"
            )));
        }
    }
    let total: f64 = eta_sq.iter().sum();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    if theta == 1.0 {
        return Ok((0..eta_sq.len()).filter(|&t| eta_sq[t] > 0.0).collect());
    }

    let mut order: Vec<usize> = (0..eta_sq.len()).collect();
    order.sort_by(|&a, &b| {
        eta_sq[b].partial_cmp(&eta_sq[a]).expect("finite indicators").then(a.cmp(&b))
    });
    let n_positive = order.iter().filter(|&&t| eta_sq[t] > 0.0).count();
    let target = theta * total;

    let sorted_sum = |k: usize| -> f64 {
        let mut ids: Vec<usize> = order[..k].to_vec();
        ids.sort_unstable();
        ids.iter().map(|&t| eta_sq[t]).sum()
    };

    let mut running = 0.0;
    let mut k = 0;
    while k < n_positive && running < target {
        running += eta_sq[order[k]];
        k += 1;
    }
    // the running sum visits elements in selection order; re-check against
    // the id-ordered sum and extend if rounding lands it short
    while sorted_sum(k) < target && k < n_positive {
        k += 1;
    }
    let mut marked: Vec<usize> = order[..k].to_vec();
    marked.sort_unstable();
    Ok(marked)
}

/// Runs the adaptive loop from `mesh`, carrying the previous solution to
/// each refined mesh as the solver's starting point.
pub fn adapt_loop(mesh: Mesh, problem: &Problem, stop: &StopCriteria) -> Result<AdaptRun, Error> {
    run_loop(mesh, problem, stop, false)
}

/// Runs the same loop with uniform refinement; every element counts as
/// marked in the trace.
pub fn uniform_loop(mesh: Mesh, problem: &Problem, stop: &StopCriteria) -> Result<AdaptRun, Error> {
    run_loop(mesh, problem, stop, true)
}

fn run_loop(
    mesh: Mesh,
    problem: &Problem,
    stop: &StopCriteria,
    uniform: bool,
) -> Result<AdaptRun, Error> {
    if stop.max_levels == 0 {
        return Err(Error::InvalidArgument("at least one level is required".into()));
    }
    let mut levels: Vec<LevelData> = Vec::new();
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut disc = Discretization::new(mesh);
    let mut warm = None;

    loop {
        let started = Instant::now();
        let solve = solve_vi(&disc, &problem.material, &problem.loads, &problem.solver, warm.as_ref())?;
        let est = estimate(&disc, &problem.material, &problem.loads, &solve.state);
        let marked = if uniform {
            (0..disc.mesh.n_elements()).collect()
        } else {
            dorfler_mark(&est.eta_sq, problem.theta)?
        };
        trace.push(TraceRecord {
            level: levels.len() as u32,
            n_elements: disc.mesh.n_elements(),
            n_dofs: disc.n_dofs(),
            eta_sq: est.total_eta_sq,
            energy: solve.energy,
            n_marked: marked.len(),
            wall_ms: started.elapsed().as_millis() as u64,
        });

        let done = levels.len() as u32 + 1 >= stop.max_levels
            || est.total_eta_sq.sqrt() <= stop.eta_tol
            || marked.is_empty();
        levels.push(LevelData { disc, solve, estimate: est, marked });
        if done {
            break;
        }

        let last = levels.last().expect("level just pushed");
        let fine_mesh = last.disc.mesh.refine(&last.marked)?;
        let fine = Discretization::new(fine_mesh);
        if fine.n_dofs() > stop.max_dofs {
            break;
        }
        warm = Some(prolong_state(&last.disc, &last.solve.state, &fine)?);
        disc = fine;
    }

    Ok(AdaptRun { levels, trace })
}

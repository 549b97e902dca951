//! Runs a configured problem end to end and writes the artifacts.
//!
//! A run produces, inside the output directory:
//!
//! * `trace.csv`: one row per level with element, dof and marking counts,
//!   the squared estimator and the energy;
//! * `axiom_report.json`: the empirical axiom and rate report (skipped when
//!   the run is too short for it);
//! * `mesh_initial.svg`, `mesh_final.svg`: the first and last mesh;
//! * `rates.svg`: log-log decay of the estimator (and of the quasi-error
//!   when the report was computed).
//!
//! Verify mode instead runs the self-check battery and writes `verify.txt`.
//!
//! When a seed is given, wall-clock columns are written as zero, so reruns
//! with the same seed produce byte-identical artifacts.

use std::path::{Path, PathBuf};

use crate::adaptivity::{adapt_loop, uniform_loop, TraceRecord};
use crate::config::Config;
use crate::diagnostics::axiom_report;
use crate::report::{mesh_svg, rates_svg, write_text_file, write_trace_csv, RateSeries};
use crate::verify::run_battery;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Adaptive,
    Uniform,
    Verify,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "uniform" => Ok(Mode::Uniform),
            "verify" => Ok(Mode::Verify),
            other => Err(format!("unknown mode '{other}', expected adaptive, uniform or verify")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub mode: Mode,
    /// Replaces the configuration's output directory.
    pub out_override: Option<String>,
    /// Seeds the randomized probes and zeroes wall times in artifacts.
    pub seed: Option<u64>,
}

pub struct RunSummary {
    pub out_dir: PathBuf,
    /// Human-readable lines for the terminal.
    pub lines: Vec<String>,
    pub ok: bool,
}

pub fn run_command(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, Error> {
    let cfg = Config::from_file(config_path)?;
    let out_dir = PathBuf::from(opts.out_override.as_ref().unwrap_or(&cfg.out));
    std::fs::create_dir_all(&out_dir).map_err(Error::io(out_dir.display().to_string()))?;

    if opts.mode == Mode::Verify {
        let report = run_battery(opts.seed.unwrap_or(0))?;
        let text = report.render();
        write_text_file(&out_dir.join("verify.txt"), &text)?;
        return Ok(RunSummary {
            out_dir,
            lines: text.lines().map(String::from).collect(),
            ok: report.ok(),
        });
    }

    let mesh = cfg.build_mesh()?;
    let problem = cfg.problem();
    let initial_svg = mesh_svg(&mesh, "initial mesh");
    let run = match opts.mode {
        Mode::Adaptive => adapt_loop(mesh, &problem, &cfg.stop)?,
        Mode::Uniform => uniform_loop(mesh, &problem, &cfg.stop)?,
        Mode::Verify => unreachable!("handled above"),
    };

    let rows: Vec<TraceRecord> = run
        .trace
        .iter()
        .cloned()
        .map(|mut r| {
            if opts.seed.is_some() {
                r.wall_ms = 0;
            }
            r
        })
        .collect();
    write_text_file(&out_dir.join("trace.csv"), &write_trace_csv(&rows))?;
    write_text_file(&out_dir.join("mesh_initial.svg"), &initial_svg)?;
    let final_mesh = &run.levels.last().expect("at least one level").disc.mesh;
    write_text_file(&out_dir.join("mesh_final.svg"), &mesh_svg(final_mesh, "final mesh"))?;

    let mut lines = Vec::new();
    let last = run.trace.last().expect("at least one level");
    lines.push(format!(
        "{} levels: {} elements, {} dofs, estimator {:.6e}, energy {:.6e}",
        run.trace.len(),
        last.n_elements,
        last.n_dofs,
        last.eta_sq.sqrt(),
        last.energy
    ));

    let n0 = run.trace[0].n_elements;
    let eta_points: Vec<(f64, f64)> = run
        .trace
        .iter()
        .map(|r| ((r.n_elements - n0 + 1) as f64, r.eta_sq.sqrt()))
        .collect();
    let mut series = vec![RateSeries {
        label: "estimator".into(),
        color: "#2a62b0".into(),
        points: eta_points,
    }];

    match axiom_report(&run, &problem, opts.seed.unwrap_or(0)) {
        Ok(report) => {
            write_text_file(&out_dir.join("axiom_report.json"), &report.to_json().render())?;
            lines.push(format!(
                "axioms: c1 {:.3e}, rho2 {:.3} ({}), a3 bounded at eps 0.01: {}, c4 {:.3e}",
                report.a1.c1,
                report.a2.rho2,
                if report.a2.pass { "pass" } else { "fail" },
                report.a3.iter().find(|c| c.eps == 0.01).map(|c| c.bounded).unwrap_or(false),
                report.a4.c4
            ));
            lines.push(format!(
                "rates: s {:.3}, per-level factor {:.3}, energy {:.3}, \
                 equivalence spread {:.2}, quasi-error decreasing: {}",
                report.rates.rate_s,
                report.rates.rho_linear,
                report.rates.energy_rate,
                report.rates.equivalence_spread,
                report.rates.xi_decreasing_after_2
            ));
            let xi_points: Vec<(f64, f64)> = run
                .trace
                .iter()
                .zip(&report.rates.xi_sq)
                .filter(|(_, &x)| x > 0.0)
                .map(|(r, &x)| ((r.n_elements - n0 + 1) as f64, x.sqrt()))
                .collect();
            series.push(RateSeries {
                label: "quasi-error".into(),
                color: "#b02a2a".into(),
                points: xi_points,
            });
        }
        Err(Error::InsufficientData(m)) => {
            lines.push(format!("axiom report skipped: {m}"));
        }
        Err(e) => return Err(e),
    }

    write_text_file(
        &out_dir.join("rates.svg"),
        &rates_svg("decay against mesh growth", "elements added + 1", "value", &series),
    )?;
    lines.push(format!("artifacts written to {}", out_dir.display()));
    Ok(RunSummary { out_dir, lines, ok: true })
}

//! Randomized self-checks of the pointwise minimizer, the marking rule and
//! the refinement machinery.
//!
//! These are the checks behind the command line's verify mode. Each comes
//! as a standalone function taking its own sample counts, so the test suite
//! can rerun them at much larger sizes than the quick battery does. All
//! randomness is drawn from a caller-seeded generator; a given seed always
//! produces the same verdicts.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptivity::dorfler_mark;
use crate::mesh::{l_shape_mesh, unit_square_mesh, BoundaryKind, Mesh};
use crate::solver::{prox_dissipation, return_map};
use crate::tensor::{DevTensor2, Material, SymTensor2};
use crate::Error;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct BatteryReport {
    pub checks: Vec<CheckOutcome>,
}

impl BatteryReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let mark = if c.ok { "ok  " } else { "FAIL" };
            s.push_str(&format!("{mark} {}: {}\n", c.name, c.detail));
        }
        s.push_str(if self.ok() { "all checks passed\n" } else { "SOME CHECKS FAILED\n" });
        s
    }
}

/// The quick battery run by the command line: the same checks as the larger
/// test-suite variants, at sizes that finish in a few seconds.
pub fn run_battery(seed: u64) -> Result<BatteryReport, Error> {
    let mut checks = Vec::new();

    let rm = check_return_map(150, 5, seed);
    checks.push(CheckOutcome {
        name: "return-map",
        ok: rm.worst_gap <= 1e-9 && rm.worst_stationarity <= 1e-12,
        detail: format!(
            "{} samples, objective gap {:.2e}, stationarity {:.2e}",
            rm.samples, rm.worst_gap, rm.worst_stationarity
        ),
    });

    let dm = check_dorfler_minimality(60, 12, seed.wrapping_add(1));
    checks.push(CheckOutcome {
        name: "dorfler-minimality",
        ok: dm.failures == 0,
        detail: if dm.failures == 0 {
            format!("{} cases", dm.cases)
        } else {
            format!("{} of {} cases failed: {}", dm.failures, dm.cases, dm.detail)
        },
    });

    let mb = check_mesh_battery(150, 40, seed.wrapping_add(2))?;
    checks.push(CheckOutcome {
        name: "mesh-battery",
        ok: mb.failures == 0,
        detail: if mb.failures == 0 {
            format!(
                "{} steps, {} overlay pairs, shape ratio {:.3} within bound {:.3}, \
                 closure ratio {:.2}",
                mb.steps, mb.overlay_pairs, mb.max_shape_ratio, mb.shape_ratio_bound, mb.closure_ratio
            )
        } else {
            format!("{} failures: {}", mb.failures, mb.detail)
        },
    });

    Ok(BatteryReport { checks })
}

/// Full pointwise energy density for a frozen strain, infinite outside the
/// feasible set.
pub fn pointwise_energy(mat: &Material, eps: SymTensor2, p: DevTensor2, alpha: f64) -> f64 {
    if p.norm() > alpha {
        return f64::INFINITY;
    }
    let e = eps - p.to_sym();
    0.5 * mat.cee(e).dot(e)
        + 0.5 * mat.h_kin * p.norm_sq()
        + 0.5 * mat.h_iso * alpha * alpha
        + mat.sigma_y * p.norm()
}

#[derive(Clone, Copy, Debug)]
pub struct ReturnMapCheck {
    pub samples: usize,
    /// Largest excess of the closed-form objective value over the best grid
    /// or descent candidate; at most rounding noise when the map is right.
    pub worst_gap: f64,
    /// Largest scaled first-order residual at the returned point.
    pub worst_stationarity: f64,
}

/// Pits the closed-form pointwise minimizer against two independent
/// searches: a 25 x 25 x 9 grid over (p11, p12, alpha) and 400 steps of
/// proximal gradient descent started from the best grid point.
pub fn check_return_map(strains_per_material: usize, n_materials: usize, seed: u64) -> ReturnMapCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_stat: f64 = 0.0;
    let mut samples = 0;

    for _ in 0..n_materials {
        let mat = Material {
            mu: rng.gen_range(0.3..3.0),
            lambda: rng.gen_range(0.0..3.0),
            h_kin: rng.gen_range(0.05..2.0),
            h_iso: rng.gen_range(0.05..2.0),
            sigma_y: rng.gen_range(0.1..1.0),
        };
        for _ in 0..strains_per_material {
            let scale = if rng.gen_bool(0.2) { 0.05 } else { 1.0 };
            let eps = SymTensor2 {
                xx: scale * rng.gen_range(-1.5..1.5),
                yy: scale * rng.gen_range(-1.5..1.5),
                xy: scale * rng.gen_range(-1.5..1.5),
            };
            let (p, alpha) = return_map(&mat, eps);
            let phi = pointwise_energy(&mat, eps, p, alpha);

            // grid search over a box that always contains the minimizer
            let r = eps.deviator().norm().max(1e-3);
            let mut best = f64::INFINITY;
            let mut best_at = (DevTensor2::ZERO, 0.0);
            for i in 0..25 {
                let d11 = -r + 2.0 * r * i as f64 / 24.0;
                for j in 0..25 {
                    let d12 = -r + 2.0 * r * j as f64 / 24.0;
                    let q = DevTensor2 { d11, d12 };
                    let qn = q.norm();
                    for k in 0..9 {
                        let a = 2.0 * r * k as f64 / 8.0;
                        if qn <= a {
                            let v = pointwise_energy(&mat, eps, q, a);
                            if v < best {
                                best = v;
                                best_at = (q, a);
                            }
                        }
                    }
                }
            }

            // proximal gradient refinement in rescaled coordinates where the
            // shared tensor norm is Euclidean
            let s2 = 2f64.sqrt();
            let dev = eps.deviator();
            let (e1, e2) = (s2 * dev.d11, s2 * dev.d12);
            let (mut z1, mut z2) = (s2 * best_at.0.d11, s2 * best_at.0.d12);
            let mut b = best_at.1;
            let step = 1.0 / (2.0 * mat.mu + mat.h_kin + mat.h_iso);
            for _ in 0..400 {
                let g1 = -2.0 * mat.mu * (e1 - z1) + mat.h_kin * z1;
                let g2 = -2.0 * mat.mu * (e2 - z2) + mat.h_kin * z2;
                let gb = mat.h_iso * b;
                let (n1, n2, nb) =
                    prox_dissipation(z1 - step * g1, z2 - step * g2, b - step * gb, step * mat.sigma_y);
                z1 = n1;
                z2 = n2;
                b = nb;
            }
            let p_pg = DevTensor2 { d11: z1 / s2, d12: z2 / s2 };
            let descended = pointwise_energy(&mat, eps, p_pg, b.max(p_pg.norm()));

            let gap = phi - best.min(descended);
            worst_gap = worst_gap.max(gap);

            // first-order conditions of the closed form, in the same
            // rescaled coordinates
            let stat = if p.norm() == 0.0 {
                let s = 2.0 * mat.mu * dev;
                (s.norm() - mat.sigma_y).max(0.0) / (1.0 + mat.sigma_y)
            } else {
                let (p1, p2) = (s2 * p.d11, s2 * p.d12);
                let pn = p1.hypot(p2);
                let g1 = -2.0 * mat.mu * (e1 - p1)
                    + (mat.h_kin + mat.h_iso) * p1
                    + mat.sigma_y * p1 / pn;
                let g2 = -2.0 * mat.mu * (e2 - p2)
                    + (mat.h_kin + mat.h_iso) * p2
                    + mat.sigma_y * p2 / pn;
                g1.hypot(g2) / (1.0 + 2.0 * mat.mu * e1.hypot(e2))
            };
            worst_stat = worst_stat.max(stat);
            samples += 1;
        }
    }
    ReturnMapCheck { samples, worst_gap, worst_stationarity: worst_stat }
}

/// Compares one marking against exhaustive subset enumeration. The input
/// length is capped to keep 2^n enumerable.
pub fn dorfler_matches_enumeration(eta_sq: &[f64], theta: f64) -> Result<(), String> {
    let n = eta_sq.len();
    if n > 20 {
        return Err(format!("enumeration is limited to 20 elements, got {n}"));
    }
    let marked = dorfler_mark(eta_sq, theta).map_err(|e| e.to_string())?;
    let total: f64 = eta_sq.iter().sum();
    if total == 0.0 {
        return if marked.is_empty() {
            Ok(())
        } else {
            Err("marked elements despite a zero estimator".into())
        };
    }
    let target = theta * total;
    let achieved: f64 = marked.iter().map(|&t| eta_sq[t]).sum();
    if achieved < target {
        return Err(format!("marked sum {achieved} misses the target {target}"));
    }
    // smallest subset cardinality reaching the target
    let mut k_min = n;
    for mask in 0u64..(1 << n) {
        let k = mask.count_ones() as usize;
        if k >= k_min {
            continue;
        }
        let s: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| eta_sq[i]).sum();
        if s >= target {
            k_min = k;
        }
    }
    if marked.len() != k_min {
        return Err(format!(
            "marked {} elements where {k_min} suffice (theta {theta}, values {eta_sq:?})",
            marked.len()
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct DorflerCheck {
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

/// Random indicator vectors, dyadic so that subset sums are exact in
/// floating point, with zeros and ties mixed in.
pub fn check_dorfler_minimality(n_cases: usize, max_len: usize, seed: u64) -> DorflerCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut detail = String::new();
    for case in 0..n_cases {
        let n = rng.gen_range(1..=max_len.min(16));
        let eta_sq: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(1..=1000) as f64 / 1024.0
                }
            })
            .collect();
        let theta = if rng.gen_bool(0.1) { 1.0 } else { rng.gen_range(0.05..0.98) };
        if let Err(m) = dorfler_matches_enumeration(&eta_sq, theta) {
            failures += 1;
            if failures <= 3 {
                detail.push_str(&format!("case {case}: {m}; "));
            }
        }
    }
    DorflerCheck { cases: n_cases, failures, detail }
}

#[derive(Clone, Debug)]
pub struct MeshBatteryCheck {
    pub steps: usize,
    pub overlay_pairs: usize,
    /// Largest shape ratio (diameter over inscribed-circle diameter) seen
    /// in any chain mesh.
    pub max_shape_ratio: f64,
    /// Largest shape ratio after two uniform rounds of each root, the level
    /// at which the set of element shapes has saturated.
    pub shape_ratio_bound: f64,
    /// Worst chain-wide ratio of created elements to marked elements.
    pub closure_ratio: f64,
    pub failures: usize,
    pub detail: String,
}

fn battery_root(kind: usize) -> Result<Mesh, Error> {
    let all = |_: crate::tensor::Vec2, _: crate::tensor::Vec2| BoundaryKind::Dirichlet;
    match kind % 3 {
        0 => unit_square_mesh(all),
        1 => l_shape_mesh(all),
        _ => Mesh::from_parts(
            vec![[0.0, 0.0], [1.3, 0.0], [1.1, 0.9], [-0.2, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![
                ([0, 1], BoundaryKind::Dirichlet),
                ([1, 2], BoundaryKind::Dirichlet),
                ([2, 3], BoundaryKind::Dirichlet),
                ([3, 0], BoundaryKind::Dirichlet),
            ],
        ),
    }
}

fn max_shape_ratio(mesh: &Mesh) -> f64 {
    let geom = mesh.geometry();
    geom.h
        .iter()
        .zip(&geom.rho)
        .map(|(&h, &rho)| h / rho)
        .fold(0.0, f64::max)
}

/// Chains of random mark-refine steps over three root meshes, checking
/// conformity, exact area conservation, the element-count inequality
/// |T \ T_hat| <= |T_hat| - |T|, bounded closure overhead and shape
/// regularity; snapshots along each chain are overlaid pairwise and the
/// overlay cardinality bound |overlay| <= |T'| + |T''| - |T_0| is checked
/// together with symmetry and refinement of both inputs.
pub fn check_mesh_battery(steps: usize, overlay_pairs: usize, seed: u64) -> Result<MeshBatteryCheck, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut detail = String::new();
    let fail = |d: &mut String, f: &mut usize, msg: String| {
        *f += 1;
        if *f <= 5 {
            d.push_str(&msg);
            d.push_str("; ");
        }
    };

    // the set of element shapes saturates: two uniform rounds realize the
    // worst ratio for the right isosceles roots, one more covers any root
    let mut shape_ratio_bound: f64 = 0.0;
    for kind in 0..3 {
        let mut m = battery_root(kind)?;
        let mut ratios = vec![max_shape_ratio(&m)];
        for _ in 0..5 {
            m = m.refine_uniform()?;
            ratios.push(max_shape_ratio(&m));
        }
        let saturated = ratios[..3].iter().fold(0.0_f64, |a, &b| a.max(b));
        for (r, &ratio) in ratios.iter().enumerate().skip(3) {
            if ratio > saturated * (1.0 + 1e-9) {
                fail(
                    &mut detail,
                    &mut failures,
                    format!("root {kind}: shape ratio still grew at uniform round {r}"),
                );
            }
        }
        shape_ratio_bound = shape_ratio_bound.max(saturated);
    }
    let bound = shape_ratio_bound * (1.0 + 1e-9);

    let mut chain_kind = 0;
    let mut mesh = battery_root(chain_kind)?;
    let mut chain_initial = mesh.n_elements();
    let mut chain_marked_total = 0usize;
    let mut snapshots: Vec<Vec<Mesh>> = vec![Vec::new()];
    let mut max_ratio: f64 = 0.0;
    let mut closure_ratio: f64 = 0.0;
    let root_area = mesh.total_area();
    let mut root_area_current = root_area;

    for step in 0..steps {
        let n = mesh.n_elements();
        let want = rng.gen_range(1..=(n / 6).max(1).min(40));
        let marked: Vec<usize> = {
            let mut set = BTreeSet::new();
            for _ in 0..want {
                set.insert(rng.gen_range(0..n));
            }
            set.into_iter().collect()
        };
        let fine = mesh.refine(&marked)?;

        if fine.n_elements() <= mesh.n_elements() {
            fail(&mut detail, &mut failures, format!("step {step}: refinement did not grow"));
        }
        let removed = mesh.elements_not_in(&fine).len();
        let added = fine.n_elements() - mesh.n_elements();
        if removed > added {
            fail(
                &mut detail,
                &mut failures,
                format!("step {step}: {removed} parents vanished but only {added} elements appeared"),
            );
        }
        if !fine.is_refinement_of(&mesh) {
            fail(&mut detail, &mut failures, format!("step {step}: not a refinement"));
        }
        let area = fine.total_area();
        if (area - root_area_current).abs() > 1e-12 * root_area_current {
            fail(
                &mut detail,
                &mut failures,
                format!("step {step}: area drifted from {root_area_current} to {area}"),
            );
        }
        let ratio = max_shape_ratio(&fine);
        max_ratio = max_ratio.max(ratio);
        if ratio > bound {
            fail(
                &mut detail,
                &mut failures,
                format!("step {step}: shape ratio {ratio} above the class bound {bound}"),
            );
        }
        if (fine.n_elements() <= 400 || step % 10 == 0) && fine.check_conforming().is_err() {
            fail(&mut detail, &mut failures, format!("step {step}: hanging node"));
        }

        chain_marked_total += marked.len();
        mesh = fine;
        let snaps = snapshots.last_mut().expect("chain snapshot bucket");
        if mesh.n_elements() <= 600 && snaps.len() < 8 && step % 3 == 0 {
            snaps.push(mesh.clone());
        }

        if mesh.n_elements() > 1500 {
            if chain_marked_total > 0 {
                let r = (mesh.n_elements() - chain_initial) as f64 / chain_marked_total as f64;
                closure_ratio = closure_ratio.max(r);
                if r >= 20.0 {
                    fail(
                        &mut detail,
                        &mut failures,
                        format!("chain ending at step {step}: closure overhead {r}"),
                    );
                }
            }
            chain_kind += 1;
            mesh = battery_root(chain_kind)?;
            chain_initial = mesh.n_elements();
            chain_marked_total = 0;
            root_area_current = mesh.total_area();
            snapshots.push(Vec::new());
        }
    }
    if chain_marked_total > 0 {
        let r = (mesh.n_elements() - chain_initial) as f64 / chain_marked_total as f64;
        closure_ratio = closure_ratio.max(r);
    }

    let pools: Vec<&Vec<Mesh>> = snapshots.iter().filter(|s| s.len() >= 2).collect();
    let mut pairs_done = 0;
    if !pools.is_empty() {
        for k in 0..overlay_pairs {
            let pool = pools[k % pools.len()];
            let i = rng.gen_range(0..pool.len());
            let mut j = rng.gen_range(0..pool.len() - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = (&pool[i], &pool[j]);
            let ov = a.overlay(b)?;
            let root_count = mesh_root_count(a);
            if ov.n_elements() + root_count > a.n_elements() + b.n_elements() {
                fail(
                    &mut detail,
                    &mut failures,
                    format!(
                        "overlay pair {k}: {} elements exceed the bound {} + {} - {root_count}",
                        ov.n_elements(),
                        a.n_elements(),
                        b.n_elements()
                    ),
                );
            }
            if !ov.is_refinement_of(a) || !ov.is_refinement_of(b) {
                fail(&mut detail, &mut failures, format!("overlay pair {k}: not a common refinement"));
            }
            let vo = b.overlay(a)?;
            if !ov.same_triangulation(&vo) {
                fail(&mut detail, &mut failures, format!("overlay pair {k}: not symmetric"));
            }
            pairs_done += 1;
        }
    }

    Ok(MeshBatteryCheck {
        steps,
        overlay_pairs: pairs_done,
        max_shape_ratio: max_ratio,
        shape_ratio_bound: bound,
        closure_ratio,
        failures,
        detail,
    })
}

fn mesh_root_count(mesh: &Mesh) -> usize {
    mesh.root_info().n_elements()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_quick_battery_passes() {
        let report = run_battery(2024).unwrap();
        assert!(report.ok(), "{}", report.render());
        assert_eq!(report.checks.len(), 3);
        let text = report.render();
        assert!(text.contains("return-map"));
        assert!(text.contains("all checks passed"));
    }

    #[test]
    fn return_map_check_reports_tight_margins() {
        let rm = check_return_map(40, 3, 9);
        assert_eq!(rm.samples, 120);
        assert!(rm.worst_gap <= 1e-9, "gap {}", rm.worst_gap);
        assert!(rm.worst_stationarity <= 1e-12, "stationarity {}", rm.worst_stationarity);
    }

    #[test]
    fn enumeration_agrees_on_a_hand_vector() {
        assert!(dorfler_matches_enumeration(&[0.4, 0.3, 0.2, 0.1], 0.5).is_ok());
        assert!(dorfler_matches_enumeration(&[0.0; 4], 0.3).is_ok());
        let long = vec![0.1; 21];
        assert!(dorfler_matches_enumeration(&long, 0.5).is_err());
    }

    #[test]
    fn mesh_battery_holds_up_over_a_short_chain() {
        let mb = check_mesh_battery(60, 12, 5).unwrap();
        assert_eq!(mb.failures, 0, "{}", mb.detail);
        assert!(mb.max_shape_ratio <= mb.shape_ratio_bound);
        assert!(mb.closure_ratio < 20.0);
        assert!(mb.overlay_pairs > 0);
    }
}

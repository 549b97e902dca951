//! Residual a posteriori error estimator for the elastoplastic step.
//!
//! The discrete stress is piecewise constant, so element residuals reduce to
//! the body force and the stress jumps across edges. Per element T:
//!
//!   eta_T^2 = |T| ||f||^2_{L2(T)} + |T|^(1/2) sum_E R_E^2
//!
//! where the sum runs over the three edges of T and
//!
//!   R_E^2 = || [sigma] nu ||^2_{L2(E)}   on interior edges (the jump of the
//!           normal stress, constant along the edge),
//!   R_E^2 = || g - sigma nu ||^2_{L2(E)} on Neumann edges (two-point Gauss),
//!   R_E^2 = 0                             on Dirichlet edges.
//!
//! Data oscillation replaces f and g by their quadrature means:
//! osc_T^2 = |T| ||f - mean f||^2 plus, for adjacent Neumann edges,
//! |T|^(1/2) ||g - mean g||^2. Both use the same quadrature points as the
//! estimator itself (three edge midpoints per triangle, two Gauss points per
//! edge), so the oscillation never exceeds the corresponding residual terms.

use crate::fem::{gauss2_points, DiscreteState, Discretization, Loads};
use crate::mesh::{BoundaryKind, EdgeKind};
use crate::tensor::{Material, Vec2};

#[derive(Clone, Debug)]
pub struct ErrorEstimate {
    /// Squared indicator per element.
    pub eta_sq: Vec<f64>,
    /// Squared data oscillation per element (volume part plus adjacent
    /// Neumann edge parts).
    pub osc_sq: Vec<f64>,
    /// Sum of `eta_sq` in element order.
    pub total_eta_sq: f64,
    /// Sum of `osc_sq` in element order.
    pub total_osc_sq: f64,
}

impl ErrorEstimate {
    pub fn total_eta(&self) -> f64 {
        self.total_eta_sq.sqrt()
    }
}

pub fn estimate(
    disc: &Discretization,
    mat: &Material,
    loads: &Loads,
    state: &DiscreteState,
) -> ErrorEstimate {
    let mesh = &disc.mesh;
    let n_el = mesh.n_elements();
    let stresses: Vec<_> = (0..n_el).map(|t| disc.element_stress(t, mat, state)).collect();
    let [g0, g1] = gauss2_points();

    // per-edge squared residuals and Neumann oscillation
    let mut edge_r_sq = vec![0.0; mesh.edges().len()];
    let mut edge_osc = vec![0.0; mesh.edges().len()];
    for (id, e) in mesh.edges().iter().enumerate() {
        match e.kind {
            EdgeKind::Interior => {
                let second = e.elems.1.expect("interior edge with one element");
                let nu = disc.geom.edge_normal[id];
                let jump = (stresses[e.elems.0] - stresses[second]).apply(nu);
                edge_r_sq[id] = disc.geom.edge_len[id] * jump.dot(jump);
            }
            EdgeKind::Boundary(BoundaryKind::Dirichlet, _) => {}
            EdgeKind::Boundary(BoundaryKind::Neumann, _) => {
                let a = mesh.vertex(e.v.0);
                let b = mesh.vertex(e.v.1);
                let active = loads.traction_active(a, b);
                let trac = stresses[e.elems.0].apply(disc.geom.edge_normal[id]);
                let len = disc.geom.edge_len[id];
                let mut values = [Vec2::ZERO; 2];
                for (k, t) in [g0, g1].into_iter().enumerate() {
                    let x = Vec2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
                    let g = if active { loads.traction.eval(x) } else { Vec2::ZERO };
                    values[k] = g - trac;
                    edge_r_sq[id] += 0.5 * len * values[k].dot(values[k]);
                }
                // oscillation of g alone: deviation from the Gauss mean
                let g_vals = [values[0] + trac, values[1] + trac];
                let mean = 0.5 * (g_vals[0] + g_vals[1]);
                for g in g_vals {
                    let dev = g - mean;
                    edge_osc[id] += 0.5 * len * dev.dot(dev);
                }
            }
        }
    }

    let mut eta_sq = vec![0.0; n_el];
    let mut osc_sq = vec![0.0; n_el];
    for (t, el) in mesh.elements().iter().enumerate() {
        let area = disc.geom.area[t];
        let p = [mesh.vertex(el.v[0]), mesh.vertex(el.v[1]), mesh.vertex(el.v[2])];
        let w = area / 3.0;
        let mut f_vals = [Vec2::ZERO; 3];
        for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
            let m = Vec2::new(0.5 * (p[i].x + p[j].x), 0.5 * (p[i].y + p[j].y));
            f_vals[k] = loads.body.eval(m);
        }
        let f_norm_sq: f64 = f_vals.iter().map(|f| w * f.dot(*f)).sum();
        let f_mean = (1.0 / 3.0) * (f_vals[0] + f_vals[1] + f_vals[2]);
        let f_osc: f64 = f_vals
            .iter()
            .map(|f| {
                let d = *f - f_mean;
                w * d.dot(d)
            })
            .sum();

        let edge_sum: f64 = disc.mesh.element_edge_ids(t).iter().map(|&e| edge_r_sq[e]).sum();
        eta_sq[t] = area * f_norm_sq + area.sqrt() * edge_sum;
        osc_sq[t] = area * f_osc;
    }
    // attribute Neumann-edge oscillation to the adjacent element
    for (id, e) in mesh.edges().iter().enumerate() {
        if edge_osc[id] > 0.0 {
            osc_sq[e.elems.0] += disc.geom.area[e.elems.0].sqrt() * edge_osc[id];
        }
    }

    let total_eta_sq = eta_sq.iter().sum();
    let total_osc_sq = osc_sq.iter().sum();
    ErrorEstimate { eta_sq, osc_sq, total_eta_sq, total_osc_sq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::PairExpr;
    use crate::fem::{DiscreteState, Segment, VectorField};
    use crate::mesh::{unit_square_mesh, Mesh};
    use crate::tensor::{DevTensor2, SymTensor2};

    fn left_dirichlet(a: Vec2, b: Vec2) -> BoundaryKind {
        if a.x == 0.0 && b.x == 0.0 {
            BoundaryKind::Dirichlet
        } else {
            BoundaryKind::Neumann
        }
    }

    /// Seven-point degree-5 rule, as an independent check of the fixed
    /// quadrature wired into the estimator (which is exact for the
    /// polynomial data used here).
    fn tri_quad7(p: [Vec2; 3], area: f64, f: &dyn Fn(Vec2) -> f64) -> f64 {
        let s15 = 15f64.sqrt();
        let groups = [
            (1.0 / 3.0, 9.0 / 40.0),
            ((6.0 - s15) / 21.0, (155.0 - s15) / 1200.0),
            ((6.0 + s15) / 21.0, (155.0 + s15) / 1200.0),
        ];
        let mut sum = 0.0;
        for (a, w) in groups {
            if (a - 1.0 / 3.0).abs() < 1e-14 {
                let c = Vec2::new(
                    (p[0].x + p[1].x + p[2].x) / 3.0,
                    (p[0].y + p[1].y + p[2].y) / 3.0,
                );
                sum += w * f(c);
                continue;
            }
            for perm in [[a, a, 1.0 - 2.0 * a], [a, 1.0 - 2.0 * a, a], [1.0 - 2.0 * a, a, a]] {
                let x = Vec2::new(
                    perm[0] * p[0].x + perm[1] * p[1].x + perm[2] * p[2].x,
                    perm[0] * p[0].y + perm[1] * p[1].y + perm[2] * p[2].y,
                );
                sum += w * f(x);
            }
        }
        area * sum
    }

    #[test]
    fn quad7_integrates_polynomials() {
        // reference triangle: integral of x^i y^j has closed form
        // i! j! / (i + j + 2)!
        let p = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let cases: [(u32, u32, f64); 5] = [
            (0, 0, 0.5),
            (1, 0, 1.0 / 6.0),
            (1, 1, 1.0 / 24.0),
            (3, 0, 1.0 / 20.0),
            (2, 3, 1.0 / 420.0),
        ];
        for (i, j, exact) in cases {
            let got = tri_quad7(p, 0.5, &|x: Vec2| x.x.powi(i as i32) * x.y.powi(j as i32));
            assert!((got - exact).abs() < 1e-14, "x^{i} y^{j}: {got} vs {exact}");
        }
    }

    #[test]
    fn equilibrium_state_has_vanishing_residual() {
        // lambda = 0, w = (a x1, 0): stress diag(2 mu a, 0). With matching
        // traction on the right edge and traction-free top and bottom, every
        // residual is zero up to rounding.
        let mesh = unit_square_mesh(left_dirichlet).unwrap().refine_uniform().unwrap();
        let disc = Discretization::new(mesh);
        let mat = Material { mu: 1.5, lambda: 0.0, h_kin: 1.0, h_iso: 1.0, sigma_y: 1.0 };
        let a = 0.37;
        let mut state = DiscreteState::zeros(&disc);
        for v in 0..disc.mesh.n_vertices() {
            state.w[2 * v] = a * disc.mesh.vertex(v).x;
        }
        let loads = Loads {
            body: VectorField::zero(),
            traction: VectorField::Constant(Vec2::new(2.0 * mat.mu * a, 0.0)),
            traction_on: Some(vec![Segment {
                a: Vec2::new(1.0, 0.0),
                b: Vec2::new(1.0, 1.0),
            }]),
        };
        let est = estimate(&disc, &mat, &loads, &state);
        assert!(
            est.total_eta_sq < 1e-26,
            "equilibrium residual should vanish, eta^2 = {}",
            est.total_eta_sq
        );
    }

    #[test]
    fn single_element_estimate_matches_the_hand_formula() {
        let mesh = Mesh::from_parts_explicit(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![
                ([0, 1], BoundaryKind::Neumann),
                ([1, 2], BoundaryKind::Neumann),
                ([2, 0], BoundaryKind::Dirichlet),
            ],
        )
        .unwrap();
        let disc = Discretization::new(mesh);
        let mat = Material { mu: 1.0, lambda: 0.5, h_kin: 1.0, h_iso: 1.0, sigma_y: 1.0 };
        let mut state = DiscreteState::zeros(&disc);
        state.p[0] = DevTensor2 { d11: 0.2, d12: -0.1 };
        state.alpha[0] = state.p[0].norm();
        let f = Vec2::new(0.3, -0.4);
        let loads = Loads {
            body: VectorField::Constant(f),
            traction: VectorField::zero(),
            traction_on: None,
        };
        let est = estimate(&disc, &mat, &loads, &state);

        let area: f64 = 0.5;
        let sigma = mat.cee(SymTensor2::ZERO - state.p[0].to_sym());
        // bottom edge: nu = (0, -1); hypotenuse: nu = (1, 1)/sqrt(2)
        let t_bottom = sigma.apply(Vec2::new(0.0, -1.0));
        let nu_h = Vec2::new(1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt());
        let t_hyp = sigma.apply(nu_h);
        let r_sum = 1.0 * t_bottom.dot(t_bottom) + 2f64.sqrt() * t_hyp.dot(t_hyp);
        let expected = area * area * f.dot(f) + area.sqrt() * r_sum;
        assert!(
            (est.eta_sq[0] - expected).abs() < 1e-14 * expected,
            "{} vs {expected}",
            est.eta_sq[0]
        );
        // constant data has no oscillation beyond roundoff in the midpoint mean
        assert!(est.osc_sq[0] < 1e-30, "osc {}", est.osc_sq[0]);
    }

    #[test]
    fn volume_term_matches_independent_quadrature_for_quadratic_data() {
        let mesh = unit_square_mesh(left_dirichlet).unwrap().refine(&[0]).unwrap();
        let disc = Discretization::new(mesh);
        let mat = Material { mu: 1.0, lambda: 0.0, h_kin: 1.0, h_iso: 1.0, sigma_y: 1.0 };
        // |f|^2 is quartic, too rich for both rules; use components whose
        // squares stay within degree 2 of each midpoint rule: f linear.
        let loads = Loads {
            body: VectorField::Expr(PairExpr::parse("(x1 + 2*x2, x1 - 1)").unwrap()),
            traction: VectorField::zero(),
            traction_on: None,
        };
        let state = DiscreteState::zeros(&disc);
        let est = estimate(&disc, &mat, &loads, &state);
        for (t, el) in disc.mesh.elements().iter().enumerate() {
            let p = [
                disc.mesh.vertex(el.v[0]),
                disc.mesh.vertex(el.v[1]),
                disc.mesh.vertex(el.v[2]),
            ];
            let area = disc.geom.area[t];
            let f_sq = tri_quad7(p, area, &|x| {
                let fx = x.x + 2.0 * x.y;
                let fy = x.x - 1.0;
                fx * fx + fy * fy
            });
            // state and tractions are zero, so every edge residual vanishes
            // and eta is purely the volume term
            let expected_vol = area * f_sq;
            assert!(
                (est.eta_sq[t] - expected_vol).abs() < 1e-13 * (1.0 + expected_vol),
                "element {t}: {} vs {expected_vol}",
                est.eta_sq[t]
            );
        }
    }

    #[test]
    fn oscillation_is_dominated_by_the_estimator() {
        let mesh = unit_square_mesh(left_dirichlet).unwrap().refine_uniform().unwrap();
        let disc = Discretization::new(mesh);
        let mat = Material { mu: 1.0, lambda: 0.4, h_kin: 1.0, h_iso: 1.0, sigma_y: 1.0 };
        let loads = Loads {
            body: VectorField::Expr(PairExpr::parse("(sin(3*x1), cos(2*x2))").unwrap()),
            traction: VectorField::Expr(PairExpr::parse("(x2^2, 0.1)").unwrap()),
            traction_on: None,
        };
        let mut state = DiscreteState::zeros(&disc);
        state.p[2] = DevTensor2 { d11: 0.1, d12: 0.05 };
        state.alpha[2] = state.p[2].norm();
        let est = estimate(&disc, &mat, &loads, &state);
        for t in 0..disc.mesh.n_elements() {
            assert!(
                est.osc_sq[t] <= est.eta_sq[t] * (1.0 + 1e-12) + 1e-300,
                "element {t}: osc {} > eta {}",
                est.osc_sq[t],
                est.eta_sq[t]
            );
        }
        assert!(est.total_osc_sq > 0.0);
        assert!(est.total_eta_sq >= est.total_osc_sq);
    }

    #[test]
    fn masked_traction_changes_the_boundary_residual() {
        let mesh = unit_square_mesh(left_dirichlet).unwrap();
        let disc = Discretization::new(mesh);
        let mat = Material { mu: 1.0, lambda: 0.0, h_kin: 1.0, h_iso: 1.0, sigma_y: 1.0 };
        let state = DiscreteState::zeros(&disc);
        let g = Vec2::new(0.5, 0.0);
        let all = Loads {
            body: VectorField::zero(),
            traction: VectorField::Constant(g),
            traction_on: None,
        };
        let masked = Loads {
            traction_on: Some(vec![Segment {
                a: Vec2::new(1.0, 0.0),
                b: Vec2::new(1.0, 1.0),
            }]),
            ..all.clone()
        };
        // sigma = 0, so each active Neumann edge contributes
        // |T|^(1/2) |E| |g|^2
        let est_all = estimate(&disc, &mat, &all, &state);
        let est_masked = estimate(&disc, &mat, &masked, &state);
        assert!(est_all.total_eta_sq > est_masked.total_eta_sq);
        let sqrt_area = 0.5f64.sqrt();
        let expected_masked = sqrt_area * 1.0 * g.dot(g);
        assert!((est_masked.total_eta_sq - expected_masked).abs() < 1e-14);
    }
}

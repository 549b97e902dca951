//! Lowest-order discretization of one quasi-static step of primal
//! elastoplasticity with linear kinematic and isotropic hardening.
//!
//! Displacements are continuous piecewise affine vector fields vanishing on
//! the Dirichlet boundary. The plastic strain (a trace-free symmetric
//! tensor) and the scalar hardening variable are constant per element. For
//! a state z = (w, p, alpha) against a test state zh = (v, q, beta):
//!
//!   a(z, zh) = (C(eps(w) - p), eps(v) - q) + h_kin (p, q) + h_iso (alpha, beta)
//!   b(z)     = (f, w) + (g, w)_{Neumann}
//!   psi(z)   = sum_T |T| sigma_y |p_T|  if |p_T| <= alpha_T on every T,
//!              +infinity otherwise
//!   E(z)     = 1/2 a(z, z) - b(z) + psi(z)
//!
//! All integrals of the data f and g use fixed quadrature: the three-point
//! edge-midpoint rule on triangles (exact for quadratics) and the two-point
//! Gauss rule on edges. Everything built from the discrete unknowns is
//! piecewise constant or affine and integrates exactly.

use crate::expr::PairExpr;
use crate::mesh::{BoundaryKind, Mesh, MeshGeometry};
use crate::sparse::CsrMatrix;
use crate::tensor::{DevTensor2, Material, SymTensor2, Vec2};
use crate::Error;

/// Closed segment used to select boundary edges geometrically.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    /// Whether `p` lies on the segment, with a small relative tolerance.
    pub fn contains(&self, p: Vec2) -> bool {
        let d = self.b - self.a;
        let r = p - self.a;
        let len_sq = d.dot(d);
        if len_sq == 0.0 {
            return false;
        }
        if d.cross(r).abs() > 1e-12 * len_sq.max(1.0) {
            return false;
        }
        let t = d.dot(r) / len_sq;
        (-1e-12..=1.0 + 1e-12).contains(&t)
    }
}

/// A vector-valued data field, either constant or an expression in (x1, x2).
#[derive(Clone, Debug)]
pub enum VectorField {
    Constant(Vec2),
    Expr(PairExpr),
}

impl VectorField {
    pub fn eval(&self, p: Vec2) -> Vec2 {
        match self {
            VectorField::Constant(v) => *v,
            VectorField::Expr(e) => {
                let [x, y] = e.eval([p.x, p.y]);
                Vec2::new(x, y)
            }
        }
    }

    pub fn zero() -> VectorField {
        VectorField::Constant(Vec2::ZERO)
    }
}

/// Problem data: body force and Neumann traction, with an optional
/// restriction of the traction to named boundary segments.
#[derive(Clone, Debug)]
pub struct Loads {
    pub body: VectorField,
    pub traction: VectorField,
    /// When set, the traction acts only on Neumann edges whose endpoints
    /// both lie on one of these segments; elsewhere it is zero.
    pub traction_on: Option<Vec<Segment>>,
}

impl Loads {
    pub fn zero() -> Loads {
        Loads { body: VectorField::zero(), traction: VectorField::zero(), traction_on: None }
    }

    /// Whether the traction acts on the edge with the given endpoints.
    pub fn traction_active(&self, a: Vec2, b: Vec2) -> bool {
        match &self.traction_on {
            None => true,
            Some(segments) => segments.iter().any(|s| s.contains(a) && s.contains(b)),
        }
    }
}

/// Vertex-to-dof assignment. Vertices touching a Dirichlet edge are
/// constrained to zero; each free vertex owns two displacement dofs.
/// The total unknown count also includes three per-element dofs for the
/// plastic strain components and the hardening variable.
#[derive(Clone, Debug)]
pub struct DofMap {
    vertex_dof: Vec<Option<usize>>,
    n_free: usize,
    n_elements: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> DofMap {
        let mut constrained = vec![false; mesh.n_vertices()];
        for e in mesh.edges() {
            if e.boundary_kind() == Some(BoundaryKind::Dirichlet) {
                constrained[e.v.0] = true;
                constrained[e.v.1] = true;
            }
        }
        let mut vertex_dof = Vec::with_capacity(mesh.n_vertices());
        let mut n_free = 0;
        for c in constrained {
            if c {
                vertex_dof.push(None);
            } else {
                vertex_dof.push(Some(n_free));
                n_free += 1;
            }
        }
        DofMap { vertex_dof, n_free, n_elements: mesh.n_elements() }
    }

    /// Index of the vertex among the free ones; its displacement dofs are
    /// 2k and 2k + 1.
    pub fn vertex_dof(&self, v: usize) -> Option<usize> {
        self.vertex_dof[v]
    }

    pub fn is_constrained(&self, v: usize) -> bool {
        self.vertex_dof[v].is_none()
    }

    /// Number of displacement unknowns, 2 per free vertex.
    pub fn n_displacement(&self) -> usize {
        2 * self.n_free
    }

    /// All unknowns: displacements plus (p11, p12, alpha) per element.
    pub fn n_total(&self) -> usize {
        2 * self.n_free + 3 * self.n_elements
    }

    /// Writes the free displacement vector into the full per-vertex layout
    /// [x0, y0, x1, y1, ...]; constrained entries are set to zero.
    pub fn scatter(&self, free: &[f64], full: &mut [f64]) {
        debug_assert_eq!(free.len(), self.n_displacement());
        debug_assert_eq!(full.len(), 2 * self.vertex_dof.len());
        for (v, dof) in self.vertex_dof.iter().enumerate() {
            match dof {
                Some(k) => {
                    full[2 * v] = free[2 * k];
                    full[2 * v + 1] = free[2 * k + 1];
                }
                None => {
                    full[2 * v] = 0.0;
                    full[2 * v + 1] = 0.0;
                }
            }
        }
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        let mut free = vec![0.0; self.n_displacement()];
        for (v, dof) in self.vertex_dof.iter().enumerate() {
            if let Some(k) = dof {
                free[2 * k] = full[2 * v];
                free[2 * k + 1] = full[2 * v + 1];
            }
        }
        free
    }
}

/// A mesh with everything precomputed for assembly and evaluation:
/// geometry, the dof map, and the constant gradients of the three nodal
/// basis functions on each element.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: Mesh,
    pub geom: MeshGeometry,
    pub dofs: DofMap,
    grads: Vec<[Vec2; 3]>,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Discretization {
        let geom = mesh.geometry();
        let dofs = DofMap::new(&mesh);
        let mut grads = Vec::with_capacity(mesh.n_elements());
        for (t, el) in mesh.elements().iter().enumerate() {
            let p = [mesh.vertex(el.v[0]), mesh.vertex(el.v[1]), mesh.vertex(el.v[2])];
            let inv_2a = 1.0 / (2.0 * geom.area[t]);
            grads.push([
                grad_hat(p[1], p[2], inv_2a),
                grad_hat(p[2], p[0], inv_2a),
                grad_hat(p[0], p[1], inv_2a),
            ]);
        }
        Discretization { mesh, geom, dofs, grads }
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_total()
    }

    pub fn basis_gradients(&self, t: usize) -> [Vec2; 3] {
        self.grads[t]
    }

    /// Symmetric gradient of the piecewise affine field `w` (full
    /// per-vertex layout) on element `t`.
    pub fn element_strain(&self, t: usize, w: &[f64]) -> SymTensor2 {
        let el = self.mesh.element(t);
        let g = self.grads[t];
        let mut eps = SymTensor2::ZERO;
        for i in 0..3 {
            let v = el.v[i];
            eps += SymTensor2::sym_outer(Vec2::new(w[2 * v], w[2 * v + 1]), g[i]);
        }
        eps
    }

    /// Stress C(eps(w) - p) on element `t`.
    pub fn element_stress(&self, t: usize, mat: &Material, state: &DiscreteState) -> SymTensor2 {
        mat.cee(self.element_strain(t, &state.w) - state.p[t].to_sym())
    }
}

/// Gradient of the nodal hat that vanishes on the edge from `a` to `b`
/// (traversed in positive orientation) and is 1 at the opposite vertex.
fn grad_hat(a: Vec2, b: Vec2, inv_2a: f64) -> Vec2 {
    let d = b - a;
    Vec2::new(-d.y * inv_2a, d.x * inv_2a)
}

/// Discrete state z = (w, p, alpha): displacements in the full per-vertex
/// layout (constrained entries zero), plastic strain and hardening per
/// element. The solver maintains alpha_T = |p_T| via the one shared norm,
/// so feasibility holds exactly.
#[derive(Clone, Debug)]
pub struct DiscreteState {
    pub w: Vec<f64>,
    pub p: Vec<DevTensor2>,
    pub alpha: Vec<f64>,
}

impl DiscreteState {
    pub fn zeros(disc: &Discretization) -> DiscreteState {
        DiscreteState {
            w: vec![0.0; 2 * disc.mesh.n_vertices()],
            p: vec![DevTensor2::ZERO; disc.mesh.n_elements()],
            alpha: vec![0.0; disc.mesh.n_elements()],
        }
    }
}

/// Stiffness of the elastic part on the free displacement dofs:
/// (C eps(phi_i), eps(phi_j)).
pub fn assemble_stiffness(disc: &Discretization, mat: &Material) -> CsrMatrix {
    let n = disc.dofs.n_displacement();
    let mut triplets = Vec::with_capacity(36 * disc.mesh.n_elements());
    let unit = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
    for (t, el) in disc.mesh.elements().iter().enumerate() {
        let g = disc.grads[t];
        let area = disc.geom.area[t];
        // strains of the six local shape functions
        let mut eps = [[SymTensor2::ZERO; 2]; 3];
        for i in 0..3 {
            for a in 0..2 {
                eps[i][a] = SymTensor2::sym_outer(unit[a], g[i]);
            }
        }
        for i in 0..3 {
            let Some(di) = disc.dofs.vertex_dof(el.v[i]) else { continue };
            for j in 0..3 {
                let Some(dj) = disc.dofs.vertex_dof(el.v[j]) else { continue };
                for a in 0..2 {
                    for b in 0..2 {
                        let k = area * mat.cee(eps[j][b]).dot(eps[i][a]);
                        triplets.push((2 * di + a, 2 * dj + b, k));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, triplets)
}

/// Gauss points on the reference interval [0, 1].
pub fn gauss2_points() -> [f64; 2] {
    let r = 1.0 / 12f64.sqrt();
    [0.5 - r, 0.5 + r]
}

fn midpoint(a: Vec2, b: Vec2) -> Vec2 {
    Vec2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
}

/// Load vector (f, phi) + (g, phi)_{Neumann} on the free displacement dofs.
pub fn assemble_loads(disc: &Discretization, loads: &Loads) -> Vec<f64> {
    let mut rhs = vec![0.0; disc.dofs.n_displacement()];
    for (t, el) in disc.mesh.elements().iter().enumerate() {
        let weight = disc.geom.area[t] / 3.0;
        let p = [
            disc.mesh.vertex(el.v[0]),
            disc.mesh.vertex(el.v[1]),
            disc.mesh.vertex(el.v[2]),
        ];
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let f = loads.body.eval(midpoint(p[i], p[j]));
            // the hats of both endpoints are 1/2 at the edge midpoint
            for v in [el.v[i], el.v[j]] {
                if let Some(k) = disc.dofs.vertex_dof(v) {
                    rhs[2 * k] += weight * 0.5 * f.x;
                    rhs[2 * k + 1] += weight * 0.5 * f.y;
                }
            }
        }
    }
    let [t0, t1] = gauss2_points();
    for e in disc.mesh.edges() {
        if e.boundary_kind() != Some(BoundaryKind::Neumann) {
            continue;
        }
        let a = disc.mesh.vertex(e.v.0);
        let b = disc.mesh.vertex(e.v.1);
        if !loads.traction_active(a, b) {
            continue;
        }
        let len = (b - a).norm();
        for t in [t0, t1] {
            let x = Vec2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            let g = loads.traction.eval(x);
            let w = 0.5 * len;
            if let Some(k) = disc.dofs.vertex_dof(e.v.0) {
                rhs[2 * k] += w * (1.0 - t) * g.x;
                rhs[2 * k + 1] += w * (1.0 - t) * g.y;
            }
            if let Some(k) = disc.dofs.vertex_dof(e.v.1) {
                rhs[2 * k] += w * t * g.x;
                rhs[2 * k + 1] += w * t * g.y;
            }
        }
    }
    rhs
}

/// Right-hand side coupling the plastic strain into the displacement solve:
/// (C p, eps(phi_i)) on the free dofs.
pub fn assemble_plastic_rhs(disc: &Discretization, mat: &Material, p: &[DevTensor2]) -> Vec<f64> {
    let mut rhs = vec![0.0; disc.dofs.n_displacement()];
    let unit = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
    for (t, el) in disc.mesh.elements().iter().enumerate() {
        let cp = mat.cee(p[t].to_sym());
        let area = disc.geom.area[t];
        let g = disc.grads[t];
        for i in 0..3 {
            let Some(k) = disc.dofs.vertex_dof(el.v[i]) else { continue };
            for a in 0..2 {
                rhs[2 * k + a] += area * cp.dot(SymTensor2::sym_outer(unit[a], g[i]));
            }
        }
    }
    rhs
}

/// The symmetric bilinear form a(z1, z2).
pub fn bilinear_a(
    disc: &Discretization,
    mat: &Material,
    z1: &DiscreteState,
    z2: &DiscreteState,
) -> f64 {
    let mut sum = 0.0;
    for t in 0..disc.mesh.n_elements() {
        let e1 = disc.element_strain(t, &z1.w) - z1.p[t].to_sym();
        let e2 = disc.element_strain(t, &z2.w) - z2.p[t].to_sym();
        let area = disc.geom.area[t];
        sum += area
            * (mat.cee(e1).dot(e2)
                + mat.h_kin * z1.p[t].dot(z2.p[t])
                + mat.h_iso * z1.alpha[t] * z2.alpha[t]);
    }
    sum
}

/// The load functional b(z), evaluated as the dot product of the assembled
/// load vector with the free part of `w` (exact, since both use the same
/// quadrature).
pub fn linear_b(disc: &Discretization, load_vec: &[f64], w: &[f64]) -> f64 {
    let free = disc.dofs.gather(w);
    free.iter().zip(load_vec).map(|(a, b)| a * b).sum()
}

/// The dissipation functional: sum |T| sigma_y |p_T| on feasible states,
/// +infinity when |p_T| > alpha_T somewhere.
pub fn dissipation_psi(disc: &Discretization, mat: &Material, state: &DiscreteState) -> f64 {
    let mut sum = 0.0;
    for t in 0..disc.mesh.n_elements() {
        let norm = state.p[t].norm();
        if norm > state.alpha[t] {
            return f64::INFINITY;
        }
        sum += disc.geom.area[t] * mat.sigma_y * norm;
    }
    sum
}

/// Total energy E(z) = 1/2 a(z, z) - b(z) + psi(z).
pub fn energy(
    disc: &Discretization,
    mat: &Material,
    load_vec: &[f64],
    state: &DiscreteState,
) -> f64 {
    let psi = dissipation_psi(disc, mat, state);
    if psi == f64::INFINITY {
        return f64::INFINITY;
    }
    0.5 * bilinear_a(disc, mat, state, state) - linear_b(disc, load_vec, &state.w) + psi
}

/// The error measure between discrete states, possibly on different meshes
/// refined from the same root: the L2 norm of the stress difference,
/// evaluated exactly on the common refinement (stresses are piecewise
/// constant, so each overlay leaf contributes its area times the squared
/// Frobenius norm of the difference).
pub fn error_measure_d(
    da: &Discretization,
    za: &DiscreteState,
    db: &Discretization,
    zb: &DiscreteState,
    mat: &Material,
) -> Result<f64, Error> {
    let mut sum = 0.0;
    if da.mesh.same_triangulation(&db.mesh) {
        for (i, j) in da.mesh.elements_in_both(&db.mesh) {
            let diff = da.element_stress(i, mat, za) - db.element_stress(j, mat, zb);
            sum += da.geom.area[i] * diff.norm_sq();
        }
    } else {
        let root = da.mesh.root_info().clone();
        for leaf in da.mesh.overlay_leaves(&db.mesh)? {
            let diff =
                da.element_stress(leaf.in_a, mat, za) - db.element_stress(leaf.in_b, mat, zb);
            sum += leaf.area(&root) * diff.norm_sq();
        }
    }
    Ok(sum.sqrt())
}

/// Transfers a state to a refinement of its mesh: displacements by affine
/// interpolation within the covering coarse element, plastic strain and
/// hardening by inheritance. Used to warm start the next level.
pub fn prolong_state(
    coarse: &Discretization,
    state: &DiscreteState,
    fine: &Discretization,
) -> Result<DiscreteState, Error> {
    if !fine.mesh.is_refinement_of(&coarse.mesh) {
        return Err(Error::InvalidArgument(
            "state transfer requires a refinement of the source mesh".into(),
        ));
    }
    let keys = coarse.mesh.key_index_map();
    let mut out = DiscreteState::zeros(fine);
    for t in 0..fine.mesh.n_elements() {
        let c = fine
            .mesh
            .ancestor_in_keys(t, &keys)
            .ok_or_else(|| Error::InvalidArgument("element without ancestor".into()))?;
        out.p[t] = state.p[c];
        out.alpha[t] = state.alpha[c];
        let cel = coarse.mesh.element(c);
        let q = [
            coarse.mesh.vertex(cel.v[0]),
            coarse.mesh.vertex(cel.v[1]),
            coarse.mesh.vertex(cel.v[2]),
        ];
        let inv_2a = 1.0 / (2.0 * coarse.geom.area[c]);
        for &v in &fine.mesh.element(t).v {
            if fine.dofs.is_constrained(v) {
                continue;
            }
            let x = fine.mesh.vertex(v);
            let l0 = (q[1] - x).cross(q[2] - x) * inv_2a;
            let l1 = (q[2] - x).cross(q[0] - x) * inv_2a;
            let l2 = (q[0] - x).cross(q[1] - x) * inv_2a;
            for c2 in 0..2 {
                out.w[2 * v + c2] = l0 * state.w[2 * cel.v[0] + c2]
                    + l1 * state.w[2 * cel.v[1] + c2]
                    + l2 * state.w[2 * cel.v[2] + c2];
            }
        }
    }
    Ok(out)
}

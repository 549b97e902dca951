//! Conforming triangle meshes under newest-vertex bisection.
//!
//! Every element stores its vertex triple (a, b, peak) positively oriented,
//! with the reference edge between a and b, plus its ancestry: the index of
//! its root element and the bit path of bisections that produced it.
//! Bisection splits the reference edge at its midpoint m and yields the
//! children (peak, a, m) and (b, peak, m); m becomes the new peak and the
//! children's reference edges are (a, peak) and (peak, b), the edges opposite
//! the newest vertex.
//!
//! `refine` marks the reference edges of the requested elements, closes the
//! marking (an element with any marked edge gets its reference edge marked,
//! to a fixpoint), then splits each element through its marked edges. Each
//! marked edge is split on both sides, so the result is conforming with no
//! hanging nodes and every intermediate state is skipped.
//!
//! Meshes that descend from the same root mesh can be overlaid; the overlay
//! is the coarsest common refinement, computed on the bisection forest and
//! materialized by replaying level-wise refinements from the root mesh.
//!
//! Midpoint vertices are deduplicated by parent edge (the sorted vertex-id
//! pair), never by comparing coordinates.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::report::fmt_f64;
use crate::tensor::Vec2;
use crate::Error;

/// Bisection path from a root element: bit k is the child taken at
/// generation k (0 = first child (peak, a, m), 1 = second child (b, peak, m)).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathBits {
    len: u8,
    bits: u64,
}

impl PathBits {
    pub const ROOT: PathBits = PathBits { len: 0, bits: 0 };

    pub fn child(self, side: u8) -> PathBits {
        assert!(self.len < 64, "bisection depth exceeds 64");
        PathBits {
            len: self.len + 1,
            bits: self.bits | ((side as u64 & 1) << self.len),
        }
    }

    pub fn len(self) -> u32 {
        self.len as u32
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    pub fn is_prefix_of(self, other: PathBits) -> bool {
        if self.len > other.len {
            return false;
        }
        let mask = if self.len == 0 { 0 } else { (1u64 << self.len) - 1 };
        (other.bits & mask) == self.bits
    }

    pub fn parent(self) -> Option<PathBits> {
        if self.len == 0 {
            return None;
        }
        let len = self.len - 1;
        let mask = if len == 0 { 0 } else { (1u64 << len) - 1 };
        Some(PathBits { len, bits: self.bits & mask })
    }
}

/// Identity of an element inside the bisection forest of its root mesh.
pub type ElementKey = (u32, PathBits);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Element {
    /// Vertex ids (a, b, peak); positively oriented, reference edge (a, b).
    pub v: [usize; 3],
    /// Index of the ancestor element in the root mesh.
    pub root: u32,
    /// Bisection path from that ancestor.
    pub path: PathBits,
}

impl Element {
    pub fn key(&self) -> ElementKey {
        (self.root, self.path)
    }

    /// Number of bisections separating the element from its root ancestor.
    pub fn generation(&self) -> u32 {
        self.path.len()
    }

    fn ref_pair(&self) -> (usize, usize) {
        sorted_pair(self.v[0], self.v[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeKind {
    Interior,
    /// Boundary edge with its tag and the index of the root boundary edge
    /// it descends from.
    Boundary(BoundaryKind, u32),
}

#[derive(Clone, Copy, Debug)]
pub struct Edge {
    /// Endpoint vertex ids, lower first.
    pub v: (usize, usize),
    /// Adjacent element ids in ascending order; boundary edges have one.
    pub elems: (usize, Option<usize>),
    pub kind: EdgeKind,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        matches!(self.kind, EdgeKind::Boundary(..))
    }

    pub fn boundary_kind(&self) -> Option<BoundaryKind> {
        match self.kind {
            EdgeKind::Boundary(k, _) => Some(k),
            EdgeKind::Interior => None,
        }
    }
}

/// Immutable data of the root mesh, shared by all meshes refined from it.
#[derive(Debug)]
pub struct RootInfo {
    vertices: Vec<Vec2>,
    elements: Vec<[usize; 3]>,
    /// Root boundary edges, sorted by vertex pair; the index is the root
    /// boundary edge id inherited by all descendants of the edge.
    boundary: Vec<((usize, usize), BoundaryKind)>,
    areas: Vec<f64>,
    fingerprint: u64,
}

impl RootInfo {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn area(&self, root: u32) -> f64 {
        self.areas[root as usize]
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    root: Arc<RootInfo>,
    vertices: Vec<Vec2>,
    elements: Vec<Element>,
    edges: Vec<Edge>,
    edge_ids: HashMap<(usize, usize), usize>,
    /// Current boundary edges: sorted vertex pair -> (tag, root boundary
    /// edge id). Carried through refinement; halves inherit the entry.
    boundary: HashMap<(usize, usize), (BoundaryKind, u32)>,
}

fn sorted_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area2(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// First vertex lying strictly inside the open segment, if any.
fn hanging_vertex(vertices: &[Vec2], edge: (usize, usize)) -> Option<usize> {
    let a = vertices[edge.0];
    let d = vertices[edge.1] - a;
    let len_sq = d.dot(d);
    (0..vertices.len()).find(|&v| {
        if v == edge.0 || v == edge.1 {
            return false;
        }
        let r = vertices[v] - a;
        if d.cross(r).abs() > 1e-12 * len_sq {
            return false;
        }
        let t = d.dot(r) / len_sq;
        t > 1e-12 && t < 1.0 - 1e-12
    })
}

fn fnv1a(h: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *h ^= b as u64;
        *h = h.wrapping_mul(0x100000001b3);
    }
}

impl Mesh {
    /// Builds a root mesh from raw parts. Each triple is reoriented
    /// positively if needed and its reference edge is set to the longest
    /// edge, ties broken by the smallest sorted vertex-id pair.
    pub fn from_parts(
        vertices: Vec<[f64; 2]>,
        triples: Vec<[usize; 3]>,
        boundary: Vec<([usize; 2], BoundaryKind)>,
    ) -> Result<Mesh, Error> {
        Self::build_root(vertices, triples, boundary, true)
    }

    /// Like [`Mesh::from_parts`], but the given vertex order is kept: the
    /// reference edge of each element is (triple[0], triple[1]) and triples
    /// must already be positively oriented. This is the constructor behind
    /// the mesh text format, which stores reference edges via vertex order.
    pub fn from_parts_explicit(
        vertices: Vec<[f64; 2]>,
        triples: Vec<[usize; 3]>,
        boundary: Vec<([usize; 2], BoundaryKind)>,
    ) -> Result<Mesh, Error> {
        Self::build_root(vertices, triples, boundary, false)
    }

    fn build_root(
        vertices: Vec<[f64; 2]>,
        triples: Vec<[usize; 3]>,
        boundary: Vec<([usize; 2], BoundaryKind)>,
        assign_longest_edge: bool,
    ) -> Result<Mesh, Error> {
        let verts: Vec<Vec2> = vertices.iter().map(|&[x, y]| Vec2::new(x, y)).collect();
        if verts.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        // exact duplicates are construction errors
        let mut order: Vec<usize> = (0..verts.len()).collect();
        order.sort_by(|&i, &j| {
            (verts[i].x.to_bits(), verts[i].y.to_bits())
                .cmp(&(verts[j].x.to_bits(), verts[j].y.to_bits()))
        });
        for w in order.windows(2) {
            if verts[w[0]] == verts[w[1]] {
                return Err(Error::InvalidMesh(format!(
                    "vertices {} and {} coincide",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }

        let mut elements = Vec::with_capacity(triples.len());
        for (t, &triple) in triples.iter().enumerate() {
            for &v in &triple {
                if v >= verts.len() {
                    return Err(Error::InvalidMesh(format!(
                        "element {t} references missing vertex {v}"
                    )));
                }
            }
            let [mut a, mut b, c] = triple;
            let s2 = signed_area2(verts[a], verts[b], verts[c]);
            if s2 == 0.0 || !s2.is_finite() {
                return Err(Error::InvalidMesh(format!("element {t} is degenerate")));
            }
            if s2 < 0.0 {
                if !assign_longest_edge {
                    return Err(Error::InvalidMesh(format!(
                        "element {t} is not positively oriented"
                    )));
                }
                std::mem::swap(&mut a, &mut b);
            }
            let v = if assign_longest_edge {
                orient_ref_longest_edge(&verts, [a, b, c])
            } else {
                [a, b, c]
            };
            elements.push(Element { v, root: t as u32, path: PathBits::ROOT });
        }

        let mut boundary_list: Vec<((usize, usize), BoundaryKind)> = boundary
            .iter()
            .map(|&([a, b], k)| (sorted_pair(a, b), k))
            .collect();
        boundary_list.sort();
        for w in boundary_list.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge ({}, {}) listed twice",
                    w[0].0 .0, w[0].0 .1
                )));
            }
        }

        let mut fp = 0xcbf29ce484222325u64;
        fnv1a(&mut fp, &(verts.len() as u64).to_le_bytes());
        for v in &verts {
            fnv1a(&mut fp, &v.x.to_bits().to_le_bytes());
            fnv1a(&mut fp, &v.y.to_bits().to_le_bytes());
        }
        for e in &elements {
            for &v in &e.v {
                fnv1a(&mut fp, &(v as u64).to_le_bytes());
            }
        }
        for &((a, b), k) in &boundary_list {
            fnv1a(&mut fp, &(a as u64).to_le_bytes());
            fnv1a(&mut fp, &(b as u64).to_le_bytes());
            fnv1a(&mut fp, &[k as u8]);
        }

        let areas = elements
            .iter()
            .map(|e| 0.5 * signed_area2(verts[e.v[0]], verts[e.v[1]], verts[e.v[2]]))
            .collect();
        let root = Arc::new(RootInfo {
            vertices: verts,
            elements: elements.iter().map(|e| e.v).collect(),
            boundary: boundary_list,
            areas,
            fingerprint: fp,
        });
        let mesh = Mesh::root_mesh(&root)?;
        mesh.check_conforming()?;
        Ok(mesh)
    }

    /// The generation-zero mesh of a root: one element per root triple.
    fn root_mesh(root: &Arc<RootInfo>) -> Result<Mesh, Error> {
        let elements = root
            .elements
            .iter()
            .enumerate()
            .map(|(t, &v)| Element { v, root: t as u32, path: PathBits::ROOT })
            .collect();
        let boundary = root
            .boundary
            .iter()
            .enumerate()
            .map(|(i, &(pair, kind))| (pair, (kind, i as u32)))
            .collect();
        Mesh::assemble(root.clone(), root.vertices.clone(), elements, boundary)
    }

    /// Builds the edge table and validates the structural invariants.
    fn assemble(
        root: Arc<RootInfo>,
        vertices: Vec<Vec2>,
        elements: Vec<Element>,
        boundary: HashMap<(usize, usize), (BoundaryKind, u32)>,
    ) -> Result<Mesh, Error> {
        if elements.is_empty() {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        let mut edges: Vec<Edge> = Vec::with_capacity(elements.len() * 2);
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::with_capacity(elements.len() * 2);
        for (t, el) in elements.iter().enumerate() {
            let s2 = signed_area2(vertices[el.v[0]], vertices[el.v[1]], vertices[el.v[2]]);
            if !(s2 > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "element {t} is not positively oriented (signed area {})",
                    0.5 * s2
                )));
            }
            for (a, b) in [(el.v[0], el.v[1]), (el.v[1], el.v[2]), (el.v[2], el.v[0])] {
                let pair = sorted_pair(a, b);
                match edge_ids.get(&pair) {
                    None => {
                        edge_ids.insert(pair, edges.len());
                        edges.push(Edge { v: pair, elems: (t, None), kind: EdgeKind::Interior });
                    }
                    Some(&id) => {
                        let e = &mut edges[id];
                        if e.elems.1.is_some() {
                            return Err(Error::InvalidMesh(format!(
                                "edge ({}, {}) belongs to more than two elements",
                                pair.0, pair.1
                            )));
                        }
                        e.elems.1 = Some(t);
                    }
                }
            }
        }
        let mut n_dirichlet = 0usize;
        let mut n_boundary = 0usize;
        for i in 0..edges.len() {
            let pair = edges[i].v;
            if edges[i].elems.1.is_none() {
                n_boundary += 1;
                match boundary.get(&pair) {
                    Some(&(kind, root_edge)) => {
                        edges[i].kind = EdgeKind::Boundary(kind, root_edge);
                        if kind == BoundaryKind::Dirichlet {
                            n_dirichlet += 1;
                        }
                    }
                    None => {
                        // an untagged one-sided edge usually means the mesh
                        // hangs somewhere (a split edge facing an unsplit
                        // neighbor); blame the offending vertex if the sweep
                        // finds one
                        for other in edges.iter() {
                            if let Some(v) = hanging_vertex(&vertices, other.v) {
                                return Err(Error::InvalidMesh(format!(
                                    "vertex {v} hangs on edge ({}, {})",
                                    other.v.0, other.v.1
                                )));
                            }
                        }
                        return Err(Error::InvalidMesh(format!(
                            "boundary edge ({}, {}) has no tag",
                            pair.0, pair.1
                        )));
                    }
                }
            } else if boundary.contains_key(&pair) {
                return Err(Error::InvalidMesh(format!(
                    "edge ({}, {}) is tagged as boundary but lies between two elements",
                    pair.0, pair.1
                )));
            }
        }
        if n_boundary != boundary.len() {
            return Err(Error::InvalidMesh(
                "boundary tags refer to edges that do not exist".into(),
            ));
        }
        if n_dirichlet == 0 {
            return Err(Error::InvalidMesh("no boundary edge is tagged dirichlet".into()));
        }
        Ok(Mesh { root, vertices, elements, edges, edge_ids, boundary })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertex(&self, v: usize) -> Vec2 {
        self.vertices[v]
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, t: usize) -> &Element {
        &self.elements[t]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_ids.get(&sorted_pair(a, b)).copied()
    }

    pub fn root_info(&self) -> &Arc<RootInfo> {
        &self.root
    }

    /// Fingerprint of the root mesh; equal fingerprints mean the meshes live
    /// in the same bisection forest and can be overlaid.
    pub fn root_fingerprint(&self) -> u64 {
        self.root.fingerprint
    }

    pub fn same_root(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.root, &other.root) || self.root.fingerprint == other.root.fingerprint
    }

    /// Equality as triangulations: same root mesh and the same set of
    /// bisection-forest leaves (vertex numbering may differ).
    pub fn same_triangulation(&self, other: &Mesh) -> bool {
        self.same_root(other)
            && self.elements.len() == other.elements.len()
            && {
                let keys = other.key_index_map();
                self.elements.iter().all(|e| keys.contains_key(&e.key()))
            }
    }

    /// Map from element key to element index.
    pub fn key_index_map(&self) -> HashMap<ElementKey, usize> {
        self.elements
            .iter()
            .enumerate()
            .map(|(i, e)| (e.key(), i))
            .collect()
    }

    /// Ids of the three edges of element `t`, reference edge first.
    pub fn element_edge_ids(&self, t: usize) -> [usize; 3] {
        let v = self.elements[t].v;
        [
            self.edge_ids[&sorted_pair(v[0], v[1])],
            self.edge_ids[&sorted_pair(v[1], v[2])],
            self.edge_ids[&sorted_pair(v[2], v[0])],
        ]
    }

    /// Elements adjacent to an edge (the patch omega_E).
    pub fn edge_patch(&self, e: usize) -> Vec<usize> {
        let edge = &self.edges[e];
        match edge.elems.1 {
            Some(second) => vec![edge.elems.0, second],
            None => vec![edge.elems.0],
        }
    }

    /// The element plus its edge neighbors (the patch omega_T), ascending.
    pub fn element_patch(&self, t: usize) -> Vec<usize> {
        let mut out = vec![t];
        for e in self.element_edge_ids(t) {
            for n in self.edge_patch(e) {
                if !out.contains(&n) {
                    out.push(n);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn total_area(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| 0.5 * signed_area2(self.vertices[e.v[0]], self.vertices[e.v[1]], self.vertices[e.v[2]]))
            .sum()
    }

    /// Whether every interior edge is the reference edge of both adjacent
    /// elements or of neither. Newest-vertex bisection terminates for any
    /// assignment; this stricter matching property is reported, not required.
    pub fn initial_assignment_compatible(&self) -> bool {
        self.edges.iter().all(|e| {
            let Some(second) = e.elems.1 else { return true };
            let first_ref = self.elements[e.elems.0].ref_pair() == e.v;
            let second_ref = self.elements[second].ref_pair() == e.v;
            first_ref == second_ref
        })
    }

    /// Full conformity check: positive orientation was enforced at assembly;
    /// here every vertex is tested against the open interior of every edge,
    /// so hanging nodes are rejected no matter how the mesh was produced.
    pub fn check_conforming(&self) -> Result<(), Error> {
        for (id, e) in self.edges.iter().enumerate() {
            let a = self.vertices[e.v.0];
            let b = self.vertices[e.v.1];
            let d = b - a;
            let len_sq = d.dot(d);
            for (v, &p) in self.vertices.iter().enumerate() {
                if v == e.v.0 || v == e.v.1 {
                    continue;
                }
                let r = p - a;
                if d.cross(r).abs() > 1e-12 * len_sq {
                    continue;
                }
                let t = d.dot(r) / len_sq;
                if t > 1e-12 && t < 1.0 - 1e-12 {
                    return Err(Error::InvalidMesh(format!(
                        "vertex {v} hangs on edge {id} = ({}, {})",
                        e.v.0, e.v.1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bisects the marked elements and closes the mesh: the result is
    /// conforming, every marked element is bisected at least once, children
    /// carry generation + 1 with the midpoint of the parent reference edge
    /// as their peak. An empty marking returns the mesh unchanged.
    pub fn refine(&self, marked: &[usize]) -> Result<Mesh, Error> {
        for &t in marked {
            if t >= self.elements.len() {
                return Err(Error::InvalidArgument(format!(
                    "marked element {t} out of range ({} elements)",
                    self.elements.len()
                )));
            }
        }
        if marked.is_empty() {
            return Ok(self.clone());
        }

        // mark reference edges of marked elements, then close: an element
        // with any marked edge must get its reference edge marked too,
        // because a hanging node can only be removed by bisecting through
        // the reference edge. Each pass can only add marks, so this
        // terminates.
        let mut edge_marked = vec![false; self.edges.len()];
        for &t in marked {
            edge_marked[self.element_edge_ids(t)[0]] = true;
        }
        loop {
            let mut changed = false;
            for t in 0..self.elements.len() {
                let ids = self.element_edge_ids(t);
                if !edge_marked[ids[0]] && (edge_marked[ids[1]] || edge_marked[ids[2]]) {
                    edge_marked[ids[0]] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        // one midpoint vertex per marked edge, created in edge-id order
        let mut vertices = self.vertices.clone();
        let mut boundary = self.boundary.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        for (id, marked) in edge_marked.iter().enumerate() {
            if !marked {
                continue;
            }
            let (a, b) = self.edges[id].v;
            let pa = self.vertices[a];
            let pb = self.vertices[b];
            let m = vertices.len();
            vertices.push(Vec2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)));
            midpoint.insert((a, b), m);
            if let Some(info) = boundary.remove(&(a, b)) {
                boundary.insert(sorted_pair(a, m), info);
                boundary.insert(sorted_pair(m, b), info);
            }
        }

        let mut elements = Vec::with_capacity(self.elements.len() + 2 * midpoint.len());
        for el in &self.elements {
            split_into(*el, &midpoint, &mut elements);
        }
        Mesh::assemble(self.root.clone(), vertices, elements, boundary)
    }

    /// Uniform refinement: every element marked.
    pub fn refine_uniform(&self) -> Result<Mesh, Error> {
        let all: Vec<usize> = (0..self.elements.len()).collect();
        self.refine(&all)
    }

    /// The element of the coarser triangulation (given as its key map) that
    /// element `t` descends from or equals, if any.
    pub fn ancestor_in_keys(
        &self,
        t: usize,
        coarser_keys: &HashMap<ElementKey, usize>,
    ) -> Option<usize> {
        let e = &self.elements[t];
        let mut path = Some(e.path);
        while let Some(p) = path {
            if let Some(&i) = coarser_keys.get(&(e.root, p)) {
                return Some(i);
            }
            path = p.parent();
        }
        None
    }

    /// True if `self` is a (not necessarily strict) refinement of `coarser`:
    /// every element of `self` descends from, or equals, an element of
    /// `coarser`.
    pub fn is_refinement_of(&self, coarser: &Mesh) -> bool {
        if !self.same_root(coarser) {
            return false;
        }
        let keys = coarser.key_index_map();
        (0..self.elements.len()).all(|t| self.ancestor_in_keys(t, &keys).is_some())
    }

    /// Element ids of `self` whose element also belongs to `other`
    /// (the intersection of the two triangulations), with the matching id.
    pub fn elements_in_both(&self, other: &Mesh) -> Vec<(usize, usize)> {
        let keys = other.key_index_map();
        self.elements
            .iter()
            .enumerate()
            .filter_map(|(i, e)| keys.get(&e.key()).map(|&j| (i, j)))
            .collect()
    }

    /// Element ids of `self` that do not belong to `other` (the set
    /// difference of the triangulations).
    pub fn elements_not_in(&self, other: &Mesh) -> Vec<usize> {
        let keys = other.key_index_map();
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| !keys.contains_key(&e.key()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Element ids of `finer` descending from (or equal to) element `t`.
    pub fn descendants_in(&self, t: usize, finer: &Mesh) -> Vec<usize> {
        let key = self.elements[t].key();
        finer
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.root == key.0 && key.1.is_prefix_of(e.path))
            .map(|(i, _)| i)
            .collect()
    }

    /// Leaves of the union of the two bisection forests: for each leaf, the
    /// covering element in `self` and in `other`. This is the coarsest
    /// common refinement without materializing a mesh.
    pub fn overlay_leaves(&self, other: &Mesh) -> Result<Vec<OverlayLeaf>, Error> {
        if !self.same_root(other) {
            return Err(Error::IncompatibleRoots);
        }
        let a_keys = self.key_index_map();
        let b_keys = other.key_index_map();
        let mut out = Vec::with_capacity(self.elements.len().max(other.elements.len()));
        for root in 0..self.root.elements.len() as u32 {
            descend_union(root, PathBits::ROOT, None, None, &a_keys, &b_keys, &mut out);
        }
        Ok(out)
    }

    /// The coarsest common refinement as a mesh, replayed from the root mesh
    /// by refining every element that the union forest still subdivides.
    /// The closure never adds elements here because the target is a
    /// conforming triangulation.
    pub fn overlay(&self, other: &Mesh) -> Result<Mesh, Error> {
        let leaves = self.overlay_leaves(other)?;
        let target: HashSet<ElementKey> = leaves.iter().map(|l| (l.root, l.path)).collect();
        let mut mesh = Mesh::root_mesh(&self.root)?;
        loop {
            let marked: Vec<usize> = mesh
                .elements
                .iter()
                .enumerate()
                .filter(|(_, e)| !target.contains(&e.key()))
                .map(|(i, _)| i)
                .collect();
            if marked.is_empty() {
                break;
            }
            mesh = mesh.refine(&marked)?;
        }
        if mesh.elements.len() != target.len() {
            return Err(Error::InvalidMesh(
                "overlay replay produced a different triangulation".into(),
            ));
        }
        Ok(mesh)
    }

    /// Per-element and per-edge geometric data.
    pub fn geometry(&self) -> MeshGeometry {
        let n = self.elements.len();
        let mut area = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut rho = vec![0.0; n];
        for (t, el) in self.elements.iter().enumerate() {
            let p = [self.vertices[el.v[0]], self.vertices[el.v[1]], self.vertices[el.v[2]]];
            let a = 0.5 * signed_area2(p[0], p[1], p[2]);
            let l0 = (p[1] - p[0]).norm();
            let l1 = (p[2] - p[1]).norm();
            let l2 = (p[0] - p[2]).norm();
            area[t] = a;
            h[t] = l0.max(l1).max(l2);
            rho[t] = 4.0 * a / (l0 + l1 + l2);
        }
        let mut edge_len = vec![0.0; self.edges.len()];
        let mut edge_normal = vec![Vec2::ZERO; self.edges.len()];
        for (id, e) in self.edges.iter().enumerate() {
            let a = self.vertices[e.v.0];
            let b = self.vertices[e.v.1];
            let d = b - a;
            let len = d.norm();
            edge_len[id] = len;
            let mut n = Vec2::new(d.y / len, -d.x / len);
            // orient from the lower adjacent element to the higher one,
            // outward on the boundary
            let el = &self.elements[e.elems.0];
            let centroid = Vec2::new(
                (self.vertices[el.v[0]].x + self.vertices[el.v[1]].x + self.vertices[el.v[2]].x) / 3.0,
                (self.vertices[el.v[0]].y + self.vertices[el.v[1]].y + self.vertices[el.v[2]].y) / 3.0,
            );
            let mid = Vec2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
            if (mid - centroid).dot(n) < 0.0 {
                n = -n;
            }
            edge_normal[id] = n;
        }
        let total_area = area.iter().sum();
        MeshGeometry { area, h, rho, edge_len, edge_normal, total_area }
    }

    /// Serializes in the `plastafem-mesh v1` text format. Reading the output
    /// back and writing it again reproduces the bytes exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("plastafem-mesh v1\n");
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {}", fmt_f64(v.x), fmt_f64(v.y));
        }
        let _ = writeln!(s, "elements {}", self.elements.len());
        for (i, e) in self.elements.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", e.v[0], e.v[1], e.v[2]);
        }
        let mut boundary: Vec<(&(usize, usize), &(BoundaryKind, u32))> = self.boundary.iter().collect();
        boundary.sort();
        let _ = writeln!(s, "boundary {}", boundary.len());
        for (&(a, b), &(kind, _)) in boundary {
            let tag = match kind {
                BoundaryKind::Dirichlet => "dirichlet",
                BoundaryKind::Neumann => "neumann",
            };
            let _ = writeln!(s, "{a} {b} {tag}");
        }
        s
    }

    /// Parses the `plastafem-mesh v1` text format. `#` starts a comment.
    /// The loaded mesh is a fresh root mesh: ancestry is not stored in the
    /// format, but reference edges are (as the vertex order a b peak).
    pub fn from_text(text: &str, path_for_errors: &str) -> Result<Mesh, Error> {
        let err = |line: usize, message: String| Error::Parse {
            path: path_for_errors.to_string(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        if header != "plastafem-mesh v1" {
            return Err(err(ln, format!("expected 'plastafem-mesh v1', found '{header}'")));
        }

        let section_count = |ln: usize, line: &str, name: &str| -> Result<usize, Error> {
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(w), Some(n), None) if w == name => n
                    .parse::<usize>()
                    .map_err(|_| err(ln, format!("invalid {name} count '{n}'"))),
                _ => Err(err(ln, format!("expected '{name} N', found '{line}'"))),
            }
        };

        let (ln, line) = next("vertices section")?;
        let nv = section_count(ln, line, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for i in 0..nv {
            let (ln, line) = next("vertex line")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(ln, format!("expected 'id x y', found '{line}'")));
            }
            if fields[0].parse::<usize>().ok() != Some(i) {
                return Err(err(ln, format!("vertex ids must be dense and ascending; expected {i}")));
            }
            let x: f64 = fields[1].parse().map_err(|_| err(ln, format!("invalid number '{}'", fields[1])))?;
            let y: f64 = fields[2].parse().map_err(|_| err(ln, format!("invalid number '{}'", fields[2])))?;
            vertices.push([x, y]);
        }

        let (ln, line) = next("elements section")?;
        let ne = section_count(ln, line, "elements")?;
        let mut triples = Vec::with_capacity(ne);
        for i in 0..ne {
            let (ln, line) = next("element line")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(err(ln, format!("expected 'id a b peak', found '{line}'")));
            }
            if fields[0].parse::<usize>().ok() != Some(i) {
                return Err(err(ln, format!("element ids must be dense and ascending; expected {i}")));
            }
            let mut t = [0usize; 3];
            for (k, f) in fields[1..].iter().enumerate() {
                t[k] = f.parse().map_err(|_| err(ln, format!("invalid vertex id '{f}'")))?;
            }
            triples.push(t);
        }

        let (ln, line) = next("boundary section")?;
        let nb = section_count(ln, line, "boundary")?;
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (ln, line) = next("boundary line")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(ln, format!("expected 'v0 v1 tag', found '{line}'")));
            }
            let a: usize = fields[0].parse().map_err(|_| err(ln, format!("invalid vertex id '{}'", fields[0])))?;
            let b: usize = fields[1].parse().map_err(|_| err(ln, format!("invalid vertex id '{}'", fields[1])))?;
            let kind = match fields[2] {
                "dirichlet" => BoundaryKind::Dirichlet,
                "neumann" => BoundaryKind::Neumann,
                other => return Err(err(ln, format!("unknown boundary tag '{other}'"))),
            };
            boundary.push(([a, b], kind));
        }
        if let Some((ln, line)) = lines.next() {
            return Err(err(ln, format!("unexpected trailing content '{line}'")));
        }
        Mesh::from_parts_explicit(vertices, triples, boundary)
    }
}

fn orient_ref_longest_edge(verts: &[Vec2], t: [usize; 3]) -> [usize; 3] {
    // edges as (length, sorted pair, opposite vertex)
    let mut best: Option<(f64, (usize, usize), usize)> = None;
    for k in 0..3 {
        let (u, v, w) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
        let len = (verts[v] - verts[u]).norm();
        let pair = sorted_pair(u, v);
        let better = match best {
            None => true,
            Some((bl, bp, _)) => len > bl || (len == bl && pair < bp),
        };
        if better {
            best = Some((len, pair, w));
        }
    }
    let (_, (u, v), w) = best.unwrap();
    // keep the positive orientation
    if signed_area2(verts[u], verts[v], verts[w]) > 0.0 {
        [u, v, w]
    } else {
        [v, u, w]
    }
}

fn split_into(el: Element, midpoint: &HashMap<(usize, usize), usize>, out: &mut Vec<Element>) {
    match midpoint.get(&el.ref_pair()) {
        None => out.push(el),
        Some(&m) => {
            let [a, b, peak] = el.v;
            split_into(
                Element { v: [peak, a, m], root: el.root, path: el.path.child(0) },
                midpoint,
                out,
            );
            split_into(
                Element { v: [b, peak, m], root: el.root, path: el.path.child(1) },
                midpoint,
                out,
            );
        }
    }
}

/// One leaf of the union of two bisection forests.
#[derive(Clone, Copy, Debug)]
pub struct OverlayLeaf {
    pub root: u32,
    pub path: PathBits,
    /// Covering element id in the first mesh.
    pub in_a: usize,
    /// Covering element id in the second mesh.
    pub in_b: usize,
}

impl OverlayLeaf {
    /// Exact leaf area: bisection halves areas, so it is the root element
    /// area scaled by 2^-generation.
    pub fn area(&self, root: &RootInfo) -> f64 {
        self.root_area_scaled(root.area(self.root))
    }

    fn root_area_scaled(&self, root_area: f64) -> f64 {
        root_area * (0.5f64).powi(self.path.len() as i32)
    }
}

fn descend_union(
    root: u32,
    path: PathBits,
    a_cover: Option<usize>,
    b_cover: Option<usize>,
    a_keys: &HashMap<ElementKey, usize>,
    b_keys: &HashMap<ElementKey, usize>,
    out: &mut Vec<OverlayLeaf>,
) {
    let a = a_cover.or_else(|| a_keys.get(&(root, path)).copied());
    let b = b_cover.or_else(|| b_keys.get(&(root, path)).copied());
    if let (Some(ia), Some(ib)) = (a, b) {
        out.push(OverlayLeaf { root, path, in_a: ia, in_b: ib });
        return;
    }
    descend_union(root, path.child(0), a, b, a_keys, b_keys, out);
    descend_union(root, path.child(1), a, b, a_keys, b_keys, out);
}

#[derive(Clone, Debug)]
pub struct MeshGeometry {
    /// Element areas.
    pub area: Vec<f64>,
    /// Element diameters (longest edge).
    pub h: Vec<f64>,
    /// Inscribed circle diameters, 4|T| / perimeter.
    pub rho: Vec<f64>,
    pub edge_len: Vec<f64>,
    /// Unit normals; interior edges point from the lower adjacent element id
    /// to the higher, boundary edges point outward.
    pub edge_normal: Vec<Vec2>,
    pub total_area: f64,
}

/// The unit square (0,1)^2 split into two triangles by the diagonal from
/// (0,0) to (1,1); the diagonal is the longest edge of both, so it becomes
/// both reference edges.
pub fn unit_square_mesh(
    tag: impl Fn(Vec2, Vec2) -> BoundaryKind,
) -> Result<Mesh, Error> {
    let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let triples = vec![[0, 1, 2], [0, 2, 3]];
    let boundary = tag_edges(&vertices, &[[0, 1], [1, 2], [2, 3], [3, 0]], tag);
    Mesh::from_parts(vertices, triples, boundary)
}

/// The L-shaped domain (-1,1)^2 minus the closed fourth-quadrant square,
/// three unit squares each split by the diagonal pointing at the re-entrant
/// corner side.
pub fn l_shape_mesh(tag: impl Fn(Vec2, Vec2) -> BoundaryKind) -> Result<Mesh, Error> {
    let vertices = vec![
        [-1.0, -1.0],
        [0.0, -1.0],
        [0.0, 0.0],
        [-1.0, 0.0],
        [0.0, 1.0],
        [-1.0, 1.0],
        [1.0, 0.0],
        [1.0, 1.0],
    ];
    let triples = vec![
        [0, 1, 2],
        [0, 2, 3],
        [3, 2, 4],
        [3, 4, 5],
        [2, 6, 7],
        [2, 7, 4],
    ];
    let boundary = tag_edges(
        &vertices,
        &[[0, 1], [1, 2], [0, 3], [3, 5], [5, 4], [4, 7], [6, 7], [2, 6]],
        tag,
    );
    Mesh::from_parts(vertices, triples, boundary)
}

fn tag_edges(
    vertices: &[[f64; 2]],
    edges: &[[usize; 2]],
    tag: impl Fn(Vec2, Vec2) -> BoundaryKind,
) -> Vec<([usize; 2], BoundaryKind)> {
    edges
        .iter()
        .map(|&[a, b]| {
            let pa = Vec2::new(vertices[a][0], vertices[a][1]);
            let pb = Vec2::new(vertices[b][0], vertices[b][1]);
            ([a, b], tag(pa, pb))
        })
        .collect()
}

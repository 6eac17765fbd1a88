//! Lagrange finite element spaces on simplicial meshes: degree-of-freedom maps,
//! interpolation, point evaluation, boundary machinery, and the
//! encode-process-decode operator over DoF vectors.

mod basis;

pub use basis::{local_edges, local_faces, ElementBasis, LocalEntity, Tabulation};

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{cell_facets, Mesh};
use crate::neural::{MlpError, MlpParams};
use crate::quadrature::{simplex_rule, QuadratureRule};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FespaceError {
    #[error("unsupported polynomial degree {0} (expected 1..=3)")]
    InvalidDegree(usize),
    #[error("dof vector length {got} does not match ndof {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("point {index} lies outside every cell")]
    PointLocation { index: usize },
    #[error("dof vector contains a non-finite entry")]
    NonFinite,
    #[error("processor width mismatch: {0}")]
    Processor(#[from] MlpError),
    #[error("unknown boundary tag {0}")]
    UnknownTag(u32),
}

/// Scalar- or vector-valued space; vectors carry `mesh.dim` components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueShape {
    Scalar,
    Vector,
}

/// Affine geometry of one cell.
#[derive(Debug, Clone)]
pub struct CellGeometry<S> {
    pub origin: [S; 3],
    /// jac[r][c] = d x_r / d xi_c
    pub jac: [[S; 3]; 3],
    /// Determinant (positive for consistently oriented cells).
    pub det: S,
    /// inv_t[r][c] = (J^{-T})[r][c]; physical gradients are inv_t * ref gradients.
    pub inv_t: [[S; 3]; 3],
}

impl<S: Scalar> CellGeometry<S> {
    pub fn map_to_physical(&self, xi: &[S; 3], dim: usize) -> [S; 3] {
        let mut x = self.origin;
        for r in 0..dim {
            for c in 0..dim {
                x[r] += self.jac[r][c] * xi[c];
            }
        }
        x
    }

    pub fn map_to_reference(&self, x: &[S; 3], dim: usize) -> [S; 3] {
        let mut xi = [S::zero(); 3];
        for r in 0..dim {
            for c in 0..dim {
                // (J^{-1})[r][c] = inv_t[c][r]
                xi[r] += self.inv_t[c][r] * (x[c] - self.origin[c]);
            }
        }
        xi
    }
}

/// Lagrange finite element space over an immutable mesh.
pub struct FunctionSpace<S: Scalar> {
    pub mesh: Arc<Mesh<S>>,
    pub degree: usize,
    pub value_shape: ValueShape,
    pub components: usize,
    pub basis: ElementBasis,
    /// Number of scalar basis nodes.
    pub nnodes: usize,
    /// Total degrees of freedom (= nnodes * components).
    pub ndof: usize,
    cell_nodes: Vec<Vec<usize>>,
    pub node_coords: Vec<[S; 3]>,
    edge_verts: Vec<[usize; 2]>,
    face_verts: Vec<[usize; 3]>,
    cell_neighbors: Vec<[usize; 4]>,
    /// Owning cell of each boundary facet.
    facet_owner: Vec<usize>,
}

impl<S: Scalar> FunctionSpace<S> {
    pub fn build(mesh: Arc<Mesh<S>>, degree: usize, value_shape: ValueShape) -> Result<Arc<Self>, FespaceError> {
        if !(1..=3).contains(&degree) {
            return Err(FespaceError::InvalidDegree(degree));
        }
        let dim = mesh.dim;
        let components = match value_shape {
            ValueShape::Scalar => 1,
            ValueShape::Vector => dim,
        };
        let basis = ElementBasis::new(dim, degree);

        let mut edge_map: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        let mut face_map: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        for cell in &mesh.cells {
            for &[u, v] in local_edges(dim) {
                let (a, b) = (cell[u], cell[v]);
                let key = [a.min(b), a.max(b)];
                let next = edge_map.len();
                edge_map.entry(key).or_insert(next);
            }
            for &[u, v, w] in local_faces(dim) {
                let mut key = [cell[u], cell[v], cell[w]];
                key.sort_unstable();
                let next = face_map.len();
                face_map.entry(key).or_insert(next);
            }
        }
        let mut edge_verts = vec![[0usize; 2]; edge_map.len()];
        for (k, &id) in &edge_map {
            edge_verts[id] = *k;
        }
        let mut face_verts = vec![[0usize; 3]; face_map.len()];
        for (k, &id) in &face_map {
            face_verts[id] = *k;
        }

        let nv = mesh.n_vertices();
        let ne = edge_verts.len();
        let nf = face_verts.len();
        let per_edge = degree - 1;
        let per_face = usize::from(degree == 3 && dim == 3);
        let per_cell = usize::from(degree == 3 && dim == 2);
        let edge_base = nv;
        let face_base = edge_base + ne * per_edge;
        let cell_base = face_base + nf * per_face;
        let nnodes = cell_base + mesh.n_cells() * per_cell;

        let mut cell_nodes = Vec::with_capacity(mesh.n_cells());
        let mut node_coords = vec![[S::zero(); 3]; nnodes];
        for (ci, cell) in mesh.cells.iter().enumerate() {
            let geo = cell_geometry(&mesh, ci);
            let mut locals = Vec::with_capacity(basis.n_basis());
            for (ln, ent) in basis.entities.iter().enumerate() {
                let node = match *ent {
                    LocalEntity::Vertex(k) => cell[k],
                    LocalEntity::Edge { edge, along } => {
                        let [u, v] = local_edges(dim)[edge];
                        let (gu, gv) = (cell[u], cell[v]);
                        let key = [gu.min(gv), gu.max(gv)];
                        let ge = edge_map[&key];
                        // global edge nodes run from the smaller to the larger vertex id
                        let t = if gu < gv { along } else { per_edge - 1 - along };
                        edge_base + ge * per_edge + t
                    }
                    LocalEntity::Face(f) => {
                        let [u, v, w] = local_faces(dim)[f];
                        let mut key = [cell[u], cell[v], cell[w]];
                        key.sort_unstable();
                        face_base + face_map[&key]
                    }
                    LocalEntity::Interior => cell_base + ci,
                };
                let refc = basis.nodes[ln];
                node_coords[node] = geo.map_to_physical(&[S::of(refc[0]), S::of(refc[1]), S::of(refc[2])], dim);
                locals.push(node);
            }
            cell_nodes.push(locals);
        }

        // neighbor across each local facet, for point-location walking
        let incidence = mesh.facet_incidence();
        let mut cell_neighbors = vec![[usize::MAX; 4]; mesh.n_cells()];
        for (ci, cell) in mesh.cells.iter().enumerate() {
            for (k, local) in cell_facets(dim).iter().enumerate() {
                let mut verts = [usize::MAX; 3];
                for (slot, &lv) in verts.iter_mut().zip(local.iter()).take(dim) {
                    *slot = cell[lv];
                }
                let mut key = verts;
                key[..dim].sort_unstable();
                if let Some(cells) = incidence.get(&key) {
                    for &other in cells {
                        if other != ci {
                            cell_neighbors[ci][k] = other;
                        }
                    }
                }
            }
        }
        let mut facet_owner = Vec::with_capacity(mesh.boundary_facets.len());
        for (verts, _) in &mesh.boundary_facets {
            let mut key = [usize::MAX; 3];
            key[..dim].copy_from_slice(&verts[..dim]);
            key[..dim].sort_unstable();
            facet_owner.push(incidence[&key][0]);
        }

        Ok(Arc::new(Self {
            mesh,
            degree,
            value_shape,
            components,
            basis,
            nnodes,
            ndof: nnodes * components,
            cell_nodes,
            node_coords,
            edge_verts,
            face_verts,
            cell_neighbors,
            facet_owner,
        }))
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    /// Scalar node ids of a cell in local basis order.
    pub fn cell_node_ids(&self, c: usize) -> &[usize] {
        &self.cell_nodes[c]
    }

    /// Global dof index of (scalar node, component).
    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * self.components + comp
    }

    /// Global dof indices of a cell, interleaved per node: (node0 c0, node0 c1, ...).
    pub fn cell_dofs(&self, c: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cell_nodes[c].len() * self.components);
        for &n in &self.cell_nodes[c] {
            for comp in 0..self.components {
                out.push(self.dof(n, comp));
            }
        }
        out
    }

    pub fn geometry(&self, c: usize) -> CellGeometry<S> {
        cell_geometry(&self.mesh, c)
    }

    /// Quadrature rule on this space's reference cell.
    pub fn cell_rule(&self, quad_degree: usize) -> QuadratureRule<S> {
        simplex_rule(self.mesh.dim, quad_degree)
    }

    /// Tabulates the basis at reference points.
    pub fn tabulate(&self, points: &[[S; 3]]) -> Tabulation<S> {
        self.basis.tabulate(points)
    }

    /// Scalar node ids lying on boundary facets with the given tag.
    pub fn nodes_on_tag(&self, tag: u32) -> Result<Vec<usize>, FespaceError> {
        if !self.mesh.legend.contains(tag) {
            return Err(FespaceError::UnknownTag(tag));
        }
        let dim = self.mesh.dim;
        let per_edge = self.degree - 1;
        let edge_base = self.mesh.n_vertices();
        let mut edge_ids: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for (id, ev) in self.edge_verts.iter().enumerate() {
            edge_ids.insert(*ev, id);
        }
        let mut face_ids: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        for (id, fv) in self.face_verts.iter().enumerate() {
            face_ids.insert(*fv, id);
        }
        let face_base = edge_base + self.edge_verts.len() * per_edge;

        let mut nodes = Vec::new();
        for (verts, t) in &self.mesh.boundary_facets {
            if *t != tag {
                continue;
            }
            for &v in verts.iter().take(dim) {
                nodes.push(v);
            }
            if per_edge > 0 {
                let mut push_edge = |a: usize, b: usize| {
                    let key = [a.min(b), a.max(b)];
                    let ge = edge_ids[&key];
                    for t in 0..per_edge {
                        nodes.push(edge_base + ge * per_edge + t);
                    }
                };
                if dim == 2 {
                    push_edge(verts[0], verts[1]);
                } else {
                    push_edge(verts[0], verts[1]);
                    push_edge(verts[0], verts[2]);
                    push_edge(verts[1], verts[2]);
                }
            }
            if dim == 3 && self.degree == 3 {
                let mut key = [verts[0], verts[1], verts[2]];
                key.sort_unstable();
                nodes.push(face_base + face_ids[&key]);
            }
        }
        nodes.sort_unstable();
        nodes.dedup();
        Ok(nodes)
    }

    /// Precomputed boundary integration data for all facets with the given tag.
    pub fn facet_integration(&self, tag: u32, quad_degree: usize) -> Result<Vec<FacetIntegration<S>>, FespaceError> {
        if !self.mesh.legend.contains(tag) {
            return Err(FespaceError::UnknownTag(tag));
        }
        let dim = self.mesh.dim;
        let rule: QuadratureRule<S> = simplex_rule(dim - 1, quad_degree);
        let ref_measure = if dim == 2 { 1.0 } else { 0.5 };
        let mut out = Vec::new();
        for (fi, (verts, t)) in self.mesh.boundary_facets.iter().enumerate() {
            if *t != tag {
                continue;
            }
            let cell = self.facet_owner[fi];
            let cvs = self.mesh.cell_vertices(cell);
            // reference coordinates of the facet's vertices inside the owner cell
            let ref_of = |g: usize| -> [S; 3] {
                let lv = cvs.iter().position(|&v| v == g).expect("facet vertex in owner cell");
                let mut r = [S::zero(); 3];
                if lv > 0 {
                    r[lv - 1] = S::one();
                }
                r
            };
            let refs: Vec<[S; 3]> = verts.iter().take(dim).map(|&g| ref_of(g)).collect();
            let phys: Vec<[S; 3]> = verts.iter().take(dim).map(|&g| self.mesh.vertices[g]).collect();
            let measure = if dim == 2 {
                let d = [phys[1][0] - phys[0][0], phys[1][1] - phys[0][1], phys[1][2] - phys[0][2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            } else {
                let u = [phys[1][0] - phys[0][0], phys[1][1] - phys[0][1], phys[1][2] - phys[0][2]];
                let v = [phys[2][0] - phys[0][0], phys[2][1] - phys[0][1], phys[2][2] - phys[0][2]];
                let cx = u[1] * v[2] - u[2] * v[1];
                let cy = u[2] * v[0] - u[0] * v[2];
                let cz = u[0] * v[1] - u[1] * v[0];
                (cx * cx + cy * cy + cz * cz).sqrt() * S::of(0.5)
            };
            let scale = measure / S::of(ref_measure);
            let mut cell_ref_points = Vec::with_capacity(rule.len());
            let mut phys_points = Vec::with_capacity(rule.len());
            let mut weights = Vec::with_capacity(rule.len());
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let mut lam = [S::zero(); 3];
                lam[0] = S::one();
                for k in 0..dim - 1 {
                    lam[k + 1] = q[k];
                    lam[0] = lam[0] - q[k];
                }
                let mut rp = [S::zero(); 3];
                let mut pp = [S::zero(); 3];
                for (k, l) in lam.iter().enumerate().take(dim) {
                    for r in 0..3 {
                        rp[r] += *l * refs[k][r];
                        pp[r] += *l * phys[k][r];
                    }
                }
                cell_ref_points.push(rp);
                phys_points.push(pp);
                weights.push(*w * scale);
            }
            out.push(FacetIntegration { facet: fi, cell, measure, cell_ref_points, phys_points, weights });
        }
        Ok(out)
    }

    /// Locates the cell containing `x` by walking from `hint`, falling back to
    /// a full scan for non-convex domains. Tolerance 1e-10 on barycentric
    /// coordinates.
    pub fn locate_cell(&self, x: &[S; 3], hint: usize) -> Option<(usize, [S; 3])> {
        let dim = self.mesh.dim;
        let tol = S::of(-1e-10);
        let bary = |c: usize| -> ([S; 4], [S; 3]) {
            let geo = self.geometry(c);
            let xi = geo.map_to_reference(x, dim);
            let mut lam = [S::zero(); 4];
            lam[0] = S::one();
            for k in 0..dim {
                lam[k + 1] = xi[k];
                lam[0] = lam[0] - xi[k];
            }
            (lam, xi)
        };
        let mut c = hint.min(self.n_cells() - 1);
        let mut steps = 0usize;
        loop {
            let (lam, xi) = bary(c);
            let mut worst = S::zero();
            let mut worst_k = usize::MAX;
            for (k, l) in lam.iter().enumerate().take(dim + 1) {
                if *l < worst {
                    worst = *l;
                    worst_k = k;
                }
            }
            if worst >= tol {
                return Some((c, xi));
            }
            steps += 1;
            if steps > 2 * self.n_cells() {
                break;
            }
            let next = self.cell_neighbors[c][worst_k];
            if next == usize::MAX {
                break;
            }
            c = next;
        }
        // fallback scan
        for c in 0..self.n_cells() {
            let (lam, xi) = bary(c);
            if lam.iter().take(dim + 1).all(|l| *l >= tol) {
                return Some((c, xi));
            }
        }
        None
    }
}

/// Boundary integration data for one facet.
pub struct FacetIntegration<S> {
    pub facet: usize,
    pub cell: usize,
    pub measure: S,
    pub cell_ref_points: Vec<[S; 3]>,
    pub phys_points: Vec<[S; 3]>,
    /// Quadrature weights already scaled by the physical facet measure.
    pub weights: Vec<S>,
}

/// Finite element function: a DoF vector over a space.
#[derive(Clone)]
pub struct FEFunction<S: Scalar> {
    pub space: Arc<FunctionSpace<S>>,
    pub dofs: Vec<S>,
}

impl<S: Scalar> FEFunction<S> {
    pub fn zero(space: Arc<FunctionSpace<S>>) -> Self {
        let n = space.ndof;
        Self { space, dofs: vec![S::zero(); n] }
    }
}

/// Nodal interpolation: DoF values are evaluations of `f` at the basis nodes.
/// `f` receives the node position and writes one value per component.
pub fn interpolate<S: Scalar>(
    space: &Arc<FunctionSpace<S>>,
    mut f: impl FnMut(&[S; 3], &mut [S]),
) -> FEFunction<S> {
    let mut dofs = vec![S::zero(); space.ndof];
    let mut buf = vec![S::zero(); space.components];
    for (node, coords) in space.node_coords.iter().enumerate() {
        f(coords, &mut buf);
        for (comp, v) in buf.iter().enumerate() {
            dofs[space.dof(node, comp)] = *v;
        }
    }
    FEFunction { space: space.clone(), dofs }
}

/// Evaluates `f` at arbitrary physical points (one value vector per point).
pub fn evaluate_at_points<S: Scalar>(f: &FEFunction<S>, points: &[[S; 3]]) -> Result<Vec<Vec<S>>, FespaceError> {
    let space = &f.space;
    let mut out = Vec::with_capacity(points.len());
    let mut hint = 0usize;
    for (i, x) in points.iter().enumerate() {
        let (cell, xi) = space.locate_cell(x, hint).ok_or(FespaceError::PointLocation { index: i })?;
        hint = cell;
        let tab = space.tabulate(&[xi]);
        let nodes = space.cell_node_ids(cell);
        let mut vals = vec![S::zero(); space.components];
        for (b, &node) in nodes.iter().enumerate() {
            let phi = tab.values[b];
            for (comp, v) in vals.iter_mut().enumerate() {
                *v += phi * f.dofs[space.dof(node, comp)];
            }
        }
        out.push(vals);
    }
    Ok(out)
}

/// Extracts the DoF vector (the encoder of the operator pipeline).
pub fn encode<S: Scalar>(f: &FEFunction<S>) -> Vec<S> {
    f.dofs.clone()
}

/// Rebuilds a function from DoFs (the decoder of the operator pipeline).
pub fn decode<S: Scalar>(space: &Arc<FunctionSpace<S>>, dofs: Vec<S>) -> Result<FEFunction<S>, FespaceError> {
    if dofs.len() != space.ndof {
        return Err(FespaceError::WidthMismatch { expected: space.ndof, got: dofs.len() });
    }
    if dofs.iter().any(|v| !v.is_finite()) {
        return Err(FespaceError::NonFinite);
    }
    Ok(FEFunction { space: space.clone(), dofs })
}

/// Encode-process-decode: runs the processor network on the input DoF vector
/// and decodes the output into the decoder space. The result is a finite
/// element function, evaluable at any point of the output domain.
pub fn spon_apply<S: Scalar>(
    f: &FEFunction<S>,
    processor: &MlpParams<S>,
    decoder_space: &Arc<FunctionSpace<S>>,
) -> Result<FEFunction<S>, FespaceError> {
    let coeffs = processor.forward(&encode(f))?;
    decode(decoder_space, coeffs)
}

/// L2 norm of (f - exact) over the mesh via quadrature of the given degree.
pub fn l2_error<S: Scalar>(
    f: &FEFunction<S>,
    quad_degree: usize,
    mut exact: impl FnMut(&[S; 3], &mut [S]),
) -> S {
    let space = &f.space;
    let dim = space.mesh.dim;
    let rule = space.cell_rule(quad_degree);
    let tab = space.tabulate(&rule.points);
    let mut buf = vec![S::zero(); space.components];
    let mut acc = S::zero();
    for c in 0..space.n_cells() {
        let geo = space.geometry(c);
        let nodes = space.cell_node_ids(c);
        for (q, w) in rule.weights.iter().enumerate() {
            let xq = geo.map_to_physical(&rule.points[q], dim);
            exact(&xq, &mut buf);
            for comp in 0..space.components {
                let mut v = S::zero();
                for (b, &node) in nodes.iter().enumerate() {
                    v += tab.values[q * tab.n_basis + b] * f.dofs[space.dof(node, comp)];
                }
                let d = v - buf[comp];
                acc += *w * geo.det.abs() * d * d;
            }
        }
    }
    acc.sqrt()
}

/// L2 norm of f itself.
pub fn l2_norm<S: Scalar>(f: &FEFunction<S>, quad_degree: usize) -> S {
    let comps = f.space.components;
    l2_error(f, quad_degree, |_, out| out[..comps].fill(S::zero()))
}

fn cell_geometry<S: Scalar>(mesh: &Mesh<S>, c: usize) -> CellGeometry<S> {
    let dim = mesh.dim;
    let verts = mesh.cell_vertices(c);
    let origin = mesh.vertices[verts[0]];
    let mut jac = [[S::zero(); 3]; 3];
    for col in 0..dim {
        let v = &mesh.vertices[verts[col + 1]];
        for r in 0..dim {
            jac[r][col] = v[r] - origin[r];
        }
    }
    let (det, inv) = match dim {
        2 => {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            let d = S::one() / det;
            let mut inv = [[S::zero(); 3]; 3];
            inv[0][0] = jac[1][1] * d;
            inv[0][1] = -jac[0][1] * d;
            inv[1][0] = -jac[1][0] * d;
            inv[1][1] = jac[0][0] * d;
            (det, inv)
        }
        3 => {
            let m = &jac;
            let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
            let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
            let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
            let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
            let d = S::one() / det;
            let mut inv = [[S::zero(); 3]; 3];
            inv[0][0] = c00 * d;
            inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * d;
            inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * d;
            inv[1][0] = c01 * d;
            inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * d;
            inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * d;
            inv[2][0] = c02 * d;
            inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * d;
            inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * d;
            (det, inv)
        }
        _ => unreachable!(),
    };
    // inv_t[r][c] = inv[c][r]
    let mut inv_t = [[S::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            inv_t[r][c] = inv[c][r];
        }
    }
    CellGeometry { origin, jac, det, inv_t }
}

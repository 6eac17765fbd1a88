//! Residual and Jacobian assembly for nonlinear elastostatics and implicit-Euler
//! transient heat conduction, Dirichlet elimination, a damped Newton solver,
//! and reaction-force extraction. Element locals are computed in parallel and
//! scattered in cell order, so assembled values do not depend on thread count.

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::constitutive::{voigt_len, ConstitutiveError, ConstitutiveModel, SymTensor};
use crate::fespace::{FespaceError, FunctionSpace, ValueShape};
use crate::scalar::{norm2, Scalar};
use crate::sparse::{rcm_ordering, BandLu, SolveError, SparseMatrix};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing properties for region tag {0}")]
    MissingRegion(u32),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error(transparent)]
    Fespace(#[from] FespaceError),
}

#[derive(Debug, Error)]
pub enum SolverFailure {
    #[error("newton did not converge within {iterations} iterations (residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error(transparent)]
    Linear(#[from] SolveError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Dirichlet constraints: dof indices with prescribed values.
#[derive(Debug, Clone)]
pub struct DirichletBC<S> {
    pub dofs: Vec<usize>,
    pub values: Vec<S>,
    pub tag: u32,
}

impl<S: Scalar> DirichletBC<S> {
    /// Constrains one component of every node on a tagged boundary to `f(x)`.
    pub fn component_on_tag(
        space: &FunctionSpace<S>,
        tag: u32,
        comp: usize,
        mut f: impl FnMut(&[S; 3]) -> S,
    ) -> Result<Self, FespaceError> {
        let nodes = space.nodes_on_tag(tag)?;
        let mut dofs = Vec::with_capacity(nodes.len());
        let mut values = Vec::with_capacity(nodes.len());
        for n in nodes {
            dofs.push(space.dof(n, comp));
            values.push(f(&space.node_coords[n]));
        }
        Ok(Self { dofs, values, tag })
    }

    /// Constrains all components of every node on a tagged boundary.
    pub fn vector_on_tag(
        space: &FunctionSpace<S>,
        tag: u32,
        mut f: impl FnMut(&[S; 3], &mut [S]),
    ) -> Result<Self, FespaceError> {
        let nodes = space.nodes_on_tag(tag)?;
        let mut dofs = Vec::new();
        let mut values = Vec::new();
        let mut buf = vec![S::zero(); space.components];
        for n in nodes {
            f(&space.node_coords[n], &mut buf);
            for (comp, v) in buf.iter().enumerate() {
                dofs.push(space.dof(n, comp));
                values.push(*v);
            }
        }
        Ok(Self { dofs, values, tag })
    }

    /// Fixes a single dof (used to pin rigid modes in oracle problems).
    pub fn single(dof: usize, value: S) -> Self {
        Self { dofs: vec![dof], values: vec![value], tag: 0 }
    }
}

/// Merges constraints into unique (dof, value) pairs; later entries win.
pub fn merge_constraints<S: Scalar>(bcs: &[DirichletBC<S>]) -> Vec<(usize, S)> {
    let mut map: BTreeMap<usize, S> = BTreeMap::new();
    for bc in bcs {
        for (d, v) in bc.dofs.iter().zip(&bc.values) {
            map.insert(*d, *v);
        }
    }
    map.into_iter().collect()
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Backtracking factor of the residual-decrease line search.
    pub ls_factor: f64,
    pub ls_max_steps: usize,
    /// Accept a stalled iterate as converged once the residual has dropped to
    /// this fraction of the initial norm (0 disables). Residuals of laws with
    /// ReLU kinks cannot always be driven below the kink jump scale.
    pub stall_rel_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-9, rel_tol: 1e-12, max_iter: 30, ls_factor: 0.5, ls_max_steps: 8, stall_rel_tol: 0.0 }
    }
}

/// Per-iteration diagnostics of a Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    pub converged: bool,
    pub residual_norms: Vec<f64>,
}

impl NewtonReport {
    /// Line-oriented JSON records (iteration, residual norm).
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (it, r) in self.residual_norms.iter().enumerate() {
            out.push_str(&format!("{{\"iteration\":{it},\"residual_norm\":{r:e}}}\n"));
        }
        out
    }
}

/// Quadrature degree rule: 2 * element degree + 1, raised by 2 when a neural
/// law sits in the integrand.
pub fn quadrature_degree(element_degree: usize, neural: bool) -> usize {
    2 * element_degree + 1 + if neural { 2 } else { 0 }
}

fn sparsity<S: Scalar>(space: &FunctionSpace<S>) -> SparseMatrix<S> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); space.ndof];
    for c in 0..space.n_cells() {
        let dofs = space.cell_dofs(c);
        for &i in &dofs {
            rows[i].extend_from_slice(&dofs);
        }
    }
    SparseMatrix::from_pattern(space.ndof, &rows)
}

struct CellLocal<S> {
    cell: usize,
    res: Vec<S>,
    jac: Option<Vec<S>>, // row-major (ndof_local x ndof_local)
}

/// Strain Voigt column of local dof (basis b, component comp) given the
/// physical gradient of basis b.
#[inline]
fn strain_column<S: Scalar>(dim: usize, comp: usize, g: &[S; 3]) -> [S; 6] {
    let mut col = [S::zero(); 6];
    if dim == 2 {
        match comp {
            0 => {
                col[0] = g[0];
                col[2] = g[1];
            }
            _ => {
                col[1] = g[1];
                col[2] = g[0];
            }
        }
    } else {
        match comp {
            0 => {
                col[0] = g[0];
                col[4] = g[2];
                col[5] = g[1];
            }
            1 => {
                col[1] = g[1];
                col[3] = g[2];
                col[5] = g[0];
            }
            _ => {
                col[2] = g[2];
                col[3] = g[1];
                col[4] = g[0];
            }
        }
    }
    col
}

/// Assembles the elastostatic residual (and optionally the Jacobian):
/// r_i = int sigma(eps(u)) : eps(phi_i) dx - int_Gamma t . phi_i ds.
pub fn assemble_elasticity<S: Scalar>(
    space: &Arc<FunctionSpace<S>>,
    model: &ConstitutiveModel<S>,
    u: &[S],
    traction: Option<(u32, [S; 3])>,
    want_jacobian: bool,
) -> Result<(Vec<S>, Option<SparseMatrix<S>>), AssemblyError> {
    if space.value_shape != ValueShape::Vector {
        return Err(AssemblyError::DimensionMismatch("elasticity needs a vector space".into()));
    }
    if u.len() != space.ndof {
        return Err(AssemblyError::DimensionMismatch(format!(
            "state length {} != ndof {}",
            u.len(),
            space.ndof
        )));
    }
    let dim = space.mesh.dim;
    let nvg = voigt_len(dim);
    let rule = space.cell_rule(quadrature_degree(space.degree, model.is_neural()));
    let tab = space.tabulate(&rule.points);
    let nb = tab.n_basis;
    let nloc = nb * dim;

    let locals: Result<Vec<CellLocal<S>>, AssemblyError> = (0..space.n_cells())
        .into_par_iter()
        .map(|c| {
            let geo = space.geometry(c);
            let det = geo.det.abs();
            let nodes = space.cell_node_ids(c);
            let mut res = vec![S::zero(); nloc];
            let mut jac = if want_jacobian { Some(vec![S::zero(); nloc * nloc]) } else { None };
            let mut gphys = vec![[S::zero(); 3]; nb];
            for q in 0..rule.len() {
                let w = rule.weights[q] * det;
                for b in 0..nb {
                    let gref = &tab.grads[(q * nb + b) * dim..(q * nb + b) * dim + dim];
                    let mut g = [S::zero(); 3];
                    for r in 0..dim {
                        let mut acc = S::zero();
                        for (cc, gr) in gref.iter().enumerate() {
                            acc += geo.inv_t[r][cc] * *gr;
                        }
                        g[r] = acc;
                    }
                    gphys[b] = g;
                }
                // strain of u at this point
                let mut grad_u = [[S::zero(); 3]; 3];
                for (b, &node) in nodes.iter().enumerate() {
                    for comp in 0..dim {
                        let coeff = u[space.dof(node, comp)];
                        for r in 0..dim {
                            grad_u[comp][r] += coeff * gphys[b][r];
                        }
                    }
                }
                let mut eps = SymTensor::zero(dim);
                {
                    let ev = eps.voigt_mut();
                    if dim == 2 {
                        ev[0] = grad_u[0][0];
                        ev[1] = grad_u[1][1];
                        ev[2] = grad_u[0][1] + grad_u[1][0];
                    } else {
                        ev[0] = grad_u[0][0];
                        ev[1] = grad_u[1][1];
                        ev[2] = grad_u[2][2];
                        ev[3] = grad_u[1][2] + grad_u[2][1];
                        ev[4] = grad_u[0][2] + grad_u[2][0];
                        ev[5] = grad_u[0][1] + grad_u[1][0];
                    }
                }
                let sigma = model.stress(&eps)?;
                let sv = sigma.voigt();
                for b in 0..nb {
                    for comp in 0..dim {
                        let col = strain_column(dim, comp, &gphys[b]);
                        let mut acc = S::zero();
                        for v in 0..nvg {
                            acc += sv[v] * col[v];
                        }
                        res[b * dim + comp] += w * acc;
                    }
                }
                if let Some(jl) = jac.as_mut() {
                    let dmat = model.stress_tangent(&eps)?;
                    // D * B columns first
                    let mut db = vec![[S::zero(); 6]; nloc];
                    for b in 0..nb {
                        for comp in 0..dim {
                            let col = strain_column(dim, comp, &gphys[b]);
                            let out = &mut db[b * dim + comp];
                            for i in 0..nvg {
                                let mut acc = S::zero();
                                for j in 0..nvg {
                                    acc += dmat.get(i, j) * col[j];
                                }
                                out[i] = acc;
                            }
                        }
                    }
                    for bi in 0..nloc {
                        let (b, comp) = (bi / dim, bi % dim);
                        let row_col = strain_column(dim, comp, &gphys[b]);
                        for bj in 0..nloc {
                            let mut acc = S::zero();
                            for v in 0..nvg {
                                acc += row_col[v] * db[bj][v];
                            }
                            jl[bi * nloc + bj] += w * acc;
                        }
                    }
                }
            }
            Ok(CellLocal { cell: c, res, jac })
        })
        .collect();
    let locals = locals?;

    let mut residual = vec![S::zero(); space.ndof];
    let mut matrix = want_jacobian.then(|| sparsity(space));
    for local in &locals {
        let dofs = space.cell_dofs(local.cell);
        for (l, &gi) in dofs.iter().enumerate() {
            residual[gi] += local.res[l];
        }
        if let (Some(m), Some(jl)) = (matrix.as_mut(), local.jac.as_ref()) {
            for (li, &gi) in dofs.iter().enumerate() {
                for (lj, &gj) in dofs.iter().enumerate() {
                    m.add(gi, gj, jl[li * dofs.len() + lj]);
                }
            }
        }
    }

    if let Some((tag, t)) = traction {
        let facets = space.facet_integration(tag, quadrature_degree(space.degree, false))?;
        for f in &facets {
            let tabf = space.tabulate(&f.cell_ref_points);
            let nodes = space.cell_node_ids(f.cell);
            for q in 0..f.weights.len() {
                let w = f.weights[q];
                for (b, &node) in nodes.iter().enumerate() {
                    let phi = tabf.values[q * tabf.n_basis + b];
                    for comp in 0..dim {
                        residual[space.dof(node, comp)] -= w * t[comp] * phi;
                    }
                }
            }
        }
    }
    Ok((residual, matrix))
}

/// Accumulates `d(multiplier^T residual)/d(theta)` for the elasticity residual
/// into `acc`; the per-point cotangent is the strain of the multiplier field.
pub fn accumulate_stress_vjp<S: Scalar>(
    space: &Arc<FunctionSpace<S>>,
    model: &ConstitutiveModel<S>,
    u: &[S],
    multiplier: &[S],
    acc: &mut [S],
) -> Result<(), AssemblyError> {
    let dim = space.mesh.dim;
    let rule = space.cell_rule(quadrature_degree(space.degree, model.is_neural()));
    let tab = space.tabulate(&rule.points);
    let nb = tab.n_basis;
    let np = model.param_count();
    if acc.len() != np {
        return Err(AssemblyError::DimensionMismatch("gradient accumulator length".into()));
    }

    let partials: Result<Vec<Vec<S>>, AssemblyError> = (0..space.n_cells())
        .into_par_iter()
        .map(|c| {
            let geo = space.geometry(c);
            let det = geo.det.abs();
            let nodes = space.cell_node_ids(c);
            let mut gphys = vec![[S::zero(); 3]; nb];
            let mut part = vec![S::zero(); np];
            for q in 0..rule.len() {
                let w = rule.weights[q] * det;
                for b in 0..nb {
                    let gref = &tab.grads[(q * nb + b) * dim..(q * nb + b) * dim + dim];
                    let mut g = [S::zero(); 3];
                    for r in 0..dim {
                        let mut a = S::zero();
                        for (cc, gr) in gref.iter().enumerate() {
                            a += geo.inv_t[r][cc] * *gr;
                        }
                        g[r] = a;
                    }
                    gphys[b] = g;
                }
                let strain_of = |vec: &[S]| {
                    let mut grad = [[S::zero(); 3]; 3];
                    for (b, &node) in nodes.iter().enumerate() {
                        for comp in 0..dim {
                            let coeff = vec[space.dof(node, comp)];
                            for r in 0..dim {
                                grad[comp][r] += coeff * gphys[b][r];
                            }
                        }
                    }
                    let mut t = SymTensor::zero(dim);
                    let tv = t.voigt_mut();
                    if dim == 2 {
                        tv[0] = grad[0][0];
                        tv[1] = grad[1][1];
                        tv[2] = grad[0][1] + grad[1][0];
                    } else {
                        tv[0] = grad[0][0];
                        tv[1] = grad[1][1];
                        tv[2] = grad[2][2];
                        tv[3] = grad[1][2] + grad[2][1];
                        tv[4] = grad[0][2] + grad[2][0];
                        tv[5] = grad[0][1] + grad[1][0];
                    }
                    t
                };
                let eps_u = strain_of(u);
                let eps_z = strain_of(multiplier);
                model.stress_param_vjp_accum(&eps_u, &eps_z, w, &mut part)?;
            }
            Ok(part)
        })
        .collect();
    for part in partials? {
        for (a, p) in acc.iter_mut().zip(&part) {
            *a += *p;
        }
    }
    Ok(())
}

/// Region-keyed thermal properties (density, specific heat).
pub type ThermalProps<S> = BTreeMap<u32, (S, S)>;

/// Region-keyed conductivity models.
pub type ConductivityMap<'a, S> = BTreeMap<u32, &'a ConstitutiveModel<S>>;

/// Assembles one implicit-Euler step of the heat equation:
/// r_i = int rho c_p (T - T_old)/dt phi_i dx + int k(T) grad T . grad phi_i dx.
pub fn assemble_heat_step<S: Scalar>(
    space: &Arc<FunctionSpace<S>>,
    props: &ThermalProps<S>,
    models: &ConductivityMap<'_, S>,
    t_new: &[S],
    t_old: &[S],
    dt: S,
    want_jacobian: bool,
) -> Result<(Vec<S>, Option<SparseMatrix<S>>), AssemblyError> {
    if space.value_shape != ValueShape::Scalar {
        return Err(AssemblyError::DimensionMismatch("heat equation needs a scalar space".into()));
    }
    if dt <= S::zero() {
        return Err(AssemblyError::DimensionMismatch("dt must be positive".into()));
    }
    let dim = space.mesh.dim;
    let neural = models.values().any(|m| m.is_neural());
    let rule = space.cell_rule(quadrature_degree(space.degree, neural));
    let tab = space.tabulate(&rule.points);
    let nb = tab.n_basis;

    let locals: Result<Vec<CellLocal<S>>, AssemblyError> = (0..space.n_cells())
        .into_par_iter()
        .map(|c| {
            let region = space.mesh.region_tags[c];
            let (rho, cp) = *props.get(&region).ok_or(AssemblyError::MissingRegion(region))?;
            let model = *models.get(&region).ok_or(AssemblyError::MissingRegion(region))?;
            let geo = space.geometry(c);
            let det = geo.det.abs();
            let nodes = space.cell_node_ids(c);
            let mut res = vec![S::zero(); nb];
            let mut jac = if want_jacobian { Some(vec![S::zero(); nb * nb]) } else { None };
            let mut gphys = vec![[S::zero(); 3]; nb];
            for q in 0..rule.len() {
                let w = rule.weights[q] * det;
                for b in 0..nb {
                    let gref = &tab.grads[(q * nb + b) * dim..(q * nb + b) * dim + dim];
                    let mut g = [S::zero(); 3];
                    for r in 0..dim {
                        let mut a = S::zero();
                        for (cc, gr) in gref.iter().enumerate() {
                            a += geo.inv_t[r][cc] * *gr;
                        }
                        g[r] = a;
                    }
                    gphys[b] = g;
                }
                let mut t_q = S::zero();
                let mut t_old_q = S::zero();
                let mut grad_t = [S::zero(); 3];
                for (b, &node) in nodes.iter().enumerate() {
                    let phi = tab.values[q * nb + b];
                    t_q += phi * t_new[node];
                    t_old_q += phi * t_old[node];
                    for r in 0..dim {
                        grad_t[r] += t_new[node] * gphys[b][r];
                    }
                }
                let k = model.conductivity(t_q)?;
                let rate = rho * cp * (t_q - t_old_q) / dt;
                for b in 0..nb {
                    let phi = tab.values[q * nb + b];
                    let mut flux = S::zero();
                    for r in 0..dim {
                        flux += grad_t[r] * gphys[b][r];
                    }
                    res[b] += w * (rate * phi + k * flux);
                }
                if let Some(jl) = jac.as_mut() {
                    let dk = model.conductivity_tangent(t_q)?;
                    for bi in 0..nb {
                        let phi_i = tab.values[q * nb + bi];
                        let mut flux_i = S::zero();
                        for r in 0..dim {
                            flux_i += grad_t[r] * gphys[bi][r];
                        }
                        for bj in 0..nb {
                            let phi_j = tab.values[q * nb + bj];
                            let mut grad_ij = S::zero();
                            for r in 0..dim {
                                grad_ij += gphys[bi][r] * gphys[bj][r];
                            }
                            jl[bi * nb + bj] +=
                                w * (rho * cp / dt * phi_i * phi_j + k * grad_ij + dk * phi_j * flux_i);
                        }
                    }
                }
            }
            Ok(CellLocal { cell: c, res, jac })
        })
        .collect();
    let locals = locals?;

    let mut residual = vec![S::zero(); space.ndof];
    let mut matrix = want_jacobian.then(|| sparsity(space));
    for local in &locals {
        let nodes = space.cell_node_ids(local.cell);
        for (l, &gi) in nodes.iter().enumerate() {
            residual[gi] += local.res[l];
        }
        if let (Some(m), Some(jl)) = (matrix.as_mut(), local.jac.as_ref()) {
            for (li, &gi) in nodes.iter().enumerate() {
                for (lj, &gj) in nodes.iter().enumerate() {
                    m.add(gi, gj, jl[li * nodes.len() + lj]);
                }
            }
        }
    }
    Ok((residual, matrix))
}

/// Mass matrix with density * specific heat weighting (no 1/dt factor).
pub fn assemble_heat_mass<S: Scalar>(
    space: &Arc<FunctionSpace<S>>,
    props: &ThermalProps<S>,
) -> Result<SparseMatrix<S>, AssemblyError> {
    let rule = space.cell_rule(2 * space.degree + 1);
    let tab = space.tabulate(&rule.points);
    let nb = tab.n_basis;
    let mut m = sparsity(space);
    for c in 0..space.n_cells() {
        let region = space.mesh.region_tags[c];
        let (rho, cp) = *props.get(&region).ok_or(AssemblyError::MissingRegion(region))?;
        let geo = space.geometry(c);
        let det = geo.det.abs();
        let nodes = space.cell_node_ids(c);
        for q in 0..rule.len() {
            let w = rule.weights[q] * det * rho * cp;
            for (bi, &gi) in nodes.iter().enumerate() {
                for (bj, &gj) in nodes.iter().enumerate() {
                    m.add(gi, gj, w * tab.values[q * nb + bi] * tab.values[q * nb + bj]);
                }
            }
        }
    }
    Ok(m)
}

/// Accumulates `d(multiplier^T residual)/d(theta)` of the heat residual into
/// `acc`; only neural-conductivity regions contribute.
pub fn accumulate_conductivity_vjp<S: Scalar>(
    space: &Arc<FunctionSpace<S>>,
    models: &ConductivityMap<'_, S>,
    t_new: &[S],
    multiplier: &[S],
    acc: &mut [S],
) -> Result<(), AssemblyError> {
    let dim = space.mesh.dim;
    let neural = true;
    let rule = space.cell_rule(quadrature_degree(space.degree, neural));
    let tab = space.tabulate(&rule.points);
    let nb = tab.n_basis;
    let np = acc.len();

    let partials: Result<Vec<Vec<S>>, AssemblyError> = (0..space.n_cells())
        .into_par_iter()
        .map(|c| {
            let region = space.mesh.region_tags[c];
            let model = *models.get(&region).ok_or(AssemblyError::MissingRegion(region))?;
            let mut part = vec![S::zero(); np];
            if !model.is_neural() {
                return Ok(part);
            }
            let geo = space.geometry(c);
            let det = geo.det.abs();
            let nodes = space.cell_node_ids(c);
            let mut gphys = vec![[S::zero(); 3]; nb];
            for q in 0..rule.len() {
                let w = rule.weights[q] * det;
                for b in 0..nb {
                    let gref = &tab.grads[(q * nb + b) * dim..(q * nb + b) * dim + dim];
                    let mut g = [S::zero(); 3];
                    for r in 0..dim {
                        let mut a = S::zero();
                        for (cc, gr) in gref.iter().enumerate() {
                            a += geo.inv_t[r][cc] * *gr;
                        }
                        g[r] = a;
                    }
                    gphys[b] = g;
                }
                let mut t_q = S::zero();
                let mut grad_t = [S::zero(); 3];
                let mut grad_z = [S::zero(); 3];
                for (b, &node) in nodes.iter().enumerate() {
                    let phi = tab.values[q * nb + b];
                    t_q += phi * t_new[node];
                    for r in 0..dim {
                        grad_t[r] += t_new[node] * gphys[b][r];
                        grad_z[r] += multiplier[node] * gphys[b][r];
                    }
                }
                let mut cot = S::zero();
                for r in 0..dim {
                    cot += grad_t[r] * grad_z[r];
                }
                model.conductivity_param_vjp_accum(t_q, cot, w, &mut part)?;
            }
            Ok(part)
        })
        .collect();
    for part in partials? {
        for (a, p) in acc.iter_mut().zip(&part) {
            *a += *p;
        }
    }
    Ok(())
}

/// Applies symmetric Dirichlet elimination to an assembled system.
pub fn apply_dirichlet<S: Scalar>(
    matrix: &mut SparseMatrix<S>,
    residual: &mut [S],
    bcs: &[DirichletBC<S>],
    current: &[S],
) {
    let constrained = merge_constraints(bcs);
    matrix.eliminate_dirichlet(residual, &constrained, current);
}

/// Newton with backtracking line search on the residual norm. The callback
/// returns the (already constrained) residual and, when requested, Jacobian.
pub fn newton_solve<S, F>(
    mut eval: F,
    u0: Vec<S>,
    config: &NewtonConfig,
) -> Result<(Vec<S>, NewtonReport), SolverFailure>
where
    S: Scalar,
    F: FnMut(&[S], bool) -> Result<(Vec<S>, Option<SparseMatrix<S>>), AssemblyError>,
{
    let mut u = u0;
    let (mut r, _) = eval(&u, false)?;
    let mut norm = norm2(&r).as_f64();
    let norm0 = norm;
    let mut norms = vec![norm];
    // Levenberg-style diagonal damping with memory across iterations: plain
    // Newton when the problem cooperates, damped steps through the
    // near-singular tangent regions the softening laws produce.
    let mut tau = 0.0f64;
    let mut full_steps = 0usize;
    for it in 0..config.max_iter {
        if norm <= config.abs_tol || norm <= config.rel_tol * norm0 {
            return Ok((u, NewtonReport { iterations: it, converged: true, residual_norms: norms }));
        }
        let (r_now, jac) = eval(&u, true)?;
        let jac = jac.expect("jacobian requested");
        let rhs: Vec<S> = r_now.iter().map(|&v| -v).collect();
        let perm = rcm_ordering(&jac);
        let n = jac.n();
        let mut diag_scale = S::zero();
        for i in 0..n {
            diag_scale += jac.get(i, i).abs();
        }
        diag_scale /= S::of(n as f64);

        let mut accepted = false;
        let mut full_step = false;
        while !accepted && tau <= 1e6 {
            let lu = if tau == 0.0 {
                BandLu::factor(&jac, Some(perm.clone()))
            } else {
                let mut damped = jac.clone();
                for i in 0..n {
                    let d = damped.get(i, i);
                    damped.set(i, i, d + S::of(tau) * diag_scale);
                }
                BandLu::factor(&damped, Some(perm.clone()))
            }
            .map_err(SolverFailure::Linear)?;
            let delta = lu.solve(&rhs).map_err(SolverFailure::Linear)?;

            let mut alpha = S::one();
            for ls in 0..=config.ls_max_steps {
                let trial: Vec<S> = u.iter().zip(&delta).map(|(&ui, &di)| ui + alpha * di).collect();
                let (r_trial, _) = eval(&trial, false)?;
                let n_trial = norm2(&r_trial).as_f64();
                if n_trial < norm {
                    u = trial;
                    r = r_trial;
                    norm = n_trial;
                    accepted = true;
                    full_step = ls == 0;
                    break;
                }
                alpha *= S::of(config.ls_factor);
            }
            if !accepted {
                tau = if tau == 0.0 { 1e-8 } else { tau * 100.0 };
            }
        }
        norms.push(norm);
        if !accepted {
            if config.stall_rel_tol > 0.0 && norm <= config.stall_rel_tol * norm0 {
                return Ok((u, NewtonReport { iterations: it + 1, converged: true, residual_norms: norms }));
            }
            return Err(SolverFailure::MaxIterations { iterations: it + 1, residual: norm });
        }
        if full_step {
            full_steps += 1;
            // relax the damping quickly once steps are accepted outright
            tau = if full_steps >= 2 || tau < 1e-8 { 0.0 } else { tau / 100.0 };
        } else {
            full_steps = 0;
        }
    }
    if norm <= config.abs_tol || norm <= config.rel_tol * norm0 {
        let its = config.max_iter;
        return Ok((u, NewtonReport { iterations: its, converged: true, residual_norms: norms }));
    }
    let _ = r;
    Err(SolverFailure::MaxIterations { iterations: config.max_iter, residual: norm })
}

/// Elastostatic boundary-value problem bundled for Newton and adjoint use.
pub struct ElasticitySystem<'a, S: Scalar> {
    pub space: Arc<FunctionSpace<S>>,
    pub model: &'a ConstitutiveModel<S>,
    pub traction: Option<(u32, [S; 3])>,
    pub bcs: Vec<DirichletBC<S>>,
}

impl<'a, S: Scalar> ElasticitySystem<'a, S> {
    pub fn eval(&self, u: &[S], want_jac: bool) -> Result<(Vec<S>, Option<SparseMatrix<S>>), AssemblyError> {
        let (mut r, mut j) = assemble_elasticity(&self.space, self.model, u, self.traction, want_jac)?;
        let constrained = merge_constraints(&self.bcs);
        if let Some(m) = j.as_mut() {
            m.eliminate_dirichlet(&mut r, &constrained, u);
        } else {
            for &(d, g) in &constrained {
                r[d] = u[d] - g;
            }
        }
        Ok((r, j))
    }

    /// Solves from `u0` with prescribed values lifted into the initial iterate,
    /// so every residual the line search compares is force-scale.
    pub fn solve(&self, mut u0: Vec<S>, config: &NewtonConfig) -> Result<(Vec<S>, NewtonReport), SolverFailure> {
        for (d, g) in merge_constraints(&self.bcs) {
            u0[d] = g;
        }
        newton_solve(|u, wj| self.eval(u, wj), u0, config)
    }
}

/// One implicit-Euler heat step bundled for Newton and adjoint use.
pub struct HeatStepSystem<'a, S: Scalar> {
    pub space: Arc<FunctionSpace<S>>,
    pub props: &'a ThermalProps<S>,
    pub models: &'a ConductivityMap<'a, S>,
    pub t_old: Vec<S>,
    pub dt: S,
    pub bcs: Vec<DirichletBC<S>>,
}

impl<'a, S: Scalar> HeatStepSystem<'a, S> {
    pub fn eval(&self, t: &[S], want_jac: bool) -> Result<(Vec<S>, Option<SparseMatrix<S>>), AssemblyError> {
        let (mut r, mut j) =
            assemble_heat_step(&self.space, self.props, self.models, t, &self.t_old, self.dt, want_jac)?;
        let constrained = merge_constraints(&self.bcs);
        if let Some(m) = j.as_mut() {
            m.eliminate_dirichlet(&mut r, &constrained, t);
        } else {
            for &(d, g) in &constrained {
                r[d] = t[d] - g;
            }
        }
        Ok((r, j))
    }

    pub fn solve(&self, mut t0: Vec<S>, config: &NewtonConfig) -> Result<(Vec<S>, NewtonReport), SolverFailure> {
        for (d, g) in merge_constraints(&self.bcs) {
            t0[d] = g;
        }
        newton_solve(|t, wj| self.eval(t, wj), t0, config)
    }
}

/// Reaction force on a constrained boundary: the unconstrained residual summed
/// over the tagged dofs, dotted with `direction`. Sign convention: the force
/// the support exerts on the body.
pub fn reaction_force<S: Scalar>(
    space: &Arc<FunctionSpace<S>>,
    model: &ConstitutiveModel<S>,
    u: &[S],
    tag: u32,
    direction: [S; 3],
) -> Result<S, AssemblyError> {
    let (residual, _) = assemble_elasticity(space, model, u, None, false)?;
    let nodes = space.nodes_on_tag(tag)?;
    let mut force = S::zero();
    for n in nodes {
        for comp in 0..space.components {
            force += direction[comp] * residual[space.dof(n, comp)];
        }
    }
    Ok(force)
}

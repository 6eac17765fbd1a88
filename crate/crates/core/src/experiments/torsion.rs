//! Zero-shot transfer: a pretrained Lamé model drives a 3D plate-with-hole
//! torsion solve it was never trained on; the outcome is compared against the
//! ground-truth law through the mean-stress field.

use std::sync::Arc;

use serde::Serialize;

use super::config::TorsionConfig;
use crate::assembly::{DirichletBC, ElasticitySystem, NewtonConfig};
use crate::constitutive::{voigt_len, ConstitutiveModel, SymTensor};
use crate::fespace::{FunctionSpace, ValueShape};
use crate::mesh::{extrude, generate_plate_with_hole};
use crate::train::TrainError;

pub fn build_space(cfg: &TorsionConfig) -> Result<Arc<FunctionSpace<f64>>, TrainError> {
    let footprint = generate_plate_with_hole(cfg.width_m, cfg.height_m, cfg.hole_diameter_m, cfg.footprint_resolution)?;
    let mesh = extrude(&footprint, cfg.thickness_m, cfg.layers)?;
    Ok(FunctionSpace::build(Arc::new(mesh), cfg.element_degree, ValueShape::Vector)?)
}

pub fn ground_truth(cfg: &TorsionConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    Ok(ConstitutiveModel::ground_truth_lame(cfg.c1_pa, cfg.c2)?)
}

pub fn newton_config(cfg: &TorsionConfig) -> NewtonConfig {
    NewtonConfig {
        abs_tol: cfg.newton_abs_tol,
        rel_tol: 1e-14,
        max_iter: cfg.newton_max_iter,
        ls_max_steps: 20,
        ..Default::default()
    }
}

/// Fixed lower face; the upper face rotates rigidly in its own plane about the
/// face centroid (zero vertical displacement component).
pub fn bcs(space: &Arc<FunctionSpace<f64>>, rotation_rad: f64) -> Result<Vec<DirichletBC<f64>>, TrainError> {
    let bottom = space.mesh.legend.tag("bottom").expect("bottom tag");
    let top = space.mesh.legend.tag("top").expect("top tag");
    let top_nodes = space.nodes_on_tag(top)?;
    let mut cx = 0.0;
    let mut cz = 0.0;
    for &n in &top_nodes {
        cx += space.node_coords[n][0];
        cz += space.node_coords[n][2];
    }
    cx /= top_nodes.len() as f64;
    cz /= top_nodes.len() as f64;
    let (s, c) = rotation_rad.sin_cos();
    Ok(vec![
        DirichletBC::vector_on_tag(space, bottom, |_, out| {
            out[0] = 0.0;
            out[1] = 0.0;
            out[2] = 0.0;
        })?,
        DirichletBC::vector_on_tag(space, top, move |x, out| {
            let px = x[0] - cx;
            let pz = x[2] - cz;
            out[0] = c * px - s * pz - px;
            out[1] = 0.0;
            out[2] = s * px + c * pz - pz;
        })?,
    ])
}

/// Solves the torsion problem with the given model, ramping the rotation in
/// two increments for robustness.
pub fn solve(
    space: &Arc<FunctionSpace<f64>>,
    cfg: &TorsionConfig,
    model: &ConstitutiveModel<f64>,
) -> Result<Vec<f64>, TrainError> {
    let newton = newton_config(cfg);
    let theta = cfg.rotation_deg.to_radians();
    let mut u = vec![0.0; space.ndof];
    for frac in [0.5, 1.0] {
        let sys = ElasticitySystem {
            space: space.clone(),
            model,
            traction: None,
            bcs: bcs(space, theta * frac)?,
        };
        let (unew, _) = sys.solve(u, &newton)?;
        u = unew;
    }
    Ok(u)
}

/// Mean stress tr(sigma)/d at every quadrature point, with integration weights.
pub fn mean_stress_samples(
    space: &Arc<FunctionSpace<f64>>,
    model: &ConstitutiveModel<f64>,
    u: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let dim = space.mesh.dim;
    let rule = space.cell_rule(crate::assembly::quadrature_degree(space.degree, model.is_neural()));
    let tab = space.tabulate(&rule.points);
    let nb = tab.n_basis;
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for cell in 0..space.n_cells() {
        let geo = space.geometry(cell);
        let det = geo.det.abs();
        let nodes = space.cell_node_ids(cell);
        for q in 0..rule.len() {
            let mut grad = [[0.0f64; 3]; 3];
            for (b, &node) in nodes.iter().enumerate() {
                let gref = &tab.grads[(q * nb + b) * dim..(q * nb + b) * dim + dim];
                let mut g = [0.0; 3];
                for r in 0..dim {
                    for (cc, gr) in gref.iter().enumerate() {
                        g[r] += geo.inv_t[r][cc] * gr;
                    }
                }
                for comp in 0..dim {
                    let coeff = u[space.dof(node, comp)];
                    for r in 0..dim {
                        grad[comp][r] += coeff * g[r];
                    }
                }
            }
            let mut eps = SymTensor::zero(dim);
            {
                let ev = eps.voigt_mut();
                ev[0] = grad[0][0];
                ev[1] = grad[1][1];
                ev[2] = grad[2][2];
                ev[3] = grad[1][2] + grad[2][1];
                ev[4] = grad[0][2] + grad[2][0];
                ev[5] = grad[0][1] + grad[1][0];
            }
            let sigma = model.stress(&eps)?;
            let tr: f64 = sigma.voigt()[..voigt_len(dim)].iter().take(dim).sum();
            values.push(tr / dim as f64);
            weights.push(rule.weights[q] * det);
        }
    }
    Ok((values, weights))
}

/// Vertex-averaged mean-stress field for visualization dumps.
pub fn mean_stress_vertex_field(
    space: &Arc<FunctionSpace<f64>>,
    model: &ConstitutiveModel<f64>,
    u: &[f64],
) -> Result<Vec<f64>, TrainError> {
    let dim = space.mesh.dim;
    let nv = space.mesh.n_vertices();
    let mut acc = vec![0.0; nv];
    let mut count = vec![0usize; nv];
    // evaluate at cell centroids and average onto vertices
    let centroid = [[1.0 / (dim as f64 + 1.0); 3]];
    let mut pts = centroid;
    if dim == 2 {
        pts[0][2] = 0.0;
    }
    let tab = space.tabulate(&pts);
    
    for cell in 0..space.n_cells() {
        let geo = space.geometry(cell);
        let nodes = space.cell_node_ids(cell);
        let mut grad = [[0.0f64; 3]; 3];
        for (b, &node) in nodes.iter().enumerate() {
            let gref = &tab.grads[b * dim..b * dim + dim];
            let mut g = [0.0; 3];
            for r in 0..dim {
                for (cc, gr) in gref.iter().enumerate() {
                    g[r] += geo.inv_t[r][cc] * gr;
                }
            }
            for comp in 0..dim {
                let coeff = u[space.dof(node, comp)];
                for r in 0..dim {
                    grad[comp][r] += coeff * g[r];
                }
            }
        }
        let mut eps = SymTensor::zero(dim);
        {
            let ev = eps.voigt_mut();
            if dim == 2 {
                ev[0] = grad[0][0];
                ev[1] = grad[1][1];
                ev[2] = grad[0][1] + grad[1][0];
            } else {
                ev[0] = grad[0][0];
                ev[1] = grad[1][1];
                ev[2] = grad[2][2];
                ev[3] = grad[1][2] + grad[2][1];
                ev[4] = grad[0][2] + grad[2][0];
                ev[5] = grad[0][1] + grad[1][0];
            }
        }
        let sigma = model.stress(&eps)?;
        let tr: f64 = sigma.voigt().iter().take(dim).sum();
        let ms = tr / dim as f64;
        for &v in space.mesh.cell_vertices(cell) {
            acc[v] += ms;
            count[v] += 1;
        }
    }
    for (a, c) in acc.iter_mut().zip(&count) {
        if *c > 0 {
            *a /= *c as f64;
        }
    }
    Ok(acc)
}

/// Outcome of one zero-shot comparison run.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroShotReport {
    pub rotation_deg: f64,
    pub ndof: usize,
    /// Relative L2 discrepancy between the model and ground-truth mean-stress fields.
    pub mean_stress_rel_l2: f64,
}

/// Solves the torsion problem with both the provided model and the ground
/// truth, and measures the mean-stress field discrepancy.
pub fn run_zero_shot(
    cfg: &TorsionConfig,
    model: &ConstitutiveModel<f64>,
) -> Result<(ZeroShotReport, Arc<FunctionSpace<f64>>, Vec<f64>, Vec<f64>), TrainError> {
    let space = build_space(cfg)?;
    let gt = ground_truth(cfg)?;
    let u_model = solve(&space, cfg, model)?;
    let u_truth = solve(&space, cfg, &gt)?;
    let (ms_model, w) = mean_stress_samples(&space, model, &u_model)?;
    let (ms_truth, _) = mean_stress_samples(&space, &gt, &u_truth)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), wi) in ms_model.iter().zip(&ms_truth).zip(&w) {
        num += wi * (a - b) * (a - b);
        den += wi * b * b;
    }
    let report = ZeroShotReport {
        rotation_deg: cfg.rotation_deg,
        ndof: space.ndof,
        mean_stress_rel_l2: (num / den).sqrt(),
    };
    Ok((report, space, u_model, u_truth))
}

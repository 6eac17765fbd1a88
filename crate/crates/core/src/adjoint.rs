//! Relative losses on solver outputs and end-to-end discrete-adjoint gradients
//! d(loss)/d(theta) through static Newton solves and implicit-Euler transient
//! sweeps, plus a finite-difference gradient checker used by the verification
//! suites.

use serde::Serialize;
use thiserror::Error;

use crate::assembly::{
    accumulate_conductivity_vjp, accumulate_stress_vjp, assemble_elasticity, assemble_heat_mass,
    assemble_heat_step, merge_constraints, AssemblyError, ConductivityMap, DirichletBC, ElasticitySystem,
    ThermalProps,
};
use crate::fespace::FunctionSpace;
use crate::scalar::{dot, norm2, Scalar};
use crate::sparse::{rcm_ordering, BandLu, SolveError};
use std::sync::Arc;

#[derive(Debug, Error)]
pub enum AdjointError {
    #[error("observation {step} has zero magnitude (relative loss undefined)")]
    InvalidObservation { step: usize },
    #[error("shape mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Fespace(#[from] crate::fespace::FespaceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Which relative loss a dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossKind {
    RelativeForce,
    RelativeField,
    RelativeTemperature,
}

/// Observed value of one step: a scalar load or a DoF vector.
#[derive(Debug, Clone)]
pub enum Observation<S> {
    Scalar(S),
    Vector(Vec<S>),
}

/// Loss specification: per-step observations and weights (uniform 1/N by default).
#[derive(Debug, Clone)]
pub struct LossSpec<S> {
    pub kind: LossKind,
    pub observations: Vec<Observation<S>>,
    pub weights: Vec<S>,
}

impl<S: Scalar> LossSpec<S> {
    pub fn new(kind: LossKind, observations: Vec<Observation<S>>) -> Self {
        let n = observations.len();
        let w = S::one() / S::of(n as f64);
        Self { kind, observations, weights: vec![w; n] }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// L = sum_i w_i |fem_i - obs_i| / |obs_i|, with |.| the absolute value for
/// scalars and the discrete L2 norm for DoF vectors.
pub fn loss<S: Scalar>(spec: &LossSpec<S>, fem: &[Observation<S>]) -> Result<S, AdjointError> {
    if fem.len() != spec.observations.len() {
        return Err(AdjointError::Mismatch(format!(
            "{} fem outputs vs {} observations",
            fem.len(),
            spec.observations.len()
        )));
    }
    let mut total = S::zero();
    for (i, (f, o)) in fem.iter().zip(&spec.observations).enumerate() {
        total += spec.weights[i] * step_loss(f, o, i)?;
    }
    Ok(total)
}

fn step_loss<S: Scalar>(fem: &Observation<S>, obs: &Observation<S>, step: usize) -> Result<S, AdjointError> {
    match (fem, obs) {
        (Observation::Scalar(f), Observation::Scalar(o)) => {
            if *o == S::zero() {
                return Err(AdjointError::InvalidObservation { step });
            }
            Ok((*f - *o).abs() / o.abs())
        }
        (Observation::Vector(f), Observation::Vector(o)) => {
            if f.len() != o.len() {
                return Err(AdjointError::Mismatch(format!("step {step}: vector lengths differ")));
            }
            let on = norm2(o);
            if on == S::zero() {
                return Err(AdjointError::InvalidObservation { step });
            }
            let diff: Vec<S> = f.iter().zip(o).map(|(&a, &b)| a - b).collect();
            Ok(norm2(&diff) / on)
        }
        _ => Err(AdjointError::Mismatch(format!("step {step}: scalar/vector kind mismatch"))),
    }
}

/// Gradient of one step's relative loss with respect to the fem output.
/// The subgradient at fem == obs is zero.
pub fn step_loss_gradient<S: Scalar>(
    fem: &Observation<S>,
    obs: &Observation<S>,
    weight: S,
    step: usize,
) -> Result<Observation<S>, AdjointError> {
    match (fem, obs) {
        (Observation::Scalar(f), Observation::Scalar(o)) => {
            if *o == S::zero() {
                return Err(AdjointError::InvalidObservation { step });
            }
            let d = *f - *o;
            let sign = if d > S::zero() {
                S::one()
            } else if d < S::zero() {
                -S::one()
            } else {
                S::zero()
            };
            Ok(Observation::Scalar(weight * sign / o.abs()))
        }
        (Observation::Vector(f), Observation::Vector(o)) => {
            let on = norm2(o);
            if on == S::zero() {
                return Err(AdjointError::InvalidObservation { step });
            }
            let diff: Vec<S> = f.iter().zip(o).map(|(&a, &b)| a - b).collect();
            let dn = norm2(&diff);
            if dn == S::zero() {
                return Ok(Observation::Vector(vec![S::zero(); f.len()]));
            }
            let c = weight / (dn * on);
            Ok(Observation::Vector(diff.iter().map(|&d| c * d).collect()))
        }
        _ => Err(AdjointError::Mismatch(format!("step {step}: scalar/vector kind mismatch"))),
    }
}

/// Boundary-force functional: L depends on sum over tagged dofs of the
/// unconstrained residual dotted with `direction`, scaled by `dl_df`.
pub struct BoundaryForceFunctional<S> {
    pub tag: u32,
    pub direction: [S; 3],
    /// d(loss)/d(force) at the current output.
    pub dl_df: S,
}

/// Discrete adjoint of one static elasticity solve.
///
/// At the converged state: solve J^T lambda = -(dL/du)|free, then accumulate
/// dL/dtheta = z^T dF/dtheta per quadrature point, where z combines lambda with
/// the reaction-force indicator when the loss reads a boundary force.
pub fn grad_static<S: Scalar>(
    system: &ElasticitySystem<'_, S>,
    u: &[S],
    dldu: Option<&[S]>,
    boundary_force: Option<&BoundaryForceFunctional<S>>,
    acc: &mut [S],
) -> Result<(), AdjointError> {
    let space = &system.space;
    let n = space.ndof;
    if u.len() != n {
        return Err(AdjointError::Mismatch("state length".into()));
    }
    let (_, jac) = assemble_elasticity(space, system.model, u, system.traction, true)?;
    let jac = jac.expect("jacobian requested");

    // indicator of the measured boundary, scaled by dL/dF
    let mut s = vec![S::zero(); n];
    if let Some(bf) = boundary_force {
        for node in space.nodes_on_tag(bf.tag)? {
            for comp in 0..space.components {
                s[space.dof(node, comp)] = bf.dl_df * bf.direction[comp];
            }
        }
    }

    let mut g = vec![S::zero(); n];
    if let Some(d) = dldu {
        if d.len() != n {
            return Err(AdjointError::Mismatch("dL/du length".into()));
        }
        g.copy_from_slice(d);
    }
    if boundary_force.is_some() {
        let jts = jac.matvec_transpose(&s);
        for (gi, ji) in g.iter_mut().zip(&jts) {
            *gi += *ji;
        }
    }
    let constrained = merge_constraints(&system.bcs);
    for &(c, _) in &constrained {
        g[c] = S::zero();
    }

    // eliminated copy for the transpose solve
    let mut jac_c = jac;
    let mut dummy = vec![S::zero(); n];
    jac_c.eliminate_dirichlet(&mut dummy, &constrained, u);
    let rhs: Vec<S> = g.iter().map(|&v| -v).collect();
    let perm = rcm_ordering(&jac_c);
    let lu = BandLu::factor(&jac_c, Some(perm))?;
    let lambda = lu.solve_transpose(&rhs)?;

    let mut z = lambda;
    for (zi, si) in z.iter_mut().zip(&s) {
        *zi += *si;
    }
    accumulate_stress_vjp(space, system.model, u, &z, acc)?;
    Ok(())
}

/// Inputs of the transient adjoint: the stored trajectory, per-step boundary
/// conditions, and per-step loss gradients (None for unobserved steps).
pub struct TransientAdjointInput<'a, S: Scalar> {
    pub space: &'a Arc<FunctionSpace<S>>,
    pub props: &'a ThermalProps<S>,
    pub models: &'a ConductivityMap<'a, S>,
    pub dt: S,
    /// T^0 .. T^N (N+1 states).
    pub trajectory: &'a [Vec<S>],
    /// Per step n = 1..N: constraints active during that step.
    pub bcs_per_step: &'a [Vec<DirichletBC<S>>],
    /// Per step n = 1..N: dL/dT^n (full length), or None when unobserved.
    pub dldt: &'a [Option<Vec<S>>],
}

/// Reverse sweep through the implicit-Euler trajectory, accumulating the
/// conductivity parameter VJP of every step.
pub fn grad_transient<S: Scalar>(input: &TransientAdjointInput<'_, S>, acc: &mut [S]) -> Result<(), AdjointError> {
    let n_steps = input.trajectory.len().saturating_sub(1);
    if n_steps == 0 {
        return Err(AdjointError::Mismatch("trajectory needs at least one step".into()));
    }
    if input.bcs_per_step.len() != n_steps || input.dldt.len() != n_steps {
        return Err(AdjointError::Mismatch(format!(
            "trajectory has {n_steps} steps but {} bc sets / {} loss gradients",
            input.bcs_per_step.len(),
            input.dldt.len()
        )));
    }
    let space = input.space;
    let n = space.ndof;
    let mass = assemble_heat_mass(space, input.props)?;
    let mut lambda_next: Vec<S> = vec![S::zero(); n];

    for step in (1..=n_steps).rev() {
        let t_new = &input.trajectory[step];
        let t_old = &input.trajectory[step - 1];
        let (_, jac) =
            assemble_heat_step(space, input.props, input.models, t_new, t_old, input.dt, true)?;
        let mut jac = jac.expect("jacobian requested");
        let constrained = merge_constraints(&input.bcs_per_step[step - 1]);

        // rhs = -g_n + (M lambda_{n+1}) / dt, masked to free dofs
        let mut rhs = vec![S::zero(); n];
        if let Some(g) = &input.dldt[step - 1] {
            if g.len() != n {
                return Err(AdjointError::Mismatch(format!("dL/dT at step {step} has wrong length")));
            }
            for (r, gi) in rhs.iter_mut().zip(g) {
                *r = -*gi;
            }
        }
        if step < n_steps {
            let mv = mass.matvec(&lambda_next);
            for (r, m) in rhs.iter_mut().zip(&mv) {
                *r += *m / input.dt;
            }
        }
        for &(c, _) in &constrained {
            rhs[c] = S::zero();
        }

        let mut dummy = vec![S::zero(); n];
        jac.eliminate_dirichlet(&mut dummy, &constrained, t_new);
        let perm = rcm_ordering(&jac);
        let lu = BandLu::factor(&jac, Some(perm))?;
        let lambda = lu.solve_transpose(&rhs)?;

        accumulate_conductivity_vjp(space, input.models, t_new, &lambda, acc)?;
        lambda_next = lambda;
    }
    Ok(())
}

/// Gradient plus diagnostics returned by the experiment pipelines.
#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub adjoint_solves: usize,
}

/// Finite-difference comparison report.
#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub worst_index: usize,
    pub n_checked: usize,
    pub entries: Vec<FdEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdEntry {
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

impl FdReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialize fd report")
    }
}

/// Central-difference check of `analytic` against re-evaluations of `pipeline`
/// at `params +/- step` for the sampled indices. The relative error denominator
/// is the larger magnitude of the two gradients (floored at 1e-12).
pub fn fd_check<S: Scalar, E>(
    mut pipeline: impl FnMut(&[S]) -> Result<S, E>,
    params: &[S],
    analytic: &[S],
    indices: &[usize],
    step: f64,
) -> Result<FdReport, E> {
    let mut pairs = Vec::with_capacity(indices.len());
    for &k in indices {
        let h = S::of(step * params[k].as_f64().abs().max(1.0));
        let mut p = params.to_vec();
        p[k] = params[k] + h;
        let up = pipeline(&p)?.as_f64();
        p[k] = params[k] - h;
        let um = pipeline(&p)?.as_f64();
        let fd = (up - um) / (2.0 * h.as_f64());
        pairs.push((k, analytic[k].as_f64(), fd));
    }
    // floor the denominator at a fraction of the overall gradient scale, so
    // noise-level entries of dead units do not read as 100% error
    let scale = pairs.iter().fold(0.0f64, |s, &(_, a, fd)| s.max(a.abs()).max(fd.abs()));
    let floor = (1e-6 * scale).max(1e-300);
    let mut entries = Vec::with_capacity(indices.len());
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    let mut sum_rel = 0.0f64;
    for (k, a, fd) in pairs {
        let rel = (a - fd).abs() / fd.abs().max(a.abs()).max(floor);
        if rel > max_rel {
            max_rel = rel;
            worst = k;
        }
        sum_rel += rel;
        entries.push(FdEntry { index: k, analytic: a, finite_difference: fd, rel_error: rel });
    }
    Ok(FdReport {
        max_rel_error: max_rel,
        mean_rel_error: sum_rel / indices.len().max(1) as f64,
        worst_index: worst,
        n_checked: indices.len(),
        entries,
    })
}

/// Evenly spread sample of `count` indices out of `len` (deterministic).
pub fn sample_indices(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    (0..count).map(|i| i * len / count).collect()
}

/// Helper used by tests: dot product alias so the module exposes its own
/// independent accumulation for loss oracles.
pub fn dot_product<S: Scalar>(a: &[S], b: &[S]) -> S {
    dot(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_outputs_give_zero_loss() {
        let spec = LossSpec::new(
            LossKind::RelativeForce,
            vec![Observation::Scalar(100.0f64), Observation::Scalar(-50.0)],
        );
        let fem = vec![Observation::Scalar(100.0), Observation::Scalar(-50.0)];
        assert_eq!(loss(&spec, &fem).unwrap(), 0.0);
    }

    #[test]
    fn single_step_force_loss_formula() {
        let spec = LossSpec::new(LossKind::RelativeForce, vec![Observation::Scalar(100.0f64)]);
        let fem = vec![Observation::Scalar(90.0)];
        assert!((loss(&spec, &fem).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn field_loss_matches_loop_oracle() {
        let obs = vec![1.0f64, -2.0, 0.5, 3.0];
        let fem = vec![1.2, -1.7, 0.4, 2.5];
        let spec = LossSpec::new(LossKind::RelativeField, vec![Observation::Vector(obs.clone())]);
        let val = loss(&spec, &[Observation::Vector(fem.clone())]).unwrap();
        // straightforward loop oracle
        let mut num = 0.0;
        let mut den = 0.0;
        for (f, o) in fem.iter().zip(&obs) {
            num += (f - o) * (f - o);
            den += o * o;
        }
        let expect = num.sqrt() / den.sqrt();
        assert!((val - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_observation_is_invalid() {
        let spec = LossSpec::new(LossKind::RelativeForce, vec![Observation::Scalar(0.0f64)]);
        assert!(matches!(
            loss(&spec, &[Observation::Scalar(1.0)]),
            Err(AdjointError::InvalidObservation { step: 0 })
        ));
    }

    #[test]
    fn relative_loss_is_scale_invariant() {
        let obs = vec![2.0f64, -4.0, 8.0];
        let fem = vec![2.5, -3.0, 7.0];
        let spec1 = LossSpec::new(LossKind::RelativeField, vec![Observation::Vector(obs.clone())]);
        let l1 = loss(&spec1, &[Observation::Vector(fem.clone())]).unwrap();
        let c = 37.5;
        let spec2 = LossSpec::new(
            LossKind::RelativeField,
            vec![Observation::Vector(obs.iter().map(|v| c * v).collect())],
        );
        let l2 = loss(&spec2, &[Observation::Vector(fem.iter().map(|v| c * v).collect())]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
    }

    #[test]
    fn doubling_a_weight_doubles_its_gradient() {
        let fem = Observation::Vector(vec![1.0f64, 2.0]);
        let obs = Observation::Vector(vec![1.5, 1.0]);
        let g1 = step_loss_gradient(&fem, &obs, 1.0, 0).unwrap();
        let g2 = step_loss_gradient(&fem, &obs, 2.0, 0).unwrap();
        if let (Observation::Vector(a), Observation::Vector(b)) = (g1, g2) {
            for (x, y) in a.iter().zip(&b) {
                assert!((2.0 * x - y).abs() < 1e-15);
            }
        } else {
            panic!("expected vectors");
        }
    }

    #[test]
    fn fd_check_on_quadratic_pipeline_is_exact() {
        let params = vec![1.0f64, -2.0, 0.5];
        let grad = vec![2.0 * 1.0, 2.0 * -2.0, 2.0 * 0.5];
        let report = fd_check::<f64, std::convert::Infallible>(
            |p| Ok(p.iter().map(|x| x * x).sum()),
            &params,
            &grad,
            &[0, 1, 2],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-9, "{}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let params = vec![1.0f64, -2.0, 0.5];
        let grad = vec![2.0 * 1.0 * 1.01, 2.0 * -2.0, 2.0 * 0.5];
        let report = fd_check::<f64, std::convert::Infallible>(
            |p| Ok(p.iter().map(|x| x * x).sum()),
            &params,
            &grad,
            &[0, 1, 2],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error > 5e-3 && report.max_rel_error < 2e-2);
        assert_eq!(report.worst_index, 0);
    }
}

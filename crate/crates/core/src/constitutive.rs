//! Material laws: ground-truth and neural strain-to-stress maps (isotropic
//! Young's modulus or two Lamé parameters) and temperature-to-conductivity
//! laws, each exposing value, tangent, and parameter VJP.
//!
//! 2D elasticity is plane strain. Symmetric tensors use engineering Voigt
//! packing: (xx, yy, gxy) in 2D and (xx, yy, zz, gyz, gxz, gxy) in 3D, so the
//! Voigt dot product of stress and strain equals the tensor contraction.
//!
//! Neural stress models predict scalar moduli from three invariant features of
//! the (scaled, 3D-embedded) strain tensor: tr M, tr M^2, tr M^3. Invariant
//! inputs keep the network width independent of the spatial dimension, which
//! is what lets a model trained on 2D data drive a 3D solve unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{Activation, MlpConfig, MlpError, MlpParams};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ConstitutiveError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("operation unsupported for ground-truth models (no trainable parameters)")]
    UnsupportedOperation,
    #[error("model family mismatch: expected {expected}")]
    WrongFamily { expected: &'static str },
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

pub fn voigt_len(dim: usize) -> usize {
    match dim {
        2 => 3,
        3 => 6,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Symmetric d x d tensor in engineering Voigt form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor<S> {
    pub dim: usize,
    v: [S; 6],
}

impl<S: Scalar> SymTensor<S> {
    pub fn zero(dim: usize) -> Self {
        voigt_len(dim); // validates dim
        Self { dim, v: [S::zero(); 6] }
    }

    pub fn from_voigt(dim: usize, comps: &[S]) -> Self {
        assert_eq!(comps.len(), voigt_len(dim));
        let mut v = [S::zero(); 6];
        v[..comps.len()].copy_from_slice(comps);
        Self { dim, v }
    }

    /// Diagonal tensor (2D ignores the z entry).
    pub fn diagonal(dim: usize, d: [S; 3]) -> Self {
        let mut t = Self::zero(dim);
        t.v[0] = d[0];
        t.v[1] = d[1];
        if dim == 3 {
            t.v[2] = d[2];
        }
        t
    }

    pub fn voigt(&self) -> &[S] {
        &self.v[..voigt_len(self.dim)]
    }

    pub fn voigt_mut(&mut self) -> &mut [S] {
        let n = voigt_len(self.dim);
        &mut self.v[..n]
    }

    pub fn trace(&self) -> S {
        if self.dim == 2 {
            self.v[0] + self.v[1]
        } else {
            self.v[0] + self.v[1] + self.v[2]
        }
    }

    /// 3x3 matrix embedding; 2D tensors embed as plane strain (zero z row/col).
    pub fn as_matrix3(&self) -> [[S; 3]; 3] {
        let half = S::of(0.5);
        let mut m = [[S::zero(); 3]; 3];
        if self.dim == 2 {
            m[0][0] = self.v[0];
            m[1][1] = self.v[1];
            m[0][1] = half * self.v[2];
            m[1][0] = m[0][1];
        } else {
            m[0][0] = self.v[0];
            m[1][1] = self.v[1];
            m[2][2] = self.v[2];
            m[1][2] = half * self.v[3];
            m[2][1] = m[1][2];
            m[0][2] = half * self.v[4];
            m[2][0] = m[0][2];
            m[0][1] = half * self.v[5];
            m[1][0] = m[0][1];
        }
        m
    }

    /// Dot product in the engineering pairing (equals the tensor contraction
    /// when one side is a stress and the other a strain).
    pub fn dot(&self, other: &Self) -> S {
        debug_assert_eq!(self.dim, other.dim);
        self.voigt().iter().zip(other.voigt()).fold(S::zero(), |a, (&x, &y)| a + x * y)
    }
}

/// Square matrix over Voigt components (the stress tangent d sigma / d eps).
#[derive(Debug, Clone)]
pub struct VoigtMat<S> {
    pub dim: usize,
    m: [[S; 6]; 6],
}

impl<S: Scalar> VoigtMat<S> {
    pub fn zero(dim: usize) -> Self {
        voigt_len(dim);
        Self { dim, m: [[S::zero(); 6]; 6] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.m[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.m[i][j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: S) {
        self.m[i][j] += v;
    }

    pub fn len(&self) -> usize {
        voigt_len(self.dim)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn lame_from_e_nu<S: Scalar>(e: S, nu: S) -> (S, S) {
    let one = S::one();
    let two = S::of(2.0);
    let lambda = e * nu / ((one + nu) * (one - two * nu));
    let mu = e / (two * (one + nu));
    (lambda, mu)
}

/// Isotropic Hooke stress sigma = lambda tr(eps) I + 2 mu eps.
fn hooke_stress<S: Scalar>(lambda: S, mu: S, eps: &SymTensor<S>) -> SymTensor<S> {
    let t = eps.trace();
    let two = S::of(2.0);
    let mut sig = SymTensor::zero(eps.dim);
    let e = eps.voigt();
    let n_diag = eps.dim;
    let n = voigt_len(eps.dim);
    for i in 0..n_diag {
        sig.voigt_mut()[i] = lambda * t + two * mu * e[i];
    }
    for i in n_diag..n {
        sig.voigt_mut()[i] = mu * e[i]; // engineering shear
    }
    sig
}

fn hooke_matrix<S: Scalar>(dim: usize, lambda: S, mu: S) -> VoigtMat<S> {
    let mut d = VoigtMat::zero(dim);
    let two = S::of(2.0);
    let n_diag = dim;
    for i in 0..n_diag {
        for j in 0..n_diag {
            d.add(i, j, lambda);
        }
        d.add(i, i, two * mu);
    }
    for i in n_diag..voigt_len(dim) {
        d.set(i, i, mu);
    }
    d
}

/// Voigt derivative of the trace: ones on the diagonal slots.
fn trace_voigt<S: Scalar>(dim: usize) -> SymTensor<S> {
    SymTensor::diagonal(dim, [S::one(); 3])
}

/// The "2 eps" vector: d(sigma)/d(mu) for fixed strain in engineering Voigt.
fn two_eps_voigt<S: Scalar>(eps: &SymTensor<S>) -> SymTensor<S> {
    let two = S::of(2.0);
    let mut out = *eps;
    let n_diag = eps.dim;
    for i in 0..n_diag {
        out.voigt_mut()[i] *= two;
    }
    out
}

/// Invariant features of the scaled strain tensor and their Voigt derivatives.
/// Returns (features, d feature / d eps_voigt rows).
///
/// The raw invariants I1 = tr M, I2 = tr M^2, I3 = tr M^3 of M = scale * eps
/// grow like |eps|^k and explode at strain concentrations, which destabilizes
/// randomly initialized networks. Each is therefore passed through tanh after
/// a per-order normalization (1, 1/4, 1/8), keeping every feature smooth,
/// frame-indifferent, and bounded in (-1, 1).
pub fn strain_features<S: Scalar>(eps: &SymTensor<S>, input_scale: S) -> ([S; 3], [SymTensor<S>; 3]) {
    let (raw, mut draw) = raw_invariants(eps, input_scale);
    let norms = [S::one(), S::of(0.25), S::of(0.125)];
    let mut feats = [S::zero(); 3];
    for k in 0..3 {
        let z = raw[k] * norms[k];
        let t = z.tanh();
        feats[k] = t;
        let chain = (S::one() - t * t) * norms[k];
        for v in draw[k].voigt_mut() {
            *v *= chain;
        }
    }
    (feats, draw)
}

fn raw_invariants<S: Scalar>(eps: &SymTensor<S>, input_scale: S) -> ([S; 3], [SymTensor<S>; 3]) {
    let m0 = eps.as_matrix3();
    let mut m = [[S::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = input_scale * m0[r][c];
        }
    }
    let mut m2 = [[S::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = S::zero();
            for k in 0..3 {
                acc += m[r][k] * m[k][c];
            }
            m2[r][c] = acc;
        }
    }
    let i1 = m[0][0] + m[1][1] + m[2][2];
    let i2 = m2[0][0] + m2[1][1] + m2[2][2];
    let mut i3 = S::zero();
    for r in 0..3 {
        for c in 0..3 {
            i3 += m2[r][c] * m[c][r];
        }
    }
    // dI1/dM = I, dI2/dM = 2M, dI3/dM = 3M^2; chain by input_scale, then map to
    // engineering Voigt (diagonal slots take the diagonal entries, shear slots
    // the off-diagonal entries).
    let dim = eps.dim;
    let to_voigt = |g: &[[S; 3]; 3]| -> SymTensor<S> {
        let mut t = SymTensor::zero(dim);
        if dim == 2 {
            t.voigt_mut()[0] = g[0][0];
            t.voigt_mut()[1] = g[1][1];
            t.voigt_mut()[2] = g[0][1];
        } else {
            t.voigt_mut()[0] = g[0][0];
            t.voigt_mut()[1] = g[1][1];
            t.voigt_mut()[2] = g[2][2];
            t.voigt_mut()[3] = g[1][2];
            t.voigt_mut()[4] = g[0][2];
            t.voigt_mut()[5] = g[0][1];
        }
        t
    };
    let s = input_scale;
    let two = S::of(2.0);
    let three = S::of(3.0);
    let mut g1 = [[S::zero(); 3]; 3];
    let mut g2 = [[S::zero(); 3]; 3];
    let mut g3 = [[S::zero(); 3]; 3];
    for r in 0..3 {
        g1[r][r] = s;
        for c in 0..3 {
            g2[r][c] = two * m[r][c] * s;
            g3[r][c] = three * m2[r][c] * s;
        }
    }
    ([i1, i2, i3], [to_voigt(&g1), to_voigt(&g2), to_voigt(&g3)])
}

/// Network shape used by the stress models: invariant features in, one modulus
/// out. Hidden layers use softplus: the residual of a Newton solve must stay
/// continuously differentiable in the state, and ReLU kinks put a floor under
/// the achievable residual norm.
pub fn stress_net_config(hidden: &[usize]) -> MlpConfig {
    let mut widths = Vec::with_capacity(hidden.len() + 2);
    widths.push(3);
    widths.extend_from_slice(hidden);
    widths.push(1);
    let mut acts = vec![Activation::Softplus; hidden.len()];
    acts.push(Activation::Softplus);
    MlpConfig::new(widths, acts).expect("valid stress net config")
}

/// Network shape used by the conductivity model: temperature in, conductivity
/// out (sigmoid-bounded). Softplus hidden layers for the same smoothness
/// reason as the stress nets.
pub fn conductivity_net_config(hidden: &[usize]) -> MlpConfig {
    let mut widths = Vec::with_capacity(hidden.len() + 2);
    widths.push(1);
    widths.extend_from_slice(hidden);
    widths.push(1);
    let mut acts = vec![Activation::Softplus; hidden.len()];
    acts.push(Activation::Sigmoid);
    MlpConfig::new(widths, acts).expect("valid conductivity net config")
}

/// Ground-truth or neural material law.
#[derive(Debug, Clone)]
pub enum ConstitutiveModel<S> {
    /// Softening Young's modulus E = c1 / (1 + c2 |tr eps|) at fixed Poisson ratio.
    GroundTruthSoftening { c1: S, c2: S, nu: S },
    /// lambda = 2 c1, mu = c1 / (1 + c2 |tr eps|).
    GroundTruthLame { c1: S, c2: S },
    /// MLP predicts E / output_scale from strain invariants; fixed Poisson ratio.
    NeuralIsotropicE { mlp: MlpParams<S>, nu: S, input_scale: S, output_scale: S },
    /// Two MLPs predict lambda / output_scale and mu / output_scale.
    NeuralLame { mlp_lambda: MlpParams<S>, mlp_mu: MlpParams<S>, input_scale: S, output_scale: S },
    /// k = k_r (1 + beta (T - T_r) / T_r)^(-delta).
    GroundTruthConductivity { k_r: S, beta: S, delta: S, t_r: S },
    /// Sigmoid-terminated MLP mapped affinely to (k_min, k_max).
    NeuralConductivity { mlp: MlpParams<S>, k_min: S, k_max: S, t_offset: S, t_scale: S },
}

impl<S: Scalar> ConstitutiveModel<S> {
    pub fn ground_truth_softening(c1: S, c2: S, nu: S) -> Result<Self, ConstitutiveError> {
        validate_c1_nu(c1, Some(nu))?;
        Ok(Self::GroundTruthSoftening { c1, c2, nu })
    }

    pub fn ground_truth_lame(c1: S, c2: S) -> Result<Self, ConstitutiveError> {
        validate_c1_nu(c1, None)?;
        Ok(Self::GroundTruthLame { c1, c2 })
    }

    pub fn neural_isotropic_e(mlp: MlpParams<S>, nu: S, input_scale: S, output_scale: S) -> Result<Self, ConstitutiveError> {
        if input_scale <= S::zero() || output_scale <= S::zero() {
            return Err(ConstitutiveError::InvalidArgument("scales must be positive".into()));
        }
        validate_c1_nu(S::one(), Some(nu))?;
        Ok(Self::NeuralIsotropicE { mlp, nu, input_scale, output_scale })
    }

    pub fn neural_lame(mlp_lambda: MlpParams<S>, mlp_mu: MlpParams<S>, input_scale: S, output_scale: S) -> Result<Self, ConstitutiveError> {
        if input_scale <= S::zero() || output_scale <= S::zero() {
            return Err(ConstitutiveError::InvalidArgument("scales must be positive".into()));
        }
        Ok(Self::NeuralLame { mlp_lambda, mlp_mu, input_scale, output_scale })
    }

    pub fn ground_truth_conductivity(k_r: S, beta: S, delta: S, t_r: S) -> Result<Self, ConstitutiveError> {
        if k_r <= S::zero() {
            return Err(ConstitutiveError::InvalidArgument("k_r must be positive".into()));
        }
        Ok(Self::GroundTruthConductivity { k_r, beta, delta, t_r })
    }

    pub fn neural_conductivity(mlp: MlpParams<S>, k_min: S, k_max: S, t_offset: S, t_scale: S) -> Result<Self, ConstitutiveError> {
        if k_min <= S::zero() || k_max <= k_min || t_scale <= S::zero() {
            return Err(ConstitutiveError::InvalidArgument("need 0 < k_min < k_max and t_scale > 0".into()));
        }
        Ok(Self::NeuralConductivity { mlp, k_min, k_max, t_offset, t_scale })
    }

    pub fn is_neural(&self) -> bool {
        matches!(
            self,
            Self::NeuralIsotropicE { .. } | Self::NeuralLame { .. } | Self::NeuralConductivity { .. }
        )
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::NeuralIsotropicE { mlp, .. } => mlp.param_count(),
            Self::NeuralLame { mlp_lambda, mlp_mu, .. } => mlp_lambda.param_count() + mlp_mu.param_count(),
            Self::NeuralConductivity { mlp, .. } => mlp.param_count(),
            _ => 0,
        }
    }

    pub fn params_flat(&self) -> Vec<S> {
        match self {
            Self::NeuralIsotropicE { mlp, .. } => mlp.flatten(),
            Self::NeuralLame { mlp_lambda, mlp_mu, .. } => {
                let mut out = mlp_lambda.flatten();
                out.extend(mlp_mu.flatten());
                out
            }
            Self::NeuralConductivity { mlp, .. } => mlp.flatten(),
            _ => Vec::new(),
        }
    }

    pub fn set_params_flat(&mut self, flat: &[S]) -> Result<(), ConstitutiveError> {
        match self {
            Self::NeuralIsotropicE { mlp, .. } | Self::NeuralConductivity { mlp, .. } => {
                mlp.set_from_flat(flat)?;
            }
            Self::NeuralLame { mlp_lambda, mlp_mu, .. } => {
                let nl = mlp_lambda.param_count();
                if flat.len() != nl + mlp_mu.param_count() {
                    return Err(ConstitutiveError::InvalidArgument("flat parameter length mismatch".into()));
                }
                mlp_lambda.set_from_flat(&flat[..nl])?;
                mlp_mu.set_from_flat(&flat[nl..])?;
            }
            _ => return Err(ConstitutiveError::UnsupportedOperation),
        }
        Ok(())
    }

    /// Young's modulus at a strain state (isotropic-E variants only).
    pub fn isotropic_modulus(&self, eps: &SymTensor<S>) -> Result<S, ConstitutiveError> {
        match self {
            Self::GroundTruthSoftening { c1, c2, .. } => Ok(softening(*c1, *c2, eps.trace()).0),
            Self::NeuralIsotropicE { mlp, input_scale, output_scale, .. } => {
                let (feats, _) = strain_features(eps, *input_scale);
                Ok(*output_scale * mlp.forward(&feats)?[0])
            }
            _ => Err(ConstitutiveError::WrongFamily { expected: "isotropic-E model" }),
        }
    }

    /// Lamé parameters at a strain state (two-parameter variants only).
    pub fn lame_moduli(&self, eps: &SymTensor<S>) -> Result<(S, S), ConstitutiveError> {
        match self {
            Self::GroundTruthLame { c1, c2 } => {
                Ok((S::of(2.0) * *c1, softening(*c1, *c2, eps.trace()).0))
            }
            Self::NeuralLame { mlp_lambda, mlp_mu, input_scale, output_scale } => {
                let (feats, _) = strain_features(eps, *input_scale);
                Ok((
                    *output_scale * mlp_lambda.forward(&feats)?[0],
                    *output_scale * mlp_mu.forward(&feats)?[0],
                ))
            }
            _ => Err(ConstitutiveError::WrongFamily { expected: "two-parameter model" }),
        }
    }

    /// Stress from strain.
    pub fn stress(&self, eps: &SymTensor<S>) -> Result<SymTensor<S>, ConstitutiveError> {
        match self {
            Self::GroundTruthSoftening { c1, c2, nu } => {
                let e = softening(*c1, *c2, eps.trace()).0;
                let (lambda, mu) = lame_from_e_nu(e, *nu);
                Ok(hooke_stress(lambda, mu, eps))
            }
            Self::GroundTruthLame { c1, c2 } => {
                let lambda = S::of(2.0) * *c1;
                let mu = softening(*c1, *c2, eps.trace()).0;
                Ok(hooke_stress(lambda, mu, eps))
            }
            Self::NeuralIsotropicE { mlp, nu, input_scale, output_scale } => {
                let (feats, _) = strain_features(eps, *input_scale);
                let y = mlp.forward(&feats)?;
                let e = *output_scale * y[0];
                let (lambda, mu) = lame_from_e_nu(e, *nu);
                Ok(hooke_stress(lambda, mu, eps))
            }
            Self::NeuralLame { mlp_lambda, mlp_mu, input_scale, output_scale } => {
                let (feats, _) = strain_features(eps, *input_scale);
                let lambda = *output_scale * mlp_lambda.forward(&feats)?[0];
                let mu = *output_scale * mlp_mu.forward(&feats)?[0];
                Ok(hooke_stress(lambda, mu, eps))
            }
            _ => Err(ConstitutiveError::WrongFamily { expected: "stress model" }),
        }
    }

    /// Voigt tangent d sigma / d eps.
    pub fn stress_tangent(&self, eps: &SymTensor<S>) -> Result<VoigtMat<S>, ConstitutiveError> {
        let dim = eps.dim;
        match self {
            Self::GroundTruthSoftening { c1, c2, nu } => {
                let (e, de_dt) = softening(*c1, *c2, eps.trace());
                let (lh, mh) = lame_from_e_nu(S::one(), *nu);
                let mut d = hooke_matrix(dim, lh * e, mh * e);
                let sigma_hat = hooke_stress(lh, mh, eps);
                rank_one_update(&mut d, &sigma_hat, &trace_voigt(dim), de_dt);
                Ok(d)
            }
            Self::GroundTruthLame { c1, c2 } => {
                let lambda = S::of(2.0) * *c1;
                let (mu, dmu_dt) = softening(*c1, *c2, eps.trace());
                let mut d = hooke_matrix(dim, lambda, mu);
                rank_one_update(&mut d, &two_eps_voigt(eps), &trace_voigt(dim), dmu_dt);
                Ok(d)
            }
            Self::NeuralIsotropicE { mlp, nu, input_scale, output_scale } => {
                let (feats, dfeats) = strain_features(eps, *input_scale);
                let (y, jac) = mlp.forward_with_input_jacobian(&feats)?;
                let e = *output_scale * y[0];
                let de = feature_chain(&jac, &dfeats, *output_scale);
                let (lh, mh) = lame_from_e_nu(S::one(), *nu);
                let mut d = hooke_matrix(dim, lh * e, mh * e);
                let sigma_hat = hooke_stress(lh, mh, eps);
                rank_one_update(&mut d, &sigma_hat, &de, S::one());
                Ok(d)
            }
            Self::NeuralLame { mlp_lambda, mlp_mu, input_scale, output_scale } => {
                let (feats, dfeats) = strain_features(eps, *input_scale);
                let (yl, jl) = mlp_lambda.forward_with_input_jacobian(&feats)?;
                let (ym, jm) = mlp_mu.forward_with_input_jacobian(&feats)?;
                let lambda = *output_scale * yl[0];
                let mu = *output_scale * ym[0];
                let dlambda = feature_chain(&jl, &dfeats, *output_scale);
                let dmu = feature_chain(&jm, &dfeats, *output_scale);
                let mut d = hooke_matrix(dim, lambda, mu);
                let t = eps.trace();
                rank_one_update(&mut d, &tr_i_unscaled(dim, t), &dlambda, S::one());
                rank_one_update(&mut d, &two_eps_voigt(eps), &dmu, S::one());
                Ok(d)
            }
            _ => Err(ConstitutiveError::WrongFamily { expected: "stress model" }),
        }
    }

    /// Accumulates `scale * d(cot : sigma)/d(params)` into `acc`.
    pub fn stress_param_vjp_accum(
        &self,
        eps: &SymTensor<S>,
        cot: &SymTensor<S>,
        scale: S,
        acc: &mut [S],
    ) -> Result<(), ConstitutiveError> {
        match self {
            Self::NeuralIsotropicE { mlp, nu, input_scale, output_scale } => {
                let (feats, _) = strain_features(eps, *input_scale);
                let (lh, mh) = lame_from_e_nu(S::one(), *nu);
                let sigma_hat = hooke_stress(lh, mh, eps);
                let c_y = *output_scale * cot.dot(&sigma_hat);
                mlp.param_vjp_accum(&feats, &[c_y], scale, acc)?;
                Ok(())
            }
            Self::NeuralLame { mlp_lambda, mlp_mu, input_scale, output_scale } => {
                let (feats, _) = strain_features(eps, *input_scale);
                let c_l = *output_scale * eps.trace() * cot.dot(&trace_voigt(eps.dim));
                let c_m = *output_scale * cot.dot(&two_eps_voigt(eps));
                let nl = mlp_lambda.param_count();
                let (acc_l, acc_m) = acc.split_at_mut(nl);
                mlp_lambda.param_vjp_accum(&feats, &[c_l], scale, acc_l)?;
                mlp_mu.param_vjp_accum(&feats, &[c_m], scale, acc_m)?;
                Ok(())
            }
            Self::GroundTruthSoftening { .. } | Self::GroundTruthLame { .. } => {
                Err(ConstitutiveError::UnsupportedOperation)
            }
            _ => Err(ConstitutiveError::WrongFamily { expected: "stress model" }),
        }
    }

    /// Thermal conductivity at temperature `t` (Kelvin).
    pub fn conductivity(&self, t: S) -> Result<S, ConstitutiveError> {
        match self {
            Self::GroundTruthConductivity { k_r, beta, delta, t_r } => {
                let base = S::one() + *beta * (t - *t_r) / *t_r;
                Ok(*k_r * base.powf(-*delta))
            }
            Self::NeuralConductivity { mlp, k_min, k_max, t_offset, t_scale } => {
                let x = (t - *t_offset) / *t_scale;
                let y = mlp.forward(&[x])?[0];
                Ok(*k_min + (*k_max - *k_min) * y)
            }
            _ => Err(ConstitutiveError::WrongFamily { expected: "conductivity model" }),
        }
    }

    /// dk/dT.
    pub fn conductivity_tangent(&self, t: S) -> Result<S, ConstitutiveError> {
        match self {
            Self::GroundTruthConductivity { k_r, beta, delta, t_r } => {
                let base = S::one() + *beta * (t - *t_r) / *t_r;
                Ok(-*k_r * *delta * (*beta / *t_r) * base.powf(-*delta - S::one()))
            }
            Self::NeuralConductivity { mlp, k_min, k_max, t_offset, t_scale } => {
                let x = (t - *t_offset) / *t_scale;
                let jac = mlp.input_jacobian(&[x])?;
                Ok((*k_max - *k_min) * jac[0] / *t_scale)
            }
            _ => Err(ConstitutiveError::WrongFamily { expected: "conductivity model" }),
        }
    }

    /// Accumulates `scale * d(cot * k)/d(params)` into `acc`.
    pub fn conductivity_param_vjp_accum(&self, t: S, cot: S, scale: S, acc: &mut [S]) -> Result<(), ConstitutiveError> {
        match self {
            Self::NeuralConductivity { mlp, k_min, k_max, t_offset, t_scale } => {
                let x = (t - *t_offset) / *t_scale;
                let c_y = cot * (*k_max - *k_min);
                mlp.param_vjp_accum(&[x], &[c_y], scale, acc)?;
                Ok(())
            }
            Self::GroundTruthConductivity { .. } => Err(ConstitutiveError::UnsupportedOperation),
            _ => Err(ConstitutiveError::WrongFamily { expected: "conductivity model" }),
        }
    }
}

fn tr_i_unscaled<S: Scalar>(dim: usize, t: S) -> SymTensor<S> {
    let mut v = trace_voigt(dim);
    for x in v.voigt_mut() {
        *x *= t;
    }
    v
}

fn validate_c1_nu<S: Scalar>(c1: S, nu: Option<S>) -> Result<(), ConstitutiveError> {
    if c1 <= S::zero() {
        return Err(ConstitutiveError::InvalidArgument("c1 must be positive".into()));
    }
    if let Some(nu) = nu {
        if nu <= S::zero() || nu >= S::of(0.5) {
            return Err(ConstitutiveError::InvalidArgument("Poisson ratio must be in (0, 0.5)".into()));
        }
    }
    Ok(())
}

/// c1 / (1 + c2 |t|) and its derivative in t; the subgradient at t = 0 is 0.
fn softening<S: Scalar>(c1: S, c2: S, t: S) -> (S, S) {
    let denom = S::one() + c2 * t.abs();
    let value = c1 / denom;
    let sign = if t > S::zero() {
        S::one()
    } else if t < S::zero() {
        -S::one()
    } else {
        S::zero()
    };
    let deriv = -c1 * c2 * sign / (denom * denom);
    (value, deriv)
}

/// dModulus/dEps = out_scale * (dy/dfeat . dfeat/deps) as a Voigt row.
fn feature_chain<S: Scalar>(jac: &[S], dfeats: &[SymTensor<S>; 3], out_scale: S) -> SymTensor<S> {
    let dim = dfeats[0].dim;
    let mut out = SymTensor::zero(dim);
    for (k, df) in dfeats.iter().enumerate() {
        let w = out_scale * jac[k];
        for (o, &d) in out.voigt_mut().iter_mut().zip(df.voigt()) {
            *o += w * d;
        }
    }
    out
}

/// d += coef * col ⊗ row.
fn rank_one_update<S: Scalar>(d: &mut VoigtMat<S>, col: &SymTensor<S>, row: &SymTensor<S>, coef: S) {
    let n = voigt_len(d.dim);
    for i in 0..n {
        for j in 0..n {
            d.add(i, j, coef * col.voigt()[i] * row.voigt()[j]);
        }
    }
}

/// Reference constants of the ground-truth laws (SI units).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthConstants {
    pub c1_pa: f64,
    pub c2: f64,
    pub nu: f64,
    pub k_r: f64,
    pub beta: f64,
    pub delta: f64,
    pub t_r_kelvin: f64,
}

impl Default for GroundTruthConstants {
    fn default() -> Self {
        Self { c1_pa: 1e9, c2: 500.0, nu: 0.3, k_r: 2.0, beta: 1.0, delta: 0.62, t_r_kelvin: 298.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_tangent(model: &ConstitutiveModel<f64>, eps: &SymTensor<f64>, h: f64) -> VoigtMat<f64> {
        let n = voigt_len(eps.dim);
        let mut d = VoigtMat::zero(eps.dim);
        for j in 0..n {
            let mut ep = *eps;
            ep.voigt_mut()[j] += h;
            let mut em = *eps;
            em.voigt_mut()[j] -= h;
            let sp = model.stress(&ep).unwrap();
            let sm = model.stress(&em).unwrap();
            for i in 0..n {
                d.set(i, j, (sp.voigt()[i] - sm.voigt()[i]) / (2.0 * h));
            }
        }
        d
    }

    #[test]
    fn softening_at_zero_strain_gives_reference_modulus_and_zero_stress() {
        let m = ConstitutiveModel::<f64>::ground_truth_softening(1e9, 500.0, 0.3).unwrap();
        let eps = SymTensor::zero(2);
        let sig = m.stress(&eps).unwrap();
        assert!(sig.voigt().iter().all(|&v| v == 0.0));
        // modulus at zero strain: tangent trace matches plane-strain Hooke with E = c1
        let d = m.stress_tangent(&eps).unwrap();
        let e = 1e9;
        let (l, mu) = lame_from_e_nu(e, 0.3);
        assert!((d.get(0, 0) - (l + 2.0 * mu)).abs() / e < 1e-12);
    }

    #[test]
    fn softening_stress_matches_scalar_formula_oracle() {
        let m = ConstitutiveModel::<f64>::ground_truth_softening(1e9, 500.0, 0.3).unwrap();
        let eps = SymTensor::diagonal(2, [-0.002, 0.0, 0.0]);
        // scalar oracle: E = c1/(1 + c2*|tr|) then plane-strain Hooke
        let e: f64 = 1e9 / (1.0 + 500.0 * 0.002);
        assert!((e - 5e8).abs() < 1e-3);
        let (l, mu) = lame_from_e_nu(e, 0.3);
        let sig = m.stress(&eps).unwrap();
        let tr = -0.002;
        assert!((sig.voigt()[0] - (l * tr + 2.0 * mu * -0.002)).abs() < 1e-3);
        assert!((sig.voigt()[1] - l * tr).abs() < 1e-3);
        assert_eq!(sig.voigt()[2], 0.0);
    }

    #[test]
    fn neural_isotropic_constant_net_reduces_to_hooke() {
        let mut mlp = MlpParams::<f64>::zeroed(stress_net_config(&[4]));
        let b = 0.7;
        *mlp.layers[1].bias.last_mut().unwrap() = b;
        let scale = 1e9;
        let m = ConstitutiveModel::neural_isotropic_e(mlp, 0.3, 100.0, scale).unwrap();
        // softplus(0.7) directly
        let e_direct = scale * 0.7f64.exp().ln_1p();
        let eps = SymTensor::diagonal(2, [-0.001, 0.0005, 0.0]);
        let sig = m.stress(&eps).unwrap();
        let (l, mu) = lame_from_e_nu(e_direct, 0.3);
        let expect = hooke_stress(l, mu, &eps);
        for (a, b) in sig.voigt().iter().zip(expect.voigt()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn linear_elastic_limit_has_constant_stiffness() {
        let m = ConstitutiveModel::<f64>::ground_truth_softening(1e9, 0.0, 0.3).unwrap();
        let d0 = m.stress_tangent(&SymTensor::zero(2)).unwrap();
        let d1 = m.stress_tangent(&SymTensor::diagonal(2, [-0.01, 0.004, 0.0])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((d0.get(i, j) - d1.get(i, j)).abs() <= 1e-6 * d0.get(0, 0).abs());
            }
        }
    }

    #[test]
    fn softening_tangent_matches_finite_differences() {
        let m = ConstitutiveModel::<f64>::ground_truth_softening(1e9, 500.0, 0.3).unwrap();
        let eps = SymTensor::from_voigt(2, &[-0.002, 0.0003, 0.001]);
        let d = m.stress_tangent(&eps).unwrap();
        let fd = fd_tangent(&m, &eps, 1e-7);
        for i in 0..3 {
            for j in 0..3 {
                let rel = (d.get(i, j) - fd.get(i, j)).abs() / fd.get(i, j).abs().max(1e3);
                assert!(rel <= 1e-6, "({i},{j}): {} vs {}", d.get(i, j), fd.get(i, j));
            }
        }
    }

    #[test]
    fn neural_lame_tangent_matches_finite_differences() {
        let cfg = stress_net_config(&[8]);
        let ml = MlpParams::<f64>::init(cfg.clone(), 5);
        let mm = MlpParams::<f64>::init(cfg, 6);
        let m = ConstitutiveModel::neural_lame(ml, mm, 100.0, 1e9).unwrap();
        for dim in [2usize, 3] {
            let eps = if dim == 2 {
                SymTensor::from_voigt(2, &[-0.004, 0.001, 0.002])
            } else {
                SymTensor::from_voigt(3, &[-0.004, 0.001, 0.0005, 0.002, -0.001, 0.0015])
            };
            let d = m.stress_tangent(&eps).unwrap();
            let fd = fd_tangent(&m, &eps, 1e-7);
            let scale = d.get(0, 0).abs();
            for i in 0..voigt_len(dim) {
                for j in 0..voigt_len(dim) {
                    let rel = (d.get(i, j) - fd.get(i, j)).abs() / scale.max(fd.get(i, j).abs());
                    assert!(rel <= 1e-5, "dim {dim} ({i},{j}): {} vs {}", d.get(i, j), fd.get(i, j));
                }
            }
        }
    }

    #[test]
    fn stress_param_vjp_matches_finite_differences() {
        let cfg = stress_net_config(&[6]);
        let mlp = MlpParams::<f64>::init(cfg, 9);
        let m = ConstitutiveModel::neural_isotropic_e(mlp, 0.3, 100.0, 1e9).unwrap();
        let eps = SymTensor::from_voigt(2, &[-0.003, 0.0012, 0.0018]);
        let cot = SymTensor::from_voigt(2, &[0.4, -0.2, 0.9]);
        let mut grads = vec![0.0; m.param_count()];
        m.stress_param_vjp_accum(&eps, &cot, 1.0, &mut grads).unwrap();

        let flat = m.params_flat();
        let h = 1e-5;
        for s in 0..30 {
            let k = (s * 13) % flat.len();
            let mut mp = m.clone();
            let mut f = flat.clone();
            f[k] += h;
            mp.set_params_flat(&f).unwrap();
            let up = mp.stress(&eps).unwrap().dot(&cot);
            f[k] -= 2.0 * h;
            mp.set_params_flat(&f).unwrap();
            let um = mp.stress(&eps).unwrap().dot(&cot);
            let fd = (up - um) / (2.0 * h);
            let rel = (grads[k] - fd).abs() / fd.abs().max(1.0);
            assert!(rel <= 1e-5, "param {k}: {} vs {fd}", grads[k]);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient_and_ground_truth_is_unsupported() {
        let cfg = stress_net_config(&[4]);
        let mlp = MlpParams::<f64>::init(cfg, 2);
        let m = ConstitutiveModel::neural_isotropic_e(mlp, 0.3, 100.0, 1e9).unwrap();
        let eps = SymTensor::from_voigt(2, &[-0.001, 0.0, 0.0005]);
        let mut grads = vec![0.0; m.param_count()];
        m.stress_param_vjp_accum(&eps, &SymTensor::zero(2), 1.0, &mut grads).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));

        let gt = ConstitutiveModel::<f64>::ground_truth_softening(1e9, 500.0, 0.3).unwrap();
        let mut empty: Vec<f64> = Vec::new();
        assert!(matches!(
            gt.stress_param_vjp_accum(&eps, &SymTensor::zero(2), 1.0, &mut empty),
            Err(ConstitutiveError::UnsupportedOperation)
        ));
    }

    #[test]
    fn conductivity_reference_points() {
        let m = ConstitutiveModel::<f64>::ground_truth_conductivity(2.0, 1.0, 0.62, 298.0).unwrap();
        assert!((m.conductivity(298.0).unwrap() - 2.0).abs() < 1e-14);
        // T = 596 K: k = 2 * 2^(-0.62)
        let k = m.conductivity(596.0).unwrap();
        let oracle = 2.0 * (2.0f64).powf(-0.62);
        assert!((k - oracle).abs() < 1e-12);
        assert!((oracle - 1.302).abs() < 1e-3);
    }

    #[test]
    fn conductivity_tangent_and_vjp_match_finite_differences() {
        let gt = ConstitutiveModel::<f64>::ground_truth_conductivity(2.0, 1.0, 0.62, 298.0).unwrap();
        let t = 350.0;
        let h = 1e-4;
        let fd = (gt.conductivity(t + h).unwrap() - gt.conductivity(t - h).unwrap()) / (2.0 * h);
        assert!((gt.conductivity_tangent(t).unwrap() - fd).abs() / fd.abs() < 1e-8);

        let mlp = MlpParams::<f64>::init(conductivity_net_config(&[8]), 3);
        let m = ConstitutiveModel::neural_conductivity(mlp, 0.1, 4.0, 300.0, 100.0).unwrap();
        let fd = (m.conductivity(t + h).unwrap() - m.conductivity(t - h).unwrap()) / (2.0 * h);
        let an = m.conductivity_tangent(t).unwrap();
        assert!((an - fd).abs() / fd.abs().max(1e-8) < 1e-6, "{an} vs {fd}");

        let mut grads = vec![0.0; m.param_count()];
        m.conductivity_param_vjp_accum(t, 1.3, 1.0, &mut grads).unwrap();
        let flat = m.params_flat();
        for s in 0..20 {
            let k = (s * 7) % flat.len();
            let mut mp = m.clone();
            let mut f = flat.clone();
            f[k] += h;
            mp.set_params_flat(&f).unwrap();
            let up = 1.3 * mp.conductivity(t).unwrap();
            f[k] -= 2.0 * h;
            mp.set_params_flat(&f).unwrap();
            let um = 1.3 * mp.conductivity(t).unwrap();
            let fdg = (up - um) / (2.0 * h);
            assert!((grads[k] - fdg).abs() / fdg.abs().max(1e-6) < 1e-5, "param {k}");
        }
    }

    #[test]
    fn neural_conductivity_with_zero_weights_is_positive_constant() {
        let mlp = MlpParams::<f64>::zeroed(conductivity_net_config(&[8]));
        let m = ConstitutiveModel::neural_conductivity(mlp, 0.1, 4.0, 300.0, 100.0).unwrap();
        let k = m.conductivity(321.0).unwrap();
        // sigmoid(0) = 1/2 mapped into (k_min, k_max)
        assert!((k - (0.1 + 3.9 * 0.5)).abs() < 1e-14);
        assert!(k > 0.0);
    }

    #[test]
    fn ground_truth_modulus_is_monotone_decreasing_in_trace_magnitude() {
        let m = ConstitutiveModel::<f64>::ground_truth_softening(1e9, 500.0, 0.3).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let tr = -0.0001 * k as f64;
            let eps = SymTensor::diagonal(2, [tr, 0.0, 0.0]);
            // recover E from the stress at unit Poisson-free probe: use tangent(0 shear)
            let d = m.stress_tangent(&eps).unwrap();
            let e_proxy = d.get(2, 2); // mu scales linearly with E
            assert!(e_proxy <= last + 1e-9);
            last = e_proxy;
        }
    }

    #[test]
    fn isotropic_frame_indifference_under_rotation() {
        let m = ConstitutiveModel::<f64>::ground_truth_lame(1e9, 500.0).unwrap();
        let eps = SymTensor::from_voigt(2, &[-0.002, 0.0007, 0.0016]);
        let theta = 0.6f64;
        let (c, s) = (theta.cos(), theta.sin());
        // Q eps Q^T in full tensor form
        let e = eps.as_matrix3();
        let q = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let mut qe = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    qe[i][j] += q[i][k] * e[k][j];
                }
            }
        }
        let mut qeqt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    qeqt[i][j] += qe[i][k] * q[j][k];
                }
            }
        }
        let eps_rot = SymTensor::from_voigt(2, &[qeqt[0][0], qeqt[1][1], 2.0 * qeqt[0][1]]);
        // stress Voigt stores sigma_xy directly (no engineering factor)
        let stress_matrix = |t: &SymTensor<f64>| {
            let v = t.voigt();
            [[v[0], v[2], 0.0], [v[2], v[1], 0.0], [0.0, 0.0, 0.0]]
        };
        let sig = stress_matrix(&m.stress(&eps).unwrap());
        let sig_rot = stress_matrix(&m.stress(&eps_rot).unwrap());
        // Q sigma Q^T
        let mut qs = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    qs[i][j] += q[i][k] * sig[k][j];
                }
            }
        }
        let mut qsqt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    qsqt[i][j] += qs[i][k] * q[j][k];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (sig_rot[i][j] - qsqt[i][j]).abs() <= 1e-6 * qsqt[i][j].abs().max(1e3),
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn invalid_constants_are_rejected() {
        assert!(ConstitutiveModel::<f64>::ground_truth_softening(-1.0, 500.0, 0.3).is_err());
        assert!(ConstitutiveModel::<f64>::ground_truth_softening(1e9, 500.0, 0.6).is_err());
        assert!(ConstitutiveModel::<f64>::ground_truth_conductivity(0.0, 1.0, 0.62, 298.0).is_err());
    }
}

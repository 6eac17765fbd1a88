//! Training machinery: Adam over flat parameter vectors, the epoch loop with
//! divergence guard and checkpointing, noise injection for synthetic datasets,
//! checkpoint files (model + optimizer state), and offline fits of networks to
//! closed-form laws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::AdjointError;
use crate::assembly::{AssemblyError, SolverFailure};
use crate::constitutive::{ConstitutiveError, ConstitutiveModel, SymTensor};
use crate::neural::{MlpCheckpoint, MlpError, MlpParams};
use crate::scalar::Scalar;

pub const TRAIN_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss {loss:.3e} exceeded {factor:.0}x the initial loss for {patience} consecutive epochs")]
    Diverged { epoch: usize, loss: f64, factor: f64, patience: usize },
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error(transparent)]
    Solver(#[from] SolverFailure),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Fespace(#[from] crate::fespace::FespaceError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("checkpoint version {got} unsupported (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-2, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![S::zero(); n_params], v: vec![S::zero(); n_params], step: 0 }
    }

    pub fn update(&mut self, params: &mut [S], grad: &[S], cfg: &AdamConfig) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let b1 = S::of(cfg.beta1);
        let b2 = S::of(cfg.beta2);
        let one = S::one();
        let bc1 = one - S::of(cfg.beta1.powi(self.step as i32));
        let bc2 = one - S::of(cfg.beta2.powi(self.step as i32));
        let lr = S::of(cfg.learning_rate);
        let eps = S::of(cfg.epsilon);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (one - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (one - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    pub fn to_json(&self) -> AdamStateJson {
        AdamStateJson {
            m: self.m.iter().map(|x| x.as_f64()).collect(),
            v: self.v.iter().map(|x| x.as_f64()).collect(),
            step: self.step,
        }
    }

    pub fn from_json(json: &AdamStateJson) -> Self {
        Self {
            m: json.m.iter().map(|&x| S::of(x)).collect(),
            v: json.v.iter().map(|&x| S::of(x)).collect(),
            step: json.step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamStateJson {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// One experiment exposed to the generic epoch loop.
pub trait TrainProblem<S: Scalar> {
    fn params(&self) -> Vec<S>;
    fn set_params(&mut self, p: &[S]) -> Result<(), TrainError>;
    /// Loss over the training split and its adjoint gradient.
    fn train_loss_and_grad(&mut self) -> Result<(S, Vec<S>), TrainError>;
    /// Loss over the test split; must not mutate parameters.
    fn test_loss(&mut self) -> Result<S, TrainError>;
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e}\n", r.epoch, r.train_loss, r.test_loss));
        }
        out
    }
}

/// Epoch-loop controls.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub checkpoint_epochs: Vec<usize>,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl TrainOptions {
    pub fn new(epochs: usize, adam: AdamConfig, checkpoint_epochs: Vec<usize>) -> Result<Self, TrainError> {
        if epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(Self { epochs, adam, checkpoint_epochs, divergence_factor: 1e3, divergence_patience: 10 })
    }
}

/// Runs the full-batch training loop. Each epoch records the loss at the
/// current parameters and then applies the Adam update, except the final epoch
/// which only records (so the returned parameters are exactly the ones whose
/// loss closes the history). The checkpoint hook fires after the update.
pub fn train_loop<S, P>(
    problem: &mut P,
    opts: &TrainOptions,
    state: &mut AdamState<S>,
    mut on_checkpoint: impl FnMut(usize, &P, &AdamState<S>) -> Result<(), TrainError>,
) -> Result<TrainHistory, TrainError>
where
    S: Scalar,
    P: TrainProblem<S>,
{
    if opts.epochs == 0 {
        return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
    }
    let mut history = TrainHistory::default();
    let mut initial_loss = f64::INFINITY;
    let mut bad_epochs = 0usize;
    for epoch in 1..=opts.epochs {
        let (loss, grad) = problem.train_loss_and_grad()?;
        let test = problem.test_loss()?;
        let loss_f = loss.as_f64();
        if epoch == 1 {
            initial_loss = loss_f;
        }
        history.records.push(EpochRecord { epoch, train_loss: loss_f, test_loss: test.as_f64() });
        if !loss_f.is_finite() || loss_f > opts.divergence_factor * initial_loss {
            bad_epochs += 1;
            if bad_epochs >= opts.divergence_patience {
                return Err(TrainError::Diverged {
                    epoch,
                    loss: loss_f,
                    factor: opts.divergence_factor,
                    patience: opts.divergence_patience,
                });
            }
        } else {
            bad_epochs = 0;
        }
        if epoch < opts.epochs {
            let mut params = problem.params();
            state.update(&mut params, &grad, &opts.adam);
            problem.set_params(&params)?;
        }
        if opts.checkpoint_epochs.contains(&epoch) {
            on_checkpoint(epoch, problem, state)?;
        }
    }
    Ok(history)
}

/// Multiplies each value by (1 + fraction * xi), xi standard normal,
/// deterministic in the rng state.
pub fn apply_relative_noise<S: Scalar>(values: &mut [S], fraction: f64, rng: &mut ChaCha20Rng) {
    for v in values.iter_mut() {
        let xi: f64 = StandardNormal.sample(rng);
        *v = *v * S::of(1.0 + fraction * xi);
    }
}

/// Serializable snapshot of a trainable constitutive model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelCheckpoint {
    NeuralIsotropicE { nu: f64, input_scale: f64, output_scale: f64, mlp: MlpCheckpoint },
    NeuralLame { input_scale: f64, output_scale: f64, mlp_lambda: MlpCheckpoint, mlp_mu: MlpCheckpoint },
    NeuralConductivity { k_min: f64, k_max: f64, t_offset: f64, t_scale: f64, mlp: MlpCheckpoint },
}

impl ModelCheckpoint {
    pub fn from_model(model: &ConstitutiveModel<f64>, seed: u64) -> Result<Self, TrainError> {
        match model {
            ConstitutiveModel::NeuralIsotropicE { mlp, nu, input_scale, output_scale } => {
                Ok(Self::NeuralIsotropicE {
                    nu: *nu,
                    input_scale: *input_scale,
                    output_scale: *output_scale,
                    mlp: mlp.to_checkpoint(seed),
                })
            }
            ConstitutiveModel::NeuralLame { mlp_lambda, mlp_mu, input_scale, output_scale } => {
                Ok(Self::NeuralLame {
                    input_scale: *input_scale,
                    output_scale: *output_scale,
                    mlp_lambda: mlp_lambda.to_checkpoint(seed),
                    mlp_mu: mlp_mu.to_checkpoint(seed),
                })
            }
            ConstitutiveModel::NeuralConductivity { mlp, k_min, k_max, t_offset, t_scale } => {
                Ok(Self::NeuralConductivity {
                    k_min: *k_min,
                    k_max: *k_max,
                    t_offset: *t_offset,
                    t_scale: *t_scale,
                    mlp: mlp.to_checkpoint(seed),
                })
            }
            _ => Err(TrainError::InvalidConfig("only neural models can be checkpointed".into())),
        }
    }

    pub fn to_model(&self) -> Result<ConstitutiveModel<f64>, TrainError> {
        Ok(match self {
            Self::NeuralIsotropicE { nu, input_scale, output_scale, mlp } => {
                ConstitutiveModel::neural_isotropic_e(MlpParams::from_checkpoint(mlp)?, *nu, *input_scale, *output_scale)?
            }
            Self::NeuralLame { input_scale, output_scale, mlp_lambda, mlp_mu } => {
                ConstitutiveModel::neural_lame(
                    MlpParams::from_checkpoint(mlp_lambda)?,
                    MlpParams::from_checkpoint(mlp_mu)?,
                    *input_scale,
                    *output_scale,
                )?
            }
            Self::NeuralConductivity { k_min, k_max, t_offset, t_scale, mlp } => {
                ConstitutiveModel::neural_conductivity(MlpParams::from_checkpoint(mlp)?, *k_min, *k_max, *t_offset, *t_scale)?
            }
        })
    }
}

/// Full training checkpoint: model, optimizer state, epoch, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    pub format_version: u32,
    pub epoch: usize,
    pub seed: u64,
    pub model: ModelCheckpoint,
    pub optimizer: AdamStateJson,
}

impl TrainCheckpoint {
    pub fn new(epoch: usize, seed: u64, model: ModelCheckpoint, optimizer: AdamStateJson) -> Self {
        Self { format_version: TRAIN_CHECKPOINT_VERSION, epoch, seed, model, optimizer }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TrainError> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serialize checkpoint"))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| TrainError::CorruptFile(e.to_string()))?;
        if ck.format_version != TRAIN_CHECKPOINT_VERSION {
            return Err(TrainError::VersionMismatch { expected: TRAIN_CHECKPOINT_VERSION, got: ck.format_version });
        }
        Ok(ck)
    }
}

/// Supervised fit of an MLP to scalar targets by full-batch Adam on the mean
/// squared error. Used to pre-fit networks to closed-form laws.
pub fn fit_mlp<S: Scalar>(
    mlp: &mut MlpParams<S>,
    inputs: &[Vec<S>],
    targets: &[S],
    epochs: usize,
    adam: &AdamConfig,
) -> Result<f64, TrainError> {
    assert_eq!(inputs.len(), targets.len());
    let n = inputs.len();
    let mut state = AdamState::<S>::new(mlp.param_count());
    let mut last = f64::INFINITY;
    for _ in 0..epochs {
        let mut grad = vec![S::zero(); mlp.param_count()];
        let mut loss = S::zero();
        for (x, &y) in inputs.iter().zip(targets) {
            let out = mlp.forward(x)?[0];
            let diff = out - y;
            loss += diff * diff;
            let cot = S::of(2.0 / n as f64) * diff;
            mlp.param_vjp_accum(x, &[S::one()], cot, &mut grad)?;
        }
        let mut params = mlp.flatten();
        state.update(&mut params, &grad, adam);
        mlp.set_from_flat(&params)?;
        last = (loss / S::of(n as f64)).as_f64();
    }
    Ok(last)
}

/// Random small-strain tensors (3D, embedded from any dimension) used to
/// sample the ground-truth laws when pre-fitting networks offline.
pub fn sample_strains<S: Scalar>(count: usize, max_component: f64, seed: u64) -> Vec<SymTensor<S>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut comps = [S::zero(); 6];
        for c in comps.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *c = S::of(max_component * xi * 0.5);
        }
        out.push(SymTensor::from_voigt(3, &comps));
    }
    out
}

//! Learning the UOT pooling parameters.
//!
//! Weights are stored unconstrained (`alpha = softplus(beta)`,
//! `rho = softplus(tau)`), gradients come from central finite differences,
//! and a small trainer fits the pooling jointly with a logistic readout on
//! synthetic bag-classification tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{softplus, softplus_inverse, DenseMatrix, SimplexVector};
use crate::pooling::{attention_weights, uot_pool, AttentionParams, PoolingSpec};
use crate::solver::{RegularizerKind, Solver, UotParams};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Learning rate used by [`TrainOptions::default`].
pub const DEFAULT_LR: f64 = 2.0;

/// Where the priors `p0` and `q0` come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorMode {
    FixedUniform,
    /// `p0 = softmax(U X 1_N)`, `q0 = softmax(w^T tanh(V X))`.
    LearnedAttention(AttentionParams),
}

/// Whether every module gets its own weights or all modules share one set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WeightSharing {
    #[default]
    PerModule,
    Shared,
}

/// Unconstrained parameters of a UOT pooling layer.
///
/// With [`WeightSharing::Shared`] the four weight vectors have length 1 and
/// are broadcast over `k_iters` modules.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamState {
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub tau: Vec<f64>,
    pub prior_mode: PriorMode,
    pub reg: RegularizerKind,
    k_iters: usize,
    sharing: WeightSharing,
}

impl ReparamState {
    /// Every weight starts at `softplus(beta) = 1`, priors uniform.
    pub fn new(
        k_iters: usize,
        sharing: WeightSharing,
        prior_mode: PriorMode,
        reg: RegularizerKind,
    ) -> Result<Self> {
        Self::from_weights(k_iters, sharing, [1.0; 3], 1.0, prior_mode, reg)
    }

    /// Starts from constant positive weights.
    pub fn from_weights(
        k_iters: usize,
        sharing: WeightSharing,
        alphas: [f64; 3],
        rho: f64,
        prior_mode: PriorMode,
        reg: RegularizerKind,
    ) -> Result<Self> {
        if k_iters == 0 {
            return Err(Error::InvalidParams("k_iters must be at least 1".into()));
        }
        if alphas
            .iter()
            .chain([&rho])
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::InvalidParams(
                "weights must be finite and positive".into(),
            ));
        }
        let len = match sharing {
            WeightSharing::PerModule => k_iters,
            WeightSharing::Shared => 1,
        };
        let fill = |w: f64| vec![softplus_inverse(w); len];
        Ok(Self {
            beta0: fill(alphas[0]),
            beta1: fill(alphas[1]),
            beta2: fill(alphas[2]),
            tau: fill(rho),
            prior_mode,
            reg,
            k_iters,
            sharing,
        })
    }

    /// Inverts the reparametrization of existing parameters. The priors are
    /// taken as uniform; the params' own priors are dropped.
    pub fn from_params(params: &UotParams) -> Self {
        let inv = |v: &[f64]| v.iter().map(|&w| softplus_inverse(w)).collect();
        Self {
            beta0: inv(params.alpha0()),
            beta1: inv(params.alpha1()),
            beta2: inv(params.alpha2()),
            tau: inv(params.rho()),
            prior_mode: PriorMode::FixedUniform,
            reg: params.reg(),
            k_iters: params.k_iters(),
            sharing: WeightSharing::PerModule,
        }
    }

    pub fn k_iters(&self) -> usize {
        self.k_iters
    }

    pub fn sharing(&self) -> WeightSharing {
        self.sharing
    }

    /// Number of scalar parameters, i.e. the length of [`Self::to_flat`].
    pub fn num_params(&self) -> usize {
        self.to_flat().len()
    }

    /// Flat parameter vector: `beta0, beta1, beta2, tau`, then for attention
    /// priors `V` (row-major), `w`, and `U` (row-major) when present.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for v in [&self.beta0, &self.beta1, &self.beta2, &self.tau] {
            flat.extend_from_slice(v);
        }
        if let PriorMode::LearnedAttention(att) = &self.prior_mode {
            flat.extend_from_slice(att.v_mat.as_slice());
            flat.extend_from_slice(&att.w_vec);
            if let Some(u) = &att.u_mat {
                flat.extend_from_slice(u.as_slice());
            }
        }
        flat
    }

    /// Overwrites every parameter from a vector laid out as in [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                left: flat.len(),
                right: self.num_params(),
            });
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.beta0);
        take(&mut self.beta1);
        take(&mut self.beta2);
        take(&mut self.tau);
        if let PriorMode::LearnedAttention(att) = &mut self.prior_mode {
            take(att.v_mat.as_mut_slice());
            take(&mut att.w_vec);
            if let Some(u) = &mut att.u_mat {
                take(u.as_mut_slice());
            }
        }
        Ok(())
    }

    /// Human-readable names aligned with [`Self::to_flat`].
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (label, v) in [
            ("beta0", &self.beta0),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("tau", &self.tau),
        ] {
            names.extend((0..v.len()).map(|k| format!("{label}[{k}]")));
        }
        if let PriorMode::LearnedAttention(att) = &self.prior_mode {
            let (r, c) = att.v_mat.shape();
            names.extend((0..r * c).map(|i| format!("V[{},{}]", i / c, i % c)));
            names.extend((0..att.w_vec.len()).map(|i| format!("w[{i}]")));
            if let Some(u) = &att.u_mat {
                let (r, c) = u.shape();
                names.extend((0..r * c).map(|i| format!("U[{},{}]", i / c, i % c)));
            }
        }
        names
    }
}

/// Maps the unconstrained state to solver parameters for input `x`.
pub fn materialize_params(state: &ReparamState, x: &DenseMatrix) -> Result<UotParams> {
    let k = state.k_iters;
    let expand =
        |v: &[f64]| -> Vec<f64> { (0..k).map(|i| softplus(v[i.min(v.len() - 1)])).collect() };
    let (d, n) = x.shape();
    let (p0, q0) = match &state.prior_mode {
        PriorMode::FixedUniform => (SimplexVector::uniform(d)?, SimplexVector::uniform(n)?),
        PriorMode::LearnedAttention(att) => (att.feature_prior(x)?, attention_weights(x, att)?),
    };
    UotParams::new(
        expand(&state.beta0),
        expand(&state.beta1),
        expand(&state.beta2),
        expand(&state.tau),
        p0,
        q0,
        state.reg,
    )
}

/// Finite-difference gradient aligned with [`ReparamState::parameter_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Central differences of `loss` over a flat parameter vector.
pub fn fd_gradient_flat(
    mut loss: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    eps: f64,
) -> Result<GradientVector> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParams(format!(
            "eps = {eps} must be positive"
        )));
    }
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for j in 0..point.len() {
        probe[j] = point[j] + eps;
        let up = loss(&probe);
        if !up.is_finite() {
            return Err(Error::NonFiniteProbe {
                coordinate: j,
                direction: "forward",
            });
        }
        probe[j] = point[j] - eps;
        let down = loss(&probe);
        if !down.is_finite() {
            return Err(Error::NonFiniteProbe {
                coordinate: j,
                direction: "backward",
            });
        }
        probe[j] = point[j];
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(GradientVector(grad))
}

/// Central-difference gradient of `loss` with respect to every parameter of
/// `state`.
pub fn fd_gradient(
    loss: impl Fn(&ReparamState) -> f64,
    state: &ReparamState,
    eps: f64,
) -> Result<GradientVector> {
    let mut scratch = state.clone();
    let point = state.to_flat();
    fd_gradient_flat(
        |flat| {
            scratch.clone_from(state);
            match scratch.set_flat(flat) {
                Ok(()) => loss(&scratch),
                Err(_) => f64::NAN,
            }
        },
        &point,
        eps,
    )
}

/// Labeling rule of a synthetic task. A bag is positive when the statistic
/// of feature `feature` across its samples exceeds `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelRule {
    MaxThreshold { feature: usize, threshold: f64 },
    MeanThreshold { feature: usize, threshold: f64 },
}

impl LabelRule {
    /// Max of `bag_size` uniforms exceeds `0.5^(1/N)` with probability 1/2.
    pub fn max_balanced(feature: usize, bag_size: usize) -> Self {
        Self::MaxThreshold {
            feature,
            threshold: 0.5f64.powf(1.0 / bag_size as f64),
        }
    }

    pub fn mean_balanced(feature: usize) -> Self {
        Self::MeanThreshold {
            feature,
            threshold: 0.5,
        }
    }

    fn label(&self, x: &DenseMatrix) -> bool {
        match *self {
            Self::MaxThreshold { feature, threshold } => {
                x.row(feature).iter().any(|&v| v > threshold)
            }
            Self::MeanThreshold { feature, threshold } => {
                x.row(feature).iter().sum::<f64>() / x.cols() as f64 > threshold
            }
        }
    }

    fn feature(&self) -> usize {
        match *self {
            Self::MaxThreshold { feature, .. } | Self::MeanThreshold { feature, .. } => feature,
        }
    }
}

/// Bags of `dim x bag_size` uniform features with a binary label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTask {
    pub n_bags: usize,
    pub bag_size: usize,
    pub dim: usize,
    pub rule: LabelRule,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bags: Vec<DenseMatrix>,
    pub labels: Vec<bool>,
}

impl SyntheticTask {
    pub fn max_threshold(n_bags: usize, dim: usize, bag_size: usize, seed: u64) -> Self {
        Self {
            n_bags,
            bag_size,
            dim,
            rule: LabelRule::max_balanced(0, bag_size),
            seed,
        }
    }

    /// Draws bags until both classes hold half of `n_bags`, so the split is
    /// exact (off by one for odd counts).
    pub fn generate(&self) -> Result<Dataset> {
        if self.n_bags < 2 || self.bag_size == 0 || self.dim == 0 {
            return Err(Error::InvalidParams(
                "a task needs at least two bags and non-empty bags".into(),
            ));
        }
        if self.rule.feature() >= self.dim {
            return Err(Error::InvalidParams(format!(
                "label feature {} is outside dimension {}",
                self.rule.feature(),
                self.dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let want_pos = self.n_bags / 2;
        let want_neg = self.n_bags - want_pos;
        let (mut pos, mut neg) = (0, 0);
        let mut data = Dataset {
            bags: Vec::with_capacity(self.n_bags),
            labels: Vec::with_capacity(self.n_bags),
        };
        let max_draws = 1000 * self.n_bags;
        for _ in 0..max_draws {
            if pos == want_pos && neg == want_neg {
                return Ok(data);
            }
            let x = DenseMatrix::from_fn(self.dim, self.bag_size, |_, _| rng.gen())?;
            let label = self.rule.label(&x);
            let slot = if label { &mut pos } else { &mut neg };
            if *slot < if label { want_pos } else { want_neg } {
                *slot += 1;
                data.bags.push(x);
                data.labels.push(label);
            }
        }
        Err(Error::InvalidParams(
            "label rule is too unbalanced to fill both classes".into(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub eps: f64,
    /// Keep the pooling parameters fixed and train only the readout.
    pub freeze_pooling: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: DEFAULT_LR,
            eps: DEFAULT_EPS,
            freeze_pooling: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean loss before training, then after every epoch (`epochs + 1` entries).
    pub loss_trace: Vec<f64>,
    pub state: ReparamState,
    pub readout: Vec<f64>,
    pub bias: f64,
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Pools every bag and z-scores each feature over the batch; any solver
/// failure yields `None`.
fn pool_all(data: &Dataset, state: &ReparamState, solver: Solver) -> Option<Vec<Vec<f64>>> {
    let mut features: Vec<Vec<f64>> = data
        .bags
        .iter()
        .map(|x| {
            let params = materialize_params(state, x).ok()?;
            let (pooled, diag) = uot_pool(x, &params, solver).ok()?;
            (!diag.has_nan).then(|| pooled.into_vec())
        })
        .collect::<Option<_>>()?;
    let m = features.len() as f64;
    for j in 0..features[0].len() {
        let mean = features.iter().map(|f| f[j]).sum::<f64>() / m;
        let var = features.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / m;
        let scale = if var > 0.0 { var.sqrt().recip() } else { 0.0 };
        for f in &mut features {
            f[j] = (f[j] - mean) * scale;
        }
    }
    Some(features)
}

/// Mean logistic loss and its gradient w.r.t. `(readout, bias)`.
fn logistic(features: &[Vec<f64>], labels: &[bool], w: &[f64], bias: f64) -> (f64, Vec<f64>, f64) {
    let m = features.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (f, &y) in features.iter().zip(labels) {
        let z = f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + bias;
        let y = if y { 1.0 } else { 0.0 };
        loss += log1p_exp(z) - y * z;
        let r = (sigmoid(z) - y) / m;
        for (g, a) in gw.iter_mut().zip(f) {
            *g += r * a;
        }
        gb += r;
    }
    (loss / m, gw, gb)
}

/// Trains a UOT pooling layer and a linear readout by full-batch gradient
/// descent. `spec` must be a UOT variant; its weights give the starting point.
pub fn train_synthetic(
    task: &SyntheticTask,
    spec: &PoolingSpec,
    epochs: usize,
    lr: f64,
) -> Result<TrainOutcome> {
    let (solver, params) = match spec {
        PoolingSpec::UotSinkhorn(p) => (Solver::Sinkhorn, p),
        PoolingSpec::UotBadmm(p) => (Solver::Badmm, p),
        other => {
            return Err(Error::InvalidParams(format!(
                "training needs a UOT pooling, got {}",
                other.name()
            )))
        }
    };
    let options = TrainOptions {
        epochs,
        lr,
        ..TrainOptions::default()
    };
    train_with_state(task, ReparamState::from_params(params), solver, &options)
}

/// As [`train_synthetic`], starting from an explicit state.
///
/// The readout gradient is exact; the pooling gradient is a central finite
/// difference of the full-batch loss with the readout held fixed.
pub fn train_with_state(
    task: &SyntheticTask,
    mut state: ReparamState,
    solver: Solver,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    if !(options.lr.is_finite() && options.lr >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "lr = {} must be nonnegative",
            options.lr
        )));
    }
    let data = task.generate()?;
    let mut readout = vec![0.0; task.dim];
    let mut bias = 0.0;
    let mut trace = Vec::with_capacity(options.epochs + 1);
    let nan = |epoch: usize, trace: &[f64]| Error::NonFiniteLoss {
        epoch,
        trace: trace.to_vec(),
    };

    for epoch in 0..=options.epochs {
        let features = pool_all(&data, &state, solver).ok_or_else(|| nan(epoch, &trace))?;
        let (loss, gw, gb) = logistic(&features, &data.labels, &readout, bias);
        if !loss.is_finite() {
            return Err(nan(epoch, &trace));
        }
        trace.push(loss);
        if epoch == options.epochs {
            break;
        }
        let pooling_grad = if options.freeze_pooling {
            None
        } else {
            let objective = |s: &ReparamState| match pool_all(&data, s, solver) {
                Some(f) => logistic(&f, &data.labels, &readout, bias).0,
                None => f64::NAN,
            };
            Some(fd_gradient(objective, &state, options.eps).map_err(|_| nan(epoch, &trace))?)
        };
        for (w, g) in readout.iter_mut().zip(&gw) {
            *w -= options.lr * g;
        }
        bias -= options.lr * gb;
        if let Some(grad) = pooling_grad {
            let flat: Vec<f64> = state
                .to_flat()
                .iter()
                .zip(grad.as_slice())
                .map(|(p, g)| p - options.lr * g)
                .collect();
            state.set_flat(&flat)?;
        }
    }
    Ok(TrainOutcome {
        loss_trace: trace,
        state,
        readout,
        bias,
    })
}

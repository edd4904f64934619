use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::objective::{loss_and_gradients, simulation_error, Gradients, SeqRef};
use super::penalty::PenaltyConfig;
use super::rmsprop::{rmsprop_step, RmsPropConfig, RmsPropState};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Matrix, SPECTRAL_TOL};
use crate::model::{Activation, FfnnParams, NnarxModel, NormalizationStats, StackedState};
use crate::plant::{Dataset, Split, Trajectory};
use crate::seeds::{stream, Purpose};
use crate::stability::{certify, stability_residual, threshold, CertificateReport};

/// Architecture and initialization of a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelInitSpec {
    pub horizon: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Initial `prod ||U_i||` as a fraction of the certificate threshold.
    pub init_fraction: f64,
}

impl Default for ModelInitSpec {
    fn default() -> Self {
        Self {
            horizon: 4,
            widths: vec![10],
            activation: Activation::Tanh,
            init_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitState {
    Zero,
    /// Entries uniform in `[-scale, scale]` (normalized units).
    Random { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub clip_norm: Option<f64>,
    pub max_epochs: usize,
    pub washout: usize,
    pub penalty: PenaltyConfig,
    pub early_stopping_patience: usize,
    pub seed: u64,
    /// Initial state of each training simulation.
    pub init_state: InitState,
    /// Halvings of the learning rate tried when the loss diverges.
    pub max_retries: usize,
    /// Worker threads for validation; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let rms = RmsPropConfig::default();
        Self {
            learning_rate: rms.learning_rate,
            rmsprop_decay: rms.decay,
            rmsprop_epsilon: rms.epsilon,
            clip_norm: rms.clip_norm,
            max_epochs: 4000,
            washout: 20,
            penalty: PenaltyConfig::default(),
            early_stopping_patience: 500,
            seed: 0,
            init_state: InitState::Random { scale: 1.0 },
            max_retries: 3,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
            clip_norm: self.clip_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::config("RMSProp decay must lie in (0, 1)"));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::config("RMSProp epsilon must be positive"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::config("clip norm must be positive"));
        }
        if self.early_stopping_patience == 0 {
            return Err(Error::config("early-stopping patience must be positive"));
        }
        if let InitState::Random { scale } = self.init_state {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::config("initial-state scale must be nonnegative"));
            }
        }
        self.penalty.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss (data + penalty) seen during the epoch.
    pub loss: f64,
    /// Mean validation simulation error, no penalty.
    pub val_error: f64,
    pub nu: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch; kept apart from `records`, which are
    /// reproducible bit for bit.
    pub epoch_seconds: Vec<f64>,
    /// Epoch whose parameters were returned, `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub washout: usize,
    pub certificate: Option<CertificateReport>,
}

pub const HISTORY_HEADER: &str = "epoch,loss,val_error,nu,certified,window_start,window_len";

impl TrainHistory {
    /// CSV with the loss window stated per row: samples `k = washout..T-1`.
    pub fn to_csv(&self, trajectory_len: usize) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        let window_len = trajectory_len.saturating_sub(self.washout);
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.loss,
                r.val_error,
                r.nu,
                u8::from(r.certified),
                self.washout,
                window_len
            ));
        }
        s
    }
}

/// Random network whose `prod ||U_i||` equals `init_fraction` times the
/// certificate threshold, so training starts inside the certified region.
pub fn init_model(spec: &ModelInitSpec, m: usize, p: usize, norm: NormalizationStats, seed: u64) -> Result<NnarxModel> {
    if spec.widths.is_empty() || spec.widths.contains(&0) {
        return Err(Error::config("hidden widths must be nonempty and positive"));
    }
    if spec.horizon == 0 {
        return Err(Error::config("look-back horizon must be positive"));
    }
    if !(spec.init_fraction > 0.0 && spec.init_fraction < 1.0) {
        return Err(Error::config("init_fraction must lie in (0, 1)"));
    }
    let n = (m + p) * spec.horizon;
    let mut rng = stream(seed, Purpose::ParamInit, 0);
    let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
        let r = 1.0 / (fan_in as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-r..=r))
    };
    let mut ffnn = FfnnParams::zeros(n, m, p, &spec.widths, spec.activation);
    let mut prev = n;
    for layer in ffnn.layers.iter_mut() {
        let h = layer.width();
        layer.w = uniform(h, m, prev + m);
        layer.u = uniform(h, prev, prev + m);
        let bias = uniform(h, 1, prev + m);
        layer.b = bias.as_slice().to_vec();
        prev = h;
    }
    ffnn.out_u = uniform(p, prev, prev);

    let lip: Vec<f64> = ffnn.layers.iter().map(|l| l.activation.lipschitz()).collect();
    let target = spec.init_fraction * threshold(&lip, spec.horizon);
    let norms = ffnn
        .recurrent_mats()
        .into_iter()
        .map(|u| spectral_norm(u, SPECTRAL_TOL))
        .collect::<Result<Vec<_>>>()?;
    let product: f64 = norms.iter().product();
    if product > 0.0 {
        let k = (target / product).powf(1.0 / norms.len() as f64);
        ffnn.out_u.scale(k);
        for layer in ffnn.layers.iter_mut() {
            layer.u.scale(k);
        }
    }
    NnarxModel::new(ffnn, spec.horizon, m, p)?.with_norm(norm)
}

fn random_state(model: &NnarxModel, init: InitState, rng: &mut impl Rng) -> StackedState {
    match init {
        InitState::Zero => model.zero_state(),
        InitState::Random { scale } => {
            let x = (0..model.state_dim())
                .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
                .collect();
            model.state_from_vec(x).expect("length matches the model")
        }
    }
}

/// Mean post-washout simulation error over `trajs`, from the zero state.
/// Diverging trajectories count as infinite error.
pub fn validation_error(model: &NnarxModel, trajs: &[Trajectory], washout: usize, threads: usize) -> f64 {
    let eval = |t: &Trajectory| {
        simulation_error(model, SeqRef::new(&t.u, &t.y), washout, &model.zero_state()).unwrap_or(f64::INFINITY)
    };
    let errors: Vec<f64> = if threads > 1 && trajs.len() > 1 {
        let chunk = trajs.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = trajs
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(eval).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("validation worker panicked"))
                .collect()
        })
    } else {
        trajs.iter().map(eval).collect()
    };
    // summed in trajectory order whatever the thread count
    errors.iter().sum::<f64>() / errors.len() as f64
}

struct Snapshot {
    params: FfnnParams,
    opt: RmsPropState,
    grad: Gradients,
    lr: f64,
}

/// Trains on the normalized training split with single trajectories as
/// batches, early-stopping on the validation split.
pub fn train(dataset: &Dataset, init: &ModelInitSpec, cfg: &TrainConfig) -> Result<(NnarxModel, TrainHistory)> {
    cfg.validate()?;
    let train_set = dataset.normalized(Split::Train);
    let val_set = dataset.normalized(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training needs at least one training and one validation trajectory"));
    }
    if train_set.iter().chain(&val_set).all(|t| t.len() <= cfg.washout) {
        return Err(Error::config(format!(
            "every trajectory is shorter than the washout of {} samples",
            cfg.washout
        )));
    }
    if let Some(t) = train_set.iter().chain(&val_set).find(|t| t.len() <= cfg.washout) {
        return Err(Error::config(format!(
            "trajectory {} has {} samples, not more than the washout {}",
            t.id,
            t.len(),
            cfg.washout
        )));
    }
    let model = init_model(
        init,
        dataset.input_dim(),
        dataset.output_dim(),
        dataset.norm.clone(),
        cfg.seed,
    )?;
    train_from(model, &train_set, &val_set, cfg)
}

/// Training loop starting from an explicit model; trajectories must already
/// be normalized.
pub fn train_from(
    mut model: NnarxModel,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<(NnarxModel, TrainHistory)> {
    cfg.validate()?;
    let rms = cfg.rmsprop();
    let mut opt = RmsPropState::new(model.ffnn.num_params());
    let mut history = TrainHistory {
        washout: cfg.washout,
        ..TrainHistory::default()
    };
    let mut shuffle_rng = stream(cfg.seed, Purpose::Shuffle, 0);
    let mut state_rng = stream(cfg.seed, Purpose::TrainInitialState, 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best: Option<(f64, FfnnParams, usize)> = None;
    let mut stale = 0usize;
    let mut snapshot: Option<Snapshot> = None;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let t = &train_set[idx];
            let x0 = random_state(&model, cfg.init_state, &mut state_rng);
            let seq = SeqRef::new(&t.u, &t.y);
            let mut retries = 0;
            let result = loop {
                match loss_and_gradients(&model, &[seq], std::slice::from_ref(&x0), cfg.washout, &cfg.penalty) {
                    Ok(r) => break r,
                    Err(Error::NumericDivergence { .. } | Error::NonFiniteGradient { .. })
                        if retries < cfg.max_retries && snapshot.is_some() =>
                    {
                        // undo the previous update and redo it with half the step
                        let snap = snapshot.as_mut().expect("checked above");
                        snap.lr *= 0.5;
                        model.ffnn = snap.params.clone();
                        opt = snap.opt.clone();
                        let cfg_half = RmsPropConfig {
                            learning_rate: snap.lr,
                            ..rms
                        };
                        rmsprop_step(&mut model.ffnn, &snap.grad, &mut opt, &cfg_half)?;
                        retries += 1;
                    }
                    Err(e @ (Error::NumericDivergence { .. } | Error::NonFiniteGradient { .. })) => {
                        return Err(Error::TrainingFailure {
                            reason: format!("persistent divergence on trajectory {}: {e}", t.id),
                            history: Box::new(history),
                        });
                    }
                    Err(e) => return Err(e),
                }
            };
            loss_sum += result.loss;
            snapshot = Some(Snapshot {
                params: model.ffnn.clone(),
                opt: opt.clone(),
                grad: result.grad.clone(),
                lr: rms.learning_rate,
            });
            rmsprop_step(&mut model.ffnn, &result.grad, &mut opt, &rms)?;
        }

        let val_error = validation_error(&model, val_set, cfg.washout, cfg.threads);
        let nu = stability_residual(&model)?;
        history.records.push(EpochRecord {
            epoch,
            loss: loss_sum / order.len() as f64,
            val_error,
            nu,
            certified: nu < 0.0,
        });
        history.epoch_seconds.push(started.elapsed().as_secs_f64());

        let improved = match &best {
            None => val_error.is_finite(),
            Some((b, _, _)) => val_error < *b,
        };
        if improved {
            best = Some((val_error, model.ffnn.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stopping_patience {
                break;
            }
        }
    }

    if let Some((_, params, epoch)) = best {
        model.ffnn = params;
        history.best_epoch = Some(epoch);
    }
    history.certificate = Some(certify(&model)?);
    Ok((model, history))
}

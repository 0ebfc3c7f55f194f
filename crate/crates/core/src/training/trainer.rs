use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{batch_input, Dataset, FeatureKind, Sample};
use crate::error::{Error, Result};
use crate::neural::{mae_batch, Mode, NadamConfig, NadamState, NetworkParams, NetworkSpec};
use crate::synth::derive_seed;

/// Samples per forward pass when only predictions are needed.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub feature_kind: FeatureKind,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Per-column standardization fitted on the training split.
    pub standardize: bool,
    pub nadam: NadamConfig,
}

impl TrainConfig {
    pub fn for_kind(kind: FeatureKind) -> Self {
        Self {
            feature_kind: kind,
            batch_size: 1200,
            lr: kind.default_lr(),
            patience: 10,
            max_epochs: 200,
            seed: 0,
            standardize: false,
            nadam: NadamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, patience and max_epochs must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches, amplified units.
    pub train_mae: f64,
    /// Eval-mode loss on the validation split, amplified units.
    pub val_mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val: f64) -> StopDecision {
        if val < self.best {
            self.best = val;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Wait
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// Non-finite loss, gradient or parameter; the message says where.
    Divergence(String),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (the initial ones if none finished).
    pub params: NetworkParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.stop, StopReason::Divergence(_))
    }
}

/// Eval-mode predictions (amplified units) in dataset order.
pub fn predict_all(params: &NetworkParams, samples: &[&Sample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let pred: Array1<f64> = params.predict(&batch_input(chunk)?)?;
        out.extend(pred.iter().copied());
    }
    Ok(out)
}

fn dataset_mae(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    let refs: Vec<&Sample> = data.samples().iter().collect();
    let pred = predict_all(params, &refs)?;
    let targets: Vec<f64> = refs.iter().map(|s| s.target()).collect();
    Ok(mae_batch(&pred, &targets))
}

pub fn train(spec: &NetworkSpec, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(spec, train_set, val_set, cfg, |_| {})
}

/// Mini-batch Nadam with a seeded shuffle per epoch and early stopping on validation MAE.
/// `on_epoch` sees every history record as it is produced.
pub fn train_with(
    spec: &NetworkSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    for d in [train_set, val_set] {
        if d.kind() != cfg.feature_kind {
            return Err(Error::InvalidArgument(format!(
                "dataset holds {} features, config expects {}",
                d.kind(),
                cfg.feature_kind
            )));
        }
        if d.input_dim() != spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "features are {} wide, network expects {}",
                d.input_dim(),
                spec.input_dim
            )));
        }
    }
    let sequential = cfg.feature_kind.cepstral().is_some();
    if sequential != spec.is_sequential() {
        return Err(Error::InvalidArgument(format!(
            "{} features need a {} network",
            cfg.feature_kind,
            if sequential { "recurrent" } else { "bottleneck-only" }
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 100, 0));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 101, 0));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 102, 0));

    let mut params = NetworkParams::init(spec, &mut init_rng)?;
    let mut best_params = params.clone();
    let mut opt = NadamState::new(&params, cfg.nadam);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set.samples()[i]).collect();
            let targets: Vec<f64> = batch.iter().map(|s| s.target()).collect();
            let input = batch_input(&batch)?;
            let step = params
                .forward(&input, Mode::Train, &mut dropout_rng)
                .and_then(|trace| params.backward(&trace, &targets))
                .and_then(|(loss, grads)| {
                    if !loss.is_finite() {
                        return Err(Error::Divergence { location: "training loss".into() });
                    }
                    opt.step(&mut params, &grads, cfg.lr)?;
                    if !params.is_finite() {
                        return Err(Error::Divergence { location: "parameters after update".into() });
                    }
                    Ok(loss)
                });
            match step {
                Ok(loss) => loss_sum += loss * batch.len() as f64,
                Err(e) if e.is_divergence() => {
                    stop = StopReason::Divergence(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let val_mae = dataset_mae(&params, val_set)?;
        if !val_mae.is_finite() {
            stop = StopReason::Divergence(format!("epoch {epoch}: validation loss is {val_mae}"));
            break;
        }
        let record = EpochRecord {
            epoch,
            train_mae: loss_sum / train_set.len() as f64,
            val_mae,
        };
        history.push(record);
        on_epoch(&record);
        match stopper.observe(epoch, val_mae) {
            StopDecision::Improved => best_params.clone_from(&params),
            StopDecision::Wait => {}
            StopDecision::Stop => {
                stop = StopReason::Patience;
                break;
            }
        }
    }

    let best = stopper.best();
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch: best.map(|b| b.0),
        best_val_mae: best.map(|b| b.1),
        stop,
    })
}

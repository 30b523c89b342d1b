//! Mask-estimation training: MSE loss, value clipping, Adam and the epoch loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tfa_autodiff::{Graph, ParamSet, Real, Tensor, Var};

use crate::data::{batch_digest, make_batch, validation_set, Example, MixtureConfig, NoiseBank, Stream, TargetKind};
use crate::error::{Error, Result};
use crate::restcn::{EnhancementModel, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub target: TargetKind,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_min: f64,
    pub clip_max: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub snr_min_db: i32,
    pub snr_max_db: i32,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    pub val_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mix = MixtureConfig::default();
        Self {
            target: TargetKind::Irm,
            batch_size: 10,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_min: -1.0,
            clip_max: 1.0,
            epochs: 25,
            batches_per_epoch: 50,
            snr_min_db: mix.snr_min_db,
            snr_max_db: mix.snr_max_db,
            min_len: mix.min_len,
            max_len: mix.max_len,
            seed: 0,
            val_size: 100,
        }
    }
}

impl TrainConfig {
    pub fn mixture(&self) -> MixtureConfig {
        MixtureConfig {
            min_len: self.min_len,
            max_len: self.max_len,
            snr_min_db: self.snr_min_db,
            snr_max_db: self.snr_max_db,
            target: self.target,
            ..MixtureConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("TrainConfig", msg.to_string()));
        if self.batch_size == 0 || self.batches_per_epoch == 0 || self.epochs == 0 {
            return bad("batch size, batches per epoch and epochs must be ≥ 1");
        }
        if self.val_size == 0 {
            return bad("validation set must hold at least one mixture");
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.lr) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("learning rate must be positive and Adam betas in [0, 1)");
        }
        if !positive(self.adam_eps) || !positive(self.clip_max - self.clip_min) {
            return bad("Adam epsilon must be positive and the clip interval non-empty");
        }
        self.mixture().validate()
    }
}

/// Sum of squared differences between a prediction and a constant target.
pub fn squared_error<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    Ok(g.sum(sq))
}

/// Mean over all entries of `(pred − target)²`.
pub fn mse_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    Ok(g.mean(sq)?)
}

/// Elementwise clamp of every accumulated gradient entry.
pub fn clip_gradients<T: Real>(params: &mut ParamSet<T>, lo: T, hi: T) {
    for t in params.iter_mut() {
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|v| *v = v.max(lo).min(hi));
        }
    }
}

/// First and second moment estimates for every parameter scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, _, t)| vec![T::zero(); t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Bias-corrected Adam update from the accumulated gradients.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, state: &mut AdamState<T>, cfg: &TrainConfig) {
    state.step += 1;
    let (b1, b2) = (T::lit(cfg.adam_beta1), T::lit(cfg.adam_beta2));
    let c1 = T::lit(1.0 - cfg.adam_beta1.powi(state.step as i32));
    let c2 = T::lit(1.0 - cfg.adam_beta2.powi(state.step as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.adam_eps));
    let one = T::one();
    for ((t, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let Some(grad) = t.grad().map(<[T]>::to_vec) else {
            continue;
        };
        for (i, p) in t.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn example_tensors(ex: &Example) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let shape = [ex.noisy_mag.frames(), ex.noisy_mag.bins()];
    let input = Tensor::new(shape, ex.noisy_mag.data().iter().map(|v| *v as f32).collect())?;
    let target = Tensor::new(shape, ex.target.values().iter().map(|v| *v as f32).collect())?;
    Ok((input, target))
}

/// Accumulates the gradient of the batch loss into `model.params` and returns the loss.
///
/// The loss averages over every mask entry in the batch, so each utterance's
/// squared error is weighted by one over the batch's total entry count.
pub fn accumulate_batch_gradients(model: &mut EnhancementModel, batch: &[Example]) -> Result<f64> {
    let total: usize = batch.iter().map(|ex| ex.target.values().len()).sum();
    let weight = 1.0 / total as f32;
    model.params.zero_grads();
    let mut loss = 0.0;
    for ex in batch {
        let (input, target) = example_tensors(ex)?;
        let mut g = Graph::<f32>::new();
        let x = g.constant(input);
        let t = g.constant(target);
        let pred = model.net.forward(&mut g, &model.params, x)?;
        let sse = squared_error(&mut g, pred, t)?;
        let l = g.scale(sse, weight);
        loss += g.scalar(l) as f64;
        g.backward(l)?;
        model.params.accumulate(&g.param_grads())?;
    }
    Ok(loss)
}

/// Mean squared error over every entry of every example, without gradients.
pub fn evaluate_mse(model: &EnhancementModel, examples: &[Example]) -> Result<f64> {
    let (mut sse, mut count) = (0.0f64, 0usize);
    for ex in examples {
        let pred = model.predict(&ex.noisy_mag)?;
        sse += pred
            .data()
            .iter()
            .zip(ex.target.values())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
        count += pred.data().len();
    }
    Ok(sse / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// `epoch,train_mse,val_mse` with one row per epoch.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for r in history {
        out.push_str(&format!("{},{:.9},{:.9}\n", r.epoch, r.train_mse, r.val_mse));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best: EnhancementModel,
    pub best_epoch: usize,
    pub last: EnhancementModel,
    /// Digest of every training batch of each epoch, in order.
    pub epoch_digests: Vec<String>,
    pub validation_digest: String,
}

/// Trains a freshly initialised model; a pure function of both configurations.
///
/// `on_epoch` sees each record as soon as its validation pass finishes.
pub fn train_loop(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mix = cfg.mixture();
    let mut model = EnhancementModel::new(*model_cfg, cfg.seed)?;
    let val = validation_set(&mix, cfg.val_size, cfg.seed)?;
    let validation_digest = batch_digest(&val);
    let mut state = AdamState::new(&model.params);
    let bank = NoiseBank::synthesize(cfg.seed, Stream::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = (cfg.clip_min as f32, cfg.clip_max as f32);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut epoch_digests = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EnhancementModel)> = None;
    for epoch in 1..=cfg.epochs {
        let mut digest = Sha256::new();
        let mut loss_sum = 0.0;
        for batch_idx in 1..=cfg.batches_per_epoch {
            let batch = make_batch(&mix, &bank, cfg.batch_size, &mut rng)?;
            digest.update(batch_digest(&batch).as_bytes());
            let loss = accumulate_batch_gradients(&mut model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            clip_gradients(&mut model.params, lo, hi);
            adam_step(&mut model.params, &mut state, cfg);
            loss_sum += loss;
        }
        let val_mse = evaluate_mse(&model, &val)?;
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum / cfg.batches_per_epoch as f64,
            val_mse,
        };
        on_epoch(&record);
        history.push(record);
        epoch_digests.push(hex::encode(digest.finalize()));
        if best.as_ref().is_none_or(|(v, _, _)| val_mse < *v) {
            best = Some((val_mse, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best,
        best_epoch,
        last: model,
        epoch_digests,
        validation_digest,
    })
}

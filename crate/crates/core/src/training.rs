//! Imitation learning: mini-batch regression of the policy (two-stage) or of
//! the full safe controller (end-to-end) onto expert actions.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GlasError, Result};
use crate::expert::{Dataset, DemoRecord};
use crate::geom::Vec2;
use crate::par;
use crate::policy::{
    backward_pi_with_raw, controller_pi_adjoint, forward_controller, forward_pi_tape, PiTape,
    PolicyWeights,
};
use crate::safety::SafetyParams;

pub const LOSS_CSV_VERSION: u32 = 1;

/// Records per gradient work unit. Fixed so that the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Loss on the blended controller output `u`.
    EndToEnd,
    /// Loss on the network output `pi` alone.
    TwoStage,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::EndToEnd => "end_to_end",
            TrainMode::TwoStage => "two_stage",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = GlasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end_to_end" | "end2end" => Ok(TrainMode::EndToEnd),
            "two_stage" => Ok(TrainMode::TwoStage),
            other => Err(GlasError::Precondition(format!(
                "unknown training mode {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Weight of `(|pi_raw| - pi_max)^2 / 2` for raw outputs beyond the cap.
    /// Past the cap the regression loss has no radial gradient, so without
    /// this an overshooting output can never shrink back.
    pub overshoot_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::EndToEnd,
            batch_size: 4096,
            epochs: 100,
            lr0: 1e-3,
            plateau_patience: 10,
            plateau_factor: 0.5,
            seed: 0,
            validation_fraction: 0.1,
            overshoot_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && self.validation_fraction > 0.0
            && self.validation_fraction < 1.0
            && self.lr0 > 0.0
            && self.overshoot_weight >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GlasError::Precondition(format!(
                "invalid training config: {self:?}"
            )))
        }
    }
}

/// A fixed-shape group of record indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub shape: (usize, usize),
    pub indices: Vec<usize>,
}

fn batches_of(
    records: &[DemoRecord],
    subset: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Batch> {
    let mut groups: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    let mut sorted = subset.to_vec();
    sorted.sort_by_key(|&i| (records[i].obs.shape(), i));
    for i in sorted {
        let shape = records[i].obs.shape();
        match groups.last_mut() {
            Some((s, v)) if *s == shape => v.push(i),
            _ => groups.push((shape, vec![i])),
        }
    }
    let mut out = Vec::new();
    for (shape, mut idx) in groups {
        idx.shuffle(rng);
        out.extend(idx.chunks(batch_size.max(1)).map(|c| Batch {
            shape,
            indices: c.to_vec(),
        }));
    }
    out.shuffle(rng);
    out
}

/// Groups the whole dataset into fixed-shape batches. Shapes never mix inside
/// a batch; each shape group yields full batches plus one remainder.
pub fn make_batches(ds: &Dataset, batch_size: usize, seed: u64) -> Vec<Batch> {
    let all: Vec<usize> = (0..ds.len()).collect();
    batches_of(
        &ds.records,
        &all,
        batch_size,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub weights: PolicyWeights,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Record indices held out for validation.
    pub validation: Vec<usize>,
}

/// Prediction the loss is taken on.
pub fn predict(
    rec: &DemoRecord,
    w: &PolicyWeights,
    mode: TrainMode,
    params: &SafetyParams,
) -> Result<Vec2> {
    Ok(match mode {
        TrainMode::TwoStage => forward_pi_tape(&rec.obs, w, params.pi_max).pi,
        TrainMode::EndToEnd => forward_controller(&rec.obs, w, params)?.u,
    })
}

/// Overshoot penalty of a tape and its adjoint on `pi_raw`.
fn overshoot(tape: &PiTape, pi_max: f64, weight: f64) -> (f64, Vec2) {
    let n = tape.pi_raw.norm();
    if weight == 0.0 || n <= pi_max {
        return (0.0, Vec2::ZERO);
    }
    let excess = n - pi_max;
    (
        0.5 * weight * excess * excess,
        tape.pi_raw * (weight * excess / n),
    )
}

/// Per-record objective summed over `indices` and, when requested, its
/// gradient divided by `norm`.
#[allow(clippy::too_many_arguments)]
fn chunk_pass(
    records: &[DemoRecord],
    indices: &[usize],
    w: &PolicyWeights,
    mode: TrainMode,
    params: &SafetyParams,
    overshoot_weight: f64,
    norm: f64,
    want_grad: bool,
) -> Result<(f64, Option<PolicyWeights>)> {
    let mut total = 0.0;
    let mut grad = want_grad.then(|| w.zeros_like());
    for &i in indices {
        let rec = &records[i];
        let (pi_tape, e, dpi) = match mode {
            TrainMode::TwoStage => {
                let tape = forward_pi_tape(&rec.obs, w, params.pi_max);
                let e = tape.pi - rec.action;
                (tape, e, e)
            }
            TrainMode::EndToEnd => {
                let tape = forward_controller(&rec.obs, w, params)?;
                let e = tape.u - rec.action;
                let dpi = controller_pi_adjoint(&tape, e);
                (tape.pi, e, dpi)
            }
        };
        let (pen, dpen) = overshoot(&pi_tape, params.pi_max, overshoot_weight);
        total += 0.5 * e.norm_squared() + pen;
        if let Some(g) = grad.as_mut() {
            backward_pi_with_raw(&pi_tape, w, dpi / norm, dpen / norm, g);
        }
    }
    Ok((total, grad))
}

/// Objective `sum (|pred - target|^2 / 2 + overshoot) / n` over the records
/// and optionally its gradient, reduced in chunk order.
pub fn loss_and_grad(
    records: &[DemoRecord],
    indices: &[usize],
    w: &PolicyWeights,
    mode: TrainMode,
    params: &SafetyParams,
    overshoot_weight: f64,
    want_grad: bool,
) -> Result<(f64, Option<PolicyWeights>)> {
    let n = indices.len().max(1) as f64;
    let chunks: Vec<&[usize]> = indices.chunks(CHUNK).collect();
    let parts = par::map(&chunks, |c| {
        chunk_pass(records, c, w, mode, params, overshoot_weight, n, want_grad)
    });
    let mut total = 0.0;
    let mut grad: Option<PolicyWeights> = None;
    for part in parts {
        let (s, g) = part?;
        total += s;
        if let Some(g) = g {
            match grad.as_mut() {
                Some(acc) => acc.add_scaled(&g, 1.0),
                None => grad = Some(g),
            }
        }
    }
    if want_grad && grad.is_none() {
        grad = Some(w.zeros_like());
    }
    Ok((total / n, grad))
}

/// Root mean squared per-component error of the predictions over `indices`.
pub fn rmse(
    records: &[DemoRecord],
    indices: &[usize],
    w: &PolicyWeights,
    mode: TrainMode,
    params: &SafetyParams,
) -> Result<f64> {
    let chunks: Vec<&[usize]> = indices.chunks(CHUNK).collect();
    let parts = par::map(&chunks, |c| {
        c.iter().try_fold(0.0, |acc, &i| {
            let r = &records[i];
            Ok::<_, GlasError>(acc + (predict(r, w, mode, params)? - r.action).norm_squared())
        })
    });
    let mut sse = 0.0;
    for p in parts {
        sse += p?;
    }
    Ok((sse / (2 * indices.len().max(1)) as f64).sqrt())
}

/// Adam moments over the flattened parameter list.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut PolicyWeights, g: &PolicyWeights, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for (wp, gp) in w.params_mut().zip(g.params()) {
            for (x, &d) in wp.iter_mut().zip(gp) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = Self::B1 * *m + (1.0 - Self::B1) * d;
                *v = Self::B2 * *v + (1.0 - Self::B2) * d * d;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

/// Deterministic train/validation split. A single record serves as both.
pub fn split(n: usize, validation_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 2 {
        return (idx.clone(), idx);
    }
    idx.shuffle(rng);
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Trains from `init` and returns the best-validation weights with the
/// per-epoch loss history.
pub fn train(
    ds: &Dataset,
    cfg: &TrainConfig,
    params: &SafetyParams,
    init: PolicyWeights,
) -> Result<TrainOutcome> {
    train_with(ds, cfg, params, init, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    ds: &Dataset,
    cfg: &TrainConfig,
    params: &SafetyParams,
    init: PolicyWeights,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(GlasError::Precondition("empty dataset".into()));
    }
    if ds.dynamics != params.dynamics || ds.dynamics != init.dynamics {
        return Err(GlasError::ShapeMismatch(format!(
            "dataset is {}, safety parameters {}, weights {}",
            ds.dynamics.name(),
            params.dynamics.name(),
            init.dynamics.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split(ds.len(), cfg.validation_fraction, &mut rng);
    let mut w = init;
    let mut adam = Adam::new(w.n_params());
    let mut lr = cfg.lr0;
    let (mut best_val, _) = loss_and_grad(
        &ds.records,
        &val_idx,
        &w,
        cfg.mode,
        params,
        cfg.overshoot_weight,
        false,
    )?;
    let mut best = w.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = batches_of(&ds.records, &train_idx, cfg.batch_size, &mut rng);
        let mut sse = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grad) = loss_and_grad(
                &ds.records,
                &batch.indices,
                &w,
                cfg.mode,
                params,
                cfg.overshoot_weight,
                true,
            )?;
            if !loss.is_finite() {
                return Err(GlasError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            sse += loss * batch.indices.len() as f64;
            adam.step(&mut w, &grad.expect("gradient requested"), lr);
        }
        let train_loss = sse / train_idx.len() as f64;
        let (val_loss, _) = loss_and_grad(
            &ds.records,
            &val_idx,
            &w,
            cfg.mode,
            params,
            cfg.overshoot_weight,
            false,
        )?;
        if !val_loss.is_finite() {
            return Err(GlasError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        on_epoch(&stats);
        history.push(stats);
        if val_loss < best_val * (1.0 - 1e-4) {
            best_val = val_loss;
            best = w.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                stale = 0;
            }
        }
    }
    Ok(TrainOutcome {
        weights: best,
        history,
        best_epoch,
        best_val_loss: best_val,
        validation: val_idx,
    })
}

/// Loss history CSV: `epoch,train_loss,val_loss,lr`.
pub fn loss_csv(history: &[EpochStats], mode: TrainMode) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# glas loss v{LOSS_CSV_VERSION} mode={}", mode.name());
    out.push_str("epoch,train_loss,val_loss,lr\n");
    for h in history {
        let _ = writeln!(out, "{},{},{},{}", h.epoch, h.train_loss, h.val_loss, h.lr);
    }
    out
}

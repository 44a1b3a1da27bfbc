//! Two-stage amortized training over freshly simulated SCMs: the encoder
//! first, then the decoder against the frozen encoder.

mod checkpoint;
mod config;
mod optim;

use std::collections::BTreeMap;
use std::sync::mpsc;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Stage, TrainConfig};
pub use optim::{adam_step, AdamState, Ema, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::decoder::{decoder_loss, init_decoder};
use crate::encoder::{condition_of, encoder_loss, init_encoder};
use crate::kv::KvError;
use crate::model::ModelError;
use crate::rng::{derive_seed, task_rng};
use crate::sim::{sample_scm, simulate_dataset, Dataset, ScmDistributionConfig, SimError, Standardization};
use crate::tape::Tape;
use crate::tensor::{ParamStore, Tensor, TensorError};

const SCM_STREAM: u64 = 0x5c3;
const VALIDATION_STREAM: u64 = 0x7a1;
const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("decoder training needs a trained encoder")]
    MissingEncoder,
    #[error("non-finite loss at step {step}")]
    NonFinite { step: u64, checkpoint: Box<Checkpoint> },
}

/// One simulated training example, standardized with the conditioning split's statistics.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub conditioning: Dataset,
    /// Disjoint rows of the same SCM, present for the decoder stage.
    pub target: Option<Dataset>,
}

fn make_item(config: &TrainConfig, stream: u64, index: u64) -> Result<TrainItem, TrainError> {
    let mut rng = task_rng(config.seed, stream, index);
    let dist = ScmDistributionConfig::preset(config.distribution, config.d, config.mechanisms);
    let scm = sample_scm(&dist, &mut rng)?;
    let seed = derive_seed(config.seed, stream, index);
    match config.stage {
        Stage::Encoder => {
            let ds = simulate_dataset(&scm, config.n, seed, &mut rng)?;
            Ok(TrainItem { conditioning: ds.standardized()?, target: None })
        }
        Stage::Decoder => {
            let ds = simulate_dataset(&scm, 2 * config.n, seed, &mut rng)?;
            let (a, b) = ds.split(config.n)?;
            let stats = Standardization::fit(&a.x);
            Ok(TrainItem { conditioning: a.standardized_with(&stats)?, target: Some(b.standardized_with(&stats)?) })
        }
    }
}

/// The example consumed at position `k` of the training stream.
pub fn training_item(config: &TrainConfig, k: u64) -> Result<TrainItem, TrainError> {
    let index = match config.corpus_size {
        Some(size) => k % size as u64,
        None => k,
    };
    make_item(config, SCM_STREAM, index)
}

/// Held-out examples from a stream disjoint from training.
pub fn validation_items(config: &TrainConfig, count: usize) -> Result<Vec<TrainItem>, TrainError> {
    (0..count as u64).map(|k| make_item(config, VALIDATION_STREAM, k)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

/// Tab-separated loss log with a header row.
pub fn render_log(log: &[LossRecord]) -> String {
    let mut out = String::from("step\tepoch\tloss\n");
    for r in log {
        out.push_str(&format!("{}\t{}\t{:e}\n", r.step, r.epoch, r.loss));
    }
    out
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Losses of one model over a set of examples, averaged.
pub fn evaluate_loss(
    config: &TrainConfig,
    params: &ParamStore<f32>,
    encoder: Option<&ParamStore<f32>>,
    items: &[TrainItem],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for item in items {
        let mut tape = Tape::new();
        let loss = item_loss(&mut tape, config, params, encoder, item)?;
        total += tape.value(loss).item() as f64;
    }
    Ok(total / items.len().max(1) as f64)
}

fn item_loss(
    tape: &mut Tape<f32>,
    config: &TrainConfig,
    params: &ParamStore<f32>,
    encoder: Option<&ParamStore<f32>>,
    item: &TrainItem,
) -> Result<crate::tape::Var, TrainError> {
    match config.stage {
        Stage::Encoder => Ok(encoder_loss(tape, params, &config.model, &item.conditioning)?),
        Stage::Decoder => {
            let encoder = encoder.ok_or(TrainError::MissingEncoder)?;
            let target = item.target.as_ref().ok_or(ModelError::MissingNoise)?;
            let c = &item.conditioning;
            let mu = condition_of(encoder, &config.model, &c.x, &c.dag)?;
            Ok(decoder_loss(tape, params, &config.model, &mu, c, target)?)
        }
    }
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Tensor(TensorError::NonFinite { .. })
            | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }) | ModelError::NonFinite(_))
    )
}

fn add_into(acc: &mut BTreeMap<String, Tensor<f32>>, grads: BTreeMap<String, Tensor<f32>>) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

/// Encoder weights a decoder checkpoint was trained against.
pub fn frozen_encoder(encoder: &Checkpoint, use_ema: bool) -> ParamStore<f32> {
    encoder.weights(use_ema).filter_prefix("enc.")
}

/// Runs one stage. The decoder stage needs the frozen encoder weights and
/// stores them, unchanged, next to the decoder in every checkpoint it emits.
pub fn run_training(
    config: &TrainConfig,
    encoder: Option<&ParamStore<f32>>,
    mut on_checkpoint: impl FnMut(&Checkpoint),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut init_rng = task_rng(config.seed, INIT_STREAM, config.stage as u64);
    let mut params = match config.stage {
        Stage::Encoder => init_encoder(&config.model, &mut init_rng),
        Stage::Decoder => {
            encoder.ok_or(TrainError::MissingEncoder)?;
            init_decoder(&config.model, &mut init_rng)
        }
    };
    let mut adam = AdamState::new(&params);
    let mut ema = Ema::new(&params, config.ema_decay);
    let echo = config.entries();
    let snapshot = |params: &ParamStore<f32>, adam: &AdamState, ema: &Ema| {
        let mut all = params.clone();
        let mut shadow = ema.shadow.clone();
        if let Some(enc) = encoder {
            all.extend(enc.clone());
            shadow.extend(enc.clone());
        }
        Checkpoint { config: echo.clone(), params: all, adam: adam.clone(), ema: shadow }
    };

    let steps = config.total_steps();
    let batch = config.batch_size;
    let mut log = Vec::with_capacity(steps);

    std::thread::scope(|scope| -> Result<(), TrainError> {
        let (tx, rx) = mpsc::sync_channel::<Result<Vec<TrainItem>, TrainError>>(config.prefetch.max(1));
        let producer = |tx: mpsc::SyncSender<Result<Vec<TrainItem>, TrainError>>| {
            for step in 0..steps {
                let items = (0..batch).map(|b| training_item(config, (step * batch + b) as u64)).collect();
                if tx.send(items).is_err() {
                    return;
                }
            }
        };
        let mut inline_step = 0usize;
        let handle = if config.prefetch > 0 {
            Some(scope.spawn(move || producer(tx)))
        } else {
            drop(tx);
            None
        };
        let mut next_batch = || -> Result<Vec<TrainItem>, TrainError> {
            if handle.is_some() {
                rx.recv().expect("producer runs for every step")
            } else {
                let step = inline_step;
                inline_step += 1;
                (0..batch).map(|b| training_item(config, (step * batch + b) as u64)).collect()
            }
        };

        for step in 0..steps {
            let items = next_batch()?;
            let mut grads = BTreeMap::new();
            let mut loss_sum = 0.0f64;
            for item in &items {
                let mut tape = Tape::new();
                let loss = match item_loss(&mut tape, config, &params, encoder, item) {
                    Err(e) if is_non_finite(&e) => {
                        return Err(TrainError::NonFinite {
                            step: step as u64,
                            checkpoint: Box::new(snapshot(&params, &adam, &ema)),
                        })
                    }
                    other => other?,
                };
                let value = tape.value(loss).item() as f64;
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        step: step as u64,
                        checkpoint: Box::new(snapshot(&params, &adam, &ema)),
                    });
                }
                loss_sum += value;
                add_into(&mut grads, tape.gradients(loss)?.into_params());
            }
            let inv = 1.0 / items.len() as f32;
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            adam_step(&mut params, &grads, &mut adam, config.lr_at(step), config.weight_decay)?;
            ema.update(&params)?;
            log.push(LossRecord {
                step: step as u64,
                epoch: step / config.steps_per_epoch(),
                loss: loss_sum / items.len() as f64,
            });
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && step + 1 < steps {
                on_checkpoint(&snapshot(&params, &adam, &ema));
            }
        }
        drop(rx);
        Ok(())
    })?;

    let checkpoint = snapshot(&params, &adam, &ema);
    on_checkpoint(&checkpoint);
    Ok(TrainOutcome { checkpoint, log })
}

/// Encoder stage followed by the decoder stage on the chosen encoder weights.
pub fn train_both(encoder_config: &TrainConfig, decoder_config: &TrainConfig) -> Result<(TrainOutcome, TrainOutcome), TrainError> {
    let enc = run_training(encoder_config, None, |_| {})?;
    let frozen = frozen_encoder(&enc.checkpoint, decoder_config.encoder_ema);
    let dec = run_training(decoder_config, Some(&frozen), |_| {})?;
    Ok((enc, dec))
}

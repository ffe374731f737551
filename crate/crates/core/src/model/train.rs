use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use geoframe_nn::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchitectureConfig;
use super::loss::{sequence_loss, LossConfig, LossTarget};
use super::network::{
    forward_sequence, forward_step_on_tape, init_params, stack_images, ModelParams, RecordedParams,
    SequenceStates,
};
use crate::depth_data::{DepthLabelConfig, LabelMap, SequenceRecord};
use crate::{invalid, Error, Result, FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub version: u32,
    pub arch: ArchitectureConfig,
    pub labels: DepthLabelConfig,
    pub loss: LossConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub seed: u64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Evaluate on the held-out set every this many steps (0: never).
    pub eval_every: usize,
    /// Training data directory (CLI only).
    pub data: Option<PathBuf>,
    /// Held-out data directory (CLI only).
    pub eval_data: Option<PathBuf>,
    /// Output directory for checkpoint, model description and loss log
    /// (CLI only).
    pub output: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: FORMAT_VERSION,
            arch: ArchitectureConfig::reduced(),
            labels: DepthLabelConfig::default(),
            loss: LossConfig::default(),
            lr: 1e-4,
            batch_size: 8,
            seq_len: 10,
            steps: 1000,
            seed: 0,
            clip_norm: Some(10.0),
            eval_every: 0,
            data: None,
            eval_data: None,
            output: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return invalid(format!(
                "unsupported training config version {}",
                self.version
            ));
        }
        self.arch.validate()?;
        self.labels.validate()?;
        self.loss.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return invalid("batch size and sequence length must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return invalid("gradient clip norm must be positive");
        }
        Ok(())
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    /// Mini-batch loss before each update.
    pub log: Vec<TrainRecord>,
    /// `(step, held-out masked depth L2)`, including step 0 and the final
    /// step when a held-out set is given.
    pub evals: Vec<(usize, f64)>,
}

pub fn write_loss_log<W: Write>(w: W, log: &[TrainRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in log {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

fn label_targets(labels: &LabelMap) -> (Vec<f64>, &[bool]) {
    (
        labels.values.iter().map(|&v| v as f64).collect(),
        &labels.mask,
    )
}

fn check_dataset(data: &[SequenceRecord], arch: &ArchitectureConfig, seq_len: usize) -> Result<()> {
    for (i, s) in data.iter().enumerate() {
        if s.len() < seq_len {
            return invalid(format!(
                "sequence {i} has {} frames, need {seq_len}",
                s.len()
            ));
        }
        for f in &s.frames[..seq_len] {
            if f.rgb.dimensions() != (arch.input_width as u32, arch.input_height as u32) {
                return invalid(format!(
                    "sequence {i} frames are {:?}, the network expects {}×{}",
                    f.rgb.dimensions(),
                    arch.input_width,
                    arch.input_height
                ));
            }
        }
    }
    Ok(())
}

/// Forward and backward over one mini-batch. Returns the mean sequence loss
/// and the parameter gradients of that mean.
pub fn batch_gradients(
    params: &ModelParams<f32>,
    batch: &[&SequenceRecord],
    seq_len: usize,
    loss: &LossConfig,
) -> Result<(f64, geoframe_nn::ParamStore<f32>)> {
    let arch = &params.arch;
    let n = batch.len();
    let (h, w) = (arch.input_height, arch.input_width);
    let mut tape = Tape::new();
    let recorded = RecordedParams::record(params, &mut tape);
    let mut states = SequenceStates::<f32>::zeros(arch, n)?.record(&mut tape);
    let mut outputs = Vec::with_capacity(seq_len);
    for t in 0..seq_len {
        let images: Vec<_> = batch.iter().map(|s| &s.frames[t].rgb).collect();
        let x = tape.leaf(stack_images(&images)?);
        let (y, next) = forward_step_on_tape(&mut tape, params, &recorded, x, &states)?;
        outputs.push(y);
        states = next;
    }

    let px = h * w;
    let mut seeds: Vec<Vec<f32>> = vec![vec![0.0; n * px]; seq_len];
    let mut total = 0.0;
    for (b, seq) in batch.iter().enumerate() {
        let preds: Vec<Vec<f64>> = outputs
            .iter()
            .map(|&y| {
                tape.value(y).data()[b * px..(b + 1) * px]
                    .iter()
                    .map(|&v| v as f64)
                    .collect()
            })
            .collect();
        let owned: Vec<(Vec<f64>, &[bool])> = seq.frames[..seq_len]
            .iter()
            .map(|f| label_targets(&f.labels))
            .collect();
        let targets: Vec<LossTarget> = owned
            .iter()
            .map(|(labels, mask)| LossTarget {
                labels,
                mask,
                width: w,
                height: h,
            })
            .collect();
        let (value, grads) = sequence_loss(&preds, &targets, loss)?;
        total += value;
        for (t, g) in grads.iter().enumerate() {
            for (dst, &src) in seeds[t][b * px..(b + 1) * px].iter_mut().zip(g) {
                *dst = (src / n as f64) as f32;
            }
        }
    }
    let seeds = outputs
        .iter()
        .zip(seeds)
        .map(|(&y, data)| Ok((y, Tensor::from_vec(&[n, h, w, 1], data)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = tape.backward_seeds(seeds)?;
    Ok((
        total / n as f64,
        params.store.gradients_from(&recorded.vars, &mut grads),
    ))
}

/// Runs the network over the first `seq_len` frames of each sequence and
/// returns the predicted label maps.
pub fn predict_labels<T: geoframe_nn::Element>(
    params: &ModelParams<T>,
    seq: &SequenceRecord,
    seq_len: usize,
) -> Result<Vec<Vec<f64>>> {
    let frames: Vec<Tensor<T>> = seq.frames[..seq_len.min(seq.len())]
        .iter()
        .map(|f| stack_images(&[&f.rgb]))
        .collect::<Result<_>>()?;
    Ok(forward_sequence(params, &frames)?
        .into_iter()
        .map(|t| t.data().iter().map(|v| v.as_f64()).collect())
        .collect())
}

/// Mean masked label L2 over all frames of all sequences.
pub fn eval_depth_l2(
    params: &ModelParams<f32>,
    data: &[SequenceRecord],
    seq_len: usize,
) -> Result<f64> {
    if data.is_empty() {
        return invalid("evaluation set is empty");
    }
    check_dataset(data, &params.arch, seq_len)?;
    let cfg = LossConfig::default();
    let (h, w) = (params.arch.input_height, params.arch.input_width);
    let mut total = 0.0;
    for seq in data {
        let preds = predict_labels(params, seq, seq_len)?;
        let owned: Vec<_> = seq.frames[..seq_len]
            .iter()
            .map(|f| label_targets(&f.labels))
            .collect();
        let targets: Vec<LossTarget> = owned
            .iter()
            .map(|(labels, mask)| LossTarget {
                labels,
                mask,
                width: w,
                height: h,
            })
            .collect();
        total += sequence_loss(&preds, &targets, &cfg)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch Adam training from a seeded initialization. Sequences are
/// visited in seeded random order, one full pass before any repeats.
pub fn train(
    cfg: &TrainConfig,
    data: &[SequenceRecord],
    held_out: &[SequenceRecord],
) -> Result<TrainOutcome> {
    train_with(cfg, data, held_out, |_, _| Ok(()))
}

/// [`train`] with a callback after every update, e.g. for checkpointing.
pub fn train_with(
    cfg: &TrainConfig,
    data: &[SequenceRecord],
    held_out: &[SequenceRecord],
    mut after_step: impl FnMut(&TrainRecord, &ModelParams<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return invalid("training set is empty");
    }
    check_dataset(data, &cfg.arch, cfg.seq_len)?;
    let mut params = init_params::<f32>(&cfg.arch, cfg.seed)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, &params.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xDA7A_0DE5);
    let mut order: Vec<usize> = Vec::new();
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.steps);
    let mut evals = Vec::new();
    let eval_now =
        |params: &ModelParams<f32>, step: usize, evals: &mut Vec<(usize, f64)>| -> Result<()> {
            if !held_out.is_empty() {
                evals.push((step, eval_depth_l2(params, held_out, cfg.seq_len)?));
            }
            Ok(())
        };
    eval_now(&params, 0, &mut evals)?;
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(&data[order.pop().expect("refilled above")]);
        }
        let (loss, mut grads) = batch_gradients(&params, &batch, cfg.seq_len, &cfg.loss)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {loss} at step {step}"
            )));
        }
        if let Some(limit) = cfg.clip_norm {
            grads.clip_global_norm(limit);
        }
        adam.step(&mut params.store, &grads)?;
        let record = TrainRecord {
            step,
            loss,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log.push(record);
        after_step(&record, &params)?;
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
            eval_now(&params, step, &mut evals)?;
        }
    }
    if cfg.steps > 0 {
        eval_now(&params, cfg.steps, &mut evals)?;
    }
    Ok(TrainOutcome { params, log, evals })
}

//! Many-to-many training with per-step cross entropy and length-aware
//! step-loss masking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{argmax_rows, overall_accuracy, PredictionRecord};
use crate::nn::{Adam, AdamConfig, Graph, Tensor};
use crate::represent::{NestedSequence, Split};
use crate::way::WayModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub gd_enabled: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            lr: 1e-4,
            gd_enabled: true,
            seed: 0,
        }
    }
}

/// `-log softmax(logits_t)[label]` for every row `t`.
pub fn step_losses(logits: &Tensor, label: usize) -> Result<Vec<f64>> {
    if logits.rank() != 2 || label >= logits.shape()[1] {
        return Err(Error::Vocabulary {
            kind: "label",
            index: label,
            size: logits.shape().get(1).copied().unwrap_or(0),
        });
    }
    Ok((0..logits.shape()[0])
        .map(|r| {
            let row = logits.row(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[label]
        })
        .collect())
}

/// Keep ratio per instance: `1 + log_{max N}(min N / N_k)`. All ones when
/// every length is equal or the longest is 1. A ratio that would reach 0
/// (a length-1 instance next to the longest) is raised to `1 / N_k`.
pub fn gd_ratios(lengths: &[usize]) -> Vec<f64> {
    let (Some(&min), Some(&max)) = (lengths.iter().min(), lengths.iter().max()) else {
        return Vec::new();
    };
    if max <= 1 || min == max {
        return vec![1.0; lengths.len()];
    }
    let base = (max as f64).ln();
    lengths
        .iter()
        .map(|&n| {
            let delta = 1.0 + (min as f64 / n as f64).ln() / base;
            delta.max(1.0 / n as f64)
        })
        .collect()
}

/// Which steps of each instance contribute to the batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMask {
    pub keep: Vec<Vec<bool>>,
    pub ratios: Vec<f64>,
}

impl StepMask {
    pub fn all(lengths: &[usize]) -> Self {
        Self {
            keep: lengths.iter().map(|&n| vec![true; n]).collect(),
            ratios: vec![1.0; lengths.len()],
        }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().flatten().filter(|&&k| k).count()
    }
}

/// Keeps every step of instance `k` independently with probability
/// `ratios[k]`. If nothing survives, one step chosen uniformly over the
/// batch is kept.
pub fn draw_mask<R: Rng + ?Sized>(lengths: &[usize], ratios: &[f64], rng: &mut R) -> StepMask {
    let mut keep: Vec<Vec<bool>> = lengths
        .iter()
        .zip(ratios)
        .map(|(&n, &delta)| (0..n).map(|_| delta >= 1.0 || rng.random::<f64>() < delta).collect())
        .collect();
    let total: usize = lengths.iter().sum();
    if total > 0 && !keep.iter().flatten().any(|&k| k) {
        let mut pick = rng.random_range(0..total);
        for row in &mut keep {
            if pick < row.len() {
                row[pick] = true;
                break;
            }
            pick -= row.len();
        }
    }
    StepMask {
        keep,
        ratios: ratios.to_vec(),
    }
}

/// Sum of kept step losses over the number of kept steps.
pub fn masked_mean(losses: &[Vec<f64>], mask: &StepMask) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (l, k) in losses.iter().zip(&mask.keep) {
        for (&v, &keep) in l.iter().zip(k) {
            if keep {
                sum += v;
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// Draws a mask from the batch lengths and returns it with the masked mean.
pub fn apply_gd<R: Rng + ?Sized>(losses: &[Vec<f64>], ratios: &[f64], rng: &mut R) -> (StepMask, f64) {
    let lengths: Vec<usize> = losses.iter().map(Vec::len).collect();
    let mask = draw_mask(&lengths, ratios, rng);
    let loss = masked_mean(losses, &mask);
    (mask, loss)
}

/// Assigns each item to train/val/test per label: within every label group
/// (shuffled), the first `round(0.7 n)` go to train and the next
/// `round(0.15 n)` to validation.
pub fn stratified_split(labels: &[usize], seed: u64) -> Vec<Split> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; labels.len()];
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (0.7 * n).round() as usize;
        let n_val = ((0.15 * n).round() as usize).min(idx.len() - n_train);
        for (j, &i) in idx.iter().enumerate() {
            out[i] = if j < n_train {
                Split::Train
            } else if j < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    out
}

/// Loss and parameter gradients of one instance, with the loss summed over
/// kept steps and divided by `denom`.
fn instance_gradients(
    model: &WayModel,
    seq: &NestedSequence,
    keep: &[bool],
    denom: f64,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let logits = model.forward(&mut g, &vars, seq, rng.as_mut().map(|r| r as &mut dyn rand::RngCore))?;
    let logp = g.log_softmax(logits, 1)?;
    let picked = g.pick(logp, &vec![seq.label; seq.len()])?;
    let mask = Tensor::new(vec![keep.len(), 1], keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect())?;
    let mask = g.constant(mask);
    let kept = g.mul(picked, mask)?;
    let total = g.sum(kept);
    let loss = g.scale(total, -1.0 / denom);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {value} on trajectory '{}'", seq.id)));
    }
    let mut grads = g.backward(loss)?;
    let out = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, out))
}

/// Batch loss (masked mean) and summed gradients. Instances run in
/// parallel; gradients are reduced in batch order so results do not depend
/// on scheduling.
pub fn batch_gradients(
    model: &WayModel,
    batch: &[&NestedSequence],
    mask: &StepMask,
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Vec<Tensor>)> {
    let denom = mask.kept() as f64;
    let parts: Vec<Result<(f64, Vec<Tensor>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, seq)| instance_gradients(model, seq, &mask.keep[i], denom, dropout_seeds.map(|s| s[i])))
        .collect();
    let mut loss = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for part in parts {
        let (l, grads) = part?;
        loss += l;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((loss, sum.ok_or(Error::Empty("batch"))?))
}

/// Mean per-step loss over every step (no masking, no dropout) and the
/// per-step predictions.
pub fn evaluate(model: &WayModel, seqs: &[&NestedSequence]) -> Result<(f64, Vec<PredictionRecord>)> {
    let parts: Vec<Result<(Vec<f64>, PredictionRecord)>> = seqs
        .par_iter()
        .map(|s| {
            let logits = model.logits(s)?;
            let losses = step_losses(&logits, s.label)?;
            let rec = PredictionRecord {
                id: s.id.clone(),
                label: s.label,
                predictions: argmax_rows(&logits),
            };
            Ok((losses, rec))
        })
        .collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut records = Vec::with_capacity(seqs.len());
    for p in parts {
        let (losses, rec) = p?;
        sum += losses.iter().sum::<f64>();
        n += losses.len();
        records.push(rec);
    }
    Ok((if n > 0 { sum / n as f64 } else { f64::NAN }, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub optimizer_steps: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: WayModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Trains with Adam and keeps the parameters of the epoch with the lowest
/// validation loss (training loss when there is no validation set).
/// `on_epoch` sees every epoch's log and, on improvement, the new best model.
pub fn train(
    mut model: WayModel,
    train_set: &[&NestedSequence],
    val_set: &[&NestedSequence],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, Option<&WayModel>) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let use_dropout = model.config().dropout > 0.0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, WayModel, usize)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&NestedSequence> = chunk.iter().map(|&i| train_set[i]).collect();
            let lengths: Vec<usize> = batch.iter().map(|s| s.len()).collect();
            let mask = if config.gd_enabled {
                draw_mask(&lengths, &gd_ratios(&lengths), &mut rng)
            } else {
                StepMask::all(&lengths)
            };
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.random()).collect();
            let (loss, grads) = batch_gradients(&model, &batch, &mask, use_dropout.then_some(&seeds[..]))
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            adam.step(model.params_mut(), &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, recs) = evaluate(&model, val_set)?;
            (Some(l), Some(overall_accuracy(&recs)?))
        };
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: non-finite loss {score}")));
        }
        let improved = best.as_ref().is_none_or(|(s, _, _)| score < *s);
        if improved {
            best = Some((score, model.clone(), epoch));
        }
        let entry = EpochLog {
            epoch,
            optimizer_steps: adam.steps(),
            train_loss,
            val_loss,
            val_accuracy,
            improved,
        };
        on_epoch(&entry, improved.then_some(&model))?;
        log.push(entry);
    }
    let (_, best, best_epoch) = best.ok_or(Error::Empty("epochs"))?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        log,
    })
}

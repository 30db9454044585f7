//! Loss, Adam, and the mini-batch training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{Mode, Network};
use crate::autodiff::{Gradients, Graph, Parameter};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batch losses above this count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Rows per worker chunk in [`evaluate`].
const EVAL_CHUNK: usize = 512;

/// Mean softmax cross-entropy of `logits` against `labels`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let g = Graph::new();
    Ok(g.constant(logits.clone()).softmax_cross_entropy(labels)?.value().item())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// One update of every trainable parameter. Parameters without a
    /// gradient are treated as having gradient zero.
    pub fn step(&mut self, params: Vec<&mut Parameter>, grads: &Gradients) -> Result<()> {
        for p in &params {
            if let Some(g) = grads.param(&p.name) {
                if g.shape() != p.value.shape() {
                    return Err(Error::Training {
                        param: p.name.clone(),
                        reason: format!("gradient shape {:?} for value {:?}", g.shape(), p.value.shape()),
                    });
                }
                if !g.all_finite() {
                    return Err(Error::Training {
                        param: p.name.clone(),
                        reason: "non-finite gradient".into(),
                    });
                }
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for p in params {
            if !p.trainable {
                continue;
            }
            let shape = p.value.shape().to_vec();
            let m = self.m.entry(p.name.clone()).or_insert_with(|| Tensor::zeros(shape.clone()));
            let v = self.v.entry(p.name.clone()).or_insert_with(|| Tensor::zeros(shape.clone()));
            let zero;
            let g = match grads.param(&p.name) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(shape.clone());
                    &zero
                }
            };
            let mut theta = p.value.data().to_vec();
            let (md, vd) = (m.data().to_vec(), v.data().to_vec());
            let mut new_m = Vec::with_capacity(md.len());
            let mut new_v = Vec::with_capacity(vd.len());
            for (i, &gi) in g.data().iter().enumerate() {
                let mi = beta1 * md[i] + (1.0 - beta1) * gi;
                let vi = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                theta[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                new_m.push(mi);
                new_v.push(vi);
            }
            *m = Tensor::new(shape.clone(), new_m)?;
            *v = Tensor::new(shape.clone(), new_v)?;
            p.value = Tensor::new(shape, theta)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub mode: Mode,
    /// Stop once an epoch ends with full-train accuracy at or above this.
    pub stop_at_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            seed,
            shuffle: true,
            mode: Mode::Direct,
            stop_at_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc`; missing validation
    /// values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.10}")).unwrap_or_default();
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.10},{:.10},{},{}",
                e.epoch,
                e.train_loss,
                e.train_acc,
                opt(e.val_loss),
                opt(e.val_acc)
            );
        }
        out
    }
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    logits.argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count()
}

/// Mean loss and accuracy over `ds`. Chunks run in parallel; partial sums
/// are combined in chunk order, so the result does not depend on threading.
pub fn evaluate(net: &Network, ds: &Dataset, mode: Mode) -> Result<Evaluation> {
    let n = ds.len();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(EVAL_CHUNK).map(|s| (s, (s + EVAL_CHUNK).min(n))).collect();
    let parts = chunks
        .par_iter()
        .map(|&(s, e)| {
            let idx: Vec<usize> = (s..e).collect();
            let (x, y) = ds.batch(&idx);
            let logits = net.predict(&x, mode)?;
            let loss = softmax_cross_entropy(&logits, &y)? * (e - s) as f64;
            Ok((loss, correct(&logits, &y)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut loss, mut hits) = (0.0, 0);
    for (l, c) in parts {
        loss += l;
        hits += c;
    }
    Ok(Evaluation {
        loss: loss / n as f64,
        accuracy: hits as f64 / n as f64,
    })
}

/// Loss and parameter gradients of one batch.
pub fn batch_gradients(net: &Network, x: &Tensor, y: &[usize], mode: Mode) -> Result<(f64, usize, Gradients)> {
    let g = Graph::new();
    let out = net.forward(&g, x, mode, false)?;
    let hits = correct(&out.logits.value(), y);
    let loss = out.logits.softmax_cross_entropy(y)?;
    let value = loss.value().item();
    Ok((value, hits, g.backward(loss)?))
}

/// Mini-batch Adam. Metrics per epoch: running means over the epoch's
/// batches for training, full passes for validation.
pub fn train(net: &mut Network, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(AdamConfig::new(cfg.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut hits) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = train.batch(idx);
            let (loss, h, grads) = batch_gradients(net, &x, &y, cfg.mode)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * idx.len() as f64;
            hits += h;
            adam.step(net.parameters_mut(), &grads)?;
        }
        let n = train.len() as f64;
        let val_eval = val.map(|v| evaluate(net, v, cfg.mode)).transpose()?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            val_loss: val_eval.map(|e| e.loss),
            val_acc: val_eval.map(|e| e.accuracy),
        };
        debug!(
            "epoch {epoch}: loss {:.5} acc {:.4} val {:?}",
            metrics.train_loss, metrics.train_acc, metrics.val_acc
        );
        log.epochs.push(metrics);
        if let Some(target) = cfg.stop_at_accuracy {
            if evaluate(net, train, cfg.mode)?.accuracy >= target {
                break;
            }
        }
    }
    Ok(log)
}

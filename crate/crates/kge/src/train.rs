//! Mini-batch training with uniform head/tail corruption.
//!
//! The default loss is binary cross-entropy on `sigmoid(score + b)`, where
//! `b` is `margin` for the distance models (TransE, RotatE) and 0 otherwise,
//! so that distance scores (always ≤ 0) can still reach high probabilities.
//! A margin-ranking loss is available as an alternative.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use kgx_core::{EntityId, RelationId, Triple, TripleSet, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{KgeModel, ModelKind};
use crate::KgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            _ => Err(format!("unknown optimizer '{s}', expected sgd or adagrad")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Margin,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "margin" => Ok(LossKind::Margin),
            _ => Err(format!("unknown loss '{s}', expected bce or margin")),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Margin => "margin",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::DistMult,
            dim: 32,
            epochs: 100,
            batch_size: 128,
            negatives: 8,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adagrad,
            loss: LossKind::Bce,
            margin: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        let bad = |m: &str| Err(KgeError::InvalidConfig(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be non-negative");
        }
        Ok(())
    }
}

/// Sparse gradients keyed by row index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    pub entities: HashMap<u32, Vec<f64>>,
    pub relations: HashMap<u32, Vec<f64>>,
}

impl Grads {
    fn add(map: &mut HashMap<u32, Vec<f64>>, row: u32, g: &[f64], scale: f64) {
        let acc = map.entry(row).or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in acc.iter_mut().zip(g) {
            *a += scale * b;
        }
    }

    /// Adds `scale · ∂score(t)`.
    pub fn add_score(&mut self, m: &KgeModel, t: &Triple, scale: f64) {
        let g = m.score_grad(t);
        Self::add(&mut self.entities, t.head.0, &g.head, scale);
        Self::add(&mut self.entities, t.tail.0, &g.tail, scale);
        Self::add(&mut self.relations, t.relation.0, &g.relation, scale);
    }

    pub fn add_relation(&mut self, r: RelationId, g: &[f64]) {
        Self::add(&mut self.relations, r.0, g, 1.0);
    }

    pub fn is_finite(&self) -> bool {
        self.entities.values().chain(self.relations.values()).flatten().all(|x| x.is_finite())
    }
}

/// Per-parameter optimizer state over both tables.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    entity_acc: Vec<f64>,
    relation_acc: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, m: &KgeModel) -> Self {
        let (ea, ra) = match kind {
            OptimizerKind::Adagrad => (vec![0.0; m.entities.len()], vec![0.0; m.relations.len()]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            lr,
            entity_acc: ea,
            relation_acc: ra,
        }
    }

    fn step(kind: OptimizerKind, lr: f64, params: &mut [f32], acc: &mut [f64], offset: usize, g: &[f64]) {
        for (k, &gk) in g.iter().enumerate() {
            let delta = match kind {
                OptimizerKind::Sgd => lr * gk,
                OptimizerKind::Adagrad => {
                    acc[offset + k] += gk * gk;
                    lr * gk / (acc[offset + k].sqrt() + 1e-10)
                }
            };
            params[offset + k] = (f64::from(params[offset + k]) - delta) as f32;
        }
    }

    /// Gradient descent step. With `freeze_entities` the entity table is
    /// left untouched.
    pub fn apply(&mut self, m: &mut KgeModel, grads: &Grads, freeze_entities: bool) {
        if !freeze_entities {
            let w = m.entity_width();
            for (&row, g) in &grads.entities {
                Self::step(self.kind, self.lr, &mut m.entities, &mut self.entity_acc, row as usize * w, g);
            }
        }
        let w = m.relation_width();
        for (&row, g) in &grads.relations {
            Self::step(self.kind, self.lr, &mut m.relations, &mut self.relation_acc, row as usize * w, g);
            m.normalize_relation(RelationId(row));
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A positive triple with its sampled corruptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
}

pub fn corrupt<R: Rng>(rng: &mut R, t: &Triple, n_entities: usize, k: usize) -> Vec<Triple> {
    (0..k)
        .map(|_| {
            let e = EntityId(rng.random_range(0..n_entities as u32));
            if rng.random_bool(0.5) {
                Triple::new(e, t.relation, t.tail)
            } else {
                Triple::new(t.head, t.relation, e)
            }
        })
        .collect()
}

/// Mean loss over the batch and its gradient.
pub fn batch_loss(m: &KgeModel, batch: &[Sample], cfg: &TrainConfig) -> (f64, Grads) {
    let mut grads = Grads::default();
    let mut total = 0.0;
    let n = batch.len().max(1) as f64;
    let bias = if m.kind.is_distance() { cfg.margin } else { 0.0 };
    for s in batch {
        let k = s.negatives.len().max(1) as f64;
        let pos = m.score(&s.positive);
        match cfg.loss {
            LossKind::Bce => {
                total += softplus(-(pos + bias));
                grads.add_score(m, &s.positive, (sigmoid(pos + bias) - 1.0) / n);
                for neg in &s.negatives {
                    let x = m.score(neg) + bias;
                    total += softplus(x) / k;
                    grads.add_score(m, neg, sigmoid(x) / (k * n));
                }
            }
            LossKind::Margin => {
                for neg in &s.negatives {
                    let v = cfg.margin - pos + m.score(neg);
                    if v > 0.0 {
                        total += v / k;
                        grads.add_score(m, &s.positive, -1.0 / (k * n));
                        grads.add_score(m, neg, 1.0 / (k * n));
                    }
                }
            }
        }
    }
    (total / n, grads)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh model on `train`. Deterministic under `cfg.seed`.
pub fn train(cfg: &TrainConfig, vocab: &Vocabulary, train: &TripleSet) -> Result<(KgeModel, TrainLog), KgeError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(KgeError::InvalidConfig("training set is empty".into()));
    }
    let mut m = KgeModel::init(cfg.model, cfg.dim, vocab.clone(), cfg.seed)?;
    for t in train.iter() {
        m.check(t)?;
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut order: Vec<Triple> = train.triples().to_vec();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|t| Sample {
                    positive: *t,
                    negatives: corrupt(&mut rng, t, m.num_entities(), cfg.negatives),
                })
                .collect();
            let (loss, grads) = batch_loss(&m, &batch, cfg);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(KgeError::Divergence { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            opt.apply(&mut m, &grads, false);
        }
        let mean = epoch_loss / order.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    if let Some(last) = log.epoch_losses.last() {
        log::info!("trained {} for {} epochs, final loss {last:.6}", cfg.model, cfg.epochs);
    }
    Ok((m, log))
}

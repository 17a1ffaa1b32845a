//! Symmetry-violation debugging by intensive fine-tuning of relation
//! parameters.
//!
//! A violation is a triple `(h, r, t)` whose reverse `(t, r, h)` is in
//! train and ranked first for `(t, r, ?)`, while `t` ranks below first for
//! `(h, r, ?)`. All ranks here are tail-query ranks, filtered against train,
//! with realistic tie handling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use kgx_core::metrics::{aggregate, Metric};
use kgx_core::sysout::Direction;
use kgx_core::{EntityId, RelationId, SystemOutput, TieStrategy, Triple, TripleSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate_to_system_output, known_triples, query_scores, rank, Directions, EvalOptions};
use crate::model::KgeModel;
use crate::train::{Grads, Optimizer, OptimizerKind};
use crate::KgeError;

const TIE: TieStrategy = TieStrategy::Realistic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebugConfig {
    pub debug_set_size: usize,
    pub in_danger_size: usize,
    /// The in-danger scan evaluates at most `scan_factor · in_danger_size`
    /// train triples.
    pub scan_factor: usize,
    pub learning_rate: f64,
    pub epoch_cap: usize,
    pub loss: FinetuneLoss,
    /// Logit offset for distance models under the BCE loss, as in training.
    pub margin: f64,
    pub seed: u64,
}

impl Default for DebugConfig {
    fn default() -> Self {
        DebugConfig {
            debug_set_size: 10,
            in_danger_size: 20,
            scan_factor: 50,
            learning_rate: 0.01,
            epoch_cap: 500,
            loss: FinetuneLoss::Softmax,
            margin: 2.0,
            seed: 0,
        }
    }
}

impl DebugConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        if self.debug_set_size == 0 || self.in_danger_size == 0 || self.scan_factor == 0 {
            return Err(KgeError::InvalidConfig("debug set, in-danger and scan sizes must be positive".into()));
        }
        if self.epoch_cap == 0 {
            return Err(KgeError::InvalidConfig("epoch_cap must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KgeError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub forward: Triple,
    /// Always true: candidates are reversals of train triples.
    pub reverse_in_train: bool,
    /// Whether `forward` itself is a train triple.
    pub forward_in_train: bool,
    pub reverse_rank: f64,
    pub forward_rank: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationScan {
    pub by_relation: BTreeMap<RelationId, Vec<ViolationRecord>>,
    pub candidates: usize,
}

impl ViolationScan {
    pub fn total(&self) -> usize {
        self.by_relation.values().map(Vec::len).sum()
    }

    /// Relation with the most violations; ties go to the lowest id.
    pub fn most_violated(&self) -> Option<RelationId> {
        self.by_relation
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
            .map(|(r, _)| *r)
    }
}

/// Scans reversals of train triples (optionally of one relation only).
pub fn find_symmetry_violations(m: &KgeModel, train: &TripleSet, relation: Option<RelationId>) -> ViolationScan {
    let known = train.to_hash_set();
    let candidates: Vec<Triple> = train
        .iter()
        .filter(|t| relation.is_none_or(|r| t.relation == r) && t.head != t.tail)
        .map(|t| t.reversed())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let found: Vec<ViolationRecord> = candidates
        .par_iter()
        .filter_map(|&forward| {
            let reverse_rank = rank(m, &forward.reversed(), Direction::TailQuery, Some(&known), TIE);
            if reverse_rank != 1.0 {
                return None;
            }
            let forward_rank = rank(m, &forward, Direction::TailQuery, Some(&known), TIE);
            (forward_rank > 1.0).then_some(ViolationRecord {
                forward,
                reverse_in_train: true,
                forward_in_train: known.contains(&forward),
                reverse_rank,
                forward_rank,
            })
        })
        .collect();
    let mut by_relation: BTreeMap<RelationId, Vec<ViolationRecord>> = BTreeMap::new();
    for v in found {
        by_relation.entry(v.forward.relation).or_default().push(v);
    }
    ViolationScan {
        by_relation,
        candidates: candidates.len(),
    }
}

/// Seeded split into a debugging set of `debug_set_size` triples and a
/// debugging-test set holding the rest. Debugging-set triples have pairwise
/// distinct `(head, relation)` queries, so that all of them can rank first
/// at once.
pub fn split_debug_sets(violations: &[ViolationRecord], cfg: &DebugConfig) -> Result<(Vec<Triple>, Vec<Triple>), KgeError> {
    let queries: HashSet<(EntityId, RelationId)> = violations.iter().map(|v| (v.forward.head, v.forward.relation)).collect();
    if violations.len() <= cfg.debug_set_size || queries.len() < cfg.debug_set_size {
        return Err(KgeError::InsufficientViolations {
            found: violations.len().min(queries.len()),
            needed: cfg.debug_set_size + 1,
        });
    }
    let mut triples: Vec<Triple> = violations.iter().map(|v| v.forward).collect();
    triples.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut used = HashSet::new();
    let (mut debug, mut test) = (Vec::new(), Vec::new());
    for t in triples {
        if debug.len() < cfg.debug_set_size && used.insert((t.head, t.relation)) {
            debug.push(t);
        } else {
            test.push(t);
        }
    }
    Ok((debug, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub model: KgeModel,
    pub converged: bool,
    pub epochs: usize,
}

fn all_rank_one(m: &KgeModel, examples: &[Triple], known: &HashSet<Triple>) -> bool {
    examples.par_iter().all(|t| rank(m, t, Direction::TailQuery, Some(known), TIE) == 1.0)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Loss over all candidate tails of a fine-tuning example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneLoss {
    /// Cross-entropy of the softmax over candidate tails.
    Softmax,
    /// Independent binary cross-entropy per candidate, summed.
    Bce,
}

impl FromStr for FinetuneLoss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(FinetuneLoss::Softmax),
            "bce" => Ok(FinetuneLoss::Bce),
            _ => Err(format!("unknown fine-tuning loss '{s}', expected softmax or bce")),
        }
    }
}

/// One-vs-all loss for the tail query of `t` and its gradient with respect
/// to the relation row. Train positives other than the gold are not
/// candidates.
pub fn one_vs_all_relation_grad(m: &KgeModel, t: &Triple, known: &HashSet<Triple>, loss: FinetuneLoss, margin: f64) -> (f64, Vec<f64>) {
    let q = m.query(t.head, t.relation);
    let scores = query_scores(m, t, Direction::TailQuery);
    let gold = t.tail.index();
    let active: Vec<bool> = (0..scores.len())
        .map(|e| e == gold || !known.contains(&Triple::new(t.head, t.relation, EntityId(e as u32))))
        .collect();
    let mut coeff = vec![0.0; scores.len()];
    let value = match loss {
        FinetuneLoss::Softmax => {
            let top = scores.iter().zip(&active).filter(|p| *p.1).map(|p| *p.0).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().zip(&active).filter(|p| *p.1).map(|p| (p.0 - top).exp()).sum();
            for (e, &s) in scores.iter().enumerate() {
                if active[e] {
                    coeff[e] = (s - top).exp() / z;
                }
            }
            coeff[gold] -= 1.0;
            top + z.ln() - scores[gold]
        }
        FinetuneLoss::Bce => {
            let bias = if m.kind.is_distance() { margin } else { 0.0 };
            let mut total = 0.0;
            for (e, &s) in scores.iter().enumerate() {
                let x = s + bias;
                if e == gold {
                    total += softplus(-x);
                    coeff[e] = sigmoid(x) - 1.0;
                } else if active[e] {
                    total += softplus(x);
                    coeff[e] = sigmoid(x);
                }
            }
            total
        }
    };
    let dq = m.weighted_query_grad(&q, &coeff);
    let (_, dr) = m.query_backward(t.head, t.relation, &q, &dq);
    (value, dr)
}

/// Fine-tunes relation parameters on `examples` until each is ranked first
/// for its tail query, or `epoch_cap` epochs pass. Entities stay frozen and
/// the optimizer starts fresh. Ranks and candidates are filtered against
/// `known` and the examples themselves.
pub fn intensive_finetune(m: &KgeModel, examples: &[Triple], known: &HashSet<Triple>, cfg: &DebugConfig) -> Result<FinetuneOutcome, KgeError> {
    if examples.is_empty() {
        return Err(KgeError::InvalidConfig("fine-tuning needs at least one example".into()));
    }
    for t in examples {
        m.check(t)?;
    }
    let known: HashSet<Triple> = known.iter().chain(examples).copied().collect();
    let known = &known;
    let mut model = m.clone();
    let mut opt = Optimizer::new(OptimizerKind::Adagrad, cfg.learning_rate, &model);
    for epoch in 0..cfg.epoch_cap {
        if all_rank_one(&model, examples, known) {
            return Ok(FinetuneOutcome {
                model,
                converged: true,
                epochs: epoch,
            });
        }
        for t in examples {
            let (loss, dr) = one_vs_all_relation_grad(&model, t, known, cfg.loss, cfg.margin);
            if !loss.is_finite() || dr.iter().any(|x| !x.is_finite()) {
                return Err(KgeError::Divergence { epoch: epoch + 1 });
            }
            let mut g = Grads::default();
            g.add_relation(t.relation, &dr);
            opt.apply(&mut model, &g, true);
        }
    }
    let converged = all_rank_one(&model, examples, known);
    Ok(FinetuneOutcome {
        model,
        converged,
        epochs: cfg.epoch_cap,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InDangerScan {
    pub triples: Vec<Triple>,
    /// Train triples whose ranks were evaluated.
    pub scanned: usize,
}

/// Train triples ranked first under `original` that lost first place under
/// `naive`. Triples of relations whose parameters did not change cannot
/// move (entities are frozen) and are passed over without evaluation.
pub fn collect_in_danger(
    original: &KgeModel,
    naive: &KgeModel,
    train: &TripleSet,
    exclude: &HashSet<Triple>,
    known: &HashSet<Triple>,
    cfg: &DebugConfig,
) -> InDangerScan {
    let mut order: Vec<Triple> = train.triples().to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)));
    let cap = cfg.scan_factor * cfg.in_danger_size;
    let changed: HashSet<RelationId> = (0..original.num_relations() as u32)
        .map(RelationId)
        .filter(|&r| {
            let a = original.relation_row(r).iter().map(|x| x.to_bits());
            !a.eq(naive.relation_row(r).iter().map(|x| x.to_bits()))
        })
        .collect();
    let mut out = InDangerScan::default();
    for t in order {
        if out.triples.len() >= cfg.in_danger_size || out.scanned >= cap {
            break;
        }
        if exclude.contains(&t) || !changed.contains(&t.relation) {
            continue;
        }
        out.scanned += 1;
        if rank(original, &t, Direction::TailQuery, Some(known), TIE) == 1.0 && rank(naive, &t, Direction::TailQuery, Some(known), TIE) > 1.0 {
            out.triples.push(t);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Naive,
    InDanger,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "in-danger" => Ok(Strategy::InDanger),
            _ => Err(format!("unknown strategy '{s}', expected naive or in-danger")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Naive => "naive",
            Strategy::InDanger => "in-danger",
        })
    }
}

/// Observed by the instrumentation hook at the start of each fine-tuning
/// round, with the parameters the round starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Round {
    Naive,
    InDanger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationStatus {
    pub relation: String,
    pub violations: usize,
    pub sufficient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub converged: bool,
    pub epochs: usize,
    pub examples: usize,
}

pub const VARIANTS: [&str; 3] = ["before", "naive", "in-danger"];
pub const SPLITS: [&str; 3] = ["debugging-set", "debugging-test", "original-test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugReport {
    pub report_version: String,
    pub kind: String,
    pub model: String,
    pub relation: String,
    pub relations: Vec<RelationStatus>,
    pub debug_set: Vec<[String; 3]>,
    pub debug_test_size: usize,
    pub in_danger_set: Vec<[String; 3]>,
    pub in_danger_scanned: usize,
    pub naive: RoundSummary,
    pub in_danger: RoundSummary,
    /// variant → split → metric → value.
    pub results: BTreeMap<String, BTreeMap<String, BTreeMap<Metric, f64>>>,
    pub config: DebugConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saved_strategy: Option<Strategy>,
}

impl DebugReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn value(&self, variant: &str, split: &str, metric: Metric) -> f64 {
        self.results[variant][split][&metric]
    }
}

#[derive(Debug, Clone)]
pub struct DebugSession {
    pub report: DebugReport,
    pub naive_model: KgeModel,
    pub in_danger_model: KgeModel,
    /// Original-test system outputs keyed by variant.
    pub outputs: BTreeMap<String, SystemOutput>,
}

impl DebugSession {
    pub fn model(&self, s: Strategy) -> &KgeModel {
        match s {
            Strategy::Naive => &self.naive_model,
            Strategy::InDanger => &self.in_danger_model,
        }
    }
}

pub fn debug_metrics() -> Vec<Metric> {
    vec![Metric::Hits(1), Metric::Hits(5), Metric::Hits(10), Metric::Mr, Metric::Mrr]
}

fn summarize(ranks: &[f64]) -> Result<BTreeMap<Metric, f64>, KgeError> {
    debug_metrics()
        .into_iter()
        .map(|m| Ok((m, aggregate(m, ranks).map_err(|e| KgeError::InvalidConfig(e.to_string()))?)))
        .collect()
}

fn tail_ranks(m: &KgeModel, triples: &[Triple], known: &HashSet<Triple>) -> Vec<f64> {
    triples.par_iter().map(|t| rank(m, t, Direction::TailQuery, Some(known), TIE)).collect()
}

fn labelled(m: &KgeModel, t: &Triple) -> [String; 3] {
    [
        m.vocab.entity_label(t.head).unwrap_or_default().to_owned(),
        m.vocab.relation_label(t.relation).unwrap_or_default().to_owned(),
        m.vocab.entity_label(t.tail).unwrap_or_default().to_owned(),
    ]
}

/// Runs both debugging rounds on one relation and evaluates the original
/// model and both debugged models. `relation: None` picks the relation with
/// the most violations. `hook` sees the starting parameters of each round.
pub fn run_debug_session(
    m: &KgeModel,
    train: &TripleSet,
    valid: Option<&TripleSet>,
    test: &TripleSet,
    relation: Option<RelationId>,
    cfg: &DebugConfig,
    hook: &mut dyn FnMut(Round, &KgeModel),
) -> Result<DebugSession, KgeError> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(KgeError::InvalidConfig("test set is empty".into()));
    }
    let known = train.to_hash_set();
    let scan = find_symmetry_violations(m, train, relation);
    let target = match relation {
        Some(r) => r,
        None => scan.most_violated().ok_or(KgeError::InsufficientViolations { found: 0, needed: cfg.debug_set_size + 1 })?,
    };
    let relations: Vec<RelationStatus> = scan
        .by_relation
        .iter()
        .map(|(r, v)| RelationStatus {
            relation: m.vocab.relation_label(*r).unwrap_or_default().to_owned(),
            violations: v.len(),
            sufficient: v.len() > cfg.debug_set_size,
        })
        .collect();
    let violations = scan.by_relation.get(&target).map(Vec::as_slice).unwrap_or_default();
    let (debug_set, debug_test) = split_debug_sets(violations, cfg)?;

    hook(Round::Naive, m);
    let naive = intensive_finetune(m, &debug_set, &known, cfg)?;
    let exclude: HashSet<Triple> = debug_set.iter().copied().collect();
    let danger = collect_in_danger(m, &naive.model, train, &exclude, &known, cfg);
    let mut second: Vec<Triple> = debug_set.clone();
    second.extend(&danger.triples);
    hook(Round::InDanger, m);
    let in_danger = intensive_finetune(m, &second, &known, cfg)?;

    let mut splits: Vec<&TripleSet> = vec![train, test];
    splits.extend(valid);
    let test_filter = known_triples(splits);
    let mut results = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    for (variant, model) in VARIANTS.iter().zip([m, &naive.model, &in_danger.model]) {
        let opts = EvalOptions {
            directions: Directions::Both,
            tie: TIE,
            top_k: 0,
            system_name: format!("{}-{variant}", m.kind),
            dataset_name: "debug".into(),
        };
        let out = evaluate_to_system_output(model, test, Some(&test_filter), &opts)?;
        let mut per_split = BTreeMap::new();
        per_split.insert("debugging-set".to_owned(), summarize(&tail_ranks(model, &debug_set, &known))?);
        per_split.insert("debugging-test".to_owned(), summarize(&tail_ranks(model, &debug_test, &known))?);
        per_split.insert("original-test".to_owned(), summarize(&out.ranks())?);
        results.insert((*variant).to_owned(), per_split);
        outputs.insert((*variant).to_owned(), out);
    }

    let report = DebugReport {
        report_version: kgx_core::analysis::REPORT_VERSION.to_owned(),
        kind: "debug".into(),
        model: m.kind.to_string(),
        relation: m.vocab.relation_label(target).unwrap_or_default().to_owned(),
        relations,
        debug_set: debug_set.iter().map(|t| labelled(m, t)).collect(),
        debug_test_size: debug_test.len(),
        in_danger_set: danger.triples.iter().map(|t| labelled(m, t)).collect(),
        in_danger_scanned: danger.scanned,
        naive: RoundSummary {
            converged: naive.converged,
            epochs: naive.epochs,
            examples: debug_set.len(),
        },
        in_danger: RoundSummary {
            converged: in_danger.converged,
            epochs: in_danger.epochs,
            examples: second.len(),
        },
        results,
        config: *cfg,
        saved_strategy: None,
    };
    Ok(DebugSession {
        report,
        naive_model: naive.model,
        in_danger_model: in_danger.model,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use kgx_core::data::Split;
    use kgx_core::Vocabulary;

    fn vocab(n: usize, r: usize) -> Vocabulary {
        Vocabulary::from_labels((0..n).map(|i| format!("e{i}")).collect(), (0..r).map(|i| format!("r{i}")).collect()).unwrap()
    }

    fn t(h: u32, r: u32, tl: u32) -> Triple {
        Triple::new(EntityId(h), RelationId(r), EntityId(tl))
    }

    fn set(split: Split, triples: &[Triple]) -> TripleSet {
        TripleSet::from_triples(split, triples.iter().copied()).0
    }

    /// RESCAL dim 4 with one-hot entities: score(h, r, t) = W_r[h][t].
    fn table_model(w: [[f32; 4]; 4]) -> KgeModel {
        let mut m = KgeModel::init(ModelKind::Rescal, 4, vocab(4, 1), 0).unwrap();
        m.entities = (0..16).map(|i| if i / 4 == i % 4 { 1.0 } else { 0.0 }).collect();
        m.relations = w.iter().flatten().copied().collect();
        m
    }

    #[test]
    fn hand_built_violation() {
        // Train holds (e1, r, e0). Query (e1, r, ?) ranks e0 first.
        // Query (e0, r, ?) prefers e2 over e1, so (e0, r, e1) is a violation.
        let m = table_model([[0.0, 0.5, 0.9, 0.1], [0.9, 0.0, 0.2, 0.1], [0.0; 4], [0.0; 4]]);
        let train = set(Split::Train, &[t(1, 0, 0)]);
        let scan = find_symmetry_violations(&m, &train, None);
        assert_eq!(scan.total(), 1);
        let v = scan.by_relation[&RelationId(0)][0];
        assert_eq!(v.forward, t(0, 0, 1));
        assert_eq!((v.reverse_rank, v.forward_rank), (1.0, 2.0));
        assert!(v.reverse_in_train && !v.forward_in_train);
        assert_eq!(scan.most_violated(), Some(RelationId(0)));
    }

    #[test]
    fn no_violations_when_both_directions_rank_first() {
        let m = table_model([[0.0, 0.9, 0.1, 0.1], [0.9, 0.0, 0.2, 0.1], [0.0; 4], [0.0; 4]]);
        let train = set(Split::Train, &[t(1, 0, 0)]);
        assert_eq!(find_symmetry_violations(&m, &train, None).total(), 0);
    }

    fn records(n: usize) -> Vec<ViolationRecord> {
        (0..n as u32)
            .map(|i| ViolationRecord {
                forward: t(i, 0, i + 1),
                reverse_in_train: true,
                forward_in_train: false,
                reverse_rank: 1.0,
                forward_rank: 2.0,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let cfg = DebugConfig::default();
        let (d, rest) = split_debug_sets(&records(11), &cfg).unwrap();
        assert_eq!((d.len(), rest.len()), (10, 1));
        let (d77, rest77) = split_debug_sets(&records(77), &cfg).unwrap();
        assert_eq!((d77.len(), rest77.len()), (10, 67));
        assert_eq!(split_debug_sets(&records(77), &cfg).unwrap(), (d77.clone(), rest77.clone()));
        let all: BTreeSet<Triple> = d77.iter().chain(&rest77).copied().collect();
        assert_eq!(all.len(), 77);
        assert!(matches!(split_debug_sets(&records(10), &cfg), Err(KgeError::InsufficientViolations { found: 10, needed: 11 })));
    }

    #[test]
    fn debug_set_queries_are_distinct() {
        let mut recs = records(12);
        for r in recs.iter_mut().take(6) {
            r.forward.head = EntityId(0);
        }
        let cfg = DebugConfig {
            debug_set_size: 7,
            ..DebugConfig::default()
        };
        let (d, rest) = split_debug_sets(&recs, &cfg).unwrap();
        assert_eq!((d.len(), rest.len()), (7, 5));
        let heads: BTreeSet<EntityId> = d.iter().map(|t| t.head).collect();
        assert_eq!(heads.len(), 7);
        let tight = DebugConfig {
            debug_set_size: 8,
            ..DebugConfig::default()
        };
        assert!(split_debug_sets(&recs, &tight).is_err());
    }

    #[test]
    fn finetune_stops_immediately_when_done() {
        let m = table_model([[0.0, 0.9, 0.1, 0.1], [0.9, 0.0, 0.2, 0.1], [0.0; 4], [0.0; 4]]);
        let out = intensive_finetune(&m, &[t(0, 0, 1)], &HashSet::new(), &DebugConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.epochs, 0);
        assert_eq!(out.model, m);
    }

    #[test]
    fn finetune_fixes_violation_and_freezes_entities() {
        let m = table_model([[0.0, 0.5, 0.9, 0.1], [0.9, 0.0, 0.2, 0.1], [0.0; 4], [0.0; 4]]);
        let known: HashSet<Triple> = [t(1, 0, 0)].into_iter().collect();
        let cfg = DebugConfig {
            learning_rate: 0.05,
            ..DebugConfig::default()
        };
        let out = intensive_finetune(&m, &[t(0, 0, 1)], &known, &cfg).unwrap();
        assert!(out.converged);
        assert!(out.epochs > 0);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out.model.entities), bits(&m.entities));
        assert_eq!(rank(&out.model, &t(0, 0, 1), Direction::TailQuery, Some(&known), TIE), 1.0);
    }

    #[test]
    fn in_danger_on_identical_models_is_empty() {
        let m = table_model([[0.0, 0.5, 0.9, 0.1], [0.9, 0.0, 0.2, 0.1], [0.0; 4], [0.0; 4]]);
        let train = set(Split::Train, &[t(1, 0, 0), t(0, 0, 2)]);
        let scan = collect_in_danger(&m, &m, &train, &HashSet::new(), &train.to_hash_set(), &DebugConfig::default());
        assert!(scan.triples.is_empty());
        assert_eq!(scan.scanned, 0);
    }

    #[test]
    fn in_danger_finds_flipped_triple() {
        // (e0, r, e2) ranks first before; after the edit e1 overtakes e2.
        let before = table_model([[0.0, 0.5, 0.9, 0.1], [0.9, 0.0, 0.2, 0.1], [0.0; 4], [0.0; 4]]);
        let after = table_model([[0.0, 1.5, 0.9, 0.1], [0.9, 0.0, 0.2, 0.1], [0.0; 4], [0.0; 4]]);
        let train = set(Split::Train, &[t(1, 0, 0), t(0, 0, 2)]);
        let scan = collect_in_danger(&before, &after, &train, &HashSet::new(), &train.to_hash_set(), &DebugConfig::default());
        assert_eq!(scan.triples, vec![t(0, 0, 2)]);
        let excluded: HashSet<Triple> = [t(0, 0, 2)].into_iter().collect();
        assert!(collect_in_danger(&before, &after, &train, &excluded, &train.to_hash_set(), &DebugConfig::default()).triples.is_empty());
    }

    #[test]
    fn in_danger_respects_size_cap() {
        // Scores on (h, r, ?) put the gold first before and last after.
        let n = 40u32;
        let mut before = KgeModel::init(ModelKind::DistMult, 1, vocab(n as usize, 1), 0).unwrap();
        before.entities = (0..n).map(|i| 1.0 + i as f32).collect();
        before.relations = vec![1.0];
        let mut after = before.clone();
        after.relations = vec![-1.0];
        let train = set(Split::Train, &(0..n).map(|i| t(i, 0, n - 1)).collect::<Vec<_>>());
        let cfg = DebugConfig::default();
        let scan = collect_in_danger(&before, &after, &train, &HashSet::new(), &train.to_hash_set(), &cfg);
        assert_eq!(scan.triples.len(), cfg.in_danger_size);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("in-danger".parse::<Strategy>().unwrap(), Strategy::InDanger);
        assert_eq!(Strategy::Naive.to_string(), "naive");
        assert!("both".parse::<Strategy>().is_err());
    }
}

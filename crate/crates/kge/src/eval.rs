//! Link-prediction evaluation of a model into a system output.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use kgx_core::metrics::rank_from_counts;
use kgx_core::sysout::{Direction, RankBasis};
use kgx_core::{EntityId, ExampleRecord, SystemHeader, SystemOutput, TieStrategy, Triple, TripleSet};
use rayon::prelude::*;

use crate::model::KgeModel;
use crate::KgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directions {
    Tail,
    Head,
    Both,
}

impl Directions {
    pub fn list(self) -> &'static [Direction] {
        match self {
            Directions::Tail => &[Direction::TailQuery],
            Directions::Head => &[Direction::HeadQuery],
            Directions::Both => &[Direction::TailQuery, Direction::HeadQuery],
        }
    }
}

impl FromStr for Directions {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tail" => Ok(Directions::Tail),
            "head" => Ok(Directions::Head),
            "both" => Ok(Directions::Both),
            _ => Err(format!("unknown direction '{s}', expected tail, head or both")),
        }
    }
}

impl fmt::Display for Directions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Directions::Tail => "tail",
            Directions::Head => "head",
            Directions::Both => "both",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub directions: Directions,
    pub tie: TieStrategy,
    /// Length of the candidate list stored per record; 0 stores none.
    pub top_k: usize,
    pub system_name: String,
    pub dataset_name: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            directions: Directions::Both,
            tie: TieStrategy::Realistic,
            top_k: 0,
            system_name: "model".into(),
            dataset_name: "dataset".into(),
        }
    }
}

/// Candidate triple for entity `e` in a query built from `t`.
fn candidate(t: &Triple, dir: Direction, e: u32) -> Triple {
    match dir {
        Direction::TailQuery => Triple::new(t.head, t.relation, EntityId(e)),
        Direction::HeadQuery => Triple::new(EntityId(e), t.relation, t.tail),
    }
}

fn gold_of(t: &Triple, dir: Direction) -> EntityId {
    match dir {
        Direction::TailQuery => t.tail,
        Direction::HeadQuery => t.head,
    }
}

pub fn query_scores(m: &KgeModel, t: &Triple, dir: Direction) -> Vec<f64> {
    match dir {
        Direction::TailQuery => m.score_tails(t.head, t.relation),
        Direction::HeadQuery => m.score_heads(t.relation, t.tail),
    }
}

fn is_filtered(filter: Option<&HashSet<Triple>>, t: &Triple, dir: Direction, e: u32) -> bool {
    e != gold_of(t, dir).0 && filter.is_some_and(|f| f.contains(&candidate(t, dir, e)))
}

/// Rank of the gold entity given precomputed candidate scores.
pub fn rank_from_score_vector(scores: &[f64], t: &Triple, dir: Direction, filter: Option<&HashSet<Triple>>, tie: TieStrategy) -> f64 {
    let gold = gold_of(t, dir).index();
    let g = scores[gold];
    let mut greater = 0;
    let mut ties = 0;
    for (e, &s) in scores.iter().enumerate() {
        if e == gold || is_filtered(filter, t, dir, e as u32) {
            continue;
        }
        if s > g {
            greater += 1;
        } else if s == g {
            ties += 1;
        }
    }
    rank_from_counts(greater, ties, tie)
}

/// Rank of the gold entity of `t` for the query in direction `dir`. With
/// `filter`, other known positives are dropped from the candidates.
pub fn rank(m: &KgeModel, t: &Triple, dir: Direction, filter: Option<&HashSet<Triple>>, tie: TieStrategy) -> f64 {
    rank_from_score_vector(&query_scores(m, t, dir), t, dir, filter, tie)
}

/// One record per (test triple, direction), ids `{row}-tail` / `{row}-head`.
pub fn evaluate_to_system_output(
    m: &KgeModel,
    test: &TripleSet,
    filter: Option<&HashSet<Triple>>,
    opts: &EvalOptions,
) -> Result<SystemOutput, KgeError> {
    for t in test.iter() {
        m.check(t)?;
    }
    let basis = if filter.is_some() { RankBasis::Filtered } else { RankBasis::Raw };
    let label = |e: EntityId| m.vocab.entity_label(e).unwrap_or_default().to_owned();
    let records: Vec<ExampleRecord> = test
        .triples()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(row, t)| {
            opts.directions.list().iter().map(move |&dir| {
                let scores = query_scores(m, t, dir);
                let gold_rank = rank_from_score_vector(&scores, t, dir, filter, opts.tie);
                let suffix = match dir {
                    Direction::TailQuery => "tail",
                    Direction::HeadQuery => "head",
                };
                let mut rec = ExampleRecord::new(
                    format!("{row}-{suffix}"),
                    label(t.head),
                    m.vocab.relation_label(t.relation).unwrap_or_default(),
                    label(t.tail),
                    dir,
                    gold_rank,
                );
                if opts.top_k > 0 {
                    let mut order: Vec<u32> = (0..scores.len() as u32).filter(|&e| !is_filtered(filter, t, dir, e)).collect();
                    order.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
                    rec.top_k = Some(
                        order
                            .into_iter()
                            .take(opts.top_k)
                            .map(|e| (label(EntityId(e)), scores[e as usize]))
                            .collect(),
                    );
                }
                rec
            })
        })
        .collect();
    let mut out = SystemOutput::new(SystemHeader::new(&opts.system_name, &opts.dataset_name, basis));
    out.records = records;
    Ok(out)
}

/// Union of the given splits, the usual filter for filtered ranking.
pub fn known_triples<'a>(sets: impl IntoIterator<Item = &'a TripleSet>) -> HashSet<Triple> {
    sets.into_iter().flat_map(|s| s.iter().copied()).collect()
}

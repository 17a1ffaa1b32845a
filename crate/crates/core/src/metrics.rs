//! Ranking metrics for link prediction: Hits@k, MRR and MR, plus rank
//! derivation from candidate scores.
//!
//! Ranks are carried as `f64` because the realistic tie strategy produces
//! half-integer ranks. Hits@k compares the real rank against `k`.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("cannot aggregate an empty rank list")]
    Empty,
    #[error("rank {0} is outside the domain [1, inf)")]
    RankDomain(f64),
    #[error("gold answer not among candidates")]
    MissingGold,
    #[error("unknown metric '{0}' (expected hits@K, mrr or mr)")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Hits(u32),
    Mrr,
    Mr,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mr)
    }

    /// Contribution of a single example with the given rank.
    pub fn per_example(self, rank: f64) -> f64 {
        match self {
            Metric::Hits(k) => {
                if rank <= k as f64 {
                    1.0
                } else {
                    0.0
                }
            }
            Metric::Mrr => 1.0 / rank,
            Metric::Mr => rank,
        }
    }

    /// Closed range of attainable values, used to clamp error bars.
    pub fn value_range(self) -> (f64, f64) {
        match self {
            Metric::Hits(_) | Metric::Mrr => (0.0, 1.0),
            Metric::Mr => (1.0, f64::INFINITY),
        }
    }

    /// `hits@1, hits@3, hits@10, mrr, mr`.
    pub fn defaults() -> Vec<Metric> {
        vec![Metric::Hits(1), Metric::Hits(3), Metric::Hits(10), Metric::Mrr, Metric::Mr]
    }

    /// Parses a comma-separated list such as `mrr,hits@10`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>, MetricError> {
        s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Hits(k) => write!(f, "hits@{k}"),
            Metric::Mrr => f.write_str("mrr"),
            Metric::Mr => f.write_str("mr"),
        }
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mrr" => Ok(Metric::Mrr),
            "mr" => Ok(Metric::Mr),
            _ => s
                .strip_prefix("hits@")
                .and_then(|k| k.parse::<u32>().ok())
                .filter(|&k| k > 0 && !s.contains('+'))
                .map(Metric::Hits)
                .ok_or_else(|| MetricError::UnknownMetric(s.to_owned())),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How candidates scoring exactly like the gold answer are ordered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieStrategy {
    /// Gold placed before every tied candidate.
    Optimistic,
    /// Gold placed after every tied candidate.
    Pessimistic,
    /// Mean of the optimistic and pessimistic ranks.
    #[default]
    Realistic,
}

impl FromStr for TieStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimistic" => Ok(TieStrategy::Optimistic),
            "pessimistic" => Ok(TieStrategy::Pessimistic),
            "realistic" => Ok(TieStrategy::Realistic),
            _ => Err(format!("unknown tie strategy '{s}'")),
        }
    }
}

pub fn validate_rank(rank: f64) -> Result<f64, MetricError> {
    if rank.is_finite() && rank >= 1.0 {
        Ok(rank)
    } else {
        Err(MetricError::RankDomain(rank))
    }
}

/// Arithmetic mean of the per-example metric values.
pub fn aggregate(metric: Metric, ranks: &[f64]) -> Result<f64, MetricError> {
    if ranks.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    for &r in ranks {
        sum += metric.per_example(validate_rank(r)?);
    }
    Ok(sum / ranks.len() as f64)
}

/// Rank given how many competitors score strictly above the gold answer and
/// how many (other than the gold) score exactly equal to it.
pub fn rank_from_counts(greater: usize, ties: usize, tie: TieStrategy) -> f64 {
    let optimistic = 1 + greater;
    let pessimistic = optimistic + ties;
    match tie {
        TieStrategy::Optimistic => optimistic as f64,
        TieStrategy::Pessimistic => pessimistic as f64,
        TieStrategy::Realistic => (optimistic + pessimistic) as f64 / 2.0,
    }
}

/// Rank of `gold` among `candidates` (which must contain it).
pub fn rank_from_scores<L: PartialEq>(gold: &L, candidates: &[(L, f64)], tie: TieStrategy) -> Result<f64, MetricError> {
    rank_with_filter(gold, candidates, |_| false, tie)
}

/// Rank of `gold` after discarding every candidate in `known_positives`
/// other than the gold answer itself.
pub fn filtered_rank<L: Eq + Hash>(
    gold: &L,
    candidates: &[(L, f64)],
    known_positives: &HashSet<L>,
    tie: TieStrategy,
) -> Result<f64, MetricError> {
    rank_with_filter(gold, candidates, |l| known_positives.contains(l), tie)
}

fn rank_with_filter<L: PartialEq>(
    gold: &L,
    candidates: &[(L, f64)],
    is_filtered: impl Fn(&L) -> bool,
    tie: TieStrategy,
) -> Result<f64, MetricError> {
    let gold_score = candidates
        .iter()
        .find(|(l, _)| l == gold)
        .map(|(_, s)| *s)
        .ok_or(MetricError::MissingGold)?;
    let mut greater = 0;
    let mut ties = 0;
    let mut gold_seen = false;
    for (label, score) in candidates {
        if label == gold {
            // Repeated gold entries past the first count as ties.
            if gold_seen {
                ties += 1;
            }
            gold_seen = true;
            continue;
        }
        if is_filtered(label) {
            continue;
        }
        if *score > gold_score {
            greater += 1;
        } else if *score == gold_score {
            ties += 1;
        }
    }
    Ok(rank_from_counts(greater, ties, tie))
}

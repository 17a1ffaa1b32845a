//! Single-system bucket reports and multi-system comparisons.
//!
//! Report JSON (`kind: "analysis"`):
//!
//! ```text
//! { "report_version": "1", "kind": "analysis",
//!   "system_name", "dataset_name", "rank_basis", "n_records", "record_digest",
//!   "metrics": ["hits@1", ...], "ci": {method, level, resamples, seed, min_bucket_size} | null,
//!   "overall": {"values": {metric: x}, "intervals": {metric: {"lo","hi"} | null}},
//!   "features": {feature: [{"feature","bucket","n","values","intervals","sample_ids"}]} }
//! ```
//!
//! Comparison JSON (`kind: "comparison"`) lists systems sorted by name, the
//! overall value and competition rank of each, one entry per bucket with
//! per-system values and ranks, and `b_eq`/`b_neq` per system.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bucketizer::{feature_labels, partition_indices, BucketError, FeatureSpec, Resources};
use crate::confidence::{metric_interval, CiConfig, CiError};
use crate::metrics::{aggregate, Metric, MetricError};
use crate::sysout::{ExampleRecord, RankBasis, SystemOutput};

pub const REPORT_VERSION: &str = "1";
/// Record ids kept per bucket for drill-down previews.
pub const SAMPLE_IDS: usize = 20;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("system output has no records")]
    Empty,
    #[error(transparent)]
    Bucket(#[from] BucketError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error("at least two reports are needed for a comparison")]
    TooFewReports,
    #[error("systems are not comparable: {0}")]
    Comparability(String),
    #[error("metric '{0}' is not present in every report")]
    MetricMissing(Metric),
    #[error("no bucket '{label}' for feature '{feature}'")]
    UnknownBucket { feature: String, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: BTreeMap<Metric, f64>,
    pub intervals: BTreeMap<Metric, Option<Interval>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub feature: String,
    pub bucket: String,
    pub n: usize,
    pub values: BTreeMap<Metric, f64>,
    pub intervals: BTreeMap<Metric, Option<Interval>>,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleAnalysisReport {
    pub report_version: String,
    pub kind: String,
    pub system_name: String,
    pub dataset_name: String,
    pub rank_basis: RankBasis,
    pub n_records: usize,
    pub record_digest: String,
    pub metrics: Vec<Metric>,
    pub ci: Option<CiConfig>,
    pub overall: MetricSummary,
    pub features: BTreeMap<String, Vec<BucketReport>>,
}

impl SingleAnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn bucket(&self, feature: &str, label: &str) -> Option<&BucketReport> {
        self.features.get(feature)?.iter().find(|b| b.bucket == label)
    }

    /// Largest gap between an overall value and the size-weighted mean of
    /// its bucket values, over all features and metrics.
    pub fn decomposition_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for buckets in self.features.values() {
            let n: usize = buckets.iter().map(|b| b.n).sum();
            for (metric, overall) in &self.overall.values {
                let weighted: f64 = buckets.iter().map(|b| b.n as f64 * b.values[metric]).sum::<f64>() / n as f64;
                worst = worst.max(((weighted - overall) / overall.abs().max(1.0)).abs());
            }
        }
        worst
    }
}

/// sha256 over the sorted record ids, one per line.
pub fn record_digest(s: &SystemOutput) -> String {
    let mut ids: Vec<&str> = s.records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn summarize(ranks: &[f64], metrics: &[Metric], ci: Option<&CiConfig>) -> Result<MetricSummary, AnalysisError> {
    let mut values = BTreeMap::new();
    let mut intervals = BTreeMap::new();
    for &m in metrics {
        let point = aggregate(m, ranks)?;
        values.insert(m, point);
        let interval = match ci {
            Some(cfg) => {
                let per_example: Vec<f64> = ranks.iter().map(|&r| m.per_example(r)).collect();
                metric_interval(m, &per_example, point, cfg)?.map(|(lo, hi)| Interval { lo, hi })
            }
            None => None,
        };
        intervals.insert(m, interval);
    }
    Ok(MetricSummary { values, intervals })
}

fn dedup_metrics(metrics: &[Metric]) -> Vec<Metric> {
    let mut seen = HashSet::new();
    metrics.iter().copied().filter(|m| seen.insert(*m)).collect()
}

/// Overall and per-bucket metrics for one system. `ci: None` skips
/// intervals entirely.
pub fn single_analysis(
    s: &SystemOutput,
    features: &[FeatureSpec],
    metrics: &[Metric],
    ci: Option<&CiConfig>,
    res: &Resources,
) -> Result<SingleAnalysisReport, AnalysisError> {
    if s.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if let Some(cfg) = ci {
        cfg.validate()?;
    }
    let metrics = dedup_metrics(metrics);
    let ranks = s.ranks();
    let overall = summarize(&ranks, &metrics, ci)?;
    let unique: BTreeSet<&FeatureSpec> = features.iter().collect();
    let per_feature: Vec<(String, Vec<BucketReport>)> = unique
        .into_par_iter()
        .map(|feature| {
            let (spec, labels) = feature_labels(s, feature, res)?;
            let groups = partition_indices(&labels);
            let buckets = spec
                .labels
                .par_iter()
                .filter_map(|label| groups.get(label.as_str()).map(|idx| (label, idx)))
                .map(|(label, idx)| {
                    let bucket_ranks: Vec<f64> = idx.iter().map(|&i| ranks[i]).collect();
                    let MetricSummary { values, intervals } = summarize(&bucket_ranks, &metrics, ci)?;
                    Ok(BucketReport {
                        feature: feature.name().to_owned(),
                        bucket: label.clone(),
                        n: idx.len(),
                        values,
                        intervals,
                        sample_ids: idx.iter().take(SAMPLE_IDS).map(|&i| s.records[i].id.clone()).collect(),
                    })
                })
                .collect::<Result<Vec<_>, AnalysisError>>()?;
            Ok((feature.name().to_owned(), buckets))
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok(SingleAnalysisReport {
        report_version: REPORT_VERSION.to_owned(),
        kind: "analysis".to_owned(),
        system_name: s.header.system_name.clone(),
        dataset_name: s.header.dataset_name.clone(),
        rank_basis: s.header.rank_basis,
        n_records: s.len(),
        record_digest: record_digest(s),
        metrics,
        ci: ci.copied(),
        overall,
        features: per_feature.into_iter().collect(),
    })
}

/// One page of a bucket's records.
#[derive(Debug, Clone, PartialEq)]
pub struct DrillPage<'a> {
    /// Size of the whole bucket.
    pub total: usize,
    pub records: Vec<&'a ExampleRecord>,
}

/// Records of one bucket, ordered by record id, paged.
pub fn drill_down<'a>(
    s: &'a SystemOutput,
    feature: &FeatureSpec,
    label: &str,
    offset: usize,
    limit: usize,
    res: &Resources,
) -> Result<DrillPage<'a>, AnalysisError> {
    let (_, labels) = feature_labels(s, feature, res)?;
    let mut members: Vec<&ExampleRecord> = s.records.iter().zip(&labels).filter(|(_, l)| *l == label).map(|(r, _)| r).collect();
    if members.is_empty() {
        return Err(AnalysisError::UnknownBucket {
            feature: feature.name().to_owned(),
            label: label.to_owned(),
        });
    }
    members.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DrillPage {
        total: members.len(),
        records: members.into_iter().skip(offset).take(limit).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub b_eq: f64,
    pub b_neq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRanking {
    pub feature: String,
    pub bucket: String,
    pub values: BTreeMap<String, f64>,
    pub ranking: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub report_version: String,
    pub kind: String,
    pub dataset_name: String,
    pub rank_basis: RankBasis,
    pub systems: Vec<String>,
    pub metric: Metric,
    pub overall: BTreeMap<String, f64>,
    pub overall_ranking: BTreeMap<String, usize>,
    pub buckets: Vec<BucketRanking>,
    pub per_system: BTreeMap<String, Consistency>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Buckets where at least one system's rank differs from its overall rank.
    pub fn flips(&self) -> Vec<&BucketRanking> {
        self.buckets
            .iter()
            .filter(|b| b.ranking.iter().any(|(sys, r)| self.overall_ranking[sys] != *r))
            .collect()
    }
}

/// Competition ranking (1, 1, 3): one plus the number of strictly better
/// systems.
pub fn competition_ranks(values: &BTreeMap<String, f64>, metric: Metric) -> BTreeMap<String, usize> {
    let better = |a: f64, b: f64| if metric.higher_is_better() { a > b } else { a < b };
    values
        .iter()
        .map(|(sys, &v)| (sys.clone(), 1 + values.values().filter(|&&o| better(o, v)).count()))
        .collect()
}

fn inventory(r: &SingleAnalysisReport) -> BTreeMap<&str, Vec<&str>> {
    r.features
        .iter()
        .map(|(f, buckets)| {
            let mut labels: Vec<&str> = buckets.iter().map(|b| b.bucket.as_str()).collect();
            labels.sort_unstable();
            (f.as_str(), labels)
        })
        .collect()
}

fn check_comparable(reports: &[&SingleAnalysisReport], metric: Metric) -> Result<(), AnalysisError> {
    let first = reports[0];
    for r in reports {
        if !r.overall.values.contains_key(&metric) {
            return Err(AnalysisError::MetricMissing(metric));
        }
    }
    for r in &reports[1..] {
        let who = &r.system_name;
        if r.dataset_name != first.dataset_name {
            return Err(AnalysisError::Comparability(format!(
                "dataset '{}' of {who} differs from '{}'",
                r.dataset_name, first.dataset_name
            )));
        }
        if r.rank_basis != first.rank_basis {
            return Err(AnalysisError::Comparability(format!("rank basis of {who} differs")));
        }
        if r.record_digest != first.record_digest || r.n_records != first.n_records {
            return Err(AnalysisError::Comparability(format!("record ids of {who} differ")));
        }
        if inventory(r) != inventory(first) {
            return Err(AnalysisError::Comparability(format!("feature or bucket inventory of {who} differs")));
        }
    }
    Ok(())
}

/// Names used as keys in a comparison. Repeated system names get a `#k`
/// suffix in sorted order.
fn system_labels(sorted: &[&SingleAnalysisReport]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in sorted {
        *counts.entry(r.system_name.as_str()).or_insert(0) += 1;
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    sorted
        .iter()
        .map(|r| {
            let name = r.system_name.as_str();
            if counts[name] == 1 {
                return name.to_owned();
            }
            let k = seen.entry(name).or_insert(0);
            *k += 1;
            format!("{name}#{k}")
        })
        .collect()
}

/// Ranks systems overall and in every bucket. `b_eq` is the fraction of
/// buckets (over all features) whose competition rank equals the overall
/// rank; with no buckets it is 1.
pub fn compare_systems(reports: &[SingleAnalysisReport], metric: Metric) -> Result<ComparisonReport, AnalysisError> {
    if reports.len() < 2 {
        return Err(AnalysisError::TooFewReports);
    }
    let mut sorted: Vec<(&SingleAnalysisReport, String)> = reports.iter().map(|r| (r, r.to_json())).collect();
    sorted.sort_by(|a, b| (&a.0.system_name, &a.1).cmp(&(&b.0.system_name, &b.1)));
    let sorted: Vec<&SingleAnalysisReport> = sorted.into_iter().map(|(r, _)| r).collect();
    check_comparable(&sorted, metric)?;
    let names = system_labels(&sorted);

    let overall: BTreeMap<String, f64> = sorted.iter().zip(&names).map(|(r, n)| (n.clone(), r.overall.values[&metric])).collect();
    let overall_ranking = competition_ranks(&overall, metric);

    let mut buckets = Vec::new();
    for (feature, labels) in inventory(sorted[0]) {
        for label in labels {
            let values: BTreeMap<String, f64> = sorted
                .iter()
                .zip(&names)
                .map(|(r, n)| {
                    let b = r.bucket(feature, label).expect("inventory checked");
                    (n.clone(), b.values[&metric])
                })
                .collect();
            let ranking = competition_ranks(&values, metric);
            buckets.push(BucketRanking {
                feature: feature.to_owned(),
                bucket: label.to_owned(),
                values,
                ranking,
            });
        }
    }

    let per_system = overall_ranking
        .iter()
        .map(|(sys, &rank)| {
            let b_eq = if buckets.is_empty() {
                1.0
            } else {
                buckets.iter().filter(|b| b.ranking[sys] == rank).count() as f64 / buckets.len() as f64
            };
            (sys.clone(), Consistency { b_eq, b_neq: 1.0 - b_eq })
        })
        .collect();

    Ok(ComparisonReport {
        report_version: REPORT_VERSION.to_owned(),
        kind: "comparison".to_owned(),
        dataset_name: sorted[0].dataset_name.clone(),
        rank_basis: sorted[0].rank_basis,
        systems: names,
        metric,
        overall,
        overall_ranking,
        buckets,
        per_system,
    })
}

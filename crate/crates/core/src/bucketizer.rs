//! Assigns every record of a system output to exactly one bucket per feature.
//!
//! Features are either built in (computed from the record itself plus
//! optional resources: training statistics, a symmetric-relation list, an
//! entity type map) or custom (values carried in the records and declared
//! in the header).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{GraphStats, Vocabulary};
use crate::sysout::{format_number, Dtype, ExampleRecord, FeatureDef, FeatureValue, SysoutError, SystemOutput};

pub const UNKNOWN: &str = "UNKNOWN";
pub const OTHER: &str = "OTHER";
/// Interval count used for the frequency built-ins.
pub const FREQUENCY_BUCKETS: usize = 4;

#[derive(Debug, Error)]
pub enum BucketError {
    #[error("feature '{feature}' needs {resource}, which was not provided")]
    MissingResource { feature: String, resource: &'static str },
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("record '{0}' has no bucket assignment")]
    Unassigned(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Sysout(#[from] SysoutError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinKind {
    HeadLength,
    TailLength,
    HeadFrequency,
    TailFrequency,
    RelationFrequency,
    RelationSymmetry,
    EntityTypeLevel,
    RelationLabel,
    RelationCardinality,
    TailTypeLevel1,
    TailTypeLevel2,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 11] = [
        BuiltinKind::HeadLength,
        BuiltinKind::TailLength,
        BuiltinKind::HeadFrequency,
        BuiltinKind::TailFrequency,
        BuiltinKind::RelationFrequency,
        BuiltinKind::RelationSymmetry,
        BuiltinKind::EntityTypeLevel,
        BuiltinKind::RelationLabel,
        BuiltinKind::RelationCardinality,
        BuiltinKind::TailTypeLevel1,
        BuiltinKind::TailTypeLevel2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinKind::HeadLength => "head-length",
            BuiltinKind::TailLength => "tail-length",
            BuiltinKind::HeadFrequency => "head-frequency",
            BuiltinKind::TailFrequency => "tail-frequency",
            BuiltinKind::RelationFrequency => "relation-frequency",
            BuiltinKind::RelationSymmetry => "relation-symmetry",
            BuiltinKind::EntityTypeLevel => "entity-type-level",
            BuiltinKind::RelationLabel => "relation-label",
            BuiltinKind::RelationCardinality => "relation-cardinality",
            BuiltinKind::TailTypeLevel1 => "tail-type-level-1",
            BuiltinKind::TailTypeLevel2 => "tail-type-level-2",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            BuiltinKind::HeadLength => "number of whitespace tokens in the head entity",
            BuiltinKind::TailLength => "number of whitespace tokens in the tail entity",
            BuiltinKind::HeadFrequency => "frequency of the head entity in the training set",
            BuiltinKind::TailFrequency => "frequency of the tail entity in the training set",
            BuiltinKind::RelationFrequency => "frequency of the relation in the training set",
            BuiltinKind::RelationSymmetry => "relation symmetry",
            BuiltinKind::EntityTypeLevel => "most specific type level of the gold entity",
            BuiltinKind::RelationLabel => "relation",
            BuiltinKind::RelationCardinality => "relation type 1-1, 1-M, M-1 or M-M",
            BuiltinKind::TailTypeLevel1 => "level-1 type of the gold entity",
            BuiltinKind::TailTypeLevel2 => "level-2 type of the gold entity",
        }
    }

    fn needs(self) -> Option<&'static str> {
        match self {
            BuiltinKind::HeadFrequency
            | BuiltinKind::TailFrequency
            | BuiltinKind::RelationFrequency
            | BuiltinKind::RelationCardinality => Some("training statistics"),
            BuiltinKind::RelationSymmetry => Some("a symmetric-relation list"),
            BuiltinKind::EntityTypeLevel | BuiltinKind::TailTypeLevel1 | BuiltinKind::TailTypeLevel2 => Some("a type map"),
            BuiltinKind::HeadLength | BuiltinKind::TailLength | BuiltinKind::RelationLabel => None,
        }
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinKind {
    type Err = BucketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BucketError::UnknownFeature(s.to_owned()))
    }
}

/// Training vocabulary plus its statistics.
#[derive(Debug, Clone)]
pub struct TrainingGraph {
    pub vocab: Vocabulary,
    pub stats: GraphStats,
}

/// Entity → type path, ordered from general to specific.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeMap(pub HashMap<String, Vec<String>>);

impl TypeMap {
    /// Reads `entity\tlevel-1\tlevel-2\t...` lines.
    pub fn load<R: BufRead>(source: R) -> Result<Self, BucketError> {
        let mut map = HashMap::new();
        for (idx, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let entity = fields.next().unwrap_or_default();
            let levels: Vec<String> = fields.filter(|f| !f.is_empty()).map(str::to_owned).collect();
            if entity.is_empty() || levels.is_empty() {
                return Err(BucketError::Parse {
                    line: idx + 1,
                    message: "expected an entity followed by at least one type level".into(),
                });
            }
            map.insert(entity.to_owned(), levels);
        }
        Ok(TypeMap(map))
    }

    pub fn levels(&self, entity: &str) -> Option<&[String]> {
        self.0.get(entity).map(Vec::as_slice)
    }
}

/// Reads a symmetric-relation list, one relation label per line.
pub fn load_symmetric_relations<R: BufRead>(source: R) -> Result<BTreeSet<String>, BucketError> {
    let mut out = BTreeSet::new();
    for line in source.lines() {
        let line = line?;
        let label = line.trim_end_matches(['\r', '\n']);
        if !label.trim().is_empty() {
            out.insert(label.to_owned());
        }
    }
    Ok(out)
}

/// Optional inputs for the built-in features.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub graph: Option<TrainingGraph>,
    pub symmetric: Option<BTreeSet<String>>,
    pub type_map: Option<TypeMap>,
}

impl Resources {
    pub fn has(&self, kind: BuiltinKind) -> bool {
        match kind.needs() {
            None => true,
            Some("training statistics") => self.graph.is_some(),
            Some("a symmetric-relation list") => self.symmetric.is_some(),
            Some(_) => self.type_map.is_some(),
        }
    }
}

/// Built-ins whose resources are loaded, then the header's custom features.
pub fn available_features(s: &SystemOutput, res: &Resources) -> Vec<FeatureSpec> {
    BuiltinKind::ALL
        .into_iter()
        .filter(|k| res.has(*k))
        .map(FeatureSpec::Builtin)
        .chain(s.header.custom_features.keys().map(|k| FeatureSpec::Custom(k.clone())))
        .collect()
}

/// A feature named on the command line or in an API query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureSpec {
    Builtin(BuiltinKind),
    Custom(String),
}

impl FeatureSpec {
    /// Built-in names take precedence; anything else refers to a header
    /// custom feature.
    pub fn parse(name: &str) -> FeatureSpec {
        match name.parse::<BuiltinKind>() {
            Ok(kind) => FeatureSpec::Builtin(kind),
            Err(_) => FeatureSpec::Custom(name.to_owned()),
        }
    }

    pub fn parse_list(list: &str) -> Vec<FeatureSpec> {
        list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(FeatureSpec::parse).collect()
    }

    pub fn name(&self) -> &str {
        match self {
            FeatureSpec::Builtin(k) => k.name(),
            FeatureSpec::Custom(n) => n,
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub feature: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<f64>>,
}

impl BucketSpec {
    /// Bucket index of `x` for an interval spec; values outside the range
    /// clamp to the first or last interval.
    pub fn interval_of(&self, x: f64) -> Option<usize> {
        let edges = self.boundaries.as_ref()?;
        let n_buckets = self.labels.len();
        let idx = edges[..n_buckets].iter().rposition(|&e| e <= x).unwrap_or(0);
        Some(idx.min(n_buckets - 1))
    }
}

/// Record id → bucket label for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketAssignment {
    pub feature: String,
    pub labels: HashMap<String, String>,
}

fn interval_label(lo: f64, hi: f64, closed: bool) -> String {
    format!("[{}, {}{}", format_number(lo), format_number(hi), if closed { "]" } else { ")" })
}

/// Equal-mass interval buckets with edges at the empirical quantiles `i/n`
/// (lower order statistic). Intervals are left-closed and right-open except
/// the last, which is closed. Repeated edges merge, so fewer than `n`
/// buckets may come back.
pub fn bucketize_continuous(feature: &str, values: &[f64], num_buckets: usize) -> BucketSpec {
    assert!(num_buckets >= 1, "num_buckets must be positive");
    assert!(!values.is_empty(), "values must be nonempty");
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];
    if min == max {
        return BucketSpec {
            feature: feature.to_owned(),
            labels: vec![interval_label(min, max, true)],
            boundaries: Some(vec![min, max]),
        };
    }
    let mut edges = vec![min];
    for i in 1..num_buckets {
        let e = sorted[((i * n) / num_buckets).min(n - 1)];
        if e > *edges.last().expect("nonempty") && e < max {
            edges.push(e);
        }
    }
    edges.push(max);
    let k = edges.len() - 1;
    let labels = (0..k).map(|j| interval_label(edges[j], edges[j + 1], j == k - 1)).collect();
    BucketSpec {
        feature: feature.to_owned(),
        labels,
        boundaries: Some(edges),
    }
}

fn token_count(label: &str) -> usize {
    label.split_whitespace().count()
}

/// Orders labels numerically when all are numbers, otherwise
/// lexicographically; `UNKNOWN` and `OTHER` go last.
fn ordered_labels(labels: impl IntoIterator<Item = String>) -> Vec<String> {
    let set: BTreeSet<String> = labels.into_iter().collect();
    let (special, mut plain): (Vec<String>, Vec<String>) = set.into_iter().partition(|l| l == UNKNOWN || l == OTHER);
    let numeric: Option<Vec<f64>> = plain.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        plain.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    let mut special = special;
    special.sort_by_key(|l| if l == OTHER { 0 } else { 1 });
    plain.extend(special);
    plain
}

/// Keeps the `cap - 1` most frequent labels (ties broken by label) and
/// folds the rest into `OTHER` when there are more than `cap` distinct labels.
fn collapse_rare(labels: &mut [String], cap: usize) {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for l in labels.iter() {
        *counts.entry(l.as_str()).or_insert(0) += 1;
    }
    if counts.len() <= cap {
        return;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let keep: BTreeSet<String> = ranked.iter().take(cap.saturating_sub(1)).map(|(l, _)| (*l).to_owned()).collect();
    for l in labels.iter_mut() {
        if !keep.contains(l.as_str()) {
            *l = OTHER.to_owned();
        }
    }
}

fn discrete(feature: &str, labels: Vec<String>) -> (BucketSpec, Vec<String>) {
    let spec = BucketSpec {
        feature: feature.to_owned(),
        labels: ordered_labels(labels.iter().cloned()),
        boundaries: None,
    };
    (spec, labels)
}

/// Interval bucketing over optional values; `None` maps to `UNKNOWN`.
fn continuous(feature: &str, values: &[Option<f64>], num_buckets: usize) -> (BucketSpec, Vec<String>) {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return discrete(feature, vec![UNKNOWN.to_owned(); values.len()]);
    }
    let mut spec = bucketize_continuous(feature, &present, num_buckets);
    let labels: Vec<String> = values
        .iter()
        .map(|v| match v {
            Some(x) => spec.labels[spec.interval_of(*x).expect("interval spec")].clone(),
            None => UNKNOWN.to_owned(),
        })
        .collect();
    if values.iter().any(Option::is_none) {
        spec.labels.push(UNKNOWN.to_owned());
    }
    (spec, labels)
}

fn built_in_values(records: &[ExampleRecord], kind: BuiltinKind, res: &Resources) -> Result<BuiltinValues, BucketError> {
    if !res.has(kind) {
        return Err(BucketError::MissingResource {
            feature: kind.name().to_owned(),
            resource: kind.needs().unwrap_or("nothing"),
        });
    }
    let graph = || res.graph.as_ref().expect("checked");
    let types = || res.type_map.as_ref().expect("checked");
    let entity_freq = |label: &str| {
        let g = graph();
        g.vocab.entity_id(label).map_or(0, |id| g.stats.entity_frequency(id)) as f64
    };
    Ok(match kind {
        BuiltinKind::HeadLength => BuiltinValues::Numbers(records.iter().map(|r| token_count(&r.head) as f64).collect()),
        BuiltinKind::TailLength => BuiltinValues::Numbers(records.iter().map(|r| token_count(&r.tail) as f64).collect()),
        BuiltinKind::HeadFrequency => BuiltinValues::Continuous(records.iter().map(|r| entity_freq(&r.head)).collect()),
        BuiltinKind::TailFrequency => BuiltinValues::Continuous(records.iter().map(|r| entity_freq(&r.tail)).collect()),
        BuiltinKind::RelationFrequency => BuiltinValues::Continuous(
            records
                .iter()
                .map(|r| {
                    let g = graph();
                    g.vocab.relation_id(&r.relation).map_or(0, |id| g.stats.relation_frequency(id)) as f64
                })
                .collect(),
        ),
        BuiltinKind::RelationSymmetry => {
            let sym = res.symmetric.as_ref().expect("checked");
            BuiltinValues::Labels(
                records
                    .iter()
                    .map(|r| if sym.contains(&r.relation) { "symmetric" } else { "asymmetric" }.to_owned())
                    .collect(),
            )
        }
        BuiltinKind::RelationLabel => BuiltinValues::Labels(records.iter().map(|r| r.relation.clone()).collect()),
        BuiltinKind::RelationCardinality => {
            let g = graph();
            BuiltinValues::Labels(
                records
                    .iter()
                    .map(|r| {
                        g.vocab
                            .relation_id(&r.relation)
                            .and_then(|id| g.stats.cardinality(id).ok())
                            .map_or_else(|| UNKNOWN.to_owned(), |c| c.label().to_owned())
                    })
                    .collect(),
            )
        }
        BuiltinKind::EntityTypeLevel => BuiltinValues::Labels(
            records
                .iter()
                .map(|r| types().levels(r.gold_entity()).map_or_else(|| UNKNOWN.to_owned(), |l| l.len().to_string()))
                .collect(),
        ),
        BuiltinKind::TailTypeLevel1 | BuiltinKind::TailTypeLevel2 => {
            let level = if kind == BuiltinKind::TailTypeLevel1 { 0 } else { 1 };
            BuiltinValues::Labels(
                records
                    .iter()
                    .map(|r| {
                        types()
                            .levels(r.gold_entity())
                            .and_then(|l| l.get(level))
                            .cloned()
                            .unwrap_or_else(|| UNKNOWN.to_owned())
                    })
                    .collect(),
            )
        }
    })
}

enum BuiltinValues {
    Labels(Vec<String>),
    Numbers(Vec<f64>),
    Continuous(Vec<f64>),
}

/// Labels for a built-in feature, index-aligned with `records`.
pub fn builtin_labels(records: &[ExampleRecord], kind: BuiltinKind, res: &Resources) -> Result<(BucketSpec, Vec<String>), BucketError> {
    let name = kind.name();
    Ok(match built_in_values(records, kind, res)? {
        BuiltinValues::Labels(l) => discrete(name, l),
        BuiltinValues::Numbers(v) => discrete(name, v.into_iter().map(format_number).collect()),
        BuiltinValues::Continuous(v) => {
            let v: Vec<Option<f64>> = v.into_iter().map(Some).collect();
            continuous(name, &v, FREQUENCY_BUCKETS)
        }
    })
}

/// Labels for a custom feature declared in the header, index-aligned with
/// the records. Records lacking a value land in `UNKNOWN`.
pub fn custom_labels(s: &SystemOutput, def: &FeatureDef) -> (BucketSpec, Vec<String>) {
    match def.dtype {
        Dtype::String | Dtype::Number => {
            let mut labels: Vec<String> = s
                .records
                .iter()
                .map(|r| r.features.get(&def.name).map_or_else(|| UNKNOWN.to_owned(), FeatureValue::label))
                .collect();
            collapse_rare(&mut labels, def.num_buckets as usize);
            discrete(&def.name, labels)
        }
        Dtype::Continuous => {
            let values: Vec<Option<f64>> = s
                .records
                .iter()
                .map(|r| r.features.get(&def.name).and_then(FeatureValue::as_number))
                .collect();
            continuous(&def.name, &values, def.num_buckets as usize)
        }
    }
}

/// Labels for any feature spec, index-aligned with the records.
pub fn feature_labels(s: &SystemOutput, feature: &FeatureSpec, res: &Resources) -> Result<(BucketSpec, Vec<String>), BucketError> {
    match feature {
        FeatureSpec::Builtin(kind) => builtin_labels(&s.records, *kind, res),
        FeatureSpec::Custom(name) => {
            let def = s
                .header
                .custom_features
                .get(name)
                .ok_or_else(|| BucketError::UnknownFeature(name.clone()))?;
            Ok(custom_labels(s, def))
        }
    }
}

fn to_assignment(s: &SystemOutput, feature: &str, labels: Vec<String>) -> BucketAssignment {
    BucketAssignment {
        feature: feature.to_owned(),
        labels: s.records.iter().map(|r| r.id.clone()).zip(labels).collect(),
    }
}

pub fn assign_builtin(s: &SystemOutput, kind: BuiltinKind, res: &Resources) -> Result<(BucketSpec, BucketAssignment), BucketError> {
    let (spec, labels) = builtin_labels(&s.records, kind, res)?;
    Ok((spec, to_assignment(s, kind.name(), labels)))
}

pub fn assign(s: &SystemOutput, feature: &FeatureSpec, res: &Resources) -> Result<(BucketSpec, BucketAssignment), BucketError> {
    let (spec, labels) = feature_labels(s, feature, res)?;
    Ok((spec, to_assignment(s, feature.name(), labels)))
}

/// Groups record ids by bucket label, preserving record order within each
/// group.
pub fn partition(s: &SystemOutput, assignment: &BucketAssignment) -> Result<BTreeMap<String, Vec<String>>, BucketError> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rec in &s.records {
        let label = assignment
            .labels
            .get(&rec.id)
            .ok_or_else(|| BucketError::Unassigned(rec.id.clone()))?;
        groups.entry(label.clone()).or_default().push(rec.id.clone());
    }
    Ok(groups)
}

/// Index-based partition used by the analysis code.
pub fn partition_indices(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    groups
}

/// Writes a built-in feature into the records as a custom feature, so the
/// output can be analysed later without the resources.
pub fn bake_builtin(s: SystemOutput, kind: BuiltinKind, res: &Resources) -> Result<SystemOutput, BucketError> {
    let values = built_in_values(&s.records, kind, res)?;
    let (dtype, num_buckets, values): (Dtype, u32, Vec<FeatureValue>) = match values {
        BuiltinValues::Labels(l) => {
            let distinct = l.iter().collect::<BTreeSet<_>>().len().max(1) as u32;
            (Dtype::String, distinct, l.into_iter().map(FeatureValue::Text).collect())
        }
        BuiltinValues::Numbers(v) => {
            let distinct = v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len().max(1) as u32;
            (Dtype::Number, distinct, v.into_iter().map(FeatureValue::Number).collect())
        }
        BuiltinValues::Continuous(v) => (Dtype::Continuous, FREQUENCY_BUCKETS as u32, v.into_iter().map(FeatureValue::Number).collect()),
    };
    let by_id: HashMap<String, FeatureValue> = s.records.iter().map(|r| r.id.clone()).zip(values).collect();
    let def = FeatureDef::new(kind.name(), dtype, kind.description(), num_buckets);
    Ok(s.apply_bucketization_function(def, |r| by_id[&r.id].clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_tsv, Split};
    use crate::sysout::{Direction, RankBasis, SystemHeader};
    use proptest::prelude::*;

    fn output(rows: &[(&str, &str, &str)]) -> SystemOutput {
        let mut s = SystemOutput::new(SystemHeader::new("s", "d", RankBasis::Filtered));
        for (i, (h, r, t)) in rows.iter().enumerate() {
            s.records.push(ExampleRecord::new(i.to_string(), *h, *r, *t, Direction::TailQuery, 1.0));
        }
        s
    }

    #[test]
    fn symmetry_from_list() {
        let s = output(&[("x", "marriedTo", "y"), ("x", "bornIn", "z")]);
        let res = Resources {
            symmetric: Some(["marriedTo".to_owned()].into_iter().collect()),
            ..Resources::default()
        };
        let (spec, a) = assign_builtin(&s, BuiltinKind::RelationSymmetry, &res).unwrap();
        assert_eq!(a.labels["0"], "symmetric");
        assert_eq!(a.labels["1"], "asymmetric");
        assert_eq!(spec.labels, vec!["asymmetric", "symmetric"]);
    }

    #[test]
    fn head_length_tokens() {
        let s = output(&[("Los Angeles", "contains", "Beverly Hills"), ("England", "contains", "Lancaster")]);
        let (spec, a) = assign_builtin(&s, BuiltinKind::HeadLength, &Resources::default()).unwrap();
        assert_eq!(a.labels["0"], "2");
        assert_eq!(a.labels["1"], "1");
        assert_eq!(spec.labels, vec!["1", "2"]);
    }

    #[test]
    fn missing_resources() {
        let s = output(&[("a", "r", "b")]);
        for kind in [BuiltinKind::TailFrequency, BuiltinKind::RelationSymmetry, BuiltinKind::TailTypeLevel1, BuiltinKind::RelationCardinality] {
            assert!(matches!(
                assign_builtin(&s, kind, &Resources::default()),
                Err(BucketError::MissingResource { .. })
            ));
        }
    }

    #[test]
    fn type_levels_and_unknowns() {
        let tm = TypeMap::load("Barack Obama\tAgent\tPerson\tPolitician\nParis\tPlace\n".as_bytes()).unwrap();
        let res = Resources {
            type_map: Some(tm),
            ..Resources::default()
        };
        let s = output(&[("x", "r", "Barack Obama"), ("x", "r", "Paris"), ("x", "r", "Nowhere")]);
        let (_, a) = assign_builtin(&s, BuiltinKind::EntityTypeLevel, &res).unwrap();
        assert_eq!((a.labels["0"].as_str(), a.labels["1"].as_str(), a.labels["2"].as_str()), ("3", "1", UNKNOWN));
        let (_, l1) = assign_builtin(&s, BuiltinKind::TailTypeLevel1, &res).unwrap();
        assert_eq!(l1.labels["0"], "Agent");
        let (_, l2) = assign_builtin(&s, BuiltinKind::TailTypeLevel2, &res).unwrap();
        assert_eq!((l2.labels["0"].as_str(), l2.labels["1"].as_str()), ("Person", UNKNOWN));
        assert!(TypeMap::load("lonely\n".as_bytes()).is_err());
    }

    #[test]
    fn cardinality_feature() {
        let mut vocab = Vocabulary::new();
        let train = load_tsv("a\tr\tb\na\tr\tc\na\tr\td\ne\tr\tb\nx\ts\ty\n".as_bytes(), Split::Train, &mut vocab).unwrap().set;
        let stats = GraphStats::compute(&train, &vocab).unwrap();
        let res = Resources {
            graph: Some(TrainingGraph { vocab, stats }),
            ..Resources::default()
        };
        let s = output(&[("a", "r", "q"), ("x", "s", "z"), ("x", "unseen", "z")]);
        let (_, a) = assign_builtin(&s, BuiltinKind::RelationCardinality, &res).unwrap();
        assert_eq!(a.labels["0"], "1-M");
        assert_eq!(a.labels["1"], "1-1");
        assert_eq!(a.labels["2"], UNKNOWN);
    }

    #[test]
    fn continuous_examples() {
        let v: Vec<f64> = (1..=6).map(f64::from).collect();
        let spec = bucketize_continuous("f", &v, 3);
        assert_eq!(spec.labels, vec!["[1, 3)", "[3, 5)", "[5, 6]"]);
        assert_eq!(spec.boundaries, Some(vec![1.0, 3.0, 5.0, 6.0]));

        let same = bucketize_continuous("f", &[2.5; 7], 4);
        assert_eq!(same.labels, vec!["[2.5, 2.5]"]);

        let one = bucketize_continuous("f", &[3.0, 1.0, 9.0], 1);
        assert_eq!(one.labels, vec!["[1, 9]"]);
        for x in [1.0, 3.0, 9.0, 100.0, -4.0] {
            assert_eq!(one.interval_of(x), Some(0));
        }
        assert_eq!(spec.interval_of(2.99), Some(0));
        assert_eq!(spec.interval_of(3.0), Some(1));
        assert_eq!(spec.interval_of(5.0), Some(2));
        assert_eq!(spec.interval_of(6.0), Some(2));
    }

    /// Count-then-quantile oracle written independently of the library path.
    fn oracle_tail_frequency(train: &[(String, String, String)], tails: &[String], n: usize) -> Vec<String> {
        let count = |e: &str| train.iter().filter(|(h, _, _)| h == e).count() + train.iter().filter(|(_, _, t)| t == e).count();
        let values: Vec<f64> = tails.iter().map(|t| count(t) as f64).collect();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = sorted[0];
        let hi = *sorted.last().unwrap();
        let mut edges = vec![lo];
        for i in 1..n {
            let q = sorted[(i * sorted.len() / n).min(sorted.len() - 1)];
            if q > *edges.last().unwrap() && q < hi {
                edges.push(q);
            }
        }
        edges.push(hi);
        values
            .iter()
            .map(|&v| {
                let mut j = 0;
                while j + 2 < edges.len() && v >= edges[j + 1] {
                    j += 1;
                }
                let last = j + 2 == edges.len();
                format!("[{}, {}{}", edges[j], edges[j + 1], if last { "]" } else { ")" })
            })
            .collect()
    }

    #[test]
    fn tail_frequency_matches_oracle() {
        let mut train_rows = Vec::new();
        let mut text = String::new();
        for i in 0..300u32 {
            let h = format!("e{}", (i * 13) % 40);
            let t = format!("e{}", (i * i) % 37);
            text.push_str(&format!("{h}\tr{}\t{t}\n", i % 3));
            train_rows.push((h, format!("r{}", i % 3), t));
        }
        let mut vocab = Vocabulary::new();
        let loaded = load_tsv(text.as_bytes(), Split::Train, &mut vocab).unwrap();
        // keep the oracle on the deduplicated rows, as the loader does
        let mut seen = std::collections::HashSet::new();
        train_rows.retain(|r| seen.insert(r.clone()));
        let stats = GraphStats::compute(&loaded.set, &vocab).unwrap();
        let res = Resources {
            graph: Some(TrainingGraph { vocab, stats }),
            ..Resources::default()
        };
        let rows: Vec<(String, String, String)> = (0..120).map(|i| ("q".into(), "r0".into(), format!("e{}", (i * 7) % 45))).collect();
        let refs: Vec<(&str, &str, &str)> = rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect();
        let s = output(&refs);
        let (_, labels) = builtin_labels(&s.records, BuiltinKind::TailFrequency, &res).unwrap();
        let tails: Vec<String> = rows.iter().map(|r| r.2.clone()).collect();
        assert_eq!(labels, oracle_tail_frequency(&train_rows, &tails, FREQUENCY_BUCKETS));
    }

    #[test]
    fn string_cap_collapses_rare_labels() {
        let mut s = output(&[("a", "r", "b"); 7]);
        let values = ["x", "x", "x", "y", "y", "z", "w"];
        let def = FeatureDef::new("c", Dtype::String, "", 3);
        s = s
            .apply_bucketization_function(def.clone(), |r| FeatureValue::text(values[r.id.parse::<usize>().unwrap()]))
            .unwrap();
        let (spec, labels) = custom_labels(&s, &def);
        assert_eq!(spec.labels, vec!["x", "y", OTHER]);
        assert_eq!(labels, vec!["x", "x", "x", "y", "y", OTHER, OTHER]);
    }

    #[test]
    fn bake_then_custom_matches_builtin() {
        let s = output(&[("Los Angeles", "r1", "b"), ("England", "r2", "c d"), ("a b c", "r1", "e")]);
        let res = Resources {
            symmetric: Some(["r1".to_owned()].into_iter().collect()),
            ..Resources::default()
        };
        for kind in [BuiltinKind::HeadLength, BuiltinKind::RelationSymmetry, BuiltinKind::RelationLabel] {
            let baked = bake_builtin(s.clone(), kind, &res).unwrap();
            let (_, direct) = builtin_labels(&s.records, kind, &res).unwrap();
            let (_, custom) = feature_labels(&baked, &FeatureSpec::Custom(kind.name().into()), &res).unwrap();
            assert_eq!(direct, custom);
            baked.validate().unwrap();
        }
    }

    #[test]
    fn partition_examples() {
        let s = output(&[("a", "r", "b"); 4]);
        let a = BucketAssignment {
            feature: "f".into(),
            labels: [("0", "x"), ("1", "y"), ("2", "x"), ("3", "y")]
                .into_iter()
                .map(|(a, b)| (a.to_owned(), b.to_owned()))
                .collect(),
        };
        let groups = partition(&s, &a).unwrap();
        assert_eq!(groups["x"], vec!["0", "2"]);
        assert_eq!(groups["y"], vec!["1", "3"]);

        let single = BucketAssignment {
            feature: "f".into(),
            labels: (0..4).map(|i| (i.to_string(), "all".to_owned())).collect(),
        };
        assert_eq!(partition(&s, &single).unwrap()["all"].len(), 4);

        let mut partial = single.clone();
        partial.labels.remove("2");
        assert!(matches!(partition(&s, &partial), Err(BucketError::Unassigned(id)) if id == "2"));
    }

    #[test]
    fn feature_spec_parsing() {
        assert_eq!(FeatureSpec::parse("relation-label"), FeatureSpec::Builtin(BuiltinKind::RelationLabel));
        assert_eq!(FeatureSpec::parse("rel_type"), FeatureSpec::Custom("rel_type".into()));
        assert_eq!(FeatureSpec::parse_list("a, tail-length,").len(), 2);
        for k in BuiltinKind::ALL {
            assert_eq!(k.name().parse::<BuiltinKind>().unwrap(), k);
        }
    }

    proptest! {
        #[test]
        fn continuous_buckets_partition_values(values in proptest::collection::vec(-50i32..50, 1..200), n in 1usize..8) {
            let values: Vec<f64> = values.into_iter().map(|v| f64::from(v) / 2.0).collect();
            let spec = bucketize_continuous("f", &values, n);
            let edges = spec.boundaries.clone().unwrap();
            prop_assert!(spec.labels.len() <= n);
            prop_assert!(edges.windows(2).all(|w| w[0] < w[1]) || edges.len() == 2 && edges[0] == edges[1]);
            let mut counts = vec![0usize; spec.labels.len()];
            for &v in &values {
                counts[spec.interval_of(v).unwrap()] += 1;
            }
            prop_assert!(counts.iter().all(|&c| c > 0));
            prop_assert_eq!(counts.iter().sum::<usize>(), values.len());
        }

        #[test]
        fn partition_is_a_disjoint_cover(labels in proptest::collection::vec(0u8..6, 0..300)) {
            let rows = vec![("a", "r", "b"); labels.len()];
            let s = output(&rows);
            let a = BucketAssignment {
                feature: "f".into(),
                labels: labels.iter().enumerate().map(|(i, l)| (i.to_string(), format!("b{l}"))).collect(),
            };
            let groups = partition(&s, &a).unwrap();
            let mut all: Vec<String> = groups.values().flatten().cloned().collect();
            prop_assert_eq!(all.len(), s.len());
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), s.len());
            for (label, ids) in &groups {
                for id in ids {
                    prop_assert_eq!(&a.labels[id], label);
                }
            }
        }

        #[test]
        fn relation_buckets_equal_distinct_relations(rels in proptest::collection::vec(0u8..12, 1..100)) {
            let names: Vec<String> = rels.iter().map(|r| format!("r{r}")).collect();
            let rows: Vec<(&str, &str, &str)> = names.iter().map(|n| ("a", n.as_str(), "b")).collect();
            let s = output(&rows);
            let (spec, _) = assign_builtin(&s, BuiltinKind::RelationLabel, &Resources::default()).unwrap();
            let distinct: BTreeSet<&String> = names.iter().collect();
            prop_assert_eq!(spec.labels.len(), distinct.len());
        }
    }
}

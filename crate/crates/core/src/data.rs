//! Triple splits, vocabularies, training-set statistics and a synthetic
//! dataset generator.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    /// The same fact read in the opposite direction, `(tail, relation, head)`.
    pub fn reversed(self) -> Self {
        Self::new(self.tail, self.relation, self.head)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("read failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrain,
}

/// Dense, first-seen-order label tables for entities and relations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_id_or_insert(&mut self, label: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(label) {
            return id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(label.to_owned());
        self.entity_index.insert(label.to_owned(), id);
        id
    }

    pub fn relation_id_or_insert(&mut self, label: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(label) {
            return id;
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(label.to_owned());
        self.relation_index.insert(label.to_owned(), id);
        id
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    pub fn entity_label(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.index()).map(String::as_str)
    }

    pub fn relation_label(&self, id: RelationId) -> Option<&str> {
        self.relations.get(id.index()).map(String::as_str)
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Rebuild a vocabulary from label lists; `None` if a label repeats.
    pub fn from_labels(entities: Vec<String>, relations: Vec<String>) -> Option<Self> {
        let mut vocab = Self::new();
        for label in &entities {
            if vocab.entity_id(label).is_some() {
                return None;
            }
            vocab.entity_id_or_insert(label);
        }
        for label in &relations {
            if vocab.relation_id(label).is_some() {
                return None;
            }
            vocab.relation_id_or_insert(label);
        }
        Some(vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// An ordered, duplicate-free list of triples belonging to one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleSet {
    split: Split,
    triples: Vec<Triple>,
}

impl TripleSet {
    pub fn new(split: Split) -> Self {
        Self {
            split,
            triples: Vec::new(),
        }
    }

    /// Builds a set from `triples`, dropping repeats after their first
    /// occurrence. Returns the set and the number of dropped duplicates.
    pub fn from_triples(split: Split, triples: impl IntoIterator<Item = Triple>) -> (Self, usize) {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut dropped = 0;
        for t in triples {
            if seen.insert(t) {
                out.push(t);
            } else {
                dropped += 1;
            }
        }
        (Self { split, triples: out }, dropped)
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }

    pub fn to_hash_set(&self) -> HashSet<Triple> {
        self.triples.iter().copied().collect()
    }

    /// Writes the split as `head\trelation\ttail\n` lines.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut sink: W) -> std::io::Result<()> {
        for t in &self.triples {
            let h = vocab.entity_label(t.head).expect("head id in vocabulary");
            let r = vocab.relation_label(t.relation).expect("relation id in vocabulary");
            let tl = vocab.entity_label(t.tail).expect("tail id in vocabulary");
            writeln!(sink, "{h}\t{r}\t{tl}")?;
        }
        Ok(())
    }
}

/// Result of [`load_tsv`]: the triples plus human-readable warnings for
/// dropped duplicates.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub set: TripleSet,
    pub warnings: Vec<String>,
}

/// Reads a tab-separated triple file, extending `vocab` with unseen labels.
pub fn load_tsv<R: BufRead>(source: R, split: Split, vocab: &mut Vocabulary) -> Result<Loaded, DataError> {
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(DataError::Parse {
                line: line_no,
                message: "empty field".into(),
            });
        }
        let h = vocab.entity_id_or_insert(fields[0]);
        let r = vocab.relation_id_or_insert(fields[1]);
        let t = vocab.entity_id_or_insert(fields[2]);
        let triple = Triple::new(h, r, t);
        if seen.insert(triple) {
            triples.push(triple);
        } else {
            warnings.push(format!("line {line_no}: duplicate triple dropped"));
        }
    }
    Ok(Loaded {
        set: TripleSet { split, triples },
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationStats {
    pub distinct_heads: u64,
    pub distinct_tails: u64,
    pub triple_count: u64,
}

/// Occurrence counts over the training split. Vectors are indexed by id and
/// sized to the vocabulary at the time of computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStats {
    pub entity_frequency: Vec<u64>,
    pub relation_frequency: Vec<u64>,
    pub per_relation: Vec<RelationStats>,
}

/// Default ratio at or above which a relation side counts as "many".
pub const CARDINALITY_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cardinality {
    #[serde(rename = "1-1")]
    OneToOne,
    #[serde(rename = "1-M")]
    OneToMany,
    #[serde(rename = "M-1")]
    ManyToOne,
    #[serde(rename = "M-M")]
    ManyToMany,
}

impl Cardinality {
    pub fn label(self) -> &'static str {
        match self {
            Cardinality::OneToOne => "1-1",
            Cardinality::OneToMany => "1-M",
            Cardinality::ManyToOne => "M-1",
            Cardinality::ManyToMany => "M-M",
        }
    }
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl GraphStats {
    pub fn compute(train: &TripleSet, vocab: &Vocabulary) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::EmptyTrain);
        }
        let mut entity_frequency = vec![0u64; vocab.num_entities()];
        let mut relation_frequency = vec![0u64; vocab.num_relations()];
        let mut heads: Vec<HashSet<EntityId>> = vec![HashSet::new(); vocab.num_relations()];
        let mut tails: Vec<HashSet<EntityId>> = vec![HashSet::new(); vocab.num_relations()];
        for t in train.iter() {
            entity_frequency[t.head.index()] += 1;
            entity_frequency[t.tail.index()] += 1;
            relation_frequency[t.relation.index()] += 1;
            heads[t.relation.index()].insert(t.head);
            tails[t.relation.index()].insert(t.tail);
        }
        let per_relation = (0..vocab.num_relations())
            .map(|r| RelationStats {
                distinct_heads: heads[r].len() as u64,
                distinct_tails: tails[r].len() as u64,
                triple_count: relation_frequency[r],
            })
            .collect();
        Ok(Self {
            entity_frequency,
            relation_frequency,
            per_relation,
        })
    }

    pub fn entity_frequency(&self, id: EntityId) -> u64 {
        self.entity_frequency.get(id.index()).copied().unwrap_or(0)
    }

    pub fn relation_frequency(&self, id: RelationId) -> u64 {
        self.relation_frequency.get(id.index()).copied().unwrap_or(0)
    }

    pub fn cardinality(&self, relation: RelationId) -> Result<Cardinality, DataError> {
        self.cardinality_with_threshold(relation, CARDINALITY_THRESHOLD)
    }

    /// Tail side is "many" when triples per distinct head reach `threshold`;
    /// head side likewise with triples per distinct tail.
    pub fn cardinality_with_threshold(&self, relation: RelationId, threshold: f64) -> Result<Cardinality, DataError> {
        let stats = self
            .per_relation
            .get(relation.index())
            .filter(|s| s.triple_count > 0)
            .ok_or(DataError::UnknownRelation(relation.0))?;
        let count = stats.triple_count as f64;
        let tail_many = count / stats.distinct_heads as f64 >= threshold;
        let head_many = count / stats.distinct_tails as f64 >= threshold;
        Ok(match (head_many, tail_many) {
            (false, false) => Cardinality::OneToOne,
            (false, true) => Cardinality::OneToMany,
            (true, false) => Cardinality::ManyToOne,
            (true, true) => Cardinality::ManyToMany,
        })
    }
}

/// Parameters for [`generate_synthetic`]. `n_triples` counts base facts;
/// symmetric relations add reversed copies to train on top of that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_triples: usize,
    pub symmetric_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 12,
            n_triples: 3000,
            symmetric_fraction: 0.25,
            seed: 7,
        }
    }
}

/// Probability that a fact of a symmetric relation has its reverse added to train.
pub const SYMMETRIC_REVERSE_PROB: f64 = 0.75;

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub vocab: Vocabulary,
    pub train: TripleSet,
    pub valid: TripleSet,
    pub test: TripleSet,
    pub symmetric_relations: BTreeSet<RelationId>,
}

impl SyntheticDataset {
    pub fn symmetric_labels(&self) -> Vec<String> {
        self.symmetric_relations
            .iter()
            .map(|&r| self.vocab.relation_label(r).unwrap_or_default().to_owned())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
    Symmetric,
}

const NAME_WORDS: [&str; 12] = [
    "north", "river", "stone", "saint", "new", "lake", "port", "old", "green", "high", "east", "bay",
];

fn entity_name(i: usize) -> String {
    let tokens = 1 + (i * 7 + 3) % 3;
    let mut parts: Vec<String> = (0..tokens - 1)
        .map(|k| NAME_WORDS[(i / (k + 1) + k * 5) % NAME_WORDS.len()].to_owned())
        .collect();
    parts.push(format!("e{i}"));
    parts.join(" ")
}

/// Generates a clustered graph with a mix of 1-1, 1-M, M-1, M-M and
/// symmetric relations. Deterministic in `config.seed`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset, DataError> {
    let invalid = |m: &str| Err(DataError::InvalidConfig(m.to_owned()));
    if config.n_triples < 10 {
        return invalid("n_triples must be at least 10");
    }
    if config.n_entities < 4 {
        return invalid("n_entities must be at least 4");
    }
    if config.n_relations == 0 {
        return invalid("n_relations must be positive");
    }
    if !(0.0..=1.0).contains(&config.symmetric_fraction) {
        return invalid("symmetric_fraction must lie in [0, 1]");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_entities;
    let n_clusters = ((n as f64).sqrt().round() as usize).clamp(1, n / 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let clusters: Vec<Vec<usize>> = (0..n_clusters)
        .map(|c| order.iter().copied().skip(c).step_by(n_clusters).collect())
        .collect();
    let cluster_of: Vec<usize> = {
        let mut v = vec![0; n];
        for (c, members) in clusters.iter().enumerate() {
            for &e in members {
                v[e] = c;
            }
        }
        v
    };
    let position_of: Vec<usize> = {
        let mut v = vec![0; n];
        for members in &clusters {
            for (p, &e) in members.iter().enumerate() {
                v[e] = p;
            }
        }
        v
    };
    let max_cluster = clusters.iter().map(Vec::len).max().unwrap_or(1);

    let n_sym = (config.symmetric_fraction * config.n_relations as f64).round() as usize;
    let mut rel_order: Vec<usize> = (0..config.n_relations).collect();
    rel_order.shuffle(&mut rng);
    let offset = rng.random_range(0..4usize);
    let mut patterns = vec![Pattern::ManyToMany; config.n_relations];
    for (i, &r) in rel_order.iter().enumerate() {
        patterns[r] = if i < n_sym {
            Pattern::Symmetric
        } else {
            match (i + offset) % 4 {
                0 => Pattern::OneToOne,
                1 => Pattern::OneToMany,
                2 => Pattern::ManyToOne,
                _ => Pattern::ManyToMany,
            }
        };
    }

    let capacity = |p: Pattern| -> usize {
        let raw = match p {
            Pattern::OneToOne | Pattern::OneToMany | Pattern::ManyToOne => n,
            Pattern::ManyToMany => n * max_cluster / 2,
            Pattern::Symmetric => n * max_cluster / 2,
        };
        (raw * 3 / 5).max(1)
    };
    let weights: Vec<f64> = (0..config.n_relations).map(|r| 1.0 / ((r + 1) as f64).sqrt()).collect();
    let total_w: f64 = weights.iter().sum();
    let mut quotas: Vec<usize> = weights
        .iter()
        .map(|w| ((w / total_w) * config.n_triples as f64).floor() as usize)
        .collect();
    let mut remaining = config.n_triples - quotas.iter().sum::<usize>();
    // Move overflow from saturated relations to ones with spare capacity.
    for r in 0..config.n_relations {
        let cap = capacity(patterns[r]);
        if quotas[r] > cap {
            remaining += quotas[r] - cap;
            quotas[r] = cap;
        }
    }
    while remaining > 0 {
        let mut progressed = false;
        for r in 0..config.n_relations {
            if remaining == 0 {
                break;
            }
            if quotas[r] < capacity(patterns[r]) {
                quotas[r] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            return invalid("n_triples exceeds the capacity of the requested graph");
        }
    }

    let popularity: Vec<f64> = (0..n).map(|e| 1.0 / ((position_of[e] + 1) as f64).powf(0.8)).collect();
    let pick_popular = |rng: &mut ChaCha8Rng, members: &[usize]| -> usize {
        let total: f64 = members.iter().map(|&e| popularity[e]).sum();
        let mut x = rng.random::<f64>() * total;
        for &e in members {
            x -= popularity[e];
            if x <= 0.0 {
                return e;
            }
        }
        *members.last().expect("nonempty cluster")
    };

    let mut facts: Vec<(usize, usize, usize)> = Vec::with_capacity(config.n_triples);
    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    for r in 0..config.n_relations {
        let mut perm: Vec<usize> = (0..n_clusters).collect();
        perm.shuffle(&mut rng);
        let salt: usize = rng.random_range(0..1_000_000);
        let mut made = 0;
        let mut attempts = 0;
        while made < quotas[r] {
            attempts += 1;
            if attempts > 200 * quotas[r] + 1000 {
                return invalid("could not place the requested number of unique triples");
            }
            let (h, t) = match patterns[r] {
                Pattern::OneToOne => {
                    let h = rng.random_range(0..n);
                    let target = &clusters[perm[cluster_of[h]]];
                    (h, target[position_of[h] % target.len()])
                }
                Pattern::ManyToOne => {
                    let h = rng.random_range(0..n);
                    let target = &clusters[perm[cluster_of[h]]];
                    let slots = target.len().div_ceil(3);
                    (h, target[(position_of[h] + salt) % slots])
                }
                Pattern::OneToMany => {
                    let t = rng.random_range(0..n);
                    let source_cluster = perm.iter().position(|&c| c == cluster_of[t]).expect("permutation");
                    let source = &clusters[source_cluster];
                    let slots = source.len().div_ceil(3);
                    (source[(position_of[t] + salt) % slots], t)
                }
                Pattern::ManyToMany => {
                    let h = rng.random_range(0..n);
                    (h, pick_popular(&mut rng, &clusters[perm[cluster_of[h]]]))
                }
                Pattern::Symmetric => {
                    let a = rng.random_range(0..n);
                    let paired = perm[cluster_of[a]];
                    let b = pick_popular(&mut rng, &clusters[paired]);
                    if rng.random_bool(0.5) {
                        (a, b)
                    } else {
                        (b, a)
                    }
                }
            };
            if h == t {
                continue;
            }
            let key = match patterns[r] {
                Pattern::Symmetric => (h.min(t), r, h.max(t)),
                _ => (h, r, t),
            };
            if seen.insert(key) {
                facts.push((h, r, t));
                made += 1;
            }
        }
    }

    facts.shuffle(&mut rng);
    let n_test = (facts.len() / 10).max(1);
    let n_valid = (facts.len() / 10).max(1);
    let mut vocab = Vocabulary::new();
    for e in 0..n {
        vocab.entity_id_or_insert(&entity_name(e));
    }
    for r in 0..config.n_relations {
        vocab.relation_id_or_insert(&format!("r{r:02}"));
    }
    let to_triple = |(h, r, t): (usize, usize, usize)| Triple::new(EntityId(h as u32), RelationId(r as u32), EntityId(t as u32));

    let test: Vec<Triple> = facts[..n_test].iter().copied().map(to_triple).collect();
    let valid: Vec<Triple> = facts[n_test..n_test + n_valid].iter().copied().map(to_triple).collect();
    let mut train: Vec<Triple> = facts[n_test + n_valid..].iter().copied().map(to_triple).collect();
    for &(h, r, t) in &facts {
        if matches!(patterns[r], Pattern::Symmetric) && rng.random_bool(SYMMETRIC_REVERSE_PROB) {
            train.push(to_triple((t, r, h)));
        }
    }
    train.shuffle(&mut rng);

    let symmetric_relations = (0..config.n_relations)
        .filter(|&r| matches!(patterns[r], Pattern::Symmetric))
        .map(|r| RelationId(r as u32))
        .collect();
    Ok(SyntheticDataset {
        vocab,
        train: TripleSet::from_triples(Split::Train, train).0,
        valid: TripleSet::from_triples(Split::Valid, valid).0,
        test: TripleSet::from_triples(Split::Test, test).0,
        symmetric_relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(text: &str, vocab: &mut Vocabulary) -> Loaded {
        load_tsv(text.as_bytes(), Split::Train, vocab).unwrap()
    }

    #[test]
    fn single_line() {
        let mut v = Vocabulary::new();
        let l = load("a\tr\tb\n", &mut v);
        assert_eq!(l.set.len(), 1);
        assert_eq!(v.entity_labels(), ["a", "b"]);
        assert_eq!(v.relation_labels(), ["r"]);
    }

    #[test]
    fn empty_stream_leaves_vocab_alone() {
        let mut v = Vocabulary::new();
        v.entity_id_or_insert("x");
        let before = v.clone();
        let l = load("", &mut v);
        assert!(l.set.is_empty());
        assert_eq!(v, before);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut v = Vocabulary::new();
        let err = load_tsv("a\tr\tb\nbad line\n".as_bytes(), Split::Train, &mut v).unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_dropped_with_warning() {
        let mut v = Vocabulary::new();
        let l = load("a\tr\tb\na\tr\tb\nb\tr\ta\n", &mut v);
        assert_eq!(l.set.len(), 2);
        assert_eq!(l.warnings.len(), 1);
        assert!(l.warnings[0].starts_with("line 2"));
    }

    #[test]
    fn stats_hand_count() {
        let mut v = Vocabulary::new();
        let l = load("a\tr\tb\na\tr\tc\n", &mut v);
        let s = GraphStats::compute(&l.set, &v).unwrap();
        let id = |x: &str| v.entity_id(x).unwrap();
        assert_eq!(s.entity_frequency(id("a")), 2);
        assert_eq!(s.entity_frequency(id("b")), 1);
        assert_eq!(s.entity_frequency(id("c")), 1);
        let r = s.per_relation[0];
        assert_eq!((r.distinct_heads, r.distinct_tails, r.triple_count), (1, 2, 2));
    }

    #[test]
    fn stats_single_triple() {
        let mut v = Vocabulary::new();
        let l = load("a\tr\tb\n", &mut v);
        let s = GraphStats::compute(&l.set, &v).unwrap();
        assert_eq!(s.entity_frequency, vec![1, 1]);
        assert_eq!(s.relation_frequency, vec![1]);
        assert_eq!(s.cardinality(RelationId(0)).unwrap(), Cardinality::OneToOne);
    }

    #[test]
    fn stats_need_training_data() {
        let v = Vocabulary::new();
        assert!(matches!(GraphStats::compute(&TripleSet::new(Split::Train), &v), Err(DataError::EmptyTrain)));
    }

    #[test]
    fn cardinality_examples() {
        let mut v = Vocabulary::new();
        let l = load("a\tr\tb\na\tr\tc\na\tr\td\ne\tr\tb\n", &mut v);
        let s = GraphStats::compute(&l.set, &v).unwrap();
        assert_eq!(s.cardinality(RelationId(0)).unwrap(), Cardinality::OneToMany);

        let mut v = Vocabulary::new();
        let l = load("a\tr\tb\nc\tr\tb\nd\tr\tb\na\tr\te\n", &mut v);
        let s = GraphStats::compute(&l.set, &v).unwrap();
        assert_eq!(s.cardinality(RelationId(0)).unwrap(), Cardinality::ManyToOne);
        assert!(matches!(s.cardinality(RelationId(9)), Err(DataError::UnknownRelation(9))));
    }

    #[test]
    fn threshold_is_inclusive() {
        // 3 triples over 2 heads: exactly 1.5 tails per head.
        let mut v = Vocabulary::new();
        let l = load("a\tr\tb\na\tr\tc\nd\tr\te\n", &mut v);
        let s = GraphStats::compute(&l.set, &v).unwrap();
        assert_eq!(s.cardinality(RelationId(0)).unwrap(), Cardinality::OneToMany);
    }

    fn dump(d: &SyntheticDataset) -> Vec<u8> {
        let mut out = Vec::new();
        for set in [&d.train, &d.valid, &d.test] {
            set.write_tsv(&d.vocab, &mut out).unwrap();
            out.push(b'#');
        }
        out
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(dump(&a), dump(&b));
        let c = generate_synthetic(&SyntheticConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(dump(&a), dump(&c));
    }

    #[test]
    fn synthetic_without_symmetry() {
        let cfg = SyntheticConfig {
            symmetric_fraction: 0.0,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&cfg).unwrap().symmetric_relations.is_empty());
    }

    #[test]
    fn synthetic_all_symmetric() {
        let cfg = SyntheticConfig {
            n_entities: 100,
            n_relations: 2,
            n_triples: 400,
            symmetric_fraction: 1.0,
            seed: 3,
        };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.symmetric_relations.len(), 2);
        let train = d.train.to_hash_set();
        let with_reverse = d.train.iter().filter(|t| train.contains(&t.reversed())).count();
        assert!(with_reverse * 2 >= d.train.len(), "{with_reverse} / {}", d.train.len());
    }

    #[test]
    fn synthetic_splits_disjoint() {
        let d = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let train = d.train.to_hash_set();
        let valid = d.valid.to_hash_set();
        assert!(d.test.iter().all(|t| !train.contains(t) && !valid.contains(t)));
        assert!(d.valid.iter().all(|t| !train.contains(t)));
    }

    #[test]
    fn synthetic_rejects_infeasible() {
        let too_small = SyntheticConfig {
            n_triples: 5,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&too_small).is_err());
        let overfull = SyntheticConfig {
            n_entities: 6,
            n_relations: 1,
            n_triples: 500,
            symmetric_fraction: 0.0,
            seed: 1,
        };
        assert!(matches!(generate_synthetic(&overfull), Err(DataError::InvalidConfig(_))));
    }

    #[test]
    fn synthetic_covers_cardinality_classes() {
        let d = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let s = GraphStats::compute(&d.train, &d.vocab).unwrap();
        let classes: BTreeSet<Cardinality> = (0..d.vocab.num_relations())
            .map(|r| s.cardinality(RelationId(r as u32)).unwrap())
            .collect();
        assert!(classes.len() >= 3, "{classes:?}");
    }

    type Counts = (HashMap<u8, u64>, HashMap<u8, (u64, u64, u64)>);

    fn brute_force(triples: &[(u8, u8, u8)]) -> Counts {
        let mut ent = HashMap::new();
        let mut rel = HashMap::new();
        for &(h, _, t) in triples {
            *ent.entry(h).or_insert(0) += 1;
            *ent.entry(t).or_insert(0) += 1;
        }
        let rels: BTreeSet<u8> = triples.iter().map(|x| x.1).collect();
        for r in rels {
            let of_r: Vec<_> = triples.iter().filter(|x| x.1 == r).collect();
            let heads: BTreeSet<u8> = of_r.iter().map(|x| x.0).collect();
            let tails: BTreeSet<u8> = of_r.iter().map(|x| x.2).collect();
            rel.insert(r, (heads.len() as u64, tails.len() as u64, of_r.len() as u64));
        }
        (ent, rel)
    }

    proptest! {
        #[test]
        fn vocabulary_round_trips(labels in proptest::collection::vec("[a-z ]{1,8}", 1..50)) {
            let mut v = Vocabulary::new();
            for l in &labels {
                let id = v.entity_id_or_insert(l);
                prop_assert_eq!(v.entity_label(id).unwrap(), l.as_str());
                let rid = v.relation_id_or_insert(l);
                prop_assert_eq!(v.relation_label(rid).unwrap(), l.as_str());
            }
        }

        #[test]
        fn stats_match_brute_force(raw in proptest::collection::vec((0u8..30, 0u8..5, 0u8..30), 1..500)) {
            let mut text = String::new();
            for (h, r, t) in &raw {
                text.push_str(&format!("e{h}\tr{r}\te{t}\n"));
            }
            let mut v = Vocabulary::new();
            let loaded = load_tsv(text.as_bytes(), Split::Train, &mut v).unwrap();
            let dedup: Vec<(u8, u8, u8)> = {
                let mut seen = HashSet::new();
                raw.iter().copied().filter(|x| seen.insert(*x)).collect()
            };
            let (ent, rel) = brute_force(&dedup);
            let stats = GraphStats::compute(&loaded.set, &v).unwrap();
            prop_assert_eq!(stats.relation_frequency.iter().sum::<u64>(), loaded.set.len() as u64);
            for (e, c) in ent {
                let id = v.entity_id(&format!("e{e}")).unwrap();
                prop_assert_eq!(stats.entity_frequency(id), c);
            }
            for (r, (h, t, c)) in rel {
                let id = v.relation_id(&format!("r{r}")).unwrap();
                let s = stats.per_relation[id.index()];
                prop_assert_eq!((s.distinct_heads, s.distinct_tails, s.triple_count), (h, t, c));
            }
        }

        #[test]
        fn cardinality_ignores_order(raw in proptest::collection::vec((0u8..10, 0u8..3, 0u8..10), 1..80), seed in any::<u64>()) {
            let mut v = Vocabulary::new();
            let triples: Vec<Triple> = raw.iter().map(|(h, r, t)| Triple::new(
                v.entity_id_or_insert(&format!("e{h}")),
                v.relation_id_or_insert(&format!("r{r}")),
                v.entity_id_or_insert(&format!("e{t}")),
            )).collect();
            let mut shuffled = triples.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = GraphStats::compute(&TripleSet::from_triples(Split::Train, triples).0, &v).unwrap();
            let b = GraphStats::compute(&TripleSet::from_triples(Split::Train, shuffled).0, &v).unwrap();
            for r in 0..v.num_relations() {
                let r = RelationId(r as u32);
                prop_assert_eq!(a.cardinality(r).unwrap(), b.cardinality(r).unwrap());
            }
        }
    }
}

//! Native system-output files.
//!
//! A system-output file is UTF-8 JSON Lines. Line 1 is the header:
//!
//! ```text
//! {"schema_version":"1","system_name":..,"dataset_name":..,"task":"link-prediction",
//!  "rank_basis":"filtered"|"raw","custom_features":{NAME:{"dtype":..,"description":..,"num_buckets":N}}}
//! ```
//!
//! Every following line is one query:
//!
//! ```text
//! {"id":..,"head":..,"relation":..,"tail":..,"direction":"tail-query"|"head-query",
//!  "gold_rank":R,"top_k":[[LABEL,SCORE],..],"features":{NAME:VALUE}}
//! ```
//!
//! `top_k` and `features` are optional. `gold_rank` may be omitted when
//! `top_k` contains the gold entity; the realistic rank is then derived from
//! the scores. Emission always writes keys in the order shown, features
//! sorted by name, and integral numbers without a fractional part, so
//! identical content serializes to identical bytes.
//!
//! Besides the `"string"` dtype, `"number"` (discrete numeric labels) and
//! `"continuous"` (numbers bucketed into intervals) are accepted.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::metrics::{rank_from_scores, TieStrategy};

pub const SCHEMA_VERSION: &str = "1";
pub const TASK: &str = "link-prediction";

#[derive(Debug, Error)]
pub enum SysoutError {
    #[error("line {line}: field '{field}': {rule}")]
    Schema { line: usize, field: String, rule: String },
    #[error("line {line}: invalid JSON: {message}")]
    Json { line: usize, message: String },
    #[error("input has no header line")]
    MissingHeader,
    #[error("feature '{0}' is already defined")]
    FeatureExists(String),
    #[error("record '{id}': value {value} does not fit dtype {dtype} of feature '{feature}'")]
    FeatureType {
        id: String,
        feature: String,
        dtype: Dtype,
        value: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl SysoutError {
    fn schema(line: usize, field: impl Into<String>, rule: impl Into<String>) -> Self {
        SysoutError::Schema {
            line,
            field: field.into(),
            rule: rule.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    String,
    Number,
    Continuous,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::String => "string",
            Dtype::Number => "number",
            Dtype::Continuous => "continuous",
        })
    }
}

impl FromStr for Dtype {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "string" => Ok(Dtype::String),
            "number" => Ok(Dtype::Number),
            "continuous" => Ok(Dtype::Continuous),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDef {
    pub name: String,
    pub dtype: Dtype,
    pub description: String,
    pub num_buckets: u32,
}

impl FeatureDef {
    pub fn new(name: impl Into<String>, dtype: Dtype, description: impl Into<String>, num_buckets: u32) -> Self {
        Self {
            name: name.into(),
            dtype,
            description: description.into(),
            num_buckets,
        }
    }

    pub fn accepts(&self, value: &FeatureValue) -> bool {
        matches!(
            (self.dtype, value),
            (Dtype::String, FeatureValue::Text(_)) | (Dtype::Number | Dtype::Continuous, FeatureValue::Number(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "tail-query")]
    TailQuery,
    #[serde(rename = "head-query")]
    HeadQuery,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TailQuery => "tail-query",
            Direction::HeadQuery => "head-query",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankBasis {
    Filtered,
    Raw,
}

impl fmt::Display for RankBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankBasis::Filtered => "filtered",
            RankBasis::Raw => "raw",
        })
    }
}

impl FromStr for RankBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filtered" => Ok(RankBasis::Filtered),
            "raw" => Ok(RankBasis::Raw),
            _ => Err(format!("unknown rank basis '{s}' (expected filtered or raw)")),
        }
    }
}

/// A feature value: a string label or a (finite) number.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    Text(String),
    Number(f64),
}

impl FeatureValue {
    pub fn text(s: impl Into<String>) -> Self {
        FeatureValue::Text(s.into())
    }

    /// Label used when the value names a bucket directly.
    pub fn label(&self) -> String {
        match self {
            FeatureValue::Text(s) => s.clone(),
            FeatureValue::Number(x) => format_number(*x),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            FeatureValue::Number(x) => Some(*x),
            FeatureValue::Text(_) => None,
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Text(s) => write!(f, "{s:?}"),
            FeatureValue::Number(x) => f.write_str(&format_number(*x)),
        }
    }
}

/// Integral values print without a fractional part; others use the
/// shortest round-trip representation.
pub fn format_number(x: f64) -> String {
    if is_integral(x) {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn is_integral(x: f64) -> bool {
    x.is_finite() && x.fract() == 0.0 && x.abs() < 9.0e15
}

fn serialize_number<S: Serializer>(x: f64, s: S) -> Result<S::Ok, S::Error> {
    if is_integral(x) {
        s.serialize_i64(x as i64)
    } else {
        s.serialize_f64(x)
    }
}

impl Serialize for FeatureValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FeatureValue::Text(t) => s.serialize_str(t),
            FeatureValue::Number(x) => serialize_number(*x, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub id: String,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub direction: Direction,
    pub gold_rank: f64,
    pub top_k: Option<Vec<(String, f64)>>,
    pub features: BTreeMap<String, FeatureValue>,
}

impl ExampleRecord {
    pub fn new(
        id: impl Into<String>,
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
        direction: Direction,
        gold_rank: f64,
    ) -> Self {
        Self {
            id: id.into(),
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            direction,
            gold_rank,
            top_k: None,
            features: BTreeMap::new(),
        }
    }

    /// The entity the query asks for.
    pub fn gold_entity(&self) -> &str {
        match self.direction {
            Direction::TailQuery => &self.tail,
            Direction::HeadQuery => &self.head,
        }
    }
}

struct TopK<'a>(&'a [(String, f64)]);

impl Serialize for TopK<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for (label, score) in self.0 {
            seq.serialize_element(&(label, score))?;
        }
        seq.end()
    }
}

struct Number(f64);

impl Serialize for Number {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_number(self.0, s)
    }
}

impl Serialize for ExampleRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("id", &self.id)?;
        map.serialize_entry("head", &self.head)?;
        map.serialize_entry("relation", &self.relation)?;
        map.serialize_entry("tail", &self.tail)?;
        map.serialize_entry("direction", &self.direction)?;
        map.serialize_entry("gold_rank", &Number(self.gold_rank))?;
        if let Some(top_k) = &self.top_k {
            map.serialize_entry("top_k", &TopK(top_k))?;
        }
        if !self.features.is_empty() {
            map.serialize_entry("features", &self.features)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemHeader {
    pub schema_version: String,
    pub system_name: String,
    pub dataset_name: String,
    pub rank_basis: RankBasis,
    pub custom_features: BTreeMap<String, FeatureDef>,
}

impl SystemHeader {
    pub fn new(system_name: impl Into<String>, dataset_name: impl Into<String>, rank_basis: RankBasis) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            system_name: system_name.into(),
            dataset_name: dataset_name.into(),
            rank_basis,
            custom_features: BTreeMap::new(),
        }
    }
}

struct FeatureDefBody<'a>(&'a FeatureDef);

impl Serialize for FeatureDefBody<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("dtype", &self.0.dtype)?;
        map.serialize_entry("description", &self.0.description)?;
        map.serialize_entry("num_buckets", &self.0.num_buckets)?;
        map.end()
    }
}

struct Features<'a>(&'a BTreeMap<String, FeatureDef>);

impl Serialize for Features<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (name, def) in self.0 {
            map.serialize_entry(name, &FeatureDefBody(def))?;
        }
        map.end()
    }
}

impl Serialize for SystemHeader {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(6))?;
        map.serialize_entry("schema_version", &self.schema_version)?;
        map.serialize_entry("system_name", &self.system_name)?;
        map.serialize_entry("dataset_name", &self.dataset_name)?;
        map.serialize_entry("task", TASK)?;
        map.serialize_entry("rank_basis", &self.rank_basis)?;
        map.serialize_entry("custom_features", &Features(&self.custom_features))?;
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemOutput {
    pub header: SystemHeader,
    pub records: Vec<ExampleRecord>,
}

impl SystemOutput {
    pub fn new(header: SystemHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ranks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gold_rank).collect()
    }

    /// Checks every structural invariant. Line numbers in errors assume the
    /// file layout (header on line 1, record `i` on line `i + 2`).
    pub fn validate(&self) -> Result<(), SysoutError> {
        validate_header(&self.header, 1)?;
        let mut ids = HashSet::new();
        for (i, rec) in self.records.iter().enumerate() {
            let line = i + 2;
            validate_record(rec, &self.header, line)?;
            if !ids.insert(rec.id.as_str()) {
                return Err(SysoutError::schema(line, "id", format!("duplicate record id '{}'", rec.id)));
            }
        }
        Ok(())
    }

    /// Canonical serialization: header line, then one line per record.
    pub fn emit<W: Write>(&self, mut sink: W) -> Result<(), SysoutError> {
        self.validate()?;
        serde_json::to_writer(&mut sink, &self.header).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
        for rec in &self.records {
            serde_json::to_writer(&mut sink, rec).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SysoutError> {
        let mut out = Vec::new();
        self.emit(&mut out)?;
        Ok(out)
    }

    /// Adds feature `def` to the header and gives every record the value
    /// chosen by `assign`. Nothing else about the records changes.
    pub fn apply_bucketization_function<F>(mut self, def: FeatureDef, assign: F) -> Result<SystemOutput, SysoutError>
    where
        F: Fn(&ExampleRecord) -> FeatureValue,
    {
        if self.header.custom_features.contains_key(&def.name) {
            return Err(SysoutError::FeatureExists(def.name));
        }
        if def.num_buckets == 0 {
            return Err(SysoutError::schema(1, format!("custom_features.{}.num_buckets", def.name), "must be at least 1"));
        }
        for rec in &mut self.records {
            let value = assign(rec);
            let bad_number = matches!(value, FeatureValue::Number(x) if !x.is_finite());
            if !def.accepts(&value) || bad_number {
                return Err(SysoutError::FeatureType {
                    id: rec.id.clone(),
                    feature: def.name.clone(),
                    dtype: def.dtype,
                    value: value.to_string(),
                });
            }
            rec.features.insert(def.name.clone(), value);
        }
        self.header.custom_features.insert(def.name.clone(), def);
        Ok(self)
    }
}

fn validate_header(h: &SystemHeader, line: usize) -> Result<(), SysoutError> {
    if h.schema_version != SCHEMA_VERSION {
        return Err(SysoutError::schema(
            line,
            "schema_version",
            format!("unsupported version '{}' (expected '{SCHEMA_VERSION}')", h.schema_version),
        ));
    }
    for (name, def) in &h.custom_features {
        if def.name != *name {
            return Err(SysoutError::schema(line, format!("custom_features.{name}"), "definition name mismatch"));
        }
        if def.num_buckets == 0 {
            return Err(SysoutError::schema(line, format!("custom_features.{name}.num_buckets"), "must be at least 1"));
        }
    }
    Ok(())
}

fn validate_record(rec: &ExampleRecord, header: &SystemHeader, line: usize) -> Result<(), SysoutError> {
    if !(rec.gold_rank.is_finite() && rec.gold_rank >= 1.0) {
        return Err(SysoutError::schema(line, "gold_rank", format!("rank {} must be a number >= 1", rec.gold_rank)));
    }
    if let Some(top_k) = &rec.top_k {
        if top_k.iter().any(|(_, s)| !s.is_finite()) {
            return Err(SysoutError::schema(line, "top_k", "scores must be finite"));
        }
        if top_k.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(SysoutError::schema(line, "top_k", "entries must be sorted by descending score"));
        }
    }
    for (name, value) in &rec.features {
        let def = header
            .custom_features
            .get(name)
            .ok_or_else(|| SysoutError::schema(line, format!("features.{name}"), "feature not declared in header custom_features"))?;
        let finite = !matches!(value, FeatureValue::Number(x) if !x.is_finite());
        if !def.accepts(value) || !finite {
            return Err(SysoutError::schema(
                line,
                format!("features.{name}"),
                format!("value {value} does not match dtype {}", def.dtype),
            ));
        }
    }
    Ok(())
}

fn take_str(obj: &Map<String, Value>, key: &str, line: usize) -> Result<String, SysoutError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(SysoutError::schema(line, key, "must be a string")),
        None => Err(SysoutError::schema(line, key, "required field missing")),
    }
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], prefix: &str, line: usize) -> Result<(), SysoutError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(SysoutError::schema(line, format!("{prefix}{key}"), "unknown field"));
        }
    }
    Ok(())
}

fn parse_header(value: Value, line: usize) -> Result<SystemHeader, SysoutError> {
    let obj = match value {
        Value::Object(o) => o,
        _ => return Err(SysoutError::schema(line, "<header>", "header must be a JSON object")),
    };
    reject_unknown(
        &obj,
        &["schema_version", "system_name", "dataset_name", "task", "rank_basis", "custom_features"],
        "",
        line,
    )?;
    let schema_version = take_str(&obj, "schema_version", line)?;
    let system_name = take_str(&obj, "system_name", line)?;
    let dataset_name = take_str(&obj, "dataset_name", line)?;
    let task = take_str(&obj, "task", line)?;
    if task != TASK {
        return Err(SysoutError::schema(line, "task", format!("must be \"{TASK}\"")));
    }
    let rank_basis = take_str(&obj, "rank_basis", line)?
        .parse::<RankBasis>()
        .map_err(|e| SysoutError::schema(line, "rank_basis", e))?;
    let mut custom_features = BTreeMap::new();
    match obj.get("custom_features") {
        None => {}
        Some(Value::Object(defs)) => {
            for (name, def) in defs {
                let field = format!("custom_features.{name}");
                let def = def
                    .as_object()
                    .ok_or_else(|| SysoutError::schema(line, field.clone(), "must be an object"))?;
                reject_unknown(def, &["dtype", "description", "num_buckets"], &format!("{field}."), line)?;
                let dtype = take_str(def, "dtype", line)
                    .map_err(|_| SysoutError::schema(line, format!("{field}.dtype"), "required string"))?
                    .parse::<Dtype>()
                    .map_err(|_| SysoutError::schema(line, format!("{field}.dtype"), "must be string, number or continuous"))?;
                let description = take_str(def, "description", line)
                    .map_err(|_| SysoutError::schema(line, format!("{field}.description"), "required string"))?;
                let num_buckets = def
                    .get("num_buckets")
                    .and_then(Value::as_u64)
                    .filter(|&n| n >= 1 && n <= u32::MAX as u64)
                    .ok_or_else(|| SysoutError::schema(line, format!("{field}.num_buckets"), "must be a positive integer"))?;
                custom_features.insert(name.clone(), FeatureDef::new(name.clone(), dtype, description, num_buckets as u32));
            }
        }
        Some(_) => return Err(SysoutError::schema(line, "custom_features", "must be an object")),
    }
    let header = SystemHeader {
        schema_version,
        system_name,
        dataset_name,
        rank_basis,
        custom_features,
    };
    validate_header(&header, line)?;
    Ok(header)
}

fn parse_record(value: Value, header: &SystemHeader, line: usize) -> Result<ExampleRecord, SysoutError> {
    let obj = match value {
        Value::Object(o) => o,
        _ => return Err(SysoutError::schema(line, "<record>", "record must be a JSON object")),
    };
    reject_unknown(
        &obj,
        &["id", "head", "relation", "tail", "direction", "gold_rank", "top_k", "features"],
        "",
        line,
    )?;
    let direction = match take_str(&obj, "direction", line)?.as_str() {
        "tail-query" => Direction::TailQuery,
        "head-query" => Direction::HeadQuery,
        _ => return Err(SysoutError::schema(line, "direction", "must be tail-query or head-query")),
    };
    let top_k = match obj.get("top_k") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                let pair = item.as_array().filter(|p| p.len() == 2);
                let parsed = pair.and_then(|p| Some((p[0].as_str()?.to_owned(), p[1].as_f64()?)));
                out.push(parsed.ok_or_else(|| SysoutError::schema(line, "top_k", "entries must be [label, score] pairs"))?);
            }
            Some(out)
        }
        Some(_) => return Err(SysoutError::schema(line, "top_k", "must be an array")),
    };
    let mut features = BTreeMap::new();
    match obj.get("features") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (name, v) in map {
                let value = match v {
                    Value::String(s) => FeatureValue::Text(s.clone()),
                    Value::Number(n) => FeatureValue::Number(n.as_f64().unwrap_or(f64::NAN)),
                    _ => return Err(SysoutError::schema(line, format!("features.{name}"), "value must be a string or number")),
                };
                features.insert(name.clone(), value);
            }
        }
        Some(_) => return Err(SysoutError::schema(line, "features", "must be an object")),
    }
    let mut rec = ExampleRecord {
        id: take_str(&obj, "id", line)?,
        head: take_str(&obj, "head", line)?,
        relation: take_str(&obj, "relation", line)?,
        tail: take_str(&obj, "tail", line)?,
        direction,
        gold_rank: 0.0,
        top_k,
        features,
    };
    rec.gold_rank = match obj.get("gold_rank") {
        Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
        Some(_) => return Err(SysoutError::schema(line, "gold_rank", "must be a number")),
        None => {
            let top_k = rec
                .top_k
                .as_ref()
                .ok_or_else(|| SysoutError::schema(line, "gold_rank", "required when top_k is absent"))?;
            let gold = rec.gold_entity().to_owned();
            rank_from_scores(&gold, top_k, TieStrategy::Realistic)
                .map_err(|_| SysoutError::schema(line, "gold_rank", "missing and the gold entity is not in top_k"))?
        }
    };
    validate_record(&rec, header, line)?;
    Ok(rec)
}

/// Reads and validates a native system-output file.
pub fn parse_system_output<R: BufRead>(source: R) -> Result<SystemOutput, SysoutError> {
    let mut header: Option<SystemHeader> = None;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| SysoutError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        match &header {
            None => header = Some(parse_header(value, line_no)?),
            Some(h) => {
                let rec = parse_record(value, h, line_no)?;
                if !ids.insert(rec.id.clone()) {
                    return Err(SysoutError::schema(line_no, "id", format!("duplicate record id '{}'", rec.id)));
                }
                records.push(rec);
            }
        }
    }
    let header = header.ok_or(SysoutError::MissingHeader)?;
    Ok(SystemOutput { header, records })
}

pub fn parse_bytes(bytes: &[u8]) -> Result<SystemOutput, SysoutError> {
    parse_system_output(bytes)
}

/// Validates a header given as a JSON value, as found on line 1.
pub fn header_from_value(value: Value) -> Result<SystemHeader, SysoutError> {
    parse_header(value, 1)
}

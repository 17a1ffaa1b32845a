//! Importers for rank dumps written by the PyKEEN and LibKGE exporter
//! scripts.
//!
//! Both dumps are UTF-8 TSV with a header row:
//!
//! * pykeen: `head relation tail side rank`, `side` is `head` or `tail`
//! * libkge: `s p o direction rank`, `direction` is `s` or `o`
//!
//! The value names which entity was predicted. Ranks are positive integers;
//! the rank basis is supplied out of band in [`AdapterMeta`]. Record ids are
//! `{row}-{tail|head}` with `row` the 0-based data row.

use std::io::BufRead;

use thiserror::Error;

use crate::sysout::{Direction, ExampleRecord, RankBasis, SystemHeader, SystemOutput};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: rank '{value}' must be a positive integer")]
    RankDomain { line: usize, value: String },
    #[error("adapter metadata field '{0}' must be nonempty")]
    Meta(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterMeta {
    pub system_name: String,
    pub dataset_name: String,
    pub rank_basis: RankBasis,
}

impl AdapterMeta {
    fn validate(&self) -> Result<(), AdapterError> {
        if self.system_name.is_empty() {
            return Err(AdapterError::Meta("system_name"));
        }
        if self.dataset_name.is_empty() {
            return Err(AdapterError::Meta("dataset_name"));
        }
        Ok(())
    }
}

struct DumpSchema {
    head: &'static str,
    relation: &'static str,
    tail: &'static str,
    direction: &'static str,
    predicts_head: &'static str,
    predicts_tail: &'static str,
}

const PYKEEN: DumpSchema = DumpSchema {
    head: "head",
    relation: "relation",
    tail: "tail",
    direction: "side",
    predicts_head: "head",
    predicts_tail: "tail",
};

const LIBKGE: DumpSchema = DumpSchema {
    head: "s",
    relation: "p",
    tail: "o",
    direction: "direction",
    predicts_head: "s",
    predicts_tail: "o",
};

pub fn import_pykeen<R: BufRead>(source: R, meta: &AdapterMeta) -> Result<SystemOutput, AdapterError> {
    import(source, meta, &PYKEEN)
}

pub fn import_libkge<R: BufRead>(source: R, meta: &AdapterMeta) -> Result<SystemOutput, AdapterError> {
    import(source, meta, &LIBKGE)
}

fn import<R: BufRead>(source: R, meta: &AdapterMeta, schema: &DumpSchema) -> Result<SystemOutput, AdapterError> {
    meta.validate()?;
    let mut out = SystemOutput::new(SystemHeader::new(&meta.system_name, &meta.dataset_name, meta.rank_basis));
    let mut columns: Option<[usize; 5]> = None;
    let mut row = 0usize;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let Some(cols) = columns else {
            let find = |name: &str| {
                fields.iter().position(|f| *f == name).ok_or_else(|| AdapterError::Schema {
                    line: line_no,
                    message: format!("missing column '{name}'"),
                })
            };
            columns = Some([
                find(schema.head)?,
                find(schema.relation)?,
                find(schema.tail)?,
                find(schema.direction)?,
                find("rank")?,
            ]);
            continue;
        };
        let get = |i: usize| {
            fields.get(cols[i]).copied().ok_or_else(|| AdapterError::Schema {
                line: line_no,
                message: format!("expected at least {} fields, found {}", cols[i] + 1, fields.len()),
            })
        };
        let direction = match get(3)? {
            d if d == schema.predicts_tail => Direction::TailQuery,
            d if d == schema.predicts_head => Direction::HeadQuery,
            other => {
                return Err(AdapterError::Schema {
                    line: line_no,
                    message: format!(
                        "column '{}' must be '{}' or '{}', found '{other}'",
                        schema.direction, schema.predicts_head, schema.predicts_tail
                    ),
                })
            }
        };
        let rank_text = get(4)?;
        let rank = rank_text
            .trim()
            .parse::<u64>()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| AdapterError::RankDomain {
                line: line_no,
                value: rank_text.to_owned(),
            })?;
        let suffix = match direction {
            Direction::TailQuery => "tail",
            Direction::HeadQuery => "head",
        };
        out.records.push(ExampleRecord::new(
            format!("{row}-{suffix}"),
            get(0)?,
            get(1)?,
            get(2)?,
            direction,
            rank as f64,
        ));
        row += 1;
    }
    if columns.is_none() {
        return Err(AdapterError::Schema {
            line: 1,
            message: "missing header row".into(),
        });
    }
    Ok(out)
}

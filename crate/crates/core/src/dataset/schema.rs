//! Declarative mapping from external delimited files onto the canonical bundle tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One delimited source file feeding a canonical table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSource {
    pub file: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Separator of list-valued fields (genres, track lists).
    #[serde(default = "default_list_separator")]
    pub list_separator: String,
    /// Canonical field name -> column name in the file. Unlisted fields are looked up
    /// under their canonical name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub columns: BTreeMap<String, String>,
    /// Canonical field name -> (source value -> canonical value).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, BTreeMap<String, String>>,
    /// Fields absent from the file, filled with a fixed value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, String>,
}

fn default_delimiter() -> String {
    "\t".into()
}

fn default_list_separator() -> String {
    ",".into()
}

impl TableSource {
    pub fn canonical(file: &str) -> Self {
        TableSource {
            file: file.into(),
            delimiter: default_delimiter(),
            list_separator: default_list_separator(),
            columns: BTreeMap::new(),
            values: BTreeMap::new(),
            constants: BTreeMap::new(),
        }
    }
}

/// Sources of every canonical table. The default reads the canonical layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMapping {
    pub tracks: Vec<TableSource>,
    #[serde(default)]
    pub playlists: Vec<TableSource>,
    pub users: Vec<TableSource>,
    pub events: Vec<TableSource>,
    pub ground_truth: Vec<TableSource>,
}

impl Default for SchemaMapping {
    fn default() -> Self {
        SchemaMapping {
            tracks: vec![TableSource::canonical(super::io::TRACKS_FILE)],
            playlists: vec![TableSource::canonical(super::io::PLAYLISTS_FILE)],
            users: vec![TableSource::canonical(super::io::USERS_FILE)],
            events: vec![TableSource::canonical(super::io::EVENTS_FILE)],
            ground_truth: vec![TableSource::canonical(super::io::GROUND_TRUTH_FILE)],
        }
    }
}

/// Rows of one source with canonical field access.
pub struct MappedTable {
    pub file: String,
    pub list_separator: String,
    fields: BTreeMap<String, Field>,
    values: BTreeMap<String, BTreeMap<String, String>>,
    records: Vec<csv::StringRecord>,
}

enum Field {
    Column(usize),
    Constant(String),
}

pub struct Row<'a> {
    table: &'a MappedTable,
    record: &'a csv::StringRecord,
    /// 1-based line in the file, header included.
    pub line: usize,
}

impl MappedTable {
    /// Reads `source` relative to `dir`. `required` fields must resolve to a column or
    /// constant; `optional` fields may be missing.
    pub fn read(dir: &Path, source: &TableSource, required: &[&str], optional: &[&str]) -> Result<Self> {
        let path = dir.join(&source.file);
        let delimiter = match source.delimiter.as_bytes() {
            [b] => *b,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{}: delimiter must be a single byte",
                    source.file
                )))
            }
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(false)
            .from_path(&path)
            .map_err(|e| csv_error(&path, e))?;
        let header = reader.headers().map_err(|e| csv_error(&path, e))?.clone();
        let mut fields = BTreeMap::new();
        let mut missing = Vec::new();
        for (name, needed) in required
            .iter()
            .map(|n| (n, true))
            .chain(optional.iter().map(|n| (n, false)))
        {
            if let Some(c) = source.constants.get(*name) {
                fields.insert(name.to_string(), Field::Constant(c.clone()));
                continue;
            }
            let column = source.columns.get(*name).map_or(*name, String::as_str);
            match header.iter().position(|h| h.trim() == column) {
                Some(i) => {
                    fields.insert(name.to_string(), Field::Column(i));
                }
                None if needed => missing.push(format!("{}: no column {column:?} for field {name}", source.file)),
                None => {}
            }
        }
        if !missing.is_empty() {
            return Err(Error::Validation(missing));
        }
        let records = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| csv_error(&path, e))?;
        Ok(MappedTable {
            file: source.file.clone(),
            list_separator: source.list_separator.clone(),
            fields,
            values: source.values.clone(),
            records,
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.records.iter().enumerate().map(move |(i, record)| Row {
            table: self,
            record,
            line: i + 2,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl<'a> Row<'a> {
    /// Mapped value of `field`, `None` if the field is absent or empty.
    pub fn get(&self, field: &str) -> Option<&'a str> {
        let raw = match self.table.fields.get(field)? {
            Field::Column(i) => self.record.get(*i)?.trim(),
            Field::Constant(c) => c.as_str(),
        };
        let mapped = self
            .table
            .values
            .get(field)
            .and_then(|m| m.get(raw))
            .map_or(raw, String::as_str);
        (!mapped.is_empty()).then_some(mapped)
    }

    pub fn require(&self, field: &str) -> Result<&'a str> {
        self.get(field)
            .ok_or_else(|| Error::parse(self.what(), self.line, format!("missing {field}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, field: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(field)?;
        v.parse()
            .map_err(|e: T::Err| Error::parse(self.what(), self.line, format!("{field} {v:?}: {e}")))
    }

    pub fn parse_opt<T: std::str::FromStr>(&self, field: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(field) {
            None => Ok(None),
            Some(_) => self.parse(field).map(Some),
        }
    }

    /// List-valued field split on the source's list separator; empty when absent.
    pub fn list(&self, field: &str) -> Vec<&'a str> {
        match self.get(field) {
            None => Vec::new(),
            Some(v) => v
                .split(self.table.list_separator.as_str())
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    pub fn parse_list<T: std::str::FromStr>(&self, field: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.list(field)
            .into_iter()
            .map(|v| {
                v.parse().map_err(|e: T::Err| {
                    Error::parse(self.what(), self.line, format!("{field} item {v:?}: {e}"))
                })
            })
            .collect()
    }

    fn what(&self) -> &'a str {
        &self.table.file
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Format(format!("{}: {e}", path.display())),
    }
}

//! Observation-level data: the edge table, its session-level aggregate, and
//! CSV / JSON-lines ingestion.
//!
//! A [`Dataset`] stores one row per `(item, request, position)` impression in
//! columnar form. Categorical columns (`arm`, `reason`) are dictionary-encoded.
//! Datasets are never mutated; every transformation returns a new value.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical CSV column names, in file order.
pub const CANONICAL_COLUMNS: [&str; 9] = [
    "request_id",
    "user_id",
    "item_id",
    "position",
    "outcome",
    "arm",
    "reason",
    "relevance_score",
    "session_depth",
];

/// One impression: an item shown at a position in a request.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeObservation {
    pub request_id: u64,
    pub user_id: u64,
    pub item_id: u64,
    pub position: u32,
    pub outcome: u8,
    pub arm: String,
    pub reason: Option<String>,
    pub relevance_score: Option<f64>,
    pub session_depth: Option<u32>,
}

impl EdgeObservation {
    /// Checks the row-level invariants.
    pub fn is_valid(&self) -> bool {
        self.position >= 1
            && self.outcome <= 1
            && !self.arm.is_empty()
            && self
                .relevance_score
                .is_none_or(|s| s.is_finite() && (0.0..=1.0).contains(&s))
            && self.session_depth.is_none_or(|d| d >= self.position)
    }
}

/// FNV-1a, 64-bit. Used to map non-numeric ids onto `u64`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Parses an opaque id: decimal `u64` when possible, otherwise the FNV-1a hash of the text.
pub fn parse_id(text: &str) -> Option<u64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    Some(t.parse::<u64>().unwrap_or_else(|_| fnv1a64(t.as_bytes())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Id,
    Integer,
    Binary,
    Categorical,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: &'static str,
    pub kind: ColumnKind,
    pub optional: bool,
}

/// Which columns a dataset carries. The six required columns are always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Schema {
    pub has_reason: bool,
    pub has_relevance_score: bool,
    pub has_session_depth: bool,
}

impl Schema {
    pub fn columns(&self) -> Vec<Column> {
        use ColumnKind::*;
        let mut cols = vec![
            Column { name: "request_id", kind: Id, optional: false },
            Column { name: "user_id", kind: Id, optional: false },
            Column { name: "item_id", kind: Id, optional: false },
            Column { name: "position", kind: Integer, optional: false },
            Column { name: "outcome", kind: Binary, optional: false },
            Column { name: "arm", kind: Categorical, optional: false },
        ];
        if self.has_reason {
            cols.push(Column { name: "reason", kind: Categorical, optional: true });
        }
        if self.has_relevance_score {
            cols.push(Column { name: "relevance_score", kind: Real, optional: true });
        }
        if self.has_session_depth {
            cols.push(Column { name: "session_depth", kind: Integer, optional: true });
        }
        cols
    }

    pub fn column_names(&self) -> Vec<&'static str> {
        self.columns().into_iter().map(|c| c.name).collect()
    }
}

/// Lineage of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Free-text lineage, e.g. `data.csv | slice_by_item(7) | sample_one_per_request(seed=3)`.
    pub lineage: String,
    /// Rows dropped by validation when the data was loaded.
    pub dropped_rows: usize,
    /// Rows that exactly repeat an earlier row in the source file.
    pub duplicate_rows: usize,
}

impl Provenance {
    pub fn new(lineage: impl Into<String>) -> Self {
        Self {
            lineage: lineage.into(),
            ..Self::default()
        }
    }

    pub(crate) fn derive(&self, step: impl fmt::Display) -> Self {
        Self {
            lineage: format!("{} | {}", self.lineage, step),
            ..self.clone()
        }
    }
}

/// Dictionary-encoded categorical column with optional entries.
#[derive(Debug, Clone, Default)]
pub(crate) struct Categorical {
    levels: Vec<String>,
    index: HashMap<String, u32>,
    codes: Vec<Option<u32>>,
}

impl Categorical {
    fn push(&mut self, value: Option<&str>) {
        let code = value.map(|v| match self.index.get(v) {
            Some(&c) => c,
            None => {
                let c = self.levels.len() as u32;
                self.levels.push(v.to_owned());
                self.index.insert(v.to_owned(), c);
                c
            }
        });
        self.codes.push(code);
    }

    fn get(&self, row: usize) -> Option<&str> {
        self.codes[row].map(|c| self.levels[c as usize].as_str())
    }
}

/// Immutable columnar table of [`EdgeObservation`]s.
#[derive(Debug, Clone)]
pub struct Dataset {
    request_id: Vec<u64>,
    user_id: Vec<u64>,
    item_id: Vec<u64>,
    position: Vec<u32>,
    outcome: Vec<u8>,
    arm: Categorical,
    reason: Option<Categorical>,
    relevance_score: Option<Vec<Option<f64>>>,
    session_depth: Option<Vec<Option<u32>>>,
    provenance: Provenance,
}

/// Accumulates rows into a [`Dataset`].
#[derive(Debug)]
pub struct DatasetBuilder {
    ds: Dataset,
}

impl DatasetBuilder {
    pub fn new(schema: Schema, provenance: Provenance) -> Self {
        Self {
            ds: Dataset {
                request_id: Vec::new(),
                user_id: Vec::new(),
                item_id: Vec::new(),
                position: Vec::new(),
                outcome: Vec::new(),
                arm: Categorical::default(),
                reason: schema.has_reason.then(Categorical::default),
                relevance_score: schema.has_relevance_score.then(Vec::new),
                session_depth: schema.has_session_depth.then(Vec::new),
                provenance,
            },
        }
    }

    pub fn with_capacity(schema: Schema, provenance: Provenance, rows: usize) -> Self {
        let mut b = Self::new(schema, provenance);
        b.ds.request_id.reserve(rows);
        b.ds.user_id.reserve(rows);
        b.ds.item_id.reserve(rows);
        b.ds.position.reserve(rows);
        b.ds.outcome.reserve(rows);
        b.ds.arm.codes.reserve(rows);
        b
    }

    /// Appends a row. Optional values for columns outside the schema are discarded.
    pub fn push(&mut self, row: &EdgeObservation) {
        self.push_parts(
            row.request_id,
            row.user_id,
            row.item_id,
            row.position,
            row.outcome,
            &row.arm,
            row.reason.as_deref(),
            row.relevance_score,
            row.session_depth,
        );
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push_parts(
        &mut self,
        request_id: u64,
        user_id: u64,
        item_id: u64,
        position: u32,
        outcome: u8,
        arm: &str,
        reason: Option<&str>,
        relevance_score: Option<f64>,
        session_depth: Option<u32>,
    ) {
        let ds = &mut self.ds;
        ds.request_id.push(request_id);
        ds.user_id.push(user_id);
        ds.item_id.push(item_id);
        ds.position.push(position);
        ds.outcome.push(outcome);
        ds.arm.push(Some(arm));
        if let Some(c) = ds.reason.as_mut() {
            c.push(reason);
        }
        if let Some(c) = ds.relevance_score.as_mut() {
            c.push(relevance_score);
        }
        if let Some(c) = ds.session_depth.as_mut() {
            c.push(session_depth);
        }
    }

    pub fn len(&self) -> usize {
        self.ds.request_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn finish(self) -> Dataset {
        self.ds
    }
}

impl Dataset {
    /// Builds a dataset from rows; optional columns are present when any row carries a value.
    pub fn from_rows(rows: &[EdgeObservation], provenance: Provenance) -> Self {
        let schema = Schema {
            has_reason: rows.iter().any(|r| r.reason.is_some()),
            has_relevance_score: rows.iter().any(|r| r.relevance_score.is_some()),
            has_session_depth: rows.iter().any(|r| r.session_depth.is_some()),
        };
        let mut b = DatasetBuilder::with_capacity(schema, provenance, rows.len());
        for r in rows {
            b.push(r);
        }
        b.finish()
    }

    pub fn len(&self) -> usize {
        self.request_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.request_id.is_empty()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            has_reason: self.reason.is_some(),
            has_relevance_score: self.relevance_score.is_some(),
            has_session_depth: self.session_depth.is_some(),
        }
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn request_ids(&self) -> &[u64] {
        &self.request_id
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_id
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_id
    }

    pub fn positions(&self) -> &[u32] {
        &self.position
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcome
    }

    pub fn arm(&self, row: usize) -> &str {
        self.arm.get(row).expect("arm is required")
    }

    pub fn reason(&self, row: usize) -> Option<&str> {
        self.reason.as_ref().and_then(|c| c.get(row))
    }

    pub fn relevance_score(&self, row: usize) -> Option<f64> {
        self.relevance_score.as_ref().and_then(|c| c[row])
    }

    pub fn session_depth(&self, row: usize) -> Option<u32> {
        self.session_depth.as_ref().and_then(|c| c[row])
    }

    pub fn row(&self, i: usize) -> EdgeObservation {
        EdgeObservation {
            request_id: self.request_id[i],
            user_id: self.user_id[i],
            item_id: self.item_id[i],
            position: self.position[i],
            outcome: self.outcome[i],
            arm: self.arm(i).to_owned(),
            reason: self.reason(i).map(str::to_owned),
            relevance_score: self.relevance_score(i),
            session_depth: self.session_depth(i),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = EdgeObservation> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// New dataset holding the given rows, in the given order, with the same schema.
    pub fn select(&self, indices: &[usize], provenance: Provenance) -> Dataset {
        let mut b = DatasetBuilder::with_capacity(self.schema(), provenance, indices.len());
        for &i in indices {
            b.push_parts(
                self.request_id[i],
                self.user_id[i],
                self.item_id[i],
                self.position[i],
                self.outcome[i],
                self.arm(i),
                self.reason(i),
                self.relevance_score(i),
                self.session_depth(i),
            );
        }
        b.finish()
    }

    /// Number of distinct `request_id`s.
    pub fn n_requests(&self) -> usize {
        self.request_id.iter().collect::<HashSet<_>>().len()
    }
}

/// Field-for-field equality of schema and rows; provenance is lineage metadata and is ignored.
impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.schema() == other.schema()
            && self.len() == other.len()
            && (0..self.len()).all(|i| self.row(i) == other.row(i))
    }
}

/// Maps each canonical field to a source column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaMap {
    pub request_id: String,
    pub user_id: String,
    pub item_id: String,
    pub position: String,
    pub outcome: String,
    pub arm: String,
    pub reason: String,
    pub relevance_score: String,
    pub session_depth: String,
}

impl Default for SchemaMap {
    fn default() -> Self {
        Self {
            request_id: "request_id".into(),
            user_id: "user_id".into(),
            item_id: "item_id".into(),
            position: "position".into(),
            outcome: "outcome".into(),
            arm: "arm".into(),
            reason: "reason".into(),
            relevance_score: "relevance_score".into(),
            session_depth: "session_depth".into(),
        }
    }
}

impl SchemaMap {
    fn required(&self) -> [(&'static str, &str); 6] {
        [
            ("request_id", &self.request_id),
            ("user_id", &self.user_id),
            ("item_id", &self.item_id),
            ("position", &self.position),
            ("outcome", &self.outcome),
            ("arm", &self.arm),
        ]
    }
}

/// Source-column positions for each canonical field.
struct FieldIndex {
    required: [usize; 6],
    reason: Option<usize>,
    relevance_score: Option<usize>,
    session_depth: Option<usize>,
}

impl FieldIndex {
    fn resolve(header: &[String], map: &SchemaMap) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let mut required = [0usize; 6];
        for (slot, (field, source)) in required.iter_mut().zip(map.required()) {
            *slot = find(source).ok_or_else(|| Error::MissingColumn(field.to_owned()))?;
        }
        Ok(Self {
            required,
            reason: find(&map.reason),
            relevance_score: find(&map.relevance_score),
            session_depth: find(&map.session_depth),
        })
    }

    fn schema(&self) -> Schema {
        Schema {
            has_reason: self.reason.is_some(),
            has_relevance_score: self.relevance_score.is_some(),
            has_session_depth: self.session_depth.is_some(),
        }
    }

    /// Parses one raw record; `None` when any value fails validation.
    fn parse(&self, raw: &[Option<String>]) -> Option<EdgeObservation> {
        let text = |i: usize| raw.get(i).and_then(|v| v.as_deref()).map(str::trim);
        let opt_text = |i: Option<usize>| i.and_then(text).filter(|t| !t.is_empty());
        let [rq, us, it, po, ou, ar] = self.required;

        let row = EdgeObservation {
            request_id: parse_id(text(rq)?)?,
            user_id: parse_id(text(us)?)?,
            item_id: parse_id(text(it)?)?,
            position: text(po)?.parse::<u32>().ok()?,
            outcome: match text(ou)? {
                "0" => 0,
                "1" => 1,
                _ => return None,
            },
            arm: text(ar).filter(|t| !t.is_empty())?.to_owned(),
            reason: opt_text(self.reason).map(str::to_owned),
            relevance_score: match opt_text(self.relevance_score) {
                None => None,
                Some(t) => Some(t.parse::<f64>().ok()?),
            },
            session_depth: match opt_text(self.session_depth) {
                None => None,
                Some(t) => Some(t.parse::<u32>().ok()?),
            },
        };
        row.is_valid().then_some(row)
    }
}

fn json_scalar_to_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(if *b { "1" } else { "0" }.to_owned()),
        other => Some(other.to_string()),
    }
}

fn is_json_lines(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "ndjson")
    )
}

/// Loads a header-bearing CSV file or, for `.jsonl` / `.ndjson` paths, a JSON-lines file.
///
/// Rows failing validation are dropped and counted in the provenance. Exact
/// duplicate rows are kept and counted.
pub fn load_dataset(path: impl AsRef<Path>, schema_map: &SchemaMap) -> Result<Dataset> {
    let path = path.as_ref();
    let (header, records) = if is_json_lines(path) {
        read_json_lines(path)?
    } else {
        read_csv(path)?
    };
    let fields = FieldIndex::resolve(&header, schema_map)?;

    let mut rows = Vec::with_capacity(records.len());
    let mut dropped = 0usize;
    for raw in &records {
        match fields.parse(raw) {
            Some(row) => rows.push(row),
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_user_arms(rows.iter().map(|r| (r.user_id, r.arm.as_str())))?;

    let mut provenance = Provenance::new(path.display().to_string());
    provenance.dropped_rows = dropped;
    provenance.duplicate_rows = count_duplicates(&rows);

    let mut b = DatasetBuilder::with_capacity(fields.schema(), provenance, rows.len());
    for r in &rows {
        b.push(r);
    }
    Ok(b.finish())
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<String>>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        records.push(rec.iter().map(|v| Some(v.to_owned())).collect());
    }
    Ok((header, records))
}

fn read_json_lines(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<String>>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut objects = Vec::new();
    let mut header: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        for k in obj.keys() {
            if seen.insert(k.clone()) {
                header.push(k.clone());
            }
        }
        objects.push(obj);
    }
    let records = objects
        .iter()
        .map(|obj| {
            header
                .iter()
                .map(|k| obj.get(k).and_then(json_scalar_to_text))
                .collect()
        })
        .collect();
    Ok((header, records))
}

pub(crate) fn check_user_arms<'a>(pairs: impl Iterator<Item = (u64, &'a str)>) -> Result<()> {
    let mut arms: HashMap<u64, &str> = HashMap::new();
    let mut offender: Option<u64> = None;
    for (user, arm) in pairs {
        match arms.get(&user) {
            Some(&a) if a != arm => {
                offender = Some(offender.map_or(user, |o: u64| o.min(user)));
            }
            Some(_) => {}
            None => {
                arms.insert(user, arm);
            }
        }
    }
    match offender {
        Some(user_id) => Err(Error::MixedArmsWithinUser { user_id }),
        None => Ok(()),
    }
}

fn count_duplicates(rows: &[EdgeObservation]) -> usize {
    let mut seen = HashSet::with_capacity(rows.len());
    rows.iter()
        .filter(|r| {
            let key = (
                r.request_id,
                r.user_id,
                r.item_id,
                r.position,
                r.outcome,
                r.arm.clone(),
                r.reason.clone(),
                r.relevance_score.map(f64::to_bits),
                r.session_depth,
            );
            !seen.insert(key)
        })
        .count()
}

/// Writes a dataset as CSV (or JSON lines for `.jsonl` / `.ndjson` paths).
///
/// Optional columns outside the schema are omitted; absent values are written
/// as empty strings (CSV) or omitted keys (JSON lines).
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let names = ds.schema().column_names();

    if is_json_lines(path) {
        for row in ds.rows() {
            let mut obj = serde_json::Map::new();
            obj.insert("request_id".into(), row.request_id.into());
            obj.insert("user_id".into(), row.user_id.into());
            obj.insert("item_id".into(), row.item_id.into());
            obj.insert("position".into(), row.position.into());
            obj.insert("outcome".into(), row.outcome.into());
            obj.insert("arm".into(), row.arm.into());
            if let Some(v) = row.reason {
                obj.insert("reason".into(), v.into());
            }
            if let Some(v) = row.relevance_score {
                obj.insert("relevance_score".into(), v.into());
            }
            if let Some(v) = row.session_depth {
                obj.insert("session_depth".into(), v.into());
            }
            writeln!(out, "{}", serde_json::Value::Object(obj)).map_err(io)?;
        }
    } else {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
        w.write_record(&names).map_err(csv_err)?;
        let mut fields: Vec<String> = Vec::with_capacity(names.len());
        for i in 0..ds.len() {
            fields.clear();
            fields.push(ds.request_id[i].to_string());
            fields.push(ds.user_id[i].to_string());
            fields.push(ds.item_id[i].to_string());
            fields.push(ds.position[i].to_string());
            fields.push(ds.outcome[i].to_string());
            fields.push(ds.arm(i).to_owned());
            if ds.reason.is_some() {
                fields.push(ds.reason(i).unwrap_or("").to_owned());
            }
            if ds.relevance_score.is_some() {
                fields.push(ds.relevance_score(i).map(|v| v.to_string()).unwrap_or_default());
            }
            if ds.session_depth.is_some() {
                fields.push(ds.session_depth(i).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
    }
    out.flush().map_err(io)
}

/// One PYMK session aggregated from its edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionObservation {
    pub request_id: u64,
    pub user_id: u64,
    pub arm: String,
    /// Most frequent reason in the session; ties go to the lexicographically smallest.
    pub reason_mode: Option<String>,
    pub n_top_spot: u32,
    pub n_bottom_spot: u32,
    pub invite_total: u32,
}

/// Session-level table produced by [`crate::prepare::aggregate_sessions`].
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub rows: Vec<SessionObservation>,
    pub top_cut: u32,
    pub provenance: Provenance,
}

impl SessionDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Writes a session table as CSV.
pub fn write_sessions(ds: &SessionDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    w.write_record([
        "request_id",
        "user_id",
        "arm",
        "reason_mode",
        "n_top_spot",
        "n_bottom_spot",
        "invite_total",
    ])
    .map_err(csv_err)?;
    for s in &ds.rows {
        w.write_record([
            s.request_id.to_string(),
            s.user_id.to_string(),
            s.arm.clone(),
            s.reason_mode.clone().unwrap_or_default(),
            s.n_top_spot.to_string(),
            s.n_bottom_spot.to_string(),
            s.invite_total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const TABLE1: &str = "request_id,user_id,item_id,position,outcome,arm\n\
                          1,10,1,1,1,control\n\
                          1,10,2,2,0,control\n\
                          1,10,3,3,0,control\n";

    #[test]
    fn loads_example_observations() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t1.csv", TABLE1);
        let ds = load_dataset(&p, &SchemaMap::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.positions(), &[1, 2, 3]);
        assert!(ds.request_ids().iter().all(|&r| r == 1));
        assert_eq!(ds.outcomes(), &[1, 0, 0]);
        assert_eq!(ds.schema(), Schema::default());
        assert_eq!(ds.provenance().dropped_rows, 0);
    }

    #[test]
    fn header_only_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.csv", "request_id,user_id,item_id,position,outcome,arm\n");
        assert!(matches!(
            load_dataset(&p, &SchemaMap::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn invalid_outcome_row_is_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{TABLE1}2,11,4,1,2,treatment\n");
        let p = write(&dir, "bad.csv", &body);
        let ds = load_dataset(&p, &SchemaMap::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.provenance().dropped_rows, 1);
    }

    #[test]
    fn other_invalid_values_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let body = "request_id,user_id,item_id,position,outcome,arm,relevance_score,session_depth\n\
                    1,1,1,1,1,c,0.5,3\n\
                    1,1,2,0,0,c,0.5,3\n\
                    1,1,3,4,0,c,0.5,3\n\
                    1,1,4,2,0,c,1.5,3\n\
                    1,1,5,2,0,,0.5,3\n\
                    ,1,6,2,0,c,0.5,3\n\
                    1,1,7,2,0,c,abc,3\n\
                    1,1,8,3,0,c,,\n";
        let p = write(&dir, "v.csv", body);
        let ds = load_dataset(&p, &SchemaMap::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.provenance().dropped_rows, 6);
        assert_eq!(ds.relevance_score(1), None);
        assert_eq!(ds.session_depth(1), None);
    }

    #[test]
    fn missing_required_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.csv", "request_id,user_id,item_id,position,arm\n1,1,1,1,c\n");
        match load_dataset(&p, &SchemaMap::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "outcome"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_map_renames_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.csv",
            "Request,Viewer,Candidate,Rank,Invite,Variant,pInviteScore\n1,1,1,1,0,A,0.2\n",
        );
        let map = SchemaMap {
            request_id: "Request".into(),
            user_id: "Viewer".into(),
            item_id: "Candidate".into(),
            position: "Rank".into(),
            outcome: "Invite".into(),
            arm: "Variant".into(),
            relevance_score: "pInviteScore".into(),
            ..SchemaMap::default()
        };
        let ds = load_dataset(&p, &map).unwrap();
        assert_eq!(ds.relevance_score(0), Some(0.2));
        assert!(ds.schema().has_relevance_score);
        assert!(!ds.schema().has_reason);
    }

    #[test]
    fn mixed_arms_within_user_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "x.csv",
            "request_id,user_id,item_id,position,outcome,arm\n1,5,1,1,0,control\n2,5,1,1,0,treatment\n",
        );
        assert!(matches!(
            load_dataset(&p, &SchemaMap::default()),
            Err(Error::MixedArmsWithinUser { user_id: 5 })
        ));
    }

    #[test]
    fn non_numeric_ids_hash_with_fnv1a() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(parse_id("42"), Some(42));
        assert_eq!(parse_id("campaign-A"), Some(fnv1a64(b"campaign-A")));
        assert_eq!(parse_id("  "), None);
    }

    #[test]
    fn duplicates_are_counted_not_removed() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{TABLE1}1,10,3,3,0,control\n");
        let p = write(&dir, "d.csv", &body);
        let ds = load_dataset(&p, &SchemaMap::default()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.provenance().duplicate_rows, 1);
    }

    #[test]
    fn json_lines_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"request_id\":1,\"user_id\":\"alice\",\"item_id\":3,\"position\":2,\"outcome\":1,\"arm\":\"treatment\",\"relevance_score\":0.25}\n\
             {\"request_id\":1,\"user_id\":\"alice\",\"item_id\":4,\"position\":1,\"outcome\":0,\"arm\":\"treatment\"}\n",
        );
        let ds = load_dataset(&p, &SchemaMap::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.user_ids()[0], fnv1a64(b"alice"));
        assert_eq!(ds.relevance_score(0), Some(0.25));
        assert_eq!(ds.relevance_score(1), None);
    }

    #[test]
    fn write_to_empty_path_fails() {
        let ds = Dataset::from_rows(
            &[EdgeObservation {
                request_id: 1,
                user_id: 1,
                item_id: 1,
                position: 1,
                outcome: 0,
                arm: "control".into(),
                reason: None,
                relevance_score: None,
                session_depth: None,
            }],
            Provenance::new("test"),
        );
        assert!(matches!(write_dataset(&ds, ""), Err(Error::Io { .. })));
    }

    #[test]
    fn absent_optional_columns_are_omitted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t1.csv", TABLE1);
        let ds = load_dataset(&p, &SchemaMap::default()).unwrap();
        let out = dir.path().join("out.csv");
        write_dataset(&ds, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "request_id,user_id,item_id,position,outcome,arm"
        );
        let back = load_dataset(&out, &SchemaMap::default()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.schema(), Schema::default());
    }
}

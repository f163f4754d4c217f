//! CSV event streams, tumbling windows, and the numeric state fed to the agent.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::{ActionSpace, EventSchema, Pattern};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown event type `{name}`")]
    UnknownType { line: u64, name: String },
    #[error("line {line}: attribute `{attr}` is not numeric: `{value}`")]
    NonNumeric { line: u64, attr: String, value: String },
    #[error("line {line}: timestamp {ts} is earlier than the previous record ({prev})")]
    TimestampRegression { line: u64, ts: f64, prev: f64 },
    #[error("header: {0}")]
    Header(String),
}

/// One timestamped event. Attributes are indexed like `EventSchema::attributes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub ts: f64,
    pub event_type: usize,
    pub attrs: Vec<Option<f64>>,
}

impl Record {
    pub fn attr(&self, index: usize) -> Option<f64> {
        self.attrs.get(index).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub records: Vec<Record>,
}

/// A finite, timestamp-ordered stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventStream {
    records: Vec<Record>,
}

impl EventStream {
    /// Builds a stream, rejecting timestamp regressions.
    pub fn new(records: Vec<Record>) -> Result<Self, StreamError> {
        for (i, pair) in records.windows(2).enumerate() {
            if pair[1].ts < pair[0].ts {
                return Err(StreamError::TimestampRegression {
                    line: i as u64 + 2,
                    ts: pair[1].ts,
                    prev: pair[0].ts,
                });
            }
        }
        Ok(EventStream { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of windows, counting a trailing partial one.
    pub fn window_count(&self, window_len: usize) -> usize {
        self.records.len().div_ceil(window_len)
    }

    /// Records `[i*len, (i+1)*len)`; the final partial window is returned as is.
    pub fn window_at(&self, i: usize, window_len: usize) -> Option<Window> {
        let start = i.checked_mul(window_len)?;
        if window_len == 0 || start >= self.records.len() {
            return None;
        }
        let end = (start + window_len).min(self.records.len());
        Some(Window { index: i, records: self.records[start..end].to_vec() })
    }
}

/// Reads a CSV stream (`ts,type,<attr>...`) from disk.
pub fn read_stream(path: impl AsRef<Path>, schema: &EventSchema) -> Result<EventStream, StreamError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| StreamError::Open { path: path.display().to_string(), source })?;
    read_stream_from(file, schema)
}

pub fn read_stream_from<R: Read>(reader: R, schema: &EventSchema) -> Result<EventStream, StreamError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| StreamError::Header(e.to_string()))?.clone();
    if headers.len() < 2 || headers.get(0) != Some("ts") || headers.get(1) != Some("type") {
        return Err(StreamError::Header("expected `ts,type,...`".into()));
    }
    let mut columns = Vec::new();
    for name in headers.iter().skip(2) {
        let idx = schema
            .attr_index(name)
            .ok_or_else(|| StreamError::Header(format!("unknown attribute column `{name}`")))?;
        if columns.contains(&idx) {
            return Err(StreamError::Header(format!("duplicate attribute column `{name}`")));
        }
        columns.push(idx);
    }

    let mut records = Vec::new();
    let mut prev_ts = f64::NEG_INFINITY;
    for row in rdr.records() {
        let row = row.map_err(|e| StreamError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let ts_text = row.get(0).unwrap_or("").trim();
        let ts: f64 = ts_text
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| StreamError::Malformed { line, message: format!("bad timestamp `{ts_text}`") })?;
        if ts < prev_ts {
            return Err(StreamError::TimestampRegression { line, ts, prev: prev_ts });
        }
        prev_ts = ts;
        let ty = row.get(1).unwrap_or("").trim();
        let event_type =
            schema.type_index(ty).ok_or_else(|| StreamError::UnknownType { line, name: ty.to_string() })?;
        let mut attrs = vec![None; schema.attributes().len()];
        for (col, &attr) in columns.iter().enumerate() {
            let cell = row.get(col + 2).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| StreamError::NonNumeric {
                line,
                attr: schema.attributes()[attr].clone(),
                value: cell.to_string(),
            })?;
            attrs[attr] = Some(v);
        }
        records.push(Record { ts, event_type, attrs });
    }
    Ok(EventStream { records })
}

/// Writes records in the CSV layout `read_stream` accepts.
pub fn write_stream<W: std::io::Write>(writer: W, schema: &EventSchema, records: &[Record]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ts".to_string(), "type".to_string()];
    header.extend(schema.attributes().iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![format!("{}", r.ts), schema.event_types()[r.event_type].clone()];
        row.extend(r.attrs.iter().map(|a| a.map(|v| format!("{v}")).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Running per-attribute normalizer: `max(|value|, 1)` over everything observed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScales {
    max_abs: Vec<f64>,
}

impl AttributeScales {
    pub fn new(n_attrs: usize) -> Self {
        AttributeScales { max_abs: vec![1.0; n_attrs] }
    }

    pub fn observe(&mut self, records: &[Record]) {
        for r in records {
            for (m, v) in self.max_abs.iter_mut().zip(&r.attrs) {
                if let Some(v) = v {
                    *m = m.max(v.abs());
                }
            }
        }
    }

    pub fn scale(&self, attr: usize) -> f64 {
        self.max_abs[attr]
    }
}

/// Fixed-length numeric state: window embedding followed by the partial-pattern encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn concat(window_part: &[f64], pattern_part: &[f64]) -> StateVector {
        let mut v = Vec::with_capacity(window_part.len() + pattern_part.len());
        v.extend_from_slice(window_part);
        v.extend_from_slice(pattern_part);
        StateVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn window_embedding_len(schema: &EventSchema) -> usize {
    let e = schema.event_types().len();
    e + 3 * e * schema.attributes().len()
}

pub fn pattern_encoding_len(space: &ActionSpace) -> usize {
    space.max_len() * (space.n_event_actions() + space.max_conds() * space.n_condition_actions())
}

pub fn state_len(space: &ActionSpace) -> usize {
    window_embedding_len(space.schema()) + pattern_encoding_len(space)
}

/// Per event type: count fraction; then per (type, attribute): mean, min, max divided
/// by the attribute scale. Absent values contribute zeros.
pub fn embed_window(w: &Window, schema: &EventSchema, scales: &AttributeScales) -> Vec<f64> {
    let n_types = schema.event_types().len();
    let n_attrs = schema.attributes().len();
    let mut out = vec![0.0; window_embedding_len(schema)];
    if w.records.is_empty() {
        return out;
    }
    let mut counts = vec![0usize; n_types];
    let mut sums = vec![0.0; n_types * n_attrs];
    let mut seen = vec![0usize; n_types * n_attrs];
    let mut mins = vec![f64::INFINITY; n_types * n_attrs];
    let mut maxs = vec![f64::NEG_INFINITY; n_types * n_attrs];
    for r in &w.records {
        counts[r.event_type] += 1;
        for a in 0..n_attrs {
            if let Some(v) = r.attr(a) {
                let k = r.event_type * n_attrs + a;
                sums[k] += v;
                seen[k] += 1;
                mins[k] = mins[k].min(v);
                maxs[k] = maxs[k].max(v);
            }
        }
    }
    let total = w.records.len() as f64;
    for t in 0..n_types {
        out[t] = counts[t] as f64 / total;
    }
    for t in 0..n_types {
        for a in 0..n_attrs {
            let k = t * n_attrs + a;
            if seen[k] == 0 {
                continue;
            }
            let s = scales.scale(a);
            let base = n_types + 3 * k;
            out[base] = sums[k] / seen[k] as f64 / s;
            out[base + 1] = mins[k] / s;
            out[base + 2] = maxs[k] / s;
        }
    }
    out
}

/// `max_len` slots, each a one-hot event type (last position = empty) followed by
/// `max_conds` one-hots over the condition action index (nop position = empty).
pub fn encode_partial_pattern(p: &Pattern, space: &ActionSpace) -> Vec<f64> {
    let ne = space.n_event_actions();
    let nc = space.n_condition_actions();
    let slot_len = ne + space.max_conds() * nc;
    let mut out = vec![0.0; pattern_encoding_len(space)];
    for slot in 0..space.max_len() {
        let base = slot * slot_len;
        let event = p.events.get(slot);
        let ev_idx = event.and_then(|e| space.schema().type_index(&e.event_type)).unwrap_or(space.event_nop());
        out[base + ev_idx] = 1.0;
        for j in 0..space.max_conds() {
            let c_idx = event
                .and_then(|e| e.conditions.get(j))
                .and_then(|c| space.index_of_condition(slot, c))
                .unwrap_or(space.condition_nop());
            out[base + ne + j * nc + c_idx] = 1.0;
        }
    }
    out
}

/// Per-attribute median over a window; `None` where the attribute never occurs.
pub fn attribute_medians(records: &[Record], n_attrs: usize) -> Vec<Option<f64>> {
    (0..n_attrs)
        .map(|a| {
            let mut vals: Vec<f64> = records.iter().filter_map(|r| r.attr(a)).collect();
            if vals.is_empty() {
                return None;
            }
            vals.sort_by(f64::total_cmp);
            let n = vals.len();
            Some(if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) })
        })
        .collect()
}

/// Observed `[min, max]` per attribute.
pub fn attribute_ranges(records: &[Record], n_attrs: usize) -> Vec<Option<(f64, f64)>> {
    let mut out: Vec<Option<(f64, f64)>> = vec![None; n_attrs];
    for r in records {
        for (a, slot) in out.iter_mut().enumerate() {
            if let Some(v) = r.attr(a) {
                *slot = Some(match *slot {
                    None => (v, v),
                    Some((lo, hi)) => (lo.min(v), hi.max(v)),
                });
            }
        }
    }
    out
}

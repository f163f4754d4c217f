//! Implementations behind the `match`, `complete` and `gen-data` subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cepmine_core::bayes::{complete, extract_holes, BayesBudget, Completion};
use cepmine_core::matcher::{count_matches, CompiledPattern, MatchCount};
use cepmine_core::pattern::{parse_pattern, CmpOp, EventSchema, Pattern};
use cepmine_core::stream::{attribute_ranges, read_stream, write_stream, EventStream};
use cepmine_core::synth::{generate_stream, TargetsFile};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Event types in order of first appearance, attribute columns from the header,
/// and the three comparison operators.
pub fn infer_schema(data: &Path) -> Result<EventSchema> {
    let mut rdr = csv::Reader::from_path(data).with_context(|| format!("cannot open {}", data.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || headers.get(0) != Some("ts") || headers.get(1) != Some("type") {
        bail!("{}: header must start with `ts,type`", data.display());
    }
    let attributes: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut types: Vec<String> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let t = row.get(1).unwrap_or("").trim();
        if !t.is_empty() && !types.iter().any(|x| x == t) {
            types.push(t.to_string());
        }
    }
    Ok(EventSchema::new(types, attributes, vec![CmpOp::Lt, CmpOp::Gt, CmpOp::Eq])?)
}

/// Reads a schema JSON file when given, otherwise infers one from the data.
pub fn load_schema(schema: Option<&Path>, data: &Path) -> Result<EventSchema> {
    match schema {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}: invalid schema", p.display()))
        }
        None => infer_schema(data),
    }
}

/// A pattern given inline or as the path of a file holding its text.
pub fn read_pattern(arg: &str, schema: &EventSchema) -> Result<Pattern> {
    let path = Path::new(arg);
    let text = if path.is_file() { std::fs::read_to_string(path)? } else { arg.to_string() };
    Ok(parse_pattern(text.trim(), schema)?)
}

pub fn load_stream(data: &Path, schema: &EventSchema) -> Result<EventStream> {
    read_stream(data, schema).with_context(|| format!("reading {}", data.display()))
}

/// Match count of `p` in every window of the stream.
pub fn window_counts(p: &Pattern, stream: &EventStream, schema: &EventSchema, window_len: usize, cap: u64) -> Result<Vec<MatchCount>> {
    if window_len == 0 {
        bail!("window length must be positive");
    }
    (0..stream.window_count(window_len))
        .map(|i| {
            let w = stream.window_at(i, window_len).expect("index below window count");
            Ok(count_matches(p, &w, schema, cap)?)
        })
        .collect()
}

pub fn write_counts<W: Write>(mut out: W, counts: &[MatchCount]) -> std::io::Result<()> {
    writeln!(out, "window_index,count,capped")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(out, "{i},{},{}", c.count, c.capped)?;
    }
    out.flush()
}

pub struct CompleteOptions {
    pub window_len: usize,
    pub cap: u64,
    pub eq_eps: f64,
    pub budget: BayesBudget,
    pub seed: u64,
}

/// Fills the holes of `formula` to maximize its total match count over all
/// windows; hole bounds come from the observed attribute ranges.
pub fn complete_formula(formula: &Pattern, stream: &EventStream, schema: &EventSchema, opts: &CompleteOptions) -> Result<Completion> {
    if opts.window_len == 0 {
        bail!("window length must be positive");
    }
    let ranges = attribute_ranges(stream.records(), schema.attributes().len());
    let space = extract_holes(formula, schema, &ranges)?;
    let windows: Vec<_> = (0..stream.window_count(opts.window_len)).filter_map(|i| stream.window_at(i, opts.window_len)).collect();
    let objective = |x: &[f64]| match CompiledPattern::compile(&space.instantiate(formula, x), schema, opts.eq_eps) {
        Ok(c) => windows.iter().map(|w| c.count(&w.records, opts.cap).count as f64).sum(),
        Err(_) => 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    Ok(complete(formula, &space, objective, opts.budget, &mut rng)?)
}

/// Writes a synthetic stream with planted targets; returns the number of rows.
pub fn gen_data(out: &Path, spec: &TargetsFile, rows: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = generate_stream(spec, rows, &mut rng)?;
    let f = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_stream(BufWriter::new(f), &spec.schema, &records)?;
    Ok(records.len())
}

pub fn load_targets(path: Option<&Path>) -> Result<TargetsFile> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let spec: TargetsFile = serde_json::from_str(&text).with_context(|| format!("{}: invalid targets file", p.display()))?;
            spec.parsed_targets()?;
            Ok(spec)
        }
        None => Ok(TargetsFile::default_corpus()),
    }
}

//! Pattern data model, the textual pattern language, and action/pattern space sizes.
//!
//! A pattern is an ordered `SEQ` of typed events, each with a conjunction of
//! attribute conditions, constrained to occur within a time window:
//!
//! ```text
//! EVENTS SEQ(B a, C b) WHERE b.value = 2048 WITHIN 10s
//! ```
//!
//! Conditions are attached to the event named on their left-hand side. A
//! condition compares that event's attribute either with a constant, with the
//! same attribute of another event, or with a hole (`?1`) that is filled in
//! later by [`crate::bayes`].

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("duplicate {kind} name `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("`{0}` is not a valid identifier")]
    BadName(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown event type `{0}`")]
    UnknownEventType(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("operator `{0}` is not part of the schema")]
    UnknownOperator(String),
    #[error("unknown alias `{0}`")]
    UnknownAlias(String),
    #[error("duplicate alias `{0}`")]
    DuplicateAlias(String),
    #[error("condition compares `{left}` with `{right}`; cross-event conditions must use the same attribute")]
    CrossAttribute { left: String, right: String },
    #[error("condition on `{0}` references its own event")]
    SelfReference(String),
    #[error("hole ?{0} appears more than once")]
    DuplicateHole(u32),
    #[error("pattern has {got} events, at most {max} allowed")]
    TooManyEvents { got: usize, max: usize },
    #[error("event `{alias}` has {got} conditions, at most {max} allowed")]
    TooManyConditions { alias: String, got: usize, max: usize },
    #[error("time window must be positive and finite, got {0}")]
    BadWithin(f64),
    #[error("pattern has no events")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpaceError {
    #[error("space size arguments must be positive")]
    NonPositive,
    #[error("action space size does not fit below 2^63")]
    Overflow,
}

/// Comparison operators of the pattern language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Gt, CmpOp::Eq, CmpOp::Ne, CmpOp::Le, CmpOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<CmpOp> {
        CmpOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Evaluates `lhs op rhs`. Equality and inequality use an absolute tolerance.
    pub fn eval(self, lhs: f64, rhs: f64, eq_eps: f64) -> bool {
        let eq = (lhs - rhs).abs() <= eq_eps;
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Eq => eq,
            CmpOp::Ne => !eq,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

const KEYWORDS: [&str; 6] = ["events", "seq", "where", "within", "and", "true"];

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

/// The sets E (event types), A (attributes) and O (operators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct EventSchema {
    event_types: Vec<String>,
    attributes: Vec<String>,
    operators: Vec<CmpOp>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    event_types: Vec<String>,
    attributes: Vec<String>,
    operators: Vec<String>,
}

impl TryFrom<RawSchema> for EventSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        let ops = raw
            .operators
            .iter()
            .map(|s| CmpOp::from_symbol(s).ok_or_else(|| SchemaError::UnknownOperator(s.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        EventSchema::new(raw.event_types, raw.attributes, ops)
    }
}

impl From<EventSchema> for RawSchema {
    fn from(s: EventSchema) -> Self {
        RawSchema {
            event_types: s.event_types,
            attributes: s.attributes,
            operators: s.operators.iter().map(|o| o.symbol().to_string()).collect(),
        }
    }
}

impl EventSchema {
    pub fn new(
        event_types: Vec<String>,
        attributes: Vec<String>,
        operators: Vec<CmpOp>,
    ) -> Result<Self, SchemaError> {
        check_names("event type", &event_types)?;
        check_names("attribute", &attributes)?;
        if operators.is_empty() {
            return Err(SchemaError::Empty("operators"));
        }
        let mut seen = HashSet::new();
        for op in &operators {
            if !seen.insert(*op) {
                return Err(SchemaError::Duplicate { kind: "operator", name: op.symbol().into() });
            }
        }
        Ok(EventSchema { event_types, attributes, operators })
    }

    /// Convenience constructor from string slices; operators given by symbol.
    pub fn from_names(types: &[&str], attrs: &[&str], ops: &[&str]) -> Result<Self, SchemaError> {
        let ops = ops
            .iter()
            .map(|s| CmpOp::from_symbol(s).ok_or_else(|| SchemaError::UnknownOperator(s.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        EventSchema::new(
            types.iter().map(|s| s.to_string()).collect(),
            attrs.iter().map(|s| s.to_string()).collect(),
            ops,
        )
    }

    pub fn event_types(&self) -> &[String] {
        &self.event_types
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn operators(&self) -> &[CmpOp] {
        &self.operators
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.event_types.iter().position(|t| t == name)
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub fn op_index(&self, op: CmpOp) -> Option<usize> {
        self.operators.iter().position(|o| *o == op)
    }
}

fn check_names(kind: &'static str, names: &[String]) -> Result<(), SchemaError> {
    if names.is_empty() {
        return Err(SchemaError::Empty(kind));
    }
    let mut seen = HashSet::new();
    for n in names {
        if !is_identifier(n) || is_keyword(n) {
            return Err(SchemaError::BadName(n.clone()));
        }
        if !seen.insert(n.as_str()) {
            return Err(SchemaError::Duplicate { kind, name: n.clone() });
        }
    }
    Ok(())
}

/// The INIT tuple plus the knobs the miner needs to interpret a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    pub schema: EventSchema,
    pub max_len: usize,
    pub max_conds: usize,
    pub within_seconds: f64,
    pub scale: u32,
    pub jump_interval: usize,
    pub window_len: usize,
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid mining config: {0}")]
pub struct ConfigError(pub String);

impl MiningConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        if self.max_len < 1 {
            return fail("max_len must be >= 1");
        }
        if self.max_conds < 1 {
            return fail("max_conds must be >= 1");
        }
        if !(self.within_seconds.is_finite() && self.within_seconds > 0.0) {
            return fail("within_seconds must be positive");
        }
        if self.scale < 2 {
            return fail("scale must be >= 2");
        }
        if self.jump_interval < 1 {
            return fail("jump_interval must be >= 1");
        }
        if self.window_len < 1 {
            return fail("window_len must be >= 1");
        }
        Ok(())
    }
}

/// Right-hand side of a condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConditionTarget {
    /// 0-based position of another event in the pattern.
    EventRef(usize),
    Constant(f64),
    /// Unresolved constant placeholder, rendered as `?id`.
    Hole(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub attribute: String,
    pub op: CmpOp,
    pub target: ConditionTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternEvent {
    pub event_type: String,
    pub alias: String,
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub events: Vec<PatternEvent>,
    pub within_seconds: f64,
}

/// Default alias for the event at `index`: a, b, ..., z, e26, e27, ...
pub fn default_alias(index: usize) -> String {
    if index < 26 {
        ((b'a' + index as u8) as char).to_string()
    } else {
        format!("e{index}")
    }
}

impl Pattern {
    pub fn empty(within_seconds: f64) -> Self {
        Pattern { events: Vec::new(), within_seconds }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends an event with the default alias for its position.
    pub fn push_event(&mut self, event_type: impl Into<String>) {
        let alias = default_alias(self.events.len());
        self.events.push(PatternEvent { event_type: event_type.into(), alias, conditions: Vec::new() });
    }

    pub fn holes(&self) -> Vec<(usize, &Condition, u32)> {
        let mut out = Vec::new();
        for (i, ev) in self.events.iter().enumerate() {
            for c in &ev.conditions {
                if let ConditionTarget::Hole(id) = c.target {
                    out.push((i, c, id));
                }
            }
        }
        out
    }

    pub fn has_holes(&self) -> bool {
        self.events
            .iter()
            .flat_map(|e| &e.conditions)
            .any(|c| matches!(c.target, ConditionTarget::Hole(_)))
    }

    pub fn condition_count(&self) -> usize {
        self.events.iter().map(|e| e.conditions.len()).sum()
    }

    /// Next unused hole id (ids start at 1).
    pub fn next_hole_id(&self) -> u32 {
        self.holes().iter().map(|(_, _, id)| *id).max().unwrap_or(0) + 1
    }

    /// Replaces every hole by a constant. `value_of` receives the hole id, the
    /// owning event position and the condition.
    pub fn fill_holes(&self, mut value_of: impl FnMut(u32, usize, &Condition) -> f64) -> Pattern {
        let mut out = self.clone();
        for (i, ev) in out.events.iter_mut().enumerate() {
            for c in ev.conditions.iter_mut() {
                if let ConditionTarget::Hole(id) = c.target {
                    let v = value_of(id, i, c);
                    c.target = ConditionTarget::Constant(v);
                }
            }
        }
        out
    }

    /// Checks structural invariants against a schema and optional size limits.
    pub fn validate(&self, schema: &EventSchema, limits: Option<(usize, usize)>) -> Result<(), PatternError> {
        if let Some((max_len, _)) = limits {
            if self.events.len() > max_len {
                return Err(PatternError::TooManyEvents { got: self.events.len(), max: max_len });
            }
        }
        if !(self.within_seconds.is_finite() && self.within_seconds > 0.0) {
            return Err(PatternError::BadWithin(self.within_seconds));
        }
        let mut aliases = HashSet::new();
        let mut holes = HashSet::new();
        for (i, ev) in self.events.iter().enumerate() {
            if schema.type_index(&ev.event_type).is_none() {
                return Err(PatternError::UnknownEventType(ev.event_type.clone()));
            }
            if !aliases.insert(ev.alias.as_str()) {
                return Err(PatternError::DuplicateAlias(ev.alias.clone()));
            }
            if let Some((_, max_conds)) = limits {
                if ev.conditions.len() > max_conds {
                    return Err(PatternError::TooManyConditions {
                        alias: ev.alias.clone(),
                        got: ev.conditions.len(),
                        max: max_conds,
                    });
                }
            }
            for c in &ev.conditions {
                if schema.attr_index(&c.attribute).is_none() {
                    return Err(PatternError::UnknownAttribute(c.attribute.clone()));
                }
                if schema.op_index(c.op).is_none() {
                    return Err(PatternError::UnknownOperator(c.op.symbol().into()));
                }
                match c.target {
                    ConditionTarget::EventRef(k) => {
                        if k >= self.events.len() {
                            return Err(PatternError::UnknownAlias(format!("#{k}")));
                        }
                        if k == i {
                            return Err(PatternError::SelfReference(ev.alias.clone()));
                        }
                    }
                    ConditionTarget::Hole(id) => {
                        if !holes.insert(id) {
                            return Err(PatternError::DuplicateHole(id));
                        }
                    }
                    ConditionTarget::Constant(v) => {
                        if !v.is_finite() {
                            return Err(PatternError::Syntax { pos: 0, message: "non-finite constant".into() });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_pattern(self))
    }
}

/// Canonical text form. Holes render as `?id`; an event list without conditions
/// renders `WHERE true`.
pub fn render_pattern(p: &Pattern) -> String {
    let evlist = p
        .events
        .iter()
        .map(|e| format!("{} {}", e.event_type, e.alias))
        .collect::<Vec<_>>()
        .join(", ");
    let mut conds = Vec::new();
    for ev in &p.events {
        for c in &ev.conditions {
            let rhs = match c.target {
                ConditionTarget::Constant(v) => format!("{v}"),
                ConditionTarget::Hole(id) => format!("?{id}"),
                ConditionTarget::EventRef(k) => {
                    let alias = p.events.get(k).map(|e| e.alias.as_str()).unwrap_or("?");
                    format!("{alias}.{}", c.attribute)
                }
            };
            conds.push(format!("{}.{} {} {}", ev.alias, c.attribute, c.op, rhs));
        }
    }
    let where_clause = if conds.is_empty() { "true".to_string() } else { conds.join(" AND ") };
    format!("EVENTS SEQ({evlist}) WHERE {where_clause} WITHIN {}s", p.within_seconds)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Hole(u32),
    Op(CmpOp),
    LParen,
    RParen,
    Comma,
    Dot,
}

fn syntax(pos: usize, message: impl Into<String>) -> PatternError {
    PatternError::Syntax { pos, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, PatternError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
            }
            b'(' => {
                toks.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                toks.push((start, Tok::RParen));
                i += 1;
            }
            b',' => {
                toks.push((start, Tok::Comma));
                i += 1;
            }
            b'.' if !bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()) => {
                toks.push((start, Tok::Dot));
                i += 1;
            }
            b'<' | b'>' | b'=' | b'!' => {
                let two = bytes.get(i + 1) == Some(&b'=');
                let sym = if two && c != b'=' { &text[i..i + 2] } else { &text[i..i + 1] };
                let op = CmpOp::from_symbol(sym).ok_or_else(|| syntax(start, format!("unexpected `{sym}`")))?;
                i += sym.len();
                toks.push((start, Tok::Op(op)));
            }
            b'?' => {
                i += 1;
                let s = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let id: u32 = text[s..i].parse().map_err(|_| syntax(start, "expected hole number after `?`"))?;
                toks.push((start, Tok::Hole(id)));
            }
            b'0'..=b'9' | b'-' | b'+' | b'.' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let v: f64 = text[start..i]
                    .parse()
                    .map_err(|_| syntax(start, format!("bad number `{}`", &text[start..i])))?;
                toks.push((start, Tok::Number(v)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((start, Tok::Ident(text[start..i].to_string())));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    schema: &'a EventSchema,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), PatternError> {
        let at = self.offset();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(syntax(at, format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), PatternError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw) => Ok(()),
            _ => Err(syntax(at, format!("expected `{}`", kw.to_ascii_uppercase()))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn ident(&mut self, what: &str) -> Result<String, PatternError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Ident(s)) if !is_keyword(&s) => Ok(s),
            _ => Err(syntax(at, format!("expected {what}"))),
        }
    }

    fn attribute(&mut self) -> Result<String, PatternError> {
        let a = self.ident("attribute name")?;
        if self.schema.attr_index(&a).is_none() {
            return Err(PatternError::UnknownAttribute(a));
        }
        Ok(a)
    }

    fn alias_index(events: &[PatternEvent], alias: &str) -> Result<usize, PatternError> {
        events
            .iter()
            .position(|e| e.alias == alias)
            .ok_or_else(|| PatternError::UnknownAlias(alias.to_string()))
    }

    fn pattern(&mut self) -> Result<Pattern, PatternError> {
        self.keyword("events")?;
        self.keyword("seq")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut events: Vec<PatternEvent> = Vec::new();
        loop {
            let ty = self.ident("event type")?;
            if self.schema.type_index(&ty).is_none() {
                return Err(PatternError::UnknownEventType(ty));
            }
            let alias = self.ident("event alias")?;
            if events.iter().any(|e| e.alias == alias) {
                return Err(PatternError::DuplicateAlias(alias));
            }
            events.push(PatternEvent { event_type: ty, alias, conditions: Vec::new() });
            match self.peek() {
                Some(Tok::Comma) => {
                    self.pos += 1;
                }
                _ => break,
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        self.keyword("where")?;
        if self.at_keyword("true") {
            self.pos += 1;
        } else {
            loop {
                self.condition(&mut events)?;
                if self.at_keyword("and") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.keyword("within")?;
        let at = self.offset();
        let within = match self.next() {
            Some(Tok::Number(v)) => v,
            _ => return Err(syntax(at, "expected time window duration")),
        };
        let at = self.offset();
        match self.next() {
            Some(Tok::Ident(s)) if s == "s" => {}
            _ => return Err(syntax(at, "expected `s` after time window")),
        }
        if self.pos < self.toks.len() {
            return Err(syntax(self.offset(), "trailing input"));
        }
        if !(within.is_finite() && within > 0.0) {
            return Err(PatternError::BadWithin(within));
        }
        Ok(Pattern { events, within_seconds: within })
    }

    fn condition(&mut self, events: &mut [PatternEvent]) -> Result<(), PatternError> {
        let owner_alias = self.ident("alias")?;
        let owner = Self::alias_index(events, &owner_alias)?;
        self.expect(Tok::Dot, "`.`")?;
        let attribute = self.attribute()?;
        let at = self.offset();
        let op = match self.next() {
            Some(Tok::Op(op)) => op,
            _ => return Err(syntax(at, "expected comparison operator")),
        };
        if self.schema.op_index(op).is_none() {
            return Err(PatternError::UnknownOperator(op.symbol().into()));
        }
        let at = self.offset();
        let target = match self.next() {
            Some(Tok::Number(v)) => ConditionTarget::Constant(v),
            Some(Tok::Hole(id)) => ConditionTarget::Hole(id),
            Some(Tok::Ident(other)) if !is_keyword(&other) => {
                let k = Self::alias_index(events, &other)?;
                self.expect(Tok::Dot, "`.`")?;
                let rhs_attr = self.attribute()?;
                if rhs_attr != attribute {
                    return Err(PatternError::CrossAttribute {
                        left: format!("{owner_alias}.{attribute}"),
                        right: format!("{other}.{rhs_attr}"),
                    });
                }
                if k == owner {
                    return Err(PatternError::SelfReference(owner_alias));
                }
                ConditionTarget::EventRef(k)
            }
            _ => return Err(syntax(at, "expected number, `?N` or alias.attribute")),
        };
        events[owner].conditions.push(Condition { attribute, op, target });
        Ok(())
    }
}

/// Parses pattern text without size limits.
pub fn parse_pattern(text: &str, schema: &EventSchema) -> Result<Pattern, PatternError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0, end: text.len(), schema };
    let p = parser.pattern()?;
    p.validate(schema, None)?;
    Ok(p)
}

/// Parses pattern text and enforces `max_len` events and `max_conds` conditions per event.
pub fn parse_pattern_limited(
    text: &str,
    schema: &EventSchema,
    max_len: usize,
    max_conds: usize,
) -> Result<Pattern, PatternError> {
    let p = parse_pattern(text, schema)?;
    p.validate(schema, Some((max_len, max_conds)))?;
    Ok(p)
}

fn binomial_checked(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// |C| = |A| * |O| * L: one condition per (attribute, operator, target) where the
/// target is a constant or one of the other L - 1 events.
pub fn condition_count(schema: &EventSchema, max_len: usize) -> usize {
    schema.attributes().len() * schema.operators().len() * max_len
}

/// `|E| * sum_{i=0}^{max_conds} C(|C|, i)`.
pub fn action_space_size(schema: &EventSchema, max_len: usize, max_conds: usize) -> Result<u64, SpaceError> {
    if max_len == 0 || max_conds == 0 {
        return Err(SpaceError::NonPositive);
    }
    let c = condition_count(schema, max_len) as u128;
    let mut sum: u128 = 0;
    for i in 0..=max_conds as u128 {
        let b = binomial_checked(c, i).ok_or(SpaceError::Overflow)?;
        sum = sum.checked_add(b).ok_or(SpaceError::Overflow)?;
    }
    let total = sum.checked_mul(schema.event_types().len() as u128).ok_or(SpaceError::Overflow)?;
    if total >= 1u128 << 63 {
        return Err(SpaceError::Overflow);
    }
    Ok(total as u64)
}

/// `sum_{i=0}^{L} |Action-Space|^i`. `L = 0` gives 1 (the empty pattern).
/// Returns `+inf` when the float range overflows.
pub fn pattern_space_size(schema: &EventSchema, max_len: usize, max_conds: usize) -> f64 {
    if max_len == 0 {
        return 1.0;
    }
    let per_event = match action_space_size(schema, max_len, max_conds) {
        Ok(n) => n as f64,
        Err(_) => {
            // Beyond 2^63: recompute in floating point.
            let c = condition_count(schema, max_len) as f64;
            let mut sum = 0.0;
            let mut b = 1.0;
            for i in 0..=max_conds {
                sum += b;
                b = b * (c - i as f64) / (i as f64 + 1.0);
            }
            sum * schema.event_types().len() as f64
        }
    };
    (0..=max_len).map(|i| per_event.powi(i as i32)).sum()
}

/// Output of the event head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventAction {
    Event(usize),
    Nop,
}

/// What a condition compares against, independent of the constant value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetSlot {
    Constant,
    /// Slot `k` names the k-th event of the pattern other than the owner.
    Event(usize),
}

/// Output of a condition head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionAction {
    Cond { attr: usize, op: usize, slot: TargetSlot },
    Nop,
}

/// Fixed, deterministic indexing of the event and condition action sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    schema: EventSchema,
    max_len: usize,
    max_conds: usize,
    event_actions: Vec<EventAction>,
    condition_actions: Vec<ConditionAction>,
}

/// `(event_actions, condition_actions)`; each ends with a `Nop`.
pub fn enumerate_actions(
    schema: &EventSchema,
    max_len: usize,
    max_conds: usize,
) -> (Vec<EventAction>, Vec<ConditionAction>) {
    let space = ActionSpace::new(schema.clone(), max_len, max_conds);
    (space.event_actions, space.condition_actions)
}

impl ActionSpace {
    pub fn new(schema: EventSchema, max_len: usize, max_conds: usize) -> Self {
        let mut event_actions: Vec<EventAction> = (0..schema.event_types().len()).map(EventAction::Event).collect();
        event_actions.push(EventAction::Nop);
        let mut condition_actions = Vec::new();
        for attr in 0..schema.attributes().len() {
            for op in 0..schema.operators().len() {
                condition_actions.push(ConditionAction::Cond { attr, op, slot: TargetSlot::Constant });
                for k in 0..max_len.saturating_sub(1) {
                    condition_actions.push(ConditionAction::Cond { attr, op, slot: TargetSlot::Event(k) });
                }
            }
        }
        condition_actions.push(ConditionAction::Nop);
        ActionSpace { schema, max_len, max_conds, event_actions, condition_actions }
    }

    pub fn schema(&self) -> &EventSchema {
        &self.schema
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn max_conds(&self) -> usize {
        self.max_conds
    }

    pub fn event_actions(&self) -> &[EventAction] {
        &self.event_actions
    }

    pub fn condition_actions(&self) -> &[ConditionAction] {
        &self.condition_actions
    }

    /// |E| + 1
    pub fn n_event_actions(&self) -> usize {
        self.event_actions.len()
    }

    /// |C| + 1
    pub fn n_condition_actions(&self) -> usize {
        self.condition_actions.len()
    }

    pub fn event_nop(&self) -> usize {
        self.event_actions.len() - 1
    }

    pub fn condition_nop(&self) -> usize {
        self.condition_actions.len() - 1
    }

    fn slots_per_op(&self) -> usize {
        self.max_len.max(1)
    }

    pub fn condition_action_index(&self, attr: usize, op: usize, slot: TargetSlot) -> usize {
        let s = match slot {
            TargetSlot::Constant => 0,
            TargetSlot::Event(k) => k + 1,
        };
        (attr * self.schema.operators().len() + op) * self.slots_per_op() + s
    }

    /// Action index of a condition owned by the event at `owner`. `None` if the
    /// condition does not fit this space (unknown names, out-of-range reference).
    pub fn index_of_condition(&self, owner: usize, c: &Condition) -> Option<usize> {
        let attr = self.schema.attr_index(&c.attribute)?;
        let op = self.schema.op_index(c.op)?;
        let slot = match c.target {
            ConditionTarget::Constant(_) | ConditionTarget::Hole(_) => TargetSlot::Constant,
            ConditionTarget::EventRef(k) => {
                if k == owner {
                    return None;
                }
                let rank = if k < owner { k } else { k - 1 };
                if rank + 1 >= self.slots_per_op() {
                    return None;
                }
                TargetSlot::Event(rank)
            }
        };
        Some(self.condition_action_index(attr, op, slot))
    }

    /// Resolves a target slot for an event at position `owner` into a pattern position.
    pub fn slot_position(owner: usize, slot: TargetSlot) -> Option<usize> {
        match slot {
            TargetSlot::Constant => None,
            TargetSlot::Event(k) => Some(if k < owner { k } else { k + 1 }),
        }
    }
}

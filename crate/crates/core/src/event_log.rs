//! Two-level event logs: schema, CSV and minimal XES ingestion, duration
//! derivation, simultaneity groups and summary statistics.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use quick_xml::events::{BytesStart, Event as XmlEvent};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::featurize::FeaturizedLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Event,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Categorical,
    Numerical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Universality {
    Universal,
    Specific,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub level: Level,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universality: Option<Universality>,
}

impl AttributeSpec {
    pub fn event(name: &str, kind: Kind, universality: Universality) -> Self {
        Self {
            name: name.to_string(),
            level: Level::Event,
            kind,
            universality: Some(universality),
        }
    }

    pub fn sequence(name: &str, kind: Kind) -> Self {
        Self {
            name: name.to_string(),
            level: Level::Sequence,
            kind,
            universality: None,
        }
    }

    pub fn is_universal(&self) -> bool {
        self.universality == Some(Universality::Universal)
    }
}

/// Attribute declarations plus the persisted outcome-label order.
///
/// Event and sequence values are stored positionally on [`Event`] and
/// [`Case`], in the order returned by the `event_*`/`sequence_*` accessors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<AttributeSpec>,
    /// Class names indexed by outcome. Empty means "assign in first-seen order".
    #[serde(default)]
    pub outcome_labels: Vec<String>,
    /// Value substituted for a missing universal attribute.
    #[serde(default)]
    pub missing_sentinel: Option<String>,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        let schema = Self {
            attributes,
            outcome_labels: Vec::new(),
            missing_sentinel: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for a in &self.attributes {
            if a.name.trim().is_empty() {
                return Err(CoreError::Schema("attribute with empty name".into()));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(CoreError::Schema(format!("duplicate attribute {:?}", a.name)));
            }
            match (a.level, a.universality) {
                (Level::Event, None) => {
                    return Err(CoreError::Schema(format!(
                        "event attribute {:?} needs a universality (universal or specific)",
                        a.name
                    )))
                }
                (Level::Sequence, Some(_)) => {
                    return Err(CoreError::Schema(format!(
                        "sequence attribute {:?} cannot declare a universality",
                        a.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn select(&self, level: Level, kind: Kind) -> Vec<&AttributeSpec> {
        self.attributes
            .iter()
            .filter(|a| a.level == level && a.kind == kind)
            .collect()
    }

    pub fn event_categoricals(&self) -> Vec<&AttributeSpec> {
        self.select(Level::Event, Kind::Categorical)
    }

    pub fn event_numericals(&self) -> Vec<&AttributeSpec> {
        self.select(Level::Event, Kind::Numerical)
    }

    pub fn sequence_categoricals(&self) -> Vec<&AttributeSpec> {
        self.select(Level::Sequence, Kind::Categorical)
    }

    pub fn sequence_numericals(&self) -> Vec<&AttributeSpec> {
        self.select(Level::Sequence, Kind::Numerical)
    }

    /// Positions (within `event_categoricals`) of the universal attributes.
    pub fn universal_positions(&self) -> Vec<usize> {
        self.event_categoricals()
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_universal())
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub activity: String,
    /// Set by `featurize::relabel_log`.
    pub label: Option<FeaturizedLabel>,
    /// Seconds since the epoch.
    pub start: i64,
    pub end: i64,
    pub duration: i64,
    pub categorical: Vec<Option<String>>,
    pub numeric: Vec<Option<f64>>,
}

impl Event {
    /// The relabeled token `A'` when featurized, the raw label otherwise.
    pub fn token(&self) -> &str {
        self.label.as_ref().map_or(self.activity.as_str(), |l| l.relabeled.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub case_id: String,
    pub events: Vec<Event>,
    pub sequence_categorical: Vec<Option<String>>,
    pub sequence_numeric: Vec<Option<f64>>,
    pub outcome: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub schema: Schema,
    pub cases: Vec<Case>,
    /// False when the source had no completion timestamps; durations are then
    /// all zero and duration-based channels are unavailable.
    pub has_end_times: bool,
}

impl EventLog {
    pub fn n_classes(&self) -> usize {
        self.schema.outcome_labels.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.schema.outcome_labels
    }

    pub fn labels(&self) -> Vec<usize> {
        self.cases.iter().map(|c| c.outcome).collect()
    }

    /// Sub-log with the given cases, in the given order.
    pub fn subset(&self, indices: &[usize]) -> EventLog {
        EventLog {
            schema: self.schema.clone(),
            cases: indices.iter().map(|&i| self.cases[i].clone()).collect(),
            has_end_times: self.has_end_times,
        }
    }

    /// Checks every structural invariant; used by tests and after generation.
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let n_ecat = self.schema.event_categoricals().len();
        let n_enum = self.schema.event_numericals().len();
        let universal = self.schema.universal_positions();
        for case in &self.cases {
            let fail = |index: usize, message: String| CoreError::Event {
                case_id: case.case_id.clone(),
                index,
                message,
            };
            if case.events.is_empty() {
                return Err(fail(0, "case has no events".into()));
            }
            if case.outcome >= self.n_classes() {
                return Err(fail(0, format!("outcome {} out of range", case.outcome)));
            }
            for (i, e) in case.events.iter().enumerate() {
                if e.end < e.start || e.duration != e.end - e.start {
                    return Err(fail(i, "inconsistent start/end/duration".into()));
                }
                if i > 0 && case.events[i - 1].start > e.start {
                    return Err(fail(i, "events not sorted by start".into()));
                }
                if e.categorical.len() != n_ecat || e.numeric.len() != n_enum {
                    return Err(fail(i, "attribute arity does not match schema".into()));
                }
                if let Some(&p) = universal.iter().find(|&&p| e.categorical[p].is_none()) {
                    return Err(fail(i, format!("universal attribute #{p} missing")));
                }
            }
        }
        Ok(())
    }
}

/// Binds the pipeline's fields to source columns (CSV headers or XES keys).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub case_id: String,
    pub activity: String,
    pub start: String,
    /// Completion timestamp; when absent every event gets `end = start`.
    #[serde(default)]
    pub end: Option<String>,
    pub outcome: String,
    /// Attribute name → column; attributes not listed use their own name.
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            case_id: "case_id".into(),
            activity: "activity".into(),
            start: "start".into(),
            end: Some("end".into()),
            outcome: "outcome".into(),
            attributes: BTreeMap::new(),
            delimiter: ',',
        }
    }
}

impl ColumnMap {
    pub fn column_for<'a>(&'a self, attribute: &'a str) -> &'a str {
        self.attributes.get(attribute).map_or(attribute, String::as_str)
    }
}

/// One declarative file holding the schema and the column map.
///
/// ```toml
/// missing_sentinel = "<MISSING>"
/// outcome_labels = ["accepted", "declined", "canceled"]
///
/// [columns]
/// case_id = "case_id"
/// activity = "activity"
/// start = "start"
/// end = "end"
/// outcome = "outcome"
///
/// [[attribute]]
/// name = "org"
/// level = "event"
/// kind = "categorical"
/// universality = "universal"
/// column = "org:resource"   # optional, defaults to name
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_sentinel: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcome_labels: Vec<String>,
    pub columns: ColumnConfig,
    #[serde(default, rename = "attribute")]
    pub attributes: Vec<AttributeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnConfig {
    pub case_id: String,
    pub activity: String,
    pub start: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
    pub outcome: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub name: String,
    pub level: Level,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universality: Option<Universality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}

impl LogConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LogConfig = toml::from_str(text)?;
        cfg.schema()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Config for the canonical layout written by [`write_csv`].
    pub fn canonical(schema: &Schema, has_end_times: bool) -> Self {
        let map = ColumnMap::default();
        Self {
            missing_sentinel: schema.missing_sentinel.clone(),
            outcome_labels: schema.outcome_labels.clone(),
            columns: ColumnConfig {
                case_id: map.case_id,
                activity: map.activity,
                start: map.start,
                end: if has_end_times { map.end } else { None },
                outcome: map.outcome,
                delimiter: ',',
            },
            attributes: schema
                .attributes
                .iter()
                .map(|a| AttributeConfig {
                    name: a.name.clone(),
                    level: a.level,
                    kind: a.kind,
                    universality: a.universality,
                    column: None,
                })
                .collect(),
        }
    }

    pub fn schema(&self) -> Result<Schema> {
        let schema = Schema {
            attributes: self
                .attributes
                .iter()
                .map(|a| AttributeSpec {
                    name: a.name.clone(),
                    level: a.level,
                    kind: a.kind,
                    universality: a.universality,
                })
                .collect(),
            outcome_labels: self.outcome_labels.clone(),
            missing_sentinel: self.missing_sentinel.clone(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn column_map(&self) -> ColumnMap {
        ColumnMap {
            case_id: self.columns.case_id.clone(),
            activity: self.columns.activity.clone(),
            start: self.columns.start.clone(),
            end: self.columns.end.clone(),
            outcome: self.columns.outcome.clone(),
            attributes: self
                .attributes
                .iter()
                .filter_map(|a| a.column.clone().map(|c| (a.name.clone(), c)))
                .collect(),
            delimiter: self.columns.delimiter,
        }
    }
}

/// Parses integer epoch seconds or ISO-8601 (with or without offset; naive
/// times are taken as UTC). Sub-second parts are truncated toward zero.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    if let Ok(v) = t.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then(|| v.trunc() as i64);
    }
    let truncate = |secs: i64, nanos: u32| if secs < 0 && nanos > 0 { secs + 1 } else { secs };
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(truncate(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
            let utc = dt.and_utc();
            return Some(truncate(utc.timestamp(), utc.timestamp_subsec_nanos()));
        }
    }
    if let Ok(dt) = DateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S%.f%z") {
        return Some(truncate(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    NaiveDate::parse_from_str(t, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp())
}

/// Accumulates rows into cases; shared by the CSV and XES readers so both
/// produce structurally identical logs.
struct LogBuilder<'a> {
    schema: &'a Schema,
    map: &'a ColumnMap,
    fixed_labels: bool,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
    case_index: HashMap<String, usize>,
    cases: Vec<Case>,
}

/// Field lookup for one source record.
trait Record {
    /// Value for a case-level field (case id, outcome, sequence attributes).
    fn case_field(&self, key: &str) -> Option<&str>;
    /// Value for an event-level field.
    fn event_field(&self, key: &str) -> Option<&str>;
}

fn non_empty(v: Option<&str>) -> Option<&str> {
    v.map(str::trim).filter(|s| !s.is_empty())
}

impl<'a> LogBuilder<'a> {
    fn new(schema: &'a Schema, map: &'a ColumnMap) -> Self {
        let labels = schema.outcome_labels.clone();
        let label_index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self {
            schema,
            map,
            fixed_labels: !schema.outcome_labels.is_empty(),
            labels,
            label_index,
            case_index: HashMap::new(),
            cases: Vec::new(),
        }
    }

    fn outcome_index(&mut self, label: &str) -> Result<usize> {
        if let Some(&i) = self.label_index.get(label) {
            return Ok(i);
        }
        if self.fixed_labels {
            return Err(CoreError::UnknownOutcome {
                label: label.to_string(),
                known: self.labels.clone(),
            });
        }
        self.labels.push(label.to_string());
        self.label_index.insert(label.to_string(), self.labels.len() - 1);
        Ok(self.labels.len() - 1)
    }

    /// Adds one event row. Errors other than unknown outcomes are returned
    /// as messages so each reader can attach its own location.
    fn push(&mut self, rec: &dyn Record) -> Result<std::result::Result<(), String>> {
        let Some(case_id) = non_empty(rec.case_field(&self.map.case_id)) else {
            return Ok(Err(format!("missing case id ({})", self.map.case_id)));
        };
        let case_id = case_id.to_string();
        let Some(activity) = non_empty(rec.event_field(&self.map.activity)) else {
            return Ok(Err(format!("missing activity ({})", self.map.activity)));
        };
        let activity = activity.to_string();
        let start = match non_empty(rec.event_field(&self.map.start)) {
            Some(s) => match parse_timestamp(s) {
                Some(v) => v,
                None => return Ok(Err(format!("unparseable start timestamp {s:?}"))),
            },
            None => return Ok(Err(format!("missing start timestamp ({})", self.map.start))),
        };
        let end = match &self.map.end {
            Some(col) => match non_empty(rec.event_field(col)) {
                Some(s) => match parse_timestamp(s) {
                    Some(v) => v,
                    None => return Ok(Err(format!("unparseable end timestamp {s:?}"))),
                },
                None => return Ok(Err(format!("missing end timestamp ({col})"))),
            },
            None => start,
        };
        if end < start {
            return Ok(Err(format!("end {end} is before start {start}")));
        }
        let Some(outcome_label) = non_empty(rec.case_field(&self.map.outcome)) else {
            return Ok(Err(format!("missing outcome ({})", self.map.outcome)));
        };
        let outcome = self.outcome_index(outcome_label)?;

        let mut categorical = Vec::new();
        for a in self.schema.event_categoricals() {
            let v = non_empty(rec.event_field(self.map.column_for(&a.name))).map(str::to_string);
            let v = match (v, a.is_universal(), &self.schema.missing_sentinel) {
                (None, true, Some(s)) => Some(s.clone()),
                (None, true, None) => {
                    return Ok(Err(format!(
                        "universal attribute {:?} is missing and no sentinel is configured",
                        a.name
                    )))
                }
                (v, _, _) => v,
            };
            categorical.push(v);
        }
        let mut numeric = Vec::new();
        for a in self.schema.event_numericals() {
            match parse_number(non_empty(rec.event_field(self.map.column_for(&a.name)))) {
                Ok(v) => numeric.push(v),
                Err(m) => return Ok(Err(format!("attribute {:?}: {m}", a.name))),
            }
        }
        let event = Event {
            activity,
            label: None,
            start,
            end,
            duration: end - start,
            categorical,
            numeric,
        };

        let idx = match self.case_index.get(&case_id) {
            Some(&i) => i,
            None => {
                let mut seq_cat = Vec::new();
                for a in self.schema.sequence_categoricals() {
                    seq_cat.push(non_empty(rec.case_field(self.map.column_for(&a.name))).map(str::to_string));
                }
                let mut seq_num = Vec::new();
                for a in self.schema.sequence_numericals() {
                    match parse_number(non_empty(rec.case_field(self.map.column_for(&a.name)))) {
                        Ok(v) => seq_num.push(v),
                        Err(m) => return Ok(Err(format!("attribute {:?}: {m}", a.name))),
                    }
                }
                self.cases.push(Case {
                    case_id: case_id.clone(),
                    events: Vec::new(),
                    sequence_categorical: seq_cat,
                    sequence_numeric: seq_num,
                    outcome,
                });
                self.case_index.insert(case_id, self.cases.len() - 1);
                self.cases.len() - 1
            }
        };
        if self.cases[idx].outcome != outcome {
            return Ok(Err(format!(
                "case {} has conflicting outcomes {:?} and {:?}",
                self.cases[idx].case_id, self.labels[self.cases[idx].outcome], self.labels[outcome]
            )));
        }
        self.cases[idx].events.push(event);
        Ok(Ok(()))
    }

    fn finish(mut self, has_end_times: bool) -> EventLog {
        for case in &mut self.cases {
            // stable: ties keep source order
            case.events.sort_by_key(|e| e.start);
        }
        let mut schema = self.schema.clone();
        schema.outcome_labels = self.labels;
        EventLog {
            schema,
            cases: self.cases,
            has_end_times,
        }
    }
}

fn parse_number(v: Option<&str>) -> std::result::Result<Option<f64>, String> {
    match v {
        None => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| format!("not a number: {s:?}")),
    }
}

struct CsvRecord<'r> {
    record: &'r csv::StringRecord,
    columns: &'r HashMap<String, usize>,
}

impl Record for CsvRecord<'_> {
    fn case_field(&self, key: &str) -> Option<&str> {
        self.columns.get(key).and_then(|&i| self.record.get(i))
    }
    fn event_field(&self, key: &str) -> Option<&str> {
        self.case_field(key)
    }
}

pub fn load_csv(path: &Path, schema: &Schema, map: &ColumnMap) -> Result<EventLog> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema, map)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema, map: &ColumnMap) -> Result<EventLog> {
    schema.validate()?;
    let delimiter = u8::try_from(map.delimiter)
        .map_err(|_| CoreError::Schema(format!("delimiter {:?} is not a single byte", map.delimiter)))?;
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let columns: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let mut required: Vec<&str> = vec![&map.case_id, &map.activity, &map.start, &map.outcome];
    if let Some(end) = &map.end {
        required.push(end);
    }
    for a in &schema.attributes {
        required.push(map.column_for(&a.name));
    }
    for col in required {
        if !columns.contains_key(col) {
            return Err(CoreError::Schema(format!("missing column {col:?}")));
        }
    }
    let mut builder = LogBuilder::new(schema, map);
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        if !rdr.read_record(&mut record)? {
            break;
        }
        let line = record.position().map_or(line, |p| p.line());
        if let Err(message) = builder.push(&CsvRecord {
            record: &record,
            columns: &columns,
        })? {
            return Err(CoreError::Row { line, message });
        }
    }
    Ok(builder.finish(map.end.is_some()))
}

/// Writes the canonical CSV layout (see [`LogConfig::canonical`]); timestamps
/// as epoch seconds, missing values as empty cells.
pub fn write_csv<W: Write>(log: &EventLog, writer: W) -> Result<()> {
    let map = ColumnMap::default();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        map.case_id.clone(),
        map.activity.clone(),
        map.start.clone(),
        map.end.clone().expect("default has end"),
        map.outcome.clone(),
    ];
    let ecat = log.schema.event_categoricals();
    let enm = log.schema.event_numericals();
    let scat = log.schema.sequence_categoricals();
    let snm = log.schema.sequence_numericals();
    for group in [&ecat, &enm, &scat, &snm] {
        header.extend(group.iter().map(|a| a.name.clone()));
    }
    w.write_record(&header)?;
    let num = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for case in &log.cases {
        for e in &case.events {
            let mut row = vec![
                case.case_id.clone(),
                e.activity.clone(),
                e.start.to_string(),
                e.end.to_string(),
                log.schema.outcome_labels[case.outcome].clone(),
            ];
            row.extend(e.categorical.iter().map(|v| v.clone().unwrap_or_default()));
            row.extend(e.numeric.iter().map(num));
            row.extend(case.sequence_categorical.iter().map(|v| v.clone().unwrap_or_default()));
            row.extend(case.sequence_numeric.iter().map(num));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

struct XesRecord<'r> {
    trace: &'r HashMap<String, String>,
    event: &'r HashMap<String, String>,
}

impl Record for XesRecord<'_> {
    fn case_field(&self, key: &str) -> Option<&str> {
        self.trace.get(key).or_else(|| self.event.get(key)).map(String::as_str)
    }
    fn event_field(&self, key: &str) -> Option<&str> {
        self.event.get(key).or_else(|| self.trace.get(key)).map(String::as_str)
    }
}

const XES_ATTRIBUTE_TAGS: [&[u8]; 6] = [b"string", b"date", b"int", b"float", b"boolean", b"id"];

pub fn xes_to_eventlog(path: &Path, schema: &Schema, map: &ColumnMap) -> Result<EventLog> {
    let file = std::fs::File::open(path)?;
    read_xes(std::io::BufReader::new(file), schema, map)
}

/// Reads `<trace>`/`<event>` elements and their direct
/// `string|date|int|float|boolean|id` children (`key`/`value` attributes).
/// Everything else, including nested attribute lists and `<global>` defaults,
/// is skipped.
pub fn read_xes<R: BufRead>(input: R, schema: &Schema, map: &ColumnMap) -> Result<EventLog> {
    schema.validate()?;
    let mut reader = quick_xml::Reader::from_reader(input);
    let mut buf = Vec::new();
    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut trace: Option<HashMap<String, String>> = None;
    let mut events: Vec<(u64, HashMap<String, String>)> = Vec::new();
    let mut event: Option<(u64, HashMap<String, String>)> = None;
    let mut builder = LogBuilder::new(schema, map);
    let mut traces_seen = 0usize;

    loop {
        let offset = reader.buffer_position() as u64;
        let ev = reader.read_event_into(&mut buf).map_err(|e| CoreError::Xml {
            offset: reader.error_position() as u64,
            message: e.to_string(),
        })?;
        match ev {
            XmlEvent::Start(e) => {
                let name = e.name().as_ref().to_vec();
                open_element(&e, &name, &stack, &mut trace, &mut event, offset)?;
                stack.push(name);
            }
            XmlEvent::Empty(e) => {
                let name = e.name().as_ref().to_vec();
                open_element(&e, &name, &stack, &mut trace, &mut event, offset)?;
                close_element(&name, &mut trace, &mut event, &mut events, &mut builder, &mut traces_seen, map, offset)?;
            }
            XmlEvent::End(e) => {
                let name = e.name().as_ref().to_vec();
                match stack.pop() {
                    Some(open) if open == name => {}
                    other => {
                        return Err(CoreError::Xml {
                            offset,
                            message: format!(
                                "closing </{}> does not match <{}>",
                                String::from_utf8_lossy(&name),
                                other.map(|o| String::from_utf8_lossy(&o).into_owned()).unwrap_or_default()
                            ),
                        })
                    }
                }
                close_element(&name, &mut trace, &mut event, &mut events, &mut builder, &mut traces_seen, map, offset)?;
            }
            XmlEvent::Eof => {
                if let Some(open) = stack.last() {
                    return Err(CoreError::Xml {
                        offset: reader.buffer_position() as u64,
                        message: format!(
                            "unexpected end of file inside <{}>",
                            String::from_utf8_lossy(open)
                        ),
                    });
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }
    Ok(builder.finish(map.end.is_some()))
}

fn open_element(
    e: &BytesStart<'_>,
    name: &[u8],
    stack: &[Vec<u8>],
    trace: &mut Option<HashMap<String, String>>,
    event: &mut Option<(u64, HashMap<String, String>)>,
    offset: u64,
) -> Result<()> {
    let parent = stack.last().map(Vec::as_slice);
    match name {
        b"trace" => *trace = Some(HashMap::new()),
        b"event" if trace.is_some() => *event = Some((offset, HashMap::new())),
        tag if XES_ATTRIBUTE_TAGS.contains(&tag) && matches!(parent, Some(b"trace") | Some(b"event")) => {
            let mut key = None;
            let mut value = None;
            for attr in e.attributes() {
                let attr = attr.map_err(|err| CoreError::Xml {
                    offset,
                    message: err.to_string(),
                })?;
                let v = attr
                    .unescape_value()
                    .map_err(|err| CoreError::Xml {
                        offset,
                        message: err.to_string(),
                    })?
                    .into_owned();
                match attr.key.as_ref() {
                    b"key" => key = Some(v),
                    b"value" => value = Some(v),
                    _ => {}
                }
            }
            if let (Some(k), Some(v)) = (key, value) {
                let target = if parent == Some(b"event") {
                    event.as_mut().map(|(_, m)| m)
                } else {
                    trace.as_mut()
                };
                if let Some(m) = target {
                    m.insert(k, v);
                }
            }
        }
        _ => {}
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn close_element(
    name: &[u8],
    trace: &mut Option<HashMap<String, String>>,
    event: &mut Option<(u64, HashMap<String, String>)>,
    events: &mut Vec<(u64, HashMap<String, String>)>,
    builder: &mut LogBuilder<'_>,
    traces_seen: &mut usize,
    map: &ColumnMap,
    offset: u64,
) -> Result<()> {
    match name {
        b"event" => {
            if let Some(ev) = event.take() {
                events.push(ev);
            }
        }
        b"trace" => {
            let attrs = trace.take().unwrap_or_default();
            *traces_seen += 1;
            if !attrs.contains_key(&map.case_id) {
                return Err(CoreError::Xml {
                    offset,
                    message: format!("trace #{} has no {:?} attribute", *traces_seen, map.case_id),
                });
            }
            for (ev_offset, ev) in events.drain(..) {
                if let Err(message) = builder.push(&XesRecord {
                    trace: &attrs,
                    event: &ev,
                })? {
                    return Err(CoreError::Xml {
                        offset: ev_offset,
                        message,
                    });
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Recomputes `duration = end - start` for every event.
pub fn derive_durations(mut log: EventLog) -> Result<EventLog> {
    for case in &mut log.cases {
        for (index, e) in case.events.iter_mut().enumerate() {
            if e.end < e.start {
                return Err(CoreError::Event {
                    case_id: case.case_id.clone(),
                    index,
                    message: format!("end {} is before start {}", e.end, e.start),
                });
            }
            e.duration = e.end - e.start;
        }
    }
    Ok(log)
}

/// Maximal runs of consecutive events sharing a start timestamp.
pub fn detect_simultaneous(case: &Case) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, e) in case.events.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if case.events[g[0]].start == e.start => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogStats {
    pub n_cases: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Lower median for even counts.
    pub median_length: usize,
    pub class_counts: Vec<usize>,
}

pub fn log_stats(log: &EventLog) -> LogStats {
    let mut lengths: Vec<usize> = log.cases.iter().map(|c| c.events.len()).collect();
    lengths.sort_unstable();
    let mut class_counts = vec![0; log.n_classes()];
    for c in &log.cases {
        if c.outcome < class_counts.len() {
            class_counts[c.outcome] += 1;
        }
    }
    LogStats {
        n_cases: lengths.len(),
        min_length: lengths.first().copied().unwrap_or(0),
        max_length: lengths.last().copied().unwrap_or(0),
        median_length: if lengths.is_empty() { 0 } else { lengths[(lengths.len() - 1) / 2] },
        class_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(vec![
            AttributeSpec::event("org", Kind::Categorical, Universality::Universal),
            AttributeSpec::event("amount", Kind::Numerical, Universality::Specific),
            AttributeSpec::sequence("region", Kind::Categorical),
        ])
        .unwrap()
    }

    fn csv_log(text: &str) -> Result<EventLog> {
        read_csv(text.as_bytes(), &schema(), &ColumnMap::default())
    }

    const TWO_ROWS: &str = "case_id,activity,start,end,outcome,org,amount,region\n\
        c1,Archive,2024-01-01T10:00:00,2024-01-01T10:05:00,ok,a,1.5,north\n\
        c1,Basic Check,2024-01-01T10:05:00,2024-01-01T10:05:00,ok,b,,north\n";

    #[test]
    fn two_row_file_yields_one_case() {
        let log = csv_log(TWO_ROWS).unwrap();
        assert_eq!(log.cases.len(), 1);
        let case = &log.cases[0];
        assert_eq!(case.events.len(), 2);
        assert_eq!(case.events[0].duration, 300);
        assert_eq!(case.events[1].numeric, vec![None]);
        assert_eq!(case.sequence_categorical, vec![Some("north".to_string())]);
        assert_eq!(log.class_names(), ["ok".to_string()]);
        log.validate().unwrap();
    }

    #[test]
    fn end_before_start_is_a_row_error() {
        let text = "case_id,activity,start,end,outcome,org,amount,region\n\
            c1,A,100,160,ok,a,1,n\n\
            c1,B,100,90,ok,a,1,n\n";
        match csv_log(text) {
            Err(CoreError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text = "case_id,activity,start,end,outcome,org,amount\nc1,A,1,2,ok,a,1\n";
        match csv_log(text) {
            Err(CoreError::Schema(m)) => assert!(m.contains("region")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let text = "case_id,activity,start,end,outcome,org,amount,region\nc1,A,yesterday,2,ok,a,1,n\n";
        assert!(matches!(csv_log(text), Err(CoreError::Row { line: 2, .. })));
    }

    #[test]
    fn fixed_outcome_labels_reject_unknown() {
        let mut s = schema();
        s.outcome_labels = vec!["accepted".into(), "declined".into()];
        let err = read_csv(TWO_ROWS.as_bytes(), &s, &ColumnMap::default()).unwrap_err();
        match err {
            CoreError::UnknownOutcome { label, known } => {
                assert_eq!(label, "ok");
                assert_eq!(known.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_universal_needs_sentinel() {
        let text = "case_id,activity,start,end,outcome,org,amount,region\nc1,A,1,2,ok,,1,n\n";
        assert!(matches!(csv_log(text), Err(CoreError::Row { .. })));
        let mut s = schema();
        s.missing_sentinel = Some("<MISSING>".into());
        let log = read_csv(text.as_bytes(), &s, &ColumnMap::default()).unwrap();
        assert_eq!(log.cases[0].events[0].categorical[0].as_deref(), Some("<MISSING>"));
    }

    #[test]
    fn ties_keep_file_order() {
        let text = "case_id,activity,start,end,outcome,org,amount,region\n\
            c1,Z,20,20,ok,a,1,n\n\
            c1,B,10,10,ok,a,1,n\n\
            c1,A,10,10,ok,a,1,n\n";
        let log = csv_log(text).unwrap();
        let acts: Vec<_> = log.cases[0].events.iter().map(|e| e.activity.as_str()).collect();
        assert_eq!(acts, ["B", "A", "Z"]);
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("60"), Some(60));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00"), Some(60));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00.999"), Some(60));
        assert_eq!(parse_timestamp("1970-01-01T01:01:00+01:00"), Some(60));
        assert_eq!(parse_timestamp("1970-01-01 00:01:00"), Some(60));
        assert_eq!(parse_timestamp("1969-12-31T23:59:59.5Z"), Some(0));
        assert_eq!(parse_timestamp("soon"), None);
    }

    fn case_with_starts(starts: &[i64]) -> Case {
        Case {
            case_id: "c".into(),
            events: starts
                .iter()
                .map(|&s| Event {
                    activity: "a".into(),
                    label: None,
                    start: s,
                    end: s,
                    duration: 0,
                    categorical: vec![],
                    numeric: vec![],
                })
                .collect(),
            sequence_categorical: vec![],
            sequence_numeric: vec![],
            outcome: 0,
        }
    }

    #[test]
    fn simultaneity_groups() {
        assert_eq!(detect_simultaneous(&case_with_starts(&[10, 10, 20])), vec![vec![0, 1], vec![2]]);
        assert_eq!(
            detect_simultaneous(&case_with_starts(&[10, 20, 30])),
            vec![vec![0], vec![1], vec![2]]
        );
    }

    #[test]
    fn durations_and_errors() {
        let mut log = csv_log(TWO_ROWS).unwrap();
        log.cases[0].events[0].start = 100;
        log.cases[0].events[0].end = 160;
        let log2 = derive_durations(log.clone()).unwrap();
        assert_eq!(log2.cases[0].events[0].duration, 60);
        log.cases[0].events[1].end = log.cases[0].events[1].start - 10;
        match derive_durations(log) {
            Err(CoreError::Event { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stats_single_case() {
        let log = EventLog {
            schema: Schema {
                outcome_labels: vec!["x".into()],
                ..Schema::new(vec![]).unwrap()
            },
            cases: vec![case_with_starts(&[1, 2, 3])],
            has_end_times: true,
        };
        let s = log_stats(&log);
        assert_eq!((s.n_cases, s.min_length, s.max_length, s.median_length), (1, 3, 3, 3));
        assert_eq!(s.class_counts, vec![1]);
    }

    #[test]
    fn config_round_trip() {
        let log = csv_log(TWO_ROWS).unwrap();
        let cfg = LogConfig::canonical(&log.schema, true);
        let parsed = LogConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.schema().unwrap(), log.schema);
    }

    #[test]
    fn schema_rejects_universality_on_sequence_level() {
        let mut a = AttributeSpec::sequence("x", Kind::Categorical);
        a.universality = Some(Universality::Universal);
        assert!(Schema::new(vec![a]).is_err());
        let dup = AttributeSpec::sequence("x", Kind::Numerical);
        assert!(Schema::new(vec![dup.clone(), dup]).is_err());
    }

    const XES: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<log xes.version="1.0">
  <global scope="event"><string key="org" value="default"/></global>
  <trace>
    <string key="case_id" value="c1"/>
    <string key="outcome" value="ok"/>
    <string key="region" value="north"/>
    <event>
      <string key="activity" value="Archive"/>
      <date key="start" value="2024-01-01T10:00:00"/>
      <date key="end" value="2024-01-01T10:05:00"/>
      <string key="org" value="a"/>
      <float key="amount" value="1.5"/>
    </event>
    <event>
      <string key="activity" value="Basic Check"/>
      <date key="start" value="2024-01-01T10:05:00"/>
      <date key="end" value="2024-01-01T10:05:00"/>
      <string key="org" value="b"/>
      <list key="ignored"><string key="org" value="nested"/></list>
    </event>
  </trace>
</log>"#;

    #[test]
    fn xes_matches_csv() {
        let from_xes = read_xes(XES.as_bytes(), &schema(), &ColumnMap::default()).unwrap();
        let from_csv = csv_log(TWO_ROWS).unwrap();
        assert_eq!(from_xes, from_csv);
    }

    #[test]
    fn truncated_xes_is_a_parse_error() {
        let cut = &XES[..XES.len() / 2];
        assert!(matches!(
            read_xes(cut.as_bytes(), &schema(), &ColumnMap::default()),
            Err(CoreError::Xml { .. })
        ));
    }

    #[test]
    fn xes_trace_without_case_id() {
        let doc = XES.replace(r#"<string key="case_id" value="c1"/>"#, "");
        match read_xes(doc.as_bytes(), &schema(), &ColumnMap::default()) {
            Err(CoreError::Xml { message, .. }) => assert!(message.contains("case_id")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_through_writer() {
        let log = csv_log(TWO_ROWS).unwrap();
        let mut out = Vec::new();
        write_csv(&log, &mut out).unwrap();
        let again = read_csv(out.as_slice(), &log.schema, &ColumnMap::default()).unwrap();
        assert_eq!(again, log);
    }
}

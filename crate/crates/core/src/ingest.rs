//! Event parsing, preprocessing into cascades, group catalog and the
//! group-overlap network.
//!
//! Event files use the columns
//! `message_id,group_id,timestamp,modality,content_type,forwarding_score`
//! (CSV with a header row, or JSONL objects with the same keys).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AdoptionEvent, ContentType, ForwardingBucket, GroupId, MessageId, Modality, ModelError,
};

pub const EVENT_COLUMNS: [&str; 6] = [
    "message_id",
    "group_id",
    "timestamp",
    "modality",
    "content_type",
    "forwarding_score",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable input: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("groups file line {line}: {message}")]
    Group { line: u64, message: String },
    #[error("overlap network requires membership data")]
    NoMembership,
    #[error("cascade invariant violated: {0}")]
    InvalidCascade(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Jsonl,
}

impl EventFormat {
    /// Guesses from a file extension; anything other than `.jsonl`/`.ndjson` is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => EventFormat::Jsonl,
            _ => EventFormat::Csv,
        }
    }
}

/// A malformed input row. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedEvents {
    pub events: Vec<AdoptionEvent>,
    pub errors: Vec<RowError>,
}

fn row_error(line: u64, field: &str, message: impl Into<String>) -> RowError {
    RowError {
        line,
        field: Some(field.to_string()),
        message: message.into(),
    }
}

fn parse_event<'a>(
    line: u64,
    get: impl Fn(&str) -> Option<&'a str>,
) -> Result<AdoptionEvent, RowError> {
    let field = |name: &str| get(name).ok_or_else(|| row_error(line, name, "missing value"));

    let message = MessageId::new(field("message_id")?.trim())
        .map_err(|e| row_error(line, "message_id", e.to_string()))?;
    let group = GroupId::new(field("group_id")?.trim())
        .map_err(|e| row_error(line, "group_id", e.to_string()))?;
    let raw_time = field("timestamp")?;
    let time: f64 = raw_time
        .trim()
        .parse()
        .map_err(|_| row_error(line, "timestamp", format!("not a number: {raw_time:?}")))?;
    if !time.is_finite() {
        return Err(row_error(line, "timestamp", "must be finite"));
    }
    let modality: Modality = field("modality")?
        .parse()
        .map_err(|e: ModelError| row_error(line, "modality", e.to_string()))?;
    let content: ContentType = field("content_type")?
        .parse()
        .map_err(|e: ModelError| row_error(line, "content_type", e.to_string()))?;
    let raw_score = field("forwarding_score")?.trim();
    let score: i64 = raw_score.parse().map_err(|_| {
        row_error(line, "forwarding_score", format!("not an integer: {raw_score:?}"))
    })?;
    if score < 0 {
        return Err(row_error(line, "forwarding_score", format!("must be >= 0, got {score}")));
    }
    let forwarding_score = u32::try_from(score)
        .map_err(|_| row_error(line, "forwarding_score", "out of range"))?;

    Ok(AdoptionEvent {
        message,
        group,
        time,
        modality,
        content,
        forwarding_score,
    })
}

/// Reads events. Malformed rows are collected, not dropped silently; an
/// unreadable stream or a missing CSV column is fatal.
pub fn load_events<R: Read>(source: R, format: EventFormat) -> Result<LoadedEvents, IngestError> {
    match format {
        EventFormat::Csv => load_csv(source),
        EventFormat::Jsonl => load_jsonl(source),
    }
}

fn load_csv<R: Read>(source: R) -> Result<LoadedEvents, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut index = BTreeMap::new();
    for col in EVENT_COLUMNS {
        let pos = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| IngestError::MissingColumn(col.to_string()))?;
        index.insert(col, pos);
    }

    let mut out = LoadedEvents::default();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                let get = |name: &str| index.get(name).and_then(|&i| record.get(i));
                match parse_event(line, get) {
                    Ok(ev) => out.events.push(ev),
                    Err(e) => out.errors.push(e),
                }
            }
            Err(e) => match e.kind() {
                csv::ErrorKind::Io(_) | csv::ErrorKind::Utf8 { .. } => return Err(e.into()),
                _ => out.errors.push(RowError {
                    line: e.position().map_or(0, |p| p.line()),
                    field: None,
                    message: e.to_string(),
                }),
            },
        }
    }
    Ok(out)
}

fn load_jsonl<R: Read>(source: R) -> Result<LoadedEvents, IngestError> {
    let mut out = LoadedEvents::default();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                out.errors.push(RowError {
                    line: lineno,
                    field: None,
                    message: format!("invalid json: {e}"),
                });
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            out.errors.push(RowError {
                line: lineno,
                field: None,
                message: "expected a json object".into(),
            });
            continue;
        };
        // numbers are rendered to strings so both routes share one parser
        let fields: BTreeMap<&str, String> = EVENT_COLUMNS
            .iter()
            .filter_map(|&k| {
                obj.get(k).and_then(|v| match v {
                    serde_json::Value::String(s) => Some((k, s.clone())),
                    serde_json::Value::Number(n) => Some((k, n.to_string())),
                    _ => None,
                })
            })
            .collect();
        match parse_event(lineno, |name| fields.get(name).map(String::as_str)) {
            Ok(ev) => out.events.push(ev),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

pub fn write_events_csv<W: Write>(events: &[AdoptionEvent], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_COLUMNS)?;
    for ev in events {
        w.write_record([
            ev.message.as_str(),
            ev.group.as_str(),
            &ev.time.to_string(),
            ev.modality.as_str(),
            ev.content.as_str(),
            &ev.forwarding_score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Message-level labels carried by a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeLabels {
    pub content: ContentType,
    pub modality: Modality,
    pub forwarding_score: u32,
}

impl Default for CascadeLabels {
    fn default() -> Self {
        Self {
            content: ContentType::Unlabeled,
            modality: Modality::Text,
            forwarding_score: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adoption {
    pub group: GroupId,
    pub time: f64,
}

/// First arrivals of one message, sorted by `(time, group)`, one per group,
/// at least two groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub message: MessageId,
    adoptions: Vec<Adoption>,
    pub labels: CascadeLabels,
}

impl Cascade {
    pub fn new(
        message: MessageId,
        mut adoptions: Vec<Adoption>,
        labels: CascadeLabels,
    ) -> Result<Self, IngestError> {
        if adoptions.len() < 2 {
            return Err(IngestError::InvalidCascade(format!(
                "message {message} has {} adoption(s), need at least 2",
                adoptions.len()
            )));
        }
        if adoptions.iter().any(|a| !a.time.is_finite()) {
            return Err(IngestError::InvalidCascade(format!(
                "message {message} has a non-finite time"
            )));
        }
        adoptions.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.group.cmp(&b.group)));
        let distinct: BTreeSet<&GroupId> = adoptions.iter().map(|a| &a.group).collect();
        if distinct.len() != adoptions.len() {
            return Err(IngestError::InvalidCascade(format!(
                "message {message} lists a group twice"
            )));
        }
        Ok(Self {
            message,
            adoptions,
            labels,
        })
    }

    /// Convenience constructor from `(group, time)` pairs.
    pub fn from_pairs<S: AsRef<str>>(
        message: &str,
        pairs: &[(S, f64)],
        labels: CascadeLabels,
    ) -> Result<Self, IngestError> {
        let message =
            MessageId::new(message).map_err(|e| IngestError::InvalidCascade(e.to_string()))?;
        let adoptions = pairs
            .iter()
            .map(|(g, t)| {
                GroupId::new(g.as_ref())
                    .map(|group| Adoption { group, time: *t })
                    .map_err(|e| IngestError::InvalidCascade(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(message, adoptions, labels)
    }

    pub fn adoptions(&self) -> &[Adoption] {
        &self.adoptions
    }

    pub fn len(&self) -> usize {
        self.adoptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adoptions.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.adoptions.iter().map(|a| a.time)
    }

    /// Flattens back into events carrying the cascade's labels.
    pub fn to_events(&self) -> Vec<AdoptionEvent> {
        self.adoptions
            .iter()
            .map(|a| AdoptionEvent {
                message: self.message.clone(),
                group: a.group.clone(),
                time: a.time,
                modality: self.labels.modality,
                content: self.labels.content,
                forwarding_score: self.labels.forwarding_score,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TieRecord {
    pub message: MessageId,
    pub time: f64,
    pub groups: Vec<GroupId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DropReport {
    pub total_events: usize,
    pub messages_seen: usize,
    pub cascades_built: usize,
    pub single_group_dropped: usize,
    /// Later (message, group) repeats discarded by the earliest-timestamp rule.
    pub duplicate_events_collapsed: usize,
    /// Messages whose events disagree on labels; the earliest event's labels win.
    pub label_conflicts: usize,
    pub ties: Vec<TieRecord>,
}

/// Keeps the earliest event per (message, group), drops single-group
/// messages, and sorts adoptions by time with ties ordered by group id.
pub fn build_cascades(events: &[AdoptionEvent]) -> (Vec<Cascade>, DropReport) {
    struct Acc<'a> {
        first: BTreeMap<&'a GroupId, f64>,
        label_event: &'a AdoptionEvent,
        labels_seen: BTreeSet<(ContentType, Modality, u32)>,
    }

    let mut report = DropReport {
        total_events: events.len(),
        ..Default::default()
    };
    let mut by_message: BTreeMap<&MessageId, Acc> = BTreeMap::new();
    for ev in events {
        let acc = by_message.entry(&ev.message).or_insert_with(|| Acc {
            first: BTreeMap::new(),
            label_event: ev,
            labels_seen: BTreeSet::new(),
        });
        acc.labels_seen
            .insert((ev.content, ev.modality, ev.forwarding_score));
        let le = acc.label_event;
        if ev.time < le.time || (ev.time == le.time && ev.group < le.group) {
            acc.label_event = ev;
        }
        match acc.first.get_mut(&ev.group) {
            Some(t) => {
                report.duplicate_events_collapsed += 1;
                if ev.time < *t {
                    *t = ev.time;
                }
            }
            None => {
                acc.first.insert(&ev.group, ev.time);
            }
        }
    }

    report.messages_seen = by_message.len();
    let mut cascades = Vec::new();
    for (message, acc) in by_message {
        if acc.labels_seen.len() > 1 {
            report.label_conflicts += 1;
        }
        if acc.first.len() < 2 {
            report.single_group_dropped += 1;
            continue;
        }
        let adoptions: Vec<Adoption> = acc
            .first
            .into_iter()
            .map(|(g, t)| Adoption {
                group: g.clone(),
                time: t,
            })
            .collect();
        let le = acc.label_event;
        let labels = CascadeLabels {
            content: le.content,
            modality: le.modality,
            forwarding_score: le.forwarding_score,
        };
        let cascade = Cascade::new(message.clone(), adoptions, labels)
            .expect("at least two distinct finite adoptions");
        for run in cascade.adoptions().chunk_by(|a, b| a.time == b.time) {
            if run.len() > 1 {
                report.ties.push(TieRecord {
                    message: message.clone(),
                    time: run[0].time,
                    groups: run.iter().map(|a| a.group.clone()).collect(),
                });
            }
        }
        cascades.push(cascade);
    }
    report.cascades_built = cascades.len();
    (cascades, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub size: u64,
    /// Possibly partial membership (anonymized ids).
    pub members: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupCatalog {
    pub entries: BTreeMap<GroupId, GroupInfo>,
}

impl GroupCatalog {
    pub fn insert(&mut self, group: GroupId, info: GroupInfo) -> Result<(), IngestError> {
        if info.size == 0 {
            return Err(IngestError::Group {
                line: 0,
                message: format!("group {group} has size 0"),
            });
        }
        if let Some(m) = &info.members {
            if m.len() as u64 > info.size {
                return Err(IngestError::Group {
                    line: 0,
                    message: format!(
                        "group {group} lists {} members but has size {}",
                        m.len(),
                        info.size
                    ),
                });
            }
        }
        self.entries.insert(group, info);
        Ok(())
    }

    pub fn size_of(&self, group: &GroupId) -> Option<u64> {
        self.entries.get(group).map(|g| g.size)
    }
}

/// Reads `group_id,size[,member_ids]`, members separated by `;`.
pub fn load_groups<R: Read>(source: R) -> Result<GroupCatalog, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let gi = col("group_id").ok_or_else(|| IngestError::MissingColumn("group_id".into()))?;
    let si = col("size").ok_or_else(|| IngestError::MissingColumn("size".into()))?;
    let mi = col("member_ids");

    let mut catalog = GroupCatalog::default();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |message: String| IngestError::Group { line, message };
        let group = GroupId::new(record.get(gi).unwrap_or(""))
            .map_err(|e| err(e.to_string()))?;
        let raw_size = record.get(si).unwrap_or("");
        let size: u64 = raw_size
            .parse()
            .map_err(|_| err(format!("size {raw_size:?} is not a positive integer")))?;
        let members = mi.and_then(|i| record.get(i)).filter(|s| !s.is_empty()).map(|s| {
            s.split(';')
                .map(str::trim)
                .filter(|m| !m.is_empty())
                .map(str::to_string)
                .collect::<BTreeSet<_>>()
        });
        if catalog.entries.contains_key(&group) {
            return Err(err(format!("duplicate group {group}")));
        }
        catalog
            .insert(group, GroupInfo { size, members })
            .map_err(|e| match e {
                IngestError::Group { message, .. } => err(message),
                other => other,
            })?;
    }
    Ok(catalog)
}

/// Undirected group graph; an edge joins groups sharing at least one member.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupOverlapNetwork {
    edges: BTreeSet<(GroupId, GroupId)>,
}

impl GroupOverlapNetwork {
    pub fn from_edges<I: IntoIterator<Item = (GroupId, GroupId)>>(edges: I) -> Self {
        let edges = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        Self { edges }
    }

    /// Every pair of the given groups.
    pub fn complete<'a, I: IntoIterator<Item = &'a GroupId>>(groups: I) -> Self {
        let groups: Vec<&GroupId> = groups.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut edges = BTreeSet::new();
        for (i, a) in groups.iter().enumerate() {
            for b in &groups[i + 1..] {
                edges.insert(((*a).clone(), (*b).clone()));
            }
        }
        Self { edges }
    }

    pub fn contains(&self, a: &GroupId, b: &GroupId) -> bool {
        if a < b {
            self.edges.contains(&(a.clone(), b.clone()))
        } else {
            self.edges.contains(&(b.clone(), a.clone()))
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = &(GroupId, GroupId)> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

pub fn build_overlap_network(catalog: &GroupCatalog) -> Result<GroupOverlapNetwork, IngestError> {
    let with_members = catalog
        .entries
        .values()
        .filter(|g| g.members.is_some())
        .count();
    if with_members < 2 {
        return Err(IngestError::NoMembership);
    }
    let mut by_member: BTreeMap<&str, Vec<&GroupId>> = BTreeMap::new();
    for (group, info) in &catalog.entries {
        for m in info.members.iter().flatten() {
            by_member.entry(m).or_default().push(group);
        }
    }
    let mut edges = BTreeSet::new();
    for groups in by_member.values() {
        for (i, a) in groups.iter().enumerate() {
            for b in &groups[i + 1..] {
                // catalog iteration order keeps each list sorted
                edges.insert(((*a).clone(), (*b).clone()));
            }
        }
    }
    Ok(GroupOverlapNetwork { edges })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub category: &'static str,
    pub level: String,
    pub messages: usize,
    pub groups: usize,
}

/// Distinct message and group counts by modality, content type and
/// forwarding-score bucket.
pub fn summarize_dataset(events: &[AdoptionEvent]) -> Vec<SummaryRow> {
    #[derive(Default)]
    struct Counts<'a> {
        messages: BTreeSet<&'a MessageId>,
        groups: BTreeSet<&'a GroupId>,
    }
    let mut modality: BTreeMap<Modality, Counts> = BTreeMap::new();
    let mut content: BTreeMap<ContentType, Counts> = BTreeMap::new();
    let mut bucket: BTreeMap<ForwardingBucket, Counts> = BTreeMap::new();
    for ev in events {
        for c in [
            modality.entry(ev.modality).or_default(),
            content.entry(ev.content).or_default(),
            bucket
                .entry(ForwardingBucket::from_score(ev.forwarding_score))
                .or_default(),
        ] {
            c.messages.insert(&ev.message);
            c.groups.insert(&ev.group);
        }
    }
    let row = |category, level: &str, c: Option<&Counts>| SummaryRow {
        category,
        level: level.to_string(),
        messages: c.map_or(0, |c| c.messages.len()),
        groups: c.map_or(0, |c| c.groups.len()),
    };
    let mut rows = Vec::new();
    for m in Modality::ALL {
        rows.push(row("modality", m.as_str(), modality.get(&m)));
    }
    for ct in ContentType::ALL {
        rows.push(row("content_type", ct.as_str(), content.get(&ct)));
    }
    for b in ForwardingBucket::ALL {
        rows.push(row("forwarding_score", b.as_str(), bucket.get(&b)));
    }
    rows
}

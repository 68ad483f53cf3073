//! Text formats: event streams, label sidecars, segment reports and
//! statistics tables.
//!
//! Event stream grammar, one event per LF-terminated line, no header:
//!
//! ```text
//! S,<tick>,<pamp>,<danger>,<safe>
//! A,<tick>,<antigen_type>
//! ```
//!
//! Ticks are unsigned decimal integers. Signal values are dot-decimal reals
//! in `[0, 100]` written with shortest round-trip precision. Antigen types
//! are non-empty and contain no comma or control character.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::datagen::{valid_antigen_name, Label};
use crate::engine::PopulationConfig;
use crate::segmentation::{KAlphaScore, SegmentReport, SegmentationMode};
use crate::signal::{AntigenEvent, AntigenType, Event, SignalError, SignalInstance, Tick};
use crate::stats::{ComparisonGrid, SummaryRow, TTestResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineError {
    #[error("empty line")]
    Empty,
    #[error("unknown record tag '{0}' (expected S or A)")]
    UnknownTag(String),
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("invalid tick '{0}'")]
    BadTick(String),
    #[error("invalid {field} value '{text}'")]
    BadNumber { field: &'static str, text: String },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid antigen type '{0}'")]
    BadAntigenType(String),
}

#[derive(Debug, Error)]
pub enum StreamIoError {
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: LineError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_tick(text: &str) -> Result<Tick, LineError> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(LineError::BadTick(text.to_string()));
    }
    text.parse().map_err(|_| LineError::BadTick(text.to_string()))
}

fn parse_real(field: &'static str, text: &str) -> Result<f64, LineError> {
    let bad = || LineError::BadNumber {
        field,
        text: text.to_string(),
    };
    // Rust's float grammar also admits "inf"/"nan"; allow only plain decimals.
    if !text
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
    {
        return Err(bad());
    }
    text.parse::<f64>().map_err(|_| bad())
}

/// Parses one line (without its terminator).
pub fn parse_event_line(line: &str) -> Result<Event, LineError> {
    if line.is_empty() {
        return Err(LineError::Empty);
    }
    let fields: Vec<&str> = line.split(',').collect();
    match fields[0] {
        "S" => {
            if fields.len() != 5 {
                return Err(LineError::FieldCount {
                    expected: 5,
                    found: fields.len(),
                });
            }
            let s = SignalInstance::new(
                parse_tick(fields[1])?,
                parse_real("pamp", fields[2])?,
                parse_real("danger", fields[3])?,
                parse_real("safe", fields[4])?,
            )?;
            Ok(Event::Signal(s))
        }
        "A" => {
            if fields.len() != 3 {
                return Err(LineError::FieldCount {
                    expected: 3,
                    found: fields.len(),
                });
            }
            let tick = parse_tick(fields[1])?;
            if !valid_antigen_name(fields[2]) {
                return Err(LineError::BadAntigenType(fields[2].to_string()));
            }
            Ok(Event::Antigen(AntigenEvent::new(tick, fields[2])))
        }
        other => Err(LineError::UnknownTag(other.to_string())),
    }
}

pub fn format_event(ev: &Event) -> String {
    match ev {
        Event::Signal(s) => format!("S,{},{:?},{:?},{:?}", s.timestamp, s.pamp, s.danger, s.safe),
        Event::Antigen(a) => format!("A,{},{}", a.timestamp, a.antigen_type),
    }
}

pub fn write_events<W: Write>(mut w: W, events: &[Event]) -> io::Result<()> {
    for ev in events {
        writeln!(w, "{}", format_event(ev))?;
    }
    w.flush()
}

/// Line-numbered event iterator over a buffered reader.
pub struct EventReader<R> {
    inner: R,
    buf: String,
    line: usize,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(inner: R) -> Self {
        EventReader {
            inner,
            buf: String::new(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    /// 1-based line number with the parsed event.
    type Item = Result<(usize, Event), StreamIoError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        match self.inner.read_line(&mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                self.line += 1;
                let text = self.buf.strip_suffix('\n').unwrap_or(&self.buf);
                Some(
                    parse_event_line(text)
                        .map(|ev| (self.line, ev))
                        .map_err(|kind| StreamIoError::Parse { line: self.line, kind }),
                )
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

pub fn read_events<R: BufRead>(r: R) -> Result<Vec<Event>, StreamIoError> {
    EventReader::new(r).map(|res| res.map(|(_, ev)| ev)).collect()
}

/// `antigen_type,label` per line, sorted by type.
pub fn write_labels<W: Write>(mut w: W, labels: &BTreeMap<AntigenType, Label>) -> io::Result<()> {
    for (t, l) in labels {
        writeln!(w, "{t},{l}")?;
    }
    w.flush()
}

pub fn read_labels<R: BufRead>(r: R) -> Result<BTreeMap<AntigenType, Label>, StreamIoError> {
    let mut out = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let err = |msg: String| StreamIoError::Parse {
            line: i + 1,
            kind: LineError::BadAntigenType(msg),
        };
        let (t, l) = line.split_once(',').ok_or_else(|| err(line.clone()))?;
        if !valid_antigen_name(t) {
            return Err(err(t.to_string()));
        }
        let label = Label::from_str(l).map_err(err)?;
        out.insert(AntigenType::new(t), label);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    JsonLines,
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::JsonLines),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown format '{other}' (expected jsonl or table)")),
        }
    }
}

/// Everything needed to re-run the experiment that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    pub input: String,
    pub mode: SegmentationMode,
    pub segment_size: u64,
    pub include_forced: bool,
    #[serde(flatten)]
    pub population: PopulationConfig,
    pub seed: Option<u64>,
    pub antigens_ingested: u64,
    pub signals: u64,
    pub records: u64,
    pub dropped: u64,
    pub final_tick: Option<Tick>,
}

impl ReportMeta {
    /// Short run label such as `abs:1000` or `none`.
    pub fn label(&self) -> String {
        match self.mode {
            SegmentationMode::None => "none".to_string(),
            m => format!("{m}:{}", self.segment_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportDocument {
    pub meta: ReportMeta,
    pub segments: Vec<SegmentReport>,
}

/// Rounds to the 6 decimal places reports carry.
pub fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().unwrap_or(x)
}

impl ReportDocument {
    /// Copy with every Kα rounded as it would be after a write/parse cycle.
    pub fn rounded(&self) -> ReportDocument {
        let mut doc = self.clone();
        for seg in &mut doc.segments {
            for s in seg.scores.values_mut() {
                s.k_alpha = round6(s.k_alpha);
            }
        }
        doc
    }
}

fn fixed6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::Error;
    if !v.is_finite() {
        return Err(S::Error::custom("non-finite Kα"));
    }
    let raw = RawValue::from_string(format!("{v:.6}")).map_err(S::Error::custom)?;
    raw.serialize(s)
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    kind: String,
    #[serde(flatten)]
    meta: ReportMeta,
    segments: usize,
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    antigen_type: AntigenType,
    #[serde(serialize_with = "fixed6")]
    k_alpha: f64,
    total_count: u64,
    contributing_dcs: u64,
}

#[derive(Serialize, Deserialize)]
struct SegmentLine {
    kind: String,
    ordinal: u64,
    start_tick: Tick,
    end_tick: Tick,
    records: u64,
    antigen_instances: u64,
    empty: bool,
    scores: Vec<ScoreLine>,
}

fn json_line<T: Serialize>(out: &mut String, v: &T) {
    out.push_str(&serde_json::to_string(v).expect("report values serialize"));
    out.push('\n');
}

fn report_types(segments: &[SegmentReport]) -> Vec<AntigenType> {
    let set: BTreeSet<&AntigenType> = segments.iter().flat_map(|s| s.scores.keys()).collect();
    set.into_iter().cloned().collect()
}

pub fn write_report(doc: &ReportDocument, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::JsonLines => {
            json_line(
                &mut out,
                &MetaLine {
                    kind: "meta".into(),
                    meta: doc.meta.clone(),
                    segments: doc.segments.len(),
                },
            );
            for seg in &doc.segments {
                json_line(
                    &mut out,
                    &SegmentLine {
                        kind: "segment".into(),
                        ordinal: seg.ordinal,
                        start_tick: seg.start_tick,
                        end_tick: seg.end_tick,
                        records: seg.records,
                        antigen_instances: seg.antigen_instances,
                        empty: seg.empty,
                        scores: seg
                            .scores
                            .values()
                            .map(|s| ScoreLine {
                                antigen_type: s.antigen_type.clone(),
                                k_alpha: s.k_alpha,
                                total_count: s.total_count,
                                contributing_dcs: s.contributing_dcs,
                            })
                            .collect(),
                    },
                );
            }
        }
        Format::Table => {
            let m = &doc.meta;
            let _ = writeln!(
                out,
                "# {} report: input={} mode={} size={} population={} threshold_step={} flush={} antigens={} records={} dropped={}",
                m.tool,
                m.input,
                m.mode,
                m.segment_size,
                m.population.population_size,
                m.population.threshold_step,
                m.population.flush_at_end,
                m.antigens_ingested,
                m.records,
                m.dropped
            );
            let types = report_types(&doc.segments);
            let _ = write!(
                out,
                "{:>8} {:>10} {:>10} {:>9} {:>10}",
                "seg", "start", "end", "records", "antigens"
            );
            for t in &types {
                let _ = write!(out, " {:>16}", t.as_str());
            }
            out.push('\n');
            for seg in &doc.segments {
                let _ = write!(
                    out,
                    "{:>8} {:>10} {:>10} {:>9} {:>10}",
                    seg.ordinal, seg.start_tick, seg.end_tick, seg.records, seg.antigen_instances
                );
                for t in &types {
                    match seg.scores.get(t) {
                        Some(s) => {
                            let _ = write!(out, " {:>16.6}", s.k_alpha);
                        }
                        None => {
                            let _ = write!(out, " {:>16}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum ReportParseError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("report has no metadata line")]
    MissingMeta,
    #[error("metadata announces {expected} segments, found {found}")]
    SegmentCount { expected: usize, found: usize },
}

pub fn parse_report(text: &str) -> Result<ReportDocument, ReportParseError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(ReportParseError::MissingMeta)?;
    let meta: MetaLine = serde_json::from_str(first).map_err(|source| ReportParseError::Json { line: 1, source })?;
    if meta.kind != "meta" {
        return Err(ReportParseError::MissingMeta);
    }
    let mut segments = Vec::with_capacity(meta.segments);
    for (i, line) in lines {
        let json_err = |source| ReportParseError::Json { line: i + 1, source };
        let seg: SegmentLine = serde_json::from_str(line).map_err(json_err)?;
        if seg.kind != "segment" {
            return Err(json_err(serde_json::Error::custom(format!(
                "unexpected line kind '{}'",
                seg.kind
            ))));
        }
        segments.push(SegmentReport {
            ordinal: seg.ordinal,
            start_tick: seg.start_tick,
            end_tick: seg.end_tick,
            records: seg.records,
            antigen_instances: seg.antigen_instances,
            empty: seg.empty,
            scores: seg
                .scores
                .into_iter()
                .map(|s| {
                    (
                        s.antigen_type.clone(),
                        KAlphaScore {
                            antigen_type: s.antigen_type,
                            k_alpha: s.k_alpha,
                            total_count: s.total_count,
                            contributing_dcs: s.contributing_dcs,
                        },
                    )
                })
                .collect(),
        });
    }
    if segments.len() != meta.segments {
        return Err(ReportParseError::SegmentCount {
            expected: meta.segments,
            found: segments.len(),
        });
    }
    Ok(ReportDocument {
        meta: meta.meta,
        segments,
    })
}

/// Per-type summary rows, grouped by type in the Min/Mean/Max/Stdev layout.
pub fn write_summary(rows: &[SummaryRow], mode: SegmentationMode, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::JsonLines => {
            #[derive(Serialize)]
            struct Line<'a> {
                kind: &'a str,
                mode: SegmentationMode,
                #[serde(flatten)]
                row: &'a SummaryRow,
            }
            for row in rows {
                json_line(
                    &mut out,
                    &Line {
                        kind: "summary",
                        mode,
                        row,
                    },
                );
            }
        }
        Format::Table => {
            let _ = writeln!(
                out,
                "{:<12} {:>16} {:>16} {:>16} {:>16} {:>9}",
                format!("{mode} seg"),
                "min",
                "mean",
                "max",
                "stdev",
                "segments"
            );
            let mut current: Option<&AntigenType> = None;
            for row in rows {
                if current != Some(&row.antigen_type) {
                    let _ = writeln!(out, "{}", row.antigen_type);
                    current = Some(&row.antigen_type);
                }
                let s = &row.summary;
                let _ = writeln!(
                    out,
                    "{:<12} {:>16.6} {:>16.6} {:>16.6} {:>16.6} {:>9}",
                    row.segment_size, s.min, s.mean, s.max, s.stdev, s.n_segments
                );
            }
        }
    }
    out
}

fn p_cell(r: &Option<TTestResult>) -> String {
    match r {
        None => "n/a".to_string(),
        Some(t) if t.significant => format!("{:.4} *", t.p_value),
        Some(t) => format!("{:.4}", t.p_value),
    }
}

/// Pairwise p-value triangles per type, then the one-sided comparison with
/// the baseline. `*` marks p < alpha; `n/a` marks too few segments.
pub fn write_grid(grid: &ComparisonGrid, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::JsonLines => {
            #[derive(Serialize)]
            struct Meta<'a> {
                kind: &'a str,
                alpha: f64,
                runs: &'a [String],
                types: &'a [AntigenType],
                baseline: &'a BTreeMap<AntigenType, f64>,
            }
            json_line(
                &mut out,
                &Meta {
                    kind: "meta",
                    alpha: grid.alpha,
                    runs: &grid.runs,
                    types: &grid.types,
                    baseline: &grid.baseline,
                },
            );
            #[derive(Serialize)]
            struct Cell<'a, T> {
                kind: &'a str,
                #[serde(flatten)]
                cell: &'a T,
            }
            for cell in &grid.pairwise {
                json_line(&mut out, &Cell { kind: "pairwise", cell });
            }
            for cell in &grid.versus_baseline {
                json_line(&mut out, &Cell { kind: "baseline", cell });
            }
        }
        Format::Table => {
            const W: usize = 12;
            let runs = &grid.runs;
            let _ = writeln!(
                out,
                "# two-sample two-sided t-tests, p-values (alpha = {}, '*' = significant)",
                grid.alpha
            );
            if runs.len() >= 2 {
                for t in &grid.types {
                    let _ = writeln!(out, "{t}");
                    let _ = write!(out, "{:<W$}", "");
                    for r in &runs[1..] {
                        let _ = write!(out, " {r:>W$}");
                    }
                    out.push('\n');
                    for (i, left) in runs[..runs.len() - 1].iter().enumerate() {
                        let _ = write!(out, "{left:<W$}");
                        for (j, right) in runs.iter().enumerate().skip(1) {
                            let text = if j <= i {
                                "-".to_string()
                            } else {
                                grid.pairwise
                                    .iter()
                                    .find(|c| &c.antigen_type == t && &c.left == left && &c.right == right)
                                    .map_or_else(|| "n/a".to_string(), |c| p_cell(&c.result))
                            };
                            let _ = write!(out, " {text:>W$}");
                        }
                        out.push('\n');
                    }
                }
            }
            let _ = writeln!(out, "# one-sample one-sided t-tests against the unsegmented Kα");
            let _ = write!(out, "{:<W$}", "seg");
            for t in &grid.types {
                let _ = write!(out, " {:>W$}", t.as_str());
            }
            out.push('\n');
            let _ = write!(out, "{:<W$}", "true mean");
            for t in &grid.types {
                let _ = write!(out, " {:>W$.2}", grid.baseline.get(t).copied().unwrap_or(f64::NAN));
            }
            out.push('\n');
            for run in runs {
                let _ = write!(out, "{run:<W$}");
                for t in &grid.types {
                    let text = grid
                        .versus_baseline
                        .iter()
                        .find(|c| &c.antigen_type == t && &c.run == run)
                        .map_or_else(|| "n/a".to_string(), |c| p_cell(&c.result));
                    let _ = write!(out, " {text:>W$}");
                }
                out.push('\n');
            }
        }
    }
    out
}

//! Slicing the presented-record stream and scoring each slice.
//!
//! Three modes are supported:
//!
//! * `none`: one report over everything (the classic offline analysis);
//! * `abs`: close a segment once it holds at least `size` antigen instances.
//!   Records are never split, so a segment can overshoot by one record;
//! * `tbs`: fixed tick windows `[n*size, (n+1)*size)`, emitting empty
//!   windows too.
//!
//! Both segmenters are incremental ([`AbsSegmenter`], [`TbsSegmenter`]) so a
//! closed segment can be analysed while detection continues.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ProcessedRecord;
use crate::signal::{AntigenType, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMode {
    None,
    Abs,
    Tbs,
}

impl SegmentationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentationMode::None => "none",
            SegmentationMode::Abs => "abs",
            SegmentationMode::Tbs => "tbs",
        }
    }
}

impl fmt::Display for SegmentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentationMode {
    type Err = SegmentationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(SegmentationMode::None),
            "abs" => Ok(SegmentationMode::Abs),
            "tbs" => Ok(SegmentationMode::Tbs),
            other => Err(SegmentationError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentationError {
    #[error("segment size must be at least 1")]
    ZeroSize,
    #[error("unknown segmentation mode '{0}' (expected none, abs or tbs)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub mode: SegmentationMode,
    /// Antigen instances (abs) or ticks (tbs); ignored for `none`.
    pub segment_size: u64,
    /// Whether end-of-stream forced records take part in the analysis.
    pub include_forced: bool,
}

impl SegmenterConfig {
    pub fn none() -> Self {
        SegmenterConfig {
            mode: SegmentationMode::None,
            segment_size: 1,
            include_forced: true,
        }
    }

    pub fn abs(size: u64) -> Self {
        SegmenterConfig {
            mode: SegmentationMode::Abs,
            segment_size: size,
            include_forced: true,
        }
    }

    pub fn tbs(size: u64) -> Self {
        SegmenterConfig {
            mode: SegmentationMode::Tbs,
            segment_size: size,
            include_forced: true,
        }
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        if self.mode != SegmentationMode::None && self.segment_size == 0 {
            return Err(SegmentationError::ZeroSize);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub ordinal: u64,
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub records: Vec<ProcessedRecord>,
    pub antigen_instances: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KAlphaScore {
    pub antigen_type: AntigenType,
    pub k_alpha: f64,
    pub total_count: u64,
    pub contributing_dcs: u64,
}

/// Per-type anomaly coefficient: the sum of `sum_k` over every record that
/// holds the type, divided by the total number of that type's instances.
///
/// A record's `sum_k` enters each type's numerator once, regardless of how
/// many instances of the type it holds.
pub fn compute_k_alpha<'a, I>(records: I) -> BTreeMap<AntigenType, KAlphaScore>
where
    I: IntoIterator<Item = &'a ProcessedRecord>,
{
    let mut acc: BTreeMap<AntigenType, (f64, u64, u64)> = BTreeMap::new();
    for r in records {
        for (t, &n) in &r.antigen_counts {
            let e = match acc.get_mut(t) {
                Some(e) => e,
                None => acc.entry(t.clone()).or_insert((0.0, 0, 0)),
            };
            e.0 += r.sum_k;
            e.1 += n;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .filter(|(_, (_, count, _))| *count > 0)
        .map(|(t, (sum_k, count, dcs))| {
            let score = KAlphaScore {
                antigen_type: t.clone(),
                k_alpha: sum_k / count as f64,
                total_count: count,
                contributing_dcs: dcs,
            };
            (t, score)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub ordinal: u64,
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub records: u64,
    pub antigen_instances: u64,
    pub empty: bool,
    pub scores: BTreeMap<AntigenType, KAlphaScore>,
}

impl SegmentReport {
    pub fn from_segment(seg: &Segment) -> Self {
        let scores = compute_k_alpha(&seg.records);
        SegmentReport {
            ordinal: seg.ordinal,
            start_tick: seg.start_tick,
            end_tick: seg.end_tick,
            records: seg.records.len() as u64,
            antigen_instances: seg.antigen_instances,
            empty: seg.antigen_instances == 0,
            scores,
        }
    }

    /// Labels each scored type as anomalous (`true`) when its Kα exceeds `threshold`.
    pub fn classify(&self, threshold: f64) -> BTreeMap<AntigenType, bool> {
        self.scores
            .iter()
            .map(|(t, s)| (t.clone(), s.k_alpha > threshold))
            .collect()
    }
}

/// Incremental antigen-count segmenter.
#[derive(Debug, Clone)]
pub struct AbsSegmenter {
    size: u64,
    open: Vec<ProcessedRecord>,
    count: u64,
    next_ordinal: u64,
}

impl AbsSegmenter {
    pub fn new(size: u64) -> Result<Self, SegmentationError> {
        if size == 0 {
            return Err(SegmentationError::ZeroSize);
        }
        Ok(AbsSegmenter {
            size,
            open: Vec::new(),
            count: 0,
            next_ordinal: 0,
        })
    }

    fn close(&mut self) -> Segment {
        let records = std::mem::take(&mut self.open);
        let seg = Segment {
            ordinal: self.next_ordinal,
            start_tick: records.first().map_or(0, |r| r.presented_at),
            end_tick: records.last().map_or(0, |r| r.presented_at),
            records,
            antigen_instances: self.count,
        };
        self.count = 0;
        self.next_ordinal += 1;
        seg
    }

    /// Appends a record; returns the segment it closed, if any.
    pub fn push(&mut self, record: ProcessedRecord) -> Option<Segment> {
        self.count += record.antigen_total();
        self.open.push(record);
        (self.count >= self.size).then(|| self.close())
    }

    /// Emits the trailing partial segment.
    pub fn finish(mut self) -> Option<Segment> {
        (!self.open.is_empty()).then(|| self.close())
    }
}

/// Incremental fixed-window segmenter. Windows with no records are still
/// emitted so gaps stay visible downstream.
#[derive(Debug, Clone)]
pub struct TbsSegmenter {
    size: u64,
    window: u64,
    open: Vec<ProcessedRecord>,
    count: u64,
    started: bool,
}

impl TbsSegmenter {
    pub fn new(size: u64) -> Result<Self, SegmentationError> {
        if size == 0 {
            return Err(SegmentationError::ZeroSize);
        }
        Ok(TbsSegmenter {
            size,
            window: 0,
            open: Vec::new(),
            count: 0,
            started: false,
        })
    }

    fn close(&mut self) -> Segment {
        let start = self.window * self.size;
        let seg = Segment {
            ordinal: self.window,
            start_tick: start,
            end_tick: start + (self.size - 1),
            records: std::mem::take(&mut self.open),
            antigen_instances: self.count,
        };
        self.count = 0;
        self.window += 1;
        seg
    }

    fn advance_to(&mut self, window: u64, out: &mut Vec<Segment>) {
        while self.window < window {
            out.push(self.close());
        }
    }

    /// Appends a record, returning every window that closed before it.
    /// Records must arrive in non-decreasing `presented_at` order; a late
    /// record is placed in the currently open window.
    pub fn push(&mut self, record: ProcessedRecord) -> Vec<Segment> {
        self.started = true;
        let mut out = Vec::new();
        self.advance_to(record.presented_at / self.size, &mut out);
        self.count += record.antigen_total();
        self.open.push(record);
        out
    }

    /// Closes the open window and every window up to the one holding `final_tick`.
    pub fn finish(mut self, final_tick: Option<Tick>) -> Vec<Segment> {
        let mut out = Vec::new();
        let last = match (final_tick, self.started) {
            (None, false) => return out,
            (Some(t), _) => (t / self.size).max(self.window),
            (None, true) => self.window,
        };
        self.advance_to(last, &mut out);
        out.push(self.close());
        out
    }
}

pub fn segment_abs(records: &[ProcessedRecord], size: u64) -> Result<Vec<Segment>, SegmentationError> {
    let mut seg = AbsSegmenter::new(size)?;
    let mut out: Vec<Segment> = records.iter().cloned().filter_map(|r| seg.push(r)).collect();
    out.extend(seg.finish());
    Ok(out)
}

/// Fixed-window segmentation; `final_tick` extends the covered range past the
/// last record (pass the stream's last tick to get trailing empty windows).
pub fn segment_tbs(
    records: &[ProcessedRecord],
    size: u64,
    final_tick: Option<Tick>,
) -> Result<Vec<Segment>, SegmentationError> {
    let mut seg = TbsSegmenter::new(size)?;
    let mut out = Vec::new();
    for r in records {
        out.extend(seg.push(r.clone()));
    }
    out.extend(seg.finish(final_tick));
    Ok(out)
}

/// Runs the configured segmentation and scores every segment.
pub fn analyze(
    records: &[ProcessedRecord],
    cfg: &SegmenterConfig,
    final_tick: Option<Tick>,
) -> Result<Vec<SegmentReport>, SegmentationError> {
    cfg.validate()?;
    let filtered: Vec<ProcessedRecord>;
    let records = if cfg.include_forced {
        records
    } else {
        filtered = records.iter().filter(|r| !r.forced).cloned().collect();
        &filtered
    };
    let segments = match cfg.mode {
        SegmentationMode::None => {
            let last = records.last().map(|r| r.presented_at);
            vec![Segment {
                ordinal: 0,
                start_tick: records.first().map_or(0, |r| r.presented_at),
                end_tick: final_tick.max(last).unwrap_or(0),
                antigen_instances: records.iter().map(ProcessedRecord::antigen_total).sum(),
                records: records.to_vec(),
            }]
        }
        SegmentationMode::Abs => segment_abs(records, cfg.segment_size)?,
        SegmentationMode::Tbs => segment_tbs(records, cfg.segment_size, final_tick)?,
    };
    Ok(segments.iter().map(SegmentReport::from_segment).collect())
}

/// Kα values of each type across the reports, in report order. Reports that
/// do not score a type contribute nothing to its series.
pub fn k_alpha_series(reports: &[SegmentReport]) -> BTreeMap<AntigenType, Vec<f64>> {
    let mut out: BTreeMap<AntigenType, Vec<f64>> = BTreeMap::new();
    for rep in reports {
        for (t, s) in &rep.scores {
            out.entry(t.clone()).or_default().push(s.k_alpha);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(at: Tick, sum_k: f64, counts: &[(&str, u64)]) -> ProcessedRecord {
        ProcessedRecord {
            presented_at: at,
            dc_index: 1,
            sum_k,
            antigen_counts: counts.iter().map(|&(t, n)| (AntigenType::new(t), n)).collect(),
            forced: false,
        }
    }

    #[test]
    fn k_alpha_hand_values() {
        let one = compute_k_alpha(&[rec(0, -5.0, &[("A", 10)])]);
        assert_eq!(one["A"].k_alpha, -0.5);
        assert_eq!(one["A"].total_count, 10);
        assert_eq!(one["A"].contributing_dcs, 1);

        let two = compute_k_alpha(&[rec(0, 4.0, &[("A", 2)]), rec(1, -2.0, &[("A", 2), ("B", 1)])]);
        assert_eq!(two["A"].k_alpha, 0.5);
        assert_eq!(two["B"].k_alpha, -2.0);
        assert_eq!(two["A"].contributing_dcs, 2);

        assert!(compute_k_alpha(&[]).is_empty());
        assert!(compute_k_alpha(&[rec(0, 9.0, &[])]).is_empty());
    }

    #[test]
    fn abs_closes_on_atomic_records() {
        let rs = vec![
            rec(0, 1.0, &[("a", 40)]),
            rec(1, 1.0, &[("a", 50)]),
            rec(2, 1.0, &[("a", 30)]),
        ];
        let segs = segment_abs(&rs, 100).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].antigen_instances, 120);
        assert_eq!((segs[0].start_tick, segs[0].end_tick), (0, 2));

        let rs = vec![
            rec(0, 1.0, &[("a", 1)]),
            rec(0, 1.0, &[]),
            rec(1, 1.0, &[("a", 2)]),
            rec(2, 1.0, &[("b", 1)]),
        ];
        let segs = segment_abs(&rs, 1).unwrap();
        let sizes: Vec<usize> = segs.iter().map(|s| s.records.len()).collect();
        assert_eq!(sizes, vec![1, 2, 1]);

        let segs = segment_abs(&rs, 1_000).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].records, rs);

        assert_eq!(segment_abs(&rs, 0), Err(SegmentationError::ZeroSize));
    }

    #[test]
    fn tbs_windows() {
        let rs = vec![
            rec(3, 1.0, &[("a", 1)]),
            rec(7, 1.0, &[("a", 1)]),
            rec(12, 1.0, &[("a", 1)]),
        ];
        let segs = segment_tbs(&rs, 10, None).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].records.len(), 2);
        assert_eq!((segs[0].start_tick, segs[0].end_tick), (0, 9));
        assert_eq!(segs[1].records[0].presented_at, 12);

        let segs = segment_tbs(&rs, 1, None).unwrap();
        assert_eq!(segs.len(), 13);
        assert_eq!(segs.iter().filter(|s| s.records.is_empty()).count(), 10);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.ordinal, i as u64);
            assert_eq!(s.start_tick, i as u64);
        }

        assert_eq!(segment_tbs(&rs, 50, None).unwrap().len(), 1);
        // trailing empty windows up to the final stream tick
        assert_eq!(segment_tbs(&rs, 10, Some(35)).unwrap().len(), 4);
        assert!(segment_tbs(&[], 10, None).unwrap().is_empty());
        assert_eq!(segment_tbs(&[], 10, Some(25)).unwrap().len(), 3);
    }

    #[test]
    fn analyze_modes() {
        let rs = vec![
            rec(0, 4.0, &[("A", 2)]),
            rec(5, -2.0, &[("A", 2), ("B", 1)]),
            rec(9, 7.0, &[("B", 3)]),
        ];
        let none = analyze(&rs, &SegmenterConfig::none(), Some(9)).unwrap();
        assert_eq!(none.len(), 1);
        let abs = analyze(&rs, &SegmenterConfig::abs(1_000_000), Some(9)).unwrap();
        assert_eq!(none[0].scores, abs[0].scores);
        assert_eq!(none[0].antigen_instances, 8);

        let tbs = analyze(&[], &SegmenterConfig::tbs(5), None).unwrap();
        assert!(tbs.is_empty());

        let tbs = analyze(&rs, &SegmenterConfig::tbs(2), Some(9)).unwrap();
        assert_eq!(tbs.len(), 5);
        assert!(tbs[1].empty && tbs[1].scores.is_empty());
        assert!(!tbs[0].empty);
    }

    #[test]
    fn forced_records_can_be_excluded() {
        let mut forced = rec(4, 10.0, &[("A", 1)]);
        forced.forced = true;
        let rs = vec![rec(0, 2.0, &[("A", 1)]), forced];
        let mut cfg = SegmenterConfig::none();
        assert_eq!(analyze(&rs, &cfg, None).unwrap()[0].scores["A"].k_alpha, 6.0);
        cfg.include_forced = false;
        assert_eq!(analyze(&rs, &cfg, None).unwrap()[0].scores["A"].k_alpha, 2.0);
    }

    #[test]
    fn classify_with_threshold() {
        let rep = analyze(
            &[rec(0, 10.0, &[("A", 1)]), rec(0, -10.0, &[("B", 1)])],
            &SegmenterConfig::none(),
            None,
        )
        .unwrap()
        .remove(0);
        let labels = rep.classify(0.0);
        assert!(labels["A"]);
        assert!(!labels["B"]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("tbs".parse::<SegmentationMode>().unwrap(), SegmentationMode::Tbs);
        assert!("sliding".parse::<SegmentationMode>().is_err());
    }
}

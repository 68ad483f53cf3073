//! Seeded synthetic SYN-scan style scenarios.
//!
//! A scenario is one signal set per tick plus a Poisson number of antigens
//! per source per tick. Tick levels come from the background or from the
//! phase covering the tick; phases also scale source rates.
//!
//! # Reproducibility
//!
//! All randomness comes from [`SplitMix64`] seeded with `ScenarioSpec::seed`.
//! Per tick, draws are consumed in this order:
//!
//! 1. for each source in declaration order, its Poisson count
//!    (sequential inverse transform; a rate of 0 consumes nothing, rates
//!    above 500 are split into chunks of at most 500 that are drawn in turn);
//! 2. three standard normals, for PAMP, danger and safe in that order, each
//!    from two uniforms via Box–Muller (cosine branch only).
//!
//! Antigens of a tick are emitted before its signal, interleaved across
//! sources (one of each source in turn while any remain).

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{AntigenEvent, AntigenType, Event, SignalInstance, Tick, SIGNAL_MAX, SIGNAL_MIN};

/// SplitMix64 (Steele, Lea & Flood). State advances by `0x9E3779B97F4A7C15`;
/// output mixes with shifts 30/27/31 and multipliers `0xBF58476D1CE4E5B9`,
/// `0x94D049BB133111EB`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    pub fn next_poisson(&mut self, lambda: f64) -> u64 {
        const CHUNK: f64 = 500.0;
        let mut remaining = lambda;
        let mut total = 0;
        while remaining > 0.0 {
            let l = remaining.min(CHUNK);
            total += self.poisson_small(l);
            remaining -= l;
        }
        total
    }

    fn poisson_small(&mut self, lambda: f64) -> u64 {
        let u = self.next_f64();
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            if p == 0.0 {
                break;
            }
            cdf += p;
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Anomalous,
    Normal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Anomalous => "anomalous",
            Label::Normal => "normal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anomalous" => Ok(Label::Anomalous),
            "normal" => Ok(Label::Normal),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalLevels {
    pub pamp_level: f64,
    pub danger_level: f64,
    pub safe_level: f64,
    pub noise_stdev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntigenSource {
    pub antigen_type: String,
    pub label: Label,
    /// Expected antigens per tick outside any phase multiplier.
    pub base_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub start_tick: Tick,
    /// Exclusive.
    pub end_tick: Tick,
    #[serde(flatten)]
    pub levels: SignalLevels,
    #[serde(default)]
    pub rate_multipliers: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub duration_ticks: u64,
    pub seed: u64,
    /// Levels for ticks not covered by any phase.
    pub background: SignalLevels,
    pub antigen_sources: Vec<AntigenSource>,
    #[serde(default)]
    pub phases: Vec<PhaseSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("duration must be at least one tick")]
    ZeroDuration,
    #[error("phase [{start}, {end}) is empty or extends past the scenario duration")]
    PhaseBounds { start: Tick, end: Tick },
    #[error("phases overlap: [{0}, {1}) and [{2}, {3})")]
    PhasesOverlap(Tick, Tick, Tick, Tick),
    #[error("{0} level {1} is outside [0, 100]")]
    LevelOutOfRange(&'static str, f64),
    #[error("noise stdev must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("rate for '{0}' must be finite and non-negative, got {1}")]
    BadRate(String, f64),
    #[error("invalid antigen type '{0}': must be non-empty without commas or control characters")]
    BadAntigenType(String),
    #[error("antigen type '{0}' declared twice")]
    DuplicateSource(String),
    #[error("phase multiplier names unknown antigen type '{0}'")]
    UnknownSource(String),
    #[error("an evaluation scenario needs at least one anomalous and one normal source")]
    MissingLabel,
}

pub(crate) fn valid_antigen_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c == ',' || c.is_control())
}

fn check_levels(l: &SignalLevels) -> Result<(), ScenarioError> {
    for (name, v) in [
        ("pamp", l.pamp_level),
        ("danger", l.danger_level),
        ("safe", l.safe_level),
    ] {
        if !(SIGNAL_MIN..=SIGNAL_MAX).contains(&v) {
            return Err(ScenarioError::LevelOutOfRange(name, v));
        }
    }
    if !(l.noise_stdev.is_finite() && l.noise_stdev >= 0.0) {
        return Err(ScenarioError::BadNoise(l.noise_stdev));
    }
    Ok(())
}

fn check_rate(name: &str, r: f64) -> Result<(), ScenarioError> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::BadRate(name.to_string(), r))
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ticks == 0 {
            return Err(ScenarioError::ZeroDuration);
        }
        check_levels(&self.background)?;
        let mut names = BTreeSet::new();
        for s in &self.antigen_sources {
            if !valid_antigen_name(&s.antigen_type) {
                return Err(ScenarioError::BadAntigenType(s.antigen_type.clone()));
            }
            if !names.insert(s.antigen_type.as_str()) {
                return Err(ScenarioError::DuplicateSource(s.antigen_type.clone()));
            }
            check_rate(&s.antigen_type, s.base_rate)?;
        }
        for p in &self.phases {
            if p.start_tick >= p.end_tick || p.end_tick > self.duration_ticks {
                return Err(ScenarioError::PhaseBounds {
                    start: p.start_tick,
                    end: p.end_tick,
                });
            }
            check_levels(&p.levels)?;
            for (t, &m) in &p.rate_multipliers {
                if !names.contains(t.as_str()) {
                    return Err(ScenarioError::UnknownSource(t.clone()));
                }
                check_rate(t, m)?;
            }
        }
        let mut spans: Vec<(Tick, Tick)> = self.phases.iter().map(|p| (p.start_tick, p.end_tick)).collect();
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(ScenarioError::PhasesOverlap(w[0].0, w[0].1, w[1].0, w[1].1));
            }
        }
        Ok(())
    }

    /// Stricter check for scenarios used to score detection.
    pub fn validate_for_evaluation(&self) -> Result<(), ScenarioError> {
        self.validate()?;
        let has = |l: Label| self.antigen_sources.iter().any(|s| s.label == l);
        if has(Label::Anomalous) && has(Label::Normal) {
            Ok(())
        } else {
            Err(ScenarioError::MissingLabel)
        }
    }

    fn phase_at(&self, t: Tick) -> Option<&PhaseSpec> {
        self.phases.iter().find(|p| p.start_tick <= t && t < p.end_tick)
    }

    fn rate(&self, source: &AntigenSource, phase: Option<&PhaseSpec>) -> f64 {
        let m = phase
            .and_then(|p| p.rate_multipliers.get(&source.antigen_type))
            .copied()
            .unwrap_or(1.0);
        source.base_rate * m
    }

    /// Analytic expected antigen total over the whole scenario.
    pub fn expected_antigens(&self) -> f64 {
        let mut total = 0.0;
        let covered: u64 = self.phases.iter().map(|p| p.end_tick - p.start_tick).sum();
        let outside = self.duration_ticks.saturating_sub(covered) as f64;
        for s in &self.antigen_sources {
            total += s.base_rate * outside;
            for p in &self.phases {
                total += self.rate(s, Some(p)) * (p.end_tick - p.start_tick) as f64;
            }
        }
        total
    }

    /// Multiplies every source's base rate.
    pub fn scale_rates(mut self, factor: f64) -> Self {
        for s in &mut self.antigen_sources {
            s.base_rate *= factor;
        }
        self
    }

    pub fn labels(&self) -> BTreeMap<AntigenType, Label> {
        self.antigen_sources
            .iter()
            .map(|s| (AntigenType::new(&s.antigen_type), s.label))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub events: Vec<Event>,
    pub labels: BTreeMap<AntigenType, Label>,
}

impl Scenario {
    pub fn antigen_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::Antigen(_))).count()
    }
}

fn noisy(rng: &mut SplitMix64, level: f64, stdev: f64) -> f64 {
    (level + stdev * rng.next_gaussian()).clamp(SIGNAL_MIN, SIGNAL_MAX)
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let types: Vec<AntigenType> = spec
        .antigen_sources
        .iter()
        .map(|s| AntigenType::new(&s.antigen_type))
        .collect();
    let mut events = Vec::new();
    let mut counts = vec![0u64; types.len()];

    for t in 0..spec.duration_ticks {
        let phase = spec.phase_at(t);
        for (c, s) in counts.iter_mut().zip(&spec.antigen_sources) {
            *c = rng.next_poisson(spec.rate(s, phase));
        }
        let rounds = counts.iter().copied().max().unwrap_or(0);
        for round in 0..rounds {
            for (ty, &c) in types.iter().zip(&counts) {
                if round < c {
                    events.push(Event::Antigen(AntigenEvent {
                        timestamp: t,
                        antigen_type: ty.clone(),
                    }));
                }
            }
        }
        let levels = phase.map_or(&spec.background, |p| &p.levels);
        let pamp = noisy(&mut rng, levels.pamp_level, levels.noise_stdev);
        let danger = noisy(&mut rng, levels.danger_level, levels.noise_stdev);
        let safe = noisy(&mut rng, levels.safe_level, levels.noise_stdev);
        events.push(Event::Signal(SignalInstance {
            timestamp: t,
            pamp,
            danger,
            safe,
        }));
    }
    Ok(Scenario {
        events,
        labels: spec.labels(),
    })
}

/// Desk-scale stand-in for a host-level SYN-scan capture.
///
/// One hour of per-second signal sets with two ten-minute scan bursts.
/// "Nmap" (the scanner) and "Pts" (its parent terminal) are anomalous and
/// mostly active during the bursts; "Firefox" browses steadily throughout
/// and is a little busier during the bursts. The signal levels are plausible
/// reconstructions, not measurements: during a scan the ICMP-unreachable
/// rate (PAMP) and TCP packet ratio (danger) rise while the packet-size
/// derived safe signal collapses. Expected antigen total is 102,000.
pub fn bundled_scenario_syn_scan() -> ScenarioSpec {
    let scan = |start: Tick, end: Tick| PhaseSpec {
        start_tick: start,
        end_tick: end,
        levels: SignalLevels {
            pamp_level: 60.0,
            danger_level: 55.0,
            safe_level: 8.0,
            noise_stdev: 10.0,
        },
        rate_multipliers: [
            ("Nmap".to_string(), 40.0),
            ("Pts".to_string(), 10.0),
            ("Firefox".to_string(), 1.25),
        ]
        .into_iter()
        .collect(),
    };
    ScenarioSpec {
        duration_ticks: 3600,
        seed: 42,
        background: SignalLevels {
            pamp_level: 2.0,
            danger_level: 10.0,
            safe_level: 55.0,
            noise_stdev: 8.0,
        },
        antigen_sources: vec![
            AntigenSource {
                antigen_type: "Nmap".into(),
                label: Label::Anomalous,
                base_rate: 0.5,
            },
            AntigenSource {
                antigen_type: "Firefox".into(),
                label: Label::Normal,
                base_rate: 16.0,
            },
            AntigenSource {
                antigen_type: "Pts".into(),
                label: Label::Anomalous,
                base_rate: 1.0,
            },
        ],
        phases: vec![scan(600, 1200), scan(2100, 2700)],
    }
}

//! The deterministic DC population.
//!
//! Antigens are dealt round-robin to cells; each signal tick is transformed
//! once and applied to every cell. A cell whose lifespan drops to zero or
//! below presents its antigen counts and accumulated k as a
//! [`ProcessedRecord`] and is reset in place, so the population size never
//! changes.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{
    AntigenEvent, AntigenType, Event, SignalError, SignalInstance, Tick, WeightMatrix, WeightViolation,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub population_size: usize,
    pub threshold_step: f64,
    pub weights: WeightMatrix,
    pub flush_at_end: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            population_size: 100,
            threshold_step: 12.0,
            weights: WeightMatrix::default(),
            flush_at_end: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("threshold step must be a positive finite number, got {0}")]
    ThresholdStep(f64),
    #[error("invalid weights: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Weights(Vec<WeightViolation>),
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population_size == 0 {
            return Err(ConfigError::EmptyPopulation);
        }
        if !(self.threshold_step.is_finite() && self.threshold_step > 0.0) {
            return Err(ConfigError::ThresholdStep(self.threshold_step));
        }
        let violations = self.weights.violations();
        if !violations.is_empty() {
            return Err(ConfigError::Weights(violations));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StreamError {
    #[error("event at tick {found} precedes tick {previous}")]
    OutOfOrder { previous: Tick, found: Tick },
    #[error("antigen at tick {0} arrives after that tick's signal")]
    AntigenAfterSignal(Tick),
    #[error("antigen type must not be empty")]
    EmptyAntigenType,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Information a matured (or flushed) cell presents to analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedRecord {
    pub presented_at: Tick,
    pub dc_index: usize,
    pub sum_k: f64,
    pub antigen_counts: BTreeMap<AntigenType, u64>,
    pub forced: bool,
}

impl ProcessedRecord {
    pub fn antigen_total(&self) -> u64 {
        self.antigen_counts.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct DendriticCell {
    index: usize,
    migration_threshold: f64,
    lifespan: f64,
    sum_k: f64,
    // (interned type id, count); a cell rarely holds more than a handful of types
    profile: Vec<(u32, u64)>,
}

impl DendriticCell {
    fn new(index: usize, migration_threshold: f64) -> Self {
        DendriticCell {
            index,
            migration_threshold,
            lifespan: migration_threshold,
            sum_k: 0.0,
            profile: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.lifespan = self.migration_threshold;
        self.sum_k = 0.0;
        self.profile.clear();
    }

    fn add_antigen(&mut self, id: u32) {
        match self.profile.iter_mut().find(|(t, _)| *t == id) {
            Some((_, n)) => *n += 1,
            None => self.profile.push((id, 1)),
        }
    }

    /// 1-based position in the population.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn migration_threshold(&self) -> f64 {
        self.migration_threshold
    }

    pub fn lifespan(&self) -> f64 {
        self.lifespan
    }

    pub fn sum_k(&self) -> f64 {
        self.sum_k
    }

    pub fn antigens_held(&self) -> u64 {
        self.profile.iter().map(|(_, n)| n).sum()
    }
}

/// Residual state handed back at end of stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlushOutcome {
    pub records: Vec<ProcessedRecord>,
    /// Antigens still held by immature cells when flushing is disabled.
    pub dropped: u64,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: PopulationConfig,
    cells: Vec<DendriticCell>,
    types: Vec<AntigenType>,
    type_ids: HashMap<AntigenType, u32>,
    ag_counter: u64,
    current_tick: Option<Tick>,
    last_signal_tick: Option<Tick>,
}

impl Engine {
    /// Creates cells `1..=population_size` with thresholds `threshold_step * index`.
    pub fn new(config: PopulationConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let cells = (1..=config.population_size)
            .map(|i| DendriticCell::new(i, config.threshold_step * i as f64))
            .collect();
        Ok(Engine {
            config,
            cells,
            types: Vec::new(),
            type_ids: HashMap::new(),
            ag_counter: 0,
            current_tick: None,
            last_signal_tick: None,
        })
    }

    pub fn config(&self) -> &PopulationConfig {
        &self.config
    }

    pub fn cells(&self) -> &[DendriticCell] {
        &self.cells
    }

    pub fn ag_counter(&self) -> u64 {
        self.ag_counter
    }

    /// Latest timestamp seen on any ingested event.
    pub fn current_tick(&self) -> Option<Tick> {
        self.current_tick
    }

    /// Antigen profile of the cell with the given 1-based index.
    pub fn cell_profile(&self, index: usize) -> Option<BTreeMap<AntigenType, u64>> {
        let cell = self.cells.get(index.checked_sub(1)?)?;
        Some(self.profile_map(cell))
    }

    fn profile_map(&self, cell: &DendriticCell) -> BTreeMap<AntigenType, u64> {
        cell.profile
            .iter()
            .map(|&(id, n)| (self.types[id as usize].clone(), n))
            .collect()
    }

    fn intern(&mut self, t: &AntigenType) -> u32 {
        if let Some(&id) = self.type_ids.get(t) {
            return id;
        }
        let id = self.types.len() as u32;
        self.types.push(t.clone());
        self.type_ids.insert(t.clone(), id);
        id
    }

    fn bump_tick(&mut self, t: Tick) {
        self.current_tick = Some(self.current_tick.map_or(t, |c| c.max(t)));
    }

    /// Assigns one antigen. The counter is incremented before the modulo, so
    /// the first antigen lands on cell 1 and every `population_size`-th on the
    /// last cell.
    pub fn ingest_antigen(&mut self, ev: &AntigenEvent) -> Result<(), StreamError> {
        if ev.antigen_type.is_empty() {
            return Err(StreamError::EmptyAntigenType);
        }
        let id = self.intern(&ev.antigen_type);
        self.ag_counter += 1;
        let n = self.cells.len() as u64;
        let slot = match self.ag_counter % n {
            0 => n as usize,
            r => r as usize,
        };
        self.cells[slot - 1].add_antigen(id);
        self.bump_tick(ev.timestamp);
        Ok(())
    }

    /// Applies one signal tick to every cell, appending matured records to `out`
    /// in ascending cell order. Returns how many cells matured.
    pub fn ingest_signal_into(
        &mut self,
        s: &SignalInstance,
        out: &mut Vec<ProcessedRecord>,
    ) -> Result<usize, StreamError> {
        if let Some(prev) = self.last_signal_tick {
            if s.timestamp < prev {
                return Err(StreamError::OutOfOrder {
                    previous: prev,
                    found: s.timestamp,
                });
            }
        }
        s.validate()?;
        let sig = self.config.weights.apply(s.pamp, s.danger, s.safe);
        let mut matured = 0;
        for i in 0..self.cells.len() {
            let (mature, dc_index, sum_k) = {
                let cell = &mut self.cells[i];
                cell.lifespan -= sig.csm;
                cell.sum_k += sig.k;
                (cell.lifespan <= 0.0, cell.index, cell.sum_k)
            };
            if mature {
                out.push(ProcessedRecord {
                    presented_at: s.timestamp,
                    dc_index,
                    sum_k,
                    antigen_counts: self.profile_map(&self.cells[i]),
                    forced: false,
                });
                self.cells[i].reset();
                matured += 1;
            }
        }
        self.last_signal_tick = Some(s.timestamp);
        self.bump_tick(s.timestamp);
        Ok(matured)
    }

    pub fn ingest_signal(&mut self, s: &SignalInstance) -> Result<Vec<ProcessedRecord>, StreamError> {
        let mut out = Vec::new();
        self.ingest_signal_into(s, &mut out)?;
        Ok(out)
    }

    /// Dispatches one stream element, enforcing global timestamp order and
    /// antigens-before-signal within a tick.
    pub fn ingest(&mut self, ev: &Event, out: &mut Vec<ProcessedRecord>) -> Result<(), StreamError> {
        let t = ev.timestamp();
        if let Some(prev) = self.current_tick {
            if t < prev {
                return Err(StreamError::OutOfOrder {
                    previous: prev,
                    found: t,
                });
            }
        }
        match ev {
            Event::Antigen(a) => {
                if self.last_signal_tick == Some(t) {
                    return Err(StreamError::AntigenAfterSignal(t));
                }
                self.ingest_antigen(a)
            }
            Event::Signal(s) => self.ingest_signal_into(s, out).map(|_| ()),
        }
    }

    /// Ends the stream. With flushing on, every cell still holding antigens
    /// presents a forced record at the current tick; otherwise the held
    /// antigens are counted as dropped. All cells are reset either way.
    pub fn flush(&mut self) -> FlushOutcome {
        let mut outcome = FlushOutcome::default();
        let at = self.current_tick.unwrap_or(0);
        for i in 0..self.cells.len() {
            if self.cells[i].profile.is_empty() {
                self.cells[i].reset();
                continue;
            }
            if self.config.flush_at_end {
                let cell = &self.cells[i];
                outcome.records.push(ProcessedRecord {
                    presented_at: at,
                    dc_index: cell.index,
                    sum_k: cell.sum_k,
                    antigen_counts: self.profile_map(cell),
                    forced: true,
                });
            } else {
                outcome.dropped += self.cells[i].antigens_held();
            }
            self.cells[i].reset();
        }
        outcome
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("event {index}: {source}")]
pub struct RunError {
    /// 0-based position of the offending event in the input.
    pub index: usize,
    #[source]
    pub source: StreamError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub records: Vec<ProcessedRecord>,
    pub dropped: u64,
    pub antigens_ingested: u64,
    pub signals: u64,
    pub final_tick: Option<Tick>,
}

/// Feeds a whole time-ordered stream through a fresh engine and flushes it.
pub fn run_stream<I, E>(config: PopulationConfig, events: I) -> Result<RunOutput, RunStreamError>
where
    I: IntoIterator<Item = E>,
    E: std::borrow::Borrow<Event>,
{
    let mut engine = Engine::new(config)?;
    let mut out = RunOutput::default();
    for (index, ev) in events.into_iter().enumerate() {
        let ev = ev.borrow();
        engine
            .ingest(ev, &mut out.records)
            .map_err(|source| RunError { index, source })?;
        if matches!(ev, Event::Signal(_)) {
            out.signals += 1;
        }
    }
    out.antigens_ingested = engine.ag_counter();
    out.final_tick = engine.current_tick();
    let tail = engine.flush();
    out.records.extend(tail.records);
    out.dropped = tail.dropped;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunStreamError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stream(#[from] RunError),
}

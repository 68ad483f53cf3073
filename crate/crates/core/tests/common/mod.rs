#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use dcaseg::engine::ProcessedRecord;
use dcaseg::signal::{AntigenEvent, AntigenType, Event, SignalInstance, WeightMatrix};

/// Straight transliteration of the dDCA pseudocode, kept deliberately naive.
pub struct NaiveDc {
    threshold: f64,
    lifespan: f64,
    sum_k: f64,
    antigens: HashMap<String, u64>,
}

pub struct NaiveOutput {
    pub records: Vec<ProcessedRecord>,
    pub dropped: u64,
    pub ingested: u64,
}

fn record(dc: &NaiveDc, index: usize, at: u64, forced: bool) -> ProcessedRecord {
    let mut counts = BTreeMap::new();
    for (t, n) in &dc.antigens {
        counts.insert(AntigenType::new(t), *n);
    }
    ProcessedRecord {
        presented_at: at,
        dc_index: index,
        sum_k: dc.sum_k,
        antigen_counts: counts,
        forced,
    }
}

pub fn naive_dca(population_size: usize, step: f64, w: &WeightMatrix, events: &[Event], flush: bool) -> NaiveOutput {
    // set DC population size; initialize DCs
    let mut dcs: Vec<NaiveDc> = (1..=population_size)
        .map(|x| NaiveDc {
            threshold: step * x as f64,
            lifespan: step * x as f64,
            sum_k: 0.0,
            antigens: HashMap::new(),
        })
        .collect();
    let mut ag_counter: u64 = 0;
    let mut records = Vec::new();
    let mut last_tick = 0;
    // while data do: switch input
    for ev in events {
        last_tick = last_tick.max(ev.timestamp());
        match ev {
            Event::Antigen(a) => {
                ag_counter += 1;
                let cell_index = (ag_counter % population_size as u64) as usize;
                let cell_index = if cell_index == 0 { population_size } else { cell_index };
                *dcs[cell_index - 1]
                    .antigens
                    .entry(a.antigen_type.as_str().to_string())
                    .or_insert(0) += 1;
            }
            Event::Signal(s) => {
                let csm = w.csm_pamp * s.pamp + w.csm_danger * s.danger + w.csm_safe * s.safe;
                let k = w.k_pamp * s.pamp + w.k_danger * s.danger + w.k_safe * s.safe;
                for (i, dc) in dcs.iter_mut().enumerate() {
                    dc.lifespan -= csm;
                    dc.sum_k += k;
                    if dc.lifespan <= 0.0 {
                        records.push(record(dc, i + 1, s.timestamp, false));
                        dc.lifespan = dc.threshold;
                        dc.sum_k = 0.0;
                        dc.antigens.clear();
                    }
                }
            }
        }
    }
    let mut dropped = 0;
    for (i, dc) in dcs.iter().enumerate() {
        if dc.antigens.is_empty() {
            continue;
        }
        if flush {
            records.push(record(dc, i + 1, last_tick, true));
        } else {
            dropped += dc.antigens.values().sum::<u64>();
        }
    }
    NaiveOutput {
        records,
        dropped,
        ingested: ag_counter,
    }
}

/// Small LCG so stream generation is independent of the crate's generator.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn unit(&mut self) -> f64 {
        self.next() as f64 / (1u64 << 31) as f64
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

/// A legal random stream of exactly `len` events: per tick, 0..=5 antigens
/// from four types, then (usually) one signal.
pub fn random_stream(seed: u64, len: usize) -> Vec<Event> {
    let types = ["alpha", "beta", "gamma", "delta"];
    let mut rng = Lcg(seed);
    let mut out = Vec::with_capacity(len);
    let mut tick = 0;
    while out.len() < len {
        for _ in 0..rng.below(6) {
            if out.len() == len {
                return out;
            }
            let t = types[rng.below(types.len() as u64) as usize];
            out.push(Event::Antigen(AntigenEvent::new(tick, t)));
        }
        if out.len() == len {
            break;
        }
        if rng.below(10) < 9 {
            // mix quiet and loud ticks so maturation timing varies
            let scale = if rng.below(3) == 0 { 5.0 } else { 100.0 };
            out.push(Event::Signal(
                SignalInstance::new(tick, scale * rng.unit(), scale * rng.unit(), scale * rng.unit()).unwrap(),
            ));
        }
        tick += 1 + rng.below(2);
    }
    out
}

pub fn antigen_events(events: &[Event]) -> u64 {
    events.iter().filter(|e| matches!(e, Event::Antigen(_))).count() as u64
}

//! Input/output signal types and the weighted signal transformation.
//!
//! One [`SignalInstance`] carries the PAMP, danger and safe readings for a
//! single tick. [`transform_signals`] maps it through a [`WeightMatrix`] onto
//! the two output channels every cell consumes: CSM (drives maturation) and
//! k (the signed anomaly context).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound of a normalized signal reading.
pub const SIGNAL_MIN: f64 = 0.0;
/// Upper bound of a normalized signal reading.
pub const SIGNAL_MAX: f64 = 100.0;

/// Integer time unit; one tick carries one signal set.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalComponent {
    Pamp,
    Danger,
    Safe,
}

impl SignalComponent {
    pub fn name(self) -> &'static str {
        match self {
            SignalComponent::Pamp => "pamp",
            SignalComponent::Danger => "danger",
            SignalComponent::Safe => "safe",
        }
    }
}

impl fmt::Display for SignalComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("{component} signal value {value} is outside [0, 100]")]
    OutOfRange { component: SignalComponent, value: f64 },
}

/// One timestamped PAMP/danger/safe reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalInstance {
    pub timestamp: Tick,
    pub pamp: f64,
    pub danger: f64,
    pub safe: f64,
}

impl SignalInstance {
    /// Builds a reading, rejecting any component outside `[0, 100]`.
    pub fn new(timestamp: Tick, pamp: f64, danger: f64, safe: f64) -> Result<Self, SignalError> {
        let s = SignalInstance {
            timestamp,
            pamp,
            danger,
            safe,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        for (component, value) in [
            (SignalComponent::Pamp, self.pamp),
            (SignalComponent::Danger, self.danger),
            (SignalComponent::Safe, self.safe),
        ] {
            // NaN fails both comparisons and is rejected here too.
            if !(SIGNAL_MIN..=SIGNAL_MAX).contains(&value) {
                return Err(SignalError::OutOfRange { component, value });
            }
        }
        Ok(())
    }
}

/// Transformation weights from the three input categories onto CSM and k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub csm_pamp: f64,
    pub csm_danger: f64,
    pub csm_safe: f64,
    pub k_pamp: f64,
    pub k_danger: f64,
    pub k_safe: f64,
}

impl Default for WeightMatrix {
    fn default() -> Self {
        WeightMatrix {
            csm_pamp: 4.0,
            csm_danger: 2.0,
            csm_safe: 6.0,
            k_pamp: 8.0,
            k_danger: 4.0,
            k_safe: -13.0,
        }
    }
}

/// A broken ordering constraint on a [`WeightMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightViolation {
    NonFinite,
    SafeKNotNegative,
    PampNotAboveDanger,
    DangerKNotPositive,
    NegativeCsmWeight,
}

impl fmt::Display for WeightViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            WeightViolation::NonFinite => "all weights must be finite",
            WeightViolation::SafeKNotNegative => "safe k-weight must be negative",
            WeightViolation::PampNotAboveDanger => "PAMP must outweigh danger",
            WeightViolation::DangerKNotPositive => "danger k-weight must be positive",
            WeightViolation::NegativeCsmWeight => "CSM weights must be non-negative",
        };
        f.write_str(msg)
    }
}

impl WeightMatrix {
    /// Returns every violated constraint; an empty list means the matrix is usable.
    pub fn violations(&self) -> Vec<WeightViolation> {
        let all = [
            self.csm_pamp,
            self.csm_danger,
            self.csm_safe,
            self.k_pamp,
            self.k_danger,
            self.k_safe,
        ];
        if all.iter().any(|w| !w.is_finite()) {
            return vec![WeightViolation::NonFinite];
        }
        let mut out = Vec::new();
        if self.k_safe >= 0.0 {
            out.push(WeightViolation::SafeKNotNegative);
        }
        if self.k_pamp <= self.k_danger {
            out.push(WeightViolation::PampNotAboveDanger);
        }
        if self.k_danger <= 0.0 {
            out.push(WeightViolation::DangerKNotPositive);
        }
        // Negative CSM would let a cell's lifespan grow past its threshold.
        if self.csm_pamp < 0.0 || self.csm_danger < 0.0 || self.csm_safe < 0.0 {
            out.push(WeightViolation::NegativeCsmWeight);
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    #[inline]
    pub(crate) fn apply(&self, pamp: f64, danger: f64, safe: f64) -> OutputSignals {
        OutputSignals {
            csm: self.csm_pamp * pamp + self.csm_danger * danger + self.csm_safe * safe,
            k: self.k_pamp * pamp + self.k_danger * danger + self.k_safe * safe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputSignals {
    pub csm: f64,
    pub k: f64,
}

/// Weighted sum of the input categories for each output channel.
pub fn transform_signals(s: &SignalInstance, w: &WeightMatrix) -> Result<OutputSignals, SignalError> {
    s.validate()?;
    Ok(w.apply(s.pamp, s.danger, s.safe))
}

/// Categorical identifier of an object being classified (e.g. a process name).
///
/// Cheap to clone; the engine hands the same allocation to every record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AntigenType(Arc<str>);

impl AntigenType {
    pub fn new(name: &str) -> Self {
        AntigenType(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for AntigenType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AntigenType {
    fn from(s: &str) -> Self {
        AntigenType::new(s)
    }
}

impl std::borrow::Borrow<str> for AntigenType {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl Serialize for AntigenType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for AntigenType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(AntigenType::new(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AntigenEvent {
    pub timestamp: Tick,
    pub antigen_type: AntigenType,
}

impl AntigenEvent {
    pub fn new(timestamp: Tick, antigen_type: impl Into<AntigenType>) -> Self {
        AntigenEvent {
            timestamp,
            antigen_type: antigen_type.into(),
        }
    }
}

/// One element of the engine's input stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Antigen(AntigenEvent),
    Signal(SignalInstance),
}

impl Event {
    pub fn timestamp(&self) -> Tick {
        match self {
            Event::Antigen(a) => a.timestamp,
            Event::Signal(s) => s.timestamp,
        }
    }
}

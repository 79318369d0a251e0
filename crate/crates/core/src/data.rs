//! Records, datasets and the health state space `R ∪ {Flat}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token used for the absorbing death state in text formats.
pub const FLAT_TOKEN: &str = "FLAT";

/// A point of the state space: a real health measurement or the absorbing
/// death state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StateValue {
    Real(f64),
    Flat,
}

impl StateValue {
    pub fn real(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(StateValue::Real(value))
        } else {
            Err(Error::Domain(format!("health value must be finite, got {value}")))
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match *self {
            StateValue::Real(v) => Some(v),
            StateValue::Flat => None,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, StateValue::Flat)
    }
}

impl fmt::Display for StateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateValue::Real(v) => write!(f, "{v:.16e}"),
            StateValue::Flat => f.write_str(FLAT_TOKEN),
        }
    }
}

impl FromStr for StateValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case(FLAT_TOKEN) {
            return Ok(StateValue::Flat);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Data(format!("cannot parse state value {s:?}")))?;
        StateValue::real(v)
    }
}

/// How a record ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    /// Death observed at the given time.
    Death(f64),
    /// Alive at the given time, no further follow-up.
    Censored(f64),
    /// Death known only to lie in `(lower, upper]`; the record carries
    /// trailing `Flat` values.
    Interval { lower: f64, upper: f64 },
}

impl Terminal {
    /// The terminal time written to event files (upper bound for interval deaths).
    pub fn time(&self) -> f64 {
        match *self {
            Terminal::Death(t) | Terminal::Censored(t) => t,
            Terminal::Interval { upper, .. } => upper,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, Terminal::Censored(_))
    }
}

/// Treatment arm plus optional real covariates. Arm 0 is the null level shared
/// by every patient at recruitment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub arm: usize,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl Covariate {
    pub fn arm(arm: usize) -> Self {
        Covariate {
            arm,
            values: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub times: Vec<f64>,
    pub values: Vec<StateValue>,
    pub covariate: Covariate,
    pub terminal: Terminal,
    /// Next appointment time booked at each visit, when the sampling scheme
    /// records it. `scheduled_next[j]` was fixed at `times[j]`.
    #[serde(default)]
    pub scheduled_next: Option<Vec<f64>>,
}

/// A violated record invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    LengthMismatch { times: usize, values: usize },
    NegativeTime { index: usize },
    NonFiniteTime { index: usize },
    NonIncreasingTimes { index: usize },
    NonFiniteValue { index: usize },
    NonContiguousFlat { index: usize },
    ObservationAfterDeath { index: usize },
    FlatBeforeDeath { index: usize },
    FlatInCensoredRecord { index: usize },
    CensoredBeforeLastSample,
    InvalidTerminalTime,
    IntervalBounds,
    ScheduleLength { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { times, values } => {
                write!(f, "{times} times but {values} values")
            }
            Violation::NegativeTime { index } => write!(f, "negative time at index {index}"),
            Violation::NonFiniteTime { index } => write!(f, "non-finite time at index {index}"),
            Violation::NonIncreasingTimes { index } => {
                write!(f, "non-increasing times at index {index}")
            }
            Violation::NonFiniteValue { index } => write!(f, "non-finite value at index {index}"),
            Violation::NonContiguousFlat { index } => {
                write!(f, "real value after FLAT at index {index}")
            }
            Violation::ObservationAfterDeath { index } => {
                write!(f, "real value at or after death (index {index})")
            }
            Violation::FlatBeforeDeath { index } => {
                write!(f, "FLAT value before the recorded death (index {index})")
            }
            Violation::FlatInCensoredRecord { index } => {
                write!(f, "FLAT value in a censored record (index {index})")
            }
            Violation::CensoredBeforeLastSample => {
                f.write_str("censoring time precedes the last sampling time")
            }
            Violation::InvalidTerminalTime => f.write_str("terminal time is not finite and positive"),
            Violation::IntervalBounds => {
                f.write_str("death interval does not bracket the FLAT transition")
            }
            Violation::ScheduleLength { expected, found } => {
                write!(f, "expected {expected} schedule annotations, found {found}")
            }
        }
    }
}

impl PatientRecord {
    pub fn new(
        patient_id: impl Into<String>,
        times: Vec<f64>,
        values: Vec<StateValue>,
        covariate: Covariate,
        terminal: Terminal,
    ) -> Self {
        PatientRecord {
            patient_id: patient_id.into(),
            times,
            values,
            covariate,
            terminal,
            scheduled_next: None,
        }
    }

    /// A record whose measurements are all real.
    pub fn from_reals(
        patient_id: impl Into<String>,
        times: Vec<f64>,
        values: &[f64],
        arm: usize,
        terminal: Terminal,
    ) -> Self {
        let values = values.iter().map(|&v| StateValue::Real(v)).collect();
        PatientRecord::new(patient_id, times, values, Covariate::arm(arm), terminal)
    }

    pub fn arm(&self) -> usize {
        self.covariate.arm
    }

    /// Number of leading real-valued observations.
    pub fn real_len(&self) -> usize {
        self.values.iter().take_while(|v| !v.is_flat()).count()
    }

    /// Times and values of the real-valued prefix.
    pub fn real_prefix(&self) -> (&[f64], Vec<f64>) {
        let k = self.real_len().min(self.times.len());
        let ys = self.values[..k]
            .iter()
            .filter_map(StateValue::as_real)
            .collect();
        (&self.times[..k], ys)
    }

    pub fn has_flat(&self) -> bool {
        self.values.iter().any(StateValue::is_flat)
    }

    /// Checks every record invariant; an empty list means the record is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.times.len() != self.values.len() {
            out.push(Violation::LengthMismatch {
                times: self.times.len(),
                values: self.values.len(),
            });
        }
        for (i, &t) in self.times.iter().enumerate() {
            if !t.is_finite() {
                out.push(Violation::NonFiniteTime { index: i });
            } else if t < 0.0 {
                out.push(Violation::NegativeTime { index: i });
            }
        }
        for i in 1..self.times.len() {
            if !(self.times[i] > self.times[i - 1]) {
                out.push(Violation::NonIncreasingTimes { index: i });
            }
        }
        let mut seen_flat = false;
        for (i, v) in self.values.iter().enumerate() {
            match v {
                StateValue::Flat => seen_flat = true,
                StateValue::Real(x) => {
                    if !x.is_finite() {
                        out.push(Violation::NonFiniteValue { index: i });
                    }
                    if seen_flat {
                        out.push(Violation::NonContiguousFlat { index: i });
                    }
                }
            }
        }

        let paired = self.times.len().min(self.values.len());
        let pairs = || self.times[..paired].iter().zip(&self.values[..paired]).enumerate();
        let last_real = pairs()
            .filter(|(_, (_, v))| !v.is_flat())
            .map(|(_, (&t, _))| t)
            .fold(f64::NEG_INFINITY, f64::max);
        let first_flat = pairs()
            .find(|(_, (_, v))| v.is_flat())
            .map(|(_, (&t, _))| t);

        let tt = self.terminal.time();
        if !(tt.is_finite() && tt > 0.0) {
            out.push(Violation::InvalidTerminalTime);
        }
        match self.terminal {
            Terminal::Death(t) => {
                for (i, (&s, v)) in pairs() {
                    if !v.is_flat() && s >= t {
                        out.push(Violation::ObservationAfterDeath { index: i });
                    }
                    if v.is_flat() && s < t {
                        out.push(Violation::FlatBeforeDeath { index: i });
                    }
                }
            }
            Terminal::Censored(t) => {
                for (i, (_, v)) in pairs() {
                    if v.is_flat() {
                        out.push(Violation::FlatInCensoredRecord { index: i });
                    }
                }
                if let Some(&last) = self.times.last() {
                    if t < last {
                        out.push(Violation::CensoredBeforeLastSample);
                    }
                }
            }
            Terminal::Interval { lower, upper } => {
                let lower_ok = lower.is_finite() && lower >= 0.0 && lower < upper;
                let brackets = lower >= last_real && first_flat.map_or(true, |f| upper <= f);
                if !lower_ok || !brackets {
                    out.push(Violation::IntervalBounds);
                }
            }
        }

        if let Some(sched) = &self.scheduled_next {
            if sched.len() != self.times.len() {
                out.push(Violation::ScheduleLength {
                    expected: self.times.len(),
                    found: sched.len(),
                });
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

/// A collection of independent patient records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    records: Vec<PatientRecord>,
    censored: Vec<usize>,
}

impl Dataset {
    pub fn new(records: Vec<PatientRecord>) -> Self {
        let censored = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.terminal.is_censored())
            .map(|(i, _)| i)
            .collect();
        Dataset { records, censored }
    }

    /// Builds a dataset, rejecting any invalid record.
    pub fn validated(records: Vec<PatientRecord>) -> Result<Self> {
        for r in &records {
            let v = r.validate();
            if !v.is_empty() {
                let msg = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ");
                return Err(Error::Data(msg).in_record(&r.patient_id));
            }
        }
        Ok(Dataset::new(records))
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    /// Indices of right-censored records.
    pub fn censored_index(&self) -> &[usize] {
        &self.censored
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<PatientRecord> {
        self.records
    }

    /// Records whose death time is exactly observed.
    pub fn uncensored(&self) -> impl Iterator<Item = &PatientRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r.terminal, Terminal::Death(_)))
    }

    pub fn n_deaths(&self) -> usize {
        self.uncensored().count()
    }
}

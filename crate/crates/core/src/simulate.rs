//! Data generation under a fixed appointment schedule and under a sequential
//! policy that books each visit from the observed history.
//!
//! The survival time is drawn first; health values are then drawn from their
//! conditional Gaussian law given that time.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Covariate, Dataset, PatientRecord, StateValue, Terminal};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::revival::sample_conditional;
use crate::rng::patient_stream;

/// Appointments fixed at recruitment over the horizon `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedSchedule {
    pub horizon: f64,
    pub times: Vec<f64>,
}

impl FixedSchedule {
    /// `0, gap, 2 gap, ...` up to the horizon.
    pub fn regular(horizon: f64, gap: f64) -> Result<Self> {
        if !(gap > 0.0 && horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter("gap must be positive and the horizon finite".into()));
        }
        let n = (horizon / gap + 1e-9).floor() as usize;
        let times = (0..=n).map(|i| i as f64 * gap).collect();
        Ok(FixedSchedule { horizon, times })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter("horizon must be positive and finite".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("schedule times must be strictly increasing".into()));
        }
        if self.times.iter().any(|&t| !(t >= 0.0 && t <= self.horizon)) {
            return Err(Error::InvalidParameter("schedule times must lie in [0, horizon]".into()));
        }
        Ok(())
    }
}

/// Conditional law of the next appointment given the last visit time and the
/// value observed there. Implementations must not depend on model parameters
/// or on unobserved values.
pub trait SchedulingPolicy: Send + Sync {
    fn next_time(&self, last_time: f64, last_value: f64, rng: &mut dyn RngCore) -> f64;

    /// Log density of booking `next` after a visit at `last_time` with value `last_value`.
    fn ln_density(&self, next: f64, last_time: f64, last_value: f64) -> f64;
}

/// Built-in appointment policies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AppointmentPolicy {
    /// Every gap equals `gap`.
    ConstantGap { gap: f64 },
    /// Gap `min_gap + Exp(rate)`.
    ShiftedExponential { min_gap: f64, rate: f64 },
    /// Gap `min_gap + Exp(base_rate exp(-slope y))`: lower values bring the
    /// next visit forward when `slope > 0`.
    ValueDependent { min_gap: f64, base_rate: f64, slope: f64 },
}

impl AppointmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AppointmentPolicy::ConstantGap { gap } => gap > 0.0 && gap.is_finite(),
            AppointmentPolicy::ShiftedExponential { min_gap, rate } => min_gap >= 0.0 && rate > 0.0 && rate.is_finite(),
            AppointmentPolicy::ValueDependent { min_gap, base_rate, slope } => {
                min_gap >= 0.0 && base_rate > 0.0 && base_rate.is_finite() && slope.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid appointment policy {self:?}")))
        }
    }

    fn gap_law(&self, last_value: f64) -> (f64, Option<f64>) {
        match *self {
            AppointmentPolicy::ConstantGap { gap } => (gap, None),
            AppointmentPolicy::ShiftedExponential { min_gap, rate } => (min_gap, Some(rate)),
            AppointmentPolicy::ValueDependent { min_gap, base_rate, slope } => {
                (min_gap, Some(base_rate * (-slope * last_value).exp()))
            }
        }
    }
}

impl SchedulingPolicy for AppointmentPolicy {
    fn next_time(&self, last_time: f64, last_value: f64, rng: &mut dyn RngCore) -> f64 {
        let (shift, rate) = self.gap_law(last_value);
        match rate {
            None => last_time + shift,
            Some(r) => {
                let u: f64 = rng.random();
                last_time + shift - (1.0 - u).ln() / r
            }
        }
    }

    fn ln_density(&self, next: f64, last_time: f64, last_value: f64) -> f64 {
        let (shift, rate) = self.gap_law(last_value);
        let gap = next - last_time;
        match rate {
            // point mass: density relative to counting measure
            None => {
                if (gap - shift).abs() <= 1e-12 * shift.max(1.0) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Some(r) => {
                if gap < shift {
                    f64::NEG_INFINITY
                } else {
                    r.ln() - r * (gap - shift)
                }
            }
        }
    }
}

/// Sequential scheme: first visit at 0, each later visit booked by `policy`,
/// follow-up ending at `horizon` or death.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialScheme {
    pub horizon: f64,
    pub policy: AppointmentPolicy,
}

fn terminal_for(t: f64, horizon: f64) -> Terminal {
    if t <= horizon {
        Terminal::Death(t)
    } else {
        Terminal::Censored(horizon)
    }
}

/// One patient under a fixed schedule: values at the scheduled times before
/// death, censored at the horizon if still alive.
pub fn simulate_fixed<R: Rng + ?Sized>(
    patient_id: &str,
    schedule: &FixedSchedule,
    arm: usize,
    params: &ModelParams,
    rng: &mut R,
) -> Result<PatientRecord> {
    schedule.validate()?;
    params.validate()?;
    params.psi.mean.arm_offset(arm, 1.0)?;
    let t = params.lambda.sample(rng);
    let ts: Vec<f64> = schedule.times.iter().copied().filter(|&s| s < t).collect();
    let y = if ts.is_empty() {
        Vec::new()
    } else {
        sample_conditional(&ts, t, arm, &params.psi.mean, &params.psi.covariance, rng)?
    };
    Ok(PatientRecord::from_reals(patient_id, ts, &y, arm, terminal_for(t, schedule.horizon)))
}

/// Incremental Cholesky factor of the covariance on a growing grid.
struct GrowingFactor {
    rows: Vec<Vec<f64>>,
    z: Vec<f64>,
}

/// One patient under a sequential policy. The record carries the booking made
/// at each visit in `scheduled_next`; the last booking is the appointment
/// that death or the end of follow-up prevented.
pub fn simulate_sequential<R: Rng + ?Sized>(
    patient_id: &str,
    scheme: &SequentialScheme,
    policy: &dyn SchedulingPolicy,
    arm: usize,
    params: &ModelParams,
    rng: &mut R,
) -> Result<PatientRecord> {
    if !(scheme.horizon > 0.0 && scheme.horizon.is_finite()) {
        return Err(Error::InvalidParameter("horizon must be positive and finite".into()));
    }
    params.validate()?;
    params.psi.mean.arm_offset(arm, 1.0)?;
    let t = params.lambda.sample(rng);
    let mean = &params.psi.mean;
    let cov = &params.psi.covariance;
    let mut times: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    let mut booked = Vec::new();
    let mut gf = GrowingFactor { rows: Vec::new(), z: Vec::new() };
    let mut current = 0.0;
    let mut mu = [0.0];
    while current < t && current <= scheme.horizon {
        // extend the factor by one row
        let k = times.len();
        let mut row = vec![0.0; k + 1];
        for j in 0..k {
            let mut s = cov.cov(times[j], current);
            for m in 0..j {
                s -= row[m] * gf.rows[j][m];
            }
            row[j] = s / gf.rows[j][j];
        }
        let d = cov.cov(current, current) - row[..k].iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "conditional variance {d:e} at appointment {current}"
            )));
        }
        row[k] = d.sqrt();
        let z: f64 = rng.sample(StandardNormal);
        mean.mean_into(&[current], t, arm, &mut mu);
        let y = mu[0] + row[..k].iter().zip(&gf.z).map(|(a, b)| a * b).sum::<f64>() + row[k] * z;
        gf.rows.push(row);
        gf.z.push(z);
        times.push(current);
        values.push(StateValue::Real(y));
        let next = policy.next_time(current, y, &mut RngAdapter(rng));
        if !(next > current) || !next.is_finite() {
            return Err(Error::Policy(format!(
                "proposed appointment {next} does not follow the visit at {current}"
            )));
        }
        booked.push(next);
        current = next;
    }
    let mut rec = PatientRecord::new(
        patient_id,
        times,
        values,
        Covariate::arm(arm),
        terminal_for(t, scheme.horizon),
    );
    rec.scheduled_next = Some(booked);
    Ok(rec)
}

struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
}

/// Patient identifiers `p00000, p00001, ...`; arms assigned in rotation.
pub fn patient_id(i: usize) -> String {
    format!("p{i:05}")
}

fn assign_arm(i: usize, params: &ModelParams) -> usize {
    i % params.psi.mean.n_arms()
}

/// `n` patients under a fixed schedule, one random stream per patient.
pub fn simulate_fixed_dataset(n: usize, schedule: &FixedSchedule, params: &ModelParams, seed: u64) -> Result<Dataset> {
    let recs: Result<Vec<PatientRecord>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = patient_id(i);
            let mut rng = patient_stream(seed, &id);
            simulate_fixed(&id, schedule, assign_arm(i, params), params, &mut rng)
        })
        .collect();
    Ok(Dataset::new(recs?))
}

/// `n` patients under a sequential scheme, one random stream per patient.
pub fn simulate_sequential_dataset(
    n: usize,
    scheme: &SequentialScheme,
    params: &ModelParams,
    seed: u64,
) -> Result<Dataset> {
    scheme.policy.validate()?;
    let recs: Result<Vec<PatientRecord>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = patient_id(i);
            let mut rng = patient_stream(seed, &id);
            simulate_sequential(&id, scheme, &scheme.policy, assign_arm(i, params), params, &mut rng)
        })
        .collect();
    Ok(Dataset::new(recs?))
}

/// Log density of the appointment times of one record under `policy`: every
/// realised visit after the first, plus the final booking.
pub fn policy_log_density(record: &PatientRecord, policy: &dyn SchedulingPolicy) -> Result<f64> {
    let Some(booked) = &record.scheduled_next else {
        return Err(Error::Data(format!("record {} has no booking annotations", record.patient_id)));
    };
    if booked.len() != record.times.len() {
        return Err(Error::Data(format!("record {} has mismatched booking annotations", record.patient_id)));
    }
    let mut total = 0.0;
    for (j, (&s, v)) in record.times.iter().zip(&record.values).enumerate() {
        let y = v
            .as_real()
            .ok_or_else(|| Error::Data("booking after a FLAT observation".into()))?;
        let next = record.times.get(j + 1).copied().unwrap_or(booked[j]);
        total += policy.ln_density(next, s, y);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breach {
    pub index: usize,
    pub scheduled: f64,
    pub actual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScheduleCheck {
    /// The record carries no booking annotations.
    NotApplicable,
    Checked(Vec<Breach>),
}

/// Lists every visit whose time differs from the booking made at the previous
/// visit by more than `tol`.
pub fn detect_off_schedule(record: &PatientRecord, tol: f64) -> ScheduleCheck {
    let Some(booked) = &record.scheduled_next else {
        return ScheduleCheck::NotApplicable;
    };
    let breaches = record
        .times
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(j, &actual)| {
            let scheduled = *booked.get(j - 1)?;
            ((actual - scheduled).abs() > tol).then_some(Breach { index: j, scheduled, actual })
        })
        .collect();
    ScheduleCheck::Checked(breaches)
}

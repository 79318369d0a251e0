//! CSV and JSON formats.
//!
//! Long-format measurements: `patient_id,time,value` with `value` a real
//! number or `FLAT`. Events: `patient_id,terminal_time,status,arm` with
//! status 1 for death, 0 for censoring and 2 for a death known only to lie
//! between the last real-valued and the first `FLAT` observation (the event
//! time is then the upper end of that interval). Appointment bookings, when
//! present: `patient_id,time,scheduled_next`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::{Covariate, Dataset, PatientRecord, StateValue, Terminal};
use crate::error::{Error, Result};

/// Fixed 17-significant-digit rendering used by every numeric CSV column.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Deserialize)]
struct DataRow {
    patient_id: String,
    time: f64,
    value: String,
}

#[derive(Debug, Deserialize)]
struct EventRow {
    patient_id: String,
    terminal_time: f64,
    status: u8,
    arm: usize,
}

#[derive(Debug, Deserialize)]
struct ScheduleRow {
    patient_id: String,
    time: f64,
    scheduled_next: f64,
}

type Measurements = HashMap<String, Vec<(f64, StateValue)>>;

fn read_measurements<R: Read>(reader: R) -> Result<Measurements> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: Measurements = HashMap::new();
    for row in rdr.deserialize() {
        let row: DataRow = row?;
        let value: StateValue = row.value.parse()?;
        out.entry(row.patient_id).or_default().push((row.time, value));
    }
    Ok(out)
}

fn read_schedules<R: Read>(reader: R) -> Result<HashMap<String, Vec<(f64, f64)>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for row in rdr.deserialize() {
        let row: ScheduleRow = row?;
        out.entry(row.patient_id).or_default().push((row.time, row.scheduled_next));
    }
    Ok(out)
}

/// Measurement histories by patient, without event information. Times and
/// values keep their file order within each patient.
pub fn read_histories<R: Read>(data: R) -> Result<BTreeMap<String, (Vec<f64>, Vec<StateValue>)>> {
    Ok(read_measurements(data)?
        .into_iter()
        .map(|(id, obs)| (id, obs.into_iter().unzip()))
        .collect())
}

/// Joins measurement and event tables into a dataset, in event-file order.
pub fn read_dataset<R1: Read, R2: Read>(data: R1, events: R2) -> Result<Dataset> {
    read_dataset_with_schedule(data, events, None::<&[u8]>)
}

pub fn read_dataset_with_schedule<R1: Read, R2: Read, R3: Read>(
    data: R1,
    events: R2,
    schedule: Option<R3>,
) -> Result<Dataset> {
    let mut measurements = read_measurements(data)?;
    let mut schedules = match schedule {
        Some(r) => read_schedules(r)?,
        None => HashMap::new(),
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(events);
    let mut records = Vec::new();
    for row in rdr.deserialize() {
        let ev: EventRow = row?;
        let obs = measurements.remove(&ev.patient_id).unwrap_or_default();
        let times: Vec<f64> = obs.iter().map(|o| o.0).collect();
        let values: Vec<StateValue> = obs.iter().map(|o| o.1).collect();
        let terminal = match ev.status {
            0 => Terminal::Censored(ev.terminal_time),
            1 => Terminal::Death(ev.terminal_time),
            2 => {
                let lower = times
                    .iter()
                    .zip(&values)
                    .filter(|(_, v)| !v.is_flat())
                    .map(|(&t, _)| t)
                    .fold(0.0, f64::max);
                Terminal::Interval {
                    lower,
                    upper: ev.terminal_time,
                }
            }
            s => {
                return Err(Error::Data(format!(
                    "unknown status {s} for patient {}",
                    ev.patient_id
                )))
            }
        };
        let scheduled_next = schedules.remove(&ev.patient_id).map(|rows| {
            rows.into_iter().map(|(_, next)| next).collect::<Vec<_>>()
        });
        records.push(PatientRecord {
            patient_id: ev.patient_id,
            times,
            values,
            covariate: Covariate::arm(ev.arm),
            terminal,
            scheduled_next,
        });
    }
    if let Some(id) = measurements.keys().next() {
        return Err(Error::Data(format!("measurements for unknown patient {id}")));
    }
    if let Some(id) = schedules.keys().next() {
        return Err(Error::Data(format!("appointment bookings for unknown patient {id}")));
    }
    Dataset::validated(records)
}

pub fn read_dataset_files(
    data: &Path,
    events: &Path,
    schedule: Option<&Path>,
) -> Result<Dataset> {
    let d = std::fs::File::open(data)?;
    let e = std::fs::File::open(events)?;
    let s = schedule.map(std::fs::File::open).transpose()?;
    read_dataset_with_schedule(d, e, s)
}

pub fn write_measurements<W: Write>(records: &[PatientRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "time", "value"])?;
    for r in records {
        for (t, v) in r.times.iter().zip(&r.values) {
            w.write_record([r.patient_id.as_str(), &fmt_f64(*t), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(records: &[PatientRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "terminal_time", "status", "arm"])?;
    for r in records {
        let status = match r.terminal {
            Terminal::Censored(_) => "0",
            Terminal::Death(_) => "1",
            Terminal::Interval { .. } => "2",
        };
        w.write_record([
            r.patient_id.as_str(),
            &fmt_f64(r.terminal.time()),
            status,
            &r.arm().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes booked next-appointment times; records without bookings are skipped.
pub fn write_schedule<W: Write>(records: &[PatientRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "time", "scheduled_next"])?;
    for r in records {
        if let Some(sched) = &r.scheduled_next {
            for (t, next) in r.times.iter().zip(sched) {
                w.write_record([r.patient_id.as_str(), &fmt_f64(*t), &fmt_f64(*next)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(records: &[PatientRecord]) -> Dataset {
        let mut data = Vec::new();
        let mut events = Vec::new();
        let mut sched = Vec::new();
        write_measurements(records, &mut data).unwrap();
        write_events(records, &mut events).unwrap();
        write_schedule(records, &mut sched).unwrap();
        read_dataset_with_schedule(&data[..], &events[..], Some(&sched[..])).unwrap()
    }

    #[test]
    fn interval_and_flat_roundtrip() {
        let r = PatientRecord::new(
            "p1",
            vec![0.0, 1.0, 2.0],
            vec![StateValue::Real(0.5), StateValue::Real(-1.25), StateValue::Flat],
            Covariate::arm(1),
            Terminal::Interval { lower: 1.0, upper: 2.0 },
        );
        let c = PatientRecord::from_reals("p2", vec![0.0], &[3.0], 0, Terminal::Censored(4.0));
        let ds = roundtrip(&[r.clone(), c.clone()]);
        assert_eq!(ds.records(), &[r, c]);
        assert_eq!(ds.censored_index(), &[1]);
    }

    #[test]
    fn unknown_patient_in_measurements_is_an_error() {
        let data = "patient_id,time,value\nx,0,1.0\n";
        let events = "patient_id,terminal_time,status,arm\ny,1,1,0\n";
        assert!(read_dataset(data.as_bytes(), events.as_bytes()).is_err());
    }

    #[test]
    fn invalid_record_is_rejected() {
        let data = "patient_id,time,value\nx,2,1.0\nx,1,1.0\n";
        let events = "patient_id,terminal_time,status,arm\nx,3,1,0\n";
        let err = read_dataset(data.as_bytes(), events.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-increasing"), "{err}");
    }
}

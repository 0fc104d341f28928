//! CSV import/export for profiles, measurement traces, component
//! breakdowns, and estimator traces.
//!
//! Parsing is header-keyed, so column order does not matter. Time columns
//! are checked for uniform sampling.

use std::io::{Read, Write};
use std::path::Path;

use crate::cell::{SimRecord, SimTrace};
use crate::error::{CoreError, Result};
use crate::pipeline::{RawStream, Step1Result, Step2Result, Step3Result};
use crate::profile::CurrentProfile;
use crate::signal::ComponentBreakdown;

/// Tolerance (seconds) for uniform-sampling checks on ingested time columns.
pub const SAMPLING_TOLERANCE_S: f64 = 1e-6;

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CoreError::CsvSchema(format!("missing column '{name}'")))
}

fn parse_field(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<f64> {
    let raw = record
        .get(idx)
        .ok_or_else(|| CoreError::CsvSchema(format!("row {row}: missing field '{name}'")))?;
    raw.trim()
        .parse::<f64>()
        .map_err(|_| CoreError::CsvSchema(format!("row {row}: '{raw}' is not a number ({name})")))
}

/// Verify the time column is uniformly sampled and return the period.
fn check_uniform(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(CoreError::CsvSchema(
            "need at least two rows to establish the sample period".into(),
        ));
    }
    let t_s = t[1] - t[0];
    if t_s <= 0.0 {
        return Err(CoreError::CsvSchema(format!(
            "non-increasing time column: {} then {}",
            t[0], t[1]
        )));
    }
    for (k, w) in t.windows(2).enumerate() {
        let dt = w[1] - w[0];
        if (dt - t_s).abs() > SAMPLING_TOLERANCE_S {
            return Err(CoreError::NonUniformSampling {
                row: k + 2,
                expected: t_s,
                actual: dt,
            });
        }
    }
    Ok(t_s)
}

// ---------------------------------------------------------------------------
// Current profiles: t_s, i_A
// ---------------------------------------------------------------------------

pub fn write_profile<W: Write>(w: W, profile: &CurrentProfile) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t_s", "i_A"])?;
    for (k, &i) in profile.samples.iter().enumerate() {
        wtr.write_record(&[format!("{}", k as f64 * profile.t_s), format!("{i}")])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_profile<R: Read>(r: R) -> Result<CurrentProfile> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let it = header_index(&headers, "t_s")?;
    let ii = header_index(&headers, "i_A")?;
    let mut t = Vec::new();
    let mut i = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        t.push(parse_field(&rec, it, "t_s", row + 2)?);
        i.push(parse_field(&rec, ii, "i_A", row + 2)?);
    }
    let t_s = check_uniform(&t)?;
    CurrentProfile::new(t_s, i, "ingested")
}

pub fn write_profile_path(path: &Path, profile: &CurrentProfile) -> Result<()> {
    write_profile(std::fs::File::create(path)?, profile)
}

pub fn read_profile_path(path: &Path) -> Result<CurrentProfile> {
    read_profile(std::fs::File::open(path)?)
}

// ---------------------------------------------------------------------------
// Measurement traces: t_s, i_A, v_V [, z_true, vc_true]
// ---------------------------------------------------------------------------

pub fn write_trace<W: Write>(w: W, trace: &SimTrace, with_truth: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if with_truth {
        wtr.write_record(["t_s", "i_A", "v_V", "z_true", "vc_true"])?;
    } else {
        wtr.write_record(["t_s", "i_A", "v_V"])?;
    }
    for r in &trace.records {
        if with_truth {
            wtr.write_record(&[
                format!("{}", r.t),
                format!("{}", r.i),
                format!("{}", r.v),
                format!("{}", r.z_true),
                format!("{}", r.v_c_true),
            ])?;
        } else {
            wtr.write_record(&[format!("{}", r.t), format!("{}", r.i), format!("{}", r.v)])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Measurement trace read back from disk. Truth columns are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTrace {
    pub t_s: f64,
    pub t: Vec<f64>,
    pub i: Vec<f64>,
    pub v: Vec<f64>,
    pub z_true: Option<Vec<f64>>,
    pub v_c_true: Option<Vec<f64>>,
}

impl MeasurementTrace {
    pub fn raw_stream(&self) -> RawStream {
        RawStream {
            t_s: self.t_s,
            i_b: self.i.clone(),
            v_b: self.v.clone(),
        }
    }

    pub fn records(&self) -> Vec<SimRecord> {
        (0..self.t.len())
            .map(|k| SimRecord {
                t: self.t[k],
                i: self.i[k],
                v: self.v[k],
                z_true: self.z_true.as_ref().map_or(f64::NAN, |z| z[k]),
                v_c_true: self.v_c_true.as_ref().map_or(f64::NAN, |v| v[k]),
            })
            .collect()
    }
}

pub fn read_trace<R: Read>(r: R) -> Result<MeasurementTrace> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let it = header_index(&headers, "t_s")?;
    let ii = header_index(&headers, "i_A")?;
    let iv = header_index(&headers, "v_V")?;
    let iz = headers.iter().position(|h| h.trim() == "z_true");
    let ic = headers.iter().position(|h| h.trim() == "vc_true");

    let mut t = Vec::new();
    let mut i = Vec::new();
    let mut v = Vec::new();
    let mut z = Vec::new();
    let mut vc = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_n = row + 2;
        t.push(parse_field(&rec, it, "t_s", row_n)?);
        i.push(parse_field(&rec, ii, "i_A", row_n)?);
        v.push(parse_field(&rec, iv, "v_V", row_n)?);
        if let Some(idx) = iz {
            z.push(parse_field(&rec, idx, "z_true", row_n)?);
        }
        if let Some(idx) = ic {
            vc.push(parse_field(&rec, idx, "vc_true", row_n)?);
        }
    }
    let t_s = check_uniform(&t)?;
    Ok(MeasurementTrace {
        t_s,
        t,
        i,
        v,
        z_true: iz.map(|_| z),
        v_c_true: ic.map(|_| vc),
    })
}

pub fn write_trace_path(path: &Path, trace: &SimTrace, with_truth: bool) -> Result<()> {
    write_trace(std::fs::File::create(path)?, trace, with_truth)
}

pub fn read_trace_path(path: &Path) -> Result<MeasurementTrace> {
    read_trace(std::fs::File::open(path)?)
}

// ---------------------------------------------------------------------------
// Component breakdown: t_s, init_V, socvar_V, ohmic_V, rc_V
// ---------------------------------------------------------------------------

pub fn write_breakdown<W: Write>(w: W, b: &ComponentBreakdown) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t_s", "init_V", "socvar_V", "ohmic_V", "rc_V"])?;
    for k in 0..b.init_v.len() {
        wtr.write_record(&[
            format!("{}", k as f64 * b.t_s),
            format!("{}", b.init_v[k]),
            format!("{}", b.socvar_v[k]),
            format!("{}", b.ohmic_v[k]),
            format!("{}", b.rc_v[k]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_breakdown_path(path: &Path, b: &ComponentBreakdown) -> Result<()> {
    write_breakdown(std::fs::File::create(path)?, b)
}

// ---------------------------------------------------------------------------
// Estimator traces
// ---------------------------------------------------------------------------

pub fn write_step1_trace<W: Write>(w: W, res: &Step1Result, t0: f64) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t_s", "r_s_ohm", "cov_r_s", "innovation_V"])?;
    for k in 0..res.r_s.len() {
        wtr.write_record(&[
            format!("{}", t0 + k as f64 * res.t_s),
            format!("{}", res.r_s[k]),
            format!("{}", res.cov[k]),
            format!("{}", res.innovation[k]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_step2_trace<W: Write>(w: W, res: &Step2Result, t0: f64) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "t_s",
        "r_t_ohm",
        "tau_s",
        "socvar_gain_V_per_As",
        "cov_r_t",
        "cov_tau",
        "innovation_V",
    ])?;
    for k in 0..res.r_t.len() {
        wtr.write_record(&[
            format!("{}", t0 + k as f64 * res.t_s),
            format!("{}", res.r_t[k]),
            format!("{}", res.tau[k]),
            format!("{}", res.socvar_gain[k]),
            format!("{}", res.cov_r_t[k]),
            format!("{}", res.cov_tau[k]),
            format!("{}", res.innovation[k]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_step3_trace<W: Write>(w: W, res: &Step3Result, t0: f64) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "t_s",
        "soc",
        "vc_V",
        "q_b_Ah",
        "cov_soc",
        "cov_vc",
        "cov_q_b",
        "v_pred_V",
        "innovation_V",
    ])?;
    for k in 0..res.soc.len() {
        wtr.write_record(&[
            format!("{}", t0 + k as f64 * res.t_s),
            format!("{}", res.soc[k]),
            format!("{}", res.v_c[k]),
            format!("{}", res.q_b[k]),
            format!("{}", res.cov_soc[k]),
            format!("{}", res.cov_vc[k]),
            format!("{}", res.cov_qb[k]),
            format!("{}", res.v_pred[k]),
            format!("{}", res.innovation[k]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

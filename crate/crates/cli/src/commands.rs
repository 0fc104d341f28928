//! The four CLI verbs. Every output file is written atomically
//! (temp-then-rename) so interrupted runs never leave half files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use battkit_core::cell::{simulate, BatteryState, CellSpec, SimTrace};
use battkit_core::io;
use battkit_core::metrics::median;
use battkit_core::pipeline::{
    concurrent_multisine, filter_trace, run_concurrent_baseline, run_sequential,
    step1_estimate_rs, step2_estimate_rc, step3_estimate_soc_soh, RawStream, SequentialResult,
};
use battkit_core::profile::{drive_cycle_profile, CurrentProfile};
use battkit_core::signal::{component_breakdown, BreakdownConfig};
use battkit_core::EcmParams;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::report::{sequential_report, MetricsReport, BAND_RC};

/// Write `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_csv<F>(path: &Path, producer: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> battkit_core::Result<()>,
{
    let mut buf = Vec::new();
    producer(&mut buf)?;
    write_atomic(path, &buf)
}

fn unix_now_s() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_summary<T: Serialize>(out: &Path, payload: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Wrapper<'a, T> {
        generated_unix_s: u64,
        #[serde(flatten)]
        payload: &'a T,
    }
    let text = serde_json::to_string_pretty(&Wrapper {
        generated_unix_s: unix_now_s(),
        payload,
    })?;
    write_atomic(&out.join("summary.json"), text.as_bytes())
}

fn drive_profile(cfg: &ScenarioConfig, spec: &CellSpec, seed: u64) -> Result<CurrentProfile> {
    if cfg.drive.source == "synthetic" {
        Ok(drive_cycle_profile(
            cfg.drive.t_s,
            cfg.drive.duration_s,
            spec.c_rate_amps(cfg.drive.peak_c_rate),
            seed,
        )?)
    } else {
        io::read_profile_path(Path::new(&cfg.drive.source))
            .with_context(|| format!("drive profile {}", cfg.drive.source))
    }
}

fn init_state(cfg: &ScenarioConfig) -> BatteryState {
    BatteryState::new(cfg.init.true_v_c, cfg.init.true_soc)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Simulate the three experiment segments and write per-step CSVs plus the
/// composed full-run CSV.
pub fn cmd_simulate(cfg: &ScenarioConfig, seed: u64, out: &Path) -> Result<()> {
    let spec = cfg.cell.resolve()?;
    let plan = cfg.sequential_plan(&spec);
    plan.validate()?;

    let p1 = plan.step1.profile()?;
    let t1 = simulate(&spec, &p1, init_state(cfg), seed ^ 0xA1)?;
    let gap1 = CurrentProfile::zeros(plan.step2.t_s, plan.gap_s)?;
    let g1 = simulate(&spec, &gap1, t1.final_state, seed ^ 0xA2)?;
    let p2 = plan.step2.profile()?;
    let t2 = simulate(&spec, &p2, g1.final_state, seed ^ 0xA3)?;
    let drive = drive_profile(cfg, &spec, seed ^ 0xA4)?;
    let gap2 = CurrentProfile::zeros(drive.t_s, plan.gap_s)?;
    let g2 = simulate(&spec, &gap2, t2.final_state, seed ^ 0xA5)?;
    let t3 = simulate(&spec, &drive, g2.final_state, seed ^ 0xA6)?;

    write_csv(&out.join("step1.csv"), |b| io::write_trace(b, &t1, true))?;
    write_csv(&out.join("step2.csv"), |b| io::write_trace(b, &t2, true))?;
    write_csv(&out.join("step3.csv"), |b| io::write_trace(b, &t3, true))?;

    // Composed run: the segments back to back on one time axis.
    let mut full = Vec::new();
    let mut offset = 0.0;
    for seg in [&t1, &g1, &t2, &g2, &t3] {
        for r in &seg.records {
            full.push((offset + r.t, r.i, r.v, r.z_true, r.v_c_true));
        }
        offset += seg.records.len() as f64 * seg.t_s;
    }
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["t_s", "i_A", "v_V", "z_true", "vc_true"])
            .map_err(anyhow::Error::from)?;
        for (t, i, v, z, vc) in &full {
            w.write_record(&[
                format!("{t}"),
                format!("{i}"),
                format!("{v}"),
                format!("{z}"),
                format!("{vc}"),
            ])?;
        }
        w.flush()?;
    }
    write_atomic(&out.join("full_run.csv"), &buf)?;

    #[derive(Serialize)]
    struct SimSummary {
        cell: String,
        seed: u64,
        segments: Vec<(String, usize)>,
    }
    write_summary(
        out,
        &SimSummary {
            cell: spec.name.clone(),
            seed,
            segments: vec![
                ("step1".into(), t1.records.len()),
                ("gap1".into(), g1.records.len()),
                ("step2".into(), t2.records.len()),
                ("gap2".into(), g2.records.len()),
                ("step3".into(), t3.records.len()),
            ],
        },
    )
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

/// Optional measurement CSVs; any segment not supplied is simulated.
#[derive(Debug, Clone, Default)]
pub struct DataSources {
    pub step1: Option<PathBuf>,
    pub step2: Option<PathBuf>,
    pub step3: Option<PathBuf>,
}

impl DataSources {
    pub fn any(&self) -> bool {
        self.step1.is_some() || self.step2.is_some() || self.step3.is_some()
    }
}

/// Run the sequential pipeline and emit trace CSVs, a metrics report, and
/// a JSON summary.
pub fn cmd_estimate(
    cfg: &ScenarioConfig,
    data: &DataSources,
    seed: u64,
    out: &Path,
) -> Result<MetricsReport> {
    let spec = cfg.cell.resolve()?;
    let plan = cfg.sequential_plan(&spec);
    let tuning = cfg.tuning(&spec);
    let guesses = cfg.init.guesses;

    let (result, truth) = if data.any() {
        let res = estimate_from_csv(cfg, data, seed)?;
        (res, None)
    } else {
        let drive = drive_profile(cfg, &spec, seed ^ 0xD1)?;
        let res = run_sequential(&spec, &plan, &drive, init_state(cfg), &guesses, &tuning, seed)?;
        (res, Some((spec.ecm.r_s, spec.ecm.r_t, spec.ecm.tau, spec.q_b)))
    };

    write_csv(&out.join("step1_trace.csv"), |b| {
        io::write_step1_trace(b, &result.step1, 0.0)
    })?;
    write_csv(&out.join("step2_trace.csv"), |b| {
        io::write_step2_trace(b, &result.step2, 0.0)
    })?;
    write_csv(&out.join("step3_trace.csv"), |b| {
        io::write_step3_trace(b, &result.step3, 0.0)
    })?;

    let report = sequential_report(&result, truth);
    write_summary(out, &report)?;
    Ok(report)
}

fn estimate_from_csv(
    cfg: &ScenarioConfig,
    data: &DataSources,
    seed: u64,
) -> Result<SequentialResult> {
    let spec = cfg.cell.resolve()?;
    let plan = cfg.sequential_plan(&spec);
    let tuning = cfg.tuning(&spec);
    let guesses = cfg.init.guesses;

    let load_trace = |path: &Option<PathBuf>, fallback: &dyn Fn() -> Result<SimTrace>| -> Result<SimTrace> {
        match path {
            Some(p) => {
                let m = io::read_trace_path(p).with_context(|| format!("{}", p.display()))?;
                Ok(SimTrace {
                    t_s: m.t_s,
                    records: m.records(),
                    first_saturation: None,
                    final_state: BatteryState::new(0.0, 0.5),
                })
            }
            None => fallback(),
        }
    };

    let t1 = load_trace(&data.step1, &|| {
        Ok(simulate(
            &spec,
            &plan.step1.profile()?,
            init_state(cfg),
            seed ^ 0xE1,
        )?)
    })?;
    let s1 = filter_trace(&t1, plan.step1.f_3db_hz, plan.step1.hold_up_s)?;
    let step1 = step1_estimate_rs(&s1, guesses.r_s, &tuning)?;

    let t2 = load_trace(&data.step2, &|| {
        Ok(simulate(
            &spec,
            &plan.step2.profile()?,
            init_state(cfg),
            seed ^ 0xE2,
        )?)
    })?;
    let s2 = filter_trace(&t2, plan.step2.f_3db_hz, plan.step2.hold_up_s)?;
    let slope = spec
        .ocv
        .slope_guarded(guesses.soc, tuning.ocv_guard)
        .unwrap_or(0.0);
    let g_init = slope * spec.eta / (3600.0 * guesses.q_b);
    let step2 = step2_estimate_rc(
        &s2,
        step1.final_r_s,
        (guesses.r_t, guesses.tau),
        g_init,
        &tuning,
    )?;

    let t3 = load_trace(&data.step3, &|| {
        let drive = drive_profile(cfg, &spec, seed ^ 0xD1)?;
        Ok(simulate(&spec, &drive, init_state(cfg), seed ^ 0xE3)?)
    })?;
    let raw = RawStream::from_records(t3.t_s, &t3.records);
    let params = EcmParams {
        r_s: step1.final_r_s,
        r_t: step2.final_r_t,
        tau: step2.final_tau,
    };
    let step3 = step3_estimate_soc_soh(&raw, params, spec.ocv, spec.eta, &guesses, &tuning)?;

    Ok(SequentialResult {
        r_s_hat: step1.final_r_s,
        r_t_hat: step2.final_r_t,
        tau_hat: step2.final_tau,
        q_b_hat: step3.final_q_b,
        step1,
        step2,
        step3,
        step3_truth: t3.records,
    })
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Component breakdown per configured frequency; one CSV each.
pub fn cmd_analyze(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let spec = cfg.cell.resolve()?;
    let a = &cfg.analyze;
    if a.frequencies_hz.is_empty() {
        return Ok(());
    }
    let lin = spec.ocv.linearize(0.1, 0.9)?;

    #[derive(Serialize)]
    struct FreqSummary {
        f_hz: f64,
        init_v: f64,
        socvar_v: f64,
        ohmic_v: f64,
        rc_v: f64,
        file: String,
    }
    let mut summaries = Vec::new();
    for &f in &a.frequencies_hz {
        // Enough resolution per period, and enough duration to settle the
        // filter transient before the amplitude window.
        let t_s = (1.0 / (100.0 * f)).min(a.t_c_s / 10.0);
        let duration = 5.0 * a.t_c_s + 8.0 / f;
        let bcfg = BreakdownConfig {
            f_hz: f,
            amplitude_a: spec.c_rate_amps(a.amplitude_c_rate),
            t_c_s: a.t_c_s,
            duration_s: duration,
            t_s,
            z0: a.soc,
        };
        let b = component_breakdown(&spec, lin, &bcfg)?;
        let file = format!("breakdown_{f}Hz.csv");
        write_csv(&out.join(&file), |buf| io::write_breakdown(buf, &b))?;
        summaries.push(FreqSummary {
            f_hz: f,
            init_v: b.amplitudes.init_v,
            socvar_v: b.amplitudes.socvar_v,
            ohmic_v: b.amplitudes.ohmic_v,
            rc_v: b.amplitudes.rc_v,
            file,
        });
    }

    #[derive(Serialize)]
    struct AnalyzeSummary {
        cell: String,
        frequencies: Vec<FreqSummary>,
    }
    write_summary(
        out,
        &AnalyzeSummary {
            cell: spec.name.clone(),
            frequencies: summaries,
        },
    )
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SeedComparison {
    pub seed: u64,
    /// Static SoC error: mean |error| over the last fifth of the drive
    /// segment, once transients are gone.
    pub seq_soc_static_error: f64,
    pub seq_rt_rel_error: f64,
    pub seq_tau_rel_error: f64,
    pub seq_rt_tau_converged: bool,
    pub conc_soc_static_error: Option<f64>,
    pub conc_rt_rel_error: Option<f64>,
    pub conc_tau_rel_error: Option<f64>,
    pub conc_rt_tau_converged: bool,
    pub conc_diverged: bool,
}

/// Mean |error| over the trailing fraction of a trace.
fn tail_mean_abs(errors: &[f64], frac: f64) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    let k0 = ((1.0 - frac) * errors.len() as f64) as usize;
    let tail = &errors[k0.min(errors.len() - 1)..];
    tail.iter().map(|e| e.abs()).sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub seeds: usize,
    pub seq_median_static_soc_error: f64,
    pub conc_median_static_soc_error: f64,
    pub seq_rt_tau_failures: usize,
    pub conc_rt_tau_failures: usize,
    pub sequential_wins: bool,
}

/// Matched sequential-vs-concurrent comparison over a batch of seeds.
pub fn cmd_compare(cfg: &ScenarioConfig, seed0: u64, out: &Path) -> Result<CompareSummary> {
    let spec = cfg.cell.resolve()?;
    let plan = cfg.sequential_plan(&spec);
    let tuning = cfg.tuning(&spec);
    let guesses = cfg.init.guesses;
    let n = cfg.compare.seeds.max(1);

    let rows: Vec<SeedComparison> = (0..n as u64)
        .into_par_iter()
        .map(|k| -> Result<SeedComparison> {
            let seed = seed0.wrapping_add(k);
            let drive = drive_profile(cfg, &spec, seed ^ 0xC0)?;
            let seq = run_sequential(
                &spec,
                &plan,
                &drive,
                init_state(cfg),
                &guesses,
                &tuning,
                seed,
            )?;
            let seq_soc_error = tail_mean_abs(&seq.soc_error(), 0.2);
            let seq_rt = (seq.r_t_hat - spec.ecm.r_t) / spec.ecm.r_t;
            let seq_tau = (seq.tau_hat - spec.ecm.tau) / spec.ecm.tau;

            // Matched concurrent arm: a multi-sine excitation phase in
            // place of the two injection steps, then the same drive cycle.
            let excitation_s =
                plan.step1.duration_s + plan.step2.duration_s + 2.0 * plan.gap_s;
            let multisine = concurrent_multisine(
                spec.c_rate_amps(cfg.compare.multisine_c_rate),
                cfg.drive.t_s,
                excitation_s,
            )?;
            let mut samples = multisine.samples.clone();
            samples.extend_from_slice(&drive.samples);
            let profile = CurrentProfile::new(cfg.drive.t_s, samples, "concurrent")?;
            let conc = run_concurrent_baseline(
                &spec,
                &profile,
                init_state(cfg),
                &guesses,
                &tuning,
                seed,
                cfg.compare.macro_ratio,
            );
            let (conc_soc, conc_rt, conc_tau, diverged) = match &conc {
                Ok(c) => {
                    let errors = c.soc_error();
                    let drive_errors = &errors[multisine.samples.len().min(errors.len())..];
                    (
                        Some(tail_mean_abs(drive_errors, 0.2)),
                        Some((c.final_r_t - spec.ecm.r_t) / spec.ecm.r_t),
                        Some((c.final_tau - spec.ecm.tau) / spec.ecm.tau),
                        false,
                    )
                }
                Err(_) => (None, None, None, true),
            };
            let conc_converged = !diverged
                && conc_rt.is_some_and(|e| e.abs() <= BAND_RC)
                && conc_tau.is_some_and(|e| e.abs() <= BAND_RC);
            Ok(SeedComparison {
                seed,
                seq_soc_static_error: seq_soc_error,
                seq_rt_rel_error: seq_rt,
                seq_tau_rel_error: seq_tau,
                seq_rt_tau_converged: seq_rt.abs() <= BAND_RC && seq_tau.abs() <= BAND_RC,
                conc_soc_static_error: conc_soc,
                conc_rt_rel_error: conc_rt,
                conc_tau_rel_error: conc_tau,
                conc_rt_tau_converged: conc_converged,
                conc_diverged: diverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Per-seed CSV
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "seed",
            "seq_soc_static_error",
            "seq_rt_rel_error",
            "seq_tau_rel_error",
            "seq_rt_tau_converged",
            "conc_soc_static_error",
            "conc_rt_rel_error",
            "conc_tau_rel_error",
            "conc_rt_tau_converged",
            "conc_diverged",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for r in &rows {
            w.write_record(&[
                format!("{}", r.seed),
                format!("{}", r.seq_soc_static_error),
                format!("{}", r.seq_rt_rel_error),
                format!("{}", r.seq_tau_rel_error),
                format!("{}", r.seq_rt_tau_converged),
                opt(r.conc_soc_static_error),
                opt(r.conc_rt_rel_error),
                opt(r.conc_tau_rel_error),
                format!("{}", r.conc_rt_tau_converged),
                format!("{}", r.conc_diverged),
            ])?;
        }
        w.flush()?;
    }
    write_atomic(&out.join("compare_seeds.csv"), &buf)?;

    let seq_abs: Vec<f64> = rows.iter().map(|r| r.seq_soc_static_error.abs()).collect();
    let conc_abs: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.conc_soc_static_error.map(f64::abs))
        .collect();
    let summary = CompareSummary {
        seeds: n,
        seq_median_static_soc_error: median(&seq_abs),
        conc_median_static_soc_error: median(&conc_abs),
        seq_rt_tau_failures: rows.iter().filter(|r| !r.seq_rt_tau_converged).count(),
        conc_rt_tau_failures: rows.iter().filter(|r| !r.conc_rt_tau_converged).count(),
        sequential_wins: median(&seq_abs) < median(&conc_abs),
    };
    write_summary(out, &summary)?;
    Ok(summary)
}

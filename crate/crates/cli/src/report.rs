//! Metrics report assembled after an estimation run.

use battkit_core::metrics::{convergence_time, mean_var, rmse};
use battkit_core::pipeline::{ConcurrentResult, SequentialResult};
use serde::{Deserialize, Serialize};

/// Error in a band for this long counts as converged.
pub const CONVERGENCE_HOLD_S: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityMetric {
    pub name: String,
    pub estimate: f64,
    pub truth: Option<f64>,
    pub abs_error: Option<f64>,
    pub rel_error: Option<f64>,
    /// Seconds from the start of the quantity's own trace; `None` means
    /// "not converged" within the run.
    pub convergence_time_s: Option<f64>,
    pub converged: bool,
}

impl QuantityMetric {
    fn against_truth(
        name: &str,
        trace: &[f64],
        t_s: f64,
        truth: f64,
        band_rel: f64,
    ) -> QuantityMetric {
        let estimate = *trace.last().unwrap_or(&f64::NAN);
        let errors: Vec<f64> = trace.iter().map(|v| v - truth).collect();
        let conv = convergence_time(&errors, t_s, band_rel * truth.abs(), CONVERGENCE_HOLD_S);
        QuantityMetric {
            name: name.into(),
            estimate,
            truth: Some(truth),
            abs_error: Some(estimate - truth),
            rel_error: Some((estimate - truth) / truth),
            convergence_time_s: conv,
            converged: conv.is_some(),
        }
    }

    fn blind(name: &str, trace: &[f64]) -> QuantityMetric {
        QuantityMetric {
            name: name.into(),
            estimate: *trace.last().unwrap_or(&f64::NAN),
            truth: None,
            abs_error: None,
            rel_error: None,
            convergence_time_s: None,
            converged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub quantities: Vec<QuantityMetric>,
    pub voltage_rmse_v: f64,
    pub innovation_mean_v: f64,
    pub innovation_std_v: f64,
    /// Largest |SoC error| after the SoC convergence point, when truth is
    /// known.
    pub soc_error_post_convergence: Option<f64>,
    pub run_duration_s: f64,
}

/// Relative bands used for convergence flags: 5% for R_s, 15% for the RC
/// pair, 2% for capacity. SoC uses a 1% absolute band.
pub const BAND_R_S: f64 = 0.05;
pub const BAND_RC: f64 = 0.15;
pub const BAND_QB: f64 = 0.02;
pub const BAND_SOC_ABS: f64 = 0.01;

pub fn sequential_report(
    res: &SequentialResult,
    truth: Option<(f64, f64, f64, f64)>,
) -> MetricsReport {
    let mut quantities = Vec::new();
    match truth {
        Some((r_s, r_t, tau, q_b)) => {
            quantities.push(QuantityMetric::against_truth(
                "r_s_ohm",
                &res.step1.r_s,
                res.step1.t_s,
                r_s,
                BAND_R_S,
            ));
            quantities.push(QuantityMetric::against_truth(
                "r_t_ohm",
                &res.step2.r_t,
                res.step2.t_s,
                r_t,
                BAND_RC,
            ));
            quantities.push(QuantityMetric::against_truth(
                "tau_s",
                &res.step2.tau,
                res.step2.t_s,
                tau,
                BAND_RC,
            ));
            quantities.push(QuantityMetric::against_truth(
                "q_b_ah",
                &res.step3.q_b,
                res.step3.t_s,
                q_b,
                BAND_QB,
            ));
        }
        None => {
            quantities.push(QuantityMetric::blind("r_s_ohm", &res.step1.r_s));
            quantities.push(QuantityMetric::blind("r_t_ohm", &res.step2.r_t));
            quantities.push(QuantityMetric::blind("tau_s", &res.step2.tau));
            quantities.push(QuantityMetric::blind("q_b_ah", &res.step3.q_b));
        }
    }

    let have_truth = res
        .step3_truth
        .first()
        .map(|r| r.z_true.is_finite())
        .unwrap_or(false);
    let mut soc_post = None;
    if have_truth {
        let errors = res.soc_error();
        let conv = convergence_time(&errors, res.step3.t_s, BAND_SOC_ABS, CONVERGENCE_HOLD_S);
        let estimate = res.step3.final_soc;
        let truth_final = res.step3_truth.last().map(|r| r.z_true).unwrap_or(f64::NAN);
        quantities.push(QuantityMetric {
            name: "soc".into(),
            estimate,
            truth: Some(truth_final),
            abs_error: Some(estimate - truth_final),
            rel_error: None,
            convergence_time_s: conv,
            converged: conv.is_some(),
        });
        if let Some(t0) = conv {
            let k0 = (t0 / res.step3.t_s).round() as usize;
            soc_post = errors[k0..]
                .iter()
                .map(|e| e.abs())
                .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
        }
    } else {
        quantities.push(QuantityMetric::blind("soc", &res.step3.soc));
    }

    let residuals: Vec<f64> = res
        .step3
        .v_pred
        .iter()
        .zip(&res.step3.v_meas)
        .map(|(p, m)| p - m)
        .collect();
    let (imean, ivar) = mean_var(&res.step3.innovation);
    MetricsReport {
        quantities,
        voltage_rmse_v: rmse(&residuals),
        innovation_mean_v: imean,
        innovation_std_v: ivar.sqrt(),
        soc_error_post_convergence: soc_post,
        run_duration_s: res.step3.soc.len() as f64 * res.step3.t_s,
    }
}

pub fn concurrent_report(res: &ConcurrentResult, truth: (f64, f64, f64, f64)) -> MetricsReport {
    let (r_s, r_t, tau, q_b) = truth;
    let mut quantities = vec![
        QuantityMetric::against_truth("r_s_ohm", &res.r_s, res.t_s, r_s, BAND_R_S),
        QuantityMetric::against_truth("r_t_ohm", &res.r_t, res.t_s, r_t, BAND_RC),
        QuantityMetric::against_truth("tau_s", &res.tau, res.t_s, tau, BAND_RC),
        QuantityMetric::against_truth("q_b_ah", &res.q_b, res.t_s, q_b, BAND_QB),
    ];
    let errors = res.soc_error();
    let conv = convergence_time(&errors, res.t_s, BAND_SOC_ABS, CONVERGENCE_HOLD_S);
    let truth_final = res.truth.last().map(|r| r.z_true).unwrap_or(f64::NAN);
    quantities.push(QuantityMetric {
        name: "soc".into(),
        estimate: res.final_soc,
        truth: Some(truth_final),
        abs_error: Some(res.final_soc - truth_final),
        rel_error: None,
        convergence_time_s: conv,
        converged: conv.is_some(),
    });
    let residuals: Vec<f64> = res
        .v_pred
        .iter()
        .zip(res.truth.iter().map(|r| r.v))
        .map(|(p, m)| p - m)
        .collect();
    let (imean, ivar) = mean_var(&res.innovation);
    MetricsReport {
        quantities,
        voltage_rmse_v: rmse(&residuals),
        innovation_mean_v: imean,
        innovation_std_v: ivar.sqrt(),
        soc_error_post_convergence: None,
        run_duration_s: res.soc.len() as f64 * res.t_s,
    }
}

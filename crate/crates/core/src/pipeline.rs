//! The three-step sequential estimation pipeline and the concurrent
//! all-at-once baseline.
//!
//! Step 1 identifies the ohmic resistance from high-frequency filtered data,
//! Step 2 identifies the RC pair from medium-frequency filtered data using
//! the Step-1 result, and Step 3 runs a dual filter for SoC and capacity on
//! raw drive-cycle data using the Step-1/2 parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::collections::VecDeque;

use crate::cell::{BatteryState, CellSpec, EcmParams, OcvCurve, SimRecord, SimTrace};
use crate::error::{CoreError, Result};
use crate::estimator::{
    dekf_step, ekf_predict, ekf_update, GaussianEstimate, ModelCallbacks, NoiseConfig,
};
use crate::profile::{sine_profile, sum_profiles, CurrentProfile};
use crate::signal::design_highpass;

const HOURS: f64 = 3600.0;

/// Minimum excitation (amps) below which a filtered stream carries no
/// parameter information.
pub const EXCITATION_THRESHOLD: f64 = 1e-4;

/// Injection and filtering plan for one parameter-identification step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub frequencies_hz: Vec<f64>,
    pub amplitudes_a: Vec<f64>,
    /// Sample period, seconds.
    pub t_s: f64,
    /// Total injection duration including the hold-up window, seconds.
    pub duration_s: f64,
    /// High-pass 3 dB bandwidth, hertz.
    pub f_3db_hz: f64,
    /// Leading window discarded before estimation, seconds.
    pub hold_up_s: f64,
}

impl StepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies_hz.len() != self.amplitudes_a.len() {
            return Err(CoreError::InvalidParameter(
                "frequency and amplitude lists must have the same length".into(),
            ));
        }
        if self.hold_up_s >= self.duration_s {
            return Err(CoreError::InvalidParameter(format!(
                "hold-up {} s must be shorter than duration {} s",
                self.hold_up_s, self.duration_s
            )));
        }
        let nyquist = 0.5 / self.t_s;
        for &f in &self.frequencies_hz {
            if f >= nyquist {
                return Err(CoreError::NyquistViolation {
                    f_hz: f,
                    nyquist_hz: nyquist,
                });
            }
        }
        Ok(())
    }

    /// Build the injection profile for this plan.
    pub fn profile(&self) -> Result<CurrentProfile> {
        let parts: Result<Vec<_>> = self
            .frequencies_hz
            .iter()
            .zip(&self.amplitudes_a)
            .map(|(&f, &m)| sine_profile(m, f, self.t_s, self.duration_s))
            .collect();
        sum_profiles(&parts?)
    }

    /// High-frequency plan: 0.5 Hz at 0.5C through a 0.05 Hz high-pass,
    /// sampled at 0.1 s.
    pub fn step1_default(spec: &CellSpec) -> Self {
        StepPlan {
            frequencies_hz: vec![0.5],
            amplitudes_a: vec![spec.c_rate_amps(0.5)],
            t_s: 0.1,
            duration_s: 200.0,
            f_3db_hz: 0.05,
            hold_up_s: 20.0,
        }
    }

    /// Medium-frequency plan: 0.02 Hz over a 0.004 Hz base, both at 0.5C,
    /// through a 0.002 Hz high-pass with a 400 s hold-up.
    pub fn step2_default(spec: &CellSpec) -> Self {
        StepPlan {
            frequencies_hz: vec![0.02, 0.004],
            amplitudes_a: vec![spec.c_rate_amps(0.5), spec.c_rate_amps(0.5)],
            t_s: 1.0,
            duration_s: 1300.0,
            f_3db_hz: 0.002,
            hold_up_s: 400.0,
        }
    }
}

/// High-pass filtered current/voltage pair, hold-up already discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredStream {
    pub t_s: f64,
    pub i_bf: Vec<f64>,
    pub v_bf: Vec<f64>,
    /// High-pass-filtered raw coulomb count (ampere-seconds), aligned with
    /// the other columns. This is the exact regressor for the SoC swing
    /// that leaks through the filter.
    pub w_as: Vec<f64>,
}

impl FilteredStream {
    pub fn max_abs_current(&self) -> f64 {
        self.i_bf.iter().fold(0.0_f64, |m, &i| m.max(i.abs()))
    }
}

/// Filter a simulated trace with a fresh high-pass pair and drop the
/// hold-up window.
pub fn filter_trace(trace: &SimTrace, f_3db: f64, hold_up_s: f64) -> Result<FilteredStream> {
    let mut fi = design_highpass(f_3db, trace.t_s)?;
    let mut fv = design_highpass(f_3db, trace.t_s)?;
    let mut fq = design_highpass(f_3db, trace.t_s)?;
    let skip = (hold_up_s / trace.t_s).round() as usize;
    let mut i_bf = Vec::new();
    let mut v_bf = Vec::new();
    let mut w_as = Vec::new();
    // Coulomb count matching the measurement convention: the voltage at
    // sample k reflects charge moved before k.
    let mut q = 0.0;
    for (k, r) in trace.records.iter().enumerate() {
        let i = fi.apply(r.i);
        let v = fv.apply(r.v);
        let w = fq.apply(q);
        q += trace.t_s * r.i;
        if k >= skip {
            i_bf.push(i);
            v_bf.push(v);
            w_as.push(w);
        }
    }
    Ok(FilteredStream {
        t_s: trace.t_s,
        i_bf,
        v_bf,
        w_as,
    })
}

/// Covariance and solver knobs. Defaults are tuned on simulation; every
/// value can be overridden from the scenario config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    /// Measurement-noise standard deviation assumed by the filters, volts.
    /// Floored so the innovation covariance stays positive definite on
    /// noiseless data.
    pub sigma_v_assumed: f64,
    /// Relative per-step random-walk std for Step 1/2 parameters.
    pub sigma_r_rel: f64,
    /// Per-step random-walk std for the capacity, ampere-hours.
    pub sigma_r_qb: f64,
    /// State process-noise std for [v_c, z].
    pub sigma_w_vc: f64,
    pub sigma_w_z: f64,
    /// Initial parameter uncertainty (std): ohms, ohms, seconds, Ah.
    pub init_std_r_s: f64,
    pub init_std_r_t: f64,
    pub init_std_tau: f64,
    pub init_std_qb: f64,
    /// Initial state uncertainty (std): volts, SoC.
    pub init_std_vc: f64,
    pub init_std_soc: f64,
    /// Truncation depth of the parameter-sensitivity recursions (1 keeps
    /// only the current step).
    pub sensitivity_depth: usize,
    /// Projection bounds for the RC time constant, seconds.
    pub tau_bounds: (f64, f64),
    /// Divergence detector: abort when |innovation| exceeds this many
    /// innovation sigmas for `divergence_steps` consecutive samples.
    pub divergence_sigma: f64,
    pub divergence_steps: usize,
    /// OCV evaluation guard.
    pub ocv_guard: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning {
            sigma_v_assumed: 0.020,
            sigma_r_rel: 1e-4,
            sigma_r_qb: 1e-5,
            sigma_w_vc: 1e-4,
            sigma_w_z: 1e-6,
            init_std_r_s: 0.1,
            init_std_r_t: 0.02,
            init_std_tau: 5.0,
            init_std_qb: 0.5,
            init_std_vc: 0.1,
            init_std_soc: 0.4,
            sensitivity_depth: 30,
            tau_bounds: (0.1, 1000.0),
            divergence_sigma: 10.0,
            divergence_steps: 50,
            ocv_guard: 1e-4,
        }
    }
}

impl Tuning {
    pub fn for_cell(spec: &CellSpec) -> Self {
        Tuning {
            sigma_v_assumed: spec.sigma_v.max(1e-6),
            ..Tuning::default()
        }
    }

    fn sigma_v_sq(&self) -> f64 {
        self.sigma_v_assumed.max(1e-6).powi(2)
    }
}

/// Initial guesses for all estimated quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialGuesses {
    pub r_s: f64,
    pub r_t: f64,
    pub tau: f64,
    pub q_b: f64,
    pub soc: f64,
    pub v_c: f64,
}

impl Default for InitialGuesses {
    fn default() -> Self {
        InitialGuesses {
            r_s: 0.02,
            r_t: 0.03,
            tau: 15.0,
            q_b: 2.0,
            soc: 0.5,
            v_c: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Step 1: ohmic resistance
// ---------------------------------------------------------------------------

/// Scalar output model V_bf = -R_s * i_bf.
struct OhmicModel;

impl ModelCallbacks for OhmicModel {
    fn state_dim(&self) -> usize {
        0
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn transition(&self, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn output(&self, _: &DVector<f64>, theta: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, -theta[0] * u[0])
    }
    fn state_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }
    fn output_state_jacobian(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(1, 0)
    }
    fn output_param_jacobian(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -u[0])
    }
}

/// Trace of a scalar parameter estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Step1Result {
    pub t_s: f64,
    pub r_s: Vec<f64>,
    pub cov: Vec<f64>,
    pub innovation: Vec<f64>,
    pub final_r_s: f64,
    /// Set when the filtered current never exceeded the excitation
    /// threshold; the trace then just holds the initial guess.
    pub degenerate: bool,
}

/// Estimate the ohmic resistance from a filtered high-frequency stream.
pub fn step1_estimate_rs(
    data: &FilteredStream,
    init_r_s: f64,
    tuning: &Tuning,
) -> Result<Step1Result> {
    let noise = NoiseConfig::scalar(
        (tuning.sigma_r_rel * init_r_s).powi(2),
        0.0,
        tuning.sigma_v_sq(),
    );
    let mut est = GaussianEstimate::scalar(init_r_s, tuning.init_std_r_s.powi(2));
    let model = OhmicModel;
    let x = DVector::zeros(0);
    let mut r_s = Vec::with_capacity(data.i_bf.len());
    let mut cov = Vec::with_capacity(data.i_bf.len());
    let mut innovations = Vec::with_capacity(data.i_bf.len());
    for (&i, &v) in data.i_bf.iter().zip(&data.v_bf) {
        est = ekf_predict(&est, &noise)?;
        let y = DVector::from_element(1, v);
        let u = DVector::from_element(1, i);
        let (mut post, innov) = ekf_update(&est, &y, &model, &noise, &x, &u)?;
        post.mean[0] = post.mean[0].max(1e-6); // positivity projection
        est = post;
        r_s.push(est.mean[0]);
        cov.push(est.cov[(0, 0)]);
        innovations.push(innov[0]);
    }
    Ok(Step1Result {
        t_s: data.t_s,
        final_r_s: *r_s.last().unwrap_or(&init_r_s),
        r_s,
        cov,
        innovation: innovations,
        degenerate: data.max_abs_current() < EXCITATION_THRESHOLD,
    })
}

// ---------------------------------------------------------------------------
// Step 2: RC pair
// ---------------------------------------------------------------------------

/// Per-sample output model for the RC-pair step. The auxiliary RC current
/// `i2` and its truncated tau-sensitivity are computed by the driver loop
/// and baked in here.
///
/// Besides [R_t, tau] the parameter vector carries a nuisance gain on the
/// filtered coulomb count `w`: the SoC swing the injection itself causes
/// leaks through the high-pass (the OCV slope is steep around mid-SoC),
/// and at 0.004 Hz that leakage is comparable to the RC voltage. The gain
/// absorbs slope/capacity without needing either.
struct RcModel {
    r_s_hat: f64,
    i_bf: f64,
    i2: f64,
    di2_dtau: f64,
    /// Filtered coulomb count (ampere-seconds) up to the previous sample.
    w: f64,
}

impl ModelCallbacks for RcModel {
    fn state_dim(&self) -> usize {
        0
    }
    fn param_dim(&self) -> usize {
        3
    }
    fn transition(&self, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn output(&self, _: &DVector<f64>, theta: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(
            1,
            -self.r_s_hat * self.i_bf - theta[0] * self.i2 - theta[2] * self.w,
        )
    }
    fn state_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }
    fn output_state_jacobian(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(1, 0)
    }
    fn output_param_jacobian(
        &self,
        _: &DVector<f64>,
        theta: &DVector<f64>,
        _: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 3, &[-self.i2, -theta[0] * self.di2_dtau, -self.w])
    }
}

/// Zero-order-hold recursion coefficients (decay, input gain) for the
/// auxiliary RC current: i2[k] = d*i2[k-1] + (1-d)*i[k-1]. This matches
/// the sampled response of a continuous RC branch under piecewise-constant
/// current, measured before the step.
pub fn i2_coefficients(t_s: f64, tau: f64) -> (f64, f64) {
    let d = (-t_s / tau).exp();
    (d, 1.0 - d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step2Result {
    pub t_s: f64,
    pub r_t: Vec<f64>,
    pub tau: Vec<f64>,
    /// SoC-variation nuisance gain, volts per ampere-second.
    pub socvar_gain: Vec<f64>,
    pub cov_r_t: Vec<f64>,
    pub cov_tau: Vec<f64>,
    pub innovation: Vec<f64>,
    pub final_r_t: f64,
    pub final_tau: f64,
    pub final_socvar_gain: f64,
    pub degenerate: bool,
    /// Samples where the tau projection bound was active.
    pub projection_events: usize,
    /// The Step-1 estimate this run consumed.
    pub r_s_used: f64,
}

/// Estimate the RC pair from a filtered medium-frequency stream, given the
/// Step-1 ohmic estimate. The auxiliary current recursion re-linearizes
/// around the latest tau estimate every sample. `socvar_gain_init` seeds
/// the nuisance gain on the filtered coulomb count (volts per
/// ampere-second); pass 0.0 if the data has no SoC-variation component.
pub fn step2_estimate_rc(
    data: &FilteredStream,
    r_s_hat: f64,
    init: (f64, f64),
    socvar_gain_init: f64,
    tuning: &Tuning,
) -> Result<Step2Result> {
    let (init_r_t, init_tau) = init;
    let g_scale = socvar_gain_init.abs().max(1e-4);
    let noise = NoiseConfig {
        sigma_r: DMatrix::from_diagonal(&DVector::from_vec(vec![
            (tuning.sigma_r_rel * init_r_t).powi(2),
            (tuning.sigma_r_rel * init_tau).powi(2),
            (tuning.sigma_r_rel * g_scale).powi(2),
        ])),
        sigma_w: DMatrix::zeros(0, 0),
        sigma_v: DMatrix::from_element(1, 1, tuning.sigma_v_sq()),
    };
    let mut est = GaussianEstimate::new(
        DVector::from_vec(vec![init_r_t, init_tau, socvar_gain_init]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            tuning.init_std_r_t.powi(2),
            tuning.init_std_tau.powi(2),
            (5.0 * g_scale).powi(2),
        ])),
    );
    let t_s = data.t_s;
    let x = DVector::zeros(0);
    let u = DVector::zeros(0);
    let mut i_bf_prev = 0.0;
    let mut i2_prev = 0.0;
    // Ring of one-step sensitivity contributions for the truncated
    // recursion depth.
    let mut sens_terms: VecDeque<f64> = VecDeque::new();
    let depth = tuning.sensitivity_depth.max(1);

    let n = data.i_bf.len();
    let mut out = Step2Result {
        t_s,
        r_t: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        socvar_gain: Vec::with_capacity(n),
        cov_r_t: Vec::with_capacity(n),
        cov_tau: Vec::with_capacity(n),
        innovation: Vec::with_capacity(n),
        final_r_t: init_r_t,
        final_tau: init_tau,
        final_socvar_gain: socvar_gain_init,
        degenerate: data.max_abs_current() < EXCITATION_THRESHOLD,
        projection_events: 0,
        r_s_used: r_s_hat,
    };
    let w_col = if data.w_as.len() == data.i_bf.len() {
        data.w_as.clone()
    } else {
        vec![0.0; data.i_bf.len()]
    };

    for ((&i_bf, &v_bf), &w) in data.i_bf.iter().zip(&data.v_bf).zip(&w_col) {
        est = ekf_predict(&est, &noise)?;
        let tau = est.mean[1];
        let (decay, gain) = i2_coefficients(t_s, tau);
        let i2 = decay * i2_prev + gain * i_bf_prev;
        // d(i2)/d(tau), truncated: current one-step term plus decayed
        // history up to `depth` steps back. d(decay)/d(tau) =
        // decay * t_s / tau^2.
        let ddecay = decay * t_s / (tau * tau);
        let one_step = ddecay * (i2_prev - i_bf_prev);
        sens_terms.push_front(one_step);
        sens_terms.truncate(depth);
        let mut di2 = 0.0;
        let mut pole = 1.0;
        for &term in &sens_terms {
            di2 += pole * term;
            pole *= decay;
        }

        let model = RcModel {
            r_s_hat,
            i_bf,
            i2,
            di2_dtau: di2,
            w,
        };
        let y = DVector::from_element(1, v_bf);
        let (mut post, innov) = ekf_update(&est, &y, &model, &noise, &x, &u)?;
        post.mean[0] = post.mean[0].max(1e-6);
        let clamped = post.mean[1].clamp(tuning.tau_bounds.0, tuning.tau_bounds.1);
        if clamped != post.mean[1] {
            out.projection_events += 1;
            post.mean[1] = clamped;
        }
        est = post;

        i_bf_prev = i_bf;
        i2_prev = i2;
        out.r_t.push(est.mean[0]);
        out.tau.push(est.mean[1]);
        out.socvar_gain.push(est.mean[2]);
        out.cov_r_t.push(est.cov[(0, 0)]);
        out.cov_tau.push(est.cov[(1, 1)]);
        out.innovation.push(innov[0]);
    }
    out.final_r_t = *out.r_t.last().unwrap_or(&init_r_t);
    out.final_tau = *out.tau.last().unwrap_or(&init_tau);
    out.final_socvar_gain = *out.socvar_gain.last().unwrap_or(&socvar_gain_init);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Step 3: SoC and capacity
// ---------------------------------------------------------------------------

/// Dual-filter model for Step 3: state X = [v_c, z], parameter theta = [Q_b].
/// The capacity enters the output only through the accumulated SoC
/// sensitivity, which the driver loop maintains and bakes in per sample.
struct SocSohModel {
    params: EcmParams,
    ocv: OcvCurve,
    eta: f64,
    t_s: f64,
    /// Truncated d(z_pred)/d(Q_b).
    dz_dqb: f64,
    guard: f64,
    clamp_events: Cell<usize>,
}

impl SocSohModel {
    fn clamped_z(&self, z: f64) -> f64 {
        let c = z.clamp(self.guard, 1.0 - self.guard);
        if c != z {
            self.clamp_events.set(self.clamp_events.get() + 1);
        }
        c
    }
}

impl ModelCallbacks for SocSohModel {
    fn state_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn transition(
        &self,
        x: &DVector<f64>,
        theta: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        let decay = (-self.t_s / self.params.tau).exp();
        let q_b = theta[0].max(1e-3);
        DVector::from_vec(vec![
            decay * x[0] + self.params.r_t * (1.0 - decay) * u[0],
            x[1] - self.eta * self.t_s * u[0] / (q_b * HOURS),
        ])
    }
    fn output(&self, x: &DVector<f64>, _: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let z = self.clamped_z(x[1]);
        let ocv = self
            .ocv
            .ocv_guarded(z, self.guard)
            .expect("clamped z is inside the guarded domain");
        DVector::from_element(1, ocv - x[0] - self.params.r_s * u[0])
    }
    fn state_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
        let decay = (-self.t_s / self.params.tau).exp();
        DMatrix::from_diagonal(&DVector::from_vec(vec![decay, 1.0]))
    }
    fn output_state_jacobian(
        &self,
        x: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> DMatrix<f64> {
        let z = x[1].clamp(self.guard, 1.0 - self.guard);
        let slope = self
            .ocv
            .slope_guarded(z, self.guard)
            .expect("clamped z is inside the guarded domain");
        DMatrix::from_row_slice(1, 2, &[-1.0, slope])
    }
    fn output_param_jacobian(
        &self,
        x: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> DMatrix<f64> {
        let z = x[1].clamp(self.guard, 1.0 - self.guard);
        let slope = self
            .ocv
            .slope_guarded(z, self.guard)
            .expect("clamped z is inside the guarded domain");
        DMatrix::from_element(1, 1, slope * self.dz_dqb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step3Result {
    pub t_s: f64,
    pub soc: Vec<f64>,
    pub v_c: Vec<f64>,
    pub q_b: Vec<f64>,
    pub cov_vc: Vec<f64>,
    pub cov_soc: Vec<f64>,
    pub cov_qb: Vec<f64>,
    pub v_pred: Vec<f64>,
    pub v_meas: Vec<f64>,
    pub innovation: Vec<f64>,
    pub final_soc: f64,
    pub final_q_b: f64,
    pub clamp_events: usize,
    /// The Step-1/2 parameter estimates this run consumed.
    pub params_used: EcmParams,
}

/// Raw (unfiltered) measurement stream for Step 3.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStream {
    pub t_s: f64,
    pub i_b: Vec<f64>,
    pub v_b: Vec<f64>,
}

impl RawStream {
    pub fn from_records(t_s: f64, records: &[SimRecord]) -> Self {
        RawStream {
            t_s,
            i_b: records.iter().map(|r| r.i).collect(),
            v_b: records.iter().map(|r| r.v).collect(),
        }
    }
}

/// Joint SoC/capacity estimation on raw drive-cycle data with the dual
/// filter, consuming the Step-1/2 parameter estimates.
pub fn step3_estimate_soc_soh(
    data: &RawStream,
    params: EcmParams,
    ocv: OcvCurve,
    eta: f64,
    init: &InitialGuesses,
    tuning: &Tuning,
) -> Result<Step3Result> {
    params.validate()?;
    let noise = NoiseConfig {
        sigma_r: DMatrix::from_element(1, 1, tuning.sigma_r_qb.powi(2)),
        sigma_w: DMatrix::from_diagonal(&DVector::from_vec(vec![
            tuning.sigma_w_vc.powi(2),
            tuning.sigma_w_z.powi(2),
        ])),
        sigma_v: DMatrix::from_element(1, 1, tuning.sigma_v_sq()),
    };
    let mut param = GaussianEstimate::scalar(init.q_b, tuning.init_std_qb.powi(2));
    let mut state = GaussianEstimate::new(
        DVector::from_vec(vec![init.v_c, init.soc]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            tuning.init_std_vc.powi(2),
            tuning.init_std_soc.powi(2),
        ])),
    );

    let n = data.i_b.len();
    let mut out = Step3Result {
        t_s: data.t_s,
        soc: Vec::with_capacity(n),
        v_c: Vec::with_capacity(n),
        q_b: Vec::with_capacity(n),
        cov_vc: Vec::with_capacity(n),
        cov_soc: Vec::with_capacity(n),
        cov_qb: Vec::with_capacity(n),
        v_pred: Vec::with_capacity(n),
        v_meas: data.v_b.clone(),
        innovation: Vec::with_capacity(n),
        final_soc: init.soc,
        final_q_b: init.q_b,
        clamp_events: 0,
        params_used: params,
    };

    let depth = tuning.sensitivity_depth.max(1);
    let mut sens_terms: VecDeque<f64> = VecDeque::new();
    let mut consecutive_outliers = 0usize;
    let mut clamp_events = 0usize;

    for (k, (&i_b, &v_b)) in data.i_b.iter().zip(&data.v_b).enumerate() {
        // One-step capacity sensitivity of the predicted SoC.
        let q_b = param.mean[0].max(1e-3);
        sens_terms.push_front(eta * data.t_s * i_b / (HOURS * q_b * q_b));
        sens_terms.truncate(depth);
        let dz_dqb: f64 = sens_terms.iter().sum();

        let model = SocSohModel {
            params,
            ocv,
            eta,
            t_s: data.t_s,
            dz_dqb,
            guard: tuning.ocv_guard,
            clamp_events: Cell::new(0),
        };
        let y = DVector::from_element(1, v_b);
        let u = DVector::from_element(1, i_b);
        let step = dekf_step(&param, &state, &y, &u, &model, &noise)?;
        clamp_events += model.clamp_events.get();

        let sigma = step.innovation_cov[(0, 0)].sqrt();
        if step.innovation[0].abs() > tuning.divergence_sigma * sigma {
            consecutive_outliers += 1;
            if consecutive_outliers >= tuning.divergence_steps {
                return Err(CoreError::Diverged {
                    sample: k,
                    sigma_multiple: tuning.divergence_sigma,
                    consecutive: consecutive_outliers,
                });
            }
        } else {
            consecutive_outliers = 0;
        }

        param = step.param;
        param.mean[0] = param.mean[0].max(1e-3); // positivity projection
        state = step.state;

        out.v_c.push(state.mean[0]);
        out.soc.push(state.mean[1]);
        out.q_b.push(param.mean[0]);
        out.cov_vc.push(state.cov[(0, 0)]);
        out.cov_soc.push(state.cov[(1, 1)]);
        out.cov_qb.push(param.cov[(0, 0)]);
        out.v_pred.push(step.y_predicted[0]);
        out.innovation.push(step.innovation[0]);
    }
    out.final_soc = *out.soc.last().unwrap_or(&init.soc);
    out.final_q_b = *out.q_b.last().unwrap_or(&init.q_b);
    out.clamp_events = clamp_events;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full sequential run
// ---------------------------------------------------------------------------

/// Timing plan for the whole sequential experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialPlan {
    pub step1: StepPlan,
    pub step2: StepPlan,
    /// Idle (zero current) gap between steps, seconds.
    pub gap_s: f64,
}

impl SequentialPlan {
    pub fn default_for(spec: &CellSpec) -> Self {
        SequentialPlan {
            step1: StepPlan::step1_default(spec),
            step2: StepPlan::step2_default(spec),
            gap_s: 87.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.step1.validate()?;
        self.step2.validate()
    }
}

/// Everything a sequential run produces: per-step traces, the simulated
/// truth for Step 3, and the final estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialResult {
    pub step1: Step1Result,
    pub step2: Step2Result,
    pub step3: Step3Result,
    /// Simulated truth aligned with the Step-3 trace.
    pub step3_truth: Vec<SimRecord>,
    pub r_s_hat: f64,
    pub r_t_hat: f64,
    pub tau_hat: f64,
    pub q_b_hat: f64,
}

impl SequentialResult {
    /// Absolute SoC error trace for the Step-3 window.
    pub fn soc_error(&self) -> Vec<f64> {
        self.step3
            .soc
            .iter()
            .zip(&self.step3_truth)
            .map(|(s, r)| s - r.z_true)
            .collect()
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// Run the full three-step sequence against a simulated cell: Step-1
/// injection, idle gap, Step-2 injection, idle gap, then the drive cycle.
/// The cell state carries over between segments.
pub fn run_sequential(
    spec: &CellSpec,
    plan: &SequentialPlan,
    drive: &CurrentProfile,
    init_state: BatteryState,
    guesses: &InitialGuesses,
    tuning: &Tuning,
    seed: u64,
) -> Result<SequentialResult> {
    plan.validate()?;

    // Step 1
    let p1 = plan.step1.profile()?;
    let trace1 = crate::cell::simulate(spec, &p1, init_state, derive_seed(seed, 1))?;
    let stream1 = filter_trace(&trace1, plan.step1.f_3db_hz, plan.step1.hold_up_s)?;
    let step1 = step1_estimate_rs(&stream1, guesses.r_s, tuning)?;
    if step1.degenerate {
        return Err(CoreError::DegenerateExcitation {
            max_abs: stream1.max_abs_current(),
            threshold: EXCITATION_THRESHOLD,
        });
    }

    // Idle gap lets the switch transient settle, as a manual tester would.
    let gap1 = CurrentProfile::zeros(plan.step2.t_s, plan.gap_s)?;
    let rest1 = crate::cell::simulate(spec, &gap1, trace1.final_state, derive_seed(seed, 2))?;

    // Step 2
    let p2 = plan.step2.profile()?;
    let trace2 = crate::cell::simulate(spec, &p2, rest1.final_state, derive_seed(seed, 3))?;
    let stream2 = filter_trace(&trace2, plan.step2.f_3db_hz, plan.step2.hold_up_s)?;
    let slope_guess = spec
        .ocv
        .slope_guarded(guesses.soc, tuning.ocv_guard)
        .unwrap_or(0.0);
    let socvar_gain_init = slope_guess * spec.eta / (HOURS * guesses.q_b);
    let step2 = step2_estimate_rc(
        &stream2,
        step1.final_r_s,
        (guesses.r_t, guesses.tau),
        socvar_gain_init,
        tuning,
    )?;
    if step2.degenerate {
        return Err(CoreError::DegenerateExcitation {
            max_abs: stream2.max_abs_current(),
            threshold: EXCITATION_THRESHOLD,
        });
    }

    let gap2 = CurrentProfile::zeros(drive.t_s, plan.gap_s)?;
    let rest2 = crate::cell::simulate(spec, &gap2, trace2.final_state, derive_seed(seed, 4))?;

    // Step 3
    let trace3 = crate::cell::simulate(spec, drive, rest2.final_state, derive_seed(seed, 5))?;
    let raw = RawStream::from_records(trace3.t_s, &trace3.records);
    let params = EcmParams {
        r_s: step1.final_r_s,
        r_t: step2.final_r_t,
        tau: step2.final_tau,
    };
    let step3 = step3_estimate_soc_soh(&raw, params, spec.ocv, spec.eta, guesses, tuning)?;

    Ok(SequentialResult {
        r_s_hat: step1.final_r_s,
        r_t_hat: step2.final_r_t,
        tau_hat: step2.final_tau,
        q_b_hat: step3.final_q_b,
        step1,
        step2,
        step3,
        step3_truth: trace3.records,
    })
}

// ---------------------------------------------------------------------------
// Concurrent baseline
// ---------------------------------------------------------------------------

/// All-at-once model: state X = [v_c, z], parameters
/// theta = [R_s, R_t, tau, Q_b]. The parameter sensitivities of the
/// predicted state are propagated one step, like the sequential Step 3.
struct ConcurrentModel {
    ocv: OcvCurve,
    eta: f64,
    t_s: f64,
    guard: f64,
    /// One-step sensitivities [dv_c/dR_t, dv_c/dtau, dz/dQ_b] at the
    /// current sample.
    dvc_drt: f64,
    dvc_dtau: f64,
    dz_dqb: f64,
}

impl ModelCallbacks for ConcurrentModel {
    fn state_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        4
    }
    fn transition(
        &self,
        x: &DVector<f64>,
        theta: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        let tau = theta[2].max(1e-3);
        let decay = (-self.t_s / tau).exp();
        let q_b = theta[3].max(1e-3);
        DVector::from_vec(vec![
            decay * x[0] + theta[1] * (1.0 - decay) * u[0],
            x[1] - self.eta * self.t_s * u[0] / (q_b * HOURS),
        ])
    }
    fn output(&self, x: &DVector<f64>, theta: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let z = x[1].clamp(self.guard, 1.0 - self.guard);
        let ocv = self.ocv.ocv_guarded(z, self.guard).expect("guarded z");
        DVector::from_element(1, ocv - x[0] - theta[0] * u[0])
    }
    fn state_jacobian(
        &self,
        _: &DVector<f64>,
        theta: &DVector<f64>,
        _: &DVector<f64>,
    ) -> DMatrix<f64> {
        let tau = theta[2].max(1e-3);
        DMatrix::from_diagonal(&DVector::from_vec(vec![(-self.t_s / tau).exp(), 1.0]))
    }
    fn output_state_jacobian(
        &self,
        x: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> DMatrix<f64> {
        let z = x[1].clamp(self.guard, 1.0 - self.guard);
        let slope = self.ocv.slope_guarded(z, self.guard).expect("guarded z");
        DMatrix::from_row_slice(1, 2, &[-1.0, slope])
    }
    fn output_param_jacobian(
        &self,
        x: &DVector<f64>,
        _: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        let z = x[1].clamp(self.guard, 1.0 - self.guard);
        let slope = self.ocv.slope_guarded(z, self.guard).expect("guarded z");
        DMatrix::from_row_slice(
            1,
            4,
            &[
                -u[0],
                -self.dvc_drt,
                -self.dvc_dtau,
                slope * self.dz_dqb,
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcurrentResult {
    pub t_s: f64,
    pub r_s: Vec<f64>,
    pub r_t: Vec<f64>,
    pub tau: Vec<f64>,
    pub q_b: Vec<f64>,
    pub soc: Vec<f64>,
    pub v_c: Vec<f64>,
    pub v_pred: Vec<f64>,
    pub innovation: Vec<f64>,
    pub truth: Vec<SimRecord>,
    pub final_soc: f64,
    pub final_r_s: f64,
    pub final_r_t: f64,
    pub final_tau: f64,
    pub final_q_b: f64,
}

impl ConcurrentResult {
    pub fn soc_error(&self) -> Vec<f64> {
        self.soc
            .iter()
            .zip(&self.truth)
            .map(|(s, r)| s - r.z_true)
            .collect()
    }
}

/// All-at-once baseline: a dual filter over the full parameter vector with
/// the parameter filter updated once every `macro_ratio` state steps,
/// emulating a slow/fast multi-scale split.
pub fn run_concurrent_baseline(
    spec: &CellSpec,
    drive: &CurrentProfile,
    init_state: BatteryState,
    guesses: &InitialGuesses,
    tuning: &Tuning,
    seed: u64,
    macro_ratio: usize,
) -> Result<ConcurrentResult> {
    let macro_ratio = macro_ratio.max(1);
    let trace = crate::cell::simulate(spec, drive, init_state, derive_seed(seed, 6))?;
    let t_s = drive.t_s;

    let mut param = GaussianEstimate::new(
        DVector::from_vec(vec![guesses.r_s, guesses.r_t, guesses.tau, guesses.q_b]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            tuning.init_std_r_s.powi(2),
            tuning.init_std_r_t.powi(2),
            tuning.init_std_tau.powi(2),
            tuning.init_std_qb.powi(2),
        ])),
    );
    let mut state = GaussianEstimate::new(
        DVector::from_vec(vec![guesses.v_c, guesses.soc]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            tuning.init_std_vc.powi(2),
            tuning.init_std_soc.powi(2),
        ])),
    );
    let sigma_r = DMatrix::from_diagonal(&DVector::from_vec(vec![
        (tuning.sigma_r_rel * guesses.r_s).powi(2),
        (tuning.sigma_r_rel * guesses.r_t).powi(2),
        (tuning.sigma_r_rel * guesses.tau).powi(2),
        tuning.sigma_r_qb.powi(2),
    ]));
    let sigma_w = DMatrix::from_diagonal(&DVector::from_vec(vec![
        tuning.sigma_w_vc.powi(2),
        tuning.sigma_w_z.powi(2),
    ]));
    let sigma_v = DMatrix::from_element(1, 1, tuning.sigma_v_sq());

    let n = trace.records.len();
    let mut out = ConcurrentResult {
        t_s,
        r_s: Vec::with_capacity(n),
        r_t: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        q_b: Vec::with_capacity(n),
        soc: Vec::with_capacity(n),
        v_c: Vec::with_capacity(n),
        v_pred: Vec::with_capacity(n),
        innovation: Vec::with_capacity(n),
        truth: trace.records.clone(),
        final_soc: guesses.soc,
        final_r_s: guesses.r_s,
        final_r_t: guesses.r_t,
        final_tau: guesses.tau,
        final_q_b: guesses.q_b,
    };

    let identity2 = DMatrix::<f64>::identity(2, 2);
    let identity4 = DMatrix::<f64>::identity(4, 4);
    let mut consecutive_outliers = 0usize;
    // Parameter error is not captured by the state innovation covariance,
    // so the divergence gauge also tracks the parameter filter's.
    let mut s_param_last = f64::INFINITY;

    for (k, r) in trace.records.iter().enumerate() {
        let i_b = r.i;
        let u = DVector::from_element(1, i_b);
        let y = DVector::from_element(1, r.v);

        let tau = param.mean[2].max(1e-3);
        let decay = (-t_s / tau).exp();
        let q_b = param.mean[3].max(1e-3);
        let model = ConcurrentModel {
            ocv: spec.ocv,
            eta: spec.eta,
            t_s,
            guard: tuning.ocv_guard,
            dvc_drt: (1.0 - decay) * i_b,
            dvc_dtau: (t_s / (tau * tau)) * decay * (state.mean[0] - param.mean[1] * i_b),
            dz_dqb: spec.eta * t_s * i_b / (HOURS * q_b * q_b),
        };

        // Parameter prediction happens every macro step; the state filter
        // runs every step.
        let update_params = k % macro_ratio == 0;
        if update_params {
            param.cov += &sigma_r;
        }

        // State predict
        let x_pred = model.transition(&state.mean, &param.mean, &u);
        let a = model.state_jacobian(&x_pred, &param.mean, &u);
        let mut cov_pred = &a * &state.cov * a.transpose() + &sigma_w;
        cov_pred = (cov_pred.clone() + cov_pred.transpose()) * 0.5;

        let y_pred = model.output(&x_pred, &param.mean, &u);
        let innovation = &y - &y_pred;

        // State update
        let c_x = model.output_state_jacobian(&x_pred, &param.mean, &u);
        let s_x = (&c_x * &cov_pred * c_x.transpose() + &sigma_v)[(0, 0)];
        if s_x <= 0.0 {
            return Err(CoreError::SingularInnovation);
        }
        let k_x = &cov_pred * c_x.transpose() / s_x;
        let x_post = &x_pred + &k_x * &innovation;
        let mut cov_x = (&identity2 - &k_x * &c_x) * &cov_pred;
        cov_x = (cov_x.clone() + cov_x.transpose()) * 0.5;
        state = GaussianEstimate {
            mean: x_post,
            cov: cov_x,
        };

        // Parameter update on the macro schedule
        if update_params {
            let c_t = model.output_param_jacobian(&x_pred, &param.mean, &u);
            let s_t = (&c_t * &param.cov * c_t.transpose() + &sigma_v)[(0, 0)];
            if s_t <= 0.0 {
                return Err(CoreError::SingularInnovation);
            }
            s_param_last = s_t;
            let k_t = &param.cov * c_t.transpose() / s_t;
            let theta_post = &param.mean + &k_t * &innovation;
            let mut cov_t = (&identity4 - &k_t * &c_t) * &param.cov;
            cov_t = (cov_t.clone() + cov_t.transpose()) * 0.5;
            param = GaussianEstimate {
                mean: theta_post,
                cov: cov_t,
            };
            param.mean[0] = param.mean[0].max(1e-6);
            param.mean[1] = param.mean[1].max(1e-6);
            param.mean[2] = param.mean[2].clamp(tuning.tau_bounds.0, tuning.tau_bounds.1);
            param.mean[3] = param.mean[3].max(1e-3);
        }

        let sigma = s_x.max(s_param_last).sqrt();
        if innovation[0].abs() > tuning.divergence_sigma * sigma {
            consecutive_outliers += 1;
            if consecutive_outliers >= tuning.divergence_steps {
                return Err(CoreError::Diverged {
                    sample: k,
                    sigma_multiple: tuning.divergence_sigma,
                    consecutive: consecutive_outliers,
                });
            }
        } else {
            consecutive_outliers = 0;
        }

        out.r_s.push(param.mean[0]);
        out.r_t.push(param.mean[1]);
        out.tau.push(param.mean[2]);
        out.q_b.push(param.mean[3]);
        out.v_c.push(state.mean[0]);
        out.soc.push(state.mean[1]);
        out.v_pred.push(y_pred[0]);
        out.innovation.push(innovation[0]);
    }
    out.final_soc = *out.soc.last().unwrap_or(&guesses.soc);
    out.final_r_s = *out.r_s.last().unwrap_or(&guesses.r_s);
    out.final_r_t = *out.r_t.last().unwrap_or(&guesses.r_t);
    out.final_tau = *out.tau.last().unwrap_or(&guesses.tau);
    out.final_q_b = *out.q_b.last().unwrap_or(&guesses.q_b);
    Ok(out)
}

/// The standard multi-sine excitation for the concurrent baseline:
/// 0.01, 0.05, and 0.1 Hz at the given amplitude.
pub fn concurrent_multisine(amplitude: f64, t_s: f64, duration: f64) -> Result<CurrentProfile> {
    sum_profiles(&[
        sine_profile(amplitude, 0.01, t_s, duration)?,
        sine_profile(amplitude, 0.05, t_s, duration)?,
        sine_profile(amplitude, 0.1, t_s, duration)?,
    ])
}

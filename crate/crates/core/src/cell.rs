//! First-order equivalent-circuit cell model: OCV curve, discrete dynamics,
//! and noisy terminal-voltage simulation.
//!
//! Sign convention, fixed project-wide: positive current discharges the cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::profile::CurrentProfile;

/// Default guard distance from the SoC endpoints where the OCV curve has
/// log singularities.
pub const DEFAULT_OCV_GUARD: f64 = 1e-4;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Open-circuit-voltage curve v_oc(z) = k0 - k1/z - k2*z + k3*ln(z) + k4*ln(1-z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcvCurve {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl OcvCurve {
    /// Coefficients fitted for the Samsung 18650 cell used throughout.
    pub fn samsung_18650() -> Self {
        OcvCurve {
            k0: 2.6031,
            k1: 0.0674,
            k2: -1.527,
            k3: 0.6265,
            k4: -0.0297,
        }
    }

    /// Open-circuit voltage at SoC `z`, guarded away from the endpoints.
    pub fn ocv(&self, z: f64) -> Result<f64> {
        self.ocv_guarded(z, DEFAULT_OCV_GUARD)
    }

    pub fn ocv_guarded(&self, z: f64, guard: f64) -> Result<f64> {
        check_domain(z, guard)?;
        Ok(self.k0 - self.k1 / z - self.k2 * z + self.k3 * z.ln() + self.k4 * (1.0 - z).ln())
    }

    /// Analytic derivative d(ocv)/dz, needed for output Jacobians.
    pub fn slope(&self, z: f64) -> Result<f64> {
        self.slope_guarded(z, DEFAULT_OCV_GUARD)
    }

    pub fn slope_guarded(&self, z: f64, guard: f64) -> Result<f64> {
        check_domain(z, guard)?;
        Ok(self.k1 / (z * z) - self.k2 + self.k3 / z - self.k4 / (1.0 - z))
    }

    /// Least-squares affine fit v_oc ~ a*z + b over a uniform grid on
    /// [z_lo, z_hi]. Analysis-only; estimators always use the full curve.
    pub fn linearize(&self, z_lo: f64, z_hi: f64) -> Result<LinearOcv> {
        self.linearize_n(z_lo, z_hi, 200)
    }

    pub fn linearize_n(&self, z_lo: f64, z_hi: f64, points: usize) -> Result<LinearOcv> {
        if z_lo.partial_cmp(&z_hi) != Some(std::cmp::Ordering::Less) {
            return Err(CoreError::InvalidInterval { lo: z_lo, hi: z_hi });
        }
        check_domain(z_lo, DEFAULT_OCV_GUARD)?;
        check_domain(z_hi, DEFAULT_OCV_GUARD)?;
        let n = points.max(100);
        // Normal equations for the 2-parameter fit; tiny and well conditioned
        // on any interval away from the endpoints.
        let (mut sz, mut szz, mut sv, mut szv) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let z = z_lo + (z_hi - z_lo) * i as f64 / (n - 1) as f64;
            let v = self.ocv_guarded(z, DEFAULT_OCV_GUARD)?;
            sz += z;
            szz += z * z;
            sv += v;
            szv += z * v;
        }
        let nf = n as f64;
        let det = nf * szz - sz * sz;
        let a = (nf * szv - sz * sv) / det;
        let b = (sv * szz - sz * szv) / det;
        Ok(LinearOcv { a, b })
    }
}

/// Affine OCV approximation v_oc ~ a*z + b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOcv {
    /// Volts per unit SoC.
    pub a: f64,
    /// Volts.
    pub b: f64,
}

fn check_domain(z: f64, guard: f64) -> Result<()> {
    let (lo, hi) = (guard, 1.0 - guard);
    if !z.is_finite() || z < lo || z > hi {
        Err(CoreError::OcvDomain { z, lo, hi })
    } else {
        Ok(())
    }
}

/// First-order ECM parameters. The RC capacitance is never stored; it is
/// `tau / r_t` when needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmParams {
    /// Ohmic (series) resistance, ohms.
    pub r_s: f64,
    /// Diffusion resistance, ohms.
    pub r_t: f64,
    /// RC time constant, seconds.
    pub tau: f64,
}

impl EcmParams {
    pub fn validate(&self) -> Result<()> {
        if self.r_s > 0.0 && self.r_t > 0.0 && self.tau > 0.0 {
            Ok(())
        } else {
            Err(CoreError::InvalidParameter(format!(
                "ECM parameters must be positive: r_s={}, r_t={}, tau={}",
                self.r_s, self.r_t, self.tau
            )))
        }
    }
}

/// Ground-truth cell description: capacity, efficiency, ECM parameters,
/// OCV curve, and the measurement-noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    /// Capacity, ampere-hours.
    pub q_b: f64,
    /// Charge/discharge efficiency, in (0, 1].
    pub eta: f64,
    pub ecm: EcmParams,
    pub ocv: OcvCurve,
    /// Voltage measurement noise standard deviation, volts.
    pub sigma_v: f64,
    pub name: String,
}

impl CellSpec {
    /// Samsung 18650 cell at 20 C.
    pub fn samsung_18650_20c() -> Self {
        CellSpec {
            q_b: 2.47,
            eta: 0.98,
            ecm: EcmParams {
                r_s: 0.1,
                r_t: 0.03,
                tau: 15.0,
            },
            ocv: OcvCurve::samsung_18650(),
            sigma_v: 0.020,
            name: "samsung-18650-20C".to_string(),
        }
    }

    /// Samsung 18650 cell at 40 C; capacity grows to 2.62 Ah, the remaining
    /// parameters change little and are kept at the 20 C values.
    pub fn samsung_18650_40c() -> Self {
        CellSpec {
            q_b: 2.62,
            name: "samsung-18650-40C".to_string(),
            ..Self::samsung_18650_20c()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "samsung-18650-20C" => Some(Self::samsung_18650_20c()),
            "samsung-18650-40C" => Some(Self::samsung_18650_40c()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ecm.validate()?;
        if self.q_b <= 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "capacity must be positive, got {}",
                self.q_b
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "efficiency must be in (0, 1], got {}",
                self.eta
            )));
        }
        if self.sigma_v < 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "noise std must be non-negative, got {}",
                self.sigma_v
            )));
        }
        Ok(())
    }

    /// Current corresponding to a given C-rate for this cell.
    pub fn c_rate_amps(&self, c: f64) -> f64 {
        c * self.q_b
    }
}

/// Dynamic cell state: RC-pair voltage and SoC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// RC-pair voltage, volts.
    pub v_c: f64,
    /// State of charge in [0, 1].
    pub z: f64,
}

impl BatteryState {
    pub fn new(v_c: f64, z: f64) -> Self {
        BatteryState { v_c, z }
    }
}

/// Result of one discrete state step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: BatteryState,
    /// True when the SoC hit an endpoint and was clamped.
    pub saturated: bool,
}

/// Exact zero-order-hold step of the ECM dynamics over `t_s` seconds under
/// constant current `i_b` (positive discharging).
pub fn step_state(spec: &CellSpec, state: BatteryState, i_b: f64, t_s: f64) -> StepOutcome {
    debug_assert!(t_s > 0.0);
    let decay = (-t_s / spec.ecm.tau).exp();
    let v_c = decay * state.v_c + spec.ecm.r_t * (1.0 - decay) * i_b;
    let z_raw = state.z - spec.eta * t_s * i_b / (spec.q_b * SECONDS_PER_HOUR);
    let z = z_raw.clamp(0.0, 1.0);
    StepOutcome {
        state: BatteryState { v_c, z },
        saturated: z != z_raw,
    }
}

/// Noise-free terminal voltage v_b = ocv(z) - r_s*i_b - v_c.
pub fn terminal_voltage(spec: &CellSpec, state: &BatteryState, i_b: f64) -> Result<f64> {
    Ok(spec.ocv.ocv(state.z)? - spec.ecm.r_s * i_b - state.v_c)
}

/// One simulated sample: time, applied current, measured (noisy) voltage,
/// and the true state retained for oracle metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub i: f64,
    pub v: f64,
    pub z_true: f64,
    pub v_c_true: f64,
}

/// A full simulation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub t_s: f64,
    pub records: Vec<SimRecord>,
    /// Sample index of the first SoC saturation event, if any.
    pub first_saturation: Option<usize>,
    /// Cell state after the last sample, for chaining segments.
    pub final_state: BatteryState,
}

impl SimTrace {
    pub fn currents(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.i).collect()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.v).collect()
    }
}

/// Simulate the cell along `profile` starting from `init`. The measured
/// voltage is the noise-free terminal voltage plus N(0, sigma_v^2) noise;
/// the trace is deterministic for a given seed.
///
/// Sample k applies current `profile.samples[k]` held over one period; the
/// voltage at sample k is measured before the state advances, matching a
/// synchronous sampler.
pub fn simulate(
    spec: &CellSpec,
    profile: &CurrentProfile,
    init: BatteryState,
    seed: u64,
) -> Result<SimTrace> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init;
    let mut records = Vec::with_capacity(profile.samples.len());
    let mut first_saturation = None;
    for (k, &i_b) in profile.samples.iter().enumerate() {
        let clean = terminal_voltage(spec, &state, i_b)?;
        let v = clean + spec.sigma_v * gaussian(&mut rng);
        records.push(SimRecord {
            t: k as f64 * profile.t_s,
            i: i_b,
            v,
            z_true: state.z,
            v_c_true: state.v_c,
        });
        let outcome = step_state(spec, state, i_b, profile.t_s);
        if outcome.saturated && first_saturation.is_none() {
            first_saturation = Some(k);
        }
        state = outcome.state;
    }
    Ok(SimTrace {
        t_s: profile.t_s,
        records,
        first_saturation,
        final_state: state,
    })
}

/// Standard normal sample via Box-Muller; keeps the dependency surface to
/// the plain `rand` core.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

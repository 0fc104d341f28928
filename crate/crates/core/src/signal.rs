//! Signal conditioning: first-order high-pass filtering and the
//! frequency-separation analysis of the terminal-voltage components.

use serde::{Deserialize, Serialize};

use crate::cell::{CellSpec, LinearOcv};
use crate::error::{CoreError, Result};

/// Streaming first-order high-pass filter, discretized with the bilinear
/// transform and prewarped so the -3 dB point lands exactly on `f_3db`.
///
/// Difference equation: y[k] = b0*x[k] + b1*x[k-1] - a1*y[k-1], with
/// b1 = -b0 so the DC gain is exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighPassFilter {
    pub f_3db: f64,
    pub t_s: f64,
    pub b0: f64,
    pub b1: f64,
    pub a1: f64,
    /// (previous input, previous output); seeded on the first sample.
    state: Option<(f64, f64)>,
}

/// Design a first-order Butterworth high-pass filter for sample period `t_s`.
pub fn design_highpass(f_3db: f64, t_s: f64) -> Result<HighPassFilter> {
    let nyquist = 0.5 / t_s;
    if f_3db <= 0.0 || f_3db >= nyquist {
        return Err(CoreError::NyquistViolation {
            f_hz: f_3db,
            nyquist_hz: nyquist,
        });
    }
    let k = (std::f64::consts::PI * f_3db * t_s).tan();
    let b0 = 1.0 / (1.0 + k);
    Ok(HighPassFilter {
        f_3db,
        t_s,
        b0,
        b1: -b0,
        a1: (k - 1.0) / (k + 1.0),
        state: None,
    })
}

impl HighPassFilter {
    /// Equivalent analysis time constant T_c = 1/(2*pi*f_3db).
    pub fn time_constant(&self) -> f64 {
        1.0 / (std::f64::consts::TAU * self.f_3db)
    }

    /// Design from the analysis time constant instead of the bandwidth.
    pub fn from_time_constant(t_c: f64, t_s: f64) -> Result<Self> {
        design_highpass(1.0 / (std::f64::consts::TAU * t_c), t_s)
    }

    /// Start from zero internal state instead of seeding with the first
    /// input. Used by the component analysis where strict linearity of the
    /// whole chain is required.
    pub fn with_zero_state(mut self) -> Self {
        self.state = Some((0.0, 0.0));
        self
    }

    /// One streaming update. On the first call the previous-input state is
    /// seeded with the sample itself, so the first output is 0 and no
    /// artificial step transient is injected.
    pub fn apply(&mut self, x: f64) -> f64 {
        let (px, py) = self.state.unwrap_or((x, 0.0));
        let y = self.b0 * x + self.b1 * px - self.a1 * py;
        self.state = Some((x, y));
        y
    }

    /// Filter a whole slice, returning a new vector.
    pub fn filter_all(&mut self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// Magnitude of the frequency response at `f` hertz, evaluated on the
    /// unit circle.
    pub fn gain_at(&self, f: f64) -> f64 {
        let w = std::f64::consts::TAU * f * self.t_s;
        let (re, im) = (w.cos(), -w.sin());
        // |b0 + b1*e^{-jw}| / |1 + a1*e^{-jw}|
        let num = ((self.b0 + self.b1 * re).powi(2) + (self.b1 * im).powi(2)).sqrt();
        let den = ((1.0 + self.a1 * re).powi(2) + (self.a1 * im).powi(2)).sqrt();
        num / den
    }
}

/// Exponential decay of the initial-SoC voltage term after high-pass
/// filtering: (a*z0 + b) * exp(-t/t_c).
pub fn initial_soc_decay(a: f64, b: f64, z0: f64, t_c: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0 && t_c > 0.0);
    (a * z0 + b) * (-t / t_c).exp()
}

/// Parameters for the sinusoidal component analysis.
#[derive(Debug, Clone, Copy)]
pub struct BreakdownConfig {
    /// Injection frequency, hertz.
    pub f_hz: f64,
    /// Injection amplitude, amps.
    pub amplitude_a: f64,
    /// High-pass analysis time constant, seconds.
    pub t_c_s: f64,
    pub duration_s: f64,
    pub t_s: f64,
    /// Initial SoC entering the initial-SoC decay term.
    pub z0: f64,
}

/// Per-sample decomposition of the filtered, linearized terminal-voltage
/// deviation into its four driving terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBreakdown {
    pub t_s: f64,
    pub init_v: Vec<f64>,
    pub socvar_v: Vec<f64>,
    pub ohmic_v: Vec<f64>,
    pub rc_v: Vec<f64>,
    /// Steady-state amplitude of each current-driven term plus the initial
    /// term's starting value, measured over the last injection period.
    pub amplitudes: ComponentAmplitudes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentAmplitudes {
    pub init_v: f64,
    pub socvar_v: f64,
    pub ohmic_v: f64,
    pub rc_v: f64,
}

impl ComponentBreakdown {
    /// Reconstructed total: samplewise sum of the four components.
    pub fn total(&self) -> Vec<f64> {
        (0..self.init_v.len())
            .map(|k| self.init_v[k] + self.socvar_v[k] + self.ohmic_v[k] + self.rc_v[k])
            .collect()
    }
}

/// Decompose the filtered terminal-voltage response to a sinusoidal
/// injection into initial-SoC, SoC-variation, ohmic, and RC terms.
///
/// All four terms are produced by discrete LTI operators sharing one
/// zero-state high-pass filter design, so their sum reconstructs the
/// filtered linearized voltage deviation exactly (up to rounding).
pub fn component_breakdown(
    spec: &CellSpec,
    lin: LinearOcv,
    cfg: &BreakdownConfig,
) -> Result<ComponentBreakdown> {
    let nyquist = 0.5 / cfg.t_s;
    if cfg.f_hz >= nyquist {
        return Err(CoreError::NyquistViolation {
            f_hz: cfg.f_hz,
            nyquist_hz: nyquist,
        });
    }
    if cfg.f_hz > 0.0 && cfg.duration_s < 1.0 / cfg.f_hz {
        return Err(CoreError::InvalidParameter(format!(
            "duration {} s shorter than one period of {} Hz",
            cfg.duration_s, cfg.f_hz
        )));
    }
    let n = (cfg.duration_s / cfg.t_s).round() as usize;
    let f_3db = 1.0 / (std::f64::consts::TAU * cfg.t_c_s);
    let current: Vec<f64> = (0..n)
        .map(|k| cfg.amplitude_a * (std::f64::consts::TAU * cfg.f_hz * k as f64 * cfg.t_s).cos())
        .collect();

    let i_bf = design_highpass(f_3db, cfg.t_s)?
        .with_zero_state()
        .filter_all(&current);

    // Initial-SoC term: discrete high-pass response to the constant a*z0+b.
    let v0 = lin.a * cfg.z0 + lin.b;
    let init_v = design_highpass(f_3db, cfg.t_s)?
        .with_zero_state()
        .filter_all(&vec![v0; n]);

    // SoC-variation term: -(a*eta/(3600*Q_b)) * running integral of i_bf.
    let soc_gain = -lin.a * spec.eta * cfg.t_s / (3600.0 * spec.q_b);
    let mut acc = 0.0;
    let socvar_v: Vec<f64> = i_bf
        .iter()
        .map(|&i| {
            let v = soc_gain * acc;
            acc += i;
            v
        })
        .collect();

    // Ohmic term.
    let ohmic_v: Vec<f64> = i_bf.iter().map(|&i| -spec.ecm.r_s * i).collect();

    // RC term: zero-order-hold RC response to i_bf, sampled before the step
    // like the simulator.
    let decay = (-cfg.t_s / spec.ecm.tau).exp();
    let mut v_rc = 0.0;
    let rc_v: Vec<f64> = i_bf
        .iter()
        .map(|&i| {
            let v = -v_rc;
            v_rc = decay * v_rc + spec.ecm.r_t * (1.0 - decay) * i;
            v
        })
        .collect();

    let period_samples = ((1.0 / cfg.f_hz / cfg.t_s).round() as usize).clamp(1, n);
    let amplitudes = ComponentAmplitudes {
        init_v: v0.abs(),
        socvar_v: steady_amplitude(&socvar_v, period_samples),
        ohmic_v: steady_amplitude(&ohmic_v, period_samples),
        rc_v: steady_amplitude(&rc_v, period_samples),
    };

    Ok(ComponentBreakdown {
        t_s: cfg.t_s,
        init_v,
        socvar_v,
        ohmic_v,
        rc_v,
        amplitudes,
    })
}

/// Half peak-to-peak over the last full period.
fn steady_amplitude(xs: &[f64], period_samples: usize) -> f64 {
    let tail = &xs[xs.len().saturating_sub(period_samples)..];
    let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / 2.0
}

//! Current-profile generation: sinusoidal injections, profile summation, and
//! a synthetic urban drive cycle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Uniformly sampled current sequence; positive samples discharge the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentProfile {
    /// Sample period, seconds.
    pub t_s: f64,
    pub samples: Vec<f64>,
    pub label: String,
}

impl CurrentProfile {
    pub fn new(t_s: f64, samples: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if t_s <= 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "sample period must be positive, got {t_s}"
            )));
        }
        if samples.is_empty() {
            return Err(CoreError::InvalidParameter(
                "profile must contain at least one sample".into(),
            ));
        }
        Ok(CurrentProfile {
            t_s,
            samples,
            label: label.into(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.t_s
    }

    /// All-zero profile (idle rest).
    pub fn zeros(t_s: f64, duration: f64) -> Result<Self> {
        let n = (duration / t_s).round().max(1.0) as usize;
        CurrentProfile::new(t_s, vec![0.0; n], "idle")
    }
}

/// Cosine injection `m * cos(2*pi*f*k*t_s)`.
pub fn sine_profile(m: f64, f: f64, t_s: f64, duration: f64) -> Result<CurrentProfile> {
    let nyquist = 0.5 / t_s;
    if f >= nyquist {
        return Err(CoreError::NyquistViolation {
            f_hz: f,
            nyquist_hz: nyquist,
        });
    }
    if f > 0.0 && duration < 1.0 / f {
        return Err(CoreError::InvalidParameter(format!(
            "duration {duration} s shorter than one period of {f} Hz"
        )));
    }
    let n = (duration / t_s).round() as usize;
    let samples = (0..n)
        .map(|k| m * (std::f64::consts::TAU * f * k as f64 * t_s).cos())
        .collect();
    CurrentProfile::new(t_s, samples, format!("sine-{f}Hz-{m}A"))
}

/// Pointwise sum of profiles with matching sample period and length.
pub fn sum_profiles(profiles: &[CurrentProfile]) -> Result<CurrentProfile> {
    let first = profiles
        .first()
        .ok_or_else(|| CoreError::ProfileMismatch("empty profile list".into()))?;
    let mut samples = vec![0.0; first.samples.len()];
    let mut labels = Vec::new();
    for p in profiles {
        if (p.t_s - first.t_s).abs() > 1e-12 {
            return Err(CoreError::ProfileMismatch(format!(
                "sample periods differ: {} vs {}",
                first.t_s, p.t_s
            )));
        }
        if p.samples.len() != samples.len() {
            return Err(CoreError::ProfileMismatch(format!(
                "lengths differ: {} vs {}",
                samples.len(),
                p.samples.len()
            )));
        }
        for (acc, &s) in samples.iter_mut().zip(&p.samples) {
            *acc += s;
        }
        labels.push(p.label.clone());
    }
    CurrentProfile::new(first.t_s, samples, labels.join("+"))
}

/// Synthetic urban-style drive cycle: seeded pseudo-random segments of
/// acceleration, cruise, regen braking, and idle, scaled so the largest
/// magnitude equals `peak` and biased toward net discharge.
pub fn drive_cycle_profile(t_s: f64, duration: f64, peak: f64, seed: u64) -> Result<CurrentProfile> {
    if t_s <= 0.0 || duration <= 0.0 || peak <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "drive cycle needs positive t_s, duration, and peak".into(),
        ));
    }
    let n = (duration / t_s).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut level = 0.0_f64;
    while samples.len() < n {
        // Segment kinds are weighted toward discharge so the cycle drains
        // the cell like a real route does.
        let kind: f64 = rng.gen();
        let seg_len = ((rng.gen_range(5.0..30.0) / t_s).round() as usize).max(1);
        let target = if kind < 0.45 {
            rng.gen_range(0.4..1.0) // acceleration / high load
        } else if kind < 0.75 {
            rng.gen_range(0.15..0.5) // cruise
        } else if kind < 0.9 {
            -rng.gen_range(0.2..0.6) // regen braking
        } else {
            0.0 // idle
        };
        let ramp = (seg_len / 4).max(1);
        for j in 0..seg_len {
            if samples.len() >= n {
                break;
            }
            let frac = ((j + 1) as f64 / ramp as f64).min(1.0);
            samples.push(level + (target - level) * frac);
        }
        level = target;
    }
    // Normalize to the requested peak.
    let max_abs = samples.iter().fold(0.0_f64, |m, &s| m.max(s.abs()));
    if max_abs > 0.0 {
        for s in &mut samples {
            *s *= peak / max_abs;
        }
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    debug_assert!(mean > 0.0, "drive cycle must be net discharge");
    CurrentProfile::new(t_s, samples, format!("drive-cycle-{seed}"))
}

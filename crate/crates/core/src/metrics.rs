//! Small accuracy metrics shared by tests and the CLI.

/// Root-mean-square of a residual sequence.
pub fn rmse(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return f64::NAN;
    }
    (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
}

/// Median of a sample (by copy). NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// First time (seconds from trace start) at which the error enters the
/// band and stays inside it for `hold_s` seconds. `None` if it never does.
/// The hold window is truncated at the end of the trace, so a trace that
/// ends inside the band counts as converged at the entry point.
pub fn convergence_time(errors: &[f64], t_s: f64, band: f64, hold_s: f64) -> Option<f64> {
    let hold = (hold_s / t_s).round() as usize;
    let mut run_start: Option<usize> = None;
    for (k, e) in errors.iter().enumerate() {
        if e.abs() <= band {
            let start = *run_start.get_or_insert(k);
            if k + 1 - start >= hold || k + 1 == errors.len() {
                return Some(start as f64 * t_s);
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// Mean and variance (population) of a sequence.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_of_constant() {
        assert!((rmse(&[3.0, 3.0, 3.0]) - 3.0).abs() < 1e-15);
        assert!((rmse(&[3.0, -3.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn convergence_requires_hold() {
        // Enters the band at k=2 but leaves at k=4; settles at k=6.
        let e = [1.0, 0.5, 0.05, 0.05, 0.5, 0.3, 0.02, 0.01, 0.02, 0.01];
        let t = convergence_time(&e, 1.0, 0.1, 3.0).unwrap();
        assert_eq!(t, 6.0);
    }

    #[test]
    fn convergence_none_when_never_settles() {
        let e = [1.0, 1.0, 1.0];
        assert!(convergence_time(&e, 1.0, 0.1, 2.0).is_none());
    }

    #[test]
    fn truncated_hold_at_trace_end() {
        let e = [1.0, 0.05, 0.05];
        let t = convergence_time(&e, 1.0, 0.1, 100.0).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn mean_var_basic() {
        let (m, v) = mean_var(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }
}

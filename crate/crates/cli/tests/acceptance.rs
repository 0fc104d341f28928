//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS/FAIL` line (run with `--nocapture` to see the lines
//! for passing tests; failures always surface them).
//!
//! Tolerances are pinned here and nowhere else; loosening them is a
//! deliberate act, not a tuning knob.

use std::f64::consts::TAU;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use battkit_cli::commands::cmd_compare;
use battkit_cli::config::ScenarioConfig;
use battkit_core::cell::{simulate, BatteryState, CellSpec};
use battkit_core::metrics::{convergence_time, median};
use battkit_core::pipeline::{
    filter_trace, run_sequential, step1_estimate_rs, step2_estimate_rc, InitialGuesses,
    SequentialPlan, StepPlan, Tuning,
};
use battkit_core::profile::drive_cycle_profile;
use battkit_core::signal::{component_breakdown, design_highpass, BreakdownConfig};

/// Print the verdict line and panic on failure so the test harness reports
/// one pass/fail per criterion.
fn verdict(n: usize, desc: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {tag} - {desc} ({detail})");
    assert!(pass, "criterion {n} failed: {desc} ({detail})");
}

// ---------------------------------------------------------------------------
// Criterion 1: frequency-separation analysis vs transfer-function oracle
// ---------------------------------------------------------------------------

/// Steady-state amplitude oracle for each voltage component under a cosine
/// current injection, computed from first principles with complex
/// arithmetic (independent of the streaming implementations).
fn oracle_amplitudes(spec: &CellSpec, f: f64, amp: f64, t_c: f64, t_s: f64) -> (f64, f64, f64) {
    let w = TAU * f * t_s;
    let (c, s) = (w.cos(), w.sin());
    let mag = |re: f64, im: f64| (re * re + im * im).sqrt();

    // High-pass H(z) = (1 - z^-1) / ((1+k) + (k-1) z^-1), k = tan(pi f3db ts)
    let f_3db = 1.0 / (TAU * t_c);
    let k = (std::f64::consts::PI * f_3db * t_s).tan();
    let h_hp = mag(1.0 - c, s) / mag(1.0 + k + (k - 1.0) * c, -(k - 1.0) * s);
    let i_amp = amp * h_hp;

    let ohmic = spec.ecm.r_s * i_amp;

    // RC over ZOH: v[k+1] = d v[k] + R_t (1-d) i[k]; gain R_t(1-d)/|z - d|.
    let d = (-t_s / spec.ecm.tau).exp();
    let rc = spec.ecm.r_t * (1.0 - d) / mag(c - d, s) * i_amp;

    // SoC variation: slope * eta * t_s/(3600 Q_b) * delayed accumulator of
    // i_bf; accumulator gain 1/|z - 1|.
    let lin = spec.ocv.linearize(0.1, 0.9).unwrap();
    let socvar = lin.a.abs() * spec.eta * t_s / (3600.0 * spec.q_b) / mag(c - 1.0, s) * i_amp;

    (ohmic, rc, socvar)
}

#[test]
fn criterion_1_frequency_separation() {
    let start = Instant::now();
    let spec = CellSpec::samsung_18650_20c();
    let lin = spec.ocv.linearize(0.1, 0.9).unwrap();
    let amp = spec.c_rate_amps(0.5);
    let t_c = 80.0;

    let mut pass = true;
    let mut detail = String::new();
    for f in [0.4f64, 0.004] {
        let t_s = (1.0 / (100.0 * f)).min(t_c / 10.0);
        let cfg = BreakdownConfig {
            f_hz: f,
            amplitude_a: amp,
            t_c_s: t_c,
            duration_s: 5.0 * t_c + 8.0 / f,
            t_s,
            z0: 0.8,
        };
        let b = component_breakdown(&spec, lin, &cfg).unwrap();
        let a = b.amplitudes;
        let (ohmic_o, rc_o, socvar_o) = oracle_amplitudes(&spec, f, amp, t_c, t_s);
        let rel = |x: f64, o: f64| (x - o).abs() / o;
        pass &= rel(a.ohmic_v, ohmic_o) < 0.01
            && rel(a.rc_v, rc_o) < 0.01
            && rel(a.socvar_v, socvar_o) < 0.01;
        if f == 0.4 {
            pass &= a.ohmic_v / a.rc_v > 100.0 && a.ohmic_v / a.socvar_v > 100.0;
        } else {
            let ratio = a.rc_v / a.ohmic_v;
            pass &= (0.1..=1.0).contains(&ratio);
        }
        detail.push_str(&format!(
            "f={f}: ohmic {:.3e} rc {:.3e} socvar {:.3e}; ",
            a.ohmic_v, a.rc_v, a.socvar_v
        ));
    }
    let dt = start.elapsed().as_secs_f64();
    pass &= dt < 10.0;
    detail.push_str(&format!("{dt:.2}s"));
    verdict(1, "0.4/0.004 Hz component ratios match TF oracle within 1%", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 2: Step-1 ohmic resistance
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_step1_ohmic() {
    let start = Instant::now();
    let spec = CellSpec::samsung_18650_20c();
    let plan = StepPlan::step1_default(&spec);
    let tuning = Tuning::for_cell(&spec);
    let profile = plan.profile().unwrap();

    let mut finals = Vec::new();
    for seed in 0..20u64 {
        let trace = simulate(&spec, &profile, BatteryState::new(0.0, 0.8), seed).unwrap();
        let stream = filter_trace(&trace, plan.f_3db_hz, plan.hold_up_s).unwrap();
        let r = step1_estimate_rs(&stream, 0.02, &tuning).unwrap();
        finals.push(r.final_r_s);
    }
    let med = median(&finals);
    let med_rel = (med - spec.ecm.r_s).abs() / spec.ecm.r_s;

    // Noiseless run: within 2% inside the 200 s window.
    let mut quiet = spec.clone();
    quiet.sigma_v = 0.0;
    let trace = simulate(&quiet, &profile, BatteryState::new(0.0, 0.8), 0).unwrap();
    let stream = filter_trace(&trace, plan.f_3db_hz, plan.hold_up_s).unwrap();
    let clean = step1_estimate_rs(&stream, 0.02, &Tuning::for_cell(&quiet)).unwrap();
    let clean_rel = (clean.final_r_s - spec.ecm.r_s).abs() / spec.ecm.r_s;

    let dt = start.elapsed().as_secs_f64();
    let pass = med_rel < 0.05 && clean_rel < 0.02 && dt < 30.0;
    verdict(
        2,
        "R_s median within 5% over 20 seeds; noiseless within 2% in 200 s",
        pass,
        &format!("median rel {med_rel:.4}, noiseless rel {clean_rel:.4}, {dt:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: Step-2 RC pair
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_step2_rc() {
    let spec = CellSpec::samsung_18650_20c();
    let plan = StepPlan::step2_default(&spec);
    let tuning = Tuning::for_cell(&spec);
    let profile = plan.profile().unwrap();
    let guesses = InitialGuesses::default();
    let gain_init =
        spec.ocv.slope(guesses.soc).unwrap() * spec.eta / (3600.0 * guesses.q_b);

    let mut rt_err = Vec::new();
    let mut tau_err = Vec::new();
    for seed in 0..20u64 {
        let trace = simulate(&spec, &profile, BatteryState::new(0.0, 0.8), seed).unwrap();
        let stream = filter_trace(&trace, plan.f_3db_hz, plan.hold_up_s).unwrap();
        let r = step2_estimate_rc(
            &stream,
            spec.ecm.r_s,
            (guesses.r_t, guesses.tau),
            gain_init,
            &tuning,
        )
        .unwrap();
        rt_err.push((r.final_r_t - spec.ecm.r_t).abs() / spec.ecm.r_t);
        tau_err.push((r.final_tau - spec.ecm.tau).abs() / spec.ecm.tau);
    }
    let rt_med = median(&rt_err);
    let tau_med = median(&tau_err);

    // Noiseless measurements, exact init: a fixed point within 1%. Exact
    // init means the prior asserts the truth, so the init covariances are
    // tightened to match; the assumed measurement noise stays at the
    // standard value so residual OCV-curvature leakage cannot be chased.
    let mut quiet = spec.clone();
    quiet.sigma_v = 0.0;
    let mut exact_tuning = tuning;
    exact_tuning.init_std_r_t = 0.01 * quiet.ecm.r_t;
    exact_tuning.init_std_tau = 0.01 * quiet.ecm.tau;
    let trace = simulate(&quiet, &profile, BatteryState::new(0.0, 0.8), 0).unwrap();
    let stream = filter_trace(&trace, plan.f_3db_hz, plan.hold_up_s).unwrap();
    let exact = step2_estimate_rc(
        &stream,
        quiet.ecm.r_s,
        (quiet.ecm.r_t, quiet.ecm.tau),
        spec.ocv.slope(0.8).unwrap() * quiet.eta / (3600.0 * quiet.q_b),
        &exact_tuning,
    )
    .unwrap();
    let fp_rt = (exact.final_r_t - quiet.ecm.r_t).abs() / quiet.ecm.r_t;
    let fp_tau = (exact.final_tau - quiet.ecm.tau).abs() / quiet.ecm.tau;

    let pass = rt_med < 0.15 && tau_med < 0.15 && fp_rt < 0.01 && fp_tau < 0.01;
    verdict(
        3,
        "R_t and tau medians within 15%; noiseless exact-init fixed point within 1%",
        pass,
        &format!("rt med {rt_med:.4}, tau med {tau_med:.4}, fixed point rt {fp_rt:.4} tau {fp_tau:.4}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: Step-3 SoC/capacity headline claim
// ---------------------------------------------------------------------------

fn check_step3(spec: &CellSpec, seed: u64) -> (bool, String) {
    let start = Instant::now();
    let plan = SequentialPlan::default_for(spec);
    let tuning = Tuning::for_cell(spec);
    let guesses = InitialGuesses::default(); // soc 0.5, q_b 2.0 Ah
    let drive =
        drive_cycle_profile(1.0, 3600.0, spec.c_rate_amps(1.0), seed ^ 0xD1).unwrap();
    let res = run_sequential(
        spec,
        &plan,
        &drive,
        BatteryState::new(0.0, 0.8),
        &guesses,
        &tuning,
        seed,
    )
    .unwrap();

    let errors = res.soc_error();
    let conv = convergence_time(&errors, drive.t_s, 0.01, 120.0);
    let qb_rel = (res.q_b_hat - spec.q_b).abs() / spec.q_b;
    let dt = start.elapsed().as_secs_f64();

    let (converged, max_after) = match conv {
        Some(t) => {
            let k = (t / drive.t_s) as usize;
            let max = errors[k..].iter().fold(0.0f64, |m, e| m.max(e.abs()));
            (t <= 600.0, max)
        }
        None => (false, f64::NAN),
    };
    let pass = converged && max_after < 0.01 && qb_rel < 0.02 && dt < 60.0;
    let detail = format!(
        "{}: conv {:?}s, max |soc err| after {max_after:.4}, q_b rel {qb_rel:.4}, {dt:.1}s",
        spec.name, conv
    );
    (pass, detail)
}

#[test]
fn criterion_4_step3_soc_soh() {
    let (p20, d20) = check_step3(&CellSpec::samsung_18650_20c(), 1);
    let (p40, d40) = check_step3(&CellSpec::samsung_18650_40c(), 1);
    verdict(
        4,
        "SoC within 1% after <=600 s convergence; Q_b within 2% from 2.0 Ah; both presets",
        p20 && p40,
        &format!("{d20}; {d40}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: sequential vs concurrent
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_sequential_beats_concurrent() {
    let cfg = ScenarioConfig::default_20c();
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_compare(&cfg, 0, dir.path()).unwrap();

    let pass = summary.sequential_wins
        && summary.conc_median_static_soc_error >= 0.015
        && summary.conc_rt_tau_failures * 2 >= summary.seeds;
    verdict(
        5,
        "sequential median SoC error beats concurrent; concurrent static error >= 1.5% and R_t/tau fails in >= 50% of seeds",
        pass,
        &format!(
            "seq {:.4}, conc {:.4}, conc rt/tau failures {}/{}",
            summary.seq_median_static_soc_error,
            summary.conc_median_static_soc_error,
            summary.conc_rt_tau_failures,
            summary.seeds
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: estimator engine oracles
// ---------------------------------------------------------------------------

mod engine_oracle {
    use battkit_core::estimator::{
        dekf_step, ekf_predict, ekf_update, GaussianEstimate, ModelCallbacks, NoiseConfig,
    };
    use nalgebra::{DMatrix, DVector};

    /// Y = theta * u, no state.
    pub struct ScalarLinear;
    impl ModelCallbacks for ScalarLinear {
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn transition(&self, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn output(&self, _: &DVector<f64>, th: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, th[0] * u[0])
        }
        fn state_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
        fn output_state_jacobian(
            &self,
            _: &DVector<f64>,
            _: &DVector<f64>,
            _: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn output_param_jacobian(
            &self,
            _: &DVector<f64>,
            _: &DVector<f64>,
            u: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, u[0])
        }
    }

    /// X' = theta*X + u, Y = X.
    pub struct ScalarToy;
    impl ModelCallbacks for ScalarToy {
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn transition(&self, x: &DVector<f64>, th: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, th[0] * x[0] + u[0])
        }
        fn output(&self, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn state_jacobian(&self, _: &DVector<f64>, th: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, th[0])
        }
        fn output_state_jacobian(
            &self,
            _: &DVector<f64>,
            _: &DVector<f64>,
            _: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
        fn output_param_jacobian(
            &self,
            x: &DVector<f64>,
            _: &DVector<f64>,
            _: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, x[0])
        }
    }

    /// EKF on a linear-Gaussian scalar system against the closed-form Kalman
    /// recursion, 100 steps. Returns the worst deviation and worst symmetry /
    /// eigenvalue defects.
    pub fn ekf_vs_analytic() -> (f64, f64, f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let truth = 0.42;
        let (q, r) = (1e-5, 0.09);
        let mut est = GaussianEstimate::scalar(0.0, 1.0);
        let noise = NoiseConfig::scalar(q, 0.0, r);
        let x = DVector::zeros(1);

        let (mut mean, mut cov) = (0.0f64, 1.0f64);
        let (mut worst, mut sym, mut eig) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..100 {
            let u: f64 = rng.gen_range(-2.0..2.0);
            let y = truth * u + 0.3 * rng.gen_range(-1.0..1.0_f64);

            // analytic recursion
            cov += q;
            let k = cov * u / (u * u * cov + r);
            mean += k * (y - mean * u);
            cov *= 1.0 - k * u;

            est = ekf_predict(&est, &noise).unwrap();
            let (post, _) = ekf_update(
                &est,
                &DVector::from_element(1, y),
                &ScalarLinear,
                &noise,
                &x,
                &DVector::from_element(1, u),
            )
            .unwrap();
            est = post;
            worst = worst
                .max((est.mean[0] - mean).abs())
                .max((est.cov[(0, 0)] - cov).abs());
            sym = sym.max(est.symmetry_defect());
            eig = eig.min(est.min_eigenvalue());
        }
        (worst, sym, eig)
    }

    /// One dual-filter step against hand arithmetic. Returns worst deviation.
    pub fn dekf_vs_hand() -> f64 {
        let theta0 = GaussianEstimate::scalar(0.5, 0.2);
        let x0 = GaussianEstimate::scalar(1.0, 0.3);
        let noise = NoiseConfig::scalar(0.01, 0.02, 0.1);
        let u = DVector::from_element(1, 0.4);
        let y = DVector::from_element(1, 1.2);

        // theta_prior 0.5 / 0.21; x_pred 0.9; p_x_prior 0.095; innov 0.3
        let k_x = 0.095 / 0.195;
        let x_post = 0.9 + k_x * 0.3;
        let p_x = (1.0 - k_x) * 0.095;
        let k_t = 0.21 * 0.9 / 0.2701;
        let theta_post = 0.5 + k_t * 0.3;
        let p_theta = (1.0 - k_t * 0.9) * 0.21;

        let s = dekf_step(&theta0, &x0, &y, &u, &ScalarToy, &noise).unwrap();
        (s.state.mean[0] - x_post)
            .abs()
            .max((s.state.cov[(0, 0)] - p_x).abs())
            .max((s.param.mean[0] - theta_post).abs())
            .max((s.param.cov[(0, 0)] - p_theta).abs())
    }

    /// Run the dual filter for a while and track covariance health.
    pub fn covariance_health() -> (f64, f64) {
        let mut theta = GaussianEstimate::scalar(0.6, 0.5);
        let mut x = GaussianEstimate::scalar(0.0, 1.0);
        let noise = NoiseConfig::scalar(1e-4, 1e-3, 0.05);
        let (mut sym, mut eig) = (0.0f64, 0.0f64);
        for k in 0..200 {
            let u = DVector::from_element(1, (k as f64 * 0.4).sin());
            let y = DVector::from_element(1, (k as f64 * 0.15).cos());
            let s = dekf_step(&theta, &x, &y, &u, &ScalarToy, &noise).unwrap();
            theta = s.param;
            x = s.state;
            sym = sym.max(theta.symmetry_defect()).max(x.symmetry_defect());
            eig = eig.min(theta.min_eigenvalue()).min(x.min_eigenvalue());
        }
        (sym, eig)
    }
}

#[test]
fn criterion_6_estimator_oracles() {
    let (worst, sym1, eig1) = engine_oracle::ekf_vs_analytic();
    let dekf_dev = engine_oracle::dekf_vs_hand();
    let (sym2, eig2) = engine_oracle::covariance_health();

    let pass = worst < 1e-10
        && dekf_dev < 1e-10
        && sym1.max(sym2) < 1e-12
        && eig1.min(eig2) > -1e-12;
    verdict(
        6,
        "EKF matches analytic Kalman to 1e-10 over 100 steps; dekf_step matches hand arithmetic; covariances symmetric/PSD",
        pass,
        &format!("ekf dev {worst:.2e}, dekf dev {dekf_dev:.2e}, sym {:.2e}, min eig {:.2e}",
            sym1.max(sym2), eig1.min(eig2)),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: high-pass filter properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_filter_properties() {
    let mut pass = true;
    let mut detail = String::new();

    for (f_3db, t_s) in [(0.05, 0.1), (0.002, 1.0)] {
        let design = design_highpass(f_3db, t_s).unwrap();

        // DC rejection: step response below 1% of the step after 5 Tc.
        let t_c = design.time_constant();
        let n = (5.0 * t_c / t_s).ceil() as usize + 1;
        let mut f = design.clone().with_zero_state();
        let y = f.filter_all(&vec![1.0; n]);
        let dc = y.last().unwrap().abs();

        // -3 dB point, independently evaluated on the unit circle.
        let w = TAU * f_3db * t_s;
        let (c, s) = (w.cos(), w.sin());
        let k = (std::f64::consts::PI * f_3db * t_s).tan();
        let num = ((1.0 - c).powi(2) + s.powi(2)).sqrt();
        let den = ((1.0 + k + (k - 1.0) * c).powi(2) + ((k - 1.0) * s).powi(2)).sqrt();
        let gain = num / den;
        let rel_3db = (gain - std::f64::consts::FRAC_1_SQRT_2).abs()
            / std::f64::consts::FRAC_1_SQRT_2;

        // Linearity: filter(a x1 + b x2) == a filter(x1) + b filter(x2).
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x1: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.3);
        let mixed: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let y1 = design.clone().with_zero_state().filter_all(&x1);
        let y2 = design.clone().with_zero_state().filter_all(&x2);
        let ym = design.clone().with_zero_state().filter_all(&mixed);
        let lin_dev = ym
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (a * y1[i] + b * y2[i])).abs())
            .fold(0.0f64, f64::max);

        pass &= dc < 0.01 && rel_3db < 1e-4 && lin_dev < 1e-12;
        detail.push_str(&format!(
            "f3db={f_3db}: dc {dc:.2e}, 3dB rel {rel_3db:.2e}, lin {lin_dev:.2e}; "
        ));
    }
    verdict(
        7,
        "DC rejection <1% after 5 Tc; -3 dB within 1e-4; linear to 1e-12 for both designs",
        pass,
        detail.trim_end_matches("; "),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: CLI determinism
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_battkit"))
        .args(args)
        .output()
        .expect("spawn battkit")
}

/// Byte-compare every .csv in two directories; JSON summaries are compared
/// after dropping the timestamp field.
fn dirs_match(a: &Path, b: &Path) -> bool {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in &names {
        let pa = std::fs::read(a.join(name)).unwrap();
        let pb = std::fs::read(b.join(name)).unwrap();
        if name.ends_with(".json") {
            let strip = |bytes: &[u8]| -> serde_json::Value {
                let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                v.as_object_mut().unwrap().remove("generated_unix_s");
                v
            };
            if strip(&pa) != strip(&pb) {
                return false;
            }
        } else if pa != pb {
            return false;
        }
    }
    !names.is_empty()
}

#[test]
fn criterion_8_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("scenario.toml");
    std::fs::write(
        &cfg_path,
        "[cell]\npreset = \"samsung-18650-20C\"\n\n[drive]\nduration_s = 900.0\n\n[compare]\nseeds = 4\n",
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let mut pass = true;
    let mut detail = String::new();
    for verb in ["simulate", "estimate", "analyze", "compare"] {
        let out_a = dir.path().join(format!("{verb}-a"));
        let out_b = dir.path().join(format!("{verb}-b"));
        for out in [&out_a, &out_b] {
            let st = run_cli(&[verb, "--config", cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
            pass &= st.status.success();
        }
        let same = dirs_match(&out_a, &out_b);
        pass &= same;
        detail.push_str(&format!("{verb} {}; ", if same { "identical" } else { "DIFFERS" }));
    }
    verdict(
        8,
        "repeated runs with identical config and seed are byte-identical",
        pass,
        detail.trim_end_matches("; "),
    );
}

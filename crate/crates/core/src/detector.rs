//! Neyman–Pearson energy detector: Q-function pair, threshold, decision
//! rule and detection/false-alarm evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{self, derive_seed, Hypothesis, NoisePower, SnrSpec};

/// Standard Gaussian upper tail `Q(x) = erfc(x/√2)/2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

// Acklam's rational approximation of the lower-tail normal quantile.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Initial guess for `Φ⁻¹(p)`, `p ∈ (0, 0.5]`. Relative error ~1e-9.
fn lower_quantile_guess(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * libm::log(p)).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse of [`q_function`] on `(0, 1)`.
///
/// Rational initial guess, then two Newton steps against `q_function`.
/// The upper half is mirrored (`Q⁻¹(p) = −Q⁻¹(1−p)`, exact for `p ≥ 0.5`)
/// so that Newton always works on the accurate small tail.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(p));
    }
    if p > 0.5 {
        return Ok(-q_inverse_upper(1.0 - p));
    }
    Ok(q_inverse_upper(p))
}

fn q_inverse_upper(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let mut x = -lower_quantile_guess(p);
    for _ in 0..2 {
        let density = std_normal_pdf(x);
        if density == 0.0 {
            break;
        }
        x += (q_function(x) - p) / density;
    }
    x
}

/// Target false-alarm probability `P_f*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TargetFalseAlarm(f64);

impl TargetFalseAlarm {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(TargetFalseAlarm(value))
        } else {
            Err(Error::Domain(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TargetFalseAlarm {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        TargetFalseAlarm::new(value)
    }
}

impl From<TargetFalseAlarm> for f64 {
    fn from(value: TargetFalseAlarm) -> f64 {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyThreshold {
    pub eta_mw: f64,
    pub n: usize,
    pub pf_target: TargetFalseAlarm,
    pub noise: NoisePower,
    /// Set when `eta_mw <= 0`: every frame is then declared present.
    pub always_present: bool,
}

/// `η = (1 + Q⁻¹(P_f*)/√N)·σ_n²`. Nonpositive thresholds are kept as-is.
pub fn np_threshold(pf_target: TargetFalseAlarm, n: usize, noise: NoisePower) -> Result<EnergyThreshold> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let q = q_inverse(pf_target.value())?;
    let eta_mw = (1.0 + (1.0 / n as f64).sqrt() * q) * noise.linear_mw();
    Ok(EnergyThreshold {
        eta_mw,
        n,
        pf_target,
        noise,
        always_present: eta_mw <= 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Declare H1.
    Present,
    /// Declare H0.
    Absent,
}

impl Decision {
    pub fn from_hypothesis(h: Hypothesis) -> Self {
        match h {
            Hypothesis::H0 => Decision::Absent,
            Hypothesis::H1 => Decision::Present,
        }
    }
}

/// Ties (`statistic == η`) are declared present.
pub fn detect(statistic: f64, threshold: &EnergyThreshold) -> Decision {
    if statistic >= threshold.eta_mw {
        Decision::Present
    } else {
        Decision::Absent
    }
}

/// Empirical detection and false-alarm rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub pd: f64,
    pub pf: f64,
    /// Trials per hypothesis.
    pub trials: u64,
    /// Worst-case (p = 1/2) normal-approximation 95% half-width.
    pub half_width: f64,
}

pub fn binomial_half_width(trials: u64) -> f64 {
    1.96 * (0.25 / trials as f64).sqrt()
}

impl RatePair {
    pub fn from_counts(detections: u64, false_alarms: u64, trials: u64) -> Self {
        RatePair {
            pd: detections as f64 / trials as f64,
            pf: false_alarms as f64 / trials as f64,
            trials,
            half_width: binomial_half_width(trials),
        }
    }
}

/// How Monte Carlo trials are scheduled. Both produce identical counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

const LANE_H0: u64 = 0;
const LANE_H1: u64 = 1;

/// Seed of trial `index` under `truth` for a run seeded with `seed`.
pub fn trial_seed(seed: u64, truth: Hypothesis, index: u64) -> u64 {
    let lane = match truth {
        Hypothesis::H0 => LANE_H0,
        Hypothesis::H1 => LANE_H1,
    };
    derive_seed(seed, lane, index)
}

#[derive(Clone, Copy)]
struct TrialSetup {
    noise: NoisePower,
    snr: SnrSpec,
    n: usize,
    seed: u64,
}

impl TrialSetup {
    fn declares_present(&self, truth: Hypothesis, index: u64, threshold: &EnergyThreshold) -> bool {
        let stat = signal::streamed_energy(
            truth,
            self.noise,
            self.snr,
            self.n,
            trial_seed(self.seed, truth, index),
        );
        detect(stat, threshold) == Decision::Present
    }
}

fn count_present(
    exec: Execution,
    setup: TrialSetup,
    truth: Hypothesis,
    threshold: &EnergyThreshold,
    trials: u64,
) -> u64 {
    match exec {
        Execution::Sequential => (0..trials)
            .filter(|&t| setup.declares_present(truth, t, threshold))
            .count() as u64,
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..trials)
                .into_par_iter()
                .filter(|&t| setup.declares_present(truth, t, threshold))
                .count() as u64
        }
    }
}

fn check_trials(trials: u64) -> Result<()> {
    if trials == 0 {
        Err(Error::invalid("trial count must be at least 1"))
    } else {
        Ok(())
    }
}

pub fn monte_carlo_rates(
    noise: NoisePower,
    snr: SnrSpec,
    n: usize,
    pf_target: TargetFalseAlarm,
    trials: u64,
    seed: u64,
) -> Result<RatePair> {
    monte_carlo_rates_with(Execution::default(), noise, snr, n, pf_target, trials, seed)
}

/// Runs `trials` independent frames under each hypothesis through the
/// Neyman–Pearson detector. Trial `t` under hypothesis `h` is seeded with
/// [`trial_seed`]`(seed, h, t)`, so results do not depend on `exec`.
pub fn monte_carlo_rates_with(
    exec: Execution,
    noise: NoisePower,
    snr: SnrSpec,
    n: usize,
    pf_target: TargetFalseAlarm,
    trials: u64,
    seed: u64,
) -> Result<RatePair> {
    check_trials(trials)?;
    let threshold = np_threshold(pf_target, n, noise)?;
    let setup = TrialSetup { noise, snr, n, seed };
    let detections = count_present(exec, setup, Hypothesis::H1, &threshold, trials);
    let false_alarms = count_present(exec, setup, Hypothesis::H0, &threshold, trials);
    Ok(RatePair::from_counts(detections, false_alarms, trials))
}

/// H0-only half of [`monte_carlo_rates`]: the same false-alarm rate it
/// would report, without simulating H1 frames.
pub fn monte_carlo_false_alarm(
    noise: NoisePower,
    n: usize,
    pf_target: TargetFalseAlarm,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    check_trials(trials)?;
    let threshold = np_threshold(pf_target, n, noise)?;
    let setup = TrialSetup {
        noise,
        snr: SnrSpec::from_linear(1.0)?,
        n,
        seed,
    };
    let hits = count_present(Execution::default(), setup, Hypothesis::H0, &threshold, trials);
    Ok(hits as f64 / trials as f64)
}

/// Gaussian-approximation detection probability for the NP threshold:
/// `Q((Q⁻¹(P_f*) − γ√N) / (1 + γ))`.
pub fn theoretical_pd(snr: SnrSpec, n: usize, pf_target: TargetFalseAlarm) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let g = snr.linear();
    let q = q_inverse(pf_target.value())?;
    Ok(q_function((q - g * (n as f64).sqrt()) / (1.0 + g)))
}

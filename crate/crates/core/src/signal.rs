//! Baseband observations for the binary spectrum-sensing hypothesis test.
//!
//! Every received sample is `x(n) = w(n)` under H0 and `x(n) = s(n) + w(n)`
//! under H1, where `w` and `s` are independent circular complex Gaussians.
//! Powers are carried in linear milliwatts; dBm only appears at I/O edges.
//!
//! Sample generation is a pure function of `(truth, noise, snr, n, seed)`.
//! The stream is ChaCha8 seeded with the frame seed, read as four 64-bit
//! words per sample (two for the noise pair, two for the signal pair, the
//! latter consumed but unused under H0), mapped to `(0, 1]` uniforms and
//! turned into normals with Box–Muller. Transcendentals come from `libm`
//! so the bits do not depend on the platform's math library. Because the
//! stream is read sequentially, frames sharing a seed share their prefix.

use std::fmt::Write as _;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Primary signal absent.
    H0,
    /// Primary signal present.
    H1,
}

impl Hypothesis {
    pub fn as_str(self) -> &'static str {
        match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
        }
    }
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `10^(dbm/10)` milliwatts.
pub fn dbm_to_linear(dbm: f64) -> f64 {
    libm::pow(10.0, dbm / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * libm::log10(linear)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePower {
    linear_mw: f64,
    dbm: f64,
}

impl NoisePower {
    pub fn from_dbm(dbm: f64) -> Result<Self> {
        if !dbm.is_finite() {
            return Err(Error::invalid(format!("noise power {dbm} dBm is not finite")));
        }
        Self::checked(dbm_to_linear(dbm), dbm)
    }

    pub fn from_linear(linear_mw: f64) -> Result<Self> {
        if !(linear_mw > 0.0 && linear_mw.is_finite()) {
            return Err(Error::invalid(format!(
                "noise power must be positive and finite, got {linear_mw} mW"
            )));
        }
        Self::checked(linear_mw, linear_to_db(linear_mw))
    }

    fn checked(linear_mw: f64, dbm: f64) -> Result<Self> {
        if linear_mw > 0.0 && linear_mw.is_finite() {
            Ok(NoisePower { linear_mw, dbm })
        } else {
            Err(Error::invalid(format!("noise power {dbm} dBm underflows")))
        }
    }

    pub fn linear_mw(&self) -> f64 {
        self.linear_mw
    }

    pub fn dbm(&self) -> f64 {
        self.dbm
    }
}

/// Signal-to-noise ratio `γ = σ_s² / σ_n²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSpec {
    db: f64,
    linear: f64,
}

impl SnrSpec {
    pub fn from_db(db: f64) -> Result<Self> {
        if !db.is_finite() {
            return Err(Error::invalid(format!("SNR {db} dB is not finite")));
        }
        let linear = dbm_to_linear(db);
        if !(linear > 0.0 && linear.is_finite()) {
            return Err(Error::invalid(format!("SNR {db} dB is out of range")));
        }
        Ok(SnrSpec { db, linear })
    }

    pub fn from_linear(linear: f64) -> Result<Self> {
        if !(linear > 0.0 && linear.is_finite()) {
            return Err(Error::invalid(format!(
                "linear SNR must be positive and finite, got {linear}"
            )));
        }
        Ok(SnrSpec {
            db: linear_to_db(linear),
            linear,
        })
    }

    pub fn db(&self) -> f64 {
        self.db
    }

    pub fn linear(&self) -> f64 {
        self.linear
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexSample {
    pub re: f64,
    pub im: f64,
}

impl ComplexSample {
    pub fn new(re: f64, im: f64) -> Self {
        ComplexSample { re, im }
    }

    /// `|x|²` in mW.
    #[inline]
    pub fn energy(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingFrame {
    pub samples: Vec<ComplexSample>,
    pub truth: Hypothesis,
    pub noise: NoisePower,
    pub snr: SnrSpec,
    pub seed: u64,
}

/// Mixes a base seed with a lane tag and an index (SplitMix64 finalizer).
/// Used wherever a run needs many independent, reproducible sub-seeds.
pub fn derive_seed(base: u64, lane: u64, index: u64) -> u64 {
    let mut z = base
        ^ lane.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TWO_PI: f64 = std::f64::consts::TAU;
const INV_2_53: f64 = 1.0 / 9_007_199_254_740_992.0;

#[inline]
fn unit_open_closed(word: u64) -> f64 {
    ((word >> 11) as f64 + 1.0) * INV_2_53
}

#[inline]
fn box_muller(u1: u64, u2: u64) -> (f64, f64) {
    let r = (-2.0 * libm::log(unit_open_closed(u1))).sqrt();
    let theta = TWO_PI * unit_open_closed(u2);
    (r * libm::cos(theta), r * libm::sin(theta))
}

/// Lazily generated samples of one frame.
pub struct SampleStream {
    rng: ChaCha8Rng,
    remaining: usize,
    noise_scale: f64,
    signal_scale: Option<f64>,
}

impl SampleStream {
    pub fn new(truth: Hypothesis, noise: NoisePower, snr: SnrSpec, n: usize, seed: u64) -> Self {
        let noise_var = noise.linear_mw();
        let signal_scale = match truth {
            Hypothesis::H0 => None,
            Hypothesis::H1 => Some((snr.linear() * noise_var / 2.0).sqrt()),
        };
        SampleStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            remaining: n,
            noise_scale: (noise_var / 2.0).sqrt(),
            signal_scale,
        }
    }
}

impl Iterator for SampleStream {
    type Item = ComplexSample;

    fn next(&mut self) -> Option<ComplexSample> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let (w_re, w_im) = box_muller(self.rng.next_u64(), self.rng.next_u64());
        let s1 = self.rng.next_u64();
        let s2 = self.rng.next_u64();
        let mut sample = ComplexSample::new(w_re * self.noise_scale, w_im * self.noise_scale);
        if let Some(scale) = self.signal_scale {
            let (s_re, s_im) = box_muller(s1, s2);
            sample.re += s_re * scale;
            sample.im += s_im * scale;
        }
        Some(sample)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for SampleStream {}

fn check_frame_params(truth: Hypothesis, noise: NoisePower, snr: SnrSpec, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("frame length must be at least 1"));
    }
    if !(noise.linear_mw() > 0.0) {
        return Err(Error::invalid("noise power must be positive"));
    }
    if truth == Hypothesis::H1 && !(snr.linear() > 0.0) {
        return Err(Error::invalid("SNR must be positive under H1"));
    }
    Ok(())
}

pub fn generate_frame(
    truth: Hypothesis,
    noise: NoisePower,
    snr: SnrSpec,
    n: usize,
    seed: u64,
) -> Result<SensingFrame> {
    check_frame_params(truth, noise, snr, n)?;
    Ok(SensingFrame {
        samples: SampleStream::new(truth, noise, snr, n, seed).collect(),
        truth,
        noise,
        snr,
        seed,
    })
}

#[inline]
fn mean_energy<I: Iterator<Item = ComplexSample>>(samples: I, n: usize) -> f64 {
    samples.fold(0.0, |acc, s| acc + s.energy()) / n as f64
}

/// `(1/N) Σ |x(n)|²`.
pub fn empirical_energy(frame: &SensingFrame) -> f64 {
    mean_energy(frame.samples.iter().copied(), frame.samples.len())
}

/// Test statistic of the frame `generate_frame` would build, without
/// materializing the samples. Bit-identical to `empirical_energy` on it.
pub(crate) fn streamed_energy(
    truth: Hypothesis,
    noise: NoisePower,
    snr: SnrSpec,
    n: usize,
    seed: u64,
) -> f64 {
    mean_energy(SampleStream::new(truth, noise, snr, n, seed), n)
}

fn push_f64(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

impl SensingFrame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Regenerates the frame from its recorded parameters.
    pub fn regenerate(&self) -> Result<SensingFrame> {
        generate_frame(self.truth, self.noise, self.snr, self.samples.len(), self.seed)
    }

    /// Export format: keys `truth, noise_dbm, snr_db, seed, samples` in that
    /// order, every float printed with 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::with_capacity(64 + self.samples.len() * 52);
        out.push_str("{\"truth\": \"");
        out.push_str(self.truth.as_str());
        out.push_str("\", \"noise_dbm\": ");
        push_f64(&mut out, self.noise.dbm());
        out.push_str(", \"snr_db\": ");
        match self.truth {
            Hypothesis::H0 => out.push_str("null"),
            Hypothesis::H1 => push_f64(&mut out, self.snr.db()),
        }
        let _ = write!(out, ", \"seed\": {}, \"samples\": [", self.seed);
        for (i, s) in self.samples.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push('[');
            push_f64(&mut out, s.re);
            out.push_str(", ");
            push_f64(&mut out, s.im);
            out.push(']');
        }
        out.push_str("]}");
        out
    }

    pub fn from_json(text: &str) -> Result<SensingFrame> {
        #[derive(Deserialize)]
        struct Raw {
            truth: Hypothesis,
            noise_dbm: f64,
            snr_db: Option<f64>,
            seed: u64,
            samples: Vec<[f64; 2]>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| Error::json("frame", e))?;
        if raw.samples.is_empty() {
            return Err(Error::invalid("frame has no samples"));
        }
        let snr = match raw.snr_db {
            Some(db) => SnrSpec::from_db(db)?,
            None if raw.truth == Hypothesis::H0 => SnrSpec::from_db(0.0)?,
            None => return Err(Error::invalid("H1 frame without snr_db")),
        };
        Ok(SensingFrame {
            samples: raw
                .samples
                .into_iter()
                .map(|[re, im]| ComplexSample::new(re, im))
                .collect(),
            truth: raw.truth,
            noise: NoisePower::from_dbm(raw.noise_dbm)?,
            snr,
            seed: raw.seed,
        })
    }
}

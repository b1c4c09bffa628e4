//! IIR filter design, zero-phase application and decimation.
//!
//! Filters are designed in zero/pole/gain form and kept as cascaded
//! second-order sections for application; the expanded transfer-function
//! polynomials are carried alongside for export and inspection.
//!
//! Butterworth filters are not linear-phase. Zero phase comes from running
//! the filter forward and then backward ([`filtfilt`]), which squares the
//! magnitude response.

use std::f64::consts::PI;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Recording, TagEvent};

type C64 = Complex<f64>;

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: C64) -> C64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form II state for a unit step held forever.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let [_, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        [b1 + b2 - (a1 + a2) * y, b2 - a2 * y]
    }

    fn poles(&self) -> [C64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = C64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FilterDesign {
    ButterworthBandpass {
        low_hz: f64,
        high_hz: f64,
        order: usize,
        sample_rate: f64,
    },
    Notch {
        center_hz: f64,
        q: f64,
        sample_rate: f64,
    },
    Cascade {
        stages: Vec<FilterDesign>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirFilter {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub sections: Vec<Biquad>,
    pub design: FilterDesign,
}

impl IirFilter {
    fn from_sections(sections: Vec<Biquad>, design: FilterDesign) -> Result<Self> {
        let mut b = vec![1.0];
        let mut a = vec![1.0];
        for s in &sections {
            b = poly_mul(&b, &s.b);
            a = poly_mul(&a, &s.a);
        }
        let filter = IirFilter {
            b,
            a,
            sections,
            design,
        };
        let rho = filter.max_pole_modulus();
        if rho.is_nan() || rho >= 1.0 {
            return Err(Error::Numerical(format!(
                "designed filter is unstable (max pole modulus {rho})"
            )));
        }
        Ok(filter)
    }

    pub fn sample_rate(&self) -> f64 {
        fn rate(d: &FilterDesign) -> f64 {
            match d {
                FilterDesign::ButterworthBandpass { sample_rate, .. }
                | FilterDesign::Notch { sample_rate, .. } => *sample_rate,
                FilterDesign::Cascade { stages } => stages.first().map_or(f64::NAN, rate),
            }
        }
        rate(&self.design)
    }

    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> C64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate();
        let z_inv = C64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(C64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<C64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn max_pole_modulus(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Number of transfer-function coefficients (`order + 1`).
    pub fn len(&self) -> usize {
        2 * self.sections.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// Odd-reflection padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (self.len() - 1)
    }

    /// Series connection `self` then `other`.
    pub fn cascade(&self, other: &IirFilter) -> Result<IirFilter> {
        let mut sections = self.sections.clone();
        sections.extend_from_slice(&other.sections);
        IirFilter::from_sections(
            sections,
            FilterDesign::Cascade {
                stages: vec![self.design.clone(), other.design.clone()],
            },
        )
    }
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &x) in p.iter().enumerate() {
        for (j, &y) in q.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Butterworth bandpass of design order `order` (2·order poles), via the
/// analog prototype, lowpass-to-bandpass transform and bilinear transform
/// with frequency prewarping.
pub fn design_bandpass(low_hz: f64, high_hz: f64, order: usize, sample_rate: f64) -> Result<IirFilter> {
    let nyquist = sample_rate / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::InvalidArgument(format!(
            "band edges must satisfy 0 < low < high < fs/2, got {low_hz}..{high_hz} Hz at fs {sample_rate}"
        )));
    }
    if order == 0 {
        return Err(Error::InvalidArgument("filter order must be at least 1".into()));
    }
    // Normalized design on fs = 2 (bilinear constant 2·fs = 4).
    let fs2 = 4.0;
    let warp = |f: f64| fs2 * (PI * (f / nyquist) / 2.0).tan();
    let (w1, w2) = (warp(low_hz), warp(high_hz));
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();

    let n = order as f64;
    let proto: Vec<C64> = (0..order)
        .map(|k| {
            let m = -(n - 1.0) + 2.0 * k as f64;
            -C64::from_polar(1.0, PI * m / (2.0 * n))
        })
        .collect();

    let mut analog_poles = Vec::with_capacity(2 * order);
    for p in &proto {
        let pl = p * (bw / 2.0);
        let root = (pl * pl - w0 * w0).sqrt();
        analog_poles.push(pl + root);
        analog_poles.push(pl - root);
    }
    // `order` analog zeros at s = 0 map to z = 1, the remaining `order` at
    // infinity map to z = -1.
    let gain_analog = bw.powi(order as i32);
    let num = C64::new(fs2, 0.0).powu(order as u32);
    let den = analog_poles
        .iter()
        .fold(C64::new(1.0, 0.0), |acc, p| acc * (fs2 - p));
    let gain = gain_analog * (num / den).re;
    let digital_poles: Vec<C64> = analog_poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();

    let sections = pair_poles(&digital_poles)
        .into_iter()
        .enumerate()
        .map(|(i, a)| Biquad {
            b: if i == 0 {
                [gain, 0.0, -gain]
            } else {
                [1.0, 0.0, -1.0]
            },
            a,
        })
        .collect();
    IirFilter::from_sections(
        sections,
        FilterDesign::ButterworthBandpass {
            low_hz,
            high_hz,
            order,
            sample_rate,
        },
    )
}

/// Groups poles into real second-order denominators: conjugate pairs
/// first, then leftover real poles two at a time.
fn pair_poles(poles: &[C64]) -> Vec<[f64; 3]> {
    let tol = 1e-10;
    let mut upper: Vec<C64> = poles.iter().copied().filter(|p| p.im > tol).collect();
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
    real.sort_by(f64::total_cmp);
    let mut out: Vec<[f64; 3]> = upper
        .iter()
        .map(|p| [1.0, -2.0 * p.re, p.norm_sqr()])
        .collect();
    for pair in real.chunks(2) {
        match *pair {
            [r1, r2] => out.push([1.0, -(r1 + r2), r1 * r2]),
            [r] => out.push([1.0, -r, 0.0]),
            _ => unreachable!(),
        }
    }
    out
}

/// Second-order notch with −3 dB bandwidth `center_hz / q`.
pub fn design_notch(center_hz: f64, q: f64, sample_rate: f64) -> Result<IirFilter> {
    if !(center_hz > 0.0 && center_hz < sample_rate / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "notch frequency {center_hz} Hz outside (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("notch Q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * center_hz / sample_rate;
    let bw = w0 / q;
    // half-power edges
    let gb = std::f64::consts::FRAC_1_SQRT_2;
    let beta = ((1.0 - gb * gb).sqrt() / gb) * (bw / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    let section = Biquad {
        b: [gain, -2.0 * gain * c, gain],
        a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0],
    };
    IirFilter::from_sections(
        vec![section],
        FilterDesign::Notch {
            center_hz,
            q,
            sample_rate,
        },
    )
}

fn sosfilt(sections: &[Biquad], x: &mut [f64], state: &mut [[f64; 2]]) {
    for (s, z) in sections.iter().zip(state.iter_mut()) {
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        let [mut z1, mut z2] = *z;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
        *z = [z1, z2];
    }
}

/// Initial section states for a constant input of 1, accounting for the
/// gain of the preceding sections.
fn cascade_step_state(sections: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let z = s.step_state();
            let out = [z[0] * scale, z[1] * scale];
            scale *= s.dc_gain();
            out
        })
        .collect()
}

/// Forward-backward filtering with odd-reflection padding of
/// `3 × (filter length − 1)` samples. Output has the input's length and
/// zero phase; the magnitude response is `|H|²`.
pub fn filtfilt(filter: &IirFilter, signal: &[f64]) -> Result<Vec<f64>> {
    let pad = filter.pad_len();
    let n = signal.len();
    if n <= pad {
        return Err(Error::InvalidArgument(format!(
            "signal of {n} samples is too short for {pad} samples of edge padding"
        )));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (signal[0], signal[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let zi = cascade_step_state(&filter.sections);
    let scaled = |v: f64| -> Vec<[f64; 2]> { zi.iter().map(|z| [z[0] * v, z[1] * v]).collect() };

    let mut state = scaled(ext[0]);
    sosfilt(&filter.sections, &mut ext, &mut state);
    ext.reverse();
    let mut state = scaled(ext[0]);
    sosfilt(&filter.sections, &mut ext, &mut state);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub band_order: usize,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub target_rate: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            band_low_hz: 1.0,
            band_high_hz: 20.0,
            band_order: 4,
            notch_hz: 50.0,
            notch_q: 35.0,
            target_rate: 128.0,
        }
    }
}

impl PreprocessConfig {
    /// Integer decimation factor from `sample_rate` to the target rate.
    pub fn decimation_factor(&self, sample_rate: f64) -> Result<usize> {
        let ratio = sample_rate / self.target_rate;
        let factor = ratio.round();
        if !(factor >= 1.0 && (ratio - factor).abs() < 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "sample rate {sample_rate} Hz is not an integer multiple of {} Hz",
                self.target_rate
            )));
        }
        Ok(factor as usize)
    }
}

/// Bandpass, then notch (both zero-phase), then decimation by keeping every
/// `factor`-th sample. Events move to `floor(index / factor)`.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    let fs = rec.sample_rate();
    let factor = cfg.decimation_factor(fs)?;
    let bandpass = design_bandpass(cfg.band_low_hz, cfg.band_high_hz, cfg.band_order, fs)?;
    let notch = design_notch(cfg.notch_hz, cfg.notch_q, fs)?;

    let samples = rec
        .samples()
        .par_iter()
        .map(|ch| {
            let y = filtfilt(&bandpass, ch)?;
            let y = filtfilt(&notch, &y)?;
            Ok(y.into_iter().step_by(factor).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let events: Vec<TagEvent> = rec
        .events()
        .iter()
        .map(|e| TagEvent {
            sample_index: e.sample_index / factor,
            ..*e
        })
        .collect();
    Recording::new(
        rec.subject_id(),
        rec.condition(),
        fs / factor as f64,
        rec.channel_labels().to_vec(),
        samples,
        events,
    )
}

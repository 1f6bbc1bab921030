//! Butterworth band-pass filtering and min-max feature scaling.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{EegRecord, DEFAULT_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub low_cut: f64,
    pub high_cut: f64,
    pub rate: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 3,
            low_cut: 0.1,
            high_cut: 20.0,
            rate: DEFAULT_RATE,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("filter order must be ≥ 1".into()));
        }
        let nyquist = self.rate / 2.0;
        if !(self.low_cut > 0.0 && self.low_cut < self.high_cut && self.high_cut < nyquist) {
            return Err(Error::Config(format!(
                "need 0 < low_cut ({}) < high_cut ({}) < rate/2 ({nyquist})",
                self.low_cut, self.high_cut
            )));
        }
        Ok(())
    }
}

/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }

    /// Roots of `z² + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a[0] * self.a[0] - 4.0 * self.a[1], 0.0).sqrt();
        [(-self.a[0] + disc) / 2.0, (-self.a[0] - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

/// Cascade of second-order sections followed by a scalar gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
    pub gain: f64,
}

impl FilterCoefficients {
    /// Complex response at `freq` Hz for sampling rate `rate`.
    pub fn response(&self, freq: f64, rate: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / rate);
        self.sections
            .iter()
            .fold(Complex64::new(self.gain, 0.0), |h, s| h * s.response(z_inv))
    }

    pub fn magnitude(&self, freq: f64, rate: f64) -> f64 {
        self.response(freq, rate).norm()
    }

    /// Causal filtering from zero initial state (transposed direct form II).
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = input.iter().map(|x| x * self.gain).collect();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for y in out.iter_mut() {
                let x = *y;
                let v = s.b[0] * x + z1;
                z1 = s.b[1] * x - s.a[0] * v + z2;
                z2 = s.b[2] * x - s.a[1] * v;
                *y = v;
            }
        }
        out
    }

    /// Filters every channel of `record`; channels holding NaN are passed
    /// through untouched.
    pub fn apply_record(&self, record: &EegRecord) -> EegRecord {
        let mut samples = record.samples().clone();
        for ch in 0..record.n_channels() {
            let row = record.channel(ch);
            if row.iter().any(|x| x.is_nan()) {
                log::debug!("skipping channel {} (contains NaN)", record.channels().labels()[ch]);
                continue;
            }
            for (i, v) in self.apply(&row).into_iter().enumerate() {
                samples[(ch, i)] = v;
            }
        }
        record.with_samples(samples).expect("filtering preserves shape")
    }
}

/// Band-pass Butterworth: analog low-pass prototype, low-pass to band-pass
/// transform on pre-warped corners, bilinear transform, then grouped into
/// conjugate-pole second-order sections normalised to unit gain at the
/// geometric centre frequency.
pub fn design_bandpass(spec: &FilterSpec) -> Result<FilterCoefficients> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.rate;
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (w1, w2) = (warp(spec.low_cut), warp(spec.high_cut));
    let w0_sq = w1 * w2;
    let bw = w2 - w1;

    let mut z_poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let q = proto * (bw / 2.0);
        let d = (q * q - w0_sq).sqrt();
        for s in [q + d, q - d] {
            z_poles.push((2.0 * fs + s) / (2.0 * fs - s));
        }
    }

    let tol = 1e-12;
    let mut sections = Vec::with_capacity(n);
    let mut reals = Vec::new();
    for p in &z_poles {
        if p.im > tol {
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * p.re, p.norm_sqr()],
            });
        } else if p.im.abs() <= tol {
            reals.push(p.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    if reals.len() % 2 != 0 {
        return Err(Error::Numeric("unpaired real pole in band-pass design".into()));
    }
    for pair in reals.chunks(2) {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    if sections.len() != n {
        return Err(Error::Numeric(format!(
            "expected {n} sections, built {}",
            sections.len()
        )));
    }
    if let Some(bad) = sections.iter().position(|s| !s.is_stable()) {
        return Err(Error::Numeric(format!("section {bad} is unstable")));
    }

    let mut coeffs = FilterCoefficients { sections, gain: 1.0 };
    let centre = fs / PI * (w0_sq.sqrt() / (2.0 * fs)).atan();
    coeffs.gain = 1.0 / coeffs.magnitude(centre, fs);
    Ok(coeffs)
}

/// Per-feature range learned on training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub mins: Vec<f64>,
    pub maxes: Vec<f64>,
}

impl ScalingParams {
    pub fn len(&self) -> usize {
        self.mins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mins.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mins.len() != self.maxes.len() {
            return Err(Error::Validation("scaling mins and maxes differ in length".into()));
        }
        if let Some(i) = (0..self.mins.len()).find(|&i| !(self.maxes[i] >= self.mins[i])) {
            return Err(Error::Validation(format!("scaling max < min at feature {i}")));
        }
        Ok(())
    }
}

/// Elementwise min and max over the rows of `vectors`.
pub fn minmax_fit(vectors: &DMatrix<f64>) -> Result<ScalingParams> {
    if vectors.nrows() == 0 {
        return Err(Error::Validation("cannot fit scaling on an empty set".into()));
    }
    let (mins, maxes) = vectors
        .column_iter()
        .map(|col| {
            col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
        })
        .unzip();
    Ok(ScalingParams { mins, maxes })
}

/// Maps each feature to `[0, 1]`, clamping values outside the fitted range.
/// Constant features map to 0.
pub fn minmax_apply(params: &ScalingParams, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != params.len() {
        return Err(Error::Validation(format!(
            "vector length {} does not match scaling length {}",
            v.len(),
            params.len()
        )));
    }
    Ok(v.iter()
        .zip(params.mins.iter().zip(&params.maxes))
        .map(|(&x, (&lo, &hi))| {
            let span = hi - lo;
            if span > 0.0 {
                ((x - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect())
}

/// Row-wise [`minmax_apply`].
pub fn minmax_apply_rows(params: &ScalingParams, vectors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if vectors.ncols() != params.len() {
        return Err(Error::Validation(format!(
            "feature width {} does not match scaling length {}",
            vectors.ncols(),
            params.len()
        )));
    }
    let mut out = vectors.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let (lo, hi) = (params.mins[j], params.maxes[j]);
        let span = hi - lo;
        for x in col.iter_mut() {
            *x = if span > 0.0 {
                ((*x - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

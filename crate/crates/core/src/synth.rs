//! Simulated subject: background EEG, P300 responses on attended flashes,
//! eye blinks and a corrupted channel.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{ChannelSet, EegRecord};
use crate::scheduler::ScenarioSchedule;

/// Below this frequency the background spectrum is flat instead of 1/f.
pub const PINK_KNEE_HZ: f64 = 1.0;

/// Frequency of the background alpha rhythm.
pub const ALPHA_HZ: f64 = 10.0;

/// Width of one blink deflection, seconds.
pub const BLINK_WIDTH: f64 = 0.3;

/// Seconds of signal recorded after the end of the last run.
pub const POST_ROLL: f64 = 1.0;

/// Per-channel P300 gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topography {
    pub gains: BTreeMap<String, f64>,
    /// Gain for channels not listed in `gains`.
    pub default_gain: f64,
}

impl Topography {
    pub fn gain(&self, label: &str) -> f64 {
        self.gains.get(label).copied().unwrap_or(self.default_gain)
    }

    pub fn gains_for(&self, channels: &ChannelSet) -> Vec<f64> {
        channels.labels().iter().map(|l| self.gain(l)).collect()
    }
}

impl Default for Topography {
    /// Posterior-weighted: 1.0 on P7/P8/O1/O2, 0.6 on T7/T8, 0.3 elsewhere.
    fn default() -> Self {
        let mut gains = BTreeMap::new();
        for ch in ["P7", "P8", "O1", "O2"] {
            gains.insert(ch.to_string(), 1.0);
        }
        for ch in ["T7", "T8"] {
            gains.insert(ch.to_string(), 0.6);
        }
        Self {
            gains,
            default_gain: 0.3,
        }
    }
}

/// Spatial spread of a blink: full weight on the frontal pole, small leakage elsewhere.
pub fn blink_weight(label: &str) -> f64 {
    match label {
        "AF3" | "AF4" => 1.0,
        "F7" | "F8" => 0.8,
        "F3" | "F4" => 0.1,
        _ => 0.05,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectParams {
    /// RMS of the 1/f background, µV.
    pub background_rms: f64,
    /// Amplitude of the 10 Hz alpha rhythm, µV.
    pub alpha_amp: f64,
    pub p300_amp: f64,
    pub p300_peak_latency: f64,
    /// Standard deviation of the Gaussian P300 bump, seconds.
    pub p300_width: f64,
    pub p300_topography: Topography,
    /// Blinks per minute.
    pub blink_rate: f64,
    pub blink_amp: f64,
    pub nan_channel: String,
    pub nan_fraction: f64,
    pub latency_jitter_sd: f64,
    /// Delay between the marker stream and the subject's response, seconds.
    pub constant_offset: f64,
    pub seed: u64,
}

impl Default for SubjectParams {
    fn default() -> Self {
        Self {
            background_rms: 10.0,
            alpha_amp: 3.0,
            // calibrated against the closed-loop evaluation
            p300_amp: 12.0,
            p300_peak_latency: 0.4,
            p300_width: 0.08,
            p300_topography: Topography::default(),
            blink_rate: 4.0,
            blink_amp: 80.0,
            nan_channel: "FC5".to_string(),
            nan_fraction: 0.2,
            latency_jitter_sd: 0.0,
            constant_offset: 0.0,
            seed: 0,
        }
    }
}

impl SubjectParams {
    /// Subject with every noise source switched off.
    pub fn noiseless() -> Self {
        Self {
            background_rms: 0.0,
            alpha_amp: 0.0,
            blink_rate: 0.0,
            blink_amp: 0.0,
            nan_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let amplitudes = [
            ("background_rms", self.background_rms),
            ("alpha_amp", self.alpha_amp),
            ("p300_amp", self.p300_amp),
            ("blink_amp", self.blink_amp),
            ("blink_rate", self.blink_rate),
            ("latency_jitter_sd", self.latency_jitter_sd),
        ];
        for (name, v) in amplitudes {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be ≥ 0")));
            }
        }
        if !(self.p300_width > 0.0) {
            return Err(Error::Config("p300_width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.nan_fraction) {
            return Err(Error::Config(format!(
                "nan_fraction {} outside [0, 1]",
                self.nan_fraction
            )));
        }
        if !self.constant_offset.is_finite() {
            return Err(Error::Config("constant_offset must be finite".into()));
        }
        if !(0.25..=0.5).contains(&self.p300_peak_latency) {
            log::warn!(
                "P300 peak latency {} s outside the usual 0.25–0.5 s range",
                self.p300_peak_latency
            );
        }
        Ok(())
    }
}

/// 1/f noise with a flat spectrum below [`PINK_KNEE_HZ`], scaled to unit RMS.
fn pink_noise<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(StandardNormal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, bin) in buf.iter_mut().enumerate().skip(1) {
        let k_sym = k.min(n - k);
        let f = k_sym as f64 * rate / n as f64;
        *bin /= f.max(PINK_KNEE_HZ).sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let rms = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for x in &mut out {
        *x = if rms > 0.0 { (*x - mean) / rms } else { 0.0 };
    }
    out
}

/// Background EEG: per-channel pink noise at `background_rms` plus a
/// randomly phased alpha rhythm.
pub fn generate_background<R: Rng + ?Sized>(
    duration: f64,
    channels: &ChannelSet,
    rate: f64,
    params: &SubjectParams,
    rng: &mut R,
) -> Result<EegRecord> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Domain(format!("duration {duration} s must be positive")));
    }
    let n = (duration * rate).round() as usize;
    let mut samples = DMatrix::zeros(channels.len(), n);
    for ch in 0..channels.len() {
        let noise = pink_noise(n, rate, rng);
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, v) in noise.into_iter().enumerate() {
            let t = i as f64 / rate;
            samples[(ch, i)] = params.background_rms * v + params.alpha_amp * (2.0 * PI * ALPHA_HZ * t + phase).sin();
        }
    }
    EegRecord::new(channels.clone(), rate, samples, Vec::new())
}

/// Adds a Gaussian P300 bump after every target flash of `schedule`.
///
/// The bump is centred `p300_peak_latency + constant_offset + jitter`
/// seconds after the nominal onset; `rng` only feeds the jitter.
pub fn inject_p300<R: Rng + ?Sized>(
    record: &EegRecord,
    schedule: &ScenarioSchedule,
    params: &SubjectParams,
    rng: &mut R,
) -> Result<EegRecord> {
    let n = record.n_samples();
    if let Some(e) = schedule.events.iter().find(|e| e.event.onset_sample >= n) {
        return Err(Error::Bounds(format!(
            "event at sample {} beyond record of {n} samples",
            e.event.onset_sample
        )));
    }
    let mut out = record.clone();
    if params.p300_amp == 0.0 {
        return Ok(out);
    }
    let rate = record.rate();
    let gains = params.p300_topography.gains_for(record.channels());
    let jitter = if params.latency_jitter_sd > 0.0 {
        Some(Normal::new(0.0, params.latency_jitter_sd).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let sigma = params.p300_width;
    let reach = 5.0 * sigma;
    let samples = out.samples_mut();
    for e in schedule.events.iter().filter(|e| e.event.is_target == Some(true)) {
        let j = jitter.map_or(0.0, |d| d.sample(rng));
        let onset_t = e.event.onset_sample as f64 / rate;
        let centre = onset_t + params.p300_peak_latency + params.constant_offset + j;
        let first = ((centre - reach) * rate).floor().max(0.0) as usize;
        let last = (((centre + reach) * rate).ceil().max(0.0) as usize).min(n.saturating_sub(1));
        for i in first..=last {
            let dt = i as f64 / rate - centre;
            let bump = params.p300_amp * (-0.5 * (dt / sigma).powi(2)).exp();
            for (ch, g) in gains.iter().enumerate() {
                samples[(ch, i)] += g * bump;
            }
        }
    }
    Ok(out)
}

/// Blink times (seconds) of a Poisson process at `blink_rate` per minute.
pub fn blink_onsets<R: Rng + ?Sized>(duration: f64, params: &SubjectParams, rng: &mut R) -> Vec<f64> {
    if params.blink_rate <= 0.0 {
        return Vec::new();
    }
    let gaps = Exp::new(params.blink_rate / 60.0).expect("positive rate");
    let mut onsets = Vec::new();
    let mut t: f64 = gaps.sample(rng);
    while t + BLINK_WIDTH < duration {
        onsets.push(t);
        t += gaps.sample(rng);
    }
    onsets
}

/// Unit-peak blink train: a Hann-shaped deflection of [`BLINK_WIDTH`] at each onset.
pub fn blink_waveform(n_samples: usize, rate: f64, onsets: &[f64]) -> Vec<f64> {
    let mut wave = vec![0.0; n_samples];
    for &t0 in onsets {
        let first = (t0 * rate).ceil() as usize;
        let last = (((t0 + BLINK_WIDTH) * rate).floor() as usize).min(n_samples.saturating_sub(1));
        for (i, w) in wave.iter_mut().enumerate().take(last + 1).skip(first) {
            let phase = (i as f64 / rate - t0) / BLINK_WIDTH;
            *w += 0.5 * (1.0 - (2.0 * PI * phase).cos());
        }
    }
    wave
}

pub fn inject_blinks<R: Rng + ?Sized>(record: &EegRecord, params: &SubjectParams, rng: &mut R) -> Result<EegRecord> {
    let mut out = record.clone();
    let onsets = blink_onsets(record.duration(), params, rng);
    if onsets.is_empty() || params.blink_amp == 0.0 {
        return Ok(out);
    }
    let wave = blink_waveform(record.n_samples(), record.rate(), &onsets);
    let weights: Vec<f64> = record
        .channels()
        .labels()
        .iter()
        .map(|l| params.blink_amp * blink_weight(l))
        .collect();
    let samples = out.samples_mut();
    for (i, w) in wave.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (ch, g) in weights.iter().enumerate() {
            samples[(ch, i)] += g * w;
        }
    }
    Ok(out)
}

/// Sets `nan_fraction` of the `nan_channel` samples, chosen uniformly, to NaN.
pub fn corrupt_nan_channel<R: Rng + ?Sized>(
    record: &EegRecord,
    params: &SubjectParams,
    rng: &mut R,
) -> Result<EegRecord> {
    let row = record.channels().require(&params.nan_channel)?;
    let mut out = record.clone();
    let n = record.n_samples();
    let count = (params.nan_fraction * n as f64).round() as usize;
    if count == 0 {
        return Ok(out);
    }
    let samples = out.samples_mut();
    for i in rand::seq::index::sample(rng, n, count.min(n)).iter() {
        samples[(row, i)] = f64::NAN;
    }
    Ok(out)
}

/// Full acquisition of `schedule`: background, P300, blinks, NaN corruption,
/// markers attached at their nominal onsets.
pub fn simulate_subject<R: Rng + ?Sized>(
    schedule: &ScenarioSchedule,
    channels: &ChannelSet,
    params: &SubjectParams,
    rng: &mut R,
) -> Result<EegRecord> {
    params.validate()?;
    let duration = schedule.span + POST_ROLL;
    let record = generate_background(duration, channels, schedule.rate, params, rng)?;
    let record = inject_p300(&record, schedule, params, rng)?;
    let record = inject_blinks(&record, params, rng)?;
    let record = if channels.index_of(&params.nan_channel).is_some() {
        corrupt_nan_channel(&record, params, rng)?
    } else {
        record
    };
    record.with_markers(schedule.stimulus_events())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::StimulusEvent;
    use crate::record::DEFAULT_RATE;
    use crate::scheduler::{build_scenario_schedule, ScheduledEvent, TimingConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rms(xs: &[f64]) -> f64 {
        (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
    }

    fn one_target_schedule(onset_sample: usize, span: f64) -> ScenarioSchedule {
        ScenarioSchedule {
            timing: TimingConfig::default(),
            rate: DEFAULT_RATE,
            events: vec![ScheduledEvent {
                onset_s: onset_sample as f64 / DEFAULT_RATE,
                event: StimulusEvent {
                    image_id: 0,
                    onset_sample,
                    run_index: 0,
                    session_index: 0,
                    is_target: Some(true),
                },
            }],
            session_targets: vec![0],
            span,
        }
    }

    #[test]
    fn background_length_rms_and_determinism() {
        let params = SubjectParams {
            alpha_amp: 0.0,
            ..Default::default()
        };
        let channels = ChannelSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rec = generate_background(10.0, &channels, DEFAULT_RATE, &params, &mut rng).unwrap();
        assert_eq!(rec.n_samples(), 1280);
        for ch in 0..rec.n_channels() {
            let r = rms(&rec.channel(ch));
            assert!((r - 10.0).abs() <= 1.0, "channel {ch} rms {r}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let again = generate_background(10.0, &channels, DEFAULT_RATE, &params, &mut rng).unwrap();
        assert_eq!(rec, again);
        assert!(generate_background(0.0, &channels, DEFAULT_RATE, &params, &mut rng).is_err());
    }

    #[test]
    fn background_spectrum_falls_off() {
        let params = SubjectParams {
            alpha_amp: 0.0,
            ..Default::default()
        };
        let channels = ChannelSet::new(["O1"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rec = generate_background(64.0, &channels, DEFAULT_RATE, &params, &mut rng).unwrap();
        let mut buf: Vec<Complex<f64>> = rec.channel(0).iter().map(|&x| Complex::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let n = buf.len() as f64;
        let band = |lo: f64, hi: f64| {
            buf.iter()
                .enumerate()
                .filter(|(k, _)| {
                    let f = *k as f64 * DEFAULT_RATE / n;
                    f >= lo && f < hi
                })
                .map(|(_, c)| c.norm_sqr())
                .sum::<f64>()
                / ((hi - lo) * n / DEFAULT_RATE)
        };
        // density at 2–4 Hz is about four times the density at 8–16 Hz
        let ratio = band(2.0, 4.0) / band(8.0, 16.0);
        assert!(ratio > 2.5 && ratio < 6.0, "ratio {ratio}");
    }

    #[test]
    fn p300_zero_amplitude_is_identity() {
        let channels = ChannelSet::default();
        let rec = EegRecord::zeros(channels, DEFAULT_RATE, 256).unwrap();
        let params = SubjectParams {
            p300_amp: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = inject_p300(&rec, &one_target_schedule(10, 1.0), &params, &mut rng).unwrap();
        assert_eq!(out, rec);
    }

    #[test]
    fn p300_peak_on_p8_at_51() {
        let channels = ChannelSet::default();
        let rec = EegRecord::zeros(channels.clone(), DEFAULT_RATE, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = SubjectParams {
            p300_amp: 5.0,
            ..Default::default()
        };
        let out = inject_p300(&rec, &one_target_schedule(0, 1.0), &params, &mut rng).unwrap();
        let p8 = out.channel(channels.index_of("P8").unwrap());
        let argmax = p8.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 51);
        assert!((p8[51] - 5.0).abs() < 0.05);
        let f3 = out.channel(channels.index_of("F3").unwrap());
        assert!((f3[51] - 0.3 * p8[51]).abs() < 1e-12);
    }

    #[test]
    fn p300_outside_record_is_bounds_error() {
        let rec = EegRecord::zeros(ChannelSet::default(), DEFAULT_RATE, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = inject_p300(
            &rec,
            &one_target_schedule(100, 1.0),
            &SubjectParams::default(),
            &mut rng,
        );
        assert!(matches!(res, Err(Error::Bounds(_))));
    }

    #[test]
    fn target_minus_nontarget_average_peaks_in_p300_range() {
        let timing = TimingConfig {
            sessions_per_scenario: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let schedule = build_scenario_schedule(&timing, DEFAULT_RATE, &[0, 1, 2, 3], &mut rng).unwrap();
        let channels = ChannelSet::default();
        let params = SubjectParams {
            blink_rate: 0.0,
            nan_fraction: 0.0,
            ..Default::default()
        };
        let rec = simulate_subject(&schedule, &channels, &params, &mut rng).unwrap();
        let o1 = rec.channel(channels.index_of("O1").unwrap());
        let mut diff = vec![0.0; 65];
        let (mut nt, mut nn) = (0.0, 0.0);
        for m in rec.markers() {
            let is_t = m.is_target == Some(true);
            if is_t {
                nt += 1.0;
            } else {
                nn += 1.0;
            }
        }
        for m in rec.markers() {
            let w = if m.is_target == Some(true) { 1.0 / nt } else { -1.0 / nn };
            for (k, d) in diff.iter_mut().enumerate() {
                *d += w * o1[m.onset_sample + k];
            }
        }
        let peak = diff.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 as f64 / DEFAULT_RATE;
        assert!((0.35..=0.45).contains(&peak), "peak at {peak}");
    }

    #[test]
    fn blinks() {
        let channels = ChannelSet::default();
        let rec = EegRecord::zeros(channels.clone(), DEFAULT_RATE, 60 * 128).unwrap();
        let none = SubjectParams {
            blink_rate: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(inject_blinks(&rec, &none, &mut rng).unwrap(), rec);

        let params = SubjectParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = inject_blinks(&rec, &params, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let onsets = blink_onsets(60.0, &params, &mut rng);
        let af3 = out.channel(channels.index_of("AF3").unwrap());
        let o2 = out.channel(channels.index_of("O2").unwrap());
        // count upward crossings of half the blink amplitude
        let crossings = af3.windows(2).filter(|w| w[0] < 40.0 && w[1] >= 40.0).count();
        assert_eq!(crossings, onsets.len());
        assert!((1..=10).contains(&crossings), "{crossings} blinks in 60 s");
        let max_af3 = af3.iter().cloned().fold(0.0, f64::max);
        let max_o2 = o2.iter().cloned().fold(0.0, f64::max);
        assert!(max_af3 > 70.0);
        assert!(max_o2 <= 0.1 * max_af3);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(inject_blinks(&rec, &params, &mut rng).unwrap(), out);
    }

    #[test]
    fn nan_corruption() {
        let channels = ChannelSet::default();
        let rec = EegRecord::zeros(channels.clone(), DEFAULT_RATE, 1280).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = SubjectParams {
            nan_fraction: 0.0,
            ..Default::default()
        };
        assert_eq!(corrupt_nan_channel(&rec, &zero, &mut rng).unwrap(), rec);

        let out = corrupt_nan_channel(&rec, &SubjectParams::default(), &mut rng).unwrap();
        let fc5 = channels.index_of("FC5").unwrap();
        for ch in 0..14 {
            let nans = out.channel(ch).iter().filter(|x| x.is_nan()).count();
            assert_eq!(nans, if ch == fc5 { 256 } else { 0 });
        }

        let bad = SubjectParams {
            nan_channel: "Cz".into(),
            ..Default::default()
        };
        assert!(matches!(
            corrupt_nan_channel(&rec, &bad, &mut rng),
            Err(Error::UnknownChannel(_))
        ));
    }

    #[test]
    fn full_scenario_length_and_linearity() {
        let timing = TimingConfig::default();
        let targets: Vec<u8> = (0..12).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let schedule = build_scenario_schedule(&timing, DEFAULT_RATE, &targets, &mut rng).unwrap();
        let channels = ChannelSet::default();
        let params = SubjectParams {
            blink_amp: 0.0,
            nan_fraction: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let full = simulate_subject(&schedule, &channels, &params, &mut rng).unwrap();
        assert!(full.n_samples() as f64 >= 317.6 * 128.0);
        assert_eq!(full.markers().len(), 864);

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let bg = generate_background(schedule.span + POST_ROLL, &channels, DEFAULT_RATE, &params, &mut rng).unwrap();
        let composed = inject_p300(&bg, &schedule, &params, &mut rng).unwrap();
        assert_eq!(full.samples(), composed.samples());
    }

    #[test]
    fn noiseless_targets_dominate() {
        let timing = TimingConfig {
            sessions_per_scenario: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let schedule = build_scenario_schedule(&timing, DEFAULT_RATE, &[3, 9], &mut rng).unwrap();
        let channels = ChannelSet::default();
        let rec = simulate_subject(&schedule, &channels, &SubjectParams::noiseless(), &mut rng).unwrap();
        let peak = (0.4 * DEFAULT_RATE).round() as usize;
        let mean_at = |onset: usize| {
            (0..rec.n_channels())
                .map(|c| rec.samples()[(c, onset + peak)])
                .sum::<f64>()
                / rec.n_channels() as f64
        };
        let (t, nt): (Vec<&StimulusEvent>, Vec<_>) = rec.markers().iter().partition(|m| m.is_target == Some(true));
        let min_t = t.iter().map(|m| mean_at(m.onset_sample)).fold(f64::INFINITY, f64::min);
        let max_nt = nt
            .iter()
            .map(|m| mean_at(m.onset_sample))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_t > max_nt);
    }

    #[test]
    fn constant_offset_shifts_response() {
        let channels = ChannelSet::default();
        let rec = EegRecord::zeros(channels.clone(), DEFAULT_RATE, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = SubjectParams {
            constant_offset: 0.1,
            ..Default::default()
        };
        let out = inject_p300(&rec, &one_target_schedule(0, 1.0), &params, &mut rng).unwrap();
        let p8 = out.channel(channels.index_of("P8").unwrap());
        let argmax = p8.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        // 0.5 s * 128 = 64, i.e. 12.8 samples later than the 51.2 nominal peak
        assert_eq!(argmax, 64);
        assert!((0.1f64 * DEFAULT_RATE - 12.8).abs() < 1e-12);
    }
}

//! Channel metadata, the multichannel EEG record and sample-time arithmetic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling rate of the headset, in Hz.
pub const DEFAULT_RATE: f64 = 128.0;

/// Number of images on the stimulus grid.
pub const N_IMAGES: usize = 12;

/// Electrode labels of the 14-channel headset, in recording order.
pub const DEFAULT_CHANNELS: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];

/// Ordered, duplicate-free list of channel labels. The order defines the
/// row order of every sample matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ChannelSet {
    labels: Vec<String>,
}

impl ChannelSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::Validation("empty channel label".into()));
            }
            if labels[..i].contains(label) {
                return Err(Error::Validation(format!("duplicate channel label `{label}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Index of `label`, or [`Error::UnknownChannel`].
    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label)
            .ok_or_else(|| Error::UnknownChannel(label.to_string()))
    }

    /// Subset keeping the given row indices, in the given order.
    pub fn select(&self, rows: &[usize]) -> ChannelSet {
        ChannelSet {
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
        }
    }
}

impl Default for ChannelSet {
    fn default() -> Self {
        Self {
            labels: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for ChannelSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        ChannelSet::new(labels)
    }
}

impl From<ChannelSet> for Vec<String> {
    fn from(set: ChannelSet) -> Self {
        set.labels
    }
}

/// One image flash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StimulusEvent {
    pub image_id: u8,
    pub onset_sample: usize,
    pub run_index: u32,
    pub session_index: u32,
    /// `None` when the target is unknown (blind online use).
    pub is_target: Option<bool>,
}

impl StimulusEvent {
    pub fn validate(&self) -> Result<()> {
        if usize::from(self.image_id) >= N_IMAGES {
            return Err(Error::Validation(format!(
                "image id {} outside [0, {N_IMAGES})",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// Multichannel EEG in microvolts, `[n_channels × n_samples]`, with
/// time-aligned stimulus markers. Missing samples are NaN.
#[derive(Debug, Clone)]
pub struct EegRecord {
    channels: ChannelSet,
    rate: f64,
    samples: DMatrix<f64>,
    markers: Vec<StimulusEvent>,
}

impl EegRecord {
    pub fn new(channels: ChannelSet, rate: f64, samples: DMatrix<f64>, markers: Vec<StimulusEvent>) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Validation(format!("sampling rate {rate} must be positive")));
        }
        if samples.nrows() != channels.len() {
            return Err(Error::Validation(format!(
                "sample matrix has {} rows for {} channels",
                samples.nrows(),
                channels.len()
            )));
        }
        let record = Self {
            channels,
            rate,
            samples,
            markers: Vec::new(),
        };
        record.with_markers(markers)
    }

    /// All-zero record of `n_samples` columns.
    pub fn zeros(channels: ChannelSet, rate: f64, n_samples: usize) -> Result<Self> {
        let samples = DMatrix::zeros(channels.len(), n_samples);
        Self::new(channels, rate, samples, Vec::new())
    }

    /// Replaces the marker list after checking ordering and range.
    pub fn with_markers(mut self, markers: Vec<StimulusEvent>) -> Result<Self> {
        let n = self.n_samples();
        for (i, m) in markers.iter().enumerate() {
            m.validate()?;
            if m.onset_sample >= n {
                return Err(Error::Bounds(format!(
                    "marker at sample {} outside record of {n} samples",
                    m.onset_sample
                )));
            }
            if i > 0 && markers[i - 1].onset_sample >= m.onset_sample {
                return Err(Error::Validation(format!(
                    "marker onsets not strictly increasing at index {i}"
                )));
            }
        }
        self.markers = markers;
        Ok(self)
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    /// Mutable access to the sample values; the shape is fixed.
    pub fn samples_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.samples
    }

    pub fn markers(&self) -> &[StimulusEvent] {
        &self.markers
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.rate
    }

    /// Copy of one channel row.
    pub fn channel(&self, row: usize) -> Vec<f64> {
        self.samples.row(row).iter().copied().collect()
    }

    /// New record with the given rows, markers kept.
    pub fn select_channels(&self, rows: &[usize]) -> EegRecord {
        EegRecord {
            channels: self.channels.select(rows),
            rate: self.rate,
            samples: self.samples.select_rows(rows),
            markers: self.markers.clone(),
        }
    }

    /// Same metadata and markers, new samples of identical shape.
    pub fn with_samples(&self, samples: DMatrix<f64>) -> Result<EegRecord> {
        if samples.shape() != self.samples.shape() {
            return Err(Error::Validation(format!(
                "sample shape {:?} differs from record shape {:?}",
                samples.shape(),
                self.samples.shape()
            )));
        }
        Ok(EegRecord {
            channels: self.channels.clone(),
            rate: self.rate,
            samples,
            markers: self.markers.clone(),
        })
    }
}

/// Equality treating NaN samples at the same position as equal.
impl PartialEq for EegRecord {
    fn eq(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.rate == other.rate
            && self.markers == other.markers
            && self.samples.shape() == other.samples.shape()
            && self
                .samples
                .iter()
                .zip(other.samples.iter())
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

/// Converts seconds to the nearest sample index (halves round away from zero).
pub fn time_to_sample(t: f64, rate: f64) -> Result<usize> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time {t} s must be finite and non-negative")));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Domain(format!("rate {rate} Hz must be positive")));
    }
    Ok((t * rate).round() as usize)
}

/// Copies the window `[start, start + length)` of every channel.
pub fn slice_window(record: &EegRecord, start: usize, length: usize) -> Result<DMatrix<f64>> {
    let end = start.checked_add(length);
    match end {
        Some(end) if end <= record.n_samples() => Ok(record.samples.columns(start, length).into_owned()),
        _ => Err(Error::Bounds(format!(
            "window [{start}, {start}+{length}) exceeds record of {} samples",
            record.n_samples()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_record(n: usize) -> EegRecord {
        let channels = ChannelSet::default();
        let samples = DMatrix::from_fn(channels.len(), n, |r, c| (r * 1000 + c) as f64);
        EegRecord::new(channels, DEFAULT_RATE, samples, Vec::new()).unwrap()
    }

    #[test]
    fn time_to_sample_examples() {
        assert_eq!(time_to_sample(0.5, 128.0).unwrap(), 64);
        assert_eq!(time_to_sample(0.0, 128.0).unwrap(), 0);
        // 3.6 * 128 = 460.8
        assert_eq!(time_to_sample(3.6, 128.0).unwrap(), 461);
        // exact half rounds away from zero
        assert_eq!(time_to_sample(0.5, 5.0).unwrap(), 3);
    }

    #[test]
    fn time_to_sample_rejects_negative() {
        assert!(matches!(time_to_sample(-0.1, 128.0), Err(Error::Domain(_))));
        assert!(matches!(time_to_sample(1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn default_channels() {
        let set = ChannelSet::default();
        assert_eq!(set.len(), 14);
        assert_eq!(set.index_of("FC5"), Some(3));
        assert_eq!(set.labels()[13], "AF4");
        assert!(ChannelSet::new(["O1", "O1"]).is_err());
    }

    #[test]
    fn slice_window_examples() {
        let record = ramp_record(100);
        assert_eq!(&slice_window(&record, 0, 100).unwrap(), record.samples());

        let empty = slice_window(&record, 10, 0).unwrap();
        assert_eq!(empty.shape(), (14, 0));

        assert!(matches!(slice_window(&record, 90, 20), Err(Error::Bounds(_))));
        assert!(matches!(slice_window(&record, usize::MAX, 2), Err(Error::Bounds(_))));
    }

    #[test]
    fn markers_must_increase_and_fit() {
        let record = ramp_record(100);
        let ev = |onset| StimulusEvent {
            image_id: 0,
            onset_sample: onset,
            run_index: 0,
            session_index: 0,
            is_target: None,
        };
        assert!(record.clone().with_markers(vec![ev(3), ev(3)]).is_err());
        assert!(matches!(
            record.clone().with_markers(vec![ev(100)]),
            Err(Error::Bounds(_))
        ));
        let bad_id = StimulusEvent { image_id: 12, ..ev(1) };
        assert!(record.clone().with_markers(vec![bad_id]).is_err());
        assert!(record.with_markers(vec![ev(1), ev(99)]).is_ok());
    }

    #[test]
    fn nan_aware_equality() {
        let mut a = ramp_record(10);
        a.samples_mut()[(3, 4)] = f64::NAN;
        let b = a.clone();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn slice_has_requested_width(start in 0usize..120, length in 0usize..120) {
            let record = ramp_record(120);
            let before = record.clone();
            match slice_window(&record, start, length) {
                Ok(w) => {
                    prop_assert!(start + length <= 120);
                    prop_assert_eq!(w.ncols(), length);
                    prop_assert_eq!(w.nrows(), 14);
                    for c in 0..length {
                        prop_assert_eq!(w[(2, c)], record.samples()[(2, start + c)]);
                    }
                }
                Err(_) => prop_assert!(start + length > 120),
            }
            prop_assert_eq!(record, before);
        }

        #[test]
        fn time_to_sample_monotone(a in 0.0f64..400.0, b in 0.0f64..400.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(time_to_sample(lo, 128.0).unwrap() <= time_to_sample(hi, 128.0).unwrap());
        }
    }
}

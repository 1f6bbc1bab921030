//! Channel pruning, preprocessing, epoch segmentation and feature vectors.
//!
//! Processing order: prune → band-pass → ICA cleaning (optional) → segment
//! → concatenate channels → (min-max scaling, applied by the classifier).

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{design_bandpass, FilterCoefficients, FilterSpec};
use crate::error::{Error, Result};
use crate::ica::{ArtifactFilter, IcaConfig};
use crate::record::{slice_window, ChannelSet, EegRecord, StimulusEvent};

/// Samples taken after each stimulus onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochWindow {
    pub start_offset: usize,
    pub length: usize,
}

impl Default for EpochWindow {
    /// 0.5 s at 128 Hz with both endpoints included: 65 samples.
    fn default() -> Self {
        Self {
            start_offset: 0,
            length: 65,
        }
    }
}

/// Band edges and order of the preprocessing filter; the rate comes from the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandPass {
    pub order: usize,
    pub low_cut: f64,
    pub high_cut: f64,
}

impl Default for BandPass {
    fn default() -> Self {
        let spec = FilterSpec::default();
        Self {
            order: spec.order,
            low_cut: spec.low_cut,
            high_cut: spec.high_cut,
        }
    }
}

impl BandPass {
    pub fn spec(&self, rate: f64) -> FilterSpec {
        FilterSpec {
            order: self.order,
            low_cut: self.low_cut,
            high_cut: self.high_cut,
            rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Channels whose NaN fraction exceeds this are dropped.
    pub nan_threshold: f64,
    pub band_pass: BandPass,
    pub ica_enabled: bool,
    pub ica: IcaConfig,
    pub window: EpochWindow,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            nan_threshold: 0.05,
            band_pass: BandPass::default(),
            ica_enabled: true,
            ica: IcaConfig::default(),
            window: EpochWindow::default(),
        }
    }
}

/// Replaces NaN runs by linear interpolation between the nearest finite
/// neighbours (edge runs copy the nearest finite value).
fn interpolate_nans(row: &mut [f64]) {
    let n = row.len();
    let mut i = 0;
    while i < n {
        if !row[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && row[i].is_nan() {
            i += 1;
        }
        let left = start.checked_sub(1).map(|j| row[j]);
        let right = (i < n).then(|| row[i]);
        let gap = (i - start + 1) as f64;
        for (k, v) in row[start..i].iter_mut().enumerate() {
            *v = match (left, right) {
                (Some(l), Some(r)) => l + (r - l) * (k + 1) as f64 / gap,
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => 0.0,
            };
        }
    }
}

fn interpolate_record(record: &EegRecord) -> EegRecord {
    let mut samples = record.samples().clone();
    for ch in 0..record.n_channels() {
        let mut row = record.channel(ch);
        if row.iter().any(|x| x.is_nan()) {
            interpolate_nans(&mut row);
            for (i, v) in row.into_iter().enumerate() {
                samples[(ch, i)] = v;
            }
        }
    }
    record.with_samples(samples).expect("same shape")
}

/// Drops channels whose NaN fraction exceeds `nan_threshold` and
/// interpolates the remaining isolated NaNs.
pub fn prune_channels(record: &EegRecord, nan_threshold: f64) -> Result<(EegRecord, Vec<String>)> {
    let n = record.n_samples().max(1) as f64;
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for ch in 0..record.n_channels() {
        let nans = record.samples().row(ch).iter().filter(|x| x.is_nan()).count();
        if nans as f64 / n > nan_threshold {
            dropped.push(record.channels().labels()[ch].clone());
        } else {
            keep.push(ch);
        }
    }
    if keep.is_empty() {
        return Err(Error::Validation("every channel exceeds the NaN threshold".into()));
    }
    let pruned = if dropped.is_empty() {
        record.clone()
    } else {
        record.select_channels(&keep)
    };
    Ok((interpolate_record(&pruned), dropped))
}

/// Keeps exactly `channels` (in that order) and interpolates NaNs.
pub fn restrict_channels(record: &EegRecord, channels: &ChannelSet) -> Result<EegRecord> {
    let rows = channels
        .labels()
        .iter()
        .map(|l| record.channels().require(l))
        .collect::<Result<Vec<_>>>()?;
    Ok(interpolate_record(&record.select_channels(&rows)))
}

/// One stimulus-locked window.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub data: DMatrix<f64>,
    pub event: StimulusEvent,
}

/// Cuts `[onset + start_offset, onset + start_offset + length)` for every event.
pub fn segment(record: &EegRecord, events: &[StimulusEvent], window: &EpochWindow) -> Result<Vec<Epoch>> {
    events
        .iter()
        .map(|ev| {
            let start = ev.onset_sample + window.start_offset;
            slice_window(record, start, window.length)
                .map(|data| Epoch { data, event: *ev })
                .map_err(|_| {
                    Error::Bounds(format!(
                        "epoch of image {} (session {}, run {}) at sample {start} exceeds record of {} samples",
                        ev.image_id,
                        ev.session_index,
                        ev.run_index,
                        record.n_samples()
                    ))
                })
        })
        .collect()
}

/// Channel-by-channel concatenation of an epoch.
pub fn build_feature_vector(epoch: &DMatrix<f64>) -> Vec<f64> {
    epoch
        .row_iter()
        .flat_map(|row| row.iter().copied().collect::<Vec<_>>())
        .collect()
}

/// Inverse of [`build_feature_vector`].
pub fn epoch_from_vector(v: &[f64], n_channels: usize) -> Result<DMatrix<f64>> {
    if n_channels == 0 || !v.len().is_multiple_of(n_channels) {
        return Err(Error::Validation(format!(
            "vector of length {} cannot hold {n_channels} channels",
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(n_channels, v.len() / n_channels, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub session: u32,
    pub run: u32,
    pub image_id: u8,
}

/// Feature matrix `[n_epochs × (channels × window length)]` with target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub vectors: DMatrix<f64>,
    pub labels: Vec<bool>,
    pub provenance: Vec<Provenance>,
    pub channels: ChannelSet,
    pub window: EpochWindow,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_size(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn from_epochs(epochs: &[Epoch], channels: ChannelSet, window: EpochWindow) -> Result<Self> {
        let d = channels.len() * window.length;
        let mut vectors = DMatrix::zeros(epochs.len(), d);
        let mut labels = Vec::with_capacity(epochs.len());
        let mut provenance = Vec::with_capacity(epochs.len());
        for (i, ep) in epochs.iter().enumerate() {
            let label = ep.event.is_target.ok_or_else(|| {
                Error::Validation(format!("event {i} (image {}) has no target label", ep.event.image_id))
            })?;
            let v = build_feature_vector(&ep.data);
            if v.len() != d {
                return Err(Error::Validation(format!(
                    "epoch {i} has {} features, expected {d}",
                    v.len()
                )));
            }
            vectors.row_mut(i).copy_from_slice(&v);
            labels.push(label);
            provenance.push(Provenance {
                session: ep.event.session_index,
                run: ep.event.run_index,
                image_id: ep.event.image_id,
            });
        }
        Ok(Self {
            vectors,
            labels,
            provenance,
            channels,
            window,
        })
    }

    /// Stacks datasets sharing the same geometry.
    pub fn concat(parts: &[LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Validation("no datasets to concatenate".into()))?;
        let d = first.feature_size();
        if parts
            .iter()
            .any(|p| p.feature_size() != d || p.channels != first.channels)
        {
            return Err(Error::Validation("datasets differ in feature geometry".into()));
        }
        let n: usize = parts.iter().map(LabeledDataset::len).sum();
        let mut vectors = DMatrix::zeros(n, d);
        let mut row = 0;
        for p in parts {
            vectors.rows_mut(row, p.len()).copy_from(&p.vectors);
            row += p.len();
        }
        Ok(Self {
            vectors,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            provenance: parts.iter().flat_map(|p| p.provenance.iter().copied()).collect(),
            channels: first.channels.clone(),
            window: first.window,
        })
    }

    /// Rows whose provenance satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(&Provenance) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.provenance[i])).collect();
        Self {
            vectors: self.vectors.select_rows(&rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            provenance: rows.iter().map(|&i| self.provenance[i]).collect(),
            channels: self.channels.clone(),
            window: self.window,
        }
    }

    /// One row per epoch: `session,run,image_id,label,f0,f1,…`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["session".to_string(), "run".into(), "image_id".into(), "label".into()];
        header.extend((0..self.feature_size()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let p = self.provenance[i];
            let mut rec = vec![
                p.session.to_string(),
                p.run.to_string(),
                p.image_id.to_string(),
                u8::from(self.labels[i]).to_string(),
            ];
            rec.extend(self.vectors.row(i).iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Everything needed to turn a raw record into epochs, learned on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub channels: ChannelSet,
    pub band_pass: BandPass,
    pub filter: FilterCoefficients,
    pub artifacts: Option<ArtifactFilter>,
    pub window: EpochWindow,
}

impl Preprocessor {
    /// Learns channel selection, filter and (optionally) the ICA artifact
    /// filter from a training record. Returns the cleaned record as well.
    pub fn fit<R: Rng + ?Sized>(record: &EegRecord, config: &PipelineConfig, rng: &mut R) -> Result<(Self, EegRecord)> {
        let (pruned, dropped) = prune_channels(record, config.nan_threshold)?;
        if !dropped.is_empty() {
            log::info!("dropped channels {dropped:?} (NaN fraction > {})", config.nan_threshold);
        }
        let filter = design_bandpass(&config.band_pass.spec(record.rate()))?;
        let filtered = filter.apply_record(&pruned);
        let artifacts = if config.ica_enabled {
            match ArtifactFilter::fit(&filtered, &config.ica, rng) {
                Ok(a) => Some(a),
                Err(Error::Rank { rank, requested }) => {
                    log::warn!("ICA skipped: data rank {rank} below {requested} channels");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let cleaned = match &artifacts {
            Some(a) => a.clean(&filtered)?,
            None => filtered,
        };
        let pre = Self {
            channels: pruned.channels().clone(),
            band_pass: config.band_pass,
            filter,
            artifacts,
            window: config.window,
        };
        Ok((pre, cleaned))
    }

    /// Applies the learned preprocessing to a new record.
    pub fn transform(&self, record: &EegRecord) -> Result<EegRecord> {
        let kept = restrict_channels(record, &self.channels)?;
        let filtered = self.filter.apply_record(&kept);
        match &self.artifacts {
            Some(a) => a.clean(&filtered),
            None => Ok(filtered),
        }
    }

    pub fn feature_size(&self) -> usize {
        self.channels.len() * self.window.length
    }

    pub fn epochs(&self, cleaned: &EegRecord) -> Result<Vec<Epoch>> {
        segment(cleaned, cleaned.markers(), &self.window)
    }

    /// Labeled dataset from an already-transformed record.
    pub fn dataset(&self, cleaned: &EegRecord) -> Result<LabeledDataset> {
        LabeledDataset::from_epochs(&self.epochs(cleaned)?, self.channels.clone(), self.window)
    }
}

/// Training-side composition: fit preprocessing on `record` and build the
/// labeled dataset from its markers.
pub fn dataset_from_scenario<R: Rng + ?Sized>(
    record: &EegRecord,
    config: &PipelineConfig,
    rng: &mut R,
) -> Result<(LabeledDataset, Preprocessor)> {
    let (pre, cleaned) = Preprocessor::fit(record, config, rng)?;
    let data = pre.dataset(&cleaned)?;
    Ok((data, pre))
}

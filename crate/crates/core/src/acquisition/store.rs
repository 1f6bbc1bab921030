//! On-disk records (the wire format written to a file) and model files
//! (versioned TOML).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::stream::{write_record, RecordReader};
use crate::dsp::{design_bandpass, ScalingParams};
use crate::error::{Error, Result};
use crate::features::{BandPass, EpochWindow, Preprocessor};
use crate::ica::{ArtifactFilter, IcaModel};
use crate::lda::LdaModel;
use crate::record::{ChannelSet, EegRecord};
use crate::session::TrainedModel;

/// Time steps per sample frame in saved records.
pub const FILE_CHUNK: usize = 128;

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_record(record: &EegRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_record(&mut out, record, FILE_CHUNK)
}

pub fn load_record(path: impl AsRef<Path>) -> Result<EegRecord> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = RecordReader::new(BufReader::new(file));
    let record = reader.expect_record()?;
    if reader.next_record()?.is_some() {
        return Err(Error::Protocol("record file holds more than one record".into()));
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaSection {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mu_target: f64,
    pub mu_nontarget: f64,
    pub shrinkage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaSection {
    pub mean: Vec<f64>,
    /// Rows of the whitening matrix.
    pub whitening: Vec<Vec<f64>>,
    /// Rows of the unmixing matrix.
    pub unmixing: Vec<Vec<f64>>,
    /// Components removed during cleaning.
    pub mask: Vec<bool>,
}

/// Persisted classifier together with the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub rate: f64,
    pub channels: Vec<String>,
    pub window: EpochWindow,
    pub band_pass: BandPass,
    pub lda: LdaSection,
    pub scaling: ScalingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ica: Option<IcaSection>,
    /// Free-form reproducibility information (seed, configuration).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<toml::Table>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::Format(format!("ragged rows in `{what}`")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), n_cols, &flat))
}

impl ModelFile {
    pub fn from_trained(model: &TrainedModel) -> Self {
        let pre = &model.preprocessor;
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            rate: model.rate,
            channels: pre.channels.labels().to_vec(),
            window: pre.window,
            band_pass: pre.band_pass,
            lda: LdaSection {
                weights: model.lda.weights.clone(),
                bias: model.lda.bias,
                mu_target: model.lda.mu_target,
                mu_nontarget: model.lda.mu_nontarget,
                shrinkage: model.lda.shrinkage,
            },
            scaling: model.scaling.clone(),
            ica: pre.artifacts.as_ref().map(|a| IcaSection {
                mean: a.model.mean.iter().copied().collect(),
                whitening: rows_of(&a.model.whitening),
                unmixing: rows_of(&a.model.unmixing),
                mask: a.mask.clone(),
            }),
            meta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version > MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found_major: self.format_version as u16,
                found_minor: 0,
                supported: MODEL_FORMAT_VERSION as u16,
            });
        }
        let expected = self.channels.len() * self.window.length;
        if self.lda.weights.len() != expected {
            return Err(Error::Validation(format!(
                "{} weights for {} channels × {} samples",
                self.lda.weights.len(),
                self.channels.len(),
                self.window.length
            )));
        }
        if self.scaling.len() != expected {
            return Err(Error::Validation(format!(
                "scaling has {} features, expected {expected}",
                self.scaling.len()
            )));
        }
        self.scaling.validate()?;
        Ok(())
    }

    pub fn to_trained(&self) -> Result<TrainedModel> {
        self.validate()?;
        let channels = ChannelSet::new(self.channels.clone())?;
        let filter = design_bandpass(&self.band_pass.spec(self.rate))?;
        let artifacts = match &self.ica {
            Some(s) => {
                let model = IcaModel::from_parts(
                    DVector::from_vec(s.mean.clone()),
                    matrix_from_rows(&s.whitening, "ica.whitening")?,
                    matrix_from_rows(&s.unmixing, "ica.unmixing")?,
                )?;
                if s.mask.len() != model.components() || model.n_channels() != channels.len() {
                    return Err(Error::Validation("ICA section does not match the channel list".into()));
                }
                Some(ArtifactFilter {
                    model,
                    mask: s.mask.clone(),
                })
            }
            None => None,
        };
        Ok(TrainedModel {
            rate: self.rate,
            preprocessor: Preprocessor {
                channels,
                band_pass: self.band_pass,
                filter,
                artifacts,
                window: self.window,
            },
            scaling: self.scaling.clone(),
            lda: LdaModel {
                weights: self.lda.weights.clone(),
                bias: self.lda.bias,
                mu_target: self.lda.mu_target,
                mu_nontarget: self.lda.mu_nontarget,
                shrinkage: self.lda.shrinkage,
            },
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }
}

pub fn save_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let path = path.as_ref();
    fs::write(path, model.to_toml()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_toml(&text)
}

//! The closed loop: offline training, simulated online selections streamed
//! through the acquisition protocol, retraining on logged online data and
//! majority voting over trials.

use std::io::{Read, Write};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{write_record, write_record_paced, RecordReader};
use crate::dsp::{minmax_apply_rows, minmax_fit, ScalingParams};
use crate::error::{Error, Result};
use crate::features::{dataset_from_scenario, LabeledDataset, PipelineConfig, Preprocessor};
use crate::lda::{self, LdaModel, DEFAULT_SHRINKAGE};
use crate::record::{ChannelSet, EegRecord, StimulusEvent, DEFAULT_RATE, N_IMAGES};
use crate::scheduler::{
    build_online_trial_schedule, build_scenario_schedule, durations, online_schedule_from_sequences, ScenarioSchedule,
    TimingConfig,
};
use crate::synth::{simulate_subject, SubjectParams};

/// Time steps per sample frame on the live stream (0.25 s at 128 Hz).
pub const STREAM_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub image_id: u8,
    pub label: String,
    pub message: String,
}

/// The twelve selectable objects and the message each one conveys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCatalog {
    entries: Vec<CatalogEntry>,
}

impl ObjectCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.len() != N_IMAGES {
            return Err(Error::Validation(format!(
                "catalog needs {N_IMAGES} entries, got {}",
                entries.len()
            )));
        }
        let mut seen = [false; N_IMAGES];
        for e in &entries {
            match seen.get_mut(usize::from(e.image_id)) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(Error::Validation(format!(
                        "catalog image id {} invalid or repeated",
                        e.image_id
                    )))
                }
            }
        }
        let mut entries = entries;
        entries.sort_by_key(|e| e.image_id);
        Ok(Self { entries })
    }

    pub fn get(&self, image_id: u8) -> Option<&CatalogEntry> {
        self.entries.get(usize::from(image_id))
    }

    pub fn label(&self, image_id: u8) -> &str {
        self.get(image_id).map_or("?", |e| e.label.as_str())
    }

    pub fn message(&self, image_id: u8) -> &str {
        self.get(image_id).map_or("", |e| e.message.as_str())
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }
}

impl Default for ObjectCatalog {
    fn default() -> Self {
        let items = [
            ("house", "I want to go home"),
            ("television", "Please turn on the television"),
            ("telephone", "I want to make a phone call"),
            ("car", "Get my chauffeur prepare my car"),
            ("bed", "I want to go to bed"),
            ("coffee", "I would like a cup of coffee"),
            ("meal", "I am hungry, please bring my meal"),
            ("bath", "I need help to take a bath"),
            ("shopping cart", "I need something from the shop"),
            ("internet modem", "Please connect me to the internet"),
            ("popcorn", "I would like some popcorn"),
            ("heart", "I love you"),
        ];
        Self {
            entries: items
                .iter()
                .enumerate()
                .map(|(i, (label, message))| CatalogEntry {
                    image_id: i as u8,
                    label: label.to_string(),
                    message: message.to_string(),
                })
                .collect(),
        }
    }
}

/// Outcome of one online selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub trial_winners: Vec<u8>,
    /// `[n_trials][12]` discriminant scores, indexed by image id.
    pub per_image_scores: Vec<Vec<f64>>,
    pub selected: u8,
    /// Simulated seconds from the first flash to the decision.
    pub latency: f64,
    pub message: String,
}

/// Image with the highest score; ties go to the lowest id.
pub fn trial_winner(scores: &[f64]) -> Result<u8> {
    if scores.is_empty() {
        return Err(Error::Validation("no scores".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score for image {i} is not finite")));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best as u8)
}

/// Most frequent trial winner. Among equally frequent candidates the one
/// with the highest score summed over trials wins, then the lowest id.
pub fn majority_vote(trial_winners: &[u8], per_image_scores: &[Vec<f64>]) -> Result<u8> {
    if trial_winners.is_empty() {
        return Err(Error::Validation("majority vote needs at least one trial".into()));
    }
    let mut counts = [0usize; 256];
    for &w in trial_winners {
        counts[usize::from(w)] += 1;
    }
    let top = *counts.iter().max().expect("non-empty");
    let candidates: Vec<u8> = (0..=255u8).filter(|&c| counts[usize::from(c)] == top).collect();
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let summed = |c: u8| -> f64 {
        per_image_scores
            .iter()
            .map(|row| row.get(usize::from(c)).copied().unwrap_or(0.0))
            .sum()
    };
    let mut best = candidates[0];
    let mut best_score = summed(best);
    for &c in &candidates[1..] {
        let s = summed(c);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    Ok(best)
}

/// Preprocessing, scaling and discriminant learned from one training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub rate: f64,
    pub preprocessor: Preprocessor,
    pub scaling: ScalingParams,
    pub lda: LdaModel,
}

impl TrainedModel {
    pub fn feature_size(&self) -> usize {
        self.lda.dim()
    }

    /// Scores every marker of `record` (raw, as acquired).
    pub fn score_record(&self, record: &EegRecord) -> Result<Vec<(StimulusEvent, f64)>> {
        if (record.rate() - self.rate).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "record rate {} Hz differs from model rate {} Hz",
                record.rate(),
                self.rate
            )));
        }
        if self.preprocessor.feature_size() != self.lda.dim() {
            return Err(Error::Validation(format!(
                "pipeline yields {} features, model expects {}",
                self.preprocessor.feature_size(),
                self.lda.dim()
            )));
        }
        let cleaned = self.preprocessor.transform(record)?;
        let epochs = self.preprocessor.epochs(&cleaned)?;
        let d = self.feature_size();
        let mut x = DMatrix::zeros(epochs.len(), d);
        for (i, ep) in epochs.iter().enumerate() {
            x.row_mut(i)
                .copy_from_slice(&crate::features::build_feature_vector(&ep.data));
        }
        let scores = self.lda.score_rows(&minmax_apply_rows(&self.scaling, &x)?)?;
        Ok(epochs.into_iter().map(|e| e.event).zip(scores).collect())
    }

    /// Scores of a labeled dataset built with this model's preprocessing.
    pub fn score_dataset(&self, data: &LabeledDataset) -> Result<Vec<f64>> {
        self.lda.score_rows(&minmax_apply_rows(&self.scaling, &data.vectors)?)
    }
}

/// Fit scaling on `data` and train the discriminant on the scaled vectors.
pub fn fit_classifier(data: &LabeledDataset, shrinkage: f64) -> Result<(ScalingParams, LdaModel)> {
    let scaling = minmax_fit(&data.vectors)?;
    let scaled = minmax_apply_rows(&scaling, &data.vectors)?;
    let model = lda::train(&scaled, &data.labels, shrinkage)?;
    Ok((scaling, model))
}

/// Diagnostics printed after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub positives: usize,
    pub feature_size: usize,
    pub channels: Vec<String>,
    pub ica_components_removed: usize,
    pub fisher_j: f64,
    /// Share of training runs whose highest-scoring epoch is the target.
    pub run_accuracy: f64,
}

/// Per-run argmax accuracy of `scores` over `data`.
pub fn run_accuracy(data: &LabeledDataset, scores: &[f64]) -> f64 {
    use std::collections::BTreeMap;
    let mut runs: BTreeMap<(u32, u32), (f64, bool)> = BTreeMap::new();
    for (i, p) in data.provenance.iter().enumerate() {
        let entry = runs.entry((p.session, p.run)).or_insert((f64::NEG_INFINITY, false));
        if scores[i] > entry.0 {
            *entry = (scores[i], data.labels[i]);
        }
    }
    if runs.is_empty() {
        return 0.0;
    }
    runs.values().filter(|(_, hit)| *hit).count() as f64 / runs.len() as f64
}

/// Leave-sessions-out AUC: sessions are split into `folds` groups, each
/// scored by a classifier trained on the others.
pub fn cross_validated_auc(data: &LabeledDataset, folds: usize, shrinkage: f64) -> Result<f64> {
    let mut sessions: Vec<u32> = data.provenance.iter().map(|p| p.session).collect();
    sessions.sort_unstable();
    sessions.dedup();
    let folds = folds.min(sessions.len());
    if folds < 2 {
        return Err(Error::Validation("cross-validation needs at least two sessions".into()));
    }
    let mut scores = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for f in 0..folds {
        let held: Vec<u32> = sessions.iter().copied().skip(f).step_by(folds).collect();
        let train = data.subset(|p| !held.contains(&p.session));
        let test = data.subset(|p| held.contains(&p.session));
        let (scaling, model) = fit_classifier(&train, shrinkage)?;
        scores.extend(model.score_rows(&minmax_apply_rows(&scaling, &test.vectors)?)?);
        labels.extend(test.labels.iter().copied());
    }
    lda::auc(&scores, &labels)
}

/// Full training step on an acquired scenario record.
pub fn train_from_record<R: Rng + ?Sized>(
    record: &EegRecord,
    pipeline: &PipelineConfig,
    shrinkage: f64,
    rng: &mut R,
) -> Result<(TrainedModel, LabeledDataset, TrainingSummary)> {
    let (data, preprocessor) = dataset_from_scenario(record, pipeline, rng)?;
    let (scaling, lda_model) = fit_classifier(&data, shrinkage)?;
    let model = TrainedModel {
        rate: record.rate(),
        preprocessor,
        scaling,
        lda: lda_model,
    };
    let scores = model.score_dataset(&data)?;
    let summary = TrainingSummary {
        epochs: data.len(),
        positives: data.n_positive(),
        feature_size: data.feature_size(),
        channels: model.preprocessor.channels.labels().to_vec(),
        ica_components_removed: model
            .preprocessor
            .artifacts
            .as_ref()
            .map_or(0, |a| a.mask.iter().filter(|&&m| m).count()),
        fisher_j: lda::fisher_criterion_direction(
            &model.lda.weights,
            &minmax_apply_rows(&model.scaling, &data.vectors)?,
            &data.labels,
        )?,
        run_accuracy: run_accuracy(&data, &scores),
    };
    Ok((model, data, summary))
}

/// Prescribed image for each training session: every image in turn.
pub fn default_session_targets(timing: &TimingConfig) -> Vec<u8> {
    (0..timing.sessions_per_scenario)
        .map(|s| (s % timing.images) as u8)
        .collect()
}

/// Simulates the training scenario and trains on it.
pub fn run_offline_training<R: Rng + ?Sized>(
    subject: &SubjectParams,
    timing: &TimingConfig,
    pipeline: &PipelineConfig,
    shrinkage: f64,
    rng: &mut R,
) -> Result<(TrainedModel, EegRecord, TrainingSummary)> {
    let schedule = build_scenario_schedule(timing, DEFAULT_RATE, &default_session_targets(timing), rng)?;
    let record = simulate_subject(&schedule, &ChannelSet::default(), subject, rng)?;
    let (model, _, summary) = train_from_record(&record, pipeline, shrinkage, rng)?;
    Ok((model, record, summary))
}

/// Schedule as the subject experiences it: flashes of `target` are attended.
pub fn attended(schedule: &ScenarioSchedule, target: u8) -> ScenarioSchedule {
    let mut s = schedule.clone();
    for e in &mut s.events {
        e.event.is_target = Some(e.event.image_id == target);
    }
    s
}

/// Amplifier side: simulate the subject on `schedule` and return the record
/// as transmitted (markers carry no target information when `blind`).
pub fn acquire(
    schedule: &ScenarioSchedule,
    subject: &SubjectParams,
    subject_seed: u64,
    blind: bool,
) -> Result<EegRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let record = simulate_subject(schedule, &ChannelSet::default(), subject, &mut rng)?;
    if !blind {
        return Ok(record);
    }
    let markers = record
        .markers()
        .iter()
        .map(|m| StimulusEvent { is_target: None, ..*m })
        .collect();
    record.with_markers(markers)
}

/// Consumer side: per-trial scores, winners and the voted selection.
pub fn decide(
    model: &TrainedModel,
    record: &EegRecord,
    timing: &TimingConfig,
    catalog: &ObjectCatalog,
) -> Result<SelectionResult> {
    let scored = model.score_record(record)?;
    let n_trials = scored
        .iter()
        .map(|(e, _)| e.run_index as usize + 1)
        .max()
        .ok_or_else(|| Error::Validation("online record has no markers".into()))?;
    let mut per_image_scores = vec![vec![f64::NAN; timing.images]; n_trials];
    for (ev, s) in &scored {
        per_image_scores[ev.run_index as usize][usize::from(ev.image_id)] = *s;
    }
    let trial_winners = per_image_scores
        .iter()
        .map(|row| trial_winner(row))
        .collect::<Result<Vec<_>>>()?;
    let selected = majority_vote(&trial_winners, &per_image_scores)?;
    let d = durations(timing);
    let n = n_trials as f64;
    Ok(SelectionResult {
        trial_winners,
        per_image_scores,
        selected,
        latency: n * d.run + (n - 1.0) * timing.d_run_interval,
        message: catalog.message(selected).to_string(),
    })
}

/// Online record with ground-truth labels, kept for retraining.
pub fn label_for_logging(record: &EegRecord, target: u8, session: u32) -> Result<EegRecord> {
    let markers = record
        .markers()
        .iter()
        .map(|m| StimulusEvent {
            is_target: Some(m.image_id == target),
            session_index: session,
            ..*m
        })
        .collect();
    record.clone().with_markers(markers)
}

/// `Write` half of an in-process byte pipe.
pub struct PipeWriter(SyncSender<Vec<u8>>);

/// `Read` half of an in-process byte pipe.
pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    current: Vec<u8>,
    pos: usize,
}

/// Bounded in-process byte stream; the reader sees end-of-file once the
/// writer is dropped.
pub fn pipe(capacity: usize) -> (PipeWriter, PipeReader) {
    let (tx, rx) = sync_channel(capacity);
    (
        PipeWriter(tx),
        PipeReader {
            rx,
            current: Vec::new(),
            pos: 0,
        },
    )
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0
            .send(buf.to_vec())
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "reader closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Read for PipeReader {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        while self.pos == self.current.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.current = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.current.len() - self.pos);
        buf[..n].copy_from_slice(&self.current[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Runs `produce` on its own thread writing into a pipe while `consume`
/// reads from it. A producer failure takes precedence over the consumer's
/// resulting truncation error.
pub fn run_streamed<T, P, C>(produce: P, consume: C) -> Result<T>
where
    P: FnOnce(&mut PipeWriter) -> Result<()> + Send,
    C: FnOnce(&mut RecordReader<PipeReader>) -> Result<T>,
{
    let (mut writer, reader) = pipe(256);
    std::thread::scope(|scope| {
        let producer = scope.spawn(move || {
            let res = produce(&mut writer);
            drop(writer);
            res
        });
        let mut reader = RecordReader::new(reader);
        let consumed = consume(&mut reader);
        // Unblock a producer still writing after a consumer failure.
        drop(reader);
        let produced = producer
            .join()
            .unwrap_or_else(|_| Err(Error::Protocol("producer thread panicked".into())));
        match (produced, consumed) {
            (Err(e), Err(_)) => Err(e),
            (_, c) => c,
        }
    })
}

/// One online selection: flashes `n_trials` random runs while the subject
/// attends `target`, streams the acquisition through the wire protocol and
/// votes. Also returns the labeled record for later retraining.
#[allow(clippy::too_many_arguments)]
pub fn run_online_selection<R: Rng + ?Sized>(
    model: &TrainedModel,
    subject: &SubjectParams,
    timing: &TimingConfig,
    catalog: &ObjectCatalog,
    target: u8,
    n_trials: usize,
    lead_in: f64,
    rng: &mut R,
) -> Result<(SelectionResult, EegRecord)> {
    if n_trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let schedule = build_online_trial_schedule(timing, model.rate, n_trials, rng)?.shifted(lead_in)?;
    let subject_seed: u64 = rng.random();
    let subject_view = attended(&schedule, target);
    run_streamed(
        |w| {
            let record = acquire(&subject_view, subject, subject_seed, true)?;
            write_record(w, &record, STREAM_CHUNK)
        },
        |r| {
            let record = r.expect_record()?;
            let result = decide(model, &record, timing, catalog)?;
            Ok((result, label_for_logging(&record, target, 0)?))
        },
    )
}

/// Retrains scaling and discriminant on logged online records, keeping the
/// channel set, filter and artifact filter of `base`.
pub fn retrain_from_online(logged: &[EegRecord], base: &TrainedModel, shrinkage: f64) -> Result<TrainedModel> {
    if logged.is_empty() {
        return Err(Error::Validation("no logged online records".into()));
    }
    let parts = logged
        .iter()
        .map(|r| {
            let cleaned = base.preprocessor.transform(r)?;
            base.preprocessor.dataset(&cleaned)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = LabeledDataset::concat(&parts)?;
    let pos = data.n_positive();
    if pos < 2 || data.len() - pos < 2 {
        return Err(Error::Validation(format!(
            "retraining needs ≥ 2 examples per class, have {pos} targets and {} non-targets",
            data.len() - pos
        )));
    }
    let (scaling, lda_model) = fit_classifier(&data, shrinkage)?;
    Ok(TrainedModel {
        rate: base.rate,
        preprocessor: base.preprocessor.clone(),
        scaling,
        lda: lda_model,
    })
}

/// Everything that determines an end-to-end evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub seed: u64,
    pub rate: f64,
    pub timing: TimingConfig,
    /// Subject during training acquisition.
    pub subject: SubjectParams,
    /// Marker-to-response delay during online use, seconds.
    pub online_offset: f64,
    pub pipeline: PipelineConfig,
    pub shrinkage: f64,
    pub n_trials: usize,
    /// Selections of each object per phase.
    pub repetitions: usize,
    /// Signal recorded before the first online flash, seconds.
    pub lead_in: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            seed: 2016,
            rate: DEFAULT_RATE,
            timing: TimingConfig::default(),
            subject: SubjectParams::default(),
            online_offset: 0.1,
            pipeline: PipelineConfig::default(),
            shrinkage: DEFAULT_SHRINKAGE,
            n_trials: 3,
            repetitions: 10,
            lead_in: 3.0,
        }
    }
}

impl EvaluationConfig {
    pub fn online_subject(&self) -> SubjectParams {
        SubjectParams {
            constant_offset: self.online_offset,
            ..self.subject.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        self.subject.validate()?;
        if self.n_trials == 0 || self.repetitions == 0 {
            return Err(Error::Config("n_trials and repetitions must be ≥ 1".into()));
        }
        if !(self.lead_in >= 0.0) {
            return Err(Error::Config("lead_in must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// One scheduled online selection.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedSelection {
    pub target: u8,
    /// Blind schedule, already delayed by the lead-in.
    pub schedule: ScenarioSchedule,
    pub subject_seed: u64,
}

/// Every acquisition of an evaluation, derived from the seed alone so the
/// amplifier and session sides agree without communicating.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPlan {
    pub training: ScenarioSchedule,
    pub training_seed: u64,
    pub phase1: Vec<PlannedSelection>,
    pub phase2: Vec<PlannedSelection>,
}

/// RNG stream identifiers derived from the evaluation seed.
const STREAM_SCHEDULE: u64 = 0;
const STREAM_SUBJECT: u64 = 1;
const STREAM_ENGINE: u64 = 2;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random source of the session engine (ICA initialisation) for `seed`.
pub fn engine_rng(seed: u64) -> ChaCha8Rng {
    seeded(seed, STREAM_ENGINE)
}

impl EvaluationPlan {
    pub fn new(config: &EvaluationConfig) -> Result<Self> {
        config.validate()?;
        let mut sched_rng = seeded(config.seed, STREAM_SCHEDULE);
        let mut subj_rng = seeded(config.seed, STREAM_SUBJECT);
        let timing = &config.timing;
        let training = build_scenario_schedule(timing, config.rate, &default_session_targets(timing), &mut sched_rng)?;
        let training_seed = subj_rng.random();
        let targets: Vec<u8> = (0..config.repetitions).flat_map(|_| 0..timing.images as u8).collect();

        // Phase 1 replays the training flash order.
        let runs = training.run_sequences();
        let mut next_run = 0;
        let mut phase1 = Vec::with_capacity(targets.len());
        for &target in &targets {
            let seqs: Vec<Vec<u8>> = (0..config.n_trials)
                .map(|t| runs[(next_run + t) % runs.len()].clone())
                .collect();
            next_run += config.n_trials;
            let schedule = online_schedule_from_sequences(timing, config.rate, &seqs)?.shifted(config.lead_in)?;
            phase1.push(PlannedSelection {
                target,
                schedule,
                subject_seed: subj_rng.random(),
            });
        }
        let mut phase2 = Vec::with_capacity(targets.len());
        for &target in &targets {
            let schedule = build_online_trial_schedule(timing, config.rate, config.n_trials, &mut sched_rng)?
                .shifted(config.lead_in)?;
            phase2.push(PlannedSelection {
                target,
                schedule,
                subject_seed: subj_rng.random(),
            });
        }
        Ok(Self {
            training,
            training_seed,
            phase1,
            phase2,
        })
    }
}

/// Amplifier side of an evaluation: writes the training record followed by
/// every online record, in plan order. With `speed` set, samples are paced
/// at that multiple of real time.
pub fn produce_evaluation<W: Write>(
    config: &EvaluationConfig,
    plan: &EvaluationPlan,
    out: &mut W,
    speed: Option<f64>,
) -> Result<()> {
    let mut send = |record: &EegRecord| match speed {
        Some(s) => write_record_paced(out, record, STREAM_CHUNK, s),
        None => write_record(out, record, STREAM_CHUNK),
    };
    send(&acquire(&plan.training, &config.subject, plan.training_seed, false)?)?;
    let online = config.online_subject();
    for sel in plan.phase1.iter().chain(&plan.phase2) {
        send(&acquire(
            &attended(&sel.schedule, sel.target),
            &online,
            sel.subject_seed,
            true,
        )?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRow {
    pub image_id: u8,
    pub label: String,
    pub correct: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub target: u8,
    pub selected: u8,
    pub trial_winners: Vec<u8>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub mean_latency_s: f64,
    pub max_latency_s: f64,
    pub objects: Vec<ObjectRow>,
    pub selections: Vec<SelectionLog>,
}

impl PhaseReport {
    fn from_results(results: &[(u8, SelectionResult)], catalog: &ObjectCatalog) -> Self {
        let mut objects: Vec<ObjectRow> = catalog
            .entries()
            .iter()
            .map(|e| ObjectRow {
                image_id: e.image_id,
                label: e.label.clone(),
                correct: 0,
                attempts: 0,
            })
            .collect();
        let mut selections = Vec::with_capacity(results.len());
        for (target, r) in results {
            let row = &mut objects[usize::from(*target)];
            row.attempts += 1;
            if r.selected == *target {
                row.correct += 1;
            }
            selections.push(SelectionLog {
                target: *target,
                selected: r.selected,
                trial_winners: r.trial_winners.clone(),
                message: r.message.clone(),
            });
        }
        let correct = objects.iter().map(|o| o.correct).sum();
        let total = results.len();
        let latencies: Vec<f64> = results.iter().map(|(_, r)| r.latency).collect();
        Self {
            correct,
            total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            mean_latency_s: latencies.iter().sum::<f64>() / total.max(1) as f64,
            max_latency_s: latencies.iter().copied().fold(0.0, f64::max),
            objects,
            selections,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainingSummary {
    pub records: usize,
    pub epochs: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub training_s: f64,
    pub total_s: f64,
}

/// Result of [`run_full_evaluation`]; serialises to the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub config: EvaluationConfig,
    pub training: TrainingSummary,
    /// Phase-1 model under the online timing mismatch.
    pub phase1: PhaseReport,
    pub retraining: RetrainingSummary,
    /// Phase-2 model, fresh flash sequences: the headline result.
    pub phase2: PhaseReport,
    pub wall_clock: WallClock,
}

impl EvaluationReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// Copy with wall-clock timings zeroed, for reproducibility comparisons.
    pub fn without_wall_clock(&self) -> Self {
        Self {
            wall_clock: WallClock {
                training_s: 0.0,
                total_s: 0.0,
            },
            ..self.clone()
        }
    }
}

/// Session side of an evaluation, pulling records from `source` in plan order.
pub fn consume_evaluation<R: Read>(
    config: &EvaluationConfig,
    plan: &EvaluationPlan,
    catalog: &ObjectCatalog,
    source: &mut RecordReader<R>,
) -> Result<EvaluationReport> {
    let start = Instant::now();
    let mut rng = engine_rng(config.seed);
    let training_record = source.expect_record()?;
    if training_record.markers().len() != plan.training.events.len() {
        return Err(Error::Protocol(format!(
            "training stream carries {} markers, plan has {}",
            training_record.markers().len(),
            plan.training.events.len()
        )));
    }
    let (phase1_model, _, training) =
        train_from_record(&training_record, &config.pipeline, config.shrinkage, &mut rng)?;
    let training_s = start.elapsed().as_secs_f64();
    log::info!(
        "phase-1 model: {} epochs, {} features, training run accuracy {:.3}",
        training.epochs,
        training.feature_size,
        training.run_accuracy
    );

    let mut phase1_results = Vec::with_capacity(plan.phase1.len());
    let mut logged = Vec::with_capacity(plan.phase1.len());
    for (i, sel) in plan.phase1.iter().enumerate() {
        let record = source.expect_record()?;
        let result = decide(&phase1_model, &record, &config.timing, catalog)?;
        logged.push(label_for_logging(&record, sel.target, i as u32)?);
        phase1_results.push((sel.target, result));
    }
    let phase1 = PhaseReport::from_results(&phase1_results, catalog);
    log::info!("phase 1: {}/{} correct", phase1.correct, phase1.total);

    let phase2_model = retrain_from_online(&logged, &phase1_model, config.shrinkage)?;
    let retraining = RetrainingSummary {
        records: logged.len(),
        epochs: logged.iter().map(|r| r.markers().len()).sum(),
        positives: logged
            .iter()
            .flat_map(|r| r.markers())
            .filter(|m| m.is_target == Some(true))
            .count(),
    };

    let mut phase2_results = Vec::with_capacity(plan.phase2.len());
    for sel in &plan.phase2 {
        let record = source.expect_record()?;
        phase2_results.push((sel.target, decide(&phase2_model, &record, &config.timing, catalog)?));
    }
    let phase2 = PhaseReport::from_results(&phase2_results, catalog);
    log::info!("phase 2: {}/{} correct", phase2.correct, phase2.total);

    Ok(EvaluationReport {
        seed: config.seed,
        config: config.clone(),
        training,
        phase1,
        retraining,
        phase2,
        wall_clock: WallClock {
            training_s,
            total_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Train → online with mismatch → retrain → online, with the amplifier
/// running concurrently on its own thread behind the wire protocol.
pub fn run_full_evaluation(config: &EvaluationConfig, catalog: &ObjectCatalog) -> Result<EvaluationReport> {
    let plan = EvaluationPlan::new(config)?;
    run_streamed(
        |w| produce_evaluation(config, &plan, w, None),
        |r| consume_evaluation(config, &plan, catalog, r),
    )
}

//! Block-random flash sequences and scenario timing.
//!
//! A run flashes every image once in random order; a session shows the
//! prescribed image for `d_inf` seconds and then performs its runs separated
//! by `d_run_interval`; a scenario opens with `d_adapt` seconds of adaptation
//! followed by one session per prescribed image.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{time_to_sample, StimulusEvent, N_IMAGES};

/// Protocol durations in seconds and repetition counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub d_flash: f64,
    pub d_no_flash: f64,
    pub d_run_interval: f64,
    pub d_inf: f64,
    pub d_adapt: f64,
    pub runs_per_session: usize,
    pub sessions_per_scenario: usize,
    pub images: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            d_flash: 0.2,
            d_no_flash: 0.1,
            d_run_interval: 0.2,
            d_inf: 3.0,
            d_adapt: 10.0,
            runs_per_session: 6,
            sessions_per_scenario: 12,
            images: N_IMAGES,
        }
    }
}

/// Derived run, session and scenario durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Durations {
    pub run: f64,
    pub session: f64,
    pub scenario: f64,
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("d_flash", self.d_flash),
            ("d_no_flash", self.d_no_flash),
            ("d_run_interval", self.d_run_interval),
            ("d_inf", self.d_inf),
            ("d_adapt", self.d_adapt),
        ];
        for (name, value) in named {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} = {value} must be positive")));
            }
        }
        if self.runs_per_session == 0 || self.sessions_per_scenario == 0 || self.images == 0 {
            return Err(Error::Config("run, session and image counts must be ≥ 1".into()));
        }
        if self.images > N_IMAGES {
            return Err(Error::Config(format!(
                "at most {N_IMAGES} images supported, got {}",
                self.images
            )));
        }
        Ok(())
    }

    /// Onset-to-onset spacing of flashes within a run.
    pub fn isi(&self) -> f64 {
        self.d_flash + self.d_no_flash
    }
}

pub fn durations(timing: &TimingConfig) -> Durations {
    let run = timing.isi() * timing.images as f64;
    let runs = timing.runs_per_session as f64;
    let session = timing.d_inf + runs * run + (runs - 1.0) * timing.d_run_interval;
    let scenario = timing.d_adapt + timing.sessions_per_scenario as f64 * session;
    Durations { run, session, scenario }
}

/// A flash together with its onset time in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledEvent {
    pub onset_s: f64,
    pub event: StimulusEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSchedule {
    pub timing: TimingConfig,
    pub rate: f64,
    pub events: Vec<ScheduledEvent>,
    /// Prescribed image per session; empty for blind online schedules.
    pub session_targets: Vec<u8>,
    /// Seconds from time zero to the end of the last run.
    pub span: f64,
}

impl ScenarioSchedule {
    pub fn stimulus_events(&self) -> Vec<StimulusEvent> {
        self.events.iter().map(|e| e.event).collect()
    }

    pub fn n_targets(&self) -> usize {
        self.events.iter().filter(|e| e.event.is_target == Some(true)).count()
    }

    /// Delays every event by `offset` seconds, recomputing onset samples.
    pub fn shifted(&self, offset: f64) -> Result<ScenarioSchedule> {
        let mut out = self.clone();
        for e in &mut out.events {
            e.onset_s += offset;
            e.event.onset_sample = time_to_sample(e.onset_s, self.rate)?;
        }
        out.span += offset;
        Ok(out)
    }

    /// Flash order of each run, in schedule order.
    pub fn run_sequences(&self) -> Vec<Vec<u8>> {
        let mut runs: Vec<Vec<u8>> = Vec::new();
        let mut key = None;
        for e in &self.events {
            let k = (e.event.session_index, e.event.run_index);
            if key != Some(k) {
                runs.push(Vec::new());
                key = Some(k);
            }
            runs.last_mut().unwrap().push(e.event.image_id);
        }
        runs
    }

    /// Writes one line per event:
    /// `onset_s onset_sample image_id run session is_target`.
    pub fn write_event_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "onset_s\tonset_sample\timage_id\trun\tsession\tis_target")?;
        for e in &self.events {
            let target = match e.event.is_target {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            };
            writeln!(
                out,
                "{:.4}\t{}\t{}\t{}\t{}\t{}",
                e.onset_s, e.event.onset_sample, e.event.image_id, e.event.run_index, e.event.session_index, target
            )?;
        }
        Ok(())
    }
}

/// Random permutation of `0..images` whose first element differs from
/// `previous_last`.
pub fn generate_run_sequence<R: Rng + ?Sized>(rng: &mut R, images: usize, previous_last: Option<u8>) -> Vec<u8> {
    let mut seq: Vec<u8> = (0..images as u8).collect();
    loop {
        seq.shuffle(rng);
        // A single image cannot avoid repeating itself.
        if images < 2 || Some(seq[0]) != previous_last {
            return seq;
        }
    }
}

/// Full training scenario: `sessions × runs × images` flashes.
pub fn build_scenario_schedule<R: Rng + ?Sized>(
    timing: &TimingConfig,
    rate: f64,
    session_targets: &[u8],
    rng: &mut R,
) -> Result<ScenarioSchedule> {
    timing.validate()?;
    if session_targets.len() != timing.sessions_per_scenario {
        return Err(Error::Config(format!(
            "{} session targets given for {} sessions",
            session_targets.len(),
            timing.sessions_per_scenario
        )));
    }
    if let Some(&bad) = session_targets.iter().find(|&&t| usize::from(t) >= timing.images) {
        return Err(Error::Config(format!("session target {bad} is not a valid image")));
    }
    let d = durations(timing);
    let mut events = Vec::with_capacity(timing.sessions_per_scenario * timing.runs_per_session * timing.images);
    let mut previous = None;
    for (session, &target) in session_targets.iter().enumerate() {
        let session_start = timing.d_adapt + session as f64 * d.session + timing.d_inf;
        for run in 0..timing.runs_per_session {
            let run_start = session_start + run as f64 * (d.run + timing.d_run_interval);
            let sequence = generate_run_sequence(rng, timing.images, previous);
            previous = sequence.last().copied();
            for (i, &image_id) in sequence.iter().enumerate() {
                let onset_s = run_start + i as f64 * timing.isi();
                events.push(ScheduledEvent {
                    onset_s,
                    event: StimulusEvent {
                        image_id,
                        onset_sample: time_to_sample(onset_s, rate)?,
                        run_index: run as u32,
                        session_index: session as u32,
                        is_target: Some(image_id == target),
                    },
                });
            }
        }
    }
    Ok(ScenarioSchedule {
        timing: *timing,
        rate,
        events,
        session_targets: session_targets.to_vec(),
        span: d.scenario,
    })
}

/// Online trials: `n_trials` runs back to back, targets unknown.
pub fn build_online_trial_schedule<R: Rng + ?Sized>(
    timing: &TimingConfig,
    rate: f64,
    n_trials: usize,
    rng: &mut R,
) -> Result<ScenarioSchedule> {
    let mut sequences = Vec::with_capacity(n_trials);
    let mut previous = None;
    for _ in 0..n_trials {
        let seq = generate_run_sequence(rng, timing.images, previous);
        previous = seq.last().copied();
        sequences.push(seq);
    }
    online_schedule_from_sequences(timing, rate, &sequences)
}

/// Online trials replaying given flash orders (one per trial).
pub fn online_schedule_from_sequences(
    timing: &TimingConfig,
    rate: f64,
    sequences: &[Vec<u8>],
) -> Result<ScenarioSchedule> {
    timing.validate()?;
    if sequences.is_empty() {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let d = durations(timing);
    let mut events = Vec::new();
    for (trial, seq) in sequences.iter().enumerate() {
        let mut seen = vec![false; timing.images];
        for &id in seq {
            let slot = seen.get_mut(usize::from(id));
            match slot {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(Error::Config(format!(
                        "trial {trial} is not a permutation of the images"
                    )))
                }
            }
        }
        if seq.len() != timing.images {
            return Err(Error::Config(format!(
                "trial {trial} is not a permutation of the images"
            )));
        }
        let trial_start = trial as f64 * (d.run + timing.d_run_interval);
        for (i, &image_id) in seq.iter().enumerate() {
            let onset_s = trial_start + i as f64 * timing.isi();
            events.push(ScheduledEvent {
                onset_s,
                event: StimulusEvent {
                    image_id,
                    onset_sample: time_to_sample(onset_s, rate)?,
                    run_index: trial as u32,
                    session_index: 0,
                    is_target: None,
                },
            });
        }
    }
    let n = sequences.len() as f64;
    Ok(ScenarioSchedule {
        timing: *timing,
        rate,
        events,
        session_targets: Vec::new(),
        span: n * d.run + (n - 1.0) * timing.d_run_interval,
    })
}

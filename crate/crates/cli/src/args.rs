use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use p300_core::EvaluationConfig;

#[derive(Debug, Parser)]
#[command(
    name = "p300",
    version,
    about = "Simulated closed-loop P300 brain-computer interface"
)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record the training scenario from the simulated subject.
    Simulate {
        /// Output record file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the tab-separated event table here.
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit preprocessing and the discriminant on a recorded scenario.
    Train {
        #[arg(long)]
        record: PathBuf,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Folds (groups of sessions) for the cross-validated AUC; 0 skips it.
        #[arg(long, default_value_t = 4)]
        cv_folds: usize,
        /// Export the labeled feature vectors as CSV.
        #[arg(long)]
        features_csv: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Make one online selection with a trained model.
    Select {
        #[arg(long)]
        model: PathBuf,
        /// Image the simulated subject attends.
        #[arg(long)]
        target: u8,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train, select with timing mismatch, retrain, select again.
    Evaluate {
        /// Output report file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summarise a record, model or report file.
    Inspect {
        path: PathBuf,
        /// Print every marker of a record.
        #[arg(long)]
        events: bool,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the amplifier and the session engine as separate processes.
    Stream {
        #[command(subcommand)]
        mode: StreamMode,
    },
}

#[derive(Debug, Subcommand)]
pub enum StreamMode {
    /// Amplifier side: wait for one session engine and stream every
    /// acquisition of the evaluation to it.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7300")]
        listen: String,
        /// Multiple of real time; omit to stream as fast as possible.
        #[arg(long)]
        speed: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Session side: connect to an amplifier and run the evaluation.
    Connect {
        #[arg(long, default_value = "127.0.0.1:7300")]
        connect: String,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 10.0)]
        wait: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Configuration file plus per-field overrides; flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,

    // timing
    #[arg(long)]
    pub d_flash: Option<f64>,
    #[arg(long)]
    pub d_no_flash: Option<f64>,
    #[arg(long)]
    pub runs_per_session: Option<usize>,
    #[arg(long)]
    pub sessions_per_scenario: Option<usize>,

    // subject
    #[arg(long)]
    pub background_rms: Option<f64>,
    #[arg(long)]
    pub alpha_amp: Option<f64>,
    #[arg(long)]
    pub p300_amp: Option<f64>,
    #[arg(long)]
    pub p300_peak_latency: Option<f64>,
    #[arg(long)]
    pub blink_rate: Option<f64>,
    #[arg(long)]
    pub blink_amp: Option<f64>,
    #[arg(long)]
    pub nan_fraction: Option<f64>,
    #[arg(long)]
    pub latency_jitter_sd: Option<f64>,
    /// Marker-to-response delay during online use, seconds.
    #[arg(long)]
    pub online_offset: Option<f64>,

    // pipeline
    #[arg(long)]
    pub no_ica: bool,
    #[arg(long)]
    pub shrinkage: Option<f64>,
    #[arg(long)]
    pub nan_threshold: Option<f64>,
    #[arg(long)]
    pub window_length: Option<usize>,
    #[arg(long)]
    pub window_offset: Option<usize>,

    // online
    #[arg(long)]
    pub n_trials: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

impl RunArgs {
    pub fn apply(&self, c: &mut EvaluationConfig) {
        fn set<T: Copy>(dst: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *dst = v;
            }
        }
        set(&mut c.seed, self.seed);
        set(&mut c.timing.d_flash, self.d_flash);
        set(&mut c.timing.d_no_flash, self.d_no_flash);
        set(&mut c.timing.runs_per_session, self.runs_per_session);
        set(&mut c.timing.sessions_per_scenario, self.sessions_per_scenario);
        set(&mut c.subject.background_rms, self.background_rms);
        set(&mut c.subject.alpha_amp, self.alpha_amp);
        set(&mut c.subject.p300_amp, self.p300_amp);
        set(&mut c.subject.p300_peak_latency, self.p300_peak_latency);
        set(&mut c.subject.blink_rate, self.blink_rate);
        set(&mut c.subject.blink_amp, self.blink_amp);
        set(&mut c.subject.nan_fraction, self.nan_fraction);
        set(&mut c.subject.latency_jitter_sd, self.latency_jitter_sd);
        set(&mut c.online_offset, self.online_offset);
        if self.no_ica {
            c.pipeline.ica_enabled = false;
        }
        set(&mut c.shrinkage, self.shrinkage);
        set(&mut c.pipeline.nan_threshold, self.nan_threshold);
        set(&mut c.pipeline.window.length, self.window_length);
        set(&mut c.pipeline.window.start_offset, self.window_offset);
        set(&mut c.n_trials, self.n_trials);
        set(&mut c.repetitions, self.repetitions);
    }
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use p300_core::acquisition::{load_model, load_record, save_model, save_record, ModelFile, RecordReader, MAGIC};
use p300_core::scheduler::durations;
use p300_core::session::{
    acquire, consume_evaluation, cross_validated_auc, engine_rng, produce_evaluation, run_full_evaluation,
    run_online_selection, train_from_record, EvaluationPlan, PhaseReport,
};
use p300_core::{EegRecord, Error, EvaluationConfig, EvaluationReport, ObjectCatalog, N_IMAGES};
use serde::Serialize;

use crate::args::RunArgs;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    /// 0 ok, 1 usage, 2 data/format, 3 numeric, 4 protocol.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_) => 1,
                Error::Domain(_)
                | Error::Bounds(_)
                | Error::Validation(_)
                | Error::UnknownChannel(_)
                | Error::Format(_)
                | Error::Io { .. } => 2,
                Error::Rank { .. } | Error::NotConverged { .. } | Error::Numeric(_) => 3,
                Error::Protocol(_) | Error::Incomplete { .. } | Error::Version { .. } => 4,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| {
        CliError::Core(Error::Io {
            path: Some(path.to_path_buf()),
            source,
        })
    }
}

pub fn load_config(run: &RunArgs) -> CliResult<EvaluationConfig> {
    let mut config = match &run.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => EvaluationConfig::default(),
    };
    run.apply(&mut config);
    config.validate()?;
    Ok(config)
}

/// Configuration and seed recorded next to every artifact.
#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    seed: u64,
    config: &'a EvaluationConfig,
}

fn meta(config: &EvaluationConfig) -> Meta<'_> {
    Meta {
        tool: concat!("p300 ", env!("CARGO_PKG_VERSION")),
        seed: config.seed,
        config,
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.toml");
    PathBuf::from(name)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(io_err(path))
}

fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string(value).map_err(|e| Error::Format(e.to_string()).into())
}

pub fn simulate(out: &Path, events: Option<&Path>, run: &RunArgs) -> CliResult {
    let config = load_config(run)?;
    let plan = EvaluationPlan::new(&config)?;
    let record = acquire(&plan.training, &config.subject, plan.training_seed, false)?;
    save_record(&record, out)?;
    write_text(&sidecar(out), &to_toml(&meta(&config))?)?;
    if let Some(path) = events {
        let file = File::create(path).map_err(io_err(path))?;
        plan.training
            .write_event_table(BufWriter::new(file))
            .map_err(io_err(path))?;
    }
    let d = durations(&config.timing);
    println!("seed        {}", config.seed);
    println!("d_run       {:.3} s", d.run);
    println!("d_session   {:.3} s", d.session);
    println!("d_scenario  {:.3} s", d.scenario);
    println!(
        "events      {} ({} targets)",
        plan.training.events.len(),
        plan.training.n_targets()
    );
    println!(
        "record      {} channels × {} samples ({:.1} s at {} Hz) → {}",
        record.n_channels(),
        record.n_samples(),
        record.duration(),
        record.rate(),
        out.display()
    );
    Ok(())
}

pub fn train(
    record: &Path,
    model_path: &Path,
    cv_folds: usize,
    features_csv: Option<&Path>,
    run: &RunArgs,
) -> CliResult {
    let config = load_config(run)?;
    let record = load_record(record)?;
    let started = Instant::now();
    let mut rng = engine_rng(config.seed);
    let (model, data, summary) = train_from_record(&record, &config.pipeline, config.shrinkage, &mut rng)?;
    let elapsed = started.elapsed();

    let mut file = ModelFile::from_trained(&model);
    file.meta = Some(toml::Table::try_from(meta(&config)).map_err(|e| Error::Format(e.to_string()))?);
    save_model(&file, model_path)?;
    if let Some(path) = features_csv {
        let out = File::create(path).map_err(io_err(path))?;
        data.write_csv(BufWriter::new(out))?;
    }

    println!("seed            {}", config.seed);
    println!(
        "channels        {} ({})",
        summary.channels.len(),
        summary.channels.join(" ")
    );
    println!("epochs          {} ({} targets)", summary.epochs, summary.positives);
    println!("feature size    {}", summary.feature_size);
    println!("ICA removed     {} component(s)", summary.ica_components_removed);
    println!("Fisher J        {:.4}", summary.fisher_j);
    println!("run accuracy    {:.2}% (training set)", 100.0 * summary.run_accuracy);
    if cv_folds > 0 {
        match cross_validated_auc(&data, cv_folds, config.shrinkage) {
            Ok(auc) => println!("CV AUC          {auc:.4} ({cv_folds} session folds)"),
            Err(e) => log::warn!("cross-validation skipped: {e}"),
        }
    }
    println!("training time   {:.2} s", elapsed.as_secs_f64());
    println!("model           {}", model_path.display());
    Ok(())
}

pub fn select(model_path: &Path, target: u8, run: &RunArgs) -> CliResult {
    if usize::from(target) >= N_IMAGES {
        return Err(CliError::Usage(format!(
            "target must be below {N_IMAGES}, got {target}"
        )));
    }
    let config = load_config(run)?;
    let model = load_model(model_path)?.to_trained()?;
    let catalog = ObjectCatalog::default();
    let mut rng = engine_rng(config.seed);
    let (result, _) = run_online_selection(
        &model,
        &config.online_subject(),
        &config.timing,
        &catalog,
        target,
        config.n_trials,
        config.lead_in,
        &mut rng,
    )?;
    let names: Vec<&str> = result.trial_winners.iter().map(|&w| catalog.label(w)).collect();
    println!("attended      {} ({})", target, catalog.label(target));
    println!("trial winners {}", names.join(", "));
    println!("selected      {} ({})", result.selected, catalog.label(result.selected));
    println!("latency       {:.1} s", result.latency);
    println!("message       {}", result.message);
    Ok(())
}

fn print_phase(name: &str, p: &PhaseReport) {
    println!(
        "{name}: {}/{} correct ({:.2}%), mean latency {:.1} s, max {:.1} s",
        p.correct,
        p.total,
        100.0 * p.accuracy,
        p.mean_latency_s,
        p.max_latency_s
    );
}

pub fn print_report(report: &EvaluationReport) {
    let t = &report.training;
    println!("seed {}", report.seed);
    println!(
        "training: {} epochs ({} targets), {} features, J {:.3}, ICA removed {}, {:.2} s",
        t.epochs, t.positives, t.feature_size, t.fisher_j, t.ica_components_removed, report.wall_clock.training_s
    );
    println!();
    println!("{:>3}  {:<16} {:>8} {:>8}", "id", "object", "phase 1", "phase 2");
    for (a, b) in report.phase1.objects.iter().zip(&report.phase2.objects) {
        println!(
            "{:>3}  {:<16} {:>5}/{:<2} {:>5}/{:<2}",
            a.image_id, a.label, a.correct, a.attempts, b.correct, b.attempts
        );
    }
    println!();
    print_phase(
        &format!("phase 1 (online offset {:.2} s)", report.config.online_offset),
        &report.phase1,
    );
    println!(
        "retrained on {} online records ({} epochs, {} targets)",
        report.retraining.records, report.retraining.epochs, report.retraining.positives
    );
    print_phase("phase 2", &report.phase2);
    println!("wall clock {:.2} s", report.wall_clock.total_s);
}

fn finish_report(report: &EvaluationReport, path: Option<&Path>) -> CliResult {
    print_report(report);
    if let Some(path) = path {
        write_text(path, &report.to_toml()?)?;
        println!("report {}", path.display());
    }
    Ok(())
}

pub fn evaluate(report_path: Option<&Path>, run: &RunArgs) -> CliResult {
    let config = load_config(run)?;
    let report = run_full_evaluation(&config, &ObjectCatalog::default())?;
    finish_report(&report, report_path)
}

pub fn print_config(run: &RunArgs) -> CliResult {
    print!("{}", to_toml(&load_config(run)?)?);
    Ok(())
}

fn summarize_record(record: &EegRecord, events: bool) {
    let targets = record.markers().iter().filter(|m| m.is_target == Some(true)).count();
    let unlabeled = record.markers().iter().filter(|m| m.is_target.is_none()).count();
    println!("record: {} channels at {} Hz", record.n_channels(), record.rate());
    println!("samples: {} ({:.2} s)", record.n_samples(), record.duration());
    println!(
        "markers: {} ({} targets, {} unlabeled)",
        record.markers().len(),
        targets,
        unlabeled
    );
    println!("{:<6} {:>9} {:>7}", "chan", "rms µV", "NaN %");
    for (row, label) in record.channels().labels().iter().enumerate() {
        let values = record.channel(row);
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let rms = (finite.iter().map(|v| v * v).sum::<f64>() / finite.len().max(1) as f64).sqrt();
        let nan = 100.0 * (values.len() - finite.len()) as f64 / values.len().max(1) as f64;
        println!("{label:<6} {rms:>9.2} {nan:>7.2}");
    }
    if events {
        println!();
        println!("onset_sample\tonset_s\tsession\trun\timage_id\tis_target");
        for m in record.markers() {
            let target = match m.is_target {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            };
            println!(
                "{}\t{:.4}\t{}\t{}\t{}\t{}",
                m.onset_sample,
                m.onset_sample as f64 / record.rate(),
                m.session_index,
                m.run_index,
                m.image_id,
                target
            );
        }
    }
}

fn summarize_model(model: &ModelFile) {
    println!("model format {}", model.format_version);
    println!(
        "rate {} Hz, {} channels: {}",
        model.rate,
        model.channels.len(),
        model.channels.join(" ")
    );
    println!(
        "window {} samples from offset {}, band-pass order {} {}–{} Hz",
        model.window.length,
        model.window.start_offset,
        model.band_pass.order,
        model.band_pass.low_cut,
        model.band_pass.high_cut
    );
    println!(
        "LDA: {} weights, bias {:.6}, projected means {:.4} / {:.4}, shrinkage {}",
        model.lda.weights.len(),
        model.lda.bias,
        model.lda.mu_target,
        model.lda.mu_nontarget,
        model.lda.shrinkage
    );
    match &model.ica {
        Some(ica) => println!(
            "ICA: {} components, {} removed",
            ica.mask.len(),
            ica.mask.iter().filter(|&&m| m).count()
        ),
        None => println!("ICA: none"),
    }
    if let Some(seed) = model.meta.as_ref().and_then(|m| m.get("seed")) {
        println!("seed {seed}");
    }
}

pub fn inspect(path: &Path, events: bool) -> CliResult {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(&MAGIC) {
        summarize_record(&load_record(path)?, events);
        return Ok(());
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Format(format!("{} is not a record or TOML file", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if table.contains_key("format_version") {
        summarize_model(&ModelFile::from_toml(&text)?);
    } else if table.contains_key("phase2") {
        print_report(&EvaluationReport::from_toml(&text)?);
    } else if table.contains_key("config") {
        print!("{text}");
    } else {
        return Err(Error::Format(format!("{}: unrecognised TOML document", path.display())).into());
    }
    Ok(())
}

pub fn serve(listen: &str, speed: Option<f64>, run: &RunArgs) -> CliResult {
    if let Some(s) = speed {
        if !(s > 0.0 && s.is_finite()) {
            return Err(CliError::Usage(format!("--speed must be positive, got {s}")));
        }
    }
    let config = load_config(run)?;
    let plan = EvaluationPlan::new(&config)?;
    let listener = TcpListener::bind(listen).map_err(Error::from)?;
    eprintln!("amplifier listening on {}", listener.local_addr().map_err(Error::from)?);
    let (stream, peer) = listener.accept().map_err(Error::from)?;
    log::info!("session engine connected from {peer}");
    stream.set_nodelay(true).map_err(Error::from)?;
    let mut out = BufWriter::new(stream);
    produce_evaluation(&config, &plan, &mut out, speed)?;
    out.flush().map_err(Error::from)?;
    println!(
        "streamed {} records (seed {})",
        1 + plan.phase1.len() + plan.phase2.len(),
        config.seed
    );
    Ok(())
}

fn connect_with_retry(addr: &str, wait: f64) -> CliResult<TcpStream> {
    let deadline = Instant::now() + Duration::from_secs_f64(wait.max(0.0));
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                log::debug!("connect to {addr} failed ({e}); retrying");
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(Error::from(e).into()),
        }
    }
}

pub fn connect(addr: &str, wait: f64, report_path: Option<&Path>, run: &RunArgs) -> CliResult {
    let config = load_config(run)?;
    let plan = EvaluationPlan::new(&config)?;
    let stream = connect_with_retry(addr, wait)?;
    let mut reader = RecordReader::new(BufReader::new(stream));
    let report = consume_evaluation(&config, &plan, &ObjectCatalog::default(), &mut reader)?;
    if reader.next_record()?.is_some() {
        return Err(Error::Protocol("amplifier sent more records than planned".into()).into());
    }
    finish_report(&report, report_path)
}

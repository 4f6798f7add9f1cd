//! Subcommand bodies. Each takes a validated [`RunConfig`] and writes its
//! report to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use densenet_core::arch::plan_architecture;
use densenet_core::features::{append_deltas, apply_cmvn, compute_cmvn_stats};
use densenet_core::gradcheck::{check_layers, LayerCheck, TOLERANCE};
use densenet_core::train::{evaluate, fit, FitSummary};
use densenet_core::{CmvnStats, Evaluation, FrameSet, Model, UtteranceFeatures};

use crate::archive::{read_archive, read_cmvn, write_archive, write_cmvn, Archive};
use crate::checkpoint::{quantize_cmvn, Checkpoint};
use crate::config::{RunConfig, MODEL_KEYS};
use crate::error::{Error, Result};
use crate::fbank::LogMel;
use crate::manifest::{read_labels, Manifest};
use crate::metrics::{format_record, MetricsWriter};
use crate::wav::read_wav;

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(key, "no path given"))
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Prints the planned architecture and checks it against a built model.
pub fn inspect(cfg: &RunConfig, machine: bool, out: &mut dyn Write) -> Result<()> {
    let plan = plan_architecture(&cfg.model)?;
    let model: Model<f32> = Model::build(&cfg.model, cfg.train.seed)?;
    let counted = model.count_parameters().total;
    if counted != plan.total_params() {
        return Err(Error::Input(format!(
            "planned parameter total {} differs from the built model's {counted}",
            plan.total_params()
        )));
    }
    if machine {
        emit(out, &plan.machine_readable())
    } else {
        emit(out, &format!("{plan}\n"))
    }
}

fn filterbank_header(cfg: &RunConfig, channels: usize) -> Vec<(String, String)> {
    let mut h: Vec<(String, String)> = [
        "sample_rate",
        "frame_length_ms",
        "frame_shift_ms",
        "fft_size",
        "num_filters",
        "low_freq",
        "high_freq",
        "pre_emphasis",
        "log_floor",
    ]
    .iter()
    .map(|k| (k.to_string(), cfg.get(k).unwrap()))
    .collect();
    h.push(("window".into(), "hamming".into()));
    h.push(("channels".into(), channels.to_string()));
    h
}

fn featurize_entry(
    cfg: &RunConfig,
    logmel: &LogMel,
    entry: &crate::manifest::ManifestEntry,
) -> Result<UtteranceFeatures> {
    let (wave, rate) = read_wav(&entry.audio)?;
    if rate != cfg.filterbank.sample_rate {
        return Err(Error::Input(format!(
            "sample rate {rate} Hz differs from sample_rate={}",
            cfg.filterbank.sample_rate
        )));
    }
    let frames = logmel.compute(&wave)?;
    let mut feat = UtteranceFeatures::from_static(entry.id.clone(), frames, cfg.filterbank.num_filters)?;
    if cfg.model.input_channels == 3 {
        feat = append_deltas(&feat)?;
    }
    if let Some(lp) = &entry.labels {
        let labels = read_labels(lp)?;
        if labels.len() != feat.num_frames() {
            return Err(Error::Input(format!(
                "{}: {} labels for {} frames",
                lp.display(),
                labels.len(),
                feat.num_frames()
            )));
        }
        feat = feat.with_labels(labels)?;
    }
    Ok(feat)
}

/// Manifest → archive of un-normalized features plus corpus statistics.
pub fn featurize(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(required(&cfg.paths.manifest, "manifest")?)?;
    let archive = required(&cfg.paths.archive, "archive")?;
    let stats_path = cfg.paths.cmvn_stats.clone().unwrap_or_else(|| sibling(archive, ".cmvn"));
    let logmel = LogMel::new(&cfg.filterbank)?;
    let mut utts = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let feat = featurize_entry(cfg, &logmel, entry)
            .map_err(|e| Error::Input(format!("{}: {e}", manifest.locate(entry))))?;
        utts.push(feat);
    }
    let stats = compute_cmvn_stats(&utts)?;
    write_archive(archive, &filterbank_header(cfg, cfg.model.input_channels), &utts)?;
    write_cmvn(&stats_path, &stats)?;
    let frames: usize = utts.iter().map(|u| u.num_frames()).sum();
    emit(
        out,
        &format!(
            "wrote {} utterances ({frames} frames) to {}\nwrote statistics to {}\n",
            utts.len(),
            archive.display(),
            stats_path.display()
        ),
    )
}

/// Writes a labeled synthetic archive.
pub fn synthdata(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let archive = required(&cfg.paths.archive, "archive")?;
    let sc = cfg.synth_config();
    let utts = densenet_core::make_synthetic_dataset(&sc)?;
    let header = vec![
        ("generator".to_string(), "synthetic".to_string()),
        ("synth_classes".into(), sc.num_classes.to_string()),
        ("synth_frames_per_class".into(), sc.frames_per_class.to_string()),
        ("synth_separation".into(), sc.separation.to_string()),
        ("synth_utterance_frames".into(), sc.utterance_frames.to_string()),
        ("seed".into(), sc.seed.to_string()),
        ("channels".into(), sc.channels.to_string()),
    ];
    write_archive(archive, &header, &utts)?;
    let frames: usize = utts.iter().map(|u| u.num_frames()).sum();
    emit(out, &format!("wrote {} utterances ({frames} frames) to {}\n", utts.len(), archive.display()))
}

fn load_utterances(path: &Path, channels: usize, bins: usize, geometry: &str) -> Result<Vec<UtteranceFeatures>> {
    let Archive { utterances, .. } = read_archive(path)?;
    if utterances.is_empty() {
        return Err(Error::Input(format!("{}: archive holds no utterances", path.display())));
    }
    for u in &utterances {
        if (u.channels(), u.bins()) != (channels, bins) {
            return Err(Error::config(
                "input_channels",
                format!(
                    "{}: utterance `{}` has {} channels x {} bins; model expects {geometry}",
                    path.display(),
                    u.id(),
                    u.channels(),
                    u.bins()
                ),
            ));
        }
        if u.labels().is_none() {
            return Err(Error::Input(format!("{}: utterance `{}` has no labels", path.display(), u.id())));
        }
    }
    Ok(utterances)
}

fn normalize(utts: Vec<UtteranceFeatures>, stats: &CmvnStats) -> Result<Vec<UtteranceFeatures>> {
    utts.iter().map(|u| apply_cmvn(u, stats).map_err(Error::from)).collect()
}

/// Trains a model, writing the best checkpoint so far after each improving
/// epoch and one metrics record per epoch.
pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<FitSummary> {
    let m = &cfg.model;
    let train_path = cfg
        .paths
        .train_archive
        .as_deref()
        .or(cfg.paths.archive.as_deref())
        .ok_or_else(|| Error::config("train_archive", "no path given"))?;
    let ck_path = required(&cfg.paths.checkpoint, "checkpoint")?;
    let geometry = cfg.geometry();
    let train_utts = load_utterances(train_path, m.input_channels, m.input_width, &geometry)?;
    let stats = match &cfg.paths.cmvn_stats {
        Some(p) => read_cmvn(p)?,
        None => compute_cmvn_stats(&train_utts)?,
    };
    let stats = quantize_cmvn(&stats);
    let (cl, cr) = (cfg.context_left, cfg.context_right);
    let train_set = FrameSet::new(normalize(train_utts, &stats)?, cl, cr)?;
    let (train_set, valid_set) = match &cfg.paths.valid_archive {
        Some(p) => {
            let v = load_utterances(p, m.input_channels, m.input_width, &geometry)?;
            (train_set, Some(FrameSet::new(normalize(v, &stats)?, cl, cr)?))
        }
        None if cfg.holdout_fraction > 0.0 && train_set.utterances().len() >= 2 => {
            let (rest, held) = train_set.split_utterances(cfg.holdout_fraction, cfg.train.seed)?;
            (rest, Some(held))
        }
        None => (train_set, None),
    };

    let mut model: Model<f32> = Model::build(m, cfg.train.seed)?;
    let mut log = cfg.paths.metrics_log.as_deref().map(MetricsWriter::create).transpose()?;
    emit(
        out,
        &format!(
            "training {} depth {} on {} frames{}\n",
            m.variant,
            m.depth,
            train_set.len(),
            valid_set.as_ref().map(|v| format!(", validating on {}", v.len())).unwrap_or_default()
        ),
    )?;
    let started = Instant::now();
    let mut last = Instant::now();
    let summary = fit(&mut model, &train_set, valid_set.as_ref(), &cfg.train, |metrics, model, improved| {
        let mut metrics = metrics.clone();
        // Wall time would make otherwise identical logs differ.
        metrics.seconds = if cfg.train.deterministic { 0.0 } else { last.elapsed().as_secs_f64() };
        last = Instant::now();
        if let Some(w) = log.as_mut() {
            w.write(&metrics).map_err(|e| densenet_core::Error::Input(e.to_string()))?;
        }
        if improved {
            Checkpoint::capture(cfg, model, &stats)
                .save(ck_path)
                .map_err(|e| densenet_core::Error::Input(e.to_string()))?;
        }
        let mark = if improved { " *" } else { "" };
        emit(out, &format!("{}{mark}\n", format_record(&metrics)))
            .map_err(|e| densenet_core::Error::Input(e.to_string()))
    })?;
    let elapsed = if cfg.train.deterministic { String::new() } else { format!(" in {:.1}s", started.elapsed().as_secs_f64()) };
    emit(
        out,
        &format!(
            "stopped after {} epochs ({:?}){elapsed}; best loss {} at epoch {}; checkpoint {}\n",
            summary.epochs,
            summary.reason,
            summary.best_loss,
            summary.best_epoch,
            ck_path.display()
        ),
    )?;
    Ok(summary)
}

/// Rejects explicitly configured network keys that contradict the checkpoint.
fn check_against_checkpoint(cfg: &RunConfig, ck: &Checkpoint) -> Result<()> {
    let mut rc = RunConfig::default();
    rc.model = ck.model.clone();
    rc.context_left = ck.context_left;
    rc.context_right = ck.context_right;
    for key in MODEL_KEYS {
        if cfg.is_explicit(key) && cfg.get(key) != rc.get(key) {
            return Err(Error::config(
                *key,
                format!(
                    "config says {}={} but the checkpoint has {}; config geometry {}, checkpoint geometry {}",
                    key,
                    cfg.get(key).unwrap(),
                    rc.get(key).unwrap(),
                    cfg.geometry(),
                    ck.geometry()
                ),
            ));
        }
    }
    Ok(())
}

fn confusion_summary(ev: &Evaluation, limit: usize) -> String {
    let mut pairs: Vec<(u64, usize, usize)> = (0..ev.classes)
        .flat_map(|t| (0..ev.classes).map(move |p| (t, p)))
        .filter(|&(t, p)| t != p)
        .map(|(t, p)| (ev.count(t, p), t, p))
        .filter(|&(n, _, _)| n > 0)
        .collect();
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    if pairs.is_empty() {
        return "no confusions\n".into();
    }
    let mut s = String::from("most frequent confusions (reference -> predicted: frames)\n");
    for (n, t, p) in pairs.into_iter().take(limit) {
        s.push_str(&format!("  {t} -> {p}: {n}\n"));
    }
    s
}

/// Frame accuracy of a checkpoint on a labeled archive.
pub fn eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<Evaluation> {
    let ck = Checkpoint::load(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    check_against_checkpoint(cfg, &ck)?;
    let data_path = cfg
        .paths
        .eval_archive
        .as_deref()
        .or(cfg.paths.archive.as_deref())
        .ok_or_else(|| Error::config("eval_archive", "no path given"))?;
    let m = &ck.model;
    let utts = load_utterances(data_path, m.input_channels, m.input_width, &ck.geometry())?;
    let model = ck.to_model()?;
    let stats = ck.cmvn()?;
    let data = FrameSet::new(normalize(utts, &stats)?, ck.context_left, ck.context_right)?;
    let ev = evaluate(&model, &data, cfg.train.batch_size)?;
    let mut report = format!(
        "frames {}\ncorrect {}\naccuracy {:.6}\nerror {:.6}\nloss {:.6}\n",
        ev.total,
        ev.correct,
        ev.accuracy,
        ev.error_rate(),
        ev.loss
    );
    report.push_str(&confusion_summary(&ev, 10));
    emit(out, &report)?;
    Ok(ev)
}

/// Finite-difference check of every layer type and the assembled network.
pub fn gradcheck(cfg: &RunConfig, instances: usize, out: &mut dyn Write) -> Result<Vec<LayerCheck>> {
    let checks = check_layers(cfg.train.seed, instances)?;
    let mut report = format!("{:<22} {:>9} {:>7} {:>7} {:>12}  status\n", "layer", "instances", "probes", "skipped", "max_rel_err");
    for c in &checks {
        report.push_str(&format!(
            "{:<22} {:>9} {:>7} {:>7} {:>12.3e}  {}\n",
            c.layer,
            c.instances,
            c.probes,
            c.skipped,
            c.max_rel_err,
            if c.passed() { "ok" } else { "FAIL" }
        ));
    }
    emit(out, &report)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.layer).collect();
    if !failed.is_empty() {
        return Err(Error::Gradcheck(format!("{} (tolerance {TOLERANCE:e})", failed.join(", "))));
    }
    Ok(checks)
}

//! Command implementations. Each returns a serializable report; `main`
//! prints it as JSON on stdout and a short summary on stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use skmix_core::flops::sweep_sized;
use skmix_core::gradcheck::check_model;
use skmix_core::train::{train_loop, TrainObserver};
use skmix_core::{
    count_macs, ranking_report, EvalReport, ForwardHooks, FusionVariant, GradCheckReport, LossReport,
    ModelConfig, ParamStore, Precision, ScoreVector, ScoringTokenMode, SkatingMixer,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, load_features, write_synth, Dataset};
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.skck";
pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";

/// Settings shared by every command, after CLI overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub precision: Option<u32>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub train_manifest: String,
    pub test_manifest: String,
    pub train_videos: usize,
    pub test_videos: usize,
    pub sha256: String,
}

pub fn synth(cfg: &RunConfig) -> Result<SynthReport, CliError> {
    let out = write_synth(&cfg.output_dir, &cfg.synth, cfg.data.test_videos)?;
    Ok(SynthReport {
        train_manifest: out.train_manifest.display().to_string(),
        test_manifest: out.test_manifest.display().to_string(),
        train_videos: out.train_videos,
        test_videos: out.test_videos,
        sha256: out.sha256,
    })
}

/// Model config with head labels taken from the dataset when unset.
fn model_config_for(cfg: &RunConfig, data: &Dataset) -> Result<ModelConfig, CliError> {
    let mut m = cfg.model.clone();
    if data.labels.len() != m.heads {
        return Err(CliError::Config(format!(
            "model has {} heads but the dataset carries {} scores",
            m.heads,
            data.labels.len()
        )));
    }
    if m.labels.is_none() {
        m.labels = Some(data.labels.clone());
    }
    Ok(m)
}

struct LogObserver<'a> {
    log: &'a mut dyn Write,
    io_error: Option<std::io::Error>,
    start: Instant,
}

impl TrainObserver for LogObserver<'_> {
    fn now_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, report: &LossReport, _store: &ParamStore) -> bool {
        let line = serde_json::to_string(report).expect("report serializes");
        if let Err(e) = writeln!(self.log, "{line}") {
            self.io_error = Some(e);
            return false;
        }
        let heads: Vec<String> = report.heads.iter().map(|h| format!("{} {:.5}", h.label, h.mse)).collect();
        eprintln!(
            "epoch {:>4}  steps {:>6}  {}  ({:.1}s)",
            report.epoch + 1,
            report.steps,
            heads.join("  "),
            self.start.elapsed().as_secs_f64()
        );
        true
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub checkpoint: String,
    pub loss_log: String,
    pub epochs: usize,
    pub steps: u64,
    pub final_loss: LossReport,
}

/// Trains a freshly initialized model on `data`.
pub fn fit(
    model_cfg: &ModelConfig,
    precision: Precision,
    seed: u64,
    train: &skmix_core::TrainConfig,
    data: &Dataset,
    log: &mut dyn Write,
) -> Result<(SkatingMixer, ParamStore, skmix_core::train::Trainer, Vec<LossReport>), CliError> {
    let mut store = ParamStore::new(precision);
    let model = SkatingMixer::build(model_cfg, &mut store, seed)?;
    let samples = data.samples();
    let mut obs = LogObserver {
        log,
        io_error: None,
        start: Instant::now(),
    };
    let (trainer, reports) = train_loop(&model, &mut store, &samples, train, &mut obs)?;
    if let Some(e) = obs.io_error {
        return Err(e.into());
    }
    Ok((model, store, trainer, reports))
}

pub fn train(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    let data = load_dataset(&cfg.train_manifest())?;
    let model_cfg = model_config_for(cfg, &data)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let log_path = cfg.output_dir.join(LOSS_LOG_FILE);
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path)?);
    let (_, store, trainer, reports) = fit(&model_cfg, cfg.precision()?, cfg.seed, &cfg.train_config(), &data, &mut log)?;
    log.flush()?;
    let ckpt_path = cfg.output_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt_path, &Checkpoint::capture(&model_cfg, &store, Some(&trainer.adam)))?;
    let final_loss = reports.last().cloned().expect("at least one epoch");
    Ok(TrainReport {
        checkpoint: ckpt_path.display().to_string(),
        loss_log: log_path.display().to_string(),
        epochs: reports.len(),
        steps: trainer.steps(),
        final_loss,
    })
}

pub fn predict(model: &SkatingMixer, store: &ParamStore, data: &Dataset) -> Result<Vec<Vec<f64>>, CliError> {
    data.videos
        .iter()
        .map(|v| Ok(model.score(store, &v.clips)?.values))
        .collect()
}

pub fn evaluate(model: &SkatingMixer, store: &ParamStore, data: &Dataset) -> Result<EvalReport, CliError> {
    let preds = predict(model, store, data)?;
    Ok(EvalReport::compute(data.labels.clone(), &preds, &data.targets())?)
}

fn open_checkpoint(path: &Path, precision: Option<Precision>) -> Result<(SkatingMixer, ParamStore), CliError> {
    let ckpt = load_checkpoint(path)?;
    let (model, mut store) = ckpt.restore()?;
    if let Some(p) = precision {
        store.set_precision(p);
    }
    Ok((model, store))
}

fn check_labels(model: &SkatingMixer, data: &Dataset) -> Result<(), CliError> {
    let labels = model.config().head_labels();
    if labels != data.labels {
        return Err(CliError::Data(format!(
            "checkpoint scores {:?} but dataset carries {:?}",
            labels, data.labels
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, split: Split, precision: Option<Precision>) -> Result<EvalReport, CliError> {
    let manifest = match split {
        Split::Train => cfg.train_manifest(),
        Split::Test => cfg.test_manifest(),
    };
    let data = load_dataset(&manifest)?;
    let (model, store) = open_checkpoint(checkpoint, precision)?;
    check_labels(&model, &data)?;
    evaluate(&model, &store, &data)
}

pub fn score(checkpoint: &Path, features: &Path, precision: Option<Precision>) -> Result<ScoreVector, CliError> {
    let (model, store) = open_checkpoint(checkpoint, precision)?;
    let clips = load_features(features)?;
    Ok(model.score(&store, &clips)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    pub labels: Vec<String>,
    /// `deltas[t][k]`: change of score `k` when clip `t` is appended.
    pub deltas: Vec<Vec<f64>>,
    pub full: Vec<f64>,
}

pub fn trace(checkpoint: &Path, features: &Path, precision: Option<Precision>) -> Result<TraceReport, CliError> {
    let (model, store) = open_checkpoint(checkpoint, precision)?;
    let clips = load_features(features)?;
    let deltas = model.incremental_trace(&store, &clips, ForwardHooks::NONE)?;
    let full = model.score(&store, &clips)?;
    Ok(TraceReport {
        labels: full.labels,
        deltas,
        full: full.values,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RankRow {
    pub id: String,
    pub predicted: f64,
    pub actual: f64,
    pub predicted_rank: usize,
    pub actual_rank: usize,
    pub rank_diff: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub label: String,
    pub n: usize,
    pub entries: Vec<RankRow>,
}

pub fn rank(checkpoint: &Path, manifest: &Path, k: usize, head: usize, precision: Option<Precision>) -> Result<RankReport, CliError> {
    let data = load_dataset(manifest)?;
    let (model, store) = open_checkpoint(checkpoint, precision)?;
    check_labels(&model, &data)?;
    if head >= data.labels.len() {
        return Err(CliError::Config(format!("head {head} out of range for {} scores", data.labels.len())));
    }
    let preds = predict(&model, &store, &data)?;
    let p: Vec<f64> = preds.iter().map(|r| r[head]).collect();
    let t: Vec<f64> = data.targets().iter().map(|r| r[head]).collect();
    let report = ranking_report(&p, &t, k)?;
    Ok(RankReport {
        label: data.labels[head].clone(),
        n: report.n,
        entries: report
            .entries
            .into_iter()
            .map(|e| RankRow {
                id: data.videos[e.index].record.id.clone(),
                predicted: e.predicted,
                actual: e.actual,
                predicted_rank: e.predicted_rank,
                actual_rank: e.actual_rank,
                rank_diff: e.rank_diff,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub variant: FusionVariant,
    pub scoring: ScoringTokenMode,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub params: Vec<GradCheckRow>,
}

/// Toy instance of the configured variant: C=8, S_a=S_v=2, T = `clips`.
pub fn toy_model(cfg: &RunConfig) -> ModelConfig {
    let mut m = ModelConfig::toy(8, 2, 2, cfg.gradcheck.clips, cfg.model.heads);
    m.variant = cfg.model.variant;
    m.scoring = cfg.model.scoring;
    m.depths = cfg.model.depths;
    m.bottleneck_ratio = if 8 % cfg.model.bottleneck_ratio == 0 { cfg.model.bottleneck_ratio } else { 4 };
    m.labels = cfg.model.labels.clone();
    m
}

pub fn summarize_gradcheck(model: &ModelConfig, report: &GradCheckReport, tolerance: f64) -> GradCheckSummary {
    GradCheckSummary {
        variant: model.variant,
        scoring: model.effective_scoring(),
        tolerance,
        max_rel_error: report.max_rel_error(),
        passed: report.passes(tolerance),
        params: report
            .params
            .iter()
            .map(|p| GradCheckRow {
                name: p.name.clone(),
                max_rel_error: p.max_rel_error,
                max_abs_error: p.max_abs_error,
                worst_index: p.worst_index,
                analytic: p.analytic,
                numeric: p.numeric,
            })
            .collect(),
    }
}

pub fn gradcheck(cfg: &RunConfig) -> Result<GradCheckSummary, CliError> {
    let model = toy_model(cfg);
    let report = check_model(&model, cfg.seed, cfg.gradcheck.clips, cfg.gradcheck.eps)?;
    Ok(summarize_gradcheck(&model, &report, cfg.gradcheck.tolerance))
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: FusionVariant,
    pub scoring: ScoringTokenMode,
    pub test: EvalReport,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Trains every configured (variant, scoring) pair on the train split and
/// evaluates it on the test split. The flat Mixer only has a `[CLS]`
/// token, so it appears once.
pub fn ablate(cfg: &RunConfig) -> Result<AblationReport, CliError> {
    let train = load_dataset(&cfg.train_manifest())?;
    let test = load_dataset(&cfg.test_manifest())?;
    let base = model_config_for(cfg, &train)?;
    let precision = cfg.precision()?;
    let mut rows = Vec::new();
    for &variant in &cfg.ablate.variants {
        let modes: Vec<ScoringTokenMode> = if variant == FusionVariant::Mixer {
            vec![ScoringTokenMode::ClsOnly]
        } else {
            cfg.ablate.scoring.clone()
        };
        for scoring in modes {
            let m = base.clone().with_variant(variant).with_scoring(scoring);
            eprintln!("training {} {}", variant.label(), scoring.label());
            let (model, store, _, reports) = fit(&m, precision, cfg.seed, &cfg.train_config(), &train, &mut std::io::sink())?;
            check_labels(&model, &test)?;
            rows.push(AblationRow {
                variant,
                scoring,
                test: evaluate(&model, &store, &test)?,
                final_train_loss: reports.last().map_or(f64::NAN, |r| r.total),
            });
        }
    }
    Ok(AblationReport { rows })
}

pub fn ablation_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let Some(first) = report.rows.first() else {
        return out;
    };
    out.push_str(&format!("{:<12} {:<12}", "variant", "tokens"));
    for l in &first.test.labels {
        out.push_str(&format!(" {:>12} {:>10}", format!("{l} mse"), format!("{l} rho")));
    }
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!("{:<12} {:<12}", r.variant.label(), r.scoring.label()));
        for (m, s) in r.test.mse.iter().zip(&r.test.spearman) {
            let rho = s.map_or("-".to_string(), |v| format!("{v:.3}"));
            out.push_str(&format!(" {m:>12.4} {rho:>10}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct FlopsRow {
    pub variant: FusionVariant,
    pub clips: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlopsReport {
    /// Counts for the configured model (`max_clips` fixed).
    pub bound: Vec<FlopsRow>,
    /// Counts for models sized to each clip count.
    pub sized: Vec<FlopsRow>,
}

pub fn flops(cfg: &RunConfig) -> Result<FlopsReport, CliError> {
    let mut bound = Vec::new();
    let mut sized = Vec::new();
    for variant in FusionVariant::ALL {
        let m = cfg.model.clone().with_variant(variant);
        for &t in &cfg.flops.sweep {
            if t <= m.max_clips {
                bound.push(FlopsRow {
                    variant,
                    clips: t,
                    macs: count_macs(&m, t)?,
                });
            }
        }
        for (t, macs) in sweep_sized(&m, &cfg.flops.sweep)? {
            sized.push(FlopsRow { variant, clips: t, macs });
        }
    }
    Ok(FlopsReport { bound, sized })
}

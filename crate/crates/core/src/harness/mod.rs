//! End-to-end experiment driver: entity splits with a shifted test window,
//! per-architecture training with per-epoch evaluation, prediction gains
//! against the MLP, wall-clock timing, and report/plot artifacts.
//!
//! `report.json` holds only seed-determined quantities so that two runs of
//! the same configuration produce identical bytes; wall-clock measurements
//! go to `timing.json`.

mod plots;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ensure_dir, write_json};
use crate::layout::{
    hellinger_features, pca_embed, split_diffuse_map, GridAssignment, GridSpec, TopicEmbedding2D,
};
use crate::loglab::{bucket_entries, generate_synthetic_logs, Bucketing, GroundTruth, SynthConfig};
use crate::metrics::{build_metric_series, MetricSeries};
use crate::models::{evaluate, train_epoch, Architecture, Model, ModelConfig, SequenceSample};
use crate::neurons::{AdamConfig, AdamState, LossKind, Parameterized, PredictionBatch};
use crate::topics::{
    build_vocabulary, fit_lda, greedy_match, infer_corpus, ActivityRelevance, LdaConfig, LdaModel,
};

pub use plots::{curves_csv, emit_plots, heatmap_svg, line_chart_svg, FrameSet, HEATMAP_RAMP};

/// Entity-wise split fractions and the test window shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Test samples read periods `[s, s+T)` and predict `s+T`.
    pub test_shift: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            val: 0.08,
            test: 0.22,
            test_shift: 2,
            seed: 5,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(format!(
                "split fractions must be positive, got {f:?}"
            )));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {f:?}"
            )));
        }
        if self.test_shift == 0 {
            return Err(Error::Config("test_shift must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Training objective; evaluation always reports RLE.
    pub loss: LossKind,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            loss: LossKind::Rle,
            shuffle_seed: 13,
        }
    }
}

/// Everything `run-all` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub lda: LdaConfig,
    /// Shared hyperparameters; the architecture field is overridden per run.
    pub model: ModelConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub architectures: Vec<Architecture>,
    /// Start SCCN from the shared kernels LRCN is initialized with.
    pub sccn_init_from_lrcn: bool,
    /// Test entities that get a target-vs-prediction heatmap.
    pub heatmap_entities: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            synth: SynthConfig::default(),
            lda: LdaConfig::default(),
            model: ModelConfig::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            architectures: Architecture::ALL.to_vec(),
            sccn_init_from_lrcn: true,
            heatmap_entities: 2,
        }
    }
}

impl PipelineConfig {
    /// Derives every stage seed from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.lda.seed = seed.wrapping_add(1);
        self.model.seed = seed.wrapping_add(2);
        self.split.seed = seed.wrapping_add(3);
        self.train.shuffle_seed = seed.wrapping_add(4);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.split.validate()?;
        self.model.validate()?;
        if self.lda.topics != self.model.cells() {
            return Err(Error::Config(format!(
                "{} LDA topics cannot fill a {k}x{k} grid",
                self.lda.topics,
                k = self.model.k
            )));
        }
        let needed = self.split.test_shift + self.model.periods + 1;
        if self.synth.period_count < needed {
            return Err(Error::Config(format!(
                "{} periods are too few for T={} and test shift {} (need {needed})",
                self.synth.period_count, self.model.periods, self.split.test_shift
            )));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.architectures.is_empty() {
            return Err(Error::Config("no architectures selected".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, architecture: Architecture) -> ModelConfig {
        self.model.with_architecture(architecture)
    }
}

/// Which entities went to which split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub periods: usize,
    pub test_shift: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSets {
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

/// Partitions `entities` by a seeded shuffle. Counts are rounded from the
/// fractions with the test split taking the remainder.
pub fn split_entities(
    entities: &[String],
    spec: &SplitSpec,
    periods: usize,
) -> Result<EntitySplit> {
    spec.validate()?;
    let mut ids = entities.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_val = (n as f64 * spec.val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Data(format!(
            "{n} entities are too few for split fractions {}/{}/{}",
            spec.train, spec.val, spec.test
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut test = ids.split_off(n_train + n_val);
    let mut val = ids.split_off(n_train);
    let mut train = ids;
    train.sort();
    val.sort();
    test.sort();
    Ok(EntitySplit {
        train,
        val,
        test,
        periods,
        test_shift: spec.test_shift,
    })
}

fn window_sample(
    series: &MetricSeries,
    assignment: &GridAssignment,
    start: usize,
    periods: usize,
) -> Result<SequenceSample> {
    let end = start + periods;
    if series.len() <= end {
        return Err(Error::Data(format!(
            "series for {} has {} periods; window [{start}, {end}) needs a target at {end}",
            series.entity_id,
            series.len()
        )));
    }
    let inputs = series.vectors[start..end]
        .iter()
        .map(|v| assignment.to_grid(&v.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceSample {
        entity_id: series.entity_id.clone(),
        input_start: start,
        inputs,
        target: assignment.to_grid(&series.vectors[end].values)?,
        target_period: end,
    })
}

/// Train/val samples read periods `[0, T)` and predict `T`; test samples
/// read `[s, s+T)` and predict `s+T`.
pub fn build_samples(
    split: &EntitySplit,
    series: &BTreeMap<String, MetricSeries>,
    assignment: &GridAssignment,
) -> Result<SampleSets> {
    let t = split.periods;
    let get = |id: &String| {
        series
            .get(id)
            .ok_or_else(|| Error::Data(format!("split names unknown entity {id:?}")))
    };
    let window = |ids: &[String], start: usize| -> Result<Vec<SequenceSample>> {
        ids.iter()
            .map(|id| window_sample(get(id)?, assignment, start, t))
            .collect()
    };
    Ok(SampleSets {
        train: window(&split.train, 0)?,
        val: window(&split.val, 0)?,
        test: window(&split.test, split.test_shift)?,
    })
}

/// Splits entities and builds the three sample sets in one go.
pub fn make_splits(
    series: &BTreeMap<String, MetricSeries>,
    assignment: &GridAssignment,
    spec: &SplitSpec,
    periods: usize,
) -> Result<(EntitySplit, SampleSets)> {
    let needed = spec.test_shift + periods + 1;
    if let Some(s) = series.values().find(|s| s.len() < needed) {
        return Err(Error::Data(format!(
            "series for {} has {} periods; the shifted test window needs {needed}",
            s.entity_id,
            s.len()
        )));
    }
    let ids: Vec<String> = series.keys().cloned().collect();
    let split = split_entities(&ids, spec, periods)?;
    let sets = build_samples(&split, series, assignment)?;
    Ok((split, sets))
}

/// `(baseline - model) / baseline`.
pub fn prediction_gain(baseline_loss: f64, model_loss: f64) -> Result<f64> {
    if !(baseline_loss > 0.0 && baseline_loss.is_finite()) {
        return Err(Error::Numerical(format!(
            "prediction gain needs a positive baseline loss, got {baseline_loss}"
        )));
    }
    Ok((baseline_loss - model_loss) / baseline_loss)
}

/// RLE of predicting each sample's last input frame unchanged.
pub fn persistence_rle(samples: &[SequenceSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data(
            "no samples for the persistence baseline".into(),
        ));
    }
    let mut total = 0.0;
    for s in samples {
        let last = s
            .inputs
            .last()
            .ok_or_else(|| Error::Data("sample without inputs".into()))?;
        total += LossKind::Rle
            .evaluate(&PredictionBatch::new(&s.target, last)?)?
            .loss;
    }
    Ok(total / samples.len() as f64)
}

/// Builds the vocabulary from and fits LDA on the period-0 corpus.
pub fn fit_topics(bucketing: &Bucketing, cfg: &LdaConfig) -> Result<LdaModel> {
    let corpus = bucketing.period_corpus(0);
    if corpus.is_empty() {
        return Err(Error::Data(
            "period 0 has no documents to fit topics on".into(),
        ));
    }
    let vocab = build_vocabulary(&corpus, cfg.min_count)?;
    let docs: Vec<Vec<usize>> = corpus.iter().map(|d| vocab.encode(d)).collect();
    fit_lda(&docs, vocab, cfg)
}

/// Relevance vectors for every distinct document in `bucketing`.
pub fn infer_relevances(
    bucketing: &Bucketing,
    model: &LdaModel,
    cfg: &LdaConfig,
) -> BTreeMap<String, ActivityRelevance> {
    let texts = bucketing
        .bundles
        .values()
        .flat_map(|b| b.documents.iter().map(String::as_str));
    infer_corpus(model, texts, cfg)
}

/// PCA of the Hellinger-transformed topics, then split-diffuse placement.
pub fn layout_topics(model: &LdaModel) -> Result<(TopicEmbedding2D, GridAssignment)> {
    let embedding = pca_embed(&hellinger_features(model))?;
    let assignment = split_diffuse_map(&embedding, GridSpec::for_topics(model.topics)?)?;
    Ok((embedding, assignment))
}

/// How well fitted topics match the generator's word distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicRecovery {
    pub min_cosine: f64,
    pub mean_cosine: f64,
}

pub fn topic_recovery(model: &LdaModel, truth: &GroundTruth) -> TopicRecovery {
    let v = model.vocabulary.len();
    let fitted: Vec<Vec<f64>> = (0..model.topics)
        .map(|t| model.phi_row(t).to_vec())
        .collect();
    let reference: Vec<Vec<f64>> = (0..truth.topic_count)
        .map(|t| {
            let mut row = vec![0.0; v];
            for (word, p) in truth.word_distribution(t) {
                if let Some(id) = model.vocabulary.id(&word) {
                    row[id] += p;
                }
            }
            row
        })
        .collect();
    let matches = greedy_match(&fitted, &reference);
    let cosines: Vec<f64> = matches.iter().map(|m| m.2).collect();
    TopicRecovery {
        min_cosine: cosines.iter().copied().fold(f64::INFINITY, f64::min),
        mean_cosine: cosines.iter().sum::<f64>() / cosines.len().max(1) as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean pre-update batch loss under the training objective.
    pub train_objective: f64,
    pub train_rle: f64,
    pub val_rle: f64,
    pub test_rle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitValues {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureReport {
    pub architecture: Architecture,
    pub parameters: usize,
    pub layers: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest validation RLE (earliest on ties).
    pub best_epoch: usize,
    pub best_rle: SplitValues,
    pub best_test_mse: f64,
    /// Gains against the MLP at each model's best epoch.
    pub gain_vs_mlp: Option<SplitValues>,
}

/// Training result; `best` carries the parameters of the selected epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: ArchitectureReport,
    pub epoch_seconds: Vec<f64>,
    pub best: Model,
}

/// Trains `model` for `cfg.epochs`, evaluating RLE on every split after
/// each epoch. `on_epoch` sees each record as it is produced.
pub fn train_architecture<F: FnMut(&EpochRecord)>(
    mut model: Model,
    sets: &SampleSets,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    let mut state = AdamState::new(&model.params());
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut seconds = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let rep = train_epoch(
            &mut model,
            &sets.train,
            cfg.batch_size,
            cfg.loss,
            &mut state,
            &cfg.adam,
            epoch,
            cfg.shuffle_seed,
        )?;
        seconds.push(start.elapsed().as_secs_f64());
        let record = EpochRecord {
            epoch,
            train_objective: rep.mean_loss,
            train_rle: evaluate(&model, &sets.train, LossKind::Rle)?,
            val_rle: evaluate(&model, &sets.val, LossKind::Rle)?,
            test_rle: evaluate(&model, &sets.test, LossKind::Rle)?,
        };
        if best
            .as_ref()
            .map_or(true, |b| record.val_rle < epochs[b.0].val_rle)
        {
            let mse = evaluate(&model, &sets.test, LossKind::Mse)?;
            best = Some((epoch, model.param_vector(), mse));
        }
        on_epoch(&record);
        epochs.push(record);
    }
    let (best_epoch, params, best_test_mse) = best.expect("at least one epoch");
    let mut best_model = model;
    best_model.set_param_vector(&params)?;
    let r = &epochs[best_epoch];
    Ok(TrainOutcome {
        report: ArchitectureReport {
            architecture: best_model.architecture(),
            parameters: best_model.param_count(),
            layers: best_model.layer_descriptions(),
            best_epoch,
            best_rle: SplitValues {
                train: r.train_rle,
                val: r.val_rle,
                test: r.test_rle,
            },
            best_test_mse,
            epochs,
            gain_vs_mlp: None,
        },
        epoch_seconds: seconds,
        best: best_model,
    })
}

/// Fills `gain_vs_mlp` for every report when an MLP run is present.
pub fn attach_gains(reports: &mut [ArchitectureReport]) -> Result<()> {
    let Some(base) = reports
        .iter()
        .find(|r| r.architecture == Architecture::Mlp)
        .map(|r| r.best_rle)
    else {
        return Ok(());
    };
    for r in reports.iter_mut() {
        r.gain_vs_mlp = Some(SplitValues {
            train: prediction_gain(base.train, r.best_rle.train)?,
            val: prediction_gain(base.val, r.best_rle.val)?,
            test: prediction_gain(base.test, r.best_rle.test)?,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub log_entries: usize,
    pub dropped_out_of_range: usize,
    pub bundles: usize,
    pub entities: usize,
    pub distinct_documents: usize,
    pub fallback_documents: usize,
    pub vocabulary: usize,
    pub topics: usize,
    pub grid_k: usize,
    pub input_periods: usize,
    pub test_shift: usize,
    pub train_entities: usize,
    pub val_entities: usize,
    pub test_entities: usize,
    pub topic_recovery: Option<TopicRecovery>,
    /// Test RLE of repeating the last input frame.
    pub persistence_test_rle: f64,
}

/// Seed-determined results of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: PipelineConfig,
    /// Absent when the report is assembled from per-model training files.
    pub data: Option<DataSummary>,
    pub selection: String,
    pub architectures: Vec<ArchitectureReport>,
}

impl ExperimentReport {
    pub fn architecture(&self, arch: Architecture) -> Option<&ArchitectureReport> {
        self.architectures.iter().find(|r| r.architecture == arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureTiming {
    pub architecture: Architecture,
    pub epoch_seconds: Vec<f64>,
    pub median_epoch_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stage_seconds: BTreeMap<String, f64>,
    pub architectures: Vec<ArchitectureTiming>,
    /// Median SCCN epoch time over median LRCN epoch time.
    pub sccn_over_lrcn: Option<f64>,
    pub total_seconds: f64,
}

/// Median of the first three epoch times (fewer if fewer epochs ran).
pub fn median_epoch_seconds(seconds: &[f64]) -> f64 {
    let mut s: Vec<f64> = seconds.iter().take(3).copied().collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub timing: TimingReport,
    pub artifacts: Vec<PathBuf>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs synth → ingest → topics → metrics → layout → splits → training of
/// every configured architecture, then writes artifacts into `out_dir`
/// (when given). `progress` receives one line per milestone.
pub fn run_experiment(
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutcome> {
    stage("config", cfg.validate())?;
    let t_total = Instant::now();
    let mut stage_seconds = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, map: &mut BTreeMap<String, f64>| {
        map.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let (entries, truth) = stage("synth", generate_synthetic_logs(&cfg.synth))?;
    lap("synth", &mut stage_seconds);
    progress(&format!("synth: {} log entries", entries.len()));

    let spec = cfg.synth.period_spec();
    let bucketing = bucket_entries(&entries, &spec);
    let log_entries = entries.len();
    drop(entries);
    lap("ingest", &mut stage_seconds);
    progress(&format!("ingest: {} bundles", bucketing.bundles.len()));

    let lda = stage("topics", fit_topics(&bucketing, &cfg.lda))?;
    let recovery = topic_recovery(&lda, &truth);
    lap("topics", &mut stage_seconds);
    progress(&format!(
        "topics: {} topics over {} words, recovery cosine min {:.3}",
        lda.topics,
        lda.vocabulary.len(),
        recovery.min_cosine
    ));

    let relevances = infer_relevances(&bucketing, &lda, &cfg.lda);
    let series = stage(
        "metrics",
        build_metric_series(&bucketing, &relevances, lda.topics, &spec),
    )?;
    lap("metrics", &mut stage_seconds);
    progress(&format!("metrics: {} documents inferred", relevances.len()));

    let (_, assignment) = stage("layout", layout_topics(&lda))?;
    lap("layout", &mut stage_seconds);

    let (split, sets) = stage(
        "split",
        make_splits(&series, &assignment, &cfg.split, cfg.model.periods),
    )?;
    lap("split", &mut stage_seconds);
    progress(&format!(
        "split: {}/{}/{} entities",
        split.train.len(),
        split.val.len(),
        split.test.len()
    ));

    let mut outcomes: Vec<TrainOutcome> = Vec::new();
    for &arch in &cfg.architectures {
        let model = stage("model", build_for_experiment(cfg, arch))?;
        let outcome = stage(
            "train",
            train_architecture(model, &sets, &cfg.train, |r| {
                progress(&format!(
                    "{arch} epoch {:>3}: train {:.5} val {:.5} test {:.5}",
                    r.epoch, r.train_rle, r.val_rle, r.test_rle
                ))
            }),
        )?;
        outcomes.push(outcome);
    }
    lap("train", &mut stage_seconds);

    let mut reports: Vec<ArchitectureReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    stage("report", attach_gains(&mut reports))?;

    let summary = DataSummary {
        log_entries,
        dropped_out_of_range: bucketing.dropped_out_of_range,
        bundles: bucketing.bundles.len(),
        entities: series.len(),
        distinct_documents: relevances.len(),
        fallback_documents: relevances.values().filter(|r| r.fallback).count(),
        vocabulary: lda.vocabulary.len(),
        topics: lda.topics,
        grid_k: assignment.k,
        input_periods: cfg.model.periods,
        test_shift: cfg.split.test_shift,
        train_entities: split.train.len(),
        val_entities: split.val.len(),
        test_entities: split.test.len(),
        topic_recovery: Some(recovery),
        persistence_test_rle: stage("report", persistence_rle(&sets.test))?,
    };
    let report = ExperimentReport {
        config: cfg.clone(),
        data: Some(summary),
        selection: "best-validation-rle".into(),
        architectures: reports,
    };

    let arch_timing: Vec<ArchitectureTiming> = outcomes
        .iter()
        .map(|o| ArchitectureTiming {
            architecture: o.report.architecture,
            median_epoch_seconds: median_epoch_seconds(&o.epoch_seconds),
            epoch_seconds: o.epoch_seconds.clone(),
        })
        .collect();
    let median_of = |a: Architecture| {
        arch_timing
            .iter()
            .find(|t| t.architecture == a)
            .map(|t| t.median_epoch_seconds)
    };
    let sccn_over_lrcn = match (median_of(Architecture::Sccn), median_of(Architecture::Lrcn)) {
        (Some(s), Some(l)) if l > 0.0 => Some(s / l),
        _ => None,
    };

    let mut artifacts = Vec::new();
    if let Some(dir) = out_dir {
        let frames = heatmap_frames(cfg, &sets, &outcomes)?;
        artifacts = stage(
            "artifacts",
            write_artifacts(dir, &report, &split, &assignment, &outcomes, &frames),
        )?;
    }
    lap("artifacts", &mut stage_seconds);
    let timing = TimingReport {
        stage_seconds,
        architectures: arch_timing,
        sccn_over_lrcn,
        total_seconds: t_total.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        let path = dir.join("timing.json");
        write_json(&path, &timing)?;
        artifacts.push(path);
    }
    Ok(ExperimentOutcome {
        report,
        timing,
        artifacts,
    })
}

/// Builds the initial model for `arch` under the experiment's rules.
pub fn build_for_experiment(cfg: &PipelineConfig, arch: Architecture) -> Result<Model> {
    if arch == Architecture::Sccn && cfg.sccn_init_from_lrcn {
        let lrcn = Model::new(&cfg.model_config(Architecture::Lrcn))?;
        return Model::sccn_from_lrcn(&lrcn);
    }
    Model::new(&cfg.model_config(arch))
}

fn heatmap_frames(
    cfg: &PipelineConfig,
    sets: &SampleSets,
    outcomes: &[TrainOutcome],
) -> Result<Vec<FrameSet>> {
    let mut out = Vec::new();
    for sample in sets.test.iter().take(cfg.heatmap_entities) {
        let mut frames = vec![("target".to_string(), sample.target.clone())];
        for o in outcomes {
            frames.push((
                o.report.architecture.to_string(),
                o.best.predict_frame(&sample.inputs)?,
            ));
        }
        out.push(FrameSet {
            entity_id: sample.entity_id.clone(),
            period_index: sample.target_period,
            k: cfg.model.k,
            frames,
        });
    }
    Ok(out)
}

fn write_artifacts(
    dir: &Path,
    report: &ExperimentReport,
    split: &EntitySplit,
    assignment: &GridAssignment,
    outcomes: &[TrainOutcome],
    frames: &[FrameSet],
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    write_json(&path, report)?;
    written.push(path);
    let path = dir.join("splits.json");
    write_json(&path, split)?;
    written.push(path);
    let path = dir.join("assignment.json");
    assignment.save(&path)?;
    written.push(path);
    for o in outcomes {
        let ckpt = dir.join("checkpoints").join(o.report.architecture.name());
        o.best.save(&ckpt, o.report.best_epoch as u64 + 1)?;
        written.push(ckpt);
    }
    written.extend(emit_plots(&report.architectures, frames, dir)?);
    Ok(written)
}

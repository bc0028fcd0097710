use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netbehave_core::harness::{
    attach_gains, build_for_experiment, build_samples, emit_plots, fit_topics, infer_relevances,
    layout_topics, make_splits, run_experiment, train_architecture, ArchitectureReport,
    EntitySplit, ExperimentReport, PipelineConfig,
};
use netbehave_core::io::{ensure_dir, read_json, write_json};
use netbehave_core::loglab::{
    bucket_entries, generate_synthetic_logs, parse_log_stream, Bucketing,
};
use netbehave_core::metrics::{build_metric_series, MetricTensor};
use netbehave_core::models::evaluate;
use netbehave_core::neurons::LossKind;
use netbehave_core::{
    ActivityRelevance, Architecture, Error, GridAssignment, LdaModel, Model, Result,
};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "netbehave",
    version,
    about = "Topical behavior grids from network logs and next-period prediction"
)]
struct Cli {
    /// Pipeline configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Derive every stage seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all inputs and outputs of the stages.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic logs and their ground truth.
    Synth,
    /// Parse a TSV log and bucket it into entity-period bundles.
    Ingest {
        /// Log file; defaults to `<out-dir>/logs.tsv`.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Fit or apply the topic model.
    Topics {
        #[command(subcommand)]
        action: TopicsAction,
    },
    /// Compute topical volume series for every entity.
    Metrics,
    /// Embed topics in 2D and place them on the grid.
    Layout,
    /// Split entities into train/val/test.
    Split,
    /// Train one architecture.
    Train {
        #[arg(long)]
        model: Architecture,
    },
    /// Evaluate a trained checkpoint on the test split.
    Eval {
        #[arg(long)]
        model: Architecture,
    },
    /// Assemble report.json and plots from trained models.
    Report,
    /// Run every stage and train every configured architecture.
    RunAll,
}

#[derive(Subcommand, Debug)]
enum TopicsAction {
    Fit,
    Infer,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{} not found; run `netbehave {producer}` first",
            path.display()
        )))
    }
}

fn load_bucketing(dir: &Path) -> Result<Bucketing> {
    let path = dir.join("bucketing.json");
    need(&path, "ingest")?;
    read_json(&path)
}

fn load_lda(dir: &Path) -> Result<LdaModel> {
    let path = dir.join("lda");
    need(&path, "topics fit")?;
    LdaModel::load(&path)
}

fn load_series(dir: &Path) -> Result<BTreeMap<String, netbehave_core::MetricSeries>> {
    let path = dir.join("metrics");
    need(&path, "metrics")?;
    MetricTensor::load(&path)?.to_series()
}

fn load_assignment(dir: &Path) -> Result<GridAssignment> {
    let path = dir.join("assignment.json");
    need(&path, "layout")?;
    GridAssignment::load(&path)
}

fn load_split(dir: &Path) -> Result<EntitySplit> {
    let path = dir.join("splits.json");
    need(&path, "split")?;
    read_json(&path)
}

#[derive(Serialize)]
struct IngestSummary {
    lines: usize,
    entries: usize,
    rejected: BTreeMap<String, usize>,
    dropped_out_of_range: usize,
    bundles: usize,
    entities: usize,
}

#[derive(Serialize)]
struct EvalSummary {
    architecture: Architecture,
    test_rle: f64,
    test_mse: f64,
    samples: usize,
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let dir = cli.out_dir.as_path();
    ensure_dir(dir)?;
    match &cli.command {
        Command::Synth => {
            let (entries, truth) = generate_synthetic_logs(&cfg.synth)?;
            let path = dir.join("logs.tsv");
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            for e in &entries {
                writeln!(w, "{}", e.to_tsv()).map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            write_json(&dir.join("ground_truth.json"), &truth)?;
            println!("wrote {} entries to {}", entries.len(), path.display());
        }
        Command::Ingest { logs } => {
            let path = logs.clone().unwrap_or_else(|| dir.join("logs.tsv"));
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let parsed = parse_log_stream(BufReader::new(file))?;
            let bucketing = bucket_entries(&parsed.entries, &cfg.synth.period_spec());
            let summary = IngestSummary {
                lines: parsed.lines,
                entries: parsed.entries.len(),
                rejected: parsed
                    .rejected
                    .iter()
                    .map(|(r, n)| (r.to_string(), *n))
                    .collect(),
                dropped_out_of_range: bucketing.dropped_out_of_range,
                bundles: bucketing.bundles.len(),
                entities: bucketing.entities().len(),
            };
            write_json(&dir.join("bucketing.json"), &bucketing)?;
            write_json(&dir.join("ingest_summary.json"), &summary)?;
            println!(
                "{} lines, {} entries, {} rejected, {} out of range, {} bundles",
                summary.lines,
                summary.entries,
                parsed.rejected_total(),
                summary.dropped_out_of_range,
                summary.bundles
            );
        }
        Command::Topics {
            action: TopicsAction::Fit,
        } => {
            let bucketing = load_bucketing(dir)?;
            let lda = fit_topics(&bucketing, &cfg.lda)?;
            lda.save(&dir.join("lda"))?;
            println!(
                "fitted {} topics over {} words",
                lda.topics,
                lda.vocabulary.len()
            );
        }
        Command::Topics {
            action: TopicsAction::Infer,
        } => {
            let bucketing = load_bucketing(dir)?;
            let lda = load_lda(dir)?;
            let rel = infer_relevances(&bucketing, &lda, &cfg.lda);
            write_json(&dir.join("relevance.json"), &rel)?;
            println!("inferred {} distinct documents", rel.len());
        }
        Command::Metrics => {
            let bucketing = load_bucketing(dir)?;
            let lda = load_lda(dir)?;
            let rel_path = dir.join("relevance.json");
            need(&rel_path, "topics infer")?;
            let rel: BTreeMap<String, ActivityRelevance> = read_json(&rel_path)?;
            let series =
                build_metric_series(&bucketing, &rel, lda.topics, &cfg.synth.period_spec())?;
            MetricTensor::from_series(&series)?.save(&dir.join("metrics"))?;
            println!("wrote metric series for {} entities", series.len());
        }
        Command::Layout => {
            let lda = load_lda(dir)?;
            let (embedding, assignment) = layout_topics(&lda)?;
            write_json(&dir.join("embedding.json"), &embedding)?;
            assignment.save(&dir.join("assignment.json"))?;
            println!(
                "placed {} topics on a {k}x{k} grid",
                assignment.topics(),
                k = assignment.k
            );
        }
        Command::Split => {
            let series = load_series(dir)?;
            let assignment = load_assignment(dir)?;
            let (split, _) = make_splits(&series, &assignment, &cfg.split, cfg.model.periods)?;
            write_json(&dir.join("splits.json"), &split)?;
            println!(
                "{}/{}/{} entities",
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
        }
        Command::Train { model } => {
            let series = load_series(dir)?;
            let assignment = load_assignment(dir)?;
            let split = load_split(dir)?;
            let sets = build_samples(&split, &series, &assignment)?;
            let initial = build_for_experiment(&cfg, *model)?;
            let outcome = train_architecture(initial, &sets, &cfg.train, |r| {
                eprintln!(
                    "{model} epoch {:>3}: train {:.5} val {:.5} test {:.5}",
                    r.epoch, r.train_rle, r.val_rle, r.test_rle
                )
            })?;
            outcome.best.save(
                &dir.join("checkpoints").join(model.name()),
                outcome.report.best_epoch as u64 + 1,
            )?;
            write_json(
                &dir.join(format!("train_{}.json", model.name())),
                &outcome.report,
            )?;
            emit_plots(std::slice::from_ref(&outcome.report), &[], dir)?;
            println!(
                "{model}: best epoch {} test RLE {:.6}",
                outcome.report.best_epoch, outcome.report.best_rle.test
            );
        }
        Command::Eval { model } => {
            let path = dir.join("checkpoints").join(model.name());
            need(&path, &format!("train --model {model}"))?;
            let (m, _) = Model::load(&path)?;
            let series = load_series(dir)?;
            let assignment = load_assignment(dir)?;
            let split = load_split(dir)?;
            let sets = build_samples(&split, &series, &assignment)?;
            let summary = EvalSummary {
                architecture: *model,
                test_rle: evaluate(&m, &sets.test, LossKind::Rle)?,
                test_mse: evaluate(&m, &sets.test, LossKind::Mse)?,
                samples: sets.test.len(),
            };
            write_json(&dir.join(format!("eval_{}.json", model.name())), &summary)?;
            println!(
                "{model}: test RLE {:.6} MSE {:.6}",
                summary.test_rle, summary.test_mse
            );
        }
        Command::Report => {
            let mut reports: Vec<ArchitectureReport> = Vec::new();
            for arch in &cfg.architectures {
                let path = dir.join(format!("train_{}.json", arch.name()));
                if path.exists() {
                    reports.push(read_json(&path)?);
                }
            }
            if reports.is_empty() {
                return Err(Error::Data(
                    "no train_<model>.json files; run `netbehave train` first".into(),
                ));
            }
            attach_gains(&mut reports)?;
            emit_plots(&reports, &[], dir)?;
            let report = ExperimentReport {
                config: cfg,
                data: None,
                selection: "best-validation-rle".into(),
                architectures: reports,
            };
            write_json(&dir.join("report.json"), &report)?;
            print_summary(&report);
        }
        Command::RunAll => {
            let outcome = run_experiment(&cfg, Some(dir), &mut |line| eprintln!("{line}"))?;
            print_summary(&outcome.report);
            if let Some(r) = outcome.timing.sccn_over_lrcn {
                println!("sccn/lrcn epoch time ratio: {r:.3}");
            }
        }
    }
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    for r in &report.architectures {
        let gain = r
            .gain_vs_mlp
            .map(|g| format!("{:+.2}%", 100.0 * g.test))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "{:<5} best epoch {:>3}  test RLE {:.6}  gain vs mlp {gain}",
            r.architecture.name(),
            r.best_epoch,
            r.best_rle.test
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

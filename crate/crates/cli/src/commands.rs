use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use hcc_core::corpus::{check_corpus, parse_corpus_with, write_corpus, Corpus, LabelMode};
use hcc_core::cutter::{
    apply_cut, cuts_from_summary, export_sft, mean_removed_tokens, random_cut_corpus,
    read_cut_summary, CutResult, CutSummaryRow, CutTarget, TieBreak,
};
use hcc_core::geometry::{corpus_geometry, group_means, group_rows, series_rows};
use hcc_core::hcc::{load_checkpoint, save_checkpoint, train, HccConfig};
use hcc_core::kv::KvMap;
use hcc_core::report::{json_bytes, write_rows, Format};
use hcc_core::stats::{
    ecdf, geometry_pairs, paired_table, render_table, self_consistency, TracePrediction,
};
use hcc_core::synth::{describe, generate, SynthConfig};
use hcc_core::uncertainty::{
    boundary_quadruple, perturbation_stats, progressive_curves, uncertainty_series,
};

use crate::{Cli, Command, CutMode, InputArg};

pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<hcc_core::Error> for Failure {
    fn from(e: hcc_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

pub fn execute(cli: Cli) -> Outcome {
    if cli.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Failure::Data(e.into()))?;
    let format = if cli.json { Format::Json } else { Format::Csv };
    pool.install(|| dispatch(cli.command, format))
}

fn input_path(input: &InputArg) -> std::result::Result<&Path, Failure> {
    input
        .corpus
        .as_deref()
        .or(input.input.as_deref())
        .ok_or_else(|| usage("a corpus is required (positional or --input)"))
}

fn label_mode(input: &InputArg) -> LabelMode {
    if input.lenient_labels {
        LabelMode::Lenient
    } else {
        LabelMode::Strict
    }
}

fn load(input: &InputArg) -> std::result::Result<Corpus, Failure> {
    Ok(parse_corpus_with(input_path(input)?, label_mode(input))?)
}

fn report_path(dir: &Path, name: &str, format: Format) -> PathBuf {
    dir.join(format!("{name}.{}", format.extension()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn dispatch(command: Command, format: Format) -> Outcome {
    match command {
        Command::Validate { input, output } => validate(&input, output.as_deref(), format),
        Command::Synth {
            output,
            config,
            seed,
            traces,
        } => synth(&output, config.as_deref(), seed, traces),
        Command::DiagnoseUncertainty {
            input,
            output,
            bins,
        } => diagnose_uncertainty(&load(&input)?, &output, bins, format),
        Command::DiagnoseGeometry {
            input,
            output,
            epsilon,
        } => diagnose_geometry(&load(&input)?, &output, epsilon, format),
        Command::PairedStats {
            input,
            output,
            epsilon,
            resamples,
            level,
            seed,
        } => {
            let corpus = load(&input)?;
            paired(&corpus, &output, epsilon, resamples, level, seed, format)
        }
        Command::Train {
            input,
            output,
            config,
            seed,
            epochs,
            history,
        } => {
            let corpus = load(&input)?;
            train_command(
                &corpus,
                &output,
                config.as_deref(),
                seed,
                epochs,
                history,
                format,
            )
        }
        Command::Predict {
            input,
            model,
            output,
        } => predict(&load(&input)?, &model, &output, format),
        Command::Cut {
            input,
            mode,
            output,
            model,
            target_tokens,
            r#match,
            seed,
        } => {
            let corpus = load(&input)?;
            cut(
                &corpus,
                mode,
                &output,
                model.as_deref(),
                target_tokens,
                r#match.as_deref(),
                seed,
            )
        }
        Command::ExportSft {
            input,
            cuts,
            output,
        } => {
            let corpus = load(&input)?;
            let rows = read_cut_summary(&cuts)?;
            let by_id = cuts_from_summary(&corpus, &rows)?;
            let summary = export_sft(&corpus, &by_id, &output)?;
            println!(
                "wrote {} records to {} (mean kept sentences {:.3}, mean kept tokens {:.3})",
                summary.count,
                output.display(),
                summary.mean_kept_sentences,
                summary.mean_kept_tokens
            );
            Ok(())
        }
        Command::SelfConsistency {
            input,
            predictions,
            output,
            threshold,
        } => {
            let corpus = load(&input)?;
            consistency(&corpus, &predictions, output.as_deref(), threshold, format)
        }
    }
}

fn validate(input: &InputArg, output: Option<&Path>, format: Format) -> Outcome {
    let path = input_path(input)?;
    let (corpus, violations) = check_corpus(path, label_mode(input))?;
    for v in &violations {
        println!("line {} ({}): {}", v.line, v.id, v.message);
    }
    println!(
        "{} traces, {} annotated, {} violations",
        corpus.traces.len(),
        corpus.annotations.len(),
        violations.len()
    );
    if let Some(out) = output {
        write_rows(out, &violations, format)?;
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(anyhow!(
            "{} violations in {}",
            violations.len(),
            path.display()
        )))
    }
}

fn synth(
    output: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    traces: Option<usize>,
) -> Outcome {
    let mut c = match config {
        Some(p) => SynthConfig::from_kv(&KvMap::read(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(n) = traces {
        c.traces = n;
    }
    let corpus = generate(&c)?;
    let summary = write_corpus(&corpus, output)?;
    let header = describe(&c);
    let cfg_path = output.with_extension("synth.cfg");
    fs::write(&cfg_path, &header).with_context(|| format!("writing {}", cfg_path.display()))?;
    print!("{header}");
    println!(
        "wrote {} traces to {} ({} manifest bytes, {} sidecar bytes)",
        summary.traces,
        output.display(),
        summary.manifest_bytes,
        summary.sidecar_bytes
    );
    Ok(())
}

#[derive(Serialize)]
struct UncertaintyRow<'a> {
    id: &'a str,
    t: usize,
    segment: Option<&'static str>,
    sentence_nll: f64,
    sentence_entropy: f64,
    answer_nll: f64,
    answer_entropy: f64,
    answer_nll_reduction: f64,
}

#[derive(Serialize)]
struct EcdfRow {
    group: &'static str,
    kind: &'static str,
    x: f64,
    fraction: f64,
}

fn diagnose_uncertainty(corpus: &Corpus, dir: &Path, bins: usize, format: Format) -> Outcome {
    if bins < 2 {
        return Err(usage("--bins must be at least 2"));
    }
    ensure_dir(dir)?;
    let mut series = Vec::new();
    for trace in &corpus.traces {
        let s = uncertainty_series(trace);
        let ann = corpus.annotation(&trace.id);
        for i in 0..s.len() {
            series.push(UncertaintyRow {
                id: &trace.id,
                t: i + 1,
                segment: ann.map(|a| {
                    if i < a.boundary {
                        "retained"
                    } else {
                        "removed"
                    }
                }),
                sentence_nll: s.sent_nll[i],
                sentence_entropy: s.sent_entropy[i],
                answer_nll: s.answer_nll[i],
                answer_entropy: s.answer_entropy[i],
                answer_nll_reduction: s.delta_ans[i],
            });
        }
    }
    write_rows(
        &report_path(dir, "uncertainty_series", format),
        &series,
        format,
    )?;
    let curves = progressive_curves(corpus, bins)?;
    write_rows(
        &report_path(dir, "progressive_curves", format),
        &curves.rows(),
        format,
    )?;
    let quad = boundary_quadruple(corpus)?;
    write_rows(
        &report_path(dir, "boundary_quadruple", format),
        &quad.rows(),
        format,
    )?;
    let pert = perturbation_stats(corpus);
    write_rows(
        &report_path(dir, "perturbation", format),
        &pert.rows(),
        format,
    )?;
    let mut ecdf_rows = Vec::new();
    for (group, kind, values) in [
        ("retained", "nll", &pert.retained_nll),
        ("removed", "nll", &pert.removed_nll),
        ("retained", "logprob", &pert.retained_logprob),
        ("removed", "logprob", &pert.removed_logprob),
    ] {
        if values.is_empty() {
            continue;
        }
        ecdf_rows.extend(ecdf(values)?.into_iter().map(|p| EcdfRow {
            group,
            kind,
            x: p.x,
            fraction: p.fraction,
        }));
    }
    write_rows(
        &report_path(dir, "perturbation_ecdf", format),
        &ecdf_rows,
        format,
    )?;
    println!(
        "{} traces, {} eligible for boundary statistics ({} excluded); reports in {}",
        corpus.traces.len(),
        quad.eligible,
        quad.excluded,
        dir.display()
    );
    Ok(())
}

fn diagnose_geometry(corpus: &Corpus, dir: &Path, epsilon: f64, format: Format) -> Outcome {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(usage("--epsilon must be positive"));
    }
    ensure_dir(dir)?;
    let all = corpus_geometry(corpus, epsilon);
    let mut series = Vec::new();
    let mut groups = Vec::new();
    for (trace, s) in corpus.traces.iter().zip(&all) {
        let ann = corpus.annotation(&trace.id);
        series.extend(series_rows(trace, s, ann));
        if let Some(a) = ann {
            groups.extend(group_rows(&trace.id, &group_means(s, a)));
        }
    }
    write_rows(
        &report_path(dir, "geometry_series", format),
        &series,
        format,
    )?;
    write_rows(
        &report_path(dir, "geometry_group_means", format),
        &groups,
        format,
    )?;
    println!(
        "{} traces, {} sentences; reports in {}",
        corpus.traces.len(),
        series.len(),
        dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn paired(
    corpus: &Corpus,
    output: &Path,
    epsilon: f64,
    resamples: usize,
    level: f64,
    seed: u64,
    format: Format,
) -> Outcome {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(usage("--epsilon must be positive"));
    }
    let all = corpus_geometry(corpus, epsilon);
    let means: Vec<_> = corpus
        .traces
        .iter()
        .zip(&all)
        .filter_map(|(t, s)| corpus.annotation(&t.id).map(|a| group_means(s, a)))
        .collect();
    let rows = paired_table(&geometry_pairs(&means), resamples, seed, level)?;
    write_rows(output, &rows, format)?;
    print!("{}", render_table(&rows));
    Ok(())
}

fn train_command(
    corpus: &Corpus,
    output: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    history: Option<PathBuf>,
    format: Format,
) -> Outcome {
    let mut c = match config {
        Some(p) => HccConfig::from_kv(&KvMap::read(p)?)?,
        None => HccConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(e) = epochs {
        c.epochs = e;
    }
    let outcome = train(corpus, &c)?;
    save_checkpoint(&outcome.model, output)?;
    let history_path = history.unwrap_or_else(|| {
        let mut name = output.as_os_str().to_owned();
        name.push(format!(".history.{}", format.extension()));
        PathBuf::from(name)
    });
    write_rows(&history_path, &outcome.history, format)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: total {:.6} cut {:.6} delete {:.6}",
            last.epoch, last.total, last.cut, last.delete
        );
    }
    println!("wrote {} and {}", output.display(), history_path.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    id: String,
    t: usize,
    boundary: usize,
    cut_logit: f64,
    delete_prob: Option<f64>,
    uncertainty_estimate: Option<f64>,
    progress_estimate: Option<f64>,
}

fn predict(corpus: &Corpus, model: &Path, output: &Path, format: Format) -> Outcome {
    let model = load_checkpoint(model)?;
    let preds = model.predict_corpus(corpus)?;
    let mut rows = Vec::new();
    for (trace, p) in corpus.traces.iter().zip(&preds) {
        for t in 0..=trace.len() {
            let at = |v: &[f64]| (t > 0).then(|| v[t - 1]);
            rows.push(PredictionRow {
                id: trace.id.clone(),
                t,
                boundary: p.boundary,
                cut_logit: p.cut_logits[t],
                delete_prob: at(&p.delete_probs),
                uncertainty_estimate: at(&p.uncertainty_estimate),
                progress_estimate: at(&p.progress_estimate),
            });
        }
    }
    write_rows(output, &rows, format)?;
    println!(
        "wrote predictions for {} traces to {}",
        preds.len(),
        output.display()
    );
    Ok(())
}

fn read_predictions(path: &Path) -> anyhow::Result<Vec<PredictionRow>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    } else {
        let mut reader = csv::Reader::from_path(path)?;
        Ok(reader.deserialize().collect::<Result<Vec<_>, _>>()?)
    }
}

fn cut(
    corpus: &Corpus,
    mode: CutMode,
    output: &Path,
    model: Option<&Path>,
    target_tokens: Option<f64>,
    match_path: Option<&Path>,
    seed: Option<u64>,
) -> Outcome {
    let cuts: Vec<CutResult> = match mode {
        CutMode::Model => {
            let path = model.ok_or_else(|| usage("--mode model requires --model"))?;
            let model = load_checkpoint(path)?;
            let preds = model.predict_corpus(corpus)?;
            corpus
                .traces
                .iter()
                .zip(&preds)
                .map(|(t, p)| apply_cut(t, p.boundary))
                .collect::<hcc_core::Result<_>>()?
        }
        CutMode::Labels => corpus
            .traces
            .iter()
            .map(|t| {
                let a = corpus
                    .annotation(&t.id)
                    .ok_or_else(|| hcc_core::Error::InvalidTrace {
                        id: t.id.clone(),
                        message: "no editor annotation".into(),
                    })?;
                apply_cut(t, a.boundary)
            })
            .collect::<hcc_core::Result<_>>()?,
        CutMode::Random => {
            let target = match (target_tokens, match_path) {
                (Some(t), None) => t,
                (None, Some(p)) => {
                    let rows = read_cut_summary(p)?;
                    if rows.is_empty() {
                        return Err(Failure::Data(anyhow!("{} lists no cuts", p.display())));
                    }
                    rows.iter().map(|r| r.removed_tokens as f64).sum::<f64>() / rows.len() as f64
                }
                _ => return Err(usage("--mode random requires --target-tokens or --match")),
            };
            if !(target.is_finite() && target >= 0.0) {
                return Err(usage("the token target must be a non-negative number"));
            }
            let tie = seed.map_or(TieBreak::LessRemoval, TieBreak::Seeded);
            random_cut_corpus(corpus, &CutTarget::CorpusMean(target), tie)?
        }
    };
    let rows: Vec<CutSummaryRow> = cuts.iter().map(CutSummaryRow::from).collect();
    write_rows(output, &rows, Format::Csv)?;
    println!(
        "cut {} traces; mean removed tokens {:.3}",
        cuts.len(),
        mean_removed_tokens(&cuts)
    );
    Ok(())
}

fn consistency(
    corpus: &Corpus,
    predictions: &Path,
    output: Option<&Path>,
    threshold: f64,
    format: Format,
) -> Outcome {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage("--threshold must lie in [0, 1]"));
    }
    let mut by_id: BTreeMap<String, TracePrediction> = BTreeMap::new();
    for row in read_predictions(predictions)? {
        let entry = by_id
            .entry(row.id.clone())
            .or_insert_with(|| TracePrediction {
                id: row.id.clone(),
                boundary: row.boundary,
                delete_flags: Vec::new(),
            });
        if let Some(p) = row.delete_prob {
            entry.delete_flags.push(p >= threshold);
        }
    }
    let preds: Vec<TracePrediction> = by_id.into_values().collect();
    let report = self_consistency(&preds, corpus)?;
    if let Some(out) = output {
        match format {
            Format::Csv => write_rows(out, &[report], format)?,
            Format::Json => fs::write(out, json_bytes(&report)?)
                .with_context(|| format!("writing {}", out.display()))?,
        }
    }
    println!(
        "traces {} phase_rate {:.6} sentence_ratio {:.6} avg_len {:.3}",
        report.traces, report.phase_rate, report.sentence_ratio, report.avg_len
    );
    Ok(())
}

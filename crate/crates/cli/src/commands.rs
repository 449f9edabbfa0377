use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use eegdecode::charlm::{
    corpus_perplexity, extract_all, load_checkpoint, save_checkpoint, train_model, LanguageModel, LmError, TrainingCorpus,
};
use eegdecode::decoder::{mean_accuracy, mean_mse, run_analysis, run_permutation_null, AnalysisData, McConfig};
use eegdecode::eeg::{average_subjects, load_epochs};
use eegdecode::probing::{
    embed_task, planted_suite, sample_word_pairs, train_probe, word_order_probe, ProbeTask,
};
use eegdecode::report::{
    self, load_summary, plot_data, probe_csv, summary_csv, summary_table, trials_csv, Metric, SummaryRow,
};
use eegdecode::stats::{fdr_by, p_value, p_value_lower, NullDistribution};
use eegdecode::stimuli::{corpus_to_jsonl, generate_corpus, load_corpus, Condition, Corpus, Lexicon};
use eegdecode::synth::generate;
use eegdecode::Layer;

use crate::config::{require, RunConfig};
use crate::Failure;

type Result<T> = std::result::Result<T, Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn failed(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Compute(e.into())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(failed)?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display())).map_err(failed)
}

fn corpus(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.paths.corpus {
        Some(path) => {
            require(path, "stimulus corpus").map_err(invalid)?;
            load_corpus(path).map_err(invalid)
        }
        None => generate_corpus(cfg.stimuli.n_sentences, cfg.stimuli.seed, &Lexicon::dutch(), cfg.stimuli.slot_ms).map_err(invalid),
    }
}

fn model(cfg: &RunConfig) -> Result<LanguageModel> {
    require(&cfg.paths.checkpoint, "checkpoint").map_err(invalid)?;
    load_checkpoint(&cfg.paths.checkpoint)
        .with_context(|| format!("loading {}", cfg.paths.checkpoint.display()))
        .map_err(invalid)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let corpus = corpus(cfg)?;
    let reps = if cfg.synth.planted_layers.is_empty() {
        BTreeMap::new()
    } else {
        let model = model(cfg)?;
        extract_all(&model, &corpus).map_err(failed)?
    };
    let out = generate(&cfg.synth, &corpus, &reps).map_err(failed)?;
    let manifest = out.write(&cfg.paths.epochs).map_err(failed)?;
    write(&cfg.paths.epochs.join("stimuli.jsonl"), &corpus_to_jsonl(&corpus))?;
    eprintln!("wrote {} epochs, manifest {}", out.epochs.len(), manifest.display());
    Ok(())
}

pub fn train_lm(cfg: &RunConfig) -> Result<()> {
    let path = cfg.paths.lm_corpus.as_ref().ok_or_else(|| invalid(anyhow!("paths.lm_corpus is not set")))?;
    require(path, "language-model corpus").map_err(invalid)?;
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(invalid)?;
    let corpus = TrainingCorpus::parse(&text);
    if corpus.is_empty() {
        return Err(invalid(LmError::EmptyCorpus));
    }
    let initial = LanguageModel::initialized(cfg.model.to_config(), corpus.char_vocab(), corpus.word_vocab(), cfg.train.seed, cfg.train.init_scale)
        .map_err(invalid)?;
    let initial_loss = corpus_perplexity(&initial, &corpus).map_err(failed)?.ln();
    let (model, report) = train_model(initial, &cfg.train, &corpus, |epoch, loss| eprintln!("epoch {epoch}: loss {loss:.4}")).map_err(failed)?;
    save_checkpoint(&model, &cfg.paths.checkpoint).map_err(failed)?;
    let final_loss = corpus_perplexity(&model, &corpus).map_err(failed)?.ln();
    let mut csv = String::from("epoch,loss\n");
    writeln!(csv, "0,{initial_loss:?}").unwrap();
    for (e, l) in report.loss_curve.iter().enumerate() {
        writeln!(csv, "{},{l:?}", e + 1).unwrap();
    }
    let dir = cfg.paths.checkpoint.parent().unwrap_or(Path::new("."));
    write(&dir.join("loss_curve.csv"), &csv)?;
    eprintln!("corpus loss {initial_loss:.4} -> {final_loss:.4}; checkpoint {}", cfg.paths.checkpoint.display());
    Ok(())
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    fdr: &'static str,
    alpha: f64,
    family: Vec<String>,
    n_tests: usize,
    n_trials: usize,
    null_trials: usize,
    n_perms: usize,
    config: &'a RunConfig,
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let cases = cfg.selected_cases().map_err(invalid)?;
    let manifest = cfg.paths.epochs.join("manifest.json");
    require(&manifest, "epoch manifest").map_err(invalid)?;
    let corpus = corpus(cfg)?;
    let model = model(cfg)?;
    let epochs = load_epochs(&manifest).map_err(failed)?;
    let averaged = average_subjects(&epochs).map_err(failed)?;
    let reps = extract_all(&model, &corpus).map_err(failed)?;
    let data = AnalysisData::for_layers(&averaged, &corpus, &reps, &cfg.layers, cfg.features.window_ms).map_err(failed)?;

    let null_cfg = McConfig {
        n_trials: cfg.permutation.null_trials.min(cfg.decoder.n_trials),
        ..cfg.decoder.clone()
    };
    let nulls_dir = cfg.paths.output.join("nulls");
    let mut blocks = Vec::new();
    let mut rows = Vec::new();
    for case in &cases {
        for &layer in &cfg.layers {
            let context = || format!("{} {layer}", case.id());
            let records = run_analysis(case, &data[&layer], &cfg.decoder).with_context(context).map_err(failed)?;
            let acc = mean_accuracy(&records);
            let sd = (records.iter().map(|r| (r.acc_2v2 - acc).powi(2)).sum::<f64>() / records.len() as f64).sqrt();
            let mse = mean_mse(&records);
            let (p_acc, p_mse) = if cfg.permutation.n_perms > 0 {
                let null = run_permutation_null(case, &data[&layer], &null_cfg, cfg.permutation.n_perms, cfg.permutation.granularity)
                    .with_context(context)
                    .map_err(failed)?;
                fs::create_dir_all(&nulls_dir).with_context(|| nulls_dir.display().to_string()).map_err(failed)?;
                for (metric, values) in [("acc", &null.acc_2v2), ("mse", &null.mse)] {
                    NullDistribution::new(values.clone(), cfg.decoder.seed, cfg.permutation.granularity, cfg.permutation.min_permutations)
                        .and_then(|d| d.save(&nulls_dir.join(format!("{}_{layer}_{metric}.csv", case.id()))))
                        .map_err(failed)?;
                }
                // Same splits as the null: the first null_trials trials.
                let matched = &records[..null_cfg.n_trials];
                (Some(p_value(mean_accuracy(matched), &null.acc_2v2)), Some(p_value_lower(mean_mse(matched), &null.mse)))
            } else {
                (None, None)
            };
            eprintln!("{} {layer}: acc {acc:.3} mse {mse:.4} p {}", case.id(), p_acc.map_or("-".into(), |p| format!("{p:.4}")));
            rows.push(SummaryRow {
                case: case.id(),
                layer,
                n_trials: records.len(),
                mean_acc: acc,
                sd_acc: sd,
                mean_mse: mse,
                n_perms: cfg.permutation.n_perms,
                p_acc,
                p_mse,
                significant_acc: false,
                significant_mse: false,
            });
            blocks.push((*case, layer, records));
        }
    }
    if cfg.permutation.n_perms > 0 {
        let pa: Vec<f64> = rows.iter().map(|r| r.p_acc.unwrap()).collect();
        let pm: Vec<f64> = rows.iter().map(|r| r.p_mse.unwrap()).collect();
        let ra = fdr_by(&pa, cfg.alpha).map_err(failed)?;
        let rm = fdr_by(&pm, cfg.alpha).map_err(failed)?;
        for (i, r) in rows.iter_mut().enumerate() {
            r.significant_acc = ra.reject[i];
            r.significant_mse = rm.reject[i];
        }
    }

    let family: Vec<String> = rows.iter().map(|r| format!("{}/{}", r.case, r.layer)).collect();
    let out = &cfg.paths.output;
    write(&out.join(report::TRIALS_FILE), &trials_csv(&blocks))?;
    write(&out.join(report::SUMMARY_FILE), &summary_csv(&rows, &family.join(";")))?;
    let table = format!(
        "## 2 vs. 2 accuracy (* BY-FDR significant)\n\n{}\n## MSE (* BY-FDR significant, lower tail)\n\n{}",
        summary_table(&rows, Metric::Acc2v2),
        summary_table(&rows, Metric::Mse)
    );
    write(&out.join("summary.md"), &table)?;
    let meta = RunMetadata {
        fdr: "BY",
        alpha: cfg.alpha,
        n_tests: family.len(),
        family,
        n_trials: cfg.decoder.n_trials,
        null_trials: null_cfg.n_trials,
        n_perms: cfg.permutation.n_perms,
        config: cfg,
    };
    write(&out.join("metadata.json"), &(serde_json::to_string_pretty(&meta).map_err(failed)? + "\n"))?;
    print!("{table}");
    Ok(())
}

fn probe_tasks(cfg: &RunConfig) -> Result<Vec<ProbeTask>> {
    cfg.paths.probe_tasks.iter().map(|p| ProbeTask::load(p).map_err(invalid)).collect()
}

pub fn probe(cfg: &RunConfig) -> Result<()> {
    let layers = &cfg.layers;
    let mut rows: Vec<(String, String, BTreeMap<Layer, f64>)> = Vec::new();
    if cfg.probe.synthetic {
        let suite = planted_suite(&cfg.probe.planted);
        for (t, task) in suite.tasks.iter().enumerate() {
            let acc = layers
                .par_iter()
                .map(|&l| Ok((l, train_probe(task, &suite.embeddings[t][&l], &cfg.probe.mlp)?.1.test_accuracy)))
                .collect::<std::result::Result<BTreeMap<_, _>, eegdecode::probing::ProbeError>>()
                .with_context(|| task.name.clone())
                .map_err(failed)?;
            rows.push((task.name.clone(), task.kind.to_string(), acc));
        }
    } else {
        let tasks = probe_tasks(cfg)?;
        if !tasks.is_empty() {
            let model = model(cfg)?;
            for task in &tasks {
                let emb = embed_task(&model, task).with_context(|| task.name.clone()).map_err(failed)?;
                let acc = layers
                    .par_iter()
                    .map(|&l| Ok((l, train_probe(task, &emb[&l], &cfg.probe.mlp)?.1.test_accuracy)))
                    .collect::<std::result::Result<BTreeMap<_, _>, eegdecode::probing::ProbeError>>()
                    .with_context(|| task.name.clone())
                    .map_err(failed)?;
                rows.push((task.name.clone(), task.kind.to_string(), acc));
            }
        }
    }
    let csv = probe_csv(&rows);
    write(&cfg.paths.output.join("probe.csv"), &csv)?;
    print!("{csv}");

    if cfg.probe.word_order {
        let corpus = corpus(cfg)?;
        let model = model(cfg)?;
        let reps = extract_all(&model, &corpus).map_err(failed)?;
        let mut csv = String::from("layer,accuracy,n_train,n_test\n");
        for &l in layers {
            let sentences: Vec<_> = reps
                .iter()
                .filter(|((c, _), _)| *c == Condition::Sentence)
                .map(|(_, acts)| acts.iter().map(|a| a.get(l).clone()).collect::<Vec<_>>())
                .collect();
            let pairs = sample_word_pairs(&sentences, cfg.probe.pairs_per_sentence, cfg.probe.mlp.seed);
            let r = word_order_probe(&pairs, 0.2, &cfg.probe.mlp).with_context(|| format!("word order {l}")).map_err(failed)?;
            writeln!(csv, "{l},{:?},{},{}", r.accuracy, r.n_train, r.n_test).unwrap();
        }
        write(&cfg.paths.output.join("word_order.csv"), &csv)?;
        print!("{csv}");
    }
    Ok(())
}

pub fn report(cfg: &RunConfig, results: Option<PathBuf>, mse: bool, reference: bool) -> Result<()> {
    if reference {
        let text = report::reference::render_all().map_err(failed)?;
        write(&cfg.paths.output.join("reference.md"), &text)?;
        print!("{text}");
        return Ok(());
    }
    let dir = results.unwrap_or_else(|| cfg.paths.output.clone());
    let rows = load_summary(&dir).map_err(invalid)?;
    let metric = if mse { Metric::Mse } else { Metric::Acc2v2 };
    let plot = plot_data(&rows, metric).map_err(invalid)?;
    let name = if mse { "plot_mse.json" } else { "plot.json" };
    write(&dir.join(name), &(serde_json::to_string_pretty(&plot).map_err(failed)? + "\n"))?;
    print!("{}", summary_table(&rows, metric));
    Ok(())
}

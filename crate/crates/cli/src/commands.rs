use std::path::{Path, PathBuf};

use anyhow::Context;
use elp_core::corpus::{
    compute_stats, parse_click_log, parse_serp_dump, read_cache, write_cache, ClarificationRecord, Corpus, CorpusError,
    JoinOptions,
};
use elp_core::experiments::{
    analyze_by_bucket, fit_recipe, generate_synthetic, pane_group_split, prepare_dataset, run_ablation,
    run_main_comparison, run_pane_reranking, series_tsv, spec_hash, sweep_result_count, ModelKind,
    ModelRecipe,
};
use elp_core::featurize::InputSetting;
use elp_core::metrics::regression_scores;

use crate::config::RunConfig;
use crate::exit::{config_error, Failure, EMPTY_CORPUS};
use crate::manifest::Output;
use crate::Common;

pub const CACHE_FILE: &str = "corpus.cache.json";

/// Corpus read failures are input errors, except an empty corpus.
fn corpus_failure(e: CorpusError) -> Failure {
    match e {
        CorpusError::EmptyCorpus => Failure::new(EMPTY_CORPUS, e),
        other => Failure::input(other),
    }
}

fn require_file(flag: &str, path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::input(anyhow::anyhow!("{flag}: cannot read {}", path.display())))
    }
}

/// Loads `--config` and applies flag overrides.
fn effective_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &common.corpus {
        require_file("--corpus", p)?;
        c.corpus.cache = Some(p.clone());
        c.corpus.click_log = None;
        c.corpus.serp_dump = None;
        c.corpus.synthetic = None;
    }
    if let Some(o) = &common.out {
        c.out = Some(o.clone());
    }
    if let Some(s) = common.seed {
        c.seed = s;
        c.synth.seed = s;
        c.rerank.options.seed = s;
        if let Some(e) = &mut c.experiment {
            e.split_seed = s;
            e.train_seeds = vec![s];
        }
        if let Some(w) = &mut c.sweep {
            w.split_seed = s;
            w.train_seed = s;
        }
    }
    if let Some(d) = common.dataset {
        c.dataset = d;
        if let Some(e) = &mut c.experiment {
            e.datasets = vec![d];
        }
        if let Some(w) = &mut c.sweep {
            w.dataset = d;
        }
    }
    if let Some(s) = common.setting {
        c.setting = s;
    }
    if let Some(m) = common.max_results {
        c.max_results = m;
        if let Some(e) = &mut c.experiment {
            e.max_results = m;
        }
    }
    Ok(c)
}

fn default_cache(common: &Common) -> Option<PathBuf> {
    common.cache_dir.as_ref().map(|d| d.join(CACHE_FILE)).filter(|p| p.is_file())
}

fn load_corpus(config: &mut RunConfig, common: &Common) -> Result<Corpus, Failure> {
    if config.corpus.cache.is_none() && config.corpus.click_log.is_none() && config.corpus.synthetic.is_none() {
        match default_cache(common) {
            Some(p) => config.corpus.cache = Some(p),
            None => {
                return Err(Failure::input(anyhow::anyhow!(
                    "no corpus: pass --corpus, set a [corpus] source in the config, or ingest into ELP_CACHE_DIR"
                )))
            }
        }
    }
    let c = &config.corpus;
    let corpus = if let Some(p) = &c.cache {
        read_cache(p).map_err(corpus_failure)?
    } else if let Some(spec) = &c.synthetic {
        generate_synthetic(spec)?
    } else {
        let log = c.click_log.as_ref().expect("checked above");
        let corpus = parse_click_log(log, &c.columns).map_err(corpus_failure)?;
        match &c.serp_dump {
            Some(dump) => {
                let (serps, report) = parse_serp_dump(dump).map_err(corpus_failure)?;
                if report.malformed > 0 {
                    log::warn!("{}: skipped {} malformed lines", dump.display(), report.malformed);
                }
                let joined = corpus.join(
                    &serps,
                    JoinOptions {
                        case_fold: c.case_fold_join,
                    },
                );
                let mut provenance = joined.provenance().clone();
                provenance.serp_parse = Some(report);
                Corpus::new(joined.into_records(), provenance).map_err(corpus_failure)?
            }
            None => {
                log::warn!("no SERP dump given; records carry no search results");
                corpus
            }
        }
    };
    log::info!("corpus: {} records, hash {}", corpus.len(), corpus.content_hash());
    Ok(corpus)
}

fn output(config: &RunConfig, overwrite: bool, fallback: Option<&Path>) -> Result<Output, Failure> {
    let dir = config
        .out
        .as_deref()
        .or(fallback)
        .ok_or_else(|| Failure::input(anyhow::anyhow!("no output directory: pass --out")))?;
    Output::create(dir, overwrite)
}

fn log_start(command: &str, config: &RunConfig) {
    log::info!(
        "{command}: seed {} dataset {} setting {} config hash {}",
        config.seed,
        config.dataset,
        config.setting,
        spec_hash(config)
    );
}

pub fn ingest(
    common: &Common,
    click_log: Option<PathBuf>,
    serp_dump: Option<PathBuf>,
    case_fold_join: bool,
) -> Result<(), Failure> {
    let mut config = effective_config(common)?;
    if let Some(p) = click_log {
        require_file("--click-log", &p)?;
        config.corpus.click_log = Some(p);
        config.corpus.cache = None;
        config.corpus.synthetic = None;
    }
    if let Some(p) = serp_dump {
        require_file("--serp-dump", &p)?;
        config.corpus.serp_dump = Some(p);
    }
    config.corpus.case_fold_join |= case_fold_join;
    if config.corpus.click_log.is_none() {
        return Err(Failure::input(anyhow::anyhow!("ingest needs --click-log")));
    }
    config.validate()?;
    log_start("ingest", &config);
    let corpus = load_corpus(&mut config, common)?;
    let mut out = output(&config, common.overwrite, common.cache_dir.as_deref())?;
    write_corpus(&mut out, &corpus)?;
    out.write_json("provenance.json", corpus.provenance())?;
    out.finish("ingest", &config, Some(corpus.content_hash()))
}

fn write_corpus(out: &mut Output, corpus: &Corpus) -> Result<(), Failure> {
    write_cache(corpus, &out.path(CACHE_FILE)).context("writing corpus cache")?;
    out.record(CACHE_FILE);
    let stats = compute_stats(corpus).map_err(corpus_failure)?;
    out.write("stats.tsv", &stats.to_tsv())?;
    out.write_json("stats.json", &stats)
}

/// Runs a command other than `ingest`.
pub fn run(command: &str, common: &Common) -> Result<(), Failure> {
    let mut config = effective_config(common)?;
    config.validate()?;
    log_start(command, &config);
    if command == "synth" {
        let corpus = generate_synthetic(&config.synth).map_err(|e| config_error(format!("synth: {e}")))?;
        log::info!(
            "synthetic corpus: {} records, ceiling R² {:.4}",
            corpus.len(),
            config.synth.variance_ratio_ceiling()
        );
        let mut out = output(&config, common.overwrite, None)?;
        write_corpus(&mut out, &corpus)?;
        out.write_json("synthetic_spec.json", &config.synth)?;
        return out.finish(command, &config, Some(corpus.content_hash()));
    }
    let corpus = load_corpus(&mut config, common)?;
    let mut out = output(&config, common.overwrite, None)?;
    match command {
        "stats" => {
            let stats = compute_stats(&corpus).map_err(corpus_failure)?;
            out.write("stats.tsv", &stats.to_tsv())?;
            out.write_json("stats.json", &stats)?;
        }
        "train" => train(&config, &corpus, &mut out)?,
        "evaluate" => {
            let spec = config.experiment_spec(vec![config.setting], default_roster(&config.model));
            let report = run_main_comparison(&spec, &corpus)?;
            out.write("comparison.tsv", &report.to_table().to_tsv())?;
            out.write_json("comparison.json", &report)?;
            for (row, g) in &report.grids {
                out.write(&format!("grid_row{row}.tsv"), &g.to_tsv())?;
            }
        }
        "ablate" => {
            let spec = config.experiment_spec(InputSetting::ALL.to_vec(), vec![config.model.clone()]);
            let report = run_ablation(&spec, &corpus)?;
            out.write("ablation.tsv", &report.to_table().to_tsv())?;
            out.write_json("ablation.json", &report)?;
            if let Some(sweep) = &config.sweep {
                let recipe = spec.roster.first().cloned().unwrap_or_else(|| config.model.clone());
                let s = sweep_result_count(&recipe, &corpus, sweep)?;
                out.write("sweep.tsv", &s.to_table().to_tsv())?;
                out.write("sweep_series.tsv", &series_tsv(&s.series()))?;
            }
        }
        "analyze" => analyze(&config, &corpus, &mut out)?,
        "rerank" => rerank(&config, &corpus, &mut out)?,
        other => unreachable!("unknown command {other}"),
    }
    out.finish(command, &config, Some(corpus.content_hash()))
}

/// The static baselines followed by the configured model.
fn default_roster(model: &ModelRecipe) -> Vec<ModelRecipe> {
    let mut roster: Vec<ModelRecipe> = [ModelKind::Mean, ModelKind::Median, ModelKind::Normal]
        .into_iter()
        .filter(|&k| k != model.kind)
        .map(ModelRecipe::new)
        .collect();
    roster.push(model.clone());
    roster
}

struct Holdout {
    train: Vec<ClarificationRecord>,
    test: Vec<ClarificationRecord>,
}

fn holdout(config: &RunConfig, corpus: &Corpus) -> Result<Holdout, Failure> {
    let (prepared, _) = prepare_dataset(corpus, config.dataset, &[config.setting])?;
    let (train, test) = prepared.holdout_split(config.test_fraction, config.seed).map_err(corpus_failure)?;
    Ok(Holdout {
        train: train.into_records(),
        test: test.into_records(),
    })
}

fn predictions_tsv(records: &[ClarificationRecord], predictions: &[f64]) -> String {
    let mut s = String::from("index\tquery\tengagement\tprediction\n");
    for (i, (r, p)) in records.iter().zip(predictions).enumerate() {
        s.push_str(&format!("{i}\t{}\t{}\t{p:.6}\n", r.query.replace(['\t', '\n'], " "), r.engagement));
    }
    s
}

fn train(config: &RunConfig, corpus: &Corpus, out: &mut Output) -> Result<(), Failure> {
    let h = holdout(config, corpus)?;
    let fitted = fit_recipe(&config.model, config.setting, config.max_results, &h.train, config.seed)?;
    let predictions = fitted.model.predict(&h.test)?;
    let labels: Vec<f64> = h.test.iter().map(ClarificationRecord::engagement_f64).collect();
    let scores = regression_scores(&labels, &predictions)?;
    log::info!("test MAE {:.4} MSE {:.4} R² {:.4}", scores.mae, scores.mse, scores.r2);
    out.write_json("model.json", &fitted.model.checkpoint()?)?;
    out.write_json("scores.json", &scores)?;
    out.write("predictions.tsv", &predictions_tsv(&h.test, &predictions))?;
    if let Some(g) = &fitted.grid {
        out.write("grid.tsv", &g.to_tsv())?;
    }
    Ok(())
}

fn analyze(config: &RunConfig, corpus: &Corpus, out: &mut Output) -> Result<(), Failure> {
    let h = holdout(config, corpus)?;
    let fitted = fit_recipe(&config.model, config.setting, config.max_results, &h.train, config.seed)?;
    let predictions = fitted.model.predict(&h.test)?;
    let mut reports = Vec::new();
    for &axis in &config.analysis.axes {
        let r = analyze_by_bucket(&predictions, &h.test, axis, &config.analysis.options)?;
        out.write(&format!("analysis_{axis}.tsv"), &r.to_table().to_tsv())?;
        reports.push(r);
    }
    out.write_json("analysis.json", &reports)
}

fn rerank(config: &RunConfig, corpus: &Corpus, out: &mut Output) -> Result<(), Failure> {
    let (prepared, _) = prepare_dataset(corpus, config.dataset, &[config.setting])?;
    let (train, test) = pane_group_split(&prepared, config.rerank.test_fraction, config.seed)?;
    let fitted = fit_recipe(&config.model, config.setting, config.max_results, train.records(), config.seed)?;
    let report = run_pane_reranking(fitted.model.as_ref(), &test, &config.rerank.options)?;
    out.write("rerank.tsv", &report.to_table().to_tsv())?;
    out.write_json("rerank.json", &report)
}

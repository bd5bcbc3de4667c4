//! The pipeline commands behind the CLI: corpus generation, base training,
//! editing, evaluation, the full reproduction run, and the error-set
//! experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::corpus::{gen_corpus, load_dataset, load_manifest, save_dataset, Dataset, EditExample};
use crate::editing::{
    finetune_baseline, sequential_edit, EditMethod, EditMethodKind, EditReport, EditedModel,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, error_set_select, write_reports, EvalContext, MetricsReport, ReportFiles};
use crate::model::{
    init_model, load_checkpoint, save_checkpoint, train_base, CheckpointMeta, Model, TrainOutcome,
};
use crate::patching::MemorySource;

pub fn base_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint_dir.join("base.pfc")
}

pub fn edited_checkpoint_path(cfg: &RunConfig, kind: EditMethodKind) -> PathBuf {
    cfg.paths
        .checkpoint_dir
        .join(format!("edited-{}.pfc", kind.slug()))
}

fn edit_report_path(cfg: &RunConfig, stem: &str) -> PathBuf {
    cfg.paths.report_dir.join(format!("{stem}.json"))
}

fn write_edit_report(path: &Path, report: &EditReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Generates the corpus and writes its files.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Dataset> {
    let eff = cfg.effective()?;
    let dataset = gen_corpus(&eff.gen)?;
    save_dataset(&dataset, &eff.paths.corpus_dir, Some(&cfg.config_hash()))?;
    Ok(dataset)
}

fn load_corpus(cfg: &RunConfig) -> Result<Dataset> {
    load_dataset(&cfg.paths.corpus_dir).map_err(|e| {
        Error::Data(format!(
            "cannot load corpus from {} ({e}); run `gen-data` first",
            cfg.paths.corpus_dir.display()
        ))
    })
}

/// Trains the base model on an existing corpus and checkpoints the best
/// validation epoch.
pub fn cmd_train_base(cfg: &RunConfig) -> Result<TrainOutcome> {
    let eff = cfg.effective()?;
    let dataset = load_corpus(&eff)?;
    let outcome = train_and_save(cfg, &eff, &dataset)?;
    Ok(outcome)
}

fn train_and_save(cfg: &RunConfig, eff: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let model = init_model(&eff.model)?;
    let outcome = train_base(&model, dataset, &eff.train)?;
    save_checkpoint(
        &base_checkpoint_path(eff),
        &outcome.model,
        &crate::patching::PatchBank::new(outcome.model.last_layer_index()),
        &CheckpointMeta {
            method: "Original".to_string(),
            config_hash: Some(cfg.config_hash()),
        },
    )?;
    std::fs::create_dir_all(&eff.paths.report_dir)?;
    let curve = serde_json::json!({
        "val_accuracy": outcome.val_accuracy,
        "config_hash": cfg.config_hash(),
    });
    std::fs::write(
        eff.paths.report_dir.join("train-curve.json"),
        format!("{}\n", serde_json::to_string_pretty(&curve)?),
    )?;
    Ok(outcome)
}

fn build_memory(model: &Model, dataset: &Dataset) -> Result<MemorySource> {
    let pool = dataset
        .train()
        .into_iter()
        .chain(dataset.test())
        .map(|ex| &ex.english);
    MemorySource::from_sequences(model, pool)
}

fn edit_method(cfg: &RunConfig, dataset: &Dataset, kind: EditMethodKind, seed: u64) -> EditMethod {
    EditMethod {
        kind,
        language_list: dataset.parallel_languages(),
        loss: cfg.patch_loss.clone(),
        seed,
        train_on_all_languages: cfg.train_on_all_languages,
    }
}

fn run_method(
    cfg: &RunConfig,
    dataset: &Dataset,
    base: &Model,
    memory: &MemorySource,
    d_edit: &[&EditExample],
    kind: EditMethodKind,
    seed: u64,
) -> Result<(EditedModel, EditReport)> {
    let (edited, mut report) = match kind {
        EditMethodKind::FineTune => finetune_baseline(base, d_edit, &cfg.finetune)?,
        _ => sequential_edit(base, d_edit, &edit_method(cfg, dataset, kind, seed), memory)?,
    };
    report.config_hash = Some(cfg.config_hash());
    Ok((edited, report))
}

/// Runs one editing method against the stored base checkpoint and saves
/// the edited checkpoint plus its edit report.
pub fn cmd_edit(cfg: &RunConfig, kind: EditMethodKind) -> Result<(EditedModel, EditReport)> {
    let eff = cfg.effective()?;
    let dataset = load_corpus(&eff)?;
    let (base, _, _) = load_checkpoint(&base_checkpoint_path(&eff))?;
    let memory = build_memory(&base, &dataset)?;
    let d_edit = dataset.edit();
    let (edited, report) = run_method(
        cfg,
        &dataset,
        &base,
        &memory,
        &d_edit,
        kind,
        cfg.edit_seed(kind),
    )?;
    save_checkpoint(
        &edited_checkpoint_path(&eff, kind),
        &edited.model,
        &edited.bank,
        &CheckpointMeta {
            method: kind.display_name().to_string(),
            config_hash: Some(cfg.config_hash()),
        },
    )?;
    write_edit_report(
        &edit_report_path(&eff, &format!("edit-{}", kind.slug())),
        &report,
    )?;
    Ok((edited, report))
}

fn seeds_map(cfg: &RunConfig, eff: &RunConfig, edit_seed: Option<u64>) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    m.insert("global".to_string(), cfg.seed);
    m.insert("corpus".to_string(), eff.gen.seed);
    m.insert("model".to_string(), eff.model.seed);
    m.insert("train".to_string(), eff.train.seed);
    m.insert("locality".to_string(), cfg.locality_seed());
    if let Some(s) = edit_seed {
        m.insert("edit".to_string(), s);
    }
    m
}

fn eval_report(
    cfg: &RunConfig,
    eff: &RunConfig,
    dataset: &Dataset,
    d_edit: Vec<&EditExample>,
    edited: &EditedModel,
    method: &str,
    edit_seed: Option<u64>,
) -> Result<MetricsReport> {
    let ctx = EvalContext {
        dataset,
        d_edit,
        locality_fraction: cfg.locality_train_fraction,
        locality_seed: cfg.locality_seed(),
        seeds: seeds_map(cfg, eff, edit_seed),
        config_hash: Some(cfg.config_hash()),
    };
    evaluate(edited, method, edited.bank.len(), &ctx)
}

fn method_stem(method: &str) -> String {
    let mut out = String::new();
    for c in method.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// Evaluates one stored checkpoint on the stored corpus and writes its
/// metric files.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let eff = cfg.effective()?;
    let dataset = load_corpus(&eff)?;
    let (model, bank, meta) = load_checkpoint(checkpoint)?;
    let edited = EditedModel { model, bank };
    let report = eval_report(
        cfg,
        &eff,
        &dataset,
        dataset.edit(),
        &edited,
        &meta.method,
        None,
    )?;
    write_reports(
        std::slice::from_ref(&report),
        &eff.paths.report_dir,
        &format!("metrics-{}", method_stem(&meta.method)),
        Some(&cfg.config_hash()),
    )?;
    Ok(report)
}

pub struct ReproduceSummary {
    pub dataset: Dataset,
    pub base: Model,
    pub val_accuracy: Vec<f64>,
    pub reports: Vec<MetricsReport>,
    pub edit_reports: Vec<EditReport>,
    pub edited: Vec<(EditMethodKind, EditedModel)>,
    pub files: ReportFiles,
}

/// The full pipeline: generate, train, edit with every configured method,
/// evaluate everything, and emit one comparison-table CSV plus JSON.
pub fn cmd_reproduce(cfg: &RunConfig) -> Result<ReproduceSummary> {
    let eff = cfg.effective()?;
    let dataset = gen_corpus(&eff.gen)?;
    save_dataset(&dataset, &eff.paths.corpus_dir, Some(&cfg.config_hash()))?;
    let outcome = train_and_save(cfg, &eff, &dataset)?;
    let base = outcome.model;
    let memory = build_memory(&base, &dataset)?;
    let d_edit = dataset.edit();

    let mut reports = Vec::new();
    let original = EditedModel::unedited(base.clone());
    reports.push(eval_report(
        cfg,
        &eff,
        &dataset,
        d_edit.clone(),
        &original,
        "Original",
        None,
    )?);

    let mut edit_reports = Vec::new();
    let mut edited_models = Vec::new();
    for &kind in &cfg.methods {
        let seed = cfg.edit_seed(kind);
        let (edited, report) =
            run_method(cfg, &dataset, &base, &memory, &d_edit, kind, seed)?;
        save_checkpoint(
            &edited_checkpoint_path(&eff, kind),
            &edited.model,
            &edited.bank,
            &CheckpointMeta {
                method: kind.display_name().to_string(),
                config_hash: Some(cfg.config_hash()),
            },
        )?;
        write_edit_report(
            &edit_report_path(&eff, &format!("edit-{}", kind.slug())),
            &report,
        )?;
        reports.push(eval_report(
            cfg,
            &eff,
            &dataset,
            d_edit.clone(),
            &edited,
            kind.display_name(),
            Some(seed),
        )?);
        edit_reports.push(report);
        edited_models.push((kind, edited));
    }

    let files = write_reports(
        &reports,
        &eff.paths.report_dir,
        "reproduce",
        Some(&cfg.config_hash()),
    )?;
    Ok(ReproduceSummary {
        dataset,
        base,
        val_accuracy: outcome.val_accuracy,
        reports,
        edit_reports,
        edited: edited_models,
        files,
    })
}

pub struct ErrorSetSummary {
    pub subset_ids: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    pub edit_reports: Vec<EditReport>,
    pub edited: Vec<(EditMethodKind, EditedModel)>,
    pub files: ReportFiles,
}

/// The error-set experiment: select edit examples the base model gets
/// wrong in every language, then compare editing methods on that subset.
/// Reuses stored corpus/base artifacts when present.
pub fn cmd_error_set(cfg: &RunConfig) -> Result<ErrorSetSummary> {
    let eff = cfg.effective()?;
    let dataset = if load_manifest(&eff.paths.corpus_dir).is_ok() {
        load_corpus(&eff)?
    } else {
        let ds = gen_corpus(&eff.gen)?;
        save_dataset(&ds, &eff.paths.corpus_dir, Some(&cfg.config_hash()))?;
        ds
    };
    let base_path = base_checkpoint_path(&eff);
    let base = if base_path.exists() {
        load_checkpoint(&base_path)?.0
    } else {
        train_and_save(cfg, &eff, &dataset)?.model
    };

    let d_edit = dataset.edit();
    let languages = dataset.parallel_languages();
    let subset = error_set_select(&base, &d_edit, &languages)?;
    if subset.is_empty() {
        return Err(Error::Data(
            "error set is empty: the base model gets no edit example wrong in every language"
                .to_string(),
        ));
    }
    let subset_ids: Vec<u64> = subset.iter().map(|e| e.id).collect();
    let memory = build_memory(&base, &dataset)?;

    let mut reports = Vec::new();
    let original = EditedModel::unedited(base.clone());
    reports.push(eval_report(
        cfg,
        &eff,
        &dataset,
        subset.clone(),
        &original,
        "Original",
        None,
    )?);

    // table rows: Fine-tuning, T-patcher, and the multilingual patch
    // method under its plain name
    let rows = [
        (EditMethodKind::FineTune, "Fine-tuning"),
        (EditMethodKind::TPatcher, "T-patcher"),
        (EditMethodKind::MpnOnly, "MPN"),
    ];
    let mut edit_reports = Vec::new();
    let mut edited_models = Vec::new();
    for (kind, label) in rows {
        let seed = cfg.error_set_seed(kind);
        let (edited, mut report) =
            run_method(cfg, &dataset, &base, &memory, &subset, kind, seed)?;
        report.method = label.to_string();
        write_edit_report(
            &edit_report_path(&eff, &format!("edit-error-set-{}", kind.slug())),
            &report,
        )?;
        reports.push(eval_report(
            cfg,
            &eff,
            &dataset,
            subset.clone(),
            &edited,
            label,
            Some(seed),
        )?);
        edit_reports.push(report);
        edited_models.push((kind, edited));
    }

    let files = write_reports(
        &reports,
        &eff.paths.report_dir,
        "error-set",
        Some(&cfg.config_hash()),
    )?;
    Ok(ErrorSetSummary {
        subset_ids,
        reports,
        edit_reports,
        edited: edited_models,
        files,
    })
}

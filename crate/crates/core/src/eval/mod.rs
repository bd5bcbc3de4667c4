//! Editing metrics and report emission.
//!
//! Reliability: accuracy of the edited model on the English edit inputs.
//! MLG: accuracy on the English rephrase set (absent when the corpus has
//! no rephrases). CLG: per-language accuracy of parallel inputs against
//! the English labels, plus the unweighted average. Locality: accuracy on
//! unrelated examples — a seeded subsample of the training split and the
//! whole test split.

mod report;

pub use report::{parse_csv, render_csv, render_json, write_reports, ReportFiles};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EditExample};
use crate::editing::EditedModel;
use crate::error::{Error, Result};
use crate::model::{Model, TokenSequence};
use crate::numerics::rng::seeded_rng;

/// Anything that turns a token sequence into a class; lets metric code run
/// against real edited models and hand-built test fixtures alike.
pub trait Predict {
    fn predict_class(&self, tokens: &TokenSequence) -> Result<usize>;
}

impl Predict for EditedModel {
    fn predict_class(&self, tokens: &TokenSequence) -> Result<usize> {
        self.predict(tokens)
    }
}

impl Predict for Model {
    fn predict_class(&self, tokens: &TokenSequence) -> Result<usize> {
        self.predict(tokens, None)
    }
}

impl<F> Predict for F
where
    F: Fn(&TokenSequence) -> usize,
{
    fn predict_class(&self, tokens: &TokenSequence) -> Result<usize> {
        Ok(self(tokens))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangScore {
    pub lang: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalitySample {
    pub fraction: f64,
    pub seed: u64,
    pub size: usize,
}

/// One method's full metric row; mirrors the comparison-table layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub patch_count: usize,
    pub reliability: f64,
    /// Absent (not zero) when the corpus carries no rephrase set.
    pub mlg: Option<f64>,
    pub clg: Vec<LangScore>,
    pub clg_avg: f64,
    pub locality_train: f64,
    pub locality_test: f64,
    pub locality_train_sample: LocalitySample,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: Option<String>,
}

fn fraction(correct: usize, total: usize) -> f64 {
    correct as f64 / total as f64
}

/// Success rate of the edited model on the English edit inputs.
pub fn reliability(predictor: &impl Predict, d_edit: &[&EditExample]) -> Result<f64> {
    if d_edit.is_empty() {
        return Err(Error::Data("reliability over an empty edit set".to_string()));
    }
    let mut correct = 0usize;
    for ex in d_edit {
        if predictor.predict_class(&ex.english)? == ex.label.class_index() {
            correct += 1;
        }
    }
    Ok(fraction(correct, d_edit.len()))
}

/// Monolingual generalization over the rephrase view; `None` when the
/// view is empty.
pub fn mlg(predictor: &impl Predict, d_edit: &[&EditExample]) -> Result<Option<f64>> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in d_edit {
        for r in &ex.rephrases {
            total += 1;
            if predictor.predict_class(r)? == ex.label.class_index() {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Ok(None);
    }
    Ok(Some(fraction(correct, total)))
}

/// Cross-lingual generalization: per-language accuracy of parallel inputs
/// against the English labels, plus the unweighted mean.
pub fn clg(
    predictor: &impl Predict,
    d_edit: &[&EditExample],
    languages: &[String],
) -> Result<(Vec<LangScore>, f64)> {
    if d_edit.is_empty() {
        return Err(Error::Data("clg over an empty edit set".to_string()));
    }
    let mut scores = Vec::with_capacity(languages.len());
    for lang in languages {
        let mut correct = 0usize;
        for ex in d_edit {
            let tokens = ex.tokens(lang)?;
            if predictor.predict_class(tokens)? == ex.label.class_index() {
                correct += 1;
            }
        }
        scores.push(LangScore {
            lang: lang.clone(),
            value: fraction(correct, d_edit.len()),
        });
    }
    let avg = scores.iter().map(|s| s.value).sum::<f64>() / scores.len() as f64;
    Ok((scores, avg))
}

/// Accuracy against ground-truth labels on unrelated English examples.
pub fn locality(
    predictor: &impl Predict,
    train_sample: &[&EditExample],
    d_test: &[&EditExample],
) -> Result<(f64, f64)> {
    if train_sample.is_empty() || d_test.is_empty() {
        return Err(Error::Data("locality over an empty sample".to_string()));
    }
    let acc = |set: &[&EditExample]| -> Result<f64> {
        let mut correct = 0usize;
        for ex in set {
            if predictor.predict_class(&ex.english)? == ex.label.class_index() {
                correct += 1;
            }
        }
        Ok(fraction(correct, set.len()))
    };
    Ok((acc(train_sample)?, acc(d_test)?))
}

/// Seeded subsample of the training split for the locality metric.
pub fn locality_train_sample<'a>(
    d_train: &[&'a EditExample],
    frac: f64,
    seed: u64,
) -> Vec<&'a EditExample> {
    let n = ((d_train.len() as f64 * frac).round() as usize)
        .max(1)
        .min(d_train.len());
    let mut order: Vec<usize> = (0..d_train.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut picked: Vec<usize> = order.into_iter().take(n).collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| d_train[i]).collect()
}

/// Edit examples the model gets wrong in every roster language at once.
pub fn error_set_select<'a>(
    model: &Model,
    d_edit: &[&'a EditExample],
    languages: &[String],
) -> Result<Vec<&'a EditExample>> {
    let mut selected = Vec::new();
    'outer: for ex in d_edit {
        let label = ex.label.class_index();
        if model.predict(&ex.english, None)? == label {
            continue;
        }
        for lang in languages {
            if model.predict(ex.tokens(lang)?, None)? == label {
                continue 'outer;
            }
        }
        selected.push(*ex);
    }
    Ok(selected)
}

/// Settings for one metrics evaluation.
pub struct EvalContext<'a> {
    pub dataset: &'a Dataset,
    /// Edit examples the metrics run over (the full edit split, or the
    /// error subset in the error-set experiment).
    pub d_edit: Vec<&'a EditExample>,
    pub locality_fraction: f64,
    pub locality_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: Option<String>,
}

/// Computes the full metric row for one (possibly edited) model.
pub fn evaluate(
    predictor: &impl Predict,
    method: &str,
    patch_count: usize,
    ctx: &EvalContext<'_>,
) -> Result<MetricsReport> {
    let train = ctx.dataset.train();
    let test = ctx.dataset.test();
    let languages = ctx.dataset.parallel_languages();
    let sample = locality_train_sample(&train, ctx.locality_fraction, ctx.locality_seed);

    let reliability = reliability(predictor, &ctx.d_edit)?;
    let mlg = mlg(predictor, &ctx.d_edit)?;
    let (clg, clg_avg) = clg(predictor, &ctx.d_edit, &languages)?;
    let (locality_train, locality_test) = locality(predictor, &sample, &test)?;

    Ok(MetricsReport {
        method: method.to_string(),
        patch_count,
        reliability,
        mlg,
        clg,
        clg_avg,
        locality_train,
        locality_test,
        locality_train_sample: LocalitySample {
            fraction: ctx.locality_fraction,
            seed: ctx.locality_seed,
            size: sample.len(),
        },
        seeds: ctx.seeds.clone(),
        config_hash: ctx.config_hash.clone(),
    })
}

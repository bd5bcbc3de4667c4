//! The sequential editing engine.
//!
//! Walks the edit split in dataset order. A trigger policy decides per
//! example whether the current (already partially edited) model needs an
//! edit; a triggered example gets exactly one new patch trained on the
//! English input — plus, for the multilingual variants, one randomly
//! sampled parallel-language input — and the patch freezes before the
//! stream moves on. The direct fine-tuning baseline lives here too.

mod finetune;

pub use finetune::{finetune_baseline, FinetuneConfig};

use serde::{Deserialize, Serialize};

use crate::corpus::EditExample;
use crate::error::{Error, Result};
use crate::model::{Model, TokenSequence};
use crate::numerics::rng::{derive_seed, seeded_rng, SeededRng};
use crate::patching::{new_patch, train_patch, MemorySource, PatchBank, PatchLossConfig};
use rand::Rng;

/// The four editing methods compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMethodKind {
    FineTune,
    TPatcher,
    MpnOnly,
    MpnAll,
}

impl EditMethodKind {
    pub const ALL: [EditMethodKind; 4] = [
        EditMethodKind::FineTune,
        EditMethodKind::TPatcher,
        EditMethodKind::MpnOnly,
        EditMethodKind::MpnAll,
    ];

    /// Row label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            EditMethodKind::FineTune => "Fine-tuning",
            EditMethodKind::TPatcher => "T-patcher",
            EditMethodKind::MpnOnly => "MPN(only)",
            EditMethodKind::MpnAll => "MPN(all)",
        }
    }

    /// CLI flag spelling.
    pub fn slug(self) -> &'static str {
        match self {
            EditMethodKind::FineTune => "fine-tune",
            EditMethodKind::TPatcher => "t-patcher",
            EditMethodKind::MpnOnly => "mpn-only",
            EditMethodKind::MpnAll => "mpn-all",
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.slug() == s)
    }

    pub fn trigger_policy(self) -> TriggerPolicy {
        match self {
            EditMethodKind::FineTune | EditMethodKind::TPatcher => TriggerPolicy::EnglishOnly,
            EditMethodKind::MpnOnly => TriggerPolicy::EnglishPlusSampled,
            EditMethodKind::MpnAll => TriggerPolicy::AllLanguages,
        }
    }

    pub fn is_multilingual(self) -> bool {
        matches!(self, EditMethodKind::MpnOnly | EditMethodKind::MpnAll)
    }
}

/// Which language versions a misprediction must be found in to trigger an
/// edit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriggerPolicy {
    EnglishOnly,
    EnglishPlusSampled,
    AllLanguages,
}

impl TriggerPolicy {
    /// The language versions this policy inspects, in evaluation order.
    pub fn inspected_languages(
        self,
        sampled: Option<&str>,
        language_list: &[String],
    ) -> Vec<String> {
        let mut langs = vec!["en".to_string()];
        match self {
            TriggerPolicy::EnglishOnly => {}
            TriggerPolicy::EnglishPlusSampled => {
                if let Some(l) = sampled {
                    langs.push(l.to_string());
                }
            }
            TriggerPolicy::AllLanguages => {
                langs.extend(language_list.iter().cloned());
            }
        }
        langs
    }
}

/// A fully specified editing run for one method.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditMethod {
    pub kind: EditMethodKind,
    /// Candidate parallel languages (English excluded).
    pub language_list: Vec<String>,
    pub loss: PatchLossConfig,
    pub seed: u64,
    /// Alternative reading of the multilingual variants: train on every
    /// language version instead of English plus one sample.
    pub train_on_all_languages: bool,
}

impl EditMethod {
    pub fn validate(&self) -> Result<()> {
        if self.kind.is_multilingual() && self.language_list.is_empty() {
            return Err(Error::Config(format!(
                "{} requires a nonempty language_list",
                self.kind.display_name()
            )));
        }
        if self.language_list.iter().any(|l| l == "en") {
            return Err(Error::Config(
                "language_list must not contain English".to_string(),
            ));
        }
        self.loss.validate()
    }
}

/// Frozen base model plus its accumulated patches.
#[derive(Clone, Debug)]
pub struct EditedModel {
    pub model: Model,
    pub bank: PatchBank,
}

impl EditedModel {
    pub fn unedited(model: Model) -> Self {
        let bank = PatchBank::new(model.last_layer_index());
        EditedModel { model, bank }
    }

    pub fn predict(&self, tokens: &TokenSequence) -> Result<usize> {
        self.model.predict(tokens, Some(&self.bank))
    }

    pub fn predict_lang(&self, example: &EditExample, lang: &str) -> Result<usize> {
        self.predict(example.tokens(lang)?)
    }
}

/// Uniform draw of one parallel language for an edit example.
pub fn sample_parallel<'a>(
    example: &'a EditExample,
    rng: &mut SeededRng,
    language_list: &[String],
) -> Result<(String, &'a TokenSequence)> {
    assert!(!language_list.is_empty(), "language_list must be nonempty");
    let lang = &language_list[rng.random_range(0..language_list.len())];
    let tokens = example.tokens(lang)?;
    Ok((lang.clone(), tokens))
}

/// Evaluates the trigger: true iff any inspected language version is
/// mispredicted by the current model state. Returns the mispredicted set.
pub fn needs_edit(
    edited: &EditedModel,
    example: &EditExample,
    policy: TriggerPolicy,
    sampled: Option<&str>,
    language_list: &[String],
) -> Result<(bool, Vec<String>)> {
    let mut wrong = Vec::new();
    for lang in policy.inspected_languages(sampled, language_list) {
        let predicted = edited.predict_lang(example, &lang)?;
        if predicted != example.label.class_index() {
            wrong.push(lang);
        }
    }
    Ok((!wrong.is_empty(), wrong))
}

/// Per-example record of an editing run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub id: u64,
    pub triggered: bool,
    pub mispredicted_languages: Vec<String>,
    pub sampled_language: Option<String>,
    pub steps: u32,
    pub success: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditReport {
    pub method: String,
    pub seed: u64,
    pub patch_count: usize,
    pub records: Vec<EditRecord>,
    pub wall_time_secs: f64,
    pub config_hash: Option<String>,
}

impl EditReport {
    /// The report with timing zeroed, for determinism comparisons.
    pub fn without_wall_time(&self) -> EditReport {
        EditReport {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Runs one patch-based editing method over the edit stream in order.
///
/// Base parameters stay byte-identical; every triggered example adds
/// exactly one patch, trained on English plus (for MPN) the sampled
/// parallel, then frozen. Patch-training failures are recorded, not fatal.
pub fn sequential_edit(
    model: &Model,
    d_edit: &[&EditExample],
    method: &EditMethod,
    memory: &MemorySource,
) -> Result<(EditedModel, EditReport)> {
    method.validate()?;
    if method.kind == EditMethodKind::FineTune {
        return Err(Error::Config(
            "fine-tune is not a patch method; use finetune_baseline".to_string(),
        ));
    }
    if d_edit.is_empty() {
        return Err(Error::Data("empty edit stream".to_string()));
    }

    let start = std::time::Instant::now();
    let policy = method.kind.trigger_policy();
    let mut edited = EditedModel::unedited(model.clone());
    let mut lang_rng = seeded_rng(derive_seed(method.seed, "languages"));
    let mut records = Vec::with_capacity(d_edit.len());

    for ex in d_edit {
        // one draw per example regardless of triggering keeps the language
        // stream aligned across runs
        let sampled = if method.kind.is_multilingual() {
            Some(sample_parallel(ex, &mut lang_rng, &method.language_list)?)
        } else {
            None
        };
        let sampled_lang = sampled.as_ref().map(|(l, _)| l.as_str());

        let (triggered, wrong) = needs_edit(&edited, ex, policy, sampled_lang, &method.language_list)?;
        if !triggered {
            records.push(EditRecord {
                id: ex.id,
                triggered: false,
                mispredicted_languages: wrong,
                sampled_language: sampled_lang.map(str::to_string),
                steps: 0,
                success: None,
            });
            continue;
        }

        let label = ex.label.class_index();
        let mut batch: Vec<(&TokenSequence, usize)> = vec![(&ex.english, label)];
        if method.train_on_all_languages && method.kind.is_multilingual() {
            for lang in &method.language_list {
                batch.push((ex.tokens(lang)?, label));
            }
        } else if let Some((_, tokens)) = &sampled {
            batch.push((tokens, label));
        }

        let patch = new_patch(
            &edited.model,
            &edited.bank,
            &ex.english,
            ex.id,
            &method.loss,
            derive_seed(method.seed, &format!("patch:{}", ex.id)),
        )?;
        edited.bank.push(patch)?;
        let stats = train_patch(
            &edited.model,
            &mut edited.bank,
            &batch,
            memory,
            &method.loss,
            derive_seed(method.seed, &format!("train:{}", ex.id)),
        )?;

        records.push(EditRecord {
            id: ex.id,
            triggered: true,
            mispredicted_languages: wrong,
            sampled_language: sampled_lang.map(str::to_string),
            steps: stats.steps,
            success: Some(stats.success),
        });
    }

    let report = EditReport {
        method: method.kind.display_name().to_string(),
        seed: method.seed,
        patch_count: edited.bank.len(),
        records,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config_hash: None,
    };
    Ok((edited, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_inspection_sets() {
        let roster = vec!["de".to_string(), "zh".to_string()];
        assert_eq!(
            TriggerPolicy::EnglishOnly.inspected_languages(Some("de"), &roster),
            vec!["en"]
        );
        assert_eq!(
            TriggerPolicy::EnglishPlusSampled.inspected_languages(Some("zh"), &roster),
            vec!["en", "zh"]
        );
        assert_eq!(
            TriggerPolicy::AllLanguages.inspected_languages(None, &roster),
            vec!["en", "de", "zh"]
        );
    }

    #[test]
    fn method_slugs_round_trip() {
        for kind in EditMethodKind::ALL {
            assert_eq!(EditMethodKind::from_slug(kind.slug()), Some(kind));
        }
        assert_eq!(EditMethodKind::from_slug("bogus"), None);
    }

    #[test]
    fn mpn_requires_languages() {
        let method = EditMethod {
            kind: EditMethodKind::MpnOnly,
            language_list: vec![],
            loss: PatchLossConfig::default(),
            seed: 0,
            train_on_all_languages: false,
        };
        assert!(method.validate().is_err());
    }
}

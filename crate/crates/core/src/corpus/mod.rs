//! Synthetic multilingual editing corpus.
//!
//! The generator builds a private fact table over (entity, relation,
//! entity) triples with a learnable group-level truth rule plus a seeded
//! fraction of exceptions. Claims verbalize a triple (true object means
//! SUPPORTED, corrupted object means REFUTED) as language-specific token
//! ids with seeded filler tokens. The training split draws non-English
//! versions per resource weight, which is the only place cross-lingual
//! alignment can come from; low-weight languages end up low-resource.

mod generate;
pub(crate) mod io;
mod vocab;

pub use generate::{gen_corpus, make_rephrase};
pub use io::{load_dataset, load_manifest, save_dataset, sha256_hex, Manifest};
pub use vocab::{TokenKind, VocabLayout, CLS};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenSequence;

/// Classification label; two-class fact verification by default, three
/// entailment classes when the generator runs in NLI mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SUPPORTED")]
    Supported,
    #[serde(rename = "REFUTED")]
    Refuted,
    #[serde(rename = "ENTAILMENT")]
    Entailment,
    #[serde(rename = "NEUTRAL")]
    Neutral,
    #[serde(rename = "CONTRADICTION")]
    Contradiction,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Supported | Label::Entailment => 0,
            Label::Refuted | Label::Neutral => 1,
            Label::Contradiction => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Edit,
    Test,
}

/// An editable claim: English input plus its rephrase set and per-language
/// parallel set. Training examples also record which language versions the
/// base-training split actually uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditExample {
    pub id: u64,
    pub fact_id: u64,
    pub label: Label,
    pub split: Split,
    #[serde(rename = "en")]
    pub english: TokenSequence,
    pub rephrases: Vec<TokenSequence>,
    pub parallels: BTreeMap<String, TokenSequence>,
    pub train_langs: Vec<String>,
}

impl EditExample {
    /// Tokens of this example in the given language ("en" or a parallel).
    pub fn tokens(&self, lang: &str) -> Result<&TokenSequence> {
        if lang == "en" {
            return Ok(&self.english);
        }
        self.parallels.get(lang).ok_or_else(|| {
            Error::Data(format!(
                "example {} has no parallel for language {lang}",
                self.id
            ))
        })
    }
}

/// Generator configuration. English is always language 0 and the sampling
/// pivot; its resource weight must be maximal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub language_codes: Vec<String>,
    /// Per-language probability that a training fact includes that
    /// language's version.
    pub resource_weights: Vec<f64>,
    pub tokens_per_language: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    /// Entity groups behind the truth rule.
    pub n_entity_groups: usize,
    /// Fraction of facts whose true group defies the rule; the model can
    /// only memorize these, so unseen exceptions become the edit targets.
    pub exception_rate: f64,
    /// Claims across D_train / D_val / D_edit.
    pub n_facts: usize,
    /// Claims in the held-out locality test set.
    pub n_test_facts: usize,
    pub fillers_per_sentence: (usize, usize),
    pub n_rephrases: usize,
    pub split_ratios: (f64, f64, f64),
    pub nli_mode: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            language_codes: ["en", "de", "fr", "es", "zh", "ar"]
                .map(str::to_string)
                .to_vec(),
            resource_weights: vec![1.0, 0.5, 0.5, 0.5, 0.15, 0.05],
            tokens_per_language: 196,
            n_entities: 126,
            n_relations: 30,
            n_entity_groups: 6,
            exception_rate: 0.2,
            n_facts: 3000,
            n_test_facts: 300,
            fillers_per_sentence: (2, 5),
            n_rephrases: 2,
            split_ratios: (0.8, 0.1, 0.1),
            nli_mode: false,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn n_languages(&self) -> usize {
        self.language_codes.len()
    }

    pub fn vocab_size(&self) -> usize {
        1 + self.n_languages() * self.tokens_per_language
    }

    pub fn n_classes(&self) -> usize {
        if self.nli_mode {
            3
        } else {
            2
        }
    }

    /// Exact split sizes over `n_facts` (train gets the rounding slack).
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let (_, rv, re) = self.split_ratios;
        let n_val = (rv * self.n_facts as f64).round() as usize;
        let n_edit = (re * self.n_facts as f64).round() as usize;
        let n_train = self.n_facts - n_val - n_edit;
        (n_train, n_val, n_edit)
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.language_codes.is_empty() || self.language_codes[0] != "en" {
            violations.push("language_codes must start with \"en\"".to_string());
        }
        let mut uniq = std::collections::HashSet::new();
        if !self.language_codes.iter().all(|c| uniq.insert(c)) {
            violations.push("language_codes must be unique".to_string());
        }
        if self.resource_weights.len() != self.language_codes.len() {
            violations.push(format!(
                "resource_weights has {} entries for {} languages",
                self.resource_weights.len(),
                self.language_codes.len()
            ));
        } else {
            if self.resource_weights.iter().any(|w| !(*w > 0.0)) {
                violations.push("resource_weights must all be positive".to_string());
            }
            let max = self
                .resource_weights
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            if !self.resource_weights.is_empty() && self.resource_weights[0] < max {
                violations.push("English (language 0) must have the maximal weight".to_string());
            }
        }
        let (rt, rv, re) = self.split_ratios;
        if (rt + rv + re - 1.0).abs() > 1e-9 {
            violations.push(format!("split ratios sum to {}, not 1", rt + rv + re));
        }
        if rt < 0.0 || rv < 0.0 || re < 0.0 {
            violations.push("split ratios must be nonnegative".to_string());
        }
        if self.n_entity_groups < 2 {
            violations.push("n_entity_groups must be at least 2".to_string());
        }
        if self.n_entities < self.n_entity_groups * 2 {
            violations.push("need at least two entities per group".to_string());
        }
        if self.n_relations == 0 {
            violations.push("n_relations must be positive".to_string());
        }
        let content = self.n_entities + self.n_relations;
        if self.tokens_per_language < content + 4 {
            violations.push(format!(
                "tokens_per_language {} leaves fewer than 4 filler tokens ({} content tokens)",
                self.tokens_per_language, content
            ));
        }
        if self.fillers_per_sentence.0 < 2 {
            violations.push("fillers_per_sentence minimum must be at least 2".to_string());
        }
        if self.fillers_per_sentence.1 < self.fillers_per_sentence.0 {
            violations.push("fillers_per_sentence range is inverted".to_string());
        }
        if !(0.0..=1.0).contains(&self.exception_rate) {
            violations.push("exception_rate must lie in [0, 1]".to_string());
        }
        let total_facts = self.n_facts + self.n_test_facts;
        if total_facts > self.n_entities * self.n_relations {
            violations.push(format!(
                "{} facts requested but only {} (entity, relation) pairs exist",
                total_facts,
                self.n_entities * self.n_relations
            ));
        }
        let (a, b, c) = self.split_sizes();
        if a == 0 || b == 0 || c == 0 {
            violations.push("every split must be nonempty".to_string());
        }
        if self.n_rephrases == 0 && !self.nli_mode {
            violations.push("n_rephrases must be positive outside NLI mode".to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }
}

/// The generated corpus: all examples in file order plus the config that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub gen_config: GenConfig,
    pub examples: Vec<EditExample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &EditExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn train(&self) -> Vec<&EditExample> {
        self.split(Split::Train).collect()
    }

    pub fn val(&self) -> Vec<&EditExample> {
        self.split(Split::Val).collect()
    }

    pub fn edit(&self) -> Vec<&EditExample> {
        self.split(Split::Edit).collect()
    }

    pub fn test(&self) -> Vec<&EditExample> {
        self.split(Split::Test).collect()
    }

    pub fn language_codes(&self) -> &[String] {
        &self.gen_config.language_codes
    }

    /// Non-English language codes in roster order.
    pub fn parallel_languages(&self) -> Vec<String> {
        self.gen_config.language_codes[1..].to_vec()
    }

    pub fn layout(&self) -> VocabLayout {
        VocabLayout::from_config(&self.gen_config)
    }

    /// Base-training instances: one (example, language) pair per recorded
    /// training language, in file order.
    pub fn train_instances(&self) -> Result<Vec<(&EditExample, &TokenSequence)>> {
        let mut out = Vec::new();
        for ex in self.split(Split::Train) {
            for lang in &ex.train_langs {
                out.push((ex, ex.tokens(lang)?));
            }
        }
        Ok(out)
    }

    /// Structural checks applied after generation and after every load.
    pub fn validate(&self) -> Result<()> {
        self.gen_config.validate()?;
        let layout = self.layout();
        let langs = self.parallel_languages();
        let mut fact_splits: std::collections::HashMap<u64, Split> =
            std::collections::HashMap::new();
        for ex in &self.examples {
            if let Some(prev) = fact_splits.insert(ex.fact_id, ex.split) {
                if prev != ex.split {
                    return Err(Error::Data(format!(
                        "fact {} appears in more than one split",
                        ex.fact_id
                    )));
                }
            }
            for lang in &langs {
                if !ex.parallels.contains_key(lang) {
                    return Err(Error::Data(format!(
                        "example {} missing parallels for language {lang}",
                        ex.id
                    )));
                }
            }
            if ex.split == Split::Edit && ex.rephrases.is_empty() && !self.gen_config.nli_mode {
                return Err(Error::Data(format!(
                    "edit example {} carries no rephrases",
                    ex.id
                )));
            }
            // label consistency: every parallel and rephrase decodes to the
            // English content
            let reference = layout.decode_triples(&ex.english)?;
            for r in &ex.rephrases {
                if layout.decode_triples(r)? != reference {
                    return Err(Error::Data(format!(
                        "rephrase of example {} decodes to a different fact",
                        ex.id
                    )));
                }
            }
            for (lang, p) in &ex.parallels {
                if layout.decode_triples(p)? != reference {
                    return Err(Error::Data(format!(
                        "parallel {lang} of example {} decodes to a different fact",
                        ex.id
                    )));
                }
            }
            for lang in &ex.train_langs {
                if lang != "en" && !ex.parallels.contains_key(lang) {
                    return Err(Error::Data(format!(
                        "example {} lists unknown training language {lang}",
                        ex.id
                    )));
                }
            }
        }
        Ok(())
    }
}

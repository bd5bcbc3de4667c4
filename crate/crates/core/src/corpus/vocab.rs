//! Token id layout for the synthetic multilingual vocabulary.
//!
//! Token 0 is the shared classification sentinel. Each language owns a
//! disjoint block of `tokens_per_language` ids laid out as entities, then
//! relations, then fillers. Content tokens map between languages by block
//! offset; filler tokens map through a seeded per-language permutation, so
//! cross-lingual alignment carries no structural shortcut the model could
//! read off the ids.

use super::GenConfig;
use crate::error::{Error, Result};
use crate::model::TokenSequence;
use crate::numerics::rng::{derive_seed, seeded_rng};
use rand::seq::SliceRandom;

/// The classification sentinel token.
pub const CLS: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Cls,
    Entity { lang: usize, idx: usize },
    Relation { lang: usize, idx: usize },
    Filler { lang: usize, idx: usize },
}

/// Derived, deterministic view of the vocabulary described by a
/// [`GenConfig`]; reconstructing it from the same config yields the same
/// permutations.
#[derive(Clone, Debug)]
pub struct VocabLayout {
    n_languages: usize,
    tokens_per_language: usize,
    n_entities: usize,
    n_relations: usize,
    n_fillers: usize,
    /// Per-language permutation applied to English filler indices.
    filler_perms: Vec<Vec<usize>>,
    inverse_perms: Vec<Vec<usize>>,
}

impl VocabLayout {
    pub fn from_config(cfg: &GenConfig) -> Self {
        let n_languages = cfg.language_codes.len();
        let n_fillers = cfg.tokens_per_language - cfg.n_entities - cfg.n_relations;
        let mut filler_perms = Vec::with_capacity(n_languages);
        let mut inverse_perms = Vec::with_capacity(n_languages);
        for lang in 0..n_languages {
            let mut perm: Vec<usize> = (0..n_fillers).collect();
            if lang > 0 {
                let mut rng = seeded_rng(derive_seed(cfg.seed, &format!("filler-perm:{lang}")));
                perm.shuffle(&mut rng);
            }
            let mut inv = vec![0usize; n_fillers];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            filler_perms.push(perm);
            inverse_perms.push(inv);
        }
        VocabLayout {
            n_languages,
            tokens_per_language: cfg.tokens_per_language,
            n_entities: cfg.n_entities,
            n_relations: cfg.n_relations,
            n_fillers,
            filler_perms,
            inverse_perms,
        }
    }

    pub fn vocab_size(&self) -> usize {
        1 + self.n_languages * self.tokens_per_language
    }

    pub fn n_fillers(&self) -> usize {
        self.n_fillers
    }

    fn block_start(&self, lang: usize) -> u32 {
        (1 + lang * self.tokens_per_language) as u32
    }

    pub fn entity_token(&self, lang: usize, idx: usize) -> u32 {
        debug_assert!(idx < self.n_entities);
        self.block_start(lang) + idx as u32
    }

    pub fn relation_token(&self, lang: usize, idx: usize) -> u32 {
        debug_assert!(idx < self.n_relations);
        self.block_start(lang) + (self.n_entities + idx) as u32
    }

    pub fn filler_token(&self, lang: usize, idx: usize) -> u32 {
        debug_assert!(idx < self.n_fillers);
        self.block_start(lang) + (self.n_entities + self.n_relations + idx) as u32
    }

    pub fn classify(&self, token: u32) -> Result<TokenKind> {
        if token == CLS {
            return Ok(TokenKind::Cls);
        }
        let rel = (token as usize).checked_sub(1).unwrap();
        let lang = rel / self.tokens_per_language;
        if lang >= self.n_languages {
            return Err(Error::Data(format!(
                "token {token} outside vocabulary of size {}",
                self.vocab_size()
            )));
        }
        let offset = rel % self.tokens_per_language;
        Ok(if offset < self.n_entities {
            TokenKind::Entity { lang, idx: offset }
        } else if offset < self.n_entities + self.n_relations {
            TokenKind::Relation {
                lang,
                idx: offset - self.n_entities,
            }
        } else {
            TokenKind::Filler {
                lang,
                idx: offset - self.n_entities - self.n_relations,
            }
        })
    }

    /// Maps an English sequence into another language: content tokens by
    /// block offset, fillers through the language permutation. `lang == 0`
    /// is the identity; the mapping is invertible.
    pub fn map_to_language(&self, english: &TokenSequence, lang: usize) -> Result<TokenSequence> {
        if lang >= self.n_languages {
            return Err(Error::Data(format!(
                "language index {lang} out of range ({} languages)",
                self.n_languages
            )));
        }
        let mut out = Vec::with_capacity(english.len());
        for &token in english.ids() {
            let mapped = match self.classify(token)? {
                TokenKind::Cls => CLS,
                TokenKind::Entity { lang: src, idx } => {
                    self.expect_english(src, token)?;
                    self.entity_token(lang, idx)
                }
                TokenKind::Relation { lang: src, idx } => {
                    self.expect_english(src, token)?;
                    self.relation_token(lang, idx)
                }
                TokenKind::Filler { lang: src, idx } => {
                    self.expect_english(src, token)?;
                    self.filler_token(lang, self.filler_perms[lang][idx])
                }
            };
            out.push(mapped);
        }
        Ok(TokenSequence(out))
    }

    fn expect_english(&self, src: usize, token: u32) -> Result<()> {
        if src != 0 {
            return Err(Error::Data(format!(
                "token {token} belongs to language block {src}, expected English"
            )));
        }
        Ok(())
    }

    /// Maps any single-language sequence back to English.
    pub fn map_to_english(&self, seq: &TokenSequence) -> Result<TokenSequence> {
        let mut out = Vec::with_capacity(seq.len());
        for &token in seq.ids() {
            let mapped = match self.classify(token)? {
                TokenKind::Cls => CLS,
                TokenKind::Entity { idx, .. } => self.entity_token(0, idx),
                TokenKind::Relation { idx, .. } => self.relation_token(0, idx),
                TokenKind::Filler { lang, idx } => {
                    self.filler_token(0, self.inverse_perms[lang][idx])
                }
            };
            out.push(mapped);
        }
        Ok(TokenSequence(out))
    }

    /// Extracts the content triples `(subject, relation, object)` of a
    /// sequence, ignoring fillers. Fact-verification sentences carry one
    /// triple; NLI sentences carry two (premise, hypothesis).
    pub fn decode_triples(&self, seq: &TokenSequence) -> Result<Vec<(usize, usize, usize)>> {
        let mut content = Vec::new(); // (is_entity, idx) in sequence order
        for &token in seq.ids() {
            match self.classify(token)? {
                TokenKind::Entity { idx, .. } => content.push((true, idx)),
                TokenKind::Relation { idx, .. } => content.push((false, idx)),
                _ => {}
            }
        }
        if content.is_empty() || content.len() % 3 != 0 {
            return Err(Error::Data(format!(
                "sequence has {} content tokens, not a whole number of triples",
                content.len()
            )));
        }
        let mut triples = Vec::new();
        for chunk in content.chunks(3) {
            let (e1, r, e2) = (chunk[0], chunk[1], chunk[2]);
            if !(e1.0 && !r.0 && e2.0) {
                return Err(Error::Data(
                    "content tokens do not form (entity, relation, entity) triples".to_string(),
                ));
            }
            triples.push((e1.1, r.1, e2.1));
        }
        Ok(triples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GenConfig {
        GenConfig {
            language_codes: vec!["en".into(), "de".into(), "zh".into()],
            resource_weights: vec![1.0, 0.5, 0.1],
            tokens_per_language: 20,
            n_entities: 8,
            n_relations: 4,
            n_facts: 20,
            n_test_facts: 4,
            ..GenConfig::default()
        }
    }

    #[test]
    fn map_lang0_is_identity() {
        let layout = VocabLayout::from_config(&small_cfg());
        let seq = TokenSequence(vec![
            CLS,
            layout.filler_token(0, 3),
            layout.entity_token(0, 1),
            layout.relation_token(0, 2),
            layout.entity_token(0, 5),
        ]);
        assert_eq!(layout.map_to_language(&seq, 0).unwrap(), seq);
    }

    #[test]
    fn map_round_trips_through_every_language() {
        let layout = VocabLayout::from_config(&small_cfg());
        let seq = TokenSequence(vec![
            CLS,
            layout.filler_token(0, 0),
            layout.entity_token(0, 7),
            layout.filler_token(0, 6),
            layout.relation_token(0, 3),
            layout.entity_token(0, 2),
        ]);
        for lang in 0..3 {
            let mapped = layout.map_to_language(&seq, lang).unwrap();
            assert_eq!(layout.map_to_english(&mapped).unwrap(), seq);
        }
    }

    #[test]
    fn distinct_inputs_stay_distinct_in_every_language() {
        // token-level bijectivity: every english token maps to a unique
        // target token per language
        let layout = VocabLayout::from_config(&small_cfg());
        for lang in 0..3 {
            let mut seen = std::collections::HashSet::new();
            for idx in 0..8 {
                assert!(seen.insert(
                    layout
                        .map_to_language(&TokenSequence(vec![layout.entity_token(0, idx)]), lang)
                        .unwrap()
                        .0[0]
                ));
            }
            for idx in 0..4 {
                assert!(seen.insert(
                    layout
                        .map_to_language(
                            &TokenSequence(vec![layout.relation_token(0, idx)]),
                            lang
                        )
                        .unwrap()
                        .0[0]
                ));
            }
            for idx in 0..layout.n_fillers() {
                assert!(seen.insert(
                    layout
                        .map_to_language(&TokenSequence(vec![layout.filler_token(0, idx)]), lang)
                        .unwrap()
                        .0[0]
                ));
            }
        }
    }

    #[test]
    fn decode_recovers_triple_through_fillers() {
        let layout = VocabLayout::from_config(&small_cfg());
        let seq = TokenSequence(vec![
            CLS,
            layout.filler_token(0, 1),
            layout.entity_token(0, 4),
            layout.filler_token(0, 2),
            layout.relation_token(0, 0),
            layout.entity_token(0, 6),
            layout.filler_token(0, 5),
        ]);
        assert_eq!(layout.decode_triples(&seq).unwrap(), vec![(4, 0, 6)]);
        let de = layout.map_to_language(&seq, 1).unwrap();
        assert_eq!(layout.decode_triples(&de).unwrap(), vec![(4, 0, 6)]);
    }
}

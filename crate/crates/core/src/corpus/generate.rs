//! Corpus generation: fact table, claims, sentences, splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::vocab::{TokenKind, VocabLayout, CLS};
use super::{Dataset, EditExample, GenConfig, Label, Split};
use crate::error::{Error, Result};
use crate::model::TokenSequence;
use crate::numerics::rng::{derive_seed, seeded_rng, SeededRng};

struct FactTable {
    group_of_entity: Vec<usize>,
    group_members: Vec<Vec<usize>>,
    /// `[subject group][relation] -> true object group`
    rule: Vec<Vec<usize>>,
}

struct Fact {
    subject: usize,
    relation: usize,
    true_group: usize,
    true_object: usize,
}

struct Claim {
    fact_id: u64,
    label: Label,
    /// Content triples in sentence order (one for fact verification, two
    /// for NLI).
    content: Vec<(usize, usize, usize)>,
}

fn build_fact_table(cfg: &GenConfig, rng: &mut SeededRng) -> FactTable {
    let groups = cfg.n_entity_groups;
    let mut group_of_entity: Vec<usize> = (0..cfg.n_entities).map(|i| i % groups).collect();
    group_of_entity.shuffle(rng);
    let mut group_members = vec![Vec::new(); groups];
    for (e, &g) in group_of_entity.iter().enumerate() {
        group_members[g].push(e);
    }
    let rule = (0..groups)
        .map(|_| {
            (0..cfg.n_relations)
                .map(|_| rng.random_range(0..groups))
                .collect()
        })
        .collect();
    FactTable {
        group_of_entity,
        group_members,
        rule,
    }
}

fn random_entity_outside_group(
    table: &FactTable,
    group: usize,
    cfg: &GenConfig,
    rng: &mut SeededRng,
) -> usize {
    loop {
        let e = rng.random_range(0..cfg.n_entities);
        if table.group_of_entity[e] != group {
            return e;
        }
    }
}

/// Builds a sentence: CLS, then the content tokens in order with filler
/// tokens interleaved at seeded positions.
fn build_sentence(
    content: &[u32],
    n_fillers: usize,
    layout: &VocabLayout,
    rng: &mut SeededRng,
) -> TokenSequence {
    let total = content.len() + n_fillers;
    let mut slots: Vec<usize> = (0..total).collect();
    slots.shuffle(rng);
    let mut content_pos = slots[..content.len()].to_vec();
    content_pos.sort_unstable();

    let mut out = Vec::with_capacity(total + 1);
    out.push(CLS);
    let mut ci = 0;
    for pos in 0..total {
        if ci < content.len() && content_pos[ci] == pos {
            out.push(content[ci]);
            ci += 1;
        } else {
            out.push(layout.filler_token(0, rng.random_range(0..layout.n_fillers())));
        }
    }
    TokenSequence(out)
}

fn content_tokens(triples: &[(usize, usize, usize)], layout: &VocabLayout) -> Vec<u32> {
    let mut out = Vec::with_capacity(triples.len() * 3);
    for &(s, r, o) in triples {
        out.push(layout.entity_token(0, s));
        out.push(layout.relation_token(0, r));
        out.push(layout.entity_token(0, o));
    }
    out
}

/// Resamples filler tokens and shuffles filler positions while keeping the
/// content triple intact; the rephrase shares the example's label by
/// construction.
pub fn make_rephrase(
    example: &EditExample,
    cfg: &GenConfig,
    rng: &mut SeededRng,
) -> Result<TokenSequence> {
    let layout = VocabLayout::from_config(cfg);
    rephrase_sequence(&example.english, &layout, rng)
}

fn rephrase_sequence(
    english: &TokenSequence,
    layout: &VocabLayout,
    rng: &mut SeededRng,
) -> Result<TokenSequence> {
    let mut content = Vec::new();
    let mut filler_count = 0usize;
    for &t in english.ids() {
        match layout.classify(t)? {
            TokenKind::Cls => {}
            TokenKind::Filler { .. } => filler_count += 1,
            _ => content.push(t),
        }
    }
    if filler_count < 2 {
        return Err(Error::Data(
            "rephrasing needs at least 2 filler positions".to_string(),
        ));
    }
    Ok(build_sentence(&content, filler_count, layout, rng))
}

fn draw_claim(
    fact_id: u64,
    fact: &Fact,
    table: &FactTable,
    cfg: &GenConfig,
    rng: &mut SeededRng,
    spare_pairs: &[(usize, usize)],
) -> Claim {
    if cfg.nli_mode {
        // premise states the true fact; the hypothesis decides the label
        let premise = (fact.subject, fact.relation, fact.true_object);
        let (label, hypothesis) = match rng.random_range(0..3u32) {
            0 => (Label::Entailment, premise),
            1 => (
                Label::Contradiction,
                (
                    fact.subject,
                    fact.relation,
                    random_entity_outside_group(table, fact.true_group, cfg, rng),
                ),
            ),
            _ => {
                let (s2, r2) = spare_pairs[rng.random_range(0..spare_pairs.len())];
                (
                    Label::Neutral,
                    (s2, r2, rng.random_range(0..cfg.n_entities)),
                )
            }
        };
        Claim {
            fact_id,
            label,
            content: vec![premise, hypothesis],
        }
    } else {
        let supported = rng.random_range(0..2u32) == 0;
        let (label, object) = if supported {
            (Label::Supported, fact.true_object)
        } else {
            (
                Label::Refuted,
                random_entity_outside_group(table, fact.true_group, cfg, rng),
            )
        };
        Claim {
            fact_id,
            label,
            content: vec![(fact.subject, fact.relation, object)],
        }
    }
}

struct Rolled {
    table: FactTable,
    spare_pairs: Vec<(usize, usize)>,
    facts: Vec<Fact>,
}

/// Deterministically rolls the fact table and per-fact truths from the
/// given stream; shared by generation and by tests that need to inspect
/// ground truth the files do not carry.
fn roll_facts(cfg: &GenConfig, rng: &mut SeededRng) -> Rolled {
    let table = build_fact_table(cfg, rng);

    let mut pairs: Vec<(usize, usize)> = (0..cfg.n_entities)
        .flat_map(|s| (0..cfg.n_relations).map(move |r| (s, r)))
        .collect();
    pairs.shuffle(rng);
    let total_facts = cfg.n_facts + cfg.n_test_facts;
    let fact_pairs = &pairs[..total_facts];
    let spare_pairs: Vec<(usize, usize)> = pairs[total_facts..]
        .iter()
        .cloned()
        .chain(fact_pairs.iter().cloned())
        .collect();

    let facts: Vec<Fact> = fact_pairs
        .iter()
        .map(|&(subject, relation)| {
            let ruled = table.rule[table.group_of_entity[subject]][relation];
            let exception = rng.random::<f64>() < cfg.exception_rate;
            let true_group = if exception {
                loop {
                    let g = rng.random_range(0..cfg.n_entity_groups);
                    if g != ruled {
                        break g;
                    }
                }
            } else {
                ruled
            };
            let members = &table.group_members[true_group];
            let true_object = members[rng.random_range(0..members.len())];
            Fact {
                subject,
                relation,
                true_group,
                true_object,
            }
        })
        .collect();

    Rolled {
        table,
        spare_pairs,
        facts,
    }
}

/// Generates the full dataset in memory; identical configs produce
/// identical datasets.
pub fn gen_corpus(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let layout = VocabLayout::from_config(cfg);
    let mut rng = seeded_rng(derive_seed(cfg.seed, "corpus"));
    let Rolled {
        table,
        spare_pairs,
        facts,
    } = roll_facts(cfg, &mut rng);

    let (n_train, n_val, _) = cfg.split_sizes();
    let split_of = |i: usize| {
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else if i < cfg.n_facts {
            Split::Edit
        } else {
            Split::Test
        }
    };

    let (f_min, f_max) = cfg.fillers_per_sentence;
    let total_facts = cfg.n_facts + cfg.n_test_facts;
    let mut examples = Vec::with_capacity(total_facts);
    for (i, fact) in facts.iter().enumerate() {
        let split = split_of(i);
        let claim = draw_claim(i as u64, fact, &table, cfg, &mut rng, &spare_pairs);
        let content = content_tokens(&claim.content, &layout);
        let n_fillers = rng.random_range(f_min..=f_max);
        let english = build_sentence(&content, n_fillers, &layout, &mut rng);

        let rephrases = if split == Split::Edit && !cfg.nli_mode {
            (0..cfg.n_rephrases)
                .map(|_| rephrase_sequence(&english, &layout, &mut rng))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let mut parallels = BTreeMap::new();
        for (lang_idx, code) in cfg.language_codes.iter().enumerate().skip(1) {
            parallels.insert(code.clone(), layout.map_to_language(&english, lang_idx)?);
        }

        let train_langs = if split == Split::Train {
            let mut langs = vec!["en".to_string()];
            for (lang_idx, code) in cfg.language_codes.iter().enumerate().skip(1) {
                if rng.random::<f64>() < cfg.resource_weights[lang_idx] {
                    langs.push(code.clone());
                }
            }
            langs
        } else {
            vec!["en".to_string()]
        };

        examples.push(EditExample {
            id: i as u64,
            fact_id: claim.fact_id,
            label: claim.label,
            split,
            english,
            rephrases,
            parallels,
            train_langs,
        });
    }

    let dataset = Dataset {
        gen_config: cfg.clone(),
        examples,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> GenConfig {
        GenConfig {
            language_codes: vec!["en".into(), "de".into(), "zh".into()],
            resource_weights: vec![1.0, 0.5, 0.1],
            tokens_per_language: 40,
            n_entities: 20,
            n_relations: 10,
            n_entity_groups: 4,
            n_facts: 100,
            n_test_facts: 20,
            seed: 3,
            ..GenConfig::default()
        }
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let cfg = GenConfig {
            n_facts: 1000,
            ..tiny_cfg()
        };
        assert_eq!(cfg.split_sizes(), (800, 100, 100));
        let ds = gen_corpus(&GenConfig {
            n_facts: 120,
            ..tiny_cfg()
        })
        .unwrap();
        assert_eq!(ds.train().len(), 96);
        assert_eq!(ds.val().len(), 12);
        assert_eq!(ds.edit().len(), 12);
        assert_eq!(ds.test().len(), 20);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_corpus(&tiny_cfg()).unwrap();
        let b = gen_corpus(&tiny_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refuted_objects_differ_from_true_objects() {
        let cfg = tiny_cfg();
        let ds = gen_corpus(&cfg).unwrap();
        let layout = ds.layout();
        // replay the fact table from the same stream prefix
        let mut rng = seeded_rng(derive_seed(cfg.seed, "corpus"));
        let rolled = roll_facts(&cfg, &mut rng);

        let mut refuted = 0;
        for ex in &ds.examples {
            let (s, r, o) = layout.decode_triples(&ex.english).unwrap()[0];
            let fact = &rolled.facts[ex.fact_id as usize];
            assert_eq!((s, r), (fact.subject, fact.relation));
            match ex.label {
                Label::Supported => assert_eq!(o, fact.true_object),
                Label::Refuted => {
                    assert_ne!(o, fact.true_object);
                    assert_ne!(rolled.table.group_of_entity[o], fact.true_group);
                    refuted += 1;
                }
                _ => unreachable!("fact-verification mode"),
            }
        }
        assert!(refuted > 20, "only {refuted} refuted claims");
    }

    #[test]
    fn rephrase_preserves_triple_and_differs() {
        let cfg = tiny_cfg();
        let ds = gen_corpus(&cfg).unwrap();
        let layout = ds.layout();
        let ex = ds.edit()[0].clone();
        let mut rng = seeded_rng(99);
        let mut distinct = 0;
        for _ in 0..1000 {
            let r = make_rephrase(&ex, &cfg, &mut rng).unwrap();
            assert_eq!(
                layout.decode_triples(&r).unwrap(),
                layout.decode_triples(&ex.english).unwrap()
            );
            if r != ex.english {
                distinct += 1;
            }
        }
        assert!(distinct >= 990, "only {distinct} of 1000 rephrases differ");
    }

    #[test]
    fn nli_mode_produces_three_labels() {
        let cfg = GenConfig {
            nli_mode: true,
            ..tiny_cfg()
        };
        let ds = gen_corpus(&cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for ex in &ds.examples {
            seen.insert(ex.label.class_index());
            assert_eq!(ds.layout().decode_triples(&ex.english).unwrap().len(), 2);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let cfg = GenConfig {
            n_facts: 100_000,
            ..tiny_cfg()
        };
        let err = gen_corpus(&cfg).unwrap_err();
        assert!(err.to_string().contains("pairs exist"));
    }
}

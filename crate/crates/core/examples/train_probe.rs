// throwaway: diagnose learnability (train vs val accuracy)
use patchforge_core::corpus::{gen_corpus, Dataset, GenConfig};
use patchforge_core::model::{init_model, train_base, Model, ModelConfig, TrainConfig};
use patchforge_core::numerics::OptimizerConfig;

fn acc(model: &Model, exs: &[&patchforge_core::EditExample]) -> f64 {
    let mut c = 0;
    for e in exs {
        if model.predict(&e.english, None).unwrap() == e.label.class_index() {
            c += 1;
        }
    }
    c as f64 / exs.len() as f64
}

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let lr: f64 = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let facts: usize = a.get(3).map(|s| s.parse().unwrap()).unwrap_or(600);
    let exc: f64 = a.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.2);
    let langs: usize = a.get(5).map(|s| s.parse().unwrap()).unwrap_or(2);
    let d_model: usize = a.get(6).map(|s| s.parse().unwrap()).unwrap_or(64);
    let groups: usize = a.get(7).map(|s| s.parse().unwrap()).unwrap_or(6);

    let codes: Vec<String> = ["en", "de", "fr", "es", "zh", "ar"][..langs].iter().map(|s| s.to_string()).collect();
    let weights = vec![1.0, 0.5, 0.5, 0.5, 0.15, 0.05][..langs].to_vec();
    let gen = GenConfig {
        language_codes: codes,
        resource_weights: weights,
        n_facts: facts,
        n_test_facts: 60,
        exception_rate: exc,
        n_entity_groups: groups,
        seed: 1,
        ..GenConfig::default()
    };
    let ds: Dataset = gen_corpus(&gen).unwrap();
    let mcfg = ModelConfig {
        d_model,
        d_ff: d_model * 2,
        n_heads: 4,
        vocab_size: gen.vocab_size(),
        n_classes: 2,
        seed: 2,
        ..ModelConfig::default()
    };
    let model = init_model(&mcfg).unwrap();
    let tcfg = TrainConfig {
        epochs,
        batch_size: 32,
        optimizer: OptimizerConfig {
            learning_rate: lr,
            warmup_updates: 50,
            weight_decay: 0.01,
            epsilon: 1e-8,
            ..OptimizerConfig::default()
        },
        seed: 3,
    };
    let t0 = std::time::Instant::now();
    let out = train_base(&model, &ds, &tcfg).unwrap();
    let tr = acc(&out.model, &ds.train());
    let va = acc(&out.model, &ds.val());
    println!(
        "lr={lr} ep={epochs} facts={facts} exc={exc} langs={langs} d={d_model} G={groups}: train={tr:.2} val={va:.2} curve_last={:?} ({:.0}s)",
        &out.val_accuracy[out.val_accuracy.len().saturating_sub(5)..].iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>(),
        t0.elapsed().as_secs_f64()
    );
}

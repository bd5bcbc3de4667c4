// throwaway: locate the offending coordinate
use patchforge_core::model::{init_model, ModelConfig};
use patchforge_core::TokenSequence;

fn main() {
    let mcfg = ModelConfig {
        d_model: 8, d_ff: 12, n_layers: 2, n_heads: 2,
        vocab_size: 12, n_classes: 2, max_len: 8, seed: 7,
        ..ModelConfig::default()
    };
    let model = init_model(&mcfg).unwrap();
    let tokens = TokenSequence(vec![0, 5, 9, 11, 3]);
    let label = 1usize;
    let names = model.param_names();

    let (_, analytic) = patchforge_core::model::example_loss_and_grads(&model, &tokens, label).unwrap();
    let eps = 1e-5;
    let mut worst = (0.0f64, String::new(), 0.0, 0.0);
    for (pi, base) in model.param_refs().iter().enumerate() {
        for coord in 0..base.len() {
            let mut m = model.clone();
            {
                let mut refs = m.param_refs_mut();
                refs[pi].data_mut()[coord] += eps;
            }
            let (lp, _) = patchforge_core::model::example_loss_and_grads(&m, &tokens, label).unwrap();
            {
                let mut refs = m.param_refs_mut();
                refs[pi].data_mut()[coord] -= 2.0 * eps;
            }
            let (lm, _) = patchforge_core::model::example_loss_and_grads(&m, &tokens, label).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[pi].data()[coord];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            if rel > worst.0 {
                worst = (rel, format!("{}[{}]", names[pi], coord), a, numeric);
            }
        }
    }
    println!("worst: rel={:.3e} at {} analytic={:.6e} numeric={:.6e}", worst.0, worst.1, worst.2, worst.3);
}

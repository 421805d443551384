use skmix_core::gradcheck::{check_model, DEFAULT_EPS};
use skmix_core::{FusionVariant, ModelConfig};

// Coordinates whose true gradient is zero (a per-token bias feeding only a
// LayerNorm) see pure roundoff in the numeric estimate, around 1e-11, so
// they are held to an absolute bound instead.
#[test]
fn full_model_gradients_match_finite_differences() {
    for variant in FusionVariant::ALL {
        let cfg = ModelConfig::toy(8, 2, 2, 3, 2).with_variant(variant);
        let report = check_model(&cfg, 7, 3, DEFAULT_EPS).unwrap();
        for p in &report.params {
            assert!(
                p.max_rel_error <= 1e-4 || p.max_abs_error <= 1e-9,
                "{} {}: rel {:.2e} abs {:.2e}",
                variant.label(),
                p.name,
                p.max_rel_error,
                p.max_abs_error
            );
        }
    }
}

#[test]
fn report_covers_learned_tokens_and_tables() {
    let cfg = ModelConfig::toy(8, 2, 2, 3, 2);
    let report = check_model(&cfg, 1, 2, DEFAULT_EPS).unwrap();
    let names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
    for needle in ["mru.initial_memory", "mru.cls_token", "mru.pe_audio", "mru.pe_video", "pe_cls", "head.weight", "head.bias"] {
        assert!(names.contains(&needle), "missing {needle} in {names:?}");
    }
    assert!(names.iter().any(|n| n.contains("bottleneck")));
}

mod common;

use common::oracles::{explains_generation, validate_generated, GenLimits};
use common::tasks::documents;
use mrc::selfassess::{generate_corpus, GenConfig};
use proptest::prelude::*;

fn limits(cfg: &GenConfig) -> GenLimits {
    GenLimits {
        n_s: cfg.n_s,
        n_c: cfg.n_c,
        n_t: cfg.n_t,
    }
}

#[test]
fn validator_accepts_hand_built_case_and_rejects_tampering() {
    let lim = GenLimits { n_s: 3, n_c: 4, n_t: 4 };
    let doc = "a b c d . e f g .";
    assert!(explains_generation(doc, "a d . e f .", "b c g", &lim));
    assert!(!explains_generation(doc, "a d . e f .", "c b g", &lim));
    assert!(!explains_generation(doc, "a d . e", "b c g", &lim));
    // a span may not cross the sentence boundary
    assert!(!explains_generation(
        doc,
        "a b c .",
        "d . e f g",
        &GenLimits { n_s: 3, n_c: 1, n_t: 8 }
    ));
    assert!(explains_generation(
        doc,
        "a b c .",
        "d . e f g",
        &GenLimits { n_s: 3, n_c: 2, n_t: 8 }
    ));
}

#[test]
fn generated_corpus_passes_validator() {
    let cfg = GenConfig::default();
    let docs = documents(60, 40, 3);
    let (data, stats) = generate_corpus(&docs, &cfg).unwrap();
    assert_eq!(stats.emitted, data.len());
    assert_eq!(stats.attempted, 600);
    assert!(stats.emitted > 0);
    for inst in &data.instances {
        validate_generated(inst, &limits(&cfg)).unwrap();
    }
}

#[test]
fn different_seeds_differ_and_same_seed_repeats() {
    let docs = documents(20, 40, 4);
    let a = generate_corpus(&docs, &GenConfig::default()).unwrap().0;
    let b = generate_corpus(&docs, &GenConfig::default()).unwrap().0;
    let c = generate_corpus(
        &docs,
        &GenConfig {
            seed: 9,
            ..GenConfig::default()
        },
    )
    .unwrap()
    .0;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_emitted_instance_is_valid(
        seed in any::<u64>(),
        n_s in 1usize..4,
        n_c in 1usize..5,
        n_t in 1usize..5,
        doc_seed in 0u64..1000,
    ) {
        let cfg = GenConfig { n_q: 3, n_s, n_c, n_t, seed, max_attempts_per_question: 10 };
        let docs = documents(4, 12, doc_seed);
        let (data, stats) = generate_corpus(&docs, &cfg).unwrap();
        prop_assert_eq!(stats.attempted, stats.emitted + stats.discarded);
        for i in 0..docs.len() {
            let prefix = format!("gen-{i}-");
            prop_assert!(data.instances.iter().filter(|x| x.id.starts_with(&prefix)).count() <= cfg.n_q);
        }
        for inst in &data.instances {
            prop_assert!(validate_generated(inst, &limits(&cfg)).is_ok(), "{:?}", inst);
        }
    }
}

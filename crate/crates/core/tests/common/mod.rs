//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use draovg::clustering::SpectralConfig;
use draovg::prototype::{auto_assign, build_feature_set, generate_prototypes, label_prototypes, PrototypeBank};
use draovg::synth::Corpus;
use draovg::tensor_io::LayerTag;

pub const SAMPLE_SIZE: usize = 1000;

/// Learn a 5-prototype bank on `layer` from the whole corpus and name each
/// prototype after the planted signature it is closest to.
pub fn learned_bank(corpus: &Corpus, layer: LayerTag, seed: u64) -> PrototypeBank {
    let x = build_feature_set(&corpus.manifest, layer, SAMPLE_SIZE, seed).unwrap();
    let bank = generate_prototypes(&x, layer, &SpectralConfig::new(5, seed)).unwrap();
    let refs = corpus.truth.layer(layer).unwrap().signature_refs();
    label_prototypes(&bank, &auto_assign(&bank, &refs).unwrap()).unwrap()
}

pub fn learned_banks(corpus: &Corpus, seed: u64) -> (PrototypeBank, PrototypeBank) {
    (learned_bank(corpus, LayerTag::Pool4, seed), learned_bank(corpus, LayerTag::Pool5, seed))
}

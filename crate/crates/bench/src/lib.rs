//! Shared inputs for the benchmarks.

use doiminer_core::corpus::Message;
use doiminer_core::matrix::CscMatrix;
use doiminer_core::synth::{self, SynthSpec};
use doiminer_core::textprep::{self, PrepConfig, Preprocessor, Vocabulary};

pub struct Fixture {
    pub messages: Vec<Message>,
    pub docs: Vec<(String, Vec<String>)>,
    pub vocab: Vocabulary,
    pub tdm: CscMatrix,
}

/// Synthetic corpus with `dyads` conversations, preprocessed to unigrams.
pub fn fixture(dyads: usize, seed: u64) -> Fixture {
    let spec = SynthSpec {
        dyads,
        users: dyads,
        seed,
        ..SynthSpec::default()
    };
    let messages = synth::generate(&spec).expect("valid spec").messages;
    let config = PrepConfig {
        ngram_max: 1,
        ..PrepConfig::default()
    };
    let pre = Preprocessor::new(config, Default::default()).expect("valid config");
    let docs: Vec<(String, Vec<String>)> = messages.iter().map(|m| (m.id.clone(), pre.terms(&m.text))).collect();
    let terms: Vec<Vec<String>> = docs.iter().map(|d| d.1.clone()).collect();
    let vocab = textprep::build_vocabulary(&terms, pre.config()).expect("non-empty vocabulary");
    let tdm = textprep::vectorize(&docs, &vocab).matrix;
    Fixture {
        messages,
        docs,
        vocab,
        tdm,
    }
}

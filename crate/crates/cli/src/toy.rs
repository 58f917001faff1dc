//! Built-in toy dataset: 32 small molecules paired with four short proteins.

use sidgen_core::chemkit::corpus::TOY;
use sidgen_core::chemkit::TokenVocab;
use sidgen_core::diffusion::{Dataset, Example};

use crate::embed::pseudo_embed;

pub const TOY_PROTEINS: [&str; 4] = [
    "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQAPILSRVGDGTQDNLSGAEKAVQVKVKALPD",
    "GSHMSLFDFFKNKGSAAATVTEGNNQFEQEIAKRLAEEHGIDPEKVSAVLEAAGWKPVEAAEQ",
    "MADEEKLPPGWEKRMSRSSGRVYYFNHITNASQWERPSGNSSSGGKNGQGEPARVRCSHLLVK",
    "MSTNPKPQRKTKRNTNRRPQDVKFPGGGQIVGGVYLLPRRGPRLGVRATRKTSERSQPRGRRQ",
];

/// Toy examples; molecule `i` is paired with protein `i % 4`.
pub fn toy_dataset(d_seq: usize, embed_seed: u64) -> (TokenVocab, Dataset<f32>) {
    let vocab = TokenVocab::from_corpus(TOY.iter().copied()).expect("toy corpus lexes");
    let examples = TOY
        .iter()
        .enumerate()
        .map(|(i, s)| Example {
            tokens: vocab.tokenize(s).expect("toy corpus tokenizes"),
            protein: i % TOY_PROTEINS.len(),
        })
        .collect();
    let proteins = TOY_PROTEINS
        .iter()
        .map(|p| pseudo_embed(p, d_seq, embed_seed).expect("toy proteins use the standard alphabet"))
        .collect();
    (vocab, Dataset { examples, proteins })
}

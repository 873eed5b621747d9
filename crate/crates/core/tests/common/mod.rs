#![allow(dead_code)]

use pie_core::editspace::*;
use pie_core::numcore::Scalar;
use pie_core::piemodel::*;

pub fn words(s: &str) -> TokenSequence {
    TokenSequence::from_line(s, TokenMode::Word).unwrap()
}

pub const SENTENCES: [&str; 6] = [
    "the cat sat on mat",
    "a dog ran to the park",
    "he plays with the ball",
    "she could have won",
    "they walk to school",
    "we like the red car",
];

pub fn tiny_space() -> EditSpace {
    let dict = InsertDictionary::from_entries(
        vec![("the".into(), 5), ("to".into(), 3), ("a red".into(), 1)],
        2,
        10,
    )
    .unwrap();
    EditSpace::new(dict, TransformTable::default_table(), TokenMode::Word)
}

pub fn tiny_vocab(space: &EditSpace) -> Vocab {
    let seqs: Vec<TokenSequence> = SENTENCES.iter().map(|s| words(s)).collect();
    Vocab::build(&seqs, space.dictionary(), TokenMode::Word, None).unwrap()
}

pub fn tiny_model<T: Scalar>(cfg: ModelConfig, seed: u64) -> PieModel<T> {
    let space = tiny_space();
    let vocab = tiny_vocab(&space);
    PieModel::new(cfg, vocab, space, seed).unwrap()
}

//! A generated character-level spelling task: a lexicon of pseudo-words and
//! single-character corruptions of them.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONSETS: [&str; 22] = [
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br",
    "st", "tr", "pl", "ch",
];
const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: [&str; 8] = ["", "", "", "n", "r", "s", "l", "t"];
pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz";

/// `n` distinct pronounceable words of 5 to 12 letters.
pub fn pseudo_lexicon(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(&mut rng).expect("non-empty"));
            w.push_str(VOWELS.choose(&mut rng).expect("non-empty"));
            w.push_str(CODAS.choose(&mut rng).expect("non-empty"));
        }
        if (5..=12).contains(&w.len()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// One random insertion, deletion or substitution of a letter. The result
/// always differs from `word`.
pub fn corrupt_word<R: Rng + ?Sized>(word: &str, rng: &mut R) -> String {
    let chars: Vec<char> = word.chars().collect();
    let letters: Vec<char> = ALPHABET.chars().collect();
    loop {
        let mut c = chars.clone();
        match rng.random_range(0..3) {
            0 => {
                let at = rng.random_range(0..=c.len());
                c.insert(at, *letters.choose(rng).expect("non-empty"));
            }
            1 if c.len() > 1 => {
                c.remove(rng.random_range(0..c.len()));
            }
            _ => {
                let at = rng.random_range(0..c.len());
                c[at] = *letters.choose(rng).expect("non-empty");
            }
        }
        if c != chars {
            return c.into_iter().collect();
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpellTask {
    pub lexicon: Vec<String>,
    /// (corrupted, correct) pairs.
    pub train: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

/// Corrupted words drawn uniformly from one lexicon for both splits.
pub fn spell_task(lexicon_size: usize, train: usize, test: usize, seed: u64) -> SpellTask {
    let lexicon = pseudo_lexicon(lexicon_size, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut draw = |n: usize| -> Vec<(String, String)> {
        (0..n)
            .map(|_| {
                let w = lexicon.choose(&mut rng).expect("non-empty lexicon").clone();
                (corrupt_word(&w, &mut rng), w)
            })
            .collect()
    };
    let train = draw(train);
    let test = draw(test);
    SpellTask {
        lexicon,
        train,
        test,
    }
}

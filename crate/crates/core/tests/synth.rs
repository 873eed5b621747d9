use pie_core::editspace::{TokenMode, TokenSequence};
use pie_core::synthdata::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentences(n: usize) -> Vec<String> {
    let base = [
        "he walks to the park every day",
        "they play football on sunday",
        "she likes the red car",
        "we want to eat the apple",
        "the dog runs in the garden",
    ];
    (0..n).map(|i| base[i % base.len()].to_owned()).collect()
}

#[test]
fn multinoulli_matches_error_count_probs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hist = [0usize; 5];
    let n = 100_000;
    for _ in 0..n {
        hist[sample_multinoulli(&DEFAULT_ERROR_COUNT_PROBS, &mut rng).unwrap()] += 1;
    }
    for (h, p) in hist.iter().zip(DEFAULT_ERROR_COUNT_PROBS) {
        assert!((*h as f64 / n as f64 - p).abs() <= 0.01);
    }
}

#[test]
fn corpus_statistics_match_configuration() {
    let lines = sentences(30_000);
    let cfg = SynthConfig {
        seed: 7,
        ..SynthConfig::default()
    };
    let c = generate_corpus(&lines, TokenMode::Word, &cfg).unwrap();
    let total: usize = c.stats.error_counts.iter().sum();
    assert_eq!(total, lines.len());
    for (h, p) in c.stats.error_counts.iter().zip(DEFAULT_ERROR_COUNT_PROBS) {
        assert!((*h as f64 / total as f64 - p).abs() <= 0.01);
    }
    for (f, p) in c.stats.type_frequencies().iter().zip(DEFAULT_ERROR_TYPE_PROBS) {
        assert!((f - p).abs() <= 0.02, "{f} vs {p}");
    }
}

#[test]
fn generation_is_deterministic_across_thread_counts() {
    let lines = sentences(500);
    let cfg = SynthConfig::default();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| generate_corpus(&lines, TokenMode::Word, &cfg).unwrap());
    let b = four.install(|| generate_corpus(&lines, TokenMode::Word, &cfg).unwrap());
    assert_eq!(a.noisy, b.noisy);
    assert_eq!(a.stats, b.stats);
    let other = generate_corpus(
        &lines,
        TokenMode::Word,
        &SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    assert_ne!(a.noisy, other.noisy);
}

fn only(kind: usize, count: usize) -> SynthConfig {
    let mut types = [0.0; 4];
    types[kind] = 1.0;
    let mut counts = [0.0; 5];
    counts[count] = 1.0;
    SynthConfig {
        error_count_probs: counts.to_vec(),
        error_type_probs: types.to_vec(),
        ..SynthConfig::default()
    }
}

#[test]
fn each_error_type_changes_length_as_expected() {
    let clean = TokenSequence::from_line("he walks to the park", TokenMode::Word).unwrap();
    let n = clean.inner().len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let expect = [(0, n - 1), (2, n), (3, n + 1)];
    for (kind, len) in expect {
        let (noisy, applied) = corrupt_sentence(&clean, &only(kind, 1), &mut rng).unwrap();
        assert_eq!(noisy.inner().len(), len, "{:?}", ErrorType::ALL[kind]);
        assert!(!applied[0].skipped);
    }
    let (noisy, applied) = corrupt_sentence(&clean, &only(1, 1), &mut rng).unwrap();
    assert_eq!(applied[0].position, Some(1));
    assert_ne!(noisy.inner()[1].as_str(), "walks");
    assert_eq!(noisy.inner().len(), n);
}

#[test]
fn impossible_errors_are_skipped_and_recorded() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let one_word = TokenSequence::from_line("hello", TokenMode::Word).unwrap();
    let (noisy, applied) = corrupt_sentence(&one_word, &only(0, 4), &mut rng).unwrap();
    assert_eq!(noisy, one_word);
    assert!(applied.iter().all(|a| a.skipped && a.position.is_none()));

    let no_verbs = TokenSequence::from_line("the red car", TokenMode::Word).unwrap();
    let (noisy, applied) = corrupt_sentence(&no_verbs, &only(1, 2), &mut rng).unwrap();
    assert_eq!(noisy, no_verbs);
    assert_eq!(applied.len(), 2);
    assert!(applied.iter().all(|a| a.skipped));
}

#[test]
fn blank_lines_pass_through() {
    let lines = vec!["he walks".to_owned(), String::new(), "the cat".to_owned()];
    let c = generate_corpus(&lines, TokenMode::Word, &SynthConfig::default()).unwrap();
    assert_eq!(c.noisy[1], "");
    assert_eq!(c.clean, ["he walks", "", "the cat"]);
}

#[test]
fn bad_configs_are_rejected() {
    let mut cfg = SynthConfig::default();
    cfg.error_count_probs = vec![0.5, 0.5];
    assert!(cfg.validate().is_err());
    let mut cfg = SynthConfig::default();
    cfg.error_type_probs = vec![0.5, 0.5, 0.5, -0.5];
    assert!(cfg.validate().is_err());
    let mut cfg = SynthConfig::default();
    cfg.spurious_words.clear();
    assert!(cfg.validate().is_err());
}

#[test]
fn verb_lexicon_links_forms_both_ways() {
    let lex = default_verb_lexicon();
    for (form, others) in &lex {
        for o in others {
            assert!(lex[o].contains(form), "{o} does not link back to {form}");
        }
    }
    assert!(lex.contains_key("walks"));
}

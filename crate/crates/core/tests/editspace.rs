use pie_core::editspace::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn word_seq(words: &[&str]) -> TokenSequence {
    TokenSequence::wrap(words, TokenMode::Word).unwrap()
}

/// Minimum alignment cost by enumerating every edit script, no memo.
fn brute_cost(x: &[&str], y: &[&str], eps: f64) -> f64 {
    match (x.split_first(), y.split_first()) {
        (None, None) => 0.0,
        (Some((_, xs)), None) => 1.0 + brute_cost(xs, y, eps),
        (None, Some((_, ys))) => 1.0 + brute_cost(x, ys, eps),
        (Some((a, xs)), Some((b, ys))) => {
            let diag = if a == b {
                0.0
            } else {
                1.0 + eps * a.chars().count().abs_diff(b.chars().count()) as f64
            };
            let d = diag + brute_cost(xs, ys, eps);
            let del = 1.0 + brute_cost(xs, y, eps);
            let ins = 1.0 + brute_cost(x, ys, eps);
            d.min(del).min(ins)
        }
    }
}

const ALPHA: [&str; 3] = ["a", "bb", "cccc"];

fn all_seqs(max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &t in &ALPHA {
                let mut s2: Vec<&str> = s.clone();
                s2.push(t);
                next.push(s2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn check_optimal(x: &[&str], y: &[&str]) {
    let cfg = DiffConfig::default();
    let d = modified_levenshtein_diff(&word_seq(x), &word_seq(y), &cfg).unwrap();
    let want = brute_cost(x, y, cfg.epsilon);
    assert!((d.cost - want).abs() < 1e-9, "{x:?} -> {y:?}: {} vs {want}", d.cost);
}

#[test]
fn diff_cost_matches_brute_force_exhaustive_small() {
    let seqs = all_seqs(3);
    for x in &seqs {
        for y in &seqs {
            check_optimal(x, y);
        }
    }
}

#[test]
fn diff_cost_matches_brute_force_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let mut draw = || -> Vec<&str> {
            let n = rng.random_range(0..=6);
            (0..n).map(|_| ALPHA[rng.random_range(0..3)]).collect()
        };
        let (x, y) = (draw(), draw());
        check_optimal(&x, &y);
    }
}

#[test]
fn worked_diff_prefers_length_matched_substitutions() {
    let x = TokenSequence::from_line("He sat , then he ran", TokenMode::Word).unwrap();
    let y = TokenSequence::from_line("He sat . Then , he ran", TokenMode::Word).unwrap();
    let cfg = DiffConfig::default();
    let d = modified_levenshtein_diff(&x, &y, &cfg).unwrap();
    let rendered: Vec<String> = d
        .ops
        .iter()
        .map(|op| {
            let a = x.tokens()[op.anchor].as_str();
            match op.kind {
                DiffKind::Copy => format!("(C,{a})"),
                DiffKind::Delete => format!("(D,{a})"),
                DiffKind::Insert => {
                    let p: Vec<&str> = op.payload.iter().map(Token::as_str).collect();
                    format!("(I,{a},{})", p.join(" "))
                }
            }
        })
        .collect();
    assert_eq!(
        rendered.concat(),
        "(C,[)(C,He)(C,sat)(D,,)(I,,,.)(D,then)(I,then,Then ,)(C,he)(C,ran)(C,])"
    );
    assert!((d.cost - 3.000).abs() < 1e-12);
    // Insert ".", then substitute "," -> "Then" and "then" -> ",".
    let alt = 1.0 + 2.0 * (1.0 + cfg.epsilon * 3.0);
    assert!((alt - 3.006).abs() < 1e-12);
    assert!(d.cost < alt);
}

#[test]
fn identity_compiles_to_all_copy() {
    let x = TokenSequence::from_line("a b c", TokenMode::Word).unwrap();
    let dict = InsertDictionary::from_entries(vec![], 2, 0).unwrap();
    let e = seq2edits(&x, &x, &dict, &TransformTable::default_table(), &DiffConfig::default()).unwrap();
    assert_eq!(e, EditSequence::all_copy(x.len()));
    assert_eq!(apply_edits(&x, &e, &TransformTable::default_table()).unwrap(), x);
}

#[test]
fn transformation_lookup() {
    let t = TransformTable::default_table();
    let k = t.match_transformation("arrive", "arrival").unwrap();
    assert_eq!(t.get(k).unwrap().apply("arrive").as_deref(), Some("arrival"));
    let k = t.match_transformation("He", "he").unwrap();
    assert_eq!(t.get(k).unwrap().family, TransformFamily::CaseLowerFirst);
    assert_eq!(t.match_transformation("run", "banana"), None);
}

const VOCAB: [&str; 6] = ["the", "cat", "sat", "on", "mat", "a"];

fn dict_all_ngrams() -> InsertDictionary {
    let mut entries: Vec<(String, u64)> = VOCAB.iter().map(|w| (w.to_string(), 2)).collect();
    for a in VOCAB {
        for b in VOCAB {
            entries.push((format!("{a} {b}"), 1));
        }
    }
    let n = entries.len();
    InsertDictionary::from_entries(entries, 2, n).unwrap()
}

/// Builds y from x by sampling one edit per token from the dictionary.
fn sampled_pair(rng: &mut ChaCha8Rng) -> (TokenSequence, TokenSequence) {
    let n = rng.random_range(1..=8);
    let x: Vec<&str> = (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
    let mut y: Vec<&str> = Vec::new();
    if rng.random_bool(0.1) {
        y.push(VOCAB[rng.random_range(0..VOCAB.len())]);
    }
    for &w in &x {
        match rng.random_range(0..10) {
            0 => {}
            1 => {
                y.push(w);
                y.push(VOCAB[rng.random_range(0..VOCAB.len())]);
            }
            2 => y.push(VOCAB[rng.random_range(0..VOCAB.len())]),
            _ => y.push(w),
        }
    }
    (word_seq(&x), word_seq(&y))
}

fn inserts_in_dict(x: &TokenSequence, y: &TokenSequence, dict: &InsertDictionary) -> bool {
    let d = modified_levenshtein_diff(x, y, &DiffConfig::default()).unwrap();
    d.ops
        .iter()
        .filter(|o| o.kind == DiffKind::Insert)
        .all(|o| dict.contains(&TokenMode::Word.join_tokens(&o.payload)))
}

#[test]
fn round_trip_on_in_dictionary_pairs() {
    let dict = dict_all_ngrams();
    let table = TransformTable::default_table();
    let cfg = DiffConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 1000 {
        let (x, y) = sampled_pair(&mut rng);
        if !inserts_in_dict(&x, &y, &dict) {
            continue;
        }
        let e = seq2edits(&x, &y, &dict, &table, &cfg).unwrap();
        assert_eq!(e.len(), x.len());
        assert_eq!(apply_edits(&x, &e, &table).unwrap(), y, "{} -> {}", x.detokenize(), y.detokenize());
        checked += 1;
    }
}

#[test]
fn lossy_compile_stays_close_to_target() {
    let dict = InsertDictionary::from_entries(vec![("the".into(), 3), ("a".into(), 1)], 2, 2).unwrap();
    let table = TransformTable::default_table();
    let cfg = DiffConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let words = ["the", "a", "cats", "cat", "Dog", "dog", "ran", "running", "x"];
    for _ in 0..1000 {
        let mut draw = |lo: usize| -> Vec<&str> {
            let n = rng.random_range(lo..=7);
            (0..n).map(|_| words[rng.random_range(0..words.len())]).collect()
        };
        let (x, y) = (word_seq(&draw(1)), word_seq(&draw(0)));
        let e = seq2edits(&x, &y, &dict, &table, &cfg).unwrap();
        let out = apply_edits(&x, &e, &table).unwrap();
        // Anything not copied from x must be a dictionary insert or a transform landing on y.
        let xs = x.detokenize();
        let ys = y.detokenize();
        for t in out.detokenize().split_whitespace() {
            let known = xs.split_whitespace().any(|w| w == t)
                || ys.split_whitespace().any(|w| w == t)
                || dict.contains(t);
            assert!(known, "{xs} -> {ys}: stray {t}");
        }
        if e.changes().next().is_none() {
            assert_eq!(out, x);
        }
        let toks = |s: &TokenSequence| s.tokens().iter().map(|t| t.as_str().to_owned()).collect::<Vec<_>>();
        let before = strsim::generic_levenshtein(&toks(&x), &toks(&y));
        let after = strsim::generic_levenshtein(&toks(&out), &toks(&y));
        assert!(after <= before, "{xs} -> {ys}: got {}", out.detokenize());
    }
}

#[test]
fn dictionary_counts_and_capacity() {
    let p = |a: &str, b: &str| {
        (
            TokenSequence::from_line(a, TokenMode::Word).unwrap(),
            TokenSequence::from_line(b, TokenMode::Word).unwrap(),
        )
    };
    let pairs = vec![
        p("I saw cat", "I saw the cat"),
        p("cat sat on mat", "the cat sat on mat"),
        p("he went school", "he went to school"),
        p("give it him", "give it to him"),
        p("it rained", "However , it rained"),
        p("see dog", "see the dog"),
    ];
    let cfg = DiffConfig::default();
    let d = build_insert_dictionary(&pairs, 2, 2, &cfg).unwrap();
    assert_eq!(d.entries(), &[("the".to_string(), 3), ("to".to_string(), 2)]);
    assert!(build_insert_dictionary(&pairs, 0, 2, &cfg).unwrap().is_empty());
    let long = vec![p("x", "x a b c"), p("y", "y a b c")];
    let d = build_insert_dictionary(&long, 10, 2, &cfg).unwrap();
    assert!(d.is_empty());
    assert_eq!(long_insert_rate(&long, &cfg).unwrap(), 1.0);
}

#[test]
fn transform_inverses_are_involutions() {
    let t = TransformTable::default_table();
    let samples = ["arrive", "walk", "happy", "stop", "run", "make", "quick", "go", "He"];
    for (k, rule) in t.rules().iter().enumerate() {
        for w in samples {
            let Some(out) = rule.apply(w) else { continue };
            let back = t.match_transformation(&out, w);
            assert!(back.is_some(), "rule {k} on {w} -> {out} has no inverse");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn diff_is_deterministic_and_covers_source(
        x in proptest::collection::vec(0usize..6, 0..10),
        y in proptest::collection::vec(0usize..6, 0..10),
    ) {
        let xs: Vec<&str> = x.iter().map(|&i| VOCAB[i]).collect();
        let ys: Vec<&str> = y.iter().map(|&i| VOCAB[i]).collect();
        let (x, y) = (word_seq(&xs), word_seq(&ys));
        let cfg = DiffConfig::default();
        let a = modified_levenshtein_diff(&x, &y, &cfg).unwrap();
        let b = modified_levenshtein_diff(&x, &y, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let anchors: Vec<usize> = a.ops.iter().map(|o| o.anchor).collect();
        prop_assert!(anchors.windows(2).all(|w| w[0] <= w[1]));
        let e = seq2edits(&x, &y, &dict_all_ngrams(), &TransformTable::default_table(), &cfg).unwrap();
        prop_assert_eq!(e.len(), x.len());
    }

    #[test]
    fn edit_records_round_trip(ops in proptest::collection::vec(0usize..5, 1..12)) {
        let ops: Vec<EditOp> = ops
            .into_iter()
            .map(|k| match k {
                0 => EditOp::Copy,
                1 => EditOp::Delete,
                2 => EditOp::Append("the".into()),
                3 => EditOp::Replace("a b".into()),
                _ => EditOp::Transform(7),
            })
            .collect();
        let e = EditSequence::new(ops);
        prop_assert_eq!(EditSequence::from_json_line(&e.to_json_line()).unwrap(), e);
    }
}

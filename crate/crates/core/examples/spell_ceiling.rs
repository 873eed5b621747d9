//! How many test corruptions have a unique nearest lexicon word.
use pie_core::synthdata::spell::spell_task;

fn lev(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

fn main() {
    let task = spell_task(1000, 8000, 1000, 0);
    let (mut unique, mut seen_pair) = (0, 0);
    let train: std::collections::HashSet<&str> = task.train.iter().map(|(x, _)| x.as_str()).collect();
    for (x, y) in &task.test {
        let best = task.lexicon.iter().map(|w| lev(x, w)).min().unwrap();
        let hits: Vec<&String> = task.lexicon.iter().filter(|w| lev(x, w) == best).collect();
        if hits.len() == 1 && hits[0] == y {
            unique += 1;
        }
        seen_pair += usize::from(train.contains(x.as_str()));
    }
    println!("unique nearest = gold: {unique}/1000, input seen in train: {seen_pair}");
}

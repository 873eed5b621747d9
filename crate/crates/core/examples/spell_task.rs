//! Trains the spelling configuration on a generated lexicon and reports
//! whole-word accuracy after each epoch.
//!
//! cargo run --release -p pie-core --example spell_task -- [epochs] [lr] [warmup] [train] [hidden] [dropout] [batch] [clean]
//!
//! Passing `clean` adds one identity pair per lexicon word to the training set.

use std::time::Instant;

use pie_core::corpuskit::{parse_parallel, word_accuracy};
use pie_core::editspace::*;
use pie_core::inference::{refine_batch, InferenceConfig};
use pie_core::piemodel::*;
use pie_core::synthdata::spell::spell_task;
use pie_core::training::*;

fn main() -> pie_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(20, |s| s.parse().unwrap());
    let lr: f64 = args.get(2).map_or(1e-3, |s| s.parse().unwrap());
    let warmup: u64 = args.get(3).map_or(0, |s| s.parse().unwrap());
    let n_train: usize = args.get(4).map_or(8000, |s| s.parse().unwrap());
    let hidden: usize = args.get(5).map_or(200, |s| s.parse().unwrap());
    let dropout: f64 = args.get(6).map_or(0.1, |s| s.parse().unwrap());
    let batch: usize = args.get(7).map_or(32, |s| s.parse().unwrap());
    let task = spell_task(1000, n_train, 1000, 0);
    let split = |p: &[(String, String)]| -> (Vec<String>, Vec<String>) { p.iter().cloned().unzip() };
    let clean: bool = args.get(8).is_some_and(|s| s == "clean");
    let mut train_pairs = task.train.clone();
    if clean {
        train_pairs.extend(task.lexicon.iter().map(|w| (w.clone(), w.clone())));
    }
    let (tx, ty) = split(&train_pairs);
    let (sx, sy) = split(&task.test);
    let train_set = parse_parallel(&tx, &ty, TokenMode::Char)?;
    let test = parse_parallel(&sx, &sy, TokenMode::Char)?;

    let dcfg = DiffConfig::default();
    let dict = build_insert_dictionary(&train_set.pairs, 500, 2, &dcfg)?;
    let table = TransformTable::default_table();
    let edits: Vec<(TokenSequence, EditSequence)> = train_set
        .pairs
        .iter()
        .map(|(x, y)| Ok((x.clone(), seq2edits(x, y, &dict, &table, &dcfg)?)))
        .collect::<pie_core::Result<_>>()?;
    let space = EditSpace::new(dict, table, TokenMode::Char);
    let seqs: Vec<TokenSequence> = train_set.pairs.iter().flat_map(|(x, y)| [x.clone(), y.clone()]).collect();
    let vocab = Vocab::build(&seqs, space.dictionary(), TokenMode::Char, None)?;
    let cfg = ModelConfig {
        num_layers: 4,
        hidden_size: hidden,
        intermediate_size: 2 * hidden,
        num_heads: 4,
        max_positions: 40,
        dropout,
        ..ModelConfig::default()
    };
    let mut model = PieModel::<f32>::new(cfg, vocab, space, 0)?;
    println!("edit space {}, params {}", model.space().len(), model.params().num_scalars());
    let data = compile_examples(&model, &edits)?;
    let tcfg = TrainConfig {
        batch_size: batch,
        learning_rate: lr,
        epochs: 1,
        copy_weight: 1.0,
        warmup_steps: warmup,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let sources: Vec<TokenSequence> = test.pairs.iter().map(|(x, _)| x.clone()).collect();
    let gold: Vec<String> = test.pairs.iter().map(|(_, y)| y.detokenize()).collect();
    let tr_src: Vec<TokenSequence> = train_set.pairs.iter().take(1000).map(|(x, _)| x.clone()).collect();
    let tr_gold: Vec<String> = train_set.pairs.iter().take(1000).map(|(_, y)| y.detokenize()).collect();
    let c = TrainConfig { epochs, ..tcfg };
    train(&mut model, &data, &c, &TrainOptions::default(), |log, m| {
        let out = refine_batch(m, &sources, &InferenceConfig::default())?;
        let pred: Vec<String> = out.iter().map(|(s, _)| s.detokenize()).collect();
        let one = InferenceConfig { max_iterations: 1, ..Default::default() };
        let tr_out = refine_batch(m, &tr_src, &one)?;
        let tr_pred: Vec<String> = tr_out.iter().map(|(s, _)| s.detokenize()).collect();
        let t1_out = refine_batch(m, &sources, &one)?;
        let t1_pred: Vec<String> = t1_out.iter().map(|(s, _)| s.detokenize()).collect();
        print!(
            "train_acc1 {:.4} test_acc1 {:.4} ",
            word_accuracy(&tr_pred, &tr_gold)?,
            word_accuracy(&t1_pred, &gold)?
        );
        println!(
            "epoch {} loss {:.4} label_acc {:.4} test_word_acc {:.4} epoch {:.1}s total {:.1}s",
            log.epoch,
            log.loss,
            log.label_accuracy,
            word_accuracy(&pred, &gold)?,
            log.seconds,
            start.elapsed().as_secs_f64()
        );
        Ok(true)
    })?;
    Ok(())
}

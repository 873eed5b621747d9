use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use pie_core::corpuskit::{edit_prf, load_parallel, read_lines, word_accuracy};
use pie_core::editspace::*;
use pie_core::error::{PieError, Result};
use pie_core::fsio::{read_to_string, write_atomic};
use pie_core::inference::{bench_csv, decode_latency_bench, refine_batch, InferenceConfig};
use pie_core::numcore::{GradCheckConfig, Scalar};
use pie_core::piemodel::{EditSpace, HeadMode, ModelConfig, PieModel, Vocab};
use pie_core::synthdata::{generate_corpus, parse_lexicon_tsv, parse_spurious_tsv, SynthConfig};
use pie_core::training::{
    compile_examples, load_checkpoint, model_grad_check, train, TrainConfig, TrainOptions,
};

#[derive(Parser, Serialize)]
#[command(name = "pie", version, about = "Parallel iterative edit models")]
struct Cli {
    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sentence-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Precision::Single)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Precision {
    Single,
    Double,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Metric {
    WordAcc,
    EditF05,
}

fn parse_mode(s: &str) -> std::result::Result<TokenMode, String> {
    s.parse().map_err(|e: PieError| e.to_string())
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Count merged inserts over a parallel corpus and keep the most frequent.
    BuildDicts(BuildDicts),
    /// Compile a parallel corpus into per-token edit labels.
    ExtractEdits(ExtractEdits),
    /// Corrupt clean sentences into synthetic training pairs.
    Synth(Synth),
    /// Train an edit labeler.
    Train(Train),
    /// Correct sentences with a trained model.
    Predict(Predict),
    /// Score predictions against references.
    Eval(Eval),
    /// Time refinement against a one-pass-per-token baseline.
    Bench(Bench),
    /// Finite-difference check of the model gradient.
    GradCheck(GradCheck),
}

#[derive(Args, Serialize)]
struct BuildDicts {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Dictionary capacity.
    #[arg(long = "M", default_value_t = 500)]
    m: usize,
    /// Longest insert run kept, in tokens.
    #[arg(long, default_value_t = 2)]
    q: usize,
    #[arg(long)]
    out_inserts: PathBuf,
    /// Also write the transformation table used with this dictionary.
    #[arg(long)]
    transforms: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode, default_value = "word")]
    mode: TokenMode,
}

#[derive(Args, Serialize)]
struct ExtractEdits {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    inserts: PathBuf,
    /// Transformation table TSV; the built-in table when omitted.
    #[arg(long)]
    transforms: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "word")]
    mode: TokenMode,
}

#[derive(Args, Serialize)]
struct Synth {
    #[arg(long)]
    clean: PathBuf,
    /// SynthConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spurious word TSV (word, weight).
    #[arg(long)]
    spurious: Option<PathBuf>,
    /// Verb lexicon TSV (verb, forms...).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out_src: PathBuf,
    #[arg(long)]
    out_tgt: PathBuf,
}

#[derive(Args, Serialize)]
struct Train {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Precompiled edit labels for the source lines; compiled from the pairs when omitted.
    #[arg(long)]
    edits: Option<PathBuf>,
    #[arg(long)]
    inserts: PathBuf,
    #[arg(long)]
    transforms: Option<PathBuf>,
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "word")]
    mode: TokenMode,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    copy_weight: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long, value_parser = parse_head)]
    head: Option<HeadMode>,
    /// Keep Adam moments in the checkpoints.
    #[arg(long)]
    save_optimizer: bool,
}

fn parse_head(s: &str) -> std::result::Result<HeadMode, String> {
    s.parse().map_err(|e: PieError| e.to_string())
}

#[derive(Args, Serialize)]
struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    iters: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-round edits and outputs as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct Eval {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::WordAcc)]
    metric: Metric,
    /// Source lines; required for edit metrics.
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode, default_value = "word")]
    mode: TokenMode,
}

#[derive(Args, Serialize)]
struct Bench {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Inclusive upper bounds on sentence length.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    buckets: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    iters: usize,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args, Serialize)]
struct GradCheck {
    /// ModelConfig JSON; the two-layer hidden-16 model when omitted.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| PieError::Config(format!("{}: {e}", path.display())))
}

fn load_table(path: Option<&Path>) -> Result<TransformTable> {
    match path {
        Some(p) => TransformTable::from_tsv(&read_to_string(p)?),
        None => Ok(TransformTable::default_table()),
    }
}

fn lines_text(lines: &[String]) -> Vec<u8> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out.into_bytes()
}

fn header(cli: &Cli) -> Result<String> {
    let json = serde_json::to_vec(cli)?;
    let digest = hex::encode(Sha256::digest(&json));
    Ok(format!(
        "# pie {} seed={} config={}",
        env!("CARGO_PKG_VERSION"),
        cli.seed.map_or("default".to_owned(), |s| s.to_string()),
        &digest[..16]
    ))
}

fn build_dicts(a: &BuildDicts) -> Result<()> {
    let corpus = load_parallel(&a.src, &a.tgt, a.mode)?;
    let cfg = DiffConfig::default();
    let dict = build_insert_dictionary(&corpus.pairs, a.m, a.q, &cfg)?;
    let long = long_insert_rate(&corpus.pairs, &cfg)?;
    write_atomic(&a.out_inserts, dict.to_tsv().as_bytes())?;
    if let Some(t) = &a.transforms {
        write_atomic(t, TransformTable::default_table().to_tsv().as_bytes())?;
    }
    println!(
        "pairs {} inserts {} long_insert_rate {:.4}",
        corpus.len(),
        dict.len(),
        long
    );
    Ok(())
}

fn extract_edits(a: &ExtractEdits) -> Result<()> {
    let corpus = load_parallel(&a.src, &a.tgt, a.mode)?;
    let dict = InsertDictionary::from_tsv(&read_to_string(&a.inserts)?, a.mode)?;
    let table = load_table(a.transforms.as_deref())?;
    let cfg = DiffConfig::default();
    let mut out = String::new();
    let mut exact = 0;
    for (x, y) in &corpus.pairs {
        let e = seq2edits(x, y, &dict, &table, &cfg)?;
        exact += usize::from(&apply_edits(x, &e, &table)? == y);
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    write_atomic(&a.out, out.as_bytes())?;
    let n = corpus.len();
    let rate = if n == 0 { 0.0 } else { 100.0 * exact as f64 / n as f64 };
    println!("reconstruction rate {rate:.1}% ({exact}/{n})");
    if corpus.skipped_empty > 0 {
        eprintln!("skipped {} pairs with a blank side", corpus.skipped_empty);
    }
    Ok(())
}

fn synth(a: &Synth, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(p) = &a.spurious {
        cfg.spurious_words = parse_spurious_tsv(&read_to_string(p)?)?;
    }
    if let Some(p) = &a.lexicon {
        cfg.verb_forms = parse_lexicon_tsv(&read_to_string(p)?)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let lines = read_lines(&a.clean)?;
    let corpus = generate_corpus(&lines, TokenMode::Word, &cfg)?;
    write_atomic(&a.out_src, &lines_text(&corpus.noisy))?;
    write_atomic(&a.out_tgt, &lines_text(&corpus.clean))?;
    println!("{}", serde_json::to_string(&corpus.stats)?);
    Ok(())
}

fn run_train<T: Scalar>(a: &Train, seed: Option<u64>) -> Result<()> {
    let corpus = load_parallel(&a.src, &a.tgt, a.mode)?;
    let dict = InsertDictionary::from_tsv(&read_to_string(&a.inserts)?, a.mode)?;
    let table = load_table(a.transforms.as_deref())?;
    let mut mcfg: ModelConfig = match &a.model_config {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    let mut tcfg: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    if let Some(v) = a.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        tcfg.learning_rate = v;
    }
    if let Some(v) = a.copy_weight {
        tcfg.copy_weight = v;
    }
    if let Some(v) = a.warmup_steps {
        tcfg.warmup_steps = v;
    }
    if let Some(h) = a.head {
        tcfg.head_mode = h;
    }
    mcfg.head = tcfg.head_mode;
    mcfg.token_mode = a.mode;
    tcfg.validate()?;

    let cfg = DiffConfig::default();
    let labeled: Vec<(TokenSequence, EditSequence)> = match &a.edits {
        Some(p) => {
            let lines: Vec<String> = read_lines(p)?.into_iter().filter(|l| !l.trim().is_empty()).collect();
            if lines.len() != corpus.len() {
                return Err(PieError::CountMismatch {
                    left: lines.len(),
                    right: corpus.len(),
                });
            }
            corpus
                .pairs
                .iter()
                .zip(&lines)
                .map(|((x, _), l)| Ok((x.clone(), EditSequence::from_json_line(l)?)))
                .collect::<Result<_>>()?
        }
        None => corpus
            .pairs
            .iter()
            .map(|(x, y)| Ok((x.clone(), seq2edits(x, y, &dict, &table, &cfg)?)))
            .collect::<Result<_>>()?,
    };
    let space = EditSpace::new(dict, table, a.mode);
    let seqs: Vec<&TokenSequence> = corpus.pairs.iter().flat_map(|(x, y)| [x, y]).collect();
    let vocab = Vocab::build(seqs, space.dictionary(), a.mode, None)?;
    let mut model = PieModel::<T>::new(mcfg, vocab, space, tcfg.seed)?;
    let data = compile_examples(&model, &labeled)?;
    let opts = TrainOptions {
        out_dir: Some(a.out_dir.clone()),
        save_optimizer: a.save_optimizer,
    };
    let mut log = String::new();
    let mut stdout = std::io::stdout();
    let report = train(&mut model, &data, &tcfg, &opts, |e, _| {
        let line = serde_json::to_string(e)?;
        writeln!(stdout, "{line}")?;
        log.push_str(&line);
        log.push('\n');
        Ok(true)
    })?;
    write_atomic(&a.out_dir.join("train-log.jsonl"), log.as_bytes())?;
    eprintln!("trained {} epochs, {} steps", report.epochs.len(), report.steps);
    Ok(())
}

fn run_predict<T: Scalar>(a: &Predict) -> Result<()> {
    let model = load_checkpoint::<T>(&a.checkpoint)?.model;
    let mode = model.config().token_mode;
    let cap = model.config().max_positions;
    let lines = read_lines(&a.input)?;
    let mut outputs = lines.clone();
    let mut traces: Vec<String> = vec![String::new(); lines.len()];
    let mut todo = Vec::new();
    let mut seqs = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let x = TokenSequence::from_line(l, mode)?;
        if x.len() > cap {
            eprintln!("line {}: {} tokens exceed the model's {cap}; copied unchanged", i + 1, x.len());
            continue;
        }
        todo.push(i);
        seqs.push(x);
    }
    let cfg = InferenceConfig {
        max_iterations: a.iters,
        batch_size: a.batch_size,
        record_rounds: a.trace.is_some(),
    };
    for (i, (out, trace)) in todo.into_iter().zip(refine_batch(&model, &seqs, &cfg)?) {
        outputs[i] = out.detokenize();
        traces[i] = serde_json::to_string(&trace)?;
    }
    write_atomic(&a.out, &lines_text(&outputs))?;
    if let Some(t) = &a.trace {
        write_atomic(t, &lines_text(&traces))?;
    }
    eprintln!("predicted {} lines", lines.len());
    Ok(())
}

fn eval(a: &Eval) -> Result<()> {
    let pred = read_lines(&a.pred)?;
    let gold = read_lines(&a.gold)?;
    let report = match a.metric {
        Metric::WordAcc => serde_json::json!({ "word_accuracy": word_accuracy(&pred, &gold)? }),
        Metric::EditF05 => {
            let src_path = a
                .src
                .as_ref()
                .ok_or_else(|| PieError::Config("--src is required for edit-f05".into()))?;
            let src = read_lines(src_path)?;
            let sp = pie_core::corpuskit::parse_parallel(&src, &pred, a.mode)?;
            let sg = pie_core::corpuskit::parse_parallel(&src, &gold, a.mode)?;
            if sp.len() != sg.len() {
                return Err(PieError::CountMismatch {
                    left: sp.len(),
                    right: sg.len(),
                });
            }
            // Every insert is representable, so both sides compile losslessly.
            let cfg = DiffConfig::default();
            let all: Vec<_> = sp.pairs.iter().chain(&sg.pairs).cloned().collect();
            let dict = build_insert_dictionary(&all, usize::MAX, usize::MAX, &cfg)?;
            let table = TransformTable::empty();
            let compile = |pairs: &[(TokenSequence, TokenSequence)]| -> Result<Vec<EditSequence>> {
                pairs.iter().map(|(x, y)| seq2edits(x, y, &dict, &table, &cfg)).collect()
            };
            let mut r = edit_prf(&compile(&sp.pairs)?, &compile(&sg.pairs)?, 0.5)?;
            r.word_accuracy = Some(word_accuracy(&pred, &gold)?);
            serde_json::to_value(r)?
        }
    };
    println!("{report}");
    Ok(())
}

fn run_bench<T: Scalar>(a: &Bench) -> Result<()> {
    let model = load_checkpoint::<T>(&a.checkpoint)?.model;
    let mode = model.config().token_mode;
    let sentences: Vec<TokenSequence> = read_lines(&a.input)?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| TokenSequence::from_line(l, mode))
        .collect::<Result<_>>()?;
    let cfg = InferenceConfig {
        max_iterations: a.iters,
        batch_size: 1,
        record_rounds: false,
    };
    let rows = decode_latency_bench(&model, &sentences, &a.buckets, &cfg)?;
    write_atomic(&a.out_csv, bench_csv(&rows).as_bytes())?;
    for r in &rows {
        eprintln!(
            "len {:.1}: {:.2} passes vs {:.1} baseline",
            r.bucket_mean_length, r.mean_passes, r.baseline_mean_passes
        );
    }
    Ok(())
}

const GRAD_CHECK_LINES: [&str; 3] = ["the cat sat on the mat", "a dog ran to the park", "she could have won"];

fn grad_check_cmd(a: &GradCheck, seed: Option<u64>) -> Result<bool> {
    let cfg: ModelConfig = match &a.model_config {
        Some(p) => read_json(p)?,
        None => ModelConfig::tiny(),
    };
    let seqs: Vec<TokenSequence> = GRAD_CHECK_LINES
        .iter()
        .map(|l| TokenSequence::from_line(l, TokenMode::Word))
        .collect::<Result<_>>()?;
    let dict = InsertDictionary::from_entries(vec![("the".into(), 2), ("to".into(), 1)], 2, 2)?;
    let space = EditSpace::new(dict, TransformTable::default_table(), TokenMode::Word);
    let vocab = Vocab::build(&seqs, space.dictionary(), TokenMode::Word, None)?;
    let seed = seed.unwrap_or(0);
    let cfg = ModelConfig {
        dropout: 0.0,
        init_range: cfg.init_range.max(0.3),
        ..cfg
    };
    let model = PieModel::<f64>::new(cfg, vocab, space, seed)?;
    let batch: Vec<Vec<usize>> = seqs.iter().map(|s| model.vocab().encode(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = model.space().len();
    let gold: Vec<usize> = batch
        .iter()
        .flatten()
        .map(|_| if rng.random_bool(0.5) { 0 } else { rng.random_range(0..width) })
        .collect();
    let report = model_grad_check(&model, &batch, &gold, 0.4, &GradCheckConfig { seed, ..GradCheckConfig::default() })?;
    for p in &report.params {
        println!("{}\t{:.3e}", p.name, p.max_rel_error);
    }
    println!("max_rel_error {:.3e}", report.max_rel_error());
    Ok(report.passed(a.tolerance))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PieError::Config(e.to_string()))?;
    }
    eprintln!("{}", header(cli)?);
    let double = matches!(cli.precision, Precision::Double);
    match &cli.command {
        Command::BuildDicts(a) => build_dicts(a)?,
        Command::ExtractEdits(a) => extract_edits(a)?,
        Command::Synth(a) => synth(a, cli.seed)?,
        Command::Train(a) if double => run_train::<f64>(a, cli.seed)?,
        Command::Train(a) => run_train::<f32>(a, cli.seed)?,
        Command::Predict(a) if double => run_predict::<f64>(a)?,
        Command::Predict(a) => run_predict::<f32>(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Bench(a) if double => run_bench::<f64>(a)?,
        Command::Bench(a) => run_bench::<f32>(a)?,
        Command::GradCheck(a) => {
            if !grad_check_cmd(a, cli.seed)? {
                eprintln!("gradient check failed at tolerance {}", a.tolerance);
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `diffstack`: dataset generation, training sweeps, evaluation, paper
//! table reproduction, and checkpoint inspection.
//!
//! Exit codes: 0 ok, 1 user error (bad flags, bad files), 2 internal
//! error (non-finite numerics, shape bugs).

mod manifest;

use clap::{Args, Parser, Subcommand};
use diffstack::cells::{Dims, Family, Model};
use diffstack::checkpoint::{read_checkpoint, summarize, write_checkpoint};
use diffstack::config::Config;
use diffstack::datagen::{
    build_benchmark, load_corpus, Benchmark, BenchmarkSpec, Corpus, DatasetSplit, GrammarId,
    PcfgParams,
};
use diffstack::eval::{evaluate_long, evaluate_split, perplexity, AblationCell};
use diffstack::math::RngStream;
use diffstack::training::{
    restore_params, train_lm, train_more, trial_seed, TrainConfig, TrainMode, TrainReport,
    TrainerState,
};
use diffstack::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "diffstack", version, about = "Stack-augmented RNN laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a grammar benchmark on disk (4 splits + metadata).
    Gen(GenArgs),
    /// Train one family over N trials; writes checkpoints and reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a benchmark split or a text corpus.
    Eval(EvalArgs),
    /// Reproduce a paper table end to end (data + sweep + table files).
    Repro(ReproArgs),
    /// Summarize a checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct CommonOut {
    /// Output root; defaults to $DIFFSTACK_OUT, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl CommonOut {
    fn root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("DIFFSTACK_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn file_config(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::load(p),
            None => Ok(Config::new()),
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Grammar: d2, d3, d6, or palindrome.
    #[arg(long)]
    grammar: String,
    /// Benchmark seed (dataset identity).
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Shrink every split by this divisor (1 = paper sizes).
    #[arg(long, default_value_t = 1)]
    scale: usize,
    /// Negative sampling: "hard" mixes corrupted positives in, "easy"
    /// keeps only uniform random strings.
    #[arg(long, default_value = "hard")]
    negatives: String,
    /// PCFG branch probability p.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// PCFG pair-choice probability p1.
    #[arg(long, default_value_t = 0.25)]
    p1: f64,
}

impl DataArgs {
    fn spec(&self) -> Result<BenchmarkSpec> {
        let grammar: GrammarId = self.grammar.parse()?;
        let mut spec = BenchmarkSpec::new(grammar, self.seed);
        spec.scale_divisor = self.scale.max(1);
        spec.pcfg = PcfgParams { p: self.p, p1: self.p1 };
        spec.hard_negatives = match self.negatives.as_str() {
            "hard" => true,
            "easy" => false,
            other => {
                return Err(Error::Config(format!(
                    "--negatives must be 'easy' or 'hard', got '{other}'"
                )))
            }
        };
        Ok(spec)
    }

    fn echo(&self, cfg: &mut Config) {
        cfg.set("grammar", &self.grammar);
        cfg.set("data_seed", self.seed);
        cfg.set("scale", self.scale);
        cfg.set("negatives", &self.negatives);
        cfg.set("pcfg_p", self.p);
        cfg.set("pcfg_p1", self.p1);
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Args)]
struct TrainHyper {
    /// Cell family (rnn, lstm, gru, stackrnn, diffstk-rnn, diffstk-lstm,
    /// diffstk-mrnn, diffstk-mlstm, diffstk-mirnn).
    #[arg(long)]
    family: String,
    /// Base seed; trial i derives its own seed from it.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// Hidden units (default 8 for grammars, 100 for LM).
    #[arg(long)]
    hidden: Option<usize>,
    /// Stack read width (top-k cells fed back into the state).
    #[arg(long, default_value_t = 3)]
    read_width: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    /// State noise: on|off.
    #[arg(long, default_value = "on")]
    noise: String,
    /// Noise variance when --noise on.
    #[arg(long, default_value_t = 0.1)]
    sigma2: f64,
    /// Carry-forward (state-freeze) gate: on|off.
    #[arg(long = "carry-forward", default_value = "on")]
    carry_forward: String,
    /// Training regime: sequential|incremental.
    #[arg(long, default_value = "sequential")]
    mode: String,
}

fn parse_switch(name: &str, v: &str) -> Result<bool> {
    match v {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!("--{name} must be 'on' or 'off', got '{other}'"))),
    }
}

impl TrainHyper {
    fn family(&self) -> Result<Family> {
        self.family.parse()
    }

    fn config(&self, trial_seed: u64, lm: bool) -> Result<TrainConfig> {
        let mut cfg = if lm {
            TrainConfig::lm(trial_seed)
        } else {
            TrainConfig::recognition(trial_seed)
        };
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.lr = self.lr;
        cfg.trials = self.trials;
        cfg.mode = self.mode.parse()?;
        cfg.noise = if parse_switch("noise", &self.noise)? {
            Some((0.0, self.sigma2))
        } else {
            None
        };
        cfg.carry_forward = parse_switch("carry-forward", &self.carry_forward)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn echo(&self, cfg: &mut Config, lm: bool) {
        cfg.set("family", &self.family);
        cfg.set("seed", self.seed);
        cfg.set("trials", self.trials);
        cfg.set("epochs", self.epochs.unwrap_or(if lm { 50 } else { 30 }));
        cfg.set("hidden", self.hidden.unwrap_or(if lm { 100 } else { 8 }));
        cfg.set("read_width", self.read_width);
        cfg.set("lr", self.lr);
        cfg.set("noise", &self.noise);
        cfg.set("sigma2", self.sigma2);
        cfg.set("carry_forward", &self.carry_forward);
        cfg.set("mode", &self.mode);
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    hyper: TrainHyper,
    /// Grammar benchmark to train on (omit for LM mode via --corpus).
    #[arg(long)]
    grammar: Option<String>,
    /// Benchmark seed (dataset identity; independent of --seed).
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long, default_value = "hard")]
    negatives: String,
    /// Language-model mode: training text file (one sentence per line).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// LM validation text file.
    #[arg(long)]
    valid_corpus: Option<PathBuf>,
    /// LM vocabulary cap (most frequent words kept; rest map to <unk>).
    #[arg(long, default_value_t = 10000)]
    vocab_cap: usize,
    /// Resume an interrupted run from its trial directories.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Split to evaluate: train|valid|test|long_test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also report long-string probe accuracies (n=120, n=160).
    #[arg(long)]
    long: bool,
    /// LM mode: compute perplexity on this text file instead.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 10000)]
    vocab_cap: usize,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Args)]
struct ReproArgs {
    /// table1 (noise ablation), table2 (carry-forward ablation),
    /// table3 (sequential vs incremental), table4 (D2), table5 (D3),
    /// table6 (long strings, D2/D3), table7 (long strings,
    /// D6/palindrome), d6, palindrome.
    table: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Shrink datasets for smoke runs (1 = paper sizes).
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, DisplayHelp | DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let run = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Repro(a) => cmd_repro(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Io(_) | Error::Generation(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- gen

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec = a.data.spec()?;
    let bench = build_benchmark(&spec)?;
    let dir = a.out.root().join(format!("data-{}-s{}", bench.grammar.id(), bench.seed));
    let mut files: Vec<PathBuf> = Vec::new();
    for split in bench.splits() {
        diffstack::datagen::write_split(
            &dir,
            bench.grammar.id(),
            bench.seed,
            split,
            &bench.alphabet,
            Some(bench.pcfg),
        )?;
        files.push(PathBuf::from(format!("{}.txt", split.name)));
        files.push(PathBuf::from(format!("{}.meta", split.name)));
        println!(
            "{}: {} samples, lengths {}..={}, {:.1}% positive",
            split.name,
            split.samples.len(),
            split.window.0,
            split.window.1,
            100.0 * split.positive_fraction()
        );
    }
    let mut cfg = a.out.file_config()?;
    a.data.echo(&mut cfg);
    let file_refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    manifest::write_manifest(&dir, "gen", &cfg.to_text(), &[bench.seed], &file_refs)?;
    println!("wrote {}", dir.display());
    Ok(())
}

// -------------------------------------------------------------- train

struct TrialFiles {
    dir: PathBuf,
}

impl TrialFiles {
    fn new(run_dir: &Path, i: usize) -> Self {
        TrialFiles { dir: run_dir.join(format!("trial{i}")) }
    }
    fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
    fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
    fn state(&self) -> PathBuf {
        self.dir.join("trainer.state")
    }
    fn epochs(&self) -> PathBuf {
        self.dir.join("epochs.csv")
    }
    fn report(&self) -> PathBuf {
        self.dir.join("report.txt")
    }
}

fn report_from_epoch_csv(text: &str, family: &str, seed: u64) -> Result<TrainReport> {
    let mut r = TrainReport::new(family, seed);
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Io(format!("malformed epochs.csv line '{line}'")));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Io(format!("bad number '{s}' in epochs.csv")))
        };
        r.epoch_train_loss.push(f(cols[1])?);
        r.valid_metric.push(f(cols[2])?);
        r.lr_trace.push(f(cols[3])?);
    }
    Ok(r)
}

/// Train one trial to its epoch budget, persisting state each epoch so
/// an interrupted run can resume at the last epoch boundary.
#[allow(clippy::too_many_arguments)]
fn run_trial(
    files: &TrialFiles,
    family: Family,
    dims: Dims,
    tseed: u64,
    cfg: &TrainConfig,
    train: &[diffstack::datagen::Sample],
    valid: &[diffstack::datagen::Sample],
    eos: usize,
    resume: bool,
) -> Result<(Model, TrainerState, TrainReport)> {
    let (mut model, mut state, mut report) = if resume && files.state().exists() {
        let last = read_checkpoint(&files.last())?;
        let best = read_checkpoint(&files.best())?;
        let text = std::fs::read_to_string(files.state())
            .map_err(|e| Error::Io(format!("{}: {e}", files.state().display())))?;
        let state = TrainerState::from_text(&text, &best.model)?;
        let epoch_text = std::fs::read_to_string(files.epochs())
            .map_err(|e| Error::Io(format!("{}: {e}", files.epochs().display())))?;
        let mut report = report_from_epoch_csv(&epoch_text, family.id(), tseed)?;
        report.best_valid = state.best_valid;
        report.best_epoch = state.best_epoch;
        (last.model, state, report)
    } else {
        let mut rng = RngStream::new(tseed);
        let model = Model::new(family, dims, &mut rng);
        let state = TrainerState::new(&model, cfg);
        let report = TrainReport::new(family.id(), tseed);
        (model, state, report)
    };

    while state.epochs_done < cfg.epochs && !report.diverged {
        train_more(&mut model, train, valid, eos, cfg, &mut state, &mut report, 1)?;
        std::fs::create_dir_all(&files.dir)?;
        write_checkpoint(&files.last(), &model, tseed, state.adam.steps())?;
        let mut best_model = model.clone();
        restore_params(&mut best_model.store, &state.best_snap);
        write_checkpoint(&files.best(), &best_model, tseed, state.adam.steps())?;
        write_text(&files.state(), &state.to_text())?;
        write_text(&files.epochs(), &report.epoch_csv())?;
    }
    let mut best_model = model.clone();
    restore_params(&mut best_model.store, &state.best_snap);
    Ok((best_model, state, report))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    if a.corpus.is_some() {
        return cmd_train_lm(a);
    }
    let grammar = a
        .grammar
        .as_deref()
        .ok_or_else(|| Error::Config("--grammar is required (or --corpus for LM mode)".into()))?;
    let data = DataArgs {
        grammar: grammar.to_string(),
        seed: a.data_seed,
        scale: a.scale,
        negatives: a.negatives.clone(),
        p: 0.5,
        p1: 0.25,
    };
    let bench = build_benchmark(&data.spec()?)?;
    let eos = bench.alphabet.eos();
    let family = a.hyper.family()?;
    let dims = Dims {
        vocab: bench.alphabet.len(),
        hidden: a.hyper.hidden.unwrap_or(8),
        read_width: a.hyper.read_width,
    };
    let run_dir = a.out.root().join(format!(
        "train-{}-{}-s{}",
        family.id(),
        bench.grammar.id(),
        a.hyper.seed
    ));
    if a.resume && a.hyper.trials != 1 {
        return Err(Error::Config("--resume requires --trials 1".into()));
    }

    let mut cfg_echo = a.out.file_config()?;
    data.echo(&mut cfg_echo);
    a.hyper.echo(&mut cfg_echo, false);

    let mut accs: Vec<f64> = Vec::new();
    let mut failed = 0usize;
    let mut seeds = Vec::new();
    for i in 0..a.hyper.trials {
        let tseed = trial_seed(a.hyper.seed, i);
        seeds.push(tseed);
        let cfg = a.hyper.config(tseed, false)?;
        let files = TrialFiles::new(&run_dir, i);
        let got = run_trial(
            &files,
            family,
            dims,
            tseed,
            &cfg,
            &bench.train.samples,
            &bench.valid.samples,
            eos,
            a.resume,
        );
        match got {
            Ok((best_model, state, mut report)) => {
                let test = evaluate_split(&best_model, &bench.test, eos)?;
                report.final_test_accuracy = Some(test.accuracy);
                write_text(&files.report(), &report.to_text())?;
                if report.diverged {
                    failed += 1;
                    println!("trial {i}: diverged at epoch {}", state.epochs_done);
                } else {
                    accs.push(test.accuracy);
                    println!(
                        "trial {i}: best_valid={:.4} (epoch {}) test={:.4}",
                        state.best_valid, state.best_epoch, test.accuracy
                    );
                }
            }
            Err(e @ Error::NonFinite(_)) => {
                failed += 1;
                println!("trial {i}: failed ({e})");
            }
            Err(e) => return Err(e),
        }
    }
    if accs.is_empty() {
        return Err(Error::Generation(format!("all {} trials failed", a.hyper.trials)));
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let best = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let agg = format!(
        "family,grammar,regime,split,mean,best,n_trials\n{},{},{},test,{:.4},{:.4},{}\n",
        family.id(),
        bench.grammar.id(),
        cfg_echo.get("mode").unwrap_or("sequential"),
        mean,
        best,
        accs.len()
    );
    write_text(&run_dir.join("aggregate.csv"), &agg)?;
    manifest::write_manifest(
        &run_dir,
        "train",
        &cfg_echo.to_text(),
        &seeds,
        &[Path::new("aggregate.csv")],
    )?;
    println!(
        "{} on {}: mean={:.4} best={:.4} over {} trials ({} failed)",
        family.id(),
        bench.grammar.id(),
        mean,
        best,
        accs.len(),
        failed
    );
    Ok(())
}

fn load_lm_corpora(a: &TrainArgs) -> Result<(Corpus, Vec<Vec<usize>>)> {
    let train_path = a.corpus.as_ref().unwrap();
    let corpus = load_corpus(train_path, a.vocab_cap)?;
    let valid = match &a.valid_corpus {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            corpus.encode_text(&text)
        }
        // hold out every 10th sentence when no validation file is given
        None => corpus.sequences.iter().step_by(10).cloned().collect(),
    };
    Ok((corpus, valid))
}

fn cmd_train_lm(a: TrainArgs) -> Result<()> {
    let (corpus, valid) = load_lm_corpora(&a)?;
    let family = a.hyper.family()?;
    let dims = Dims {
        vocab: corpus.alphabet.len(),
        hidden: a.hyper.hidden.unwrap_or(100),
        read_width: a.hyper.read_width,
    };
    let eos = corpus.alphabet.eos();
    let run_dir = a.out.root().join(format!("train-lm-{}-s{}", family.id(), a.hyper.seed));
    let mut cfg_echo = a.out.file_config()?;
    a.hyper.echo(&mut cfg_echo, true);
    cfg_echo.set("corpus", a.corpus.as_ref().unwrap().display());
    cfg_echo.set("vocab_cap", a.vocab_cap);

    let mut ppls: Vec<f64> = Vec::new();
    let mut seeds = Vec::new();
    for i in 0..a.hyper.trials {
        let tseed = trial_seed(a.hyper.seed, i);
        seeds.push(tseed);
        let cfg = a.hyper.config(tseed, true)?;
        let mut rng = RngStream::new(tseed);
        let mut model = Model::new(family, dims, &mut rng);
        let report = train_lm(&mut model, &corpus.sequences, &valid, eos, &cfg)?;
        let files = TrialFiles::new(&run_dir, i);
        std::fs::create_dir_all(&files.dir)?;
        write_checkpoint(&files.best(), &model, tseed, 0)?;
        write_text(&files.report(), &report.to_text())?;
        write_text(&files.epochs(), &report.epoch_csv())?;
        let ppl = perplexity(&model, &valid, eos)?;
        ppls.push(ppl);
        println!("trial {i}: valid perplexity {ppl:.2}");
    }
    let mean = ppls.iter().sum::<f64>() / ppls.len() as f64;
    let best = ppls.iter().cloned().fold(f64::INFINITY, f64::min);
    let agg = format!(
        "family,grammar,regime,split,mean,best,n_trials\n{},lm,perplexity,valid,{:.4},{:.4},{}\n",
        family.id(),
        mean,
        best,
        ppls.len()
    );
    write_text(&run_dir.join("aggregate.csv"), &agg)?;
    manifest::write_manifest(
        &run_dir,
        "train",
        &cfg_echo.to_text(),
        &seeds,
        &[Path::new("aggregate.csv")],
    )?;
    println!("{} LM: mean ppl {mean:.2}, best {best:.2}", family.id());
    Ok(())
}

// --------------------------------------------------------------- eval

fn pick_split<'b>(bench: &'b Benchmark, name: &str) -> Result<&'b DatasetSplit> {
    bench
        .splits()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("unknown split '{name}' (train|valid|test|long_test)")))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ck = read_checkpoint(&a.checkpoint)?;
    if let Some(corpus_path) = &a.corpus {
        let corpus = load_corpus(corpus_path, a.vocab_cap)?;
        if ck.model.dims.vocab != corpus.alphabet.len() {
            return Err(Error::Config(format!(
                "checkpoint vocabulary {} does not match corpus vocabulary {}",
                ck.model.dims.vocab,
                corpus.alphabet.len()
            )));
        }
        let ppl = perplexity(&ck.model, &corpus.sequences, corpus.alphabet.eos())?;
        println!("perplexity,{ppl:.4}");
        return Ok(());
    }

    let bench = build_benchmark(&a.data.spec()?)?;
    if ck.model.dims.vocab != bench.alphabet.len() {
        return Err(Error::Config(format!(
            "checkpoint vocabulary {} does not match grammar '{}' vocabulary {}",
            ck.model.dims.vocab,
            bench.grammar.id(),
            bench.alphabet.len()
        )));
    }
    let eos = bench.alphabet.eos();
    let split = pick_split(&bench, &a.split)?;
    let result = evaluate_split(&ck.model, split, eos)?;
    let mut csv = result.csv();
    let mut md = format!(
        "| split | accuracy | tp | fp | tn | fn |\n|---|---|---|---|---|---|\n| {} | {:.4} | {} | {} | {} | {} |\n",
        result.split, result.accuracy, result.tp, result.fp, result.tn, result.fn_
    );
    if a.long {
        for (n, acc) in evaluate_long(&ck.model, &bench.long_test, eos)? {
            let shown = acc.map_or("N/A".to_string(), |v| format!("{v:.4}"));
            csv.push_str(&format!("long_n{n},{shown}\n"));
            md.push_str(&format!("| n={n} | {shown} | | | | |\n"));
        }
    }
    print!("{csv}");
    let dir = a.out.root().join("eval");
    write_text(&dir.join("eval.csv"), &csv)?;
    write_text(&dir.join("eval.md"), &md)?;
    Ok(())
}

// -------------------------------------------------------------- repro

/// Rows of the paper's ablation tables (1-3).
fn ablation_families() -> Vec<Family> {
    vec![
        Family::Rnn,
        Family::Lstm,
        Family::StackRnn,
        Family::DiffStkRnn,
        Family::DiffStkMrnn,
        Family::DiffStkMirnn,
    ]
}

struct TrialOutcome {
    train_acc: f64,
    test_acc: f64,
    valid_acc: f64,
    best_model: Model,
}

/// Train `trials` runs of one family under one configuration; returns
/// per-trial outcomes (diverged trials dropped, count reported).
fn sweep_family(
    bench: &Benchmark,
    family: Family,
    base_seed: u64,
    trials: usize,
    mutate: &dyn Fn(&mut TrainConfig),
) -> Result<(Vec<TrialOutcome>, usize)> {
    let eos = bench.alphabet.eos();
    let dims = Dims { vocab: bench.alphabet.len(), hidden: 8, read_width: 3 };
    let mut outcomes = Vec::new();
    let mut failed = 0usize;
    for i in 0..trials {
        let tseed = trial_seed(base_seed, i);
        let mut cfg = TrainConfig::recognition(tseed);
        cfg.noise = Some((0.0, 0.1));
        if !family.default_tricks() {
            cfg.noise = None;
            cfg.carry_forward = false;
        }
        mutate(&mut cfg);
        let mut rng = RngStream::new(tseed);
        let mut model = Model::new(family, dims, &mut rng);
        match diffstack::training::train_one(
            &mut model,
            &bench.train.samples,
            &bench.valid.samples,
            eos,
            &cfg,
        ) {
            Ok(report) if !report.diverged => {
                let train_acc =
                    diffstack::eval::accuracy(&model, &bench.train.samples, eos)?;
                let test_acc = evaluate_split(&model, &bench.test, eos)?.accuracy;
                outcomes.push(TrialOutcome {
                    train_acc,
                    test_acc,
                    valid_acc: report.best_valid,
                    best_model: model,
                });
            }
            Ok(_) => failed += 1,
            Err(Error::NonFinite(_)) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((outcomes, failed))
}

fn mean_best(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, best)
}

fn cmd_repro(a: ReproArgs) -> Result<()> {
    let dir = a.out.root().join(format!("repro-{}-s{}", a.table, a.seed));
    let mut cfg_echo = a.out.file_config()?;
    cfg_echo.set("table", &a.table);
    cfg_echo.set("seed", a.seed);
    cfg_echo.set("trials", a.trials);
    cfg_echo.set("scale", a.scale);
    if let Some(e) = a.epochs {
        cfg_echo.set("epochs", e);
    }
    let epochs = a.epochs;
    let bench_for = |g: GrammarId| -> Result<Benchmark> {
        let mut spec = BenchmarkSpec::new(g, a.seed);
        spec.scale_divisor = a.scale.max(1);
        build_benchmark(&spec)
    };
    let apply_epochs = move |cfg: &mut TrainConfig| {
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
    };

    // ablation tables: one grammar, two regimes, test accuracy
    let ablation = |regimes: Vec<(String, Box<dyn Fn(&mut TrainConfig)>)>| -> Result<Vec<AblationCell>> {
        let bench = bench_for(GrammarId::D2)?;
        let mut cells = Vec::new();
        let mut statuses = Vec::new();
        for family in ablation_families() {
            for (name, mutate) in &regimes {
                let (outcomes, failed) = sweep_family(
                    &bench,
                    family,
                    a.seed,
                    a.trials,
                    &|cfg: &mut TrainConfig| {
                        apply_epochs(cfg);
                        mutate(cfg);
                    },
                )?;
                let accs: Vec<f64> = outcomes.iter().map(|o| o.test_acc).collect();
                let (mean, best) = mean_best(&accs);
                statuses.push(format!(
                    "{} {}: {} ok, {} failed",
                    family.id(),
                    name,
                    outcomes.len(),
                    failed
                ));
                cells.push(AblationCell {
                    family,
                    regime: name.clone(),
                    mean: 100.0 * mean,
                    best: 100.0 * best,
                });
                println!("{}", statuses.last().unwrap());
            }
        }
        write_text(&dir.join("status.txt"), &(statuses.join("\n") + "\n"))?;
        Ok(cells)
    };

    // accuracy tables: one grammar, all families, train/test columns
    let accuracy_table = |g: GrammarId| -> Result<Vec<AblationCell>> {
        let bench = bench_for(g)?;
        let mut cells = Vec::new();
        let mut statuses = Vec::new();
        for family in Family::all() {
            let (outcomes, failed) =
                sweep_family(&bench, family, a.seed, a.trials, &apply_epochs)?;
            let train: Vec<f64> = outcomes.iter().map(|o| o.train_acc).collect();
            let test: Vec<f64> = outcomes.iter().map(|o| o.test_acc).collect();
            for (regime, vals) in [("train", &train), ("test", &test)] {
                let (mean, best) = mean_best(vals);
                cells.push(AblationCell {
                    family,
                    regime: regime.to_string(),
                    mean: 100.0 * mean,
                    best: 100.0 * best,
                });
            }
            statuses.push(format!(
                "{}: {} ok, {} failed",
                family.id(),
                outcomes.len(),
                failed
            ));
            println!("{}", statuses.last().unwrap());
        }
        write_text(&dir.join("status.txt"), &(statuses.join("\n") + "\n"))?;
        Ok(cells)
    };

    // long-string tables: best-validation model per family, n=120/160
    let long_table = |grammars: [GrammarId; 2]| -> Result<String> {
        let mut csv = String::from("family");
        for g in grammars {
            csv.push_str(&format!(",{}_n120,{}_n160", g.id(), g.id()));
        }
        csv.push('\n');
        let mut rows: Vec<String> = Family::all().iter().map(|f| f.id().to_string()).collect();
        for g in grammars {
            let bench = bench_for(g)?;
            let eos = bench.alphabet.eos();
            for (fi, family) in Family::all().into_iter().enumerate() {
                let (outcomes, _) =
                    sweep_family(&bench, family, a.seed, a.trials, &apply_epochs)?;
                let best = outcomes.iter().max_by(|x, y| {
                    x.valid_acc.partial_cmp(&y.valid_acc).unwrap()
                });
                match best {
                    Some(o) => {
                        for (_, acc) in evaluate_long(&o.best_model, &bench.long_test, eos)? {
                            let shown =
                                acc.map_or(",N/A".to_string(), |v| format!(",{:.2}", 100.0 * v));
                            rows[fi].push_str(&shown);
                        }
                    }
                    None => rows[fi].push_str(",N/A,N/A"),
                }
                println!("{} {}: done", g.id(), family.id());
            }
        }
        for r in rows {
            csv.push_str(&r);
            csv.push('\n');
        }
        Ok(csv)
    };

    let noise_off = |cfg: &mut TrainConfig| cfg.noise = None;
    let carry_off = |cfg: &mut TrainConfig| cfg.carry_forward = false;
    let incremental = |cfg: &mut TrainConfig| cfg.mode = TrainMode::Incremental;

    let (csv, md) = match a.table.as_str() {
        "table1" => {
            let cells = ablation(vec![
                ("with_noise".into(), Box::new(|_: &mut TrainConfig| {})),
                ("without_noise".into(), Box::new(noise_off)),
            ])?;
            diffstack::eval::ablation_table(&cells)
        }
        "table2" => {
            let cells = ablation(vec![
                ("with_carry".into(), Box::new(|_: &mut TrainConfig| {})),
                ("without_carry".into(), Box::new(carry_off)),
            ])?;
            diffstack::eval::ablation_table(&cells)
        }
        "table3" => {
            let cells = ablation(vec![
                ("sequential".into(), Box::new(|_: &mut TrainConfig| {})),
                ("incremental".into(), Box::new(incremental)),
            ])?;
            diffstack::eval::ablation_table(&cells)
        }
        "table4" => diffstack::eval::ablation_table(&accuracy_table(GrammarId::D2)?),
        "table5" => diffstack::eval::ablation_table(&accuracy_table(GrammarId::D3)?),
        "d6" => diffstack::eval::ablation_table(&accuracy_table(GrammarId::D6)?),
        "palindrome" => {
            diffstack::eval::ablation_table(&accuracy_table(GrammarId::Palindrome)?)
        }
        "table6" => {
            let csv = long_table([GrammarId::D2, GrammarId::D3])?;
            (csv, String::new())
        }
        "table7" => {
            let csv = long_table([GrammarId::D6, GrammarId::Palindrome])?;
            (csv, String::new())
        }
        other => {
            return Err(Error::Config(format!(
                "unknown table '{other}' (table1..table7, d6, palindrome)"
            )))
        }
    };
    write_text(&dir.join(format!("{}.csv", a.table)), &csv)?;
    if !md.is_empty() {
        write_text(&dir.join(format!("{}.md", a.table)), &md)?;
    }
    manifest::write_manifest(
        &dir,
        "repro",
        &cfg_echo.to_text(),
        &[a.seed],
        &[Path::new(&format!("{}.csv", a.table))],
    )?;
    print!("{csv}");
    println!("wrote {}", dir.display());
    Ok(())
}

// ------------------------------------------------------------ inspect

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let ck = read_checkpoint(&a.checkpoint)?;
    println!("{}", summarize(&ck).trim_end());
    Ok(())
}

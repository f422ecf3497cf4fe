use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nmt_core::config::RunConfig;
use nmt_core::data::{load_features, preprocess_line, read_lines, ParallelCorpus, TextPipeline};
use nmt_core::decoding::{translate_corpus, DecodeOptions};
use nmt_core::model::{load_checkpoint, save_checkpoint, Regime, Seq2Seq};
use nmt_core::pipeline::{run_pipeline, Stage};
use nmt_core::reward::{corpus_bleu, sentence_bleu, words, RewardSpec};
use nmt_core::training::gradcheck::toy_gradcheck;
use nmt_core::training::{train, EpochReport};
use nmt_core::{Checkpoint, Ensemble};

mod run_dir;

use run_dir::RunDir;

#[derive(Parser, Debug)]
#[command(
    name = "nmt",
    version,
    about = "Attention seq2seq translation with sequence-level training"
)]
struct Cli {
    /// Log verbosity: repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn BPE merges and a vocabulary from raw text.
    BpeLearn(BpeLearnArgs),
    /// Segment raw text into BPE subwords.
    BpeApply(BpeApplyArgs),
    /// Train one regime (ce, ss or rl).
    Train(TrainArgs),
    /// Run a staged CE -> SS -> RL recipe from a config file.
    Pipeline(TrainArgs),
    /// Translate with one checkpoint or an ensemble.
    Translate(TranslateArgs),
    /// Corpus and mean sentence BLEU of candidate lines.
    Score(ScoreArgs),
    /// Finite-difference check of the model gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct BpeLearnArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Raw text files; merges are learned over all of them jointly.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    merges: usize,
    #[arg(long, default_value_t = 20_000)]
    vocab_cap: usize,
}

#[derive(Args, Debug)]
struct BpeApplyArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    merges: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// key=value config file (a previous run's manifest works too).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    regime: Option<String>,
    /// Pipeline stages as regime:epochs[:batch_size], e.g. ce:30:2,ss:10:2,rl:6:50
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    train_src: Option<PathBuf>,
    #[arg(long)]
    train_tgt: Option<PathBuf>,
    #[arg(long)]
    valid_src: Option<PathBuf>,
    #[arg(long)]
    valid_tgt: Option<PathBuf>,
    #[arg(long)]
    train_features: Option<PathBuf>,
    #[arg(long)]
    valid_features: Option<PathBuf>,
    #[arg(long)]
    merges: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Checkpoint to continue from (required for rl).
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// One checkpoint, or several for an ensemble.
    #[arg(long, required = true, num_args = 1..)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    merges: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 0.0)]
    length_reward: f64,
    #[arg(long, default_value_t = 100)]
    max_length: usize,
    /// Image feature file, required for multimodal checkpoints.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Reference translations; prints corpus BLEU when given.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Model size; only `toy` is available.
    #[arg(long, default_value = "toy")]
    dims: String,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 5)]
    seed: u64,
    /// Parameters are drawn from U(-scale, scale).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", category(&e));
            ExitCode::from(1)
        }
    }
}

fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<nmt_core::Error>() {
            return core.category();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "usage"
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BpeLearn(a) => bpe_learn(a),
        Command::BpeApply(a) => bpe_apply(a),
        Command::Train(a) => train_cmd(a, false),
        Command::Pipeline(a) => train_cmd(a, true),
        Command::Translate(a) => translate(a),
        Command::Score(a) => score(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn path_text(p: &Path) -> String {
    p.display().to_string()
}

fn bpe_learn(a: BpeLearnArgs) -> Result<()> {
    let inputs = a
        .input
        .iter()
        .map(|p| path_text(p))
        .collect::<Vec<_>>()
        .join(" ");
    let run = RunDir::create(
        &a.run_dir,
        "bpe-learn",
        &[
            ("input", inputs),
            ("merges", a.merges.to_string()),
            ("vocab_cap", a.vocab_cap.to_string()),
        ],
    )?;
    let mut lines = Vec::new();
    for p in &a.input {
        lines.extend(read_lines(p)?);
    }
    let text = TextPipeline::learn(&lines, a.merges, a.vocab_cap)?;
    let (m, v) = (run.output("merges.txt"), run.output("vocab.txt"));
    text.merges.save(&m)?;
    text.vocab.save(&v)?;
    println!(
        "merges\t{}\nvocab\t{}\nvocab_hash\t{}",
        text.merges.len(),
        text.vocab.len(),
        text.vocab.content_hash()
    );
    Ok(())
}

fn bpe_apply(a: BpeApplyArgs) -> Result<()> {
    let run = RunDir::create(
        &a.run_dir,
        "bpe-apply",
        &[
            ("merges", path_text(&a.merges)),
            ("input", path_text(&a.input)),
        ],
    )?;
    let merges = nmt_core::bpe::MergeTable::load(&a.merges)?;
    let out: String = read_lines(&a.input)?
        .iter()
        .map(|l| merges.apply(&preprocess_line(l)).join(" ") + "\n")
        .collect();
    run.write_output("segmented.txt", &out)
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let p = |v: &Option<PathBuf>| v.as_ref().map(|p| path_text(p));
    let flags: Vec<(&str, Option<String>)> = vec![
        ("regime", a.regime.clone()),
        ("stages", a.stages.clone()),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("learning_rate", a.learning_rate.map(|v| v.to_string())),
        ("train_src", p(&a.train_src)),
        ("train_tgt", p(&a.train_tgt)),
        ("valid_src", p(&a.valid_src)),
        ("valid_tgt", p(&a.valid_tgt)),
        ("train_features", p(&a.train_features)),
        ("valid_features", p(&a.valid_features)),
        ("merges_file", p(&a.merges)),
        ("vocab_file", p(&a.vocab)),
        ("init_checkpoint", p(&a.init)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Prepared {
    text: TextPipeline,
    train: ParallelCorpus,
    valid: Option<ParallelCorpus>,
    start: Checkpoint,
}

fn required<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| nmt_core::Error::Config(format!("{key} is not set")).into())
}

fn prepare(cfg: &RunConfig, run: &RunDir) -> Result<Prepared> {
    let train_src = read_lines(required(&cfg.train_src, "train_src")?)?;
    let train_tgt = read_lines(required(&cfg.train_tgt, "train_tgt")?)?;
    let text = match (&cfg.merges_file, &cfg.vocab_file) {
        (Some(m), Some(v)) => TextPipeline::load(m, v)?,
        (None, None) => {
            let joint: Vec<&String> = train_src.iter().chain(&train_tgt).collect();
            let text = TextPipeline::learn(&joint, cfg.bpe_merges, cfg.vocab_cap)?;
            text.merges.save(run.output("merges.txt"))?;
            text.vocab.save(run.output("vocab.txt"))?;
            text
        }
        _ => bail!(nmt_core::Error::Config(
            "merges_file and vocab_file must be given together".into()
        )),
    };
    let features = |p: &Option<PathBuf>, n: usize| -> Result<Option<Vec<Vec<f64>>>> {
        Ok(match p {
            Some(p) => Some(load_features(p, Some(n))?),
            None => None,
        })
    };
    let (train, drops) = text.build_corpus(
        &train_src,
        &train_tgt,
        features(&cfg.train_features, train_src.len())?,
        &cfg.source_lang,
        &cfg.target_lang,
        cfg.max_train_len,
    )?;
    log::info!(
        "training pairs {} (dropped {} empty, {} too long)",
        train.len(),
        drops.empty,
        drops.too_long
    );
    let valid = match (&cfg.valid_src, &cfg.valid_tgt) {
        (Some(s), Some(t)) => {
            let (s, t) = (read_lines(s)?, read_lines(t)?);
            let feats = features(&cfg.valid_features, s.len())?;
            let (v, _) = text.build_corpus(
                &s,
                &t,
                feats,
                &cfg.source_lang,
                &cfg.target_lang,
                cfg.max_train_len,
            )?;
            Some(v)
        }
        (None, None) => None,
        _ => bail!(nmt_core::Error::Config(
            "valid_src and valid_tgt must be given together".into()
        )),
    };
    let start = match &cfg.init_checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let mut m = cfg.model.clone();
            m.vocab_size = text.vocab.len();
            m.image_feature_dim = train.feature_dim();
            Checkpoint::new(Seq2Seq::new(m)?, Regime::Init, text.vocab.content_hash())
        }
    };
    Ok(Prepared {
        text,
        train,
        valid,
        start,
    })
}

fn fmt_bleu(b: Option<f64>) -> String {
    b.map_or_else(|| "-".into(), |b| format!("{b:.6}"))
}

fn train_cmd(a: TrainArgs, staged: bool) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let name = if staged { "pipeline" } else { "train" };
    let run = RunDir::create_with_config(&a.run_dir, name, &cfg)?;
    let data = prepare(&cfg, &run)?;
    let mut log = run.log(&format!("stage\t{}", EpochReport::TSV_HEADER))?;

    let stages = if staged {
        cfg.stages.clone()
    } else {
        vec![Stage::new(cfg.train.regime, cfg.train.epochs)]
    };
    let results = if staged {
        run_pipeline(
            data.start,
            &stages,
            &data.train,
            data.valid.as_ref(),
            &data.text.vocab,
            &cfg.train,
            &mut |i, r, c| {
                log.row(&format!("{i}\t{}", r.to_tsv()))?;
                save_checkpoint(
                    c,
                    run.checkpoint(&format!("stage{i}-{}-epoch{:03}", r.regime, r.epoch)),
                )
            },
        )?
    } else {
        let outcome = train(
            data.start,
            &data.train,
            data.valid.as_ref(),
            &data.text.vocab,
            &cfg.train,
            &mut |r, c| {
                log.row(&format!("0\t{}", r.to_tsv()))?;
                save_checkpoint(c, run.checkpoint(&format!("epoch{:03}", r.epoch)))
            },
        )?;
        vec![nmt_core::pipeline::StageResult {
            stage: stages[0],
            outcome,
        }]
    };

    let mut summary =
        String::from("stage\tregime\tepochs\tinitial_valid_bleu\tbest_epoch\tbest_valid_bleu\n");
    for (i, r) in results.iter().enumerate() {
        let o = &r.outcome;
        if staged {
            save_checkpoint(
                &o.best,
                run.checkpoint(&format!("stage{i}-{}-best", r.stage.regime)),
            )?;
        }
        summary.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{}\t{}\n",
            r.stage.regime,
            r.stage.epochs,
            fmt_bleu(o.initial_valid_bleu),
            o.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
            fmt_bleu(o.best_valid_bleu)
        ));
    }
    let last = results.last().expect("at least one stage");
    save_checkpoint(&last.outcome.best, run.checkpoint("best"))?;
    save_checkpoint(&last.outcome.last, run.checkpoint("last"))?;
    run.write_output("summary.tsv", &summary)?;
    print!("{summary}");
    Ok(())
}

fn translate(a: TranslateArgs) -> Result<()> {
    let ckpts = a
        .checkpoints
        .iter()
        .map(|p| path_text(p))
        .collect::<Vec<_>>()
        .join(" ");
    let mut fields = vec![
        ("checkpoints", ckpts),
        ("merges", path_text(&a.merges)),
        ("vocab", path_text(&a.vocab)),
        ("input", path_text(&a.input)),
        ("beam", a.beam.to_string()),
        ("length_reward", a.length_reward.to_string()),
        ("max_length", a.max_length.to_string()),
    ];
    if let Some(f) = &a.features {
        fields.push(("features", path_text(f)));
    }
    if let Some(r) = &a.reference {
        fields.push(("reference", path_text(r)));
    }
    let run = RunDir::create(&a.run_dir, "translate", &fields)?;
    let options = DecodeOptions {
        beam: a.beam,
        length_reward: a.length_reward,
        max_len: a.max_length,
    };
    let members = a
        .checkpoints
        .iter()
        .map(load_checkpoint)
        .collect::<nmt_core::Result<Vec<Checkpoint>>>()?;
    let spec = Ensemble::new(members, options)?;
    let text = TextPipeline::load(&a.merges, &a.vocab)?;
    let sources = read_lines(&a.input)?;
    let features = a
        .features
        .as_ref()
        .map(|p| load_features(p, Some(sources.len())))
        .transpose()?;
    let references = a.reference.as_ref().map(read_lines).transpose()?;
    let report = translate_corpus(
        &spec,
        &text,
        &sources,
        features.as_deref(),
        references.as_deref(),
    )?;
    let out: String = report.lines.iter().map(|l| format!("{l}\n")).collect();
    run.write_output("translations.txt", &out)?;
    println!("sentences\t{}", report.lines.len());
    println!("truncated\t{}", report.truncated);
    if let Some(b) = report.bleu {
        println!("bleu\t{b:.6}");
        run.write_output("bleu.txt", &format!("{b:.6}\n"))?;
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let run = a
        .run_dir
        .as_ref()
        .map(|d| {
            RunDir::create(
                d,
                "score",
                &[
                    ("candidates", path_text(&a.candidates)),
                    ("references", path_text(&a.references)),
                ],
            )
        })
        .transpose()?;
    let cands: Vec<String> = read_lines(&a.candidates)?
        .iter()
        .map(|l| preprocess_line(l))
        .collect();
    let refs: Vec<String> = read_lines(&a.references)?
        .iter()
        .map(|l| preprocess_line(l))
        .collect();
    if cands.len() != refs.len() {
        bail!(nmt_core::Error::Invalid(format!(
            "{} candidate lines vs {} reference lines",
            cands.len(),
            refs.len()
        )));
    }
    let c: Vec<Vec<&str>> = cands.iter().map(|l| words(l)).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|l| words(l)).collect();
    let corpus = corpus_bleu(&c, &r)?;
    let spec = RewardSpec::default();
    let mean = if c.is_empty() {
        0.0
    } else {
        c.iter()
            .zip(&r)
            .map(|(c, r)| sentence_bleu(c, r, &spec))
            .sum::<f64>()
            / c.len() as f64
    };
    let report = format!("corpus_bleu\t{corpus:.6}\nmean_sentence_bleu\t{mean:.6}\n");
    print!("{report}");
    if let Some(run) = run {
        run.write_output("score.tsv", &report)?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.dims != "toy" {
        bail!(nmt_core::Error::Config(format!(
            "unknown dims {:?}; only toy is available",
            a.dims
        )));
    }
    let run = a
        .run_dir
        .as_ref()
        .map(|d| {
            RunDir::create(
                d,
                "gradcheck",
                &[
                    ("dims", a.dims.clone()),
                    ("tol", a.tol.to_string()),
                    ("step", a.step.to_string()),
                    ("seed", a.seed.to_string()),
                    ("scale", a.scale.to_string()),
                ],
            )
        })
        .transpose()?;
    let report = toy_gradcheck(a.seed, a.scale, a.step, a.tol)?;
    println!("{report}");
    if let Some(run) = run {
        run.write_output("gradcheck.txt", &format!("{report}\n"))?;
    }
    if !report.passed() {
        bail!(nmt_core::Error::Tensor(
            nmt_core::tensor::TensorError::GradCheck(format!(
                "max relative error {:.3e} exceeds {:.1e}",
                report.max_rel_error(),
                a.tol
            ))
        ));
    }
    Ok(())
}

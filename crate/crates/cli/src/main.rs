//! `cadenza`: command-line front end for the symbolic-music pipeline.
//!
//! Subcommands cover the full workflow: `ingest` a directory of MIDI
//! files into token corpus + vocabulary, `train` the LSTM, `generate`
//! from a checkpoint, produce `baseline` outputs, and `analyze` corpora
//! and embeddings. Exit codes: 0 success, 1 runtime/domain error,
//! 2 usage or missing-input error.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cadenza_core::analysis::{
    frequency_report, project_embeddings, projection_to_csv, projection_to_svg, tsne,
    EmbeddingSelection, TsneConfig,
};
use cadenza_core::dataset::make_batches;
use cadenza_core::encoding::{
    corpus_from_text, corpus_to_text, encode_timestep, message_tokenize, parse_chord_token,
    sample_pianoroll,
};
use cadenza_core::generate::{
    baseline_untrained, baseline_weighted_chords, generate, render_chord_tokens,
    render_message_tokens, GenerateError, SamplingMode, SamplingPolicy,
};
use cadenza_core::midi::{extract_note_events, flatten_tracks, normalize_ticks, parse_midi, write_midi};
use cadenza_core::model::{load_checkpoint, save_checkpoint, history_to_csv, train};
use cadenza_core::{ModelConfig, Representation, Token, Vocabulary};

/// Normalization target for ingested files and tick rate of rendered files.
const TICKS_PER_BEAT: u16 = 480;
/// Chord tokens sit on an eighth-note grid: half a beat.
const TICKS_PER_EIGHTH: u32 = (TICKS_PER_BEAT / 2) as u32;

#[derive(Parser)]
#[command(name = "cadenza", version, about = "Symbolic-music language modeling pipeline")]
struct Cli {
    /// key=value defaults file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a directory of MIDI files into a token corpus and vocabulary.
    Ingest(IngestArgs),
    /// Train the LSTM on an ingested corpus.
    Train(TrainArgs),
    /// Generate tokens and a MIDI file from a trained checkpoint.
    Generate(GenerateArgs),
    /// Produce baseline outputs (untrained model or weighted chord draws).
    Baseline(BaselineArgs),
    /// Corpus statistics and embedding projections.
    Analyze(AnalyzeArgs),
    /// Verify that every MIDI file in a directory survives a write/parse round trip.
    #[command(hide = true)]
    Roundtrip(RoundtripArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory containing .mid files.
    #[arg(long, value_name = "DIR")]
    corpus_dir: PathBuf,
    /// Token representation: messages | pianoroll.
    #[arg(long)]
    representation: Option<Representation>,
    /// Output directory for corpus.txt and vocab.txt.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    /// RNG seed for the polyphony-cap subset draws (pianoroll only).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Token corpus file from `ingest`.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Vocabulary file from `ingest`.
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Representation recorded in the checkpoint: messages | pianoroll.
    #[arg(long)]
    representation: Option<Representation>,
    /// Checkpoint output path.
    #[arg(long, value_name = "FILE", default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-epoch loss CSV output path.
    #[arg(long, value_name = "FILE", default_value = "loss.csv")]
    loss_csv: PathBuf,
    /// Use the large-corpus preset: batch size 25, sequence length 25.
    #[arg(long)]
    classical: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    anneal_factor: Option<f64>,
    #[arg(long)]
    anneal_threshold: Option<f64>,
}

#[derive(Args)]
struct PolicyArgs {
    /// Sampling policy: greedy | sampled | mixed.
    #[arg(long)]
    policy: Option<String>,
    /// Greedy probability per step under the mixed policy.
    #[arg(long)]
    lambda: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Space-separated seed tokens.
    #[arg(long, value_name = "TOKENS")]
    seed_tokens: String,
    /// Number of tokens to generate after the seed.
    #[arg(long)]
    length: Option<usize>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Sampling RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE", default_value = "generated.txt")]
    out_tokens: PathBuf,
    #[arg(long, value_name = "FILE", default_value = "generated.mid")]
    out_midi: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// Baseline kind: untrained | weighted.
    kind: String,
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Space-separated seed tokens (untrained baseline only).
    #[arg(long, value_name = "TOKENS")]
    seed_tokens: Option<String>,
    #[arg(long)]
    length: Option<usize>,
    /// Representation used to render the output (untrained baseline).
    #[arg(long)]
    representation: Option<Representation>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, value_name = "FILE", default_value = "baseline.txt")]
    out_tokens: PathBuf,
    #[arg(long, value_name = "FILE", default_value = "baseline.mid")]
    out_midi: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Analysis kind: freq | tsne.
    kind: String,
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Embedding filter: duration=<ticks> | single-note.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Test hook: project raw points (one space-separated row per line)
    /// instead of checkpoint embeddings.
    #[arg(long, value_name = "FILE", hide = true)]
    points_from: Option<PathBuf>,
    #[arg(long, value_name = "FILE", default_value = "analysis.csv")]
    out_csv: PathBuf,
    /// Scatter plot output (tsne only).
    #[arg(long, value_name = "FILE")]
    out_svg: Option<PathBuf>,
}

#[derive(Args)]
struct RoundtripArgs {
    #[arg(long, value_name = "DIR")]
    corpus_dir: PathBuf,
}

/// Runtime/domain failures exit 1; usage and missing-input failures exit 2.
enum CliError {
    Runtime(String),
    Usage(String),
}

impl CliError {
    fn runtime<E: std::fmt::Display>(err: E) -> Self {
        CliError::Runtime(err.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let defaults = match cli.config.as_deref().map(load_defaults).transpose() {
        Ok(map) => map.unwrap_or_default(),
        Err(e) => return fail(e),
    };
    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &defaults),
        Command::Train(args) => cmd_train(args, &defaults),
        Command::Generate(args) => cmd_generate(args, &defaults),
        Command::Baseline(args) => cmd_baseline(args, &defaults),
        Command::Analyze(args) => cmd_analyze(args, &defaults),
        Command::Roundtrip(args) => cmd_roundtrip(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(err: CliError) -> ExitCode {
    match err {
        CliError::Runtime(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        CliError::Usage(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

// ---------------------------------------------------------------------------
// Config-file defaults: key=value lines, '#' comments. Flags always win.

type Defaults = HashMap<String, String>;

fn load_defaults(path: &Path) -> Result<Defaults, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "config {} line {}: expected key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Flag value if given, else the config-file value, else the default.
fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    defaults: &Defaults,
    key: &str,
    fallback: T,
) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match defaults.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|e| CliError::Usage(format!("config key {key}={raw}: {e}"))),
        None => Ok(fallback),
    }
}

fn sampling_policy(args: &PolicyArgs, defaults: &Defaults) -> Result<SamplingPolicy, CliError> {
    let name = match &args.policy {
        Some(p) => p.clone(),
        None => defaults.get("policy").cloned().unwrap_or_else(|| "mixed".into()),
    };
    let lambda = resolve(args.lambda, defaults, "lambda", 0.5)?;
    let temperature = resolve(args.temperature, defaults, "temperature", 1.0)?;
    if temperature <= 0.0 {
        return Err(CliError::Usage(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mode = match name.as_str() {
        "greedy" => SamplingMode::Greedy,
        "sampled" => SamplingMode::Sampled,
        "mixed" => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(CliError::Usage(format!(
                    "lambda must be in [0, 1], got {lambda}"
                )));
            }
            SamplingMode::Mixed { lambda }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown policy {other:?} (expected greedy | sampled | mixed)"
            )))
        }
    };
    Ok(SamplingPolicy { mode, temperature })
}

// ---------------------------------------------------------------------------
// File helpers

/// Write via a temp file in the same directory, then rename, so
/// interrupted runs never leave partial artifacts.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("invalid output path {}", path.display())))?;
    let tmp = dir
        .unwrap_or(Path::new("."))
        .join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Runtime(format!("cannot rename to {}: {e}", path.display()))
    })
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let bytes = read_input(path, "vocab file")?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Runtime(format!("vocab file {} is not UTF-8", path.display())))?;
    Vocabulary::from_text(&text).map_err(CliError::runtime)
}

fn split_seed_tokens(spec: &str) -> Result<Vec<Token>, CliError> {
    let tokens: Vec<Token> = spec.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(CliError::Usage("seed token list is empty".into()));
    }
    Ok(tokens)
}

fn render_tokens(tokens: &[Token], representation: Representation) -> Result<Vec<u8>, CliError> {
    match representation {
        Representation::Messages => render_message_tokens(tokens).map_err(CliError::runtime),
        Representation::Pianoroll => {
            render_chord_tokens(tokens, TICKS_PER_EIGHTH).map_err(CliError::runtime)
        }
    }
}

fn write_token_artifacts(
    tokens: &[Token],
    representation: Representation,
    out_tokens: &Path,
    out_midi: &Path,
) -> CliResult {
    let mut text = tokens.join(" ");
    text.push('\n');
    write_atomic(out_tokens, text.as_bytes())?;
    let midi = render_tokens(tokens, representation)?;
    write_atomic(out_midi, &midi)?;
    println!("wrote {} tokens to {}", tokens.len(), out_tokens.display());
    println!("wrote MIDI to {}", out_midi.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest

fn cmd_ingest(args: IngestArgs, defaults: &Defaults) -> CliResult {
    let representation = resolve(
        args.representation,
        defaults,
        "representation",
        Representation::Messages,
    )?;
    let seed = resolve(args.seed, defaults, "seed", 0)?;

    let entries = fs::read_dir(&args.corpus_dir).map_err(|e| {
        CliError::Usage(format!("cannot read {}: {e}", args.corpus_dir.display()))
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|ext| ext.eq_ignore_ascii_case("mid") || ext.eq_ignore_ascii_case("midi"))
                .unwrap_or(false)
        })
        .collect();
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no MIDI files found in {}",
            args.corpus_dir.display()
        )));
    }
    files.sort();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus: Vec<Vec<Token>> = Vec::new();
    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    for path in &files {
        let tokens = fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| parse_midi(&bytes).map_err(|e| e.to_string()))
            .map(|file| {
                let file = normalize_ticks(&file, TICKS_PER_BEAT);
                match representation {
                    Representation::Messages => {
                        message_tokenize(&flatten_tracks(&extract_note_events(&file)))
                    }
                    Representation::Pianoroll => sample_pianoroll(&file)
                        .iter()
                        .map(|step| encode_timestep(step, &mut rng))
                        .collect(),
                }
            });
        match tokens {
            Ok(tokens) => corpus.push(tokens),
            Err(msg) => {
                eprintln!("warning: skipping {}: {msg}", path.display());
                failures.push((path.clone(), msg));
            }
        }
    }
    if corpus.is_empty() {
        let mut listing = String::from("no MIDI file parsed successfully:");
        for (path, msg) in &failures {
            let _ = write!(listing, "\n  {}: {msg}", path.display());
        }
        return Err(CliError::Runtime(listing));
    }

    let vocab = Vocabulary::build(&corpus).map_err(CliError::runtime)?;
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out_dir.display())))?;
    write_atomic(&args.out_dir.join("corpus.txt"), corpus_to_text(&corpus).as_bytes())?;
    write_atomic(&args.out_dir.join("vocab.txt"), vocab.to_text().as_bytes())?;

    println!("Corpus            Words  Unique Tokens");
    println!(
        "{:<16} {:>6}  {:>13}",
        args.corpus_dir.display(),
        vocab.total_tokens(),
        vocab.len()
    );
    println!(
        "ingested {} of {} files ({} skipped)",
        corpus.len(),
        files.len(),
        failures.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(args: TrainArgs, defaults: &Defaults) -> CliResult {
    let representation = resolve(
        args.representation,
        defaults,
        "representation",
        Representation::Messages,
    )?;
    let corpus_bytes = read_input(&args.corpus, "corpus file")?;
    let corpus_text = String::from_utf8(corpus_bytes)
        .map_err(|_| CliError::Runtime("corpus file is not UTF-8".into()))?;
    let vocab = read_vocab(&args.vocab)?;

    let mut config = ModelConfig::new(vocab.len());
    if args.classical {
        config = config.classical_preset();
    }
    config.epochs = resolve(args.epochs, defaults, "epochs", config.epochs)?;
    config.rng_seed = resolve(args.seed, defaults, "seed", config.rng_seed)?;
    config.batch_size = resolve(args.batch_size, defaults, "batch-size", config.batch_size)?;
    config.seq_len = resolve(args.seq_len, defaults, "seq-len", config.seq_len)?;
    config.hidden_dim = resolve(args.hidden_dim, defaults, "hidden-dim", config.hidden_dim)?;
    config.embed_dim = resolve(args.embed_dim, defaults, "embed-dim", config.embed_dim)?;
    config.learning_rate = resolve(args.learning_rate, defaults, "learning-rate", config.learning_rate)?;
    config.clip_norm = resolve(args.clip_norm, defaults, "clip-norm", config.clip_norm)?;
    config.anneal_factor = resolve(args.anneal_factor, defaults, "anneal-factor", config.anneal_factor)?;
    config.anneal_threshold = resolve(
        args.anneal_threshold,
        defaults,
        "anneal-threshold",
        config.anneal_threshold,
    )?;

    println!("Representation        {representation}");
    println!("Vocabulary Size       {}", config.vocab_size);
    println!("Hidden State          {}", config.hidden_dim);
    println!("Token Embedding Size  {}", config.embed_dim);
    println!("Batch Size            {}", config.batch_size);
    println!("Sequence Length       {}", config.seq_len);
    println!("Learning Rate         {}", config.learning_rate);
    println!("Clip Norm             {}", config.clip_norm);
    println!("Epochs                {}", config.epochs);
    println!("Seed                  {}", config.rng_seed);

    let ids: Vec<usize> = corpus_from_text(&corpus_text)
        .iter()
        .flat_map(|piece| vocab.encode_ids(piece))
        .flatten()
        .collect();
    let batches =
        make_batches(&ids, config.batch_size, config.seq_len).map_err(CliError::runtime)?;
    let (params, history) = train(&config, &batches).map_err(CliError::runtime)?;

    let mut last_lr = config.learning_rate;
    for record in &history {
        println!(
            "epoch {:>4}  loss {:.6}  lr {:.6}",
            record.epoch, record.loss, record.learning_rate
        );
        if record.learning_rate < last_lr {
            println!(
                "  annealed learning rate {last_lr:.6} -> {:.6}",
                record.learning_rate
            );
        }
        last_lr = record.learning_rate;
    }

    write_atomic(&args.loss_csv, history_to_csv(&history).as_bytes())?;
    write_atomic(&args.out, &save_checkpoint(&params, &config, representation))?;
    println!("wrote checkpoint to {}", args.out.display());
    println!("wrote loss history to {}", args.loss_csv.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// generate / baseline

fn cmd_generate(args: GenerateArgs, defaults: &Defaults) -> CliResult {
    let bytes = read_input(&args.checkpoint, "checkpoint")?;
    let checkpoint = load_checkpoint(&bytes).map_err(CliError::runtime)?;
    let vocab = read_vocab(&args.vocab)?;
    if vocab.len() != checkpoint.config.vocab_size {
        return Err(CliError::Runtime(format!(
            "vocab size {} does not match checkpoint vocab size {}",
            vocab.len(),
            checkpoint.config.vocab_size
        )));
    }
    let seed_tokens = split_seed_tokens(&args.seed_tokens)?;
    let length = resolve(args.length, defaults, "length", 500)?;
    let policy = sampling_policy(&args.policy, defaults)?;
    let seed = resolve(args.seed, defaults, "seed", 0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = generate(
        &checkpoint.params,
        &checkpoint.config,
        &vocab,
        &seed_tokens,
        length,
        &policy,
        &mut rng,
    )
    .map_err(|e| match e {
        GenerateError::UnknownSeedToken(_) | GenerateError::EmptySeed => CliError::runtime(e),
        other => CliError::runtime(other),
    })?;
    write_token_artifacts(&tokens, checkpoint.representation, &args.out_tokens, &args.out_midi)
}

fn cmd_baseline(args: BaselineArgs, defaults: &Defaults) -> CliResult {
    let vocab = read_vocab(&args.vocab)?;
    let length = resolve(args.length, defaults, "length", 500)?;
    let seed = resolve(args.seed, defaults, "seed", 0)?;

    match args.kind.as_str() {
        "untrained" => {
            let representation = resolve(
                args.representation,
                defaults,
                "representation",
                Representation::Messages,
            )?;
            let seed_spec = args
                .seed_tokens
                .as_deref()
                .ok_or_else(|| CliError::Usage("untrained baseline requires --seed-tokens".into()))?;
            let seed_tokens = split_seed_tokens(seed_spec)?;
            let policy = sampling_policy(&args.policy, defaults)?;
            let mut config = ModelConfig::new(vocab.len());
            config.hidden_dim = resolve(args.hidden_dim, defaults, "hidden-dim", config.hidden_dim)?;
            config.embed_dim = resolve(args.embed_dim, defaults, "embed-dim", config.embed_dim)?;
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sample_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let tokens = baseline_untrained(
                &config,
                &vocab,
                &seed_tokens,
                length,
                &policy,
                &mut init_rng,
                &mut sample_rng,
            )
            .map_err(CliError::runtime)?;
            write_token_artifacts(&tokens, representation, &args.out_tokens, &args.out_midi)
        }
        "weighted" => {
            if let Some(bad) = vocab
                .tokens()
                .iter()
                .find(|t| parse_chord_token(t).is_err())
            {
                return Err(CliError::Runtime(format!(
                    "weighted baseline requires a pianoroll vocabulary; token {bad:?} is not a chord token"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tokens = baseline_weighted_chords(&vocab, length, &mut rng);
            write_token_artifacts(&tokens, Representation::Pianoroll, &args.out_tokens, &args.out_midi)
        }
        other => Err(CliError::Usage(format!(
            "unknown baseline kind {other:?} (expected untrained | weighted)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// analyze

fn parse_filter(spec: &str) -> Result<EmbeddingSelection, CliError> {
    if spec == "single-note" {
        return Ok(EmbeddingSelection::SingleNoteChords);
    }
    if let Some(ticks) = spec.strip_prefix("duration=") {
        let ticks: u32 = ticks
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid duration in filter {spec:?}")))?;
        return Ok(EmbeddingSelection::MessageDuration(ticks));
    }
    Err(CliError::Usage(format!(
        "unknown filter {spec:?} (expected duration=<ticks> | single-note)"
    )))
}

fn load_points(path: &Path) -> Result<Array2<f64>, CliError> {
    let text = String::from_utf8(read_input(path, "points file")?)
        .map_err(|_| CliError::Runtime("points file is not UTF-8".into()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| CliError::Runtime(format!("bad number {tok:?} in points file")))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(CliError::Runtime("points file rows are empty or ragged".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), dim), flat)
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn cmd_analyze(args: AnalyzeArgs, defaults: &Defaults) -> CliResult {
    match args.kind.as_str() {
        "freq" => {
            let vocab_path = args
                .vocab
                .as_deref()
                .ok_or_else(|| CliError::Usage("freq analysis requires --vocab".into()))?;
            let report = frequency_report(&read_vocab(vocab_path)?);
            write_atomic(&args.out_csv, report.to_csv().as_bytes())?;
            println!("Total Tokens   {}", report.total_tokens);
            println!("Unique Tokens  {}", report.unique_tokens);
            println!("wrote frequency report to {}", args.out_csv.display());
            Ok(())
        }
        "tsne" => {
            let mut tsne_config = TsneConfig::default();
            tsne_config.perplexity =
                resolve(args.perplexity, defaults, "perplexity", tsne_config.perplexity)?;
            tsne_config.iterations =
                resolve(args.iterations, defaults, "iterations", tsne_config.iterations)?;
            tsne_config.rng_seed = resolve(args.seed, defaults, "seed", tsne_config.rng_seed)?;

            let points = if let Some(points_path) = &args.points_from {
                let raw = load_points(points_path)?;
                let (coords, _) = tsne(&raw, &tsne_config).map_err(CliError::runtime)?;
                (0..raw.nrows())
                    .map(|i| cadenza_core::analysis::ProjectedPoint {
                        token: format!("p{i}"),
                        pitch: 0,
                        kind: "note",
                        x: coords[[i, 0]],
                        y: coords[[i, 1]],
                    })
                    .collect::<Vec<_>>()
            } else {
                let checkpoint_path = args
                    .checkpoint
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("tsne analysis requires --checkpoint".into()))?;
                let vocab_path = args
                    .vocab
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("tsne analysis requires --vocab".into()))?;
                let filter = args
                    .filter
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("tsne analysis requires --filter".into()))?;
                let selection = parse_filter(filter)?;
                let checkpoint =
                    load_checkpoint(&read_input(checkpoint_path, "checkpoint")?).map_err(CliError::runtime)?;
                let vocab = read_vocab(vocab_path)?;
                project_embeddings(&checkpoint.params, &vocab, selection, &tsne_config)
                    .map_err(CliError::runtime)?
            };

            write_atomic(&args.out_csv, projection_to_csv(&points).as_bytes())?;
            println!("projected {} tokens", points.len());
            println!("wrote projection to {}", args.out_csv.display());
            if let Some(svg_path) = &args.out_svg {
                write_atomic(svg_path, projection_to_svg(&points, 800).as_bytes())?;
                println!("wrote scatter plot to {}", svg_path.display());
            }
            Ok(())
        }
        other => Err(CliError::Usage(format!(
            "unknown analysis kind {other:?} (expected freq | tsne)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// roundtrip (hidden)

fn cmd_roundtrip(args: RoundtripArgs) -> CliResult {
    let entries = fs::read_dir(&args.corpus_dir).map_err(|e| {
        CliError::Usage(format!("cannot read {}: {e}", args.corpus_dir.display()))
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|ext| ext.eq_ignore_ascii_case("mid"))
                .unwrap_or(false)
        })
        .collect();
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no MIDI files found in {}",
            args.corpus_dir.display()
        )));
    }
    files.sort();

    let mut failures = 0usize;
    for path in &files {
        let verdict = fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| parse_midi(&bytes).map_err(|e| e.to_string()))
            .and_then(|file| {
                let original = flatten_tracks(&extract_note_events(&file));
                let rewritten = write_midi(&original, file.ticks_per_beat).map_err(|e| e.to_string())?;
                let reparsed = parse_midi(&rewritten).map_err(|e| e.to_string())?;
                let recovered = flatten_tracks(&extract_note_events(&reparsed));
                let same = original.len() == recovered.len()
                    && original
                        .iter()
                        .zip(&recovered)
                        .all(|(a, b)| (a.kind, a.pitch, a.delta) == (b.kind, b.pitch, b.delta));
                if same {
                    Ok(())
                } else {
                    Err("note events differ after round trip".to_string())
                }
            });
        match verdict {
            Ok(()) => println!("OK    {}", path.display()),
            Err(msg) => {
                println!("FAIL  {}: {msg}", path.display());
                failures += 1;
            }
        }
    }
    if failures > 0 {
        Err(CliError::Runtime(format!(
            "{failures} of {} files failed the round trip",
            files.len()
        )))
    } else {
        println!("all {} files round-trip cleanly", files.len());
        Ok(())
    }
}

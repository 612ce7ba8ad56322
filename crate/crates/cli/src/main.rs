use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptbpe::adaptation::{self, AdaptConfig, AdaptMode};
use adaptbpe::baselines::{self, Method};
use adaptbpe::engine::Encoder;
use adaptbpe::freq_index::FrequencyIndex;
use adaptbpe::io::{self as tio, AdaptedTokenizerFile, LoadedTokenizer, Provenance};
use adaptbpe::merge_model::{MergeKind, MergeTable};
use adaptbpe::metrics::{self, SweepConfig};
use adaptbpe::pretokenize::{histogram_from_paths, Pretokenizer, PretokenizerSpec, WordHistogram};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "adaptbpe",
    version,
    about = "Adapt a pretrained BPE merge list to a corpus under a merge budget"
)]
struct Cli {
    /// Worker threads for corpus counting and sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print reports as a single JSON object on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt a pretrained tokenizer to a corpus.
    Adapt(AdaptArgs),
    /// Build a baseline tokenizer with the same budget.
    Baseline(BaselineArgs),
    /// Tokenize text line by line.
    Tokenize(TokenizeArgs),
    /// Compression utility and fertility of a tokenizer on a corpus.
    Evaluate(EvaluateArgs),
    /// Evaluate methods over a range of budgets.
    Sweep(SweepArgs),
    /// Write the allowed original-vocabulary ids of an adapted tokenizer.
    Mask(MaskArgs),
    /// Write a plain BPE tokenizer.json approximation plus a loss report.
    ExportCompat(ExportArgs),
    /// Run the bundled fixture checks.
    SelfTest(SelfTestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PretokArg {
    FromTokenizer,
    Bytelevel,
    Whitespace,
    Identity,
}

#[derive(Args)]
struct Input {
    /// Pretrained tokenizer.json or .adaptbpe.json file.
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long, value_enum, default_value = "from-tokenizer")]
    pretokenizer: PretokArg,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    input: Input,
    /// Corpus files or directories.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Number of actual merges to keep.
    #[arg(long)]
    budget: usize,
    /// Swap only while min + margin < max; `inf` disables swapping.
    #[arg(long, default_value = "0", value_parser = parse_margin)]
    margin: u64,
    #[arg(long, value_enum, default_value = "fast")]
    mode: ModeArg,
    /// Stop after this many swaps.
    #[arg(long)]
    max_swaps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Swap trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fast,
    Strict,
}

impl From<ModeArg> for AdaptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fast => AdaptMode::Fast,
            ModeArg::Strict => AdaptMode::Strict,
        }
    }
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_parser = parse_baseline)]
    method: Method,
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenFormat {
    Ids,
    Strings,
    Counts,
}

#[derive(Args)]
struct TokenizeArgs {
    #[command(flatten)]
    input: Input,
    /// Pretrained file an adapted tokenizer came from; needed for original ids.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Text file to read (default: stdin).
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "strings")]
    format: TokenFormat,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Measure against Unicode scalar values instead of bytes.
    #[arg(long)]
    chars: bool,
    /// Print a CSV header and row.
    #[arg(long, conflicts_with = "json")]
    csv: bool,
    /// Write unigram counts of the emitted merge tokens as CSV.
    #[arg(long)]
    dump_freqs: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, required = true, num_args = 1..)]
    dev: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    test: Vec<PathBuf>,
    /// `A:B:STEP` (inclusive) or a comma-separated ascending list.
    #[arg(long, value_parser = parse_budgets)]
    budgets: Budgets,
    #[arg(long, value_delimiter = ',', default_value = "adaptbpe,first_k,first_k_pos,top_k", value_parser = parse_method)]
    methods: Vec<Method>,
    #[arg(long, default_value = "0", value_parser = parse_margin)]
    margin: u64,
    #[arg(long, value_enum, default_value = "fast")]
    mode: ModeArg,
    /// Leave the `seconds` column empty.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    /// Adapted (or pretrained) tokenizer.
    #[arg(long)]
    tokenizer: PathBuf,
    /// The pretrained file whose ids the mask refers to.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    input: Input,
    /// Corpus checked for tokenization losses.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SelfTestArgs {
    #[arg(long, default_value_t = 20240607)]
    seed: u64,
}

#[derive(Clone, Debug)]
struct Budgets(Vec<usize>);

fn parse_margin(s: &str) -> Result<u64, String> {
    match s {
        "inf" | "infinity" => Ok(u64::MAX),
        _ => s.parse().map_err(|e| format!("{e}")),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn parse_baseline(s: &str) -> Result<Method, String> {
    match s.parse()? {
        Method::AdaptBpe => Err("adaptbpe is not a baseline; use the adapt command".into()),
        m => Ok(m),
    }
}

fn parse_budgets(s: &str) -> Result<Budgets, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    let list: Vec<usize> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts.as_slice() else {
            return Err("expected A:B:STEP".into());
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step == 0 || a > b {
            return Err("need A <= B and STEP > 0".into());
        }
        (a..=b).step_by(step).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if list.is_empty() || list.windows(2).any(|w| w[0] >= w[1]) {
        return Err("budgets must be non-empty and strictly ascending".into());
    }
    Ok(Budgets(list))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            match e.downcast_ref::<adaptbpe::Error>() {
                Some(lib) if !lib.to_string().starts_with(lib.kind()) => {
                    eprintln!("error: {}: {e:#}", lib.kind())
                }
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Adapt(a) => adapt(a, cli.json),
        Command::Baseline(a) => baseline(a, cli.json),
        Command::Tokenize(a) => tokenize(a),
        Command::Evaluate(a) => evaluate(a, cli.json),
        Command::Sweep(a) => sweep(a, cli.json),
        Command::Mask(a) => mask(a, cli.json),
        Command::ExportCompat(a) => export_compat(a, cli.json),
        Command::SelfTest(a) => Ok(self_test(a, cli.json)),
    }
}

fn load(input: &Input) -> Result<(LoadedTokenizer, PretokenizerSpec)> {
    let tok = tio::load_tokenizer(&input.tokenizer)?;
    let spec = match input.pretokenizer {
        PretokArg::FromTokenizer => tok.pretokenizer.clone(),
        PretokArg::Bytelevel => PretokenizerSpec::gpt2(),
        PretokArg::Whitespace => PretokenizerSpec::Whitespace,
        PretokArg::Identity => PretokenizerSpec::Identity,
    };
    Ok((tok, spec))
}

fn load_pretrained_input(input: &Input) -> Result<(LoadedTokenizer, PretokenizerSpec)> {
    let (tok, spec) = load(input)?;
    if tok.adapted.is_some() {
        bail!(
            "{} is an adapted tokenizer; adapt and baseline start from a pretrained file",
            input.tokenizer.display()
        );
    }
    Ok((tok, spec))
}

fn corpus(paths: &[PathBuf], spec: &PretokenizerSpec) -> Result<WordHistogram> {
    let hist = histogram_from_paths(paths, spec)?;
    log::info!(
        "corpus: {} unique pre-tokens, {} occurrences, {} base symbols",
        hist.len(),
        hist.word_count(),
        hist.total_base_symbols()
    );
    Ok(hist)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f =
        File::create(path).with_context(|| format!("IoError: cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn emit(json: bool, value: serde_json::Value, text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    if json {
        writeln!(out, "{}", serde_json::to_string(&value)?)?;
    } else {
        write!(out, "{text}")?;
    }
    Ok(())
}

fn adapt(a: &AdaptArgs, json: bool) -> Result<ExitCode> {
    let (tok, spec) = load_pretrained_input(&a.input)?;
    let hist = corpus(&a.corpus, &spec)?;
    let config = AdaptConfig {
        budget: a.budget,
        margin: a.margin,
        mode: a.mode.into(),
        max_swaps: a.max_swaps,
    };
    let r = adaptation::adapt(&tok.table, &hist, config)?;
    let file = AdaptedTokenizerFile::new(
        &r.table,
        &spec,
        Provenance {
            source_digest: tok.source_digest().to_string(),
            method: Method::AdaptBpe,
            budget: a.budget,
            margin: Some(a.margin),
            mode: Some(config.mode),
            swaps: r.swap_trace.len(),
            tool_version: tio::TOOL_VERSION.to_string(),
        },
    )?;
    tio::save_adapted(&a.out, &file)?;
    if let Some(path) = &a.trace {
        let mut w = create(path)?;
        adaptation::write_trace_csv(&r.swap_trace, &mut w)?;
        w.flush()?;
    }
    emit(
        json,
        json!({
            "swaps": r.swap_trace.len(),
            "stop": r.stop,
            "initial_tokens": r.initial_token_total,
            "incremental_tokens": r.incremental_token_total,
            "canonical_tokens": r.canonical_token_total,
            "merge_depth": r.merge_depth,
            "actual_merges": r.table.actual_count(),
            "active_merges": r.table.len(),
        }),
        &format!(
            "swaps: {} (stopped: {})\ntokens: {} -> {} incremental, {} canonical\nmerge depth: {}\n",
            r.swap_trace.len(),
            r.stop,
            r.initial_token_total,
            r.incremental_token_total,
            r.canonical_token_total,
            r.merge_depth.map_or("-".to_string(), |d| d.to_string()),
        ),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn baseline(a: &BaselineArgs, json: bool) -> Result<ExitCode> {
    let (tok, spec) = load_pretrained_input(&a.input)?;
    let hist = corpus(&a.corpus, &spec)?;
    let table = match a.method {
        Method::FirstK => baselines::first_k(&tok.table, a.budget)?,
        Method::FirstKPositive => baselines::first_k_positive(&tok.table, &hist, a.budget)?,
        Method::TopK => baselines::top_k(&tok.table, &hist, a.budget)?,
        Method::AdaptBpe => unreachable!("rejected by the argument parser"),
    };
    let file = AdaptedTokenizerFile::new(
        &table,
        &spec,
        Provenance {
            source_digest: tok.source_digest().to_string(),
            method: a.method,
            budget: a.budget,
            margin: None,
            mode: None,
            swaps: 0,
            tool_version: tio::TOOL_VERSION.to_string(),
        },
    )?;
    tio::save_adapted(&a.out, &file)?;
    let report = metrics::evaluate(&table, &hist)?;
    emit(
        json,
        serde_json::to_value(&report)?,
        &format!(
            "{}: {} tokens, cu {:.6}\n",
            a.method, report.token_total, report.cu
        ),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn tokenize(a: &TokenizeArgs) -> Result<ExitCode> {
    let (tok, spec) = load(&a.input)?;
    let source = a.source.as_deref().map(tio::load_pretrained).transpose()?;
    if let Some(src) = &source {
        tio::check_digest(tok.source_digest(), &src.digest)?;
    }
    let vocab = source.as_ref().map(|s| &s.vocab).or(tok.vocab.as_ref());
    if matches!(a.format, TokenFormat::Ids) && vocab.is_none() {
        log::warn!(
            "no --source given: printing ids of the adapted table, not of the original vocabulary"
        );
    }
    let mut text = Vec::new();
    match &a.text {
        Some(p) => text = std::fs::read(p).with_context(|| format!("IoError: {}", p.display()))?,
        None => {
            io::stdin().read_to_end(&mut text)?;
        }
    }
    let pretok = Pretokenizer::new(spec)?;
    let encoder = Encoder::new(&tok.table);
    let mut out = BufWriter::new(io::stdout().lock());
    let text = text.strip_suffix(b"\n").unwrap_or(&text);
    for line in text.split(|&b| b == b'\n') {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let mut tokens = Vec::new();
        for piece in pretok.split(line) {
            tokens.extend(encoder.encode_word(&piece)?);
        }
        match a.format {
            TokenFormat::Counts => writeln!(out, "{}", tokens.len())?,
            TokenFormat::Strings => {
                let s: Vec<String> = tokens
                    .iter()
                    .map(|&t| String::from_utf8_lossy(tok.table.symbol_bytes(t)).into_owned())
                    .collect();
                writeln!(out, "{}", s.join(" "))?;
            }
            TokenFormat::Ids => {
                let ids = tokens
                    .iter()
                    .map(|&t| match vocab {
                        Some(v) => {
                            let s = String::from_utf8_lossy(tok.table.symbol_bytes(t)).into_owned();
                            v.get(&s).ok_or(adaptbpe::Error::UnknownToken(s))
                        }
                        None => Ok(t),
                    })
                    .map(|r| r.map(|id| id.to_string()))
                    .collect::<Result<Vec<_>, _>>()?;
                writeln!(out, "{}", ids.join(" "))?;
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn evaluate(a: &EvaluateArgs, json: bool) -> Result<ExitCode> {
    let (tok, spec) = load(&a.input)?;
    let hist = corpus(&a.corpus, &spec)?;
    let report = if a.chars {
        let pretok = Pretokenizer::new(spec)?;
        metrics::evaluate_against(&tok.table, &hist, metrics::char_count(&hist, &pretok))?
    } else {
        metrics::evaluate(&tok.table, &hist)?
    };
    if let Some(path) = &a.dump_freqs {
        dump_freqs(&tok.table, &hist, path)?;
    }
    let depth = report.merge_depth.map_or(String::new(), |d| d.to_string());
    let text = if a.csv {
        format!(
            "cu,fertility,base_symbols,token_total,word_count,merge_depth,actual_count\n{:.6},{:.6},{},{},{},{},{}\n",
            report.cu, report.fertility, report.base_symbols, report.token_total, report.word_count, depth, report.actual_count
        )
    } else {
        format!(
            "cu: {:.6}\nfertility: {:.6}\nbase symbols: {}\ntokens: {}\nwords: {}\nmerge depth: {}\nactual merges: {}\n",
            report.cu, report.fertility, report.base_symbols, report.token_total, report.word_count, depth, report.actual_count
        )
    };
    emit(json, serde_json::to_value(&report)?, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn dump_freqs(table: &MergeTable, hist: &WordHistogram, path: &Path) -> Result<()> {
    let corpus = Encoder::new(table).tokenize_corpus(hist)?;
    let actual: Vec<usize> = table
        .rules()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == MergeKind::Actual)
        .map(|(i, _)| i)
        .collect();
    let index = FrequencyIndex::build(&corpus, table, &actual, &[]);
    let mut w = create(path)?;
    index.write_csv(table, &mut w)?;
    w.flush()?;
    Ok(())
}

fn sweep(a: &SweepArgs, json: bool) -> Result<ExitCode> {
    let (tok, spec) = load_pretrained_input(&a.input)?;
    let dev = corpus(&a.dev, &spec)?;
    let test = if a.test.is_empty() {
        None
    } else {
        Some(corpus(&a.test, &spec)?)
    };
    let config = SweepConfig {
        margin: a.margin,
        mode: a.mode.into(),
    };
    let records = metrics::sweep(
        &tok.table,
        &dev,
        test.as_ref(),
        &a.budgets.0,
        &a.methods,
        config,
    )?;
    let mut w = create(&a.out)?;
    metrics::write_sweep_csv(&records, &mut w, !a.no_timing)?;
    w.flush()?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&format!(
            "{} {}: dev {} tokens, cu {:.6}\n",
            r.method, r.budget, r.dev_tokens, r.cu
        ));
    }
    emit(json, json!({ "records": records }), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn mask(a: &MaskArgs, json: bool) -> Result<ExitCode> {
    let tok = tio::load_tokenizer(&a.tokenizer)?;
    let (vocab, digest) = match (&a.source, tok.vocab) {
        (Some(src), _) => {
            let src = tio::load_pretrained(src)?;
            tio::check_digest(
                tok.adapted
                    .as_ref()
                    .map_or(&tok.digest, |f| &f.provenance.source_digest),
                &src.digest,
            )?;
            (src.vocab, src.digest)
        }
        (None, Some(v)) => (v, tok.digest.clone()),
        (None, None) => bail!("an adapted tokenizer needs --source to resolve original ids"),
    };
    let m = tio::build_mask(&tok.table, &vocab, &digest)?;
    tio::write_json(&a.out, &m)?;
    emit(
        json,
        json!({ "count": m.count, "source_digest": m.source_digest }),
        &format!("{} allowed ids\n", m.count),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn export_compat(a: &ExportArgs, json: bool) -> Result<ExitCode> {
    let (tok, spec) = load(&a.input)?;
    let hist = corpus(&a.corpus, &spec)?;
    let out = tio::export_compat(&tok.table, &spec, &hist)?;
    tio::write_json(&a.out, &out.tokenizer)?;
    tio::write_json(&a.report, &out.report)?;
    if !out.report.lossless {
        log::warn!(
            "plain export is lossy: {} merges dropped, {} words ({} occurrences) tokenize differently",
            out.report.dropped_merges.len(),
            out.report.divergent_words.len(),
            out.report.divergent_occurrences
        );
    }
    emit(
        json,
        json!({
            "lossless": out.report.lossless,
            "dropped_merges": out.report.dropped_merges.len(),
            "divergent_words": out.report.divergent_words.len(),
            "divergent_occurrences": out.report.divergent_occurrences,
        }),
        &format!(
            "lossless: {}\ndropped merges: {}\ndivergent words: {}\n",
            out.report.lossless,
            out.report.dropped_merges.len(),
            out.report.divergent_words.len()
        ),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn self_test(a: &SelfTestArgs, json: bool) -> ExitCode {
    let outcomes = adaptbpe::selftest::run(a.seed);
    let ok = outcomes.iter().all(|c| c.passed);
    if json {
        println!("{}", json!({ "passed": ok, "checks": outcomes }));
    } else {
        for c in &outcomes {
            println!(
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

//! Command-line front end. Every stage reads and writes plain files so any
//! stage can be replaced by an external tool.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::embedding::{self, Embedding, EmbeddingError, TrainParams};
use crate::format::FormatError;
use crate::handlers::{self, ErrorHandler, HandlerError};
use crate::ir::{self, IrError, Program};
use crate::lpds::{self, Lpds, LpdsError};
use crate::mining::{self, MiningError, SpecsReport};
use crate::synonyms::{self, Clustering, GoldStandard, KMeansParams, Partition, SynonymError};
use crate::walker::{self, CorpusParams, WalkError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_RANGE: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    Io(PathBuf, std::io::Error),
    Parse(String),
    Range(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(..) => EXIT_IO,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Range(_) => EXIT_RANGE,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
            CliError::Parse(m) | CliError::Range(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<IrError> for CliError {
    fn from(e: IrError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<LpdsError> for CliError {
    fn from(e: LpdsError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<WalkError> for CliError {
    fn from(e: WalkError) -> Self {
        match e {
            WalkError::ZeroGamma => CliError::Range(e.to_string()),
            WalkError::NoOccurrence(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::InvalidParameter(_) => CliError::Range(e.to_string()),
            EmbeddingError::Format(_) => CliError::Parse(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<SynonymError> for CliError {
    fn from(e: SynonymError) -> Self {
        match e {
            SynonymError::InvalidK { .. } => CliError::Range(e.to_string()),
            SynonymError::InconsistentGold(..) | SynonymError::Format(_) => {
                CliError::Parse(e.to_string())
            }
            SynonymError::NoFunctions => CliError::Other(e.to_string()),
        }
    }
}

impl From<HandlerError> for CliError {
    fn from(e: HandlerError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::ZeroSupport => CliError::Range(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Parse(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "synspec",
    version,
    about = "Function synonyms and error-handling specifications from program encodings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct WalkArgs {
    /// Walks per label.
    #[arg(long, default_value_t = 50)]
    gamma: usize,
    /// Maximum steps per walk after the start rule.
    #[arg(long, default_value_t = 50)]
    walk_length: usize,
}

#[derive(Debug, Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Sequential, reproducible training. `--deterministic false` with
    /// several workers trains in parallel.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    deterministic: bool,
}

#[derive(Debug, Args, Clone)]
struct ClusterArgs {
    /// Number of clusters; defaults to the number of gold classes, or one
    /// cluster per function without a gold file.
    #[arg(long)]
    k_clusters: Option<usize>,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
}

#[derive(Debug, Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a program as a labeled pushdown system and dump its rules.
    Encode {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the random-walk corpus of a program.
    Walk {
        #[arg(long)]
        program: PathBuf,
        #[command(flatten)]
        walk: WalkArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train label vectors on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nearest neighbours of a label, or an analogy `a : b :: c : ?`.
    Query {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long, conflicts_with = "analogy", required_unless_present = "analogy")]
        nearest: Option<String>,
        #[arg(long, num_args = 3, value_names = ["A", "B", "C"])]
        analogy: Option<Vec<String>>,
        #[arg(short = 'n', long, default_value_t = 10)]
        top: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster function vectors and derive the partition function.
    Cluster {
        #[arg(long)]
        vectors: PathBuf,
        /// Program whose function labels are clustered.
        #[arg(long, required_unless_present = "gold")]
        program: Option<PathBuf>,
        /// Gold file; restricts clustering to the functions it mentions.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        partition_out: Option<PathBuf>,
    },
    /// Score a clustering against a gold standard.
    EvalGold {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Locate error handlers and their context and response sets.
    Handlers {
        #[arg(long)]
        program: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mine ranked specifications from a handlers file.
    Mine {
        #[arg(long)]
        handlers: PathBuf,
        #[arg(long, conflicts_with = "identity_partition")]
        partition: Option<PathBuf>,
        #[arg(long)]
        identity_partition: bool,
        #[arg(long, default_value_t = 5)]
        min_support: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        transactions_out: Option<PathBuf>,
    },
    /// Report handlers that violate mined specifications.
    Check {
        /// Specs report in JSON form.
        #[arg(long)]
        specs: PathBuf,
        #[arg(long, required_unless_present = "program", conflicts_with = "program")]
        handlers: Option<PathBuf>,
        #[arg(long)]
        program: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write all artifacts into a directory.
    Pipeline {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        walk: WalkArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        min_support: usize,
        /// Mine with every function in its own class.
        #[arg(long)]
        identity_partition: bool,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn emit(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(PathBuf::from("<stdout>"), e)),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn at_least(name: &str, value: usize, min: usize) -> Result<(), CliError> {
    if value < min {
        return Err(CliError::Range(format!(
            "--{name} must be at least {min}, got {value}"
        )));
    }
    Ok(())
}

fn load_program(path: &Path, stderr: &mut dyn Write) -> Result<Program, CliError> {
    let p = ir::parse_program(&read(path)?)?;
    let diags = ir::validate(&p);
    if ir::has_errors(&diags) {
        return Err(IrError::Invalid(diags).into());
    }
    for d in diags {
        let _ = writeln!(stderr, "{d}");
    }
    Ok(p)
}

fn load_gold(path: &Path) -> Result<GoldStandard, CliError> {
    let g = GoldStandard::parse(&read(path)?)?;
    g.check_consistency()?;
    Ok(g)
}

fn load_handlers(path: &Path) -> Result<Vec<ErrorHandler>, CliError> {
    Ok(handlers::handlers_from_json(&read(path)?)?)
}

fn check_walk(w: &WalkArgs, c: &Common) -> Result<(), CliError> {
    at_least("gamma", w.gamma, 1)?;
    at_least("workers", c.workers, 1)
}

fn train_params(
    t: &TrainArgs,
    c: &Common,
    stderr: &mut dyn Write,
) -> Result<TrainParams, CliError> {
    at_least("dim", t.dim, 1)?;
    at_least("window", t.window, 1)?;
    at_least("epochs", t.epochs, 1)?;
    at_least("negatives", t.negatives, 1)?;
    at_least("min-count", t.min_count as usize, 1)?;
    at_least("workers", c.workers, 1)?;
    let workers = if t.deterministic { 1 } else { c.workers };
    if workers > 1 {
        let _ = writeln!(
            stderr,
            "warning: parallel training with {workers} workers is not reproducible"
        );
    }
    Ok(TrainParams {
        dim: t.dim,
        window: t.window,
        epochs: t.epochs,
        negatives: t.negatives,
        min_count: t.min_count,
        seed: c.seed,
        workers,
        ..TrainParams::default()
    })
}

fn corpus_text(
    lpds: &Lpds,
    p: &Program,
    w: &WalkArgs,
    c: &Common,
    stderr: &mut dyn Write,
) -> Result<String, CliError> {
    check_walk(w, c)?;
    for unused in walker::unused_labels(p, lpds) {
        let _ = writeln!(
            stderr,
            "warning: label `{unused}` occurs in no rule and gets no walks"
        );
    }
    let params = CorpusParams {
        gamma: w.gamma,
        walk_length: w.walk_length,
        seed: c.seed,
    };
    Ok(walker::generate_corpus(lpds, params, c.workers)?.to_text(lpds))
}

fn cluster_stage(
    e: &Embedding,
    candidates: &BTreeSet<String>,
    gold: Option<&GoldStandard>,
    args: &ClusterArgs,
    c: &Common,
    stderr: &mut dyn Write,
) -> Result<Clustering, CliError> {
    at_least("max-iters", args.max_iters, 1)?;
    let present: BTreeSet<String> = candidates
        .iter()
        .filter(|f| e.contains(f))
        .cloned()
        .collect();
    let missing = candidates.len() - present.len();
    if missing > 0 {
        let _ = writeln!(
            stderr,
            "warning: {missing} function(s) have no vector and are left unclustered"
        );
    }
    if present.is_empty() {
        return Err(SynonymError::NoFunctions.into());
    }
    let k = match (args.k_clusters, gold) {
        (Some(k), _) => k,
        (None, Some(g)) => g.classes().len(),
        (None, None) => present.len(),
    };
    at_least("k-clusters", k, 1)?;
    let params = KMeansParams {
        k,
        max_iters: args.max_iters,
        seed: c.seed,
        ..KMeansParams::default()
    };
    Ok(synonyms::kmeans(e, &present, params)?)
}

fn render_neighbors(rows: &[(String, f64)], format: Format) -> String {
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                label: &'a str,
                cosine: f64,
            }
            json(
                &rows
                    .iter()
                    .map(|(l, c)| Row {
                        label: l,
                        cosine: *c,
                    })
                    .collect::<Vec<_>>(),
            )
        }
        Format::Text => rows.iter().map(|(l, c)| format!("{c:.6}\t{l}\n")).collect(),
    }
}

fn specs_report(report: &SpecsReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
    }
}

fn run_command(
    cmd: Command,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    match cmd {
        Command::Encode { program, out } => {
            let p = load_program(&program, stderr)?;
            emit(&out, &lpds::encode(&p)?.dump(), stdout)
        }
        Command::Walk {
            program,
            walk,
            common,
            out,
        } => {
            let p = load_program(&program, stderr)?;
            let l = lpds::encode(&p)?;
            let text = corpus_text(&l, &p, &walk, &common, stderr)?;
            emit(&out, &text, stdout)
        }
        Command::Train {
            corpus,
            train,
            common,
            out,
        } => {
            let params = train_params(&train, &common, stderr)?;
            let sentences = walker::parse_corpus(&read(&corpus)?);
            let e = embedding::train(&sentences, params)?;
            emit(&out, &e.to_text(), stdout)
        }
        Command::Query {
            vectors,
            nearest,
            analogy,
            top,
            format,
            out,
        } => {
            at_least("top", top, 1)?;
            let e = Embedding::from_text(&read(&vectors)?)?;
            let rows = match (nearest, analogy) {
                (Some(q), _) => e.nearest(&q, top)?,
                (None, Some(abc)) => e.analogy(&abc[0], &abc[1], &abc[2], top)?,
                (None, None) => unreachable!("clap requires one query"),
            };
            emit(&out, &render_neighbors(&rows, format), stdout)
        }
        Command::Cluster {
            vectors,
            program,
            gold,
            cluster,
            common,
            out,
            partition_out,
        } => {
            let e = Embedding::from_text(&read(&vectors)?)?;
            let gold = gold.as_deref().map(load_gold).transpose()?;
            let candidates = match (&gold, &program) {
                (Some(g), _) => g.functions(),
                (None, Some(p)) => lpds::encode(&load_program(p, stderr)?)?.function_labels(),
                (None, None) => unreachable!("clap requires a program or gold file"),
            };
            let c = cluster_stage(&e, &candidates, gold.as_ref(), &cluster, &common, stderr)?;
            if let Some(path) = partition_out {
                write_file(&path, &Partition::from_clustering(&c).to_text())?;
            }
            emit(&out, &c.to_text(), stdout)
        }
        Command::EvalGold {
            clusters,
            gold,
            format,
            out,
        } => {
            let c = Clustering::from_text(&read(&clusters)?)?;
            let g = load_gold(&gold)?;
            let m = synonyms::evaluate_gold(&c, &g)?;
            let text = match format {
                Format::Json => json(&m),
                Format::Text => m.to_text(),
            };
            emit(&out, &text, stdout)
        }
        Command::Handlers {
            program,
            format,
            out,
        } => {
            let hs = handlers::analyze(&load_program(&program, stderr)?)?;
            let text = match format {
                Format::Json => handlers::handlers_to_json(&hs),
                Format::Text => handlers::handlers_to_text(&hs),
            };
            emit(&out, &text, stdout)
        }
        Command::Mine {
            handlers,
            partition,
            identity_partition: _,
            min_support,
            format,
            out,
            transactions_out,
        } => {
            at_least("min-support", min_support, 1)?;
            let hs = load_handlers(&handlers)?;
            let part = match partition {
                Some(path) => Partition::from_text(&read(&path)?)?,
                None => Partition::identity(),
            };
            if let Some(path) = transactions_out {
                write_file(
                    &path,
                    &mining::transactions_to_text(&mining::build_transactions(&hs, &part)),
                )?;
            }
            let report = SpecsReport {
                min_support,
                specs: mining::mine_specs(&hs, &part, min_support)?,
            };
            emit(&out, &specs_report(&report, format), stdout)
        }
        Command::Check {
            specs,
            handlers,
            program,
            format,
            out,
        } => {
            let report = SpecsReport::from_json(&read(&specs)?)?;
            let hs = match (handlers, program) {
                (Some(h), _) => load_handlers(&h)?,
                (None, Some(p)) => handlers::analyze(&load_program(&p, stderr)?)?,
                (None, None) => unreachable!("clap requires handlers or a program"),
            };
            let vs = mining::find_violations(&report.specs, &hs);
            let text = match format {
                Format::Json => mining::violations_to_json(&vs),
                Format::Text => mining::violations_to_text(&vs),
            };
            emit(&out, &text, stdout)
        }
        Command::Pipeline {
            program,
            gold,
            out_dir,
            walk,
            train,
            cluster,
            common,
            min_support,
            identity_partition,
        } => {
            at_least("min-support", min_support, 1)?;
            let params = train_params(&train, &common, stderr)?;
            check_walk(&walk, &common)?;
            at_least("max-iters", cluster.max_iters, 1)?;
            let p = load_program(&program, stderr)?;
            let gold = gold.as_deref().map(load_gold).transpose()?;
            fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(out_dir.clone(), e))?;
            let path = |name: &str| out_dir.join(name);

            let l = lpds::encode(&p)?;
            write_file(&path("rules.txt"), &l.dump())?;
            let corpus = corpus_text(&l, &p, &walk, &common, stderr)?;
            write_file(&path("corpus.txt"), &corpus)?;
            let e = embedding::train(&walker::parse_corpus(&corpus), params)?;
            let vectors = e.to_text();
            write_file(&path("vectors.txt"), &vectors)?;
            // Continue from the file form so the result matches the
            // stage-by-stage run exactly.
            let e = Embedding::from_text(&vectors)?;
            let candidates = match &gold {
                Some(g) => g.functions(),
                None => l.function_labels(),
            };
            let clustering =
                cluster_stage(&e, &candidates, gold.as_ref(), &cluster, &common, stderr)?;
            write_file(&path("clusters.tsv"), &clustering.to_text())?;
            let clustered = Partition::from_clustering(&clustering);
            write_file(&path("partition.tsv"), &clustered.to_text())?;
            if let Some(g) = &gold {
                let m = synonyms::evaluate_gold(&Clustering::from_text(&clustering.to_text())?, g)?;
                write_file(&path("metrics.txt"), &m.to_text())?;
                write_file(&path("metrics.json"), &json(&m))?;
            }

            let hs = handlers::analyze(&p)?;
            write_file(&path("handlers.json"), &handlers::handlers_to_json(&hs))?;
            let part = if identity_partition {
                Partition::identity()
            } else {
                clustered
            };
            write_file(
                &path("transactions.txt"),
                &mining::transactions_to_text(&mining::build_transactions(&hs, &part)),
            )?;
            let report = SpecsReport {
                min_support,
                specs: mining::mine_specs(&hs, &part, min_support)?,
            };
            write_file(&path("specs.txt"), &report.to_text())?;
            write_file(&path("specs.json"), &report.to_json())?;
            let vs = mining::find_violations(&report.specs, &hs);
            write_file(&path("violations.txt"), &mining::violations_to_text(&vs))?;
            write_file(&path("violations.json"), &mining::violations_to_json(&vs))?;
            let _ = writeln!(
                stdout,
                "{} rules, {} walks, {} vectors, {} handlers, {} specifications, {} violations",
                l.rules().len(),
                corpus.lines().count() - 1,
                e.vocab().len(),
                hs.len(),
                report.specs.len(),
                vs.len()
            );
            Ok(())
        }
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render();
            if code == 0 {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match run_command(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("synspec").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_capture(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["encode"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn missing_file_exits_3() {
        let (code, _, err) = run_capture(&["encode", "--program", "/nonexistent/p.json"]);
        assert_eq!(code, EXIT_IO);
        assert!(err.contains("/nonexistent/p.json"));
    }

    #[test]
    fn deterministic_flag_forms() {
        for args in [
            vec!["synspec", "train", "--corpus", "c"],
            vec!["synspec", "train", "--corpus", "c", "--deterministic"],
            vec![
                "synspec",
                "train",
                "--corpus",
                "c",
                "--deterministic",
                "false",
            ],
        ] {
            let cli = Cli::try_parse_from(&args).unwrap();
            let Command::Train { train, .. } = cli.command else {
                panic!()
            };
            assert_eq!(train.deterministic, args.len() != 6);
        }
    }
}

//! `gefl`: ingest corpora, select labeled features, train, evaluate and run
//! cross-validated sweeps.
//!
//! Standard output carries `key=value` lines only; diagnostics go to standard
//! error. Exit codes: 0 success, 2 input or configuration error, 3 too little
//! knowledge (pool underflow, no labeled features), 4 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gefl_core::config::{FeatureSource, RunConfig};
use gefl_core::corpus::{self, Corpus};
use gefl_core::experiments::{self, ExperimentSpec, TrainOptions};
use gefl_core::knowledge::{self, FeatureRole, LabeledFeatureSet, ReferenceDistribution};
use gefl_core::lda::{self, LdaModel};
use gefl_core::model::ModelParameters;
use gefl_core::objective::RegularizationConfig;
use gefl_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gefl", version, about = "Text classification from labeled features")]
struct Cli {
    /// `key = value` run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a TSV file or class-per-directory tree into a corpus file.
    Ingest(IngestArgs),
    /// Build a feature pool and draw labeled and neutral features.
    Select(SelectArgs),
    /// Train a classifier from a corpus and a knowledge file.
    Train(TrainArgs),
    /// Print the accuracy of a model on a labeled corpus.
    Eval(EvalArgs),
    /// Run a cross-validated experiment spec and write result CSVs.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    stopwords: Option<String>,
    #[arg(long)]
    min_count: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// info-gain or lda
    #[arg(long)]
    method: Option<String>,
    /// Pool size per class (per topic for lda).
    #[arg(long)]
    pool: Option<String>,
    /// Labeled features per class, e.g. `10` or `10,1`.
    #[arg(long)]
    per_class: Option<String>,
    #[arg(long)]
    neutral: Option<String>,
    #[arg(long)]
    topics: Option<String>,
    #[arg(long)]
    lda_iterations: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    knowledge: PathBuf,
    /// ge-fl, neutral, max-entropy or kl
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Class weights for the kl method, e.g. `2,1`; defaults to the corpus labels.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    max_iterations: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a gnuplot script for the plot tables.
    #[arg(long)]
    gnuplot: bool,
    /// Override a spec value, e.g. `--set repetitions=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run_config(path: Option<&Path>, flags: &[(&str, &Option<String>)]) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn provenance(config: &RunConfig, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut p: Vec<(String, String)> = extra.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    p.extend(config.pairs());
    p
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn with_header(provenance: &[(String, String)], body: &str) -> String {
    let mut out = String::new();
    for (k, v) in provenance {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(body);
    out
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn ingest(args: &IngestArgs, config: Option<&Path>) -> Result<()> {
    let config = run_config(config, &[("stopwords", &args.stopwords), ("min_count", &args.min_count)])?;
    let stopwords = match &config.stopwords {
        Some(p) => corpus::read_stopwords(p)?,
        None => corpus::default_stopwords(),
    };
    let corpus = corpus::ingest(&args.input, &stopwords, config.min_count)?;
    let prov = provenance(&config, &[("input", args.input.display().to_string())]);
    corpus.save(&args.out, &prov)?;
    println!(
        "docs={} vocab={} classes={} min_count={}",
        corpus.len(),
        corpus.n_features(),
        corpus.classes().join(","),
        config.min_count
    );
    Ok(())
}

fn select(args: &SelectArgs, config: Option<&Path>) -> Result<()> {
    let config = run_config(
        config,
        &[
            ("feature_source", &args.method),
            ("pool", &args.pool),
            ("per_class", &args.per_class),
            ("neutral", &args.neutral),
            ("lda_topics", &args.topics),
            ("lda_iterations", &args.lda_iterations),
            ("seed", &args.seed),
        ],
    )?;
    let corpus = Corpus::load(&args.corpus)?;
    let counts = config.per_class_counts(corpus.n_classes())?;
    let prov = provenance(&config, &[("corpus", args.corpus.display().to_string())]);
    let pool = match config.feature_source {
        FeatureSource::InfoGain => knowledge::info_gain_pool(&corpus, config.pool)?,
        FeatureSource::Lda => {
            let model = LdaModel::fit(&corpus, &config.lda())?;
            let selected = lda::lda_feature_pool(&model, &corpus, config.pool)?;
            for c in &selected.unmapped_classes {
                eprintln!("warning: no topic maps to class {}", corpus.classes()[*c]);
            }
            let topics = sibling(&args.out, ".topics");
            write(&topics, &with_header(&prov, &model.top_words_tsv(&corpus, config.pool)))?;
            selected.pool
        }
        FeatureSource::File => {
            return Err(Error::Config("select builds a pool with info-gain or lda".into()));
        }
    };
    for c in pool.underfilled() {
        eprintln!(
            "warning: pool for class {} has {} of {} features",
            corpus.classes()[c],
            pool.class(c).len(),
            pool.requested()
        );
    }
    let labeled = knowledge::draw_labeled(&pool, &counts, config.seed)?;
    let neutral = if config.neutral > 0 {
        knowledge::neutral_features(&corpus, config.neutral.min(corpus.n_features()))?
    } else {
        LabeledFeatureSet::empty(FeatureRole::Neutral)
    };
    write(&args.out, &knowledge::knowledge_to_text(&corpus, &labeled, &neutral, &prov))?;
    write(&sibling(&args.out, ".pool"), &with_header(&prov, &pool.to_tsv(&corpus)))?;
    println!(
        "labeled={} neutral={} pool={}",
        labeled.len(),
        neutral.len(),
        (0..pool.n_classes()).map(|c| pool.class(c).len().to_string()).collect::<Vec<_>>().join(",")
    );
    Ok(())
}

fn train(args: &TrainArgs, config: Option<&Path>) -> Result<()> {
    let config = run_config(
        config,
        &[
            ("method", &args.method),
            ("beta", &args.beta),
            ("sigma", &args.sigma),
            ("reference", &args.reference),
            ("max_iterations", &args.max_iterations),
        ],
    )?;
    let corpus = Corpus::load(&args.corpus)?;
    let (labeled, neutral) = knowledge::load_knowledge(&corpus, &args.knowledge)?;
    let reference = if config.reference.is_empty() {
        ReferenceDistribution::new(corpus.label_distribution())?
    } else {
        ReferenceDistribution::from_weights(&config.reference)?
    };
    let regularization = RegularizationConfig {
        method: config.method,
        beta: config.beta,
        reference: Some(reference),
        neutral: Some(neutral),
    };
    let options = TrainOptions {
        sigma: config.sigma,
        optimizer: config.optimizer(),
        policy: config.absent_features,
    };
    let trained = experiments::train(&corpus, &labeled, &regularization, &options)?;
    for k in &trained.skipped {
        eprintln!("warning: feature {:?} does not occur in the corpus", corpus.vocabulary().term(*k));
    }
    let trace = &trained.trace;
    let summary = [
        ("labeled", labeled.len().to_string()),
        ("lambda", (config.beta * labeled.len() as f64).to_string()),
        ("iterations", trace.iterations.to_string()),
        ("evaluations", trace.evaluations.to_string()),
        ("objective", trace.final_objective.to_string()),
        ("gradient_norm", trace.final_gradient_norm.to_string()),
        ("termination", trace.termination.to_string()),
    ];
    let mut prov = provenance(
        &config,
        &[
            ("corpus", args.corpus.display().to_string()),
            ("knowledge", args.knowledge.display().to_string()),
        ],
    );
    prov.extend(summary.iter().map(|(k, v)| (k.to_string(), v.clone())));
    trained.params.save(&args.out, corpus.classes(), &prov)?;
    let line: Vec<String> = summary.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{}", line.join(" "));
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (params, classes) = ModelParameters::load(&args.model)?;
    let corpus = Corpus::load(&args.corpus)?;
    if classes != corpus.classes() || params.n_features() != corpus.n_features() {
        return Err(Error::Input(format!(
            "model ({} classes, {} features) does not match corpus ({} classes, {} features)",
            classes.len(),
            params.n_features(),
            corpus.n_classes(),
            corpus.n_features()
        )));
    }
    println!("accuracy={}", experiments::accuracy(&params, &corpus)?);
    Ok(())
}

fn sweep(args: &SweepArgs, config: Option<&Path>) -> Result<()> {
    let mut text = match config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => String::new(),
    };
    text.push('\n');
    text.push_str(&fs::read_to_string(&args.spec).map_err(|e| Error::Io {
        path: args.spec.clone(),
        source: e,
    })?);
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        let _ = write!(text, "\n{} = {}", k.trim(), v.trim());
    }
    let base = args.spec.parent().unwrap_or(Path::new("."));
    let spec = ExperimentSpec::from_text(&text, base)?;
    let table = experiments::run(&spec)?;
    for (i, s) in table.settings.iter().enumerate() {
        for &m in &table.methods {
            let accs = table.accuracies(i, m);
            println!(
                "setting={} method={m} mean={:.4} folds={}",
                s.label(),
                table.mean_accuracy(i, m),
                accs.len()
            );
        }
    }
    let failed = table.rows.iter().flat_map(|r| &r.folds).filter(|f| f.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} fold runs failed; see the diagnostics CSV");
    }
    let files = table.write_all(&args.out, args.gnuplot)?;
    println!("rows={} files={}", table.rows.len(), files.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a, config),
        Command::Select(a) => select(a, config),
        Command::Train(a) => train(a, config),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `cpt` command-line front-end.
//!
//! Results go to stdout or `--out`; progress and timings go to stderr. Exit
//! codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::baselines::{run_type1_study, NullGenerator, Type1StudyConfig};
use crate::classifiers::ClassifierSpec;
use crate::dataset::{load_csv, Dataset, LoadOptions};
use crate::error::CptError;
use crate::perm::{exact_cpt_result, null_distribution_report, run_cpt, PermutationPlan, PermuteMode, TieBreak};
use crate::sim::{roc_points, run_power_study, write_roc_csv, RocCurve, SimulationConfig};
use crate::stats::{Partitions, StatSpec};
use crate::suite::{parse_test_list, TestSpec};

#[derive(Debug, Parser)]
#[command(name = "cpt", version, about = "Classification permutation test for covariate balance")]
pub struct Cli {
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// Suppress progress messages on stderr
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Permutation test on a CSV dataset
    Test(TestArgs),
    /// Exact permutation test by full enumeration (small samples only)
    Exact(ExactArgs),
    /// Monte Carlo power study on equicorrelated normal data
    Simulate(SimulateArgs),
    /// Type-I error study on null data
    Type1(Type1Args),
    /// ROC curve from null and alternative p-value files
    Roc(RocArgs),
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    /// Treatment column (values 0/1 or true/false)
    #[arg(long, default_value = "treatment", value_name = "COLUMN")]
    pub treatment: String,

    /// Block column for within-block permutation
    #[arg(long, value_name = "COLUMN")]
    pub block: Option<String>,

    /// Comma-separated categorical columns to expand into k-1 dummies
    #[arg(long, value_delimiter = ',', value_name = "COLUMNS")]
    pub one_hot: Vec<String>,

    /// Z-score every covariate column on the full sample
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatKind {
    In,
    Out,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Classifier, e.g. logistic2, logistic:ridge=0.1, forest:trees=200,mtry=3, knn:k=1
    #[arg(long, default_value = "logistic2", value_name = "SPEC")]
    pub classifier: String,

    /// Accuracy statistic: in-sample or out-of-sample
    #[arg(long, value_enum, default_value = "in")]
    pub stat: StatKind,

    /// Held-out units per group for --stat out [default: min(l, m) / 5, at least 1]
    #[arg(long, value_name = "K")]
    pub kappa: Option<usize>,

    /// Partitions for --stat out: a count or `exact`
    #[arg(long, default_value = "30", value_name = "N|exact")]
    pub partitions: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PermuteArg {
    Across,
    Within,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieArg {
    Conservative,
    Randomized,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Input CSV
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,

    #[command(flatten)]
    pub load: LoadArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Number of permutations
    #[arg(long = "B", default_value_t = 999, value_name = "B")]
    pub permutations: usize,

    /// Master seed
    #[arg(long, env = "CPT_SEED", hide_env_values = true, default_value_t = 0)]
    pub seed: u64,

    /// Shuffle labels across the whole sample or within blocks
    #[arg(long, value_enum, default_value = "across")]
    pub permute: PermuteArg,

    /// Tie rule for the p-value
    #[arg(long, value_enum, default_value = "conservative")]
    pub tie_break: TieArg,

    /// JSON file with classifier, stat, B, seed, permute and tie_break; flags override it
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output file [default: stdout]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,

    /// Histogram bins for --null-out
    #[arg(long, default_value_t = crate::perm::DEFAULT_BINS)]
    pub bins: usize,

    /// Write a histogram of the null draws (CSV) to this file
    #[arg(long, value_name = "PATH")]
    pub null_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    /// Input CSV
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,

    #[command(flatten)]
    pub load: LoadArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// JSON file with classifier and stat; flags override it
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output file [default: stdout]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Base configuration; other flags override it
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,

    /// Comma-separated tests, e.g. cpt-logistic2,cpt-forest:trees=100,energy,lrt [default: from preset]
    #[arg(long, value_name = "LIST")]
    pub tests: Option<String>,

    /// Treated units per dataset [default: from preset]
    #[arg(long, value_name = "N")]
    pub n_treated: Option<usize>,

    /// Control units per dataset [default: from preset]
    #[arg(long, value_name = "N")]
    pub n_control: Option<usize>,

    /// Covariate dimension [default: from preset]
    #[arg(long, value_name = "P")]
    pub p: Option<usize>,

    /// Comma-separated correlation grid [default: from preset]
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub rho: Option<Vec<f64>>,

    /// Datasets per rho [default: from preset]
    #[arg(long, value_name = "N")]
    pub replications: Option<usize>,

    /// Comma-separated significance levels [default: from preset]
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub alpha: Option<Vec<f64>>,

    /// Permutations per test [default: from preset]
    #[arg(long = "B", value_name = "B")]
    pub permutations: Option<usize>,

    /// Master seed
    #[arg(long, env = "CPT_SEED", hide_env_values = true, default_value_t = 0)]
    pub seed: u64,

    /// Statistic for every CPT test
    #[arg(long, value_enum, default_value = "in")]
    pub stat: StatKind,

    /// Held-out units per group for --stat out [default: min(l, m) / 5, at least 1]
    #[arg(long, value_name = "K")]
    pub kappa: Option<usize>,

    /// Partitions for --stat out: a count or `exact`
    #[arg(long, default_value = "30", value_name = "N|exact")]
    pub partitions: String,

    /// JSON simulation config merged over the preset; flags override it
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Power table output [default: stdout]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,

    /// Write every p-value (test,rho,replication,p_value) to this file
    #[arg(long, value_name = "PATH")]
    pub pvalues_out: Option<PathBuf>,

    /// Write ROC curves (test,rho,fpr,tpr) against rho = 0 to this file
    #[arg(long, value_name = "PATH")]
    pub roc_out: Option<PathBuf>,

    /// Alternative for --roc-out [default: largest rho in the grid]
    #[arg(long, value_name = "RHO")]
    pub roc_rho: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Type1Args {
    /// Test to evaluate, e.g. cpt-logistic2, exact-cpt-logistic, energy, lrt2
    #[arg(long, default_value = "cpt-logistic2", value_name = "TEST")]
    pub test: String,

    /// Null data from this CSV by shuffling its treatment column (otherwise N(0, I) draws)
    #[arg(long, value_name = "PATH", conflicts_with_all = ["n_treated", "n_control", "p"])]
    pub data: Option<PathBuf>,

    #[command(flatten)]
    pub load: LoadArgs,

    /// Treated units per generated dataset
    #[arg(long, default_value_t = 20, value_name = "N")]
    pub n_treated: usize,

    /// Control units per generated dataset
    #[arg(long, default_value_t = 20, value_name = "N")]
    pub n_control: usize,

    /// Covariate dimension of generated datasets
    #[arg(long, default_value_t = 3, value_name = "P")]
    pub p: usize,

    /// Null datasets
    #[arg(long, default_value_t = 300, value_name = "N")]
    pub replications: usize,

    /// Comma-separated significance levels
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.01", value_name = "LIST")]
    pub alpha: Vec<f64>,

    /// Permutations per test
    #[arg(long = "B", default_value_t = 199, value_name = "B")]
    pub permutations: usize,

    /// Master seed
    #[arg(long, env = "CPT_SEED", hide_env_values = true, default_value_t = 0)]
    pub seed: u64,

    /// Statistic for CPT tests
    #[arg(long, value_enum, default_value = "in")]
    pub stat: StatKind,

    /// Held-out units per group for --stat out [default: min(l, m) / 5, at least 1]
    #[arg(long, value_name = "K")]
    pub kappa: Option<usize>,

    /// Partitions for --stat out: a count or `exact`
    #[arg(long, default_value = "30", value_name = "N|exact")]
    pub partitions: String,

    /// Rejection-rate table output [default: stdout]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,

    /// Write a p-value histogram (CSV) to this file
    #[arg(long, value_name = "PATH")]
    pub hist_out: Option<PathBuf>,

    /// Histogram bins for --hist-out
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    /// p-values under the null (CSV with a p_value column)
    #[arg(long, value_name = "PATH")]
    pub null: PathBuf,

    /// p-values under the alternative (CSV with a p_value column)
    #[arg(long, value_name = "PATH")]
    pub alt: PathBuf,

    /// Keep only rows of this test when the files have a test column
    #[arg(long, value_name = "TEST")]
    pub test: Option<String>,

    /// Keep only alternative rows with this rho when the file has a rho column
    #[arg(long, value_name = "RHO")]
    pub rho: Option<f64>,

    /// Keep only null rows with this rho when the file has a rho column
    #[arg(long, default_value_t = 0.0, value_name = "RHO")]
    pub null_rho: f64,

    /// Output file [default: stdout]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<CptError> for Failure {
    fn from(e: CptError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m.clone()).expect("subcommand is required");

    let result = match cli.workers {
        Some(0) => usage("--workers must be at least 1"),
        workers => match rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, &sub)),
            Err(e) => Err(Failure::Runtime(format!("cannot start worker pool: {e}"))),
        },
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(cli: &Cli, sub: &ArgMatches) -> Outcome<()> {
    let started = Instant::now();
    let progress = |msg: &str| {
        if !cli.quiet {
            eprintln!("cpt: {msg}");
        }
    };
    match &cli.command {
        Command::Test(a) => cmd_test(a, sub, &progress)?,
        Command::Exact(a) => cmd_exact(a, sub, &progress)?,
        Command::Simulate(a) => cmd_simulate(a, sub, &progress)?,
        Command::Type1(a) => cmd_type1(a, &progress)?,
        Command::Roc(a) => cmd_roc(a)?,
    }
    progress(&format!("done in {:.2?}", started.elapsed()));
    Ok(())
}

/// True when the user supplied `id` (command line or environment).
fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(
        m.value_source(id),
        Some(ValueSource::CommandLine) | Some(ValueSource::EnvVariable)
    )
}

fn parse_partitions(s: &str) -> Outcome<Partitions> {
    match s.trim() {
        "exact" => Ok(Partitions::Exact),
        n => match n.parse::<usize>() {
            Ok(r) if r >= 1 => Ok(Partitions::Sampled(r)),
            _ => usage(format!("--partitions expects a positive count or `exact`, got `{s}`")),
        },
    }
}

fn build_stat(stat: StatKind, kappa: Option<usize>, partitions: &str, partitions_given: bool) -> Outcome<StatSpec> {
    match stat {
        StatKind::In => {
            if kappa.is_some() {
                return usage("--kappa only applies with --stat out");
            }
            if partitions_given {
                return usage("--partitions only applies with --stat out");
            }
            Ok(StatSpec::InSample)
        }
        StatKind::Out => Ok(StatSpec::OutOfSample {
            kappa,
            partitions: parse_partitions(partitions)?,
        }),
    }
}

fn parse_classifier(s: &str) -> Outcome<ClassifierSpec> {
    s.parse()
        .map_err(|e: CptError| Failure::Usage(format!("--classifier `{s}`: {e}")))
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))
}

fn load_options(a: &LoadArgs) -> LoadOptions {
    LoadOptions {
        treatment_column: a.treatment.clone(),
        block_column: a.block.clone(),
        one_hot: a.one_hot.clone(),
        standardize: a.standardize,
        ..LoadOptions::default()
    }
}

fn load(path: &Path, a: &LoadArgs) -> Outcome<Dataset> {
    load_csv(path, &load_options(a)).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Outcome<()> {
    let res = match path {
        Some(p) => File::create(p).and_then(|mut f| f.write_all(bytes)),
        None => io::stdout().lock().write_all(bytes),
    };
    res.map_err(|e| {
        let target = path.map_or("stdout".to_string(), |p| p.display().to_string());
        Failure::Runtime(format!("cannot write {target}: {e}"))
    })
}

fn to_json(value: &impl serde::Serialize) -> Outcome<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> Outcome<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestFile {
    classifier: Option<ClassifierSpec>,
    stat: Option<StatSpec>,
    #[serde(rename = "B")]
    permutations: Option<usize>,
    seed: Option<u64>,
    permute: Option<PermuteMode>,
    tie_break: Option<TieBreak>,
}

/// Classifier and statistic from the config file, overridden by explicit flags.
fn resolve_model(model: &ModelArgs, sub: &ArgMatches, file: &TestFile) -> Outcome<(ClassifierSpec, StatSpec)> {
    let classifier = match (&file.classifier, explicit(sub, "classifier")) {
        (Some(c), false) => c.clone(),
        _ => parse_classifier(&model.classifier)?,
    };
    let stat_flags = ["stat", "kappa", "partitions"].iter().any(|id| explicit(sub, id));
    let stat = match file.stat {
        Some(s) if !stat_flags => s,
        _ => build_stat(model.stat, model.kappa, &model.partitions, explicit(sub, "partitions"))?,
    };
    classifier.validate().map_err(|e| Failure::Usage(format!("--classifier: {e}")))?;
    Ok((classifier, stat))
}

fn cmd_test(a: &TestArgs, sub: &ArgMatches, progress: &dyn Fn(&str)) -> Outcome<()> {
    let file: TestFile = match &a.config {
        Some(p) => read_config(p)?,
        None => TestFile::default(),
    };
    let (classifier, stat) = resolve_model(&a.model, sub, &file)?;
    let pick = |id: &str| explicit(sub, id);
    let permutations = file.permutations.filter(|_| !pick("permutations")).unwrap_or(a.permutations);
    let seed = file.seed.filter(|_| !pick("seed")).unwrap_or(a.seed);
    let mode = file.permute.filter(|_| !pick("permute")).unwrap_or(match a.permute {
        PermuteArg::Across => PermuteMode::Across,
        PermuteArg::Within => PermuteMode::Within,
    });
    let tie_break = file.tie_break.filter(|_| !pick("tie_break")).unwrap_or(match a.tie_break {
        TieArg::Conservative => TieBreak::Conservative,
        TieArg::Randomized => TieBreak::Randomized,
    });
    let plan = PermutationPlan {
        mode,
        permutations,
        master_seed: seed,
        tie_break,
    };
    if plan.mode == PermuteMode::Within && a.load.block.is_none() {
        return usage("--permute within requires a block column; pass --block <COLUMN>");
    }
    if let Err(e) = plan.validate(true) {
        return usage(format!("--B: {e}"));
    }
    if a.bins == 0 {
        return usage("--bins must be at least 1");
    }

    let d = load(&a.data, &a.load)?;
    stat.validate(d.treated_count(), d.control_count())
        .map_err(|e| Failure::Usage(format!("--stat: {e}")))?;
    progress(&format!(
        "{} units ({} treated), classifier {classifier}, B = {permutations}",
        d.n(),
        d.treated_count()
    ));
    let result = run_cpt(&d, &classifier, &stat, &plan)?;
    progress(&format!("S = {}, p = {}", result.observed, result.p_value));

    let body = match a.format {
        Format::Json => to_json(&result)?,
        Format::Csv => csv_bytes(|buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["statistic", "p_value", "B", "seed"])?;
            w.write_record([
                result.observed.to_string(),
                result.p_value.to_string(),
                permutations.to_string(),
                seed.to_string(),
            ])?;
            w.flush().map_err(|source| CptError::Io {
                path: "<buffer>".into(),
                source,
            })
        })?,
    };
    write_output(a.out.as_deref(), &body)?;
    if let Some(path) = &a.null_out {
        let hist = null_distribution_report(&result, a.bins);
        let bytes = csv_bytes(|buf| hist.write_csv(buf))?;
        write_output(Some(path), &bytes)?;
    }
    Ok(())
}

fn cmd_exact(a: &ExactArgs, sub: &ArgMatches, progress: &dyn Fn(&str)) -> Outcome<()> {
    let file: TestFile = match &a.config {
        Some(p) => read_config(p)?,
        None => TestFile::default(),
    };
    let (classifier, stat) = resolve_model(&a.model, sub, &file)?;
    if classifier.is_randomized() {
        return usage(format!("--classifier `{classifier}` is randomized; exact enumeration needs a deterministic one"));
    }
    let d = load(&a.data, &a.load)?;
    stat.validate(d.treated_count(), d.control_count())
        .map_err(|e| Failure::Usage(format!("--stat: {e}")))?;
    progress(&format!("enumerating assignments for {} units ({} treated)", d.n(), d.treated_count()));
    let r = exact_cpt_result(&d, &classifier, &stat)?;
    let body = match a.format {
        Format::Json => to_json(&json!({
            "observed": r.observed,
            "p_value": r.p_value,
            "assignments": r.assignments,
            "spec_echo": {
                "test": "exact-cpt",
                "classifier": classifier,
                "classifier_name": classifier.to_string(),
                "stat": stat,
                "n": d.n(),
                "p": d.p(),
                "treated": d.treated_count(),
                "control": d.control_count(),
            },
        }))?,
        Format::Csv => format!("statistic,p_value,assignments\n{},{},{}\n", r.observed, r.p_value, r.assignments).into_bytes(),
    };
    write_output(a.out.as_deref(), &body)
}

fn cmd_simulate(a: &SimulateArgs, sub: &ArgMatches, progress: &dyn Fn(&str)) -> Outcome<()> {
    let preset = match a.preset {
        Preset::Desk => SimulationConfig::desk(),
        Preset::Full => SimulationConfig::full(),
    };
    let mut cfg = match &a.config {
        Some(path) => {
            let overlay: serde_json::Value = read_config(path)?;
            let mut base = serde_json::to_value(&preset).map_err(|e| Failure::Runtime(e.to_string()))?;
            match (base.as_object_mut(), overlay) {
                (Some(obj), serde_json::Value::Object(over)) => obj.extend(over),
                _ => return usage(format!("--config {}: expected a JSON object", path.display())),
            }
            serde_json::from_value(base).map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?
        }
        None => preset,
    };
    if let Some(list) = &a.tests {
        cfg.tests = parse_test_list(list).map_err(|e| Failure::Usage(format!("--tests: {e}")))?;
    }
    if ["stat", "kappa", "partitions"].iter().any(|id| explicit(sub, id)) {
        let stat = build_stat(a.stat, a.kappa, &a.partitions, explicit(sub, "partitions"))?;
        cfg.tests = cfg.tests.into_iter().map(|t| t.with_stat(stat)).collect();
    }
    cfg.n_treated = a.n_treated.unwrap_or(cfg.n_treated);
    cfg.n_control = a.n_control.unwrap_or(cfg.n_control);
    cfg.p = a.p.unwrap_or(cfg.p);
    cfg.rho_grid = a.rho.clone().unwrap_or(cfg.rho_grid);
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.alpha_levels = a.alpha.clone().unwrap_or(cfg.alpha_levels);
    cfg.permutations = a.permutations.unwrap_or(cfg.permutations);
    if explicit(sub, "seed") || a.config.is_none() {
        cfg.seed = a.seed;
    }
    if cfg.tests.iter().any(TestSpec::is_permutation_based) && cfg.permutations < crate::perm::MIN_PERMUTATIONS {
        return usage(format!("--B must be at least {}", crate::perm::MIN_PERMUTATIONS));
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    for t in &cfg.tests {
        if let TestSpec::Cpt { classifier, .. } | TestSpec::ExactCpt { classifier, .. } = t {
            classifier.validate().map_err(|e| Failure::Usage(format!("--tests: {e}")))?;
        }
    }
    let roc_rho = match &a.roc_out {
        Some(_) => {
            if !cfg.rho_grid.contains(&0.0) {
                return usage("--roc-out needs rho = 0 in the grid for the null p-values");
            }
            let alt = a
                .roc_rho
                .unwrap_or_else(|| cfg.rho_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            if !cfg.rho_grid.contains(&alt) {
                return usage(format!("--roc-rho {alt} is not in the rho grid"));
            }
            Some(alt)
        }
        None => None,
    };

    progress(&format!(
        "{} tests x {} rho values x {} replications",
        cfg.tests.len(),
        cfg.rho_grid.len(),
        cfg.replications
    ));
    let study = run_power_study(&cfg)?;
    let body = match a.format {
        Format::Csv => csv_bytes(|buf| study.table.write_csv(buf))?,
        Format::Json => to_json(&json!({ "config": cfg, "rows": study.table.rows }))?,
    };
    write_output(a.out.as_deref(), &body)?;
    if let Some(path) = &a.pvalues_out {
        let bytes = csv_bytes(|buf| study.write_pvalues_csv(buf))?;
        write_output(Some(path), &bytes)?;
    }
    if let (Some(path), Some(alt)) = (&a.roc_out, roc_rho) {
        let mut curves = Vec::new();
        for t in &cfg.tests {
            let name = t.to_string();
            let (Some(null), Some(hit)) = (study.series(&name, 0.0), study.series(&name, alt)) else {
                continue;
            };
            curves.push(RocCurve {
                test: name,
                rho: alt,
                points: roc_points(&null.p_values, &hit.p_values)?,
            });
        }
        let bytes = csv_bytes(|buf| write_roc_csv(buf, &curves))?;
        write_output(Some(path), &bytes)?;
    }
    Ok(())
}

fn cmd_type1(a: &Type1Args, progress: &dyn Fn(&str)) -> Outcome<()> {
    let mut test: TestSpec = a.test.parse().map_err(|e| Failure::Usage(format!("--test: {e}")))?;
    if a.stat == StatKind::Out || a.kappa.is_some() {
        test = test.with_stat(build_stat(a.stat, a.kappa, &a.partitions, false)?);
    }
    if let TestSpec::Cpt { classifier, .. } | TestSpec::ExactCpt { classifier, .. } = &test {
        classifier.validate().map_err(|e| Failure::Usage(format!("--test: {e}")))?;
    }
    if test.is_permutation_based() && a.permutations < crate::perm::MIN_PERMUTATIONS {
        return usage(format!("--B must be at least {}", crate::perm::MIN_PERMUTATIONS));
    }
    if a.replications == 0 {
        return usage("--replications must be at least 1");
    }
    if let Some(bad) = a.alpha.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return usage(format!("--alpha {bad} is not in (0, 1)"));
    }
    if a.bins == 0 {
        return usage("--bins must be at least 1");
    }
    let generator = match &a.data {
        Some(path) => NullGenerator::Permute(load(path, &a.load)?),
        None => NullGenerator::Mvn {
            n_treated: a.n_treated,
            n_control: a.n_control,
            p: a.p,
        },
    };
    let cfg = Type1StudyConfig {
        generator,
        test,
        permutations: a.permutations,
        replications: a.replications,
        alpha_grid: a.alpha.clone(),
        seed: a.seed,
    };
    progress(&format!("{} null replications of {}", cfg.replications, cfg.test));
    let table = run_type1_study(&cfg)?;
    let body = match a.format {
        Format::Csv => csv_bytes(|buf| table.write_csv(buf))?,
        Format::Json => to_json(&table)?,
    };
    write_output(a.out.as_deref(), &body)?;
    if let Some(path) = &a.hist_out {
        let bytes = csv_bytes(|buf| table.write_histogram_csv(buf, a.bins))?;
        write_output(Some(path), &bytes)?;
    }
    Ok(())
}

/// p-values from a CSV with a `p_value` column and optional `test` and `rho`
/// columns. Returns the values and the distinct test and rho labels kept.
fn read_pvalues(
    path: &Path,
    test: Option<&str>,
    rho: Option<f64>,
) -> Outcome<(Vec<f64>, Vec<String>, Vec<f64>)> {
    let fail = |msg: String| Failure::Runtime(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| fail(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let p_col = col("p_value").ok_or_else(|| fail("missing column `p_value`".into()))?;
    let (test_col, rho_col) = (col("test"), col("rho"));
    let mut values = Vec::new();
    let mut tests: Vec<String> = Vec::new();
    let mut rhos: Vec<f64> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let t = test_col.map(|c| field(c).to_string());
        if let (Some(want), Some(t)) = (test, &t) {
            if want != t {
                continue;
            }
        }
        let r = match rho_col {
            Some(c) => Some(
                field(c)
                    .parse::<f64>()
                    .map_err(|_| fail(format!("row {row}: rho `{}` is not a number", field(c))))?,
            ),
            None => None,
        };
        if let (Some(want), Some(r)) = (rho, r) {
            if want != r {
                continue;
            }
        }
        let p = field(p_col)
            .parse::<f64>()
            .ok()
            .filter(|p| (0.0..=1.0).contains(p))
            .ok_or_else(|| fail(format!("row {row}: p_value `{}` is not in [0, 1]", field(p_col))))?;
        values.push(p);
        if let Some(t) = t {
            if !tests.contains(&t) {
                tests.push(t);
            }
        }
        if let Some(r) = r {
            if !rhos.contains(&r) {
                rhos.push(r);
            }
        }
    }
    Ok((values, tests, rhos))
}

fn cmd_roc(a: &RocArgs) -> Outcome<()> {
    let (null, null_tests, _) = read_pvalues(&a.null, a.test.as_deref(), Some(a.null_rho))?;
    let (alt, alt_tests, alt_rhos) = read_pvalues(&a.alt, a.test.as_deref(), a.rho)?;
    for (tests, path) in [(&null_tests, &a.null), (&alt_tests, &a.alt)] {
        if tests.len() > 1 {
            return Err(Failure::Runtime(format!(
                "{} holds several tests ({}); choose one with --test",
                path.display(),
                tests.join(", ")
            )));
        }
    }
    if alt_rhos.len() > 1 {
        return Err(Failure::Runtime(format!(
            "{} holds several rho values; choose one with --rho",
            a.alt.display()
        )));
    }
    if null.is_empty() || alt.is_empty() {
        let which = if null.is_empty() { &a.null } else { &a.alt };
        return Err(Failure::Runtime(format!("{}: no p-values left after filtering", which.display())));
    }
    let test = a
        .test
        .clone()
        .or_else(|| alt_tests.first().cloned())
        .or_else(|| null_tests.first().cloned())
        .unwrap_or_else(|| "test".into());
    let rho = match a.rho.or_else(|| alt_rhos.first().copied()) {
        Some(r) => r,
        None => return usage("--rho is needed to label the curve when the alternative file has no rho column"),
    };
    let curve = RocCurve {
        test,
        rho,
        points: roc_points(&null, &alt)?,
    };
    let bytes = csv_bytes(|buf| write_roc_csv(buf, std::slice::from_ref(&curve)))?;
    write_output(a.out.as_deref(), &bytes)
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use smcfcs_core::covariate::CovariateModelSpec;
use smcfcs_core::dataset::{read_long_csv, write_long_csv, Dataset, Schema, DEFAULT_MISSING_TOKENS};
use smcfcs_core::engine::{self, default_fcs_specs, EngineConfig, Method};
use smcfcs_core::formula::ModelFormula;
use smcfcs_core::parallel::{self, Execution};
use smcfcs_core::pooling;
use smcfcs_core::simlab::{self, ScenarioConfig};
use smcfcs_core::substantive::{SubstantiveFamily, SubstantiveModel};
use smcfcs_core::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERIC, message: message.into() }
    }

    /// Classify a library error, prefixing the flag or file it came from.
    fn from_core(context: &str, e: Error) -> Self {
        let code = match e {
            Error::Fit(_) | Error::Aborted { .. } | Error::Pooling(_) | Error::Model(_) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError { code, message: format!("{context}: {e}") }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn ctx(context: &str) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| CliError::from_core(context, e)
}

/// Write through a temporary file in the destination directory, then rename.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> smcfcs_core::Result<()>) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io = |e: std::io::Error| CliError::usage(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w).map_err(ctx(&path.display().to_string()))?;
        w.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn diag_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".diag.csv");
    PathBuf::from(s)
}

fn parse_family(text: &str) -> CliResult<SubstantiveFamily> {
    text.parse().map_err(ctx("--family"))
}

fn parse_formula(text: &str) -> CliResult<ModelFormula> {
    ModelFormula::parse(text).map_err(ctx("--smodel"))
}

fn load_schema(path: &Path) -> CliResult<Schema> {
    Schema::load(path).map_err(ctx("--schema"))
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    /// Input CSV; empty, `NA` and `.` cells are missing.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML schema giving each column's kind and role.
    #[arg(long)]
    pub schema: PathBuf,
    /// `fcs` or `smcfcs`.
    #[arg(long)]
    pub method: String,
    /// Number of imputations.
    #[arg(long)]
    pub m: usize,
    /// Sweeps per imputation (default 10 for fcs, 20 for smcfcs).
    #[arg(long)]
    pub iter: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Output CSV of stacked imputations; diagnostics go to `<out>.diag.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Substantive model family: `linear`, `logistic` or `cox`.
    #[arg(long)]
    pub family: Option<String>,
    /// Substantive model formula, e.g. `y ~ x + x^2` or `surv(t, d) ~ x1 + x2`.
    #[arg(long)]
    pub smodel: Option<String>,
    /// Covariate model `target ~ terms`; may be repeated.
    #[arg(long)]
    pub covmodel: Vec<String>,
    /// Rejection-sampling cap per cell per sweep.
    #[arg(long, default_value_t = engine::DEFAULT_MAX_REJECTIONS)]
    pub max_rejections: usize,
}

fn covariate_specs(
    d: &Dataset,
    method: Method,
    substantive: Option<&(SubstantiveFamily, ModelFormula)>,
    overrides: &[String],
) -> CliResult<(Vec<CovariateModelSpec>, Vec<engine::DerivedColumn>)> {
    let (defaults, derived) = match (method, substantive) {
        (Method::Fcs, Some((family, formula))) => default_fcs_specs(d, *family, formula).map_err(ctx("--smodel"))?,
        (Method::Fcs, None) if overrides.is_empty() => {
            return Err(CliError::usage("--smodel (or --covmodel for every partial covariate) is required for fcs"))
        }
        _ => {
            let specs = d
                .partial_covariates()
                .into_iter()
                .map(|c| CovariateModelSpec::default_for(d, &d.column(c).name))
                .collect::<smcfcs_core::Result<Vec<_>>>()
                .map_err(ctx("--data"))?;
            (specs, vec![])
        }
    };
    let mut by_target: BTreeMap<String, CovariateModelSpec> =
        defaults.into_iter().map(|s| (s.target.clone(), s)).collect();
    for text in overrides {
        let spec = CovariateModelSpec::parse(text, d, None).map_err(ctx("--covmodel"))?;
        by_target.insert(spec.target.clone(), spec);
    }
    Ok((by_target.into_values().collect(), derived))
}

pub fn impute(a: ImputeArgs) -> CliResult {
    let method: Method = a.method.parse().map_err(ctx("--method"))?;
    if a.m < 1 {
        return Err(CliError::usage("--m must be at least 1"));
    }
    if a.iter == Some(0) {
        return Err(CliError::usage("--iter must be at least 1"));
    }
    let substantive = match (&a.family, &a.smodel) {
        (Some(f), Some(s)) => Some((parse_family(f)?, parse_formula(s)?)),
        (None, None) if method == Method::Fcs => None,
        (_, None) => return Err(CliError::usage("--smodel is required for smcfcs and with --family")),
        (None, Some(_)) => return Err(CliError::usage("--family is required with --smodel")),
    };
    let schema = load_schema(&a.schema)?;
    let d = Dataset::read_csv(&a.data, &DEFAULT_MISSING_TOKENS, &schema).map_err(ctx("--data"))?;
    let (specs, derived) = covariate_specs(&d, method, substantive.as_ref(), &a.covmodel)?;
    let mut config = match (method, substantive) {
        (Method::Smcfcs, Some((family, formula))) => EngineConfig::smcfcs(a.m, a.seed, family, formula, specs),
        _ => EngineConfig::fcs(a.m, a.seed, specs),
    };
    config.derived_columns = derived;
    config.max_rejections = a.max_rejections;
    if let Some(it) = a.iter {
        config.iterations = it;
    }
    let result = engine::impute(&d, &config).map_err(ctx("imputation"))?;
    write_atomic(&a.out, |w| write_long_csv(&result.datasets, w))?;
    write_atomic(&diag_path(&a.out), |w| result.diagnostics.write_csv(w))?;
    let fallbacks = result.diagnostics.fallbacks();
    if fallbacks > 0 {
        eprintln!("warning: rejection cap reached for {fallbacks} cell draws; see the diagnostics file");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Stacked imputations with a leading `_imp` column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub smodel: String,
    /// Pooled estimates CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Confidence level of the pooled intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

pub fn analyze(a: AnalyzeArgs) -> CliResult {
    let family = parse_family(&a.family)?;
    let formula = parse_formula(&a.smodel)?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::usage("--level must lie in (0, 1)"));
    }
    let schema = load_schema(&a.schema)?;
    let file = File::open(&a.data).map_err(|e| CliError::usage(format!("--data: {e}")))?;
    let datasets = read_long_csv(BufReader::new(file), &schema).map_err(ctx("--data"))?;
    if datasets.len() < 2 {
        return Err(CliError::usage(format!("--data holds {} imputation(s); pooling needs at least 2", datasets.len())));
    }
    eprintln!(
        "note: pooled inference is valid only if the imputation model was compatible with, or richer than, `{formula}`"
    );
    let model = SubstantiveModel::new(family, formula.clone(), &datasets[0]).map_err(ctx("--smodel"))?;
    let mut fits = Vec::with_capacity(datasets.len());
    let mut failed = Vec::new();
    for (i, d) in datasets.iter().enumerate() {
        match model.fit(d) {
            Ok(f) => fits.push(f),
            Err(e) => failed.push(format!("{} ({e})", i + 1)),
        }
    }
    if !failed.is_empty() {
        return Err(CliError::numeric(format!("substantive fit failed for _imp {}", failed.join(", "))));
    }
    let pooled = pooling::pool(&fits, a.level).map_err(ctx("pooling"))?;
    let rows: Vec<_> = formula.labels().into_iter().zip(pooled).collect();
    match &a.out {
        Some(path) => write_atomic(path, |w| pooling::write_pooled_csv(&rows, w)),
        None => pooling::write_pooled_csv(&rows, std::io::stdout().lock()).map_err(ctx("stdout")),
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario TOML file or builtin name (e.g. `quad-normal-mcar`, `cox-n1000`).
    #[arg(long)]
    pub scenario: String,
    /// Replications; overrides the scenario file.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed; overrides the scenario file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Summary CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "SMCFCS_THREADS")]
    pub threads: Option<usize>,
}

fn load_scenario(name: &str) -> CliResult<ScenarioConfig> {
    if let Some(c) = simlab::builtin(name) {
        return Ok(c);
    }
    if Path::new(name).is_file() {
        return ScenarioConfig::load(name).map_err(ctx("--scenario"));
    }
    Err(CliError::usage(format!(
        "--scenario: `{name}` is neither a file nor a builtin ({})",
        simlab::builtin_names().join(", ")
    )))
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let mut config = load_scenario(&a.scenario)?;
    if let Some(r) = a.reps {
        config.reps = r;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate().map_err(ctx("--scenario"))?;
    let exec = match a.threads {
        Some(0) => return Err(CliError::usage("--threads must be at least 1")),
        Some(1) => Execution::Sequential,
        Some(n) => Execution::Threads(n),
        None => Execution::Parallel,
    };
    let summary = parallel::run_with(exec, || simlab::run_scenario(&config)).map_err(ctx("simulation"))?;
    write_atomic(&a.out, |w| summary.write_csv(w))?;
    if summary.n_used < summary.reps {
        eprintln!("note: {} of {} replications excluded after a method failed", summary.reps - summary.n_used, summary.reps);
    }
    Ok(())
}

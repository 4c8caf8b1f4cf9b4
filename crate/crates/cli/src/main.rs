//! `clinpath`: ingest raw lab exports, check and export datasets, generate
//! synthetic data and serve the API.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success (ingest succeeds even with rejections) |
//! | 1 | dataset violations, or rejections under `--strict` |
//! | 2 | usage error |
//! | 3 | I/O failure, including a port that cannot be bound |
//! | 4 | malformed input: rules, group table, config or dataset format |

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use clinpath::categorize::write_cuts;
use clinpath::ingest::{write_rejections, NormalizationRules, RulesError};
use clinpath::pipeline::{run_ingest, InputSource};
use clinpath::store::{
    self, generate_synthetic, save_to_path, write_graph, FocusPatient, StoreError, SyntheticSpec,
};
use clinpath::{build_clinical_path, default_group_table, DayOrder, GroupTable, PathOptions, Rational64, Scalar};
use clinpath_server::{AppState, ConfigStore, PresentationConfig, ServeError};

#[derive(Parser)]
#[command(name = "clinpath", version, about = "Clinical-path timelines over lab results")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, normalize and de-duplicate raw result files into a dataset.
    Ingest(IngestArgs),
    /// Check a dataset file; prints every violation with its line.
    Validate(DatasetArg),
    /// Write the patient/test graph of a dataset as JSON.
    ExportGraph(ExportGraphArgs),
    /// Write one patient's clinical path as delimited category codes.
    ExportPath(ExportPathArgs),
    /// Generate a reproducible synthetic dataset.
    Gen(GenArgs),
    /// Serve the HTTP API (and optionally the UI).
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum ScalarKind {
    #[default]
    F64,
    F32,
    /// Exact 64-bit rationals.
    Exact,
}

impl ScalarKind {
    fn from_tag(tag: &str) -> Option<Self> {
        [Self::F64, Self::F32, Self::Exact].into_iter().find(|k| k.tag() == tag)
    }

    fn tag(self) -> &'static str {
        match self {
            Self::F64 => f64::TAG,
            Self::F32 => f32::TAG,
            Self::Exact => Rational64::TAG,
        }
    }
}

macro_rules! with_scalar {
    ($kind:expr, $f:ident ( $($arg:expr),* )) => {
        match $kind {
            ScalarKind::F64 => $f::<f64>($($arg),*),
            ScalarKind::F32 => $f::<f32>($($arg),*),
            ScalarKind::Exact => $f::<Rational64>($($arg),*),
        }
    };
}

#[derive(Args)]
struct IngestArgs {
    /// Result files. The file name is the fallback institution.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Dataset file to write.
    #[arg(long, env = "CLINPATH_OUT")]
    out: PathBuf,
    /// Normalization rules (TOML). The built-in rules are used when absent.
    #[arg(long, env = "CLINPATH_RULES")]
    rules: Option<PathBuf>,
    /// Patient meta files: patient_id, sex, birth_year_or_age.
    #[arg(long)]
    meta: Vec<PathBuf>,
    /// Outcome files: patient_id, date, status_text.
    #[arg(long)]
    outcomes: Vec<PathBuf>,
    #[arg(long, default_value = "|")]
    separator: char,
    /// Fail, writing no dataset, if any record is rejected.
    #[arg(long)]
    strict: bool,
    /// Write rejected records with reason codes here.
    #[arg(long)]
    rejections: Option<PathBuf>,
    /// Write per-test cut points here.
    #[arg(long)]
    cuts: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    scalar: ScalarKind,
}

#[derive(Args)]
struct DatasetArg {
    #[arg(long, env = "CLINPATH_DATASET")]
    dataset: PathBuf,
}

#[derive(Args)]
struct ExportGraphArgs {
    #[arg(long, env = "CLINPATH_DATASET")]
    dataset: PathBuf,
    #[arg(long, env = "CLINPATH_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportPathArgs {
    #[arg(long, env = "CLINPATH_DATASET")]
    dataset: PathBuf,
    #[arg(long)]
    patient: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// First day, yyyy-MM-dd.
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last day, yyyy-MM-dd.
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long)]
    only_days_with_tests: bool,
    #[arg(long)]
    descending: bool,
    #[arg(long, env = "CLINPATH_GROUPS")]
    groups: Option<PathBuf>,
    #[arg(long, default_value = "|")]
    separator: char,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, env = "CLINPATH_OUT")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    patients: usize,
    /// Calendar span per ordinary patient.
    #[arg(long, default_value_t = 60)]
    days: u32,
    #[arg(long, default_value_t = 0.3)]
    out_of_range: f64,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    /// Add patient P000000 with 46 tests over 448 days (about 10,000 results).
    #[arg(long)]
    focus: bool,
    #[arg(long, value_enum, default_value_t)]
    scalar: ScalarKind,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CLINPATH_DATASET")]
    dataset: PathBuf,
    #[arg(long, env = "CLINPATH_LISTEN", default_value = "127.0.0.1:8080")]
    listen: String,
    /// Test group table (TOML). The built-in table is used when absent.
    #[arg(long, env = "CLINPATH_GROUPS")]
    groups: Option<PathBuf>,
    /// Presentation config file; created on the first update.
    #[arg(long, env = "CLINPATH_CONFIG")]
    config: Option<PathBuf>,
    /// Directory of static UI assets.
    #[arg(long, env = "CLINPATH_UI_DIR")]
    ui_dir: Option<PathBuf>,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }

    fn format(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 4, error: error.into() }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) => Failure::io(e),
            StoreError::Invalid(_) => Failure { code: 1, error: e.into() },
            _ => Failure::format(e),
        }
    }
}

impl From<RulesError> for Failure {
    fn from(e: RulesError) -> Self {
        match e {
            RulesError::Io { .. } => Failure::io(e),
            _ => Failure::format(e),
        }
    }
}

type Outcome = Result<ExitCode, Failure>;

fn check_readable(path: &Path) -> Result<(), Failure> {
    File::open(path)
        .map(drop)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::io)
}

fn check_writable_parent(path: &Path) -> Result<(), Failure> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Failure::io(anyhow::anyhow!(
            "output directory {} does not exist",
            parent.display()
        )))
    }
}

fn separator_byte(c: char) -> Result<u8, Failure> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Failure { code: 2, error: anyhow::anyhow!("separator must be a single ASCII character") })
}

fn open_input(path: &Path) -> Result<InputSource, Failure> {
    let file = File::open(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::io)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(InputSource::new(name, io::BufReader::new(file)))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), Failure> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(Failure::io)?;
    let mut out = BufWriter::new(file);
    f(&mut out)
        .and_then(|()| out.flush())
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::io)
}

fn cmd_ingest(args: IngestArgs) -> Outcome {
    let sep = separator_byte(args.separator)?;
    // Everything is checked before any output is produced.
    let rules = match &args.rules {
        Some(path) => NormalizationRules::from_path(path)?,
        None => NormalizationRules::default_rules(),
    };
    for p in args.inputs.iter().chain(&args.meta).chain(&args.outcomes) {
        check_readable(p)?;
    }
    for p in std::iter::once(&args.out).chain(&args.rejections).chain(&args.cuts) {
        check_writable_parent(p)?;
    }
    with_scalar!(args.scalar, ingest_as(&args, &rules, sep))
}

fn ingest_as<T: Scalar>(args: &IngestArgs, rules: &NormalizationRules, sep: u8) -> Outcome {
    let inputs = |paths: &[PathBuf]| paths.iter().map(|p| open_input(p)).collect::<Result<Vec<_>, _>>();
    let (dataset, report) = run_ingest::<T>(inputs(&args.inputs)?, inputs(&args.meta)?, inputs(&args.outcomes)?, rules, sep)
        .map_err(Failure::io)?;

    let mut out = io::stdout().lock();
    let _ = writeln!(out, "records in:  {}", report.records_in);
    let _ = writeln!(out, "kept:        {}", report.kept);
    let _ = writeln!(out, "rejected:    {}", report.rejected());
    for (reason, n) in report.rejected_by_reason() {
        let _ = writeln!(out, "  {reason}: {n}");
    }
    let _ = writeln!(out, "duplicates:  {}", report.duplicates.len());
    let _ = writeln!(out, "patients:    {}", dataset.patients().len());
    let _ = writeln!(out, "tests:       {}", dataset.distinct_tests().len());
    for w in &report.warnings {
        tracing::warn!("{}:{}: {}", w.source, w.line, w.message);
    }
    debug_assert!(report.is_conserved());

    if let Some(path) = &args.rejections {
        write_file(path, |w| write_rejections(w, &report.rejections, args.separator))?;
    }
    if args.strict && report.rejected() > 0 {
        eprintln!("error: {} record(s) rejected under --strict; dataset not written", report.rejected());
        return Ok(ExitCode::from(1));
    }
    if let Some(path) = &args.cuts {
        write_file(path, |w| write_cuts(w, dataset.cuts(), args.separator))?;
    }
    save_to_path(&dataset, &args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))
        .map_err(Failure::io)?;
    Ok(ExitCode::SUCCESS)
}

fn dataset_kind(path: &Path) -> Result<ScalarKind, Failure> {
    let file = File::open(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::io)?;
    let tag = store::scalar_tag(io::BufReader::new(file))?;
    ScalarKind::from_tag(&tag).ok_or_else(|| Failure::format(anyhow::anyhow!("unknown scalar type {tag:?}")))
}

fn cmd_validate(args: DatasetArg) -> Outcome {
    let kind = dataset_kind(&args.dataset)?;
    with_scalar!(kind, validate_as(&args.dataset))
}

fn validate_as<T: Scalar>(path: &Path) -> Outcome {
    let file = File::open(path).map_err(Failure::io)?;
    let violations = store::validate::<T, _>(io::BufReader::new(file))?;
    if violations.is_empty() {
        println!("{}: ok", path.display());
        return Ok(ExitCode::SUCCESS);
    }
    for v in &violations {
        println!("{}: {v}", path.display());
    }
    println!("{} violation(s)", violations.len());
    Ok(ExitCode::from(1))
}

fn cmd_export_graph(args: ExportGraphArgs) -> Outcome {
    check_writable_parent(&args.out)?;
    let kind = dataset_kind(&args.dataset)?;
    with_scalar!(kind, export_graph_as(&args))
}

fn export_graph_as<T: Scalar>(args: &ExportGraphArgs) -> Outcome {
    let dataset = store::load_from_path::<T>(&args.dataset)?;
    let mut edges = 0;
    let mut nodes = 0;
    write_file(&args.out, |w| {
        let g = write_graph(&dataset, w)?;
        edges = g.edges.len();
        nodes = g.nodes.len();
        Ok(())
    })?;
    println!("nodes: {nodes}");
    println!("edges: {edges}");
    println!("results: {}", dataset.results().len());
    Ok(ExitCode::SUCCESS)
}

fn load_groups(path: Option<&Path>) -> Result<GroupTable, Failure> {
    match path {
        None => Ok(default_group_table()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read {}", p.display()))
                .map_err(Failure::io)?;
            GroupTable::from_toml_str(&text)
                .with_context(|| format!("invalid group table {}", p.display()))
                .map_err(Failure::format)
        }
    }
}

fn cmd_export_path(args: ExportPathArgs) -> Outcome {
    let groups = load_groups(args.groups.as_deref())?;
    if let Some(out) = &args.out {
        check_writable_parent(out)?;
    }
    let kind = dataset_kind(&args.dataset)?;
    with_scalar!(kind, export_path_as(&args, &groups))
}

fn export_path_as<T: Scalar>(args: &ExportPathArgs, groups: &GroupTable) -> Outcome {
    let dataset = store::load_from_path::<T>(&args.dataset)?;
    let options = PathOptions {
        date_from: args.from,
        date_to: args.to,
        only_days_with_tests: args.only_days_with_tests,
        day_order: if args.descending { DayOrder::Descending } else { DayOrder::Ascending },
        ..Default::default()
    };
    let threshold = T::hundred();
    let path = build_clinical_path(&dataset, groups, &args.patient, &options, threshold)
        .map_err(|e| Failure { code: 2, error: e.into() })?;
    match &args.out {
        Some(out) => write_file(out, |w| path.write_delimited(w, args.separator))?,
        None => path.write_delimited(io::stdout().lock(), args.separator).map_err(Failure::io)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: GenArgs) -> Outcome {
    check_writable_parent(&args.out)?;
    let spec = SyntheticSpec {
        n_patients: args.patients,
        day_span: args.days,
        seed: args.seed,
        out_of_range_fraction: args.out_of_range,
        test_density: args.density,
        focus_patient: args.focus.then(FocusPatient::large),
        ..Default::default()
    };
    with_scalar!(args.scalar, gen_as(&spec, &args.out))
}

fn gen_as<T: Scalar>(spec: &SyntheticSpec, out: &Path) -> Outcome {
    let dataset = generate_synthetic::<T>(spec).map_err(|e| Failure { code: 2, error: e.into() })?;
    save_to_path(&dataset, out)
        .with_context(|| format!("cannot write {}", out.display()))
        .map_err(Failure::io)?;
    println!("patients: {}", dataset.patients().len());
    println!("results: {}", dataset.results().len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(args: ServeArgs) -> Outcome {
    let groups = load_groups(args.groups.as_deref())?;
    let config = match &args.config {
        Some(p) => ConfigStore::with_sidecar(p).map_err(Failure::format)?,
        None => ConfigStore::in_memory(PresentationConfig::default()),
    };
    if let Some(dir) = &args.ui_dir {
        if !dir.is_dir() {
            return Err(Failure::io(anyhow::anyhow!("UI directory {} does not exist", dir.display())));
        }
    }
    let kind = dataset_kind(&args.dataset)?;
    with_scalar!(kind, serve_as(&args, groups, config))
}

fn serve_as<T: Scalar>(args: &ServeArgs, groups: GroupTable, config: ConfigStore) -> Outcome {
    let dataset = store::load_from_path::<T>(&args.dataset)?;
    tracing::info!(
        patients = dataset.patients().len(),
        results = dataset.results().len(),
        "dataset loaded"
    );
    let state = Arc::new(AppState::new(dataset, groups, config));
    let app = clinpath_server::router(state, args.ui_dir.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::io)?;
    let served = runtime.block_on(async {
        let listener = clinpath_server::bind(&args.listen).await?;
        println!("listening on http://{}", listener.local_addr()?);
        clinpath_server::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    });
    match served {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e @ ServeError::Bind { .. }) | Err(e @ ServeError::Io(_)) => Err(Failure::io(e)),
    }
}

/// Joins the cause chain, skipping causes the previous message already quotes.
fn render_chain(error: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let outcome = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Validate(a) => cmd_validate(a),
        Command::ExportGraph(a) => cmd_export_graph(a),
        Command::ExportPath(a) => cmd_export_path(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", render_chain(&f.error));
            ExitCode::from(f.code)
        }
    }
}

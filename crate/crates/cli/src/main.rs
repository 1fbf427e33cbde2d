use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use coarseconv::analysis::{parse_alpha_list, run_analysis, AnalysisOptions, AnalysisReport};
use coarseconv::bootstrap::BootstrapConfig;
use coarseconv::imputation::{debug_dump, TiltParams};
use coarseconv::report;
use coarseconv::sim::{generate, SimConfig, SimLaw};
use coarseconv::validation::{self, CheckResult, REFERENCE_PREVALENCE};
use coarseconv::{parse_cohort, write_cohort, Cohort, Error, FitOptions, DEFAULT_WEEKS};

#[derive(Parser, Debug)]
#[command(name = "coarseconv", version, about = "Time to culture conversion with intermittently missing cultures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the sub-models and emit distributions, diagnostics and treatment-effect tables.
    Analyze(AnalyzeArgs),
    /// Draw a cohort from the built-in reference law.
    Simulate(SimulateArgs),
    /// Emit each patient's conversion status and coarsening set.
    Coarsen(CoarsenArgs),
    /// Run the oracle checks.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    #[arg(long, env = "COARSECONV_INPUT")]
    input: PathBuf,
    /// Output directory; created if absent.
    #[arg(long, env = "COARSECONV_OUT")]
    out: PathBuf,
    /// Number of scheduled visits.
    #[arg(long, env = "COARSECONV_K", default_value_t = DEFAULT_WEEKS)]
    k: u32,
    /// Control-arm tilts: `a,b,c` or `lo:hi:step`.
    #[arg(long, env = "COARSECONV_ALPHA0", default_value = "-10:6:1", allow_hyphen_values = true)]
    alpha0: String,
    /// Treated-arm tilts: `a,b,c` or `lo:hi:step`.
    #[arg(long, env = "COARSECONV_ALPHA1", default_value = "-10:6:1", allow_hyphen_values = true)]
    alpha1: String,
    /// Bootstrap replicates; 0 skips the bootstrap.
    #[arg(long, env = "COARSECONV_BOOTSTRAP", default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, env = "COARSECONV_SEED", default_value_t = BootstrapConfig::default().seed)]
    seed: u64,
    #[arg(long, env = "COARSECONV_LEVEL", default_value_t = 0.95)]
    level: f64,
    /// Ridge penalty on the logistic coefficients.
    #[arg(long, env = "COARSECONV_RIDGE", default_value_t = 0.0)]
    ridge: f64,
    /// Report crude arm averages instead of cavitation-standardized ones.
    #[arg(long, env = "COARSECONV_NO_STANDARDIZE")]
    no_standardize: bool,
    /// Also write per-patient imputation details at the first grid point.
    #[arg(long, env = "COARSECONV_DUMP_IMPUTATION")]
    dump_imputation: bool,
    /// Also write every bootstrap replicate's estimands.
    #[arg(long, env = "COARSECONV_DUMP_REPLICATES")]
    dump_replicates: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, env = "COARSECONV_OUT")]
    out: PathBuf,
    /// Patients per arm.
    #[arg(long, env = "COARSECONV_N", default_value_t = 200)]
    n: usize,
    #[arg(long, env = "COARSECONV_K", default_value_t = DEFAULT_WEEKS)]
    k: u32,
    #[arg(long, env = "COARSECONV_SEED", default_value_t = BootstrapConfig::default().seed)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CoarsenArgs {
    #[arg(long, env = "COARSECONV_INPUT")]
    input: PathBuf,
    #[arg(long, env = "COARSECONV_K", default_value_t = DEFAULT_WEEKS)]
    k: u32,
    /// Output file; standard output when omitted.
    #[arg(long, env = "COARSECONV_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, env = "COARSECONV_SEED", default_value_t = BootstrapConfig::default().seed)]
    seed: u64,
    /// Include the parameter-recovery and bootstrap-coverage studies (several minutes).
    #[arg(long)]
    full: bool,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    row: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analyze(a) => analyze(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Coarsen(a) => coarsen(&a),
        Command::Validate(a) => return validate(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let core = e.downcast_ref::<Error>();
            let report = ErrorReport {
                kind: core.map_or("error", Error::kind),
                message: format!("{e:#}"),
                row: match core {
                    Some(Error::Parse { row, .. }) => Some(*row),
                    _ => None,
                },
            };
            let json = serde_json::json!({ "error": report });
            eprintln!("{json}");
            if core.is_some_and(Error::is_input_error) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn read_cohort(path: &Path, weeks: u32) -> Result<Cohort> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(parse_cohort(BufReader::new(file), weeks)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config_hash: String,
    input_sha256: String,
    config: &'a AnalyzeArgs,
    patients: [usize; 2],
    cavitation_weight: Option<f64>,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

fn collect_warnings(r: &AnalysisReport) -> Vec<String> {
    let mut w = Vec::new();
    for fit in &r.estimates.fitted.reports {
        if !fit.dropped_terms.is_empty() {
            w.push(format!("model {}: dropped all-zero columns {}", fit.model, fit.dropped_terms.join(", ")));
        }
    }
    if r.estimates.clamped > 0 {
        w.push(format!("{} benchmark probabilities clamped away from 0 and 1", r.estimates.clamped));
    }
    for g in &r.estimates.grid {
        match &g.fit {
            Err(e) => w.push(format!("grid point ({}, {}): {e}", g.alpha0, g.alpha1)),
            Ok(f) if !f.converged => w.push(format!("grid point ({}, {}): beta on search boundary", g.alpha0, g.alpha1)),
            Ok(_) => {}
        }
    }
    if let Some(b) = &r.bootstrap {
        if !b.failures.is_empty() {
            w.push(format!(
                "{} of {} bootstrap replicates failed ({} by separation)",
                b.failures.len(),
                b.replicates.len(),
                b.separation_failures()
            ));
        }
    }
    w
}

/// Files written so far; removed unless the run completes.
struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn render<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> coarseconv::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let input = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let cohort = parse_cohort(input.as_slice(), args.k)?;
    let opts = AnalysisOptions {
        alpha0: parse_alpha_list(&args.alpha0)?,
        alpha1: parse_alpha_list(&args.alpha1)?,
        standardize: !args.no_standardize,
        fit: FitOptions {
            ridge: args.ridge,
            ..FitOptions::default()
        },
    };
    if !(args.ridge >= 0.0) {
        return Err(Error::Config(format!("ridge {} must be >= 0", args.ridge)).into());
    }
    let boot = (args.bootstrap > 0).then_some(BootstrapConfig {
        replicates: args.bootstrap,
        seed: args.seed,
        level: args.level,
    });
    if let Some(b) = &boot {
        b.validate()?;
    }
    let result = run_analysis(&cohort, &opts, boot.as_ref())?;

    // Render everything before touching the output directory.
    let mut files: Vec<(&str, Vec<u8>)> = vec![
        ("coefficients.csv", render(|b| report::write_coefficients(&result, b))?),
        ("distributions.csv", render(|b| report::write_distributions(&result, b))?),
        ("kolmogorov.csv", render(|b| report::write_kolmogorov(&result, b))?),
        ("contour.csv", render(|b| report::write_contour(&result, b))?),
    ];
    if args.dump_imputation {
        let tp = TiltParams::new(opts.alpha0[0], opts.alpha1[0]);
        files.push(("imputation.json", debug_dump(&result.estimates.benchmarks, &tp)?.into_bytes()));
    }
    if args.dump_replicates && boot.is_some() {
        files.push(("replicates.csv", render(|b| report::write_replicates(&result, b))?));
    }
    let warnings = collect_warnings(&result);
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut outputs: Vec<String> = files.iter().map(|(n, _)| n.to_string()).collect();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "coarseconv",
        version: env!("CARGO_PKG_VERSION"),
        seed: args.seed,
        config_hash: sha256_hex(&serde_json::to_vec(&(&opts, &boot))?),
        input_sha256: sha256_hex(&input),
        config: args,
        patients: [cohort.arm_size(coarseconv::Arm::Control), cohort.arm_size(coarseconv::Arm::Treated)],
        cavitation_weight: result.estimates.cavitation_weight,
        outputs,
        warnings,
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    manifest_bytes.push(b'\n');
    files.push(("manifest.json", manifest_bytes));

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut set = OutputSet {
        dir: args.out.clone(),
        written: Vec::new(),
        committed: false,
    };
    for (name, bytes) in &files {
        set.write(name, bytes)?;
    }
    set.committed = true;
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.k == 0 {
        return Err(Error::Config("k must be at least 1".into()).into());
    }
    let cohort = generate(&SimConfig {
        law: SimLaw::reference(args.k),
        n_per_arm: [args.n; 2],
        cavitation_prevalence: REFERENCE_PREVALENCE,
        seed: args.seed,
    })?;
    let bytes = render(|b| write_cohort(&cohort, b))?;
    if let Err(e) = fs::write(&args.out, bytes) {
        let _ = fs::remove_file(&args.out);
        return Err(e).with_context(|| format!("writing {}", args.out.display()));
    }
    Ok(())
}

fn coarsen(args: &CoarsenArgs) -> Result<()> {
    let cohort = read_cohort(&args.input, args.k)?;
    let bytes = render(|b| report::write_coarsening(&cohort, b))?;
    match &args.out {
        Some(path) => {
            if let Err(e) = fs::write(path, bytes) {
                let _ = fs::remove_file(path);
                return Err(e).with_context(|| format!("writing {}", path.display()));
            }
        }
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            out.write_all(&bytes)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn validate(args: &ValidateArgs) -> ExitCode {
    let results: Vec<CheckResult> = if args.full {
        validation::full_battery(args.seed)
    } else {
        validation::quick_battery(args.seed)
    };
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        failed += usize::from(!r.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} checks failed");
        ExitCode::FAILURE
    }
}

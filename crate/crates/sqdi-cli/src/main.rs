//! Command-line interface for the detection-identification engine.
//!
//! Subcommands:
//!
//! * `thresholds`   — print the calibrated threshold matrix, its error
//!   bounds, and the information delay bounds;
//! * `simulate`     — run a battery of simulated detection trials from a
//!   run configuration;
//! * `characterize` — estimate the operating characteristics of one
//!   epidemic table configuration;
//! * `kl`           — Monte Carlo Kullback–Leibler numbers for one stream;
//! * `detect`       — offline surveillance pipeline over a CSV of regional
//!   hospitalization counts.
//!
//! Exit codes: 0 on success (including a clean no-decision), 2 on input
//! errors, 3 on numerical/domain errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sqdi::config::RunConfig;
use sqdi::detector::{Detector, SimulatedSource, StreamId};
use sqdi::montecarlo::{
    estimate_add, estimate_kl, operating_characteristics, run_trials, ChangePoint,
    KlEstimateOptions, TableConfig, TrialPlan,
};
use sqdi::surveillance::{
    detect_offline, emit_report, ingest_csv, DetectOptions, ReportFormat,
};
use sqdi::thresholds::{pfa_bound, pmi_bound, BoundReport, KlSource, KlTable};

#[derive(Parser)]
#[command(
    name = "sqdi",
    about = "Multistream sequential change detection and identification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the threshold matrix, error bounds and delay bounds.
    Thresholds(ThresholdsArgs),
    /// Run a battery of simulated detection trials.
    Simulate(SimulateArgs),
    /// Operating characteristics of an epidemic table configuration.
    Characterize(CharacterizeArgs),
    /// Monte Carlo Kullback-Leibler numbers for one stream.
    Kl(KlArgs),
    /// Offline outbreak detection over a hospitalization CSV.
    Detect(DetectArgs),
}

#[derive(Args)]
struct ThresholdsArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Write the bound report as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Samples per MC Kullback-Leibler estimate feeding the bounds.
    #[arg(long, default_value_t = 100_000)]
    kl_samples: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Change point: a sample index, or "never".
    #[arg(long, default_value = "0")]
    nu: String,
    /// Affected stream (1-based).
    #[arg(long, default_value_t = 1)]
    affected: usize,
    /// Post-change parameter (comma-separated coordinates).
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    /// Number of trials.
    #[arg(short = 'M', long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 1000)]
    horizon: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write per-trial records (trial, stopped, T, d, nu) as CSV.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Write the per-step statistic trace of trial 0 as CSV
    /// (n, stream, log_L, log_Lhat, log_U_1..N).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Emit the summary as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CharacterizeArgs {
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    #[arg(long, default_value_t = 2.0)]
    k_check: f64,
    #[arg(long, default_value_t = 1.2)]
    q: f64,
    /// Pre-change rates are 1/(offset + i).
    #[arg(long, default_value_t = 100.0)]
    p_star_offset: f64,
    #[arg(long, default_value_t = 5)]
    n_streams: usize,
    /// Initial susceptible counts are v_scale*(i+1).
    #[arg(long, default_value_t = 5000.0)]
    v_scale: f64,
    #[arg(short = 'M', long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override the trial horizon (default 50x the theoretical delay).
    #[arg(long)]
    horizon: Option<u64>,
    /// Emit the row as JSON with full metadata instead of CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct KlArgs {
    #[arg(long)]
    config: PathBuf,
    /// Stream (1-based).
    #[arg(long, default_value_t = 1)]
    stream: usize,
    /// Parameter (comma-separated coordinates).
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    #[arg(short = 'K', long, default_value_t = 100_000)]
    samples: u64,
    /// "post" averages J along a post-change path; "pre" averages J*
    /// along a pre-change path.
    #[arg(long, default_value = "post")]
    regime: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    burn_in: u64,
    /// Literal from-the-start path average (no burn-in).
    #[arg(long)]
    no_burn_in: bool,
}

#[derive(Args)]
struct DetectArgs {
    /// Input CSV with columns date,region,hospitalized.
    #[arg(long)]
    csv: PathBuf,
    /// JSON object mapping region -> bed capacity.
    #[arg(long)]
    capacities: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    beta_epsilon: f64,
    #[arg(long, default_value_t = 2.0)]
    k_check: f64,
    #[arg(long, default_value_t = 21)]
    calibration_window: usize,
    /// Outbreak-rate multipliers as lo:hi:step.
    #[arg(long, default_value = "1.05:1.50:0.05")]
    q_grid: String,
    /// Known pre-change rates (comma-separated, one per region),
    /// overriding calibration.
    #[arg(long, value_delimiter = ',')]
    p_star: Option<Vec<f64>>,
    /// Window-limited mode with this many retained hypotheses.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Vertical reference marker in the SVG (e.g. a lockdown date).
    #[arg(long)]
    reference_date: Option<String>,
    /// Comma-separated subset of csv,json,svg.
    #[arg(long, default_value = "csv,json,svg")]
    formats: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Thresholds(args) => cmd_thresholds(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Characterize(args) => cmd_characterize(args),
        Command::Kl(args) => cmd_kl(args),
        Command::Detect(args) => cmd_detect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(error_code(&err))
        }
    }
}

fn error_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sqdi::Error>() {
        Some(e) => e.exit_code() as u8,
        None => 2,
    }
}

fn print_matrix(label: &str, m: &[Vec<f64>]) {
    println!("{label}:");
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>14.6}")).collect();
        println!("  [{}]", cells.join(", "));
    }
}

fn cmd_thresholds(args: ThresholdsArgs) -> anyhow::Result<()> {
    let config = RunConfig::from_path(&args.config)?;
    let built = config.build()?;
    let a = &built.thresholds;
    println!("provenance: {:?}", a.provenance());
    print_matrix("A", a.entries());
    println!(
        "pfa bounds (1/(1+A_ii)): {:?}",
        pfa_bound(a)
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
    );
    print_matrix("pmi bounds (1/A_ji)", &pmi_bound(a));
    if let Some(hp) = &built.hyperparams {
        println!(
            "schedule: rho_beta={:.6} m_star={} k_star={} rho_opt={:.6}",
            hp.rho_beta, hp.m_star, hp.k_star, hp.rho_opt
        );
    }

    // Delay bounds need the constraint matrix and KL numbers.
    let Some(beta) = &built.beta else {
        println!("(no beta matrix: delay bounds are only defined for beta-calibrated runs)");
        maybe_write_empty(&args.csv)?;
        return Ok(());
    };
    let mut pairs = Vec::with_capacity(built.models.len());
    let mut any_mc = false;
    for (i, model) in built.models.iter().enumerate() {
        let mut stream_pairs = Vec::new();
        for point in built.detector.grids[i].points() {
            let pair = match model.closed_form_kl(point)? {
                sqdi::models::KlForm::Exact { j_bar, j_star_bar } => (j_bar, j_star_bar),
                _ => {
                    any_mc = true;
                    let opts = KlEstimateOptions::default();
                    let post =
                        estimate_kl(model, point, args.kl_samples, true, args.seed, opts)?;
                    let pre = estimate_kl(
                        model,
                        point,
                        args.kl_samples,
                        false,
                        args.seed.wrapping_add(1),
                        opts,
                    )?;
                    (post.value, pre.value)
                }
            };
            stream_pairs.push(pair);
        }
        pairs.push(stream_pairs);
    }
    let kl_table = KlTable {
        pairs,
        source: if any_mc {
            KlSource::McEstimated
        } else {
            KlSource::ClosedForm
        },
    };
    let report = BoundReport::compute(beta, a, &kl_table, built.r)?;
    println!("delay bounds (r = {}):", built.r);
    for row in &report.rows {
        println!(
            "  stream {} theta[{}]: b^r={:.4} B^r={:.4} ({})",
            row.stream, row.theta_index, row.lower_r, row.upper_r, row.kl_source
        );
    }
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path)?;
        report.write_csv(file)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn maybe_write_empty(csv: &Option<PathBuf>) -> anyhow::Result<()> {
    if let Some(path) = csv {
        std::fs::write(path, "i,theta_index,b_r,B_r,kl_source\n")?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let config = RunConfig::from_path(&args.config)?;
    let built = config.build()?;
    let nu = match args.nu.as_str() {
        "never" | "inf" | "infinity" => ChangePoint::Never,
        "prior" => ChangePoint::FromPrior,
        s => ChangePoint::At(s.parse()?),
    };
    if args.affected == 0 || args.affected > built.models.len() {
        anyhow::bail!("--affected must be a 1-based stream index");
    }
    let affected = args.affected - 1;
    let theta = if args.theta.is_empty() {
        built.detector.grids[affected].point(0).to_vec()
    } else {
        args.theta.clone()
    };
    let plan = TrialPlan {
        m: args.trials,
        nu,
        affected,
        theta: theta.clone(),
        horizon: args.horizon,
        base_seed: args.seed,
        parallel: true,
    };
    let records = run_trials(&plan, &built.detector, &built.models, &built.thresholds)?;

    if let Some(path) = &args.records {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trial", "stopped", "T", "d", "nu"])?;
        for r in &records {
            w.write_record([
                r.trial.to_string(),
                r.stopped.to_string(),
                r.time.to_string(),
                r.decision.map_or(String::new(), |d| d.0.to_string()),
                r.nu.map_or("never".into(), |v| v.to_string()),
            ])?;
        }
        w.flush()?;
    }
    if let Some(path) = &args.trace {
        write_single_trace(path, &args, &built, affected, &theta)?;
    }

    let censored = records.iter().filter(|r| !r.stopped).count();
    let mut frequencies = vec![0u64; built.models.len()];
    for r in records.iter().flat_map(|r| r.decision) {
        frequencies[r.index()] += 1;
    }
    let delay = match nu {
        ChangePoint::At(v) => Some(estimate_add(&records, v, StreamId(args.affected))?),
        _ => None,
    };
    if args.json {
        let payload = serde_json::json!({
            "trials": args.trials,
            "seed": args.seed,
            "horizon": args.horizon,
            "censored": censored,
            "decision_counts": frequencies,
            "delay": delay.map(|e| serde_json::json!({
                "value": e.value, "se": e.se, "count": e.count
            })),
        });
        println!("{}", serde_json::to_string_pretty(&payload)?);
    } else {
        println!(
            "{} trials, {censored} censored, decision counts {frequencies:?}",
            args.trials
        );
        if let Some(e) = delay {
            println!("expected delay: {:.4} (se {:.4}, n={})", e.value, e.se, e.count);
        }
    }
    Ok(())
}

/// One seeded path, statistics dumped per step.
fn write_single_trace(
    path: &PathBuf,
    args: &SimulateArgs,
    built: &sqdi::config::BuiltConfig,
    affected: usize,
    theta: &[f64],
) -> anyhow::Result<()> {
    use rand::SeedableRng;
    let nu = match args.nu.as_str() {
        "never" | "inf" | "infinity" => None,
        "prior" => Some(0),
        s => Some(s.parse()?),
    };
    let rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mut source = SimulatedSource::new(&built.models, nu, affected, theta.to_vec(), rng);
    let mut detector = Detector::with_default_states(&built.detector, &built.models)?;
    let mut w = csv::Writer::from_path(path)?;
    let n_streams = built.models.len();
    let mut header = vec!["n".to_string(), "stream".to_string()];
    header.push("log_L".into());
    header.push("log_Lhat".into());
    header.extend((1..=n_streams).map(|j| format!("log_U_{j}")));
    w.write_record(&header)?;
    use sqdi::detector::ObservationSource;
    for _ in 0..args.horizon {
        let Some(obs) = source.next_observations()? else {
            break;
        };
        detector.update(&obs)?;
        for i in 0..n_streams {
            let mut rec = vec![
                detector.n().to_string(),
                (i + 1).to_string(),
                format!("{}", detector.log_l(i)),
                format!("{}", detector.log_l_hat(i)),
            ];
            rec.extend((0..n_streams).map(|j| format!("{}", detector.log_u(i, j))));
            w.write_record(&rec)?;
        }
        if detector.decision_step(&built.thresholds).is_some() {
            break;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_characterize(args: CharacterizeArgs) -> anyhow::Result<()> {
    let mut table = TableConfig::new(args.epsilon, args.k_check, args.q, args.p_star_offset);
    table.n_streams = args.n_streams;
    table.v_scale = args.v_scale;
    table.horizon = args.horizon;
    let oc = operating_characteristics(&table, args.trials, args.seed)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&oc)?);
    } else {
        println!(
            "{}",
            sqdi::montecarlo::OperatingCharacteristics::csv_header(args.n_streams)
        );
        println!("{}", oc.csv_row());
        eprintln!(
            "# M={} seed={} horizon={} censored post/null: {}/{}",
            oc.m, oc.seed, oc.horizon, oc.censored_post, oc.censored_null
        );
    }
    Ok(())
}

fn cmd_kl(args: KlArgs) -> anyhow::Result<()> {
    let config = RunConfig::from_path(&args.config)?;
    let built = config.build()?;
    if args.stream == 0 || args.stream > built.models.len() {
        anyhow::bail!("--stream must be a 1-based stream index");
    }
    let model = &built.models[args.stream - 1];
    let theta = if args.theta.is_empty() {
        built.detector.grids[args.stream - 1].point(0).to_vec()
    } else {
        args.theta.clone()
    };
    let post = match args.regime.as_str() {
        "post" => true,
        "pre" => false,
        other => anyhow::bail!("--regime must be post or pre, got {other}"),
    };
    let opts = KlEstimateOptions {
        burn_in: if args.no_burn_in { 0 } else { args.burn_in },
    };
    let e = estimate_kl(model, &theta, args.samples, post, args.seed, opts)?;
    let label = if post { "J_bar" } else { "J_star_bar" };
    println!(
        "{label} = {:.8} (se {:.3e}, K = {}, burn-in = {})",
        e.value, e.se, e.count, opts.burn_in
    );
    Ok(())
}

fn parse_q_grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        anyhow::bail!("--q-grid must be lo:hi:step");
    }
    let (lo, hi, step): (f64, f64, f64) =
        (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
    if !(step > 0.0) || hi < lo {
        anyhow::bail!("--q-grid must satisfy lo <= hi, step > 0");
    }
    let mut grid = Vec::new();
    let mut q = lo;
    while q <= hi + 1e-12 {
        grid.push(q);
        q += step;
    }
    Ok(grid)
}

fn cmd_detect(args: DetectArgs) -> anyhow::Result<()> {
    let caps_text = std::fs::read_to_string(&args.capacities)
        .map_err(|e| sqdi::Error::Input(format!("{}: {e}", args.capacities.display())))?;
    let capacities: BTreeMap<String, u64> = serde_json::from_str(&caps_text)
        .map_err(|e| sqdi::Error::Input(format!("capacity map: {e}")))?;
    let file = std::fs::File::open(&args.csv)
        .map_err(|e| sqdi::Error::Input(format!("{}: {e}", args.csv.display())))?;
    let series = ingest_csv(file, &capacities)?;

    let options = DetectOptions {
        q_grid: parse_q_grid(&args.q_grid)?,
        beta_epsilon: args.beta_epsilon,
        k_check: args.k_check,
        calibration_window: args.calibration_window,
        p_star_override: args.p_star.clone(),
        thresholds_override: None,
        window: args.window,
    };
    let result = detect_offline(&series, &options)?;

    let mut formats = Vec::new();
    for f in args.formats.split(',') {
        formats.push(match f.trim() {
            "csv" => ReportFormat::Csv,
            "json" => ReportFormat::Json,
            "svg" => ReportFormat::Svg,
            other => anyhow::bail!("unknown format {other}"),
        });
    }
    let reference = args
        .reference_date
        .as_deref()
        .map(|s| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d"))
        .transpose()
        .map_err(|e| sqdi::Error::Input(format!("reference date: {e}")))?;
    let files = emit_report(&result, &series, &args.out_dir, &formats, reference)?;

    match (&result.region, &result.detection_date) {
        (Some(region), Some(date)) => {
            println!(
                "detected change in region {region} on {date} (T = {} days)",
                result.outcome.time
            );
        }
        _ => println!(
            "no detection over {} days ({} regions)",
            result.outcome.time,
            series.len()
        ),
    }
    if result.zero_state_days > 0 {
        eprintln!(
            "note: {} zero free-bed days were displaced before LLR evaluation",
            result.zero_state_days
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

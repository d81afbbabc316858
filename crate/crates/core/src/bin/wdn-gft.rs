use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use wdn_gft::baselines;
use wdn_gft::dynsim::{self, SignalMatrix};
use wdn_gft::error::{Error, Result};
use wdn_gft::eval::{self, CompareOptions, Evaluator};
use wdn_gft::gft::{self, GftOperator};
use wdn_gft::graph::{self, NetworkGraph, SyntheticNetwork};
use wdn_gft::linalg;
use wdn_gft::sampling::{self, SamplingPlan, Scheme};

const MANIFEST_SCHEMA: &str = "wdn-gft/manifest/v1";
const REPORT_SCHEMA: &str = "wdn-gft/recovery-report/v1";

/// Data-driven graph Fourier sampling of network signals.
#[derive(Debug, Parser)]
#[command(name = "wdn-gft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the transport generator over a scenario bank.
    Simulate(SimulateArgs),
    /// Build the GFT operator of a signal.
    BuildGft(BuildArgs),
    /// Greedy sensor selection on an operator.
    Select(SelectArgs),
    /// Reconstruct a signal from its sampled rows.
    Recover(RecoverArgs),
    /// RMSE over a grid of band and sample sizes.
    Sweep(SweepArgs),
    /// Minimum sampling size of every scheme over a bank of signals.
    Compare(CompareArgs),
    /// Per-frequency magnitude sums under the GFT, Laplacian and PCA bases.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
struct SignalInput {
    /// Signal CSV (one row per node, one column per step).
    #[arg(long)]
    signal: PathBuf,
    /// The first column of the signal CSV holds node ids.
    #[arg(long)]
    header: bool,
    /// Graph file; supplies node ids for headerless CSVs.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Graph file; the built-in 102-node network when omitted.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Scenario bank file; a generated default bank when omitted.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Scenarios in a generated bank.
    #[arg(long, default_value_t = 100, conflicts_with = "scenarios")]
    count: usize,
    /// Time steps per generated scenario.
    #[arg(long, default_value_t = 168, conflicts_with = "scenarios")]
    steps: usize,
    /// Seed of the generated bank.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Prefix every CSV row with its node id.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    input: SignalInput,
    /// Operator metadata path; the basis goes to `<stem>.basis.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    operator: PathBuf,
    /// Band size |R|; the operator's cut-off when omitted.
    #[arg(long)]
    band: Option<usize>,
    /// Number of sensors |S|; equal to the band when omitted.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    #[arg(long)]
    operator: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Full signal; its plan rows are used as samples and it is the reference
    /// for the reported RMSE.
    #[arg(long, conflicts_with = "samples")]
    signal: Option<PathBuf>,
    /// Sampled rows only, node id first.
    #[arg(long, required_unless_present = "signal")]
    samples: Option<PathBuf>,
    /// The full signal CSV carries node ids.
    #[arg(long, requires = "signal")]
    header: bool,
    /// Estimate output (CSV with node ids).
    #[arg(long)]
    out: PathBuf,
    /// Recovery report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    input: SignalInput,
    #[arg(long, default_value = "gft")]
    scheme: Scheme,
    /// Grid step along both axes.
    #[arg(long, default_value_t = 2, conflicts_with = "full")]
    step: usize,
    /// Every integer on both axes.
    #[arg(long)]
    full: bool,
    /// Seed of the compressed-sensing sensor order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Directory of signal CSVs (as written by `simulate`).
    #[arg(long)]
    bank: PathBuf,
    /// Graph file; node ids for headerless CSVs and the Laplacian scheme.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// The CSVs carry node ids.
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = eval::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Comma-separated subset of gft, laplacian, cs_pca, cs_dct.
    #[arg(long, value_delimiter = ',', default_value = "gft,laplacian,cs_pca,cs_dct")]
    schemes: Vec<Scheme>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[command(flatten)]
    input: SignalInput,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
}

/// Bare numeric CSVs (signals, estimates, bases) cannot carry a header line.
const MATRIX_CSV_SCHEMA: &str = "wdn-gft/matrix-csv/v1";

/// Schema named inside an output file, or the bare-matrix schema.
fn schema_of(bytes: &[u8], path: &Path) -> Option<String> {
    let text = std::str::from_utf8(bytes).ok()?;
    if let Some(rest) = text.strip_prefix("# schema=") {
        return rest.split_whitespace().next().map(str::to_string);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str::<Value>(text).ok()?["schema"].as_str().map(str::to_string),
        Some("csv") => Some(MATRIX_CSV_SCHEMA.to_string()),
        _ => None,
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    schema: &'static str,
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    parameters: Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: linalg::bytes_checksum(&fs::read(path)?),
        schema: None,
    })
}

/// Output digests use bare file names so relocating a run keeps its manifest.
fn output_digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        path: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: linalg::bytes_checksum(&bytes),
        schema: schema_of(&bytes, path),
    })
}

fn write_manifest(
    path: &Path,
    command: &'static str,
    seed: Option<u64>,
    parameters: Value,
    inputs: &[&Path],
    outputs: &[PathBuf],
) -> Result<()> {
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        tool: "wdn-gft",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        parameters,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| output_digest(p)).collect::<Result<_>>()?,
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// `<out>.manifest.json` beside a single-file output.
fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn load_signal(input: &SignalInput) -> Result<(SignalMatrix, Option<NetworkGraph>)> {
    let graph = input.graph.as_ref().map(graph::load_graph).transpose()?;
    let x = if input.header {
        let x = dynsim::load_signal_csv_with_ids(&input.signal)?;
        if let Some(g) = &graph {
            if x.node_ids() != g.node_ids().as_slice() {
                return Err(Error::parse(
                    input.signal.display().to_string(),
                    "node ids do not match the graph",
                ));
            }
        }
        x
    } else {
        let g = graph.as_ref().ok_or_else(|| {
            Error::InvalidArgument("a headerless signal needs --graph for its node ids (or pass --header)".into())
        })?;
        dynsim::load_signal_csv(&input.signal, &g.node_ids())?
    };
    Ok((x, graph))
}

fn inputs_of(input: &SignalInput) -> Vec<&Path> {
    let mut v = vec![input.signal.as_path()];
    if let Some(g) = &input.graph {
        v.push(g.as_path());
    }
    v
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let mut inputs: Vec<&Path> = Vec::new();
    let mut outputs = Vec::new();
    let g = match &args.graph {
        Some(p) => {
            inputs.push(p);
            graph::load_graph(p)?
        }
        None => {
            let g = SyntheticNetwork::default().build()?;
            let p = args.out.join("graph.json");
            g.save(&p)?;
            outputs.push(p);
            g
        }
    };
    let bank = match &args.scenarios {
        Some(p) => {
            inputs.push(p);
            dynsim::bank_from_json(&g, &fs::read_to_string(p)?, &p.display().to_string())?
        }
        None => {
            let bank = dynsim::default_scenario_bank(&g, args.count, args.steps, args.seed)?;
            let p = args.out.join("bank.json");
            fs::write(&p, dynsim::bank_to_json(&g, &bank) + "\n")?;
            outputs.push(p);
            bank
        }
    };
    let mut ranks = serde_json::Map::new();
    for (i, sc) in bank.iter().enumerate() {
        let x = dynsim::simulate_dynamics(&g, &sc.config)?;
        let p = args.out.join(format!("{}.csv", sc.id));
        dynsim::save_signal_csv(&p, &x, args.header)?;
        outputs.push(p);
        ranks.insert(sc.id.clone(), json!(x.rank()));
        eprintln!("simulate: {}/{} {} rank {}", i + 1, bank.len(), sc.id, x.rank());
    }
    let params = json!({
        "scenarios": bank.len(),
        "header": args.header,
        "rank_tolerance": dynsim::DEFAULT_RANK_TOLERANCE,
        "ranks": ranks,
    });
    write_manifest(&args.out.join("manifest.json"), "simulate", Some(args.seed), params, &inputs, &outputs)
}

fn build_gft(args: &BuildArgs) -> Result<()> {
    let (x, _) = load_signal(&args.input)?;
    let op = gft::build_gft(&x)?;
    op.save(&args.out)?;
    let basis = args.out.with_file_name(format!(
        "{}.basis.csv",
        args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    let params = json!({
        "cutoff": op.cutoff(),
        "orthogonality_defect": linalg::orthogonality_defect(op.basis()),
    });
    write_manifest(
        &manifest_path(&args.out),
        "build-gft",
        None,
        params,
        &inputs_of(&args.input),
        &[args.out.clone(), basis],
    )
}

fn select(args: &SelectArgs) -> Result<()> {
    let op = GftOperator::load(&args.operator)?;
    let band = args.band.unwrap_or(op.cutoff());
    let budget = args.budget.unwrap_or(band);
    let plan = sampling::greedy_select(&op, band, budget)?;
    plan.save(&args.out, op.node_ids())?;
    let params = json!({ "band": band, "budget": budget, "sigma_min": plan.sigma_min });
    write_manifest(
        &manifest_path(&args.out),
        "select",
        None,
        params,
        &[&args.operator],
        std::slice::from_ref(&args.out),
    )
}

#[derive(Debug, Serialize)]
struct ReportFile {
    schema: &'static str,
    scheme: Scheme,
    nodes: Vec<String>,
    band_size: usize,
    sigma_min: f64,
    rmse: Option<f64>,
    per_node_rmse: Option<Vec<(String, f64)>>,
    flags: Vec<sampling::RecoveryFlag>,
}

fn recover(args: &RecoverArgs) -> Result<()> {
    let op = GftOperator::load(&args.operator)?;
    let ids = op.node_ids().to_vec();
    let plan = SamplingPlan::load(&args.plan, &ids)?;
    if plan.operator_ref != op.checksum() {
        return Err(Error::parse(
            args.plan.display().to_string(),
            "plan was selected on a different operator",
        ));
    }
    let mut inputs: Vec<&Path> = vec![&args.operator, &args.plan];
    let (samples, truth) = if let Some(p) = &args.signal {
        inputs.push(p);
        let x = if args.header {
            dynsim::load_signal_csv_with_ids(p)?
        } else {
            dynsim::load_signal_csv(p, &ids)?
        };
        if x.node_ids() != ids.as_slice() {
            return Err(Error::parse(p.display().to_string(), "node ids do not match the operator"));
        }
        (sampling::sample(x.data(), &plan)?, Some(x))
    } else {
        let p = args.samples.as_ref().expect("clap requires one input");
        inputs.push(p);
        let s = dynsim::load_signal_csv_with_ids(p)?;
        let expected: Vec<String> = plan.nodes.iter().map(|&i| ids[i].clone()).collect();
        if s.node_ids() != expected.as_slice() {
            return Err(Error::parse(p.display().to_string(), "sample rows must follow the plan's node order"));
        }
        (s.data().clone(), None)
    };
    let mut rep = sampling::recover(&samples, &op, &plan)?;
    if let Some(x) = &truth {
        rep.score(x.data())?;
    }
    let estimate = SignalMatrix::new(rep.estimate.clone(), ids.clone(), dynsim::DEFAULT_TIMESTEP_SECONDS)?;
    dynsim::save_signal_csv(&args.out, &estimate, true)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(rp) = &args.report {
        let file = ReportFile {
            schema: REPORT_SCHEMA,
            scheme: rep.scheme,
            nodes: plan.nodes.iter().map(|&i| ids[i].clone()).collect(),
            band_size: plan.band.len(),
            sigma_min: plan.sigma_min,
            rmse: rep.rmse,
            per_node_rmse: rep
                .per_node_rmse
                .as_ref()
                .map(|v| ids.iter().cloned().zip(v.iter().copied()).collect()),
            flags: rep.flags.clone(),
        };
        fs::write(rp, serde_json::to_string_pretty(&file)? + "\n")?;
        outputs.push(rp.clone());
    }
    if let Some(e) = rep.rmse {
        println!("rmse {e:e}");
    }
    write_manifest(
        &manifest_path(&args.out),
        "recover",
        None,
        json!({ "band_size": plan.band.len(), "samples": plan.nodes.len() }),
        &inputs,
        &outputs,
    )
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let (x, g) = load_signal(&args.input)?;
    let spectrum = g
        .as_ref()
        .filter(|_| args.scheme == Scheme::Laplacian)
        .map(|g| graph::normalized_laplacian(g).and_then(|l| graph::laplacian_spectrum(&l)))
        .transpose()?;
    let ev = Evaluator::new(
        args.input.signal.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        &x,
        spectrum.as_ref(),
        args.seed,
    )?;
    let n = x.node_count();
    let step = if args.full { 1 } else { args.step };
    let r = x.rank();
    let axis = eval::grid_axis(n, step, &[r, r.saturating_sub(10)]);
    let mut cells = Vec::new();
    for (i, &b) in axis.iter().enumerate() {
        let row = ev.sweep(args.scheme, &[b], &axis)?;
        cells.extend(row.cells);
        eprintln!("sweep: |R| = {b} ({}/{})", i + 1, axis.len());
    }
    let result = eval::SweepResult {
        scenario_id: ev.id().to_string(),
        scheme: args.scheme,
        rank: r,
        cells,
    };
    fs::write(&args.out, result.to_csv()?)?;
    let params = json!({ "scheme": args.scheme, "step": step, "rank": r, "axis": axis });
    write_manifest(
        &manifest_path(&args.out),
        "sweep",
        Some(args.seed),
        params,
        &inputs_of(&args.input),
        std::slice::from_ref(&args.out),
    )
}

fn compare(args: &CompareArgs) -> Result<()> {
    let g = args.graph.as_ref().map(graph::load_graph).transpose()?;
    let mut files: Vec<PathBuf> = fs::read_dir(&args.bank)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no signal CSVs in {}", args.bank.display())));
    }
    let mut bank = Vec::with_capacity(files.len());
    for p in &files {
        let x = if args.header {
            dynsim::load_signal_csv_with_ids(p)?
        } else {
            let g = g.as_ref().ok_or_else(|| {
                Error::InvalidArgument("headerless signals need --graph for their node ids".into())
            })?;
            dynsim::load_signal_csv(p, &g.node_ids())?
        };
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        bank.push((id, x));
    }
    let needs_graph = args.schemes.contains(&Scheme::Laplacian);
    let spectrum = match (&g, needs_graph) {
        (Some(g), true) => Some(graph::laplacian_spectrum(&graph::normalized_laplacian(g)?)?),
        (None, true) => return Err(Error::InvalidArgument("the laplacian scheme needs --graph".into())),
        _ => None,
    };
    let opts = CompareOptions {
        threshold: args.threshold,
        schemes: args.schemes.clone(),
        seed: args.seed,
        jobs: args.jobs,
        solver: baselines::L1Solver::default(),
    };
    let total = bank.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let table = eval::compare_schemes(&bank, spectrum.as_ref(), &opts, &|row| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        eprintln!("compare: {k}/{total} {} rank {}", row.scenario_id, row.rank);
    })?;
    fs::write(&args.out, table.to_csv()?)?;
    let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let by_rank = args.out.with_file_name(format!("{stem}.by_rank.csv"));
    let mut text = format!("# schema={}/by-rank\nrank,count,gft,laplacian,cs_pca,cs_dct\n", eval::COMPARISON_SCHEMA);
    let f = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for m in table.by_rank() {
        text += &format!(
            "{},{},{},{},{},{}\n",
            m.rank,
            m.count,
            f(m.gft),
            f(m.laplacian),
            f(m.cs_pca),
            f(m.cs_dct)
        );
    }
    fs::write(&by_rank, text)?;
    let mut inputs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    if let Some(p) = &args.graph {
        inputs.push(p);
    }
    let params = json!({
        "threshold": args.threshold,
        "schemes": args.schemes,
        "scenarios": total,
        "solver": {
            "tolerance": opts.solver.tolerance,
            "max_iterations": opts.solver.max_iterations,
            "lambda_floor": opts.solver.lambda_floor,
        },
    });
    write_manifest(
        &manifest_path(&args.out),
        "compare",
        Some(args.seed),
        params,
        &inputs,
        &[args.out.clone(), by_rank],
    )
}

fn profile(args: &ProfileArgs) -> Result<()> {
    let (x, g) = load_signal(&args.input)?;
    let op = gft::build_gft(&x)?;
    let spectrum = g
        .as_ref()
        .map(|g| graph::normalized_laplacian(g).and_then(|l| graph::laplacian_spectrum(&l)))
        .transpose()?;
    let pca = baselines::build_pca_basis(&x)?;
    let prof = eval::frequency_profile(x.data(), &op, spectrum.as_ref(), Some(&pca))?;
    fs::write(&args.out, prof.to_csv())?;
    let r = x.rank();
    let params = json!({
        "rank": r,
        "gft_mass_within_rank": eval::mass_within(&prof.gft, r),
        "laplacian_mass_within_rank": prof.laplacian.as_ref().map(|p| eval::mass_within(p, r)),
        "pca_mass_within_rank": prof.pca.as_ref().map(|p| eval::mass_within(p, r)),
    });
    write_manifest(
        &manifest_path(&args.out),
        "profile",
        None,
        params,
        &inputs_of(&args.input),
        std::slice::from_ref(&args.out),
    )
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::BuildGft(a) => build_gft(a),
        Command::Select(a) => select(a),
        Command::Recover(a) => recover(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::Profile(a) => profile(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;

use trimatch_core::calibration::{
    self, CalibrationSample, FitOptions, WeightsFile, collect_samples, downsample, fit_weights, nearest_edge_record,
    read_samples_csv, write_samples_csv,
};
use trimatch_core::config::MatchParams;
use trimatch_core::eval::{TruthRoute, TruthSet, evaluate};
use trimatch_core::history::HistoryStore;
use trimatch_core::matcher::{
    FleetState, FusionMatcher, MatchConfig, match_fleet, matches_geojson, read_matches_csv, write_matches_csv,
};
use trimatch_core::network::{RoadNetwork, write_links_csv, write_nodes_csv};
use trimatch_core::synth::{FleetSpec, GridSpec, generate_synthetic, grid_free_flow, grid_records};
use trimatch_core::traffic::{
    DEFAULT_DECAY, Predictor, SgmnModel, StateVector, TrafficConfig, TrainOptions, read_states_csv, write_states_csv,
};
use trimatch_core::trajectory::{Trajectory, read_trajectories, write_probes_csv};
use trimatch_core::{Error, network};

#[derive(Parser)]
#[command(name = "trimatch", version, about = "Low-frequency map matching with speed, history and traffic scores")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match probe trajectories to the road network
    Match(MatchCmd),
    /// Fit fusion weights from dense anchor trajectories
    Calibrate(CalibrateCmd),
    /// Train the spectral traffic-state predictor
    TrainPredictor(TrainCmd),
    /// Score match results against reference routes (JSON on stdout)
    Evaluate(EvaluateCmd),
    /// Thin trajectories to a longer probing interval
    Downsample(DownsampleCmd),
    /// Write a synthetic grid network, fleet probes and their true routes
    Synth(SynthCmd),
}

#[derive(Args)]
struct NetworkArgs {
    /// Nodes CSV: node_id,lon,lat
    #[arg(long)]
    nodes: PathBuf,
    /// Links CSV: link_id,from_node,to_node[,length_m,bearing_deg]
    #[arg(long)]
    links: PathBuf,
}

#[derive(Args)]
struct ContextArgs {
    /// JSON file with matcher parameters; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Earlier match results (history log) used for the C and A scores
    #[arg(long, requires = "history_probes")]
    history_log: Option<PathBuf>,
    /// Probes of the trajectories named in the history log
    #[arg(long, requires = "history_log")]
    history_probes: Option<PathBuf>,
    /// Trained predictor checkpoint; the decayed average of recent states is used otherwise
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// Disable the traffic-state score entirely
    #[arg(long)]
    no_traffic: bool,
    /// Weights JSON written by `calibrate`; overridden by --weights
    #[arg(long)]
    weights_file: Option<PathBuf>,
    /// Use the weights rounded to tenths from the weights file
    #[arg(long, requires = "weights_file")]
    rounded: bool,
    #[command(flatten)]
    params: MatchParams,
}

#[derive(Args)]
struct MatchCmd {
    #[command(flatten)]
    network: NetworkArgs,
    /// Probes CSV: vehicle_id,timestamp,lon,lat,speed_mps,bearing_deg
    #[arg(long)]
    probes: PathBuf,
    /// Output match CSV
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    context: ContextArgs,
    /// Also write the matches as GeoJSON
    #[arg(long)]
    geojson: Option<PathBuf>,
    /// Write the history log including the new matches
    #[arg(long)]
    history_out: Option<PathBuf>,
    /// Write the aggregated traffic-state vectors
    #[arg(long)]
    states_out: Option<PathBuf>,
    /// Write per-trajectory wall times (trajectory_id,seconds)
    #[arg(long)]
    timings_out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateCmd {
    #[command(flatten)]
    network: NetworkArgs,
    /// Dense anchor probes CSV (about 15 s between probes)
    #[arg(long)]
    probes: Option<PathBuf>,
    /// Reuse a samples CSV instead of generating samples
    #[arg(long, conflicts_with = "probes")]
    samples_in: Option<PathBuf>,
    /// Probing intervals of the synthesized low-frequency copies (s)
    #[arg(long, value_delimiter = ',', default_value = "30,60,120,180,240,300")]
    intervals: Vec<f64>,
    /// Write the generated samples (S_P,S_C,S_A,Y)
    #[arg(long)]
    samples_out: Option<PathBuf>,
    /// Output weights JSON
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = FitOptions::default().max_epochs)]
    epochs: usize,
    #[arg(long, default_value_t = FitOptions::default().learning_rate)]
    learning_rate: f64,
    /// Seed of the train/validation/test split
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    context: ContextArgs,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    network: NetworkArgs,
    /// State vectors CSV: interval_j,link_id,X
    #[arg(long)]
    states: PathBuf,
    /// Output checkpoint JSON
    #[arg(long)]
    out: PathBuf,
    /// Number of lags k_max
    #[arg(long, default_value_t = trimatch_core::traffic::DEFAULT_K_MAX)]
    k_max: usize,
    /// Ratio of the geometric lag weights
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    decay: f64,
    #[arg(long, default_value_t = TrainOptions::default().max_epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainOptions::default().learning_rate)]
    learning_rate: f64,
    /// Mini-batch size; full-batch training when absent
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initialize filters with powers of the unscaled eigenvalues
    #[arg(long)]
    literal_init: bool,
    /// Edge split length δ in metres
    #[arg(long, default_value_t = network::DEFAULT_SPLIT_LENGTH)]
    split_length: f64,
}

#[derive(Args)]
struct EvaluateCmd {
    #[command(flatten)]
    network: NetworkArgs,
    /// Match CSV to score
    #[arg(long)]
    matches: PathBuf,
    /// Reference match CSV (for example the `truth.csv` written by `synth`)
    #[arg(long)]
    truth: PathBuf,
    /// Per-trajectory wall times written by `match --timings-out`
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Edge split length δ in metres
    #[arg(long, default_value_t = network::DEFAULT_SPLIT_LENGTH)]
    split_length: f64,
}

#[derive(Args)]
struct DownsampleCmd {
    #[arg(long)]
    probes: PathBuf,
    /// Interval to keep (s); a whole multiple of each trajectory's interval
    #[arg(long)]
    interval: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = trimatch_core::trajectory::DEFAULT_TRIP_GAP)]
    trip_gap: f64,
}

#[derive(Args)]
struct SynthCmd {
    /// Directory receiving nodes.csv, links.csv, probes.csv and truth.csv
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = GridSpec::default().rows)]
    rows: usize,
    #[arg(long, default_value_t = GridSpec::default().cols)]
    cols: usize,
    /// Block length (m)
    #[arg(long, default_value_t = GridSpec::default().spacing)]
    spacing: f64,
    #[arg(long, default_value_t = GridSpec::default().arterial_every)]
    arterial_every: usize,
    #[arg(long, default_value_t = FleetSpec::default().vehicles)]
    vehicles: usize,
    #[arg(long, default_value_t = FleetSpec::default().days)]
    days: usize,
    #[arg(long, default_value_t = FleetSpec::default().trips_per_day)]
    trips_per_day: usize,
    /// Probability of repeating the habitual trip
    #[arg(long, default_value_t = FleetSpec::default().habit_strength)]
    habit_strength: f64,
    #[arg(long)]
    no_congestion: bool,
    /// Probing interval (s)
    #[arg(long, default_value_t = FleetSpec::default().interval)]
    interval: f64,
    /// Position noise (m)
    #[arg(long, default_value_t = FleetSpec::default().gps_sigma)]
    gps_sigma: f64,
    #[arg(long, default_value_t = FleetSpec::default().speed_sigma)]
    speed_sigma: f64,
    #[arg(long, default_value_t = FleetSpec::default().bearing_sigma)]
    bearing_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = network::DEFAULT_SPLIT_LENGTH)]
    split_length: f64,
}

enum CliError {
    Core(Error),
    Empty(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Empty(_) => 3,
            CliError::Core(e) => match e {
                Error::Format(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::DanglingNode { .. }
                | Error::NonPositiveLength(_)
                | Error::SelfLoop(_)
                | Error::DuplicateLink(_)
                | Error::DuplicateNode(_)
                | Error::DuplicateRecord(_)
                | Error::DisconnectedPath(_)
                | Error::Misaligned(_) => 2,
                Error::InsufficientData(_) | Error::EmptyPath => 3,
                _ => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Empty(m) => m.clone(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Match(c) => run_match(c),
        Command::Calibrate(c) => run_calibrate(c),
        Command::TrainPredictor(c) => run_train(c),
        Command::Evaluate(c) => run_evaluate(c),
        Command::Downsample(c) => run_downsample(c),
        Command::Synth(c) => run_synth(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_network(args: &NetworkArgs, split_length: f64) -> CliResult<RoadNetwork> {
    Ok(RoadNetwork::from_csv(&args.nodes, &args.links, split_length)?)
}

/// Parameters, stores and predictor shared by `match` and `calibrate`.
struct Context {
    cfg: MatchConfig,
    state: FleetState,
    predictor: Option<Predictor>,
}

fn resolve_params(args: &ContextArgs) -> CliResult<MatchParams> {
    let file = match &args.config {
        Some(p) => MatchParams::load(p)?,
        None => MatchParams::default(),
    };
    Ok(args.params.clone().or(file))
}

fn build_context(args: &ContextArgs, params: &MatchParams, net: &RoadNetwork) -> CliResult<Context> {
    let mut cfg = params.match_config()?;
    if args.params.weights.is_none() {
        if let Some(path) = &args.weights_file {
            let file = WeightsFile::load(path)?;
            cfg.weights = if args.rounded {
                calibration::round_to_tenths(&file.weights()?)
            } else {
                file.weights()?
            };
        }
    }
    let mut state = FleetState::new(net, &cfg);
    if let (Some(log), Some(probes)) = (&args.history_log, &args.history_probes) {
        let trajectories = read_trajectories(probes, params.trip_gap())?;
        let history = HistoryStore::load_log(net, log, &trajectories)?;
        for r in history.records() {
            state.traffic.ingest(net, r);
        }
        info!("history: {} trajectories", history.len());
        state.history = history;
    }
    let predictor = if args.no_traffic {
        None
    } else if let Some(path) = &args.predictor {
        Some(Predictor::Sgmn(SgmnModel::load(net.spectrum()?, path)?))
    } else {
        Some(Predictor::naive(&cfg.traffic))
    };
    Ok(Context { cfg, state, predictor })
}

fn run_match(c: MatchCmd) -> CliResult<()> {
    let params = resolve_params(&c.context)?;
    let net = load_network(&c.network, params.split_length())?;
    let trajectories = read_trajectories(&c.probes, params.trip_gap())?;
    if trajectories.is_empty() {
        return Err(CliError::Empty(format!("{}: no probes", c.probes.display())));
    }
    let mut ctx = build_context(&c.context, &params, &net)?;
    let outcomes = match_fleet(&net, &ctx.cfg, &trajectories, &mut ctx.state, ctx.predictor.as_ref())?;
    let records: Vec<_> = outcomes.iter().map(|o| o.record.clone()).collect();
    let matched: usize = records.iter().map(|r| r.matched_count()).sum();
    info!("matched {matched} probes in {} trajectories", records.len());
    write_matches_csv(&c.out, &net, &records)?;
    if let Some(p) = &c.geojson {
        write_json(p, &matches_geojson(&net, &records))?;
    }
    if let Some(p) = &c.history_out {
        ctx.state.history.write_log(&net, p)?;
    }
    if let Some(p) = &c.states_out {
        write_states_csv(p, &net, &ctx.state.traffic.states())?;
    }
    if let Some(p) = &c.timings_out {
        let mut w = csv::Writer::from_path(p).map_err(Error::from)?;
        w.write_record(["trajectory_id", "seconds"]).map_err(Error::from)?;
        for o in &outcomes {
            w.write_record([o.record.trajectory_id.clone(), o.elapsed.to_string()])
                .map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
    }
    if matched == 0 {
        return Err(CliError::Empty("no probe could be matched".into()));
    }
    Ok(())
}

/// Prints to stdout, treating a closed pipe as success.
fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Core(Error::from(e))),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).map_err(Error::from)?).map_err(Error::from)?;
    Ok(())
}

fn run_calibrate(c: CalibrateCmd) -> CliResult<()> {
    let params = resolve_params(&c.context)?;
    let net = load_network(&c.network, params.split_length())?;
    let samples: Vec<CalibrationSample> = match (&c.samples_in, &c.probes) {
        (Some(p), _) => read_samples_csv(p)?,
        (None, Some(probes)) => {
            let ctx = build_context(&c.context, &params, &net)?;
            let anchors = read_trajectories(probes, params.trip_gap())?;
            generate_samples(&net, &ctx, &anchors, &c.intervals)?
        }
        (None, None) => {
            return Err(CliError::Core(Error::InvalidParameter(
                "either --probes or --samples-in is required".into(),
            )));
        }
    };
    if samples.is_empty() {
        return Err(CliError::Empty("no calibration samples".into()));
    }
    if let Some(p) = &c.samples_out {
        write_samples_csv(p, &samples)?;
    }
    let opts = FitOptions {
        max_epochs: c.epochs,
        learning_rate: c.learning_rate,
        seed: c.seed,
        ..FitOptions::default()
    };
    let fit = fit_weights(&samples, &opts)?;
    fit.weights_file().save(&c.out)?;
    let summary = json!({
        "samples": samples.len(),
        "weights": fit.weights,
        "rounded": fit.rounded,
        "bias": fit.bias,
        "degenerate": fit.degenerate,
        "epochs": fit.train_loss.len(),
        "train_loss": fit.train_loss.last(),
        "validation_loss": fit.validation_loss.last(),
        "test_loss": fit.test_loss,
    });
    print_json(&summary)?;
    Ok(())
}

fn generate_samples(
    net: &RoadNetwork,
    ctx: &Context,
    anchors: &[Trajectory],
    intervals: &[f64],
) -> CliResult<Vec<CalibrationSample>> {
    let matcher = FusionMatcher {
        net,
        cfg: &ctx.cfg,
        history: &ctx.state.history,
        traffic: &ctx.state.traffic,
        predictor: ctx.predictor.as_ref(),
    };
    let per_anchor: Vec<Vec<CalibrationSample>> = anchors
        .par_iter()
        .map(|tr| {
            let truth = match TruthRoute::from_record(&nearest_edge_record(tr, net, ctx.cfg.radius)) {
                Ok(t) => t,
                Err(e) => {
                    warn!("{}: no reference route ({e})", tr.id);
                    return Vec::new();
                }
            };
            let mut out = Vec::new();
            for &dt in intervals {
                let thinned = match downsample(tr, dt) {
                    Ok(t) if t.len() >= 2 => t,
                    Ok(_) => continue,
                    Err(e) => {
                        warn!("{}: skipping {dt} s ({e})", tr.id);
                        continue;
                    }
                };
                match collect_samples(&matcher, &thinned, &truth) {
                    Ok(s) => out.extend(s),
                    Err(e) => warn!("{}: {e}", tr.id),
                }
            }
            out
        })
        .collect();
    Ok(per_anchor.into_iter().flatten().collect())
}

fn run_train(c: TrainCmd) -> CliResult<()> {
    let net = load_network(&c.network, c.split_length)?;
    let states = read_states_csv(&c.states, &net)?;
    let (Some(first), Some(last)) = (states.first(), states.last()) else {
        return Err(CliError::Empty(format!("{}: no state vectors", c.states.display())));
    };
    // intervals without observations hold the uniform state, as in the live log
    let by_interval: BTreeMap<i64, &StateVector> = states.iter().map(|s| (s.interval, s)).collect();
    let sequence: Vec<Vec<f64>> = (first.interval..=last.interval)
        .map(|j| match by_interval.get(&j) {
            Some(s) => s.x.clone(),
            None => StateVector::uniform(j, net.links.len()).x,
        })
        .collect();
    let spectrum = net.spectrum()?;
    let mut model = if c.literal_init {
        SgmnModel::with_literal_init(spectrum, c.k_max, c.decay)?
    } else {
        SgmnModel::new(spectrum, c.k_max, c.decay)?
    };
    let opts = TrainOptions {
        max_epochs: c.epochs,
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
        seed: c.seed,
        ..TrainOptions::default()
    };
    let report = model.train(&sequence, &opts)?;
    model.save(&c.out)?;
    let summary = json!({
        "intervals": sequence.len(),
        "epochs": report.train_loss.len(),
        "best_epoch": report.best_epoch,
        "best_validation_loss": report.best_validation_loss,
        "test_loss": report.test_loss,
        "final_learning_rate": report.final_learning_rate,
    });
    print_json(&summary)?;
    Ok(())
}

fn run_evaluate(c: EvaluateCmd) -> CliResult<()> {
    let net = load_network(&c.network, c.split_length)?;
    let records = read_matches_csv(&c.matches, &net)?;
    if records.is_empty() {
        return Err(CliError::Empty(format!("{}: no match records", c.matches.display())));
    }
    let truth = TruthSet::from_records(&read_matches_csv(&c.truth, &net)?)?;
    let timings = match &c.timings {
        Some(p) => Some(read_timings(p, &records)?),
        None => None,
    };
    let config = json!({
        "matches": c.matches.display().to_string(),
        "truth": c.truth.display().to_string(),
        "split_length": c.split_length,
    });
    let report = evaluate(&records, &truth, timings.as_deref(), config)?;
    print_json(&report)?;
    Ok(())
}

/// Wall times aligned with `records`.
fn read_timings(path: &Path, records: &[trimatch_core::history::MatchRecord]) -> CliResult<Vec<f64>> {
    #[derive(serde::Deserialize)]
    struct Row {
        trajectory_id: String,
        seconds: f64,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut by_id = std::collections::HashMap::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        by_id.insert(row.trajectory_id, row.seconds);
    }
    records
        .iter()
        .map(|r| {
            by_id
                .get(&r.trajectory_id)
                .copied()
                .ok_or_else(|| CliError::Core(Error::Misaligned(format!("no timing for {}", r.trajectory_id))))
        })
        .collect()
}

fn run_downsample(c: DownsampleCmd) -> CliResult<()> {
    let trajectories = read_trajectories(&c.probes, c.trip_gap)?;
    if trajectories.is_empty() {
        return Err(CliError::Empty(format!("{}: no probes", c.probes.display())));
    }
    let thinned = trajectories
        .iter()
        .map(|t| downsample(t, c.interval))
        .collect::<trimatch_core::Result<Vec<_>>>()?;
    write_probes_csv(&c.out, &thinned)?;
    Ok(())
}

fn run_synth(c: SynthCmd) -> CliResult<()> {
    let grid = GridSpec {
        rows: c.rows,
        cols: c.cols,
        spacing: c.spacing,
        arterial_every: c.arterial_every,
        ..GridSpec::default()
    };
    let spec = FleetSpec {
        vehicles: c.vehicles,
        days: c.days,
        trips_per_day: c.trips_per_day,
        habit_strength: c.habit_strength,
        congestion: !c.no_congestion,
        interval: c.interval,
        gps_sigma: c.gps_sigma,
        speed_sigma: c.speed_sigma,
        bearing_sigma: c.bearing_sigma,
        seed: c.seed,
        ..FleetSpec::default()
    };
    let (nodes, links) = grid_records(&grid);
    let net = RoadNetwork::load(&nodes, &links, c.split_length)?;
    let fleet = generate_synthetic(&net, &grid_free_flow(&net, &grid), &spec)?;
    if fleet.trips.is_empty() {
        return Err(CliError::Empty("the generator produced no trips".into()));
    }
    std::fs::create_dir_all(&c.out_dir).map_err(Error::from)?;
    write_nodes_csv(&c.out_dir.join("nodes.csv"), &nodes)?;
    write_links_csv(&c.out_dir.join("links.csv"), &links)?;
    write_probes_csv(&c.out_dir.join("probes.csv"), &fleet.trajectories())?;
    write_matches_csv(&c.out_dir.join("truth.csv"), &net, &fleet.truth())?;
    let traffic = TrafficConfig::default();
    info!(
        "{} trips over {} days; traffic interval {} s",
        fleet.trips.len(),
        c.days,
        traffic.interval_s
    );
    Ok(())
}

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, ValueEnum};
use flowdep::corr::{self, ThresholdGrid, VarPair};
use flowdep::extremal::{
    self, fraction_count, RadiusNorm, INDEPENDENCE_BELOW, STRONG_DEPENDENCE_ABOVE,
    UNIFORM_REFERENCE,
};
use flowdep::ingest::{
    parse_summaries_auto, segment_adus, write_adu_summaries, write_flow_summaries,
    ConnectionAggregator, HttpPorts, PacketEventReader, SummaryRecords,
};
use flowdep::metrics::{batch_log_points, LogLogPoint};
use flowdep::truncnorm::{self, BivariateNormalParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::failure::Failure;
use crate::io::{
    header_line, open_input, open_output, parse_list, read_input, write_failed, VERSION,
};

const ANGLE_BINS: usize = 64;
const DEFAULT_SIM_CONNECTIONS: usize = 1_433_924;
const DEFAULT_SIZES: &str = "0,1000,10000,100000";
const DEFAULT_DURATIONS: &str = "0,0.01,0.1,1,5,100";
const DEFAULT_FRACTION_LIST: &str = "0.0001,0.0002,0.0005,0.001,0.002,0.005,0.01,0.02,0.05,0.1,0.2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

fn parse_pair(s: &str) -> Result<VarPair, String> {
    s.parse().map_err(|e: corr::CorrError| e.to_string())
}

fn parse_norm(s: &str) -> Result<RadiusNorm, String> {
    s.parse()
        .map_err(|e: extremal::ExtremalError| e.to_string())
}

fn parse_ports(s: &str) -> Result<HttpPorts, String> {
    s.parse().map_err(|e: flowdep::IngestError| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` must be a positive number")),
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err(format!("`{s}` must lie in (0, 1]")),
    }
}

/// Comma-separated ascending list taken as one flag value.
#[derive(Debug, Clone)]
pub struct FloatList(Vec<f64>);

fn parse_float_list(s: &str) -> Result<FloatList, String> {
    parse_list(s).map(FloatList)
}

fn parse_fraction_list(s: &str) -> Result<FloatList, String> {
    let v = parse_list(s)?;
    match v.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        Some(bad) => Err(format!("fraction {bad} must lie in (0, 1]")),
        None => Ok(FloatList(v)),
    }
}

fn finish(mut out: Box<dyn Write>) -> Result<(), Failure> {
    out.flush().map_err(write_failed)
}

/// Loads flow-summary or ADU input and maps it to log-domain points.
fn load_points(path: &Path, http_only: bool) -> Result<Vec<LogLogPoint>, Failure> {
    let bytes = read_input(path)?;
    let mut records = parse_summaries_auto(&bytes)?;
    if http_only {
        records.retain_http();
    }
    Ok(batch_log_points(&records.transfers())?)
}

fn thresholds(sizes: &[f64], durations: &[f64]) -> Result<ThresholdGrid, Failure> {
    Ok(ThresholdGrid::new(sizes.to_vec(), durations.to_vec())?)
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Packet-event CSV (`-` for stdin).
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    /// Connection summaries output (flow-summary format; stdout if omitted).
    #[arg(long)]
    conns_out: Option<PathBuf>,
    /// ADU summaries output; ADU segmentation is skipped when omitted.
    #[arg(long)]
    adus_out: Option<PathBuf>,
    /// Destination ports classified as HTTP.
    #[arg(long, default_value = "80,8080", value_parser = parse_ports)]
    http_ports: HttpPorts,
    /// Gap (seconds) that closes an ADU even without a direction change.
    #[arg(long, default_value_t = 0.5, value_parser = parse_positive)]
    quiet_threshold: f64,
}

pub fn ingest(args: IngestArgs, invocation: &str) -> Result<(), Failure> {
    let reader = open_input(&args.input)?;
    let mut aggregator = ConnectionAggregator::new();
    let mut retained = Vec::new();
    let mut n_events = 0usize;
    for event in PacketEventReader::new(reader) {
        let event = event?;
        n_events += 1;
        aggregator.push(&event);
        if args.adus_out.is_some() {
            retained.push(event);
        }
    }
    let conns = aggregator.finish(&args.http_ports);
    log::info!("{n_events} events -> {} connections", conns.len());

    let mut out = open_output(args.conns_out.as_ref())?;
    writeln!(out, "{}", header_line(invocation)).map_err(write_failed)?;
    writeln!(out, "# conn_id,size_bytes,duration_s,is_http").map_err(write_failed)?;
    write_flow_summaries(&mut out, &conns).map_err(write_failed)?;
    finish(out)?;

    if let Some(path) = &args.adus_out {
        let adus = segment_adus(&retained, args.quiet_threshold, &args.http_ports)?;
        let mut out = open_output(Some(path))?;
        writeln!(out, "{}", header_line(invocation)).map_err(write_failed)?;
        writeln!(
            out,
            "# conn_id,adu_index,direction,size_bytes,duration_s,is_http"
        )
        .map_err(write_failed)?;
        write_adu_summaries(&mut out, &adus).map_err(write_failed)?;
        finish(out)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Packet events, flow summaries or ADU summaries (detected from the field count).
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    /// Destination ports classified as HTTP (packet-event input only).
    #[arg(long, default_value = "80,8080", value_parser = parse_ports)]
    http_ports: HttpPorts,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default)]
struct Population {
    records: u64,
    bytes: u64,
    packets: Option<u64>,
}

fn first_field_count(bytes: &[u8]) -> Option<usize> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').count())
}

pub fn summarize(args: SummarizeArgs, invocation: &str) -> Result<(), Failure> {
    let bytes = read_input(&args.input)?;
    let (unit, all, http) = if first_field_count(&bytes) == Some(5) {
        let mut aggregator = ConnectionAggregator::new();
        let mut packets = 0u64;
        for event in PacketEventReader::new(bytes.as_slice()) {
            aggregator.push(&event?);
            packets += 1;
        }
        let conns = aggregator.finish(&args.http_ports);
        let tally = |http_only: bool| Population {
            records: conns.iter().filter(|c| !http_only || c.is_http).count() as u64,
            bytes: conns
                .iter()
                .filter(|c| !http_only || c.is_http)
                .map(|c| c.size_bytes)
                .sum(),
            packets: Some(
                conns
                    .iter()
                    .filter(|c| !http_only || c.is_http)
                    .filter_map(|c| c.packet_count)
                    .sum(),
            ),
        };
        let mut all = tally(false);
        all.packets = Some(packets);
        ("connections", all, tally(true))
    } else {
        let records = parse_summaries_auto(&bytes)?;
        let unit = match records {
            SummaryRecords::Connections(_) => "connections",
            SummaryRecords::Adus(_) => "adus",
        };
        let transfers = records.transfers();
        let tally = |http_only: bool| Population {
            records: transfers
                .iter()
                .filter(|t| !http_only || t.is_http())
                .count() as u64,
            bytes: transfers
                .iter()
                .filter(|t| !http_only || t.is_http())
                .map(|t| t.size_bytes())
                .sum(),
            packets: None,
        };
        (unit, tally(false), tally(true))
    };

    let mut out = open_output(args.out.as_ref())?;
    let packets = |p: &Population| {
        p.packets
            .map_or_else(|| "NA".to_string(), |n| n.to_string())
    };
    (|| -> std::io::Result<()> {
        writeln!(out, "{}", header_line(invocation))?;
        writeln!(out, "# unit={unit}")?;
        writeln!(out, "population\trecords\tbytes\tpackets")?;
        writeln!(
            out,
            "all\t{}\t{}\t{}",
            all.records,
            all.bytes,
            packets(&all)
        )?;
        writeln!(
            out,
            "http\t{}\t{}\t{}",
            http.records,
            http.bytes,
            packets(&http)
        )
    })()
    .map_err(write_failed)?;
    finish(out)
}

#[derive(Debug, Args)]
pub struct CorrGridArgs {
    /// Flow-summary or ADU input (`-` for stdin).
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    /// size-duration, size-rate or duration-rate.
    #[arg(long, default_value = "size-rate", value_parser = parse_pair)]
    pair: VarPair,
    /// Size thresholds in bytes (strict `>`; 0 disables).
    #[arg(long, default_value = DEFAULT_SIZES, value_parser = parse_float_list)]
    sizes: FloatList,
    /// Duration thresholds in seconds (strict `>`; 0 disables).
    #[arg(long, default_value = DEFAULT_DURATIONS, value_parser = parse_float_list)]
    durations: FloatList,
    /// Keep only HTTP records before computing anything.
    #[arg(long)]
    http_only: bool,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn corr_grid(args: CorrGridArgs, invocation: &str) -> Result<(), Failure> {
    let grid = thresholds(&args.sizes.0, &args.durations.0)?;
    let points = load_points(&args.input, args.http_only)?;
    let result = corr::corr_grid(&points, &grid, args.pair)?;
    let mut out = open_output(args.out.as_ref())?;
    match args.format {
        Format::Tsv => {
            writeln!(out, "{}", header_line(invocation)).map_err(write_failed)?;
            writeln!(
                out,
                "# pair={} total_n={} cell=coefficient|pct|n",
                args.pair, result.total_n
            )
            .map_err(write_failed)?;
            result.write_tsv(&mut out).map_err(write_failed)?;
        }
        Format::Json => {
            let doc = json!({ "version": VERSION, "invocation": invocation, "grid": result });
            serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| write_failed(e.into()))?;
            writeln!(out).map_err(write_failed)?;
        }
    }
    finish(out)
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("cut").required(true).args(["t", "a"])))]
pub struct TruncnormArgs {
    /// Correlation of the untruncated pair.
    #[arg(long, allow_hyphen_values = true)]
    rho: f64,
    /// Standardised truncation point (a - mu1) / sigma1; `-inf` for none.
    #[arg(long, allow_hyphen_values = true)]
    t: Option<f64>,
    /// Raw truncation point; `-inf` for none.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(
        long,
        default_value_t = 0.0,
        allow_hyphen_values = true,
        requires = "a"
    )]
    mu1: f64,
    #[arg(long, default_value_t = 1.0, requires = "a")]
    sigma1: f64,
    /// Also run a Monte Carlo check with this many samples.
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn truncnorm(args: TruncnormArgs) -> Result<(), Failure> {
    let (params, a) = match (args.t, args.a) {
        (Some(t), _) => (BivariateNormalParams::standard(args.rho)?, t),
        (None, Some(a)) => (
            BivariateNormalParams::new(args.mu1, 0.0, args.sigma1, 1.0, args.rho)?,
            a,
        ),
        (None, None) => unreachable!("clap enforces one of --t / --a"),
    };
    let value = truncnorm::truncated_corr(&params, a)?;
    let mut out = open_output(None)?;
    // Adding +0.0 folds -0.0 into 0.0 for printing.
    writeln!(out, "{:.6}", value + 0.0).map_err(write_failed)?;
    if let Some(n) = args.mc {
        let mc = truncnorm::mc_truncated_corr(&params, a, n, args.seed)?;
        writeln!(
            out,
            "mc\t{:.6}\tse\t{:.6}\tsurvivors\t{}",
            mc.corr + 0.0,
            mc.std_error,
            mc.survivors
        )
        .map_err(write_failed)?;
    }
    finish(out)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of simulated connections.
    #[arg(long, default_value_t = DEFAULT_SIM_CONNECTIONS)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Mean of log10 size.
    #[arg(long, allow_hyphen_values = true)]
    mu_size: Option<f64>,
    /// Mean of log10 duration.
    #[arg(long, allow_hyphen_values = true)]
    mu_duration: Option<f64>,
    #[arg(long)]
    sigma_size: Option<f64>,
    #[arg(long)]
    sigma_duration: Option<f64>,
    /// Correlation of log10 size and log10 duration.
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    /// Estimate the parameters from flow-summary or ADU data instead of the
    /// calibrated defaults; explicit flags still override.
    #[arg(long)]
    params_from: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs, invocation: &str) -> Result<(), Failure> {
    let base = match &args.params_from {
        Some(path) => truncnorm::estimate_params(&load_points(path, false)?)?,
        None => BivariateNormalParams::calibrated_default(),
    };
    let params = BivariateNormalParams::new(
        args.mu_size.unwrap_or(base.mu1),
        args.mu_duration.unwrap_or(base.mu2),
        args.sigma_size.unwrap_or(base.sigma1),
        args.sigma_duration.unwrap_or(base.sigma2),
        args.rho.unwrap_or(base.rho),
    )?;
    let rows = truncnorm::simulate_flow_summaries(&params, args.n, args.seed)?;
    let mut out = open_output(args.out.as_ref())?;
    (|| -> std::io::Result<()> {
        writeln!(out, "{}", header_line(invocation))?;
        writeln!(
            out,
            "# params mu_size={} mu_duration={} sigma_size={} sigma_duration={} rho={} seed={}",
            params.mu1, params.mu2, params.sigma1, params.sigma2, params.rho, args.seed
        )?;
        writeln!(out, "# conn_id,size_bytes,duration_s,is_http")?;
        write_flow_summaries(&mut out, &rows)
    })()
    .map_err(write_failed)?;
    finish(out)
}

#[derive(Debug, Args)]
pub struct EdmArgs {
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    #[arg(long, default_value = "size-rate", value_parser = parse_pair)]
    pair: VarPair,
    /// Top-radius fractions, ascending, each in (0, 1].
    #[arg(long, default_value = DEFAULT_FRACTION_LIST, value_parser = parse_fraction_list)]
    fractions: FloatList,
    /// Radius norm used to rank observations: l2 or l1.
    #[arg(long, default_value = "l2", value_parser = parse_norm)]
    norm: RadiusNorm,
    #[arg(long)]
    http_only: bool,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Write a 64-bin angle histogram of the top subset here.
    #[arg(long)]
    angles_out: Option<PathBuf>,
    /// Fraction whose angles feed the histogram.
    #[arg(long, default_value_t = 0.05, value_parser = parse_fraction)]
    angles_fraction: f64,
}

pub fn edm(args: EdmArgs, invocation: &str) -> Result<(), Failure> {
    let points = load_points(&args.input, args.http_only)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|p| args.pair.select(p)).unzip();
    let curve = extremal::edm_curve(&xs, &ys, &args.fractions.0, args.norm)?;

    let mut out = open_output(args.out.as_ref())?;
    match args.format {
        Format::Tsv => (|| -> std::io::Result<()> {
            writeln!(out, "{}", header_line(invocation))?;
            writeln!(
                out,
                "# pair={} n={} norm={} uniform_reference={:.6} independence_below={} strong_dependence_above={}",
                args.pair, curve.n, curve.norm, UNIFORM_REFERENCE, INDEPENDENCE_BELOW, STRONG_DEPENDENCE_ABOVE
            )?;
            writeln!(out, "fraction\tk\tedm")?;
            for ((p, k), e) in curve.fractions.iter().zip(&curve.k_values).zip(&curve.edm_values) {
                writeln!(out, "{p}\t{k}\t{e:.6}")?;
            }
            for (p, r) in curve.fractions.iter().zip(&curve.readings) {
                writeln!(out, "# reading {p} {}", r.as_str())?;
            }
            Ok(())
        })()
        .map_err(write_failed)?,
        Format::Json => {
            let doc = json!({
                "version": VERSION,
                "invocation": invocation,
                "pair": args.pair,
                "uniform_reference": UNIFORM_REFERENCE,
                "independence_below": INDEPENDENCE_BELOW,
                "strong_dependence_above": STRONG_DEPENDENCE_ABOVE,
                "curve": curve,
            });
            serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| write_failed(e.into()))?;
            writeln!(out).map_err(write_failed)?;
        }
    }
    finish(out)?;

    if let Some(path) = &args.angles_out {
        let k = fraction_count(args.angles_fraction, curve.n);
        let counts = curve.angle_histogram(k, ANGLE_BINS);
        let width = std::f64::consts::FRAC_PI_2 / ANGLE_BINS as f64;
        let mut out = open_output(Some(path))?;
        (|| -> std::io::Result<()> {
            writeln!(out, "{}", header_line(invocation))?;
            writeln!(
                out,
                "# fraction={} k={k} bins={ANGLE_BINS}",
                args.angles_fraction
            )?;
            writeln!(out, "bin_start\tbin_end\tcount")?;
            for (i, c) in counts.iter().enumerate() {
                writeln!(
                    out,
                    "{:.6}\t{:.6}\t{c}",
                    i as f64 * width,
                    (i + 1) as f64 * width
                )?;
            }
            Ok(())
        })()
        .map_err(write_failed)?;
        finish(out)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    #[arg(long, default_value = "size-rate", value_parser = parse_pair)]
    pair: VarPair,
    /// Upper bound on exported points.
    #[arg(long, default_value_t = 100_000)]
    max_points: usize,
    /// Seed for the downsampling shuffle.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Size thresholds (bytes) drawn as reference lines.
    #[arg(long, default_value = DEFAULT_SIZES, value_parser = parse_float_list)]
    sizes: FloatList,
    /// Duration thresholds (seconds) drawn as reference lines.
    #[arg(long, default_value = DEFAULT_DURATIONS, value_parser = parse_float_list)]
    durations: FloatList,
    #[arg(long)]
    http_only: bool,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Indices of a deterministic subsample: every k-th index of a seeded
/// shuffle, returned in ascending order.
pub fn downsample(n: usize, max_points: usize, seed: u64) -> Vec<usize> {
    if n <= max_points {
        return (0..n).collect();
    }
    if max_points == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let step = n.div_ceil(max_points);
    let mut picked: Vec<usize> = order.into_iter().step_by(step).collect();
    picked.sort_unstable();
    picked
}

fn axis_thresholds(label: &str, sizes: &[f64], durations: &[f64]) -> Vec<f64> {
    let raw = match label {
        "log10_size" => sizes,
        "log10_duration" => durations,
        _ => &[],
    };
    raw.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v.log10())
        .collect()
}

pub fn scatter(args: ScatterArgs, invocation: &str) -> Result<(), Failure> {
    let grid = thresholds(&args.sizes.0, &args.durations.0)?;
    let points = load_points(&args.input, args.http_only)?;
    let picked = downsample(points.len(), args.max_points, args.seed);
    let (x_label, y_label) = args.pair.labels();
    let x_lines = axis_thresholds(
        x_label,
        grid.size_thresholds_bytes(),
        grid.duration_thresholds_s(),
    );
    let y_lines = axis_thresholds(
        y_label,
        grid.size_thresholds_bytes(),
        grid.duration_thresholds_s(),
    );

    let mut out = open_output(args.out.as_ref())?;
    match args.format {
        Format::Tsv => (|| -> std::io::Result<()> {
            writeln!(out, "{}", header_line(invocation))?;
            writeln!(
                out,
                "# pair={} n_total={} n_shown={}",
                args.pair,
                points.len(),
                picked.len()
            )?;
            writeln!(out, "# x_threshold_lines={}", join(&x_lines))?;
            writeln!(out, "# y_threshold_lines={}", join(&y_lines))?;
            writeln!(out, "{x_label}\t{y_label}")?;
            for &i in &picked {
                let (x, y) = args.pair.select(&points[i]);
                writeln!(out, "{x:.6}\t{y:.6}")?;
            }
            Ok(())
        })()
        .map_err(write_failed)?,
        Format::Json => {
            let xy: Vec<[f64; 2]> = picked
                .iter()
                .map(|&i| {
                    let (x, y) = args.pair.select(&points[i]);
                    [x, y]
                })
                .collect();
            let doc = json!({
                "version": VERSION,
                "invocation": invocation,
                "pair": args.pair,
                "x_label": x_label,
                "y_label": y_label,
                "n_total": points.len(),
                "n_shown": picked.len(),
                "x_threshold_lines": x_lines,
                "y_threshold_lines": y_lines,
                "points": xy,
            });
            serde_json::to_writer(&mut out, &doc).map_err(|e| write_failed(e.into()))?;
            writeln!(out).map_err(write_failed)?;
        }
    }
    finish(out)
}

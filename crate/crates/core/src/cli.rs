//! Command-line front end. The binary only forwards `argv` to [`run`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluate::{
    chain_diagnostics, kl_divergence_mc, lag_inclusion_report, mse_transition_mean, stride_subset, ChainDiagnostics,
    KlEstimate, LagInclusionReport, ValidationSet,
};
use crate::io::chain::{decode_traces, encode_chain, encode_traces, read_chain, ChainHeader};
use crate::io::config::{load_config, RunConfig};
use crate::io::grid::{export_grid, linspace, FixedLagPolicy, Functional, GridSpec};
use crate::io::manifest::{read_manifest, write_manifest, DataInfo, ManifestBody, RunManifest};
use crate::io::series::{format_series, read_series, series_digest, ReadOptions};
use crate::io::{atomic_write, file_digest, sha256_hex};
use crate::lagselect::SelectionMode;
use crate::model::{ModelState, SeriesData};
use crate::priors::BaseMeasureState;
use crate::sampler::{run_chain, Chain, Draw, GammaInit};
use crate::simulate::{forecast_k_steps, simulate, split_for_validation, SimKind, SimSpec, TransitionOracle};

/// Environment variable holding the worker-pool size for multi-chain fits.
pub const WORKERS_ENV: &str = "BNPWMAR_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "bnpwmar",
    version,
    about = "Nonparametric density autoregression with lag selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic series.
    Simulate(SimulateArgs),
    /// Run one or more MCMC chains.
    Fit(FitArgs),
    /// Posterior summaries of a transition functional over a lag grid.
    Estimate(EstimateArgs),
    /// Posterior predictive paths from the end of the series.
    Forecast(ForecastArgs),
    /// Score fitted chains against a known simulator.
    Evaluate(EvaluateArgs),
    /// Convergence diagnostics and lag inclusion for fitted chains.
    Summarize(SummarizeArgs),
    /// Rerun a manifest and check that its outputs are reproduced.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub kind: SimKind,
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub burn: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Series file, one value per line.
    #[arg(long)]
    pub data: PathBuf,
    /// Skip a header line.
    #[arg(long)]
    pub header: bool,
    /// Take natural logs of the values.
    #[arg(long)]
    pub log: bool,
    /// Use only the first N values.
    #[arg(long)]
    pub take: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<(Vec<f64>, DataInfo)> {
        let read = ReadOptions {
            header: self.header,
            log: self.log,
        };
        load_data(&self.data.to_string_lossy(), read, self.take)
    }
}

fn load_data(path: &str, read: ReadOptions, take: Option<usize>) -> Result<(Vec<f64>, DataInfo)> {
    let mut values = read_series(Path::new(path), read)?;
    if let Some(n) = take {
        if n > values.len() {
            return Err(Error::Domain(format!(
                "--take {n} but the series has {} values",
                values.len()
            )));
        }
        values.truncate(n);
    }
    let info = DataInfo {
        path: path.to_string(),
        read,
        take,
        length: values.len(),
        digest: series_digest(&values),
    };
    Ok((values, info))
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Start the first half of the chains with all lags off and the rest with all lags on.
    #[arg(long)]
    pub split_init: bool,
    /// Base seed; chain k uses seed + k. Overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FunctionalKind {
    Density,
    Mean,
    Quantile,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Chain files to pool.
    #[arg(long, num_args = 1.., required = true)]
    pub chains: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub functional: FunctionalKind,
    /// Quantile level for `--functional quantile`.
    #[arg(long, default_value_t = 0.5)]
    pub u: f64,
    /// Response grid `lo:hi:n` for `--functional density`.
    #[arg(long)]
    pub y: Option<String>,
    /// Varied lag as `lag:lo:hi:n` (1-based lag); give once or twice.
    #[arg(long, required = true)]
    pub vary: Vec<String>,
    /// Values of all lags, comma separated; varied entries are ignored.
    #[arg(long, conflicts_with = "uniform")]
    pub fix: Option<String>,
    /// Draw the other lags uniformly on `lo:hi` for each posterior draw.
    #[arg(long)]
    pub uniform: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Use at most this many draws, evenly strided.
    #[arg(long, default_value_t = 1000)]
    pub max_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub chains: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub chains: Vec<PathBuf>,
    /// Simulator that generated the data.
    #[arg(long)]
    pub oracle: SimKind,
    /// The full simulated series: fit segment followed by the validation pool.
    #[command(flatten)]
    pub data: DataArgs,
    /// Length of the segment the chains were fitted to.
    #[arg(long)]
    pub fit_length: usize,
    #[arg(long, default_value_t = 9000)]
    pub pool: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_val: usize,
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub chains: Vec<PathBuf>,
    /// Write the summary as JSON here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parse `argv` and run the command. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let rest: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &rest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Run a parsed command. `args` (everything after the program name) is
/// recorded in the manifests of derived outputs so they can be replayed.
pub fn run(command: Command, args: &[String]) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Estimate(a) => cmd_estimate(&a, args),
        Command::Forecast(a) => cmd_forecast(&a, args),
        Command::Evaluate(a) => cmd_evaluate(&a, args),
        Command::Summarize(a) => cmd_summarize(&a),
        Command::Replay(a) => cmd_replay(&a),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = SimSpec {
        burn: a.burn,
        ..SimSpec::new(a.kind, a.length, a.seed)
    };
    let bytes = format_series(&simulate(&spec)?).into_bytes();
    atomic_write(&a.out, &bytes)?;
    let m = RunManifest::new(
        a.seed,
        ManifestBody::Simulate {
            spec,
            output: a.out.to_string_lossy().into_owned(),
            output_digest: sha256_hex(&bytes),
        },
    );
    write_manifest(&manifest_path(&a.out), &m)?;
    println!("wrote {} values to {}", a.length, a.out.display());
    Ok(())
}

/// Build the series and prior for `cfg` and run one chain.
pub fn fit_values(cfg: &RunConfig, values: &[f64]) -> Result<Chain> {
    let series = SeriesData::new(values.to_vec(), cfg.model.lags)?;
    let base = BaseMeasureState::from_series(&series, &cfg.prior)?;
    run_chain(&series, &base, &cfg.sampler)
}

/// Per-chain configurations: seeds `seed, seed + 1, ...`, and with
/// `split_init` the first half start with all lags off, the rest all on.
pub fn chain_configs(cfg: &RunConfig, chains: usize, split_init: bool, seed: u64) -> Vec<RunConfig> {
    (0..chains)
        .map(|k| {
            let mut c = cfg.clone();
            c.sampler.seed = seed + k as u64;
            if split_init && c.sampler.selection_mode != SelectionMode::None {
                c.sampler.gamma_init = if k < chains / 2 {
                    GammaInit::AllOff
                } else {
                    GammaInit::AllOn
                };
            }
            c
        })
        .collect()
}

fn worker_count(chains: usize) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(chains)
}

struct FitOutput {
    chain_bytes: Vec<u8>,
    trace_bytes: Vec<u8>,
    chain: Chain,
}

fn fit_one(cfg: &RunConfig, values: &[f64]) -> Result<FitOutput> {
    let chain = fit_values(cfg, values)?;
    Ok(FitOutput {
        chain_bytes: encode_chain(&ChainHeader::for_chain(&chain), &chain.draws)?,
        trace_bytes: encode_traces(&chain.traces),
        chain,
    })
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    if a.chains == 0 {
        return Err(Error::Config("--chains must be at least 1".into()));
    }
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default().resolve()?,
    };
    let (values, data) = a.data.load()?;
    let seed = a.seed.unwrap_or(cfg.sampler.seed);
    let configs = chain_configs(&cfg, a.chains, a.split_init, seed);
    std::fs::create_dir_all(&a.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(a.chains))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outputs: Vec<Result<FitOutput>> = pool.install(|| configs.par_iter().map(|c| fit_one(c, &values)).collect());
    for (k, (out, c)) in outputs.into_iter().zip(&configs).enumerate() {
        let out = out?;
        let chain_file = a.out.join(format!("chain-{k}.jsonl"));
        let trace_file = a.out.join(format!("chain-{k}.trace.tsv"));
        atomic_write(&chain_file, &out.chain_bytes)?;
        atomic_write(&trace_file, &out.trace_bytes)?;
        let m = RunManifest::new(
            c.sampler.seed,
            ManifestBody::Fit {
                config: c.clone(),
                data: data.clone(),
                chain_index: k,
                chain_file: chain_file.to_string_lossy().into_owned(),
                chain_digest: sha256_hex(&out.chain_bytes),
                trace_file: trace_file.to_string_lossy().into_owned(),
                trace_digest: sha256_hex(&out.trace_bytes),
                timings: out.chain.timings.clone(),
                acceptance: out.chain.stats.clone(),
            },
        );
        write_manifest(&a.out.join(format!("chain-{k}.manifest.json")), &m)?;
        let d = chain_diagnostics(&out.chain);
        println!(
            "chain {k} (seed {}): {} draws, mean occupied {:.2}, max log w_H {:.2}, {:.2} s per 1000 iterations",
            c.sampler.seed, d.n_draws, d.n_occupied_mean, d.log_omega_last_max, d.seconds_per_1000
        );
        if let Some(w) = &out.chain.stats.adapt_warning {
            eprintln!("chain {k}: {w}");
        }
    }
    Ok(())
}

/// Pool the draws of several chain files. All must share the lag horizon.
pub fn load_draws(paths: &[PathBuf]) -> Result<Vec<ModelState>> {
    let mut all = Vec::new();
    let mut lags = None;
    for p in paths {
        let (h, draws) = read_chain(p)?;
        if *lags.get_or_insert(h.lags) != h.lags {
            return Err(Error::Domain(format!(
                "{} has {} lags, expected {}",
                p.display(),
                h.lags,
                lags.unwrap()
            )));
        }
        all.extend(draws.into_iter().map(|d| d.state));
    }
    if all.is_empty() {
        return Err(Error::Domain("the chain files hold no draws".into()));
    }
    Ok(all)
}

fn parse_f64s(s: &str, sep: char) -> Result<Vec<f64>> {
    s.split(sep)
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{t}` in `{s}`")))
        })
        .collect()
}

/// `lo:hi:n` into an evenly spaced grid.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("expected lo:hi:n, got `{s}`")));
    }
    let lo_hi = parse_f64s(&format!("{}:{}", parts[0], parts[1]), ':')?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| Error::Config(format!("bad count in `{s}`")))?;
    Ok(linspace(lo_hi[0], lo_hi[1], n))
}

fn parse_vary(s: &str) -> Result<(usize, Vec<f64>)> {
    let (lag, rest) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("expected lag:lo:hi:n, got `{s}`")))?;
    let lag: usize = lag.parse().map_err(|_| Error::Config(format!("bad lag in `{s}`")))?;
    if lag == 0 {
        return Err(Error::Config("lags are numbered from 1".into()));
    }
    Ok((lag - 1, parse_range(rest)?))
}

fn cmd_estimate(a: &EstimateArgs, args: &[String]) -> Result<()> {
    let draws = stride_subset(&load_draws(&a.chains)?, a.max_draws);
    let l = draws[0].lags();
    let functional = match a.functional {
        FunctionalKind::Density => Functional::Density {
            y: parse_range(
                a.y.as_deref()
                    .ok_or_else(|| Error::Config("--functional density needs --y".into()))?,
            )?,
        },
        FunctionalKind::Mean => Functional::Mean,
        FunctionalKind::Quantile => Functional::Quantile { u: a.u },
    };
    let fixed = match (&a.fix, &a.uniform) {
        (Some(f), _) => FixedLagPolicy::FixAtValue(parse_f64s(f, ',')?),
        (None, Some(u)) => {
            let r = parse_f64s(u, ':')?;
            if r.len() != 2 {
                return Err(Error::Config(format!("expected lo:hi, got `{u}`")));
            }
            FixedLagPolicy::UniformRandom {
                lo: r[0],
                hi: r[1],
                seed: a.seed,
            }
        }
        (None, None) => FixedLagPolicy::FixAtValue(vec![0.0; l]),
    };
    let grid = GridSpec {
        varied: a.vary.iter().map(|v| parse_vary(v)).collect::<Result<_>>()?,
        fixed,
    };
    let table = export_grid(&draws, &functional, &grid)?;
    let bytes = table.to_text().into_bytes();
    atomic_write(&a.out, &bytes)?;
    write_derived_manifest(a.seed, "estimate", args, &a.chains, &a.out, &bytes)?;
    println!("wrote {} grid rows to {}", table.rows.len(), a.out.display());
    Ok(())
}

fn write_derived_manifest(
    seed: u64,
    command: &str,
    args: &[String],
    inputs: &[PathBuf],
    out: &Path,
    bytes: &[u8],
) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| Ok((p.to_string_lossy().into_owned(), file_digest(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let m = RunManifest::new(
        seed,
        ManifestBody::Derived {
            command: command.into(),
            args: args.to_vec(),
            inputs,
            output: out.to_string_lossy().into_owned(),
            output_digest: sha256_hex(bytes),
        },
    );
    write_manifest(&manifest_path(out), &m)
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn cmd_forecast(a: &ForecastArgs, args: &[String]) -> Result<()> {
    let draws = load_draws(&a.chains)?;
    let (values, _) = a.data.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let paths = forecast_k_steps(&draws, &values, a.steps, a.paths, &mut rng)?;
    let mut text = String::from("step mean q025 q500 q975\n");
    for k in 0..a.steps {
        let mut col: Vec<f64> = paths.iter().map(|p| p[k]).collect();
        col.sort_by(f64::total_cmp);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        text.push_str(&format!(
            "{} {:?} {:?} {:?} {:?}\n",
            k + 1,
            mean,
            quantile_sorted(&col, 0.025),
            quantile_sorted(&col, 0.5),
            quantile_sorted(&col, 0.975)
        ));
    }
    atomic_write(&a.out, text.as_bytes())?;
    let mut inputs = a.chains.clone();
    inputs.push(a.data.data.clone());
    write_derived_manifest(a.seed, "forecast", args, &inputs, &a.out, text.as_bytes())?;
    println!("wrote {}-step forecast summary to {}", a.steps, a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainScore {
    pub chain: String,
    pub kl: KlEstimate,
    pub mse: f64,
}

fn cmd_evaluate(a: &EvaluateArgs, args: &[String]) -> Result<()> {
    let (values, _) = a.data.load()?;
    let oracle = SimSpec::new(a.oracle, 0, 0).generator();
    let mut scores = Vec::new();
    for p in &a.chains {
        let draws = stride_subset(&load_draws(std::slice::from_ref(p))?, a.max_draws);
        let l = draws[0].lags();
        // the sampled positions depend only on the split seed, so every chain sees the same points
        let (fit, pairs) = split_for_validation(
            &values,
            a.fit_length,
            a.pool,
            a.n_val,
            l.max(oracle.lags()),
            a.split_seed,
        )?;
        let validation = ValidationSet::new(pairs, a.replicates)?;
        let kl = kl_divergence_mc(&validation, &oracle, &draws, a.seed)?;
        let series = SeriesData::new(fit, l)?;
        let mse = mse_transition_mean(&series, &draws, &|x: &[f64]| oracle.mean(x), None)?;
        println!("{}: K-L {:.4} (se {:.4}), MSE {:.4}", p.display(), kl.kl, kl.se, mse);
        scores.push(ChainScore {
            chain: p.to_string_lossy().into_owned(),
            kl,
            mse,
        });
    }
    let mut bytes = serde_json::to_vec_pretty(&scores)?;
    bytes.push(b'\n');
    atomic_write(&a.out, &bytes)?;
    let mut inputs = a.chains.clone();
    inputs.push(a.data.data.clone());
    write_derived_manifest(a.seed, "evaluate", args, &inputs, &a.out, &bytes)?;
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainSummary {
    pub chain: String,
    pub diagnostics: ChainDiagnostics,
    pub lags: LagInclusionReport,
}

/// Rebuild enough of a [`Chain`] from its files (chain, traces, manifest) to
/// compute diagnostics.
pub fn load_chain_files(path: &Path) -> Result<(Chain, Option<f64>)> {
    let (header, draws): (ChainHeader, Vec<Draw>) = read_chain(path)?;
    let stem = path.to_string_lossy();
    let stem = stem.strip_suffix(".jsonl").unwrap_or(&stem);
    let traces = match std::fs::read_to_string(format!("{stem}.trace.tsv")) {
        Ok(t) => decode_traces(&t)?,
        Err(_) => Vec::new(),
    };
    let mut chain = Chain {
        config: Default::default(),
        lags: header.lags,
        draws,
        traces,
        stats: Default::default(),
        timings: Default::default(),
    };
    chain.config.components = header.components;
    chain.config.selection_mode = header.selection_mode;
    chain.config.seed = header.seed;
    chain.config.thin = header.thin;
    let mut range = None;
    if let Ok(m) = read_manifest(Path::new(&format!("{stem}.manifest.json"))) {
        if let ManifestBody::Fit {
            config,
            timings,
            acceptance,
            data,
            ..
        } = m.body
        {
            chain.config = config.sampler;
            chain.timings = timings;
            chain.stats = acceptance;
            if let Ok((v, _)) = load_data(&data.path, data.read, data.take) {
                range = SeriesData::new(v, header.lags).ok().map(|s| s.range());
            }
        }
    }
    Ok((chain, range))
}

fn cmd_summarize(a: &SummarizeArgs) -> Result<()> {
    let mut out = Vec::new();
    for p in &a.chains {
        let (chain, range) = load_chain_files(p)?;
        let states: Vec<ModelState> = chain.draws.iter().map(|d| d.state.clone()).collect();
        let range = range.unwrap_or(1.0);
        let d = chain_diagnostics(&chain);
        let lags = lag_inclusion_report(&states, range);
        println!(
            "{}: {} draws, loglik {:.2} (sd {:.2}), occupied {:.2} (max {}), max log w_H {:.2}, {:.2} s per 1000 iterations",
            p.display(),
            d.n_draws,
            d.loglik_mean,
            d.loglik_sd,
            d.n_occupied_mean,
            d.n_occupied_max,
            d.log_omega_last_max,
            d.seconds_per_1000
        );
        let inc: Vec<String> = lags.inclusion.iter().map(|v| format!("{v:.3}")).collect();
        println!("  lag inclusion: {}", inc.join(" "));
        out.push(ChainSummary {
            chain: p.to_string_lossy().into_owned(),
            diagnostics: d,
            lags,
        });
    }
    if let Some(path) = &a.out {
        let mut bytes = serde_json::to_vec_pretty(&out)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)?;
    }
    Ok(())
}

/// Outcome of replaying one manifest: `(file, recorded digest, reproduced digest)`.
pub type ReplayCheck = (String, String, String);

/// Recompute every output recorded in a manifest without touching the
/// original files.
pub fn replay_manifest(m: &RunManifest) -> Result<Vec<ReplayCheck>> {
    match &m.body {
        ManifestBody::Simulate {
            spec,
            output,
            output_digest,
        } => {
            let bytes = format_series(&simulate(spec)?).into_bytes();
            Ok(vec![(output.clone(), output_digest.clone(), sha256_hex(&bytes))])
        }
        ManifestBody::Fit {
            config,
            data,
            chain_file,
            chain_digest,
            trace_file,
            trace_digest,
            ..
        } => {
            let (values, info) = load_data(&data.path, data.read, data.take)?;
            if info.digest != data.digest {
                return Err(Error::Domain(format!(
                    "{} no longer matches the recorded digest",
                    data.path
                )));
            }
            let out = fit_one(config, &values)?;
            Ok(vec![
                (chain_file.clone(), chain_digest.clone(), sha256_hex(&out.chain_bytes)),
                (trace_file.clone(), trace_digest.clone(), sha256_hex(&out.trace_bytes)),
            ])
        }
        ManifestBody::Derived {
            args,
            output,
            output_digest,
            ..
        } => {
            let dir = tempfile::tempdir()?;
            let tmp_out = dir.path().join("replay-output");
            let mut argv = Vec::with_capacity(args.len());
            let mut it = args.iter();
            while let Some(a) = it.next() {
                argv.push(a.clone());
                if a == "--out" {
                    it.next();
                    argv.push(tmp_out.to_string_lossy().into_owned());
                }
            }
            let cli = Cli::try_parse_from(std::iter::once("bnpwmar".to_string()).chain(argv.iter().cloned()))
                .map_err(|e| Error::Config(e.to_string()))?;
            run(cli.command, &argv)?;
            Ok(vec![(output.clone(), output_digest.clone(), file_digest(&tmp_out)?)])
        }
    }
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let checks = replay_manifest(&m)?;
    let mut ok = true;
    for (file, want, got) in &checks {
        let same = want == got;
        ok &= same;
        println!("{} {file}", if same { "reproduced" } else { "MISMATCH" });
    }
    if ok {
        Ok(())
    } else {
        Err(Error::Domain("replay did not reproduce the recorded outputs".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_vary_parsing() {
        assert_eq!(parse_range("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_vary("2:0:4:2").unwrap(), (1, vec![0.0, 4.0]));
        assert!(parse_vary("0:0:1:2").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn split_init_and_seeds() {
        let mut cfg = RunConfig::default();
        cfg.sampler.selection_mode = SelectionMode::Global;
        let cs = chain_configs(&cfg, 4, true, 10);
        let seeds: Vec<u64> = cs.iter().map(|c| c.sampler.seed).collect();
        assert_eq!(seeds, vec![10, 11, 12, 13]);
        let inits: Vec<&GammaInit> = cs.iter().map(|c| &c.sampler.gamma_init).collect();
        assert_eq!(
            inits,
            vec![
                &GammaInit::AllOff,
                &GammaInit::AllOff,
                &GammaInit::AllOn,
                &GammaInit::AllOn
            ]
        );
    }

    #[test]
    fn usage_error_exit_code() {
        assert_eq!(main_with_args(["bnpwmar", "fit", "--bogus"]), 2);
        assert_eq!(main_with_args(["bnpwmar"]), 2);
    }
}

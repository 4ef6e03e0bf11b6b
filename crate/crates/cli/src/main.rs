//! Command-line driver: ingest, preprocess, tune, localize, evaluate,
//! baseline, synth and ablate, each leaving a run manifest behind.

mod manifest;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use berthfinder::ingest::{load_dataset, load_raw, read_records, save_dataset, Dataset};
use berthfinder::pipeline::{cmd_ablate, cmd_evaluate, cmd_localize, run_tuning, AblationAxis, TunedParams};
use berthfinder::preprocess::{preprocess, provenance_csv};
use berthfinder::synth::{generate, write_records, SynthPort};
use berthfinder::tuner::{append_trial, read_trials};
use berthfinder::types::PortSizeClass;
use berthfinder::{baseline, DbscanParams, Error, ErrorKind, PortConfig, Result, RoiPolygon};
use clap::{Args, Parser, Subcommand};

use manifest::{load_config, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "berthfinder", version, about = "Unsupervised berth localization from AIS records")]
struct Cli {
    /// Port config (JSON), or a run manifest whose config snapshot is reused.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Enable geohash snapping.
    #[arg(long, global = true, overrides_with = "no_geohash")]
    geohash: bool,
    /// Disable geohash snapping.
    #[arg(long, global = true, overrides_with = "geohash")]
    no_geohash: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Also write an SVG map to this path (localize, baseline).
    #[arg(long, global = true)]
    plot: Option<PathBuf>,
    /// Manifest path (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse raw AIS (JSON Lines or CSV) and keep ROI/POI records.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean, split and resample; writes split_a, split_b, full and provenance.csv.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tune stop-filter parameters; trials append to a resumable JSON Lines file.
    Tune {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Best parameters as JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Berth polygons from the whole dataset.
    Localize {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        tuned: TunedArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split-consistency (Bhattacharyya distance) of the method and the baseline.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        tuned: TunedArgs,
        #[arg(long)]
        out_json: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        /// Skip the baseline comparison.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Mooring-event baseline berths.
    Baseline {
        /// Ingested dataset or raw AIS file.
        #[arg(long = "in")]
        input: PathBuf,
        /// ROI as GeoJSON; defaults to the config ROI.
        #[arg(long)]
        roi: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic port with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_ais: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
    },
    /// Re-tune and re-evaluate along one axis.
    Ablate {
        #[arg(long = "in")]
        input: PathBuf,
        /// poi, aug_points or interpolation.
        #[arg(long)]
        axis: String,
        /// Comma-separated values (days, points, seconds); defaults per axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<u64>,
        #[arg(long)]
        out_json: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
}

/// Where tuned parameters come from.
#[derive(Args, Debug)]
struct TunedArgs {
    /// Output of `tune --out`.
    #[arg(long, conflicts_with = "trials")]
    params: Option<PathBuf>,
    /// Trials file; the best successful trial is used.
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long, requires_all = ["min_points", "n_components"])]
    epsilon: Option<f64>,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    n_components: Option<usize>,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::InvalidInput(e.to_string())
}

impl TunedArgs {
    fn resolve(&self, m: &mut RunManifest) -> Result<Option<TunedParams>> {
        if let (Some(epsilon), Some(min_points), Some(n_components)) = (self.epsilon, self.min_points, self.n_components) {
            let params = DbscanParams::new(epsilon, min_points)?;
            if n_components == 0 {
                return Err(Error::Config("n_components must be positive".into()));
            }
            return Ok(Some(TunedParams { params, n_components }));
        }
        if let Some(p) = &self.params {
            m.input(p)?;
            let text = fs::read_to_string(p).map_err(|source| Error::FileUnreadable { path: p.clone(), source })?;
            return serde_json::from_str(&text).map(Some).map_err(|e| Error::Config(e.to_string()));
        }
        if let Some(t) = &self.trials {
            m.input(t)?;
            return TunedParams::from_trials(&read_trials(t)?).map(Some);
        }
        Ok(None)
    }
}

struct Ctx {
    cli_config: Option<PortConfig>,
    seed: Option<u64>,
    geohash: Option<bool>,
    args: Vec<String>,
}

impl Ctx {
    fn overrides(&self, mut c: PortConfig) -> Result<PortConfig> {
        if let Some(s) = self.seed {
            c.rng_seed = s;
        }
        if let Some(g) = self.geohash {
            c.geohash_enabled = g;
        }
        c.validate()?;
        Ok(c)
    }

    fn config(&self) -> Result<PortConfig> {
        let c = self.cli_config.clone().ok_or_else(|| Error::Config("--config is required".into()))?;
        self.overrides(c)
    }

    /// An ingested dataset; `--config` replaces the config stored with it.
    fn dataset(&self, path: &Path, m: &mut RunManifest) -> Result<Dataset> {
        m.input(path)?;
        let mut d = load_dataset(path)?;
        d.port = self.overrides(self.cli_config.clone().unwrap_or(d.port))?;
        m.seed = d.port.rng_seed;
        m.config = Some(d.port.clone());
        Ok(d)
    }

    fn manifest(&self, command: &str, config: Option<PortConfig>) -> RunManifest {
        let seed = config.as_ref().map_or(self.seed.unwrap_or(0), |c| c.rng_seed);
        RunManifest::new(command, self.args.clone(), seed, config)
    }
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v).map_err(json_err)? + "\n")?;
    Ok(())
}

fn manifest_path(explicit: &Option<PathBuf>, main_output: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = main_output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        cli_config: cli.config.as_deref().map(load_config).transpose()?,
        seed: cli.seed,
        geohash: if cli.geohash {
            Some(true)
        } else if cli.no_geohash {
            Some(false)
        } else {
            None
        },
        args: std::env::args().skip(1).collect(),
    };
    let (mut m, main_out) = match &cli.command {
        Command::Ingest { input, out } => {
            let config = ctx.config()?;
            let mut m = ctx.manifest("ingest", Some(config.clone()));
            m.input(input)?;
            let d = m.time("ingest", || load_raw(input, &config))?;
            log::info!("{} records from {} vessels", d.record_count(), d.vessel_count());
            save_dataset(&d, out)?;
            m.output(out)?;
            (m, out.clone())
        }
        Command::Preprocess { input, out_dir } => {
            let mut m = ctx.manifest("preprocess", None);
            let d = ctx.dataset(input, &mut m)?;
            let pre = m.time("preprocess", || preprocess(&d))?;
            fs::create_dir_all(out_dir)?;
            for (name, part) in [("split_a", &pre.split_a), ("split_b", &pre.split_b), ("full", &pre.full)] {
                let p = out_dir.join(format!("{name}.jsonl"));
                save_dataset(part, &p)?;
                m.output(&p)?;
            }
            let p = out_dir.join("provenance.csv");
            fs::write(&p, provenance_csv(&[("split_a", &pre.split_a), ("split_b", &pre.split_b), ("full", &pre.full)]))?;
            m.output(&p)?;
            (m, p)
        }
        Command::Tune { input, trials, out } => {
            let mut m = ctx.manifest("tune", None);
            let d = ctx.dataset(input, &mut m)?;
            let history = read_trials(trials)?;
            if !history.is_empty() {
                log::info!("resuming after {} trials", history.len());
            }
            let result = m.time("tune", || {
                run_tuning(&d, history, |t| {
                    log::info!("trial {}: objective {} (k={:?})", t.index, t.objective, t.n_components);
                    append_trial(trials, t)
                })
            })?;
            let tuned = TunedParams::from_trials(&result.history)?;
            write_json(out, &tuned)?;
            m.output(trials)?;
            m.output(out)?;
            (m, out.clone())
        }
        Command::Localize { input, tuned, out } => {
            let mut m = ctx.manifest("localize", None);
            let d = ctx.dataset(input, &mut m)?;
            let tuned = tuned.resolve(&mut m)?;
            let loc = m.time("localize", || cmd_localize(&d, tuned.as_ref()))?;
            write_json(out, &loc.geojson)?;
            m.output(out)?;
            if let Some(p) = &cli.plot {
                fs::write(p, plot::render(&d.port.roi, &loc.cloud.points, Some(&loc.model), &loc.berths))?;
                m.output(p)?;
            }
            (m, out.clone())
        }
        Command::Evaluate { input, tuned, out_json, out_csv, no_baseline } => {
            let mut m = ctx.manifest("evaluate", None);
            let d = ctx.dataset(input, &mut m)?;
            let tuned = tuned.resolve(&mut m)?;
            let report = m.time("evaluate", || cmd_evaluate(&d, tuned.as_ref(), !no_baseline))?;
            write_json(out_json, &report)?;
            fs::write(out_csv, report.to_csv())?;
            m.output(out_json)?;
            m.output(out_csv)?;
            (m, out_csv.clone())
        }
        Command::Baseline { input, roi, out } => {
            let mut m = ctx.manifest("baseline", ctx.cli_config.clone());
            m.input(input)?;
            let roi = match roi {
                Some(p) => {
                    m.input(p)?;
                    let text = fs::read_to_string(p).map_err(|source| Error::FileUnreadable { path: p.clone(), source })?;
                    RoiPolygon::from_geojson(&serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?)?
                }
                None => ctx.config()?.roi,
            };
            let d = load_any(input, &roi, ctx.cli_config.as_ref())?;
            let set = m.time("baseline", || baseline::run_baseline(&d, &roi))?;
            let name = d.port.port_name.clone();
            write_json(out, &set.to_geojson(&name))?;
            m.output(out)?;
            if let Some(p) = &cli.plot {
                let medians: Vec<_> = set.clusters.iter().flat_map(|c| c.hull.iter().copied()).collect();
                fs::write(p, plot::render(&roi, &medians, None, &set.berths(&name)))?;
                m.output(p)?;
            }
            (m, out.clone())
        }
        Command::Synth { spec, out_ais, out_truth } => {
            let mut m = ctx.manifest("synth", None);
            m.input(spec)?;
            let text = fs::read_to_string(spec).map_err(|source| Error::FileUnreadable { path: spec.clone(), source })?;
            let mut s = SynthPort::from_json(&text)?;
            if let Some(seed) = ctx.seed {
                s.seed = seed;
            }
            m.seed = s.seed;
            let generated = m.time("synth", || generate(&s))?;
            write_records(&generated.records, out_ais)?;
            write_json(out_truth, &generated.truth.to_geojson())?;
            m.output(out_ais)?;
            m.output(out_truth)?;
            (m, out_ais.clone())
        }
        Command::Ablate { input, axis, values, out_json, out_csv } => {
            let mut m = ctx.manifest("ablate", None);
            let d = ctx.dataset(input, &mut m)?;
            let axis = AblationAxis::parse(axis)?;
            let values = if values.is_empty() { axis.default_values() } else { values.clone() };
            let report = m.time("ablate", || cmd_ablate(&d, axis, &values))?;
            write_json(out_json, &report)?;
            fs::write(out_csv, report.to_csv())?;
            m.output(out_json)?;
            m.output(out_csv)?;
            (m, out_csv.clone())
        }
    };
    m.args = ctx.args.clone();
    m.write(&manifest_path(&cli.manifest, &main_out))
}

/// An ingested dataset, or a raw AIS file filtered to the ROI only.
fn load_any(path: &Path, roi: &RoiPolygon, config: Option<&PortConfig>) -> Result<Dataset> {
    if let Ok(d) = load_dataset(path) {
        return Ok(d);
    }
    let (records, lines) = read_records(path)?;
    let port = match config {
        Some(c) => PortConfig { roi: roi.clone(), ..c.clone() },
        None => {
            let (lo, hi) = records.iter().fold((i64::MAX, i64::MIN), |(lo, hi), r| (lo.min(r.timestamp), hi.max(r.timestamp)));
            if lo > hi {
                return Err(Error::EmptyDataset { stage: "ingest".into() });
            }
            PortConfig::new("port", roi.clone(), lo, hi + 1, PortSizeClass::Small)
        }
    };
    berthfinder::ingest::filter_raw(records, lines, &port)
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::EmptyData => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

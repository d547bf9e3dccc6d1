use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use scawave::data::align::AlignTally;
use scawave::data::buoy::{match_buoy, read_buoy_csv, write_buoy_csv, BuoyPair};
use scawave::data::era5::{match_era5_all, Era5Grid};
use scawave::data::qc::{quality_control, read_l1_jsonl, write_l1_jsonl, QcTally};
use scawave::data::{
    align_channels, cap_and_filter, prepare, read_samples, split_dataset, write_samples, FourChannelSample, Manifest,
    Provenance, Standardizer,
};
use scawave::metrics::{channel_sd_percentile, export_bias_grid, export_scatter, report, MetricsReport};
use scawave::model::checkpoint::Checkpoint;
use scawave::model::{ModelWeights, Strategy};
use scawave::synth::{synth_raw, synth_samples};
use scawave::training::{predict, train, write_history_csv, write_predictions_csv, PredictionRecord};
use scawave::{Error, Result, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "scawave", version, about = "Four-channel GNSS-R significant wave height retrieval")]
struct Cli {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic canonical sample file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Also write raw inputs (l1.jsonl, era5.json, buoys.csv) to this directory.
        #[arg(long)]
        raw_dir: Option<PathBuf>,
    },
    /// Quality control and channel alignment of Level-1 records.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collocate preprocessed records with a reanalysis grid.
    MatchEra5 {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collocate preprocessed records with buoy observations.
    MatchBuoy {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        buoys: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-record matches as CSV.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Train on the train split, select on the validation split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Predict on one split and write metrics, scatter and bias-map exports.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Expected strategy; an error if the checkpoint was trained with the other one.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Write per-channel predictions as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::All)]
        split: SplitName,
    },
    /// Print a metrics report as CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Per-SWH-bin rows instead of per-channel rows.
        #[arg(long)]
        bins: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
    All,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Tallies carried from `preprocess` to the matching commands.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreprocessTally {
    config_hash: String,
    qc: QcTally,
    align: AlignTally,
}

fn tally_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".tally.json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut sets = cli.set.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Command::Train {
        strategy: Some(s), ..
    } = &cli.command
    {
        sets.push(format!("strategy=\"{s}\""));
    }
    RunConfig::with_overrides(cli.config.as_deref(), &sets)
}

fn check_geometry(m: &Manifest, cfg: &RunConfig) -> Result<()> {
    if (m.ddm_width, m.ddm_height) != (cfg.ddm_width, cfg.ddm_height) {
        return Err(Error::Config(format!(
            "data has {}x{} DDMs but the configuration expects {}x{}",
            m.ddm_width, m.ddm_height, cfg.ddm_width, cfg.ddm_height
        )));
    }
    Ok(())
}

fn select(samples: Vec<FourChannelSample>, cfg: &RunConfig, which: SplitName) -> Result<Vec<FourChannelSample>> {
    if which == SplitName::All {
        return Ok(samples);
    }
    let s = split_dataset(samples, &cfg.split()?)?;
    Ok(match which {
        SplitName::Train => s.train,
        SplitName::Val => s.val,
        SplitName::Test | SplitName::All => s.test,
    })
}

fn predictions(ck: &Checkpoint, samples: &[FourChannelSample]) -> Result<Vec<PredictionRecord>> {
    let std = ck
        .standardizer
        .as_ref()
        .ok_or_else(|| Error::Format("checkpoint carries no input standardization".into()))?;
    let examples = prepare(samples, std, ck.weights.config())?;
    predict(&ck.weights, &examples)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let hash = cfg.hash();
    info!("config hash {hash}");
    match &cli.command {
        Command::Synth { out, raw_dir } => {
            let spec = cfg.synth();
            let samples = synth_samples(&spec)?;
            let prov = Provenance {
                synth: Some(spec.clone()),
                seed: Some(cfg.seed),
                config_hash: Some(hash.clone()),
                ..Provenance::default()
            };
            let m = write_samples(out, &samples, cfg.ddm_width, cfg.ddm_height, prov)?;
            info!("wrote {} samples to {}", m.n_samples, out.display());
            if let Some(dir) = raw_dir {
                std::fs::create_dir_all(dir)?;
                let raw = synth_raw(&spec)?;
                write_l1_jsonl(&dir.join("l1.jsonl"), &raw.records)?;
                raw.grid.write_json(&dir.join("era5.json"))?;
                write_buoy_csv(&dir.join("buoys.csv"), &raw.buoys)?;
                info!(
                    "wrote {} raw records, {} buoys to {}",
                    raw.records.len(),
                    raw.buoys.len(),
                    dir.display()
                );
            }
        }
        Command::Preprocess { input, out } => {
            let (records, unparsed) = read_l1_jsonl(input)?;
            let (kept, qc) = quality_control(records, unparsed, cfg.ddm_width, cfg.ddm_height);
            info!("qc {qc:?}");
            let (groups, align) = align_channels(kept);
            info!("align {align:?}");
            let aligned: Vec<_> = groups.into_iter().flat_map(|g| g.records).collect();
            write_l1_jsonl(out, &aligned)?;
            write_json(
                &tally_path(out),
                &PreprocessTally {
                    config_hash: hash.clone(),
                    qc,
                    align,
                },
            )?;
        }
        Command::MatchEra5 { input, grid, out } => {
            let (records, bad) = read_l1_jsonl(input)?;
            if bad > 0 {
                return Err(Error::Format(format!("{bad} unreadable lines in preprocessed input")));
            }
            let grid = Era5Grid::read_json(grid)?;
            grid.validate()?;
            let (groups, _) = align_channels(records);
            let (samples, era5) = match_era5_all(&groups, &grid);
            info!("era5 {era5:?}");
            let (samples, capped) = cap_and_filter(samples);
            let mut prov = upstream(input)?;
            prov.era5 = Some(era5);
            prov.capped_out = Some(capped);
            prov.seed = Some(cfg.seed);
            prov.config_hash = Some(hash.clone());
            let m = write_samples(out, &samples, cfg.ddm_width, cfg.ddm_height, prov)?;
            info!("wrote {} samples ({capped} above the SWH cap dropped)", m.n_samples);
        }
        Command::MatchBuoy {
            input,
            buoys,
            out,
            pairs,
        } => {
            let (records, bad) = read_l1_jsonl(input)?;
            if bad > 0 {
                return Err(Error::Format(format!("{bad} unreadable lines in preprocessed input")));
            }
            let buoys = read_buoy_csv(buoys)?;
            let outcome = match_buoy(&records, &buoys)?;
            info!("buoy {:?}", outcome.tally);
            if let Some(p) = pairs {
                write_pairs(p, &outcome.pairs)?;
            }
            let (samples, capped) = cap_and_filter(outcome.samples);
            let mut prov = upstream(input)?;
            prov.buoy = Some(outcome.tally);
            prov.capped_out = Some(capped);
            prov.seed = Some(cfg.seed);
            prov.config_hash = Some(hash.clone());
            let m = write_samples(out, &samples, cfg.ddm_width, cfg.ddm_height, prov)?;
            info!("wrote {} samples ({capped} above the SWH cap dropped)", m.n_samples);
        }
        Command::Train { data, out_dir, .. } => {
            let (samples, manifest) = read_samples(data)?;
            check_geometry(&manifest, &cfg)?;
            let splits = split_dataset(samples, &cfg.split()?)?;
            info!(
                "split train {} val {} test {}",
                splits.train.len(),
                splits.val.len(),
                splits.test.len()
            );
            if splits.train.is_empty() || splits.val.is_empty() {
                return Err(Error::Contract("train and validation splits must be non-empty".into()));
            }
            let model = cfg.model();
            let std = Standardizer::fit(&splits.train)?;
            let tr = prepare(&splits.train, &std, &model)?;
            let va = prepare(&splits.val, &std, &model)?;
            let weights = ModelWeights::init(&model)?;
            info!("{} strategy, {} parameters", model.strategy, weights.count_params());
            let outcome = train(weights, &tr, &va, &cfg.train(), &hash)?;
            info!(
                "best epoch {} val_rmse_avg {:.6}",
                outcome.meta.epoch, outcome.meta.val_rmse_avg
            );
            std::fs::create_dir_all(out_dir)?;
            Checkpoint {
                weights: outcome.best,
                standardizer: Some(std),
                meta: Some(outcome.meta),
            }
            .save(&out_dir.join("checkpoint.json"))?;
            write_history_csv(&out_dir.join("history.csv"), &outcome.history)?;
            std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
        }
        Command::Evaluate {
            checkpoint,
            data,
            out_dir,
            split,
            strategy,
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let trained = ck.weights.config().strategy;
            if let Some(s) = strategy {
                if *s != trained {
                    return Err(Error::Config(format!(
                        "--strategy {s} does not match the checkpoint, which was trained with {trained}"
                    )));
                }
            }
            if let Some(m) = &ck.meta {
                if m.config_hash != hash {
                    warn!("checkpoint was trained under config hash {}", m.config_hash);
                }
            }
            let (samples, manifest) = read_samples(data)?;
            check_geometry(&manifest, &cfg)?;
            let samples = select(samples, &cfg, *split)?;
            if samples.is_empty() {
                return Err(Error::Contract(format!("{split:?} split is empty")));
            }
            let sd = channel_sd_percentile(&samples.iter().map(|s| s.swh_refs()).collect::<Vec<_>>(), cfg.sd_quantile)?;
            info!("{} samples, channel SD at quantile {} = {sd:.4} m", samples.len(), cfg.sd_quantile);
            let recs = predictions(&ck, &samples)?;
            let rep = report(&recs, &cfg.bin_edges, &hash)?;
            std::fs::create_dir_all(out_dir)?;
            write_predictions_csv(&out_dir.join("predictions.csv"), &recs)?;
            rep.write_json(&out_dir.join("metrics.json"))?;
            rep.write_channels_csv(&out_dir.join("metrics_channels.csv"))?;
            rep.write_bins_csv(&out_dir.join("metrics_bins.csv"))?;
            for c in 1..=4u8 {
                let (r, p): (Vec<f64>, Vec<f64>) =
                    recs.iter().filter(|x| x.channel == c).map(|x| (x.y_ref, x.y_hat)).unzip();
                export_scatter(out_dir, &format!("scatter_ch{c}"), &r, &p, cfg.scatter_bin_width, &hash)?;
            }
            let (r, p): (Vec<f64>, Vec<f64>) = recs.iter().map(|x| (x.y_ref, x.y_hat)).unzip();
            export_scatter(out_dir, "scatter_all", &r, &p, cfg.scatter_bin_width, &hash)?;
            export_bias_grid(&out_dir.join("bias_grid.csv"), &recs, cfg.bias_cell_deg, &hash)?;
            info!(
                "average rmse {:.4} mae {:.4} bias {:.4}",
                rep.average.rmse, rep.average.mae, rep.average.bias
            );
        }
        Command::Predict {
            checkpoint,
            data,
            out,
            split,
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let (samples, manifest) = read_samples(data)?;
            check_geometry(&manifest, &cfg)?;
            let samples = select(samples, &cfg, *split)?;
            let recs = predictions(&ck, &samples)?;
            write_predictions_csv(out, &recs)?;
            info!("wrote {} predictions to {}", recs.len(), out.display());
        }
        Command::Report { metrics, bins, out } => {
            let rep = MetricsReport::read_json(metrics)?;
            match (out, bins) {
                (Some(p), true) => rep.write_bins_csv(p)?,
                (Some(p), false) => rep.write_channels_csv(p)?,
                (None, true) => rep.write_bins(csv::Writer::from_writer(std::io::stdout()))?,
                (None, false) => rep.write_channels(csv::Writer::from_writer(std::io::stdout()))?,
            }
        }
    }
    Ok(())
}

/// Provenance recorded by `preprocess`, if its tally file sits next to the input.
fn upstream(input: &Path) -> Result<Provenance> {
    let p = tally_path(input);
    if !p.exists() {
        warn!("no preprocessing tally at {}", p.display());
        return Ok(Provenance::default());
    }
    let t: PreprocessTally = serde_json::from_str(&std::fs::read_to_string(p)?)?;
    Ok(Provenance {
        qc: Some(t.qc),
        align: Some(t.align),
        ..Provenance::default()
    })
}

fn write_pairs(path: &Path, pairs: &[BuoyPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

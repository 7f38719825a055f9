//! `cstgnn` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 training aborted.
//! Every failure prints one JSON line on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use cstgnn::dataio::{generate_synthetic, ingest, load_archive, save_archive, smooth_params, EpidemicDataset};
use cstgnn::export::{export_params, forecast_curves};
use cstgnn::io::{fmt_f64, CsvTable};
use cstgnn::metrics::metric_table;
use cstgnn::mobility::{read_neighbor_pairs, static_binary_graph};
use cstgnn::scsir::{scsir_rollout, BaselineModel, ScsirParams};
use cstgnn::trainer::{baseline_metrics, evaluate, train, BaselineKind, Checkpoint, TrainConfig};
use cstgnn::{Error, ErrorKind, Result};

/// Observed days a baseline is refitted on.
const BASELINE_WEEK: usize = 7;

#[derive(Parser)]
#[command(name = "cstgnn", version, about = "Spatio-contact epidemic forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate case and population CSVs and write a dataset archive.
    Ingest {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a noiseless spatio-contact dataset.
    Synth {
        #[arg(long, default_value_t = 5)]
        regions: usize,
        #[arg(long, default_value_t = 100)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write `cases.csv` and `population.csv` into this directory.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Roll the spatio-contact model forward from an observed day with constant rates.
    Simulate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        from_date: NaiveDate,
        #[arg(long)]
        horizon: usize,
        /// One value, or one per region separated by commas.
        #[arg(long)]
        beta: String,
        #[arg(long)]
        gamma: String,
        /// Q×Q CSV whose header is the region ids; identity when absent.
        #[arg(long)]
        contact: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score weekly-refitted SIR or spatio-contact baselines on the test span.
    FitBaseline {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_model)]
        model: BaselineModel,
        #[arg(long)]
        horizon: usize,
        /// Training config supplying the split ratios.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed and write checkpoints, metrics and a report.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Neighbour list (`region_a,region_b`) for the static_graph variant.
        #[arg(long)]
        neighbors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test span.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to the checkpoint's horizon.
        #[arg(long)]
        t_pre: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast the days after `--from-date`, the last observed day.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        from_date: NaiveDate,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-day contact heatmaps and the R0 series.
    ExportParams {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated consecutive dates, or `FIRST..LAST`.
        #[arg(long)]
        dates: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_model(s: &str) -> std::result::Result<BaselineModel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{s:?} is not a YYYY-MM-DD date")))
}

fn parse_dates(spec: &str) -> Result<Vec<NaiveDate>> {
    if let Some((first, last)) = spec.split_once("..") {
        let (first, last) = (parse_date(first)?, parse_date(last)?);
        if last < first {
            return Err(Error::InvalidArgument(format!("empty date range {spec}")));
        }
        Ok(first.iter_days().take_while(|d| *d <= last).collect())
    } else {
        spec.split(',').map(parse_date).collect()
    }
}

fn parse_rates(s: &str, q: usize, name: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("--{name}: {v:?} is not a number")))
        })
        .collect::<Result<_>>()?;
    match values.len() {
        1 => Ok(vec![values[0]; q]),
        n if n == q => Ok(values),
        n => Err(Error::InvalidArgument(format!("--{name} needs 1 or {q} values, got {n}"))),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.apply_seed_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("plain JSON"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { cases, population, out } => {
            let ds = ingest(&cases, &population)?;
            save_archive(&ds, &out)?;
            print_json(&serde_json::to_value(ds.summary()).expect("summary"));
        }
        Command::Synth {
            regions,
            days,
            seed,
            out,
            csv_dir,
        } => {
            if days < 2 {
                return Err(Error::InvalidArgument("--days must be at least 2".into()));
            }
            let params = smooth_params(regions, days - 1, seed)?;
            let ds = generate_synthetic(regions, days, &params, seed)?.dataset;
            save_archive(&ds, &out)?;
            if let Some(dir) = csv_dir {
                create_dir(&dir)?;
                ds.write_csv(&dir.join("cases.csv"), &dir.join("population.csv"))?;
            }
            print_json(&serde_json::to_value(ds.summary()).expect("summary"));
        }
        Command::Simulate {
            dataset,
            from_date,
            horizon,
            beta,
            gamma,
            contact,
            out,
        } => simulate(&load_archive(&dataset)?, from_date, horizon, &beta, &gamma, contact.as_deref(), &out)?,
        Command::FitBaseline {
            dataset,
            model,
            horizon,
            config,
            out,
        } => {
            let ds = load_archive(&dataset)?;
            if horizon == 0 {
                return Err(Error::InvalidArgument("--horizon must be positive".into()));
            }
            let cfg = TrainConfig {
                t_obs: BASELINE_WEEK,
                t_pre: horizon,
                ..load_config(config.as_deref())?
            };
            let split = cstgnn::dataio::split_and_normalize(&ds, cfg.ratios, cfg.norm_scope)?;
            if split.test.len() < BASELINE_WEEK + horizon {
                return Err(Error::Data(format!(
                    "test span of {} days is shorter than {BASELINE_WEEK} + horizon {horizon}",
                    split.test.len()
                )));
            }
            let windows = cstgnn::dataio::make_windows(&ds, &split, split.test.clone(), BASELINE_WEEK, horizon)?;
            let m = baseline_metrics(&ds, &windows, BaselineKind::Refit(model), horizon)?;
            metric_table(&[(horizon, 0, m)])?.write(&out)?;
        }
        Command::Train {
            dataset,
            config,
            neighbors,
            out,
        } => {
            let ds = load_archive(&dataset)?;
            let cfg = load_config(config.as_deref())?;
            let graph = match neighbors {
                Some(path) => Some(static_binary_graph(
                    ds.num_regions(),
                    &read_neighbor_pairs(&path, &ds.regions)?,
                )?),
                None => None,
            };
            create_dir(&out)?;
            let outcome = match train(&ds, &cfg, graph.as_ref()) {
                Ok(o) => o,
                Err(e @ Error::TrainingAborted(_)) => {
                    cstgnn::io::write_atomic(&out.join("diagnostics.txt"), format!("{e}\n").as_bytes())?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            for ck in &outcome.checkpoints {
                ck.save(&out.join(format!("seed_{}.ckpt", ck.seed)))?;
            }
            outcome.best_checkpoint().save(&out.join("checkpoint.ckpt"))?;
            outcome.report.metric_table()?.write(&out.join("metrics.csv"))?;
            cstgnn::io::write_atomic(&out.join("report.json"), outcome.report.to_json().as_bytes())?;
            cstgnn::io::write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
            let summary: serde_json::Map<String, serde_json::Value> = outcome
                .report
                .summary()
                .into_iter()
                .map(|m| (m.metric.clone(), serde_json::json!({"mean": m.mean, "ci95": m.ci_half_width})))
                .collect();
            print_json(&serde_json::Value::Object(summary));
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            t_pre,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_archive(&dataset)?;
            let report = evaluate(&ck, &ds, t_pre.unwrap_or(ck.config.t_pre))?;
            for flag in report.seeds.iter().flat_map(|s| &s.metrics.flags) {
                log::warn!("{flag}");
            }
            report.metric_table()?.write(&out)?;
        }
        Command::Forecast {
            checkpoint,
            dataset,
            from_date,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            forecast_curves(&ck, &load_archive(&dataset)?, from_date)?.write(&out)?;
        }
        Command::ExportParams {
            checkpoint,
            dataset,
            dates,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_archive(&dataset)?;
            let bundle = export_params(&ck, &ds, &parse_dates(&dates)?)?;
            create_dir(&out)?;
            for (date, table) in &bundle.contact_heatmaps {
                table.write(&out.join(format!("contact_{date}.csv")))?;
            }
            bundle.r0_series.write(&out.join("r0.csv"))?;
        }
    }
    Ok(())
}

fn simulate(
    ds: &EpidemicDataset,
    from_date: NaiveDate,
    horizon: usize,
    beta: &str,
    gamma: &str,
    contact: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let q = ds.num_regions();
    let day = ds
        .day_index(from_date)
        .ok_or_else(|| Error::InvalidArgument(format!("{from_date} is outside the dataset")))?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("--horizon must be positive".into()));
    }
    let contact = match contact {
        Some(path) => {
            let ids: Vec<&str> = ds.regions.iter().map(String::as_str).collect();
            let table = CsvTable::read(path, &ids)?;
            if table.rows().len() != q {
                return Err(Error::Data(format!("contact matrix needs {q} rows, got {}", table.rows().len())));
            }
            table
                .rows()
                .iter()
                .flatten()
                .map(|v| v.parse().map_err(|_| Error::Data(format!("contact entry {v:?} is not a number"))))
                .collect::<Result<Vec<f64>>>()?
        }
        None => (0..q * q).map(|k| if k / q == k % q { 1.0 } else { 0.0 }).collect(),
    };
    let params = ScsirParams::constant(
        &parse_rates(beta, q, "beta")?,
        &parse_rates(gamma, q, "gamma")?,
        &contact,
        horizon,
        1.0,
    )?;
    let traj = scsir_rollout(&ds.state(day), &params)?;
    let mut table = CsvTable::new(&["date", "region_id", "S", "I", "R"]);
    for t in 0..horizon {
        let date = from_date + chrono::Days::new(t as u64 + 1);
        for (k, region) in ds.regions.iter().enumerate() {
            let mut row = vec![date.to_string(), region.clone()];
            row.extend((0..3).map(|f| fmt_f64(traj.states.get(t, k, f))));
            table.push(row)?;
        }
    }
    table.write(out)
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Training => 4,
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    let line = serde_json::json!({"error": kind, "exit_code": code, "message": message});
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", 2, e.to_string().lines().next().unwrap_or("invalid arguments")),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.kind() {
                ErrorKind::Usage => "usage",
                ErrorKind::Data => "data",
                ErrorKind::Training => "training",
            };
            fail(kind, exit_code(e.kind()), &e.to_string())
        }
    }
}

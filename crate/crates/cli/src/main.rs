//! `moew` command-line runner.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moew::data::{self, ToySpec};
use moew::driver::{self, Experiment, ExperimentConfig, RepeatOutcome};
use moew::metrics::Orientation;
use moew::persist;
use moew::MoewError;

#[derive(Parser)]
#[command(name = "moew", version, about = "Metric-optimized example weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the weighting search and any baselines, writing CSVs and models.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum concurrent trainings.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate a saved two-feature weighting function on a G x G grid over [0, 1]^2.
    WeightGrid {
        /// A `.weighting` file, or a `run` output directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 21)]
        resolution: usize,
        /// Which repeat's weighting to read from an output directory.
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        /// Output TSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validation/test correlation and best-so-far trajectory of a runs.csv.
    Report {
        runs: PathBuf,
        /// Only rows of this method.
        #[arg(long, default_value = "moew")]
        method: String,
        /// The metric is an error: smaller is better.
        #[arg(long)]
        minimize: bool,
    },
    /// Write the synthetic two-feature splits as CSVs.
    ToyGen {
        /// Experiment config whose `data.toy` table to use; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, jobs } => cmd_run(&config, &out, seed, jobs),
        Command::WeightGrid {
            model,
            resolution,
            repeat,
            out,
        } => cmd_weight_grid(&model, resolution, repeat).and_then(|tsv| emit(&tsv, out.as_deref())),
        Command::Report { runs, method, minimize } => {
            let orientation = if minimize { Orientation::Minimize } else { Orientation::Maximize };
            cmd_report(&runs, &method, orientation).and_then(|text| emit(&text, None))
        }
        Command::ToyGen { config, out, seed } => cmd_toy_gen(config.as_deref(), &out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                MoewError::Config { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> MoewError {
    MoewError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn emit(text: &str, path: Option<&Path>) -> moew::Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, jobs: Option<usize>) -> moew::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path).map_err(|e| match e {
        MoewError::Io { .. } => MoewError::Config {
            path: String::new(),
            message: e.to_string(),
        },
        e => e,
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

const OUTPUT_FILES: [&str; 3] = ["runs.csv", "timings.csv", "summary.csv"];

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, jobs: Option<usize>) -> moew::Result<()> {
    let cfg = load_config(config, seed, jobs)?;
    let created = !out.exists();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let result = Experiment::new(cfg.clone())
        .and_then(|ex| ex.run())
        .and_then(|outcomes| write_outputs(&cfg, &outcomes, out));
    if result.is_err() {
        for f in OUTPUT_FILES {
            let _ = fs::remove_file(out.join(f));
        }
        let _ = fs::remove_dir_all(out.join("models"));
        if created {
            let _ = fs::remove_dir(out);
        }
    }
    result
}

/// Natural-orientation value of an oriented metric.
fn natural(cfg: &ExperimentConfig, v: f64) -> f64 {
    cfg.metric.orient(v)
}

pub fn runs_csv(cfg: &ExperimentConfig, outcomes: &[RepeatOutcome]) -> String {
    let d = outcomes
        .iter()
        .flat_map(|o| o.methods[0].records.first())
        .map(|r| r.alpha.len())
        .next()
        .unwrap_or(0);
    let mut s = String::from("method,repeat,batch,candidate");
    for j in 0..d {
        write!(s, ",alpha_{j}").unwrap();
    }
    s.push_str(",val_metric,test_metric\n");
    for o in outcomes {
        for m in &o.methods {
            for r in &m.records {
                write!(s, "{},{},{},{}", r.method, r.repeat, r.batch, r.candidate).unwrap();
                for j in 0..d {
                    match r.alpha.get(j) {
                        Some(a) => write!(s, ",{a}").unwrap(),
                        None => s.push(','),
                    }
                }
                writeln!(s, ",{},{}", natural(cfg, r.val_metric), natural(cfg, r.test_metric)).unwrap();
            }
        }
    }
    s
}

fn timings_csv(outcomes: &[RepeatOutcome]) -> String {
    let mut s = String::from("method,repeat,batch,candidate,wall_time_s\n");
    for r in outcomes.iter().flat_map(|o| &o.methods).flat_map(|m| &m.records) {
        writeln!(s, "{},{},{},{},{}", r.method, r.repeat, r.batch, r.candidate, r.wall_time_s).unwrap();
    }
    s
}

fn summary_csv(cfg: &ExperimentConfig, outcomes: &[RepeatOutcome]) -> moew::Result<String> {
    let mut s = String::from("method,repeats,mean_test_metric,margin_95\n");
    if outcomes.len() >= 2 {
        for m in driver::summarize_outcomes(outcomes)? {
            let mean = natural(cfg, m.mean_test);
            writeln!(s, "{},{},{},{}", m.method, m.repeats, mean, m.margin_test).unwrap();
        }
    } else {
        // One repeat has no spread; report the value with an empty margin.
        for m in outcomes.iter().flat_map(|o| &o.methods) {
            let v = natural(cfg, m.best_record().test_metric);
            writeln!(s, "{},1,{v},", m.method).unwrap();
        }
    }
    Ok(s)
}

fn write_outputs(cfg: &ExperimentConfig, outcomes: &[RepeatOutcome], out: &Path) -> moew::Result<()> {
    let summary = summary_csv(cfg, outcomes)?;
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    };
    let models = out.join("models");
    fs::create_dir_all(&models).map_err(|e| io_err(&models, e))?;
    for o in outcomes {
        for m in &o.methods {
            let base = format!("{}_repeat{}", m.method, o.repeat);
            let p = models.join(format!("{base}.model"));
            persist::write_text(&p, &persist::model_to_string(&m.best_params))?;
            if let Some(w) = &m.weighting {
                let p = models.join(format!("{base}.weighting"));
                persist::write_text(&p, &persist::weighting_to_string(w))?;
            }
        }
    }
    write("runs.csv", &runs_csv(cfg, outcomes))?;
    write("timings.csv", &timings_csv(outcomes))?;
    write("summary.csv", &summary)
}

fn cmd_weight_grid(model: &Path, resolution: usize, repeat: usize) -> moew::Result<String> {
    if resolution < 2 {
        return Err(MoewError::Domain("resolution must be at least 2".into()));
    }
    let path = if model.is_dir() {
        model.join("models").join(format!("moew_repeat{repeat}.weighting"))
    } else {
        model.to_path_buf()
    };
    let w = persist::weighting_from_str(&persist::read_text(&path)?)?;
    if w.standardizer.mean.len() != 2 {
        return Err(MoewError::Unsupported(format!(
            "weight grids need 2 features, the model has {}",
            w.standardizer.mean.len()
        )));
    }
    let classes = w
        .task
        .num_classes()
        .ok_or_else(|| MoewError::Unsupported("weight grids need class labels".into()))?;
    let mut s = String::from("x1\tx2\tlabel\tweight\n");
    let step = 1.0 / (resolution - 1) as f64;
    for label in 0..classes {
        for i in 0..resolution {
            for j in 0..resolution {
                let x = [i as f64 * step, j as f64 * step];
                let v = w.weight(&x, label as f64)?;
                writeln!(s, "{}\t{}\t{label}\t{v}", x[0], x[1]).unwrap();
            }
        }
    }
    Ok(s)
}

struct RunRow {
    batch: usize,
    val: f64,
    test: f64,
}

fn read_runs(path: &Path, method: &str) -> moew::Result<Vec<(usize, RunRow)>> {
    let parse_err = |row: usize, column: &str, message: String| MoewError::Parse {
        row,
        column: column.into(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| MoewError::Schema(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| MoewError::Schema(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MoewError::Schema(format!("runs file lacks a `{name}` column")))
    };
    let (mc, rc, bc, vc, tc) = (col("method")?, col("repeat")?, col("batch")?, col("val_metric")?, col("test_metric")?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 1, "", e.to_string()))?;
        if &rec[mc] != method {
            continue;
        }
        let int = |c: usize, name: &str| rec[c].parse::<usize>().map_err(|e| parse_err(i + 1, name, e.to_string()));
        let real = |c: usize, name: &str| rec[c].parse::<f64>().map_err(|e| parse_err(i + 1, name, e.to_string()));
        rows.push((
            int(rc, "repeat")?,
            RunRow {
                batch: int(bc, "batch")?,
                val: real(vc, "val_metric")?,
                test: real(tc, "test_metric")?,
            },
        ));
    }
    Ok(rows)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn cmd_report(path: &Path, method: &str, orientation: Orientation) -> moew::Result<String> {
    let rows = read_runs(path, method)?;
    let finite: Vec<&RunRow> = rows
        .iter()
        .map(|(_, r)| r)
        .filter(|r| r.val.is_finite() && r.test.is_finite())
        .collect();
    if finite.len() < 2 {
        return Err(MoewError::InvalidData(format!(
            "report needs at least 2 finite `{method}` rows, found {}",
            finite.len()
        )));
    }
    let val: Vec<f64> = finite.iter().map(|r| r.val).collect();
    let test: Vec<f64> = finite.iter().map(|r| r.test).collect();
    let mut s = String::new();
    writeln!(s, "rows\t{}", finite.len()).unwrap();
    writeln!(s, "pearson_val_test\t{}", pearson(&val, &test)).unwrap();
    writeln!(s, "repeat\tbatch\tbest_val_so_far").unwrap();
    let better = |a: f64, b: f64| match orientation {
        Orientation::Maximize => a > b,
        Orientation::Minimize => a < b,
    };
    let mut repeats: Vec<usize> = rows.iter().map(|(r, _)| *r).collect();
    repeats.sort_unstable();
    repeats.dedup();
    for rep in repeats {
        let mut best: Option<f64> = None;
        let mut batches: Vec<usize> = rows.iter().filter(|(r, _)| *r == rep).map(|(_, x)| x.batch).collect();
        batches.sort_unstable();
        batches.dedup();
        for b in batches {
            for (_, r) in rows.iter().filter(|(r, x)| *r == rep && x.batch == b) {
                if r.val.is_finite() && best.is_none_or(|v| better(r.val, v)) {
                    best = Some(r.val);
                }
            }
            match best {
                Some(v) => writeln!(s, "{rep}\t{b}\t{v}").unwrap(),
                None => writeln!(s, "{rep}\t{b}\t").unwrap(),
            }
        }
    }
    Ok(s)
}

fn cmd_toy_gen(config: Option<&Path>, out: &Path, seed: Option<u64>) -> moew::Result<()> {
    let mut spec = match config {
        Some(p) => load_config(p, None, None)?.data.toy.ok_or_else(|| MoewError::Config {
            path: "data.toy".into(),
            message: "the config has no toy data".into(),
        })?,
        None => ToySpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let splits = data::generate_toy(&spec)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    data::write_csv(&splits.train, out.join("train.csv"))?;
    data::write_csv(&splits.validation, out.join("validation.csv"))?;
    data::write_csv(&splits.test, out.join("test.csv"))
}

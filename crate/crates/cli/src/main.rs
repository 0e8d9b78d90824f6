//! `hodsim`: run a scenario file under the hierarchical design, the flat
//! baseline, or both, and write traces, summaries and metrics.
//!
//! Exit status: 0 on success, 1 on an I/O failure, 2 on a configuration
//! error, 3 when a runtime invariant is violated. Files written before a
//! failure are removed.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hodsim::config::ScenarioConfig;
use hodsim::detection::{base_station_report, BaseArrival, SummaryReport};
use hodsim::engine::{Architecture, RunLog, Scenario};
use hodsim::error::SimError;
use hodsim::metrics::{compare, score, ComparisonReport, Metrics};
use hodsim::sweep::map_seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Hod,
    Flat,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Text
    }

    fn text(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Debug, Parser)]
#[command(name = "hodsim", version, about = "Hierarchical overlay IDS simulator for hexagonal sensor networks")]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "hod")]
    mode: Mode,
    /// Overrides the seed in the scenario file.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range `N..M`; one run per seed plus an aggregate CSV.
    #[arg(long, value_parser = parse_seed_range)]
    seeds: Option<SeedRange>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Debug, Clone, Copy)]
struct SeedRange(u64, u64);

fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected N..M, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if a > b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(SeedRange(a, b))
}

enum Failure {
    Config(String),
    Invariant(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Invariant(m) | Failure::Io(m) => m,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invariant(_) => Failure::Invariant(e.to_string()),
            SimError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

/// Everything one seed produces, rendered before any file is written.
struct SeedRun {
    seed: u64,
    logs: Vec<(RunLog, SummaryReport, Metrics)>,
    comparison: Option<ComparisonReport>,
}

fn summary_of(scenario: &Scenario, log: &RunLog) -> SummaryReport {
    let arrivals: Vec<BaseArrival> = match log.architecture {
        Architecture::Hod => log.base_arrivals(),
        Architecture::Flat => log
            .signals
            .iter()
            .map(|a| BaseArrival {
                alert: a.clone(),
                arrival: a.detected_at,
            })
            .collect(),
    };
    let truth = log.ground_truth.as_deref().unwrap_or_default();
    base_station_report(&scenario.topology, &arrivals, truth, log.match_window_us)
}

fn run_seed(config: &ScenarioConfig, seed: u64, mode: Mode) -> Result<SeedRun, Failure> {
    let scenario = Scenario::build(&config.with_seed(seed))?;
    let archs: &[Architecture] = match mode {
        Mode::Hod => &[Architecture::Hod],
        Mode::Flat => &[Architecture::Flat],
        Mode::Compare => &[Architecture::Hod, Architecture::Flat],
    };
    let mut logs = Vec::new();
    for &arch in archs {
        let log = scenario.run(arch)?;
        let metrics = score(&log).map_err(|e| Failure::Invariant(e.to_string()))?;
        let summary = summary_of(&scenario, &log);
        logs.push((log, summary, metrics));
    }
    let comparison = match logs.as_slice() {
        [(_, _, hod), (_, _, flat)] => {
            Some(compare(hod, flat, config.baseline.detection_tolerance).map_err(|e| Failure::Invariant(e.to_string()))?)
        }
        _ => None,
    };
    Ok(SeedRun { seed, logs, comparison })
}

/// Resolved configuration as `# ` comment lines.
fn config_echo(config: &ScenarioConfig) -> String {
    let mut s = format!("# scenario {}\n", config.scenario_hash());
    for line in config.to_toml().lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

const THRESHOLD_NOTE: &str = "# detector thresholds and the jamming targets (>= 90% detection of a +10 dBm jammer, <= 1 false positive per 100 windows) are design-chosen, not measured values\n";

/// Files written so far, removed again if a later step fails.
struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn write(&mut self, name: &str, header: &str, body: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let mut bytes = header.as_bytes().to_vec();
        bytes.extend_from_slice(body);
        fs::write(&path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn remove_all(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Failure::Io(e.to_string()))?;
    Ok(buf)
}

fn write_seed(out: &mut Output, run: &SeedRun, config: &ScenarioConfig, format: Format, suffix: &str) -> Result<(), Failure> {
    let echo = config_echo(&config.with_seed(run.seed));
    for (log, summary, metrics) in &run.logs {
        let arch = log.architecture.as_str();
        out.write(&format!("trace_{arch}{suffix}.csv"), &echo, &csv_bytes(|b| log.write_trace_csv(b))?)?;
        let summary_header = format!("{echo}{THRESHOLD_NOTE}");
        if format.csv() {
            out.write(&format!("summary_{arch}{suffix}.csv"), &summary_header, &csv_bytes(|b| summary.write_csv(b))?)?;
            out.write(&format!("metrics_{arch}{suffix}.csv"), &echo, &csv_bytes(|b| metrics.write_csv(b))?)?;
        }
        if format.text() {
            out.write(&format!("summary_{arch}{suffix}.txt"), &summary_header, summary.to_text().as_bytes())?;
            out.write(&format!("metrics_{arch}{suffix}.txt"), &echo, metrics.to_text().as_bytes())?;
        }
    }
    if let Some(cmp) = &run.comparison {
        if format.csv() {
            out.write(&format!("comparison{suffix}.csv"), &echo, &csv_bytes(|b| cmp.write_csv(b))?)?;
        }
        if format.text() {
            out.write(&format!("comparison{suffix}.txt"), &echo, cmp.to_text().as_bytes())?;
        }
    }
    Ok(())
}

/// Mean, min and max of every numeric metric over the sweep's seeds.
fn aggregate_csv(runs: &[SeedRun]) -> Result<Vec<u8>, Failure> {
    let mut values: BTreeMap<(String, &'static str, String), Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for run in runs {
        for (log, _, metrics) in &run.logs {
            for (metric, key, value) in metrics.rows() {
                let Ok(v) = value.parse::<f64>() else { continue };
                if metric == "seed" {
                    continue;
                }
                let k = (log.architecture.as_str().to_string(), metric, key);
                if !values.contains_key(&k) {
                    order.push(k.clone());
                }
                values.entry(k).or_default().push(v);
            }
        }
    }
    csv_bytes(|buf| {
        let mut wr = csv::Writer::from_writer(buf);
        wr.write_record(["architecture", "metric", "key", "seeds", "mean", "min", "max"])?;
        for k in &order {
            let v = &values[k];
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            wr.write_record([
                k.0.clone(),
                k.1.to_string(),
                k.2.clone(),
                v.len().to_string(),
                format!("{mean:.9}"),
                format!("{min:.9}"),
                format!("{max:.9}"),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })
}

fn execute(args: &Args, out: &mut Output) -> Result<String, Failure> {
    let mut config = ScenarioConfig::from_file(&args.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    let seeds: Vec<u64> = match args.seeds {
        Some(SeedRange(a, b)) => (a..=b).collect(),
        None => vec![config.seed],
    };
    let runs: Vec<SeedRun> = map_seeds(&seeds, |s| run_seed(&config, s, args.mode)).into_iter().collect::<Result<_, _>>()?;
    fs::create_dir_all(&out.dir).map_err(|e| Failure::Io(format!("{}: {e}", out.dir.display())))?;
    let sweep = args.seeds.is_some();
    for run in &runs {
        let suffix = if sweep { format!("_seed{}", run.seed) } else { String::new() };
        write_seed(out, run, &config, args.format, &suffix)?;
    }
    if sweep {
        out.write("aggregate.csv", &config_echo(&config), &aggregate_csv(&runs)?)?;
    }
    Ok(format!("{} run(s) written to {}", runs.len(), out.dir.display()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut out = Output {
        dir: args.out.clone(),
        written: Vec::new(),
    };
    match execute(&args, &mut out) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            out.remove_all();
            eprintln!("hodsim: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

//! Batch experiments: many seeds in parallel, traces on disk, CSV
//! summaries, and paired comparison between methods.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::executor::{run, Method, RunError};
use crate::sim::metrics::SeriesPoint;
use crate::sim::scenario::WorldScenario;
use crate::sim::trace::{RunSummary, Trace, TraceError};
use crate::sim::Simulation;

/// Version of the CSV column layout.
pub const CSV_FORMAT_VERSION: u32 = 1;
/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "SB2G_WORKERS";
/// Share of seeds that must agree before an ordering is declared.
pub const ORDERING_QUORUM: f64 = 0.8;

pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid seed range `{0}` (expected a..b or a single seed)")]
    SeedRange(String),
    #[error("invalid {WORKERS_ENV}: {0}")]
    Workers(String),
    #[error("comparison needs at least two methods, found {0}")]
    TooFewMethods(usize),
    #[error("seed sets differ: {a} has {a_seeds:?}, {b} has {b_seeds:?}")]
    MismatchedSeeds {
        a: String,
        a_seeds: Vec<u64>,
        b: String,
        b_seeds: Vec<u64>,
    },
    #[error("strict comparison needs at least two matched seeds, found {0}")]
    TooFewSeeds(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Parse `a..b` (inclusive) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, ExperimentError> {
    let bad = || ExperimentError::SeedRange(s.to_string());
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![s.trim().parse().map_err(|_| bad())?]),
    }
}

/// Worker count from [`WORKERS_ENV`], if set.
pub fn workers_from_env() -> Result<Option<usize>, ExperimentError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ExperimentError::Workers(v)),
        },
        Err(_) => Ok(None),
    }
}

pub fn trace_file_name(method: Method, seed: u64) -> String {
    format!("{method}-seed{seed}.jsonl")
}

/// One row of `runs.csv`: a run's state at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub format_version: u32,
    pub method: Method,
    pub seed: u64,
    pub time: f64,
    pub inspected: usize,
    pub completed: usize,
    pub closest_sum: f64,
    pub path_length: f64,
    pub reward_cost: f64,
}

/// One row of `summary.csv`: statistics across seeds at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub format_version: u32,
    pub method: Method,
    pub time: f64,
    pub runs: usize,
    pub inspected_mean: f64,
    pub inspected_min: usize,
    pub inspected_max: usize,
    pub closest_sum_mean: f64,
    pub closest_sum_min: f64,
    pub closest_sum_max: f64,
    pub path_length_mean: f64,
    pub path_length_min: f64,
    pub path_length_max: f64,
    pub reward_cost_mean: f64,
    pub reward_cost_min: f64,
    pub reward_cost_max: f64,
}

fn stats(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64) {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let min = xs.clone().fold(f64::INFINITY, f64::min);
    let max = xs.fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

pub fn run_rows(method: Method, s: &RunSummary) -> Vec<RunRow> {
    s.series
        .iter()
        .map(|p| RunRow {
            format_version: CSV_FORMAT_VERSION,
            method,
            seed: s.seed,
            time: p.time,
            inspected: p.inspected,
            completed: p.completed,
            closest_sum: p.closest_sum,
            path_length: p.path_length,
            reward_cost: p.reward_cost,
        })
        .collect()
}

/// Aggregate per-seed series of one method, sample by sample.
pub fn summary_rows(method: Method, runs: &[RunSummary]) -> Vec<SummaryRow> {
    let n = runs.iter().map(|r| r.series.len()).min().unwrap_or(0);
    (0..n)
        .map(|k| {
            let pts: Vec<&SeriesPoint> = runs.iter().map(|r| &r.series[k]).collect();
            let it = |f: fn(&SeriesPoint) -> f64| pts.iter().map(move |p| f(p));
            let (im, imin, imax) = stats(it(|p| p.inspected as f64));
            let (cm, cmin, cmax) = stats(it(|p| p.closest_sum));
            let (pm, pmin, pmax) = stats(it(|p| p.path_length));
            let (rm, rmin, rmax) = stats(it(|p| p.reward_cost));
            SummaryRow {
                format_version: CSV_FORMAT_VERSION,
                method,
                time: pts[0].time,
                runs: pts.len(),
                inspected_mean: im,
                inspected_min: imin as usize,
                inspected_max: imax as usize,
                closest_sum_mean: cm,
                closest_sum_min: cmin,
                closest_sum_max: cmax,
                path_length_mean: pm,
                path_length_min: pmin,
                path_length_max: pmax,
                reward_cost_mean: rm,
                reward_cost_min: rmin,
                reward_cost_max: rmax,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    /// Per-seed summaries in seed order.
    pub runs: Vec<RunSummary>,
    pub hashes: Vec<String>,
}

/// Run `method` on every seed, in parallel, writing
/// `<method>-seed<k>.jsonl` per seed plus `runs.csv` and `summary.csv`.
pub fn run_experiment(
    scenario: &WorldScenario,
    method: Method,
    seeds: &[u64],
    budget: Option<f64>,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<ExperimentOutput, ExperimentError> {
    let mut scenario = scenario.clone();
    if let Some(b) = budget {
        scenario.budget = b;
    }
    // fail before spawning anything
    Simulation::new(&scenario, scenario.seed).map_err(RunError::from)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let job = |seed: u64| -> Result<(RunSummary, String), ExperimentError> {
        let path = out_dir.join(trace_file_name(method, seed));
        let f = File::create(&path).map_err(io_err(&path))?;
        let out = run(&scenario, method, seed, BufWriter::new(f))?;
        Ok((out.summary, out.hash))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Workers(e.to_string()))?;
    let results: Vec<_> = pool.install(|| seeds.par_iter().map(|&s| job(s)).collect());
    let mut runs = Vec::new();
    let mut hashes = Vec::new();
    for r in results {
        let (s, h) = r?;
        runs.push(s);
        hashes.push(h);
    }
    let rows: Vec<RunRow> = runs.iter().flat_map(|s| run_rows(method, s)).collect();
    write_csv(&out_dir.join(RUNS_CSV), &rows)?;
    write_csv(&out_dir.join(SUMMARY_CSV), &summary_rows(method, &runs))?;
    Ok(ExperimentOutput {
        out_dir: out_dir.to_path_buf(),
        runs,
        hashes,
    })
}

/// Summaries recomputed from the trace files in `dir`, grouped by method
/// and sorted by seed.
pub fn summaries_from_traces(
    dir: &Path,
) -> Result<BTreeMap<Method, Vec<RunSummary>>, ExperimentError> {
    let mut out: BTreeMap<Method, Vec<RunSummary>> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    entries.sort();
    for p in entries {
        let trace = Trace::load(&p)?;
        let Ok(method) = trace.header.method.parse::<Method>() else {
            continue;
        };
        let ticks: Vec<_> = trace.ticks().cloned().collect();
        let last = ticks.last().ok_or(TraceError::Missing("tick records"))?;
        let series = crate::sim::metrics::sample_series(
            &ticks,
            trace.header.scenario.tick_rate,
            trace.header.budget,
        );
        let end = trace.summary().ok_or(TraceError::Missing("end record"))?;
        out.entry(method).or_default().push(RunSummary {
            method: trace.header.method.clone(),
            seed: trace.header.seed,
            scenario: trace.header.scenario.name.clone(),
            ticks: last.tick,
            duration: last.time,
            targets: end.targets,
            inspected: last.inspected,
            completed: last.completed,
            path_length: last.path_length,
            closest_sum: last.closest_sum,
            reward: last.reward,
            stair_failures: end.stair_failures,
            collisions: end.collisions,
            reward_cost: last.reward_cost,
            series,
        });
    }
    for v in out.values_mut() {
        v.sort_by_key(|s| s.seed);
    }
    Ok(out)
}

/// Paired comparison of two methods over matched seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub seeds: Vec<u64>,
    /// Per-seed `a − b` of the final inspected count.
    pub inspected_deltas: Vec<f64>,
    /// Per-seed `a − b` of the final reward minus cost.
    pub reward_cost_deltas: Vec<f64>,
    /// `Some(true)`: `a` beats `b` on inspections in at least the quorum
    /// of seeds; `Some(false)`: the reverse; `None`: no consistent order.
    pub inspected_order: Option<bool>,
    pub reward_cost_order: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// Labels ranked by mean final inspected count, then reward minus cost.
    pub ranking: Vec<(String, f64, f64)>,
    pub pairs: Vec<PairComparison>,
}

fn order(deltas: &[f64]) -> Option<bool> {
    let n = deltas.len() as f64;
    let wins = deltas.iter().filter(|d| **d > 0.0).count() as f64;
    let losses = deltas.iter().filter(|d| **d < 0.0).count() as f64;
    if n > 0.0 && wins / n >= ORDERING_QUORUM {
        Some(true)
    } else if n > 0.0 && losses / n >= ORDERING_QUORUM {
        Some(false)
    } else {
        None
    }
}

/// Final `(inspected, reward_cost)` per seed, keyed by a label per method.
pub type FinalTable = BTreeMap<String, BTreeMap<u64, (f64, f64)>>;

/// Read the `runs.csv` of each directory and keep each run's last sample.
pub fn load_finals(dirs: &[PathBuf]) -> Result<FinalTable, ExperimentError> {
    let mut table: FinalTable = BTreeMap::new();
    for dir in dirs {
        let rows: Vec<RunRow> = read_csv(&dir.join(RUNS_CSV))?;
        let mut local: BTreeMap<Method, BTreeMap<u64, (f64, f64, f64)>> = BTreeMap::new();
        for r in rows {
            let e = local.entry(r.method).or_default().entry(r.seed).or_insert((
                f64::NEG_INFINITY,
                0.0,
                0.0,
            ));
            if r.time >= e.0 {
                *e = (r.time, r.inspected as f64, r.reward_cost);
            }
        }
        for (m, seeds) in local {
            let mut label = m.to_string();
            let mut k = 2;
            while table.contains_key(&label) {
                label = format!("{m}#{k}");
                k += 1;
            }
            table.insert(
                label,
                seeds
                    .into_iter()
                    .map(|(s, (_, i, r))| (s, (i, r)))
                    .collect(),
            );
        }
    }
    Ok(table)
}

pub fn compare(table: &FinalTable, strict: bool) -> Result<CompareReport, ExperimentError> {
    if table.len() < 2 {
        return Err(ExperimentError::TooFewMethods(table.len()));
    }
    let labels: Vec<&String> = table.keys().collect();
    let seeds = |l: &String| table[l].keys().copied().collect::<Vec<u64>>();
    let reference = seeds(labels[0]);
    for l in &labels[1..] {
        let s = seeds(l);
        if s != reference {
            return Err(ExperimentError::MismatchedSeeds {
                a: labels[0].clone(),
                a_seeds: reference,
                b: (*l).clone(),
                b_seeds: s,
            });
        }
    }
    if strict && reference.len() < 2 {
        return Err(ExperimentError::TooFewSeeds(reference.len()));
    }
    let mean = |l: &String, f: fn(&(f64, f64)) -> f64| {
        table[l].values().map(f).sum::<f64>() / reference.len().max(1) as f64
    };
    let mut ranking: Vec<(String, f64, f64)> = labels
        .iter()
        .map(|l| ((*l).clone(), mean(l, |v| v.0), mean(l, |v| v.1)))
        .collect();
    ranking.sort_by(|x, y| {
        y.1.total_cmp(&x.1)
            .then(y.2.total_cmp(&x.2))
            .then(x.0.cmp(&y.0))
    });
    let mut pairs = Vec::new();
    for (i, a) in ranking.iter().enumerate() {
        for b in &ranking[i + 1..] {
            let (ta, tb) = (&table[&a.0], &table[&b.0]);
            let inspected_deltas: Vec<f64> = reference.iter().map(|s| ta[s].0 - tb[s].0).collect();
            let reward_cost_deltas: Vec<f64> =
                reference.iter().map(|s| ta[s].1 - tb[s].1).collect();
            pairs.push(PairComparison {
                a: a.0.clone(),
                b: b.0.clone(),
                seeds: reference.clone(),
                inspected_order: order(&inspected_deltas),
                reward_cost_order: order(&reward_cost_deltas),
                inspected_deltas,
                reward_cost_deltas,
            });
        }
    }
    Ok(CompareReport { ranking, pairs })
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ranking (mean final inspected, mean reward-cost):")?;
        for (i, (l, ins, rc)) in self.ranking.iter().enumerate() {
            writeln!(f, "  {}. {l}: {ins:.2} inspected, {rc:.1}", i + 1)?;
        }
        let verdict = |o: Option<bool>, a: &str, b: &str| match o {
            Some(true) => format!("{a} > {b}"),
            Some(false) => format!("{b} > {a}"),
            None => "no consistent order".to_string(),
        };
        for p in &self.pairs {
            writeln!(f, "{} vs {} over {} seeds:", p.a, p.b, p.seeds.len())?;
            writeln!(
                f,
                "  inspected deltas {:?}: {}",
                p.inspected_deltas,
                verdict(p.inspected_order, &p.a, &p.b)
            )?;
            let rc: Vec<String> = p
                .reward_cost_deltas
                .iter()
                .map(|d| format!("{d:.1}"))
                .collect();
            writeln!(
                f,
                "  reward-cost deltas [{}]: {}",
                rc.join(", "),
                verdict(p.reward_cost_order, &p.a, &p.b)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("3..=4").unwrap(), vec![3, 4]);
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("a..b").is_err());
    }

    type Finals<'a> = &'a [(u64, f64, f64)];

    fn table(entries: &[(&str, Finals)]) -> FinalTable {
        entries
            .iter()
            .map(|(l, rows)| {
                (
                    l.to_string(),
                    rows.iter().map(|(s, i, r)| (*s, (*i, *r))).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let rows: &[(u64, f64, f64)] = &[(1, 3.0, 10.0), (2, 4.0, 20.0)];
        let t = table(&[("sb2g", rows), ("sb2g#2", rows)]);
        let r = compare(&t, false).unwrap();
        assert!(r.pairs[0].inspected_deltas.iter().all(|d| *d == 0.0));
        assert_eq!(r.pairs[0].inspected_order, None);
    }

    #[test]
    fn ordering_needs_quorum() {
        let a: &[(u64, f64, f64)] = &[
            (1, 5.0, 0.0),
            (2, 5.0, 0.0),
            (3, 5.0, 0.0),
            (4, 5.0, 0.0),
            (5, 1.0, 0.0),
        ];
        let b: &[(u64, f64, f64)] = &[
            (1, 2.0, 0.0),
            (2, 2.0, 0.0),
            (3, 2.0, 0.0),
            (4, 2.0, 0.0),
            (5, 2.0, 0.0),
        ];
        let r = compare(&table(&[("a", a), ("b", b)]), true).unwrap();
        assert_eq!(r.ranking[0].0, "a");
        assert_eq!(r.pairs[0].inspected_order, Some(true));
        let c: &[(u64, f64, f64)] = &[
            (1, 5.0, 0.0),
            (2, 5.0, 0.0),
            (3, 5.0, 0.0),
            (4, 1.0, 0.0),
            (5, 1.0, 0.0),
        ];
        let r = compare(&table(&[("c", c), ("b", b)]), true).unwrap();
        assert_eq!(r.pairs[0].inspected_order, None);
    }

    #[test]
    fn mismatched_and_single_seed_inputs_are_errors() {
        let a: &[(u64, f64, f64)] = &[(1, 1.0, 0.0)];
        let b: &[(u64, f64, f64)] = &[(2, 1.0, 0.0)];
        assert!(matches!(
            compare(&table(&[("a", a), ("b", b)]), false),
            Err(ExperimentError::MismatchedSeeds { .. })
        ));
        assert!(matches!(
            compare(&table(&[("a", a), ("b", a)]), true),
            Err(ExperimentError::TooFewSeeds(1))
        ));
        assert!(compare(&table(&[("a", a), ("b", a)]), false).is_ok());
        assert!(matches!(
            compare(&table(&[("a", a)]), false),
            Err(ExperimentError::TooFewMethods(1))
        ));
    }
}

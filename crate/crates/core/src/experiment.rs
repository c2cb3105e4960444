//! Batch experiment runner: configuration, run dispatch and CSV/JSON output.
//!
//! Output layout under `out_dir`:
//!
//! | file | columns |
//! |---|---|
//! | `manifest.json` | the resolved [`ExperimentConfig`]; loadable with `--config` |
//! | `episodes/<population>_run<k>.csv` | [`EPISODE_COLUMNS`] |
//! | `cooperation.csv` | population, episode, group, mean, moving_average |
//! | `outcomes.csv` | population, episode, r_collective, r_gini, r_min, their `_ma` columns, cc, cd, dc, dd |
//! | `popularity.csv` | population, type, mean, ci_low, ci_high |
//! | `selection_matrix.csv` | population, selector, selector_type, selected, selected_type, count |
//! | `selection_edges.csv` | population, selector, selected, count |
//! | `cumulative_rewards.csv` | population, type, game_reward, intrinsic_reward, intrinsic_normalized |
//! | `logs/<population>_run<k>.jsonl.gz` | with `--log full`: a [`LogHeader`] line, then one [`EpisodeRecord`](crate::simulation::EpisodeRecord) per line |
//!
//! Aggregates are means across runs; the run index `k` is the offset from the base seed.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::PayoffMatrix;
use crate::metrics::{
    mean_cumulative_rewards, mean_selection_matrix, moving_average, normalize_intrinsic, popularity, Group,
    RunSummary,
};
use crate::moral::{IntrinsicRewardParams, MoralType};
use crate::neural::Hyperparams;
use crate::simulation::{PopulationConfig, PopulationLabel, RunLog, SelectionReward, Simulation};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogGranularity {
    /// Compressed per-episode logs in addition to the metric tables.
    Full,
    #[default]
    Metrics,
}

/// Fully resolved experiment settings. Written verbatim as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Single population to run; ignored when `all_populations` is set.
    pub population: Option<PopulationLabel>,
    pub all_populations: bool,
    pub episodes: usize,
    pub runs: usize,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub reward_params: IntrinsicRewardParams,
    pub payoff_matrix: PayoffMatrix,
    pub selection_reward: SelectionReward,
    pub out_dir: PathBuf,
    pub log_granularity: LogGranularity,
    pub ma_window: usize,
    pub popularity_window: usize,
    pub normalize_intrinsic: bool,
    /// Worker threads; `None` uses every available core.
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            population: None,
            all_populations: false,
            episodes: 30_000,
            runs: 20,
            seed: 0,
            hyperparams: Hyperparams::default(),
            reward_params: IntrinsicRewardParams::default(),
            payoff_matrix: PayoffMatrix::default(),
            selection_reward: SelectionReward::default(),
            out_dir: PathBuf::from("out"),
            log_granularity: LogGranularity::default(),
            ma_window: 500,
            popularity_window: 100,
            normalize_intrinsic: true,
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn populations(&self) -> Result<Vec<PopulationLabel>> {
        if self.all_populations {
            return Ok(PopulationLabel::all().to_vec());
        }
        match self.population {
            Some(p) => Ok(vec![p]),
            None => Err(Error::Config(format!(
                "no population given; pass --population <label> or --all-populations (labels: {})",
                PopulationLabel::valid_labels()
            ))),
        }
    }

    pub fn population_config(&self, label: PopulationLabel) -> PopulationConfig {
        PopulationConfig {
            episodes: self.episodes,
            runs: self.runs,
            seed: self.seed,
            hyperparams: self.hyperparams,
            reward_params: self.reward_params,
            payoff_matrix: self.payoff_matrix,
            selection_reward: self.selection_reward,
            ..PopulationConfig::new(label)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for label in self.populations()? {
            self.population_config(label).validate()?;
        }
        if self.ma_window == 0 {
            return Err(Error::Config("ma_window must be positive".into()));
        }
        if self.popularity_window == 0 {
            return Err(Error::Config("popularity_window must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        Ok(())
    }

    /// Popularity window actually used: runs shorter than the window use every episode.
    pub fn effective_popularity_window(&self) -> usize {
        self.popularity_window.min(self.episodes)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line overrides. Every field left `None` keeps the file or default value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub population: Option<String>,
    pub all_populations: bool,
    pub episodes: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub xi: Option<f64>,
    pub gamma: Option<f64>,
    pub lr: Option<f64>,
    pub eps_sel: Option<f64>,
    pub eps_dil: Option<f64>,
    pub hidden: Option<usize>,
    pub payoff_matrix: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ma_window: Option<usize>,
    pub popularity_window: Option<usize>,
    pub log: Option<String>,
    pub jobs: Option<usize>,
    pub selection_reward: Option<String>,
}

/// Defaults, then the optional config file, then `overrides`.
pub fn parse_config(overrides: &Overrides, config_file: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match config_file {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    let o = overrides;
    if let Some(p) = &o.population {
        cfg.population = Some(p.parse()?);
    }
    cfg.all_populations |= o.all_populations;
    if let Some(v) = o.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = o.runs {
        cfg.runs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.xi {
        cfg.reward_params = IntrinsicRewardParams::new(v)?;
    }
    let hp = &mut cfg.hyperparams;
    if let Some(v) = o.gamma {
        hp.gamma = v;
    }
    if let Some(v) = o.lr {
        hp.lr = v;
    }
    if let Some(v) = o.eps_sel {
        hp.eps_sel = v;
    }
    if let Some(v) = o.eps_dil {
        hp.eps_dil = v;
    }
    if let Some(v) = o.hidden {
        hp.hidden_dim = v;
    }
    if let Some(path) = &o.payoff_matrix {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.payoff_matrix =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    if let Some(v) = &o.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = o.ma_window {
        cfg.ma_window = v;
    }
    if let Some(v) = o.popularity_window {
        cfg.popularity_window = v;
    }
    if let Some(v) = &o.log {
        cfg.log_granularity = match v.as_str() {
            "full" => LogGranularity::Full,
            "metrics" | "metrics-only" => LogGranularity::Metrics,
            other => return Err(Error::Config(format!("unknown log granularity `{other}`; expected full or metrics"))),
        };
    }
    if let Some(v) = o.jobs {
        cfg.jobs = Some(v);
    }
    if let Some(v) = &o.selection_reward {
        cfg.selection_reward = v.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// First line of a full log file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub population: PopulationLabel,
    pub seed: u64,
    pub agent_types: Vec<MoralType>,
}

fn write_line<W: Write, T: Serialize>(w: &mut W, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Reads a `logs/*.jsonl.gz` file back into a [`RunLog`].
pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(GzDecoder::new(file)).lines();
    let header: LogHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| Error::io(path, e))?)?,
        None => return Err(Error::Config(format!("{}: empty log", path.display()))),
    };
    let mut episodes = Vec::new();
    for line in lines {
        episodes.push(serde_json::from_str(&line.map_err(|e| Error::io(path, e))?)?);
    }
    Ok(RunLog {
        population: header.population,
        seed: header.seed,
        agent_types: header.agent_types,
        episodes,
    })
}

/// Runs one simulation, accumulating metrics online and optionally streaming the full log.
pub fn run_one(
    cfg: &PopulationConfig,
    seed: u64,
    popularity_window: usize,
    log_path: Option<&Path>,
) -> Result<RunSummary> {
    let mut summary = RunSummary::new(cfg.label, seed, cfg.agent_types(), cfg.episodes, popularity_window)?;
    let mut log = match log_path {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = GzEncoder::new(BufWriter::new(file), Compression::default());
            let header = LogHeader {
                population: cfg.label,
                seed,
                agent_types: cfg.agent_types(),
            };
            write_line(&mut w, path, &header)?;
            Some((w, path))
        }
        None => None,
    };
    let mut sim = Simulation::new(cfg, seed)?;
    for _ in 0..cfg.episodes {
        let record = sim.run_episode()?;
        summary.observe(&record)?;
        if let Some((w, path)) = &mut log {
            write_line(w, path, &record)?;
        }
    }
    if let Some((w, path)) = log {
        w.finish()
            .and_then(|mut inner| inner.flush())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(summary)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let threads = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// All runs of one population (seeds `seed..seed + runs`), in seed order.
pub fn run_population(
    cfg: &PopulationConfig,
    popularity_window: usize,
    jobs: Option<usize>,
    log_dir: Option<&Path>,
) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let seeds: Vec<(usize, u64)> = cfg.run_seeds().enumerate().collect();
    pool(jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&(k, seed)| {
                let path = log_dir.map(|d| d.join(format!("{}_run{k}.jsonl.gz", cfg.label)));
                run_one(cfg, seed, popularity_window, path.as_deref())
            })
            .collect()
    })
}

/// Header of the per-run episode CSV.
pub const EPISODE_COLUMNS: [&str; 20] = [
    "population",
    "run",
    "episode",
    "coop_all",
    "coop_S",
    "coop_Ut",
    "coop_aUt",
    "coop_De",
    "coop_mDe",
    "coop_V-Eq",
    "coop_V-In",
    "coop_V-Ki",
    "coop_V-Ag",
    "r_collective",
    "r_gini",
    "r_min",
    "cc",
    "cd",
    "dc",
    "dd",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_episode_csv(path: &Path, run: usize, s: &RunSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EPISODE_COLUMNS)?;
    let pop = s.population.to_string();
    for m in &s.episodes {
        let mut row = vec![pop.clone(), run.to_string(), m.episode.to_string(), m.coop_all.to_string()];
        row.extend(m.coop_by_type.iter().map(|c| opt(*c)));
        row.extend([
            m.outcomes.r_collective.to_string(),
            m.outcomes.r_gini.to_string(),
            m.outcomes.r_min.to_string(),
            m.pairs.cc.to_string(),
            m.pairs.cd.to_string(),
            m.pairs.dc.to_string(),
            m.pairs.dd.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn mean_series(runs: &[RunSummary], value: impl Fn(&crate::metrics::EpisodeMetrics) -> f64) -> Vec<f64> {
    let episodes = runs[0].episodes.len();
    (0..episodes)
        .map(|e| runs.iter().map(|r| value(&r.episodes[e])).sum::<f64>() / runs.len() as f64)
        .collect()
}

/// Writers for the cross-population aggregate tables.
struct Tables {
    cooperation: csv::Writer<File>,
    outcomes: csv::Writer<File>,
    popularity: csv::Writer<File>,
    matrix: csv::Writer<File>,
    edges: csv::Writer<File>,
}

impl Tables {
    fn create(dir: &Path) -> Result<Self> {
        let mut t = Tables {
            cooperation: csv_writer(&dir.join("cooperation.csv"))?,
            outcomes: csv_writer(&dir.join("outcomes.csv"))?,
            popularity: csv_writer(&dir.join("popularity.csv"))?,
            matrix: csv_writer(&dir.join("selection_matrix.csv"))?,
            edges: csv_writer(&dir.join("selection_edges.csv"))?,
        };
        t.cooperation.write_record(["population", "episode", "group", "mean", "moving_average"])?;
        t.outcomes.write_record([
            "population",
            "episode",
            "r_collective",
            "r_gini",
            "r_min",
            "r_collective_ma",
            "r_gini_ma",
            "r_min_ma",
            "cc",
            "cd",
            "dc",
            "dd",
        ])?;
        t.popularity.write_record(["population", "type", "mean", "ci_low", "ci_high"])?;
        t.matrix.write_record(["population", "selector", "selector_type", "selected", "selected_type", "count"])?;
        t.edges.write_record(["population", "selector", "selected", "count"])?;
        Ok(t)
    }

    fn add(&mut self, runs: &[RunSummary], ma_window: usize) -> Result<()> {
        let first = &runs[0];
        let pop = first.population.to_string();
        let episodes = first.episodes.len();

        let mut groups: Vec<(String, Vec<f64>)> = vec![("all".into(), mean_series(runs, |m| m.coop_all))];
        for t in MoralType::ALL {
            if first.agent_types.contains(&t) {
                groups.push((t.to_string(), mean_series(runs, |m| m.coop(t).unwrap_or(0.0))));
            }
        }
        let smoothed: Vec<Vec<f64>> = groups.iter().map(|(_, s)| moving_average(s, ma_window)).collect();
        for e in 0..episodes {
            for ((name, series), ma) in groups.iter().zip(&smoothed) {
                self.cooperation
                    .write_record([&pop, &e.to_string(), name, &series[e].to_string(), &ma[e].to_string()])?;
            }
        }

        let collective = mean_series(runs, |m| m.outcomes.r_collective);
        let gini = mean_series(runs, |m| m.outcomes.r_gini);
        let min = mean_series(runs, |m| m.outcomes.r_min);
        let pairs: [Vec<f64>; 4] = [
            mean_series(runs, |m| m.pairs.cc as f64),
            mean_series(runs, |m| m.pairs.cd as f64),
            mean_series(runs, |m| m.pairs.dc as f64),
            mean_series(runs, |m| m.pairs.dd as f64),
        ];
        let (collective_ma, gini_ma, min_ma) = (
            moving_average(&collective, ma_window),
            moving_average(&gini, ma_window),
            moving_average(&min, ma_window),
        );
        for e in 0..episodes {
            let row = [
                pop.clone(),
                e.to_string(),
                collective[e].to_string(),
                gini[e].to_string(),
                min[e].to_string(),
                collective_ma[e].to_string(),
                gini_ma[e].to_string(),
                min_ma[e].to_string(),
                pairs[0][e].to_string(),
                pairs[1][e].to_string(),
                pairs[2][e].to_string(),
                pairs[3][e].to_string(),
            ];
            self.outcomes.write_record(&row)?;
        }

        for (g, est) in popularity(runs, true)? {
            self.popularity.write_record([
                pop.clone(),
                g.to_string(),
                est.mean.to_string(),
                est.ci_low.to_string(),
                est.ci_high.to_string(),
            ])?;
        }

        let matrix = mean_selection_matrix(runs)?;
        let types = &first.agent_types;
        for i in 0..matrix.n {
            for j in 0..matrix.n {
                self.matrix.write_record([
                    pop.clone(),
                    i.to_string(),
                    types[i].to_string(),
                    j.to_string(),
                    types[j].to_string(),
                    matrix.get(i, j).to_string(),
                ])?;
            }
        }
        for (i, j, c) in matrix.top_edges(85.0) {
            self.edges
                .write_record([pop.clone(), i.to_string(), j.to_string(), c.to_string()])?;
        }
        Ok(())
    }

    fn finish(mut self, dir: &Path) -> Result<()> {
        for w in [&mut self.cooperation, &mut self.outcomes, &mut self.popularity, &mut self.matrix, &mut self.edges] {
            w.flush().map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }
}

/// What [`run_experiment`] produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    /// Per population: mean cooperation over the final `ma_window` episodes, across runs.
    pub final_cooperation: Vec<(PopulationLabel, f64)>,
}

/// Runs every configured population and writes all outputs under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    let episodes_dir = out.join("episodes");
    fs::create_dir_all(&episodes_dir).map_err(|e| Error::io(&episodes_dir, e))?;
    let log_dir = match cfg.log_granularity {
        LogGranularity::Full => {
            let d = out.join("logs");
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            Some(d)
        }
        LogGranularity::Metrics => None,
    };
    let manifest = out.join("manifest.json");
    fs::write(&manifest, serde_json::to_string_pretty(cfg)? + "\n").map_err(|e| Error::io(&manifest, e))?;

    let mut tables = Tables::create(out)?;
    let mut cumulative = Vec::new();
    let mut final_cooperation = Vec::new();
    for label in cfg.populations()? {
        let pcfg = cfg.population_config(label);
        let runs = run_population(&pcfg, cfg.effective_popularity_window(), cfg.jobs, log_dir.as_deref())?;
        for (k, s) in runs.iter().enumerate() {
            write_episode_csv(&episodes_dir.join(format!("{label}_run{k}.csv")), k, s)?;
        }
        tables.add(&runs, cfg.ma_window)?;
        let coop = runs.iter().map(|r| r.final_mean(cfg.ma_window, |m| m.coop_all)).sum::<f64>() / runs.len() as f64;
        final_cooperation.push((label, coop));
        let rewards = mean_cumulative_rewards(&runs, true)?;
        cumulative.push((label, rewards));
    }
    tables.finish(out)?;
    write_cumulative(&out.join("cumulative_rewards.csv"), &cumulative, cfg.normalize_intrinsic)?;
    Ok(ExperimentReport {
        out_dir: out.clone(),
        final_cooperation,
    })
}

type CumulativeTable = Vec<(PopulationLabel, Vec<(Group, crate::metrics::CumulativeReward)>)>;

fn write_cumulative(path: &Path, table: &CumulativeTable, normalize: bool) -> Result<()> {
    let intrinsic: Vec<(PopulationLabel, Vec<(MoralType, f64)>)> = table
        .iter()
        .map(|(label, rows)| {
            let row = rows
                .iter()
                .filter_map(|(g, r)| match g {
                    Group::Type(t) => Some((*t, r.intrinsic_reward)),
                    Group::Agent(_) => None,
                })
                .collect();
            (*label, row)
        })
        .collect();
    let normalized = if normalize && table.len() >= 2 {
        Some(normalize_intrinsic(&intrinsic)?)
    } else {
        None
    };
    let mut w = csv_writer(path)?;
    w.write_record(["population", "type", "game_reward", "intrinsic_reward", "intrinsic_normalized"])?;
    for (p, (label, rows)) in table.iter().enumerate() {
        for (k, (g, r)) in rows.iter().enumerate() {
            let norm = normalized.as_ref().map(|n| n[p].1[k].1);
            w.write_record([
                label.to_string(),
                g.to_string(),
                r.game_reward.to_string(),
                r.intrinsic_reward.to_string(),
                opt(norm),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

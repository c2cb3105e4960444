//! Behavioural and social-outcome metrics over episode records.
//!
//! Per-episode metrics are pure functions of an [`EpisodeRecord`]. Run-level
//! quantities are accumulated in a [`RunSummary`], which can be fed online
//! while a simulation runs or rebuilt from a persisted [`RunLog`]; both paths
//! give identical values. Exploration moves count as executed behaviour.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Action;
use crate::moral::MoralType;
use crate::simulation::{EpisodeRecord, PopulationLabel, RunLog};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialOutcomes {
    /// Sum over the episode's games of both payoffs.
    pub r_collective: f64,
    /// Mean over games of `1 - |r1 - r2| / (r1 + r2)`.
    pub r_gini: f64,
    /// Mean over games of the smaller payoff.
    pub r_min: f64,
}

/// Fraction of Cooperate among all moves made in the episode by agents passing `filter`,
/// counting both selector and selected roles.
pub fn cooperation_rate(record: &EpisodeRecord, agent_types: &[MoralType], filter: Option<MoralType>) -> Result<f64> {
    if let Some(t) = filter {
        if !agent_types.contains(&t) {
            return Err(Error::NoMatchingAgent(t));
        }
    }
    let mut cooperated = 0usize;
    let mut total = 0usize;
    for (id, a) in moves(record) {
        if filter.is_none_or(|t| agent_types[id] == t) {
            total += 1;
            cooperated += a.is_cooperate() as usize;
        }
    }
    if total == 0 {
        return Err(Error::Bookkeeping("episode has no moves".into()));
    }
    Ok(cooperated as f64 / total as f64)
}

fn moves(record: &EpisodeRecord) -> impl Iterator<Item = (usize, Action)> + '_ {
    record
        .games
        .iter()
        .flat_map(|g| [(g.selector, g.a_selector), (g.opponent, g.a_opponent)])
}

/// Collective, equality and minimum reward of one episode, from game payoffs.
pub fn social_outcomes(record: &EpisodeRecord) -> Result<SocialOutcomes> {
    if record.games.is_empty() {
        return Err(Error::Bookkeeping("episode has no games".into()));
    }
    let n = record.games.len() as f64;
    let mut collective = 0.0;
    let mut gini = 0.0;
    let mut min = 0.0;
    for g in &record.games {
        let (r1, r2) = (g.r_sel_extr, g.r_opp_extr);
        let sum = r1 + r2;
        if sum == 0.0 {
            return Err(Error::RewardDomain(r1, r2));
        }
        collective += sum;
        gini += 1.0 - (r1 - r2).abs() / sum;
        min += r1.min(r2);
    }
    Ok(SocialOutcomes {
        r_collective: collective,
        r_gini: gini / n,
        r_min: min / n,
    })
}

/// Ordered `(selector move, selected move)` tallies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPairCounts {
    pub cc: usize,
    /// The selecting player is exploited.
    pub cd: usize,
    /// The selected player is exploited.
    pub dc: usize,
    pub dd: usize,
}

impl ActionPairCounts {
    pub fn total(&self) -> usize {
        self.cc + self.cd + self.dc + self.dd
    }
}

pub fn action_pair_counts(record: &EpisodeRecord) -> ActionPairCounts {
    let mut c = ActionPairCounts::default();
    for g in &record.games {
        match (g.a_selector, g.a_opponent) {
            (Action::Cooperate, Action::Cooperate) => c.cc += 1,
            (Action::Cooperate, Action::Defect) => c.cd += 1,
            (Action::Defect, Action::Cooperate) => c.dc += 1,
            (Action::Defect, Action::Defect) => c.dd += 1,
        }
    }
    c
}

/// Trailing mean over the last `min(window, i + 1)` points.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Mean with a normal-approximation 95% interval across runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    /// `mean ± 1.96 * sd / sqrt(n)` with the sample standard deviation; zero width for one sample.
    pub fn from_samples(samples: &[f64]) -> Estimate {
        assert!(!samples.is_empty(), "no samples");
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let half = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        } else {
            0.0
        };
        Estimate {
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }
}

/// What an aggregate is keyed by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Type(MoralType),
    Agent(usize),
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::Type(t) => write!(f, "{t}"),
            Group::Agent(id) => write!(f, "{id}"),
        }
    }
}

/// Selector-by-selected counts; diagonal is always zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    pub n: usize,
    /// Row-major, row = selector, column = selected.
    pub counts: Vec<f64>,
}

impl SelectionMatrix {
    pub fn zeros(n: usize) -> Self {
        SelectionMatrix {
            n,
            counts: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        SelectionMatrix {
            n,
            counts: rows.concat(),
        }
    }

    pub fn get(&self, selector: usize, selected: usize) -> f64 {
        self.counts[selector * self.n + selected]
    }

    pub fn row_sum(&self, selector: usize) -> f64 {
        self.counts[selector * self.n..(selector + 1) * self.n].iter().sum()
    }

    /// Entries strictly above the `percentile` (0-100) of the nonzero entries, linearly
    /// interpolated between order statistics. Returned as `(selector, selected, count)`.
    pub fn top_edges(&self, percentile: f64) -> Vec<(usize, usize, f64)> {
        let mut nonzero: Vec<f64> = self.counts.iter().copied().filter(|&c| c > 0.0).collect();
        if nonzero.is_empty() {
            return Vec::new();
        }
        nonzero.sort_by(f64::total_cmp);
        let threshold = percentile_linear(&nonzero, percentile);
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let c = self.get(i, j);
                if c > threshold {
                    edges.push((i, j, c));
                }
            }
        }
        edges
    }
}

/// Percentile of sorted data with linear interpolation between closest ranks.
pub fn percentile_linear(sorted: &[f64], percentile: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (percentile / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-episode metrics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub coop_all: f64,
    /// Indexed by [`MoralType::ordinal`]; `None` for types absent from the population.
    pub coop_by_type: [Option<f64>; 9],
    pub outcomes: SocialOutcomes,
    pub pairs: ActionPairCounts,
}

impl EpisodeMetrics {
    pub fn compute(record: &EpisodeRecord, agent_types: &[MoralType]) -> Result<Self> {
        let mut coop_by_type = [None; 9];
        for t in MoralType::ALL {
            if agent_types.contains(&t) {
                coop_by_type[t.ordinal()] = Some(cooperation_rate(record, agent_types, Some(t))?);
            }
        }
        Ok(EpisodeMetrics {
            episode: record.episode,
            coop_all: cooperation_rate(record, agent_types, None)?,
            coop_by_type,
            outcomes: social_outcomes(record)?,
            pairs: action_pair_counts(record),
        })
    }

    pub fn coop(&self, t: MoralType) -> Option<f64> {
        self.coop_by_type[t.ordinal()]
    }
}

/// Everything the aggregate tables need from one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub population: PopulationLabel,
    pub seed: u64,
    pub agent_types: Vec<MoralType>,
    pub total_episodes: usize,
    pub popularity_window: usize,
    pub episodes: Vec<EpisodeMetrics>,
    pub selections: SelectionMatrix,
    /// Selections received per agent within the final `popularity_window` episodes.
    pub recent_received: Vec<u64>,
    pub game_reward: Vec<f64>,
    pub intrinsic_reward: Vec<f64>,
}

impl RunSummary {
    pub fn new(
        population: PopulationLabel,
        seed: u64,
        agent_types: Vec<MoralType>,
        total_episodes: usize,
        popularity_window: usize,
    ) -> Result<Self> {
        if popularity_window == 0 || popularity_window > total_episodes {
            return Err(Error::Config(format!(
                "popularity window {popularity_window} must lie in 1..={total_episodes}"
            )));
        }
        let n = agent_types.len();
        Ok(RunSummary {
            population,
            seed,
            agent_types,
            total_episodes,
            popularity_window,
            episodes: Vec::with_capacity(total_episodes),
            selections: SelectionMatrix::zeros(n),
            recent_received: vec![0; n],
            game_reward: vec![0.0; n],
            intrinsic_reward: vec![0.0; n],
        })
    }

    pub fn observe(&mut self, record: &EpisodeRecord) -> Result<()> {
        let n = self.agent_types.len();
        self.episodes.push(EpisodeMetrics::compute(record, &self.agent_types)?);
        let recent = record.episode + self.popularity_window >= self.total_episodes;
        for &(i, j) in &record.selections {
            self.selections.counts[i * n + j] += 1.0;
            if recent {
                self.recent_received[j] += 1;
            }
        }
        for g in &record.games {
            self.game_reward[g.selector] += g.r_sel_extr;
            self.game_reward[g.opponent] += g.r_opp_extr;
            self.intrinsic_reward[g.selector] += g.r_sel_intr;
            self.intrinsic_reward[g.opponent] += g.r_opp_intr;
        }
        Ok(())
    }

    pub fn from_log(log: &RunLog, popularity_window: usize) -> Result<Self> {
        let mut s = RunSummary::new(
            log.population,
            log.seed,
            log.agent_types.clone(),
            log.episodes.len(),
            popularity_window,
        )?;
        for r in &log.episodes {
            s.observe(r)?;
        }
        Ok(s)
    }

    fn groups(&self, by_type: bool) -> Vec<Group> {
        if by_type {
            MoralType::ALL
                .into_iter()
                .filter(|t| self.agent_types.contains(t))
                .map(Group::Type)
                .collect()
        } else {
            (0..self.agent_types.len()).map(Group::Agent).collect()
        }
    }

    fn members(&self, g: Group) -> Vec<usize> {
        match g {
            Group::Type(t) => (0..self.agent_types.len()).filter(|&i| self.agent_types[i] == t).collect(),
            Group::Agent(id) => vec![id],
        }
    }

    /// Mean of a per-episode value over the last `window` episodes.
    pub fn final_mean(&self, window: usize, value: impl Fn(&EpisodeMetrics) -> f64) -> f64 {
        let w = window.min(self.episodes.len()).max(1);
        let tail = &self.episodes[self.episodes.len().saturating_sub(w)..];
        tail.iter().map(value).sum::<f64>() / tail.len() as f64
    }
}

fn check_compatible(runs: &[RunSummary]) -> Result<&RunSummary> {
    let first = runs.first().ok_or_else(|| Error::Config("no runs to aggregate".into()))?;
    if runs.iter().any(|r| r.agent_types != first.agent_types) {
        return Err(Error::Config("runs come from different populations".into()));
    }
    Ok(first)
}

/// Share of selections received by each group in the final window, mean and CI across runs.
pub fn popularity(runs: &[RunSummary], by_type: bool) -> Result<Vec<(Group, Estimate)>> {
    let first = check_compatible(runs)?;
    Ok(first
        .groups(by_type)
        .into_iter()
        .map(|g| {
            let members = first.members(g);
            let shares: Vec<f64> = runs
                .iter()
                .map(|r| {
                    let total: u64 = r.recent_received.iter().sum();
                    let got: u64 = members.iter().map(|&i| r.recent_received[i]).sum();
                    got as f64 / total as f64
                })
                .collect();
            (g, Estimate::from_samples(&shares))
        })
        .collect())
}

/// [`popularity`] computed from full logs over their last `final_k` episodes.
pub fn selection_popularity(logs: &[RunLog], final_k: usize, by_type: bool) -> Result<Vec<(Group, Estimate)>> {
    let runs = logs
        .iter()
        .map(|l| RunSummary::from_log(l, final_k))
        .collect::<Result<Vec<_>>>()?;
    popularity(&runs, by_type)
}

/// Selection counts summed over episodes, averaged entrywise across runs.
pub fn mean_selection_matrix(runs: &[RunSummary]) -> Result<SelectionMatrix> {
    let first = check_compatible(runs)?;
    let mut m = SelectionMatrix::zeros(first.agent_types.len());
    for r in runs {
        for (acc, c) in m.counts.iter_mut().zip(&r.selections.counts) {
            *acc += c;
        }
    }
    for c in &mut m.counts {
        *c /= runs.len() as f64;
    }
    Ok(m)
}

pub fn selection_matrix(logs: &[RunLog]) -> Result<SelectionMatrix> {
    let runs = logs
        .iter()
        .map(|l| RunSummary::from_log(l, l.episodes.len().max(1)))
        .collect::<Result<Vec<_>>>()?;
    mean_selection_matrix(&runs)
}

/// Total game and intrinsic reward per group over the whole run, divided by the
/// group size, averaged across runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeReward {
    pub game_reward: f64,
    pub intrinsic_reward: f64,
}

pub fn mean_cumulative_rewards(runs: &[RunSummary], by_type: bool) -> Result<Vec<(Group, CumulativeReward)>> {
    let first = check_compatible(runs)?;
    Ok(first
        .groups(by_type)
        .into_iter()
        .map(|g| {
            let members = first.members(g);
            let k = members.len() as f64;
            let (mut game, mut intr) = (0.0, 0.0);
            for r in runs {
                game += members.iter().map(|&i| r.game_reward[i]).sum::<f64>() / k;
                intr += members.iter().map(|&i| r.intrinsic_reward[i]).sum::<f64>() / k;
            }
            let runs = runs.len() as f64;
            (
                g,
                CumulativeReward {
                    game_reward: game / runs,
                    intrinsic_reward: intr / runs,
                },
            )
        })
        .collect())
}

pub fn cumulative_rewards(logs: &[RunLog], by_type: bool) -> Result<Vec<(Group, CumulativeReward)>> {
    let runs = logs
        .iter()
        .map(|l| RunSummary::from_log(l, l.episodes.len().max(1)))
        .collect::<Result<Vec<_>>>()?;
    mean_cumulative_rewards(&runs, by_type)
}

/// Min-max normalizes each type's intrinsic total across populations. A type whose
/// totals are all equal maps to 0.5.
pub fn normalize_intrinsic(
    table: &[(PopulationLabel, Vec<(MoralType, f64)>)],
) -> Result<Vec<(PopulationLabel, Vec<(MoralType, f64)>)>> {
    if table.len() < 2 {
        return Err(Error::Config(
            "intrinsic reward normalization needs at least two populations".into(),
        ));
    }
    let mut lo = [f64::INFINITY; 9];
    let mut hi = [f64::NEG_INFINITY; 9];
    for (_, row) in table {
        for &(t, v) in row {
            lo[t.ordinal()] = lo[t.ordinal()].min(v);
            hi[t.ordinal()] = hi[t.ordinal()].max(v);
        }
    }
    Ok(table
        .iter()
        .map(|(label, row)| {
            let normalized = row
                .iter()
                .map(|&(t, v)| {
                    let (l, h) = (lo[t.ordinal()], hi[t.ordinal()]);
                    (t, if h > l { (v - l) / (h - l) } else { 0.5 })
                })
                .collect();
            (*label, normalized)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::Action::{Cooperate as C, Defect as D};
    use super::*;
    use crate::game::PayoffMatrix;
    use crate::simulation::GameRecord;

    fn game(selector: usize, opponent: usize, a: Action, b: Action) -> GameRecord {
        let (r1, r2) = PayoffMatrix::default().payoff(a, b);
        GameRecord {
            selector,
            opponent,
            a_selector: a,
            a_opponent: b,
            r_sel_extr: r1,
            r_opp_extr: r2,
            r_sel_intr: r1,
            r_opp_intr: r2,
        }
    }

    fn uniform_episode(a: Action, b: Action) -> EpisodeRecord {
        EpisodeRecord {
            episode: 0,
            selections: (0..16).map(|i| (i, (i + 1) % 16)).collect(),
            games: (0..16).map(|i| game(i, (i + 1) % 16, a, b)).collect(),
            losses: vec![],
        }
    }

    #[test]
    fn social_outcome_examples() {
        let cc = social_outcomes(&uniform_episode(C, C)).unwrap();
        assert_eq!((cc.r_collective, cc.r_gini, cc.r_min), (96.0, 1.0, 3.0));
        let dd = social_outcomes(&uniform_episode(D, D)).unwrap();
        assert_eq!((dd.r_collective, dd.r_gini, dd.r_min), (32.0, 1.0, 1.0));
        let cd = social_outcomes(&uniform_episode(C, D)).unwrap();
        assert_eq!((cd.r_collective, cd.r_gini, cd.r_min), (64.0, 0.0, 0.0));
    }

    #[test]
    fn zero_payoff_game_is_a_domain_error() {
        let mut ep = uniform_episode(C, C);
        ep.games[0].r_sel_extr = 0.0;
        ep.games[0].r_opp_extr = 0.0;
        assert!(matches!(social_outcomes(&ep), Err(Error::RewardDomain(..))));
    }

    #[test]
    fn cooperation_examples() {
        let types = vec![MoralType::Selfish; 16];
        assert_eq!(cooperation_rate(&uniform_episode(C, C), &types, None).unwrap(), 1.0);
        assert_eq!(cooperation_rate(&uniform_episode(D, D), &types, None).unwrap(), 0.0);
        // 8 of 32 moves are C
        let mut ep = uniform_episode(D, D);
        for g in ep.games.iter_mut().take(4) {
            g.a_selector = C;
            g.a_opponent = C;
        }
        assert_eq!(cooperation_rate(&ep, &types, None).unwrap(), 0.25);
        assert!(matches!(
            cooperation_rate(&ep, &types, Some(MoralType::Utilitarian)),
            Err(Error::NoMatchingAgent(MoralType::Utilitarian))
        ));
    }

    #[test]
    fn action_pairs() {
        let c = action_pair_counts(&uniform_episode(C, C));
        assert_eq!(c, ActionPairCounts { cc: 16, ..Default::default() });
        let mut ep = uniform_episode(C, D);
        ep.games[0] = game(0, 1, D, C);
        ep.games[1] = game(1, 2, D, D);
        ep.games[2] = game(2, 3, C, C);
        let c = action_pair_counts(&ep);
        assert_eq!((c.cc, c.cd, c.dc, c.dd), (1, 13, 1, 1));
    }

    #[test]
    fn moving_average_examples() {
        let constant = vec![0.3; 10];
        for (a, b) in moving_average(&constant, 4).iter().zip(&constant) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = [0.5, 2.0, -1.0, 4.0];
        assert_eq!(moving_average(&s, 1), s.to_vec());
        let alt: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let ma = moving_average(&alt, 2);
        assert_eq!(ma[0], 0.0);
        assert!(ma[1..].iter().all(|&v| v == 0.5));
        assert_eq!(moving_average(&[], 3), Vec::<f64>::new());
    }

    #[test]
    fn percentile_edges_on_hand_matrix() {
        // Nonzero entries 1..=12; 85th percentile at rank 0.85 * 11 = 9.35 -> 10.35.
        let m = SelectionMatrix::from_rows(&[
            vec![0.0, 1.0, 2.0, 3.0],
            vec![4.0, 0.0, 5.0, 6.0],
            vec![7.0, 8.0, 0.0, 9.0],
            vec![10.0, 11.0, 12.0, 0.0],
        ]);
        assert_eq!(m.top_edges(85.0), vec![(3, 1, 11.0), (3, 2, 12.0)]);
        assert!(SelectionMatrix::zeros(3).top_edges(85.0).is_empty());
        assert_eq!(percentile_linear(&[1.0, 2.0], 50.0), 1.5);
    }

    #[test]
    fn estimate_interval() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        let half = 1.96 * 2f64.sqrt() / 2f64.sqrt();
        assert!((e.ci_high - 2.0 - half).abs() < 1e-12);
        let single = Estimate::from_samples(&[0.4]);
        assert_eq!((single.ci_low, single.ci_high), (0.4, 0.4));
    }

    #[test]
    fn normalization_rules() {
        let label = |t| PopulationLabel(t);
        let table = vec![
            (label(MoralType::Selfish), vec![(MoralType::Selfish, 10.0), (MoralType::Deontological, -3.0)]),
            (label(MoralType::Utilitarian), vec![(MoralType::Selfish, 20.0), (MoralType::Deontological, -3.0)]),
            (label(MoralType::Deontological), vec![(MoralType::Selfish, 15.0), (MoralType::Deontological, -3.0)]),
        ];
        let norm = normalize_intrinsic(&table).unwrap();
        let s: Vec<f64> = norm.iter().map(|(_, r)| r[0].1).collect();
        assert_eq!(s, vec![0.0, 1.0, 0.5]);
        assert!(norm.iter().all(|(_, r)| r[1].1 == 0.5));
        assert!(normalize_intrinsic(&table[..1]).is_err());
    }
}

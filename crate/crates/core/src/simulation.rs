//! Population construction and the episode-synchronous training loop.
//!
//! Each episode has three phases. Every agent chooses a partner from the same
//! snapshot of last actions; each selected pair plays one game, processed in
//! ascending selector id; then the environment is updated with every agent's
//! chronologically last move and all agents learn simultaneously.
//!
//! Random draws come from one per-run ChaCha8 stream in a fixed order:
//! networks (agent id order, selection head first), initial environment,
//! initial per-agent states, then per episode the selection draws (agent id
//! order) and the dilemma draws (pair order, selector before opponent).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::{
    argmax, encode_dilemma_state, encode_selection_state, opponent_id, AgentState, Experience, Head,
};
use crate::error::{Error, Result};
use crate::game::{Action, PayoffMatrix};
use crate::moral::{learning_reward, GameContext, IntrinsicRewardParams, MoralType};
use crate::neural::{Hyperparams, QNetwork};

/// A population named after its majority type, e.g. `majority-V-Eq`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PopulationLabel(pub MoralType);

impl PopulationLabel {
    pub fn all() -> [PopulationLabel; 9] {
        MoralType::ALL.map(PopulationLabel)
    }

    pub fn majority(self) -> MoralType {
        self.0
    }

    pub fn valid_labels() -> String {
        PopulationLabel::all().iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
    }

    /// Eight agents of the majority type followed by one of each other type.
    pub fn composition(self) -> Vec<(MoralType, usize)> {
        let mut c = vec![(self.0, 8)];
        c.extend(MoralType::ALL.into_iter().filter(|&t| t != self.0).map(|t| (t, 1)));
        c
    }
}

impl fmt::Display for PopulationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "majority-{}", self.0.label())
    }
}

impl FromStr for PopulationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix("majority-")
            .and_then(|t| t.parse::<MoralType>().ok())
            .map(PopulationLabel)
            .ok_or_else(|| Error::UnknownPopulation(s.to_string()))
    }
}

impl Serialize for PopulationLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PopulationLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which reward the selector stores in its selection experience.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionReward {
    /// The agent's own learning reward (intrinsic for moral types).
    #[default]
    Intrinsic,
    /// The game payoff, for every type.
    Extrinsic,
}

impl FromStr for SelectionReward {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intrinsic" => Ok(SelectionReward::Intrinsic),
            "extrinsic" => Ok(SelectionReward::Extrinsic),
            other => Err(Error::Config(format!(
                "unknown selection reward `{other}`; expected intrinsic or extrinsic"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub label: PopulationLabel,
    /// Agent ids are assigned in this order, one contiguous block per entry.
    pub composition: Vec<(MoralType, usize)>,
    pub n: usize,
    pub episodes: usize,
    pub runs: usize,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub reward_params: IntrinsicRewardParams,
    pub payoff_matrix: PayoffMatrix,
    pub selection_reward: SelectionReward,
}

impl PopulationConfig {
    /// Paper-scale defaults for a labelled population: 16 agents, 30000 episodes, 20 runs.
    pub fn new(label: PopulationLabel) -> Self {
        PopulationConfig {
            label,
            composition: label.composition(),
            n: 16,
            episodes: 30_000,
            runs: 20,
            seed: 0,
            hyperparams: Hyperparams::default(),
            reward_params: IntrinsicRewardParams::default(),
            payoff_matrix: PayoffMatrix::default(),
            selection_reward: SelectionReward::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.composition.iter().map(|&(_, c)| c).sum();
        if total != self.n {
            return Err(Error::InvalidComposition {
                expected: self.n,
                got: total,
            });
        }
        if self.n < 2 {
            return Err(Error::Config("a population needs at least two agents".into()));
        }
        if self.episodes == 0 || self.runs == 0 {
            return Err(Error::Config("episodes and runs must be positive".into()));
        }
        self.hyperparams.validate()?;
        IntrinsicRewardParams::new(self.reward_params.xi)?;
        self.payoff_matrix.validate()
    }

    /// Moral type of each agent id.
    pub fn agent_types(&self) -> Vec<MoralType> {
        self.composition
            .iter()
            .flat_map(|&(t, c)| std::iter::repeat_n(t, c))
            .collect()
    }

    /// Seeds of the configured runs: `seed, seed + 1, ...`.
    pub fn run_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(move |k| self.seed.wrapping_add(k))
    }
}

/// Fresh agents for `cfg`, networks drawn from `rng` in id order.
pub fn build_population<R: Rng + ?Sized>(cfg: &PopulationConfig, rng: &mut R) -> Result<Vec<AgentState>> {
    cfg.validate()?;
    Ok(cfg
        .agent_types()
        .into_iter()
        .enumerate()
        .map(|(id, t)| AgentState::new(id, t, cfg.n, &cfg.hyperparams, rng))
        .collect())
}

/// Each agent's most recent dilemma move.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub last_action: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub selector: usize,
    pub opponent: usize,
    pub a_selector: Action,
    pub a_opponent: Action,
    pub r_sel_extr: f64,
    pub r_opp_extr: f64,
    /// Learning reward of each side; equals the game payoff for S agents.
    pub r_sel_intr: f64,
    pub r_opp_intr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// `(selector, selected)` in selector order.
    pub selections: Vec<(usize, usize)>,
    pub games: Vec<GameRecord>,
    /// `(selection loss, dilemma loss)` per agent; empty until the learning phase ran.
    pub losses: Vec<(f64, f64)>,
}

/// Everything recorded for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub population: PopulationLabel,
    pub seed: u64,
    pub agent_types: Vec<MoralType>,
    pub episodes: Vec<EpisodeRecord>,
}

struct InitialStates {
    selection: Vec<Vec<f64>>,
    dilemma: Vec<Vec<f64>>,
}

struct PendingSelection {
    state: Vec<f64>,
    action: usize,
    reward: f64,
}

/// One run in progress.
pub struct Simulation {
    cfg: PopulationConfig,
    agents: Vec<AgentState>,
    env: EnvironmentState,
    initial: Option<InitialStates>,
    pending: Vec<PendingSelection>,
    rng: ChaCha8Rng,
    episode: usize,
}

impl Simulation {
    pub fn new(cfg: &PopulationConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = build_population(cfg, &mut rng)?;
        let n = cfg.n;
        let env = EnvironmentState {
            last_action: (0..n).map(|_| coin(&mut rng)).collect(),
        };
        let mut selection = Vec::with_capacity(n);
        let mut dilemma = Vec::with_capacity(n);
        for _ in 0..n {
            selection.push((0..n - 1).map(|_| coin(&mut rng).encode()).collect());
            dilemma.push(encode_dilemma_state(coin(&mut rng)));
        }
        Ok(Simulation {
            cfg: cfg.clone(),
            agents,
            env,
            initial: Some(InitialStates { selection, dilemma }),
            pending: Vec::new(),
            rng,
            episode: 0,
        })
    }

    /// Same as [`Simulation::new`] but with caller-provided agents; the environment and
    /// initial states are still drawn from `seed`.
    pub fn with_agents(cfg: &PopulationConfig, agents: Vec<AgentState>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if agents.len() != cfg.n {
            return Err(Error::InvalidComposition {
                expected: cfg.n,
                got: agents.len(),
            });
        }
        let mut sim = Simulation::new(cfg, seed)?;
        sim.agents = agents;
        Ok(sim)
    }

    pub fn config(&self) -> &PopulationConfig {
        &self.cfg
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentState] {
        &mut self.agents
    }

    pub fn env(&self) -> &EnvironmentState {
        &self.env
    }

    /// Overrides the environment; also discards the random first-episode states so the
    /// next episode parses its states from `env`.
    pub fn set_env(&mut self, env: EnvironmentState) {
        self.env = env;
        self.initial = None;
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Partner selection, the dilemma games, the environment update and storage of
    /// every experience. Leaves the buffers full for [`Simulation::learn`].
    pub fn collect_experience(&mut self) -> Result<EpisodeRecord> {
        let n = self.cfg.n;
        let matrix = self.cfg.payoff_matrix;
        let params = self.cfg.reward_params;
        let initial = self.initial.take();
        let snapshot = self.env.last_action.clone();

        if self.agents.iter().any(|a| !a.selection.buffer.is_empty() || !a.dilemma.buffer.is_empty()) {
            return Err(Error::Bookkeeping("buffers not empty at episode start".into()));
        }

        let mut selections = Vec::with_capacity(n);
        self.pending.clear();
        for i in 0..n {
            let state = match &initial {
                Some(init) => init.selection[i].clone(),
                None => encode_selection_state(&snapshot, i),
            };
            let k = self.agents[i].selection.act(&state, &mut self.rng)?;
            selections.push((i, opponent_id(i, k)));
            self.pending.push(PendingSelection {
                state,
                action: k,
                reward: 0.0,
            });
        }

        let mut games = Vec::with_capacity(n);
        let mut last = snapshot.clone();
        for &(i, j) in &selections {
            let (s_i, s_j) = match &initial {
                Some(init) => (init.dilemma[i].clone(), init.dilemma[j].clone()),
                None => (encode_dilemma_state(snapshot[j]), encode_dilemma_state(snapshot[i])),
            };
            let a_i = self.play(i, &s_i)?;
            let a_j = self.play(j, &s_j)?;
            let ctx_i = GameContext::new(a_i, a_j, Action::decode(s_i[0]), &matrix);
            let ctx_j = GameContext::new(a_j, a_i, Action::decode(s_j[0]), &matrix);
            let r_i = learning_reward(self.agents[i].moral_type, &ctx_i, &params)?;
            let r_j = learning_reward(self.agents[j].moral_type, &ctx_j, &params)?;

            self.pending[i].reward = match self.cfg.selection_reward {
                SelectionReward::Intrinsic => r_i,
                SelectionReward::Extrinsic => ctx_i.r_self_extr,
            };
            self.agents[i].dilemma.buffer.record(Experience {
                s: s_i,
                a: a_i.index(),
                r: r_i,
                s_next: encode_dilemma_state(a_j),
            })?;
            self.agents[j].dilemma.buffer.record(Experience {
                s: s_j,
                a: a_j.index(),
                r: r_j,
                s_next: encode_dilemma_state(a_i),
            })?;
            last[i] = a_i;
            last[j] = a_j;
            games.push(GameRecord {
                selector: i,
                opponent: j,
                a_selector: a_i,
                a_opponent: a_j,
                r_sel_extr: ctx_i.r_self_extr,
                r_opp_extr: ctx_j.r_self_extr,
                r_sel_intr: r_i,
                r_opp_intr: r_j,
            });
        }

        self.env.last_action = last;
        for (i, p) in self.pending.drain(..).enumerate() {
            let s_next = encode_selection_state(&self.env.last_action, i);
            self.agents[i].selection.buffer.record(Experience {
                s: p.state,
                a: p.action,
                r: p.reward,
                s_next,
            })?;
        }

        Ok(EpisodeRecord {
            episode: self.episode,
            selections,
            games,
            losses: Vec::new(),
        })
    }

    fn play(&mut self, agent: usize, state: &[f64]) -> Result<Action> {
        let k = self.agents[agent].dilemma.act(state, &mut self.rng)?;
        Ok(Action::from_index(k).expect("dilemma head has two outputs"))
    }

    /// Simultaneous end-of-episode updates of every agent; empties all buffers.
    pub fn learn(&mut self, record: &mut EpisodeRecord) -> Result<()> {
        let gamma = self.cfg.hyperparams.gamma;
        let episode = self.episode;
        record.losses = self
            .agents
            .iter_mut()
            .map(|a| a.update_heads(gamma))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                e @ Error::NonFinite { .. } => Error::NonFiniteAtEpisode {
                    episode,
                    source: Box::new(e),
                },
                e => e,
            })?;
        self.episode += 1;
        Ok(())
    }

    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let mut record = self.collect_experience()?;
        self.learn(&mut record)?;
        Ok(record)
    }
}

fn coin<R: Rng + ?Sized>(rng: &mut R) -> Action {
    if rng.gen::<bool>() {
        Action::Cooperate
    } else {
        Action::Defect
    }
}

/// Runs `cfg.episodes` episodes with `seed`, streaming every record to `sink`.
pub fn run_simulation_with<F>(cfg: &PopulationConfig, seed: u64, mut sink: F) -> Result<()>
where
    F: FnMut(&EpisodeRecord) -> Result<()>,
{
    let mut sim = Simulation::new(cfg, seed)?;
    for _ in 0..cfg.episodes {
        let record = sim.run_episode()?;
        sink(&record)?;
    }
    Ok(())
}

/// Runs `cfg.episodes` episodes with `seed` and keeps the whole log.
pub fn run_simulation(cfg: &PopulationConfig, seed: u64) -> Result<RunLog> {
    let mut episodes = Vec::with_capacity(cfg.episodes);
    run_simulation_with(cfg, seed, |r| {
        episodes.push(r.clone());
        Ok(())
    })?;
    Ok(RunLog {
        population: cfg.label,
        seed,
        agent_types: cfg.agent_types(),
        episodes,
    })
}

/// Trains a lone agent's dilemma head against an opponent that always plays
/// `opponent`, one game and one update per episode. Used as a convergence check.
pub fn train_against_fixed_opponent(
    moral_type: MoralType,
    opponent: Action,
    episodes: usize,
    hp: &Hyperparams,
    reward_params: &IntrinsicRewardParams,
    matrix: &PayoffMatrix,
    seed: u64,
) -> Result<Head> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::init_with(hp.init, 1, hp.hidden_dim, Action::ALL.len(), &mut rng);
    let mut head = Head::new(net, hp.lr, hp.eps_dil, hp.buffer_capacity);
    let s = encode_dilemma_state(opponent);
    for _ in 0..episodes {
        let a = Action::from_index(head.act(&s, &mut rng)?).expect("two actions");
        let ctx = GameContext::new(a, opponent, opponent, matrix);
        let r = learning_reward(moral_type, &ctx, reward_params)?;
        head.buffer.record(Experience {
            s: s.clone(),
            a: a.index(),
            r,
            s_next: s.clone(),
        })?;
        head.train(hp.gamma)?;
        head.buffer.clear();
    }
    Ok(head)
}

/// Greedy dilemma action of `head` against an opponent whose last move was `opp_last`.
pub fn greedy_action(head: &Head, opp_last: Action) -> Result<Action> {
    let q = head.net.forward(&encode_dilemma_state(opp_last))?;
    Ok(Action::from_index(argmax(&q)).expect("two actions"))
}

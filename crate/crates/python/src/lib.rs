//! Python bindings: reward functions, the Q-network, single simulations and
//! batched population runs.

use std::str::FromStr;

use moral_ipd::experiment::run_population as run_population_rs;
use moral_ipd::metrics::{moving_average as moving_average_rs, EpisodeMetrics};
use moral_ipd::{
    Action, EpisodeRecord, Experience, GameContext, Hyperparams, IntrinsicRewardParams, MoralType, PayoffMatrix,
    PopulationConfig, PopulationLabel,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(err)
}

/// Game payoffs `(self, opponent)` under the default matrix.
#[pyfunction]
fn payoff(a_self: &str, a_opp: &str) -> PyResult<(f64, f64)> {
    Ok(PayoffMatrix::default().payoff(parse(a_self)?, parse(a_opp)?))
}

fn context(a_self: &str, a_opp: &str, a_opp_prev: &str) -> PyResult<GameContext> {
    Ok(GameContext::new(parse(a_self)?, parse(a_opp)?, parse(a_opp_prev)?, &PayoffMatrix::default()))
}

/// Intrinsic reward of `moral_type` for one game, e.g. `intrinsic_reward("De", "D", "C", "C")`.
#[pyfunction]
#[pyo3(signature = (moral_type, a_self, a_opp, a_opp_prev, xi = 5.0))]
fn intrinsic_reward(moral_type: &str, a_self: &str, a_opp: &str, a_opp_prev: &str, xi: f64) -> PyResult<f64> {
    let params = IntrinsicRewardParams::new(xi).map_err(err)?;
    moral_ipd::intrinsic_reward(parse(moral_type)?, &context(a_self, a_opp, a_opp_prev)?, &params).map_err(err)
}

/// Reward the agent learns from: the payoff for S, the intrinsic reward otherwise.
#[pyfunction]
#[pyo3(signature = (moral_type, a_self, a_opp, a_opp_prev, xi = 5.0))]
fn learning_reward(moral_type: &str, a_self: &str, a_opp: &str, a_opp_prev: &str, xi: f64) -> PyResult<f64> {
    let params = IntrinsicRewardParams::new(xi).map_err(err)?;
    moral_ipd::learning_reward(parse(moral_type)?, &context(a_self, a_opp, a_opp_prev)?, &params).map_err(err)
}

#[pyfunction]
fn moving_average(series: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    if window == 0 {
        return Err(err("window must be positive"));
    }
    Ok(moving_average_rs(&series, window))
}

/// The nine population labels.
#[pyfunction]
fn population_labels() -> Vec<String> {
    PopulationLabel::all().iter().map(|l| l.to_string()).collect()
}

/// One-hidden-layer ReLU Q-network.
#[pyclass(name = "QNetwork")]
struct PyQNetwork {
    inner: moral_ipd::QNetwork,
}

#[pymethods]
impl PyQNetwork {
    #[new]
    #[pyo3(signature = (input_dim, hidden_dim, output_dim, seed = 0))]
    fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> PyResult<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(err("dimensions must be positive"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(PyQNetwork {
            inner: moral_ipd::QNetwork::init(input_dim, hidden_dim, output_dim, &mut rng),
        })
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(err)
    }

    /// Flat parameters: W1, b1, W2, b2, row-major.
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        let dst = self.inner.params_mut();
        if dst.len() != params.len() {
            return Err(err(format!("expected {} parameters, got {}", dst.len(), params.len())));
        }
        dst.copy_from_slice(&params);
        Ok(())
    }

    /// Mean TD loss and its gradient for a batch of `(s, a, r, s_next)` tuples.
    fn td_loss_and_grad(&self, batch: Vec<(Vec<f64>, usize, f64, Vec<f64>)>, gamma: f64) -> PyResult<(f64, Vec<f64>)> {
        let batch: Vec<Experience> = batch
            .into_iter()
            .map(|(s, a, r, s_next)| Experience { s, a, r, s_next })
            .collect();
        let (loss, grads) = moral_ipd::td_loss_and_grad(&self.inner, &batch, gamma).map_err(err)?;
        Ok((loss, grads.0))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.to_checkpoint()).map_err(err)
    }
}

fn config(population: &str, episodes: usize, runs: usize, seed: u64, hidden_dim: usize) -> PyResult<PopulationConfig> {
    let label: PopulationLabel = parse(population)?;
    let cfg = PopulationConfig {
        episodes,
        runs,
        seed,
        hyperparams: Hyperparams {
            hidden_dim,
            ..Hyperparams::default()
        },
        ..PopulationConfig::new(label)
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn record_dict<'py>(py: Python<'py>, r: &EpisodeRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("episode", r.episode)?;
    d.set_item("selections", r.selections.clone())?;
    let games: Vec<(usize, usize, String, String, f64, f64)> = r
        .games
        .iter()
        .map(|g| {
            (
                g.selector,
                g.opponent,
                g.a_selector.to_string(),
                g.a_opponent.to_string(),
                g.r_sel_extr,
                g.r_opp_extr,
            )
        })
        .collect();
    d.set_item("games", games)?;
    d.set_item("losses", r.losses.clone())?;
    Ok(d)
}

fn metrics_dict<'py>(py: Python<'py>, m: &EpisodeMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("episode", m.episode)?;
    d.set_item("coop_all", m.coop_all)?;
    for t in MoralType::ALL {
        if let Some(c) = m.coop(t) {
            d.set_item(format!("coop_{t}"), c)?;
        }
    }
    d.set_item("r_collective", m.outcomes.r_collective)?;
    d.set_item("r_gini", m.outcomes.r_gini)?;
    d.set_item("r_min", m.outcomes.r_min)?;
    d.set_item("pairs", (m.pairs.cc, m.pairs.cd, m.pairs.dc, m.pairs.dd))?;
    Ok(d)
}

/// One run of a labelled population, stepped an episode at a time.
#[pyclass(name = "Simulation")]
struct PySimulation {
    inner: moral_ipd::Simulation,
    agent_types: Vec<MoralType>,
}

#[pymethods]
impl PySimulation {
    #[new]
    #[pyo3(signature = (population, seed = 0, hidden_dim = 256))]
    fn new(population: &str, seed: u64, hidden_dim: usize) -> PyResult<Self> {
        let cfg = config(population, 1, 1, seed, hidden_dim)?;
        Ok(PySimulation {
            agent_types: cfg.agent_types(),
            inner: moral_ipd::Simulation::new(&cfg, seed).map_err(err)?,
        })
    }

    #[getter]
    fn agent_types(&self) -> Vec<String> {
        self.agent_types.iter().map(|t| t.to_string()).collect()
    }

    #[getter]
    fn episode(&self) -> usize {
        self.inner.episode()
    }

    /// Each agent's last action, "C" or "D".
    #[getter]
    fn last_actions(&self) -> Vec<String> {
        self.inner.env().last_action.iter().map(Action::to_string).collect()
    }

    /// Runs one episode and returns its record.
    fn run_episode<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.run_episode().map_err(err)?;
        record_dict(py, &r)
    }

    /// Runs one episode and returns its metrics.
    fn step_metrics<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.run_episode().map_err(err)?;
        let m = EpisodeMetrics::compute(&r, &self.agent_types).map_err(err)?;
        metrics_dict(py, &m)
    }

    /// JSON checkpoint of agent `id`'s two networks.
    fn checkpoint(&self, id: usize) -> PyResult<String> {
        let agent = self.inner.agents().get(id).ok_or_else(|| err(format!("no agent {id}")))?;
        serde_json::to_string(&agent.checkpoint()).map_err(err)
    }
}

/// Runs `runs` seeds of a population and returns per-run lists of episode metrics.
#[pyfunction]
#[pyo3(signature = (population, episodes, runs = 1, seed = 0, hidden_dim = 256))]
fn run_population<'py>(
    py: Python<'py>,
    population: &str,
    episodes: usize,
    runs: usize,
    seed: u64,
    hidden_dim: usize,
) -> PyResult<Vec<Vec<Bound<'py, PyDict>>>> {
    let cfg = config(population, episodes, runs, seed, hidden_dim)?;
    let window = episodes.min(100);
    let summaries = py.detach(|| run_population_rs(&cfg, window, None, None)).map_err(err)?;
    summaries
        .iter()
        .map(|s| s.episodes.iter().map(|m| metrics_dict(py, m)).collect())
        .collect()
}

#[pymodule]
pub fn moral_ipd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(payoff, m)?)?;
    m.add_function(wrap_pyfunction!(intrinsic_reward, m)?)?;
    m.add_function(wrap_pyfunction!(learning_reward, m)?)?;
    m.add_function(wrap_pyfunction!(moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(population_labels, m)?)?;
    m.add_function(wrap_pyfunction!(run_population, m)?)?;
    m.add_class::<PyQNetwork>()?;
    m.add_class::<PySimulation>()?;
    Ok(())
}

//! A learning agent: one Q-network head for choosing partners, one for playing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Action;
use crate::moral::MoralType;
pub use crate::neural::Experience;
use crate::neural::{adam_step, td_loss_and_grad, AdamConfig, AdamState, Hyperparams, NetworkCheckpoint, QNetwork};

/// Selection state: the last actions of every other agent in ascending id order,
/// one scalar each (Cooperate = 1.0, Defect = 0.0).
///
/// Output index `k` of the selection head refers to opponent [`opponent_id`]`(self_id, k)`.
pub fn encode_selection_state(env: &[Action], self_id: usize) -> Vec<f64> {
    env.iter()
        .enumerate()
        .filter(|&(i, _)| i != self_id)
        .map(|(_, a)| a.encode())
        .collect()
}

/// Dilemma state: the selected opponent's last action.
pub fn encode_dilemma_state(opp_last: Action) -> Vec<f64> {
    vec![opp_last.encode()]
}

/// Maps a selection-head output index to an agent id, skipping `self_id`.
pub fn opponent_id(self_id: usize, k: usize) -> usize {
    if k < self_id {
        k
    } else {
        k + 1
    }
}

/// Inverse of [`opponent_id`].
pub fn selection_index(self_id: usize, opponent: usize) -> usize {
    debug_assert_ne!(self_id, opponent);
    if opponent < self_id {
        opponent
    } else {
        opponent - 1
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action selection.
///
/// Consumes one uniform draw to decide whether to explore, and one more only when exploring.
pub fn act<R: Rng + ?Sized>(net: &QNetwork, eps: f64, s: &[f64], rng: &mut R) -> Result<usize> {
    let q = net.forward(s)?;
    if rng.gen::<f64>() < eps {
        Ok(rng.gen_range(0..q.len()))
    } else {
        Ok(argmax(&q))
    }
}

/// Per-episode experience store.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    entries: Vec<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            entries: Vec::with_capacity(capacity.min(64)),
            capacity,
        }
    }

    pub fn record(&mut self, e: Experience) -> Result<()> {
        if self.entries.len() >= self.capacity {
            return Err(Error::BufferOverflow {
                capacity: self.capacity,
            });
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn entries(&self) -> &[Experience] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// A network with its optimizer, exploration rate and replay buffer.
#[derive(Clone, Debug)]
pub struct Head {
    pub net: QNetwork,
    pub opt: AdamState,
    pub buffer: ReplayBuffer,
    pub eps: f64,
}

impl Head {
    pub fn new(net: QNetwork, lr: f64, eps: f64, capacity: usize) -> Self {
        let opt = AdamState::for_network(&net, AdamConfig { lr, ..AdamConfig::default() });
        Head {
            net,
            opt,
            buffer: ReplayBuffer::new(capacity),
            eps,
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<usize> {
        act(&self.net, self.eps, s, rng)
    }

    /// One Adam step on the mean TD loss of the buffered experiences. Returns the loss.
    pub fn train(&mut self, gamma: f64) -> Result<f64> {
        let (loss, grads) = td_loss_and_grad(&self.net, self.buffer.entries(), gamma)?;
        adam_step(&mut self.net, &mut self.opt, &grads)?;
        Ok(loss)
    }
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: usize,
    pub moral_type: MoralType,
    pub selection: Head,
    pub dilemma: Head,
}

impl AgentState {
    /// Fresh agent in a population of `population_size`. Draws the selection network, then the dilemma network.
    pub fn new<R: Rng + ?Sized>(
        id: usize,
        moral_type: MoralType,
        population_size: usize,
        hp: &Hyperparams,
        rng: &mut R,
    ) -> Self {
        assert!(population_size >= 2, "a population needs at least two agents");
        let opponents = population_size - 1;
        let sel_net = QNetwork::init_with(hp.init, opponents, hp.hidden_dim, opponents, rng);
        let dil_net = QNetwork::init_with(hp.init, 1, hp.hidden_dim, Action::ALL.len(), rng);
        AgentState {
            id,
            moral_type,
            selection: Head::new(sel_net, hp.lr, hp.eps_sel, hp.buffer_capacity),
            dilemma: Head::new(dil_net, hp.lr, hp.eps_dil, hp.buffer_capacity),
        }
    }

    /// End-of-episode learning: the single selection experience and the mean over all
    /// dilemma experiences, one Adam step each. Buffers are cleared afterwards.
    pub fn update_heads(&mut self, gamma: f64) -> Result<(f64, f64)> {
        if self.selection.buffer.len() != 1 {
            return Err(Error::Bookkeeping(format!(
                "agent {} holds {} selection experiences, expected exactly 1",
                self.id,
                self.selection.buffer.len()
            )));
        }
        if self.dilemma.buffer.is_empty() {
            return Err(Error::Bookkeeping(format!("agent {} has no dilemma experience", self.id)));
        }
        let sel_loss = self.selection.train(gamma)?;
        let dil_loss = self.dilemma.train(gamma)?;
        self.selection.buffer.clear();
        self.dilemma.buffer.clear();
        Ok((sel_loss, dil_loss))
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            id: self.id,
            moral_type: self.moral_type,
            selection: self.selection.net.to_checkpoint(),
            dilemma: self.dilemma.net.to_checkpoint(),
        }
    }
}

/// JSON dump of an agent's two networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub id: usize,
    pub moral_type: MoralType,
    pub selection: NetworkCheckpoint,
    pub dilemma: NetworkCheckpoint,
}

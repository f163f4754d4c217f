//! Action-branching actor-critic that builds patterns one event at a time.
//!
//! A shared trunk embeds the state (window embedding plus partial-pattern
//! encoding). The event head picks the next event type or `nop`. Then up to
//! `max_conds` condition heads run in sequence; head `j` sees the trunk output, the
//! chosen event and the `j` conditions already picked for this event. A critic
//! head estimates the state value.
//!
//! Sampling uses the policy re-weighted by UCB1 bonuses; gradients use the
//! log-probabilities of the un-weighted policy. Per event step the actor
//! objective uses the combined log value
//! `CL = log pi_event + mean_j log pi_cond_j`, weighted by the advantage.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Activation, DenseNet, GradientSet, LayerSpec, NetCheckpoint, NnError, Optimizer, OptimizerKind};
use crate::pattern::{ActionSpace, Condition, ConditionAction, ConditionTarget, EventAction, Pattern};
use crate::stream::{encode_partial_pattern, state_len, StateVector};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("episode has no steps")]
    EmptyEpisode,
    #[error("non-finite loss (actor {actor}, critic {critic}) at step {step}")]
    NonFiniteLoss { actor: f64, critic: f64, step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub trunk_hidden: usize,
    pub head_hidden: usize,
    pub gamma: f64,
    pub ucb_c: f64,
    pub lr: f64,
    pub critic_coef: f64,
    pub optimizer: OptimizerKind,
    /// Rewards are divided by this before returns are computed.
    pub reward_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            trunk_hidden: 128,
            head_hidden: 64,
            gamma: 0.99,
            ucb_c: 1.0,
            lr: 1e-3,
            critic_coef: 0.5,
            optimizer: OptimizerKind::Adam,
            reward_scale: 1.0,
        }
    }
}

/// UCB1 score `q + c * sqrt(ln t / n)`; `n = 0` scores `+inf`.
pub fn ucb_score(q: f64, c: f64, t: u64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    q + c * ((t.max(1) as f64).ln() / n as f64).sqrt()
}

/// Re-weights a policy with UCB1 bonuses: bonuses are min-max normalized to
/// `[0, 1]`, halved, added to the probabilities and renormalized. Never-tried
/// actions get the top bonus. Masked actions keep probability zero.
pub fn ucb_reweight(probs: &[f64], counts: &[u64], t: u64, c: f64, mask: &[bool]) -> Vec<f64> {
    if c == 0.0 {
        return probs.to_vec();
    }
    let bonus: Vec<Option<f64>> = probs
        .iter()
        .enumerate()
        .map(|(a, _)| mask[a].then(|| ucb_score(0.0, c, t, counts[a])))
        .collect();
    let any_inf = bonus.iter().flatten().any(|b| b.is_infinite());
    let finite = bonus.iter().flatten().filter(|b| b.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &b| (lo.min(b), hi.max(b)));
    let all_inf = bonus.iter().flatten().all(|b| b.is_infinite());
    let normalized = |b: f64| -> f64 {
        if all_inf {
            0.0
        } else if any_inf {
            if b.is_infinite() {
                1.0
            } else {
                0.0
            }
        } else if hi > lo {
            (b - lo) / (hi - lo)
        } else {
            0.0
        }
    };
    let mut out: Vec<f64> = probs
        .iter()
        .zip(&bonus)
        .map(|(&p, b)| match b {
            Some(b) => p + 0.5 * normalized(*b),
            None => 0.0,
        })
        .collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        out.iter_mut().for_each(|p| *p /= sum);
    }
    out
}

/// `base_lr * max(0.1, H(p) / ln n)`.
pub fn dynamic_lr(probs: &[f64], base_lr: f64) -> f64 {
    let n = probs.len();
    if n < 2 {
        return base_lr;
    }
    base_lr * (nn::entropy(probs) / (n as f64).ln()).clamp(0.1, 1.0)
}

/// Event log-prob plus the mean of the condition log-probs (empty mean = 0).
pub fn combined_log(event_logp: f64, condition_logps: &[f64]) -> f64 {
    let k = condition_logps.len().max(1) as f64;
    event_logp + condition_logps.iter().sum::<f64>() / k
}

/// Discounted returns and advantages, walking the episode backwards.
pub fn compute_returns(rewards: &[f64], values: &[f64], gamma: f64, bootstrap: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut r = bootstrap.unwrap_or(0.0);
    let mut returns = vec![0.0; rewards.len()];
    for t in (0..rewards.len()).rev() {
        r = rewards[t] + gamma * r;
        returns[t] = r;
    }
    let adv = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    (returns, adv)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub action: usize,
    /// log pi(action) under the policy before UCB re-weighting.
    pub log_prob: f64,
    pub policy: Vec<f64>,
    pub sampling: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    NopEvent,
    ZeroReward,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStep {
    pub action: usize,
    pub mask: Vec<bool>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStep {
    pub state: StateVector,
    pub event_action: usize,
    pub event_mask: Vec<bool>,
    pub event_log_prob: f64,
    pub event_policy: Vec<f64>,
    pub conditions: Vec<ConditionStep>,
    pub reward: f64,
    pub value: f64,
    pub cl: f64,
    pub advantage: f64,
}

impl EventStep {
    pub fn condition_log_probs(&self) -> Vec<f64> {
        self.conditions.iter().map(|c| c.log_prob).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<EventStep>,
    pub total_return: f64,
    pub terminal_reason: TerminalReason,
    /// The pattern built by the episode (may contain holes).
    pub pattern: Pattern,
    /// Critic value of the state after the last step, when that state is not terminal.
    pub bootstrap_value: Option<f64>,
}

/// What the agent interacts with during an episode.
pub trait EpisodeEnv {
    /// Window part of the state vector.
    fn window_embedding(&self) -> &[f64];
    /// Reward for the pattern built so far.
    fn reward(&mut self, pattern: &Pattern) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub lr_used: f64,
}

/// Gradients for every net of the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGradients {
    pub trunk: GradientSet,
    pub event_head: GradientSet,
    pub condition_heads: Vec<GradientSet>,
    pub critic: GradientSet,
}

#[derive(Debug, Clone)]
struct AgentOptimizers {
    trunk: Optimizer,
    event_head: Optimizer,
    condition_heads: Vec<Optimizer>,
    critic: Optimizer,
}

impl AgentOptimizers {
    fn new(kind: OptimizerKind, lr: f64, agent_nets: (&DenseNet, &DenseNet, &[DenseNet], &DenseNet)) -> Self {
        let (trunk, event, conds, critic) = agent_nets;
        AgentOptimizers {
            trunk: Optimizer::new(kind, lr, trunk),
            event_head: Optimizer::new(kind, lr, event),
            condition_heads: conds.iter().map(|c| Optimizer::new(kind, lr, c)).collect(),
            critic: Optimizer::new(kind, lr, critic),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    space: ActionSpace,
    within_seconds: f64,
    config: AgentConfig,
    trunk: DenseNet,
    event_head: DenseNet,
    condition_heads: Vec<DenseNet>,
    critic: DenseNet,
    event_counts: Vec<u64>,
    condition_counts: Vec<Vec<u64>>,
    step_counter: u64,
    optimizers: AgentOptimizers,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(space: ActionSpace, within_seconds: f64, config: AgentConfig, rng: &mut R) -> Self {
        assert!(config.gamma > 0.0 && config.gamma <= 1.0, "gamma must be in (0, 1]");
        let state_dim = state_len(&space);
        let h = config.trunk_hidden;
        let trunk = DenseNet::new(
            &[
                LayerSpec { inputs: state_dim, outputs: h, activation: Activation::Relu },
                LayerSpec { inputs: h, outputs: h, activation: Activation::Relu },
            ],
            0.0,
            rng,
        );
        let ne = space.n_event_actions();
        let nc = space.n_condition_actions();
        let event_head = DenseNet::mlp(&[h, config.head_hidden, ne], Activation::Relu, 0.0, rng);
        let condition_heads = (0..space.max_conds())
            .map(|j| DenseNet::mlp(&[h + ne + j * nc, config.head_hidden, nc], Activation::Relu, 0.0, rng))
            .collect::<Vec<_>>();
        let critic = DenseNet::mlp(&[h, config.head_hidden, 1], Activation::Relu, 0.0, rng);
        let optimizers = AgentOptimizers::new(config.optimizer, config.lr, (&trunk, &event_head, &condition_heads, &critic));
        Agent {
            event_counts: vec![0; ne],
            condition_counts: vec![vec![0; nc]; space.max_conds()],
            space,
            within_seconds,
            config,
            trunk,
            event_head,
            condition_heads,
            critic,
            step_counter: 0,
            optimizers,
        }
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn event_counts(&self) -> &[u64] {
        &self.event_counts
    }

    pub fn condition_counts(&self) -> &[Vec<u64>] {
        &self.condition_counts
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn trunk(&self) -> &DenseNet {
        &self.trunk
    }

    pub fn event_head(&self) -> &DenseNet {
        &self.event_head
    }

    pub fn condition_heads(&self) -> &[DenseNet] {
        &self.condition_heads
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    /// All nets in a fixed order: trunk, event head, condition heads, critic.
    pub fn nets_mut(&mut self) -> Vec<&mut DenseNet> {
        let mut v = vec![&mut self.trunk, &mut self.event_head];
        v.extend(self.condition_heads.iter_mut());
        v.push(&mut self.critic);
        v
    }

    pub fn set_ucb_c(&mut self, c: f64) {
        self.config.ucb_c = c;
    }

    /// Builds the state vector for a partial pattern.
    pub fn state(&self, window_embedding: &[f64], pattern: &Pattern) -> StateVector {
        StateVector::concat(window_embedding, &encode_partial_pattern(pattern, &self.space))
    }

    fn hidden(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        self.trunk.predict(state)
    }

    /// Event-head policy (no UCB) for a state.
    pub fn event_policy(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        let h = self.hidden(state)?;
        Ok(nn::softmax(&self.event_head.predict(&h)?))
    }

    pub fn value(&self, state: &[f64]) -> Result<f64, NnError> {
        Ok(self.critic.predict(&self.hidden(state)?)?[0])
    }

    fn select<R: Rng + ?Sized>(&mut self, logits: &[f64], mask: &[bool], branch: Option<usize>, rng: &mut R) -> Selection {
        let policy = nn::masked_softmax(logits, mask);
        let t = self.step_counter + 1;
        let counts = match branch {
            None => &self.event_counts,
            Some(j) => &self.condition_counts[j],
        };
        let sampling = ucb_reweight(&policy, counts, t, self.config.ucb_c, mask);
        let action = sample_index(&sampling, rng);
        match branch {
            None => self.event_counts[action] += 1,
            Some(j) => self.condition_counts[j][action] += 1,
        }
        self.step_counter += 1;
        Selection { action, log_prob: nn::masked_log_softmax(logits, mask)[action], policy, sampling }
    }

    /// Samples an event action; `nop` has index |E|.
    pub fn select_event<R: Rng + ?Sized>(&mut self, state: &[f64], mask: &[bool], rng: &mut R) -> Result<Selection, NnError> {
        let h = self.hidden(state)?;
        let logits = self.event_head.predict(&h)?;
        Ok(self.select(&logits, mask, None, rng))
    }

    /// Input to condition head `branch`: trunk output, event one-hot, prior condition one-hots.
    pub fn condition_input(&self, hidden: &[f64], event_action: usize, prior: &[usize]) -> Vec<f64> {
        let mut x = hidden.to_vec();
        x.extend(one_hot(self.space.n_event_actions(), event_action));
        for &c in prior {
            x.extend(one_hot(self.space.n_condition_actions(), c));
        }
        x
    }

    /// Samples condition `branch` (0-based) given the trunk output and prior choices.
    /// If every action is masked the `nop` is forced.
    pub fn select_condition<R: Rng + ?Sized>(
        &mut self,
        hidden: &[f64],
        branch: usize,
        event_action: usize,
        prior: &[usize],
        mask: &[bool],
        rng: &mut R,
    ) -> Result<Selection, NnError> {
        let mut mask = mask.to_vec();
        if !mask.iter().any(|&m| m) {
            mask[self.space.condition_nop()] = true;
        }
        let x = self.condition_input(hidden, event_action, prior);
        let logits = self.condition_heads[branch].predict(&x)?;
        Ok(self.select(&logits, &mask, Some(branch), rng))
    }

    /// Valid condition actions for the event at `position` given the ones already chosen.
    pub fn condition_mask(&self, position: usize, chosen: &[usize]) -> Vec<bool> {
        self.space
            .condition_actions()
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                ConditionAction::Nop => true,
                ConditionAction::Cond { slot, .. } => {
                    let reachable = match slot {
                        crate::pattern::TargetSlot::Constant => true,
                        crate::pattern::TargetSlot::Event(k) => *k < position,
                    };
                    reachable && !chosen.contains(&i)
                }
            })
            .collect()
    }

    fn condition_from_action(&self, pattern: &Pattern, position: usize, action: usize) -> Option<Condition> {
        match self.space.condition_actions()[action] {
            ConditionAction::Nop => None,
            ConditionAction::Cond { attr, op, slot } => {
                let target = match ActionSpace::slot_position(position, slot) {
                    None => ConditionTarget::Hole(pattern.next_hole_id()),
                    Some(k) => ConditionTarget::EventRef(k),
                };
                Some(Condition {
                    attribute: self.space.schema().attributes()[attr].clone(),
                    op: self.space.schema().operators()[op],
                    target,
                })
            }
        }
    }

    /// Runs one episode, building a pattern and recording everything the update needs.
    pub fn run_episode<E: EpisodeEnv + ?Sized, R: Rng + ?Sized>(&mut self, env: &mut E, rng: &mut R) -> Result<Episode, AgentError> {
        let mut pattern = Pattern::empty(self.within_seconds);
        let mut steps = Vec::new();
        let mut terminal_reason = TerminalReason::MaxLen;
        let event_mask = vec![true; self.space.n_event_actions()];
        for t in 0..self.space.max_len() {
            let state = self.state(env.window_embedding(), &pattern);
            let h = self.hidden(&state.0)?;
            let logits = self.event_head.predict(&h)?;
            let ev = self.select(&logits, &event_mask, None, rng);
            if ev.action == self.space.event_nop() {
                terminal_reason = TerminalReason::NopEvent;
                break;
            }
            let EventAction::Event(ty) = self.space.event_actions()[ev.action] else { unreachable!() };
            pattern.push_event(self.space.schema().event_types()[ty].clone());

            let mut chosen: Vec<usize> = Vec::new();
            let mut conditions = Vec::new();
            for j in 0..self.space.max_conds() {
                let mask = self.condition_mask(t, &chosen);
                let sel = self.select_condition(&h, j, ev.action, &chosen, &mask, rng)?;
                conditions.push(ConditionStep { action: sel.action, mask, log_prob: sel.log_prob });
                match self.condition_from_action(&pattern, t, sel.action) {
                    None => break,
                    Some(c) => {
                        pattern.events[t].conditions.push(c);
                        chosen.push(sel.action);
                    }
                }
            }

            let reward = env.reward(&pattern);
            let value = self.critic.predict(&h)?[0];
            let cond_logps: Vec<f64> = conditions.iter().map(|c| c.log_prob).collect();
            let cl = combined_log(ev.log_prob, &cond_logps);
            steps.push(EventStep {
                state,
                event_action: ev.action,
                event_mask: event_mask.clone(),
                event_log_prob: ev.log_prob,
                event_policy: ev.policy,
                conditions,
                reward,
                value,
                cl,
                advantage: 0.0,
            });
            if reward == 0.0 {
                terminal_reason = TerminalReason::ZeroReward;
                break;
            }
        }
        let total_return = steps.iter().map(|s| s.reward).sum();
        Ok(Episode { steps, total_return, terminal_reason, pattern, bootstrap_value: None })
    }

    /// Surrogate losses and their gradients for fixed returns and advantages.
    /// Actor loss is `-sum_t CL_t * A_t`; critic loss is the mean squared error
    /// between values and returns, weighted by `critic_coef` in the total.
    pub fn loss_and_gradients(
        &self,
        episode: &Episode,
        returns: &[f64],
        advantages: &[f64],
    ) -> Result<(f64, f64, AgentGradients), AgentError> {
        let n_steps = episode.steps.len();
        let mut grads = AgentGradients {
            trunk: GradientSet::zeros_like(&self.trunk),
            event_head: GradientSet::zeros_like(&self.event_head),
            condition_heads: self.condition_heads.iter().map(GradientSet::zeros_like).collect(),
            critic: GradientSet::zeros_like(&self.critic),
        };
        let mut actor_loss = 0.0;
        let mut critic_loss = 0.0;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        for (t, step) in episode.steps.iter().enumerate() {
            let adv = advantages[t];
            let (h, trunk_cache) = self.trunk.forward(&step.state.0, false, &mut rng)?;
            let mut grad_h = vec![0.0; h.len()];

            let (logits, ev_cache) = self.event_head.forward(&h, false, &mut rng)?;
            let p = nn::masked_softmax(&logits, &step.event_mask);
            let ev_logp = nn::masked_log_softmax(&logits, &step.event_mask)[step.event_action];
            let g_logits: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| {
                    let ind = if i == step.event_action { 1.0 } else { 0.0 };
                    -adv * (ind - pi)
                })
                .collect();
            let (g, gx) = self.event_head.backward(&ev_cache, &g_logits)?;
            grads.event_head.add_assign(&g);
            grad_h.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);

            let k = step.conditions.len().max(1) as f64;
            let mut cond_logps = Vec::with_capacity(step.conditions.len());
            let mut prior = Vec::new();
            for (j, cs) in step.conditions.iter().enumerate() {
                let x = self.condition_input(&h, step.event_action, &prior);
                let (logits, cache) = self.condition_heads[j].forward(&x, false, &mut rng)?;
                let p = nn::masked_softmax(&logits, &cs.mask);
                cond_logps.push(nn::masked_log_softmax(&logits, &cs.mask)[cs.action]);
                let g_logits: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(i, &pi)| {
                        let ind = if i == cs.action { 1.0 } else { 0.0 };
                        -adv * (ind - pi) / k
                    })
                    .collect();
                let (g, gx) = self.condition_heads[j].backward(&cache, &g_logits)?;
                grads.condition_heads[j].add_assign(&g);
                grad_h.iter_mut().zip(&gx[..h.len()]).for_each(|(a, b)| *a += b);
                prior.push(cs.action);
            }
            actor_loss -= combined_log(ev_logp, &cond_logps) * adv;

            let (v, critic_cache) = self.critic.forward(&h, false, &mut rng)?;
            let diff = v[0] - returns[t];
            critic_loss += diff * diff / n_steps as f64;
            let g_v = self.config.critic_coef * 2.0 * diff / n_steps as f64;
            let (g, gx) = self.critic.backward(&critic_cache, &[g_v])?;
            grads.critic.add_assign(&g);
            grad_h.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);

            let (g, _) = self.trunk.backward(&trunk_cache, &grad_h)?;
            grads.trunk.add_assign(&g);

            if !actor_loss.is_finite() || !critic_loss.is_finite() {
                return Err(AgentError::NonFiniteLoss { actor: actor_loss, critic: critic_loss, step: t });
            }
        }
        Ok((actor_loss, critic_loss, grads))
    }

    /// `actor_loss + critic_coef * critic_loss` for fixed returns and advantages.
    pub fn total_loss(&self, episode: &Episode, returns: &[f64], advantages: &[f64]) -> Result<f64, AgentError> {
        let (a, c, _) = self.loss_and_gradients(episode, returns, advantages)?;
        Ok(a + self.config.critic_coef * c)
    }

    /// One actor-critic update from a finished episode.
    pub fn update(&mut self, episode: &mut Episode) -> Result<UpdateMetrics, AgentError> {
        if episode.steps.is_empty() {
            return Err(AgentError::EmptyEpisode);
        }
        let scale = self.config.reward_scale;
        let rewards: Vec<f64> = episode.steps.iter().map(|s| s.reward / scale).collect();
        let values: Vec<f64> = episode.steps.iter().map(|s| s.value).collect();
        let (returns, advantages) = compute_returns(&rewards, &values, self.config.gamma, episode.bootstrap_value);
        for (s, a) in episode.steps.iter_mut().zip(&advantages) {
            s.advantage = *a;
        }
        let (actor_loss, critic_loss, grads) = self.loss_and_gradients(episode, &returns, &advantages)?;
        let factor = episode.steps.iter().map(|s| dynamic_lr(&s.event_policy, 1.0)).sum::<f64>() / episode.steps.len() as f64;
        let lr = self.config.lr * factor;
        let o = &mut self.optimizers;
        o.trunk.apply(&mut self.trunk, &grads.trunk, Some(lr))?;
        o.event_head.apply(&mut self.event_head, &grads.event_head, Some(lr))?;
        for ((opt, net), g) in o.condition_heads.iter_mut().zip(&mut self.condition_heads).zip(&grads.condition_heads) {
            opt.apply(net, g, Some(lr))?;
        }
        o.critic.apply(&mut self.critic, &grads.critic, Some(lr))?;
        Ok(UpdateMetrics { actor_loss, critic_loss, lr_used: lr })
    }

    pub fn to_checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            version: nn::CHECKPOINT_VERSION,
            config: self.config.clone(),
            within_seconds: self.within_seconds,
            trunk: self.trunk.to_checkpoint(),
            event_head: self.event_head.to_checkpoint(),
            condition_heads: self.condition_heads.iter().map(DenseNet::to_checkpoint).collect(),
            critic: self.critic.to_checkpoint(),
            event_counts: self.event_counts.clone(),
            condition_counts: self.condition_counts.clone(),
            step_counter: self.step_counter,
        }
    }

    /// Restores an agent; net shapes are validated against `space`.
    pub fn from_checkpoint(space: ActionSpace, ck: AgentCheckpoint) -> Result<Self, AgentError> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let template = Agent::new(space, ck.within_seconds, ck.config.clone(), &mut rng);
        let trunk = DenseNet::from_checkpoint(ck.trunk, Some(&template.trunk.dims()))?;
        let event_head = DenseNet::from_checkpoint(ck.event_head, Some(&template.event_head.dims()))?;
        if ck.condition_heads.len() != template.condition_heads.len() {
            return Err(AgentError::Checkpoint("condition head count does not match max_conds".into()));
        }
        let condition_heads = ck
            .condition_heads
            .into_iter()
            .zip(&template.condition_heads)
            .map(|(c, t)| DenseNet::from_checkpoint(c, Some(&t.dims())))
            .collect::<Result<Vec<_>, _>>()?;
        let critic = DenseNet::from_checkpoint(ck.critic, Some(&template.critic.dims()))?;
        if ck.event_counts.len() != template.event_counts.len()
            || ck.condition_counts.len() != template.condition_counts.len()
            || ck.condition_counts.iter().any(|c| c.len() != template.space.n_condition_actions())
        {
            return Err(AgentError::Checkpoint("action counts do not match the action space".into()));
        }
        let optimizers = AgentOptimizers::new(ck.config.optimizer, ck.config.lr, (&trunk, &event_head, &condition_heads, &critic));
        Ok(Agent {
            space: template.space,
            within_seconds: ck.within_seconds,
            config: ck.config,
            trunk,
            event_head,
            condition_heads,
            critic,
            event_counts: ck.event_counts,
            condition_counts: ck.condition_counts,
            step_counter: ck.step_counter,
            optimizers,
        })
    }
}

/// Serialized agent: nets plus UCB bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub config: AgentConfig,
    pub within_seconds: f64,
    pub trunk: NetCheckpoint,
    pub event_head: NetCheckpoint,
    pub condition_heads: Vec<NetCheckpoint>,
    pub critic: NetCheckpoint,
    pub event_counts: Vec<u64>,
    pub condition_counts: Vec<Vec<u64>>,
    pub step_counter: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::EventSchema;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> ActionSpace {
        ActionSpace::new(EventSchema::from_names(&["A", "B"], &["x"], &["<", ">"]).unwrap(), 3, 2)
    }

    struct ConstEnv {
        embedding: Vec<f64>,
        reward: f64,
    }

    impl EpisodeEnv for ConstEnv {
        fn window_embedding(&self) -> &[f64] {
            &self.embedding
        }
        fn reward(&mut self, _: &Pattern) -> f64 {
            self.reward
        }
    }

    fn env(space: &ActionSpace, reward: f64) -> ConstEnv {
        ConstEnv { embedding: vec![0.1; crate::stream::window_embedding_len(space.schema())], reward }
    }

    fn small_agent(seed: u64) -> Agent {
        let cfg = AgentConfig { trunk_hidden: 16, head_hidden: 8, ..AgentConfig::default() };
        Agent::new(space(), 2.0, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn ucb_equal_counts_is_identity() {
        let p = [0.2, 0.5, 0.3];
        let out = ucb_reweight(&p, &[4, 4, 4], 13, 1.0, &[true; 3]);
        for (a, b) in out.iter().zip(p) {
            assert!((a - b).abs() < 1e-15);
        }
        let none_tried = ucb_reweight(&p, &[0, 0, 0], 1, 1.0, &[true; 3]);
        assert_eq!(none_tried, p.to_vec());
    }

    #[test]
    fn ucb_never_tried_action_wins_ties() {
        let p = [0.25; 4];
        let out = ucb_reweight(&p, &[3, 0, 5, 2], 11, 1.0, &[true; 4]);
        let best = out.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(out[1], best);
        assert!(out.iter().enumerate().all(|(i, &v)| i == 1 || v < best));
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ucb_keeps_masked_actions_at_zero() {
        let out = ucb_reweight(&[0.5, 0.0, 0.5], &[1, 0, 7], 9, 1.0, &[true, false, true]);
        assert_eq!(out[1], 0.0);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[0] > out[2]);
    }

    #[test]
    fn ucb_raw_score() {
        let t_e = std::f64::consts::E;
        // ln(t) must be exactly 1; use the closed form rather than an integer t.
        let score = 0.5 + 1.0 * (t_e.ln() / 1.0).sqrt();
        assert!((score - 1.5).abs() < 1e-12);
        assert!((ucb_score(0.5, 1.0, 1, 1) - 0.5).abs() < 1e-12);
        assert_eq!(ucb_score(0.1, 1.0, 5, 0), f64::INFINITY);
    }

    #[test]
    fn combined_log_values() {
        let l = 0.5f64.ln();
        assert_eq!(combined_log(l, &[]), l);
        assert!((combined_log(l, &[l, l]) - 2.0 * l).abs() < 1e-15);
        assert!((combined_log(l, &[l, l]) + 1.386).abs() < 1e-3);
        assert!((combined_log(-0.2, &[-0.7, -0.7, -0.7]) - (-0.9)).abs() < 1e-12);
    }

    #[test]
    fn returns_and_advantages() {
        let (r, a) = compute_returns(&[1.0], &[0.0], 0.9, None);
        assert_eq!((r, a), (vec![1.0], vec![1.0]));
        let (r, _) = compute_returns(&[0.0, 1.0], &[0.0, 0.0], 0.5, None);
        assert_eq!(r, vec![0.5, 1.0]);
        let (r, a) = compute_returns(&[1.0], &[0.5], 0.5, Some(2.0));
        assert_eq!(r, vec![2.0]);
        assert_eq!(a, vec![1.5]);
    }

    #[test]
    fn dynamic_lr_bounds() {
        assert!((dynamic_lr(&[0.25; 4], 1e-3) - 1e-3).abs() < 1e-15);
        assert!((dynamic_lr(&[1.0, 0.0, 0.0], 1e-3) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_select_first_action() {
        let mut agent = small_agent(1);
        agent.set_ucb_c(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sel = agent.select(&[10.0, -10.0, -10.0], &[true; 3], None, &mut rng);
        assert_eq!(sel.action, 0);
        assert!(sel.policy[0] > 0.999);
        assert_eq!(agent.space().event_nop(), 2);
    }

    #[test]
    fn first_event_cannot_reference_other_events() {
        let agent = small_agent(1);
        let mask = agent.condition_mask(0, &[]);
        for (a, ok) in agent.space().condition_actions().iter().zip(&mask) {
            match a {
                ConditionAction::Cond { slot: crate::pattern::TargetSlot::Event(_), .. } => assert!(!ok),
                _ => assert!(ok),
            }
        }
        let mask = agent.condition_mask(1, &[0]);
        assert!(!mask[0], "duplicate condition must be masked");
    }

    #[test]
    fn condition_branch_inputs_grow_by_one_hot() {
        let agent = small_agent(2);
        let nc = agent.space().n_condition_actions();
        let ne = agent.space().n_event_actions();
        for (j, head) in agent.condition_heads().iter().enumerate() {
            assert_eq!(head.input_dim(), 16 + ne + j * nc);
        }
        let x = agent.condition_input(&[0.0; 16], 1, &[3]);
        assert_eq!(x.len(), 16 + ne + nc);
    }

    #[test]
    fn all_masked_forces_nop() {
        let mut agent = small_agent(5);
        let h = vec![0.2; 16];
        let mask = vec![false; agent.space().n_condition_actions()];
        let sel = agent.select_condition(&h, 0, 0, &[], &mask, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sel.action, agent.space().condition_nop());
    }

    #[test]
    fn nop_agent_produces_empty_episode() {
        let mut agent = small_agent(4);
        agent.set_ucb_c(0.0);
        let nop = agent.space().event_nop();
        let last = agent.event_head.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().enumerate().for_each(|(i, b)| *b = if i == nop { 100.0 } else { -100.0 });
        let s = space();
        let ep = agent.run_episode(&mut env(&s, 1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(ep.steps.is_empty());
        assert_eq!(ep.terminal_reason, TerminalReason::NopEvent);
        assert!(matches!(agent.update(&mut ep.clone()), Err(AgentError::EmptyEpisode)));
    }

    #[test]
    fn zero_reward_terminates_after_first_step() {
        let mut agent = small_agent(4);
        agent.set_ucb_c(0.0);
        let nop = agent.space().event_nop();
        let last = agent.event_head.layers_mut().last_mut().unwrap();
        last.bias[nop] = -100.0;
        let s = space();
        let ep = agent.run_episode(&mut env(&s, 0.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ep.steps.len(), 1);
        assert_eq!(ep.steps[0].reward, 0.0);
        assert_eq!(ep.terminal_reason, TerminalReason::ZeroReward);
    }

    #[test]
    fn episodes_respect_limits() {
        let s = space();
        let mut agent = small_agent(9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let ep = agent.run_episode(&mut env(&s, 1.0), &mut rng).unwrap();
            assert!(ep.steps.len() <= s.max_len());
            for (t, st) in ep.steps.iter().enumerate() {
                assert!(st.conditions.len() <= s.max_conds());
                assert!(st.event_log_prob <= 0.0 && st.cl <= 0.0 && st.cl.is_finite());
                assert_eq!(ep.pattern.events[t].conditions.len(), st.conditions.iter().filter(|c| c.action != s.condition_nop()).count());
            }
            ep.pattern.validate(s.schema(), Some((s.max_len(), s.max_conds()))).unwrap();
        }
    }

    #[test]
    fn update_changes_parameters_and_reports_finite_losses() {
        let s = space();
        let mut agent = small_agent(12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = agent.trunk.parameters();
        let mut ep = loop {
            let ep = agent.run_episode(&mut env(&s, 1.0), &mut rng).unwrap();
            if !ep.steps.is_empty() {
                break ep;
            }
        };
        let m = agent.update(&mut ep).unwrap();
        assert!(m.actor_loss.is_finite() && m.critic_loss.is_finite());
        assert!(m.lr_used > 0.0 && m.lr_used <= agent.config().lr);
        assert_ne!(before, agent.trunk.parameters());
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = space();
        let mut agent = small_agent(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        agent.run_episode(&mut env(&s, 1.0), &mut rng).unwrap();
        let ck = agent.to_checkpoint();
        let json = serde_json::to_string(&ck).unwrap();
        let back = Agent::from_checkpoint(s.clone(), serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint(), ck);
        let other = ActionSpace::new(s.schema().clone(), 4, 2);
        assert!(Agent::from_checkpoint(other, ck).is_err());
    }
}

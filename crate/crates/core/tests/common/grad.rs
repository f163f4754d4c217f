//! Finite-difference gradient checks shared by the unit-style tests and the
//! acceptance run. Each check returns `(label, worst relative error)`.

use cepmine_core::agent::{compute_returns, Agent, AgentConfig, AgentGradients, EpisodeEnv};
use cepmine_core::nn::{self, Activation, DenseNet};
use cepmine_core::pattern::{ActionSpace, Pattern};
use cepmine_core::rank::{PredictorConfig, RankPredictor};
use cepmine_core::stream::window_embedding_len;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central_difference, relative_error, schema};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Backprop against central differences, over parameters and inputs, for a
/// scalar loss of the output. `loss` returns the value and its output gradient.
pub fn check_net(net: &mut DenseNet, input: &[f64], train: bool, loss: impl Fn(&[f64]) -> (f64, Vec<f64>)) -> f64 {
    let run = |net: &DenseNet, x: &[f64]| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        net.forward(x, train, &mut rng).unwrap()
    };
    let (out, cache) = run(net, input);
    let (_, g_out) = loss(&out);
    let (grads, g_in) = net.backward(&cache, &g_out).unwrap();
    let analytic: Vec<f64> = grads.values().collect();
    let mut worst: f64 = 0.0;
    for i in 0..net.parameter_count() {
        let x0 = *net.parameter_mut(i);
        let fd = central_difference(
            |x| {
                *net.parameter_mut(i) = x;
                loss(&run(net, input).0).0
            },
            x0,
            EPS,
        );
        *net.parameter_mut(i) = x0;
        worst = worst.max(relative_error(analytic[i], fd));
    }
    for j in 0..input.len() {
        let fd = central_difference(
            |x| {
                let mut v = input.to_vec();
                v[j] = x;
                loss(&run(net, &v).0).0
            },
            input[j],
            EPS,
        );
        worst = worst.max(relative_error(g_in[j], fd));
    }
    worst
}

pub fn random_input(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn linear_loss(weights: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
    move |out: &[f64]| (out.iter().zip(&weights).map(|(a, b)| a * b).sum(), weights.clone())
}

fn ce_loss(label: usize) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
    move |logits: &[f64]| {
        let p = nn::softmax(logits);
        let mut g = p.clone();
        g[label] -= 1.0;
        (nn::cross_entropy(&p, label), g)
    }
}

fn space() -> ActionSpace {
    ActionSpace::new(schema(), 3, 2)
}

/// Trunk, event head, critic and every condition head of the agent.
pub fn agent_nets() -> Vec<(String, f64)> {
    let cfg = AgentConfig { trunk_hidden: 12, head_hidden: 8, ..AgentConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let agent = Agent::new(space(), 5.0, cfg, &mut rng);
    let mut nets = vec![
        ("trunk".to_string(), agent.trunk().clone()),
        ("event head".to_string(), agent.event_head().clone()),
        ("critic".to_string(), agent.critic().clone()),
    ];
    for (j, h) in agent.condition_heads().iter().enumerate() {
        nets.push((format!("condition head {j}"), h.clone()));
    }
    nets.into_iter()
        .map(|(name, mut net)| {
            let x = random_input(net.input_dim(), &mut rng);
            let w = random_input(net.output_dim(), &mut rng);
            (name, check_net(&mut net, &x, false, linear_loss(w)))
        })
        .collect()
}

/// Rank-predictor classifier with cross-entropy, with and without dropout active.
pub fn predictor_nets() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for act in [Activation::Relu, Activation::LeakyRelu] {
        let cfg = PredictorConfig { hidden: [10, 8, 6], activation: act, ..PredictorConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rp = RankPredictor::new(space(), 5, vec![1.0, 1.0], cfg, &mut rng);
        let mut net = rp.net().clone();
        let x = random_input(net.input_dim(), &mut rng);
        for train in [false, true] {
            out.push((format!("predictor {act:?} train={train}"), check_net(&mut net, &x, train, ce_loss(2))));
        }
    }
    out
}

/// Plain stacks of every activation kind.
pub fn generic_nets() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    [
        (vec![4, 3], Activation::Linear),
        (vec![5, 7, 2], Activation::Relu),
        (vec![6, 5, 4, 3], Activation::LeakyRelu),
    ]
    .into_iter()
    .map(|(dims, act)| {
        let mut net = DenseNet::mlp(&dims, act, 0.0, &mut rng);
        let x = random_input(dims[0], &mut rng);
        let w = random_input(*dims.last().unwrap(), &mut rng);
        (format!("mlp {dims:?} {act:?}"), check_net(&mut net, &x, false, linear_loss(w)))
    })
    .collect()
}

struct ScriptedEnv {
    embedding: Vec<f64>,
    rewards: Vec<f64>,
    step: usize,
}

impl EpisodeEnv for ScriptedEnv {
    fn window_embedding(&self) -> &[f64] {
        &self.embedding
    }
    fn reward(&mut self, _: &Pattern) -> f64 {
        self.step += 1;
        self.rewards[(self.step - 1) % self.rewards.len()]
    }
}

fn flat(g: &AgentGradients) -> Vec<f64> {
    let mut v: Vec<f64> = g.trunk.values().collect();
    v.extend(g.event_head.values());
    for c in &g.condition_heads {
        v.extend(c.values());
    }
    v.extend(g.critic.values());
    v
}

/// Actor surrogate plus weighted critic loss through every agent parameter,
/// returns and advantages held fixed.
pub fn actor_surrogate() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for critic_coef in [0.0, 0.5] {
        let cfg = AgentConfig { trunk_hidden: 10, head_hidden: 6, critic_coef, ..AgentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut agent = Agent::new(space(), 5.0, cfg, &mut rng);
        let embedding = random_input(window_embedding_len(agent.space().schema()), &mut rng);
        let mut env = ScriptedEnv { embedding, rewards: vec![0.7, 1.3, 2.0], step: 0 };
        let episode = loop {
            let ep = agent.run_episode(&mut env, &mut rng).unwrap();
            if ep.steps.len() >= 2 && ep.steps.iter().any(|s| s.conditions.len() >= 2) {
                break ep;
            }
        };
        let rewards: Vec<f64> = episode.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = episode.steps.iter().map(|s| s.value).collect();
        let (returns, adv) = compute_returns(&rewards, &values, 0.99, None);
        let (_, _, grads) = agent.loss_and_gradients(&episode, &returns, &adv).unwrap();
        let analytic = flat(&grads);
        let mut offset = 0;
        let mut worst: f64 = 0.0;
        let n_nets = agent.nets_mut().len();
        for k in 0..n_nets {
            let count = agent.nets_mut()[k].parameter_count();
            for i in 0..count {
                let x0 = *agent.nets_mut()[k].parameter_mut(i);
                let fd = central_difference(
                    |x| {
                        *agent.nets_mut()[k].parameter_mut(i) = x;
                        agent.total_loss(&episode, &returns, &adv).unwrap()
                    },
                    x0,
                    EPS,
                );
                *agent.nets_mut()[k].parameter_mut(i) = x0;
                worst = worst.max(relative_error(analytic[offset + i], fd));
            }
            offset += count;
        }
        assert_eq!(offset, analytic.len());
        out.push((format!("actor-critic surrogate critic_coef={critic_coef}"), worst));
    }
    out
}

/// Every check above.
pub fn all() -> Vec<(String, f64)> {
    let mut v = agent_nets();
    v.extend(predictor_nets());
    v.extend(generic_nets());
    v.extend(actor_surrogate());
    v
}

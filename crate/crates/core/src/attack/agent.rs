//! The advantage actor-critic agent and its episode loop.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::space::{evaluate_jitters, sample_jitters, JitterSpace};
use crate::error::{invalid, Error, Result};
use crate::index::Index;
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Mlp};
use crate::rng::{derive_indexed, derive_seed, rng_from, Rng};
use crate::vecdata::VectorSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// `actor_loss = 1 - ln(fp_fraction) * delta`
    #[default]
    Paper,
    /// `actor_loss = -ln pi(a|s) * delta`
    Standard,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(LossMode::Paper),
            "standard" => Ok(LossMode::Standard),
            other => Err(invalid(format!("unknown loss mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub reward_constant: f64,
    pub jitter_size: usize,
    pub max_steps: usize,
    pub episodes: usize,
    pub k: usize,
    /// Initial variance of every coordinate of the jitter space.
    pub sigma_init: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Distance relaxation used when labelling jitters.
    pub epsilon: f64,
    /// Exploration noise standard deviation at the first and last step.
    pub explore_start: f64,
    pub explore_end: f64,
    pub hidden: Vec<usize>,
    /// Factor applied to the actor's freshly initialised output layer.
    pub actor_output_scale: f64,
    pub actor_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    /// One agent trained across all attack points (true) or a fresh agent per point.
    pub shared_agent: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            reward_constant: 100.0,
            jitter_size: 1000,
            max_steps: 50,
            episodes: 1,
            k: 10,
            sigma_init: 0.1,
            loss_mode: LossMode::Paper,
            seed: 0,
            epsilon: 0.0,
            explore_start: 0.1,
            explore_end: 0.01,
            hidden: vec![128, 128],
            actor_output_scale: 0.01,
            actor_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
            shared_agent: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.jitter_size == 0 || self.max_steps == 0 || self.episodes == 0 || self.k == 0 {
            return Err(invalid("jitter_size, max_steps, episodes and k must be at least 1"));
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(invalid("sigma_init must be positive"));
        }
        if !(self.explore_start >= 0.0 && self.explore_end >= 0.0) {
            return Err(invalid("exploration noise must be non-negative"));
        }
        if !self.reward_constant.is_finite() || self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(invalid("reward_constant must be finite and epsilon non-negative"));
        }
        Ok(())
    }

    /// Lower clamp on the FP fraction inside logarithms.
    pub fn fp_floor(&self) -> f64 {
        1.0 / (10.0 * self.jitter_size as f64)
    }

    /// Exploration noise at `step` (0-based), annealed linearly.
    pub fn explore_sigma(&self, step: usize) -> f64 {
        if self.max_steps <= 1 {
            return self.explore_start;
        }
        let t = step.min(self.max_steps - 1) as f64 / (self.max_steps - 1) as f64;
        self.explore_start + (self.explore_end - self.explore_start) * t
    }
}

/// `r = 100 ln(max(fp_fraction, floor)) + reward_constant`.
pub fn compute_reward(fp_fraction: f64, config: &AgentConfig) -> f64 {
    100.0 * fp_fraction.max(config.fp_floor()).ln() + config.reward_constant
}

/// The point under attack together with the current jitter space.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackState {
    pub query: Vec<f64>,
    pub space: JitterSpace,
}

impl AttackState {
    pub fn new(query: &[f32], space: JitterSpace) -> Result<Self> {
        if query.len() != space.d() {
            return Err(Error::DimensionMismatch {
                expected: space.d(),
                got: query.len(),
            });
        }
        Ok(AttackState {
            query: query.iter().map(|v| *v as f64).collect(),
            space,
        })
    }

    pub fn d(&self) -> usize {
        self.query.len()
    }

    /// Network input: `[query, mu, ln sigma_diag]`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(3 * self.d());
        f.extend_from_slice(&self.query);
        f.extend_from_slice(&self.space.mu);
        f.extend(self.space.log_variances());
        f
    }
}

/// An actor output after exploration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub offset_mu: Vec<f64>,
    pub offset_logvar: Vec<f64>,
    /// Deterministic actor output (policy mean), length `2d`.
    pub mean: Vec<f64>,
    /// Standard-normal draws used for the noise, length `2d`.
    pub noise: Vec<f64>,
    pub noise_sigma: f64,
    /// `ln pi(a|s)` under `N(mean, noise_sigma^2 I)`; zero without noise.
    pub log_prob: f64,
}

impl Action {
    /// Gradient of `ln pi(a|s)` with respect to the policy mean.
    pub fn log_prob_grad(&self) -> Vec<f64> {
        if self.noise_sigma == 0.0 {
            return vec![0.0; self.noise.len()];
        }
        self.noise.iter().map(|e| e / self.noise_sigma).collect()
    }
}

/// Runs the actor on `state` and perturbs its output with Gaussian noise of
/// standard deviation `noise_sigma` (zero for evaluation).
pub fn act(actor: &Mlp, state: &AttackState, noise_sigma: f64, rng: &mut Rng) -> Result<Action> {
    let d = state.d();
    if actor.in_dim() != 3 * d || actor.out_dim() != 2 * d {
        return Err(Error::DimensionMismatch {
            expected: 3 * d,
            got: actor.in_dim(),
        });
    }
    let mean = actor.forward(&state.features())?;
    let noise: Vec<f64> = if noise_sigma > 0.0 {
        (0..2 * d).map(|_| StandardNormal.sample(rng)).collect()
    } else {
        vec![0.0; 2 * d]
    };
    let taken: Vec<f64> = mean.iter().zip(&noise).map(|(m, e)| m + noise_sigma * e).collect();
    let log_prob = if noise_sigma > 0.0 {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        noise
            .iter()
            .map(|e| -0.5 * e * e - noise_sigma.ln() - half_ln_2pi)
            .sum()
    } else {
        0.0
    };
    let (offset_mu, offset_logvar) = taken.split_at(d);
    Ok(Action {
        offset_mu: offset_mu.to_vec(),
        offset_logvar: offset_logvar.to_vec(),
        mean,
        noise,
        noise_sigma,
        log_prob,
    })
}

/// One transition of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub step: usize,
    pub state: AttackState,
    pub action: Action,
    pub next_space: JitterSpace,
    pub fp_fraction: f64,
    pub reward: f64,
    pub value: f64,
    pub next_value: f64,
    /// `reward + gamma * next_value - value`
    pub advantage: f64,
    /// `value + advantage`
    pub utility: f64,
    pub terminal: bool,
    pub losses: Losses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub delta: f64,
    pub actor: f64,
    pub critic: f64,
    pub total: f64,
}

/// Scalars the loss needs from a transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScalars {
    pub fp_fraction: f64,
    pub reward: f64,
    pub value: f64,
    pub next_value: f64,
    pub log_prob: f64,
}

impl EpisodeStep {
    pub fn scalars(&self) -> StepScalars {
        StepScalars {
            fp_fraction: self.fp_fraction,
            reward: self.reward,
            value: self.value,
            next_value: self.next_value,
            log_prob: self.action.log_prob,
        }
    }
}

/// TD error, critic loss `delta^2`, actor loss per [`LossMode`], and their sum.
pub fn a2c_losses(s: &StepScalars, config: &AgentConfig) -> Result<Losses> {
    let vals = [s.fp_fraction, s.reward, s.value, s.next_value, s.log_prob];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss inputs {vals:?}")));
    }
    if !(0.0..=1.0).contains(&s.fp_fraction) {
        return Err(invalid(format!("fp_fraction {} outside [0, 1]", s.fp_fraction)));
    }
    let delta = s.reward + config.gamma * s.next_value - s.value;
    let critic = delta * delta;
    let actor = match config.loss_mode {
        LossMode::Paper => 1.0 - s.fp_fraction.max(config.fp_floor()).ln() * delta,
        LossMode::Standard => -s.log_prob * delta,
    };
    Ok(Losses {
        delta,
        actor,
        critic,
        total: actor + critic,
    })
}

/// Actor and critic networks with their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl PolicyNets {
    /// Fresh networks for dimension `d`: actor `3d -> hidden -> 2d`, critic
    /// `3d -> hidden -> 1`, relu hidden layers, linear outputs.
    pub fn new(d: usize, config: &AgentConfig, seed: u64) -> Result<Self> {
        let mut sizes = vec![3 * d];
        sizes.extend(&config.hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(2 * d);
        sizes.push(1);
        let mut actor = Mlp::new(
            &actor_sizes,
            Activation::Relu,
            Activation::Linear,
            derive_seed(seed, "actor"),
        )?;
        actor.scale_output_layer(config.actor_output_scale);
        let critic = Mlp::new(
            &sizes,
            Activation::Relu,
            Activation::Linear,
            derive_seed(seed, "critic"),
        )?;
        Ok(PolicyNets {
            actor_opt: AdamState::new(&actor, config.actor_adam),
            critic_opt: AdamState::new(&critic, config.critic_adam),
            actor,
            critic,
        })
    }

    pub fn value(&self, state: &AttackState) -> Result<f64> {
        Ok(self.critic.forward(&state.features())?[0])
    }

    /// Gradient step on both networks for one transition.
    ///
    /// The critic descends `d total / d V(s)` with `V(s')` held fixed. In
    /// paper mode that includes the `ln(fp)` term the actor loss contributes
    /// through `delta`. The actor follows the policy-gradient direction
    /// `-delta * grad ln pi(a|s)` of its Gaussian exploration policy with
    /// `delta` held fixed; the paper-mode actor loss is constant in the
    /// actor parameters, so this is the only signal that reaches them.
    pub fn update(&mut self, step: &EpisodeStep, config: &AgentConfig) -> Result<()> {
        let delta = step.losses.delta;
        let mut dv = -2.0 * delta;
        if config.loss_mode == LossMode::Paper {
            dv += step.fp_fraction.max(config.fp_floor()).ln();
        }
        let (cg, _) = self.critic.backward(&step.state.features(), &[dv])?;
        adam_step(&mut self.critic, &cg, &mut self.critic_opt)?;

        let upstream: Vec<f64> = step
            .action
            .log_prob_grad()
            .iter()
            .map(|g| -delta * g)
            .collect();
        let (ag, _) = self.actor.backward(&step.state.features(), &upstream)?;
        adam_step(&mut self.actor, &ag, &mut self.actor_opt)?;
        Ok(())
    }
}

/// The ordered transitions of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub attack_point: Vec<f32>,
    pub steps: Vec<EpisodeStep>,
}

impl EpisodeTrace {
    pub fn terminal(&self) -> bool {
        self.steps.last().is_some_and(|s| s.terminal)
    }

    pub fn final_space(&self) -> Option<&JitterSpace> {
        self.steps.last().map(|s| &s.next_space)
    }

    pub fn final_fp_fraction(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.fp_fraction)
    }
}

/// Where an episode's randomness comes from.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSeed(pub u64);

/// One attack episode on `attack_point`, training `nets` after every step.
/// Ends early once every sampled jitter is a false positive.
pub fn run_episode(
    attack_point: &[f32],
    base: &VectorSet,
    subject: &Index,
    nets: &mut PolicyNets,
    config: &AgentConfig,
    seed: EpisodeSeed,
) -> Result<EpisodeTrace> {
    config.validate()?;
    let d = base.d();
    if attack_point.len() != d || subject.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: attack_point.len(),
        });
    }
    if nets.actor.in_dim() != 3 * d || nets.critic.in_dim() != 3 * d {
        return Err(invalid(format!("networks are not dimensioned for d={d}")));
    }
    let mut noise_rng = rng_from(derive_seed(seed.0, "explore"));
    let mut state = AttackState::new(
        attack_point,
        JitterSpace::around(attack_point, config.sigma_init)?,
    )?;
    let mut steps = Vec::new();
    for step in 0..config.max_steps {
        let fail = |e: Error| Error::Divergence {
            step,
            msg: e.to_string(),
        };
        let action = act(&nets.actor, &state, config.explore_sigma(step), &mut noise_rng)
            .map_err(fail)?;
        let next_space = state
            .space
            .apply(&action.offset_mu, &action.offset_logvar)
            .map_err(fail)?;
        let jitters = sample_jitters(
            &next_space,
            config.jitter_size,
            derive_indexed(seed.0, "jitters", step as u64),
        )
        .map_err(fail)?;
        let fp_fraction = evaluate_jitters(&jitters, base, subject, config.k, config.epsilon)?;
        let reward = compute_reward(fp_fraction, config);
        let terminal = fp_fraction >= 1.0;
        let next_state = AttackState::new(attack_point, next_space.clone())?;
        let value = nets.value(&state).map_err(fail)?;
        let next_value = if terminal {
            0.0
        } else {
            nets.value(&next_state).map_err(fail)?
        };
        let log_prob = action.log_prob;
        let losses = a2c_losses(
            &StepScalars {
                fp_fraction,
                reward,
                value,
                next_value,
                log_prob,
            },
            config,
        )
        .map_err(fail)?;
        let record = EpisodeStep {
            step,
            state,
            action,
            next_space,
            fp_fraction,
            reward,
            value,
            next_value,
            advantage: losses.delta,
            utility: value + losses.delta,
            terminal,
            losses,
        };
        nets.update(&record, config).map_err(fail)?;
        if !nets.actor.is_finite() || !nets.critic.is_finite() {
            return Err(Error::Divergence {
                step,
                msg: "non-finite network parameters".into(),
            });
        }
        steps.push(record);
        if terminal {
            break;
        }
        state = next_state;
    }
    Ok(EpisodeTrace {
        attack_point: attack_point.to_vec(),
        steps,
    })
}

//! Multi-point attack experiments and their JSON records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::agent::{run_episode, AgentConfig, EpisodeSeed, EpisodeTrace, PolicyNets};
use crate::error::{invalid, Result};
use crate::index::Index;
use crate::rng::derive_indexed;
use crate::vecdata::VectorSet;

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub point: usize,
    pub episode: usize,
    pub step: usize,
    pub fp_fraction: f64,
    pub reward: f64,
    pub value: f64,
    pub next_value: f64,
    pub advantage: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub total_loss: f64,
    pub mu_distance: f64,
    pub mean_variance: f64,
    pub terminal: bool,
}

impl StepRecord {
    pub fn from_trace(trace: &EpisodeTrace, k: usize, point: usize, episode: usize) -> Vec<Self> {
        trace
            .steps
            .iter()
            .map(|s| StepRecord {
                k,
                point,
                episode,
                step: s.step,
                fp_fraction: s.fp_fraction,
                reward: s.reward,
                value: s.value,
                next_value: s.next_value,
                advantage: s.advantage,
                actor_loss: s.losses.actor,
                critic_loss: s.losses.critic,
                total_loss: s.losses.total,
                mu_distance: s.next_space.mu_distance(&trace.attack_point),
                mean_variance: s.next_space.mean_variance(),
                terminal: s.terminal,
            })
            .collect()
    }
}

/// Final state of the last episode on one attack point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub point: usize,
    pub steps: usize,
    pub first_fp_fraction: f64,
    pub final_fp_fraction: f64,
    pub fully_adversarial: bool,
    pub mu_distance: f64,
    pub mean_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    /// Mean number of false-positive jitters in the final cloud.
    pub mean_fp_count: f64,
    pub mean_fp_fraction: f64,
    pub mean_mu_distance: f64,
    pub mean_variance: f64,
    pub fully_adversarial: usize,
    pub points: Vec<PointOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub subject: String,
    pub subject_exact: bool,
    pub jitter_size: usize,
    pub per_k: Vec<KSummary>,
    /// Per attack point: the smallest tested `k` whose attack made every jitter
    /// a false positive, if any.
    pub min_k_fully_adversarial: Vec<Option<usize>>,
}

/// Everything an attack experiment produced.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub report: RobustnessReport,
    pub records: Vec<StepRecord>,
}

impl AttackRun {
    /// Writes the step records as JSON lines.
    pub fn write_trace<W: Write>(&self, w: &mut W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Attacks every point in `attack_points` for every `k` in `k_values` and
/// aggregates the final jitter spaces.
pub fn robustness_report(
    attack_points: &VectorSet,
    base: &VectorSet,
    subject: &Index,
    config: &AgentConfig,
    k_values: &[usize],
) -> Result<AttackRun> {
    config.validate()?;
    if k_values.is_empty() {
        return Err(invalid("k_values must not be empty"));
    }
    let d = base.d();
    let mut per_k = Vec::with_capacity(k_values.len());
    let mut records = Vec::new();
    let mut min_k: Vec<Option<usize>> = vec![None; attack_points.n()];

    for &k in k_values {
        let cfg = AgentConfig { k, ..config.clone() };
        let agent_seed = derive_indexed(config.seed, "agent", k as u64);
        let mut shared = PolicyNets::new(d, &cfg, agent_seed)?;
        let mut points = Vec::with_capacity(attack_points.n());
        for p in 0..attack_points.n() {
            let mut own;
            let nets = if cfg.shared_agent {
                &mut shared
            } else {
                own = PolicyNets::new(d, &cfg, derive_indexed(agent_seed, "point", p as u64))?;
                &mut own
            };
            let point = attack_points.row(p);
            let mut last = None;
            for e in 0..cfg.episodes {
                let seed = derive_indexed(
                    derive_indexed(config.seed, "episode", k as u64),
                    &format!("point{p}"),
                    e as u64,
                );
                let trace = run_episode(point, base, subject, nets, &cfg, EpisodeSeed(seed))?;
                records.extend(StepRecord::from_trace(&trace, k, p, e));
                last = Some(trace);
            }
            let trace = last.expect("episodes >= 1");
            let space = trace.final_space().expect("max_steps >= 1");
            let outcome = PointOutcome {
                point: p,
                steps: trace.steps.len(),
                first_fp_fraction: trace.steps[0].fp_fraction,
                final_fp_fraction: trace.final_fp_fraction(),
                fully_adversarial: trace.terminal(),
                mu_distance: space.mu_distance(point),
                mean_variance: space.mean_variance(),
            };
            if outcome.fully_adversarial && min_k[p].is_none_or(|m| k < m) {
                min_k[p] = Some(k);
            }
            points.push(outcome);
        }
        let m = points.len() as f64;
        let mean = |f: fn(&PointOutcome) -> f64| points.iter().map(f).sum::<f64>() / m;
        per_k.push(KSummary {
            k,
            mean_fp_count: mean(|o| o.final_fp_fraction) * cfg.jitter_size as f64,
            mean_fp_fraction: mean(|o| o.final_fp_fraction),
            mean_mu_distance: mean(|o| o.mu_distance),
            mean_variance: mean(|o| o.mean_variance),
            fully_adversarial: points.iter().filter(|o| o.fully_adversarial).count(),
            points,
        });
    }
    Ok(AttackRun {
        report: RobustnessReport {
            subject: subject.spec().label(),
            subject_exact: subject.is_exact(),
            jitter_size: config.jitter_size,
            per_k,
            min_k_fully_adversarial: min_k,
        },
        records,
    })
}

//! Actor-critic search for jitter spaces that make an approximate index
//! return wrong neighbors.
//!
//! An episode starts from a small isotropic Gaussian around the attack
//! point. Each step the actor proposes offsets to the mean and log-variances,
//! 1000 jitters (by default) are sampled from the shifted space, and the
//! fraction whose approximate top-k differs from the exact top-k drives the
//! reward `100 ln(fp_fraction) + C`. The episode ends when every jitter is a
//! false positive.

mod agent;
mod report;
mod space;

pub use agent::{
    a2c_losses, act, compute_reward, run_episode, Action, AgentConfig, AttackState, EpisodeSeed,
    EpisodeStep, EpisodeTrace, LossMode, Losses, PolicyNets, StepScalars,
};
pub use report::{robustness_report, AttackRun, KSummary, PointOutcome, RobustnessReport, StepRecord};
pub use space::{evaluate_jitters, sample_jitters, JitterSpace, LOGVAR_MAX, LOGVAR_MIN};

//! End-to-end tag recovery: try every tag value and pick the guess
//! whose probe reads fastest.
//!
//! For each candidate tag a fresh harness (fresh simulator, memory,
//! cache, random stream) runs a batch of trials and records the mean
//! probe reading. A correct guess keeps the probe line cached (low
//! reading); wrong guesses leave it periodically or always uncached.
//! The verdict is the argmin of the means, rejected as ambiguous when
//! the runner-up is too close relative to the overall spread.

use super::harness::{HarnessError, SweepConfig, TrialHarness};
use super::Gadget;
use crate::rng;
use crate::speccore::CoreProfile;
use crate::tagmem::Timer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of representable tag values.
pub const TAG_SPACE: usize = 16;

/// Knobs for a recovery attempt.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LeakConfig {
    /// Trials averaged per candidate tag.
    pub trials_per_guess: usize,
    pub timer: Timer,
    pub p_evict: f64,
    pub noise_sigma: f64,
    pub train_reps: u32,
}

impl Default for LeakConfig {
    fn default() -> Self {
        LeakConfig {
            trials_per_guess: 256,
            timer: Timer::Physical,
            p_evict: 1.0,
            noise_sigma: 0.0,
            train_reps: 3,
        }
    }
}

/// Outcome of a recovery attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakResult {
    /// Tag whose mean probe reading was lowest.
    pub best_tag: u8,
    /// Mean probe reading per candidate tag.
    pub means: Vec<f64>,
    /// Gap between the best and second-best mean.
    pub margin: f64,
    /// Gap between the best and worst mean.
    pub spread: f64,
    pub trials_per_guess: usize,
}

#[derive(Debug, Error)]
pub enum LeakError {
    /// No guess stood out: the distribution of means was flat, or the
    /// runner-up was within half the spread of the winner.
    #[error("no tag stood out (margin {margin:.3}, spread {spread:.3})")]
    AmbiguousLeak { margin: f64, spread: f64 },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Attempt to recover the secret tag behind `gadget`'s guess pointer.
pub fn leak_tag(
    gadget: &Gadget,
    profile: &CoreProfile,
    cfg: &LeakConfig,
    seed: u64,
) -> Result<LeakResult, LeakError> {
    let sweep_cfg = SweepConfig {
        trials: cfg.trials_per_guess,
        seed,
        timer: cfg.timer,
        p_evict: cfg.p_evict,
        noise_sigma: cfg.noise_sigma,
        train_reps: cfg.train_reps,
    };
    let means: Result<Vec<f64>, LeakError> = (0..TAG_SPACE as u64)
        .into_par_iter()
        .map(|guess| {
            let mut harness = TrialHarness::with_config(gadget, profile, &sweep_cfg);
            let mut rng = rng::stream(seed, guess);
            let mut total = 0.0;
            for _ in 0..cfg.trials_per_guess {
                total += harness.run_trial(gadget, guess as u8, &mut rng)?.reading;
            }
            Ok(total / cfg.trials_per_guess.max(1) as f64)
        })
        .collect();
    let means = means?;

    let mut order: Vec<usize> = (0..TAG_SPACE).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    let best = order[0];
    let margin = means[order[1]] - means[best];
    let spread = means[order[TAG_SPACE - 1]] - means[best];
    if spread < 1e-9 || margin < 0.5 * spread {
        return Err(LeakError::AmbiguousLeak { margin, spread });
    }
    Ok(LeakResult {
        best_tag: best as u8,
        means,
        margin,
        spread,
        trials_per_guess: cfg.trials_per_guess,
    })
}

//! Trial protocol, hit-rate sweeps, and the prefetch/data ablation.
//!
//! A *trial* is the full probe cycle: train the program architecturally
//! (condition non-zero, correctly tagged guess pointer), flush the probe
//! line, evict the condition line, then run once with the condition zero
//! and the guessed tag installed, and finally time one access to the
//! probe line. Speculation confidence lives in the simulator and persists
//! across trials, which is what makes periodic depletion observable.
//!
//! Sweeps run many (parameter, series) points in parallel; each point
//! draws from its own deterministic random stream so results are
//! reproducible regardless of thread scheduling.

use super::{
    build_v1, build_v2, Gadget, TemplateBindings, TestKind, TestTarget, V1Params, V2Params,
    FillerOp,
};
use crate::isa::NUM_REGS;
use crate::rng;
use crate::speccore::{CoreProfile, SimError, Simulator, RunEnvironment};
use crate::tagmem::{timed_access, MemError, TaggedMemory, TaggedPointer, Timer, LINE_SIZE};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Secret tag installed on the guessed granule in sweeps.
pub const SWEEP_SECRET_TAG: u8 = 3;
/// The deliberately wrong guess used for mismatch series.
pub const SWEEP_WRONG_TAG: u8 = 9;

/// Shared knobs for trials and sweeps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Trials per (point, series).
    pub trials: usize,
    pub seed: u64,
    pub timer: Timer,
    /// Probability the condition line is evicted before a measured run.
    pub p_evict: f64,
    /// Gaussian noise (cycles) added to timed probes.
    pub noise_sigma: f64,
    /// Training repetitions per trial.
    pub train_reps: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            trials: 1000,
            seed: 0,
            timer: Timer::Physical,
            p_evict: 1.0,
            noise_sigma: 0.0,
            train_reps: 3,
        }
    }
}

/// One measured rate in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Swept parameter value (gap, slide, or window).
    pub axis: u64,
    pub series: String,
    pub rate: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("training run raised an architectural fault")]
    TrainingFault,
    #[error("measured run raised an architectural fault")]
    MeasureFault,
    #[error("probe access failed: {0}")]
    Probe(#[from] MemError),
}

/// Result of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    /// Probe classified as a cache hit.
    pub hit: bool,
    /// Timer reading for the probe access.
    pub reading: f64,
}

/// Persistent machine state for a sequence of trials: one simulator (so
/// speculation confidence carries across trials) plus the memory image
/// and cache the gadget's bindings describe.
pub struct TrialHarness {
    pub sim: Simulator,
    pub env: RunEnvironment,
    pub timer: Timer,
    pub p_evict: f64,
    pub noise_sigma: f64,
    pub train_reps: u32,
}

impl TrialHarness {
    pub fn new(gadget: &Gadget, profile: &CoreProfile) -> Self {
        let mut memory = TaggedMemory::new();
        for r in &gadget.bindings.regions {
            memory.map_region(r.base, r.len, r.tag);
        }
        for &(addr, value) in &gadget.bindings.init_mem {
            memory.store_u64(addr, value);
        }
        let mut sim = Simulator::new(profile.clone());
        sim.record_events = false;
        TrialHarness {
            sim,
            env: RunEnvironment::new(memory),
            timer: Timer::Physical,
            p_evict: 1.0,
            noise_sigma: 0.0,
            train_reps: 3,
        }
    }

    pub fn with_config(gadget: &Gadget, profile: &CoreProfile, cfg: &SweepConfig) -> Self {
        let mut h = Self::new(gadget, profile);
        h.timer = cfg.timer;
        h.p_evict = cfg.p_evict;
        h.noise_sigma = cfg.noise_sigma;
        h.train_reps = cfg.train_reps;
        h
    }

    fn install_regs(&mut self, bindings: &TemplateBindings, guess_tag: u8) {
        self.env.regs = [0; NUM_REGS];
        for &(reg, value) in &bindings.init_regs {
            self.env.regs[reg.index()] = value;
        }
        self.env.regs[bindings.guess_reg.index()] =
            TaggedPointer::new(bindings.guess_addr, guess_tag).raw();
    }

    fn install_mem(&mut self, bindings: &TemplateBindings) {
        for &(addr, value) in &bindings.init_mem {
            self.env.memory.store_u64(addr, value);
        }
    }

    /// One trial: train and measure the same gadget.
    pub fn run_trial(
        &mut self,
        gadget: &Gadget,
        guess_tag: u8,
        rng: &mut ChaCha12Rng,
    ) -> Result<TrialOutcome, HarnessError> {
        self.run_trial_pair(gadget, gadget, guess_tag, rng)
    }

    /// One trial with distinct training and measurement gadgets (they
    /// must share the condition/guess layout; only bindings and test
    /// targets may differ). Used by the divergent-training ablation.
    pub fn run_trial_pair(
        &mut self,
        train: &Gadget,
        measure: &Gadget,
        guess_tag: u8,
        rng: &mut ChaCha12Rng,
    ) -> Result<TrialOutcome, HarnessError> {
        // Training: condition non-zero (branch falls through the body),
        // guess pointer correctly tagged.
        self.install_mem(&train.bindings);
        self.env.memory.store_u64(train.bindings.cond_addr, 1);
        self.install_regs(&train.bindings, train.secret_tag);
        let mut training = self.sim.train(&train.program, &mut self.env, self.train_reps)?;
        if !training.arch_faults.is_empty() {
            return Err(HarnessError::TrainingFault);
        }

        // Reset the probed footprint and (probabilistically) the
        // condition line.
        self.env.cache.flush_line(measure.bindings.probe_addr / LINE_SIZE);
        self.env.cache.evict(measure.bindings.cond_addr / LINE_SIZE, self.p_evict, rng);

        // Measured run: condition zero, guessed tag installed.
        self.install_mem(&measure.bindings);
        self.env.memory.store_u64(measure.bindings.cond_addr, 0);
        self.install_regs(&measure.bindings, guess_tag);
        let trace = self.sim.run(
            &measure.program,
            &mut self.env,
            &mut training.predictor,
            &training.prefetcher,
        )?;
        if !trace.arch_faults.is_empty() {
            return Err(HarnessError::MeasureFault);
        }

        let probe = TaggedPointer::new(measure.bindings.probe_addr, measure.bindings.probe_tag);
        let reading = timed_access(
            &self.env.memory,
            &mut self.env.cache,
            probe,
            self.timer,
            self.noise_sigma,
            rng,
        )?;
        Ok(TrialOutcome { hit: self.timer.is_hit(reading), reading })
    }
}

/// Hit rate of one series: `trials` trials of `measure` (trained on
/// `train`) at a fixed guess, on a fresh harness and stream.
fn series_rate(
    train: &Gadget,
    measure: &Gadget,
    profile: &CoreProfile,
    guess_tag: u8,
    cfg: &SweepConfig,
    stream: u64,
) -> Result<f64, HarnessError> {
    let mut harness = TrialHarness::with_config(measure, profile, cfg);
    let mut rng = rng::stream(cfg.seed, stream);
    let mut hits = 0usize;
    for _ in 0..cfg.trials {
        if harness.run_trial_pair(train, measure, guess_tag, &mut rng)?.hit {
            hits += 1;
        }
    }
    Ok(hits as f64 / cfg.trials.max(1) as f64)
}

/// Run match and mismatch series for one point and emit two rows.
fn match_mismatch_rows(
    axis: u64,
    label: &str,
    train: &Gadget,
    measure: &Gadget,
    profile: &CoreProfile,
    cfg: &SweepConfig,
    stream_base: u64,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let matched =
        series_rate(train, measure, profile, measure.secret_tag, cfg, stream_base)?;
    let mismatched =
        series_rate(train, measure, profile, SWEEP_WRONG_TAG, cfg, stream_base + 1)?;
    Ok(vec![
        SweepPoint {
            axis,
            series: format!("{label}_match"),
            rate: matched,
            trials: cfg.trials,
            seed: cfg.seed,
        },
        SweepPoint {
            axis,
            series: format!("{label}_mismatch"),
            rate: mismatched,
            trials: cfg.trials,
            seed: cfg.seed,
        },
    ])
}

/// Check-length × filler-gap sweep of the shrinkage family. Axis: gap.
/// Series: `len{L}_{ld|st}_{match|mismatch}`.
pub fn sweep_v1_len_gap(
    profile: &CoreProfile,
    cfg: &SweepConfig,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let lens = [1usize, 2, 4, 8];
    let kinds = [TestKind::IndepLd, TestKind::IndepSt];
    let mut specs = Vec::new();
    for &len in &lens {
        for &kind in &kinds {
            for gap in 0u64..=40 {
                specs.push((len, kind, gap));
            }
        }
    }
    let rows: Result<Vec<Vec<SweepPoint>>, HarnessError> = specs
        .par_iter()
        .enumerate()
        .map(|(i, &(len, kind, gap))| {
            let params = V1Params {
                len_check: len,
                len_gap: gap as usize,
                test_kind: kind,
                ..V1Params::default()
            };
            let gadget = build_v1(params, SWEEP_SECRET_TAG).expect("valid sweep params");
            let label = format!("len{len}_{}", kind.label());
            match_mismatch_rows(gap, &label, &gadget, &gadget, profile, cfg, 2 * i as u64)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Store/load slide × gap sweep of the forward-gating family. Axis:
/// slide. Series: `gap{G}_{match|mismatch}`.
pub fn sweep_v2_slide_gap(
    profile: &CoreProfile,
    cfg: &SweepConfig,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let mut specs = Vec::new();
    for gap in 0usize..=4 {
        for slide in 0u64..=39 {
            specs.push((gap, slide));
        }
    }
    let rows: Result<Vec<Vec<SweepPoint>>, HarnessError> = specs
        .par_iter()
        .enumerate()
        .map(|(i, &(gap, slide))| {
            let params = V2Params { slide: slide as usize, gap, ..V2Params::default() };
            let gadget = build_v2(params, SWEEP_SECRET_TAG).expect("valid sweep params");
            let label = format!("gap{gap}");
            match_mismatch_rows(slide, &label, &gadget, &gadget, profile, cfg, 2 * i as u64)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Branch-to-check distance sweep of the shrinkage family. Axis: window
/// (fillers between branch and check block). Series:
/// `{ld|st}_{filler}_{match|mismatch}`.
pub fn sweep_v1_window(
    profile: &CoreProfile,
    cfg: &SweepConfig,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let kinds = [TestKind::IndepLd, TestKind::IndepSt];
    let fillers = [FillerOp::OrrDep, FillerOp::OrrIndep, FillerOp::Nop];
    let mut specs = Vec::new();
    for &kind in &kinds {
        for &filler in &fillers {
            for window in 0u64..=30 {
                specs.push((kind, filler, window));
            }
        }
    }
    let rows: Result<Vec<Vec<SweepPoint>>, HarnessError> = specs
        .par_iter()
        .enumerate()
        .map(|(i, &(kind, filler, window))| {
            let params = V1Params {
                len_check: 2,
                len_gap: 12,
                window: window as usize,
                window_filler: filler,
                test_kind: kind,
                ..V1Params::default()
            };
            let gadget = build_v1(params, SWEEP_SECRET_TAG).expect("valid sweep params");
            let label = format!("{}_{}", kind.label(), filler.label());
            match_mismatch_rows(window, &label, &gadget, &gadget, profile, cfg, 2 * i as u64)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Classification of a hit-rate series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CacheClass {
    Cached,
    Uncached,
    Periodic,
}

impl CacheClass {
    pub fn of_rate(rate: f64) -> Self {
        if rate >= 0.98 {
            CacheClass::Cached
        } else if rate <= 0.02 {
            CacheClass::Uncached
        } else {
            CacheClass::Periodic
        }
    }
}

/// Ablation configurations: which leak channel survives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationConfig {
    /// Both channels: speculative test fill and matching prefetch replay.
    Baseline,
    /// Barrier before the test access: only the prefetch channel fires.
    NoSe,
    /// Barrier plus divergent training: neither channel reaches the
    /// probed line.
    NoSeNoDp,
    /// Divergent training only: replay diverges, the speculative fill
    /// still lands.
    NoDp,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] =
        [AblationConfig::Baseline, AblationConfig::NoSe, AblationConfig::NoSeNoDp, AblationConfig::NoDp];

    pub fn label(self) -> &'static str {
        match self {
            AblationConfig::Baseline => "BASELINE",
            AblationConfig::NoSe => "NO_SE",
            AblationConfig::NoSeNoDp => "NO_SE_NO_DP",
            AblationConfig::NoDp => "NO_DP",
        }
    }

    fn barrier(self) -> bool {
        matches!(self, AblationConfig::NoSe | AblationConfig::NoSeNoDp)
    }

    fn divergent_training(self) -> bool {
        matches!(self, AblationConfig::NoDp | AblationConfig::NoSeNoDp)
    }
}

/// One ablation result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub match_rate: f64,
    pub mismatch_rate: f64,
    pub match_class: CacheClass,
    pub mismatch_class: CacheClass,
    pub trials: usize,
    pub seed: u64,
}

/// Channel ablation on the shrinkage gadget: disable the speculative fill
/// (barrier before test), the matching replay (train on the alternate
/// test line), or both, and classify what the probe still sees.
pub fn ablation(
    profile: &CoreProfile,
    cfg: &SweepConfig,
) -> Result<Vec<AblationRow>, HarnessError> {
    let rows: Result<Vec<AblationRow>, HarnessError> = AblationConfig::ALL
        .par_iter()
        .enumerate()
        .map(|(i, &config)| {
            let measure_params = V1Params {
                len_check: 2,
                len_gap: 12,
                test_kind: TestKind::IndepLd,
                sb_before_test: config.barrier(),
                ..V1Params::default()
            };
            let train_params = V1Params {
                test_target: if config.divergent_training() {
                    TestTarget::Alternate
                } else {
                    TestTarget::Primary
                },
                ..measure_params
            };
            let measure = build_v1(measure_params, SWEEP_SECRET_TAG).expect("valid params");
            let train = build_v1(train_params, SWEEP_SECRET_TAG).expect("valid params");
            let match_rate =
                series_rate(&train, &measure, profile, SWEEP_SECRET_TAG, cfg, 2 * i as u64)?;
            let mismatch_rate =
                series_rate(&train, &measure, profile, SWEEP_WRONG_TAG, cfg, 2 * i as u64 + 1)?;
            Ok(AblationRow {
                config,
                match_rate,
                mismatch_rate,
                match_class: CacheClass::of_rate(match_rate),
                mismatch_class: CacheClass::of_rate(mismatch_rate),
                trials: cfg.trials,
                seed: cfg.seed,
            })
        })
        .collect();
    rows
}

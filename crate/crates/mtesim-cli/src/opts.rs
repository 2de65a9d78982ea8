//! Command-line surface and configuration merging.
//!
//! Every run takes its knobs from three layers: built-in defaults, an
//! optional TOML config file, and flags; flags win over the file, the
//! file wins over defaults. Unknown config keys are rejected. A seed is
//! mandatory (flag or file) so every artifact is reproducible.

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtesim_core::speccore::{CoreProfile, MteMode};
use mtesim_core::tagmem::Timer;
use serde::Deserialize;
use std::fs;
use std::path::PathBuf;

use crate::run::CliError;

#[derive(Parser)]
#[command(
    name = "mtesim",
    version,
    about = "Experiment runner for a speculative tag-check leakage model",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run a named hit-rate sweep and emit its curve points.
    Sweep(SweepArgs),
    /// Run the four-config channel ablation table (experiment id fig4).
    Ablation(AblationArgs),
    /// Run a mutation campaign against one core profile.
    Fuzz(FuzzArgs),
    /// Run allocator bypass loops or the end-to-end tag leak.
    Attack(AttackArgs),
    /// Apply a mitigation to a gadget and report before/after rates.
    Mitigate(MitigateArgs),
    /// Describe the named experiments and which subcommand runs them.
    ListExperiments,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Which sweep to run.
    #[arg(long, value_enum)]
    pub experiment: ExperimentId,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct FuzzArgs {
    /// Mutation iterations in the campaign.
    #[arg(long, default_value_t = 50_000)]
    pub iterations: usize,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct AttackArgs {
    /// Attack loop to run.
    #[arg(long, value_enum)]
    pub attack: AttackKindArg,
    /// Allocator tagging policy (uaf/overflow only).
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Independent attack runs to aggregate over.
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    /// How the attacker observes probe outcomes.
    #[arg(long, value_enum, default_value_t = OracleArg::Perfect)]
    pub oracle: OracleArg,
    /// Hit-detection probability of the noisy oracle.
    #[arg(long, default_value_t = 0.95)]
    pub accuracy: f64,
    /// Reallocation/respawn budget per run.
    #[arg(long, default_value_t = 256)]
    pub max_retries: usize,
    /// Gadget family for the leak attack.
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Timed probes per tag guess in the leak attack.
    #[arg(long, default_value_t = 256)]
    pub trials_per_guess: usize,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct MitigateArgs {
    /// Gadget family to build and mitigate.
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Countermeasure to apply.
    #[arg(long, value_enum)]
    pub mitigation: MitigationArg,
    /// Padding amount for pad-window (default 30) / pad-stlf-gap (default 4).
    #[arg(long)]
    pub pad: Option<usize>,
    /// Test access flavour of the shrinkage gadget.
    #[arg(long, value_enum, default_value_t = TestKindArg::Ld)]
    pub test_kind: TestKindArg,
    /// Tag of the guessed granule.
    #[arg(long, default_value_t = 3)]
    pub secret: u8,
    #[command(flatten)]
    pub common: CommonOpts,
}

/// Knobs shared by every experiment; all optional here so a config file
/// can supply them.
#[derive(Args)]
pub struct CommonOpts {
    /// Core profile to simulate.
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Trials per measured point.
    #[arg(long)]
    pub trials: Option<usize>,
    /// RNG seed; required (flag or config file) so runs are reproducible.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tag-check fault reporting mode.
    #[arg(long, value_enum)]
    pub mte_mode: Option<MteModeArg>,
    /// Probe timer: exact cycle counts or a coarse shared counter.
    #[arg(long, value_enum)]
    pub timer: Option<TimerArg>,
    /// Cycles per coarse-timer tick (virtual timer only).
    #[arg(long)]
    pub timer_ratio: Option<u64>,
    /// Probability that a pre-trial probe flush actually evicts.
    #[arg(long)]
    pub p_evict: Option<f64>,
    /// Std-dev of gaussian noise added to timed probes, in cycles.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Write the artifact to this file instead of stdout. CSV artifacts
    /// get a machine-readable sidecar at <out>.summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Artifact format.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// TOML config file supplying any of these knobs; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Core feature to switch off (repeatable).
    #[arg(long, value_enum)]
    pub disable: Vec<DisableArg>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileArg {
    X3like,
    A715like,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MteModeArg {
    Sync,
    Async,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimerArg {
    Physical,
    Virtual,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisableArg {
    #[value(alias = "v1_shrink")]
    V1Shrink,
    #[value(alias = "stlf_gating")]
    StlfGating,
    Prefetcher,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum ExperimentId {
    /// Shrinkage hit rate vs check/test gap, chain lengths 1/2/4/8.
    Fig3,
    /// Forwarding-gate leak grid over slide 0-39 x gap 0-4.
    Fig6,
    /// Charge-window horizon over 0-30 post-branch fillers.
    Fig8,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum AttackKindArg {
    Uaf,
    Overflow,
    Leak,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum PolicyArg {
    Scudo,
    ScudoOddEven,
    PartitionAlloc,
    Kernel,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum OracleArg {
    Perfect,
    Noisy,
    Simulated,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum FamilyArg {
    V1,
    V2,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum MitigationArg {
    SbBeforeTest,
    SbBeforeCheck,
    PadWindow,
    PadStlfGap,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum TestKindArg {
    Ld,
    St,
}

/// Config-file counterpart of [`CommonOpts`]; unknown keys are errors.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    profile: Option<ProfileArg>,
    trials: Option<usize>,
    seed: Option<u64>,
    mte_mode: Option<MteModeArg>,
    timer: Option<TimerArg>,
    timer_ratio: Option<u64>,
    p_evict: Option<f64>,
    noise_sigma: Option<f64>,
    out: Option<PathBuf>,
    format: Option<FormatArg>,
    disable: Option<Vec<DisableArg>>,
}

/// Fully merged run settings.
pub struct Settings {
    pub profile: Option<ProfileArg>,
    pub trials: Option<usize>,
    pub seed: u64,
    pub mte_mode: Option<MteModeArg>,
    pub timer: Timer,
    pub p_evict: f64,
    pub noise_sigma: f64,
    pub out: Option<PathBuf>,
    pub format: Option<FormatArg>,
    pub disable: Vec<DisableArg>,
}

impl CommonOpts {
    /// Merge defaults, config file, and flags (flags win) and validate.
    pub fn resolve(&self) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let seed = self.seed.or(file.seed).ok_or_else(|| {
            CliError::Config("a seed is required: pass --seed or set `seed` in the config file".into())
        })?;

        let p_evict = self.p_evict.or(file.p_evict).unwrap_or(1.0);
        if !(0.0..=1.0).contains(&p_evict) {
            return Err(CliError::Config(format!("p_evict {p_evict} outside [0, 1]")));
        }
        let noise_sigma = self.noise_sigma.or(file.noise_sigma).unwrap_or(0.0);
        if noise_sigma < 0.0 {
            return Err(CliError::Config(format!("noise_sigma {noise_sigma} is negative")));
        }
        let ratio = self.timer_ratio.or(file.timer_ratio).unwrap_or(8);
        if ratio == 0 {
            return Err(CliError::Config("timer_ratio must be at least 1".into()));
        }
        let timer = match self.timer.or(file.timer).unwrap_or(TimerArg::Physical) {
            TimerArg::Physical => Timer::Physical,
            TimerArg::Virtual => Timer::Virtual { ratio },
        };
        let disable = if self.disable.is_empty() {
            file.disable.unwrap_or_default()
        } else {
            self.disable.clone()
        };

        Ok(Settings {
            profile: self.profile.or(file.profile),
            trials: self.trials.or(file.trials),
            seed,
            mte_mode: self.mte_mode.or(file.mte_mode),
            timer,
            p_evict,
            noise_sigma,
            out: self.out.clone().or(file.out),
            format: self.format.or(file.format),
            disable,
        })
    }
}

impl Settings {
    /// Build the core profile: the experiment's default (or the explicit
    /// choice), with mode overrides and feature kill-switches applied.
    pub fn profile(&self, default: ProfileArg) -> CoreProfile {
        let mut profile = match self.profile.unwrap_or(default) {
            ProfileArg::X3like => CoreProfile::x3like(),
            ProfileArg::A715like => CoreProfile::a715like(),
        };
        if let Some(mode) = self.mte_mode {
            profile.mte_mode = match mode {
                MteModeArg::Sync => MteMode::Sync,
                MteModeArg::Async => MteMode::Async,
            };
        }
        for feature in &self.disable {
            match feature {
                DisableArg::V1Shrink => profile.v1_shrink_enabled = false,
                DisableArg::StlfGating => profile.stlf_gating_enabled = false,
                DisableArg::Prefetcher => profile.prefetcher_enabled = false,
            }
        }
        profile
    }
}

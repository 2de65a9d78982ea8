//! Command implementations: each builds its configs from the merged
//! settings, runs the corresponding model entry point, and emits the
//! artifact to stdout or `--out`. CSV artifacts written to a file get a
//! JSON sidecar at `<out>.summary.json`; structured reports (fuzz
//! findings, leak aggregates, impossibility verdicts) are JSON-only.

use mtesim_core::attacksim::{
    overflow_campaign, uaf_campaign, AttackConfig, AttackError, OracleModel, TagPolicy,
};
use mtesim_core::fuzzer::{run_campaign, CampaignConfig};
use mtesim_core::gadgets::{
    ablation, apply_mitigation, build_v1, build_v2, leak_tag, sweep_v1_len_gap, sweep_v1_window,
    sweep_v2_slide_gap, Gadget, LeakConfig, LeakError, Mitigation, SweepConfig, TestKind,
    TrialHarness, V1Params, V2Params,
};
use mtesim_core::report::{
    ablation_summary, attack_summary, sweep_summary, write_ablation_csv, write_attack_csv,
    write_json, write_sweep_csv, CSV_HEADER,
};
use mtesim_core::rng;
use mtesim_core::speccore::{CoreProfile, MteMode};
use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::opts::{
    AblationArgs, AttackArgs, AttackKindArg, Cli, Command, ExperimentId, FamilyArg, FormatArg,
    FuzzArgs, MitigateArgs, MitigationArg, OracleArg, PolicyArg, ProfileArg, Settings, SweepArgs,
    TestKindArg,
};

/// Errors split by exit code: 2 for bad invocations, 3 for failures
/// inside a simulation or while writing artifacts.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Simulation(_) => 3,
        }
    }
}

fn sim_err(e: impl std::fmt::Display) -> CliError {
    CliError::Simulation(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablation(args) => cmd_ablation(args),
        Command::Fuzz(args) => cmd_fuzz(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Mitigate(args) => cmd_mitigate(args),
        Command::ListExperiments => cmd_list_experiments(),
    }
}

fn sweep_config(settings: &Settings, default_trials: usize) -> SweepConfig {
    SweepConfig {
        trials: settings.trials.unwrap_or(default_trials),
        seed: settings.seed,
        timer: settings.timer,
        p_evict: settings.p_evict,
        noise_sigma: settings.noise_sigma,
        train_reps: 3,
    }
}

fn open_sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    match out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| CliError::Simulation(format!("cannot create {}: {e}", path.display())))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_sidecar(out: &Path, summary: &serde_json::Value) -> Result<(), CliError> {
    let path = format!("{}.summary.json", out.display());
    let mut file = BufWriter::new(File::create(&path).map_err(sim_err)?);
    write_json(&mut file, summary).map_err(sim_err)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let settings = args.common.resolve()?;
    let default_profile = match args.experiment {
        ExperimentId::Fig3 | ExperimentId::Fig8 => ProfileArg::X3like,
        ExperimentId::Fig6 => ProfileArg::A715like,
    };
    let profile = settings.profile(default_profile);
    let cfg = sweep_config(&settings, 1000);
    let points = match args.experiment {
        ExperimentId::Fig3 => sweep_v1_len_gap(&profile, &cfg),
        ExperimentId::Fig6 => sweep_v2_slide_gap(&profile, &cfg),
        ExperimentId::Fig8 => sweep_v1_window(&profile, &cfg),
    }
    .map_err(sim_err)?;

    match settings.format.unwrap_or(FormatArg::Csv) {
        FormatArg::Csv => {
            let mut sink = open_sink(&settings.out)?;
            write_sweep_csv(&mut sink, &points).map_err(sim_err)?;
            sink.flush().map_err(sim_err)?;
            if let Some(path) = &settings.out {
                write_sidecar(path, &sweep_summary(&points))?;
            }
        }
        FormatArg::Json => {
            let mut sink = open_sink(&settings.out)?;
            write_json(&mut sink, &points).map_err(sim_err)?;
            sink.flush().map_err(sim_err)?;
        }
    }
    Ok(())
}

fn cmd_ablation(args: AblationArgs) -> Result<(), CliError> {
    let settings = args.common.resolve()?;
    let profile = settings.profile(ProfileArg::X3like);
    let cfg = sweep_config(&settings, 1000);
    let rows = ablation(&profile, &cfg).map_err(sim_err)?;

    match settings.format.unwrap_or(FormatArg::Csv) {
        FormatArg::Csv => {
            let mut sink = open_sink(&settings.out)?;
            write_ablation_csv(&mut sink, &rows).map_err(sim_err)?;
            sink.flush().map_err(sim_err)?;
            if let Some(path) = &settings.out {
                write_sidecar(path, &ablation_summary(&rows))?;
            }
        }
        FormatArg::Json => {
            let mut sink = open_sink(&settings.out)?;
            write_json(&mut sink, &rows).map_err(sim_err)?;
            sink.flush().map_err(sim_err)?;
        }
    }
    Ok(())
}

fn cmd_fuzz(args: FuzzArgs) -> Result<(), CliError> {
    let settings = args.common.resolve()?;
    if settings.format == Some(FormatArg::Csv) {
        return Err(CliError::Config(
            "fuzz reports are structured; use --format json (the default here)".into(),
        ));
    }
    let profile = settings.profile(ProfileArg::X3like);
    let cfg = CampaignConfig {
        iterations: args.iterations,
        seed: settings.seed,
        ..CampaignConfig::default()
    };
    let report = run_campaign(&profile, &cfg);
    let mut sink = open_sink(&settings.out)?;
    write_json(&mut sink, &report).map_err(sim_err)?;
    sink.flush().map_err(sim_err)
}

/// Aggregate of repeated end-to-end tag recoveries.
#[derive(Serialize)]
struct LeakReport {
    family: &'static str,
    profile: String,
    rounds: usize,
    correct: usize,
    success_rate: f64,
    /// Mean winner-vs-runner-up margin over resolved rounds, in timer units.
    mean_margin: f64,
    trials_per_guess: usize,
    seed: u64,
}

fn cmd_attack(args: AttackArgs) -> Result<(), CliError> {
    let settings = args.common.resolve()?;
    if args.attack == AttackKindArg::Leak {
        return attack_leak(&args, &settings);
    }

    let policy = match args.policy.ok_or_else(|| {
        CliError::Config("--policy is required for uaf and overflow attacks".into())
    })? {
        PolicyArg::Scudo => TagPolicy::Scudo { odd_even: false },
        PolicyArg::ScudoOddEven => TagPolicy::Scudo { odd_even: true },
        PolicyArg::PartitionAlloc => TagPolicy::PartitionAlloc,
        PolicyArg::Kernel => TagPolicy::Kernel,
    };
    if !(0.0..=1.0).contains(&args.accuracy) {
        return Err(CliError::Config(format!("accuracy {} outside [0, 1]", args.accuracy)));
    }
    let cfg = AttackConfig {
        max_retries: args.max_retries,
        oracle: match args.oracle {
            OracleArg::Perfect => OracleModel::Perfect,
            OracleArg::Noisy => OracleModel::Noisy { accuracy: args.accuracy },
            OracleArg::Simulated => OracleModel::Simulated,
        },
        mte_mode: match settings.mte_mode {
            Some(crate::opts::MteModeArg::Async) => MteMode::Async,
            _ => MteMode::Sync,
        },
    };

    let result = match args.attack {
        AttackKindArg::Uaf => uaf_campaign(policy, &cfg, args.rounds, settings.seed),
        AttackKindArg::Overflow => overflow_campaign(policy, &cfg, args.rounds, settings.seed),
        AttackKindArg::Leak => unreachable!(),
    };
    match result {
        Ok(stats) => match settings.format.unwrap_or(FormatArg::Json) {
            FormatArg::Csv => {
                let mut sink = open_sink(&settings.out)?;
                write_attack_csv(&mut sink, std::slice::from_ref(&stats)).map_err(sim_err)?;
                sink.flush().map_err(sim_err)?;
                if let Some(path) = &settings.out {
                    write_sidecar(path, &attack_summary(std::slice::from_ref(&stats)))?;
                }
                Ok(())
            }
            FormatArg::Json => {
                let mut sink = open_sink(&settings.out)?;
                write_json(&mut sink, &stats).map_err(sim_err)?;
                sink.flush().map_err(sim_err)
            }
        },
        // Not a failure: the policy's tag classes rule the attack out up
        // front. Report the verdict (always as JSON) and exit cleanly.
        Err(AttackError::DeterministicallyImpossible) => {
            let verdict = json!({
                "policy": policy.label(),
                "attack": "overflow",
                "verdict": "deterministically_impossible",
                "rounds": 0,
            });
            let mut sink = open_sink(&settings.out)?;
            write_json(&mut sink, &verdict).map_err(sim_err)?;
            sink.flush().map_err(sim_err)
        }
        Err(e) => Err(sim_err(e)),
    }
}

fn attack_leak(args: &AttackArgs, settings: &Settings) -> Result<(), CliError> {
    if settings.format == Some(FormatArg::Csv) {
        return Err(CliError::Config(
            "leak reports are structured; use --format json (the default here)".into(),
        ));
    }
    let family = args.family.ok_or_else(|| {
        CliError::Config("--family is required for the leak attack".into())
    })?;
    let default_profile = match family {
        FamilyArg::V1 => ProfileArg::X3like,
        FamilyArg::V2 => ProfileArg::A715like,
    };
    let profile = settings.profile(default_profile);
    let cfg = LeakConfig {
        trials_per_guess: args.trials_per_guess,
        timer: settings.timer,
        p_evict: settings.p_evict,
        noise_sigma: settings.noise_sigma,
        train_reps: 3,
    };

    let mut correct = 0;
    let mut margins = Vec::new();
    for round in 0..args.rounds {
        let secret = (round % 16) as u8;
        let gadget = build_gadget(family, TestKindArg::Ld, secret)?;
        match leak_tag(&gadget, &profile, &cfg, settings.seed.wrapping_add(round as u64)) {
            Ok(result) => {
                correct += (result.best_tag == secret) as usize;
                margins.push(result.margin);
            }
            // A flat measurement is a failed round, not a failed campaign.
            Err(LeakError::AmbiguousLeak { .. }) => {}
            Err(e) => return Err(sim_err(e)),
        }
    }
    let report = LeakReport {
        family: family_label(family),
        profile: profile.name.clone(),
        rounds: args.rounds,
        correct,
        success_rate: correct as f64 / args.rounds.max(1) as f64,
        mean_margin: margins.iter().sum::<f64>() / margins.len().max(1) as f64,
        trials_per_guess: cfg.trials_per_guess,
        seed: settings.seed,
    };
    let mut sink = open_sink(&settings.out)?;
    write_json(&mut sink, &report).map_err(sim_err)?;
    sink.flush().map_err(sim_err)
}

fn family_label(family: FamilyArg) -> &'static str {
    match family {
        FamilyArg::V1 => "v1",
        FamilyArg::V2 => "v2",
    }
}

fn build_gadget(family: FamilyArg, test_kind: TestKindArg, secret: u8) -> Result<Gadget, CliError> {
    match family {
        FamilyArg::V1 => {
            let params = V1Params {
                test_kind: match test_kind {
                    TestKindArg::Ld => TestKind::IndepLd,
                    TestKindArg::St => TestKind::IndepSt,
                },
                ..V1Params::default()
            };
            build_v1(params, secret).map_err(|e| CliError::Config(e.to_string()))
        }
        FamilyArg::V2 => {
            build_v2(V2Params::default(), secret).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

/// Hit rates of one gadget under one profile: the separation between the
/// matching and mismatching guess is the leak.
#[derive(Serialize)]
struct PhaseRates {
    match_rate: f64,
    mismatch_rate: f64,
    separation: f64,
}

fn measure(
    gadget: &Gadget,
    profile: &CoreProfile,
    settings: &Settings,
    trials: usize,
    secret: u8,
    stream: u64,
) -> Result<PhaseRates, CliError> {
    let wrong = (secret + 8) % 16;
    let mut rates = [0.0f64; 2];
    for (slot, guess) in [(0, secret), (1, wrong)] {
        let mut harness = TrialHarness::new(gadget, profile);
        harness.timer = settings.timer;
        harness.p_evict = settings.p_evict;
        harness.noise_sigma = settings.noise_sigma;
        let mut rng = rng::stream(settings.seed, stream * 2 + slot as u64);
        let mut hits = 0;
        for _ in 0..trials {
            hits += harness.run_trial(gadget, guess, &mut rng).map_err(sim_err)?.hit as usize;
        }
        rates[slot] = hits as f64 / trials.max(1) as f64;
    }
    Ok(PhaseRates {
        match_rate: rates[0],
        mismatch_rate: rates[1],
        separation: (rates[0] - rates[1]).abs(),
    })
}

#[derive(Serialize)]
struct MitigationReport {
    family: &'static str,
    mitigation: &'static str,
    profile: String,
    trials: usize,
    seed: u64,
    before: PhaseRates,
    after: PhaseRates,
}

fn cmd_mitigate(args: MitigateArgs) -> Result<(), CliError> {
    let settings = args.common.resolve()?;
    if args.secret > 0xf {
        return Err(CliError::Config(format!("secret tag {} outside 0..=15", args.secret)));
    }
    let mitigation = match args.mitigation {
        MitigationArg::SbBeforeTest => Mitigation::SbBeforeTest,
        MitigationArg::SbBeforeCheck => Mitigation::SbBeforeCheck,
        MitigationArg::PadWindow => Mitigation::PadWindow(args.pad.unwrap_or(30)),
        MitigationArg::PadStlfGap => Mitigation::PadStlfGap(args.pad.unwrap_or(4)),
    };
    let default_profile = match args.family {
        FamilyArg::V1 => ProfileArg::X3like,
        FamilyArg::V2 => ProfileArg::A715like,
    };
    let profile = settings.profile(default_profile);
    let trials = settings.trials.unwrap_or(100);

    let base = build_gadget(args.family, args.test_kind, args.secret)?;
    // An inapplicable (gadget, mitigation) pair is an invocation error.
    let fixed =
        apply_mitigation(&base, mitigation).map_err(|e| CliError::Config(e.to_string()))?;

    let report = MitigationReport {
        family: family_label(args.family),
        mitigation: mitigation.label(),
        profile: profile.name.clone(),
        trials,
        seed: settings.seed,
        before: measure(&base, &profile, &settings, trials, args.secret, 0)?,
        after: measure(&fixed, &profile, &settings, trials, args.secret, 1)?,
    };

    match settings.format.unwrap_or(FormatArg::Json) {
        FormatArg::Json => {
            let mut sink = open_sink(&settings.out)?;
            write_json(&mut sink, &report).map_err(sim_err)?;
            sink.flush().map_err(sim_err)
        }
        FormatArg::Csv => {
            let mut sink = open_sink(&settings.out)?;
            writeln!(sink, "{CSV_HEADER}").map_err(sim_err)?;
            writeln!(sink, "phase,match_rate,mismatch_rate,separation").map_err(sim_err)?;
            for (phase, rates) in [("before", &report.before), ("after", &report.after)] {
                writeln!(
                    sink,
                    "{phase},{:.6},{:.6},{:.6}",
                    rates.match_rate, rates.mismatch_rate, rates.separation
                )
                .map_err(sim_err)?;
            }
            sink.flush().map_err(sim_err)?;
            if let Some(path) = &settings.out {
                write_sidecar(path, &serde_json::to_value(&report).map_err(sim_err)?)?;
            }
            Ok(())
        }
    }
}

fn cmd_list_experiments() -> Result<(), CliError> {
    // Column 2 is the subcommand that runs the experiment.
    let rows = [
        (
            "fig3",
            "sweep    ",
            "shrinkage hit rate vs check/test gap, probe-chain lengths 1/2/4/8, load and store tests (x3like)",
        ),
        (
            "fig4",
            "ablation ",
            "refill/replay channel truth table: baseline, no speculative refill, no pattern replay, both off (x3like)",
        ),
        (
            "fig6",
            "sweep    ",
            "forwarding-gate leak grid over code slide 0-39 and store/load gap 0-4 (a715like)",
        ),
        (
            "fig8",
            "sweep    ",
            "charge-window horizon: 0-30 filler ops between branch and probe chain, three filler flavours (x3like)",
        ),
    ];
    let mut out = io::stdout().lock();
    for (id, command, what) in rows {
        writeln!(out, "{id}  {command} {what}").map_err(sim_err)?;
    }
    writeln!(out, "\nrun with: mtesim sweep --experiment <id> --seed <n> | mtesim ablation --seed <n>")
        .map_err(sim_err)
}

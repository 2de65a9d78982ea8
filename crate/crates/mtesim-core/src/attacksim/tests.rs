use super::*;
use crate::rng;
use crate::speccore::MteMode;
use crate::tagmem::TaggedPointer;

fn cfg() -> AttackConfig {
    AttackConfig::default()
}

#[test]
fn tag_policies_respect_their_classes() {
    let mut rng = rng::stream(11, 0);
    for policy in [
        TagPolicy::Scudo { odd_even: false },
        TagPolicy::Scudo { odd_even: true },
        TagPolicy::Kernel,
    ] {
        for slot in 0..2 {
            let class = policy.tag_class(slot);
            for _ in 0..200 {
                let current = policy.fresh_tag(slot, &mut rng);
                let next = policy.release_tag(slot, current, &mut rng);
                assert_ne!(next, current, "{policy:?} repeated a tag on release");
                assert!(class.contains(&next), "{policy:?} left its class");
            }
        }
    }

    assert_eq!(TagPolicy::Scudo { odd_even: false }.tag_class(0).len(), 16);
    assert_eq!(TagPolicy::Kernel.tag_class(0).len(), 15);
    assert!(TagPolicy::Kernel.tag_class(0).iter().all(|&t| t <= 0xe));

    let even = TagPolicy::Scudo { odd_even: true }.tag_class(0);
    let odd = TagPolicy::Scudo { odd_even: true }.tag_class(1);
    assert_eq!(even.len(), 8);
    assert_eq!(odd.len(), 8);
    assert!(even.iter().all(|t| t % 2 == 0));
    assert!(odd.iter().all(|t| t % 2 == 1));

    // PartitionAlloc walks the full 15-tag cycle and never assigns zero.
    let mut tag = 0x7;
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..15 {
        tag = TagPolicy::PartitionAlloc.release_tag(0, tag, &mut rng);
        assert_ne!(tag, 0);
        seen.insert(tag);
    }
    assert_eq!(seen.len(), 15);
    assert_eq!(tag, 0x7);
}

#[test]
fn heap_rejects_double_free_and_stale_pointers() {
    let mut rng = rng::stream(12, 0);
    let mut heap = HeapModel::new(TagPolicy::Scudo { odd_even: false }, 2, &mut rng);

    let p = heap.alloc().unwrap();
    assert_eq!(p.addr(), HEAP_BASE);
    heap.free(p, &mut rng).unwrap();
    assert!(matches!(heap.free(p, &mut rng), Err(HeapError::DoubleFree(0))));

    // Reuse keeps the release-time tag, which release guarantees differs
    // from the dangling pointer's tag.
    let q = heap.alloc().unwrap();
    assert_eq!(q.addr(), p.addr());
    assert_ne!(q.tag(), p.tag());
    assert_eq!(q.tag(), heap.slot_tag(0));

    // Freeing through the stale pointer is rejected: its tag no longer
    // matches the slot.
    assert!(matches!(
        heap.free(p, &mut rng),
        Err(HeapError::InvalidPointer(_))
    ));

    // Out-of-range and misaligned pointers are invalid outright.
    let far = TaggedPointer::new(HEAP_BASE + 64 * SLOT_SIZE, 0);
    assert!(matches!(
        heap.free(far, &mut rng),
        Err(HeapError::InvalidPointer(_))
    ));
    let skewed = TaggedPointer::new(HEAP_BASE + 8, q.tag());
    assert!(matches!(
        heap.free(skewed, &mut rng),
        Err(HeapError::InvalidPointer(_))
    ));

    heap.free(q, &mut rng).unwrap();
    heap.alloc().unwrap();
    heap.alloc().unwrap();
    assert!(matches!(heap.alloc(), Err(HeapError::OutOfSlots)));
}

#[test]
fn uaf_retry_means_track_tag_entropy() {
    let rounds = 2000;
    let scudo = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &cfg(), rounds, 100).unwrap();
    let kernel = uaf_campaign(TagPolicy::Kernel, &cfg(), rounds, 101).unwrap();
    let odd_even = uaf_campaign(TagPolicy::Scudo { odd_even: true }, &cfg(), rounds, 102).unwrap();

    // Release excludes the outgoing tag, so the first reallocation can never
    // match and the rest is geometric over the remaining class: means are
    // exactly the class size.
    assert!((scudo.mean_retries - 16.0).abs() < 1.6, "{}", scudo.mean_retries);
    assert!((kernel.mean_retries - 15.0).abs() < 1.5, "{}", kernel.mean_retries);
    assert!((odd_even.mean_retries - 8.0).abs() < 0.8, "{}", odd_even.mean_retries);

    let ratio = scudo.mean_retries / odd_even.mean_retries;
    assert!((ratio - 2.0).abs() < 0.3, "parity halves the search space: {ratio}");

    for stats in [&scudo, &kernel, &odd_even] {
        assert_eq!(stats.successes, rounds);
        assert_eq!(stats.total_faults, 0, "perfect-oracle attack must be silent");
    }
}

#[test]
fn partition_alloc_cycles_deterministically() {
    let stats = uaf_campaign(TagPolicy::PartitionAlloc, &cfg(), 50, 7).unwrap();
    assert_eq!(stats.successes, 50);
    assert_eq!(stats.mean_retries, 15.0, "increment policy has zero variance");
    assert_eq!(stats.total_faults, 0);

    let mut rng = rng::stream(7, 999);
    let mut heap = HeapModel::new(TagPolicy::PartitionAlloc, 2, &mut rng);
    let out = bypass_uaf(&mut heap, &cfg(), &mut rng).unwrap();
    assert!(out.success);
    assert_eq!(out.retries, 15);
}

#[test]
fn forced_immediate_match_needs_no_reallocation() {
    let mut rng = rng::stream(13, 0);
    let mut heap = HeapModel::new(TagPolicy::Scudo { odd_even: false }, 2, &mut rng);

    let victim = heap.alloc().unwrap();
    heap.free(victim, &mut rng).unwrap();
    assert_ne!(heap.slot_tag(0), victim.tag());
    heap.force_retag(0, victim.tag());

    let out = bypass_uaf_from(&mut heap, victim, &cfg(), &mut rng).unwrap();
    assert!(out.success);
    assert_eq!(out.retries, 0, "matching dangling pointer needs no realloc");
    assert_eq!(out.corrupt_faults, 0);
    assert_eq!(heap.memory().load_u64(HEAP_BASE), Some(CORRUPT_MARKER));
}

#[test]
fn overflow_respects_parity_segregation() {
    let mut rng = rng::stream(14, 0);
    let mut heap = HeapModel::new(TagPolicy::Scudo { odd_even: true }, 2, &mut rng);
    assert!(matches!(
        bypass_overflow(&mut heap, &cfg(), &mut rng),
        Err(AttackError::DeterministicallyImpossible)
    ));
    assert!(matches!(
        overflow_campaign(TagPolicy::Scudo { odd_even: true }, &cfg(), 10, 14),
        Err(AttackError::DeterministicallyImpossible)
    ));

    // Unsegregated scudo: fresh victim draws over all 16 tags, retries are
    // the failed respawns, geometric with mean 15.
    let stats = overflow_campaign(TagPolicy::Scudo { odd_even: false }, &cfg(), 2000, 15).unwrap();
    assert_eq!(stats.successes, 2000);
    assert_eq!(stats.total_faults, 0);
    assert!(
        (stats.mean_retries - 16.0).abs() < 1.6,
        "mean {} strays from the 1-in-16 law",
        stats.mean_retries
    );
}

#[test]
fn noisy_oracle_degrades_success_gracefully() {
    let noisy = AttackConfig {
        max_retries: 48,
        oracle: OracleModel::Noisy { accuracy: 0.95 },
        ..cfg()
    };
    let stats = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &noisy, 100, 21).unwrap();
    assert!(stats.successes >= 90, "noisy oracle collapsed: {}", stats.successes);
    assert_eq!(stats.total_faults, 0, "one-sided noise never fires on a mismatch");

    // A perfect oracle with default patience always gets there; bounded
    // patience plus missed detections is what costs the runs above.
    let perfect = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &cfg(), 100, 21).unwrap();
    assert_eq!(perfect.successes, 100);
    assert!(stats.successes < perfect.successes);
}

#[test]
fn simulated_oracle_probes_through_the_pipeline() {
    let simulated = AttackConfig { oracle: OracleModel::Simulated, ..cfg() };
    let base = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &cfg(), 100, 33).unwrap();
    let sim = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &simulated, 100, 33).unwrap();

    // The simulated probe recovers ground truth, so the walk is identical;
    // the difference is that every failed probe is a real faulting access.
    assert_eq!(sim.successes, base.successes);
    assert_eq!(sim.mean_retries, base.mean_retries);
    assert!(sim.total_faults > 0);
}

#[test]
fn corrupting_store_follows_mte_mode_semantics() {
    let mut rng = rng::stream(55, 0);
    let mut heap = HeapModel::new(TagPolicy::Scudo { odd_even: false }, 2, &mut rng);
    let p = heap.alloc().unwrap();
    let wrong = p.with_tag((p.tag() + 1) & 0xf);

    // Sync: the mismatched store faults and is squashed before writing.
    let faults = corrupting_store(&mut heap, wrong, MteMode::Sync).unwrap();
    assert_eq!(faults, 1);
    assert_eq!(heap.memory().load_u64(p.addr()), Some(0));

    // Async: the fault is deferred and the write lands anyway.
    let faults = corrupting_store(&mut heap, wrong, MteMode::Async).unwrap();
    assert_eq!(faults, 1);
    assert_eq!(heap.memory().load_u64(p.addr()), Some(CORRUPT_MARKER));

    // Matching tag: silent success.
    let faults = corrupting_store(&mut heap, p, MteMode::Sync).unwrap();
    assert_eq!(faults, 0);
    assert_eq!(heap.memory().load_u64(p.addr()), Some(CORRUPT_MARKER));
}

#[test]
fn attacks_are_deterministic_per_seed() {
    let a = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &cfg(), 64, 9).unwrap();
    let b = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &cfg(), 64, 9).unwrap();
    assert_eq!(a, b);
    let c = uaf_campaign(TagPolicy::Scudo { odd_even: false }, &cfg(), 64, 10).unwrap();
    assert_ne!(a.mean_retries, c.mean_retries);
}

//! Presence-only cache model: 64 sets × 4 ways (256 lines of 64 bytes), LRU
//! replacement, fixed hit/miss latencies. Data always comes from memory; the
//! cache only decides timing and the attacker-visible cached/uncached state.

use rand::Rng;

const SETS: usize = 64;
const WAYS: usize = 4;

/// Cycle cost of a hit / miss as seen by `access` and the timed probe.
pub const HIT_LATENCY: u64 = 4;
pub const MISS_LATENCY: u64 = 100;

#[derive(Debug, Clone)]
pub struct CacheModel {
    // ways[set][way] = Some(line); stamp[set][way] = LRU tick
    ways: [[Option<u64>; WAYS]; SETS],
    stamp: [[u64; WAYS]; SETS],
    tick: u64,
}

impl Default for CacheModel {
    fn default() -> Self {
        Self::new()
    }
}

impl CacheModel {
    pub fn new() -> Self {
        CacheModel { ways: [[None; WAYS]; SETS], stamp: [[0; WAYS]; SETS], tick: 0 }
    }

    fn set_of(line: u64) -> usize {
        (line as usize) % SETS
    }

    pub fn present(&self, line: u64) -> bool {
        self.ways[Self::set_of(line)].contains(&Some(line))
    }

    /// Bring `line` in (LRU victim within its set); touches LRU state.
    pub fn fill(&mut self, line: u64) {
        self.tick += 1;
        let set = Self::set_of(line);
        if let Some(w) = self.ways[set].iter().position(|&l| l == Some(line)) {
            self.stamp[set][w] = self.tick;
            return;
        }
        let victim = match self.ways[set].iter().position(Option::is_none) {
            Some(empty) => empty,
            None => {
                let (w, _) =
                    self.stamp[set].iter().enumerate().min_by_key(|&(_, &s)| s).expect("ways");
                w
            }
        };
        self.ways[set][victim] = Some(line);
        self.stamp[set][victim] = self.tick;
    }

    /// Access latency for `line`, filling it on a miss.
    pub fn access(&mut self, line: u64) -> u64 {
        let hit = self.present(line);
        self.fill(line);
        if hit {
            HIT_LATENCY
        } else {
            MISS_LATENCY
        }
    }

    /// Latency the line would see right now, without touching state.
    pub fn peek_latency(&self, line: u64) -> u64 {
        if self.present(line) {
            HIT_LATENCY
        } else {
            MISS_LATENCY
        }
    }

    /// Remove `line` unconditionally.
    pub fn flush_line(&mut self, line: u64) {
        let set = Self::set_of(line);
        for w in 0..WAYS {
            if self.ways[set][w] == Some(line) {
                self.ways[set][w] = None;
            }
        }
    }

    pub fn flush_all(&mut self) {
        self.ways = [[None; WAYS]; SETS];
        self.stamp = [[0; WAYS]; SETS];
    }

    /// Probabilistic eviction: succeeds with probability `p_evict`, modeling
    /// eviction-set reliability. Returns whether the line is now absent.
    pub fn evict(&mut self, line: u64, p_evict: f64, rng: &mut impl Rng) -> bool {
        if rng.gen_bool(p_evict.clamp(0.0, 1.0)) {
            self.flush_line(line);
        }
        !self.present(line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn fill_then_hit_flush_then_miss() {
        let mut c = CacheModel::new();
        assert!(!c.present(0x80));
        assert_eq!(c.access(0x80), MISS_LATENCY);
        assert!(c.present(0x80));
        assert_eq!(c.access(0x80), HIT_LATENCY);
        c.flush_line(0x80);
        assert!(!c.present(0x80));
    }

    #[test]
    fn lru_evicts_oldest_within_a_set() {
        let mut c = CacheModel::new();
        // five lines in the same set (stride 64 lines), only four ways
        for i in 0..4u64 {
            c.fill(i * 64);
        }
        c.fill(0); // refresh line 0
        c.fill(4 * 64); // evicts line 64 (oldest), not line 0
        assert!(c.present(0));
        assert!(!c.present(64));
        assert!(c.present(4 * 64));
    }

    #[test]
    fn probabilistic_evict_tracks_p() {
        let mut rng = stream(42, 0);
        let mut gone = 0u32;
        let n = 10_000;
        for _ in 0..n {
            let mut c = CacheModel::new();
            c.fill(0x80);
            c.evict(0x80, 0.8, &mut rng);
            if !c.present(0x80) {
                gone += 1;
            }
        }
        let rate = gone as f64 / n as f64;
        assert!((rate - 0.8).abs() < 0.02, "evict rate {rate}");
    }
}

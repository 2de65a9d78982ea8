//! Tagged memory and timing primitives.
//!
//! Memory is tagged per 16-byte granule with a 4-bit tag; pointers carry a
//! tag in bits 56–59. Every load/store check compares pointer tag against
//! granule tag: MATCH, MISMATCH, or UNMAPPED (untagged/unbacked address —
//! a distinct fault class, usable as an address-probing signal).
//!
//! The cache model is presence-only (data always comes from memory): 256
//! lines of 64 bytes, 4-way set-associative, LRU, hit 4 cycles / miss 100.
//! [`timed_access`] is the attacker's probe: it returns a latency reading
//! through a [`Timer`] (cycle-accurate or coarse virtual ticks) with optional
//! Gaussian noise, and faults if the probe pointer itself mismatches.

mod cache;
mod image;

pub use cache::CacheModel;
pub use image::{from_image, to_image, ImageError};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Bytes per tag granule.
pub const GRANULE_SIZE: u64 = 16;
/// Bytes per cache line.
pub const LINE_SIZE: u64 = 64;
/// Address bits of a tagged pointer (top byte is metadata).
pub const ADDR_MASK: u64 = 0x00ff_ffff_ffff_ffff;
const TAG_SHIFT: u32 = 56;

/// A pointer carrying a 4-bit tag in bits 56–59 (bits 60–63 are zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedPointer(u64);

impl TaggedPointer {
    /// Compose `(tag << 56) | (addr & ADDR_MASK)`.
    pub fn new(addr: u64, tag: u8) -> Self {
        TaggedPointer(((tag as u64 & 0xf) << TAG_SHIFT) | (addr & ADDR_MASK))
    }

    /// Reinterpret a raw register value as a tagged pointer.
    pub fn from_raw(raw: u64) -> Self {
        TaggedPointer(raw & (0xf << TAG_SHIFT | ADDR_MASK))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn addr(self) -> u64 {
        self.0 & ADDR_MASK
    }

    pub fn tag(self) -> u8 {
        ((self.0 >> TAG_SHIFT) & 0xf) as u8
    }

    /// Same address, different tag.
    pub fn with_tag(self, tag: u8) -> Self {
        TaggedPointer::new(self.addr(), tag)
    }

    /// Cache line index of the address.
    pub fn line(self) -> u64 {
        self.addr() / LINE_SIZE
    }
}

/// Outcome of comparing a pointer tag with its granule tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagCheck {
    Match,
    Mismatch,
    /// The address is not backed by tagged memory at all.
    Unmapped,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("unmapped address {0:#x}")]
    UnmappedAddress(u64),
    #[error("tag check fault probing {0:#x}")]
    TagFault(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Granule {
    tag: u8,
    data: [u8; GRANULE_SIZE as usize],
}

/// Sparse granule-tagged memory. Loads and stores move aligned u64s; all
/// simulator-issued accesses use 8-byte-aligned addresses, so an access never
/// straddles a granule.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaggedMemory {
    granules: BTreeMap<u64, Granule>,
}

impl TaggedMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Map `[base, base+len)` (granule-rounded) zero-filled with `tag`.
    pub fn map_region(&mut self, base: u64, len: u64, tag: u8) {
        let start = base & !(GRANULE_SIZE - 1);
        let end = (base + len + GRANULE_SIZE - 1) & !(GRANULE_SIZE - 1);
        let mut g = start;
        while g < end {
            self.granules.insert(g, Granule { tag: tag & 0xf, data: [0; 16] });
            g += GRANULE_SIZE;
        }
    }

    pub fn is_mapped(&self, addr: u64) -> bool {
        self.granules.contains_key(&(addr & !(GRANULE_SIZE - 1)))
    }

    /// Retag the granule containing `addr`.
    pub fn set_tag(&mut self, addr: u64, tag: u8) -> Result<(), MemError> {
        let g = addr & !(GRANULE_SIZE - 1);
        match self.granules.get_mut(&g) {
            Some(granule) => {
                granule.tag = tag & 0xf;
                Ok(())
            }
            None => Err(MemError::UnmappedAddress(addr)),
        }
    }

    pub fn tag_at(&self, addr: u64) -> Option<u8> {
        self.granules.get(&(addr & !(GRANULE_SIZE - 1))).map(|g| g.tag)
    }

    /// Compare pointer tag against the granule tag at its address.
    pub fn check_tag(&self, ptr: TaggedPointer) -> TagCheck {
        match self.tag_at(ptr.addr()) {
            None => TagCheck::Unmapped,
            Some(t) if t == ptr.tag() => TagCheck::Match,
            Some(_) => TagCheck::Mismatch,
        }
    }

    /// Read the aligned u64 containing `addr`; `None` when unmapped.
    pub fn load_u64(&self, addr: u64) -> Option<u64> {
        let a = addr & !7;
        let g = a & !(GRANULE_SIZE - 1);
        let granule = self.granules.get(&g)?;
        let off = (a - g) as usize;
        Some(u64::from_le_bytes(granule.data[off..off + 8].try_into().unwrap()))
    }

    /// Write the aligned u64 containing `addr`; `None` when unmapped.
    pub fn store_u64(&mut self, addr: u64, value: u64) -> Option<()> {
        let a = addr & !7;
        let g = a & !(GRANULE_SIZE - 1);
        let granule = self.granules.get_mut(&g)?;
        let off = (a - g) as usize;
        granule.data[off..off + 8].copy_from_slice(&value.to_le_bytes());
        Some(())
    }

    /// Fill `[base, base+len)` with bytes from `fill` (wrapping).
    pub fn write_bytes(&mut self, base: u64, bytes: &[u8]) {
        for (i, &b) in bytes.iter().enumerate() {
            let addr = base + i as u64;
            let g = addr & !(GRANULE_SIZE - 1);
            if let Some(granule) = self.granules.get_mut(&g) {
                granule.data[(addr - g) as usize] = b;
            }
        }
    }

    fn iter_granules(&self) -> impl Iterator<Item = (u64, u8, &[u8; 16])> {
        self.granules.iter().map(|(&base, g)| (base, g.tag, &g.data))
    }
}

/// Probe timer: raw cycles or coarse ticks (`floor(cycles / ratio)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Timer {
    Physical,
    Virtual { ratio: u64 },
}

impl Timer {
    pub const DEFAULT_VIRTUAL_RATIO: u64 = 100;
    /// Physical-cycle boundary between hit and miss classifications.
    pub const HIT_THRESHOLD_CYCLES: f64 = 35.0;

    pub fn convert(self, cycles: f64) -> f64 {
        match self {
            Timer::Physical => cycles,
            Timer::Virtual { ratio } => (cycles / ratio as f64).floor(),
        }
    }

    /// Classify a reading produced by `convert`.
    pub fn is_hit(self, reading: f64) -> bool {
        match self {
            Timer::Physical => reading <= Self::HIT_THRESHOLD_CYCLES,
            Timer::Virtual { .. } => reading < 1.0,
        }
    }
}

impl Default for Timer {
    fn default() -> Self {
        Timer::Physical
    }
}

/// Attacker probe: access `ptr`, return the latency reading. The probe is an
/// architectural access, so a mismatching or unmapped probe pointer faults.
/// `sigma` adds Gaussian cycle noise before timer conversion (0 = noiseless,
/// consumes no randomness).
pub fn timed_access(
    mem: &TaggedMemory,
    cache: &mut CacheModel,
    ptr: TaggedPointer,
    timer: Timer,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<f64, MemError> {
    match mem.check_tag(ptr) {
        TagCheck::Match => {}
        TagCheck::Mismatch => return Err(MemError::TagFault(ptr.raw())),
        TagCheck::Unmapped => return Err(MemError::UnmappedAddress(ptr.addr())),
    }
    let mut cycles = cache.access(ptr.line()) as f64;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        cycles = (cycles + normal.sample(rng)).max(0.0);
    }
    Ok(timer.convert(cycles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn pointer_algebra_round_trips() {
        let p = TaggedPointer::new(0x2080, 0x9);
        assert_eq!(p.raw(), (0x9u64 << 56) | 0x2080);
        assert_eq!(p.addr(), 0x2080);
        assert_eq!(p.tag(), 0x9);
        assert_eq!(p.with_tag(0x3).tag(), 0x3);
        assert_eq!(p.with_tag(0x3).addr(), 0x2080);
    }

    #[test]
    fn check_tag_distinguishes_all_three_outcomes() {
        let mut mem = TaggedMemory::new();
        mem.map_region(0x1000, 64, 0x5);
        assert_eq!(mem.check_tag(TaggedPointer::new(0x1000, 0x5)), TagCheck::Match);
        assert_eq!(mem.check_tag(TaggedPointer::new(0x1000, 0x6)), TagCheck::Mismatch);
        assert_eq!(mem.check_tag(TaggedPointer::new(0xdead_0000, 0x5)), TagCheck::Unmapped);
    }

    #[test]
    fn set_tag_requires_mapped_granule() {
        let mut mem = TaggedMemory::new();
        mem.map_region(0x1000, 16, 0x0);
        assert!(mem.set_tag(0x1008, 0x7).is_ok());
        assert_eq!(mem.tag_at(0x1000), Some(0x7));
        assert_eq!(mem.set_tag(0x9000, 0x1), Err(MemError::UnmappedAddress(0x9000)));
    }

    #[test]
    fn loads_and_stores_round_trip() {
        let mut mem = TaggedMemory::new();
        mem.map_region(0x2000, 32, 0x2);
        mem.store_u64(0x2008, 0xdead_beef_cafe_f00d).unwrap();
        assert_eq!(mem.load_u64(0x2008), Some(0xdead_beef_cafe_f00d));
        assert_eq!(mem.load_u64(0x2000), Some(0));
        assert_eq!(mem.load_u64(0x5000), None);
    }

    #[test]
    fn timed_access_classifies_presence_and_faults_on_mismatch() {
        let mut mem = TaggedMemory::new();
        mem.map_region(0x3000, 64, 0x1);
        let mut cache = CacheModel::new();
        let p = TaggedPointer::new(0x3000, 0x1);
        let timer = Timer::Physical;
        let mut rng = stream(1, 0);
        let miss = timed_access(&mem, &mut cache, p, timer, 0.0, &mut rng).unwrap();
        assert!(!timer.is_hit(miss));
        let hit = timed_access(&mem, &mut cache, p, timer, 0.0, &mut rng).unwrap();
        assert!(timer.is_hit(hit));
        let bad = p.with_tag(0x2);
        assert_eq!(
            timed_access(&mem, &mut cache, bad, timer, 0.0, &mut rng),
            Err(MemError::TagFault(bad.raw()))
        );
    }

    #[test]
    fn virtual_timer_floors_to_ticks() {
        let t = Timer::Virtual { ratio: 100 };
        assert_eq!(t.convert(4.0), 0.0);
        assert_eq!(t.convert(100.0), 1.0);
        assert!(t.is_hit(0.0));
        assert!(!t.is_hit(1.0));
    }
}

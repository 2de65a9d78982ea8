//! Textual memory-image format: one granule per line,
//! `<granule-base-hex> <tag-hex> <32 hex data chars>`, plus `#` comments.
//!
//! ```text
//! # mtesim memory image v1
//! 0x0000000000001040 0 00000000000000000000000000000000
//! 0x0000000000002080 9 0d0cf0fecafebeefde00000000000000
//! ```

use super::{TaggedMemory, GRANULE_SIZE};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("memory image parse error on line {0}")]
    Parse(usize),
}

/// Render all mapped granules, sorted by address.
pub fn to_image(mem: &TaggedMemory) -> String {
    let mut out = String::from("# mtesim memory image v1\n");
    for (base, tag, data) in mem.iter_granules() {
        out.push_str(&format!("{base:#018x} {tag:x} "));
        for b in data {
            out.push_str(&format!("{b:02x}"));
        }
        out.push('\n');
    }
    out
}

/// Parse an image produced by [`to_image`] (comments/blank lines allowed).
pub fn from_image(text: &str) -> Result<TaggedMemory, ImageError> {
    let mut mem = TaggedMemory::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (base_s, tag_s, data_s) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(t), Some(d), None) => (a, t, d),
            _ => return Err(ImageError::Parse(lineno)),
        };
        let base = base_s
            .strip_prefix("0x")
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .filter(|b| b % GRANULE_SIZE == 0)
            .ok_or(ImageError::Parse(lineno))?;
        let tag = u8::from_str_radix(tag_s, 16).ok().filter(|&t| t <= 0xf).ok_or(ImageError::Parse(lineno))?;
        if data_s.len() != 32 {
            return Err(ImageError::Parse(lineno));
        }
        let mut data = [0u8; 16];
        for (i, chunk) in data_s.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).map_err(|_| ImageError::Parse(lineno))?;
            data[i] = u8::from_str_radix(s, 16).map_err(|_| ImageError::Parse(lineno))?;
        }
        mem.map_region(base, GRANULE_SIZE, tag);
        mem.write_bytes(base, &data);
    }
    Ok(mem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trips() {
        let mut mem = TaggedMemory::new();
        mem.map_region(0x1040, 16, 0x0);
        mem.map_region(0x2080, 32, 0x9);
        mem.store_u64(0x2080, 0xdefa_ced0_0d15_ea5e).unwrap();
        let text = to_image(&mem);
        let back = from_image(&text).unwrap();
        assert_eq!(mem, back);
        assert_eq!(to_image(&back), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(from_image("# ok\nbogus"), Err(ImageError::Parse(2)));
        assert_eq!(from_image("0x10 0 00"), Err(ImageError::Parse(1)));
    }
}

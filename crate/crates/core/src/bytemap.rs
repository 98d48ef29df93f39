//! The byte-to-printable mapping used by byte-level BPE vocabulary files.
//!
//! Printable ASCII and most of Latin-1 map to themselves; the remaining 68
//! byte values map to U+0100 and upward, in byte order.

use std::collections::HashMap;
use std::sync::LazyLock;

static BYTE_TO_CHAR: LazyLock<[char; 256]> = LazyLock::new(|| {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for byte in 0u32..256 {
        let direct = matches!(byte, 0x21..=0x7E | 0xA1..=0xAC | 0xAE..=0xFF);
        let cp = if direct {
            byte
        } else {
            next += 1;
            next - 1
        };
        table[byte as usize] = char::from_u32(cp).expect("mapping stays below U+0144");
    }
    table
});

static CHAR_TO_BYTE: LazyLock<HashMap<char, u8>> =
    LazyLock::new(|| BYTE_TO_CHAR.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect());

pub fn encode(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| BYTE_TO_CHAR[b as usize]).collect()
}

/// Inverse of [`encode`]. Returns the offending character on failure.
pub fn decode(text: &str) -> Result<Vec<u8>, char> {
    text.chars().map(|c| CHAR_TO_BYTE.get(&c).copied().ok_or(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_points() {
        assert_eq!(encode(b" "), "Ġ");
        assert_eq!(encode(b"\n"), "Ċ");
        assert_eq!(encode(b"user"), "user");
        assert_eq!(decode("Ġuser").unwrap(), b" user");
        assert_eq!(decode("大"), Err('大'));
    }

    #[test]
    fn all_bytes_roundtrip() {
        let all: Vec<u8> = (0u8..=255).collect();
        assert_eq!(decode(&encode(&all)).unwrap(), all);
    }
}

//! Character and token classification.
//!
//! A *long token* is a vocabulary entry that can emit more than one Chinese
//! character in a single step, or one Chinese character glued to anything
//! else. Everything downstream (pruning, logit masking, constrained decoding,
//! validation) asks this module what counts as "Chinese".

use serde::{Deserialize, Serialize};

/// CJK Unified Ideographs.
pub const CJK_UNIFIED: (u32, u32) = (0x4E00, 0x9FFF);
/// CJK Unified Ideographs Extension A.
pub const CJK_EXT_A: (u32, u32) = (0x3400, 0x4DBF);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CharClass {
    Chinese,
    NonChinese,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenClass {
    /// Decodes to exactly one Chinese character and nothing else.
    SingleChinese,
    /// Not decodable as whole scalar values and holds no complete Chinese character.
    ByteFragment,
    /// Decodes cleanly and contains no Chinese character.
    NonChinese,
    /// Two or more Chinese characters, or one mixed with other content.
    Long,
}

/// Inclusive code point ranges treated as Chinese characters.
///
/// Extensions B and later (supplementary planes) are excluded by default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CjkRanges(Vec<(u32, u32)>);

impl Default for CjkRanges {
    fn default() -> Self {
        Self(vec![CJK_UNIFIED, CJK_EXT_A])
    }
}

impl CjkRanges {
    /// Builds a range list, rejecting inverted or out-of-range bounds.
    pub fn new(ranges: Vec<(u32, u32)>) -> Result<Self, String> {
        for &(lo, hi) in &ranges {
            if lo > hi {
                return Err(format!("inverted range [{lo:#X}, {hi:#X}]"));
            }
            if hi > char::MAX as u32 {
                return Err(format!("range [{lo:#X}, {hi:#X}] exceeds the Unicode code space"));
            }
            if lo <= 0xDFFF && hi >= 0xD800 {
                return Err(format!("range [{lo:#X}, {hi:#X}] includes surrogates"));
            }
        }
        Ok(Self(ranges))
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.0
    }

    #[inline]
    pub fn contains(&self, cp: u32) -> bool {
        self.0.iter().any(|&(lo, hi)| lo <= cp && cp <= hi)
    }

    /// True when some code point in `[lo, hi]` falls inside a configured range.
    pub fn overlaps(&self, lo: u32, hi: u32) -> bool {
        self.0.iter().any(|&(a, b)| a <= hi && lo <= b)
    }

    #[inline]
    pub fn is_chinese(&self, ch: char) -> bool {
        self.contains(ch as u32)
    }

    pub fn classify_char(&self, ch: char) -> CharClass {
        if self.is_chinese(ch) {
            CharClass::Chinese
        } else {
            CharClass::NonChinese
        }
    }

    pub fn count_chinese(&self, text: &str) -> usize {
        text.chars().filter(|&c| self.is_chinese(c)).count()
    }

    /// Classifies a raw vocabulary entry.
    ///
    /// Invalid UTF-8 is scanned chunk by chunk: complete Chinese characters
    /// found alongside stray bytes make the token `Long`, otherwise it is a
    /// `ByteFragment`.
    pub fn classify_token(&self, token: &[u8]) -> TokenClass {
        let mut chinese = 0usize;
        let mut other = 0usize;
        let mut invalid = false;
        for chunk in token.utf8_chunks() {
            for ch in chunk.valid().chars() {
                if self.is_chinese(ch) {
                    chinese += 1;
                } else {
                    other += 1;
                }
            }
            if !chunk.invalid().is_empty() {
                invalid = true;
            }
        }
        match (chinese, other, invalid) {
            (0, _, true) => TokenClass::ByteFragment,
            (0, _, false) => TokenClass::NonChinese,
            (1, 0, false) => TokenClass::SingleChinese,
            _ => TokenClass::Long,
        }
    }

    /// Whether `prefix` is a proper prefix of the UTF-8 encoding of some
    /// Chinese character.
    pub fn is_chinese_prefix(&self, prefix: &[u8]) -> bool {
        let Some(&lead) = prefix.first() else {
            return false;
        };
        let width = match lead {
            0xC2..=0xDF => 2,
            0xE0..=0xEF => 3,
            0xF0..=0xF4 => 4,
            _ => return false,
        };
        if prefix.len() >= width || prefix[1..].iter().any(|&b| b & 0xC0 != 0x80) {
            return false;
        }
        // Overlong completions are not valid UTF-8, so clamp to the code
        // points that actually take `width` bytes.
        let (lo, hi) = padded_code_point_bounds(prefix, width);
        let (min, max) = match width {
            2 => (0x80, 0x7FF),
            3 => (0x800, 0xFFFF),
            _ => (0x1_0000, 0x10_FFFF),
        };
        let (lo, hi) = (lo.max(min), hi.min(max));
        lo <= hi && self.overlaps(lo, hi)
    }
}

/// Smallest and largest value reachable by completing `prefix` to a
/// `width`-byte sequence, overlong encodings included.
fn padded_code_point_bounds(prefix: &[u8], width: usize) -> (u32, u32) {
    let lead_bits = match width {
        2 => (prefix[0] & 0x1F) as u32,
        3 => (prefix[0] & 0x0F) as u32,
        _ => (prefix[0] & 0x07) as u32,
    };
    let mut lo = lead_bits;
    let mut hi = lead_bits;
    for i in 1..width {
        let (l, h) = match prefix.get(i) {
            Some(&b) => ((b & 0x3F) as u32, (b & 0x3F) as u32),
            None => (0, 0x3F),
        };
        lo = (lo << 6) | l;
        hi = (hi << 6) | h;
    }
    (lo, hi)
}

/// Classifies with the default CJK ranges.
pub fn classify_char(ch: char) -> CharClass {
    CjkRanges::default().classify_char(ch)
}

/// Classifies with the default CJK ranges.
pub fn classify_token(token: &[u8]) -> TokenClass {
    CjkRanges::default().classify_token(token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chars() {
        assert_eq!(classify_char('大'), CharClass::Chinese);
        assert_eq!(classify_char('a'), CharClass::NonChinese);
        assert_eq!(classify_char('，'), CharClass::NonChinese);
        assert_eq!(classify_char('。'), CharClass::NonChinese);
        assert_eq!(classify_char('\u{3400}'), CharClass::Chinese);
        // Extension B is outside the defaults.
        assert_eq!(classify_char('\u{20000}'), CharClass::NonChinese);
    }

    #[test]
    fn tokens() {
        assert_eq!(classify_token("大模型".as_bytes()), TokenClass::Long);
        assert_eq!(classify_token(b"user"), TokenClass::NonChinese);
        assert_eq!(classify_token("大".as_bytes()), TokenClass::SingleChinese);
        assert_eq!(classify_token("大X".as_bytes()), TokenClass::Long);
        assert_eq!(classify_token("，我".as_bytes()), TokenClass::Long);
        assert_eq!(classify_token("，".as_bytes()), TokenClass::NonChinese);
        assert_eq!(classify_token(b""), TokenClass::NonChinese);
    }

    #[test]
    fn fragments() {
        let da = "大".as_bytes();
        assert_eq!(classify_token(&da[..1]), TokenClass::ByteFragment);
        assert_eq!(classify_token(&da[1..]), TokenClass::ByteFragment);
        // Tail of one character plus the head of the next: no complete character.
        let two = "大模".as_bytes();
        assert_eq!(classify_token(&two[1..4]), TokenClass::ByteFragment);
        // A whole character followed by a dangling lead byte.
        assert_eq!(classify_token(&two[..4]), TokenClass::Long);
        assert_eq!(classify_token(&[b'a', 0xE5]), TokenClass::ByteFragment);
    }

    /// Every 1- and 2-byte sequence, checked against the prefixes of the
    /// encodings of every character in the ranges.
    #[test]
    fn prefix_oracle_exhaustive() {
        for r in [
            CjkRanges::default(),
            CjkRanges::new(vec![(0x20000, 0x2A6DF), (0x4E00, 0x4E0F)]).unwrap(),
        ] {
            let mut prefixes = std::collections::HashSet::new();
            for &(lo, hi) in r.ranges() {
                for cp in lo..=hi {
                    let mut buf = [0u8; 4];
                    let bytes = char::from_u32(cp).unwrap().encode_utf8(&mut buf).as_bytes();
                    for k in 1..bytes.len() {
                        prefixes.insert(bytes[..k].to_vec());
                    }
                }
            }
            for a in 0..=255u8 {
                assert_eq!(r.is_chinese_prefix(&[a]), prefixes.contains(&vec![a]), "{a:02x}");
                for b in 0..=255u8 {
                    assert_eq!(
                        r.is_chinese_prefix(&[a, b]),
                        prefixes.contains(&vec![a, b]),
                        "{a:02x} {b:02x}"
                    );
                }
            }
        }
    }

    #[test]
    fn chinese_prefixes() {
        let r = CjkRanges::default();
        let da = "大".as_bytes();
        assert!(r.is_chinese_prefix(&da[..1]));
        assert!(r.is_chinese_prefix(&da[..2]));
        assert!(!r.is_chinese_prefix(da));
        // U+FF0C fullwidth comma: EF BC 8C. EF leads only to U+F000..U+FFFF.
        let comma = "，".as_bytes();
        assert!(!r.is_chinese_prefix(&comma[..1]));
        assert!(!r.is_chinese_prefix(b"a"));
        assert!(!r.is_chinese_prefix(&[0x80]));
        // E3 covers U+3000..U+3FFF, which overlaps Extension A.
        assert!(r.is_chinese_prefix(&[0xE3]));
        assert!(!r.is_chinese_prefix(&[0xE3, 0x80]));
        assert!(r.is_chinese_prefix(&[0xE3, 0x90]));
        // Four-byte leads only reach supplementary planes.
        assert!(!r.is_chinese_prefix(&[0xF0]));
        assert!(!r.is_chinese_prefix(&[0xF0, 0x86]));
        let ext_b = CjkRanges::new(vec![(0x20000, 0x2A6DF)]).unwrap();
        assert!(ext_b.is_chinese_prefix(&[0xF0]));
        assert!(ext_b.is_chinese_prefix(&[0xF0, 0xA0]));
        assert!(!ext_b.is_chinese_prefix(&[0xF0, 0x90]));
        // Overlong three-byte prefixes never complete to a character.
        assert!(!CjkRanges::new(vec![(0x80, 0x7FF)])
            .unwrap()
            .is_chinese_prefix(&[0xE0, 0x80]));
    }

    #[test]
    fn custom_ranges() {
        let r = CjkRanges::new(vec![(0x20000, 0x2A6DF)]).unwrap();
        assert!(r.is_chinese('\u{20000}'));
        assert!(!r.is_chinese('大'));
        assert!(CjkRanges::new(vec![(5, 4)]).is_err());
    }
}

//! Perfect-match format checking.
//!
//! A poem passes only if it has exactly the form's number of lines and every
//! line has exactly the expected number of Chinese characters. Punctuation
//! identity is not checked: "！" in place of "。" still passes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charclass::CjkRanges;
use crate::forms::PoemForm;

/// Characters that end a line, besides line breaks.
pub const DEFAULT_BOUNDARIES: [char; 6] = ['，', '。', '、', '；', '？', '！'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineCheck {
    pub expected: usize,
    pub actual: usize,
    #[serde(rename = "match")]
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passes: bool,
    pub per_line: Vec<LineCheck>,
    pub line_count_match: bool,
    /// Char indices (into the validated text) of surplus Chinese characters:
    /// the trailing excess of each over-long line, and all of any extra line.
    pub excess_positions: Vec<usize>,
}

impl ValidationReport {
    /// Zero-based index of the first mismatching line.
    pub fn first_mismatch(&self) -> Option<usize> {
        self.per_line.iter().position(|l| !l.matches)
    }

    pub fn actual_counts(&self) -> Vec<usize> {
        self.per_line.iter().map(|l| l.actual).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("cannot compute accuracy over an empty set of reports")]
    Empty,
}

/// Line splitting and counting rules.
#[derive(Debug, Clone)]
pub struct Validator {
    ranges: CjkRanges,
    boundaries: Vec<char>,
}

impl Default for Validator {
    fn default() -> Self {
        Self {
            ranges: CjkRanges::default(),
            boundaries: DEFAULT_BOUNDARIES.to_vec(),
        }
    }
}

impl Validator {
    pub fn new(ranges: CjkRanges, boundaries: Vec<char>) -> Self {
        Self { ranges, boundaries }
    }

    pub fn with_ranges(ranges: CjkRanges) -> Self {
        Self {
            ranges,
            ..Self::default()
        }
    }

    fn is_boundary(&self, c: char) -> bool {
        c == '\n' || c == '\r' || self.boundaries.contains(&c)
    }

    /// Splits on line breaks and boundary punctuation; blank segments are
    /// dropped and the rest trimmed.
    pub fn split_lines<'a>(&self, poem: &'a str) -> Vec<&'a str> {
        self.segments(poem).into_iter().map(|(_, s)| s).collect()
    }

    /// Segments with the char index at which each (untrimmed) segment starts.
    fn segments<'a>(&self, poem: &'a str) -> Vec<(usize, &'a str)> {
        let mut out = Vec::new();
        let mut start_byte = 0;
        let mut start_char = 0;
        for (ci, (bi, c)) in poem.char_indices().enumerate() {
            if self.is_boundary(c) {
                push_segment(&mut out, poem, start_byte, bi, start_char);
                start_byte = bi + c.len_utf8();
                start_char = ci + 1;
            }
        }
        push_segment(&mut out, poem, start_byte, poem.len(), start_char);
        out
    }

    pub fn validate_poem(&self, poem: &str, form: &PoemForm) -> ValidationReport {
        if let Some(own) = form.boundaries.as_ref().filter(|b| **b != self.boundaries) {
            return Validator::new(self.ranges.clone(), own.clone()).validate_poem(poem, form);
        }
        let segments = self.segments(poem);
        let rows = segments.len().max(form.lines.len());
        let mut per_line = Vec::with_capacity(rows);
        let mut excess_positions = Vec::new();
        for i in 0..rows {
            let expected = form.lines.get(i).map_or(0, |l| l.char_count);
            let (actual, positions) = match segments.get(i) {
                Some(&(start, seg)) => {
                    let positions: Vec<usize> = seg
                        .chars()
                        .enumerate()
                        .filter(|&(_, c)| self.ranges.is_chinese(c))
                        .map(|(k, _)| start + k)
                        .collect();
                    (positions.len(), positions)
                }
                None => (0, Vec::new()),
            };
            if actual > expected {
                excess_positions.extend_from_slice(&positions[expected..]);
            }
            per_line.push(LineCheck {
                expected,
                actual,
                matches: expected == actual,
            });
        }
        let line_count_match = segments.len() == form.lines.len();
        ValidationReport {
            passes: line_count_match && per_line.iter().all(|l| l.matches),
            per_line,
            line_count_match,
            excess_positions,
        }
    }

    /// Keeps only the lines that contain a Chinese character, dropping
    /// English preambles, translations and the like.
    pub fn extract_poem(&self, text: &str) -> String {
        text.lines()
            .filter(|l| l.chars().any(|c| self.ranges.is_chinese(c)))
            .map(str::trim)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn push_segment<'a>(out: &mut Vec<(usize, &'a str)>, poem: &'a str, from: usize, to: usize, start_char: usize) {
    let raw = &poem[from..to];
    let trimmed = raw.trim_start();
    if trimmed.trim_end().is_empty() {
        return;
    }
    let skipped = raw[..raw.len() - trimmed.len()].chars().count();
    out.push((start_char + skipped, trimmed.trim_end()));
}

/// Splits with the default rules.
pub fn split_lines(poem: &str) -> Vec<&str> {
    Validator::default().split_lines(poem)
}

/// Validates with the default rules.
pub fn validate_poem(poem: &str, form: &PoemForm) -> ValidationReport {
    Validator::default().validate_poem(poem, form)
}

/// Fraction of passing reports.
pub fn corpus_format_accuracy(reports: &[ValidationReport]) -> Result<f64, ValidationError> {
    if reports.is_empty() {
        return Err(ValidationError::Empty);
    }
    let passed = reports.iter().filter(|r| r.passes).count();
    Ok(passed as f64 / reports.len() as f64)
}

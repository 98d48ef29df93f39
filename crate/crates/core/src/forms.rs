//! Poem forms and masked templates.
//!
//! A form is data: an ordered list of lines, each with a character count and
//! the punctuation that closes it. The bundled registry covers the four
//! regulated SHI forms and six common CI tune patterns.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::MASK;

const BUNDLED: &str = include_str!("../data/forms.json");

#[derive(Debug, Error)]
pub enum FormError {
    #[error("form registry parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("I/O error reading form registry: {0}")]
    Io(#[from] std::io::Error),
    #[error("form {name:?} declares {declared} characters but its lines sum to {summed}")]
    TotalMismatch {
        name: String,
        declared: usize,
        summed: usize,
    },
    #[error("form {name:?} is invalid: {reason}")]
    Invalid { name: String, reason: String },
    #[error("form {0:?} appears twice in the registry")]
    Duplicate(String),
    #[error("unknown form {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "SHI")]
    Shi,
    #[serde(rename = "CI")]
    Ci,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shi => "SHI",
            Self::Ci => "CI",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpec {
    #[serde(rename = "n")]
    pub char_count: usize,
    #[serde(rename = "punct")]
    pub trailing_punct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoemForm {
    pub name: String,
    /// Native name, used by the baseline prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zh_name: Option<String>,
    pub category: Category,
    pub lines: Vec<LineSpec>,
    #[serde(rename = "total")]
    pub total_chars: usize,
    /// A well-known poem in this form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    /// Line-ending punctuation overriding the validator's default set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<char>>,
}

impl PoemForm {
    /// Builds a form from line specs, computing the total.
    pub fn new(name: impl Into<String>, category: Category, lines: Vec<LineSpec>) -> Result<Self, FormError> {
        let form = Self {
            name: name.into(),
            zh_name: None,
            category,
            total_chars: lines.iter().map(|l| l.char_count).sum(),
            lines,
            example: None,
            boundaries: None,
        };
        form.check()?;
        Ok(form)
    }

    /// SHI layout: `lines` lines of `chars` characters, "，" after odd lines
    /// and "。" after even ones.
    pub fn regulated(name: impl Into<String>, lines: usize, chars: usize) -> Result<Self, FormError> {
        let specs = (0..lines)
            .map(|i| LineSpec {
                char_count: chars,
                trailing_punct: if i % 2 == 0 { "，" } else { "。" }.to_string(),
            })
            .collect();
        Self::new(name, Category::Shi, specs)
    }

    pub fn check(&self) -> Result<(), FormError> {
        let invalid = |reason: &str| FormError::Invalid {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.trim().is_empty() {
            return Err(invalid("empty name"));
        }
        if self.lines.is_empty() {
            return Err(invalid("no lines"));
        }
        if let Some(i) = self.lines.iter().position(|l| l.char_count == 0) {
            return Err(invalid(&format!("line {} has zero characters", i + 1)));
        }
        if let Some(i) = self.lines.iter().position(|l| l.trailing_punct.is_empty()) {
            return Err(invalid(&format!("line {} has no trailing punctuation", i + 1)));
        }
        if let Some(i) = self
            .lines
            .iter()
            .position(|l| l.trailing_punct.contains('\n') || l.trailing_punct.contains(MASK))
        {
            return Err(invalid(&format!(
                "line {} punctuation contains a newline or mask",
                i + 1
            )));
        }
        let summed: usize = self.lines.iter().map(|l| l.char_count).sum();
        if summed != self.total_chars {
            return Err(FormError::TotalMismatch {
                name: self.name.clone(),
                declared: self.total_chars,
                summed,
            });
        }
        Ok(())
    }

    pub fn line_counts(&self) -> Vec<usize> {
        self.lines.iter().map(|l| l.char_count).collect()
    }

    /// Number of punctuation characters plus line breaks in the template.
    pub fn literal_count(&self) -> usize {
        let punct: usize = self.lines.iter().map(|l| l.trailing_punct.chars().count()).sum();
        punct + self.lines.len() - 1
    }

    pub fn masked_template(&self) -> MaskedTemplate {
        masked_template(self)
    }
}

/// A form rendered with `[M]` for every character; punctuation and line
/// breaks are kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskedTemplate {
    pub text: String,
}

impl MaskedTemplate {
    pub fn mask_count(&self) -> usize {
        self.text.matches(MASK).count()
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for MaskedTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

pub fn masked_template(form: &PoemForm) -> MaskedTemplate {
    let text = form
        .lines
        .iter()
        .map(|l| format!("{}{}", MASK.repeat(l.char_count), l.trailing_punct))
        .collect::<Vec<_>>()
        .join("\n");
    MaskedTemplate { text }
}

/// Forms in file order, looked up by name (ASCII case-insensitive) or by
/// native name.
#[derive(Debug, Clone, Default)]
pub struct FormRegistry {
    forms: Vec<PoemForm>,
}

impl FormRegistry {
    pub fn new(forms: Vec<PoemForm>) -> Result<Self, FormError> {
        for (i, f) in forms.iter().enumerate() {
            f.check()?;
            if forms[..i].iter().any(|g| g.name.eq_ignore_ascii_case(&f.name)) {
                return Err(FormError::Duplicate(f.name.clone()));
            }
        }
        Ok(Self { forms })
    }

    pub fn from_reader(mut source: impl Read) -> Result<Self, FormError> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, FormError> {
        let forms: Vec<PoemForm> = serde_json::from_str(text).map_err(|e| FormError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::new(forms)
    }

    /// The registry shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED).expect("bundled registry is valid")
    }

    pub fn get(&self, name: &str) -> Result<&PoemForm, FormError> {
        let name = name.trim();
        self.forms
            .iter()
            .find(|f| f.name.eq_ignore_ascii_case(name) || f.zh_name.as_deref() == Some(name))
            .ok_or_else(|| FormError::Unknown(name.to_string()))
    }

    pub fn forms(&self) -> &[PoemForm] {
        &self.forms
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.forms.iter().map(|f| f.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.forms).expect("forms serialize")
    }
}

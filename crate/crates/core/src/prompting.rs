//! Prompt layouts.
//!
//! The generation prompt wraps the user's request and the masked template in
//! a two-turn chat scaffold; the model continues right after
//! `[SOP]assistant\n`. The baseline prompt is the native-language request
//! (with an example poem of the form) used to drive general chat models.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forms::PoemForm;
use crate::validation::Validator;
use crate::vocab::{EOP, MASK, SOP};

pub const INSTRUCTION_EN: &str = "Fill in all the masks [M].";
pub const INSTRUCTION_ZH: &str = "请填写所有的掩码[M]。";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionLang {
    #[default]
    En,
    Zh,
}

impl InstructionLang {
    pub fn line(self) -> &'static str {
        match self {
            Self::En => INSTRUCTION_EN,
            Self::Zh => INSTRUCTION_ZH,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("the user prompt is empty")]
    EmptyPrompt,
    #[error("the user prompt contains the reserved marker {0}")]
    ReservedMarker(&'static str),
    #[error("the topic is empty")]
    EmptyTopic,
    #[error("form {form:?} has no example poem")]
    NoExample { form: String },
    #[error("example poem does not match form {form:?} (first bad line {line})")]
    ExampleMismatch { form: String, line: usize },
}

/// Rendered prompt text with the byte offsets of its markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub sop_positions: Vec<usize>,
    pub eop_positions: Vec<usize>,
}

impl PromptText {
    fn new(text: String) -> Self {
        let sop_positions = text.match_indices(SOP).map(|(i, _)| i).collect();
        let eop_positions = text.match_indices(EOP).map(|(i, _)| i).collect();
        Self {
            text,
            sop_positions,
            eop_positions,
        }
    }

    /// The full two-turn layout with a poem appended, as used for training
    /// data.
    pub fn with_response(&self, poem: &str) -> PromptText {
        PromptText::new(format!("{}{poem}\n{EOP}\n", self.text))
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

pub fn build_generation_prompt(user_prompt: &str, form: &PoemForm) -> Result<PromptText, PromptError> {
    build_generation_prompt_with(user_prompt, form, InstructionLang::En)
}

pub fn build_generation_prompt_with(
    user_prompt: &str,
    form: &PoemForm,
    lang: InstructionLang,
) -> Result<PromptText, PromptError> {
    if user_prompt.trim().is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    for marker in [SOP, EOP, MASK] {
        if user_prompt.contains(marker) {
            return Err(PromptError::ReservedMarker(marker));
        }
    }
    let masked = form.masked_template();
    Ok(PromptText::new(format!(
        "{SOP}user\n{}\n{user_prompt}\nOutput: {masked}\n{EOP}\n{SOP}assistant\n",
        lang.line()
    )))
}

/// Baseline request in the form's native name, with an example poem.
///
/// The example is embedded verbatim and must itself pass validation.
pub fn build_baseline_prompt(form: &PoemForm, topic: &str, example_poem: &str) -> Result<PromptText, PromptError> {
    if topic.trim().is_empty() {
        return Err(PromptError::EmptyTopic);
    }
    let report = Validator::default().validate_poem(example_poem, form);
    if !report.passes {
        return Err(PromptError::ExampleMismatch {
            form: form.name.clone(),
            line: report.first_mismatch().map_or(0, |i| i + 1),
        });
    }
    let name = form.zh_name.as_deref().unwrap_or(&form.name);
    Ok(PromptText::new(format!(
        "请写一首{name}，主题或要求为“{topic}”。请严格按照{name}对每一句话的字数要求，下面给出一个例子：\n{}",
        example_poem.trim_end()
    )))
}

/// Baseline prompt using the example stored with the form.
pub fn build_baseline_prompt_default(form: &PoemForm, topic: &str) -> Result<PromptText, PromptError> {
    let example = form.example.as_deref().ok_or_else(|| PromptError::NoExample {
        form: form.name.clone(),
    })?;
    build_baseline_prompt(form, topic, example)
}

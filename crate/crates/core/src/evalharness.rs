//! Format-accuracy tables, the accuracy-vs-length regression, and a
//! pluggable content judge.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decoding::{splitmix64, Backend, DecodeError, DecodePolicy, Decoder, GenerationRequest, StopReason};
use crate::forms::{FormError, FormRegistry};
use crate::par::{self, Execution};
use crate::validation::{ValidationReport, Validator};

pub const BUNDLED_KEYWORDS: &str = include_str!("../data/keywords.txt");
pub const BUNDLED_INSTRUCTIONS: &str = include_str!("../data/instructions.txt");
pub const JUDGE_RUBRIC_V1: &str = include_str!("../data/judge_rubric_v1.txt");

/// Stated on every report built from the bundled prompt lists.
pub const BUNDLED_PROMPTS_NOTE: &str = "bundled stand-in prompts; the original evaluation prompts were never published";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Form(#[from] FormError),
    #[error("evaluation setting has no prompts")]
    NoPrompts,
    #[error("evaluation setting has no forms")]
    NoForms,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("regression needs at least two distinct x values")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Keyword,
    Instruction,
}

impl EvalMode {
    pub const ALL: [EvalMode; 2] = [EvalMode::Keyword, EvalMode::Instruction];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Keyword => "keyword",
            Self::Instruction => "instruction",
        }
    }

    pub fn bundled_prompts(self) -> Vec<String> {
        let text = match self {
            Self::Keyword => BUNDLED_KEYWORDS,
            Self::Instruction => BUNDLED_INSTRUCTIONS,
        };
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSetting {
    pub mode: EvalMode,
    pub prompts: Vec<String>,
    pub forms: Vec<String>,
    /// Where the prompts came from, carried into the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_note: Option<String>,
}

impl EvalSetting {
    pub fn new(mode: EvalMode, prompts: Vec<String>, forms: Vec<String>) -> Self {
        Self {
            mode,
            prompts,
            forms,
            prompt_note: None,
        }
    }

    /// Every registry form against the bundled prompt list for `mode`.
    pub fn bundled(mode: EvalMode, registry: &FormRegistry) -> Self {
        Self {
            mode,
            prompts: mode.bundled_prompts(),
            forms: registry.names().map(String::from).collect(),
            prompt_note: Some(BUNDLED_PROMPTS_NOTE.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Backend,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub kind: FailureKind,
    pub message: String,
}

/// One generated poem and its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// `form/mode/index`, unique within a report.
    pub key: String,
    pub form: String,
    pub mode: EvalMode,
    pub prompt_index: usize,
    pub prompt: String,
    pub seed: u64,
    pub poem: String,
    pub passes: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<TrialFailure>,
}

impl TrialRecord {
    pub fn is_backend_failure(&self) -> bool {
        matches!(&self.failure, Some(f) if f.kind == FailureKind::Backend)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub form: String,
    pub chars: usize,
    pub mode: EvalMode,
    pub accuracy: f64,
    pub n: usize,
    pub passes: usize,
    pub backend_failures: usize,
}

/// Accuracy per (form, mode), in registry order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub cells: Vec<AccuracyCell>,
}

impl AccuracyTable {
    pub fn get(&self, form: &str, mode: EvalMode) -> Option<&AccuracyCell> {
        self.cells.iter().find(|c| c.form == form && c.mode == mode)
    }

    /// Rows in first-seen order: (form, chars).
    fn rows(&self) -> Vec<(&str, usize)> {
        let mut rows: Vec<(&str, usize)> = Vec::new();
        for c in &self.cells {
            if !rows.iter().any(|(f, _)| *f == c.form) {
                rows.push((&c.form, c.chars));
            }
        }
        rows
    }

    /// Mean accuracy over the forms that have a cell for `mode`.
    pub fn average(&self, mode: EvalMode) -> Option<f64> {
        let accs: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.mode == mode)
            .map(|c| c.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// (chars, accuracy) points for one column.
    pub fn regression_points(&self, mode: EvalMode) -> Vec<RegressionPoint> {
        self.cells
            .iter()
            .filter(|c| c.mode == mode)
            .map(|c| RegressionPoint {
                chars: c.chars,
                accuracy: c.accuracy,
            })
            .collect()
    }

    /// Plain-text table: one row per form, `keyword / instruction` cells,
    /// `-` where a mode was not run, and an average row.
    pub fn render(&self) -> String {
        let rows = self.rows();
        let cell = |v: Option<f64>, digits: usize| match v {
            Some(v) => format!("{v:.digits$}"),
            None => "-".to_string(),
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>6}  keyword / instruction", "Format Type", "#Chars");
        for (form, chars) in &rows {
            let k = self.get(form, EvalMode::Keyword).map(|c| c.accuracy);
            let i = self.get(form, EvalMode::Instruction).map(|c| c.accuracy);
            let _ = writeln!(out, "{form:<18} {chars:>6}  {} / {}", cell(k, 2), cell(i, 2));
        }
        if !rows.is_empty() {
            let mean_chars = rows.iter().map(|r| r.1).sum::<usize>() as f64 / rows.len() as f64;
            let _ = writeln!(
                out,
                "{:<18} {:>6.1}  {} / {}",
                "Avg",
                mean_chars,
                cell(self.average(EvalMode::Keyword), 3),
                cell(self.average(EvalMode::Instruction), 3)
            );
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub table: AccuracyTable,
    pub trials: Vec<TrialRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Appends another report's cells, trials and notes.
    pub fn extend(&mut self, other: EvalReport) {
        self.table.cells.extend(other.table.cells);
        self.trials.extend(other.trials);
        for note in other.notes {
            if !self.notes.contains(&note) {
                self.notes.push(note);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub execution: Execution,
    /// Drop backend failures from each cell's denominator. Off by default,
    /// so failures count against accuracy.
    pub exclude_backend_failures: bool,
}

/// Seed for one trial, derived from the policy seed and the trial's
/// coordinates so that results do not depend on scheduling.
pub fn trial_seed(base: u64, mode: EvalMode, form_index: usize, prompt_index: usize) -> u64 {
    let coords = ((mode as u64) << 62) ^ ((form_index as u64) << 32) ^ prompt_index as u64;
    splitmix64(base ^ splitmix64(coords))
}

/// Generates and validates one poem per (form, prompt).
pub fn run_format_eval(
    setting: &EvalSetting,
    registry: &FormRegistry,
    decoder: &Decoder,
    backend: &dyn Backend,
    policy: &DecodePolicy,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if setting.prompts.is_empty() {
        return Err(EvalError::NoPrompts);
    }
    if setting.forms.is_empty() {
        return Err(EvalError::NoForms);
    }
    let forms = setting
        .forms
        .iter()
        .map(|name| registry.get(name))
        .collect::<Result<Vec<_>, _>>()?;
    for form in &forms {
        policy.validate(form)?;
    }
    if backend.vocab_size() != decoder.vocab().len() {
        return Err(DecodeError::VocabMismatch {
            backend: backend.vocab_size(),
            vocab: decoder.vocab().len(),
        }
        .into());
    }

    let validator = Validator::with_ranges(decoder.vocab().ranges().clone());
    let jobs: Vec<(usize, usize)> = (0..forms.len())
        .flat_map(|f| (0..setting.prompts.len()).map(move |p| (f, p)))
        .collect();

    let results = par::map(&jobs, options.execution, |&(f, p)| {
        let form = forms[f];
        let prompt = &setting.prompts[p];
        let seed = trial_seed(policy.seed, setting.mode, f, p);
        let mut record = TrialRecord {
            key: format!("{}/{}/{p:03}", form.name, setting.mode.as_str()),
            form: form.name.clone(),
            mode: setting.mode,
            prompt_index: p,
            prompt: prompt.clone(),
            seed,
            poem: String::new(),
            passes: false,
            report: None,
            stop_reason: None,
            failure: None,
        };
        let request = GenerationRequest {
            user_prompt: prompt,
            form,
        };
        match decoder.generate(&request, backend, &policy.with_seed(seed)) {
            Ok(result) => {
                let report = validator.validate_poem(&result.text, form);
                record.passes = report.passes;
                record.report = Some(report);
                record.stop_reason = Some(result.stop_reason);
                record.poem = result.text;
            }
            Err(err @ (DecodeError::Backend { .. } | DecodeError::AllForbidden { .. })) => {
                let kind = match err {
                    DecodeError::Backend { .. } => FailureKind::Backend,
                    _ => FailureKind::Decode,
                };
                record.poem = err.partial_text().unwrap_or_default().to_string();
                record.failure = Some(TrialFailure {
                    kind,
                    message: err.to_string(),
                });
            }
            Err(other) => return Err(other),
        }
        Ok(record)
    });
    let trials = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let cells = forms
        .iter()
        .map(|form| {
            let mine: Vec<&TrialRecord> = trials.iter().filter(|t| t.form == form.name).collect();
            let backend_failures = mine.iter().filter(|t| t.is_backend_failure()).count();
            let passes = mine.iter().filter(|t| t.passes).count();
            let n = if options.exclude_backend_failures {
                mine.len() - backend_failures
            } else {
                mine.len()
            };
            AccuracyCell {
                form: form.name.clone(),
                chars: form.total_chars,
                mode: setting.mode,
                accuracy: if n == 0 { 0.0 } else { passes as f64 / n as f64 },
                n,
                passes,
                backend_failures,
            }
        })
        .collect();

    Ok(EvalReport {
        table: AccuracyTable { cells },
        trials,
        notes: setting.prompt_note.iter().cloned().collect(),
    })
}

// ---------------------------------------------------------------------------
// Regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionPoint {
    pub chars: usize,
    pub accuracy: f64,
}

impl From<(usize, f64)> for RegressionPoint {
    fn from((chars, accuracy): (usize, f64)) -> Self {
        Self { chars, accuracy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Change in accuracy per additional character.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn predict(&self, chars: f64) -> f64 {
        self.intercept + self.slope * chars
    }
}

/// Ordinary least squares of accuracy on character count.
pub fn fit_accuracy_regression(points: &[RegressionPoint]) -> Result<RegressionFit, EvalError> {
    let n = points.len();
    if n < 2 {
        return Err(EvalError::Degenerate);
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.chars as f64).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.accuracy).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p.chars as f64 - mx;
        let dy = p.accuracy - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(EvalError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r2,
        n,
    })
}

/// Published format accuracies, `(keyword, instruction)` per system. These
/// come from a finetuned 7B model and GPT-4 and are not reproducible here;
/// they exist for side-by-side rendering and for the regression check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub form: &'static str,
    pub chars: usize,
    pub gpt4: (f64, f64),
    pub jiuge_gpt2: (f64, Option<f64>),
    pub qwen_finetuned: (f64, f64),
    pub token_free: (f64, f64),
}

const fn row(
    form: &'static str,
    chars: usize,
    gpt4: (f64, f64),
    jiuge: f64,
    qwen: (f64, f64),
    token_free: (f64, f64),
) -> ReferenceRow {
    ReferenceRow {
        form,
        chars,
        gpt4,
        jiuge_gpt2: (jiuge, None),
        qwen_finetuned: qwen,
        token_free,
    }
}

pub const REFERENCE_ACCURACY: [ReferenceRow; 10] = [
    row("Wuyanjueju", 20, (0.49, 0.73), 1.00, (0.94, 1.00), (0.98, 0.99)),
    row("Wuyanlvshi", 40, (0.29, 0.36), 1.00, (0.97, 0.98), (0.97, 0.99)),
    row("Qiyanjueju", 28, (0.88, 0.78), 1.00, (0.99, 1.00), (1.00, 1.00)),
    row("Qiyanlvshi", 56, (0.81, 0.68), 1.00, (0.98, 0.96), (0.97, 0.98)),
    row("Rumengling", 33, (0.13, 0.09), 0.90, (0.95, 0.97), (1.00, 0.99)),
    row("Jianzimulanhua", 44, (0.81, 0.79), 0.96, (0.99, 0.97), (1.00, 0.99)),
    row("Qingpingyue", 46, (0.13, 0.18), 0.96, (0.98, 0.97), (0.95, 0.99)),
    row("Dielianhua", 60, (0.21, 0.12), 0.91, (0.94, 0.98), (0.99, 0.98)),
    row("Manjianghong", 93, (0.07, 0.04), 0.83, (0.88, 0.90), (0.95, 0.95)),
    row("Qinyuanchun", 114, (0.00, 0.01), 0.55, (0.64, 0.75), (0.82, 0.86)),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSystem {
    Gpt4,
    JiugeGpt2,
    QwenFinetuned,
    TokenFree,
}

/// Regression points for one published column. The Jiuge-GPT-2 column has
/// no instruction values, so that combination is empty.
pub fn reference_points(system: ReferenceSystem, mode: EvalMode) -> Vec<RegressionPoint> {
    REFERENCE_ACCURACY
        .iter()
        .filter_map(|r| {
            let pair = match system {
                ReferenceSystem::Gpt4 => (r.gpt4.0, Some(r.gpt4.1)),
                ReferenceSystem::JiugeGpt2 => r.jiuge_gpt2,
                ReferenceSystem::QwenFinetuned => (r.qwen_finetuned.0, Some(r.qwen_finetuned.1)),
                ReferenceSystem::TokenFree => (r.token_free.0, Some(r.token_free.1)),
            };
            let acc = match mode {
                EvalMode::Keyword => Some(pair.0),
                EvalMode::Instruction => pair.1,
            }?;
            Some(RegressionPoint {
                chars: r.chars,
                accuracy: acc,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Content judging

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentScores {
    pub fluency: f64,
    pub meaning: f64,
    pub coherence: f64,
    pub relevance: f64,
    pub aesthetics: f64,
}

impl ContentScores {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.fluency,
            self.meaning,
            self.coherence,
            self.relevance,
            self.aesthetics,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            fluency: v[0],
            meaning: v[1],
            coherence: v[2],
            relevance: v[3],
            aesthetics: v[4],
        }
    }

    /// Criterion-wise mean; `None` for an empty slice.
    pub fn mean(scores: &[ContentScores]) -> Option<ContentScores> {
        if scores.is_empty() {
            return None;
        }
        let mut sum = [0.0; 5];
        for s in scores {
            for (acc, v) in sum.iter_mut().zip(s.as_array()) {
                *acc += v;
            }
        }
        Some(Self::from_array(sum.map(|v| v / scores.len() as f64)))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JudgeError {
    #[error("judge transport failed: {0}")]
    Transport(String),
    #[error("judge reply has no line with five scores in [1, 5]: {0:?}")]
    Unparseable(String),
    #[error("cassette: {0}")]
    Cassette(String),
}

/// Anything that answers a rubric prompt with text.
pub trait Judge: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError>;
}

impl<J: Judge + ?Sized> Judge for &J {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        (**self).complete(prompt)
    }
}

impl<J: Judge + ?Sized> Judge for Box<J> {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        (**self).complete(prompt)
    }
}

/// File name of the recording for `prompt`.
pub fn cassette_key(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest[..16].iter().map(|b| format!("{b:02x}")).collect::<String>() + ".txt"
}

/// Answers from recordings in a directory; fails on a miss.
#[derive(Debug, Clone)]
pub struct ReplayJudge {
    dir: PathBuf,
}

impl ReplayJudge {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Stores `reply` as the recording for `prompt`.
    pub fn insert(&self, prompt: &str, reply: &str) -> Result<(), JudgeError> {
        fs::create_dir_all(&self.dir).map_err(|e| JudgeError::Cassette(e.to_string()))?;
        fs::write(self.dir.join(cassette_key(prompt)), reply).map_err(|e| JudgeError::Cassette(e.to_string()))
    }
}

impl Judge for ReplayJudge {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        let path = self.dir.join(cassette_key(prompt));
        fs::read_to_string(&path).map_err(|e| JudgeError::Cassette(format!("{}: {e}", path.display())))
    }
}

/// Forwards to an inner judge and records every reply.
#[derive(Debug, Clone)]
pub struct RecordingJudge<J> {
    inner: J,
    store: ReplayJudge,
}

impl<J: Judge> RecordingJudge<J> {
    pub fn new(inner: J, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            store: ReplayJudge::new(dir),
        }
    }
}

impl<J: Judge> Judge for RecordingJudge<J> {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        let reply = self.inner.complete(prompt)?;
        self.store.insert(prompt, &reply)?;
        Ok(reply)
    }
}

pub fn render_rubric(poem: &str, user_prompt: &str) -> String {
    JUDGE_RUBRIC_V1
        .replace("{user_prompt}", user_prompt.trim())
        .replace("{poem}", poem.trim())
}

/// Takes the last line holding exactly five numbers, all in [1, 5].
pub fn parse_scores(reply: &str) -> Result<ContentScores, JudgeError> {
    for line in reply.lines().rev() {
        let nums: Vec<f64> = line
            .split(|c: char| !(c.is_ascii_digit() || c == '.'))
            .filter(|t| !t.is_empty() && *t != ".")
            .filter_map(|t| t.parse().ok())
            .collect();
        if nums.len() == 5 && nums.iter().all(|v| (1.0..=5.0).contains(v)) {
            return Ok(ContentScores::from_array([nums[0], nums[1], nums[2], nums[3], nums[4]]));
        }
    }
    Err(JudgeError::Unparseable(reply.chars().take(200).collect()))
}

/// Scores one poem, asking a second time if the first reply is unparseable.
pub fn judge_content(poem: &str, user_prompt: &str, judge: &dyn Judge) -> Result<ContentScores, JudgeError> {
    let prompt = render_rubric(poem, user_prompt);
    let first = judge.complete(&prompt)?;
    parse_scores(&first).or_else(|_| parse_scores(&judge.complete(&prompt)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeItem {
    pub poem: String,
    pub user_prompt: String,
}

/// Judges many poems with at most `concurrency` requests in flight.
pub fn judge_batch(
    items: &[JudgeItem],
    judge: &dyn Judge,
    execution: Execution,
    concurrency: usize,
) -> Vec<Result<ContentScores, JudgeError>> {
    par::map_bounded(items, execution, concurrency.max(1), |item| {
        judge_content(&item.poem, &item.user_prompt, judge)
    })
}

/// Per-mode counts of records by outcome, for summaries.
pub fn outcome_counts(trials: &[TrialRecord]) -> BTreeMap<(EvalMode, &'static str), usize> {
    let mut out = BTreeMap::new();
    for t in trials {
        let label = match (&t.failure, t.passes) {
            (Some(f), _) if f.kind == FailureKind::Backend => "backend_failure",
            (Some(_), _) => "decode_failure",
            (None, true) => "pass",
            (None, false) => "fail",
        };
        *out.entry((t.mode, label)).or_insert(0) += 1;
    }
    out
}

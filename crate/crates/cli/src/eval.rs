use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context as _};
use clap::{Subcommand, ValueEnum};
use poetgen_core::evalharness::{
    fit_accuracy_regression, judge_batch, reference_points, run_format_eval, ContentScores, EvalMode, EvalOptions,
    EvalReport, EvalSetting, Judge, JudgeItem, RecordingJudge, ReferenceSystem, ReplayJudge,
};
use poetgen_core::Execution;
use serde_json::json;

use crate::backend::BackendSpec;
use crate::judge::HttpJudge;
use crate::Env;

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Generate and validate one poem per (form, prompt) and tabulate accuracy.
    Format {
        #[arg(long)]
        backend: Option<BackendSpec>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Mode::Keyword, Mode::Instruction])]
        modes: Vec<Mode>,
        /// Restrict to these forms; all registry forms when absent.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Use at most this many prompts per setting.
        #[arg(long)]
        prompts: Option<usize>,
        /// Keyword prompts, one per line, instead of the bundled list.
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// Instruction prompts, one per line, instead of the bundled list.
        #[arg(long)]
        instructions: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict: bool,
        /// Leave trials whose backend failed out of the accuracy denominator.
        #[arg(long)]
        exclude_backend_failures: bool,
        /// Run trials one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Fit accuracy against poem length.
    Regress {
        /// A report written by `eval format`.
        #[arg(long = "in", conflicts_with = "reference", required_unless_present = "reference")]
        input: Option<PathBuf>,
        /// A published column instead of a local report.
        #[arg(long, value_enum)]
        reference: Option<System>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Score poems on the five-criterion content rubric.
    Judge {
        /// JSON lines of `{poem, user_prompt}`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Replay replies from this directory, or record into it with --record.
        #[arg(long)]
        cassette: Option<PathBuf>,
        #[arg(long, requires = "cassette")]
        record: bool,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Keyword,
    Instruction,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Keyword => EvalMode::Keyword,
            Mode::Instruction => EvalMode::Instruction,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum System {
    Gpt4,
    JiugeGpt2,
    QwenFinetuned,
    TokenFree,
}

impl From<System> for ReferenceSystem {
    fn from(s: System) -> Self {
        match s {
            System::Gpt4 => ReferenceSystem::Gpt4,
            System::JiugeGpt2 => ReferenceSystem::JiugeGpt2,
            System::QwenFinetuned => ReferenceSystem::QwenFinetuned,
            System::TokenFree => ReferenceSystem::TokenFree,
        }
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn read_prompts(path: &PathBuf) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn run(env: &Env, cmd: EvalCommand) -> anyhow::Result<()> {
    match cmd {
        EvalCommand::Format {
            backend,
            out,
            modes,
            only,
            prompts,
            keywords,
            instructions,
            seed,
            strict,
            exclude_backend_failures,
            sequential,
        } => {
            let registry = env.registry()?;
            for name in &only {
                registry.get(name)?;
            }
            let vocab = env.vocab()?;
            let backend = BackendSpec::resolve(backend).build(&vocab)?;
            let decoder = env.decoder(vocab, None)?;
            let mut policy = env.config.decode;
            policy.template_enforce |= strict;
            if let Some(seed) = seed {
                policy.seed = seed;
            }
            let options = EvalOptions {
                execution: execution(sequential),
                exclude_backend_failures,
            };
            let mut report = EvalReport::default();
            for mode in modes {
                let mode = EvalMode::from(mode);
                let custom = match mode {
                    EvalMode::Keyword => keywords.as_ref(),
                    EvalMode::Instruction => instructions.as_ref(),
                };
                let mut setting = match custom {
                    Some(path) => {
                        EvalSetting::new(mode, read_prompts(path)?, registry.names().map(String::from).collect())
                    }
                    None => EvalSetting::bundled(mode, &registry),
                };
                if !only.is_empty() {
                    setting.forms = only.clone();
                }
                if let Some(n) = prompts {
                    setting.prompts.truncate(n);
                }
                report.extend(run_format_eval(
                    &setting,
                    &registry,
                    &decoder,
                    backend.as_ref(),
                    &policy,
                    &options,
                )?);
            }
            fs::write(&out, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("writing {}", out.display()))?;
            print!("{}", report.table.render());
            for note in &report.notes {
                eprintln!("note: {note}");
            }
        }
        EvalCommand::Regress { input, reference, mode } => {
            let modes: Vec<EvalMode> = match mode {
                Some(m) => vec![m.into()],
                None => EvalMode::ALL.to_vec(),
            };
            let report = match &input {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    Some(serde_json::from_str::<EvalReport>(&text)?)
                }
                None => None,
            };
            let mut fitted = 0;
            for mode in modes {
                let (source, points) = match (&report, reference) {
                    (Some(r), _) => ("report".to_string(), r.table.regression_points(mode)),
                    (None, Some(s)) => (format!("{s:?}"), reference_points(s.into(), mode)),
                    (None, None) => unreachable!("clap requires --in or --reference"),
                };
                if points.is_empty() {
                    continue;
                }
                let fit = fit_accuracy_regression(&points)?;
                println!(
                    "{}",
                    json!({
                        "mode": mode.as_str(),
                        "source": source,
                        "slope": fit.slope,
                        "intercept": fit.intercept,
                        "r2": fit.r2,
                        "n": fit.n,
                    })
                );
                fitted += 1;
            }
            if fitted == 0 {
                bail!("no accuracy points to fit");
            }
        }
        EvalCommand::Judge {
            input,
            cassette,
            record,
            concurrency,
            sequential,
        } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let items: Vec<JudgeItem> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()?;
            let judge: Box<dyn Judge> = match (cassette, record) {
                (Some(dir), true) => Box::new(RecordingJudge::new(HttpJudge::from_env()?, dir)),
                (Some(dir), false) => Box::new(ReplayJudge::new(dir)),
                (None, _) => Box::new(HttpJudge::from_env()?),
            };
            let concurrency = concurrency.unwrap_or(env.config.concurrency);
            let results = judge_batch(&items, judge.as_ref(), execution(sequential), concurrency);
            let mut scored = Vec::new();
            for (index, result) in results.into_iter().enumerate() {
                match result {
                    Ok(scores) => {
                        println!("{}", json!({"index": index, "scores": scores}));
                        scored.push(scores);
                    }
                    Err(e) => println!("{}", json!({"index": index, "error": e.to_string()})),
                }
            }
            let failed = items.len() - scored.len();
            println!(
                "{}",
                json!({"judged": scored.len(), "failed": failed, "mean": ContentScores::mean(&scored)})
            );
            if failed > 0 {
                bail!("{failed} of {} poems could not be judged", items.len());
            }
        }
    }
    Ok(())
}

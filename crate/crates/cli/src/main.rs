mod backend;
mod eval;
mod judge;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use poetgen_core::decoding::{Decoder, GenerationRequest};
use poetgen_core::logitmask::Penalty;
use poetgen_core::probe::{build_probe_set, probe_prompt, read_items, score_probe, write_items};
use poetgen_core::prompting::{
    build_baseline_prompt, build_baseline_prompt_default, build_generation_prompt_with, InstructionLang,
};
use poetgen_core::validation::corpus_format_accuracy;
use poetgen_core::{Config, FormRegistry, PrunedVocabulary, Vocabulary};
use poetgen_server::{AppState, ServiceConfig};
use serde_json::json;

use backend::BackendSpec;

#[derive(Debug, Parser)]
#[command(
    name = "poetgen",
    version,
    about = "Token-free generation of Chinese classical poetry"
)]
struct Cli {
    /// TOML config; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Vocabulary JSON; the bundled demo vocabulary is used when absent.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Form registry JSON; the ten bundled forms are used when absent.
    #[arg(long, global = true)]
    forms: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drop merges that produce long tokens and write the long-token mask.
    Prune {
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Forms(FormsCommand),
    #[command(subcommand)]
    Prompt(PromptCommand),
    /// Generate one poem.
    Generate(GenerateArgs),
    /// Validate blank-line separated poems against a form.
    Validate {
        #[arg(long)]
        form: String,
        #[arg(long)]
        file: PathBuf,
        /// Keep only lines containing Chinese characters before validating.
        #[arg(long)]
        extract: bool,
    },
    #[command(subcommand)]
    Probe(ProbeCommand),
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum FormsCommand {
    /// Names, totals and line counts of every form.
    List {
        #[arg(long)]
        json: bool,
    },
    /// The masked template of one form.
    Template { name: String },
}

#[derive(Debug, Subcommand)]
enum PromptCommand {
    /// The exact generation prompt fed to the model.
    Build {
        #[arg(long)]
        form: String,
        #[arg(long)]
        text: String,
        #[arg(long, value_enum)]
        lang: Option<Lang>,
    },
    /// The few-shot prompt used for token-based baselines.
    Baseline {
        #[arg(long)]
        form: String,
        #[arg(long)]
        topic: String,
        /// Example poem; the bundled Rumengling example when absent.
        #[arg(long)]
        example: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Lang {
    En,
    Zh,
}

impl From<Lang> for InstructionLang {
    fn from(l: Lang) -> Self {
        match l {
            Lang::En => InstructionLang::En,
            Lang::Zh => InstructionLang::Zh,
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    form: String,
    #[arg(long)]
    prompt: String,
    /// Force every line to the form's character count.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// ngram, uniform, scripted:<file> or remote:<host:port>.
    #[arg(long)]
    backend: Option<BackendSpec>,
    #[arg(long, allow_negative_numbers = true)]
    mask_penalty: Option<f64>,
    /// Print the poem with its report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum ProbeCommand {
    /// Split eligible long tokens into test and train items.
    Build {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also probe tokens that mix Chinese with other characters.
        #[arg(long)]
        include_mixed: bool,
    },
    /// Score model outputs, one per line, against probe items.
    Score {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        outputs: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long)]
    backend: Option<BackendSpec>,
    /// Serve the built web UI from this directory.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Allowed CORS origin; repeat for several. Any origin when absent.
    #[arg(long)]
    cors_origin: Vec<String>,
}

/// Everything loaded from the global flags.
pub struct Env {
    pub config: Config,
    vocab_path: Option<PathBuf>,
    forms_path: Option<PathBuf>,
}

impl Env {
    fn load(cli: &Cli) -> anyhow::Result<Self> {
        let config = match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        Ok(Self {
            config,
            vocab_path: cli.vocab.clone(),
            forms_path: cli.forms.clone(),
        })
    }

    pub fn vocab(&self) -> anyhow::Result<Arc<PrunedVocabulary>> {
        let base = match &self.vocab_path {
            Some(path) => {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Vocabulary::from_reader(std::io::BufReader::new(file))?
            }
            None => Vocabulary::demo(),
        };
        Ok(Arc::new(base.prune_with(self.config.cjk_ranges.clone())))
    }

    pub fn registry(&self) -> anyhow::Result<FormRegistry> {
        match &self.forms_path {
            Some(path) => {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Ok(FormRegistry::from_reader(file)?)
            }
            None => Ok(FormRegistry::bundled()),
        }
    }

    pub fn decoder(&self, vocab: Arc<PrunedVocabulary>, penalty: Option<f64>) -> anyhow::Result<Decoder> {
        let penalty = match penalty {
            Some(p) => Penalty::new(p)?,
            None => self.config.penalty()?,
        };
        Ok(Decoder::new(vocab)?
            .with_penalty(penalty)
            .with_instruction_lang(self.config.instruction_lang))
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,poetgen_server=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let env = Env::load(&cli)?;
    match cli.command {
        Command::Prune { out } => prune(&env, &out),
        Command::Forms(cmd) => forms(&env, cmd),
        Command::Prompt(cmd) => prompt(&env, cmd),
        Command::Generate(args) => generate(&env, args),
        Command::Validate { form, file, extract } => validate(&env, &form, &file, extract),
        Command::Probe(cmd) => probe(&env, cmd),
        Command::Eval(cmd) => eval::run(&env, cmd),
        Command::Serve(args) => serve(&env, args),
    }
}

fn prune(env: &Env, out: &Path) -> anyhow::Result<()> {
    let vocab = env.vocab()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("merges.txt"), vocab.merges_text())?;
    let mask: String = vocab.long_set().iter().map(|id| format!("{id}\n")).collect();
    fs::write(out.join("long_tokens.txt"), mask)?;
    let summary = json!({
        "entries": vocab.len(),
        "merges": vocab.vocabulary().merges().len(),
        "surviving_merges": vocab.surviving_merges().len(),
        "long_tokens": vocab.long_set().len(),
    });
    println!("{summary}");
    Ok(())
}

fn forms(env: &Env, cmd: FormsCommand) -> anyhow::Result<()> {
    let registry = env.registry()?;
    match cmd {
        FormsCommand::List { json: true } => println!("{}", registry.to_json()),
        FormsCommand::List { json: false } => {
            for f in registry.forms() {
                println!("{:<16} {:>4}  {:?}", f.name, f.total_chars, f.line_counts());
            }
        }
        FormsCommand::Template { name } => println!("{}", registry.get(&name)?.masked_template().as_str()),
    }
    Ok(())
}

fn prompt(env: &Env, cmd: PromptCommand) -> anyhow::Result<()> {
    let registry = env.registry()?;
    let text = match cmd {
        PromptCommand::Build { form, text, lang } => {
            let lang = lang.map_or(env.config.instruction_lang, Into::into);
            build_generation_prompt_with(&text, registry.get(&form)?, lang)?
        }
        PromptCommand::Baseline { form, topic, example } => {
            let form = registry.get(&form)?;
            match example {
                Some(path) => build_baseline_prompt(form, &topic, fs::read_to_string(path)?.trim_end())?,
                None => build_baseline_prompt_default(form, &topic)?,
            }
        }
    };
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_str().as_bytes())?;
    stdout.flush()?;
    Ok(())
}

fn generate(env: &Env, args: GenerateArgs) -> anyhow::Result<()> {
    let registry = env.registry()?;
    let form = registry.get(&args.form)?;
    let vocab = env.vocab()?;
    let backend = BackendSpec::resolve(args.backend).build(&vocab)?;
    let decoder = env.decoder(vocab, args.mask_penalty)?;
    let mut policy = env.config.decode;
    policy.template_enforce |= args.strict;
    if let Some(seed) = args.seed {
        policy.seed = seed;
    }
    let request = GenerationRequest {
        user_prompt: &args.prompt,
        form,
    };
    let result = decoder.generate(&request, backend.as_ref(), &policy)?;
    let report = env.config.validator().validate_poem(&result.text, form);
    if args.json {
        let out = json!({
            "poem": result.text,
            "report": report,
            "stop_reason": result.stop_reason,
            "seed": policy.seed,
            "masked_template": form.masked_template().as_str(),
        });
        println!("{out}");
    } else {
        println!("{}", result.text);
        let verdict = if report.passes { "format OK" } else { "format mismatch" };
        eprintln!("{verdict}: {:?} for {:?}", report.actual_counts(), form.line_counts());
    }
    Ok(())
}

fn validate(env: &Env, form: &str, file: &Path, extract: bool) -> anyhow::Result<()> {
    let registry = env.registry()?;
    let form = registry.get(form)?;
    let validator = env.config.validator();
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let reports: Vec<_> = text
        .split("\n\n")
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .map(|block| {
            let poem = if extract {
                validator.extract_poem(block)
            } else {
                block.to_string()
            };
            validator.validate_poem(&poem, form)
        })
        .collect();
    for r in &reports {
        println!("{}", serde_json::to_string(r)?);
    }
    let accuracy = corpus_format_accuracy(&reports)?;
    let passed = reports.iter().filter(|r| r.passes).count();
    println!(
        "{}",
        json!({"poems": reports.len(), "passed": passed, "accuracy": accuracy})
    );
    Ok(())
}

fn probe(env: &Env, cmd: ProbeCommand) -> anyhow::Result<()> {
    match cmd {
        ProbeCommand::Build {
            n,
            seed,
            out,
            include_mixed,
        } => {
            let vocab = env.vocab()?;
            let split = build_probe_set(vocab.vocabulary(), n, seed, &env.config.cjk_ranges, include_mixed)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("test.jsonl"), write_items(&split.test))?;
            fs::write(out.join("train.jsonl"), write_items(&split.train))?;
            let prompts: String = split
                .test
                .iter()
                .map(|i| serde_json::to_string(&probe_prompt(i)).map(|s| s + "\n"))
                .collect::<Result<_, _>>()?;
            fs::write(out.join("prompts.jsonl"), prompts)?;
            println!("{}", json!({"test": split.test.len(), "train": split.train.len()}));
        }
        ProbeCommand::Score { items, outputs } => {
            let items = read_items(&fs::read_to_string(&items)?)?;
            for item in &items {
                item.check(&env.config.cjk_ranges)?;
            }
            let outputs: Vec<String> = fs::read_to_string(&outputs)?
                .lines()
                .map(|l| l.trim().to_string())
                .collect();
            if outputs.len() != items.len() {
                bail!("{} items but {} output lines", items.len(), outputs.len());
            }
            println!("{}", serde_json::to_string(&score_probe(&items, &outputs)?)?);
        }
    }
    Ok(())
}

fn serve(env: &Env, args: ServeArgs) -> anyhow::Result<()> {
    let vocab = env.vocab()?;
    let backend = BackendSpec::resolve(args.backend).build(&vocab)?;
    let decoder = env.decoder(vocab, None)?;
    let config = ServiceConfig {
        max_prompt_chars: env.config.max_prompt_chars,
        concurrency: env.config.concurrency,
        policy: env.config.decode,
        cors_origins: args.cors_origin,
        static_dir: args.static_dir,
    };
    let state = AppState::new(env.registry()?, decoder, backend, env.config.validator(), config);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        poetgen_server::serve(listener, state).await?;
        Ok(())
    })
}

//! Command-line interface: validate, enumerate, decode, bench-mask and
//! train-weaksup over the semparse library.
//!
//! Exit codes: 0 success, 1 usage error, 2 input parse error, 3 runtime
//! contract violation.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use semparse::candexpr::{parse_cand_file, CandidateSet, Manifest};
use semparse::constrain::{bench, Constrainer, ConstraintFn};
use semparse::decode::{
    beam_search, enumerate_complete, greedy_decode, DecodeConfig, Scorer, TableScorer,
    UniformScorer,
};
use semparse::grammar::{parse_grammar, Grammar};
use semparse::ir::TemplateKind;
use semparse::learn::{
    parse_dataset, run_weaksup, train_strong, LogLinearModel, MiniKb, WeaksupConfig,
};
use semparse::vocab::Vocabulary;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "semparse",
    version,
    about = "Grammar-driven constrained decoding for semantic parsing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a grammar, vocabulary and candidate files; report inventory
    /// counts and lints.
    Validate(GrammarArgs),
    /// List every complete logical form reachable within a step bound.
    Enumerate {
        #[command(flatten)]
        grammar: GrammarArgs,
        /// Maximum number of actions per sequence (safety bound 24).
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value = "hybr")]
        constraint: String,
        /// Template family to print: default or visual.
        #[arg(long, default_value = "default")]
        output: String,
    },
    /// Decode utterances from standard input, one per line.
    Decode {
        #[command(flatten)]
        grammar: GrammarArgs,
        #[arg(long, default_value = "hybr")]
        constraint: String,
        /// Beam size; 1 means greedy search.
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = 64)]
        max_steps: usize,
        /// Scorer: uniform, table:<file> or loglinear:<file>.
        #[arg(long, default_value = "uniform")]
        scorer: String,
        /// Output per line: default, visual or actions.
        #[arg(long, default_value = "default")]
        output: String,
    },
    /// Time mask-tensor construction strategies on a synthetic inventory
    /// and emit CSV.
    BenchMask {
        /// Total action inventory size |A|.
        #[arg(long, default_value_t = 50_261)]
        inventory: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of naive,cached,validness.
        #[arg(long, default_value = "naive,cached,validness")]
        strategies: String,
    },
    /// Weakly-supervised training: repeated search and maximization over
    /// a dataset of utterances with gold denotations.
    TrainWeaksup {
        #[command(flatten)]
        grammar: GrammarArgs,
        /// MiniKB file of entity records and triples.
        #[arg(long)]
        kb: PathBuf,
        /// Weak training set (gold denotations).
        #[arg(long)]
        train: PathBuf,
        /// Validation set evaluated after each cycle.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Strong examples (gold action sequences) for pre-training.
        #[arg(long)]
        pretrain: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        cycles: usize,
        #[arg(long, default_value_t = 8)]
        beam: usize,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 0.2)]
        lr: f64,
        #[arg(long, default_value_t = 120)]
        pretrain_epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        pretrain_lr: f64,
        #[arg(long, default_value = "hybr")]
        constraint: String,
        #[arg(long, default_value_t = 24)]
        max_steps: usize,
        /// Where to write the trained model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GrammarArgs {
    /// Grammar definition file (.gdsl).
    #[arg(long)]
    grammar: PathBuf,
    /// Vocabulary file, one token per line.
    #[arg(long)]
    vocab: PathBuf,
    /// Candidate expression files (.cand); repeatable.
    #[arg(long)]
    candidates: Vec<PathBuf>,
    /// Manifest mapping (domain, class) to candidate files.
    #[arg(long, requires = "domain")]
    manifest: Option<PathBuf>,
    /// Domain to select from the manifest.
    #[arg(long)]
    domain: Option<String>,
}

enum CliError {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn parse_constraint(s: &str) -> Result<ConstraintFn, CliError> {
    s.parse::<ConstraintFn>().map_err(usage)
}

struct Loaded {
    grammar: Arc<Grammar>,
    sets: Vec<CandidateSet>,
}

fn load_grammar(args: &GrammarArgs) -> Result<Loaded, CliError> {
    let vocab_text = read_file(&args.vocab)?;
    let vocab = Vocabulary::parse(&vocab_text)
        .map_err(|e| input(format!("{}: {e}", args.vocab.display())))?;
    let dsl = read_file(&args.grammar)?;
    let grammar = parse_grammar(&dsl, vocab)
        .map_err(|e| input(format!("{}: {e}", args.grammar.display())))?;
    let mut sets = Vec::new();
    for path in &args.candidates {
        let text = read_file(path)?;
        sets.extend(parse_cand_file(&text).map_err(|e| input(format!("{}: {e}", path.display())))?);
    }
    if let (Some(manifest), Some(domain)) = (&args.manifest, &args.domain) {
        let m =
            Manifest::load(manifest).map_err(|e| input(format!("{}: {e}", manifest.display())))?;
        sets.extend(
            m.load_domain(domain)
                .map_err(|e| input(format!("{}: {e}", manifest.display())))?,
        );
    }
    Ok(Loaded {
        grammar: Arc::new(grammar),
        sets,
    })
}

fn constrainer(loaded: &Loaded) -> Result<Constrainer, CliError> {
    Constrainer::new(loaded.grammar.clone(), &loaded.sets).map_err(|e| input(e.to_string()))
}

fn cmd_validate(args: &GrammarArgs) -> Result<(), CliError> {
    let loaded = load_grammar(args)?;
    let g = &loaded.grammar;

    let mut lints: Vec<String> = g.lints().to_vec();

    let reachable = g.reachable_types();
    for t in 0..g.hierarchy().len() {
        if !reachable.contains(t) {
            lints.push(format!(
                "type {:?} is unreachable from the root",
                g.type_name(semparse::grammar::TypeId(t as u32))
            ));
        }
    }

    let mut provided: Vec<&str> = Vec::new();
    for set in &loaded.sets {
        provided.push(&set.class);
        if set.expressions.is_empty() {
            lints.push(format!(
                "candidate class {:?} has an empty expression list",
                set.class
            ));
        }
    }
    let mut missing = false;
    for class in g.classes() {
        if class.has_candidates && !provided.contains(&class.name.as_str()) {
            lints.push(format!(
                "candidate class {:?} has no candidate expressions",
                class.name
            ));
            missing = true;
        }
    }
    // binding validates tokenization (naming any out-of-vocabulary word)
    // and the type compatibility of candidate tokens
    if !missing {
        let c = constrainer(&loaded)?;
        lints.extend(c.warnings.iter().cloned());
    } else {
        for set in &loaded.sets {
            semparse::candexpr::build_trie(set, g.vocab()).map_err(|e| input(e.to_string()))?;
        }
    }

    println!("rule actions: {}", g.num_rule_actions());
    println!("nl-token actions: {}", g.num_token_actions());
    println!("reduce actions: 1");
    println!("total actions: {}", g.num_actions());
    println!("types: {}", g.hierarchy().len());
    println!("lints: {}", lints.len());
    for lint in &lints {
        println!("  lint: {lint}");
    }
    Ok(())
}

const ENUMERATE_DEPTH_BOUND: usize = 24;
const ENUMERATE_STATE_BOUND: usize = 5_000_000;

fn cmd_enumerate(
    args: &GrammarArgs,
    depth: usize,
    constraint: &str,
    output: &str,
) -> Result<(), CliError> {
    if depth > ENUMERATE_DEPTH_BOUND {
        return Err(usage(format!(
            "depth {depth} exceeds the safety bound {ENUMERATE_DEPTH_BOUND}"
        )));
    }
    let kind = match output {
        "default" => TemplateKind::Default,
        "visual" => TemplateKind::Visual,
        other => return Err(usage(format!("unknown output kind {other:?}"))),
    };
    let f = parse_constraint(constraint)?;
    let loaded = load_grammar(args)?;
    let c = constrainer(&loaded)?;
    let states = enumerate_complete(&c, f, depth, ENUMERATE_STATE_BOUND)
        .map_err(|e| runtime(e.to_string()))?;
    let mut lines: Vec<String> = states
        .iter()
        .map(|s| {
            s.to_logical_form(&loaded.grammar, kind)
                .map(|lf| lf.to_string())
                .map_err(|e| runtime(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    lines.sort();
    lines.dedup();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in lines {
        writeln!(out, "{line}").map_err(|e| runtime(e.to_string()))?;
    }
    Ok(())
}

fn make_scorer(spec: &str, num_actions: usize) -> Result<Box<dyn Scorer>, CliError> {
    if spec == "uniform" {
        return Ok(Box::new(UniformScorer::new(num_actions)));
    }
    if let Some(path) = spec.strip_prefix("table:") {
        let text = read_file(Path::new(path))?;
        let scorer = TableScorer::parse(&text, num_actions).map_err(|e| input(e.to_string()))?;
        return Ok(Box::new(scorer));
    }
    if let Some(path) = spec.strip_prefix("loglinear:") {
        let text = read_file(Path::new(path))?;
        let model = LogLinearModel::parse_tsv(&text).map_err(|e| input(e.to_string()))?;
        if model.num_actions() != num_actions {
            return Err(input(format!(
                "model was trained for {} actions, grammar has {num_actions}",
                model.num_actions()
            )));
        }
        return Ok(Box::new(model));
    }
    Err(usage(format!(
        "unknown scorer {spec:?} (expected uniform, table:<file> or loglinear:<file>)"
    )))
}

fn cmd_decode(
    args: &GrammarArgs,
    constraint: &str,
    beam: usize,
    max_steps: usize,
    scorer_spec: &str,
    output: &str,
) -> Result<(), CliError> {
    if beam == 0 {
        return Err(usage("beam size must be at least 1"));
    }
    if !matches!(output, "actions" | "default" | "visual") {
        return Err(usage(format!("unknown output kind {output:?}")));
    }
    let f = parse_constraint(constraint)?;
    let loaded = load_grammar(args)?;
    let c = constrainer(&loaded)?;
    let scorer = make_scorer(scorer_spec, c.num_actions())?;
    let g = &loaded.grammar;

    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let utterance = line.map_err(|e| input(e.to_string()))?;
        let hyp = if beam == 1 {
            greedy_decode(
                &c,
                scorer.as_ref(),
                &utterance,
                &DecodeConfig::greedy(f, max_steps),
            )
            .map_err(|e| runtime(e.to_string()))?
        } else {
            beam_search(
                &c,
                scorer.as_ref(),
                &utterance,
                &DecodeConfig::beam(f, beam, max_steps),
            )
            .map_err(|e| runtime(e.to_string()))?
            .into_iter()
            .next()
            .expect("beam search returns at least one hypothesis")
        };
        if !hyp.finished {
            println!("<unfinished>");
            continue;
        }
        match output {
            "actions" => {
                let ids: Vec<String> = hyp
                    .state
                    .actions()
                    .iter()
                    .map(|a| a.0.to_string())
                    .collect();
                println!("{}", ids.join(" "));
            }
            _ => {
                let kind = if output == "visual" {
                    TemplateKind::Visual
                } else {
                    TemplateKind::Default
                };
                let lf = hyp
                    .state
                    .to_logical_form(g, kind)
                    .map_err(|e| runtime(e.to_string()))?;
                println!("{lf}");
            }
        }
    }
    Ok(())
}

fn cmd_bench_mask(
    inventory: usize,
    batch: usize,
    beam: usize,
    iters: usize,
    seed: u64,
    strategies: &str,
) -> Result<(), CliError> {
    let mut parsed = Vec::new();
    for name in strategies.split(',') {
        parsed.push(match name.trim() {
            "naive" => bench::MaskStrategy::Naive,
            "cached" => bench::MaskStrategy::Cached,
            "validness" => bench::MaskStrategy::Validness,
            other => return Err(usage(format!("unknown strategy {other:?}"))),
        });
    }
    // the synthetic grammar adds 6 rule actions and reduce on top of the
    // token inventory
    if inventory < 8 {
        return Err(usage("inventory must be at least 8"));
    }
    let tokens = inventory - 7;
    let cfg = bench::BenchConfig {
        tokens,
        batch,
        beam,
        iters,
        seed,
        strategies: parsed,
    };
    let rows = bench::run_mask_bench(&cfg).map_err(|e| runtime(e.to_string()))?;
    print!("{}", bench::csv(&rows));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_weaksup(
    args: &GrammarArgs,
    kb_path: &Path,
    train_path: &Path,
    val_path: Option<&Path>,
    pretrain_path: Option<&Path>,
    cycles: usize,
    beam: usize,
    epochs: usize,
    lr: f64,
    pretrain_epochs: usize,
    pretrain_lr: f64,
    constraint: &str,
    max_steps: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let f = parse_constraint(constraint)?;
    let loaded = load_grammar(args)?;
    let c = constrainer(&loaded)?;
    let kb = MiniKb::parse(&read_file(kb_path)?).map_err(|e| input(e.to_string()))?;
    let train = parse_dataset(&read_file(train_path)?).map_err(|e| input(e.to_string()))?;
    let val = match val_path {
        Some(p) => parse_dataset(&read_file(p)?).map_err(|e| input(e.to_string()))?,
        None => Vec::new(),
    };
    let pretrain: Vec<(String, Vec<semparse::grammar::ActionId>)> = match pretrain_path {
        Some(p) => parse_dataset(&read_file(p)?)
            .map_err(|e| input(e.to_string()))?
            .into_iter()
            .map(|ex| {
                let actions = ex
                    .gold_actions()
                    .map(|a| a.to_vec())
                    .ok_or_else(|| input("pretrain file must carry gold-actions examples"))?;
                Ok((ex.utterance, actions))
            })
            .collect::<Result<_, CliError>>()?,
        None => Vec::new(),
    };

    let mut model = LogLinearModel::new(c.num_actions());
    if !pretrain.is_empty() {
        train_strong(&c, &mut model, &pretrain, pretrain_epochs, pretrain_lr)
            .map_err(|e| input(e.to_string()))?;
        println!("pretrained on {} strong examples", pretrain.len());
    }

    let cfg = WeaksupConfig {
        cycles,
        beam,
        epochs,
        lr,
        constraint: f,
        max_steps,
    };
    let report = run_weaksup(&c, &mut model, &kb, &train, &val, &pretrain, &cfg)
        .map_err(|e| runtime(e.to_string()))?;

    println!("initial val accuracy: {:.4}", report.initial_val_accuracy);
    for (i, cycle) in report.cycles.iter().enumerate() {
        println!(
            "cycle {:>2}: oracle accuracy {:.4}, val accuracy {:.4}, objective {:.4}",
            i + 1,
            cycle.oracle_accuracy,
            cycle.val_accuracy,
            cycle.objective
        );
    }
    println!("final val accuracy: {:.4}", report.final_val_accuracy());

    if let Some(path) = out {
        std::fs::write(path, model.to_tsv())
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        println!("model written to {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(args) => cmd_validate(args),
        Command::Enumerate {
            grammar,
            depth,
            constraint,
            output,
        } => cmd_enumerate(grammar, *depth, constraint, output),
        Command::Decode {
            grammar,
            constraint,
            beam,
            max_steps,
            scorer,
            output,
        } => cmd_decode(grammar, constraint, *beam, *max_steps, scorer, output),
        Command::BenchMask {
            inventory,
            batch,
            beam,
            iters,
            seed,
            strategies,
        } => cmd_bench_mask(*inventory, *batch, *beam, *iters, *seed, strategies),
        Command::TrainWeaksup {
            grammar,
            kb,
            train,
            val,
            pretrain,
            cycles,
            beam,
            epochs,
            lr,
            pretrain_epochs,
            pretrain_lr,
            constraint,
            max_steps,
            out,
        } => cmd_train_weaksup(
            grammar,
            kb,
            train,
            val.as_deref(),
            pretrain.as_deref(),
            *cycles,
            *beam,
            *epochs,
            *lr,
            *pretrain_epochs,
            *pretrain_lr,
            constraint,
            *max_steps,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            }
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

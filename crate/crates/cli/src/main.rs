use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dsreg::checkpoint::{self, SavedModel};
use dsreg::classifier::Head;
use dsreg::corpus::{self, Example, JsonlRecord, TaggedExample};
use dsreg::harness::{self, ExperimentConfig, MetricRow, Prepared, Report, SweepConfig, TaskData, Variant};
use dsreg::mining::Lexicon;
use dsreg::saliency::{self, HeatmapFormat};
use dsreg::span_qa::{self, QaExample};

/// Hard-negative mining and auxiliary-loss training for text classification,
/// CRF tagging and span selection.
#[derive(Parser, Debug)]
#[command(name = "dsreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Run seed; replaces `[experiment] seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path (file or directory, per subcommand).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value` config override; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus into a directory (train/dev/test JSONL and
    /// the confound lexicon).
    Gen {
        #[command(flatten)]
        common: Common,
        /// classification, tagging or span_qa.
        #[arg(long)]
        task: Option<String>,
    },
    /// Mine hard negatives and write the auxiliary labels as JSONL.
    Mine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        /// JSONL records to mine.
        #[arg(long)]
        input: PathBuf,
        /// Lexicon file, one entry per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// lexicon, keyword_count or groups.
        #[arg(long)]
        miner: Option<String>,
        #[arg(long)]
        min_mentions: Option<usize>,
    },
    /// Train one model and save a checkpoint to `--out`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        /// L1, PIPELINED, L3, L1+L2, L1+L3 or L1+L2+L3.
        #[arg(long)]
        variant: Option<String>,
        /// Comma-separated λ₁,λ₂,λ₃.
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Evaluate a checkpoint on a JSONL test file or the configured data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Print predictions as JSONL.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// JSONL records; ignored when `--text` is given.
        #[arg(long)]
        input: Option<PathBuf>,
        /// A single whitespace-tokenised text (for span models, the passage).
        #[arg(long)]
        text: Option<String>,
    },
    /// Render a saliency heatmap of a classifier head.
    Saliency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        /// y, z or l.
        #[arg(long, default_value = "y")]
        head: String,
        #[arg(long, default_value_t = 1)]
        class: usize,
        /// text or html.
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Sweep λ in L = (1-λ)·L1 + λ·L_aux and write curve.tsv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        /// L2 or L3.
        #[arg(long, default_value = "L2")]
        pair: String,
        /// Comma-separated λ values; default 0.0..0.9 in steps of 0.1.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Train and evaluate several variants on the same seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        /// Comma-separated variants; default every variant the task supports.
        #[arg(long)]
        variants: Option<String>,
    },
}

fn load_config(common: &Common, extra: &[(&str, Option<String>)], out_in_config: bool) -> Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    for (key, value) in extra {
        if let Some(v) = value {
            overrides.push(format!("{key}={}", toml_string(v)));
        }
    }
    if let Some(seed) = common.seed {
        overrides.push(format!("experiment.seeds=[{seed}]"));
    }
    if out_in_config {
        if let Some(out) = &common.out {
            overrides.push(format!("experiment.out={}", toml_string(&out.to_string_lossy())));
        }
    }
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::parse("", &overrides)?,
    };
    Ok(cfg)
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.experiment.seeds[0]
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| dsreg::Error::Config("--out is required".into()).into())
}

fn write_records<T: JsonlRecord>(dir: &Path, name: &str, items: &[T]) -> Result<()> {
    corpus::write_jsonl(items, dir.join(name))?;
    Ok(())
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => checkpoint::write_atomic(path, body.as_bytes())?,
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn cmd_gen(common: &Common, task: Option<String>) -> Result<()> {
    let cfg = load_config(common, &[("experiment.task", task)], false)?;
    let dir = require_out(common)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let Prepared { data, lexicon } = harness::prepare(&cfg, first_seed(&cfg))?;
    match &data {
        TaskData::Classification(s) => {
            write_records(dir, "train.jsonl", &s.train)?;
            write_records(dir, "dev.jsonl", &s.dev)?;
            write_records(dir, "test.jsonl", &s.test)?;
        }
        TaskData::Tagging(s) => {
            write_records(dir, "train.jsonl", &s.train)?;
            write_records(dir, "dev.jsonl", &s.dev)?;
            write_records(dir, "test.jsonl", &s.test)?;
        }
        TaskData::SpanQa(s) => {
            write_records(dir, "train.jsonl", &s.train)?;
            write_records(dir, "dev.jsonl", &s.dev)?;
            write_records(dir, "test.jsonl", &s.test)?;
        }
    }
    if let Some(lex) = lexicon {
        checkpoint::write_atomic(dir.join("lexicon.txt"), lex.to_text().as_bytes())?;
    }
    checkpoint::write_atomic(dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    eprintln!("wrote corpus to {}", dir.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct TagLabels<'a> {
    id: &'a str,
    tokens: &'a [String],
    y: &'a [String],
    z: Vec<&'static str>,
    l: Vec<&'static str>,
}

fn cmd_mine(
    common: &Common,
    task: Option<String>,
    input: &Path,
    lexicon: Option<PathBuf>,
    miner: Option<String>,
    min_mentions: Option<usize>,
) -> Result<()> {
    let cfg = load_config(common, &[("experiment.task", task), ("mining.miner", miner)], false)?;
    let mut mining_cfg = cfg.mining.clone();
    if let Some(m) = min_mentions {
        mining_cfg.min_mentions = m;
    }
    let lex_path = lexicon.or(mining_cfg.lexicon.clone());
    let load_lex = || -> Result<Lexicon> {
        match &lex_path {
            Some(p) => Ok(Lexicon::load(p)?),
            None => Err(dsreg::Error::Config("mining needs --lexicon".into()).into()),
        }
    };
    let mut body = String::new();
    match cfg.task() {
        harness::Task::Classification => {
            let data: Vec<Example> = corpus::load_jsonl(input)?;
            let lex = match mining_cfg.miner {
                harness::MinerKind::Groups => None,
                _ => Some(load_lex()?),
            };
            for e in harness::mine_examples(&data, &mining_cfg, lex.as_ref())? {
                body.push_str(&e.to_json());
                body.push('\n');
            }
        }
        harness::Task::Tagging => {
            let data: Vec<TaggedExample> = corpus::load_jsonl(input)?;
            let lex = load_lex()?;
            for (e, t) in harness::label_tagging(&data, &lex)? {
                let rec = TagLabels {
                    id: &e.id,
                    tokens: &e.tokens,
                    y: &t.y,
                    z: t.z.iter().map(|z| z.as_str()).collect(),
                    l: t.l.iter().map(|l| l.as_str()).collect(),
                };
                body.push_str(&serde_json::to_string(&rec)?);
                body.push('\n');
            }
        }
        harness::Task::SpanQa => {
            let data: Vec<QaExample> = corpus::load_jsonl(input)?;
            for e in span_qa::mine_spans(&data, &mining_cfg.span_config(), first_seed(&cfg))? {
                body.push_str(&e.to_json());
                body.push('\n');
            }
        }
    }
    emit(common.out.as_deref(), &body)
}

fn cmd_train(common: &Common, task: Option<String>, variant: Option<String>, lambda: Option<String>) -> Result<()> {
    let mut cfg = load_config(
        common,
        &[("experiment.task", task), ("experiment.variant", variant)],
        false,
    )?;
    if let Some(l) = lambda {
        let v: Vec<f64> = l
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| dsreg::Error::Config(format!("--lambda: {e}")))?;
        let [a, b, c] = v[..] else {
            return Err(dsreg::Error::Config("--lambda needs three values".into()).into());
        };
        cfg.loss.lambda = Some([a, b, c]);
        cfg.validate()?;
    }
    let out = require_out(common)?;
    let seed = first_seed(&cfg);
    let prepared = harness::prepare(&cfg, seed)?;
    let model = harness::train_variant(&cfg, cfg.experiment.variant, cfg.weights()?, seed, &prepared)?;
    checkpoint::save(&model, out)?;
    eprintln!(
        "trained {} ({}) seed {seed} -> {}",
        cfg.experiment.variant,
        serde_json::to_string(&cfg.weights()?.as_array())?,
        out.display()
    );
    Ok(())
}

fn model_task(model: &SavedModel) -> harness::Task {
    match model {
        SavedModel::Classifier { .. } | SavedModel::Pipelined(_) => harness::Task::Classification,
        SavedModel::Tagger(_) => harness::Task::Tagging,
        SavedModel::SpanSelector { .. } => harness::Task::SpanQa,
    }
}

fn task_name(t: harness::Task) -> &'static str {
    match t {
        harness::Task::Classification => "classification",
        harness::Task::Tagging => "tagging",
        harness::Task::SpanQa => "span_qa",
    }
}

fn cmd_eval(common: &Common, model_path: &Path, test: Option<PathBuf>) -> Result<()> {
    let model = checkpoint::load(model_path)?;
    let task = model_task(&model);
    let cfg = load_config(common, &[("experiment.task", Some(task_name(task).into()))], false)?;
    let seed = first_seed(&cfg);
    let data = match test {
        Some(path) => match task {
            harness::Task::Classification => TaskData::Classification(corpus::DatasetSplit {
                train: Vec::new(),
                dev: Vec::new(),
                test: corpus::load_jsonl(&path)?,
            }),
            harness::Task::Tagging => TaskData::Tagging(corpus::DatasetSplit {
                train: Vec::new(),
                dev: Vec::new(),
                test: corpus::load_jsonl(&path)?,
            }),
            harness::Task::SpanQa => TaskData::SpanQa(corpus::DatasetSplit {
                train: Vec::new(),
                dev: Vec::new(),
                test: corpus::load_jsonl(&path)?,
            }),
        },
        None => harness::prepare(&cfg, seed)?.data,
    };
    let name = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rows = harness::evaluate(&model, &data, "test")?
        .into_iter()
        .map(|(metric, value)| MetricRow {
            model: name.clone(),
            split: "test".into(),
            metric,
            value,
            seed,
        })
        .collect();
    let report = Report { rows };
    match &common.out {
        Some(path) => {
            checkpoint::write_atomic(path, report.to_tsv().as_bytes())?;
            print!("{}", report.table());
        }
        None => print!("{}", report.to_tsv()),
    }
    Ok(())
}

#[derive(serde::Serialize)]
#[serde(untagged)]
enum Prediction {
    Label {
        id: String,
        label: u8,
    },
    Tags {
        id: String,
        tags: Vec<String>,
    },
    Span {
        id: String,
        start: usize,
        end: usize,
        answer: Vec<String>,
    },
}

fn cmd_predict(common: &Common, model_path: &Path, input: Option<PathBuf>, text: Option<String>) -> Result<()> {
    let model = checkpoint::load(model_path)?;
    let docs: Vec<(String, Vec<String>)> = match (text, input) {
        (Some(t), _) => vec![("text".into(), corpus::tokenize(&t))],
        (None, Some(path)) => match model_task(&model) {
            harness::Task::Classification => corpus::load_jsonl::<Example>(&path)?
                .into_iter()
                .map(|e| (e.id, e.tokens))
                .collect(),
            harness::Task::Tagging => corpus::load_jsonl::<TaggedExample>(&path)?
                .into_iter()
                .map(|e| (e.id, e.tokens))
                .collect(),
            harness::Task::SpanQa => corpus::load_jsonl::<QaExample>(&path)?
                .into_iter()
                .map(|e| (e.id, e.passage))
                .collect(),
        },
        (None, None) => bail!(dsreg::Error::Config("predict needs --input or --text".into())),
    };
    let mut body = String::new();
    for (id, tokens) in docs {
        if tokens.is_empty() {
            bail!(dsreg::Error::Config(format!("record {id:?} has no tokens")));
        }
        let p = match &model {
            SavedModel::Classifier { .. } | SavedModel::Pipelined(_) => {
                let ex = Example::new(id.clone(), tokens, 0)?;
                Prediction::Label {
                    id,
                    label: harness::predict_labels(&model, std::slice::from_ref(&ex))?[0],
                }
            }
            SavedModel::Tagger(m) => Prediction::Tags {
                tags: m.predict_tags(&tokens)?,
                id,
            },
            SavedModel::SpanSelector { model, max_len } => {
                let (start, end) = span_qa::predict_span(model, &tokens, *max_len)?;
                Prediction::Span {
                    id,
                    start,
                    end,
                    answer: tokens[start..end].to_vec(),
                }
            }
        };
        body.push_str(&serde_json::to_string(&p)?);
        body.push('\n');
    }
    emit(common.out.as_deref(), &body)
}

fn cmd_saliency(common: &Common, model_path: &Path, text: &str, head: &str, class: usize, format: &str) -> Result<()> {
    let head: Head = head.parse()?;
    let format: HeatmapFormat = format.parse()?;
    let SavedModel::Classifier { model, .. } = checkpoint::load(model_path)? else {
        bail!(dsreg::Error::Config(
            "saliency needs a text classifier checkpoint".into()
        ));
    };
    let tokens = corpus::tokenize(text);
    let map = saliency::saliency(&model, &tokens, head, class)?;
    emit(common.out.as_deref(), &saliency::render_heatmap(&map, format))
}

fn cmd_sweep(common: &Common, task: Option<String>, pair: &str, grid: Option<String>) -> Result<()> {
    let base = load_config(common, &[("experiment.task", task)], true)?;
    let grid = match grid {
        Some(g) => g
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| dsreg::Error::Config(format!("--grid: {e}")))?,
        None => harness::default_grid(),
    };
    let sweep = SweepConfig {
        pair: pair.parse()?,
        grid,
        base,
    };
    let curve = harness::sweep_lambda(&sweep)?;
    print!("{}", curve.to_tsv());
    let best = curve.best();
    eprintln!("argmax λ = {:.2} ({} {:.4})", best.lambda, curve.metric, best.mean);
    Ok(())
}

fn cmd_compare(common: &Common, task: Option<String>, variants: Option<String>) -> Result<()> {
    let cfg = load_config(common, &[("experiment.task", task)], true)?;
    let variants: Vec<Variant> = match variants {
        Some(v) => v.split(',').map(str::parse).collect::<dsreg::Result<_>>()?,
        None => Variant::ALL.into_iter().filter(|v| v.supports(cfg.task())).collect(),
    };
    let report = harness::compare(&cfg, &variants)?;
    print!("{}", report.table());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, task } => cmd_gen(&common, task),
        Command::Mine {
            common,
            task,
            input,
            lexicon,
            miner,
            min_mentions,
        } => cmd_mine(&common, task, &input, lexicon, miner, min_mentions),
        Command::Train {
            common,
            task,
            variant,
            lambda,
        } => cmd_train(&common, task, variant, lambda),
        Command::Eval { common, model, test } => cmd_eval(&common, &model, test),
        Command::Predict {
            common,
            model,
            input,
            text,
        } => cmd_predict(&common, &model, input, text),
        Command::Saliency {
            common,
            model,
            text,
            head,
            class,
            format,
        } => cmd_saliency(&common, &model, &text, &head, class, &format),
        Command::Sweep {
            common,
            task,
            pair,
            grid,
        } => cmd_sweep(&common, task, &pair, grid),
        Command::Compare { common, task, variants } => cmd_compare(&common, task, variants),
    }
}

/// 2 for data and configuration errors, 3 for numeric failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dsreg::Error>() {
        Some(dsreg::Error::Numeric(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

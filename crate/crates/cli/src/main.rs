use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use dsas_core::attention::{MatrixKind, Reduction};
use dsas_core::cgw::compute_gate_weights;
use dsas_core::dump::{AttentionDump, MANIFEST_FILE};
use dsas_core::flow::{classify_reasoning, confusion_matrix, layerwise_flows};
use dsas_core::model::{generate, LayerTrace, ModelConfig, ToyModel, DEFAULT_MAX_NEW_TOKENS};
use dsas_core::prompt::{build_prompt, shuffle_paragraphs, template_by_id, BuiltPrompt, RawSample};
use dsas_core::qa::best_f1;
use dsas_core::ras::partition;
use dsas_core::report::{
    write_confusion, write_flows, write_gate_stats, write_gates, write_groups, write_scores,
    ScoreRow,
};
use dsas_core::tokenizer::{ByteTokenizer, Tokenizer, BYTE_VOCAB_SIZE};
use dsas_core::{DsasConfig, Error, PromptLayout};

#[derive(Parser)]
#[command(name = "dsas", version, about = "Dual-stage attention sharpening toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill the QA template from a sample file and record token spans.
    BuildPrompt(BuildPromptArgs),
    /// Write a freshly initialized toy model.
    InitModel(InitModelArgs),
    /// Greedy generation on the toy model, optionally with DSAS and a trace.
    Run(RunArgs),
    /// Information-flow reports from an attention dump.
    Analyze(AnalyzeArgs),
    /// Token-level F1 of predictions against references.
    Score(ScoreArgs),
}

#[derive(Args)]
struct BuildPromptArgs {
    /// JSON sample: {"paragraphs": [{"text", "supporting"?}], "question", "answers"?}
    #[arg(long)]
    sample: PathBuf,
    /// Overrides the sample's question.
    #[arg(long)]
    question: Option<String>,
    #[arg(long, default_value = "multidoc_qa")]
    template: String,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// With --shuffle-seed, bias supporting paragraphs toward the edges.
    #[arg(long, requires = "shuffle_seed")]
    edge_bias: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitModelArgs {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 1024)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 42)]
    seed: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prompt: PathBuf,
    /// K: columns kept per paragraph when scoring flows.
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    /// n: fraction of final layers that are rewritten.
    #[arg(long, default_value_t = 0.5)]
    layer_frac: f64,
    #[arg(long)]
    no_cgw: bool,
    #[arg(long)]
    no_ras: bool,
    /// Drop the positional factor (same as --alpha 0).
    #[arg(long)]
    no_position_weight: bool,
    /// Vanilla attention everywhere.
    #[arg(long, conflicts_with_all = ["no_cgw", "no_ras"])]
    no_dsas: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_NEW_TOKENS)]
    max_new_tokens: usize,
    /// Directory for the attention dump and gate-weight CSVs.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Dump per-head weights instead of head-summed ones.
    #[arg(long, requires = "trace")]
    per_head: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dump: PathBuf,
    /// Prompt whose layout replaces the manifest spans.
    #[arg(long)]
    prompt: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Per-head row-sum tolerance for weight dumps.
    #[arg(long, default_value_t = dsas_core::attention::ROW_SUM_TOLERANCE)]
    row_sum_tol: f64,
}

#[derive(Args)]
struct ScoreArgs {
    /// JSONL lines {"id", "prediction"}.
    #[arg(long)]
    predictions: PathBuf,
    /// JSONL lines {"id", "answers": [..]} (or "answer": "..").
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildPrompt(a) => build_prompt_cmd(a),
        Command::InitModel(a) => init_model_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Score(a) => score_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Fills a temporary sibling directory, then moves it to `dir`. An existing
/// `dir` is replaced only if it is empty or an earlier dump.
fn write_dir_atomic(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if dir.exists() {
        let empty = fs::read_dir(dir)?.next().is_none();
        if !empty && !dir.join(MANIFEST_FILE).exists() {
            bail!("{} exists and is not an attention dump; refusing to replace it", dir.display());
        }
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent)?;
    let tmp = tempfile::Builder::new().prefix(".dsas-trace-").tempdir_in(parent)?;
    fill(tmp.path())?;
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    let staged = tmp.keep();
    fs::rename(&staged, dir).with_context(|| format!("moving trace to {}", dir.display()))?;
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> dsas_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_prompt_cmd(a: BuildPromptArgs) -> Result<()> {
    let text = fs::read_to_string(&a.sample)
        .with_context(|| format!("reading {}", a.sample.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.sample.display()))?;
    if let (Some(q), Some(obj)) = (&a.question, value.as_object_mut()) {
        obj.insert("question".into(), q.clone().into());
    }
    let mut sample: RawSample = serde_json::from_value(value)
        .with_context(|| format!("parsing {}", a.sample.display()))?;
    sample.validate()?;
    if let Some(seed) = a.shuffle_seed {
        sample = shuffle_paragraphs(&sample, seed, a.edge_bias);
    }
    let template = template_by_id(&a.template)
        .with_context(|| format!("unknown template {:?}", a.template))?;
    let prompt = build_prompt(&sample, &ByteTokenizer, &template)?;
    let json = serde_json::to_string_pretty(&prompt)? + "\n";
    write_atomic(&a.out, json.as_bytes())?;
    println!(
        "{} tokens, {} paragraphs -> {}",
        prompt.len(),
        prompt.layout.num_paragraphs(),
        a.out.display()
    );
    Ok(())
}

fn init_model_cmd(a: InitModelArgs) -> Result<()> {
    let model = ToyModel::init(ModelConfig {
        d_model: a.d_model,
        num_heads: a.heads,
        num_layers: a.layers,
        vocab_size: BYTE_VOCAB_SIZE,
        max_seq_len: a.max_seq_len,
        seed: a.seed,
    })?;
    write_atomic(&a.out, &model.to_bytes())?;
    println!(
        "{} parameters, checksum {:016x} -> {}",
        model.parameter_count(),
        model.checksum(),
        a.out.display()
    );
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let model = ToyModel::load(&a.model)?;
    let prompt: BuiltPrompt = read_json(&a.prompt)?;
    let config = DsasConfig {
        top_k: a.topk,
        layer_fraction: a.layer_frac,
        alpha: a.alpha,
        beta: a.beta,
        cgw_enabled: !a.no_cgw,
        ras_enabled: !a.no_ras,
        position_weight_enabled: !a.no_position_weight,
    };
    config.validate()?;
    let dsas = (!a.no_dsas).then_some(&config);
    let generation = generate(&model, &prompt, dsas, a.max_new_tokens)?;
    println!("{}", ByteTokenizer.decode_lossy(&generation.tokens));

    if let Some(dir) = &a.trace {
        let reduction = if a.per_head { Reduction::PerHead } else { Reduction::HeadSummed };
        let model_id = format!("dsas-toy-{:016x}", model.checksum());
        let dump = AttentionDump::from_trace(
            &generation.trace,
            &model_id,
            model.config.num_heads,
            &prompt.layout,
            Some(&prompt.token_ids),
            reduction,
        )?;
        let gates = csv_bytes(|b| write_gates(b, &generation.trace.layers))?;
        let stats = csv_bytes(|b| write_gate_stats(b, &generation.trace.layers))?;
        let summary = serde_json::to_string_pretty(&serde_json::json!({
            "generated": generation.tokens,
            "text": ByteTokenizer.decode_lossy(&generation.tokens),
            "stopped_on_eos": generation.stopped_on_eos,
            "selected_layers": generation.trace.layers.iter().map(|t| t.layer).collect::<Vec<_>>(),
            "dsas": dsas.is_some(),
        }))? + "\n";
        write_dir_atomic(dir, |tmp| {
            dump.write(tmp)?;
            fs::write(tmp.join("gates.csv"), &gates)?;
            fs::write(tmp.join("gate_stats.csv"), &stats)?;
            fs::write(tmp.join("generation.json"), summary.as_bytes())?;
            Ok(())
        })?;
        eprintln!("trace written to {}", dir.display());
    }
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    let dump = AttentionDump::read_with_tolerance(&a.dump, a.row_sum_tol)
        .with_context(|| format!("reading dump {}", a.dump.display()))?;
    let layout: PromptLayout = match &a.prompt {
        Some(p) => {
            let prompt: BuiltPrompt = read_json(p)?;
            if prompt.layout.total_len() != dump.manifest.seq_len {
                return Err(Error::LayoutMismatch {
                    expected: dump.manifest.seq_len,
                    found: prompt.layout.total_len(),
                }
                .into());
            }
            prompt.layout
        }
        None => dump.manifest.spans.clone(),
    };
    let matrices = dump.head_summed()?;
    let mut outputs: Vec<(&str, Vec<u8>)> = Vec::new();
    match dump.manifest.matrix_kind {
        MatrixKind::Weight => {
            let report = layerwise_flows(&matrices, &layout, a.topk)?;
            let confusion = confusion_matrix(&matrices, &layout, a.topk)?;
            outputs.push(("flows.csv", csv_bytes(|b| write_flows(b, &report))?));
            outputs.push(("confusion.csv", csv_bytes(|b| write_confusion(b, &confusion))?));
            if layout.has_labels() {
                outputs.push(("groups.csv", csv_bytes(|b| write_groups(b, &report))?));
                let g = report.aggregate()?;
                println!(
                    "supporting: flow_q {:.6} flow_t {:.6}; negative: flow_q {:.6} flow_t {:.6}",
                    g.supporting_q, g.supporting_t, g.negative_q, g.negative_t
                );
            }
        }
        MatrixKind::Score => {
            let config = DsasConfig {
                top_k: a.topk,
                ..DsasConfig::default()
            };
            let traces = matrices
                .into_iter()
                .enumerate()
                .map(|(layer, scores)| {
                    let gates = compute_gate_weights(&scores, &layout, &config)?;
                    let partition = partition(&gates.weights())?;
                    Ok(LayerTrace {
                        layer,
                        scores,
                        gates,
                        partition,
                    })
                })
                .collect::<dsas_core::Result<Vec<_>>>()?;
            outputs.push(("gates.csv", csv_bytes(|b| write_gates(b, &traces))?));
            outputs.push(("gate_stats.csv", csv_bytes(|b| write_gate_stats(b, &traces))?));
        }
    }
    for (name, bytes) in &outputs {
        write_atomic(&a.out_dir.join(name), bytes)?;
    }
    println!(
        "{} layers, {} paragraphs: wrote {}",
        dump.num_layers(),
        layout.num_paragraphs(),
        outputs.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
    );
    Ok(())
}

#[derive(Deserialize)]
struct PredictionLine {
    id: String,
    prediction: String,
}

#[derive(Deserialize)]
struct ReferenceLine {
    id: String,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default)]
    answer: Option<String>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}: bad record", path.display(), n + 1))
        })
        .collect()
}

fn score_cmd(a: ScoreArgs) -> Result<()> {
    let predictions: Vec<PredictionLine> = read_jsonl(&a.predictions)?;
    let references: Vec<ReferenceLine> = read_jsonl(&a.references)?;
    if predictions.len() != references.len() {
        bail!(
            "{} predictions but {} references",
            predictions.len(),
            references.len()
        );
    }
    let mut refs: HashMap<&str, Vec<String>> = HashMap::new();
    for r in &references {
        let mut answers = r.answers.clone();
        answers.extend(r.answer.clone());
        if refs.insert(r.id.as_str(), answers).is_some() {
            bail!("duplicate reference id {:?}", r.id);
        }
    }
    let mut rows = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let answers = refs
            .remove(p.id.as_str())
            .with_context(|| format!("prediction id {:?} has no reference (or is repeated)", p.id))?;
        let s = best_f1(&p.prediction, &answers)
            .with_context(|| format!("reference {:?} has no answers", p.id))?;
        rows.push(ScoreRow {
            id: p.id.clone(),
            f1: s.f1,
            precision: s.precision,
            class: classify_reasoning(s.f1, s.precision),
        });
    }
    write_atomic(&a.out, &csv_bytes(|b| write_scores(b, &rows))?)?;
    let mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.f1).sum::<f64>() / rows.len() as f64
    };
    let count = |c| rows.iter().filter(|r| r.class == c).count();
    println!(
        "mean_f1 {mean} over {} samples (good {}, bad {}, neither {})",
        rows.len(),
        count(dsas_core::Reasoning::Good),
        count(dsas_core::Reasoning::Bad),
        count(dsas_core::Reasoning::Neither)
    );
    Ok(())
}

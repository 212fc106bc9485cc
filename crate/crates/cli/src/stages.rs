//! The pipeline stages behind each subcommand. Every stage reads its inputs
//! from disk, writes its artifacts under the configured output directory, and
//! records a manifest with content digests.

use std::path::PathBuf;

use langadapt_core::corpus::{self, Document, HeuristicScorer};
use langadapt_core::eval::{
    evaluate, mcq_accuracy, perplexity, run_ablation, AblationRow, AblationVariant,
};
use langadapt_core::instruct::{
    dedup_instructions, filter_by_reward, render_chat, ChatTemplate, HeuristicReward,
    InstructionPair, Language,
};
use langadapt_core::model::{Checkpoint, ModelParams};
use langadapt_core::tokenizer::{fertility_report, TokenizerModel, UnigramTrainer};
use langadapt_core::trainer::{continued_pretrain, sft_train};
use langadapt_core::transplant::{build_vocab_mapping, transplant_matrix, EmbeddingMatrix};
use serde::Serialize;

use crate::config::{PipelineConfig, TokenizerConfig};
use crate::io::{self, Manifest};
use crate::plot;
use crate::CliError;

/// The sentence used for the headline tokenizer-efficiency comparison.
pub const SAMPLE_SENTENCE: &str = "Машинное обучение изменяет мир";

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub quiet: bool,
}

impl Ctx {
    fn say(&self, msg: &str) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(name)
    }

    fn manifest(&self, command: &str) -> Manifest {
        // digest the config with the output location neutralized, so the same
        // run in a different directory yields the same digest
        let mut cfg = self.cfg.clone();
        cfg.paths.out_dir = PathBuf::from("out");
        Manifest::new(command, self.cfg.seed, &cfg.to_toml())
    }

    /// Target-language paragraphs split into (train, held-out) by taking the
    /// configured number of trailing paragraphs as held-out.
    fn target_split(&self) -> Result<(Vec<String>, Vec<String>), CliError> {
        let docs = io::load_corpus(&self.cfg.paths.target_corpus)?;
        let mut paragraphs = docs.into_iter().flat_map(|d| d.paragraphs).collect::<Vec<_>>();
        let holdout = self.cfg.eval.holdout_paragraphs.min(paragraphs.len() / 2);
        let tail = paragraphs.split_off(paragraphs.len() - holdout);
        Ok((paragraphs, tail))
    }

    /// The most processed training corpus available on disk, preferring
    /// filtered over deduped over raw.
    fn best_corpus(&self) -> Result<(PathBuf, Vec<String>), CliError> {
        for name in ["corpus_filtered.txt", "corpus_deduped.txt"] {
            let p = self.out(name);
            if p.exists() {
                let docs = io::load_corpus(&p)?;
                return Ok((p, docs.into_iter().flat_map(|d| d.paragraphs).collect()));
            }
        }
        let (train, _) = self.target_split()?;
        Ok((self.cfg.paths.target_corpus.clone(), train))
    }
}

fn train_tokenizer(
    section: &TokenizerConfig,
    corpus: &[&str],
    seed: u64,
) -> Result<TokenizerModel, CliError> {
    let mut trainer = UnigramTrainer {
        target_vocab: section.target_vocab,
        seed_vocab: section.seed_vocab,
        shrink_factor: section.shrink_factor,
        em_iters: section.em_iters,
        max_piece_chars: section.max_piece_chars,
        seed,
        ..UnigramTrainer::default()
    };
    trainer.normalization.lowercase = section.lowercase;
    trainer.train(corpus).map_err(|e| CliError::runtime(format!("tokenizer training: {e}")))
}

/// Encodes paragraphs into one flat stream, each prefixed with bos.
fn tokenize_stream(tok: &TokenizerModel, paragraphs: &[String]) -> Vec<u32> {
    let bos = tok.special_ids().bos;
    let mut stream = Vec::new();
    for p in paragraphs {
        stream.push(bos);
        stream.extend(tok.encode(p).token_ids);
    }
    stream
}

pub fn tokenizer_train(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("tokenizer-train");
    manifest.input(&ctx.cfg.paths.target_corpus)?;
    manifest.input(&ctx.cfg.paths.source_corpus)?;

    let (train, _) = ctx.target_split()?;
    let refs: Vec<&str> = train.iter().map(String::as_str).collect();
    ctx.say(&format!("training target tokenizer on {} paragraphs", refs.len()));
    let target = train_tokenizer(&ctx.cfg.tokenizer, &refs, ctx.cfg.seed)?;

    let source_docs = io::load_corpus(&ctx.cfg.paths.source_corpus)?;
    let source_paragraphs: Vec<String> =
        source_docs.into_iter().flat_map(|d| d.paragraphs).collect();
    let source_refs: Vec<&str> = source_paragraphs.iter().map(String::as_str).collect();
    ctx.say("training source (donor) tokenizer");
    let source = train_tokenizer(&ctx.cfg.old_tokenizer, &source_refs, ctx.cfg.seed)?;

    let target_path = ctx.out("tokenizer_target.latk");
    let source_path = ctx.out("tokenizer_source.latk");
    io::save_tokenizer(&target_path, &target)?;
    io::save_tokenizer(&source_path, &source)?;
    manifest.output(&target_path)?;
    manifest.output(&source_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    ctx.say(&format!(
        "tokenizers written: target vocab {}, source vocab {}",
        target.vocab_size(),
        source.vocab_size()
    ));
    Ok(())
}

#[derive(Serialize)]
struct FertilityOut {
    byte_fertility: f64,
    word_count: usize,
    rows: Vec<FertilityRowOut>,
    sample_sentence: String,
    sample_tokens: Vec<(String, usize)>,
}

#[derive(Serialize)]
struct FertilityRowOut {
    name: String,
    fertility: f64,
    total_tokens: usize,
    vs_bytes: f64,
    ratio_to_baseline: f64,
}

pub fn tokenizer_analyze(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("tokenizer-analyze");
    let target_path = ctx.out("tokenizer_target.latk");
    let source_path = ctx.out("tokenizer_source.latk");
    let target = io::load_tokenizer(&target_path)?;
    let source = io::load_tokenizer(&source_path)?;
    manifest.input(&target_path)?;
    manifest.input(&source_path)?;

    let (_, holdout) = ctx.target_split()?;
    let refs: Vec<&str> = holdout.iter().map(String::as_str).collect();
    let report = fertility_report(&[("source", &source), ("target", &target)], &refs)
        .map_err(|e| CliError::runtime(format!("fertility: {e}")))?;

    let sample_tokens = vec![
        ("source".to_string(), source.encode(SAMPLE_SENTENCE).token_ids.len()),
        ("target".to_string(), target.encode(SAMPLE_SENTENCE).token_ids.len()),
    ];
    let out = FertilityOut {
        byte_fertility: report.byte_fertility,
        word_count: report.word_count,
        rows: report
            .rows
            .iter()
            .map(|r| FertilityRowOut {
                name: r.name.clone(),
                fertility: r.fertility,
                total_tokens: r.total_tokens,
                vs_bytes: r.vs_bytes,
                ratio_to_baseline: r.ratio_to_baseline,
            })
            .collect(),
        sample_sentence: SAMPLE_SENTENCE.to_string(),
        sample_tokens,
    };

    let json_path = ctx.out("fertility.json");
    let csv_path = ctx.out("fertility.csv");
    let svg_path = ctx.out("fertility.svg");
    io::write_json(&json_path, &out)?;
    io::write_csv(
        &csv_path,
        &["name", "fertility", "total_tokens", "vs_bytes", "ratio_to_baseline"],
        &out.rows
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    format!("{}", r.fertility),
                    format!("{}", r.total_tokens),
                    format!("{}", r.vs_bytes),
                    format!("{}", r.ratio_to_baseline),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let bars: Vec<(String, f64)> =
        out.rows.iter().map(|r| (r.name.clone(), r.fertility)).collect();
    io::write_bytes(&svg_path, plot::bar_chart("Fertility (tokens per word)", &bars).as_bytes())?;
    manifest.output(&json_path)?;
    manifest.output(&csv_path)?;
    manifest.output(&svg_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    for r in &out.rows {
        ctx.say(&format!("{}: fertility {:.3} ({:.2}x bytes)", r.name, r.fertility, r.vs_bytes));
    }
    Ok(())
}

fn tensor_to_matrix(t: &langadapt_core::model::Tensor) -> EmbeddingMatrix {
    EmbeddingMatrix { rows: t.shape[0], dim: t.shape[1], values: t.data.clone() }
}

pub fn transplant(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("transplant");
    let target_path = ctx.out("tokenizer_target.latk");
    let source_path = ctx.out("tokenizer_source.latk");
    let target = io::load_tokenizer(&target_path)?;
    let source = io::load_tokenizer(&source_path)?;
    manifest.input(&target_path)?;
    manifest.input(&source_path)?;

    // the donor model: source vocabulary, seeded random init
    let old_cfg = ctx.cfg.model.to_core(source.vocab_size());
    old_cfg.validate().map_err(|e| CliError::validation(e.to_string()))?;
    let old_params = ModelParams::init(&old_cfg, ctx.cfg.seed);
    let old_ckpt = Checkpoint::new(old_cfg, old_params);
    let donor_path = ctx.out("donor.lack");
    io::save_checkpoint(&donor_path, &old_ckpt)?;

    let mapping = build_vocab_mapping(&source, &target);
    let new_cfg = ctx.cfg.model.to_core(target.vocab_size());
    let mut new_params = ModelParams::init(&new_cfg, ctx.cfg.seed);
    let new_embed = transplant_matrix(&mapping, &tensor_to_matrix(&old_ckpt.params.embed))
        .map_err(|e| CliError::runtime(format!("transplant: {e}")))?;
    new_params.embed.data = new_embed.values;
    if let (Some(new_head), Some(old_head)) =
        (new_params.lm_head.as_mut(), old_ckpt.params.lm_head.as_ref())
    {
        let t = transplant_matrix(&mapping, &tensor_to_matrix(old_head))
            .map_err(|e| CliError::runtime(format!("transplant: {e}")))?;
        new_head.data = t.values;
    }
    // non-embedding weights carry over unchanged
    new_params.layers = old_ckpt.params.layers.clone();
    new_params.final_norm = old_ckpt.params.final_norm.clone();
    let new_ckpt = Checkpoint::new(new_cfg, new_params);
    let out_path = ctx.out("transplanted.lack");
    io::save_checkpoint(&out_path, &new_ckpt)?;

    manifest.output(&donor_path)?;
    manifest.output(&out_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    let kept = mapping
        .origins()
        .iter()
        .filter(|o| matches!(o, langadapt_core::transplant::TokenOrigin::Kept(_)))
        .count();
    ctx.say(&format!(
        "transplanted {} -> {} vocab ({kept} pieces kept verbatim)",
        source.vocab_size(),
        target.vocab_size()
    ));
    Ok(())
}

#[derive(Serialize)]
struct DedupOut {
    threshold: f64,
    rows: Vec<(String, usize, usize)>,
    total_removed: usize,
}

pub fn corpus_dedup(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("corpus-dedup");
    manifest.input(&ctx.cfg.paths.target_corpus)?;
    let (train, _) = ctx.target_split()?;
    let docs = vec![Document { source_tag: "target".to_string(), paragraphs: train }];
    let c = &ctx.cfg.corpus;
    let (deduped, report) = corpus::dedup(
        &docs,
        c.dedup_threshold,
        c.shingle_k,
        c.num_hashes,
        c.bands,
        ctx.cfg.seed,
    )
    .map_err(|e| CliError::runtime(format!("dedup: {e}")))?;

    let out_path = ctx.out("corpus_deduped.txt");
    let text: Vec<String> =
        deduped.into_iter().flat_map(|d| d.paragraphs).collect();
    io::write_bytes(&out_path, (text.join("\n\n") + "\n").as_bytes())?;
    let report_path = ctx.out("dedup_report.json");
    io::write_json(
        &report_path,
        &DedupOut {
            threshold: c.dedup_threshold,
            rows: report.rows.iter().map(|r| (r.source_tag.clone(), r.kept, r.removed)).collect(),
            total_removed: report.total_removed(),
        },
    )?;
    manifest.output(&out_path)?;
    manifest.output(&report_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    ctx.say(&format!("dedup removed {} near-duplicate paragraphs", report.total_removed()));
    Ok(())
}

#[derive(Serialize)]
struct FilterOut {
    threshold: f64,
    histogram: Vec<usize>,
    rows: Vec<(String, usize, usize)>,
}

pub fn corpus_filter(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("corpus-filter");
    let deduped_path = ctx.out("corpus_deduped.txt");
    let (in_path, paragraphs) = if deduped_path.exists() {
        let docs = io::load_corpus(&deduped_path)?;
        (deduped_path, docs.into_iter().flat_map(|d| d.paragraphs).collect::<Vec<_>>())
    } else {
        let (train, _) = ctx.target_split()?;
        (ctx.cfg.paths.target_corpus.clone(), train)
    };
    manifest.input(&in_path)?;

    let docs = vec![Document { source_tag: "target".to_string(), paragraphs }];
    let (kept, report) =
        corpus::filter(&docs, &HeuristicScorer, ctx.cfg.corpus.quality_threshold);
    let out_path = ctx.out("corpus_filtered.txt");
    let text: Vec<String> = kept.into_iter().flat_map(|d| d.paragraphs).collect();
    if text.is_empty() {
        return Err(CliError::runtime(
            "quality filter removed every paragraph; lower corpus.quality_threshold".to_string(),
        ));
    }
    io::write_bytes(&out_path, (text.join("\n\n") + "\n").as_bytes())?;
    let report_path = ctx.out("filter_report.json");
    io::write_json(
        &report_path,
        &FilterOut {
            threshold: report.threshold,
            histogram: report.histogram.to_vec(),
            rows: report.rows.iter().map(|r| (r.source_tag.clone(), r.kept, r.dropped)).collect(),
        },
    )?;
    manifest.output(&out_path)?;
    manifest.output(&report_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    let dropped: usize = report.rows.iter().map(|r| r.dropped).sum();
    ctx.say(&format!("quality filter kept {} paragraphs, dropped {dropped}", text.len()));
    Ok(())
}

pub fn pretrain(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("pretrain");
    let init_path = ctx.out("transplanted.lack");
    let tok_path = ctx.out("tokenizer_target.latk");
    let init = io::load_checkpoint(&init_path)?;
    let tok = io::load_tokenizer(&tok_path)?;
    manifest.input(&init_path)?;
    manifest.input(&tok_path)?;

    let (corpus_path, mut paragraphs) = ctx.best_corpus()?;
    manifest.input(&corpus_path)?;
    if ctx.cfg.pretrain.max_paragraphs > 0 {
        paragraphs.truncate(ctx.cfg.pretrain.max_paragraphs);
    }
    let stream = tokenize_stream(&tok, &paragraphs);
    let cfg = ctx.cfg.pretrain.to_core(ctx.cfg.seed)?;
    ctx.say(&format!(
        "continued pre-training on {} tokens ({} paragraphs)",
        stream.len(),
        paragraphs.len()
    ));
    let reference = init.clone();
    let (trained, log) = continued_pretrain(&init, Some(&reference), &stream, &cfg)
        .map_err(|e| CliError::runtime(format!("pretrain: {e}")))?;

    let ckpt_path = ctx.out("pretrained.lack");
    let metrics_path = ctx.out("pretrain_metrics.jsonl");
    io::save_checkpoint(&ckpt_path, &trained)?;
    io::write_metrics_jsonl(&metrics_path, &log)?;
    let curve: Vec<(f64, f64)> =
        log.iter().map(|m| (m.step as f64, m.l_total)).collect();
    let svg_path = ctx.out("pretrain_loss.svg");
    io::write_bytes(&svg_path, plot::line_chart("Pre-training loss", &curve).as_bytes())?;
    manifest.output(&ckpt_path)?;
    manifest.output(&metrics_path)?;
    manifest.output(&svg_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        ctx.say(&format!(
            "loss {:.4} -> {:.4} over {} steps",
            first.l_total,
            last.l_total,
            log.len()
        ));
    }
    Ok(())
}

/// Dedup + reward-filter + render the instruction set for SFT.
fn prepare_sft_examples(
    ctx: &Ctx,
    tok: &TokenizerModel,
    pairs: &[InstructionPair],
    max_seq_len: usize,
) -> Result<Vec<(Vec<u32>, Vec<bool>)>, CliError> {
    let (deduped, _) = dedup_instructions(pairs, ctx.cfg.sft.dedup_threshold)
        .map_err(|e| CliError::runtime(format!("instruction dedup: {e}")))?;
    let (mut kept, _) = filter_by_reward(&deduped, &HeuristicReward, ctx.cfg.sft.reward_threshold);
    if ctx.cfg.sft.max_pairs > 0 {
        kept.truncate(ctx.cfg.sft.max_pairs);
    }
    let template = ChatTemplate::default();
    let mut examples = Vec::with_capacity(kept.len());
    for pair in &kept {
        match render_chat(pair, &template, tok, max_seq_len) {
            Ok(e) => examples.push(e),
            Err(langadapt_core::instruct::InstructError::PromptTooLong { .. }) => continue,
            Err(e) => return Err(CliError::runtime(format!("render: {e}"))),
        }
    }
    if examples.is_empty() {
        return Err(CliError::runtime("no instruction pairs survived preparation".to_string()));
    }
    Ok(examples)
}

pub fn sft(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("sft");
    let init_path = if ctx.out("pretrained.lack").exists() {
        ctx.out("pretrained.lack")
    } else {
        ctx.out("transplanted.lack")
    };
    let tok_path = ctx.out("tokenizer_target.latk");
    let mut init = io::load_checkpoint(&init_path)?;
    init.optimizer = None; // fresh optimizer for the fine-tuning phase
    let tok = io::load_tokenizer(&tok_path)?;
    manifest.input(&init_path)?;
    manifest.input(&tok_path)?;
    manifest.input(&ctx.cfg.paths.instructions)?;

    let pairs = io::load_instructions(&ctx.cfg.paths.instructions)?;
    let examples = prepare_sft_examples(ctx, &tok, &pairs, init.config.max_seq_len)?;
    ctx.say(&format!("instruction tuning on {} rendered pairs", examples.len()));
    let cfg = ctx.cfg.sft.train.to_core(ctx.cfg.seed)?;
    let (tuned, log) = sft_train(&init, &examples, &cfg)
        .map_err(|e| CliError::runtime(format!("sft: {e}")))?;

    let ckpt_path = ctx.out("sft.lack");
    let metrics_path = ctx.out("sft_metrics.jsonl");
    io::save_checkpoint(&ckpt_path, &tuned)?;
    io::write_metrics_jsonl(&metrics_path, &log)?;
    manifest.output(&ckpt_path)?;
    manifest.output(&metrics_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    Ok(())
}

pub fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("eval");
    let ckpt_path = ["sft.lack", "pretrained.lack", "transplanted.lack"]
        .iter()
        .map(|n| ctx.out(n))
        .find(|p| p.exists())
        .ok_or_else(|| {
            CliError::validation("no checkpoint found; run pretrain first".to_string())
        })?;
    let tok_path = ctx.out("tokenizer_target.latk");
    let ckpt = io::load_checkpoint(&ckpt_path)?;
    let tok = io::load_tokenizer(&tok_path)?;
    manifest.input(&ckpt_path)?;
    manifest.input(&tok_path)?;
    manifest.input(&ctx.cfg.paths.mcq)?;

    let (_, holdout) = ctx.target_split()?;
    let mut items = io::load_mcq(&ctx.cfg.paths.mcq)?;
    if ctx.cfg.eval.max_mcq_items > 0 {
        items.truncate(ctx.cfg.eval.max_mcq_items);
    }
    let report = evaluate(
        &ckpt,
        &tok,
        &holdout,
        &items,
        ctx.cfg.eval.scoring()?,
        ctx.cfg.seed,
        "bundled-holdout",
    )
    .map_err(|e| CliError::runtime(format!("eval: {e}")))?;

    #[derive(Serialize)]
    struct ReportOut {
        checkpoint: String,
        ppl: f64,
        accuracy: f64,
        seed: u64,
        config_hash: String,
        dataset_id: String,
    }
    let ckpt_name = ckpt_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let out = ReportOut {
        checkpoint: ckpt_name,
        ppl: report.ppl,
        accuracy: report.accuracy,
        seed: report.seed,
        config_hash: format!("{:016x}", report.config_hash),
        dataset_id: report.dataset_id.clone(),
    };
    let json_path = ctx.out("eval_report.json");
    let csv_path = ctx.out("eval_report.csv");
    io::write_json(&json_path, &out)?;
    io::write_csv(
        &csv_path,
        &["checkpoint", "ppl", "accuracy"],
        &[vec![out.checkpoint.clone(), format!("{}", out.ppl), format!("{}", out.accuracy)]],
    )?;
    manifest.output(&json_path)?;
    manifest.output(&csv_path)?;
    manifest.write(&ctx.cfg.paths.out_dir)?;
    ctx.say(&format!("ppl {:.3}, accuracy@1 {:.3}", report.ppl, report.accuracy));
    Ok(())
}

#[derive(Serialize)]
struct AblationTableOut {
    table: String,
    rows: Vec<AblationRowOut>,
}

#[derive(Serialize)]
struct AblationRowOut {
    variant: String,
    ppl: Option<f64>,
    accuracy: Option<f64>,
    mean_kl: Option<f64>,
    diverged: bool,
}

fn rows_out(rows: &[AblationRow]) -> Vec<AblationRowOut> {
    rows.iter()
        .map(|r| AblationRowOut {
            variant: r.variant.clone(),
            ppl: r.ppl,
            accuracy: r.accuracy,
            mean_kl: r.mean_kl,
            diverged: r.diverged,
        })
        .collect()
}

fn write_ablation_table(
    ctx: &Ctx,
    manifest: &mut Manifest,
    name: &str,
    rows: Vec<AblationRowOut>,
) -> Result<(), CliError> {
    let json_path = ctx.out(&format!("ablation_{name}.json"));
    let csv_path = ctx.out(&format!("ablation_{name}.csv"));
    io::write_json(&json_path, &AblationTableOut { table: name.to_string(), rows: rows.clone() })?;
    io::write_csv(
        &csv_path,
        &["variant", "ppl", "accuracy", "mean_kl", "diverged"],
        &rows
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    r.ppl.map(|v| format!("{v}")).unwrap_or_default(),
                    r.accuracy.map(|v| format!("{v}")).unwrap_or_default(),
                    r.mean_kl.map(|v| format!("{v}")).unwrap_or_default(),
                    format!("{}", r.diverged),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let bars: Vec<(String, f64)> = rows
        .iter()
        .filter_map(|r| r.ppl.map(|v| (r.variant.clone(), v)))
        .collect();
    if !bars.is_empty() {
        let svg_path = ctx.out(&format!("ablation_{name}.svg"));
        io::write_bytes(
            &svg_path,
            plot::bar_chart(&format!("{name} ablation (PPL, lower is better)"), &bars).as_bytes(),
        )?;
        manifest.output(&svg_path)?;
    }
    manifest.output(&json_path)?;
    manifest.output(&csv_path)?;
    Ok(())
}

impl Clone for AblationRowOut {
    fn clone(&self) -> Self {
        AblationRowOut {
            variant: self.variant.clone(),
            ppl: self.ppl,
            accuracy: self.accuracy,
            mean_kl: self.mean_kl,
            diverged: self.diverged,
        }
    }
}

/// Deterministic junk used for the filtration ablation: one long symbol-heavy
/// "word" repeated over and over, which fails the repetition, word-length, and
/// alphabetic-ratio checks at once.
fn noise_paragraph(rng: &mut langadapt_core::rng::Rng) -> String {
    let glyphs: Vec<char> = "0123456789#$%&*@{}[]<>|\\/~^".chars().collect();
    let word: String = (0..14 + rng.below(6)).map(|_| glyphs[rng.below(glyphs.len())]).collect();
    let reps = 20 + rng.below(40);
    vec![word; reps].join(" ")
}

pub fn ablate(ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("ablate");
    let tok_path = ctx.out("tokenizer_target.latk");
    let init_path = ctx.out("transplanted.lack");
    let tok = io::load_tokenizer(&tok_path)?;
    let init = io::load_checkpoint(&init_path)?;
    manifest.input(&tok_path)?;
    manifest.input(&init_path)?;

    let (train, holdout) = ctx.target_split()?;
    let budget = ctx.cfg.ablate.steps_budget_paragraphs.max(ctx.cfg.pretrain.batch_size);
    let budget_paragraphs: Vec<String> = train.iter().take(budget).cloned().collect();
    let base_cfg = ctx.cfg.pretrain.to_core(ctx.cfg.seed)?;
    let scoring = ctx.cfg.eval.scoring()?;
    let mut items = io::load_mcq(&ctx.cfg.paths.mcq)?;
    items.truncate(ctx.cfg.eval.max_mcq_items.max(1));

    // 1. regularization: one variant per beta (0 = no regularization)
    ctx.say("ablation 1/4: regularization");
    let stream = tokenize_stream(&tok, &budget_paragraphs);
    let reg_variants: Vec<AblationVariant> = ctx
        .cfg
        .ablate
        .betas
        .iter()
        .map(|&beta| AblationVariant {
            name: if beta == 0.0 {
                "no_regul".to_string()
            } else {
                format!("kl_beta_{beta}")
            },
            cfg: langadapt_core::trainer::TrainConfig {
                reg_mode: if beta == 0.0 {
                    langadapt_core::trainer::RegMode::Kl { beta: 0.0 }
                } else {
                    langadapt_core::trainer::RegMode::Kl { beta }
                },
                ..base_cfg
            },
            tokens: stream.clone(),
        })
        .collect();
    let rows =
        run_ablation(&init, &tok, &reg_variants, &holdout, &items, scoring, ctx.cfg.seed)
            .map_err(|e| CliError::runtime(format!("regularization ablation: {e}")))?;
    write_ablation_table(ctx, &mut manifest, "regularization", rows_out(&rows))?;

    // 2. filtration: clean-vs-noisy corpus at equal token budget
    ctx.say("ablation 2/4: filtration");
    let mut rng = langadapt_core::rng::Rng::new(ctx.cfg.seed ^ 0xF11);
    let noise_count = (budget_paragraphs.len() as f64 * ctx.cfg.ablate.noise_fraction
        / (1.0 - ctx.cfg.ablate.noise_fraction)) as usize;
    let mut noisy: Vec<String> = Vec::new();
    for (i, p) in budget_paragraphs.iter().enumerate() {
        noisy.push(p.clone());
        if i < noise_count {
            noisy.push(noise_paragraph(&mut rng));
        }
    }
    let noisy_docs = vec![Document { source_tag: "noisy".to_string(), paragraphs: noisy }];
    let (filtered_docs, _) =
        corpus::filter(&noisy_docs, &HeuristicScorer, ctx.cfg.corpus.quality_threshold);
    let filtered: Vec<String> =
        filtered_docs.into_iter().flat_map(|d| d.paragraphs).collect();
    let unfiltered_stream = tokenize_stream(&tok, &noisy_docs[0].paragraphs);
    let filtered_stream = tokenize_stream(&tok, &filtered);
    let token_budget = unfiltered_stream.len().min(filtered_stream.len());
    let filt_variants = vec![
        AblationVariant {
            name: "unfiltered".to_string(),
            cfg: base_cfg,
            tokens: unfiltered_stream[..token_budget].to_vec(),
        },
        AblationVariant {
            name: "filtered".to_string(),
            cfg: base_cfg,
            tokens: filtered_stream[..token_budget].to_vec(),
        },
    ];
    let rows =
        run_ablation(&init, &tok, &filt_variants, &holdout, &items, scoring, ctx.cfg.seed)
            .map_err(|e| CliError::runtime(format!("filtration ablation: {e}")))?;
    write_ablation_table(ctx, &mut manifest, "filtration", rows_out(&rows))?;

    // 3. vocabulary size sweep: tokenizer + model per size
    ctx.say("ablation 3/4: vocabulary size");
    let refs: Vec<&str> = budget_paragraphs.iter().map(String::as_str).collect();
    let mut vocab_rows = Vec::new();
    for &size in &ctx.cfg.ablate.vocab_sizes {
        let section = TokenizerConfig {
            target_vocab: size,
            seed_vocab: ctx.cfg.tokenizer.seed_vocab.max(size + 1),
            ..ctx.cfg.tokenizer.clone()
        };
        let sized_tok = train_tokenizer(&section, &refs, ctx.cfg.seed)?;
        let cfg = ctx.cfg.model.to_core(sized_tok.vocab_size());
        let sized_init = Checkpoint::new(cfg, ModelParams::init(&cfg, ctx.cfg.seed));
        let sized_stream = tokenize_stream(&sized_tok, &budget_paragraphs);
        // no frozen reference exists for a fresh vocabulary, so train plain
        let sweep_cfg = langadapt_core::trainer::TrainConfig {
            reg_mode: langadapt_core::trainer::RegMode::None,
            ..base_cfg
        };
        match continued_pretrain(&sized_init, None, &sized_stream, &sweep_cfg) {
            Ok((trained, _)) => {
                let ppl = perplexity(&trained, &sized_tok, &holdout)
                    .map_err(|e| CliError::runtime(format!("vocab ablation eval: {e}")))?;
                vocab_rows.push(AblationRowOut {
                    variant: format!("vocab_{size}"),
                    ppl: Some(ppl),
                    accuracy: None,
                    mean_kl: None,
                    diverged: false,
                });
            }
            Err(
                langadapt_core::trainer::TrainError::NonFiniteGradient
                | langadapt_core::trainer::TrainError::Model(
                    langadapt_core::model::ModelError::NonFiniteLoss,
                ),
            ) => vocab_rows.push(AblationRowOut {
                variant: format!("vocab_{size}"),
                ppl: None,
                accuracy: None,
                mean_kl: None,
                diverged: true,
            }),
            Err(e) => return Err(CliError::runtime(format!("vocab ablation: {e}"))),
        }
    }
    write_ablation_table(ctx, &mut manifest, "vocab", vocab_rows)?;

    // 4. instruction set: SFT on language subsets from a shared checkpoint
    ctx.say("ablation 4/4: instruction set");
    let sft_init_path = if ctx.out("pretrained.lack").exists() {
        ctx.out("pretrained.lack")
    } else {
        init_path.clone()
    };
    let mut sft_init = io::load_checkpoint(&sft_init_path)?;
    sft_init.optimizer = None;
    let pairs = io::load_instructions(&ctx.cfg.paths.instructions)?;
    let sft_cfg = ctx.cfg.sft.train.to_core(ctx.cfg.seed)?;
    let subsets: Vec<(&str, Vec<InstructionPair>)> = vec![
        ("ru_only", pairs.iter().filter(|p| p.language == Language::Ru).cloned().collect()),
        ("en_only", pairs.iter().filter(|p| p.language == Language::En).cloned().collect()),
        ("all", pairs.clone()),
    ];
    let mut sft_rows = Vec::new();
    for (name, subset) in subsets {
        if subset.len() < sft_cfg.batch_size {
            continue;
        }
        let examples = prepare_sft_examples(ctx, &tok, &subset, sft_init.config.max_seq_len)?;
        match sft_train(&sft_init, &examples, &sft_cfg) {
            Ok((tuned, _)) => {
                let ppl = perplexity(&tuned, &tok, &holdout)
                    .map_err(|e| CliError::runtime(format!("sft ablation eval: {e}")))?;
                let accuracy = mcq_accuracy(&tuned, &tok, &items, scoring)
                    .map_err(|e| CliError::runtime(format!("sft ablation eval: {e}")))?;
                sft_rows.push(AblationRowOut {
                    variant: name.to_string(),
                    ppl: Some(ppl),
                    accuracy: Some(accuracy),
                    mean_kl: None,
                    diverged: false,
                });
            }
            Err(
                langadapt_core::trainer::TrainError::NonFiniteGradient
                | langadapt_core::trainer::TrainError::Model(
                    langadapt_core::model::ModelError::NonFiniteLoss,
                ),
            ) => sft_rows.push(AblationRowOut {
                variant: name.to_string(),
                ppl: None,
                accuracy: None,
                mean_kl: None,
                diverged: true,
            }),
            Err(e) => return Err(CliError::runtime(format!("instruction ablation: {e}"))),
        }
    }
    write_ablation_table(ctx, &mut manifest, "instruction_set", sft_rows)?;

    manifest.write(&ctx.cfg.paths.out_dir)?;
    Ok(())
}

/// All stages end-to-end: tokenizers, transplant, corpus cleanup, pretrain,
/// sft, eval, plus a combined manifest over every artifact.
pub fn pipeline(ctx: &Ctx) -> Result<(), CliError> {
    tokenizer_train(ctx)?;
    tokenizer_analyze(ctx)?;
    transplant(ctx)?;
    corpus_dedup(ctx)?;
    corpus_filter(ctx)?;
    pretrain(ctx)?;
    sft(ctx)?;
    eval(ctx)?;

    let mut manifest = ctx.manifest("pipeline");
    for name in [
        "tokenizer_target.latk",
        "tokenizer_source.latk",
        "fertility.json",
        "donor.lack",
        "transplanted.lack",
        "corpus_deduped.txt",
        "corpus_filtered.txt",
        "pretrained.lack",
        "pretrain_metrics.jsonl",
        "sft.lack",
        "sft_metrics.jsonl",
        "eval_report.json",
    ] {
        let p = ctx.out(name);
        if p.exists() {
            manifest.output(&p)?;
        }
    }
    manifest.write(&ctx.cfg.paths.out_dir)?;
    ctx.say("pipeline complete");
    Ok(())
}

pub fn run_command(name: &str, ctx: &Ctx) -> Result<(), CliError> {
    match name {
        "tokenizer-train" => tokenizer_train(ctx),
        "tokenizer-analyze" => tokenizer_analyze(ctx),
        "transplant" => transplant(ctx),
        "corpus-dedup" => corpus_dedup(ctx),
        "corpus-filter" => corpus_filter(ctx),
        "pretrain" => pretrain(ctx),
        "sft" => sft(ctx),
        "eval" => eval(ctx),
        "ablate" => ablate(ctx),
        "pipeline" => pipeline(ctx),
        other => Err(CliError::validation(format!("unknown command {other:?}"))),
    }
}

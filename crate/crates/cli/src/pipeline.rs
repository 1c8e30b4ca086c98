//! Implementation of the CLI subcommands: data building, training,
//! evaluation, sampling, and fine-tuning.

use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use unitext::builder::{read_shards, write_shards, BuildError, MixedSequence, SeqBuilder, SeqFormat};
use unitext::corpus::{
    load_manifest, save_manifest, split_corpus, synthesize_with_lexicon, AlignedUtterance, Lexicon,
};
use unitext::downstream::{
    beam_decode, build_ner_task, build_sa_task, entity_f1, eval_classifier, extract_entities,
    finetune_classifier, majority_baseline, ner_output_mask, ner_records, ner_train_sequence,
    reference_entities, sa_records, task_input_ids, ClassifierCfg, NER_SPECIALS,
};
use unitext::eval::{
    continuation_decoder, cont_ids, cra_from_matrix, pelm, pmi_consistent, prompt_ids,
    repetition_rate, score_matrix, select_eval_set, KneserNeyTrigram, PelmConfig,
};
use unitext::model::{
    load_checkpoint, save_checkpoint, train, ModelConfig, ModelParams, StreamSet, TrainConfig,
    TrainSequence,
};
use unitext::report::{sha256_hex, MetricReport};
use unitext::sample::SampleParams;
use unitext::subword::{deduplicate, TextSubwordModel, UnitSubwordModel};
use unitext::vocab::{JointVocab, Modality, Special};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

/// Reproducibility block written into every run directory.
fn write_run_record(
    dir: &Path,
    cfg: &RunConfig,
    command: &str,
    corpus_hash: &str,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut fields = vec![
        ("command".to_string(), command.to_string()),
        ("code_version".to_string(), CODE_VERSION.to_string()),
        (
            "config_hash".to_string(),
            sha256_hex(cfg.canonical_json().as_bytes()),
        ),
        ("corpus_hash".to_string(), corpus_hash.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    for (k, v) in extra {
        fields.push((k.to_string(), v.clone()));
    }
    let map: serde_json::Map<String, serde_json::Value> = fields
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    write_file(
        &dir.join("run.json"),
        &serde_json::to_string_pretty(&serde_json::Value::Object(map))?,
    )
}

/// Accessor for an on-disk data directory produced by `build-data`.
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn load_models(&self) -> Result<(UnitSubwordModel, TextSubwordModel)> {
        let u = UnitSubwordModel::load(&self.p("units.subword"))?;
        let t = TextSubwordModel::load(&self.p("text.subword"))?;
        Ok((u, t))
    }

    pub fn load_lexicon(&self) -> Result<Lexicon> {
        Ok(Lexicon::load(&self.p("lexicon.json"))?)
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<AlignedUtterance>> {
        Ok(load_manifest(&self.p(&format!("{split}.jsonl")))?)
    }

    pub fn corpus_hash(&self) -> Result<String> {
        let bytes = std::fs::read(self.p("train.jsonl"))
            .with_context(|| format!("cannot read {}", self.p("train.jsonl").display()))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn shard_path(&self, fmt: SeqFormat) -> PathBuf {
        self.p(&format!("shards/{}.shard", fmt_name(fmt)))
    }
}

fn fmt_name(fmt: SeqFormat) -> &'static str {
    match fmt {
        SeqFormat::Ulm => "ulm",
        SeqFormat::Tlm => "tlm",
        SeqFormat::Cst => "cst",
        SeqFormat::Ast => "ast",
    }
}

/// The joint vocabulary always carries the entity tags so pre-training and
/// fine-tuning share one table.
pub fn build_vocab(u: &UnitSubwordModel, t: &TextSubwordModel) -> JointVocab {
    JointVocab::build(u, t, &NER_SPECIALS)
}

fn model_config(cfg: &RunConfig, vocab: &JointVocab) -> ModelConfig {
    ModelConfig {
        n_layers: cfg.model.n_layers,
        n_heads: cfg.model.n_heads,
        embed_dim: cfg.model.embed_dim,
        ffn_dim: cfg.model.ffn_dim,
        dropout_prob: cfg.model.dropout_prob,
        max_seq_len: cfg.model.max_seq_len,
        vocab_size: vocab.size(),
        tie_embeddings: cfg.model.tie_embeddings,
        pad_id: Some(Special::Pad.id()),
    }
}

/// Re-derive the word-to-unit mapping from an ingested manifest. Fails if any
/// word maps to two different deduplicated spans.
fn derive_lexicon(corpus: &[AlignedUtterance]) -> Result<Lexicon> {
    let mut map: HashMap<String, Vec<u32>> = HashMap::new();
    let mut max_unit = 0u32;
    for utt in corpus {
        for (i, w) in utt.words.iter().enumerate() {
            let (s, e) = utt.word_span(i);
            let entry = deduplicate(&utt.stream.units[s..e])?;
            max_unit = max_unit.max(*entry.iter().max().unwrap());
            if let Some(prev) = map.insert(w.clone(), entry.clone()) {
                if prev != entry {
                    bail!("word {w:?} maps to two different unit spans; cannot derive a lexicon");
                }
            }
        }
    }
    let mut words: Vec<String> = map.keys().cloned().collect();
    words.sort();
    let entries = words.iter().map(|w| map[w].clone()).collect();
    Ok(Lexicon {
        words,
        entries,
        unit_alphabet: max_unit as usize + 1,
    })
}

pub struct BuildDataOpts {
    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
    pub formats: Vec<SeqFormat>,
    pub dump: bool,
}

pub fn build_data(cfg: &RunConfig, opts: &BuildDataOpts) -> Result<()> {
    std::fs::create_dir_all(opts.out.join("shards"))?;
    let (lexicon, corpus) = match &opts.manifest {
        Some(path) => {
            let corpus = load_manifest(path)?;
            println!("ingested {} utterances from {}", corpus.len(), path.display());
            (derive_lexicon(&corpus)?, corpus)
        }
        None => {
            let lexicon = Lexicon::generate(&cfg.corpus)?;
            let corpus = synthesize_with_lexicon(&cfg.corpus, &lexicon)?;
            println!(
                "synthesized {} utterances over a {}-word lexicon",
                corpus.len(),
                lexicon.words.len()
            );
            (lexicon, corpus)
        }
    };

    let fractions = (cfg.split.train, cfg.split.dev, cfg.split.test);
    let (train_set, dev_set, test_set) = split_corpus(&corpus, fractions, cfg.seed)?;
    save_manifest(&opts.out.join("train.jsonl"), &train_set)?;
    save_manifest(&opts.out.join("dev.jsonl"), &dev_set)?;
    save_manifest(&opts.out.join("test.jsonl"), &test_set)?;
    lexicon.save(&opts.out.join("lexicon.json"))?;

    let dedup_corpus: Vec<Vec<u32>> = train_set
        .iter()
        .map(|u| deduplicate(&u.stream.units))
        .collect::<Result<_, _>>()?;
    let unit_model = UnitSubwordModel::train(&dedup_corpus, cfg.tokenizer.vocab_size_units)?;
    let lines: Vec<String> = train_set.iter().map(|u| u.words.join(" ")).collect();
    let text_model = TextSubwordModel::train(&lines, cfg.tokenizer.vocab_size_text)?;
    unit_model.save(&opts.out.join("units.subword"))?;
    text_model.save(&opts.out.join("text.subword"))?;

    let streams: Vec<_> = train_set.iter().map(|u| u.stream.clone()).collect();
    let rates = unitext::subword::units::rate_report(&streams, &unit_model);
    println!(
        "tokens/second raw {:.2} -> dedup {:.2} -> subword {:.2}",
        rates.raw, rates.dedup, rates.subword
    );

    let vocab = build_vocab(&unit_model, &text_model);
    let builder = SeqBuilder::new(&unit_model, &text_model, &vocab);
    println!("joint vocabulary: {} tokens", vocab.size());

    for &fmt in &opts.formats {
        let mut seqs = Vec::with_capacity(train_set.len());
        for (i, utt) in train_set.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((fmt as u64) << 32) ^ i as u64);
            let seq = match fmt {
                SeqFormat::Ulm => builder.build_ulm(utt)?,
                SeqFormat::Tlm => builder.build_tlm(utt)?,
                SeqFormat::Cst => builder.build_cst(utt, None, &mut rng)?,
                SeqFormat::Ast => match builder.build_ast(utt, None, &mut rng) {
                    Ok(seq) => seq,
                    // Single-word utterances cannot alternate.
                    Err(BuildError::NoInternalBoundary) => builder.build_cst(utt, None, &mut rng)?,
                    Err(e) => return Err(e.into()),
                },
            };
            builder
                .validate(&seq)
                .map_err(|e| anyhow::anyhow!("built sequence fails validation: {e}"))?;
            seqs.push(seq);
        }
        write_shards(&DataDir::new(&opts.out).shard_path(fmt), &seqs)?;
        println!("wrote {} {} sequences", seqs.len(), fmt_name(fmt));
        if opts.dump {
            std::fs::create_dir_all(opts.out.join("dump"))?;
            let body: String = seqs
                .iter()
                .take(12)
                .map(|s| format!("{}\t{}\n", s.utterance_id, builder.render(s)))
                .collect();
            write_file(&opts.out.join(format!("dump/{}.txt", fmt_name(fmt))), &body)?;
        }
    }

    let corpus_hash = DataDir::new(&opts.out).corpus_hash()?;
    write_run_record(&opts.out, cfg, "build-data", &corpus_hash, &[])?;
    Ok(())
}

pub struct TrainOpts {
    pub data: PathBuf,
    pub out: PathBuf,
    pub streams: Vec<SeqFormat>,
}

fn to_train_sequences(seqs: Vec<MixedSequence>) -> Vec<TrainSequence> {
    seqs.into_iter().map(|s| TrainSequence::full(s.ids)).collect()
}

pub fn train_cmd(cfg: &RunConfig, opts: &TrainOpts) -> Result<()> {
    std::fs::create_dir_all(&opts.out)?;
    let data = DataDir::new(&opts.data);
    let (unit_model, text_model) = data.load_models()?;
    let vocab = build_vocab(&unit_model, &text_model);
    let mcfg = model_config(cfg, &vocab);

    let mut set = StreamSet::default();
    for &fmt in &opts.streams {
        let seqs = read_shards(&data.shard_path(fmt))?;
        let seqs = to_train_sequences(seqs);
        match fmt {
            SeqFormat::Ulm => set.speech.extend(seqs),
            SeqFormat::Tlm => set.text.extend(seqs),
            SeqFormat::Cst | SeqFormat::Ast => set.mixed.extend(seqs),
        }
    }
    println!(
        "training on {} speech / {} mixed / {} text sequences",
        set.speech.len(),
        set.mixed.len(),
        set.text.len()
    );

    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let params = ModelParams::<f32>::init(&mcfg, cfg.seed);
    let log_path = opts.out.join("train.log");
    let mut log_file = std::io::BufWriter::new(
        std::fs::File::create(&log_path)
            .with_context(|| format!("cannot create {}", log_path.display()))?,
    );
    let outcome = train(&mcfg, &tc, params, &set, |rec| {
        let line = format!(
            r#"{{"step":{},"loss":{:.6},"lr":{:.8},"grad_norm":{:.6}}}"#,
            rec.step, rec.loss, rec.lr, rec.grad_norm
        );
        writeln!(log_file, "{line}").expect("log write");
        if rec.step % 200 == 0 {
            println!("step {:>6}  loss {:.4}  grad norm {:.3}", rec.step, rec.loss, rec.grad_norm);
        }
    })?;
    drop(log_file);

    save_checkpoint(&opts.out.join("checkpoint.ckpt"), &mcfg, &outcome.params)?;
    let final_loss = outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("final train loss {final_loss:.4}");
    write_run_record(
        &opts.out,
        cfg,
        "train",
        &data.corpus_hash()?,
        [
            ("streams".to_string(), opts.streams.iter().map(|f| fmt_name(*f)).collect::<Vec<_>>().join(",")),
            ("final_loss".to_string(), format!("{final_loss:.6}")),
        ]
        .iter()
        .map(|(k, v)| (k.as_str(), v.clone()))
        .collect::<Vec<_>>()
        .as_slice(),
    )?;
    Ok(())
}

pub const DIRECTIONS: [(Modality, Modality, &str); 4] = [
    (Modality::Speech, Modality::Speech, "u2u"),
    (Modality::Text, Modality::Speech, "t2u"),
    (Modality::Speech, Modality::Text, "u2t"),
    (Modality::Text, Modality::Text, "t2t"),
];

pub struct EvalOpts {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub split: String,
}

pub fn eval_cmd(cfg: &RunConfig, opts: &EvalOpts) -> Result<()> {
    std::fs::create_dir_all(&opts.out)?;
    let data = DataDir::new(&opts.data);
    let (unit_model, text_model) = data.load_models()?;
    let vocab = build_vocab(&unit_model, &text_model);
    let builder = SeqBuilder::new(&unit_model, &text_model, &vocab);
    let lexicon = data.load_lexicon()?;
    let (mcfg, params) = load_checkpoint::<f32>(&opts.checkpoint)?;
    if mcfg.vocab_size != vocab.size() {
        bail!(
            "checkpoint vocabulary ({}) does not match the data directory ({})",
            mcfg.vocab_size,
            vocab.size()
        );
    }

    let eval_corpus = data.load_split(&opts.split)?;
    let n = cfg.eval.pelm_n.max(cfg.eval.cra_m);
    let items = select_eval_set(&eval_corpus, n, cfg.eval.min_words, cfg.eval.prompt_words)?;
    let eval_set_hash = sha256_hex(
        items
            .iter()
            .map(|i| i.utterance_id.as_str())
            .collect::<Vec<_>>()
            .join("\n")
            .as_bytes(),
    );

    let scorer = KneserNeyTrigram::train(
        &data
            .load_split("train")?
            .iter()
            .map(|u| u.words.clone())
            .collect::<Vec<_>>(),
    );

    let mut report = MetricReport::new();
    report
        .header("code_version", CODE_VERSION)
        .header("config_hash", sha256_hex(cfg.canonical_json().as_bytes()))
        .header("corpus_hash", data.corpus_hash()?)
        .header("eval_split", &opts.split)
        .header("eval_set_hash", &eval_set_hash)
        .header("eval_set_n", items.len());

    println!("direction      CRA     PELM  repetition");
    for (pm, cm, name) in DIRECTIONS {
        let cra_items = &items[..cfg.eval.cra_m.min(items.len())];
        let prompts: Vec<Vec<u32>> = cra_items
            .iter()
            .map(|i| prompt_ids(&builder, i, pm, cm))
            .collect::<Result<_, _>>()?;
        let conts: Vec<Vec<u32>> = cra_items
            .iter()
            .map(|i| cont_ids(&builder, i, cm))
            .collect::<Result<_, _>>()?;
        let ids: Vec<String> = cra_items.iter().map(|i| i.utterance_id.clone()).collect();
        let mask = vocab.modality_mask(cm)?;
        let matrix = score_matrix(&params, &mcfg, &prompts, &conts, &ids, Some(&mask), true)?;
        let cra = cra_from_matrix(&matrix);
        let unconditional = vec![0.0; prompts.len()];
        assert!(pmi_consistent(&matrix, &unconditional));

        let pelm_items = &items[..cfg.eval.pelm_n.min(items.len())];
        let pelm_prompts: Vec<Vec<u32>> = pelm_items
            .iter()
            .map(|i| prompt_ids(&builder, i, pm, cm))
            .collect::<Result<_, _>>()?;
        let pelm_ids: Vec<String> = pelm_items.iter().map(|i| i.utterance_id.clone()).collect();
        let gt: Vec<Vec<String>> = pelm_items.iter().map(|i| i.prompt_words.clone()).collect();
        let decoder = continuation_decoder(&builder, cm, &lexicon);
        let pc = PelmConfig {
            sample: SampleParams {
                temperature: cfg.eval.temperature,
                nucleus_p: cfg.eval.nucleus_p,
                max_new: cfg.eval.max_new_tokens,
            },
            truncate_words: cfg.eval.truncate_words,
            seed: cfg.seed ^ (name.len() as u64) ^ fmt_dir_seed(name),
        };
        let pelm_out = pelm(
            &params, &mcfg, &pelm_prompts, &pelm_ids, &gt, &mask, &decoder, &scorer, &pc,
        )?;
        let mut rep_sum = 0.0;
        let mut rep_flagged = 0usize;
        for (item, pi) in pelm_items.iter().zip(&pelm_out.items) {
            let r = repetition_rate(&item.prompt_words, &pi.cont_words);
            rep_sum += r.rate;
            rep_flagged += r.too_short as usize;
        }
        let rep_mean = rep_sum / pelm_out.items.len().max(1) as f64;

        println!(
            "{name:>9}  {:>6.3}  {:>7.2}  {:>10.3}",
            cra.accuracy, pelm_out.pelm, rep_mean
        );
        report.record(format!(
            "cra {name} accuracy={:.6} ties={} dead_rows={} flagged_cells={}",
            cra.accuracy, cra.ties, cra.dead_rows, matrix.flagged
        ));
        report.record(format!(
            "pelm {name} value={:.6} excluded={} scored={}",
            pelm_out.pelm,
            pelm_out.excluded,
            pelm_out.items.len()
        ));
        report.record(format!(
            "repetition {name} mean={:.6} flagged={}",
            rep_mean, rep_flagged
        ));
    }

    // Reference row: ground-truth continuations under the external scorer.
    let mut log2_sum = 0.0;
    let mut len_sum = 0usize;
    for item in &items[..cfg.eval.pelm_n.min(items.len())] {
        let mut cont = item.cont_words.clone();
        cont.truncate(cfg.eval.truncate_words);
        let (lp, len) = unitext::eval::ExternalScorer::score_log2(&scorer, &item.prompt_words, &cont);
        log2_sum += lp;
        len_sum += len;
    }
    let gt_pelm = 2f64.powf(-log2_sum / len_sum.max(1) as f64);
    println!("ground truth continuation PELM {gt_pelm:.2}");
    report.record(format!("pelm_ground_truth value={gt_pelm:.6}"));

    let body = report.render();
    write_file(&opts.out.join("metrics.txt"), &body)?;
    println!("metrics report hash {}", report.hash());
    write_run_record(
        &opts.out,
        cfg,
        "eval",
        &data.corpus_hash()?,
        &[("metrics_hash", report.hash())],
    )?;
    Ok(())
}

fn fmt_dir_seed(name: &str) -> u64 {
    name.bytes().fold(0u64, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64))
}

pub struct SampleOpts {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: Option<PathBuf>,
    pub prompt_modality: Modality,
    pub cont_modality: Modality,
    pub n: usize,
    pub temperature: Option<f64>,
    pub nucleus_p: Option<f64>,
}

pub fn sample_cmd(cfg: &RunConfig, opts: &SampleOpts) -> Result<()> {
    let data = DataDir::new(&opts.data);
    let (unit_model, text_model) = data.load_models()?;
    let vocab = build_vocab(&unit_model, &text_model);
    let builder = SeqBuilder::new(&unit_model, &text_model, &vocab);
    let lexicon = data.load_lexicon()?;
    let (mcfg, params) = load_checkpoint::<f32>(&opts.checkpoint)?;
    let eval_corpus = data.load_split("dev")?;
    let items = select_eval_set(&eval_corpus, opts.n, cfg.eval.min_words, cfg.eval.prompt_words)?;
    let mask = vocab.modality_mask(opts.cont_modality)?;
    let decoder = continuation_decoder(&builder, opts.cont_modality, &lexicon);
    let sp = SampleParams {
        temperature: opts.temperature.unwrap_or(cfg.eval.temperature),
        nucleus_p: opts.nucleus_p.unwrap_or(cfg.eval.nucleus_p),
        max_new: cfg.eval.max_new_tokens,
    };

    let mut lines = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let prompt = prompt_ids(&builder, item, opts.prompt_modality, opts.cont_modality)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xDECAF ^ i as u64);
        let sampled =
            unitext::sample::sample_continuation(&params, &mcfg, &prompt, Some(&mask), &sp, &mut rng)?;
        let rendered = match decoder(&sampled) {
            Ok(mut words) => {
                words.truncate(cfg.eval.truncate_words);
                words.join(" ")
            }
            Err(_) => format!(
                "<untranscribable> {}",
                sampled
                    .iter()
                    .map(|&t| vocab.display_string(t))
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
        };
        let line = format!(
            "{}\t{}\t->\t{}",
            item.utterance_id,
            item.prompt_words.join(" "),
            rendered
        );
        println!("{line}");
        lines.push(line);
    }
    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out)?;
        write_file(&out.join("samples.txt"), &(lines.join("\n") + "\n"))?;
        write_run_record(out, cfg, "sample", &data.corpus_hash()?, &[])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Sa,
    Ner,
}

pub struct FinetuneOpts {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub task: Task,
}

/// Fresh task sentences from the pre-training lexicon, split train/eval.
fn task_corpus(
    cfg: &RunConfig,
    lexicon: &Lexicon,
) -> Result<(Vec<AlignedUtterance>, Vec<AlignedUtterance>)> {
    let spec = unitext::corpus::SynthSpec {
        n_sentences: cfg.finetune.task_sentences,
        sentence_seed: cfg.seed.wrapping_add(5000),
        ..cfg.corpus.clone()
    };
    let corpus = synthesize_with_lexicon(&spec, lexicon)?;
    let eval_frac = cfg.finetune.eval_fraction;
    let (train_set, eval_set, _) =
        split_corpus(&corpus, (1.0 - eval_frac, eval_frac, 0.0), cfg.seed ^ 0xF1)?;
    Ok((train_set, eval_set))
}

pub fn finetune_cmd(cfg: &RunConfig, opts: &FinetuneOpts) -> Result<()> {
    std::fs::create_dir_all(&opts.out)?;
    let data = DataDir::new(&opts.data);
    let (unit_model, text_model) = data.load_models()?;
    let vocab = build_vocab(&unit_model, &text_model);
    let builder = SeqBuilder::new(&unit_model, &text_model, &vocab);
    let lexicon = data.load_lexicon()?;
    let (mcfg, params) = load_checkpoint::<f32>(&opts.checkpoint)?;
    if mcfg.vocab_size != vocab.size() {
        bail!("checkpoint vocabulary does not match the data directory");
    }
    let (task_train, task_eval) = task_corpus(cfg, &lexicon)?;

    let mut report = MetricReport::new();
    report
        .header("code_version", CODE_VERSION)
        .header("config_hash", sha256_hex(cfg.canonical_json().as_bytes()))
        .header("corpus_hash", data.corpus_hash()?)
        .header("task", if opts.task == Task::Sa { "sa" } else { "ner" });

    let modalities = [(Modality::Speech, "u"), (Modality::Text, "t")];
    match opts.task {
        Task::Sa => {
            let n_classes = cfg.finetune.n_classes;
            let train_task = build_sa_task(&lexicon, &task_train, n_classes);
            let eval_task = build_sa_task(&lexicon, &task_eval, n_classes);
            unitext::corpus::save_manifest_records(
                &opts.out.join("task.train.jsonl"),
                &sa_records(&train_task),
            )?;
            let eval_labels: Vec<usize> = eval_task.iter().map(|e| e.label).collect();
            let majority = majority_baseline(&eval_labels, n_classes);
            println!("majority baseline {majority:.3}");
            report.record(format!("majority value={majority:.6}"));

            println!("train\\eval        u        t");
            for (train_mod, tm) in modalities {
                let train_data: Vec<(Vec<u32>, usize)> = train_task
                    .iter()
                    .map(|ex| Ok((task_input_ids(&builder, &ex.utt, train_mod)?, ex.label)))
                    .collect::<Result<_>>()?;
                let fc = ClassifierCfg {
                    lr: cfg.finetune.sa_lr,
                    updates: cfg.finetune.sa_updates,
                    batch_size: cfg.finetune.sa_batch_size,
                    seed: cfg.seed ^ 0x5A ^ fmt_dir_seed(tm),
                    ..ClassifierCfg::default()
                };
                let tuned = finetune_classifier(&mcfg, params.clone(), &train_data, n_classes, &fc)?;
                if tuned.imbalance_warning {
                    eprintln!("warning: some class holds under 5% of the {tm} training data");
                }
                let mut row = format!("{tm:>10}");
                for (eval_mod, em) in modalities {
                    let eval_data: Vec<(Vec<u32>, usize)> = eval_task
                        .iter()
                        .map(|ex| Ok((task_input_ids(&builder, &ex.utt, eval_mod)?, ex.label)))
                        .collect::<Result<_>>()?;
                    let acc = eval_classifier(&tuned.params, &mcfg, &tuned.head, &eval_data)?;
                    row.push_str(&format!("  {acc:>7.3}"));
                    report.record(format!("sa train={tm} eval={em} accuracy={acc:.6}"));
                }
                println!("{row}");
            }
        }
        Task::Ner => {
            let train_task = build_ner_task(&lexicon, &task_train);
            let eval_task = build_ner_task(&lexicon, &task_eval);
            unitext::corpus::save_manifest_records(
                &opts.out.join("task.train.jsonl"),
                &ner_records(&train_task),
            )?;
            let refs: Vec<_> = eval_task.iter().map(reference_entities).collect();
            let allow = ner_output_mask(&vocab)?;
            println!("train\\eval        u        t");
            for (train_mod, tm) in modalities {
                let seqs: Vec<TrainSequence> = train_task
                    .iter()
                    .map(|ex| ner_train_sequence(&builder, ex, train_mod))
                    .collect::<Result<_, _>>()?;
                let tc = TrainConfig {
                    lr: cfg.finetune.ner_lr,
                    max_updates: cfg.finetune.ner_updates,
                    tokens_per_batch: cfg.finetune.ner_tokens_per_batch,
                    warmup_steps: 20,
                    seed: cfg.seed ^ 0x4E ^ fmt_dir_seed(tm),
                    ..cfg.train.clone()
                };
                let outcome = train(&mcfg, &tc, params.clone(), &StreamSet::single(seqs), |_| {})?;
                let mut row = format!("{tm:>10}");
                for (eval_mod, em) in modalities {
                    let hyps: Vec<Vec<(u8, String)>> = eval_task
                        .iter()
                        .map(|ex| {
                            let mut prefix = task_input_ids(&builder, &ex.utt, eval_mod)?;
                            prefix.push(Special::TextOpen.id());
                            let decoded = beam_decode(
                                &outcome.params,
                                &mcfg,
                                &prefix,
                                &allow,
                                Special::TextClose.id(),
                                cfg.finetune.beam,
                                mcfg.max_seq_len.saturating_sub(prefix.len()).min(96),
                            )?;
                            Ok(extract_entities(&decoded, &builder)?)
                        })
                        .collect::<Result<_>>()?;
                    let f1 = entity_f1(&hyps, &refs);
                    row.push_str(&format!("  {:>7.3}", f1.f1));
                    report.record(format!(
                        "ner train={tm} eval={em} f1={:.6} precision={:.6} recall={:.6}",
                        f1.f1, f1.precision, f1.recall
                    ));
                }
                println!("{row}");
            }
        }
    }

    write_file(&opts.out.join("transfer.txt"), &report.render())?;
    write_run_record(
        &opts.out,
        cfg,
        "finetune",
        &data.corpus_hash()?,
        &[("transfer_hash", report.hash())],
    )?;
    Ok(())
}

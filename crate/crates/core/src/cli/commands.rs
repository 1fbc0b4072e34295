use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use super::RunConfig;
use crate::baselines::{
    train_map, Bm25Params, EncoderEmbedder, KeywordRanker, KeywordScheme, MapParams, MapTrainConfig,
    VectorRanker,
};
use crate::encoder::{Checkpoint, Encoder, EncoderConfig, Side};
use crate::binio::ArtifactKind;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_sets, make_candidate_sets, results_table, EncoderRanker, EvalConfig, RandomRanker, Ranker,
};
use crate::retrieval::{build_index, encode_query, encoder_fingerprint, AnnConfig, ResponseIndex};
use crate::textpipe::synthetic::{Domain, SyntheticConfig, SyntheticCorpus};
use crate::textpipe::{build_vocab, filter_pair, normalize, read_jsonl, write_jsonl, DialoguePair, VocabConfig, Vocabulary};
use crate::training::{
    featurize_pairs, finetune, pretrain, FineTuneStrategy, FinetuneConfig, LogRecord, TrainingConfig, Validation,
};

pub(super) fn dispatch(cfg: &RunConfig, stdin: &mut (dyn BufRead + Send), stdout: &mut (dyn Write + Send)) -> Result<()> {
    match cfg.command() {
        "gen-synthetic" => gen_synthetic(cfg),
        "build-vocab" => cmd_build_vocab(cfg),
        "pretrain" => cmd_pretrain(cfg),
        "finetune" => cmd_finetune(cfg),
        "evaluate" => cmd_evaluate(cfg, stdout),
        "index" => cmd_index(cfg),
        "query" => cmd_query(cfg, stdin, stdout),
        "export-embeddings" => cmd_export(cfg),
        other => unreachable!("unregistered command {other}"),
    }
}

/// Artifacts without an embedded metadata slot get `<path>.config`.
fn write_sidecar(path: &Path, cfg: &RunConfig) -> Result<()> {
    let mut name = path.as_os_str().to_owned();
    name.push(".config");
    std::fs::write(name, format!("# rsel {}\n{}", cfg.command(), cfg.echo()))?;
    Ok(())
}

fn load_pairs(cfg: &RunConfig, key: &str) -> Result<Vec<DialoguePair>> {
    let pairs = read_jsonl(cfg.required_path(key))?;
    Ok(if cfg.bool("filter_pairs")? {
        pairs.into_iter().filter(filter_pair).collect()
    } else {
        pairs
    })
}

/// Loads vocabulary and checkpoint, rejecting a fingerprint mismatch.
fn load_model(cfg: &RunConfig) -> Result<(Vocabulary, Encoder<f32>, Checkpoint)> {
    let vocab = Vocabulary::load(cfg.required_path("vocab"))?;
    let ckpt = Checkpoint::load(cfg.required_path("checkpoint"), ArtifactKind::Encoder)?;
    let encoder = Encoder::from_checkpoint(&ckpt, &vocab)?;
    Ok((vocab, encoder, ckpt))
}

fn gen_synthetic(cfg: &RunConfig) -> Result<()> {
    let config = SyntheticConfig {
        n_topics: cfg.get("n_topics")?,
        pairs_per_topic: cfg.get("pairs_per_topic")?,
        vocab_size: cfg.get("vocab_size")?,
        seed: cfg.get("seed")?,
        facets: cfg.get("facets")?,
        domain: match cfg.raw("domain") {
            "target" => Domain::Target,
            _ => Domain::Source,
        },
        world_seed: cfg.get("world_seed")?,
        target_shift: cfg.get("target_shift")?,
    };
    if config.n_topics == 0 || config.pairs_per_topic == 0 || config.facets == 0 {
        return Err(Error::Config("n_topics, pairs_per_topic and facets must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&config.target_shift) {
        return Err(Error::Config("target_shift must lie in [0, 1]".into()));
    }
    let out = cfg.required_path("out");
    let pairs: Vec<DialoguePair> = SyntheticCorpus::new(config).map(|(p, _)| p).collect();
    write_jsonl(&out, &pairs)?;
    write_sidecar(&out, cfg)
}

fn cmd_build_vocab(cfg: &RunConfig) -> Result<()> {
    let config = VocabConfig {
        sample_size: cfg.get("sample_size")?,
        min_count: cfg.get("min_count")?,
        max_bigrams: cfg.get("max_bigrams")?,
        oov_buckets: cfg.get("oov_buckets")?,
        seed: cfg.get("seed")?,
    };
    if config.oov_buckets == 0 || config.sample_size == 0 {
        return Err(Error::Config("oov_buckets and sample_size must be >= 1".into()));
    }
    let pairs = load_pairs(cfg, "data")?;
    let vocab = build_vocab(pairs, &config)?;
    let out = cfg.required_path("out");
    vocab.save(&out)?;
    write_sidecar(&out, cfg)
}

fn encoder_config(cfg: &RunConfig) -> Result<EncoderConfig> {
    let config = EncoderConfig {
        embedding_dim: cfg.get("embedding_dim")?,
        hidden_layers: cfg.get("hidden_layers")?,
        hidden_width: cfg.get("hidden_width")?,
        output_dim: cfg.get("output_dim")?,
        attn_dim: cfg.get("attn_dim")?,
        max_positions: cfg.get("max_positions")?,
        activation: cfg.get("activation")?,
        use_self_attention: cfg.bool("use_self_attention")?,
        use_bigrams: cfg.bool("use_bigrams")?,
        shared_towers: cfg.bool("shared_towers")?,
    };
    config.validate()?;
    Ok(config)
}

fn training_config(cfg: &RunConfig) -> Result<TrainingConfig> {
    let config = TrainingConfig {
        batch_size: cfg.get("batch_size")?,
        lr0: cfg.get("lr0")?,
        decay_factor: cfg.get("decay_factor")?,
        decay_every: cfg.get("decay_every")?,
        decay_after: cfg.get("decay_after")?,
        smoothing_mass: cfg.get("smoothing_mass")?,
        scale_embedding_grads_by_batch: cfg.bool("scale_embedding_grads")?,
        max_steps: cfg.get("max_steps")?,
        eval_every: cfg.get("eval_every")?,
        seed: cfg.get("seed")?,
    };
    config.validate()?;
    Ok(config)
}

fn validation_config(cfg: &RunConfig) -> Result<EvalConfig> {
    let config = EvalConfig {
        n_candidates: cfg.get("valid_n")?,
        k: cfg.get("valid_k")?,
        ..Default::default()
    };
    config.validate()?;
    Ok(config)
}

fn open_log(cfg: &RunConfig) -> Result<Option<BufWriter<File>>> {
    cfg.path("log")
        .map(|p| Ok(BufWriter::new(File::create(p)?)))
        .transpose()
}

fn log_record(log: &mut Option<BufWriter<File>>, record: &LogRecord) -> Result<()> {
    if let Some(w) = log {
        writeln!(w, "{}", record.to_json())?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let enc_cfg = encoder_config(cfg)?;
    let train_cfg = training_config(cfg)?;
    let val_cfg = validation_config(cfg)?;
    let vocab = Vocabulary::load(cfg.required_path("vocab"))?;
    let train = featurize_pairs(&load_pairs(cfg, "train")?, &vocab, enc_cfg.max_positions);
    let sets = match cfg.path("valid") {
        Some(_) => Some(make_candidate_sets(&load_pairs(cfg, "valid")?, &val_cfg)?),
        None => None,
    };
    let validation = sets.as_ref().map(|sets| Validation {
        vocab: &vocab,
        sets,
        k: val_cfg.k,
    });
    let encoder = Encoder::new(enc_cfg, &vocab, train_cfg.seed)?;
    let out = cfg.required_path("out");
    let meta = cfg.echo();
    let mut log = open_log(cfg)?;
    let state = pretrain(encoder, &train, validation.as_ref(), &train_cfg, &mut |state, record| {
        log_record(&mut log, record)?;
        state.encoder.to_checkpoint(&meta).save(&out)
    })?;
    state.encoder.to_checkpoint(&meta).save(&out)
}

fn cmd_finetune(cfg: &RunConfig) -> Result<()> {
    let train_cfg = training_config(cfg)?;
    let val_cfg = validation_config(cfg)?;
    let ft = FinetuneConfig {
        strategy: cfg.get::<FineTuneStrategy>("strategy")?,
        source_share_percent: cfg.get("source_share")?,
        patience: cfg.get("patience")?,
        eval_every: cfg.get("eval_every")?,
        lr0: None,
    };
    ft.validate()?;
    if ft.strategy == FineTuneStrategy::Mixed && cfg.path("source").is_none() {
        return Err(Error::Config("--strategy mixed needs --source".into()));
    }
    let (vocab, encoder, base) = load_model(cfg)?;
    let max = encoder.config().max_positions;
    let target = featurize_pairs(&load_pairs(cfg, "train")?, &vocab, max);
    let source = match (ft.strategy, cfg.path("source")) {
        (FineTuneStrategy::Mixed, Some(_)) => Some(featurize_pairs(&load_pairs(cfg, "source")?, &vocab, max)),
        _ => None,
    };
    let sets = make_candidate_sets(&load_pairs(cfg, "valid")?, &val_cfg)?;
    let validation = Validation {
        vocab: &vocab,
        sets: &sets,
        k: val_cfg.k,
    };
    let meta = format!("{}base_checkpoint = {:016x}\n", cfg.echo(), base.fingerprint());
    let mut log = open_log(cfg)?;
    let outcome = finetune(
        encoder,
        &target,
        source.as_deref(),
        &validation,
        &train_cfg,
        &ft,
        &mut |_, record| log_record(&mut log, record),
    )?;
    outcome.best.to_checkpoint(&meta).save(cfg.required_path("out"))
}

/// Builds the ranker named by `ranker` and evaluates it. Borrowed model
/// state lives in the caller's frame.
fn cmd_evaluate(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let eval_cfg = EvalConfig {
        n_candidates: cfg.get("n_candidates")?,
        k: cfg.get("k")?,
        seed: cfg.get("seed")?,
        dedupe_inputs: cfg.bool("dedupe_inputs")?,
        dedupe_responses: cfg.bool("dedupe_responses")?,
    };
    eval_cfg.validate()?;
    let bm25 = Bm25Params {
        k1: cfg.get("bm25_k1")?,
        b: cfg.get("bm25_b")?,
    };
    bm25.validate()?;
    let global = cfg.bool("global_stats")?;
    let ranker_name = cfg.raw("ranker");
    let needs_model = matches!(ranker_name, "encoder" | "sim" | "map");
    if needs_model && (cfg.path("checkpoint").is_none() || cfg.path("vocab").is_none()) {
        return Err(Error::Config(format!("--ranker {ranker_name} needs --checkpoint and --vocab")));
    }
    if ranker_name == "map" && cfg.path("map_params").is_none() && cfg.path("map_train").is_none() {
        return Err(Error::Config("--ranker map needs --map-params or --map-train".into()));
    }
    let data_path = cfg.required_path("data");
    let dataset = match cfg.raw("dataset") {
        "" => data_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        name => name.to_string(),
    };
    let model = if needs_model { Some(load_model(cfg)?) } else { None };
    let pairs = load_pairs(cfg, "data")?;
    let sets = make_candidate_sets(&pairs, &eval_cfg)?;

    let embedder = model.as_ref().map(|(vocab, encoder, _)| EncoderEmbedder { encoder, vocab });
    let mut ranker: Box<dyn Ranker + '_> = match ranker_name {
        "random" => Box::new(RandomRanker::new(eval_cfg.seed)),
        "tfidf" => Box::new(KeywordRanker::new(KeywordScheme::TfIdf, global)?),
        "bm25" => Box::new(KeywordRanker::new(KeywordScheme::Bm25(bm25), global)?),
        "encoder" => {
            let (vocab, encoder, _) = model.as_ref().expect("model loaded");
            Box::new(EncoderRanker::new(encoder, vocab))
        }
        "sim" => Box::new(VectorRanker::sim(embedder.as_ref().expect("model loaded"))),
        "map" => {
            let embedder = embedder.as_ref().expect("model loaded");
            let params = match cfg.path("map_params") {
                Some(p) => MapParams::load(p)?,
                None => {
                    let train = load_pairs(cfg, "map_train")?;
                    let vectors = train
                        .iter()
                        .map(|p| {
                            use crate::baselines::Embedder;
                            Ok((embedder.embed(&p.input, Side::Input)?, embedder.embed(&p.response, Side::Response)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let params = train_map(
                        &vectors,
                        &MapTrainConfig {
                            seed: eval_cfg.seed,
                            ..Default::default()
                        },
                    )?;
                    if let Some(out) = cfg.path("map_out") {
                        params.to_checkpoint(&cfg.echo()).save(out)?;
                    }
                    params
                }
            };
            Box::new(VectorRanker::map(embedder, params))
        }
        other => unreachable!("unregistered ranker {other}"),
    };

    let mut result = evaluate_sets(ranker.as_mut(), &sets, &eval_cfg, &dataset)?;
    if let Some(path) = cfg.path("scores") {
        let mut out = String::from("query\tposition\tcandidate\tscore\n");
        for (qi, q) in sets.queries.iter().enumerate() {
            let scores = ranker.score(&q.input, &q.candidates)?;
            for (pos, (c, s)) in q.candidates.iter().zip(scores).enumerate() {
                let _ = writeln!(out, "{qi}\t{pos}\t{c}\t{s:?}");
            }
        }
        std::fs::write(path, out)?;
    }
    if !cfg.bool("per_query_ranks")? {
        result = result.without_ranks();
    }
    if let Some(path) = cfg.path("table") {
        std::fs::write(&path, results_table(std::slice::from_ref(&result)))?;
        write_sidecar(&path, cfg)?;
    }
    let mut report = serde_json::to_value(&result)?;
    report["config"] = cfg.echo_json();
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match cfg.path("report") {
        Some(path) => std::fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Distinct responses in first-occurrence order, compared after
/// normalization.
fn distinct_responses(pairs: &[DialoguePair]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(normalize(&p.response).join()))
        .map(|p| p.response.clone())
        .collect()
}

fn cmd_index(cfg: &RunConfig) -> Result<()> {
    let ann = AnnConfig {
        max_neighbors: cfg.get("max_neighbors")?,
        ef_construction: cfg.get("ef_construction")?,
        seed: cfg.get("seed")?,
    };
    if ann.max_neighbors < 2 || ann.ef_construction < 1 {
        return Err(Error::Config("ANN needs max_neighbors >= 2 and ef_construction >= 1".into()));
    }
    let (vocab, encoder, _) = load_model(cfg)?;
    let responses = distinct_responses(&read_jsonl(cfg.required_path("data"))?);
    let index = build_index(&responses, &encoder, &vocab, cfg.bool("ann")?, ann)?;
    let out = cfg.required_path("out");
    index.save(&out)?;
    write_sidecar(&out, cfg)
}

fn cmd_query(cfg: &RunConfig, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    let k: usize = cfg.get("k")?;
    let ef: usize = cfg.get("ef_search")?;
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let threshold = match cfg.raw("threshold") {
        "" => None,
        t => Some(
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("threshold must be a number, got {t:?}")))?,
        ),
    };
    let (vocab, encoder, _) = load_model(cfg)?;
    let index = ResponseIndex::load(cfg.required_path("index"))?;
    let expected = encoder_fingerprint(&encoder);
    if index.checkpoint_fingerprint() != expected {
        return Err(Error::FingerprintMismatch {
            expected,
            found: index.checkpoint_fingerprint(),
        });
    }
    if ef > 0 && ef < k {
        return Err(Error::Config(format!("ef_search must be 0 or >= k={k}")));
    }
    let k = k.min(index.len());
    let mut line = String::new();
    loop {
        line.clear();
        if stdin.read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let q = encode_query(&encoder, &vocab, text)?;
        let mut result = if ef > 0 && index.has_ann() {
            index.search_ann(&q, k, ef)?
        } else {
            index.search_exact(&q, k)?
        };
        if let Some(t) = threshold {
            result = index.threshold(&result, t)?;
        }
        for (rank, &(id, cos)) in result.hits.iter().enumerate() {
            writeln!(stdout, "{}\t{:.4}\t{}", rank + 1, cos * index.scale(), index.payload(id))?;
        }
        writeln!(stdout)?;
        stdout.flush()?;
    }
    Ok(())
}

fn cmd_export(cfg: &RunConfig) -> Result<()> {
    let side = match cfg.raw("side") {
        "response" => Side::Response,
        _ => Side::Input,
    };
    let (vocab, encoder, _) = load_model(cfg)?;
    let pairs = read_jsonl(cfg.required_path("data"))?;
    let out = cfg.required_path("out");
    let mut w = BufWriter::new(File::create(&out)?);
    let max = encoder.config().max_positions;
    for (id, p) in pairs.iter().enumerate() {
        let text = match side {
            Side::Input => &p.input,
            Side::Response => &p.response,
        };
        let v = encoder.encode(&vocab.featurize_text(text, max), side)?;
        let clean: String = text
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        write!(w, "{id}\t{clean}")?;
        for x in v {
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    drop(w);
    write_sidecar(&out, cfg)
}

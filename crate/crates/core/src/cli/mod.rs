//! Command-line surface: argument parsing, flat `key = value` configuration
//! and the subcommands that tie the pipeline together.
//!
//! Every key has a default; a config file (`--config`) overrides defaults
//! and `--key value` flags override the file. Keys are spelled with
//! underscores in files and with dashes on the command line. The effective
//! configuration, minus file paths and thread counts, is echoed into every
//! artifact a command writes.

mod commands;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgMatches, Command};

use crate::error::{Error, Result};

/// Value type of a configuration key, checked before any work starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Str,
    /// Output file path.
    Out,
    /// Input file path; must exist when set.
    In,
    Int,
    Float,
    Bool,
    Choice(&'static [&'static str]),
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub required: bool,
    pub help: &'static str,
}

impl Key {
    const fn new(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> Self {
        Self {
            name,
            kind,
            default,
            required: false,
            help,
        }
    }

    const fn input(name: &'static str, help: &'static str) -> Self {
        Self::new(name, Kind::In, "", help)
    }

    const fn output(name: &'static str, help: &'static str) -> Self {
        Self::new(name, Kind::Out, "", help)
    }

    const fn required(mut self) -> Self {
        self.required = true;
        self
    }

    fn flag(&self) -> String {
        self.name.replace('_', "-")
    }

    /// Paths and thread counts do not change results, so they stay out of
    /// the echoed configuration.
    fn echoed(&self) -> bool {
        !matches!(self.kind, Kind::In | Kind::Out) && self.name != "threads"
    }
}

const RANKERS: &[&str] = &["random", "tfidf", "bm25", "encoder", "sim", "map"];

const COMMON: &[Key] = &[
    Key::new("threads", Kind::Int, "0", "worker threads; 0 uses RSEL_THREADS or all cores"),
];

const DATA: &[Key] = &[Key::new(
    "filter_pairs",
    Kind::Bool,
    "true",
    "drop pairs outside the 8..=128 token window",
)];

const ENCODER: &[Key] = &[
    Key::new("embedding_dim", Kind::Int, "320", "n-gram embedding width d"),
    Key::new("hidden_layers", Kind::Int, "3", "tower hidden layers H"),
    Key::new("hidden_width", Kind::Int, "1024", "tower hidden width h"),
    Key::new("output_dim", Kind::Int, "512", "encoding width l"),
    Key::new("attn_dim", Kind::Int, "64", "self-attention key width"),
    Key::new("max_positions", Kind::Int, "128", "tokens kept per text"),
    Key::new("activation", Kind::Choice(&["swish", "tanh"]), "swish", "tower activation"),
    Key::new("use_self_attention", Kind::Bool, "true", "self-attention over n-gram embeddings"),
    Key::new("use_bigrams", Kind::Bool, "true", "bigram features"),
    Key::new("shared_towers", Kind::Bool, "false", "one tower for inputs and responses"),
];

const SCHEDULE: &[Key] = &[
    Key::new("batch_size", Kind::Int, "500", "pairs per batch K"),
    Key::new("lr0", Kind::Float, "0.03", "initial learning rate"),
    Key::new("decay_factor", Kind::Float, "0.3", "learning-rate decay factor"),
    Key::new("decay_every", Kind::Int, "1000000", "steps between decays"),
    Key::new("decay_after", Kind::Int, "2500000", "first decayed step"),
    Key::new("smoothing_mass", Kind::Float, "0.8", "target mass on the true response"),
    Key::new(
        "scale_embedding_grads",
        Kind::Bool,
        "true",
        "multiply embedding gradients by K",
    ),
    Key::new("seed", Kind::Int, "0", "initialization and shuffling seed"),
];

const VALIDATION: &[Key] = &[
    Key::new("valid_n", Kind::Int, "100", "candidates per validation query"),
    Key::new("valid_k", Kind::Int, "1", "validation recall cutoff"),
];

const MODEL: &[Key] = &[
    Key::input("checkpoint", "encoder checkpoint").required(),
    Key::input("vocab", "vocabulary TSV").required(),
];

pub(crate) struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: Vec<Key>,
}

fn keys(groups: &[&[Key]]) -> Vec<Key> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

pub(crate) fn command_specs() -> Vec<CommandSpec> {
    vec![
        CommandSpec {
            name: "gen-synthetic",
            about: "Write a synthetic dialogue corpus as JSONL",
            keys: keys(&[
                COMMON,
                &[
                    Key::output("out", "output JSONL").required(),
                    Key::new("n_topics", Kind::Int, "100", "latent topics"),
                    Key::new("pairs_per_topic", Kind::Int, "500", "pairs sampled per topic"),
                    Key::new("vocab_size", Kind::Int, "4000", "source word types"),
                    Key::new("facets", Kind::Int, "12", "facets per topic; 1 makes topics pure"),
                    Key::new("domain", Kind::Choice(&["source", "target"]), "source", "domain to sample"),
                    Key::new("world_seed", Kind::Int, "0", "seed fixing topics and word forms"),
                    Key::new("target_shift", Kind::Float, "0.5", "share of keywords replaced in the target domain"),
                    Key::new("seed", Kind::Int, "0", "pair sampling seed"),
                ],
            ]),
        },
        CommandSpec {
            name: "build-vocab",
            about: "Count n-grams over a JSONL corpus and write a vocabulary TSV",
            keys: keys(&[
                COMMON,
                DATA,
                &[
                    Key::input("data", "training JSONL").required(),
                    Key::output("out", "output vocabulary TSV").required(),
                    Key::new("sample_size", Kind::Int, "1000000", "pairs sampled for counting"),
                    Key::new("min_count", Kind::Int, "10", "minimum unigram count"),
                    Key::new("max_bigrams", Kind::Int, "200000", "bigram table cap"),
                    Key::new("oov_buckets", Kind::Int, "50000", "OOV hash buckets per table"),
                    Key::new("seed", Kind::Int, "0", "sampling seed"),
                ],
            ]),
        },
        CommandSpec {
            name: "pretrain",
            about: "Train an encoder from scratch on a source corpus",
            keys: keys(&[
                COMMON,
                DATA,
                &[
                    Key::input("train", "training JSONL").required(),
                    Key::input("vocab", "vocabulary TSV").required(),
                    Key::input("valid", "validation JSONL"),
                    Key::output("out", "output checkpoint").required(),
                    Key::output("log", "JSONL training log"),
                    Key::new("max_steps", Kind::Int, "3000000", "training steps"),
                    Key::new("eval_every", Kind::Int, "10000", "steps between validations and checkpoints"),
                ],
                ENCODER,
                SCHEDULE,
                VALIDATION,
            ]),
        },
        CommandSpec {
            name: "finetune",
            about: "Adapt a pretrained encoder to a target corpus with early stopping",
            keys: keys(&[
                COMMON,
                DATA,
                MODEL,
                &[
                    Key::input("train", "target training JSONL").required(),
                    Key::input("valid", "target validation JSONL").required(),
                    Key::input("source", "source JSONL for mixed batches"),
                    Key::output("out", "output checkpoint (best validation recall)").required(),
                    Key::output("log", "JSONL training log"),
                    Key::new("strategy", Kind::Choice(&["direct", "mixed"]), "mixed", "fine-tuning strategy"),
                    Key::new("source_share", Kind::Int, "75", "percent of each mixed batch from the source"),
                    Key::new("patience", Kind::Int, "5", "validations without improvement before stopping"),
                    Key::new("max_steps", Kind::Int, "100000", "step limit"),
                    Key::new("eval_every", Kind::Int, "200", "steps between validations"),
                ],
                SCHEDULE,
                VALIDATION,
            ]),
        },
        CommandSpec {
            name: "evaluate",
            about: "Score a ranker with R_N@k on a test JSONL",
            keys: keys(&[
                COMMON,
                DATA,
                &[
                    Key::input("data", "test JSONL").required(),
                    Key::new("ranker", Kind::Choice(RANKERS), "bm25", "ranker to evaluate"),
                    Key::input("checkpoint", "encoder checkpoint (encoder, sim, map)"),
                    Key::input("vocab", "vocabulary TSV (encoder, sim, map)"),
                    Key::input("map_params", "trained MAP parameters"),
                    Key::input("map_train", "JSONL to train MAP on when no parameters are given"),
                    Key::output("map_out", "where to save trained MAP parameters"),
                    Key::new("n_candidates", Kind::Int, "100", "candidates per query N"),
                    Key::new("k", Kind::Int, "1", "recall cutoff"),
                    Key::new("seed", Kind::Int, "0", "distractor sampling seed"),
                    Key::new("dedupe_inputs", Kind::Bool, "false", "drop repeated inputs"),
                    Key::new("dedupe_responses", Kind::Bool, "false", "drop repeated responses"),
                    Key::new("global_stats", Kind::Bool, "false", "keyword statistics over the whole pool"),
                    Key::new("bm25_k1", Kind::Float, "1.2", "BM25 k1"),
                    Key::new("bm25_b", Kind::Float, "0.75", "BM25 b"),
                    Key::new("dataset", Kind::Str, "", "dataset name in the report; defaults to the file stem"),
                    Key::new("per_query_ranks", Kind::Bool, "false", "include per-query ranks in the report"),
                    Key::output("report", "JSON report; stdout when unset"),
                    Key::output("table", "CSV results table"),
                    Key::output("scores", "TSV of every candidate score"),
                ],
            ]),
        },
        CommandSpec {
            name: "index",
            about: "Encode the distinct responses of a JSONL corpus into a search index",
            keys: keys(&[
                COMMON,
                MODEL,
                &[
                    Key::input("data", "JSONL whose responses are indexed").required(),
                    Key::output("out", "output index").required(),
                    Key::new("ann", Kind::Bool, "true", "build the approximate search graph"),
                    Key::new("max_neighbors", Kind::Int, "16", "graph out-degree M"),
                    Key::new("ef_construction", Kind::Int, "200", "build beam width"),
                    Key::new("seed", Kind::Int, "0", "level sampling seed"),
                ],
            ]),
        },
        CommandSpec {
            name: "query",
            about: "Answer inputs read line by line from stdin with top-k responses",
            keys: keys(&[
                COMMON,
                MODEL,
                &[
                    Key::input("index", "response index").required(),
                    Key::new("k", Kind::Int, "5", "responses per input"),
                    Key::new("ef_search", Kind::Int, "0", "search beam width; 0 scans exactly"),
                    Key::new("threshold", Kind::Str, "", "minimum score C*cos; unset keeps all"),
                ],
            ]),
        },
        CommandSpec {
            name: "export-embeddings",
            about: "Write encodings of one side of a corpus as TSV (id, text, values)",
            keys: keys(&[
                COMMON,
                MODEL,
                &[
                    Key::input("data", "JSONL corpus").required(),
                    Key::output("out", "output TSV").required(),
                    Key::new("side", Kind::Choice(&["input", "response"]), "input", "which texts to encode"),
                ],
            ]),
        },
    ]
}

/// Effective configuration of one command run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    command: &'static str,
    keys: Vec<Key>,
    values: BTreeMap<&'static str, String>,
}

/// Parses flat `key = value` text; `#` starts a comment line.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Layers defaults, `file` entries and `flags`, then validates types,
    /// choices, required keys and input paths.
    pub fn resolve(
        spec_keys: &[Key],
        command: &'static str,
        file: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut values: BTreeMap<&'static str, String> =
            spec_keys.iter().map(|k| (k.name, k.default.to_string())).collect();
        for (k, v) in file.iter().chain(flags) {
            let key = spec_keys
                .iter()
                .find(|s| s.name == k)
                .ok_or_else(|| Error::Config(format!("unknown key {k} for {command}")))?;
            values.insert(key.name, v.clone());
        }
        let cfg = Self {
            command,
            keys: spec_keys.to_vec(),
            values,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        for key in &self.keys {
            let v = self.raw(key.name);
            if v.is_empty() {
                if key.required {
                    return Err(Error::Config(format!("--{} is required", key.flag())));
                }
                continue;
            }
            let bad = |what: &str| Error::Config(format!("--{}: expected {what}, got {v:?}", key.flag()));
            match key.kind {
                Kind::Str | Kind::Out => {}
                Kind::In => {
                    if !Path::new(v).is_file() {
                        return Err(Error::Config(format!("--{}: no such file {v}", key.flag())));
                    }
                }
                Kind::Int => {
                    v.parse::<u64>().map_err(|_| bad("a non-negative integer"))?;
                }
                Kind::Float => {
                    if !v.parse::<f64>().map_err(|_| bad("a number"))?.is_finite() {
                        return Err(bad("a finite number"));
                    }
                }
                Kind::Bool => {
                    parse_bool(v).ok_or_else(|| bad("true or false"))?;
                }
                Kind::Choice(options) => {
                    if !options.contains(&v) {
                        return Err(bad(&format!("one of {}", options.join(", "))));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} is not registered for {}", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::Config(format!("bad value for {key}: {:?}", self.raw(key))))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        parse_bool(self.raw(key)).ok_or_else(|| Error::Config(format!("bad value for {key}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Path of a key marked required; resolution already checked presence.
    pub fn required_path(&self, key: &str) -> PathBuf {
        self.path(key)
            .unwrap_or_else(|| panic!("required key {key} is empty"))
    }

    /// Non-path keys as `key = value` lines, in registry order.
    pub fn echo(&self) -> String {
        self.keys
            .iter()
            .filter(|k| k.echoed())
            .map(|k| format!("{} = {}\n", k.name, self.raw(k.name)))
            .collect()
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.keys
                .iter()
                .filter(|k| k.echoed())
                .map(|k| (k.name.to_string(), self.raw(k.name).into()))
                .collect(),
        )
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn placeholder(kind: Kind) -> &'static str {
    match kind {
        Kind::Str => "TEXT",
        Kind::In | Kind::Out => "PATH",
        Kind::Int => "INT",
        Kind::Float => "FLOAT",
        Kind::Bool => "BOOL",
        Kind::Choice(_) => "CHOICE",
    }
}

pub(crate) fn clap_command() -> Command {
    let mut app = Command::new("rsel")
        .about("Dual-encoder response selection toolkit")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in command_specs() {
        let mut sub = Command::new(spec.name).about(spec.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("flat key = value config file; flags take precedence"),
        );
        for key in &spec.keys {
            let mut help = key.help.to_string();
            if let Kind::Choice(options) = key.kind {
                help.push_str(&format!(" ({})", options.join("|")));
            }
            if key.required {
                help.push_str(" [required]");
            } else if !key.default.is_empty() {
                help.push_str(&format!(" [default: {}]", key.default));
            }
            sub = sub.arg(
                Arg::new(key.name)
                    .long(key.flag())
                    .value_name(placeholder(key.kind))
                    .help(help),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

fn resolve_matches(name: &str, m: &ArgMatches) -> Result<RunConfig> {
    let spec = command_specs()
        .into_iter()
        .find(|s| s.name == name)
        .expect("subcommand is registered");
    let file = match m.get_one::<String>("config") {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {p}: {e}")))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    let flags: Vec<(String, String)> = spec
        .keys
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(&spec.keys, spec.name, &file, &flags)
}

fn thread_count(cfg: &RunConfig) -> Result<usize> {
    let n: usize = cfg.get("threads")?;
    if n > 0 {
        return Ok(n);
    }
    match std::env::var("RSEL_THREADS") {
        Ok(v) if !v.is_empty() => v
            .parse()
            .map_err(|_| Error::Config(format!("RSEL_THREADS must be an integer, got {v:?}"))),
        _ => Ok(0),
    }
}

/// Exit code for an error: 1 for validation problems, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        1
    } else {
        2
    }
}

/// Runs one command line with the given standard streams; returns the exit
/// code.
pub fn run_with_io<I, S>(
    args: I,
    stdin: &mut (dyn BufRead + Send),
    stdout: &mut (dyn Write + Send),
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = match clap_command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return 1;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let result = resolve_matches(name, sub).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count(&cfg)?)
            .build()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
        pool.install(|| commands::dispatch(&cfg, stdin, stdout))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point for the binary.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let mut stdin = std::io::BufReader::new(std::io::stdin());
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    run_with_io(args, &mut stdin, &mut stdout, &mut stderr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str) -> CommandSpec {
        command_specs().into_iter().find(|s| s.name == name).unwrap()
    }

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let s = spec("gen-synthetic");
        let file = pairs(&[("out", "a.jsonl"), ("seed", "3"), ("facets", "4")]);
        let flags = pairs(&[("seed", "9")]);
        let cfg = RunConfig::resolve(&s.keys, s.name, &file, &flags).unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 9);
        assert_eq!(cfg.get::<usize>("facets").unwrap(), 4);
        assert_eq!(cfg.get::<usize>("n_topics").unwrap(), 100);
    }

    #[test]
    fn rejects_unknown_and_malformed_values() {
        let s = spec("gen-synthetic");
        let out = pairs(&[("out", "x")]);
        let unknown = RunConfig::resolve(&s.keys, s.name, &pairs(&[("colour", "red")]), &out);
        assert!(matches!(unknown, Err(Error::Config(m)) if m.contains("unknown key colour")));
        assert!(RunConfig::resolve(&s.keys, s.name, &out, &pairs(&[("seed", "-1")])).is_err());
        assert!(RunConfig::resolve(&s.keys, s.name, &out, &pairs(&[("domain", "moon")])).is_err());
        assert!(RunConfig::resolve(&s.keys, s.name, &[], &[]).is_err());
    }

    #[test]
    fn missing_input_file_is_a_config_error() {
        let s = spec("build-vocab");
        let flags = pairs(&[("data", "/nonexistent/x.jsonl"), ("out", "v.tsv")]);
        let err = RunConfig::resolve(&s.keys, s.name, &[], &flags).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn config_text_parsing() {
        let parsed = parse_config_text("# c\n\nbatch-size = 8\n lr0=0.1 \n").unwrap();
        assert_eq!(parsed, pairs(&[("batch_size", "8"), ("lr0", "0.1")]));
        assert!(parse_config_text("novalue").is_err());
    }

    #[test]
    fn echo_skips_paths_and_threads() {
        let s = spec("gen-synthetic");
        let cfg = RunConfig::resolve(&s.keys, s.name, &[], &pairs(&[("out", "o"), ("threads", "2")])).unwrap();
        let echo = cfg.echo();
        assert!(echo.contains("seed = 0\n"));
        assert!(!echo.contains("out"));
        assert!(!echo.contains("threads"));
    }

    #[test]
    fn every_command_has_unique_keys() {
        for s in command_specs() {
            let mut names: Vec<&str> = s.keys.iter().map(|k| k.name).collect();
            names.sort_unstable();
            let n = names.len();
            names.dedup();
            assert_eq!(names.len(), n, "duplicate key in {}", s.name);
        }
        clap_command().debug_assert();
    }
}

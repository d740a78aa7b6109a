//! Config-driven stages that read and write the files under an output
//! directory, plus the run manifest and the distance/topic report.
//!
//! # Config format
//!
//! One `key = value` per line, `#` comments. Relative paths resolve against
//! the config file's directory. Unknown keys are rejected.
//!
//! ```text
//! version = 1
//! corpus = listings.jsonl
//! gazetteer = gazetteer.txt
//! boundary.zillow = zillow.geojson
//! lda_k = 7
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::claims::{label_corpus_string, labels_to_csv, read_labels_csv, ClaimLabel, Method};
use crate::corpus::{self, CleanConfig, CleanListing, Cleaner, InputFormat};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, render_table, GoldSet};
use crate::gazetteer::{normalize_label, Gazetteer, NormalizationTable};
use crate::geo::{self, BoundarySet, DistanceMode, DistanceRecord};
use crate::llm::{Annotator, HttpChatClient, LlmConfig, PromptTemplate, ResponseCache};
use crate::regression::{build_design, fit_design, DesignOptions};
use crate::topics::{self, fit_lda, preprocess, LdaParams, Preprocessor, ThetaTable};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CONFIG_VERSION: &str = "1";
pub const MANIFEST: &str = "manifest.json";

pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const DUPLICATES: &str = "duplicates.jsonl";
    pub const INGEST_ERRORS: &str = "ingest_errors.csv";
    pub const LABELS_STRING: &str = "labels_string.csv";
    pub const LABELS_LLM: &str = "labels_llm.csv";
    pub const LLM_FAILURES: &str = "llm_failures.csv";
    pub const LLM_REQUESTS: &str = "llm_requests.jsonl";
    pub const EVAL_TABLE: &str = "eval_table.txt";
    pub const DISTANCES: &str = "distances.csv";
    pub const CENTERS: &str = "centers.geojson";
    pub const MODEL: &str = "model.txt";
    pub const THETA: &str = "theta.csv";
    pub const TOPIC_WORDS: &str = "topic_words.csv";
    pub const COHERENCE: &str = "coherence.csv";
    pub const LDA_TRACE: &str = "lda_trace.csv";
    pub const REGRESSION_CSV: &str = "regression.csv";
    pub const REGRESSION_TXT: &str = "regression.txt";
    pub const DECILES: &str = "decile_shares.csv";
    pub const PAIRS: &str = "distance_topic_pairs.csv";
    pub const OVERLAY: &str = "neighborhoods.geojson";
    pub const REPORT: &str = "report.txt";
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySource {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub config_hash: String,
    pub base_dir: PathBuf,
    pub corpus: PathBuf,
    pub corpus_format: InputFormat,
    /// `None` means the shipped file.
    pub cleaning: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub normalization: Option<PathBuf>,
    pub boundaries: Vec<BoundarySource>,
    pub boundary_name_property: String,
    pub stopwords: Vec<PathBuf>,
    pub lemmas: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
    pub out: PathBuf,
    pub lda: LdaParams,
    pub top_words: usize,
    pub coherence_top_n: usize,
    pub distance_mode: DistanceMode,
    pub peripheral_fraction: f64,
    pub min_posts: usize,
    /// Which labels feed the geo, regression and report stages.
    pub claims_source: Method,
    pub rent_per_thousand: bool,
    pub llm: LlmConfig,
}

const KEYS: &[&str] = &[
    "version",
    "corpus",
    "corpus_format",
    "cleaning",
    "gazetteer",
    "normalization",
    "boundary_name_property",
    "stopwords",
    "lemmas",
    "gold",
    "cache",
    "prompt",
    "out",
    "lda_k",
    "lda_alpha",
    "lda_eta",
    "lda_iterations",
    "lda_seed",
    "top_words",
    "coherence_top_n",
    "distance_mode",
    "peripheral_fraction",
    "min_posts",
    "claims_source",
    "rent_per_thousand",
    "llm_model",
    "llm_temperature",
    "llm_max_rpm",
    "llm_fanout",
    "llm_offline",
    "llm_base_url",
    "llm_timeout_secs",
];

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| cfg_err(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        let mut boundaries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(name) = key.strip_prefix("boundary.") {
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(cfg_err(format!("line {}: bad boundary set name {name:?}", i + 1)));
                }
                if boundaries.iter().any(|b: &BoundarySource| b.name == name) {
                    return Err(cfg_err(format!("boundary set {name:?} given twice")));
                }
                boundaries.push(BoundarySource {
                    name: name.to_string(),
                    path: base_dir.join(value),
                });
                continue;
            }
            if !KEYS.contains(&key) {
                return Err(cfg_err(format!("line {}: unknown key {key:?}", i + 1)));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(cfg_err(format!("key {key:?} given twice")));
            }
        }

        match values.get("version").map(String::as_str) {
            Some(CONFIG_VERSION) => {}
            Some(v) => return Err(cfg_err(format!("unsupported config version {v:?}"))),
            None => return Err(cfg_err("missing `version` key")),
        }
        let path = |key: &str| values.get(key).map(|v| base_dir.join(v));
        let get = |key: &str| values.get(key).map(String::as_str);
        let number = |key: &str, default: &str| -> Result<String> { Ok(get(key).unwrap_or(default).to_string()) };

        let corpus = path("corpus").ok_or_else(|| cfg_err("missing `corpus` key"))?;
        let corpus_format = match get("corpus_format") {
            None | Some("auto") => InputFormat::from_path(&corpus),
            Some("jsonl") => InputFormat::JsonLines,
            Some("csv") => InputFormat::Csv,
            Some(other) => {
                return Err(cfg_err(format!(
                    "corpus_format: expected auto, jsonl or csv, got {other:?}"
                )))
            }
        };
        let defaults = LlmConfig::default();
        let lda_defaults = LdaParams::default();
        let lda = LdaParams {
            k: parse_value("lda_k", &number("lda_k", &lda_defaults.k.to_string())?)?,
            alpha: parse_value("lda_alpha", &number("lda_alpha", &lda_defaults.alpha.to_string())?)?,
            eta: parse_value("lda_eta", &number("lda_eta", &lda_defaults.eta.to_string())?)?,
            iterations: parse_value(
                "lda_iterations",
                &number("lda_iterations", &lda_defaults.iterations.to_string())?,
            )?,
            seed: parse_value("lda_seed", &number("lda_seed", &lda_defaults.seed.to_string())?)?,
        };
        let llm = LlmConfig {
            model: get("llm_model").map(str::to_string).unwrap_or(defaults.model),
            temperature: parse_value(
                "llm_temperature",
                &number("llm_temperature", &defaults.temperature.to_string())?,
            )?,
            max_rpm: parse_value("llm_max_rpm", &number("llm_max_rpm", &defaults.max_rpm.to_string())?)?,
            fanout: parse_value("llm_fanout", &number("llm_fanout", &defaults.fanout.to_string())?)?,
            offline: parse_value("llm_offline", &number("llm_offline", &defaults.offline.to_string())?)?,
            base_url: get("llm_base_url").map(str::to_string).unwrap_or(defaults.base_url),
            timeout: Duration::from_secs(parse_value(
                "llm_timeout_secs",
                &number("llm_timeout_secs", &defaults.timeout.as_secs().to_string())?,
            )?),
            backoff: defaults.backoff,
        };
        let claims_source = match get("claims_source").unwrap_or("llm") {
            "llm" => Method::Llm,
            "string" | "string-match" => Method::StringMatch,
            other => return Err(cfg_err(format!("claims_source: expected llm or string, got {other:?}"))),
        };

        let cfg = PipelineConfig {
            config_hash: hex::encode(Sha256::digest(text.as_bytes())),
            base_dir: base_dir.to_path_buf(),
            corpus,
            corpus_format,
            cleaning: path("cleaning"),
            gazetteer: path("gazetteer"),
            normalization: path("normalization"),
            boundaries,
            boundary_name_property: get("boundary_name_property").unwrap_or("name").to_string(),
            stopwords: get("stopwords")
                .map(|v| v.split(',').map(|p| base_dir.join(p.trim())).collect())
                .unwrap_or_default(),
            lemmas: path("lemmas"),
            gold: path("gold"),
            cache: path("cache"),
            prompt: path("prompt"),
            out: path("out").unwrap_or_else(|| base_dir.join("out")),
            lda,
            top_words: parse_value("top_words", &number("top_words", "16")?)?,
            coherence_top_n: parse_value("coherence_top_n", &number("coherence_top_n", "10")?)?,
            distance_mode: get("distance_mode").unwrap_or("great-circle").parse()?,
            peripheral_fraction: parse_value("peripheral_fraction", &number("peripheral_fraction", "0.2")?)?,
            min_posts: parse_value("min_posts", &number("min_posts", "5")?)?,
            claims_source,
            rent_per_thousand: parse_value("rent_per_thousand", &number("rent_per_thousand", "false")?)?,
            llm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.peripheral_fraction > 0.0 && self.peripheral_fraction < 1.0) {
            return Err(cfg_err("peripheral_fraction must lie strictly between 0 and 1"));
        }
        let inputs = [
            Some(&self.corpus),
            self.cleaning.as_ref(),
            self.gazetteer.as_ref(),
            self.normalization.as_ref(),
        ]
        .into_iter()
        .chain([self.lemmas.as_ref(), self.gold.as_ref(), self.prompt.as_ref()])
        .flatten()
        .chain(self.stopwords.iter())
        .chain(self.boundaries.iter().map(|b| &b.path));
        for p in inputs {
            if !p.exists() {
                return Err(cfg_err(format!("{} does not exist", p.display())));
            }
        }
        if self.normalization.is_some() && self.gazetteer.is_none() {
            return Err(cfg_err("a custom normalization table needs a custom gazetteer"));
        }
        Ok(())
    }
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub rows: BTreeMap<String, usize>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

/// What a stage read, wrote and counted.
#[derive(Debug, Default)]
pub struct StageOutput {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub rows: BTreeMap<String, usize>,
    /// Human-readable summary for standard output.
    pub summary: String,
}

impl StageOutput {
    fn row(&mut self, key: &str, n: usize) {
        self.rows.insert(key.to_string(), n);
    }
}

/// Stage names as used on the command line.
pub const STAGES: &[&str] = &[
    "ingest",
    "label-string",
    "llm-requests",
    "label-llm",
    "evaluate",
    "geo",
    "topics",
    "regress",
    "report",
];

pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Pipeline { config }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn require(&self, name: &str, subcommand: &str) -> Result<PathBuf> {
        let p = self.out(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingPrerequisite {
                artifact: p,
                subcommand: subcommand.to_string(),
            })
        }
    }

    fn write(&self, out: &mut StageOutput, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.out(name);
        write_atomic(&p, contents.as_ref())?;
        out.outputs.push(p);
        Ok(())
    }

    /// Run one stage by name and record it in the manifest.
    pub fn run_stage(&self, stage: &str) -> Result<StageOutput> {
        let start = Instant::now();
        let out = match stage {
            "ingest" => self.ingest(),
            "label-string" => self.label_string(),
            "llm-requests" => self.llm_requests(),
            "label-llm" => self.label_llm(),
            "evaluate" => self.evaluate(),
            "geo" => self.geo(),
            "topics" => self.topics(),
            "regress" => self.regress(),
            "report" => self.report(),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }?;
        self.record(stage, &out, start.elapsed())?;
        Ok(out)
    }

    /// Every stage in order; evaluation only when a gold set is configured.
    pub fn run_all(&self) -> Result<Vec<(String, StageOutput)>> {
        let mut done = Vec::new();
        for stage in [
            "ingest",
            "label-string",
            "label-llm",
            "evaluate",
            "geo",
            "topics",
            "regress",
            "report",
        ] {
            if stage == "evaluate" && self.config.gold.is_none() {
                continue;
            }
            done.push((stage.to_string(), self.run_stage(stage)?));
        }
        Ok(done)
    }

    fn record(&self, stage: &str, out: &StageOutput, elapsed: Duration) -> Result<()> {
        let path = self.out(MANIFEST);
        let mut manifest: RunManifest = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => RunManifest::default(),
        };
        manifest.tool_version = TOOL_VERSION.to_string();
        manifest.config_hash = self.config.config_hash.clone();
        let digest = |paths: &[PathBuf], relative_to: &Path| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| {
                    let key = p.strip_prefix(relative_to).unwrap_or(p).display().to_string();
                    Ok((key, sha256_file(p)?))
                })
                .collect()
        };
        manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                inputs: digest(&out.inputs, &self.config.base_dir)?,
                outputs: digest(&out.outputs, &self.config.out)?,
                rows: out.rows.clone(),
                elapsed_ms: elapsed.as_millis() as u64,
            },
        );
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&path, text.as_bytes())
    }

    fn gazetteer(&self) -> Result<(Gazetteer, NormalizationTable)> {
        match &self.config.gazetteer {
            Some(p) => {
                let gaz = Gazetteer::load(p)?;
                let table = match &self.config.normalization {
                    Some(n) => NormalizationTable::load(n, &gaz)?,
                    None => NormalizationTable::default(),
                };
                Ok((gaz, table))
            }
            None => {
                let gaz = Gazetteer::chicago();
                let table = NormalizationTable::chicago(&gaz)?;
                Ok((gaz, table))
            }
        }
    }

    fn corpus(&self, out: &mut StageOutput) -> Result<Vec<CleanListing>> {
        let p = self.require(files::CORPUS, "ingest")?;
        out.inputs.push(p.clone());
        corpus::read_clean_corpus(&p)
    }

    fn config_inputs(&self, out: &mut StageOutput, paths: &[&Option<PathBuf>]) {
        out.inputs.extend(paths.iter().filter_map(|p| (*p).clone()));
    }

    pub fn ingest(&self) -> Result<StageOutput> {
        let cfg = &self.config;
        let mut out = StageOutput::default();
        out.inputs.push(cfg.corpus.clone());
        self.config_inputs(&mut out, &[&cfg.cleaning]);
        let report = corpus::ingest(&cfg.corpus, cfg.corpus_format)?;
        let clean_cfg = match &cfg.cleaning {
            Some(p) => CleanConfig::load(p)?,
            None => CleanConfig::shipped(),
        };
        let errors = report.error_count();
        let warnings = report.issues.len() - errors;

        let mut issues = csv::Writer::from_writer(Vec::new());
        issues.write_record(["row", "id", "severity", "message"]).unwrap();
        for i in &report.issues {
            let severity = serde_json::to_value(i.severity).unwrap();
            issues
                .write_record([
                    i.row.to_string(),
                    i.id.clone().unwrap_or_default(),
                    severity.as_str().unwrap_or_default().to_string(),
                    i.message.clone(),
                ])
                .unwrap();
        }

        let cleaned = Cleaner::new(&clean_cfg)?.clean_all(report.listings);
        let dedup = corpus::deduplicate(cleaned);
        self.write(&mut out, files::CORPUS, corpus::to_json_lines(&dedup.kept))?;
        self.write(&mut out, files::DUPLICATES, corpus::to_json_lines(&dedup.dropped))?;
        self.write(&mut out, files::INGEST_ERRORS, issues.into_inner().unwrap())?;

        let s = &dedup.stats;
        out.row("raw_count", s.raw_count);
        out.row("unique_count", s.unique_count);
        out.row("dropped_duplicates", s.dropped_duplicates);
        out.row("row_errors", errors);
        out.row("row_warnings", warnings);
        out.summary = format!(
            "raw_count={} unique_count={} dropped_duplicates={} row_errors={errors} row_warnings={warnings}",
            s.raw_count, s.unique_count, s.dropped_duplicates
        );
        Ok(out)
    }

    pub fn label_string(&self) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        let listings = self.corpus(&mut out)?;
        self.config_inputs(&mut out, &[&self.config.gazetteer]);
        let (gaz, _) = self.gazetteer()?;
        let labels = label_corpus_string(&listings, &gaz);
        self.write(&mut out, files::LABELS_STRING, labels_to_csv(&labels))?;
        let claimed = labels.iter().filter(|l| l.claim.is_some()).count();
        out.row("listings", labels.len());
        out.row("claimed", claimed);
        out.summary = format!("{} listings, {claimed} with a claim", labels.len());
        Ok(out)
    }

    fn template(&self) -> Result<PromptTemplate> {
        match &self.config.prompt {
            Some(p) => PromptTemplate::load(p),
            None => Ok(PromptTemplate::default()),
        }
    }

    /// Every prompt the LLM stage would send, keyed by fingerprint. Useful for
    /// recording transcripts.
    pub fn llm_requests(&self) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        let listings = self.corpus(&mut out)?;
        let (gaz, table) = self.gazetteer()?;
        let template = self.template()?;
        let cache = ResponseCache::in_memory();
        let annotator = Annotator::new(&gaz, &table, &template, &cache, None, self.config.llm.clone());
        let mut lines = String::new();
        let mut n = 0;
        for l in &listings {
            for r in annotator.requests_for(l)? {
                let rec = json!({
                    "listing_id": r.listing_id,
                    "field": r.field.as_str(),
                    "fingerprint": r.fingerprint,
                    "text": r.text,
                    "prompt": r.prompt,
                });
                lines.push_str(&rec.to_string());
                lines.push('\n');
                n += 1;
            }
        }
        self.write(&mut out, files::LLM_REQUESTS, lines)?;
        out.row("requests", n);
        out.summary = format!("{n} requests");
        Ok(out)
    }

    pub fn label_llm(&self) -> Result<StageOutput> {
        let cfg = &self.config;
        let mut out = StageOutput::default();
        let listings = self.corpus(&mut out)?;
        self.config_inputs(&mut out, &[&cfg.gazetteer, &cfg.normalization, &cfg.prompt]);
        let (gaz, table) = self.gazetteer()?;
        let template = self.template()?;
        let cache_path = cfg.cache.clone().unwrap_or_else(|| self.out("llm_cache.jsonl"));
        if let Some(dir) = cache_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let cache = ResponseCache::open(&cache_path)?;
        let client = if cfg.llm.offline {
            None
        } else {
            Some(
                HttpChatClient::from_env(&cfg.llm.base_url, cfg.llm.timeout).ok_or_else(|| {
                    Error::Config(format!(
                        "online mode needs the {} environment variable",
                        crate::llm::API_KEY_ENV
                    ))
                })?,
            )
        };
        let annotator = Annotator::new(
            &gaz,
            &table,
            &template,
            &cache,
            client.as_ref().map(|c| c as &dyn crate::llm::ChatClient),
            cfg.llm.clone(),
        );
        let result = annotator.annotate_corpus(&listings);
        self.write(&mut out, files::LABELS_LLM, labels_to_csv(&result.labels))?;
        let mut failures = csv::Writer::from_writer(Vec::new());
        failures.write_record(["listing_id", "field", "reason"]).unwrap();
        for f in &result.failures {
            failures
                .write_record([f.listing_id.as_str(), f.field.as_str(), f.reason.as_str()])
                .unwrap();
        }
        self.write(&mut out, files::LLM_FAILURES, failures.into_inner().unwrap())?;
        let r = &result.report;
        out.row("listings", r.listings);
        out.row("labeled", r.labeled);
        out.row("failed", r.failed);
        out.row("network_calls", r.network_calls as usize);
        out.row("cache_hits", r.cache_hits as usize);
        out.row("parse_repaired", r.parse_repaired as usize);
        out.row("parse_unparseable", r.parse_unparseable as usize);
        out.summary = format!(
            "{} labeled, {} failed, {} network calls, {} cache hits",
            r.labeled, r.failed, r.network_calls, r.cache_hits
        );
        Ok(out)
    }

    pub fn evaluate(&self) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        let gold_path = self
            .config
            .gold
            .clone()
            .ok_or_else(|| Error::Config("evaluate needs a `gold` entry in the config".into()))?;
        out.inputs.push(gold_path.clone());
        let gold = GoldSet::load(&gold_path)?;
        let mut reports = Vec::new();
        for (name, file, method) in [
            ("string-match", files::LABELS_STRING, "label-string"),
            ("llm", files::LABELS_LLM, "label-llm"),
        ] {
            let p = self.out(file);
            if !p.exists() {
                continue;
            }
            out.inputs.push(p.clone());
            let report = evaluate(&gold, &read_labels_csv(&p)?).map_err(|e| match e {
                Error::InvalidInput(m) => Error::InvalidInput(format!("{m} in {file}; rerun `{method}`")),
                other => other,
            })?;
            let csv_name = format!("eval_{}.csv", if name == "llm" { "llm" } else { "string" });
            self.write(&mut out, &csv_name, report.to_csv())?;
            out.summary += &format!("{name}: accuracy {:.4}\n", report.accuracy);
            reports.push((name, report));
        }
        if reports.is_empty() {
            return Err(Error::MissingPrerequisite {
                artifact: self.out(files::LABELS_STRING),
                subcommand: "label-string".into(),
            });
        }
        let table: Vec<(&str, &_)> = reports.iter().map(|(n, r)| (*n, r)).collect();
        self.write(&mut out, files::EVAL_TABLE, render_table(&table))?;
        out.row("gold", gold.len());
        Ok(out)
    }

    fn labels(&self, out: &mut StageOutput) -> Result<Vec<ClaimLabel>> {
        let (file, sub) = match self.config.claims_source {
            Method::StringMatch => (files::LABELS_STRING, "label-string"),
            _ => (files::LABELS_LLM, "label-llm"),
        };
        let p = self.require(file, sub)?;
        out.inputs.push(p.clone());
        read_labels_csv(&p)
    }

    fn boundary_sets(&self, out: &mut StageOutput) -> Result<Vec<BoundarySet>> {
        let (gaz, table) = self.gazetteer()?;
        self.config
            .boundaries
            .iter()
            .map(|b| {
                out.inputs.push(b.path.clone());
                let set = BoundarySet::load(&b.path, b.name.clone(), &self.config.boundary_name_property)?;
                Ok(set.renamed(|n| normalize_label(n, &table, &gaz)))
            })
            .collect()
    }

    pub fn geo(&self) -> Result<StageOutput> {
        let cfg = &self.config;
        let mut out = StageOutput::default();
        let listings = self.corpus(&mut out)?;
        let labels = self.labels(&mut out)?;
        let points = geo::claim_points(&labels, &listings);
        let centers = geo::social_centers(&points);
        let mut records = geo::distances(&points, &centers, cfg.distance_mode)?;
        geo::peripheral_flags(&mut records, cfg.peripheral_fraction, cfg.min_posts);
        self.write(&mut out, files::DISTANCES, geo::distances_to_csv(&records))?;
        self.write(&mut out, files::CENTERS, pretty(&geo::centers_to_geojson(&centers)))?;

        let claims: HashMap<&str, Option<&str>> = labels
            .iter()
            .map(|l| (l.listing_id.as_str(), l.claim.as_deref()))
            .collect();
        let located: Vec<(Option<&str>, f64, f64)> = listings
            .iter()
            .filter_map(|l| {
                let (lat, lon) = l.raw.coordinates()?;
                Some((claims.get(l.id()).copied().flatten(), lat, lon))
            })
            .collect();
        for set in self.boundary_sets(&mut out)? {
            let rows = geo::representation(&located, &set);
            let flagged = rows.iter().filter(|r| r.flagged).count();
            out.row(&format!("flagged_{}", set.source), flagged);
            self.write(
                &mut out,
                &format!("representation_{}.csv", set.source),
                geo::representation_to_csv(&rows),
            )?;
        }
        out.row("claim_points", points.len());
        out.row("neighborhoods", centers.len());
        out.row("peripheral", records.iter().filter(|r| r.peripheral).count());
        out.summary = format!("{} located claims across {} neighborhoods", points.len(), centers.len());
        Ok(out)
    }

    pub fn topics(&self) -> Result<StageOutput> {
        let cfg = &self.config;
        let mut out = StageOutput::default();
        let listings = self.corpus(&mut out)?;
        out.inputs.extend(cfg.stopwords.iter().cloned());
        self.config_inputs(&mut out, &[&cfg.lemmas]);
        let pre = match (&cfg.lemmas, cfg.stopwords.is_empty()) {
            (None, true) => Preprocessor::shipped(),
            (lemmas, _) => {
                let stop: Vec<&Path> = cfg.stopwords.iter().map(PathBuf::as_path).collect();
                match lemmas {
                    Some(l) => Preprocessor::load(&stop, l)?,
                    None => Err(Error::Config("custom stopwords need a `lemmas` entry too".into()))?,
                }
            }
        };
        let texts: Vec<(String, String)> = listings
            .iter()
            .map(|l| (l.id().to_string(), format!("{} {}", l.cleaned_title, l.cleaned_body)))
            .collect();
        let prepared = preprocess(&texts, &pre);
        let (model, trace) = fit_lda(&prepared.docs, &prepared.vocab, cfg.lda)?;
        let coherence = topics::coherence(&model, &prepared.docs, cfg.coherence_top_n);

        self.write(&mut out, files::MODEL, model.to_text())?;
        self.write(&mut out, files::THETA, model.theta_csv())?;
        self.write(&mut out, files::TOPIC_WORDS, model.topic_words_csv(cfg.top_words))?;
        self.write(&mut out, files::COHERENCE, coherence.to_csv())?;
        let mut t = String::from("iteration,log_likelihood\n");
        for (i, ll) in trace.iter().enumerate() {
            writeln!(t, "{},{ll}", i + 1).unwrap();
        }
        self.write(&mut out, files::LDA_TRACE, t)?;
        out.row("documents", prepared.docs.len());
        out.row("empty_documents", prepared.empty.len());
        out.row("vocabulary", prepared.vocab.len());
        out.summary = format!(
            "{} documents, vocabulary {}, mean coherence {:.4}",
            prepared.docs.len(),
            prepared.vocab.len(),
            coherence.mean
        );
        Ok(out)
    }

    fn distances_and_theta(&self, out: &mut StageOutput) -> Result<(Vec<DistanceRecord>, ThetaTable)> {
        let d = self.require(files::DISTANCES, "geo")?;
        let t = self.require(files::THETA, "topics")?;
        out.inputs.push(d.clone());
        out.inputs.push(t.clone());
        Ok((geo::read_distances_csv(&d)?, topics::read_theta_csv(&t)?))
    }

    pub fn regress(&self) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        let (distances, theta) = self.distances_and_theta(&mut out)?;
        let listings = self.corpus(&mut out)?;
        let design = build_design(
            &listings,
            &distances,
            &theta,
            DesignOptions {
                rent_per_thousand: self.config.rent_per_thousand,
            },
        )?;
        let fit = fit_design(&design)?;
        self.write(&mut out, files::REGRESSION_CSV, fit.to_csv())?;
        self.write(&mut out, files::REGRESSION_TXT, fit.render_table())?;
        out.row("n_used", fit.n_used);
        out.row("n_dropped", fit.n_dropped);
        out.summary = format!(
            "n = {}, dropped = {}, R² = {:.4}",
            fit.n_used, fit.n_dropped, fit.r_squared
        );
        Ok(out)
    }

    pub fn report(&self) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        let (distances, theta) = self.distances_and_theta(&mut out)?;
        let listings = self.corpus(&mut out)?;
        let labels = self.labels(&mut out)?;
        let sets = self.boundary_sets(&mut out)?;

        let joined: Vec<(&DistanceRecord, &Vec<f64>)> = distances
            .iter()
            .filter_map(|d| theta.rows.get(&d.listing_id).map(|t| (d, t)))
            .collect();
        let deciles = decile_shares(
            joined.iter().map(|(d, t)| (d.relative, t.as_slice())),
            theta.topics.len(),
        );
        self.write(&mut out, files::DECILES, deciles_to_csv(&deciles, &theta.topics))?;

        let mut pairs = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "listing_id".to_string(),
            "neighborhood".into(),
            "relative".into(),
            "peripheral".into(),
        ];
        header.extend(theta.topics.iter().cloned());
        pairs.write_record(&header).unwrap();
        for (d, t) in &joined {
            let mut rec = vec![
                d.listing_id.clone(),
                d.neighborhood.clone(),
                d.relative.to_string(),
                d.peripheral.to_string(),
            ];
            rec.extend(t.iter().map(f64::to_string));
            pairs.write_record(&rec).unwrap();
        }
        self.write(&mut out, files::PAIRS, pairs.into_inner().unwrap())?;

        let points = geo::claim_points(&labels, &listings);
        let centers = geo::social_centers(&points);
        let overlay = neighborhood_overlay(&labels, &listings, &centers, &sets);
        self.write(&mut out, files::OVERLAY, pretty(&overlay))?;

        let claims: HashMap<&str, Option<&str>> = labels
            .iter()
            .map(|l| (l.listing_id.as_str(), l.claim.as_deref()))
            .collect();
        let located: Vec<(Option<&str>, f64, f64)> = listings
            .iter()
            .filter_map(|l| {
                let (lat, lon) = l.raw.coordinates()?;
                Some((claims.get(l.id()).copied().flatten(), lat, lon))
            })
            .collect();
        let mut text = String::new();
        writeln!(text, "Topic share by relative-distance decile").unwrap();
        writeln!(
            text,
            "Bins are right-closed: a listing falls in decile d, the smallest d in 1..=10 with relative <= d/10."
        )
        .unwrap();
        writeln!(text, "Relative distance 0 is therefore in decile 1.\n").unwrap();
        text.push_str(&render_deciles(&deciles, &theta.topics));
        for set in &sets {
            let rows = geo::representation(&located, set);
            writeln!(
                text,
                "\nRepresentation against boundary set {:?} (claims / contained)",
                set.source
            )
            .unwrap();
            for r in rows.iter().filter(|r| r.ratio.is_some_and(|x| x > 1.0) || r.flagged) {
                let ratio = r.ratio.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
                let note = match (r.contained, r.center_inside) {
                    (None, _) => "no polygon",
                    (_, Some(false)) => "social center outside polygon",
                    _ => "",
                };
                writeln!(
                    text,
                    "  {:<32} {:>4} / {:>4}  {:>6}  {note}",
                    r.neighborhood,
                    r.claims,
                    r.contained.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
                    ratio
                )
                .unwrap();
            }
        }
        self.write(&mut out, files::REPORT, text)?;
        out.row("paired_listings", joined.len());
        out.summary = format!("{} listings with distance and topic proportions", joined.len());
        Ok(out)
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// Right-closed decile: the smallest `d` in `1..=10` with `relative <= d / 10`.
pub fn decile_of(relative: f64) -> usize {
    (1..=10).find(|&d| relative <= d as f64 / 10.0).unwrap_or(10)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecileRow {
    pub decile: usize,
    pub n: usize,
    /// Mean topic proportions; `None` for an empty decile.
    pub means: Option<Vec<f64>>,
}

pub fn decile_shares<'a>(pairs: impl IntoIterator<Item = (f64, &'a [f64])>, k: usize) -> Vec<DecileRow> {
    let mut sums = vec![vec![0.0; k]; 10];
    let mut counts = [0usize; 10];
    for (relative, theta) in pairs {
        let d = decile_of(relative) - 1;
        counts[d] += 1;
        for (s, p) in sums[d].iter_mut().zip(theta) {
            *s += p;
        }
    }
    (0..10)
        .map(|d| DecileRow {
            decile: d + 1,
            n: counts[d],
            means: (counts[d] > 0).then(|| sums[d].iter().map(|s| s / counts[d] as f64).collect()),
        })
        .collect()
}

fn deciles_to_csv(rows: &[DecileRow], topics: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["decile".to_string(), "lower".into(), "upper".into(), "n".into()];
    header.extend(topics.iter().cloned());
    w.write_record(&header).unwrap();
    for r in rows {
        let mut rec = vec![
            r.decile.to_string(),
            ((r.decile - 1) as f64 / 10.0).to_string(),
            (r.decile as f64 / 10.0).to_string(),
            r.n.to_string(),
        ];
        match &r.means {
            Some(m) => rec.extend(m.iter().map(f64::to_string)),
            None => rec.extend(topics.iter().map(|_| String::new())),
        }
        w.write_record(&rec).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn render_deciles(rows: &[DecileRow], topics: &[String]) -> String {
    let mut s = format!("{:>6} {:>5}", "decile", "n");
    for t in topics {
        write!(s, " {t:>9}").unwrap();
    }
    s.push('\n');
    for r in rows {
        write!(s, "{:>6} {:>5}", r.decile, r.n).unwrap();
        for i in 0..topics.len() {
            match &r.means {
                Some(m) => write!(s, " {:>9.4}", m[i]).unwrap(),
                None => write!(s, " {:>9}", "-").unwrap(),
            }
        }
        s.push('\n');
    }
    s
}

/// One feature group per neighborhood with a social center: its boundary
/// polygons, the center, the points claiming it (`claims_here = true`) and the
/// points inside its first-listed polygon that claim somewhere else.
pub fn neighborhood_overlay(
    labels: &[ClaimLabel],
    listings: &[CleanListing],
    centers: &[geo::SocialCenter],
    sets: &[BoundarySet],
) -> Value {
    let coords: HashMap<&str, (f64, f64)> = listings
        .iter()
        .filter_map(|l| l.raw.coordinates().map(|c| (l.id(), c)))
        .collect();
    let mut features = Vec::new();
    for c in centers {
        let group = c.neighborhood.as_str();
        for set in sets {
            if let Some(region) = set.region(group) {
                features.push(geo::region_to_geojson(region, &set.source, group));
            }
        }
        features.push(json!({
            "type": "Feature",
            "properties": {"group": group, "kind": "social_center", "claim_count": c.claim_count},
            "geometry": {"type": "Point", "coordinates": [c.lon, c.lat]},
        }));
        let home = sets.first().and_then(|s| s.region(group));
        for l in labels {
            let Some(&(lat, lon)) = coords.get(l.listing_id.as_str()) else {
                continue;
            };
            let claims_here = l.claim.as_deref() == Some(group);
            if !claims_here && !home.is_some_and(|r| r.contains(lat, lon)) {
                continue;
            }
            features.push(json!({
                "type": "Feature",
                "properties": {
                    "group": group,
                    "kind": "listing",
                    "listing_id": l.listing_id,
                    "claim": l.claim_str(),
                    "claims_here": claims_here,
                },
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
            }));
        }
    }
    json!({"type": "FeatureCollection", "features": features})
}

//! Tokenization and an LDA topic model fitted by collapsed Gibbs sampling.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SHIPPED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const SHIPPED_JARGON: &str = include_str!("../data/jargon_stopwords.txt");
const SHIPPED_LEMMAS: &str = include_str!("../data/lemmas.tsv");

/// Lowercase, strip non-letters, split, drop stopwords, lemmatize.
#[derive(Debug, Clone, Default)]
pub struct Preprocessor {
    stopwords: HashSet<String>,
    lemmas: HashMap<String, String>,
}

/// One word per line; `#` starts a comment.
pub fn parse_word_list(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
}

/// `inflected<TAB>lemma` per line; `#` starts a comment.
pub fn parse_lemma_table(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(from), Some(to), None) => {
                out.insert(from.to_lowercase(), to.to_lowercase());
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "lemma table line {}: expected two fields",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

impl Preprocessor {
    pub fn new(stopwords: impl IntoIterator<Item = String>, lemmas: HashMap<String, String>) -> Self {
        Preprocessor {
            stopwords: stopwords.into_iter().collect(),
            lemmas,
        }
    }

    /// Standard English stopwords plus listing jargon, with the shipped lemma table.
    pub fn shipped() -> Self {
        let words = parse_word_list(SHIPPED_STOPWORDS).chain(parse_word_list(SHIPPED_JARGON));
        Self::new(
            words,
            parse_lemma_table(SHIPPED_LEMMAS).expect("shipped lemma table parses"),
        )
    }

    pub fn load(stopword_files: &[&Path], lemma_file: &Path) -> Result<Self> {
        let mut words = Vec::new();
        for path in stopword_files {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            words.extend(parse_word_list(&text));
        }
        let text = std::fs::read_to_string(lemma_file).map_err(|e| Error::io(lemma_file, e))?;
        let lemmas = parse_lemma_table(&text).map_err(|e| Error::format(lemma_file, e.to_string()))?;
        Ok(Self::new(words, lemmas))
    }

    /// Stopwords are checked both before and after lemmatization, so a plural
    /// of a jargon word is dropped too.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let letters: String = text
            .to_lowercase()
            .chars()
            .map(|c| if c.is_alphabetic() { c } else { ' ' })
            .collect();
        letters
            .split_whitespace()
            .filter(|w| !self.stopwords.contains(*w))
            .map(|w| self.lemmas.get(w).cloned().unwrap_or_else(|| w.to_string()))
            .filter(|w| !self.stopwords.contains(w))
            .collect()
    }
}

/// Alphabetically sorted word list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let words: Vec<String> = words.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub listing_id: String,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub vocab: Vocabulary,
    /// Non-empty documents, in input order.
    pub docs: Vec<TokenizedDoc>,
    /// Ids of documents left empty after preprocessing.
    pub empty: Vec<String>,
}

/// Tokenize `(listing_id, text)` pairs and index them against a shared vocabulary.
pub fn preprocess(texts: &[(String, String)], pre: &Preprocessor) -> Preprocessed {
    let tokenized: Vec<Vec<String>> = texts.par_iter().map(|(_, t)| pre.tokens(t)).collect();
    let vocab = Vocabulary::new(tokenized.iter().flatten().cloned());
    let mut docs = Vec::new();
    let mut empty = Vec::new();
    for ((id, _), toks) in texts.iter().zip(tokenized) {
        if toks.is_empty() {
            empty.push(id.clone());
        } else {
            docs.push(TokenizedDoc {
                listing_id: id.clone(),
                tokens: toks.iter().map(|w| vocab.index[w]).collect(),
            });
        }
    }
    if !empty.is_empty() {
        log::warn!(
            "{} documents empty after preprocessing, excluded from fitting",
            empty.len()
        );
    }
    Preprocessed { vocab, docs, empty }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaParams {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaParams {
    fn default() -> Self {
        LdaParams {
            k: 7,
            alpha: 0.1,
            eta: 0.01,
            iterations: 100,
            seed: 42,
        }
    }
}

/// Collapsed Gibbs sampler state. Counts are kept in flat row-major arrays.
pub struct GibbsSampler<'a> {
    docs: &'a [TokenizedDoc],
    params: LdaParams,
    v: usize,
    z: Vec<Vec<usize>>,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    /// Validate inputs and draw a uniformly random initial assignment.
    pub fn new(docs: &'a [TokenizedDoc], vocab_size: usize, params: LdaParams) -> Result<Self> {
        let LdaParams { k, alpha, eta, .. } = params;
        if k < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 topics, got {k}")));
        }
        if !(alpha > 0.0 && alpha.is_finite() && eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidInput("alpha and eta must be positive".into()));
        }
        if docs.iter().all(|d| d.tokens.is_empty()) {
            return Err(Error::InvalidInput("no non-empty documents to fit".into()));
        }
        if k > vocab_size {
            return Err(Error::InvalidInput(format!(
                "{k} topics exceed vocabulary size {vocab_size}"
            )));
        }
        if let Some(d) = docs.iter().find(|d| d.tokens.iter().any(|&w| w >= vocab_size)) {
            return Err(Error::InvalidInput(format!(
                "document {} has out-of-vocabulary index",
                d.listing_id
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut s = GibbsSampler {
            docs,
            params,
            v: vocab_size,
            z: Vec::with_capacity(docs.len()),
            doc_topic: vec![0; docs.len() * k],
            topic_word: vec![0; k * vocab_size],
            topic_total: vec![0; k],
            rng: ChaCha8Rng::seed_from_u64(0),
            weights: vec![0.0; k],
        };
        for (d, doc) in docs.iter().enumerate() {
            let zs: Vec<usize> = doc.tokens.iter().map(|_| rng.random_range(0..k)).collect();
            for (&w, &t) in doc.tokens.iter().zip(&zs) {
                s.doc_topic[d * k + t] += 1;
                s.topic_word[t * vocab_size + w] += 1;
                s.topic_total[t] += 1;
            }
            s.z.push(zs);
        }
        s.rng = rng;
        Ok(s)
    }

    /// One full pass resampling every token's topic.
    pub fn sweep(&mut self) {
        let LdaParams { k, alpha, eta, .. } = self.params;
        let v = self.v;
        let v_eta = v as f64 * eta;
        for (d, doc) in self.docs.iter().enumerate() {
            for (i, &w) in doc.tokens.iter().enumerate() {
                let old = self.z[d][i];
                self.doc_topic[d * k + old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    total += (self.doc_topic[d * k + t] as f64 + alpha) * (self.topic_word[t * v + w] as f64 + eta)
                        / (self.topic_total[t] as f64 + v_eta);
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.z[d][i] = new;
                self.doc_topic[d * k + new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    /// Tokens currently assigned to each topic.
    pub fn topic_totals(&self) -> &[u32] {
        &self.topic_total
    }

    /// Joint log probability `log p(w, z)` of the current state.
    pub fn log_likelihood(&self) -> f64 {
        let LdaParams { k, alpha, eta, .. } = self.params;
        let v = self.v as f64;
        let mut ll = k as f64 * (ln_gamma(v * eta) - v * ln_gamma(eta));
        for t in 0..k {
            let row = &self.topic_word[t * self.v..(t + 1) * self.v];
            ll += row.iter().map(|&c| ln_gamma(c as f64 + eta)).sum::<f64>();
            ll -= ln_gamma(self.topic_total[t] as f64 + v * eta);
        }
        let kf = k as f64;
        ll += self.docs.len() as f64 * (ln_gamma(kf * alpha) - kf * ln_gamma(alpha));
        for (d, doc) in self.docs.iter().enumerate() {
            let row = &self.doc_topic[d * k..(d + 1) * k];
            ll += row.iter().map(|&c| ln_gamma(c as f64 + alpha)).sum::<f64>();
            ll -= ln_gamma(doc.tokens.len() as f64 + kf * alpha);
        }
        ll
    }

    /// Smoothed estimates from the current state.
    pub fn into_model(self, vocab: &Vocabulary) -> LdaModel {
        let LdaParams { k, alpha, eta, .. } = self.params;
        let v = self.v;
        let phi = (0..k)
            .map(|t| {
                let denom = self.topic_total[t] as f64 + v as f64 * eta;
                (0..v)
                    .map(|w| (self.topic_word[t * v + w] as f64 + eta) / denom)
                    .collect()
            })
            .collect();
        let theta = self
            .docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                let denom = doc.tokens.len() as f64 + k as f64 * alpha;
                (0..k)
                    .map(|t| (self.doc_topic[d * k + t] as f64 + alpha) / denom)
                    .collect()
            })
            .collect();
        LdaModel {
            params: self.params,
            vocab: vocab.words().to_vec(),
            doc_ids: self.docs.iter().map(|d| d.listing_id.clone()).collect(),
            doc_lengths: self.docs.iter().map(|d| d.tokens.len()).collect(),
            phi,
            theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub params: LdaParams,
    pub vocab: Vec<String>,
    pub doc_ids: Vec<String>,
    pub doc_lengths: Vec<usize>,
    /// k × V topic-word distributions.
    pub phi: Vec<Vec<f64>>,
    /// D × k document-topic proportions, rows aligned with `doc_ids`.
    pub theta: Vec<Vec<f64>>,
}

/// Fit by running `params.iterations` sweeps. Returns the model and the
/// log-likelihood after each sweep.
pub fn fit_lda(docs: &[TokenizedDoc], vocab: &Vocabulary, params: LdaParams) -> Result<(LdaModel, Vec<f64>)> {
    let docs: Vec<TokenizedDoc> = docs.iter().filter(|d| !d.tokens.is_empty()).cloned().collect();
    let mut sampler = GibbsSampler::new(&docs, vocab.len(), params)?;
    let mut trace = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        sampler.sweep();
        trace.push(sampler.log_likelihood());
    }
    Ok((sampler.into_model(vocab), trace))
}

const MODEL_HEADER: &str = "nbclaims-lda v1";

impl LdaModel {
    pub fn k(&self) -> usize {
        self.params.k
    }

    /// The `n` most probable words of `topic`, ties broken alphabetically.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<(&str, f64)> {
        let row = &self.phi[topic];
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| {
            row[b]
                .total_cmp(&row[a])
                .then_with(|| self.vocab[a].cmp(&self.vocab[b]))
        });
        idx.into_iter()
            .take(n)
            .map(|i| (self.vocab[i].as_str(), row[i]))
            .collect()
    }

    /// Token-weighted mean of theta over documents.
    pub fn corpus_shares(&self) -> Vec<f64> {
        let total: usize = self.doc_lengths.iter().sum();
        let mut shares = vec![0.0; self.k()];
        for (row, &len) in self.theta.iter().zip(&self.doc_lengths) {
            for (s, p) in shares.iter_mut().zip(row) {
                *s += p * len as f64;
            }
        }
        shares.iter_mut().for_each(|s| *s /= total as f64);
        shares
    }

    /// Line-oriented text form; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let row = |r: &Vec<f64>| r.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        writeln!(s, "{MODEL_HEADER}").unwrap();
        writeln!(
            s,
            "k {}\nalpha {}\neta {}\niterations {}\nseed {}",
            p.k, p.alpha, p.eta, p.iterations, p.seed
        )
        .unwrap();
        writeln!(s, "vocab {}", self.vocab.len()).unwrap();
        for w in &self.vocab {
            writeln!(s, "{w}").unwrap();
        }
        writeln!(s, "docs {}", self.doc_ids.len()).unwrap();
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            writeln!(s, "{id}\t{len}").unwrap();
        }
        writeln!(s, "phi").unwrap();
        for r in &self.phi {
            writeln!(s, "{}", row(r)).unwrap();
        }
        writeln!(s, "theta").unwrap();
        for r in &self.theta {
            writeln!(s, "{}", row(r)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("model file: {m}"));
        let mut lines = text.lines();
        let mut next = || lines.next().ok_or_else(|| bad("unexpected end of file"));
        if next()? != MODEL_HEADER {
            return Err(bad("missing or unsupported version header"));
        }
        fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("model file: expected `{key} <value>`, got {line:?}")))
        }
        let params = LdaParams {
            k: field(next()?, "k")?,
            alpha: field(next()?, "alpha")?,
            eta: field(next()?, "eta")?,
            iterations: field(next()?, "iterations")?,
            seed: field(next()?, "seed")?,
        };
        let v: usize = field(next()?, "vocab")?;
        let vocab = (0..v).map(|_| next().map(str::to_string)).collect::<Result<Vec<_>>>()?;
        let d: usize = field(next()?, "docs")?;
        let mut doc_ids = Vec::with_capacity(d);
        let mut doc_lengths = Vec::with_capacity(d);
        for _ in 0..d {
            let line = next()?;
            let (id, len) = line.rsplit_once('\t').ok_or_else(|| bad("bad document line"))?;
            doc_ids.push(id.to_string());
            doc_lengths.push(len.parse().map_err(|_| bad("bad document length"))?);
        }
        let mut matrix = |name: &str, rows: usize, cols: usize| -> Result<Vec<Vec<f64>>> {
            if next()? != name {
                return Err(bad(&format!("expected `{name}` section")));
            }
            (0..rows)
                .map(|_| {
                    let r: Vec<f64> = next()?
                        .split(' ')
                        .map(|x| x.parse().map_err(|_| bad("bad number")))
                        .collect::<Result<_>>()?;
                    if r.len() == cols {
                        Ok(r)
                    } else {
                        Err(bad(&format!("{name} row has {} entries, expected {cols}", r.len())))
                    }
                })
                .collect()
        };
        let phi = matrix("phi", params.k, v)?;
        let theta = matrix("theta", d, params.k)?;
        Ok(LdaModel {
            params,
            vocab,
            doc_ids,
            doc_lengths,
            phi,
            theta,
        })
    }

    /// `topic,share,top_words` with 1-based topic numbers.
    pub fn topic_words_csv(&self, n: usize) -> String {
        let shares = self.corpus_shares();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["topic", "share", "top_words"]).unwrap();
        for (t, share) in shares.iter().enumerate() {
            let words: Vec<&str> = self.top_words(t, n).into_iter().map(|(w, _)| w).collect();
            w.write_record([(t + 1).to_string(), share.to_string(), words.join(" ")])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// `listing_id,topic_1,…,topic_k`.
    pub fn theta_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["listing_id".to_string()];
        header.extend((1..=self.k()).map(|t| format!("topic_{t}")));
        w.write_record(&header).unwrap();
        for (id, row) in self.doc_ids.iter().zip(&self.theta) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Theta table read back from CSV: column names and rows keyed by listing id.
#[derive(Debug, Clone, Default)]
pub struct ThetaTable {
    pub topics: Vec<String>,
    pub rows: HashMap<String, Vec<f64>>,
}

pub fn read_theta_csv(path: &Path) -> Result<ThetaTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.get(0) != Some("listing_id") {
        return Err(Error::format(path, "first column must be listing_id"));
    }
    let topics: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = HashMap::new();
    for record in reader.records() {
        let r = record.map_err(|e| Error::format(path, e.to_string()))?;
        let values = r
            .iter()
            .skip(1)
            .map(|x| {
                x.parse::<f64>()
                    .map_err(|_| Error::format(path, format!("bad number {x:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.insert(r[0].to_string(), values);
    }
    Ok(ThetaTable { topics, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub metric: &'static str,
    pub top_n: usize,
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

/// Normalized PMI of a word pair from document frequencies over `n_docs`.
/// Never co-occurring pairs score −1; pairs present in every document score 1.
pub fn npmi(df_i: usize, df_j: usize, df_ij: usize, n_docs: usize) -> f64 {
    if df_ij == 0 {
        return -1.0;
    }
    let n = n_docs as f64;
    let p_ij = df_ij as f64 / n;
    if p_ij >= 1.0 {
        return 1.0;
    }
    let pmi = (p_ij / ((df_i as f64 / n) * (df_j as f64 / n))).ln();
    pmi / -p_ij.ln()
}

/// Mean pairwise NPMI of each topic's `top_n` words over boolean document
/// co-occurrence in `docs`. A topic with fewer than two words scores 0.
pub fn coherence(model: &LdaModel, docs: &[TokenizedDoc], top_n: usize) -> CoherenceReport {
    let index: HashMap<&str, usize> = model.vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let sets: Vec<HashSet<usize>> = docs.iter().map(|d| d.tokens.iter().copied().collect()).collect();
    let n_docs = sets.len();
    let per_topic: Vec<f64> = (0..model.k())
        .map(|t| {
            let words: Vec<usize> = model.top_words(t, top_n).iter().map(|(w, _)| index[w]).collect();
            let df = |w: usize| sets.iter().filter(|s| s.contains(&w)).count();
            let mut total = 0.0;
            let mut pairs = 0;
            for i in 0..words.len() {
                for j in i + 1..words.len() {
                    let (a, b) = (words[i], words[j]);
                    let both = sets.iter().filter(|s| s.contains(&a) && s.contains(&b)).count();
                    total += npmi(df(a), df(b), both, n_docs);
                    pairs += 1;
                }
            }
            if pairs == 0 {
                0.0
            } else {
                total / pairs as f64
            }
        })
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    CoherenceReport {
        metric: "npmi-document",
        top_n,
        per_topic,
        mean,
    }
}

impl CoherenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("topic,coherence\n");
        for (t, c) in self.per_topic.iter().enumerate() {
            writeln!(s, "{},{}", t + 1, c).unwrap();
        }
        writeln!(s, "mean,{}", self.mean).unwrap();
        s
    }
}

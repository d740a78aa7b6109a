//! Chat-completion labeler.
//!
//! Each listing field (title, body, neighborhood field) is sent as an
//! independent request so no field's text leaks into another's prompt. The
//! three parsed labels are combined with the same cascade as the string
//! matcher. Every response is cached by request fingerprint; in offline mode a
//! cache miss is a per-listing failure rather than a network call.

mod cache;
mod client;
mod parse;
mod prompt;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

pub use cache::{RawResponse, ResponseCache};
pub use client::{complete_with_retry, Backoff, ChatClient, HttpChatClient, RateLimiter, TransportError, API_KEY_ENV};
pub use parse::{parse_response, ParseStatus, ParsedLabel};
pub use prompt::{build_prompt, fingerprint, PromptRequest, PromptTemplate};

use crate::claims::{cascade, ClaimLabel, Field, Method};
use crate::corpus::{collapse_whitespace, CleanListing};
use crate::gazetteer::{Gazetteer, NormalizationTable};

#[derive(Debug, Clone)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    /// Requests-per-minute ceiling; 0 disables limiting.
    pub max_rpm: u32,
    /// Maximum concurrent requests.
    pub fanout: usize,
    pub backoff: Backoff,
    /// Serve only from the cache.
    pub offline: bool,
    pub base_url: String,
    pub timeout: Duration,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            model: "gpt-4.1-mini".into(),
            temperature: 0.0,
            max_rpm: 500,
            fanout: 8,
            backoff: Backoff::default(),
            offline: true,
            base_url: "https://api.openai.com/v1".into(),
            timeout: Duration::from_secs(60),
        }
    }
}

/// A fully built request for one field of one listing.
#[derive(Debug, Clone, Serialize)]
pub struct FieldRequest {
    pub listing_id: String,
    pub field: Field,
    pub fingerprint: String,
    pub text: String,
    #[serde(skip)]
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotationFailure {
    pub listing_id: String,
    pub field: Field,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ListingAnnotation {
    pub label: ClaimLabel,
    /// Parsed label per field in cascade order; `None` for skipped empty fields.
    pub parsed: [Option<ParsedLabel>; 3],
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AnnotationReport {
    pub listings: usize,
    pub labeled: usize,
    pub failed: usize,
    pub network_calls: u64,
    pub cache_hits: u64,
    pub skipped_empty_fields: u64,
    pub prompt_bytes_sent: u64,
    pub parse_clean: u64,
    pub parse_repaired: u64,
    pub parse_unparseable: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone)]
pub struct CorpusAnnotation {
    /// Labels for listings that annotated successfully, in input order.
    pub labels: Vec<ClaimLabel>,
    pub failures: Vec<AnnotationFailure>,
    pub report: AnnotationReport,
}

#[derive(Default)]
struct Counters {
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
    skipped: AtomicU64,
    prompt_bytes: AtomicU64,
    clean: AtomicU64,
    repaired: AtomicU64,
    unparseable: AtomicU64,
}

/// Combine three per-field parsed labels into a claim, title first.
pub fn annotate_parsed(listing_id: &str, parsed: &[Option<ParsedLabel>; 3]) -> ClaimLabel {
    let label = |i: usize| parsed[i].as_ref().and_then(|p| p.label.as_deref());
    match cascade(label(0), label(1), label(2)) {
        Some((name, field)) => ClaimLabel {
            listing_id: listing_id.to_string(),
            claim: Some(name.to_string()),
            source_field: Some(field),
            method: Method::Llm,
        },
        None => ClaimLabel::unknown(listing_id, Method::Llm),
    }
}

pub fn field_text(listing: &CleanListing, field: Field) -> String {
    match field {
        Field::Title => listing.cleaned_title.clone(),
        Field::Body => listing.cleaned_body.clone(),
        Field::NeighborhoodField => listing
            .raw
            .neighborhood_field
            .as_deref()
            .map(collapse_whitespace)
            .unwrap_or_default(),
    }
}

pub struct Annotator<'a> {
    gazetteer: &'a Gazetteer,
    table: &'a NormalizationTable,
    template: &'a PromptTemplate,
    cache: &'a ResponseCache,
    client: Option<&'a dyn ChatClient>,
    config: LlmConfig,
    allowed: Vec<String>,
    limiter: RateLimiter,
    counters: Counters,
}

impl<'a> Annotator<'a> {
    pub fn new(
        gazetteer: &'a Gazetteer,
        table: &'a NormalizationTable,
        template: &'a PromptTemplate,
        cache: &'a ResponseCache,
        client: Option<&'a dyn ChatClient>,
        config: LlmConfig,
    ) -> Self {
        Annotator {
            allowed: gazetteer.canonicals().map(str::to_string).collect(),
            limiter: RateLimiter::per_minute(config.max_rpm),
            gazetteer,
            table,
            template,
            cache,
            client,
            config,
            counters: Counters::default(),
        }
    }

    pub fn request(&self, listing_id: &str, field: Field, text: String) -> crate::Result<FieldRequest> {
        let request = PromptRequest {
            field,
            text,
            allowed: self.allowed.clone(),
            model_id: self.config.model.clone(),
            temperature: self.config.temperature,
        };
        let prompt = build_prompt(&request, self.template)?;
        Ok(FieldRequest {
            listing_id: listing_id.to_string(),
            field,
            fingerprint: fingerprint(&request, self.template),
            text: request.text,
            prompt,
        })
    }

    /// Requests for the non-empty fields of a listing.
    pub fn requests_for(&self, listing: &CleanListing) -> crate::Result<Vec<FieldRequest>> {
        Field::ALL
            .into_iter()
            .filter_map(|field| {
                let text = field_text(listing, field);
                (!text.trim().is_empty()).then(|| self.request(listing.id(), field, text))
            })
            .collect()
    }

    fn respond(&self, request: &FieldRequest) -> Result<String, String> {
        if let Some(raw) = self.cache.get(&request.fingerprint) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(raw);
        }
        let client = match (self.config.offline, self.client) {
            (false, Some(c)) => c,
            _ => return Err("cache miss in offline mode".into()),
        };
        self.counters
            .prompt_bytes
            .fetch_add(request.prompt.len() as u64, Ordering::Relaxed);
        let (result, calls) = complete_with_retry(
            client,
            &self.limiter,
            self.config.backoff,
            &request.prompt,
            &self.config.model,
            self.config.temperature,
        );
        self.counters.network_calls.fetch_add(calls as u64, Ordering::Relaxed);
        let raw = result.map_err(|e| format!("transport failure: {e}"))?;
        self.cache
            .insert(RawResponse {
                fingerprint: request.fingerprint.clone(),
                raw_text: raw.clone(),
                received_at: chrono::Utc::now().naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string(),
            })
            .map_err(|e| format!("cache write failed: {e}"))?;
        Ok(raw)
    }

    pub fn annotate_listing(&self, listing: &CleanListing) -> Result<ListingAnnotation, AnnotationFailure> {
        let mut parsed: [Option<ParsedLabel>; 3] = [None, None, None];
        for (slot, field) in Field::ALL.into_iter().enumerate() {
            let text = field_text(listing, field);
            if text.trim().is_empty() {
                self.counters.skipped.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            let fail = |reason: String| AnnotationFailure {
                listing_id: listing.id().to_string(),
                field,
                reason,
            };
            let request = self
                .request(listing.id(), field, text)
                .map_err(|e| fail(e.to_string()))?;
            let raw = self.respond(&request).map_err(fail)?;
            let p = parse_response(&raw, self.table, self.gazetteer);
            let counter = match p.parse_status {
                ParseStatus::Clean => &self.counters.clean,
                ParseStatus::Repaired => &self.counters.repaired,
                ParseStatus::Unparseable => &self.counters.unparseable,
            };
            counter.fetch_add(1, Ordering::Relaxed);
            parsed[slot] = Some(p);
        }
        Ok(ListingAnnotation {
            label: annotate_parsed(listing.id(), &parsed),
            parsed,
        })
    }

    /// Annotate every listing with bounded concurrency. Output order follows the input.
    pub fn annotate_corpus(&self, listings: &[CleanListing]) -> CorpusAnnotation {
        let start = Instant::now();
        let next = AtomicUsize::new(0);
        let workers = self.config.fanout.clamp(1, listings.len().max(1));
        let mut results: Vec<(usize, Result<ListingAnnotation, AnnotationFailure>)> = thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    s.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            let Some(listing) = listings.get(i) else { break };
                            out.push((i, self.annotate_listing(listing)));
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("annotation worker panicked"))
                .collect()
        });
        results.sort_by_key(|(i, _)| *i);

        let mut labels = Vec::new();
        let mut failures = Vec::new();
        for (_, r) in results {
            match r {
                Ok(a) => labels.push(a.label),
                Err(f) => failures.push(f),
            }
        }
        let c = &self.counters;
        let report = AnnotationReport {
            listings: listings.len(),
            labeled: labels.len(),
            failed: failures.len(),
            network_calls: c.network_calls.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            skipped_empty_fields: c.skipped.load(Ordering::Relaxed),
            prompt_bytes_sent: c.prompt_bytes.load(Ordering::Relaxed),
            parse_clean: c.clean.load(Ordering::Relaxed),
            parse_repaired: c.repaired.load(Ordering::Relaxed),
            parse_unparseable: c.unparseable.load(Ordering::Relaxed),
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        CorpusAnnotation {
            labels,
            failures,
            report,
        }
    }
}

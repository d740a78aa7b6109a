//! Listing ingest, text cleaning and de-duplication.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Posting time, normalized to UTC without offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub NaiveDateTime);

impl Timestamp {
    const FORMAT: &'static str = "%Y-%m-%dT%H:%M:%S";

    /// Accepts RFC 3339, `YYYY-MM-DD HH:MM:SS`, `YYYY-MM-DDTHH:MM:SS` and bare dates.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Some(Timestamp(dt.naive_utc()));
        }
        for fmt in [Self::FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Some(Timestamp(dt));
            }
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .ok()
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .map(Timestamp)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(Self::FORMAT))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp {s:?}")))
    }
}

/// One rental advertisement as it arrives from the scraper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawListing {
    pub id: String,
    pub title: String,
    pub body: String,
    #[serde(rename = "neighborhood")]
    pub neighborhood_field: Option<String>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub rent: Option<f64>,
    pub bedrooms: Option<f64>,
    pub bathrooms: Option<f64>,
    #[serde(rename = "sqft")]
    pub square_footage: Option<f64>,
    pub posted_at: Option<Timestamp>,
}

impl RawListing {
    /// `(latitude, longitude)` when both are present.
    pub fn coordinates(&self) -> Option<(f64, f64)> {
        self.latitude.zip(self.longitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanListing {
    #[serde(flatten)]
    pub raw: RawListing,
    pub cleaned_title: String,
    pub cleaned_body: String,
    pub duplicate_of: Option<String>,
}

impl CleanListing {
    pub fn id(&self) -> &str {
        &self.raw.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub raw_count: usize,
    pub unique_count: usize,
    pub dropped_duplicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    JsonLines,
    Csv,
}

impl InputFormat {
    /// Guess from the file extension; anything other than `.csv` is JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::JsonLines,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// A per-row problem found during ingest. Errors drop the row; warnings keep it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowIssue {
    /// 1-based record number (line for JSON Lines, data row for CSV).
    pub row: usize,
    pub id: Option<String>,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub listings: Vec<RawListing>,
    pub issues: Vec<RowIssue>,
}

impl IngestReport {
    pub fn error_count(&self) -> usize {
        self.issues.iter().filter(|i| i.severity == Severity::Error).count()
    }
}

const REQUIRED: [&str; 3] = ["id", "title", "body"];

/// Read a listing file. Unreadable or structurally broken files are fatal;
/// bad rows end up in [`IngestReport::issues`].
pub fn ingest(path: &Path, format: InputFormat) -> Result<IngestReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();

    match format {
        InputFormat::JsonLines => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row = i + 1;
                let obj = match serde_json::from_str::<serde_json::Value>(&line) {
                    Ok(serde_json::Value::Object(obj)) => obj,
                    Ok(_) => {
                        report.push_error(row, None, "record is not a JSON object");
                        continue;
                    }
                    Err(e) => {
                        report.push_error(row, None, format!("malformed JSON: {e}"));
                        continue;
                    }
                };
                let get = |key: &str| -> Option<Cow<'_, str>> {
                    match obj.get(key)? {
                        serde_json::Value::Null => None,
                        serde_json::Value::String(s) => Some(Cow::Borrowed(s.as_str())),
                        other => Some(Cow::Owned(other.to_string())),
                    }
                };
                report.accept(row, get, &mut seen);
            }
        }
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| Error::format(path, e.to_string()))?
                .clone();
            let columns: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
            if let Some(missing) = REQUIRED.iter().find(|c| !columns.contains_key(*c)) {
                return Err(Error::format(path, format!("missing required column {missing:?}")));
            }
            for (i, record) in reader.records().enumerate() {
                let row = i + 1;
                let record = match record {
                    Ok(r) => r,
                    Err(e) => {
                        report.push_error(row, None, format!("malformed CSV row: {e}"));
                        continue;
                    }
                };
                let get = |key: &str| -> Option<Cow<'_, str>> {
                    let value = record.get(*columns.get(key)?)?;
                    (!value.is_empty()).then_some(Cow::Borrowed(value))
                };
                report.accept(row, get, &mut seen);
            }
        }
    }
    Ok(report)
}

impl IngestReport {
    fn push_error(&mut self, row: usize, id: Option<String>, message: impl Into<String>) {
        self.issues.push(RowIssue {
            row,
            id,
            severity: Severity::Error,
            message: message.into(),
        });
    }

    fn push_warning(&mut self, row: usize, id: &str, message: impl Into<String>) {
        self.issues.push(RowIssue {
            row,
            id: Some(id.to_string()),
            severity: Severity::Warning,
            message: message.into(),
        });
    }

    fn accept<'a>(&mut self, row: usize, get: impl Fn(&str) -> Option<Cow<'a, str>>, seen: &mut HashSet<String>) {
        match listing_from_fields(&get) {
            Ok((listing, warnings)) => {
                if !seen.insert(listing.id.clone()) {
                    self.push_error(row, Some(listing.id), "duplicate id");
                    return;
                }
                for w in warnings {
                    self.push_warning(row, &listing.id, w);
                }
                self.listings.push(listing);
            }
            Err(message) => {
                let id = get("id").map(|s| s.into_owned());
                self.push_error(row, id, message);
            }
        }
    }
}

fn listing_from_fields<'a>(
    get: &impl Fn(&str) -> Option<Cow<'a, str>>,
) -> std::result::Result<(RawListing, Vec<String>), String> {
    let mut warnings = Vec::new();
    let text = |key: &str| -> std::result::Result<String, String> {
        get(key)
            .map(|s| s.into_owned())
            .ok_or_else(|| format!("missing required field {key:?}"))
    };
    let number = |key: &str| -> std::result::Result<Option<f64>, String> {
        match get(key) {
            None => Ok(None),
            Some(s) if s.trim().is_empty() => Ok(None),
            Some(s) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| format!("field {key:?} is not a number: {s:?}")),
        }
    };

    let id = text("id")?;
    if id.trim().is_empty() {
        return Err("empty id".into());
    }
    let title = text("title")?;
    let body = text("body")?;

    let mut latitude = number("latitude")?;
    let mut longitude = number("longitude")?;
    if latitude.is_some_and(|v| !(-90.0..=90.0).contains(&v))
        || longitude.is_some_and(|v| !(-180.0..=180.0).contains(&v))
    {
        return Err("coordinate out of range".into());
    }
    if latitude.is_none() || longitude.is_none() {
        warnings.push("missing coordinates; listing kept without location".to_string());
        latitude = None;
        longitude = None;
    }

    let posted_at = match get("posted_at") {
        None => None,
        Some(s) if s.trim().is_empty() => None,
        Some(s) => Some(Timestamp::parse(&s).ok_or_else(|| format!("invalid posted_at {s:?}"))?),
    };

    let listing = RawListing {
        id,
        title,
        body,
        neighborhood_field: get("neighborhood").map(|s| s.into_owned()),
        latitude,
        longitude,
        rent: number("rent")?,
        bedrooms: number("bedrooms")?,
        bathrooms: number("bathrooms")?,
        square_footage: number("sqft")?,
        posted_at,
    };
    Ok((listing, warnings))
}

/// Boilerplate phrases and mojibake repairs applied by [`Cleaner`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanConfig {
    #[serde(default)]
    pub boilerplate: Vec<String>,
    #[serde(default)]
    pub mojibake: BTreeMap<String, String>,
}

impl CleanConfig {
    /// The boilerplate list and mojibake map shipped with the crate.
    pub fn shipped() -> Self {
        serde_json::from_str(include_str!("../data/cleaning.json")).expect("shipped cleaning config parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

const MAX_CLEAN_PASSES: usize = 32;

/// Compiled form of a [`CleanConfig`].
#[derive(Debug, Clone)]
pub struct Cleaner {
    boilerplate: Option<Regex>,
    mojibake: Vec<(String, String)>,
}

impl Cleaner {
    pub fn new(config: &CleanConfig) -> Result<Self> {
        if config.mojibake.keys().any(|k| k.is_empty()) {
            return Err(Error::InvalidInput("empty mojibake key".into()));
        }
        let mut phrases: Vec<String> = config
            .boilerplate
            .iter()
            .map(|p| collapse_whitespace(p))
            .filter(|p| !p.is_empty())
            .collect();
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        phrases.dedup();
        let boilerplate = if phrases.is_empty() {
            None
        } else {
            let alternation = phrases
                .iter()
                .map(|p| p.split(' ').map(regex::escape).collect::<Vec<_>>().join(r"\s+"))
                .collect::<Vec<_>>()
                .join("|");
            Some(
                Regex::new(&format!("(?i)(?:{alternation})"))
                    .map_err(|e| Error::InvalidInput(format!("boilerplate pattern: {e}")))?,
            )
        };

        let mut mojibake: Vec<(String, String)> = config.mojibake.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        // longer sequences first so that "â€œ" wins over a bare "â€" prefix
        mojibake.sort_by(|a, b| {
            b.0.chars()
                .count()
                .cmp(&a.0.chars().count())
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(Cleaner { boilerplate, mojibake })
    }

    /// Repair mojibake, strip boilerplate and collapse whitespace, repeated to a
    /// fixed point so the result is stable under re-cleaning.
    pub fn clean_text(&self, text: &str) -> String {
        let mut current = self.clean_once(text);
        for _ in 1..MAX_CLEAN_PASSES {
            let next = self.clean_once(&current);
            if next == current {
                break;
            }
            current = next;
        }
        current
    }

    fn clean_once(&self, text: &str) -> String {
        let mut s = text.to_string();
        for (from, to) in &self.mojibake {
            if s.contains(from.as_str()) {
                s = s.replace(from.as_str(), to);
            }
        }
        if let Some(re) = &self.boilerplate {
            s = re.replace_all(&s, " ").into_owned();
        }
        collapse_whitespace(&s)
    }

    pub fn clean_listing(&self, raw: RawListing) -> CleanListing {
        CleanListing {
            cleaned_title: self.clean_text(&raw.title),
            cleaned_body: self.clean_text(&raw.body),
            raw,
            duplicate_of: None,
        }
    }

    /// Clean every listing in parallel; output is sorted by id.
    pub fn clean_all(&self, raws: Vec<RawListing>) -> Vec<CleanListing> {
        let mut out: Vec<CleanListing> = raws.into_par_iter().map(|raw| self.clean_listing(raw)).collect();
        out.sort_by(|a, b| a.raw.id.cmp(&b.raw.id));
        out
    }
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone)]
pub struct Deduplicated {
    /// Surviving listings, sorted by id.
    pub kept: Vec<CleanListing>,
    /// Older copies with `duplicate_of` pointing at their survivor, sorted by id.
    pub dropped: Vec<CleanListing>,
    pub stats: CorpusStats,
}

/// Keep the most recent listing among those with identical cleaned title and
/// body. Ties on `posted_at` go to the smallest id; a missing timestamp sorts
/// before every real one.
pub fn deduplicate(listings: Vec<CleanListing>) -> Deduplicated {
    let raw_count = listings.len();
    let mut groups: HashMap<(String, String), Vec<CleanListing>> = HashMap::new();
    for listing in listings {
        groups
            .entry((listing.cleaned_title.clone(), listing.cleaned_body.clone()))
            .or_default()
            .push(listing);
    }

    let mut kept = Vec::with_capacity(groups.len());
    let mut dropped = Vec::new();
    for (_, mut group) in groups {
        // newest first, then smallest id
        group.sort_by(|a, b| {
            b.raw
                .posted_at
                .cmp(&a.raw.posted_at)
                .then_with(|| a.raw.id.cmp(&b.raw.id))
        });
        let mut members = group.into_iter();
        let mut winner = members.next().expect("groups are never empty");
        winner.duplicate_of = None;
        for mut copy in members {
            copy.duplicate_of = Some(winner.raw.id.clone());
            dropped.push(copy);
        }
        kept.push(winner);
    }
    kept.sort_by(|a, b| a.raw.id.cmp(&b.raw.id));
    dropped.sort_by(|a, b| a.raw.id.cmp(&b.raw.id));

    let stats = CorpusStats {
        raw_count,
        unique_count: kept.len(),
        dropped_duplicates: dropped.len(),
    };
    Deduplicated { kept, dropped, stats }
}

/// Read a cleaned corpus stage file (JSON Lines of [`CleanListing`]).
pub fn read_clean_corpus(path: &Path) -> Result<Vec<CleanListing>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let listing = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(listing);
    }
    Ok(out)
}

/// Serialize listings as JSON Lines.
pub fn to_json_lines(listings: &[CleanListing]) -> String {
    let mut out = String::new();
    for l in listings {
        out.push_str(&serde_json::to_string(l).expect("listing serializes"));
        out.push('\n');
    }
    out
}

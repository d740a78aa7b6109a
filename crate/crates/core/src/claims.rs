//! String-match labeler and the claim-resolution cascade shared by every
//! labeling method.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CleanListing;
use crate::error::{Error, Result};
use crate::gazetteer::Gazetteer;
use crate::UNKNOWN;

/// Listing field a claim was read from, in cascade priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Title,
    Body,
    NeighborhoodField,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Title, Field::Body, Field::NeighborhoodField];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Title => "title",
            Field::Body => "body",
            Field::NeighborhoodField => "neighborhood_field",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    StringMatch,
    Llm,
    Manual,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::StringMatch => "string-match",
            Method::Llm => "llm",
            Method::Manual => "manual",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "string-match" => Ok(Method::StringMatch),
            "llm" => Ok(Method::Llm),
            "manual" => Ok(Method::Manual),
            other => Err(Error::InvalidInput(format!("unknown labeling method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMatch {
    pub canonical: String,
    /// Character index of the match start.
    pub offset: usize,
    /// Match length in characters.
    pub length: usize,
    pub field: Field,
}

/// The resolved claim for one listing. `claim == None` means unknown, and
/// holds exactly when `source_field == None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimLabel {
    pub listing_id: String,
    pub claim: Option<String>,
    pub source_field: Option<Field>,
    pub method: Method,
}

impl ClaimLabel {
    pub fn unknown(listing_id: impl Into<String>, method: Method) -> Self {
        ClaimLabel {
            listing_id: listing_id.into(),
            claim: None,
            source_field: None,
            method,
        }
    }

    pub fn claim_str(&self) -> &str {
        self.claim.as_deref().unwrap_or(UNKNOWN)
    }
}

/// First available claim in title → body → neighborhood-field order.
pub fn cascade<T>(title: Option<T>, body: Option<T>, field: Option<T>) -> Option<(T, Field)> {
    title
        .map(|t| (t, Field::Title))
        .or_else(|| body.map(|b| (b, Field::Body)))
        .or_else(|| field.map(|f| (f, Field::NeighborhoodField)))
}

/// Every gazetteer mention in `text`, ordered by start offset; at equal
/// offsets the longer match comes first, then the alphabetically smaller name.
pub fn match_field(text: &str, field: Field, gazetteer: &Gazetteer) -> Vec<FieldMatch> {
    let mut matches: Vec<FieldMatch> = gazetteer
        .find_all(text)
        .into_iter()
        .map(|m| FieldMatch {
            canonical: gazetteer.canonical(m.entry).to_string(),
            offset: m.offset,
            length: m.length,
            field,
        })
        .collect();
    matches.sort_by(|a, b| {
        a.offset
            .cmp(&b.offset)
            .then_with(|| b.length.cmp(&a.length))
            .then_with(|| a.canonical.cmp(&b.canonical))
    });
    matches
}

pub fn resolve_claim(
    listing_id: &str,
    title_matches: &[FieldMatch],
    body_matches: &[FieldMatch],
    field_matches: &[FieldMatch],
    method: Method,
) -> ClaimLabel {
    match cascade(title_matches.first(), body_matches.first(), field_matches.first()) {
        Some((m, source)) => ClaimLabel {
            listing_id: listing_id.to_string(),
            claim: Some(m.canonical.clone()),
            source_field: Some(source),
            method,
        },
        None => ClaimLabel::unknown(listing_id, method),
    }
}

pub fn label_listing(listing: &CleanListing, gazetteer: &Gazetteer) -> ClaimLabel {
    let title = match_field(&listing.cleaned_title, Field::Title, gazetteer);
    let body = match_field(&listing.cleaned_body, Field::Body, gazetteer);
    let field = listing
        .raw
        .neighborhood_field
        .as_deref()
        .map(|f| match_field(f, Field::NeighborhoodField, gazetteer))
        .unwrap_or_default();
    resolve_claim(listing.id(), &title, &body, &field, Method::StringMatch)
}

/// One string-match label per listing, in input order.
pub fn label_corpus_string(listings: &[CleanListing], gazetteer: &Gazetteer) -> Vec<ClaimLabel> {
    listings.par_iter().map(|l| label_listing(l, gazetteer)).collect()
}

const LABEL_HEADER: [&str; 4] = ["listing_id", "claim", "source_field", "method"];

/// Labels as CSV: `listing_id,claim,source_field,method`.
pub fn labels_to_csv(labels: &[ClaimLabel]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LABEL_HEADER).expect("in-memory write");
    for l in labels {
        w.write_record([
            l.listing_id.as_str(),
            l.claim_str(),
            l.source_field.map_or("none", Field::as_str),
            l.method.as_str(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn read_labels_csv(path: &std::path::Path) -> Result<Vec<ClaimLabel>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| Error::format(path, e.to_string()))?;
        let get = |i: usize| r.get(i).unwrap_or_default();
        let claim = match get(1) {
            "" | UNKNOWN => None,
            c => Some(c.to_string()),
        };
        let source_field = match get(2) {
            "title" => Some(Field::Title),
            "body" => Some(Field::Body),
            "neighborhood_field" => Some(Field::NeighborhoodField),
            "none" | "" => None,
            other => return Err(Error::format(path, format!("unknown source field {other:?}"))),
        };
        if claim.is_some() != source_field.is_some() {
            return Err(Error::format(
                path,
                format!("{}: claim and source_field disagree", get(0)),
            ));
        }
        out.push(ClaimLabel {
            listing_id: get(0).to_string(),
            claim,
            source_field,
            method: get(3).parse().map_err(|e: Error| Error::format(path, e.to_string()))?,
        });
    }
    Ok(out)
}

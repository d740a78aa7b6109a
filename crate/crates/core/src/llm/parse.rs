use serde::Serialize;

use crate::gazetteer::{normalize_label, Gazetteer, NormalizationTable};
use crate::UNKNOWN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    /// `label: [name]` framing with a canonical name or `unknown`.
    Clean,
    /// A label was recovered, but only via spelling normalization or by
    /// scanning free text for a neighborhood name.
    Repaired,
    /// Nothing usable; the label degrades to unknown.
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLabel {
    /// Canonical name, or `None` for unknown.
    pub label: Option<String>,
    pub parse_status: ParseStatus,
}

impl ParsedLabel {
    fn new(label: Option<String>, parse_status: ParseStatus) -> Self {
        ParsedLabel { label, parse_status }
    }
}

const SEPARATORS: [char; 2] = [',', '/'];
const TRIM: &[char] = &['[', ']', '"', '\'', '`', '.', '!', '*', ':', ';', ' ', '\t', '\n', '\r'];

/// Turn a raw model response into a canonical label.
///
/// The `label:` prefix and brackets are stripped, only the part before the
/// first `,` or `/` is kept, and the result goes through [`normalize_label`].
/// Responses without the expected framing are scanned for the earliest
/// gazetteer mention.
pub fn parse_response(raw: &str, table: &NormalizationTable, gazetteer: &Gazetteer) -> ParsedLabel {
    let text = raw.trim();
    let lower = text.to_lowercase();
    // only use the framing when lowercasing kept byte offsets aligned
    let framed_at = (lower.len() == text.len()).then(|| lower.find("label:")).flatten();

    let inner = match framed_at {
        Some(i) => {
            let after = text[i + "label:".len()..].trim_start();
            match after.strip_prefix('[').and_then(|s| s.find(']').map(|j| &s[..j])) {
                Some(bracketed) => bracketed,
                None => after.lines().next().unwrap_or_default(),
            }
        }
        None => text,
    };
    let framed = framed_at.is_some();

    let first = inner.split(SEPARATORS).next().unwrap_or_default();
    let candidate = first.trim_matches(TRIM).to_lowercase();

    if candidate == UNKNOWN {
        let status = if framed {
            ParseStatus::Clean
        } else {
            ParseStatus::Repaired
        };
        return ParsedLabel::new(None, status);
    }
    if let Some(label) = normalize_label(&candidate, table, gazetteer) {
        let status = if framed && gazetteer.contains(&candidate) {
            ParseStatus::Clean
        } else {
            ParseStatus::Repaired
        };
        return ParsedLabel::new(Some(label), status);
    }

    // free text: first the leading segment, then the whole response
    let scan_scope: &[&str] = if framed { &[first] } else { &[first, inner] };
    for scope in scan_scope {
        if let Some(name) = earliest_mention(scope, gazetteer) {
            return ParsedLabel::new(Some(name), ParseStatus::Repaired);
        }
    }
    if !framed && candidate.split(|c: char| !c.is_alphanumeric()).any(|w| w == UNKNOWN) {
        return ParsedLabel::new(None, ParseStatus::Repaired);
    }
    ParsedLabel::new(None, ParseStatus::Unparseable)
}

fn earliest_mention(text: &str, gazetteer: &Gazetteer) -> Option<String> {
    gazetteer
        .find_all(text)
        .into_iter()
        .min_by(|a, b| {
            a.offset
                .cmp(&b.offset)
                .then_with(|| b.length.cmp(&a.length))
                .then_with(|| gazetteer.canonical(a.entry).cmp(gazetteer.canonical(b.entry)))
        })
        .map(|m| gazetteer.canonical(m.entry).to_string())
}

//! Neighborhood registry: canonical names, alias patterns and a spelling
//! normalization table.
//!
//! # File formats
//!
//! Gazetteer files hold one entry per line:
//!
//! ```text
//! # comment
//! wrigleyville | wriggleyville | wriglyville | wrigglyville | wrigley ville
//! lake view | lakeview
//! north center | re:north\s*cent(er|re)
//! ```
//!
//! The first field is the canonical name. The canonical name is always a
//! pattern of its own; further fields are alias literals, or regular
//! expressions when prefixed with `re:`. All patterns are case-insensitive,
//! anchored on word boundaries, and a space inside a literal matches any run
//! of whitespace including none (`wrigley ville` also matches `wrigleyville`).
//! A `re:` pattern must match the canonical name itself; alternations inside
//! it have to be grouped, since a bare `|` separates fields.
//!
//! Normalization tables are CSV with a `variant,canonical` header.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use regex::{Regex, RegexSet};

use crate::corpus::collapse_whitespace;
use crate::error::{Error, Result};
use crate::UNKNOWN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AliasPattern {
    Literal(String),
    Regex(String),
}

impl AliasPattern {
    fn to_regex_source(&self) -> String {
        let body = match self {
            AliasPattern::Literal(s) => s
                .split_whitespace()
                .map(|t| regex::escape(&t.to_lowercase()))
                .collect::<Vec<_>>()
                .join(r"\s*"),
            AliasPattern::Regex(r) => r.clone(),
        };
        format!(r"(?i)\b(?:{body})\b")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazetteerEntry {
    pub canonical: String,
    pub aliases: Vec<AliasPattern>,
    pub notes: Option<String>,
}

impl GazetteerEntry {
    pub fn new(canonical: &str) -> Self {
        GazetteerEntry {
            canonical: normalize_key(canonical),
            aliases: Vec::new(),
            notes: None,
        }
    }

    pub fn with_alias(mut self, alias: &str) -> Self {
        self.aliases.push(AliasPattern::Literal(alias.to_string()));
        self
    }

    /// Every pattern this entry matches with, the canonical name first.
    fn patterns(&self) -> impl Iterator<Item = AliasPattern> + '_ {
        std::iter::once(AliasPattern::Literal(self.canonical.clone())).chain(self.aliases.iter().cloned())
    }
}

/// A compiled gazetteer. Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    index: HashMap<String, usize>,
    set: RegexSet,
    // one compiled regex per pattern, tagged with its entry index
    patterns: Vec<(Regex, usize)>,
}

/// A single pattern hit in some text, in character offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMatch {
    pub entry: usize,
    pub offset: usize,
    pub length: usize,
}

impl Gazetteer {
    pub fn from_entries(entries: Vec<GazetteerEntry>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.canonical.is_empty() {
                return Err(Error::Gazetteer(format!("entry {} has an empty canonical name", i + 1)));
            }
            if e.canonical == UNKNOWN {
                return Err(Error::Gazetteer(format!("{UNKNOWN:?} is reserved")));
            }
            if index.insert(e.canonical.clone(), i).is_some() {
                return Err(Error::Gazetteer(format!("duplicate canonical name {:?}", e.canonical)));
            }
        }

        let mut sources = Vec::new();
        let mut patterns = Vec::new();
        for (i, entry) in entries.iter().enumerate() {
            let mut entry_matches_canonical = false;
            for pattern in entry.patterns() {
                let source = pattern.to_regex_source();
                let re = Regex::new(&source)
                    .map_err(|e| Error::Gazetteer(format!("bad pattern for {:?}: {e}", entry.canonical)))?;
                let hits_canonical = re
                    .find(&entry.canonical)
                    .is_some_and(|m| m.start() == 0 && m.end() == entry.canonical.len());
                if let AliasPattern::Regex(r) = &pattern {
                    if !hits_canonical {
                        return Err(Error::Gazetteer(format!(
                            "pattern {r:?} does not match its canonical name {:?}",
                            entry.canonical
                        )));
                    }
                }
                entry_matches_canonical |= hits_canonical;
                sources.push(source);
                patterns.push((re, i));
            }
            if !entry_matches_canonical {
                return Err(Error::Gazetteer(format!(
                    "no pattern of {:?} matches the name itself",
                    entry.canonical
                )));
            }
        }
        let set = RegexSet::new(&sources).map_err(|e| Error::Gazetteer(e.to_string()))?;
        Ok(Gazetteer {
            entries,
            index,
            set,
            patterns,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = split_fields(line).into_iter().map(str::trim);
            let canonical = normalize_key(fields.next().unwrap_or_default());
            if canonical.is_empty() {
                return Err(Error::Gazetteer(format!("line {}: empty canonical name", lineno + 1)));
            }
            let aliases = fields
                .filter(|f| !f.is_empty())
                .map(|f| match f.strip_prefix("re:") {
                    Some(r) => AliasPattern::Regex(r.to_string()),
                    None => AliasPattern::Literal(f.to_string()),
                })
                .collect();
            entries.push(GazetteerEntry {
                canonical,
                aliases,
                notes: None,
            });
        }
        Self::from_entries(entries)
    }

    /// The 192 Chicago neighborhoods shipped with the crate.
    pub fn chicago() -> Self {
        Self::parse(include_str!("../data/chicago_gazetteer.txt")).expect("shipped gazetteer parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let gazetteer = Self::parse(&text).map_err(|e| match e {
            Error::Gazetteer(m) => Error::format(path, m),
            other => other,
        })?;
        if gazetteer.is_empty() {
            log::warn!("{}: gazetteer has no entries", path.display());
        } else {
            log::info!("{}: loaded {} neighborhoods", path.display(), gazetteer.len());
        }
        Ok(gazetteer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    /// Canonical names in file order.
    pub fn canonicals(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.canonical.as_str())
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.index.contains_key(canonical)
    }

    pub fn canonical(&self, entry: usize) -> &str {
        &self.entries[entry].canonical
    }

    /// All pattern hits in `text`. For each entry and start offset only the
    /// longest hit is kept. Output order is unspecified.
    pub fn find_all(&self, text: &str) -> Vec<RawMatch> {
        if self.entries.is_empty() || text.is_empty() {
            return Vec::new();
        }
        let mut best: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for pattern_idx in self.set.matches(text).iter() {
            let (re, entry) = &self.patterns[pattern_idx];
            for m in re.find_iter(text) {
                let end = best.entry((*entry, m.start())).or_insert(0);
                *end = (*end).max(m.end());
            }
        }
        if best.is_empty() {
            return Vec::new();
        }
        let char_offset = CharOffsets::new(text);
        best.into_iter()
            .map(|((entry, start), end)| {
                let offset = char_offset.of(start);
                RawMatch {
                    entry,
                    offset,
                    length: char_offset.of(end) - offset,
                }
            })
            .collect()
    }
}

/// Byte offset to character offset conversion.
struct CharOffsets {
    starts: Vec<usize>,
}

impl CharOffsets {
    fn new(text: &str) -> Self {
        let mut starts: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        starts.push(text.len());
        CharOffsets { starts }
    }

    fn of(&self, byte: usize) -> usize {
        self.starts.partition_point(|&b| b < byte)
    }
}

/// Split on `|` outside parentheses, brackets and escapes, so regex
/// alternations survive as long as they are grouped.
fn split_fields(line: &str) -> Vec<&str> {
    let mut fields = Vec::new();
    let mut depth = 0i32;
    let mut escaped = false;
    let mut start = 0;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' => escaped = true,
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            '|' if depth <= 0 => {
                fields.push(&line[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    fields.push(&line[start..]);
    fields
}

fn normalize_key(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

/// Variant spelling → canonical name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizationTable {
    map: BTreeMap<String, String>,
}

impl NormalizationTable {
    /// Build a table, rejecting targets that are not canonical names.
    pub fn new<I, S>(pairs: I, gazetteer: &Gazetteer) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut map = BTreeMap::new();
        for (variant, canonical) in pairs {
            let variant = normalize_key(variant.as_ref());
            let canonical = normalize_key(canonical.as_ref());
            if !gazetteer.contains(&canonical) {
                return Err(Error::Gazetteer(format!(
                    "normalization target {canonical:?} is not in the gazetteer"
                )));
            }
            map.insert(variant, canonical);
        }
        Ok(NormalizationTable { map })
    }

    /// Spelling fixes for [`Gazetteer::chicago`].
    pub fn chicago(gazetteer: &Gazetteer) -> Result<Self> {
        Self::from_csv(include_str!("../data/chicago_normalization.csv").as_bytes(), gazetteer)
    }

    pub fn from_csv(reader: impl std::io::Read, gazetteer: &Gazetteer) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(reader);
        let mut pairs = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Gazetteer(e.to_string()))?;
            match (record.get(0), record.get(1)) {
                (Some(v), Some(c)) => pairs.push((v.to_string(), c.to_string())),
                _ => return Err(Error::Gazetteer("expected two columns: variant,canonical".into())),
            }
        }
        Self::new(pairs, gazetteer)
    }

    pub fn load(path: &Path, gazetteer: &Gazetteer) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(file, gazetteer).map_err(|e| match e {
            Error::Gazetteer(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn get(&self, variant: &str) -> Option<&str> {
        self.map.get(variant).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Map a raw label to a canonical name: canonical names pass through, known
/// variants go through the table, everything else is `None` (unknown).
pub fn normalize_label(raw: &str, table: &NormalizationTable, gazetteer: &Gazetteer) -> Option<String> {
    let key = normalize_key(raw);
    if gazetteer.contains(&key) {
        return Some(key);
    }
    table.get(&key).map(str::to_string)
}

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::claims::Field;
use crate::error::{Error, Result};

const DEFAULT_TEMPLATE: &str = include_str!("../../data/prompt_v1.txt");
const TEXT_SLOT: &str = "{body}";
const LIST_SLOT: &str = "{zillow_list}";

/// A versioned prompt template. Template files start with a `#version <tag>`
/// line; the rest of the file, minus one trailing newline, is the template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    pub text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is well formed")
    }
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self> {
        let (first, rest) = source.split_once('\n').unwrap_or((source, ""));
        let version = first
            .strip_prefix("#version ")
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::InvalidInput("prompt template must start with `#version <tag>`".into()))?;
        let text = rest.strip_suffix('\n').unwrap_or(rest);
        if !text.contains(TEXT_SLOT) || !text.contains(LIST_SLOT) {
            return Err(Error::InvalidInput(format!(
                "prompt template needs both {TEXT_SLOT} and {LIST_SLOT} slots"
            )));
        }
        Ok(PromptTemplate {
            version: version.to_string(),
            text: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Fill both slots in a single pass, so slot-like text inside the
    /// substituted values is never expanded again.
    fn render(&self, text: &str, list: &str) -> String {
        let mut out = String::with_capacity(self.text.len() + text.len() + list.len());
        let mut rest = self.text.as_str();
        loop {
            let next = [(TEXT_SLOT, text), (LIST_SLOT, list)]
                .into_iter()
                .filter_map(|(slot, value)| rest.find(slot).map(|i| (i, slot, value)))
                .min_by_key(|(i, _, _)| *i);
            match next {
                Some((i, slot, value)) => {
                    out.push_str(&rest[..i]);
                    out.push_str(value);
                    rest = &rest[i + slot.len()..];
                }
                None => {
                    out.push_str(rest);
                    return out;
                }
            }
        }
    }
}

/// One labeling request for one listing field.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub field: Field,
    pub text: String,
    pub allowed: Vec<String>,
    pub model_id: String,
    pub temperature: f64,
}

pub fn build_prompt(request: &PromptRequest, template: &PromptTemplate) -> Result<String> {
    if request.allowed.is_empty() {
        return Err(Error::InvalidInput("allowed neighborhood list is empty".into()));
    }
    Ok(template.render(&request.text, &request.allowed.join(", ")))
}

/// Hex SHA-256 over every input that shapes the request sent to the service.
pub fn fingerprint(request: &PromptRequest, template: &PromptTemplate) -> String {
    let mut hasher = Sha256::new();
    let mut part = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    part(b"nbclaims-llm-request/1");
    part(request.field.as_str().as_bytes());
    part(request.text.as_bytes());
    part(&(request.allowed.len() as u64).to_le_bytes());
    for name in &request.allowed {
        part(name.as_bytes());
    }
    part(request.model_id.as_bytes());
    part(template.version.as_bytes());
    part(template.text.as_bytes());
    part(&request.temperature.to_bits().to_le_bytes());
    hex::encode(hasher.finalize())
}

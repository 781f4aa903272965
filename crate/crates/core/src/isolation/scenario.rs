//! Scripted page graphs that episodes replay instead of a live browser.
//!
//! A scenario is a JSON file with a `format_version` and a list of pages.
//! Each page has an id, its origin URL, the extracted text body, link
//! edges, and form field names. Pages may carry a detection tag used by the
//! detector calibration suite.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::urlguard::parse_url;

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionTag {
    /// The detector must classify this page's body as malicious.
    Malicious,
    /// The detector must not block this page.
    Benign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub text: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub url: String,
    pub body: String,
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default)]
    pub forms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_tag: Option<DetectionTag>,
}

impl Page {
    /// Origin host of the page URL; falls back to the raw string when the
    /// URL does not parse.
    pub fn origin(&self) -> String {
        parse_url(&self.url)
            .map(|p| p.host.to_string())
            .unwrap_or_else(|_| self.url.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u32,
    pub pages: Vec<Page>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("io error loading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("scenario format_version {found} unsupported (expected {SCENARIO_FORMAT_VERSION})")]
    Version { found: u32 },
}

/// Comparable form of a URL for page lookup: host, path without a trailing
/// slash, and query.
fn lookup_key(url: &str) -> (String, String, String) {
    match parse_url(url) {
        Ok(parsed) => {
            let path = parsed.path.trim_end_matches('/').to_string();
            (
                parsed.host.to_string(),
                path,
                parsed.query.unwrap_or_default(),
            )
        }
        Err(_) => (url.to_string(), String::new(), String::new()),
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        if scenario.format_version != SCENARIO_FORMAT_VERSION {
            return Err(ScenarioError::Version {
                found: scenario.format_version,
            });
        }
        Ok(scenario)
    }

    /// Find the page a navigation lands on. Matching ignores a trailing
    /// slash but is otherwise exact on host, path, and query.
    pub fn find_page(&self, url: &str) -> Option<&Page> {
        let wanted = lookup_key(url);
        self.pages.iter().find(|p| lookup_key(&p.url) == wanted)
    }
}

/// Load every page of every scenario file in a directory, paired with the
/// file stem. Deterministic order.
pub fn load_scenario_pages(
    dir: impl AsRef<Path>,
) -> Result<Vec<(String, Page)>, ScenarioError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let scenario = Scenario::load(&path)?;
        for page in scenario.pages {
            out.push((stem.clone(), page));
        }
    }
    Ok(out)
}

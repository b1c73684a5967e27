//! Prompt templates that turn class labels into text queries.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "{}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseMode {
    #[default]
    Preserve,
    CapitalizeFirst,
    Lowercase,
}

impl CaseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseMode::Preserve => "preserve",
            CaseMode::CapitalizeFirst => "capitalize_first",
            CaseMode::Lowercase => "lowercase",
        }
    }

    fn apply_first(self, s: &str) -> String {
        let mut chars = s.chars();
        let Some(first) = chars.next() else {
            return String::new();
        };
        let rest = chars.as_str();
        match self {
            CaseMode::Preserve => s.to_owned(),
            CaseMode::CapitalizeFirst => first.to_uppercase().chain(rest.chars()).collect(),
            CaseMode::Lowercase => first.to_lowercase().chain(rest.chars()).collect(),
        }
    }
}

impl fmt::Display for CaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preserve" => Ok(CaseMode::Preserve),
            "capitalize_first" | "capitalize-first" => Ok(CaseMode::CapitalizeFirst),
            "lowercase" => Ok(CaseMode::Lowercase),
            other => Err(Error::Contract(format!("unknown case mode {other:?}"))),
        }
    }
}

/// A pattern with exactly one `{}` placeholder plus a case rule for the
/// first character of the rendered string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate", into = "RawTemplate")]
pub struct PromptTemplate {
    pattern: String,
    case_mode: CaseMode,
}

#[derive(Serialize, Deserialize)]
struct RawTemplate {
    pattern: String,
    #[serde(default)]
    case_mode: CaseMode,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = Error;

    fn try_from(raw: RawTemplate) -> Result<Self> {
        PromptTemplate::new(raw.pattern, raw.case_mode)
    }
}

impl From<PromptTemplate> for RawTemplate {
    fn from(t: PromptTemplate) -> Self {
        RawTemplate {
            pattern: t.pattern,
            case_mode: t.case_mode,
        }
    }
}

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>, case_mode: CaseMode) -> Result<Self> {
        let pattern = pattern.into();
        let n = pattern.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::InvalidTemplate {
                reason: format!("expected exactly one {PLACEHOLDER} placeholder, found {n}"),
                pattern,
            });
        }
        Ok(Self { pattern, case_mode })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn case_mode(&self) -> CaseMode {
        self.case_mode
    }

    pub fn render(&self, label: &str) -> String {
        self.case_mode
            .apply_first(&self.pattern.replacen(PLACEHOLDER, label, 1))
    }

    /// Short human-readable key, e.g. `This is {}` or `{} [capitalize_first]`.
    pub fn display_key(&self) -> String {
        match self.case_mode {
            CaseMode::Preserve => self.pattern.clone(),
            mode => format!("{} [{mode}]", self.pattern),
        }
    }

    /// The five prompt formulations compared on ESC-50, in their published
    /// order. The bare-label prompt capitalizes its first letter.
    pub fn standard_set() -> Vec<PromptTemplate> {
        [
            ("{}", CaseMode::CapitalizeFirst),
            ("I can hear {}", CaseMode::Preserve),
            ("This is an audio of {}", CaseMode::Preserve),
            ("This is {}", CaseMode::Preserve),
            ("This is a sound of {}", CaseMode::Preserve),
        ]
        .into_iter()
        .map(|(p, c)| PromptTemplate::new(p, c).expect("static templates are valid"))
        .collect()
    }
}

impl FromStr for PromptTemplate {
    type Err = Error;

    /// Parses `pattern` or `case_mode:pattern`.
    fn from_str(s: &str) -> Result<Self> {
        for mode in [
            CaseMode::Preserve,
            CaseMode::CapitalizeFirst,
            CaseMode::Lowercase,
        ] {
            if let Some(rest) = s.strip_prefix(mode.as_str()).and_then(|r| r.strip_prefix(':')) {
                return PromptTemplate::new(rest, mode);
            }
        }
        PromptTemplate::new(s, CaseMode::Preserve)
    }
}

pub fn render_prompts(labels: &[impl AsRef<str>], template: &PromptTemplate) -> Result<Vec<String>> {
    if labels.is_empty() {
        return Err(Error::Contract("render_prompts needs at least one label".into()));
    }
    Ok(labels.iter().map(|l| template.render(l.as_ref())).collect())
}

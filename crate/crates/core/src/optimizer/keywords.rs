use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CLASSES: [&str; 5] = ["quality", "style", "background", "light", "aesthetics"];

/// Most keywords taken from one class.
pub const PER_CLASS_LIMIT: usize = 2;

/// Longest keyword, in words, the model may create.
pub const MAX_KEYWORD_WORDS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeywordTableError {
    #[error("cannot read keyword table {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid keyword table at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("keyword table must have exactly the classes {expected:?}, found {found:?}")]
    Classes { expected: Vec<String>, found: Vec<String> },
    #[error("class `{0}` has no keywords")]
    EmptyClass(String),
}

/// Example keywords for each class, in the order classes are offered to the
/// model and appended to the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, Vec<String>>", into = "IndexMap<String, Vec<String>>")]
pub struct KeywordClassTable {
    classes: IndexMap<String, Vec<String>>,
}

impl Default for KeywordClassTable {
    fn default() -> Self {
        let seed: [(&str, &[&str]); 5] = [
            (
                "quality",
                &["best quality", "4k", "8k", "highres", "masterpiece", "fantasy art", "highly detailed"],
            ),
            (
                "style",
                &[
                    "photo-realistic",
                    "oil painting",
                    "portraits",
                    "digital art",
                    "landscape",
                    "impressionist",
                    "anime",
                    "concept artists",
                    "cyberpunk",
                ],
            ),
            (
                "background",
                &["blue sky", "crowded road", "beautifully decorated wall", "high mountain"],
            ),
            (
                "light",
                &["studio lighting", "soft lighting", "sun lighting", "diffuse lighting", "cold lighting"],
            ),
            (
                "aesthetics",
                &["beautiful", "elegant", "stunning", "lovely", "majestic", "charming", "graceful"],
            ),
        ];
        let classes = seed
            .into_iter()
            .map(|(c, kws)| (c.to_string(), kws.iter().map(|k| k.to_string()).collect()))
            .collect();
        Self { classes }
    }
}

impl TryFrom<IndexMap<String, Vec<String>>> for KeywordClassTable {
    type Error = KeywordTableError;

    fn try_from(classes: IndexMap<String, Vec<String>>) -> Result<Self, Self::Error> {
        let mut found: Vec<String> = classes.keys().cloned().collect();
        let mut expected: Vec<String> = CLASSES.iter().map(|c| c.to_string()).collect();
        found.sort();
        expected.sort();
        if found != expected {
            return Err(KeywordTableError::Classes { expected, found });
        }
        if let Some((name, _)) = classes.iter().find(|(_, kws)| kws.iter().all(|k| k.trim().is_empty())) {
            return Err(KeywordTableError::EmptyClass(name.clone()));
        }
        Ok(Self { classes })
    }
}

impl From<KeywordClassTable> for IndexMap<String, Vec<String>> {
    fn from(t: KeywordClassTable) -> Self {
        t.classes
    }
}

impl KeywordClassTable {
    pub fn from_json(text: &str) -> Result<Self, KeywordTableError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| KeywordTableError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, KeywordTableError> {
        let text = fs::read_to_string(path).map_err(|e| KeywordTableError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.classes.iter().map(|(c, k)| (c.as_str(), k.as_slice()))
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.get_index_of(class)
    }

    /// The class listing `keyword` as an example, if any.
    pub fn class_of(&self, keyword: &str) -> Option<&str> {
        self.classes
            .iter()
            .find(|(_, kws)| kws.iter().any(|k| k.eq_ignore_ascii_case(keyword)))
            .map(|(c, _)| c.as_str())
    }

    /// Upper bound on the number of keywords one decoration can add.
    pub fn max_keywords(&self) -> usize {
        self.classes.len() * PER_CLASS_LIMIT
    }

    /// One `class: kw, kw, ...` line per class, for the decoration preamble.
    pub fn render(&self) -> String {
        self.classes
            .iter()
            .map(|(c, kws)| format!("{c}: {}", kws.join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A keyword the model chose, with the class it was filed under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordChoice {
    pub class: String,
    pub keyword: String,
}

/// Parses a decoration reply: one line of comma-separated items, each either
/// `class: keyword` or a bare keyword. A bare keyword belongs to the class it
/// is listed under in the table, or else to the most recent label. `none`
/// (or an empty reply) selects nothing.
pub fn parse_keyword_line(raw: &str, table: &KeywordClassTable) -> Result<Vec<KeywordChoice>, String> {
    let lines: Vec<&str> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .collect();
    let line = match lines.as_slice() {
        [] => return Ok(Vec::new()),
        [one] => *one,
        _ => return Err(format!("expected one line, got {}", lines.len())),
    };
    if line.trim_end_matches('.').eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut current: Option<String> = None;
    let mut out = Vec::new();
    for item in line.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let keyword = match item.split_once(':') {
            Some((class, kw)) => {
                let class = class.trim().to_ascii_lowercase();
                if table.class_index(&class).is_none() {
                    return Err(format!("unknown keyword class `{class}`"));
                }
                current = Some(class);
                kw.trim()
            }
            None => {
                if let Some(class) = table.class_of(item) {
                    current = Some(class.to_string());
                }
                item
            }
        };
        let Some(class) = current.clone() else {
            return Err(format!("keyword `{keyword}` has no class"));
        };
        validate_keyword(keyword)?;
        out.push(KeywordChoice {
            class,
            keyword: keyword.to_string(),
        });
    }
    Ok(out)
}

fn validate_keyword(keyword: &str) -> Result<(), String> {
    if keyword.is_empty() {
        return Err("empty keyword".into());
    }
    if !keyword.chars().all(|c| c.is_alphanumeric() || c == ' ' || c == '-') {
        return Err(format!("keyword `{keyword}` has punctuation"));
    }
    if keyword.split_whitespace().count() > MAX_KEYWORD_WORDS {
        return Err(format!("keyword `{keyword}` is longer than {MAX_KEYWORD_WORDS} words"));
    }
    Ok(())
}

/// Orders choices by class, keeps at most [`PER_CLASS_LIMIT`] per class, and
/// drops repeats and keywords the prompt already contains.
pub fn select_keywords(prompt: &str, choices: &[KeywordChoice], table: &KeywordClassTable) -> Vec<String> {
    let lowered = prompt.to_lowercase();
    let mut sorted: Vec<&KeywordChoice> = choices.iter().collect();
    sorted.sort_by_key(|c| table.class_index(&c.class).unwrap_or(usize::MAX));

    let mut taken: Vec<String> = Vec::new();
    let mut per_class = vec![0usize; CLASSES.len()];
    for choice in sorted {
        let Some(ci) = table.class_index(&choice.class) else {
            continue;
        };
        let kw = choice.keyword.to_lowercase();
        if per_class[ci] >= PER_CLASS_LIMIT
            || lowered.contains(&kw)
            || taken.iter().any(|t| t.to_lowercase() == kw)
        {
            continue;
        }
        per_class[ci] += 1;
        taken.push(choice.keyword.clone());
    }
    taken
}

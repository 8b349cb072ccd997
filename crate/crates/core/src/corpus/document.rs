use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CorpusError;

/// One arXiv record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub article_id: String,
    /// Explicit title, else the first section name, else empty.
    pub title: String,
    #[serde(rename = "abstract_text")]
    pub abstract_sentences: Vec<String>,
    #[serde(rename = "article_text")]
    pub body_sentences: Vec<String>,
    pub section_names: Vec<String>,
    pub sections: Vec<Vec<String>>,
}

/// Removes the `<S>` / `</S>` sentence markers used in the abstracts of the
/// public release and trims the result.
pub fn strip_sentence_tags(s: &str) -> String {
    s.replace("<S>", " ")
        .replace("</S>", " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn join(sentences: &[String]) -> String {
    sentences
        .iter()
        .map(|s| strip_sentence_tags(s))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Document {
    pub fn abstract_text(&self) -> String {
        join(&self.abstract_sentences)
    }

    pub fn body_text(&self) -> String {
        join(&self.body_sentences)
    }

    /// Serializes as one JSON line. The title is always written.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("document serializes")
    }
}

fn string_list(obj: &serde_json::Map<String, Value>, key: &'static str, line: usize) -> Result<Vec<String>, CorpusError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| CorpusError::WrongType { line, key }),
    }
}

/// Parses one JSON-lines record. `line` is 1-based and only used in errors.
pub fn parse_record(raw: &[u8], line: usize) -> Result<Document, CorpusError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| CorpusError::Parse {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(CorpusError::Parse {
            line,
            message: "record is not a JSON object".into(),
        });
    };
    for key in ["article_id", "abstract_text", "article_text"] {
        if !obj.contains_key(key) {
            return Err(CorpusError::MissingKey { line, key });
        }
    }
    let article_id = match &obj["article_id"] {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err(CorpusError::WrongType { line, key: "article_id" }),
    };
    if article_id.is_empty() {
        return Err(CorpusError::EmptyId { line });
    }
    let abstract_sentences = string_list(&obj, "abstract_text", line)?;
    let body_sentences = string_list(&obj, "article_text", line)?;
    let section_names = string_list(&obj, "section_names", line)?;
    let sections: Vec<Vec<String>> = match obj.get("sections") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| CorpusError::WrongType { line, key: "sections" })?,
    };
    let title = match obj.get("title") {
        Some(Value::String(t)) => t.clone(),
        None | Some(Value::Null) => section_names.first().cloned().unwrap_or_default(),
        Some(_) => return Err(CorpusError::WrongType { line, key: "title" }),
    };
    Ok(Document {
        article_id,
        title,
        abstract_sentences,
        body_sentences,
        section_names,
        sections,
    })
}

//! Lexical code features: length, reserved-word occurrences and average TF-IDF.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::snippet::{CodeSnippet, Language};
use crate::error::{Error, Result};

pub const PYTHON_RESERVED: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

pub const JAVA_RESERVED: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
    "true",
    "false",
    "null",
];

/// Reserved words for `lang`; `Other` falls back to Python.
pub fn reserved_words(lang: Language) -> HashSet<&'static str> {
    match lang {
        Language::Java => JAVA_RESERVED.iter().copied().collect(),
        Language::Python | Language::Other => PYTHON_RESERVED.iter().copied().collect(),
    }
}

/// Splits code into string tokens.
pub trait TokenSplitter {
    fn split(&self, text: &str) -> Vec<String>;
}

/// Identifier/number/string-literal/punctuation lexer. Whitespace is dropped.
#[derive(Clone, Copy, Debug, Default)]
pub struct CodeLexer;

impl TokenSplitter for CodeLexer {
    fn split(&self, text: &str) -> Vec<String> {
        lex(text)
    }
}

pub fn lex(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[s..i].iter().collect());
        } else if c.is_ascii_digit() {
            let s = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                i += 1;
            }
            out.push(chars[s..i].iter().collect());
        } else if c == '"' || c == '\'' {
            let s = i;
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(chars.len());
            out.push(chars[s..i].iter().collect());
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

/// Smoothed TF-IDF: `tf(t,d) · (ln((1+N)/(1+df(t))) + 1)`, where `tf` is the
/// relative frequency of `t` in `d`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TfIdfModel {
    docs: usize,
    doc_freq: BTreeMap<String, usize>,
    fitted: bool,
}

impl TfIdfModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit<S: AsRef<str>>(&mut self, docs: &[Vec<S>]) {
        self.docs = docs.len();
        self.doc_freq.clear();
        for d in docs {
            let uniq: HashSet<&str> = d.iter().map(AsRef::as_ref).collect();
            for t in uniq {
                *self.doc_freq.entry(t.to_string()).or_default() += 1;
            }
        }
        self.fitted = true;
    }

    pub fn fitted(splitter: &dyn TokenSplitter, corpus: &[CodeSnippet]) -> Self {
        let docs: Vec<Vec<String>> = corpus.iter().map(|s| splitter.split(&s.code)).collect();
        let mut m = Self::new();
        m.fit(&docs);
        m
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        let df = *self.doc_freq.get(token)?;
        Some(((1.0 + self.docs as f64) / (1.0 + df as f64)).ln() + 1.0)
    }

    /// TF-IDF of every in-vocabulary token of `doc`.
    pub fn weights<S: AsRef<str>>(&self, doc: &[S]) -> HashMap<String, f64> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
        let len = doc.len().max(1) as f64;
        counts.into_iter().filter_map(|(t, c)| self.idf(t).map(|idf| (t.to_string(), c as f64 / len * idf))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeFeatures {
    pub code_length: usize,
    pub reserved_word_count: usize,
    pub avg_tfidf: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    CodeLength,
    ReservedWords,
    AvgTfidf,
}

impl FeatureName {
    pub const ALL: [FeatureName; 3] = [FeatureName::CodeLength, FeatureName::ReservedWords, FeatureName::AvgTfidf];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::CodeLength => "code_length",
            FeatureName::ReservedWords => "reserved_words",
            FeatureName::AvgTfidf => "avg_tfidf",
        }
    }
}

impl CodeFeatures {
    pub fn get(&self, name: FeatureName) -> f64 {
        match name {
            FeatureName::CodeLength => self.code_length as f64,
            FeatureName::ReservedWords => self.reserved_word_count as f64,
            FeatureName::AvgTfidf => self.avg_tfidf,
        }
    }
}

/// `reserved_word_count` counts occurrences; `avg_tfidf` averages over the
/// distinct tokens known to the model (0 when there are none).
pub fn extract_features(
    snippet: &CodeSnippet,
    splitter: &dyn TokenSplitter,
    reserved: &HashSet<&str>,
    tfidf: &TfIdfModel,
) -> Result<CodeFeatures> {
    if !tfidf.is_fitted() {
        return Err(Error::State("TF-IDF model has not been fitted".into()));
    }
    let tokens = splitter.split(&snippet.code);
    let reserved_word_count = tokens.iter().filter(|t| reserved.contains(t.as_str())).count();
    let weights = tfidf.weights(&tokens);
    let avg_tfidf = if weights.is_empty() {
        0.0
    } else {
        // sorted so the float sum does not depend on hash order
        let mut vals: Vec<f64> = weights.values().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    Ok(CodeFeatures { code_length: tokens.len(), reserved_word_count, avg_tfidf })
}

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Python,
    Java,
    Other,
}

impl Language {
    fn parse(s: Option<&str>) -> Language {
        match s.map(str::to_ascii_lowercase).as_deref() {
            Some("python") | Some("py") => Language::Python,
            Some("java") => Language::Java,
            _ => Language::Other,
        }
    }
}

/// Whether a snippet was (or is claimed to be) in the target's training data.
/// Serialized as `1` / `0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MembershipLabel {
    Nonmember,
    Member,
}

impl MembershipLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            MembershipLabel::Member => 1,
            MembershipLabel::Nonmember => 0,
        }
    }

    pub fn is_member(self) -> bool {
        self == MembershipLabel::Member
    }

    pub fn from_bool(member: bool) -> Self {
        if member {
            MembershipLabel::Member
        } else {
            MembershipLabel::Nonmember
        }
    }
}

impl Serialize for MembershipLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for MembershipLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(d)? {
            1 => Ok(MembershipLabel::Member),
            0 => Ok(MembershipLabel::Nonmember),
            other => Err(serde::de::Error::custom(format!("membership label must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub id: String,
    pub code: String,
    pub nl: Option<String>,
    pub language: Language,
    pub source: String,
    /// Role of the corpus the snippet was loaded from.
    pub role: MembershipLabel,
}

impl CodeSnippet {
    pub fn new(
        id: impl Into<String>,
        code: impl Into<String>,
        nl: Option<String>,
        language: Language,
        source: impl Into<String>,
        role: MembershipLabel,
    ) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::Input("code text is empty".into()));
        }
        let nl = match nl {
            Some(n) if n.trim().is_empty() => return Err(Error::Input("nl text is blank".into())),
            other => other,
        };
        Ok(Self { id: id.into(), code, nl, language, source: source.into(), role })
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    code: Option<String>,
    nl: Option<String>,
    language: Option<String>,
    source: Option<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    code: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    nl: Option<&'a str>,
    language: Language,
    source: &'a str,
}

/// Reads a JSONL corpus; every record gets the same `role`.
///
/// Records without an `id` get `<file-stem>:<line>`. Blank lines are skipped.
pub fn load_corpus(path: &Path, role: MembershipLabel) -> Result<Vec<CodeSnippet>> {
    let file = File::open(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
    let reader = BufReader::new(file);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: lineno, message };
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let code = match rec.code {
            Some(c) if !c.is_empty() => c,
            _ => return Err(parse_err("record has no code text".into())),
        };
        let nl = rec.nl.filter(|n| !n.trim().is_empty());
        let id = rec.id.unwrap_or_else(|| format!("{stem}:{lineno}"));
        let source = rec.source.unwrap_or_else(|| stem.clone());
        out.push(CodeSnippet { id, code, nl, language: Language::parse(rec.language.as_deref()), source, role });
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    let dups = duplicate_ids(&out);
    if !dups.is_empty() {
        return Err(Error::DuplicateIds(dups));
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, snippets: &[CodeSnippet]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for s in snippets {
        let rec = OutRecord { id: &s.id, code: &s.code, nl: s.nl.as_deref(), language: s.language, source: &s.source };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Ids occurring more than once, sorted.
pub fn duplicate_ids(snippets: &[CodeSnippet]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in snippets {
        *counts.entry(&s.id).or_default() += 1;
    }
    counts.into_iter().filter(|(_, c)| *c > 1).map(|(id, _)| id.to_string()).collect()
}

pub(crate) fn id_set(snippets: &[CodeSnippet]) -> HashSet<&str> {
    snippets.iter().map(|s| s.id.as_str()).collect()
}

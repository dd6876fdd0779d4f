use serde::{Deserialize, Serialize};

use super::features::lex;
use super::snippet::CodeSnippet;

pub const DEFAULT_JACCARD_CUTOFF: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub member_id: String,
    pub nonmember_id: String,
    pub same_function_name: bool,
    pub jaccard: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub cutoff: f64,
    pub pairs: Vec<OverlapPair>,
}

impl OverlapReport {
    pub fn is_clean(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Name of the first function defined in `code`: the identifier after `def`,
/// otherwise the first non-keyword identifier followed by `(` and preceded by
/// another identifier (a Java-style return type).
pub fn function_name(code: &str) -> Option<String> {
    let toks = lex(code);
    if let Some(i) = toks.iter().position(|t| t == "def") {
        return toks.get(i + 1).filter(|t| is_ident(t)).cloned();
    }
    const NOT_NAMES: &[&str] = &["if", "for", "while", "switch", "catch", "return", "new", "synchronized"];
    toks.windows(3)
        .find(|w| is_ident(&w[0]) && is_ident(&w[1]) && w[2] == "(" && !NOT_NAMES.contains(&w[1].as_str()))
        .map(|w| w[1].clone())
}

fn is_ident(t: &str) -> bool {
    t.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
}

fn token_set(code: &str) -> Vec<String> {
    let mut v = lex(code);
    v.sort();
    v.dedup();
    v
}

/// |A ∩ B| / |A ∪ B| over sorted, deduplicated token lists.
pub fn jaccard_sorted(a: &[String], b: &[String]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Reports member/nonmember pairs sharing a function name exactly or whose
/// token-set Jaccard similarity exceeds `cutoff`.
pub fn check_no_overlap(members: &[CodeSnippet], nonmembers: &[CodeSnippet], cutoff: f64) -> OverlapReport {
    let prep = |s: &CodeSnippet| (token_set(&s.code), function_name(&s.code));
    let left: Vec<_> = members.iter().map(prep).collect();
    let right: Vec<_> = nonmembers.iter().map(prep).collect();
    let mut pairs = Vec::new();
    for (m, (mt, mname)) in members.iter().zip(&left) {
        for (n, (nt, nname)) in nonmembers.iter().zip(&right) {
            let same_name = mname.is_some() && mname == nname;
            let jaccard = jaccard_sorted(mt, nt);
            if same_name || jaccard > cutoff {
                pairs.push(OverlapPair {
                    member_id: m.id.clone(),
                    nonmember_id: n.id.clone(),
                    same_function_name: same_name,
                    jaccard,
                });
            }
        }
    }
    OverlapReport { cutoff, pairs }
}

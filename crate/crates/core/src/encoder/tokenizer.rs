//! Case-sensitive byte-level BPE.
//!
//! Ids `0..5` are the special tokens, `5..261` the raw bytes, and every merge
//! learned during training appends one id after that. Text is first split
//! into chunks (identifier runs, digit runs, single punctuation characters,
//! each optionally carrying one leading space, and whitespace runs); merges
//! never cross chunk boundaries. Decoding is lossless.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::CodeSnippet;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const EOS: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIAL: u32 = 5;
pub const FIRST_LEARNED: u32 = NUM_SPECIAL + 256;
const SPECIAL_NAMES: [&str; 5] = ["<pad>", "<cls>", "<sep>", "<eos>", "<mask>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    /// Byte string of every non-special id, indexed by `id - NUM_SPECIAL`.
    pieces: Vec<Vec<u8>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Digit,
    Space,
    Punct,
}

fn class(c: char) -> Class {
    if c.is_alphabetic() || c == '_' {
        Class::Word
    } else if c.is_numeric() {
        Class::Digit
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Punct
    }
}

/// Splits text into merge-isolated chunks; concatenating them yields `text`.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let (_, c) = chars[i];
        let lead_space = c == ' ' && i + 1 < chars.len() && class(chars[i + 1].1) != Class::Space;
        let body = if lead_space { i + 1 } else { i };
        let k = class(chars[body].1);
        let mut j = body + 1;
        match k {
            Class::Word | Class::Digit | Class::Space => {
                while j < chars.len() && class(chars[j].1) == k {
                    j += 1;
                }
            }
            Class::Punct => {}
        }
        let end = chars.get(j).map_or(text.len(), |(b, _)| *b);
        out.push(&text[start..end]);
        i = j;
    }
    out
}

impl Tokenizer {
    /// A tokenizer with no merges (pure byte level).
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new())
    }

    pub fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let mut p = pieces[(a - NUM_SPECIAL) as usize].clone();
            p.extend_from_slice(&pieces[(b - NUM_SPECIAL) as usize]);
            pieces.push(p);
            ranks.insert((a, b), rank as u32);
        }
        Self { merges, ranks, pieces }
    }

    /// Learns merges until `vocab_size` ids exist or no adjacent pair remains.
    /// Ties between equally frequent pairs go to the smallest `(left, right)`.
    pub fn train(corpus: &[CodeSnippet], vocab_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("tokenizer corpus is empty".into()));
        }
        if vocab_size < FIRST_LEARNED as usize {
            return Err(Error::Config(format!("vocab_size {vocab_size} is below the {FIRST_LEARNED} base ids")));
        }
        let mut freq: BTreeMap<&str, i64> = BTreeMap::new();
        for s in corpus {
            for text in std::iter::once(s.code.as_str()).chain(s.nl.as_deref()) {
                for chunk in pre_tokenize(text) {
                    *freq.entry(chunk).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(Vec<u32>, i64)> =
            freq.into_iter().map(|(w, f)| (w.bytes().map(|b| b as u32 + NUM_SPECIAL).collect(), f)).collect();
        let mut merges = Vec::new();
        let mut next_id = FIRST_LEARNED;
        while (next_id as usize) < vocab_size {
            let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
            for (w, f) in &words {
                for p in w.windows(2) {
                    *counts.entry((p[0], p[1])).or_default() += f;
                }
            }
            let Some((&best, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))) else {
                break;
            };
            for (w, _) in &mut words {
                if w.len() < 2 {
                    continue;
                }
                let mut out = Vec::with_capacity(w.len());
                let mut i = 0;
                while i < w.len() {
                    if i + 1 < w.len() && (w[i], w[i + 1]) == best {
                        out.push(next_id);
                        i += 2;
                    } else {
                        out.push(w[i]);
                        i += 1;
                    }
                }
                *w = out;
            }
            merges.push(best);
            next_id += 1;
        }
        Ok(Self::from_merges(merges))
    }

    /// Total number of ids including special tokens.
    pub fn vocab_len(&self) -> usize {
        NUM_SPECIAL as usize + self.pieces.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        id.checked_sub(NUM_SPECIAL).and_then(|i| self.pieces.get(i as usize)).map(Vec::as_slice)
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.pieces.iter().position(|p| p == bytes).map(|i| i as u32 + NUM_SPECIAL)
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>) {
        let mut sym: Vec<u32> = chunk.bytes().map(|b| b as u32 + NUM_SPECIAL).collect();
        loop {
            let best =
                sym.windows(2).enumerate().filter_map(|(i, p)| self.ranks.get(&(p[0], p[1])).map(|r| (*r, i))).min();
            let Some((rank, _)) = best else { break };
            let id = FIRST_LEARNED + rank;
            let pair = self.merges[rank as usize];
            let mut merged = Vec::with_capacity(sym.len());
            let mut i = 0;
            while i < sym.len() {
                if i + 1 < sym.len() && (sym[i], sym[i + 1]) == pair {
                    merged.push(id);
                    i += 2;
                } else {
                    merged.push(sym[i]);
                    i += 1;
                }
            }
            sym = merged;
        }
        out.extend(sym);
    }

    /// Token ids of `text` without special tokens.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pre_tokenize(text) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    /// Inverse of [`Tokenizer::tokenize`]; special tokens are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids.iter().filter_map(|&id| self.piece(id)).flatten().copied().collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// Writes `vocab.txt` (id, escaped piece) and `merges.txt` (left, right ids).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut vocab = String::new();
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            let _ = writeln!(vocab, "{i}\t{name}");
        }
        for (i, p) in self.pieces.iter().enumerate() {
            let _ = writeln!(vocab, "{}\t{}", i as u32 + NUM_SPECIAL, escape(p));
        }
        std::fs::write(dir.join("vocab.txt"), vocab)?;
        let mut merges = String::new();
        for (a, b) in &self.merges {
            let _ = writeln!(merges, "{a} {b}");
        }
        std::fs::write(dir.join("merges.txt"), merges)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("merges.txt");
        let text = std::fs::read_to_string(&path)?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |m: &str| Error::Parse { path: path.clone(), line: i + 1, message: m.to_string() };
            let mut it = line.split_whitespace().map(str::parse::<u32>);
            let (Some(Ok(a)), Some(Ok(b)), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad("expected two token ids"));
            };
            let limit = FIRST_LEARNED + merges.len() as u32;
            if a < NUM_SPECIAL || b < NUM_SPECIAL || a >= limit || b >= limit {
                return Err(bad("merge refers to an unknown id"));
            }
            merges.push((a, b));
        }
        let tok = Self::from_merges(merges);
        let vocab_path = dir.join("vocab.txt");
        if vocab_path.exists() {
            let lines = std::fs::read_to_string(&vocab_path)?.lines().count();
            if lines != tok.vocab_len() {
                return Err(Error::Checkpoint(format!(
                    "vocab.txt lists {lines} ids but merges.txt implies {}",
                    tok.vocab_len()
                )));
            }
        }
        Ok(tok)
    }
}

fn escape(bytes: &[u8]) -> String {
    let mut s = String::new();
    for &b in bytes {
        if b.is_ascii_graphic() && b != b'\\' {
            s.push(b as char);
        } else {
            let _ = write!(s, "\\x{b:02x}");
        }
    }
    s
}

/// Builds the model input: `[CLS] code [EOS]`, or `[CLS] nl [SEP] code [EOS]`
/// when a description is given. Over-long inputs lose description tokens
/// first, then trailing code tokens; the result never exceeds `max_positions`.
pub fn encode_input(tok: &Tokenizer, code: &str, nl: Option<&str>, max_positions: usize) -> Vec<u32> {
    let code_ids = tok.tokenize(code);
    let nl_ids = nl.map(|n| tok.tokenize(n));
    let specials = if nl_ids.is_some() { 3 } else { 2 };
    let budget = max_positions.saturating_sub(specials);
    let code_keep = code_ids.len().min(budget);
    let mut out = Vec::with_capacity(max_positions);
    out.push(CLS);
    if let Some(n) = &nl_ids {
        let nl_keep = n.len().min(budget - code_keep);
        out.extend_from_slice(&n[..nl_keep]);
        out.push(SEP);
    }
    out.extend_from_slice(&code_ids[..code_keep]);
    out.push(EOS);
    out
}

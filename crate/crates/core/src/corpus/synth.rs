//! Synthetic Python-like function corpora with docstring-style descriptions.
//!
//! Used to build desk-scale member/nonmember corpora when no real dataset is
//! at hand. Every snippet combines randomly drawn identifiers, literals and
//! statement templates, so individual snippets are distinctive enough to be
//! memorised by a small encoder.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::snippet::{CodeSnippet, Language, MembershipLabel};
use crate::seeds::derive_seed;

const VERBS: &[&str] = &[
    "get",
    "set",
    "load",
    "save",
    "parse",
    "build",
    "compute",
    "update",
    "find",
    "check",
    "read",
    "write",
    "merge",
    "split",
    "create",
    "remove",
    "fetch",
    "send",
    "sort",
    "filter",
    "count",
    "convert",
    "format",
    "validate",
    "resolve",
    "render",
    "encode",
    "decode",
    "scan",
    "apply",
    "collect",
    "normalize",
    "register",
    "flush",
    "open",
    "close",
    "reset",
    "init",
    "clean",
    "copy",
    "extract",
    "insert",
    "lookup",
    "match",
    "group",
    "index",
    "map",
    "patch",
    "pack",
    "unpack",
];

const NOUNS: &[&str] = &[
    "user", "file", "path", "node", "item", "value", "key", "record", "table", "row", "column", "config", "token",
    "buffer", "stream", "request", "response", "header", "payload", "event", "message", "queue", "cache", "index",
    "graph", "edge", "vertex", "matrix", "vector", "image", "pixel", "frame", "layer", "model", "batch", "sample",
    "label", "score", "weight", "param", "field", "entry", "list", "dict", "name", "url", "host", "port", "socket",
    "session", "account", "order", "price", "amount", "total", "count", "limit", "offset", "page", "query", "result",
    "error", "state", "status", "job", "task", "worker", "thread", "lock", "timer", "date", "time", "zone", "color",
    "shape", "point", "line", "text", "word", "char", "chunk", "block", "segment", "region", "tree", "leaf", "root",
    "parent", "child", "module", "package", "version", "schema", "plugin", "handler", "client", "server",
];

const METHODS: &[&str] = &[
    "get",
    "pop",
    "append",
    "extend",
    "split",
    "strip",
    "lower",
    "upper",
    "join",
    "items",
    "keys",
    "values",
    "update",
    "copy",
    "read",
    "write",
    "encode",
    "decode",
    "format",
    "replace",
    "find",
    "count",
    "sort",
    "index",
    "insert",
    "remove",
    "clear",
    "setdefault",
    "startswith",
    "endswith",
];

const ADJECTIVES: &[&str] = &[
    "new", "old", "raw", "clean", "valid", "empty", "full", "active", "pending", "remote", "local", "global",
    "default", "current", "next", "last", "first", "max", "min", "total", "partial", "unique", "sorted", "cached",
    "temp", "final", "base", "main", "extra", "missing",
];

/// Generation knobs for one corpus source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub source: String,
    /// Fraction window `[lo, hi)` of every word pool this source draws from.
    pub vocab_window: (f64, f64),
    /// Statement count range (inclusive).
    pub statements: (usize, usize),
    /// Probability that a snippet carries a description.
    pub nl_probability: f64,
}

impl SynthProfile {
    pub fn new(source: impl Into<String>) -> Self {
        Self { source: source.into(), vocab_window: (0.0, 1.0), statements: (2, 5), nl_probability: 1.0 }
    }

    pub fn with_window(mut self, lo: f64, hi: f64) -> Self {
        self.vocab_window = (lo, hi);
        self
    }
}

struct Pools<'a> {
    verbs: &'a [&'static str],
    nouns: &'a [&'static str],
    methods: &'a [&'static str],
    adjectives: &'a [&'static str],
}

fn window<'a>(pool: &'a [&'static str], (lo, hi): (f64, f64)) -> &'a [&'static str] {
    let n = pool.len();
    let a = ((lo * n as f64).floor() as usize).min(n - 1);
    let b = ((hi * n as f64).ceil() as usize).clamp(a + 1, n);
    &pool[a..b]
}

struct Gen<'a, R: Rng> {
    rng: R,
    pools: Pools<'a>,
}

impl<R: Rng> Gen<'_, R> {
    fn pick(&mut self, pool: &[&'static str]) -> &'static str {
        pool.choose(&mut self.rng).copied().unwrap_or("x")
    }
    fn verb(&mut self) -> &'static str {
        let p = self.pools.verbs;
        self.pick(p)
    }
    fn noun(&mut self) -> &'static str {
        let p = self.pools.nouns;
        self.pick(p)
    }
    fn method(&mut self) -> &'static str {
        let p = self.pools.methods;
        self.pick(p)
    }
    fn adjective(&mut self) -> &'static str {
        let p = self.pools.adjectives;
        self.pick(p)
    }
    fn int(&mut self) -> u32 {
        match self.rng.gen_range(0..3) {
            0 => self.rng.gen_range(0..10),
            1 => self.rng.gen_range(10..100),
            _ => self.rng.gen_range(100..5000),
        }
    }
    fn class_name(&mut self) -> String {
        format!("{}{}", capitalize(self.adjective()), capitalize(self.noun()))
    }
    fn constant(&mut self) -> String {
        format!("{}_{}", self.adjective().to_uppercase(), self.noun().to_uppercase())
    }
    fn var(&mut self) -> String {
        if self.rng.gen_bool(0.5) {
            self.noun().to_string()
        } else {
            format!("{}_{}", self.adjective(), self.noun())
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn statement<R: Rng>(g: &mut Gen<'_, R>, params: &[String], locals: &mut Vec<String>) -> String {
    let p = params.choose(&mut g.rng).cloned().unwrap_or_else(|| "self".into());
    let v = g.var();
    let line = match g.rng.gen_range(0..10) {
        0 => format!("{v} = {p}.{}({})", g.method(), g.int()),
        1 => {
            let c = g.constant();
            format!("if {p} > {}:\n        return {c}", g.int())
        }
        2 => {
            let i = ["i", "j", "k", "idx", "n"].choose(&mut g.rng).copied().unwrap_or("i");
            let n = g.int();
            let m = g.int();
            format!("for {i} in range({n}):\n        {v} = {p}[{i}] * {m}")
        }
        3 => {
            let c = g.class_name();
            let (w1, w2) = (g.noun(), g.adjective());
            format!("{v} = {c}({p}, \"{w1} {w2}\")")
        }
        4 => {
            let c = g.class_name();
            let (w1, w2) = (g.adjective(), g.noun());
            format!("if not {p}:\n        raise {c}Error(\"{w1} {w2}\")")
        }
        5 => {
            let f = ["f", "fh", "handle", "fp"].choose(&mut g.rng).copied().unwrap_or("f");
            format!("with open({p}) as {f}:\n        {v} = {f}.{}()", g.method())
        }
        6 => {
            let c = g.constant();
            let m = g.method();
            format!("try:\n        {v} = {p}.{m}({c})\n    except KeyError:\n        {v} = None")
        }
        7 => format!("{v} = [{} for {} in {p} if {}]", g.noun(), "x", "x"),
        8 => {
            let n = g.int();
            format!("while {p} < {n}:\n        {p} += {}", g.int())
        }
        _ => {
            let (a, b) = (g.noun(), g.int());
            format!("{v} = {{\"{a}\": {p}, \"count\": {b}}}")
        }
    };
    locals.push(v);
    line
}

fn function<R: Rng>(g: &mut Gen<'_, R>, profile: &SynthProfile) -> (String, String) {
    let verb = g.verb();
    let noun = g.noun();
    let adj = g.adjective();
    let name = if g.rng.gen_bool(0.5) { format!("{verb}_{noun}") } else { format!("{verb}_{adj}_{noun}") };
    let nparams = g.rng.gen_range(1..=3);
    let mut params: Vec<String> = Vec::new();
    while params.len() < nparams {
        let p = g.var();
        if !params.contains(&p) {
            params.push(p);
        }
    }
    let mut locals = Vec::new();
    let (lo, hi) = profile.statements;
    let n = g.rng.gen_range(lo..=hi.max(lo));
    let mut body = Vec::new();
    for _ in 0..n {
        body.push(format!("    {}", statement(g, &params, &mut locals)));
    }
    let ret = locals.choose(&mut g.rng).cloned().unwrap_or_else(|| params[0].clone());
    body.push(format!("    return {ret}"));
    let code = format!("def {name}({}):\n{}", params.join(", "), body.join("\n"));
    let target = if name.contains(adj) { format!("{adj} {noun}") } else { noun.to_string() };
    let nl = match g.rng.gen_range(0..3) {
        0 => format!("{} the {target} from {}.", capitalize(verb), params[0].replace('_', " ")),
        1 => format!("{} {target} and return the {}.", capitalize(verb), ret.replace('_', " ")),
        _ => format!("Helper to {verb} the given {target}."),
    };
    (code, nl)
}

/// Generates `n` snippets with ids `<prefix><index>`.
pub fn generate_corpus(
    profile: &SynthProfile,
    n: usize,
    seed: u64,
    id_prefix: &str,
    role: MembershipLabel,
) -> Vec<CodeSnippet> {
    let w = profile.vocab_window;
    let pools = Pools {
        verbs: window(VERBS, w),
        nouns: window(NOUNS, w),
        methods: window(METHODS, w),
        adjectives: window(ADJECTIVES, w),
    };
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed), pools };
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (code, nl) = function(&mut g, profile);
        if !seen.insert(code.clone()) {
            continue;
        }
        let nl = g.rng.gen_bool(profile.nl_probability).then_some(nl);
        let id = format!("{id_prefix}{:06}", out.len());
        out.push(CodeSnippet { id, code, nl, language: Language::Python, source: profile.source.clone(), role });
    }
    out
}

/// Member and nonmember corpora drawn from two overlapping but shifted
/// sources (pool windows `[0, 0.7)` and `[0.3, 1.0)`), the way public code
/// from different repositories differs in naming habits.
pub fn shifted_benchmark(n_members: usize, n_nonmembers: usize, seed: u64) -> (Vec<CodeSnippet>, Vec<CodeSnippet>) {
    let members = SynthProfile::new("source-a").with_window(0.0, 0.7);
    let nonmembers = SynthProfile::new("source-b").with_window(0.3, 1.0);
    (
        generate_corpus(&members, n_members, derive_seed(seed, "synth/members"), "m", MembershipLabel::Member),
        generate_corpus(
            &nonmembers,
            n_nonmembers,
            derive_seed(seed, "synth/nonmembers"),
            "n",
            MembershipLabel::Nonmember,
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_unique() {
        let p = SynthProfile::new("alpha");
        let a = generate_corpus(&p, 200, 5, "a", MembershipLabel::Member);
        let b = generate_corpus(&p, 200, 5, "a", MembershipLabel::Member);
        assert_eq!(a, b);
        let codes: std::collections::HashSet<_> = a.iter().map(|s| &s.code).collect();
        assert_eq!(codes.len(), 200);
        assert!(a.iter().all(|s| s.nl.as_deref().is_some_and(|n| !n.trim().is_empty())));
    }

    #[test]
    fn window_restricts_pools() {
        let w = window(VERBS, (0.5, 1.0));
        assert_eq!(w.len(), VERBS.len() - VERBS.len() / 2);
        assert!(!w.contains(&VERBS[0]));
    }

    #[test]
    fn snippets_mix_cases() {
        let c = generate_corpus(&SynthProfile::new("s"), 50, 1, "s", MembershipLabel::Nonmember);
        assert!(c.iter().any(|s| s.code.chars().any(|ch| ch.is_uppercase())));
    }
}

//! Pause-centred subsequences (contexts C1..C3 and whole utterances) and the
//! tokens found at an exact distance from each pause.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ClassCounts, Corpus, Label, PosTag, Token, TokenKind, Transcript, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Context {
    C1,
    C2,
    C3,
    Utt,
}

impl Context {
    pub const ALL: [Context; 4] = [Context::C1, Context::C2, Context::C3, Context::Utt];

    pub fn from_k(k: usize) -> Result<Context> {
        match k {
            1 => Ok(Context::C1),
            2 => Ok(Context::C2),
            3 => Ok(Context::C3),
            other => Err(Error::InvalidContext(other)),
        }
    }

    /// Window radius; `None` for whole utterances.
    pub fn radius(self) -> Option<usize> {
        match self {
            Context::C1 => Some(1),
            Context::C2 => Some(2),
            Context::C3 => Some(3),
            Context::Utt => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Context::C1 => "C1",
            Context::C2 => "C2",
            Context::C3 => "C3",
            Context::Utt => "Utt",
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Context {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C1" => Ok(Context::C1),
            "C2" => Ok(Context::C2),
            "C3" => Ok(Context::C3),
            "UTT" => Ok(Context::Utt),
            other => Err(Error::Config(format!("unknown context `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Drop `<s>`/`</s>` before counting positions.
    pub skip_boundaries: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subsequence {
    pub tokens: Vec<Token>,
    /// Signed offset of each token from the anchoring pause.
    pub distances: Vec<i32>,
    pub label: Label,
    pub source: String,
    pub context: Context,
}

impl Subsequence {
    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub(crate) fn working_tokens<'a>(u: &'a Utterance, opts: ExtractOptions) -> Vec<&'a Token> {
    u.tokens
        .iter()
        .filter(|t| !(opts.skip_boundaries && t.kind.is_boundary()))
        .collect()
}

/// Pause positions that anchor subsequences. An utterance whose only pause is
/// its last spoken token yields none.
pub(crate) fn anchor_pauses(tokens: &[&Token]) -> Vec<usize> {
    let pauses: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_pause())
        .map(|(i, _)| i)
        .collect();
    let last_spoken = tokens.iter().rposition(|t| !t.kind.is_boundary());
    if pauses.len() == 1 && Some(pauses[0]) == last_spoken {
        return Vec::new();
    }
    pauses
}

/// One window per anchoring pause, clipped at the utterance edges.
pub fn extract_context(
    u: &Utterance,
    k: usize,
    label: Label,
    source: &str,
    opts: ExtractOptions,
) -> Result<Vec<Subsequence>> {
    let context = Context::from_k(k)?;
    let tokens = working_tokens(u, opts);
    let out = anchor_pauses(&tokens)
        .into_iter()
        .map(|p| {
            let lo = p.saturating_sub(k);
            let hi = (p + k).min(tokens.len() - 1);
            Subsequence {
                tokens: tokens[lo..=hi].iter().map(|&t| t.clone()).collect(),
                distances: (lo..=hi).map(|i| i as i32 - p as i32).collect(),
                label,
                source: source.to_string(),
                context,
            }
        })
        .collect();
    Ok(out)
}

/// The whole utterance, offsets measured from its first anchoring pause.
pub fn extract_utterance(
    u: &Utterance,
    label: Label,
    source: &str,
    opts: ExtractOptions,
) -> Option<Subsequence> {
    let tokens = working_tokens(u, opts);
    let first = *anchor_pauses(&tokens).first()?;
    Some(Subsequence {
        distances: (0..tokens.len()).map(|i| i as i32 - first as i32).collect(),
        tokens: tokens.into_iter().cloned().collect(),
        label,
        source: source.to_string(),
        context: Context::Utt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Before,
    After,
}

/// For every anchoring pause, the tokens exactly `d` positions before and
/// after it (when those positions exist inside the utterance).
pub fn extract_distance_tokens(t: &Transcript, d: usize, opts: ExtractOptions) -> Vec<(Token, Side)> {
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    for u in &t.utterances {
        let tokens = working_tokens(u, opts);
        for p in anchor_pauses(&tokens) {
            if p >= d {
                out.push((tokens[p - d].clone(), Side::Before));
            }
            if p + d < tokens.len() {
                out.push((tokens[p + d].clone(), Side::After));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTable {
    pub context: Context,
    subsequences: Vec<Subsequence>,
    counts: ClassCounts,
}

impl SubsetTable {
    pub fn new(context: Context, subsequences: Vec<Subsequence>) -> Self {
        let counts = ClassCounts::tally(subsequences.iter().map(|s| s.label));
        SubsetTable {
            context,
            subsequences,
            counts,
        }
    }

    pub fn subsequences(&self) -> &[Subsequence] {
        &self.subsequences
    }

    pub fn counts(&self) -> ClassCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.subsequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsequences.is_empty()
    }

    /// Builds the raw (not deduplicated) table for one context.
    pub fn extract(corpus: &Corpus, context: Context, opts: ExtractOptions) -> Result<SubsetTable> {
        let mut subs = Vec::new();
        for t in corpus.transcripts() {
            for u in &t.utterances {
                match context.radius() {
                    Some(k) => subs.extend(extract_context(u, k, t.label, &t.id, opts)?),
                    None => subs.extend(extract_utterance(u, t.label, &t.id, opts)),
                }
            }
        }
        Ok(SubsetTable::new(context, subs))
    }

    /// The header line is `header` with `context` and `count` added.
    pub fn write_jsonl<W: Write>(&self, mut w: W, header: &serde_json::Value) -> Result<()> {
        let mut h = match header {
            serde_json::Value::Object(m) => m.clone(),
            serde_json::Value::Null => serde_json::Map::new(),
            other => {
                let mut m = serde_json::Map::new();
                m.insert("meta".into(), other.clone());
                m
            }
        };
        h.insert("context".into(), self.context.as_str().into());
        h.insert("count".into(), self.subsequences.len().into());
        writeln!(w, "{}", serde_json::to_string(&h)?)?;
        for s in &self.subsequences {
            let line = SubseqLine::from(s);
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    /// Reads a table written by [`SubsetTable::write_jsonl`], returning it with its header.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<(SubsetTable, serde_json::Value)> {
        let mut lines = r.lines();
        let header: serde_json::Value = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Err(Error::Data("empty subset file".into())),
        };
        let context: Context = header
            .get("context")
            .and_then(|c| c.as_str())
            .ok_or_else(|| Error::Data("subset header lacks `context`".into()))?
            .parse()?;
        let mut subs = Vec::new();
        for l in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            let line: SubseqLine = serde_json::from_str(&l)?;
            subs.push(line.into_subsequence(context)?);
        }
        Ok((SubsetTable::new(context, subs), header))
    }
}

#[derive(Serialize, Deserialize)]
struct SubseqLine {
    surfaces: Vec<String>,
    distances: Vec<i32>,
    kinds: Vec<TokenKind>,
    lemmas: Vec<Option<String>>,
    pos: Vec<Option<PosTag>>,
    label: Label,
    source: String,
}

impl From<&Subsequence> for SubseqLine {
    fn from(s: &Subsequence) -> Self {
        SubseqLine {
            surfaces: s.tokens.iter().map(|t| t.surface.clone()).collect(),
            distances: s.distances.clone(),
            kinds: s.tokens.iter().map(|t| t.kind).collect(),
            lemmas: s.tokens.iter().map(|t| t.lemma.clone()).collect(),
            pos: s.tokens.iter().map(|t| t.pos).collect(),
            label: s.label,
            source: s.source.clone(),
        }
    }
}

impl SubseqLine {
    fn into_subsequence(self, context: Context) -> Result<Subsequence> {
        let n = self.surfaces.len();
        if [self.distances.len(), self.kinds.len(), self.lemmas.len(), self.pos.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(Error::Data("subset line has ragged fields".into()));
        }
        let tokens = self
            .surfaces
            .into_iter()
            .zip(self.kinds)
            .zip(self.lemmas.into_iter().zip(self.pos))
            .map(|((surface, kind), (lemma, pos))| Token {
                surface,
                kind,
                lemma,
                pos,
            })
            .collect();
        Ok(Subsequence {
            tokens,
            distances: self.distances,
            label: self.label,
            source: self.source,
            context,
        })
    }
}

/// Removes surface sequences seen in both classes and collapses repeats
/// within a class to their first occurrence.
pub fn dedup(table: &SubsetTable) -> SubsetTable {
    let mut labels_of: HashMap<Vec<&str>, [bool; 2]> = HashMap::new();
    for s in table.subsequences() {
        labels_of.entry(s.surfaces()).or_default()[s.label.index()] = true;
    }
    let mut kept: HashSet<Vec<&str>> = HashSet::new();
    let survivors = table
        .subsequences()
        .iter()
        .filter(|s| {
            let key = s.surfaces();
            let seen = labels_of[&key];
            if seen[0] && seen[1] {
                return false;
            }
            kept.insert(key)
        })
        .cloned()
        .collect();
    SubsetTable::new(table.context, survivors)
}

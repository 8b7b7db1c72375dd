//! CHAT-style transcript parsing and the typed corpus model.
//!
//! Only the participant tier (`*PAR` by default) is ingested. Dependent
//! tiers (`%mor`, `%gra`, ...) and headers (`@...`) are skipped. Every kept
//! utterance is wrapped in `<s>` / `</s>` boundary tokens.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOUNDARY_START: &str = "<s>";
pub const BOUNDARY_END: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenKind {
    Word,
    FilledPause,
    UnfilledPause,
    BoundaryStart,
    BoundaryEnd,
}

impl TokenKind {
    pub fn is_pause(self) -> bool {
        matches!(self, TokenKind::FilledPause | TokenKind::UnfilledPause)
    }

    pub fn is_boundary(self) -> bool {
        matches!(self, TokenKind::BoundaryStart | TokenKind::BoundaryEnd)
    }
}

/// Coarse part-of-speech tag set shared by the tagger, the token vectors and
/// the POS-based aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Conj,
    Num,
    Intj,
    Other,
    Pause,
    Boundary,
}

impl PosTag {
    pub const ALL: [PosTag; 13] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Adv,
        PosTag::Pron,
        PosTag::Det,
        PosTag::Adp,
        PosTag::Conj,
        PosTag::Num,
        PosTag::Intj,
        PosTag::Other,
        PosTag::Pause,
        PosTag::Boundary,
    ];

    /// Tags a Word token can carry.
    pub const WORD_TAGS: [PosTag; 11] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Adv,
        PosTag::Pron,
        PosTag::Det,
        PosTag::Adp,
        PosTag::Conj,
        PosTag::Num,
        PosTag::Intj,
        PosTag::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Pron => "PRON",
            PosTag::Det => "DET",
            PosTag::Adp => "ADP",
            PosTag::Conj => "CONJ",
            PosTag::Num => "NUM",
            PosTag::Intj => "INTJ",
            PosTag::Other => "OTHER",
            PosTag::Pause => "PAUSE",
            PosTag::Boundary => "BOUNDARY",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    /// Accepts the coarse names above, Universal Dependencies tags and the
    /// common Penn Treebank tags.
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let tag = match up.as_str() {
            "NOUN" | "PROPN" | "N" => PosTag::Noun,
            "VERB" | "AUX" | "V" | "MD" => PosTag::Verb,
            "ADJ" | "JJ" | "JJR" | "JJS" => PosTag::Adj,
            "ADV" | "RB" | "RBR" | "RBS" | "WRB" => PosTag::Adv,
            "PRON" | "PRP" | "PRP$" | "WP" | "WP$" => PosTag::Pron,
            "DET" | "DT" | "PDT" | "WDT" => PosTag::Det,
            "ADP" | "IN" | "TO" => PosTag::Adp,
            "CONJ" | "CCONJ" | "SCONJ" | "CC" => PosTag::Conj,
            "NUM" | "CD" => PosTag::Num,
            "INTJ" | "UH" => PosTag::Intj,
            "PAUSE" => PosTag::Pause,
            "BOUNDARY" => PosTag::Boundary,
            "OTHER" | "X" | "SYM" | "PART" | "PUNCT" | "RP" | "POS" | "EX" | "FW" | "LS" => {
                PosTag::Other
            }
            t if t.starts_with("NN") => PosTag::Noun,
            t if t.starts_with("VB") => PosTag::Verb,
            _ => return Err(Error::Data(format!("unknown POS tag `{s}`"))),
        };
        Ok(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
    pub lemma: Option<String>,
    pub pos: Option<PosTag>,
}

impl Token {
    pub fn word(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            kind: TokenKind::Word,
            lemma: None,
            pos: None,
        }
    }

    pub fn filled_pause(filler: &str) -> Self {
        Token {
            surface: format!("&{filler}"),
            kind: TokenKind::FilledPause,
            lemma: None,
            pos: None,
        }
    }

    pub fn unfilled_pause(marker: &str) -> Self {
        Token {
            surface: marker.to_string(),
            kind: TokenKind::UnfilledPause,
            lemma: None,
            pos: None,
        }
    }

    pub fn boundary_start() -> Self {
        Token {
            surface: BOUNDARY_START.to_string(),
            kind: TokenKind::BoundaryStart,
            lemma: None,
            pos: None,
        }
    }

    pub fn boundary_end() -> Self {
        Token {
            surface: BOUNDARY_END.to_string(),
            kind: TokenKind::BoundaryEnd,
            lemma: None,
            pos: None,
        }
    }

    pub fn is_pause(&self) -> bool {
        self.kind.is_pause()
    }

    pub fn is_word(&self) -> bool {
        self.kind == TokenKind::Word
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TokenKind::FilledPause => write!(f, "*{}*", self.surface.trim_start_matches('&')),
            _ => f.write_str(&self.surface),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub tokens: Vec<Token>,
}

impl Utterance {
    /// Wraps inner tokens with the two boundary tokens.
    pub fn from_inner(speaker: impl Into<String>, inner: Vec<Token>) -> Self {
        let mut tokens = Vec::with_capacity(inner.len() + 2);
        tokens.push(Token::boundary_start());
        tokens.extend(inner);
        tokens.push(Token::boundary_end());
        Utterance {
            speaker: speaker.into(),
            tokens,
        }
    }

    pub fn pause_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_pause())
            .map(|(i, _)| i)
    }

    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.is_word())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    HC,
    CI,
}

impl Label {
    /// CI is the positive class.
    pub fn is_positive(self) -> bool {
        self == Label::CI
    }

    pub fn index(self) -> usize {
        match self {
            Label::HC => 0,
            Label::CI => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::HC
        } else {
            Label::CI
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::HC => "HC",
            Label::CI => "CI",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "HC" => Ok(Label::HC),
            "CI" => Ok(Label::CI),
            other => Err(Error::Data(format!("label must be HC or CI, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub participant_id: String,
    pub label: Label,
    pub utterances: Vec<Utterance>,
}

impl Transcript {
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.utterances.iter().flat_map(|u| u.tokens.iter())
    }

    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens().filter(|t| t.is_word())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub hc: usize,
    pub ci: usize,
    pub total: usize,
}

impl ClassCounts {
    pub fn tally<I: IntoIterator<Item = Label>>(labels: I) -> Self {
        let mut c = ClassCounts::default();
        for l in labels {
            match l {
                Label::HC => c.hc += 1,
                Label::CI => c.ci += 1,
            }
            c.total += 1;
        }
        c
    }
}

/// An immutable collection of transcripts with per-class tallies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corpus {
    transcripts: Vec<Transcript>,
    counts: ClassCounts,
}

#[derive(Deserialize)]
struct CorpusRepr {
    transcripts: Vec<Transcript>,
    counts: ClassCounts,
}

impl<'de> Deserialize<'de> for Corpus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CorpusRepr::deserialize(d)?;
        let corpus = Corpus::new(repr.transcripts);
        if corpus.counts != repr.counts {
            return Err(serde::de::Error::custom(
                "stored class counts disagree with transcript labels",
            ));
        }
        Ok(corpus)
    }
}

impl Corpus {
    pub fn new(transcripts: Vec<Transcript>) -> Self {
        let counts = ClassCounts::tally(transcripts.iter().map(|t| t.label));
        Corpus {
            transcripts,
            counts,
        }
    }

    pub fn transcripts(&self) -> &[Transcript] {
        &self.transcripts
    }

    pub fn counts(&self) -> ClassCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.transcripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transcripts.is_empty()
    }

    /// Applies `f` to every transcript, producing a new corpus.
    pub fn map_transcripts<F>(&self, f: F) -> Corpus
    where
        F: Fn(&Transcript) -> Transcript + Sync + Send,
    {
        Corpus::new(self.transcripts.par_iter().map(f).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Corpus> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseMode {
    #[default]
    Both,
    FilledOnly,
    UnfilledOnly,
}

/// Which source strings count as pauses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PauseMarkers {
    /// Fillers recognised after a `&` or `&-` prefix.
    pub filled: Vec<String>,
    /// Bare forms treated as fillers without a prefix.
    pub filled_literals: Vec<String>,
    /// Unfilled pause markers, matched verbatim.
    pub unfilled: Vec<String>,
}

impl Default for PauseMarkers {
    fn default() -> Self {
        PauseMarkers {
            filled: ["uh", "um", "er", "eh"].map(String::from).to_vec(),
            filled_literals: ["uh", "um"].map(String::from).to_vec(),
            unfilled: ["(.)", "(..)", "(...)"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseOptions {
    pub speakers: Vec<String>,
    pub markers: PauseMarkers,
    pub pause_mode: PauseMode,
    /// Main-tier tokens are written `word/TAG`.
    pub pretagged: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            speakers: vec!["PAR".to_string()],
            markers: PauseMarkers::default(),
            pause_mode: PauseMode::Both,
            pretagged: false,
        }
    }
}

const UNINTELLIGIBLE: [&str; 3] = ["xxx", "yyy", "www"];

/// Parses one CHAT-like file into a transcript.
pub fn parse_transcript(raw: &str, id: &str, label: Label, opts: &ParseOptions) -> Result<Transcript> {
    parse_transcript_with_participant(raw, id, id, label, opts)
}

pub fn parse_transcript_with_participant(
    raw: &str,
    id: &str,
    participant_id: &str,
    label: Label,
    opts: &ParseOptions,
) -> Result<Transcript> {
    // (first line number, speaker code or None for dependent tiers, text)
    let mut tiers: Vec<(usize, Option<String>, String)> = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('@') {
            continue;
        }
        if line.starts_with('\t') || line.starts_with(' ') {
            match tiers.last_mut() {
                Some((_, _, text)) => {
                    text.push(' ');
                    text.push_str(line.trim());
                }
                None => return Err(Error::parse(lineno, "continuation line before any tier")),
            }
            continue;
        }
        let (marker, rest) = line.split_at(1);
        if marker != "*" && marker != "%" {
            return Err(Error::parse(lineno, format!("unexpected line `{line}`")));
        }
        let colon = rest
            .find(':')
            .ok_or_else(|| Error::parse(lineno, "tier header without `:`"))?;
        let code = &rest[..colon];
        if code.is_empty() || !code.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::parse(lineno, format!("malformed tier code `{code}`")));
        }
        let body = rest[colon + 1..].trim().to_string();
        let speaker = (marker == "*").then(|| code.to_string());
        tiers.push((lineno, speaker, body));
    }

    let mut utterances = Vec::new();
    for (lineno, speaker, body) in tiers {
        let Some(speaker) = speaker else { continue };
        if !opts.speakers.iter().any(|s| s == &speaker) {
            continue;
        }
        let inner = tokenize_tier(&body, opts).map_err(|msg| Error::parse(lineno, msg))?;
        if inner.is_empty() {
            continue;
        }
        utterances.push(Utterance::from_inner(speaker, inner));
    }
    if utterances.is_empty() {
        return Err(Error::NoUtterances);
    }
    Ok(Transcript {
        id: id.to_string(),
        participant_id: participant_id.to_string(),
        label,
        utterances,
    })
}

fn strip_bullets_and_codes(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut in_bullet = false;
    let mut depth = 0usize;
    for c in body.chars() {
        match c {
            '\u{15}' => in_bullet = !in_bullet,
            _ if in_bullet => {}
            '[' => depth += 1,
            ']' if depth > 0 => {
                depth -= 1;
                out.push(' ');
            }
            _ if depth > 0 => {}
            _ => out.push(c),
        }
    }
    out
}

fn tokenize_tier(body: &str, opts: &ParseOptions) -> std::result::Result<Vec<Token>, String> {
    let cleaned = strip_bullets_and_codes(body);
    let keep_filled = opts.pause_mode != PauseMode::UnfilledOnly;
    let keep_unfilled = opts.pause_mode != PauseMode::FilledOnly;
    let mut out = Vec::new();

    for raw in cleaned.split_whitespace() {
        let (raw, tag) = if opts.pretagged {
            match raw.rsplit_once('/') {
                Some((w, t)) if !w.is_empty() => {
                    (w, Some(t.parse::<PosTag>().map_err(|e| e.to_string())?))
                }
                _ => (raw, None),
            }
        } else {
            (raw, None)
        };
        let raw = raw.trim_matches(|c| c == '<' || c == '>');
        if raw.is_empty() {
            continue;
        }
        if opts.markers.unfilled.iter().any(|m| m == raw) {
            if keep_unfilled {
                out.push(Token::unfilled_pause(raw));
            }
            continue;
        }
        if raw.starts_with('+') || raw.starts_with('0') {
            continue;
        }
        if raw.starts_with('(') && raw.ends_with(')') {
            // timed or otherwise unlisted pause notation
            continue;
        }
        if let Some(rest) = raw.strip_prefix('&') {
            let filler = rest.strip_prefix('-').unwrap_or(rest).to_lowercase();
            let filler: String = filler.chars().filter(|c| c.is_alphanumeric()).collect();
            if opts.markers.filled.iter().any(|m| *m == filler) && keep_filled {
                out.push(Token::filled_pause(&filler));
            }
            continue;
        }
        let Some(word) = clean_word(raw) else { continue };
        if UNINTELLIGIBLE.contains(&word.as_str()) {
            continue;
        }
        if opts.markers.filled_literals.iter().any(|m| *m == word) {
            if keep_filled {
                out.push(Token::filled_pause(&word));
            }
            continue;
        }
        let mut tok = Token::word(word);
        tok.pos = tag;
        out.push(tok);
    }
    Ok(out)
}

fn clean_word(raw: &str) -> Option<String> {
    let base = raw.split('@').next().unwrap_or("");
    let word: String = base
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'' || *c == '-')
        .flat_map(char::to_lowercase)
        .collect();
    let word = word.trim_matches(|c| c == '\'' || c == '-').to_string();
    (!word.is_empty()).then_some(word)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauseCounts {
    pub filled: usize,
    pub unfilled: usize,
    pub total: usize,
}

pub fn count_pauses(t: &Transcript) -> PauseCounts {
    let mut c = PauseCounts::default();
    for tok in t.tokens() {
        match tok.kind {
            TokenKind::FilledPause => c.filled += 1,
            TokenKind::UnfilledPause => c.unfilled += 1,
            _ => continue,
        }
        c.total += 1;
    }
    c
}

/// One row of the metadata CSV (`id,participant_id,label`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetadataRow {
    pub id: String,
    pub participant_id: String,
    pub label: Label,
}

pub fn read_metadata(path: &Path) -> Result<Vec<MetadataRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: metadata has no rows", path.display())));
    }
    Ok(rows)
}

/// Loads `<dir>/<id>.cha` for every metadata row, in metadata order.
pub fn load_corpus(dir: &Path, metadata: &Path, opts: &ParseOptions) -> Result<Corpus> {
    let rows = read_metadata(metadata)?;
    let mut seen = BTreeMap::new();
    for r in &rows {
        if seen.insert(r.id.clone(), ()).is_some() {
            return Err(Error::Data(format!("duplicate transcript id `{}`", r.id)));
        }
    }
    let transcripts = rows
        .par_iter()
        .map(|row| {
            let path = dir.join(format!("{}.cha", row.id));
            let raw = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
            parse_transcript_with_participant(&raw, &row.id, &row.participant_id, row.label, opts)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(transcripts))
}

/// Renders a transcript back into minimal CHAT text (participant tier only).
pub fn render_chat(t: &Transcript) -> String {
    let mut out = String::from("@Begin\n");
    out.push_str(&format!("@ID:\t{}\n", t.participant_id));
    for u in &t.utterances {
        let body: Vec<&str> = u
            .tokens
            .iter()
            .filter(|tok| !tok.kind.is_boundary())
            .map(|tok| tok.surface.as_str())
            .collect();
        out.push_str(&format!("*{}:\t{} .\n", u.speaker, body.join(" ")));
    }
    out.push_str("@End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(u: &Utterance) -> Vec<&str> {
        u.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    fn parse(raw: &str) -> Result<Transcript> {
        parse_transcript(raw, "t1", Label::CI, &ParseOptions::default())
    }

    #[test]
    fn running_example() {
        let t = parse("*PAR: the boy is &uh stealing a cookie .").unwrap();
        let u = &t.utterances[0];
        assert_eq!(
            surfaces(u),
            ["<s>", "the", "boy", "is", "&uh", "stealing", "a", "cookie", "</s>"]
        );
        assert_eq!(u.tokens[4].kind, TokenKind::FilledPause);
        assert_eq!(u.tokens[0].kind, TokenKind::BoundaryStart);
        assert_eq!(u.tokens[8].kind, TokenKind::BoundaryEnd);
        assert_eq!(u.tokens[4].to_string(), "*uh*");
    }

    #[test]
    fn pause_free_and_unfilled() {
        let t = parse("*PAR: yes .").unwrap();
        assert_eq!(surfaces(&t.utterances[0]), ["<s>", "yes", "</s>"]);
        assert_eq!(count_pauses(&t), PauseCounts::default());

        let t = parse("*PAR: well (.) okay .").unwrap();
        let u = &t.utterances[0];
        assert_eq!(surfaces(u), ["<s>", "well", "(.)", "okay", "</s>"]);
        assert_eq!(u.tokens[2].kind, TokenKind::UnfilledPause);
    }

    #[test]
    fn counts_over_utterances() {
        let t = parse("*PAR: the boy is &uh stealing a cookie .\n*PAR: well (.) okay .").unwrap();
        assert_eq!(
            count_pauses(&t),
            PauseCounts {
                filled: 1,
                unfilled: 1,
                total: 2
            }
        );
        let t = parse("*PAR: &uh a &um b uh c .").unwrap();
        assert_eq!(
            count_pauses(&t),
            PauseCounts {
                filled: 3,
                unfilled: 0,
                total: 3
            }
        );
    }

    #[test]
    fn strips_chat_annotations() {
        let raw = "@Begin\n*INV: what do you see ?\n*PAR:\t<the boy> [/] the boy@l is [*] \
                   stealing [: steals] cookies +...\n%mor:\tdet|the n|boy\n*PAR: &=laughs \
                   &+fr fridge (..) xxx okay .\n@End";
        let t = parse(raw).unwrap();
        assert_eq!(t.utterances.len(), 2);
        assert_eq!(
            surfaces(&t.utterances[0]),
            ["<s>", "the", "boy", "the", "boy", "is", "stealing", "cookies", "</s>"]
        );
        assert_eq!(surfaces(&t.utterances[1]), ["<s>", "fridge", "(..)", "okay", "</s>"]);
    }

    #[test]
    fn continuation_lines_and_case() {
        let t = parse("*PAR: The BOY\n\tis &-um Stealing .").unwrap();
        assert_eq!(
            surfaces(&t.utterances[0]),
            ["<s>", "the", "boy", "is", "&um", "stealing", "</s>"]
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(parse(""), Err(Error::NoUtterances)));
        assert!(matches!(parse("*INV: hello ."), Err(Error::NoUtterances)));
        match parse("*PAR: ok .\n*PAR the boy") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse("hello"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn pause_mode_switch() {
        let raw = "*PAR: a &uh b (.) c .";
        let mut opts = ParseOptions::default();
        opts.pause_mode = PauseMode::FilledOnly;
        let t = parse_transcript(raw, "x", Label::HC, &opts).unwrap();
        assert_eq!(count_pauses(&t).unfilled, 0);
        assert_eq!(count_pauses(&t).filled, 1);
        opts.pause_mode = PauseMode::UnfilledOnly;
        let t = parse_transcript(raw, "x", Label::HC, &opts).unwrap();
        assert_eq!(count_pauses(&t).filled, 0);
        assert_eq!(count_pauses(&t).unfilled, 1);
    }

    #[test]
    fn pretagged_tokens() {
        let opts = ParseOptions {
            pretagged: true,
            ..ParseOptions::default()
        };
        let t = parse_transcript("*PAR: the/DET boy/NN &uh ran/VBD .", "x", Label::HC, &opts).unwrap();
        let tags: Vec<_> = t.utterances[0].tokens.iter().map(|t| t.pos).collect();
        assert_eq!(
            tags,
            [None, Some(PosTag::Det), Some(PosTag::Noun), None, Some(PosTag::Verb), None]
        );
    }

    #[test]
    fn corpus_counts_and_json() {
        let a = parse_transcript("*PAR: a &uh b .", "a", Label::HC, &ParseOptions::default()).unwrap();
        let b = parse_transcript("*PAR: c .", "b", Label::CI, &ParseOptions::default()).unwrap();
        let c = Corpus::new(vec![a, b]);
        assert_eq!(c.counts(), ClassCounts { hc: 1, ci: 1, total: 2 });
        let json = c.to_json().unwrap();
        assert_eq!(Corpus::from_json(&json).unwrap(), c);
        let tampered = json.replacen("\"hc\": 1", "\"hc\": 5", 1);
        assert!(Corpus::from_json(&tampered).is_err());
    }

    #[test]
    fn render_round_trip() {
        let raw = "*PAR: the boy is &uh stealing (.) a cookie .\n*PAR: yes .";
        let t = parse(raw).unwrap();
        let again = parse(&render_chat(&t)).unwrap();
        assert_eq!(t, again);
    }
}

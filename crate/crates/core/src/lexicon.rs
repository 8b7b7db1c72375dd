//! Token-level features: lemmas, syllables, POS tags and the 18 numeric
//! lexicon-derived values that, together with a 5-dim POS embedding held by
//! the model, form a 23-dim token input.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PosTag, Token, TokenKind, Transcript, Utterance};
use crate::error::{Error, Result};

pub const NUMERIC_DIM: usize = 18;
pub const POS_EMBED_DIM: usize = 5;
pub const INPUT_DIM: usize = NUMERIC_DIM + POS_EMBED_DIM;

pub const DIM_NAMES: [&str; NUMERIC_DIM] = [
    "letters",
    "syllables",
    "valence",
    "arousal",
    "dominance",
    "valence_lemma",
    "arousal_lemma",
    "dominance_lemma",
    "concreteness",
    "concreteness_lemma",
    "imageability",
    "imageability_lemma",
    "aoa",
    "aoa_lemma",
    "frequency",
    "frequency_lemma",
    "familiarity",
    "familiarity_lemma",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Valence,
    Arousal,
    Dominance,
    Concreteness,
    Imageability,
    Aoa,
    Frequency,
    Familiarity,
}

impl Measure {
    pub const ALL: [Measure; 8] = [
        Measure::Valence,
        Measure::Arousal,
        Measure::Dominance,
        Measure::Concreteness,
        Measure::Imageability,
        Measure::Aoa,
        Measure::Frequency,
        Measure::Familiarity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Valence => "valence",
            Measure::Arousal => "arousal",
            Measure::Dominance => "dominance",
            Measure::Concreteness => "concreteness",
            Measure::Imageability => "imageability",
            Measure::Aoa => "aoa",
            Measure::Frequency => "frequency",
            Measure::Familiarity => "familiarity",
        }
    }

    /// Positions of the (surface, lemma) values in the numeric vector.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Measure::Valence => (2, 5),
            Measure::Arousal => (3, 6),
            Measure::Dominance => (4, 7),
            Measure::Concreteness => (8, 9),
            Measure::Imageability => (10, 11),
            Measure::Aoa => (12, 13),
            Measure::Frequency => (14, 15),
            Measure::Familiarity => (16, 17),
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown lexicon measure `{s}`")))
    }
}

// ---------------------------------------------------------------------------
// lemmas and syllables

const LEMMA_EXCEPTIONS: &[(&str, &str)] = &[
    ("is", "be"),
    ("are", "be"),
    ("was", "be"),
    ("were", "be"),
    ("am", "be"),
    ("been", "be"),
    ("'s", "be"),
    ("has", "have"),
    ("had", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("went", "go"),
    ("gone", "go"),
    ("ran", "run"),
    ("saw", "see"),
    ("seen", "see"),
    ("took", "take"),
    ("taken", "take"),
    ("fell", "fall"),
    ("fallen", "fall"),
    ("stole", "steal"),
    ("stolen", "steal"),
    ("got", "get"),
    ("gotten", "get"),
    ("made", "make"),
    ("said", "say"),
    ("thought", "think"),
    ("came", "come"),
    ("sat", "sit"),
    ("stood", "stand"),
    ("ate", "eat"),
    ("told", "tell"),
    ("knew", "know"),
    ("known", "know"),
    ("held", "hold"),
    ("gave", "give"),
    ("given", "give"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("cookies", "cookie"),
    ("movies", "movie"),
    ("brownies", "brownie"),
];

const KEEP_S: &[&str] = &[
    "this", "his", "its", "always", "perhaps", "sometimes", "news", "series", "species", "thus",
    "plus", "towards", "afterwards", "upstairs", "downstairs", "pants", "scissors", "trousers",
    "whereas", "besides", "yes",
];

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| is_vowel(c) || c == 'y')
}

/// Stem shape consonant* + single vowel + consonant (not w/x/y), as in
/// "mak" or "writ", which lost a silent e before the suffix.
fn lost_silent_e(stem: &str) -> bool {
    let cs: Vec<char> = stem.chars().collect();
    let n = cs.len();
    if n < 2 || n > 4 {
        return false;
    }
    let last = cs[n - 1];
    if is_vowel(last) || matches!(last, 'w' | 'x' | 'y') {
        return false;
    }
    if !is_vowel(cs[n - 2]) {
        return false;
    }
    cs[..n - 2].iter().all(|&c| !is_vowel(c) && c != 'y')
}

fn strip_verbal(stem: &str) -> String {
    let cs: Vec<char> = stem.chars().collect();
    let n = cs.len();
    if n >= 3 && cs[n - 1] == cs[n - 2] && !is_vowel(cs[n - 1]) && !matches!(cs[n - 1], 'l' | 's' | 'z') {
        return cs[..n - 1].iter().collect();
    }
    if lost_silent_e(stem) {
        return format!("{stem}e");
    }
    stem.to_string()
}

fn apply_rules(w: &str) -> String {
    if let Some(&(_, lemma)) = LEMMA_EXCEPTIONS.iter().find(|(form, _)| *form == w) {
        return lemma.to_string();
    }
    let w = w.strip_suffix("'s").filter(|s| !s.is_empty()).unwrap_or(w);
    if let Some(stem) = w.strip_suffix("ing") {
        if stem.len() >= 2 && has_vowel(stem) {
            return strip_verbal(stem);
        }
        return w.to_string();
    }
    if let Some(stem) = w.strip_suffix("ied") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if !w.ends_with("eed") {
        if let Some(stem) = w.strip_suffix("ed") {
            if stem.len() >= 3 && has_vowel(stem) {
                return strip_verbal(stem);
            }
            return w.to_string();
        }
    }
    if w.len() > 3 && w.ends_with('s') && !KEEP_S.contains(&w) {
        if let Some(stem) = w.strip_suffix("ies") {
            return if stem.len() >= 2 {
                format!("{stem}y")
            } else {
                format!("{stem}ie")
            };
        }
        if let Some(stem) = w.strip_suffix("es") {
            if ["s", "x", "z", "ch", "sh"].iter().any(|e| stem.ends_with(e)) && !stem.ends_with("ss") {
                return stem.to_string();
            }
            if stem.ends_with("ss") {
                return stem.to_string();
            }
        }
        if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
            return w.to_string();
        }
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

/// Rule-based English lemma: an exception table followed by suffix rules.
/// A candidate that the rules would change again is rejected, which keeps
/// the function idempotent.
pub fn lemmatize(word: &str) -> String {
    let lemma = apply_rules(word);
    if lemma.is_empty() || apply_rules(&lemma) != lemma {
        word.to_string()
    } else {
        lemma
    }
}

pub fn letter_count(word: &str) -> usize {
    word.chars().filter(|c| c.is_alphabetic()).count()
}

/// Vowel-group count with a silent final-e adjustment.
pub fn syllable_count(word: &str) -> usize {
    let cs: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if cs.is_empty() {
        return 0;
    }
    let vowel = |c: char| is_vowel(c) || c == 'y';
    let mut groups = 0;
    let mut prev = false;
    for &c in &cs {
        let v = vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = cs.len();
    if groups > 1 && cs[n - 1] == 'e' && n >= 2 && !vowel(cs[n - 2]) {
        let consonant_le = cs[n - 2] == 'l' && n >= 3 && !vowel(cs[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}

// ---------------------------------------------------------------------------
// POS tagging

pub trait PosTagger: Send + Sync {
    fn tag_word(&self, surface: &str, lemma: &str, existing: Option<PosTag>) -> PosTag;
}

/// Dictionary lookup (surface, then lemma) with suffix heuristics as fallback.
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    dict: HashMap<String, PosTag>,
}

const BUNDLED_POS: &str = include_str!("../data/pos_dictionary.tsv");

impl LexiconTagger {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn bundled() -> Self {
        let mut t = Self::default();
        t.load_tsv(BUNDLED_POS).expect("bundled POS dictionary is well formed");
        t
    }

    /// Adds `word<TAB>TAG` lines; later entries override earlier ones.
    pub fn load_tsv(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(|c: char| c == '\t' || c == ',');
            let (Some(word), Some(tag)) = (parts.next(), parts.next()) else {
                return Err(Error::parse(i + 1, "expected `word<TAB>tag`"));
            };
            self.insert(word.trim(), tag.parse()?);
        }
        Ok(())
    }

    pub fn insert(&mut self, word: &str, tag: PosTag) {
        self.dict.insert(word.to_lowercase(), tag);
    }

    pub fn len(&self) -> usize {
        self.dict.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dict.is_empty()
    }

    fn heuristic(word: &str) -> PosTag {
        if word.chars().all(|c| c.is_ascii_digit()) {
            return PosTag::Num;
        }
        const ADJ: [&str; 8] = ["ous", "ful", "ive", "able", "ible", "al", "ic", "less"];
        const NOUN: [&str; 6] = ["tion", "sion", "ness", "ment", "ity", "ship"];
        if word.ends_with("ly") {
            PosTag::Adv
        } else if word.ends_with("ing") || word.ends_with("ed") {
            PosTag::Verb
        } else if NOUN.iter().any(|s| word.ends_with(s)) {
            PosTag::Noun
        } else if ADJ.iter().any(|s| word.ends_with(s)) {
            PosTag::Adj
        } else {
            PosTag::Noun
        }
    }
}

impl PosTagger for LexiconTagger {
    fn tag_word(&self, surface: &str, lemma: &str, _existing: Option<PosTag>) -> PosTag {
        self.dict
            .get(surface)
            .or_else(|| self.dict.get(lemma))
            .copied()
            .unwrap_or_else(|| Self::heuristic(surface))
    }
}

/// Keeps tags supplied by pre-tagged input; untagged words become OTHER.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThroughTagger;

impl PosTagger for PassThroughTagger {
    fn tag_word(&self, _surface: &str, _lemma: &str, existing: Option<PosTag>) -> PosTag {
        existing.unwrap_or(PosTag::Other)
    }
}

/// Sets `pos` on every token and `lemma` on every word.
pub fn pos_tag(u: &Utterance, tagger: &dyn PosTagger) -> Utterance {
    let tokens = u
        .tokens
        .iter()
        .map(|t| {
            let mut t = t.clone();
            match t.kind {
                TokenKind::FilledPause | TokenKind::UnfilledPause => t.pos = Some(PosTag::Pause),
                TokenKind::BoundaryStart | TokenKind::BoundaryEnd => t.pos = Some(PosTag::Boundary),
                TokenKind::Word => {
                    let lemma = lemmatize(&t.surface);
                    t.pos = Some(tagger.tag_word(&t.surface, &lemma, t.pos));
                    t.lemma = Some(lemma);
                }
            }
            t
        })
        .collect();
    Utterance {
        speaker: u.speaker.clone(),
        tokens,
    }
}

pub fn tag_transcript(t: &Transcript, tagger: &dyn PosTagger) -> Transcript {
    Transcript {
        utterances: t.utterances.iter().map(|u| pos_tag(u, tagger)).collect(),
        ..t.clone()
    }
}

pub fn tag_corpus(c: &Corpus, tagger: &dyn PosTagger) -> Corpus {
    c.map_transcripts(|t| tag_transcript(t, tagger))
}

// ---------------------------------------------------------------------------
// lexicon tables

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub entries: usize,
    pub skipped_rows: usize,
}

/// A word-keyed table of one or more numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconTable {
    pub name: String,
    pub columns: Vec<String>,
    entries: HashMap<String, Vec<f64>>,
    pub log_transformed: bool,
    pub coverage: Coverage,
}

impl LexiconTable {
    /// Builds a table from raw rows; `log_transform` maps each value to
    /// `ln(1 + x)`. Rows with a non-finite value are skipped; the first row
    /// for a word wins.
    pub fn from_rows<I>(name: &str, columns: Vec<String>, rows: I, log_transform: bool) -> Self
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut entries = HashMap::new();
        let mut skipped = 0;
        for (word, values) in rows {
            let values: Vec<f64> = if log_transform {
                values.iter().map(|v| v.ln_1p()).collect()
            } else {
                values
            };
            if values.len() != columns.len() || values.iter().any(|v| !v.is_finite()) {
                skipped += 1;
                continue;
            }
            entries.entry(word.trim().to_lowercase()).or_insert(values);
        }
        let coverage = Coverage {
            entries: entries.len(),
            skipped_rows: skipped,
        };
        LexiconTable {
            name: name.to_string(),
            columns,
            entries,
            log_transformed: log_transform,
            coverage,
        }
    }

    /// Reads a headered CSV (`#` lines are comments). `value_columns` names
    /// the columns to keep; unparsable cells (e.g. `NA`) skip the row.
    pub fn from_csv<R: Read>(
        name: &str,
        reader: R,
        word_column: &str,
        value_columns: &[String],
        log_transform: bool,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |col: &str| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(col))
                .ok_or_else(|| Error::Data(format!("lexicon `{name}` has no column `{col}`")))
        };
        let word_idx = find(word_column)?;
        let value_idx = value_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let Some(word) = rec.get(word_idx) else { continue };
            let values = value_idx
                .iter()
                .map(|&i| rec.get(i).and_then(|v| v.trim().parse::<f64>().ok()).unwrap_or(f64::NAN))
                .collect();
            rows.push((word.to_string(), values));
        }
        Ok(Self::from_rows(name, value_columns.to_vec(), rows, log_transform))
    }

    pub fn get(&self, word: &str, column: usize) -> Option<f64> {
        self.entries.get(word).map(|v| v[column])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Config-level description of one lexicon file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSource {
    pub path: PathBuf,
    #[serde(default = "default_word_column")]
    pub word_column: String,
    /// measure -> column name
    pub columns: std::collections::BTreeMap<Measure, String>,
    #[serde(default)]
    pub log_transform: bool,
}

fn default_word_column() -> String {
    "word".to_string()
}

impl LexiconSource {
    pub fn simple(path: impl Into<PathBuf>, measure: Measure) -> Self {
        LexiconSource {
            path: path.into(),
            word_column: default_word_column(),
            columns: [(measure, "value".to_string())].into_iter().collect(),
            log_transform: measure == Measure::Frequency,
        }
    }

    /// Header names used by the published Warriner et al. valence/arousal/dominance file.
    pub fn warriner(path: impl Into<PathBuf>) -> Self {
        LexiconSource {
            path: path.into(),
            word_column: "Word".into(),
            columns: [
                (Measure::Valence, "V.Mean.Sum".to_string()),
                (Measure::Arousal, "A.Mean.Sum".to_string()),
                (Measure::Dominance, "D.Mean.Sum".to_string()),
            ]
            .into_iter()
            .collect(),
            log_transform: false,
        }
    }

    /// Brysbaert et al. concreteness ratings.
    pub fn brysbaert_concreteness(path: impl Into<PathBuf>) -> Self {
        LexiconSource {
            path: path.into(),
            word_column: "Word".into(),
            columns: [(Measure::Concreteness, "Conc.M".to_string())].into_iter().collect(),
            log_transform: false,
        }
    }

    /// Kuperman et al. age-of-acquisition ratings.
    pub fn kuperman_aoa(path: impl Into<PathBuf>) -> Self {
        LexiconSource {
            path: path.into(),
            word_column: "Word".into(),
            columns: [(Measure::Aoa, "Rating.Mean".to_string())].into_iter().collect(),
            log_transform: false,
        }
    }

    pub fn load(&self, base: &Path) -> Result<(LexiconTable, Vec<Measure>)> {
        let path = if self.path.is_absolute() {
            self.path.clone()
        } else {
            base.join(&self.path)
        };
        let file = std::fs::File::open(&path).map_err(|e| Error::file(&path, e))?;
        let measures: Vec<Measure> = self.columns.keys().copied().collect();
        let cols: Vec<String> = self.columns.values().cloned().collect();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("lexicon");
        let table = LexiconTable::from_csv(name, file, &self.word_column, &cols, self.log_transform)?;
        Ok((table, measures))
    }
}

/// Lexicon tables bound to measures.
#[derive(Debug, Clone, Default)]
pub struct LexiconSet {
    tables: Vec<LexiconTable>,
    binding: HashMap<Measure, (usize, usize)>,
}

const BUNDLED: [(&str, &str); 6] = [
    ("sentiment", include_str!("../data/lexicons/sentiment.csv")),
    ("concreteness", include_str!("../data/lexicons/concreteness.csv")),
    ("imageability", include_str!("../data/lexicons/imageability.csv")),
    ("aoa", include_str!("../data/lexicons/aoa.csv")),
    ("frequency", include_str!("../data/lexicons/frequency.csv")),
    ("familiarity", include_str!("../data/lexicons/familiarity.csv")),
];

impl LexiconSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a table; `measures[i]` is served by column `i`.
    pub fn add(&mut self, table: LexiconTable, measures: &[Measure]) {
        let idx = self.tables.len();
        for (col, &m) in measures.iter().enumerate() {
            self.binding.insert(m, (idx, col));
        }
        self.tables.push(table);
    }

    /// The small sample tables shipped with the crate.
    pub fn bundled() -> Self {
        let mut set = LexiconSet::new();
        for (name, text) in BUNDLED {
            let (cols, measures): (Vec<String>, Vec<Measure>) = if name == "sentiment" {
                (
                    vec!["valence".into(), "arousal".into(), "dominance".into()],
                    vec![Measure::Valence, Measure::Arousal, Measure::Dominance],
                )
            } else {
                (vec!["value".into()], vec![name.parse().expect("bundled measure name")])
            };
            let table = LexiconTable::from_csv(name, text.as_bytes(), "word", &cols, name == "frequency")
                .expect("bundled lexicon is well formed");
            set.add(table, &measures);
        }
        set
    }

    pub fn from_sources(sources: &[LexiconSource], base: &Path) -> Result<Self> {
        let mut set = LexiconSet::new();
        for s in sources {
            let (table, measures) = s.load(base)?;
            set.add(table, &measures);
        }
        Ok(set)
    }

    pub fn lookup(&self, measure: Measure, word: &str) -> Option<f64> {
        let &(t, c) = self.binding.get(&measure)?;
        self.tables[t].get(word, c)
    }

    pub fn tables(&self) -> &[LexiconTable] {
        &self.tables
    }
}

// ---------------------------------------------------------------------------
// vectors

/// Per-dimension values before imputation; `None` marks a lexicon miss.
pub type RawValues = [Option<f64>; NUMERIC_DIM];

pub fn effective_pos(token: &Token) -> PosTag {
    match token.kind {
        TokenKind::FilledPause | TokenKind::UnfilledPause => PosTag::Pause,
        TokenKind::BoundaryStart | TokenKind::BoundaryEnd => PosTag::Boundary,
        TokenKind::Word => token.pos.unwrap_or(PosTag::Other),
    }
}

/// Raw lexicon values for a token. Pauses and boundaries are all zeros.
pub fn raw_values(token: &Token, lex: &LexiconSet) -> RawValues {
    let mut out = [Some(0.0); NUMERIC_DIM];
    if !token.is_word() {
        return out;
    }
    let surface = token.surface.as_str();
    let lemma_owned;
    let lemma = match &token.lemma {
        Some(l) => l.as_str(),
        None => {
            lemma_owned = lemmatize(surface);
            lemma_owned.as_str()
        }
    };
    out[0] = Some(letter_count(surface) as f64);
    out[1] = Some(syllable_count(surface) as f64);
    for m in Measure::ALL {
        let (d_surface, d_lemma) = m.dims();
        out[d_surface] = lex.lookup(m, surface);
        out[d_lemma] = lex.lookup(m, lemma);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenVector {
    pub numeric: [f64; NUMERIC_DIM],
    pub pos: PosTag,
}

impl TokenVector {
    pub fn pos_id(&self) -> usize {
        self.pos.index()
    }
}

/// Per-dimension word-token moments used for imputation and z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; NUMERIC_DIM],
    pub std: [f64; NUMERIC_DIM],
    /// Dimensions with zero spread; these are centred but not divided.
    pub constant: [bool; NUMERIC_DIM],
    pub n_words: usize,
}

impl NormalizationStats {
    /// Fits on Word tokens only. The mean is taken over observed values; the
    /// standard deviation over the imputed population.
    pub fn fit<'a, I>(raws: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a RawValues>,
    {
        let raws: Vec<&RawValues> = raws.into_iter().collect();
        if raws.is_empty() {
            return Err(Error::EmptyData("no word tokens to fit normalization".into()));
        }
        let n = raws.len() as f64;
        let mut mean = [0.0; NUMERIC_DIM];
        let mut std = [0.0; NUMERIC_DIM];
        let mut constant = [false; NUMERIC_DIM];
        for d in 0..NUMERIC_DIM {
            let (sum, cnt) = raws
                .iter()
                .filter_map(|r| r[d])
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            mean[d] = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
            let ss: f64 = raws
                .iter()
                .filter_map(|r| r[d])
                .map(|v| (v - mean[d]).powi(2))
                .sum();
            std[d] = (ss / n).sqrt();
            if std[d] <= 1e-12 {
                constant[d] = true;
                std[d] = 0.0;
            }
        }
        Ok(NormalizationStats {
            mean,
            std,
            constant,
            n_words: raws.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Impute missing values with the word mean only.
    Imputed,
    /// Impute, then z-score.
    Normalized,
}

/// Builds the token vector from precomputed raw values.
pub fn vectorize_raw(
    kind: TokenKind,
    pos: PosTag,
    raw: &RawValues,
    stats: Option<&NormalizationStats>,
    scaling: Scaling,
) -> Result<TokenVector> {
    if kind != TokenKind::Word {
        return Ok(TokenVector {
            numeric: [0.0; NUMERIC_DIM],
            pos,
        });
    }
    let stats = stats.ok_or(Error::MissingStats)?;
    let mut numeric = [0.0; NUMERIC_DIM];
    for d in 0..NUMERIC_DIM {
        let v = raw[d].unwrap_or(stats.mean[d]);
        numeric[d] = match scaling {
            Scaling::Imputed => v,
            Scaling::Normalized if stats.constant[d] => v - stats.mean[d],
            Scaling::Normalized => (v - stats.mean[d]) / stats.std[d],
        };
    }
    Ok(TokenVector { numeric, pos })
}

pub fn vectorize(
    token: &Token,
    lex: &LexiconSet,
    stats: Option<&NormalizationStats>,
    scaling: Scaling,
) -> Result<TokenVector> {
    vectorize_raw(token.kind, effective_pos(token), &raw_values(token, lex), stats, scaling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_transcript, Label, ParseOptions};
    use proptest::prelude::*;

    #[test]
    fn lemma_examples() {
        assert_eq!(lemmatize("stealing"), "steal");
        assert_eq!(lemmatize("cookie"), "cookie");
        assert_eq!(lemmatize("boys"), "boy");
        assert_eq!(lemmatize("cookies"), "cookie");
        assert_eq!(lemmatize("dishes"), "dish");
        assert_eq!(lemmatize("running"), "run");
        assert_eq!(lemmatize("making"), "make");
        assert_eq!(lemmatize("falling"), "fall");
        assert_eq!(lemmatize("washed"), "wash");
        assert_eq!(lemmatize("dried"), "dry");
        assert_eq!(lemmatize("is"), "be");
        assert_eq!(lemmatize("this"), "this");
        assert_eq!(lemmatize("thing"), "thing");
        assert_eq!(lemmatize("things"), "thing");
        assert_eq!(lemmatize("glass"), "glass");
    }

    proptest! {
        #[test]
        fn lemma_idempotent(w in "[a-z']{1,12}") {
            let once = lemmatize(&w);
            prop_assert_eq!(lemmatize(&once), once);
        }

        #[test]
        fn syllables_at_least_one(w in "[a-z]{1,12}") {
            prop_assert!(syllable_count(&w) >= 1);
        }
    }

    #[test]
    fn syllable_examples() {
        assert_eq!(syllable_count("cookie"), 2);
        assert_eq!(syllable_count("a"), 1);
        assert_eq!(syllable_count("stealing"), 2);
        assert_eq!(syllable_count("make"), 1);
        assert_eq!(syllable_count("table"), 2);
        assert_eq!(syllable_count("the"), 1);
        assert_eq!(syllable_count("boy"), 1);
        assert_eq!(syllable_count(""), 0);
        assert_eq!(syllable_count("123"), 0);
        assert_eq!(syllable_count("dishes"), 2);
    }

    fn tagged(raw: &str) -> Utterance {
        let t = parse_transcript(&format!("*PAR: {raw} ."), "t", Label::HC, &ParseOptions::default())
            .unwrap();
        pos_tag(&t.utterances[0], &LexiconTagger::bundled())
    }

    #[test]
    fn tagging() {
        let u = tagged("the boy is &uh stealing");
        let tags: Vec<PosTag> = u.tokens.iter().map(|t| t.pos.unwrap()).collect();
        assert_eq!(
            tags,
            [
                PosTag::Boundary,
                PosTag::Det,
                PosTag::Noun,
                PosTag::Verb,
                PosTag::Pause,
                PosTag::Verb,
                PosTag::Boundary
            ]
        );
        assert_eq!(u.tokens[5].lemma.as_deref(), Some("steal"));
        assert_eq!(LexiconTagger::empty().tag_word("quickly", "quickly", None), PosTag::Adv);
        assert_eq!(PassThroughTagger.tag_word("x", "x", Some(PosTag::Adj)), PosTag::Adj);
        assert_eq!(PassThroughTagger.tag_word("x", "x", None), PosTag::Other);
    }

    fn tiny_lexicons() -> LexiconSet {
        let mut set = LexiconSet::new();
        let aoa = LexiconTable::from_rows(
            "aoa",
            vec!["value".into()],
            vec![("boy".into(), vec![3.0]), ("cookie".into(), vec![5.0]), ("bad".into(), vec![f64::NAN])],
            false,
        );
        assert_eq!(aoa.coverage, Coverage { entries: 2, skipped_rows: 1 });
        set.add(aoa, &[Measure::Aoa]);
        let freq = LexiconTable::from_rows(
            "freq",
            vec!["value".into()],
            vec![("boy".into(), vec![(1f64).exp() - 1.0])],
            true,
        );
        set.add(freq, &[Measure::Frequency]);
        set
    }

    #[test]
    fn frequency_is_log_transformed() {
        let lex = tiny_lexicons();
        assert!((lex.lookup(Measure::Frequency, "boy").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pauses_are_zero() {
        let u = tagged("a &uh b");
        let v = vectorize(&u.tokens[2], &tiny_lexicons(), None, Scaling::Normalized).unwrap();
        assert_eq!(v.numeric, [0.0; NUMERIC_DIM]);
        assert_eq!(v.pos, PosTag::Pause);
        let b = vectorize(&u.tokens[0], &LexiconSet::new(), None, Scaling::Normalized).unwrap();
        assert_eq!(b.numeric, [0.0; NUMERIC_DIM]);
        assert_eq!(b.pos, PosTag::Boundary);
    }

    #[test]
    fn missing_stats_is_an_error() {
        let u = tagged("boy");
        assert!(matches!(
            vectorize(&u.tokens[1], &tiny_lexicons(), None, Scaling::Normalized),
            Err(Error::MissingStats)
        ));
    }

    #[test]
    fn imputation_and_normalization() {
        let lex = tiny_lexicons();
        let u = tagged("boy cookie zzyzx");
        let words: Vec<&Token> = u.words().collect();
        let raws: Vec<RawValues> = words.iter().map(|t| raw_values(t, &lex)).collect();
        let stats = NormalizationStats::fit(&raws).unwrap();
        let aoa = Measure::Aoa.dims().0;
        assert_eq!(stats.mean[aoa], 4.0);

        // unknown word: lexicon dims equal the means, letters/syllables from the surface
        let v = vectorize(words[2], &lex, Some(&stats), Scaling::Imputed).unwrap();
        assert_eq!(v.numeric[0], 5.0);
        assert_eq!(v.numeric[aoa], 4.0);
        let z = vectorize(words[2], &lex, Some(&stats), Scaling::Normalized).unwrap();
        assert_eq!(z.numeric[aoa], 0.0);

        let zs: Vec<TokenVector> = words
            .iter()
            .map(|t| vectorize(t, &lex, Some(&stats), Scaling::Normalized).unwrap())
            .collect();
        for d in 0..NUMERIC_DIM {
            let m: f64 = zs.iter().map(|v| v.numeric[d]).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-9, "dim {d} mean {m}");
            if !stats.constant[d] {
                let var: f64 = zs.iter().map(|v| (v.numeric[d] - m).powi(2)).sum::<f64>() / 3.0;
                assert!((var.sqrt() - 1.0).abs() < 1e-9, "dim {d} std {}", var.sqrt());
            }
        }
    }

    #[test]
    fn bundled_set_loads() {
        let lex = LexiconSet::bundled();
        assert_eq!(lex.tables().len(), 6);
        assert!(lex.lookup(Measure::Valence, "cookie").is_some() || lex.lookup(Measure::Valence, "boy").is_some());
    }

    #[test]
    fn csv_with_named_columns() {
        let text = "Word,Other,Conc.M\nBoy,x,4.5\ncookie,y,NA\n";
        let src = LexiconSource::brysbaert_concreteness("x");
        let cols: Vec<String> = src.columns.values().cloned().collect();
        let t = LexiconTable::from_csv("c", text.as_bytes(), &src.word_column, &cols, false).unwrap();
        assert_eq!(t.get("boy", 0), Some(4.5));
        assert_eq!(t.get("cookie", 0), None);
        assert_eq!(t.coverage.skipped_rows, 1);
        assert!(LexiconTable::from_csv("c", text.as_bytes(), "word", &["nope".into()], false).is_err());
    }
}

//! Transcript-level features: the Original bank and the per-distance
//! aggregates, plus median/IQR scaling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{count_pauses, Corpus, Label, PosTag, Token, Transcript};
use crate::error::{Error, Result};
use crate::lexicon::{effective_pos, lemmatize, letter_count, raw_values, syllable_count, LexiconSet, Measure, DIM_NAMES, NUMERIC_DIM};
use crate::subseq::{extract_distance_tokens, ExtractOptions, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    #[serde(rename = "F-D1")]
    FD1,
    #[serde(rename = "F-D2")]
    FD2,
    #[serde(rename = "F-D3")]
    FD3,
}

impl Provenance {
    pub fn distance(d: usize) -> Result<Provenance> {
        match d {
            1 => Ok(Provenance::FD1),
            2 => Ok(Provenance::FD2),
            3 => Ok(Provenance::FD3),
            _ => Err(Error::Config(format!("distance must be 1, 2 or 3 (got {d})"))),
        }
    }

    /// Column-name prefix.
    pub fn prefix(self) -> &'static str {
        match self {
            Provenance::Original => "Orig",
            Provenance::FD1 => "FD1",
            Provenance::FD2 => "FD2",
            Provenance::FD3 => "FD3",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Original => "Original",
            Provenance::FD1 => "F-D1",
            Provenance::FD2 => "F-D2",
            Provenance::FD3 => "F-D3",
        })
    }
}

/// The transcript-level feature sets compared in classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSet {
    Original,
    OriginalSelected,
    PlusFD1,
    PlusFD2,
    PlusFD3,
    PlusFC2,
    PlusFC3,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 7] = [
        FeatureSet::Original,
        FeatureSet::OriginalSelected,
        FeatureSet::PlusFD1,
        FeatureSet::PlusFD2,
        FeatureSet::PlusFD3,
        FeatureSet::PlusFC2,
        FeatureSet::PlusFC3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Original => "Original",
            FeatureSet::OriginalSelected => "Original w/ selection",
            FeatureSet::PlusFD1 => "Original+F-D1",
            FeatureSet::PlusFD2 => "Original+F-D2",
            FeatureSet::PlusFD3 => "Original+F-D3",
            FeatureSet::PlusFC2 => "Original+F-C2",
            FeatureSet::PlusFC3 => "Original+F-C3",
        }
    }

    /// Provenances whose columns compete in top-k selection; empty when
    /// there is no selection step.
    pub fn extension(self) -> Vec<Provenance> {
        use Provenance::*;
        match self {
            FeatureSet::Original => vec![],
            FeatureSet::OriginalSelected => vec![Original],
            FeatureSet::PlusFD1 => vec![FD1],
            FeatureSet::PlusFD2 => vec![FD2],
            FeatureSet::PlusFD3 => vec![FD3],
            FeatureSet::PlusFC2 => vec![FD1, FD2],
            FeatureSet::PlusFC3 => vec![FD1, FD2, FD3],
        }
    }

    /// Distances needed to build this set.
    pub fn distances(self) -> Vec<usize> {
        self.extension()
            .iter()
            .filter_map(|p| match p {
                Provenance::FD1 => Some(1),
                Provenance::FD2 => Some(2),
                Provenance::FD3 => Some(3),
                Provenance::Original => None,
            })
            .collect()
    }

    /// Sets that only use aggregates at the given distances.
    pub fn for_distances(distances: &[usize]) -> Vec<FeatureSet> {
        FeatureSet::ALL
            .into_iter()
            .filter(|s| s.distances().iter().all(|d| distances.contains(d)))
            .collect()
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureSet::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown feature set `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub provenance: Provenance,
}

impl Column {
    pub fn qualified(&self) -> String {
        format!("{}.{}", self.provenance.prefix(), self.name)
    }
}

/// Rows are transcripts; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub groups: Vec<String>,
    pub labels: Vec<Label>,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl FeatureTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_values(&self, c: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[c]).collect()
    }

    pub fn columns_of(&self, prov: Provenance) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&c| self.columns[c].provenance == prov)
            .collect()
    }

    pub fn find(&self, qualified: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.qualified() == qualified)
    }

    pub fn select(&self, cols: &[usize]) -> FeatureTable {
        FeatureTable {
            ids: self.ids.clone(),
            groups: self.groups.clone(),
            labels: self.labels.clone(),
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
        }
    }

    /// Header `id,participant,label,<Prefix.name>...`; missing cells empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "participant".into(), "label".into()];
        header.extend(self.columns.iter().map(Column::qualified));
        wtr.write_record(&header)?;
        for i in 0..self.rows.len() {
            let mut rec = vec![self.ids[i].clone(), self.groups[i].clone(), self.labels[i].to_string()];
            rec.extend(self.rows[i].iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the format written by `write_csv`; `#` lines are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<FeatureTable> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 {
            return Err(Error::Data("feature table needs id, participant, label columns".into()));
        }
        let columns = headers
            .iter()
            .skip(3)
            .map(|h| {
                let (prefix, name) = h
                    .split_once('.')
                    .ok_or_else(|| Error::Data(format!("column `{h}` lacks a provenance prefix")))?;
                let provenance = match prefix {
                    "Orig" => Provenance::Original,
                    "FD1" => Provenance::FD1,
                    "FD2" => Provenance::FD2,
                    "FD3" => Provenance::FD3,
                    _ => return Err(Error::Data(format!("unknown provenance prefix `{prefix}`"))),
                };
                Ok(Column {
                    name: name.to_string(),
                    provenance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut t = FeatureTable {
            ids: vec![],
            groups: vec![],
            labels: vec![],
            columns,
            rows: vec![],
        };
        for rec in rdr.records() {
            let rec = rec?;
            t.ids.push(rec[0].to_string());
            t.groups.push(rec[1].to_string());
            t.labels.push(rec[2].parse()?);
            let row = rec
                .iter()
                .skip(3)
                .map(|v| {
                    if v.is_empty() {
                        Ok(None)
                    } else {
                        v.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::Data(format!("bad number `{v}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            t.rows.push(row);
        }
        Ok(t)
    }
}

/// Shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

// ---------------------------------------------------------------------------
// Original bank

/// Cookie Theft picture content words.
pub const DEFAULT_INFO_UNITS: &[&str] = &[
    "boy", "girl", "woman", "mother", "lady", "cookie", "jar", "stool", "sink", "water", "dish", "plate", "cup",
    "window", "curtain", "cupboard", "cabinet", "kitchen", "counter", "floor", "fall", "steal", "wash", "dry",
    "overflow", "spill", "reach", "tip", "outside", "garden",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub info_units: Vec<String>,
    pub split_sides: bool,
    pub extract: ExtractOptions,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            info_units: DEFAULT_INFO_UNITS.iter().map(|s| s.to_string()).collect(),
            split_sides: false,
            extract: ExtractOptions::default(),
        }
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| a / b)
}

/// Speech-graph measures over the word sequence (consecutive words linked).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechGraph {
    pub nodes: usize,
    pub edges: usize,
    pub self_loops: usize,
    pub parallel_edges: usize,
    pub avg_degree: f64,
    pub largest_scc: usize,
}

pub fn speech_graph(words: &[&str]) -> SpeechGraph {
    let mut g: DiGraph<(), ()> = DiGraph::new();
    let mut index = HashMap::new();
    for w in words {
        index.entry(*w).or_insert_with(|| g.add_node(()));
    }
    let mut mult: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut self_loops = 0;
    for pair in words.windows(2) {
        let (a, b) = (index[pair[0]], index[pair[1]]);
        if a == b {
            self_loops += 1;
        }
        *mult.entry((a.index(), b.index())).or_default() += 1;
    }
    for &(a, b) in mult.keys() {
        g.add_edge(NodeIndex::new(a), NodeIndex::new(b), ());
    }
    let nodes = index.len();
    let edges = words.len().saturating_sub(1);
    SpeechGraph {
        nodes,
        edges,
        self_loops,
        parallel_edges: mult.values().map(|m| m - 1).sum(),
        avg_degree: if nodes > 0 { 2.0 * edges as f64 / nodes as f64 } else { 0.0 },
        largest_scc: tarjan_scc(&g).iter().map(Vec::len).max().unwrap_or(0),
    }
}

/// Names of the Original columns, in output order.
pub fn original_names() -> Vec<String> {
    let mut n: Vec<String> = [
        "word_count",
        "utterance_count",
        "unique_words",
        "type_token_ratio",
        "hapax_ratio",
        "brunet_index",
        "honore_statistic",
        "avg_letters",
        "avg_syllables",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in [
        Measure::Concreteness,
        Measure::Imageability,
        Measure::Aoa,
        Measure::Frequency,
        Measure::Familiarity,
    ] {
        n.push(format!("avg_{}", m.name()));
        n.push(format!("avg_{}_lemma", m.name()));
    }
    for scope in ["", "_lemma", "_nouns", "_verbs"] {
        for m in [Measure::Valence, Measure::Arousal, Measure::Dominance] {
            n.push(format!("avg_{}{scope}", m.name()));
        }
    }
    for tag in PosTag::WORD_TAGS {
        n.push(format!("count_{}", tag.name().to_lowercase()));
        n.push(format!("ratio_{}", tag.name().to_lowercase()));
    }
    n.extend(
        [
            "noun_verb_ratio",
            "pronoun_noun_ratio",
            "filled_pauses",
            "unfilled_pauses",
            "total_pauses",
            "filled_pause_share",
            "pause_word_ratio",
            "pauses_per_utterance",
            "graph_nodes",
            "graph_edges",
            "graph_self_loops",
            "graph_parallel_edges",
            "graph_avg_degree",
            "graph_largest_scc",
            "info_unit_hits",
            "info_unit_distinct",
            "syntax_proxy_mean_utterance_length",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    n
}

/// The Original feature row; all-missing for a transcript without words.
pub fn original_features(t: &Transcript, lex: &LexiconSet, opts: &FeatureOptions) -> Vec<Option<f64>> {
    let names = original_names();
    let words: Vec<&Token> = t.words().collect();
    if words.is_empty() {
        return vec![None; names.len()];
    }
    let n = words.len() as f64;
    let surfaces: Vec<&str> = words.iter().map(|w| w.surface.as_str()).collect();
    let lemmas: Vec<String> = words
        .iter()
        .map(|w| w.lemma.clone().unwrap_or_else(|| lemmatize(&w.surface)))
        .collect();
    let tags: Vec<PosTag> = words.iter().map(|w| effective_pos(w)).collect();
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in &surfaces {
        *freq.entry(s).or_default() += 1;
    }
    let v = freq.len() as f64;
    let hapax = freq.values().filter(|&&c| c == 1).count() as f64;

    // spoken tokens: words plus pauses
    let spoken = t.tokens().filter(|tok| !tok.kind.is_boundary()).count() as f64;
    let mut row: Vec<Option<f64>> = vec![
        Some(spoken),
        Some(t.utterances.len() as f64),
        Some(v),
        Some(v / n),
        Some(hapax / n),
        Some(n.powf(v.powf(-0.165))),
        (hapax < v).then(|| 100.0 * n.ln() / (1.0 - hapax / v)),
        mean(surfaces.iter().map(|s| letter_count(s) as f64)),
        mean(surfaces.iter().map(|s| syllable_count(s) as f64)),
    ];
    let avg_measure = |m: Measure, lemma: bool, filter: Option<PosTag>| {
        mean((0..words.len()).filter(|&i| filter.is_none_or(|f| tags[i] == f)).filter_map(|i| {
            lex.lookup(m, if lemma { &lemmas[i] } else { surfaces[i] })
        }))
    };
    for m in [
        Measure::Concreteness,
        Measure::Imageability,
        Measure::Aoa,
        Measure::Frequency,
        Measure::Familiarity,
    ] {
        row.push(avg_measure(m, false, None));
        row.push(avg_measure(m, true, None));
    }
    for (lemma, filter) in [(false, None), (true, None), (false, Some(PosTag::Noun)), (false, Some(PosTag::Verb))] {
        for m in [Measure::Valence, Measure::Arousal, Measure::Dominance] {
            row.push(avg_measure(m, lemma, filter));
        }
    }
    let count = |tag: PosTag| tags.iter().filter(|&&t| t == tag).count() as f64;
    for tag in PosTag::WORD_TAGS {
        row.push(Some(count(tag)));
        row.push(Some(count(tag) / n));
    }
    row.push(ratio(count(PosTag::Noun), count(PosTag::Verb)));
    row.push(ratio(count(PosTag::Pron), count(PosTag::Noun)));
    let pc = count_pauses(t);
    row.push(Some(pc.filled as f64));
    row.push(Some(pc.unfilled as f64));
    row.push(Some(pc.total as f64));
    row.push(ratio(pc.filled as f64, pc.total as f64));
    row.push(Some(pc.total as f64 / spoken));
    row.push(ratio(pc.total as f64, t.utterances.len() as f64));
    let g = speech_graph(&surfaces);
    row.extend(
        [
            g.nodes as f64,
            g.edges as f64,
            g.self_loops as f64,
            g.parallel_edges as f64,
            g.avg_degree,
            g.largest_scc as f64,
        ]
        .map(Some),
    );
    let units: HashSet<&str> = opts.info_units.iter().map(String::as_str).collect();
    let mut hit = HashSet::new();
    let mut hits = 0;
    for (s, l) in surfaces.iter().zip(&lemmas) {
        if let Some(u) = units.get(s).or_else(|| units.get(l.as_str())) {
            hits += 1;
            hit.insert(*u);
        }
    }
    row.push(Some(hits as f64));
    row.push(Some(hit.len() as f64));
    row.push(ratio(n, t.utterances.len() as f64));
    debug_assert_eq!(row.len(), names.len());
    row
}

// ---------------------------------------------------------------------------
// distance aggregates

/// Column names for one distance (without provenance prefix).
pub fn aggregate_names(split_sides: bool) -> Vec<String> {
    let base: Vec<String> = DIM_NAMES
        .iter()
        .map(|d| format!("avg_{d}"))
        .chain(PosTag::WORD_TAGS.iter().map(|t| format!("pos_ratio_{}", t.name().to_lowercase())))
        .collect();
    if !split_sides {
        return base;
    }
    ["before", "after"]
        .iter()
        .flat_map(|side| base.iter().map(move |b| format!("{side}_{b}")))
        .collect()
}

/// Mean of one token-level dimension over the non-pause, non-boundary tokens
/// in `pool`, skipping lexicon misses.
pub fn aggregate_continuous(pool: &[&Token], dim: usize, lex: &LexiconSet) -> Option<f64> {
    mean(pool.iter().filter(|t| t.is_word()).filter_map(|t| raw_values(t, lex)[dim]))
}

/// count(pos in pool) / (total pauses × share of transcript words with pos).
pub fn aggregate_pos_ratio(pool: &[&Token], tag: PosTag, total_pauses: usize, word_tags: &[PosTag]) -> Option<f64> {
    if word_tags.is_empty() {
        return None;
    }
    let share = word_tags.iter().filter(|&&t| t == tag).count() as f64 / word_tags.len() as f64;
    let denom = total_pauses as f64 * share;
    let count = pool.iter().filter(|t| t.is_word() && effective_pos(t) == tag).count() as f64;
    ratio(count, denom)
}

fn aggregate_block(pool: &[&Token], lex: &LexiconSet, total_pauses: usize, word_tags: &[PosTag]) -> Vec<Option<f64>> {
    (0..NUMERIC_DIM)
        .map(|d| aggregate_continuous(pool, d, lex))
        .chain(
            PosTag::WORD_TAGS
                .iter()
                .map(|&tag| aggregate_pos_ratio(pool, tag, total_pauses, word_tags)),
        )
        .collect()
}

pub fn aggregate_features(t: &Transcript, d: usize, lex: &LexiconSet, opts: &FeatureOptions) -> Vec<Option<f64>> {
    let found = extract_distance_tokens(t, d, opts.extract);
    let total_pauses = count_pauses(t).total;
    let word_tags: Vec<PosTag> = t.words().map(effective_pos).collect();
    if opts.split_sides {
        [Side::Before, Side::After]
            .iter()
            .flat_map(|&side| {
                let pool: Vec<&Token> = found.iter().filter(|(_, s)| *s == side).map(|(t, _)| t).collect();
                aggregate_block(&pool, lex, total_pauses, &word_tags)
            })
            .collect()
    } else {
        let pool: Vec<&Token> = found.iter().map(|(t, _)| t).collect();
        aggregate_block(&pool, lex, total_pauses, &word_tags)
    }
}

/// Original columns plus aggregates for each requested distance. The corpus
/// must already be POS-tagged.
pub fn build_feature_table(corpus: &Corpus, lex: &LexiconSet, distances: &[usize], opts: &FeatureOptions) -> Result<FeatureTable> {
    let mut columns: Vec<Column> = original_names()
        .into_iter()
        .map(|name| Column {
            name,
            provenance: Provenance::Original,
        })
        .collect();
    let mut dists = distances.to_vec();
    dists.sort_unstable();
    dists.dedup();
    for &d in &dists {
        let provenance = Provenance::distance(d)?;
        columns.extend(aggregate_names(opts.split_sides).into_iter().map(|name| Column { name, provenance }));
    }
    let rows: Vec<Vec<Option<f64>>> = corpus
        .transcripts()
        .par_iter()
        .map(|t| {
            let mut row = original_features(t, lex, opts);
            for &d in &dists {
                row.extend(aggregate_features(t, d, lex, opts));
            }
            row
        })
        .collect();
    let ts = corpus.transcripts();
    Ok(FeatureTable {
        ids: ts.iter().map(|t| t.id.clone()).collect(),
        groups: ts.iter().map(|t| t.participant_id.clone()).collect(),
        labels: ts.iter().map(|t| t.label).collect(),
        columns,
        rows,
    })
}

// ---------------------------------------------------------------------------
// scaling

/// Quantile by linear interpolation between order statistics at (n-1)q.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median-centring and IQR scaling, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScaler {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
}

impl RobustScaler {
    /// Columns with no observed training value get median 0 and IQR 0.
    pub fn fit(rows: &[&[Option<f64>]]) -> Result<RobustScaler> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptyData("no training rows to fit the scaler".into()));
        };
        let n_cols = first.len();
        let mut median = Vec::with_capacity(n_cols);
        let mut iqr = Vec::with_capacity(n_cols);
        let mut col = Vec::with_capacity(rows.len());
        for c in 0..n_cols {
            col.clear();
            col.extend(rows.iter().filter_map(|r| r[c]));
            if col.is_empty() {
                median.push(0.0);
                iqr.push(0.0);
                continue;
            }
            col.sort_by(f64::total_cmp);
            median.push(quantile(&col, 0.5));
            iqr.push(quantile(&col, 0.75) - quantile(&col, 0.25));
        }
        Ok(RobustScaler { median, iqr })
    }

    pub fn fit_table(table: &FeatureTable, train: &[usize]) -> Result<RobustScaler> {
        let rows: Vec<&[Option<f64>]> = train.iter().map(|&i| table.rows[i].as_slice()).collect();
        Self::fit(&rows)
    }

    pub fn transform_row(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(c, v)| {
                let x = v.unwrap_or(self.median[c]) - self.median[c];
                if self.iqr[c] > 0.0 {
                    x / self.iqr[c]
                } else {
                    x
                }
            })
            .collect()
    }

    pub fn transform(&self, table: &FeatureTable, rows: &[usize]) -> Vec<Vec<f64>> {
        rows.iter().map(|&i| self.transform_row(&table.rows[i])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_transcript, ParseOptions};
    use crate::lexicon::{tag_transcript, LexiconTable, LexiconTagger};
    use proptest::prelude::*;

    fn transcript(body: &str) -> Transcript {
        let raw: String = body.lines().map(|l| format!("*PAR:\t{l}\n")).collect();
        let t = parse_transcript(&raw, "t", Label::CI, &ParseOptions::default()).unwrap();
        tag_transcript(&t, &LexiconTagger::bundled())
    }

    fn col(names: &[String], row: &[Option<f64>], name: &str) -> Option<f64> {
        row[names.iter().position(|n| n == name).unwrap()]
    }

    #[test]
    fn running_example_original() {
        let t = transcript("the boy is &uh stealing a cookie .");
        let names = original_names();
        let row = original_features(&t, &LexiconSet::new(), &FeatureOptions::default());
        assert_eq!(row.len(), names.len());
        assert_eq!(col(&names, &row, "word_count"), Some(7.0));
        assert_eq!(col(&names, &row, "pause_word_ratio"), Some(1.0 / 7.0));
        assert_eq!(col(&names, &row, "filled_pauses"), Some(1.0));
        assert_eq!(col(&names, &row, "info_unit_hits"), Some(3.0));
    }

    #[test]
    fn type_token_ratio() {
        let t = transcript("the the the .");
        let names = original_names();
        let row = original_features(&t, &LexiconSet::new(), &FeatureOptions::default());
        assert_eq!(col(&names, &row, "type_token_ratio"), Some(1.0 / 3.0));
        assert_eq!(col(&names, &row, "graph_self_loops"), Some(2.0));
    }

    #[test]
    fn graph_fixture() {
        let g = speech_graph(&["a", "b", "a"]);
        assert_eq!((g.nodes, g.edges, g.self_loops, g.parallel_edges), (2, 2, 0, 0));
        assert_eq!(g.largest_scc, 2);
        let g = speech_graph(&["a", "b", "a", "b", "c"]);
        assert_eq!((g.nodes, g.edges, g.parallel_edges, g.largest_scc), (3, 4, 1, 2));
        assert_eq!(g.avg_degree, 8.0 / 3.0);
    }

    #[test]
    fn empty_transcript_is_all_missing() {
        let t = transcript("&uh .");
        let row = original_features(&t, &LexiconSet::new(), &FeatureOptions::default());
        assert!(row.iter().all(Option::is_none));
    }

    #[test]
    fn d1_letter_mean() {
        let t = transcript("the boy is &uh stealing a cookie .");
        let found = extract_distance_tokens(&t, 1, ExtractOptions::default());
        let pool: Vec<&Token> = found.iter().map(|(t, _)| t).collect();
        assert_eq!(aggregate_continuous(&pool, 0, &LexiconSet::new()), Some(5.0));
        let free = transcript("the boy is stealing .");
        let row = aggregate_features(&free, 1, &LexiconSet::new(), &FeatureOptions::default());
        assert!(row[..NUMERIC_DIM].iter().all(Option::is_none));
        assert!(row[NUMERIC_DIM..].iter().all(Option::is_none));
    }

    #[test]
    fn pauses_excluded_from_pool() {
        // &um sits at D1 of &uh (and vice versa)
        let t = transcript("the boy &uh &um is stealing .");
        let found = extract_distance_tokens(&t, 1, ExtractOptions::default());
        assert!(found.iter().any(|(t, _)| t.is_pause()));
        let pool: Vec<&Token> = found.iter().map(|(t, _)| t).collect();
        // boy (3) and is (2)
        assert_eq!(aggregate_continuous(&pool, 0, &LexiconSet::new()), Some(2.5));
    }

    #[test]
    fn lexicon_means_skip_misses() {
        let mut lex = LexiconSet::new();
        lex.add(
            LexiconTable::from_rows("aoa", vec!["value".into()], vec![("boy".into(), vec![4.0])], false),
            &[Measure::Aoa],
        );
        let t = transcript("a boy &uh is a dog .");
        let found = extract_distance_tokens(&t, 1, ExtractOptions::default());
        let pool: Vec<&Token> = found.iter().map(|(t, _)| t).collect();
        assert_eq!(aggregate_continuous(&pool, Measure::Aoa.dims().0, &lex), Some(4.0));
    }

    #[test]
    fn pos_ratio_fixture() {
        // 10 words, 4 nouns, 2 pauses, 2 nouns at D1
        let tags = [
            PosTag::Noun,
            PosTag::Noun,
            PosTag::Noun,
            PosTag::Noun,
            PosTag::Verb,
            PosTag::Verb,
            PosTag::Det,
            PosTag::Det,
            PosTag::Adj,
            PosTag::Adv,
        ];
        let mut n1 = Token::word("boy");
        n1.pos = Some(PosTag::Noun);
        let n2 = n1.clone();
        let mut v = Token::word("is");
        v.pos = Some(PosTag::Verb);
        let pool = [&n1, &n2, &v];
        assert_eq!(aggregate_pos_ratio(&pool, PosTag::Noun, 2, &tags), Some(2.5));
        assert_eq!(aggregate_pos_ratio(&pool, PosTag::Noun, 0, &tags), None);
        assert_eq!(aggregate_pos_ratio(&pool, PosTag::Pron, 2, &tags), None);
    }

    #[test]
    fn pos_ratio_invariant_to_duplication() {
        let t = transcript("the boy &uh is stealing a cookie .\nthe girl (.) wants &um one .");
        let mut doubled = t.clone();
        doubled.utterances.extend(t.utterances.clone());
        let opts = FeatureOptions::default();
        for d in 1..=3 {
            let a = aggregate_features(&t, d, &LexiconSet::new(), &opts);
            let b = aggregate_features(&doubled, d, &LexiconSet::new(), &opts);
            for (x, y) in a[NUMERIC_DIM..].iter().zip(&b[NUMERIC_DIM..]) {
                match (x, y) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                    (None, None) => {}
                    _ => panic!("{x:?} vs {y:?}"),
                }
            }
        }
    }

    fn tiny_corpus() -> Corpus {
        Corpus::new(vec![
            transcript("the boy &uh is stealing a cookie ."),
            Transcript {
                id: "u".into(),
                label: Label::HC,
                ..transcript("the girl (.) wants &um one .")
            },
        ])
    }

    #[test]
    fn table_columns_follow_distances() {
        let opts = FeatureOptions::default();
        let t = build_feature_table(&tiny_corpus(), &LexiconSet::new(), &[2], &opts).unwrap();
        assert!(t.columns.iter().all(|c| c.provenance != Provenance::FD3 && c.provenance != Provenance::FD1));
        assert_eq!(t.columns_of(Provenance::FD2).len(), 29);
        assert!(t.find("FD2.avg_aoa").is_some());
        let c3 = build_feature_table(&tiny_corpus(), &LexiconSet::new(), &[1, 2, 3], &opts).unwrap();
        let d2: HashSet<String> = t.columns.iter().map(Column::qualified).collect();
        let all: HashSet<String> = c3.columns.iter().map(Column::qualified).collect();
        assert!(d2.is_subset(&all) && d2.len() < all.len());
        let split = FeatureOptions {
            split_sides: true,
            ..opts
        };
        let s = build_feature_table(&tiny_corpus(), &LexiconSet::new(), &[2], &split).unwrap();
        assert_eq!(s.columns_of(Provenance::FD2).len(), 58);
        assert!(s.find("FD2.before_avg_aoa").is_some());
    }

    #[test]
    fn csv_round_trip() {
        let t = build_feature_table(&tiny_corpus(), &LexiconSet::bundled(), &[1, 2], &FeatureOptions::default()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = FeatureTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn scaler_fixtures() {
        let rows: Vec<Vec<Option<f64>>> = (1..=5).map(|v| vec![Some(v as f64), Some(7.0)]).collect();
        let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = RobustScaler::fit(&refs).unwrap();
        let scaled: Vec<f64> = rows.iter().map(|r| s.transform_row(r)[0]).collect();
        assert_eq!(scaled, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(rows.iter().all(|r| s.transform_row(r)[1] == 0.0));

        let rows = [vec![Some(1.0)], vec![None], vec![Some(3.0)]];
        let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = RobustScaler::fit(&refs).unwrap();
        assert_eq!(s.median[0], 2.0);
        assert_eq!(s.transform_row(&rows[1]), vec![0.0]);
        assert!(RobustScaler::fit(&[]).is_err());
    }

    proptest! {
        #[test]
        fn quantile_matches_brute_force(mut xs in prop::collection::vec(-100.0f64..100.0, 1..40), q in 0.0f64..=1.0) {
            xs.sort_by(f64::total_cmp);
            let got = quantile(&xs, q);
            prop_assert!(got >= xs[0] && got <= xs[xs.len() - 1]);
            // at the order-statistic grid points the interpolation is exact
            let k = ((xs.len() - 1) as f64 * q).round() as usize;
            let at = quantile(&xs, k as f64 / (xs.len() - 1).max(1) as f64);
            prop_assert!((at - xs[k]).abs() <= 1e-9);
        }
    }
}

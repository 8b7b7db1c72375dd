//! Synthetic corpora with class signal planted at one distance from pauses.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, PosTag, Token, Transcript, Utterance};
use crate::error::{Error, Result};
use crate::lexicon::{lemmatize, LexiconSet, LexiconSource, LexiconTable, LexiconTagger, Measure};
use crate::subseq::{anchor_pauses, working_tokens, ExtractOptions};

/// Largest distance the downstream features look at.
const MAX_DISTANCE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_transcripts: usize,
    /// Share of CI transcripts.
    pub ci_fraction: f64,
    pub vocab_size: usize,
    pub utterances: [usize; 2],
    /// Words per utterance (inclusive range).
    pub words: [usize; 2],
    /// Probability that an utterance carries one pause.
    pub pause_prob: f64,
    /// Probability of a second pause when the utterance is long enough.
    pub second_pause_prob: f64,
    /// Share of pauses that are filled (`&uh`, `&um`).
    pub filled_share: f64,
    pub signal_distance: usize,
    /// Shift of the designated measures at signal positions, in vocabulary sd.
    pub signal_strength: f64,
    pub signal_measures: Vec<Measure>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_transcripts: 200,
            ci_fraction: 0.5,
            vocab_size: 1500,
            utterances: [8, 14],
            words: [3, 12],
            pause_prob: 0.6,
            second_pause_prob: 0.3,
            filled_share: 0.5,
            signal_distance: 2,
            signal_strength: 1.5,
            signal_measures: vec![Measure::Frequency, Measure::Aoa],
            seed: 0,
        }
    }
}

/// Direction of the planted shift: rarer and later-acquired words.
fn direction(m: Measure) -> f64 {
    if m == Measure::Frequency {
        -1.0
    } else {
        1.0
    }
}

/// Location and scale used to turn a z value into a lexicon value.
fn norm_scale(m: Measure) -> (f64, f64) {
    match m {
        Measure::Valence => (5.0, 1.3),
        Measure::Arousal => (4.2, 1.0),
        Measure::Dominance => (5.0, 1.0),
        Measure::Concreteness => (3.0, 1.0),
        Measure::Imageability => (4.5, 1.2),
        Measure::Aoa => (7.0, 2.5),
        Measure::Frequency => (7.0, 2.0),
        Measure::Familiarity => (5.0, 1.0),
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.n_transcripts == 0 {
            return bad("n_transcripts must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.ci_fraction) {
            return bad(format!("ci_fraction {} outside [0, 1]", self.ci_fraction));
        }
        if !(1..=MAX_DISTANCE).contains(&self.signal_distance) {
            return bad(format!("signal_distance must be 1, 2 or 3 (got {})", self.signal_distance));
        }
        if !self.signal_strength.is_finite() || self.signal_strength < 0.0 {
            return bad(format!("signal_strength {} must be finite and non-negative", self.signal_strength));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2".into());
        }
        for (name, r) in [("utterances", self.utterances), ("words", self.words)] {
            if r[0] == 0 || r[0] > r[1] {
                return bad(format!("{name} range {:?} is empty or starts at 0", r));
            }
        }
        for (name, p) in [
            ("pause_prob", self.pause_prob),
            ("second_pause_prob", self.second_pause_prob),
            ("filled_share", self.filled_share),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.signal_measures.is_empty() && self.signal_strength > 0.0 {
            return bad("signal_strength > 0 needs at least one signal measure".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub word: String,
    pub pos: PosTag,
    /// Standard-normal draw per measure, in `Measure::ALL` order.
    pub z: [f64; 8],
}

impl VocabEntry {
    pub fn value(&self, m: Measure) -> f64 {
        let i = Measure::ALL.iter().position(|x| *x == m).expect("measure listed");
        let (loc, scale) = norm_scale(m);
        loc + scale * self.z[i]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub vocab: Vec<VocabEntry>,
    /// Sampling weights used at signal positions in CI transcripts.
    pub tilted: Vec<f64>,
    /// Realized mean shift (in sd) of each signal measure under `tilted`.
    pub realized_shift: Vec<(Measure, f64)>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

const TAG_WEIGHTS: [(PosTag, u32); 11] = [
    (PosTag::Noun, 30),
    (PosTag::Verb, 20),
    (PosTag::Adj, 10),
    (PosTag::Adv, 6),
    (PosTag::Pron, 10),
    (PosTag::Det, 10),
    (PosTag::Adp, 6),
    (PosTag::Conj, 3),
    (PosTag::Intj, 3),
    (PosTag::Num, 1),
    (PosTag::Other, 1),
];

fn pseudo_word(rng: &mut impl Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| format!("{}{}", ONSETS[rng.random_range(0..ONSETS.len())], NUCLEI[rng.random_range(0..NUCLEI.len())]))
        .collect()
}

fn build_vocab(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Vec<VocabEntry>> {
    let total: u32 = TAG_WEIGHTS.iter().map(|t| t.1).sum();
    let mut seen = std::collections::HashSet::new();
    let mut vocab = Vec::with_capacity(spec.vocab_size);
    let mut attempts = 0;
    while vocab.len() < spec.vocab_size {
        attempts += 1;
        if attempts > 50 * spec.vocab_size + 1000 {
            return Err(Error::Config(format!("cannot form {} distinct pseudo-words", spec.vocab_size)));
        }
        let w = pseudo_word(rng);
        if lemmatize(&w) != w || !seen.insert(w.clone()) {
            continue;
        }
        let mut pick = rng.random_range(0..total);
        let pos = TAG_WEIGHTS
            .iter()
            .find(|(_, wt)| {
                if pick < *wt {
                    true
                } else {
                    pick -= wt;
                    false
                }
            })
            .map(|t| t.0)
            .expect("weights cover the range");
        let mut z = [0.0; 8];
        for v in &mut z {
            *v = StandardNormal.sample(rng);
        }
        vocab.push(VocabEntry { word: w, pos, z });
    }
    // standardize over the vocabulary so shifts are in its own sd units
    for m in 0..8 {
        let n = vocab.len() as f64;
        let mean = vocab.iter().map(|e| e.z[m]).sum::<f64>() / n;
        let sd = (vocab.iter().map(|e| (e.z[m] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for e in &mut vocab {
            e.z[m] = if sd > 0.0 { (e.z[m] - mean) / sd } else { 0.0 };
        }
    }
    Ok(vocab)
}

/// Signed score whose exponential tilt moves every signal measure.
fn scores(vocab: &[VocabEntry], measures: &[Measure]) -> Vec<f64> {
    vocab
        .iter()
        .map(|e| {
            measures
                .iter()
                .map(|&m| direction(m) * e.z[Measure::ALL.iter().position(|x| *x == m).expect("listed")])
                .sum()
        })
        .collect()
}

fn tilted_weights(s: &[f64], theta: f64) -> Vec<f64> {
    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = s.iter().map(|x| (theta * (x - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn shifts(vocab: &[VocabEntry], w: &[f64], measures: &[Measure]) -> Vec<(Measure, f64)> {
    measures
        .iter()
        .map(|&m| {
            let i = Measure::ALL.iter().position(|x| *x == m).expect("listed");
            (m, direction(m) * vocab.iter().zip(w).map(|(e, p)| p * e.z[i]).sum::<f64>())
        })
        .collect()
}

/// Tilt parameter giving a mean signed shift of `target` sd, by bisection.
fn calibrate(vocab: &[VocabEntry], measures: &[Measure], target: f64) -> Result<Vec<f64>> {
    let n = vocab.len();
    if target == 0.0 || measures.is_empty() {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let s = scores(vocab, measures);
    let mean_shift = |theta: f64| {
        let w = tilted_weights(&s, theta);
        let sh = shifts(vocab, &w, measures);
        sh.iter().map(|x| x.1).sum::<f64>() / sh.len() as f64
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_shift(hi) < target {
        hi *= 2.0;
        if hi > 1e4 {
            let w = tilted_weights(&s, hi);
            let worst = shifts(vocab, &w, measures)
                .into_iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one measure");
            return Err(Error::VocabularyTooSmall {
                dim: worst.0.name().to_string(),
                target,
                reached: worst.1,
            });
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_shift(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = tilted_weights(&s, hi);
    // each measure must get most of the way, not just the average
    for (m, sh) in shifts(vocab, &w, measures) {
        if sh < 0.9 * target {
            return Err(Error::VocabularyTooSmall {
                dim: m.name().to_string(),
                target,
                reached: sh,
            });
        }
    }
    Ok(w)
}

/// Inverse-CDF draw from a discrete distribution.
fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * cdf.last().copied().unwrap_or(1.0);
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    w.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Word,
    Filled,
    Unfilled,
}

/// Word/pause layout of one utterance (the same law for both classes).
fn skeleton(spec: &SyntheticSpec, rng: &mut impl Rng) -> Vec<Slot> {
    let n = rng.random_range(spec.words[0]..=spec.words[1]);
    let mut slots = vec![Slot::Word; n];
    let mut pauses: Vec<usize> = Vec::new();
    let pause_kind = |rng: &mut ChaCha8Rng| if rng.random::<f64>() < spec.filled_share { Slot::Filled } else { Slot::Unfilled };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    if local.random::<f64>() < spec.pause_prob {
        pauses.push(local.random_range(0..=n));
        // a second pause only where the two windows cannot overlap
        if local.random::<f64>() < spec.second_pause_prob {
            let p0 = pauses[0];
            let options: Vec<usize> = (0..=n).filter(|&q| q.abs_diff(p0) > 2 * MAX_DISTANCE).collect();
            if let Some(&q) = options.choose(&mut local) {
                pauses.push(q);
            }
        }
    }
    pauses.sort_unstable();
    for (shift, p) in pauses.into_iter().enumerate() {
        let kind = pause_kind(&mut local);
        slots.insert(p + shift, kind);
    }
    slots
}

fn render_slots(slots: &[Slot], words: &[usize], vocab: &[VocabEntry], rng: &mut impl Rng) -> Utterance {
    let mut wi = 0;
    let inner = slots
        .iter()
        .map(|s| match s {
            Slot::Word => {
                let e = &vocab[words[wi]];
                wi += 1;
                let mut t = Token::word(e.word.clone());
                t.pos = Some(e.pos);
                t
            }
            Slot::Filled => Token::filled_pause(if rng.random::<bool>() { "uh" } else { "um" }),
            Slot::Unfilled => Token::unfilled_pause(if rng.random::<bool>() { "(.)" } else { "(..)" }),
        })
        .collect();
    Utterance::from_inner("PAR", inner)
}

/// Word slots that sit exactly `d` from an anchoring pause and within the
/// feature range of no other pause at another distance.
fn signal_slots(u: &Utterance, d: usize) -> Vec<bool> {
    let tokens = working_tokens(u, ExtractOptions::default());
    let anchors = anchor_pauses(&tokens);
    let word_idx: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i].is_word()).collect();
    word_idx
        .iter()
        .map(|&i| {
            let dists: Vec<usize> = anchors.iter().map(|&p| p.abs_diff(i)).collect();
            dists.contains(&d) && dists.iter().all(|&x| x == d || x > MAX_DISTANCE)
        })
        .collect()
}

/// Generates the corpus. HC words are uniform over the vocabulary at every
/// position; CI words are uniform too except at signal slots, where they
/// come from the tilted distribution.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = build_vocab(spec, &mut rng)?;
    let tilted = calibrate(&vocab, &spec.signal_measures, spec.signal_strength)?;
    let realized_shift = shifts(&vocab, &tilted, &spec.signal_measures);
    let uniform_cdf = cumulative(&vec![1.0; vocab.len()]);
    let tilted_cdf = cumulative(&tilted);

    let n_ci = (spec.n_transcripts as f64 * spec.ci_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..spec.n_transcripts).map(|i| if i < n_ci { Label::CI } else { Label::HC }).collect();
    labels.shuffle(&mut rng);

    let mut transcripts = Vec::with_capacity(spec.n_transcripts);
    for (i, &label) in labels.iter().enumerate() {
        let n_utt = rng.random_range(spec.utterances[0]..=spec.utterances[1]);
        let mut utterances = Vec::with_capacity(n_utt);
        for _ in 0..n_utt {
            let slots = skeleton(spec, &mut rng);
            let n_words = slots.iter().filter(|s| **s == Slot::Word).count();
            // placeholder words to find the signal slots
            let probe = render_slots(&slots, &vec![0; n_words], &vocab, &mut ChaCha8Rng::seed_from_u64(0));
            let marked = signal_slots(&probe, spec.signal_distance);
            let words: Vec<usize> = marked
                .iter()
                .map(|&m| {
                    if m && label == Label::CI {
                        draw(&tilted_cdf, &mut rng)
                    } else {
                        draw(&uniform_cdf, &mut rng)
                    }
                })
                .collect();
            utterances.push(render_slots(&slots, &words, &vocab, &mut rng));
        }
        transcripts.push(Transcript {
            id: format!("syn{i:04}"),
            participant_id: format!("S{i:04}"),
            label,
            utterances,
        });
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(transcripts),
        vocab,
        tilted,
        realized_shift,
    })
}

impl SyntheticCorpus {
    /// Lexicon tables for every measure, keyed by the pseudo-words.
    pub fn lexicon(&self) -> LexiconSet {
        let mut set = LexiconSet::new();
        let sentiment = [Measure::Valence, Measure::Arousal, Measure::Dominance];
        set.add(
            LexiconTable::from_rows(
                "sentiment",
                sentiment.iter().map(|m| m.name().to_string()).collect(),
                self.vocab
                    .iter()
                    .map(|e| (e.word.clone(), sentiment.iter().map(|&m| e.value(m)).collect())),
                false,
            ),
            &sentiment,
        );
        for m in &Measure::ALL[3..] {
            set.add(
                LexiconTable::from_rows(
                    m.name(),
                    vec!["value".into()],
                    self.vocab.iter().map(|e| (e.word.clone(), vec![e.value(*m)])),
                    false,
                ),
                &[*m],
            );
        }
        set
    }

    pub fn tagger(&self) -> LexiconTagger {
        let mut t = LexiconTagger::empty();
        for e in &self.vocab {
            t.insert(&e.word, e.pos);
        }
        t
    }

    /// Writes `sentiment.csv`, one CSV per other measure and `pos.tsv` into
    /// `dir`, returning sources that load them back.
    pub fn write_lexicons(&self, dir: &Path) -> Result<Vec<LexiconSource>> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let write = |name: &str, header: &str, rows: Vec<String>| -> Result<PathBuf> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
            writeln!(f, "{header}")?;
            for r in rows {
                writeln!(f, "{r}")?;
            }
            Ok(path)
        };
        let fmt = |v: f64| format!("{v:?}");
        let mut sources = Vec::new();
        let sentiment = write(
            "sentiment.csv",
            "word,valence,arousal,dominance",
            self.vocab
                .iter()
                .map(|e| {
                    format!(
                        "{},{},{},{}",
                        e.word,
                        fmt(e.value(Measure::Valence)),
                        fmt(e.value(Measure::Arousal)),
                        fmt(e.value(Measure::Dominance))
                    )
                })
                .collect(),
        )?;
        let mut s = LexiconSource::simple(&sentiment, Measure::Valence);
        s.columns = [Measure::Valence, Measure::Arousal, Measure::Dominance]
            .into_iter()
            .map(|m| (m, m.name().to_string()))
            .collect();
        sources.push(s);
        for m in &Measure::ALL[3..] {
            let path = write(
                &format!("{}.csv", m.name()),
                "word,value",
                self.vocab.iter().map(|e| format!("{},{}", e.word, fmt(e.value(*m)))).collect(),
            )?;
            let mut src = LexiconSource::simple(&path, *m);
            src.log_transform = false;
            sources.push(src);
        }
        write(
            "pos.tsv",
            "# word\ttag",
            self.vocab.iter().map(|e| format!("{}\t{}", e.word, e.pos.name())).collect(),
        )?;
        Ok(sources)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{token_pools, welch_t_test};
    use crate::lexicon::tag_corpus;

    fn small(strength: f64, d: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_transcripts: 60,
            signal_strength: strength,
            signal_distance: d,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn exact_count_and_balance() {
        let s = generate_synthetic(&SyntheticSpec {
            n_transcripts: 10,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.corpus.len(), 10);
        assert_eq!(s.corpus.counts().ci, 5);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = generate_synthetic(&small(1.5, 2, 7)).unwrap();
        let b = generate_synthetic(&small(1.5, 2, 7)).unwrap();
        assert_eq!(a.corpus.to_json().unwrap(), b.corpus.to_json().unwrap());
        let c = generate_synthetic(&small(1.5, 2, 8)).unwrap();
        assert_ne!(a.corpus.to_json().unwrap(), c.corpus.to_json().unwrap());
    }

    #[test]
    fn realized_shift_matches_target() {
        let s = generate_synthetic(&small(1.5, 2, 0)).unwrap();
        let mean: f64 = s.realized_shift.iter().map(|x| x.1).sum::<f64>() / s.realized_shift.len() as f64;
        assert!((mean - 1.5).abs() < 1e-9, "{mean}");
        let zero = generate_synthetic(&small(0.0, 2, 0)).unwrap();
        assert!(zero.realized_shift.iter().all(|x| x.1.abs() < 1e-9));
    }

    #[test]
    fn tiny_vocabulary_is_rejected() {
        let spec = SyntheticSpec {
            vocab_size: 3,
            signal_strength: 5.0,
            ..small(5.0, 2, 0)
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::VocabularyTooSmall { .. })));
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        for spec in [
            SyntheticSpec { signal_distance: 4, ..Default::default() },
            SyntheticSpec { ci_fraction: 1.5, ..Default::default() },
            SyntheticSpec { words: [5, 2], ..Default::default() },
            SyntheticSpec { signal_strength: -1.0, ..Default::default() },
        ] {
            assert!(generate_synthetic(&spec).unwrap_err().is_config());
        }
    }

    #[test]
    fn signal_only_at_its_distance() {
        let s = generate_synthetic(&SyntheticSpec {
            n_transcripts: 200,
            ..small(1.5, 2, 3)
        })
        .unwrap();
        let lex = s.lexicon();
        let corpus = tag_corpus(&s.corpus, &s.tagger());
        let (freq, _) = Measure::Frequency.dims();
        let p_at = |d: usize| {
            let pools = token_pools(&corpus, d, &lex, ExtractOptions::default());
            welch_t_test(&pools[0][freq], &pools[1][freq]).unwrap().p
        };
        assert!(p_at(2) < 1e-6, "D2 p = {}", p_at(2));
        assert!(p_at(3) > 0.01, "D3 p = {}", p_at(3));
        assert!(p_at(1) > 0.01, "D1 p = {}", p_at(1));
    }

    #[test]
    fn lexicon_files_round_trip() {
        let s = generate_synthetic(&small(1.0, 1, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sources = s.write_lexicons(dir.path()).unwrap();
        let loaded = LexiconSet::from_sources(&sources, dir.path()).unwrap();
        let direct = s.lexicon();
        for e in s.vocab.iter().take(50) {
            for m in Measure::ALL {
                assert_eq!(loaded.lookup(m, &e.word), direct.lookup(m, &e.word));
            }
        }
    }
}

//! Staged pipeline: configuration, content-addressed stage caching and the
//! artifacts each stage writes under the output directory.
//!
//! Layout of the output directory:
//!
//! ```text
//! config.resolved.toml
//! extract/   corpus.json, subsets/<C>.jsonl, counts.csv [, lexicons/]
//! guide/     subseq_report.json, guidance.json, subsequence_accuracy.csv,
//!            subsequence_models.csv, trial_log.csv
//! features/  features.csv, feature_counts.csv, feature_sets.json
//! classify/  transcript_report.json, configs.json, transcript_metrics.csv,
//!            best_configs.csv, predictions.csv, selection.csv, accuracy_plot.csv
//! report/    significance.csv, significance_tests.csv, summary.md
//! ```
//!
//! Each stage directory holds a `stage.json` marker with the stage key, a
//! sha256 over the stage name, tool version, the config slice the stage
//! reads and the keys of its upstream stages. A stage whose marker key
//! matches is loaded from disk instead of recomputed.

use std::cell::OnceCell;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{load_corpus, read_metadata, render_chat, Corpus, ParseOptions};
use crate::error::{Error, Result};
use crate::eval::{
    guide_aggregates, run_subsequence_cv, run_transcript_cv, selection_summary, significance_analysis, Guidance,
    SubseqCvOptions, SubseqReport, TranscriptCvOptions, TranscriptReport,
};
use crate::features::{build_feature_table, FeatureOptions, FeatureSet, FeatureTable, DEFAULT_INFO_UNITS};
use crate::lexicon::{tag_corpus, LexiconSet, LexiconSource, LexiconTagger};
use crate::model::{grid, write_trial_log, SizeSpec, TrainConfig, SPECIFICITY_GATE};
use crate::report;
use crate::subseq::{dedup, Context, ExtractOptions, SubsetTable};
use crate::synth::{generate_synthetic, SyntheticCorpus, SyntheticSpec};

pub const TOOL: &str = "pausecue";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const MARKER: &str = "stage.json";

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `<id>.cha` files.
    pub corpus_dir: Option<PathBuf>,
    /// CSV with `id,participant_id,label`.
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    /// Relative source paths resolve against this directory.
    pub base_dir: Option<PathBuf>,
    /// Empty selects the bundled sample tables.
    pub sources: Vec<LexiconSource>,
    /// `word<TAB>TAG` lines layered over the bundled dictionary.
    pub pos_dictionary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub contexts: Vec<Context>,
    pub skip_boundaries: bool,
    /// Drop repeated identical subsequences within a subset.
    pub dedup: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            contexts: vec![Context::C1, Context::C2, Context::C3, Context::Utt],
            skip_boundaries: false,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsequenceConfig {
    pub n_folds: usize,
    pub seeds: Vec<u64>,
    pub group_by_source: bool,
    pub global_norm: bool,
    pub gate: f64,
    pub sizes: Vec<SizeSpec>,
    pub train: TrainConfig,
}

impl Default for SubsequenceConfig {
    fn default() -> Self {
        let cv = SubseqCvOptions::default();
        SubsequenceConfig {
            n_folds: cv.n_folds,
            seeds: cv.seeds,
            group_by_source: cv.group_by_source,
            global_norm: cv.global_norm,
            gate: SPECIFICITY_GATE,
            sizes: vec![SizeSpec::small(), SizeSpec::large()],
            train: cv.train,
        }
    }
}

impl SubsequenceConfig {
    pub fn cv_options(&self) -> SubseqCvOptions {
        SubseqCvOptions {
            n_folds: self.n_folds,
            seeds: self.seeds.clone(),
            group_by_source: self.group_by_source,
            global_norm: self.global_norm,
            gate: self.gate,
            train: self.train.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Build aggregates at every distance instead of the guided ones.
    pub all_distances: bool,
    pub split_sides: bool,
    pub info_units: Vec<String>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            all_distances: false,
            split_sides: false,
            info_units: DEFAULT_INFO_UNITS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub alpha: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    /// Generate the corpus instead of reading `data`.
    pub synthetic: Option<SyntheticSpec>,
    pub lexicons: LexiconConfig,
    pub parse: ParseOptions,
    pub extract: ExtractConfig,
    pub subsequence: SubsequenceConfig,
    pub features: FeaturesConfig,
    pub transcript: TranscriptCvOptions,
    pub report: ReportConfig,
    pub output: OutputConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub group: Option<bool>,
    pub all_distances: bool,
    pub skip_boundaries: bool,
    pub global_norm: bool,
    pub split_sides: bool,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if let Some(p) = cfg.data.corpus_dir.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.data.metadata.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.lexicons.pos_dictionary.as_mut() {
            resolve(base, p);
        }
        match cfg.lexicons.base_dir.as_mut() {
            Some(p) => resolve(base, p),
            None => cfg.lexicons.base_dir = Some(base.to_path_buf()),
        }
        resolve(base, &mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.seeds {
            self.subsequence.seeds = s.clone();
            self.transcript.seeds = s.clone();
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(g) = o.group {
            self.subsequence.group_by_source = g;
            self.transcript.group_by_participant = g;
        }
        self.features.all_distances |= o.all_distances;
        self.extract.skip_boundaries |= o.skip_boundaries;
        self.subsequence.global_norm |= o.global_norm;
        self.features.split_sides |= o.split_sides;
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.data.corpus_dir, &self.data.metadata) {
            (Some(spec), None, None) => spec.validate()?,
            (Some(_), _, _) => return Err(config_err("set either [data] or [synthetic], not both")),
            (None, Some(_), Some(_)) => {}
            (None, None, None) => return Err(config_err("no corpus: set [data] corpus_dir and metadata, or [synthetic]")),
            (None, _, _) => return Err(config_err("[data] needs both corpus_dir and metadata")),
        }
        let e = &self.extract;
        if e.contexts.is_empty() {
            return Err(config_err("extract.contexts is empty"));
        }
        for (i, c) in e.contexts.iter().enumerate() {
            if e.contexts[..i].contains(c) {
                return Err(config_err(format!("extract.contexts lists {c} twice")));
            }
        }
        let s = &self.subsequence;
        if s.n_folds < 2 {
            return Err(config_err("subsequence.n_folds must be at least 2"));
        }
        if s.seeds.is_empty() {
            return Err(config_err("subsequence.seeds is empty"));
        }
        if !(0.0..=1.0).contains(&s.gate) {
            return Err(config_err("subsequence.gate must lie in [0, 1]"));
        }
        if s.sizes.is_empty() {
            return Err(config_err("subsequence.sizes is empty"));
        }
        for z in &s.sizes {
            if z.gru_hidden == 0 || z.ffn.contains(&0) {
                return Err(config_err(format!("size `{}` has a zero width", z.name)));
            }
        }
        let t = &s.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(config_err("subsequence.train epochs and batch_size must be positive"));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) || !(0.0..1.0).contains(&t.momentum) || !(t.l2_lambda >= 0.0) {
            return Err(config_err("subsequence.train needs lr > 0, momentum in [0, 1) and l2_lambda >= 0"));
        }
        let c = &self.transcript;
        if c.n_folds < 2 {
            return Err(config_err("transcript.n_folds must be at least 2"));
        }
        if c.seeds.is_empty() || c.smote.is_empty() || c.models.is_empty() {
            return Err(config_err("transcript seeds, smote and models must be non-empty"));
        }
        if c.extension_k.is_empty() || c.original_k.is_empty() {
            return Err(config_err("transcript k grids must be non-empty"));
        }
        let p = &c.classifiers;
        if p.rf_trees == 0 || p.gbm_estimators == 0 || p.gbm_depth == 0 || p.nn_hidden == 0 || p.nn_epochs == 0 || p.nn_batch_size == 0 || p.smote_k == 0 {
            return Err(config_err("transcript.classifiers counts must be positive"));
        }
        if !(p.svm_c > 0.0) || p.svm_gamma.is_some_and(|g| !(g > 0.0)) || !(p.gbm_learning_rate > 0.0) || !(p.nn_learning_rate > 0.0) {
            return Err(config_err("transcript.classifiers rates and SVM parameters must be positive"));
        }
        if !(self.report.alpha > 0.0 && self.report.alpha < 1.0) {
            return Err(config_err("report.alpha must lie in (0, 1)"));
        }
        Ok(())
    }

    fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            skip_boundaries: self.extract.skip_boundaries,
        }
    }

    fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            info_units: self.features.info_units.clone(),
            split_sides: self.features.split_sides,
            extract: self.extract_options(),
        }
    }
}

// ---------------------------------------------------------------------------
// hashing and atomic writes

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize to JSON")
}

fn stage_key(stage: &str, cfg: &Value, upstream: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(TOOL);
    h.update([0]);
    h.update(VERSION);
    h.update([0]);
    h.update(stage);
    h.update([0]);
    h.update(cfg.to_string());
    for u in upstream {
        h.update([0]);
        h.update(u);
    }
    hex::encode(h.finalize())
}

fn digest_files(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| Error::file(p, e))?;
        h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("JSON values serialize");
    b.push(b'\n');
    b
}

fn read_json(path: &Path) -> Result<Value> {
    let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn field<T: for<'de> Deserialize<'de>>(v: &Value, key: &str, path: &Path) -> Result<T> {
    let x = v
        .get(key)
        .ok_or_else(|| Error::Data(format!("{}: missing `{key}`", path.display())))?;
    Ok(serde_json::from_value(x.clone())?)
}

/// One stage's directory, key and header text.
struct Stage {
    name: &'static str,
    dir: PathBuf,
    key: String,
    files: Vec<String>,
}

impl Stage {
    fn new(out: &Path, name: &'static str, key: String) -> Stage {
        Stage {
            name,
            dir: out.join(name),
            key,
            files: Vec::new(),
        }
    }

    fn meta_line(&self) -> String {
        format!("{TOOL} {VERSION} stage={} config={}", self.name, self.key)
    }

    fn meta(&self) -> Value {
        json!({ "tool": TOOL, "version": VERSION, "stage": self.name, "config": self.key })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// True when the marker matches this key and every listed file exists.
    fn cached(&self) -> bool {
        let Ok(v) = read_json(&self.path(MARKER)) else {
            return false;
        };
        if v.get("meta").and_then(|m| m.get("config")).and_then(Value::as_str) != Some(self.key.as_str()) {
            return false;
        }
        let files: Vec<String> = v
            .get("files")
            .and_then(|f| serde_json::from_value(f.clone()).ok())
            .unwrap_or_default();
        files.iter().all(|f| self.path(f).is_file())
    }

    fn begin(&self) -> Result<()> {
        let m = self.path(MARKER);
        if m.exists() {
            fs::remove_file(&m).map_err(|e| Error::file(&m, e))?;
        }
        Ok(())
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn write_json(&mut self, rel: &str, key: &str, value: Value) -> Result<()> {
        let mut obj = serde_json::Map::new();
        obj.insert("meta".into(), self.meta());
        obj.insert(key.into(), value);
        self.write(rel, &json_bytes(&Value::Object(obj)))
    }

    fn write_csv(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>, &str) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf, &self.meta_line())?;
        self.write(rel, &buf)
    }

    fn finish(&self) -> Result<()> {
        let v = json!({ "meta": self.meta(), "files": self.files });
        write_atomic(&self.path(MARKER), &json_bytes(&v))
    }
}

// ---------------------------------------------------------------------------
// stage outputs

pub struct ExtractOutput {
    pub key: String,
    pub corpus: Corpus,
    pub tables: Vec<SubsetTable>,
    pub lexicon: LexiconSet,
    pub lexicon_key: String,
}

pub struct GuideOutput {
    pub key: String,
    pub report: SubseqReport,
    pub guidance: Guidance,
}

pub struct FeaturesOutput {
    pub key: String,
    pub table: FeatureTable,
    pub distances: Vec<usize>,
    pub sets: Vec<FeatureSet>,
}

pub struct ClassifyOutput {
    pub key: String,
    pub report: TranscriptReport,
}

pub struct ReportOutput {
    pub key: String,
    pub dir: PathBuf,
}

/// A validated configuration bound to its output directory. Stage results
/// are memoized so that chained verbs compute or load each stage once.
pub struct Pipeline {
    cfg: PipelineConfig,
    extract: OnceCell<ExtractOutput>,
    guide: OnceCell<GuideOutput>,
    features: OnceCell<FeaturesOutput>,
    classify: OnceCell<ClassifyOutput>,
}

fn lexicon_sources_rel(sources: Vec<LexiconSource>, dir: &Path) -> Vec<LexiconSource> {
    sources
        .into_iter()
        .map(|mut s| {
            if let Ok(rel) = s.path.strip_prefix(dir) {
                s.path = rel.to_path_buf();
            }
            s
        })
        .collect()
}

impl Pipeline {
    /// Validates the config and writes `config.resolved.toml` into the
    /// output directory.
    pub fn new(cfg: PipelineConfig) -> Result<Pipeline> {
        cfg.validate()?;
        let text = cfg.to_toml()?;
        write_atomic(&cfg.output.dir.join("config.resolved.toml"), text.as_bytes())?;
        Ok(Pipeline {
            cfg,
            extract: OnceCell::new(),
            guide: OnceCell::new(),
            features: OnceCell::new(),
            classify: OnceCell::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.output.dir
    }

    fn input_digest(&self) -> Result<String> {
        let c = &self.cfg;
        match (&c.data.corpus_dir, &c.data.metadata) {
            (Some(dir), Some(meta)) => {
                let mut paths = vec![meta.clone()];
                paths.extend(read_metadata(meta)?.iter().map(|r| dir.join(format!("{}.cha", r.id))));
                if let Some(p) = &c.lexicons.pos_dictionary {
                    paths.push(p.clone());
                }
                digest_files(&paths)
            }
            _ => Ok(String::new()),
        }
    }

    fn configured_lexicon(&self) -> Result<(LexiconSet, String)> {
        let l = &self.cfg.lexicons;
        if l.sources.is_empty() {
            return Ok((LexiconSet::bundled(), stage_key("lexicon", &json!("bundled"), &[])));
        }
        let base = l.base_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        let paths: Vec<PathBuf> = l
            .sources
            .iter()
            .map(|s| if s.path.is_absolute() { s.path.clone() } else { base.join(&s.path) })
            .collect();
        let digest = digest_files(&paths)?;
        let set = LexiconSet::from_sources(&l.sources, &base)?;
        Ok((set, stage_key("lexicon", &to_value(&l.sources), &[&digest])))
    }

    fn tagger(&self) -> Result<LexiconTagger> {
        let mut t = LexiconTagger::bundled();
        if let Some(p) = &self.cfg.lexicons.pos_dictionary {
            let text = fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            t.load_tsv(&text)?;
        }
        Ok(t)
    }

    pub fn extract(&self) -> Result<&ExtractOutput> {
        if let Some(x) = self.extract.get() {
            return Ok(x);
        }
        let out = self.run_extract()?;
        Ok(self.extract.get_or_init(|| out))
    }

    fn run_extract(&self) -> Result<ExtractOutput> {
        let c = &self.cfg;
        let cfg = json!({
            "data": c.data,
            "synthetic": c.synthetic,
            "pos_dictionary": c.lexicons.pos_dictionary,
            "parse": c.parse,
            "extract": c.extract,
        });
        let digest = self.input_digest()?;
        let mut st = Stage::new(self.out_dir(), "extract", stage_key("extract", &cfg, &[&digest]));
        let lex_dir = st.path("lexicons");
        if st.cached() {
            log::info!("extract: cached ({})", &st.key[..12]);
            let corpus_path = st.path("corpus.json");
            let corpus: Corpus = field(&read_json(&corpus_path)?, "corpus", &corpus_path)?;
            let mut tables = Vec::new();
            for ctx in &c.extract.contexts {
                let p = st.path(&format!("subsets/{ctx}.jsonl"));
                let f = fs::File::open(&p).map_err(|e| Error::file(&p, e))?;
                tables.push(SubsetTable::read_jsonl(BufReader::new(f))?.0);
            }
            let (lexicon, lexicon_key) = if c.synthetic.is_some() {
                let p = st.path("lexicons.json");
                let sources: Vec<LexiconSource> = field(&read_json(&p)?, "sources", &p)?;
                (LexiconSet::from_sources(&sources, &st.dir)?, st.key.clone())
            } else {
                self.configured_lexicon()?
            };
            return Ok(ExtractOutput {
                key: st.key,
                corpus,
                tables,
                lexicon,
                lexicon_key,
            });
        }
        st.begin()?;
        log::info!("extract: computing");
        let (corpus, lexicon, lexicon_key) = match &c.synthetic {
            Some(spec) => {
                let syn = generate_synthetic(spec)?;
                let corpus = tag_corpus(&syn.corpus, &syn.tagger());
                let sources = lexicon_sources_rel(syn.write_lexicons(&lex_dir)?, &st.dir);
                for s in &sources {
                    st.files.push(s.path.to_string_lossy().into_owned());
                }
                st.write_json("lexicons.json", "sources", to_value(&sources))?;
                (corpus, LexiconSet::from_sources(&sources, &st.dir)?, st.key.clone())
            }
            None => {
                let dir = c.data.corpus_dir.as_ref().expect("validated");
                let meta = c.data.metadata.as_ref().expect("validated");
                let raw = load_corpus(dir, meta, &c.parse)?;
                let corpus = if c.parse.pretagged { raw } else { tag_corpus(&raw, &self.tagger()?) };
                let (lex, key) = self.configured_lexicon()?;
                (corpus, lex, key)
            }
        };
        let opts = c.extract_options();
        let mut tables = Vec::new();
        for &ctx in &c.extract.contexts {
            let t = SubsetTable::extract(&corpus, ctx, opts)?;
            let t = if c.extract.dedup { dedup(&t) } else { t };
            let mut buf = Vec::new();
            t.write_jsonl(&mut buf, &st.meta())?;
            st.write(&format!("subsets/{ctx}.jsonl"), &buf)?;
            log::info!("extract: {ctx} {} subsequences", t.len());
            tables.push(t);
        }
        st.write_json("corpus.json", "corpus", to_value(&corpus))?;
        let counts: Vec<_> = tables.iter().map(|t| (t.context, t.counts())).collect();
        st.write_csv("counts.csv", |w, m| report::write_counts(w, m, corpus.counts(), &counts))?;
        st.finish()?;
        Ok(ExtractOutput {
            key: st.key,
            corpus,
            tables,
            lexicon,
            lexicon_key,
        })
    }

    pub fn guide(&self) -> Result<&GuideOutput> {
        if let Some(x) = self.guide.get() {
            return Ok(x);
        }
        let out = self.run_guide()?;
        Ok(self.guide.get_or_init(|| out))
    }

    fn run_guide(&self) -> Result<GuideOutput> {
        let ex = self.extract()?;
        let cfg = to_value(&self.cfg.subsequence);
        let mut st = Stage::new(self.out_dir(), "guide", stage_key("guide", &cfg, &[&ex.key, &ex.lexicon_key]));
        if st.cached() {
            log::info!("guide: cached ({})", &st.key[..12]);
            let rp = st.path("subseq_report.json");
            let gp = st.path("guidance.json");
            return Ok(GuideOutput {
                key: st.key,
                report: field(&read_json(&rp)?, "report", &rp)?,
                guidance: field(&read_json(&gp)?, "guidance", &gp)?,
            });
        }
        st.begin()?;
        log::info!("guide: computing");
        let s = &self.cfg.subsequence;
        let report = run_subsequence_cv(&ex.tables, &ex.lexicon, &grid(&s.sizes), &s.cv_options())?;
        let guidance = guide_aggregates(&report)?;
        let trials: Vec<_> = report.subsets.iter().flat_map(|r| r.trials.iter().cloned()).collect();
        st.write_json("subseq_report.json", "report", to_value(&report))?;
        let mut g = serde_json::Map::new();
        g.insert("meta".into(), st.meta());
        g.insert("guidance".into(), to_value(&guidance));
        g.insert("seed_winners".into(), to_value(&report.seed_winners()));
        st.write("guidance.json", &json_bytes(&Value::Object(g)))?;
        st.write_csv("subsequence_accuracy.csv", |w, m| report::write_subsequence_table(w, m, &report))?;
        st.write_csv("subsequence_models.csv", |w, m| report::write_subsequence_models(w, m, &report, &s.train))?;
        st.write_csv("trial_log.csv", |w, m| {
            use std::io::Write;
            writeln!(w, "# {m}")?;
            write_trial_log(w, &trials)
        })?;
        st.finish()?;
        Ok(GuideOutput {
            key: st.key,
            report,
            guidance,
        })
    }

    pub fn features(&self) -> Result<&FeaturesOutput> {
        if let Some(x) = self.features.get() {
            return Ok(x);
        }
        let out = self.run_features()?;
        Ok(self.features.get_or_init(|| out))
    }

    fn run_features(&self) -> Result<FeaturesOutput> {
        let ex = self.extract()?;
        let (distances, guide_key) = if self.cfg.features.all_distances {
            (vec![1, 2, 3], String::new())
        } else {
            let g = self.guide()?;
            (g.guidance.distances.clone(), g.key.clone())
        };
        let cfg = json!({ "features": self.cfg.features, "extract": self.cfg.extract_options(), "distances": distances });
        let mut st = Stage::new(
            self.out_dir(),
            "features",
            stage_key("features", &cfg, &[&ex.key, &ex.lexicon_key, &guide_key]),
        );
        let sets = FeatureSet::for_distances(&distances);
        if st.cached() {
            log::info!("features: cached ({})", &st.key[..12]);
            let p = st.path("features.csv");
            let f = fs::File::open(&p).map_err(|e| Error::file(&p, e))?;
            return Ok(FeaturesOutput {
                key: st.key,
                table: FeatureTable::read_csv(BufReader::new(f))?,
                distances,
                sets,
            });
        }
        st.begin()?;
        log::info!("features: computing for distances {distances:?}");
        let table = build_feature_table(&ex.corpus, &ex.lexicon, &distances, &self.cfg.feature_options())?;
        for (prov, n) in provenance_counts(&table) {
            log::info!("features: {prov} {n} columns");
        }
        st.write_csv("features.csv", |w, m| {
            use std::io::Write;
            writeln!(w, "# {m}")?;
            table.write_csv(w)
        })?;
        st.write_csv("feature_counts.csv", |w, m| report::write_feature_counts(w, m, &table))?;
        st.write_json("feature_sets.json", "sets", json!({ "distances": distances, "sets": sets }))?;
        st.finish()?;
        Ok(FeaturesOutput {
            key: st.key,
            table,
            distances,
            sets,
        })
    }

    pub fn classify(&self) -> Result<&ClassifyOutput> {
        if let Some(x) = self.classify.get() {
            return Ok(x);
        }
        let out = self.run_classify()?;
        Ok(self.classify.get_or_init(|| out))
    }

    fn run_classify(&self) -> Result<ClassifyOutput> {
        let fe = self.features()?;
        let cfg = to_value(&self.cfg.transcript);
        let mut st = Stage::new(self.out_dir(), "classify", stage_key("classify", &cfg, &[&fe.key]));
        if st.cached() {
            log::info!("classify: cached ({})", &st.key[..12]);
            let p = st.path("transcript_report.json");
            return Ok(ClassifyOutput {
                key: st.key,
                report: field(&read_json(&p)?, "report", &p)?,
            });
        }
        st.begin()?;
        log::info!("classify: computing {} feature sets", fe.sets.len());
        let report = run_transcript_cv(&fe.table, &fe.sets, &self.cfg.transcript)?;
        let selection = selection_summary(&fe.table, &report)?;
        st.write_json("transcript_report.json", "report", to_value(&report))?;
        st.write_json("configs.json", "configs", to_value(&report.configs))?;
        st.write_csv("transcript_metrics.csv", |w, m| report::write_transcript_table(w, m, &report))?;
        st.write_csv("best_configs.csv", |w, m| report::write_transcript_configs(w, m, &report))?;
        st.write_csv("predictions.csv", |w, m| report::write_predictions(w, m, &report))?;
        st.write_csv("selection.csv", |w, m| report::write_selection(w, m, &selection))?;
        st.write_csv("accuracy_plot.csv", |w, m| report::write_accuracy_plot(w, m, &report))?;
        st.finish()?;
        Ok(ClassifyOutput { key: st.key, report })
    }

    /// Runs every stage and writes the significance tables and a summary.
    pub fn report(&self) -> Result<ReportOutput> {
        let ex = self.extract()?;
        let gd = self.guide()?;
        let fe = self.features()?;
        let cl = self.classify()?;
        let cfg = json!({ "report": self.cfg.report, "features": self.cfg.features, "extract": self.cfg.extract_options() });
        let mut st = Stage::new(
            self.out_dir(),
            "report",
            stage_key("report", &cfg, &[&ex.key, &ex.lexicon_key, &gd.key, &fe.key, &cl.key]),
        );
        if st.cached() {
            log::info!("report: cached ({})", &st.key[..12]);
            return Ok(ReportOutput { key: st.key.clone(), dir: st.dir });
        }
        st.begin()?;
        log::info!("report: computing");
        let distances = [1, 2, 3];
        let full = if fe.distances == distances {
            fe.table.clone()
        } else {
            build_feature_table(&ex.corpus, &ex.lexicon, &distances, &self.cfg.feature_options())?
        };
        let sig = significance_analysis(
            &ex.corpus,
            &ex.lexicon,
            &full,
            &distances,
            self.cfg.extract_options(),
            self.cfg.report.alpha,
        )?;
        st.write_csv("significance.csv", |w, m| report::write_significance(w, m, &sig))?;
        st.write_csv("significance_tests.csv", |w, m| report::write_significance_tests(w, m, &sig))?;
        let summary = summary_markdown(&st.meta_line(), ex, gd, fe, cl, sig.rejection_rate(), sig.alpha);
        st.write("summary.md", summary.as_bytes())?;
        st.finish()?;
        Ok(ReportOutput { key: st.key.clone(), dir: st.dir })
    }
}

fn provenance_counts(table: &FeatureTable) -> Vec<(String, usize)> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for c in &table.columns {
        let name = c.provenance.to_string();
        match counts.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 += 1,
            None => counts.push((name, 1)),
        }
    }
    counts
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

fn summary_markdown(
    meta: &str,
    ex: &ExtractOutput,
    gd: &GuideOutput,
    fe: &FeaturesOutput,
    cl: &ClassifyOutput,
    rejection_rate: f64,
    alpha: f64,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<!-- {meta} -->\n# pausecue report\n");
    let n = ex.corpus.counts();
    let _ = writeln!(s, "{} transcripts ({} HC, {} CI).\n", n.total, n.hc, n.ci);
    let _ = writeln!(s, "## Subsequence classification\n\n| subset | accuracy (%) | std | gated out |\n|---|---|---|---|");
    for r in &gd.report.subsets {
        let _ = writeln!(
            s,
            "| M-{} | {:.2} | {:.2} | {} |",
            r.context,
            100.0 * r.best.mean_accuracy,
            100.0 * r.best.std_accuracy,
            r.gated_out
        );
    }
    let g = &gd.guidance;
    let _ = writeln!(s, "\nWinner: {}; aggregate distances {:?}.", g.winner, g.distances);
    let winners: Vec<String> = gd.report.seed_winners().iter().map(|(sd, c)| format!("seed {sd}: {c}")).collect();
    let _ = writeln!(s, "Per-seed winners: {}.", winners.join(", "));
    for w in &g.warnings {
        let _ = writeln!(s, "\nWarning: {w}");
    }
    let _ = writeln!(s, "\n## Transcript classification (distances {:?})\n", fe.distances);
    let _ = writeln!(s, "| feature set | model | k | SMOTE | acc (%) | prec (%) | sens (%) | spec (%) | p |\n|---|---|---|---|---|---|---|---|---|");
    for r in &cl.report.results {
        let b = &r.best;
        let ms = |m: &crate::eval::MeanStd| format!("{} ± {}", pct(m.mean), pct(m.std));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            b.feature_set,
            b.model,
            b.k.map(|k| format!("{k} ({})", b.n_features)).unwrap_or_else(|| "-".into()),
            b.smote,
            ms(&b.accuracy),
            ms(&b.precision),
            ms(&b.sensitivity),
            ms(&b.specificity),
            r.p_vs_reference.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
    let _ = writeln!(s, "\nFeature-level t-test rejection rate at alpha {alpha}: {:.2}%.", 100.0 * rejection_rate);
    s
}

// ---------------------------------------------------------------------------
// synthetic corpus on disk

/// Writes a generated corpus as CHAT files with metadata, lexicon CSVs, a
/// POS dictionary and a `config.toml` that runs the pipeline on them.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<SyntheticCorpus> {
    let syn = generate_synthetic(spec)?;
    let tdir = dir.join("transcripts");
    let mut meta = String::from("id,participant_id,label\n");
    for t in syn.corpus.transcripts() {
        write_atomic(&tdir.join(format!("{}.cha", t.id)), render_chat(t).as_bytes())?;
        let _ = writeln!(meta, "{},{},{}", t.id, t.participant_id, t.label);
    }
    write_atomic(&dir.join("metadata.csv"), meta.as_bytes())?;
    let lex_dir = dir.join("lexicons");
    let sources = lexicon_sources_rel(syn.write_lexicons(&lex_dir)?, dir);
    let cfg = PipelineConfig {
        data: DataConfig {
            corpus_dir: Some(PathBuf::from("transcripts")),
            metadata: Some(PathBuf::from("metadata.csv")),
        },
        lexicons: LexiconConfig {
            base_dir: None,
            sources,
            pos_dictionary: Some(PathBuf::from("lexicons/pos.tsv")),
        },
        ..Default::default()
    };
    write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(syn)
}

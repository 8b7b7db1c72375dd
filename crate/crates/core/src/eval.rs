//! Metrics, fold plans, cross-validation drivers and significance tests.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::classify::{
    extension_k_grid, f_scores, fit_predict, original_k_grid, select_top_k, smote, vote, ClassifierParams, KChoice,
    ModelKind,
};
use crate::corpus::{ClassCounts, Corpus, Label, PosTag, TokenKind};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureTable, Provenance, RobustScaler};
use crate::lexicon::{effective_pos, raw_values, vectorize_raw, LexiconSet, NormalizationStats, RawValues, Scaling, DIM_NAMES, NUMERIC_DIM};
use crate::model::{search_grid, ConfigSummary, FoldData, GridPoint, ModelConfig, Sample, TrainConfig, TrialRecord, SPECIFICITY_GATE};
use crate::subseq::{extract_distance_tokens, Context, ExtractOptions, SubsetTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn tally(truth: &[Label], pred: &[Label]) -> Result<Confusion> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch(format!(
                "{} labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::EmptyData("no predictions to score".into()));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t.is_positive(), p.is_positive()) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        Metrics {
            accuracy: (self.tp + self.tn) as f64 / self.total().max(1) as f64,
            precision: ratio(self.tp, self.tp + self.fp),
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
        }
    }
}

/// Undefined ratios (zero denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn metrics(truth: &[Label], pred: &[Label]) -> Result<Metrics> {
    Ok(Confusion::tally(truth, pred)?.metrics())
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Mean and std over the defined values only.
pub fn mean_std_opt(xs: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let vals: Vec<f64> = xs.iter().flatten().copied().collect();
    if vals.is_empty() {
        return (None, None);
    }
    let (m, s) = mean_std(&vals);
    (Some(m), Some(s))
}

// ---------------------------------------------------------------------------
// folds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignment: Vec<usize>,
    pub stratified: bool,
    pub group_by: bool,
    pub seed: u64,
}

impl FoldPlan {
    /// Class-stratified assignment. With `groups`, all rows sharing a group
    /// key land in the same fold; a group's class is that of its first row.
    pub fn stratified(labels: &[Label], groups: Option<&[String]>, n_folds: usize, seed: u64) -> Result<FoldPlan> {
        if n_folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
        }
        if labels.is_empty() {
            return Err(Error::EmptyData("no rows to split".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment = vec![0; labels.len()];
        match groups {
            None => {
                let mut counter = 0;
                for class in [Label::HC, Label::CI] {
                    let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
                    idx.shuffle(&mut rng);
                    for i in idx {
                        assignment[i] = counter % n_folds;
                        counter += 1;
                    }
                }
            }
            Some(groups) => {
                if groups.len() != labels.len() {
                    return Err(Error::LengthMismatch("group keys vs labels".into()));
                }
                let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for (i, g) in groups.iter().enumerate() {
                    members.entry(g.as_str()).or_default().push(i);
                }
                let mut class_count = [vec![0usize; n_folds], vec![0usize; n_folds]];
                let mut total = vec![0usize; n_folds];
                for class in [Label::HC, Label::CI] {
                    let mut gs: Vec<&Vec<usize>> =
                        members.values().filter(|m| labels[m[0]] == class).collect();
                    gs.shuffle(&mut rng);
                    gs.sort_by_key(|m| std::cmp::Reverse(m.len()));
                    let counts = &mut class_count[class.index()];
                    for m in gs {
                        let f = (0..n_folds)
                            .min_by_key(|&f| (counts[f], total[f], f))
                            .unwrap_or(0);
                        counts[f] += m.len();
                        total[f] += m.len();
                        for &i in m {
                            assignment[i] = f;
                        }
                    }
                }
            }
        }
        Ok(FoldPlan {
            n_folds,
            assignment,
            stratified: true,
            group_by: groups.is_some(),
            seed,
        })
    }

    /// (train rows, test rows) of one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignment.len()).partition(|&i| self.assignment[i] == fold);
        (train, test)
    }
}

// ---------------------------------------------------------------------------
// subsequence cross-validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubseqCvOptions {
    pub n_folds: usize,
    pub seeds: Vec<u64>,
    /// Keep all subsequences of one transcript in the same fold.
    pub group_by_source: bool,
    /// Fit normalization on every word token instead of the training fold.
    pub global_norm: bool,
    pub gate: f64,
    pub train: TrainConfig,
}

impl Default for SubseqCvOptions {
    fn default() -> Self {
        SubseqCvOptions {
            n_folds: 5,
            seeds: vec![0, 1, 2, 3],
            group_by_source: true,
            global_norm: false,
            gate: SPECIFICITY_GATE,
            train: TrainConfig::default(),
        }
    }
}

struct RawSeq {
    steps: Vec<(TokenKind, PosTag, RawValues)>,
    label: Label,
}

fn prepare(table: &SubsetTable, lex: &LexiconSet) -> Vec<RawSeq> {
    table
        .subsequences()
        .par_iter()
        .map(|s| RawSeq {
            steps: s.tokens.iter().map(|t| (t.kind, effective_pos(t), raw_values(t, lex))).collect(),
            label: s.label,
        })
        .collect()
}

fn fit_stats(seqs: &[RawSeq], idx: &[usize]) -> Result<NormalizationStats> {
    NormalizationStats::fit(
        idx.iter()
            .flat_map(|&i| seqs[i].steps.iter())
            .filter(|(k, _, _)| *k == TokenKind::Word)
            .map(|(_, _, r)| r),
    )
}

fn to_samples(seqs: &[RawSeq], idx: &[usize], stats: &NormalizationStats) -> Result<Vec<Sample>> {
    idx.iter()
        .map(|&i| {
            let steps = seqs[i]
                .steps
                .iter()
                .map(|(k, p, r)| vectorize_raw(*k, *p, r, Some(stats), Scaling::Normalized))
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample {
                steps,
                label: seqs[i].label,
            })
        })
        .collect()
}

/// Vectorized train/test samples for every (seed, fold) cell. Token
/// normalization is fitted on the word tokens of the training fold.
pub fn subsequence_folds(table: &SubsetTable, lex: &LexiconSet, opts: &SubseqCvOptions) -> Result<Vec<FoldData>> {
    if table.is_empty() {
        return Err(Error::EmptyData(format!("subset {} has no subsequences", table.context)));
    }
    let seqs = prepare(table, lex);
    let labels: Vec<Label> = seqs.iter().map(|s| s.label).collect();
    let groups: Vec<String> = table.subsequences().iter().map(|s| s.source.clone()).collect();
    let global = if opts.global_norm {
        Some(fit_stats(&seqs, &(0..seqs.len()).collect::<Vec<_>>())?)
    } else {
        None
    };
    let mut out = Vec::new();
    for &seed in &opts.seeds {
        let plan = FoldPlan::stratified(&labels, opts.group_by_source.then_some(groups.as_slice()), opts.n_folds, seed)?;
        for fold in 0..opts.n_folds {
            let (train, test) = plan.split(fold);
            if train.is_empty() || test.is_empty() {
                return Err(Error::Data(format!(
                    "fold {fold} of subset {} is empty; too few samples for {} folds",
                    table.context, opts.n_folds
                )));
            }
            let stats = match &global {
                Some(g) => g.clone(),
                None => fit_stats(&seqs, &train)?,
            };
            out.push(FoldData {
                seed,
                fold,
                train: to_samples(&seqs, &train, &stats)?,
                test: to_samples(&seqs, &test, &stats)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub context: Context,
    pub counts: ClassCounts,
    /// No configuration met the specificity gate; `best` is then the most
    /// accurate configuration regardless of the gate.
    pub gated_out: bool,
    pub best: ConfigSummary,
    pub best_config: ModelConfig,
    /// Per seed, the best gated accuracy when the search is run on that
    /// seed's folds alone.
    pub seed_best: Vec<(u64, f64)>,
    pub summaries: Vec<ConfigSummary>,
    #[serde(skip)]
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubseqReport {
    pub seeds: Vec<u64>,
    pub n_folds: usize,
    pub train: TrainConfig,
    pub subsets: Vec<SubsetResult>,
}

fn argmax_context(items: impl Iterator<Item = (Context, f64)>) -> Option<Context> {
    // ties go to the smaller context
    items
        .fold(None, |best: Option<(Context, f64)>, (c, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((c, a)),
        })
        .map(|(c, _)| c)
}

impl SubseqReport {
    pub fn get(&self, context: Context) -> Option<&SubsetResult> {
        self.subsets.iter().find(|s| s.context == context)
    }

    /// Subset with the best mean accuracy among those passing the gate.
    pub fn winner(&self) -> Result<Context> {
        argmax_context(
            self.subsets
                .iter()
                .filter(|s| !s.gated_out)
                .map(|s| (s.context, s.best.mean_accuracy)),
        )
        .ok_or(Error::SpecificityGate {
            threshold: SPECIFICITY_GATE,
        })
    }

    /// Winner of each seed considered on its own.
    pub fn seed_winners(&self) -> Vec<(u64, Context)> {
        self.seeds
            .iter()
            .filter_map(|&seed| {
                let per = self.subsets.iter().filter_map(|s| {
                    s.seed_best.iter().find(|(sd, _)| *sd == seed).map(|(_, a)| (s.context, *a))
                });
                argmax_context(per).map(|c| (seed, c))
            })
            .collect()
    }
}

fn seed_best(trials: &[TrialRecord], grid: &[GridPoint], seed: u64, gate: f64) -> Option<f64> {
    grid.iter()
        .filter_map(|gp| {
            let rows: Vec<&TrialRecord> = trials.iter().filter(|t| t.seed == seed && t.config == gp.label).collect();
            let spec = mean_std_opt(&rows.iter().map(|r| r.metrics.specificity).collect::<Vec<_>>()).0;
            if !spec.is_some_and(|s| s >= gate) {
                return None;
            }
            Some(mean_std(&rows.iter().map(|r| r.metrics.accuracy).collect::<Vec<_>>()).0)
        })
        .max_by(f64::total_cmp)
}

/// Grid search on every subset table. A subset where every configuration
/// fails the specificity gate is reported as gated out; it cannot win.
pub fn run_subsequence_cv(tables: &[SubsetTable], lex: &LexiconSet, grid: &[GridPoint], opts: &SubseqCvOptions) -> Result<SubseqReport> {
    let mut subsets = Vec::new();
    for table in tables {
        let folds = subsequence_folds(table, lex, opts)?;
        let (trials, summaries, gated) = search_grid(grid, &folds, &opts.train, opts.gate)?;
        let gated_out = gated.is_none();
        let best_idx = gated.unwrap_or_else(|| {
            (0..summaries.len())
                .min_by(|&a, &b| {
                    summaries[b]
                        .mean_accuracy
                        .total_cmp(&summaries[a].mean_accuracy)
                        .then(summaries[a].n_params.cmp(&summaries[b].n_params))
                })
                .expect("grid is not empty")
        });
        let best = summaries[best_idx].clone();
        if gated_out {
            log::warn!(
                "subset {}: every configuration failed the specificity gate ({})",
                table.context,
                opts.gate
            );
        }
        log::info!(
            "subset {}: best {} accuracy {:.4} ± {:.4}",
            table.context,
            best.config,
            best.mean_accuracy,
            best.std_accuracy
        );
        let seed_best = opts
            .seeds
            .iter()
            .filter_map(|&s| seed_best(&trials, grid, s, opts.gate).map(|a| (s, a)))
            .collect();
        subsets.push(SubsetResult {
            context: table.context,
            counts: table.counts(),
            gated_out,
            best_config: grid[best_idx].config.clone(),
            best,
            seed_best,
            summaries,
            trials,
        });
    }
    Ok(SubseqReport {
        seeds: opts.seeds.clone(),
        n_folds: opts.n_folds,
        train: opts.train.clone(),
        subsets,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    pub winner: Context,
    pub distances: Vec<usize>,
    /// The winner's mean ± std overlaps the runner-up's.
    pub indistinguishable: bool,
    pub warnings: Vec<String>,
}

pub fn distances_for(winner: Context) -> Vec<usize> {
    match winner.radius() {
        Some(k) => (1..=k).collect(),
        None => vec![1, 2, 3],
    }
}

/// Distances to aggregate, read off the winning subset.
pub fn guide_aggregates(report: &SubseqReport) -> Result<Guidance> {
    let winner = report.winner()?;
    let mut warnings = Vec::new();
    if winner == Context::Utt {
        warnings.push("full utterances won; aggregating all three distances".to_string());
    }
    let w = report.get(winner).expect("winner is a reported subset");
    let runner_up = report
        .subsets
        .iter()
        .filter(|s| s.context != winner && !s.gated_out)
        .max_by(|a, b| a.best.mean_accuracy.total_cmp(&b.best.mean_accuracy));
    let indistinguishable = runner_up.is_some_and(|r| {
        w.best.mean_accuracy - w.best.std_accuracy <= r.best.mean_accuracy + r.best.std_accuracy
    });
    if indistinguishable {
        let r = runner_up.expect("checked above");
        warnings.push(format!(
            "subset accuracies are statistically indistinguishable: {} {:.4} ± {:.4} vs {} {:.4} ± {:.4}",
            winner, w.best.mean_accuracy, w.best.std_accuracy, r.context, r.best.mean_accuracy, r.best.std_accuracy
        ));
    }
    for msg in &warnings {
        log::warn!("{msg}");
    }
    Ok(Guidance {
        winner,
        distances: distances_for(winner),
        indistinguishable,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// transcript cross-validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriptCvOptions {
    pub n_folds: usize,
    pub seeds: Vec<u64>,
    pub group_by_participant: bool,
    pub smote: Vec<bool>,
    pub models: Vec<ModelKind>,
    pub extension_k: Vec<KChoice>,
    pub original_k: Vec<KChoice>,
    pub classifiers: ClassifierParams,
}

impl Default for TranscriptCvOptions {
    fn default() -> Self {
        TranscriptCvOptions {
            n_folds: 10,
            seeds: vec![0, 1, 2, 3],
            group_by_participant: true,
            smote: vec![false, true],
            models: ModelKind::ALL.to_vec(),
            extension_k: extension_k_grid(),
            original_k: original_k_grid(),
            classifiers: ClassifierParams::default(),
        }
    }
}

/// A k value together with the column count it yields on this table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KOption {
    pub k: Option<KChoice>,
    pub n_selected: usize,
}

/// The k values of `grid` that give distinct column counts.
fn k_options(set: FeatureSet, table: &FeatureTable, opts: &TranscriptCvOptions) -> Result<Vec<KOption>> {
    let ext = set.extension();
    if ext.is_empty() {
        return Ok(vec![KOption { k: None, n_selected: 0 }]);
    }
    let available: usize = ext.iter().map(|&p| table.columns_of(p).len()).sum();
    if available == 0 {
        return Err(Error::Data(format!("feature table has no columns for {set}")));
    }
    let grid = if set == FeatureSet::OriginalSelected {
        &opts.original_k
    } else {
        &opts.extension_k
    };
    let mut out: Vec<KOption> = Vec::new();
    for &k in grid {
        let n = k.effective(available);
        if let KChoice::K(want) = k {
            if want > available {
                log::warn!("{set}: k={want} exceeds the {available} available columns; using all");
            }
        }
        match out.iter_mut().find(|o| o.n_selected == n) {
            // a clamped k shares its column count with an earlier one; an
            // exact count is the clearer label
            Some(o) => {
                if k == KChoice::K(n) && o.k != Some(KChoice::K(n)) {
                    o.k = Some(k);
                }
            }
            None => out.push(KOption { k: Some(k), n_selected: n }),
        }
    }
    Ok(out)
}

/// One evaluated (feature set, k, SMOTE) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Combo {
    set: FeatureSet,
    k: KOption,
    smote: bool,
}

/// Per-model predictions on one cell's test rows, for every combo.
struct CellOutput {
    seed: u64,
    fold: usize,
    test: Vec<usize>,
    preds: Vec<Vec<(ModelKind, Vec<Label>)>>,
}

fn cell_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (fold as u64 + 1).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7)
}

/// Columns of `set` at one k, selected on the training rows.
fn selected_columns(set: FeatureSet, k: KOption, table: &FeatureTable, f: &[f64], names: &[String]) -> Vec<usize> {
    let original = table.columns_of(Provenance::Original);
    let Some(kc) = k.k else {
        return original;
    };
    let candidates: Vec<usize> = set.extension().iter().flat_map(|&p| table.columns_of(p)).collect();
    let mut chosen = select_top_k(f, names, &candidates, kc);
    if set == FeatureSet::OriginalSelected {
        chosen.sort_unstable();
        return chosen;
    }
    let mut cols = original;
    chosen.sort_unstable();
    cols.extend(chosen);
    cols
}

fn model_plan(models: &[ModelKind]) -> Vec<ModelKind> {
    if models.contains(&ModelKind::Ensemble) {
        ModelKind::BASE.to_vec()
    } else {
        models.to_vec()
    }
}

/// Fits every combo on one training split and predicts the test rows. Only
/// training rows feed the scaler, the F scores, SMOTE and the models.
fn run_cell(
    table: &FeatureTable,
    combos: &[Combo],
    train: &[usize],
    test: &[usize],
    opts: &TranscriptCvOptions,
    seed: u64,
) -> Result<Vec<Vec<(ModelKind, Vec<Label>)>>> {
    let scaler = RobustScaler::fit_table(table, train)?;
    let xtr = scaler.transform(table, train);
    let xte = scaler.transform(table, test);
    let ytr: Vec<Label> = train.iter().map(|&i| table.labels[i]).collect();
    let f = f_scores(&xtr, &ytr)?;
    let names: Vec<String> = table.columns.iter().map(|c| c.qualified()).collect();
    let fit_models = model_plan(&opts.models);
    let mut cache: HashMap<(Vec<usize>, bool), Vec<(ModelKind, Vec<Label>)>> = HashMap::new();
    let mut out = Vec::with_capacity(combos.len());
    for c in combos {
        let cols = selected_columns(c.set, c.k, table, &f, &names);
        let key = (cols, c.smote);
        if let Some(hit) = cache.get(&key) {
            out.push(hit.clone());
            continue;
        }
        let pick = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> { rows.iter().map(|r| key.0.iter().map(|&j| r[j]).collect()).collect() };
        let (x, y) = if c.smote {
            smote(&pick(&xtr), &ytr, opts.classifiers.smote_k, seed)?
        } else {
            (pick(&xtr), ytr.clone())
        };
        let xt = pick(&xte);
        let mut preds = fit_models
            .iter()
            .map(|&m| Ok((m, fit_predict(m, &opts.classifiers, &x, &y, &xt, seed)?)))
            .collect::<Result<Vec<_>>>()?;
        if opts.models.contains(&ModelKind::Ensemble) {
            let ens = (0..xt.len())
                .map(|i| vote(&preds.iter().map(|(_, p)| p[i]).collect::<Vec<_>>()))
                .collect();
            preds.push((ModelKind::Ensemble, ens));
        }
        preds.retain(|(m, _)| opts.models.contains(m));
        cache.insert(key, preds.clone());
        out.push(preds);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl MeanStd {
    fn of(xs: &[Option<f64>]) -> MeanStd {
        let (mean, std) = mean_std_opt(xs);
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptConfigResult {
    pub feature_set: FeatureSet,
    pub model: ModelKind,
    /// `None` when the set has no selection step.
    pub k: Option<KChoice>,
    pub n_features: usize,
    pub smote: bool,
    pub seed_accuracy: Vec<(u64, f64)>,
    /// Per-fold accuracy, seed-major.
    pub fold_accuracy: Vec<f64>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub sensitivity: MeanStd,
    pub specificity: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetResult {
    pub best: TranscriptConfigResult,
    pub n_configs: usize,
    /// Welch p-value of per-fold accuracies against the reference set.
    pub p_vs_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub feature_set: FeatureSet,
    pub id: String,
    pub seed: u64,
    pub fold: usize,
    pub truth: Label,
    pub prediction: Label,
    pub votes: Vec<(ModelKind, Label)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptReport {
    pub seeds: Vec<u64>,
    pub n_folds: usize,
    pub reference: Option<FeatureSet>,
    pub results: Vec<FeatureSetResult>,
    #[serde(skip)]
    pub configs: Vec<TranscriptConfigResult>,
    #[serde(skip)]
    pub predictions: Vec<PredictionRow>,
}

impl TranscriptReport {
    pub fn get(&self, set: FeatureSet) -> Option<&FeatureSetResult> {
        self.results.iter().find(|r| r.best.feature_set == set)
    }

    pub fn accuracy(&self, set: FeatureSet) -> Option<f64> {
        self.get(set).and_then(|r| r.best.accuracy.mean)
    }
}

/// Summarizes one (combo, model) across all cells.
fn summarize(combo: &Combo, model: ModelKind, cells: &[CellOutput], ci: usize, labels: &[Label], seeds: &[u64]) -> Result<TranscriptConfigResult> {
    let mut per_seed: BTreeMap<u64, Vec<Metrics>> = BTreeMap::new();
    for cell in cells {
        let pred = &cell.preds[ci]
            .iter()
            .find(|(m, _)| *m == model)
            .expect("model was fitted")
            .1;
        let truth: Vec<Label> = cell.test.iter().map(|&i| labels[i]).collect();
        per_seed.entry(cell.seed).or_default().push(metrics(&truth, pred)?);
    }
    let mut seed_acc = Vec::new();
    let mut rows: [Vec<Option<f64>>; 4] = Default::default();
    let mut fold_accuracy = Vec::new();
    for &s in seeds {
        let ms = per_seed.get(&s).map(Vec::as_slice).unwrap_or(&[]);
        fold_accuracy.extend(ms.iter().map(|m| m.accuracy));
        let acc = mean_std(&ms.iter().map(|m| m.accuracy).collect::<Vec<_>>()).0;
        seed_acc.push((s, acc));
        rows[0].push(Some(acc));
        rows[1].push(mean_std_opt(&ms.iter().map(|m| m.precision).collect::<Vec<_>>()).0);
        rows[2].push(mean_std_opt(&ms.iter().map(|m| m.sensitivity).collect::<Vec<_>>()).0);
        rows[3].push(mean_std_opt(&ms.iter().map(|m| m.specificity).collect::<Vec<_>>()).0);
    }
    Ok(TranscriptConfigResult {
        feature_set: combo.set,
        model,
        k: combo.k.k,
        n_features: combo.k.n_selected,
        smote: combo.smote,
        seed_accuracy: seed_acc,
        fold_accuracy,
        accuracy: MeanStd::of(&rows[0]),
        precision: MeanStd::of(&rows[1]),
        sensitivity: MeanStd::of(&rows[2]),
        specificity: MeanStd::of(&rows[3]),
    })
}

/// Joint search over (k, SMOTE, model) per feature set by mean accuracy.
/// Ties prefer fewer selected columns, then no SMOTE, then model order.
pub fn run_transcript_cv(table: &FeatureTable, sets: &[FeatureSet], opts: &TranscriptCvOptions) -> Result<TranscriptReport> {
    if sets.is_empty() || opts.seeds.is_empty() || opts.models.is_empty() || opts.smote.is_empty() {
        return Err(Error::Config("transcript CV needs feature sets, seeds, models and SMOTE flags".into()));
    }
    if table.columns_of(Provenance::Original).is_empty() {
        return Err(Error::Data("feature table has no Original columns".into()));
    }
    let mut combos = Vec::new();
    for &set in sets {
        for k in k_options(set, table, opts)? {
            for &smote in &opts.smote {
                combos.push(Combo { set, k, smote });
            }
        }
    }
    let mut cell_specs = Vec::new();
    for &seed in &opts.seeds {
        let groups = opts.group_by_participant.then_some(table.groups.as_slice());
        let plan = FoldPlan::stratified(&table.labels, groups, opts.n_folds, seed)?;
        for fold in 0..opts.n_folds {
            let (train, test) = plan.split(fold);
            if test.is_empty() {
                return Err(Error::Data(format!("fold {fold} is empty; too few transcripts for {} folds", opts.n_folds)));
            }
            cell_specs.push((seed, fold, train, test));
        }
    }
    let cells: Vec<CellOutput> = cell_specs
        .into_par_iter()
        .map(|(seed, fold, train, test)| {
            let preds = run_cell(table, &combos, &train, &test, opts, cell_seed(seed, fold))?;
            Ok(CellOutput { seed, fold, test, preds })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut configs = Vec::new();
    for (ci, combo) in combos.iter().enumerate() {
        for &m in &opts.models {
            configs.push(summarize(combo, m, &cells, ci, &table.labels, &opts.seeds)?);
        }
    }
    let model_rank = |m: ModelKind| opts.models.iter().position(|x| *x == m).unwrap_or(usize::MAX);
    let mut results: Vec<FeatureSetResult> = Vec::new();
    let mut best_combo = Vec::new();
    for &set in sets {
        let candidates: Vec<&TranscriptConfigResult> = configs.iter().filter(|c| c.feature_set == set).collect();
        let best = candidates
            .iter()
            .min_by(|a, b| {
                let acc = |c: &TranscriptConfigResult| c.accuracy.mean.unwrap_or(f64::NEG_INFINITY);
                acc(b)
                    .total_cmp(&acc(a))
                    .then(a.n_features.cmp(&b.n_features))
                    .then(a.smote.cmp(&b.smote))
                    .then(model_rank(a.model).cmp(&model_rank(b.model)))
            })
            .expect("every set has at least one configuration");
        best_combo.push(
            combos
                .iter()
                .position(|c| c.set == set && c.k.k == best.k && c.smote == best.smote && c.k.n_selected == best.n_features)
                .expect("best config comes from a combo"),
        );
        results.push(FeatureSetResult {
            best: (*best).clone(),
            n_configs: candidates.len(),
            p_vs_reference: None,
        });
    }
    let reference = sets.contains(&FeatureSet::PlusFD2).then_some(FeatureSet::PlusFD2);
    if let Some(r) = reference {
        let ref_folds = results
            .iter()
            .find(|x| x.best.feature_set == r)
            .map(|x| x.best.fold_accuracy.clone())
            .unwrap_or_default();
        for res in results.iter_mut().filter(|x| x.best.feature_set != r) {
            res.p_vs_reference = welch_t_test(&res.best.fold_accuracy, &ref_folds).map(|w| w.p);
        }
    }
    let mut predictions = Vec::new();
    for (res, &ci) in results.iter().zip(&best_combo) {
        for cell in &cells {
            for (j, &row) in cell.test.iter().enumerate() {
                let votes: Vec<(ModelKind, Label)> = cell.preds[ci]
                    .iter()
                    .filter(|(m, _)| *m != ModelKind::Ensemble)
                    .map(|(m, p)| (*m, p[j]))
                    .collect();
                let prediction = cell.preds[ci]
                    .iter()
                    .find(|(m, _)| *m == res.best.model)
                    .expect("model present")
                    .1[j];
                predictions.push(PredictionRow {
                    feature_set: res.best.feature_set,
                    id: table.ids[row].clone(),
                    seed: cell.seed,
                    fold: cell.fold,
                    truth: table.labels[row],
                    prediction,
                    votes,
                });
            }
        }
    }
    Ok(TranscriptReport {
        seeds: opts.seeds.clone(),
        n_folds: opts.n_folds,
        reference,
        results,
        configs,
        predictions,
    })
}

/// F value of every candidate column of each selecting set, computed on all
/// rows, and whether it falls in the top k of that set's best configuration.
pub fn selection_summary(table: &FeatureTable, report: &TranscriptReport) -> Result<Vec<(String, String, f64, bool)>> {
    let all: Vec<usize> = (0..table.n_rows()).collect();
    let scaler = RobustScaler::fit_table(table, &all)?;
    let x = scaler.transform(table, &all);
    let f = f_scores(&x, &table.labels)?;
    let names: Vec<String> = table.columns.iter().map(|c| c.qualified()).collect();
    let mut rows = Vec::new();
    for r in &report.results {
        let set = r.best.feature_set;
        let Some(k) = r.best.k else { continue };
        let candidates: Vec<usize> = set.extension().iter().flat_map(|&p| table.columns_of(p)).collect();
        let chosen = select_top_k(&f, &names, &candidates, k);
        let mut ranked = candidates.clone();
        ranked.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then_with(|| names[a].cmp(&names[b])));
        for c in ranked {
            rows.push((set.to_string(), names[c].clone(), f[c], chosen.contains(&c)));
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// significance

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided Welch t-test; `None` when either sample has fewer than two values.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let scale = ma.abs().max(mb.abs()).max(1.0);
    if se2 <= 1e-28 * scale * scale {
        let same = (ma - mb).abs() <= 1e-12 * scale;
        return Some(WelchTest {
            t: if same { 0.0 } else { (ma - mb).signum() * f64::INFINITY },
            df: na + nb - 2.0,
            p: if same { 1.0 } else { 0.0 },
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Some(WelchTest { t, df, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub distance: usize,
    /// "token" or "transcript".
    pub level: String,
    pub feature: String,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub distance: usize,
    pub token_level: usize,
    pub token_tested: usize,
    pub transcript_level: usize,
    pub transcript_tested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub alpha: f64,
    pub rows: Vec<SignificanceRow>,
    pub tests: Vec<FeatureTest>,
}

impl SignificanceTable {
    /// Share of tests rejecting at `alpha`.
    pub fn rejection_rate(&self) -> f64 {
        if self.tests.is_empty() {
            return 0.0;
        }
        self.tests.iter().filter(|t| t.p < self.alpha).count() as f64 / self.tests.len() as f64
    }
}

/// Token-level features compared between classes: the numeric dimensions
/// (observed values only) and one indicator per word POS tag.
pub fn token_feature_names() -> Vec<String> {
    DIM_NAMES
        .iter()
        .map(|d| d.to_string())
        .chain(PosTag::WORD_TAGS.iter().map(|t| format!("is_{}", t.name().to_lowercase())))
        .collect()
}

/// Per class and feature, the values of the word tokens found at distance `d`.
pub fn token_pools(corpus: &Corpus, d: usize, lex: &LexiconSet, opts: ExtractOptions) -> [Vec<Vec<f64>>; 2] {
    let n_feat = NUMERIC_DIM + PosTag::WORD_TAGS.len();
    let mut pools = [vec![Vec::new(); n_feat], vec![Vec::new(); n_feat]];
    for t in corpus.transcripts() {
        let pool = &mut pools[t.label.index()];
        for (tok, _) in extract_distance_tokens(t, d, opts) {
            if !tok.is_word() {
                continue;
            }
            let raw = raw_values(&tok, lex);
            for (k, v) in raw.iter().enumerate() {
                if let Some(v) = v {
                    pool[k].push(*v);
                }
            }
            let pos = effective_pos(&tok);
            for (k, tag) in PosTag::WORD_TAGS.iter().enumerate() {
                pool[NUMERIC_DIM + k].push(if pos == *tag { 1.0 } else { 0.0 });
            }
        }
    }
    pools
}

/// Welch tests between classes for token-level and transcript-level
/// features at each distance. The corpus must already be POS-tagged.
pub fn significance_analysis(
    corpus: &Corpus,
    lex: &LexiconSet,
    table: &FeatureTable,
    distances: &[usize],
    opts: ExtractOptions,
    alpha: f64,
) -> Result<SignificanceTable> {
    let names = token_feature_names();
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for &d in distances {
        let prov = Provenance::distance(d)?;
        let mut row = SignificanceRow {
            distance: d,
            token_level: 0,
            token_tested: 0,
            transcript_level: 0,
            transcript_tested: 0,
        };
        let pools = token_pools(corpus, d, lex, opts);
        for (k, name) in names.iter().enumerate() {
            match welch_t_test(&pools[0][k], &pools[1][k]) {
                Some(w) => {
                    row.token_tested += 1;
                    row.token_level += usize::from(w.p < alpha);
                    tests.push(FeatureTest {
                        distance: d,
                        level: "token".into(),
                        feature: name.clone(),
                        t: w.t,
                        p: w.p,
                    });
                }
                None => log::info!("D{d} token feature {name}: a class has fewer than 2 values; skipped"),
            }
        }
        for c in table.columns_of(prov) {
            let mut by_class = [Vec::new(), Vec::new()];
            for (r, l) in table.rows.iter().zip(&table.labels) {
                if let Some(v) = r[c] {
                    by_class[l.index()].push(v);
                }
            }
            let name = table.columns[c].qualified();
            match welch_t_test(&by_class[0], &by_class[1]) {
                Some(w) => {
                    row.transcript_tested += 1;
                    row.transcript_level += usize::from(w.p < alpha);
                    tests.push(FeatureTest {
                        distance: d,
                        level: "transcript".into(),
                        feature: name,
                        t: w.t,
                        p: w.p,
                    });
                }
                None => log::info!("D{d} transcript feature {name}: a class has fewer than 2 values; skipped"),
            }
        }
        rows.push(row);
    }
    Ok(SignificanceTable { alpha, rows, tests })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use Label::{CI, HC};

    #[test]
    fn confusion_fixture() {
        // TP=3, FN=1, TN=2, FP=2
        let truth = [CI, CI, CI, CI, HC, HC, HC, HC];
        let pred = [CI, CI, CI, HC, HC, HC, CI, CI];
        let m = metrics(&truth, &pred).unwrap();
        assert_eq!(m.accuracy, 0.625);
        assert_eq!(m.precision, Some(0.6));
        assert_eq!(m.sensitivity, Some(0.75));
        assert_eq!(m.specificity, Some(0.5));
    }

    #[test]
    fn perfect_and_degenerate() {
        let truth = [CI, HC, CI, HC];
        let m = metrics(&truth, &truth).unwrap();
        assert_eq!(
            m,
            Metrics {
                accuracy: 1.0,
                precision: Some(1.0),
                sensitivity: Some(1.0),
                specificity: Some(1.0)
            }
        );
        let all_ci = metrics(&truth, &[CI; 4]).unwrap();
        assert_eq!(all_ci.specificity, Some(0.0));
        let all_hc = metrics(&truth, &[HC; 4]).unwrap();
        assert_eq!(all_hc.precision, None);
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[CI], &[]).is_err());
    }

    fn label() -> impl Strategy<Value = Label> {
        prop_oneof![Just(HC), Just(CI)]
    }

    proptest! {
        #[test]
        fn metrics_permutation_equivariant(
            pairs in prop::collection::vec((label(), label()), 1..60),
            seed in any::<u64>(),
        ) {
            let (t, p): (Vec<Label>, Vec<Label>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (ts, ps): (Vec<Label>, Vec<Label>) = shuffled.into_iter().unzip();
            prop_assert_eq!(metrics(&t, &p).unwrap(), metrics(&ts, &ps).unwrap());
        }

        #[test]
        fn stratified_folds_balanced(
            labels in prop::collection::vec(label(), 10..120),
            k in 2usize..11,
            seed in any::<u64>(),
        ) {
            let plan = FoldPlan::stratified(&labels, None, k, seed).unwrap();
            let n_ci = labels.iter().filter(|l| **l == CI).count() as f64;
            let n_hc = labels.len() as f64 - n_ci;
            for f in 0..k {
                let (_, test) = plan.split(f);
                let ci = test.iter().filter(|&&i| labels[i] == CI).count() as f64;
                let hc = test.len() as f64 - ci;
                prop_assert!((ci - n_ci / k as f64).abs() <= 1.0);
                prop_assert!((hc - n_hc / k as f64).abs() <= 1.0);
            }
            prop_assert_eq!(plan.clone(), FoldPlan::stratified(&labels, None, k, seed).unwrap());
        }

        #[test]
        fn grouped_folds_keep_groups(
            sizes in prop::collection::vec((1usize..6, label()), 4..40),
            seed in any::<u64>(),
        ) {
            let mut labels = Vec::new();
            let mut groups = Vec::new();
            for (g, (n, l)) in sizes.iter().enumerate() {
                for _ in 0..*n {
                    labels.push(*l);
                    groups.push(format!("g{g}"));
                }
            }
            let plan = FoldPlan::stratified(&labels, Some(&groups), 5, seed).unwrap();
            let mut seen = std::collections::HashMap::new();
            for (i, g) in groups.iter().enumerate() {
                let f = *seen.entry(g.clone()).or_insert(plan.assignment[i]);
                prop_assert_eq!(f, plan.assignment[i]);
            }
            // every row is in exactly one test fold
            let mut covered = vec![0; labels.len()];
            for f in 0..5 {
                for i in plan.split(f).1 {
                    covered[i] += 1;
                }
            }
            prop_assert!(covered.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.25f64.sqrt()).abs() < 1e-15);
    }

    fn summary(acc: f64, std: f64) -> ConfigSummary {
        ConfigSummary {
            config: "cfg".into(),
            n_params: 1,
            seed_accuracy: vec![(0, acc)],
            mean_accuracy: acc,
            std_accuracy: std,
            mean_precision: None,
            mean_sensitivity: None,
            mean_specificity: Some(0.5),
            passes_gate: true,
        }
    }

    fn report(accs: [(f64, f64, bool); 4]) -> SubseqReport {
        let ctxs = [Context::C1, Context::C2, Context::C3, Context::Utt];
        SubseqReport {
            seeds: vec![0],
            n_folds: 5,
            train: TrainConfig::default(),
            subsets: ctxs
                .iter()
                .zip(accs)
                .map(|(&context, (a, s, gated_out))| SubsetResult {
                    context,
                    counts: ClassCounts::default(),
                    gated_out,
                    best: summary(a, s),
                    best_config: ModelConfig::new(false, 2, vec![2], 0.0),
                    seed_best: if gated_out { vec![] } else { vec![(0, a)] },
                    summaries: vec![],
                    trials: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn guide_maps_winner_to_distances() {
        let cases = [
            ([(0.7, 0.01, false), (0.6, 0.01, false), (0.5, 0.01, false), (0.5, 0.01, false)], Context::C1, vec![1]),
            ([(0.6, 0.01, false), (0.7, 0.01, false), (0.5, 0.01, false), (0.5, 0.01, false)], Context::C2, vec![1, 2]),
            ([(0.5, 0.01, false), (0.6, 0.01, false), (0.7, 0.01, false), (0.5, 0.01, false)], Context::C3, vec![1, 2, 3]),
            ([(0.5, 0.01, false), (0.6, 0.01, false), (0.5, 0.01, false), (0.7, 0.01, false)], Context::Utt, vec![1, 2, 3]),
        ];
        for (accs, winner, distances) in cases {
            let g = guide_aggregates(&report(accs)).unwrap();
            assert_eq!(g.winner, winner);
            assert_eq!(g.distances, distances);
            assert!(!g.indistinguishable);
            assert_eq!(g.warnings.is_empty(), winner != Context::Utt);
        }
    }

    #[test]
    fn guide_skips_gated_subsets_and_flags_overlap() {
        let g = guide_aggregates(&report([(0.9, 0.01, true), (0.6, 0.05, false), (0.58, 0.05, false), (0.5, 0.01, false)])).unwrap();
        assert_eq!(g.winner, Context::C2);
        assert!(g.indistinguishable);
        assert!(g.warnings.iter().any(|w| w.contains("indistinguishable")));
        // exact ties go to the smaller context
        let g = guide_aggregates(&report([(0.6, 0.0, false), (0.6, 0.0, false), (0.5, 0.0, false), (0.5, 0.0, false)])).unwrap();
        assert_eq!(g.winner, Context::C1);
        assert!(guide_aggregates(&report([(0.6, 0.0, true); 4])).is_err());
    }

    #[test]
    fn welch_matches_reference_values() {
        // two-sided Welch results from an independent statistics package
        let w = welch_t_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
        assert!((w.t + 2.2514363231593695).abs() < 1e-12);
        assert!((w.df - 5.520787746170677).abs() < 1e-9);
        assert!((w.p - 0.06913359319239236).abs() < 1e-9);
        let w = welch_t_test(&[0.5, 0.61, 0.7, 0.55, 0.58, 0.66], &[0.52, 0.48, 0.5, 0.47]).unwrap();
        assert!((w.t - 3.383275610832298).abs() < 1e-12);
        assert!((w.df - 6.281183674188466).abs() < 1e-9);
        assert!((w.p - 0.013796620746712394).abs() < 1e-9);
    }

    #[test]
    fn welch_identical_and_separated() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(welch_t_test(&a, &a).unwrap().p, 1.0);
        assert_eq!(welch_t_test(&[2.0; 5], &[2.0; 7]).unwrap().p, 1.0);
        assert_eq!(welch_t_test(&[2.0; 5], &[3.0; 7]).unwrap().p, 0.0);
        assert!(welch_t_test(&[1.0], &a).is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..100).map(|_| rng.sample(n)).collect();
        let y: Vec<f64> = (0..100).map(|_| 5.0 + rng.sample(n)).collect();
        assert!(welch_t_test(&x, &y).unwrap().p < 1e-10);
    }

    /// p from Simpson integration of the t density.
    fn t_tail_oracle(t: f64, df: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
        let f = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let n = 20_000;
        let h = t.abs() / n as f64;
        let mut s = f(0.0) + f(t.abs());
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn welch_p_matches_integrated_density(
            a in prop::collection::vec(-5.0f64..5.0, 3..30),
            b in prop::collection::vec(-5.0f64..5.0, 3..30),
        ) {
            let w = welch_t_test(&a, &b).unwrap();
            prop_assume!(w.t.is_finite() && w.t.abs() < 20.0);
            prop_assert!((w.p - t_tail_oracle(w.t, w.df)).abs() < 1e-7);
            let r = welch_t_test(&b, &a).unwrap();
            prop_assert!((r.t + w.t).abs() < 1e-12 && (r.p - w.p).abs() < 1e-12);
        }
    }

    fn random_table(n: usize, seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns = Vec::new();
        for i in 0..4 {
            columns.push(crate::features::Column { name: format!("o{i}"), provenance: Provenance::Original });
        }
        for i in 0..5 {
            columns.push(crate::features::Column { name: format!("d{i}"), provenance: Provenance::FD2 });
        }
        let labels: Vec<Label> = (0..n).map(|i| if i % 2 == 0 { HC } else { CI }).collect();
        let rows = labels
            .iter()
            .map(|l| {
                (0..columns.len())
                    .map(|j| {
                        let shift = if j == 5 && *l == CI { 1.0 } else { 0.0 };
                        // column d4 is constant
                        if j == 8 {
                            Some(1.0)
                        } else {
                            Some(rng.random::<f64>() + shift)
                        }
                    })
                    .collect()
            })
            .collect();
        FeatureTable {
            ids: (0..n).map(|i| format!("t{i}")).collect(),
            groups: (0..n).map(|i| format!("p{i}")).collect(),
            labels,
            columns,
            rows,
        }
    }

    fn fast_opts() -> TranscriptCvOptions {
        TranscriptCvOptions {
            n_folds: 3,
            seeds: vec![0, 1],
            extension_k: vec![KChoice::K(1), KChoice::K(4), KChoice::All],
            original_k: vec![KChoice::K(2)],
            classifiers: ClassifierParams {
                rf_trees: 10,
                gbm_estimators: 10,
                nn_epochs: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn test_labels_do_not_reach_training() {
        let mut table = random_table(40, 1);
        let opts = fast_opts();
        let combos: Vec<Combo> = k_options(FeatureSet::PlusFD2, &table, &opts)
            .unwrap()
            .into_iter()
            .flat_map(|k| [false, true].map(|smote| Combo { set: FeatureSet::PlusFD2, k, smote }))
            .collect();
        let plan = FoldPlan::stratified(&table.labels, None, 3, 0).unwrap();
        let (train, test) = plan.split(0);
        let before = run_cell(&table, &combos, &train, &test, &opts, 9).unwrap();
        for &i in &test {
            table.labels[i] = Label::from_index(1 - table.labels[i].index());
        }
        let after = run_cell(&table, &combos, &train, &test, &opts, 9).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn constant_column_is_never_selected() {
        let table = random_table(40, 2);
        let all: Vec<usize> = (0..40).collect();
        let x = RobustScaler::fit_table(&table, &all).unwrap().transform(&table, &all);
        let f = f_scores(&x, &table.labels).unwrap();
        assert_eq!(f[8], 0.0);
        let names: Vec<String> = table.columns.iter().map(|c| c.qualified()).collect();
        for k in 1..5 {
            let cols = selected_columns(FeatureSet::PlusFD2, KOption { k: Some(KChoice::K(k)), n_selected: k }, &table, &f, &names);
            assert!(!cols.contains(&8), "k={k}");
            assert_eq!(cols.len(), 4 + k);
        }
        // the planted column ranks first
        let one = selected_columns(FeatureSet::PlusFD2, KOption { k: Some(KChoice::K(1)), n_selected: 1 }, &table, &f, &names);
        assert_eq!(one[4], 5);
    }

    #[test]
    fn reported_means_recompute_from_folds() {
        let table = random_table(36, 3);
        let opts = fast_opts();
        let rep = run_transcript_cv(&table, &[FeatureSet::Original, FeatureSet::PlusFD2], &opts).unwrap();
        // 1 Original combo and 3 k values for F-D2, each with and without SMOTE, times 5 models
        assert_eq!(rep.configs.len(), (1 + 3) * 2 * 5);
        for c in &rep.configs {
            assert_eq!(c.fold_accuracy.len(), 6);
            for (i, (_, acc)) in c.seed_accuracy.iter().enumerate() {
                let folds = &c.fold_accuracy[3 * i..3 * i + 3];
                assert!((acc - folds.iter().sum::<f64>() / 3.0).abs() < 1e-12);
            }
            let accs: Vec<f64> = c.seed_accuracy.iter().map(|s| s.1).collect();
            let (m, s) = mean_std(&accs);
            assert_eq!(c.accuracy.mean, Some(m));
            assert_eq!(c.accuracy.std, Some(s));
        }
        for r in &rep.results {
            let b = &r.best;
            let best = rep
                .configs
                .iter()
                .filter(|c| c.feature_set == b.feature_set)
                .map(|c| c.accuracy.mean.unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(b.accuracy.mean, Some(best));
            // per-fold accuracy from the prediction log
            for (i, &seed) in opts.seeds.iter().enumerate() {
                for fold in 0..3 {
                    let rows: Vec<&PredictionRow> = rep
                        .predictions
                        .iter()
                        .filter(|p| p.feature_set == b.feature_set && p.seed == seed && p.fold == fold)
                        .collect();
                    let acc = rows.iter().filter(|p| p.truth == p.prediction).count() as f64 / rows.len() as f64;
                    assert!((acc - b.fold_accuracy[3 * i + fold]).abs() < 1e-12);
                }
            }
        }
        assert_eq!(rep.reference, Some(FeatureSet::PlusFD2));
        assert!(rep.get(FeatureSet::Original).unwrap().p_vs_reference.is_some());
        assert!(rep.get(FeatureSet::PlusFD2).unwrap().best.accuracy.mean > rep.get(FeatureSet::Original).unwrap().best.accuracy.mean);
    }

    #[test]
    fn shuffled_labels_give_chance_subsequence_accuracy() {
        use crate::lexicon::tag_corpus;
        use crate::model::{grid, SizeSpec};
        use crate::synth::{generate_synthetic, SyntheticSpec};
        let syn = generate_synthetic(&SyntheticSpec {
            n_transcripts: 60,
            signal_strength: 0.0,
            vocab_size: 800,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let corpus = tag_corpus(&syn.corpus, &syn.tagger());
        let table = crate::subseq::dedup(&SubsetTable::extract(&corpus, Context::C2, ExtractOptions::default()).unwrap());
        let mut labels: Vec<Label> = table.subsequences().iter().map(|s| s.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
        let subs = table
            .subsequences()
            .iter()
            .zip(labels)
            .map(|(s, l)| crate::subseq::Subsequence { label: l, ..s.clone() })
            .collect();
        let shuffled = SubsetTable::new(Context::C2, subs);
        let opts = SubseqCvOptions {
            seeds: vec![0],
            train: TrainConfig { epochs: 3, ..Default::default() },
            ..Default::default()
        };
        let g: Vec<GridPoint> = grid(&SizeSpec::reduced()).into_iter().take(4).collect();
        let rep = run_subsequence_cv(&[shuffled], &syn.lexicon(), &g, &opts).unwrap();
        for s in &rep.subsets[0].summaries {
            assert!((0.40..=0.60).contains(&s.mean_accuracy), "{} {}", s.config, s.mean_accuracy);
        }
    }
}

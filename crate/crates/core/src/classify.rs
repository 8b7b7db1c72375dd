//! Univariate selection, SMOTE, and the transcript classifiers.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::model::dot;

// ---------------------------------------------------------------------------
// ANOVA F and top-k

/// One-way ANOVA F between the two classes. Zero within-class spread gives
/// +inf when the class means differ and 0 otherwise.
pub fn anova_f(values: &[f64], labels: &[Label]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::LengthMismatch("values vs labels".into()));
    }
    let mut n = [0usize; 2];
    let mut sum = [0.0; 2];
    for (&v, l) in values.iter().zip(labels) {
        n[l.index()] += 1;
        sum[l.index()] += v;
    }
    if n[0] == 0 {
        return Err(Error::EmptyClass("HC"));
    }
    if n[1] == 0 {
        return Err(Error::EmptyClass("CI"));
    }
    let mean = [sum[0] / n[0] as f64, sum[1] / n[1] as f64];
    let total = values.len() as f64;
    let grand = (sum[0] + sum[1]) / total;
    let ssb: f64 = (0..2).map(|c| n[c] as f64 * (mean[c] - grand).powi(2)).sum();
    let ssw: f64 = values
        .iter()
        .zip(labels)
        .map(|(&v, l)| (v - mean[l.index()]).powi(2))
        .sum();
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if ssw <= 1e-24 * scale * scale * total {
        return Ok(if ssb > 1e-24 * scale * scale * total { f64::INFINITY } else { 0.0 });
    }
    let df_w = total - 2.0;
    if df_w <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(ssb / (ssw / df_w))
}

/// F for every column of a row-major matrix.
pub fn f_scores(x: &[Vec<f64>], labels: &[Label]) -> Result<Vec<f64>> {
    let d = x.first().map_or(0, Vec::len);
    (0..d)
        .map(|c| {
            let col: Vec<f64> = x.iter().map(|r| r[c]).collect();
            anova_f(&col, labels)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "KRepr", into = "KRepr")]
pub enum KChoice {
    K(usize),
    All,
}

/// Config form: a count or the string "ALL".
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KRepr {
    Count(usize),
    Word(String),
}

impl From<KChoice> for KRepr {
    fn from(k: KChoice) -> Self {
        match k {
            KChoice::K(k) => KRepr::Count(k),
            KChoice::All => KRepr::Word("ALL".into()),
        }
    }
}

impl TryFrom<KRepr> for KChoice {
    type Error = Error;

    fn try_from(r: KRepr) -> Result<Self> {
        match r {
            KRepr::Count(k) => Ok(KChoice::K(k)),
            KRepr::Word(w) => w.parse(),
        }
    }
}

impl std::str::FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(KChoice::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(KChoice::K(k)),
            _ => Err(Error::Config(format!("k must be a positive count or ALL, got `{s}`"))),
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::K(k) => write!(f, "{k}"),
            KChoice::All => f.write_str("ALL"),
        }
    }
}

impl KChoice {
    /// Number of columns actually taken from `available`.
    pub fn effective(self, available: usize) -> usize {
        match self {
            KChoice::K(k) => k.min(available),
            KChoice::All => available,
        }
    }
}

/// k values tried when extending Original with an aggregate set.
pub fn extension_k_grid() -> Vec<KChoice> {
    [3, 5, 7, 9, 11, 13, 15, 20, 25, 30]
        .into_iter()
        .map(KChoice::K)
        .chain(std::iter::once(KChoice::All))
        .collect()
}

/// k values tried when selecting within Original alone.
pub fn original_k_grid() -> Vec<KChoice> {
    (20..=100)
        .step_by(5)
        .chain([150, 200, 250, 300, 350])
        .map(KChoice::K)
        .collect()
}

/// Indices of the `k` best `candidates` by F (descending), ties broken by
/// name. k above the candidate count is clamped.
pub fn select_top_k(f: &[f64], names: &[String], candidates: &[usize], k: KChoice) -> Vec<usize> {
    if let KChoice::K(k) = k {
        if k > candidates.len() {
            log::debug!("k={k} exceeds the {} available columns; using all", candidates.len());
        }
    }
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        f[b].partial_cmp(&f[a])
            .unwrap_or_else(|| f[a].is_nan().cmp(&f[b].is_nan()))
            .then_with(|| names[a].cmp(&names[b]))
    });
    order.truncate(k.effective(candidates.len()));
    order
}

// ---------------------------------------------------------------------------
// SMOTE

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `n_new` synthetic rows interpolated between minority rows and their
/// nearest minority neighbours.
pub fn smote_rows(minority: &[&[f64]], k_neighbors: usize, n_new: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if minority.len() < 2 {
        return Err(Error::SmoteMinority(minority.len()));
    }
    let k = k_neighbors.clamp(1, minority.len() - 1);
    let neighbours: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| (sq_dist(minority[i], minority[j]), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    Ok((0..n_new)
        .map(|_| {
            let i = rng.random_range(0..minority.len());
            let nn = neighbours[i][rng.random_range(0..k)];
            let u: f64 = rng.random();
            minority[i]
                .iter()
                .zip(minority[nn])
                .map(|(x, y)| x + u * (y - x))
                .collect()
        })
        .collect())
}

/// Appends synthetic minority rows until both classes have equal size.
pub fn smote(x: &[Vec<f64>], y: &[Label], k_neighbors: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Label>)> {
    let n_ci = y.iter().filter(|l| l.is_positive()).count();
    let n_hc = y.len() - n_ci;
    let mut xo = x.to_vec();
    let mut yo = y.to_vec();
    if n_ci == n_hc {
        return Ok((xo, yo));
    }
    let minority = if n_ci < n_hc { Label::CI } else { Label::HC };
    let rows: Vec<&[f64]> = x
        .iter()
        .zip(y)
        .filter(|(_, l)| **l == minority)
        .map(|(r, _)| r.as_slice())
        .collect();
    let n_new = n_ci.abs_diff(n_hc);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xo.extend(smote_rows(&rows, k_neighbors, n_new, &mut rng)?);
    yo.extend(std::iter::repeat_n(minority, n_new));
    Ok((xo, yo))
}

// ---------------------------------------------------------------------------
// classifiers

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    RandomForest,
    GradientBoosting,
    Svm,
    NeuralNet,
    Ensemble,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
        ModelKind::Svm,
        ModelKind::NeuralNet,
        ModelKind::Ensemble,
    ];
    pub const BASE: [ModelKind; 4] = [
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
        ModelKind::Svm,
        ModelKind::NeuralNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "RF",
            ModelKind::GradientBoosting => "GBM",
            ModelKind::Svm => "SVM",
            ModelKind::NeuralNet => "NN",
            ModelKind::Ensemble => "Ensemble",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    pub rf_trees: usize,
    pub gbm_estimators: usize,
    pub gbm_depth: usize,
    pub gbm_learning_rate: f64,
    pub svm_c: f64,
    /// RBF width; `None` means 1 / n_features.
    pub svm_gamma: Option<f64>,
    pub nn_hidden: usize,
    pub nn_epochs: usize,
    pub nn_learning_rate: f64,
    pub nn_alpha: f64,
    pub nn_batch_size: usize,
    pub smote_k: usize,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            rf_trees: 100,
            gbm_estimators: 150,
            gbm_depth: 3,
            gbm_learning_rate: 0.1,
            svm_c: 1.0,
            svm_gamma: None,
            nn_hidden: 10,
            nn_epochs: 200,
            nn_learning_rate: 0.01,
            nn_alpha: 1e-4,
            nn_batch_size: 200,
            smote_k: 5,
        }
    }
}

/// Majority vote; a tie goes to CI.
pub fn vote(votes: &[Label]) -> Label {
    let ci = votes.iter().filter(|l| l.is_positive()).count();
    if 2 * ci >= votes.len() {
        Label::CI
    } else {
        Label::HC
    }
}

/// Predictions of every base model and of their ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub base: Vec<(ModelKind, Vec<Label>)>,
    pub ensemble: Vec<Label>,
}

impl Predictions {
    pub fn get(&self, kind: ModelKind) -> &[Label] {
        if kind == ModelKind::Ensemble {
            return &self.ensemble;
        }
        &self
            .base
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("every base model is present")
            .1
    }
}

fn check_training(x: &[Vec<f64>], y: &[Label]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch("training rows vs labels".into()));
    }
    if x.is_empty() {
        return Err(Error::EmptyData("no training rows".into()));
    }
    let ci = y.iter().filter(|l| l.is_positive()).count();
    if ci == 0 || ci == y.len() {
        return Err(Error::SingleClassTraining);
    }
    Ok(())
}

/// Fits one base model and predicts `test`. Ensemble fits all four.
pub fn fit_predict(
    kind: ModelKind,
    params: &ClassifierParams,
    x: &[Vec<f64>],
    y: &[Label],
    test: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<Label>> {
    check_training(x, y)?;
    Ok(match kind {
        ModelKind::RandomForest => RandomForest::fit(x, y, params.rf_trees, seed).predict(test),
        ModelKind::GradientBoosting => {
            GradientBoosting::fit(x, y, params.gbm_estimators, params.gbm_depth, params.gbm_learning_rate).predict(test)
        }
        ModelKind::Svm => {
            let gamma = params.svm_gamma.unwrap_or(1.0 / x[0].len().max(1) as f64);
            Svm::fit(x, y, params.svm_c, gamma).predict(test)
        }
        ModelKind::NeuralNet => NeuralNet::fit(x, y, params, seed).predict(test),
        ModelKind::Ensemble => fit_predict_all(params, x, y, test, seed)?.ensemble,
    })
}

pub fn fit_predict_all(params: &ClassifierParams, x: &[Vec<f64>], y: &[Label], test: &[Vec<f64>], seed: u64) -> Result<Predictions> {
    let base = ModelKind::BASE
        .iter()
        .map(|&k| Ok((k, fit_predict(k, params, x, y, test, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = (0..test.len())
        .map(|i| vote(&base.iter().map(|(_, p)| p[i]).collect::<Vec<_>>()))
        .collect();
    Ok(Predictions { base, ensemble })
}

// ---------------------------------------------------------------------------
// CART trees

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Gini classification tree grown to purity on `idx` (duplicates allowed),
/// trying `max_features` random features per split. Leaves hold P(CI).
fn grow_gini(cols: &[Vec<f64>], y: &[f64], idx: Vec<usize>, max_features: usize, rng: &mut ChaCha8Rng) -> Tree {
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut stack = vec![(0usize, idx)];
    let d = cols.len();
    let mut features: Vec<usize> = (0..d).collect();
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    while let Some((at, idx)) = stack.pop() {
        let n = idx.len() as f64;
        let pos: f64 = idx.iter().map(|&i| y[i]).sum();
        if pos == 0.0 || pos == n || idx.len() < 2 {
            nodes[at] = Node::Leaf(pos / n);
            continue;
        }
        // impurity decrease ∝ weighted child Gini; minimise Σ n_c (1 - Σ p²)
        let mut best: Option<(f64, usize, f64)> = None;
        features.shuffle(rng);
        for &f in features.iter().take(max_features) {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (cols[f][i], y[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut lp = 0.0;
            for s in 1..pairs.len() {
                lp += pairs[s - 1].1;
                if pairs[s].0 <= pairs[s - 1].0 {
                    continue;
                }
                let ln = s as f64;
                let rn = n - ln;
                let rp = pos - lp;
                let score = ln - (lp * lp + (ln - lp) * (ln - lp)) / ln + rn - (rp * rp + (rn - rp) * (rn - rp)) / rn;
                if best.is_none_or(|b| score < b.0 - 1e-12) {
                    best = Some((score, f, 0.5 * (pairs[s - 1].0 + pairs[s].0)));
                }
            }
        }
        let parent = n - (pos * pos + (n - pos) * (n - pos)) / n;
        match best {
            Some((score, feature, threshold)) if score < parent - 1e-12 => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| cols[feature][i] <= threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right: left + 1,
                };
                stack.push((left + 1, r));
                stack.push((left, l));
            }
            _ => nodes[at] = Node::Leaf(pos / n),
        }
    }
    Tree { nodes }
}

fn columns(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x.first().map_or(0, Vec::len);
    (0..d).map(|c| x.iter().map(|r| r[c]).collect()).collect()
}

fn targets(y: &[Label]) -> Vec<f64> {
    y.iter().map(|l| l.index() as f64).collect()
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[Label], n_trees: usize, seed: u64) -> RandomForest {
        let cols = columns(x);
        let yt = targets(y);
        let n = x.len();
        let max_features = ((cols.len() as f64).sqrt().floor() as usize).max(1);
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64 + 1);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow_gini(&cols, &yt, idx, max_features, &mut rng)
            })
            .collect();
        RandomForest { trees }
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<Label> {
        x.iter()
            .map(|r| if self.predict_proba(r) > 0.5 { Label::CI } else { Label::HC })
            .collect()
    }
}

/// Gradient boosting on the logistic loss with depth-limited regression
/// trees and Newton leaf values.
#[derive(Debug, Clone)]
pub struct GradientBoosting {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GradientBoosting {
    pub fn fit(x: &[Vec<f64>], y: &[Label], n_estimators: usize, depth: usize, learning_rate: f64) -> GradientBoosting {
        let cols = columns(x);
        let yt = targets(y);
        let n = x.len();
        let p0 = (yt.iter().sum::<f64>() / n as f64).clamp(1e-12, 1.0 - 1e-12);
        let init = (p0 / (1.0 - p0)).ln();
        let order: Vec<Vec<usize>> = cols
            .iter()
            .map(|c| {
                let mut o: Vec<usize> = (0..n).collect();
                o.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
                o
            })
            .collect();
        let mut raw = vec![init; n];
        let mut trees = Vec::with_capacity(n_estimators);
        let mut resid = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..n_estimators {
            for i in 0..n {
                let p = 1.0 / (1.0 + (-raw[i]).exp());
                resid[i] = yt[i] - p;
                hess[i] = p * (1.0 - p);
            }
            let tree = grow_regression(&cols, &order, &resid, &hess, depth);
            for i in 0..n {
                raw[i] += learning_rate * tree.predict_row(&x[i]);
            }
            trees.push(tree);
        }
        GradientBoosting {
            init,
            learning_rate,
            trees,
        }
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<Label> {
        x.iter()
            .map(|r| if self.decision(r) > 0.0 { Label::CI } else { Label::HC })
            .collect()
    }
}

/// Level-wise least-squares tree on residuals, scanning presorted columns
/// once per level. Leaves take the Newton step Σr / Σp(1-p).
const NONE: usize = usize::MAX;

fn grow_regression(cols: &[Vec<f64>], order: &[Vec<usize>], resid: &[f64], hess: &[f64], depth: usize) -> Tree {
    let n = resid.len();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut node_of = vec![0usize; n];
    let mut frontier = vec![0usize];
    #[derive(Clone, Copy)]
    struct Stat {
        n: f64,
        s: f64,
    }
    for level in 0..=depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot = vec![NONE; nodes.len()];
        for (k, &id) in frontier.iter().enumerate() {
            slot[id] = k;
        }
        // frontier slot of each row, NONE once its node is final
        let row_slot: Vec<usize> = node_of.iter().map(|&id| slot[id]).collect();
        let mut total = vec![Stat { n: 0.0, s: 0.0 }; frontier.len()];
        let mut spread = vec![(f64::INFINITY, f64::NEG_INFINITY); frontier.len()];
        for i in 0..n {
            let k = row_slot[i];
            if k != NONE {
                total[k].n += 1.0;
                total[k].s += resid[i];
                spread[k] = (spread[k].0.min(resid[i]), spread[k].1.max(resid[i]));
            }
        }
        // (gain, feature, threshold) per frontier node
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; frontier.len()];
        if level < depth {
            let mut left = vec![Stat { n: 0.0, s: 0.0 }; frontier.len()];
            let mut last = vec![f64::NAN; frontier.len()];
            for (f, ord) in order.iter().enumerate() {
                left.iter_mut().for_each(|l| *l = Stat { n: 0.0, s: 0.0 });
                last.iter_mut().for_each(|l| *l = f64::NAN);
                for &i in ord {
                    let k = row_slot[i];
                    if k == NONE {
                        continue;
                    }
                    let v = cols[f][i];
                    let l = left[k];
                    if l.n > 0.0 && v > last[k] {
                        let t = total[k];
                        let rn = t.n - l.n;
                        let gain = l.s * l.s / l.n + (t.s - l.s) * (t.s - l.s) / rn - t.s * t.s / t.n;
                        if best[k].is_none_or(|b| gain > b.0 + 1e-12 * t.n) {
                            best[k] = Some((gain, f, 0.5 * (last[k] + v)));
                        }
                    }
                    left[k].n += 1.0;
                    left[k].s += resid[i];
                    last[k] = v;
                }
            }
        }
        let mut next = Vec::new();
        let mut children = vec![None; frontier.len()];
        for (k, &id) in frontier.iter().enumerate() {
            match best[k] {
                Some((_, feature, threshold)) if spread[k].1 - spread[k].0 > 1e-12 => {
                    let l = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[id] = Node::Split {
                        feature,
                        threshold,
                        left: l,
                        right: l + 1,
                    };
                    children[k] = Some((feature, threshold, l));
                    next.push(l);
                    next.push(l + 1);
                }
                _ => {
                    let (mut num, mut den) = (0.0, 0.0);
                    for i in 0..n {
                        if node_of[i] == id {
                            num += resid[i];
                            den += hess[i];
                        }
                    }
                    nodes[id] = Node::Leaf(if den.abs() < 1e-150 { 0.0 } else { num / den });
                }
            }
        }
        for i in 0..n {
            let k = row_slot[i];
            if k != NONE {
                if let Some((feature, threshold, l)) = children[k] {
                    node_of[i] = if cols[feature][i] <= threshold { l } else { l + 1 };
                }
            }
        }
        frontier = next;
    }
    // nodes created at the last level are leaves
    for &id in &frontier {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            if node_of[i] == id {
                num += resid[i];
                den += hess[i];
            }
        }
        nodes[id] = Node::Leaf(if den.abs() < 1e-150 { 0.0 } else { num / den });
    }
    Tree { nodes }
}

// ---------------------------------------------------------------------------
// SVM

/// RBF-kernel C-SVM solved by SMO with second-order working-set selection.
#[derive(Debug, Clone)]
pub struct Svm {
    pub support: Vec<Vec<f64>>,
    /// α_i y_i for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

impl Svm {
    pub fn fit(x: &[Vec<f64>], y: &[Label], c: f64, gamma: f64) -> Svm {
        const TAU: f64 = 1e-12;
        const EPS: f64 = 1e-3;
        let n = x.len();
        let ys: Vec<f64> = y.iter().map(|l| if l.is_positive() { 1.0 } else { -1.0 }).collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rbf(&x[i], &x[j], gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let q = |i: usize, j: usize| ys[i] * ys[j] * k[i * n + j];
        let mut alpha = vec![0.0; n];
        let mut g = vec![-1.0; n];
        let upper = |a: f64| a >= c;
        let lower = |a: f64| a <= 0.0;
        let max_iter = (100 * n).max(10_000_000.min(1000 * n));
        for _ in 0..max_iter {
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = usize::MAX;
            for t in 0..n {
                if ys[t] > 0.0 {
                    if !upper(alpha[t]) && -g[t] >= gmax {
                        gmax = -g[t];
                        i_sel = t;
                    }
                } else if !lower(alpha[t]) && g[t] >= gmax {
                    gmax = g[t];
                    i_sel = t;
                }
            }
            if i_sel == usize::MAX {
                break;
            }
            let i = i_sel;
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = usize::MAX;
            let mut obj_min = f64::INFINITY;
            for t in 0..n {
                let (eligible, grad_diff, g2, sign) = if ys[t] > 0.0 {
                    (!lower(alpha[t]), gmax + g[t], g[t], -1.0)
                } else {
                    (!upper(alpha[t]), gmax - g[t], -g[t], 1.0)
                };
                if !eligible {
                    continue;
                }
                gmax2 = gmax2.max(g2);
                if grad_diff > 0.0 {
                    let quad = k[i * n + i] + k[t * n + t] + sign * 2.0 * ys[i] * q(i, t);
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
            if gmax + gmax2 < EPS || j_sel == usize::MAX {
                break;
            }
            let j = j_sel;
            let (oi, oj) = (alpha[i], alpha[j]);
            let qij = q(i, j);
            if ys[i] != ys[j] {
                let quad = (k[i * n + i] + k[j * n + j] + 2.0 * qij).max(TAU);
                let delta = (-g[i] - g[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (k[i * n + i] + k[j * n + j] - 2.0 * qij).max(TAU);
                let delta = (g[i] - g[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - oi, alpha[j] - oj);
            for t in 0..n {
                g[t] += q(i, t) * di + q(j, t) * dj;
            }
        }
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut n_free, mut sum_free) = (0usize, 0.0);
        for t in 0..n {
            let yg = ys[t] * g[t];
            if upper(alpha[t]) {
                if ys[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if lower(alpha[t]) {
                if ys[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
        let (support, coef) = (0..n)
            .filter(|&t| alpha[t] > 0.0)
            .map(|t| (x[t].clone(), alpha[t] * ys[t]))
            .unzip();
        Svm {
            support,
            coef,
            rho,
            gamma,
        }
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * rbf(s, row, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<Label> {
        x.iter()
            .map(|r| if self.decision(r) > 0.0 { Label::CI } else { Label::HC })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// neural network

/// One hidden ReLU layer and a logistic output, trained with Adam on the
/// log loss plus an L2 penalty on the weights.
#[derive(Debug, Clone)]
pub struct NeuralNet {
    d: usize,
    h: usize,
    w1: Vec<f64>, // h × d
    b1: Vec<f64>,
    w2: Vec<f64>, // h
    b2: f64,
}

impl NeuralNet {
    pub fn fit(x: &[Vec<f64>], y: &[Label], p: &ClassifierParams, seed: u64) -> NeuralNet {
        let n = x.len();
        let d = x[0].len();
        let h = p.nn_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = (6.0 / (d + h) as f64).sqrt();
        let b2 = (2.0 / (h + 1) as f64).sqrt();
        let mut theta: Vec<f64> = Vec::with_capacity(h * d + 2 * h + 1);
        theta.extend((0..h * d + h).map(|_| rng.random_range(-b1..=b1)));
        theta.extend((0..h + 1).map(|_| rng.random_range(-b2..=b2)));
        let n_params = theta.len();
        let (o_b1, o_w2, o_b2) = (h * d, h * d + h, h * d + 2 * h);
        let is_weight = |i: usize| i < o_b1 || (o_w2..o_b2).contains(&i);
        let yt = targets(y);
        let mut m = vec![0.0; n_params];
        let mut v = vec![0.0; n_params];
        let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
        let batch = p.nn_batch_size.clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut grad = vec![0.0; n_params];
        let mut hid = vec![0.0; h];
        let mut step = 0i32;
        for _ in 0..p.nn_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let bs = chunk.len() as f64;
                for &i in chunk {
                    let row = &x[i];
                    for k in 0..h {
                        hid[k] = (dot(&theta[k * d..(k + 1) * d], row) + theta[o_b1 + k]).max(0.0);
                    }
                    let z = dot(&theta[o_w2..o_b2], &hid) + theta[o_b2];
                    let delta = (1.0 / (1.0 + (-z).exp()) - yt[i]) / bs;
                    grad[o_b2] += delta;
                    for k in 0..h {
                        grad[o_w2 + k] += delta * hid[k];
                        if hid[k] > 0.0 {
                            let dk = delta * theta[o_w2 + k];
                            grad[o_b1 + k] += dk;
                            for (gw, xv) in grad[k * d..(k + 1) * d].iter_mut().zip(row) {
                                *gw += dk * xv;
                            }
                        }
                    }
                }
                step += 1;
                let lr_t = p.nn_learning_rate * (1.0 - beta2.powi(step)).sqrt() / (1.0 - beta1.powi(step));
                for i in 0..n_params {
                    let g = grad[i] + if is_weight(i) { p.nn_alpha * theta[i] / bs } else { 0.0 };
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    theta[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
                }
            }
        }
        NeuralNet {
            d,
            h,
            w1: theta[..o_b1].to_vec(),
            b1: theta[o_b1..o_w2].to_vec(),
            w2: theta[o_w2..o_b2].to_vec(),
            b2: theta[o_b2],
        }
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        (0..self.h)
            .map(|k| self.w2[k] * (dot(&self.w1[k * self.d..(k + 1) * self.d], row) + self.b1[k]).max(0.0))
            .sum::<f64>()
            + self.b2
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<Label> {
        x.iter()
            .map(|r| if self.decision(r) > 0.0 { Label::CI } else { Label::HC })
            .collect()
    }
}

/// Rows ordered by F descending: a helper for reports.
pub fn rank_columns(f: &[f64], names: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| f[b].partial_cmp(&f[a]).unwrap_or(Ordering::Equal).then_with(|| names[a].cmp(&names[b])));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{CI, HC};

    #[test]
    fn f_fixture() {
        assert_eq!(anova_f(&[1.0, 2.0, 3.0, 4.0], &[HC, HC, CI, CI]).unwrap(), 8.0);
        assert_eq!(anova_f(&[5.0, 5.0, 5.0, 5.0], &[HC, HC, CI, CI]).unwrap(), 0.0);
        assert_eq!(anova_f(&[1.0, 1.0, 2.0, 2.0], &[HC, HC, CI, CI]).unwrap(), f64::INFINITY);
        assert!(matches!(anova_f(&[1.0, 2.0], &[HC, HC]), Err(Error::EmptyClass("CI"))));
    }

    /// Pooled-variance two-sample t statistic, computed independently.
    fn pooled_t(a: &[f64], b: &[f64]) -> f64 {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>();
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
        let sp2 = (va + vb) / (a.len() + b.len() - 2) as f64;
        (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt()
    }

    fn two_class() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-50.0f64..50.0, 2..30),
            prop::collection::vec(-50.0f64..50.0, 2..30),
        )
    }

    fn joined(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<Label>) {
        let v = [a, b].concat();
        let l = std::iter::repeat_n(HC, a.len()).chain(std::iter::repeat_n(CI, b.len())).collect();
        (v, l)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn f_is_t_squared((a, b) in two_class()) {
            let (v, l) = joined(&a, &b);
            let f = anova_f(&v, &l).unwrap();
            let t = pooled_t(&a, &b);
            prop_assert!((f - t * t).abs() <= 1e-9 * f.abs().max(1.0), "F={f} t²={}", t * t);
        }
    }

    proptest! {
        #[test]
        fn f_affine_invariant((a, b) in two_class(), scale in 0.01f64..100.0, shift in -100.0f64..100.0) {
            let (v, l) = joined(&a, &b);
            let w: Vec<f64> = v.iter().map(|x| scale * x + shift).collect();
            let f1 = anova_f(&v, &l).unwrap();
            let f2 = anova_f(&w, &l).unwrap();
            prop_assert!((f1 - f2).abs() <= 1e-9 * f1.abs().max(1.0));
        }

        #[test]
        fn smote_stays_in_bounding_box(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..12),
            n_new in 0usize..30,
            seed in any::<u64>(),
        ) {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let out = smote_rows(&refs, 5, n_new, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.len(), n_new);
            for s in &out {
                for c in 0..3 {
                    let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                    let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(s[c] >= lo - 1e-12 && s[c] <= hi + 1e-12);
                }
            }
            let again = smote_rows(&refs, 5, n_new, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out, again);
        }
    }

    #[test]
    fn smote_segment_and_balance() {
        let rows: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 1.0]];
        let out = smote_rows(&rows, 1, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.iter().all(|p| p[0] == p[1] && (0.0..=1.0).contains(&p[0])));

        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let (xo, yo) = smote(&x, &[HC, HC, CI, CI], 5, 0).unwrap();
        assert_eq!((xo.len(), yo.len()), (4, 4));
        let (xo, yo) = smote(&[x.clone(), vec![vec![9.0]]].concat(), &[HC, HC, CI, CI, CI], 5, 0).unwrap();
        assert_eq!(xo.len(), 6);
        assert_eq!(yo.iter().filter(|l| **l == HC).count(), 3);
        assert!(matches!(
            smote(&x[..3], &[HC, CI, CI], 5, 0),
            Err(Error::SmoteMinority(1))
        ));
    }

    #[test]
    fn top_k_ordering() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(select_top_k(&[8.0, 0.0, 2.0], &names, &[0, 1, 2], KChoice::K(2)), vec![0, 2]);
        assert_eq!(select_top_k(&[8.0, 0.0, 2.0], &names, &[0, 1, 2], KChoice::All).len(), 3);
        assert_eq!(select_top_k(&[1.0, 1.0, 1.0], &names, &[2, 1, 0], KChoice::K(2)), vec![0, 1]);
        assert_eq!(select_top_k(&[1.0, f64::INFINITY, 1.0], &names, &[0, 1, 2], KChoice::K(1)), vec![1]);
        // restriction: only candidates are returned, k clamps
        assert_eq!(select_top_k(&[8.0, 0.0, 2.0], &names, &[1, 2], KChoice::K(10)), vec![2, 1]);
    }

    #[test]
    fn k_grids() {
        let ext: Vec<String> = extension_k_grid().iter().map(|k| k.to_string()).collect();
        assert_eq!(ext, ["3", "5", "7", "9", "11", "13", "15", "20", "25", "30", "ALL"]);
        let orig: Vec<usize> = original_k_grid()
            .iter()
            .map(|k| match k {
                KChoice::K(k) => *k,
                KChoice::All => 0,
            })
            .collect();
        assert_eq!(
            orig,
            [20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90, 95, 100, 150, 200, 250, 300, 350]
        );
    }

    #[test]
    fn vote_rule() {
        assert_eq!(vote(&[CI, CI, HC, HC]), CI);
        assert_eq!(vote(&[HC, HC, HC, CI]), HC);
        assert_eq!(vote(&[CI, CI, CI, HC]), CI);
    }

    fn separated() -> (Vec<Vec<f64>>, Vec<Label>) {
        (
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![3.0, 0.0], vec![3.0, 1.0]],
            vec![HC, HC, CI, CI],
        )
    }

    fn xor() -> (Vec<Vec<f64>>, Vec<Label>) {
        let pts = [(-1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (1.0, -1.0)];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (k, &(a, b)) in pts.iter().enumerate() {
            for s in [1.0, 0.8] {
                x.push(vec![a * s, b * s]);
                y.push(if k < 2 { HC } else { CI });
            }
        }
        (x, y)
    }

    #[test]
    fn forest_memorizes() {
        let (x, y) = separated();
        let p = fit_predict(ModelKind::RandomForest, &ClassifierParams::default(), &x, &y, &x, 3).unwrap();
        assert_eq!(p, y);
    }

    #[test]
    fn svm_solves_xor() {
        let (x, y) = xor();
        let p = fit_predict(ModelKind::Svm, &ClassifierParams::default(), &x, &y, &x, 0).unwrap();
        assert_eq!(p, y);
    }

    #[test]
    fn boosting_and_nn_fit_simple_data() {
        let (x, y) = xor();
        let params = ClassifierParams::default();
        assert_eq!(fit_predict(ModelKind::GradientBoosting, &params, &x, &y, &x, 0).unwrap(), y);
        let (x, y) = separated();
        assert_eq!(fit_predict(ModelKind::NeuralNet, &params, &x, &y, &x, 0).unwrap(), y);
    }

    #[test]
    fn ensemble_is_vote_of_bases() {
        let (x, y) = xor();
        let all = fit_predict_all(&ClassifierParams::default(), &x, &y, &x, 1).unwrap();
        for i in 0..x.len() {
            let votes: Vec<Label> = ModelKind::BASE.iter().map(|&k| all.get(k)[i]).collect();
            assert_eq!(all.ensemble[i], vote(&votes));
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        for kind in ModelKind::ALL {
            assert!(matches!(
                fit_predict(kind, &ClassifierParams::default(), &x, &[CI, CI], &x, 0),
                Err(Error::SingleClassTraining)
            ));
        }
    }

    #[test]
    fn forest_is_reproducible() {
        let (x, y) = xor();
        let a = RandomForest::fit(&x, &y, 20, 9);
        let b = RandomForest::fit(&x, &y, 20, 9);
        let pa: Vec<f64> = x.iter().map(|r| a.predict_proba(r)).collect();
        let pb: Vec<f64> = x.iter().map(|r| b.predict_proba(r)).collect();
        assert_eq!(pa, pb);
    }
}

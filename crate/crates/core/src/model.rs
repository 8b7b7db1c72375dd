//! GRU encoder with word-level attention and a ReLU feed-forward head,
//! trained with hand-written backpropagation through time.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, PosTag};
use crate::error::{Error, Result};
use crate::eval::{mean_std, mean_std_opt, Confusion, Metrics};
use crate::lexicon::{TokenVector, NUMERIC_DIM, POS_EMBED_DIM};

pub const N_CLASSES: usize = 2;
pub const SPECIFICITY_GATE: f64 = 0.288;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub bidirectional: bool,
    pub gru_hidden: usize,
    /// Hidden FFN widths; the 2-way output layer is implicit.
    pub ffn_layers: Vec<usize>,
    pub dropout_p: f64,
    pub pos_embed_dim: usize,
    pub input_dim: usize,
}

impl ModelConfig {
    pub fn new(bidirectional: bool, gru_hidden: usize, ffn_layers: Vec<usize>, dropout_p: f64) -> Self {
        ModelConfig {
            bidirectional,
            gru_hidden,
            ffn_layers,
            dropout_p,
            pos_embed_dim: POS_EMBED_DIM,
            input_dim: NUMERIC_DIM + POS_EMBED_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != NUMERIC_DIM + self.pos_embed_dim {
            return Err(Error::Dimension {
                expected: NUMERIC_DIM + self.pos_embed_dim,
                got: self.input_dim,
            });
        }
        if !(1..=3).contains(&self.ffn_layers.len()) {
            return Err(Error::Config(format!(
                "ffn_layers must have 1 to 3 entries, got {}",
                self.ffn_layers.len()
            )));
        }
        if self.dropout_p != 0.0 && self.dropout_p != 0.5 {
            return Err(Error::Config(format!("dropout must be 0 or 0.5, got {}", self.dropout_p)));
        }
        if self.gru_hidden == 0 || self.ffn_layers.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn output_dim(&self) -> usize {
        self.gru_hidden * self.directions()
    }

    pub fn n_params(&self) -> usize {
        Layout::new(self).total
    }

    /// Short identifier such as `bi-L2-drop-large`.
    pub fn label(&self, size: &str) -> String {
        format!(
            "{}-L{}-{}-{}",
            if self.bidirectional { "bi" } else { "uni" },
            self.ffn_layers.len(),
            if self.dropout_p > 0.0 { "drop" } else { "nodrop" },
            size
        )
    }
}

/// Layer widths for one named model size. `ffn` holds the widths for the
/// deepest variant; shallower variants use a prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSpec {
    pub name: String,
    pub gru_hidden: usize,
    pub ffn: [usize; 3],
}

impl SizeSpec {
    pub fn small() -> Self {
        SizeSpec {
            name: "small".into(),
            gru_hidden: 12,
            ffn: [10, 5, 3],
        }
    }

    pub fn large() -> Self {
        SizeSpec {
            name: "large".into(),
            gru_hidden: 50,
            ffn: [40, 20, 10],
        }
    }

    /// Reduced sizes used for gradient checking.
    pub fn reduced() -> [SizeSpec; 2] {
        [
            SizeSpec {
                name: "small".into(),
                gru_hidden: 2,
                ffn: [2, 2, 1],
            },
            SizeSpec {
                name: "large".into(),
                gru_hidden: 4,
                ffn: [4, 2, 2],
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub label: String,
    pub size: String,
    pub config: ModelConfig,
}

/// {uni, bi} × {1, 2, 3 FFN layers} × {no dropout, dropout} × sizes.
pub fn grid(sizes: &[SizeSpec]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for bidirectional in [false, true] {
        for layers in 1..=3 {
            for dropout_p in [0.0, 0.5] {
                for s in sizes {
                    let config = ModelConfig::new(bidirectional, s.gru_hidden, s.ffn[..layers].to_vec(), dropout_p);
                    out.push(GridPoint {
                        label: config.label(&s.name),
                        size: s.name.clone(),
                        config,
                    });
                }
            }
        }
    }
    out
}

pub fn default_grid() -> Vec<GridPoint> {
    grid(&[SizeSpec::small(), SizeSpec::large()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            lr: 0.01,
            momentum: 0.9,
            l2_lambda: 1e-4,
            batch_size: 20,
            seed: 0,
        }
    }
}

/// Cosine annealing to zero over `total` epochs.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (PI * epoch as f64 / total as f64).cos())
}

// ---------------------------------------------------------------------------
// parameter layout

#[derive(Debug, Clone, Copy)]
struct GruOffsets {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

#[derive(Debug, Clone, Copy)]
struct LinearOffsets {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    input: usize,
    hidden: usize,
    out_dim: usize,
    emb: usize,
    gru: Vec<GruOffsets>,
    att_w: usize,
    att_b: usize,
    att_u: usize,
    ffn: Vec<LinearOffsets>,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Layout {
        let h = c.gru_hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let emb = take(PosTag::ALL.len() * c.pos_embed_dim);
        let gru = (0..c.directions())
            .map(|_| GruOffsets {
                w_ih: take(3 * h * c.input_dim),
                w_hh: take(3 * h * h),
                b_ih: take(3 * h),
                b_hh: take(3 * h),
            })
            .collect();
        let d = c.output_dim();
        let att_w = take(d * d);
        let att_b = take(d);
        let att_u = take(d);
        let mut ffn = Vec::new();
        let mut n_in = d;
        for &n_out in c.ffn_layers.iter().chain(std::iter::once(&N_CLASSES)) {
            ffn.push(LinearOffsets {
                w: take(n_out * n_in),
                b: take(n_out),
                n_in,
                n_out,
            });
            n_in = n_out;
        }
        Layout {
            input: c.input_dim,
            hidden: h,
            out_dim: d,
            emb,
            gru,
            att_w,
            att_b,
            att_u,
            ffn,
            total: at,
        }
    }

    /// (name, offset, shape) of every tensor in storage order.
    fn tensors(&self) -> Vec<(String, usize, Vec<usize>)> {
        let (h, d) = (self.hidden, self.out_dim);
        let mut t = vec![("pos_embedding".to_string(), self.emb, vec![PosTag::ALL.len(), (self.gru[0].w_ih - self.emb) / PosTag::ALL.len()])];
        for (i, g) in self.gru.iter().enumerate() {
            let dir = if i == 0 { "fwd" } else { "bwd" };
            t.push((format!("gru_{dir}.w_ih"), g.w_ih, vec![3 * h, self.input]));
            t.push((format!("gru_{dir}.w_hh"), g.w_hh, vec![3 * h, h]));
            t.push((format!("gru_{dir}.b_ih"), g.b_ih, vec![3 * h]));
            t.push((format!("gru_{dir}.b_hh"), g.b_hh, vec![3 * h]));
        }
        t.push(("attention.w".into(), self.att_w, vec![d, d]));
        t.push(("attention.b".into(), self.att_b, vec![d]));
        t.push(("attention.u".into(), self.att_u, vec![d]));
        for (i, l) in self.ffn.iter().enumerate() {
            t.push((format!("ffn{i}.w"), l.w, vec![l.n_out, l.n_in]));
            t.push((format!("ffn{i}.b"), l.b, vec![l.n_out]));
        }
        t
    }

    fn param_name(&self, idx: usize) -> String {
        self.tensors()
            .into_iter()
            .rev()
            .find(|(_, off, _)| *off <= idx)
            .map(|(name, off, _)| format!("{name}[{}]", idx - off))
            .unwrap_or_else(|| format!("param[{idx}]"))
    }
}

// ---------------------------------------------------------------------------
// small dense kernels

/// Dot product with four independent accumulators so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// out += W x, W row-major rows × cols.
fn gemv(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// out += Wᵀ y.
fn gemv_t(w: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    for (&yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }
}

/// G += y xᵀ.
fn ger(g: &mut [f64], cols: usize, y: &[f64], x: &[f64]) {
    for (&yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if yi != 0.0 {
            for (o, b) in row.iter_mut().zip(x) {
                *o += yi * b;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// model

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub steps: Vec<TokenVector>,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct SeqModel {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

#[derive(Default)]
struct DirCache {
    h: Vec<f64>, // (T+1) × H in processing order; row 0 is the zero state
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

#[derive(Default)]
struct Cache {
    t: usize,
    x: Vec<f64>,
    pos: Vec<usize>,
    dirs: Vec<DirCache>,
    hout: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    // inputs to each linear layer, after activation and dropout
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    logits: [f64; N_CLASSES],
}

impl SeqModel {
    /// Random initialisation: embeddings N(0, 1), everything else
    /// U(-1/√fan, 1/√fan).
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<SeqModel> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let emb_len = PosTag::ALL.len() * config.pos_embed_dim;
        for p in &mut params[layout.emb..layout.emb + emb_len] {
            *p = normal.sample(rng);
        }
        let mut fill = |params: &mut [f64], off: usize, len: usize, fan: usize| {
            let k = 1.0 / (fan as f64).sqrt();
            let u = Uniform::new_inclusive(-k, k).expect("valid range");
            for p in &mut params[off..off + len] {
                *p = u.sample(rng);
            }
        };
        let h = config.gru_hidden;
        for g in &layout.gru {
            let end = g.b_hh + 3 * h;
            fill(&mut params, g.w_ih, end - g.w_ih, h);
        }
        let d = layout.out_dim;
        fill(&mut params, layout.att_w, d * d + d, d);
        fill(&mut params, layout.att_u, d, d);
        for l in &layout.ffn {
            fill(&mut params, l.w, l.n_out * l.n_in + l.n_out, l.n_in);
        }
        Ok(SeqModel { config, params, layout })
    }

    pub fn with_params(config: ModelConfig, params: Vec<f64>) -> Result<SeqModel> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Dimension {
                expected: layout.total,
                got: params.len(),
            });
        }
        Ok(SeqModel { config, params, layout })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn param_name(&self, idx: usize) -> String {
        self.layout.param_name(idx)
    }

    /// Name, offset and shape of each parameter tensor.
    pub fn tensors(&self) -> Vec<(String, usize, Vec<usize>)> {
        self.layout.tensors()
    }

    fn forward_cached(&self, steps: &[TokenVector], mut masks: Option<&mut ChaCha8Rng>, c: &mut Cache) -> Result<()> {
        let t_len = steps.len();
        if t_len == 0 {
            return Err(Error::EmptySequence);
        }
        let l = &self.layout;
        let p = &self.params;
        let (inp, h, d) = (l.input, l.hidden, l.out_dim);
        let e = self.config.pos_embed_dim;
        c.t = t_len;
        c.x.clear();
        c.pos.clear();
        for s in steps {
            c.x.extend_from_slice(&s.numeric);
            let id = s.pos_id();
            c.x.extend_from_slice(&p[l.emb + id * e..l.emb + (id + 1) * e]);
            c.pos.push(id);
        }
        c.dirs.resize_with(l.gru.len(), DirCache::default);
        c.hout.clear();
        c.hout.resize(t_len * d, 0.0);
        let mut gi = vec![0.0; 3 * h];
        let mut gh = vec![0.0; 3 * h];
        for (di, (g, dc)) in l.gru.iter().zip(c.dirs.iter_mut()).enumerate() {
            dc.h.clear();
            dc.h.resize((t_len + 1) * h, 0.0);
            for buf in [&mut dc.r, &mut dc.z, &mut dc.n, &mut dc.hn] {
                buf.clear();
                buf.resize(t_len * h, 0.0);
            }
            for j in 0..t_len {
                let t = if di == 0 { j } else { t_len - 1 - j };
                let x = &c.x[t * inp..(t + 1) * inp];
                gi.copy_from_slice(&p[g.b_ih..g.b_ih + 3 * h]);
                gemv(&p[g.w_ih..g.w_ih + 3 * h * inp], inp, x, &mut gi);
                gh.copy_from_slice(&p[g.b_hh..g.b_hh + 3 * h]);
                let (prev, next) = dc.h.split_at_mut((j + 1) * h);
                let hp = &prev[j * h..];
                gemv(&p[g.w_hh..g.w_hh + 3 * h * h], h, hp, &mut gh);
                let hnew = &mut next[..h];
                for k in 0..h {
                    let r = sigmoid(gi[k] + gh[k]);
                    let z = sigmoid(gi[h + k] + gh[h + k]);
                    let hn = gh[2 * h + k];
                    let n = (gi[2 * h + k] + r * hn).tanh();
                    hnew[k] = (1.0 - z) * n + z * hp[k];
                    dc.r[j * h + k] = r;
                    dc.z[j * h + k] = z;
                    dc.n[j * h + k] = n;
                    dc.hn[j * h + k] = hn;
                }
                c.hout[t * d + di * h..t * d + (di + 1) * h].copy_from_slice(hnew);
            }
        }

        // attention
        c.v.clear();
        c.v.resize(t_len * d, 0.0);
        c.a.clear();
        c.a.resize(t_len, 0.0);
        let u = &p[l.att_u..l.att_u + d];
        for t in 0..t_len {
            let v = &mut c.v[t * d..(t + 1) * d];
            v.copy_from_slice(&p[l.att_b..l.att_b + d]);
            gemv(&p[l.att_w..l.att_w + d * d], d, &c.hout[t * d..(t + 1) * d], v);
            for x in v.iter_mut() {
                *x = x.tanh();
            }
            c.a[t] = v.iter().zip(u).map(|(a, b)| a * b).sum();
        }
        let m = c.a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for a in c.a.iter_mut() {
            *a = (*a - m).exp();
            z += *a;
        }
        for a in c.a.iter_mut() {
            *a /= z;
        }
        let mut s = vec![0.0; d];
        for t in 0..t_len {
            let a = c.a[t];
            for (o, hv) in s.iter_mut().zip(&c.hout[t * d..(t + 1) * d]) {
                *o += a * hv;
            }
        }

        // feed-forward head
        let p_drop = self.config.dropout_p;
        let n_layers = l.ffn.len();
        c.acts.resize_with(n_layers, Vec::new);
        c.masks.clear();
        let mut cur = s;
        for (i, lin) in l.ffn.iter().enumerate() {
            if let Some(rng) = masks.as_deref_mut() {
                if p_drop > 0.0 {
                    let keep = 1.0 / (1.0 - p_drop);
                    let mask: Vec<f64> = (0..cur.len())
                        .map(|_| if rng.random::<f64>() < p_drop { 0.0 } else { keep })
                        .collect();
                    for (x, m) in cur.iter_mut().zip(&mask) {
                        *x *= m;
                    }
                    c.masks.push(mask);
                }
            }
            let mut out = p[lin.b..lin.b + lin.n_out].to_vec();
            gemv(&p[lin.w..lin.w + lin.n_out * lin.n_in], lin.n_in, &cur, &mut out);
            c.acts[i] = cur;
            if i + 1 < n_layers {
                for x in out.iter_mut() {
                    *x = x.max(0.0);
                }
            }
            cur = out;
        }
        c.logits.copy_from_slice(&cur);
        Ok(())
    }

    /// Class scores (logits) in evaluation mode.
    pub fn forward(&self, steps: &[TokenVector]) -> Result<[f64; N_CLASSES]> {
        let mut c = Cache::default();
        self.forward_cached(steps, None, &mut c)?;
        Ok(c.logits)
    }

    pub fn attention(&self, steps: &[TokenVector]) -> Result<Vec<f64>> {
        let mut c = Cache::default();
        self.forward_cached(steps, None, &mut c)?;
        Ok(c.a)
    }

    pub fn predict_proba(&self, steps: &[TokenVector]) -> Result<[f64; N_CLASSES]> {
        Ok(softmax2(self.forward(steps)?))
    }

    pub fn predict(&self, steps: &[TokenVector]) -> Result<Label> {
        let s = self.forward(steps)?;
        Ok(if s[1] > s[0] { Label::CI } else { Label::HC })
    }

    /// Accumulates `scale` × ∂CE/∂θ for the cached example into `g`.
    fn backward(&self, c: &Cache, label: usize, scale: f64, g: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let (inp, h, d) = (l.input, l.hidden, l.out_dim);
        let t_len = c.t;
        let prob = softmax2(c.logits);
        let mut delta: Vec<f64> = (0..N_CLASSES)
            .map(|k| scale * (prob[k] - if k == label { 1.0 } else { 0.0 }))
            .collect();

        let n_layers = l.ffn.len();
        for i in (0..n_layers).rev() {
            let lin = &l.ffn[i];
            let x = &c.acts[i];
            ger(&mut g[lin.w..lin.w + lin.n_out * lin.n_in], lin.n_in, &delta, x);
            for (gb, dv) in g[lin.b..lin.b + lin.n_out].iter_mut().zip(&delta) {
                *gb += dv;
            }
            let mut dx = vec![0.0; lin.n_in];
            gemv_t(&p[lin.w..lin.w + lin.n_out * lin.n_in], lin.n_in, &delta, &mut dx);
            if let Some(mask) = c.masks.get(i) {
                for (v, m) in dx.iter_mut().zip(mask) {
                    *v *= m;
                }
            }
            if i > 0 {
                // x is relu output (times mask); zero where the unit was off
                for (v, &xv) in dx.iter_mut().zip(x) {
                    if xv <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = dx;
        }
        let ds = delta;

        // attention
        let mut dh = vec![0.0; t_len * d];
        let mut da = vec![0.0; t_len];
        for t in 0..t_len {
            let ht = &c.hout[t * d..(t + 1) * d];
            da[t] = ht.iter().zip(&ds).map(|(a, b)| a * b).sum();
            for (o, sv) in dh[t * d..(t + 1) * d].iter_mut().zip(&ds) {
                *o += c.a[t] * sv;
            }
        }
        let avg: f64 = c.a.iter().zip(&da).map(|(a, b)| a * b).sum();
        let u = &p[l.att_u..l.att_u + d];
        let mut dpre = vec![0.0; d];
        for t in 0..t_len {
            let de = c.a[t] * (da[t] - avg);
            let v = &c.v[t * d..(t + 1) * d];
            for k in 0..d {
                g[l.att_u + k] += de * v[k];
                dpre[k] = de * u[k] * (1.0 - v[k] * v[k]);
            }
            ger(&mut g[l.att_w..l.att_w + d * d], d, &dpre, &c.hout[t * d..(t + 1) * d]);
            for (gb, dv) in g[l.att_b..l.att_b + d].iter_mut().zip(&dpre) {
                *gb += dv;
            }
            gemv_t(&p[l.att_w..l.att_w + d * d], d, &dpre, &mut dh[t * d..(t + 1) * d]);
        }

        // GRU
        let e = self.config.pos_embed_dim;
        let mut dx = vec![0.0; e];
        let mut gi = vec![0.0; 3 * h];
        let mut gh = vec![0.0; 3 * h];
        let mut dnext = vec![0.0; h];
        for (di, (go, dc)) in l.gru.iter().zip(&c.dirs).enumerate() {
            dnext.iter_mut().for_each(|v| *v = 0.0);
            for j in (0..t_len).rev() {
                let t = if di == 0 { j } else { t_len - 1 - j };
                let hp = &dc.h[j * h..(j + 1) * h];
                let mut dprev = vec![0.0; h];
                for k in 0..h {
                    let dht = dh[t * d + di * h + k] + dnext[k];
                    let (r, z, n, hn) = (dc.r[j * h + k], dc.z[j * h + k], dc.n[j * h + k], dc.hn[j * h + k]);
                    let dn = dht * (1.0 - z);
                    let dz = dht * (hp[k] - n);
                    dprev[k] = dht * z;
                    let dan = dn * (1.0 - n * n);
                    let dr = dan * hn;
                    let daz = dz * z * (1.0 - z);
                    let dar = dr * r * (1.0 - r);
                    gi[k] = dar;
                    gi[h + k] = daz;
                    gi[2 * h + k] = dan;
                    gh[k] = dar;
                    gh[h + k] = daz;
                    gh[2 * h + k] = dan * r;
                }
                let x = &c.x[t * inp..(t + 1) * inp];
                ger(&mut g[go.w_ih..go.w_ih + 3 * h * inp], inp, &gi, x);
                for (gb, v) in g[go.b_ih..go.b_ih + 3 * h].iter_mut().zip(&gi) {
                    *gb += v;
                }
                ger(&mut g[go.w_hh..go.w_hh + 3 * h * h], h, &gh, hp);
                for (gb, v) in g[go.b_hh..go.b_hh + 3 * h].iter_mut().zip(&gh) {
                    *gb += v;
                }
                gemv_t(&p[go.w_hh..go.w_hh + 3 * h * h], h, &gh, &mut dprev);
                dnext.copy_from_slice(&dprev);

                // only the embedding part of the input is trainable
                dx.iter_mut().for_each(|v| *v = 0.0);
                for (&gv, row) in gi.iter().zip(p[go.w_ih..go.w_ih + 3 * h * inp].chunks_exact(inp)) {
                    for (o, w) in dx.iter_mut().zip(&row[NUMERIC_DIM..]) {
                        *o += gv * w;
                    }
                }
                let id = c.pos[t];
                for (ge, v) in g[l.emb + id * e..l.emb + (id + 1) * e].iter_mut().zip(&dx) {
                    *ge += v;
                }
            }
        }
    }

    /// Mean cross entropy over the batch plus (λ/2)‖θ‖², and its gradient
    /// written into `grad`. With `mask_seed`, dropout is active and its masks
    /// are drawn from a generator seeded with that value.
    pub fn loss_and_grad(&self, batch: &[&Sample], lambda: f64, mask_seed: Option<u64>, grad: &mut [f64]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyData("empty batch".into()));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut rng = mask_seed.map(ChaCha8Rng::seed_from_u64);
        let scale = 1.0 / batch.len() as f64;
        let mut cache = Cache::default();
        let mut loss = 0.0;
        for s in batch {
            self.forward_cached(&s.steps, rng.as_mut(), &mut cache)?;
            let y = s.label.index();
            loss += cross_entropy(cache.logits, y);
            self.backward(&cache, y, scale, grad);
        }
        loss *= scale;
        if lambda != 0.0 {
            let mut sq = 0.0;
            for (g, p) in grad.iter_mut().zip(&self.params) {
                *g += lambda * p;
                sq += p * p;
            }
            loss += 0.5 * lambda * sq;
        }
        Ok(loss)
    }

    pub fn loss(&self, batch: &[&Sample], lambda: f64, mask_seed: Option<u64>) -> Result<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.loss_and_grad(batch, lambda, mask_seed, &mut g)
    }

    /// Versioned JSON checkpoint with named, shaped tensors.
    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let tensors = self
            .tensors()
            .into_iter()
            .map(|(name, off, shape)| {
                let len: usize = shape.iter().product();
                CheckpointTensor {
                    name,
                    shape,
                    values: self.params[off..off + len].to_vec(),
                }
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors,
        };
        serde_json::to_writer(w, &ck)?;
        Ok(())
    }

    pub fn read_checkpoint<R: std::io::Read>(r: R) -> Result<SeqModel> {
        let ck: Checkpoint = serde_json::from_reader(r)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let layout = Layout::new(&ck.config);
        let mut params = vec![0.0; layout.total];
        let expected = layout.tensors();
        if expected.len() != ck.tensors.len() {
            return Err(Error::Data("checkpoint tensor count does not match config".into()));
        }
        for ((name, off, shape), t) in expected.into_iter().zip(ck.tensors) {
            if name != t.name || shape != t.shape || t.values.len() != shape.iter().product::<usize>() {
                return Err(Error::Data(format!("checkpoint tensor `{}` does not match `{name}`", t.name)));
            }
            params[off..off + t.values.len()].copy_from_slice(&t.values);
        }
        SeqModel::with_params(ck.config, params)
    }
}

const CHECKPOINT_FORMAT: &str = "pausecue-seqmodel";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<CheckpointTensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn softmax2(s: [f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = s[0].max(s[1]);
    let e0 = (s[0] - m).exp();
    let e1 = (s[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

fn cross_entropy(s: [f64; N_CLASSES], y: usize) -> f64 {
    let m = s[0].max(s[1]);
    let lse = m + ((s[0] - m).exp() + (s[1] - m).exp()).ln();
    lse - s[y]
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone)]
pub struct TrainedSeqModel {
    pub model: SeqModel,
    /// Mean training batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

pub fn train(config: &ModelConfig, data: &[Sample], tc: &TrainConfig) -> Result<TrainedSeqModel> {
    if data.is_empty() {
        return Err(Error::EmptyData("no training samples".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = SeqModel::new(config.clone(), &mut rng)?;
    let n = model.params.len();
    let mut grad = vec![0.0; n];
    let mut velocity = vec![0.0; n];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(tc.epochs);
    let dropout = config.dropout_p > 0.0;
    for epoch in 0..tc.epochs {
        let lr = cosine_lr(tc.lr, epoch, tc.epochs);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let mask_seed = rng.next_u64();
            let loss = model.loss_and_grad(&batch, tc.l2_lambda, dropout.then_some(mask_seed), &mut grad)?;
            if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: model.param_name(bad),
                    epoch,
                });
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = tc.momentum * *v + g;
                *p -= lr * *v;
            }
            epoch_loss += loss;
            n_batches += 1;
        }
        loss_curve.push(epoch_loss / n_batches as f64);
    }
    Ok(TrainedSeqModel { model, loss_curve })
}

// ---------------------------------------------------------------------------
// model selection

/// Train/test samples of one (seed, fold) cell.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub seed: u64,
    pub fold: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: String,
    pub seed: u64,
    pub fold: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub n_params: usize,
    /// Accuracy per seed (mean over that seed's folds).
    pub seed_accuracy: Vec<(u64, f64)>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_precision: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub mean_specificity: Option<f64>,
    pub passes_gate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub grid: Vec<GridPoint>,
    pub trials: Vec<TrialRecord>,
    pub summaries: Vec<ConfigSummary>,
    pub best: usize,
}

impl SearchResult {
    pub fn best_point(&self) -> &GridPoint {
        &self.grid[self.best]
    }

    pub fn best_summary(&self) -> &ConfigSummary {
        &self.summaries[self.best]
    }
}

/// Training seed for one trial; differs across seeds and folds.
fn trial_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (fold as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

pub fn evaluate(model: &SeqModel, test: &[Sample]) -> Result<Confusion> {
    let truth: Vec<Label> = test.iter().map(|s| s.label).collect();
    let pred = test.iter().map(|s| model.predict(&s.steps)).collect::<Result<Vec<_>>>()?;
    Confusion::tally(&truth, &pred)
}

/// Cross-validated search over `grid`. Every configuration is trained on
/// every (seed, fold) cell; those whose mean specificity falls below the
/// gate are discarded; the survivor with the best mean accuracy wins, with
/// ties going to the smaller model.
pub fn grid_search(grid: &[GridPoint], folds: &[FoldData], tc: &TrainConfig, gate: f64) -> Result<SearchResult> {
    let (trials, summaries, best) = search_grid(grid, folds, tc, gate)?;
    let best = best.ok_or(Error::SpecificityGate { threshold: gate })?;
    Ok(SearchResult {
        grid: grid.to_vec(),
        trials,
        summaries,
        best,
    })
}

/// Trials and summaries of every configuration, plus the gated winner if
/// any configuration passes.
pub fn search_grid(
    grid: &[GridPoint],
    folds: &[FoldData],
    tc: &TrainConfig,
    gate: f64,
) -> Result<(Vec<TrialRecord>, Vec<ConfigSummary>, Option<usize>)> {
    if grid.is_empty() || folds.is_empty() {
        return Err(Error::EmptyData("grid search needs configurations and folds".into()));
    }
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let results: Vec<Result<TrialRecord>> = tasks
        .par_iter()
        .map(|&(ci, fi)| {
            let fd = &folds[fi];
            let tc = TrainConfig {
                seed: trial_seed(fd.seed, fd.fold),
                ..tc.clone()
            };
            let trained = train(&grid[ci].config, &fd.train, &tc)?;
            let confusion = evaluate(&trained.model, &fd.test)?;
            Ok(TrialRecord {
                config: grid[ci].label.clone(),
                seed: fd.seed,
                fold: fd.fold,
                confusion,
                metrics: confusion.metrics(),
            })
        })
        .collect();
    let trials = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut seeds: Vec<u64> = folds.iter().map(|f| f.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let summaries: Vec<ConfigSummary> = grid
        .iter()
        .enumerate()
        .map(|(ci, gp)| {
            let rows = &trials[ci * folds.len()..(ci + 1) * folds.len()];
            let seed_accuracy: Vec<(u64, f64)> = seeds
                .iter()
                .map(|&s| {
                    let accs: Vec<f64> = rows.iter().filter(|r| r.seed == s).map(|r| r.metrics.accuracy).collect();
                    (s, mean_std(&accs).0)
                })
                .collect();
            let accs: Vec<f64> = seed_accuracy.iter().map(|x| x.1).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            let col = |f: fn(&Metrics) -> Option<f64>| mean_std_opt(&rows.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>()).0;
            let mean_specificity = col(|m| m.specificity);
            ConfigSummary {
                config: gp.label.clone(),
                n_params: gp.config.n_params(),
                seed_accuracy,
                mean_accuracy,
                std_accuracy,
                mean_precision: col(|m| m.precision),
                mean_sensitivity: col(|m| m.sensitivity),
                mean_specificity,
                passes_gate: mean_specificity.is_some_and(|s| s >= gate),
            }
        })
        .collect();
    let best = summaries
        .iter()
        .enumerate()
        .filter(|(_, s)| s.passes_gate)
        .min_by(|(_, a), (_, b)| {
            b.mean_accuracy
                .total_cmp(&a.mean_accuracy)
                .then(a.n_params.cmp(&b.n_params))
        })
        .map(|(i, _)| i);
    Ok((trials, summaries, best))
}

/// Trial log CSV: one row per (config, seed, fold).
pub fn write_trial_log<W: Write>(w: W, trials: &[TrialRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["config", "seed", "fold", "acc", "prec", "sens", "spec"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for t in trials {
        wtr.write_record([
            t.config.clone(),
            t.seed.to_string(),
            t.fold.to_string(),
            format!("{:.6}", t.metrics.accuracy),
            fmt(t.metrics.precision),
            fmt(t.metrics.sensitivity),
            fmt(t.metrics.specificity),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_steps(rng: &mut ChaCha8Rng, t: usize) -> Vec<TokenVector> {
        (0..t)
            .map(|_| {
                let mut numeric = [0.0; NUMERIC_DIM];
                for v in &mut numeric {
                    *v = rng.random_range(-1.5..1.5);
                }
                TokenVector {
                    numeric,
                    pos: PosTag::ALL[rng.random_range(0..PosTag::ALL.len())],
                }
            })
            .collect()
    }

    fn random_model(config: ModelConfig, seed: u64) -> SeqModel {
        SeqModel::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn grid_has_24_distinct_points() {
        let g = default_grid();
        assert_eq!(g.len(), 24);
        let labels: std::collections::HashSet<_> = g.iter().map(|p| p.label.clone()).collect();
        assert_eq!(labels.len(), 24);
        assert!(g.iter().all(|p| p.config.input_dim == 23));
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let mut m = random_model(ModelConfig::new(true, 3, vec![4, 2], 0.0), 1);
        let emb_end = PosTag::ALL.len() * POS_EMBED_DIM;
        m.params[emb_end..].iter_mut().for_each(|p| *p = 0.0);
        let steps = random_steps(&mut ChaCha8Rng::seed_from_u64(2), 4);
        let mut c = Cache::default();
        m.forward_cached(&steps, None, &mut c).unwrap();
        assert!(c.hout.iter().all(|&h| h == 0.0));
        assert!(c.a.iter().all(|&a| a == 0.25));
        assert_eq!(c.logits, [0.0, 0.0]);
    }

    #[test]
    fn singleton_attention_is_one() {
        let m = random_model(ModelConfig::new(false, 3, vec![2], 0.0), 3);
        let steps = random_steps(&mut ChaCha8Rng::seed_from_u64(4), 1);
        assert_eq!(m.attention(&steps).unwrap(), vec![1.0]);
        assert!(matches!(m.forward(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn bad_input_dim_is_rejected() {
        let mut c = ModelConfig::new(false, 3, vec![2], 0.0);
        c.input_dim = 22;
        assert!(matches!(c.validate(), Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn attention_is_a_distribution(seed in any::<u64>(), t in 1usize..9, bi in any::<bool>()) {
            let m = random_model(ModelConfig::new(bi, 4, vec![3], 0.0), seed);
            let steps = random_steps(&mut ChaCha8Rng::seed_from_u64(seed ^ 7), t);
            let a = m.attention(&steps).unwrap();
            prop_assert_eq!(a.len(), t);
            prop_assert!(a.iter().all(|&x| x >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    /// Independent evaluation of the same equations, written step by step
    /// with nested vectors.
    fn reference_forward(m: &SeqModel, steps: &[TokenVector]) -> [f64; 2] {
        let c = &m.config;
        let h = c.gru_hidden;
        let inp = c.input_dim;
        let tensors: std::collections::HashMap<String, (usize, Vec<usize>)> =
            m.tensors().into_iter().map(|(n, o, s)| (n, (o, s))).collect();
        let mat = |name: &str| -> Vec<Vec<f64>> {
            let (o, s) = &tensors[name];
            (0..s[0]).map(|i| m.params[o + i * s[1]..o + (i + 1) * s[1]].to_vec()).collect()
        };
        let vec_ = |name: &str| -> Vec<f64> {
            let (o, s) = &tensors[name];
            m.params[*o..o + s[0]].to_vec()
        };
        let emb = mat("pos_embedding");
        let xs: Vec<Vec<f64>> = steps
            .iter()
            .map(|s| {
                let mut x = s.numeric.to_vec();
                x.extend(&emb[s.pos.index()]);
                assert_eq!(x.len(), inp);
                x
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let run = |dir: &str, order: Vec<usize>| -> Vec<Vec<f64>> {
            let wih = mat(&format!("gru_{dir}.w_ih"));
            let whh = mat(&format!("gru_{dir}.w_hh"));
            let bih = vec_(&format!("gru_{dir}.b_ih"));
            let bhh = vec_(&format!("gru_{dir}.b_hh"));
            let mut out = vec![vec![0.0; h]; xs.len()];
            let mut hprev = vec![0.0; h];
            for t in order {
                let x = &xs[t];
                let mut hnew = vec![0.0; h];
                for k in 0..h {
                    let r = 1.0 / (1.0 + (-(dot(&wih[k], x) + bih[k] + dot(&whh[k], &hprev) + bhh[k])).exp());
                    let z = 1.0
                        / (1.0 + (-(dot(&wih[h + k], x) + bih[h + k] + dot(&whh[h + k], &hprev) + bhh[h + k])).exp());
                    let n = (dot(&wih[2 * h + k], x) + bih[2 * h + k] + r * (dot(&whh[2 * h + k], &hprev) + bhh[2 * h + k]))
                        .tanh();
                    hnew[k] = (1.0 - z) * n + z * hprev[k];
                }
                out[t] = hnew.clone();
                hprev = hnew;
            }
            out
        };
        let t_len = xs.len();
        let fwd = run("fwd", (0..t_len).collect());
        let hs: Vec<Vec<f64>> = if c.bidirectional {
            let bwd = run("bwd", (0..t_len).rev().collect());
            fwd.iter().zip(&bwd).map(|(a, b)| [a.clone(), b.clone()].concat()).collect()
        } else {
            fwd
        };
        let aw = mat("attention.w");
        let ab = vec_("attention.b");
        let au = vec_("attention.u");
        let scores: Vec<f64> = hs
            .iter()
            .map(|ht| {
                let v: Vec<f64> = aw.iter().zip(&ab).map(|(row, b)| (dot(row, ht) + b).tanh()).collect();
                dot(&v, &au)
            })
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let mut s = vec![0.0; hs[0].len()];
        for (ht, sc) in hs.iter().zip(&scores) {
            for (o, v) in s.iter_mut().zip(ht) {
                *o += sc.exp() / z * v;
            }
        }
        let n_layers = c.ffn_layers.len() + 1;
        for i in 0..n_layers {
            let w = mat(&format!("ffn{i}.w"));
            let b = vec_(&format!("ffn{i}.b"));
            s = w
                .iter()
                .zip(&b)
                .map(|(row, bb)| {
                    let y = dot(row, &s) + bb;
                    if i + 1 < n_layers {
                        y.max(0.0)
                    } else {
                        y
                    }
                })
                .collect();
        }
        [s[0], s[1]]
    }

    #[test]
    fn forward_matches_reference() {
        for (bi, seed) in [(false, 11), (true, 12)] {
            let m = random_model(ModelConfig::new(bi, 3, vec![4, 3], 0.0), seed);
            let steps = random_steps(&mut ChaCha8Rng::seed_from_u64(seed + 100), 2);
            let got = m.forward(&steps).unwrap();
            let want = reference_forward(&m, &steps);
            for k in 0..2 {
                assert!((got[k] - want[k]).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                steps: {
                    let t = rng.random_range(1..6);
                    random_steps(rng, t)
                },
                label: Label::from_index(i % 2),
            })
            .collect()
    }

    /// Worst relative error between analytic and central-difference gradients.
    pub(crate) fn gradient_check(config: &ModelConfig, seed: u64) -> (f64, String) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SeqModel::new(config.clone(), &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4);
        let refs: Vec<&Sample> = batch.iter().collect();
        let mask = (config.dropout_p > 0.0).then_some(seed ^ 0xABCD);
        let lambda = 1e-4;
        let mut g = vec![0.0; m.n_params()];
        m.loss_and_grad(&refs, lambda, mask, &mut g).unwrap();
        let eps = 1e-5;
        let mut worst = (0.0, String::new());
        for i in 0..m.n_params() {
            let orig = m.params[i];
            m.params[i] = orig + eps;
            let up = m.loss(&refs, lambda, mask).unwrap();
            m.params[i] = orig - eps;
            let down = m.loss(&refs, lambda, mask).unwrap();
            m.params[i] = orig;
            let num = (up - down) / (2.0 * eps);
            let err = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-6);
            if err > worst.0 {
                worst = (err, format!("{} analytic {} numeric {}", m.param_name(i), g[i], num));
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (bi, drop) in [(false, 0.0), (true, 0.5)] {
            let c = ModelConfig::new(bi, 3, vec![3, 2], drop);
            let (err, at) = gradient_check(&c, 5);
            assert!(err <= 1e-4, "{err} at {at}");
        }
    }

    #[test]
    fn l2_adds_lambda_theta() {
        let m = random_model(ModelConfig::new(true, 3, vec![2], 0.0), 8);
        let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(9), 3);
        let refs: Vec<&Sample> = batch.iter().collect();
        let mut g0 = vec![0.0; m.n_params()];
        let mut g1 = vec![0.0; m.n_params()];
        m.loss_and_grad(&refs, 0.0, None, &mut g0).unwrap();
        m.loss_and_grad(&refs, 0.01, None, &mut g1).unwrap();
        for i in 0..m.n_params() {
            assert!((g1[i] - g0[i] - 0.01 * m.params[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_embedding_rows_get_no_data_gradient() {
        let m = random_model(ModelConfig::new(false, 3, vec![2], 0.0), 10);
        let steps: Vec<TokenVector> = random_steps(&mut ChaCha8Rng::seed_from_u64(1), 3)
            .into_iter()
            .map(|mut s| {
                s.pos = PosTag::Noun;
                s
            })
            .collect();
        let sample = Sample { steps, label: Label::CI };
        let mut g = vec![0.0; m.n_params()];
        m.loss_and_grad(&[&sample], 0.0, None, &mut g).unwrap();
        for tag in PosTag::ALL {
            let row = &g[tag.index() * POS_EMBED_DIM..(tag.index() + 1) * POS_EMBED_DIM];
            if tag == PosTag::Noun {
                assert!(row.iter().any(|&v| v != 0.0));
            } else {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0.01, 0, 600), 0.01);
        assert!(cosine_lr(0.01, 600, 600).abs() < 1e-18);
        assert!((cosine_lr(0.01, 300, 600) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let data = random_batch(&mut ChaCha8Rng::seed_from_u64(3), 10);
        let cfg = ModelConfig::new(false, 3, vec![2], 0.5);
        let tc = TrainConfig {
            epochs: 3,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let trained = train(&cfg, &data, &tc).unwrap();
        let init = SeqModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(tc.seed)).unwrap();
        assert_eq!(trained.model.params, init.params);
        assert!(train(&init.config, &[], &tc).is_err());
    }

    /// 40 samples whose class is the sign of the first numeric feature of
    /// the middle token.
    fn separable(seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..40)
            .map(|i| {
                let label = Label::from_index(i % 2);
                let mut steps = random_steps(&mut rng, 3);
                steps[1].numeric[0] = if label == Label::CI { 2.0 } else { -2.0 };
                Sample { steps, label }
            })
            .collect()
    }

    #[test]
    fn separable_set_is_learned() {
        let data = separable(21);
        let cfg = ModelConfig::new(false, 12, vec![10], 0.0);
        let trained = train(&cfg, &data, &TrainConfig::default()).unwrap();
        let c = evaluate(&trained.model, &data).unwrap();
        assert_eq!(c.metrics().accuracy, 1.0);
        let curve = &trained.loss_curve;
        assert!(curve.last().unwrap() < &curve[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(5);
        let cfg = ModelConfig::new(true, 4, vec![3, 2], 0.5);
        let tc = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &data, &tc).unwrap();
        let b = train(&cfg, &data, &tc).unwrap();
        assert_eq!(a.loss_curve.last().unwrap().to_bits(), b.loss_curve.last().unwrap().to_bits());
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_model(ModelConfig::new(true, 3, vec![4, 2, 2], 0.5), 30);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let back = SeqModel::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn gate_rejects_all_ci_predictor() {
        // every training and test sample is CI, so the model learns to say CI
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let train_set: Vec<Sample> = (0..20)
            .map(|_| Sample {
                steps: random_steps(&mut rng, 2),
                label: Label::CI,
            })
            .collect();
        let mut test = train_set.clone();
        for s in test.iter_mut().take(10) {
            s.label = Label::HC;
        }
        let folds = vec![FoldData {
            seed: 0,
            fold: 0,
            train: train_set,
            test,
        }];
        let g = vec![grid(&[SizeSpec::small()])[0].clone()];
        let tc = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        match grid_search(&g, &folds, &tc, SPECIFICITY_GATE) {
            Err(Error::SpecificityGate { threshold }) => assert_eq!(threshold, 0.288),
            other => panic!("expected gate error, got {other:?}"),
        }
    }
}

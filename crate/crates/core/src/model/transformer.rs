//! Post-LN encoder forward and backward passes.
//!
//! A batch is packed into one `rows x d` matrix (no padding); attention is
//! computed per example and head on the example's row block.

use std::borrow::Cow;

use super::config::{check_schema, LayerIdx, Layout, ModelConfig};
use super::gemm::{gemm, View};
use super::params::{Grads, ParamSet};
use crate::corpus::{Category, Example, Labels, TaskKind};
use crate::error::{ensure, Error, Result};
use crate::masks::Mask;
use crate::numerics::Matrix;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Per-batch accumulators for loss and evaluation metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalCounts {
    pub loss_sum: f64,
    /// Prediction units: masked tokens, tagged tokens or examples.
    pub units: usize,
    pub correct: usize,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl EvalCounts {
    pub fn add(&mut self, o: &EvalCounts) {
        self.loss_sum += o.loss_sum;
        self.units += o.units;
        self.correct += o.correct;
        self.true_pos += o.true_pos;
        self.false_pos += o.false_pos;
        self.false_neg += o.false_neg;
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.units.max(1) as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.mean_loss().exp()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.units.max(1) as f64
    }

    /// Micro-F1 over non-FILLER classes; FILLER plays the role of "outside".
    pub fn micro_f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_pos as f64 / denom as f64
        }
    }

    pub fn metric(&self, task: TaskKind) -> f64 {
        match task {
            TaskKind::Mlm => self.perplexity(),
            TaskKind::Tag => self.micro_f1(),
            TaskKind::Cls => self.accuracy(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    pub counts: EvalCounts,
    /// Token representations after the embedding layer and after every encoder
    /// layer (`layers + 1` matrices of `total_tokens x embed_dim`).
    pub hidden: Option<Vec<Matrix>>,
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    x_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    z1: Vec<f64>,
    g: Vec<f64>,
    ln2: LnCache,
}

struct Packing {
    starts: Vec<usize>,
    lens: Vec<usize>,
    rows: usize,
    /// Offset of each example's attention-probability block.
    prob_offsets: Vec<usize>,
    prob_len: usize,
}

impl Packing {
    fn new(batch: &[Example], heads: usize) -> Packing {
        let (mut starts, mut lens, mut prob_offsets) = (Vec::new(), Vec::new(), Vec::new());
        let (mut rows, mut prob_len) = (0, 0);
        for ex in batch {
            let t = ex.tokens.len();
            starts.push(rows);
            lens.push(t);
            prob_offsets.push(prob_len);
            rows += t;
            prob_len += heads * t * t;
        }
        Packing {
            starts,
            lens,
            rows,
            prob_offsets,
            prob_len,
        }
    }
}

fn vals(p: &ParamSet, i: usize) -> &[f64] {
    &p.entries()[i].values
}

fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = gain[j] * h + bias[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_back(dy: &[f64], c: &LnCache, d: usize, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let (dyr, xh) = (&dy[r * d..(r + 1) * d], &c.xhat[r * d..(r + 1) * d]);
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            dx[r * d + j] = c.rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// `x W + b` for `x: rows x din`, `W: din x dout`.
fn linear(x: &[f64], din: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let dout = b.len();
    let rows = x.len() / din;
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(
        rows,
        din,
        dout,
        1.0,
        View::n(x, din),
        View::n(w, dout),
        1.0,
        &mut y,
        dout,
    );
    y
}

/// Accumulates `dW`, `db` and returns `dx`.
fn linear_back(x: &[f64], dy: &[f64], din: usize, w: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let dout = db.len();
    let rows = dy.len() / dout;
    gemm(din, rows, dout, 1.0, View::t(x, din), View::n(dy, dout), 1.0, dw, dout);
    for r in 0..rows {
        for (acc, g) in db.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
            *acc += g;
        }
    }
    let mut dx = vec![0.0; rows * din];
    gemm(
        rows,
        dout,
        din,
        1.0,
        View::n(dy, dout),
        View::t(w, dout),
        0.0,
        &mut dx,
        din,
    );
    dx
}

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

struct Model<'a> {
    cfg: &'a ModelConfig,
    layout: Layout,
    p: &'a ParamSet,
}

impl Model<'_> {
    fn embed(&self, batch: &[Example], pk: &Packing) -> Result<Vec<f64>> {
        let d = self.cfg.embed_dim;
        let (tok, pos) = (vals(self.p, self.layout.tok), vals(self.p, self.layout.pos));
        let mut x = vec![0.0; pk.rows * d];
        for (b, ex) in batch.iter().enumerate() {
            ensure!(
                ex.tokens.len() <= self.cfg.max_len && !ex.tokens.is_empty(),
                "example length {} outside 1..={}",
                ex.tokens.len(),
                self.cfg.max_len
            );
            for (t, &id) in ex.tokens.iter().enumerate() {
                let id = id as usize;
                ensure!(
                    id < self.cfg.vocab_size,
                    "token id {id} outside vocabulary of {}",
                    self.cfg.vocab_size
                );
                let row = &mut x[(pk.starts[b] + t) * d..(pk.starts[b] + t + 1) * d];
                for j in 0..d {
                    row[j] = tok[id * d + j] + pos[t * d + j];
                }
            }
        }
        Ok(x)
    }

    fn layer_forward(&self, li: &LayerIdx, x: Vec<f64>, pk: &Packing) -> (Vec<f64>, LayerCache) {
        let (d, heads) = (self.cfg.embed_dim, self.cfg.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p = self.p;
        let q = linear(&x, d, vals(p, li.wq), vals(p, li.bq));
        let k = linear(&x, d, vals(p, li.wk), vals(p, li.bk));
        let v = linear(&x, d, vals(p, li.wv), vals(p, li.bv));
        let mut probs = vec![0.0; pk.prob_len];
        let mut o = vec![0.0; pk.rows * d];
        for b in 0..pk.starts.len() {
            let (s, t) = (pk.starts[b], pk.lens[b]);
            for h in 0..heads {
                let off = pk.prob_offsets[b] + h * t * t;
                let c = s * d + h * dh;
                let pm = &mut probs[off..off + t * t];
                gemm(t, dh, t, scale, View::n(&q[c..], d), View::t(&k[c..], d), 0.0, pm, t);
                for row in pm.chunks_mut(t) {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for e in row.iter_mut() {
                        *e = (*e - max).exp();
                        sum += *e;
                    }
                    for e in row.iter_mut() {
                        *e /= sum;
                    }
                }
                gemm(t, t, dh, 1.0, View::n(pm, t), View::n(&v[c..], d), 0.0, &mut o[c..], d);
            }
        }
        let a = linear(&o, d, vals(p, li.wo), vals(p, li.bo));
        let (h1, ln1) = layer_norm(&add(&x, &a), d, vals(p, li.ln1_g), vals(p, li.ln1_b));
        let z1 = linear(&h1, d, vals(p, li.w1), vals(p, li.b1));
        let g: Vec<f64> = z1.iter().map(|&z| gelu(z)).collect();
        let f = linear(&g, self.cfg.ffn_dim, vals(p, li.w2), vals(p, li.b2));
        let (out, ln2) = layer_norm(&add(&h1, &f), d, vals(p, li.ln2_g), vals(p, li.ln2_b));
        let cache = LayerCache {
            x_in: x,
            q,
            k,
            v,
            probs,
            o,
            ln1,
            h1,
            z1,
            g,
            ln2,
        };
        (out, cache)
    }

    fn layer_backward(&self, li: &LayerIdx, c: &LayerCache, dout: &[f64], pk: &Packing, grads: &mut Grads) -> Vec<f64> {
        let (d, heads, f) = (self.cfg.embed_dim, self.cfg.heads, self.cfg.ffn_dim);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p = self.p;
        let mut du = {
            let (g, b) = two_mut(grads, li.ln2_g, li.ln2_b);
            layer_norm_back(dout, &c.ln2, d, vals(p, li.ln2_g), g, b)
        };
        // du is both dH1 (residual) and dF.
        let dg = {
            let (w, b) = two_mut(grads, li.w2, li.b2);
            linear_back(&c.g, &du, f, vals(p, li.w2), w, b)
        };
        let dz1: Vec<f64> = dg.iter().zip(&c.z1).map(|(g, &z)| g * gelu_grad(z)).collect();
        let dh1 = {
            let (w, b) = two_mut(grads, li.w1, li.b1);
            linear_back(&c.h1, &dz1, d, vals(p, li.w1), w, b)
        };
        add_assign(&mut du, &dh1);
        let ds = {
            let (g, b) = two_mut(grads, li.ln1_g, li.ln1_b);
            layer_norm_back(&du, &c.ln1, d, vals(p, li.ln1_g), g, b)
        };
        let do_ = {
            let (w, b) = two_mut(grads, li.wo, li.bo);
            linear_back(&c.o, &ds, d, vals(p, li.wo), w, b)
        };
        let mut dq = vec![0.0; pk.rows * d];
        let mut dk = vec![0.0; pk.rows * d];
        let mut dv = vec![0.0; pk.rows * d];
        let mut dp = Vec::new();
        for b in 0..pk.starts.len() {
            let (s, t) = (pk.starts[b], pk.lens[b]);
            dp.resize(t * t, 0.0);
            for h in 0..heads {
                let off = pk.prob_offsets[b] + h * t * t;
                let cidx = s * d + h * dh;
                let pm = &c.probs[off..off + t * t];
                gemm(
                    t,
                    dh,
                    t,
                    1.0,
                    View::n(&do_[cidx..], d),
                    View::t(&c.v[cidx..], d),
                    0.0,
                    &mut dp,
                    t,
                );
                gemm(
                    t,
                    t,
                    dh,
                    1.0,
                    View::t(pm, t),
                    View::n(&do_[cidx..], d),
                    0.0,
                    &mut dv[cidx..],
                    d,
                );
                for r in 0..t {
                    let (pr, dr) = (&pm[r * t..(r + 1) * t], &mut dp[r * t..(r + 1) * t]);
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for (g, &pv) in dr.iter_mut().zip(pr) {
                        *g = pv * (*g - dot) * scale;
                    }
                }
                gemm(
                    t,
                    t,
                    dh,
                    1.0,
                    View::n(&dp, t),
                    View::n(&c.k[cidx..], d),
                    0.0,
                    &mut dq[cidx..],
                    d,
                );
                gemm(
                    t,
                    t,
                    dh,
                    1.0,
                    View::t(&dp, t),
                    View::n(&c.q[cidx..], d),
                    0.0,
                    &mut dk[cidx..],
                    d,
                );
            }
        }
        let mut dx = ds;
        for (dy, w, bi) in [(&dq, li.wq, li.bq), (&dk, li.wk, li.bk), (&dv, li.wv, li.bv)] {
            let (gw, gb) = two_mut(grads, w, bi);
            add_assign(&mut dx, &linear_back(&c.x_in, dy, d, vals(p, w), gw, gb));
        }
        dx
    }
}

fn two_mut(g: &mut Grads, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Softmax cross-entropy over `n x c` logits; rewrites logits into
/// `(softmax - onehot) * weight` and returns the summed loss and argmax hits.
fn softmax_ce(logits: &mut [f64], c: usize, targets: &[usize], weight: f64) -> (f64, Vec<usize>) {
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(targets.len());
    for (row, &y) in logits.chunks_mut(c).zip(targets) {
        let (mut arg, mut max) = (0, f64::NEG_INFINITY);
        for (j, &v) in row.iter().enumerate() {
            if v > max {
                max = v;
                arg = j;
            }
        }
        preds.push(arg);
        let shifted = row[y] - max;
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss += sum.ln() - shifted;
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= weight;
        }
    }
    (loss, preds)
}

struct HeadResult {
    counts: EvalCounts,
    dx: Option<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

fn targets_for(batch: &[Example], task: TaskKind, cfg: &ModelConfig) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for ex in batch {
        ensure!(
            ex.task_kind == task,
            "batch example of task {} fed to {} head",
            ex.task_kind,
            task
        );
        match (&ex.labels, task) {
            (Labels::Mlm { positions, targets }, TaskKind::Mlm) => {
                ensure!(
                    positions.len() == targets.len(),
                    "masked positions and targets differ in length"
                );
                for (&p, &t) in positions.iter().zip(targets) {
                    ensure!(p < ex.tokens.len(), "masked position {p} out of range");
                    ensure!((t as usize) < cfg.vocab_size, "target token {t} outside vocabulary");
                    out.push(t as usize);
                }
            }
            (Labels::Tag(tags), TaskKind::Tag) => {
                ensure!(
                    tags.len() == ex.tokens.len(),
                    "tag sequence length differs from token length"
                );
                for &t in tags {
                    ensure!(
                        (t as usize) < cfg.tag_classes,
                        "tag {t} outside {} classes",
                        cfg.tag_classes
                    );
                    out.push(t as usize);
                }
            }
            (Labels::Cls(y), TaskKind::Cls) => {
                ensure!(
                    (*y as usize) < cfg.cls_classes,
                    "class {y} outside {} classes",
                    cfg.cls_classes
                );
                out.push(*y as usize);
            }
            _ => return Err(Error::contract("labels do not match task kind")),
        }
    }
    Ok(out)
}

fn head(
    m: &Model,
    batch: &[Example],
    task: TaskKind,
    x: &[f64],
    pk: &Packing,
    grads: Option<&mut Grads>,
    want_probs: bool,
) -> Result<HeadResult> {
    let d = m.cfg.embed_dim;
    let l = &m.layout;
    let targets = targets_for(batch, task, m.cfg)?;
    let units = targets.len();
    ensure!(units > 0, "batch has no prediction targets");
    let weight = 1.0 / units as f64;
    // Head input rows and the map back into packed rows.
    let (input, [wi, bi]) = match task {
        TaskKind::Mlm => {
            let mut rows = Vec::with_capacity(units * d);
            for (b, ex) in batch.iter().enumerate() {
                if let Labels::Mlm { positions, .. } = &ex.labels {
                    for &p in positions {
                        let r = pk.starts[b] + p;
                        rows.extend_from_slice(&x[r * d..(r + 1) * d]);
                    }
                }
            }
            (Cow::Owned(rows), l.head_entries(task))
        }
        TaskKind::Tag => (Cow::Borrowed(x), l.head_entries(task)),
        TaskKind::Cls => {
            let mut pooled = vec![0.0; batch.len() * d];
            for b in 0..batch.len() {
                let (s, t) = (pk.starts[b], pk.lens[b]);
                for r in s..s + t {
                    for j in 0..d {
                        pooled[b * d + j] += x[r * d + j] / t as f64;
                    }
                }
            }
            (Cow::Owned(pooled), l.head_entries(task))
        }
    };
    let classes = m.p.entries()[bi].values.len();
    let mut logits = linear(&input, d, vals(m.p, wi), vals(m.p, bi));
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("head logits".into()));
    }
    let probs = if want_probs {
        logits
            .chunks(classes)
            .map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let (loss_sum, preds) = softmax_ce(&mut logits, classes, &targets, weight);
    let mut counts = EvalCounts {
        loss_sum,
        units,
        ..EvalCounts::default()
    };
    let outside = Category::Filler.index();
    for (&p, &y) in preds.iter().zip(&targets) {
        if p == y {
            counts.correct += 1;
        }
        if task == TaskKind::Tag {
            if p == y && y != outside {
                counts.true_pos += 1;
            }
            if p != y && p != outside {
                counts.false_pos += 1;
            }
            if p != y && y != outside {
                counts.false_neg += 1;
            }
        }
    }
    let Some(grads) = grads else {
        return Ok(HeadResult {
            counts,
            dx: None,
            probs,
        });
    };
    let (gw, gb) = two_mut(grads, wi, bi);
    let din = linear_back(&input, &logits, d, vals(m.p, wi), gw, gb);
    let dx = match task {
        TaskKind::Tag => din,
        TaskKind::Mlm => {
            let mut dx = vec![0.0; pk.rows * d];
            let mut k = 0;
            for (b, ex) in batch.iter().enumerate() {
                if let Labels::Mlm { positions, .. } = &ex.labels {
                    for &p in positions {
                        let r = pk.starts[b] + p;
                        add_assign(&mut dx[r * d..(r + 1) * d], &din[k * d..(k + 1) * d]);
                        k += 1;
                    }
                }
            }
            dx
        }
        TaskKind::Cls => {
            let mut dx = vec![0.0; pk.rows * d];
            for b in 0..batch.len() {
                let (s, t) = (pk.starts[b], pk.lens[b]);
                for r in s..s + t {
                    for j in 0..d {
                        dx[r * d + j] = din[b * d + j] / t as f64;
                    }
                }
            }
            dx
        }
    };
    Ok(HeadResult {
        counts,
        dx: Some(dx),
        probs,
    })
}

struct RunOutput {
    counts: EvalCounts,
    probs: Vec<Vec<f64>>,
    hidden: Option<Vec<Vec<f64>>>,
    grads: Option<Grads>,
}

#[derive(Clone, Copy, Default)]
struct Want {
    grad: bool,
    capture: bool,
    probs: bool,
}

fn run(cfg: &ModelConfig, p: &ParamSet, batch: &[Example], task: Option<TaskKind>, want: Want) -> Result<RunOutput> {
    ensure!(!batch.is_empty(), "empty batch");
    let m = Model {
        cfg,
        layout: Layout::new(cfg),
        p,
    };
    let d = cfg.embed_dim;
    let pk = Packing::new(batch, cfg.heads);
    let x0 = m.embed(batch, &pk)?;
    let (mut x, ln0) = layer_norm(&x0, d, vals(p, m.layout.ln0_g), vals(p, m.layout.ln0_b));
    let mut caches = Vec::with_capacity(cfg.layers);
    let mut hidden = want.capture.then(Vec::new);
    for li in &m.layout.layers {
        if let Some(h) = hidden.as_mut() {
            h.push(x.clone());
        }
        let (out, c) = m.layer_forward(li, x, &pk);
        caches.push(c);
        x = out;
    }
    if let Some(h) = hidden.as_mut() {
        h.push(x.clone());
    }
    let Some(task) = task else {
        return Ok(RunOutput {
            counts: EvalCounts::default(),
            probs: Vec::new(),
            hidden,
            grads: None,
        });
    };
    let mut grads = want.grad.then(|| p.zeros_like());
    let hr = head(&m, batch, task, &x, &pk, grads.as_mut(), want.probs)?;
    if let (Some(g), Some(mut dx)) = (grads.as_mut(), hr.dx) {
        for (li, c) in m.layout.layers.iter().zip(&caches).rev() {
            dx = m.layer_backward(li, c, &dx, &pk, g);
        }
        let (gg, gb) = two_mut(g, m.layout.ln0_g, m.layout.ln0_b);
        let ds = layer_norm_back(&dx, &ln0, d, vals(p, m.layout.ln0_g), gg, gb);
        let (gt, gp) = two_mut(g, m.layout.tok, m.layout.pos);
        for (b, ex) in batch.iter().enumerate() {
            for (t, &id) in ex.tokens.iter().enumerate() {
                let r = pk.starts[b] + t;
                add_assign(&mut gt[id as usize * d..(id as usize + 1) * d], &ds[r * d..(r + 1) * d]);
                add_assign(&mut gp[t * d..(t + 1) * d], &ds[r * d..(r + 1) * d]);
            }
        }
    }
    Ok(RunOutput {
        counts: hr.counts,
        probs: hr.probs,
        hidden,
        grads,
    })
}

fn effective<'a>(cfg: &ModelConfig, params: &'a ParamSet, mask: Option<&Mask>) -> Result<Cow<'a, ParamSet>> {
    check_schema(cfg, params)?;
    match mask {
        Some(m) => Ok(Cow::Owned(m.applied(params)?)),
        None => Ok(Cow::Borrowed(params)),
    }
}

fn to_matrices(hidden: Vec<Vec<f64>>, d: usize) -> Vec<Matrix> {
    hidden
        .into_iter()
        .map(|h| {
            let rows = h.len() / d;
            Matrix::from_vec(rows, d, h).expect("finite hidden states")
        })
        .collect()
}

/// Loss of the sub-network `mask ⊙ params` on `batch`.
pub fn forward(
    cfg: &ModelConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    batch: &[Example],
    task: TaskKind,
    capture_layers: bool,
) -> Result<ForwardOutput> {
    let p = effective(cfg, params, mask)?;
    let want = Want {
        capture: capture_layers,
        ..Want::default()
    };
    let out = run(cfg, &p, batch, Some(task), want)?;
    let hidden = match out.hidden {
        Some(h) if h.iter().all(|v| v.iter().all(|x| x.is_finite())) => Some(to_matrices(h, cfg.embed_dim)),
        Some(_) => return Err(Error::NonFinite("hidden states".into())),
        None => None,
    };
    Ok(ForwardOutput {
        loss: out.counts.mean_loss(),
        counts: out.counts,
        hidden,
    })
}

/// Mean loss and its gradient with respect to `params`; masked coordinates get zero gradient.
pub fn loss_and_grad(
    cfg: &ModelConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    batch: &[Example],
    task: TaskKind,
) -> Result<(f64, EvalCounts, Grads)> {
    let p = effective(cfg, params, mask)?;
    let want = Want {
        grad: true,
        ..Want::default()
    };
    let out = run(cfg, &p, batch, Some(task), want)?;
    let mut grads = out.grads.expect("gradients requested");
    if let Some(m) = mask {
        m.apply_grads(params, &mut grads)?;
    }
    Ok((out.counts.mean_loss(), out.counts, grads))
}

/// Mean-pooled representation of every example after the embedding layer and
/// each encoder layer: `layers + 1` matrices of `examples x embed_dim`.
pub fn encode(cfg: &ModelConfig, params: &ParamSet, mask: Option<&Mask>, examples: &[Example]) -> Result<Vec<Matrix>> {
    let p = effective(cfg, params, mask)?;
    let d = cfg.embed_dim;
    let mut pooled = vec![vec![0.0; examples.len() * d]; cfg.layers + 1];
    let mut base = 0;
    for chunk in examples.chunks(256) {
        let want = Want {
            capture: true,
            ..Want::default()
        };
        let out = run(cfg, &p, chunk, None, want)?;
        let pk = Packing::new(chunk, cfg.heads);
        for (layer, h) in out.hidden.expect("captured").iter().enumerate() {
            for b in 0..chunk.len() {
                let (s, t) = (pk.starts[b], pk.lens[b]);
                let dst = &mut pooled[layer][(base + b) * d..(base + b + 1) * d];
                for r in s..s + t {
                    for j in 0..d {
                        dst[j] += h[r * d + j] / t as f64;
                    }
                }
            }
        }
        base += chunk.len();
    }
    pooled
        .into_iter()
        .map(|v| Matrix::from_vec(examples.len(), d, v))
        .collect()
}

/// Evaluation counts over `examples`, batched.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    examples: &[Example],
    task: TaskKind,
) -> Result<EvalCounts> {
    let p = effective(cfg, params, mask)?;
    let mut acc = EvalCounts::default();
    for chunk in examples.chunks(256) {
        acc.add(&run(cfg, &p, chunk, Some(task), Want::default())?.counts);
    }
    Ok(acc)
}

/// Predicted class distribution for every prediction unit of `batch`
/// (masked tokens, tokens or examples), in batch order.
pub fn predict_proba(
    cfg: &ModelConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    batch: &[Example],
    task: TaskKind,
) -> Result<Vec<Vec<f64>>> {
    let p = effective(cfg, params, mask)?;
    let want = Want {
        probs: true,
        ..Want::default()
    };
    Ok(run(cfg, &p, batch, Some(task), want)?.probs)
}

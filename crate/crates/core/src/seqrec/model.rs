//! Forward and backward passes of the bidirectional transformer.
//!
//! Layout per block (post-norm, as in BERT):
//!
//! ```text
//! x -> MHA -> (+x) -> LN1 -> FFN(GELU) -> (+) -> LN2
//! ```
//!
//! Inputs are `token embedding + positional embedding`, followed by an
//! embedding layer norm. Positions are counted from the end of the sequence
//! (the last token always takes row `max_len`), so the MASK appended at
//! inference sits where every training sequence ends. All matrices are row-major with inputs on the left
//! (`y = x W + b`, `W: d_in x d_out`).

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_at_acc, matmul_bt, Grads, ParamId, ParamStore, Real};

use super::{InitMode, MASK, N_SPECIAL, PAD};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub ln1: NormIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
    pub ln2: NormIds,
}

/// Parameters of the masked sequence model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel<T> {
    pub store: ParamStore<T>,
    pub mode: InitMode,
    /// Frozen pretrained table (`n_items x pretrained_dim`) or trainable
    /// `n_items x d_model` table in random mode.
    pub item_table: ParamId,
    /// `pretrained_dim x d_model`, present in pretrained mode only.
    pub proj: Option<ParamId>,
    pub special: ParamId,
    pub pos: ParamId,
    pub emb_ln: NormIds,
    pub blocks: Vec<BlockIds>,
    /// `d_model x n_items`; absent when the head is tied to item embeddings.
    pub out_w: Option<ParamId>,
    pub out_b: ParamId,
    pub n_items: usize,
    pub item_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    x_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: Vec<T>,
    ctx: Vec<T>,
    ln1: NormCache<T>,
    x1: Vec<T>,
    f1: Vec<T>,
    g: Vec<T>,
    ln2: NormCache<T>,
}

/// Activations of one sequence, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    tokens: Vec<u32>,
    emb_ln: NormCache<T>,
    blocks: Vec<BlockCache<T>>,
    /// Final hidden states, `n x d_model`.
    pub hidden: Vec<T>,
}

impl<T: Real> Forward<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Attention probabilities of block `layer`, laid out `heads x n x n`.
    pub fn attention(&self, layer: usize) -> &[T] {
        &self.blocks[layer].attn
    }
}

fn add_bias<T: Real>(y: &mut [T], b: &[T]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn acc_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn all_finite<T: Real>(xs: &[T]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<T: Real> SeqModel<T> {
    fn linear(&self, l: &LinearIds, x: &[T], n: usize) -> Vec<T> {
        let mut y = matmul(x, self.store.data(l.w), n, l.d_in, l.d_out);
        add_bias(&mut y, self.store.data(l.b));
        y
    }

    /// Returns `dx`; adds weight and bias gradients into `grads`.
    fn linear_backward(&self, l: &LinearIds, x: &[T], dy: &[T], n: usize, grads: &mut Grads<T>) -> Vec<T> {
        if grads.is_tracked(l.w) {
            matmul_at_acc(x, dy, n, l.d_in, l.d_out, grads.get_mut(l.w));
        }
        if grads.is_tracked(l.b) {
            let gb = grads.get_mut(l.b);
            for row in dy.chunks_exact(l.d_out) {
                acc_into(gb, row);
            }
        }
        matmul_bt(dy, self.store.data(l.w), n, l.d_out, l.d_in)
    }

    fn norm(&self, ids: &NormIds, x: &[T], n: usize) -> (Vec<T>, NormCache<T>) {
        let d = self.d_model;
        let g = self.store.data(ids.gamma);
        let b = self.store.data(ids.beta);
        let mut y = vec![T::zero(); n * d];
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().map(|v| v.widen()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.widen() - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for k in 0..d {
                let xh = (row[k].widen() - mean) * is;
                xhat[i * d + k] = T::narrow(xh);
                y[i * d + k] = T::narrow(xh * g[k].widen() + b[k].widen());
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    fn norm_backward(&self, ids: &NormIds, cache: &NormCache<T>, dy: &[T], n: usize, grads: &mut Grads<T>) -> Vec<T> {
        let d = self.d_model;
        let g = self.store.data(ids.gamma);
        let mut dx = vec![T::zero(); n * d];
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for i in 0..n {
            let xh = &cache.xhat[i * d..(i + 1) * d];
            let dyr = &dy[i * d..(i + 1) * d];
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for k in 0..d {
                let dxh = dyr[k].widen() * g[k].widen();
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[k].widen();
                dgamma[k] += dyr[k].widen() * xh[k].widen();
                dbeta[k] += dyr[k].widen();
            }
            mean_dxh /= d as f64;
            mean_dxh_xh /= d as f64;
            for k in 0..d {
                let dxh = dyr[k].widen() * g[k].widen();
                dx[i * d + k] = T::narrow(cache.inv_std[i] * (dxh - mean_dxh - xh[k].widen() * mean_dxh_xh));
            }
        }
        if grads.is_tracked(ids.gamma) {
            for (a, v) in grads.get_mut(ids.gamma).iter_mut().zip(dgamma) {
                *a = T::narrow(a.widen() + v);
            }
        }
        if grads.is_tracked(ids.beta) {
            for (a, v) in grads.get_mut(ids.beta).iter_mut().zip(dbeta) {
                *a = T::narrow(a.widen() + v);
            }
        }
        dx
    }

    /// Embedding of one token, before the positional term.
    fn token_embedding(&self, tok: u32, out: &mut [f64]) {
        let d = self.d_model;
        out.iter_mut().for_each(|v| *v = 0.0);
        if tok < N_SPECIAL {
            let s = &self.store.data(self.special)[tok as usize * d..(tok as usize + 1) * d];
            out.iter_mut().zip(s).for_each(|(o, v)| *o = v.widen());
            return;
        }
        let item = (tok - N_SPECIAL) as usize;
        let row = &self.store.data(self.item_table)[item * self.item_dim..(item + 1) * self.item_dim];
        match self.proj {
            Some(p) => {
                let p = self.store.data(p);
                for (k, &r) in row.iter().enumerate() {
                    let r = r.widen();
                    if r == 0.0 {
                        continue;
                    }
                    for (o, &w) in out.iter_mut().zip(&p[k * d..(k + 1) * d]) {
                        *o += r * w.widen();
                    }
                }
            }
            None => out.iter_mut().zip(row).for_each(|(o, v)| *o = v.widen()),
        }
    }

    /// Embeddings of every item token, `n_items x d_model` (tied head).
    pub fn item_token_matrix(&self) -> Vec<T> {
        let table = self.store.data(self.item_table);
        match self.proj {
            Some(p) => matmul(table, self.store.data(p), self.n_items, self.item_dim, self.d_model),
            None => table.to_vec(),
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if tokens.len() > self.max_len + 1 {
            return Err(Error::InvalidInput(format!(
                "sequence of {} tokens exceeds {} positions",
                tokens.len(),
                self.max_len + 1
            )));
        }
        let limit = self.n_items as u32 + N_SPECIAL;
        if let Some(t) = tokens.iter().find(|&&t| t >= limit) {
            return Err(Error::InvalidInput(format!("token {t} out of range (< {limit})")));
        }
        Ok(())
    }

    /// First positional row used by a sequence of `n` tokens.
    fn pos_offset(&self, n: usize) -> usize {
        self.max_len + 1 - n
    }

    /// Runs the encoder over one (possibly padded) sequence.
    pub fn forward(&self, tokens: &[u32]) -> Result<Forward<T>> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let d = self.d_model;
        let pos = &self.store.data(self.pos)[self.pos_offset(n) * d..];
        let mut x0 = vec![T::zero(); n * d];
        let mut buf = vec![0.0; d];
        for (p, &tok) in tokens.iter().enumerate() {
            self.token_embedding(tok, &mut buf);
            for k in 0..d {
                x0[p * d + k] = T::narrow(buf[k] + pos[p * d + k].widen());
            }
        }
        let (mut x, emb_ln) = self.norm(&self.emb_ln, &x0, n);
        if !all_finite(&x) {
            return Err(Error::Diverged("seqrec: non-finite activation after embedding".into()));
        }
        let valid: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (l, b) in self.blocks.iter().enumerate() {
            let (out, cache) = self.block_forward(b, x, &valid, n);
            if !all_finite(&out) {
                return Err(Error::Diverged(format!("seqrec: non-finite activation in block {l}")));
            }
            blocks.push(cache);
            x = out;
        }
        Ok(Forward {
            tokens: tokens.to_vec(),
            emb_ln,
            blocks,
            hidden: x,
        })
    }

    fn block_forward(&self, b: &BlockIds, x: Vec<T>, valid: &[bool], n: usize) -> (Vec<T>, BlockCache<T>) {
        let d = self.d_model;
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.linear(&b.q, &x, n);
        let k = self.linear(&b.k, &x, n);
        let v = self.linear(&b.v, &x, n);
        let mut attn = vec![T::zero(); h * n * n];
        let mut ctx = vec![T::zero(); n * d];
        let mut scores = vec![0.0; n];
        for head in 0..h {
            let c0 = head * dh;
            for i in 0..n {
                let qi = &q[i * d + c0..i * d + c0 + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if valid[j] {
                        let kj = &k[j * d + c0..j * d + c0 + dh];
                        let s: f64 = qi.iter().zip(kj).map(|(a, b)| a.widen() * b.widen()).sum::<f64>() * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for j in 0..n {
                    if valid[j] {
                        scores[j] = (scores[j] - max).exp();
                        z += scores[j];
                    }
                }
                let row = &mut attn[(head * n + i) * n..(head * n + i + 1) * n];
                let mut acc = vec![0.0; dh];
                for j in 0..n {
                    if valid[j] {
                        let a = scores[j] / z;
                        row[j] = T::narrow(a);
                        for (c, vv) in acc.iter_mut().zip(&v[j * d + c0..j * d + c0 + dh]) {
                            *c += a * vv.widen();
                        }
                    }
                }
                for (dst, c) in ctx[i * d + c0..i * d + c0 + dh].iter_mut().zip(acc) {
                    *dst = T::narrow(c);
                }
            }
        }
        let a = self.linear(&b.o, &ctx, n);
        let mut r1 = x.clone();
        acc_into(&mut r1, &a);
        let (x1, ln1) = self.norm(&b.ln1, &r1, n);
        let f1 = self.linear(&b.ff1, &x1, n);
        let g: Vec<T> = f1.iter().map(|v| T::narrow(gelu(v.widen()))).collect();
        let f2 = self.linear(&b.ff2, &g, n);
        let mut r2 = x1.clone();
        acc_into(&mut r2, &f2);
        let (out, ln2) = self.norm(&b.ln2, &r2, n);
        (
            out,
            BlockCache {
                x_in: x,
                q,
                k,
                v,
                attn,
                ctx,
                ln1,
                x1,
                f1,
                g,
                ln2,
            },
        )
    }

    fn block_backward(&self, b: &BlockIds, c: &BlockCache<T>, d_out: &[T], n: usize, grads: &mut Grads<T>) -> Vec<T> {
        let d = self.d_model;
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();

        let d_r2 = self.norm_backward(&b.ln2, &c.ln2, d_out, n, grads);
        // r2 = x1 + ff2(gelu(ff1(x1)))
        let d_g = self.linear_backward(&b.ff2, &c.g, &d_r2, n, grads);
        let d_f1: Vec<T> = d_g
            .iter()
            .zip(&c.f1)
            .map(|(dg, f)| T::narrow(dg.widen() * gelu_grad(f.widen())))
            .collect();
        let mut d_x1 = self.linear_backward(&b.ff1, &c.x1, &d_f1, n, grads);
        acc_into(&mut d_x1, &d_r2);

        let d_r1 = self.norm_backward(&b.ln1, &c.ln1, &d_x1, n, grads);
        // r1 = x + o(ctx)
        let d_ctx = self.linear_backward(&b.o, &c.ctx, &d_r1, n, grads);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for head in 0..h {
            let c0 = head * dh;
            for i in 0..n {
                let arow = &c.attn[(head * n + i) * n..(head * n + i + 1) * n];
                let dci = &d_ctx[i * d + c0..i * d + c0 + dh];
                let mut dot_a_da = 0.0;
                for j in 0..n {
                    let a = arow[j].widen();
                    if a == 0.0 {
                        da[j] = 0.0;
                        continue;
                    }
                    let vj = &c.v[j * d + c0..j * d + c0 + dh];
                    da[j] = dci.iter().zip(vj).map(|(x, y)| x.widen() * y.widen()).sum();
                    dot_a_da += a * da[j];
                    for (t, dcv) in dv[j * d + c0..j * d + c0 + dh].iter_mut().zip(dci) {
                        *t += a * dcv.widen();
                    }
                }
                for j in 0..n {
                    let a = arow[j].widen();
                    if a == 0.0 {
                        continue;
                    }
                    let ds = a * (da[j] - dot_a_da) * scale;
                    for t in 0..dh {
                        dq[i * d + c0 + t] += ds * c.k[j * d + c0 + t].widen();
                        dk[j * d + c0 + t] += ds * c.q[i * d + c0 + t].widen();
                    }
                }
            }
        }
        let to_t = |v: Vec<f64>| v.into_iter().map(T::narrow).collect::<Vec<T>>();
        let mut dx = d_r1.clone();
        acc_into(&mut dx, &self.linear_backward(&b.q, &c.x_in, &to_t(dq), n, grads));
        acc_into(&mut dx, &self.linear_backward(&b.k, &c.x_in, &to_t(dk), n, grads));
        acc_into(&mut dx, &self.linear_backward(&b.v, &c.x_in, &to_t(dv), n, grads));
        dx
    }

    /// Back-propagates `d_hidden` (`n x d_model`) through the encoder and
    /// embeddings, adding into `grads`.
    pub fn backward(&self, fwd: &Forward<T>, d_hidden: &[T], grads: &mut Grads<T>) {
        let n = fwd.len();
        let d = self.d_model;
        let mut dx = d_hidden.to_vec();
        for (b, c) in self.blocks.iter().zip(&fwd.blocks).rev() {
            dx = self.block_backward(b, c, &dx, n, grads);
        }
        let dx0 = self.norm_backward(&self.emb_ln, &fwd.emb_ln, &dx, n, grads);
        if grads.is_tracked(self.pos) {
            let start = self.pos_offset(n) * d;
            acc_into(&mut grads.get_mut(self.pos)[start..start + n * d], &dx0);
        }
        for (p, &tok) in fwd.tokens.iter().enumerate() {
            let g = &dx0[p * d..(p + 1) * d];
            if tok < N_SPECIAL {
                if grads.is_tracked(self.special) {
                    acc_into(&mut grads.get_mut(self.special)[tok as usize * d..(tok as usize + 1) * d], g);
                }
                continue;
            }
            let item = (tok - N_SPECIAL) as usize;
            match self.proj {
                Some(pid) => {
                    if !grads.is_tracked(pid) {
                        continue;
                    }
                    let row: Vec<f64> = self.store.data(self.item_table)[item * self.item_dim..(item + 1) * self.item_dim]
                        .iter()
                        .map(|v| v.widen())
                        .collect();
                    let gp = grads.get_mut(pid);
                    for (k, r) in row.into_iter().enumerate() {
                        if r == 0.0 {
                            continue;
                        }
                        for (dst, gv) in gp[k * d..(k + 1) * d].iter_mut().zip(g) {
                            *dst = T::narrow(dst.widen() + r * gv.widen());
                        }
                    }
                }
                None => {
                    if grads.is_tracked(self.item_table) {
                        acc_into(&mut grads.get_mut(self.item_table)[item * d..(item + 1) * d], g);
                    }
                }
            }
        }
    }

    /// Logits over all items for one hidden state. `tied` carries the item
    /// token matrix when the head is tied.
    fn head(&self, h: &[T], tied: Option<&[T]>) -> Vec<f64> {
        let n_items = self.n_items;
        let d = self.d_model;
        let b = self.store.data(self.out_b);
        let mut logits: Vec<f64> = b.iter().map(|v| v.widen()).collect();
        match (self.out_w, tied) {
            (Some(w), _) => {
                let w = self.store.data(w);
                for (k, hv) in h.iter().enumerate() {
                    let hv = hv.widen();
                    for (l, wv) in logits.iter_mut().zip(&w[k * n_items..(k + 1) * n_items]) {
                        *l += hv * wv.widen();
                    }
                }
            }
            (None, Some(e)) => {
                for (j, l) in logits.iter_mut().enumerate() {
                    *l += h.iter().zip(&e[j * d..(j + 1) * d]).map(|(a, b)| a.widen() * b.widen()).sum::<f64>();
                }
            }
            (None, None) => unreachable!("tied head needs the item token matrix"),
        }
        logits
    }

    /// Logits for the given positions of each sequence: `positions.len() x n_items`.
    pub fn logits_at(&self, fwd: &Forward<T>, positions: &[usize]) -> Vec<Vec<f64>> {
        let tied = self.out_w.is_none().then(|| self.item_token_matrix());
        let d = self.d_model;
        positions
            .iter()
            .map(|&p| self.head(&fwd.hidden[p * d..(p + 1) * d], tied.as_deref()))
            .collect()
    }

    /// Per-position logits of each sequence, flattened `n x n_items`.
    pub fn forward_logits(&self, batch: &[Vec<u32>]) -> Result<Vec<Vec<T>>> {
        let tied = self.out_w.is_none().then(|| self.item_token_matrix());
        batch
            .iter()
            .map(|seq| {
                let fwd = self.forward(seq)?;
                let d = self.d_model;
                let mut out = Vec::with_capacity(seq.len() * self.n_items);
                for p in 0..seq.len() {
                    out.extend(self.head(&fwd.hidden[p * d..(p + 1) * d], tied.as_deref()).into_iter().map(T::narrow));
                }
                Ok(out)
            })
            .collect()
    }

    /// Mean masked-position cross-entropy over a batch; gradients are added
    /// into `grads` when given.
    pub fn masked_loss(&self, batch: &super::MaskedBatch, mut grads: Option<&mut Grads<T>>) -> Result<f64> {
        let n_targets: usize = batch.targets.iter().map(Vec::len).sum();
        if n_targets == 0 {
            return Ok(0.0);
        }
        let d = self.d_model;
        let n_items = self.n_items;
        let tied = self.out_w.is_none().then(|| self.item_token_matrix());
        let mut d_tied = tied.as_ref().map(|_| vec![0.0f64; n_items * d]);
        let mut loss = 0.0;
        for (seq, targets) in batch.tokens.iter().zip(&batch.targets) {
            let fwd = self.forward(seq)?;
            let mut d_hidden = vec![T::zero(); seq.len() * d];
            for &(p, tok) in targets {
                let class = (tok - N_SPECIAL) as usize;
                let h = &fwd.hidden[p * d..(p + 1) * d];
                let logits = self.head(h, tied.as_deref());
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                let log_z = max + z.ln();
                loss += log_z - logits[class];
                let Some(grads) = grads.as_deref_mut() else { continue };
                let mut dl: Vec<f64> = logits.iter().map(|l| (l - log_z).exp() / n_targets as f64).collect();
                dl[class] -= 1.0 / n_targets as f64;
                let dh = &mut d_hidden[p * d..(p + 1) * d];
                match (self.out_w, tied.as_deref()) {
                    (Some(w), _) => {
                        let wd = self.store.data(w);
                        for k in 0..d {
                            let row = &wd[k * n_items..(k + 1) * n_items];
                            let s: f64 = row.iter().zip(&dl).map(|(a, b)| a.widen() * b).sum();
                            dh[k] = T::narrow(dh[k].widen() + s);
                        }
                        let gw = grads.get_mut(w);
                        for k in 0..d {
                            let hk = h[k].widen();
                            for (g, &v) in gw[k * n_items..(k + 1) * n_items].iter_mut().zip(&dl) {
                                *g = T::narrow(g.widen() + hk * v);
                            }
                        }
                    }
                    (None, Some(e)) => {
                        let de = d_tied.as_mut().unwrap();
                        for (j, &v) in dl.iter().enumerate() {
                            let erow = &e[j * d..(j + 1) * d];
                            for k in 0..d {
                                dh[k] = T::narrow(dh[k].widen() + v * erow[k].widen());
                                de[j * d + k] += v * h[k].widen();
                            }
                        }
                    }
                    (None, None) => unreachable!(),
                }
                if grads.is_tracked(self.out_b) {
                    for (g, &v) in grads.get_mut(self.out_b).iter_mut().zip(&dl) {
                        *g = T::narrow(g.widen() + v);
                    }
                }
            }
            if let Some(grads) = grads.as_deref_mut() {
                self.backward(&fwd, &d_hidden, grads);
            }
        }
        if let (Some(grads), Some(de)) = (grads, d_tied) {
            let de: Vec<T> = de.into_iter().map(T::narrow).collect();
            match self.proj {
                Some(p) if grads.is_tracked(p) => {
                    matmul_at_acc(self.store.data(self.item_table), &de, n_items, self.item_dim, d, grads.get_mut(p));
                }
                None if grads.is_tracked(self.item_table) => acc_into(grads.get_mut(self.item_table), &de),
                _ => {}
            }
        }
        let loss = loss / n_targets as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged("seqrec: non-finite loss".into()));
        }
        Ok(loss)
    }

    /// Hidden state at the MASK appended after `history`.
    pub fn next_item_logits(&self, history: &[u32]) -> Result<Vec<f64>> {
        let mut tokens = history.to_vec();
        tokens.push(MASK);
        let fwd = self.forward(&tokens)?;
        Ok(self.logits_at(&fwd, &[tokens.len() - 1]).pop().unwrap())
    }

    pub fn item_checksum(&self) -> String {
        self.store.get(self.item_table).checksum()
    }
}

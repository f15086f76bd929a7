use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;

use super::kernels::*;
use super::{Model, ModelError};
use crate::codec::Layout;
use crate::mask::{build_mask, positions, AttentionLayout};
use crate::rng::Rng;

/// Token ids with their block layout. The model prepends its slot registers.
#[derive(Clone, Copy, Debug)]
pub struct Sequence<'a> {
    pub tokens: &'a [u32],
    pub layout: &'a Layout,
}

struct LayerCache<T> {
    /// Query rows computed in this layer (all rows except possibly in the last layer).
    rows: Vec<usize>,
    x_in: Vec<T>,
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    prob_off: Vec<usize>,
    ctx: Vec<T>,
    drop1: Option<Vec<T>>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    b: Vec<T>,
    hpre: Vec<T>,
    g: Vec<T>,
    drop2: Option<Vec<T>>,
}

/// Activations of one forward pass, kept for logits and the backward pass.
pub struct Forward<T> {
    n: usize,
    ids: Vec<usize>,
    pos: Vec<usize>,
    keys: Vec<Vec<u32>>,
    layers: Vec<LayerCache<T>>,
    /// Residual stream after the last layer (valid on its computed rows).
    x_out: Vec<T>,
}

impl<T> Forward<T> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn gather<T: Float>(x: &[T], rows: &[usize], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    out
}

fn dropout_mask<T: Float>(len: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::from(1.0 / (1.0 - p)).unwrap();
    (0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect()
}

impl<T: Float> Model<T> {
    fn check(&self, seq: &Sequence) -> Result<AttentionLayout, ModelError> {
        if seq.layout.len() != seq.tokens.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "layout covers {} tokens, sequence has {}",
                seq.layout.len(),
                seq.tokens.len()
            )));
        }
        if let Some(&t) = seq.tokens.iter().find(|&&t| t as usize >= self.cfg.vocab) {
            return Err(ModelError::ShapeMismatch(format!("token id {t} outside vocabulary of {}", self.cfg.vocab)));
        }
        Ok(AttentionLayout::new(self.cfg.slots, seq.layout))
    }

    /// Run the network. `last_rows` restricts the final layer to the given
    /// model rows (slots included in the numbering); `None` computes all.
    pub(crate) fn run(&self, seq: &Sequence, last_rows: Option<&[usize]>, mut rng: Option<&mut Rng>) -> Result<Forward<T>, ModelError> {
        let cfg = &self.cfg;
        let al = self.check(seq)?;
        let n = al.len();
        let d = cfg.dim;
        let f = cfg.ffn;
        let (h, dh) = (cfg.heads, cfg.head_dim());
        let p = &self.params;
        let mask = build_mask(&al, cfg.mask).map_err(|e| ModelError::MalformedTrace(format!("{e}")))?;
        let keys = mask.key_lists();
        let pos: Vec<usize> = positions(&al, cfg.positions).into_iter().map(|x| x as usize).collect();
        if let Some(&mp) = pos.iter().max() {
            if mp >= cfg.max_pos {
                return Err(ModelError::PositionOverflow { pos: mp, max: cfg.max_pos });
            }
        }
        let s = cfg.slots;
        let ids: Vec<usize> = (0..n).map(|i| if i < s { i } else { seq.tokens[i - s] as usize }).collect();
        let mut x = vec![T::zero(); n * d];
        for i in 0..n {
            let row = &mut x[i * d..(i + 1) * d];
            let e = if i < s { self.off.slot + ids[i] * d } else { self.off.tok + ids[i] * d };
            row.copy_from_slice(&p[e..e + d]);
            axpy(row, T::one(), &p[self.off.pos + pos[i] * d..self.off.pos + (pos[i] + 1) * d]);
        }
        let scale = T::one() / T::from(dh).unwrap().sqrt();
        let train_drop = cfg.dropout > 0.0 && rng.is_some();
        let mut layers = Vec::with_capacity(cfg.layers);
        for (li, lo) in self.off.layers.iter().enumerate() {
            let rows: Vec<usize> = match last_rows {
                Some(r) if li + 1 == cfg.layers => r.to_vec(),
                _ => (0..n).collect(),
            };
            let m = rows.len();
            let x_in = x.clone();
            let mut a = vec![T::zero(); n * d];
            let mut xhat1 = vec![T::zero(); n * d];
            let mut rstd1 = vec![T::zero(); n];
            layer_norm(&x, &p[lo.ln1_g..lo.ln1_g + d], &p[lo.ln1_b..lo.ln1_b + d], &mut a, &mut xhat1, &mut rstd1);
            let a_rows = if m == n { None } else { Some(gather(&a, &rows, d)) };
            let a_q = a_rows.as_deref().unwrap_or(&a);
            let mut q = vec![T::zero(); m * d];
            let mut k = vec![T::zero(); n * d];
            let mut v = vec![T::zero(); n * d];
            matmul_acc(&mut q, a_q, &p[lo.wq..lo.wq + d * d], m, d, d);
            matmul_acc(&mut k, &a, &p[lo.wk..lo.wk + d * d], n, d, d);
            matmul_acc(&mut v, &a, &p[lo.wv..lo.wv + d * d], n, d, d);
            let mut prob_off = Vec::with_capacity(m + 1);
            let mut total = 0;
            for &r in &rows {
                prob_off.push(total);
                total += keys[r].len() * h;
            }
            prob_off.push(total);
            let mut probs = vec![T::zero(); total];
            let mut ctx = vec![T::zero(); m * d];
            for (qi, &r) in rows.iter().enumerate() {
                let ks = &keys[r];
                for hh in 0..h {
                    let qv = &q[qi * d + hh * dh..qi * d + (hh + 1) * dh];
                    let pr = &mut probs[prob_off[qi] + hh * ks.len()..prob_off[qi] + (hh + 1) * ks.len()];
                    for (j, &kj) in ks.iter().enumerate() {
                        let kj = kj as usize;
                        pr[j] = dot(qv, &k[kj * d + hh * dh..kj * d + (hh + 1) * dh]) * scale;
                    }
                    softmax(pr);
                    let c = &mut ctx[qi * d + hh * dh..qi * d + (hh + 1) * dh];
                    for (j, &kj) in ks.iter().enumerate() {
                        let kj = kj as usize;
                        axpy(c, pr[j], &v[kj * d + hh * dh..kj * d + (hh + 1) * dh]);
                    }
                }
            }
            let mut o = vec![T::zero(); m * d];
            matmul_acc(&mut o, &ctx, &p[lo.wo..lo.wo + d * d], m, d, d);
            add_bias(&mut o, &p[lo.bo..lo.bo + d], m);
            let drop1 = if train_drop { Some(dropout_mask::<T>(m * d, cfg.dropout, rng.as_deref_mut().unwrap())) } else { None };
            if let Some(dm) = &drop1 {
                o.iter_mut().zip(dm).for_each(|(x, &k)| *x = *x * k);
            }
            let mut xm = gather(&x, &rows, d);
            axpy(&mut xm, T::one(), &o);
            let mut b = vec![T::zero(); m * d];
            let mut xhat2 = vec![T::zero(); m * d];
            let mut rstd2 = vec![T::zero(); m];
            layer_norm(&xm, &p[lo.ln2_g..lo.ln2_g + d], &p[lo.ln2_b..lo.ln2_b + d], &mut b, &mut xhat2, &mut rstd2);
            let mut hpre = vec![T::zero(); m * f];
            matmul_acc(&mut hpre, &b, &p[lo.w1..lo.w1 + d * f], m, d, f);
            add_bias(&mut hpre, &p[lo.b1..lo.b1 + f], m);
            let g: Vec<T> = hpre.iter().map(|&z| gelu(z)).collect();
            let mut fo = vec![T::zero(); m * d];
            matmul_acc(&mut fo, &g, &p[lo.w2..lo.w2 + f * d], m, f, d);
            add_bias(&mut fo, &p[lo.b2..lo.b2 + d], m);
            let drop2 = if train_drop { Some(dropout_mask::<T>(m * d, cfg.dropout, rng.as_deref_mut().unwrap())) } else { None };
            if let Some(dm) = &drop2 {
                fo.iter_mut().zip(dm).for_each(|(x, &k)| *x = *x * k);
            }
            axpy(&mut xm, T::one(), &fo);
            for (qi, &r) in rows.iter().enumerate() {
                x[r * d..(r + 1) * d].copy_from_slice(&xm[qi * d..(qi + 1) * d]);
            }
            layers.push(LayerCache {
                rows,
                x_in,
                xhat1,
                rstd1,
                a,
                q,
                k,
                v,
                probs,
                prob_off,
                ctx,
                drop1,
                xhat2,
                rstd2,
                b,
                hpre,
                g,
                drop2,
            });
        }
        Ok(Forward { n, ids, pos, keys, layers, x_out: x })
    }

    fn final_norm(&self, fwd: &Forward<T>, row: usize) -> (Vec<T>, Vec<T>, T) {
        let d = self.cfg.dim;
        let mut z = vec![T::zero(); d];
        let mut xhat = vec![T::zero(); d];
        let mut rstd = [T::zero()];
        let p = &self.params;
        layer_norm(
            &fwd.x_out[row * d..(row + 1) * d],
            &p[self.off.lnf_g..self.off.lnf_g + d],
            &p[self.off.lnf_b..self.off.lnf_b + d],
            &mut z,
            &mut xhat,
            &mut rstd,
        );
        (z, xhat, rstd[0])
    }

    fn project(&self, z: &[T]) -> Vec<T> {
        let (d, v) = (self.cfg.dim, self.cfg.vocab);
        let mut logits = self.params[self.off.out_b..self.off.out_b + v].to_vec();
        matmul_acc(&mut logits, z, &self.params[self.off.out_w..self.off.out_w + d * v], 1, d, v);
        logits
    }

    /// Next-token logits read at the given token indices.
    pub fn forward(&self, seq: &Sequence, at: &[usize]) -> Result<Vec<Vec<T>>, ModelError> {
        let s = self.cfg.slots;
        if let Some(&bad) = at.iter().find(|&&i| i >= seq.tokens.len()) {
            return Err(ModelError::ShapeMismatch(format!("position {bad} outside sequence of {}", seq.tokens.len())));
        }
        let rows: Vec<usize> = at.iter().map(|&i| i + s).collect();
        let fwd = self.run(seq, Some(&rows), None)?;
        Ok(rows.iter().map(|&r| self.project(&self.final_norm(&fwd, r).0)).collect())
    }

    /// Residual stream after the embedding and after every layer, over
    /// token rows only (slots dropped).
    pub fn hidden_states(&self, seq: &Sequence) -> Result<Vec<Vec<T>>, ModelError> {
        let fwd = self.run(seq, None, None)?;
        let skip = self.cfg.slots * self.cfg.dim;
        let mut out: Vec<Vec<T>> = fwd.layers.iter().map(|l| l.x_in[skip..].to_vec()).collect();
        out.push(fwd.x_out[skip..].to_vec());
        Ok(out)
    }

    /// Distribution over the token after the last one, optionally
    /// renormalized over an admissible set.
    pub fn next_token_dist(&self, seq: &Sequence, admissible: Option<&[u32]>) -> Result<Vec<T>, ModelError> {
        if seq.tokens.is_empty() {
            return Err(ModelError::MalformedTrace("empty context".into()));
        }
        let mut logits = self.forward(seq, &[seq.tokens.len() - 1])?.pop().unwrap();
        if let Some(adm) = admissible {
            let mut keep = vec![false; logits.len()];
            for &a in adm {
                if let Some(k) = keep.get_mut(a as usize) {
                    *k = true;
                }
            }
            for (l, &k) in logits.iter_mut().zip(&keep) {
                if !k {
                    *l = T::neg_infinity();
                }
            }
            if !keep.iter().any(|&k| k) {
                return Err(ModelError::ShapeMismatch("empty admissible set".into()));
            }
        }
        softmax(&mut logits);
        Ok(logits)
    }

    /// Cross-entropy of `tokens[t]` given the prefix up to `t - 1`, summed
    /// over `targets`. Gradients scaled by `weight` are added into `grad`.
    pub fn loss_grad(
        &self,
        seq: &Sequence,
        targets: &[usize],
        weight: T,
        grad: &mut [T],
        rng: Option<&mut Rng>,
    ) -> Result<T, ModelError> {
        if grad.len() != self.params.len() {
            return Err(ModelError::ShapeMismatch("gradient buffer length".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t == 0 || t >= seq.tokens.len()) {
            return Err(ModelError::ShapeMismatch(format!("target index {bad} has no preceding token")));
        }
        let cfg = &self.cfg;
        let (d, v, s) = (cfg.dim, cfg.vocab, cfg.slots);
        let rows: Vec<usize> = targets.iter().map(|&t| t - 1 + s).collect();
        let fwd = self.run(seq, Some(&rows), rng)?;
        let n = fwd.n;
        let p = &self.params;
        let mut loss = T::zero();
        let mut dx = vec![T::zero(); n * d];
        for (&t, &r) in targets.iter().zip(&rows) {
            let (z, xhat, rstd) = self.final_norm(&fwd, r);
            let mut probs = self.project(&z);
            softmax(&mut probs);
            let y = seq.tokens[t] as usize;
            loss = loss - probs[y].max(T::min_positive_value()).ln();
            let mut dl = probs;
            dl[y] = dl[y] - T::one();
            dl.iter_mut().for_each(|g| *g = *g * weight);
            outer_acc(&mut grad[self.off.out_w..self.off.out_w + d * v], &z, &dl, 1, d, v);
            axpy(&mut grad[self.off.out_b..self.off.out_b + v], T::one(), &dl);
            let mut dz = vec![T::zero(); d];
            matmul_t_acc(&mut dz, &dl, &p[self.off.out_w..self.off.out_w + d * v], 1, d, v);
            let (gg, rest) = grad.split_at_mut(self.off.lnf_b);
            let dg = &mut gg[self.off.lnf_g..self.off.lnf_g + d];
            let db = &mut rest[..d];
            layer_norm_back(&dz, &xhat, &[rstd], &p[self.off.lnf_g..self.off.lnf_g + d], &mut dx[r * d..(r + 1) * d], dg, db, 0..1);
        }
        self.backward(&fwd, dx, grad);
        Ok(loss)
    }

    fn backward(&self, fwd: &Forward<T>, mut dx: Vec<T>, grad: &mut [T]) {
        let cfg = &self.cfg;
        let (d, f, h, dh) = (cfg.dim, cfg.ffn, cfg.heads, cfg.head_dim());
        let n = fwd.n;
        let p = &self.params;
        let scale = T::one() / T::from(dh).unwrap().sqrt();
        for (lo, c) in self.off.layers.iter().zip(&fwd.layers).rev() {
            let m = c.rows.len();
            let mut dxr = gather(&dx, &c.rows, d);
            let mut df = dxr.clone();
            if let Some(dm) = &c.drop2 {
                df.iter_mut().zip(dm).for_each(|(x, &k)| *x = *x * k);
            }
            outer_acc(&mut grad[lo.w2..lo.w2 + f * d], &c.g, &df, m, f, d);
            bias_grad(&mut grad[lo.b2..lo.b2 + d], &df, m);
            let mut dg = vec![T::zero(); m * f];
            matmul_t_acc(&mut dg, &df, &p[lo.w2..lo.w2 + f * d], m, f, d);
            for (g, &z) in dg.iter_mut().zip(&c.hpre) {
                *g = *g * gelu_grad(z);
            }
            outer_acc(&mut grad[lo.w1..lo.w1 + d * f], &c.b, &dg, m, d, f);
            bias_grad(&mut grad[lo.b1..lo.b1 + f], &dg, m);
            let mut dbn = vec![T::zero(); m * d];
            matmul_t_acc(&mut dbn, &dg, &p[lo.w1..lo.w1 + d * f], m, d, f);
            {
                let (gg, rest) = grad.split_at_mut(lo.ln2_b);
                layer_norm_back(&dbn, &c.xhat2, &c.rstd2, &p[lo.ln2_g..lo.ln2_g + d], &mut dxr, &mut gg[lo.ln2_g..lo.ln2_g + d], &mut rest[..d], 0..m);
            }
            let mut dout = dxr.clone();
            if let Some(dm) = &c.drop1 {
                dout.iter_mut().zip(dm).for_each(|(x, &k)| *x = *x * k);
            }
            outer_acc(&mut grad[lo.wo..lo.wo + d * d], &c.ctx, &dout, m, d, d);
            bias_grad(&mut grad[lo.bo..lo.bo + d], &dout, m);
            let mut dctx = vec![T::zero(); m * d];
            matmul_t_acc(&mut dctx, &dout, &p[lo.wo..lo.wo + d * d], m, d, d);
            let mut dq = vec![T::zero(); m * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut dp = Vec::new();
            for (qi, &r) in c.rows.iter().enumerate() {
                let ks = &fwd.keys[r];
                for hh in 0..h {
                    let hs = hh * dh..(hh + 1) * dh;
                    let pr = &c.probs[c.prob_off[qi] + hh * ks.len()..c.prob_off[qi] + (hh + 1) * ks.len()];
                    let dc = &dctx[qi * d + hs.start..qi * d + hs.end];
                    dp.clear();
                    let mut sum = T::zero();
                    for (j, &kj) in ks.iter().enumerate() {
                        let kj = kj as usize;
                        let g = dot(dc, &c.v[kj * d + hs.start..kj * d + hs.end]);
                        axpy(&mut dv[kj * d + hs.start..kj * d + hs.end], pr[j], dc);
                        sum = sum + pr[j] * g;
                        dp.push(g);
                    }
                    for (j, &kj) in ks.iter().enumerate() {
                        let kj = kj as usize;
                        let ds = pr[j] * (dp[j] - sum) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        axpy(&mut dq[qi * d + hs.start..qi * d + hs.end], ds, &c.k[kj * d + hs.start..kj * d + hs.end]);
                        axpy(&mut dk[kj * d + hs.start..kj * d + hs.end], ds, &c.q[qi * d + hs.start..qi * d + hs.end]);
                    }
                }
            }
            let a_rows = if m == n { None } else { Some(gather(&c.a, &c.rows, d)) };
            let a_q = a_rows.as_deref().unwrap_or(&c.a);
            outer_acc(&mut grad[lo.wq..lo.wq + d * d], a_q, &dq, m, d, d);
            outer_acc(&mut grad[lo.wk..lo.wk + d * d], &c.a, &dk, n, d, d);
            outer_acc(&mut grad[lo.wv..lo.wv + d * d], &c.a, &dv, n, d, d);
            let mut daq = vec![T::zero(); m * d];
            matmul_t_acc(&mut daq, &dq, &p[lo.wq..lo.wq + d * d], m, d, d);
            let mut da = vec![T::zero(); n * d];
            matmul_t_acc(&mut da, &dk, &p[lo.wk..lo.wk + d * d], n, d, d);
            matmul_t_acc(&mut da, &dv, &p[lo.wv..lo.wv + d * d], n, d, d);
            for (qi, &r) in c.rows.iter().enumerate() {
                axpy(&mut da[r * d..(r + 1) * d], T::one(), &daq[qi * d..(qi + 1) * d]);
                dx[r * d..(r + 1) * d].copy_from_slice(&dxr[qi * d..(qi + 1) * d]);
            }
            let (gg, rest) = grad.split_at_mut(lo.ln1_b);
            layer_norm_back(&da, &c.xhat1, &c.rstd1, &p[lo.ln1_g..lo.ln1_g + d], &mut dx, &mut gg[lo.ln1_g..lo.ln1_g + d], &mut rest[..d], 0..n);
        }
        let s = cfg.slots;
        for i in 0..n {
            let row = &dx[i * d..(i + 1) * d];
            let e = if i < s { self.off.slot + fwd.ids[i] * d } else { self.off.tok + fwd.ids[i] * d };
            axpy(&mut grad[e..e + d], T::one(), row);
            let po = self.off.pos + fwd.pos[i] * d;
            axpy(&mut grad[po..po + d], T::one(), row);
        }
    }
}

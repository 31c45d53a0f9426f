//! Trainable span, arc and label scorer.
//!
//! Tokens are embedded and read through a window mixer: one tanh hidden
//! layer over `[e_{t-w} .. e_{t+w}]`, then separate tanh "forward" and
//! "backward" outputs. The sequence is framed as `[BOS, tokens.., EOS]`.
//! Fencepost `k` (between tokens `k - 1` and `k`) is `[fwd_k; bwd_{k+1}]`
//! over that framed sequence; token `t` is represented by
//! `[fwd_{t+1}; bwd_{t+1}]`. Span `(i, j)` reads fenceposts `i` and `j + 1`.

mod norm;
mod params;

pub use norm::{potential_normalize, potential_normalize_backward, PnStats, PN_MIN_STD};
pub use params::{Params, ScorerDims, Tensor};

use crate::error::{Error, Result};
use crate::types::{LabelScheme, ScoreSet};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

/// Weight, bias, cached output, output gradient, whether the input is the
/// fencepost matrix (else token vectors), output width.
type Projection<'a> = (Tensor, Tensor, &'a [f64], &'a [f64], bool, usize);

/// Cached activations of one sentence.
#[derive(Clone, Debug)]
pub struct Forward {
    n: usize,
    /// Padded token ids, `n + 2 + 2w` long.
    ids: Vec<usize>,
    hidden: Vec<f64>,
    fwd: Vec<f64>,
    bwd: Vec<f64>,
    fence: Vec<f64>,
    head: Vec<f64>,
    c_in: Vec<f64>,
    c_out: Vec<f64>,
    d_in: Vec<f64>,
    d_out: Vec<f64>,
    l_in: Vec<f64>,
    l_out: Vec<f64>,
    l_head: Vec<f64>,
    span_valid: Vec<bool>,
    span_norm: Vec<f64>,
    span_stats: PnStats,
    arc_valid: Vec<bool>,
    arc_norm: Vec<f64>,
    arc_stats: PnStats,
    scheme: LabelScheme,
}

impl Forward {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Fencepost vectors, `(n + 1) x 2 hidden`.
    pub fn fenceposts(&self) -> &[f64] {
        &self.fence
    }

    /// Token vectors, `n x 2 hidden`.
    pub fn token_reprs(&self) -> &[f64] {
        &self.head
    }

    /// Normalized span and arc scores.
    pub fn scores(&self) -> ScoreSet {
        ScoreSet::from_parts(
            self.n,
            self.scheme,
            self.span_norm.clone(),
            self.arc_norm.clone(),
        )
        .expect("forward pass builds consistent shapes")
    }
}

/// Gradient of the loss with respect to the label scores of one span.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrad {
    pub start: usize,
    pub end: usize,
    /// `(head, d loss / d scores)` per queried head.
    pub heads: Vec<(usize, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub struct Scorer {
    pub params: Params,
    scheme: LabelScheme,
}

impl Scorer {
    pub fn new(params: Params, scheme: LabelScheme) -> Result<Self> {
        params.dims().validate()?;
        if params.dims().span_channels != scheme.channels() {
            return Err(Error::Shape(format!(
                "scorer has {} span channels, scheme needs {}",
                params.dims().span_channels,
                scheme.channels()
            )));
        }
        Ok(Scorer { params, scheme })
    }

    pub fn dims(&self) -> &ScorerDims {
        self.params.dims()
    }

    pub fn scheme(&self) -> LabelScheme {
        self.scheme
    }

    /// Runs the encoder and the span/arc heads.
    pub fn forward(&self, ids: &[usize]) -> Result<Forward> {
        let d = self.dims();
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = ids.iter().find(|&&t| t >= d.vocab) {
            return Err(Error::Parameter(format!(
                "token id {bad} outside vocabulary of {}",
                d.vocab
            )));
        }
        let (w, h, f) = (d.window, d.hidden, d.fence_dim());
        let p = &self.params;
        let m = n + 2;
        let mut padded = vec![PAD; w];
        padded.push(BOS);
        padded.extend_from_slice(ids);
        padded.push(EOS);
        padded.extend(std::iter::repeat_n(PAD, w));

        let emb = p.get(Tensor::Emb);
        let win = (2 * w + 1) * d.d_emb;
        let mut input = vec![0.0; win];
        let mut hidden = vec![0.0; m * h];
        let mut fwd = vec![0.0; m * h];
        let mut bwd = vec![0.0; m * h];
        for t in 0..m {
            for (slot, &id) in padded[t..t + 2 * w + 1].iter().enumerate() {
                input[slot * d.d_emb..(slot + 1) * d.d_emb]
                    .copy_from_slice(&emb[id * d.d_emb..(id + 1) * d.d_emb]);
            }
            let hrow = &mut hidden[t * h..(t + 1) * h];
            affine_tanh(p.get(Tensor::MixW), p.get(Tensor::MixB), &input, hrow);
            let hrow = &hidden[t * h..(t + 1) * h];
            affine_tanh(
                p.get(Tensor::FwdW),
                p.get(Tensor::FwdB),
                hrow,
                &mut fwd[t * h..(t + 1) * h],
            );
            affine_tanh(
                p.get(Tensor::BwdW),
                p.get(Tensor::BwdB),
                hrow,
                &mut bwd[t * h..(t + 1) * h],
            );
        }
        let mut fence = vec![0.0; (n + 1) * f];
        for k in 0..=n {
            fence[k * f..k * f + h].copy_from_slice(&fwd[k * h..(k + 1) * h]);
            fence[k * f + h..(k + 1) * f].copy_from_slice(&bwd[(k + 1) * h..(k + 2) * h]);
        }
        let mut head = vec![0.0; n * f];
        for t in 0..n {
            head[t * f..t * f + h].copy_from_slice(&fwd[(t + 1) * h..(t + 2) * h]);
            head[t * f + h..(t + 1) * f].copy_from_slice(&bwd[(t + 1) * h..(t + 2) * h]);
        }
        let proj = |wt: Tensor, bt: Tensor, rows: &[f64], count: usize, out_dim: usize| {
            let mut out = vec![0.0; count * out_dim];
            for r in 0..count {
                affine_tanh(
                    p.get(wt),
                    p.get(bt),
                    &rows[r * f..(r + 1) * f],
                    &mut out[r * out_dim..(r + 1) * out_dim],
                );
            }
            out
        };
        let c_in = proj(Tensor::CInW, Tensor::CInB, &fence, n + 1, d.k);
        let c_out = proj(Tensor::COutW, Tensor::COutB, &fence, n + 1, d.k);
        let d_in = proj(Tensor::DInW, Tensor::DInB, &head, n, d.k);
        let d_out = proj(Tensor::DOutW, Tensor::DOutB, &head, n, d.k);
        let l_in = proj(Tensor::LInW, Tensor::LInB, &fence, n + 1, d.k_label);
        let l_out = proj(Tensor::LOutW, Tensor::LOutB, &fence, n + 1, d.k_label);
        let l_head = proj(Tensor::LHeadW, Tensor::LHeadB, &head, n, d.k_label);

        let (span_raw, span_valid) = self.span_biaffine(n, &c_in, &c_out);
        let (span_norm, span_stats) = potential_normalize(&span_raw, &span_valid)?;
        let (arc_raw, arc_valid) = self.arc_biaffine(n, &d_in, &d_out);
        let (arc_norm, arc_stats) = potential_normalize(&arc_raw, &arc_valid)?;

        Ok(Forward {
            n,
            ids: padded,
            hidden,
            fwd,
            bwd,
            fence,
            head,
            c_in,
            c_out,
            d_in,
            d_out,
            l_in,
            l_out,
            l_head,
            span_valid,
            span_norm,
            span_stats,
            arc_valid,
            arc_norm,
            arc_stats,
            scheme: self.scheme,
        })
    }

    fn span_biaffine(&self, n: usize, c_in: &[f64], c_out: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let d = self.dims();
        let (k, ch) = (d.k, d.span_channels);
        let wc = self.params.get(Tensor::SpanW);
        let mut raw = vec![0.0; n * n * ch];
        let mut valid = vec![false; n * n * ch];
        let mut xw = vec![0.0; k + 1];
        for i in 0..n {
            let x = &c_in[i * k..(i + 1) * k];
            for c in 0..ch {
                left_contract(
                    &wc[c * (k + 1) * (k + 1)..(c + 1) * (k + 1) * (k + 1)],
                    x,
                    &mut xw,
                );
                for j in i..n {
                    let y = &c_out[(j + 1) * k..(j + 2) * k];
                    let at = (i * n + j) * ch + c;
                    raw[at] = dot_aug(&xw, y);
                    valid[at] = true;
                }
            }
        }
        (raw, valid)
    }

    fn arc_biaffine(&self, n: usize, d_in: &[f64], d_out: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let k = self.dims().k;
        let wd = self.params.get(Tensor::ArcW);
        let root = self.params.get(Tensor::RootV);
        let mut raw = vec![0.0; (n + 1) * n];
        let mut valid = vec![false; (n + 1) * n];
        let mut xw = vec![0.0; k + 1];
        for parent in 0..n {
            left_contract(wd, &d_in[parent * k..(parent + 1) * k], &mut xw);
            for child in (0..n).filter(|&c| c != parent) {
                raw[parent * n + child] = dot_aug(&xw, &d_out[child * k..(child + 1) * k]);
                valid[parent * n + child] = true;
            }
        }
        for child in 0..n {
            raw[n * n + child] = dot_aug(root, &d_out[child * k..(child + 1) * k]);
            valid[n * n + child] = true;
        }
        (raw, valid)
    }

    /// Per-class partial contraction `B_l[c] = sum_ab x_a y_b T_l[a, b, c]`
    /// for span `(i, j)`.
    fn label_contract(&self, fw: &Forward, i: usize, j: usize) -> Vec<Vec<f64>> {
        let d = self.dims();
        let kl = d.k_label;
        let a1 = kl + 1;
        let t = self.params.get(Tensor::LabelT);
        let x = aug(&fw.l_in[i * kl..(i + 1) * kl]);
        let y = aug(&fw.l_out[(j + 1) * kl..(j + 2) * kl]);
        let mut out = Vec::with_capacity(d.label_classes);
        let mut tmp = vec![0.0; a1 * a1];
        for l in 0..d.label_classes {
            let tl = &t[l * a1 * a1 * a1..(l + 1) * a1 * a1 * a1];
            tmp.iter_mut().for_each(|v| *v = 0.0);
            for (a, &xa) in x.iter().enumerate() {
                axpy(xa, &tl[a * a1 * a1..(a + 1) * a1 * a1], &mut tmp);
            }
            let mut b = vec![0.0; a1];
            for (bi, &yb) in y.iter().enumerate() {
                axpy(yb, &tmp[bi * a1..(bi + 1) * a1], &mut b);
            }
            out.push(b);
        }
        out
    }

    /// Label scores of span `(i, j)` for each requested head.
    pub fn label_scores(
        &self,
        fw: &Forward,
        i: usize,
        j: usize,
        heads: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        if i > j || j >= fw.n {
            return Err(Error::Parameter(format!(
                "span ({i}, {j}) invalid for {} tokens",
                fw.n
            )));
        }
        if let Some(h) = heads.iter().find(|&&h| h < i || h > j) {
            return Err(Error::Parameter(format!(
                "head {h} outside span ({i}, {j})"
            )));
        }
        let kl = self.dims().k_label;
        let b = self.label_contract(fw, i, j);
        Ok(heads
            .iter()
            .map(|&h| {
                let z = &fw.l_head[h * kl..(h + 1) * kl];
                b.iter().map(|bl| dot_aug(bl, z)).collect()
            })
            .collect())
    }

    /// Label scores of span `(i, j)` with head `h`.
    pub fn score_label(&self, fw: &Forward, i: usize, j: usize, h: usize) -> Result<Vec<f64>> {
        Ok(self.label_scores(fw, i, j, &[h])?.remove(0))
    }

    /// Reverse pass: accumulates parameter gradients into `grads`.
    ///
    /// `d_span` and `d_arc` are gradients with respect to the normalized
    /// scores (laid out like [`ScoreSet`]); `labels` holds label-score
    /// gradients.
    pub fn backward(
        &self,
        fw: &Forward,
        d_span: &[f64],
        d_arc: &[f64],
        labels: &[LabelGrad],
        grads: &mut Params,
    ) -> Result<()> {
        let d = self.dims().clone();
        if grads.dims() != &d {
            return Err(Error::Shape(
                "gradient buffer has a different layout".into(),
            ));
        }
        let n = fw.n;
        if d_span.len() != fw.span_norm.len() || d_arc.len() != fw.arc_norm.len() {
            return Err(Error::Shape(
                "score gradients do not match the forward pass".into(),
            ));
        }
        let (k, kl, f, h) = (d.k, d.k_label, d.fence_dim(), d.hidden);
        let p = &self.params;

        let g_span =
            potential_normalize_backward(d_span, &fw.span_norm, &fw.span_valid, &fw.span_stats);
        let g_arc = potential_normalize_backward(d_arc, &fw.arc_norm, &fw.arc_valid, &fw.arc_stats);

        let mut dc_in = vec![0.0; (n + 1) * k];
        let mut dc_out = vec![0.0; (n + 1) * k];
        let mut dd_in = vec![0.0; n * k];
        let mut dd_out = vec![0.0; n * k];
        let mut dl_in = vec![0.0; (n + 1) * kl];
        let mut dl_out = vec![0.0; (n + 1) * kl];
        let mut dl_head = vec![0.0; n * kl];

        // span biaffine
        let ch = d.span_channels;
        let a1 = k + 1;
        {
            let wc = p.get(Tensor::SpanW);
            let mut dwc = vec![0.0; wc.len()];
            let mut u = vec![0.0; a1];
            let mut v = vec![vec![0.0; a1]; n + 1];
            for c in 0..ch {
                let wm = &wc[c * a1 * a1..(c + 1) * a1 * a1];
                let dwm = &mut dwc[c * a1 * a1..(c + 1) * a1 * a1];
                v.iter_mut()
                    .for_each(|r| r.iter_mut().for_each(|x| *x = 0.0));
                for i in 0..n {
                    let x = aug(&fw.c_in[i * k..(i + 1) * k]);
                    u.iter_mut().for_each(|x| *x = 0.0);
                    let mut any = false;
                    for j in i..n {
                        let g = g_span[(i * n + j) * ch + c];
                        if g == 0.0 {
                            continue;
                        }
                        any = true;
                        let y = &fw.c_out[(j + 1) * k..(j + 2) * k];
                        axpy(g, y, &mut u[..k]);
                        u[k] += g;
                        axpy(g, &x, &mut v[j + 1]);
                    }
                    if !any {
                        continue;
                    }
                    outer_add(&x, &u, dwm);
                    let dx = matvec(wm, &u, a1, a1);
                    axpy(1.0, &dx[..k], &mut dc_in[i * k..(i + 1) * k]);
                }
                for q in 1..=n {
                    let dy = matvec_t(wm, &v[q], a1, a1);
                    axpy(1.0, &dy[..k], &mut dc_out[q * k..(q + 1) * k]);
                }
            }
            axpy(1.0, &dwc, grads.get_mut(Tensor::SpanW));
        }

        // arc biaffine and root vector
        {
            let wd = p.get(Tensor::ArcW);
            let mut dwd = vec![0.0; wd.len()];
            let mut v = vec![vec![0.0; a1]; n];
            for parent in 0..n {
                let x = aug(&fw.d_in[parent * k..(parent + 1) * k]);
                let mut u = vec![0.0; a1];
                let mut any = false;
                for child in (0..n).filter(|&c| c != parent) {
                    let g = g_arc[parent * n + child];
                    if g == 0.0 {
                        continue;
                    }
                    any = true;
                    axpy(g, &fw.d_out[child * k..(child + 1) * k], &mut u[..k]);
                    u[k] += g;
                    axpy(g, &x, &mut v[child]);
                }
                if !any {
                    continue;
                }
                outer_add(&x, &u, &mut dwd);
                let dx = matvec(wd, &u, a1, a1);
                axpy(1.0, &dx[..k], &mut dd_in[parent * k..(parent + 1) * k]);
            }
            for child in 0..n {
                let dy = matvec_t(wd, &v[child], a1, a1);
                axpy(1.0, &dy[..k], &mut dd_out[child * k..(child + 1) * k]);
            }
            axpy(1.0, &dwd, grads.get_mut(Tensor::ArcW));
            let root = p.get(Tensor::RootV);
            let mut droot = vec![0.0; a1];
            for child in 0..n {
                let g = g_arc[n * n + child];
                if g == 0.0 {
                    continue;
                }
                axpy(g, &fw.d_out[child * k..(child + 1) * k], &mut droot[..k]);
                droot[k] += g;
                axpy(g, &root[..k], &mut dd_out[child * k..(child + 1) * k]);
            }
            axpy(1.0, &droot, grads.get_mut(Tensor::RootV));
        }

        // triaffine labels
        if !labels.is_empty() {
            let b1 = kl + 1;
            let cube = b1 * b1 * b1;
            let t = p.get(Tensor::LabelT);
            let mut dt = vec![0.0; t.len()];
            for lg in labels {
                let (i, j) = (lg.start, lg.end);
                if i > j || j >= n {
                    return Err(Error::Parameter(format!(
                        "label gradient for invalid span ({i}, {j})"
                    )));
                }
                let x = aug(&fw.l_in[i * kl..(i + 1) * kl]);
                let y = aug(&fw.l_out[(j + 1) * kl..(j + 2) * kl]);
                let b = self.label_contract(fw, i, j);
                let mut dx = vec![0.0; b1];
                let mut dy = vec![0.0; b1];
                for l in 0..d.label_classes {
                    let mut zsum = vec![0.0; b1];
                    for (head, g) in &lg.heads {
                        if *head < i || *head > j || g.len() != d.label_classes {
                            return Err(Error::Parameter(format!(
                                "bad label gradient at head {head}"
                            )));
                        }
                        let gl = g[l];
                        if gl == 0.0 {
                            continue;
                        }
                        axpy(gl, &fw.l_head[head * kl..(head + 1) * kl], &mut zsum[..kl]);
                        zsum[kl] += gl;
                        axpy(gl, &b[l][..kl], &mut dl_head[head * kl..(head + 1) * kl]);
                    }
                    if zsum.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let tl = &t[l * cube..(l + 1) * cube];
                    let dtl = &mut dt[l * cube..(l + 1) * cube];
                    let mut tz = vec![0.0; b1 * b1];
                    for a in 0..b1 {
                        for bi in 0..b1 {
                            let row = &tl[(a * b1 + bi) * b1..(a * b1 + bi + 1) * b1];
                            tz[a * b1 + bi] = dot(row, &zsum);
                            let s = x[a] * y[bi];
                            if s != 0.0 {
                                axpy(
                                    s,
                                    &zsum,
                                    &mut dtl[(a * b1 + bi) * b1..(a * b1 + bi + 1) * b1],
                                );
                            }
                        }
                    }
                    for a in 0..b1 {
                        for bi in 0..b1 {
                            dx[a] += tz[a * b1 + bi] * y[bi];
                            dy[bi] += x[a] * tz[a * b1 + bi];
                        }
                    }
                }
                axpy(1.0, &dx[..kl], &mut dl_in[i * kl..(i + 1) * kl]);
                axpy(1.0, &dy[..kl], &mut dl_out[(j + 1) * kl..(j + 2) * kl]);
            }
            axpy(1.0, &dt, grads.get_mut(Tensor::LabelT));
        }

        // projections back to fenceposts and token vectors
        let mut dfence = vec![0.0; (n + 1) * f];
        let mut dhead = vec![0.0; n * f];
        let projections: [Projection<'_>; 7] = [
            (Tensor::CInW, Tensor::CInB, &fw.c_in, &dc_in, true, k),
            (Tensor::COutW, Tensor::COutB, &fw.c_out, &dc_out, true, k),
            (Tensor::DInW, Tensor::DInB, &fw.d_in, &dd_in, false, k),
            (Tensor::DOutW, Tensor::DOutB, &fw.d_out, &dd_out, false, k),
            (Tensor::LInW, Tensor::LInB, &fw.l_in, &dl_in, true, kl),
            (Tensor::LOutW, Tensor::LOutB, &fw.l_out, &dl_out, true, kl),
            (
                Tensor::LHeadW,
                Tensor::LHeadB,
                &fw.l_head,
                &dl_head,
                false,
                kl,
            ),
        ];
        for (wt, bt, out, dout, on_fence, od) in projections {
            let (src, dsrc, rows) = if on_fence {
                (&fw.fence, &mut dfence, n + 1)
            } else {
                (&fw.head, &mut dhead, n)
            };
            let mut dw = vec![0.0; od * f];
            let mut db = vec![0.0; od];
            for r in 0..rows {
                let dy = &dout[r * od..(r + 1) * od];
                if dy.iter().all(|v| *v == 0.0) {
                    continue;
                }
                affine_tanh_backward(
                    p.get(wt),
                    &src[r * f..(r + 1) * f],
                    &out[r * od..(r + 1) * od],
                    dy,
                    &mut dw,
                    &mut db,
                    &mut dsrc[r * f..(r + 1) * f],
                );
            }
            axpy(1.0, &dw, grads.get_mut(wt));
            axpy(1.0, &db, grads.get_mut(bt));
        }

        // fenceposts and token vectors back to the directional outputs
        let m = n + 2;
        let mut dfwd = vec![0.0; m * h];
        let mut dbwd = vec![0.0; m * h];
        for q in 0..=n {
            axpy(
                1.0,
                &dfence[q * f..q * f + h],
                &mut dfwd[q * h..(q + 1) * h],
            );
            axpy(
                1.0,
                &dfence[q * f + h..(q + 1) * f],
                &mut dbwd[(q + 1) * h..(q + 2) * h],
            );
        }
        for t in 0..n {
            axpy(
                1.0,
                &dhead[t * f..t * f + h],
                &mut dfwd[(t + 1) * h..(t + 2) * h],
            );
            axpy(
                1.0,
                &dhead[t * f + h..(t + 1) * f],
                &mut dbwd[(t + 1) * h..(t + 2) * h],
            );
        }

        let mut dhidden = vec![0.0; m * h];
        for (wt, bt, out, dout) in [
            (Tensor::FwdW, Tensor::FwdB, &fw.fwd, &dfwd),
            (Tensor::BwdW, Tensor::BwdB, &fw.bwd, &dbwd),
        ] {
            let mut dw = vec![0.0; h * h];
            let mut db = vec![0.0; h];
            for t in 0..m {
                affine_tanh_backward(
                    p.get(wt),
                    &fw.hidden[t * h..(t + 1) * h],
                    &out[t * h..(t + 1) * h],
                    &dout[t * h..(t + 1) * h],
                    &mut dw,
                    &mut db,
                    &mut dhidden[t * h..(t + 1) * h],
                );
            }
            axpy(1.0, &dw, grads.get_mut(wt));
            axpy(1.0, &db, grads.get_mut(bt));
        }

        let (w, de) = (d.window, d.d_emb);
        let win = (2 * w + 1) * de;
        let emb = p.get(Tensor::Emb);
        let mut dmix = vec![0.0; h * win];
        let mut dmixb = vec![0.0; h];
        let mut demb = vec![0.0; emb.len()];
        let mut input = vec![0.0; win];
        let mut dinput = vec![0.0; win];
        for t in 0..m {
            for (slot, &id) in fw.ids[t..t + 2 * w + 1].iter().enumerate() {
                input[slot * de..(slot + 1) * de].copy_from_slice(&emb[id * de..(id + 1) * de]);
            }
            dinput.iter_mut().for_each(|v| *v = 0.0);
            affine_tanh_backward(
                p.get(Tensor::MixW),
                &input,
                &fw.hidden[t * h..(t + 1) * h],
                &dhidden[t * h..(t + 1) * h],
                &mut dmix,
                &mut dmixb,
                &mut dinput,
            );
            for (slot, &id) in fw.ids[t..t + 2 * w + 1].iter().enumerate() {
                axpy(
                    1.0,
                    &dinput[slot * de..(slot + 1) * de],
                    &mut demb[id * de..(id + 1) * de],
                );
            }
        }
        axpy(1.0, &dmix, grads.get_mut(Tensor::MixW));
        axpy(1.0, &dmixb, grads.get_mut(Tensor::MixB));
        axpy(1.0, &demb, grads.get_mut(Tensor::Emb));
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a . [b; 1]` with `a` one longer than `b`.
#[inline]
fn dot_aug(a: &[f64], b: &[f64]) -> f64 {
    dot(&a[..b.len()], b) + a[b.len()]
}

#[inline]
fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += s * b;
    }
}

fn aug(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

/// `out = [x; 1]^T W` for a square `W` of side `x.len() + 1`.
fn left_contract(w: &[f64], x: &[f64], out: &mut [f64]) {
    let a1 = x.len() + 1;
    out.copy_from_slice(&w[x.len() * a1..a1 * a1]);
    for (a, &xa) in x.iter().enumerate() {
        axpy(xa, &w[a * a1..(a + 1) * a1], out);
    }
}

/// `W u` for a row-major `rows x cols` matrix.
fn matvec(w: &[f64], u: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| dot(&w[r * cols..(r + 1) * cols], u))
        .collect()
}

/// `W^T v` for a row-major `rows x cols` matrix.
fn matvec_t(w: &[f64], v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        if v[r] != 0.0 {
            axpy(v[r], &w[r * cols..(r + 1) * cols], &mut out);
        }
    }
    out
}

/// `M += x u^T`.
fn outer_add(x: &[f64], u: &[f64], m: &mut [f64]) {
    let cols = u.len();
    for (a, &xa) in x.iter().enumerate() {
        if xa != 0.0 {
            axpy(xa, u, &mut m[a * cols..(a + 1) * cols]);
        }
    }
}

/// `out = tanh(W x + b)`.
fn affine_tanh(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = (dot(&w[r * cols..(r + 1) * cols], x) + b[r]).tanh();
    }
}

/// Reverse of [`affine_tanh`] given its output `y` and `dL/dy`.
fn affine_tanh_backward(
    w: &[f64],
    x: &[f64],
    y: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let cols = x.len();
    for r in 0..y.len() {
        let g = dy[r] * (1.0 - y[r] * y[r]);
        if g == 0.0 {
            continue;
        }
        db[r] += g;
        axpy(g, x, &mut dw[r * cols..(r + 1) * cols]);
        axpy(g, &w[r * cols..(r + 1) * cols], dx);
    }
}

//! Layers over row-major token matrices. Every forward returns what its
//! backward needs; backward accumulates into a flat gradient buffer laid out
//! like the parameters.

use crate::layout::{Init, ParamLayout};
use crate::scalar::{gemm, Scalar};

/// `y = x W + b` with `W` stored `inp x out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, out: usize) -> Self {
        let w = layout.push(format!("{name}.w"), inp, out, Init::Uniform { fan_in: inp });
        let b = layout.push(format!("{name}.b"), 1, out, Init::Uniform { fan_in: inp });
        Self { w, b, inp, out }
    }

    fn weight<'a, R>(&self, p: &'a [R]) -> &'a [R] {
        &p[self.w..self.w + self.inp * self.out]
    }

    pub fn forward<R: Scalar>(&self, p: &[R], x: &[R], n: usize) -> Vec<R> {
        let bias = &p[self.b..self.b + self.out];
        let mut y = Vec::with_capacity(n * self.out);
        for _ in 0..n {
            y.extend_from_slice(bias);
        }
        gemm(
            n,
            self.inp,
            self.out,
            x,
            false,
            self.weight(p),
            false,
            &mut y,
            true,
        );
        y
    }

    /// Accumulates `dW`, `db`; returns `dx` if `want_dx`.
    pub fn backward<R: Scalar>(
        &self,
        p: &[R],
        g: &mut [R],
        x: &[R],
        n: usize,
        dy: &[R],
        want_dx: bool,
    ) -> Option<Vec<R>> {
        gemm(
            self.inp,
            n,
            self.out,
            x,
            true,
            dy,
            false,
            &mut g[self.w..self.w + self.inp * self.out],
            true,
        );
        let gb = &mut g[self.b..self.b + self.out];
        for row in dy.chunks_exact(self.out) {
            for (a, d) in gb.iter_mut().zip(row) {
                *a += *d;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![R::zero(); n * self.inp];
            gemm(
                n,
                self.out,
                self.inp,
                dy,
                false,
                self.weight(p),
                true,
                &mut dx,
                false,
            );
            dx
        })
    }
}

pub fn relu<R: Scalar>(x: &mut [R]) {
    for v in x {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
}

/// Zeroes `dy` where the activation output `y` was clipped.
pub fn relu_backward<R: Scalar>(y: &[R], dy: &mut [R]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= R::zero() {
            *d = R::zero();
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: usize,
    pub shift: usize,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct LnCache<R> {
    xhat: Vec<R>,
    rstd: Vec<R>,
}

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        let gain = layout.push(format!("{name}.gain"), 1, dim, Init::Ones);
        let shift = layout.push(format!("{name}.shift"), 1, dim, Init::Zeros);
        Self { gain, shift, dim }
    }

    pub fn forward<R: Scalar>(&self, p: &[R], x: &[R]) -> (Vec<R>, LnCache<R>) {
        let d = self.dim;
        let n = x.len() / d;
        let dn = R::of_usize(d);
        let gain = &p[self.gain..self.gain + d];
        let shift = &p[self.shift..self.shift + d];
        let mut y = vec![R::zero(); x.len()];
        let mut xhat = vec![R::zero(); x.len()];
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<R>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / dn;
            let r = R::one() / (var + R::lit(LN_EPS)).sqrt();
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                y[i * d + j] = gain[j] * h + shift[j];
            }
            rstd.push(r);
        }
        (y, LnCache { xhat, rstd })
    }

    pub fn backward<R: Scalar>(&self, p: &[R], g: &mut [R], c: &LnCache<R>, dy: &[R]) -> Vec<R> {
        let d = self.dim;
        let dn = R::of_usize(d);
        let mut dx = vec![R::zero(); dy.len()];
        let mut dxhat = vec![R::zero(); d];
        for (i, &r) in c.rstd.iter().enumerate() {
            let xh = &c.xhat[i * d..(i + 1) * d];
            let dyr = &dy[i * d..(i + 1) * d];
            let (mut sum, mut dot) = (R::zero(), R::zero());
            for j in 0..d {
                g[self.gain + j] += dyr[j] * xh[j];
                g[self.shift + j] += dyr[j];
                dxhat[j] = dyr[j] * p[self.gain + j];
                sum += dxhat[j];
                dot += dxhat[j] * xh[j];
            }
            for j in 0..d {
                dx[i * d + j] = r / dn * (dn * dxhat[j] - sum - xh[j] * dot);
            }
        }
        dx
    }
}

/// Pre-norm residual block `y = x + W2 relu(W1 LN(x))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResMlp {
    pub ln: LayerNorm,
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Clone, Debug)]
pub struct ResMlpCache<R> {
    ln: LnCache<R>,
    xn: Vec<R>,
    a: Vec<R>,
}

impl ResMlp {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            ln: LayerNorm::new(layout, &format!("{name}.ln"), dim),
            fc1: Dense::new(layout, &format!("{name}.fc1"), dim, hidden),
            fc2: Dense::new(layout, &format!("{name}.fc2"), hidden, dim),
        }
    }

    pub fn forward<R: Scalar>(&self, p: &[R], x: &[R]) -> (Vec<R>, ResMlpCache<R>) {
        let n = x.len() / self.ln.dim;
        let (xn, ln) = self.ln.forward(p, x);
        let mut a = self.fc1.forward(p, &xn, n);
        relu(&mut a);
        let mut y = self.fc2.forward(p, &a, n);
        for (o, &i) in y.iter_mut().zip(x) {
            *o += i;
        }
        (y, ResMlpCache { ln, xn, a })
    }

    pub fn backward<R: Scalar>(
        &self,
        p: &[R],
        g: &mut [R],
        c: &ResMlpCache<R>,
        dy: &[R],
    ) -> Vec<R> {
        let n = dy.len() / self.ln.dim;
        let mut da = self.fc2.backward(p, g, &c.a, n, dy, true).unwrap();
        relu_backward(&c.a, &mut da);
        let dxn = self.fc1.backward(p, g, &c.xn, n, &da, true).unwrap();
        let mut dx = self.ln.backward(p, g, &c.ln, &dxn);
        for (o, &d) in dx.iter_mut().zip(dy) {
            *o += d;
        }
        dx
    }
}

/// Token counts of a packed ragged batch: row `b` owns `offsets[b]..offsets[b + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ragged {
    pub offsets: Vec<usize>,
}

impl Ragged {
    pub fn from_counts(counts: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for c in counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        Self { offsets }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    pub fn count(&self, b: usize) -> usize {
        self.offsets[b + 1] - self.offsets[b]
    }
}

/// Multi-head attention from packed queries onto packed keys of the same rows.
/// Rows without keys produce a zero output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttnCache<R> {
    q: Vec<R>,
    k: Vec<R>,
    v: Vec<R>,
    /// Row-major `[row][head][query][key]` softmax weights.
    probs: Vec<R>,
    probs_off: Vec<usize>,
    ctx: Vec<R>,
}

impl Attention {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        dim: usize,
        kv_in: usize,
        heads: usize,
    ) -> Self {
        Self {
            q: Dense::new(layout, &format!("{name}.q"), dim, dim),
            k: Dense::new(layout, &format!("{name}.k"), kv_in, dim),
            v: Dense::new(layout, &format!("{name}.v"), kv_in, dim),
            o: Dense::new(layout, &format!("{name}.o"), dim, dim),
            heads,
        }
    }

    fn dim(&self) -> usize {
        self.q.out
    }

    pub fn forward<R: Scalar>(
        &self,
        p: &[R],
        xq: &[R],
        qr: &Ragged,
        kv: &[R],
        kr: &Ragged,
    ) -> (Vec<R>, AttnCache<R>) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = R::one() / R::of_usize(dh).sqrt();
        let q = self.q.forward(p, xq, qr.total());
        let k = self.k.forward(p, kv, kr.total());
        let v = self.v.forward(p, kv, kr.total());
        let mut ctx = vec![R::zero(); qr.total() * d];
        let mut probs = Vec::new();
        let mut probs_off = Vec::with_capacity(qr.rows() + 1);
        let mut scores = Vec::new();
        for b in 0..qr.rows() {
            probs_off.push(probs.len());
            let nk = kr.count(b);
            if nk == 0 {
                continue;
            }
            let (k0, q0) = (kr.offsets[b], qr.offsets[b]);
            for h in 0..self.heads {
                let c0 = h * dh;
                for qi in q0..qr.offsets[b + 1] {
                    let qv = &q[qi * d + c0..qi * d + c0 + dh];
                    scores.clear();
                    for kj in k0..k0 + nk {
                        let kvec = &k[kj * d + c0..kj * d + c0 + dh];
                        let s: R = qv.iter().zip(kvec).map(|(&a, &c)| a * c).sum();
                        scores.push(s * scale);
                    }
                    let m = scores.iter().copied().fold(R::neg_infinity(), R::max);
                    let mut z = R::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - m).exp();
                        z += *s;
                    }
                    let out = &mut ctx[qi * d + c0..qi * d + c0 + dh];
                    for (j, s) in scores.iter().enumerate() {
                        let w = *s / z;
                        probs.push(w);
                        let vv = &v[(k0 + j) * d + c0..(k0 + j) * d + c0 + dh];
                        for (o, &x) in out.iter_mut().zip(vv) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        probs_off.push(probs.len());
        let mut y = self.o.forward(p, &ctx, qr.total());
        for b in 0..qr.rows() {
            if kr.count(b) == 0 {
                y[qr.offsets[b] * d..qr.offsets[b + 1] * d].fill(R::zero());
            }
        }
        (
            y,
            AttnCache {
                q,
                k,
                v,
                probs,
                probs_off,
                ctx,
            },
        )
    }

    /// Returns `(d xq, d kv)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<R: Scalar>(
        &self,
        p: &[R],
        g: &mut [R],
        c: &AttnCache<R>,
        xq: &[R],
        qr: &Ragged,
        kv: &[R],
        kr: &Ragged,
        dy: &[R],
    ) -> (Vec<R>, Vec<R>) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = R::one() / R::of_usize(dh).sqrt();
        let mut dy = dy.to_vec();
        for b in 0..qr.rows() {
            if kr.count(b) == 0 {
                dy[qr.offsets[b] * d..qr.offsets[b + 1] * d].fill(R::zero());
            }
        }
        let dctx = self
            .o
            .backward(p, g, &c.ctx, qr.total(), &dy, true)
            .unwrap();
        let mut dq = vec![R::zero(); c.q.len()];
        let mut dk = vec![R::zero(); c.k.len()];
        let mut dv = vec![R::zero(); c.v.len()];
        let mut dp = Vec::new();
        for b in 0..qr.rows() {
            let nk = kr.count(b);
            if nk == 0 {
                continue;
            }
            let (k0, q0) = (kr.offsets[b], qr.offsets[b]);
            let nq = qr.count(b);
            for h in 0..self.heads {
                let c0 = h * dh;
                for (qi_local, qi) in (q0..q0 + nq).enumerate() {
                    let base = c.probs_off[b] + (h * nq + qi_local) * nk;
                    let pr = &c.probs[base..base + nk];
                    let dctx_row = &dctx[qi * d + c0..qi * d + c0 + dh];
                    dp.clear();
                    for (j, &w) in pr.iter().enumerate() {
                        let kj = k0 + j;
                        let vv = &c.v[kj * d + c0..kj * d + c0 + dh];
                        dp.push(dctx_row.iter().zip(vv).map(|(&a, &x)| a * x).sum::<R>());
                        for (o, &a) in dv[kj * d + c0..kj * d + c0 + dh].iter_mut().zip(dctx_row) {
                            *o += w * a;
                        }
                    }
                    let s: R = pr.iter().zip(&dp).map(|(&w, &x)| w * x).sum();
                    for (j, &w) in pr.iter().enumerate() {
                        let ds = w * (dp[j] - s) * scale;
                        if ds == R::zero() {
                            continue;
                        }
                        let kj = k0 + j;
                        for t in 0..dh {
                            dq[qi * d + c0 + t] += ds * c.k[kj * d + c0 + t];
                            dk[kj * d + c0 + t] += ds * c.q[qi * d + c0 + t];
                        }
                    }
                }
            }
        }
        let dxq = self.q.backward(p, g, xq, qr.total(), &dq, true).unwrap();
        let mut dkv = self.k.backward(p, g, kv, kr.total(), &dk, true).unwrap();
        let dkv_v = self.v.backward(p, g, kv, kr.total(), &dv, true).unwrap();
        for (a, b) in dkv.iter_mut().zip(dkv_v) {
            *a += b;
        }
        (dxq, dkv)
    }
}

/// `x1 = x + Attn(LN(x), ctx)`, `y = ResMlp(x1)`. In self mode the context is `LN(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnBlock {
    pub ln: LayerNorm,
    pub attn: Attention,
    pub mlp: ResMlp,
    pub self_attention: bool,
}

#[derive(Clone, Debug)]
pub struct AttnBlockCache<R> {
    ln: LnCache<R>,
    xn: Vec<R>,
    attn: AttnCache<R>,
    mlp: ResMlpCache<R>,
}

impl AttnBlock {
    pub fn new_self(layout: &mut ParamLayout, name: &str, dim: usize, heads: usize) -> Self {
        Self::build(layout, name, dim, dim, heads, true)
    }

    pub fn new_cross(
        layout: &mut ParamLayout,
        name: &str,
        dim: usize,
        kv_in: usize,
        heads: usize,
    ) -> Self {
        Self::build(layout, name, dim, kv_in, heads, false)
    }

    fn build(
        layout: &mut ParamLayout,
        name: &str,
        dim: usize,
        kv_in: usize,
        heads: usize,
        self_attention: bool,
    ) -> Self {
        Self {
            ln: LayerNorm::new(layout, &format!("{name}.ln"), dim),
            attn: Attention::new(layout, &format!("{name}.attn"), dim, kv_in, heads),
            mlp: ResMlp::new(layout, &format!("{name}.mlp"), dim, dim),
            self_attention,
        }
    }

    /// `ctx` is ignored in self mode.
    pub fn forward<R: Scalar>(
        &self,
        p: &[R],
        x: &[R],
        qr: &Ragged,
        ctx: Option<(&[R], &Ragged)>,
    ) -> (Vec<R>, AttnBlockCache<R>) {
        let (xn, ln) = self.ln.forward(p, x);
        let (kv, kr) = if self.self_attention {
            (&xn[..], qr)
        } else {
            ctx.expect("cross-attention needs a context")
        };
        let (a, attn) = self.attn.forward(p, &xn, qr, kv, kr);
        let x1: Vec<R> = x.iter().zip(&a).map(|(&u, &w)| u + w).collect();
        let (y, mlp) = self.mlp.forward(p, &x1);
        (y, AttnBlockCache { ln, xn, attn, mlp })
    }

    /// Returns `d x` and, in cross mode, `d ctx`.
    pub fn backward<R: Scalar>(
        &self,
        p: &[R],
        g: &mut [R],
        c: &AttnBlockCache<R>,
        qr: &Ragged,
        ctx: Option<(&[R], &Ragged)>,
        dy: &[R],
    ) -> (Vec<R>, Option<Vec<R>>) {
        let dx1 = self.mlp.backward(p, g, &c.mlp, dy);
        let (kv, kr) = if self.self_attention {
            (&c.xn[..], qr)
        } else {
            ctx.expect("cross-attention needs a context")
        };
        let (mut dxn, dkv) = self.attn.backward(p, g, &c.attn, &c.xn, qr, kv, kr, &dx1);
        let dctx = if self.self_attention {
            for (a, b) in dxn.iter_mut().zip(&dkv) {
                *a += *b;
            }
            None
        } else {
            Some(dkv)
        };
        let mut dx = self.ln.backward(p, g, &c.ln, &dxn);
        for (a, b) in dx.iter_mut().zip(&dx1) {
            *a += *b;
        }
        (dx, dctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Checks parameter and input gradients of `L = <w, f(p, x)>` by central differences.
    fn check<F, B>(layout: &ParamLayout, x: Vec<f64>, out_len: usize, f: F, back: B)
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64>,
        B: Fn(&[f64], &mut [f64], &[f64], &[f64]) -> Vec<f64>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = layout
            .init(3)
            .iter()
            .map(|v: &f64| v + rng.gen_range(-0.1..0.1))
            .collect();
        let w = rand_vec(&mut rng, out_len);
        let mut g = vec![0.0; p.len()];
        let dx = back(&p, &mut g, &x, &w);
        let h = 1e-5;
        let loss = |p: &[f64], x: &[f64]| dot(&w, &f(p, x));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3);
        for i in 0..p.len() {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[i] += h;
            pm[i] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            assert!(close(fd, g[i]), "param {i}: fd {fd} vs {}", g[i]);
        }
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
            assert!(close(fd, dx[i]), "input {i}: fd {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn dense_gradients() {
        let mut l = ParamLayout::default();
        let d = Dense::new(&mut l, "d", 4, 3);
        let x = rand_vec(&mut ChaCha8Rng::seed_from_u64(1), 5 * 4);
        check(
            &l,
            x,
            15,
            |p, x| d.forward(p, x, 5),
            |p, g, x, w| d.backward(p, g, x, 5, w, true).unwrap(),
        );
    }

    #[test]
    fn layer_norm_gradients() {
        let mut l = ParamLayout::default();
        let ln = LayerNorm::new(&mut l, "ln", 6);
        let x = rand_vec(&mut ChaCha8Rng::seed_from_u64(2), 3 * 6);
        check(
            &l,
            x,
            18,
            |p, x| ln.forward(p, x).0,
            |p, g, x, w| {
                let (_, c) = ln.forward(p, x);
                ln.backward(p, g, &c, w)
            },
        );
    }

    #[test]
    fn residual_gradients() {
        let mut l = ParamLayout::default();
        let r = ResMlp::new(&mut l, "r", 5, 7);
        let x = rand_vec(&mut ChaCha8Rng::seed_from_u64(3), 4 * 5);
        check(
            &l,
            x,
            20,
            |p, x| r.forward(p, x).0,
            |p, g, x, w| {
                let (_, c) = r.forward(p, x);
                r.backward(p, g, &c, w)
            },
        );
    }

    #[test]
    fn attention_gradients() {
        let mut l = ParamLayout::default();
        let a = Attention::new(&mut l, "a", 4, 3, 2);
        let qr = Ragged::from_counts([2, 1, 3]);
        let kr = Ragged::from_counts([3, 0, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kv = rand_vec(&mut rng, kr.total() * 3);
        let xq = rand_vec(&mut rng, qr.total() * 4);
        // queries and keys checked as one input vector
        let split = xq.len();
        let x: Vec<f64> = xq.iter().chain(&kv).copied().collect();
        check(
            &l,
            x,
            qr.total() * 4,
            |p, x| a.forward(p, &x[..split], &qr, &x[split..], &kr).0,
            |p, g, x, w| {
                let (_, c) = a.forward(p, &x[..split], &qr, &x[split..], &kr);
                let (dq, dk) = a.backward(p, g, &c, &x[..split], &qr, &x[split..], &kr, w);
                dq.into_iter().chain(dk).collect()
            },
        );
    }

    #[test]
    fn self_attention_block_gradients() {
        let mut l = ParamLayout::default();
        let blk = AttnBlock::new_self(&mut l, "s", 4, 2);
        let qr = Ragged::from_counts([3, 1]);
        let x = rand_vec(&mut ChaCha8Rng::seed_from_u64(6), qr.total() * 4);
        check(
            &l,
            x,
            qr.total() * 4,
            |p, x| blk.forward(p, x, &qr, None).0,
            |p, g, x, w| {
                let (_, c) = blk.forward(p, x, &qr, None);
                blk.backward(p, g, &c, &qr, None, w).0
            },
        );
    }

    #[test]
    fn cross_block_gradients() {
        let mut l = ParamLayout::default();
        let blk = AttnBlock::new_cross(&mut l, "c", 4, 3, 2);
        let qr = Ragged::from_counts([2, 2]);
        let kr = Ragged::from_counts([2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xq = rand_vec(&mut rng, qr.total() * 4);
        let kv = rand_vec(&mut rng, kr.total() * 3);
        let split = xq.len();
        let x: Vec<f64> = xq.iter().chain(&kv).copied().collect();
        check(
            &l,
            x,
            qr.total() * 4,
            |p, x| blk.forward(p, &x[..split], &qr, Some((&x[split..], &kr))).0,
            |p, g, x, w| {
                let (_, c) = blk.forward(p, &x[..split], &qr, Some((&x[split..], &kr)));
                let (dx, dc) = blk.backward(p, g, &c, &qr, Some((&x[split..], &kr)), w);
                dx.into_iter().chain(dc.unwrap()).collect()
            },
        );
    }

    #[test]
    fn keyless_rows_output_zero() {
        let mut l = ParamLayout::default();
        let a = Attention::new(&mut l, "a", 4, 3, 2);
        let p: Vec<f64> = l.init(1);
        let qr = Ragged::from_counts([2]);
        let kr = Ragged::from_counts([0]);
        let (y, _) = a.forward(&p, &[0.5; 8], &qr, &[], &kr);
        assert_eq!(y, vec![0.0; 8]);
    }
}

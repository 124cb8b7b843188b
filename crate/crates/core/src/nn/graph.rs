//! Eager tape: every op computes its value immediately and records what its
//! backward pass needs.

use crate::error::{Error, Result};

use super::tensor::{matmul_into, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Batch-norm normalization source.
#[derive(Clone, Debug)]
pub enum BnMode<'a, T> {
    /// Batch statistics; the biased batch mean/variance are recorded on the node.
    Train,
    /// Fixed statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

pub const BN_EPS: f64 = 1e-5;

struct GruCache<T> {
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    hh_n: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy { x: Var, lam: Var, idx: usize },
    StraightThrough(Var),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool, stats: Option<(Vec<T>, Vec<T>)> },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MaxPool { x: Var, argmax: Vec<u32> },
    BiGru { x: Var, p: [Var; 8], hidden: usize, cache: [GruCache<T>; 2] },
    Mse { pred: Var, target: Tensor<T> },
    Mean(Var),
    Sum(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { xs: Vec<Var>, widths: Vec<usize> },
    FramePool { x: Var, a: Tensor<T> },
    PoolStats { x: Var, w: Vec<T>, total: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Computation graph over `T`. Single-threaded; build one per forward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sig<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn im2col<T: Scalar>(x: &[T], ci: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut cols[((c * kh + ki) * kw + kj) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ki as isize - ph as isize;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * h + sy as usize) * w..][..w];
                    for (xx, d) in dst.iter_mut().enumerate() {
                        let sx = xx as isize + kj as isize - pw as isize;
                        *d = if sx < 0 || sx >= w as isize { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], ci: usize, h: usize, w: usize, kh: usize, kw: usize, dx: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &cols[((c * kh + ki) * kw + kj) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ki as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * h + sy as usize) * w..][..w];
                    for xx in 0..w {
                        let sx = xx as isize + kj as isize - pw as isize;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] = dst[sx as usize] + row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, mk: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape.clone(), data);
        let g = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(t, mk, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape.clone(), v.data.iter().map(|x| *x * c).collect());
        let g = self.requires_grad(a);
        self.push(t, Op::Scale(a, c), g)
    }

    /// `x · lam[idx]`, differentiable in both.
    pub fn scale_by(&mut self, x: Var, lam: Var, idx: usize) -> Result<Var> {
        let Some(&l) = self.value(lam).data.get(idx) else {
            return Err(Error::shape("scale_by", format!("index {idx} outside {:?}", self.shape(lam))));
        };
        let v = self.value(x);
        let t = Tensor::new(v.shape.clone(), v.data.iter().map(|a| *a * l).collect());
        let g = self.requires_grad(x) || self.requires_grad(lam);
        Ok(self.push(t, Op::ScaleBy { x, lam, idx }, g))
    }

    /// Node holding `value` whose gradient is passed unchanged to `src`.
    pub fn straight_through(&mut self, src: Var, value: Tensor<T>) -> Result<Var> {
        if value.shape != self.shape(src) {
            return Err(Error::shape("straight_through", format!("{:?} vs {:?}", value.shape, self.shape(src))));
        }
        let g = self.requires_grad(src);
        Ok(self.push(value, Op::StraightThrough(src), g))
    }

    /// `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(m, k, n, &self.value(a).data, false, &self.value(b).data, false, T::zero(), &mut out);
        let g = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), g))
    }

    /// `x·Wᵀ + b` over the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sw.len() != 2 || sx.last() != Some(&sw[1]) {
            return Err(Error::shape("linear", format!("input {sx:?}, weight {sw:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape("linear", format!("bias {:?}, expected [{}]", self.shape(b), sw[0])));
            }
        }
        let (k, n) = (sw[1], sw[0]);
        let m = self.value(x).len() / k;
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bv = &self.value(b).data;
            out.chunks_exact_mut(n).for_each(|r| r.copy_from_slice(bv));
        }
        matmul_into(m, k, n, &self.value(x).data, false, &self.value(w).data, true, T::one(), &mut out);
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let g = self.requires_grad(x) || self.requires_grad(w) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(Tensor::new(shape, out), Op::Linear { x, w, b }, g))
    }

    /// Stride-1 "same" convolution, `x` `[B,Ci,H,W]`, `w` `[Co,Ci,kh,kw]` with odd kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] % 2 == 0 || sw[3] % 2 == 0 {
            return Err(Error::shape("conv2d", format!("input {sx:?}, weight {sw:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape("conv2d", format!("bias {:?}, expected [{}]", self.shape(b), sw[0])));
            }
        }
        let (bn, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, kh, kw) = (sw[0], sw[2], sw[3]);
        let (hw, kk) = (h * wd, ci * kh * kw);
        let mut out = vec![T::zero(); bn * co * hw];
        let mut cols = vec![T::zero(); kk * hw];
        let xv = &self.nodes[x.0].value.data;
        let wv = &self.nodes[w.0].value.data;
        for bi in 0..bn {
            im2col(&xv[bi * ci * hw..(bi + 1) * ci * hw], ci, h, wd, kh, kw, &mut cols);
            let o = &mut out[bi * co * hw..(bi + 1) * co * hw];
            if let Some(b) = b {
                let bv = &self.nodes[b.0].value.data;
                for c in 0..co {
                    o[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = bv[c]);
                }
            }
            matmul_into(co, kk, hw, wv, false, &cols, false, T::one(), o);
        }
        let g = self.requires_grad(x) || self.requires_grad(w) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(Tensor::new(vec![bn, co, h, wd], out), Op::Conv2d { x, w, b }, g))
    }

    /// Per-channel normalization of `[B,C,H,W]` (or `[B,C]`) over all other axes.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_, T>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(Error::shape(
                "batch_norm",
                format!("input {sx:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let (bn, c) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        let count = bn * inner;
        let eps = T::of(BN_EPS);
        let xv = &self.value(x).data;
        let (mean, var, train) = match mode {
            BnMode::Train => {
                if count < 2 {
                    return Err(Error::shape("batch_norm", format!("batch statistics need 2+ values per channel, got {count}")));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let vals = (0..bn).flat_map(|b| xv[(b * c + ch) * inner..][..inner].iter());
                    let m = vals.clone().fold(T::zero(), |s, v| s + *v) / T::of(count as f64);
                    let v = vals.fold(T::zero(), |s, v| s + (*v - m) * (*v - m)) / T::of(count as f64);
                    mean[ch] = m;
                    var[ch] = v;
                }
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm", format!("running stats of length {} for {c} channels", mean.len())));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..bn {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let g = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        let stats = train.then_some((mean, var));
        Ok(self.push(Tensor::new(sx, out), Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, stats }, g))
    }

    /// Biased batch mean and variance recorded by a training-mode batch norm.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { stats: Some((m, s)), .. } => Some((m, s)),
            _ => None,
        }
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape.clone(), v.data.iter().map(|x| f(*x)).collect());
        let g = self.requires_grad(a);
        self.push(t, op, g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sig, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Non-overlapping max pooling of `[B,C,H,W]`; trailing rows/columns are dropped.
    pub fn max_pool2d(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || ph == 0 || pw == 0 || sx[2] < ph || sx[3] < pw {
            return Err(Error::shape("max_pool2d", format!("input {sx:?}, window {ph}x{pw}")));
        }
        let (bc, h, w) = (sx[0] * sx[1], sx[2], sx[3]);
        let (oh, ow) = (h / ph, w / pw);
        let xv = &self.value(x).data;
        let mut out = Vec::with_capacity(bc * oh * ow);
        let mut argmax = Vec::with_capacity(bc * oh * ow);
        for p in 0..bc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (p * h + oy * ph) * w + ox * pw;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let i = (p * h + oy * ph + dy) * w + ox * pw + dx;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let g = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![sx[0], sx[1], oh, ow], out), Op::MaxPool { x, argmax }, g))
    }

    /// One-layer bidirectional GRU over `[B,T,D]`, returning `[B,T,2H]`
    /// (forward states, then backward states). `p` holds `w_ih [3H,D]`, `w_hh [3H,H]`,
    /// `b_ih [3H]`, `b_hh [3H]` for the forward direction, then the same for the backward one.
    /// Gate order is reset, update, candidate.
    pub fn bigru(&mut self, x: Var, p: [Var; 8]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let h3 = self.shape(p[0]).first().copied().unwrap_or(0);
        let hidden = h3 / 3;
        if sx.len() != 3 || hidden == 0 || h3 % 3 != 0 {
            return Err(Error::shape("bigru", format!("input {sx:?}, w_ih {:?}", self.shape(p[0]))));
        }
        let (bn, tn, d) = (sx[0], sx[1], sx[2]);
        for dir in 0..2 {
            let want: [Vec<usize>; 4] = [vec![h3, d], vec![h3, hidden], vec![h3], vec![h3]];
            for (j, w) in want.iter().enumerate() {
                if self.shape(p[4 * dir + j]) != w.as_slice() {
                    return Err(Error::shape("bigru", format!("parameter {j} of direction {dir} is {:?}, expected {w:?}", self.shape(p[4 * dir + j]))));
                }
            }
        }
        let hn = hidden;
        let mut out = vec![T::zero(); bn * tn * 2 * hn];
        let caches: [GruCache<T>; 2] = std::array::from_fn(|dir| {
            let w_ih = &self.value(p[4 * dir]).data;
            let w_hh = &self.value(p[4 * dir + 1]).data;
            let b_ih = &self.value(p[4 * dir + 2]).data;
            let b_hh = &self.value(p[4 * dir + 3]).data;
            let mut xi = vec![T::zero(); bn * tn * h3];
            xi.chunks_exact_mut(h3).for_each(|r| r.copy_from_slice(b_ih));
            matmul_into(bn * tn, d, h3, &self.value(x).data, false, w_ih, true, T::one(), &mut xi);
            let mut cache = GruCache {
                h_prev: vec![T::zero(); tn * bn * hn],
                r: vec![T::zero(); tn * bn * hn],
                z: vec![T::zero(); tn * bn * hn],
                n: vec![T::zero(); tn * bn * hn],
                hh_n: vec![T::zero(); tn * bn * hn],
            };
            let mut h = vec![T::zero(); bn * hn];
            let mut hh = vec![T::zero(); bn * h3];
            for s in 0..tn {
                let t = if dir == 0 { s } else { tn - 1 - s };
                hh.chunks_exact_mut(h3).for_each(|r| r.copy_from_slice(b_hh));
                matmul_into(bn, hn, h3, &h, false, w_hh, true, T::one(), &mut hh);
                let off = s * bn * hn;
                cache.h_prev[off..off + bn * hn].copy_from_slice(&h);
                for b in 0..bn {
                    let xr = &xi[(b * tn + t) * h3..][..h3];
                    let hr = &hh[b * h3..][..h3];
                    for j in 0..hn {
                        let r = sig(xr[j] + hr[j]);
                        let z = sig(xr[hn + j] + hr[hn + j]);
                        let n = (xr[2 * hn + j] + r * hr[2 * hn + j]).tanh();
                        let k = off + b * hn + j;
                        cache.r[k] = r;
                        cache.z[k] = z;
                        cache.n[k] = n;
                        cache.hh_n[k] = hr[2 * hn + j];
                        let hv = (T::one() - z) * n + z * h[b * hn + j];
                        h[b * hn + j] = hv;
                        out[(b * tn + t) * 2 * hn + dir * hn + j] = hv;
                    }
                }
            }
            cache
        });
        let g = self.requires_grad(x) || p.iter().any(|v| self.requires_grad(*v));
        Ok(self.push(Tensor::new(vec![bn, tn, 2 * hn], out), Op::BiGru { x, p, hidden, cache: caches }, g))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape.as_slice() {
            return Err(Error::shape("mse", format!("prediction {:?}, target {:?}", self.shape(pred), target.shape)));
        }
        let pv = &self.value(pred).data;
        let n = T::of(pv.len().max(1) as f64);
        let s = pv.iter().zip(&target.data).fold(T::zero(), |s, (a, b)| s + (*a - *b) * (*a - *b));
        let g = self.requires_grad(pred);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { pred, target }, g))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.value(a).data;
        let m = v.iter().fold(T::zero(), |s, x| s + *x) / T::of(v.len().max(1) as f64);
        let g = self.requires_grad(a);
        self.push(Tensor::scalar(m), Op::Mean(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().fold(T::zero(), |s, x| s + *x);
        let g = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Sum(a), g)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if shape.iter().product::<usize>() != v.len() {
            return Err(Error::shape("reshape", format!("{:?} to {shape:?}", v.shape)));
        }
        let t = Tensor::new(shape.to_vec(), v.data.clone());
        let g = self.requires_grad(a);
        Ok(self.push(t, Op::Reshape(a), g))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let sx = self.shape(a).to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len() || perm.iter().any(|p| *p >= sx.len() || std::mem::replace(&mut seen[*p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} for shape {sx:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|p| sx[*p]).collect();
        let data = permute_data(&self.value(a).data, &sx, perm);
        let g = self.requires_grad(a);
        Ok(self.push(Tensor::new(out_shape, data), Op::Permute { x: a, perm: perm.to_vec() }, g))
    }

    /// Concatenation along the last axis; leading shapes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(first) = xs.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for x in xs {
            let s = self.shape(*x);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", format!("{s:?} vs leading {lead:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (x, w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*x).data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let g = xs.iter().any(|x| self.requires_grad(*x));
        Ok(self.push(Tensor::new(shape, out), Op::Concat { xs: xs.to_vec(), widths }, g))
    }

    /// `[B,T,K]` → `[B,L,K]` by a fixed `[L,T]` time-mixing matrix.
    pub fn frame_pool(&mut self, x: Var, a: Tensor<T>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || a.shape.len() != 2 || a.shape[1] != sx[1] {
            return Err(Error::shape("frame_pool", format!("input {sx:?}, matrix {:?}", a.shape)));
        }
        let (bn, tn, k, l) = (sx[0], sx[1], sx[2], a.shape[0]);
        let mut out = vec![T::zero(); bn * l * k];
        let xv = &self.value(x).data;
        for b in 0..bn {
            matmul_into(l, tn, k, &a.data, false, &xv[b * tn * k..(b + 1) * tn * k], false, T::zero(), &mut out[b * l * k..(b + 1) * l * k]);
        }
        let g = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![bn, l, k], out), Op::FramePool { x, a }, g))
    }

    /// Plain and energy-weighted means of `[B,C,T,F]` over batch and time,
    /// returned as `[2·C·F]` (plain first). Weights are per-(batch, time) energies
    /// normalized to sum to one.
    pub fn pool_stats(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || sx[0] * sx[2] == 0 {
            return Err(Error::shape("pool_stats", format!("input {sx:?}")));
        }
        let (bn, c, tn, f) = (sx[0], sx[1], sx[2], sx[3]);
        let q = c * f;
        let p = bn * tn;
        let xv = &self.value(x).data;
        let at = |b: usize, t: usize, qi: usize| (((b * c + qi / f) * tn + t) * f) + qi % f;
        let delta = T::of(1e-12);
        let mut e = vec![T::zero(); p];
        for b in 0..bn {
            for t in 0..tn {
                e[b * tn + t] = (0..q).fold(delta, |s, qi| s + xv[at(b, t, qi)] * xv[at(b, t, qi)]);
            }
        }
        let total = e.iter().fold(T::zero(), |s, v| s + *v);
        let w: Vec<T> = e.iter().map(|v| *v / total).collect();
        let mut out = vec![T::zero(); 2 * q];
        let inv_p = T::one() / T::of(p as f64);
        for b in 0..bn {
            for t in 0..tn {
                let wp = w[b * tn + t];
                for qi in 0..q {
                    let v = xv[at(b, t, qi)];
                    out[qi] = out[qi] + v * inv_p;
                    out[q + qi] = out[q + qi] + v * wp;
                }
            }
        }
        let g = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![2 * q], out), Op::PoolStats { x, w, total }, g))
    }

    /// Reverse pass from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(&self.nodes[v.0].value.shape));
        f(&mut slot.data);
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = &g.data;
        let val = &self.nodes[i].value;
        let add_to = |d: &mut [T], s: &[T]| d.iter_mut().zip(s).for_each(|(a, b)| *a = *a + *b);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_to(d, gd));
                self.acc(grads, *b, |d| add_to(d, gd));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_to(d, gd));
                self.acc(grads, *b, |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x = *x - *y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                self.acc(grads, *a, |d| d.iter_mut().zip(gd.iter().zip(vb)).for_each(|(x, (g, y))| *x = *x + *g * *y));
                self.acc(grads, *b, |d| d.iter_mut().zip(gd.iter().zip(va)).for_each(|(x, (g, y))| *x = *x + *g * *y));
            }
            Op::Scale(a, c) => self.acc(grads, *a, |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x = *x + *g * *c)),
            Op::ScaleBy { x, lam, idx } => {
                let l = self.value(*lam).data[*idx];
                self.acc(grads, *x, |d| d.iter_mut().zip(gd).for_each(|(a, g)| *a = *a + *g * l));
                let xv = &self.value(*x).data;
                let s = gd.iter().zip(xv).fold(T::zero(), |s, (g, x)| s + *g * *x);
                self.acc(grads, *lam, |d| d[*idx] = d[*idx] + s);
            }
            Op::StraightThrough(src) => self.acc(grads, *src, |d| add_to(d, gd)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                self.acc(grads, *a, |d| matmul_into(m, n, k, gd, false, vb, true, T::one(), d));
                self.acc(grads, *b, |d| matmul_into(k, m, n, va, true, gd, false, T::one(), d));
            }
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w);
                let (n, k) = (sw[0], sw[1]);
                let m = gd.len() / n;
                let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                self.acc(grads, *x, |d| matmul_into(m, n, k, gd, false, wv, false, T::one(), d));
                self.acc(grads, *w, |d| matmul_into(n, m, k, gd, true, xv, false, T::one(), d));
                if let Some(b) = b {
                    self.acc(grads, *b, |d| gd.chunks_exact(n).for_each(|r| add_to(d, r)));
                }
            }
            Op::Conv2d { x, w, b } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (bn, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (co, kh, kw) = (sw[0], sw[2], sw[3]);
                let (hw, kk) = (h * wd, ci * kh * kw);
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                let mut cols = vec![T::zero(); kk * hw];
                let need_w = self.nodes[w.0].grad;
                let need_x = self.nodes[x.0].grad;
                if need_w {
                    self.acc(grads, *w, |d| {
                        for bi in 0..bn {
                            im2col(&xv[bi * ci * hw..(bi + 1) * ci * hw], ci, h, wd, kh, kw, &mut cols);
                            matmul_into(co, hw, kk, &gd[bi * co * hw..(bi + 1) * co * hw], false, &cols, true, T::one(), d);
                        }
                    });
                }
                if need_x {
                    self.acc(grads, *x, |d| {
                        for bi in 0..bn {
                            matmul_into(kk, co, hw, wv, true, &gd[bi * co * hw..(bi + 1) * co * hw], false, T::zero(), &mut cols);
                            col2im(&cols, ci, h, wd, kh, kw, &mut d[bi * ci * hw..(bi + 1) * ci * hw]);
                        }
                    });
                }
                if let Some(b) = b {
                    self.acc(grads, *b, |d| {
                        for bi in 0..bn {
                            for c in 0..co {
                                d[c] = d[c] + gd[(bi * co + c) * hw..][..hw].iter().fold(T::zero(), |s, v| s + *v);
                            }
                        }
                    });
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, .. } => {
                let sx = self.shape(*x);
                let (bn, c) = (sx[0], sx[1]);
                let inner: usize = sx[2..].iter().product();
                let count = T::of((bn * inner) as f64);
                let mut sg = vec![T::zero(); c];
                let mut sgx = vec![T::zero(); c];
                for b in 0..bn {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for k in base..base + inner {
                            sg[ch] = sg[ch] + gd[k];
                            sgx[ch] = sgx[ch] + gd[k] * xhat[k];
                        }
                    }
                }
                self.acc(grads, *gamma, |d| add_to(d, &sgx));
                self.acc(grads, *beta, |d| add_to(d, &sg));
                let gv = &self.value(*gamma).data;
                self.acc(grads, *x, |d| {
                    for b in 0..bn {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            let s = gv[ch] * inv_std[ch];
                            for k in base..base + inner {
                                d[k] = d[k]
                                    + if *train {
                                        s * (gd[k] - sg[ch] / count - xhat[k] * sgx[ch] / count)
                                    } else {
                                        s * gd[k]
                                    };
                            }
                        }
                    }
                });
            }
            Op::Relu(a) => {
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd.iter().zip(&val.data)).for_each(|(x, (g, y))| {
                        if *y > T::zero() {
                            *x = *x + *g
                        }
                    })
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                d.iter_mut().zip(gd.iter().zip(&val.data)).for_each(|(x, (g, y))| *x = *x + *g * *y * (T::one() - *y))
            }),
            Op::Tanh(a) => self.acc(grads, *a, |d| {
                d.iter_mut().zip(gd.iter().zip(&val.data)).for_each(|(x, (g, y))| *x = *x + *g * (T::one() - *y * *y))
            }),
            Op::MaxPool { x, argmax } => self.acc(grads, *x, |d| {
                for (g, k) in gd.iter().zip(argmax) {
                    d[*k as usize] = d[*k as usize] + *g;
                }
            }),
            Op::BiGru { x, p, hidden, cache } => self.gru_backward(*x, p, *hidden, cache, gd, grads),
            Op::Mse { pred, target } => {
                let pv = &self.value(*pred).data;
                let s = gd[0] * T::of(2.0) / T::of(pv.len().max(1) as f64);
                self.acc(grads, *pred, |d| {
                    d.iter_mut().zip(pv.iter().zip(&target.data)).for_each(|(x, (p, t))| *x = *x + s * (*p - *t))
                });
            }
            Op::Mean(a) => {
                let s = gd[0] / T::of(self.value(*a).len().max(1) as f64);
                self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x = *x + s));
            }
            Op::Sum(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x = *x + gd[0])),
            Op::Reshape(a) => self.acc(grads, *a, |d| add_to(d, gd)),
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                perm.iter().enumerate().for_each(|(i, p)| inv[*p] = i);
                let back = permute_data(gd, &val.shape, &inv);
                self.acc(grads, *x, |d| add_to(d, &back));
            }
            Op::Concat { xs, widths } => {
                let total: usize = widths.iter().sum();
                let rows = gd.len() / total.max(1);
                let mut off = 0;
                for (x, w) in xs.iter().zip(widths) {
                    self.acc(grads, *x, |d| {
                        for r in 0..rows {
                            add_to(&mut d[r * w..(r + 1) * w], &gd[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::FramePool { x, a } => {
                let sx = self.shape(*x);
                let (bn, tn, k, l) = (sx[0], sx[1], sx[2], a.shape[0]);
                self.acc(grads, *x, |d| {
                    for b in 0..bn {
                        matmul_into(tn, l, k, &a.data, true, &gd[b * l * k..(b + 1) * l * k], false, T::one(), &mut d[b * tn * k..(b + 1) * tn * k]);
                    }
                });
            }
            Op::PoolStats { x, w, total } => {
                let sx = self.shape(*x);
                let (bn, c, tn, f) = (sx[0], sx[1], sx[2], sx[3]);
                let q = c * f;
                let p = bn * tn;
                let xv = &self.value(*x).data;
                let at = |b: usize, t: usize, qi: usize| (((b * c + qi / f) * tn + t) * f) + qi % f;
                let inv_p = T::one() / T::of(p as f64);
                let (gm, gw) = gd.split_at(q);
                let s: Vec<T> = (0..p)
                    .map(|pi| (0..q).fold(T::zero(), |acc, qi| acc + gw[qi] * xv[at(pi / tn, pi % tn, qi)]))
                    .collect();
                let sbar = s.iter().zip(w).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
                let two = T::of(2.0);
                self.acc(grads, *x, |d| {
                    for pi in 0..p {
                        let (b, t) = (pi / tn, pi % tn);
                        let coef = two * (s[pi] - sbar) / *total;
                        for qi in 0..q {
                            let k = at(b, t, qi);
                            d[k] = d[k] + gm[qi] * inv_p + gw[qi] * w[pi] + coef * xv[k];
                        }
                    }
                });
            }
        }
    }

    fn gru_backward(&self, x: Var, p: &[Var; 8], hn: usize, cache: &[GruCache<T>; 2], gd: &[T], grads: &mut [Option<Tensor<T>>]) {
        let sx = self.shape(x);
        let (bn, tn, d) = (sx[0], sx[1], sx[2]);
        let h3 = 3 * hn;
        let xv = &self.value(x).data;
        let one = T::one();
        for dir in 0..2 {
            let c = &cache[dir];
            let w_ih = &self.value(p[4 * dir]).data;
            let w_hh = &self.value(p[4 * dir + 1]).data;
            let mut dxi = vec![T::zero(); bn * tn * h3];
            let mut dw_hh = vec![T::zero(); h3 * hn];
            let mut db_hh = vec![T::zero(); h3];
            let mut dh_next = vec![T::zero(); bn * hn];
            let mut dhh = vec![T::zero(); bn * h3];
            let mut dh_prev = vec![T::zero(); bn * hn];
            for s in (0..tn).rev() {
                let t = if dir == 0 { s } else { tn - 1 - s };
                let off = s * bn * hn;
                for b in 0..bn {
                    for j in 0..hn {
                        let k = off + b * hn + j;
                        let (r, z, n, hh_n, hp) = (c.r[k], c.z[k], c.n[k], c.hh_n[k], c.h_prev[k]);
                        let dh = gd[(b * tn + t) * 2 * hn + dir * hn + j] + dh_next[b * hn + j];
                        let dn = dh * (one - z);
                        let dz = dh * (hp - n);
                        dh_prev[b * hn + j] = dh * z;
                        let dn_pre = dn * (one - n * n);
                        let dr_pre = dn_pre * hh_n * r * (one - r);
                        let dz_pre = dz * z * (one - z);
                        let xrow = &mut dxi[(b * tn + t) * h3..][..h3];
                        xrow[j] = dr_pre;
                        xrow[hn + j] = dz_pre;
                        xrow[2 * hn + j] = dn_pre;
                        let hrow = &mut dhh[b * h3..][..h3];
                        hrow[j] = dr_pre;
                        hrow[hn + j] = dz_pre;
                        hrow[2 * hn + j] = dn_pre * r;
                    }
                }
                matmul_into(h3, bn, hn, &dhh, true, &c.h_prev[off..off + bn * hn], false, one, &mut dw_hh);
                for row in dhh.chunks_exact(h3) {
                    db_hh.iter_mut().zip(row).for_each(|(a, b)| *a = *a + *b);
                }
                matmul_into(bn, h3, hn, &dhh, false, w_hh, false, one, &mut dh_prev);
                std::mem::swap(&mut dh_next, &mut dh_prev);
            }
            self.acc(grads, p[4 * dir + 1], |g| g.iter_mut().zip(&dw_hh).for_each(|(a, b)| *a = *a + *b));
            self.acc(grads, p[4 * dir + 3], |g| g.iter_mut().zip(&db_hh).for_each(|(a, b)| *a = *a + *b));
            self.acc(grads, p[4 * dir], |g| matmul_into(h3, bn * tn, d, &dxi, true, xv, false, one, g));
            self.acc(grads, p[4 * dir + 2], |g| {
                for row in dxi.chunks_exact(h3) {
                    g.iter_mut().zip(row).for_each(|(a, b)| *a = *a + *b);
                }
            });
            self.acc(grads, x, |g| matmul_into(bn * tn, h3, d, &dxi, false, w_ih, false, one, g));
        }
    }
}

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|p| shape[*p]).collect();
    let strides: Vec<usize> = perm.iter().map(|p| in_strides[*p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a node; `None` if it does not influence the loss or needs no gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a node, zeros if it received none.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

use super::shape::{broadcast_dims, broadcast_strides, for_each_broadcast, split_at_axis, strides};
use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        }
    }
}

/// C (m×n) = op(A) · op(B), optionally accumulating into C.
/// `ta`: A is stored k×m row-major; `tb`: B is stored n×k row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if acc { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above and the strides describe
    // row-major (or transposed row-major) layouts of exactly those lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sums a gradient laid out in `out` dims back down to `src` dims.
fn reduce_broadcast(g: &[f64], out: &[usize], src: &[usize]) -> Vec<f64> {
    if out == src {
        return g.to_vec();
    }
    let n_src: usize = src.iter().product();
    let mut r = vec![0.0; n_src];
    let ss = broadcast_strides(src, out);
    let zeros = vec![0; out.len()];
    for_each_broadcast(out, &ss, &zeros, |i, off, _| r[off] += g[i]);
    r
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: BinOp) -> Result<Tensor> {
        let (da, db) = (self.shape().to_vec(), other.shape().to_vec());
        let out = broadcast_dims(&da, &db).ok_or_else(|| TensorError::Shape {
            op: op.name(),
            lhs: da.clone(),
            rhs: db.clone(),
        })?;
        let n: usize = out.iter().product();
        let data = {
            let (a, b) = (self.data(), other.data());
            if da == db {
                a.iter().zip(b.iter()).map(|(&x, &y)| op.apply(x, y)).collect()
            } else if out == da && db.len() <= da.len() && da[da.len() - db.len()..] == db[..] {
                let m = b.len();
                a.iter().enumerate().map(|(i, &x)| op.apply(x, b[i % m])).collect()
            } else {
                let mut v = vec![0.0; n];
                let sa = broadcast_strides(&da, &out);
                let sb = broadcast_strides(&db, &out);
                for_each_broadcast(&out, &sa, &sb, |i, ia, ib| v[i] = op.apply(a[ia], b[ib]));
                v
            }
        };
        let (pa, pb) = (self.clone(), other.clone());
        let out_dims = out.clone();
        Ok(Tensor::from_op(
            out,
            data,
            op.name(),
            vec![self.clone(), other.clone()],
            move |g| {
                let need_a = pa.requires_grad();
                let need_b = pb.requires_grad();
                let (ga_full, gb_full): (Option<Vec<f64>>, Option<Vec<f64>>) = match op {
                    BinOp::Add => (need_a.then(|| g.to_vec()), need_b.then(|| g.to_vec())),
                    BinOp::Sub => (
                        need_a.then(|| g.to_vec()),
                        need_b.then(|| g.iter().map(|v| -v).collect()),
                    ),
                    BinOp::Mul | BinOp::Div => {
                        let (a, b) = (pa.data(), pb.data());
                        let sa = broadcast_strides(pa.shape(), &out_dims);
                        let sb = broadcast_strides(pb.shape(), &out_dims);
                        let mut ga = need_a.then(|| vec![0.0; g.len()]);
                        let mut gb = need_b.then(|| vec![0.0; g.len()]);
                        for_each_broadcast(&out_dims, &sa, &sb, |i, ia, ib| {
                            let (x, y) = (a[ia], b[ib]);
                            match op {
                                BinOp::Mul => {
                                    if let Some(ga) = ga.as_mut() {
                                        ga[i] = g[i] * y;
                                    }
                                    if let Some(gb) = gb.as_mut() {
                                        gb[i] = g[i] * x;
                                    }
                                }
                                _ => {
                                    if let Some(ga) = ga.as_mut() {
                                        ga[i] = g[i] / y;
                                    }
                                    if let Some(gb) = gb.as_mut() {
                                        gb[i] = -g[i] * x / (y * y);
                                    }
                                }
                            }
                        });
                        (ga, gb)
                    }
                };
                vec![
                    ga_full.map(|v| reduce_broadcast(&v, &out_dims, pa.shape())),
                    gb_full.map(|v| reduce_broadcast(&v, &out_dims, pb.shape())),
                ]
            },
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Div)
    }

    /// Elementwise map with a derivative expressed in terms of the input.
    fn unary(&self, op: &'static str, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, op, vec![self.clone()], move |g| {
            let x = p.data();
            vec![Some(g.iter().zip(x.iter()).map(|(&gi, &xi)| gi * df(xi)).collect())]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, "scale", vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|&v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(self.shape().to_vec(), data, "add_scalar", vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, f64::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(bad) = self.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary("log", f64::ln, |x| 1.0 / x))
    }

    pub fn sin(&self) -> Tensor {
        self.unary("sin", f64::sin, f64::cos)
    }

    pub fn cos(&self) -> Tensor {
        self.unary("cos", f64::cos, |x| -x.sin())
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x| 2.0 * x)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |x| {
            let s = sigmoid(x);
            s * (1.0 - s)
        })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    /// Numerically stable `ln σ(x)`.
    pub fn log_sigmoid(&self) -> Tensor {
        self.unary("log_sigmoid", log_sigmoid, |x| sigmoid(-x))
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, "clamp", vec![self.clone()], move |g| {
            let x = p.data();
            vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(&gi, &xi)| if xi >= lo && xi <= hi { gi } else { 0.0 })
                    .collect(),
            )]
        })
    }

    /// Matrix product over the last two axes. `other` is either a plain
    /// `[K, N]` matrix shared across all leading axes, or carries the same
    /// leading axes as `self`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (da, db) = (self.shape().to_vec(), other.shape().to_vec());
        let err = || TensorError::Shape {
            op: "matmul",
            lhs: da.clone(),
            rhs: db.clone(),
        };
        if da.len() < 2 || db.len() < 2 {
            return Err(err());
        }
        let (m, k) = (da[da.len() - 2], da[da.len() - 1]);
        let (k2, n) = (db[db.len() - 2], db[db.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let shared = db.len() == 2;
        if !shared && da[..da.len() - 2] != db[..db.len() - 2] {
            return Err(err());
        }
        let batch: usize = da[..da.len() - 2].iter().product();
        let mut out_dims = da[..da.len() - 2].to_vec();
        out_dims.extend([m, n]);

        let mut data = vec![0.0; batch * m * n];
        {
            let (a, b) = (self.data(), other.data());
            if shared {
                gemm(batch * m, k, n, &a, false, &b, false, &mut data, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &a[i * m * k..(i + 1) * m * k],
                        false,
                        &b[i * k * n..(i + 1) * k * n],
                        false,
                        &mut data[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out_dims,
            data,
            "matmul",
            vec![self.clone(), other.clone()],
            move |g| {
                let (a, b) = (pa.data(), pb.data());
                let ga = pa.requires_grad().then(|| {
                    let mut ga = vec![0.0; a.len()];
                    if shared {
                        gemm(batch * m, n, k, g, false, &b, true, &mut ga, false);
                    } else {
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &b[i * k * n..(i + 1) * k * n],
                                true,
                                &mut ga[i * m * k..(i + 1) * m * k],
                                false,
                            );
                        }
                    }
                    ga
                });
                let gb = pb.requires_grad().then(|| {
                    let mut gb = vec![0.0; b.len()];
                    if shared {
                        gemm(k, batch * m, n, &a, true, g, false, &mut gb, false);
                    } else {
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &a[i * m * k..(i + 1) * m * k],
                                true,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &mut gb[i * k * n..(i + 1) * k * n],
                                false,
                            );
                        }
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != self.numel() || dims.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: dims.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            dims.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes; `axes[i]` names the source axis placed at position `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let src = self.shape().to_vec();
        let nd = src.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::Dimension {
                op: "permute",
                msg: format!("invalid axes {axes:?} for shape {src:?}"),
            });
        }
        let out: Vec<usize> = axes.iter().map(|&a| src[a]).collect();
        let ss = strides(&src);
        let permuted: Vec<usize> = axes.iter().map(|&a| ss[a]).collect();
        let zeros = vec![0; nd];
        let mut data = vec![0.0; self.numel()];
        {
            let x = self.data();
            for_each_broadcast(&out, &permuted, &zeros, |i, off, _| data[i] = x[off]);
        }
        let out_dims = out.clone();
        Ok(Tensor::from_op(out, data, "permute", vec![self.clone()], move |g| {
            let mut gx = vec![0.0; g.len()];
            for_each_broadcast(&out_dims, &permuted, &zeros, |i, off, _| gx[off] = g[i]);
            vec![Some(gx)]
        }))
    }

    pub fn transpose(&self, a0: usize, a1: usize) -> Result<Tensor> {
        let mut axes: Vec<usize> = (0..self.ndim()).collect();
        if a0 >= axes.len() || a1 >= axes.len() {
            return Err(TensorError::Dimension {
                op: "transpose",
                msg: format!("axes ({a0}, {a1}) for shape {:?}", self.shape()),
            });
        }
        axes.swap(a0, a1);
        self.permute(&axes)
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.ndim() {
            return Err(TensorError::Dimension {
                op,
                msg: format!("axis {axis} out of range for shape {:?}", self.shape()),
            });
        }
        Ok(())
    }

    fn reduced_dims(&self, axis: usize, keepdim: bool) -> Vec<usize> {
        let mut d = self.shape().to_vec();
        if keepdim {
            d[axis] = 1;
        } else {
            d.remove(axis);
        }
        d
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis("sum", axis)?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    let dst = &mut data[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(&x[base..base + inner]).for_each(|(d, v)| *d += v);
                }
            }
        }
        Ok(Tensor::from_op(
            self.reduced_dims(axis, keepdim),
            data,
            "sum",
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis("mean", axis)?;
        let len = self.shape()[axis];
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / len as f64))
    }

    /// Maximum along `axis`; the gradient flows to the first maximizer.
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis("max", axis)?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        let v = x[(o * len + k) * inner + i];
                        if v > data[o * inner + i] || k == 0 {
                            data[o * inner + i] = v;
                            arg[o * inner + i] = k;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            self.reduced_dims(axis, keepdim),
            data,
            "max",
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        gx[(o * len + arg[o * inner + i]) * inner + i] = g[o * inner + i];
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![], vec![s], "sum_all", vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }

    /// Softmax along `axis` with max subtraction. `-inf` entries map to exact zeros.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("softmax", axis)?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::Domain {
                op: "softmax",
                msg: "NaN input".into(),
            });
        }
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let mut y = vec![0.0; self.numel()];
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let m = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for k in 0..len {
                        let e = (x[at(k)] - m).exp();
                        y[at(k)] = e;
                        s += e;
                    }
                    for k in 0..len {
                        y[at(k)] /= s;
                    }
                }
            }
        }
        let saved = y.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "softmax",
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * saved[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = saved[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Running sum along `axis`.
    pub fn cumsum(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("cumsum", axis)?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let mut y = self.to_vec();
        for o in 0..outer {
            for k in 1..len {
                for i in 0..inner {
                    y[(o * len + k) * inner + i] += y[(o * len + k - 1) * inner + i];
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "cumsum",
            vec![self.clone()],
            move |g| {
                let mut gx = g.to_vec();
                for o in 0..outer {
                    for k in (0..len.saturating_sub(1)).rev() {
                        for i in 0..inner {
                            gx[(o * len + k) * inner + i] += gx[(o * len + k + 1) * inner + i];
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| TensorError::Dimension {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        first.check_axis("concat", axis)?;
        let base = first.shape().to_vec();
        for p in &parts[1..] {
            let s = p.shape();
            if s.len() != base.len() || (0..s.len()).any(|i| i != axis && s[i] != base[i]) {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_dims = base.clone();
        out_dims[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                let d = p.data();
                data.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Ok(Tensor::from_op(out_dims, data, "concat", parts.to_vec(), move |g| {
            let mut grads: Vec<Option<Vec<f64>>> = needs
                .iter()
                .zip(&lens)
                .map(|(&n, &l)| n.then(|| Vec::with_capacity(outer * l * inner)))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &l) in grads.iter_mut().zip(&lens) {
                    if let Some(gp) = gp.as_mut() {
                        gp.extend_from_slice(&g[off..off + l * inner]);
                    }
                    off += l * inner;
                }
            }
            grads
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis("narrow", axis)?;
        let dims = self.shape().to_vec();
        if len == 0 || start + len > dims[axis] {
            return Err(TensorError::Dimension {
                op: "narrow",
                msg: format!(
                    "range {start}..{} outside extent {} on axis {axis}",
                    start + len,
                    dims[axis]
                ),
            });
        }
        let (outer, full, inner) = split_at_axis(&dims, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let x = self.data();
            for o in 0..outer {
                let b = (o * full + start) * inner;
                data.extend_from_slice(&x[b..b + len * inner]);
            }
        }
        let mut out_dims = dims;
        out_dims[axis] = len;
        Ok(Tensor::from_op(
            out_dims,
            data,
            "narrow",
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let b = (o * full + start) * inner;
                    gx[b..b + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Normalizes over the last axis to zero mean and unit (biased) variance.
    pub fn normalize_last(&self, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().ok_or_else(|| TensorError::Dimension {
            op: "layer_norm",
            msg: "scalar input".into(),
        })?;
        let rows = self.numel() / d;
        let mut y = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for (o, v) in y[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = (v - mean) * is;
                }
            }
        }
        let saved = y.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "layer_norm",
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gy = &g[r * d..(r + 1) * d];
                    let yr = &saved[r * d..(r + 1) * d];
                    let mg = gy.iter().sum::<f64>() / d as f64;
                    let mgy = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = inv_std[r] * (gy[j] - mg - yr[j] * mgy);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

//! Forward rules. Each op validates shapes, computes its output eagerly and
//! records what its backward rule needs.

use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::graph::{BnMode, Graph, Op, RunningStats, Var};
use crate::kernels::{self, ConvGeom, ConvParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Probabilities entering the cross-entropy are clamped to `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-7;

fn dims4<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    t.dims4()
        .ok_or_else(|| shape_err(op, format!("expected a 4-D tensor, got {:?}", t.shape())))
}

fn dims2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| shape_err(op, format!("expected a 2-D tensor, got {:?}", t.shape())))
}

impl<T: Scalar> Graph<T> {
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        const OP: &str = "conv2d";
        let (batch, cin, h, wd) = dims4(OP, self.value(x))?;
        let (cout, wcin, k, k2) = dims4(OP, self.value(w))?;
        if wcin != cin {
            return Err(shape_err(OP, format!("input has {cin} channels, kernel expects {wcin}")));
        }
        if k != k2 || k % 2 == 0 {
            return Err(arg_err(OP, format!("kernel must be square and odd, got {k}x{k2}")));
        }
        if p.stride == 0 || p.dilation == 0 {
            return Err(arg_err(OP, "stride and dilation must be >= 1"));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err(OP, format!("bias shape {:?}, expected [{cout}]", self.shape(b))));
            }
        }
        let (oh, ow) = match (p.out_extent(h, k), p.out_extent(wd, k)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => return Err(arg_err(OP, format!("non-positive output extent for {h}x{wd} input"))),
        };
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            oh,
            ow,
            p,
        };
        let mut out = vec![T::ZERO; batch * cout * oh * ow];
        kernels::conv2d_forward(
            self.value(x).data(),
            batch,
            &geom,
            self.value(w).data(),
            cout,
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::new(vec![batch, cout, oh, ow], out)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        self.push(
            value,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                p,
            },
            &inputs,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "matmul";
        let (n, k) = dims2(OP, self.value(a))?;
        let (k2, m) = dims2(OP, self.value(b))?;
        if k != k2 {
            return Err(shape_err(OP, format!("inner extents differ: {k} vs {k2}")));
        }
        let mut out = vec![T::ZERO; n * m];
        T::gemm(false, false, n, m, k, T::ONE, self.value(a).data(), self.value(b).data(), T::ZERO, &mut out);
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2("transpose", self.value(x))?;
        let value = transpose2(self.value(x).data(), r, c);
        self.push(Tensor::new(vec![c, r], value)?, Op::Transpose { x: x.0 }, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let computed: Vec<bool> = self.value(x).data().iter().map(|&v| v > T::ZERO).collect();
        let mask = self.next_branch("relu", computed)?;
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &on)| if on { v } else { T::ZERO })
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(value, Op::Relu { x: x.0, mask }, &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| T::ONE / (T::ONE + (-v).exp()));
        self.push(value, Op::Sigmoid { x: x.0 }, &[x.0])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.exp());
        self.push(value, Op::Exp { x: x.0 }, &[x.0])
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.ln());
        self.push(value, Op::Ln { x: x.0 }, &[x.0])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale { x: x.0, s }, &[x.0])
    }

    /// `x[n, m] + b[m]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        const OP: &str = "add_row_bias";
        let (_, m) = dims2(OP, self.value(x))?;
        if self.shape(b) != [m] {
            return Err(shape_err(OP, format!("bias {:?} for {m} columns", self.shape(b))));
        }
        let bias = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(m) {
            for (v, &bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        self.push(value, Op::AddRowBias { x: x.0, b: b.0 }, &[x.0, b.0])
    }

    /// Row-wise softmax of a 2-D tensor, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = dims2("softmax_rows", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; n * m];
        for r in 0..n {
            kernels::softmax_strided(src, &mut out, r * m, m, 1);
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::SoftmaxRows { x: x.0 }, &[x.0])
    }

    /// Softmax across the channel axis at every spatial location.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = dims4("softmax_channels", self.value(x))?;
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; src.len()];
        for bi in 0..b {
            for p in 0..hw {
                kernels::softmax_strided(src, &mut out, bi * c * hw + p, c, hw);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out)?, Op::SoftmaxChannels { x: x.0 }, &[x.0])
    }

    /// Channel-wise concatenation in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *xs.first().ok_or_else(|| arg_err(OP, "no inputs"))?;
        let (b, _, h, w) = dims4(OP, self.value(first))?;
        let mut total = 0;
        for &x in xs {
            let (bx, cx, hx, wx) = dims4(OP, self.value(x))?;
            if (bx, hx, wx) != (b, h, w) {
                return Err(shape_err(
                    OP,
                    format!("extent mismatch: {:?} vs {:?}", self.shape(x), self.shape(first)),
                ));
            }
            total += cx;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for &x in xs {
                let t = self.value(x);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        self.push(
            Tensor::new(vec![b, total, h, w], out)?,
            Op::ConcatChannels { xs: ids.clone() },
            &ids,
        )
    }

    /// Per-channel batch normalization.
    ///
    /// In [`BnMode::Train`] the batch statistics are used and the updated
    /// running statistics are queued under `slot` (see
    /// [`Graph::take_stats_updates`]). [`BnMode::Eval`] normalizes with `stats`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        mode: BnMode,
        slot: usize,
    ) -> Result<Var> {
        const OP: &str = "batchnorm";
        let (b, c, h, w) = dims4(OP, self.value(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(OP, format!("affine parameters must be [{c}]")));
        }
        if stats.mean.shape() != [c] || stats.var.shape() != [c] {
            return Err(shape_err(OP, format!("running statistics must be [{c}]")));
        }
        let hw = h * w;
        let count = b * hw;
        if mode == BnMode::Train && count < 2 {
            return Err(TensorError::DegenerateBatch(count));
        }
        let xs = self.value(x).data();
        let eps = T::from_f64(BN_EPS);
        let (mean, var) = match mode {
            BnMode::Train => {
                let inv_n = T::from_f64(1.0 / count as f64);
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for ch in 0..c {
                    let mut s = T::ZERO;
                    for bi in 0..b {
                        s += xs[(bi * c + ch) * hw..(bi * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let mu = s * inv_n;
                    let mut v = T::ZERO;
                    for bi in 0..b {
                        for &val in &xs[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                            let d = val - mu;
                            v += d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = v * inv_n;
                }
                (mean, var)
            }
            BnMode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::ZERO; xs.len()];
        let mut out = vec![T::ZERO; xs.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gm[ch] * xh + bt[ch];
                }
            }
        }
        if mode == BnMode::Train {
            let m = T::from_f64(BN_MOMENTUM);
            let unbias = T::from_f64(count as f64 / (count - 1) as f64);
            let new_mean: Vec<T> = stats
                .mean
                .data()
                .iter()
                .zip(&mean)
                .map(|(&r, &bm)| (T::ONE - m) * r + m * bm)
                .collect();
            let new_var: Vec<T> = stats
                .var
                .data()
                .iter()
                .zip(&var)
                .map(|(&r, &bv)| (T::ONE - m) * r + m * bv * unbias)
                .collect();
            self.push_stats_update(
                slot,
                RunningStats {
                    mean: Tensor::new(vec![c], new_mean)?,
                    var: Tensor::new(vec![c], new_var)?,
                },
            );
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                mode,
            },
            &[x.0, gamma.0, beta.0],
        )
    }

    /// Square average pooling; trailing rows/columns that do not fill a
    /// window are dropped (floor).
    pub fn avg_pool2d(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        const OP: &str = "avg_pool2d";
        let (b, c, h, w) = dims4(OP, self.value(x))?;
        if k == 0 || s == 0 || h < k || w < k {
            return Err(arg_err(OP, format!("window {k} stride {s} on {h}x{w}")));
        }
        let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
        let mut out = vec![T::ZERO; b * c * oh * ow];
        kernels::avg_pool_forward(self.value(x).data(), b * c, h, w, k, s, oh, ow, &mut out);
        self.push(
            Tensor::new(vec![b, c, oh, ow], out)?,
            Op::AvgPool2d { x: x.0, k, s },
            &[x.0],
        )
    }

    /// Spatial mean: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = dims4("global_avg_pool", self.value(x))?;
        let inv = T::from_f64(1.0 / (h * w) as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(Tensor::new(vec![b, c], out)?, Op::GlobalAvgPool { x: x.0 }, &[x.0])
    }

    /// Log-sum-exp pooling over each spatial plane:
    /// `y = (1/r) ln( mean_ij exp(r * x_ij) )`, giving `[B, C]`.
    pub fn lse_pool(&mut self, x: Var, r: f64) -> Result<Var> {
        const OP: &str = "lse_pool";
        if !(r > 0.0 && r.is_finite()) {
            return Err(arg_err(OP, format!("r must be positive, got {r}")));
        }
        let (b, c, h, w) = dims4(OP, self.value(x))?;
        let rt = T::from_f64(r);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|plane| lse_plane(plane, rt))
            .collect();
        self.push(Tensor::new(vec![b, c], out)?, Op::LsePool { x: x.0, r: rt }, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.sum() / T::from_f64(t.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean { x: x.0 }, &[x.0])
    }

    /// Node-feature matrix `[H*W, C]` of one batch item, rows in raster order.
    pub fn to_nodes(&mut self, x: Var, item: usize) -> Result<Var> {
        const OP: &str = "to_nodes";
        let (b, c, h, w) = dims4(OP, self.value(x))?;
        if item >= b {
            return Err(arg_err(OP, format!("item {item} out of batch {b}")));
        }
        let hw = h * w;
        let src = &self.value(x).data()[item * c * hw..(item + 1) * c * hw];
        let out = transpose2(src, c, hw);
        self.push(Tensor::new(vec![hw, c], out)?, Op::ToNodes { x: x.0, item }, &[x.0])
    }

    /// Inverse of [`Graph::to_nodes`]: stacks per-item `[H*W, C]` matrices into
    /// a `[B, C, H, W]` feature map.
    pub fn from_nodes(&mut self, xs: &[Var], h: usize, w: usize) -> Result<Var> {
        const OP: &str = "from_nodes";
        let first = *xs.first().ok_or_else(|| arg_err(OP, "no inputs"))?;
        let (n, c) = dims2(OP, self.value(first))?;
        if n != h * w {
            return Err(shape_err(OP, format!("{n} nodes for a {h}x{w} grid")));
        }
        let mut out = Vec::with_capacity(xs.len() * n * c);
        for &x in xs {
            if self.shape(x) != [n, c] {
                return Err(shape_err(OP, format!("{:?} vs [{n}, {c}]", self.shape(x))));
            }
            out.extend(transpose2(self.value(x).data(), n, c));
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        self.push(
            Tensor::new(vec![xs.len(), c, h, w], out)?,
            Op::FromNodes { xs: ids.clone() },
            &ids,
        )
    }

    pub fn select_column(&mut self, x: Var, col: usize) -> Result<Var> {
        const OP: &str = "select_column";
        let (n, m) = dims2(OP, self.value(x))?;
        if col >= m {
            return Err(arg_err(OP, format!("column {col} of {m}")));
        }
        let out: Vec<T> = (0..n).map(|r| self.value(x).data()[r * m + col]).collect();
        self.push(Tensor::new(vec![n], out)?, Op::SelectColumn { x: x.0, col }, &[x.0])
    }

    /// Row `i` of the result is row `perm[i]` of the `[N, M]` input.
    pub fn permute_rows(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        const OP: &str = "permute_rows";
        let (n, m) = dims2(OP, self.value(x))?;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(arg_err(OP, format!("not a permutation of {n} rows")));
        }
        let src = self.value(x).data();
        let out: Vec<T> = perm.iter().flat_map(|&p| src[p * m..(p + 1) * m].iter().copied()).collect();
        self.push(
            Tensor::new(vec![n, m], out)?,
            Op::PermuteRows { x: x.0, perm: perm.to_vec() },
            &[x.0],
        )
    }

    /// Rows of `[N, M]` in lexicographic order (ties keep their input order),
    /// with the permutation applied: row `i` of the result is input row
    /// `order[i]`.
    pub fn sort_rows(&mut self, x: Var) -> Result<(Var, Vec<usize>)> {
        const OP: &str = "sort_rows";
        let (n, m) = dims2(OP, self.value(x))?;
        let data = self.value(x).data();
        let row = |i: usize| &data[i * m..(i + 1) * m];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            row(i)
                .iter()
                .zip(row(j))
                .map(|(p, q)| p.to_f64().total_cmp(&q.to_f64()))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let order = self.next_order(OP, order)?;
        Ok((self.permute_rows(x, &order)?, order))
    }

    /// Mean binary cross-entropy of probabilities `p[N]` against 0/1 targets.
    pub fn bce_loss(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        const OP: &str = "bce_loss";
        let n = self.value(p).numel();
        if self.value(p).rank() != 1 || targets.len() != n {
            return Err(shape_err(OP, format!("{:?} vs {} targets", self.shape(p), targets.len())));
        }
        let lo = T::from_f64(P_CLAMP);
        let hi = T::from_f64(1.0 - P_CLAMP);
        let computed: Vec<bool> = self.value(p).data().iter().map(|&v| v < lo || v > hi).collect();
        let clamped = self.next_branch("bce_loss", computed)?;
        let tg: Vec<T> = targets.iter().map(|&t| T::from_f64(t)).collect();
        let mut total = T::ZERO;
        for ((&pv, &t), &c) in self.value(p).data().iter().zip(&tg).zip(&clamped) {
            let pc = if c { pv.max(lo).min(hi) } else { pv };
            total -= t * pc.ln() + (T::ONE - t) * (T::ONE - pc).ln();
        }
        let loss = total / T::from_f64(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p: p.0,
                targets: tg,
                clamped,
            },
            &[p.0],
        )
    }

    /// Mean squared error of `pred[N]` against real targets.
    pub fn mse_loss(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        const OP: &str = "mse_loss";
        let n = self.value(pred).numel();
        if self.value(pred).rank() != 1 || targets.len() != n {
            return Err(shape_err(OP, format!("{:?} vs {} targets", self.shape(pred), targets.len())));
        }
        let tg: Vec<T> = targets.iter().map(|&t| T::from_f64(t)).collect();
        let total: T = self
            .value(pred)
            .data()
            .iter()
            .zip(&tg)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let loss = total / T::from_f64(n as f64);
        self.push(Tensor::scalar(loss), Op::Mse { pred: pred.0, targets: tg }, &[pred.0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape { x: x.0 }, &[x.0])
    }
}

pub(crate) fn lse_plane<T: Scalar>(plane: &[T], r: T) -> T {
    let mx = plane.iter().fold(plane[0] * r, |m, &v| m.max(v * r));
    let mean = plane.iter().map(|&v| (v * r - mx).exp()).sum::<T>() / T::from_f64(plane.len() as f64);
    (mx + mean.ln()) / r
}

pub(crate) fn transpose2<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

//! Backward rules: given the upstream gradient of a node, produce the
//! gradient contribution for each input that carries one.

use crate::error::Result;
use crate::graph::{BnMode, Graph, Op};
use crate::kernels::{self, ConvGeom};
use crate::ops::transpose2;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

type Contributions<T> = Vec<(usize, Tensor<T>)>;

impl<T: Scalar> Graph<T> {
    fn val(&self, id: usize) -> &Tensor<T> {
        &self.nodes[id].value
    }

    fn like(&self, id: usize, data: Vec<T>) -> Result<Tensor<T>> {
        Tensor::new(self.val(id).shape().to_vec(), data)
    }

    fn zip_map(&self, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
        a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect()
    }

    pub(crate) fn backward_node(&self, id: usize, g: &Tensor<T>) -> Result<Contributions<T>> {
        let node = &self.nodes[id];
        let mut out: Contributions<T> = Vec::new();
        let want = |i: usize| self.requires_grad(i);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, p } => {
                let (batch, cin, h, wd) = self.val(*x).dims4().expect("conv input");
                let (cout, _, k, _) = self.val(*w).dims4().expect("conv kernel");
                let (_, _, oh, ow) = node.value.dims4().expect("conv output");
                let geom = ConvGeom {
                    cin,
                    h,
                    w: wd,
                    k,
                    oh,
                    ow,
                    p: *p,
                };
                let mut dx = want(*x).then(|| vec![T::ZERO; self.val(*x).numel()]);
                let mut dw = want(*w).then(|| vec![T::ZERO; self.val(*w).numel()]);
                let mut db = b.filter(|&b| want(b)).map(|_| vec![T::ZERO; cout]);
                kernels::conv2d_backward(
                    self.val(*x).data(),
                    batch,
                    &geom,
                    self.val(*w).data(),
                    cout,
                    g.data(),
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    out.push((*x, self.like(*x, d)?));
                }
                if let Some(d) = dw {
                    out.push((*w, self.like(*w, d)?));
                }
                if let (Some(d), Some(b)) = (db, b) {
                    out.push((*b, self.like(*b, d)?));
                }
            }
            Op::MatMul { a, b } => {
                let (n, k) = self.val(*a).dims2().expect("matmul lhs");
                let m = self.val(*b).shape()[1];
                if want(*a) {
                    let mut da = vec![T::ZERO; n * k];
                    T::gemm(false, true, n, k, m, T::ONE, g.data(), self.val(*b).data(), T::ZERO, &mut da);
                    out.push((*a, self.like(*a, da)?));
                }
                if want(*b) {
                    let mut dbm = vec![T::ZERO; k * m];
                    T::gemm(true, false, k, m, n, T::ONE, self.val(*a).data(), g.data(), T::ZERO, &mut dbm);
                    out.push((*b, self.like(*b, dbm)?));
                }
            }
            Op::Transpose { x } => {
                let (r, c) = self.val(*x).dims2().expect("transpose input");
                out.push((*x, self.like(*x, transpose2(g.data(), c, r))?));
            }
            Op::Relu { x, mask } => {
                let d = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&gv, &on)| if on { gv } else { T::ZERO })
                    .collect();
                out.push((*x, self.like(*x, d)?));
            }
            Op::Sigmoid { x } => {
                let d = self.zip_map(g, &node.value, |gv, y| gv * y * (T::ONE - y));
                out.push((*x, self.like(*x, d)?));
            }
            Op::Exp { x } => {
                let d = self.zip_map(g, &node.value, |gv, y| gv * y);
                out.push((*x, self.like(*x, d)?));
            }
            Op::Ln { x } => {
                let d = self.zip_map(g, self.val(*x), |gv, xv| gv / xv);
                out.push((*x, self.like(*x, d)?));
            }
            Op::Add { a, b } => {
                if want(*a) {
                    out.push((*a, g.clone()));
                }
                if want(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Mul { a, b } => {
                if want(*a) {
                    out.push((*a, self.like(*a, self.zip_map(g, self.val(*b), |gv, v| gv * v))?));
                }
                if want(*b) {
                    out.push((*b, self.like(*b, self.zip_map(g, self.val(*a), |gv, v| gv * v))?));
                }
            }
            Op::Scale { x, s } => {
                let s = *s;
                out.push((*x, g.map(|v| v * s)));
            }
            Op::AddRowBias { x, b } => {
                if want(*x) {
                    out.push((*x, g.clone()));
                }
                if want(*b) {
                    let m = self.val(*b).numel();
                    let mut db = vec![T::ZERO; m];
                    for row in g.data().chunks(m) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((*b, self.like(*b, db)?));
                }
            }
            Op::SoftmaxRows { x } => {
                let (n, m) = node.value.dims2().expect("softmax output");
                let mut dx = vec![T::ZERO; n * m];
                for r in 0..n {
                    kernels::softmax_backward_strided(node.value.data(), g.data(), &mut dx, r * m, m, 1);
                }
                out.push((*x, self.like(*x, dx)?));
            }
            Op::SoftmaxChannels { x } => {
                let (b, c, h, w) = node.value.dims4().expect("softmax output");
                let hw = h * w;
                let mut dx = vec![T::ZERO; node.value.numel()];
                for bi in 0..b {
                    for p in 0..hw {
                        kernels::softmax_backward_strided(node.value.data(), g.data(), &mut dx, bi * c * hw + p, c, hw);
                    }
                }
                out.push((*x, self.like(*x, dx)?));
            }
            Op::ConcatChannels { xs } => {
                let (b, total, h, w) = node.value.dims4().expect("concat output");
                let hw = h * w;
                let mut offset = 0;
                for &x in xs {
                    let c = self.val(x).shape()[1];
                    if want(x) {
                        let mut d = Vec::with_capacity(b * c * hw);
                        for bi in 0..b {
                            let start = (bi * total + offset) * hw;
                            d.extend_from_slice(&g.data()[start..start + c * hw]);
                        }
                        out.push((x, self.like(x, d)?));
                    }
                    offset += c;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (b, c, h, w) = self.val(*x).dims4().expect("batchnorm input");
                let hw = h * w;
                let gm = self.val(*gamma).data();
                let gd = g.data();
                let mut sum_g = vec![T::ZERO; c];
                let mut sum_gx = vec![T::ZERO; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] += gd[i];
                            sum_gx[ch] += gd[i] * xhat[i];
                        }
                    }
                }
                if want(*x) {
                    let mut dx = vec![T::ZERO; gd.len()];
                    let count = T::from_f64((b * hw) as f64);
                    for bi in 0..b {
                        for ch in 0..c {
                            let base = (bi * c + ch) * hw;
                            let scale = gm[ch] * inv_std[ch];
                            for i in base..base + hw {
                                dx[i] = match mode {
                                    BnMode::Train => {
                                        scale * (gd[i] - (sum_g[ch] + xhat[i] * sum_gx[ch]) / count)
                                    }
                                    BnMode::Eval => scale * gd[i],
                                };
                            }
                        }
                    }
                    out.push((*x, self.like(*x, dx)?));
                }
                if want(*gamma) {
                    out.push((*gamma, self.like(*gamma, sum_gx)?));
                }
                if want(*beta) {
                    out.push((*beta, self.like(*beta, sum_g)?));
                }
            }
            Op::AvgPool2d { x, k, s } => {
                let (b, c, h, w) = self.val(*x).dims4().expect("pool input");
                let (_, _, oh, ow) = node.value.dims4().expect("pool output");
                let mut dx = vec![T::ZERO; self.val(*x).numel()];
                kernels::avg_pool_backward(g.data(), b * c, h, w, *k, *s, oh, ow, &mut dx);
                out.push((*x, self.like(*x, dx)?));
            }
            Op::GlobalAvgPool { x } => {
                let (_, _, h, w) = self.val(*x).dims4().expect("pool input");
                let inv = T::from_f64(1.0 / (h * w) as f64);
                let mut dx = Vec::with_capacity(self.val(*x).numel());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv * inv, h * w));
                }
                out.push((*x, self.like(*x, dx)?));
            }
            Op::LsePool { x, r } => {
                let (_, _, h, w) = self.val(*x).dims4().expect("lse input");
                let hw = h * w;
                let mut dx = vec![T::ZERO; self.val(*x).numel()];
                for (plane_idx, (plane, dplane)) in
                    self.val(*x).data().chunks(hw).zip(dx.chunks_mut(hw)).enumerate()
                {
                    let gv = g.data()[plane_idx];
                    let mx = plane.iter().fold(plane[0] * *r, |m, &v| m.max(v * *r));
                    let mut total = T::ZERO;
                    for (d, &v) in dplane.iter_mut().zip(plane) {
                        *d = (v * *r - mx).exp();
                        total += *d;
                    }
                    for d in dplane.iter_mut() {
                        *d = gv * *d / total;
                    }
                }
                out.push((*x, self.like(*x, dx)?));
            }
            Op::Sum { x } => {
                let gv = g.item();
                out.push((*x, Tensor::full(self.val(*x).shape().to_vec(), gv)));
            }
            Op::Mean { x } => {
                let n = T::from_f64(self.val(*x).numel() as f64);
                out.push((*x, Tensor::full(self.val(*x).shape().to_vec(), g.item() / n)));
            }
            Op::ToNodes { x, item } => {
                let (_, c, h, w) = self.val(*x).dims4().expect("to_nodes input");
                let hw = h * w;
                let mut dx = vec![T::ZERO; self.val(*x).numel()];
                let block = transpose2(g.data(), hw, c);
                dx[item * c * hw..(item + 1) * c * hw].copy_from_slice(&block);
                out.push((*x, self.like(*x, dx)?));
            }
            Op::FromNodes { xs } => {
                let (_, c, h, w) = node.value.dims4().expect("from_nodes output");
                let hw = h * w;
                for (bi, &x) in xs.iter().enumerate() {
                    if want(x) {
                        let block = &g.data()[bi * c * hw..(bi + 1) * c * hw];
                        out.push((x, self.like(x, transpose2(block, c, hw))?));
                    }
                }
            }
            Op::SelectColumn { x, col } => {
                let (n, m) = self.val(*x).dims2().expect("select input");
                let mut dx = vec![T::ZERO; n * m];
                for r in 0..n {
                    dx[r * m + col] = g.data()[r];
                }
                out.push((*x, self.like(*x, dx)?));
            }
            Op::PermuteRows { x, perm } => {
                let m = g.shape()[1];
                let mut dx = vec![T::ZERO; g.numel()];
                for (i, &p) in perm.iter().enumerate() {
                    dx[p * m..(p + 1) * m].copy_from_slice(&g.data()[i * m..(i + 1) * m]);
                }
                out.push((*x, self.like(*x, dx)?));
            }
            Op::Bce { p, targets, clamped } => {
                let n = T::from_f64(targets.len() as f64);
                let gv = g.item();
                let d: Vec<T> = self
                    .val(*p)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(clamped)
                    .map(|((&pv, &t), &c)| {
                        if c {
                            T::ZERO
                        } else {
                            gv * (-(t / pv) + (T::ONE - t) / (T::ONE - pv)) / n
                        }
                    })
                    .collect();
                out.push((*p, self.like(*p, d)?));
            }
            Op::Mse { pred, targets } => {
                let n = T::from_f64(targets.len() as f64);
                let gv = g.item();
                let two = T::from_f64(2.0);
                let d: Vec<T> = self
                    .val(*pred)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &t)| gv * two * (p - t) / n)
                    .collect();
                out.push((*pred, self.like(*pred, d)?));
            }
            Op::Reshape { x } => {
                out.push((*x, g.clone().reshape(self.val(*x).shape().to_vec())?));
            }
        }
        out.retain(|(i, _)| want(*i));
        Ok(out)
    }
}

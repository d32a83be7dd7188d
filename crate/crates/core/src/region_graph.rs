//! Region composition graph: learned pairwise similarities over the feature
//! grid, softmax-normalized into an adjacency, followed by stacked graph
//! convolutions `Z <- ReLU(S Z W)`.

use rgnet_tensor::{Graph, Scalar, Tensor, TensorError, Var};

use crate::config::GraphConfig;
use crate::error::Result;
use crate::nn::{Ctx, Norm};
use crate::params::{Init, ParamId, ParamStore};

/// `raw[i][j] = (A x_i) . (B x_j)` for node rows `x` of `[N, d]`.
pub fn similarity<T: Scalar>(g: &mut Graph<T>, x: Var, a: Var, b: Var) -> Result<Var> {
    let at = g.transpose(a)?;
    let bt = g.transpose(b)?;
    let phi = g.matmul(x, at)?;
    let theta = g.matmul(x, bt)?;
    let theta_t = g.transpose(theta)?;
    Ok(g.matmul(phi, theta_t)?)
}

/// Row softmax of the raw similarities.
pub fn normalize<T: Scalar>(g: &mut Graph<T>, raw: Var) -> Result<Var> {
    Ok(g.softmax_rows(raw)?)
}

/// `Z_0 = x`, `Z_{i+1} = ReLU(S Z_i W_i)`. With `recompute` the adjacency is
/// rebuilt from `Z_i` before every layer after the first.
///
/// Nodes are processed sorted by their feature rows, so every sum over nodes
/// runs in the same order whatever order the caller lists them in, and the
/// result commutes with node permutations bit for bit.
pub fn graph_reason<T: Scalar>(g: &mut Graph<T>, x: Var, a: Var, b: Var, ws: &[Var], recompute: bool) -> Result<Var> {
    let (xs, order) = g.sort_rows(x)?;
    let raw = similarity(g, xs, a, b)?;
    let s = normalize(g, raw)?;
    let z = propagate(g, xs, s, ws, recompute.then_some((a, b)))?;
    let mut inverse = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inverse[o] = i;
    }
    Ok(g.permute_rows(z, &inverse)?)
}

/// Graph convolutions over a given adjacency `s`.
pub fn propagate<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mut s: Var,
    ws: &[Var],
    recompute: Option<(Var, Var)>,
) -> Result<Var> {
    let mut z = x;
    for (i, &w) in ws.iter().enumerate() {
        if let (Some((a, b)), true) = (recompute, i > 0) {
            let raw = similarity(g, z, a, b)?;
            s = normalize(g, raw)?;
        }
        let sz = g.matmul(s, z)?;
        let szw = g.matmul(sz, w)?;
        z = g.relu(szw)?;
    }
    Ok(z)
}

/// Cosine similarity between every pair of rows of `[N, d]`.
pub fn export_similarity<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<f64>> {
    let (n, d) = x.dims2().ok_or_else(|| TensorError::ShapeMismatch {
        op: "export_similarity",
        detail: format!("expected [N, d], got {:?}", x.shape()),
    })?;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| x.data()[i * d..(i + 1) * d].iter().map(|v| v.to_f64()).collect())
        .collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "export_similarity",
            detail: format!("row {i} has zero norm"),
        }
        .into());
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            out[i * n + j] = if i == j { 1.0 } else { dot / (norms[i] * norms[j]) };
        }
    }
    Ok(Tensor::new(vec![n, n], out)?)
}

#[derive(Debug, Clone)]
pub struct GraphParams {
    pub a: ParamId,
    pub b: ParamId,
    pub w: Vec<ParamId>,
}

fn near_identity<T: Scalar>(init: &mut Init, rows: usize, cols: usize, diag: f64, spread: f64) -> Tensor<T> {
    let mut t: Tensor<T> = init.normal(vec![rows, cols], spread);
    for i in 0..rows.min(cols) {
        let v = t.data()[i * cols + i];
        t.data_mut()[i * cols + i] = v + T::from_f64(diag);
    }
    t
}

/// Graph reasoning over each image's feature grid.
#[derive(Debug, Clone)]
pub struct RegionGraph {
    pub params: GraphParams,
    norm: Norm,
    recompute: bool,
}

impl RegionGraph {
    pub fn new<T: Scalar>(cfg: &GraphConfig, d: usize, store: &mut ParamStore<T>, init: &mut Init) -> Result<Self> {
        cfg.validate()?;
        let norm = Norm::new(store, "graph.bn", d);
        let e = cfg.embed_dim.unwrap_or(d);
        // Both transforms start near a scaled identity, so the similarity
        // begins as the plain inner product over normalized features with
        // logits of order one.
        let spread = (1.0 / (d as f64 * (e as f64).sqrt())).sqrt();
        let diag = 1.0 / (d as f64).sqrt();
        let a = store.add("graph.A", near_identity(init, e, d, diag, spread));
        let b = store.add("graph.B", near_identity(init, e, d, diag, spread));
        let w = (0..cfg.blocks)
            .map(|i| store.add(format!("graph.W{i}"), init.he_normal(vec![d, d], d)))
            .collect();
        Ok(Self {
            params: GraphParams { a, b, w },
            norm,
            recompute: cfg.recompute_adjacency,
        })
    }

    /// `[B, d, H, W]` in, same shape out; each image is its own graph over
    /// its batch-normalized features.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let x = self.norm.forward(ctx, x)?;
        let (a, b) = (ctx.var(self.params.a), ctx.var(self.params.b));
        let ws: Vec<Var> = self.params.w.iter().map(|&w| ctx.var(w)).collect();
        let shape = ctx.g.shape(x).to_vec();
        let (batch, h, w) = (shape[0], shape[2], shape[3]);
        let mut outs = Vec::with_capacity(batch);
        for item in 0..batch {
            let nodes = ctx.g.to_nodes(x, item)?;
            outs.push(graph_reason(ctx.g, nodes, a, b, &ws, self.recompute)?);
        }
        Ok(ctx.g.from_nodes(&outs, h, w)?)
    }
}

//! Network building blocks on top of the tape: multi-layer perceptrons,
//! scaled dot-product cross-attention, softmax and max-pool wrappers.

use crate::error::{Error, Result};
use crate::neural::graph::{softmax_row_values, Graph, Var};
use crate::neural::params::ParamStore;
use crate::neural::tensor::Tensor;

/// Applies the perceptron stack stored under `prefix.0`, `prefix.1`, ... to
/// the rows of `x`. ReLU sits between layers; the final layer stays affine.
/// `layers` is the layer count (a single layer is one affine map).
pub fn mlp_apply(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    x: Var,
) -> Result<Var> {
    if layers == 0 {
        return Err(Error::Config(format!("{prefix}: zero-layer perceptron")));
    }
    let mut h = x;
    for layer in 0..layers {
        let w = g.param(store, &format!("{prefix}.{layer}.w"))?;
        let b = g.param(store, &format!("{prefix}.{layer}.b"))?;
        if h.cols != w.rows {
            return Err(Error::Shape(format!(
                "{prefix}.{layer}: input width {} vs weight fan-in {}",
                h.cols, w.rows
            )));
        }
        let z = g.matmul(h, w);
        h = g.add_row(z, b);
        if layer + 1 < layers {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Registers the parameters consumed by [`mlp_apply`]: `layers` affine maps
/// whose widths walk through `dims` (so `dims.len() == layers + 1`).
pub fn mlp_register(store: &mut ParamStore, prefix: &str, dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "{prefix}: perceptron needs at least input and output widths"
        )));
    }
    for (layer, pair) in dims.windows(2).enumerate() {
        store.add_linear(&format!("{prefix}.{layer}"), pair[0], pair[1])?;
    }
    Ok(())
}

/// Scaled dot-product cross-attention with learned projections under
/// `prefix` (`wq`, `wk`, `wv`, `wo`): softmax(Q K^T / sqrt(d)) V, projected
/// back by `wo`. Queries keep their row count; keys and values agree.
pub fn cross_attention(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    queries: Var,
    keys: Var,
    values: Var,
) -> Result<Var> {
    if keys.rows == 0 {
        return Err(Error::Empty("attention keys"));
    }
    if keys.rows != values.rows {
        return Err(Error::Shape(format!(
            "{prefix}: {} keys vs {} values",
            keys.rows, values.rows
        )));
    }
    let wq = g.param(store, &format!("{prefix}.wq"))?;
    let wk = g.param(store, &format!("{prefix}.wk"))?;
    let wv = g.param(store, &format!("{prefix}.wv"))?;
    let wo = g.param(store, &format!("{prefix}.wo"))?;
    if queries.cols != wq.rows || keys.cols != wk.rows || values.cols != wv.rows {
        return Err(Error::Shape(format!(
            "{prefix}: projection fan-in mismatch (q {} vs {}, k {} vs {}, v {} vs {})",
            queries.cols, wq.rows, keys.cols, wk.rows, values.cols, wv.rows
        )));
    }
    let q = g.matmul(queries, wq);
    let k = g.matmul(keys, wk);
    let v = g.matmul(values, wv);
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt);
    let scaled = g.scale(scores, 1.0 / (wq.cols as f64).sqrt());
    let weights = g.softmax_rows(scaled);
    let mixed = g.matmul(weights, v);
    Ok(g.matmul(mixed, wo))
}

/// Registers `wq`/`wk`/`wv`/`wo` for [`cross_attention`] with model width
/// `dim` on every projection.
pub fn attention_register(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<()> {
    store.add_matrix(&format!("{prefix}.wq"), dim, dim)?;
    store.add_matrix(&format!("{prefix}.wk"), dim, dim)?;
    store.add_matrix(&format!("{prefix}.wv"), dim, dim)?;
    store.add_matrix(&format!("{prefix}.wo"), dim, dim)
}

/// Value-level softmax over a flat slice with the same canonical summation
/// as the graph op.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    Ok(softmax_row_values(values))
}

/// Value-level column-wise max over rows.
pub fn max_pool_rows(x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = (x.rows(), x.cols());
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("max_pool_rows input"));
    }
    let data = x.data();
    let mut out = data[..cols].to_vec();
    for r in 1..rows {
        for c in 0..cols {
            let v = data[r * cols + c];
            if v > out[c] {
                out[c] = v;
            }
        }
    }
    Tensor::new(vec![cols], out)
}

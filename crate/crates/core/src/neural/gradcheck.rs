//! Central-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::neural::graph::{Gradients, Graph, Var};
use crate::neural::params::ParamStore;
use crate::par::{map_ordered, Parallelism};

/// Worst case found by a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

fn eval_loss<F>(loss_fn: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    if !loss.is_scalar() {
        return Err(Error::Shape(format!(
            "loss must be 1x1, got {}x{}",
            loss.rows, loss.cols
        )));
    }
    let v = g.scalar_value(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite("loss value"));
    }
    Ok(v)
}

/// Floor for the relative-error denominator. Central differences carry
/// roundoff noise of roughly ulp(loss) / (2 * eps), about 1e-10 for a
/// loss near 10 at eps 1e-5, so gradients smaller than this floor are
/// effectively compared absolutely against that noise; a tighter floor
/// would fail correct gradients.
const REL_ERR_FLOOR: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Runs backward once, then sweeps every coordinate of every bound
/// parameter with a central difference of width `2 * eps` and reports the
/// largest relative error.
pub fn finite_diff_check<F>(
    loss_fn: F,
    store: &ParamStore,
    eps: f64,
    par: Parallelism,
) -> Result<FdReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var> + Sync,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let grads = g.backward(loss)?;
    finite_diff_against(loss_fn, store, &grads, eps, par)
}

/// Same sweep, but compares against caller-supplied gradients. Feeding a
/// corrupted gradient here is the standard negative control showing the
/// sweep can actually fail.
pub fn finite_diff_against<F>(
    loss_fn: F,
    store: &ParamStore,
    grads: &Gradients,
    eps: f64,
    par: Parallelism,
) -> Result<FdReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var> + Sync,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("finite-difference eps {eps}")));
    }
    let coords: Vec<(String, usize, f64)> = grads
        .iter()
        .flat_map(|(name, tensor)| {
            tensor
                .data()
                .iter()
                .enumerate()
                .map(move |(i, &a)| (name.to_string(), i, a))
        })
        .collect();
    if coords.is_empty() {
        return Err(Error::Empty("no bound parameters to check"));
    }

    let results: Vec<Result<(f64, f64, f64)>> = map_ordered(par, &coords, |(name, i, analytic)| {
        let mut plus = store.clone();
        plus.get_mut(name)?.data_mut()[*i] += eps;
        let mut minus = store.clone();
        minus.get_mut(name)?.data_mut()[*i] -= eps;
        let numeric = (eval_loss(&loss_fn, &plus)? - eval_loss(&loss_fn, &minus)?) / (2.0 * eps);
        Ok((relative_error(*analytic, numeric), *analytic, numeric))
    });

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: coords[0].0.clone(),
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: coords.len(),
    };
    for ((name, i, _), res) in coords.iter().zip(results) {
        let (err, analytic, numeric) = res?;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = name.clone();
            report.worst_coord = *i;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layers::{mlp_apply, mlp_register};
    use crate::neural::tensor::Tensor;

    #[test]
    fn quadratic_loss_passes_tightly() {
        let mut store = ParamStore::new(5);
        store
            .insert(
                "w",
                Tensor::new(vec![3], vec![0.7, -1.3, 0.4]).unwrap().with_grad(),
            )
            .unwrap();
        // loss = sum((w - c)^2)
        let loss_fn = |g: &mut Graph, s: &ParamStore| {
            let w = g.param(s, "w")?;
            let c = g.row(&[1.0, 2.0, 3.0]);
            let d = g.sub(w, c);
            let sq = g.mul(d, d);
            Ok(g.sum_all(sq))
        };
        let report =
            finite_diff_check(loss_fn, &store, 1e-5, Parallelism::Sequential).unwrap();
        assert!(report.max_rel_err < 1e-7, "rel err {}", report.max_rel_err);
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn mlp_loss_passes() {
        let mut store = ParamStore::new(11);
        mlp_register(&mut store, "net", &[2, 4, 1]).unwrap();
        let loss_fn = |g: &mut Graph, s: &ParamStore| {
            let x = g.row(&[0.3, -0.9]);
            let y = mlp_apply(g, s, "net", 2, x)?;
            let sq = g.mul(y, y);
            Ok(g.sum_all(sq))
        };
        let report = finite_diff_check(loss_fn, &store, 1e-5, Parallelism::Rayon).unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut store = ParamStore::new(5);
        store
            .insert("w", Tensor::new(vec![2], vec![0.5, 0.25]).unwrap().with_grad())
            .unwrap();
        let loss_fn = |g: &mut Graph, s: &ParamStore| {
            let w = g.param(s, "w")?;
            let sq = g.mul(w, w);
            Ok(g.sum_all(sq))
        };
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, &store).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut corrupted = Gradients::default();
        for (name, tensor) in grads.iter() {
            let mut data = tensor.data().to_vec();
            data[0] += 0.5;
            corrupted.insert(
                name.to_string(),
                Tensor::new(tensor.shape().to_vec(), data).unwrap(),
            );
        }
        let report =
            finite_diff_against(loss_fn, &store, &corrupted, 1e-5, Parallelism::Sequential)
                .unwrap();
        assert!(report.max_rel_err > 1e-2, "rel err {}", report.max_rel_err);
        assert_eq!(report.worst_param, "w");
        assert_eq!(report.worst_coord, 0);
    }

    #[test]
    fn invalid_eps_rejected() {
        let mut store = ParamStore::new(0);
        store
            .insert("w", Tensor::new(vec![1], vec![1.0]).unwrap().with_grad())
            .unwrap();
        let loss_fn = |g: &mut Graph, s: &ParamStore| {
            let w = g.param(s, "w")?;
            Ok(g.sum_all(w))
        };
        assert!(
            finite_diff_check(loss_fn, &store, 0.0, Parallelism::Sequential).is_err()
        );
    }
}

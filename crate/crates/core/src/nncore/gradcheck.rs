use super::graph::{Graph, ParamStore, Var};
use crate::error::Result;

/// Compares reverse-mode gradients of a scalar function of `params` against
/// central finite differences and returns the largest relative error
/// `|a - n| / max(1e-8, |a| + |n|)`.
///
/// `max_coords` caps the coordinates checked per parameter; they are spread
/// evenly over the tensor. The forward function must be deterministic (any
/// dropout should reseed its stream on every call).
pub fn grad_check<Fwd>(params: &mut ParamStore<f64>, forward: Fwd, eps: f64, max_coords: Option<usize>) -> Result<f64>
where
    Fwd: for<'a> Fn(&mut Graph<'a, f64>) -> Result<Var>,
{
    params.zero_grad();
    let grads = {
        let mut g = Graph::new(&*params);
        let loss = forward(&mut g)?;
        g.backward(loss)?
    };
    params.accumulate(&grads);
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();

    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(params);
        let loss = forward(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = params.ids().collect();
    for (id, grad) in ids.into_iter().zip(analytic) {
        let n = grad.len();
        let take = max_coords.unwrap_or(n).min(n);
        for j in 0..take {
            let i = if take == n { j } else { j * n / take };
            let orig = params.value(id).data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    params.zero_grad();
    Ok(worst)
}

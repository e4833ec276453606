use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamStore, Precision};
use crate::rng::RngState;

/// Denominator floor for the relative error `|a - n| / max(|a|, |n|, floor)`.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares autodiff gradients with central differences.
///
/// `loss` rebuilds the graph from the current store values and returns the
/// scalar loss node. Tensors larger than `max_coords` are checked on a random
/// subsample of that many coordinates drawn from `rng`.
pub fn grad_check<F>(
    store: &mut ParamStore,
    epsilon: f64,
    max_coords: usize,
    rng: &mut RngState,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, NodeId)>,
{
    if store.precision() != Precision::F64 {
        return Err(TensorError::Config("gradient checks need f64 storage".into()));
    }
    let (graph, root) = loss(store)?;
    let grads = graph.backward(root)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    let ids: Vec<_> = store.ids().filter(|&id| store.param(id).trainable).collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut all);
            all.truncate(max_coords);
            all.sort_unstable();
            all
        };
        let analytic = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for c in coords {
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + epsilon;
            let plus = eval(&mut loss, store)?;
            store.value_mut(id).data_mut()[c] = orig - epsilon;
            let minus = eval(&mut loss, store)?;
            store.value_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = relative_error(analytic[c], numeric);
            let abs = (analytic[c] - numeric).abs();
            report.coordinates_checked += 1;
            report.max_absolute_error = report.max_absolute_error.max(abs);
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((store.name(id).to_string(), c));
            }
        }
    }
    Ok(report)
}

fn eval<F>(loss: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(Graph, NodeId)>,
{
    let (g, root) = loss(store)?;
    Ok(g.value(root).data()[0])
}

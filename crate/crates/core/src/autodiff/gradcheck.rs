use super::{AutodiffError, Graph, NodeId, ParamStore};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: Option<String>,
    /// Analytic and numeric values at the worst coordinate.
    pub worst_pair: (f64, f64),
    pub checked: usize,
    /// `(analytic, numeric)` for every coordinate, in parameter order.
    pub pairs: Vec<(f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of `loss_fn` with central differences on
/// every scalar of every parameter. `loss_fn` must be deterministic (build
/// its graph with [`Graph::new`], not a dropout-enabled training graph).
pub fn grad_check<F>(params: &mut ParamStore, loss_fn: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph) -> Result<NodeId, AutodiffError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    let eval = |params: &ParamStore| -> Result<f64, AutodiffError> {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        g.scalar(loss)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_parameter: None,
        worst_pair: (0.0, 0.0),
        checked: 0,
        pairs: Vec::new(),
    };
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = params.value(id).len();
        for j in 0..n {
            let orig = params.value(id).data()[j];
            params.get_mut(id).value.data_mut()[j] = orig + GRAD_CHECK_STEP;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[j] = orig - GRAD_CHECK_STEP;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[j]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            report.pairs.push((a, numeric));
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_parameter = Some(format!("{}[{j}]", params.get(id).name));
                report.worst_pair = (a, numeric);
            }
        }
    }
    Ok(report)
}

use super::{DiffError, Graph, ParameterSet, Var};

/// Compares analytic gradients against central differences.
///
/// `build` must construct the scalar expression from the parameter values it
/// is handed; it is called once for the analytic pass and twice per
/// parameter entry. Returns the maximum over all entries of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn check_gradient<F>(build: F, params: &mut ParameterSet, step: f64) -> Result<f64, DiffError>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var, DiffError>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(DiffError::InvalidStep(step));
    }
    let mut graph = Graph::new();
    let root = build(&mut graph, params)?;
    graph.gradient(root, params)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.values().to_vec()).collect();

    let eval = |params: &ParameterSet| -> Result<f64, DiffError> {
        let mut g = Graph::new();
        let root = build(&mut g, params)?;
        let value = g.value(root);
        value.item().ok_or_else(|| DiffError::NonScalarRoot {
            shape: value.shape().to_vec(),
        })
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for k in 0..params.get(id).value.len() {
            let original = params.get(id).value.values()[k];
            params.get_mut(id).value.values_mut()[k] = original + step;
            let plus = eval(params)?;
            params.get_mut(id).value.values_mut()[k] = original - step;
            let minus = eval(params)?;
            params.get_mut(id).value.values_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[pi][k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

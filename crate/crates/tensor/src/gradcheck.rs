use crate::{Graph, NodeId, ParamSet, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over all parameter scalars of |analytic − fd| / (|analytic| + |fd| + floor).
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare tape gradients of a scalar loss against central finite
/// differences for every scalar of every trainable parameter.
///
/// `build` must construct the loss from scratch on the graph it is given.
pub fn grad_check<F>(params: &mut ParamSet, h: f64, floor: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    params.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    g.backward(loss)?;
    g.accumulate_param_grads(params);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        Ok(g.value(loss).data()[0])
    };
    let ids: Vec<_> = params.iter().filter(|(_, p)| p.requires_grad).map(|(id, _)| id).collect();
    for id in ids {
        let analytic = params
            .get(id)
            .grad()
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; params.value(id).numel()]);
        for j in 0..analytic.len() {
            let orig = params.value(id).data()[j];
            params.get_mut(id).value_mut().data_mut()[j] = orig + h;
            let up = eval(params)?;
            params.get_mut(id).value_mut().data_mut()[j] = orig - h;
            let down = eval(params)?;
            params.get_mut(id).value_mut().data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (analytic[j] - fd).abs() / (analytic[j].abs() + fd.abs() + floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = params.get(id).name.clone();
                report.worst_index = j;
            }
        }
    }
    params.zero_grads();
    Ok(report)
}

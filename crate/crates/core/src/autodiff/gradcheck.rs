//! Central finite-difference verification of analytic gradients.
//!
//! Analytic gradients are computed at the precision under test; the
//! finite-difference oracle always evaluates the loss in double precision
//! (same parameter values, exactly converted) so the comparison is limited
//! by the gradients, not by forward-pass rounding noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::exec::{run_backward, run_forward, Mode, Objective};
use super::{NetworkGraph, NodeId, OpKind};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Worst relative finite-difference error per parameter (plus the graph
/// input under the pseudo-name "(input)").
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub worst: f64,
    /// (name, coordinate, analytic, finite difference) behind `worst`.
    pub worst_detail: (String, usize, f64, f64),
}

fn param_nodes(graph: &NetworkGraph) -> Vec<(usize, NodeId)> {
    graph
        .nodes()
        .iter()
        .enumerate()
        .filter_map(|(id, n)| match n.kind {
            OpKind::Param(p) => Some((p, id)),
            _ => None,
        })
        .collect()
}

// Coordinates at their parameter's gradient scale are compared relatively;
// smaller ones against a floor combining the parameter-local and
// network-global gradient scales, since a coordinate's single-precision
// content is bounded by the computation's absolute rounding noise.
fn worst_relative_error(
    pairs: &[(usize, f64, f64)],
    local_scale: f64,
    global_scale: f64,
    floor: f64,
) -> (f64, (usize, f64, f64)) {
    let mut worst = 0.0f64;
    let mut detail = (0usize, 0.0, 0.0);
    for (c, a, n) in pairs {
        let denom = a
            .abs()
            .max(n.abs())
            .max(0.5 * local_scale + 0.01 * global_scale + floor);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
            detail = (*c, *a, *n);
        }
    }
    (worst, detail)
}

/// Central difference at a cascade of shrinking steps. Returns the finest
/// estimate once two consecutive levels agree, or None when the estimate
/// never stabilizes (a ReLU/max tie inside the probe radius).
fn stable_central_difference(
    mut eval: impl FnMut(f64) -> Result<f64>,
    theta: f64,
    eps0: f64,
    floor: f64,
) -> Result<Option<f64>> {
    let mut prev: Option<f64> = None;
    let mut eps = eps0 * (1.0 + theta.abs());
    for _ in 0..3 {
        let plus = eval(theta + eps)?;
        let minus = eval(theta - eps)?;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(
                "grad_check: perturbed loss is non-finite".into(),
            ));
        }
        let fd = (plus - minus) / (2.0 * eps);
        if let Some(p) = prev {
            if (fd - p).abs() <= 1e-3 * fd.abs().max(p.abs()).max(10.0 * floor) {
                eval(theta)?;
                return Ok(Some(fd));
            }
        }
        prev = Some(fd);
        eps /= 32.0;
    }
    eval(theta)?;
    Ok(None)
}

/// Compare analytic parameter gradients (and the input gradient) against
/// `(L(t+e) - L(t-e)) / 2e` at `samples_per_param` random coordinates of
/// every trainable parameter, with the step scaled to each coordinate.
/// Coordinates sitting against a ReLU/max tie (unstable difference
/// quotients) are excluded, per the tie-routing convention.
pub fn grad_check_t<T, O>(
    graph: &NetworkGraph,
    input: &Tensor<T>,
    aux: &[(NodeId, Tensor<T>)],
    objective: &O,
    mode: Mode,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    O: Objective<T> + Objective<f64>,
{
    // Analytic pass at the precision under test.
    let params = graph.param_values::<T>();
    let mut exec = run_forward(graph, &params, input, aux, mode)?;
    let base = Objective::<T>::value(objective, graph, &exec)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("grad_check: loss is {base}")));
    }
    let (seed_node, seed_tensor) = Objective::<T>::seed(objective, graph, &exec)?;
    run_backward(graph, &params, &mut exec, seed_node, seed_tensor)?;

    // Finite-difference oracle in double precision over the same values.
    let mut params64: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.iter().map(|v| v.to_f64()).collect())
        .collect();
    let input64: Tensor<f64> = input.cast::<f64>();
    let aux64: Vec<(NodeId, Tensor<f64>)> =
        aux.iter().map(|(id, t)| (*id, t.cast::<f64>())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_rel = T::fd_epsilon();
    let floor = T::fd_noise_floor();

    let mut sampled: Vec<(String, Vec<(usize, f64, f64)>)> = Vec::new();

    for (p_idx, node_id) in param_nodes(graph) {
        if !graph.params()[p_idx].trainable {
            continue;
        }
        let analytic: Vec<f64> = match exec.grad(node_id) {
            Some(g) => g.data().iter().map(|v| v.to_f64()).collect(),
            None => vec![0.0; params[p_idx].len()],
        };
        let len = params64[p_idx].len();
        let k = samples_per_param.min(len);
        let coords = rand::seq::index::sample(&mut rng, len, k);
        let mut pairs = Vec::with_capacity(k);
        for c in coords.iter() {
            let theta = params64[p_idx][c];
            let fd = stable_central_difference(
                |v| {
                    params64[p_idx][c] = v;
                    let e = run_forward(graph, &params64, &input64, &aux64, mode)?;
                    Objective::<f64>::value(objective, graph, &e)
                },
                theta,
                eps_rel,
                floor,
            )?;
            params64[p_idx][c] = theta;
            if let Some(fd) = fd {
                pairs.push((c, analytic[c], fd));
            }
        }
        sampled.push((graph.params()[p_idx].name.clone(), pairs));
    }

    // The input gradient feeds the per-channel response analysis; verify it
    // the same way.
    {
        let analytic: Vec<f64> = match exec.grad(graph.input_node()) {
            Some(g) => g.data().iter().map(|v| v.to_f64()).collect(),
            None => vec![0.0; input.len()],
        };
        let mut perturbed = input64.clone();
        let k = samples_per_param.min(perturbed.len());
        let coords = rand::seq::index::sample(&mut rng, perturbed.len(), k);
        let mut pairs = Vec::with_capacity(k);
        for c in coords.iter() {
            let theta = perturbed.data()[c];
            let fd = stable_central_difference(
                |v| {
                    perturbed.data_mut()[c] = v;
                    let e = run_forward(graph, &params64, &perturbed, &aux64, mode)?;
                    Objective::<f64>::value(objective, graph, &e)
                },
                theta,
                eps_rel,
                floor,
            )?;
            perturbed.data_mut()[c] = theta;
            if let Some(fd) = fd {
                pairs.push((c, analytic[c], fd));
            }
        }
        sampled.push(("(input)".into(), pairs));
    }

    let global_scale = sampled
        .iter()
        .flat_map(|(_, pairs)| pairs.iter().map(|(_, a, n)| a.abs().max(n.abs())))
        .fold(0.0f64, f64::max);

    let mut report = GradCheckReport {
        per_param: Vec::new(),
        worst: 0.0,
        worst_detail: (String::new(), 0, 0.0, 0.0),
    };
    for (name, pairs) in sampled {
        let local_scale = pairs
            .iter()
            .map(|(_, a, n)| a.abs().max(n.abs()))
            .fold(0.0f64, f64::max);
        let (worst, detail) = worst_relative_error(&pairs, local_scale, global_scale, floor);
        if worst > report.worst {
            report.worst = worst;
            report.worst_detail = (name.clone(), detail.0, detail.1, detail.2);
        }
        report.per_param.push((name, worst));
    }
    Ok(report)
}

/// Single-precision convenience wrapper.
pub fn grad_check<O>(
    graph: &NetworkGraph,
    input: &Tensor<f32>,
    aux: &[(NodeId, Tensor<f32>)],
    objective: &O,
    mode: Mode,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    O: Objective<f32> + Objective<f64>,
{
    grad_check_t(graph, input, aux, objective, mode, samples_per_param, seed)
}

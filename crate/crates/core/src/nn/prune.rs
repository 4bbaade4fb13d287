use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Zero the globally smallest-magnitude `round(fraction * weights)` weights
/// (ties broken by position) and mask them out of later updates. Returns the
/// pruned model and the fraction of weights removed.
pub fn prune_by_magnitude(model: &Mlp, fraction: f64) -> Result<(Mlp, f64)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Domain(format!(
            "pruning fraction {fraction} outside [0, 1)"
        )));
    }
    let total = model.weight_count();
    let count = (fraction * total as f64).round() as usize;
    if count == 0 {
        return Ok((model.clone(), 0.0));
    }
    let mut order: Vec<(usize, usize, f64)> = model
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(li, l)| {
            l.weights
                .iter()
                .enumerate()
                .map(move |(wi, w)| (li, wi, w.abs()))
        })
        .collect();
    order.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut pruned = model.clone();
    let layers = pruned.layers_mut();
    for &(li, wi, _) in order.iter().take(count) {
        let l = &mut layers[li];
        l.weights[wi] = 0.0;
        let n = l.weights.len();
        l.mask.get_or_insert_with(|| vec![true; n])[wi] = false;
    }
    Ok((pruned, count as f64 / total as f64))
}

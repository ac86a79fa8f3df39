use crate::error::{Error, Result};
use crate::param::Parameter;

/// Magnitude pruning of one weight tensor.
///
/// Exactly `round(st * n)` entries end up masked: previously masked entries
/// come first, then the remaining weights by ascending `|w|`, ties broken by
/// ascending flat index. Masks only ever grow. Returns the masked count.
pub fn apply_sparsity_pruning(param: &mut Parameter, st: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&st) {
        return Err(Error::Config(format!("sparsity must lie in [0, 1), got {st}")));
    }
    let n = param.len();
    let k = (st * n as f64).round() as usize;
    if k > 0 {
        let values = param.value.data();
        let mask = param.sparsity_mask.data();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ka = (mask[a] != 0.0, values[a].abs());
            let kb = (mask[b] != 0.0, values[b].abs());
            ka.0.cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(a.cmp(&b))
        });
        let mask = param.sparsity_mask.data_mut();
        for &i in &order[..k] {
            mask[i] = 0.0;
        }
        param.apply_mask();
    }
    Ok(param.masked_count())
}

//! Leave-one-out baseline tests and univariable-ranked subset selection.

use crate::error::Result;
use crate::linmodel::{correlation_matrix, CompressedSystem, Dataset, ModelId};
use crate::special::chi2_1_sf_half;

/// p-values of the drop-one tests against the grand alternative.
///
/// Entry `j` is `Pr(chi2_1 >= 2 log R)` where `R` is the maximized likelihood
/// ratio of the full model against the model without variable `j`.
pub fn leave_one_out_tests(data: &Dataset) -> Result<Vec<f64>> {
    let nu = data.nu();
    let sys = CompressedSystem::new(data)?;
    let full = ModelId((1u64 << nu) - 1);
    let lf = sys.log_mlr(full)?;
    (0..nu)
        .map(|j| {
            let l = sys.log_mlr(ModelId(full.0 & !(1u64 << j)))?;
            Ok(chi2_1_sf_half((lf - l).max(0.0)))
        })
        .collect()
}

/// Single-variable likelihood-ratio p-values, one per candidate.
pub fn univariable_tests(data: &Dataset) -> Result<Vec<f64>> {
    let sys = CompressedSystem::new(data)?;
    (0..data.nu()).map(|j| Ok(chi2_1_sf_half(sys.log_mlr(ModelId(1u64 << j))?))).collect()
}

/// Rank variables by univariable evidence and admit up to `max_vars`.
///
/// A candidate is skipped when its absolute correlation exceeds `rho_cap`
/// with two or more variables already admitted. Ranking uses the
/// likelihood ratio directly, so p-values that underflow still order
/// correctly; ties go to the lower column index.
pub fn select_subset(data: &Dataset, max_vars: usize, rho_cap: f64) -> Result<Vec<usize>> {
    let nu = data.nu();
    let sys = CompressedSystem::new(data)?;
    let corr = correlation_matrix(data)?;
    let mut scored: Vec<(f64, usize)> =
        (0..nu).map(|j| Ok((sys.log_mlr(ModelId(1u64 << j))?, j))).collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut admitted: Vec<usize> = Vec::new();
    for (_, j) in scored {
        if admitted.len() >= max_vars {
            break;
        }
        let close = admitted.iter().filter(|&&a| corr.get(a, j).abs() > rho_cap).count();
        if close < 2 {
            admitted.push(j);
        }
    }
    Ok(admitted)
}

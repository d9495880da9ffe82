//! Shared inputs for the criterion benches.

use reflow_core::data::{gen_power_law_ensemble, PowerLawFieldSpec};
use reflow_core::{Ensemble, Result};

/// 1D power-law ensemble with `members` fields on `n` points.
pub fn power_law(n: usize, members: usize) -> Result<Ensemble> {
    gen_power_law_ensemble(&PowerLawFieldSpec::new_1d(n, 2.0, 1.0, (n / 2) as f64, 1), members)
}

use alloc::vec::Vec;

use super::{ConstraintSubmanifold, GeomError, SolveOptions};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeSampling {
    pub count: usize,
    /// Fiber-norm range of accepted samples.
    pub radii: (f64, f64),
    /// Box for the non-fiber coordinates of the seeds.
    pub base_box: (f64, f64),
    pub seed: u64,
    /// Attempts allowed per requested sample before reporting starvation.
    pub budget_factor: usize,
}

impl Default for ConeSampling {
    fn default() -> Self {
        Self { count: 100, radii: (1.0, 1.0), base_box: (-1.0, 1.0), seed: 1, budget_factor: 50 }
    }
}

/// Random seeds projected onto a conic constraint set, rescaled along the
/// fiber and filtered against the domain and singular loci.
pub fn sample_cone(sub: &ConstraintSubmanifold, spec: &ConeSampling) -> Result<Vec<Vec<f64>>, GeomError> {
    if !sub.is_conic() {
        return Err(GeomError::Unsupported("cone sampling needs a conic constraint set".into()));
    }
    let n = sub.ambient_dim();
    let mut r = rng::seeded(spec.seed);
    let opts = SolveOptions::default();
    let budget = spec.count.max(1) * spec.budget_factor;
    let mut out = Vec::with_capacity(spec.count);
    let mut attempts = 0;
    while out.len() < spec.count && attempts < budget {
        attempts += 1;
        let mut seed: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, spec.base_box.0, spec.base_box.1)).collect();
        let dir = rng::unit_vector(&mut r, sub.fiber().len());
        for (&s, d) in sub.fiber().iter().zip(&dir) {
            seed[s] = *d;
        }
        let p = sub.project(&seed, &opts)?;
        if !p.converged {
            continue;
        }
        let mut x = p.point;
        let radius = rng::uniform(&mut r, spec.radii.0, spec.radii.1);
        sub.normalize_fiber(&mut x);
        sub.scale_fiber(&mut x, radius);
        let scale = 1.0 + crate::linalg::norm(&x);
        if sub.residual_norm(&x).map_or(true, |res| res > 1e-8 * scale) || !sub.in_domain(&x) {
            continue;
        }
        out.push(x);
    }
    if out.len() < spec.count {
        return Err(GeomError::Starvation { accepted: out.len(), attempts });
    }
    Ok(out)
}

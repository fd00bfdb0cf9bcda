use super::GeomError;

/// Chart descriptor for the symplectic form.
///
/// `Single { n }`: `T*R^n` in order `(z, ζ)`, `ω = dz∧dζ`.
/// `Product { n }`: `T*(R^n × R^n)` in order `(z, ζ, z′, ζ′)`,
/// `ω = dz∧dζ − dz′∧dζ′` (unprimed factor positive, primed negative).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymplecticSpace {
    Single { n: usize },
    Product { n: usize },
}

impl SymplecticSpace {
    pub fn dim(self) -> usize {
        match self {
            SymplecticSpace::Single { n } => 2 * n,
            SymplecticSpace::Product { n } => 4 * n,
        }
    }
}

fn block(u: &[f64], v: &[f64], off: usize, n: usize) -> f64 {
    (0..n).map(|i| u[off + i] * v[off + n + i] - u[off + n + i] * v[off + i]).sum()
}

pub fn symplectic_form_value(space: SymplecticSpace, u: &[f64], v: &[f64]) -> Result<f64, GeomError> {
    let d = space.dim();
    for w in [u, v] {
        if w.len() != d {
            return Err(GeomError::DimensionMismatch { expected: d, found: w.len() });
        }
    }
    Ok(match space {
        SymplecticSpace::Single { n } => block(u, v, 0, n),
        SymplecticSpace::Product { n } => block(u, v, 0, n) - block(u, v, 2 * n, n),
    })
}

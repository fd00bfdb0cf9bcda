//! Brute-force oracles: Gaussian-damped oscillatory quadrature with
//! Richardson extrapolation in the damping parameter, the trace kernel, a
//! direct evaluation of the big amplitude integral, and a wave-packet test of
//! the traced operator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::expr::{CompiledExpr, Expression};
use crate::linalg;
use crate::phase::{Amplitude, PhaseError, PhaseFunction};
use crate::quad::gauss_legendre_on;
use crate::stationary::{StationaryError, StationaryProblem};
use crate::trace::RestrictedPhase;

#[derive(Clone, Debug, PartialEq)]
pub enum OracleError {
    Phase(PhaseError),
    Stationary(StationaryError),
    Spec(String),
    /// Extrapolation corrections grew; the ε-trace is attached.
    Inconclusive { trace: Vec<(f64, Complex64)>, corrections: Vec<f64> },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::Phase(e) => write!(f, "{e}"),
            OracleError::Stationary(e) => write!(f, "{e}"),
            OracleError::Spec(m) => write!(f, "oracle specification: {m}"),
            OracleError::Inconclusive { trace, corrections } => {
                write!(f, "extrapolation inconclusive: corrections {corrections:?}, ε-trace {trace:?}")
            }
        }
    }
}

impl core::error::Error for OracleError {}

impl From<PhaseError> for OracleError {
    fn from(e: PhaseError) -> Self {
        OracleError::Phase(e)
    }
}

impl From<StationaryError> for OracleError {
    fn from(e: StationaryError) -> Self {
        OracleError::Stationary(e)
    }
}

impl From<crate::expr::EvalError> for OracleError {
    fn from(e: crate::expr::EvalError) -> Self {
        OracleError::Phase(PhaseError::Eval(e))
    }
}

/// Damping sequence, tensor Gauss–Legendre grid and extrapolation order.
/// Per-dimension vectors of length one apply to every dimension; empty
/// `radii` means `6/√ε_min` and empty `centers` means 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MollifiedIntegralSpec {
    pub epsilons: Vec<f64>,
    pub nodes: Vec<usize>,
    pub radii: Vec<f64>,
    pub centers: Vec<f64>,
    pub order: usize,
    /// Permit radii below `6/√ε_min` (amplitudes with compact support).
    pub allow_short_radius: bool,
}

impl Default for MollifiedIntegralSpec {
    fn default() -> Self {
        Self {
            epsilons: alloc::vec![0.4, 0.2, 0.1, 0.05],
            nodes: alloc::vec![96],
            radii: Vec::new(),
            centers: Vec::new(),
            order: 2,
            allow_short_radius: false,
        }
    }
}

fn per_dim<T: Copy>(v: &[T], d: usize, default: T) -> T {
    match v.len() {
        0 => default,
        1 => v[0],
        _ => v.get(d).copied().unwrap_or(default),
    }
}

impl MollifiedIntegralSpec {
    pub fn with_epsilons(mut self, eps: &[f64]) -> Self {
        self.epsilons = eps.to_vec();
        self
    }

    pub fn with_nodes(mut self, nodes: &[usize]) -> Self {
        self.nodes = nodes.to_vec();
        self
    }

    pub fn with_radii(mut self, radii: &[f64]) -> Self {
        self.radii = radii.to_vec();
        self
    }

    pub fn with_centers(mut self, centers: &[f64]) -> Self {
        self.centers = centers.to_vec();
        self
    }

    pub fn eps_min(&self) -> f64 {
        self.epsilons.last().copied().unwrap_or(1.0)
    }

    pub fn radius(&self, d: usize) -> f64 {
        per_dim(&self.radii, d, 6.0 / libm::sqrt(self.eps_min()))
    }

    pub fn validate(&self, dims: usize) -> Result<(), OracleError> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| *e <= 0.0) {
            return Err(OracleError::Spec("ε-sequence must be nonempty and positive".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(OracleError::Spec("ε-sequence must be strictly decreasing".into()));
        }
        let min_r = 6.0 / libm::sqrt(self.eps_min());
        for d in 0..dims {
            if per_dim(&self.nodes, d, 96) == 0 {
                return Err(OracleError::Spec(format!("no nodes in dimension {d}")));
            }
            if !self.allow_short_radius && self.radius(d) < min_r * (1.0 - 1e-12) {
                return Err(OracleError::Spec(format!(
                    "radius {} in dimension {d} is below 6/√ε_min = {min_r}",
                    self.radius(d)
                )));
            }
        }
        Ok(())
    }

    /// The same spec with `ε_min/2` appended.
    pub fn halved(&self) -> Self {
        let mut s = self.clone();
        s.epsilons.push(0.5 * self.eps_min());
        s
    }

    fn grid(&self, dims: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..dims)
            .map(|d| {
                let (c, r) = (per_dim(&self.centers, d, 0.0), self.radius(d));
                gauss_legendre_on(per_dim(&self.nodes, d, 96), c - r, c + r)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub value: Complex64,
    pub error_estimate: f64,
    pub epsilon_trace: Vec<(f64, Complex64)>,
}

fn pairwise_c(v: &[Complex64]) -> Complex64 {
    match v.len() {
        0 => Complex64::new(0.0, 0.0),
        n if n <= 8 => v.iter().sum(),
        n => pairwise_c(&v[..n / 2]) + pairwise_c(&v[n / 2..]),
    }
}

type Integrand<'a> = dyn FnMut(&[f64], &mut [Complex64]) -> Result<(), OracleError> + 'a;

/// `Σ_nodes Π w_d · f(u)` for `k` simultaneous accumulators, reduced
/// pairwise in index order at every level so the result is bit-stable.
fn tensor_sum(
    grid: &[(Vec<f64>, Vec<f64>)],
    k: usize,
    f: &mut Integrand,
) -> Result<Vec<Complex64>, OracleError> {
    fn level(
        grid: &[(Vec<f64>, Vec<f64>)],
        d: usize,
        u: &mut Vec<f64>,
        k: usize,
        f: &mut Integrand,
    ) -> Result<Vec<Complex64>, OracleError> {
        let (nodes, weights) = &grid[d];
        let n = nodes.len();
        let mut buf = alloc::vec![Complex64::new(0.0, 0.0); n * k];
        let mut tmp = alloc::vec![Complex64::new(0.0, 0.0); k];
        for i in 0..n {
            u[d] = nodes[i];
            if d + 1 == grid.len() {
                f(u, &mut tmp)?;
                for j in 0..k {
                    buf[j * n + i] = tmp[j] * weights[i];
                }
            } else {
                let sub = level(grid, d + 1, u, k, f)?;
                for j in 0..k {
                    buf[j * n + i] = sub[j] * weights[i];
                }
            }
        }
        Ok((0..k).map(|j| pairwise_c(&buf[j * n..(j + 1) * n])).collect())
    }
    if grid.is_empty() {
        let mut out = alloc::vec![Complex64::new(0.0, 0.0); k];
        f(&[], &mut out)?;
        return Ok(out);
    }
    let mut u = alloc::vec![0.0; grid.len()];
    level(grid, 0, &mut u, k, f)
}

/// Relative roundoff level of a tensor sum, against `Σ |w f|`.
const ROUNDOFF: f64 = 1e-13;

/// Neville extrapolation to `ε = 0`; returns the extrapolants of increasing
/// order built on the last points (index `j` uses `j + 1` points).
fn neville(trace: &[(f64, Complex64)], order: usize) -> Vec<Complex64> {
    let m = (order + 1).min(trace.len());
    let pts = &trace[trace.len() - m..];
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let sub = &pts[m - 1 - j..];
        let mut p: Vec<Complex64> = sub.iter().map(|(_, v)| *v).collect();
        let x: Vec<f64> = sub.iter().map(|(e, _)| *e).collect();
        for lvl in 1..p.len() {
            for i in 0..p.len() - lvl {
                p[i] = (p[i + 1] * x[i] - p[i] * x[i + lvl]) / (x[i] - x[i + lvl]);
            }
        }
        out.push(p[0]);
    }
    out
}

/// Richardson extrapolation of an ε-trace. Among the raw value (order 0)
/// and the extrapolants up to `order`, the one with the smallest correction
/// is returned. Growing corrections make the result inconclusive unless the
/// best correction is already below `max(floor, 10⁻³·max|I(ε)|)`, where
/// `floor` is the roundoff level of the underlying sums.
pub fn richardson(trace: Vec<(f64, Complex64)>, order: usize, floor: f64) -> Result<OracleResult, OracleError> {
    let ext = neville(&trace, order);
    let mut corrections: Vec<f64> = ext.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    if let [.., (_, a), (_, b)] = trace[..] {
        corrections.insert(0, (b - a).norm());
    } else {
        corrections.insert(0, 0.0);
    }
    // corrections[k] belongs to ext[k]
    let best = (0..ext.len()).rev().min_by(|&i, &j| corrections[i].total_cmp(&corrections[j])).unwrap_or(0);
    let scale = trace.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
    let growing = matches!(corrections[..], [.., a, b] if b > a);
    if growing && corrections[best] > floor.max(1e-3 * scale) {
        return Err(OracleError::Inconclusive { trace, corrections });
    }
    Ok(OracleResult { value: ext[best], error_estimate: corrections[best], epsilon_trace: trace })
}

/// `∫ e^{iφ(u)} a(u) e^{−ε|u|²} du` over the `slots` of `fixed`, extrapolated
/// to `ε = 0`. A constant-zero phase is integrated plainly, without damping.
pub fn oscillatory_integral(
    phase: &Expression,
    amplitude: &Amplitude,
    slots: &[usize],
    fixed: &[f64],
    spec: &MollifiedIntegralSpec,
) -> Result<OracleResult, OracleError> {
    let dims = slots.len();
    if amplitude.is_zero() {
        return Ok(OracleResult { value: Complex64::new(0.0, 0.0), error_estimate: 0.0, epsilon_trace: Vec::new() });
    }
    let zero_phase = phase.as_const() == Some(0.0);
    if !zero_phase {
        spec.validate(dims)?;
    } else if spec.nodes.is_empty() {
        return Err(OracleError::Spec("no nodes".into()));
    }
    let phi = phase.compile()?;
    let grid = spec.grid(dims);
    let eps: Vec<f64> = if zero_phase { alloc::vec![0.0] } else { spec.epsilons.clone() };
    let mut point = fixed.to_vec();
    let mut sums = tensor_sum(&grid, eps.len() + 1, &mut |u, out| {
        for (s, v) in slots.iter().zip(u) {
            point[*s] = *v;
        }
        let r2: f64 = u.iter().map(|v| v * v).sum();
        let base = Complex64::from_polar(1.0, phi.eval(&point)?) * amplitude.eval(&point)?;
        for (o, e) in out.iter_mut().zip(&eps) {
            *o = base * libm::exp(-e * r2);
        }
        out[eps.len()] = Complex64::new(base.norm() * libm::exp(-eps[eps.len() - 1] * r2), 0.0);
        Ok(())
    })?;
    let l1 = sums.pop().map_or(0.0, |v| v.re);
    if zero_phase {
        return Ok(OracleResult { value: sums[0], error_estimate: 0.0, epsilon_trace: Vec::new() });
    }
    richardson(eps.into_iter().zip(sums).collect(), spec.order, ROUNDOFF * l1)
}

/// `(2π)^{−(dim M + N)/2} ∫ e^{iφ_XX(x, x′, θ)} a_XX e^{−ε|θ|²} dθ`.
pub fn trace_kernel_value(
    restricted: &RestrictedPhase,
    amplitude: &Amplitude,
    x: &[f64],
    xp: &[f64],
    spec: &MollifiedIntegralSpec,
) -> Result<OracleResult, OracleError> {
    let phase = &restricted.phase;
    let fixed = base_point(phase, x, xp);
    let n = phase.n_theta();
    let norm = libm::pow(2.0 * PI, -((restricted.chart.dim_m + n) as f64) / 2.0);
    let mut r = oscillatory_integral(phase.phi(), amplitude, phase.theta_slots(), &fixed, spec)?;
    scale_result(&mut r, norm);
    Ok(r)
}

fn base_point(phase: &PhaseFunction, x: &[f64], xp: &[f64]) -> Vec<f64> {
    let mut c = alloc::vec![0.0; phase.layout().total_dim()];
    for (s, v) in phase.base_slots().iter().zip(x) {
        c[*s] = *v;
    }
    for (s, v) in phase.primed_slots().iter().zip(xp) {
        c[*s] = *v;
    }
    c
}

fn scale_result(r: &mut OracleResult, f: f64) {
    r.value *= f;
    r.error_estimate *= f.abs();
    for (_, v) in r.epsilon_trace.iter_mut() {
        *v *= f;
    }
}

/// Plateau window: 1 on `|t| ≤ 1/2`, C^∞ descent to 0 at `|t| = 1`.
pub fn plateau(t: f64) -> f64 {
    let s = 2.0 * (t.abs() - 0.5);
    if s <= 0.0 {
        return 1.0;
    }
    if s >= 1.0 {
        return 0.0;
    }
    let g = |v: f64| if v > 0.0 { libm::exp(-1.0 / v) } else { 0.0 };
    g(1.0 - s) / (g(1.0 - s) + g(s))
}

/// Window sizes for [`amplitude_oracle`], all around the stationary point.
/// θ is integrated in an orthonormal frame whose first axis is `θ_c`: the
/// radial radius is `R_θ = theta_window·|θ_c|` (keeping away from `θ = 0`),
/// the transverse radii `perp_window·|θ_c|` with proportionally more nodes.
/// `x`-type variables get radius `window_product / R_θ`: for the bilinear
/// part of the phase the cutoff error depends only on that product, and so
/// does the number of oscillations per dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudeOracleSpec {
    pub nodes: usize,
    pub window_product: f64,
    pub theta_window: f64,
    pub perp_window: f64,
}

impl Default for AmplitudeOracleSpec {
    fn default() -> Self {
        Self { nodes: 64, window_product: 40.0, theta_window: 0.8, perp_window: 2.0 }
    }
}

/// Direct quadrature of
/// `(2π)^{−(dim M + N)/2 − (|Ī|+|Ī′|)/2} ∫ e^{i[φ_XX − S − p_Ī x_Ī + p′_{Ī′} x′_{Ī′}]} a_XX`
/// over `(x_Ī, x′_{Ī′}, θ)` with a smooth plateau cutoff around the
/// stationary point; the error estimate compares against a ¾-size grid.
pub fn amplitude_oracle(
    problem: &StationaryProblem,
    w: &[f64],
    amplitude: &Amplitude,
    spec: &AmplitudeOracleSpec,
) -> Result<OracleResult, OracleError> {
    let phase = problem.phase();
    let chart = problem.chart();
    let k = chart.dim_x();
    let (bi, bip) = (chart.bar_i(), chart.bar_ip());
    let n_theta = phase.n_theta();
    let norm = libm::pow(2.0 * PI, -((problem.dim_m() + n_theta) as f64) / 2.0 - (bi.len() + bip.len()) as f64 / 2.0);
    if amplitude.is_zero() {
        return Ok(OracleResult { value: Complex64::new(0.0, 0.0), error_estimate: 0.0, epsilon_trace: Vec::new() });
    }
    let center = problem.fiber_trace(w)?.center;
    let s = chart.user_s(w)?.unwrap_or(center.s_value);
    let mut x_slots: Vec<usize> = bi.iter().map(|&j| phase.base_slots()[j]).collect();
    x_slots.extend(bip.iter().map(|&j| phase.primed_slots()[j]));
    let n_x = x_slots.len();
    let mut lin = alloc::vec![0.0; n_x];
    for (i, &j) in bi.iter().enumerate() {
        lin[i] = -w[j];
    }
    for (i, &j) in bip.iter().enumerate() {
        lin[bi.len() + i] = w[k + j];
    }
    let t_slots = phase.theta_slots();
    let theta_c: Vec<f64> = t_slots.iter().map(|&t| center.coords[t]).collect();
    let frame = radial_frame(&theta_c);
    let r_theta = spec.theta_window * linalg::norm(&theta_c);
    let r_perp = spec.perp_window * linalg::norm(&theta_c);
    let phi = phase.phi().compile()?;
    let constant = amplitude.im().is_none().then(|| amplitude.re().as_const()).flatten();
    let run = |nodes: usize| -> Result<Complex64, OracleError> {
        let perp_nodes = libm::ceil(nodes as f64 * spec.perp_window / spec.theta_window) as usize;
        let window = |c: f64, r: f64, n: usize| {
            let (x, mut wt) = gauss_legendre_on(n, c - r, c + r);
            for (wi, xi) in wt.iter_mut().zip(&x) {
                *wi *= plateau((xi - c) / r);
            }
            (x, wt)
        };
        let mut grid: Vec<(Vec<f64>, Vec<f64>)> =
            x_slots.iter().map(|&sl| window(center.coords[sl], spec.window_product / r_theta, nodes)).collect();
        grid.push(window(0.0, r_theta, nodes));
        grid.extend((1..n_theta).map(|_| window(0.0, r_perp, perp_nodes)));
        let mut point = center.coords.clone();
        let v = tensor_sum(&grid, 1, &mut |u, out| {
            for (sl, v) in x_slots.iter().zip(u) {
                point[*sl] = *v;
            }
            for (j, &sl) in t_slots.iter().enumerate() {
                point[sl] = theta_c[j] + frame.iter().zip(&u[n_x..]).map(|(e, t)| e[j] * t).sum::<f64>();
            }
            let psi = phi.eval(&point)? - s + u.iter().zip(&lin).map(|(a, b)| a * b).sum::<f64>();
            let a = match constant {
                Some(c) => Complex64::new(c, 0.0),
                None => amplitude.eval(&point)?,
            };
            out[0] = Complex64::from_polar(1.0, psi) * a;
            Ok(())
        })?;
        Ok(v[0] * norm)
    };
    let value = run(spec.nodes)?;
    let coarse = run((3 * spec.nodes).div_ceil(4))?;
    Ok(OracleResult { value, error_estimate: (value - coarse).norm(), epsilon_trace: Vec::new() })
}

/// Orthonormal basis whose first vector is `v/|v|`.
fn radial_frame(v: &[f64]) -> Vec<Vec<f64>> {
    let n = v.len();
    let r = linalg::norm(v);
    let mut frame: Vec<Vec<f64>> = alloc::vec![v.iter().map(|x| x / r).collect()];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()));
    for i in order {
        if frame.len() == n {
            break;
        }
        let mut e = alloc::vec![0.0; n];
        e[i] = 1.0;
        for f in &frame {
            let d: f64 = f.iter().zip(&e).map(|(a, b)| a * b).sum();
            e.iter_mut().zip(f).for_each(|(a, b)| *a -= d * b);
        }
        let m = linalg::norm(&e);
        if m > 1e-8 {
            frame.push(e.iter().map(|x| x / m).collect());
        }
    }
    frame
}

/// Gaussian wave packet `v(x′) = exp(−(x′−x₀)²/(2σ²) + i p₀ x′)` on `X`
/// (one-dimensional).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WavePacket {
    pub x0: f64,
    pub p0: f64,
    pub sigma: f64,
}

impl WavePacket {
    pub fn eval(&self, x: f64) -> Complex64 {
        let d = x - self.x0;
        Complex64::from_polar(libm::exp(-d * d / (2.0 * self.sigma * self.sigma)), self.p0 * x)
    }

    /// `‖v‖²_{L²}`.
    pub fn mass(&self) -> f64 {
        self.sigma * libm::sqrt(PI)
    }
}

/// Oracle and prediction for `i!(Φ)` applied to a wave packet.
#[derive(Clone, Debug, PartialEq)]
pub struct WavepacketComparison {
    pub grid: Vec<f64>,
    pub output: Vec<OracleResult>,
    /// `Σ x|u|² / Σ |u|²` of the oracle output.
    pub center: Option<f64>,
    /// `‖u‖² / ‖v‖²` on the output grid.
    pub mass_ratio: f64,
    /// Base point of the image of `(x₀, p₀)` under the traced relation, if any.
    pub predicted: Option<(f64, f64)>,
}

/// Image of the covector `(x₀, p₀)` under the traced canonical relation:
/// a point of `γ_{φXX}(C_φXX)` with `(x′, p′) = (x₀, p₀)`.
pub fn transport_covector(phase: &PhaseFunction, seeds: &[Vec<f64>], x0: f64, p0: f64) -> Result<Option<(f64, f64)>, OracleError> {
    if phase.base_dim() != 1 {
        return Err(OracleError::Spec("wave packets are implemented on one-dimensional X".into()));
    }
    let (xs, ts) = (phase.primed_slots()[0], phase.theta_slots());
    let residual = |c: &[f64]| -> Result<Vec<f64>, OracleError> {
        let mut r = phase.grad_theta_at(c)?;
        let g = phase.gamma_at(c)?;
        r.push(g[2] - x0);
        r.push(g[3] - p0);
        Ok(r)
    };
    for seed in seeds.iter().take(32) {
        let mut c = seed.clone();
        let g = phase.gamma_at(&c)?;
        if g[3].abs() > 1e-12 {
            for &t in ts {
                c[t] *= p0 / g[3];
            }
        }
        c[xs] = x0;
        let Ok(mut r) = residual(&c) else { continue };
        for _ in 0..60 {
            if linalg::norm(&r) < 1e-11 * (1.0 + p0.abs()) {
                break;
            }
            let tm = phase.theta_matrix(&c)?;
            let gj = phase.gamma_jacobian(&c)?;
            let j = DMatrix::from_fn(r.len(), c.len(), |i, col| if i < ts.len() { tm[(i, col)] } else { gj[(i - ts.len() + 2, col)] });
            let step = linalg::lstsq(&j, &DVector::from_vec(r.clone()), 1e-12);
            let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, b)| a - b).collect();
            match residual(&trial) {
                Ok(r2) if linalg::norm(&r2) < linalg::norm(&r) => {
                    c = trial;
                    r = r2;
                }
                _ => break,
            }
        }
        if linalg::norm(&r) < 1e-9 * (1.0 + p0.abs()) && phase.in_domain(&c) {
            let g = phase.gamma_at(&c)?;
            return Ok(Some((g[0], g[1])));
        }
    }
    Ok(None)
}

/// Brute-force `u(x) = ∫ K_XX(x, x′) v(x′) dx′` on the output `grid`: one
/// damped θ-quadrature per `(x, x′)` node with every ε accumulated in a
/// single pass, then Richardson in ε per output point.
pub fn wavepacket_operator_check(
    restricted: &RestrictedPhase,
    amplitude: &Amplitude,
    packet: &WavePacket,
    grid: &[f64],
    x_nodes: usize,
    spec: &MollifiedIntegralSpec,
    seeds: &[Vec<f64>],
) -> Result<WavepacketComparison, OracleError> {
    let phase = &restricted.phase;
    if phase.base_dim() != 1 {
        return Err(OracleError::Spec("wave packets are implemented on one-dimensional X".into()));
    }
    let n = phase.n_theta();
    spec.validate(0)?;
    let norm = libm::pow(2.0 * PI, -((restricted.chart.dim_m + n) as f64) / 2.0);
    let half = 6.0 * packet.sigma;
    let xp_rule = gauss_legendre_on(x_nodes, packet.x0 - half, packet.x0 + half);
    let mut theta_grid = spec.grid(n);
    let mut full: Vec<(Vec<f64>, Vec<f64>)> = alloc::vec![xp_rule];
    full.append(&mut theta_grid);
    let phi: CompiledExpr = phase.phi().compile()?;
    let (xs, xps, ts) = (phase.base_slots()[0], phase.primed_slots()[0], phase.theta_slots().to_vec());
    let mut output = Vec::with_capacity(grid.len());
    if amplitude.is_zero() {
        let zero = OracleResult { value: Complex64::new(0.0, 0.0), error_estimate: 0.0, epsilon_trace: Vec::new() };
        output.resize(grid.len(), zero);
    } else {
        for &x in grid {
            let mut c = alloc::vec![0.0; phase.layout().total_dim()];
            c[xs] = x;
            let ne = spec.epsilons.len();
            let mut sums = tensor_sum(&full, ne + 1, &mut |u, out| {
                c[xps] = u[0];
                let mut r2 = 0.0;
                for (s, v) in ts.iter().zip(&u[1..]) {
                    c[*s] = *v;
                    r2 += v * v;
                }
                let base = Complex64::from_polar(1.0, phi.eval(&c)?) * amplitude.eval(&c)? * packet.eval(u[0]);
                for (o, e) in out.iter_mut().zip(&spec.epsilons) {
                    *o = base * libm::exp(-e * r2);
                }
                out[ne] = Complex64::new(base.norm() * libm::exp(-spec.eps_min() * r2), 0.0);
                Ok(())
            })?;
            let l1 = sums.pop().map_or(0.0, |v| v.re);
            let mut r = richardson(spec.epsilons.iter().copied().zip(sums).collect(), spec.order, ROUNDOFF * l1)?;
            scale_result(&mut r, norm);
            output.push(r);
        }
    }
    let dens: Vec<f64> = output.iter().map(|r| r.value.norm_sqr()).collect();
    let total = linalg::pairwise_sum(&dens);
    let h = if grid.len() > 1 { (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64 } else { 1.0 };
    let center = (total > 0.0).then(|| {
        let m: Vec<f64> = grid.iter().zip(&dens).map(|(x, d)| x * d).collect();
        linalg::pairwise_sum(&m) / total
    });
    Ok(WavepacketComparison {
        grid: grid.to_vec(),
        output,
        center,
        mass_ratio: total * h / packet.mass(),
        predicted: transport_covector(phase, seeds, packet.x0, packet.p0)?,
    })
}

#[cfg(test)]
mod tests;

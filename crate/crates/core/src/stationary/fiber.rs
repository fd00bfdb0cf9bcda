//! Continuation along the fibers `F_w` and the fiber integral of `b₀(w)`.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use super::{StationaryError, StationaryPointData, StationaryProblem};
use crate::linalg;
use crate::phase::Amplitude;
use crate::quad::adaptive_gk;

#[derive(Clone, Debug, PartialEq)]
pub enum FiberExtent {
    Point,
    /// `θ″ ∈ [lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// Star-shaped region `{center + r(cos φ, sin φ) : r < R(φ)}`.
    Polar { center: Vec<f64>, angles: Vec<f64>, radii: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiberTrace {
    pub excess: usize,
    pub center: StationaryPointData,
    pub extent: FiberExtent,
    /// Continuation samples `θ″` in the order visited.
    pub samples: Vec<Vec<f64>>,
    pub diameter: f64,
    pub max_theta_dd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeResult {
    pub b0: Complex64,
    pub prefactor: f64,
    /// `∫_{F_w} e^{iπ/4·sgn H} |det H|^{−1/2} a₀ dθ″` without the prefactor.
    pub fiber_integral: Complex64,
    pub quadrature_error: f64,
    pub excess: usize,
    pub det_center: f64,
    pub signature: i32,
    pub fiber_diameter: f64,
    pub evaluations: usize,
}

struct Ray {
    radius: f64,
    path: Vec<(f64, Vec<f64>)>,
}

impl Ray {
    /// Continuation state nearest to `s`, linearly extrapolated.
    fn seed(&self, s: f64) -> Vec<f64> {
        let i = self.path.partition_point(|(t, _)| *t <= s).saturating_sub(1);
        if i + 1 < self.path.len() {
            let ((s0, u0), (s1, u1)) = (&self.path[i], &self.path[i + 1]);
            let f = (s - s0) / (s1 - s0);
            return u0.iter().zip(u1).map(|(a, b)| a + f * (b - a)).collect();
        }
        self.path[i].1.clone()
    }
}

impl StationaryProblem {
    fn theta_scale(&self, center: &StationaryPointData) -> f64 {
        let th: Vec<f64> = self.phase.theta_slots().iter().map(|&s| center.coords[s]).collect();
        linalg::norm(&th)
    }

    fn offset(origin: &[f64], dir: &[f64], s: f64) -> Vec<f64> {
        origin.iter().zip(dir).map(|(o, d)| o + s * d).collect()
    }

    /// Predictor–corrector continuation from `origin` along `dir` up to the
    /// boundary of `F_w`, located by bisection.
    fn march(
        &self,
        w: &[f64],
        origin: &[f64],
        dir: &[f64],
        start: &[f64],
        s_ref: f64,
        scale: f64,
    ) -> Result<Ray, StationaryError> {
        let o = &self.opts;
        let mut path: Vec<(f64, Vec<f64>)> = alloc::vec![(0.0, start.to_vec())];
        let (mut s, mut h, mut bracketed) = (0.0, o.fiber_step * scale, false);
        while h >= o.boundary_tol * scale {
            let t = s + h;
            if t > o.fiber_cap * scale {
                return Err(StationaryError::UnboundedFiber { reached: t, direction: dir.to_vec() });
            }
            let n = path.len();
            let pred: Vec<f64> = if n >= 2 {
                let ((s0, u0), (s1, u1)) = (&path[n - 2], &path[n - 1]);
                u1.iter().zip(u0).map(|(b, a)| b + (b - a) * (t - s1) / (s1 - s0)).collect()
            } else {
                path[n - 1].1.clone()
            };
            match self.find_stationary_point(w, &Self::offset(origin, dir, t), Some(&pred), Some(s_ref)) {
                Ok(p) => {
                    path.push((t, p.point));
                    s = t;
                    h *= if bracketed { 0.5 } else { o.fiber_growth };
                }
                Err(e) if e.is_boundary() => {
                    bracketed = true;
                    h *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Ray { radius: s, path })
    }

    /// Stationary point and signature check at `θ″` on a ray.
    #[allow(clippy::too_many_arguments)]
    fn point_on_ray(
        &self,
        w: &[f64],
        origin: &[f64],
        dir: &[f64],
        ray: &Ray,
        s: f64,
        s_ref: f64,
        signature: i32,
    ) -> Result<StationaryPointData, StationaryError> {
        let theta_dd = Self::offset(origin, dir, s);
        let p = self.find_stationary_point(w, &theta_dd, Some(&ray.seed(s)), Some(s_ref))?;
        if p.signature != signature {
            return Err(StationaryError::SignatureChange { center: signature, found: p.signature, theta_dd });
        }
        Ok(p)
    }

    /// Stationary point at the fiber center, `F_w` boundary data and samples.
    pub fn fiber_trace(&self, w: &[f64]) -> Result<FiberTrace, StationaryError> {
        self.fiber_with_rays(w).map(|(t, _)| t)
    }

    #[allow(clippy::type_complexity)]
    fn fiber_with_rays(&self, w: &[f64]) -> Result<(FiberTrace, Vec<(Vec<f64>, Ray)>), StationaryError> {
        let e = self.excess();
        let c0 = self.solve_fiber_point(w)?;
        let (u0, tdd0) = self.split(&c0);
        let mut center = self.find_stationary_point(w, &tdd0, Some(&u0), None)?;
        let s_ref = center.s_value;
        let scale = self.theta_scale(&center);
        let mut samples = alloc::vec![center.theta_dd.clone()];
        let record = |samples: &mut Vec<Vec<f64>>, origin: &[f64], dir: &[f64], ray: &Ray| {
            samples.extend(ray.path.iter().skip(1).map(|(s, _)| Self::offset(origin, dir, *s)));
        };
        match e {
            0 => Ok((FiberTrace { excess: 0, center, extent: FiberExtent::Point, samples, diameter: 0.0, max_theta_dd: 0.0 }, Vec::new())),
            1 => {
                let o = center.theta_dd.clone();
                let up = self.march(w, &o, &[1.0], &center.point, s_ref, scale)?;
                let down = self.march(w, &o, &[-1.0], &center.point, s_ref, scale)?;
                record(&mut samples, &o, &[1.0], &up);
                record(&mut samples, &o, &[-1.0], &down);
                let (lo, hi) = (o[0] - down.radius, o[0] + up.radius);
                let trace = FiberTrace {
                    excess: 1,
                    center,
                    extent: FiberExtent::Interval { lo, hi },
                    samples,
                    diameter: hi - lo,
                    max_theta_dd: lo.abs().max(hi.abs()),
                };
                Ok((trace, alloc::vec![(alloc::vec![1.0], up), (alloc::vec![-1.0], down)]))
            }
            2 => {
                // Recenter on chord midpoints so the polar rays see a round domain.
                for _ in 0..4 {
                    let o = center.theta_dd.clone();
                    let m = 4;
                    let mut shift = [0.0; 2];
                    for j in 0..m {
                        let a = PI * j as f64 / m as f64;
                        let d = [libm::cos(a), libm::sin(a)];
                        let r1 = self.march(w, &o, &d, &center.point, s_ref, scale)?;
                        let r2 = self.march(w, &o, &[-d[0], -d[1]], &center.point, s_ref, scale)?;
                        let mid = 0.5 * (r1.radius - r2.radius);
                        shift[0] += 2.0 * mid * d[0] / m as f64;
                        shift[1] += 2.0 * mid * d[1] / m as f64;
                    }
                    if linalg::norm(&shift) <= 1e-9 * scale {
                        break;
                    }
                    let target = [o[0] + shift[0], o[1] + shift[1]];
                    match self.find_stationary_point(w, &target, Some(&center.point), Some(s_ref)) {
                        Ok(p) => center = p,
                        Err(e) if e.is_boundary() => break,
                        Err(e) => return Err(e),
                    }
                }
                let o = center.theta_dd.clone();
                let m = self.opts.angular_min.max(4) & !1;
                let mut rays = Vec::new();
                let (mut angles, mut radii) = (Vec::new(), Vec::new());
                for j in 0..m {
                    let a = 2.0 * PI * j as f64 / m as f64;
                    let d = alloc::vec![libm::cos(a), libm::sin(a)];
                    let ray = self.march(w, &o, &d, &center.point, s_ref, scale)?;
                    record(&mut samples, &o, &d, &ray);
                    angles.push(a);
                    radii.push(ray.radius);
                    rays.push((d, ray));
                }
                let diameter = (0..m / 2).map(|j| radii[j] + radii[j + m / 2]).fold(0.0, f64::max);
                let max_theta_dd = samples.iter().map(|s| linalg::norm(s)).fold(0.0, f64::max);
                let trace = FiberTrace {
                    excess: 2,
                    center,
                    extent: FiberExtent::Polar { center: o, angles, radii },
                    samples,
                    diameter,
                    max_theta_dd,
                };
                Ok((trace, rays))
            }
            e => Err(StationaryError::UnsupportedExcess(e)),
        }
    }

    fn integrand(&self, p: &StationaryPointData, amp: &Amplitude) -> Result<Complex64, StationaryError> {
        let phase = Complex64::from_polar(1.0, FRAC_PI_4 * p.signature as f64);
        Ok(phase * amp.eval(&p.coords)? / libm::sqrt(p.det.abs()))
    }

    /// `b₀(w) = prefactor × ∫_{F_w} e^{iπ/4·sgn H} |det H|^{−1/2} a₀ dθ″`.
    pub fn leading_amplitude(&self, w: &[f64], amp: &Amplitude) -> Result<AmplitudeResult, StationaryError> {
        let (trace, rays) = self.fiber_with_rays(w)?;
        let e = trace.excess;
        let prefactor = self.opts.prefactor.factor(self.dim_m, self.phase.n_theta(), e);
        let sig = trace.center.signature;
        let s_ref = trace.center.s_value;
        let mut evaluations = 1;
        let (integral, error) = match &trace.extent {
            FiberExtent::Point => (self.integrand(&trace.center, amp)?, 0.0),
            FiberExtent::Interval { lo, hi } => {
                let o = trace.center.theta_dd.clone();
                let (up, down) = (&rays[0].1, &rays[1].1);
                let mut f = |t: f64| -> Result<Complex64, StationaryError> {
                    let s = t - o[0];
                    let (dir, ray) = if s >= 0.0 { ([1.0], up) } else { ([-1.0], down) };
                    let p = self.point_on_ray(w, &o, &dir, ray, s.abs(), s_ref, sig)?;
                    self.integrand(&p, amp)
                };
                let r = adaptive_gk(&mut f, *lo, *hi, self.opts.quad_rel_tol, 1e-15, self.opts.max_panels)?;
                evaluations += r.evaluations;
                if !r.converged {
                    return Err(StationaryError::Quadrature { error: r.error, value: r.value.norm() });
                }
                (r.value, r.error)
            }
            FiberExtent::Polar { center, .. } => {
                let m0 = rays.len();
                let mut rays: Vec<(f64, Ray, Vec<f64>)> =
                    rays.into_iter().enumerate().map(|(j, (d, r))| (2.0 * PI * j as f64 / m0 as f64, r, d)).collect();
                let mut radial: Vec<(f64, Complex64, f64)> = Vec::new();
                let ray_integral = |d: &[f64], ray: &Ray| -> Result<(Complex64, f64, usize), StationaryError> {
                    let mut f = |r: f64| -> Result<Complex64, StationaryError> {
                        let p = self.point_on_ray(w, center, d, ray, r, s_ref, sig)?;
                        Ok(self.integrand(&p, amp)? * r)
                    };
                    let r = adaptive_gk(&mut f, 0.0, ray.radius, self.opts.quad_rel_tol, 1e-15, self.opts.max_panels)?;
                    if !r.converged {
                        return Err(StationaryError::Quadrature { error: r.error, value: r.value.norm() });
                    }
                    Ok((r.value, r.error, r.evaluations))
                };
                for (a, ray, d) in &rays {
                    let (v, err, n) = ray_integral(d, ray)?;
                    evaluations += n;
                    radial.push((*a, v, err));
                }
                let mut m = rays.len();
                let trapezoid = |radial: &[(f64, Complex64, f64)]| -> (Complex64, f64) {
                    let n = radial.len() as f64;
                    let re: Vec<f64> = radial.iter().map(|r| r.1.re).collect();
                    let im: Vec<f64> = radial.iter().map(|r| r.1.im).collect();
                    let err: f64 = radial.iter().map(|r| r.2).sum();
                    (Complex64::new(linalg::pairwise_sum(&re), linalg::pairwise_sum(&im)) * (2.0 * PI / n), err * 2.0 * PI / n)
                };
                let (mut value, mut qerr) = trapezoid(&radial);
                loop {
                    if m >= self.opts.angular_max {
                        break;
                    }
                    let mut new_rays = Vec::new();
                    for j in 0..m {
                        let a = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                        let d = alloc::vec![libm::cos(a), libm::sin(a)];
                        let start = &trace.center.point;
                        let ray = self.march(w, center, &d, start, s_ref, self.theta_scale(&trace.center))?;
                        let (v, err, n) = ray_integral(&d, &ray)?;
                        evaluations += n;
                        radial.push((a, v, err));
                        new_rays.push((a, ray, d));
                    }
                    rays.extend(new_rays);
                    radial.sort_by(|x, y| x.0.total_cmp(&y.0));
                    m *= 2;
                    let (next, nerr) = trapezoid(&radial);
                    let delta = (next - value).norm();
                    value = next;
                    qerr = nerr + delta;
                    if delta <= self.opts.quad_rel_tol.max(1e-12) * value.norm() || value.norm() < 1e-300 {
                        break;
                    }
                }
                (value, qerr)
            }
        };
        Ok(AmplitudeResult {
            b0: integral * prefactor,
            prefactor,
            fiber_integral: integral,
            quadrature_error: error * prefactor,
            excess: e,
            det_center: trace.center.det,
            signature: sig,
            fiber_diameter: trace.diameter,
            evaluations,
        })
    }
}

/// Least-squares slope of `log|b|` against `log λ`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(l, _)| libm::log(*l)).collect();
    let ys: Vec<f64> = points.iter().map(|(_, b)| libm::log(*b)).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

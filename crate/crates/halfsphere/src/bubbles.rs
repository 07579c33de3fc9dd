//! Explicit solutions of the limit problems on R^3 and R3+, and the
//! sphere-side concentrating family.
//!
//! Throughout, `k = Kbar / (4 n (n-1)) = Kbar / 24` for n = 3, and the
//! boundary family carries the vertical shift `t` fixed by `2 k lambda t =
//! Hbar`.

use crate::error::{Error, Result};
use crate::geometry::{dot3, gauss_legendre_on, HalfSpacePoint, SpherePoint, StereographicChart};
use crate::linalg::weighted_lstsq;

/// `k = Kbar / 24` (n = 3).
pub fn curvature_scale(kbar: f64) -> f64 {
    kbar / 24.0
}

/// The two-case scaling gauge: `lambda = 1 + k lambda^2 t^2` when
/// `Hbar >= 0`, `lambda = 1` when `Hbar < 0`. Returns the gauge lambda.
pub fn normalized_lambda(kbar: f64, hbar: f64) -> f64 {
    if hbar >= 0.0 {
        // with 2 k lambda t = Hbar, k lambda^2 t^2 = Hbar^2/(4k)
        1.0 + hbar * hbar / (4.0 * curvature_scale(kbar))
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Interior bubble
// ---------------------------------------------------------------------------

/// `U_lambda(x) = (lambda / (1 + lambda^2 k |x - c|^2))^{1/2}`, the positive
/// solution of `-8 lap u = Kbar u^5` on R^3.
#[derive(Debug, Clone, Copy)]
pub struct InteriorBubble {
    pub lambda: f64,
    pub center: [f64; 3],
    pub kbar: f64,
}

impl InteriorBubble {
    pub fn new(lambda: f64, center: [f64; 3], kbar: f64) -> Result<Self> {
        if lambda <= 0.0 || kbar <= 0.0 {
            return Err(Error::Domain("interior bubble needs lambda > 0 and Kbar > 0".into()));
        }
        Ok(Self { lambda, center, kbar })
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let k = curvature_scale(self.kbar);
        let d: [f64; 3] = std::array::from_fn(|i| x[i] - self.center[i]);
        let r2 = dot3(&d, &d);
        (self.lambda / (1.0 + self.lambda * self.lambda * k * r2)).sqrt()
    }
}

// ---------------------------------------------------------------------------
// Boundary bubble
// ---------------------------------------------------------------------------

/// `Ubar_lambda(x) = (lambda / (1 + lambda^2 k (|x' - c'|^2 + (x3 + t)^2)))^{1/2}`,
/// the positive solution of `-8 lap u = Kbar u^5` on R3+ with
/// `-2 du/dx3 = Hbar u^3` on the boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryBubble {
    pub lambda: f64,
    pub t: f64,
    pub center_prime: [f64; 2],
    pub kbar: f64,
    pub hbar: f64,
}

impl BoundaryBubble {
    /// Construct from (lambda, Kbar, Hbar); the shift is forced by the
    /// boundary condition.
    pub fn new(lambda: f64, center_prime: [f64; 2], kbar: f64, hbar: f64) -> Result<Self> {
        if lambda <= 0.0 || kbar <= 0.0 {
            return Err(Error::Domain("boundary bubble needs lambda > 0 and Kbar > 0".into()));
        }
        let t = hbar / (2.0 * curvature_scale(kbar) * lambda);
        Ok(Self { lambda, t, center_prime, kbar, hbar })
    }

    /// Construct in the Eq.-(5.2) gauge.
    pub fn normalized(center_prime: [f64; 2], kbar: f64, hbar: f64) -> Result<Self> {
        Self::new(normalized_lambda(kbar, hbar), center_prime, kbar, hbar)
    }

    /// Validate an explicit (lambda, t) pair against the shift constraint.
    pub fn with_shift(lambda: f64, t: f64, center_prime: [f64; 2], kbar: f64, hbar: f64) -> Result<Self> {
        let b = Self::new(lambda, center_prime, kbar, hbar)?;
        if (b.t - t).abs() > 1e-10 * (1.0 + t.abs()) {
            return Err(Error::Domain(format!(
                "inconsistent shift: 2 k lambda t = {} but Hbar = {}",
                2.0 * curvature_scale(kbar) * lambda * t,
                hbar
            )));
        }
        Ok(b)
    }

    pub fn eval(&self, y: &HalfSpacePoint) -> f64 {
        let k = curvature_scale(self.kbar);
        let yv = y.coords();
        let dx = yv[0] - self.center_prime[0];
        let dy = yv[1] - self.center_prime[1];
        let dz = yv[2] + self.t;
        let r2 = dx * dx + dy * dy + dz * dz;
        (self.lambda / (1.0 + self.lambda * self.lambda * k * r2)).sqrt()
    }

    /// Euclidean gradient at a chart point.
    pub fn gradient(&self, y: &HalfSpacePoint) -> [f64; 3] {
        let k = curvature_scale(self.kbar);
        let yv = y.coords();
        let w = [
            yv[0] - self.center_prime[0],
            yv[1] - self.center_prime[1],
            yv[2] + self.t,
        ];
        let r2 = dot3(&w, &w);
        let denom = 1.0 + self.lambda * self.lambda * k * r2;
        // d/dw_i (lambda/denom)^{1/2} = -(lambda^{5/2} k w_i) denom^{-3/2}
        let c = -self.lambda.powf(2.5) * k * denom.powf(-1.5);
        [c * w[0], c * w[1], c * w[2]]
    }

    /// Profile as a function of the distance to the reflected center.
    fn radial(&self, rho: f64) -> f64 {
        let k = curvature_scale(self.kbar);
        (self.lambda / (1.0 + self.lambda * self.lambda * k * rho * rho)).sqrt()
    }

    fn radial_derivative(&self, rho: f64) -> f64 {
        let k = curvature_scale(self.kbar);
        let denom = 1.0 + self.lambda * self.lambda * k * rho * rho;
        -self.lambda.powf(2.5) * k * rho * denom.powf(-1.5)
    }

    /// `int_{R3+} Ubar^p` by the tan-substituted radial rule (exact domain,
    /// lambda-uniform accuracy).
    pub fn volume_power_integral(&self, p: f64) -> f64 {
        self.volume_integral(|rho, u| {
            let _ = rho;
            u.powf(p)
        }, f64::INFINITY)
    }

    /// `int_{boundary} Ubar^p`.
    pub fn boundary_power_integral(&self, p: f64) -> f64 {
        let scale = self.lambda * curvature_scale(self.kbar).sqrt();
        let (ss, ws) = gauss_legendre_on(240, 0.0, std::f64::consts::FRAC_PI_2 - 1e-12);
        let mut total = 0.0;
        for (s, w) in ss.iter().zip(&ws) {
            let r = s.tan() / scale;
            let dr = w / (scale * s.cos() * s.cos());
            let rho = (r * r + self.t * self.t).sqrt();
            total += self.radial(rho).powf(p) * 2.0 * std::f64::consts::PI * r * dr;
        }
        total
    }

    /// `int_{R3+} x3 Ubar^6`, the moment entering the expansion of the
    /// curvature term.
    pub fn x3_moment_u6(&self) -> f64 {
        self.x3_moment_u6_truncated(f64::INFINITY)
    }

    /// Same moment but over the ball |w| <= rmax around the reflected center.
    pub fn x3_moment_u6_truncated(&self, rmax: f64) -> f64 {
        let t = self.t;
        let pi = std::f64::consts::PI;
        self.shell_integral(
            |rho, u| {
                let u6 = u.powi(6);
                if t < 0.0 && rho < -t {
                    // full sphere inside the domain: int z dsigma = -t 4 pi rho^2
                    u6 * (-t) * 4.0 * pi * rho * rho
                } else {
                    u6 * pi * rho * (rho - t) * (rho - t)
                }
            },
            rmax,
        )
    }

    /// `int_{R3+} f(rho, Ubar(rho))` against the half-space volume measure,
    /// where rho is distance to the reflected center.
    pub fn volume_integral<F: Fn(f64, f64) -> f64>(&self, f: F, rmax: f64) -> f64 {
        let t = self.t;
        let pi = std::f64::consts::PI;
        self.shell_integral(
            |rho, u| {
                let area = if t < 0.0 && rho < -t {
                    4.0 * pi * rho * rho
                } else {
                    2.0 * pi * rho * (rho - t)
                };
                f(rho, u) * area
            },
            rmax,
        )
    }

    /// `int |grad Ubar|^2` over R3+.
    pub fn dirichlet_integral(&self) -> f64 {
        let t = self.t;
        let pi = std::f64::consts::PI;
        self.shell_integral(
            |rho, _u| {
                let du = self.radial_derivative(rho);
                let area = if t < 0.0 && rho < -t {
                    4.0 * pi * rho * rho
                } else {
                    2.0 * pi * rho * (rho - t)
                };
                du * du * area
            },
            f64::INFINITY,
        )
    }

    fn shell_integral<F: Fn(f64, f64) -> f64>(&self, integrand: F, rmax: f64) -> f64 {
        let scale = self.lambda * curvature_scale(self.kbar).sqrt();
        let rho_lo = self.t.max(0.0);
        let s_lo = (scale * rho_lo).atan();
        let s_hi = if rmax.is_finite() {
            (scale * rmax).atan()
        } else {
            std::f64::consts::FRAC_PI_2 - 1e-12
        };
        let (ss, ws) = gauss_legendre_on(320, s_lo, s_hi);
        let mut total = 0.0;
        for (s, w) in ss.iter().zip(&ws) {
            let rho = s.tan() / scale;
            let drho = w / (scale * s.cos() * s.cos());
            total += integrand(rho, self.radial(rho)) * drho;
        }
        total
    }
}

/// Closed forms of the lambda-independent energy integrals, with
/// `s = Hbar sqrt(6/Kbar)`:
///
/// `int_{R3+} Ubar^6   = (24/Kbar)^{3/2} (pi/4) (pi/2 - atan s - s/(1+s^2))`
/// `int_{bdry} Ubar^4  = 24 pi / (Kbar + 6 Hbar^2)`
/// `8 int |grad Ubar|^2 = Kbar int Ubar^6 + 4 Hbar int_bdry Ubar^4`
pub fn closed_volume_u6(kbar: f64, hbar: f64) -> f64 {
    let s = hbar * (6.0 / kbar).sqrt();
    (24.0 / kbar).powf(1.5)
        * (std::f64::consts::PI / 4.0)
        * (std::f64::consts::FRAC_PI_2 - s.atan() - s / (1.0 + s * s))
}

pub fn closed_boundary_u4(kbar: f64, hbar: f64) -> f64 {
    24.0 * std::f64::consts::PI / (kbar + 6.0 * hbar * hbar)
}

pub fn closed_dirichlet(kbar: f64, hbar: f64) -> f64 {
    (kbar * closed_volume_u6(kbar, hbar) + 4.0 * hbar * closed_boundary_u4(kbar, hbar)) / 8.0
}

/// Closed form of `int_{R3+} x3 Ubar_1^6 = (144 pi / Kbar^2) psibar` with
/// `psibar = 1 + s (atan s - pi/2)`, `s = Hbar sqrt(6/Kbar)`.
pub fn closed_x3_moment(kbar: f64, hbar: f64) -> f64 {
    let s = hbar * (6.0 / kbar).sqrt();
    144.0 * std::f64::consts::PI / (kbar * kbar) * (1.0 + s * (s.atan() - std::f64::consts::FRAC_PI_2))
}

// ---------------------------------------------------------------------------
// Sphere bubble
// ---------------------------------------------------------------------------

/// The concentrating family on the half-sphere:
/// `delta(x) = (24/Kq)^{1/4} (gamma / (gamma^2 + 1 + (1 - gamma^2) cos d(xt, x)))^{1/2}`
/// with auxiliary center `xt` determined by the boundary point and
/// `xt_4 = -sqrt(24) gamma/(gamma^2 - 1) Hq / sqrt(Kq)`.
///
/// It satisfies `(-8 lap + 6) delta = Kq delta^5` with `2 d delta/d nu = Hq delta^3`.
#[derive(Debug, Clone, Copy)]
pub struct SphereBubble {
    pub qprime: SpherePoint,
    pub gamma: f64,
    pub kq: f64,
    pub hq: f64,
    xtilde: [f64; 4],
}

impl SphereBubble {
    pub fn new(qprime: SpherePoint, gamma: f64, kq: f64, hq: f64) -> Result<Self> {
        if !qprime.is_boundary() {
            return Err(Error::Domain("sphere bubble center must be on the boundary".into()));
        }
        if gamma <= 0.0 || kq <= 0.0 {
            return Err(Error::Domain("sphere bubble needs gamma > 0 and Kq > 0".into()));
        }
        let x4 = if hq == 0.0 {
            0.0
        } else {
            if (gamma - 1.0).abs() < 1e-12 {
                return Err(Error::Domain("gamma = 1 with H != 0: auxiliary center undefined".into()));
            }
            -(24.0_f64).sqrt() * gamma / (gamma * gamma - 1.0) * hq / kq.sqrt()
        };
        if x4.abs() >= 1.0 {
            return Err(Error::Domain(format!(
                "auxiliary center leaves the sphere: xt4 = {x4}"
            )));
        }
        let qv = qprime.coords();
        let rp = (1.0 - x4 * x4).sqrt();
        let xtilde = [rp * qv[0], rp * qv[1], rp * qv[2], x4];
        Ok(Self { qprime, gamma, kq, hq, xtilde })
    }

    pub fn auxiliary_center(&self) -> [f64; 4] {
        self.xtilde
    }

    pub fn eval(&self, x: &SpherePoint) -> f64 {
        let c = crate::geometry::dot4(&self.xtilde, &x.coords()).clamp(-1.0, 1.0);
        let g = self.gamma;
        let denom = g * g + 1.0 + (1.0 - g * g) * c;
        (24.0 / self.kq).powf(0.25) * (g / denom).sqrt()
    }

    /// Ambient gradient (tangential projection is the caller's concern; the
    /// radial component is reported as computed).
    pub fn ambient_gradient(&self, x: &SpherePoint) -> [f64; 4] {
        let c = crate::geometry::dot4(&self.xtilde, &x.coords()).clamp(-1.0, 1.0);
        let g = self.gamma;
        let denom = g * g + 1.0 + (1.0 - g * g) * c;
        let coef = (24.0 / self.kq).powf(0.25) * g.sqrt() * (-0.5) * (1.0 - g * g)
            * denom.powf(-1.5);
        self.xtilde.map(|t| coef * t)
    }

    /// Gradient projected onto the tangent space of S^3.
    pub fn sphere_gradient(&self, x: &SpherePoint) -> [f64; 4] {
        let g = self.ambient_gradient(x);
        let xv = x.coords();
        let gn = crate::geometry::dot4(&g, &xv);
        std::array::from_fn(|i| g[i] - gn * xv[i])
    }

    /// The boundary bubble this family pulls back to under iota in the chart
    /// centered at `qprime` (peak-matched member of the same family).
    pub fn chart_counterpart(&self) -> Result<BoundaryBubble> {
        let s = self.hq * (6.0 / self.kq).sqrt();
        let peak = self.eval(&self.qprime);
        let lambda = 2.0 * peak * peak * (1.0 + s * s);
        BoundaryBubble::new(lambda, [0.0, 0.0], self.kq, self.hq)
    }
}

// ---------------------------------------------------------------------------
// Bubble fitting
// ---------------------------------------------------------------------------

/// Result of a least-squares bubble fit near a boundary peak.
#[derive(Debug, Clone)]
pub struct BubbleFit {
    pub bubble: BoundaryBubble,
    /// Raw (lambda, t) of the sampled function at its own scale.
    pub raw_lambda: f64,
    pub raw_t: f64,
    /// Gauge-normalized (lambda, t) of the rescaled profile.
    pub norm_lambda: f64,
    pub norm_t: f64,
    pub center: [f64; 2],
    /// Rescaled sup-norm misfit over the window, relative to the peak.
    pub residual: f64,
    /// Set when the residual exceeds the non-bubble threshold (0.2).
    pub non_bubble: bool,
}

/// Fit a boundary bubble to samples of a positive field near a boundary
/// local max. `kbar` is the curvature value at the peak (fixes the scale
/// `k = kbar/24`); the implied `Hbar` is recovered from the fitted shift.
///
/// The fit is linear: for an exact bubble, `u^{-2}` is the quadratic
/// polynomial `(1 + lambda^2 k (|x'-c'|^2 + (x3+t)^2))/lambda` in the chart.
pub fn fit_bubble(
    samples: &[(HalfSpacePoint, f64)],
    kbar: f64,
    window: f64,
) -> Result<BubbleFit> {
    if samples.is_empty() {
        return Err(Error::Fit("no samples".into()));
    }
    if samples.iter().any(|(_, u)| *u <= 0.0) {
        return Err(Error::Fit("samples must be positive".into()));
    }
    // peak: largest sample, must lie on the boundary and interior to the window
    let (peak_idx, _) = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .unwrap();
    let (peak_pt, peak_val) = samples[peak_idx];
    if !peak_pt.is_boundary() {
        return Err(Error::Fit("sample maximum is not on the boundary".into()));
    }
    let pv = peak_pt.coords();
    let in_window: Vec<&(HalfSpacePoint, f64)> = samples
        .iter()
        .filter(|(y, _)| {
            let yv = y.coords();
            let d2 = (yv[0] - pv[0]).powi(2) + (yv[1] - pv[1]).powi(2) + yv[2].powi(2);
            d2 <= window * window
        })
        .collect();
    if in_window.len() < 8 {
        return Err(Error::Fit(format!(
            "only {} samples inside the window",
            in_window.len()
        )));
    }
    // interior-of-window check: the max must not sit on the window edge
    let max_d = in_window
        .iter()
        .map(|(y, _)| {
            let yv = y.coords();
            ((yv[0] - pv[0]).powi(2) + (yv[1] - pv[1]).powi(2) + yv[2].powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    if max_d < 0.5 * window {
        return Err(Error::Fit("window barely covered around the maximum".into()));
    }

    // linear regression of u^{-2} on [1, x1, x2, x3, |x|^2]
    let mut rows = Vec::with_capacity(in_window.len());
    let mut rhs = Vec::with_capacity(in_window.len());
    let mut wts = Vec::with_capacity(in_window.len());
    for (y, u) in &in_window {
        let yv = y.coords();
        rows.push(vec![
            1.0,
            yv[0],
            yv[1],
            yv[2],
            yv[0] * yv[0] + yv[1] * yv[1] + yv[2] * yv[2],
        ]);
        rhs.push(1.0 / (u * u));
        // weight by u^4: equalizes the relative error in u
        wts.push(u.powi(4));
    }
    let c = weighted_lstsq(&rows, &rhs, &wts).map_err(|_| Error::Fit("singular fit".into()))?;
    let b = c[4];
    if b <= 0.0 {
        return Err(Error::Fit("fitted quadratic is not convex: no bubble shape".into()));
    }
    let k = curvature_scale(kbar);
    let lambda = b / k;
    let center = [-c[1] / (2.0 * b), -c[2] / (2.0 * b)];
    let t = c[3] / (2.0 * b);
    let hbar = 2.0 * k * lambda * t;
    let bubble = BoundaryBubble::new(lambda, center, kbar, hbar)?;

    // rescaled C0 misfit
    let mut resid = 0.0f64;
    for (y, u) in &in_window {
        resid = resid.max((u - bubble.eval(y)).abs());
    }
    let residual = resid / peak_val;

    // gauge normalization of the rescaled profile (invariant: k lambda^2 t^2)
    let klt2 = k * lambda * lambda * t * t;
    let (norm_lambda, norm_t) = if hbar >= 0.0 {
        let nl = 1.0 + klt2;
        (nl, t * lambda / nl)
    } else {
        (1.0, t * lambda)
    };

    Ok(BubbleFit {
        bubble,
        raw_lambda: lambda,
        raw_t: t,
        norm_lambda,
        norm_t,
        center,
        residual,
        non_bubble: residual > 0.2,
    })
}

/// Sampled iota-pullback of a sphere bubble through the chart at its center.
pub fn pullback_sphere_bubble(b: &SphereBubble, y: &HalfSpacePoint) -> Result<f64> {
    let chart = StereographicChart::new(b.qprime)?;
    Ok(chart.weight(y) * b.eval(&chart.lift(y)))
}

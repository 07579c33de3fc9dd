//! Geometry of the half three-sphere and its charts.
//!
//! All sphere computations carry ambient 4-vector coordinates; stereographic
//! chart coordinates are produced on demand. The half-sphere is
//! `S3+ = { x in R^4 : |x| = 1, x4 >= 0 }`, its boundary the round 2-sphere
//! `x4 = 0`. The chart is the upper half-space `R3+ = { y : y3 >= 0 }`.

use crate::error::{Error, Result};

pub const UNIT_TOL: f64 = 1e-12;

/// Volume of the unit d-dimensional sphere in R^{d+1} (omega_0 = 2,
/// omega_1 = 2 pi, omega_2 = 4 pi, omega_3 = 2 pi^2, ...).
pub fn sphere_volume(d: usize) -> f64 {
    match d {
        0 => 2.0,
        1 => 2.0 * std::f64::consts::PI,
        _ => 2.0 * std::f64::consts::PI / (d as f64 - 1.0) * sphere_volume(d - 2),
    }
}

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

/// A point of the closed half-sphere, stored as an ambient unit 4-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    x: [f64; 4],
}

impl SpherePoint {
    /// Build from ambient coordinates; rejects vectors off the unit sphere
    /// (beyond 1e-12) or below the equator.
    pub fn new(x: [f64; 4]) -> Result<Self> {
        let n = dot4(&x, &x).sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("|x| = {n} is not 1")));
        }
        if x[3] < -UNIT_TOL {
            return Err(Error::Domain(format!("x4 = {} < 0: below the equator", x[3])));
        }
        let mut x = x.map(|c| c / n);
        if x[3].abs() <= UNIT_TOL {
            x[3] = 0.0;
            let m = dot4(&x, &x).sqrt();
            x = x.map(|c| c / m);
        }
        Ok(Self { x })
    }

    /// Normalize an arbitrary nonzero 4-vector onto the sphere.
    pub fn from_unnormalized(x: [f64; 4]) -> Result<Self> {
        let n = dot4(&x, &x).sqrt();
        if n == 0.0 {
            return Err(Error::Domain("cannot normalize the zero vector".into()));
        }
        Self::new(x.map(|c| c / n))
    }

    /// Boundary point from a unit 3-vector in the x4 = 0 hyperplane.
    pub fn boundary(v: [f64; 3]) -> Result<Self> {
        Self::from_unnormalized([v[0], v[1], v[2], 0.0])
    }

    pub fn coords(&self) -> [f64; 4] {
        self.x
    }

    pub fn is_boundary(&self) -> bool {
        self.x[3] == 0.0
    }

    /// Geodesic distance, arccos of the clamped dot product.
    pub fn distance(&self, other: &SpherePoint) -> f64 {
        dot4(&self.x, &other.x).clamp(-1.0, 1.0).acos()
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        dot4(&self.x, &other.x)
    }

    pub fn antipode(&self) -> [f64; 4] {
        self.x.map(|c| -c)
    }
}

/// A point of the half-space chart R3+.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpacePoint {
    y: [f64; 3],
}

impl HalfSpacePoint {
    pub fn new(y: [f64; 3]) -> Result<Self> {
        if y[2] < -UNIT_TOL {
            return Err(Error::Domain(format!("y3 = {} < 0", y[2])));
        }
        let mut y = y;
        if y[2].abs() <= UNIT_TOL && y[2] < 0.0 {
            y[2] = 0.0;
        }
        Ok(Self { y })
    }

    pub fn coords(&self) -> [f64; 3] {
        self.y
    }

    pub fn norm(&self) -> f64 {
        dot3(&self.y, &self.y).sqrt()
    }

    pub fn is_boundary(&self) -> bool {
        self.y[2].abs() <= UNIT_TOL
    }
}

pub fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

// ---------------------------------------------------------------------------
// Stereographic chart
// ---------------------------------------------------------------------------

/// The stereographic projection through the pole `-q`, for `q` on the
/// boundary sphere. Maps the half-sphere onto R3+ with `q` at the origin,
/// the boundary to `{ y3 = 0 }` and `-q` to infinity. The tangent map at `q`
/// is (1/2) Id.
#[derive(Debug, Clone)]
pub struct StereographicChart {
    q: SpherePoint,
    // Orthonormal basis (b1, b2, e4) of the hyperplane orthogonal to q;
    // the chart's y3-axis is the ambient x4-axis.
    b1: [f64; 4],
    b2: [f64; 4],
}

impl StereographicChart {
    pub fn new(q: SpherePoint) -> Result<Self> {
        if !q.is_boundary() {
            return Err(Error::Domain("chart center must lie on the boundary sphere".into()));
        }
        let (b1, b2) = boundary_tangent_frame(&q);
        Ok(Self { q, b1, b2 })
    }

    pub fn center(&self) -> SpherePoint {
        self.q
    }

    /// Orthonormal tangent frame of the boundary 2-sphere at the center.
    pub fn frame(&self) -> ([f64; 4], [f64; 4]) {
        (self.b1, self.b2)
    }

    /// Forward projection. Fails within 1e-12 of the pole `-q`.
    pub fn project(&self, x: &SpherePoint) -> Result<HalfSpacePoint> {
        let c = x.dot(&self.q);
        if 1.0 + c <= UNIT_TOL {
            return Err(Error::Domain("projection pole: x = -q".into()));
        }
        let xv = x.coords();
        let qv = self.q.coords();
        let mut t = [0.0; 4];
        for i in 0..4 {
            t[i] = (xv[i] - c * qv[i]) / (1.0 + c);
        }
        let y = [dot4(&t, &self.b1), dot4(&t, &self.b2), t[3].max(0.0)];
        HalfSpacePoint::new(y)
    }

    /// Inverse projection.
    pub fn lift(&self, y: &HalfSpacePoint) -> SpherePoint {
        let yv = y.coords();
        let qv = self.q.coords();
        let n2 = dot3(&yv, &yv);
        let mut x = [0.0; 4];
        for i in 0..4 {
            let cap = yv[0] * self.b1[i] + yv[1] * self.b2[i];
            x[i] = (2.0 * cap + (1.0 - n2) * qv[i]) / (1.0 + n2);
        }
        x[3] = (2.0 * yv[2] / (1.0 + n2)).max(0.0);
        SpherePoint::from_unnormalized(x).expect("lift of a finite chart point is on the sphere")
    }

    /// Conformal weight W(y) = (2 / (1 + |y|^2))^{1/2} (the n = 3 exponent).
    pub fn weight(&self, y: &HalfSpacePoint) -> f64 {
        let n2 = dot3(&y.coords(), &y.coords());
        (2.0 / (1.0 + n2)).sqrt()
    }
}

/// Deterministic orthonormal frame (b1, b2) of the tangent plane of the
/// boundary 2-sphere at q (both orthogonal to q and to e4).
pub fn boundary_tangent_frame(q: &SpherePoint) -> ([f64; 4], [f64; 4]) {
    let qv = q.coords();
    let q3 = [qv[0], qv[1], qv[2]];
    // pick the coordinate axis least aligned with q
    let mut k = 0;
    for i in 1..3 {
        if q3[i].abs() < q3[k].abs() {
            k = i;
        }
    }
    let mut a = [0.0f64; 3];
    a[k] = 1.0;
    let ad = dot3(&a, &q3);
    let mut t1 = [a[0] - ad * q3[0], a[1] - ad * q3[1], a[2] - ad * q3[2]];
    let n1 = dot3(&t1, &t1).sqrt();
    t1 = t1.map(|c| c / n1);
    // t2 = q3 x t1
    let t2 = [
        q3[1] * t1[2] - q3[2] * t1[1],
        q3[2] * t1[0] - q3[0] * t1[2],
        q3[0] * t1[1] - q3[1] * t1[0],
    ];
    (
        [t1[0], t1[1], t1[2], 0.0],
        [t2[0], t2[1], t2[2], 0.0],
    )
}

/// The pullback of a half-sphere field to the chart:
/// `(iota v)(y) = (2/(1+|y|^2))^{1/2} v(pi_q^{-1}(y))`.
pub fn pullback_iota<'a, F>(chart: &'a StereographicChart, v: F) -> impl Fn(&HalfSpacePoint) -> f64 + 'a
where
    F: Fn(&SpherePoint) -> f64 + 'a,
{
    move |y: &HalfSpacePoint| chart.weight(y) * v(&chart.lift(y))
}

/// Green's function of the conformal Laplacian -8 lap + 6 with pole `q`,
/// evaluated at `x`: `G_q(x) = ((1+|y|^2)/2)^{1/2} / |y|` in pi_q
/// coordinates. Equivalently `(1 - cos d(q, x))^{-1/2}`.
pub fn greens_function(q: &SpherePoint, x: &SpherePoint) -> Result<f64> {
    let c = q.dot(x).clamp(-1.0, 1.0);
    if 1.0 - c <= UNIT_TOL {
        return Err(Error::Domain("Green's function pole: x = q".into()));
    }
    Ok(1.0 / (1.0 - c).sqrt())
}

/// Chart-form evaluation of the Green's function, used as the second route
/// in consistency tests.
pub fn greens_function_chart(q: &SpherePoint, x: &SpherePoint) -> Result<f64> {
    let chart = StereographicChart::new(*q)?;
    let y = chart.project(x)?;
    let r = y.norm();
    if r <= UNIT_TOL {
        return Err(Error::Domain("Green's function pole: x = q".into()));
    }
    Ok(((1.0 + r * r) / 2.0).sqrt() / r)
}

// ---------------------------------------------------------------------------
// Spherical caps
// ---------------------------------------------------------------------------

/// A spherical cap `Sigma_theta = { x in S^n : x_{n+1} >= cos theta }`.
#[derive(Debug, Clone, Copy)]
pub struct CapSpec {
    theta: f64,
}

impl CapSpec {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 1e-6 && theta < std::f64::consts::PI - 1e-6) {
            return Err(Error::Domain(format!(
                "cap angle {theta} out of (0, pi) with 1e-6 margin"
            )));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Mean curvature of the cap boundary, h_theta = cos(theta)/sin(theta).
    pub fn mean_curvature(&self) -> f64 {
        self.theta.cos() / self.theta.sin()
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// The half 3-sphere (volume measure, total pi^2).
    HalfSphere,
    /// The boundary 2-sphere (surface measure, total 4 pi).
    BoundarySphere,
    /// The cap Sigma_theta of S^3 (volume measure, total omega_2 F(theta)).
    Cap(f64),
    /// Truncated half-ball { y in R3+ : |y| <= R } (Lebesgue measure).
    TruncatedHalfBall(f64),
}

/// Nodes and strictly positive weights for one of the supported regions.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub region: Region,
    /// Ambient 4-vector nodes for sphere regions; chart 3-vectors get a
    /// zero fourth component and are stored in `chart_nodes`.
    pub nodes: Vec<SpherePoint>,
    pub chart_nodes: Vec<HalfSpacePoint>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate_sphere<F: Fn(&SpherePoint) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    pub fn integrate_chart<F: Fn(&HalfSpacePoint) -> f64>(&self, f: F) -> f64 {
        self.chart_nodes.iter().zip(&self.weights).map(|(y, w)| w * f(y)).sum()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = if n == 0 { 0.0 } else { n as f64 * (x * p1 - p0) / (x * x - 1.0) };
    (p1, dp)
}

/// Gauss-Legendre nodes and weights mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

/// Product quadrature rule for the supported regions. `resolution` scales
/// every direction; degree <= 2 spherical polynomials are integrated to
/// 1e-10 for resolution >= 8.
pub fn build_quadrature(region: Region, resolution: usize) -> Result<QuadratureRule> {
    if resolution < 4 {
        return Err(Error::Usage(format!("resolution {resolution} < 4")));
    }
    let n = resolution;
    match region {
        Region::BoundarySphere => {
            let (us, wu) = gauss_legendre(n); // u = cos(polar)
            let m = 2 * n;
            let mut nodes = Vec::with_capacity(n * m);
            let mut weights = Vec::with_capacity(n * m);
            for (u, wi) in us.iter().zip(&wu) {
                let s = (1.0 - u * u).sqrt();
                for j in 0..m {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    nodes.push(SpherePoint::new([s * phi.cos(), s * phi.sin(), *u, 0.0])?);
                    weights.push(wi * 2.0 * std::f64::consts::PI / m as f64);
                }
            }
            Ok(QuadratureRule { region, nodes, chart_nodes: Vec::new(), weights })
        }
        Region::HalfSphere => cap_rule(Region::HalfSphere, std::f64::consts::FRAC_PI_2, n),
        Region::Cap(theta) => {
            let cap = CapSpec::new(theta)?;
            cap_rule(region, cap.theta(), n)
        }
        Region::TruncatedHalfBall(radius) => {
            if radius <= 0.0 {
                return Err(Error::Usage("half-ball radius must be positive".into()));
            }
            // spherical product rule: GL in r, GL in cos(polar from +z), trapezoid in azimuth
            let (rs, wr) = gauss_legendre_on(2 * n, 0.0, radius);
            let (cs, wc) = gauss_legendre_on(n, 0.0, 1.0); // cos in [0,1]: upper half
            let m = 2 * n;
            let mut chart_nodes = Vec::new();
            let mut weights = Vec::new();
            for (r, wri) in rs.iter().zip(&wr) {
                for (c, wci) in cs.iter().zip(&wc) {
                    let s = (1.0 - c * c).sqrt();
                    for j in 0..m {
                        let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                        chart_nodes.push(HalfSpacePoint::new([
                            r * s * phi.cos(),
                            r * s * phi.sin(),
                            r * c,
                        ])?);
                        weights.push(wri * wci * r * r * 2.0 * std::f64::consts::PI / m as f64);
                    }
                }
            }
            Ok(QuadratureRule { region, nodes: Vec::new(), chart_nodes, weights })
        }
    }
}

/// Volume rule on the S^3 cap of opening `theta` about the x4 pole
/// (theta = pi/2 gives the half-sphere). Polar slices of the 3-sphere are
/// round 2-spheres of radius sin(chi) with chi the colatitude from e4.
fn cap_rule(region: Region, theta: f64, n: usize) -> Result<QuadratureRule> {
    let (chis, wchi) = gauss_legendre_on(n, 0.0, theta);
    let (us, wu) = gauss_legendre(n);
    let m = 2 * n;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (chi, wc) in chis.iter().zip(&wchi) {
        let (sc, cc) = chi.sin_cos();
        for (u, wi) in us.iter().zip(&wu) {
            let s = (1.0 - u * u).sqrt();
            for j in 0..m {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                nodes.push(SpherePoint::new([
                    sc * s * phi.cos(),
                    sc * s * phi.sin(),
                    sc * u,
                    cc,
                ])?);
                weights.push(wc * sc * sc * wi * 2.0 * std::f64::consts::PI / m as f64);
            }
        }
    }
    Ok(QuadratureRule { region, nodes, chart_nodes: Vec::new(), weights })
}

/// Surface rule on the Euclidean hemisphere { |y| = radius, y3 >= 0 },
/// the `partial_2 B_sigma` of the Pohozaev terms. Same product construction
/// as the sphere rules, scaled to the requested radius.
pub fn hemisphere_surface_rule(radius: f64, resolution: usize) -> Result<QuadratureRule> {
    if resolution < 4 {
        return Err(Error::Usage(format!("resolution {resolution} < 4")));
    }
    let n = resolution;
    let (cs, wc) = gauss_legendre_on(n, 0.0, 1.0); // cos(polar from +z) in [0,1]
    let m = 2 * n;
    let mut chart_nodes = Vec::new();
    let mut weights = Vec::new();
    for (c, wci) in cs.iter().zip(&wc) {
        let s = (1.0 - c * c).sqrt();
        for j in 0..m {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            chart_nodes.push(HalfSpacePoint::new([
                radius * s * phi.cos(),
                radius * s * phi.sin(),
                radius * c,
            ])?);
            weights.push(wci * radius * radius * 2.0 * std::f64::consts::PI / m as f64);
        }
    }
    Ok(QuadratureRule {
        region: Region::TruncatedHalfBall(radius),
        nodes: Vec::new(),
        chart_nodes,
        weights,
    })
}

/// Paired interior/boundary rules covering the closed half-sphere, the
/// input the Euler functionals expect.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub interior: QuadratureRule,
    pub boundary: QuadratureRule,
}

impl SphereRule {
    pub fn build(resolution: usize) -> Result<Self> {
        Ok(Self {
            interior: build_quadrature(Region::HalfSphere, resolution)?,
            boundary: build_quadrature(Region::BoundarySphere, resolution)?,
        })
    }

    /// Rules concentrated around a boundary point, for bubble-like
    /// integrands of concentration `gamma`: geodesic polar coordinates about
    /// the center, with the colatitude covered by three panels — a peak
    /// panel of width O(1/gamma), a logarithmic panel for the power-law
    /// tail, and a plain panel for the far hemisphere. Node count and
    /// accuracy are uniform in gamma.
    pub fn adapted(center: &SpherePoint, gamma: f64, resolution: usize) -> Result<Self> {
        if !center.is_boundary() {
            return Err(Error::Usage("adapted rule center must be a boundary point".into()));
        }
        let g = gamma.max(2.0);
        let n = resolution;
        let (t1, t2) = boundary_tangent_frame(center);
        let qv = center.coords();
        let e4 = [0.0, 0.0, 0.0, 1.0];

        // colatitude nodes with weights d(s) absorbed per panel
        let s_cut = (6.0 / g).min(std::f64::consts::FRAC_PI_4);
        let mut subst: Vec<(f64, f64)> = Vec::new();
        let (s1, w1) = gauss_legendre_on(2 * n, 0.0, s_cut);
        subst.extend(s1.iter().zip(&w1).map(|(s, w)| (*s, *w)));
        let (u2, w2) = gauss_legendre_on(2 * n, s_cut.ln(), std::f64::consts::FRAC_PI_2.ln());
        subst.extend(u2.iter().zip(&w2).map(|(u, w)| (u.exp(), w * u.exp())));
        let (s3, w3) = gauss_legendre_on(n, std::f64::consts::FRAC_PI_2, std::f64::consts::PI);
        subst.extend(s3.iter().zip(&w3).map(|(s, w)| (*s, *w)));
        let ww: Vec<f64> = vec![1.0; subst.len()];

        // interior: v over the half 2-sphere of directions (v . e4 >= 0)
        let (cs, wc) = gauss_legendre_on(n, 0.0, 1.0);
        let m = 2 * n;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for ((s, ds), wsi) in subst.iter().zip(&ww) {
            let (ss, cc) = s.sin_cos();
            for (c, wci) in cs.iter().zip(&wc) {
                let sv = (1.0 - c * c).sqrt();
                for j in 0..m {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    let mut x = [0.0; 4];
                    for i in 0..4 {
                        let v = sv * phi.cos() * t1[i] + sv * phi.sin() * t2[i] + c * e4[i];
                        x[i] = cc * qv[i] + ss * v;
                    }
                    nodes.push(SpherePoint::from_unnormalized(x)?);
                    weights.push(wsi * ds * ss * ss * wci * 2.0 * std::f64::consts::PI / m as f64);
                }
            }
        }
        let interior = QuadratureRule {
            region: Region::HalfSphere,
            nodes,
            chart_nodes: Vec::new(),
            weights,
        };

        // boundary: directions on the unit circle in span(t1, t2)
        let mb = 2 * n;
        let mut bnodes = Vec::new();
        let mut bweights = Vec::new();
        for ((s, ds), wsi) in subst.iter().zip(&ww) {
            let (ss, cc) = s.sin_cos();
            for j in 0..mb {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / mb as f64;
                let mut x = [0.0; 4];
                for i in 0..4 {
                    let v = phi.cos() * t1[i] + phi.sin() * t2[i];
                    x[i] = cc * qv[i] + ss * v;
                }
                x[3] = 0.0;
                bnodes.push(SpherePoint::from_unnormalized(x)?);
                bweights.push(wsi * ds * ss * 2.0 * std::f64::consts::PI / mb as f64);
            }
        }
        let boundary = QuadratureRule {
            region: Region::BoundarySphere,
            nodes: bnodes,
            chart_nodes: Vec::new(),
            weights: bweights,
        };

        Ok(Self { interior, boundary })
    }
}

/// `F(theta) = int_0^theta sin^{n-1} s ds` by adaptive Simpson quadrature.
pub fn cap_area_factor(theta: f64, n: usize) -> f64 {
    adaptive_simpson(&|s: f64| s.sin().powi(n as i32 - 1), 0.0, theta, 1e-12, 40)
}

/// Adaptive Simpson integration with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_rec(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson_rec(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
            + simpson_rec(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
    }
}

/// Deterministic Fibonacci lattice on the boundary 2-sphere, used for
/// global seeding.
pub fn fibonacci_boundary_points(n: usize) -> Vec<SpherePoint> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            SpherePoint::new([r * phi.cos(), r * phi.sin(), z, 0.0]).expect("unit by construction")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_boundary_point(rng: &mut impl Rng) -> SpherePoint {
        loop {
            let v: [f64; 3] = [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5];
            if dot3(&v, &v) > 1e-4 {
                return SpherePoint::boundary(v).unwrap();
            }
        }
    }

    fn random_halfsphere_point(rng: &mut impl Rng) -> SpherePoint {
        loop {
            let v = [
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() * 0.5,
            ];
            if dot4(&v, &v) > 1e-4 {
                return SpherePoint::from_unnormalized(v).unwrap();
            }
        }
    }

    #[test]
    fn projection_maps_center_to_origin() {
        let q = SpherePoint::boundary([1.0, 0.0, 0.0]).unwrap();
        let chart = StereographicChart::new(q).unwrap();
        let y = chart.project(&q).unwrap();
        assert!(y.norm() < 1e-14);
    }

    #[test]
    fn projection_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_boundary_point(&mut rng);
        let chart = StereographicChart::new(q).unwrap();
        for _ in 0..100 {
            let x = random_halfsphere_point(&mut rng);
            let y = chart.project(&x).unwrap();
            let back = chart.lift(&y);
            let err: f64 = x
                .coords()
                .iter()
                .zip(back.coords().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "round trip error {err}");
        }
    }

    #[test]
    fn projection_pole_is_rejected() {
        let q = SpherePoint::boundary([0.0, 1.0, 0.0]).unwrap();
        let chart = StereographicChart::new(q).unwrap();
        let pole = SpherePoint::new([0.0, -1.0, 0.0, 0.0]).unwrap();
        assert!(chart.project(&pole).is_err());
    }

    #[test]
    fn tangent_map_at_center_is_half_identity() {
        let q = SpherePoint::boundary([0.0, 0.0, 1.0]).unwrap();
        let chart = StereographicChart::new(q).unwrap();
        let (b1, b2) = chart.frame();
        let h: f64 = 1e-6;
        for dir in [b1, b2, [0.0, 0.0, 0.0, 1.0]] {
            let qv = q.coords();
            let xp: [f64; 4] = std::array::from_fn(|i| qv[i] * (h).cos() + dir[i] * (h).sin());
            let x = SpherePoint::from_unnormalized(xp).unwrap();
            let y = chart.project(&x).unwrap();
            // displacement h along a geodesic should map to about h/2 in the chart
            let scale = y.coords().iter().map(|c| c * c).sum::<f64>().sqrt() / h;
            assert!((scale - 0.5).abs() < 1e-6, "tangent scale {scale}");
        }
    }

    #[test]
    fn greens_function_values() {
        let q = SpherePoint::boundary([1.0, 0.0, 0.0]).unwrap();
        let chart = StereographicChart::new(q).unwrap();
        // |y| = 1 -> G = 1
        let x = chart.lift(&HalfSpacePoint::new([0.0, 0.0, 1.0]).unwrap());
        assert!((greens_function(&q, &x).unwrap() - 1.0).abs() < 1e-12);
        // |y| -> infinity: |y| G(y) -> |y|/sqrt(2), i.e. G -> 1/sqrt(2)
        let y = HalfSpacePoint::new([1e3, 0.0, 0.0]).unwrap();
        let x = chart.lift(&y);
        let g = greens_function(&q, &x).unwrap();
        let ratio = g * y.norm() / (y.norm() / 2.0_f64.sqrt());
        assert!((ratio - 1.0).abs() < 1e-3, "far-field ratio {ratio}");
        // pole
        assert!(greens_function(&q, &q).is_err());
    }

    #[test]
    fn greens_function_chart_matches_closed_form_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_boundary_point(&mut rng);
            let x = random_boundary_point(&mut rng);
            if q.distance(&x) < 1e-3 {
                continue;
            }
            let a = greens_function(&q, &x).unwrap();
            let b = greens_function_chart(&q, &x).unwrap();
            let c = greens_function_chart(&x, &q).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs());
            assert!((b - c).abs() < 1e-10 * b.abs());
        }
    }

    #[test]
    fn quadrature_totals() {
        let bd = build_quadrature(Region::BoundarySphere, 16).unwrap();
        let four_pi = 4.0 * std::f64::consts::PI;
        assert!((bd.total_weight() - four_pi).abs() < 1e-10 * four_pi);

        let hs = build_quadrature(Region::HalfSphere, 16).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((hs.total_weight() - pi2).abs() < 1e-8 * pi2);

        let theta = 1.1;
        let cap = build_quadrature(Region::Cap(theta), 16).unwrap();
        let expect = 4.0 * std::f64::consts::PI * cap_area_factor(theta, 3);
        assert!((cap.total_weight() - expect).abs() < 1e-8 * expect);

        let hb = build_quadrature(Region::TruncatedHalfBall(2.0), 8).unwrap();
        let vol = 2.0 / 3.0 * std::f64::consts::PI * 8.0;
        assert!((hb.total_weight() - vol).abs() < 1e-8 * vol);

        for rule in [&bd, &hs, &cap, &hb] {
            assert!(rule.weights.iter().all(|w| *w > 0.0));
        }
    }

    #[test]
    fn quadrature_degree_two_exactness() {
        // int over S^2 of x_i x_j = (4 pi / 3) delta_ij; odd moments vanish
        let bd = build_quadrature(Region::BoundarySphere, 8).unwrap();
        let four_pi = 4.0 * std::f64::consts::PI;
        for i in 0..3 {
            let m1 = bd.integrate_sphere(|x| x.coords()[i]);
            assert!(m1.abs() < 1e-10, "first moment {m1}");
            let m2 = bd.integrate_sphere(|x| x.coords()[i] * x.coords()[i]);
            assert!((m2 - four_pi / 3.0).abs() < 1e-10);
        }
        let m12 = bd.integrate_sphere(|x| x.coords()[0] * x.coords()[1]);
        assert!(m12.abs() < 1e-10);
    }

    #[test]
    fn halfsphere_x4_moment_matches_dense_rule() {
        let coarse = build_quadrature(Region::HalfSphere, 12).unwrap();
        let dense = build_quadrature(Region::HalfSphere, 48).unwrap();
        let a = coarse.integrate_sphere(|x| x.coords()[3]);
        let b = dense.integrate_sphere(|x| x.coords()[3]);
        assert!((a - b).abs() < 1e-6 * b.abs());
        // closed form: 4 pi / 3
        assert!((b - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-9);
    }

    #[test]
    fn cap_area_derivative_consistency() {
        // d/dtheta |Sigma_theta| = omega_2 sin^2(theta)
        let h = 1e-4;
        let theta = 0.9;
        let ap = build_quadrature(Region::Cap(theta + h), 24).unwrap().total_weight();
        let am = build_quadrature(Region::Cap(theta - h), 24).unwrap().total_weight();
        let deriv = (ap - am) / (2.0 * h);
        let expect = 4.0 * std::f64::consts::PI * theta.sin().powi(2);
        assert!(
            (deriv - expect).abs() < 1e-4 * expect,
            "d|cap|/dtheta = {deriv}, expected {expect}"
        );
    }

    #[test]
    fn unsupported_resolution_rejected() {
        assert!(build_quadrature(Region::BoundarySphere, 3).is_err());
    }

    #[test]
    fn adapted_rule_totals() {
        let q = SpherePoint::boundary([0.0, 0.0, 1.0]).unwrap();
        for gamma in [1.0, 10.0, 100.0] {
            let rule = SphereRule::adapted(&q, gamma, 24).unwrap();
            let pi2 = std::f64::consts::PI.powi(2);
            let four_pi = 4.0 * std::f64::consts::PI;
            let ti = rule.interior.total_weight();
            let tb = rule.boundary.total_weight();
            assert!((ti - pi2).abs() < 1e-7 * pi2, "interior total {ti} at gamma {gamma}");
            assert!((tb - four_pi).abs() < 1e-7 * four_pi, "boundary total {tb} at gamma {gamma}");
        }
    }

    #[test]
    fn sphere_volumes() {
        assert!((sphere_volume(2) - 4.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((sphere_volume(3) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-13);
    }
}

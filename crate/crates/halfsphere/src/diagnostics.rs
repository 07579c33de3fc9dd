//! Pohozaev-identity evaluation on half-balls, the boundary-term limit, and
//! the Kazdan-Warner-type obstruction check.

use crate::error::{Error, Result};
use crate::fields::{expr::Expr, pullback_to_chart, FieldSpec};
use crate::geometry::{
    build_quadrature, dot3, fibonacci_boundary_points, gauss_legendre_on,
    hemisphere_surface_rule, HalfSpacePoint, Region, SpherePoint, StereographicChart,
};

/// A scalar function on the chart with a Euclidean gradient.
pub trait ChartFunction {
    fn value(&self, y: &HalfSpacePoint) -> f64;
    fn gradient(&self, y: &HalfSpacePoint) -> [f64; 3];
}

impl ChartFunction for crate::bubbles::BoundaryBubble {
    fn value(&self, y: &HalfSpacePoint) -> f64 {
        self.eval(y)
    }
    fn gradient(&self, y: &HalfSpacePoint) -> [f64; 3] {
        self.gradient(y)
    }
}

/// Chart expression in the variables x1..x3 with exact derivatives.
#[derive(Debug, Clone)]
pub struct ChartExpr {
    value: Expr,
    grad: [Expr; 3],
}

impl ChartExpr {
    pub fn new(value: Expr) -> Self {
        let grad = [value.derivative(0), value.derivative(1), value.derivative(2)];
        Self { value, grad }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Expr::Const(c))
    }

    /// Exact chart pullback of a half-sphere expression field.
    pub fn from_field(field: &FieldSpec, chart: &StereographicChart) -> Result<Self> {
        Ok(Self::new(pullback_to_chart(field, chart)?))
    }
}

impl ChartFunction for ChartExpr {
    fn value(&self, y: &HalfSpacePoint) -> f64 {
        let yv = y.coords();
        self.value.eval(&[yv[0], yv[1], yv[2], 0.0])
    }
    fn gradient(&self, y: &HalfSpacePoint) -> [f64; 3] {
        let yv = y.coords();
        let at = [yv[0], yv[1], yv[2], 0.0];
        std::array::from_fn(|i| self.grad[i].eval(&at))
    }
}

/// The seven terms of the Pohozaev identity on the half-ball of radius
/// sigma, arranged as `lhs_volume + lhs_boundary = rhs_gradK + rhs_gradH +
/// rhs_B + rhs_Kflux + rhs_Hedge`. Each `rhs_*` field is the signed
/// contribution as it enters the right side: `rhs_b = -int_{d2} B`,
/// `rhs_k_flux = -(8(p+1))^{-1} int_{d2} K u^{p+1} x.nu`,
/// `rhs_h_edge = -(p+3)^{-1} int_{edge} H u^{(p+3)/2} x'.nu'`.
#[derive(Debug, Clone, Copy)]
pub struct PohozaevReport {
    pub lhs_volume: f64,
    pub lhs_boundary: f64,
    pub rhs_grad_k: f64,
    pub rhs_grad_h: f64,
    pub rhs_b: f64,
    pub rhs_k_flux: f64,
    pub rhs_h_edge: f64,
    pub imbalance: f64,
}

impl PohozaevReport {
    pub fn largest_term(&self) -> f64 {
        [
            self.lhs_volume,
            self.lhs_boundary,
            self.rhs_grad_k,
            self.rhs_grad_h,
            self.rhs_b,
            self.rhs_k_flux,
            self.rhs_h_edge,
        ]
        .iter()
        .map(|t| t.abs())
        .fold(0.0, f64::max)
    }
}

/// The two critical prefactors; both vanish identically at (n, p) = (3, 5).
pub fn pohozaev_prefactors(p: f64) -> (f64, f64) {
    ((0.5 - 3.0 / (p + 1.0)) / 8.0, 0.5 * (0.5 - 4.0 / (p + 3.0)))
}

/// `B(x, u, grad u) = du/dnu (x . grad u) + (1/2) u du/dnu - |grad u|^2 / 2 (x . nu)`
/// integrated over the hemisphere of radius sigma.
fn b_term(u: &dyn ChartFunction, sigma: f64, resolution: usize) -> Result<f64> {
    let rule = hemisphere_surface_rule(sigma, resolution)?;
    Ok(rule.integrate_chart(|y| {
        let yv = y.coords();
        let g = u.gradient(y);
        let nu = [yv[0] / sigma, yv[1] / sigma, yv[2] / sigma];
        let dun = dot3(&g, &nu);
        let xg = dot3(&yv, &g);
        dun * xg + 0.5 * u.value(y) * dun - 0.5 * dot3(&g, &g) * sigma
    }))
}

/// Evaluate all terms of the identity for a positive `u` on the closed
/// half-ball of radius `sigma`, with data `K` (chart volume field) and `H`
/// (chart boundary field), at exponent `p >= 1`. n = 3.
pub fn pohozaev_identity(
    u: &dyn ChartFunction,
    k: &dyn ChartFunction,
    h: &dyn ChartFunction,
    p: f64,
    sigma: f64,
    resolution: usize,
) -> Result<PohozaevReport> {
    if p < 1.0 {
        return Err(Error::Usage(format!("exponent p = {p} < 1")));
    }
    let vol = build_quadrature(Region::TruncatedHalfBall(sigma), resolution)?;
    // positivity check on the quadrature sample
    if vol.chart_nodes.iter().any(|y| u.value(y) <= 0.0) {
        return Err(Error::Domain("u must be positive on the half-ball".into()));
    }
    let (c_vol, c_bdy) = pohozaev_prefactors(p);

    let lhs_volume = c_vol
        * vol.integrate_chart(|y| k.value(y) * u.value(y).powf(p + 1.0));
    let rhs_grad_k = vol.integrate_chart(|y| {
        let yv = y.coords();
        dot3(&yv, &k.gradient(y)) * u.value(y).powf(p + 1.0)
    }) / (8.0 * (p + 1.0));

    // boundary disc { |y'| <= sigma, y3 = 0 }: polar Gauss-Legendre rule
    let (rs, wr) = gauss_legendre_on(2 * resolution, 0.0, sigma);
    let m = 4 * resolution;
    let mut lhs_boundary = 0.0;
    let mut rhs_grad_h = 0.0;
    for (r, w) in rs.iter().zip(&wr) {
        for j in 0..m {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            let y = HalfSpacePoint::new([r * phi.cos(), r * phi.sin(), 0.0])?;
            let wgt = w * r * 2.0 * std::f64::consts::PI / m as f64;
            let upow = u.value(&y).powf((p + 3.0) / 2.0);
            lhs_boundary += wgt * c_bdy * h.value(&y) * upow;
            let yv = y.coords();
            let gh = h.gradient(&y);
            rhs_grad_h += wgt * (yv[0] * gh[0] + yv[1] * gh[1]) * upow / (p + 3.0);
        }
    }

    let rhs_b = -b_term(u, sigma, resolution)?;
    let hemi = hemisphere_surface_rule(sigma, resolution)?;
    // x . nu = sigma on the hemisphere
    let rhs_k_flux = -hemi.integrate_chart(|y| k.value(y) * u.value(y).powf(p + 1.0)) * sigma
        / (8.0 * (p + 1.0));
    // edge circle { |y'| = sigma, y3 = 0 }, outward co-normal x'.nu' = sigma
    let medge = 8 * resolution;
    let mut rhs_h_edge = 0.0;
    for j in 0..medge {
        let phi = 2.0 * std::f64::consts::PI * j as f64 / medge as f64;
        let y = HalfSpacePoint::new([sigma * phi.cos(), sigma * phi.sin(), 0.0])?;
        rhs_h_edge -= 2.0 * std::f64::consts::PI * sigma / medge as f64
            * h.value(&y)
            * u.value(&y).powf((p + 3.0) / 2.0)
            * sigma
            / (p + 3.0);
    }

    let imbalance =
        (lhs_volume + lhs_boundary) - (rhs_grad_k + rhs_grad_h + rhs_b + rhs_k_flux + rhs_h_edge);
    Ok(PohozaevReport {
        lhs_volume,
        lhs_boundary,
        rhs_grad_k,
        rhs_grad_h,
        rhs_b,
        rhs_k_flux,
        rhs_h_edge,
        imbalance,
    })
}

/// The boundary-term limit: for `h(x) = a |x|^{-1} + b(x)` the hemisphere
/// integral of B converges, as sigma -> 0, to `-(1/4) omega_2 a b(0) =
/// -pi a b(0)` (n = 3). Returns the per-sigma values and the linear-in-sigma
/// extrapolation to zero.
pub fn boundary_term_limit(
    h: &dyn ChartFunction,
    sigmas: &[f64],
    resolution: usize,
) -> Result<(Vec<f64>, f64)> {
    if sigmas.len() < 2 {
        return Err(Error::Usage("need at least two radii to extrapolate".into()));
    }
    let mut values = Vec::with_capacity(sigmas.len());
    for s in sigmas {
        values.push(b_term(h, *s, resolution)?);
    }
    let k = sigmas.len();
    let (s1, s2) = (sigmas[k - 2], sigmas[k - 1]);
    let (v1, v2) = (values[k - 2], values[k - 1]);
    let extrapolated = v2 + (v1 - v2) * (0.0 - s2) / (s1 - s2);
    Ok((values, extrapolated))
}

/// Outcome of the radial-monotonicity obstruction check (the H = 0 instance).
#[derive(Debug, Clone)]
pub struct KazdanWarnerReport {
    /// False when H is not identically zero: the implemented obstruction is
    /// the radial-monotonicity case with H = 0.
    pub applicable: bool,
    pub obstructed: bool,
    /// Largest over candidate chart centers of the sampled minimum of
    /// `x . grad K` in the chart.
    pub min_radial_derivative: f64,
    /// Chart center realizing it.
    pub pole: Option<SpherePoint>,
    /// Whether K is constant (constants admit solutions; never obstructed).
    pub constant_k: bool,
}

/// Check the Kazdan-Warner-type obstruction: with H = 0, if `x . grad K >= 0`
/// on a dense chart sample (for some chart center) and K is non-constant,
/// the problem admits no solution.
pub fn kazdan_warner_check(k: &FieldSpec, h: &FieldSpec) -> Result<KazdanWarnerReport> {
    // applicability: H identically zero on a dense boundary sample
    let happlies = fibonacci_boundary_points(512)
        .iter()
        .all(|p| h.value(p).abs() < 1e-12);
    if !happlies {
        return Ok(KazdanWarnerReport {
            applicable: false,
            obstructed: false,
            min_radial_derivative: f64::NAN,
            pole: None,
            constant_k: false,
        });
    }
    // constant K never obstructs
    let probe = fibonacci_boundary_points(256);
    let mut kmin = f64::INFINITY;
    let mut kmax = f64::NEG_INFINITY;
    {
        let vol = build_quadrature(Region::HalfSphere, 10)?;
        for x in probe.iter().chain(vol.nodes.iter()) {
            let v = k.value(x);
            kmin = kmin.min(v);
            kmax = kmax.max(v);
        }
    }
    if kmax - kmin < 1e-12 * kmax.abs().max(1.0) {
        return Ok(KazdanWarnerReport {
            applicable: true,
            obstructed: false,
            min_radial_derivative: 0.0,
            pole: None,
            constant_k: true,
        });
    }

    // candidate chart centers: coarse lattice plus the boundary critical
    // points of K restricted to the boundary
    let mut candidates = fibonacci_boundary_points(48);
    if let Ok(search) = crate::morse::find_critical_points(
        k,
        &FieldSpec::constant(crate::fields::FieldDomain::Boundary, 0.0),
        64,
    ) {
        candidates.extend(search.records.iter().map(|r| r.q));
    }

    let mut best = f64::NEG_INFINITY;
    let mut best_pole = None;
    for q in candidates {
        let chart = StereographicChart::new(q)?;
        let pulled = ChartExpr::from_field(k, &chart)?;
        let mut min_here = f64::INFINITY;
        // radial tan-substituted nodes x half-sphere directions
        let (ss, _) = gauss_legendre_on(40, 0.0, std::f64::consts::FRAC_PI_2 - 1e-3);
        for s in &ss {
            let r = s.tan();
            for dir in half_space_directions(36) {
                let y = HalfSpacePoint::new([r * dir[0], r * dir[1], r * dir[2]])?;
                let g = pulled.gradient(&y);
                let x_dot = r * (dir[0] * g[0] + dir[1] * g[1] + dir[2] * g[2]);
                min_here = min_here.min(x_dot);
            }
            if min_here < best {
                break;
            }
        }
        if min_here > best {
            best = min_here;
            best_pole = Some(q);
        }
    }

    Ok(KazdanWarnerReport {
        applicable: true,
        obstructed: best >= -1e-10,
        min_radial_derivative: best,
        pole: best_pole,
        constant_k: false,
    })
}

/// Deterministic directions covering the upper unit half-sphere.
fn half_space_directions(n: usize) -> Vec<[f64; 3]> {
    let mut dirs = Vec::with_capacity(n);
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    for i in 0..n {
        let z = (i as f64 + 0.5) / n as f64; // in (0, 1): strictly upper
        let r = (1.0 - z * z).sqrt();
        let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
        dirs.push([r * phi.cos(), r * phi.sin(), z]);
    }
    // a few boundary-tangent directions as well
    for j in 0..8 {
        let phi = 2.0 * std::f64::consts::PI * j as f64 / 8.0;
        dirs.push([phi.cos(), phi.sin(), 0.0]);
    }
    dirs
}

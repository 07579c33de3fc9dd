//! The prescribed data: K on the closed half-sphere and H on its boundary.
//!
//! Both are entered as expressions in the ambient coordinates `x1..x4`
//! (restriction to the boundary sets `x4 = 0`), or carried as sampled grids
//! with local quadratic least-squares interpolation.

pub mod expr;
mod grid;

pub use expr::{parse_expression, Expr};
pub use grid::GridField;

use crate::error::{Error, Result};
use crate::geometry::{
    boundary_tangent_frame, fibonacci_boundary_points, SpherePoint, StereographicChart,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldDomain {
    HalfSphere,
    Boundary,
}

#[derive(Debug, Clone)]
enum Backend {
    Expression {
        value: Expr,
        grad: [Expr; 4],
        hess: [[Expr; 4]; 4],
    },
    Grid(GridField),
}

/// A scalar function on the closed half-sphere or on its boundary.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    domain: FieldDomain,
    backend: Backend,
}

impl FieldSpec {
    pub fn from_expression(domain: FieldDomain, e: Expr) -> Self {
        let grad: [Expr; 4] = std::array::from_fn(|i| e.derivative(i));
        let hess: [[Expr; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| grad[i].derivative(j)));
        FieldSpec { domain, backend: Backend::Expression { value: e, grad, hess } }
    }

    pub fn parse(domain: FieldDomain, text: &str) -> Result<Self> {
        let e = parse_expression(text)?;
        let f = Self::from_expression(domain, e);
        f.validate_finite()?;
        Ok(f)
    }

    pub fn from_grid(grid: GridField) -> Self {
        FieldSpec { domain: grid.domain(), backend: Backend::Grid(grid) }
    }

    pub fn constant(domain: FieldDomain, c: f64) -> Self {
        Self::from_expression(domain, Expr::Const(c))
    }

    /// A prescribed scalar curvature: parses and enforces strict positivity
    /// on a dense sample, recording a witness point on failure.
    pub fn curvature(text: &str) -> Result<Self> {
        let f = Self::parse(FieldDomain::HalfSphere, text)?;
        f.check_positive()?;
        Ok(f)
    }

    pub fn check_positive(&self) -> Result<()> {
        let mut worst = f64::INFINITY;
        let mut witness = [0.0; 4];
        for x in validation_sample(self.domain) {
            let v = self.value(&x);
            if v < worst {
                worst = v;
                witness = x.coords();
            }
        }
        if worst <= 0.0 {
            return Err(Error::Domain(format!(
                "field is not strictly positive: value {worst} at ({}, {}, {}, {})",
                witness[0], witness[1], witness[2], witness[3]
            )));
        }
        Ok(())
    }

    fn validate_finite(&self) -> Result<()> {
        for x in validation_sample(self.domain) {
            let v = self.value(&x);
            if !v.is_finite() {
                return Err(Error::Domain(format!(
                    "expression evaluates to {v} at {:?}",
                    x.coords()
                )));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> FieldDomain {
        self.domain
    }

    pub fn is_expression(&self) -> bool {
        matches!(self.backend, Backend::Expression { .. })
    }

    pub fn expression(&self) -> Option<&Expr> {
        match &self.backend {
            Backend::Expression { value, .. } => Some(value),
            Backend::Grid(_) => None,
        }
    }

    pub fn value(&self, x: &SpherePoint) -> f64 {
        match &self.backend {
            Backend::Expression { value, .. } => value.eval(&x.coords()),
            Backend::Grid(g) => g.value(x),
        }
    }

    /// Ambient gradient (not projected).
    pub fn ambient_gradient(&self, x: &SpherePoint) -> [f64; 4] {
        match &self.backend {
            Backend::Expression { grad, .. } => {
                let xv = x.coords();
                std::array::from_fn(|i| grad[i].eval(&xv))
            }
            Backend::Grid(g) => g.ambient_gradient(x),
        }
    }

    /// Gradient projected onto the tangent space of the 3-sphere at `x`.
    pub fn sphere_gradient(&self, x: &SpherePoint) -> [f64; 4] {
        let g = self.ambient_gradient(x);
        let xv = x.coords();
        let gn = crate::geometry::dot4(&g, &xv);
        std::array::from_fn(|i| g[i] - gn * xv[i])
    }

    /// Gradient of the restriction to the boundary 2-sphere at a boundary
    /// point: tangent to the boundary (orthogonal to both `q` and `e4`).
    pub fn boundary_gradient(&self, q: &SpherePoint) -> Result<[f64; 4]> {
        if !q.is_boundary() {
            return Err(Error::Domain("boundary gradient requested off the boundary".into()));
        }
        let g = self.ambient_gradient(q);
        let qv = q.coords();
        let gq = crate::geometry::dot4(&g, &qv);
        let mut t: [f64; 4] = std::array::from_fn(|i| g[i] - gq * qv[i]);
        t[3] = 0.0;
        Ok(t)
    }

    /// Outward normal derivative of a half-sphere field at a boundary point.
    /// The outward unit normal of the boundary inside the sphere is `-e4`.
    pub fn normal_derivative(&self, q: &SpherePoint) -> Result<f64> {
        if !q.is_boundary() {
            return Err(Error::Domain("normal derivative requested off the boundary".into()));
        }
        if self.domain != FieldDomain::HalfSphere {
            return Err(Error::Usage("normal derivative needs a half-sphere field".into()));
        }
        match &self.backend {
            Backend::Expression { grad, .. } => Ok(-grad[3].eval(&q.coords())),
            Backend::Grid(g) => g.normal_derivative(q),
        }
    }

    /// Second derivative along the boundary geodesic through `q` with
    /// initial velocity `t` (|t| = 1): `d^2/ds^2 f(q cos s + t sin s)`.
    pub fn boundary_second_derivative(&self, q: &SpherePoint, t: &[f64; 4]) -> Result<f64> {
        if !q.is_boundary() {
            return Err(Error::Domain("second derivative requested off the boundary".into()));
        }
        match &self.backend {
            Backend::Expression { grad, hess, .. } => {
                let xv = q.coords();
                let mut tht = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        tht += t[i] * hess[i][j].eval(&xv) * t[j];
                    }
                }
                let gq: f64 = (0..4).map(|i| grad[i].eval(&xv) * xv[i]).sum();
                Ok(tht - gq)
            }
            Backend::Grid(g) => g.boundary_second_derivative(q, t),
        }
    }

    /// True when second derivatives are exact rather than stencil estimates.
    pub fn has_exact_second_derivatives(&self) -> bool {
        self.is_expression()
    }

    /// The 2x2 Hessian of the boundary restriction in the orthonormal
    /// tangent frame at `q`, as (h11, h12, h22).
    pub fn boundary_hessian(&self, q: &SpherePoint) -> Result<(f64, f64, f64)> {
        let (t1, t2) = boundary_tangent_frame(q);
        let h11 = self.boundary_second_derivative(q, &t1)?;
        let h22 = self.boundary_second_derivative(q, &t2)?;
        // polarization for the off-diagonal entry
        let n = std::f64::consts::FRAC_1_SQRT_2;
        let tp: [f64; 4] = std::array::from_fn(|i| n * (t1[i] + t2[i]));
        let hpp = self.boundary_second_derivative(q, &tp)?;
        let h12 = hpp - 0.5 * (h11 + h22);
        Ok((h11, h12, h22))
    }
}

/// Deterministic dense validation sample for a domain.
fn validation_sample(domain: FieldDomain) -> Vec<SpherePoint> {
    match domain {
        FieldDomain::Boundary => fibonacci_boundary_points(2048),
        FieldDomain::HalfSphere => {
            let mut pts = fibonacci_boundary_points(512);
            // lift boundary lattice through a range of latitudes
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            let base = fibonacci_boundary_points(512);
            for (i, b) in base.iter().enumerate() {
                let u = ((i as f64 * golden).fract()) * 0.999;
                let chi = (1.0 - u).acos(); // denser near the pole
                let (s, c) = chi.sin_cos();
                let bv = b.coords();
                if let Ok(p) = SpherePoint::from_unnormalized([s * bv[0], s * bv[1], s * bv[2], c]) {
                    pts.push(p);
                }
            }
            pts.push(SpherePoint::new([0.0, 0.0, 0.0, 1.0]).unwrap());
            pts
        }
    }
}

/// The obstruction example field in ambient coordinates for a chart centered
/// at `q`: in `pi_q` coordinates it reads `2 + (|y|^2 - 1)/(y1^2 + y2^2 +
/// (y3 + 1)^2)`, which simplifies to `2 - (x . q)/(1 + x4)` on the sphere.
pub fn obstruction_field(q: &SpherePoint) -> Result<FieldSpec> {
    if !q.is_boundary() {
        return Err(Error::Domain("obstruction field center must be on the boundary".into()));
    }
    let qv = q.coords();
    let mut dot = Expr::Const(0.0);
    for i in 0..3 {
        if qv[i] != 0.0 {
            dot = Expr::Add(
                Box::new(dot),
                Box::new(Expr::Mul(Box::new(Expr::Const(qv[i])), Box::new(Expr::Var(i)))),
            );
        }
    }
    let denom = Expr::Add(Box::new(Expr::Const(1.0)), Box::new(Expr::Var(3)));
    let e = Expr::Sub(
        Box::new(Expr::Const(2.0)),
        Box::new(Expr::Div(Box::new(dot), Box::new(denom))),
    );
    Ok(FieldSpec::from_expression(FieldDomain::HalfSphere, e))
}

/// Ambient coordinates as expressions of the chart coordinates of the chart
/// at `q` (x1..x3 standing for y1..y3). Used to pull ambient fields back to
/// the chart exactly.
pub fn chart_coordinate_expressions(chart: &StereographicChart) -> [Expr; 4] {
    use Expr::{Add, Const, Div, Mul, Sub, Var};
    let q = chart.center().coords();
    let (b1, b2) = chart.frame();
    // |y|^2
    let n2 = Add(
        Box::new(Add(
            Box::new(Mul(Box::new(Var(0)), Box::new(Var(0)))),
            Box::new(Mul(Box::new(Var(1)), Box::new(Var(1)))),
        )),
        Box::new(Mul(Box::new(Var(2)), Box::new(Var(2)))),
    );
    let denom = Add(Box::new(Const(1.0)), Box::new(n2.clone()));
    let one_minus = Sub(Box::new(Const(1.0)), Box::new(n2));
    std::array::from_fn(|i| {
        // x_i = (2 (y1 b1_i + y2 b2_i) + (1 - |y|^2) q_i) / (1 + |y|^2), x4 = 2 y3/(1+|y|^2)
        let cap = Add(
            Box::new(Mul(Box::new(Const(b1[i])), Box::new(Var(0)))),
            Box::new(Mul(Box::new(Const(b2[i])), Box::new(Var(1)))),
        );
        let cap = if i == 3 { Var(2) } else { cap };
        let num = Add(
            Box::new(Mul(Box::new(Const(2.0)), Box::new(cap))),
            Box::new(Mul(Box::new(Const(q[i])), Box::new(one_minus.clone()))),
        );
        let num = if i == 3 { Mul(Box::new(Const(2.0)), Box::new(Var(2))) } else { num };
        Div(Box::new(num), Box::new(denom.clone()))
    })
}

/// Pull a half-sphere expression field back to the chart at `q` as an exact
/// chart expression in x1..x3.
pub fn pullback_to_chart(field: &FieldSpec, chart: &StereographicChart) -> Result<Expr> {
    let e = field
        .expression()
        .ok_or_else(|| Error::Usage("chart pullback needs an expression backend".into()))?;
    Ok(e.substitute(&chart_coordinate_expressions(chart)))
}

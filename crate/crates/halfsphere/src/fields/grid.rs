//! Grid-backed fields: sampled values with local quadratic least-squares
//! interpolation in geodesic normal coordinates.

use super::FieldDomain;
use crate::error::{Error, Result};
use crate::geometry::{boundary_tangent_frame, dot4, SpherePoint};
use crate::linalg::weighted_lstsq;

/// A field sampled on scattered nodes of its domain. Gradients come from
/// 9-point (boundary) or 20-point (half-sphere) quadratic stencils; second
/// derivatives are estimates, not exact.
#[derive(Debug, Clone)]
pub struct GridField {
    domain: FieldDomain,
    nodes: Vec<SpherePoint>,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(domain: FieldDomain, nodes: Vec<SpherePoint>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::Usage("node/value length mismatch".into()));
        }
        let needed = match domain {
            FieldDomain::Boundary => 9,
            FieldDomain::HalfSphere => 20,
        };
        if nodes.len() < needed {
            return Err(Error::Resolution(format!(
                "grid backend needs at least {needed} samples, got {}",
                nodes.len()
            )));
        }
        if domain == FieldDomain::Boundary && nodes.iter().any(|n| !n.is_boundary()) {
            return Err(Error::Usage("boundary grid contains interior nodes".into()));
        }
        Ok(Self { domain, nodes, values })
    }

    pub fn domain(&self) -> FieldDomain {
        self.domain
    }

    pub fn nodes(&self) -> &[SpherePoint] {
        &self.nodes
    }

    fn nearest(&self, x: &SpherePoint, k: usize) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.distance(x)))
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(k);
        d
    }

    /// Local quadratic fit at `x`; returns the fitted coefficients in the
    /// given tangent frame (constant, linear terms, quadratic terms).
    fn fit(&self, x: &SpherePoint, frame: &[[f64; 4]]) -> Result<Vec<f64>> {
        let dim = frame.len();
        let ncoef = 1 + dim + dim * (dim + 1) / 2;
        let k = (3 * ncoef / 2).max(ncoef + 3).min(self.nodes.len());
        let nb = self.nearest(x, k);
        let dmax = nb.last().map(|p| p.1).unwrap_or(1.0).max(1e-8);
        let mut rows = Vec::with_capacity(nb.len());
        let mut rhs = Vec::with_capacity(nb.len());
        let mut weights = Vec::with_capacity(nb.len());
        for (i, d) in &nb {
            let p = self.nodes[*i];
            // geodesic normal coordinates of p about x
            let c = x.dot(&p).clamp(-1.0, 1.0);
            let s = c.acos();
            let pv = p.coords();
            let xv = x.coords();
            let mut w: [f64; 4] = std::array::from_fn(|j| pv[j] - c * xv[j]);
            let nw = dot4(&w, &w).sqrt();
            if nw > 1e-14 {
                w = w.map(|cc| cc / nw * s);
            } else {
                w = [0.0; 4];
            }
            let u: Vec<f64> = frame.iter().map(|t| dot4(&w, t)).collect();
            let mut row = Vec::with_capacity(ncoef);
            row.push(1.0);
            row.extend(u.iter());
            for a in 0..dim {
                for b in a..dim {
                    row.push(u[a] * u[b]);
                }
            }
            rows.push(row);
            rhs.push(self.values[*i]);
            let t = d / (1.5 * dmax);
            weights.push((1.0 - t * t).max(0.05).powi(2));
        }
        weighted_lstsq(&rows, &rhs, &weights)
            .map_err(|_| Error::Resolution("underdetermined interpolation stencil".into()))
    }

    fn full_frame(&self, x: &SpherePoint) -> Vec<[f64; 4]> {
        match self.domain {
            FieldDomain::Boundary => {
                let (t1, t2) = boundary_tangent_frame(x);
                vec![t1, t2]
            }
            FieldDomain::HalfSphere => {
                // orthonormal basis of the tangent space of S^3 at x
                let xv = x.coords();
                let mut frame = Vec::new();
                for seed in [
                    [1.0, 0.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0],
                ] {
                    let mut v = seed;
                    let vx = dot4(&v, &xv);
                    for j in 0..4 {
                        v[j] -= vx * xv[j];
                    }
                    for t in &frame {
                        let vt = dot4(&v, t);
                        for j in 0..4 {
                            v[j] -= vt * t[j];
                        }
                    }
                    let n = dot4(&v, &v).sqrt();
                    if n > 1e-8 {
                        frame.push(v.map(|c| c / n));
                        if frame.len() == 3 {
                            break;
                        }
                    }
                }
                frame
            }
        }
    }

    pub fn value(&self, x: &SpherePoint) -> f64 {
        let frame = self.full_frame(x);
        match self.fit(x, &frame) {
            Ok(c) => c[0],
            Err(_) => {
                // fall back to the nearest sample
                let nb = self.nearest(x, 1);
                self.values[nb[0].0]
            }
        }
    }

    pub fn ambient_gradient(&self, x: &SpherePoint) -> [f64; 4] {
        let frame = self.full_frame(x);
        match self.fit(x, &frame) {
            Ok(c) => {
                let mut g = [0.0; 4];
                for (k, t) in frame.iter().enumerate() {
                    for j in 0..4 {
                        g[j] += c[1 + k] * t[j];
                    }
                }
                g
            }
            Err(_) => [0.0; 4],
        }
    }

    pub fn normal_derivative(&self, q: &SpherePoint) -> Result<f64> {
        if self.domain != FieldDomain::HalfSphere {
            return Err(Error::Usage("normal derivative needs a half-sphere grid".into()));
        }
        // one-sided stencil: require interior samples near q
        let nb = self.nearest(q, 24);
        let interior_near = nb
            .iter()
            .filter(|(i, d)| *d < 0.5 && !self.nodes[*i].is_boundary())
            .count();
        if interior_near < 6 {
            return Err(Error::Resolution(
                "too few near-boundary interior samples for a one-sided stencil".into(),
            ));
        }
        let frame = self.full_frame(q);
        let c = self.fit(q, &frame)?;
        // nu = -e4; gradient component along e4 in the fitted frame
        let mut d_e4 = 0.0;
        for (k, t) in frame.iter().enumerate() {
            d_e4 += c[1 + k] * t[3];
        }
        Ok(-d_e4)
    }

    pub fn boundary_second_derivative(&self, q: &SpherePoint, t: &[f64; 4]) -> Result<f64> {
        let frame = self.full_frame(q);
        let c = self.fit(q, &frame)?;
        let dim = frame.len();
        let u: Vec<f64> = frame.iter().map(|f| dot4(t, f)).collect();
        let mut idx = 1 + dim;
        let mut out = 0.0;
        for a in 0..dim {
            for b in a..dim {
                let factor = if a == b { 2.0 } else { 2.0 };
                // c * u_a u_b term contributes c*(u_a u_b)'' along t:
                // for a==b: 2 c u_a^2; for a<b: 2 c u_a u_b (the row stored u_a u_b once)
                out += factor * c[idx] * u[a] * u[b];
                idx += 1;
            }
        }
        Ok(out)
    }
}

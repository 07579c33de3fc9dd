//! Desk-scale finite-difference solver for the subcritical problem in the
//! half-space chart, and the boundary blow-up experiments built on it.
//!
//! The chart problem is
//!
//! ```text
//! -8 lap u = W(x)^tau K(x) u^p             in R3+,   p = 5 - tau,
//! -2 du/dx3 = W(x')^{tau/2} H(x') u^{(p+1)/2}  on x3 = 0,
//! ```
//!
//! with `W(x) = (2/(1+|x|^2))^{1/2}`, discretized on a graded tensor grid in
//! cylindrical (r, z) with the axisymmetric finite-volume 5-point operator.
//! The outer truncation carries a Robin condition matching the harmonic
//! decay `u ~ c/|x|`. Newton steps solve the symmetric (volume-scaled)
//! linearization with MINRES; the mountain-pass initialization is the best
//! point of a scaled-bubble path.

pub mod minres;

use crate::bubbles::{fit_bubble, BubbleFit, SphereBubble};
use crate::energetics::{phi_value, sup_over_scaling, SphereField};
use crate::error::{Error, Result};
use crate::fields::FieldSpec;
use crate::geometry::{fibonacci_boundary_points, HalfSpacePoint, SpherePoint, SphereRule, StereographicChart};
use minres::minres;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub chart_center: SpherePoint,
    /// Chart truncation radius R.
    pub radius: f64,
    pub nr: usize,
    pub nz: usize,
    /// Exponential grading strength; node k sits at
    /// `R (e^{a k/n} - 1)/(e^a - 1)`.
    pub grading: f64,
    /// Acceptance threshold for the discrete residual (max norm).
    pub newton_tol: f64,
    pub max_newton: usize,
    pub minres_tol: f64,
    pub max_minres: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            chart_center: SpherePoint::boundary([0.0, 0.0, 1.0]).expect("unit"),
            radius: 40.0,
            nr: 128,
            nz: 128,
            grading: 7.0,
            newton_tol: 1e-8,
            max_newton: 100,
            minres_tol: 1e-10,
            max_minres: 8000,
        }
    }
}

/// Node coordinates and values of one axisymmetric solve.
#[derive(Debug, Clone)]
pub struct AxisymmetricGrid {
    pub radius: f64,
    pub rs: Vec<f64>,
    pub zs: Vec<f64>,
    /// Row-major: `values[j * (nr + 1) + i]` at `(r_i, z_j)`.
    pub values: Vec<f64>,
}

impl AxisymmetricGrid {
    pub fn nr(&self) -> usize {
        self.rs.len() - 1
    }
    pub fn nz(&self) -> usize {
        self.zs.len() - 1
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.rs.len() + i]
    }

    /// Bilinear interpolation (clamped to the grid box).
    pub fn interpolate(&self, r: f64, z: f64) -> f64 {
        let (i, fr) = locate(&self.rs, r);
        let (j, fz) = locate(&self.zs, z);
        let n = self.rs.len();
        let v00 = self.values[j * n + i];
        let v10 = self.values[j * n + i + 1];
        let v01 = self.values[(j + 1) * n + i];
        let v11 = self.values[(j + 1) * n + i + 1];
        v00 * (1.0 - fr) * (1.0 - fz) + v10 * fr * (1.0 - fz) + v01 * (1.0 - fr) * fz
            + v11 * fr * fz
    }
}

fn locate(xs: &[f64], x: f64) -> (usize, f64) {
    let n = xs.len();
    if x <= xs[0] {
        return (0, 0.0);
    }
    if x >= xs[n - 1] {
        return (n - 2, 1.0);
    }
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xs[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, (x - xs[lo]) / (xs[lo + 1] - xs[lo]))
}

/// One accepted solve of the discrete subcritical problem.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub grid: AxisymmetricGrid,
    pub tau: f64,
    pub p: f64,
    /// Chart energy I_tau(u) (equals the sphere functional exactly).
    pub energy: f64,
    /// Sup of the sphere solution v = u / W.
    pub sup_sphere: f64,
    /// Sup of the chart solution u.
    pub sup_chart: f64,
    pub sup_location: HalfSpacePoint,
    /// Discrete residual (volume-scaled max norm) at acceptance.
    pub residual_norm: f64,
    /// Upper estimate of the mountain-pass level from the bubble path.
    pub mp_level: f64,
    pub iterations: usize,
    /// mp_level >= energy - tolerance check outcome (recorded, not enforced).
    pub mp_level_consistent: bool,
}

pub enum Strategy<'a> {
    /// Initialize from the best point of the scaled-bubble path.
    MountainPass,
    /// Continue from a previous solution on the same grid.
    Continuation(&'a SolveResult),
}

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------

struct Discretization {
    nr: usize,
    nz: usize,
    rs: Vec<f64>,
    zs: Vec<f64>,
    /// radial cell areas (without 2 pi): ar_i = (r_{i+1/2}^2 - r_{i-1/2}^2)/2
    ar: Vec<f64>,
    dz: Vec<f64>,
    /// K W^tau at nodes
    kw: Vec<f64>,
    /// H W^{tau/2} at boundary nodes
    hw: Vec<f64>,
    /// Robin coefficients on the outer faces
    robin_r: Vec<f64>, // per j at i = nr
    robin_z: Vec<f64>, // per i at j = nz
    tau: f64,
    p: f64,
}

impl Discretization {
    fn build(k: &FieldSpec, h: &FieldSpec, tau: f64, cfg: &SolverConfig) -> Result<Self> {
        if !(tau > 0.0 && tau <= 0.5) {
            return Err(Error::Usage(format!("tau = {tau} out of (0, 0.5]")));
        }
        let chart = StereographicChart::new(cfg.chart_center)?;
        let graded = |n: usize| -> Vec<f64> {
            let a = cfg.grading;
            (0..=n)
                .map(|i| cfg.radius * ((a * i as f64 / n as f64).exp() - 1.0) / (a.exp() - 1.0))
                .collect()
        };
        let rs = graded(cfg.nr);
        let zs = graded(cfg.nz);
        let p = 5.0 - tau;

        let half = |xs: &[f64], i: usize| 0.5 * (xs[i] + xs[i + 1]);
        let mut ar = Vec::with_capacity(cfg.nr + 1);
        for i in 0..=cfg.nr {
            let lo = if i == 0 { 0.0 } else { half(&rs, i - 1) };
            let hi = if i == cfg.nr { rs[cfg.nr] } else { half(&rs, i) };
            ar.push(0.5 * (hi * hi - lo * lo));
        }
        let mut dz = Vec::with_capacity(cfg.nz + 1);
        for j in 0..=cfg.nz {
            let lo = if j == 0 { 0.0 } else { half(&zs, j - 1) };
            let hi = if j == cfg.nz { zs[cfg.nz] } else { half(&zs, j) };
            dz.push(hi - lo);
        }

        let mut kw = Vec::with_capacity((cfg.nr + 1) * (cfg.nz + 1));
        for j in 0..=cfg.nz {
            for i in 0..=cfg.nr {
                let y = HalfSpacePoint::new([rs[i], 0.0, zs[j]])?;
                let kval = k.value(&chart.lift(&y));
                if kval <= 0.0 {
                    return Err(Error::Domain(format!(
                        "K = {kval} at chart point ({}, {})",
                        rs[i], zs[j]
                    )));
                }
                let w = chart.weight(&y);
                kw.push(kval * w.powf(tau));
            }
        }
        let mut hw = Vec::with_capacity(cfg.nr + 1);
        for i in 0..=cfg.nr {
            let y = HalfSpacePoint::new([rs[i], 0.0, 0.0])?;
            let hval = h.value(&chart.lift(&y));
            let w = chart.weight(&y);
            hw.push(hval * w.powf(tau / 2.0));
        }
        let big_r = cfg.radius;
        let robin_r: Vec<f64> = zs.iter().map(|z| big_r / (big_r * big_r + z * z)).collect();
        let robin_z: Vec<f64> = rs.iter().map(|r| big_r / (r * r + big_r * big_r)).collect();

        Ok(Self { nr: cfg.nr, nz: cfg.nz, rs, zs, ar, dz, kw, hw, robin_r, robin_z, tau, p })
    }

    fn n(&self) -> usize {
        (self.nr + 1) * (self.nz + 1)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.nr + 1) + i
    }

    fn volume(&self, i: usize, j: usize) -> f64 {
        self.ar[i] * self.dz[j]
    }

    /// Finite-volume residual, cell-integrated:
    /// `F = 8 (sum of face fluxes) + V W^tau K u^p (+ boundary flux)`.
    fn residual(&self, u: &[f64], out: &mut [f64]) {
        let nr = self.nr;
        let nz = self.nz;
        for j in 0..=nz {
            for i in 0..=nr {
                let id = self.idx(i, j);
                let mut flux = 0.0;
                // radial faces
                if i < nr {
                    let rf = 0.5 * (self.rs[i] + self.rs[i + 1]);
                    let a = rf * self.dz[j];
                    flux += a * (u[self.idx(i + 1, j)] - u[id]) / (self.rs[i + 1] - self.rs[i]);
                } else {
                    let a = self.rs[nr] * self.dz[j];
                    flux -= a * self.robin_r[j] * u[id];
                }
                if i > 0 {
                    let rf = 0.5 * (self.rs[i - 1] + self.rs[i]);
                    let a = rf * self.dz[j];
                    flux += a * (u[self.idx(i - 1, j)] - u[id]) / (self.rs[i] - self.rs[i - 1]);
                }
                // z faces
                if j < nz {
                    let a = self.ar[i];
                    flux += a * (u[self.idx(i, j + 1)] - u[id]) / (self.zs[j + 1] - self.zs[j]);
                } else {
                    let a = self.ar[i];
                    flux -= a * self.robin_z[i] * u[id];
                }
                if j > 0 {
                    let a = self.ar[i];
                    flux += a * (u[self.idx(i, j - 1)] - u[id]) / (self.zs[j] - self.zs[j - 1]);
                } else {
                    // nonlinear Neumann flux through z = 0:
                    // grad u . (-e_z) = -u_z = (1/2) W^{tau/2} H u^{(p+1)/2}
                    let a = self.ar[i];
                    flux += a * 0.5 * self.hw[i] * pospow(u[id], (self.p + 1.0) / 2.0);
                }
                out[id] = 8.0 * flux + self.volume(i, j) * self.kw[id] * pospow(u[id], self.p);
            }
        }
    }

    /// Jacobian-vector product at state `u`.
    fn jacobian_apply(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let nr = self.nr;
        let nz = self.nz;
        for j in 0..=nz {
            for i in 0..=nr {
                let id = self.idx(i, j);
                let mut flux = 0.0;
                if i < nr {
                    let rf = 0.5 * (self.rs[i] + self.rs[i + 1]);
                    let a = rf * self.dz[j];
                    flux += a * (v[self.idx(i + 1, j)] - v[id]) / (self.rs[i + 1] - self.rs[i]);
                } else {
                    let a = self.rs[nr] * self.dz[j];
                    flux -= a * self.robin_r[j] * v[id];
                }
                if i > 0 {
                    let rf = 0.5 * (self.rs[i - 1] + self.rs[i]);
                    let a = rf * self.dz[j];
                    flux += a * (v[self.idx(i - 1, j)] - v[id]) / (self.rs[i] - self.rs[i - 1]);
                }
                if j < nz {
                    let a = self.ar[i];
                    flux += a * (v[self.idx(i, j + 1)] - v[id]) / (self.zs[j + 1] - self.zs[j]);
                } else {
                    let a = self.ar[i];
                    flux -= a * self.robin_z[i] * v[id];
                }
                if j > 0 {
                    let a = self.ar[i];
                    flux += a * (v[self.idx(i, j - 1)] - v[id]) / (self.zs[j] - self.zs[j - 1]);
                } else {
                    let a = self.ar[i];
                    let q = (self.p + 1.0) / 2.0;
                    flux += a * 0.5 * self.hw[i] * q * pospow(u[id], q - 1.0) * v[id];
                }
                out[id] = 8.0 * flux
                    + self.volume(i, j) * self.kw[id] * self.p * pospow(u[id], self.p - 1.0)
                        * v[id];
            }
        }
    }

    /// Diagonal of the Jacobian at `u`, for symmetric Jacobi scaling of the
    /// Newton systems.
    fn jacobian_diagonal(&self, u: &[f64], out: &mut [f64]) {
        let nr = self.nr;
        let nz = self.nz;
        for j in 0..=nz {
            for i in 0..=nr {
                let id = self.idx(i, j);
                let mut d = 0.0;
                if i < nr {
                    let rf = 0.5 * (self.rs[i] + self.rs[i + 1]);
                    d -= rf * self.dz[j] / (self.rs[i + 1] - self.rs[i]);
                } else {
                    d -= self.rs[nr] * self.dz[j] * self.robin_r[j];
                }
                if i > 0 {
                    let rf = 0.5 * (self.rs[i - 1] + self.rs[i]);
                    d -= rf * self.dz[j] / (self.rs[i] - self.rs[i - 1]);
                }
                if j < nz {
                    d -= self.ar[i] / (self.zs[j + 1] - self.zs[j]);
                } else {
                    d -= self.ar[i] * self.robin_z[i];
                }
                if j > 0 {
                    d -= self.ar[i] / (self.zs[j] - self.zs[j - 1]);
                } else {
                    let q = (self.p + 1.0) / 2.0;
                    d += self.ar[i] * 0.5 * self.hw[i] * q * pospow(u[id], q - 1.0);
                }
                out[id] = 8.0 * d
                    + self.volume(i, j) * self.kw[id] * self.p * pospow(u[id], self.p - 1.0);
            }
        }
    }

    /// Volume-scaled max norm of the residual (the PDE residual).
    fn residual_max(&self, f: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..=self.nz {
            for i in 0..=self.nr {
                worst = worst.max(f[self.idx(i, j)].abs() / self.volume(i, j));
            }
        }
        worst
    }

    /// Interior-equation residual only (cells away from z = 0 and the outer
    /// truncation), for manufactured-solution order checks.
    fn interior_residual_max(&self, f: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 1..self.nz {
            for i in 0..self.nr {
                worst = worst.max(f[self.idx(i, j)].abs() / self.volume(i, j));
            }
        }
        worst
    }

    /// Second-order one-sided boundary-condition residual
    /// `-2 du/dz - W^{tau/2} H u^{(p+1)/2}` on z = 0, max norm.
    fn boundary_condition_residual(&self, u: &[f64]) -> f64 {
        let h0 = self.zs[1] - self.zs[0];
        let h1 = self.zs[2] - self.zs[1];
        let c0 = -(2.0 * h0 + h1) / (h0 * (h0 + h1));
        let c1 = (h0 + h1) / (h0 * h1);
        let c2 = -h0 / (h1 * (h0 + h1));
        let mut worst = 0.0f64;
        for i in 0..self.nr {
            let du = c0 * u[self.idx(i, 0)] + c1 * u[self.idx(i, 1)] + c2 * u[self.idx(i, 2)];
            let bc = -2.0 * du
                - self.hw[i] * pospow(u[self.idx(i, 0)], (self.p + 1.0) / 2.0);
            worst = worst.max(bc.abs());
        }
        worst
    }

    /// Chart energy
    /// `I_tau(u) = 4 int |grad u|^2 - (6-tau)^{-1} int W^tau K |u|^{6-tau}
    ///  - 4 (4 - tau/2)^{-1} int_b W^{tau/2} H |u|^{4-tau/2}` (with the 2 pi
    /// azimuthal factor).
    fn energy(&self, u: &[f64]) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut grad2 = 0.0;
        for j in 0..=self.nz {
            for i in 0..self.nr {
                let rf = 0.5 * (self.rs[i] + self.rs[i + 1]);
                let a = rf * self.dz[j];
                let d = u[self.idx(i + 1, j)] - u[self.idx(i, j)];
                grad2 += a * d * d / (self.rs[i + 1] - self.rs[i]);
            }
        }
        for j in 0..self.nz {
            for i in 0..=self.nr {
                let a = self.ar[i];
                let d = u[self.idx(i, j + 1)] - u[self.idx(i, j)];
                grad2 += a * d * d / (self.zs[j + 1] - self.zs[j]);
            }
        }
        // Robin quadratic form on the outer faces: captures the Dirichlet
        // energy of the matched harmonic tail u ~ c/|x| beyond the box
        for j in 0..=self.nz {
            let a = self.rs[self.nr] * self.dz[j];
            let uv = u[self.idx(self.nr, j)];
            grad2 += a * self.robin_r[j] * uv * uv;
        }
        for i in 0..=self.nr {
            let a = self.ar[i];
            let uv = u[self.idx(i, self.nz)];
            grad2 += a * self.robin_z[i] * uv * uv;
        }
        let mut vol = 0.0;
        for j in 0..=self.nz {
            for i in 0..=self.nr {
                let id = self.idx(i, j);
                vol += self.volume(i, j) * self.kw[id] * pospow(u[id].abs(), 6.0 - self.tau);
            }
        }
        let mut bdy = 0.0;
        for i in 0..=self.nr {
            bdy += self.ar[i]
                * self.hw[i]
                * pospow(u[self.idx(i, 0)].abs(), 4.0 - self.tau / 2.0);
        }
        two_pi
            * (4.0 * grad2 - vol / (6.0 - self.tau) - bdy * 4.0 / (4.0 - self.tau / 2.0))
    }
}

fn pospow(u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        u.powf(p)
    }
}

// ---------------------------------------------------------------------------
// Axisymmetry check
// ---------------------------------------------------------------------------

/// Verify the field is invariant under rotations about the chart axis:
/// sampled azimuthal variation below 1e-10.
pub fn check_axisymmetric(f: &FieldSpec, chart_center: &SpherePoint) -> Result<()> {
    let chart = StereographicChart::new(*chart_center)?;
    let (b1, b2) = chart.frame();
    let qv = chart_center.coords();
    let e4 = [0.0, 0.0, 0.0, 1.0];
    for iw in 0..6 {
        for ir in 1..6 {
            let w = std::f64::consts::PI * (iw as f64 + 0.3) / 6.0;
            let rho = std::f64::consts::FRAC_PI_2 * ir as f64 / 6.0;
            let mut base = None;
            for ia in 0..8 {
                let alpha = std::f64::consts::PI * ia as f64 / 4.0;
                let dir: [f64; 4] = std::array::from_fn(|m| {
                    rho.cos() * e4[m] + rho.sin() * (alpha.cos() * b1[m] + alpha.sin() * b2[m])
                });
                let x = SpherePoint::from_unnormalized(std::array::from_fn(|m| {
                    w.cos() * qv[m] + w.sin() * dir[m]
                }))?;
                if x.coords()[3] < 0.0 {
                    continue;
                }
                let v = f.value(&x);
                match base {
                    None => base = Some(v),
                    Some(b) => {
                        if (v - b).abs() > 1e-10 * b.abs().max(1.0) {
                            return Err(Error::Symmetry(format!(
                                "azimuthal variation {:.3e} at colatitude {w:.3}",
                                (v - b).abs()
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mountain-pass level
// ---------------------------------------------------------------------------

/// Upper estimate of the mountain-pass level: the smallest over a
/// (center, gamma) grid of `sup_t J_tau(t delta)`. Returns
/// (level, best center, best gamma).
pub fn mountain_pass_level(
    k: &FieldSpec,
    h: &FieldSpec,
    tau: f64,
    candidates: &[SpherePoint],
    gammas: &[f64],
    quad_resolution: usize,
) -> Result<(f64, SpherePoint, f64)> {
    let mut best = (f64::INFINITY, candidates[0], gammas[0]);
    for q in candidates {
        let kq = k.value(q);
        let hq = h.value(q);
        for g in gammas {
            let bubble = match SphereBubble::new(*q, *g, kq, hq) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let rule = SphereRule::adapted(q, *g, quad_resolution)?;
            let (_, sup) = sup_over_scaling(k, h, &bubble, tau, &rule)?;
            if sup < best.0 {
                best = (sup, *q, *g);
            }
        }
    }
    Ok(best)
}

/// Default candidate centers: a coarse boundary lattice plus the critical
/// points of phi when the search succeeds.
pub fn level_candidates(k: &FieldSpec, h: &FieldSpec) -> Vec<SpherePoint> {
    let mut cands = fibonacci_boundary_points(12);
    if let Ok(search) = crate::morse::find_critical_points(k, h, 64) {
        cands.extend(search.records.iter().map(|r| r.q));
    }
    cands
}

/// Log-spaced gamma grid for path searches.
pub fn gamma_grid(tau: f64, n: usize) -> Vec<f64> {
    let lo: f64 = 1.05;
    let hi: f64 = 4.0 / tau;
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n as f64 - 1.0)))
        .collect()
}

// ---------------------------------------------------------------------------
// The solve
// ---------------------------------------------------------------------------

/// Damped Newton with the positivity safeguard; returns the solution, the
/// iteration count, and the accepted residual.
fn newton_solve(
    disc: &Discretization,
    mut u: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = disc.n();
    let mut f = vec![0.0; n];
    disc.residual(&u, &mut f);
    let mut res = disc.residual_max(&f);
    let mut iterations = 0;
    let mut mu = 0.0f64; // Levenberg damping on the Jacobi-scaled system
    let mut converged = res < cfg.newton_tol;
    while iterations < cfg.max_newton && !converged {
        iterations += 1;
        // symmetric Jacobi scaling: solve (C^-1 J C^-1 + mu I)(C s) = -C^-1 F,
        // C = sqrt(|diag J|); keeps the operator symmetric
        let mut diag = vec![0.0; n];
        disc.jacobian_diagonal(&u, &mut diag);
        let c: Vec<f64> = diag.iter().map(|d| d.abs().max(1e-300).sqrt()).collect();
        let rhs: Vec<f64> = f.iter().zip(&c).map(|(x, ci)| -x / ci).collect();
        // inexact Newton: loose inner solves far from the solution
        let inner_tol = if res > 1e2 * cfg.newton_tol {
            1e-4_f64.max(cfg.minres_tol)
        } else {
            cfg.minres_tol
        };
        let mut accepted = false;
        for _attempt in 0..12 {
            let mut scratch = vec![0.0; n];
            let (scaled_step, rel) = minres(
                |v, out| {
                    for i in 0..n {
                        scratch[i] = v[i] / c[i];
                    }
                    disc.jacobian_apply(&u, &scratch, out);
                    for i in 0..n {
                        out[i] = out[i] / c[i] + mu * v[i];
                    }
                },
                &rhs,
                inner_tol,
                cfg.max_minres,
            );
            let step: Vec<f64> = scaled_step.iter().zip(&c).map(|(s, ci)| s / ci).collect();
            if std::env::var_os("HALFSPHERE_TRACE").is_some() {
                eprintln!(
                    "newton iter {iterations}: residual {res:.4e}, mu {mu:.2e}, minres rel \
                     {rel:.2e}, step max {:.3e}",
                    step.iter().map(|s| s.abs()).fold(0.0, f64::max)
                );
            }
            // positivity-preserving line search on the damped step
            let mut t = 1.0;
            for _ in 0..20 {
                let cand: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                if cand.iter().all(|x| *x > 0.0) {
                    disc.residual(&cand, &mut f);
                    let new_res = disc.residual_max(&f);
                    if new_res < res || new_res < cfg.newton_tol {
                        u = cand;
                        res = new_res;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
                if t < 0.1 {
                    break;
                }
            }
            if accepted {
                mu = if mu < 1e-10 { 0.0 } else { mu / 5.0 };
                break;
            }
            mu = if mu == 0.0 { 1e-4 } else { mu * 8.0 };
            if mu > 1e10 {
                break;
            }
        }
        if !accepted {
            return Err(Error::Convergence(format!(
                "Levenberg damping exhausted at iteration {iterations}, residual {res:.3e}"
            )));
        }
        if res < cfg.newton_tol {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "Newton did not reach {:.1e} within {} iterations (residual {res:.3e})",
            cfg.newton_tol, cfg.max_newton
        )));
    }
    Ok((u, iterations, res))
}

pub fn solve_subcritical(
    k: &FieldSpec,
    h: &FieldSpec,
    tau: f64,
    cfg: &SolverConfig,
    strategy: Strategy<'_>,
) -> Result<SolveResult> {
    let disc = Discretization::build(k, h, tau, cfg)?;
    let chart = StereographicChart::new(cfg.chart_center)?;

    // mountain-pass level estimate and the path-best bubble
    let q0 = cfg.chart_center;
    let (level, t_star, gamma_star) = {
        let kq = k.value(&q0);
        let hq = h.value(&q0);
        let mut best = (f64::INFINITY, 1.0, 2.0);
        for g in gamma_grid(tau, 14) {
            let bubble = match SphereBubble::new(q0, g, kq, hq) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let rule = SphereRule::adapted(&q0, g, 16)?;
            let (t, sup) = sup_over_scaling(k, h, &bubble, tau, &rule)?;
            if sup < best.0 {
                best = (sup, t, g);
            }
        }
        (best.0, best.1, best.2)
    };

    let n = disc.n();
    let bubble_init = || -> Result<Vec<f64>> {
        let kq = k.value(&q0);
        let hq = h.value(&q0);
        let bubble = SphereBubble::new(q0, gamma_star, kq, hq)?;
        let mut u = vec![0.0; n];
        for j in 0..=disc.nz {
            for i in 0..=disc.nr {
                let y = HalfSpacePoint::new([disc.rs[i], 0.0, disc.zs[j]])?;
                u[disc.idx(i, j)] = t_star * chart.weight(&y) * bubble.eval(&chart.lift(&y));
            }
        }
        Ok(u)
    };
    // candidate initializations, attempted in order with a full Newton run
    let mut inits: Vec<Vec<f64>> = Vec::new();
    match strategy {
        Strategy::MountainPass => inits.push(bubble_init()?),
        Strategy::Continuation(prev) => {
            if prev.grid.rs.len() != disc.rs.len() || prev.grid.zs.len() != disc.zs.len() {
                return Err(Error::Usage("continuation requires the same grid".into()));
            }
            inits.push(prev.grid.values.clone());
            // dilation transport u -> s^{1/2} u(s y), the concentration
            // drift of the bubble family between tau levels
            let s = prev.tau / tau;
            if (s - 1.0).abs() > 1e-12 {
                let mut transported = vec![0.0; n];
                for j in 0..=disc.nz {
                    for i in 0..=disc.nr {
                        transported[disc.idx(i, j)] = s.sqrt()
                            * prev.grid.interpolate(s * disc.rs[i], s * disc.zs[j]);
                    }
                }
                inits.push(transported);
            }
            if let Ok(b) = bubble_init() {
                inits.push(b);
            }
        }
    }
    let mut solved: Option<(Vec<f64>, usize, f64)> = None;
    let mut last_err: Option<Error> = None;
    for init in inits {
        match newton_solve(&disc, init, cfg) {
            Ok(out) => {
                solved = Some(out);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (u, iterations, res) = match solved {
        Some(t) => t,
        None => return Err(last_err.unwrap_or_else(|| Error::Convergence("no initialization converged".into()))),
    };

    // triviality guard: the zero function also solves the discrete system
    let sup_chart = u.iter().cloned().fold(0.0, f64::max);
    if sup_chart < 1e-4 {
        return Err(Error::Convergence("converged to the trivial solution".into()));
    }

    let mut sup_sphere = 0.0;
    let mut sup_loc = HalfSpacePoint::new([0.0, 0.0, 0.0])?;
    for j in 0..=disc.nz {
        for i in 0..=disc.nr {
            let y = HalfSpacePoint::new([disc.rs[i], 0.0, disc.zs[j]])?;
            let v = u[disc.idx(i, j)] / chart.weight(&y);
            if v > sup_sphere {
                sup_sphere = v;
                sup_loc = y;
            }
        }
    }

    let energy = disc.energy(&u);
    Ok(SolveResult {
        grid: AxisymmetricGrid { radius: cfg.radius, rs: disc.rs.clone(), zs: disc.zs.clone(), values: u },
        tau,
        p: disc.p,
        energy,
        sup_sphere,
        sup_chart,
        sup_location: sup_loc,
        residual_norm: res,
        mp_level: level,
        iterations,
        mp_level_consistent: level >= energy - 1e-3 * energy.abs().max(1.0),
    })
}

// ---------------------------------------------------------------------------
// Blow-up scan
// ---------------------------------------------------------------------------

/// Sequence data of a tau-continuation experiment.
#[derive(Debug, Clone)]
pub struct BlowUpFit {
    pub tau_values: Vec<f64>,
    /// Sphere sup norms per tau.
    pub sup_values: Vec<f64>,
    pub energies: Vec<f64>,
    /// Peak boundary points (ambient) per tau.
    pub peak_points: Vec<SpherePoint>,
    /// Geodesic distances of the peak to the nearest F^+ point, when
    /// reference points were supplied.
    pub peak_distances: Vec<f64>,
    /// Sup over sphere-interior nodes (geodesic distance > 0.3 from the
    /// boundary) per tau.
    pub interior_sup: Vec<f64>,
    /// Harnack-type max/min ratio on a chart annulus away from the peak.
    pub harnack_ratios: Vec<f64>,
    pub fitted_exponent: f64,
    pub fitted_prefactor: f64,
    pub bubble_fits: Vec<BubbleFit>,
    pub results: Vec<SolveResult>,
    pub warnings: Vec<String>,
}

/// Track solutions along a decreasing tau schedule by continuation, fit the
/// sup scaling and a bubble profile at each peak.
pub fn blowup_scan(
    k: &FieldSpec,
    h: &FieldSpec,
    schedule: &[f64],
    cfg: &SolverConfig,
    reference_points: &[SpherePoint],
) -> Result<BlowUpFit> {
    if schedule.len() < 4 {
        return Err(Error::Usage("schedule needs at least 4 values".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Usage("schedule must be strictly decreasing".into()));
    }
    check_axisymmetric(k, &cfg.chart_center)?;
    check_axisymmetric(h, &cfg.chart_center)?;

    let chart = StereographicChart::new(cfg.chart_center)?;
    let mut fit = BlowUpFit {
        tau_values: Vec::new(),
        sup_values: Vec::new(),
        energies: Vec::new(),
        peak_points: Vec::new(),
        peak_distances: Vec::new(),
        interior_sup: Vec::new(),
        harnack_ratios: Vec::new(),
        fitted_exponent: f64::NAN,
        fitted_prefactor: f64::NAN,
        bubble_fits: Vec::new(),
        results: Vec::new(),
        warnings: Vec::new(),
    };

    let mut prev: Option<SolveResult> = None;
    for (step, tau) in schedule.iter().enumerate() {
        let strategy = match &prev {
            None => Strategy::MountainPass,
            Some(p) => Strategy::Continuation(p),
        };
        let result = match solve_subcritical(k, h, *tau, cfg, strategy) {
            Ok(r) => r,
            Err(e) => {
                fit.warnings.push(format!("continuation broke at tau = {tau}: {e}"));
                break;
            }
        };

        fit.tau_values.push(*tau);
        fit.sup_values.push(result.sup_sphere);
        fit.energies.push(result.energy);

        // peak on the sphere
        let yloc = result.sup_location;
        let peak_boundary = HalfSpacePoint::new([yloc.coords()[0], yloc.coords()[1], 0.0])?;
        let peak_sphere = chart.lift(&peak_boundary);
        fit.peak_points.push(peak_sphere);
        if reference_points.is_empty() {
            fit.peak_distances.push(f64::NAN);
        } else {
            fit.peak_distances.push(
                reference_points
                    .iter()
                    .map(|p| p.distance(&peak_sphere))
                    .fold(f64::INFINITY, f64::min),
            );
        }

        // interior sup: nodes with geodesic distance > 0.3 from the boundary
        let x4_min = (0.3f64).sin();
        let mut interior = 0.0f64;
        for j in 0..=result.grid.nz() {
            for i in 0..=result.grid.nr() {
                let y = HalfSpacePoint::new([result.grid.rs[i], 0.0, result.grid.zs[j]])?;
                let x = chart.lift(&y);
                if x.coords()[3] > x4_min {
                    interior = interior.max(result.grid.at(i, j) / chart.weight(&y));
                }
            }
        }
        fit.interior_sup.push(interior);

        // Harnack ratio on the chart annulus 0.5 <= |y - peak| <= 1
        let (mut amin, mut amax) = (f64::INFINITY, 0.0f64);
        let pv = yloc.coords();
        for j in 0..=result.grid.nz() {
            for i in 0..=result.grid.nr() {
                let dr = result.grid.rs[i] - pv[0];
                let dz = result.grid.zs[j] - pv[2];
                let d = (dr * dr + dz * dz).sqrt();
                if (0.5..=1.0).contains(&d) {
                    amin = amin.min(result.grid.at(i, j));
                    amax = amax.max(result.grid.at(i, j));
                }
            }
        }
        fit.harnack_ratios.push(amax / amin);

        // bubble fit in a rescaled window at the peak
        match fit_grid_bubble(&result, k, &chart) {
            Ok(b) => fit.bubble_fits.push(b),
            Err(e) => fit.warnings.push(format!("bubble fit failed at tau = {tau}: {e}")),
        }

        fit.results.push(result.clone());
        prev = Some(result);
        let _ = step;
    }

    if fit.tau_values.len() >= 2 {
        // least-squares slope of log sup vs log tau
        let lx: Vec<f64> = fit.tau_values.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = fit.sup_values.iter().map(|s| s.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..lx.len() {
            num += (lx[i] - mx) * (ly[i] - my);
            den += (lx[i] - mx) * (lx[i] - mx);
        }
        fit.fitted_exponent = num / den;
        fit.fitted_prefactor = (my - fit.fitted_exponent * mx).exp();
    }
    Ok(fit)
}

/// Fit a boundary bubble to grid values near the solution peak.
fn fit_grid_bubble(
    result: &SolveResult,
    k: &FieldSpec,
    chart: &StereographicChart,
) -> Result<BubbleFit> {
    let pv = result.sup_location.coords();
    let peak_r = pv[0];
    let kq = {
        let y = HalfSpacePoint::new([peak_r, 0.0, 0.0])?;
        k.value(&chart.lift(&y))
    };
    let kscale = crate::bubbles::curvature_scale(kq);
    // window from the expected width 1/(lambda sqrt k), lambda ~ peak^2
    let lambda_est = result.sup_chart * result.sup_chart;
    let width = 1.0 / (lambda_est * kscale.sqrt());
    let window = (8.0 * width).clamp(0.05, 1.5);
    let mut samples = Vec::new();
    for j in 0..=result.grid.nz() {
        for i in 0..=result.grid.nr() {
            let (r, z) = (result.grid.rs[i], result.grid.zs[j]);
            let dr = r - peak_r;
            if (dr * dr + z * z).sqrt() > window {
                continue;
            }
            // rotate axisymmetric samples into 3D to cover both tangent axes
            for phi in [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI, 1.5 * std::f64::consts::PI] {
                let y = HalfSpacePoint::new([r * phi.cos(), r * phi.sin(), z])?;
                samples.push((y, result.grid.at(i, j)));
            }
        }
    }
    fit_bubble(&samples, kq, window)
}

/// Per-peak measurement at one tau (a peak in its own chart).
#[derive(Debug, Clone)]
pub struct PeakSample {
    pub point: SpherePoint,
    /// Sphere solution value at the peak.
    pub value: f64,
}

/// Finite-tau estimates of the blow-up parameters `mu_j` (peak ratios) and
/// `lambda_j` (from tau peak^2), from the last schedule entry, in the order
/// of the supplied peaks.
pub fn extract_blowup_data(
    per_tau: &[(f64, Vec<PeakSample>)],
    k: &FieldSpec,
    h: &FieldSpec,
) -> Result<(Vec<f64>, Vec<f64>, Vec<SpherePoint>)> {
    if per_tau.len() < 2 {
        return Err(Error::Usage("need at least two schedule points".into()));
    }
    let (tau, peaks) = per_tau.last().unwrap();
    if peaks.is_empty() {
        return Err(Error::Usage("no peaks recorded".into()));
    }
    let mut mus = Vec::with_capacity(peaks.len());
    let mut lambdas = Vec::with_capacity(peaks.len());
    let mut points = Vec::with_capacity(peaks.len());
    let v1 = peaks[0].value;
    for pk in peaks {
        let kq = k.value(&pk.point);
        let hq = h.value(&pk.point);
        let hplus = hq.max(0.0);
        mus.push(2.0 * (kq / 6.0 + hplus * hplus).powf(-0.5) * kq.powf(0.25) * v1 / pk.value);
        lambdas.push(
            (kq / 6.0 + hplus * hplus) * phi_value(kq, hq)? / kq.sqrt() * tau * pk.value
                * pk.value
                / (16.0 * std::f64::consts::PI),
        );
        points.push(pk.point);
    }
    Ok((mus, lambdas, points))
}

// ---------------------------------------------------------------------------
// Snapshot format
// ---------------------------------------------------------------------------

/// Self-describing text snapshot: header lines `key value...`, then the
/// node values row-major (one z-row per line), all floats at 17 significant
/// digits.
pub fn write_snapshot(result: &SolveResult, k_expr: &str, h_expr: &str, center: &SpherePoint) -> String {
    let mut s = String::new();
    s.push_str("halfsphere-snapshot 1\n");
    s.push_str(&format!("tau {:.16e}\n", result.tau));
    s.push_str(&format!("p {:.16e}\n", result.p));
    s.push_str(&format!("radius {:.16e}\n", result.grid.radius));
    s.push_str(&format!("nr {}\n", result.grid.nr()));
    s.push_str(&format!("nz {}\n", result.grid.nz()));
    let c = center.coords();
    s.push_str(&format!(
        "chart_center {:.16e} {:.16e} {:.16e} {:.16e}\n",
        c[0], c[1], c[2], c[3]
    ));
    s.push_str(&format!("K {k_expr}\n"));
    s.push_str(&format!("H {h_expr}\n"));
    s.push_str(&format!("energy {:.16e}\n", result.energy));
    s.push_str(&format!("sup_sphere {:.16e}\n", result.sup_sphere));
    s.push_str(&format!("residual {:.16e}\n", result.residual_norm));
    s.push_str(&format!("mp_level {:.16e}\n", result.mp_level));
    s.push_str(&format!("iterations {}\n", result.iterations));
    let fmt_row = |xs: &[f64]| {
        xs.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
    };
    s.push_str(&format!("r_nodes {}\n", fmt_row(&result.grid.rs)));
    s.push_str(&format!("z_nodes {}\n", fmt_row(&result.grid.zs)));
    s.push_str("values\n");
    let n = result.grid.rs.len();
    for j in 0..result.grid.zs.len() {
        s.push_str(&fmt_row(&result.grid.values[j * n..(j + 1) * n]));
        s.push('\n');
    }
    s
}

/// Parse a snapshot produced by [`write_snapshot`]; returns the grid plus
/// (tau, p, K expression, H expression).
pub fn read_snapshot(text: &str) -> Result<(AxisymmetricGrid, f64, f64, String, String)> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Parse { offset: 0, msg: "empty snapshot".into() })?;
    if head != "halfsphere-snapshot 1" {
        return Err(Error::Parse { offset: 0, msg: format!("bad header `{head}`") });
    }
    let mut tau = None;
    let mut p = None;
    let mut radius = None;
    let mut k_expr = String::new();
    let mut h_expr = String::new();
    let mut rs = Vec::new();
    let mut zs = Vec::new();
    let mut values = Vec::new();
    let mut in_values = false;
    for line in lines {
        if in_values {
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                    offset: 0,
                    msg: format!("bad value `{tok}`"),
                })?);
            }
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "values" => in_values = true,
            "tau" => tau = rest.trim().parse().ok(),
            "p" => p = rest.trim().parse().ok(),
            "radius" => radius = rest.trim().parse().ok(),
            "K" => k_expr = rest.to_string(),
            "H" => h_expr = rest.to_string(),
            "r_nodes" => {
                rs = rest.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            }
            "z_nodes" => {
                zs = rest.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            }
            _ => {}
        }
    }
    let tau = tau.ok_or_else(|| Error::Parse { offset: 0, msg: "missing tau".into() })?;
    let p = p.ok_or_else(|| Error::Parse { offset: 0, msg: "missing p".into() })?;
    let radius = radius.ok_or_else(|| Error::Parse { offset: 0, msg: "missing radius".into() })?;
    if values.len() != rs.len() * zs.len() {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("expected {} values, got {}", rs.len() * zs.len(), values.len()),
        });
    }
    Ok((AxisymmetricGrid { radius, rs, zs, values }, tau, p, k_expr, h_expr))
}

// expose the discretization residuals for verification tests and the CLI
pub struct SchemeProbe {
    disc: Discretization,
}

impl SchemeProbe {
    pub fn new(k: &FieldSpec, h: &FieldSpec, tau: f64, cfg: &SolverConfig) -> Result<Self> {
        Ok(Self { disc: Discretization::build(k, h, tau, cfg)? })
    }

    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        (self.disc.rs.clone(), self.disc.zs.clone())
    }

    /// Evaluate the scheme residuals on an arbitrary nodal function.
    pub fn residuals_of(&self, values: &[f64]) -> (f64, f64, f64) {
        let mut f = vec![0.0; self.disc.n()];
        self.disc.residual(values, &mut f);
        (
            self.disc.residual_max(&f),
            self.disc.interior_residual_max(&f),
            self.disc.boundary_condition_residual(values),
        )
    }

    pub fn energy_of(&self, values: &[f64]) -> f64 {
        self.disc.energy(values)
    }

    /// Symmetry defect of the Jacobian at `u` probed with two deterministic
    /// vectors: |<Jv, w> - <v, Jw>|.
    pub fn jacobian_symmetry_defect(&self, u: &[f64]) -> f64 {
        let n = self.disc.n();
        let v: Vec<f64> = (0..n).map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5).collect();
        let w: Vec<f64> = (0..n).map(|i| ((i * 1103515245 + 12345) % 1000) as f64 / 1000.0 - 0.5).collect();
        let mut jv = vec![0.0; n];
        let mut jw = vec![0.0; n];
        self.disc.jacobian_apply(u, &v, &mut jv);
        self.disc.jacobian_apply(u, &w, &mut jw);
        let a: f64 = jv.iter().zip(&w).map(|(x, y)| x * y).sum();
        let b: f64 = v.iter().zip(&jw).map(|(x, y)| x * y).sum();
        (a - b).abs() / a.abs().max(1.0)
    }
}

impl SolveResult {
    /// Sphere-side field view of the chart solution (v = u / W), for
    /// energy cross-checks.
    pub fn sphere_field<'a>(&'a self, chart: &'a StereographicChart) -> impl SphereField + 'a {
        GridSphereField { result: self, chart }
    }
}

struct GridSphereField<'a> {
    result: &'a SolveResult,
    chart: &'a StereographicChart,
}

impl SphereField for GridSphereField<'_> {
    fn value(&self, x: &SpherePoint) -> f64 {
        match self.chart.project(x) {
            Ok(y) => {
                let yv = y.coords();
                let r = (yv[0] * yv[0] + yv[1] * yv[1]).sqrt();
                self.result.grid.interpolate(r, yv[2]) / self.chart.weight(&y)
            }
            Err(_) => 0.0,
        }
    }
    fn gradient(&self, x: &SpherePoint) -> [f64; 4] {
        // geodesic central differences in an ad-hoc tangent frame
        let h: f64 = 1e-4;
        let xv = x.coords();
        let mut g = [0.0; 4];
        let mut frame: Vec<[f64; 4]> = Vec::new();
        for seed in [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ] {
            let mut w = seed;
            let wx = crate::geometry::dot4(&w, &xv);
            for i in 0..4 {
                w[i] -= wx * xv[i];
            }
            for t in &frame {
                let wt = crate::geometry::dot4(&w, t);
                for i in 0..4 {
                    w[i] -= wt * t[i];
                }
            }
            let nw = crate::geometry::dot4(&w, &w).sqrt();
            if nw > 1e-8 {
                frame.push(w.map(|c| c / nw));
            }
            if frame.len() == 3 {
                break;
            }
        }
        for t in &frame {
            let xp = SpherePoint::from_unnormalized(std::array::from_fn(|i| {
                xv[i] * h.cos() + t[i] * h.sin()
            }));
            let xm = SpherePoint::from_unnormalized(std::array::from_fn(|i| {
                xv[i] * h.cos() - t[i] * h.sin()
            }));
            if let (Ok(xp), Ok(xm)) = (xp, xm) {
                let d = (self.value(&xp) - self.value(&xm)) / (2.0 * h);
                for i in 0..4 {
                    g[i] += d * t[i];
                }
            }
        }
        g
    }
}

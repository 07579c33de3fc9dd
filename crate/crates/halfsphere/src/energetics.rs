//! Euler functionals and the closed-form blow-up energies.
//!
//! The boundary blow-up energy is
//! `phi(x') = 4 pi sqrt(6/K) (pi/2 - atan(H sqrt(6/K)))` and its weight
//! `psi(x') = 1 - H phi / (4 pi)`. The cap computation behind them is kept
//! general in the dimension; all quadrature-based functionals are n = 3.

use crate::bubbles::SphereBubble;
use crate::error::{Error, Result};
use crate::fields::FieldSpec;
use crate::geometry::{cap_area_factor, sphere_volume, CapSpec, SpherePoint, SphereRule};

/// Anything the Euler functionals can integrate: a value and a gradient
/// tangent to the 3-sphere.
pub trait SphereField {
    fn value(&self, x: &SpherePoint) -> f64;
    fn gradient(&self, x: &SpherePoint) -> [f64; 4];
}

impl SphereField for FieldSpec {
    fn value(&self, x: &SpherePoint) -> f64 {
        FieldSpec::value(self, x)
    }
    fn gradient(&self, x: &SpherePoint) -> [f64; 4] {
        self.sphere_gradient(x)
    }
}

impl SphereField for SphereBubble {
    fn value(&self, x: &SpherePoint) -> f64 {
        self.eval(x)
    }
    fn gradient(&self, x: &SpherePoint) -> [f64; 4] {
        self.sphere_gradient(x)
    }
}

/// `t * v` for the one-dimensional fibering map.
pub struct Scaled<'a, F: SphereField + ?Sized>(pub f64, pub &'a F);

impl<F: SphereField + ?Sized> SphereField for Scaled<'_, F> {
    fn value(&self, x: &SpherePoint) -> f64 {
        self.0 * self.1.value(x)
    }
    fn gradient(&self, x: &SpherePoint) -> [f64; 4] {
        self.1.gradient(x).map(|g| self.0 * g)
    }
}

/// A constant function on the half-sphere.
pub struct Constant(pub f64);

impl SphereField for Constant {
    fn value(&self, _x: &SpherePoint) -> f64 {
        self.0
    }
    fn gradient(&self, _x: &SpherePoint) -> [f64; 4] {
        [0.0; 4]
    }
}

// ---------------------------------------------------------------------------
// phi and psi
// ---------------------------------------------------------------------------

/// `phi` from point values of K and H.
pub fn phi_value(kbar: f64, hbar: f64) -> Result<f64> {
    if kbar <= 0.0 {
        return Err(Error::Domain(format!("phi needs K > 0, got {kbar}")));
    }
    let s = hbar * (6.0 / kbar).sqrt();
    Ok(4.0 * std::f64::consts::PI * (6.0 / kbar).sqrt() * (std::f64::consts::FRAC_PI_2 - s.atan()))
}

/// `psi = 1 + s (atan s - pi/2)` with `s = H sqrt(6/K)`; equals
/// `1 - H phi/(4 pi)`.
pub fn psi_value(kbar: f64, hbar: f64) -> Result<f64> {
    if kbar <= 0.0 {
        return Err(Error::Domain(format!("psi needs K > 0, got {kbar}")));
    }
    let s = hbar * (6.0 / kbar).sqrt();
    Ok(1.0 + s * (s.atan() - std::f64::consts::FRAC_PI_2))
}

pub fn phi(k: &FieldSpec, h: &FieldSpec, q: &SpherePoint) -> Result<f64> {
    phi_value(k.value(q), h.value(q))
}

pub fn psi(k: &FieldSpec, h: &FieldSpec, q: &SpherePoint) -> Result<f64> {
    psi_value(k.value(q), h.value(q))
}

/// Partial derivatives of phi with respect to the point values (K, H); used
/// for the chain rule in the Morse analysis of phi.
pub fn phi_partials(kbar: f64, hbar: f64) -> (f64, f64) {
    let s = hbar * (6.0 / kbar).sqrt();
    let pi = std::f64::consts::PI;
    // d phi/dK = -(2 pi sqrt6 / K^{3/2}) (pi/2 - atan s - s/(1+s^2))
    let dk = -(2.0 * pi * 6.0_f64.sqrt() / kbar.powf(1.5))
        * (pi / 2.0 - s.atan() - s / (1.0 + s * s));
    // d phi/dH = -24 pi / (K + 6 H^2)
    let dh = -24.0 * pi / (kbar + 6.0 * hbar * hbar);
    (dk, dh)
}

/// Second partial derivatives (K K, K H, H H) of phi in the point values.
pub fn phi_second_partials(kbar: f64, hbar: f64) -> (f64, f64, f64) {
    let pi = std::f64::consts::PI;
    let s = hbar * (6.0 / kbar).sqrt();
    let sqrt6 = 6.0_f64.sqrt();
    // s_K = -s/(2K), s_H = sqrt(6/K)
    // g(s) = pi/2 - atan s - s/(1+s^2); g'(s) = -2/(1+s^2)^2
    let g = pi / 2.0 - s.atan() - s / (1.0 + s * s);
    let gp = -2.0 / (1.0 + s * s).powi(2);
    let a = -2.0 * pi * sqrt6; // phi_K = a K^{-3/2} g
    let kk = a * (-1.5 * kbar.powf(-2.5) * g + kbar.powf(-1.5) * gp * (-s / (2.0 * kbar)));
    let kh = a * kbar.powf(-1.5) * gp * (6.0 / kbar).sqrt();
    // phi_H = -24 pi / (K + 6H^2)
    let hh = 24.0 * pi * 12.0 * hbar / (kbar + 6.0 * hbar * hbar).powi(2);
    (kk, kh, hh)
}

// ---------------------------------------------------------------------------
// Cap energetics (general n)
// ---------------------------------------------------------------------------

/// A constant solution on the cap `Sigma_theta`, with
/// `Kbar v_theta^{4/(n-2)} = n(n-1)` and `Hbar sin theta = sqrt(Kbar/(n(n-1))) cos theta`.
#[derive(Debug, Clone, Copy)]
pub struct CapSolution {
    pub theta: f64,
    pub v_theta: f64,
    pub n: usize,
}

/// Solve `Hbar sin theta = sqrt(Kbar/(n(n-1))) cos theta` for the unique
/// `theta` in (0, pi).
pub fn cap_angle(kbar: f64, hbar: f64, n: usize) -> Result<CapSpec> {
    if kbar <= 0.0 {
        return Err(Error::Domain("cap angle needs Kbar > 0".into()));
    }
    if n < 3 {
        return Err(Error::Usage("cap energetics defined for n >= 3".into()));
    }
    let nn = (n * (n - 1)) as f64;
    // cot theta = Hbar sqrt(n(n-1)/Kbar)
    let theta = std::f64::consts::FRAC_PI_2 - (hbar * (nn / kbar).sqrt()).atan();
    CapSpec::new(theta)
}

pub fn cap_solution(kbar: f64, hbar: f64, n: usize) -> Result<CapSolution> {
    let cap = cap_angle(kbar, hbar, n)?;
    let nn = (n * (n - 1)) as f64;
    let v_theta = (nn / kbar).powf((n as f64 - 2.0) / 4.0);
    Ok(CapSolution { theta: cap.theta(), v_theta, n })
}

/// Boundary blow-up energy
/// `omega_{n-1} (n(n-1)/Kbar)^{n/2-1} [(n-1) F(theta) + cos theta sin^{n-2} theta]`.
pub fn boundary_blowup_energy(kbar: f64, hbar: f64, n: usize) -> Result<f64> {
    let cap = cap_angle(kbar, hbar, n)?;
    let theta = cap.theta();
    let nn = (n * (n - 1)) as f64;
    let f = cap_area_factor(theta, n);
    Ok(sphere_volume(n - 1)
        * (nn / kbar).powf(n as f64 / 2.0 - 1.0)
        * ((n as f64 - 1.0) * f + theta.cos() * theta.sin().powi(n as i32 - 2)))
}

/// The same energy in the two-term form it reduces from, used as an
/// independent evaluation route in tests:
/// `(omega_{n-1}/n) Kbar F(theta) (n(n-1)/Kbar)^{n/2} + Hbar omega_{n-1} sin^{n-1}(theta) (n(n-1)/Kbar)^{(n-1)/2}`.
pub fn boundary_blowup_energy_two_term(kbar: f64, hbar: f64, n: usize) -> Result<f64> {
    let cap = cap_angle(kbar, hbar, n)?;
    let theta = cap.theta();
    let nn = (n * (n - 1)) as f64;
    let f = cap_area_factor(theta, n);
    Ok(sphere_volume(n - 1) / n as f64 * kbar * f * (nn / kbar).powf(n as f64 / 2.0)
        + hbar
            * sphere_volume(n - 1)
            * theta.sin().powi(n as i32 - 1)
            * (nn / kbar).powf((n as f64 - 1.0) / 2.0))
}

/// Interior blow-up energy `(omega_n/n)(n(n-1))^{n/2} Kbar^{-(n-2)/2}`.
pub fn interior_blowup_energy(kbar: f64, n: usize) -> Result<f64> {
    if kbar <= 0.0 {
        return Err(Error::Domain("interior energy needs Kbar > 0".into()));
    }
    let nn = (n * (n - 1)) as f64;
    Ok(sphere_volume(n) / n as f64 * nn.powf(n as f64 / 2.0) * kbar.powf(-(n as f64 - 2.0) / 2.0))
}

/// `G(theta) = F(theta) + sin^{n-2}(theta) cos(theta)/(n-1)`; strictly
/// increasing with `G(pi) = F(pi)`.
pub fn cap_g_function(theta: f64, n: usize) -> f64 {
    cap_area_factor(theta, n) + theta.sin().powi(n as i32 - 2) * theta.cos() / (n as f64 - 1.0)
}

/// Closed form of `G'(theta) = ((n-2)/(n-1)) sin^{n-3}(theta) (sin^2 + cos^2)`.
pub fn cap_g_derivative(theta: f64, n: usize) -> f64 {
    (n as f64 - 2.0) / (n as f64 - 1.0)
        * theta.sin().powi(n as i32 - 3)
        * (theta.sin().powi(2) + theta.cos().powi(2))
}

/// The extra smallness condition of the general-n mountain-pass scheme:
/// `phi_tilde(q) <= (omega_n/n)(n(n-1))^{n/2} (sup K)^{-(n-2)/2}` (exposed as
/// a predicate; for n = 3 it can be removed entirely).
pub fn general_n_mountain_pass_condition(phi_tilde_q: f64, sup_k: f64, n: usize) -> Result<bool> {
    Ok(phi_tilde_q <= interior_blowup_energy(sup_k, n)?)
}

// ---------------------------------------------------------------------------
// Euler functionals (n = 3, quadrature)
// ---------------------------------------------------------------------------

/// One evaluation of the Euler functional, split into its three terms with
/// `total = quadratic - volume - boundary`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    pub quadratic_term: f64,
    pub volume_term: f64,
    pub boundary_term: f64,
    pub total: f64,
}

/// `J_{K,H}(v) = 1/2 int (8 |grad v|^2 + 6 v^2) - 1/6 int K |v|^6 - int_b H |v|^4`.
pub fn functional_j<F: SphereField + ?Sized>(
    k: &FieldSpec,
    h: &FieldSpec,
    v: &F,
    rule: &SphereRule,
) -> Result<EnergyReport> {
    functional_j_tau(k, h, v, 0.0, rule)
}

/// The subcritical functional
/// `J_tau(v) = 4 int |grad v|^2 + 3 int v^2 - (1/(6-tau)) int K |v|^{6-tau}
///  - (4/(4-tau/2)) int_b H |v|^{4-tau/2}`; reduces to `functional_j` at tau = 0.
pub fn functional_j_tau<F: SphereField + ?Sized>(
    k: &FieldSpec,
    h: &FieldSpec,
    v: &F,
    tau: f64,
    rule: &SphereRule,
) -> Result<EnergyReport> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Usage(format!("tau = {tau} out of [0, 1)")));
    }
    if k.domain() != crate::fields::FieldDomain::HalfSphere {
        return Err(Error::Usage("K must live on the half-sphere".into()));
    }
    if rule.interior.region != crate::geometry::Region::HalfSphere
        || rule.boundary.region != crate::geometry::Region::BoundarySphere
    {
        return Err(Error::Usage("rule does not cover the half-sphere and its boundary".into()));
    }
    let quadratic = rule.interior.integrate_sphere(|x| {
        let g = v.gradient(x);
        let val = v.value(x);
        4.0 * crate::geometry::dot4(&g, &g) + 3.0 * val * val
    });
    let volume = rule.interior.integrate_sphere(|x| {
        let val = v.value(x).abs();
        k.value(x) * val.powf(6.0 - tau)
    }) / (6.0 - tau);
    let boundary = rule.boundary.integrate_sphere(|x| {
        let val = v.value(x).abs();
        h.value(x) * val.powf(4.0 - tau / 2.0)
    }) * 4.0
        / (4.0 - tau / 2.0);
    Ok(EnergyReport {
        quadratic_term: quadratic,
        volume_term: volume,
        boundary_term: boundary,
        total: quadratic - volume - boundary,
    })
}

/// `sup_{t > 0} J_tau(t v)` by golden-section search; `T` from the Nehari
/// scaling bound. Returns (argmax t, sup value).
pub fn sup_over_scaling<F: SphereField + ?Sized>(
    k: &FieldSpec,
    h: &FieldSpec,
    v: &F,
    tau: f64,
    rule: &SphereRule,
) -> Result<(f64, f64)> {
    let base = functional_j_tau(k, h, v, tau, rule)?;
    let a = base.quadratic_term;
    let b = (6.0 - tau) * base.volume_term; // int K |v|^{6-tau}
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::Usage("scaling sup needs nonzero v and positive K".into()));
    }
    // At large t the t^{6-tau} term dominates: J(tv) <= a t^2 - b t^{6-tau}/(6-tau) (+|H| part)
    let t_max = 3.0 * (2.0 * a * (6.0 - tau) / b).powf(1.0 / (4.0 - tau)).max(1.0);
    let j_of = |t: f64| -> f64 {
        let quad = a * t * t;
        let vol = base.volume_term * t.abs().powf(6.0 - tau);
        let bnd = base.boundary_term * t.abs().powf(4.0 - tau / 2.0);
        quad - vol - bnd
    };
    // golden-section maximization on (0, t_max]
    let gr = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, t_max);
    let mut x1 = hi - gr * (hi - lo);
    let mut x2 = lo + gr * (hi - lo);
    let mut f1 = j_of(x1);
    let mut f2 = j_of(x2);
    for _ in 0..200 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = j_of(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = j_of(x1);
        }
        if hi - lo < 1e-12 * t_max {
            break;
        }
    }
    let t_star = 0.5 * (lo + hi);
    Ok((t_star, j_of(t_star)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldDomain;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn phi_constant_data() {
        // K = 6, H = 0 -> 2 pi^2
        let v = phi_value(6.0, 0.0).unwrap();
        assert!((v - 2.0 * PI * PI).abs() < 1e-12);
        // H large: phi -> 0+
        let v = phi_value(6.0, 1e3).unwrap();
        assert!(v > 0.0 && v < 0.013);
        // K <= 0 rejected
        assert!(phi_value(0.0, 1.0).is_err());
    }

    #[test]
    fn phi_rescaling() {
        // (K, H) -> (g K, g^{1/2} H) scales phi by g^{-1/2}
        for (k, h) in [(6.0, 0.0), (3.0, 1.0), (10.0, -2.0)] {
            let gamma: f64 = 4.0;
            let a = phi_value(k, h).unwrap();
            let b = phi_value(gamma * k, gamma.sqrt() * h).unwrap();
            assert!((b - a / 2.0).abs() < 1e-12 * a, "gamma=4 should halve phi");
        }
    }

    #[test]
    fn psi_forms_agree() {
        assert!((psi_value(6.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        for i in 0..50 {
            let k = 1.0 + (i as f64) * 0.77;
            let h = -4.0 + (i as f64) * 0.16;
            let psi1 = psi_value(k, h).unwrap();
            let phi1 = phi_value(k, h).unwrap();
            let psi2 = 1.0 - h * phi1 / (4.0 * PI);
            assert!((psi1 - psi2).abs() < 1e-14 * psi1.abs().max(1.0));
            if h < 0.0 {
                assert!(psi1 > 1.0);
            }
        }
    }

    #[test]
    fn phi_partials_match_finite_differences() {
        for (k, h) in [(6.0, 0.5), (3.0, -1.0), (12.0, 2.0)] {
            let (dk, dh) = phi_partials(k, h);
            let e = 1e-6;
            let fdk = (phi_value(k + e, h).unwrap() - phi_value(k - e, h).unwrap()) / (2.0 * e);
            let fdh = (phi_value(k, h + e).unwrap() - phi_value(k, h - e).unwrap()) / (2.0 * e);
            assert!((dk - fdk).abs() < 1e-6 * dk.abs(), "dK {dk} vs {fdk}");
            assert!((dh - fdh).abs() < 1e-6 * dh.abs(), "dH {dh} vs {fdh}");
            assert!(dk < 0.0, "phi decreasing in K");

            let (kk, kh, hh) = phi_second_partials(k, h);
            let (dk_p, dh_p) = phi_partials(k + e, h);
            let (dk_m, dh_m) = phi_partials(k - e, h);
            assert!(((dk_p - dk_m) / (2.0 * e) - kk).abs() < 1e-5 * kk.abs().max(1e-3));
            assert!(((dh_p - dh_m) / (2.0 * e) - kh).abs() < 1e-5 * kh.abs().max(1e-3));
            let (_, dh_hp) = phi_partials(k, h + e);
            let (_, dh_hm) = phi_partials(k, h - e);
            assert!(((dh_hp - dh_hm) / (2.0 * e) - hh).abs() < 1e-5 * hh.abs().max(1e-3));
        }
    }

    #[test]
    fn cap_angle_cases() {
        let cap = cap_angle(6.0, 0.0, 3).unwrap();
        assert!((cap.theta() - PI / 2.0).abs() < 1e-14);
        // K = 6, n = 3, H = 1 -> theta = pi/4
        let cap = cap_angle(6.0, 1.0, 3).unwrap();
        assert!((cap.theta() - PI / 4.0).abs() < 1e-14);
        // defining equation residual
        for (k, h, n) in [(6.0, 1.0, 3), (4.0, -2.0, 4), (11.0, 0.3, 5)] {
            let cap = cap_angle(k, h, n).unwrap();
            let nn = (n * (n - 1)) as f64;
            let res = h * cap.theta().sin() - (k / nn).sqrt() * cap.theta().cos();
            assert!(res.abs() < 1e-12, "residual {res}");
            // h_theta consistency with the constant solution
            let sol = cap_solution(k, h, n).unwrap();
            assert!((k * sol.v_theta.powf(4.0 / (n as f64 - 2.0)) - nn).abs() < 1e-10);
        }
        // limits
        assert!(cap_angle(6.0, 1e4, 3).unwrap().theta() < 1e-3);
        assert!(cap_angle(6.0, -1e4, 3).unwrap().theta() > PI - 1e-3);
    }

    #[test]
    fn boundary_energy_equals_phi_for_n3() {
        assert!(
            (boundary_blowup_energy(6.0, 0.0, 3).unwrap() - 2.0 * PI * PI).abs() < 1e-10
        );
        // K = 6, H = 1: 4 pi (pi/2 - atan 1) = pi^2
        assert!((boundary_blowup_energy(6.0, 1.0, 3).unwrap() - PI * PI).abs() < 1e-8);
        for i in 0..20 {
            for j in 0..20 {
                let k = 1.0 + 49.0 * (i as f64) / 19.0;
                let h = -5.0 + 10.0 * (j as f64) / 19.0;
                let a = boundary_blowup_energy(k, h, 3).unwrap();
                let b = phi_value(k, h).unwrap();
                assert!((a - b).abs() < 1e-10 * b, "K={k} H={h}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn boundary_energy_two_term_route_agrees() {
        for (k, h, n) in [(6.0, 1.0, 4), (9.0, -0.5, 4), (5.0, 2.0, 5)] {
            let a = boundary_blowup_energy(k, h, n).unwrap();
            let b = boundary_blowup_energy_two_term(k, h, n).unwrap();
            assert!((a - b).abs() < 1e-8 * a.abs(), "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn interior_energy_values_and_half_relation() {
        // n = 3, K = 6 -> 4 pi^2
        let v = interior_blowup_energy(6.0, 3).unwrap();
        assert!((v - 4.0 * PI * PI).abs() < 1e-12);
        for i in 0..10 {
            let k = 1.0 + 6.0 * i as f64;
            let b = boundary_blowup_energy(k, 0.0, 3).unwrap();
            let int = interior_blowup_energy(k, 3).unwrap();
            assert!((int - 2.0 * b).abs() < 1e-12 * int, "half relation at K={k}");
        }
    }

    #[test]
    fn comparison_inequality_on_grid() {
        for n in [3, 4, 5] {
            for i in 0..10 {
                for j in 0..10 {
                    let k = 1.0 + 5.0 * i as f64;
                    let h = -4.0 + 8.0 * (j as f64) / 9.0;
                    let b = boundary_blowup_energy(k, h, n).unwrap();
                    let int = interior_blowup_energy(k, n).unwrap();
                    assert!(b < int, "n={n} K={k} H={h}: boundary {b} !< interior {int}");
                }
            }
        }
    }

    #[test]
    fn g_function_monotone_and_matches_derivative() {
        for n in [3, 4, 5] {
            let mut prev = f64::MIN;
            for i in 1..=100 {
                let theta = PI * (i as f64) / 101.0;
                let g = cap_g_function(theta, n);
                assert!(g > prev, "G not increasing at n={n}, theta={theta}");
                prev = g;
                let e = 1e-5;
                let fd = (cap_g_function(theta + e, n) - cap_g_function(theta - e, n)) / (2.0 * e);
                let exact = cap_g_derivative(theta, n);
                assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1e-6));
            }
            // G(pi) = F(pi)
            let gpi = cap_g_function(PI, n);
            let fpi = cap_area_factor(PI, n);
            assert!((gpi - fpi).abs() < 1e-12);
        }
        // n = 3: F(pi) = pi/2
        assert!((cap_area_factor(PI, 3) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn functional_on_zero_and_constants() {
        let k = FieldSpec::constant(FieldDomain::HalfSphere, 6.0);
        let h = FieldSpec::constant(FieldDomain::Boundary, 0.0);
        let rule = SphereRule::build(16).unwrap();
        let z = functional_j(&k, &h, &Constant(0.0), &rule).unwrap();
        assert_eq!(z.total, 0.0);
        assert_eq!(z.quadratic_term, 0.0);

        // v = c constant: total = 3 c^2 pi^2 - c^6 pi^2
        let c = 0.7;
        let r = functional_j(&k, &h, &Constant(c), &rule).unwrap();
        let expect = 3.0 * c * c * PI * PI - c.powi(6) * PI * PI;
        assert!((r.total - expect).abs() < 1e-8 * expect.abs());
        assert_eq!(r.boundary_term, 0.0);
    }

    #[test]
    fn functional_tau_zero_equals_functional() {
        let k = FieldSpec::parse(FieldDomain::HalfSphere, "6 + x1").unwrap();
        let h = FieldSpec::parse(FieldDomain::Boundary, "0.3*x2").unwrap();
        let rule = SphereRule::build(12).unwrap();
        let q = SpherePoint::boundary([0.0, 0.0, 1.0]).unwrap();
        let v = SphereBubble::new(q, 5.0, 6.0, 0.0).unwrap();
        let a = functional_j(&k, &h, &v, &rule).unwrap();
        let b = functional_j_tau(&k, &h, &v, 0.0, &rule).unwrap();
        assert!((a.total - b.total).abs() < 1e-14 * a.total.abs());
        assert!(functional_j_tau(&k, &h, &v, 1.5, &rule).is_err());
    }

    #[test]
    fn functional_tau_continuity() {
        let k = FieldSpec::constant(FieldDomain::HalfSphere, 6.0);
        let h = FieldSpec::constant(FieldDomain::Boundary, 0.0);
        let q = SpherePoint::boundary([0.0, 0.0, 1.0]).unwrap();
        let bubble = SphereBubble::new(q, 10.0, 6.0, 0.0).unwrap();
        let rule = SphereRule::adapted(&q, 10.0, 20).unwrap();
        let j0 = functional_j(&k, &h, &bubble, &rule).unwrap().total;
        let slopes: Vec<f64> = [1e-2, 1e-3]
            .iter()
            .map(|tau| {
                let jt = functional_j_tau(&k, &h, &bubble, *tau, &rule).unwrap().total;
                (jt - j0) / tau
            })
            .collect();
        assert!(slopes[0].is_finite() && slopes[1].is_finite());
        // |J_tau - J_0| = O(tau): the two slope estimates agree within 20%
        assert!(
            (slopes[0] - slopes[1]).abs() < 0.2 * slopes[1].abs(),
            "slopes {slopes:?}"
        );
    }

    #[test]
    fn bubble_energy_with_frozen_coefficients_is_phi() {
        let q = SpherePoint::boundary([0.0, 1.0, 0.0]).unwrap();
        let (kq, hq) = (6.0, 0.4);
        let k = FieldSpec::constant(FieldDomain::HalfSphere, kq);
        let h = FieldSpec::constant(FieldDomain::Boundary, hq);
        let phi_q = phi_value(kq, hq).unwrap();
        for (gamma, tol) in [(10.0, 1e-2), (30.0, 1e-3), (100.0, 1e-4)] {
            let bubble = SphereBubble::new(q, gamma, kq, hq).unwrap();
            let rule = SphereRule::adapted(&q, gamma, 24).unwrap();
            let j = functional_j(&k, &h, &bubble, &rule).unwrap();
            assert!(
                (j.total - phi_q).abs() < tol * phi_q,
                "gamma={gamma}: J = {} vs phi = {phi_q}",
                j.total
            );
        }
    }

    #[test]
    fn bubble_energy_expansion_rate_and_coefficient() {
        // K varying with dK/dnu != 0 at the critical point q = e3 of K|bd
        let k = FieldSpec::parse(FieldDomain::HalfSphere, "6 + x3 - x3*x4").unwrap();
        let h = FieldSpec::constant(FieldDomain::Boundary, 0.0);
        let q = SpherePoint::boundary([0.0, 0.0, 1.0]).unwrap();
        let kq = k.value(&q);
        let phi_q = phi_value(kq, 0.0).unwrap();
        let dk_dnu = k.normal_derivative(&q).unwrap();
        assert!((dk_dnu - 1.0).abs() < 1e-12);

        let gammas = [20.0, 40.0, 80.0, 160.0];
        let mut sups = Vec::new();
        let mut lambdas = Vec::new();
        for gamma in gammas {
            let bubble = SphereBubble::new(q, gamma, kq, 0.0).unwrap();
            let rule = SphereRule::adapted(&q, gamma, 28).unwrap();
            let (_, sup) = sup_over_scaling(&k, &h, &bubble, 0.0, &rule).unwrap();
            sups.push(sup);
            lambdas.push(bubble.chart_counterpart().unwrap().lambda);
        }
        // rate: log|sup - phi| vs log gamma slope ~ -1
        let mut num = 0.0;
        let mut den = 0.0;
        let lx: Vec<f64> = gammas.iter().map(|g| g.ln()).collect();
        let ly: Vec<f64> = sups.iter().map(|s| (s - phi_q).abs().ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        for i in 0..lx.len() {
            num += (lx[i] - mx) * (ly[i] - my);
            den += (lx[i] - mx) * (lx[i] - mx);
        }
        let slope = num / den;
        assert!((slope + 1.0).abs() < 0.15, "fitted rate {slope}");

        // coefficient: two-term Richardson (eliminating the lambda^-2 term)
        // against -(1/6) dK/dx3(0) * (144 pi / K^2) psibar, dK/dx3(0) = -2 dK/dnu
        let (l2, l3) = (lambdas[2], lambdas[3]);
        let c_extract = crate::linalg::solve_dense(
            vec![
                vec![1.0 / l2, 1.0 / (l2 * l2)],
                vec![1.0 / l3, 1.0 / (l3 * l3)],
            ],
            vec![sups[2] - phi_q, sups[3] - phi_q],
        )
        .unwrap()[0];
        let dk_dx3_chart = -2.0 * dk_dnu;
        let c_theory = -(1.0 / 6.0)
            * dk_dx3_chart
            * crate::bubbles::closed_x3_moment(kq, 0.0);
        assert!(
            (c_extract - c_theory).abs() < 0.05 * c_theory.abs(),
            "lambda^-1 coefficient {c_extract} vs {c_theory}"
        );
    }
}

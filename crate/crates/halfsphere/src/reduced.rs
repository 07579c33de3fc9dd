//! The leading-order multi-bubble energy landscape: the reduced energy on
//! the neighborhood of sums of concentrating bubbles, its gradients in the
//! centers and concentrations, and the predicted concentration rates.
//!
//! The correction term normal to the bubble manifold is not computed; its
//! O((tau log tau)^2) energy contribution is treated as model error.

use crate::bubbles::BoundaryBubble;
use crate::energetics::{phi_value, psi_value};
use crate::error::{Error, Result};
use crate::fields::FieldSpec;
use crate::geometry::{greens_function, SpherePoint};
use crate::morse::{CriticalPointRecord, InteractionMatrix};

/// Default admissibility parameter: configurations must satisfy
/// `eps < tau gamma_i < 1/eps`.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Minimal pairwise geodesic separation of bubble centers.
pub const MIN_SEPARATION: f64 = 1e-2;

/// An admissible multi-bubble configuration.
#[derive(Debug, Clone)]
pub struct BubbleConfiguration {
    pub centers: Vec<SpherePoint>,
    pub gammas: Vec<f64>,
    pub tau: f64,
    pub epsilon: f64,
}

impl BubbleConfiguration {
    pub fn new(centers: Vec<SpherePoint>, gammas: Vec<f64>, tau: f64) -> Result<Self> {
        Self::with_epsilon(centers, gammas, tau, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(
        centers: Vec<SpherePoint>,
        gammas: Vec<f64>,
        tau: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if centers.is_empty() || centers.len() != gammas.len() {
            return Err(Error::Usage("need matching nonempty centers and gammas".into()));
        }
        if tau <= 0.0 {
            return Err(Error::Usage("tau must be positive".into()));
        }
        for c in &centers {
            if !c.is_boundary() {
                return Err(Error::Domain("bubble centers must be boundary points".into()));
            }
        }
        for g in &gammas {
            let tg = tau * g;
            if !(tg > epsilon && tg < 1.0 / epsilon) {
                return Err(Error::Domain(format!(
                    "inadmissible concentration: tau gamma = {tg} outside ({epsilon}, {})",
                    1.0 / epsilon
                )));
            }
        }
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i].distance(&centers[j]) < MIN_SEPARATION {
                    return Err(Error::Domain("coincident bubble centers".into()));
                }
            }
        }
        Ok(Self { centers, gammas, tau, epsilon })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Per-center frozen coefficients entering the reduced energy.
#[derive(Debug, Clone)]
struct Coefficients {
    phi: Vec<f64>,
    k_val: Vec<f64>,
    h_val: Vec<f64>,
    dk_dnu: Vec<f64>,
    psi: Vec<f64>,
    /// `int delta^6` (lambda-independent) per center.
    vol6: Vec<f64>,
    /// `int_boundary delta^4` per center.
    bdy4: Vec<f64>,
    /// `G_{a_l}(a_j) / (K(a_l)^{1/4} K(a_j)^{1/4})` for l != j.
    green: Vec<Vec<f64>>,
}

fn coefficients(cfg: &BubbleConfiguration, k: &FieldSpec, h: &FieldSpec) -> Result<Coefficients> {
    let n = cfg.len();
    let mut c = Coefficients {
        phi: Vec::with_capacity(n),
        k_val: Vec::with_capacity(n),
        h_val: Vec::with_capacity(n),
        dk_dnu: Vec::with_capacity(n),
        psi: Vec::with_capacity(n),
        vol6: Vec::with_capacity(n),
        bdy4: Vec::with_capacity(n),
        green: vec![vec![0.0; n]; n],
    };
    for a in &cfg.centers {
        let kv = k.value(a);
        let hv = h.value(a);
        if kv <= 0.0 {
            return Err(Error::Domain(format!("K = {kv} at a bubble center")));
        }
        c.phi.push(phi_value(kv, hv)?);
        c.k_val.push(kv);
        c.h_val.push(hv);
        c.dk_dnu.push(k.normal_derivative(a)?);
        c.psi.push(psi_value(kv, hv)?);
        // frozen-coefficient bubble integrals at gamma-independent leading order
        let b = BoundaryBubble::normalized([0.0, 0.0], kv, hv)?;
        c.vol6.push(b.volume_power_integral(6.0));
        c.bdy4.push(b.boundary_power_integral(4.0));
    }
    for l in 0..n {
        for j in 0..n {
            if l != j {
                c.green[l][j] = greens_function(&cfg.centers[l], &cfg.centers[j])?
                    / (c.k_val[l].powf(0.25) * c.k_val[j].powf(0.25));
            }
        }
    }
    Ok(c)
}

const SQRT6: f64 = 2.449489742783178;
const SQRT3: f64 = 1.7320508075688772;

/// The reduced energy
/// `sum phi(a_i)
///  - 1/6 sum (gamma_i^{-tau/2} - 1) K(a_i) int delta^6
///  - sum (gamma_i^{-tau/4} - 1) H(a_i) int delta^4
///  + 4 pi sqrt6 sum dK/dnu(a_i) psi(a_i) / K(a_i)^{3/2} / gamma_i
///  - 64 pi sqrt3 sum_{l<j} gamma_l^{-1/2} gamma_j^{-1/2} G_{a_l}(a_j) / (K(a_l) K(a_j))^{1/4}`.
pub fn reduced_energy(cfg: &BubbleConfiguration, k: &FieldSpec, h: &FieldSpec) -> Result<f64> {
    let c = coefficients(cfg, k, h)?;
    Ok(energy_from_coefficients(cfg, &c))
}

fn energy_from_coefficients(cfg: &BubbleConfiguration, c: &Coefficients) -> f64 {
    let pi = std::f64::consts::PI;
    let tau = cfg.tau;
    let n = cfg.len();
    let mut e = 0.0;
    for i in 0..n {
        let g = cfg.gammas[i];
        e += c.phi[i];
        e -= (g.powf(-tau / 2.0) - 1.0) * c.k_val[i] * c.vol6[i] / 6.0;
        e -= (g.powf(-tau / 4.0) - 1.0) * c.h_val[i] * c.bdy4[i];
        e += 4.0 * pi * SQRT6 * c.dk_dnu[i] * c.psi[i] / c.k_val[i].powf(1.5) / g;
    }
    for l in 0..n {
        for j in l + 1..n {
            e -= 64.0 * pi * SQRT3 * c.green[l][j]
                / (cfg.gammas[l].sqrt() * cfg.gammas[j].sqrt());
        }
    }
    e
}

/// Gradient of the reduced energy: tangential `grad' phi(a_i)` in the
/// centers (the leading order of the a-derivative) and the exact
/// gamma-derivative of the implemented energy, which is the displayed
/// gamma-gradient up to the o(tau) factors `gamma^{-tau/2}`:
/// `1/12 (tau/gamma_j) K int delta^6 + 1/4 (tau/gamma_j) H int delta^4
///  - 4 pi sqrt6 dK/dnu psi K^{-3/2} / gamma_j^2
///  + 32 pi sqrt3 sum_{l != j} gamma_j^{-3/2} gamma_l^{-1/2} G/(K K)^{1/4}`.
pub fn reduced_gradient(
    cfg: &BubbleConfiguration,
    k: &FieldSpec,
    h: &FieldSpec,
) -> Result<(Vec<[f64; 4]>, Vec<f64>)> {
    let c = coefficients(cfg, k, h)?;
    let mut a_grad = Vec::with_capacity(cfg.len());
    for (i, a) in cfg.centers.iter().enumerate() {
        let (fk, fh) = crate::energetics::phi_partials(c.k_val[i], c.h_val[i]);
        let gk = k.boundary_gradient(a)?;
        let gh = h.boundary_gradient(a)?;
        a_grad.push(std::array::from_fn(|m| fk * gk[m] + fh * gh[m]));
    }
    Ok((a_grad, gamma_gradient_from_coefficients(cfg, &c)))
}

fn gamma_gradient_from_coefficients(cfg: &BubbleConfiguration, c: &Coefficients) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let tau = cfg.tau;
    let n = cfg.len();
    let mut grad = vec![0.0; n];
    for j in 0..n {
        let g = cfg.gammas[j];
        let mut d = 0.0;
        d += tau / 12.0 * g.powf(-tau / 2.0 - 1.0) * c.k_val[j] * c.vol6[j];
        d += tau / 4.0 * g.powf(-tau / 4.0 - 1.0) * c.h_val[j] * c.bdy4[j];
        d -= 4.0 * pi * SQRT6 * c.dk_dnu[j] * c.psi[j] / c.k_val[j].powf(1.5) / (g * g);
        for l in 0..n {
            if l != j {
                d += 32.0 * pi * SQRT3 * c.green[l][j]
                    / (g.powf(1.5) * cfg.gammas[l].sqrt());
            }
        }
        grad[j] = d;
    }
    grad
}

// ---------------------------------------------------------------------------
// Concentration prediction
// ---------------------------------------------------------------------------

/// The critical configuration predicted for a subset of F^+ with rho > 0,
/// with the blow-up rates it encodes.
#[derive(Debug, Clone)]
pub struct ConcentrationPrediction {
    pub configuration: BubbleConfiguration,
    /// lambda_j from the peak relation
    /// `lambda_j = (1/16 pi)(K/6 + (H^+)^2) phi / K^{1/2} * tau * peak_j^2`.
    pub lambdas: Vec<f64>,
    /// Predicted solution peak heights (sup of the bubble).
    pub peaks: Vec<f64>,
    /// mu_j from the peak-ratio relation.
    pub mus: Vec<f64>,
}

/// Solve the gamma-gradient system for a critical configuration at the
/// given tau. Newton iteration in log(gamma); an infeasible system (no
/// positive solution, consistent with rho <= 0) is reported as an error.
pub fn predict_concentration(
    records: &[CriticalPointRecord],
    k: &FieldSpec,
    h: &FieldSpec,
    tau: f64,
) -> Result<ConcentrationPrediction> {
    if records.is_empty() {
        return Err(Error::Usage("empty record set".into()));
    }
    if tau >= 0.05 {
        return Err(Error::Usage(format!("tau = {tau} too large for the prediction (< 0.05)")));
    }
    let centers: Vec<SpherePoint> = records.iter().map(|r| r.q).collect();
    let pi = std::f64::consts::PI;

    // initial guess from the diagonal balance: gamma_j = 16 pi sqrt6 M_jj / (tau phi_j)
    let mut gammas: Vec<f64> = records
        .iter()
        .map(|r| {
            let kv = k.value(&r.q);
            let hv = h.value(&r.q);
            let mjj = r.dk_dnu * psi_value(kv, hv).unwrap_or(1.0) / kv.powf(1.5);
            let phi_j = phi_value(kv, hv).unwrap_or(1.0);
            if mjj > 0.0 {
                16.0 * pi * SQRT6 * mjj / (tau * phi_j)
            } else {
                1.0 / tau
            }
        })
        .collect();

    // Newton in xi = log gamma on the scaled system gamma_j^2 dE/dgamma_j,
    // which stays away from zero at infinity when the configuration is
    // infeasible (rho <= 0).
    let n = gammas.len();
    let c = coefficients(
        &BubbleConfiguration::with_epsilon(centers.clone(), gammas.clone(), tau, 1e-9)?,
        k,
        h,
    )?;
    let scaled_at = |gs: &[f64]| -> Option<Vec<f64>> {
        let cfg =
            BubbleConfiguration::with_epsilon(centers.clone(), gs.to_vec(), tau, 1e-9).ok()?;
        let grad = gamma_gradient_from_coefficients(&cfg, &c);
        Some(grad.iter().zip(gs).map(|(d, g)| d * g * g).collect())
    };
    let scale: f64 = (0..n)
        .map(|i| c.k_val[i] * c.vol6[i] / 12.0 + c.h_val[i].abs() * c.bdy4[i] / 4.0)
        .fold(0.0, f64::max);
    let mut converged = false;
    for _ in 0..300 {
        let f0 = match scaled_at(&gammas) {
            Some(f) => f,
            None => break,
        };
        let fnorm = f0.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if fnorm < 1e-11 * scale {
            converged = true;
            break;
        }
        let mut jac = vec![vec![0.0; n]; n];
        let mut singular = false;
        for l in 0..n {
            let hstep: f64 = 1e-6;
            let mut gp = gammas.clone();
            let mut gm = gammas.clone();
            gp[l] *= hstep.exp();
            gm[l] *= (-hstep).exp();
            match (scaled_at(&gp), scaled_at(&gm)) {
                (Some(fp), Some(fm)) => {
                    for j in 0..n {
                        jac[j][l] = (fp[j] - fm[j]) / (2.0 * hstep);
                    }
                }
                _ => singular = true,
            }
        }
        if singular {
            break;
        }
        let step = match crate::linalg::solve_dense(jac, f0.iter().map(|x| -x).collect()) {
            Ok(s) => s,
            Err(_) => break,
        };
        let mut damped = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = gammas
                .iter()
                .zip(&step)
                .map(|(g, s)| g * (damped * s.clamp(-3.0, 3.0)).exp())
                .collect();
            if let Some(fc) = scaled_at(&cand) {
                let new_norm = fc.iter().map(|x| x.abs()).fold(0.0, f64::max);
                if new_norm < fnorm {
                    gammas = cand;
                    accepted = true;
                    break;
                }
            }
            damped *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(
            "no positive-gamma critical configuration found; consistent with rho <= 0 \
             nonexistence"
                .into(),
        ));
    }

    let configuration = BubbleConfiguration::with_epsilon(centers, gammas, tau, 1e-8)?;
    let mut lambdas = Vec::with_capacity(n);
    let mut peaks = Vec::with_capacity(n);
    let mut mus = Vec::with_capacity(n);
    for (i, r) in records.iter().enumerate() {
        let kv = k.value(&r.q);
        let hv = h.value(&r.q);
        let hplus = hv.max(0.0);
        let bubble =
            crate::bubbles::SphereBubble::new(r.q, configuration.gammas[i], kv, hv)?;
        // sup over the closed half-sphere: at the boundary center when the
        // auxiliary center sits below the equator, at the inner pole otherwise
        let peak = if bubble.auxiliary_center()[3] > 0.0 {
            (24.0 / kv).powf(0.25) * (configuration.gammas[i] / 2.0).sqrt()
        } else {
            bubble.eval(&r.q)
        };
        peaks.push(peak);
        let phi_j = phi_value(kv, hv)?;
        lambdas.push(
            (kv / 6.0 + hplus * hplus) * phi_j / kv.sqrt() * tau * peak * peak / (16.0 * pi),
        );
        mus.push(2.0 * (kv / 6.0 + hplus * hplus).powf(-0.5) * kv.powf(0.25) * peaks[0] / peak);
    }
    Ok(ConcentrationPrediction { configuration, lambdas, peaks, mus })
}

/// Residual of the eigenvalue relation `sum_l M_lj mu_l = lambda_j mu_j`.
pub fn eigen_relation_check(m: &InteractionMatrix, mus: &[f64], lambdas: &[f64]) -> Result<f64> {
    let n = m.entries.len();
    if mus.len() != n || lambdas.len() != n {
        return Err(Error::Usage("dimension mismatch in eigen relation".into()));
    }
    let mut worst = 0.0f64;
    for j in 0..n {
        let mut s = 0.0;
        for l in 0..n {
            s += m.entries[l][j] * mus[l];
        }
        worst = worst.max((s - lambdas[j] * mus[j]).abs());
    }
    Ok(worst)
}

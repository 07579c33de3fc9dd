//! Critical-point analysis of the boundary blow-up energy phi, the bubble
//! interaction matrix M with its least eigenvalue rho, the genericity class
//! of data (K, H), and the Morse-theoretic index count.

use crate::energetics::{phi_partials, phi_second_partials, phi_value, psi_value};
use crate::error::{Error, Result};
use crate::fields::{FieldDomain, FieldSpec, GridField};
use crate::geometry::{
    boundary_tangent_frame, dot4, fibonacci_boundary_points, greens_function, SpherePoint,
};
use crate::linalg::{determinant, symmetric_eigenvalues};

/// Gradient norm below which a point counts as critical (after Newton).
pub const GRAD_TOL: f64 = 1e-10;
/// Geodesic distance below which two critical points are duplicates.
pub const DEDUP_TOL: f64 = 1e-6;
/// Relative eigenvalue threshold for flagging a degenerate Hessian.
pub const DEGENERATE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// `dK/dnu > 0` at the critical point.
    Fplus,
    /// `dK/dnu < 0`.
    Fminus,
}

/// A Newton-refined critical point of phi on the boundary 2-sphere.
#[derive(Debug, Clone)]
pub struct CriticalPointRecord {
    pub q: SpherePoint,
    pub phi_value: f64,
    pub morse_index: usize,
    pub dk_dnu: f64,
    pub classification: Classification,
    pub hessian_eigs: (f64, f64),
    pub grad_norm: f64,
    pub degenerate: bool,
}

/// Search outcome: refined records plus diagnostics for the genericity
/// verdicts.
#[derive(Debug, Clone)]
pub struct CriticalSearch {
    pub records: Vec<CriticalPointRecord>,
    /// Lattice cells where the gradient is suspiciously small but Newton
    /// found nothing nearby (possible missed critical points).
    pub suspect_cells: Vec<SpherePoint>,
    /// Phi looks constant / degenerate everywhere (not a Morse function).
    pub not_morse: bool,
}

/// Chain-rule machinery for phi(q) = f(K(q), H(q)) on the boundary sphere.
pub struct PhiLandscape<'a> {
    k: &'a FieldSpec,
    h: &'a FieldSpec,
}

impl<'a> PhiLandscape<'a> {
    pub fn new(k: &'a FieldSpec, h: &'a FieldSpec) -> Self {
        Self { k, h }
    }

    pub fn value(&self, q: &SpherePoint) -> Result<f64> {
        phi_value(self.k.value(q), self.h.value(q))
    }

    /// Tangential gradient of phi on the boundary sphere.
    pub fn gradient(&self, q: &SpherePoint) -> Result<[f64; 4]> {
        let (fk, fh) = phi_partials(self.k.value(q), self.h.value(q));
        let gk = self.k.boundary_gradient(q)?;
        let gh = self.h.boundary_gradient(q)?;
        Ok(std::array::from_fn(|i| fk * gk[i] + fh * gh[i]))
    }

    /// Second derivative of phi along the boundary geodesic with unit
    /// velocity `t`.
    pub fn second_derivative(&self, q: &SpherePoint, t: &[f64; 4]) -> Result<f64> {
        let kv = self.k.value(q);
        let hv = self.h.value(q);
        let (fk, fh) = phi_partials(kv, hv);
        let (fkk, fkh, fhh) = phi_second_partials(kv, hv);
        let gk = self.k.ambient_gradient(q);
        let gh = self.h.ambient_gradient(q);
        let dk = dot4(&gk, t);
        let dh = dot4(&gh, t);
        let d2k = self.k.boundary_second_derivative(q, t)?;
        let d2h = self.h.boundary_second_derivative(q, t)?;
        Ok(fk * d2k + fh * d2h + fkk * dk * dk + 2.0 * fkh * dk * dh + fhh * dh * dh)
    }

    /// Hessian (h11, h12, h22) in the orthonormal tangent frame at `q`.
    pub fn hessian(&self, q: &SpherePoint) -> Result<(f64, f64, f64)> {
        let (t1, t2) = boundary_tangent_frame(q);
        let h11 = self.second_derivative(q, &t1)?;
        let h22 = self.second_derivative(q, &t2)?;
        let n = std::f64::consts::FRAC_1_SQRT_2;
        let tp: [f64; 4] = std::array::from_fn(|i| n * (t1[i] + t2[i]));
        let hpp = self.second_derivative(q, &tp)?;
        Ok((h11, hpp - 0.5 * (h11 + h22), h22))
    }
}

/// Find the critical points of phi on the boundary 2-sphere by Fibonacci
/// seeding and damped Newton refinement.
pub fn find_critical_points(
    k: &FieldSpec,
    h: &FieldSpec,
    seeds: usize,
) -> Result<CriticalSearch> {
    if seeds < 32 {
        return Err(Error::Usage(format!("need at least 32 seeds, got {seeds}")));
    }
    let phi = PhiLandscape::new(k, h);
    let mut found: Vec<CriticalPointRecord> = Vec::new();

    for seed in fibonacci_boundary_points(seeds) {
        if let Some(q) = newton_refine(&phi, seed) {
            if found.iter().any(|r| r.q.distance(&q) < DEDUP_TOL) {
                continue;
            }
            let record = classify(&phi, k, h, q)?;
            found.push(record);
        }
    }

    // deterministic ordering: by phi value, then coordinates
    found.sort_by(|a, b| {
        a.phi_value
            .total_cmp(&b.phi_value)
            .then(a.q.coords()[0].total_cmp(&b.q.coords()[0]))
            .then(a.q.coords()[1].total_cmp(&b.q.coords()[1]))
            .then(a.q.coords()[2].total_cmp(&b.q.coords()[2]))
    });

    // not-Morse screen: degenerate records, or a flat landscape
    let not_morse = if found.is_empty() {
        true
    } else {
        found.iter().any(|r| r.degenerate)
    };

    // coarse scan for sign-change cells Newton may have missed
    let mut suspect_cells = Vec::new();
    let scan = fibonacci_boundary_points(4 * seeds);
    let mut grads: Vec<f64> = Vec::with_capacity(scan.len());
    for p in &scan {
        let g = phi.gradient(p)?;
        grads.push(dot4(&g, &g).sqrt());
    }
    let mut sorted = grads.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    for (p, g) in scan.iter().zip(&grads) {
        if *g < 1e-3 * median && found.iter().all(|r| r.q.distance(p) > 0.2) {
            suspect_cells.push(*p);
        }
    }

    Ok(CriticalSearch { records: found, suspect_cells, not_morse })
}

fn newton_refine(phi: &PhiLandscape, start: SpherePoint) -> Option<SpherePoint> {
    let mut q = start;
    let mut damping = 0.0;
    for _ in 0..80 {
        let g = phi.gradient(&q).ok()?;
        let gnorm = dot4(&g, &g).sqrt();
        if gnorm < GRAD_TOL {
            return Some(q);
        }
        let (t1, t2) = boundary_tangent_frame(&q);
        let g1 = dot4(&g, &t1);
        let g2 = dot4(&g, &t2);
        let (h11, h12, h22) = phi.hessian(&q).ok()?;
        // damped Newton: (H + mu I) s = -g
        let mut step = None;
        for _ in 0..40 {
            let a = h11 + damping;
            let d = h22 + damping;
            let det = a * d - h12 * h12;
            if det.abs() > 1e-14 * (a.abs() + d.abs() + 1e-30).powi(2) {
                let s1 = (-g1 * d + g2 * h12) / det;
                let s2 = (g1 * h12 - g2 * a) / det;
                let slen = (s1 * s1 + s2 * s2).sqrt();
                if slen < 1.0 {
                    step = Some((s1, s2, slen));
                    break;
                }
            }
            damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
            if damping > 1e12 {
                return None;
            }
        }
        let (s1, s2, slen) = step?;
        let qv = q.coords();
        let next = SpherePoint::from_unnormalized(std::array::from_fn(|i| {
            if slen < 1e-16 {
                qv[i]
            } else {
                qv[i] * slen.cos() + (s1 * t1[i] + s2 * t2[i]) / slen * slen.sin()
            }
        }))
        .ok()?;
        let gn = phi.gradient(&next).ok()?;
        if dot4(&gn, &gn).sqrt() < gnorm || slen < 1e-14 {
            q = next;
            damping = (damping / 10.0).max(0.0);
            if damping < 1e-12 {
                damping = 0.0;
            }
        } else {
            damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
            if damping > 1e12 {
                return None;
            }
        }
    }
    let g = phi.gradient(&q).ok()?;
    (dot4(&g, &g).sqrt() < GRAD_TOL).then_some(q)
}

fn classify(
    phi: &PhiLandscape,
    k: &FieldSpec,
    _h: &FieldSpec,
    q: SpherePoint,
) -> Result<CriticalPointRecord> {
    let (h11, h12, h22) = phi.hessian(&q)?;
    let tr = h11 + h22;
    let disc = ((h11 - h22) * (h11 - h22) + 4.0 * h12 * h12).sqrt();
    let e1 = 0.5 * (tr - disc);
    let e2 = 0.5 * (tr + disc);
    let scale = e1.abs().max(e2.abs()).max(1e-30);
    let degenerate = e1.abs().min(e2.abs()) < DEGENERATE_TOL * scale.max(1.0);
    let morse_index = [e1, e2].iter().filter(|e| **e < 0.0).count();
    let dk_dnu = k.normal_derivative(&q)?;
    let g = phi.gradient(&q)?;
    Ok(CriticalPointRecord {
        q,
        phi_value: phi.value(&q)?,
        morse_index,
        dk_dnu,
        classification: if dk_dnu > 0.0 { Classification::Fplus } else { Classification::Fminus },
        hessian_eigs: (e1, e2),
        grad_norm: dot4(&g, &g).sqrt(),
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Interaction matrix
// ---------------------------------------------------------------------------

/// The N x N symmetric bubble-interaction matrix with its least eigenvalue:
/// `M_jj = dK/dnu(q^j) psi(q^j) / K(q^j)^{3/2}`,
/// `M_lj = -4 sqrt2 G_{q^l}(q^j) / (K(q^l)^{1/4} K(q^j)^{1/4})`.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    pub points: Vec<CriticalPointRecord>,
    pub entries: Vec<Vec<f64>>,
    pub rho: f64,
}

pub fn build_interaction_matrix(
    records: &[CriticalPointRecord],
    k: &FieldSpec,
    h: &FieldSpec,
) -> Result<InteractionMatrix> {
    let n = records.len();
    if n == 0 {
        return Err(Error::Usage("interaction matrix needs at least one point".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if records[i].q.distance(&records[j].q) <= DEDUP_TOL {
                return Err(Error::Usage(
                    "duplicate interaction points (Green's function pole)".into(),
                ));
            }
        }
    }
    let mut entries = vec![vec![0.0; n]; n];
    for j in 0..n {
        let qj = &records[j].q;
        let kj = k.value(qj);
        entries[j][j] = records[j].dk_dnu * psi_value(kj, h.value(qj))? / kj.powf(1.5);
        for l in 0..n {
            if l == j {
                continue;
            }
            let ql = &records[l].q;
            let kl = k.value(ql);
            entries[l][j] = -4.0 * 2.0_f64.sqrt() * greens_function(ql, qj)?
                / (kl.powf(0.25) * kj.powf(0.25));
        }
    }
    let eigs = symmetric_eigenvalues(&entries);
    Ok(InteractionMatrix { points: records.to_vec(), entries, rho: eigs[0] })
}

// ---------------------------------------------------------------------------
// Genericity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GenericityReport {
    pub morse: bool,
    pub morse_witness: Option<String>,
    pub dk_dnu_nonzero: bool,
    pub dk_witness: Option<String>,
    pub rho_nonzero: bool,
    pub rho_witness: Option<String>,
    pub subset_count: usize,
    pub search: CriticalSearch,
}

impl GenericityReport {
    pub fn passes(&self) -> bool {
        self.morse && self.dk_dnu_nonzero && self.rho_nonzero
    }
}

/// The three verdicts defining the admissible class: phi Morse, `dK/dnu != 0`
/// on F, and `rho != 0` on every subset of F \ F^- (size >= 1).
pub fn check_genericity(k: &FieldSpec, h: &FieldSpec) -> Result<GenericityReport> {
    let search = find_critical_points(k, h, 192)?;
    let mut morse = !search.not_morse;
    let mut morse_witness = None;
    if let Some(r) = search.records.iter().find(|r| r.degenerate) {
        morse = false;
        morse_witness = Some(format!(
            "degenerate Hessian at ({:.6}, {:.6}, {:.6}): eigs {:?}",
            r.q.coords()[0],
            r.q.coords()[1],
            r.q.coords()[2],
            r.hessian_eigs
        ));
    } else if search.not_morse {
        morse_witness = Some("no nondegenerate critical points found".into());
    }
    if !search.suspect_cells.is_empty() {
        morse = false;
        morse_witness.get_or_insert_with(|| {
            format!("{} cells with unresolved small gradient", search.suspect_cells.len())
        });
    }

    let mut dk_dnu_nonzero = true;
    let mut dk_witness = None;
    for r in &search.records {
        if r.dk_dnu.abs() < 1e-8 {
            dk_dnu_nonzero = false;
            dk_witness = Some(format!(
                "dK/dnu = {:.3e} at ({:.6}, {:.6}, {:.6})",
                r.dk_dnu,
                r.q.coords()[0],
                r.q.coords()[1],
                r.q.coords()[2]
            ));
            break;
        }
    }

    let mut rho_nonzero = true;
    let mut rho_witness = None;
    let mut subset_count = 0usize;
    if morse {
        if search.records.len() > 20 {
            return Err(Error::CombinatorialLimit(search.records.len()));
        }
        // rho over all subsets of F \ F^- (size >= 1)
        let candidates: Vec<&CriticalPointRecord> = search
            .records
            .iter()
            .filter(|r| r.classification == Classification::Fplus)
            .collect();
        let n = candidates.len();
        for mask in 1u32..(1u32 << n) {
            let subset: Vec<CriticalPointRecord> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| candidates[i].clone())
                .collect();
            let m = build_interaction_matrix(&subset, k, h)?;
            subset_count += 1;
            let scale = m
                .entries
                .iter()
                .flat_map(|r| r.iter())
                .map(|x| x.abs())
                .fold(0.0, f64::max)
                .max(1e-30);
            if m.rho.abs() < 1e-8 * scale.max(1.0) {
                rho_nonzero = false;
                rho_witness
                    .get_or_insert_with(|| format!("rho = {:.3e} on subset mask {mask:b}", m.rho));
            }
        }
    } else {
        rho_nonzero = false;
        rho_witness = Some("phi is not a Morse function; rho enumeration skipped".into());
    }

    Ok(GenericityReport {
        morse,
        morse_witness,
        dk_dnu_nonzero,
        dk_witness,
        rho_nonzero,
        rho_witness,
        subset_count,
        search,
    })
}

// ---------------------------------------------------------------------------
// Index formula
// ---------------------------------------------------------------------------

/// The bare index sum
/// `-1 + sum over nonempty subsets S of F^+ with rho(S) > 0 of
///  (-1)^{|S| + sum_{q in S} (2 - m(phi, q))}`,
/// parameterized so that it runs on synthetic data as well.
pub fn index_sum<F: FnMut(&[usize]) -> f64>(morse_indices: &[usize], mut rho_of: F) -> i64 {
    let n = morse_indices.len();
    let mut index: i64 = -1;
    if n == 0 {
        return index;
    }
    assert!(n <= 20, "subset cap");
    for mask in 1u32..(1u32 << n) {
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if rho_of(&subset) > 0.0 {
            let exponent: i64 = subset.len() as i64
                + subset.iter().map(|i| 2 - morse_indices[*i] as i64).sum::<i64>();
            index += if exponent % 2 == 0 { 1 } else { -1 };
        }
    }
    index
}

/// The per-cluster degree `(-1)^{N + sum_j (2 - m(phi, q^j))}`.
pub fn cluster_degree(morse_indices: &[usize]) -> i64 {
    let e: i64 = morse_indices.len() as i64
        + morse_indices.iter().map(|m| 2 - *m as i64).sum::<i64>();
    if e % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Full Index(K, H) computation; refuses when the data is not generic.
pub fn index_formula(k: &FieldSpec, h: &FieldSpec) -> Result<(i64, GenericityReport)> {
    let report = check_genericity(k, h)?;
    if !report.passes() {
        return Err(Error::Genericity(format!(
            "morse: {} ({:?}); dK/dnu != 0: {} ({:?}); rho != 0: {} ({:?})",
            report.morse,
            report.morse_witness,
            report.dk_dnu_nonzero,
            report.dk_witness,
            report.rho_nonzero,
            report.rho_witness
        )));
    }
    let index = index_from_report(k, h, &report)?;
    Ok((index, report))
}

/// Index evaluation given an existing genericity report (used by the CLI's
/// --force path as well).
pub fn index_from_report(
    k: &FieldSpec,
    h: &FieldSpec,
    report: &GenericityReport,
) -> Result<i64> {
    let fplus: Vec<CriticalPointRecord> = report
        .search
        .records
        .iter()
        .filter(|r| r.classification == Classification::Fplus)
        .cloned()
        .collect();
    let morse_indices: Vec<usize> = fplus.iter().map(|r| r.morse_index).collect();
    let mut err: Option<Error> = None;
    let idx = index_sum(&morse_indices, |subset| {
        let pts: Vec<CriticalPointRecord> = subset.iter().map(|i| fplus[*i].clone()).collect();
        match build_interaction_matrix(&pts, k, h) {
            Ok(m) => m.rho,
            Err(e) => {
                err = Some(e);
                f64::NEG_INFINITY
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(idx),
    }
}

// ---------------------------------------------------------------------------
// Homotopy (K_t, H_t) with phi_t = phi and H_t = t H
// ---------------------------------------------------------------------------

/// One step of the phi-preserving homotopy: the boundary field `K_t`
/// (sampled grid), its values and Eq.-(8.12) normal derivatives at the
/// critical points, and the resulting interaction matrix.
#[derive(Debug, Clone)]
pub struct HomotopyStep {
    pub t: f64,
    pub k_t: FieldSpec,
    pub kt_at_f: Vec<f64>,
    pub dnu_at_f: Vec<f64>,
    pub m_t: Vec<Vec<f64>>,
    pub rho_t: f64,
}

/// Solve `4 pi sqrt(6/K_t) (pi/2 - atan(t H sqrt(6/K_t))) = phi` for `K_t`
/// at one boundary point. phi is strictly decreasing in K, so safeguarded
/// bisection applies.
pub fn homotopy_kt_value(phi_target: f64, h_val: f64, t: f64) -> Result<f64> {
    if phi_target <= 0.0 {
        return Err(Error::Numerical(format!("phi = {phi_target} must be positive")));
    }
    let th = t * h_val;
    let f = |kt: f64| phi_value(kt, th).map(|p| p - phi_target);
    let mut lo = 1e-12;
    let mut hi = 1.0;
    // expand the bracket: f(lo) > 0 > f(hi) eventually
    for _ in 0..200 {
        if f(hi)? < 0.0 {
            break;
        }
        hi *= 4.0;
        if hi > 1e18 {
            return Err(Error::Numerical(format!(
                "root bracketing failed at H = {h_val}, t = {t}, phi = {phi_target}"
            )));
        }
    }
    if f(lo)? < 0.0 {
        // phi(K -> 0) is finite (= 4 pi / (tH)) when tH > 0 and can sit
        // below the target: no solution
        return Err(Error::Numerical(format!(
            "no K_t root: phi(0+) = {} < target {phi_target} at boundary point",
            4.0 * std::f64::consts::PI / th
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn homotopy_step(
    k: &FieldSpec,
    h: &FieldSpec,
    records: &[CriticalPointRecord],
    t: f64,
    grid_nodes: usize,
) -> Result<HomotopyStep> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Usage(format!("homotopy parameter t = {t} out of [0,1]")));
    }
    let pi4 = 4.0 * std::f64::consts::PI;
    // sampled boundary field
    let nodes = fibonacci_boundary_points(grid_nodes.max(64));
    let mut values = Vec::with_capacity(nodes.len());
    for p in &nodes {
        let phi_p = phi_value(k.value(p), h.value(p))?;
        values.push(homotopy_kt_value(phi_p, h.value(p), t)?);
    }
    let k_t = FieldSpec::from_grid(GridField::new(FieldDomain::Boundary, nodes, values)?);

    // exact values and Eq.-(8.12) normal derivatives at the critical points
    let mut kt_at_f = Vec::with_capacity(records.len());
    let mut dnu_at_f = Vec::with_capacity(records.len());
    for r in records {
        let kq = k.value(&r.q);
        let hq = h.value(&r.q);
        let phi_q = phi_value(kq, hq)?;
        let kt_q = homotopy_kt_value(phi_q, hq, t)?;
        kt_at_f.push(kt_q);
        dnu_at_f.push(
            kt_q / kq * (pi4 - hq * phi_q) / (pi4 - t * hq * phi_q) * r.dk_dnu,
        );
    }

    // interaction matrix for (K_t, H_t) on the same points
    let n = records.len();
    let mut m_t = vec![vec![0.0; n]; n];
    for j in 0..n {
        let hq = t * h.value(&records[j].q);
        let psi_t = psi_value(kt_at_f[j], hq)?;
        m_t[j][j] = dnu_at_f[j] * psi_t / kt_at_f[j].powf(1.5);
        for l in 0..n {
            if l != j {
                m_t[l][j] = -4.0 * 2.0_f64.sqrt()
                    * greens_function(&records[l].q, &records[j].q)?
                    / (kt_at_f[l].powf(0.25) * kt_at_f[j].powf(0.25));
            }
        }
    }
    let rho_t = if n > 0 { symmetric_eigenvalues(&m_t)[0] } else { f64::NAN };

    Ok(HomotopyStep { t, k_t, kt_at_f, dnu_at_f, m_t, rho_t })
}

/// Determinant of a homotopy-step matrix (exposed for the invariant
/// `det M_t / det M = prod (K/K_t)^{1/2}` forced by the Eq.-(8.12) scaling).
pub fn step_determinant(step: &HomotopyStep) -> f64 {
    determinant(&step.m_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldDomain;

    fn fields(k: &str, h: &str) -> (FieldSpec, FieldSpec) {
        (
            FieldSpec::parse(FieldDomain::HalfSphere, k).unwrap(),
            FieldSpec::parse(FieldDomain::Boundary, h).unwrap(),
        )
    }

    #[test]
    fn constant_data_is_not_morse() {
        let (k, h) = fields("6", "0");
        let search = find_critical_points(&k, &h, 64).unwrap();
        assert!(search.not_morse, "constant phi must be flagged");
        let report = check_genericity(&k, &h).unwrap();
        assert!(!report.passes());
        assert!(index_formula(&k, &h).is_err());
    }

    #[test]
    fn linear_perturbation_critical_points() {
        // K = 6 + x1, H = 0: phi critical exactly at +-e1 with indices {0, 2}
        let (k, h) = fields("6 + x1", "0");
        let search = find_critical_points(&k, &h, 96).unwrap();
        assert_eq!(search.records.len(), 2, "records: {:?}", search.records.len());
        let e1 = SpherePoint::boundary([1.0, 0.0, 0.0]).unwrap();
        let me1 = SpherePoint::boundary([-1.0, 0.0, 0.0]).unwrap();
        // sorted by phi value: minimum first (at K max = +e1)
        assert!(search.records[0].q.distance(&e1) < 1e-8);
        assert!(search.records[1].q.distance(&me1) < 1e-8);
        assert_eq!(search.records[0].morse_index, 0);
        assert_eq!(search.records[1].morse_index, 2);
        for r in &search.records {
            assert!(r.grad_norm < GRAD_TOL);
            assert!(!r.degenerate);
        }
        assert!(search.suspect_cells.is_empty());
    }

    #[test]
    fn dense_grid_oracle_agrees_with_newton() {
        let (k, h) = fields("6 + 0.3*x1 + 0.1*x2*x3", "0.2*x3");
        let search = find_critical_points(&k, &h, 128).unwrap();
        assert!(!search.records.is_empty());
        let phi = PhiLandscape::new(&k, &h);

        // dense lat-long grid; local minima of |grad phi| are candidates
        let nth = 700;
        let nph = 1400;
        let mut g = vec![vec![0.0f64; nph]; nth];
        for (i, row) in g.iter_mut().enumerate() {
            let th = std::f64::consts::PI * (i as f64 + 0.5) / nth as f64;
            for (j, cell) in row.iter_mut().enumerate() {
                let ph = 2.0 * std::f64::consts::PI * j as f64 / nph as f64;
                let p = SpherePoint::boundary([
                    th.sin() * ph.cos(),
                    th.sin() * ph.sin(),
                    th.cos(),
                ])
                .unwrap();
                let gr = phi.gradient(&p).unwrap();
                *cell = dot4(&gr, &gr).sqrt();
            }
        }
        let mut candidates = Vec::new();
        for i in 1..nth - 1 {
            for j in 0..nph {
                let jm = (j + nph - 1) % nph;
                let jp = (j + 1) % nph;
                let c = g[i][j];
                if c <= g[i - 1][j]
                    && c <= g[i + 1][j]
                    && c <= g[i][jm]
                    && c <= g[i][jp]
                    && c < 0.02
                {
                    let th = std::f64::consts::PI * (i as f64 + 0.5) / nth as f64;
                    let ph = 2.0 * std::f64::consts::PI * j as f64 / nph as f64;
                    candidates.push(
                        SpherePoint::boundary([
                            th.sin() * ph.cos(),
                            th.sin() * ph.sin(),
                            th.cos(),
                        ])
                        .unwrap(),
                    );
                }
            }
        }
        // every record has a grid candidate nearby and vice versa
        for r in &search.records {
            let d = candidates
                .iter()
                .map(|c| c.distance(&r.q))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-2, "record without grid candidate (distance {d})");
        }
        for c in &candidates {
            let d = search
                .records
                .iter()
                .map(|r| r.q.distance(c))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-2, "grid candidate without record (distance {d})");
        }
    }

    #[test]
    fn interaction_matrix_single_point() {
        let (k, h) = fields("6 + x3 - x3*x4", "0");
        let search = find_critical_points(&k, &h, 96).unwrap();
        let fplus: Vec<CriticalPointRecord> = search
            .records
            .iter()
            .filter(|r| r.classification == Classification::Fplus)
            .cloned()
            .collect();
        assert_eq!(fplus.len(), 1);
        let m = build_interaction_matrix(&fplus, &k, &h).unwrap();
        let q = &fplus[0].q;
        let expect = fplus[0].dk_dnu * psi_value(k.value(q), 0.0).unwrap() / k.value(q).powf(1.5);
        assert!((m.rho - expect).abs() < 1e-12 * expect.abs());
        assert!(m.rho > 0.0);
    }

    #[test]
    fn interaction_matrix_symmetric_pair() {
        // K symmetric under x1 -> -x1 with two F+ points at +-e1
        let (k, h) = fields("6 + x1^2 - x4", "0");
        let e1 = SpherePoint::boundary([1.0, 0.0, 0.0]).unwrap();
        let me1 = SpherePoint::boundary([-1.0, 0.0, 0.0]).unwrap();
        let phi = PhiLandscape::new(&k, &h);
        let r1 = classify(&phi, &k, &h, e1).unwrap();
        let r2 = classify(&phi, &k, &h, me1).unwrap();
        assert!(r1.dk_dnu > 0.0 && r2.dk_dnu > 0.0);
        let m = build_interaction_matrix(&[r1, r2], &k, &h).unwrap();
        assert!((m.entries[0][0] - m.entries[1][1]).abs() < 1e-12);
        assert!((m.entries[0][1] - m.entries[1][0]).abs() < 1e-12);
        assert!(m.entries[0][1] < 0.0, "off-diagonal must be negative");
        let expect = m.entries[0][0] - m.entries[0][1].abs();
        assert!((m.rho - expect).abs() < 1e-10 * expect.abs().max(1.0));
        // duplicate points rejected
        let r1b = r1_clone(&m);
        assert!(build_interaction_matrix(&[r1b.clone(), r1b], &k, &h).is_err());
    }

    fn r1_clone(m: &InteractionMatrix) -> CriticalPointRecord {
        m.points[0].clone()
    }

    #[test]
    fn off_diagonal_negativity_random_configs() {
        let (k, h) = fields("6 + 0.5*x1 + 0.25*x2^2 - 0.3*x4", "0.1 + 0.05*x2");
        let pts = [
            [0.9, 0.1, 0.2],
            [-0.3, 0.8, 0.1],
            [0.0, -0.7, 0.7],
            [0.5, 0.5, -0.6],
        ];
        let phi = PhiLandscape::new(&k, &h);
        let records: Vec<CriticalPointRecord> = pts
            .iter()
            .map(|p| classify(&phi, &k, &h, SpherePoint::boundary(*p).unwrap()).unwrap())
            .collect();
        let m = build_interaction_matrix(&records, &k, &h).unwrap();
        for l in 0..records.len() {
            for j in 0..records.len() {
                if l != j {
                    assert!(m.entries[l][j] < 0.0);
                    assert!((m.entries[l][j] - m.entries[j][l]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn genericity_of_obstruction_field() {
        // (K tilde, 0) is generic with a single F+ point
        let q = SpherePoint::boundary([0.0, 0.0, 1.0]).unwrap();
        let k = crate::fields::obstruction_field(&q).unwrap();
        let h = FieldSpec::constant(FieldDomain::Boundary, 0.0);
        let report = check_genericity(&k, &h).unwrap();
        assert!(report.passes(), "report: {report:?}");
        let fplus: Vec<&CriticalPointRecord> = report
            .search
            .records
            .iter()
            .filter(|r| r.classification == Classification::Fplus)
            .collect();
        assert_eq!(fplus.len(), 1);
        // the F+ point is the antipode of the chart center, a minimum of phi
        assert!(fplus[0].q.distance(&SpherePoint::boundary([0.0, 0.0, -1.0]).unwrap()) < 1e-8);
        assert_eq!(fplus[0].morse_index, 0);
    }

    #[test]
    fn genericity_verdicts_stable_under_seed_refinement() {
        let (k, h) = fields("6 + 0.3*x1 + 0.1*x2*x4", "0");
        let a = find_critical_points(&k, &h, 96).unwrap();
        let b = find_critical_points(&k, &h, 192).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert!(ra.q.distance(&rb.q) < 1e-8);
            assert_eq!(ra.morse_index, rb.morse_index);
        }
    }

    #[test]
    fn index_formula_basic_cases() {
        // F+ empty -> -1
        assert_eq!(index_sum(&[], |_| 1.0), -1);
        // single F+ with rho > 0: m = 2 -> -2; m = 1 -> 0
        assert_eq!(index_sum(&[2], |_| 1.0), -2);
        assert_eq!(index_sum(&[1], |_| 1.0), 0);
        // rho < 0 kills the subset
        assert_eq!(index_sum(&[2], |_| -1.0), -1);
        // degree consistency: single-point cluster degree equals its summand
        assert_eq!(cluster_degree(&[2]), -1);
        assert_eq!(cluster_degree(&[0]), -1);
        assert_eq!(cluster_degree(&[1]), 1);
    }

    #[test]
    fn index_on_field_with_empty_fplus() {
        // dK/dnu < 0 on all of F: F+ empty, Index = -1
        let (k, h) = fields("6 + x3 + 0.6*x4", "0");
        let (idx, report) = index_formula(&k, &h).unwrap();
        assert_eq!(idx, -1);
        assert!(report
            .search
            .records
            .iter()
            .all(|r| r.classification == Classification::Fminus));
    }

    #[test]
    fn index_on_single_fplus_min() {
        // phi-min at e3 with dK/dnu > 0 there: Index = -1 + (-1)^{1+2} = -2
        let (k, h) = fields("6 + x3 - x3*x4", "0");
        let (idx, report) = index_formula(&k, &h).unwrap();
        let fplus: Vec<&CriticalPointRecord> = report
            .search
            .records
            .iter()
            .filter(|r| r.classification == Classification::Fplus)
            .collect();
        assert_eq!(fplus.len(), 1);
        assert_eq!(fplus[0].morse_index, 0);
        assert_eq!(idx, -2);
    }

    #[test]
    fn rescaling_leaves_critical_set_fixed() {
        let (k, h) = fields("6 + 0.4*x1 + 0.2*x3", "0.3 + 0.1*x2");
        let gamma: f64 = 9.0;
        let k9 = FieldSpec::parse(
            FieldDomain::HalfSphere,
            "9*(6 + 0.4*x1 + 0.2*x3)",
        )
        .unwrap();
        let h9 = FieldSpec::parse(FieldDomain::Boundary, "3*(0.3 + 0.1*x2)").unwrap();
        let _ = gamma;
        let a = find_critical_points(&k, &h, 128).unwrap();
        let b = find_critical_points(&k9, &h9, 128).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for ra in &a.records {
            let d = b
                .records
                .iter()
                .map(|rb| rb.q.distance(&ra.q))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-8, "critical set moved by {d}");
        }
    }

    #[test]
    fn homotopy_endpoints_and_invariants() {
        let (k, h) = fields("6 + 0.5*x3 - 0.4*x3*x4 + 0.1*x1", "0.4 + 0.15*x2");
        let search = find_critical_points(&k, &h, 128).unwrap();
        let records = &search.records;
        assert!(!records.is_empty());
        let m0 = build_interaction_matrix(records, &k, &h).unwrap();
        let det0 = determinant(&m0.entries);

        // t = 1: K_t = K on the boundary
        let step1 = homotopy_step(&k, &h, records, 1.0, 256).unwrap();
        for (r, kt) in records.iter().zip(&step1.kt_at_f) {
            assert!((kt - k.value(&r.q)).abs() < 1e-10 * k.value(&r.q));
        }
        // t = 0: K_0 = 24 pi^4 / phi^2
        let step0 = homotopy_step(&k, &h, records, 0.0, 256).unwrap();
        for (r, kt) in records.iter().zip(&step0.kt_at_f) {
            let phi_q = phi_value(k.value(&r.q), h.value(&r.q)).unwrap();
            let expect = 24.0 * std::f64::consts::PI.powi(4) / (phi_q * phi_q);
            assert!((kt - expect).abs() < 1e-10 * expect, "{kt} vs {expect}");
        }
        // phi = 2 pi^2 -> K_0 = 6
        let k0 = homotopy_kt_value(2.0 * std::f64::consts::PI.powi(2), 0.7, 0.0).unwrap();
        assert!((k0 - 6.0).abs() < 1e-12 * 6.0);

        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let step = homotopy_step(&k, &h, records, t, 256).unwrap();
            // phi_t = phi pointwise at the records
            for (r, kt) in records.iter().zip(&step.kt_at_f) {
                let phi_t = phi_value(*kt, t * h.value(&r.q)).unwrap();
                let phi_q = phi_value(k.value(&r.q), h.value(&r.q)).unwrap();
                assert!((phi_t - phi_q).abs() < 1e-8 * phi_q);
            }
            // det M_t / det M = prod (K/K_t)^{1/2}
            let dett = determinant(&step.m_t);
            let mut prod = 1.0;
            for (r, kt) in records.iter().zip(&step.kt_at_f) {
                prod *= (k.value(&r.q) / kt).sqrt();
            }
            assert!(
                (dett / det0 - prod).abs() < 1e-8 * prod.abs(),
                "t = {t}: det ratio {} vs {prod}",
                dett / det0
            );
            // rho sign preserved
            assert_eq!(step.rho_t.signum(), m0.rho.signum(), "t = {t}");
        }
    }
}

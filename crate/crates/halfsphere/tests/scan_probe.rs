use halfsphere::fields::{FieldDomain, FieldSpec};
use halfsphere::solver::*;

#[test]
fn probe_tau002_96() {
    let k = FieldSpec::parse(FieldDomain::HalfSphere, "6 + x3 - x3*x4").unwrap();
    let h = FieldSpec::constant(FieldDomain::Boundary, 0.0);
    let cfg = SolverConfig { nr: 96, nz: 96, max_newton: 40, ..Default::default() };
    match solve_subcritical(&k, &h, 0.02, &cfg, Strategy::MountainPass) {
        Ok(r) => println!("ok: iters {} res {:.3e} sup {:.4} energy {:.6}", r.iterations, r.residual_norm, r.sup_sphere, r.energy),
        Err(e) => println!("ERR {e}"),
    }
}

#[test]
fn probe_bounded_strong() {
    let t0 = std::time::Instant::now();
    let k = FieldSpec::parse(FieldDomain::HalfSphere, "6 + x3 + 5*x3*x4").unwrap();
    let h = FieldSpec::constant(FieldDomain::Boundary, 0.0);
    let q = halfsphere::geometry::SpherePoint::boundary([0.0, 0.0, 1.0]).unwrap();
    let cfg = SolverConfig { nr: 96, nz: 96, max_newton: 40, ..Default::default() };
    let fit = blowup_scan(&k, &h, &[0.2, 0.1, 0.05, 0.02], &cfg, &[q]).unwrap();
    println!("sups    {:?}", fit.sup_values);
    println!("energies {:?}", fit.energies);
    println!("levels  {:?}", fit.results.iter().map(|r| r.mp_level).collect::<Vec<_>>());
    println!("min phi = {}", halfsphere::energetics::phi_value(7.0, 0.0).unwrap());
    println!("warnings {:?}", fit.warnings);
    println!("elapsed {:?}", t0.elapsed());
}

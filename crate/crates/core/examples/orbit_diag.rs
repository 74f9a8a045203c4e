use ltcswarm::constants::*;
use ltcswarm::orbits::*;
use std::time::Instant;
fn check(model: Model, label: &str) {
    let p = ModelParams::default();
    let res = Resonance::parse(label).unwrap();
    let t0 = Instant::now();
    match build_orbit(model, &p, res, 4.0, 1e-12) {
        Ok(orbit) => {
            println!("=== {model} {label}: built in {:.2?}", t0.elapsed());
            println!("  period = {:.6} nd ({:.4} days/rev, revs={})", orbit.period, p.nd_to_days(orbit.rev_period()), orbit.revs);
            println!("  residual = {:.3e}, periodicity defect = {:.3e}", orbit.residual, orbit.periodicity_defect());
            let mut rmin = f64::MAX;
            for i in 0..=8000 { let t = orbit.period * i as f64/8000.0; rmin = rmin.min(orbit.dense.r_moon(t)); }
            println!("  perilune = {:.0} km, apolune anchor at t={:.4}", rmin*p.length_unit_km, orbit.t0_anchor);
            match oscillatory_modes(&orbit.monodromy, 1e-4, orbit.t0_anchor) {
                Ok(modes) => {
                    println!("  {} oscillatory mode(s)", modes.len());
                    for md in &modes { println!("    lambda = {:.4}{:+.4}i |l|={:.6} rho = {:.2} deg", md.eigenvalue.re, md.eigenvalue.im, md.eigenvalue.norm(), md.rotation_number.to_degrees()); }
                }
                Err(e) => println!("  mode extraction failed: {e}"),
            }
        }
        Err(e) => println!("=== {model} {label}: FAILED after {:.2?}: {e}", t0.elapsed()),
    }
}
fn main() {
    let which: Vec<String> = std::env::args().skip(1).collect();
    for w in &which {
        match w.as_str() {
            "cr" => check(Model::Cr3bp, "9:2-synodic"),
            "er" => check(Model::Er3bp, "4:1-sidereal"),
            "b31" => check(Model::Bcr4bp, "3:1-synodic"),
            "b92" => check(Model::Bcr4bp, "9:2-synodic"),
            _ => eprintln!("unknown {w}"),
        }
    }
}

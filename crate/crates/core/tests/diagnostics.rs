use mongeflow::deformation_flow::{run_to, FlowConfig, Grid};
use mongeflow::diagnostics::*;
use mongeflow::domain_profile::ProfileRho;
use mongeflow::jet::C64;
use mongeflow::polar_geometry::{AmbientPoint, ChartId, PolarPoint};
use mongeflow::special_fields::Direction;
use mongeflow::transport::{PhiPath, Transport, TransportOptions};
use proptest::prelude::*;
use std::convert::Infallible;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn pt(a: f64, b: f64, p: f64, q: f64) -> AmbientPoint {
    AmbientPoint::new(vec![c(a, b), c(p, q)])
}

fn exact(f: impl Fn(&AmbientPoint) -> f64) -> impl Fn(&AmbientPoint) -> Result<f64, Infallible> {
    move |x| Ok(f(x))
}

fn transport(rho: &ProfileRho, v: [f64; 4]) -> Transport {
    let v0 = Direction::new(vec![c(v[0], v[1]), c(v[2], v[3])]).unwrap();
    let grid = Grid::new(17, 9, 16, 1.5, 0.1).unwrap();
    let cfg = FlowConfig { grid, checkpoint_dt: Some(0.0), ..FlowConfig::default() };
    let path = PhiPath::from_state(&run_to(1.0, &v0, rho, &cfg, None).unwrap().state).unwrap();
    Transport::new(path, rho, &v0, 1.0, TransportOptions { tol: 1e-11, ..TransportOptions::default() }).unwrap().with_pole().unwrap()
}

fn lie_probes(offset: f64) -> Vec<AmbientPoint> {
    (0..10)
        .map(|k| {
            let a = k as f64 * 0.7 + offset;
            AmbientPoint::new(vec![C64::from_polar(0.3 + 0.02 * k as f64, a), C64::from_polar(0.4, 1.3 * a)])
        })
        .collect()
}

#[test]
fn exact_ball_green_has_small_residual() {
    let u = exact(|x| x.norm_sqr().ln());
    let x = pt(0.3, 0.0, 0.2, 0.0);
    let (r1, r2) = (ma_residual(&u, &x, 1e-2).unwrap(), ma_residual(&u, &x, 5e-3).unwrap());
    // pure second-order truncation: the Richardson limit vanishes
    assert!((r2 / r1 - 0.25).abs() < 0.01, "{r1} {r2}");
    assert!((4.0 * r2 - r1).abs() / 3.0 <= 1e-4);
}

#[test]
fn squared_norm_is_a_negative_control() {
    let u = exact(|x| x.norm_sqr());
    let r = ma_residual(&u, &pt(0.3, -0.1, 0.2, 0.4), 1e-2).unwrap();
    assert!((r - 1.0).abs() < 1e-8);
    assert!((psh_margin(&u, &pt(0.1, 0.2, -0.3, 0.0), 1e-2).unwrap() - 1.0).abs() < 1e-8);
    let neg = exact(|x| -x.norm_sqr());
    assert!((psh_margin(&neg, &pt(0.1, 0.2, -0.3, 0.0), 1e-2).unwrap() + 1.0).abs() < 1e-8);
}

#[test]
fn residual_converges_at_second_order() {
    let a = [c(0.3, 0.0), c(0.0, 0.1)];
    let u = exact(move |x| ball_oracle_green(&a, &x.z));
    for x in [pt(-0.2, 0.1, 0.3, 0.2), pt(0.1, -0.5, 0.0, 0.3)] {
        let r1 = ma_residual(&u, &x, 2e-2).unwrap();
        let r2 = ma_residual(&u, &x, 1e-2).unwrap();
        let ratio = r2 / r1;
        assert!((0.15..=0.45).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn complex_hessian_is_hermitian() {
    let u = exact(|x| (x.z[0] * x.z[1].conj()).re + x.z[0].norm_sqr().powi(2));
    let p = hessian_probe(&u, &pt(0.2, 0.3, -0.4, 0.1), 1e-3).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((p.complex[i][j] - p.complex[j][i].conj()).norm() < 1e-14);
        }
    }
    // d^2/dz1 dzbar2 of Re(z1 zbar2) is 1/2
    assert!((p.complex[0][1] - c(0.5, 0.0)).norm() < 1e-6);
}

#[test]
fn mobius_oracle_values() {
    let z = [c(0.3, 0.1), c(-0.2, 0.5)];
    let zero = [c(0.0, 0.0), c(0.0, 0.0)];
    let n2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
    assert!((ball_oracle_green(&zero, &z) - n2.ln()).abs() < 1e-15);
    let a = [c(0.5, 0.0), c(0.0, 0.0)];
    assert!((ball_oracle_green(&a, &zero) - 0.25f64.ln()).abs() < 1e-15);
    assert_eq!(ball_oracle_green(&a, &a), f64::NEG_INFINITY);
    for k in 0..20 {
        let t = k as f64 * 0.31;
        let b = [C64::from_polar(0.6, t), C64::from_polar(0.8, 2.0 * t)];
        let a = [c(0.2, -0.3), c(0.1, 0.4)];
        assert!(ball_oracle_green(&a, &b).abs() < 1e-14);
    }
}

#[test]
fn identity_suite_passes_for_both_presets() {
    for rho in [ProfileRho::ball(2), ProfileRho::perturbed(0.1), ProfileRho::perturbed(0.2)] {
        let r = identity_suite(&rho, 3, 200).unwrap();
        assert_eq!(r.checks.len(), 4);
        assert!(r.all_pass(), "{}", r.to_json());
        for ch in &r.checks {
            if ch.exceeds {
                assert!(ch.residual > 1e-2);
            } else {
                assert!(ch.residual <= 1e-8);
            }
        }
    }
}

#[test]
fn identity_suite_is_reproducible() {
    let rho = ProfileRho::perturbed(0.1);
    assert_eq!(identity_suite(&rho, 9, 50).unwrap(), identity_suite(&rho, 9, 50).unwrap());
}

#[test]
fn pairing_holds_under_deformation() {
    let rho = ProfileRho::perturbed(0.1);
    let p = PolarPoint { chart: ChartId { axis: 2 }, w: vec![c(0.3, -0.2)], zeta: c(0.5, 0.4) };
    for phi in [c(0.0, 0.0), c(0.3, 0.2), c(-0.5, 0.6)] {
        assert!(pairing_residual(&rho, &p, phi).unwrap() <= 1e-10);
    }
}

#[test]
fn transported_ball_green_is_psh_and_solves_the_equation() {
    let tr = transport(&ProfileRho::ball(2), [0.5, 0.0, 0.0, 0.0]);
    let tau = |x: &AmbientPoint| tr.exhaustion(x).map(|s| s.tau);
    let green = |x: &AmbientPoint| tr.green(x);
    for k in 0..100 {
        let a = k as f64 * 2.4;
        let r = 0.1 + 0.8 * (k as f64 / 100.0);
        let x = pt(r * a.cos() * 0.8, r * a.sin() * 0.8, r * 0.6 * (0.7 * a).cos(), r * 0.6 * (0.7 * a).sin());
        assert!(psh_margin(&tau, &x, 1e-2).unwrap() > 0.0, "k = {k}");
        if k % 10 == 0 && (x.z[0] - 0.5).norm() + x.z[1].norm() > 0.3 {
            assert!(ma_residual(&green, &x, 2e-3).unwrap() < 1e-3);
        }
    }
}

#[test]
fn ball_structures_satisfy_the_lie_relation() {
    let tr = transport(&ProfileRho::ball(2), [0.5, 0.0, 0.0, 0.0]);
    let r = lie_derivative_check(&tr, 0.5, 1e-2, &lie_probes(0.0)).unwrap();
    assert!(r <= 1e-4, "{r}");
    let j = structure_ambient(&tr, 0.5, &pt(0.3, 0.1, 0.2, -0.4)).unwrap();
    for a in 0..4 {
        for b in 0..4 {
            let s: f64 = (0..4).map(|k| j[a][k] * j[k][b]).sum();
            assert!((s + if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }
    assert!(lie_derivative_check(&tr, 0.995, 1e-2, &lie_probes(0.0)).is_err());
}

#[test]
fn ellipsoid_structures_satisfy_the_lie_relation() {
    let tr = transport(&ProfileRho::ellipsoid(1.5).unwrap(), [0.4, 0.0, 0.0, 0.2]);
    let r = lie_derivative_check(&tr, 0.5, 1e-2, &lie_probes(0.0)).unwrap();
    assert!(r <= 1e-4, "{r}");
}

#[test]
fn perturbed_lie_residual_regression() {
    // the defect is set by the interior reading of the deformation, not by dt
    let tr = transport(&ProfileRho::perturbed(0.1), [0.5, 0.0, 0.0, 0.0]);
    let a = lie_derivative_check(&tr, 0.5, 1e-2, &lie_probes(0.0)).unwrap();
    let b = lie_derivative_check(&tr, 0.5, 5e-3, &lie_probes(0.0)).unwrap();
    let other = lie_derivative_check(&tr, 0.5, 1e-2, &lie_probes(0.35)).unwrap();
    // frozen on the 17x9x16 lattice
    assert!((a - 2.153e-2).abs() < 2e-4, "{a}");
    assert!((a / b - 1.0).abs() < 1e-3);
    assert!(a / other < 10.0 && other / a < 10.0);
}

proptest! {
    #[test]
    fn psh_margin_of_pluriharmonic_shift(a in prop::array::uniform4(-0.5f64..0.5), k in -2.0f64..2.0) {
        // adding Re(k z1 z2) changes no complex second derivative
        let x = pt(a[0], a[1], a[2], a[3]);
        let u = exact(|y| y.norm_sqr());
        let v = exact(move |y| y.norm_sqr() + k * (y.z[0] * y.z[1]).re);
        let m1 = psh_margin(&u, &x, 1e-3).unwrap();
        let m2 = psh_margin(&v, &x, 1e-3).unwrap();
        prop_assert!((m1 - m2).abs() <= 1e-6);
    }
}

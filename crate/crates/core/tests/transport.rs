use mongeflow::deformation_flow::{run_to, FlowConfig, Grid};
use mongeflow::diagnostics::ball_oracle_green;
use mongeflow::domain_profile::{straighten, unstraighten, ProfileRho};
use mongeflow::jet::C64;
use mongeflow::polar_geometry::AmbientPoint;
use mongeflow::special_fields::{hdot, mobius_map, Direction};
use mongeflow::transport::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn pt(a: f64, b: f64, p: f64, q: f64) -> AmbientPoint {
    AmbientPoint::new(vec![c(a, b), c(p, q)])
}

fn transport(rho: &ProfileRho, v: [f64; 4], s: f64) -> Transport {
    let v0 = Direction::new(vec![c(v[0], v[1]), c(v[2], v[3])]).unwrap();
    let grid = Grid::new(17, 9, 16, 1.5, 0.1).unwrap();
    let cfg = FlowConfig { grid, checkpoint_dt: Some(0.0), ..FlowConfig::default() };
    let path = if s == 0.0 {
        PhiPath::zero(grid)
    } else {
        PhiPath::from_state(&run_to(s, &v0, rho, &cfg, None).unwrap().state).unwrap()
    };
    let opts = TransportOptions { tol: 1e-10, ..TransportOptions::default() };
    Transport::new(path, rho, &v0, s, opts).unwrap().with_pole().unwrap()
}

fn probes(count: usize, radius: f64) -> Vec<AmbientPoint> {
    (0..count)
        .map(|k| {
            let a = k as f64 * 2.399963;
            let r = radius * ((k as f64 + 0.5) / count as f64).sqrt();
            let b = (1.0 - 2.0 * (k as f64 + 0.5) / count as f64).acos() * 0.5;
            pt(r * b.cos() * a.cos(), r * b.cos() * a.sin(), r * b.sin() * (1.3 * a).cos(), r * b.sin() * (1.3 * a).sin())
        })
        .collect()
}

/// `|dT_a(u)|` by central differences of the automorphism itself.
fn ball_kobayashi(a: &[C64], u: &[C64]) -> f64 {
    let h = 1e-6;
    let zp: Vec<C64> = a.iter().zip(u).map(|(x, d)| x + h * d).collect();
    let zm: Vec<C64> = a.iter().zip(u).map(|(x, d)| x - h * d).collect();
    let d: Vec<C64> = mobius_map(a, &zp).iter().zip(mobius_map(a, &zm)).map(|(p, m)| (p - m) / (2.0 * h)).collect();
    hdot(&d, &d).re.sqrt()
}

#[test]
fn trivial_segment_is_the_identity() {
    for rho in [ProfileRho::ball(2), ProfileRho::perturbed(0.1)] {
        let tr = transport(&rho, [0.5, 0.0, 0.0, 0.0], 0.0);
        for x in probes(50, 0.99) {
            let (y, _) = tr.flow_point(&x).unwrap();
            assert_eq!(y, x);
            if x.norm() > 0.0 {
                assert!((tr.green(&x).unwrap() - x.norm_sqr().ln()).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn ball_pole_and_center_value() {
    let tr = transport(&ProfileRho::ball(2), [0.5, 0.0, 0.0, 0.0], 1.0);
    let pole = tr.pole().unwrap();
    assert!((pole.z[0] - c(0.5, 0.0)).norm() <= 1e-6 && pole.z[1].norm() <= 1e-6, "{pole:?}");
    let (y, _) = tr.flow_point(&pt(0.5, 0.0, 0.0, 0.0)).unwrap();
    assert!(y.norm() <= 1e-6);
    let s = tr.exhaustion(&pt(0.0, 0.0, 0.0, 0.0)).unwrap();
    assert!((s.tau - 0.25).abs() <= 1e-6);
    assert!((s.green - 0.25f64.ln()).abs() <= 1e-4);
    let at = tr.exhaustion(&pole).unwrap();
    assert_eq!((at.tau, at.flag), (0.0, SampleFlag::Pole));
}

#[test]
fn boundary_is_invariant() {
    for rho in [ProfileRho::ball(2), ProfileRho::perturbed(0.1)] {
        let tr = transport(&rho, [0.3, 0.2, -0.2, 0.1], 1.0);
        for x in probes(40, 1.0) {
            let n = x.norm();
            let x = AmbientPoint::new(x.z.iter().map(|z| z / n).collect());
            let (y, _) = tr.flow_point(&x).unwrap();
            assert!((y.norm() - 1.0).abs() <= 1e-7, "{}", y.norm());
            let s = tr.exhaustion(&x).unwrap();
            assert!((s.tau - 1.0).abs() <= 1e-6);
            assert!((s.tau - s.endpoint.norm_sqr()).abs() <= 1e-12);
            assert!((s.green - s.tau.ln()).abs() <= 1e-12);
        }
    }
}

#[test]
fn ball_green_matches_the_mobius_oracle() {
    let tr = transport(&ProfileRho::ball(2), [0.5, 0.0, 0.0, 0.0], 1.0);
    let a = [c(0.5, 0.0), c(0.0, 0.0)];
    let samples = green_grid(&tr, &probes(200, 0.98), false).unwrap();
    for s in &samples {
        assert_eq!(s.flag, SampleFlag::Ok);
        assert!((s.green - ball_oracle_green(&a, &s.query.z)).abs() <= 1e-3);
    }
}

#[test]
fn ball_green_grows_along_rays_from_the_pole() {
    let tr = transport(&ProfileRho::ball(2), [0.5, 0.0, 0.0, 0.0], 1.0);
    let pole = tr.pole().unwrap();
    for d in [[1.0, 0.0, 0.0, 0.0], [-0.6, 0.0, 0.0, 0.8], [0.0, 0.6, 0.8, 0.0]] {
        let mut last = f64::NEG_INFINITY;
        for k in 1..12 {
            let r = 0.04 * k as f64;
            let x = AmbientPoint::new(vec![pole.z[0] + r * c(d[0], d[1]), pole.z[1] + r * c(d[2], d[3])]);
            if x.norm() >= 1.0 {
                break;
            }
            let g = tr.green(&x).unwrap();
            assert!(g > last);
            last = g;
        }
    }
}

#[test]
fn ellipsoid_green_matches_the_linear_oracle() {
    let lambda = 1.6;
    let rho = ProfileRho::ellipsoid(lambda).unwrap();
    let tr = transport(&rho, [0.4, 0.0, 0.0, 0.2], 1.0);
    let p = unstraighten(&rho, &tr.pole().unwrap());
    let l = |z: &[C64]| vec![z[0], lambda * z[1]];
    for x in probes(60, 0.97) {
        let x = AmbientPoint::new(l(&x.z).iter().enumerate().map(|(i, z)| if i == 1 { z / (lambda * lambda) } else { *z }).collect());
        if straighten(&rho, &x).norm() >= 0.99 || (x.z[0] - p.z[0]).norm() + (x.z[1] - p.z[1]).norm() < 1e-2 {
            continue;
        }
        let want = ball_oracle_green(&l(&p.z), &l(&x.z));
        assert!((tr.green_domain(&x).unwrap() - want).abs() <= 1e-6);
    }
}

#[test]
fn batches_flag_excluded_and_failed_queries() {
    let tr = transport(&ProfileRho::ball(2), [0.5, 0.0, 0.0, 0.0], 1.0);
    let pole = tr.pole().unwrap();
    let near = AmbientPoint::new(vec![pole.z[0] + 1e-4, pole.z[1]]);
    let out = green_grid(&tr, &[near, pt(0.1, 0.0, 0.0, 0.0), AmbientPoint::new(vec![c(0.1, 0.0)])], false).unwrap();
    assert_eq!(out[0].flag, SampleFlag::Excluded);
    assert_eq!(out[1].flag, SampleFlag::Ok);
    assert!(matches!(out[2].flag, SampleFlag::Failed(_)));
    assert!(out[0].green.is_nan());
    assert_eq!(ExhaustionSample::csv_header().len(), out[1].csv_row().len());
}

#[test]
fn kobayashi_at_the_origin_is_the_norm() {
    for rho in [ProfileRho::ball(2), ProfileRho::perturbed(0.1)] {
        let tr = transport(&rho, [0.5, 0.0, 0.0, 0.0], 0.0);
        for u in [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.3, -0.2), c(0.5, 0.4)]] {
            let k = kobayashi_at_center(&tr, &u).unwrap();
            let n = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
            assert!((k - n).abs() <= 1e-4 * n, "{k} vs {n}");
            for lam in [c(2.0, 0.0), c(0.0, 1.0), c(-3.0, 0.0)] {
                let ku = kobayashi_at_center(&tr, &[lam * u[0], lam * u[1]]).unwrap();
                assert!((ku - lam.norm() * k).abs() <= 1e-6 * ku);
            }
        }
    }
}

#[test]
fn kobayashi_at_a_shifted_center_matches_the_ball_metric() {
    let tr = transport(&ProfileRho::ball(2), [0.5, 0.0, 0.0, 0.0], 1.0);
    let a = [c(0.5, 0.0), c(0.0, 0.0)];
    for u in [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)], [c(0.3, -0.2), c(0.5, 0.4)]] {
        let k = kobayashi_at_center(&tr, &u).unwrap();
        let want = ball_kobayashi(&a, &u);
        assert!((k - want).abs() <= 1e-2 * want, "{k} vs {want}");
        let k2 = kobayashi_at_center(&tr, &[2.0 * u[0], 2.0 * u[1]]).unwrap();
        assert!((k2 - 2.0 * k).abs() <= 1e-6 * k2);
    }
    assert!(kobayashi_at_center(&tr, &[c(0.0, 0.0), c(0.0, 0.0)]).is_err());
}

#[test]
fn unfinished_runs_cannot_be_transported() {
    let grid = Grid::new(17, 9, 16, 1.5, 0.1).unwrap();
    let mut state = mongeflow::deformation_flow::FlowState::initial(grid, None);
    state.t = 0.5;
    assert!(matches!(PhiPath::from_state(&state), Err(TransportError::Config(_))));
    let v0 = Direction::new(vec![c(0.9, 0.0), c(0.0, 0.0)]).unwrap();
    assert!(Transport::new(PhiPath::zero(grid), &ProfileRho::ball(2), &v0, 1.2, TransportOptions::default()).is_err());
}

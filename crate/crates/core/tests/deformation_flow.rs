use mongeflow::deformation_flow::*;
use mongeflow::domain_profile::ProfileRho;
use mongeflow::jet::C64;
use mongeflow::special_fields::Direction;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn dir(v: [f64; 4]) -> Direction {
    Direction::new(vec![c(v[0], v[1]), c(v[2], v[3])]).unwrap()
}

fn small() -> Grid {
    Grid::new(17, 9, 16, 1.5, 0.1).unwrap()
}

fn config(grid: Grid) -> FlowConfig {
    FlowConfig { grid, checkpoint_dt: None, ..FlowConfig::default() }
}

fn sup(p: &Phi) -> f64 {
    p.iter().flat_map(|v| v.iter().map(|x| x.norm())).fold(0.0, f64::max)
}

fn diff(a: &Phi, b: &Phi) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).norm())).fold(0.0, f64::max)
}

fn bump(grid: &Grid, eps: f64) -> Phi {
    let mut out = [vec![c(0.0, 0.0); grid.len()], vec![c(0.0, 0.0); grid.len()]];
    for v in out.iter_mut() {
        for i in 0..grid.nw {
            for j in 0..grid.nw {
                let w = grid.w(i, j);
                for k in 0..grid.nr {
                    for l in 0..grid.nth {
                        let zeta = grid.zeta(k, l);
                        v[grid.idx(i, j, k, l)] = eps * (-w.norm_sqr()).exp() * (c(1.0, 0.5) + 0.3 * zeta);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn ball_is_stationary() {
    let rho = ProfileRho::ball(2);
    let grid = small();
    for v in [[0.5, 0.0, 0.0, 0.0], [0.2, -0.3, 0.4, 0.1]] {
        let flow = DeformationFlow::new(&rho, &dir(v), 1.0, grid, 1e-3).unwrap();
        let zero = FlowState::initial(grid, None).phi;
        for t in [0.0, 0.5, 1.0] {
            assert!(sup(&flow.rhs_full(&zero, t).unwrap()) <= 1e-6);
        }
        let out = run_to(1.0, &dir(v), &rho, &config(grid), None).unwrap();
        assert_eq!(out.report.terminating, Terminating::ReachedOne);
        assert!(out.state.sup_norm() <= 1e-5);
        assert!(out.report.margin_curve.iter().all(|p| p.1 >= 0.999));
    }
}

#[test]
fn rhs_is_smooth_in_the_deformation() {
    let rho = ProfileRho::perturbed(0.1);
    let grid = small();
    let flow = DeformationFlow::new(&rho, &dir([0.4, 0.1, -0.2, 0.3]), 1.0, grid, 1e-3).unwrap();
    let zero = FlowState::initial(grid, None).phi;
    let r0 = flow.rhs_full(&zero, 0.3).unwrap();
    let delta = |eps: f64| -> Phi {
        let r = flow.rhs_full(&bump(&grid, eps), 0.3).unwrap();
        [r[0].iter().zip(&r0[0]).map(|(a, b)| a - b).collect(), r[1].iter().zip(&r0[1]).map(|(a, b)| a - b).collect()]
    };
    // the second-order remainder D(eps) - 2 D(eps/2) scales like eps^2
    let rem = |eps: f64| {
        let (a, b) = (delta(eps), delta(0.5 * eps));
        a.iter().zip(&b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - 2.0 * q).norm())).fold(0.0, f64::max)
    };
    let (r1, r2) = (rem(1e-3), rem(5e-4));
    assert!(r1 > 0.0);
    let ratio = r1 / r2;
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn swapped_directions_give_mirrored_runs() {
    let rho = ProfileRho::perturbed(0.1);
    let a = run_to(1.0, &dir([0.3, 0.0, 0.0, 0.2]), &rho, &config(small()), None).unwrap();
    let b = run_to(1.0, &dir([0.0, 0.2, 0.3, 0.0]), &rho, &config(small()), None).unwrap();
    let (ma, mb) = (a.state.monitors, b.state.monitors);
    assert!((ma.phi_max - mb.phi_max).abs() <= 1e-12);
    assert!((ma.c_res - mb.c_res).abs() <= 1e-12);
    assert!((ma.degeneracy_margin - mb.degeneracy_margin).abs() <= 1e-12);
}

#[test]
fn rk4_converges_at_fourth_order() {
    let rho = ProfileRho::perturbed(0.1);
    let v = dir([0.5, 0.0, 0.0, 0.0]);
    let base = run_to(1.0, &v, &rho, &config(small()), None).unwrap();
    let runs: Vec<Phi> = [1.0, 0.5, 0.25]
        .iter()
        .map(|k| run_to(1.0, &v, &rho, &FlowConfig { dt: Some(base.dt * k), ..config(small()) }, None).unwrap().state.phi)
        .collect();
    let ratio = diff(&runs[0], &runs[1]) / diff(&runs[1], &runs[2]);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn filter_is_idempotent_on_band_limited_data() {
    let s = Spectral::new(32);
    let line: Vec<C64> = (0..32)
        .map(|l| {
            let th = l as f64 * std::f64::consts::TAU / 32.0;
            c(1.0, 0.0) + C64::from_polar(0.3, 2.0 * th) + C64::from_polar(0.1, -5.0 * th)
        })
        .collect();
    let mut once = line.clone();
    s.filter(&mut once);
    assert!(once.iter().zip(&line).all(|(a, b)| (a - b).norm() < 1e-12));
    let mut twice = once.clone();
    s.filter(&mut twice);
    assert!(twice.iter().zip(&once).all(|(a, b)| (a - b).norm() < 1e-14));
}

#[test]
fn ramp_fixture_reports_its_root() {
    let grid = small();
    let fixture = RampFixture { grid, t_star: 0.6, eps_deg: 1e-3 };
    // the fixture grows from zero, so the doubling test needs an absolute floor above one step
    let cfg = FlowConfig { event_tol: 1e-4, unstable_floor: 1.0, ..config(grid) };
    let out = integrate(&fixture, &cfg, None).unwrap();
    assert_eq!(out.report.terminating, Terminating::Degenerate);
    assert!((0.599..=0.601).contains(&out.report.s_o), "s_o = {}", out.report.s_o);
    assert!(out.report.margin_curve.last().unwrap().1 <= cfg.eps_deg);
    assert!(out.report.margin_curve.windows(2).all(|w| w[1].0 >= w[0].0));
}

#[test]
fn degenerate_initial_data_is_refused() {
    let grid = small();
    let rho = ProfileRho::ball(2);
    let phi: Phi = [vec![c(1.0, 0.0); grid.len()], vec![c(0.0, 0.0); grid.len()]];
    let r = run_to(1.0, &dir([0.5, 0.0, 0.0, 0.0]), &rho, &config(grid), Some(phi));
    assert!(matches!(r, Err(FlowError::Degenerate { .. })));
}

#[test]
fn margin_examples() {
    let grid = small();
    let ch = CHARTS[0];
    assert_eq!(degeneracy_margin(&DeformationField::zeros(ch, grid)), 1.0);
    let m = degeneracy_margin(&DeformationField::constant(ch, grid, c(0.6, 0.0)));
    assert!((m - 0.64).abs() < 1e-15);
}

#[test]
fn ball_frontier_is_absent() {
    let grid = small();
    for rho in [ProfileRho::ball(2), ProfileRho::perturbed(0.0)] {
        let r = find_frontier(&dir([0.0, 0.3, 0.8, 0.0]), &rho, &config(grid)).unwrap();
        assert_eq!(r.s_o, 1.0);
        assert_eq!(r.terminating, Terminating::ReachedOne);
    }
}

#[test]
fn perturbed_frontier_regression() {
    // frozen from the 17x9x16 lattice: no event up to |v| = 0.95
    let rho = ProfileRho::perturbed(0.2);
    let r = find_frontier(&dir([0.0, 0.0, 0.95, 0.0]), &rho, &config(small())).unwrap();
    assert_eq!(r.s_o, 1.0);
    let last = r.margin_curve.last().unwrap().1;
    assert!((last - 0.981152434).abs() < 1e-6, "{last}");
    let tail = &r.margin_curve[r.margin_curve.len() - 10..];
    assert!(tail.windows(2).all(|w| w[1].1 <= w[0].1));
}

#[test]
fn condition_residuals_vanish_without_deformation() {
    let r = condition_residuals(&FlowState::initial(small(), None));
    assert_eq!((r.c_res, r.d_res_f0, r.d_res_fgamma), (0.0, 0.0, 0.0));
    assert_eq!(r.b_margin, 1.0);
}

#[test]
fn snapshots_store_the_boundary_ring() {
    let rho = ProfileRho::perturbed(0.1);
    let cfg = FlowConfig { checkpoint_dt: Some(0.25), ..config(small()) };
    let out = run_to(1.0, &dir([0.5, 0.0, 0.0, 0.0]), &rho, &cfg, None).unwrap();
    let h = &out.state.history;
    assert_eq!(h.first().unwrap().t, 0.0);
    assert_eq!(h.last().unwrap().t, 1.0);
    assert!(h.windows(2).all(|w| w[1].t - w[0].t <= 0.25 + 1e-9));
    let full = h.last().unwrap().expand(&out.state.grid);
    assert!(diff(&full, &out.state.phi) <= 1e-12);
}

#[test]
fn checkpoints_round_trip_and_detect_corruption() {
    let dir_ = tempfile::tempdir().unwrap();
    let path = dir_.path().join("ck.bin");
    let rho = ProfileRho::perturbed(0.1);
    let out = run_to(1.0, &dir([0.5, 0.0, 0.0, 0.0]), &rho, &config(small()), None).unwrap();
    let field = out.state.field(0);
    write_checkpoint(&path, &field, 1.0, Some("abc")).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back.field, field);
    assert_eq!(back.t, 1.0);
    assert_eq!(back.config_hash.as_deref(), Some("abc"));
    let mut bytes = std::fs::read(&path).unwrap();
    let k = bytes.len() - 5;
    bytes[k] ^= 0x5a;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(FlowError::Checkpoint { .. })));
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(FlowError::Checkpoint { .. })));
}

proptest! {
    #[test]
    fn margin_ignores_global_phase(re in -0.9f64..0.9, im in -0.4f64..0.4, th in 0.0f64..6.3) {
        let grid = small();
        let a = degeneracy_margin(&DeformationField::constant(CHARTS[1], grid, c(re, im)));
        let b = degeneracy_margin(&DeformationField::constant(CHARTS[1], grid, C64::from_polar(1.0, th) * c(re, im)));
        prop_assert!((a - b).abs() <= 1e-14);
        prop_assert!((a - (1.0 - re * re - im * im)).abs() <= 1e-14);
    }

    #[test]
    fn filter_is_a_projection(data in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32)) {
        let s = Spectral::new(32);
        let mut once: Vec<C64> = data.iter().map(|&(a, b)| c(a, b)).collect();
        s.filter(&mut once);
        let mut twice = once.clone();
        s.filter(&mut twice);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }
}

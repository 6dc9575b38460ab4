use std::f64::consts::PI;
use std::sync::Arc;

use kslab::closed;
use kslab::diagnostics::poisson_round_trip;
use kslab::{GridError, GridSpec, Normalization, Parity, RadialField, RadialGrid};
use proptest::prelude::*;

fn reference() -> Arc<RadialGrid> {
    RadialGrid::new(GridSpec::default()).unwrap()
}

fn sup_on(grid: &RadialGrid, a: &[f64], f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    grid.nodes()
        .iter()
        .zip(a)
        .filter(|(r, _)| **r >= lo && **r <= hi)
        .map(|(r, v)| (v - f(*r)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn nodes_start_at_zero_and_increase() {
    let g = reference();
    assert_eq!(g.nodes()[0], 0.0);
    assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    assert!((g.r_max() - 1e4).abs() < 1e-9);
    // at least 12 nodes per decade beyond the uniform zone
    let count = g.nodes().iter().filter(|r| **r >= 100.0 && **r < 1000.0).count();
    assert!(count >= 12, "{count}");
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = GridSpec { h0: -1.0, order: 3, ..GridSpec::default() };
    let err = RadialGrid::new(bad).unwrap_err().to_string();
    assert!(err.contains("h0") && err.contains("order"), "{err}");
    let few = RadialGrid::from_nodes(vec![0.0, 1.0, 2.0], GridSpec::default()).unwrap_err();
    assert!(matches!(few, GridError::TooCoarse { .. }));
    let shifted = RadialGrid::from_nodes((1..20).map(|i| i as f64).collect(), GridSpec::default()).unwrap_err();
    assert!(matches!(shifted, GridError::InvalidSpec(_)));
}

#[test]
fn derivative_of_square_is_exact() {
    let g = reference();
    let f = RadialField::from_fn(&g, Parity::Even, |r| r * r);
    let d = f.derivative(1).unwrap();
    assert_eq!(d.parity, Parity::Odd);
    assert!(sup_on(&g, &d.values, |r| 2.0 * r, 0.0, 1e4) < 1e-6);
    let d2 = f.derivative(2).unwrap();
    assert!(sup_on(&g, &d2.values, |_| 2.0, 0.0, 1e4) < 1e-8);
}

#[test]
fn even_field_has_zero_slope_at_origin() {
    let g = reference();
    let d = RadialField::from_fn(&g, Parity::Even, closed::q).derivative(1).unwrap();
    assert!(d.values[0].abs() < 1e-12);
    let e = sup_on(&g, &d.values, closed::dq, 0.0, 1e4);
    assert!(e < 1e-6, "{e}");
}

#[test]
fn third_derivative_of_quartic() {
    let g = reference();
    let f = RadialField::from_fn(&g, Parity::Even, |r| r.powi(4));
    let d3 = f.derivative(3).unwrap();
    let e = sup_on(&g, &d3.values, |r| 24.0 * r, 0.0, 10.0);
    assert!(e < 1e-5, "{e}");
}

#[test]
fn psi1_derivative_converges_at_stencil_order() {
    // closed form: psi1'/r = 8(1+r^2-(r^2-1) log r)/(1+r^2)^3
    let mut errs = Vec::new();
    for h0 in [0.1, 0.05, 0.025] {
        let g = RadialGrid::new(GridSpec { h0, r_max: 100.0, ..GridSpec::default() }).unwrap();
        let d = RadialField::from_fn(&g, Parity::Even, closed::psi1).derivative(1).unwrap();
        errs.push(sup_on(&g, &d.values, |r| r * closed::dpsi1_over_r(r), 1.0, 8.0));
    }
    let rates: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    assert!(rates.iter().all(|p| *p > 5.0), "errors {errs:?} rates {rates:?}");
}

#[test]
fn laplacian_identities() {
    let g = reference();
    let phi = RadialField::from_fn(&g, Parity::Even, closed::phi_q);
    let lap = phi.laplacian().unwrap();
    assert!(sup_on(&g, &lap.values, closed::q, 0.0, 1e4) < 1e-6);
    let c = RadialField::from_fn(&g, Parity::Even, |_| 3.5).laplacian().unwrap();
    assert!(c.values.iter().all(|v| v.abs() < 1e-9));
    let sq = RadialField::from_fn(&g, Parity::Even, |r| r * r).laplacian().unwrap();
    assert!(sup_on(&g, &sq.values, |_| 4.0, 0.0, 1e4) < 1e-7);
    let odd = RadialField::from_fn(&g, Parity::Odd, |r| r);
    assert!(matches!(odd.laplacian(), Err(GridError::ParityMismatch(_))));
}

#[test]
fn integrals_of_ground_state() {
    let g = reference();
    let q = RadialField::from_fn(&g, Parity::Even, closed::q);
    // tail beyond r_max is 8 pi / (1 + R^2)
    let exact = 8.0 * PI * (1.0 - 1.0 / (1.0 + 1e8));
    assert!((q.integrate() - exact).abs() / exact < 1e-8);
    assert!((q.integrate() - 8.0 * PI).abs() / (8.0 * PI) < 1e-6);
    let lq = RadialField::from_fn(&g, Parity::Even, closed::lambda_q);
    assert!(lq.integrate().abs() < 1e-6, "{}", lq.integrate());
    // a step is integrated at first order only
    let mut errs = Vec::new();
    for h0 in [0.1, 0.05, 0.025] {
        let g = RadialGrid::new(GridSpec { h0, r_max: 100.0, ..GridSpec::default() }).unwrap();
        let disk = RadialField::from_fn(&g, Parity::Even, |r| if r <= 1.0 { 1.0 } else { 0.0 });
        errs.push((disk.integrate() - PI).abs());
    }
    assert!(errs[2] < 0.1 && errs[0] / errs[2] > 3.0, "{errs:?}");
    let smooth_disk = RadialField::from_fn(&g, Parity::Even, |r| closed::chi(r, 1.0));
    assert!(smooth_disk.integrate() > PI && smooth_disk.integrate() < 4.0 * PI);
}

#[test]
fn partial_masses() {
    let g = reference();
    let m = RadialField::from_fn(&g, Parity::Even, closed::q).partial_mass();
    assert_eq!(m.values[0], 0.0);
    assert!(sup_on(&g, &m.values, closed::m0, 0.0, 1e4) < 1e-8);
    assert!((m.at(1.0) - 2.0).abs() < 1e-8);
    let ml = RadialField::from_fn(&g, Parity::Even, closed::lambda_q).partial_mass();
    assert!(sup_on(&g, &ml.values, |r| 8.0 * closed::psi0(r), 0.0, 1e4) < 1e-8);
    let z = RadialField::zeros(&g, Parity::Even).partial_mass();
    assert!(z.values.iter().all(|v| *v == 0.0));
}

#[test]
fn poisson_fields() {
    let g = reference();
    let pq = RadialField::from_fn(&g, Parity::Even, closed::q).poisson_field();
    assert_eq!(pq.parity, Parity::Odd);
    assert!(sup_on(&g, &pq.values, closed::dphi_q, 0.0, 1e4) < 1e-8);
    assert!((pq.at(1.0) - 2.0).abs() < 1e-8);
    let pl = RadialField::from_fn(&g, Parity::Even, closed::lambda_q).poisson_field();
    assert!(sup_on(&g, &pl.values, closed::dphi_lambda_q, 0.0, 1e4) < 1e-8);
}

#[test]
fn potentials_from_gradients() {
    let g = RadialGrid::new(GridSpec::default().with_r_max(1e6)).unwrap();
    let q = RadialField::from_fn(&g, Parity::Even, closed::q);
    // the log moment int Q log t t dt vanishes (reference quadrature: 0 to 25 digits)
    let phi = q.poisson_field().potential_from_gradient(Normalization::LogConvolution).unwrap();
    assert!(phi.values[0].abs() < 1e-6, "{}", phi.values[0]);
    assert!(sup_on(&g, &phi.values, closed::phi_q, 0.0, 1e3) < 1e-6);
    let lq = RadialField::from_fn(&g, Parity::Even, closed::lambda_q);
    let phl = lq.poisson_field().potential_from_gradient(Normalization::LogConvolution).unwrap();
    assert!(sup_on(&g, &phl.values, closed::phi_lambda_q, 0.0, 1e6) < 1e-6);
    // degeneracy LQ/Q + 2 = -phi_{LQ}
    let worst = g
        .nodes()
        .iter()
        .zip(&phl.values)
        .filter(|(r, _)| **r < 1e3)
        .map(|(&r, p)| (closed::lambda_q(r) / closed::q(r) + 2.0 + p).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6);
    let at_zero = q.poisson_field().potential_from_gradient(Normalization::ValueAtZero).unwrap();
    assert_eq!(at_zero.values[0], 0.0);
    let z = RadialField::zeros(&g, Parity::Odd).potential_from_gradient(Normalization::LogConvolution).unwrap();
    assert!(z.values.iter().all(|v| *v == 0.0));
    assert!(q.potential_from_gradient(Normalization::ValueAtZero).is_err());
}

#[test]
fn csv_has_header_and_full_precision() {
    let g = RadialGrid::new(GridSpec::coarse(100.0)).unwrap();
    let f = RadialField::from_fn(&g, Parity::Even, closed::q);
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,value"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row, vec![0.0, 8.0]);
    assert_eq!(text.lines().count(), g.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn poisson_round_trip_recovers_bumps(a in 0.2f64..3.0, w in 0.3f64..2.0, c in 0.0f64..3.0) {
        let g = RadialGrid::new(GridSpec::default().with_r_max(200.0)).unwrap();
        let v = RadialField::from_fn(&g, Parity::Even, |r| {
            let x = r / w;
            a * (1.0 + c * x * x) * (-x * x).exp() + (-r * r).exp()
        });
        let e = poisson_round_trip(&v).unwrap();
        prop_assert!(e < 1e-4, "{}", e);
    }

    #[test]
    fn partial_mass_derivative_returns_density(a in 0.5f64..4.0, w in 0.5f64..3.0) {
        let g = RadialGrid::new(GridSpec::default().with_r_max(200.0)).unwrap();
        let f = RadialField::from_fn(&g, Parity::Even, |r| (1.0 + a * r * r) * (-(r / w).powi(2)).exp());
        let m = f.partial_mass();
        let dm = m.derivative(1).unwrap();
        let scale = f.values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for i in 1..g.len() {
            let r = g.nodes()[i];
            prop_assert!((dm.values[i] / r - f.values[i]).abs() < 1e-5 * scale);
        }
    }

    #[test]
    fn divergences_integrate_to_zero(a in 0.3f64..3.0) {
        // int div(y f) = 0 for f = exp(-a r^2)
        let g = reference();
        let f = RadialField::from_fn(&g, Parity::Even, |r| {
            let e = (-a * r * r).exp();
            2.0 * e - 2.0 * a * r * r * e
        });
        prop_assert!(f.integrate().abs() < 1e-8);
    }
}

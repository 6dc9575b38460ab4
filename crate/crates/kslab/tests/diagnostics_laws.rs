use std::f64::consts::PI;

use kslab::closed;
use kslab::diagnostics::{
    check_hardy_suite, check_log_hls, fit_rate_law, free_energy, linear_fit, local_slope, modulation_laws,
    synthetic_series, virial_rate, with_poisson,
};
use kslab::{DiagnosticsError, GridSpec, Normalization, Parity, RadialField, RadialGrid};
use proptest::prelude::*;

fn wide() -> std::sync::Arc<RadialGrid> {
    RadialGrid::new(GridSpec::default().with_r_max(1e6)).unwrap()
}

fn scaled_q(grid: &std::sync::Arc<RadialGrid>, c: f64, lambda: f64) -> RadialField {
    RadialField::from_fn(grid, Parity::Even, |r| c * closed::q(r / lambda) / (lambda * lambda))
}

#[test]
fn energy_is_scale_invariant_at_critical_mass() {
    let g = wide();
    let e: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&l| free_energy(&with_poisson(&scaled_q(&g, 1.0, l)), Normalization::LogConvolution).unwrap().free_energy)
        .collect();
    assert!((e[0] - e[1]).abs() < 1e-5 * e[1].abs() && (e[2] - e[1]).abs() < 1e-5 * e[1].abs(), "{e:?}");
    // below critical mass concentration raises the energy
    let sub: Vec<f64> = [0.5, 1.0]
        .iter()
        .map(|&l| free_energy(&with_poisson(&scaled_q(&g, 0.5, l)), Normalization::LogConvolution).unwrap().free_energy)
        .collect();
    assert!(sub[0] > sub[1], "{sub:?}");
}

#[test]
fn energy_parts_and_guards() {
    let g = wide();
    let rep = free_energy(&with_poisson(&scaled_q(&g, 1.0, 1.0)), Normalization::LogConvolution).unwrap();
    assert!((rep.mass - 8.0 * PI).abs() < 1e-6);
    assert_eq!(rep.floored_mass, 0.0);
    assert!((rep.free_energy - (rep.entropy + rep.interaction + 0.5 * rep.dirichlet)).abs() < 1e-12);
    let neg = RadialField::from_fn(&g, Parity::Even, |r| (-r * r).exp() - 0.5 * (-(r - 2.0).powi(2)).exp());
    assert!(matches!(
        free_energy(&with_poisson(&neg), Normalization::LogConvolution),
        Err(DiagnosticsError::NegativeDensity(_))
    ));
}

#[test]
fn hls_is_attained_on_the_ground_state_family() {
    let g = wide();
    for (c, l) in [(1.0, 1.0), (0.5, 1.0), (2.0, 0.5), (1.0, 3.0)] {
        let rep = check_log_hls(&scaled_q(&g, c, l)).unwrap();
        assert!(rep.margin.abs() < 1e-5 * rep.mass, "c={c} l={l}: {rep:?}");
    }
    let gauss = RadialField::from_fn(&g, Parity::Even, |r| (-r * r).exp());
    assert!(check_log_hls(&gauss).unwrap().margin > 1e-3);
    let zero = RadialField::zeros(&g, Parity::Even);
    assert!(check_log_hls(&zero).is_err());
}

#[test]
fn virial_rate_matches_mass_law() {
    let g = wide();
    for c in [0.25, 0.5, 1.0] {
        let v = virial_rate(&scaled_q(&g, c, 1.0));
        let scale = 4.0 * v.mass;
        assert!((v.measured - v.predicted).abs() < 1e-4 * scale, "c={c}: {v:?}");
    }
}

#[test]
fn hardy_suite_on_a_gaussian() {
    let g = RadialGrid::new(GridSpec::default().with_r_max(200.0)).unwrap();
    let v = RadialField::from_fn(&g, Parity::Even, |r| r.powi(4) * (-r * r).exp());
    let rep = check_hardy_suite(&v, 0.0, 1.0, 50.0).unwrap();
    assert!(rep.holds(), "{rep:?}");
    assert!(rep.get("power").unwrap().constant >= 1.0);
    for a in [1.0, 2.0] {
        assert!(check_hardy_suite(&v, a, 1.0, 50.0).unwrap().get("power").unwrap().constant >= 1.0);
    }
    let odd = RadialField::from_fn(&g, Parity::Odd, |r| r);
    assert!(check_hardy_suite(&odd, 0.0, 1.0, 50.0).is_err());
}

#[test]
fn linear_fits() {
    let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
    let f = linear_fit(&x, &y).unwrap();
    assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12 && f.rel_residual < 1e-12);
    assert!(linear_fit(&x[..2], &y[..2]).is_none());
    assert!(linear_fit(&[1.0; 5], &[2.0; 5]).is_none());
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let d = local_slope(&x, &sq, 2);
    for i in 2..8 {
        assert!((d[i] - 2.0 * x[i]).abs() < 1e-12);
    }
}

#[test]
fn synthetic_series_follows_its_ode() {
    let ts = synthetic_series(50.0, 5e4, 1e-2, 400, true).unwrap();
    let s = ts.column(|r| r.s);
    let b = ts.column(|r| r.b);
    let ll = ts.column(|r| r.lambda.ln());
    let db = local_slope(&s, &b, 1);
    let dl = local_slope(&s, &ll, 1);
    for i in 1..s.len() - 1 {
        let law = -2.0 * b[i] * b[i] / b[i].ln().abs();
        assert!((db[i] / law - 1.0).abs() < 1e-3, "i={i}: {} vs {law}", db[i]);
        assert!((dl[i] / -b[i] - 1.0).abs() < 1e-3);
    }
    assert!(ts.records.windows(2).all(|w| w[1].t > w[0].t));
    assert!(synthetic_series(10.0, 5.0, 1e-2, 10, true).is_err());
}

/// b on the asymptotic branch (log s - log log s) / 2s
fn asymptotic_b(s: f64) -> f64 {
    (s.ln() - s.ln().ln()) / (2.0 * s)
}

#[test]
fn rate_fit_separates_the_log_law() {
    let (s0, s1) = (1e2, 1e10);
    let with_log = synthetic_series(s0, s1, asymptotic_b(s0), 600, true).unwrap();
    let fit = fit_rate_law(&with_log, 10).unwrap();
    let law = fit.b_law.expect("b law fitted");
    assert!(law.accepted && (law.fit.slope - 1.0).abs() <= 0.02, "{law:?}");
    let lam = fit.lambda_law.unwrap();
    assert!((lam.slope - 1.0).abs() < 1e-2, "{lam:?}");
    let (lo, hi) = fit.proxy_range.unwrap();
    assert!(lo > 0.0 && hi.is_finite());

    let no_log = synthetic_series(s0, s1, asymptotic_b(s0), 600, false).unwrap();
    let fit = fit_rate_law(&no_log, 10).unwrap();
    assert!(!fit.b_law.unwrap().accepted);

    let short = synthetic_series(50.0, 60.0, 1e-2, 5, true).unwrap();
    assert!(matches!(fit_rate_law(&short, 2), Err(DiagnosticsError::InsufficientRange(_))));
}

#[test]
fn modulation_windows_on_the_synthetic_law() {
    let ts = synthetic_series(100.0, 2e4, 1e-2, 500, true).unwrap();
    let w = modulation_laws(&ts, 100.0, 5).unwrap();
    assert!(w.speed_ok(1e-3), "{}", w.speed_deviation);
    assert!(w.b_law.iter().all(|v| (v + 2.0).abs() < 1e-2), "{:?}", w.b_law_range);
    assert!(w.trend_ok());
    let no_log = synthetic_series(100.0, 2e4, 1e-2, 500, false).unwrap();
    let w = modulation_laws(&no_log, 100.0, 5).unwrap();
    // b_s = -b^2 gives |log b| in place of -2
    assert!(!w.b_law_ok(), "{:?}", w.b_law_range);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hls_holds_on_gaussian_mixtures(
        a1 in 0.1f64..5.0, w1 in 0.2f64..4.0, c1 in 0.0f64..5.0,
        a2 in 0.0f64..5.0, w2 in 0.2f64..4.0, c2 in 0.0f64..5.0,
    ) {
        let g = wide();
        let u = RadialField::from_fn(&g, Parity::Even, |r| {
            a1 * (-((r - c1) / w1).powi(2)).exp() + a1 * (-((r + c1) / w1).powi(2)).exp()
                + a2 * (-((r - c2) / w2).powi(2)).exp() + a2 * (-((r + c2) / w2).powi(2)).exp()
        });
        let rep = check_log_hls(&u).unwrap();
        prop_assert!(rep.margin >= -1e-6 * rep.mass, "{:?}", rep);
    }
}

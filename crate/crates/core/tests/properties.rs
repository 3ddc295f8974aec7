use std::sync::Arc;

use finsler::expr::parse_str;
use finsler::jet::{seed_variables, Jet, JetLayout};
use finsler::metric::random_expression_metric;
use proptest::prelude::*;

const ORDER: usize = 4;

fn layout() -> Arc<JetLayout> {
    JetLayout::shared(2, ORDER).unwrap()
}

/// Random jet in two variables with the given range for the constant term.
fn jet(value: std::ops::Range<f64>) -> impl Strategy<Value = Jet> {
    let len = layout().len(ORDER);
    (value, prop::collection::vec(-1.0..1.0f64, len - 1)).prop_map(|(v, rest)| {
        let mut coeffs = vec![v];
        coeffs.extend(rest);
        Jet::from_coeffs(&layout(), ORDER, coeffs).unwrap()
    })
}

fn assert_close(a: &Jet, b: &Jet, tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.order(), b.order());
    for (i, (x, y)) in a.coeffs().iter().zip(b.coeffs()).enumerate() {
        prop_assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "coefficient {i}: {x} vs {y}");
    }
    Ok(())
}

/// Source text of a random expression in `x1, x2, y1, y2` that is defined
/// everywhere.
fn expression() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x1".to_string()),
        Just("x2".to_string()),
        Just("y1".to_string()),
        Just("y2".to_string()),
        (1u32..300).prop_map(|k| format!("{}", k as f64 / 100.0)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} * {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} / (2 + ({b})^2)")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("({a})^3")),
            inner.prop_map(|a| format!("-({a})")),
        ]
    })
}

proptest! {
    #[test]
    fn leibniz_rule(a in jet(-2.0..2.0), b in jet(-2.0..2.0), var in 0usize..2) {
        let lhs = (&a * &b).derivative(var).unwrap();
        let rhs = a.derivative(var).unwrap() * &b + &a * b.derivative(var).unwrap();
        assert_close(&lhs, &rhs, 1e-12)?;
    }

    #[test]
    fn sqrt_of_square(a in jet(0.5..2.0)) {
        let back = (&a * &a).sqrt().unwrap();
        assert_close(&back, &a, 1e-10)?;
    }

    #[test]
    fn reciprocal_inverts(a in jet(0.5..2.0)) {
        let one = Jet::constant(&layout(), ORDER, 1.0);
        assert_close(&(a.recip().unwrap() * &a), &one, 1e-10)?;
    }

    #[test]
    fn cube_root_cubed(a in jet(0.5..2.0)) {
        let back = a.pow_rational(1, 3).unwrap().powi(3).unwrap();
        assert_close(&back, &a, 1e-10)?;
    }

    #[test]
    fn display_round_trips(src in expression()) {
        let e = parse_str(&src).unwrap();
        let printed = e.to_string();
        let again = parse_str(&printed).unwrap();
        prop_assert_eq!(&again.to_string(), &printed);
        let (x, y) = ([0.3, -0.7], [1.1, 0.4]);
        let (v1, v2) = (e.eval_f64(&x, &y).unwrap(), again.eval_f64(&x, &y).unwrap());
        prop_assert!((v1 - v2).abs() <= 1e-12 * (1.0 + v1.abs()), "{v1} vs {v2}");
    }

    #[test]
    fn jet_evaluation_matches_scalar(
        src in expression(),
        x in prop::array::uniform2(-1.0..1.0f64),
        y in prop::array::uniform2(0.2..1.5f64),
    ) {
        let e = parse_str(&src).unwrap();
        let env = seed_variables(&x, &y, 2).unwrap();
        let j = e.eval_jet(&env).unwrap();
        let v = e.eval_f64(&x, &y).unwrap();
        prop_assert!((j.value() - v).abs() <= 1e-12 * (1.0 + v.abs()), "{} vs {v}", j.value());
        // d/dy1 against a central difference
        let h = 1e-5;
        let fp = e.eval_f64(&x, &[y[0] + h, y[1]]).unwrap();
        let fm = e.eval_f64(&x, &[y[0] - h, y[1]]).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let d = j.partial_vars(&[2]).unwrap();
        prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs().max(v.abs())), "{d} vs {fd}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_metrics_are_homogeneous(
        seed in 0u64..10_000,
        dim in 2usize..4,
        u in prop::array::uniform3(0.0..1.0f64),
        y in prop::array::uniform3(-1.0..1.0f64),
        t in 0.1..10.0f64,
    ) {
        let spec = random_expression_metric(seed, dim).unwrap();
        let x: Vec<f64> = spec.domain.bounds().iter().zip(u).map(|(&(a, b), s)| a + s * (b - a)).collect();
        let y = &y[..dim];
        prop_assume!(y.iter().any(|v| v.abs() > 1e-3));
        let ty: Vec<f64> = y.iter().map(|v| t * v).collect();
        let f = spec.f_value(&x, y).unwrap();
        let ft = spec.f_value(&x, &ty).unwrap();
        prop_assert!(f > 0.0);
        prop_assert!((ft - t * f).abs() <= 1e-12 * t * f, "{ft} vs {}", t * f);
    }
}

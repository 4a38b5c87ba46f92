//! Benchmark-objective checks: known optima, affine mapping, regret and
//! improvement accounting.

use pfbo_core::objectives::{improvement_over_rs, Objective, ObjectiveKind};

#[test]
fn named_minima_evaluate_to_zero() {
    for (kind, d) in [
        (ObjectiveKind::Ackley, 3),
        (ObjectiveKind::Rastrigin, 4),
        (ObjectiveKind::Griewank, 2),
        (ObjectiveKind::Levy, 3),
        (ObjectiveKind::DixonPrice, 4),
        (ObjectiveKind::Bukin, 2),
    ] {
        let obj = Objective::new(kind, d).unwrap();
        let x_star = obj.x_star_canonical().expect("known optimizer");
        let v = obj.evaluate_canonical(x_star);
        assert!(
            (v - obj.f_star()).abs() < 1e-9,
            "{}: f(x*) = {} but f* = {}",
            obj.name(),
            v,
            obj.f_star()
        );
    }
}

#[test]
fn extras_match_their_stored_optima() {
    for (kind, d) in [
        (ObjectiveKind::Rosenbrock, 5),
        (ObjectiveKind::StyblinskiTang, 3),
        (ObjectiveKind::SixHumpCamel, 2),
    ] {
        let obj = Objective::new(kind, d).unwrap();
        let x_star = obj.x_star_canonical().expect("known optimizer");
        assert!(
            (obj.evaluate_canonical(x_star) - obj.f_star()).abs() < 1e-9,
            "{} optimum mismatch",
            obj.name()
        );
    }
    // optimizer location is only approximate for Hartmann; just check support
    let h = Objective::new(ObjectiveKind::Hartmann6, 6).unwrap();
    assert!(h.x_star_canonical().is_none());
    assert!(h.evaluate(&[0.2, 0.15, 0.48, 0.28, 0.31, 0.66]).unwrap() < -3.0);
}

#[test]
fn unit_cube_mapping_round_trips() {
    let obj = Objective::new(ObjectiveKind::Bukin, 2).unwrap();
    for u in [[0.0, 0.0], [1.0, 1.0], [0.3, 0.8], [0.123456789, 0.987654321]] {
        let x = obj.to_canonical(&u);
        let back = obj.to_unit(&x);
        for (a, b) in u.iter().zip(back) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn evaluate_rejects_out_of_cube_and_bad_dims() {
    let obj = Objective::new(ObjectiveKind::Ackley, 2).unwrap();
    assert!(obj.evaluate(&[0.5, 1.2]).is_err());
    assert!(obj.evaluate(&[-0.1, 0.2]).is_err());
    assert!(obj.evaluate(&[0.5]).is_err());
    assert!(Objective::new(ObjectiveKind::Bukin, 3).is_err());
    assert!(ObjectiveKind::parse("nonsense").is_err());
}

#[test]
fn simple_regret_definition() {
    let obj = Objective::new(ObjectiveKind::Levy, 2).unwrap();
    assert_eq!(obj.simple_regret(obj.f_star()), 0.0);
    assert_eq!(obj.simple_regret(obj.f_star() + 1.0), 1.0);
}

#[test]
fn regret_of_prefix_dominates_full_trace() {
    let obj = Objective::new(ObjectiveKind::Ackley, 1).unwrap();
    let ys = [9.0, 7.5, 8.2, 3.3, 5.0, 3.1];
    let mut best = f64::INFINITY;
    let mut prev_regret = f64::INFINITY;
    for &y in &ys {
        best = best.min(y);
        let r = obj.simple_regret(best);
        assert!(r <= prev_regret);
        prev_regret = r;
    }
}

#[test]
fn improvement_over_rs_cases() {
    let rs = [2.0, 4.0, 3.0];
    assert_eq!(improvement_over_rs(&rs, &rs).unwrap(), Some(0.0));
    assert_eq!(improvement_over_rs(&[0.0, 0.0, 0.0], &rs).unwrap(), Some(100.0));
    // worse than random search floors at zero
    assert_eq!(improvement_over_rs(&[5.0, 6.0, 7.0], &rs).unwrap(), Some(0.0));
    // undefined when random search already hit the optimum
    assert_eq!(improvement_over_rs(&[1.0], &[0.0]).unwrap(), None);
    assert!(improvement_over_rs(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn registry_lists_all_kinds_with_metadata() {
    for &kind in ObjectiveKind::all() {
        let d = match kind.dims() {
            pfbo_core::objectives::Dims::Fixed(k) => k,
            pfbo_core::objectives::Dims::Any => 2,
        };
        let obj = Objective::new(kind, d).unwrap();
        assert_eq!(obj.name(), kind.name());
        assert!(obj.f_star().is_finite());
    }
}

use erm_ipm::barrier::BarrierKind;
use erm_ipm::frontend::ErmInstance;
use erm_ipm::ipm::{solve, IpmConfig, Mode, Profile};
use erm_ipm::DenseMatrix;
use proptest::prelude::*;

fn try_box_lp(a: Vec<f64>, x0: Vec<f64>, c: Vec<f64>, d: usize) -> erm_ipm::Result<ErmInstance> {
    let n = x0.len();
    let a = DenseMatrix::from_row_major(n, d, a).unwrap();
    let b = a.tr_matvec(&x0).unwrap();
    let bars = (0..n)
        .map(|_| BarrierKind::Box { lower: vec![0.0], upper: vec![1.0] }.into())
        .collect();
    ErmInstance::new(a, b, c, bars, 100.0)
}

fn box_lp(a: Vec<f64>, x0: Vec<f64>, c: Vec<f64>, d: usize) -> ErmInstance {
    try_box_lp(a, x0, c, d).unwrap()
}

#[test]
fn simplex_slice_optimum() {
    // min -x_0 + x_1 over x in [0,1]^3 with x_0 + x_1 + x_2 = 1.5: x = (1, 0, 0.5), value -1
    let inst = box_lp(vec![1.0; 3], vec![0.5; 3], vec![-1.0, 1.0, 0.0], 1);
    let cfg = IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Exact);
    let rep = solve(&inst, 1e-9, cfg).unwrap();
    assert!(rep.converged);
    assert!((rep.objective + 1.0).abs() < 1e-8, "{}", rep.objective);
    assert!((rep.x[2] - 0.5).abs() < 1e-6, "{:?}", rep.x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exact_solution_is_feasible_and_improves_on_start(
        (a, x0, c) in (4usize..10).prop_flat_map(|n| (
            prop::collection::vec(-1.0f64..1.0, n * 2),
            prop::collection::vec(0.2f64..0.8, n),
            prop::collection::vec(-1.0f64..1.0, n),
        ))
    ) {
        let inst = try_box_lp(a, x0.clone(), c, 2);
        // skip draws whose condition number exceeds kappa
        prop_assume!(inst.is_ok());
        let inst = inst.unwrap();
        let cfg = IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Exact).instrumented(true);
        let rep = solve(&inst, 1e-6, cfg).unwrap();
        prop_assert!(rep.converged);
        prop_assert!(inst.is_interior(&rep.x));
        prop_assert!(rep.residual < 1e-8, "residual {}", rep.residual);
        prop_assert!(rep.violations.is_empty(), "{:?}", rep.violations);
        prop_assert!(rep.objective <= inst.objective(&x0) + 1e-6);
        prop_assert!(rep.gap_bound <= 1e-6);
    }
}

#[test]
fn sketched_mode_is_seed_reproducible() {
    let n = 12;
    let a: Vec<f64> = (0..n * 3).map(|k| ((k * 7919) % 13) as f64 / 6.5 - 1.0).collect();
    let x0: Vec<f64> = (0..n).map(|k| 0.3 + 0.03 * k as f64).collect();
    let c: Vec<f64> = (0..n).map(|k| ((k * 31) % 11) as f64 / 5.5 - 1.0).collect();
    let inst = box_lp(a, x0, c, 3);
    let run = |seed| {
        let cfg = IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Sketched).with_seed(seed);
        solve(&inst, 1e-4, cfg).unwrap()
    };
    let (r1, r2) = (run(5), run(5));
    assert_eq!(r1.x, r2.x);
    assert_eq!(r1.iterations, r2.iterations);
    let exact = solve(&inst, 1e-6, IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Exact)).unwrap();
    assert!((r1.objective - exact.objective).abs() <= 1e-4 * (1.0 + exact.objective.abs()));
    assert!(r1.sketch.is_some() && exact.sketch.is_none());
}

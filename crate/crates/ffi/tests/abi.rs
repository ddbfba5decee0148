use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use erm_ipm_ffi::*;

fn fixture() -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/tiny_lp.json");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = erm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn solves_fixture_through_handles() {
    unsafe {
        let mut prob = ptr::null_mut();
        assert_eq!(erm_problem_load(fixture().as_ptr(), &mut prob), ErmStatus::Ok);
        let (mut n, mut d, mut m) = (0, 0, 0);
        assert_eq!(erm_problem_dims(prob, &mut n, &mut d, &mut m), ErmStatus::Ok);
        assert_eq!((n, d, m), (3, 1, 3));

        let mut sol = ptr::null_mut();
        assert_eq!(erm_solve(prob, 1e-9, ErmMode::Exact, 0, &mut sol), ErmStatus::Ok);
        let mut obj = 0.0;
        assert_eq!(erm_solution_objective(sol, &mut obj), ErmStatus::Ok);
        assert!((obj - 2.0).abs() < 1e-7, "{obj}");

        let mut need = 0;
        assert_eq!(erm_solution_x(sol, ptr::null_mut(), 0, &mut need), ErmStatus::Ok);
        assert_eq!(need, 3);
        let mut short = [0.0; 2];
        assert_eq!(
            erm_solution_x(sol, short.as_mut_ptr(), 2, ptr::null_mut()),
            ErmStatus::DimensionMismatch
        );
        let mut x = [0.0; 3];
        assert_eq!(erm_solution_x(sol, x.as_mut_ptr(), 3, ptr::null_mut()), ErmStatus::Ok);
        assert!((x.iter().sum::<f64>() - 1.5).abs() < 1e-8, "{x:?}");
        let mut y = [0.0; 1];
        assert_eq!(erm_solution_y(sol, y.as_mut_ptr(), 1, ptr::null_mut()), ErmStatus::Ok);

        let (mut iters, mut conv) = (0, 0);
        assert_eq!(erm_solution_status(sol, &mut iters, &mut conv), ErmStatus::Ok);
        assert!(iters > 0);
        assert_eq!(conv, 1);

        erm_solution_free(sol);
        erm_problem_free(prob);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    unsafe {
        let mut prob = ptr::null_mut();
        assert_eq!(erm_problem_load(ptr::null(), &mut prob), ErmStatus::NullPointer);
        assert!(prob.is_null());
        assert!(last_error().contains("path"));

        let missing = CString::new("/nonexistent/instance.json").unwrap();
        assert_eq!(erm_problem_load(missing.as_ptr(), &mut prob), ErmStatus::Io);

        let bad = CString::new(r#"{"meta": {"format": "other", "version": 1}}"#).unwrap();
        assert_eq!(erm_problem_from_json(bad.as_ptr(), &mut prob), ErmStatus::Validation);
        assert!(last_error().contains("validation"), "{}", last_error());

        assert_eq!(erm_problem_load(fixture().as_ptr(), &mut prob), ErmStatus::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(erm_solve(prob, -1.0, ErmMode::Exact, 0, &mut sol), ErmStatus::InvalidArgument);
        assert!(sol.is_null());
        erm_problem_free(prob);

        erm_problem_free(ptr::null_mut());
        erm_solution_free(ptr::null_mut());
        erm_sparsifier_free(ptr::null_mut());
    }
}

#[test]
fn exact_leverage_of_orthonormal_columns() {
    // rows of [I_2; 0] have leverage 1, 1, 0
    let a = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let mut out = [f64::NAN; 3];
    unsafe {
        assert_eq!(erm_exact_leverage(a.as_ptr(), 3, 2, out.as_mut_ptr()), ErmStatus::Ok);
    }
    for (v, e) in out.iter().zip([1.0, 1.0, 0.0]) {
        assert!((v - e).abs() < 1e-12, "{out:?}");
    }
    let rank_deficient = [1.0, 0.0, 1.0, 0.0];
    unsafe {
        assert_eq!(
            erm_exact_leverage(rank_deficient.as_ptr(), 2, 2, out.as_mut_ptr()),
            ErmStatus::NotPositiveDefinite
        );
    }
}

#[test]
fn sparsifier_insert_delete_cycle() {
    let d = 2;
    let rows: Vec<f64> = (0..40).flat_map(|i| [1.0 + (i % 3) as f64, 0.5 * (i % 5) as f64 - 1.0]).collect();
    unsafe {
        let mut sp = ptr::null_mut();
        assert_eq!(erm_sparsifier_new(d, 100.0, 7, &mut sp), ErmStatus::Ok);
        let mut ids = vec![0u64; 40];
        assert_eq!(erm_sparsifier_insert(sp, rows.as_ptr(), 40, d, ids.as_mut_ptr()), ErmStatus::Ok);
        let mut len = 0;
        assert_eq!(erm_sparsifier_len(sp, &mut len), ErmStatus::Ok);
        assert_eq!(len, 40);
        let mut total = 0.0;
        for &id in &ids {
            let mut t = 0.0;
            assert_eq!(erm_sparsifier_overestimate(sp, id, &mut t), ErmStatus::Ok);
            assert!(t > 0.0 && t.is_finite());
            total += t;
        }
        assert!(total >= 2.0 - 1e-9, "sum of overestimates {total} below rank");

        assert_eq!(erm_sparsifier_delete(sp, ids[0]), ErmStatus::Ok);
        let mut t = 0.0;
        assert_eq!(erm_sparsifier_overestimate(sp, ids[0], &mut t), ErmStatus::InvalidArgument);
        assert_eq!(erm_sparsifier_len(sp, &mut len), ErmStatus::Ok);
        assert_eq!(len, 39);

        let huge = [1e6, 0.0];
        let mut id = 0;
        assert_eq!(erm_sparsifier_insert(sp, huge.as_ptr(), 1, d, &mut id), ErmStatus::InvalidArgument);
        erm_sparsifier_free(sp);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/erm_ipm.h");
    assert!(header.exists());
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["erm_solve", "erm_exact_leverage", "erm_sparsifier_insert", "erm_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ ErmProblem *p = 0; return erm_problem_load(\"x\", &p) == ERM_STATUS_OK; }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => assert!(s.success()),
        Err(_) => eprintln!("no C compiler found; skipped"),
    }
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("erm-ipm-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

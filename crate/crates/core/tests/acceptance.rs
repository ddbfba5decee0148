//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fail.
//!
//! `cargo test --release --test acceptance -- 6 7` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use erm_ipm::barrier::{builtin_catalog, check_barrier, Barrier, BarrierKind, BlockLayout};
use erm_ipm::dynsparsifier::{bench_rows, run_bench, Adversary, BenchConfig, BenchSummary, DecrementalConfig, DecrementalSparsifier};
use erm_ipm::frontend::{dualize, primal_objective, ErmInstance, LossDescriptor, PrimalBlock, PrimalErmSpec};
use erm_ipm::ipm::{solve, IpmConfig, Mode, Profile, SolveReport};
use erm_ipm::levscore::{sample_sparsifier, SamplingConfig};
use erm_ipm::linalg::{exact_leverage, gram, logdet, loewner_approx, norm, relative_eigenvalues, weighted_gram, cholesky};
use erm_ipm::maintenance::{build_valid_r, CategoricalSampler, PrimalTracker, SlackConfig, SlackMaintainer, ValidSampleParams};
use erm_ipm::sketch::{HeavyHitterSet, HhConfig, HhSketch};
use erm_ipm::DenseMatrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1-3: decremental sparsifier under the max-overestimate adversary

struct BenchRuns {
    summaries: Vec<BenchSummary>,
    elapsed: Duration,
}

fn bench_runs() -> &'static BenchRuns {
    static RUNS: OnceLock<BenchRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let summaries = (0..50)
            .map(|seed| {
                let cfg = BenchConfig {
                    n: 500,
                    d: 10,
                    kappa: 1e6,
                    adversary: Adversary::MaxLev,
                    updates: 2000,
                    seed,
                    sparsifier: DecrementalConfig {
                        instrumented: true,
                        ..DecrementalConfig::default()
                    },
                };
                run_bench(&cfg).expect("bench run").0
            })
            .collect();
        BenchRuns {
            summaries,
            elapsed: start.elapsed(),
        }
    })
}

fn criterion_1() -> Outcome {
    let runs = bench_runs();
    let checkpoints: usize = runs.summaries.iter().map(|s| s.batches).sum();
    let bad: usize = runs.summaries.iter().map(|s| s.violating_batches).sum();
    let rate = bad as f64 / checkpoints.max(1) as f64;
    let worst_sum = runs.summaries.iter().map(|s| s.max_sum_tau).fold(0.0, f64::max);
    let bound = runs.summaries[0].sum_tau_bound;
    let secs = runs.elapsed.as_secs_f64();
    outcome(
        rate <= 0.01 && runs.summaries.iter().all(|s| s.max_sum_tau <= s.sum_tau_bound) && secs < 300.0,
        format!(
            "violating checkpoints {bad}/{checkpoints} ({:.3}%), max sum tau {worst_sum:.1} (bound {bound:.1}), {secs:.1} s for 50 runs",
            100.0 * rate
        ),
    )
}

fn criterion_2() -> Outcome {
    let runs = bench_runs();
    let worst = runs.summaries.iter().map(|s| s.batches).max().unwrap_or(0);
    let bound = runs.summaries[0].batch_bound;
    outcome(
        runs.summaries.iter().all(|s| s.batches as f64 <= s.batch_bound),
        format!("max batches {worst} (bound {bound:.1})"),
    )
}

fn criterion_3() -> Outcome {
    let runs = bench_runs();
    let fails: usize = runs.summaries.iter().map(|s| s.spectral_failures).sum();
    let batches: usize = runs.summaries.iter().map(|s| s.batches).sum();
    outcome(fails == 0, format!("{fails} of {batches} batches outside a factor 10"))
}

// ---------------------------------------------------------------------------
// 4: sampling with maintained overestimates

fn criterion_4() -> Outcome {
    let eps = 0.25;
    let mut good = 0;
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let a = bench_rows(500, 10, 1e6, &mut r);
        let mut sp = DecrementalSparsifier::new(a, 1e6, seed, DecrementalConfig::default()).unwrap();
        for _ in 0..200 {
            let tau = sp.overestimates();
            let i = (0..tau.len()).max_by(|&x, &y| tau[x].total_cmp(&tau[y])).unwrap();
            sp.halve(i).unwrap();
        }
        sp.flush_pending().unwrap();
        let rows = sp.rows().clone();
        let sample = sample_sparsifier(&rows, sp.overestimates(), eps, &mut r, &SamplingConfig::default()).unwrap();
        let m = gram(&rows, 0.0);
        let ev = relative_eigenvalues(&m, &sample.gram(&rows, 0.0)).unwrap();
        let dev = ev.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        if dev <= eps {
            good += 1;
        }
    }
    outcome(good >= 95, format!("{good}/100 seeds within eps = 0.25 (largest deviation {worst:.3})"))
}

// ---------------------------------------------------------------------------
// 5: heavy hitters

fn criterion_5() -> Outcome {
    let n = 1000;
    let eps = 0.1;
    let mut found = 0;
    for seed in 0..1000u64 {
        let mut r = rng(5000 + seed);
        let q = HhSketch::new(eps, n, &mut r, &HhConfig::default()).unwrap();
        let mut x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let p = r.gen_range(0..n);
        x[p] = 0.0;
        // |x_p| = eps ||x||, the smallest value the guarantee covers
        let rest = norm(&x);
        x[p] = eps * rest / (1.0 - eps * eps).sqrt() * if r.gen::<bool>() { 1.0 } else { -1.0 };
        if q.recover(&q.apply(&x).unwrap()).contains(&p) {
            found += 1;
        }
    }

    let cfg = HhConfig {
        max_bucket_factor: 64.0,
        direct_query_rows: 0,
        ..HhConfig::default()
    };
    let (rows_n, d) = (2000, 6);
    let mut false_neg = 0;
    let mut false_pos = 0;
    let mut heavy_total = 0;
    for trial in 0..100u64 {
        let mut r = rng(9000 + trial);
        let mut data: Vec<f64> = (0..rows_n * d).map(|_| r.gen_range(-0.05..0.05)).collect();
        for _ in 0..20 {
            let i = r.gen_range(0..rows_n);
            for v in &mut data[i * d..(i + 1) * d] {
                *v = r.gen_range(-1.0..1.0);
            }
        }
        let rows = DenseMatrix::from_row_major(rows_n, d, data).unwrap();
        let b = DenseMatrix::from_row_major(d, d, (0..d * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let m = b.matmul(&b.transpose()).unwrap();
        let mut q: Vec<f64> = (0..rows_n).map(|i| m.quad_form(rows.row(i))).collect();
        let exact_q = q.clone();
        q.sort_by(|x, y| y.total_cmp(x));
        let delta = 0.5 * q[9];
        let mut hh = HeavyHitterSet::new(rows, 100 + trial, &cfg).unwrap();
        let got = hh.query(&m, delta).unwrap();
        let want: Vec<usize> = (0..rows_n).filter(|&i| exact_q[i] >= delta).collect();
        heavy_total += want.len();
        false_neg += want.iter().filter(|i| !got.contains(i)).count();
        false_pos += got.iter().filter(|i| !want.contains(i)).count();
    }
    outcome(
        found >= 990 && false_neg == 0 && false_pos == 0,
        format!(
            "planted row recovered in {found}/1000 seeds; queries: {false_neg} false negatives, {false_pos} false positives over {heavy_total} heavy rows"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6-7: LP instances with box constraints

struct Lp {
    inst: ErmInstance,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn lp_instance(seed: u64, n: usize, d: usize) -> Lp {
    let mut r = rng(seed);
    loop {
        let a = DenseMatrix::from_row_major(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let lower: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + r.gen_range(0.5..2.0)).collect();
        let x0: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| l + (u - l) * r.gen_range(0.1..0.9))
            .collect();
        let b = a.tr_matvec(&x0).unwrap();
        let c: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        // mix one- and two-coordinate box blocks
        let mut barriers = Vec::new();
        let mut i = 0;
        while i < n {
            let w = if i + 1 < n && r.gen::<bool>() { 2 } else { 1 };
            barriers.push(
                BarrierKind::Box {
                    lower: lower[i..i + w].to_vec(),
                    upper: upper[i..i + w].to_vec(),
                }
                .into(),
            );
            i += w;
        }
        if let Ok(inst) = ErmInstance::new(a, b, c, barriers, 100.0) {
            return Lp { inst, lower, upper };
        }
    }
}

fn solve_small(m: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let d = rhs.len();
    let mut a: Vec<Vec<f64>> = m.iter().zip(rhs).map(|(row, b)| {
        let mut v = row.clone();
        v.push(*b);
        v
    }).collect();
    for col in 0..d {
        let piv = (col..d).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..d {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..=d {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    Some((0..d).map(|i| a[i][d] / a[i][i]).collect())
}

/// Minimum over basic solutions of `min c^T x, A^T x = b, l <= x <= u`.
fn vertex_optimum(lp: &Lp) -> f64 {
    let a = &lp.inst.a;
    let (n, d) = a.shape();
    let mut best = f64::INFINITY;
    let mut basis: Vec<usize> = (0..d).collect();
    loop {
        let nonbasic: Vec<usize> = (0..n).filter(|j| !basis.contains(j)).collect();
        // rows of the d x d system: equation k uses column k of A restricted to the basis
        let sys: Vec<Vec<f64>> = (0..d).map(|k| basis.iter().map(|&j| a[(j, k)]).collect()).collect();
        for mask in 0u64..(1u64 << nonbasic.len()) {
            let mut x = vec![0.0; n];
            for (bit, &j) in nonbasic.iter().enumerate() {
                x[j] = if mask >> bit & 1 == 1 { lp.upper[j] } else { lp.lower[j] };
            }
            let rhs: Vec<f64> = (0..d)
                .map(|k| lp.inst.b[k] - nonbasic.iter().map(|&j| a[(j, k)] * x[j]).sum::<f64>())
                .collect();
            let Some(xb) = solve_small(&sys, &rhs) else { break };
            let ok = basis
                .iter()
                .zip(&xb)
                .all(|(&j, &v)| v >= lp.lower[j] - 1e-9 && v <= lp.upper[j] + 1e-9);
            if ok {
                for (&j, &v) in basis.iter().zip(&xb) {
                    x[j] = v;
                }
                best = best.min(x.iter().zip(&lp.inst.c).map(|(p, q)| p * q).sum());
            }
        }
        // next combination
        let mut k = d;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if basis[k] < n - d + k {
                basis[k] += 1;
                for j in k + 1..d {
                    basis[j] = basis[j - 1] + 1;
                }
                break;
            }
        }
    }
}

struct LpRun {
    lp: Lp,
    reference: f64,
    reference_kind: &'static str,
    exact: SolveReport,
}

fn lp_sizes(k: u64) -> (usize, usize) {
    if k < 10 {
        (6 + (k % 7) as usize, 2 + (k % 2) as usize)
    } else {
        let d = 4 + ((k - 10) % 7) as usize;
        (2 * d + 2 + 3 * (k % 4) as usize, d)
    }
}

fn lp_runs() -> &'static Vec<LpRun> {
    static RUNS: OnceLock<Vec<LpRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..20u64)
            .map(|k| {
                let (n, d) = lp_sizes(k);
                let lp = lp_instance(600 + k, n, d);
                let cfg = IpmConfig::for_instance(&lp.inst, Profile::Aggressive, Mode::Exact).instrumented(true);
                let exact = solve(&lp.inst, 1e-6, cfg).expect("exact solve");
                let (reference, reference_kind) = if d <= 3 {
                    (vertex_optimum(&lp), "vertices")
                } else {
                    let cfg = IpmConfig::for_instance(&lp.inst, Profile::Aggressive, Mode::Exact);
                    (solve(&lp.inst, 1e-10, cfg).expect("reference solve").objective, "eps 1e-10")
                };
                LpRun {
                    lp,
                    reference,
                    reference_kind,
                    exact,
                }
            })
            .collect()
    })
}

fn criterion_6() -> Outcome {
    let runs = lp_runs();
    let mut worst = 0.0f64;
    let mut within = 0;
    let mut violations = 0;
    for run in runs {
        let err = (run.exact.objective - run.reference).abs() / (1.0 + run.reference.abs());
        worst = worst.max(err);
        if err <= 1e-6 {
            within += 1;
        }
        violations += run.exact.violations.len();
    }
    let vertex = runs.iter().filter(|r| r.reference_kind == "vertices").count();
    outcome(
        within == runs.len() && violations == 0,
        format!(
            "{within}/{} within 1e-6 (worst scaled error {worst:.2e}; {vertex} vertex references), {violations} invariant violations",
            runs.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let runs = lp_runs();
    let mut total = 0;
    let mut within = 0;
    let mut step_viol = 0;
    let mut other_viol = 0;
    let mut worst = 0.0f64;
    for run in runs {
        for seed in 0..10u64 {
            let cfg = IpmConfig::for_instance(&run.lp.inst, Profile::Aggressive, Mode::Sketched)
                .with_seed(seed)
                .instrumented(true);
            total += 1;
            match solve(&run.lp.inst, 1e-4, cfg) {
                Ok(rep) => {
                    let err = (rep.objective - run.exact.objective).abs() / (1.0 + run.reference.abs());
                    worst = worst.max(err);
                    if err <= 1e-4 {
                        within += 1;
                    }
                    step_viol += rep.violations.iter().filter(|v| v.check.starts_with("step")).count();
                    other_viol += rep.violations.iter().filter(|v| !v.check.starts_with("step")).count();
                }
                Err(e) => eprintln!("sketched solve failed: {e}"),
            }
        }
    }
    outcome(
        within as f64 >= 0.95 * total as f64 && step_viol == 0,
        format!(
            "{within}/{total} runs within 1e-4 (worst scaled error {worst:.2e}), {step_viol} step-bound violations, {other_viol} other violations"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8: valid samples

struct SampleSetup {
    layout: BlockLayout,
    v: DenseMatrix,
    delta: Vec<f64>,
    block_sq: Vec<f64>,
    tau: Vec<f64>,
    params: ValidSampleParams,
}

fn sample_setup(seed: u64) -> SampleSetup {
    let mut r = rng(seed);
    let (m, d) = (64, 6);
    let layout = BlockLayout::from_sizes(&vec![2; m]).unwrap();
    let n = 2 * m;
    let a = DenseMatrix::from_row_major(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    // V = D A with block scalings D_i
    let mut v = DenseMatrix::zeros(n, d);
    for i in 0..m {
        let s = [r.gen_range(0.2..3.0), r.gen_range(0.2..3.0)];
        for (k, c) in layout.range(i).enumerate() {
            let row: Vec<f64> = a.row(c).iter().map(|x| x * s[k]).collect();
            v.set_row(c, &row);
        }
    }
    let mut delta: Vec<f64> = (0..n).map(|_| r.gen_range(-0.1..0.1)).collect();
    for _ in 0..4 {
        let c = r.gen_range(0..n);
        delta[c] = r.gen_range(-3.0..3.0);
    }
    let lev = exact_leverage(&v, 0.0).unwrap();
    let block_sq = (0..m).map(|i| layout.range(i).map(|c| delta[c] * delta[c]).sum()).collect();
    let tau = (0..m).map(|i| layout.range(i).map(|c| lev[c]).sum()).collect();
    let cfg = IpmConfig::new(Profile::Aggressive, Mode::Sketched, n, 2.0 * m as f64);
    let params = ValidSampleParams {
        alpha: cfg.alpha,
        gamma: cfg.eps,
        count_factor: cfg.r_count_factor,
        log_n: (n as f64).ln(),
        max_individual_draws: 1 << 16,
    };
    SampleSetup {
        layout,
        v,
        delta,
        block_sq,
        tau,
        params,
    }
}

fn criterion_8() -> Outcome {
    let s = sample_setup(8);
    let m = s.layout.blocks();
    let n = s.layout.total();
    let c_var2 = 16.0;
    let alpha = s.params.alpha;
    let dnorm = norm(&s.delta);
    let draws = 100_000usize;
    let mut r = rng(88);
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; n];
    let mut sum_rd = vec![0.0; n];
    let mut cross = vec![0.0; m * m];
    let mut max_fail = 0;
    for _ in 0..draws {
        let mut sampler = CategoricalSampler::new(&s.block_sq);
        let rm = build_valid_r(&s.block_sq, &s.tau, &s.params, &mut sampler, &mut r).unwrap();
        for i in 0..m {
            sum[i] += rm.r[i];
            for j in 0..i {
                cross[i * m + j] += rm.r[i] * rm.r[j];
            }
        }
        let rd = rm.apply(&s.layout, &s.delta);
        let mut dev = 0.0f64;
        for c in 0..n {
            sum_rd[c] += rd[c];
            sum_sq[c] += rd[c] * rd[c];
            dev = dev.max((rd[c] - s.delta[c]).abs());
        }
        if dev > alpha * dnorm / c_var2 {
            max_fail += 1;
        }
    }
    let dn = draws as f64;
    let mean_err = sum.iter().map(|x| (x / dn - 1.0).abs()).fold(0.0, f64::max);
    let mut var_ratio = 0.0f64;
    for c in 0..n {
        let mean = sum_rd[c] / dn;
        let var = (sum_sq[c] / dn - mean * mean).max(0.0);
        let bound = alpha * s.delta[c].abs() * dnorm / c_var2;
        var_ratio = var_ratio.max(var / bound);
    }
    let max_cross = cross.iter().map(|x| x / dn).fold(0.0, f64::max);

    let mut spectral = 0;
    for seed in 0..100u64 {
        let s = sample_setup(800 + seed);
        let mut r = rng(seed);
        let mut sampler = CategoricalSampler::new(&s.block_sq);
        let rm = build_valid_r(&s.block_sq, &s.tau, &s.params, &mut sampler, &mut r).unwrap();
        let w = rm.apply(&s.layout, &vec![1.0; s.layout.total()]);
        let sampled = weighted_gram(&s.v, &w).unwrap();
        if loewner_approx(&gram(&s.v, 0.0), &sampled, s.params.alpha).unwrap() {
            spectral += 1;
        }
    }
    outcome(
        mean_err <= 0.01 && var_ratio <= 1.0 && max_cross <= 2.0 && max_fail == 0 && spectral >= 95,
        format!(
            "max |E R - 1| {mean_err:.2e}, variance/bound {var_ratio:.2e}, max E[R_i R_j] {max_cross:.4}, max-bound failures {max_fail}/{draws}, spectral {spectral}/100"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9: maintenance contracts and refresh counts

fn slack_shadow(hh: HhConfig, seed: u64) -> (usize, f64, usize) {
    let mut r = rng(seed);
    let (m, d) = (128, 8);
    let n = 2 * m;
    let layout = BlockLayout::from_sizes(&vec![2; m]).unwrap();
    let a = DenseMatrix::from_row_major(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let ds: Vec<DenseMatrix> = (0..m)
        .map(|_| DenseMatrix::from_diag(&[r.gen_range(0.5..2.0), r.gen_range(0.5..2.0)]))
        .collect();
    let eps = 0.1;
    let cfg = SlackConfig {
        eps,
        horizon_log2: 10,
        hh,
        seed,
    };
    let mut sm = SlackMaintainer::new(a.clone(), layout.clone(), ds.clone(), vec![0.0; n], &cfg).unwrap();
    let mut dcur = ds;
    let mut shadow = vec![0.0; n];
    let mut bar = vec![0.0; n];
    let mut violations = 0;
    let mut worst = 0.0f64;
    for step in 0..10_000 {
        let mut h: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let scale = r.gen_range(0.0..0.2) / sm.step_norm(&h).unwrap();
        h.iter_mut().for_each(|v| *v *= scale);
        let ah = a.matvec(&h).unwrap();
        for (s, v) in shadow.iter_mut().zip(&ah) {
            *s += v;
        }
        sm.update_slack(&h).unwrap();
        if step % 97 == 0 {
            let i = r.gen_range(0..m);
            let dn = DenseMatrix::from_diag(&[r.gen_range(0.5..2.0), r.gen_range(0.5..2.0)]);
            sm.update_scaling(i, dn.clone()).unwrap();
            dcur[i] = dn;
        }
        // exact shadow: compare the maintained s_bar against the independently summed slack
        bar.copy_from_slice(sm.s_bar());
        for i in 0..m {
            let rr = layout.range(i);
            let diff: Vec<f64> = rr.clone().map(|c| shadow[c] - bar[c]).collect();
            let e = norm(&dcur[i].matvec(&diff).unwrap());
            worst = worst.max(e);
            if e > eps + 1e-12 {
                violations += 1;
            }
        }
    }
    (violations, worst, sm.stats.sketched_windows)
}

fn primal_shadow(seed: u64) -> (usize, f64) {
    let mut r = rng(seed);
    let m = 128;
    let layout = BlockLayout::from_sizes(&vec![2; m]).unwrap();
    let n = layout.total();
    let beta = 0.01;
    let mut tr = PrimalTracker::new(layout.clone(), beta);
    let mut x = vec![0.0; n];
    let mut x_bar = vec![0.0; n];
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0) * beta / 40.0).collect();
        let mut rs = vec![0.0; n];
        for _ in 0..4 {
            let c = r.gen_range(0..n);
            rs[c] = r.gen_range(-1.0..1.0) * beta / 10.0;
        }
        for c in 0..n {
            x[c] += g[c] - rs[c];
        }
        for i in tr.update(&g, &rs) {
            for c in layout.range(i) {
                x_bar[c] = x[c];
            }
        }
        for i in 0..m {
            let e = layout.range(i).map(|c| (x[c] - x_bar[c]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(e);
            if e > beta {
                violations += 1;
            }
        }
    }
    (violations, worst / beta)
}

fn box_instance(n: usize, d: usize, seed: u64) -> ErmInstance {
    let mut r = rng(seed);
    let a = DenseMatrix::from_row_major(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let x0: Vec<f64> = (0..n).map(|_| r.gen_range(0.2..0.8)).collect();
    let b = a.tr_matvec(&x0).unwrap();
    let c: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let bars = (0..n)
        .map(|_| BarrierKind::Box { lower: vec![0.0], upper: vec![1.0] }.into())
        .collect();
    ErmInstance::new(a, b, c, bars, 100.0).unwrap()
}

fn criterion_9() -> Outcome {
    let (v_default, w_default, _) = slack_shadow(HhConfig::default(), 91);
    let sketchy = HhConfig {
        bucket_factor: 1e-3,
        max_bucket_factor: 1e3,
        ..HhConfig::default()
    };
    let (v_sketch, w_sketch, windows) = slack_shadow(sketchy, 92);
    let (v_primal, w_primal) = primal_shadow(93);

    let sizes = [64usize, 128, 256, 512];
    let mut pts = Vec::new();
    let mut counts = Vec::new();
    for &n in &sizes {
        let inst = box_instance(n, 4, 7);
        let cfg = IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Sketched).with_seed(1);
        let rep = solve(&inst, 1e-2, cfg).expect("sketched solve");
        let st = rep.sketch.expect("sketch stats");
        // every block is one coordinate
        let total = st.x_refreshes + st.s_refreshes;
        counts.push(total);
        pts.push(((n as f64).ln(), (total as f64).ln()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    outcome(
        v_default == 0 && v_sketch == 0 && v_primal == 0 && windows > 0 && slope < 1.3,
        format!(
            "slack violations {v_default} + {v_sketch} (worst/eps {:.3}, {:.3}; {windows} sketched windows), primal violations {v_primal} (worst/beta {w_primal:.3}), refresh counts {counts:?} slope {slope:.3}",
            w_default / 0.1,
            w_sketch / 0.1
        ),
    )
}

// ---------------------------------------------------------------------------
// 10: duality on one-dimensional square-loss problems

fn grid_min(spec: &PrimalErmSpec, lo: f64, hi: f64) -> f64 {
    let f = |y: f64| primal_objective(spec, &[y]).unwrap();
    let coarse = 20_000;
    let h = (hi - lo) / coarse as f64;
    let mut best = (f(lo), lo);
    for k in 0..=coarse {
        let y = lo + k as f64 * h;
        let v = f(y);
        if v < best.0 {
            best = (v, y);
        }
    }
    let fine = 2_000;
    let (a, b) = (best.1 - h, best.1 + h);
    for k in 0..=fine {
        let y = a + (b - a) * k as f64 / fine as f64;
        let v = f(y);
        if v < best.0 {
            best = (v, y);
        }
    }
    best.0
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = 0;
    for k in 0..20u64 {
        let mut r = rng(1000 + k);
        let spec = loop {
            let blocks: Vec<PrimalBlock> = (0..r.gen_range(2..=6))
                .map(|_| {
                    let rows = r.gen_range(1..=2);
                    PrimalBlock {
                        a: (0..rows).map(|_| vec![r.gen_range(-2.0..2.0)]).collect(),
                        shift: (0..rows).map(|_| r.gen_range(-2.0..2.0)).collect(),
                        loss: LossDescriptor::Square,
                    }
                })
                .collect();
            let s2: f64 = blocks.iter().flat_map(|b| b.a.iter().map(|row| row[0] * row[0])).sum();
            if s2 >= 0.5 {
                break PrimalErmSpec {
                    dim: 1,
                    blocks,
                    kappa: None,
                    name: None,
                };
            }
        };
        let primal = grid_min(&spec, -20.0, 20.0);
        let inst = dualize(&spec).unwrap();
        let cfg = IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Exact);
        let dual = solve(&inst, 1e-7, cfg).unwrap().objective;
        let err = (primal + dual).abs();
        worst = worst.max(err);
        if err <= 1e-4 {
            ok += 1;
        }
    }
    outcome(ok == 20, format!("{ok}/20 agree within 1e-4 (worst {worst:.2e})"))
}

// ---------------------------------------------------------------------------
// 11: determinant downdate

fn criterion_11() -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = r.gen_range(1..=12);
        let b = DenseMatrix::from_row_major(d + 3, d, (0..(d + 3) * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = gram(&b, 0.1);
        let mut v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let tau0 = cholesky(&g).unwrap().inv_quad(&v);
        let target = r.gen_range(0.01..0.95);
        v.iter_mut().for_each(|x| *x *= (target / tau0).sqrt());
        let tau = cholesky(&g).unwrap().inv_quad(&v);
        let mut down = g.clone();
        down.add_outer(-1.0, &v);
        let lhs = logdet(&down).unwrap();
        let rhs = logdet(&g).unwrap() + (1.0 - tau).ln();
        // relative error of det(G - v v^T) against det(G)(1 - tau)
        worst = worst.max((lhs - rhs).exp_m1().abs());
    }
    outcome(worst <= 1e-10, format!("max relative error {worst:.2e} over 1000 trials"))
}

// ---------------------------------------------------------------------------
// 12: barrier calculus

fn criterion_12() -> Outcome {
    let mut r = rng(12);
    let mut lines = Vec::new();
    let mut all = true;
    for kind in builtin_catalog() {
        let rep = check_barrier(&kind, 100, &mut r).unwrap();
        let ok = rep.passes(1e-5);
        all &= ok;
        lines.push(format!(
            "{} grad {:.1e} hess {:.1e} nu {:.3}{}",
            kind.name(),
            rep.grad_fd_rel,
            rep.hess_fd_rel,
            rep.max_nu_ratio,
            if ok { "" } else { " FAIL" }
        ));
    }
    outcome(all, lines.join("; "))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("leverage overestimates", criterion_1),
        ("batch count", criterion_2),
        ("between-batch drift", criterion_3),
        ("sparsifier quality", criterion_4),
        ("heavy hitters", criterion_5),
        ("exact IPM", criterion_6),
        ("sketched vs exact", criterion_7),
        ("valid samples", criterion_8),
        ("maintenance", criterion_9),
        ("duality", criterion_10),
        ("determinant downdate", criterion_11),
        ("barrier calculus", criterion_12),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !res.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<24} {}  {} [{:.1} s]",
            name,
            if res.pass { "PASS" } else { "FAIL" },
            res.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

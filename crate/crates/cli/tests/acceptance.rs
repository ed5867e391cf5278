//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero when any criterion fails.
//!
//!     cargo test --release -p cfdbal-cli --test acceptance [-- 1 4 7]
//!
//! Criteria 5 and 6 share one Monte Carlo study (about 25 minutes on one
//! core). Criterion 8 runs only when CFDBAL_401K_CSV points at the data.

use std::path::PathBuf;
use std::time::Instant;

use cfdbal::balance::{balance_weights, BalanceConfig};
use cfdbal::cfd::{cfd2_two_sample, cfd_report, GroupSpec};
use cfdbal::estimators::{ate_weighted, late_weighted, Dataset, Estimand};
use cfdbal::inference::{CiChoice, InferenceSettings};
use cfdbal::kernels::{gram, rf_gram_matrix, sample_frequencies, SpectralDensity};
use cfdbal::qp::{kkt_residuals, solve_qp, QpProblem, QpSettings, QpStatus};
use cfdbal::sim::{run_study, Method, Propensity, ScenarioConfig, SimRow, StudyResult, TableRow};
use cfdbal_cli::config::{ColumnSpec, RunConfig, WeightMethod};
use cfdbal_cli::run::run_estimate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome { verdict: if ok { Verdict::Pass } else { Verdict::Fail }, detail }
}

fn random_x(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
}

fn random_groups(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut z: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
    z[0] = 1;
    z[1] = 0;
    z
}

fn feasible_weights(rng: &mut ChaCha8Rng, z: &[u8]) -> Vec<f64> {
    let mut w: Vec<f64> = z.iter().map(|_| rng.random_range(0.0..3.0)).collect();
    let g = GroupSpec::new(z).unwrap();
    let (s1, s0) = g.group_sums(&w);
    for (i, v) in w.iter_mut().enumerate() {
        *v *= if z[i] == 1 { g.n1() as f64 / s1 } else { g.n0() as f64 / s0 };
    }
    w
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().cloned().collect()
}

/// Σᵢⱼ aᵢ bⱼ k(xᵢ, xⱼ) by explicit loops.
fn loop_form(dens: &SpectralDensity, x: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.nrows() {
            s += a[i] * b[j] * dens.kernel(&row(x, i), &row(x, j)).unwrap();
        }
    }
    s
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut self_dist: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=50);
        let d = rng.random_range(1..=10);
        let x = random_x(&mut rng, n, d);
        let k = gram(&SpectralDensity::gaussian(rng.random_range(0.3..3.0), d).unwrap(), &x, None).unwrap().k;
        self_dist = self_dist.max(cfd2_two_sample(&k, &k, &k, None, None).unwrap().abs());
    }

    let mut psd_ok = true;
    let mut worst_eig = f64::INFINITY;
    for _ in 0..30 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=10);
        let x = random_x(&mut rng, n, d);
        let gamma = rng.random_range(0.3..3.0);
        for dens in [
            SpectralDensity::gaussian(gamma, d).unwrap(),
            SpectralDensity::cauchy_product(gamma, d).unwrap(),
            SpectralDensity::matern_order(gamma, 2.5, d).unwrap(),
            SpectralDensity::matern_order(gamma, 0.5, d).unwrap(),
        ] {
            let e = gram(&dens, &x, None).unwrap().min_eigenvalue();
            worst_eig = worst_eig.min(e / n as f64);
            psd_ok &= e >= -1e-8 * n as f64;
        }
    }

    let mut loop_err: f64 = 0.0;
    for trial in 0..50 {
        let n = rng.random_range(2..=50);
        let x = random_x(&mut rng, n, 3);
        let z = random_groups(&mut rng, n);
        let w = feasible_weights(&mut rng, &z);
        let dens = if trial % 2 == 0 {
            SpectralDensity::gaussian(1.0, 3).unwrap()
        } else {
            SpectralDensity::cauchy_product(1.0, 3).unwrap()
        };
        let groups = GroupSpec::new(&z).unwrap();
        let r = cfd_report(&gram(&dens, &x, None).unwrap(), &groups, &w).unwrap();
        let a1: Vec<f64> = (0..n).map(|i| if z[i] == 1 { w[i] / groups.n1() as f64 } else { 0.0 }).collect();
        let a0: Vec<f64> = (0..n).map(|i| if z[i] == 0 { w[i] / groups.n0() as f64 } else { 0.0 }).collect();
        let u = vec![1.0 / n as f64; n];
        let uu = loop_form(&dens, &x, &u, &u);
        let l1 = loop_form(&dens, &x, &a1, &a1) + uu - 2.0 * loop_form(&dens, &x, &a1, &u);
        let l0 = loop_form(&dens, &x, &a0, &a0) + uu - 2.0 * loop_form(&dens, &x, &a0, &u);
        let l10 = loop_form(&dens, &x, &a1, &a1) + loop_form(&dens, &x, &a0, &a0) - 2.0 * loop_form(&dens, &x, &a1, &a0);
        for (m, l) in [(r.cfd1_fn, l1), (r.cfd0_fn, l0), (r.cfd1_0, l10)] {
            loop_err = loop_err.max((m - l).abs());
        }
    }

    let mut energy_min = f64::INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(2..=50);
        let x = random_x(&mut rng, n, 4);
        let z = random_groups(&mut rng, n);
        let w = feasible_weights(&mut rng, &z);
        let k = gram(&SpectralDensity::energy(4).unwrap(), &x, None).unwrap();
        energy_min = energy_min.min(cfd_report(&k, &GroupSpec::new(&z).unwrap(), &w).unwrap().cfd1_0);
    }

    judge(
        self_dist <= 1e-10 && psd_ok && loop_err <= 1e-8 && energy_min >= -1e-8,
        format!(
            "self-distance max {self_dist:.1e}; min λ/n {worst_eig:.1e}; loop error {loop_err:.1e}; energy cfd1_0 min {energy_min:.1e}"
        ),
    )
}

fn simplex(quad: &[f64], lin: &[f64], total: f64) -> QpProblem {
    let n = lin.len();
    QpProblem::new(
        DMatrix::from_row_slice(n, n, quad),
        DVector::from_row_slice(lin),
        DMatrix::from_element(1, n, 1.0),
        DVector::from_element(1, total),
    )
    .unwrap()
}

struct Instance {
    quad: DMatrix<f64>,
    lin: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng, n: usize, m: usize, ridge: f64, rank: usize) -> Self {
        let f = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
        let mut quad = f.transpose() * f;
        for i in 0..n {
            quad[(i, i)] += ridge;
        }
        let lin = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.2..1.0));
        let b = &a * DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0));
        Self { quad, lin, a, b }
    }

    fn problem(&self) -> QpProblem {
        QpProblem::new(self.quad.clone(), self.lin.clone(), self.a.clone(), self.b.clone()).unwrap()
    }

    /// Best feasible KKT point over every free set of w ≥ 0.
    fn enumerate(&self) -> DVector<f64> {
        let (n, m) = (self.lin.len(), self.a.nrows());
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << n) {
            let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let nf = free.len();
            if nf < m {
                continue;
            }
            let mut kkt = DMatrix::zeros(nf + m, nf + m);
            let mut rhs = DVector::zeros(nf + m);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    kkt[(r, c)] = 2.0 * self.quad[(i, j)];
                }
                for k in 0..m {
                    kkt[(r, nf + k)] = self.a[(k, i)];
                    kkt[(nf + k, r)] = self.a[(k, i)];
                }
                rhs[r] = -self.lin[i];
            }
            for k in 0..m {
                rhs[nf + k] = self.b[k];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let mut w = DVector::zeros(n);
            for (r, &i) in free.iter().enumerate() {
                w[i] = sol[r];
            }
            if w.iter().any(|v| !v.is_finite() || *v < -1e-12) || (&self.a * &w - &self.b).amax() > 1e-9 {
                continue;
            }
            let obj = w.dot(&(&self.quad * &w)) + self.lin.dot(&w);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, w));
            }
        }
        best.unwrap().1
    }
}

fn criterion_2() -> Outcome {
    let s = QpSettings::default();
    let hand = [
        (simplex(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2.0), [1.0, 1.0]),
        (simplex(&[1.0, 0.0, 0.0, 2.0], &[0.0, 0.0], 1.0), [2.0 / 3.0, 1.0 / 3.0]),
        (simplex(&[1.0, 0.0, 0.0, 1.0], &[-10.0, 0.0], 1.0), [1.0, 0.0]),
    ];
    let hand_err = hand
        .iter()
        .map(|(p, want)| {
            let w = solve_qp(p, &s).unwrap().w;
            (w[0] - want[0]).abs().max((w[1] - want[1]).abs())
        })
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut enum_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=n.min(2));
        let inst = Instance::random(&mut rng, n, m, 0.05, n);
        let w = solve_qp(&inst.problem(), &s).unwrap().w;
        let oracle = inst.enumerate();
        enum_err = enum_err.max((0..n).map(|i| (w[i] - oracle[i]).abs()).fold(0.0, f64::max));
    }

    let mut kkt: f64 = 0.0;
    let mut unsolved = 0;
    for trial in 0..100 {
        let n = rng.random_range(2..=30);
        let m = rng.random_range(1..=3.min(n));
        let rank = if trial % 2 == 0 { n } else { rng.random_range(1..=n) };
        let p = Instance::random(&mut rng, n, m, 0.0, rank).problem();
        let sol = solve_qp(&p, &s).unwrap();
        unsolved += (sol.status != QpStatus::Solved) as usize;
        let r = kkt_residuals(&p, &DVector::from_vec(sol.w));
        kkt = kkt.max(r.primal).max(r.dual).max(r.complementarity);
    }

    let mut scale_err: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..=20);
        let p = Instance::random(&mut rng, n, 2.min(n), 0.01, n).problem();
        let base = solve_qp(&p, &s).unwrap().w;
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let w = solve_qp(&p.scale_objective(c), &s).unwrap().w;
            scale_err = scale_err.max((0..n).map(|i| (w[i] - base[i]).abs()).fold(0.0, f64::max));
        }
    }

    judge(
        hand_err <= 1e-5 && enum_err <= 1e-5 && kkt <= 1e-5 && unsolved == 0 && scale_err <= 1e-6,
        format!(
            "hand {hand_err:.1e}; enumeration {enum_err:.1e}; KKT {kkt:.1e} ({unsolved} unsolved); scaling {scale_err:.1e}"
        ),
    )
}

fn max_rf_error(dens: &SpectralDensity, diffs: &DMatrix<f64>, truth: &[f64], l: usize, seed: u64) -> f64 {
    let f = sample_frequencies(dens, l, seed).unwrap();
    let mut worst: f64 = 0.0;
    for start in (0..diffs.nrows()).step_by(10) {
        let len = 10.min(diffs.nrows() - start);
        // Kernels depend on x − x' only: evaluate each difference against the origin.
        let mut x = DMatrix::zeros(len + 1, diffs.ncols());
        x.rows_mut(0, len).copy_from(&diffs.rows(start, len));
        let k = rf_gram_matrix(&x, &f).unwrap();
        for r in 0..len {
            worst = worst.max((k[(r, len)] - truth[start + r]).abs());
        }
    }
    worst
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let d = 2;
    let dens = SpectralDensity::cauchy_product(1.0, d).unwrap();
    let a = DMatrix::from_fn(100, d, |_, _| rng.random_range(0.0..1.0));
    let b = DMatrix::from_fn(100, d, |_, _| rng.random_range(0.0..1.0));
    let diffs = &a - &b;
    let truth: Vec<f64> = (0..100).map(|i| dens.kernel(&row(&a, i), &row(&b, i)).unwrap()).collect();
    let seeds = [1u64, 2, 3];
    let coarse: Vec<f64> = seeds.iter().map(|&s| max_rf_error(&dens, &diffs, &truth, 10_000, s)).collect();
    let fine: Vec<f64> = seeds.iter().map(|&s| max_rf_error(&dens, &diffs, &truth, 1_000_000, 1000 + s)).collect();
    let ratio = coarse.iter().sum::<f64>() / fine.iter().sum::<f64>();
    judge(
        coarse.iter().all(|e| *e <= 0.05) && (5.0..=20.0).contains(&ratio),
        format!("max error at L = 1e4: {:.4} (seeds {coarse:.4?}); shrink factor at L = 1e6: {ratio:.2}", coarse[0]),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut ok = true;
    let mut notes = Vec::new();
    for _ in 0..20 {
        let n = rng.random_range(10..60);
        let z = random_groups(&mut rng, n);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = random_x(&mut rng, n, 3);
        let d = Dataset::new(y.clone(), z.clone(), Some(z.clone()), x.clone()).unwrap();

        let (mut t, mut c, mut n1) = (0.0, 0.0, 0.0);
        for i in 0..n {
            if z[i] == 1 {
                t += y[i];
                n1 += 1.0;
            } else {
                c += y[i];
            }
        }
        let diff = t / n1 - c / (n as f64 - n1);
        ok &= ate_weighted(&d, &vec![1.0; n]).unwrap().value == diff;

        let w = balance_weights(&x, &z, &BalanceConfig::default()).unwrap().w;
        ok &= late_weighted(&d, &w).unwrap().value == ate_weighted(&d, &w).unwrap().value;

        let constant = d.with_outcome(vec![rng.random_range(-100.0..100.0); n]).unwrap();
        let worst = [vec![1.0; n], w.clone(), feasible_weights(&mut rng, &z)]
            .iter()
            .map(|w| ate_weighted(&constant, w).unwrap().value.abs())
            .fold(0.0, f64::max);
        if worst > 1e-12 {
            ok = false;
            notes.push(format!("constant outcome gave {worst:e}"));
        }
    }
    judge(ok, if notes.is_empty() { "20 random data sets, exact equality".into() } else { notes.join("; ") })
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn save(name: &str, study: &StudyResult) {
    let path = out_dir().join(name);
    std::fs::write(&path, serde_json::to_string_pretty(study).unwrap()).unwrap();
    println!("    study written to {}", path.display());
}

fn print_rows(study: &StudyResult) {
    println!("    oracle LATE {:.4} (se {:.1e})", study.oracle.value, study.oracle.se);
    for r in &study.rows {
        let t = TableRow::from(r);
        println!(
            "    {:<22} n={:<4} bias×100 {:>7.2}  ESE×100 {:>7.2}  cov SS {}  cov boot {}  failures {}",
            t.method,
            t.n,
            t.bias_x100,
            t.ese_x100.unwrap_or(f64::NAN),
            fmt_opt(t.coverage_ss),
            fmt_opt(t.coverage_boot),
            t.failures
        );
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

fn find<'a>(study: &'a StudyResult, label: &str) -> &'a SimRow {
    study.rows.iter().find(|r| r.method.starts_with(label)).unwrap()
}

fn table_study() -> StudyResult {
    let config = ScenarioConfig {
        propensity: Propensity::Nonlinear,
        n: 400,
        reps: 200,
        methods: vec!["gaussian".parse().unwrap(), "energy".parse().unwrap(), Method::Ipw],
        ..ScenarioConfig::default()
    };
    let study = run_study(&config).unwrap();
    print_rows(&study);
    save("nonlinear_n400.json", &study);
    study
}

fn criterion_5(study: &StudyResult) -> Outcome {
    let g = find(study, "gaussian");
    let ipw = find(study, "ipw");
    let cov = g.coverage_ss.unwrap_or(0.0);
    judge(
        g.bias.abs() <= 0.08 && cov >= 0.92 && (-0.45..=-0.20).contains(&ipw.bias),
        format!(
            "gaussian bias {:.4} (≤ 0.08), SS coverage {cov:.3} (≥ 0.92); ipw bias {:.4} (in [-0.45, -0.20])",
            g.bias, ipw.bias
        ),
    )
}

fn criterion_6(study: &StudyResult) -> Outcome {
    let e = find(study, "energy");
    let (ss, bs) = (e.coverage_ss.unwrap_or(0.0), e.coverage_boot.unwrap_or(1.0));
    judge(
        ss > bs && ss >= 0.94 && bs <= 0.95,
        format!("energy SS coverage {ss:.3} (≥ 0.94), bootstrap {bs:.3} (≤ 0.95)"),
    )
}

fn criterion_7() -> Outcome {
    let ese = |n: usize| {
        let config = ScenarioConfig {
            propensity: Propensity::Linear,
            n,
            reps: 200,
            methods: vec!["gaussian".parse().unwrap()],
            inference: InferenceSettings { ci: CiChoice::None, ..InferenceSettings::study() },
            ..ScenarioConfig::default()
        };
        let study = run_study(&config).unwrap();
        print_rows(&study);
        save(&format!("linear_n{n}.json"), &study);
        study.rows[0].ese.unwrap()
    };
    let (small, large) = (ese(100), ese(400));
    let ratio = small / large;
    judge(
        (1.4..=2.8).contains(&ratio),
        format!("ESE(100) {small:.4}, ESE(400) {large:.4}, ratio {ratio:.3} (in [1.4, 2.8])"),
    )
}

fn criterion_8() -> Outcome {
    let Ok(path) = std::env::var("CFDBAL_401K_CSV") else {
        return Outcome { verdict: Verdict::Skip, detail: "CFDBAL_401K_CSV not set".into() };
    };
    let columns: ColumnSpec = toml::from_str(include_str!("../../../data/401k_columns.toml")).unwrap();
    let config = RunConfig {
        data: Some(path.into()),
        columns,
        weights: WeightMethod::Cfd,
        estimand: Estimand::Late,
        // The grid search over subsample sizes is out of reach at this n.
        inference: InferenceSettings::study(),
        ..RunConfig::default()
    };
    match run_estimate(&config) {
        Ok(r) => {
            let v = r.estimate.value;
            let excludes = |ci: Option<&cfdbal::inference::CiResult>| ci.is_some_and(|c| c.lower > 0.0 || c.upper < 0.0);
            let (ss, bs) = (r.intervals.subsampling.as_ref(), r.intervals.bootstrap.as_ref());
            judge(
                (10_000.0..=14_000.0).contains(&v) && excludes(ss) && excludes(bs),
                format!(
                    "LATE {v:.0}; SS ({:.0}, {:.0}); bootstrap ({:.0}, {:.0})",
                    ss.map_or(f64::NAN, |c| c.lower),
                    ss.map_or(f64::NAN, |c| c.upper),
                    bs.map_or(f64::NAN, |c| c.lower),
                    bs.map_or(f64::NAN, |c| c.upper)
                ),
            )
        }
        Err(e) => judge(false, format!("run failed: {e}")),
    }
}

const NAMES: [&str; 8] = [
    "property suite",
    "QP correctness",
    "random-feature convergence",
    "estimator identities",
    "scaled nonlinear study (gaussian, ipw)",
    "subsampling vs bootstrap (energy)",
    "root-n scaling (linear, gaussian)",
    "401(k) data",
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |c: usize| selected.is_empty() || selected.contains(&c);
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut study: Option<StudyResult> = None;
    for c in 1..=8 {
        if !wanted(c) {
            continue;
        }
        println!("[{c}] {} ...", NAMES[c - 1]);
        let t = Instant::now();
        let outcome = match c {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 | 6 => {
                let s = study.get_or_insert_with(table_study);
                if c == 5 {
                    criterion_5(s)
                } else {
                    criterion_6(s)
                }
            }
            7 => criterion_7(),
            _ => criterion_8(),
        };
        results.push((c, outcome, t.elapsed().as_secs_f64()));
    }
    println!();
    let mut failed = false;
    for (c, o, secs) in &results {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed = true;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} {c} {} [{secs:.0}s]: {}", NAMES[c - 1], o.detail);
    }
    if failed {
        std::process::exit(1);
    }
}

//! End-to-end acceptance checks, one line per criterion.
//!
//! The full grokking reproduction takes hours, so by default criterion 7 runs
//! its reduced pipeline-health variant. Set `ATTN_THERMO_GROK_RUNS` to a
//! directory produced by `attn-thermo grok --p 19 --seeds 0..4` to evaluate
//! the full criterion from its CSV files, or `ATTN_THERMO_FULL_GROK=1` to
//! train the five seeds in-process.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use attn_thermo::cli;
use attn_thermo::equilibrium::{
    observables, relax_to_equilibrium, softmax_equilibrium, specific_heat, DynamicsConfig, EnergyVector,
};
use attn_thermo::grokking::{read_metrics_csv, run_experiment, GrokConfig, RunOptions, RunStatus, TrainRunRecord};
use attn_thermo::infogeom::ProbabilityVector;
use attn_thermo::langevin::{
    crossover_summary, cw_potential, simulate, AnnealSchedule, CWPotentialParams, LangevinConfig,
};
use attn_thermo::rope::{apply_rope, curvature_split, default_theta_schedule, rope_energy_shift, RotaryParams};
use attn_thermo::scaling::{fit_power_law, ScalingPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    id: &'static str,
    title: &'static str,
    status: Status,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { id, title, status: if passed { Status::Pass } else { Status::Fail }, detail }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Closed-form Boltzmann distribution, computed independently of the library.
fn boltzmann(e: &[f64], t: f64) -> Vec<f64> {
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = e.iter().map(|&x| (-(x - min) / t).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_l1, mut worst_identity) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=64);
        let t = log_uniform(&mut rng, 0.1, 100.0);
        let e = EnergyVector::new(normal_vec(&mut rng, n)).unwrap();
        let cfg = DynamicsConfig { step: 0.5 / t, ..DynamicsConfig::default() };
        let init = ProbabilityVector::uniform(n).unwrap();
        match relax_to_equilibrium(&e, t, &init, &cfg) {
            Ok(r) => {
                let exact = boltzmann(e.as_slice(), t);
                let l1: f64 = r.state.rho().as_slice().iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum();
                worst_l1 = worst_l1.max(l1);
            }
            Err(_) => failures += 1,
        }
        let o = observables(&softmax_equilibrium(&e, t).unwrap(), n).unwrap();
        worst_identity = worst_identity.max((o.f - (o.u - t * o.s)).abs());
    }
    outcome(
        "1",
        "equilibrium correctness",
        failures == 0 && worst_l1 < 1e-6 && worst_identity < 1e-10,
        format!("100 instances, worst L1 to softmax {worst_l1:.2e} (< 1e-6), worst |F-(U-TS)| {worst_identity:.2e} (< 1e-10), {failures} relaxation failures"),
    )
}

/// `U(T) − min E`, evaluated in a frame where every term is non-negative.
fn shifted_internal_energy(e: &[f64], t: f64) -> f64 {
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    boltzmann(e, t).iter().zip(e).map(|(p, x)| p * (x - min)).sum()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=64);
        let t = log_uniform(&mut rng, 0.1, 100.0);
        let e = normal_vec(&mut rng, n);
        let h = 1e-5 * t;
        let du_dt = (shifted_internal_energy(&e, t + h) - shifted_internal_energy(&e, t - h)) / (2.0 * h);
        let state = softmax_equilibrium(&EnergyVector::new(e.clone()).unwrap(), t).unwrap();
        let cv = specific_heat(&e, state.rho().as_slice(), t);
        worst = worst.max((du_dt - cv).abs() / cv.abs());
    }
    outcome(
        "2",
        "fluctuation-dissipation identity",
        worst < 1e-4,
        format!("100 instances, worst relative error of dU/dT against Var(E)/T^2 {worst:.2e} (< 1e-4)"),
    )
}

fn criterion_3() -> Outcome {
    use common::gradcheck::{check_all_ops, check_transformer, TOLERANCE};
    let mut lines = Vec::new();
    let mut passed = true;
    let mut worst_name = "";
    let mut worst = 0.0f64;
    for seed in [11, 12] {
        match check_all_ops(seed) {
            Ok(reports) => {
                for r in reports {
                    passed &= r.passed();
                    if r.worst > worst {
                        worst = r.worst;
                        worst_name = r.name;
                    }
                }
            }
            Err(e) => {
                passed = false;
                lines.push(format!("error: {e}"));
            }
        }
    }
    for rope in [false, true] {
        match check_transformer(13, rope) {
            Ok(w) => {
                passed &= w < TOLERANCE;
                lines.push(format!("transformer(rope={rope}) {w:.2e}"));
            }
            Err(e) => {
                passed = false;
                lines.push(format!("error: {e}"));
            }
        }
    }
    outcome(
        "3",
        "gradient oracle",
        passed,
        format!("15 ops x 5 shapes x 2 seeds, worst relative error {worst:.2e} ({worst_name}); {}", lines.join(", ")),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_shift = 0.0f64;
    for _ in 0..10_000 {
        let pot = CWPotentialParams::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(0.05..5.0),
            rng.random_range(0.5..2.0),
        )
        .unwrap();
        let rp = RotaryParams::new(rng.random_range(1e-6..std::f64::consts::PI), rng.random_range(0..100_000)).unwrap();
        let (q1, q2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        worst_shift = worst_shift.max(rope_energy_shift(q1, q2, &rp, &pot).unwrap().abs());
    }
    let mut worst_rel = 0.0f64;
    for _ in 0..1_000 {
        let d = 2 * rng.random_range(1..=32);
        let thetas = default_theta_schedule(d, 10_000.0).unwrap();
        let (q, k) = (normal_vec(&mut rng, d), normal_vec(&mut rng, d));
        let (m, n) = (rng.random_range(0..2048i64), rng.random_range(0..2048i64));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let lhs = dot(&apply_rope(&q, m, &thetas).unwrap(), &apply_rope(&k, n, &thetas).unwrap());
        let rhs = dot(&apply_rope(&q, m - n, &thetas).unwrap(), &k);
        worst_rel = worst_rel.max((lhs - rhs).abs());
    }
    outcome(
        "4",
        "rotary invariance",
        worst_shift <= 1e-12 && worst_rel <= 1e-10,
        format!("10^4 samples, worst |dE| {worst_shift:.2e} (<= 1e-12); 10^3 samples, worst relative-position defect {worst_rel:.2e} (<= 1e-10)"),
    )
}

/// Golden-section search for the minimum of `f` on `[a, b]`.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut worst_r, mut worst_ang, mut worst_rad) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let pot = CWPotentialParams::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(0.25..2.0),
            rng.random_range(0.5..2.0),
        )
        .unwrap();
        let analytic = pot.v * (-(pot.alpha + pot.beta) / (2.0 * pot.beta)).exp();
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let along = |r: f64| cw_potential(&[r * angle.cos(), r * angle.sin()], &pot).unwrap();
        let r_num = golden_min(along, 1e-9, 4.0 * analytic);
        worst_r = worst_r.max((r_num - analytic).abs());
        let split = curvature_split(&pot).unwrap();
        worst_ang = worst_ang.max(split.angular.abs());
        worst_rad = worst_rad.max((split.radial - 4.0 * pot.beta).abs() / (4.0 * pot.beta));
    }
    outcome(
        "5",
        "Coleman-Weinberg geometry",
        worst_r <= 1e-6 && worst_ang < 1e-8,
        format!("200 parameter sets, worst |r_min - r*| {worst_r:.2e} (<= 1e-6), worst angular curvature {worst_ang:.2e} (< 1e-8), radial curvature within {worst_rad:.1e} of 4*beta"),
    )
}

fn criterion_6() -> Outcome {
    let (pot, sched, cfg) = (CWPotentialParams::default(), AnnealSchedule::default(), LangevinConfig::default());
    let start = Instant::now();
    let a = simulate(&pot, &sched, &cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let b = simulate(&pot, &sched, &cfg).unwrap();
    let s = crossover_summary(&a).unwrap();
    let trough = pot.with_alpha(sched.alpha_end).trough_radius();
    let ordered = s.initial_abs_phi < 0.05 * trough && (s.final_abs_phi - trough).abs() < 0.05 * trough;
    let deterministic = a == b;
    let mut others = Vec::new();
    for seed in 1..5 {
        let t = simulate(&pot, &sched, &LangevinConfig { seed, ..cfg.clone() }).unwrap();
        others.push(format!("{:.2}", crossover_summary(&t).unwrap().peak_ratio));
    }
    outcome(
        "6",
        "Langevin crossover",
        s.peak_ratio >= 3.0 && ordered && deterministic && elapsed < 60.0,
        format!(
            "seed 0: peak/median {:.2} (>= 3) at t = {}, <|phi|> {:.3} -> {:.3} (trough {:.3}), identical rerun: {deterministic}, {elapsed:.1}s; seeds 1-4 ratios [{}]",
            s.peak_ratio,
            s.peak_time,
            s.initial_abs_phi,
            s.final_abs_phi,
            trough,
            others.join(", ")
        ),
    )
}

/// Independent recomputation of the transition statistics of one run.
struct GrokEvaluation {
    seed: u64,
    memorization: Option<usize>,
    generalization: Option<usize>,
    peak_weighted: usize,
    peak_unweighted: usize,
    global_peak_weighted: usize,
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let (lo_half, hi_half) = ((w - 1) / 2, w / 2);
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(lo_half);
            let hi = (i + hi_half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn first_argmax(x: &[f64]) -> usize {
    (0..x.len()).fold(0, |best, i| if x[i] > x[best] { i } else { best })
}

fn evaluate_grok(seed: u64, records: &[TrainRunRecord]) -> GrokEvaluation {
    let w = 5;
    let memorization = records.iter().find(|r| r.train_acc >= 0.99).map(|r| r.epoch);
    let acc = moving_average(&records.iter().map(|r| r.val_acc).collect::<Vec<_>>(), w);
    let gen_idx = acc.iter().position(|&a| a >= 0.95);
    let limit = gen_idx.map_or(records.len(), |g| (g + w).min(records.len()));
    let peak = |f: fn(&TrainRunRecord) -> f64| {
        let s = moving_average(&records.iter().map(f).collect::<Vec<_>>(), w);
        (records[first_argmax(&s[..limit])].epoch, records[first_argmax(&s)].epoch)
    };
    let (pw, gw) = peak(|r| r.cv_weighted);
    let (pu, _) = peak(|r| r.cv_unweighted);
    GrokEvaluation {
        seed,
        memorization,
        generalization: gen_idx.map(|i| records[i].epoch),
        peak_weighted: pw,
        peak_unweighted: pu,
        global_peak_weighted: gw,
    }
}

fn grok_verdict(evals: &[GrokEvaluation]) -> (bool, String) {
    let delayed =
        evals.iter().filter(|e| matches!((e.memorization, e.generalization), (Some(m), Some(g)) if m < g)).count();
    let precedes = |peak: fn(&GrokEvaluation) -> usize| {
        evals.iter().filter(|e| e.generalization.is_some_and(|g| peak(e) <= g)).count()
    };
    let (pw, pu) = (precedes(|e| e.peak_weighted), precedes(|e| e.peak_unweighted));
    let fmt = |e: Option<usize>| e.map_or("never".to_string(), |x| x.to_string());
    let per_seed: Vec<String> = evals
        .iter()
        .map(|e| {
            format!(
                "seed {}: mem {} gen {} peak(w) {} peak(u) {} global peak(w) {}",
                e.seed,
                fmt(e.memorization),
                fmt(e.generalization),
                e.peak_weighted,
                e.peak_unweighted,
                e.global_peak_weighted
            )
        })
        .collect();
    let n = evals.len();
    let passed = n == 5 && delayed == n && pw.max(pu) >= 4;
    (
        passed,
        format!(
            "(a) delayed generalization in {delayed}/{n} seeds; (b) peak precedes generalization in {pw}/{n} (rho-weighted), {pu}/{n} (unweighted); {}",
            per_seed.join("; ")
        ),
    )
}

fn criterion_7() -> Vec<Outcome> {
    let mut out = Vec::new();

    let start = Instant::now();
    let smoke = GrokConfig::smoke();
    let result = run_experiment(&smoke, RunOptions { reproducible: true });
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok((records, summary)) => {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("metrics.csv");
            attn_thermo::grokking::write_metrics_csv(&records, &path).unwrap();
            let back = read_metrics_csv(&path).unwrap();
            let healthy = !matches!(summary.status, RunStatus::Failed(_))
                && back == records
                && records.windows(2).all(|w| w[0].epoch < w[1].epoch)
                && records.iter().all(|r| {
                    [
                        r.train_loss,
                        r.val_loss,
                        r.cv_weighted,
                        r.cv_unweighted,
                        r.weight_norm_sq,
                        r.t_eff,
                        r.attn_entropy,
                    ]
                    .iter()
                    .all(|v| v.is_finite())
                });
            out.push(outcome(
                "7-smoke",
                "grokking pipeline health (p = 19, d_model 64, 5000 epochs)",
                healthy && elapsed < 1800.0,
                format!(
                    "{} epochs in {elapsed:.0}s, final train/val acc {:.3}/{:.3}, memorization {:?}, generalization {:?}, schema round trip ok: {}",
                    summary.epochs_run,
                    summary.final_train_acc,
                    summary.final_val_acc,
                    summary.memorization_epoch,
                    summary.generalization_epoch,
                    back == records
                ),
            ));
        }
        Err(e) => out.push(outcome("7-smoke", "grokking pipeline health", false, e.to_string())),
    }

    let runs_dir = std::env::var_os("ATTN_THERMO_GROK_RUNS").map(PathBuf::from);
    let full_in_process = std::env::var("ATTN_THERMO_FULL_GROK").is_ok_and(|v| v == "1");
    let tmp;
    let dir: Option<PathBuf> = if let Some(d) = runs_dir {
        Some(d)
    } else if full_in_process {
        tmp = tempfile::tempdir().unwrap();
        let out_dir = tmp.path().to_string_lossy().into_owned();
        let args = ["attn-thermo", "grok", "--p", "19", "--seeds", "0..4", "--reproducible", "--out", &out_dir];
        cli::run(args);
        Some(tmp.path().to_path_buf())
    } else {
        None
    };
    match dir {
        Some(dir) => {
            let mut evals = Vec::new();
            let mut missing = Vec::new();
            for seed in 0..5 {
                let path = dir.join(format!("grok-p19-seed{seed}")).join("metrics.csv");
                match read_metrics_csv(&path) {
                    Ok(records) => evals.push(evaluate_grok(seed, &records)),
                    Err(e) => missing.push(format!("seed {seed}: {e}")),
                }
            }
            let (passed, detail) = grok_verdict(&evals);
            let detail =
                if missing.is_empty() { detail } else { format!("{detail}; unreadable: {}", missing.join(", ")) };
            out.push(outcome("7", "grokking reproduction (p = 19, 5 seeds, default config)", passed, detail));
        }
        None => out.push(Outcome {
            id: "7",
            title: "grokking reproduction (p = 19, 5 seeds, default config)",
            status: Status::NotRun,
            detail:
                "not run in this invocation (multi-hour); set ATTN_THERMO_GROK_RUNS=<dir> or ATTN_THERMO_FULL_GROK=1"
                    .into(),
        }),
    }
    out
}

fn criterion_8() -> Outcome {
    let moduli = [19u64, 23, 37, 59, 97, 113];
    let mut worst_a = 0.0f64;
    let mut worst_r2 = 0.0f64;
    for i in 0..=40 {
        let a = -2.0 + 0.1 * i as f64;
        for c in [0.01, 1.0, 250.0] {
            let points: Vec<ScalingPoint> = moduli
                .iter()
                .map(|&p| ScalingPoint { p, cv_peak_mean: c * (p as f64).powf(a), cv_peak_std: 0.0, n_seeds: 5 })
                .collect();
            let fit = fit_power_law(&points).unwrap();
            worst_a = worst_a.max((fit.exponent_a - a).abs());
            worst_r2 = worst_r2.max((fit.r_squared - 1.0).abs());
        }
    }
    outcome(
        "8",
        "scaling machinery",
        worst_a <= 1e-9 && worst_r2 <= 1e-9,
        format!("123 planted fits, exponents in [-2, 2]: worst |a - a_true| {worst_a:.2e} (<= 1e-9), worst |R^2 - 1| {worst_r2:.2e}"),
    )
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let roots = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut codes = Vec::new();
    for root in &roots {
        let r = root.path();
        let sub = |name: &str| r.join(name).to_string_lossy().into_owned();
        let (eq, lv, gr, sc) = (sub("equilibrium"), sub("langevin"), sub("grok"), sub("scaling"));
        codes.push(cli::run([
            "attn-thermo",
            "equilibrium",
            "--random",
            "12",
            "--seed",
            "3",
            "--temp",
            "0.7",
            "--relax",
            "--out",
            &eq,
            "--reproducible",
        ]));
        codes.push(cli::run([
            "attn-thermo",
            "langevin",
            "--steps",
            "3000",
            "--particles",
            "64",
            "--seed",
            "9",
            "--field-dim",
            "2",
            "--out",
            &lv,
            "--reproducible",
        ]));
        codes.push(cli::run([
            "attn-thermo",
            "grok",
            "--p",
            "5,7,11",
            "--seeds",
            "0..1",
            "--epochs",
            "40",
            "--d-model",
            "16",
            "--log-every",
            "0",
            "--out",
            &gr,
            "--reproducible",
        ]));
        codes.push(cli::run(["attn-thermo", "scaling", &gr, "--out", &sc, "--reproducible"]));
    }
    let (a, b) = (csv_files(roots[0].path()), csv_files(roots[1].path()));
    let identical = a == b
        && a.iter().all(|rel| {
            std::fs::read(roots[0].path().join(rel)).unwrap() == std::fs::read(roots[1].path().join(rel)).unwrap()
        });
    let ok_codes = codes.iter().all(|&c| c == 0);
    outcome(
        "9",
        "determinism",
        identical && ok_codes && a.len() >= 9,
        format!("{} CSV files from equilibrium, langevin, grok and scaling commands, byte-identical across reruns: {identical}; exit codes {codes:?}", a.len()),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // Under `cargo test -- --list` or a name filter, do nothing.
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let criteria: Vec<fn() -> Vec<Outcome>> = vec![
        || vec![criterion_1()],
        || vec![criterion_2()],
        || vec![criterion_3()],
        || vec![criterion_4()],
        || vec![criterion_5()],
        || vec![criterion_6()],
        criterion_7,
        || vec![criterion_8()],
        || vec![criterion_9()],
    ];
    let (mut failed, mut not_run) = (0, 0);
    for c in criteria {
        let start = Instant::now();
        let outcomes = c();
        let elapsed = start.elapsed().as_secs_f64();
        for o in outcomes {
            let label = match o.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::NotRun => "NOT RUN",
            };
            println!("criterion {:<8} {label} {} [{elapsed:.1}s]: {}", o.id, o.title, o.detail);
            failed += usize::from(o.status == Status::Fail);
            not_run += usize::from(o.status == Status::NotRun);
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion line(s) failed, {not_run} not run");
        std::process::exit(1);
    }
    println!("acceptance: no failures, {not_run} criterion line(s) not run");
}

//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{moments, population_moments, spd};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlinked_regress::{
    asymptotic_slope_variance, compute_group_moments, fit_moment, fit_ot, fit_simple, run_study, simulate_dataset,
    wasserstein_gradient, wasserstein_hessian, wasserstein_loss, GroupMoments, GroupStats, GroupWeights, OtConfig,
    OtParams, Scenario, ScenarioConfig, StudyMethod, StudyMetrics, WeightVector,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_moments(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GroupMoments {
    let mu_x: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let gamma: Vec<DMatrix<f64>> = (0..k)
        .map(|_| spd(d, &(0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), 0.2))
        .collect();
    let mu_y: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
    let s2: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..4.0)).collect();
    moments(&mu_x, &gamma, &mu_y, &s2, 20)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn closed_form_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut fitted, mut agreed_errors) = (0.0f64, 0, 0);
    for _ in 0..1000 {
        let k = rng.random_range(2..=10);
        let m = random_moments(&mut rng, k, 1);
        let w = WeightVector::new((0..k).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        match (fit_simple(&m, &w), fit_moment(&m, &w)) {
            (Ok(a), Ok(b)) => {
                fitted += 1;
                for (x, y) in a.params().iter().zip(b.params()) {
                    worst = worst.max(rel_diff(*x, y));
                }
            }
            (Err(a), Err(b)) if a.category() == b.category() => agreed_errors += 1,
            (a, b) => return Err(format!("disagreement: {a:?} vs {b:?}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && secs < 1.0,
        format!("max relative difference {worst:.2e} over {fitted} fits ({agreed_errors} jointly rejected), {secs:.3} s"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let k = rng.random_range(1..=6);
        let d = rng.random_range(1..=4);
        let m = random_moments(&mut rng, k, d);
        let pi = GroupWeights::new((0..k).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
        let mut theta: Vec<f64> = (0..=d).map(|_| rng.random_range(-2.0..2.0)).collect();
        theta.push(rng.random_range(0.1..3.0));
        let at = |t: &[f64]| OtParams::from_slice(t);
        let g = wasserstein_gradient(&at(&theta), &m, &pi).unwrap();
        let h = wasserstein_hessian(&at(&theta), &m, &pi).unwrap();
        let g_scale = g.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        let h_scale = h.amax().max(1.0);
        let step = 1e-6;
        for j in 0..theta.len() {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[j] += step;
            down[j] -= step;
            let fd = (wasserstein_loss(&at(&up), &m, &pi).unwrap() - wasserstein_loss(&at(&down), &m, &pi).unwrap())
                / (2.0 * step);
            worst_g = worst_g.max((fd - g[j]).abs() / g_scale);
            let gu = wasserstein_gradient(&at(&up), &m, &pi).unwrap();
            let gd = wasserstein_gradient(&at(&down), &m, &pi).unwrap();
            for i in 0..theta.len() {
                worst_h = worst_h.max(((gu[i] - gd[i]) / (2.0 * step) - h[(i, j)]).abs() / h_scale);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_g <= 1e-6 && worst_h <= 1e-5 && secs < 10.0,
        format!("gradient error {worst_g:.2e}, Hessian error {worst_h:.2e} (relative to max entry), {secs:.2} s"),
    )
}

fn exact_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mm_err, mut ot_err, mut loss) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let k = d + 1 + rng.random_range(0..3);
        let mu_x: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..d).map(|j| if i == j + 1 { 2.0 } else { 0.0 } + rng.random_range(-0.4..0.4)).collect())
            .collect();
        let gamma: Vec<DMatrix<f64>> = (0..k)
            .map(|_| spd(d, &(0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), 0.3))
            .collect();
        let beta: Vec<f64> = (0..=d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sigma2 = rng.random_range(0.1..3.0);
        let m = population_moments(&mu_x, &gamma, &beta, sigma2);
        let mm = fit_moment(&m, &WeightVector::uniform(k)).map_err(|e| e.to_string())?;
        for (a, b) in mm.beta.iter().zip(&beta) {
            mm_err = mm_err.max((a - b).abs());
        }
        let (ot, diag) = fit_ot(&m, &GroupWeights::uniform(k), None, &OtConfig::default()).map_err(|e| e.to_string())?;
        for (a, b) in ot.params().iter().zip(beta.iter().chain([&sigma2])) {
            ot_err = ot_err.max((a - b).abs());
        }
        loss = loss.max(diag.final_loss);
    }
    check(
        mm_err <= 1e-12 && ot_err <= 1e-6 && loss <= 1e-12,
        format!("moment error {mm_err:.2e}, Wasserstein error {ot_err:.2e}, max final loss {loss:.2e} over 100 instances"),
    )
}

fn consistency_at_scale() -> Outcome {
    let start = Instant::now();
    let cfg = ScenarioConfig {
        n: 10_000,
        ..ScenarioConfig::cell(4, 10, Scenario::S1)
    };
    let truth = cfg.noise_variance();
    let m = compute_group_moments(&simulate_dataset(&cfg, 0).map_err(|e| e.to_string())?.sample);
    let mm = fit_moment(&m, &WeightVector::uniform(4)).map_err(|e| e.to_string())?;
    let (ot, _) = fit_ot(&m, &GroupWeights::uniform(4), None, &OtConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let slope = |b: f64| (b - 2.0).abs();
    let noise = |s: f64| (s - truth).abs() / truth;
    check(
        slope(mm.slope()) < 0.05
            && slope(ot.slope()) < 0.05
            && noise(mm.sigma2_eps) < 0.1
            && noise(ot.sigma2_eps) < 0.1
            && secs < 30.0,
        format!(
            "slope error mm {:.4} ot {:.4}; noise variance relative error mm {:.4} ot {:.4}; {secs:.2} s",
            slope(mm.slope()),
            slope(ot.slope()),
            noise(mm.sigma2_eps),
            noise(ot.sigma2_eps)
        ),
    )
}

fn metric(study: &StudyMetrics, m: StudyMethod) -> &unlinked_regress::MethodMetrics {
    study.method(m).expect("method was requested")
}

fn coverage_reproduction(s1: &StudyMetrics) -> Outcome {
    let mm = metric(s1, StudyMethod::MmBootstrap).coverage;
    let ot = metric(s1, StudyMethod::OtBootstrap).coverage;
    let band = 0.91..=0.98;
    check(
        band.contains(&mm) && band.contains(&ot),
        format!("coverage mm-bootstrap {mm:.3}, ot-bootstrap {ot:.3} (target [0.91, 0.98])"),
    )
}

fn hard_cell_power(s4: &StudyMetrics) -> Outcome {
    let mm = metric(s4, StudyMethod::MmBootstrap).power;
    let ot = metric(s4, StudyMethod::OtBootstrap).power;
    let naive = metric(s4, StudyMethod::NaiveStudent).power;
    check(
        (mm - 0.10).abs() <= 0.06 && (ot - 0.10).abs() <= 0.06 && (naive - 0.09).abs() <= 0.06,
        format!("power mm-bootstrap {mm:.3}, ot-bootstrap {ot:.3} (target 0.10 +/- 0.06), naive {naive:.3} (target 0.09 +/- 0.06)"),
    )
}

fn amplitude_ordering(s1: &StudyMetrics) -> Outcome {
    let mm = metric(s1, StudyMethod::MmBootstrap).mean_amplitude;
    let naive = metric(s1, StudyMethod::NaiveStudent).mean_amplitude / mm;
    let sim = metric(s1, StudyMethod::Simultaneous).mean_amplitude / mm;
    check(
        naive >= 1.5 && (0.6..=0.95).contains(&sim),
        format!("naive / mm-bootstrap {naive:.3} (>= 1.5), simultaneous / mm-bootstrap {sim:.3} (in [0.6, 0.95])"),
    )
}

fn asymptotic_vs_bootstrap(n30: &StudyMetrics) -> Outcome {
    let a = metric(n30, StudyMethod::MmAsymptotic).coverage;
    let b = metric(n30, StudyMethod::MmBootstrap).coverage;
    check(
        (a - b).abs() <= 0.05,
        format!("coverage mm-asymptotic {a:.3}, mm-bootstrap {b:.3}, gap {:.3} (<= 0.05)", (a - b).abs()),
    )
}

fn slope_variance() -> Outcome {
    let group = |label: &str, x: f64, y: f64| {
        GroupStats::new(label, 10, 10, nalgebra::DVector::from_element(1, x), DMatrix::from_element(1, 1, 1.0), y, 5.0)
            .unwrap()
    };
    let hand = GroupMoments::from_groups(vec![group("a", 0.0, 0.0), group("b", 1.0, 2.0)]).unwrap();
    let v = asymptotic_slope_variance(&hand, &WeightVector::uniform(2), 2.0).map_err(|e| e.to_string())?;

    // population value for the S1 cell: Var_w(μ_X) = 1.25, Σ (μ_X^k − 11.5)² = 5
    let cfg = ScenarioConfig {
        n: 500,
        ..ScenarioConfig::cell(4, 10, Scenario::S1)
    };
    let sigma2_y = cfg.beta1 * cfg.beta1 * cfg.sigma2_x + cfg.noise_variance();
    let oracle = (cfg.beta1 * cfg.beta1 * cfg.sigma2_x + sigma2_y) * 5.0 / 16.0 / (1.25 * 1.25);
    let population = GroupMoments::from_groups(
        (0..4)
            .map(|k| {
                let mu = 10.0 + k as f64;
                GroupStats::new(
                    format!("g{k}"),
                    500,
                    500,
                    nalgebra::DVector::from_element(1, mu),
                    DMatrix::from_element(1, 1, cfg.sigma2_x),
                    cfg.beta0 + cfg.beta1 * mu,
                    sigma2_y,
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap();
    let formula = asymptotic_slope_variance(&population, &WeightVector::uniform(4), cfg.beta1).map_err(|e| e.to_string())?;

    let reps = 2000;
    let draws: Vec<f64> = (0..reps)
        .map(|r| {
            let m = compute_group_moments(&simulate_dataset(&cfg, r).unwrap().sample);
            let b = fit_moment(&m, &WeightVector::uniform(4)).unwrap().slope();
            (cfg.n as f64).sqrt() * (b - cfg.beta1)
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / reps as f64;
    let empirical = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let gap = (empirical - formula).abs() / formula;
    check(
        (v - 18.0).abs() <= 1e-12 && (formula - oracle).abs() <= 1e-12 * oracle && gap <= 0.10,
        format!(
            "hand example {v}; population variance {formula:.4} (hand {oracle:.4}); Monte Carlo {empirical:.4}, gap {:.1}%",
            100.0 * gap
        ),
    )
}

fn run_bin(args: &[&str], threads: usize) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_unlinked-regress"))
        .args(args)
        .env("UNLINKED_REGRESS_THREADS", threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(out.stdout)
}

fn determinism(dir: &Path) -> Outcome {
    let x = dir.join("x.csv");
    let y = dir.join("y.csv");
    std::fs::write(&x, "group,x1\nt1,0.1\nt1,-0.3\nt1,0.4\nt2,1.2\nt2,0.9\nt3,2.2\nt3,1.7\nt3,2.0\nt4,3.1\nt4,2.8\n")
        .map_err(|e| e.to_string())?;
    std::fs::write(&y, "group,y\nt1,1.4\nt1,0.2\nt2,3.3\nt2,2.6\nt2,3.0\nt3,5.4\nt3,4.7\nt4,7.3\nt4,6.6\nt4,7.1\n")
        .map_err(|e| e.to_string())?;
    let fit = ["fit", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(), "--seed", "11", "--boot", "500"];
    let sim = ["simulate", "--cell", "K=4", "n=10", "scenario=S2", "--n-sim", "40", "--boot", "100", "--seed", "11"];
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let fit_same = run_bin(&fit, 1)? == run_bin(&fit, threads)?;
    let sim_same = run_bin(&sim, 1)? == run_bin(&sim, threads)?;
    check(
        fit_same && sim_same,
        format!("fit identical: {fit_same}, simulate identical: {sim_same} (1 vs {threads} threads)"),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cell = |k, n, scenario| ScenarioConfig {
        seed: 0,
        ..ScenarioConfig::cell(k, n, scenario)
    };
    let mut results: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = Vec::new();
    results.push(("closed-form equivalence", Box::new(closed_form_equivalence)));
    results.push(("gradient and Hessian correctness", Box::new(gradient_correctness)));
    results.push(("exact recovery", Box::new(exact_recovery)));
    results.push(("consistency at scale", Box::new(consistency_at_scale)));

    let start = Instant::now();
    let s1 = run_study(&cell(4, 10, Scenario::S1)).expect("S1 study");
    let s4 = run_study(&cell(4, 10, Scenario::S4)).expect("S4 study");
    let n30 = run_study(&cell(4, 30, Scenario::S1)).expect("n = 30 study");
    let study_secs = start.elapsed().as_secs_f64();
    let (s1a, s1b) = (s1.clone(), s1);
    results.push(("coverage reproduction", Box::new(move || coverage_reproduction(&s1a))));
    results.push(("hard-cell power", Box::new(move || hard_cell_power(&s4))));
    results.push(("amplitude ordering", Box::new(move || amplitude_ordering(&s1b))));
    results.push(("asymptotic vs bootstrap agreement", Box::new(move || asymptotic_vs_bootstrap(&n30))));
    results.push(("slope variance", Box::new(slope_variance)));
    let path = dir.path().to_path_buf();
    results.push(("determinism across thread counts", Box::new(move || determinism(&path))));

    println!("study cells (500 replications, 500 bootstrap draws): {study_secs:.1} s");
    let mut failed = 0;
    for (i, (name, f)) in results.into_iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

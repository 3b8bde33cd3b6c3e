//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use genprior::analysis::{
    self, contraction_fit, rate_experiment, ExperimentSetup, ObservationModel, SolverKind,
};
use genprior::cli::{tsrec_n, wnu_n};
use genprior::genmodel::{Activation, GenerativeDecoder};
use genprior::linalg;
use genprior::measurement::{mu_of_link, LinkModel};
use genprior::projection::ProjectionConfig;
use genprior::seed::{derive_seed, rng_from};
use genprior::sensing::{SensingKind, SensingOperator};
use genprior::solvers::{self, mu1_of, mu2_of, plant_sim_signal, InitMode, SolverConfig};
use rand::Rng;
use rand_distr::StandardNormal;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn randn(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    analysis::quantile(&s, 0.5)
}

/// Tanh decoder `8 → 64 → 256`, radius 3.
fn tanh_decoder() -> GenerativeDecoder {
    GenerativeDecoder::new(42, 8, &[64], 256, 3.0, Activation::Tanh, 1.0).unwrap()
}

fn within(budget: Duration, start: Instant) -> (bool, String) {
    let el = start.elapsed();
    (
        el < budget,
        format!("{:.2}s of {}s", el.as_secs_f64(), budget.as_secs()),
    )
}

fn operators() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(1);
    let mut worst_adj: f64 = 0.0;
    for kind in [SensingKind::DenseGaussian, SensingKind::PartialCirculant] {
        let op = SensingOperator::new(kind, 120, 256, 7).unwrap();
        for _ in 0..100 {
            let x = randn(&mut rng, 256);
            let v = randn(&mut rng, 120);
            let ax = op.apply(&x).unwrap();
            let lhs = linalg::dot(&ax, &v);
            let rhs = linalg::dot(&x, &op.adjoint_apply(&v).unwrap());
            worst_adj = worst_adj.max((lhs - rhs).abs() / (linalg::norm(&ax) * linalg::norm(&v)));
        }
    }
    let mut worst_circ: f64 = 0.0;
    for p in [2usize, 7, 8, 16, 31, 64] {
        for n in [1, p / 2 + 1, p] {
            let op =
                SensingOperator::new(SensingKind::PartialCirculant, n, p, (n * 100 + p) as u64)
                    .unwrap();
            let dense = op.materialize().unwrap();
            let Some(circ) = (match op.payload() {
                genprior::sensing::Payload::Circulant(c) => Some(c),
                _ => None,
            }) else {
                return Outcome {
                    passed: false,
                    detail: "circulant payload missing".into(),
                };
            };
            for _ in 0..10 {
                let x = randn(&mut rng, p);
                let fast = op.apply(&x).unwrap();
                for (j, &i) in circ.rows().iter().enumerate() {
                    // O(p²) cyclic convolution reference
                    let want: f64 = (0..p)
                        .map(|l| circ.generator()[(i + p - l) % p] * circ.signs()[l] * x[l])
                        .sum();
                    worst_circ = worst_circ.max((fast[j] - want).abs());
                }
                let via = dense.matvec(&x);
                for j in 0..n {
                    worst_circ = worst_circ.max((fast[j] - via[j]).abs());
                }
            }
        }
    }
    let (fast, t) = within(Duration::from_secs(5), start);
    Outcome {
        passed: worst_adj <= 1e-10 && worst_circ <= 1e-10 && fast,
        detail: format!(
            "adjoint rel err {worst_adj:.2e}, circulant vs dense {worst_circ:.2e}, {t}"
        ),
    }
}

fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = xp[i];
            xp[i] = o + h;
            let a = f(&xp);
            xp[i] = o - h;
            let b = f(&xp);
            xp[i] = o;
            (a - b) / (2.0 * h)
        })
        .collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let dec = tanh_decoder();
    let op = SensingOperator::new(SensingKind::DenseGaussian, 100, 256, 3).unwrap();
    let link = LinkModel::shifted_cosine();
    let mut rng = rng_from(2);
    let (mut g_err, mut n_err, mut v_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let x = randn(&mut rng, 256);
        let y = randn(&mut rng, 100);
        let g = solvers::grad_glasso(&op, &y, &x).unwrap();
        let fd = central(|v| solvers::loss_glasso(&op, &y, v).unwrap(), &x, 1e-5);
        g_err = g_err.max(linalg::dist(&fd, &g) / linalg::norm(&g));
        let g = solvers::grad_nlasso(&op, &y, &link, &x).unwrap();
        let fd = central(
            |v| solvers::loss_nlasso(&op, &y, &link, v).unwrap(),
            &x,
            1e-5,
        );
        n_err = n_err.max(linalg::dist(&fd, &g) / linalg::norm(&g));
        let z = dec.sample_latent(rng.random());
        let w = randn(&mut rng, 256);
        let g = dec.vjp(&z, &w).unwrap();
        let fd = central(|u| linalg::dot(&dec.forward(u).unwrap(), &w), &z, 1e-5);
        v_err = v_err.max(linalg::dist(&fd, &g) / linalg::norm(&g));
    }
    let (fast, t) = within(Duration::from_secs(30), start);
    Outcome {
        passed: g_err <= 1e-5 && n_err <= 1e-5 && v_err <= 1e-4 && fast,
        detail: format!("glasso {g_err:.2e}, nlasso {n_err:.2e}, vjp {v_err:.2e}, {t}"),
    }
}

fn exact_projection_convergence() -> Outcome {
    let start = Instant::now();
    let (k, p, n) = (8, 256, 120);
    let mut seeds_ok = 0;
    let mut slopes = Vec::new();
    for s in 0..20u64 {
        let dec =
            GenerativeDecoder::orthonormal_linear(derive_seed(s, "decoder", 0), k, p, 3.0).unwrap();
        let op = SensingOperator::new(
            SensingKind::DenseGaussian,
            n,
            p,
            derive_seed(s, "sensing", 0),
        )
        .unwrap();
        let planted = plant_sim_signal(&dec, 1.0, derive_seed(s, "signal", 0)).unwrap();
        // linear link, σ = τ = 0
        let y = op.apply(&planted.x_star).unwrap();
        let mut rng = rng_from(derive_seed(s, "init", 0));
        let mut all = true;
        for i in 0..10 {
            let scale = [0.0, 0.1, 1.0, 10.0, 100.0][i % 5];
            let x0: Vec<f64> = randn(&mut rng, p).iter().map(|v| scale * v).collect();
            let cfg = SolverConfig {
                iterations: 50,
                projection: ProjectionConfig::exact_linear(),
                x0_mode: InitMode::Given(x0),
                record_trajectory: false,
                ..SolverConfig::glasso()
            };
            let (_, traj) =
                solvers::pgd_glasso(&op, &y, &dec, &cfg, Some(&planted.target)).unwrap();
            all &= traj.error_to_target.iter().any(|&e| e < 1e-8);
            if let Ok((slope, _)) = contraction_fit(&traj, 1e-11) {
                slopes.push(slope);
            }
        }
        seeds_ok += all as usize;
    }
    let med = median(&slopes);
    let (fast, t) = within(Duration::from_secs(60), start);
    Outcome {
        passed: seeds_ok >= 18 && med <= 0.5f64.ln() && fast,
        detail: format!(
            "{seeds_ok}/20 seeds below 1e-8 from all 10 inits, median log-slope {med:.3} (log 0.5 = {:.3}), {t}",
            0.5f64.ln()
        ),
    }
}

fn contraction_boundary() -> Outcome {
    let m1 = mu1_of(1.0, 0.05).unwrap();
    let m2 = mu2_of(0.2, 1.5, 2.5, 0.0).unwrap();
    let m2t = mu2_of(0.23, 1.5, 2.5, 0.0).unwrap();
    Outcome {
        passed: (m1 - 0.05).abs() <= 1e-15 && (m2 - 0.55).abs() <= 1e-15 && m2t < 0.5,
        detail: format!(
            "mu1(1, 0.05) = {m1}, mu2(0.2) = {m2} (2 mu2 = {:.2}), mu2(0.23) = {m2t:.4}",
            2.0 * m2
        ),
    }
}

fn nlasso_setup(solver: SolverKind, observation: ObservationModel) -> ExperimentSetup {
    let solver_config = SolverConfig {
        step_size: if solver == SolverKind::PgdNlasso {
            solvers::THEORY_ZETA
        } else {
            1.0
        },
        projection: ProjectionConfig {
            restarts: 1,
            ..ProjectionConfig::default()
        },
        record_trajectory: false,
        ..SolverConfig::glasso()
    };
    ExperimentSetup {
        decoder: tanh_decoder(),
        sensing: SensingKind::DenseGaussian,
        link: LinkModel::shifted_cosine().with_noise(0.1).unwrap(),
        solver,
        solver_config,
        observation,
        delta: 1e-3,
    }
}

fn statistical_rate() -> Outcome {
    let start = Instant::now();
    let setup = nlasso_setup(SolverKind::PgdNlasso, ObservationModel::Known);
    let table = rate_experiment(&[250, 1000], 30, &setup, 2024).unwrap();
    let ratio = table.rows[1].ratio.unwrap();
    let (fast, t) = within(Duration::from_secs(600), start);
    Outcome {
        passed: (1.6..=2.6).contains(&ratio) && fast,
        detail: format!(
            "median error {:.3e} at n=250, {:.3e} at n=1000, ratio {ratio:.3}, {t}",
            table.rows[0].median_error, table.rows[1].median_error
        ),
    }
}

fn known_vs_unknown() -> Outcome {
    let start = Instant::now();
    let grid = [60, 120];
    let n = rate_experiment(
        &grid,
        30,
        &nlasso_setup(SolverKind::PgdNlasso, ObservationModel::Known),
        77,
    )
    .unwrap();
    let g = rate_experiment(
        &grid,
        30,
        &nlasso_setup(SolverKind::PgdGlasso, ObservationModel::Known),
        77,
    )
    .unwrap();
    let ok = n
        .rows
        .iter()
        .zip(&g.rows)
        .all(|(a, b)| a.median_cosine >= b.median_cosine);
    let (fast, t) = within(Duration::from_secs(600), start);
    let parts: Vec<String> = n
        .rows
        .iter()
        .zip(&g.rows)
        .map(|(a, b)| {
            format!(
                "n={}: PGD-N {:.4} vs PGD-G {:.4}",
                a.n, a.median_cosine, b.median_cosine
            )
        })
        .collect();
    Outcome {
        passed: ok && fast,
        detail: format!("median cosine {}, {t}", parts.join(", ")),
    }
}

fn concentration() -> Outcome {
    let start = Instant::now();
    let dec = tanh_decoder();
    let (eps, delta) = (0.5, 0.01);
    let n_ts = tsrec_n(&dec, delta);
    let n_w = wnu_n(&dec, delta, 0.3);
    let mut violations = 0;
    let mut under = [0usize; 3];
    for s in 0..10u64 {
        let op = SensingOperator::new(
            SensingKind::DenseGaussian,
            n_ts,
            256,
            derive_seed(s, "ts", 0),
        )
        .unwrap();
        let one =
            SensingOperator::new(SensingKind::DenseGaussian, 1, 256, derive_seed(s, "one", 0))
                .unwrap();
        violations += analysis::tsrec_check(&op, &dec, eps, delta, 1000, s)
            .unwrap()
            .violations;
        under[0] += analysis::tsrec_check(&one, &dec, eps, delta, 1000, s)
            .unwrap()
            .violations
            .min(1);
        let mut rng = rng_from(derive_seed(s, "points", 0));
        let pts: Vec<Vec<f64>> = (0..1000)
            .map(|_| dec.forward(&dec.sample_latent(rng.random())).unwrap())
            .collect();
        violations += analysis::jle_check(&op, &pts, eps).unwrap().violations;
        under[1] += analysis::jle_check(&one, &pts, eps)
            .unwrap()
            .violations
            .min(1);
        let op_w =
            SensingOperator::new(SensingKind::DenseGaussian, n_w, 256, derive_seed(s, "w", 0))
                .unwrap();
        violations += analysis::wnu_check(&op_w, &dec, 1.0, 0.3, 500, s)
            .unwrap()
            .violations;
        under[2] += analysis::wnu_check(&one, &dec, 1.0, 0.3, 500, s)
            .unwrap()
            .violations
            .min(1);
    }
    let op = SensingOperator::new(SensingKind::PartialCirculant, 128, 256, 9).unwrap();
    let mut mvt = 0;
    for link in [LinkModel::linear(), LinkModel::shifted_cosine()] {
        mvt += analysis::mvt_check(&op, &link, 100, 4).unwrap().violations;
    }
    let (fast, t) = within(Duration::from_secs(120), start);
    Outcome {
        passed: violations == 0 && under == [10, 10, 10] && mvt == 0 && fast,
        detail: format!(
            "n_tsrec={n_ts}, n_wnu={n_w}: {violations} violations over 10 seeds, \
             n=1 failing seeds (tsrec, jle, wnu) = {under:?}, mvt violations {mvt}, {t}"
        ),
    }
}

fn mu_values() -> Outcome {
    let start = Instant::now();
    let lin = mu_of_link(&LinkModel::linear()).value;
    let cos = mu_of_link(&LinkModel::shifted_cosine()).value;
    // Stein: E[f(g)g] = E[f'(g)] = 2 − 0.5·E[sin g], Simpson on [−12, 12]
    let m = 24_000;
    let h = 24.0 / m as f64;
    let simpson = |f: &dyn Fn(f64) -> f64| {
        (0..=m)
            .map(|i| {
                let t = -12.0 + i as f64 * h;
                let w = if i == 0 || i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * f(t) * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .sum::<f64>()
            * h
            / 3.0
    };
    let stein = simpson(&|t: f64| 2.0 - 0.5 * t.sin());
    let sign = LinkModel::sign_dithered(0.1).unwrap();
    let est = mu_of_link(&sign);
    // independent Monte Carlo oracle
    let mut rng = rng_from(0xfeed);
    let samples = 1_000_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let g: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let v = if g + 0.1 * e >= 0.0 { g } else { -g };
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / samples as f64;
    let se_oracle = ((s2 / samples as f64 - mean * mean) / samples as f64).sqrt();
    let se = (est.std_error.powi(2) + se_oracle.powi(2)).sqrt();
    let closed = (2.0 / std::f64::consts::PI / 1.01).sqrt();
    let (fast, t) = within(Duration::from_secs(30), start);
    Outcome {
        passed: (lin - 1.0).abs() <= 1e-12
            && (cos - 2.0).abs() <= 1e-8
            && (stein - 2.0).abs() <= 1e-8
            && (est.value - mean).abs() <= 3.0 * se
            && fast,
        detail: format!(
            "linear {lin}, shifted_cosine {cos:.12} (Stein {stein:.12}), sign {:.5} vs oracle {mean:.5} \
             (3 se = {:.1e}, closed form {closed:.5}), {t}",
            est.value,
            3.0 * se
        ),
    }
}

fn one_bit() -> Outcome {
    let start = Instant::now();
    let setup = ExperimentSetup {
        link: LinkModel::sign_dithered(0.1).unwrap(),
        ..nlasso_setup(SolverKind::PgdGlasso, ObservationModel::Sim)
    };
    let table = rate_experiment(&[400], 30, &setup, 11).unwrap();
    let c = table.rows[0].median_cosine;
    let (fast, t) = within(Duration::from_secs(300), start);
    Outcome {
        passed: c >= 0.9 && fast,
        detail: format!("median cosine {c:.4} over 30 trials at n=400, {t}"),
    }
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_genprior");
    let dir = tempfile::TempDir::new().unwrap();
    let d = dir.path();
    let solve = r#"{
  "decoder": {"k": 4, "p": 64, "r": 3.0, "seed": 8, "layer_dims": [4, 32, 64]},
  "sensing": {"kind": "partial_circulant", "n": 48},
  "link": {"kind": "shifted_cosine", "sigma": 0.1, "tau": 0.05},
  "solver": {"kind": "pgd_nlasso"},
  "master_seed": 99
}"#;
    let rate = r#"{
  "decoder": {"k": 2, "p": 32, "r": 2.0, "seed": 3, "layer_dims": [2, 8, 32]},
  "link": {"kind": "sign", "sigma_d": 0.1},
  "solver": {"kind": "csgm", "projection": {"steps": 40, "lr": 0.05, "restarts": 1,
             "optimizer": {"kind": "adam_style", "beta1": 0.9, "beta2": 0.999, "eps_adam": 1e-8}}},
  "experiment": {"kind": "rate", "grid": [50, 100], "trials": 10},
  "master_seed": 4
}"#;
    fs::write(d.join("solve.json"), solve).unwrap();
    fs::write(d.join("rate.json"), rate).unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["solve", "--config", "solve.json"],
        vec!["rate", "--config", "rate.json"],
        vec!["check", "tsrec"],
        vec!["check", "wnu"],
        vec!["check", "gradients"],
        vec!["check", "adjoint"],
    ];
    let mut identical = 0;
    let mut notes = Vec::new();
    for (i, cmd) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = format!("run{i}_{rep}");
            let threads = if rep == 0 { "1" } else { "4" };
            let o = Command::new(bin)
                .current_dir(d)
                .env_remove("GENPRIOR_THREADS")
                .args(cmd)
                .args(["--out", &out, "--threads", threads, "--quiet"])
                .output()
                .unwrap();
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(d.join(&out))
                .map(|rd| {
                    rd.map(|e| {
                        let e = e.unwrap();
                        (
                            e.file_name().to_string_lossy().into_owned(),
                            fs::read(e.path()).unwrap(),
                        )
                    })
                    .collect()
                })
                .unwrap_or_default();
            files.sort();
            outputs.push((o.status.code(), o.stdout, files));
        }
        if outputs[0] == outputs[1] && !outputs[0].2.is_empty() && outputs[0].0 == Some(0) {
            identical += 1;
        } else {
            notes.push(cmd.join(" "));
        }
    }
    let models: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            Command::new(bin)
                .args(["model", "new", "--preset", "mnist"])
                .output()
                .unwrap()
                .stdout
        })
        .collect();
    let model_ok = models[0] == models[1] && !models[0].is_empty();
    Outcome {
        passed: identical == commands.len() && model_ok,
        detail: format!(
            "{identical}/{} commands byte-identical across reruns (1 vs 4 threads), model new identical: {model_ok}{}",
            commands.len(),
            if notes.is_empty() { String::new() } else { format!(", differing: {}", notes.join("; ")) }
        ),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("operator correctness", operators),
        ("gradient correctness", gradients),
        (
            "exact-projection geometric convergence",
            exact_projection_convergence,
        ),
        ("contraction-condition boundary", contraction_boundary),
        ("statistical rate", statistical_rate),
        ("known-vs-unknown advantage", known_vs_unknown),
        ("concentration checks", concentration),
        ("mu values", mu_values),
        ("1-bit path", one_bit),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += usize::from(!o.passed);
        println!(
            "criterion {:>2} {}: {} ({})",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

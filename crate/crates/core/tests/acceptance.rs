//! Acceptance criteria, one pass/fail line each. Runs with `harness = false`
//! so the report prints without `--nocapture`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mor_icl::data::{embed_h, mixture_moments, sample_model, sample_prompt, Mixing, MoRModel};
use mor_icl::em::{batch_em, batch_init, grad_q, population_coords, population_em_update_mc, q_loss, weight_two, EmStateTwo};
use mor_icl::eval::{excess_risk_mc, median, param_error, McScalar};
use mor_icl::experiments::{centered_model, em_trial, run, Experiment, ExperimentConfig};
use mor_icl::lsa::{
    gradient_flow, init_params, population_grad, population_loss, population_loss_mc, FlowConfig, LsaParams,
};
use mor_icl::rng::child_rng;
use mor_icl::tf::{apply_primitive, build_estep_layers};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn randn(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rate_slope(eta: f64) -> Result<f64, String> {
    let cfg = ExperimentConfig { etas: vec![eta], ..ExperimentConfig::defaults_for(Experiment::Rates) };
    let out = run(&cfg, 0).map_err(|e| e.to_string())?;
    Ok(out.rates[0].fit.slope)
}

fn high_snr_rate() -> Outcome {
    let s = rate_slope(10.0)?;
    check((-0.65..=-0.35).contains(&s), format!("slope {s:.4} (band [-0.65, -0.35])"))
}

fn low_snr_rate() -> Outcome {
    let s = rate_slope(0.2)?;
    check((-0.45..=-0.10).contains(&s), format!("slope {s:.4} (band [-0.45, -0.10])"))
}

fn excess_risk_identity() -> Outcome {
    let mut rng = child_rng(3, &[]);
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let model = if i % 2 == 0 {
            sample_model(4, 2, 0.5, true, i).unwrap()
        } else {
            sample_model(4, 3, 0.5, false, i).unwrap()
        };
        let or = mor_icl::data::oracle_beta(&model);
        let dir = mor_icl::data::unit_sphere(4, &mut rng);
        let eps = rng.random_range(0.1..1.0);
        let bhat = &or + dir * eps;
        let r = excess_risk_mc(|p| p.query.dot(&bhat), &model, Mixing::PerSample, 1, 100_000, 100 + i).map_err(|e| e.to_string())?;
        let z = (r.mean - eps * eps).abs() / r.se;
        worst = worst.max(z);
    }
    check(worst <= 3.0, format!("max |excess − ε²|/SE = {worst:.2} over 10 perturbations"))
}

fn construction_equivalence() -> Outcome {
    let cfg = ExperimentConfig::defaults_for(Experiment::ConstructCheck);
    let out = run(&cfg, 0).map_err(|e| e.to_string())?;
    let max = |m: &str| out.rows.iter().filter(|r| r.metric == m).map(|r| r.value).fold(0.0, f64::max);
    let (b, w) = (max("max_beta_diff"), max("max_weight_diff"));
    // E-step weights over ≥ 10³ further columns
    let mut wmax: f64 = 0.0;
    let mut rng = child_rng(44, &[]);
    for s in 0..40 {
        let m = sample_model(3, 2, 0.3, true, s).unwrap();
        let p = sample_prompt(&m, 25, Mixing::PerSample, 1000 + s).unwrap();
        let mut h = embed_h(&p, 17).unwrap();
        let beta = mor_icl::data::standard_normal_vec(3, &mut rng);
        h.set_beta(&beta);
        for prim in build_estep_layers(0.3, &h.slots, 25).unwrap() {
            h = apply_primitive(&h, &prim).unwrap();
        }
        for i in 0..25 {
            wmax = wmax.max((h.matrix[(h.slots.w(), i)] - weight_two(&beta, &p.row(i), p.y[i], 0.3)).abs());
        }
    }
    let w = w.max(wmax);
    check(b < 1e-6 && w < 1e-12, format!("(d,n,T,T0)=(4,32,5,3): beta diff {b:.2e}, weight diff {w:.2e}"))
}

fn lsa_convergence() -> Outcome {
    let mm = mixture_moments(&MoRModel::symmetric(dv(&[1.0, 0.0, 0.0]), 1.0).unwrap());
    let init = init_params(0.2, &DMatrix::identity(3, 3), &mm, 100, 1.0).map_err(|e| e.to_string())?;
    let tr = gradient_flow(&init.params, &mm, 100, 1.0, &FlowConfig::default()).map_err(|e| e.to_string())?;
    let du = (tr.params.u_neg1 - 0.985335).abs();
    let dist = tr.records.last().unwrap().dist_to_optimum;
    let cfg = ExperimentConfig::defaults_for(Experiment::LsaFlow);
    let out = run(&cfg, 0).map_err(|e| e.to_string())?;
    let conv = out.rows.iter().filter(|r| r.metric == "converged").all(|r| r.value == 1.0);
    let gmax = out.rows.iter().filter(|r| r.metric == "final_grad_norm").map(|r| r.value).fold(0.0, f64::max);
    let count = out.rows.iter().filter(|r| r.metric == "converged").count();
    check(
        du < 1e-4 && dist < 1e-4 && conv && count == 5 && gmax < 1e-8,
        format!("rank-one |u−0.985335| = {du:.2e}, ‖u U11 − Γ⁻¹Eββᵀ‖ = {dist:.2e}; {count} random d=4 mixtures, max ‖∇‖ = {gmax:.2e}"),
    )
}

fn conservation() -> Outcome {
    let mut worst: f64 = 0.0;
    let mm = mixture_moments(&MoRModel::symmetric(dv(&[1.0, 0.0, 0.0]), 1.0).unwrap());
    let init = init_params(0.2, &DMatrix::identity(3, 3), &mm, 100, 1.0).map_err(|e| e.to_string())?;
    let tr = gradient_flow(&init.params, &mm, 100, 1.0, &FlowConfig::default()).map_err(|e| e.to_string())?;
    worst = worst.max(tr.max_drift);
    for s in 0..5 {
        let model = centered_model(4, 6, 1.0, s).unwrap();
        let mm = mixture_moments(&model);
        let theta = model.noise_sd();
        let mut rng = child_rng(s, &[6]);
        let bound = mor_icl::lsa::gamma_bound(&mm, 100, theta);
        let init = init_params(0.5 * bound, &randn(4, 4, &mut rng), &mm, 100, theta).map_err(|e| e.to_string())?;
        let tr = gradient_flow(&init.params, &mm, 100, theta, &FlowConfig::default()).map_err(|e| e.to_string())?;
        worst = worst.max(tr.max_drift);
    }
    check(worst < 1e-8, format!("max |tr(U11U11ᵀ) − u²| drift {worst:.2e} (rk4, h = 1e-3, 6 flows)"))
}

fn loss_oracle() -> Outcome {
    let mut rng = child_rng(7, &[]);
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let model = centered_model(3, 2, rng.random_range(0.5..5.0), i).unwrap();
        let mm = mixture_moments(&model);
        let params = LsaParams::diagonal(randn(3, 3, &mut rng) * 0.3, rng.random_range(-1.5..1.5));
        let n = 10;
        let exact = population_loss(&params, &mm, n, model.noise_sd()).map_err(|e| e.to_string())?.mse;
        let mc: McScalar = population_loss_mc(&params, &model, Mixing::PerPrompt, n, 100_000, 500 + i).map_err(|e| e.to_string())?.mse;
        worst = worst.max((mc.mean - exact).abs() / mc.se);
    }
    check(worst <= 3.0, format!("max |MC − closed form|/SE = {worst:.2} over 20 manifold points"))
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn gradient_checks() -> Outcome {
    let mut rng = child_rng(8, &[]);
    let h = 1e-5;
    let mut worst_lsa: f64 = 0.0;
    for i in 0..20u64 {
        let d = 3;
        let model = centered_model(d, 3, 2.0, i).unwrap();
        let mm = mixture_moments(&model);
        let theta = model.noise_sd();
        let p = LsaParams::diagonal(randn(d, d, &mut rng) * 0.5, rng.random_range(-1.5..1.5));
        let g = population_grad(&p, &mm, 20, theta).map_err(|e| e.to_string())?;
        let f = |q: &LsaParams| population_loss(q, &mm, 20, theta).unwrap().tilde;
        let mut an = Vec::new();
        let mut fd = Vec::new();
        for idx in 0..d * d {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.u11[idx] += h;
            b.u11[idx] -= h;
            fd.push((f(&a) - f(&b)) / (2.0 * h));
            an.push(g.d_u11[idx]);
        }
        let (mut a, mut b) = (p.clone(), p.clone());
        a.u_neg1 += h;
        b.u_neg1 -= h;
        fd.push((f(&a) - f(&b)) / (2.0 * h));
        an.push(g.d_u_neg1);
        worst_lsa = worst_lsa.max(rel(&DVector::from_vec(an), &DVector::from_vec(fd)));
    }
    let mut worst_q: f64 = 0.0;
    for i in 0..20u64 {
        let model = sample_model(4, 2, 0.4, true, 50 + i).unwrap();
        let prompt = sample_prompt(&model, 30, Mixing::PerSample, 80 + i).unwrap();
        let beta = mor_icl::data::standard_normal_vec(4, &mut rng);
        let st = EmStateTwo::new(beta.clone(), &prompt, 0.4).unwrap();
        let at = mor_icl::data::standard_normal_vec(4, &mut rng);
        let g = grad_q(&at, &st, &prompt);
        let fd = DVector::from_fn(4, |j, _| {
            let mut a = at.clone();
            let mut b = at.clone();
            a[j] += h;
            b[j] -= h;
            (q_loss(&a, &st, &prompt) - q_loss(&b, &st, &prompt)) / (2.0 * h)
        });
        worst_q = worst_q.max(rel(&g, &fd));
    }
    check(
        worst_lsa < 1e-5 && worst_q < 1e-5,
        format!("max rel. error: LSA population gradient {worst_lsa:.2e}, grad_q {worst_q:.2e} (20 points each)"),
    )
}

fn population_cross_oracle() -> Outcome {
    let mut rng = child_rng(9, &[]);
    let mut worst: f64 = 0.0;
    let mut contracts = true;
    let (alpha, t) = (0.5, 2);
    for i in 0..10u64 {
        let b1 = rng.random_range(0.1..1.5);
        let b1s = rng.random_range(0.2..1.5);
        let b2s = rng.random_range(0.0..1.5);
        let theta = rng.random_range(0.7..1.5);
        let c = population_coords(b1, b1s, b2s, theta).map_err(|e| e.to_string())?;
        let (n1, n2) = c.next(alpha, t);
        let model = MoRModel::symmetric(dv(&[b1s, b2s, 0.0]), theta).unwrap();
        let est = population_em_update_mc(&dv(&[b1, 0.0, 0.0]), &model, alpha, t, 200_000, 900 + i).map_err(|e| e.to_string())?;
        let e1 = dv(&[1.0, 0.0, 0.0]);
        let e2 = dv(&[0.0, 1.0, 0.0]);
        worst = worst.max((est.mean[0] - n1).abs() / est.project_se(&e1));
        worst = worst.max((est.mean[1] - n2).abs() / est.project_se(&e2));
        contracts &= c.next_tan_angle(alpha, t) <= c.tan_angle();
    }
    check(
        worst <= 3.0 && contracts,
        format!("max |MC − quadrature|/SE = {worst:.2} on 10 triples; angle contracts on all: {contracts}"),
    )
}

fn batch_em_checks() -> Outcome {
    let m = sample_model(8, 2, 0.0, false, 3).unwrap();
    let prompts: Vec<_> = (0..64).map(|i| sample_prompt(&m, 64, Mixing::PerPrompt, 10_000 + i).unwrap()).collect();
    let init = batch_init(2, 8, Some(m.components()), &mut child_rng(3, &[7])).unwrap();
    let fit = batch_em(&prompts, &init, 0.1, 1e-10, 10_000).map_err(|e| e.to_string())?;
    let err = param_error(&fit.state.betas, &m).map_err(|e| e.to_string())?;

    let cfg = ExperimentConfig { d: 8, test_prompts: 2000, ..ExperimentConfig::defaults_for(Experiment::PromptLength) };
    let mut trend = true;
    let mut report = Vec::new();
    for n in [16, 32, 64, 128] {
        let med = |eta: f64| -> Result<f64, String> {
            let mut v = Vec::new();
            for seed in 0..20 {
                let r = em_trial(&cfg, seed, cfg.d, 2, eta, n, 64).map_err(|e| e.to_string())?;
                let x = r.iter().find(|m| m.0 == "em_excess").map(|m| m.1).ok_or("batch EM failed")?;
                v.push(x);
            }
            Ok(median(&v))
        };
        let (lo, hi) = (med(1.0)?, med(10.0)?);
        trend &= lo > hi;
        report.push(format!("n={n}: {lo:.3} > {hi:.3}"));
    }
    check(
        err < 1e-6 && trend,
        format!("noiseless param_error {err:.2e}; median excess η=1 vs η=10: {}", report.join(", ")),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 high-SNR estimation rate", high_snr_rate, Duration::from_secs(60)),
        ("2 low-SNR estimation rate", low_snr_rate, Duration::from_secs(120)),
        ("3 excess-risk identity", excess_risk_identity, Duration::from_secs(30)),
        ("4 construction equivalence", construction_equivalence, Duration::from_secs(5)),
        ("5 LSA global convergence", lsa_convergence, Duration::from_secs(30)),
        ("6 conservation law", conservation, Duration::MAX),
        ("7 loss-oracle agreement", loss_oracle, Duration::MAX),
        ("8 gradient checks", gradient_checks, Duration::MAX),
        ("9 population-EM cross-oracle", population_cross_oracle, Duration::MAX),
        ("10 batch EM recovery and SNR trend", batch_em_checks, Duration::MAX),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let (ok, detail) = match res {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; runtime {took:.1?} over limit {limit:?}")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!("[{}] {name}: {detail} ({took:.2?})", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

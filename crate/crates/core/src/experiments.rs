//! Experiment runners behind the `moricl` binary.
//!
//! Each run fans its trials out over seeds, merges them back in seed order
//! and emits a tidy CSV plus a manifest holding the resolved config, its
//! content hash and the seed list. Output never depends on the thread count.
//!
//! CSV schema (version [`SCHEMA_VERSION`]):
//!
//! | column | meaning |
//! |---|---|
//! | experiment | subcommand name |
//! | seed | trial seed; every random draw of the row derives from it |
//! | axis | swept quantity: `n`, `B`, `d`, `t` or `-` |
//! | x | value of the swept quantity |
//! | k | number of mixture components |
//! | eta | SNR of the generating model |
//! | metric | what `value` measures |
//! | value | the measurement |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{embed_e, embed_h, mixture_moments, sample_model, sample_prompt, unit_sphere, Mixing, MoRModel, SlotMap};
use crate::em::{batch_em, batch_init, posterior_beta, run_gradient_em_two, warm_start, weights_two};
use crate::error::{Error, Result};
use crate::eval::{excess_risk_linear_mc, excess_risk_mc, median, rate_fit, sign_aligned_error, RateFit};
use crate::lsa::{clip, closed_form_optimum, gradient_flow, init_params, lsa_forward, train_lsa_empirical, FlowConfig, Integrator, LsaParams, TrainConfig};
use crate::rng::{child_rng, child_seed};
use crate::tf::{apply_primitive, build_em_transformer, build_estep_layers, read_beta, read_y, tf_forward, tf_forward_trace, tf_norm};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_COLUMNS: &str = "experiment,seed,axis,x,k,eta,metric,value";

const TAG_MODEL: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_TEST: u64 = 3;
const TAG_INIT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "exp-prompt-length")]
    PromptLength,
    #[serde(rename = "exp-num-prompts")]
    NumPrompts,
    #[serde(rename = "exp-dimension")]
    Dimension,
    #[serde(rename = "exp-rates")]
    Rates,
    #[serde(rename = "exp-lsa-flow")]
    LsaFlow,
    #[serde(rename = "exp-construct-check")]
    ConstructCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::PromptLength,
        Experiment::NumPrompts,
        Experiment::Dimension,
        Experiment::Rates,
        Experiment::LsaFlow,
        Experiment::ConstructCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::PromptLength => "exp-prompt-length",
            Experiment::NumPrompts => "exp-num-prompts",
            Experiment::Dimension => "exp-dimension",
            Experiment::Rates => "exp-rates",
            Experiment::LsaFlow => "exp-lsa-flow",
            Experiment::ConstructCheck => "exp-construct-check",
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSettings {
    pub h: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub integrator: Integrator,
    pub record_every: usize,
    /// Initial scale γ as a fraction of the positivity bound.
    pub gamma_frac: f64,
}

impl FlowSettings {
    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            h: self.h,
            max_steps: self.max_steps,
            grad_tol: self.grad_tol,
            integrator: self.integrator,
            record_every: self.record_every,
        }
    }
}

impl Default for FlowSettings {
    fn default() -> Self {
        let f = FlowConfig::default();
        Self {
            h: f.h,
            max_steps: f.max_steps,
            grad_tol: f.grad_tol,
            integrator: f.integrator,
            record_every: 1000,
            gamma_frac: 0.5,
        }
    }
}

/// Resolved run configuration. Unset fields take the experiment's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub k: usize,
    /// Component counts swept by the mixture experiments.
    pub ks: Vec<usize>,
    pub etas: Vec<f64>,
    pub n: usize,
    pub ns: Vec<usize>,
    /// Training prompts per fit.
    pub b: usize,
    pub bs: Vec<usize>,
    pub ds: Vec<usize>,
    /// Embedding height of the constructed stack; 0 picks the minimum.
    pub height: usize,
    pub t_steps: usize,
    pub outer: usize,
    pub alpha: f64,
    pub seeds: usize,
    /// First trial seed; trial i uses seed + i.
    pub seed: u64,
    /// Fresh prompts per excess-risk estimate.
    pub test_prompts: usize,
    pub lr: f64,
    pub epochs: usize,
    pub clip_r: f64,
    pub em_eps: f64,
    pub em_max_iter: usize,
    /// Fresh random starts tried when batch EM collapses a component.
    pub em_restarts: usize,
    /// Warm-start cosine with the truth at high SNR.
    pub warm_cos: f64,
    /// ‖β⁽⁰⁾‖ at low SNR.
    pub init_norm: f64,
    pub flow: FlowSettings,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults_for(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            d: 32,
            k: 2,
            ks: vec![2, 3, 5, 20],
            etas: vec![1.0, 5.0, 10.0],
            n: 64,
            ns: vec![16, 32, 64, 128],
            b: 64,
            bs: vec![16, 32, 64, 128],
            ds: vec![8, 16, 32],
            height: 0,
            t_steps: 10,
            outer: 50,
            alpha: 0.5,
            seeds: 20,
            seed: 0,
            test_prompts: 2000,
            lr: 1e-3,
            epochs: 500,
            clip_r: 1e3,
            em_eps: 1e-4,
            em_max_iter: 500,
            em_restarts: 5,
            warm_cos: 0.9,
            init_norm: 0.2,
            flow: FlowSettings::default(),
            out: PathBuf::from("out"),
        };
        match experiment {
            Experiment::PromptLength | Experiment::NumPrompts | Experiment::Dimension => base,
            Experiment::Rates => Self { d: 8, etas: vec![10.0, 0.2], ns: vec![250, 1000, 4000], outer: 500, ..base },
            Experiment::LsaFlow => Self { d: 4, k: 6, n: 100, etas: vec![1.0], seeds: 5, ..base },
            Experiment::ConstructCheck => Self { d: 4, n: 32, t_steps: 5, outer: 3, etas: vec![10.0], seeds: 5, ..base },
        }
    }

    /// Parses a TOML config over the experiment's defaults. `experiment`
    /// overrides the file's own `experiment` key.
    pub fn from_toml(text: &str, experiment: Option<Experiment>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let exp = match (experiment, user.get("experiment")) {
            (Some(e), _) => e,
            (None, Some(v)) => v.as_str().ok_or_else(|| Error::Config("experiment must be a string".into()))?.parse()?,
            (None, None) => return Err(Error::Config("no experiment given".into())),
        };
        let mut merged = toml::Table::try_from(Self::defaults_for(exp)).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in user {
            match (merged.get_mut(&key), value) {
                (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => dst.extend(src),
                (_, value) => {
                    merged.insert(key, value);
                }
            }
        }
        merged.insert("experiment".into(), toml::Value::String(exp.name().into()));
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are TOML-representable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        for (name, empty) in [
            ("ks", self.ks.is_empty()),
            ("etas", self.etas.is_empty()),
            ("ns", self.ns.is_empty()),
            ("bs", self.bs.is_empty()),
            ("ds", self.ds.is_empty()),
        ] {
            if empty {
                return bad(format!("grid {name} is empty"));
            }
        }
        if self.ks.iter().chain(&self.ns).chain(&self.bs).chain(&self.ds).any(|&v| v == 0) || self.d == 0 || self.n == 0 || self.b == 0 {
            return bad("sizes must be positive".into());
        }
        if self.etas.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("every η must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("α = {} outside (0, 1)", self.alpha));
        }
        if self.test_prompts < 2 {
            return bad("test_prompts must be at least 2".into());
        }
        if !(self.warm_cos > 0.0 && self.warm_cos < 1.0) {
            return bad(format!("warm_cos = {} outside (0, 1)", self.warm_cos));
        }
        if self.experiment == Experiment::Rates && self.ns.len() < 3 {
            return bad("rate fits need at least three prompt lengths".into());
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    /// SHA-256 over the git blob framing of the canonical TOML form. The
    /// output directory does not enter the hash.
    pub fn content_hash(&self) -> String {
        let body = Self { out: PathBuf::new(), ..self.clone() }.to_toml();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub seed: u64,
    pub axis: &'static str,
    pub x: f64,
    pub k: usize,
    pub eta: f64,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub eta: f64,
    pub fit: RateFit,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub hash: String,
    pub rows: Vec<Row>,
    /// Only filled by `exp-rates`.
    pub rates: Vec<RateSummary>,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        let name = self.config.experiment.name();
        let mut s = format!("# moricl-csv schema={SCHEMA_VERSION} experiment={name} config_hash={}\n{CSV_COLUMNS}\n", self.hash);
        for r in &self.rows {
            let _ = writeln!(s, "{name},{},{},{},{},{},{},{}", r.seed, r.axis, r.x, r.k, r.eta, r.metric, r.value);
        }
        s
    }

    pub fn rates_csv(&self) -> String {
        let mut s = format!("# moricl-rates schema={SCHEMA_VERSION} config_hash={}\neta,regime,slope,intercept,r2,ns,median_errors\n", self.hash);
        for r in &self.rates {
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.eta,
                regime(r.eta),
                r.fit.slope,
                r.fit.intercept,
                r.fit.r2,
                join(&r.fit.ns),
                join(&r.fit.errors)
            );
        }
        s
    }

    pub fn manifest(&self) -> String {
        let seeds = self.config.seed_list().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        format!(
            "schema = {SCHEMA_VERSION}\nconfig_hash = \"{}\"\nseeds = [{seeds}]\n\n[config]\n{}",
            self.hash,
            self.config.to_toml().replace("[flow]", "[config.flow]")
        )
    }

    /// Writes `<exp>.csv`, `<exp>.manifest.toml` and, for rates,
    /// `<exp>.rates.csv` under `dir`. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let name = self.config.experiment.name();
        let mut files = vec![(dir.join(format!("{name}.csv")), self.csv()), (dir.join(format!("{name}.manifest.toml")), self.manifest())];
        if !self.rates.is_empty() {
            files.push((dir.join(format!("{name}.rates.csv")), self.rates_csv()));
        }
        for (path, body) in &files {
            std::fs::write(path, body)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

fn regime(eta: f64) -> &'static str {
    if eta >= 1.0 {
        "high"
    } else {
        "low"
    }
}

/// Runs every seed of `cfg` on `threads` workers (0 = rayon's default).
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let seeds = cfg.seed_list();
    let per_seed: Vec<Result<Vec<Row>>> = pool.install(|| seeds.par_iter().map(|&s| trial(cfg, s)).collect());
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    let rates = if cfg.experiment == Experiment::Rates { summarize_rates(cfg, &rows)? } else { Vec::new() };
    Ok(RunOutput { config: cfg.clone(), hash: cfg.content_hash(), rows, rates })
}

fn trial(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    match cfg.experiment {
        Experiment::PromptLength => {
            for &eta in &cfg.etas {
                for &k in &cfg.ks {
                    for &n in &cfg.ns {
                        let m = mixture_trial(cfg, seed, cfg.d, k, eta, n, cfg.b)?;
                        push_all(&mut rows, seed, "n", n as f64, k, eta, m);
                    }
                }
            }
        }
        Experiment::NumPrompts => {
            for &eta in &cfg.etas {
                for &k in &cfg.ks {
                    for &b in &cfg.bs {
                        let m = mixture_trial(cfg, seed, cfg.d, k, eta, cfg.n, b)?;
                        push_all(&mut rows, seed, "B", b as f64, k, eta, m);
                    }
                }
            }
        }
        Experiment::Dimension => {
            for &eta in &cfg.etas {
                for &k in &cfg.ks {
                    for &d in &cfg.ds {
                        let m = mixture_trial(cfg, seed, d, k, eta, cfg.n, cfg.b)?;
                        push_all(&mut rows, seed, "d", d as f64, k, eta, m);
                    }
                }
            }
        }
        Experiment::Rates => {
            for &eta in &cfg.etas {
                for &n in &cfg.ns {
                    let e = em_rate_error(cfg, eta, n, seed)?;
                    push_all(&mut rows, seed, "n", n as f64, 2, eta, vec![("error", e)]);
                }
            }
        }
        Experiment::LsaFlow => {
            for &eta in &cfg.etas {
                rows.extend(flow_trial(cfg, seed, eta)?);
            }
        }
        Experiment::ConstructCheck => {
            for &eta in &cfg.etas {
                let m = construct_trial(cfg, seed, eta)?;
                push_all(&mut rows, seed, "-", 0.0, 2, eta, m);
            }
        }
    }
    Ok(rows)
}

fn push_all(rows: &mut Vec<Row>, seed: u64, axis: &'static str, x: f64, k: usize, eta: f64, metrics: Vec<(&'static str, f64)>) {
    rows.extend(metrics.into_iter().map(|(metric, value)| Row { seed, axis, x, k, eta, metric, value }));
}

/// Median error per (η, n) over seeds and the log-log slope per η.
fn summarize_rates(cfg: &ExperimentConfig, rows: &[Row]) -> Result<Vec<RateSummary>> {
    cfg.etas
        .iter()
        .map(|&eta| {
            let ns: Vec<f64> = cfg.ns.iter().map(|&n| n as f64).collect();
            let meds: Vec<f64> = ns
                .iter()
                .map(|&n| {
                    let v: Vec<f64> = rows.iter().filter(|r| r.eta == eta && r.x == n).map(|r| r.value).collect();
                    median(&v)
                })
                .collect();
            Ok(RateSummary { eta, fit: rate_fit(&ns, &meds)? })
        })
        .collect()
}

/// Symmetric two-component model with unit-norm components and noise set by η.
fn symmetric_model(d: usize, eta: f64, seed: u64) -> Result<MoRModel> {
    sample_model(d, 2, 1.0, true, child_seed(seed, &[TAG_MODEL, d as u64]))?.with_snr(eta)
}

/// Sign-aligned error of gradient EM on one PerSample prompt of length `n`.
///
/// η ≥ 1 runs the high-SNR regime: ‖β*‖ = 1, ϑ = 2/η, warm start at cosine
/// `warm_cos`. η < 1 runs the low-SNR regime: ϑ = 1, ‖β*‖ = η/2 and a random
/// start of norm `init_norm`. The model and start depend on the seed only,
/// so one seed traces a curve over n.
pub fn em_rate_error(cfg: &ExperimentConfig, eta: f64, n: usize, seed: u64) -> Result<f64> {
    let d = cfg.d;
    let mut rng = child_rng(seed, &[TAG_INIT, d as u64, eta.to_bits()]);
    let (model, init) = if eta >= 1.0 {
        let m = symmetric_model(d, eta, seed)?;
        let init = warm_start(&m.components()[0], cfg.warm_cos, 1.0, &mut rng);
        (m, init)
    } else {
        let star = unit_sphere(d, &mut child_rng(seed, &[TAG_MODEL, d as u64])) * (eta / 2.0);
        let m = MoRModel::symmetric(star, 1.0)?;
        (m, unit_sphere(d, &mut rng) * cfg.init_norm)
    };
    let prompt = sample_prompt(&model, n, Mixing::PerSample, child_seed(seed, &[TAG_TRAIN, n as u64, eta.to_bits()]))?;
    let traj = run_gradient_em_two(&init, &prompt, cfg.alpha, cfg.t_steps, cfg.outer, model.noise_sd())?;
    Ok(sign_aligned_error(traj.estimate(), &model.components()[0]))
}

fn mixture_setup(seed: u64, d: usize, k: usize, eta: f64, n: usize, b: usize) -> Result<(MoRModel, Vec<crate::data::Prompt>, [u64; 5])> {
    let tag = [d as u64, k as u64, eta.to_bits(), n as u64, b as u64];
    let model = sample_model(d, k, 1.0, false, child_seed(seed, &[TAG_MODEL, d as u64, k as u64]))?.with_snr(eta)?;
    let train_seed = child_seed(seed, &[&[TAG_TRAIN][..], &tag].concat());
    let prompts = (0..b)
        .map(|i| sample_prompt(&model, n, Mixing::PerPrompt, child_seed(train_seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, prompts, tag))
}

/// Batch EM fitted on `b` PerPrompt prompts of length `n`, scored by the
/// excess risk of the posterior-mean predictor on fresh prompts.
pub fn em_trial(cfg: &ExperimentConfig, seed: u64, d: usize, k: usize, eta: f64, n: usize, b: usize) -> Result<Vec<(&'static str, f64)>> {
    let (model, prompts, tag) = mixture_setup(seed, d, k, eta, n, b)?;
    let theta = model.noise_sd();
    let mut last_err = None;
    for attempt in 0..cfg.em_restarts.max(1) {
        let init_tag = [&[TAG_INIT, attempt as u64][..], &tag].concat();
        let init = batch_init(k, d, None, &mut child_rng(seed, &init_tag))?;
        match batch_em(&prompts, &init, theta, cfg.em_eps, cfg.em_max_iter) {
            Ok(fit) => {
                let test_seed = child_seed(seed, &[&[TAG_TEST][..], &tag].concat());
                let risk =
                    excess_risk_linear_mc(|p| posterior_beta(&fit.state, p, theta), &model, Mixing::PerPrompt, n, cfg.test_prompts, test_seed)?;
                return Ok(vec![
                    ("em_excess", risk.mean),
                    ("em_excess_se", risk.se),
                    ("em_iterations", fit.iterations as f64),
                    ("em_converged", f64::from(u8::from(fit.converged))),
                    ("em_restarts", attempt as f64),
                ]);
            }
            Err(e @ (Error::ComponentCollapse { .. } | Error::Singular { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    log::warn!(
        "batch EM failed after {} starts (d={d}, K={k}, η={eta}, n={n}, B={b}, seed={seed}): {}",
        cfg.em_restarts.max(1),
        last_err.expect("at least one attempt ran")
    );
    Ok(vec![("em_failed", 1.0)])
}

/// GD-trained LSA on the same prompts as [`em_trial`], scored by excess risk.
pub fn lsa_trial(cfg: &ExperimentConfig, seed: u64, d: usize, k: usize, eta: f64, n: usize, b: usize) -> Result<Vec<(&'static str, f64)>> {
    let (model, prompts, tag) = mixture_setup(seed, d, k, eta, n, b)?;
    let params0 = LsaParams::diagonal(DMatrix::identity(d, d) / d as f64, 1.0);
    let tc = TrainConfig { lr: cfg.lr, epochs: cfg.epochs, clip_r: cfg.clip_r, norm_bound: None };
    let trained = train_lsa_empirical(&prompts, &params0, &tc)?;
    let risk = excess_risk_mc(
        |p| clip(lsa_forward(&embed_e(p), &trained.params), cfg.clip_r),
        &model,
        Mixing::PerPrompt,
        n,
        cfg.test_prompts,
        child_seed(seed, &[&[TAG_TEST][..], &tag].concat()),
    )?;
    Ok(vec![
        ("lsa_excess", risk.mean),
        ("lsa_excess_se", risk.se),
        ("lsa_train_loss", *trained.loss_history.last().expect("history holds the initial loss")),
    ])
}

fn mixture_trial(cfg: &ExperimentConfig, seed: u64, d: usize, k: usize, eta: f64, n: usize, b: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut m = em_trial(cfg, seed, d, k, eta, n, b)?;
    m.extend(lsa_trial(cfg, seed, d, k, eta, n, b)?);
    Ok(m)
}

/// Zero-mean mixture: K random unit directions, each paired with its negative.
pub fn centered_model(d: usize, k: usize, eta: f64, seed: u64) -> Result<MoRModel> {
    let mut rng = child_rng(seed, &[TAG_MODEL, d as u64, k as u64]);
    let mut comps = Vec::with_capacity(2 * k);
    for _ in 0..k {
        let b = unit_sphere(d, &mut rng);
        comps.push(b.clone());
        comps.push(-b);
    }
    MoRModel::new(comps, vec![0.5 / k as f64; 2 * k], 1.0)?.with_snr(eta)
}

fn flow_trial(cfg: &ExperimentConfig, seed: u64, eta: f64) -> Result<Vec<Row>> {
    let (d, k, n) = (cfg.d, cfg.k, cfg.n);
    let model = centered_model(d, k, eta, seed)?;
    let theta = model.noise_sd();
    let moments = mixture_moments(&model);
    let mut rng = child_rng(seed, &[TAG_INIT, d as u64, k as u64]);
    let dir = DMatrix::from_fn(d, d, |_, _| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal));
    let bound = crate::lsa::gamma_bound(&moments, n, theta);
    if !(bound > 0.0) {
        return Err(Error::Degenerate(format!("Eββᵀ is singular for d = {d}, K = {k} pairs; the positivity bound is zero")));
    }
    let init = init_params(cfg.flow.gamma_frac * bound, &dir, &moments, n, theta)?;
    let traj = gradient_flow(&init.params, &moments, n, theta, &cfg.flow.flow_config())?;
    let opt = closed_form_optimum(&moments, n, theta)?;
    let mut rows = Vec::new();
    for r in &traj.records {
        push_all(
            &mut rows,
            seed,
            "t",
            r.t,
            2 * k,
            eta,
            vec![("loss", r.loss), ("grad_norm", r.grad_norm), ("conservation", r.conservation), ("dist_to_optimum", r.dist_to_optimum)],
        );
    }
    let last = traj.records.last().expect("trajectory holds the initial record");
    push_all(
        &mut rows,
        seed,
        "-",
        0.0,
        2 * k,
        eta,
        vec![
            ("steps", traj.steps as f64),
            ("converged", f64::from(u8::from(traj.converged))),
            ("final_grad_norm", last.grad_norm),
            ("loss_gap", last.loss - opt.min_loss),
            ("final_dist_to_optimum", last.dist_to_optimum),
            ("max_drift", traj.max_drift),
            ("u_neg1", traj.params.u_neg1),
            ("u_neg1_star", opt.u_neg1),
        ],
    );
    Ok(rows)
}

/// Constructed stack against the reference gradient-EM trajectory.
pub fn construct_trial(cfg: &ExperimentConfig, seed: u64, eta: f64) -> Result<Vec<(&'static str, f64)>> {
    let (d, n) = (cfg.d, cfg.n);
    let model = symmetric_model(d, eta, seed)?;
    let theta = model.noise_sd();
    let prompt = sample_prompt(&model, n, Mixing::PerSample, child_seed(seed, &[TAG_TRAIN, n as u64]))?;
    let init = warm_start(&model.components()[0], cfg.warm_cos, 1.0, &mut child_rng(seed, &[TAG_INIT]));
    let height = if cfg.height == 0 { SlotMap::min_height(d) } else { cfg.height };
    let tf = build_em_transformer(cfg.t_steps, cfg.outer, cfg.alpha, theta, d, height, n)?;
    let mut h = embed_h(&prompt, height)?;
    h.set_beta(&init);

    let mut after_e = h.clone();
    for p in build_estep_layers(theta, &h.slots, n)? {
        after_e = apply_primitive(&after_e, &p)?;
    }
    let w_ref = weights_two(&init, &prompt, theta);
    let w_diff = (0..n).map(|i| (after_e.matrix[(h.slots.w(), i)] - w_ref[i]).abs()).fold(0.0, f64::max);

    let reference = run_gradient_em_two(&init, &prompt, cfg.alpha, cfg.t_steps, cfg.outer, theta)?;
    let trace = tf_forward_trace(&tf, &h)?;
    let mut beta_diff: f64 = 0.0;
    for (snap, b) in trace.iter().zip(&reference.betas[1..]) {
        for c in 0..=n {
            let col: DVector<f64> = snap.slice(h.slots.beta(), c);
            beta_diff = beta_diff.max((col - b).amax());
        }
    }
    let out = tf_forward(&tf, &h)?;
    let coef = tf.meta.pis.0 - tf.meta.pis.1;
    let readout_diff = (read_y(&out) - prompt.query.dot(&(read_beta(&out) * coef))).abs();
    Ok(vec![
        ("max_beta_diff", beta_diff),
        ("max_weight_diff", w_diff),
        ("readout_diff", readout_diff),
        ("layers", tf.layer_count() as f64),
        ("tf_norm", tf_norm(&tf)),
        ("em_error", sign_aligned_error(reference.estimate(), &model.components()[0])),
    ])
}

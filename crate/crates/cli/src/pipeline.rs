//! Stage orchestration.
//!
//! Each stage is computed at most once per run. The expensive ones (mixing,
//! invariant, corrector, effective) are cached under `<out>/cache`, keyed by
//! the SHA-256 of the stage name, the coefficient fingerprint, the resolved
//! stage configuration and the fingerprints of the upstream results it
//! consumed. Changing the coefficients or any upstream result therefore
//! invalidates every dependent cache entry.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use homog_core::clt::{verify_clt, CltReport};
use homog_core::coefficients::{divergence_form, validate, ValidationReport};
use homog_core::corrector::{differentiate, solve_corrector, CorrectorField, CorrectorOptions, CorrectorTarget, MixingEstimate};
use homog_core::effective::{cross_check, effective_dbeta_form, effective_from_corrector, effective_from_longtime, CrossCheck, EffectiveModel};
use homog_core::ergodic::{
    default_burn_in, estimate_invariant, fourier_modes, mixing_rate_dictionary, pi_average, pi_average_scalar, InvariantMeasureEstimate, MixingDiagnostic, PiAverage,
    TestFunction,
};
use homog_core::feynman_kac::{EllipticData, FeynmanKacEstimate, ParabolicData, Problem, StudyProblem, StudyReport, epsilon_convergence_study};
use homog_core::field::MatrixFn;
use homog_core::sde::{hitting_diagnostic, simulate_original, simulate_scaled, start_grid, uniform_starts, HittingStats};
use homog_core::{Builtin, CoefficientSet, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{derive_seed, Budget, ExperimentConfig, ModelSource, Route, Starts, StudyKind, TimeScale};
use crate::error::CliError;
use crate::exec::Rayon;
use crate::grid_file;
use crate::output::{self, sha256_hex, Outputs};

/// Bumped whenever cached layouts or stage semantics change.
const CACHE_VERSION: u32 = 2;

type Res<T> = Result<T, CliError>;

/// A stage result together with the fingerprint of its serialized form.
#[derive(Debug, Clone)]
pub struct Staged<T> {
    pub value: T,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CacheEvent {
    pub stage: String,
    pub key: String,
    pub hit: bool,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantOut {
    pub measure: InvariantMeasureEstimate,
    pub burn_in: f64,
    /// Time average of `b` along the sampled paths.
    pub pi_b: PiAverage,
    /// Bin-centre average of `b` against the histogram, for comparison.
    pub pi_b_binned: PiAverage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectorOut {
    pub beta: CorrectorField,
    pub delta: Option<CorrectorField>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteModel {
    pub route: Route,
    pub model: EffectiveModel,
    /// Long-time route only: R^2 of the covariance against time.
    pub linearity_r2: Option<f64>,
    /// Comparison with the first route.
    pub cross_check: Option<CrossCheck>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveOut {
    pub routes: Vec<RouteModel>,
}

impl EffectiveOut {
    pub fn primary(&self) -> &EffectiveModel {
        &self.routes[0].model
    }
}

/// Builds the coefficient set and its fingerprint.
pub fn build_coefficients(cfg: &ExperimentConfig) -> Res<(CoefficientSet, String)> {
    let spec = &cfg.coefficients;
    let mut h = json!({ "options": spec.options, "label": spec.label });
    let set = match (&spec.builtin, &spec.sigma) {
        (Some(label), None) => {
            if spec.b.is_some() || spec.b_bar.is_some() || spec.noise_dim.is_some() || spec.divergence_step.is_some() {
                return Err(CliError::Config("coefficients: `builtin` cannot be combined with field files".into()));
            }
            h["builtin"] = json!(label);
            Builtin::from_label(label)?.build(&spec.options)?
        }
        (None, Some(sigma_path)) => {
            if spec.options.periods.is_some() {
                return Err(CliError::Config("coefficients: `options.periods` only applies to builtins".into()));
            }
            let sigma_path = cfg.resolve(sigma_path);
            let (_, sigma) = grid_file::read(&sigma_path)?;
            let torus = sigma.torus.clone();
            let n = torus.dim();
            let m = spec.noise_dim.unwrap_or(n);
            if sigma.ncomp != n * m {
                return Err(CliError::Config(format!("sigma file has {} components, expected n*m = {}", sigma.ncomp, n * m)));
            }
            h["sigma"] = json!(sha256_hex(&fs::read(&sigma_path).map_err(|e| CliError::io(&sigma_path, e))?));
            h["noise_dim"] = json!(m);
            let sigma_fn: MatrixFn = sigma.into_vector_fn();
            let read_vector = |p: &PathBuf, what: &str| -> Res<(homog_core::field::PeriodicGrid, String)> {
                let path = cfg.resolve(p);
                let (_, g) = grid_file::read(&path)?;
                if g.torus != torus || g.ncomp != n {
                    return Err(CliError::Config(format!("{what} file must live on the sigma torus and have {n} components")));
                }
                let digest = sha256_hex(&fs::read(&path).map_err(|e| CliError::io(&path, e))?);
                Ok((g, digest))
            };
            let set = match (&spec.b, &spec.b_bar) {
                (Some(b), None) => {
                    let (g, digest) = read_vector(b, "b")?;
                    h["b"] = json!(digest);
                    CoefficientSet::builder(torus, m).sigma(sigma_fn).drift_b(g.into_vector_fn()).build()
                }
                (None, Some(b_bar)) => {
                    let step = spec
                        .divergence_step
                        .ok_or_else(|| CliError::Config("coefficients: `b_bar` needs `divergence_step`".into()))?;
                    let (g, digest) = read_vector(b_bar, "b_bar")?;
                    h["b_bar"] = json!(digest);
                    h["divergence_step"] = json!(step);
                    divergence_form(torus, m, sigma_fn, g.into_vector_fn(), step)?
                }
                _ => return Err(CliError::Config("coefficients: give exactly one of `b` and `b_bar`".into())),
            };
            let set = set.with_label(spec.label.clone().unwrap_or_else(|| "grid".into()));
            spec.options.apply(set)?
        }
        _ => return Err(CliError::Config("coefficients: give exactly one of `builtin` and `sigma`".into())),
    };
    let fingerprint = sha256_hex(h.to_string().as_bytes());
    Ok((set, fingerprint))
}

/// Everything one invocation needs: configuration, engine, outputs and the
/// stage results computed so far.
pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub budget: Budget,
    pub seed: u64,
    pub exec: &'a Rayon,
    pub set: CoefficientSet,
    pub coefficient_fingerprint: String,
    pub out: Outputs,
    seeds: RefCell<BTreeMap<String, u64>>,
    cache_events: RefCell<Vec<CacheEvent>>,
    validation: Option<ValidationReport>,
    hitting: Option<Vec<HittingStats>>,
    mixing: Option<Staged<MixingDiagnostic>>,
    invariant: Option<Staged<InvariantOut>>,
    corrector: Option<Staged<CorrectorOut>>,
    effective: Option<Staged<EffectiveOut>>,
    clt: Option<CltReport>,
}

/// `mean / stderr`, with `0/0 = 0` for exactly known averages.
fn z_scores(avg: &PiAverage) -> Vec<f64> {
    avg.value
        .iter()
        .zip(&avg.stderr)
        .map(|(m, s)| if *s > 0.0 { m / s } else if *m == 0.0 { 0.0 } else { f64::INFINITY.copysign(*m) })
        .collect()
}

fn fingerprint_of<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a ExperimentConfig, budget: Budget, seed: u64, exec: &'a Rayon, out_dir: &std::path::Path) -> Res<Self> {
        let (set, coefficient_fingerprint) = build_coefficients(cfg)?;
        Ok(Self {
            cfg,
            budget,
            seed,
            exec,
            set,
            coefficient_fingerprint,
            out: Outputs::new(out_dir)?,
            seeds: RefCell::new(BTreeMap::new()),
            cache_events: RefCell::new(Vec::new()),
            validation: None,
            hitting: None,
            mixing: None,
            invariant: None,
            corrector: None,
            effective: None,
            clt: None,
        })
    }

    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        self.seeds.borrow().clone()
    }

    pub fn cache_events(&self) -> Vec<CacheEvent> {
        self.cache_events.borrow().clone()
    }

    fn seed_for(&self, stage: &str, salt: u64) -> u64 {
        let s = derive_seed(self.seed, stage, salt);
        self.seeds.borrow_mut().insert(stage.to_string(), s);
        s
    }

    /// The stage's simulation settings after budget scaling and seeding.
    fn sim(&self, stage: &str, sim: &SimConfig) -> Res<SimConfig> {
        let mut s = sim.clone();
        s.n_paths = self.budget.paths(sim.n_paths);
        s.seed = self.seed_for(stage, sim.seed);
        s.validate()?;
        Ok(s)
    }

    fn starts(&self, stage: &str, starts: &Starts) -> Res<Vec<Vec<f64>>> {
        let torus = self.set.torus();
        let pts = match starts {
            Starts::Points { points } => points.clone(),
            Starts::Grid { per_axis } => start_grid(torus, (*per_axis).max(1)),
            Starts::Uniform { n } => uniform_starts(torus, (*n).max(1), self.seed_for(&format!("{stage}/starts"), 0)),
        };
        self.check_points(stage, &pts)?;
        Ok(pts)
    }

    fn check_points(&self, what: &str, pts: &[Vec<f64>]) -> Res<()> {
        if pts.is_empty() {
            return Err(CliError::Config(format!("{what}: at least one point is required")));
        }
        if let Some(p) = pts.iter().find(|p| p.len() != self.set.dim()) {
            return Err(CliError::Config(format!("{what}: point {p:?} does not have dimension {}", self.set.dim())));
        }
        Ok(())
    }

    /// Loads `stage` from the cache or computes and stores it.
    fn cached<T: Serialize + DeserializeOwned>(&self, stage: &str, material: Value, compute: impl FnOnce() -> Res<T>) -> Res<Staged<T>> {
        let key_doc = json!({
            "version": CACHE_VERSION,
            "stage": stage,
            "coefficients": self.coefficient_fingerprint,
            "material": material,
        });
        let key = sha256_hex(key_doc.to_string().as_bytes());
        let dir = self.out.dir().join("cache");
        let path = dir.join(format!("{stage}-{}.json", &key[..16]));
        let loaded = fs::read(&path).ok().and_then(|b| serde_json::from_slice::<T>(&b).ok());
        let hit = loaded.is_some();
        let value = match loaded {
            Some(v) => v,
            None => {
                let v = compute()?;
                fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                let bytes = serde_json::to_vec(&v).expect("serializable value");
                fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
                v
            }
        };
        let fingerprint = fingerprint_of(&value);
        self.cache_events.borrow_mut().push(CacheEvent {
            stage: stage.to_string(),
            key,
            hit,
            fingerprint: fingerprint.clone(),
        });
        Ok(Staged { value, fingerprint })
    }

    // ---- stages -------------------------------------------------------

    pub fn validate(&mut self) -> Res<&ValidationReport> {
        if self.validation.is_none() {
            let st = &self.cfg.validate;
            let step = st
                .grid_step
                .unwrap_or_else(|| self.set.torus().periods().iter().cloned().fold(f64::INFINITY, f64::min) / 64.0);
            st.region.check_dim(self.set.dim())?;
            let report = validate(&self.set, step, &st.region, &st.options)?;
            self.out.write_json(
                "validation.json",
                &json!({
                    "coefficients": self.set.label(),
                    "description": homog_core::coefficients::describe(&self.set),
                    "region": st.region,
                    "all_passed": report.passed.all(),
                    "report": report,
                }),
            )?;
            self.validation = Some(report);
        }
        Ok(self.validation.as_ref().expect("set above"))
    }

    pub fn simulate(&mut self) -> Res<()> {
        let st = &self.cfg.simulate;
        let sim = self.sim("simulate", &st.sim)?;
        let starts = self.starts("simulate", &st.starts)?;
        let batch = match st.time {
            TimeScale::Scaled => simulate_scaled(&self.set, &sim, &starts, self.exec)?,
            TimeScale::Original => simulate_original(&self.set, sim.epsilon, &sim, &starts, self.exec)?,
        };
        self.out.write_table("paths.csv", &output::paths_table(&batch))?;
        self.out.write_json(
            "simulate.json",
            &json!({
                "coefficients": self.set.label(),
                "time": st.time,
                "config": sim,
                "starts": starts,
                "n_paths": batch.n_paths(),
                "n_times": batch.n_times(),
            }),
        )
    }

    pub fn hitting(&mut self) -> Res<&[HittingStats]> {
        if self.hitting.is_none() {
            let st = &self.cfg.hitting;
            let region = st.region.clone().unwrap_or_else(|| self.cfg.validate.region.clone());
            region.check_dim(self.set.dim())?;
            let sim = self.sim("hitting", &st.sim)?;
            let starts = self.starts("hitting", &st.starts)?;
            let stats = hitting_diagnostic(&self.set, &region, &sim, &starts, self.exec)?;
            let min_fraction = stats.iter().map(|s| s.fraction).fold(1.0, f64::min);
            self.out.write_table("hitting.csv", &output::hitting_table(&stats, self.set.dim()))?;
            self.out.write_json(
                "hitting.json",
                &json!({ "region": region, "config": sim, "min_fraction": min_fraction, "starts": stats.len() }),
            )?;
            self.hitting = Some(stats);
        }
        Ok(self.hitting.as_deref().expect("set above"))
    }

    pub fn mixing(&mut self) -> Res<&Staged<MixingDiagnostic>> {
        if self.mixing.is_none() {
            let st = &self.cfg.mixing;
            let torus = self.set.torus().clone();
            let sim = self.sim("mixing", &st.sim)?;
            let [a, b] = match &st.starts {
                Some(s) => s.clone(),
                None => [vec![0.0; torus.dim()], torus.periods().iter().map(|p| 0.5 * p).collect()],
            };
            self.check_points("mixing", &[a.clone(), b.clone()])?;
            let dictionary: Vec<TestFunction> = match &st.function {
                Some(f) => {
                    let sup = st.sup.or_else(|| f.sup_bound()).ok_or_else(|| {
                        CliError::Config("mixing: `sup` is required for this test function".into())
                    })?;
                    vec![TestFunction::scalar(f.to_fn(), sup)]
                }
                None => fourier_modes(&torus, st.order.max(1)),
            };
            let material = json!({ "sim": sim, "starts": [a, b], "function": st.function, "sup": st.sup, "order": st.order });
            let staged = self.cached("mixing", material, || {
                Ok(mixing_rate_dictionary(&self.set, &dictionary, (&a, &b), &sim, self.exec)?)
            })?;
            let m = &staged.value;
            self.out.write_table("mixing.csv", &output::mixing_table(m))?;
            self.out.write_json(
                "mixing.json",
                &json!({
                    "rate": m.fitted_rate_gamma,
                    "prefactor": m.fitted_prefactor_gamma,
                    "fit_r2": m.fit_r2,
                    "fit_points": m.fit_points,
                    "dictionary_size": dictionary.len(),
                    "fingerprint": staged.fingerprint,
                    "diagnostic": m,
                }),
            )?;
            self.mixing = Some(staged);
        }
        Ok(self.mixing.as_ref().expect("set above"))
    }

    pub fn invariant(&mut self) -> Res<&Staged<InvariantOut>> {
        if self.invariant.is_none() {
            let st = self.cfg.invariant.clone();
            let n = self.set.dim();
            let sim = self.sim("invariant", &st.sim)?;
            let starts = self.starts("invariant", &st.starts)?;
            let bins = st.bins.clone().unwrap_or_else(|| vec![32; n]);
            let (burn_in, upstream) = match st.burn_in {
                Some(b) => (b, Value::Null),
                None => {
                    let m = self.mixing()?;
                    (default_burn_in(Some(m.value.fitted_rate_gamma), sim.horizon), json!(m.fingerprint))
                }
            };
            let material = json!({ "sim": sim, "starts": starts, "bins": bins, "burn_in": burn_in, "mixing": upstream });
            let staged = self.cached("invariant", material, || {
                let measure = estimate_invariant(&self.set, &sim, &bins, &starts, burn_in, self.exec)?;
                let set = &self.set;
                let pi_b_binned = pi_average(&measure, n, &|x: &[f64], out: &mut [f64]| set.drift_b(x, out))?;
                let pi_b = measure.drift_time_average.clone().unwrap_or_else(|| pi_b_binned.clone());
                Ok(InvariantOut { measure, burn_in, pi_b, pi_b_binned })
            })?;
            let v = &staged.value;
            let z = z_scores(&v.pi_b);
            self.out.write_table("histogram.csv", &output::histogram_table(&v.measure))?;
            self.out.write_json(
                "invariant.json",
                &json!({
                    "bins": v.measure.bins,
                    "burn_in": v.burn_in,
                    "total_time": v.measure.total_time,
                    "n_samples": v.measure.n_samples,
                    "max_relative_deviation": v.measure.max_relative_deviation(),
                    "l1_from_uniform": v.measure.l1_from_uniform(),
                    "l1_noise_floor": v.measure.l1_noise_floor(),
                    "pi_b": v.pi_b.value,
                    "pi_b_stderr": v.pi_b.stderr,
                    "pi_b_z": z,
                    "pi_b_binned": v.pi_b_binned.value,
                    "pi_b_binned_stderr": v.pi_b_binned.stderr,
                    "fingerprint": staged.fingerprint,
                }),
            )?;
            self.invariant = Some(staged);
        }
        Ok(self.invariant.as_ref().expect("set above"))
    }

    pub fn corrector(&mut self) -> Res<&Staged<CorrectorOut>> {
        if self.corrector.is_none() {
            let st = self.cfg.corrector.clone();
            let n = self.set.dim();
            let shape: Vec<usize> = st.shape.clone().unwrap_or_else(|| vec![16; n]).iter().map(|&k| self.budget.grid(k)).collect();
            if shape.len() != n {
                return Err(CliError::Config(format!("corrector: shape needs {n} entries")));
            }
            let (mixing, mixing_fp) = match st.mixing {
                Some(m) => (m, Value::Null),
                None => {
                    let m = self.mixing()?;
                    (MixingEstimate::from(&m.value), json!(m.fingerprint))
                }
            };
            let solve_delta = st.potential.unwrap_or(!self.set.d_is_zero());
            let needs_invariant = st.centering.is_none() || solve_delta;
            let (pi_b, pi_d, invariant_fp) = if needs_invariant {
                self.invariant()?;
                let inv = self.invariant.as_ref().expect("computed above");
                let set = &self.set;
                let pd = pi_average_scalar(&inv.value.measure, &|x: &[f64]| set.potential_d(x)).0;
                (inv.value.pi_b.value.clone(), pd, json!(inv.fingerprint))
            } else {
                (vec![0.0; n], 0.0, Value::Null)
            };
            let centering = st.centering.clone().unwrap_or(pi_b);
            if centering.len() != n {
                return Err(CliError::Config(format!("corrector: centering needs {n} entries")));
            }
            // Budgets rescale the grid, so the configured stencil is rounded up to
            // a whole number of the actual spacing.
            let spacing = self.set.torus().periods()[0] / shape[0] as f64;
            let stencil = st.stencil_step.map_or(spacing, |s| (s / spacing - 1e-9).ceil().max(1.0) * spacing);
            let opts = CorrectorOptions {
                shape: shape.clone(),
                n_paths: self.budget.paths(st.n_paths),
                step: st.step,
                seed: self.seed_for("corrector", st.seed),
                noise_refinement: st.noise_refinement,
                tail_tolerance: st.tail_tolerance,
                max_horizon: st.max_horizon,
                mixing: Some(mixing),
                centering,
                batches: st.batches,
                stderr_tolerance: st.stderr_tolerance,
            };
            let delta_opts = CorrectorOptions {
                seed: if solve_delta { self.seed_for("corrector/delta", st.seed) } else { 0 },
                centering: vec![pi_d],
                ..opts.clone()
            };
            let material = json!({
                "options": opts,
                "delta": if solve_delta { json!(delta_opts) } else { Value::Null },
                "stencil": stencil,
                "mixing": mixing_fp,
                "invariant": invariant_fp,
            });
            let staged = self.cached("corrector", material, || {
                let beta = solve_corrector(&self.set, CorrectorTarget::Drift, &opts, self.exec)?;
                let beta = differentiate(&beta, stencil)?;
                let delta = if solve_delta {
                    let d = solve_corrector(&self.set, CorrectorTarget::Potential, &delta_opts, self.exec)?;
                    Some(differentiate(&d, stencil)?)
                } else {
                    None
                };
                Ok(CorrectorOut { beta, delta })
            })?;
            let v = &staged.value;
            self.out.write_table("corrector_beta.csv", &output::corrector_table(&v.beta, "beta"))?;
            if let Some(t) = output::jacobian_table(&v.beta) {
                self.out.write_table("corrector_beta_jacobian.csv", &t)?;
            }
            if let Some(d) = &v.delta {
                self.out.write_table("corrector_delta.csv", &output::corrector_table(d, "delta"))?;
                if let Some(t) = output::jacobian_table(d) {
                    self.out.write_table("corrector_delta_jacobian.csv", &t)?;
                }
            }
            let summary = |f: &CorrectorField| {
                json!({
                    "shape": f.shape,
                    "n_paths_per_node": f.n_paths_per_node,
                    "truncation_t": f.truncation_t,
                    "tail_bound": f.tail_bound,
                    "max_stderr": f.max_stderr(),
                    "stencil_step": f.stencil_step,
                    "richardson": f.richardson,
                })
            };
            self.out.write_json(
                "corrector.json",
                &json!({
                    "beta": summary(&v.beta),
                    "delta": v.delta.as_ref().map(summary),
                    "mixing": mixing,
                    "fingerprint": staged.fingerprint,
                }),
            )?;
            self.corrector = Some(staged);
        }
        Ok(self.corrector.as_ref().expect("set above"))
    }

    pub fn effective(&mut self) -> Res<&Staged<EffectiveOut>> {
        if self.effective.is_none() {
            let st = self.cfg.effective.clone();
            if st.routes.is_empty() {
                return Err(CliError::Config("effective: at least one route is required".into()));
            }
            let needs_corrector = st.routes.iter().any(|r| *r != Route::LongTime);
            let inv = self.invariant()?.clone();
            let corr = if needs_corrector { Some(self.corrector()?.clone()) } else { None };
            let lt_sim = if st.routes.contains(&Route::LongTime) {
                Some(self.sim("effective/long_time", &st.long_time.sim)?)
            } else {
                None
            };
            let lt_seed = if lt_sim.is_some() { self.seed_for("effective/long_time/starts", 0) } else { 0 };
            let material = json!({
                "stage": st,
                "long_time_sim": lt_sim,
                "long_time_starts_seed": lt_seed,
                "invariant": inv.fingerprint,
                "corrector": corr.as_ref().map(|c| c.fingerprint.clone()),
            });
            let staged = self.cached("effective", material, || {
                let pi = &inv.value.measure;
                let pi_b = &inv.value.pi_b.value;
                let mut upstream = vec![format!("invariant:{}", inv.fingerprint)];
                if let Some(c) = &corr {
                    upstream.push(format!("corrector:{}", c.fingerprint));
                }
                let mut routes: Vec<RouteModel> = Vec::new();
                for route in &st.routes {
                    let (mut model, r2) = match route {
                        Route::Corrector => {
                            let c = &corr.as_ref().expect("corrector computed").value;
                            (effective_from_corrector(&self.set, &c.beta, c.delta.as_ref(), pi, st.parabolic)?, None)
                        }
                        Route::DbetaForm => {
                            let c = &corr.as_ref().expect("corrector computed").value;
                            (effective_dbeta_form(&self.set, &c.beta, pi, pi_b)?, None)
                        }
                        Route::LongTime => {
                            let lt = &st.long_time;
                            let starts = pi.sample_points(lt.n_starts.max(1), lt_seed);
                            let sim = lt_sim.as_ref().expect("long-time config resolved");
                            let est = effective_from_longtime(&self.set, sim, &lt.t_grid, &starts, pi_b, lt.r2_threshold, self.exec)?;
                            (est.model, Some(est.linearity_r2))
                        }
                    };
                    model.fingerprints.extend(upstream.iter().cloned());
                    let cc = match routes.first() {
                        Some(first) => Some(cross_check(&first.model, &model, st.cross_check_sigmas)?),
                        None => None,
                    };
                    routes.push(RouteModel {
                        route: *route,
                        model,
                        linearity_r2: r2,
                        cross_check: cc,
                    });
                }
                Ok(EffectiveOut { routes })
            })?;
            self.out.write_json(
                "effective.json",
                &json!({ "primary": staged.value.routes[0].route, "routes": staged.value.routes, "fingerprint": staged.fingerprint }),
            )?;
            self.effective = Some(staged);
        }
        Ok(self.effective.as_ref().expect("set above"))
    }

    /// The effective model, `pi(b)` and an identifier of where they came from.
    fn model(&mut self, source: &ModelSource) -> Res<(EffectiveModel, Vec<f64>, String)> {
        let n = self.set.dim();
        match source {
            ModelSource::Pipeline => {
                let eff = self.effective()?;
                let (model, fp) = (eff.value.primary().clone(), eff.fingerprint.clone());
                let pi_b = self.invariant()?.value.pi_b.value.clone();
                Ok((model, pi_b, format!("effective:{fp}")))
            }
            ModelSource::Analytic {
                cov_a,
                drift_b,
                pi_b,
                parabolic_drift,
                potential,
            } => {
                let mut model = EffectiveModel::analytic(cov_a.clone(), drift_b.clone())?;
                if model.dim != n {
                    return Err(CliError::Config(format!("analytic model has dimension {}, coefficients have {n}", model.dim)));
                }
                match (parabolic_drift, potential) {
                    (Some(d), Some(p)) => model = model.with_parabolic(d.clone(), *p),
                    (None, None) => {}
                    _ => return Err(CliError::Config("analytic model: give both `parabolic_drift` and `potential` or neither".into())),
                }
                let pi_b = pi_b.clone().unwrap_or_else(|| vec![0.0; n]);
                Ok((model, pi_b, "analytic".into()))
            }
        }
    }

    pub fn clt(&mut self) -> Res<&CltReport> {
        if self.clt.is_none() {
            let st = self.cfg.clt.clone();
            let (model, pi_b, source) = self.model(&st.model)?;
            let sim = self.sim("clt", &st.sim)?;
            let starts = self.starts("clt", &st.starts)?;
            let report = verify_clt(&self.set, &model, &pi_b, &st.epsilons, &st.times, &starts, &sim, self.exec)?;
            let last = report.times.len() - 1;
            let final_p: Vec<f64> = report
                .gaussianity_p
                .iter()
                .map(|per_t| per_t[last].iter().cloned().fold(1.0, f64::min))
                .collect();
            self.out.write_table("clt.csv", &output::clt_table(&report))?;
            self.out.write_json(
                "clt.json",
                &json!({
                    "model": source,
                    "config": sim,
                    "linearity_r2": report.linearity_r2,
                    "min_gaussianity_p_final_time": final_p,
                    "min_gaussianity_p_all_times": (0..report.epsilons.len()).map(|e| report.min_gaussianity_p(e)).collect::<Vec<_>>(),
                    "report": report,
                }),
            )?;
            self.clt = Some(report);
        }
        Ok(self.clt.as_ref().expect("set above"))
    }

    fn pi_e(&mut self, given: Option<f64>, source: &ModelSource) -> Res<f64> {
        if let Some(v) = given {
            return Ok(v);
        }
        match source {
            ModelSource::Pipeline => {
                self.invariant()?;
                let inv = self.invariant.as_ref().expect("computed above");
                let set = &self.set;
                Ok(pi_average_scalar(&inv.value.measure, &|x: &[f64]| set.potential_e(x)).0)
            }
            ModelSource::Analytic { .. } => Err(CliError::Config("`pi_e` is required with an analytic model".into())),
        }
    }

    pub fn elliptic(&mut self) -> Res<()> {
        let st = self.cfg.elliptic.clone().ok_or_else(|| CliError::Config("missing [elliptic] section".into()))?;
        st.domain.validate()?;
        self.check_points("elliptic", &st.points)?;
        let data = EllipticData::from_forms(&st.f, &st.g);
        let sim = self.sim("elliptic", &st.sim)?;
        let (model, pi_e, source) = if st.homogenized {
            let (m, _, src) = self.model(&st.model)?;
            let pe = self.pi_e(st.pi_e, &st.model)?;
            (Some(m), pe, src)
        } else {
            (None, 0.0, "coefficients".to_string())
        };
        let problem = match &model {
            Some(m) => Problem::EllipticHomogenized { model: m, domain: &st.domain, data: &data, pi_e },
            None => Problem::Elliptic { set: &self.set, epsilon: st.epsilon, domain: &st.domain, data: &data },
        };
        let results = solve_points(&problem, &st.points, &sim, st.extrapolate, self.exec)?;
        let rows: Vec<(f64, f64, &FeynmanKacEstimate)> = results.iter().map(|r| (r.value, r.stderr, &r.estimate)).collect();
        self.out.write_table("elliptic.csv", &output::solution_table(&st.points, &rows))?;
        self.out.write_json(
            "elliptic.json",
            &json!({
                "homogenized": st.homogenized,
                "model": source,
                "pi_e": if st.homogenized { Some(pi_e) } else { None },
                "config": sim,
                "extrapolated": st.extrapolate,
                "points": results,
            }),
        )
    }

    pub fn parabolic(&mut self) -> Res<()> {
        let st = self.cfg.parabolic.clone().ok_or_else(|| CliError::Config("missing [parabolic] section".into()))?;
        self.check_points("parabolic", &st.points)?;
        let sim = self.sim("parabolic", &st.sim)?;
        let corr = if st.use_delta && !st.homogenized { Some(self.corrector()?.value.clone()) } else { None };
        let inv = if st.use_delta && !st.homogenized { Some(self.invariant()?.value.clone()) } else { None };
        let mut data = ParabolicData::new(st.f.to_fn(), st.g.to_fn());
        data.growth = st.growth;
        if let Some(c) = &corr {
            data.delta = Some(c.delta.as_ref().ok_or(homog_core::Error::MissingDelta)?);
        }
        data.pi = inv.as_ref().map(|i| &i.measure);
        let (model, source) = if st.homogenized {
            let (m, _, src) = self.model(&st.model)?;
            (Some(m), src)
        } else {
            (None, "coefficients".to_string())
        };
        let problem = match &model {
            Some(m) => Problem::ParabolicHomogenized { model: m, data: &data, t: st.t },
            None => Problem::Parabolic { set: &self.set, epsilon: st.epsilon, data: &data, t: st.t },
        };
        if let Some(levels) = st.ladder_levels {
            let ladders = st
                .points
                .iter()
                .map(|x| problem.step_ladder(x, &sim, levels, self.exec))
                .collect::<Result<Vec<_>, _>>()?;
            self.out.write_table("parabolic_ladder.csv", &output::ladder_table(&st.points, &ladders))?;
            return self.out.write_json(
                "parabolic.json",
                &json!({ "homogenized": st.homogenized, "model": source, "config": sim, "t": st.t, "ladders": ladders }),
            );
        }
        let results = solve_points(&problem, &st.points, &sim, false, self.exec)?;
        let rows: Vec<(f64, f64, &FeynmanKacEstimate)> = results.iter().map(|r| (r.value, r.stderr, &r.estimate)).collect();
        self.out.write_table("parabolic.csv", &output::solution_table(&st.points, &rows))?;
        self.out.write_json(
            "parabolic.json",
            &json!({ "homogenized": st.homogenized, "model": source, "config": sim, "t": st.t, "points": results }),
        )
    }

    pub fn study(&mut self) -> Res<()> {
        let st = self.cfg.study.clone().ok_or_else(|| CliError::Config("missing [study] section".into()))?;
        self.check_points("study", &st.points)?;
        let sim = self.sim("study", &st.sim)?;
        let mut eps = st.epsilons.clone();
        eps.sort_by(|a, b| b.total_cmp(a));
        let (model, _, source) = self.model(&st.model)?;
        let report: StudyReport = match st.problem {
            StudyKind::Elliptic => {
                let el = self.cfg.elliptic.clone().ok_or_else(|| CliError::Config("study: needs an [elliptic] section".into()))?;
                el.domain.validate()?;
                let data = EllipticData::from_forms(&el.f, &el.g);
                let pi_e = self.pi_e(el.pi_e, &st.model)?;
                let problem = StudyProblem::Elliptic { set: &self.set, model: &model, domain: &el.domain, data: &data, pi_e };
                epsilon_convergence_study(&problem, &eps, &st.points, &sim, st.extrapolate, self.exec)?
            }
            StudyKind::Parabolic => {
                let pa = self.cfg.parabolic.clone().ok_or_else(|| CliError::Config("study: needs a [parabolic] section".into()))?;
                let corr = if pa.use_delta { Some(self.corrector()?.value.clone()) } else { None };
                let inv = if pa.use_delta { Some(self.invariant()?.value.clone()) } else { None };
                let mut data = ParabolicData::new(pa.f.to_fn(), pa.g.to_fn());
                data.growth = pa.growth;
                if let Some(c) = &corr {
                    data.delta = Some(c.delta.as_ref().ok_or(homog_core::Error::MissingDelta)?);
                }
                data.pi = inv.as_ref().map(|i| &i.measure);
                let mut homogenized = ParabolicData::new(pa.f.to_fn(), pa.g.to_fn());
                homogenized.growth = pa.growth;
                let problem = StudyProblem::Parabolic { set: &self.set, model: &model, data: &data, homogenized_data: &homogenized, t: pa.t };
                epsilon_convergence_study(&problem, &eps, &st.points, &sim, st.extrapolate, self.exec)?
            }
        };
        self.out.write_table("study.csv", &output::study_table(&report))?;
        self.out.write_json(
            "study.json",
            &json!({
                "model": source,
                "config": sim,
                "strictly_decreasing_2sigma": report.strictly_decreasing(2.0),
                "report": report,
            }),
        )
    }

    /// The full degenerate-example chain with a summary of its checks.
    pub fn example2d(&mut self) -> Res<()> {
        let validation_ok = self.validate()?.passed.all();
        let hitting_min = self.hitting()?.iter().map(|s| s.fraction).fold(1.0, f64::min);
        let mixing = self.mixing()?.value.clone();
        let inv = self.invariant()?.value.clone();
        self.corrector()?;
        let model = self.effective()?.value.primary().clone();
        let clt = self.clt()?.clone();
        let n = model.dim;
        let max_dev = inv.measure.max_relative_deviation();
        let pi_b_z = z_scores(&inv.pi_b);
        let symmetric = (0..n).all(|i| (0..n).all(|j| model.cov_a[i * n + j] == model.cov_a[j * n + i]));
        let last = clt.times.len() - 1;
        let final_p = clt.gaussianity_p.iter().map(|t| t[last].iter().cloned().fold(1.0, f64::min)).fold(1.0, f64::min);
        let r2 = clt.linearity_r2.iter().cloned().fold(1.0, f64::min);
        let checks = json!({
            "validation_passed": validation_ok,
            "hitting_min_fraction": hitting_min,
            "hitting_all_reach": hitting_min >= 1.0,
            "mixing_rate": mixing.fitted_rate_gamma,
            "mixing_fit_r2": mixing.fit_r2,
            "invariant_max_relative_deviation": max_dev,
            "invariant_uniform_5pct": max_dev < 0.05,
            "pi_b": inv.pi_b.value,
            "pi_b_z": pi_b_z,
            "pi_b_within_3sigma": pi_b_z.iter().all(|z| z.abs() < 3.0),
            "cov_a": model.cov_a,
            "cov_a_stderr": model.cov_a_stderr,
            "cov_a_noise_bias": model.cov_a_noise_bias,
            "cov_a_symmetric": symmetric,
            "cov_a_min_eigenvalue": model.min_eigenvalue,
            "cov_a_psd": model.min_eigenvalue >= 0.0,
            "clt_linearity_r2": r2,
            "clt_linear": r2 > 0.99,
            "clt_min_p_final_time": final_p,
            "clt_gaussian": final_p > 0.01,
        });
        self.out.write_json("example2d.json", &checks)
    }
}

#[derive(Debug, Clone, Serialize)]
struct PointResult {
    x: Vec<f64>,
    value: f64,
    stderr: f64,
    estimate: FeynmanKacEstimate,
    /// Step-halving extrapolation details, when requested.
    extrapolation: Option<homog_core::feynman_kac::Extrapolation>,
}

fn solve_points(problem: &Problem, points: &[Vec<f64>], sim: &SimConfig, extrapolate: bool, exec: &Rayon) -> Res<Vec<PointResult>> {
    points
        .iter()
        .map(|x| {
            if extrapolate {
                let ex = problem.solve_extrapolated(x, sim, exec)?;
                Ok(PointResult { x: x.clone(), value: ex.value, stderr: ex.stderr, estimate: ex.fine.clone(), extrapolation: Some(ex) })
            } else {
                let est = problem.solve(x, sim, exec)?;
                Ok(PointResult { x: x.clone(), value: est.value, stderr: est.stderr, estimate: est, extrapolation: None })
            }
        })
        .collect()
}

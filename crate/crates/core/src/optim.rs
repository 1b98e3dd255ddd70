//! Derivative-free baselines.
//!
//! Policies map the environment state to an [`EnvAction`] and are built from
//! a flat parameter vector, so any black-box optimizer over boxes can train
//! them. Two optimizers are provided, [`random_search`] and the
//! cross-entropy method [`cem_optimize`], both generic over an objective
//! `f(params, episode_seed)`. [`greedy_phase_align`] picks surface phases by
//! coordinate ascent on the composite channel gain.
//!
//! All results are pure functions of their inputs and seed; population
//! evaluations run in parallel.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::cascaded_channel;
use crate::config::ScenarioConfig;
use crate::covert::covert_beta_floor;
use crate::em::{self, FitCoefficients, PhaseCodebook, Vec3};
use crate::env::{Env, EnvAction, EnvError, EpisodeSummary};
use crate::noma::min_beta_for_public_rate;
use crate::uav::{self, Command, KinematicLimits, UavState, PITCH_MAX};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// SplitMix64 step: decorrelated child seeds from `(seed, k)`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Flat parameter vector with a per-dimension box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyVector {
    pub values: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl PolicyVector {
    pub fn new(values: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if values.len() != bounds.len() {
            return Err(OptimError::Settings(format!("{} values for {} bounds", values.len(), bounds.len())));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi)) {
            return Err(OptimError::Settings(format!("empty interval [{lo}, {hi}]")));
        }
        let mut v = Self { values, bounds };
        v.project();
        Ok(v)
    }

    /// Clamps into the box; returns whether anything moved.
    pub fn project(&mut self) -> bool {
        let mut moved = false;
        for (x, &(lo, hi)) in self.values.iter_mut().zip(&self.bounds) {
            let c = if x.is_nan() { lo } else { x.clamp(lo, hi) };
            moved |= c != *x;
            *x = c;
        }
        moved
    }

    pub fn is_within(&self) -> bool {
        self.values.iter().zip(&self.bounds).all(|(x, (lo, hi))| (lo..=hi).contains(&x))
    }
}

// ---------------------------------------------------------------------------
// Greedy phase alignment
// ---------------------------------------------------------------------------

/// Reflection amplitude seen by the phase search.
#[derive(Debug, Clone, Copy)]
pub enum AmplitudeModel<'a> {
    Constant(f64),
    /// Fitted model at each element's incidence angle (degrees).
    Fitted { fit: &'a FitCoefficients, incident_deg: &'a [f64] },
}

impl AmplitudeModel<'_> {
    pub fn delta(&self, element: usize, theta: f64) -> f64 {
        match *self {
            AmplitudeModel::Constant(a) => a,
            AmplitudeModel::Fitted { fit, incident_deg } => em::fitted_amplitude(theta, incident_deg[element], fit)
                .map(|a| a.value)
                .unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    /// Codebook index per element.
    pub indices: Vec<usize>,
    /// `|h|` of the final composite channel.
    pub gain: f64,
    /// `|h|` at the initial point and after every sweep.
    pub history: Vec<f64>,
}

/// Maximizes `|h_direct + sum_m delta_m e^{j theta_m} conj(h_rx_m) h_af_m|`
/// over codebook phases. Starts from each element's codeword closest to
/// co-phasing with `h_direct`, then sweeps elements in order, moving only on
/// strict improvement, until a sweep changes nothing (at most 10 sweeps).
pub fn greedy_phase_align(
    h_direct: Complex64,
    h_rx: &[Complex64],
    h_af: &[Complex64],
    amplitude: &AmplitudeModel,
    codebook: PhaseCodebook,
) -> Result<GreedyOutcome> {
    let m = h_rx.len();
    if h_af.len() != m {
        return Err(OptimError::Settings(format!("h_rx has {m} elements, h_af {}", h_af.len())));
    }
    if let AmplitudeModel::Fitted { incident_deg, .. } = amplitude {
        if incident_deg.len() != m {
            return Err(OptimError::Settings(format!("{} incidence angles for {m} elements", incident_deg.len())));
        }
    }
    let coupling: Vec<Complex64> = h_rx.iter().zip(h_af).map(|(r, a)| r.conj() * a).collect();
    let levels = codebook.levels();
    // contribution[m][k]: element m's term at codeword k
    let contribution: Vec<Vec<Complex64>> = coupling
        .iter()
        .enumerate()
        .map(|(i, c)| {
            (0..levels)
                .map(|k| {
                    let theta = codebook.phase(k);
                    Complex64::from_polar(amplitude.delta(i, theta), theta) * c
                })
                .collect()
        })
        .collect();

    let reference = h_direct.arg();
    let mut indices: Vec<usize> = coupling.iter().map(|c| codebook.nearest_index(reference - c.arg())).collect();
    let mut total = h_direct + indices.iter().enumerate().map(|(i, &k)| contribution[i][k]).sum::<Complex64>();
    let mut history = vec![total.norm()];

    for _ in 0..10 {
        let mut changed = false;
        for i in 0..m {
            let rest = total - contribution[i][indices[i]];
            let mut best = indices[i];
            let mut best_gain = (rest + contribution[i][best]).norm();
            for k in 0..levels {
                let g = (rest + contribution[i][k]).norm();
                if g > best_gain {
                    best = k;
                    best_gain = g;
                }
            }
            if best != indices[i] {
                indices[i] = best;
                changed = true;
            }
            total = rest + contribution[i][indices[i]];
        }
        history.push(total.norm());
        if !changed {
            break;
        }
    }
    Ok(GreedyOutcome { gain: total.norm(), indices, history })
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

pub trait Policy: Send {
    fn act(&mut self, env: &Env) -> std::result::Result<EnvAction, EnvError>;
}

/// Policy families trainable by the optimizers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Fly both UAVs to optimized waypoints, co-phase the surface towards
    /// Bob and give Carol the least power meeting both constraints.
    #[default]
    Waypoint,
    /// One raw action per slot.
    OpenLoop,
    /// Squashed affine map of positions and running averages.
    Linear,
}

const LINEAR_FEATURES: usize = 9;

impl PolicyKind {
    pub fn dim(self, cfg: &ScenarioConfig) -> usize {
        self.bounds(cfg).len()
    }

    pub fn bounds(self, cfg: &ScenarioConfig) -> Vec<(f64, f64)> {
        match self {
            PolicyKind::Waypoint => WaypointParams::bounds(cfg),
            PolicyKind::OpenLoop => {
                let one = EnvAction::bounds(cfg);
                (0..cfg.episode.slots).flat_map(|_| one.iter().copied()).collect()
            }
            PolicyKind::Linear => vec![(-5.0, 5.0); EnvAction::dim(cfg.elements()) * LINEAR_FEATURES],
        }
    }

    /// Starting point for the search distribution.
    pub fn initial(self, cfg: &ScenarioConfig) -> Vec<f64> {
        match self {
            PolicyKind::Waypoint => WaypointParams::hold(cfg).to_vec(),
            PolicyKind::OpenLoop => {
                let mut a = EnvAction::neutral(cfg.elements());
                a.beta = covert_beta_floor(cfg.covert.epsilon).clamp(cfg.noma.beta_min, cfg.noma.beta_max);
                let one = a.to_vec();
                (0..cfg.episode.slots).flat_map(|_| one.iter().copied()).collect()
            }
            PolicyKind::Linear => vec![0.0; self.dim(cfg)],
        }
    }

    pub fn build(self, cfg: &ScenarioConfig, values: &[f64]) -> Result<Box<dyn Policy>> {
        let bounds = self.bounds(cfg);
        let v = PolicyVector::new(values.to_vec(), bounds)?;
        Ok(match self {
            PolicyKind::Waypoint => Box::new(Waypoint::new(cfg, WaypointParams::from_slice(&v.values))),
            PolicyKind::OpenLoop => Box::new(OpenLoop { schedule: v.values, dim: EnvAction::dim(cfg.elements()) }),
            PolicyKind::Linear => Box::new(LinearFeedback { weights: v.values, bounds: EnvAction::bounds(cfg) }),
        })
    }
}

/// Raw action schedule, one row per slot.
#[derive(Debug, Clone)]
pub struct OpenLoop {
    schedule: Vec<f64>,
    dim: usize,
}

impl Policy for OpenLoop {
    fn act(&mut self, env: &Env) -> std::result::Result<EnvAction, EnvError> {
        let rows = self.schedule.len() / self.dim;
        let t = env.state().t.min(rows.saturating_sub(1));
        EnvAction::from_slice(&self.schedule[t * self.dim..(t + 1) * self.dim], env.elements())
    }
}

/// `a_i = lo_i + (hi_i - lo_i) sigmoid(w_i . f)` with features
/// `[1, q_A / 100, q_B / 100, avg R_b / 10, avg R_c / 10]`.
#[derive(Debug, Clone)]
pub struct LinearFeedback {
    weights: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

impl Policy for LinearFeedback {
    fn act(&mut self, env: &Env) -> std::result::Result<EnvAction, EnvError> {
        let s = env.state();
        let mut f = [0.0; LINEAR_FEATURES];
        f[0] = 1.0;
        for k in 0..3 {
            f[1 + k] = s.alice.position[k] / 100.0;
            f[4 + k] = s.bob.position[k] / 100.0;
        }
        f[7] = s.avg_rate_bob / 10.0;
        f[8] = s.avg_rate_carol / 10.0;
        let raw: Vec<f64> = self
            .weights
            .chunks(LINEAR_FEATURES)
            .zip(&self.bounds)
            .map(|(w, &(lo, hi))| {
                let z: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
                lo + (hi - lo) / (1.0 + (-z).exp())
            })
            .collect();
        EnvAction::from_slice(&raw, env.elements())
    }
}

/// Parameters of the [`Waypoint`] policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointParams {
    pub alice_target: Vec3,
    pub bob_target: Vec3,
    /// Extra public rate aimed for above the threshold, bit/s/Hz.
    pub margin: f64,
    /// Common bends applied to every element, degrees.
    pub bend_h: f64,
    pub bend_v: f64,
}

impl WaypointParams {
    pub const DIM: usize = 9;

    /// Box spanned by all nodes, padded by 50 m, inside the altitude band.
    pub fn bounds(cfg: &ScenarioConfig) -> Vec<(f64, f64)> {
        let pts = [cfg.alice.position, cfg.bob.position, cfg.nodes.carol, cfg.nodes.willie, cfg.ris.center];
        let span = |k: usize| {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            (lo - 50.0, hi + 50.0)
        };
        let z = (cfg.kinematics.z_min, cfg.kinematics.z_max);
        let b = cfg.ris.max_bend_deg;
        let xyz = [span(0), span(1), z];
        let mut v = Vec::with_capacity(Self::DIM);
        v.extend_from_slice(&xyz);
        v.extend_from_slice(&xyz);
        v.extend_from_slice(&[(0.0, 1.0), (-b, b), (-b, b)]);
        v
    }

    /// Hover at the initial positions with a small margin.
    pub fn hold(cfg: &ScenarioConfig) -> Self {
        Self { alice_target: cfg.alice.position, bob_target: cfg.bob.position, margin: 0.2, bend_h: 0.0, bend_v: 0.0 }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            alice_target: [v[0], v[1], v[2]],
            bob_target: [v[3], v[4], v[5]],
            margin: v[6],
            bend_h: v[7],
            bend_v: v[8],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::DIM);
        v.extend_from_slice(&self.alice_target);
        v.extend_from_slice(&self.bob_target);
        v.extend_from_slice(&[self.margin, self.bend_h, self.bend_v]);
        v
    }
}

/// Command flying `s` towards `target` with a braking speed profile.
pub fn steer_towards(s: &UavState, target: Vec3, lim: &KinematicLimits) -> Command {
    let d = em::sub(target, s.position);
    let horizontal = d[0].hypot(d[1]);
    let dist = em::norm(d);
    let (heading, pitch) = if dist > 1e-9 {
        (d[1].atan2(d[0]).rem_euclid(TAU), (FRAC_PI_2 + d[2].atan2(horizontal)).clamp(0.0, PITCH_MAX))
    } else {
        (s.heading, FRAC_PI_2)
    };
    let v_des = lim.v_max.min((2.0 * lim.ac_max * dist).sqrt()).min(dist / lim.dt);
    let accel = ((v_des - s.speed) / lim.dt).clamp(-lim.ac_max, lim.ac_max);
    Command { accel, heading, pitch }
}

/// Structured waypoint policy.
///
/// Each slot it predicts both next positions from its own commands, aligns
/// the surface phases to Bob on the mean channels there, and sets `beta` to
/// the larger of the public-rate requirement (compensating any running
/// deficit) and the split that keeps the warden's KL bound below the
/// covertness threshold for every warden channel.
#[derive(Debug, Clone)]
pub struct Waypoint {
    params: WaypointParams,
    beta_floor: f64,
}

impl Waypoint {
    pub fn new(cfg: &ScenarioConfig, params: WaypointParams) -> Self {
        Self { params, beta_floor: covert_beta_floor(cfg.covert.epsilon) }
    }
}

impl Policy for Waypoint {
    fn act(&mut self, env: &Env) -> std::result::Result<EnvAction, EnvError> {
        let cfg = env.config();
        let s = env.state();
        let lim = &cfg.kinematics;
        let p = &self.params;
        let cmd_a = steer_towards(&s.alice, p.alice_target, lim);
        let cmd_b = steer_towards(&s.bob, p.bob_target, lim);
        let (next_a, _) = uav::step_kinematics(&s.alice, &cmd_a, lim);
        let (mut next_b, _) = uav::step_kinematics(&s.bob, &cmd_b, lim);
        uav::enforce_separation(next_a.position, &mut next_b, lim.d_min);

        let m = env.elements();
        let bend_h = vec![p.bend_h; m];
        let bend_v = vec![p.bend_v; m];
        let flat = env.ris_configuration(&vec![0.0; m], &bend_h, &bend_v, next_a.position)?;
        let ch = env.mean_channels(next_a.position, next_b.position)?;
        let amplitude = match cfg.ris.amplitude_override {
            Some(a) => AmplitudeModel::Constant(a),
            None => AmplitudeModel::Fitted { fit: &cfg.ris.fit, incident_deg: &flat.incident_angles },
        };
        let codebook = cfg.ris.phase_bits;
        let greedy = greedy_phase_align(ch.h_ab, &ch.h_fb, &ch.h_af, &amplitude, codebook)
            .map_err(|e| EnvError::Model(e.to_string()))?;
        let phases: Vec<f64> = greedy.indices.iter().map(|&k| codebook.phase(k)).collect();
        let ris = env.ris_configuration(&phases, &bend_h, &bend_v, next_a.position)?;
        let theta = env.reflection(&ris)?;
        let h_c = cascaded_channel(ch.h_ac, &ch.h_fc, &theta, &ch.h_af).map_err(|e| EnvError::Model(e.to_string()))?;

        let t = s.t as f64;
        let goal = cfg.covert.public_rate_min + p.margin;
        let target = (goal * (t + 1.0) - s.avg_rate_carol * t).max(0.0);
        let noise = env.channel_params().noise_power;
        let beta_public =
            min_beta_for_public_rate(target, cfg.noma.transmit_power_w, noise, h_c.norm_sqr()).unwrap_or(1.0);
        let beta = beta_public.max(self.beta_floor).clamp(cfg.noma.beta_min, cfg.noma.beta_max);

        Ok(EnvAction {
            accel: [cmd_a.accel, cmd_b.accel],
            heading: [cmd_a.heading, cmd_b.heading],
            pitch: [cmd_a.pitch, cmd_b.pitch],
            beta,
            phases,
            bend_h,
            bend_v,
        })
    }
}

// ---------------------------------------------------------------------------
// Episode evaluation
// ---------------------------------------------------------------------------

/// Resets `env` with `seed` and runs `policy` to the end of the episode.
pub fn run_episode(env: &mut Env, policy: &mut dyn Policy, seed: u64) -> std::result::Result<EpisodeSummary, EnvError> {
    env.reset(seed);
    while !env.is_done() {
        let action = policy.act(env)?;
        env.step(&action)?;
    }
    Ok(env.summary())
}

/// Runs one episode of policy `kind` with parameters `values`.
pub fn evaluate_policy(cfg: &ScenarioConfig, kind: PolicyKind, values: &[f64], seed: u64) -> Result<EpisodeSummary> {
    let mut env = Env::new(cfg.clone())?;
    let mut policy = kind.build(cfg, values)?;
    Ok(run_episode(&mut env, policy.as_mut(), seed)?)
}

/// Optimization objective: the mean per-slot penalized reward. Failed
/// episodes score `-inf`.
pub fn episode_objective(cfg: &ScenarioConfig, kind: PolicyKind) -> impl Fn(&[f64], u64) -> f64 + Sync + '_ {
    move |values, seed| {
        evaluate_policy(cfg, kind, values, seed)
            .map(|s| s.mean_reward)
            .unwrap_or(f64::NEG_INFINITY)
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

fn uniform_in(bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: PolicyVector,
    pub best_value: f64,
    /// Running maximum after each evaluation.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Uniform random search. Candidate `i` depends only on `(seed, i)`, and all
/// candidates share episode seed `seed`, so larger budgets extend smaller
/// ones.
pub fn random_search<F>(bounds: &[(f64, f64)], budget: usize, seed: u64, objective: F) -> Result<SearchResult>
where
    F: Fn(&[f64], u64) -> f64 + Sync,
{
    if budget < 1 {
        return Err(OptimError::Settings("budget must be >= 1".into()));
    }
    let candidates: Vec<Vec<f64>> = (0..budget)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            uniform_in(bounds, &mut rng)
        })
        .collect();
    let values: Vec<f64> = candidates.par_iter().map(|c| objective(c, seed)).collect();
    let mut history = Vec::with_capacity(budget);
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
        history.push(values[best]);
    }
    Ok(SearchResult {
        best: PolicyVector::new(candidates[best].clone(), bounds.to_vec())?,
        best_value: values[best],
        history,
        evaluations: budget,
    })
}

/// Cross-entropy method settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CemSettings {
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Initial standard deviation as a fraction of each interval width.
    pub init_std_frac: f64,
    /// Lower bound on the standard deviation, same units.
    pub min_std_frac: f64,
    /// Weight of the new elite statistics in each refit; `1` replaces the
    /// distribution outright, smaller values slow its collapse.
    pub smoothing: f64,
}

impl Default for CemSettings {
    fn default() -> Self {
        Self { population: 50, elite_frac: 0.2, iterations: 40, seed: 0, init_std_frac: 0.25, min_std_frac: 0.0, smoothing: 0.7 }
    }
}

impl CemSettings {
    pub fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_frac).floor() as usize).max(1)
    }

    pub fn budget(&self) -> usize {
        self.population * self.iterations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemIteration {
    pub iteration: usize,
    /// Episode seed shared by the iteration's population.
    pub episode_seed: u64,
    pub elite_mean_value: f64,
    pub best_value: f64,
    /// Mean standard deviation of the refitted distribution.
    pub mean_std: f64,
    /// Refitted mean (elite average).
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemResult {
    pub best: PolicyVector,
    pub best_value: f64,
    pub history: Vec<CemIteration>,
    pub evaluations: usize,
}

impl CemResult {
    /// Per-iteration history as CSV.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,episode_seed,elite_mean_value,best_value,mean_std")?;
        for h in &self.history {
            writeln!(
                out,
                "{},{},{},{},{}",
                h.iteration, h.episode_seed, h.elite_mean_value, h.best_value, h.mean_std
            )?;
        }
        Ok(())
    }
}

/// Cross-entropy method with a diagonal Gaussian refitted (with smoothing)
/// to the elite set every iteration. Samples are clamped into `bounds`; each iteration's
/// population shares one episode seed.
pub fn cem_optimize<F>(bounds: &[(f64, f64)], init: Option<&[f64]>, settings: &CemSettings, objective: F) -> Result<CemResult>
where
    F: Fn(&[f64], u64) -> f64 + Sync,
{
    if settings.population < 4 {
        return Err(OptimError::Settings("population must be >= 4".into()));
    }
    if !(settings.elite_frac > 0.0 && settings.elite_frac <= 0.5) {
        return Err(OptimError::Settings("elite fraction must lie in (0, 0.5]".into()));
    }
    if settings.iterations < 1 {
        return Err(OptimError::Settings("iterations must be >= 1".into()));
    }
    if !(settings.smoothing > 0.0 && settings.smoothing <= 1.0) {
        return Err(OptimError::Settings("smoothing must lie in (0, 1]".into()));
    }
    let dim = bounds.len();
    let width: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut mean = match init {
        Some(v) => PolicyVector::new(v.to_vec(), bounds.to_vec())?.values,
        None => bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
    };
    let floor: Vec<f64> = width.iter().map(|w| w * settings.min_std_frac).collect();
    let mut std: Vec<f64> = width.iter().map(|w| w * settings.init_std_frac).collect();
    let n_elite = settings.elites();

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::with_capacity(settings.iterations);

    for iteration in 0..settings.iterations {
        let episode_seed = derive_seed(settings.seed, iteration as u64);
        let population: Vec<Vec<f64>> = (0..settings.population)
            .map(|_| {
                (0..dim)
                    .map(|k| {
                        let z: f64 = rng.sample(StandardNormal);
                        (mean[k] + std[k] * z).clamp(bounds[k].0, bounds[k].1)
                    })
                    .collect()
            })
            .collect();
        let values: Vec<f64> = population.par_iter().map(|c| objective(c, episode_seed)).collect();

        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let elites = &order[..n_elite];

        if best.as_ref().is_none_or(|(_, v)| values[order[0]] > *v) {
            best = Some((population[order[0]].clone(), values[order[0]]));
        }
        for k in 0..dim {
            let mu = elites.iter().map(|&i| population[i][k]).sum::<f64>() / n_elite as f64;
            let var = elites.iter().map(|&i| (population[i][k] - mu).powi(2)).sum::<f64>() / n_elite as f64;
            let a = settings.smoothing;
            mean[k] = a * mu + (1.0 - a) * mean[k];
            std[k] = (a * var.sqrt() + (1.0 - a) * std[k]).max(floor[k]);
        }
        let elite_mean_value = elites.iter().map(|&i| values[i]).sum::<f64>() / n_elite as f64;
        history.push(CemIteration {
            iteration,
            episode_seed,
            elite_mean_value,
            best_value: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1),
            mean_std: if dim == 0 { 0.0 } else { std.iter().sum::<f64>() / dim as f64 },
            mean: mean.clone(),
        });
    }
    let (values, best_value) = best.expect("at least one iteration");
    Ok(CemResult {
        best: PolicyVector::new(values, bounds.to_vec())?,
        best_value,
        history,
        evaluations: settings.budget(),
    })
}

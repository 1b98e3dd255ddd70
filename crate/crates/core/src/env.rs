//! Episode dynamics of the covert-link MDP.
//!
//! One slot of [`Env::step`]:
//!
//! 1. project the raw action into its box;
//! 2. fly both UAVs and restore the Alice-Bob separation;
//! 3. derive per-element incidence angles from Alice's new position and the
//!    commanded bends, quantize phases and build the reflection diagonal;
//! 4. draw the slot's channels at the new positions and compose them;
//! 5. compute both NOMA rates, the warden statistics and the reward.
//!
//! The observation holds the slot index, every raw channel coefficient used
//! in that slot, both positions and the running average rates.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelParams, ChannelSet, LinkGeometry, LinkStreams};
use crate::config::{ConfigError, RateSource, ScenarioConfig};
use crate::covert::CovertStats;
use crate::em::{self, ArrayFrame, RisConfiguration, Vec3};
use crate::noma::{rate_bob, rate_carol, NomaParams};
use crate::uav::{self, Command, StepFlags, UavState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode finished; call reset")]
    EpisodeFinished,
    #[error("action has {got} components, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("action component {index} is not finite")]
    NonFiniteAction { index: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// Raw agent action. Vector layout: accelerations (Alice, Bob), headings,
/// pitches, `beta`, `M` phases, `M` horizontal bends, `M` vertical bends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvAction {
    pub accel: [f64; 2],
    pub heading: [f64; 2],
    pub pitch: [f64; 2],
    pub beta: f64,
    /// Radians; quantized to the phase codebook by the environment.
    pub phases: Vec<f64>,
    /// Degrees.
    pub bend_h: Vec<f64>,
    /// Degrees.
    pub bend_v: Vec<f64>,
}

impl EnvAction {
    pub fn dim(m: usize) -> usize {
        7 + 3 * m
    }

    /// Stationary action: no acceleration, level flight, even split, flat
    /// surface with zero phases.
    pub fn neutral(m: usize) -> Self {
        Self {
            accel: [0.0; 2],
            heading: [0.0; 2],
            pitch: [FRAC_PI_2; 2],
            beta: 0.5,
            phases: vec![0.0; m],
            bend_h: vec![0.0; m],
            bend_v: vec![0.0; m],
        }
    }

    pub fn from_slice(v: &[f64], m: usize) -> Result<Self> {
        let expected = Self::dim(m);
        if v.len() != expected {
            return Err(EnvError::ActionDim { expected, got: v.len() });
        }
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(EnvError::NonFiniteAction { index });
        }
        Ok(Self {
            accel: [v[0], v[1]],
            heading: [v[2], v[3]],
            pitch: [v[4], v[5]],
            beta: v[6],
            phases: v[7..7 + m].to_vec(),
            bend_h: v[7 + m..7 + 2 * m].to_vec(),
            bend_v: v[7 + 2 * m..7 + 3 * m].to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.phases.len()));
        v.extend_from_slice(&self.accel);
        v.extend_from_slice(&self.heading);
        v.extend_from_slice(&self.pitch);
        v.push(self.beta);
        v.extend_from_slice(&self.phases);
        v.extend_from_slice(&self.bend_h);
        v.extend_from_slice(&self.bend_v);
        v
    }

    /// Per-component `[low, high]` box for `m` elements under `cfg`.
    pub fn bounds(cfg: &ScenarioConfig) -> Vec<(f64, f64)> {
        let m = cfg.elements();
        let a = cfg.kinematics.ac_max;
        let b = cfg.ris.max_bend_deg;
        let mut v = vec![(-a, a), (-a, a), (0.0, TAU), (0.0, TAU), (0.0, PI), (0.0, PI)];
        v.push((cfg.noma.beta_min, cfg.noma.beta_max));
        v.extend(std::iter::repeat_n((0.0, TAU), m));
        v.extend(std::iter::repeat_n((-b, b), 2 * m));
        v
    }
}

/// Projections applied to one action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionFlags {
    pub beta_clamped: bool,
    pub bends_clamped: usize,
    pub alice: StepFlags,
    pub bob: StepFlags,
    pub separation_enforced: bool,
    /// Elements whose geometric incidence exceeded the fitted range.
    pub out_of_model_elements: usize,
}

impl ActionFlags {
    pub fn any(&self) -> bool {
        self.beta_clamped
            || self.bends_clamped > 0
            || self.alice.any()
            || self.bob.any()
            || self.separation_enforced
            || self.out_of_model_elements > 0
    }
}

/// Observable state after reset or a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Number of completed slots.
    pub t: usize,
    pub channels: ChannelSet,
    pub alice: UavState,
    pub bob: UavState,
    pub avg_rate_bob: f64,
    pub avg_rate_carol: f64,
}

impl EnvState {
    pub fn dim(m: usize) -> usize {
        1 + ChannelSet::flat_len(m) + 6 + 2
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.channels.elements()));
        v.push(self.t as f64);
        self.channels.flatten_into(&mut v);
        v.extend_from_slice(&self.alice.position);
        v.extend_from_slice(&self.bob.position);
        v.push(self.avg_rate_bob);
        v.push(self.avg_rate_carol);
        v
    }
}

/// Per-slot diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// 1-based slot index.
    pub slot: usize,
    pub rate_bob: f64,
    pub rate_carol: f64,
    pub avg_rate_bob: f64,
    pub avg_rate_carol: f64,
    /// Power split actually used.
    pub beta: f64,
    pub covert: CovertStats,
    /// Running-average public rate meets its threshold.
    pub public_ok: bool,
    pub reward: f64,
    pub distance_ab: f64,
    pub flags: ActionFlags,
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// `rate_term + nu1 mu(avg_c >= eps_c) + nu2 mu(C1)`, with `mu(true) = 0`
/// and `mu(false) = -1`.
pub fn reward(avg_rate_bob: f64, avg_rate_carol: f64, c1_ok: bool, cfg: &ScenarioConfig) -> f64 {
    let rate_term = match cfg.reward.rate_source {
        RateSource::Bob => avg_rate_bob,
        RateSource::Carol => avg_rate_carol,
    };
    let mu = |ok: bool| if ok { 0.0 } else { -1.0 };
    rate_term
        + cfg.reward.nu1 * mu(avg_rate_carol >= cfg.covert.public_rate_min)
        + cfg.reward.nu2 * mu(c1_ok)
}

/// Aggregate statistics of a finished (or partial) episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub slots: usize,
    pub avg_rate_bob: f64,
    pub avg_rate_carol: f64,
    pub mean_reward: f64,
    /// Fraction of slots in which C1 held.
    pub c1_fraction: f64,
    pub c1_violations: usize,
    /// Slots whose running-average public rate was below threshold.
    pub public_violations: usize,
    /// Final average public rate meets the threshold and C1 held in every slot.
    pub feasible: bool,
}

pub fn episode_metrics(trace: &[StepInfo]) -> EpisodeSummary {
    let n = trace.len();
    if n == 0 {
        return EpisodeSummary::default();
    }
    let nf = n as f64;
    let c1_violations = trace.iter().filter(|i| !i.covert.c1_ok).count();
    let public_violations = trace.iter().filter(|i| !i.public_ok).count();
    EpisodeSummary {
        slots: n,
        avg_rate_bob: trace.iter().map(|i| i.rate_bob).sum::<f64>() / nf,
        avg_rate_carol: trace.iter().map(|i| i.rate_carol).sum::<f64>() / nf,
        mean_reward: trace.iter().map(|i| i.reward).sum::<f64>() / nf,
        c1_fraction: (n - c1_violations) as f64 / nf,
        c1_violations,
        public_violations,
        feasible: c1_violations == 0 && trace[n - 1].public_ok,
    }
}

/// One environment instance: scenario, generators and episode state.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: ScenarioConfig,
    channel: ChannelParams,
    frame: ArrayFrame,
    streams: LinkStreams,
    state: EnvState,
    sum_rate_bob: f64,
    sum_rate_carol: f64,
    trace: Vec<StepInfo>,
}

impl Env {
    /// Validates `cfg` and resets with its master seed.
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let channel = cfg.channel_params();
        let frame = cfg.array_frame()?;
        let seed = cfg.seed;
        let mut streams = LinkStreams::new(seed);
        let state = Self::initial_state(&cfg, &channel, &frame, &mut streams)?;
        Ok(Self { cfg, channel, frame, streams, state, sum_rate_bob: 0.0, sum_rate_carol: 0.0, trace: Vec::new() })
    }

    fn initial_state(
        cfg: &ScenarioConfig,
        channel: &ChannelParams,
        frame: &ArrayFrame,
        streams: &mut LinkStreams,
    ) -> Result<EnvState> {
        let geo = LinkGeometry {
            alice: cfg.alice.position,
            bob: cfg.bob.position,
            carol: cfg.nodes.carol,
            willie: cfg.nodes.willie,
            frame: *frame,
        };
        let channels = ChannelSet::draw(cfg.elements(), &geo, channel, streams).map_err(|e| EnvError::Model(e.to_string()))?;
        Ok(EnvState { t: 0, channels, alice: cfg.alice, bob: cfg.bob, avg_rate_bob: 0.0, avg_rate_carol: 0.0 })
    }

    /// Starts a new episode; identical seeds give bit-identical episodes.
    pub fn reset(&mut self, seed: u64) -> &EnvState {
        self.streams = LinkStreams::new(seed);
        self.state = Self::initial_state(&self.cfg, &self.channel, &self.frame, &mut self.streams)
            .expect("validated scenario draws channels");
        self.sum_rate_bob = 0.0;
        self.sum_rate_carol = 0.0;
        self.trace.clear();
        &self.state
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn channel_params(&self) -> &ChannelParams {
        &self.channel
    }

    pub fn frame(&self) -> &ArrayFrame {
        &self.frame
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn trace(&self) -> &[StepInfo] {
        &self.trace
    }

    pub fn elements(&self) -> usize {
        self.cfg.elements()
    }

    pub fn action_dim(&self) -> usize {
        EnvAction::dim(self.elements())
    }

    pub fn state_dim(&self) -> usize {
        EnvState::dim(self.elements())
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.cfg.episode.slots
    }

    pub fn step_slice(&mut self, raw: &[f64]) -> Result<Transition> {
        let action = EnvAction::from_slice(raw, self.elements())?;
        self.step(&action)
    }

    /// Surface configuration for the given per-element commands, seen from
    /// `source`, after projecting bends into their box.
    pub fn ris_configuration(&self, phases: &[f64], bend_h: &[f64], bend_v: &[f64], source: Vec3) -> Result<RisConfiguration> {
        let b = self.cfg.ris.max_bend_deg;
        let clamp = |v: &[f64]| v.iter().map(|x| x.clamp(-b, b)).collect::<Vec<_>>();
        RisConfiguration::build(
            &self.frame,
            self.cfg.ris.phase_bits,
            phases,
            &clamp(bend_h),
            &clamp(bend_v),
            source,
            &self.cfg.ris.fit,
        )
        .map_err(|e| EnvError::Model(e.to_string()))
    }

    /// Expected links for UAVs at `alice` and `bob`.
    pub fn mean_channels(&self, alice: Vec3, bob: Vec3) -> Result<ChannelSet> {
        let geo = LinkGeometry { alice, bob, carol: self.cfg.nodes.carol, willie: self.cfg.nodes.willie, frame: self.frame };
        ChannelSet::mean(self.elements(), &geo, &self.channel).map_err(|e| EnvError::Model(e.to_string()))
    }

    /// Reflection diagonal of `ris`, honouring the amplitude override.
    pub fn reflection(&self, ris: &RisConfiguration) -> Result<Vec<Complex64>> {
        match self.cfg.ris.amplitude_override {
            Some(a) => Ok(ris.phases.iter().map(|&t| Complex64::from_polar(a, t)).collect()),
            None => em::reflection_matrix(ris, &self.cfg.ris.fit).map_err(|e| EnvError::Model(e.to_string())),
        }
    }

    pub fn step(&mut self, action: &EnvAction) -> Result<Transition> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        let m = self.elements();
        if action.phases.len() != m || action.bend_h.len() != m || action.bend_v.len() != m {
            return Err(EnvError::ActionDim {
                expected: EnvAction::dim(m),
                got: 7 + action.phases.len() + action.bend_h.len() + action.bend_v.len(),
            });
        }
        if let Some(index) = action.to_vec().iter().position(|x| !x.is_finite()) {
            return Err(EnvError::NonFiniteAction { index });
        }
        let cfg = &self.cfg;
        let mut flags = ActionFlags::default();

        let beta = action.beta.clamp(cfg.noma.beta_min, cfg.noma.beta_max);
        flags.beta_clamped = beta != action.beta;
        let b = cfg.ris.max_bend_deg;
        flags.bends_clamped = action.bend_h.iter().chain(&action.bend_v).filter(|x| x.abs() > b).count();

        let lim = &cfg.kinematics;
        let cmd = |k: usize| Command { accel: action.accel[k], heading: action.heading[k], pitch: action.pitch[k] };
        let (alice, fa) = uav::step_kinematics(&self.state.alice, &cmd(0), lim);
        let (mut bob, fb) = uav::step_kinematics(&self.state.bob, &cmd(1), lim);
        flags.alice = fa;
        flags.bob = fb;
        flags.separation_enforced = uav::enforce_separation(alice.position, &mut bob, lim.d_min);

        let ris = self.ris_configuration(&action.phases, &action.bend_h, &action.bend_v, alice.position)?;
        flags.out_of_model_elements = ris.out_of_model;
        let theta = self.reflection(&ris)?;

        let geo = LinkGeometry {
            alice: alice.position,
            bob: bob.position,
            carol: cfg.nodes.carol,
            willie: cfg.nodes.willie,
            frame: self.frame,
        };
        let mut channels =
            ChannelSet::draw(m, &geo, &self.channel, &mut self.streams).map_err(|e| EnvError::Model(e.to_string()))?;
        channels.compose(&theta).map_err(|e| EnvError::Model(e.to_string()))?;

        let np = NomaParams::new(beta, cfg.noma.transmit_power_w, self.channel.noise_power);
        let r_b = rate_bob(&np, channels.h_b.norm_sqr());
        let r_c = rate_carol(&np, channels.h_c.norm_sqr());
        let covert = CovertStats::evaluate(&np, channels.h_w.norm_sqr(), cfg.covert.epsilon)
            .map_err(|e| EnvError::Model(e.to_string()))?;

        let t = self.state.t + 1;
        self.sum_rate_bob += r_b;
        self.sum_rate_carol += r_c;
        let avg_b = self.sum_rate_bob / t as f64;
        let avg_c = self.sum_rate_carol / t as f64;
        let r = reward(avg_b, avg_c, covert.c1_ok, cfg);

        let info = StepInfo {
            slot: t,
            rate_bob: r_b,
            rate_carol: r_c,
            avg_rate_bob: avg_b,
            avg_rate_carol: avg_c,
            beta,
            covert,
            public_ok: avg_c >= cfg.covert.public_rate_min,
            reward: r,
            distance_ab: uav::check_separation(alice.position, bob.position, lim.d_min).distance,
            flags,
        };
        self.state = EnvState { t, channels, alice, bob, avg_rate_bob: avg_b, avg_rate_carol: avg_c };
        self.trace.push(info.clone());
        Ok(Transition { state: self.state.clone(), reward: r, done: self.is_done(), info })
    }

    pub fn summary(&self) -> EpisodeSummary {
        episode_metrics(&self.trace)
    }
}

//! Stochastic channel generation.
//!
//! UAV-to-UAV links are pure line-of-sight; every link that touches the
//! ground or the surface is Rician, with the surface links using the
//! half-wavelength ULA steering vector as their deterministic part. Channels
//! are redrawn every slot (block fading).
//!
//! Each random link owns a ChaCha substream keyed by its [`Link`] id, so the
//! draws of one link never depend on how many values another link consumed.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{self, ArrayFrame, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// Large-scale and fading parameters, all in linear units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Channel gain at the 1 m reference distance.
    pub gamma0: f64,
    /// Rician factor.
    pub kappa: f64,
    /// Path-loss exponent of line-of-sight components.
    pub alpha_los: f64,
    /// Path-loss exponent of scattered components.
    pub alpha_nlos: f64,
    /// Receiver noise power, W.
    pub noise_power: f64,
    /// Carrier frequency, Hz; sets the geometric phase of scalar LoS terms.
    pub carrier_hz: f64,
    /// Scale both Rician components of scalar links by `sqrt(gamma0)`.
    pub gamma0_in_rician: bool,
    /// Drop the scattered component entirely (deterministic channels).
    pub los_only: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            gamma0: 0.1,
            kappa: 10.0,
            alpha_los: 2.0,
            alpha_nlos: 3.0,
            noise_power: 1e-8,
            carrier_hz: 0.839e9,
            gamma0_in_rician: true,
            los_only: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ChannelError::Domain(what.to_string()));
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad("gamma0 must be positive");
        }
        if !(self.kappa >= 0.0) {
            return bad("kappa must be non-negative");
        }
        if !(self.alpha_los >= 1.0 && self.alpha_nlos >= self.alpha_los) {
            return bad("path-loss exponents must satisfy alpha_nlos >= alpha_los >= 1");
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return bad("noise power must be positive");
        }
        if !(self.carrier_hz > 0.0) {
            return bad("carrier frequency must be positive");
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        em::SPEED_OF_LIGHT / self.carrier_hz
    }

    fn los_weight(&self) -> f64 {
        if self.los_only || self.kappa.is_infinite() {
            1.0
        } else {
            (self.kappa / (self.kappa + 1.0)).sqrt()
        }
    }

    fn nlos_weight(&self) -> f64 {
        if self.los_only || self.kappa.is_infinite() {
            0.0
        } else {
            (1.0 / (self.kappa + 1.0)).sqrt()
        }
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d >= 1.0 && d.is_finite() {
        Ok(())
    } else {
        Err(ChannelError::Domain(format!("distance {d} m is below the 1 m reference")))
    }
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Deterministic line-of-sight coefficient `sqrt(gamma0) d^(-alpha_L/2)`.
pub fn los_channel(d: f64, cp: &ChannelParams) -> Result<Complex64> {
    check_distance(d)?;
    Ok(Complex64::new(cp.gamma0.sqrt() * d.powf(-cp.alpha_los / 2.0), 0.0))
}

/// Unit-modulus LoS phasor of a scalar link from its length.
pub fn geometric_phasor(d: f64, cp: &ChannelParams) -> Complex64 {
    let phase = (-2.0 * PI * d / cp.wavelength()).rem_euclid(2.0 * PI);
    Complex64::from_polar(1.0, phase)
}

/// One Rician draw of a scalar link with LoS phasor `g_bar`.
pub fn rician_sample<R: Rng + ?Sized>(
    d: f64,
    g_bar: Complex64,
    cp: &ChannelParams,
    rng: &mut R,
) -> Result<Complex64> {
    check_distance(d)?;
    let scale = if cp.gamma0_in_rician { cp.gamma0.sqrt() } else { 1.0 };
    let scattered = complex_gaussian(rng);
    Ok(cp.los_weight() * scale * g_bar * d.powf(-cp.alpha_los / 2.0)
        + cp.nlos_weight() * scale * scattered * d.powf(-cp.alpha_nlos / 2.0))
}

/// Line-of-sight array response `sqrt(gamma0) e^{-j pi (m-1) sin(iota)} d^(-alpha_L/2)`.
pub fn ris_los_vector(m: usize, iota_deg: f64, d: f64, cp: &ChannelParams) -> Vec<Complex64> {
    steering_los(m, iota_deg.to_radians().sin(), d, cp)
}

fn steering_los(m: usize, sine: f64, d: f64, cp: &ChannelParams) -> Vec<Complex64> {
    let amp = cp.gamma0.sqrt() * d.powf(-cp.alpha_los / 2.0);
    (0..m)
        .map(|k| Complex64::from_polar(amp, -PI * k as f64 * sine))
        .collect()
}

/// One Rician draw of a surface link: steering-vector LoS plus i.i.d.
/// scattering per element.
pub fn rician_vector<R: Rng + ?Sized>(
    m: usize,
    sine: f64,
    d: f64,
    cp: &ChannelParams,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    check_distance(d)?;
    let los = steering_los(m, sine, d, cp);
    let (wl, wn) = (cp.los_weight(), cp.nlos_weight());
    let scatter_scale = if cp.gamma0_in_rician { cp.gamma0.sqrt() } else { 1.0 };
    let nlos_amp = wn * scatter_scale * d.powf(-cp.alpha_nlos / 2.0);
    Ok(los
        .into_iter()
        .map(|l| {
            let g = complex_gaussian(rng);
            wl * l + nlos_amp * g
        })
        .collect())
}

/// `h_direct + h_rx^H diag(theta) h_af`.
pub fn cascaded_channel(
    h_direct: Complex64,
    h_rx: &[Complex64],
    theta: &[Complex64],
    h_af: &[Complex64],
) -> Result<Complex64> {
    if h_rx.len() != theta.len() || theta.len() != h_af.len() {
        return Err(ChannelError::DimensionMismatch(format!(
            "h_rx {}, theta {}, h_af {}",
            h_rx.len(),
            theta.len(),
            h_af.len()
        )));
    }
    Ok(h_direct
        + h_rx
            .iter()
            .zip(theta)
            .zip(h_af)
            .map(|((r, t), a)| r.conj() * t * a)
            .sum::<Complex64>())
}

/// Random links, in the fixed order that defines their substream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    AliceCarol = 0,
    AliceWillie = 1,
    AliceRis = 2,
    RisBob = 3,
    RisCarol = 4,
    RisWillie = 5,
}

impl Link {
    pub const ALL: [Link; 6] = [
        Link::AliceCarol,
        Link::AliceWillie,
        Link::AliceRis,
        Link::RisBob,
        Link::RisCarol,
        Link::RisWillie,
    ];
}

/// Per-link random generators derived from one seed.
#[derive(Debug, Clone)]
pub struct LinkStreams {
    streams: Vec<ChaCha8Rng>,
}

impl LinkStreams {
    pub fn new(seed: u64) -> Self {
        let streams = Link::ALL
            .iter()
            .map(|&link| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(link as u64 + 1);
                rng
            })
            .collect();
        Self { streams }
    }

    pub fn get(&mut self, link: Link) -> &mut ChaCha8Rng {
        &mut self.streams[link as usize]
    }
}

/// Node positions needed to draw one slot's channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub alice: Vec3,
    pub bob: Vec3,
    pub carol: Vec3,
    pub willie: Vec3,
    pub frame: ArrayFrame,
}

/// All channel coefficients of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub h_ab: Complex64,
    pub h_ac: Complex64,
    pub h_aw: Complex64,
    pub h_af: Vec<Complex64>,
    pub h_fb: Vec<Complex64>,
    pub h_fc: Vec<Complex64>,
    pub h_fw: Vec<Complex64>,
    /// Composite Alice-to-Bob channel through the surface.
    pub h_b: Complex64,
    pub h_c: Complex64,
    pub h_w: Complex64,
}

/// Distances below the 1 m reference are held at 1 m.
fn link_distance(a: Vec3, b: Vec3) -> f64 {
    em::norm(em::sub(a, b)).max(1.0)
}

impl ChannelSet {
    /// Draws the raw links of one slot. Composites are set to the direct
    /// links until [`ChannelSet::compose`] is called.
    pub fn draw(m: usize, geo: &LinkGeometry, cp: &ChannelParams, streams: &mut LinkStreams) -> Result<Self> {
        let ris = geo.frame.center;
        let d_ab = link_distance(geo.alice, geo.bob);
        let d_ac = link_distance(geo.alice, geo.carol);
        let d_aw = link_distance(geo.alice, geo.willie);
        let h_ab = los_channel(d_ab, cp)?;
        let h_ac = rician_sample(d_ac, geometric_phasor(d_ac, cp), cp, streams.get(Link::AliceCarol))?;
        let h_aw = rician_sample(d_aw, geometric_phasor(d_aw, cp), cp, streams.get(Link::AliceWillie))?;

        let mut vector = |link: Link, node: Vec3| {
            let d = link_distance(node, ris);
            rician_vector(m, geo.frame.steering_sine(node), d, cp, streams.get(link))
        };
        let h_af = vector(Link::AliceRis, geo.alice)?;
        let h_fb = vector(Link::RisBob, geo.bob)?;
        let h_fc = vector(Link::RisCarol, geo.carol)?;
        let h_fw = vector(Link::RisWillie, geo.willie)?;
        Ok(Self { h_ab, h_ac, h_aw, h_af, h_fb, h_fc, h_fw, h_b: h_ab, h_c: h_ac, h_w: h_aw })
    }

    /// Mean links: the deterministic Rician line-of-sight parts at their
    /// fading weight, scattering dropped.
    pub fn mean(m: usize, geo: &LinkGeometry, cp: &ChannelParams) -> Result<Self> {
        let w = cp.los_weight();
        let det = ChannelParams { los_only: true, ..*cp };
        let mut set = Self::draw(m, geo, &det, &mut LinkStreams::new(0))?;
        set.h_ac *= w;
        set.h_aw *= w;
        for v in [&mut set.h_af, &mut set.h_fb, &mut set.h_fc, &mut set.h_fw] {
            v.iter_mut().for_each(|z| *z *= w);
        }
        set.h_c = set.h_ac;
        set.h_w = set.h_aw;
        Ok(set)
    }

    pub fn elements(&self) -> usize {
        self.h_af.len()
    }

    /// Fills the composite channels for reflection diagonal `theta`.
    pub fn compose(&mut self, theta: &[Complex64]) -> Result<()> {
        self.h_b = cascaded_channel(self.h_ab, &self.h_fb, theta, &self.h_af)?;
        self.h_c = cascaded_channel(self.h_ac, &self.h_fc, theta, &self.h_af)?;
        self.h_w = cascaded_channel(self.h_aw, &self.h_fw, theta, &self.h_af)?;
        Ok(())
    }

    /// Raw links flattened as interleaved (re, im): h_ab, h_ac, h_aw, h_af,
    /// h_fb, h_fc, h_fw.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        let scalars = [self.h_ab, self.h_ac, self.h_aw];
        let vectors = [&self.h_af, &self.h_fb, &self.h_fc, &self.h_fw];
        for z in scalars.iter().chain(vectors.into_iter().flatten()) {
            out.push(z.re);
            out.push(z.im);
        }
    }

    pub fn flat_len(m: usize) -> usize {
        2 * (3 + 4 * m)
    }
}

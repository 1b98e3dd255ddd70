//! Two-user power-domain NOMA with successive interference cancellation.
//!
//! Alice superimposes Carol's public symbol (power fraction `beta`) and Bob's
//! covert symbol (`1 - beta`), both unit-power Gaussian codebooks. Receivers
//! decode Carol's signal first, so Carol sees Bob's signal as interference
//! while Bob cancels Carol's before decoding his own.

use serde::{Deserialize, Serialize};

/// Power split and budget for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NomaParams {
    /// Fraction of the transmit power given to the public (Carol) stream.
    pub beta: f64,
    /// Transmit power, W.
    pub power: f64,
    /// Noise power, W.
    pub noise: f64,
}

impl NomaParams {
    pub fn new(beta: f64, power: f64, noise: f64) -> Self {
        Self { beta, power, noise }
    }

    pub fn is_valid(&self) -> bool {
        self.beta > 0.0 && self.beta < 1.0 && self.power > 0.0 && self.noise > 0.0
    }
}

/// Carol's rate (bit/s/Hz), decoded first with Bob's stream as interference.
pub fn rate_carol(np: &NomaParams, gain: f64) -> f64 {
    let signal = np.beta * np.power * gain;
    let interference = (1.0 - np.beta) * np.power * gain;
    (signal / (interference + np.noise)).ln_1p() / std::f64::consts::LN_2
}

/// Bob's rate (bit/s/Hz) after cancelling Carol's stream.
pub fn rate_bob(np: &NomaParams, gain: f64) -> f64 {
    ((1.0 - np.beta) * np.power * gain / np.noise).ln_1p() / std::f64::consts::LN_2
}

/// Smallest `beta` for which Carol's rate reaches `target` bit/s/Hz at
/// channel gain `gain`; `None` when even `beta -> 1` cannot reach it.
pub fn min_beta_for_public_rate(target: f64, power: f64, noise: f64, gain: f64) -> Option<f64> {
    if target <= 0.0 {
        return Some(0.0);
    }
    let snr = power * gain / noise;
    let needed = target.exp2();
    if !(snr + 1.0 > needed) {
        return None;
    }
    // (snr + 1) / ((1 - beta) snr + 1) = 2^target
    let one_minus = ((snr + 1.0) / needed - 1.0) / snr;
    Some((1.0 - one_minus).clamp(0.0, 1.0))
}

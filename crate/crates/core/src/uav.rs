//! UAV kinematics and flight-envelope enforcement.
//!
//! Each slot a UAV receives a signed acceleration (magnitude bounded by
//! `ac_max`, sign selecting speed-up or slow-down), a heading and a pitch.
//! Speed follows the acceleration exactly, saturating at `0` and `v_max`;
//! the direction of travel switches instantly to the commanded angles.
//! Pitch `pi/2` is level flight, lower values descend, higher values climb.
//!
//! Inputs are never rejected: out-of-range commands and states are projected
//! back into the envelope and every projection is reported in [`StepFlags`].

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::em::Vec3;

/// Largest representable pitch below `pi`.
pub const PITCH_MAX: f64 = PI - 4.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec3,
    /// Speed, m/s.
    pub speed: f64,
    /// Heading in the horizontal plane, radians in `[0, 2 pi)`.
    pub heading: f64,
    /// Pitch, radians in `[0, pi)`; `pi/2` is level.
    pub pitch: f64,
}

impl UavState {
    pub fn at(position: Vec3) -> Self {
        Self { position, speed: 0.0, heading: 0.0, pitch: FRAC_PI_2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicLimits {
    /// Maximum speed, m/s.
    pub v_max: f64,
    /// Maximum acceleration magnitude, m/s^2.
    pub ac_max: f64,
    /// Altitude band, m.
    pub z_min: f64,
    pub z_max: f64,
    /// Minimum Alice-Bob separation, m.
    pub d_min: f64,
    /// Slot duration, s.
    pub dt: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self { v_max: 5.0, ac_max: 2.0, z_min: 35.0, z_max: 60.0, d_min: 60.0, dt: 1.0 }
    }
}

impl KinematicLimits {
    /// Name of the first violated invariant, if any.
    pub fn check(&self) -> Option<&'static str> {
        let positive = [
            ("v_max", self.v_max),
            ("ac_max", self.ac_max),
            ("z_min", self.z_min),
            ("z_max", self.z_max),
            ("d_min", self.d_min),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Some(name);
            }
        }
        (self.z_min >= self.z_max).then_some("z_min")
    }

    /// True when `s` lies inside the speed, altitude and angle envelope.
    pub fn admits(&self, s: &UavState) -> bool {
        (0.0..=self.v_max).contains(&s.speed)
            && (self.z_min..=self.z_max).contains(&s.position[2])
            && (0.0..TAU).contains(&s.heading)
            && (0.0..PI).contains(&s.pitch)
    }
}

/// Per-slot command for one UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    /// Signed acceleration, m/s^2; the sign is the speed-up/slow-down bit.
    pub accel: f64,
    pub heading: f64,
    pub pitch: f64,
}

/// Projections applied during one kinematic step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub accel_clamped: bool,
    pub speed_clamped: bool,
    pub altitude_clamped: bool,
    pub heading_wrapped: bool,
    pub pitch_clamped: bool,
}

impl StepFlags {
    pub fn any(&self) -> bool {
        self.accel_clamped || self.speed_clamped || self.altitude_clamped || self.heading_wrapped || self.pitch_clamped
    }
}

pub(crate) fn wrap_heading(h: f64) -> f64 {
    let w = h.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Distance covered in `dt` starting at speed `v0` under constant
/// acceleration `a`, with speed held inside `[0, v_max]`. Returns the final
/// speed, the distance and whether saturation occurred.
fn integrate_speed(v0: f64, a: f64, v_max: f64, dt: f64) -> (f64, f64, bool) {
    let target = if a > 0.0 {
        v_max
    } else if a < 0.0 {
        0.0
    } else {
        return (v0, v0 * dt, false);
    };
    let t_sat = (target - v0) / a;
    if t_sat >= dt {
        let v1 = v0 + a * dt;
        (v1, v0 * dt + 0.5 * a * dt * dt, false)
    } else {
        let t_sat = t_sat.max(0.0);
        let ramp = v0 * t_sat + 0.5 * a * t_sat * t_sat;
        (target, ramp + target * (dt - t_sat), true)
    }
}

/// Advances one UAV by one slot.
pub fn step_kinematics(s: &UavState, cmd: &Command, lim: &KinematicLimits) -> (UavState, StepFlags) {
    let mut flags = StepFlags::default();

    let accel = if cmd.accel.is_finite() { cmd.accel } else { 0.0 };
    let accel_c = accel.clamp(-lim.ac_max, lim.ac_max);
    flags.accel_clamped = accel_c != cmd.accel;

    let heading_in = if cmd.heading.is_finite() { cmd.heading } else { s.heading };
    let heading = wrap_heading(heading_in);
    flags.heading_wrapped = heading != cmd.heading;

    let pitch_in = if cmd.pitch.is_finite() { cmd.pitch } else { FRAC_PI_2 };
    let pitch = pitch_in.clamp(0.0, PITCH_MAX);
    flags.pitch_clamped = pitch != cmd.pitch;

    let v0 = s.speed.clamp(0.0, lim.v_max);
    let (v1, distance, saturated) = integrate_speed(v0, accel_c, lim.v_max, lim.dt);
    flags.speed_clamped = saturated || v0 != s.speed;

    let elevation = pitch - FRAC_PI_2;
    let (se, ce) = elevation.sin_cos();
    let (sh, ch) = heading.sin_cos();
    let mut position = [
        s.position[0] + distance * ce * ch,
        s.position[1] + distance * ce * sh,
        s.position[2] + distance * se,
    ];
    let z = position[2].clamp(lim.z_min, lim.z_max);
    flags.altitude_clamped = z != position[2];
    position[2] = z;

    let next = UavState { position, speed: v1.clamp(0.0, lim.v_max), heading, pitch };
    (next, flags)
}

/// Alice-Bob separation check, inclusive of `d_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub ok: bool,
    pub distance: f64,
}

pub fn check_separation(q_a: Vec3, q_b: Vec3, d_min: f64) -> Separation {
    let d = crate::em::norm(crate::em::sub(q_a, q_b));
    Separation { ok: d >= d_min, distance: d }
}

/// Pushes `mover` away from `anchor` until the two are exactly `d_min`
/// apart, keeping the mover's altitude and moving it horizontally along the
/// anchor-to-mover direction (+x when they are vertically aligned). Returns
/// whether a projection happened.
///
/// The altitude band is narrower than `d_min` in any sane configuration, so
/// a horizontal solution always exists; otherwise the mover is placed at the
/// largest reachable separation.
pub fn enforce_separation(anchor: Vec3, mover: &mut UavState, d_min: f64) -> bool {
    if check_separation(anchor, mover.position, d_min).ok {
        return false;
    }
    let dz = mover.position[2] - anchor[2];
    let horizontal = (d_min * d_min - dz * dz).max(0.0).sqrt();
    let dx = mover.position[0] - anchor[0];
    let dy = mover.position[1] - anchor[1];
    let h = dx.hypot(dy);
    let (ux, uy) = if h > 1e-9 { (dx / h, dy / h) } else { (1.0, 0.0) };
    // Nudge outward so rounding never leaves the pair a hair inside d_min.
    let mut r = horizontal;
    loop {
        mover.position[0] = anchor[0] + r * ux;
        mover.position[1] = anchor[1] + r * uy;
        if check_separation(anchor, mover.position, d_min).ok {
            break;
        }
        r = r.next_up() + f64::EPSILON * r;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lim() -> KinematicLimits {
        KinematicLimits::default()
    }

    #[test]
    fn straight_level_flight() {
        let s = UavState { position: [0.0, 0.0, 40.0], speed: 3.0, heading: 0.0, pitch: FRAC_PI_2 };
        let (n, f) = step_kinematics(&s, &Command { accel: 0.0, heading: 0.0, pitch: FRAC_PI_2 }, &lim());
        assert!((n.position[0] - 3.0).abs() < 1e-12);
        assert!(n.position[1].abs() < 1e-12 && (n.position[2] - 40.0).abs() < 1e-12);
        assert!(!f.any());
    }

    #[test]
    fn speed_saturates() {
        let s = UavState { position: [0.0, 0.0, 40.0], speed: 5.0, heading: 0.0, pitch: FRAC_PI_2 };
        let (n, f) = step_kinematics(&s, &Command { accel: 2.0, heading: 0.0, pitch: FRAC_PI_2 }, &lim());
        assert_eq!(n.speed, 5.0);
        assert!(f.speed_clamped);
    }

    #[test]
    fn altitude_floor() {
        let s = UavState { position: [0.0, 0.0, 36.0], speed: 5.0, heading: 0.0, pitch: 0.0 };
        let (n, f) = step_kinematics(&s, &Command { accel: 0.0, heading: 0.0, pitch: 0.0 }, &lim());
        assert_eq!(n.position[2], 35.0);
        assert!(f.altitude_clamped);
    }

    #[test]
    fn command_projection() {
        let s = UavState::at([0.0, 0.0, 40.0]);
        let (n, f) = step_kinematics(&s, &Command { accel: 9.0, heading: -1.0, pitch: 4.0 }, &lim());
        assert!(f.accel_clamped && f.heading_wrapped && f.pitch_clamped);
        assert!(lim().admits(&n));
        assert!((n.speed - 2.0).abs() < 1e-12);
    }

    #[test]
    fn braking_stops_at_zero() {
        let s = UavState { position: [0.0, 0.0, 40.0], speed: 1.0, heading: 0.0, pitch: FRAC_PI_2 };
        let (n, f) = step_kinematics(&s, &Command { accel: -2.0, heading: 0.0, pitch: FRAC_PI_2 }, &lim());
        assert_eq!(n.speed, 0.0);
        assert!(f.speed_clamped);
        // Stops after 0.5 s having covered 0.25 m.
        assert!((n.position[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn half_steps_compose() {
        let s = UavState { position: [1.0, 2.0, 45.0], speed: 1.0, heading: 0.3, pitch: 1.7 };
        let cmd = Command { accel: 1.5, heading: 0.3, pitch: 1.7 };
        let full = step_kinematics(&s, &cmd, &lim()).0;
        let half = KinematicLimits { dt: 0.5, ..lim() };
        let mid = step_kinematics(&s, &cmd, &half).0;
        let two = step_kinematics(&mid, &cmd, &half).0;
        for k in 0..3 {
            assert!((full.position[k] - two.position[k]).abs() < 1e-9);
        }
        assert!((full.speed - two.speed).abs() < 1e-12);
    }

    #[test]
    fn separation_examples() {
        let a = [0.0, 0.0, 40.0];
        assert_eq!(check_separation(a, a, 60.0), Separation { ok: false, distance: 0.0 });
        assert!(check_separation(a, [60.0, 0.0, 40.0], 60.0).ok);
        assert!(!check_separation(a, [59.999, 0.0, 40.0], 60.0).ok);
    }

    #[test]
    fn separation_projection() {
        let a = [0.0, 0.0, 40.0];
        let mut b = UavState::at([10.0, 0.0, 50.0]);
        assert!(enforce_separation(a, &mut b, 60.0));
        let sep = check_separation(a, b.position, 60.0);
        assert!(sep.ok && (sep.distance - 60.0).abs() < 1e-9);
        assert_eq!(b.position[2], 50.0);
        let mut c = UavState::at([0.0, 0.0, 40.0]);
        assert!(enforce_separation(a, &mut c, 60.0));
        assert!(check_separation(a, c.position, 60.0).ok);
    }
}

//! Simulation core for RIS-aided covert UAV communication.
//!
//! The crate models a flexible reconfigurable intelligent surface (RIS)
//! assisting a UAV transmitter (Alice) that serves a covert user (Bob) and a
//! public user (Carol) with two-user NOMA while a warden (Willie) runs a
//! radiometer. Modules build on each other bottom-up:
//!
//! - [`em`]: surface electromagnetics, unit-cell circuit, fitted amplitude
//!   model, phase quantization and array geometry;
//! - [`channel`]: path loss, Rician fading and cascaded RIS channels;
//! - [`noma`]: SIC rates;
//! - [`covert`]: warden statistics and the covertness constraint;
//! - [`uav`]: UAV kinematics and separation;
//! - [`config`]: the scenario schema;
//! - [`env`]: the per-slot episode dynamics;
//! - [`optim`]: structured policies and black-box optimizers.

pub mod channel;
pub mod config;
pub mod covert;
pub mod em;
pub mod env;
pub mod noma;
pub mod optim;
pub mod uav;

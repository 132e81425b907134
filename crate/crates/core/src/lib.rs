//! Elderly telemonitoring: simulated body sensors, a phone-side gateway that
//! monitors vitals against doctor-set thresholds and escalates alarms, a
//! health information server, an emergency centre and a deterministic
//! scenario harness that wires them together in virtual time.

pub mod api;
pub mod emergency;
pub mod gateway;
pub mod harness;
pub mod protocol;
pub mod sensors;
pub mod server;

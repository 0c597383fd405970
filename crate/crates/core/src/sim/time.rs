use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Link rates and per-step compute cost shared by all devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeModel {
    pub uplink_bps: f64,
    pub downlink_bps: f64,
    /// Seconds per local SGD step on one device.
    pub per_step_compute_s: f64,
    /// Bits per parameter in the dense downlink model.
    pub bits_per_param: u32,
    /// Bits per uploaded atom (coordinate index plus coefficient).
    pub bits_per_atom: u32,
    /// Optional per-device multiplier on all three delay components.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub device_slowdown: Vec<f64>,
}

impl Default for TimeModel {
    fn default() -> Self {
        Self {
            uplink_bps: 100e3,
            downlink_bps: 100e3,
            per_step_compute_s: 1e-5,
            bits_per_param: 32,
            bits_per_atom: 64,
            device_slowdown: Vec::new(),
        }
    }
}

impl TimeModel {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        for (name, v) in
            [("uplink_bps", self.uplink_bps), ("downlink_bps", self.downlink_bps), ("per_step_compute_s", self.per_step_compute_s)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.bits_per_param == 0 || self.bits_per_atom == 0 {
            return Err(Error::config("bit widths must be positive"));
        }
        if !self.device_slowdown.is_empty() {
            if self.device_slowdown.len() != num_clients {
                return Err(Error::config(format!("device_slowdown has {} entries for {num_clients} clients", self.device_slowdown.len())));
            }
            if self.device_slowdown.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
                return Err(Error::config("device_slowdown entries must be positive"));
            }
        }
        Ok(())
    }

    fn slowdown(&self, device: usize) -> f64 {
        self.device_slowdown.get(device).copied().unwrap_or(1.0)
    }
}

/// One device's delays for a round, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceDelay {
    pub download_s: f64,
    pub compute_s: f64,
    pub upload_s: f64,
}

impl DeviceDelay {
    pub fn total(&self) -> f64 {
        self.download_s + self.compute_s + self.upload_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTiming {
    pub devices: Vec<DeviceDelay>,
    /// Index of the device that finishes last.
    pub slowest: usize,
    pub round_s: f64,
}

impl RoundTiming {
    pub fn critical(&self) -> DeviceDelay {
        self.devices[self.slowest]
    }
}

/// Download of the dense model, `local_steps` of compute and upload of the
/// atoms each device actually kept. The round lasts as long as its slowest
/// device.
pub fn simulate_round_time(local_steps: u32, atoms_sent: &[usize], model_dim: usize, tm: &TimeModel) -> RoundTiming {
    let download = model_dim as f64 * tm.bits_per_param as f64 / tm.downlink_bps;
    let compute = local_steps as f64 * tm.per_step_compute_s;
    let devices: Vec<DeviceDelay> = atoms_sent
        .iter()
        .enumerate()
        .map(|(n, &atoms)| {
            let m = tm.slowdown(n);
            DeviceDelay {
                download_s: download * m,
                compute_s: compute * m,
                upload_s: atoms as f64 * tm.bits_per_atom as f64 / tm.uplink_bps * m,
            }
        })
        .collect();
    let mut slowest = 0;
    for (n, d) in devices.iter().enumerate() {
        if d.total() > devices[slowest].total() {
            slowest = n;
        }
    }
    let round_s = devices.get(slowest).map(DeviceDelay::total).unwrap_or(0.0);
    RoundTiming { devices, slowest, round_s }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_links_leave_compute() {
        let tm = TimeModel { uplink_bps: 1e15, downlink_bps: 1e15, per_step_compute_s: 0.01, ..TimeModel::default() };
        let t = simulate_round_time(7, &[100, 50], 1000, &tm);
        assert!((t.round_s - 0.07).abs() < 1e-9);
    }

    #[test]
    fn compute_is_linear_in_steps() {
        let tm = TimeModel::default();
        let a = simulate_round_time(3, &[5], 10, &tm).critical();
        let b = simulate_round_time(6, &[5], 10, &tm).critical();
        assert_eq!(b.compute_s, 2.0 * a.compute_s);
        assert_eq!(a.download_s, b.download_s);
        assert_eq!(a.upload_s, b.upload_s);
    }

    #[test]
    fn slowest_device_sets_round_time() {
        let tm = TimeModel { device_slowdown: vec![1.0, 3.0, 1.0], ..TimeModel::default() };
        let t = simulate_round_time(2, &[10, 1, 40], 100, &tm);
        let max = t.devices.iter().map(DeviceDelay::total).fold(0.0, f64::max);
        assert_eq!(t.round_s, max);
        assert_eq!(t.critical().total(), max);
    }

    #[test]
    fn component_formulas() {
        let tm = TimeModel {
            uplink_bps: 10e3,
            downlink_bps: 100e3,
            per_step_compute_s: 0.5,
            bits_per_param: 32,
            bits_per_atom: 64,
            device_slowdown: vec![],
        };
        let d = simulate_round_time(4, &[6], 210, &tm).critical();
        assert_eq!(d.download_s, 210.0 * 32.0 / 100e3);
        assert_eq!(d.compute_s, 2.0);
        assert_eq!(d.upload_s, 6.0 * 64.0 / 10e3);
    }

    #[test]
    fn validation() {
        assert!(TimeModel { uplink_bps: 0.0, ..TimeModel::default() }.validate(2).is_err());
        assert!(TimeModel { device_slowdown: vec![1.0], ..TimeModel::default() }.validate(2).is_err());
        assert!(TimeModel::default().validate(2).is_ok());
    }
}

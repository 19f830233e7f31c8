//! Battery surrogate: linear open-circuit discharge, resistive sag and a
//! first-order terminal-voltage response.
//!
//! Electrical power is modelled as `P = c · ΣΩ³` and current as `I = P / V`.

use super::params::BatteryParams;

pub fn open_circuit_voltage(charge_drawn: f64, b: &BatteryParams) -> f64 {
    let frac = (charge_drawn / b.capacity).clamp(0.0, 1.0);
    b.v_full - (b.v_full - b.v_min) * frac
}

/// Returns the new `(voltage, charge_drawn)` after `dt` seconds.
pub fn battery_step(
    voltage: f64,
    charge_drawn: f64,
    motor_speeds: &[f64; 4],
    dt: f64,
    b: &BatteryParams,
) -> (f64, f64) {
    let cubes: f64 = motor_speeds.iter().map(|w| w.max(0.0).powi(3)).sum();
    let power = b.power_coeff * cubes;
    let current = power / voltage.max(b.v_min);
    let charge = charge_drawn + current * dt;
    let target = open_circuit_voltage(charge, b) - b.internal_resistance * current;
    let decay = (-dt / b.sag_time_constant).exp();
    let v = target + (voltage - target) * decay;
    (v.clamp(b.v_min, b.v_full), charge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MavParams;

    #[test]
    fn idle_pack_only_recovers() {
        let b = MavParams::default().battery;
        let (v, q) = battery_step(b.v_full, 0.0, &[0.0; 4], 0.001, &b);
        assert_eq!(v, b.v_full);
        assert_eq!(q, 0.0);
        // a sagged pack relaxes back toward its open-circuit value
        let sagged = b.v_full - 0.5;
        let (v, _) = battery_step(sagged, 0.0, &[0.0; 4], 0.01, &b);
        assert!(v > sagged && v <= b.v_full);
    }

    #[test]
    fn hover_voltage_is_monotone_nonincreasing() {
        let p = MavParams::default();
        let w = (p.weight() / (4.0 * p.k_force)).sqrt();
        let mut v = p.battery.v_full;
        let mut q = 0.0;
        for _ in 0..20_000 {
            let (nv, nq) = battery_step(v, q, &[w; 4], 0.001, &p.battery);
            assert!(nv <= v);
            v = nv;
            q = nq;
        }
        assert!(v < p.battery.v_full);
        assert!(v >= p.battery.v_min);
    }

    #[test]
    fn deep_discharge_clamps_at_cutoff() {
        let b = MavParams::default().battery;
        let (v, _) = battery_step(b.v_min, b.capacity * 2.0, &[3000.0; 4], 0.001, &b);
        assert_eq!(v, b.v_min);
    }
}

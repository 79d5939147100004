//! Unit systems built on a characteristic length `l` and time `tau`.
//!
//! Every scenario declares one `UnitSystem`; all engine quantities are then
//! carried in the canonical units (length `l`, time `tau`, density `veh/l`,
//! flow `veh/tau`). Conversions happen only at the I/O boundary.

use core::fmt;

pub const KM_PER_MILE: f64 = 1.609_344;
pub const KM_PER_FOOT: f64 = 0.000_304_8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSystem {
    /// Length unit in kilometres.
    pub l_km: f64,
    /// Time unit in seconds.
    pub tau_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitError {
    NonPositiveUnit,
}

impl fmt::Display for UnitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitError::NonPositiveUnit => write!(f, "unit lengths and times must be positive"),
        }
    }
}

impl core::error::Error for UnitError {}

impl UnitSystem {
    pub fn new(l_km: f64, tau_s: f64) -> Result<Self, UnitError> {
        if !(l_km > 0.0) || !(tau_s > 0.0) {
            return Err(UnitError::NonPositiveUnit);
        }
        Ok(UnitSystem { l_km, tau_s })
    }

    /// Unit system whose canonical units are miles and hours.
    pub fn miles_hours() -> Self {
        UnitSystem { l_km: KM_PER_MILE, tau_s: 3600.0 }
    }

    /// Unit system whose canonical units are feet and seconds.
    pub fn feet_seconds() -> Self {
        UnitSystem { l_km: KM_PER_FOOT, tau_s: 1.0 }
    }

    /// Canonical speed unit `l/tau` expressed in km/h.
    pub fn speed_unit_kmh(&self) -> f64 {
        self.l_km * 3600.0 / self.tau_s
    }

    pub fn speed_from_kmh(&self, v: f64) -> f64 {
        v / self.speed_unit_kmh()
    }

    pub fn speed_from_mph(&self, v: f64) -> f64 {
        self.speed_from_kmh(v * KM_PER_MILE)
    }

    pub fn speed_to_mph(&self, v: f64) -> f64 {
        v * self.speed_unit_kmh() / KM_PER_MILE
    }

    /// veh/km to the canonical veh/l.
    pub fn density_from_per_km(&self, rho: f64) -> f64 {
        rho * self.l_km
    }

    pub fn density_to_per_km(&self, rho: f64) -> f64 {
        rho / self.l_km
    }

    pub fn density_from_per_mile(&self, rho: f64) -> f64 {
        self.density_from_per_km(rho / KM_PER_MILE)
    }

    /// veh/h to the canonical veh/tau.
    pub fn flow_from_per_hour(&self, q: f64) -> f64 {
        q * self.tau_s / 3600.0
    }

    pub fn flow_to_per_hour(&self, q: f64) -> f64 {
        q * 3600.0 / self.tau_s
    }

    pub fn length_from_km(&self, x: f64) -> f64 {
        x / self.l_km
    }

    pub fn length_from_miles(&self, x: f64) -> f64 {
        self.length_from_km(x * KM_PER_MILE)
    }

    pub fn time_from_hours(&self, t: f64) -> f64 {
        t * 3600.0 / self.tau_s
    }

    pub fn time_to_hours(&self, t: f64) -> f64 {
        t * self.tau_s / 3600.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::abs;

    #[test]
    fn published_l_tau_system() {
        // l = 0.028 km, tau = 5 s is the unit system of the link/merge/diverge
        // experiments; 65 mph comes out near 5.1877 l/tau.
        let u = UnitSystem::new(0.028, 5.0).unwrap();
        let v = u.speed_from_mph(65.0);
        assert!(abs(v - 5.1877) / 5.1877 < 1e-3, "got {v}");
        let v35 = u.speed_from_mph(35.0);
        assert!(abs(v35 - 2.7934) / 2.7934 < 1e-3, "got {v35}");
        // One rho_j * l/tau is 3628.8 veh/hr for rho_j = 180 veh/km.
        let unit_flow = u.flow_to_per_hour(u.density_from_per_km(180.0));
        assert!(abs(unit_flow - 3628.8) < 1e-9);
    }

    #[test]
    fn round_trips_are_identity() {
        let u = UnitSystem::new(0.028, 5.0).unwrap();
        for &x in &[0.0, 1.0, 65.0, 1e-7, 1234.5] {
            assert!(abs(u.speed_to_mph(u.speed_from_mph(x)) - x) <= 1e-12 * (1.0 + abs(x)));
            assert!(abs(u.density_to_per_km(u.density_from_per_km(x)) - x) <= 1e-12 * (1.0 + abs(x)));
            assert!(abs(u.flow_to_per_hour(u.flow_from_per_hour(x)) - x) <= 1e-12 * (1.0 + abs(x)));
            assert!(abs(u.time_to_hours(u.time_from_hours(x)) - x) <= 1e-12 * (1.0 + abs(x)));
        }
    }

    #[test]
    fn mile_hour_system_is_identity_for_mph() {
        let u = UnitSystem::miles_hours();
        assert!(abs(u.speed_from_mph(65.0) - 65.0) < 1e-12);
        assert!(abs(u.density_from_per_mile(180.0) - 180.0) < 1e-12);
        assert!(abs(u.flow_from_per_hour(2340.0) - 2340.0) < 1e-12);
    }

    #[test]
    fn rejects_bad_units() {
        assert!(UnitSystem::new(0.0, 5.0).is_err());
        assert!(UnitSystem::new(0.028, -1.0).is_err());
    }
}

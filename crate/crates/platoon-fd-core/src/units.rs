//! Conversions between the crate's internal SI units and the reporting units
//! used by binned series, FD parameters, and file formats.
//!
//! Internally everything is m, s, veh/m, veh/s. Reported quantities use
//! veh/km (density), veh/h (flow), and km/h (speed). Each conversion happens
//! exactly once, at the aggregation or serialization boundary.

/// Multiply a speed in m/s by this to get km/h.
pub const MPS_TO_KMH: f64 = 3.6;

/// Multiply a density in veh/m by this to get veh/km.
pub const VEH_PER_M_TO_VEH_PER_KM: f64 = 1000.0;

/// Multiply a flow in veh/s by this to get veh/h.
pub const VEH_PER_S_TO_VEH_PER_H: f64 = 3600.0;

/// m/s → km/h.
#[inline]
pub fn speed_to_kmh(v_mps: f64) -> f64 {
    v_mps * MPS_TO_KMH
}

/// km/h → m/s.
#[inline]
pub fn speed_to_mps(v_kmh: f64) -> f64 {
    v_kmh / MPS_TO_KMH
}

/// veh/m → veh/km.
#[inline]
pub fn density_to_veh_per_km(k_veh_per_m: f64) -> f64 {
    k_veh_per_m * VEH_PER_M_TO_VEH_PER_KM
}

/// veh/km → veh/m.
#[inline]
pub fn density_to_veh_per_m(k_veh_per_km: f64) -> f64 {
    k_veh_per_km / VEH_PER_M_TO_VEH_PER_KM
}

/// veh/s → veh/h.
#[inline]
pub fn flow_to_veh_per_h(q_veh_per_s: f64) -> f64 {
    q_veh_per_s * VEH_PER_S_TO_VEH_PER_H
}

/// veh/h → veh/s.
#[inline]
pub fn flow_to_veh_per_s(q_veh_per_h: f64) -> f64 {
    q_veh_per_h / VEH_PER_S_TO_VEH_PER_H
}

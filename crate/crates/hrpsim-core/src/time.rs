//! Time units and conversions.
//!
//! Absolute times inside one simulated exchange are `f64` picoseconds on a
//! local timeline (t = 0 at the start of the exchange). Captured timestamps
//! are quantized to the device tick. Trace files store femtoseconds as
//! integers so that tick multiples are exact; the default 15.65 ps tick is
//! 15650 fs.

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default timestamp quantum, picoseconds.
pub const DEFAULT_TICK_PS: f64 = 15.65;

/// Femtoseconds per picosecond.
pub const FS_PER_PS: f64 = 1000.0;

/// Converts a duration in picoseconds to a distance in meters.
pub fn ps_to_meters(t_ps: f64) -> f64 {
    t_ps * 1e-12 * SPEED_OF_LIGHT
}

/// Converts a distance in meters to a one-way propagation time in picoseconds.
pub fn meters_to_ps(d_m: f64) -> f64 {
    d_m / SPEED_OF_LIGHT * 1e12
}

/// Rounds a picosecond value to the nearest multiple of `tick_ps`.
pub fn quantize_to_tick(t_ps: f64, tick_ps: f64) -> f64 {
    (t_ps / tick_ps).round() * tick_ps
}

/// Tick count (rounded to nearest) for a picosecond value.
pub fn tick_index(t_ps: f64, tick_ps: f64) -> i64 {
    (t_ps / tick_ps).round() as i64
}

/// Femtosecond representation of a tick-quantized timestamp.
///
/// Requires `tick_ps` to be an integer number of femtoseconds (all
/// supported ticks are; the default is 15650 fs). Taking the integer tick
/// count first keeps multiples exact in the trace.
pub fn quantized_fs(t_ps: f64, tick_ps: f64) -> u64 {
    let tick_fs = (tick_ps * FS_PER_PS).round() as u64;
    let ticks = (t_ps / tick_ps).round();
    debug_assert!(ticks >= 0.0);
    ticks as u64 * tick_fs
}

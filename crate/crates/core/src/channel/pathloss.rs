//! Large-scale propagation loss.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use serde::{Deserialize, Serialize};

use super::ChannelError;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const HATA_MIN_MHZ: f64 = 150.0;
const HATA_MAX_MHZ: f64 = 1500.0;
const HATA_MIN_BASE_M: f64 = 30.0;
const HATA_MAX_BASE_M: f64 = 200.0;
const HATA_MIN_MOBILE_M: f64 = 1.0;
const HATA_MAX_MOBILE_M: f64 = 10.0;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PathlossModel {
    FreeSpace,
    #[default]
    HataRural,
}

/// Free-space loss with the distance term generalised to exponent `delta`:
/// `10·δ·log10(d) + 20·log10(f) + 20·log10(4π/c)`.
pub fn freespace_pathloss_db(d_m: f64, f_hz: f64, delta: f64) -> Result<f64, ChannelError> {
    if !(d_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d_m));
    }
    Ok(10.0 * delta * d_m.log10() + 20.0 * f_hz.log10() + 20.0 * (4.0 * PI / SPEED_OF_LIGHT).log10())
}

/// Mobile antenna correction for small/medium cities.
fn hata_mobile_correction(f_mhz: f64, h_m: f64) -> f64 {
    let lf = f_mhz.log10();
    (1.1 * lf - 0.7) * h_m - (1.56 * lf - 0.8)
}

/// Open/rural area correction, subtracted from the urban loss.
pub fn hata_rural_correction_db(f_mhz: f64) -> f64 {
    let lf = f_mhz.log10();
    4.78 * lf * lf - 18.33 * lf + 40.94
}

/// Okumura-Hata urban loss (small/medium city), no area correction.
pub fn hata_urban_pathloss_db(d_m: f64, f_hz: f64, h_b: f64, h_m: f64) -> Result<f64, ChannelError> {
    if !(d_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d_m));
    }
    let f_mhz = f_hz / 1e6;
    let d_km = d_m / 1000.0;
    let lhb = h_b.log10();
    Ok(
        69.55 + 26.16 * f_mhz.log10() - 13.82 * lhb - hata_mobile_correction(f_mhz, h_m)
            + (44.9 - 6.55 * lhb) * d_km.log10(),
    )
}

/// Okumura-Hata loss for open/rural terrain.
///
/// With `clamp` off the formula is evaluated as-is for any antenna heights,
/// and a frequency outside 150–1500 MHz is an error. With `clamp` on, the
/// frequency and both heights are pulled into the model's validity range
/// (a warning is logged once per process).
pub fn hata_rural_pathloss_db(
    d_m: f64,
    f_hz: f64,
    h_b: f64,
    h_m: f64,
    clamp: bool,
) -> Result<f64, ChannelError> {
    let f_mhz = f_hz / 1e6;
    let (f_hz, h_b, h_m) = if clamp {
        let fc = f_mhz.clamp(HATA_MIN_MHZ, HATA_MAX_MHZ);
        let hb = h_b.clamp(HATA_MIN_BASE_M, HATA_MAX_BASE_M);
        let hm = h_m.clamp(HATA_MIN_MOBILE_M, HATA_MAX_MOBILE_M);
        if (fc != f_mhz || hb != h_b || hm != h_m) && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            warn!(
                "Hata parameters clamped to validity range: f {f_mhz} -> {fc} MHz, h_b {h_b} -> {hb} m, h_m {h_m} -> {hm} m"
            );
        }
        (fc * 1e6, hb, hm)
    } else {
        if !(HATA_MIN_MHZ..=HATA_MAX_MHZ).contains(&f_mhz) {
            return Err(ChannelError::HataFrequency(f_mhz));
        }
        (f_hz, h_b, h_m)
    };
    Ok(hata_urban_pathloss_db(d_m, f_hz, h_b, h_m)? - hata_rural_correction_db(f_hz / 1e6))
}

//! Base-32 geohash encoding with longitude-first bit interleaving.

use crate::error::{Error, Result};
use crate::types::GeoPoint;

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

fn base32_index(c: u8) -> Option<u8> {
    BASE32.iter().position(|&b| b == c).map(|i| i as u8)
}

/// Encodes `p` into a hash of `precision` characters (1..=12).
pub fn encode(p: GeoPoint, precision: usize) -> String {
    assert!((1..=12).contains(&precision), "precision out of range");
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut out = String::with_capacity(precision);
    let mut even = true;
    while out.len() < precision {
        let mut idx = 0u8;
        for _ in 0..5 {
            let bit = if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if p.lon >= mid {
                    lon_lo = mid;
                    1
                } else {
                    lon_hi = mid;
                    0
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if p.lat >= mid {
                    lat_lo = mid;
                    1
                } else {
                    lat_hi = mid;
                    0
                }
            };
            idx = (idx << 1) | bit;
            even = !even;
        }
        out.push(BASE32[idx as usize] as char);
    }
    out
}

/// Cell bounds `(min, max)` for a hash.
pub fn decode_bounds(hash: &str) -> Result<(GeoPoint, GeoPoint)> {
    if hash.is_empty() || hash.len() > 12 {
        return Err(Error::InvalidInput(format!("bad geohash length: {hash:?}")));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    for c in hash.bytes() {
        let idx = base32_index(c.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("bad geohash character in {hash:?}")))?;
        for shift in (0..5).rev() {
            let bit = (idx >> shift) & 1 == 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if bit {
                    lon_lo = mid;
                } else {
                    lon_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if bit {
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
    }
    Ok((GeoPoint::new(lat_lo, lon_lo), GeoPoint::new(lat_hi, lon_hi)))
}

/// Center of the hash's cell.
pub fn decode(hash: &str) -> Result<GeoPoint> {
    let (lo, hi) = decode_bounds(hash)?;
    Ok(GeoPoint::new((lo.lat + hi.lat) / 2.0, (lo.lon + hi.lon) / 2.0))
}

/// Cell size in degrees `(lat, lon)` at a precision.
pub fn cell_size_deg(precision: usize) -> (f64, f64) {
    let bits = 5 * precision as i32;
    let lon_bits = (bits + 1) / 2;
    let lat_bits = bits / 2;
    (180.0 / 2f64.powi(lat_bits), 360.0 / 2f64.powi(lon_bits))
}

/// Snaps a point onto its cell center.
pub fn snap(p: GeoPoint, precision: usize) -> GeoPoint {
    decode(&encode(p, precision)).expect("encoded hash decodes")
}

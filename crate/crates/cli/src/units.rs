//! Quantities at the command-line boundary. Values are stored in SI units;
//! input may carry a unit suffix (`1.8us`, `2.972MHz`) or use `2^k` notation.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

const SUFFIXES: &[(&str, f64)] = &[
    ("GHz", 1e9),
    ("MHz", 1e6),
    ("kHz", 1e3),
    ("Hz", 1.0),
    ("ms", 1e-3),
    ("us", 1e-6),
    ("µs", 1e-6),
    ("ns", 1e-9),
    ("s", 1.0),
    ("rad", 1.0),
];

/// Parses a number with an optional unit suffix into SI.
pub fn parse_quantity(input: &str) -> Result<f64, String> {
    let s = input.trim();
    if let Some((base, exp)) = s.split_once('^') {
        let base: f64 = base.trim().parse().map_err(|_| format!("bad number '{input}'"))?;
        let exp: f64 = exp.trim().parse().map_err(|_| format!("bad exponent in '{input}'"))?;
        return Ok(base.powf(exp));
    }
    let (number, scale) = SUFFIXES
        .iter()
        .find_map(|(suffix, scale)| s.strip_suffix(suffix).map(|rest| (rest.trim_end(), *scale)))
        .unwrap_or((s, 1.0));
    let v: f64 = number
        .parse()
        .map_err(|_| format!("'{input}' is not a number (units: s, ms, us, ns, Hz, kHz, MHz, GHz, rad)"))?;
    Ok(v * scale)
}

/// A config-file number: either a JSON number or a string with a unit suffix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity(pub f64);

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Quantity;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string such as \"1.5us\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Quantity, E> {
                Ok(Quantity(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Quantity, E> {
                Ok(Quantity(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Quantity, E> {
                Ok(Quantity(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Quantity, E> {
                parse_quantity(v).map(Quantity).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_quantity("1.81us").unwrap(), 1.81 * 1e-6);
        assert_eq!(parse_quantity("2.972 MHz").unwrap(), 2.972 * 1e6);
        assert_eq!(parse_quantity("5e-6").unwrap(), 5e-6);
        assert_eq!(parse_quantity("200e6").unwrap(), 200e6);
        assert_eq!(parse_quantity("-0.243rad").unwrap(), -0.243);
        assert_eq!(parse_quantity("2^5").unwrap(), 32.0);
        assert!(parse_quantity("fast").is_err());
        assert!(parse_quantity("3 parsecs").is_err());
    }
}

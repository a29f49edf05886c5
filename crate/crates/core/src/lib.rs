//! Right-to-override gating for automated urban control.
//!
//! A learned or optimized controller proposes actions; runtime monitors
//! watch disparity, hazard, accessibility and service quality; when a
//! threshold is crossed the gate substitutes a pre-declared safe fallback
//! for a bounded time, under a named authority, with an audit record.
//! Three simulators exercise the gate: feeder load shedding, a heated
//! building zone, and a signalized street grid.

pub mod artifacts;
pub mod audit;
pub mod config;
pub mod gating;
pub mod monitors;
pub mod report;
pub mod sim;

/// Simulation seconds since scenario start.
pub type Seconds = u64;

/// Serde helper for `f64` fields that may be infinite.
///
/// JSON has no infinity, so non-finite values travel as `"inf"`, `"-inf"`
/// or `"nan"`.
pub mod float_repr {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn fmt(x: f64) -> String {
        if x.is_nan() {
            "nan".into()
        } else if x == f64::INFINITY {
            "inf".into()
        } else if x == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            format!("{x}")
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&fmt(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }

    #[cfg(test)]
    mod tests {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct W(#[serde(with = "super")] f64);

        #[test]
        fn round_trip() {
            for x in [0.0, 1.5, -2.0, f64::INFINITY, f64::NEG_INFINITY] {
                let s = serde_json::to_string(&W(x)).unwrap();
                assert_eq!(serde_json::from_str::<W>(&s).unwrap(), W(x));
            }
            assert_eq!(serde_json::to_string(&W(f64::INFINITY)).unwrap(), "\"inf\"");
            assert_eq!(super::fmt(1.0), "1");
        }
    }
}

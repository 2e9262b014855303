use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar used for probabilities, scores and metrics.
pub trait Real:
    Float
    + FromPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).unwrap_or_else(Self::nan)
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod extended_float {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use super::Real;

    pub fn serialize<F: Real, S: Serializer>(v: &F, s: S) -> Result<S::Ok, S::Error> {
        let x = v.to_f64().unwrap_or(f64::NAN);
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, F: Real, D: Deserializer<'de>>(d: D) -> Result<F, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let x = match Repr::deserialize(d)? {
            Repr::Num(x) => x,
            Repr::Text(t) => parse_extended(&t)
                .ok_or_else(|| D::Error::custom(format!("invalid float {t:?}")))?,
        };
        Ok(F::from_f64_lossy(x))
    }

    pub fn parse_extended(t: &str) -> Option<f64> {
        match t.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            other => other.parse().ok(),
        }
    }
}

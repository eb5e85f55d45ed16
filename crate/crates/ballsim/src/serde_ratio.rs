//! Serializes rationals as `"p"` or `"p/q"` strings.

use num_rational::{BigRational, Ratio};
use serde::Serializer;

use crate::state::fmt_ratio;

pub fn small<S: Serializer>(r: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_ratio(r))
}

pub fn big<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_ratio(r))
}

pub fn opt_wide<S: Serializer>(r: &Option<Ratio<i128>>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&fmt_ratio(r)),
        None => s.serialize_none(),
    }
}

pub fn opt_big<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&fmt_ratio(r)),
        None => s.serialize_none(),
    }
}

/// Round-trips a `Ratio<i64>` through its `p/q` string.
pub mod string {
    use num_rational::Ratio;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
        super::small(r, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<i64>, D::Error> {
        let s = String::deserialize(d)?;
        crate::process::parse_ratio(&s).map_err(D::Error::custom)
    }
}

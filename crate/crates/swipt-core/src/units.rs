//! Unit newtypes used at configuration and reporting boundaries.
//! Internally everything is plain `f64` in watts and nats/s/Hz.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Watts(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Dbm(pub f64);

/// Spectral efficiency in bits/s/Hz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BpsHz(pub f64);

/// Spectral efficiency in nats/s/Hz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NatsHz(pub f64);

impl From<Dbm> for Watts {
    fn from(d: Dbm) -> Self {
        Watts(10f64.powf((d.0 - 30.0) / 10.0))
    }
}

impl From<Watts> for Dbm {
    fn from(w: Watts) -> Self {
        Dbm(10.0 * w.0.log10() + 30.0)
    }
}

impl From<BpsHz> for NatsHz {
    fn from(b: BpsHz) -> Self {
        NatsHz(b.0 * LN_2)
    }
}

impl From<NatsHz> for BpsHz {
    fn from(n: NatsHz) -> Self {
        BpsHz(n.0 / LN_2)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    Watts::from(Dbm(dbm)).0
}

pub fn watts_to_dbm(w: f64) -> f64 {
    Dbm::from(Watts(w)).0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minus_seventy_dbm() {
        let w = dbm_to_watts(-70.0);
        assert!((w - 1e-10).abs() < 1e-22);
    }

    #[test]
    fn thirty_dbm_is_one_watt() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bits_nats() {
        let n: NatsHz = BpsHz(1.0).into();
        assert!((n.0 - LN_2).abs() < 1e-15);
        let b: BpsHz = n.into();
        assert!((b.0 - 1.0).abs() < 1e-15);
    }
}

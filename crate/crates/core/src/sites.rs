//! Site labels for the two source qutrits and the emitted photonic qubits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A tensor factor: one of the two source qutrits or an emitted photon.
///
/// Registers are little-endian: the first site of a list is the least
/// significant digit of the flattened index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteLabel {
    Source(u8),
    Photon(usize),
}

impl SiteLabel {
    pub fn dim(self) -> usize {
        match self {
            SiteLabel::Source(_) => 3,
            SiteLabel::Photon(_) => 2,
        }
    }

    pub fn is_photon(self) -> bool {
        matches!(self, SiteLabel::Photon(_))
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            SiteLabel::Source(1 | 2) => Ok(self),
            SiteLabel::Photon(i) if i >= 1 => Ok(self),
            _ => Err(Error::InvalidParameter {
                name: "site".into(),
                reason: format!("invalid site label {self}"),
            }),
        }
    }
}

impl fmt::Display for SiteLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteLabel::Source(i) => write!(f, "S{i}"),
            SiteLabel::Photon(i) => write!(f, "P{i}"),
        }
    }
}

impl FromStr for SiteLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::param("site", format!("cannot parse site label {s:?}"));
        let (head, tail) = s.split_at(s.len().min(1));
        let idx: usize = tail.parse().map_err(|_| bad())?;
        let label = match head {
            "S" | "s" => SiteLabel::Source(u8::try_from(idx).map_err(|_| bad())?),
            "P" | "p" => SiteLabel::Photon(idx),
            _ => return Err(bad()),
        };
        label.validate()
    }
}

impl Serialize for SiteLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SiteLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn photons(range: std::ops::RangeInclusive<usize>) -> Vec<SiteLabel> {
    range.map(SiteLabel::Photon).collect()
}

pub fn dims_of(sites: &[SiteLabel]) -> Vec<usize> {
    sites.iter().map(|s| s.dim()).collect()
}

pub fn total_dim(sites: &[SiteLabel]) -> usize {
    sites.iter().map(|s| s.dim()).product()
}

/// Rejects duplicated or malformed labels.
pub fn check_sites(sites: &[SiteLabel]) -> Result<()> {
    for (k, s) in sites.iter().enumerate() {
        s.validate()?;
        if sites[..k].contains(s) {
            return Err(Error::DuplicateSite(*s));
        }
    }
    Ok(())
}

/// Positions of `wanted` within `sites`.
pub fn positions(sites: &[SiteLabel], wanted: &[SiteLabel]) -> Result<Vec<usize>> {
    check_sites(wanted)?;
    wanted
        .iter()
        .map(|w| {
            sites
                .iter()
                .position(|s| s == w)
                .ok_or(Error::UnknownSite(*w))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for s in ["S1", "S2", "P1", "P17"] {
            assert_eq!(s.parse::<SiteLabel>().unwrap().to_string(), s);
        }
        assert!("S3".parse::<SiteLabel>().is_err());
        assert!("P0".parse::<SiteLabel>().is_err());
        assert!("Q1".parse::<SiteLabel>().is_err());
    }

    #[test]
    fn duplicate_rejected() {
        let s = [SiteLabel::Photon(1), SiteLabel::Photon(1)];
        assert!(matches!(check_sites(&s), Err(Error::DuplicateSite(_))));
    }
}

//! Medical tests described by when an infected person tests positive.
//!
//! A [`TestProfile`] is a distribution over two offsets from the infection
//! day: the day a person starts testing positive (`t_convert`, possibly never)
//! and how many days they keep testing positive. Nothing else about a test is
//! needed; the observation models only ever sample from it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::discretized_gamma;

/// Absolute conversion and reversion days for one infected individual.
/// `None` means never.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConversionRecord {
    pub convert: Option<u32>,
    pub revert: Option<u32>,
}

impl ConversionRecord {
    pub const NEVER: Self = Self {
        convert: None,
        revert: None,
    };

    /// Whether the individual tests positive on `day`.
    pub fn positive_on(&self, day: u32) -> bool {
        match (self.convert, self.revert) {
            (Some(c), Some(r)) => c <= day && day < r,
            (Some(c), None) => c <= day,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    convert_pmf: Vec<(u32, f64)>,
    #[serde(default)]
    never_convert_prob: f64,
    duration_pmf: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct TestProfile {
    convert_pmf: Vec<(u32, f64)>,
    never_convert_prob: f64,
    duration_pmf: Vec<(u32, f64)>,
    // last index of `convert_index` stands for "never converts"
    convert_index: WeightedAliasIndex<f64>,
    duration_index: WeightedAliasIndex<f64>,
}

impl PartialEq for TestProfile {
    fn eq(&self, other: &Self) -> bool {
        self.convert_pmf == other.convert_pmf
            && self.never_convert_prob == other.never_convert_prob
            && self.duration_pmf == other.duration_pmf
    }
}

fn check_pmf(name: &str, pmf: &[(u32, f64)], extra: f64) -> Result<()> {
    if pmf.iter().any(|&(_, p)| !(p.is_finite() && p >= 0.0)) || !(0.0..=1.0).contains(&extra) {
        return Err(Error::config(format!("{name}: probabilities must lie in [0, 1]")));
    }
    let total = pmf.iter().map(|&(_, p)| p).sum::<f64>() + extra;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{name}: probabilities sum to {total}, not 1")));
    }
    let mut days: Vec<u32> = pmf.iter().map(|&(d, _)| d).collect();
    days.sort_unstable();
    days.dedup();
    if days.len() != pmf.len() {
        return Err(Error::config(format!("{name}: repeated day")));
    }
    Ok(())
}

impl TestProfile {
    pub fn new(
        convert_pmf: Vec<(u32, f64)>,
        never_convert_prob: f64,
        duration_pmf: Vec<(u32, f64)>,
    ) -> Result<Self> {
        check_pmf("convert_pmf", &convert_pmf, never_convert_prob)?;
        check_pmf("duration_pmf", &duration_pmf, 0.0)?;
        if duration_pmf.iter().any(|&(d, p)| d == 0 && p > 0.0) {
            return Err(Error::config("duration_pmf: durations must be at least one day"));
        }
        let mut weights: Vec<f64> = convert_pmf.iter().map(|&(_, p)| p).collect();
        weights.push(never_convert_prob);
        let convert_index = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::config(format!("convert_pmf: {e}")))?;
        let duration_index =
            WeightedAliasIndex::new(duration_pmf.iter().map(|&(_, p)| p).collect())
                .map_err(|e| Error::config(format!("duration_pmf: {e}")))?;
        Ok(Self {
            convert_pmf,
            never_convert_prob,
            duration_pmf,
            convert_index,
            duration_index,
        })
    }

    /// Converts `never_convert_prob` of the time; otherwise the offset and
    /// duration follow discretized gammas on the given day ranges.
    pub fn from_gammas(
        convert: (f64, f64, u32, u32),
        never_convert_prob: f64,
        duration: (f64, f64, u32, u32),
    ) -> Self {
        let (cm, cs, clo, chi) = convert;
        let convert_pmf = (clo..=chi)
            .zip(discretized_gamma(cm, cs, clo, chi))
            .map(|(d, p)| (d, p * (1.0 - never_convert_prob)))
            .collect();
        let (dm, ds, dlo, dhi) = duration;
        let duration_pmf = (dlo..=dhi).zip(discretized_gamma(dm, ds, dlo, dhi)).collect();
        Self::new(convert_pmf, never_convert_prob, duration_pmf).expect("valid builtin profile")
    }

    /// PCR: positive from about day 4 for about two weeks.
    pub fn pcr() -> Self {
        Self::from_gammas((4.0, 1.5, 1, 10), 0.05, (14.0, 4.0, 3, 35))
    }

    /// Serological: positive from about day 12 and effectively never reverts.
    pub fn serological() -> Self {
        let convert = (5..=25)
            .zip(discretized_gamma(12.0, 3.0, 5, 25))
            .map(|(d, p)| (d, p * 0.92))
            .collect();
        Self::new(convert, 0.08, vec![(365, 1.0)]).expect("valid builtin profile")
    }

    pub fn builtin(kind: TestKind) -> Self {
        match kind {
            TestKind::Pcr => Self::pcr(),
            TestKind::Serological => Self::serological(),
        }
    }

    pub fn convert_pmf(&self) -> &[(u32, f64)] {
        &self.convert_pmf
    }

    pub fn never_convert_prob(&self) -> f64 {
        self.never_convert_prob
    }

    pub fn duration_pmf(&self) -> &[(u32, f64)] {
        &self.duration_pmf
    }

    /// Mean conversion offset among people who do convert.
    pub fn mean_convert_offset(&self) -> f64 {
        let mass: f64 = self.convert_pmf.iter().map(|&(_, p)| p).sum();
        self.convert_pmf
            .iter()
            .map(|&(d, p)| d as f64 * p)
            .sum::<f64>()
            / mass
    }

    /// Conversion offset and positive duration, or `None` if the person never
    /// converts.
    pub fn sample_offsets<G: Rng + ?Sized>(&self, rng: &mut G) -> Option<(u32, u32)> {
        let i = self.convert_index.sample(rng);
        let &(offset, _) = self.convert_pmf.get(i)?;
        let (duration, _) = self.duration_pmf[self.duration_index.sample(rng)];
        Some((offset, duration))
    }

    pub fn sample_conversion<G: Rng + ?Sized>(&self, infection_day: u32, rng: &mut G) -> ConversionRecord {
        match self.sample_offsets(rng) {
            Some((offset, duration)) => {
                let convert = infection_day + offset;
                ConversionRecord {
                    convert: Some(convert),
                    revert: Some(convert + duration),
                }
            }
            None => ConversionRecord::NEVER,
        }
    }
}

impl TryFrom<RawProfile> for TestProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        Self::new(raw.convert_pmf, raw.never_convert_prob, raw.duration_pmf)
    }
}

impl From<TestProfile> for RawProfile {
    fn from(p: TestProfile) -> Self {
        RawProfile {
            convert_pmf: p.convert_pmf,
            never_convert_prob: p.never_convert_prob,
            duration_pmf: p.duration_pmf,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Pcr,
    Serological,
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcr" => Ok(Self::Pcr),
            "serological" => Ok(Self::Serological),
            other => Err(Error::config(format!(
                "unknown test kind {other:?} (expected \"pcr\" or \"serological\")"
            ))),
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pcr => "pcr",
            Self::Serological => "serological",
        })
    }
}

/// Looks up a built-in profile by name.
pub fn builtin_profile(kind: &str) -> Result<TestProfile> {
    Ok(TestProfile::builtin(kind.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mode(pmf: &[(u32, f64)]) -> u32 {
        pmf.iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn never_converting_test() {
        let profile = TestProfile::new(vec![], 1.0, vec![(3, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for day in 0..50 {
            assert_eq!(profile.sample_conversion(day, &mut rng), ConversionRecord::NEVER);
        }
    }

    #[test]
    fn degenerate_profile_is_deterministic() {
        let profile = TestProfile::new(vec![(3, 1.0)], 0.0, vec![(10, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let rec = profile.sample_conversion(5, &mut rng);
            assert_eq!((rec.convert, rec.revert), (Some(8), Some(18)));
        }
    }

    #[test]
    fn builtin_modes() {
        assert_eq!(mode(TestProfile::pcr().convert_pmf()), 4);
        assert_eq!(mode(TestProfile::serological().convert_pmf()), 12);
        let sero = TestProfile::serological();
        assert!(sero.duration_pmf().iter().all(|&(d, _)| d >= 365));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(builtin_profile("antigen"), Err(Error::Config(_))));
        assert!(builtin_profile("pcr").is_ok());
    }

    #[test]
    fn rejects_unnormalized_pmf() {
        assert!(TestProfile::new(vec![(1, 0.5)], 0.0, vec![(2, 1.0)]).is_err());
        assert!(TestProfile::new(vec![(1, 1.0)], 0.0, vec![(0, 1.0)]).is_err());
    }

    #[test]
    fn json_shape() {
        let profile = TestProfile::new(vec![(2, 0.75)], 0.25, vec![(5, 1.0)]).unwrap();
        let json = serde_json::to_value(&profile).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "convert_pmf": [[2, 0.75]],
                "never_convert_prob": 0.25,
                "duration_pmf": [[5, 1.0]],
            })
        );
        let back: TestProfile = serde_json::from_value(json).unwrap();
        assert_eq!(back, profile);
    }

    #[test]
    fn revert_always_follows_convert() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for profile in [TestProfile::pcr(), TestProfile::serological()] {
            for i in 0..10_000u32 {
                let rec = profile.sample_conversion(i % 100, &mut rng);
                if let (Some(c), Some(r)) = (rec.convert, rec.revert) {
                    assert!(r > c);
                }
            }
        }
    }
}

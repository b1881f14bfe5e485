use serde::{Deserialize, Serialize};

use super::SurvivalRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Recommended,
    Neutral,
    AntiRecommended,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Recommended => "recommended",
            Group::Neutral => "neutral",
            Group::AntiRecommended => "anti_recommended",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub groups: Vec<Group>,
    /// Standard deviation of the available estimates.
    pub sigma: f64,
    pub threshold: f64,
    pub recommended: usize,
    pub neutral: usize,
    pub anti_recommended: usize,
}

impl Recommendation {
    pub fn members(&self, g: Group) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| self.groups[i] == g).collect()
    }
}

/// Splits subjects by whether their arm agrees with the sign of the estimated
/// log hazard ratio `f_hat`.
///
/// With `|f_hat| > c sigma`, a subject is Recommended when `f_hat > 0` and they
/// were untreated or `f_hat < 0` and they were treated, and Anti-Recommended in
/// the opposite cases. Everyone else, including subjects without an estimate,
/// is Neutral.
pub fn recommend_groups(fhat: &[Option<f64>], records: &[SurvivalRecord], c: f64) -> Result<Recommendation> {
    if fhat.len() != records.len() {
        return Err(Error::InvalidInput(format!("{} estimates for {} records", fhat.len(), records.len())));
    }
    if !(c >= 0.0) {
        return Err(Error::config("c_threshold", "must be nonnegative"));
    }
    let vals: Vec<f64> = fhat.iter().flatten().copied().collect();
    if vals.len() < 2 {
        return Err(Error::InvalidInput("need at least two estimates to scale the threshold".into()));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sigma = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput("estimates have zero spread".into()));
    }
    let threshold = c * sigma;
    let groups: Vec<Group> = fhat
        .iter()
        .zip(records)
        .map(|(f, r)| match f {
            Some(f) if f.abs() > threshold => {
                if (*f > 0.0) != r.treatment {
                    Group::Recommended
                } else {
                    Group::AntiRecommended
                }
            }
            _ => Group::Neutral,
        })
        .collect();
    let count = |g: Group| groups.iter().filter(|x| **x == g).count();
    Ok(Recommendation {
        recommended: count(Group::Recommended),
        neutral: count(Group::Neutral),
        anti_recommended: count(Group::AntiRecommended),
        groups,
        sigma,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: bool) -> SurvivalRecord {
        SurvivalRecord { time: 1.0, event: false, treatment: t }
    }

    #[test]
    fn sign_and_arm_rules() {
        let f = [Some(2.0), Some(2.0), Some(-2.0), Some(-2.0), Some(0.0), None];
        let r = [rec(false), rec(true), rec(false), rec(true), rec(false), rec(true)];
        let g = recommend_groups(&f, &r, 0.5).unwrap();
        assert_eq!(
            g.groups,
            vec![
                Group::Recommended,
                Group::AntiRecommended,
                Group::AntiRecommended,
                Group::Recommended,
                Group::Neutral,
                Group::Neutral
            ]
        );
        assert_eq!(g.recommended + g.neutral + g.anti_recommended, 6);
    }

    #[test]
    fn infinite_threshold_is_all_neutral() {
        let f = [Some(1.0), Some(-1.0), Some(3.0)];
        let r = [rec(false), rec(true), rec(true)];
        let g = recommend_groups(&f, &r, f64::INFINITY).unwrap();
        assert_eq!(g.neutral, 3);
    }
}

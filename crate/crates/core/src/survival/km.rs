use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{parse_real, SurvivalRecord};
use crate::error::{CohortError, Error, Result};

/// Product-limit survival estimate, one step per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub n: usize,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl SurvivalCurve {
    /// `S(t)`, right-continuous.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// CSV `time,survival,at_risk`, starting with the origin row `(0, 1, n)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["time", "survival", "at_risk"])?;
        wtr.write_record(["0".to_string(), "1".to_string(), self.n.to_string()])?;
        for i in 0..self.times.len() {
            wtr.write_record([
                format!("{:?}", self.times[i]),
                format!("{:?}", self.survival[i]),
                self.at_risk[i].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the steps written by [`SurvivalCurve::write_csv`] (event counts
    /// are not stored and come back empty).
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let at_risk = rec[2]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("row {}: bad at_risk `{}`", line + 2, &rec[2])))?;
            rows.push((parse_real(&rec[0], "time", line + 2)?, parse_real(&rec[1], "survival", line + 2)?, at_risk));
        }
        let Some(&(_, _, n)) = rows.first() else {
            return Err(Error::Parse("empty curve".into()));
        };
        let steps = &rows[1..];
        Ok(Self {
            n,
            times: steps.iter().map(|r| r.0).collect(),
            survival: steps.iter().map(|r| r.1).collect(),
            at_risk: steps.iter().map(|r| r.2).collect(),
            events: Vec::new(),
        })
    }
}

pub fn kaplan_meier(records: &[SurvivalRecord]) -> SurvivalCurve {
    let mut order: Vec<&SurvivalRecord> = records.iter().collect();
    order.sort_by(|a, b| a.time.total_cmp(&b.time));
    let n = records.len();
    let mut curve = SurvivalCurve {
        n,
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = order[i].time;
        let at_risk = n - i;
        let mut d = 0;
        while i < n && order[i].time == t {
            d += usize::from(order[i].event);
            i += 1;
        }
        if d > 0 {
            s *= (at_risk - d) as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
    }
    curve
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// One-degree-of-freedom log-rank test.
pub fn logrank_test(a: &[SurvivalRecord], b: &[SurvivalRecord]) -> Result<LogRankResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("log-rank test needs two nonempty groups".into()));
    }
    let mut all: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|r| (r.time, r.event, true))
        .chain(b.iter().map(|r| (r.time, r.event, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut na, mut nb) = (a.len() as f64, b.len() as f64);
    let (mut obs, mut exp, mut var) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let (mut da, mut db, mut ca, mut cb) = (0.0, 0.0, 0.0, 0.0);
        while i < all.len() && all[i].0 == t {
            let (_, ev, in_a) = all[i];
            match (ev, in_a) {
                (true, true) => da += 1.0,
                (true, false) => db += 1.0,
                (false, true) => ca += 1.0,
                (false, false) => cb += 1.0,
            }
            i += 1;
        }
        let d = da + db;
        let n = na + nb;
        if d > 0.0 {
            obs += da;
            exp += d * na / n;
            if n > 1.0 {
                var += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
            }
        }
        na -= da + ca;
        nb -= db + cb;
    }
    if !(var > 0.0) {
        return Err(CohortError::Undefined("log-rank variance is zero (no informative events)".into()).into());
    }
    let statistic = (obs - exp).powi(2) / var;
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok(LogRankResult {
        statistic,
        p_value: chi.sf(statistic),
        observed_a: obs,
        expected_a: exp,
        variance: var,
        n_a: a.len(),
        n_b: b.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn rec(time: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord { time, event, treatment: false }
    }

    #[test]
    fn no_events_is_flat() {
        let c = kaplan_meier(&[rec(1.0, false), rec(2.0, false)]);
        assert!(c.times.is_empty());
        assert_eq!(c.survival_at(5.0), 1.0);
    }

    #[test]
    fn single_event() {
        let recs: Vec<SurvivalRecord> = (0..5).map(|i| rec(1.0 + i as f64, i == 0)).collect();
        let c = kaplan_meier(&recs);
        assert_eq!(c.survival, vec![0.8]);
        assert_eq!(c.survival_at(0.5), 1.0);
        assert_eq!(c.survival_at(1.0), 0.8);
    }

    #[test]
    fn textbook_six_records() {
        let recs = [rec(1.0, true), rec(2.0, false), rec(3.0, true), rec(3.0, false), rec(4.0, true), rec(6.0, false)];
        let c = kaplan_meier(&recs);
        assert_eq!(c.times, vec![1.0, 3.0, 4.0]);
        assert_eq!(c.at_risk, vec![6, 4, 2]);
        assert_eq!(c.survival, vec![5.0 / 6.0, 0.625, 0.3125]);
    }

    #[test]
    fn identical_groups() {
        let g = [rec(1.0, true), rec(2.0, false), rec(2.5, true)];
        let r = logrank_test(&g, &g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn detects_hazard_ratio_e() {
        let mut rng = substream(8, "logrank", 0);
        let mut draw = |rate: f64| -> Vec<SurvivalRecord> {
            (0..1000).map(|_| rec(-(1.0 - rng.random::<f64>()).ln() / rate, true)).collect()
        };
        let a = draw(1.0);
        let b = draw(std::f64::consts::E);
        assert!(logrank_test(&a, &b).unwrap().p_value < 0.01);
    }

    #[test]
    fn no_events_undefined() {
        assert!(logrank_test(&[rec(1.0, false)], &[rec(2.0, false)]).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let recs = [rec(1.0, true), rec(2.0, false), rec(3.0, true)];
        let c = kaplan_meier(&recs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        c.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        let back = SurvivalCurve::read_csv(&path).unwrap();
        assert_eq!(back.times, c.times);
        assert_eq!(back.survival, c.survival);
        assert_eq!(back.at_risk, c.at_risk);
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::align::ca_rmse;
use crate::error::{Error, Result};
use crate::protein::Trajectory;

pub const DEFAULT_S_VALUES: [usize; 5] = [2, 6, 10, 16, 32];

/// Per-step Cα-RMSE averaged over sampler draws, and `R_s`, the mean of
/// that curve over the first `s` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_step: Vec<f64>,
    #[serde(serialize_with = "ser_table", deserialize_with = "de_table")]
    pub r_table: Vec<(usize, f64)>,
    pub n_samples: usize,
    /// Requested horizons longer than the trajectories were dropped.
    pub truncated: bool,
}

fn ser_table<S: Serializer>(table: &[(usize, f64)], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(table.len()))?;
    for (k, v) in table {
        map.serialize_entry(&format!("R_{k}"), v)?;
    }
    map.end()
}

fn de_table<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<(usize, f64)>, D::Error> {
    let raw = BTreeMap::<String, f64>::deserialize(d)?;
    let mut out = raw
        .into_iter()
        .map(|(k, v)| {
            k.strip_prefix("R_")
                .and_then(|s| s.parse().ok())
                .map(|s| (s, v))
                .ok_or_else(|| serde::de::Error::custom(format!("bad table key '{k}'")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    out.sort_by_key(|e| e.0);
    Ok(out)
}

impl MetricReport {
    pub fn from_per_step(per_step: Vec<f64>, s_values: &[usize], n_samples: usize) -> Self {
        let mut r_table = Vec::new();
        let mut truncated = false;
        for &s in s_values {
            if s == 0 || s > per_step.len() {
                truncated = true;
                continue;
            }
            r_table.push((s, per_step[..s].iter().sum::<f64>() / s as f64));
        }
        MetricReport {
            per_step,
            r_table,
            n_samples,
            truncated,
        }
    }

    pub fn r(&self, s: usize) -> Option<f64> {
        self.r_table.iter().find(|e| e.0 == s).map(|e| e.1)
    }

    pub fn table_header(&self) -> String {
        self.r_table.iter().map(|(s, _)| format!("R_{s}")).collect::<Vec<_>>().join("\t")
    }

    /// Tab-separated values with two decimals, in table order.
    pub fn table_row(&self) -> String {
        self.r_table.iter().map(|(_, v)| format!("{v:.2}")).collect::<Vec<_>>().join("\t")
    }

    /// Reads a row of `R_s` values (separated by tabs, commas or spaces) back
    /// into a table for the given horizons.
    pub fn parse_row(row: &str, s_values: &[usize]) -> Result<Self> {
        let values: Vec<f64> = row
            .split(|c: char| c == '\t' || c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad table value '{t}'"))))
            .collect::<Result<_>>()?;
        if values.len() != s_values.len() {
            return Err(Error::Parse(format!(
                "{} values for {} horizons",
                values.len(),
                s_values.len()
            )));
        }
        Ok(MetricReport {
            per_step: Vec::new(),
            r_table: s_values.iter().copied().zip(values).collect(),
            n_samples: 0,
            truncated: false,
        })
    }
}

/// Cα-RMSE at each step over the common length of the two trajectories.
pub fn per_step_rmse(pred: &Trajectory, gt: &Trajectory, align: bool) -> Result<Vec<f64>> {
    let len = pred.len().min(gt.len());
    (0..len).map(|k| ca_rmse(&pred.states[k], &gt.states[k], align)).collect()
}

/// Averages per-step RMSE over independent draws against one ground truth.
pub fn r_table(
    draws: &[Trajectory],
    gt: &Trajectory,
    s_values: &[usize],
    align: bool,
) -> Result<MetricReport> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no sampled trajectories".into()));
    }
    let mut sum: Vec<f64> = Vec::new();
    for (d, draw) in draws.iter().enumerate() {
        let curve = per_step_rmse(draw, gt, align)?;
        if d == 0 {
            sum = curve;
        } else if curve.len() != sum.len() {
            return Err(Error::Shape(format!("draw {d} has {} steps, not {}", curve.len(), sum.len())));
        } else {
            sum.iter_mut().zip(&curve).for_each(|(a, b)| *a += b);
        }
    }
    let n = draws.len() as f64;
    let per_step = sum.into_iter().map(|x| x / n).collect();
    Ok(MetricReport::from_per_step(per_step, s_values, draws.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Whether each step was superposed on Cα before the RMSE.
    pub aligned: bool,
    pub s_values: Vec<usize>,
    pub tica_lag: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TicaSummary {
    pub eigenvalues: Vec<f64>,
    pub reference: Vec<[f64; 2]>,
    pub predicted: Vec<[f64; 2]>,
    /// Density of the reference projection on a square grid, row-major.
    pub reference_histogram: Vec<Vec<f64>>,
    pub predicted_histogram: Vec<Vec<f64>>,
    pub bounds: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub settings: EvalSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tica: Option<TicaSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// `kind,key,value` rows: one per step, then one per horizon.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,key,value\n");
        for (k, v) in self.metrics.per_step.iter().enumerate() {
            writeln!(out, "per_step,{},{v}", k + 1).expect("string write");
        }
        for (s, v) in &self.metrics.r_table {
            writeln!(out, "r_table,R_{s},{v}").expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::testutil::{jittered, peptide};

    fn traj(seed: u64, len: usize) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = peptide("ACDEFGHIK", &mut rng);
        let states = (0..len).map(|_| jittered(&base, 0.1, 0.8, &mut rng)).collect();
        Trajectory::new(states, 1.0).unwrap()
    }

    #[test]
    fn perfect_draws_give_zero_table() {
        let gt = traj(1, 32);
        let rep = r_table(&[gt.clone(), gt.clone()], &gt, &DEFAULT_S_VALUES, true).unwrap();
        assert_eq!(rep.r_table.len(), 5);
        assert!(rep.r_table.iter().all(|e| e.1 < 1e-9));
        assert_eq!(rep.n_samples, 2);
    }

    #[test]
    fn constant_curve_gives_constant_table() {
        let rep = MetricReport::from_per_step(vec![0.7; 32], &DEFAULT_S_VALUES, 1);
        assert!(rep.r_table.iter().all(|e| (e.1 - 0.7).abs() < 1e-15));
    }

    #[test]
    fn short_trajectories_truncate_the_table() {
        let gt = traj(2, 8);
        let rep = r_table(&[traj(3, 8)], &gt, &DEFAULT_S_VALUES, true).unwrap();
        assert!(rep.truncated);
        assert_eq!(rep.r_table.iter().map(|e| e.0).collect::<Vec<_>>(), vec![2, 6]);
    }

    #[test]
    fn draws_are_averaged_per_step() {
        let gt = traj(4, 6);
        let (a, b) = (traj(5, 6), traj(6, 6));
        let rep = r_table(&[a.clone(), b.clone()], &gt, &[2, 6], false).unwrap();
        let ca = per_step_rmse(&a, &gt, false).unwrap();
        let cb = per_step_rmse(&b, &gt, false).unwrap();
        for k in 0..6 {
            assert!((rep.per_step[k] - 0.5 * (ca[k] + cb[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn published_row_parses_and_renders() {
        let row = "1.27\t1.54\t1.67\t1.89\t2.12";
        let rep = MetricReport::parse_row(row, &DEFAULT_S_VALUES).unwrap();
        assert_eq!(rep.table_row(), row);
        assert_eq!(rep.table_header(), "R_2\tR_6\tR_10\tR_16\tR_32");
        assert_eq!(rep.r(32), Some(2.12));
        assert!(MetricReport::parse_row("1.0, 2.0", &DEFAULT_S_VALUES).is_err());
    }

    #[test]
    fn report_json_round_trips() {
        let rep = EvalReport {
            metrics: MetricReport::from_per_step(vec![0.5, 1.0, 1.5], &[2, 6], 3),
            settings: EvalSettings {
                aligned: true,
                s_values: vec![2, 6],
                tica_lag: None,
            },
            tica: None,
        };
        let text = rep.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["r_table"]["R_2"], 0.75);
        assert!(v["per_step"].is_array() && v["settings"]["aligned"] == true);
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
        assert!(rep.to_csv().contains("r_table,R_2,0.75"));
    }

    proptest! {
        #[test]
        fn table_is_prefix_mean(curve in prop::collection::vec(0.0f64..10.0, 1..40)) {
            let rep = MetricReport::from_per_step(curve.clone(), &DEFAULT_S_VALUES, 1);
            for (s, v) in &rep.r_table {
                let mean = curve[..*s].iter().sum::<f64>() / *s as f64;
                prop_assert!((v - mean).abs() < 1e-12);
                let max = curve[..*s].iter().cloned().fold(0.0, f64::max);
                prop_assert!(*v <= max + 1e-12);
            }
        }
    }
}

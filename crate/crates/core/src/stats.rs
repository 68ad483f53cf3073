//! Summary statistics over per-segment Kα series and the t-tests used to
//! compare segment sizes with each other and with the unsegmented baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::AntigenType;
use crate::special::student_t_cdf;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("series contains a non-finite value")]
    NonFinite,
    #[error("baseline has no Kα for antigen type '{0}'")]
    MissingBaseline(String),
    #[error("no test direction given for antigen type '{0}'")]
    MissingDirection(String),
    #[error("unknown direction '{0}' (expected greater or less)")]
    UnknownDirection(String),
}

fn check(series: &[f64], needed: usize) -> Result<(), StatsError> {
    if series.len() < needed {
        return Err(StatsError::InsufficientData {
            needed,
            got: series.len(),
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator); requires `xs.len() >= 2`.
fn sample_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stdev: f64,
    pub n_segments: usize,
}

pub fn summarize(series: &[f64]) -> Result<Summary, StatsError> {
    check(series, 1)?;
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(Summary {
            min,
            mean: min,
            max,
            stdev: 0.0,
            n_segments: series.len(),
        });
    }
    let m = mean(series);
    let stdev = if series.len() > 1 {
        sample_variance(series, m).sqrt()
    } else {
        0.0
    };
    // rounding can push the mean a hair outside a constant series' range
    Ok(Summary {
        min,
        mean: m.clamp(min, max),
        max,
        stdev,
        n_segments: series.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub antigen_type: AntigenType,
    pub segment_size: u64,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TwoSampleTwoSided,
    OneSampleOneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Greater,
    Less,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Greater => "greater",
            Direction::Less => "less",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greater" => Ok(Direction::Greater),
            "less" => Ok(Direction::Less),
            other => Err(StatsError::UnknownDirection(other.to_string())),
        }
    }
}

/// Variance assumption of the two-sample test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceModel {
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance, `n_a + n_b - 2` degrees of freedom.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl TTestResult {
    fn new(kind: TestKind, statistic: f64, df: f64, p: f64, alpha: f64, direction: Option<Direction>) -> Self {
        let p_value = p.clamp(0.0, 1.0);
        TTestResult {
            kind,
            statistic,
            degrees_of_freedom: df,
            p_value,
            alpha,
            significant: p_value < alpha,
            direction,
        }
    }
}

/// Two-sided test of equal means for two independent samples.
///
/// When both samples have zero variance the statistic is 0 with p = 1 if the
/// means agree, and ±∞ with p = 0 otherwise.
pub fn two_sample_two_sided(a: &[f64], b: &[f64], alpha: f64, model: VarianceModel) -> Result<TTestResult, StatsError> {
    check(a, 2)?;
    check(b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (var_a, var_b) = (sample_variance(a, ma), sample_variance(b, mb));

    let (se, df) = match model {
        VarianceModel::Welch => {
            let (va, vb) = (var_a / na, var_b / nb);
            let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
            ((va + vb).sqrt(), df)
        }
        VarianceModel::Pooled => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * var_a + (nb - 1.0) * var_b) / df;
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
    };
    let kind = TestKind::TwoSampleTwoSided;
    if se == 0.0 {
        let df = na + nb - 2.0;
        if ma == mb {
            return Ok(TTestResult::new(kind, 0.0, df, 1.0, alpha, None));
        }
        let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(TTestResult::new(kind, t, df, 0.0, alpha, None));
    }
    let t = (ma - mb) / se;
    let p = 2.0 * student_t_cdf(-t.abs(), df);
    Ok(TTestResult::new(kind, t, df, p, alpha, None))
}

pub fn welch_two_sided(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult, StatsError> {
    two_sample_two_sided(a, b, alpha, VarianceModel::Welch)
}

/// One-sided test of the sample mean against a known `true_mean`.
/// `Greater` tests whether the sample mean exceeds it.
pub fn one_sample_one_sided(
    x: &[f64],
    true_mean: f64,
    direction: Direction,
    alpha: f64,
) -> Result<TTestResult, StatsError> {
    check(x, 2)?;
    let n = x.len() as f64;
    let m = mean(x);
    let se = (sample_variance(x, m) / n).sqrt();
    let df = n - 1.0;
    let t = if se == 0.0 {
        if m == true_mean {
            0.0
        } else if m > true_mean {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (m - true_mean) / se
    };
    let p = match direction {
        Direction::Greater => student_t_cdf(-t, df),
        Direction::Less => student_t_cdf(t, df),
    };
    Ok(TTestResult::new(
        TestKind::OneSampleOneSided,
        t,
        df,
        p,
        alpha,
        Some(direction),
    ))
}

/// Per-type Kα series of one segmented run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub label: String,
    pub series: BTreeMap<AntigenType, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestPlan {
    pub alpha: f64,
    pub variance: VarianceModel,
    /// One-sided direction per type for the baseline comparison.
    pub directions: BTreeMap<AntigenType, Direction>,
    /// Types to test; `None` means every type seen in any run.
    pub types: Option<Vec<AntigenType>>,
}

impl Default for TestPlan {
    fn default() -> Self {
        TestPlan {
            alpha: DEFAULT_ALPHA,
            variance: VarianceModel::Welch,
            directions: BTreeMap::new(),
            types: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseCell {
    pub antigen_type: AntigenType,
    pub left: String,
    pub right: String,
    /// `None` when either side has fewer than two values.
    pub result: Option<TTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub antigen_type: AntigenType,
    pub run: String,
    pub true_mean: f64,
    pub result: Option<TTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonGrid {
    pub alpha: f64,
    pub runs: Vec<String>,
    pub types: Vec<AntigenType>,
    pub baseline: BTreeMap<AntigenType, f64>,
    pub pairwise: Vec<PairwiseCell>,
    pub versus_baseline: Vec<BaselineCell>,
}

fn optional(r: Result<TTestResult, StatsError>) -> Result<Option<TTestResult>, StatsError> {
    match r {
        Ok(t) => Ok(Some(t)),
        Err(StatsError::InsufficientData { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Every pair of runs per type (upper triangle, in run order) plus each run
/// against the baseline Kα.
pub fn compare_runs(
    runs: &[RunSeries],
    baseline: &BTreeMap<AntigenType, f64>,
    plan: &TestPlan,
) -> Result<ComparisonGrid, StatsError> {
    let types: Vec<AntigenType> = match &plan.types {
        Some(t) => t.clone(),
        None => {
            let mut all: Vec<AntigenType> = runs.iter().flat_map(|r| r.series.keys().cloned()).collect();
            all.sort();
            all.dedup();
            all
        }
    };
    let empty: Vec<f64> = Vec::new();
    let mut grid = ComparisonGrid {
        alpha: plan.alpha,
        runs: runs.iter().map(|r| r.label.clone()).collect(),
        types: types.clone(),
        baseline: BTreeMap::new(),
        pairwise: Vec::new(),
        versus_baseline: Vec::new(),
    };
    for t in &types {
        let mu0 = *baseline
            .get(t)
            .ok_or_else(|| StatsError::MissingBaseline(t.to_string()))?;
        let direction = *plan
            .directions
            .get(t)
            .ok_or_else(|| StatsError::MissingDirection(t.to_string()))?;
        grid.baseline.insert(t.clone(), mu0);
        let series = |r: &RunSeries| r.series.get(t).unwrap_or(&empty).clone();

        for (i, left) in runs.iter().enumerate() {
            for right in &runs[i + 1..] {
                let result = optional(two_sample_two_sided(
                    &series(left),
                    &series(right),
                    plan.alpha,
                    plan.variance,
                ))?;
                grid.pairwise.push(PairwiseCell {
                    antigen_type: t.clone(),
                    left: left.label.clone(),
                    right: right.label.clone(),
                    result,
                });
            }
        }
        for run in runs {
            let result = optional(one_sample_one_sided(&series(run), mu0, direction, plan.alpha))?;
            grid.versus_baseline.push(BaselineCell {
                antigen_type: t.clone(),
                run: run.label.clone(),
                true_mean: mu0,
                result,
            });
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn summary_cases() {
        let s = summarize(&[-2.0, 0.0, 2.0]).unwrap();
        assert_eq!((s.min, s.mean, s.max, s.stdev, s.n_segments), (-2.0, 0.0, 2.0, 2.0, 3));

        let s = summarize(&[5.0]).unwrap();
        assert_eq!((s.min, s.mean, s.max, s.stdev, s.n_segments), (5.0, 5.0, 5.0, 0.0, 1));

        let s = summarize(&[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(s.stdev, 0.0);
        assert!(s.min <= s.mean && s.mean <= s.max);

        assert_eq!(
            summarize(&[]).unwrap_err(),
            StatsError::InsufficientData { needed: 1, got: 0 }
        );
    }

    #[test]
    fn welch_conventions() {
        let r = welch_two_sided(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.05).unwrap();
        assert_eq!((r.statistic, r.p_value, r.significant), (0.0, 1.0, false));

        let r = welch_two_sided(&[0.0; 3], &[0.0; 3], 0.05).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));

        let r = welch_two_sided(&[1.0; 3], &[2.0; 3], 0.05).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.significant);

        assert!(matches!(
            welch_two_sided(&[1.0], &[1.0, 2.0], 0.05),
            Err(StatsError::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn welch_matches_reference() {
        // scipy.stats.ttest_ind(..., equal_var=False)
        let r = welch_two_sided(&[1.0, 2.0, 3.0, 4.0], &[10.0, 11.0, 12.0, 13.0], 0.05).unwrap();
        assert!((r.statistic - -9.85900603509299).abs() < 1e-12);
        assert!((r.degrees_of_freedom - 6.0).abs() < 1e-12);
        assert!((r.p_value - 6.280125725146634e-05).abs() < 1e-12);
        assert!(r.significant);

        let a = [1.5, 2.0, 9.1, 4.4, 3.3];
        let b = [2.2, 7.7, 1.1];
        let r = welch_two_sided(&a, &b, 0.05).unwrap();
        assert!((r.statistic - 0.16041228386331968).abs() < 1e-12);
        assert!((r.degrees_of_freedom - 3.790830240051777).abs() < 1e-10);
        assert!((r.p_value - 0.8807382079747256).abs() < 1e-10);

        // equal_var=True
        let r = two_sample_two_sided(&a, &b, 0.05, VarianceModel::Pooled).unwrap();
        assert!((r.statistic - 0.16768583072300083).abs() < 1e-12);
        assert!((r.p_value - 0.8723396563490375).abs() < 1e-10);
    }

    #[test]
    fn one_sample_cases() {
        let x = [2.1, 2.5, 2.3, 2.2];
        let g = one_sample_one_sided(&x, 2.0, Direction::Greater, 0.05).unwrap();
        // scipy.stats.ttest_1samp(..., alternative='greater')
        assert!((g.statistic - 3.2204702407301595).abs() < 1e-12);
        assert!((g.p_value - 0.024283428279900505).abs() < 1e-12);
        assert!(g.significant);
        let l = one_sample_one_sided(&x, 2.0, Direction::Less, 0.05).unwrap();
        assert!(l.p_value > 0.5);
        assert!((l.p_value - 0.9757165717200995).abs() < 1e-12);

        let c = one_sample_one_sided(&[1.0, 3.0], 2.0, Direction::Greater, 0.05).unwrap();
        assert_eq!((c.statistic, c.p_value), (0.0, 0.5));
        let z = one_sample_one_sided(&[2.0, 2.0], 2.0, Direction::Less, 0.05).unwrap();
        assert_eq!((z.statistic, z.p_value), (0.0, 0.5));
    }

    fn runs_fixture() -> Vec<RunSeries> {
        let mk = |label: &str, a: &[f64]| RunSeries {
            label: label.into(),
            series: [(AntigenType::new("x"), a.to_vec())].into_iter().collect(),
        };
        vec![
            mk("100", &[1.0, 2.0, 3.0]),
            mk("1000", &[1.5, 2.5]),
            mk("10000", &[2.0, 2.2, 2.4]),
            mk("100000", &[3.0, 1.0]),
            mk("1000000", &[4.0]),
        ]
    }

    #[test]
    fn compare_grid_shape() {
        let runs = runs_fixture();
        let baseline: BTreeMap<_, _> = [(AntigenType::new("x"), 2.0)].into_iter().collect();
        let plan = TestPlan {
            directions: [(AntigenType::new("x"), Direction::Greater)].into_iter().collect(),
            ..Default::default()
        };
        let grid = compare_runs(&runs, &baseline, &plan).unwrap();
        assert_eq!(grid.pairwise.len(), 10);
        assert_eq!(grid.versus_baseline.len(), 5);
        // the single-value run cannot be tested
        assert!(grid
            .pairwise
            .iter()
            .filter(|c| c.right == "1000000")
            .all(|c| c.result.is_none()));
        assert!(grid.versus_baseline[4].result.is_none());

        let single = compare_runs(&runs[..1], &baseline, &plan).unwrap();
        assert!(single.pairwise.is_empty());
        assert_eq!(single.versus_baseline.len(), 1);
    }

    #[test]
    fn compare_requires_baseline_and_direction() {
        let runs = runs_fixture();
        let plan = TestPlan {
            directions: [(AntigenType::new("x"), Direction::Less)].into_iter().collect(),
            ..Default::default()
        };
        assert_eq!(
            compare_runs(&runs, &BTreeMap::new(), &plan).unwrap_err(),
            StatsError::MissingBaseline("x".into())
        );
        let baseline: BTreeMap<_, _> = [(AntigenType::new("x"), 2.0)].into_iter().collect();
        assert_eq!(
            compare_runs(&runs, &baseline, &TestPlan::default()).unwrap_err(),
            StatsError::MissingDirection("x".into())
        );
    }

    proptest! {
        #[test]
        fn welch_swap_symmetry(a in prop::collection::vec(-1e3..1e3f64, 2..20),
                               b in prop::collection::vec(-1e3..1e3f64, 2..20)) {
            let ab = welch_two_sided(&a, &b, 0.05).unwrap();
            let ba = welch_two_sided(&b, &a, 0.05).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
            prop_assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
            prop_assert!((ab.statistic + ba.statistic).abs() <= 1e-12 * (1.0 + ab.statistic.abs()));
        }

        #[test]
        fn one_sided_tails_complement(x in prop::collection::vec(-1e3..1e3f64, 2..20), mu in -1e3..1e3f64) {
            let g = one_sample_one_sided(&x, mu, Direction::Greater, 0.05).unwrap();
            let l = one_sample_one_sided(&x, mu, Direction::Less, 0.05).unwrap();
            prop_assert!((g.p_value + l.p_value - 1.0).abs() <= 1e-9);
            prop_assert!((0.0..=1.0).contains(&g.p_value));
        }

        #[test]
        fn summary_ordering(x in prop::collection::vec(-1e4..1e4f64, 1..40)) {
            let s = summarize(&x).unwrap();
            prop_assert!(s.min <= s.mean && s.mean <= s.max);
            prop_assert!(s.stdev >= 0.0);
        }
    }
}

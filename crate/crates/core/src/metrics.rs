//! Outage statistics: outage probability against receive sensitivity,
//! continuous-outage-duration (COD) exceedance, and pooling across pairs
//! and subjects.
//!
//! A slot is in outage when its gain is strictly below the receive
//! sensitivity. Pooled quantities are accumulated as integer slot counts so
//! results do not depend on the order in which pairs are visited.

use serde::Serialize;

use crate::diversity::{candidate_pairs, BranchSet, CombinedSeries, Policy};
use crate::error::{Error, Result};
use crate::trace::{DenseTraceSet, LinkClass, Node};

pub const BEST_CASE_SENSITIVITY_DB: f64 = -100.0;
pub const DEFAULT_LATENCY_S: f64 = 0.125;

/// Strictly increasing list of receive sensitivities (dB).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivitySweep(Vec<f64>);

impl SensitivitySweep {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(
                "sensitivity sweep contains a non-finite value".into(),
            ));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sensitivity sweep must be strictly increasing".into(),
            ));
        }
        Ok(SensitivitySweep(points))
    }

    /// `start..=stop` in `step` increments.
    pub fn range(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite())
            || step <= 0.0
            || stop < start
        {
            return Err(Error::Config(format!(
                "invalid sweep {start}..{stop} step {step}"
            )));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Self::new((0..=n).map(|i| start + i as f64 * step).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }
}

impl Default for SensitivitySweep {
    /// -100 dB to -60 dB in 1 dB steps.
    fn default() -> Self {
        SensitivitySweep((0..=40).map(|i| -100.0 + f64::from(i)).collect())
    }
}

/// Strictly increasing, non-negative COD duration thresholds (seconds).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationThresholds(Vec<f64>);

impl DurationThresholds {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(
                "duration thresholds must be finite and non-negative".into(),
            ));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "duration thresholds must be strictly increasing".into(),
            ));
        }
        Ok(DurationThresholds(points))
    }

    /// `per_decade` log-spaced points from `start` to `stop` inclusive.
    pub fn log_spaced(start: f64, stop: f64, per_decade: usize) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite())
            || start <= 0.0
            || stop <= start
            || per_decade == 0
        {
            return Err(Error::Config(format!(
                "invalid log spacing {start}..{stop}"
            )));
        }
        let (lo, hi) = (start.log10(), stop.log10());
        let n = ((hi - lo) * per_decade as f64).ceil() as usize;
        let pts = (0..=n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / n as f64))
            .collect();
        Self::new(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }
}

impl Default for DurationThresholds {
    /// 15 ms to 1000 s, ten points per decade.
    fn default() -> Self {
        Self::log_spaced(0.015, 1000.0, 10).expect("static range")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutageCurve {
    pub label: String,
    /// (sensitivity dB, outage probability)
    pub points: Vec<(f64, f64)>,
}

impl OutageCurve {
    pub fn at(&self, sensitivity_db: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.0 == sensitivity_db)
            .map(|p| p.1)
    }

    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
    }

    /// Sensitivity at which the piecewise-linear curve first reaches `p`.
    pub fn sensitivity_at(&self, p: f64) -> Result<f64> {
        let not_crossed = || Error::NotCrossed {
            label: self.label.clone(),
            p,
        };
        let first = self.points.first().ok_or_else(not_crossed)?;
        if p < first.1 {
            return Err(not_crossed());
        }
        if p == first.1 {
            return Ok(first.0);
        }
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if y0 < p && p <= y1 {
                return Ok(x0 + (p - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        Err(not_crossed())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationCurve {
    pub label: String,
    pub sensitivity_db: f64,
    /// (duration threshold s, fraction of total time)
    pub points: Vec<(f64, f64)>,
}

impl DurationCurve {
    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 >= w[1].1)
    }
}

/// A maximal run of consecutive outage slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutageRun {
    pub start_slot: usize,
    pub length_slots: usize,
    pub delta_ms: u32,
}

impl OutageRun {
    pub fn duration_ms(&self) -> u64 {
        self.length_slots as u64 * u64::from(self.delta_ms)
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ms() as f64 / 1000.0
    }
}

pub fn outage_indicator(series: &[f64], sensitivity_db: f64) -> Vec<bool> {
    series.iter().map(|&g| g < sensitivity_db).collect()
}

pub fn outage_count(series: &[f64], sensitivity_db: f64) -> usize {
    series.iter().filter(|&&g| g < sensitivity_db).count()
}

pub fn outage_probability(series: &[f64], sensitivity_db: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Undefined("outage probability of an empty series"));
    }
    Ok(outage_count(series, sensitivity_db) as f64 / series.len() as f64)
}

pub fn outage_curve(
    series: &[f64],
    sweep: &SensitivitySweep,
    label: impl Into<String>,
) -> Result<OutageCurve> {
    pooled_outage_curve(&[series], sweep, label)
}

/// Outage curve over several series, weighted by their lengths.
pub fn pooled_outage_curve(
    series: &[&[f64]],
    sweep: &SensitivitySweep,
    label: impl Into<String>,
) -> Result<OutageCurve> {
    let total: usize = series.iter().map(|s| s.len()).sum();
    if total == 0 && !sweep.points().is_empty() {
        return Err(Error::Undefined("outage curve of empty series"));
    }
    let sorted: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let mut v = s.to_vec();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let points = sweep
        .points()
        .iter()
        .map(|&s| {
            let count: usize = sorted.iter().map(|v| v.partition_point(|&g| g < s)).sum();
            (s, count as f64 / total as f64)
        })
        .collect();
    Ok(OutageCurve {
        label: label.into(),
        points,
    })
}

/// `s_a(p) - s_b(p)`, where `s(p)` is the sensitivity at which a curve reaches `p`.
/// Positive when `a` reaches `p` at a higher sensitivity than `b`, i.e. `a` has less
/// outage there and tolerates a less sensitive receiver.
pub fn gain_improvement_at(a: &OutageCurve, b: &OutageCurve, p: f64) -> Result<f64> {
    Ok(a.sensitivity_at(p)? - b.sensitivity_at(p)?)
}

/// Maximal runs of `true`. Runs at the trace edges keep their observed length.
pub fn outage_runs(indicator: &[bool], delta_ms: u32) -> Vec<OutageRun> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &out) in indicator.iter().enumerate() {
        match (out, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(OutageRun {
                    start_slot: s,
                    length_slots: i - s,
                    delta_ms,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(OutageRun {
            start_slot: s,
            length_slots: indicator.len() - s,
            delta_ms,
        });
    }
    runs
}

fn cod_fraction(runs: &[OutageRun], total_ms: u64, threshold_s: f64) -> f64 {
    let long_ms: u64 = runs
        .iter()
        .filter(|r| r.duration_s() > threshold_s)
        .map(OutageRun::duration_ms)
        .sum();
    long_ms as f64 / total_ms as f64
}

/// Fraction of total time spent in outage runs longer than each threshold.
pub fn cod_curve(
    runs: &[OutageRun],
    total_ms: u64,
    thresholds: &DurationThresholds,
    sensitivity_db: f64,
    label: impl Into<String>,
) -> Result<DurationCurve> {
    if total_ms == 0 {
        return Err(Error::Config("COD needs a positive total time".into()));
    }
    let points = thresholds
        .points()
        .iter()
        .map(|&x| (x, cod_fraction(runs, total_ms, x)))
        .collect();
    Ok(DurationCurve {
        label: label.into(),
        sensitivity_db,
        points,
    })
}

/// COD exceedance at a single latency bound.
pub fn latency_exceedance(runs: &[OutageRun], total_ms: u64, latency_s: f64) -> Result<f64> {
    let thresholds = DurationThresholds::new(vec![latency_s])?;
    Ok(cod_curve(runs, total_ms, &thresholds, f64::NAN, "")?.points[0].1)
}

/// Outage probability at the lowest physically meaningful sensitivity.
pub fn best_case_op(curve: &OutageCurve) -> Result<f64> {
    curve.at(BEST_CASE_SENSITIVITY_DB).ok_or_else(|| {
        Error::Config(format!(
            "curve '{}' has no point at {BEST_CASE_SENSITIVITY_DB} dB",
            curve.label
        ))
    })
}

/// Outage statistics pooled over several combined series at one
/// sensitivity. Runs never span series boundaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutagePool {
    pub sensitivity_db: f64,
    pub outage_slots: u64,
    pub total_slots: u64,
    pub total_ms: u64,
    pub runs: Vec<OutageRun>,
}

impl OutagePool {
    pub fn from_series<'a>(
        series: impl IntoIterator<Item = &'a CombinedSeries>,
        sensitivity_db: f64,
    ) -> Self {
        let mut pool = OutagePool {
            sensitivity_db,
            outage_slots: 0,
            total_slots: 0,
            total_ms: 0,
            runs: Vec::new(),
        };
        for s in series {
            let ind = outage_indicator(&s.gains, sensitivity_db);
            pool.outage_slots += ind.iter().filter(|&&b| b).count() as u64;
            pool.total_slots += s.len() as u64;
            pool.total_ms += s.len() as u64 * u64::from(s.delta_ms);
            pool.runs.extend(outage_runs(&ind, s.delta_ms));
        }
        pool
    }

    pub fn outage_probability(&self) -> Result<f64> {
        if self.total_slots == 0 {
            return Err(Error::Undefined("outage probability of an empty pool"));
        }
        Ok(self.outage_slots as f64 / self.total_slots as f64)
    }

    pub fn cod_curve(
        &self,
        thresholds: &DurationThresholds,
        label: impl Into<String>,
    ) -> Result<DurationCurve> {
        cod_curve(
            &self.runs,
            self.total_ms,
            thresholds,
            self.sensitivity_db,
            label,
        )
    }

    pub fn cod_exceedance(&self, threshold_s: f64) -> Result<f64> {
        latency_exceedance(&self.runs, self.total_ms, threshold_s)
    }
}

/// One analysed (subject, source, destination) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSeries {
    pub subject: String,
    pub source: Node,
    pub dest: Node,
    pub combined: CombinedSeries,
}

impl PairSeries {
    pub fn class(&self) -> LinkClass {
        LinkClass::of(self.source, self.dest)
    }
}

/// Combines every resolvable pair of `class` in every trace set under
/// `policy`. Pairs whose hops were not measured are skipped.
pub fn combine_class(
    policy: Policy,
    class: LinkClass,
    sets: &[DenseTraceSet],
    threshold_db: f64,
) -> Result<Vec<PairSeries>> {
    let mut out = Vec::new();
    for set in sets {
        for (source, dest) in candidate_pairs(Some(class)) {
            match BranchSet::build(set, source, dest) {
                Ok(b) => out.push(PairSeries {
                    subject: set.subject().to_string(),
                    source,
                    dest,
                    combined: b.combine(policy, threshold_db),
                }),
                Err(Error::MissingLink { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    if out.is_empty() {
        let valid = candidate_pairs(Some(class))
            .into_iter()
            .map(|(s, d)| format!("{s}:{d}"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::EmptySelection { valid });
    }
    Ok(out)
}

/// Agglomerate statistics for one policy and link class at one sensitivity.
pub fn aggregate(
    policy: Policy,
    class: LinkClass,
    sets: &[DenseTraceSet],
    sensitivity_db: f64,
    threshold_db: f64,
) -> Result<OutagePool> {
    let pairs = combine_class(policy, class, sets, threshold_db)?;
    Ok(OutagePool::from_series(
        pairs.iter().map(|p| &p.combined),
        sensitivity_db,
    ))
}

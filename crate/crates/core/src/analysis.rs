//! Report assembly: runs the selected policies over the selected pairs,
//! pools the results per link class, and writes curves and a summary.
//!
//! Output numbers are rounded before serialization (probabilities to four
//! significant digits, dB values to two decimals) so identical inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diversity::{
    candidate_pairs, relays_for, BranchSet, Policy, DEFAULT_SWITCH_THRESHOLD_DB,
};
use crate::error::{Error, Result};
use crate::metrics::{
    best_case_op, gain_improvement_at, pooled_outage_curve, DurationCurve, DurationThresholds,
    OutageCurve, OutagePool, PairSeries, SensitivitySweep, BEST_CASE_SENSITIVITY_DB,
};
use crate::trace::{DenseTraceSet, LinkClass, Node, DEFAULT_DELTA_MS, DEFAULT_FLOOR_DB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub policies: Vec<Policy>,
    pub swc_threshold_db: f64,
    pub sweep_start_db: f64,
    pub sweep_stop_db: f64,
    pub sweep_step_db: f64,
    /// Sensitivities at which COD curves are emitted.
    pub cod_sensitivities_db: Vec<f64>,
    /// COD duration thresholds; log-spaced 15 ms..1000 s when empty.
    pub cod_thresholds_s: Vec<f64>,
    /// Sensitivity for the summary's COD and OP fields.
    pub summary_sensitivity_db: f64,
    pub long_outage_s: f64,
    pub latency_s: f64,
    pub improvement_probability: f64,
    pub floor_db: f64,
    pub delta_ms: u32,
    /// Explicit `source:dest` pairs. Empty selects every pair of `classes`.
    pub pairs: Vec<String>,
    pub classes: Vec<LinkClass>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            policies: Policy::ALL.to_vec(),
            swc_threshold_db: DEFAULT_SWITCH_THRESHOLD_DB,
            sweep_start_db: -100.0,
            sweep_stop_db: -60.0,
            sweep_step_db: 1.0,
            cod_sensitivities_db: vec![-86.0],
            cod_thresholds_s: Vec::new(),
            summary_sensitivity_db: -86.0,
            long_outage_s: 10.0,
            latency_s: 0.125,
            improvement_probability: 0.10,
            floor_db: DEFAULT_FLOOR_DB,
            delta_ms: DEFAULT_DELTA_MS,
            pairs: Vec::new(),
            classes: LinkClass::ALL.to_vec(),
        }
    }
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sweep(&self) -> Result<SensitivitySweep> {
        SensitivitySweep::range(self.sweep_start_db, self.sweep_stop_db, self.sweep_step_db)
    }

    pub fn thresholds(&self) -> Result<DurationThresholds> {
        if self.cod_thresholds_s.is_empty() {
            Ok(DurationThresholds::default())
        } else {
            DurationThresholds::new(self.cod_thresholds_s.clone())
        }
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        if !self.swc_threshold_db.is_finite() {
            return Err(Error::Config("switching threshold must be finite".into()));
        }
        let sweep = self.sweep()?;
        if !sweep.points().contains(&BEST_CASE_SENSITIVITY_DB) {
            return Err(Error::Config(format!(
                "sensitivity sweep must include {BEST_CASE_SENSITIVITY_DB} dB for the best-case outage probability"
            )));
        }
        self.thresholds()?;
        if self.pairs.is_empty() && self.classes.is_empty() {
            return Err(Error::Config(
                "no pairs and no link classes selected".into(),
            ));
        }
        self.explicit_pairs()?;
        if !(self.improvement_probability > 0.0 && self.improvement_probability < 1.0) {
            return Err(Error::Config(
                "improvement probability must lie in (0, 1)".into(),
            ));
        }
        if self.delta_ms == 0 {
            return Err(Error::Config("delta_ms must be positive".into()));
        }
        Ok(())
    }

    fn explicit_pairs(&self) -> Result<Vec<(Node, Node)>> {
        self.pairs.iter().map(|p| parse_pair(p)).collect()
    }
}

/// Parses `source:dest` and checks it supports three branches.
pub fn parse_pair(text: &str) -> Result<(Node, Node)> {
    let (s, d) = text.split_once(':').ok_or_else(|| {
        Error::Config(format!("pair '{text}' is not of the form <source>:<dest>"))
    })?;
    let s: Node = s
        .trim()
        .parse()
        .map_err(|e: crate::trace::UnknownNode| Error::Config(e.to_string()))?;
    let d: Node = d
        .trim()
        .parse()
        .map_err(|e: crate::trace::UnknownNode| Error::Config(e.to_string()))?;
    let (r1, r2) = relays_for(s)?;
    if d == s {
        return Err(Error::Config(format!(
            "pair '{text}' has identical endpoints"
        )));
    }
    if d == r1 || d == r2 {
        return Err(Error::RelayIsDestination { src: s, dest: d });
    }
    Ok((s, d))
}

/// Pairs selected by the config, in deterministic order.
fn selected_pairs(config: &AnalysisConfig) -> Result<Vec<(Node, Node)>> {
    if config.pairs.is_empty() {
        Ok(candidate_pairs(None)
            .into_iter()
            .filter(|&(s, d)| config.classes.contains(&LinkClass::of(s, d)))
            .collect())
    } else {
        config.explicit_pairs()
    }
}

/// Builds every selected pair in every subject. Pairs with unmeasured hops
/// in a subject are skipped for that subject.
fn build_selected(
    config: &AnalysisConfig,
    sets: &[DenseTraceSet],
) -> Result<Vec<(String, BranchSet)>> {
    let pairs = selected_pairs(config)?;
    let mut out = Vec::new();
    for set in sets {
        for &(s, d) in &pairs {
            match BranchSet::build(set, s, d) {
                Ok(b) => out.push((set.subject().to_string(), b)),
                Err(Error::MissingLink { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if out.is_empty() {
        let valid: Vec<String> = candidate_pairs(None)
            .into_iter()
            .filter(|&(s, d)| sets.iter().any(|set| BranchSet::build(set, s, d).is_ok()))
            .map(|(s, d)| format!("{s}:{d}"))
            .collect();
        let valid = if valid.is_empty() {
            "none (inputs lack the needed links)".into()
        } else {
            valid.join(", ")
        };
        return Err(Error::EmptySelection { valid });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub pairs: usize,
    pub total_time_s: f64,
    pub best_case_op: f64,
    pub outage_probability: f64,
    pub cod_gt_long: f64,
    pub cod_gt_latency: f64,
    pub switching_rate_hz: Option<f64>,
    /// Sensitivity margin over the direct link at the configured outage
    /// probability; absent for DL itself or when a curve never crosses it.
    pub improvement_db: Option<f64>,
}

pub type ClassTable = BTreeMap<LinkClass, BTreeMap<Policy, PolicySummary>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config: AnalysisConfig,
    pub subjects: Vec<String>,
    pub pooled: ClassTable,
    pub per_subject: BTreeMap<String, ClassTable>,
}

/// Everything `analyze` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub outage_curves: Vec<OutageCurve>,
    pub cod_curves: Vec<DurationCurve>,
    pub pairs: Vec<PairSeries>,
}

fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn round_dec(x: f64, decimals: usize) -> f64 {
    format!("{x:.decimals$}").parse().unwrap_or(x)
}

/// Four significant digits, positional notation.
pub fn format_prob(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{:.*}", decimals, round_sig(x, 4))
}

fn label(policy: Policy, class: LinkClass) -> String {
    format!("{policy}_{class}")
}

fn summarize(
    config: &AnalysisConfig,
    members: &[&PairSeries],
    sweep: &SensitivitySweep,
    direct_curve: Option<&OutageCurve>,
    curve: &OutageCurve,
) -> Result<PolicySummary> {
    let pool = OutagePool::from_series(
        members.iter().map(|p| &p.combined),
        config.summary_sensitivity_db,
    );
    let policy = members[0].combined.policy;
    let (switches, span_ms) = members.iter().fold((0u64, 0u64), |(sw, ms), p| {
        let c = &p.combined;
        (
            sw + c.switch_count() as u64,
            ms + c.len().saturating_sub(1) as u64 * u64::from(c.delta_ms),
        )
    });
    let switching_rate_hz = (policy != Policy::Direct && span_ms > 0)
        .then(|| round_sig(switches as f64 / (span_ms as f64 / 1000.0), 4));
    let improvement_db = match (policy, direct_curve) {
        (Policy::Direct, _) | (_, None) => None,
        (_, Some(dl)) => gain_improvement_at(curve, dl, config.improvement_probability)
            .ok()
            .map(|v| round_dec(v, 2)),
    };
    debug_assert_eq!(curve.points.len(), sweep.points().len());
    Ok(PolicySummary {
        pairs: members.len(),
        total_time_s: round_dec(pool.total_ms as f64 / 1000.0, 3),
        best_case_op: round_sig(best_case_op(curve)?, 4),
        outage_probability: round_sig(pool.outage_probability()?, 4),
        cod_gt_long: round_sig(pool.cod_exceedance(config.long_outage_s)?, 4),
        cod_gt_latency: round_sig(pool.cod_exceedance(config.latency_s)?, 4),
        switching_rate_hz,
        improvement_db,
    })
}

fn class_table(
    config: &AnalysisConfig,
    pairs: &[&PairSeries],
    sweep: &SensitivitySweep,
) -> Result<(ClassTable, Vec<OutageCurve>)> {
    let mut table = ClassTable::new();
    let mut curves = Vec::new();
    for class in LinkClass::ALL {
        let mut direct_curve = None;
        // DL first so the others can report their margin over it
        let mut policies = config.policies.clone();
        policies.sort();
        policies.dedup();
        for policy in policies {
            let members: Vec<&PairSeries> = pairs
                .iter()
                .copied()
                .filter(|p| p.class() == class && p.combined.policy == policy)
                .collect();
            if members.is_empty() {
                continue;
            }
            let series: Vec<&[f64]> = members
                .iter()
                .map(|p| p.combined.gains.as_slice())
                .collect();
            let curve = pooled_outage_curve(&series, sweep, label(policy, class))?;
            let summary = summarize(config, &members, sweep, direct_curve.as_ref(), &curve)?;
            table.entry(class).or_default().insert(policy, summary);
            if policy == Policy::Direct {
                direct_curve = Some(curve.clone());
            }
            curves.push(curve);
        }
    }
    Ok((table, curves))
}

/// Runs the full analysis over dense trace sets (one per subject).
pub fn analyze(config: &AnalysisConfig, sets: &[DenseTraceSet]) -> Result<Report> {
    config.validate()?;
    let sweep = config.sweep()?;
    let thresholds = config.thresholds()?;
    let built = build_selected(config, sets)?;

    let mut policies = config.policies.clone();
    policies.sort();
    policies.dedup();
    let pairs: Vec<PairSeries> = built
        .iter()
        .flat_map(|(subject, b)| {
            policies.iter().map(move |&policy| PairSeries {
                subject: subject.clone(),
                source: b.source(),
                dest: b.dest(),
                combined: b.combine(policy, config.swc_threshold_db),
            })
        })
        .collect();

    let all: Vec<&PairSeries> = pairs.iter().collect();
    let (pooled, outage_curves) = class_table(config, &all, &sweep)?;

    let mut cod_curves = Vec::new();
    for &s in &config.cod_sensitivities_db {
        for class in LinkClass::ALL {
            for &policy in &policies {
                let members: Vec<&PairSeries> = pairs
                    .iter()
                    .filter(|p| p.class() == class && p.combined.policy == policy)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let pool = OutagePool::from_series(members.iter().map(|p| &p.combined), s);
                cod_curves.push(pool.cod_curve(&thresholds, label(policy, class))?);
            }
        }
    }

    let mut subjects: Vec<String> = sets.iter().map(|s| s.subject().to_string()).collect();
    subjects.dedup();
    let mut per_subject = BTreeMap::new();
    for subject in &subjects {
        let mine: Vec<&PairSeries> = pairs.iter().filter(|p| &p.subject == subject).collect();
        if mine.is_empty() {
            continue;
        }
        per_subject.insert(subject.clone(), class_table(config, &mine, &sweep)?.0);
    }

    Ok(Report {
        summary: Summary {
            config: config.clone(),
            subjects,
            pooled,
            per_subject,
        },
        outage_curves,
        cod_curves,
        pairs,
    })
}

impl Report {
    pub fn summary_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.summary)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `summary.json`, `curves/*.csv` and `runs/*.csv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("curves"))?;
        fs::create_dir_all(dir.join("runs"))?;
        fs::write(dir.join("summary.json"), self.summary_json()?)?;

        let mut op = Vec::new();
        writeln!(op, "x,y,label")?;
        for c in &self.outage_curves {
            for &(x, y) in &c.points {
                writeln!(op, "{x:.2},{},{}", format_prob(y), c.label)?;
            }
        }
        fs::write(dir.join("curves").join("outage_probability.csv"), op)?;

        let mut by_sensitivity: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for c in &self.cod_curves {
            let buf = by_sensitivity
                .entry(format!("cod_{:.2}dB.csv", c.sensitivity_db))
                .or_insert_with(|| b"x,y,label\n".to_vec());
            for &(x, y) in &c.points {
                writeln!(buf, "{},{},{}", format_prob(x), format_prob(y), c.label)?;
            }
        }
        for (name, buf) in by_sensitivity {
            fs::write(dir.join("curves").join(name), buf)?;
        }

        let s = self.summary.config.summary_sensitivity_db;
        for p in &self.pairs {
            let pool = OutagePool::from_series([&p.combined], s);
            let mut buf = Vec::new();
            writeln!(buf, "start_slot,length_slots,duration_s")?;
            for r in &pool.runs {
                writeln!(
                    buf,
                    "{},{},{:.3}",
                    r.start_slot,
                    r.length_slots,
                    r.duration_s()
                )?;
            }
            let name = format!(
                "{}_{}_{}-{}.csv",
                file_safe(&p.subject),
                p.combined.policy,
                p.source,
                p.dest
            );
            fs::write(dir.join("runs").join(name), buf)?;
        }
        Ok(())
    }
}

fn file_safe(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() {
        "subject".into()
    } else {
        cleaned
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub threshold_db: f64,
    pub outage_probability: f64,
    pub switching_rate_hz: Option<f64>,
}

/// SwC outage probability (at the summary sensitivity) and switching rate
/// for each threshold, pooled over every selected pair. Rows keep input order.
pub fn sweep_threshold(
    config: &AnalysisConfig,
    sets: &[DenseTraceSet],
    thresholds_db: &[f64],
) -> Result<Vec<ThresholdRow>> {
    if thresholds_db.is_empty() {
        return Err(Error::Config("threshold list is empty".into()));
    }
    if thresholds_db.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("thresholds must be finite".into()));
    }
    let built = build_selected(config, sets)?;
    thresholds_db
        .iter()
        .map(|&t| {
            let combined: Vec<_> = built
                .iter()
                .map(|(_, b)| b.combine(Policy::SwitchExamine, t))
                .collect();
            let pool = OutagePool::from_series(&combined, config.summary_sensitivity_db);
            let (switches, span_ms) = combined.iter().fold((0u64, 0u64), |(sw, ms), c| {
                (
                    sw + c.switch_count() as u64,
                    ms + c.len().saturating_sub(1) as u64 * u64::from(c.delta_ms),
                )
            });
            Ok(ThresholdRow {
                threshold_db: t,
                outage_probability: round_sig(pool.outage_probability()?, 4),
                switching_rate_hz: (span_ms > 0)
                    .then(|| round_sig(switches as f64 / (span_ms as f64 / 1000.0), 4)),
            })
        })
        .collect()
}

pub fn write_threshold_csv<W: Write>(rows: &[ThresholdRow], mut out: W) -> Result<()> {
    writeln!(out, "threshold_db,outage_probability,switching_rate_hz")?;
    for r in rows {
        let rate = r.switching_rate_hz.map(format_prob).unwrap_or_default();
        writeln!(
            out,
            "{:.2},{},{}",
            r.threshold_db,
            format_prob(r.outage_probability),
            rate
        )?;
    }
    Ok(())
}

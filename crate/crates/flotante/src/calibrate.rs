//! Survey calibration: population expansion of raw phone counts and the
//! errors-in-variables bracket for the residual expansion factor.
//!
//! Raw trip counts are first expanded by the census-to-phone ratio of their
//! origin unit. Comparing the expanded telecom matrix against the household
//! survey matrix then yields a residual factor: the log-log slope diagnoses
//! attenuation from measurement noise, pairs are pruned noisiest-first by
//! their resident-phone mass, and two opposed level regressions bracket the
//! true factor.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::GeoHierarchy;
use crate::model::{GeoLevel, UnitId};
use crate::stats::ols;
use crate::trips::TripMatrix;

/// Origin–destination pair totals, the shape both fit routines consume.
pub type PairMatrix = BTreeMap<(UnitId, UnitId), f64>;

/// Expand raw trips by the origin's census population over its resident
/// phone count: `t * p / c`.
///
/// A unit with observed trips but zero resident phones is a hard data error;
/// a fully silent unit (no trips, no phones) expands to zero.
pub fn population_expand(trips: f64, population: u64, phones: u64, unit: &UnitId) -> Result<f64> {
    if phones == 0 {
        if trips > 0.0 {
            return Err(Error::data(format!(
                "unit {unit} has {trips} trips but zero resident phones"
            )));
        }
        return Ok(0.0);
    }
    Ok(trips * population as f64 / phones as f64)
}

/// Expand every origin row of a matrix by its `p/c` ratio. Origins without a
/// census population are a data error.
pub fn expand_rows(
    matrix: &TripMatrix,
    populations: &BTreeMap<UnitId, u64>,
    resident_phones: &BTreeMap<UnitId, u64>,
) -> Result<TripMatrix> {
    let mut out = TripMatrix::expanded_like(matrix);
    for (key, count) in matrix.iter() {
        let origin = &key.0;
        let population = populations.get(origin).copied().ok_or_else(|| {
            Error::data(format!("no census population for origin {origin}"))
        })?;
        let phones = resident_phones.get(origin).copied().unwrap_or(0);
        let expanded = population_expand(count, population, phones, origin)?;
        out.add(key.clone(), expanded);
    }
    Ok(out)
}

/// Log-log regression over shared positive cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Pairs entering the fit (positive in both matrices).
    pub n_used: usize,
    /// Pairs dropped because one side was zero.
    pub n_excluded: usize,
}

/// OLS of `log b` on `log a` over cells positive in both matrices.
pub fn loglog_beta(a: &PairMatrix, b: &PairMatrix) -> Result<LogLogFit> {
    let keys: BTreeSet<&(UnitId, UnitId)> = a.keys().chain(b.keys()).collect();
    let mut points = Vec::new();
    let mut excluded = 0usize;
    for key in keys {
        let x = a.get(key).copied().unwrap_or(0.0);
        let y = b.get(key).copied().unwrap_or(0.0);
        if x > 0.0 && y > 0.0 {
            points.push((x.ln(), y.ln()));
        } else {
            excluded += 1;
        }
    }
    if points.len() < 3 {
        return Err(Error::Fit(format!(
            "log-log fit needs at least 3 shared positive cells, got {}",
            points.len()
        )));
    }
    let fit = ols(&points)?;
    Ok(LogLogFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: fit.slope_se,
        n_used: points.len(),
        n_excluded: excluded,
    })
}

/// Order pairs by ascending `sqrt(N1 * N2)` where `N` is the resident phone
/// count of each side. Pruning consumes this list from the front. Ties keep
/// the natural pair order so runs are reproducible.
pub fn noise_pruning_schedule(
    pairs: impl IntoIterator<Item = (UnitId, UnitId)>,
    resident_phones: &BTreeMap<UnitId, u64>,
) -> Vec<((UnitId, UnitId), f64)> {
    let mut keyed: Vec<((UnitId, UnitId), f64)> = pairs
        .into_iter()
        .map(|pair| {
            let n1 = resident_phones.get(&pair.0).copied().unwrap_or(0) as f64;
            let n2 = resident_phones.get(&pair.1).copied().unwrap_or(0) as f64;
            (pair, (n1 * n2).sqrt())
        })
        .collect();
    keyed.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    keyed
}

/// One pruning step of the calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationStep {
    pub step: usize,
    pub pairs_retained: usize,
    pub loglog_beta: f64,
    pub loglog_se: f64,
    /// Slope of survey-on-telecom in levels.
    pub beta_forward: f64,
    /// Reciprocal of the telecom-on-survey slope.
    pub beta_inverse: f64,
    pub factor_low: f64,
    pub factor_high: f64,
}

/// The full pruning trajectory and the chosen expansion factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub steps: Vec<CalibrationStep>,
    pub chosen_factor: f64,
    pub factor_interval: (f64, f64),
}

impl CalibrationReport {
    /// `calibration_report.csv`: one row per pruning step.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "step,pairs_retained,loglog_beta,loglog_se,beta_forward,beta_inverse,factor_low,factor_high"
        )?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.step,
                s.pairs_retained,
                s.loglog_beta,
                s.loglog_se,
                s.beta_forward,
                s.beta_inverse,
                s.factor_low,
                s.factor_high
            )?;
        }
        Ok(())
    }
}

/// Bracket the expansion factor between the survey-on-telecom slope and the
/// inverted telecom-on-survey slope, re-fit after each pruning step.
///
/// The pair universe is every cell positive in either matrix; missing cells
/// count as zero in the level fits and are excluded from the log-log fit.
/// Pruning follows [`noise_pruning_schedule`] down to `min_pairs`; the chosen
/// factor is the midpoint of the final step's interval.
pub fn dual_ols_bracket(
    survey: &PairMatrix,
    telecom: &PairMatrix,
    resident_phones: &BTreeMap<UnitId, u64>,
    min_pairs: usize,
) -> Result<CalibrationReport> {
    let universe: BTreeSet<(UnitId, UnitId)> = survey
        .iter()
        .chain(telecom.iter())
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, _)| k.clone())
        .collect();
    let min_pairs = min_pairs.max(3);
    if universe.len() < min_pairs {
        return Err(Error::Fit(format!(
            "calibration needs at least {min_pairs} observed pairs, got {}",
            universe.len()
        )));
    }
    let schedule = noise_pruning_schedule(universe.iter().cloned(), resident_phones);
    let max_pruned = universe.len() - min_pairs;

    let mut steps = Vec::new();
    for pruned in 0..=max_pruned {
        let retained: Vec<&(UnitId, UnitId)> =
            schedule[pruned..].iter().map(|(pair, _)| pair).collect();
        let em: PairMatrix = retained
            .iter()
            .filter_map(|k| survey.get(*k).map(|v| ((*k).clone(), *v)))
            .collect();
        let tc: PairMatrix = retained
            .iter()
            .filter_map(|k| telecom.get(*k).map(|v| ((*k).clone(), *v)))
            .collect();
        let loglog = loglog_beta(&tc, &em).map_err(step_context(pruned))?;

        let levels: Vec<(f64, f64)> = retained
            .iter()
            .map(|k| {
                (
                    telecom.get(*k).copied().unwrap_or(0.0),
                    survey.get(*k).copied().unwrap_or(0.0),
                )
            })
            .collect();
        let forward = ols(&levels).map_err(step_context(pruned))?.slope;
        let flipped: Vec<(f64, f64)> = levels.iter().map(|&(x, y)| (y, x)).collect();
        let reverse = ols(&flipped).map_err(step_context(pruned))?.slope;
        if reverse <= 0.0 {
            return Err(Error::Fit(format!(
                "step {pruned}: telecom-on-survey slope {reverse} is not invertible"
            )));
        }
        let inverse = 1.0 / reverse;
        steps.push(CalibrationStep {
            step: pruned,
            pairs_retained: retained.len(),
            loglog_beta: loglog.slope,
            loglog_se: loglog.slope_se,
            beta_forward: forward,
            beta_inverse: inverse,
            factor_low: forward.min(inverse),
            factor_high: forward.max(inverse),
        });
    }
    let last = steps.last().expect("at least one step");
    Ok(CalibrationReport {
        chosen_factor: (last.factor_low + last.factor_high) / 2.0,
        factor_interval: (last.factor_low, last.factor_high),
        steps,
    })
}

fn step_context(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Fit(msg) => Error::Fit(format!("step {step}: {msg}")),
        other => other,
    }
}

/// Survey matrix plus the populations used for expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyMatrix {
    pub counts: PairMatrix,
    pub populations: BTreeMap<UnitId, u64>,
    pub level: GeoLevel,
}

impl SurveyMatrix {
    /// Load `origin_id,dest_id,commuters` and `unit_id,population` CSVs,
    /// rolling both to `level` through the hierarchy.
    pub fn load(
        od_path: &Path,
        populations_path: &Path,
        hierarchy: &GeoHierarchy,
        level: GeoLevel,
    ) -> Result<SurveyMatrix> {
        let mut counts: PairMatrix = BTreeMap::new();
        let file = std::fs::File::open(od_path).map_err(|e| Error::io(od_path, e))?;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(od_path, e))?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = |what: &str| Error::Format {
                path: od_path.to_owned(),
                reason: format!("line {}: {what}", lineno + 1),
            };
            let mut f = line.split(',');
            let origin = f.next().filter(|s| !s.is_empty()).ok_or_else(|| ctx("missing origin"))?;
            let dest = f.next().filter(|s| !s.is_empty()).ok_or_else(|| ctx("missing dest"))?;
            let commuters: f64 = f
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|v| *v >= 0.0)
                .ok_or_else(|| ctx("bad commuter count"))?;
            let map = |id: &str| -> Result<UnitId> {
                let unit = UnitId::new(id);
                hierarchy.ancestor_at(&unit, level).cloned().ok_or_else(|| {
                    Error::data(format!("survey unit {unit} has no ancestor at {level}"))
                })
            };
            *counts.entry((map(origin)?, map(dest)?)).or_insert(0.0) += commuters;
        }

        let mut populations = BTreeMap::new();
        let file =
            std::fs::File::open(populations_path).map_err(|e| Error::io(populations_path, e))?;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(populations_path, e))?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = |what: &str| Error::Format {
                path: populations_path.to_owned(),
                reason: format!("line {}: {what}", lineno + 1),
            };
            let (id, pop) = line.split_once(',').ok_or_else(|| ctx("missing comma"))?;
            let pop: u64 = pop.parse().map_err(|_| ctx("bad population"))?;
            *populations.entry(UnitId::new(id)).or_insert(0) += pop;
        }
        Ok(SurveyMatrix {
            counts,
            populations,
            level,
        })
    }
}

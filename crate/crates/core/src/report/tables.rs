use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::curriculum::{RowBand, Skill};
use crate::eval::stats::{mean_ci, MeanCi, StatResult};
use crate::eval::{Accuracies, SkillAccuracy, LARGE_SETS, SMALL_SETS};
use crate::training::{EvalPoint, Phase};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct CsvError {
    pub line: usize,
    pub message: String,
}

/// Which head's trial-level accuracy a curve follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Number,
    Gesture,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Number => "number",
            Head::Gesture => "gesture",
        }
    }
}

/// Splits CSV text into rows after checking the header.
fn rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => {
            return Err(CsvError {
                line: 1,
                message: format!("expected header `{header}`"),
            })
        }
    }
    let width = header.split(',').count();
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != width {
                return Err(CsvError {
                    line: i + 1,
                    message: format!("{} fields, expected {width}", fields.len()),
                });
            }
            Ok((i + 1, fields))
        })
        .collect()
}

fn field<T: FromStr>(line: usize, name: &str, v: &str) -> Result<T, CsvError> {
    v.parse().map_err(|_| CsvError {
        line,
        message: format!("bad {name} `{v}`"),
    })
}

fn skill_field(line: usize, v: &str) -> Result<Skill, CsvError> {
    field(line, "skill", v)
}

/// One evaluation row of a run's metrics file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub phase: Phase,
    pub iteration: usize,
    pub skill: Skill,
    pub accuracy: SkillAccuracy,
}

pub const METRICS_HEADER: &str =
    "phase,iteration,skill,number_accuracy,gesture_accuracy,number_per_step,gesture_per_step,trials";

pub fn metric_rows(evaluations: &[EvalPoint]) -> Vec<MetricRow> {
    evaluations
        .iter()
        .flat_map(|e| {
            Skill::ALL
                .into_iter()
                .filter(|&s| e.accuracies.skill(s).trials > 0)
                .map(move |s| MetricRow {
                    phase: e.phase,
                    iteration: e.iteration,
                    skill: s,
                    accuracy: *e.accuracies.skill(s),
                })
        })
        .collect()
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let a = &r.accuracy;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.phase, r.iteration, r.skill, a.number, a.gesture, a.number_per_step, a.gesture_per_step, a.trials
        );
    }
    s
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRow>, CsvError> {
    rows(text, METRICS_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            Ok(MetricRow {
                phase: field(l, "phase", f[0])?,
                iteration: field(l, "iteration", f[1])?,
                skill: skill_field(l, f[2])?,
                accuracy: SkillAccuracy {
                    number: field(l, "number_accuracy", f[3])?,
                    gesture: field(l, "gesture_accuracy", f[4])?,
                    number_per_step: field(l, "number_per_step", f[5])?,
                    gesture_per_step: field(l, "gesture_per_step", f[6])?,
                    trials: field(l, "trials", f[7])?,
                },
            })
        })
        .collect()
}

/// Seed-aggregated learning curve point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub skill: Skill,
    pub summary: MeanCi,
}

pub const CURVES_HEADER: &str = "iteration,skill,mean,ci_low,ci_high";

/// Aggregates one phase of several runs' metrics over seeds, per iteration
/// and skill. Runs missing a point simply do not contribute to it.
pub fn curves(per_seed: &[Vec<MetricRow>], phase: Phase, head: Head, skills: &[Skill]) -> Vec<CurvePoint> {
    let mut grouped: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for run in per_seed {
        for r in run.iter().filter(|r| r.phase == phase) {
            if let Some(k) = skills.iter().position(|&s| s == r.skill) {
                let v = match head {
                    Head::Number => r.accuracy.number,
                    Head::Gesture => r.accuracy.gesture,
                };
                grouped.entry((r.iteration, k)).or_default().push(v);
            }
        }
    }
    grouped
        .into_iter()
        .map(|((iteration, k), vals)| CurvePoint {
            iteration,
            skill: skills[k],
            summary: mean_ci(&vals),
        })
        .collect()
}

fn ci_fields(ci: Option<(f64, f64)>) -> (f64, f64) {
    ci.unwrap_or((f64::NAN, f64::NAN))
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = format!("{CURVES_HEADER}\n");
    for p in points {
        let (lo, hi) = ci_fields(p.summary.ci95);
        let _ = writeln!(s, "{},{},{},{lo},{hi}", p.iteration, p.skill, p.summary.mean);
    }
    s
}

/// Curves as gnuplot data: one index block per skill.
pub fn curves_dat(points: &[CurvePoint], skills: &[Skill]) -> String {
    let mut s = String::new();
    for skill in skills {
        let _ = writeln!(s, "# {skill}\n# iteration mean ci_low ci_high");
        for p in points.iter().filter(|p| p.skill == *skill) {
            let (lo, hi) = ci_fields(p.summary.ci95);
            let _ = writeln!(s, "{} {} {lo} {hi}", p.iteration, p.summary.mean);
        }
        s.push_str("\n\n");
    }
    s
}

pub fn curves_chart(points: &[CurvePoint], skills: &[Skill], title: &str, head: Head) -> super::LineChart {
    super::LineChart {
        title: title.to_string(),
        x_label: "iteration".into(),
        y_label: format!("{} accuracy", head.name()),
        series: skills
            .iter()
            .map(|&skill| {
                let pts: Vec<&CurvePoint> = points.iter().filter(|p| p.skill == skill).collect();
                super::LineSeries {
                    name: skill.to_string(),
                    points: pts.iter().map(|p| (p.iteration as f64, p.summary.mean)).collect(),
                    band: pts.iter().map(|p| p.summary.ci95).collect(),
                }
            })
            .collect(),
    }
}

/// Final per-seed accuracy in one condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionRow {
    pub skill: Skill,
    pub seed: u64,
    pub accuracy: f64,
}

pub const CONDITIONS_HEADER: &str = "skill,seed,accuracy";

pub fn condition_rows(runs: &[(u64, Accuracies)], skills: &[Skill]) -> Vec<ConditionRow> {
    skills
        .iter()
        .flat_map(|&skill| {
            runs.iter().map(move |(seed, a)| ConditionRow {
                skill,
                seed: *seed,
                accuracy: a.skill(skill).number,
            })
        })
        .collect()
}

pub fn conditions_csv(rows: &[ConditionRow]) -> String {
    let mut s = format!("{CONDITIONS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.skill, r.seed, r.accuracy);
    }
    s
}

pub fn parse_conditions(text: &str) -> Result<Vec<ConditionRow>, CsvError> {
    rows(text, CONDITIONS_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            Ok(ConditionRow {
                skill: skill_field(l, f[0])?,
                seed: field(l, "seed", f[1])?,
                accuracy: field(l, "accuracy", f[2])?,
            })
        })
        .collect()
}

/// Skills in order of first appearance.
fn skills_in<T>(rows: &[T], skill: impl Fn(&T) -> Skill) -> Vec<Skill> {
    let mut out = Vec::new();
    for r in rows {
        if !out.contains(&skill(r)) {
            out.push(skill(r));
        }
    }
    out
}

fn seeds_in<T>(rows: &[T], seed: impl Fn(&T) -> u64) -> Vec<u64> {
    let mut out = Vec::new();
    for r in rows {
        if !out.contains(&seed(r)) {
            out.push(seed(r));
        }
    }
    out
}

/// Rebuilds per-seed accuracies (number head only) from condition rows,
/// together with the skills present.
pub fn accuracies_from_conditions(rows: &[ConditionRow]) -> (Vec<Skill>, Vec<(u64, Accuracies)>) {
    let skills = skills_in(rows, |r| r.skill);
    let runs = seeds_in(rows, |r| r.seed)
        .into_iter()
        .map(|seed| {
            let mut a = Accuracies::default();
            for r in rows.iter().filter(|r| r.seed == seed) {
                a.by_skill[r.skill as usize].number = r.accuracy;
            }
            (seed, a)
        })
        .collect();
    (skills, runs)
}

/// Per-seed number accuracy per numerosity, counting skills only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetSizeRow {
    pub skill: Skill,
    pub seed: u64,
    pub numerosity: usize,
    pub accuracy: f64,
}

pub const SETSIZE_HEADER: &str = "skill,seed,numerosity,accuracy";

pub fn setsize_rows(runs: &[(u64, Accuracies)]) -> Vec<SetSizeRow> {
    let mut out = Vec::new();
    for skill in Skill::COUNTING {
        for (seed, a) in runs {
            for n in 1..=10 {
                out.push(SetSizeRow {
                    skill,
                    seed: *seed,
                    numerosity: n,
                    accuracy: a.by_numerosity[skill as usize][n],
                });
            }
        }
    }
    out
}

pub fn setsize_csv(rows: &[SetSizeRow]) -> String {
    let mut s = format!("{SETSIZE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.skill, r.seed, r.numerosity, r.accuracy);
    }
    s
}

pub fn parse_setsize(text: &str) -> Result<Vec<SetSizeRow>, CsvError> {
    rows(text, SETSIZE_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            let numerosity: usize = field(l, "numerosity", f[2])?;
            if !(1..=10).contains(&numerosity) {
                return Err(CsvError {
                    line: l,
                    message: format!("numerosity {numerosity} outside 1..10"),
                });
            }
            Ok(SetSizeRow {
                skill: skill_field(l, f[0])?,
                seed: field(l, "seed", f[1])?,
                numerosity,
                accuracy: field(l, "accuracy", f[3])?,
            })
        })
        .collect()
}

pub fn accuracies_from_setsize(rows: &[SetSizeRow]) -> Vec<(u64, Accuracies)> {
    seeds_in(rows, |r| r.seed)
        .into_iter()
        .map(|seed| {
            let mut a = Accuracies::default();
            for row in a.by_numerosity.iter_mut() {
                row.iter_mut().for_each(|v| *v = f64::NAN);
            }
            for r in rows.iter().filter(|r| r.seed == seed) {
                a.by_numerosity[r.skill as usize][r.numerosity] = r.accuracy;
            }
            (seed, a)
        })
        .collect()
}

/// Per-seed counting accuracy on a row-restricted test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRow {
    pub band: RowBand,
    pub skill: Skill,
    pub seed: u64,
    pub accuracy: f64,
}

pub const DISTANCE_HEADER: &str = "band,skill,seed,accuracy";

pub fn band_name(band: RowBand) -> &'static str {
    match band {
        RowBand::Low => "low",
        RowBand::High => "high",
        RowBand::Mixed => "mixed",
    }
}

pub fn parse_band(s: &str) -> Option<RowBand> {
    match s {
        "low" => Some(RowBand::Low),
        "high" => Some(RowBand::High),
        "mixed" => Some(RowBand::Mixed),
        _ => None,
    }
}

pub fn distance_rows(band: RowBand, runs: &[(u64, Accuracies)]) -> Vec<DistanceRow> {
    Skill::COUNTING
        .into_iter()
        .flat_map(|skill| {
            runs.iter().map(move |(seed, a)| DistanceRow {
                band,
                skill,
                seed: *seed,
                accuracy: a.skill(skill).number,
            })
        })
        .collect()
}

pub fn distance_csv(rows: &[DistanceRow]) -> String {
    let mut s = format!("{DISTANCE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", band_name(r.band), r.skill, r.seed, r.accuracy);
    }
    s
}

pub fn parse_distance(text: &str) -> Result<Vec<DistanceRow>, CsvError> {
    rows(text, DISTANCE_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            Ok(DistanceRow {
                band: parse_band(f[0]).ok_or_else(|| CsvError {
                    line: l,
                    message: format!("bad band `{}`", f[0]),
                })?,
                skill: skill_field(l, f[1])?,
                seed: field(l, "seed", f[2])?,
                accuracy: field(l, "accuracy", f[3])?,
            })
        })
        .collect()
}

/// Per-seed accuracies of one band.
pub fn accuracies_from_distance(rows: &[DistanceRow], band: RowBand) -> Vec<(u64, Accuracies)> {
    let rows: Vec<DistanceRow> = rows.iter().copied().filter(|r| r.band == band).collect();
    accuracies_from_conditions(
        &rows
            .iter()
            .map(|r| ConditionRow {
                skill: r.skill,
                seed: r.seed,
                accuracy: r.accuracy,
            })
            .collect::<Vec<_>>(),
    )
    .1
}

pub const STATS_HEADER: &str = "test\tlabel\tstatistic\tdof\tp\tci_low\tci_high";

/// Tab-separated test results with full-precision numbers.
pub fn stats_text(results: &[StatResult]) -> String {
    let mut s = format!("{STATS_HEADER}\n");
    for r in results {
        let (lo, hi) = ci_fields(r.ci95);
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{lo}\t{hi}",
            r.test.name(),
            r.label,
            r.statistic,
            r.dof_string(),
            r.p_value
        );
    }
    s
}

/// Seed mean and interval per labelled group, as gnuplot data.
pub fn bars_dat(labels: &[String], summaries: &[MeanCi], reference: Option<&[f64]>) -> String {
    let mut s = String::from("# group mean ci_low ci_high");
    if reference.is_some() {
        s.push_str(" reference");
    }
    s.push('\n');
    for (i, (label, m)) in labels.iter().zip(summaries).enumerate() {
        let (lo, hi) = ci_fields(m.ci95);
        let _ = write!(s, "{label} {} {lo} {hi}", m.mean);
        if let Some(r) = reference {
            let _ = write!(s, " {}", r[i]);
        }
        s.push('\n');
    }
    s
}

/// Small-versus-large grouping used for the set-size bars.
pub fn grouped_set_sizes(a: &Accuracies, skill: Skill) -> (f64, f64) {
    (a.numerosity_mean(skill, SMALL_SETS), a.numerosity_mean(skill, LARGE_SETS))
}

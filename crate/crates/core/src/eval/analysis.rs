use super::scoring::Accuracies;
use super::stats::{mean_ci, one_way_anova, tukey_hsd, two_sample_t, MeanCi, StatResult, StatsError};
use crate::curriculum::Skill;

/// Children's counting accuracy in the three conditions, for overlays.
pub const CHILDREN_REFERENCE: [(Skill, f64); 3] =
    [(Skill::CountPoint, 0.825), (Skill::CountNoPoint, 0.50), (Skill::Puppet, 0.775)];

pub const SMALL_SETS: std::ops::RangeInclusive<usize> = 1..=5;
pub const LARGE_SETS: std::ops::RangeInclusive<usize> = 6..=10;

/// Per-seed number accuracy of one skill.
pub fn seed_values(per_seed: &[Accuracies], skill: Skill) -> Vec<f64> {
    per_seed.iter().map(|a| a.skill(skill).number).collect()
}

/// Seed mean of the trial-level number accuracy with a t-based 95% interval.
pub fn condition_accuracy(per_seed: &[Accuracies], skill: Skill) -> MeanCi {
    mean_ci(&seed_values(per_seed, skill))
}

/// ANOVA across the counting conditions plus Tukey pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionComparison {
    pub skills: Vec<Skill>,
    pub summaries: Vec<MeanCi>,
    pub anova: StatResult,
    pub pairs: Vec<StatResult>,
}

pub fn compare_conditions(per_seed: &[Accuracies], skills: &[Skill]) -> Result<ConditionComparison, StatsError> {
    let values: Vec<Vec<f64>> = skills.iter().map(|&s| seed_values(per_seed, s)).collect();
    let groups: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
    let names: Vec<&str> = skills.iter().map(|s| s.name()).collect();
    Ok(ConditionComparison {
        skills: skills.to_vec(),
        summaries: values.iter().map(|v| mean_ci(v)).collect(),
        anova: one_way_anova(&groups)?,
        pairs: tukey_hsd(&groups, Some(&names))?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandComparison {
    pub skill: Skill,
    pub low: MeanCi,
    pub high: MeanCi,
    /// Unpaired t-test of low minus high.
    pub test: StatResult,
}

/// Counting accuracy on scenes confined to the two lowest rows versus the
/// two highest rows, one test set of each per seed.
pub fn distance_analysis(low: &[Accuracies], high: &[Accuracies]) -> Result<Vec<BandComparison>, StatsError> {
    Skill::COUNTING
        .iter()
        .map(|&skill| {
            let l = seed_values(low, skill);
            let h = seed_values(high, skill);
            Ok(BandComparison {
                skill,
                low: mean_ci(&l),
                high: mean_ci(&h),
                test: StatResult {
                    label: format!("{skill} low vs high"),
                    ..two_sample_t(&l, &h, false)?
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetSizeSkill {
    pub skill: Skill,
    /// Seed-mean accuracy for numerosities 1..=10.
    pub per_numerosity: Vec<f64>,
    pub small: MeanCi,
    pub large: MeanCi,
    /// Unpaired t-test of small minus large over seeds.
    pub test: StatResult,
}

pub fn set_size_analysis(per_seed: &[Accuracies]) -> Result<Vec<SetSizeSkill>, StatsError> {
    Skill::COUNTING
        .iter()
        .map(|&skill| {
            let per_numerosity = (1..=10)
                .map(|n| {
                    let vals: Vec<f64> = per_seed
                        .iter()
                        .map(|a| a.by_numerosity[skill as usize][n])
                        .filter(|v| !v.is_nan())
                        .collect();
                    super::stats::mean(&vals)
                })
                .collect();
            let small: Vec<f64> = per_seed.iter().map(|a| a.numerosity_mean(skill, SMALL_SETS)).collect();
            let large: Vec<f64> = per_seed.iter().map(|a| a.numerosity_mean(skill, LARGE_SETS)).collect();
            Ok(SetSizeSkill {
                skill,
                per_numerosity,
                small: mean_ci(&small),
                large: mean_ci(&large),
                test: StatResult {
                    label: format!("{skill} small vs large"),
                    ..two_sample_t(&small, &large, false)?
                },
            })
        })
        .collect()
}

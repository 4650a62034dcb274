use crate::curriculum::{RowBand, Skill, Trial};
use crate::net::{argmax, StepOutput, NUMBER_CLASSES, STEPS};
use crate::scene::PostureTable;

/// Outcome of one trial. A head is correct only if every one of the 15 steps is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialScore {
    pub skill: Skill,
    pub numerosity: usize,
    pub row_band: RowBand,
    pub number_correct: bool,
    pub gesture_correct: bool,
    /// Steps whose number word was right (per-step diagnostic).
    pub number_steps: u8,
    pub gesture_steps: u8,
}

pub fn score_trial(outputs: &[StepOutput], trial: &Trial, table: &PostureTable) -> TrialScore {
    assert_eq!(outputs.len(), STEPS, "a trial has {STEPS} outputs");
    let mut number_steps = 0u8;
    let mut gesture_steps = 0u8;
    for (t, out) in outputs.iter().enumerate() {
        if argmax(&out.number) == trial.number_targets[t] {
            number_steps += 1;
        }
        if table.snap(&out.gesture) == trial.posture_targets[t] {
            gesture_steps += 1;
        }
    }
    TrialScore {
        skill: trial.skill,
        numerosity: trial.numerosity,
        row_band: trial.row_band(),
        number_correct: number_steps as usize == STEPS,
        gesture_correct: gesture_steps as usize == STEPS,
        number_steps,
        gesture_steps,
    }
}

/// Accuracy of one skill over a scored test set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkillAccuracy {
    pub trials: usize,
    pub number: f64,
    pub gesture: f64,
    pub number_per_step: f64,
    pub gesture_per_step: f64,
}

/// Per-skill accuracies, indexed by `Skill as usize`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Accuracies {
    pub by_skill: [SkillAccuracy; 6],
    /// `[skill][numerosity]` trial-level number accuracy (NaN where untested).
    pub by_numerosity: [[f64; NUMBER_CLASSES]; 6],
}

impl Accuracies {
    pub fn from_scores(scores: &[TrialScore]) -> Self {
        let mut acc = Accuracies::default();
        let mut counts = [[0usize; NUMBER_CLASSES]; 6];
        let mut hits = [[0usize; NUMBER_CLASSES]; 6];
        let mut sums = [[0.0f64; 4]; 6];
        for s in scores {
            let k = s.skill as usize;
            acc.by_skill[k].trials += 1;
            sums[k][0] += s.number_correct as u8 as f64;
            sums[k][1] += s.gesture_correct as u8 as f64;
            sums[k][2] += s.number_steps as f64 / STEPS as f64;
            sums[k][3] += s.gesture_steps as f64 / STEPS as f64;
            counts[k][s.numerosity] += 1;
            hits[k][s.numerosity] += s.number_correct as usize;
        }
        for k in 0..6 {
            let n = acc.by_skill[k].trials;
            if n > 0 {
                let n = n as f64;
                acc.by_skill[k].number = sums[k][0] / n;
                acc.by_skill[k].gesture = sums[k][1] / n;
                acc.by_skill[k].number_per_step = sums[k][2] / n;
                acc.by_skill[k].gesture_per_step = sums[k][3] / n;
            }
            for m in 0..NUMBER_CLASSES {
                acc.by_numerosity[k][m] = if counts[k][m] > 0 {
                    hits[k][m] as f64 / counts[k][m] as f64
                } else {
                    f64::NAN
                };
            }
        }
        acc
    }

    pub fn skill(&self, skill: Skill) -> &SkillAccuracy {
        &self.by_skill[skill as usize]
    }

    /// Mean number accuracy over numerosities in `range` (inclusive).
    pub fn numerosity_mean(&self, skill: Skill, range: std::ops::RangeInclusive<usize>) -> f64 {
        let vals: Vec<f64> = range
            .map(|n| self.by_numerosity[skill as usize][n])
            .filter(|v| !v.is_nan())
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

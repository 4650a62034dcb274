//! The six simulated skills, their 15-step trials, batches, test sets and the
//! dynamic skill schedule of the third study.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::net::{StepInput, StepTarget, NUMBER_CLASSES, STEPS};
use crate::scene::{
    random_scene, random_scene_in_rows, Image, PostureId, PostureTable, Scene, SceneError,
    SpriteBank, MAX_BALLS,
};

/// Numerosities covered by every training and test batch.
pub const BATCH_NUMEROSITIES: std::ops::RangeInclusive<usize> = 1..=10;
/// Batches in a test set.
pub const TEST_BATCHES: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurriculumError {
    #[error("{skill} needs at least one ball")]
    EmptyCountingScene { skill: Skill },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("skill list is empty")]
    NoSkills,
    #[error("trial line: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Skill {
    DoNothing,
    Pointing,
    Recitation,
    CountPoint,
    CountNoPoint,
    Puppet,
}

/// How the hand appears in a trial's images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeedbackPolicy {
    NoHand,
    /// Hand pre-drawn at the correct object each step (the puppet).
    ScriptedHand,
    /// Hand drawn where the network's previous gesture pointed.
    NetworkHand,
}

/// Trigger pattern plus hand policy that selects a skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SkillEncoding {
    pub visual: bool,
    pub gesture: bool,
    pub number: bool,
    pub feedback: FeedbackPolicy,
}

impl Skill {
    pub const ALL: [Skill; 6] = [
        Skill::DoNothing,
        Skill::Pointing,
        Skill::Recitation,
        Skill::CountPoint,
        Skill::CountNoPoint,
        Skill::Puppet,
    ];
    pub const BASE: [Skill; 3] = [Skill::DoNothing, Skill::Pointing, Skill::Recitation];
    pub const COUNTING: [Skill; 3] = [Skill::CountPoint, Skill::CountNoPoint, Skill::Puppet];

    /// 1-based skill number as used in reports.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn from_number(n: usize) -> Option<Skill> {
        n.checked_sub(1).and_then(|i| Skill::ALL.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            Skill::DoNothing => "do_nothing",
            Skill::Pointing => "pointing",
            Skill::Recitation => "recitation",
            Skill::CountPoint => "count_point",
            Skill::CountNoPoint => "count_no_point",
            Skill::Puppet => "puppet",
        }
    }

    pub fn encoding(self) -> SkillEncoding {
        use FeedbackPolicy::*;
        let (visual, gesture, number, feedback) = match self {
            Skill::DoNothing => (false, false, false, NoHand),
            Skill::Pointing => (true, true, false, NetworkHand),
            Skill::Recitation => (false, false, true, NoHand),
            Skill::CountPoint => (true, true, true, NetworkHand),
            Skill::CountNoPoint => (true, false, true, NoHand),
            Skill::Puppet => (true, false, true, ScriptedHand),
        };
        SkillEncoding {
            visual,
            gesture,
            number,
            feedback,
        }
    }

    pub fn from_encoding(e: SkillEncoding) -> Option<Skill> {
        Skill::ALL.into_iter().find(|s| s.encoding() == e)
    }

    pub fn is_counting(self) -> bool {
        matches!(self, Skill::CountPoint | Skill::CountNoPoint | Skill::Puppet)
    }

    /// Whether the gesture target follows the balls.
    pub fn points(self) -> bool {
        self.encoding().gesture
    }

    /// `[gesture trigger, number trigger]`
    pub fn trigger(self) -> [f64; 2] {
        let e = self.encoding();
        [e.gesture as u8 as f64, e.number as u8 as f64]
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Skill {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Skill::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or_else(|| s.parse().ok().and_then(Skill::from_number))
            .ok_or_else(|| CurriculumError::Parse(format!("unknown skill `{s}`")))
    }
}

/// What the gesture (and puppet hand) does once every object has been visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AfterLast {
    #[default]
    Hold,
    ReturnToBase,
}

impl FromStr for AfterLast {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hold" => Ok(AfterLast::Hold),
            "base" | "return-to-base" => Ok(AfterLast::ReturnToBase),
            _ => Err(CurriculumError::Parse(format!("unknown gesture mode `{s}`"))),
        }
    }
}

/// One 15-step sequence with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub skill: Skill,
    pub numerosity: usize,
    /// The scene without any hand; `visual_trigger` already set per skill.
    pub scene: Scene,
    /// Scripted (puppet) hand column per step.
    pub scripted_hand: [Option<usize>; STEPS],
    pub number_targets: [usize; STEPS],
    pub posture_targets: [PostureId; STEPS],
    pub feedback: FeedbackPolicy,
}

impl Trial {
    pub fn targets(&self, table: &PostureTable) -> Vec<StepTarget> {
        (0..STEPS)
            .map(|t| StepTarget {
                number: self.number_targets[t],
                posture: table.posture(self.posture_targets[t]).0,
            })
            .collect()
    }

    /// Materializes the 15 network inputs. Under `NetworkHand` these are the
    /// hand-free images; the network's hand is drawn during the forward pass.
    pub fn step_inputs(&self, sprites: &SpriteBank) -> Vec<StepInput> {
        let base = sprites
            .render(&self.scene)
            .expect("trial scenes are validated at construction");
        let trigger = self.skill.trigger();
        self.scripted_hand
            .iter()
            .map(|hand| StepInput {
                image: match hand {
                    Some(c) => sprites.composite_into(&base, *c),
                    None => base.clone(),
                },
                trigger,
            })
            .collect()
    }

    pub fn base_image(&self, sprites: &SpriteBank) -> Image {
        sprites
            .render(&self.scene)
            .expect("trial scenes are validated at construction")
    }

    /// Row band of the balls: all in rows 0–1, all in rows 3–4, or mixed.
    pub fn row_band(&self) -> RowBand {
        RowBand::of(&self.scene)
    }

    /// One-line replay record: `skill=count_point n=3 balls=2:1,5:0,9:4 after=hold`.
    pub fn to_line(&self, after: AfterLast) -> String {
        let balls: Vec<String> = self
            .scene
            .balls()
            .iter()
            .map(|b| format!("{}:{}", b.column, b.row))
            .collect();
        let after = match after {
            AfterLast::Hold => "hold",
            AfterLast::ReturnToBase => "base",
        };
        format!(
            "skill={} n={} balls={} after={}",
            self.skill,
            self.numerosity,
            balls.join(","),
            after
        )
    }

    /// Rebuilds a trial from `to_line` output.
    pub fn from_line(line: &str) -> Result<Trial, CurriculumError> {
        let mut skill = None;
        let mut n = None;
        let mut balls = Vec::new();
        let mut after = AfterLast::Hold;
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| CurriculumError::Parse(format!("expected key=value, got `{tok}`")))?;
            match k {
                "skill" => skill = Some(v.parse::<Skill>()?),
                "n" => {
                    n = Some(
                        v.parse::<usize>()
                            .map_err(|_| CurriculumError::Parse(format!("bad numerosity `{v}`")))?,
                    )
                }
                "balls" => {
                    for item in v.split(',').filter(|s| !s.is_empty()) {
                        let (c, r) = item
                            .split_once(':')
                            .ok_or_else(|| CurriculumError::Parse(format!("bad ball `{item}`")))?;
                        let c = c.parse().map_err(|_| CurriculumError::Parse(format!("bad ball `{item}`")))?;
                        let r = r.parse().map_err(|_| CurriculumError::Parse(format!("bad ball `{item}`")))?;
                        balls.push((c, r));
                    }
                }
                "after" => after = v.parse()?,
                "seed" => {}
                _ => return Err(CurriculumError::Parse(format!("unknown key `{k}`"))),
            }
        }
        let skill = skill.ok_or_else(|| CurriculumError::Parse("missing skill".into()))?;
        let scene = Scene::new(balls, false, None)?;
        if let Some(n) = n {
            if n != scene.numerosity() {
                return Err(CurriculumError::Parse(format!(
                    "n={n} but {} balls listed",
                    scene.numerosity()
                )));
            }
        }
        trial_for_scene(skill, scene, after)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowBand {
    /// Rows 0–1, nearest the hand.
    Low,
    /// Rows 3–4.
    High,
    Mixed,
}

impl RowBand {
    pub fn rows(self) -> std::ops::Range<usize> {
        match self {
            RowBand::Low => 0..2,
            RowBand::High => 3..5,
            RowBand::Mixed => 0..5,
        }
    }

    pub fn of(scene: &Scene) -> RowBand {
        let rows = || scene.balls().iter().map(|b| b.row);
        if scene.numerosity() > 0 && rows().all(|r| r <= 1) {
            RowBand::Low
        } else if scene.numerosity() > 0 && rows().all(|r| r >= 3) {
            RowBand::High
        } else {
            RowBand::Mixed
        }
    }
}

/// Builds the targets of `skill` for a given hand-free scene.
pub fn trial_for_scene(skill: Skill, scene: Scene, after: AfterLast) -> Result<Trial, CurriculumError> {
    let n = scene.numerosity();
    if n == 0 && (skill.is_counting() || skill == Skill::Pointing) {
        return Err(CurriculumError::EmptyCountingScene { skill });
    }
    let enc = skill.encoding();
    let mut scene = scene.with_hand(None);
    scene.visual_trigger = enc.visual;
    let columns: Vec<usize> = scene.columns().collect();

    // column visited at 0-based step t: the (t+1)-th ball, then whatever follows the last
    let visit = |t: usize| -> Option<usize> {
        if t < n {
            Some(columns[t])
        } else {
            match after {
                AfterLast::Hold => columns.last().copied(),
                AfterLast::ReturnToBase => None,
            }
        }
    };

    let number_targets = std::array::from_fn(|t| match skill {
        Skill::DoNothing | Skill::Pointing => 0,
        Skill::Recitation => (t + 1).min(NUMBER_CLASSES - 1),
        _ => (t + 1).min(n),
    });
    let posture_targets = std::array::from_fn(|t| {
        if enc.gesture {
            visit(t).map_or(PostureId::Base, PostureId::Column)
        } else {
            PostureId::Base
        }
    });
    let scripted_hand = std::array::from_fn(|t| {
        if enc.feedback == FeedbackPolicy::ScriptedHand {
            visit(t)
        } else {
            None
        }
    });
    Ok(Trial {
        skill,
        numerosity: n,
        scene,
        scripted_hand,
        number_targets,
        posture_targets,
        feedback: enc.feedback,
    })
}

/// A trial on a fresh random scene with `numerosity` balls.
pub fn make_trial<R: Rng + ?Sized>(
    skill: Skill,
    numerosity: usize,
    rng: &mut R,
    after: AfterLast,
) -> Result<Trial, CurriculumError> {
    if numerosity > MAX_BALLS {
        return Err(SceneError::Numerosity(numerosity).into());
    }
    if numerosity == 0 && (skill.is_counting() || skill == Skill::Pointing) {
        return Err(CurriculumError::EmptyCountingScene { skill });
    }
    trial_for_scene(skill, random_scene(numerosity, rng)?, after)
}

/// One sub-batch of ten trials (numerosities 1..=10) per listed skill.
pub fn make_training_batch<R: Rng + ?Sized>(
    skills: &[Skill],
    rng: &mut R,
    after: AfterLast,
) -> Result<Vec<Trial>, CurriculumError> {
    if skills.is_empty() {
        return Err(CurriculumError::NoSkills);
    }
    let mut batch = Vec::with_capacity(skills.len() * 10);
    for &skill in skills {
        for n in BATCH_NUMEROSITIES {
            batch.push(make_trial(skill, n, rng, after)?);
        }
    }
    Ok(batch)
}

/// `batches` test batches of all six skills; rows optionally restricted.
pub fn make_test_set_with<R: Rng + ?Sized>(
    batches: usize,
    rows: RowBand,
    rng: &mut R,
    after: AfterLast,
) -> Result<Vec<Trial>, CurriculumError> {
    let mut set = Vec::with_capacity(batches * 60);
    for _ in 0..batches {
        for skill in Skill::ALL {
            for n in BATCH_NUMEROSITIES {
                let scene = random_scene_in_rows(n, rows.rows(), rng)?;
                set.push(trial_for_scene(skill, scene, after)?);
            }
        }
    }
    Ok(set)
}

/// 50 batches × 60 trials.
pub fn make_test_set<R: Rng + ?Sized>(rng: &mut R, after: AfterLast) -> Result<Vec<Trial>, CurriculumError> {
    make_test_set_with(TEST_BATCHES, RowBand::Mixed, rng, after)
}

/// Probabilities of the three counting skills, in the order (puppet, point, no-point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillMix {
    pub puppet: f64,
    pub point: f64,
    pub no_point: f64,
}

impl SkillMix {
    pub fn sum(&self) -> f64 {
        self.puppet + self.point + self.no_point
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.puppet, self.point, self.no_point]
    }

    fn lerp(a: SkillMix, b: SkillMix, t: f64) -> SkillMix {
        SkillMix {
            puppet: a.puppet + (b.puppet - a.puppet) * t,
            point: a.point + (b.point - a.point) * t,
            no_point: a.no_point + (b.no_point - a.no_point) * t,
        }
    }
}

/// Linear drift of the counting-skill mix over a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillSchedule {
    pub start: SkillMix,
    pub end: SkillMix,
}

impl SkillSchedule {
    /// Watching a puppet 60% of the time at first; at the end counting alone
    /// 90% of the time, a tenth of that without pointing.
    pub const STANDARD: SkillSchedule = SkillSchedule {
        start: SkillMix {
            puppet: 0.6,
            point: 0.4,
            no_point: 0.0,
        },
        end: SkillMix {
            puppet: 0.1,
            point: 0.81,
            no_point: 0.09,
        },
    };

    /// Alternative reading of the end point: 90% pointing, 10% without.
    pub const ALT: SkillSchedule = SkillSchedule {
        start: SkillSchedule::STANDARD.start,
        end: SkillMix {
            puppet: 0.0,
            point: 0.9,
            no_point: 0.1,
        },
    };

    pub fn probabilities(&self, iteration: usize, total: usize) -> SkillMix {
        let t = if total == 0 {
            0.0
        } else {
            (iteration.min(total)) as f64 / total as f64
        };
        SkillMix::lerp(self.start, self.end, t)
    }

    /// Draws the counting skill for one iteration's sub-batch.
    pub fn draw<R: Rng + ?Sized>(&self, iteration: usize, total: usize, rng: &mut R) -> Skill {
        let p = self.probabilities(iteration, total);
        let u: f64 = rng.gen::<f64>() * p.sum();
        if u < p.puppet {
            Skill::Puppet
        } else if u < p.puppet + p.point {
            Skill::CountPoint
        } else {
            Skill::CountNoPoint
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, m) in [("start", self.start), ("end", self.end)] {
            if m.as_array().iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(format!("{name} probabilities must lie in [0,1]"));
            }
            if (m.sum() - 1.0).abs() > 1e-9 {
                return Err(format!("{name} probabilities sum to {}, not 1", m.sum()));
            }
        }
        Ok(())
    }
}

pub fn schedule_probabilities(schedule: &SkillSchedule, iteration: usize, total: usize) -> (f64, f64, f64) {
    let p = schedule.probabilities(iteration, total);
    (p.puppet, p.point, p.no_point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn encoding_is_a_bijection() {
        for s in Skill::ALL {
            assert_eq!(Skill::from_encoding(s.encoding()), Some(s));
            assert_eq!(s.name().parse::<Skill>().unwrap(), s);
            assert_eq!(Skill::from_number(s.number()), Some(s));
        }
        let e = Skill::Puppet.encoding();
        assert_eq!((e.visual, e.gesture, e.number), (true, false, true));
        assert_eq!(Skill::CountNoPoint.encoding().feedback, FeedbackPolicy::NoHand);
    }

    #[test]
    fn recitation_targets() {
        let t = make_trial(Skill::Recitation, 4, &mut rng(), AfterLast::Hold).unwrap();
        assert_eq!(t.number_targets, [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 10, 10, 10, 10, 10]);
        assert!(t.posture_targets.iter().all(|&p| p == PostureId::Base));
        assert!(!t.scene.visual_trigger);
    }

    #[test]
    fn count_point_targets_follow_sorted_columns() {
        let scene = Scene::new([(9, 0), (2, 3), (5, 1)], false, None).unwrap();
        let t = trial_for_scene(Skill::CountPoint, scene, AfterLast::Hold).unwrap();
        let mut want_p = [PostureId::Column(9); STEPS];
        want_p[0] = PostureId::Column(2);
        want_p[1] = PostureId::Column(5);
        assert_eq!(t.posture_targets, want_p);
        let mut want_n = [3; STEPS];
        want_n[0] = 1;
        want_n[1] = 2;
        assert_eq!(t.number_targets, want_n);
        assert_eq!(t.feedback, FeedbackPolicy::NetworkHand);
        assert!(t.scene.visual_trigger);
    }

    #[test]
    fn return_to_base_variant() {
        let scene = Scene::new([(1, 0), (3, 3)], false, None).unwrap();
        let t = trial_for_scene(Skill::Puppet, scene, AfterLast::ReturnToBase).unwrap();
        assert_eq!(&t.scripted_hand[..3], &[Some(1), Some(3), None]);
        assert!(t.posture_targets.iter().all(|&p| p == PostureId::Base));
    }

    #[test]
    fn do_nothing_is_quiet() {
        let t = make_trial(Skill::DoNothing, 6, &mut rng(), AfterLast::Hold).unwrap();
        assert!(t.number_targets.iter().all(|&n| n == 0));
        assert!(t.posture_targets.iter().all(|&p| p == PostureId::Base));
        assert!(!t.scene.visual_trigger && t.scene.hand.is_none());
        assert_eq!(t.skill.trigger(), [0.0, 0.0]);
    }

    #[test]
    fn counting_needs_balls() {
        for s in [Skill::CountPoint, Skill::CountNoPoint, Skill::Puppet, Skill::Pointing] {
            assert!(make_trial(s, 0, &mut rng(), AfterLast::Hold).is_err());
        }
        assert!(make_trial(Skill::Recitation, 0, &mut rng(), AfterLast::Hold).is_ok());
    }

    #[test]
    fn puppet_images_carry_the_hand() {
        let sprites = SpriteBank::new(&crate::scene::GridGeometry::FULL).unwrap();
        let scene = Scene::new([(4, 2), (8, 0)], false, None).unwrap();
        let t = trial_for_scene(Skill::Puppet, scene.clone(), AfterLast::Hold).unwrap();
        let inputs = t.step_inputs(&sprites);
        let mut want = scene.with_hand(Some(4));
        want.visual_trigger = true;
        assert_eq!(inputs[0].image, sprites.render(&want).unwrap());
        assert_eq!(inputs[0].trigger, [0.0, 1.0]);
        assert_eq!(inputs[14].image, inputs[1].image);
    }

    #[test]
    fn batch_sizes() {
        let mut r = rng();
        let b = make_training_batch(&Skill::ALL[..4], &mut r, AfterLast::Hold).unwrap();
        assert_eq!(b.len(), 40);
        let b = make_training_batch(&Skill::ALL, &mut r, AfterLast::Hold).unwrap();
        assert_eq!(b.len(), 60);
        for n in 1..=10 {
            assert_eq!(b.iter().filter(|t| t.numerosity == n).count(), 6);
        }
        assert!(make_training_batch(&[], &mut r, AfterLast::Hold).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let s = SkillSchedule::STANDARD;
        assert_eq!(schedule_probabilities(&s, 0, 1050), (0.6, 0.4, 0.0));
        let (a, b, c) = schedule_probabilities(&s, 1050, 1050);
        assert!((a - 0.1).abs() < 1e-12 && (b - 0.81).abs() < 1e-12 && (c - 0.09).abs() < 1e-12);
        let m = s.probabilities(525, 1050);
        assert!((m.puppet - 0.35).abs() < 1e-12);
        assert!((m.point - 0.605).abs() < 1e-12);
        assert!((m.no_point - 0.045).abs() < 1e-12);
        assert!((m.sum() - 1.0).abs() < 1e-12);
        s.validate().unwrap();
        SkillSchedule::ALT.validate().unwrap();
    }

    #[test]
    fn schedule_draw_frequencies() {
        let s = SkillSchedule::STANDARD;
        let mut r = rng();
        let n = 20_000;
        let puppets = (0..n).filter(|_| s.draw(0, 100, &mut r) == Skill::Puppet).count();
        let p = puppets as f64 / n as f64;
        assert!((p - 0.6).abs() < 5.0 * (0.24f64 / n as f64).sqrt());
        assert!((0..1000).all(|_| s.draw(0, 100, &mut r) != Skill::CountNoPoint));
    }

    #[test]
    fn trial_line_round_trip() {
        let mut r = rng();
        for skill in Skill::ALL {
            let t = make_trial(skill, 5, &mut r, AfterLast::Hold).unwrap();
            let line = t.to_line(AfterLast::Hold);
            assert_eq!(Trial::from_line(&line).unwrap(), t);
        }
        assert!(Trial::from_line("skill=puppet n=2 balls=1:1").is_err());
        assert!(Trial::from_line("skill=juggle balls=1:1").is_err());
    }

    #[test]
    fn row_bands() {
        let low = Scene::new([(0, 0), (3, 1)], false, None).unwrap();
        let high = Scene::new([(0, 3), (3, 4)], false, None).unwrap();
        let mixed = Scene::new([(0, 0), (3, 4)], false, None).unwrap();
        assert_eq!(RowBand::of(&low), RowBand::Low);
        assert_eq!(RowBand::of(&high), RowBand::High);
        assert_eq!(RowBand::of(&mixed), RowBand::Mixed);
        let mut r = rng();
        let set = make_test_set_with(2, RowBand::High, &mut r, AfterLast::Hold).unwrap();
        assert_eq!(set.len(), 120);
        assert!(set.iter().all(|t| t.row_band() == RowBand::High));
    }
}

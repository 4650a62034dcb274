//! Staged curriculum: gesture pre-training, recitation pre-training, then one
//! of the three counting studies, with periodic evaluation on a fixed test set.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::curriculum::{
    make_test_set_with, make_training_batch, AfterLast, CurriculumError, FeedbackPolicy, RowBand,
    Skill, SkillSchedule, Trial, TEST_BATCHES,
};
use crate::eval::{score_trial, Accuracies, TrialScore};
use crate::exec::Exec;
use crate::net::{
    accumulate_gradient, sequence_forward, Activation, Feedback, HeadRates, LossParts, NetError, NetShape,
    NetworkParams, StepOutput, TrainMask, TrajectoryCache,
};
use crate::optim::{Optimizer, OptimizerState};
use crate::scene::{GridGeometry, PostureTable, SceneError, SpriteBank};

/// Iterations between test-set evaluations.
pub const EVAL_EVERY: usize = 50;
/// Iterations between mid-phase checkpoints.
pub const CHECKPOINT_EVERY: usize = 500;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{phase} diverged at iteration {iteration}: {source}")]
    Divergence {
        phase: Phase,
        iteration: usize,
        #[source]
        source: NetError,
    },
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{0} requires pre-trained parameters (gesture then recitation); pass the override to start fresh")]
    NotPretrained(Phase),
}

/// Fixed ingredients shared by every trial of a run.
#[derive(Debug, Clone)]
pub struct World {
    pub geometry: GridGeometry,
    pub table: PostureTable,
    pub sprites: SpriteBank,
    pub after: AfterLast,
    pub exec: Exec,
    pub activation: Activation,
}

impl World {
    pub fn new(geometry: GridGeometry, table: PostureTable, after: AfterLast) -> Result<Self, SceneError> {
        table.validate()?;
        Ok(World {
            sprites: SpriteBank::new(&geometry)?,
            geometry,
            table,
            after,
            exec: Exec::default(),
            activation: Activation::Relu,
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape::for_geometry(&self.geometry).with_visual_activation(self.activation)
    }
}

/// Runs a trial through the network with the trial's own hand policy.
pub fn forward_trial(params: &NetworkParams, trial: &Trial, world: &World) -> (Vec<StepOutput>, TrajectoryCache) {
    let inputs = trial.step_inputs(&world.sprites);
    let feedback = match trial.feedback {
        FeedbackPolicy::NetworkHand => Feedback::NetworkHand {
            table: &world.table,
            sprites: &world.sprites,
        },
        FeedbackPolicy::NoHand | FeedbackPolicy::ScriptedHand => Feedback::Verbatim,
    };
    sequence_forward(params, &inputs, feedback)
}

/// Scores every trial. Never touches the parameters.
pub fn evaluate(params: &NetworkParams, trials: &[Trial], world: &World) -> Vec<TrialScore> {
    world.exec.map(trials, |trial| {
        let (outputs, _) = forward_trial(params, trial, world);
        score_trial(&outputs, trial, &world.table)
    })
}

/// One iteration: per-trial BPTT gradients summed over the batch (in batch
/// order), then a single masked update.
pub fn train_batch(
    params: &mut NetworkParams,
    state: &mut OptimizerState,
    batch: &[Trial],
    rates: HeadRates,
    mask: TrainMask,
    world: &World,
) -> Result<LossParts, NetError> {
    let shape = *params.shape();
    let frozen: &NetworkParams = params;
    let grads = world.exec.map(batch, |trial| {
        let (_, cache) = forward_trial(frozen, trial, world);
        let mut g = NetworkParams::zeros(shape);
        let loss = accumulate_gradient(frozen, &cache, &trial.targets(&world.table), rates, &mut g);
        (g, loss)
    });
    let mut total = NetworkParams::zeros(shape);
    let mut loss = LossParts::default();
    for (g, l) in &grads {
        total.add_assign(g);
        loss.add(*l);
    }
    drop(grads);
    if !loss.cross_entropy.is_finite() || !loss.squared_error.is_finite() {
        return Err(NetError::NonFinite {
            block: crate::net::Block::NumberBias,
        });
    }
    state.apply(params, &total, rates, mask)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    GesturePre,
    RecitationPre,
    Study1,
    Study2,
    Study3,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::GesturePre => "gesture_pre",
            Phase::RecitationPre => "recitation_pre",
            Phase::Study1 => "study1",
            Phase::Study2 => "study2",
            Phase::Study3 => "study3",
        }
    }

    pub fn is_main(self) -> bool {
        matches!(self, Phase::Study1 | Phase::Study2 | Phase::Study3)
    }

    /// Random stream for this phase's training data.
    fn data_stream(self) -> u64 {
        match self {
            Phase::GesturePre => 1,
            Phase::RecitationPre => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Phase::GesturePre,
            Phase::RecitationPre,
            Phase::Study1,
            Phase::Study2,
            Phase::Study3,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

/// Counting study selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Study {
    /// Skills 1–4: counting only ever practised with pointing.
    WithPointing,
    /// All six skills in every batch.
    AllSkills,
    /// Base skills plus one counting sub-batch drawn from the drifting schedule.
    Dynamic,
}

impl Study {
    pub fn from_number(n: u8) -> Option<Study> {
        match n {
            1 => Some(Study::WithPointing),
            2 => Some(Study::AllSkills),
            3 => Some(Study::Dynamic),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Study::WithPointing => 1,
            Study::AllSkills => 2,
            Study::Dynamic => 3,
        }
    }

    pub fn phase(self) -> Phase {
        match self {
            Study::WithPointing => Phase::Study1,
            Study::AllSkills => Phase::Study2,
            Study::Dynamic => Phase::Study3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkillSource {
    Fixed(Vec<Skill>),
    Schedule(SkillSchedule),
}

impl SkillSource {
    fn batch_skills(&self, iteration: usize, total: usize, rng: &mut ChaCha8Rng) -> Vec<Skill> {
        match self {
            SkillSource::Fixed(skills) => skills.clone(),
            SkillSource::Schedule(s) => {
                let mut skills = Skill::BASE.to_vec();
                skills.push(s.draw(iteration, total, rng));
                skills
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub phase: Phase,
    pub iterations: usize,
    pub skills: SkillSource,
    pub rates: HeadRates,
    pub mask: TrainMask,
    pub optimizer: Optimizer,
}

impl PhaseConfig {
    /// Pointing and quiescence only; the number head is neither trained nor scored.
    pub fn gesture_pre() -> Self {
        PhaseConfig {
            phase: Phase::GesturePre,
            iterations: 2000,
            skills: SkillSource::Fixed(vec![Skill::DoNothing, Skill::Pointing]),
            rates: HeadRates {
                number: 0.0,
                gesture: 0.004,
            },
            mask: TrainMask::without_number_head(),
            optimizer: Optimizer::default(),
        }
    }

    pub fn recitation_pre() -> Self {
        PhaseConfig {
            phase: Phase::RecitationPre,
            iterations: 1000,
            skills: SkillSource::Fixed(Skill::BASE.to_vec()),
            rates: HeadRates {
                number: 0.002,
                gesture: 0.001,
            },
            mask: TrainMask::ALL,
            optimizer: Optimizer::default(),
        }
    }

    pub fn study(study: Study, schedule: SkillSchedule) -> Self {
        let (iterations, skills) = match study {
            Study::WithPointing => (2000, SkillSource::Fixed(Skill::ALL[..4].to_vec())),
            Study::AllSkills => (2000, SkillSource::Fixed(Skill::ALL.to_vec())),
            Study::Dynamic => (1050, SkillSource::Schedule(schedule)),
        };
        PhaseConfig {
            phase: study.phase(),
            iterations,
            skills,
            rates: HeadRates {
                number: 0.001,
                gesture: 0.002,
            },
            mask: TrainMask::ALL,
            optimizer: Optimizer::default(),
        }
    }
}

/// Test-set accuracies after a given number of iterations of a phase.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub phase: Phase,
    pub iteration: usize,
    pub accuracies: Accuracies,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub iterations: usize,
    pub evaluations: Vec<EvalPoint>,
    /// Unweighted loss summed over each iteration's batch.
    pub losses: Vec<LossParts>,
}

/// Receives evaluations and periodic snapshots while a phase runs.
pub trait PhaseObserver {
    fn evaluated(&mut self, _point: &EvalPoint) {}
    /// Called every `checkpoint_every` iterations inside a phase.
    fn snapshot(&mut self, _phase: Phase, _iteration: usize, _params: &NetworkParams) {}
}

impl PhaseObserver for () {}

/// Evaluation and snapshot cadence. Zero disables the periodic event; the
/// final iteration of a phase is always evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cadence {
    pub eval_every: usize,
    pub checkpoint_every: usize,
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence {
            eval_every: EVAL_EVERY,
            checkpoint_every: CHECKPOINT_EVERY,
        }
    }
}

/// Trains `params` through one phase, evaluating on `test_set` at the
/// cadence (when the set is non-empty).
pub fn run_phase(
    params: &mut NetworkParams,
    config: &PhaseConfig,
    world: &World,
    data_rng: &mut ChaCha8Rng,
    test_set: &[Trial],
    cadence: Cadence,
    observer: &mut dyn PhaseObserver,
) -> Result<PhaseRecord, TrainError> {
    let mut record = PhaseRecord {
        phase: config.phase,
        iterations: config.iterations,
        evaluations: Vec::new(),
        losses: Vec::with_capacity(config.iterations),
    };
    let mut state = OptimizerState::new(config.optimizer, *params.shape());
    for it in 0..config.iterations {
        let skills = config.skills.batch_skills(it, config.iterations, data_rng);
        let batch = make_training_batch(&skills, data_rng, world.after)?;
        let loss = train_batch(params, &mut state, &batch, config.rates, config.mask, world).map_err(|source| {
            TrainError::Divergence {
                phase: config.phase,
                iteration: it + 1,
                source,
            }
        })?;
        record.losses.push(loss);
        let done = it + 1;
        let last = done == config.iterations;
        let due = |every: usize| every > 0 && done % every == 0;
        if (due(cadence.eval_every) || last) && !test_set.is_empty() {
            let point = EvalPoint {
                phase: config.phase,
                iteration: done,
                accuracies: Accuracies::from_scores(&evaluate(params, test_set, world)),
            };
            observer.evaluated(&point);
            record.evaluations.push(point);
        }
        if due(cadence.checkpoint_every) && !last {
            observer.snapshot(config.phase, done, params);
        }
    }
    Ok(record)
}

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedStreams {
    pub seed: u64,
}

impl SeedStreams {
    pub const INIT: u64 = 0;
    pub const TEST: u64 = 4;
    pub const TEST_LOW_ROWS: u64 = 5;
    pub const TEST_HIGH_ROWS: u64 = 6;

    pub fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn phase_data(&self, phase: Phase) -> ChaCha8Rng {
        self.stream(phase.data_stream())
    }

    pub fn test_set(&self, batches: usize, rows: RowBand, after: AfterLast) -> Result<Vec<Trial>, CurriculumError> {
        let stream = match rows {
            RowBand::Mixed => Self::TEST,
            RowBand::Low => Self::TEST_LOW_ROWS,
            RowBand::High => Self::TEST_HIGH_ROWS,
        };
        make_test_set_with(batches, rows, &mut self.stream(stream), after)
    }
}

/// Parameters together with the phases they have been through.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: NetworkParams,
    pub phases: Vec<Phase>,
}

impl Model {
    /// Fresh initialization, stored at checkpoint precision.
    pub fn fresh(seed: u64, shape: NetShape) -> Self {
        let mut rng = SeedStreams { seed }.stream(SeedStreams::INIT);
        let mut params = NetworkParams::init(shape, &mut rng);
        params.round_to_f32();
        Model {
            params,
            phases: Vec::new(),
        }
    }

    pub fn is_pretrained(&self) -> bool {
        self.phases.contains(&Phase::GesturePre) && self.phases.contains(&Phase::RecitationPre)
    }
}

/// Everything needed to take one seed through the curriculum.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub gesture: PhaseConfig,
    pub recitation: PhaseConfig,
    pub test_batches: usize,
    pub cadence: Cadence,
    /// Allow main training on parameters that skipped pre-training.
    pub allow_unpretrained: bool,
}

impl Default for RunPlan {
    fn default() -> Self {
        RunPlan {
            gesture: PhaseConfig::gesture_pre(),
            recitation: PhaseConfig::recitation_pre(),
            test_batches: TEST_BATCHES,
            cadence: Cadence::default(),
            allow_unpretrained: false,
        }
    }
}

/// Trains `model` through one more phase and appends it to `model.phases`.
/// Parameters leave the phase rounded to checkpoint precision, so a run
/// resumed from a saved checkpoint continues exactly like an unbroken one.
pub fn advance(
    model: &mut Model,
    config: &PhaseConfig,
    plan: &RunPlan,
    seed: u64,
    world: &World,
    test_set: &[Trial],
    observer: &mut dyn PhaseObserver,
) -> Result<PhaseRecord, TrainError> {
    if config.phase.is_main() && !model.is_pretrained() && !plan.allow_unpretrained {
        return Err(TrainError::NotPretrained(config.phase));
    }
    let mut rng = SeedStreams { seed }.phase_data(config.phase);
    let record = run_phase(
        &mut model.params,
        config,
        world,
        &mut rng,
        test_set,
        plan.cadence,
        observer,
    )?;
    model.params.round_to_f32();
    model.phases.push(config.phase);
    Ok(record)
}

/// Gesture then recitation pre-training from a fresh initialization.
pub fn pretrain(
    seed: u64,
    plan: &RunPlan,
    world: &World,
    observer: &mut dyn PhaseObserver,
) -> Result<(Model, Vec<PhaseRecord>), TrainError> {
    let test = SeedStreams { seed }.test_set(plan.test_batches, RowBand::Mixed, world.after)?;
    let mut model = Model::fresh(seed, world.net_shape());
    let g = advance(&mut model, &plan.gesture, plan, seed, world, &test, observer)?;
    let r = advance(&mut model, &plan.recitation, plan, seed, world, &test, observer)?;
    Ok((model, vec![g, r]))
}

/// Main training of a study from (usually pre-trained) `model`.
pub fn train_study(
    model: &mut Model,
    config: &PhaseConfig,
    plan: &RunPlan,
    seed: u64,
    world: &World,
    observer: &mut dyn PhaseObserver,
) -> Result<PhaseRecord, TrainError> {
    let test = SeedStreams { seed }.test_set(plan.test_batches, RowBand::Mixed, world.after)?;
    advance(model, config, plan, seed, world, &test, observer)
}

/// Final accuracies of a model on a seed's test set restricted to `rows`.
pub fn test_accuracies(
    params: &NetworkParams,
    seed: u64,
    batches: usize,
    rows: RowBand,
    world: &World,
) -> Result<Accuracies, TrainError> {
    let test = SeedStreams { seed }.test_set(batches, rows, world.after)?;
    Ok(Accuracies::from_scores(&evaluate(params, &test, world)))
}

/// Fewest successful seeds an aggregate is computed from.
pub const MIN_SEEDS: usize = 3;

#[derive(Debug, Error)]
#[error("only {succeeded} of {attempted} seeds succeeded; at least {MIN_SEEDS} are needed")]
pub struct TooFewSeeds {
    pub attempted: usize,
    pub succeeded: usize,
}

/// Runs `f` for every seed (in parallel under `exec`), keeping failures
/// alongside successes in seed order.
pub fn run_seeds<T, E, F>(seeds: &[u64], exec: Exec, f: F) -> Vec<(u64, Result<T, E>)>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    exec.map(seeds, |&seed| (seed, f(seed)))
}

/// Successful outcomes. Failures are tolerated only while at least
/// [`MIN_SEEDS`] seeds (or all of them, for smaller runs) succeeded.
pub fn successes<T, E>(results: Vec<(u64, Result<T, E>)>) -> Result<Vec<(u64, T)>, TooFewSeeds> {
    let attempted = results.len();
    let ok: Vec<(u64, T)> = results.into_iter().filter_map(|(s, r)| r.ok().map(|v| (s, v))).collect();
    if ok.len() < MIN_SEEDS.min(attempted) {
        return Err(TooFewSeeds {
            attempted,
            succeeded: ok.len(),
        });
    }
    Ok(ok)
}

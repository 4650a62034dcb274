use std::fmt::Write as _;
use std::path::Path;

use pointcount_core::checkpoint;
use pointcount_core::config::RunConfig;
use pointcount_core::curriculum::{RowBand, Skill};
use pointcount_core::eval::stats::{mean_ci, MeanCi, StatResult};
use pointcount_core::eval::{
    compare_conditions, condition_accuracy, distance_analysis, set_size_analysis, Accuracies, CHILDREN_REFERENCE,
};
use pointcount_core::exec::{with_jobs, Exec};
use pointcount_core::net::NetworkParams;
use pointcount_core::report::*;
use pointcount_core::scene::{Scene, SpriteBank};
use pointcount_core::training::{
    advance, evaluate, run_seeds, successes, test_accuracies, Model, Phase, PhaseObserver, RunPlan, SeedStreams,
    Study, TrainError, World,
};

use crate::layout::{self, Layout};
use crate::{CliError, Rows};

struct Setup {
    world: World,
    plan: RunPlan,
    layout: Layout,
    exec: Exec,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let exec = if cfg.jobs > 1 { Exec::Parallel } else { Exec::Sequential };
    Ok(Setup {
        world: cfg.world()?.with_exec(exec),
        plan: cfg.plan(),
        layout: Layout::new(cfg.out.clone().expect("resolved config has an output root")),
        exec,
    })
}

/// Writes periodic snapshots, remembering the first failure.
struct Snapshots<'a> {
    layout: &'a Layout,
    seed: u64,
    /// Phases completed before the running one.
    phases: Vec<Phase>,
    error: Option<CliError>,
}

impl<'a> Snapshots<'a> {
    fn new(layout: &'a Layout, seed: u64) -> Self {
        Snapshots {
            layout,
            seed,
            phases: Vec::new(),
            error: None,
        }
    }

    fn check(&mut self) -> Result<(), CliError> {
        self.error.take().map_or(Ok(()), Err)
    }
}

impl PhaseObserver for Snapshots<'_> {
    fn snapshot(&mut self, phase: Phase, iteration: usize, params: &NetworkParams) {
        if self.error.is_some() {
            return;
        }
        let model = Model {
            params: params.clone(),
            phases: self.phases.clone(),
        };
        let path = self.layout.snapshot(self.seed, phase, iteration);
        if let Err(e) = layout::write(&path, checkpoint::encode(&model)) {
            self.error = Some(e);
        }
    }
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    layout::write(&dir.join("config.txt"), cfg.to_text())
}

fn save_model(layout: &Layout, seed: u64, phase: Phase, model: &Model) -> Result<(), CliError> {
    layout::write(&layout.checkpoint(seed, phase), checkpoint::encode(model))
}

fn load_model(path: &Path, world: &World) -> Result<Model, CliError> {
    let model = checkpoint::load(path)?;
    let (have, want) = (model.params.shape(), world.net_shape());
    if *have != want {
        return Err(CliError::Usage(format!(
            "{}: checkpoint is for {}x{} images with {} visual layers, the config asks for {}x{} with {}",
            path.display(),
            have.image_height,
            have.image_width,
            have.visual_activation,
            want.image_height,
            want.image_width,
            want.visual_activation
        )));
    }
    Ok(model)
}

type Survivors<T> = (Vec<(u64, T)>, Option<CliError>);

/// Splits per-seed outcomes. A usage error in any seed aborts the command;
/// numerical failures are tolerated down to the minimum seed count and
/// returned separately so aggregates can still be written.
fn survivors<T>(results: Vec<(u64, Result<T, CliError>)>) -> Result<Survivors<T>, CliError> {
    let mut first_failure = None;
    let mut kept = Vec::with_capacity(results.len());
    for (seed, r) in results {
        match r {
            Ok(v) => kept.push((seed, Ok(v))),
            Err(CliError::Usage(m)) => return Err(CliError::Usage(m)),
            Err(e) => {
                eprintln!("seed {seed} failed: {e}");
                first_failure.get_or_insert(e);
                kept.push((seed, Err(())));
            }
        }
    }
    let ok = successes(kept)?;
    Ok((ok, first_failure))
}

fn finish(pending: Option<CliError>) -> Result<(), CliError> {
    pending.map_or(Ok(()), Err)
}

fn read_metrics(report: &Path, seeds: &[u64]) -> Result<Vec<Vec<MetricRow>>, CliError> {
    seeds
        .iter()
        .map(|&seed| {
            let path = Layout::metrics(report, seed);
            parse_metrics(&layout::read(&path)?).map_err(|e| CliError::csv(&path, e))
        })
        .collect()
}

fn write_curves(dir: &Path, stem: &str, title: &str, points: &[CurvePoint], skills: &[Skill], head: Head) -> Result<(), CliError> {
    layout::write(&dir.join(format!("{stem}.csv")), curves_csv(points))?;
    layout::write(&dir.join(format!("{stem}.dat")), curves_dat(points, skills))?;
    layout::write(
        &dir.join(format!("{stem}.svg")),
        curves_chart(points, skills, title, head).to_svg(),
    )
}

pub fn pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let dir = s.layout.report("pretrain");
    write_config(&dir, cfg)?;
    let results = with_jobs(cfg.jobs, || {
        run_seeds(&cfg.seeds, s.exec, |seed| pretrain_seed(&s, seed, &dir))
    });
    let (runs, pending) = survivors(results)?;
    let seeds: Vec<u64> = runs.iter().map(|r| r.0).collect();
    pretrain_report(&dir, &seeds)?;
    // final test accuracies of the last phase that was evaluated
    for (seed, rows) in &runs {
        let Some(last) = rows.last() else { continue };
        for r in rows.iter().filter(|r| r.phase == last.phase && r.iteration == last.iteration) {
            println!(
                "seed {seed} {} {:<14} number {:.3} gesture {:.3}",
                r.phase,
                r.skill.name(),
                r.accuracy.number,
                r.accuracy.gesture
            );
        }
    }
    finish(pending)
}

fn pretrain_seed(s: &Setup, seed: u64, dir: &Path) -> Result<Vec<MetricRow>, CliError> {
    let test = SeedStreams { seed }
        .test_set(s.plan.test_batches, RowBand::Mixed, s.world.after)
        .map_err(TrainError::from)?;
    let mut model = Model::fresh(seed, s.world.net_shape());
    let mut obs = Snapshots::new(&s.layout, seed);
    let mut rows = Vec::new();
    for config in [&s.plan.gesture, &s.plan.recitation] {
        obs.phases = model.phases.clone();
        let record = advance(&mut model, config, &s.plan, seed, &s.world, &test, &mut obs);
        obs.check()?;
        let record = record?;
        rows.extend(metric_rows(&record.evaluations));
        save_model(&s.layout, seed, config.phase, &model)?;
        layout::write(&Layout::metrics(dir, seed), metrics_csv(&rows))?;
    }
    Ok(rows)
}

/// Learning curves: pointing during gesture pre-training, recitation
/// during recitation pre-training.
fn pretrain_report(dir: &Path, seeds: &[u64]) -> Result<(), CliError> {
    let per_seed = read_metrics(dir, seeds)?;
    for (stem, phase, head, skill, title) in [
        ("gesture_curves", Phase::GesturePre, Head::Gesture, Skill::Pointing, "Gesture pre-training"),
        ("recitation_curves", Phase::RecitationPre, Head::Number, Skill::Recitation, "Recitation pre-training"),
    ] {
        let points = curves(&per_seed, phase, head, &[skill]);
        write_curves(dir, stem, title, &points, &[skill], head)?;
    }
    Ok(())
}

pub fn study(cfg: &RunConfig, force_fresh: bool) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let main = cfg.main_phase();
    let mut plan = s.plan.clone();
    plan.allow_unpretrained = force_fresh;
    let dir = s.layout.study_report(cfg.study);
    write_config(&dir, cfg)?;
    let results = with_jobs(cfg.jobs, || {
        run_seeds(&cfg.seeds, s.exec, |seed| {
            let mut model = if force_fresh {
                Model::fresh(seed, s.world.net_shape())
            } else {
                let path = s.layout.checkpoint(seed, Phase::RecitationPre);
                if !path.exists() {
                    return Err(CliError::Usage(format!(
                        "no pre-training checkpoint for seed {seed} at {}; run `pointcount pretrain` with the same config first, or pass --force-fresh",
                        path.display()
                    )));
                }
                load_model(&path, &s.world)?
            };
            let test = SeedStreams { seed }
                .test_set(plan.test_batches, RowBand::Mixed, s.world.after)
                .map_err(TrainError::from)?;
            let mut obs = Snapshots::new(&s.layout, seed);
            obs.phases = model.phases.clone();
            let record = advance(&mut model, &main, &plan, seed, &s.world, &test, &mut obs);
            obs.check()?;
            let record = record?;
            save_model(&s.layout, seed, main.phase, &model)?;
            layout::write(&Layout::metrics(&dir, seed), metrics_csv(&metric_rows(&record.evaluations)))?;
            Ok(match record.evaluations.last() {
                Some(e) if e.iteration == main.iterations => e.accuracies.clone(),
                _ => Accuracies::from_scores(&evaluate(&model.params, &test, &s.world)),
            })
        })
    });
    let (runs, pending) = survivors(results)?;
    let rows = condition_rows(&runs, &Skill::COUNTING);
    layout::write(&dir.join("conditions.csv"), conditions_csv(&rows))?;
    print!("{}", study_report(&dir, cfg.study)?);
    finish(pending)
}

fn children_reference(skill: Skill) -> f64 {
    CHILDREN_REFERENCE
        .iter()
        .find(|(s, _)| *s == skill)
        .map_or(f64::NAN, |(_, v)| *v)
}

fn summary_lines(labels: &[String], summaries: &[MeanCi]) -> String {
    let mut s = String::new();
    for (label, m) in labels.iter().zip(summaries) {
        let _ = write!(s, "{label:<16} mean {:.4}", m.mean);
        if let Some((lo, hi)) = m.ci95 {
            let _ = write!(s, "  ci95 [{lo:.4}, {hi:.4}]");
        }
        let _ = writeln!(s, "  n={}", m.n);
    }
    s
}

/// Statistics, bars and curves of a study, recomputed from its CSV files.
/// Returns a printable summary.
fn study_report(dir: &Path, study: u8) -> Result<String, CliError> {
    let path = dir.join("conditions.csv");
    let rows = parse_conditions(&layout::read(&path)?).map_err(|e| CliError::csv(&path, e))?;
    let (skills, runs) = accuracies_from_conditions(&rows);
    let seeds: Vec<u64> = runs.iter().map(|r| r.0).collect();
    let per_seed: Vec<Accuracies> = runs.into_iter().map(|r| r.1).collect();

    let mut results: Vec<StatResult> = Vec::new();
    if skills.len() >= 2 {
        match compare_conditions(&per_seed, &skills) {
            Ok(c) => {
                results.push(c.anova);
                results.extend(c.pairs);
            }
            Err(e) => eprintln!("condition statistics skipped: {e}"),
        }
    }
    let stats = stats_text(&results);
    layout::write(&dir.join("stats.txt"), &stats)?;

    let labels: Vec<String> = skills.iter().map(|s| s.to_string()).collect();
    let summaries: Vec<MeanCi> = skills.iter().map(|&k| condition_accuracy(&per_seed, k)).collect();
    let reference: Option<Vec<f64>> = (study == 3).then(|| skills.iter().map(|&k| children_reference(k)).collect());
    layout::write(&dir.join("bars.dat"), bars_dat(&labels, &summaries, reference.as_deref()))?;
    let chart = BarChart {
        title: format!("Study {study}: counting accuracy"),
        y_label: "trial-level accuracy".into(),
        categories: labels.clone(),
        series: vec![BarSeries {
            name: "network".into(),
            values: summaries.iter().map(|m| m.mean).collect(),
            ci: summaries.iter().map(|m| m.ci95).collect(),
        }],
        reference: reference.map(|r| ("children".to_string(), r)),
    };
    layout::write(&dir.join("bars.svg"), chart.to_svg())?;

    let phase = Study::from_number(study).map_or(Phase::Study1, Study::phase);
    let points = curves(&read_metrics(dir, &seeds)?, phase, Head::Number, &skills);
    write_curves(
        dir,
        "curves",
        &format!("Study {study}: counting accuracy during training"),
        &points,
        &skills,
        Head::Number,
    )?;
    Ok(format!("{}\n{stats}", summary_lines(&labels, &summaries)))
}

pub fn analyze(cfg: &RunConfig, rows: Rows) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let dir = s.layout.report("analyze");
    write_config(&dir, cfg)?;
    let bands: Vec<RowBand> = match rows {
        Rows::Low => vec![RowBand::Low],
        Rows::High => vec![RowBand::High],
        Rows::Both => vec![RowBand::Low, RowBand::High],
    };
    let with_set_sizes = rows == Rows::Both;
    let batches = s.plan.test_batches;
    let results = with_jobs(cfg.jobs, || {
        run_seeds(&cfg.seeds, s.exec, |seed| {
            let path = s.layout.checkpoint(seed, Phase::Study3);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "no Study-3 checkpoint for seed {seed} at {}; run `pointcount study --study 3` first",
                    path.display()
                )));
            }
            let model = load_model(&path, &s.world)?;
            let by_band = bands
                .iter()
                .map(|&b| test_accuracies(&model.params, seed, batches, b, &s.world))
                .collect::<Result<Vec<_>, _>>()?;
            let mixed = if with_set_sizes {
                Some(test_accuracies(&model.params, seed, batches, RowBand::Mixed, &s.world)?)
            } else {
                None
            };
            Ok((by_band, mixed))
        })
    });
    let (runs, pending) = survivors(results)?;

    let mut distance = Vec::new();
    for (i, &band) in bands.iter().enumerate() {
        let per_seed: Vec<(u64, Accuracies)> = runs.iter().map(|(seed, (b, _))| (*seed, b[i].clone())).collect();
        distance.extend(distance_rows(band, &per_seed));
    }
    layout::write(&dir.join("distance.csv"), distance_csv(&distance))?;
    if with_set_sizes {
        let per_seed: Vec<(u64, Accuracies)> = runs
            .iter()
            .filter_map(|(seed, (_, m))| m.clone().map(|m| (*seed, m)))
            .collect();
        layout::write(&dir.join("setsize.csv"), setsize_csv(&setsize_rows(&per_seed)))?;
    } else {
        for stem in ["setsize.csv", "setsize_stats.txt", "setsize.dat", "setsize.svg"] {
            let _ = std::fs::remove_file(dir.join(stem));
        }
    }
    print!("{}", analyze_report(&dir)?);
    finish(pending)
}

/// Distance and set-size statistics and charts from the analysis CSV files.
fn analyze_report(dir: &Path) -> Result<String, CliError> {
    let mut out = String::new();
    let path = dir.join("distance.csv");
    if path.exists() {
        let rows = parse_distance(&layout::read(&path)?).map_err(|e| CliError::csv(&path, e))?;
        let bands: Vec<RowBand> = [RowBand::Low, RowBand::High]
            .into_iter()
            .filter(|b| rows.iter().any(|r| r.band == *b))
            .collect();
        let per_band: Vec<Vec<Accuracies>> = bands
            .iter()
            .map(|&b| accuracies_from_distance(&rows, b).into_iter().map(|r| r.1).collect())
            .collect();
        let mut results = Vec::new();
        if per_band.len() == 2 {
            match distance_analysis(&per_band[0], &per_band[1]) {
                Ok(cmp) => results.extend(cmp.into_iter().map(|c| c.test)),
                Err(e) => eprintln!("distance statistics skipped: {e}"),
            }
        }
        let stats = stats_text(&results);
        layout::write(&dir.join("distance_stats.txt"), &stats)?;

        let series: Vec<BarSeries> = bands
            .iter()
            .zip(&per_band)
            .map(|(&band, accs)| {
                let summaries: Vec<MeanCi> = Skill::COUNTING.iter().map(|&k| condition_accuracy(accs, k)).collect();
                BarSeries {
                    name: format!("{} rows", band_name(band)),
                    values: summaries.iter().map(|m| m.mean).collect(),
                    ci: summaries.iter().map(|m| m.ci95).collect(),
                }
            })
            .collect();
        let mut labels = Vec::new();
        let mut summaries = Vec::new();
        for (&band, accs) in bands.iter().zip(&per_band) {
            for &k in &Skill::COUNTING {
                labels.push(format!("{k}_{}", band_name(band)));
                summaries.push(condition_accuracy(accs, k));
            }
        }
        layout::write(&dir.join("distance.dat"), bars_dat(&labels, &summaries, None))?;
        let chart = BarChart {
            title: "Counting accuracy by distance from the hand".into(),
            y_label: "trial-level accuracy".into(),
            categories: Skill::COUNTING.iter().map(|k| k.to_string()).collect(),
            series,
            reference: None,
        };
        layout::write(&dir.join("distance.svg"), chart.to_svg())?;
        let _ = write!(out, "distance\n{}{stats}\n", summary_lines(&labels, &summaries));
    }

    let path = dir.join("setsize.csv");
    if path.exists() {
        let rows = parse_setsize(&layout::read(&path)?).map_err(|e| CliError::csv(&path, e))?;
        let per_seed: Vec<Accuracies> = accuracies_from_setsize(&rows).into_iter().map(|r| r.1).collect();
        let mut results = Vec::new();
        match set_size_analysis(&per_seed) {
            Ok(r) => results.extend(r.into_iter().map(|k| k.test)),
            Err(e) => eprintln!("set-size statistics skipped: {e}"),
        }
        let stats = stats_text(&results);
        layout::write(&dir.join("setsize_stats.txt"), &stats)?;

        let mut points = Vec::new();
        for &skill in &Skill::COUNTING {
            for n in 1..=10 {
                let vals: Vec<f64> = per_seed
                    .iter()
                    .map(|a| a.by_numerosity[skill as usize][n])
                    .filter(|v| !v.is_nan())
                    .collect();
                points.push(CurvePoint {
                    iteration: n,
                    skill,
                    summary: mean_ci(&vals),
                });
            }
        }
        layout::write(&dir.join("setsize.dat"), curves_dat(&points, &Skill::COUNTING))?;
        let mut chart = curves_chart(&points, &Skill::COUNTING, "Counting accuracy by set size", Head::Number);
        chart.x_label = "numerosity".into();
        layout::write(&dir.join("setsize.svg"), chart.to_svg())?;
        let mut labels = Vec::new();
        let mut summaries = Vec::new();
        for &k in &Skill::COUNTING {
            for (name, range) in [("small", 1..=5), ("large", 6..=10)] {
                let vals: Vec<f64> = per_seed.iter().map(|a| a.numerosity_mean(k, range.clone())).collect();
                labels.push(format!("{k}_{name}"));
                summaries.push(mean_ci(&vals));
            }
        }
        let _ = write!(out, "set size\n{}{stats}", summary_lines(&labels, &summaries));
    }
    Ok(out)
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout::new(cfg.out.clone().expect("resolved config has an output root"));
    let mut found = false;
    let study_dir = layout.study_report(cfg.study);
    if study_dir.join("conditions.csv").exists() {
        print!("study {}\n{}", cfg.study, study_report(&study_dir, cfg.study)?);
        found = true;
    }
    let analyze_dir = layout.report("analyze");
    if analyze_dir.join("distance.csv").exists() || analyze_dir.join("setsize.csv").exists() {
        print!("{}", analyze_report(&analyze_dir)?);
        found = true;
    }
    if !found {
        return Err(CliError::Usage(format!(
            "no study {} or analysis CSV files under {}; run `pointcount study` or `pointcount analyze` first",
            cfg.study,
            layout.root.display()
        )));
    }
    Ok(())
}

pub fn render(cfg: &RunConfig, spec: &str, output: Option<&Path>) -> Result<(), CliError> {
    let scene: Scene = spec.parse().map_err(|e: pointcount_core::scene::SpecParseError| CliError::Usage(e.to_string()))?;
    let image = SpriteBank::new(&cfg.geometry)
        .and_then(|bank| bank.render(&scene))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let layout = Layout::new(cfg.out.clone().expect("resolved config has an output root"));
    let dir = layout.report("render");
    write_config(&dir, cfg)?;
    let path = output.map_or_else(|| dir.join("scene.pgm"), Path::to_path_buf);
    let mut bytes = Vec::new();
    image.write_pgm(&mut bytes).map_err(|e| CliError::io(&path, e))?;
    layout::write(&path, bytes)?;
    println!("{}", path.display());
    Ok(())
}

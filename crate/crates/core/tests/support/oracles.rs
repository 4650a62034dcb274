//! Brute-force oracles for rendering and posture snapping, shared by the
//! property tests and the acceptance run.

#![allow(dead_code)]

use pointcount_core::scene::{random_scene, render, GridGeometry, Image, PostureId, PostureTable, COLUMNS, JOINTS, MIN_POSTURE_DISTANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 4-connected components of lit pixels, by explicit flood fill.
fn components(img: &Image) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || img.pixels()[start] <= 0.0 {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut push = |nx: usize, ny: usize| {
                let j = ny * w + nx;
                if !seen[j] && img.pixels()[j] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < w {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < h {
                push(x, y + 1);
            }
        }
    }
    count
}

fn geometries() -> [GridGeometry; 3] {
    [
        GridGeometry::FULL,
        GridGeometry::COMPACT,
        GridGeometry::new(21, 46, 4, 4, 1).unwrap(),
    ]
}

/// Nearest entry by sorting all distances; the first-listed entry wins ties.
fn brute_force_snap(table: &PostureTable, joints: &[f64; JOINTS]) -> PostureId {
    let mut all: Vec<(f64, usize, PostureId)> = std::iter::once(PostureId::Base)
        .chain((0..COLUMNS).map(PostureId::Column))
        .enumerate()
        .map(|(order, id)| {
            let p = table.posture(id).0;
            let d = (0..JOINTS).map(|j| (p[j] - joints[j]).powi(2)).sum::<f64>();
            (d, order, id)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all[0].2
}

/// Renders `per_geometry` random scenes on each of three geometries and
/// counts lit 4-connected components.
pub fn check_components(per_geometry: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    for g in geometries() {
        for _ in 0..per_geometry {
            let n = rng.gen_range(0..=10);
            let scene = random_scene(n, &mut rng).map_err(|e| e.to_string())?;
            let image = render(&scene, &g).map_err(|e| e.to_string())?;
            let found = components(&image);
            if found != n {
                return Err(format!("{found} components for {n} balls: {scene:?} on {g:?}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Distinct entries, pairwise at least the minimum distance apart, each
/// snapping to itself. Returns the smallest pairwise distance.
pub fn check_posture_table() -> Result<f64, String> {
    let t = PostureTable::default();
    t.validate().map_err(|e| e.to_string())?;
    let all: Vec<(PostureId, [f64; JOINTS])> = t.entries().map(|(id, p)| (id, p.0)).collect();
    if all.len() != COLUMNS + 1 {
        return Err(format!("{} entries", all.len()));
    }
    let mut min = f64::INFINITY;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let d = (0..JOINTS).map(|k| (all[i].1[k] - all[j].1[k]).powi(2)).sum::<f64>().sqrt();
            if d < MIN_POSTURE_DISTANCE {
                return Err(format!("entries {i} and {j} only {d} apart"));
            }
            min = min.min(d);
        }
    }
    for (id, p) in &all {
        if t.snap(p) != *id {
            return Err(format!("{id:?} does not snap to itself"));
        }
    }
    Ok(min)
}

/// Snapping of `n` random postures, half uniform and half close to a
/// canonical entry where the decision is tight.
pub fn check_snap(n: usize) -> Result<usize, String> {
    let t = PostureTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..n {
        let joints: [f64; JOINTS] = if i % 2 == 0 {
            std::array::from_fn(|_| rng.gen_range(-0.2..1.2))
        } else {
            let c = rng.gen_range(0..=COLUMNS);
            let id = if c == COLUMNS { PostureId::Base } else { PostureId::Column(c) };
            let p = t.posture(id).0;
            std::array::from_fn(|j| p[j] + rng.gen_range(-0.15..0.15))
        };
        let (got, want) = (t.snap(&joints), brute_force_snap(&t, &joints));
        if got != want {
            return Err(format!("{joints:?}: snapped to {got:?}, nearest is {want:?}"));
        }
    }
    Ok(n)
}

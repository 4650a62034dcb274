//! Procedural visual world: ball scenes on an 11×5 grid, the pointing-hand
//! sprite for each column, the trigger line, and the synthetic arm postures
//! that stand in for recorded joint angles.
//!
//! Pixel coordinates are `(x, y)` with `y = 0` at the top of the image. Grid
//! rows are counted from the bottom: row 0 is the band nearest the hand.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

/// Horizontal ball positions (also the number of distinct pointing targets).
pub const COLUMNS: usize = 11;
/// Vertical ball positions.
pub const ROWS: usize = 5;
/// Largest numerosity a scene may hold (one column always stays empty).
pub const MAX_BALLS: usize = 10;
/// Joints per arm posture.
pub const JOINTS: usize = 7;
/// Length in pixels of the visual trigger line (clipped to narrow images).
pub const TRIGGER_LENGTH: usize = 8;
/// Gray level of hand sprite pixels; balls and trigger are 1.0.
pub const HAND_INTENSITY: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("column {0} out of range 0..{COLUMNS}")]
    ColumnOutOfRange(usize),
    #[error("row {0} out of range 0..{ROWS}")]
    RowOutOfRange(usize),
    #[error("two balls share column {0}")]
    DuplicateColumn(usize),
    #[error("scene holds {0} balls, at most {MAX_BALLS} allowed")]
    TooManyBalls(usize),
    #[error("numerosity {0} exceeds {MAX_BALLS}")]
    Numerosity(usize),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("image is {got_w}x{got_h}, geometry expects {want_w}x{want_h}")]
    ImageSize {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Pixel layout of the ball grid inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridGeometry {
    pub image_height: usize,
    pub image_width: usize,
    pub cell_width: usize,
    pub cell_height: usize,
    pub ball_radius: usize,
}

impl GridGeometry {
    /// The camera-crop resolution: 40×134 with 12×8 cells and radius-3 balls.
    pub const FULL: GridGeometry = GridGeometry {
        image_height: 40,
        image_width: 134,
        cell_width: 12,
        cell_height: 8,
        ball_radius: 3,
    };

    /// Desk-scale layout (11×24, single-pixel balls) used for multi-seed studies
    /// on small machines. Same grid, same sprite construction, ~20x fewer pixels.
    pub const COMPACT: GridGeometry = GridGeometry {
        image_height: 11,
        image_width: 24,
        cell_width: 2,
        cell_height: 2,
        ball_radius: 0,
    };

    pub fn new(
        image_height: usize,
        image_width: usize,
        cell_width: usize,
        cell_height: usize,
        ball_radius: usize,
    ) -> Result<Self, SceneError> {
        let g = GridGeometry {
            image_height,
            image_width,
            cell_width,
            cell_height,
            ball_radius,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Geometry(m));
        if self.cell_width == 0 || self.cell_height == 0 {
            return bad("cell dimensions must be positive".into());
        }
        if self.cell_width * COLUMNS > self.image_width {
            return bad(format!(
                "{COLUMNS} columns of width {} exceed image width {}",
                self.cell_width, self.image_width
            ));
        }
        if self.cell_height * ROWS > self.image_height {
            return bad(format!(
                "{ROWS} rows of height {} exceed image height {}",
                self.cell_height, self.image_height
            ));
        }
        let diameter = 2 * self.ball_radius + 1;
        if diameter >= self.cell_width || diameter >= self.cell_height {
            return bad(format!(
                "ball diameter {diameter} must be smaller than the cell ({}x{}) so neighbouring balls never touch",
                self.cell_width, self.cell_height
            ));
        }
        // The topmost ball must stay clear of the trigger line in pixel row 0.
        let (_, top_y) = self.cell_center(0, ROWS - 1);
        if top_y < self.ball_radius + 1 {
            return bad("top row of balls would touch the trigger line".into());
        }
        let (_, bottom_y) = self.cell_center(0, 0);
        if bottom_y + self.ball_radius >= self.image_height {
            return bad("bottom row of balls leaves the image".into());
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.image_height * self.image_width
    }

    fn margin_x(&self) -> usize {
        (self.image_width - self.cell_width * COLUMNS) / 2
    }

    fn margin_y(&self) -> usize {
        (self.image_height - self.cell_height * ROWS) / 2
    }

    /// Horizontal pixel range belonging to a column.
    pub fn column_band(&self, column: usize) -> Range<usize> {
        let x0 = self.margin_x() + column * self.cell_width;
        x0..x0 + self.cell_width
    }

    /// Vertical pixel range belonging to a row (row 0 at the bottom).
    pub fn row_band(&self, row: usize) -> Range<usize> {
        let y0 = self.margin_y() + (ROWS - 1 - row) * self.cell_height;
        y0..y0 + self.cell_height
    }

    /// Integer pixel center of a grid cell.
    pub fn cell_center(&self, column: usize, row: usize) -> (usize, usize) {
        (
            self.column_band(column).start + self.cell_width / 2,
            self.row_band(row).start + self.cell_height / 2,
        )
    }

    /// Pixels lit by the visual trigger: pixel row 0, rightmost `TRIGGER_LENGTH` columns.
    pub fn trigger_span(&self) -> Range<usize> {
        self.image_width.saturating_sub(TRIGGER_LENGTH)..self.image_width
    }
}

impl Default for GridGeometry {
    fn default() -> Self {
        GridGeometry::FULL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ball {
    pub column: usize,
    pub row: usize,
}

/// Symbolic description of one visual input. Balls are kept sorted by column,
/// so iteration order is the left-to-right counting order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scene {
    balls: Vec<Ball>,
    pub visual_trigger: bool,
    pub hand: Option<usize>,
}

impl Scene {
    pub fn new(
        balls: impl IntoIterator<Item = (usize, usize)>,
        visual_trigger: bool,
        hand: Option<usize>,
    ) -> Result<Self, SceneError> {
        let mut balls: Vec<Ball> = balls
            .into_iter()
            .map(|(column, row)| Ball { column, row })
            .collect();
        balls.sort();
        let scene = Scene {
            balls,
            visual_trigger,
            hand,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn empty() -> Self {
        Scene {
            balls: Vec::new(),
            visual_trigger: false,
            hand: None,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.balls.len() > MAX_BALLS {
            return Err(SceneError::TooManyBalls(self.balls.len()));
        }
        let mut seen = [false; COLUMNS];
        for b in &self.balls {
            if b.column >= COLUMNS {
                return Err(SceneError::ColumnOutOfRange(b.column));
            }
            if b.row >= ROWS {
                return Err(SceneError::RowOutOfRange(b.row));
            }
            if seen[b.column] {
                return Err(SceneError::DuplicateColumn(b.column));
            }
            seen[b.column] = true;
        }
        match self.hand {
            Some(c) if c >= COLUMNS => Err(SceneError::ColumnOutOfRange(c)),
            _ => Ok(()),
        }
    }

    /// Balls in left-to-right order.
    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn numerosity(&self) -> usize {
        self.balls.len()
    }

    /// Occupied columns, left to right.
    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.balls.iter().map(|b| b.column)
    }

    pub fn with_hand(&self, hand: Option<usize>) -> Scene {
        Scene {
            hand,
            ..self.clone()
        }
    }
}

/// Parses the debug scene syntax `balls=2:1,7:3 hand=2 trigger=1`. Every key is
/// optional; an empty string is the empty scene.
impl FromStr for Scene {
    type Err = SpecParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut balls = Vec::new();
        let mut hand = None;
        let mut trigger = false;
        let mut offset = 0;
        for token in s.split(' ') {
            let at = offset;
            offset += token.len() + 1;
            if token.is_empty() {
                continue;
            }
            let err = |pos: usize, msg: String| SpecParseError {
                position: pos,
                message: msg,
            };
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| err(at, format!("expected key=value, found `{token}`")))?;
            let vpos = at + key.len() + 1;
            let parse_num = |text: &str, pos: usize| {
                text.parse::<usize>()
                    .map_err(|_| err(pos, format!("`{text}` is not a non-negative integer")))
            };
            match key {
                "balls" => {
                    let mut p = vpos;
                    for item in value.split(',') {
                        if !item.is_empty() {
                            let (c, r) = item
                                .split_once(':')
                                .ok_or_else(|| err(p, format!("expected column:row, found `{item}`")))?;
                            let column = parse_num(c, p)?;
                            let row = parse_num(r, p + c.len() + 1)?;
                            if column >= COLUMNS {
                                return Err(err(p, format!("column {column} out of range 0..{COLUMNS}")));
                            }
                            if row >= ROWS {
                                return Err(err(p + c.len() + 1, format!("row {row} out of range 0..{ROWS}")));
                            }
                            balls.push((column, row));
                        }
                        p += item.len() + 1;
                    }
                }
                "hand" => {
                    let c = parse_num(value, vpos)?;
                    if c >= COLUMNS {
                        return Err(err(vpos, format!("hand column {c} out of range 0..{COLUMNS}")));
                    }
                    hand = Some(c);
                }
                "trigger" => {
                    trigger = match value {
                        "0" | "false" => false,
                        "1" | "true" => true,
                        _ => return Err(err(vpos, format!("trigger must be 0 or 1, found `{value}`"))),
                    }
                }
                _ => return Err(err(at, format!("unknown key `{key}`"))),
            }
        }
        Scene::new(balls, trigger, hand).map_err(|e| SpecParseError {
            position: 0,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("scene spec error at byte {position}: {message}")]
pub struct SpecParseError {
    pub position: usize,
    pub message: String,
}

/// Grayscale pixel buffer, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer size mismatch");
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn for_geometry(geometry: &GridGeometry) -> Self {
        Image::zeros(geometry.image_width, geometry.image_height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|&&p| p > 0.0).count()
    }

    /// Binary portable graymap (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(io::BufWriter::new(f))
    }
}

/// Rasterizes a scene. Balls are filled white discs, the trigger is a white
/// segment in the top-right corner, and the hand sprite is drawn last so it
/// covers whatever lies beneath it.
pub fn render(scene: &Scene, geometry: &GridGeometry) -> Result<Image, SceneError> {
    scene.validate()?;
    geometry.validate()?;
    let mut img = render_unchecked(scene, geometry);
    if let Some(column) = scene.hand {
        composite(&mut img, &hand_sprite(column, geometry)?);
    }
    Ok(img)
}

fn render_unchecked(scene: &Scene, geometry: &GridGeometry) -> Image {
    let mut img = Image::for_geometry(geometry);
    let r = geometry.ball_radius as isize;
    for ball in scene.balls() {
        let (cx, cy) = geometry.cell_center(ball.column, ball.row);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    let x = (cx as isize + dx) as usize;
                    let y = (cy as isize + dy) as usize;
                    img.set(x, y, 1.0);
                }
            }
        }
    }
    if scene.visual_trigger {
        for x in geometry.trigger_span() {
            img.set(x, 0, 1.0);
        }
    }
    img
}

/// Sprite pixels replace scene pixels wherever the sprite is nonzero.
pub fn composite(base: &mut Image, sprite: &Image) {
    assert_eq!(
        (base.width, base.height),
        (sprite.width, sprite.height),
        "sprite and image sizes differ"
    );
    for (dst, &src) in base.pixels.iter_mut().zip(&sprite.pixels) {
        if src > 0.0 {
            *dst = src;
        }
    }
}

/// Tilt of the hand for a column: linear from -30° (column 0) to +30° (column 10).
pub fn hand_tilt(column: usize) -> f64 {
    (-30.0 + 60.0 * column as f64 / (COLUMNS - 1) as f64).to_radians()
}

/// The pointing hand for one column: a rectangular palm rising from the
/// bottom edge with a triangular finger whose tip sits over the column, just
/// above the lowest row's band. The whole shape is rotated by `hand_tilt`.
pub fn hand_sprite(column: usize, geometry: &GridGeometry) -> Result<Image, SceneError> {
    if column >= COLUMNS {
        return Err(SceneError::ColumnOutOfRange(column));
    }
    let mut img = Image::for_geometry(geometry);
    let theta = hand_tilt(column);
    let (sin, cos) = theta.sin_cos();
    // axis from the wrist (on the bottom edge) towards the fingertip
    let axis = (sin, -cos);
    let across = (cos, sin);

    let h = geometry.image_height as f64;
    let (cx, _) = geometry.cell_center(column, 0);
    let row0 = geometry.row_band(0);
    let reach = (h - row0.start as f64) + 0.15 * geometry.cell_height as f64;
    let tip = (cx as f64, h - reach);
    let length = reach / cos;
    let wrist = (tip.0 - length * axis.0, tip.1 - length * axis.1);
    let half_width = (0.3 * geometry.cell_width as f64).max(0.5);
    let palm_length = 0.6 * length;

    for y in 0..geometry.image_height {
        for x in 0..geometry.image_width {
            let px = x as f64 - wrist.0;
            let py = y as f64 - wrist.1;
            let along = px * axis.0 + py * axis.1;
            let side = (px * across.0 + py * across.1).abs();
            let inside = if along < 0.0 || along > length {
                false
            } else if along <= palm_length {
                side <= half_width
            } else {
                side <= half_width * (length - along) / (length - palm_length) + 0.5
            };
            if inside {
                img.set(x, y, HAND_INTENSITY);
            }
        }
    }
    Ok(img)
}

/// Pre-rendered sprites for all columns, stored sparsely for fast compositing.
#[derive(Debug, Clone)]
pub struct SpriteBank {
    geometry: GridGeometry,
    sprites: Vec<Vec<(usize, f64)>>,
}

impl SpriteBank {
    pub fn new(geometry: &GridGeometry) -> Result<Self, SceneError> {
        geometry.validate()?;
        let sprites = (0..COLUMNS)
            .map(|c| {
                let img = hand_sprite(c, geometry)?;
                Ok(img
                    .pixels()
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(i, &v)| (i, v))
                    .collect())
            })
            .collect::<Result<_, SceneError>>()?;
        Ok(SpriteBank {
            geometry: *geometry,
            sprites,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// Equivalent to `render(&scene.with_hand(Some(column)))` when `base` is
    /// the hand-free rendering of `scene`.
    pub fn composite_into(&self, base: &Image, column: usize) -> Image {
        let mut img = base.clone();
        for &(i, v) in &self.sprites[column] {
            img.pixels[i] = v;
        }
        img
    }

    /// Renders a scene, using the cached sprite when a hand is present.
    pub fn render(&self, scene: &Scene) -> Result<Image, SceneError> {
        scene.validate()?;
        let base = render_unchecked(scene, &self.geometry);
        Ok(match scene.hand {
            Some(c) => self.composite_into(&base, c),
            None => base,
        })
    }
}

/// Seven normalized joint values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posture(pub [f64; JOINTS]);

impl Posture {
    pub fn joints(&self) -> &[f64; JOINTS] {
        &self.0
    }

    pub fn distance(&self, other: &Posture) -> f64 {
        self.distance_to_slice(&other.0)
    }

    pub fn distance_to_slice(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Which canonical posture a gesture corresponds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PostureId {
    Base,
    Column(usize),
}

impl fmt::Display for PostureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PostureId::Base => write!(f, "base"),
            PostureId::Column(c) => write!(f, "{c}"),
        }
    }
}

/// Per-joint offset and span of the synthetic column→posture mapping.
pub const POSTURE_OFFSETS: [f64; JOINTS] = [0.10, 0.90, 0.15, 0.85, 0.10, 0.90, 0.50];
pub const POSTURE_SPANS: [f64; JOINTS] = [0.80, -0.80, 0.75, -0.75, 0.80, -0.80, 0.40];
pub const BASE_JOINT_VALUE: f64 = 0.1;
/// Smallest allowed distance between any two canonical postures.
pub const MIN_POSTURE_DISTANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct PostureTable {
    pub pointing: [Posture; COLUMNS],
    pub base: Posture,
}

impl PostureTable {
    /// Joint `j` for column `c` is `clamp(offset_j + span_j * c/10, 0, 1)`.
    pub fn synthetic(offsets: [f64; JOINTS], spans: [f64; JOINTS], base: f64) -> Self {
        let pointing = std::array::from_fn(|c| {
            let t = c as f64 / (COLUMNS - 1) as f64;
            Posture(std::array::from_fn(|j| {
                (offsets[j] + spans[j] * t).clamp(0.0, 1.0)
            }))
        });
        PostureTable {
            pointing,
            base: Posture([base; JOINTS]),
        }
    }

    pub fn posture(&self, id: PostureId) -> &Posture {
        match id {
            PostureId::Base => &self.base,
            PostureId::Column(c) => &self.pointing[c],
        }
    }

    /// Base first, then columns 0..10: the tie-break order of `snap`.
    pub fn entries(&self) -> impl Iterator<Item = (PostureId, &Posture)> {
        std::iter::once((PostureId::Base, &self.base)).chain(
            self.pointing
                .iter()
                .enumerate()
                .map(|(c, p)| (PostureId::Column(c), p)),
        )
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let all: Vec<&Posture> = self.entries().map(|(_, p)| p).collect();
        let mut best = f64::INFINITY;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                best = best.min(all[i].distance(all[j]));
            }
        }
        best
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let in_range = self
            .entries()
            .all(|(_, p)| p.0.iter().all(|v| (0.0..=1.0).contains(v)));
        if !in_range {
            return Err(SceneError::Geometry("posture joints must lie in [0,1]".into()));
        }
        let d = self.min_pairwise_distance();
        if d < MIN_POSTURE_DISTANCE {
            return Err(SceneError::Geometry(format!(
                "canonical postures only {d:.4} apart (need {MIN_POSTURE_DISTANCE})"
            )));
        }
        Ok(())
    }

    /// Nearest canonical posture; ties go to base, then the lowest column.
    pub fn snap(&self, joints: &[f64]) -> PostureId {
        let mut best = PostureId::Base;
        let mut best_d = f64::INFINITY;
        for (id, p) in self.entries() {
            let d: f64 = p
                .0
                .iter()
                .zip(joints)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = id;
            }
        }
        best
    }
}

impl Default for PostureTable {
    fn default() -> Self {
        PostureTable::synthetic(POSTURE_OFFSETS, POSTURE_SPANS, BASE_JOINT_VALUE)
    }
}

pub fn posture_for_column(column: usize) -> Result<Posture, SceneError> {
    if column >= COLUMNS {
        return Err(SceneError::ColumnOutOfRange(column));
    }
    Ok(PostureTable::default().pointing[column])
}

pub fn snap_posture(p: &Posture, table: &PostureTable) -> PostureId {
    table.snap(&p.0)
}

/// `numerosity` balls in distinct random columns, uniformly random rows.
pub fn random_scene<R: Rng + ?Sized>(numerosity: usize, rng: &mut R) -> Result<Scene, SceneError> {
    random_scene_in_rows(numerosity, 0..ROWS, rng)
}

/// Like `random_scene`, with rows drawn uniformly from `rows`.
pub fn random_scene_in_rows<R: Rng + ?Sized>(
    numerosity: usize,
    rows: Range<usize>,
    rng: &mut R,
) -> Result<Scene, SceneError> {
    if numerosity > MAX_BALLS {
        return Err(SceneError::Numerosity(numerosity));
    }
    if rows.is_empty() || rows.end > ROWS {
        return Err(SceneError::RowOutOfRange(rows.end));
    }
    let columns = index::sample(rng, COLUMNS, numerosity);
    let balls: Vec<(usize, usize)> = columns
        .iter()
        .map(|c| (c, rng.gen_range(rows.clone())))
        .collect();
    Scene::new(balls, false, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn white(img: &Image) -> usize {
        img.pixels().iter().filter(|&&p| p >= 0.5).count()
    }

    #[test]
    fn geometry_presets_are_valid() {
        GridGeometry::FULL.validate().unwrap();
        GridGeometry::COMPACT.validate().unwrap();
        assert_eq!(GridGeometry::FULL.column_band(0), 1..13);
        assert_eq!(GridGeometry::FULL.column_band(10), 121..133);
        assert!(GridGeometry::new(40, 100, 12, 8, 3).is_err());
        assert!(GridGeometry::new(40, 134, 12, 8, 4).is_err());
    }

    #[test]
    fn empty_scene_renders_black() {
        let img = render(&Scene::empty(), &GridGeometry::FULL).unwrap();
        assert_eq!(img.count_nonzero(), 0);
        assert_eq!((img.width(), img.height()), (134, 40));
    }

    #[test]
    fn single_ball_with_trigger() {
        let g = GridGeometry::FULL;
        let scene = Scene::new([(0, 0)], true, None).unwrap();
        let img = render(&scene, &g).unwrap();
        // independent disc rasterization
        let r = g.ball_radius as i64;
        let disc = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .count();
        assert_eq!(white(&img), disc + TRIGGER_LENGTH);

        let (cx, cy) = g.cell_center(0, 0);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 1..g.image_height {
            for x in 0..g.image_width {
                if img.get(x, y) >= 0.5 {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        assert!((sx / n - cx as f64).abs() <= 0.5);
        assert!((sy / n - cy as f64).abs() <= 0.5);
    }

    #[test]
    fn hand_only_changes_sprite_bbox() {
        let g = GridGeometry::FULL;
        let plain = Scene::new([(2, 1), (7, 3)], false, None).unwrap();
        let with = plain.with_hand(Some(2));
        let a = render(&plain, &g).unwrap();
        let b = render(&with, &g).unwrap();
        let sprite = hand_sprite(2, &g).unwrap();
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..g.image_height {
            for x in 0..g.image_width {
                if sprite.get(x, y) > 0.0 {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
            }
        }
        assert!(g.column_band(2).contains(&((x0 + x1) / 2)));
        for y in 0..g.image_height {
            for x in 0..g.image_width {
                let inside = (x0..=x1).contains(&x) && (y0..=y1).contains(&y);
                if !inside {
                    assert_eq!(a.get(x, y), b.get(x, y));
                } else if sprite.get(x, y) > 0.0 {
                    assert_eq!(b.get(x, y), HAND_INTENSITY);
                }
            }
        }
        // fingertip reaches up into row 1 and clips the ball there
        let (bx, by) = g.cell_center(2, 1);
        let r = g.ball_radius;
        let occluded = (by - r..=by + r)
            .flat_map(|y| (bx - r..=bx + r).map(move |x| (x, y)))
            .filter(|&(x, y)| a.get(x, y) == 1.0 && b.get(x, y) == HAND_INTENSITY)
            .count();
        assert!(occluded > 0);
    }

    fn centroid_x(img: &Image) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y) > 0.0 {
                    s += x as f64;
                    n += 1.0;
                }
            }
        }
        s / n
    }

    #[test]
    fn sprites_track_columns() {
        let g = GridGeometry::FULL;
        let left = hand_sprite(0, &g).unwrap();
        let right = hand_sprite(10, &g).unwrap();
        let mid = g.image_width as f64 / 2.0;
        assert!(centroid_x(&left) < mid && centroid_x(&right) > mid);
        let five = hand_sprite(5, &g).unwrap();
        let band = g.column_band(5);
        let cx = centroid_x(&five);
        assert!(cx >= band.start as f64 && cx < band.end as f64);
        let all: Vec<Image> = (0..COLUMNS).map(|c| hand_sprite(c, &g).unwrap()).collect();
        for (i, s) in all.iter().enumerate() {
            assert!(s.count_nonzero() >= 30, "column {i}: {}", s.count_nonzero());
            for t in &all[i + 1..] {
                assert_ne!(s, t);
            }
        }
        assert!(hand_sprite(11, &g).is_err());
    }

    #[test]
    fn sprite_bank_matches_render() {
        for g in [GridGeometry::FULL, GridGeometry::COMPACT] {
            let bank = SpriteBank::new(&g).unwrap();
            let scene = Scene::new([(1, 0), (4, 2), (9, 4)], true, Some(4)).unwrap();
            assert_eq!(bank.render(&scene).unwrap(), render(&scene, &g).unwrap());
        }
    }

    #[test]
    fn render_rejects_bad_scenes() {
        let dup = Scene {
            balls: vec![Ball { column: 3, row: 0 }, Ball { column: 3, row: 2 }],
            visual_trigger: false,
            hand: None,
        };
        assert_eq!(render(&dup, &GridGeometry::FULL), Err(SceneError::DuplicateColumn(3)));
        assert!(Scene::new([(11, 0)], false, None).is_err());
        assert!(Scene::new([(1, 5)], false, None).is_err());
        assert!(Scene::new([(1, 1)], false, Some(11)).is_err());
    }

    #[test]
    fn posture_table_invariants() {
        let t = PostureTable::default();
        t.validate().unwrap();
        assert!(t.min_pairwise_distance() >= MIN_POSTURE_DISTANCE);
        assert_ne!(posture_for_column(0).unwrap(), posture_for_column(10).unwrap());
        for (id, p) in t.entries() {
            assert_eq!(snap_posture(p, &t), id);
        }
        assert!(posture_for_column(11).is_err());
    }

    #[test]
    fn snap_blend_goes_to_nearer_column() {
        let t = PostureTable::default();
        let mut blend = [0.0; JOINTS];
        for j in 0..JOINTS {
            blend[j] = 0.9 * t.pointing[4].0[j] + 0.1 * t.pointing[5].0[j];
        }
        assert_eq!(snap_posture(&Posture(blend), &t), PostureId::Column(4));
    }

    #[test]
    fn snap_ties_prefer_base_then_low_column() {
        let mut t = PostureTable::default();
        t.pointing[3] = t.pointing[2];
        assert_eq!(t.snap(&t.pointing[2].0), PostureId::Column(2));
        t.pointing[0] = t.base;
        assert_eq!(t.snap(&t.base.0), PostureId::Base);
    }

    #[test]
    fn random_scene_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_scene(0, &mut rng).unwrap().numerosity(), 0);
        let full = random_scene(10, &mut rng).unwrap();
        let mut cols: Vec<usize> = full.columns().collect();
        cols.dedup();
        assert_eq!(cols.len(), 10);
        assert!(random_scene(11, &mut rng).is_err());
    }

    #[test]
    fn single_ball_columns_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut counts = [0usize; COLUMNS];
        for _ in 0..n {
            let s = random_scene(1, &mut rng).unwrap();
            counts[s.balls()[0].column] += 1;
        }
        let p = 1.0 / COLUMNS as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let e = n as f64 * p;
                assert!((c as f64 - e).abs() < 5.0 * sigma);
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 10 dof; 0.999 quantile is 29.6
        assert!(chi2 < 29.6, "chi2 = {chi2}");
    }

    #[test]
    fn parse_scene_spec() {
        let s: Scene = "balls=2:1,7:3 hand=2 trigger=1".parse().unwrap();
        assert_eq!(s.numerosity(), 2);
        assert_eq!(s.hand, Some(2));
        assert!(s.visual_trigger);
        assert_eq!("".parse::<Scene>().unwrap(), Scene::empty());
        let e = "balls=11:0".parse::<Scene>().unwrap_err();
        assert_eq!(e.position, 6);
        let e = "balls=1:0 hand=x".parse::<Scene>().unwrap_err();
        assert_eq!(e.position, 15);
        assert!("colour=3".parse::<Scene>().is_err());
    }

    #[test]
    fn pgm_header() {
        let img = render(&Scene::new([(0, 0)], false, None).unwrap(), &GridGeometry::COMPACT).unwrap();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n24 11\n255\n"));
        assert_eq!(buf.len(), 13 + 24 * 11);
    }
}

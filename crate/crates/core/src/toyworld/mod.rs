//! Deterministic synthetic scenes: moving shapes on a dark canvas, with
//! templated captions drawn from a closed vocabulary.
//!
//! Stands in for a photographic evaluation set. Rendering is a pure function
//! of (scene, frame count, canvas size): repeated calls are bit-identical.

mod manifest;
mod render;
pub mod vocab;

pub use manifest::{load_manifest, save_manifest, validate_manifest, Manifest, ManifestEntry};
pub use render::{intensity_centroid, render_scene, Video, BACKGROUND};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Magenta,
        Color::Cyan,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.95, 0.15, 0.15],
            Color::Green => [0.15, 0.9, 0.2],
            Color::Blue => [0.2, 0.3, 0.95],
            Color::Yellow => [0.95, 0.9, 0.15],
            Color::Magenta => [0.9, 0.2, 0.9],
            Color::Cyan => [0.15, 0.85, 0.9],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Right,
    Left,
    Up,
    Down,
    Circular,
}

impl Motion {
    pub const ALL: [Motion; 5] = [
        Motion::Right,
        Motion::Left,
        Motion::Up,
        Motion::Down,
        Motion::Circular,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Motion::Right => "right",
            Motion::Left => "left",
            Motion::Up => "up",
            Motion::Down => "down",
            Motion::Circular => "circular",
        }
    }
}

/// One synthetic scene: a colored shape following a motion law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub shape: ShapeKind,
    pub color: Color,
    pub motion: Motion,
    /// Pixels per frame along the motion law.
    pub speed: f64,
    pub seed: u64,
}

impl Scene {
    /// Draw a scene uniformly from the closed vocabulary.
    pub fn sample(rng: &mut DetRng, speed_range: (f64, f64)) -> Self {
        Scene {
            shape: ShapeKind::ALL[rng.index(3)],
            color: Color::ALL[rng.index(6)],
            motion: Motion::ALL[rng.index(5)],
            speed: (rng.uniform(speed_range.0, speed_range.1) * 2.0).round() / 2.0,
            seed: rng.index(1 << 31) as u64,
        }
    }
}

/// Deterministic caption template: `[color, shape, "moving", motion]`.
pub fn caption(scene: &Scene) -> Vec<String> {
    vec![
        scene.color.word().to_string(),
        scene.shape.word().to_string(),
        "moving".to_string(),
        scene.motion.word().to_string(),
    ]
}

/// A caption for a scene whose shape and motion both differ from the
/// input's. Color is re-drawn freely; the shape/motion mismatch is what makes
/// the prompt conflict with the source content.
pub fn make_bad_prompt(scene: &Scene, rng_seed: u64) -> Vec<String> {
    let mut rng = DetRng::new(rng_seed, "bad-prompt");
    let shapes: Vec<ShapeKind> = ShapeKind::ALL
        .into_iter()
        .filter(|s| *s != scene.shape)
        .collect();
    let motions: Vec<Motion> = Motion::ALL
        .into_iter()
        .filter(|m| *m != scene.motion)
        .collect();
    let other = Scene {
        shape: shapes[rng.index(shapes.len())],
        color: Color::ALL[rng.index(6)],
        motion: motions[rng.index(motions.len())],
        speed: scene.speed,
        seed: 0,
    };
    caption(&other)
}

/// A good/bad prompt pair attached to a scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptPair {
    pub good: Vec<String>,
    pub bad: Vec<String>,
    pub scene_id: String,
}

impl PromptPair {
    pub fn validate(&self) -> Result<()> {
        for word in self.good.iter().chain(self.bad.iter()) {
            vocab::id_of(word)
                .ok_or_else(|| Error::Validation(format!("token '{word}' not in vocabulary")))?;
        }
        Ok(())
    }
}

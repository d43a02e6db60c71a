//! Seeded 10-class "colored shapes" images.

use crate::data::{Dataset, Normalization, Split};
use crate::diffcore::init::streams;
use crate::diffcore::{Rng, Tensor};
use crate::error::{Error, Result};

pub const CLASSES: usize = 10;
pub const SIDE: usize = 32;

pub const CLASS_NAMES: [&str; CLASSES] = [
    "disk", "square", "triangle", "plus", "ring", "hbar", "vbar", "diamond", "cross", "frame",
];

/// Knobs of the generator; the defaults are what the tests and CLI use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
    /// Maximum rotation in radians.
    pub max_rotation: f32,
    /// Maximum centre offset in pixels.
    pub jitter: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            noise: 0.05,
            max_rotation: 0.15,
            jitter: 3.0,
        }
    }
}

/// Whether normalized point `(u, v)` lies inside shape `class`.
fn inside(class: usize, u: f32, v: f32) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let r = (u * u + v * v).sqrt();
    match class {
        0 => r <= 1.0,
        1 => au <= 0.85 && av <= 0.85,
        2 => v <= 0.8 && v >= -0.9 + 1.7 * au / 0.95,
        3 => (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0),
        4 => (0.6..=1.0).contains(&r),
        5 => au <= 1.0 && av <= 0.35,
        6 => au <= 0.35 && av <= 1.0,
        7 => au + av <= 1.0,
        8 => ((u - v).abs() <= 0.35 || (u + v).abs() <= 0.35) && au <= 0.9 && av <= 0.9,
        9 => au <= 0.9 && av <= 0.9 && (au >= 0.55 || av >= 0.55),
        _ => unreachable!("class index below CLASSES"),
    }
}

fn color(rng: &mut Rng) -> [f32; 3] {
    [
        rng.uniform(0.0, 1.0),
        rng.uniform(0.0, 1.0),
        rng.uniform(0.0, 1.0),
    ]
}

fn distance(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

/// Renders one `3 × 32 × 32` image of `class` into `out`.
fn render(class: usize, rng: &mut Rng, cfg: &SyntheticConfig, out: &mut [f32]) {
    let bg = color(rng);
    let mut fg = color(rng);
    while distance(fg, bg) < 0.9 {
        fg = color(rng);
    }
    let half = SIDE as f32 / 2.0;
    let cx = half + rng.uniform(-cfg.jitter, cfg.jitter);
    let cy = half + rng.uniform(-cfg.jitter, cfg.jitter);
    let scale = rng.uniform(7.0, 11.0);
    let theta = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
    let (sin, cos) = theta.sin_cos();
    let plane = SIDE * SIDE;
    for y in 0..SIDE {
        for x in 0..SIDE {
            let dx = (x as f32 + 0.5 - cx) / scale;
            let dy = (y as f32 + 0.5 - cy) / scale;
            let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            let c = if inside(class, u, v) { fg } else { bg };
            for ch in 0..3 {
                let noisy = c[ch] + cfg.noise * rng.normal();
                out[ch * plane + y * SIDE + x] = noisy.clamp(0.0, 1.0);
            }
        }
    }
}

/// `n` images with balanced, shuffled labels. Different splits of the same
/// seed never share images.
pub fn generate(n: usize, seed: u64, split: Split, cfg: &SyntheticConfig) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract(
            "data-io",
            "synthetic dataset needs at least one image",
        ));
    }
    let stream = streams::DATA * 16 + split as u64;
    let mut rng = Rng::new(seed, stream);
    let mut labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    rng.shuffle(&mut labels);
    let item = 3 * SIDE * SIDE;
    let mut data = vec![0.0f32; n * item];
    for (i, &label) in labels.iter().enumerate() {
        render(label, &mut rng, cfg, &mut data[i * item..(i + 1) * item]);
    }
    let images = Tensor::new(vec![n, 3, SIDE, SIDE], data)?;
    Dataset::new(images, labels, CLASSES, split, Normalization::Vanilla01)
}

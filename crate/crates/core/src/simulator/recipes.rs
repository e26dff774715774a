use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{oracle_settings, MotionSegment, NoiseSpec, ObjectSpec, SceneConfig, Shape};

/// Parameters for [`random_scene`].
///
/// Objects travel horizontally, one per lane, so they pass each other
/// without overlapping; static full-height walls in front of every lane
/// provide the occlusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecipe {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub objects: [usize; 2],
    /// Object width and height range in pixels.
    pub size: [f64; 2],
    /// Speed range in pixels per frame.
    pub speed: [f64; 2],
    pub walls: [usize; 2],
    pub wall_width: [f64; 2],
    /// Allows objects to start off-screen and to pop in or out mid-video.
    pub entries: bool,
    pub feature_dim: usize,
    pub noise: NoiseSpec,
}

impl SceneRecipe {
    /// Slow, noise-free scenes with occlusions, entries and exits.
    pub fn closure() -> Self {
        SceneRecipe {
            width: 160,
            height: 120,
            frames: 30,
            objects: [2, 6],
            size: [12.0, 28.0],
            speed: [1.0, 4.0],
            walls: [1, 2],
            wall_width: [6.0, 16.0],
            entries: true,
            feature_dim: 64,
            noise: NoiseSpec::default(),
        }
    }

    /// Objects moving 10 to 16 pixels per frame, seen through a noisy
    /// detector.
    pub fn fast_motion() -> Self {
        SceneRecipe {
            width: 192,
            height: 128,
            frames: 24,
            objects: [2, 4],
            size: [16.0, 28.0],
            speed: [10.0, 16.0],
            walls: [1, 2],
            wall_width: [8.0, 20.0],
            entries: true,
            feature_dim: 64,
            noise: NoiseSpec {
                box_jitter: 3.0,
                miss_prob: 0.3,
                feature_noise: 0.05,
                flow_error: 0.25,
                distractor_rate: 0.2,
                distractor_quality: 0.85,
                ..NoiseSpec::default()
            },
        }
    }
}

/// Label of the static occluders of [`random_scene`].
pub const WALL_LABEL: &str = "wall";

/// Draws a scene from `recipe`; the seed also becomes the scene seed.
pub fn random_scene(recipe: &SceneRecipe, seed: u64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (w, h) = (f64::from(recipe.width), f64::from(recipe.height));
    let frames = recipe.frames;
    let n = rng.random_range(recipe.objects[0]..=recipe.objects[1]).max(1);
    let lane = h / n as f64;

    let mut objects = Vec::new();
    for i in 0..n {
        let max_h = recipe.size[1].min(lane - 4.0).max(2.0);
        let min_h = recipe.size[0].min(max_h);
        let size = [
            rng.random_range(recipe.size[0]..=recipe.size[1]),
            rng.random_range(min_h..=max_h),
        ];
        let speed = rng.random_range(recipe.speed[0]..=recipe.speed[1]);
        let rightward = rng.random_bool(0.5);
        let vx = if rightward { speed } else { -speed };
        let offscreen = recipe.entries && rng.random_bool(0.5);
        let x = if offscreen {
            // enters within the first few frames
            let lead = size[0] / 2.0 + rng.random_range(0.0..=3.0) * speed;
            if rightward {
                -lead
            } else {
                w + lead
            }
        } else {
            rng.random_range(size[0] / 2.0 + 2.0..=(w - size[0] / 2.0 - 2.0).max(size[0] / 2.0 + 2.0))
        };
        let enter_frame = if recipe.entries && rng.random_bool(0.25) {
            rng.random_range(1..=(frames / 3).max(1))
        } else {
            0
        };
        let exit_frame = if recipe.entries && rng.random_bool(0.25) {
            let lo = (2 * frames / 3).max(enter_frame + 1);
            Some(rng.random_range(lo..=frames.max(lo)))
        } else {
            None
        };
        let shape = if rng.random_bool(0.5) {
            Shape::Rectangle
        } else {
            Shape::Ellipse
        };
        objects.push(ObjectSpec {
            label: match shape {
                Shape::Rectangle => "square".into(),
                Shape::Ellipse => "disc".into(),
            },
            shape,
            size,
            center: [x, (i as f64 + 0.5) * lane],
            depth: i as i32,
            motion: vec![MotionSegment {
                start: 0,
                velocity: [vx, 0.0],
                scale: [1.0, 1.0],
            }],
            enter_frame,
            exit_frame,
            feature: None,
        });
    }

    let walls = rng.random_range(recipe.walls[0]..=recipe.walls[1]);
    for j in 0..walls {
        let width = rng.random_range(recipe.wall_width[0]..=recipe.wall_width[1]);
        let slot = w / (walls + 1) as f64;
        let x = (j + 1) as f64 * slot + rng.random_range(-0.25..=0.25) * slot;
        objects.push(ObjectSpec {
            label: WALL_LABEL.into(),
            shape: Shape::Rectangle,
            size: [width, h],
            center: [x.round(), h / 2.0],
            depth: 1000 + j as i32,
            motion: vec![],
            enter_frame: 0,
            exit_frame: None,
            feature: None,
        });
    }

    SceneConfig {
        width: recipe.width,
        height: recipe.height,
        frames,
        seed,
        feature_dim: recipe.feature_dim,
        objects,
        noise: recipe.noise,
        provider: oracle_settings(),
        gt_min_visibility: 0.5,
    }
}

/// A re-identification trial: a small object passes fully behind a wall
/// for 1 to 3 frames while a second object moves unoccluded in another
/// lane. Features carry standard deviation `feature_noise`.
pub fn occlusion_trial(seed: u64, feature_noise: f64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let size = 8.0;
    let speed = rng.random_range(3.0..=5.0);
    let hidden = rng.random_range(1..=3) as f64;
    let wall_width = size + hidden * speed;
    let wall_left = 48.0;
    let lead = rng.random_range(6.0..=9.0);
    let shape = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            (Shape::Rectangle, "square")
        } else {
            (Shape::Ellipse, "disc")
        }
    };
    let (s0, l0) = shape(&mut rng);
    let (s1, l1) = shape(&mut rng);
    let v1 = rng.random_range(-3.0..=3.0);
    let mover = |label: &str, shape, center, depth, velocity| ObjectSpec {
        label: label.into(),
        shape,
        size: [size, size],
        center,
        depth,
        motion: vec![MotionSegment {
            start: 0,
            velocity,
            scale: [1.0, 1.0],
        }],
        enter_frame: 0,
        exit_frame: None,
        feature: None,
    };
    SceneConfig {
        width: 128,
        height: 48,
        frames: 20,
        seed,
        feature_dim: 64,
        objects: vec![
            mover(l0, s0, [wall_left + size / 2.0 - lead * speed, 12.0], 0, [speed, 0.0]),
            mover(l1, s1, [64.0, 36.0], 1, [v1, 0.0]),
            ObjectSpec {
                label: WALL_LABEL.into(),
                shape: Shape::Rectangle,
                size: [wall_width, 24.0],
                center: [wall_left + wall_width / 2.0, 12.0],
                depth: 1000,
                motion: vec![],
                enter_frame: 0,
                exit_frame: None,
                feature: None,
            },
        ],
        noise: NoiseSpec {
            feature_noise,
            ..NoiseSpec::default()
        },
        provider: oracle_settings(),
        gt_min_visibility: 0.5,
    }
}

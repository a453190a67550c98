use serde::{Deserialize, Serialize};

use crate::image::RgbImage;
use crate::rng::seeded;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Disk,
    Hexagon,
    Rectangle,
    Ring,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Front,
    Up,
}

impl ViewKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Front => "front",
            ViewKind::Up => "up",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "front" => Some(ViewKind::Front),
            "up" => Some(ViewKind::Up),
            _ => None,
        }
    }
}

/// Category presets: mechanical parts first, then electronic ones.
pub const CATEGORIES: [&str; 10] = [
    "screw",
    "nut",
    "bearing",
    "gasket",
    "nail",
    "hex_stud",
    "capacitor",
    "resistor",
    "red_led",
    "green_led",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitive: Primitive,
    pub color: [f64; 3],
    /// Extent of the primitive as a fraction of the frame, in `(0, 1]`.
    pub size: f64,
    pub category: String,
}

impl SceneSpec {
    pub fn new(primitive: Primitive, color: [f64; 3], size: f64, category: impl Into<String>) -> Self {
        assert!(size > 0.0 && size <= 1.0, "size must be in (0, 1]");
        assert!(color.iter().all(|c| (0.0..=1.0).contains(c)), "color out of range");
        Self {
            primitive,
            color,
            size,
            category: category.into(),
        }
    }

    /// Preset for one of [`CATEGORIES`].
    pub fn preset(category: &str) -> Option<Self> {
        let (prim, color, size) = match category {
            "screw" => (Primitive::Disk, [0.45, 0.5, 0.62], 0.6),
            "nut" => (Primitive::Hexagon, [0.55, 0.55, 0.6], 0.55),
            "bearing" => (Primitive::Ring, [0.35, 0.4, 0.5], 0.7),
            "gasket" => (Primitive::Ring, [0.15, 0.15, 0.15], 0.65),
            "nail" => (Primitive::Rectangle, [0.5, 0.45, 0.4], 0.7),
            "hex_stud" => (Primitive::Hexagon, [0.7, 0.6, 0.2], 0.45),
            "capacitor" => (Primitive::Disk, [0.85, 0.6, 0.2], 0.4),
            "resistor" => (Primitive::Rectangle, [0.3, 0.6, 0.9], 0.5),
            "red_led" => (Primitive::Disk, [0.9, 0.1, 0.1], 0.35),
            "green_led" => (Primitive::Disk, [0.1, 0.8, 0.2], 0.35),
            _ => return None,
        };
        Some(Self::new(prim, color, size, category))
    }

    /// A seeded random scene with a saturated color on white.
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let primitive = [
            Primitive::Disk,
            Primitive::Hexagon,
            Primitive::Rectangle,
            Primitive::Ring,
        ][rng.random_range(0..4)];
        let hue = rng.random_range(0.0..6.0);
        let color = saturated(hue, rng.random_range(0.5..0.9));
        let size = rng.random_range(0.35..0.8);
        let category = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
        Self::new(primitive, color, size, category)
    }
}

fn saturated(hue: f64, value: f64) -> [f64; 3] {
    let x = 1.0 - ((hue % 2.0) - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    // keep saturation ≥ 0.6 by lifting the floor slightly
    [r, g, b].map(|c| value * (0.2 + 0.8 * c))
}

/// Whether normalized point `(u, v)` in `[-1, 1]²` is covered.
fn covers(scene: &SceneSpec, view: ViewKind, u: f64, v: f64) -> bool {
    let r = scene.size;
    let screw = scene.category == "screw";
    match view {
        ViewKind::Up => {
            let inside = match scene.primitive {
                Primitive::Disk => u * u + v * v <= r * r,
                Primitive::Hexagon => {
                    let s3 = 3f64.sqrt();
                    v.abs() <= s3 / 2.0 * r && s3 * u.abs() + v.abs() <= s3 * r
                }
                Primitive::Rectangle => u.abs() <= r && v.abs() <= 0.6 * r,
                Primitive::Ring => {
                    let d2 = u * u + v * v;
                    d2 <= r * r && d2 >= 0.25 * r * r
                }
            };
            // slotted head
            inside && !(screw && v.abs() <= 0.12 * r && u.abs() <= 0.8 * r)
        }
        ViewKind::Front => {
            if screw {
                let head = u.abs() <= r && (-r..=-0.6 * r).contains(&v);
                let shaft = u.abs() <= 0.35 * r && (-0.6 * r..=r).contains(&v);
                return head || shaft;
            }
            let half_height = match scene.primitive {
                Primitive::Disk => 0.3,
                Primitive::Hexagon => 0.45,
                Primitive::Rectangle => 0.35,
                Primitive::Ring => 0.2,
            } * r;
            u.abs() <= r && v.abs() <= half_height
        }
    }
}

/// Renders one view and returns the image with its coverage map.
pub fn render_view(scene: &SceneSpec, view: ViewKind, resolution: usize) -> (RgbImage, Tensor) {
    let mut img = RgbImage::filled(resolution, resolution, [1.0; 3]);
    let mut coverage = Tensor::zeros(&[resolution, resolution]);
    let res = resolution as f64;
    for y in 0..resolution {
        for x in 0..resolution {
            let u = (x as f64 + 0.5) / res * 2.0 - 1.0;
            let v = (y as f64 + 0.5) / res * 2.0 - 1.0;
            if covers(scene, view, u, v) {
                img.set(x, y, scene.color);
                coverage.data_mut()[y * resolution + x] = 1.0;
            }
        }
    }
    (img, coverage)
}

pub fn render_views(scene: &SceneSpec, views: &[ViewKind], resolution: usize) -> Vec<RgbImage> {
    views.iter().map(|&v| render_view(scene, v, resolution).0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{hsv_mask, HsvThresholds};

    #[test]
    fn background_is_pure_white() {
        let s = SceneSpec::preset("nut").unwrap();
        let (img, cov) = render_view(&s, ViewKind::Up, 32);
        for (p, c) in img.pixels().iter().zip(cov.data()) {
            if *c == 0.0 {
                assert_eq!(*p, [1.0, 1.0, 1.0]);
            }
        }
    }

    #[test]
    fn disk_area_matches_analytic() {
        let s = SceneSpec::new(Primitive::Disk, [0.9, 0.1, 0.1], 0.5, "red_led");
        let (_, cov) = render_view(&s, ViewKind::Up, 64);
        let area = cov.sum();
        let want = std::f64::consts::PI * 16.0 * 16.0;
        assert!((area - want).abs() / want < 0.05, "{area} vs {want}");
    }

    #[test]
    fn deterministic() {
        let s = SceneSpec::random(9);
        assert_eq!(SceneSpec::random(9), s);
        let a = render_views(&s, &[ViewKind::Front, ViewKind::Up], 64);
        let b = render_views(&s, &[ViewKind::Front, ViewKind::Up], 64);
        assert_eq!(a, b);
    }

    #[test]
    fn hsv_mask_recovers_coverage() {
        for cat in CATEGORIES {
            let s = SceneSpec::preset(cat).unwrap();
            for view in [ViewKind::Front, ViewKind::Up] {
                let (img, cov) = render_view(&s, view, 64);
                assert_eq!(hsv_mask(&img, HsvThresholds::default()), cov, "{cat} {view:?}");
            }
        }
        for seed in 0..20 {
            let s = SceneSpec::random(seed);
            let (img, cov) = render_view(&s, ViewKind::Up, 48);
            assert_eq!(hsv_mask(&img, HsvThresholds::default()), cov);
        }
    }

    #[test]
    fn screw_top_has_slot() {
        let s = SceneSpec::preset("screw").unwrap();
        let (_, cov) = render_view(&s, ViewKind::Up, 64);
        assert_eq!(cov.data()[32 * 64 + 32], 0.0);
        assert_eq!(cov.data()[20 * 64 + 32], 1.0);
    }
}

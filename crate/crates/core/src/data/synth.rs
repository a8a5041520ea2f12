//! Shape sampler and rasterizer.
//!
//! Each image gets a smooth random background (base color plus a sinusoidal
//! texture), one to four shapes painted in order (later shapes occlude
//! earlier ones), and additive Gaussian pixel noise. Shape kinds are drawn
//! with probabilities 0.4 / 0.3 / 0.2 / 0.1 and differ in typical area, so
//! class frequencies are imbalanced. Colors lean towards a per-class hue
//! with wide jitter, so color alone does not identify the class.

use std::f64::consts::PI;

use super::{Dataset, DatasetSpec, IMAGE_CHANNELS};
use crate::error::Result;
use crate::rng::{streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disc,
    Triangle,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Rectangle,
        ShapeKind::Disc,
        ShapeKind::Triangle,
        ShapeKind::Ring,
    ];

    pub fn class_id(self) -> u8 {
        match self {
            ShapeKind::Rectangle => 1,
            ShapeKind::Disc => 2,
            ShapeKind::Triangle => 3,
            ShapeKind::Ring => 4,
        }
    }

    fn prior(self) -> f64 {
        match self {
            ShapeKind::Rectangle => 0.4,
            ShapeKind::Disc => 0.3,
            ShapeKind::Triangle => 0.2,
            ShapeKind::Ring => 0.1,
        }
    }

    /// Size range as a fraction of the shorter image side.
    fn size_range(self) -> (f64, f64) {
        match self {
            ShapeKind::Rectangle => (0.10, 0.24),
            ShapeKind::Disc => (0.08, 0.18),
            ShapeKind::Triangle => (0.10, 0.22),
            ShapeKind::Ring => (0.10, 0.18),
        }
    }

    fn hue(self) -> [f64; 3] {
        match self {
            ShapeKind::Rectangle => [0.85, 0.30, 0.25],
            ShapeKind::Disc => [0.25, 0.75, 0.35],
            ShapeKind::Triangle => [0.30, 0.40, 0.85],
            ShapeKind::Ring => [0.85, 0.80, 0.30],
        }
    }
}

/// One placed shape. Coordinates are in pixels; pixel `(x, y)` is tested at
/// its center `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    /// Half-extent (rectangle), radius (disc, triangle) or outer radius (ring).
    pub size: f64,
    /// Rectangle height/width ratio or ring inner/outer radius ratio.
    pub ratio: f64,
    pub angle: f64,
    pub color: [f32; 3],
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Disc => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                let inner = self.size * self.ratio;
                d2 <= self.size * self.size && d2 >= inner * inner
            }
            ShapeKind::Rectangle => {
                let (s, c) = self.angle.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= self.size && v.abs() <= self.size * self.ratio
            }
            ShapeKind::Triangle => {
                let vert = |k: f64| {
                    let a = self.angle + k * 2.0 * PI / 3.0;
                    (self.cx + self.size * a.cos(), self.cy + self.size * a.sin())
                };
                let (a, b, c) = (vert(0.0), vert(1.0), vert(2.0));
                let cross = |p: (f64, f64), q: (f64, f64)| {
                    (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0)
                };
                let (d1, d2, d3) = (cross(a, b), cross(b, c), cross(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }

    /// Paints the shape into a `[3, h, w]` image and its `[h, w]` label map.
    pub fn render(&self, image: &mut [f32], labels: &mut [u8], h: usize, w: usize) {
        for y in 0..h {
            for x in 0..w {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let p = y * w + x;
                    labels[p] = self.kind.class_id();
                    for ch in 0..IMAGE_CHANNELS {
                        image[ch * h * w + p] = self.color[ch];
                    }
                }
            }
        }
    }

    fn sample(rng: &mut Rng, kinds: &[ShapeKind], h: usize, w: usize) -> Shape {
        let total: f64 = kinds.iter().map(|k| k.prior()).sum();
        let mut pick = rng.uniform() * total;
        let mut kind = kinds[kinds.len() - 1];
        for &k in kinds {
            if pick < k.prior() {
                kind = k;
                break;
            }
            pick -= k.prior();
        }
        let side = h.min(w) as f64;
        let (lo, hi) = kind.size_range();
        let size = side * rng.uniform_range(lo, hi);
        let ratio = match kind {
            ShapeKind::Rectangle => rng.uniform_range(0.4, 1.0),
            ShapeKind::Ring => rng.uniform_range(0.45, 0.65),
            _ => 1.0,
        };
        let hue = kind.hue();
        let mut color = [0.0f32; 3];
        for (c, base) in color.iter_mut().zip(hue) {
            *c = (base + rng.uniform_range(-0.25, 0.25)).clamp(0.0, 1.0) as f32;
        }
        Shape {
            kind,
            cx: rng.uniform_range(0.0, w as f64),
            cy: rng.uniform_range(0.0, h as f64),
            size,
            ratio,
            angle: rng.uniform_range(0.0, 2.0 * PI),
            color,
        }
    }
}

const NOISE_STD: f64 = 0.06;

fn render_sample(
    rng: &mut Rng,
    kinds: &[ShapeKind],
    h: usize,
    w: usize,
    image: &mut [f32],
    labels: &mut [u8],
) {
    let px = h * w;
    // background: base color + one oriented sinusoid
    let base: Vec<f64> = (0..IMAGE_CHANNELS)
        .map(|_| rng.uniform_range(0.25, 0.65))
        .collect();
    let gain: Vec<f64> = (0..IMAGE_CHANNELS)
        .map(|_| rng.uniform_range(0.03, 0.15))
        .collect();
    let freq = rng.uniform_range(0.1, 0.6);
    let theta = rng.uniform_range(0.0, PI);
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let (fx, fy) = (freq * theta.cos(), freq * theta.sin());
    for y in 0..h {
        for x in 0..w {
            let t = (fx * x as f64 + fy * y as f64 + phase).sin();
            for ch in 0..IMAGE_CHANNELS {
                image[ch * px + y * w + x] = (base[ch] + gain[ch] * t) as f32;
            }
        }
    }
    labels.fill(0);
    let count = 1 + rng.below(4) as usize;
    for _ in 0..count {
        Shape::sample(rng, kinds, h, w).render(image, labels, h, w);
    }
    for v in image.iter_mut() {
        *v = (*v as f64 + NOISE_STD * rng.normal()).clamp(0.0, 1.0) as f32;
    }
}

fn generate_split(spec: &DatasetSpec, stream: u64, count: usize) -> Result<Dataset> {
    let (h, w) = (spec.height, spec.width);
    let kinds: Vec<ShapeKind> = ShapeKind::ALL
        .iter()
        .copied()
        .filter(|k| (k.class_id() as usize) < spec.classes)
        .collect();
    let split_seed = Rng::derive(spec.seed, stream).next_u64();
    let mut images = vec![0.0f32; count * IMAGE_CHANNELS * h * w];
    let mut labels = vec![0u8; count * h * w];
    for (i, (img, lab)) in images
        .chunks_mut(IMAGE_CHANNELS * h * w)
        .zip(labels.chunks_mut(h * w))
        .enumerate()
    {
        let mut rng = Rng::derive(split_seed, i as u64);
        render_sample(&mut rng, &kinds, h, w, img, lab);
    }
    Dataset::new(h, w, spec.classes, images, labels)
}

/// Builds the `(train, val)` splits. A pure function of `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    Ok((
        generate_split(spec, streams::DATA_TRAIN, spec.n_train)?,
        generate_split(spec, streams::DATA_VAL, spec.n_val)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            height: 32,
            width: 32,
            n_train: 16,
            n_val: 4,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let other = generate(&DatasetSpec {
            seed: 99,
            ..small()
        })
        .unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn empty_train_split() {
        let (train, val) = generate(&DatasetSpec {
            n_train: 0,
            ..small()
        })
        .unwrap();
        assert!(train.is_empty());
        assert_eq!(val.len(), 4);
        // val does not depend on the train size
        assert_eq!(val, generate(&small()).unwrap().1);
    }

    #[test]
    fn labels_in_range_and_images_in_unit_interval() {
        let (train, val) = generate(&small()).unwrap();
        for set in [&train, &val] {
            assert!(set.labels().iter().all(|&l| (l as usize) < set.classes));
            assert!(set.images().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn indivisible_size_rejected() {
        assert!(generate(&DatasetSpec {
            height: 36,
            ..small()
        })
        .is_err());
        assert!(generate(&DatasetSpec {
            height: 36,
            pool_depth: 2,
            ..small()
        })
        .is_ok());
    }

    #[test]
    fn fewer_classes_restricts_kinds() {
        let (train, _) = generate(&DatasetSpec {
            classes: 3,
            ..small()
        })
        .unwrap();
        assert!(train.labels().iter().all(|&l| l < 3));
        assert!(train.labels().contains(&2));
    }

    #[test]
    fn rendered_mask_matches_geometry() {
        let (h, w) = (24, 24);
        for (i, kind) in ShapeKind::ALL.into_iter().enumerate() {
            let shape = Shape {
                kind,
                cx: 11.3,
                cy: 12.1,
                size: 7.5,
                ratio: 0.55,
                angle: 0.4 * i as f64,
                color: [0.9, 0.1, 0.5],
            };
            let mut img = vec![0.25f32; 3 * h * w];
            let mut lab = vec![0u8; h * w];
            shape.render(&mut img, &mut lab, h, w);
            let mut painted = 0;
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let inside = shape.contains(x as f64 + 0.5, y as f64 + 0.5);
                    assert_eq!(lab[p] == kind.class_id(), inside);
                    assert_eq!(lab[p] == 0, !inside);
                    let expect = if inside { shape.color } else { [0.25; 3] };
                    for c in 0..3 {
                        assert_eq!(img[c * h * w + p], expect[c]);
                    }
                    painted += inside as usize;
                }
            }
            assert!(painted > 20, "{kind:?} painted {painted}");
        }
    }

    #[test]
    fn ring_has_hole() {
        let ring = Shape {
            kind: ShapeKind::Ring,
            cx: 10.0,
            cy: 10.0,
            size: 8.0,
            ratio: 0.5,
            angle: 0.0,
            color: [0.0; 3],
        };
        assert!(!ring.contains(10.0, 10.0));
        assert!(ring.contains(16.0, 10.0));
        assert!(!ring.contains(19.0, 10.0));
    }

    #[test]
    fn default_split_is_imbalanced() {
        let spec = DatasetSpec {
            n_train: 64,
            n_val: 0,
            ..DatasetSpec::default()
        };
        let (train, _) = generate(&spec).unwrap();
        let f = super::super::class_frequencies(&train).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f[0] > 0.5, "{f:?}");
        assert!(f[1] > f[4], "{f:?}");
        assert!(f.iter().all(|&x| x > 0.0), "{f:?}");
    }
}

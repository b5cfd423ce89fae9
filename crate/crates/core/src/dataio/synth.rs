//! Synthetic scenes: textured filled shapes (the objects) over a noisy
//! gradient background littered with edge clutter (line segments, arcs,
//! unfilled outlines and small blobs). The clutter is what an edge-based
//! proposer latches onto; the filled shapes are what a learned scorer should
//! prefer.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{write_index, Dataset, ImageEntry, SplitPaths};
use super::{write_jsonl, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::par;
use crate::raster::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_side: usize,
    pub max_object_side: usize,
    /// Clutter items per 10,000 pixels.
    pub clutter: f64,
    /// Categories are `shape kind + 4 * texture`; at most 12.
    pub categories: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: 100,
            width: 160,
            height: 160,
            min_objects: 1,
            max_objects: 3,
            min_object_side: 24,
            max_object_side: 96,
            clutter: 8.0,
            categories: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.images == 0 || self.min_objects == 0 || self.categories == 0 {
            return bad("image, object and category counts must be positive");
        }
        if self.width < 100 || self.height < 100 {
            return bad("synthetic images must be at least 100x100");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if self.min_object_side < 8
            || self.min_object_side > self.max_object_side
            || self.max_object_side > self.width.min(self.height)
        {
            return bad("object side range must satisfy 8 <= min <= max <= image side");
        }
        if self.categories > 12 {
            return bad("at most 12 categories (4 shapes x 3 textures)");
        }
        if !(self.clutter >= 0.0 && self.clutter.is_finite()) {
            return bad("clutter density must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
    /// Ring with a protruding limb.
    Limb,
}

impl ShapeKind {
    pub fn of_category(c: u32) -> Self {
        match c % 4 {
            0 => ShapeKind::Ellipse,
            1 => ShapeKind::Rectangle,
            2 => ShapeKind::Triangle,
            _ => ShapeKind::Limb,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthObject {
    pub category: u32,
    pub kind: ShapeKind,
    pub bbox: BBox,
    /// Row-major `width x height` coverage mask of the rendered shape.
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Image,
    pub objects: Vec<SynthObject>,
}

type Rgb = [f32; 3];

struct Canvas {
    w: usize,
    h: usize,
    img: Image,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, c: Rgb) {
        for (ch, v) in c.iter().enumerate() {
            self.img.set(ch, y, x, *v);
        }
    }

    /// Paint every pixel whose center satisfies `inside`, scanning `region`.
    fn fill(&mut self, region: [f64; 4], inside: impl Fn(f64, f64) -> bool, color: impl Fn(usize, usize) -> Rgb) {
        let x0 = region[0].floor().max(0.0) as usize;
        let y0 = region[1].floor().max(0.0) as usize;
        let x1 = (region[2].ceil().max(0.0) as usize).min(self.w);
        let y1 = (region[3].ceil().max(0.0) as usize).min(self.h);
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    let c = color(x, y);
                    self.put(x, y, c);
                }
            }
        }
    }
}

fn random_color<R: Rng>(rng: &mut R) -> Rgb {
    [
        rng.random_range(0.0..255.0f32).round(),
        rng.random_range(0.0..255.0f32).round(),
        rng.random_range(0.0..255.0f32).round(),
    ]
}

fn color_distance(a: Rgb, b: Rgb) -> f32 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

/// Two colors at least `min_dist` apart (L1 over RGB).
fn color_pair<R: Rng>(rng: &mut R, min_dist: f32) -> (Rgb, Rgb) {
    let a = random_color(rng);
    loop {
        let b = random_color(rng);
        if color_distance(a, b) >= min_dist {
            return (a, b);
        }
    }
}

fn seg_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

fn in_triangle(px: f64, py: f64, v: &[(f64, f64); 3]) -> bool {
    let s = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
    let d1 = s(v[0], v[1]);
    let d2 = s(v[1], v[2]);
    let d3 = s(v[2], v[0]);
    !((d1 < 0.0 || d2 < 0.0 || d3 < 0.0) && (d1 > 0.0 || d2 > 0.0 || d3 > 0.0))
}

/// Analytic shape in image coordinates.
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, rot: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, rot: f64 },
    Triangle([(f64, f64); 3]),
    Limb { cx: f64, cy: f64, r: f64, inner: f64, dir: f64, len: f64, half_t: f64 },
}

impl Shape {
    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, rot } => {
                let (s, c) = rot.sin_cos();
                let (dx, dy) = (px - cx, py - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { cx, cy, hw, hh, rot } => {
                let (s, c) = rot.sin_cos();
                let (dx, dy) = (px - cx, py - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= hw && v.abs() <= hh
            }
            Shape::Triangle(ref v) => in_triangle(px, py, v),
            Shape::Limb { cx, cy, r, inner, dir, len, half_t } => {
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                if d <= r && d >= inner {
                    return true;
                }
                let end = (cx + dir.cos() * len, cy + dir.sin() * len);
                let start = (cx + dir.cos() * inner, cy + dir.sin() * inner);
                seg_dist(px, py, start, end) <= half_t
            }
        }
    }
}

/// Build a shape of `kind` roughly filling the `w x h` box centred at (cx, cy).
fn make_shape<R: Rng>(kind: ShapeKind, cx: f64, cy: f64, w: f64, h: f64, rng: &mut R) -> Shape {
    match kind {
        ShapeKind::Ellipse => Shape::Ellipse {
            cx,
            cy,
            rx: w / 2.0,
            ry: h / 2.0,
            rot: 0.0,
        },
        ShapeKind::Rectangle => {
            let rot = rng.random_range(-0.35..0.35);
            // shrink so the rotated rectangle stays inside the w x h box
            let (s, c) = (rot as f64).sin_cos();
            let (s, c) = (s.abs(), c.abs());
            let det = c * c - s * s;
            let (hw, hh) = if det > 0.2 {
                (
                    ((c * w - s * h) / (2.0 * det)).max(w * 0.2),
                    ((c * h - s * w) / (2.0 * det)).max(h * 0.2),
                )
            } else {
                (w * 0.3, h * 0.3)
            };
            Shape::Rect {
                cx,
                cy,
                hw,
                hh,
                rot,
            }
        }
        ShapeKind::Triangle => {
            let (x0, y0, x1, y1) = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
            let apex = rng.random_range(x0..x1);
            let v = match rng.random_range(0..4) {
                0 => [(apex, y0), (x0, y1), (x1, y1)],
                1 => [(apex, y1), (x0, y0), (x1, y0)],
                2 => [(x0, rng.random_range(y0..y1)), (x1, y0), (x1, y1)],
                _ => [(x1, rng.random_range(y0..y1)), (x0, y0), (x0, y1)],
            };
            Shape::Triangle(v)
        }
        ShapeKind::Limb => {
            let r = 0.3 * w.min(h);
            let dir = rng.random_range(0.0..2.0 * PI);
            // ring centre offset against the limb so the whole thing spans the box
            let len = 0.5 * w.min(h) + r * 0.6;
            let (ccx, ccy) = (cx - dir.cos() * (len - r) * 0.5, cy - dir.sin() * (len - r) * 0.5);
            Shape::Limb {
                cx: ccx,
                cy: ccy,
                r,
                inner: r * 0.5,
                dir,
                len,
                half_t: (r * 0.3).max(1.5),
            }
        }
    }
}

fn texture<R: Rng>(tex: u32, rng: &mut R) -> Box<dyn Fn(usize, usize) -> Rgb + Send + Sync> {
    let (a, b) = color_pair(rng, 150.0);
    match tex {
        0 => {
            let period = rng.random_range(4.0..9.0f64);
            let ang = rng.random_range(0.0..PI);
            let (s, c) = ang.sin_cos();
            Box::new(move |x, y| {
                let t = (x as f64 * c + y as f64 * s) / period;
                if t.fract().abs() < 0.5 {
                    a
                } else {
                    b
                }
            })
        }
        1 => {
            let cell = rng.random_range(3..7usize);
            Box::new(move |x, y| if (x / cell + y / cell) % 2 == 0 { a } else { b })
        }
        _ => {
            let salt: u64 = rng.random();
            Box::new(move |x, y| {
                let mut z = salt ^ ((x as u64) << 32 | y as u64);
                z = (z ^ (z >> 33)).wrapping_mul(0xff51afd7ed558ccd);
                z ^= z >> 33;
                if z % 5 == 0 {
                    b
                } else {
                    a
                }
            })
        }
    }
}

fn draw_background<R: Rng>(canvas: &mut Canvas, rng: &mut R) {
    let (c0, c1) = (random_color(rng), random_color(rng));
    let ang = rng.random_range(0.0..2.0 * PI);
    let (s, c) = ang.sin_cos();
    let span = (canvas.w as f64).hypot(canvas.h as f64);
    for y in 0..canvas.h {
        for x in 0..canvas.w {
            let t = (0.5 + (x as f64 * c + y as f64 * s) / span).clamp(0.0, 1.0) as f32;
            let mut px = [0.0f32; 3];
            for ch in 0..3 {
                let noise = rng.random_range(-10.0..10.0f32);
                px[ch] = (c0[ch] + (c1[ch] - c0[ch]) * t + noise).round().clamp(0.0, 255.0);
            }
            canvas.put(x, y, px);
        }
    }
}

fn draw_clutter<R: Rng>(canvas: &mut Canvas, cfg: &SynthConfig, rng: &mut R) {
    let n = (cfg.clutter * (canvas.w * canvas.h) as f64 / 10_000.0).round() as usize;
    let (w, h) = (canvas.w as f64, canvas.h as f64);
    let max_side = cfg.max_object_side as f64;
    for _ in 0..n {
        let color = random_color(rng);
        let kind = rng.random_range(0..100);
        if kind < 35 {
            let a = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let len = rng.random_range(10.0..max_side);
            let ang = rng.random_range(0.0..2.0 * PI);
            let b = (a.0 + ang.cos() * len, a.1 + ang.sin() * len);
            let t = rng.random_range(0.5..1.6);
            let region = [a.0.min(b.0) - 2.0, a.1.min(b.1) - 2.0, a.0.max(b.0) + 2.0, a.1.max(b.1) + 2.0];
            canvas.fill(region, |px, py| seg_dist(px, py, a, b) <= t, |_, _| color);
        } else if kind < 70 {
            // unfilled outline of an object-sized shape
            let sw = rng.random_range(cfg.min_object_side as f64..max_side);
            let sh = (sw * rng.random_range(0.5..2.0)).min(max_side);
            let cx = rng.random_range(0.0..w);
            let cy = rng.random_range(0.0..h);
            let t = rng.random_range(1.0..2.5);
            let shape = make_shape(ShapeKind::of_category(rng.random_range(0..3)), cx, cy, sw, sh, rng);
            let region = [cx - sw, cy - sh, cx + sw, cy + sh];
            canvas.fill(
                region,
                |px, py| {
                    shape.contains(px, py)
                        && !(shape.contains(px - t, py)
                            && shape.contains(px + t, py)
                            && shape.contains(px, py - t)
                            && shape.contains(px, py + t))
                },
                |_, _| color,
            );
        } else if kind < 85 {
            let (cx, cy) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let r = rng.random_range(1.5..4.5);
            canvas.fill([cx - r, cy - r, cx + r, cy + r], |px, py| (px - cx).hypot(py - cy) <= r, |_, _| color);
        } else {
            let (cx, cy) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let r = rng.random_range(8.0..max_side / 2.0);
            let a0 = rng.random_range(0.0..2.0 * PI);
            let sweep = rng.random_range(0.8..3.5);
            let t = rng.random_range(0.6..1.5);
            canvas.fill(
                [cx - r - 2.0, cy - r - 2.0, cx + r + 2.0, cy + r + 2.0],
                |px, py| {
                    let d = (px - cx).hypot(py - cy);
                    let mut a = (py - cy).atan2(px - cx) - a0;
                    a = a.rem_euclid(2.0 * PI);
                    (d - r).abs() <= t && a <= sweep
                },
                |_, _| color,
            );
        }
    }
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Render scene `index` of the configured set. Deterministic in
/// `(cfg.seed, index)`.
pub fn render_scene(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index);
    let (w, h) = (cfg.width, cfg.height);
    let mut canvas = Canvas {
        w,
        h,
        img: Image::filled(w, h, [0.0; 3]),
    };
    draw_background(&mut canvas, &mut rng);
    draw_clutter(&mut canvas, cfg, &mut rng);

    let n_obj = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<SynthObject> = Vec::with_capacity(n_obj);
    let mut attempts = 0;
    while objects.len() < n_obj && attempts < 200 {
        attempts += 1;
        let category = rng.random_range(0..cfg.categories);
        let kind = ShapeKind::of_category(category);
        let lo = cfg.min_object_side as f64;
        let hi = cfg.max_object_side as f64;
        let side = lo * (hi / lo).powf(rng.random_range(0.0..1.0));
        let aspect: f64 = rng.random_range(0.6..1.6);
        let ow = (side * aspect.sqrt()).clamp(lo * 0.75, hi);
        let oh = (side / aspect.sqrt()).clamp(lo * 0.75, hi);
        if ow + 2.0 > w as f64 || oh + 2.0 > h as f64 {
            continue;
        }
        let cx = rng.random_range(ow / 2.0 + 1.0..w as f64 - ow / 2.0 - 1.0);
        let cy = rng.random_range(oh / 2.0 + 1.0..h as f64 - oh / 2.0 - 1.0);
        let shape = make_shape(kind, cx, cy, ow, oh, &mut rng);
        let tex = texture(category / 4, &mut rng);

        let mut mask = vec![false; w * h];
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let reach = ow.max(oh);
        for y in (cy - reach).max(0.0) as usize..((cy + reach).ceil() as usize).min(h) {
            for x in (cx - reach).max(0.0) as usize..((cx + reach).ceil() as usize).min(w) {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    mask[y * w + x] = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == usize::MAX || x1 - x0 < cfg.min_object_side / 2 || y1 - y0 < cfg.min_object_side / 2 {
            continue;
        }
        let bbox = BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)?;
        // keep objects apart so each mask stays fully visible
        let padded = BBox::new(bbox.x_min() - 2.0, bbox.y_min() - 2.0, bbox.x_max() + 2.0, bbox.y_max() + 2.0)?;
        if objects.iter().any(|o| o.bbox.intersection_area(&padded) > 0.0) {
            continue;
        }
        for y in y0..y1 {
            for x in x0..x1 {
                if mask[y * w + x] {
                    canvas.put(x, y, tex(x, y));
                }
            }
        }
        objects.push(SynthObject {
            category,
            kind,
            bbox,
            mask,
        });
    }
    if objects.is_empty() {
        return Err(Error::Config(format!(
            "could not place any object in scene {index}; check the object size range"
        )));
    }
    Ok(Scene {
        image: canvas.img,
        objects,
    })
}

/// Render and write a synthetic split: PNGs, the image index and `gt.jsonl`.
pub fn gen_synthetic(cfg: &SynthConfig, paths: &SplitPaths) -> Result<Dataset> {
    cfg.validate()?;
    let dir = paths.images_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let results = par::map_indexed(cfg.images, |i| -> Result<(ImageEntry, ImageRecord)> {
        let scene = render_scene(cfg, i)?;
        let id = format!("{i:06}");
        let file = format!("{id}.png");
        let mut bytes = Vec::new();
        scene
            .image
            .to_rgb8()
            .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: dir.join(&file),
                message: e.to_string(),
            })?;
        super::write_atomic(&dir.join(&file), &bytes)?;
        let mut rec = ImageRecord::new(id.clone(), scene.objects.iter().map(|o| o.bbox).collect());
        rec.categories = scene.objects.iter().map(|o| o.category).collect();
        rec.scores = vec![1.0; rec.boxes.len()];
        Ok((
            ImageEntry {
                image_id: id,
                file,
                width: cfg.width,
                height: cfg.height,
            },
            rec,
        ))
    });
    let mut entries = Vec::with_capacity(cfg.images);
    let mut records = Vec::with_capacity(cfg.images);
    for r in results {
        let (e, a) = r?;
        entries.push(e);
        records.push(a);
    }
    write_index(paths, &entries)?;
    write_jsonl(&paths.annotations(), &records)?;
    Dataset::open(paths.clone())
}

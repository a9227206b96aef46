//! Lightweight 2D parametric renderer.
//!
//! A bike is drawn from its frame-space geometry as capsules (tubes, cranks,
//! saddle, bars) and rings (wheels). Bends displace every frame point by a
//! smooth Gaussian bump, breaks cut a gap into one tube's polyline, and wheel
//! deformation warps the rim into an ellipse. Every pixel the bike covers is
//! tagged with a segmentation class and the part that painted it.

use std::path::PathBuf;

use image::{GrayImage, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::damage::{DamageState, Dirt};
use super::instance::BikeInstance;
use super::library::{BarStyle, BikeModelSpec, ModelLibrary};
use super::palette;
use crate::datamodel::labels::Part;
use crate::imageio::{self, FloatImage};
use crate::seed;
use crate::{Error, Result};

/// Segmentation class names; class id = position + 1, 0 is background.
pub const SEGMENTATION_CLASSES: [&str; 5] = ["front_wheel", "rear_wheel", "seat", "crankset", "frame"];
pub const SEG_BACKGROUND: u8 = 0;
pub const SEG_FRONT_WHEEL: u8 = 1;
pub const SEG_REAR_WHEEL: u8 = 2;
pub const SEG_SEAT: u8 = 3;
pub const SEG_CRANKSET: u8 = 4;
pub const SEG_FRAME: u8 = 5;

/// Segmentation class for each removable part, where one exists. Handlebar
/// pixels are labelled as frame.
pub fn part_seg_class(part: Part) -> Option<u8> {
    match part {
        Part::FrontWheel => Some(SEG_FRONT_WHEEL),
        Part::RearWheel => Some(SEG_REAR_WHEEL),
        Part::Seat => Some(SEG_SEAT),
        Part::Pedals => Some(SEG_CRANKSET),
        Part::Handlebar => None,
    }
}

/// Number of synthetic camera indices (2 sides × 3 focal bins).
pub const VIEW_VOCAB: usize = 6;
/// Camera index reserved for real photographs, which carry no view metadata.
pub const REAL_VIEW_INDEX: usize = VIEW_VOCAB;
/// Size of the side-information vocabulary the model needs.
pub const NUM_CAMERAS: usize = VIEW_VOCAB + 1;

const OWNER_FRAME: u8 = 6;
const TUBE_SEGMENTS: usize = 12;
const BEND_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    ProceduralScene,
    ImagePool,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub side: Side,
    /// Offset of the bike centre, as a fraction of the image size.
    pub camera_jitter: [f64; 2],
    pub focal_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub image_size: usize,
    pub background_mode: BackgroundMode,
    /// Number of procedural scenes; image-pool mode uses every image found instead.
    pub background_pool_size: usize,
    /// Directory of background images for [`BackgroundMode::ImagePool`].
    pub background_dir: Option<PathBuf>,
    pub uniform_color: [u8; 3],
    /// Closed interval of focal scales.
    pub focal_range: [f64; 2],
    /// Maximum camera jitter, fraction of the image size.
    pub max_jitter: f64,
    pub emit_segmentation: bool,
    /// Pin the view instead of sampling it (tests, debugging).
    pub fixed_view: Option<View>,
    pub fixed_background: Option<usize>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            background_mode: BackgroundMode::ProceduralScene,
            background_pool_size: 11,
            background_dir: None,
            uniform_color: [128, 128, 128],
            focal_range: [0.75, 1.0],
            max_jitter: 0.06,
            emit_segmentation: true,
            fixed_view: None,
            fixed_background: None,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::config(format!(
                "image_size {} is below the minimum of 32",
                self.image_size
            )));
        }
        let [lo, hi] = self.focal_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.5) {
            return Err(Error::config(format!("focal_range [{lo}, {hi}] is invalid")));
        }
        if !(0.0..=0.25).contains(&self.max_jitter) {
            return Err(Error::config("max_jitter must lie in [0, 0.25]"));
        }
        if self.background_mode == BackgroundMode::ProceduralScene && self.background_pool_size == 0 {
            return Err(Error::config("background_pool_size must be positive"));
        }
        if self.background_mode == BackgroundMode::ImagePool && self.background_dir.is_none() {
            return Err(Error::config("image_pool background mode needs background_dir"));
        }
        if let Some(v) = &self.fixed_view {
            if !(lo..=hi).contains(&v.focal_scale) {
                return Err(Error::config("fixed_view focal_scale outside focal_range"));
            }
        }
        Ok(())
    }

    /// Discrete camera index of a view: side × focal bin.
    pub fn view_index(&self, view: &View) -> usize {
        let [lo, hi] = self.focal_range;
        let bin = if hi > lo {
            (((view.focal_scale - lo) / (hi - lo)) * 3.0).floor().clamp(0.0, 2.0) as usize
        } else {
            0
        };
        let side = match view.side {
            Side::Left => 0,
            Side::Right => 1,
        };
        side * 3 + bin
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: RgbImage,
    pub segmentation: Option<GrayImage>,
    pub view: View,
    pub view_index: usize,
    pub background_index: usize,
    /// Visible pixel count per removable part (handlebar included).
    pub part_pixels: [u64; 5],
    /// Pixel-space centreline endpoints of the cut when the frame is broken.
    pub break_gap: Option<[[f64; 2]; 2]>,
}

struct Canvas {
    size: usize,
    rgb: Vec<[f32; 3]>,
    seg: Vec<u8>,
    owner: Vec<u8>,
}

impl Canvas {
    fn paint(&mut self, x: usize, y: usize, color: [f32; 3], class: u8, owner: u8) {
        let i = y * self.size + x;
        self.rgb[i] = color;
        self.seg[i] = class;
        self.owner[i] = owner;
    }

    /// Paint every pixel whose centre lies within `radius` of segment `a`–`b`.
    /// `color` receives the segment parameter of the closest point.
    fn capsule(&mut self, a: [f64; 2], b: [f64; 2], radius: f64, class: u8, owner: u8, color: impl Fn(f64, usize, usize) -> [f32; 3]) {
        let (x0, x1, y0, y1) = self.bbox(
            a[0].min(b[0]) - radius,
            a[0].max(b[0]) + radius,
            a[1].min(b[1]) - radius,
            a[1].max(b[1]) + radius,
        );
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let r2 = radius * radius;
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                let t = if len2 > 0.0 {
                    (((px - a[0]) * d[0] + (py - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let cx = a[0] + t * d[0] - px;
                let cy = a[1] + t * d[1] - py;
                if cx * cx + cy * cy <= r2 {
                    self.paint(x, y, color(t, x, y), class, owner);
                }
            }
        }
    }

    /// Elliptical ring centred at `c` with semi-axes `(a, b)` rotated by `angle`.
    fn ring(&mut self, c: [f64; 2], a: f64, b: f64, angle: f64, width: f64, color: [f32; 3], class: u8, owner: u8) {
        let reach = a.max(b) + width;
        let (x0, x1, y0, y1) = self.bbox(c[0] - reach, c[0] + reach, c[1] - reach, c[1] + reach);
        let (s, co) = angle.sin_cos();
        let inner = 1.0 - width / b.min(a);
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - c[1];
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - c[0];
                let u = dx * co + dy * s;
                let v = -dx * s + dy * co;
                let q = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                if q <= 1.0 && q >= inner {
                    self.paint(x, y, color, class, owner);
                }
            }
        }
    }

    fn bbox(&self, xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> (usize, usize, usize, usize) {
        let s = self.size as f64;
        let clamp = |v: f64| v.clamp(0.0, s) as usize;
        (clamp(xmin.floor()), clamp(xmax.ceil() + 1.0), clamp(ymin.floor()), clamp(ymax.ceil() + 1.0))
    }
}

/// Maps frame space into pixel space for one render.
struct Projection {
    scale: f64,
    center_frame: [f64; 2],
    center_px: [f64; 2],
    mirror: f64,
}

impl Projection {
    fn px(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.center_px[0] + self.mirror * (p[0] - self.center_frame[0]) * self.scale,
            self.center_px[1] - (p[1] - self.center_frame[1]) * self.scale,
        ]
    }

    fn len(&self, l: f64) -> f64 {
        l * self.scale
    }

    /// Rotate a frame-space direction angle into pixel space.
    fn angle(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        (-s).atan2(self.mirror * c)
    }
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

fn shade(c: [f32; 3], k: f32) -> [f32; 3] {
    c.map(|v| (v * k).clamp(0.0, 1.0))
}

fn mix(a: [f32; 3], b: [f32; 3], w: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w, a[2] + (b[2] - a[2]) * w]
}

/// Smooth frame deformation for a bent frame.
struct Bend {
    center: [f64; 2],
    offset: [f64; 2],
}

impl Bend {
    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let w = (-(dx * dx + dy * dy) / (2.0 * BEND_SIGMA * BEND_SIGMA)).exp();
        [p[0] + self.offset[0] * w, p[1] + self.offset[1] * w]
    }
}

fn deform(bend: &Option<Bend>, p: [f64; 2]) -> [f64; 2] {
    match bend {
        Some(b) => b.apply(p),
        None => p,
    }
}

/// Renderer holding the model library and pre-built backgrounds.
pub struct Renderer {
    library: ModelLibrary,
    cfg: RenderConfig,
    backgrounds: Vec<FloatImage>,
}

impl Renderer {
    pub fn new(library: ModelLibrary, cfg: RenderConfig) -> Result<Self> {
        cfg.validate()?;
        let size = cfg.image_size;
        let backgrounds = match cfg.background_mode {
            BackgroundMode::Uniform => Vec::new(),
            BackgroundMode::ProceduralScene => (0..cfg.background_pool_size)
                .map(|i| procedural_scene(i, size))
                .collect(),
            BackgroundMode::ImagePool => load_pool(cfg.background_dir.as_ref().expect("validated"), size)?,
        };
        Ok(Self { library, cfg, backgrounds })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.cfg
    }

    pub fn library(&self) -> &ModelLibrary {
        &self.library
    }

    /// Number of distinct backgrounds available.
    pub fn pool_size(&self) -> usize {
        match self.cfg.background_mode {
            BackgroundMode::Uniform => 1,
            _ => self.backgrounds.len(),
        }
    }

    pub fn render(&self, instance: &BikeInstance, damage: &DamageState, seed: u64) -> Result<RenderOutput> {
        damage.validate()?;
        let model = self.library.get(&instance.model_name)?;
        let size = self.cfg.image_size;
        let mut rng = seed::derived_rng(seed, &[b"render"]);

        let view = self.cfg.fixed_view.unwrap_or_else(|| View {
            side: if rng.random_bool(0.5) { Side::Right } else { Side::Left },
            camera_jitter: [
                rng.random_range(-1.0..=1.0) * self.cfg.max_jitter,
                rng.random_range(-1.0..=1.0) * self.cfg.max_jitter,
            ],
            focal_scale: rng.random_range(self.cfg.focal_range[0]..=self.cfg.focal_range[1]),
        });
        let background_index = match self.cfg.fixed_background {
            Some(i) if i < self.pool_size() => i,
            Some(i) => {
                return Err(Error::config(format!(
                    "background index {i} outside pool of {}",
                    self.pool_size()
                )))
            }
            None => rng.random_range(0..self.pool_size()),
        };
        let roll = rng.random_range(0..size);
        let illumination: f32 = rng.random_range(0.85..1.1);
        let crank_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let wheel_spin: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_4);
        let bar_jitter: f64 = rng.random_range(-0.15..0.15);
        let saddle_tilt: f64 = rng.random_range(-0.08..0.08);

        let mut canvas = Canvas {
            size,
            rgb: vec![[0.0; 3]; size * size],
            seg: vec![SEG_BACKGROUND; size * size],
            owner: vec![0; size * size],
        };
        self.paint_background(&mut canvas, background_index, roll);

        let proj = projection(model, &view, size);
        let bend = damage.bend_site.map(|site| {
            let breakable = model.breakable_tubes();
            let tube = &model.tubes[breakable[site.tube % breakable.len()]];
            let a = model.keypoint(&tube.from).expect("validated");
            let b = model.keypoint(&tube.to).expect("validated");
            let center = lerp(a, b, site.position);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let n = (dx * dx + dy * dy).sqrt().max(1e-9);
            let k = damage.bend_magnitude * site.direction / n;
            Bend { center, offset: [-dy * k, dx * k] }
        });
        let kp = |name: &str| deform(&bend, model.keypoint(name).expect("validated"));
        let anchor = |part: Part| deform(&bend, model.anchor(part));

        let base = palette::color(instance.base_color);
        let accent = palette::color(instance.pattern_color);
        let pattern = palette::pattern(instance.pattern_id);
        let decal = palette::decal(instance.decal_id);
        let lit = |c: [f32; 3]| shade(c, illumination);
        let tire = lit([0.08, 0.08, 0.09]);
        let metal = lit([0.72, 0.72, 0.75]);
        let dark = lit([0.2, 0.2, 0.22]);

        let wheel_r = model.wheel_radius;
        let tire_w = proj.len(0.035).max(1.2);
        let draw_wheel = |canvas: &mut Canvas, part: Part, class: u8, deform_idx: usize| {
            let hub = proj.px(anchor(part));
            let r = proj.len(wheel_r);
            let (a, b, angle) = match damage.wheel_deform[deform_idx] {
                Some(w) => (r, r * w.aspect, proj.angle(w.angle)),
                None => (r, r, 0.0),
            };
            let owner = part.index() as u8 + 1;
            canvas.ring(hub, a, b, angle, tire_w, tire, class, owner);
            let rim_w = (tire_w * 0.45).max(0.6);
            canvas.ring(hub, a - tire_w, b - tire_w, angle, rim_w, metal, class, owner);
            let (s, c) = angle.sin_cos();
            for k in 0..8 {
                let th = wheel_spin + k as f64 * std::f64::consts::FRAC_PI_4;
                let (u, v) = ((a - tire_w) * th.cos(), (b - tire_w) * th.sin());
                let end = [hub[0] + u * c - v * s, hub[1] + u * s + v * c];
                canvas.capsule(hub, end, 0.5, class, owner, |_, _, _| dark);
            }
            canvas.capsule(hub, hub, proj.len(0.02).max(1.0), class, owner, |_, _, _| metal);
        };

        if !damage.missing[Part::RearWheel.index()] {
            draw_wheel(&mut canvas, Part::RearWheel, SEG_REAR_WHEEL, 1);
        }

        // chainring sits on the frame; cranks and pedals are the removable crankset
        let bb = proj.px(anchor(Part::Pedals));
        let ring_r = proj.len(0.06).max(2.0);
        canvas.ring(bb, ring_r, ring_r, 0.0, proj.len(0.012).max(0.8), metal, SEG_FRAME, OWNER_FRAME);

        // frame tubes, as deformed polylines
        let breakable = model.breakable_tubes();
        let mut break_gap = None;
        let cut = damage
            .break_site
            .map(|site| (breakable[site.tube % breakable.len()], site.position));
        for (ti, tube) in model.tubes.iter().enumerate() {
            let a = model.keypoint(&tube.from).expect("validated");
            let b = model.keypoint(&tube.to).expect("validated");
            let radius = proj.len(tube.thickness / 2.0).max(0.9);
            let verts: Vec<[f64; 2]> = (0..=TUBE_SEGMENTS)
                .map(|i| proj.px(deform(&bend, lerp(a, b, i as f64 / TUBE_SEGMENTS as f64))))
                .collect();
            let len_px: f64 = verts
                .windows(2)
                .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
                .sum();
            let mut spans = vec![(0.0, 1.0)];
            if let Some((cut_tube, pos)) = cut {
                if cut_tube == ti {
                    let gap_px = (0.14 * len_px).max(2.0 * radius + 4.0);
                    let half = 0.5 * gap_px / len_px.max(1e-9);
                    let (g0, g1) = ((pos - half).max(0.02), (pos + half).min(0.98));
                    spans = vec![(0.0, g0), (g1, 1.0)];
                    let at = |t: f64| proj.px(deform(&bend, lerp(a, b, t)));
                    break_gap = Some([at(g0), at(g1)]);
                }
            }
            let is_decal_tube = tube.name == "down_tube";
            for (t0, t1) in spans {
                let pts: Vec<(f64, [f64; 2])> = (0..=TUBE_SEGMENTS)
                    .map(|i| {
                        let t = t0 + (t1 - t0) * i as f64 / TUBE_SEGMENTS as f64;
                        (t, proj.px(deform(&bend, lerp(a, b, t))))
                    })
                    .collect();
                for w in pts.windows(2) {
                    let (ta, pa) = w[0];
                    let (tb, pb) = w[1];
                    canvas.capsule(pa, pb, radius, SEG_FRAME, OWNER_FRAME, |s, x, y| {
                        let t = ta + (tb - ta) * s;
                        let pw = palette::pattern_weight(pattern, ti, t);
                        let mut c = mix(base, accent, pw);
                        if is_decal_tube && (0.4..0.6).contains(&t) {
                            let gx = ((t - 0.4) / 0.2 * 3.0).floor().clamp(0.0, 2.0) as usize;
                            let gy = (x + y) % 5;
                            if decal.glyph[gy] >> gx & 1 == 1 {
                                c = decal.ink;
                            }
                        }
                        lit(c)
                    });
                }
            }
        }

        // stem up from the head tube top
        let head = kp("head_top");
        let stem_top = [head[0] + 0.02, head[1] + 0.05];
        canvas.capsule(
            proj.px(head),
            proj.px(stem_top),
            proj.len(0.012).max(0.9),
            SEG_FRAME,
            OWNER_FRAME,
            |_, _, _| dark,
        );

        if !damage.missing[Part::FrontWheel.index()] {
            draw_wheel(&mut canvas, Part::FrontWheel, SEG_FRONT_WHEEL, 0);
        }

        if !damage.missing[Part::Pedals.index()] {
            let owner = Part::Pedals.index() as u8 + 1;
            let center = anchor(Part::Pedals);
            let crank = 0.075;
            let twist = damage.part_twist[Part::Pedals.index()];
            let arm_w = proj.len(0.012).max(0.9);
            for (k, extra) in [(0.0, 0.0), (std::f64::consts::PI, twist)] {
                let th = crank_angle + k + extra;
                let end = [center[0] + crank * th.cos(), center[1] + crank * th.sin()];
                canvas.capsule(proj.px(center), proj.px(end), arm_w, SEG_CRANKSET, owner, |_, _, _| metal);
                let p0 = [end[0] - 0.025, end[1]];
                let p1 = [end[0] + 0.025, end[1]];
                canvas.capsule(proj.px(p0), proj.px(p1), arm_w * 1.2, SEG_CRANKSET, owner, |_, _, _| dark);
            }
        }

        if !damage.missing[Part::Seat.index()] {
            let owner = Part::Seat.index() as u8 + 1;
            let st = anchor(Part::Seat);
            let bbf = anchor(Part::Pedals);
            let (dx, dy) = (st[0] - bbf[0], st[1] - bbf[1]);
            let n = (dx * dx + dy * dy).sqrt().max(1e-9);
            let top = [st[0] + dx / n * model.seatpost, st[1] + dy / n * model.seatpost];
            canvas.capsule(proj.px(st), proj.px(top), proj.len(0.011).max(0.9), SEG_SEAT, owner, |_, _, _| metal);
            let tilt = saddle_tilt + damage.part_twist[Part::Seat.index()];
            let (s, c) = tilt.sin_cos();
            let nose = [top[0] + 0.07 * c, top[1] + 0.07 * s];
            let tail = [top[0] - 0.05 * c, top[1] - 0.05 * s];
            canvas.capsule(proj.px(tail), proj.px(nose), proj.len(0.018).max(1.0), SEG_SEAT, owner, |_, _, _| dark);
        }

        if !damage.missing[Part::Handlebar.index()] {
            let owner = Part::Handlebar.index() as u8 + 1;
            let rot = bar_jitter + damage.part_twist[Part::Handlebar.index()];
            let local: Vec<[f64; 2]> = match model.bar_style {
                BarStyle::Flat => vec![[-0.03, 0.0], [0.05, 0.0]],
                BarStyle::Riser => vec![[-0.03, 0.02], [0.0, 0.0], [0.05, 0.01]],
                BarStyle::Drop => vec![[0.0, 0.0], [0.06, 0.0], [0.08, -0.03], [0.05, -0.06], [0.03, -0.055]],
                BarStyle::Swept => vec![[0.0, 0.0], [-0.05, 0.03], [-0.09, 0.02]],
            };
            let (s, c) = rot.sin_cos();
            let pts: Vec<[f64; 2]> = local
                .iter()
                .map(|p| [stem_top[0] + p[0] * c - p[1] * s, stem_top[1] + p[0] * s + p[1] * c])
                .collect();
            let w = proj.len(0.011).max(0.9);
            for seg in pts.windows(2) {
                canvas.capsule(proj.px(seg[0]), proj.px(seg[1]), w, SEG_FRAME, owner, |_, _, _| dark);
            }
        }

        if damage.dirt != Dirt::None {
            let (density, color) = match damage.dirt {
                Dirt::Mud => (0.22, [0.33, 0.24, 0.12]),
                _ => (0.18, [0.62, 0.27, 0.08]),
            };
            for i in 0..canvas.rgb.len() {
                let u: f64 = rng.random();
                if canvas.seg[i] != SEG_BACKGROUND && u < density {
                    canvas.rgb[i] = mix(canvas.rgb[i], color, 0.75);
                }
            }
        }

        let mut part_pixels = [0u64; 5];
        for &o in &canvas.owner {
            if (1..=5).contains(&o) {
                part_pixels[o as usize - 1] += 1;
            }
        }
        let mut float = FloatImage::new(size, size);
        for (i, px) in canvas.rgb.iter().enumerate() {
            float.data[i * 3..i * 3 + 3].copy_from_slice(px);
        }
        let segmentation = self
            .cfg
            .emit_segmentation
            .then(|| GrayImage::from_raw(size as u32, size as u32, canvas.seg.clone()).expect("sized"));
        Ok(RenderOutput {
            image: float.to_rgb8(),
            segmentation,
            view,
            view_index: self.cfg.view_index(&view),
            background_index,
            part_pixels,
            break_gap,
        })
    }

    fn paint_background(&self, canvas: &mut Canvas, index: usize, roll: usize) {
        let size = canvas.size;
        match self.cfg.background_mode {
            BackgroundMode::Uniform => {
                let c = self.cfg.uniform_color.map(|v| v as f32 / 255.0);
                canvas.rgb.iter_mut().for_each(|p| *p = c);
            }
            _ => {
                let bg = &self.backgrounds[index];
                for y in 0..size {
                    for x in 0..size {
                        let sx = (x + roll) % size;
                        let o = (y * size + sx) * 3;
                        canvas.rgb[y * size + x] = [bg.data[o], bg.data[o + 1], bg.data[o + 2]];
                    }
                }
            }
        }
    }
}

fn projection(model: &BikeModelSpec, view: &View, size: usize) -> Projection {
    let rear = model.anchor(Part::RearWheel);
    let front = model.anchor(Part::FrontWheel);
    let r = model.wheel_radius;
    let seat = model.anchor(Part::Seat);
    let head = model.anchor(Part::Handlebar);
    let xmin = rear[0].min(front[0]) - r;
    let xmax = rear[0].max(front[0]) + r;
    let ymin = rear[1].min(front[1]) - r;
    let ymax = (seat[1] + model.seatpost + 0.03).max(head[1] + 0.08);
    let extent = (xmax - xmin).max(ymax - ymin);
    let s = size as f64;
    Projection {
        scale: view.focal_scale * 0.92 * s / extent,
        center_frame: [(xmin + xmax) / 2.0, (ymin + ymax) / 2.0],
        center_px: [s / 2.0 + view.camera_jitter[0] * s, s / 2.0 + view.camera_jitter[1] * s],
        mirror: match view.side {
            Side::Right => 1.0,
            Side::Left => -1.0,
        },
    }
}

/// Procedural outdoor scene for background `index`: sky gradient, ground,
/// hills and blocky scenery, periodic in `x` so it can be rolled like a panorama.
pub fn procedural_scene(index: usize, size: usize) -> FloatImage {
    let mut rng = seed::derived_rng(index as u64, &[b"scene"]);
    let mut img = FloatImage::new(size, size);
    let sky_top: [f32; 3] = [rng.random_range(0.2..0.5), rng.random_range(0.35..0.65), rng.random_range(0.6..0.95)];
    let sky_low: [f32; 3] = [rng.random_range(0.6..0.95), rng.random_range(0.6..0.9), rng.random_range(0.55..0.9)];
    let ground: [f32; 3] = [rng.random_range(0.2..0.5), rng.random_range(0.25..0.5), rng.random_range(0.1..0.35)];
    let horizon = rng.random_range(0.45..0.7);
    let hills: Vec<(f64, f64, f64, [f32; 3])> = (0..rng.random_range(1..4))
        .map(|_| {
            (
                rng.random_range(0.03..0.12),
                rng.random_range(1..4) as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
                [rng.random_range(0.15..0.45), rng.random_range(0.25..0.55), rng.random_range(0.15..0.4)],
            )
        })
        .collect();
    let blocks: Vec<([f64; 4], [f32; 3])> = (0..rng.random_range(2..7))
        .map(|_| {
            let w = rng.random_range(0.05..0.2);
            let h = rng.random_range(0.05..0.3);
            let x = rng.random_range(0.0..1.0);
            ([x, horizon - h, w, h], [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)])
        })
        .collect();
    let s = size as f64;
    for y in 0..size {
        let fy = (y as f64 + 0.5) / s;
        for x in 0..size {
            let fx = (x as f64 + 0.5) / s;
            let mut c = if fy < horizon {
                mix(sky_top, sky_low, (fy / horizon) as f32)
            } else {
                shade(ground, 1.0 - 0.3 * ((fy - horizon) / (1.0 - horizon)) as f32)
            };
            for &(amp, freq, phase, col) in &hills {
                let top = horizon - amp * (0.5 + 0.5 * (std::f64::consts::TAU * freq * fx + phase).sin());
                if fy >= top && fy < horizon {
                    c = col;
                }
            }
            for &([bx, by, bw, bh], col) in &blocks {
                let dx = (fx - bx).rem_euclid(1.0);
                if dx < bw && fy >= by && fy < by + bh {
                    c = col;
                }
            }
            img.data[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&c);
        }
    }
    img
}

fn load_pool(dir: &PathBuf, size: usize) -> Result<Vec<FloatImage>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading background dir {}", dir.display()), e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png") | Some("jpg") | Some("jpeg")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config(format!("no background images in {}", dir.display())));
    }
    paths.iter().map(|p| imageio::load_float(p, Some(size))).collect()
}

/// Render one sample with a fresh [`Renderer`]. Prefer building a renderer
/// once when rendering many samples.
pub fn render_sample(
    library: &ModelLibrary,
    instance: &BikeInstance,
    damage: &DamageState,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderOutput> {
    Renderer::new(library.clone(), cfg.clone())?.render(instance, damage, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::Phase;
    use crate::synthgen::damage::{sample_damage, DamageProbabilities, TubeSite};
    use crate::synthgen::instance::sample_instance;

    fn uniform_cfg(size: usize) -> RenderConfig {
        RenderConfig {
            image_size: size,
            background_mode: BackgroundMode::Uniform,
            uniform_color: [10, 200, 30],
            ..Default::default()
        }
    }

    fn instance(model: &str) -> BikeInstance {
        sample_instance(&ModelLibrary::builtin(), model, 3).unwrap()
    }

    #[test]
    fn missing_parts_leave_no_pixels() {
        let lib = ModelLibrary::builtin();
        let mut damage = DamageState::pristine(Phase::After);
        damage.missing = [true, false, true, false, false];
        let out = render_sample(&lib, &instance("rondo"), &damage, &uniform_cfg(96), 5).unwrap();
        let seg = out.segmentation.unwrap();
        assert!(!seg.pixels().any(|p| p.0[0] == SEG_FRONT_WHEEL));
        assert!(!seg.pixels().any(|p| p.0[0] == SEG_SEAT));
        assert!(seg.pixels().any(|p| p.0[0] == SEG_REAR_WHEEL));
        assert!(seg.pixels().any(|p| p.0[0] == SEG_CRANKSET));
        assert_eq!(out.part_pixels[0], 0);
        assert_eq!(out.part_pixels[2], 0);
        assert!(out.part_pixels[3] > 0);
    }

    #[test]
    fn rendering_is_bit_identical() {
        let lib = ModelLibrary::builtin();
        let damage = sample_damage(Phase::After, 11, &DamageProbabilities::default()).unwrap();
        let cfg = RenderConfig { image_size: 64, ..Default::default() };
        let a = render_sample(&lib, &instance("corsa"), &damage, &cfg, 9).unwrap();
        let b = render_sample(&lib, &instance("corsa"), &damage, &cfg, 9).unwrap();
        assert_eq!(a.image.as_raw(), b.image.as_raw());
        assert_eq!(a.segmentation, b.segmentation);
    }

    #[test]
    fn uniform_background_is_exact() {
        let lib = ModelLibrary::builtin();
        let damage = DamageState::pristine(Phase::Before);
        let out = render_sample(&lib, &instance("lido"), &damage, &uniform_cfg(64), 1).unwrap();
        let seg = out.segmentation.unwrap();
        let mut background = 0;
        for (p, s) in out.image.pixels().zip(seg.pixels()) {
            if s.0[0] == SEG_BACKGROUND {
                assert_eq!(p.0, [10, 200, 30]);
                background += 1;
            }
        }
        assert!(background > 64 * 64 / 2);
    }

    #[test]
    fn small_images_rejected() {
        let lib = ModelLibrary::builtin();
        let cfg = RenderConfig { image_size: 31, ..Default::default() };
        let damage = DamageState::pristine(Phase::Before);
        assert!(matches!(
            render_sample(&lib, &instance("rondo"), &damage, &cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn broken_frame_has_a_gap_on_the_cut_tube() {
        let lib = ModelLibrary::builtin();
        let mut damage = DamageState::pristine(Phase::After);
        damage.broken = true;
        damage.break_site = Some(TubeSite { tube: 2, position: 0.5, direction: 1.0 });
        let out = render_sample(&lib, &instance("strada"), &damage, &uniform_cfg(128), 2).unwrap();
        let [a, b] = out.break_gap.unwrap();
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let seg = out.segmentation.unwrap();
        assert_ne!(seg.get_pixel(mid[0] as u32, mid[1] as u32).0[0], SEG_FRAME);
    }

    #[test]
    fn bend_displaces_frame_pixels() {
        let lib = ModelLibrary::builtin();
        let cfg = RenderConfig {
            fixed_view: Some(View { side: Side::Right, camera_jitter: [0.0, 0.0], focal_scale: 0.9 }),
            fixed_background: Some(0),
            ..uniform_cfg(96)
        };
        let straight = DamageState::pristine(Phase::After);
        let mut bent = straight.clone();
        bent.bent = true;
        bent.bend_magnitude = 0.07;
        bent.bend_site = Some(TubeSite { tube: 1, position: 0.5, direction: 1.0 });
        let a = render_sample(&lib, &instance("ridge"), &straight, &cfg, 4).unwrap();
        let b = render_sample(&lib, &instance("ridge"), &bent, &cfg, 4).unwrap();
        let frame = |o: &RenderOutput| {
            o.segmentation.as_ref().unwrap().pixels().map(|p| (p.0[0] == SEG_FRAME) as u8).collect::<Vec<_>>()
        };
        let diff = frame(&a).iter().zip(frame(&b).iter()).filter(|(x, y)| x != y).count();
        assert!(diff > 10, "bend changed only {diff} frame pixels");
    }

    #[test]
    fn view_index_covers_vocabulary() {
        let cfg = RenderConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for side in [Side::Left, Side::Right] {
            for f in [0.75, 0.8, 0.87, 0.95, 1.0] {
                let i = cfg.view_index(&View { side, camera_jitter: [0.0; 2], focal_scale: f });
                assert!(i < VIEW_VOCAB);
                seen.insert(i);
            }
        }
        assert_eq!(seen.len(), VIEW_VOCAB);
    }
}

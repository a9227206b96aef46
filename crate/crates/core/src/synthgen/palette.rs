//! Material pools: 50 colours, 5 patterns, 10 decals.

pub const NUM_COLORS: usize = 50;
pub const NUM_PATTERNS: usize = 5;
pub const NUM_DECALS: usize = 10;

const HUES: [f64; 10] = [0.0, 25.0, 50.0, 90.0, 140.0, 180.0, 210.0, 240.0, 280.0, 320.0];
const TONES: [(f64, f64); 5] = [(0.85, 0.90), (0.60, 0.70), (0.90, 0.45), (0.35, 0.95), (0.15, 0.30)];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Colour `index` of the 50-colour pool: 10 hues × 5 saturation/value tones.
pub fn color(index: usize) -> [f32; 3] {
    let index = index % NUM_COLORS;
    let (s, v) = TONES[index / HUES.len()];
    hsv_to_rgb(HUES[index % HUES.len()], s, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Solid,
    Stripes,
    TwoTone,
    Fade,
    Bands,
}

pub fn pattern(id: usize) -> Pattern {
    match id % NUM_PATTERNS {
        0 => Pattern::Solid,
        1 => Pattern::Stripes,
        2 => Pattern::TwoTone,
        3 => Pattern::Fade,
        _ => Pattern::Bands,
    }
}

/// Blend weight of the pattern colour for a point at parameter `t ∈ [0, 1]`
/// along tube `tube` (the base colour gets `1 - weight`).
pub fn pattern_weight(p: Pattern, tube: usize, t: f64) -> f32 {
    match p {
        // solid frames still carry the pattern colour on the stays
        Pattern::Solid => (tube < 2) as u8 as f32,
        Pattern::Stripes => ((t * 6.0).floor() as i64 % 2) as f32,
        Pattern::TwoTone => (tube % 2) as f32,
        Pattern::Fade => t as f32,
        Pattern::Bands => ((0.35..0.5).contains(&t) || (0.6..0.7).contains(&t)) as u8 as f32,
    }
}

/// A decal: 3×5 glyph bitmap (row-major, LSB = left column) and ink colour.
#[derive(Debug, Clone, Copy)]
pub struct Decal {
    pub glyph: [u8; 5],
    pub ink: [f32; 3],
}

const DECALS: [Decal; NUM_DECALS] = [
    Decal { glyph: [0b111, 0b101, 0b111, 0b101, 0b101], ink: [1.0, 1.0, 1.0] },
    Decal { glyph: [0b110, 0b101, 0b110, 0b101, 0b110], ink: [0.0, 0.0, 0.0] },
    Decal { glyph: [0b111, 0b001, 0b001, 0b001, 0b111], ink: [0.95, 0.85, 0.1] },
    Decal { glyph: [0b101, 0b111, 0b101, 0b101, 0b101], ink: [0.1, 0.6, 0.95] },
    Decal { glyph: [0b010, 0b010, 0b010, 0b010, 0b010], ink: [0.9, 0.1, 0.1] },
    Decal { glyph: [0b111, 0b100, 0b111, 0b001, 0b111], ink: [1.0, 1.0, 1.0] },
    Decal { glyph: [0b101, 0b101, 0b101, 0b101, 0b010], ink: [0.2, 0.9, 0.3] },
    Decal { glyph: [0b111, 0b010, 0b010, 0b010, 0b010], ink: [0.0, 0.0, 0.0] },
    Decal { glyph: [0b101, 0b101, 0b010, 0b101, 0b101], ink: [0.95, 0.5, 0.0] },
    Decal { glyph: [0b111, 0b101, 0b101, 0b101, 0b111], ink: [0.6, 0.2, 0.8] },
];

pub fn decal(id: usize) -> Decal {
    DECALS[id % NUM_DECALS]
}

//! Deterministic synthetic records standing in for a collected corpus.

use super::{
    enumerate_pairs, CharacterRegion, Keypoint, KeywordGrid, MsdbError, MsdbRecord, Person, Raster,
    Result, TextEncoder, DEFAULT_TEXT_ENCODER_SEED, STORED_NORM_TOLERANCE, UNIT_NORM_TOLERANCE,
};
use crate::rng::SplitMix64;

/// Scenario verbs; each works both alone and as "`<verb>` with Character k".
pub const SUBJECT_VERBS: &[&str] = &[
    "dances", "talks", "walks", "argues", "laughs", "sits", "runs", "plays", "waits", "eats",
    "jumps", "reads", "sings", "points", "waves", "kneels",
];

const PLACES: &[&str] = &[
    "in the park",
    "at the beach",
    "on the street",
    "in the kitchen",
    "at the office",
    "in the library",
];

const FACE_CROP: (u32, u32) = (16, 16);
const BODY_CROP: (u32, u32) = (16, 24);

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub count: usize,
    pub num_chars: usize,
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
    pub dim: usize,
    pub encoder_seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 20,
            num_chars: 2,
            image_size: (224, 128),
            dim: 64,
            encoder_seed: DEFAULT_TEXT_ENCODER_SEED,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub records: Vec<MsdbRecord>,
    /// User-side `(face, body)` reference crops, one pair per character.
    pub refs: Vec<(Raster, Raster)>,
}

pub fn fixtures_gen(spec: &FixtureSpec) -> Result<FixtureSet> {
    if spec.count == 0 {
        return Err(MsdbError::InvalidFixture("count must be at least 1".into()));
    }
    if !(1..=2).contains(&spec.num_chars) {
        return Err(MsdbError::UnsupportedCharacterCount(spec.num_chars));
    }
    if spec.dim == 0 {
        return Err(MsdbError::InvalidFixture("feature dimension must be positive".into()));
    }
    let (w, h) = spec.image_size;
    if w < 16 * spec.num_chars as u32 || h < 32 {
        return Err(MsdbError::InvalidFixture(format!(
            "image {w}x{h} too small for {} characters",
            spec.num_chars
        )));
    }

    let grid = KeywordGrid::new(
        vec![1, 2],
        SUBJECT_VERBS.iter().map(|v| v.to_string()).collect(),
    )?;
    let verbs: Vec<&str> = enumerate_pairs(&grid)?
        .into_iter()
        .filter(|&(n, _)| n as usize == spec.num_chars)
        .map(|(_, v)| v)
        .collect();

    let encoder = TextEncoder::new(spec.encoder_seed, spec.dim);
    let mut rng = SplitMix64::new(spec.seed);
    let mut records = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let verb = verbs[rng.below(verbs.len() as u64) as usize];
        let place = PLACES[rng.below(PLACES.len() as u64) as usize];
        let caption = match spec.num_chars {
            1 => format!("Character 1 {verb} {place}"),
            _ => {
                let (a, b) = if rng.below(2) == 0 { (1, 2) } else { (2, 1) };
                format!("Character {a} {verb} with Character {b} {place}")
            }
        };

        let mut labels: Vec<usize> = (1..=spec.num_chars).collect();
        rng.shuffle(&mut labels);

        let mut characters = Vec::with_capacity(spec.num_chars);
        let mut skeleton = Vec::with_capacity(spec.num_chars);
        let strip = w / spec.num_chars as u32;
        for (r, &label) in labels.iter().enumerate() {
            let figure = Figure::sample(&mut rng, r as u32 * strip, strip, h);
            skeleton.push(figure.keypoints(&mut rng));
            characters.push(CharacterRegion {
                label: Some(label),
                face_mask: figure.face_mask(w, h),
                body_mask: figure.body_mask(w, h),
                ref_face: texture(&mut rng, FACE_CROP, 60 + 60 * label as u8),
                ref_body: texture(&mut rng, BODY_CROP, 40 + 70 * label as u8),
            });
        }

        let feature = encoder.embed_text(&caption)?;
        let mut record = MsdbRecord {
            id: format!("msdb-{i:05}"),
            caption,
            feature,
            skeleton,
            characters,
            image_size: (w, h),
        };
        record.validate(UNIT_NORM_TOLERANCE)?;
        // Stored precision, so that an in-memory index equals its reloaded copy.
        for x in &mut record.feature {
            *x = *x as f32 as f64;
        }
        record.validate(STORED_NORM_TOLERANCE)?;
        records.push(record);
    }

    let refs = (1..=spec.num_chars)
        .map(|k| {
            let mut r = SplitMix64::new(spec.seed ^ (0xC0FF_EE00 + k as u64));
            (
                texture(&mut r, FACE_CROP, 90 + 50 * k as u8),
                texture(&mut r, BODY_CROP, 70 + 60 * k as u8),
            )
        })
        .collect();
    Ok(FixtureSet { records, refs })
}

fn texture(rng: &mut SplitMix64, (w, h): (u32, u32), base: u8) -> Raster {
    Raster::from_fn(w, h, |_, _| base.saturating_add(rng.below(48) as u8))
}

/// A stick-figure silhouette: circular head above a rectangular torso.
struct Figure {
    head_cx: f64,
    head_cy: f64,
    head_r: f64,
    body_x0: u32,
    body_x1: u32,
    body_y0: u32,
    body_y1: u32,
}

impl Figure {
    fn sample(rng: &mut SplitMix64, strip_x0: u32, strip_w: u32, h: u32) -> Self {
        let sw = strip_w as f64;
        let hf = h as f64;
        let bw = sw * rng.uniform(0.4, 0.7);
        let x0 = strip_x0 as f64 + rng.uniform(0.05 * sw, sw - bw - 0.05 * sw);
        let top = hf * rng.uniform(0.05, 0.2);
        let bottom = hf * rng.uniform(0.8, 0.95);
        let head_r = (bw * rng.uniform(0.25, 0.35)).min(0.2 * (bottom - top)).max(2.0);
        let body_y0 = (top + 2.0 * head_r).ceil() as u32;
        Self {
            head_cx: x0 + bw / 2.0,
            head_cy: top + head_r,
            head_r,
            body_x0: x0.round() as u32,
            body_x1: (x0 + bw).round() as u32,
            body_y0,
            body_y1: (bottom.round() as u32).max(body_y0 + 1),
        }
    }

    fn in_head(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 + 0.5 - self.head_cx;
        let dy = y as f64 + 0.5 - self.head_cy;
        dx * dx + dy * dy <= self.head_r * self.head_r
    }

    fn in_body(&self, x: u32, y: u32) -> bool {
        (self.body_x0..self.body_x1).contains(&x) && (self.body_y0..self.body_y1).contains(&y)
    }

    fn face_mask(&self, w: u32, h: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| if self.in_head(x, y) { 255 } else { 0 })
    }

    fn body_mask(&self, w: u32, h: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| {
            if self.in_body(x, y) && !self.in_head(x, y) {
                255
            } else {
                0
            }
        })
    }

    /// COCO-ordered keypoints laid out over the silhouette.
    fn keypoints(&self, rng: &mut SplitMix64) -> Person {
        let (cx, cy, r) = (self.head_cx, self.head_cy, self.head_r);
        let x0 = self.body_x0 as f64;
        let x1 = self.body_x1 as f64;
        let y0 = self.body_y0 as f64;
        let y1 = self.body_y1 as f64;
        let span = y1 - y0;
        let anchors = [
            (cx, cy),                              // nose
            (cx + 0.35 * r, cy - 0.2 * r),         // left eye
            (cx - 0.35 * r, cy - 0.2 * r),         // right eye
            (cx + 0.9 * r, cy),                    // left ear
            (cx - 0.9 * r, cy),                    // right ear
            (x1, y0 + 0.05 * span),                // left shoulder
            (x0, y0 + 0.05 * span),                // right shoulder
            (x1, y0 + 0.25 * span),                // left elbow
            (x0, y0 + 0.25 * span),                // right elbow
            (x1, y0 + 0.45 * span),                // left wrist
            (x0, y0 + 0.45 * span),                // right wrist
            (cx + 0.25 * (x1 - x0), y0 + 0.5 * span), // left hip
            (cx - 0.25 * (x1 - x0), y0 + 0.5 * span), // right hip
            (cx + 0.25 * (x1 - x0), y0 + 0.75 * span),
            (cx - 0.25 * (x1 - x0), y0 + 0.75 * span),
            (cx + 0.25 * (x1 - x0), y1 - 1.0),
            (cx - 0.25 * (x1 - x0), y1 - 1.0),
        ];
        anchors
            .iter()
            .map(|&(x, y)| Keypoint {
                x: x + rng.uniform(-1.0, 1.0),
                y: y + rng.uniform(-1.0, 1.0),
                confidence: rng.uniform(0.5, 1.0),
            })
            .collect()
    }
}

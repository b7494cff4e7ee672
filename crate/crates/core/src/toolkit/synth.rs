//! Parameterized synthetic traces for three scene archetypes.
//!
//! * `static`: a person walks in, sits down to read (occasional page turns),
//!   stands up and leaves. Objects on the table never move.
//! * `interaction`: a seated person eats, periodically lifting a spoon or a cup.
//! * `walking`: people cross the scene one after another at walking speed.
//!
//! Change statistics are modelled from the ground truth: entries and exits
//! change the background, translation and limb motion change an entity's patch.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::change::{ChangeObservation, Raster};
use crate::error::{structural, Result};
use crate::scene::{EntityId, EntityKind, FrameStamp, PatchRegion, DEFAULT_FRAME_PERIOD_MS};
use crate::toolkit::trace::{ChangeData, ContainerKind, Trace, TraceEntity, TraceEvent, TraceFrame, TraceHeader};

pub const FRAME_W: f64 = 640.0;
pub const FRAME_H: f64 = 480.0;
pub const KEYPOINTS: usize = 133;

/// Changed-pixel footprint credited per pixel of keypoint displacement.
const LIMB_FOOTPRINT: f64 = 16.0;
/// Histogram shift per changed background pixel.
const SHIFT_PER_PIXEL: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Static,
    Interaction,
    Walking,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Static, Archetype::Interaction, Archetype::Walking];

    pub fn as_str(&self) -> &'static str {
        match self {
            Archetype::Static => "static",
            Archetype::Interaction => "interaction",
            Archetype::Walking => "walking",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "static" => Ok(Archetype::Static),
            "interaction" => Ok(Archetype::Interaction),
            "walking" => Ok(Archetype::Walking),
            other => Err(format!("unknown archetype {other:?} (static | interaction | walking)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub archetype: Archetype,
    pub frames: usize,
    pub seed: u64,
    pub frame_period_ms: f64,
    /// Emit low-resolution rasters of this size instead of change statistics.
    pub raster: Option<(usize, usize)>,
}

impl SynthOptions {
    pub fn new(archetype: Archetype, frames: usize, seed: u64) -> Self {
        Self {
            archetype,
            frames,
            seed,
            frame_period_ms: DEFAULT_FRAME_PERIOD_MS,
            raster: None,
        }
    }
}

pub fn generate(opts: &SynthOptions) -> Result<Trace> {
    if opts.frames < 2 {
        return Err(structural("a trace needs at least 2 frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let script = match opts.archetype {
        Archetype::Static => static_script(opts.frames, &mut rng),
        Archetype::Interaction => interaction_script(opts.frames, &mut rng),
        Archetype::Walking => walking_script(opts.frames, &mut rng),
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    noise_rng.set_stream(1);
    let mut frames = Vec::with_capacity(opts.frames);
    for (i, entities) in script.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(&script[i - 1]) };
        let events = entity_events(prev, entities);
        let change = match opts.raster {
            Some((w, h)) => ChangeData::from_raster(&render(entities, w, h)),
            None => ChangeData::Stats(change_stats(prev, entities, &mut noise_rng)),
        };
        frames.push(TraceFrame {
            stamp: FrameStamp::at(i as u64, opts.frame_period_ms),
            entities: entities.clone(),
            events,
            change: Some(change),
        });
    }
    let mut header = TraceHeader::new(ContainerKind::Trace, opts.frame_period_ms, FRAME_W, FRAME_H);
    header.keypoint_count = KEYPOINTS;
    header.archetype = Some(opts.archetype.to_string());
    header.seed = Some(opts.seed);
    Trace::new(header, frames)
}

// ---------------------------------------------------------------------------
// Human body model

/// Articulation parameters of the procedural body.
#[derive(Debug, Clone, Copy, Default)]
struct Posture {
    /// Gait phase term in [-1, 1].
    swing: f64,
    /// 0 standing, 1 seated.
    sit: f64,
    /// Right and left hand reach toward absolute targets, in [0, 1].
    reach_right: f64,
    reach_left: f64,
    target_right: (f64, f64),
    target_left: (f64, f64),
    head_dx: f64,
}

fn lerp(a: (f64, f64), b: (f64, f64), t: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

fn hand(wrist: (f64, f64), scale: f64, side: f64, out: &mut Vec<[f64; 2]>) {
    out.push([wrist.0, wrist.1]);
    for f in 0..5 {
        let angle = PI / 2.0 + side * (f as f64 - 2.0) * 0.25;
        for j in 1..=4 {
            let r = j as f64 * 0.02 * scale;
            out.push([wrist.0 + r * angle.cos() * side, wrist.1 + r * angle.sin()]);
        }
    }
}

fn human_keypoints(b: &PatchRegion, p: &Posture) -> Vec<[f64; 2]> {
    let cx = b.x + b.w / 2.0;
    let at = |u: f64, v: f64| (cx + u * b.w, b.y + v * b.h);
    let swing = p.swing * 0.15;
    let knee_fwd = 0.25 * p.sit;
    let rest_lw = at(-0.25 - swing, 0.48);
    let rest_rw = at(0.25 + swing, 0.48);
    let rest_le = at(-0.24 - swing / 2.0, 0.35);
    let rest_re = at(0.24 + swing / 2.0, 0.35);
    let l_sh = at(-0.2, 0.2);
    let r_sh = at(0.2, 0.2);
    let lw = lerp(rest_lw, p.target_left, p.reach_left);
    let rw = lerp(rest_rw, p.target_right, p.reach_right);
    let le = lerp(rest_le, lerp(l_sh, p.target_left, 0.5), p.reach_left * 0.8);
    let re = lerp(rest_re, lerp(r_sh, p.target_right, 0.5), p.reach_right * 0.8);
    let hd = p.head_dx;
    let body = [
        at(0.0, 0.07),
        at(-0.04, 0.055),
        at(0.04, 0.055),
        at(-0.08, 0.065),
        at(0.08, 0.065),
        l_sh,
        r_sh,
        le,
        re,
        lw,
        rw,
        at(-0.1, 0.52),
        at(0.1, 0.52),
        at(-0.11 + swing + knee_fwd, 0.73 - 0.1 * p.sit),
        at(0.11 - swing + knee_fwd, 0.73 - 0.1 * p.sit),
        at(-0.11 + 1.5 * swing + knee_fwd, 0.95),
        at(0.11 - 1.5 * swing + knee_fwd, 0.95),
    ];
    let mut out: Vec<[f64; 2]> = body
        .iter()
        .enumerate()
        .map(|(i, (x, y))| if i < 5 { [x + hd, *y] } else { [*x, *y] })
        .collect();
    // feet: big toe, small toe, heel
    for ankle in [body[15], body[16]] {
        out.push([ankle.0 + 0.06 * b.w, ankle.1 + 0.02 * b.h]);
        out.push([ankle.0 + 0.03 * b.w, ankle.1 + 0.025 * b.h]);
        out.push([ankle.0 - 0.03 * b.w, ankle.1 + 0.01 * b.h]);
    }
    // face: jaw, brows, nose, eyes, mouth
    let hc = (cx + hd, b.y + 0.07 * b.h);
    let rh = 0.09 * b.w;
    for i in 0..17 {
        let a = PI * (1.1 - 1.2 * i as f64 / 16.0);
        out.push([hc.0 + rh * a.cos(), hc.1 - rh * a.sin()]);
    }
    for i in 0..10 {
        let u = (i as f64 - 4.5) / 4.5;
        out.push([hc.0 + u * rh * 0.8, hc.1 - 0.5 * rh - 0.1 * rh * (1.0 - u * u)]);
    }
    for i in 0..9 {
        let t = i as f64 / 8.0;
        let x = if i < 4 { 0.0 } else { (t - 0.75) * rh };
        out.push([hc.0 + x, hc.1 - 0.3 * rh + t * 0.5 * rh]);
    }
    for side in [-1.0, 1.0] {
        for i in 0..6 {
            let a = 2.0 * PI * i as f64 / 6.0;
            out.push([hc.0 + side * 0.35 * rh + 0.15 * rh * a.cos(), hc.1 - 0.2 * rh + 0.07 * rh * a.sin()]);
        }
    }
    for i in 0..20 {
        let a = 2.0 * PI * i as f64 / 20.0;
        let r = if i < 12 { 0.3 } else { 0.2 };
        out.push([hc.0 + r * rh * a.cos(), hc.1 + 0.5 * rh + 0.1 * rh * a.sin()]);
    }
    hand(lw, b.w, -1.0, &mut out);
    hand(rw, b.w, 1.0, &mut out);
    debug_assert_eq!(out.len(), KEYPOINTS);
    out
}

fn human(id: u64, region: PatchRegion, relevance: f64, posture: &Posture) -> TraceEntity {
    TraceEntity {
        id: EntityId(id),
        kind: EntityKind::Human,
        keypoints: Some(human_keypoints(&region, posture)),
        region,
        relevance,
    }
}

fn object(id: u64, x: f64, y: f64, w: f64, h: f64, relevance: f64) -> TraceEntity {
    TraceEntity {
        id: EntityId(id),
        kind: EntityKind::Object,
        region: PatchRegion { x, y, w, h },
        relevance,
        keypoints: None,
    }
}

fn clamp_region(r: PatchRegion) -> PatchRegion {
    let x = r.x.clamp(0.0, FRAME_W - r.w);
    let y = r.y.clamp(0.0, FRAME_H - r.h);
    PatchRegion { x, y, ..r }
}

/// Smooth 0 -> 1 -> 0 bump over `len` frames.
fn bump(t: usize, len: usize) -> f64 {
    (PI * t as f64 / len as f64).sin().powi(2)
}

/// Start frames of recurring actions spaced uniformly in `gap`.
fn action_starts(from: usize, to: usize, gap: (usize, usize), rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = from + rng.random_range(gap.0..=gap.1);
    while t < to {
        out.push(t);
        t += rng.random_range(gap.0..=gap.1);
    }
    out
}

fn active_action(t: usize, starts: &[usize], len: usize) -> Option<(usize, usize)> {
    starts
        .iter()
        .enumerate()
        .find(|(_, s)| t >= **s && t < **s + len)
        .map(|(i, s)| (i, t - s))
}

// ---------------------------------------------------------------------------
// Scripts

fn static_script(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<TraceEntity>> {
    let objects = vec![
        object(1, 300.0, 330.0, 60.0, 40.0, 1.0),
        object(2, 430.0, 330.0, 30.0, 36.0, 0.4),
        object(3, 540.0, 140.0, 40.0, 90.0, 0.1),
    ];
    let book_corner = (350.0, 335.0);
    let standing = (110.0, 260.0);
    let seated = PatchRegion { x: 210.0, y: 240.0, w: 120.0, h: 200.0 };
    let speed = 4.0;
    let walk = ((seated.x + 5.0) / speed).ceil() as usize;
    let settle = 12;
    let page_len = 16;

    let enter = ((0.08 * n as f64).round() as usize).max(1);
    let leave_end = n - ((0.08 * n as f64).round() as usize).max(1);
    let sit_start = enter + walk;
    let read_start = sit_start + settle;
    let stand_start = leave_end.saturating_sub(walk + settle);
    let human_fits = stand_start > read_start;
    let turns = if human_fits {
        action_starts(read_start, stand_start.saturating_sub(page_len), (120, 180), rng)
    } else {
        Vec::new()
    };

    let standing_at = |x: f64| clamp_region(PatchRegion { x, y: 180.0, w: standing.0, h: standing.1 });
    let blend = |a: PatchRegion, b: PatchRegion, t: f64| PatchRegion {
        x: a.x + (b.x - a.x) * t,
        y: a.y + (b.y - a.y) * t,
        w: a.w + (b.w - a.w) * t,
        h: a.h + (b.h - a.h) * t,
    };
    let seat_x = seated.x + (seated.w - standing.0) / 2.0;

    (0..n)
        .map(|t| {
            let mut ents = objects.clone();
            if human_fits && t >= enter && t < leave_end {
                let mut posture = Posture::default();
                let region = if t < sit_start {
                    let k = (t - enter) as f64;
                    posture.swing = (2.0 * PI * k / 20.0).sin();
                    standing_at((k * speed).min(seat_x))
                } else if t < read_start {
                    let s = (t - sit_start) as f64 / settle as f64;
                    posture.sit = s;
                    blend(standing_at(seat_x), seated, s)
                } else if t < stand_start {
                    posture.sit = 1.0;
                    posture.head_dx = (2.0 * PI * t as f64 / 90.0).sin();
                    if let Some((_, k)) = active_action(t, &turns, page_len) {
                        posture.reach_right = bump(k, page_len);
                        posture.target_right = book_corner;
                    }
                    seated
                } else if t < stand_start + settle {
                    let s = 1.0 - (t - stand_start) as f64 / settle as f64;
                    posture.sit = s;
                    blend(standing_at(seat_x), seated, s)
                } else {
                    let k = (t - stand_start - settle) as f64;
                    posture.swing = (2.0 * PI * k / 20.0).sin();
                    standing_at(seat_x - k * speed)
                };
                ents.push(human(10, region, 1.0, &posture));
            }
            ents
        })
        .collect()
}

fn interaction_script(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<TraceEntity>> {
    let seat = PatchRegion { x: 250.0, y: 170.0, w: 140.0, h: 240.0 };
    let bowl = object(1, 290.0, 400.0, 70.0, 30.0, 1.0);
    let cup_rest = (440.0, 380.0);
    let spoon_rest = (372.0, 395.0);
    let mouth = (seat.x + seat.w / 2.0, seat.y + 0.07 * seat.h + 0.045 * seat.w);
    let eat_len = 24;
    let starts = action_starts(0, n.saturating_sub(eat_len), (60, 90), rng);
    let uses_cup: Vec<bool> = starts.iter().map(|_| rng.random_bool(0.3)).collect();

    (0..n)
        .map(|t| {
            let mut posture = Posture {
                sit: 1.0,
                head_dx: (2.0 * PI * t as f64 / 120.0).sin(),
                ..Posture::default()
            };
            let mut spoon = spoon_rest;
            let mut cup = cup_rest;
            if let Some((i, k)) = active_action(t, &starts, eat_len) {
                let lift = bump(k, eat_len);
                if uses_cup[i] {
                    posture.reach_left = lift;
                    posture.target_left = (mouth.0 + 10.0, mouth.1 + 10.0);
                    cup = lerp(cup_rest, (mouth.0 + 10.0, mouth.1 + 10.0), lift);
                } else {
                    posture.reach_right = lift;
                    posture.target_right = mouth;
                    spoon = lerp(spoon_rest, mouth, lift);
                }
                posture.head_dx += 4.0 * lift;
            }
            vec![
                bowl.clone(),
                object(2, spoon.0 - 8.0, spoon.1 - 20.0, 16.0, 40.0, 1.0),
                object(3, cup.0 - 15.0, cup.1 - 20.0, 30.0, 40.0, 0.6),
                human(10, seat, 1.0, &posture),
            ]
        })
        .collect()
}

fn walking_script(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<TraceEntity>> {
    let scenery = vec![object(1, 40.0, 360.0, 140.0, 60.0, 0.2), object(2, 520.0, 60.0, 60.0, 80.0, 0.1)];
    // (id, start, speed, direction, width, height, y)
    let mut walkers = Vec::new();
    let mut t = rng.random_range(10..=30usize);
    let mut id = 10u64;
    let mut dir = 1.0;
    while t < n {
        let speed: f64 = rng.random_range(4.0..6.0);
        let w: f64 = rng.random_range(95.0..115.0);
        let h: f64 = rng.random_range(240.0..275.0);
        let y: f64 = rng.random_range(150.0..(FRAME_H - h - 5.0));
        let dur = ((FRAME_W - w) / speed).floor() as usize + 1;
        walkers.push((id, t, speed, dir, w, h, y, dur));
        t += dur + rng.random_range(20..=60usize);
        id += 1;
        dir = -dir;
    }
    (0..n)
        .map(|t| {
            let mut ents = scenery.clone();
            for &(id, start, speed, dir, w, h, y, dur) in &walkers {
                if t < start || t >= start + dur {
                    continue;
                }
                let k = (t - start) as f64;
                let x = if dir > 0.0 { k * speed } else { FRAME_W - w - k * speed };
                let region = clamp_region(PatchRegion { x, y, w, h });
                let posture = Posture {
                    swing: dir * (2.0 * PI * k / 18.0).sin(),
                    ..Posture::default()
                };
                ents.push(human(id, region, 1.0, &posture));
            }
            ents
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Derived records

fn entity_events(prev: Option<&Vec<TraceEntity>>, curr: &[TraceEntity]) -> Vec<TraceEvent> {
    let Some(prev) = prev else {
        return curr.iter().map(|e| TraceEvent::Enter { id: e.id }).collect();
    };
    let mut events: Vec<TraceEvent> = curr
        .iter()
        .filter(|e| !prev.iter().any(|p| p.id == e.id))
        .map(|e| TraceEvent::Enter { id: e.id })
        .collect();
    events.extend(
        prev.iter()
            .filter(|p| !curr.iter().any(|e| e.id == p.id))
            .map(|p| TraceEvent::Exit { id: p.id }),
    );
    events
}

fn patch_ratio(prev: &TraceEntity, curr: &TraceEntity) -> f64 {
    let (pc, cc) = (prev.region.center(), curr.region.center());
    let (w, h) = (curr.region.w, curr.region.h);
    let translation = 2.0 * ((cc.0 - pc.0).abs() / w + (cc.1 - pc.1).abs() / h)
        + (curr.region.w - prev.region.w).abs() / w
        + (curr.region.h - prev.region.h).abs() / h;
    let limbs = match (&prev.keypoints, &curr.keypoints) {
        (Some(a), Some(b)) => {
            // limb motion relative to the box
            let (dx, dy) = (cc.0 - pc.0, cc.1 - pc.1);
            let moved: f64 = a
                .iter()
                .zip(b)
                .map(|(p, q)| ((q[0] - p[0] - dx).powi(2) + (q[1] - p[1] - dy).powi(2)).sqrt())
                .sum();
            LIMB_FOOTPRINT * moved / (w * h)
        }
        _ => 0.0,
    };
    translation + limbs
}

fn change_stats(prev: Option<&Vec<TraceEntity>>, curr: &[TraceEntity], rng: &mut ChaCha8Rng) -> ChangeObservation {
    let cr_noise: Normal<f64> = Normal::new(0.0, 0.003).expect("valid");
    let shift_noise: Normal<f64> = Normal::new(0.0, 0.5).expect("valid");
    let Some(prev) = prev else {
        return ChangeObservation::quiet();
    };
    let mut changed = 0.0;
    let mut patch_change_ratios = BTreeMap::new();
    for e in curr {
        match prev.iter().find(|p| p.id == e.id) {
            Some(p) => {
                let cr = patch_ratio(p, e) + cr_noise.sample(rng).abs();
                patch_change_ratios.insert(e.id, cr.clamp(0.0, 1.0));
            }
            None => {
                changed += e.region.area();
                patch_change_ratios.insert(e.id, 1.0);
            }
        }
    }
    for p in prev.iter().filter(|p| !curr.iter().any(|e| e.id == p.id)) {
        changed += p.region.area();
    }
    let occupied: f64 = curr.iter().map(|e| e.region.area()).sum();
    let background = (FRAME_W * FRAME_H - occupied).max(1.0);
    let background_cr = (changed / background + cr_noise.sample(rng).abs()).clamp(0.0, 1.0);
    let shift = [0, 1, 2].map(|_| SHIFT_PER_PIXEL * changed + shift_noise.sample(rng).abs());
    ChangeObservation {
        background_cr,
        histogram_shift: shift,
        patch_change_ratios,
    }
}

fn colour(id: EntityId) -> [u8; 3] {
    let h = id.0.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    [(h >> 8) as u8 | 0x80, (h >> 24) as u8 | 0x40, (h >> 40) as u8]
}

/// Flat-shaded rendering of the ground truth at raster resolution.
pub fn render(entities: &[TraceEntity], width: usize, height: usize) -> Raster {
    let sx = width as f64 / FRAME_W;
    let sy = height as f64 / FRAME_H;
    let mut rgb: Vec<[u8; 3]> = (0..width * height)
        .map(|i| {
            let (u, v) = (i % width, i / width);
            let g = (60 + (u * 7 + v * 13) % 40) as u8;
            [g, g, g.saturating_add(10)]
        })
        .collect();
    let mut fill = |x0: f64, y0: f64, x1: f64, y1: f64, c: [u8; 3]| {
        let (u0, u1) = ((x0 * sx).round().max(0.0) as usize, ((x1 * sx).round() as usize).min(width));
        let (v0, v1) = ((y0 * sy).round().max(0.0) as usize, ((y1 * sy).round() as usize).min(height));
        for v in v0..v1 {
            for u in u0..u1 {
                rgb[v * width + u] = c;
            }
        }
    };
    for e in entities {
        let r = &e.region;
        fill(r.x, r.y, r.x + r.w, r.y + r.h, colour(e.id));
        if let Some(kps) = &e.keypoints {
            for k in [kps[9], kps[10], kps[0]] {
                fill(k[0] - 8.0, k[1] - 8.0, k[0] + 8.0, k[1] + 8.0, [240, 200, 170]);
            }
        }
    }
    Raster { width, height, rgb }
}

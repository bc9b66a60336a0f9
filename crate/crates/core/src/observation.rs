//! Object-level observations, the synthetic scene generator and episode files.
//!
//! A frame is observed as exactly `N` candidate objects, ordered by detection
//! score (descending). The flat network input is the vertical concatenation
//! of three blocks, each a horizontal concatenation over the `N` objects:
//!
//! ```text
//! [ o_1 .. o_N | p_1 .. p_N | m_1 .. m_N ]     lengths  d*N | 2*N | k*N
//! ```
//!
//! where `o_i` is the appearance feature, `p_i = (azimuth, elevation)` and
//! `m_i` the motion histogram.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PilotError, Result};
use crate::geometry::{angular_offset, ViewingAngle};

/// Version tag written in every episode header.
pub const EPISODE_FORMAT_VERSION: u32 = 1;

/// Observation dimensions: appearance length `d`, motion bins `k`, slots `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsDims {
    pub d: usize,
    pub k: usize,
    pub n: usize,
}

impl ObsDims {
    pub fn new(d: usize, k: usize, n: usize) -> Self {
        ObsDims { d, k, n }
    }

    /// Length of the flat observation, `(d + 2 + k) * n`.
    pub fn flat_len(&self) -> usize {
        (self.d + 2 + self.k) * self.n
    }

    /// Offset of the position block inside the flat vector.
    pub fn position_offset(&self) -> usize {
        self.d * self.n
    }

    /// Offset of the motion block inside the flat vector.
    pub fn motion_offset(&self) -> usize {
        (self.d + 2) * self.n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectObservation {
    pub appearance: Vec<f64>,
    pub position: ViewingAngle,
    pub motion: Vec<f64>,
    /// Detection confidence in `[0, 1]`.
    pub score: f64,
}

impl ObjectObservation {
    /// The zero-padding object used when fewer than `N` objects are detected.
    pub fn dummy(d: usize, k: usize) -> Self {
        ObjectObservation {
            appearance: vec![0.0; d],
            position: ViewingAngle::default(),
            motion: vec![0.0; k],
            score: 0.0,
        }
    }

    fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.appearance.len() != d || self.motion.len() != k {
            return Err(PilotError::invalid(format!(
                "object feature dims ({}, {}) do not match configured (d={d}, k={k})",
                self.appearance.len(),
                self.motion.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(PilotError::invalid(format!(
                "object score {} outside [0, 1]",
                self.score
            )));
        }
        let finite = self.position.is_finite()
            && self.appearance.iter().chain(&self.motion).all(|v| v.is_finite());
        if !finite {
            return Err(PilotError::invalid("object features must be finite"));
        }
        Ok(())
    }
}

/// Score descending, then azimuth ascending, then elevation ascending.
fn slot_order(a: &ObjectObservation, b: &ObjectObservation) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.position.azimuth().total_cmp(&b.position.azimuth()))
        .then(a.position.elevation().total_cmp(&b.position.elevation()))
}

/// Permutation that sorts `objects` into slot order.
pub fn score_order(objects: &[ObjectObservation]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..objects.len()).collect();
    idx.sort_by(|&i, &j| slot_order(&objects[i], &objects[j]));
    idx
}

/// One frame's observation: exactly `N` score-ordered objects and the
/// concatenated feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameObservation {
    dims: ObsDims,
    objects: Vec<ObjectObservation>,
    flat: Vec<f64>,
}

impl FrameObservation {
    pub fn dims(&self) -> ObsDims {
        self.dims
    }

    pub fn objects(&self) -> &[ObjectObservation] {
        &self.objects
    }

    pub fn object(&self, slot: usize) -> &ObjectObservation {
        &self.objects[slot]
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    /// Re-slots this frame to a different `n`, keeping the top objects.
    pub fn with_slots(&self, n: usize) -> Result<FrameObservation> {
        make_frame_observation(
            self.objects.clone(),
            ObsDims::new(self.dims.d, self.dims.k, n),
        )
    }
}

/// Keeps the top-`n` objects by score, pads with dummies and builds the flat
/// feature vector. The result does not depend on the order of `objects`.
pub fn make_frame_observation(
    objects: Vec<ObjectObservation>,
    dims: ObsDims,
) -> Result<FrameObservation> {
    if dims.n == 0 {
        return Err(PilotError::invalid("slot count n must be at least 1"));
    }
    for o in &objects {
        o.validate(dims.d, dims.k)?;
    }
    let mut objects = objects;
    objects.sort_by(slot_order);
    objects.truncate(dims.n);
    while objects.len() < dims.n {
        objects.push(ObjectObservation::dummy(dims.d, dims.k));
    }

    let mut flat = Vec::with_capacity(dims.flat_len());
    for o in &objects {
        flat.extend_from_slice(&o.appearance);
    }
    for o in &objects {
        flat.push(o.position.azimuth());
        flat.push(o.position.elevation());
    }
    for o in &objects {
        flat.extend_from_slice(&o.motion);
    }
    debug_assert_eq!(flat.len(), dims.flat_len());
    Ok(FrameObservation {
        dims,
        objects,
        flat,
    })
}

/// A sequence of frame observations with a ground-truth viewing angle per
/// frame. `gt_object` records which slot holds the main object (synthetic
/// data only); the training path never reads it.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    dims: ObsDims,
    frames: Vec<FrameObservation>,
    gt: Vec<ViewingAngle>,
    gt_object: Vec<Option<usize>>,
}

impl Episode {
    pub fn new(
        frames: Vec<FrameObservation>,
        gt: Vec<ViewingAngle>,
        gt_object: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        if frames.len() != gt.len() {
            return Err(PilotError::invalid(format!(
                "episode has {} frames but {} ground-truth angles",
                frames.len(),
                gt.len()
            )));
        }
        if frames.len() < 2 {
            return Err(PilotError::invalid("an episode needs at least 2 frames"));
        }
        let dims = frames[0].dims();
        if frames.iter().any(|f| f.dims() != dims) {
            return Err(PilotError::invalid("frames disagree on observation dims"));
        }
        let gt_object = gt_object.unwrap_or_else(|| vec![None; frames.len()]);
        if gt_object.len() != frames.len() {
            return Err(PilotError::invalid("gt_object length differs from frame count"));
        }
        if gt_object.iter().flatten().any(|&i| i >= dims.n) {
            return Err(PilotError::invalid("gt_object index out of range"));
        }
        Ok(Episode {
            dims,
            frames,
            gt,
            gt_object,
        })
    }

    pub fn dims(&self) -> ObsDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FrameObservation] {
        &self.frames
    }

    pub fn gt(&self) -> &[ViewingAngle] {
        &self.gt
    }

    pub fn gt_object(&self) -> &[Option<usize>] {
        &self.gt_object
    }

    /// Ground-truth angle of the first frame; the initial viewing angle for
    /// every pilot.
    pub fn init_angle(&self) -> ViewingAngle {
        self.gt[0]
    }

    /// Frames `[start, end)` as a standalone episode (needs at least 2 frames).
    pub fn window(&self, start: usize, end: usize) -> Result<Episode> {
        if end > self.len() || start >= end {
            return Err(PilotError::invalid(format!("bad window [{start}, {end})")));
        }
        Episode::new(
            self.frames[start..end].to_vec(),
            self.gt[start..end].to_vec(),
            Some(self.gt_object[start..end].to_vec()),
        )
    }

    /// Consecutive windows of at most `len` frames. A trailing window shorter
    /// than 2 frames is dropped.
    pub fn windows(&self, len: usize) -> Result<Vec<Episode>> {
        if len < 2 {
            return Err(PilotError::invalid("window length must be at least 2"));
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start + 2 <= self.len() {
            let end = (start + len).min(self.len());
            out.push(self.window(start, end)?);
            start = end;
        }
        Ok(out)
    }

    /// Re-slots every frame to `n` candidates, tracking the main object.
    pub fn with_slots(&self, n: usize) -> Result<Episode> {
        let mut frames = Vec::with_capacity(self.len());
        let mut gt_object = Vec::with_capacity(self.len());
        for (f, main) in self.frames.iter().zip(&self.gt_object) {
            let nf = f.with_slots(n)?;
            let slot = main.and_then(|s| {
                let target = f.object(s);
                nf.objects().iter().position(|o| o == target)
            });
            frames.push(nf);
            gt_object.push(slot);
        }
        Episode::new(frames, self.gt.clone(), Some(gt_object))
    }
}

/// Fraction of frames (with a known main object) where the main object is
/// the top-scoring candidate.
pub fn main_top_score_rate(episodes: &[Episode]) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for e in episodes {
        for s in e.gt_object().iter().flatten() {
            total += 1;
            if *s == 0 {
                hit += 1;
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Frames per episode (T).
    pub frames: usize,
    /// Real objects per frame (K <= N).
    pub objects: usize,
    /// Candidate slots per frame (N).
    pub slots: usize,
    pub appearance_dim: usize,
    pub motion_bins: usize,
    /// Main-object speed range, degrees/frame.
    pub main_speed: [f64; 2],
    /// Distractor speed range, degrees/frame.
    pub distractor_speed: [f64; 2],
    /// Maximum heading change per frame, degrees.
    pub turn_rate: f64,
    /// Per-frame probability of starting a new motion segment.
    pub segment_prob: f64,
    /// Objects reflect off `±elevation_limit`.
    pub elevation_limit: f64,
    /// Std-dev of detector jitter on observed positions, degrees.
    pub position_noise: f64,
    pub appearance_noise: f64,
    pub score_alpha: f64,
    pub score_beta: f64,
    /// Added to the main object's Beta alpha parameter.
    pub main_score_bias: f64,
    /// Centered moving-average window applied to the main track to form gt.
    pub gt_window: usize,
    /// Seed of the main-object appearance prototype, shared by all episodes.
    pub prototype_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frames: 200,
            objects: 4,
            slots: 8,
            appearance_dim: 16,
            motion_bins: 12,
            main_speed: [1.0, 2.5],
            distractor_speed: [0.5, 2.5],
            turn_rate: 6.0,
            segment_prob: 0.03,
            elevation_limit: 40.0,
            position_noise: 1.0,
            appearance_noise: 0.3,
            score_alpha: 2.0,
            score_beta: 2.0,
            main_score_bias: 1.0,
            gt_window: 5,
            prototype_seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn dims(&self) -> ObsDims {
        ObsDims::new(self.appearance_dim, self.motion_bins, self.slots)
    }

    /// Largest per-frame speed any object can reach.
    pub fn speed_bound(&self) -> f64 {
        self.main_speed[1].max(self.distractor_speed[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects > self.slots {
            return Err(PilotError::invalid(format!(
                "object count K={} exceeds slot count N={}",
                self.objects, self.slots
            )));
        }
        if self.frames < 2 {
            return Err(PilotError::invalid("scene needs at least 2 frames"));
        }
        if self.slots == 0 || self.motion_bins == 0 {
            return Err(PilotError::invalid("slots and motion_bins must be positive"));
        }
        for r in [self.main_speed, self.distractor_speed] {
            if !(r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(PilotError::invalid(format!("bad speed range {r:?}")));
            }
        }
        let positive = [self.score_alpha, self.score_beta];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.main_score_bias >= 0.0) {
            return Err(PilotError::invalid("score Beta parameters must be positive"));
        }
        let non_negative = [
            self.turn_rate,
            self.position_noise,
            self.appearance_noise,
            self.elevation_limit,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(PilotError::invalid("noise, turn rate and limits must be >= 0"));
        }
        if self.elevation_limit > 90.0 || !(0.0..=1.0).contains(&self.segment_prob) {
            return Err(PilotError::invalid("elevation_limit <= 90 and segment_prob in [0,1]"));
        }
        if self.gt_window == 0 {
            return Err(PilotError::invalid("gt_window must be at least 1"));
        }
        Ok(())
    }

    /// The appearance prototype of the main object class.
    pub fn main_prototype(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.prototype_seed);
        random_prototype(&mut rng, self.appearance_dim)
    }
}

fn random_prototype(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| Normal::new(0.0, 1.0).unwrap().sample(rng)).collect()
}

/// Motion state of one object on the unwrapped angle plane.
struct Mover {
    azimuth: f64,
    elevation: f64,
    heading: f64,
    target_heading: f64,
    speed: f64,
    speed_range: [f64; 2],
}

impl Mover {
    fn new(rng: &mut ChaCha8Rng, speed_range: [f64; 2], elevation_limit: f64) -> Self {
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        Mover {
            azimuth: rng.random_range(0.0..360.0),
            elevation: if elevation_limit > 0.0 {
                rng.random_range(-elevation_limit..=elevation_limit) * 0.5
            } else {
                0.0
            },
            heading,
            target_heading: heading,
            speed: uniform(rng, speed_range),
            speed_range,
        }
    }

    /// Advances one frame and returns the displacement actually travelled.
    fn step(&mut self, rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> (f64, f64) {
        if rng.random::<f64>() < cfg.segment_prob {
            self.target_heading = rng.random_range(0.0..std::f64::consts::TAU);
            self.speed = uniform(rng, self.speed_range);
        }
        let max_turn = cfg.turn_rate.to_radians();
        let mut diff = (self.target_heading - self.heading).rem_euclid(std::f64::consts::TAU);
        if diff > std::f64::consts::PI {
            diff -= std::f64::consts::TAU;
        }
        self.heading += diff.clamp(-max_turn, max_turn);

        let (az0, el0) = (self.azimuth, self.elevation);
        self.azimuth += self.speed * self.heading.cos();
        self.elevation += self.speed * self.heading.sin();
        let lim = cfg.elevation_limit;
        if self.elevation > lim || self.elevation < -lim {
            let wall = if self.elevation > lim { lim } else { -lim };
            self.elevation = 2.0 * wall - self.elevation;
            self.heading = -self.heading;
            self.target_heading = -self.target_heading;
        }
        (self.azimuth - az0, self.elevation - el0)
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Speed-weighted direction histogram with linear interpolation between the
/// two nearest bins (a synthetic stand-in for a histogram of optical flow).
pub fn motion_histogram(velocity: (f64, f64), bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    let speed = velocity.0.hypot(velocity.1);
    if speed == 0.0 || bins == 0 {
        return hist;
    }
    let dir = velocity.1.atan2(velocity.0).rem_euclid(std::f64::consts::TAU);
    let pos = dir / (std::f64::consts::TAU / bins as f64);
    let lo = (pos.floor() as usize) % bins;
    let hi = (lo + 1) % bins;
    let frac = pos - pos.floor();
    hist[lo] += speed * (1.0 - frac);
    hist[hi] += speed * frac;
    hist
}

/// Centered moving average with edge replication, on unwrapped coordinates.
fn moving_average(track: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let half = (window / 2) as isize;
    let last = track.len() as isize - 1;
    (0..track.len() as isize)
        .map(|t| {
            let (mut a, mut e) = (0.0, 0.0);
            let mut count = 0.0;
            for j in (t - half)..(t - half + window as isize) {
                let p = track[j.clamp(0, last) as usize];
                a += p.0;
                e += p.1;
                count += 1.0;
            }
            (a / count, e / count)
        })
        .collect()
}

/// Generates one synthetic episode. Deterministic in `(config, seed)`.
///
/// Object 0 is the main object: it carries the shared main appearance
/// prototype and a higher expected detection score. The ground truth is the
/// main object's noise-free track smoothed by a centered moving average.
pub fn synth_scene(config: &SceneConfig, seed: u64) -> Result<Episode> {
    config.validate()?;
    let cfg = config;
    let dims = cfg.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let main_proto = cfg.main_prototype();
    let mut prototypes = vec![main_proto];
    for _ in 1..cfg.objects {
        prototypes.push(random_prototype(&mut rng, cfg.appearance_dim));
    }
    let mut movers: Vec<Mover> = (0..cfg.objects)
        .map(|i| {
            let range = if i == 0 {
                cfg.main_speed
            } else {
                cfg.distractor_speed
            };
            Mover::new(&mut rng, range, cfg.elevation_limit)
        })
        .collect();

    let beta = |a: f64| Beta::new(a, cfg.score_beta).expect("validated Beta parameters");
    let main_scores = beta(cfg.score_alpha + cfg.main_score_bias);
    let other_scores = beta(cfg.score_alpha);
    let app_noise = Normal::new(0.0, cfg.appearance_noise).expect("validated noise");
    let pos_noise = Normal::new(0.0, cfg.position_noise).expect("validated noise");

    let mut main_track = Vec::with_capacity(cfg.frames);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut gt_object = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        let mut objects = Vec::with_capacity(cfg.objects);
        for (i, mover) in movers.iter_mut().enumerate() {
            let velocity = mover.step(&mut rng, cfg);
            let true_pos = (mover.azimuth, mover.elevation);
            if i == 0 {
                main_track.push(true_pos);
            }
            let appearance = prototypes[i]
                .iter()
                .map(|p| p + app_noise.sample(&mut rng))
                .collect();
            let position = ViewingAngle::new(
                true_pos.0 + pos_noise.sample(&mut rng),
                true_pos.1 + pos_noise.sample(&mut rng),
            );
            let score = if i == 0 {
                main_scores.sample(&mut rng)
            } else {
                other_scores.sample(&mut rng)
            };
            objects.push(ObjectObservation {
                appearance,
                position,
                motion: motion_histogram(velocity, cfg.motion_bins),
                score,
            });
        }
        let order = score_order(&objects);
        let main_slot = order.iter().position(|&i| i == 0).filter(|&s| s < dims.n);
        gt_object.push(if cfg.objects > 0 { main_slot } else { None });
        frames.push(make_frame_observation(objects, dims)?);
    }

    let gt = if cfg.objects > 0 {
        moving_average(&main_track, cfg.gt_window)
            .into_iter()
            .map(|(a, e)| ViewingAngle::new(a, e))
            .collect()
    } else {
        vec![ViewingAngle::default(); cfg.frames]
    };
    Episode::new(frames, gt, Some(gt_object))
}

/// Generates `count` episodes with seeds `base_seed, base_seed + 1, ...`.
pub fn synth_dataset(config: &SceneConfig, base_seed: u64, count: usize) -> Result<Vec<Episode>> {
    (0..count as u64)
        .map(|i| synth_scene(config, base_seed.wrapping_add(i)))
        .collect()
}

// ---------------------------------------------------------------------------
// Episode files
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub format_version: u32,
    pub d: usize,
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
}

impl EpisodeHeader {
    pub fn dims(&self) -> ObsDims {
        ObsDims::new(self.d, self.k, self.n)
    }
}

/// `(score, azimuth, elevation, appearance, motion)`
type ObjectTuple = (f64, f64, f64, Vec<f64>, Vec<f64>);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    objects: Vec<ObjectTuple>,
    gt: (f64, f64),
    #[serde(default)]
    gt_object: Option<usize>,
}

/// One decoded frame line.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEntry {
    pub frame: FrameObservation,
    pub gt: ViewingAngle,
    pub gt_object: Option<usize>,
}

/// Writes episodes as line-delimited JSON: a header line per episode followed
/// by one line per frame. Floats use shortest round-trip decimal text.
pub struct EpisodeWriter<W: Write> {
    out: W,
}

impl<W: Write> EpisodeWriter<W> {
    pub fn new(out: W) -> Self {
        EpisodeWriter { out }
    }

    pub fn write_episode(&mut self, episode: &Episode) -> std::io::Result<()> {
        let dims = episode.dims();
        let header = EpisodeHeader {
            format_version: EPISODE_FORMAT_VERSION,
            d: dims.d,
            k: dims.k,
            n: dims.n,
            t: episode.len(),
        };
        serde_json::to_writer(&mut self.out, &header)?;
        self.out.write_all(b"\n")?;
        for ((frame, gt), main) in episode
            .frames()
            .iter()
            .zip(episode.gt())
            .zip(episode.gt_object())
        {
            let record = FrameRecord {
                objects: frame
                    .objects()
                    .iter()
                    .map(|o| {
                        (
                            o.score,
                            o.position.azimuth(),
                            o.position.elevation(),
                            o.appearance.clone(),
                            o.motion.clone(),
                        )
                    })
                    .collect(),
                gt: (gt.azimuth(), gt.elevation()),
                gt_object: *main,
            };
            serde_json::to_writer(&mut self.out, &record)?;
            self.out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Item produced by [`EpisodeReader`].
#[derive(Clone, Debug, PartialEq)]
pub enum StreamItem {
    Header(EpisodeHeader),
    Frame(FrameEntry),
}

/// Streaming episode reader; holds one line in memory at a time.
pub struct EpisodeReader<R: BufRead> {
    input: R,
    line: String,
    line_no: usize,
    current: Option<EpisodeHeader>,
    remaining: usize,
}

impl<R: BufRead> EpisodeReader<R> {
    pub fn new(input: R) -> Self {
        EpisodeReader {
            input,
            line: String::new(),
            line_no: 0,
            current: None,
            remaining: 0,
        }
    }

    pub fn line_number(&self) -> usize {
        self.line_no
    }

    fn parse_err(&self, message: impl Into<String>) -> PilotError {
        PilotError::Parse {
            line: self.line_no,
            message: message.into(),
        }
    }

    /// Next header or frame, or `None` at a clean end of input.
    pub fn next_item(&mut self) -> Result<Option<StreamItem>> {
        self.line.clear();
        let read = self.input.read_line(&mut self.line).map_err(|e| PilotError::Parse {
            line: self.line_no + 1,
            message: e.to_string(),
        })?;
        if read == 0 {
            if self.remaining > 0 {
                return Err(self.parse_err(format!(
                    "unexpected end of file: {} frame(s) missing",
                    self.remaining
                )));
            }
            return Ok(None);
        }
        self.line_no += 1;
        let text = self.line.trim_end_matches(['\n', '\r']);

        if self.remaining == 0 {
            let header: EpisodeHeader = serde_json::from_str(text)
                .map_err(|e| self.parse_err(format!("bad header record: {e}")))?;
            if header.format_version != EPISODE_FORMAT_VERSION {
                return Err(PilotError::Version {
                    found: header.format_version,
                    expected: EPISODE_FORMAT_VERSION,
                });
            }
            if header.t < 2 || header.n == 0 {
                return Err(self.parse_err("header needs T >= 2 and N >= 1"));
            }
            self.current = Some(header);
            self.remaining = header.t;
            return Ok(Some(StreamItem::Header(header)));
        }

        let header = self.current.expect("frame state implies a header");
        let record: FrameRecord = serde_json::from_str(text)
            .map_err(|e| self.parse_err(format!("bad frame record: {e}")))?;
        if record.objects.len() != header.n {
            return Err(self.parse_err(format!(
                "frame has {} objects, header says N={}",
                record.objects.len(),
                header.n
            )));
        }
        let objects = record
            .objects
            .into_iter()
            .map(|(score, az, el, appearance, motion)| ObjectObservation {
                appearance,
                position: ViewingAngle::new(az, el),
                motion,
                score,
            })
            .collect();
        let frame = make_frame_observation(objects, header.dims())
            .map_err(|e| self.parse_err(e.to_string()))?;
        if record.gt_object.is_some_and(|i| i >= header.n) {
            return Err(self.parse_err("gt_object out of range"));
        }
        self.remaining -= 1;
        Ok(Some(StreamItem::Frame(FrameEntry {
            frame,
            gt: ViewingAngle::new(record.gt.0, record.gt.1),
            gt_object: record.gt_object,
        })))
    }

    /// Reads one complete episode, or `None` at end of input.
    pub fn read_episode(&mut self) -> Result<Option<Episode>> {
        let header = match self.next_item()? {
            None => return Ok(None),
            Some(StreamItem::Header(h)) => h,
            Some(StreamItem::Frame(_)) => unreachable!("reader yields a header first"),
        };
        let mut frames = Vec::with_capacity(header.t);
        let mut gt = Vec::with_capacity(header.t);
        let mut main = Vec::with_capacity(header.t);
        for _ in 0..header.t {
            match self.next_item()? {
                Some(StreamItem::Frame(f)) => {
                    frames.push(f.frame);
                    gt.push(f.gt);
                    main.push(f.gt_object);
                }
                _ => return Err(self.parse_err("episode ended early")),
            }
        }
        Episode::new(frames, gt, Some(main))
            .map(Some)
            .map_err(|e| self.parse_err(e.to_string()))
    }
}

pub fn save_episodes(episodes: &[Episode], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| PilotError::io(path, e))?;
    let mut w = EpisodeWriter::new(BufWriter::new(file));
    for e in episodes {
        w.write_episode(e).map_err(|e| PilotError::io(path, e))?;
    }
    w.flush().map_err(|e| PilotError::io(path, e))
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    let file = File::open(path).map_err(|e| PilotError::io(path, e))?;
    read_episodes(BufReader::new(file))
}

pub fn read_episodes<R: BufRead>(input: R) -> Result<Vec<Episode>> {
    let mut reader = EpisodeReader::new(input);
    let mut out = Vec::new();
    while let Some(e) = reader.read_episode()? {
        out.push(e);
    }
    Ok(out)
}

/// Azimuth/elevation velocity of a trajectory at each step (first entry zero).
pub fn velocities(track: &[ViewingAngle]) -> Vec<crate::geometry::Action> {
    let mut out = vec![crate::geometry::Action::ZERO; track.len().min(1)];
    out.extend(track.windows(2).map(|w| angular_offset(w[0], w[1])));
    out
}

//! Synthetic face-like images with planted concepts.
//!
//! Six glyph concepts sit at fixed face regions of a 48x48 canvas. A source
//! class is a set of concepts; the binary target label ("pain") holds when
//! every concept of the target rule is present. The default task makes two
//! classes, `surprise` and `contempt`, differ from another class only by a
//! concept the target task never needs (`C2` upper lid, `C3` dimple).
//!
//! Every glyph is mirror-symmetric about the vertical centre line, so
//! horizontal flips keep each concept in its region.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::pgm;
use crate::seed::{rng_for, tag};
use crate::tensor::Tensor;

pub const CANVAS: usize = 48;
pub const NUM_CONCEPTS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Concept {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
}

impl Concept {
    pub const ALL: [Concept; NUM_CONCEPTS] = [
        Concept::C1,
        Concept::C2,
        Concept::C3,
        Concept::C4,
        Concept::C5,
        Concept::C6,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn region(self) -> &'static str {
        match self {
            Concept::C1 => "brow",
            Concept::C2 => "upper-lid",
            Concept::C3 => "cheek-dimple",
            Concept::C4 => "mouth-corner",
            Concept::C5 => "jaw",
            Concept::C6 => "nose-wrinkle",
        }
    }

    pub fn primitive(self) -> Primitive {
        match self {
            Concept::C1 | Concept::C6 => Primitive::Bar,
            Concept::C2 | Concept::C5 => Primitive::Arc,
            Concept::C3 => Primitive::Wedge,
            Concept::C4 => Primitive::Dot,
        }
    }

    /// Strokes at the canonical position, in pixel coordinates `(x, y)`.
    fn strokes(self) -> Vec<Stroke> {
        use std::f64::consts::PI;
        let seg = |a: (f64, f64), b: (f64, f64), hw: f64| Stroke::Segment {
            a,
            b,
            half_width: hw,
        };
        match self {
            Concept::C1 => vec![seg((10.0, 5.0), (37.0, 5.0), 1.0)],
            Concept::C2 => [14.0, 33.0]
                .iter()
                .map(|&cx| Stroke::Arc {
                    c: (cx, 19.0),
                    r: 5.0,
                    from: -PI * 8.0 / 9.0,
                    to: -PI / 9.0,
                    half_width: 0.8,
                })
                .collect(),
            Concept::C3 => vec![
                seg((9.0, 24.0), (6.0, 27.0), 0.7),
                seg((6.0, 27.0), (9.0, 30.0), 0.7),
                seg((38.0, 24.0), (41.0, 27.0), 0.7),
                seg((41.0, 27.0), (38.0, 30.0), 0.7),
            ],
            Concept::C4 => vec![
                Stroke::Disc {
                    c: (16.5, 34.0),
                    r: 2.0,
                },
                Stroke::Disc {
                    c: (30.5, 34.0),
                    r: 2.0,
                },
            ],
            Concept::C5 => vec![Stroke::Arc {
                c: (23.5, 31.0),
                r: 14.0,
                from: PI / 3.0,
                to: PI * 2.0 / 3.0,
                half_width: 1.0,
            }],
            Concept::C6 => vec![
                seg((20.5, 23.0), (26.5, 23.0), 0.7),
                seg((20.5, 26.0), (26.5, 26.0), 0.7),
            ],
        }
    }

    /// Pixel boxes `(x0, y0, x1, y1)` (inclusive) covered by the strokes at
    /// any jitter offset up to `jitter`.
    pub fn region_boxes(self, jitter: i32) -> Vec<(i32, i32, i32, i32)> {
        self.strokes()
            .iter()
            .map(|s| {
                let (x0, y0, x1, y1) = s.bounds();
                let j = f64::from(jitter);
                (
                    (x0 - j).floor() as i32,
                    (y0 - j).floor() as i32,
                    (x1 + j).ceil() as i32,
                    (y1 + j).ceil() as i32,
                )
            })
            .collect()
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.index() + 1)
    }
}

impl FromStr for Concept {
    type Err = Error;

    /// Accepts `C3`, `c3` or the region name (`cheek-dimple`).
    fn from_str(s: &str) -> Result<Self> {
        Concept::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s) || c.region() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown concept `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Arc,
    Bar,
    Dot,
    Wedge,
}

#[derive(Clone, Copy, Debug)]
enum Stroke {
    Segment {
        a: (f64, f64),
        b: (f64, f64),
        half_width: f64,
    },
    /// Angles in radians with `y` pointing down, drawn from `from` to `to`.
    Arc {
        c: (f64, f64),
        r: f64,
        from: f64,
        to: f64,
        half_width: f64,
    },
    Disc {
        c: (f64, f64),
        r: f64,
    },
}

fn dist(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1)
}

impl Stroke {
    fn shifted(self, dx: f64, dy: f64) -> Stroke {
        let mv = |p: (f64, f64)| (p.0 + dx, p.1 + dy);
        match self {
            Stroke::Segment { a, b, half_width } => Stroke::Segment {
                a: mv(a),
                b: mv(b),
                half_width,
            },
            Stroke::Arc {
                c,
                r,
                from,
                to,
                half_width,
            } => Stroke::Arc {
                c: mv(c),
                r,
                from,
                to,
                half_width,
            },
            Stroke::Disc { c, r } => Stroke::Disc { c: mv(c), r },
        }
    }

    /// Anti-aliased coverage of pixel centre `p`, in `[0, 1]`.
    fn coverage(&self, p: (f64, f64)) -> f64 {
        let (d, hw) = match *self {
            Stroke::Segment { a, b, half_width } => {
                let (vx, vy) = (b.0 - a.0, b.1 - a.1);
                let t =
                    (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
                (dist(p, (a.0 + t * vx, a.1 + t * vy)), half_width)
            }
            Stroke::Arc {
                c,
                r,
                from,
                to,
                half_width,
            } => {
                let theta = (p.1 - c.1).atan2(p.0 - c.0);
                let d = if (from..=to).contains(&theta) {
                    (dist(p, c) - r).abs()
                } else {
                    let end = |a: f64| (c.0 + r * a.cos(), c.1 + r * a.sin());
                    dist(p, end(from)).min(dist(p, end(to)))
                };
                (d, half_width)
            }
            Stroke::Disc { c, r } => (dist(p, c), r),
        };
        (hw + 0.5 - d).clamp(0.0, 1.0)
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Stroke::Segment {
                a,
                b,
                half_width: h,
            } => (
                a.0.min(b.0) - h,
                a.1.min(b.1) - h,
                a.0.max(b.0) + h,
                a.1.max(b.1) + h,
            ),
            Stroke::Arc {
                c,
                r,
                from,
                to,
                half_width: h,
            } => {
                // sample the arc densely; exact extrema are not needed
                let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for i in 0..=64 {
                    let a = from + (to - from) * f64::from(i) / 64.0;
                    let (x, y) = (c.0 + r * a.cos(), c.1 + r * a.sin());
                    b = (
                        b.0.min(x - h),
                        b.1.min(y - h),
                        b.2.max(x + h),
                        b.3.max(y + h),
                    );
                }
                b
            }
            Stroke::Disc { c, r } => (c.0 - r, c.1 - r, c.0 + r, c.1 + r),
        }
    }

    /// Max-blend `intensity * coverage` into the canvas.
    fn draw(&self, canvas: &mut [f32], intensity: f64) {
        let (x0, y0, x1, y1) = self.bounds();
        let lo = |v: f64| ((v - 1.0).floor().max(0.0)) as usize;
        let hi = |v: f64| ((v + 1.0).ceil().min(CANVAS as f64 - 1.0)).max(0.0) as usize;
        for y in lo(y0)..=hi(y1) {
            for x in lo(x0)..=hi(x1) {
                let v = (intensity * self.coverage((x as f64, y as f64))) as f32;
                let px = &mut canvas[y * CANVAS + x];
                *px = px.max(v);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub concept: Concept,
    pub primitive: Primitive,
    /// Stroke intensity is drawn uniformly from `[min, max]`.
    pub intensity: [f32; 2],
    /// Whole-glyph offset drawn uniformly from `[-jitter_px, jitter_px]`.
    pub jitter_px: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub concepts: Vec<Concept>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub concepts: Vec<ConceptSpec>,
    pub classes: Vec<ClassSpec>,
    /// Target label is 1 iff every concept here is present.
    pub target_rule: Vec<Concept>,
    /// Concepts that distinguish a source class but play no part in the
    /// target rule.
    pub forgettable: Vec<Concept>,
    /// Concepts drawn at random (probability 1/2) on source images, whatever
    /// the class. The source model learns to ignore them.
    #[serde(default)]
    pub nuisance: Vec<Concept>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        use Concept::*;
        let concept = |c: Concept, lo: f32, hi: f32| ConceptSpec {
            concept: c,
            primitive: c.primitive(),
            intensity: [lo, hi],
            jitter_px: 2,
        };
        let class = |name: &str, concepts: &[Concept]| ClassSpec {
            name: name.into(),
            concepts: concepts.to_vec(),
        };
        TaskSpec {
            concepts: vec![
                concept(C1, 0.6, 1.0),
                // the forgettable concepts are faint strokes
                concept(C2, 0.15, 0.3),
                concept(C3, 0.15, 0.3),
                concept(C4, 0.6, 1.0),
                concept(C5, 0.6, 1.0),
                concept(C6, 0.25, 0.45),
            ],
            classes: vec![
                class("neutral", &[C4]),
                class("happy", &[C4, C5]),
                class("sad", &[C1]),
                class("fear", &[C1, C5]),
                class("disgust", &[C1, C4]),
                class("anger", &[C1, C4, C5]),
                class("surprise", &[C2, C4, C5]),
                class("contempt", &[C3, C4]),
            ],
            target_rule: vec![C6],
            forgettable: vec![C2, C3],
            nuisance: vec![C6],
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dataset(m));
        let mut seen: Vec<Concept> = self.concepts.iter().map(|c| c.concept).collect();
        seen.sort();
        if seen != Concept::ALL {
            return bad("exactly one spec per concept C1..C6 is required".into());
        }
        for c in &self.concepts {
            if c.primitive != c.concept.primitive() {
                return bad(format!(
                    "{} is drawn as {:?}",
                    c.concept,
                    c.concept.primitive()
                ));
            }
            let [lo, hi] = c.intensity;
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                return bad(format!(
                    "{} intensity range {lo}..{hi} not within (0, 1]",
                    c.concept
                ));
            }
            if !(0..=4).contains(&c.jitter_px) {
                return bad(format!(
                    "{} jitter {} not within 0..=4",
                    c.concept, c.jitter_px
                ));
            }
        }
        if self.classes.len() < 2 {
            return bad("need at least two source classes".into());
        }
        let mut names = HashSet::new();
        let mut sets = HashSet::new();
        for n in &self.nuisance {
            if self.classes.iter().any(|c| c.concepts.contains(n)) || self.forgettable.contains(n) {
                return bad(format!("nuisance concept {n} also marks a source class"));
            }
        }
        for class in &self.classes {
            if class.concepts.is_empty() {
                return bad(format!("class `{}` has an empty concept set", class.name));
            }
            if !names.insert(class.name.as_str()) {
                return bad(format!("duplicate class name `{}`", class.name));
            }
            if !sets.insert(flags_of(&class.concepts)) {
                return bad(format!(
                    "class `{}` repeats another class's concept set",
                    class.name
                ));
            }
            if rule_holds(&self.target_rule, &flags_of(&class.concepts)) {
                return bad(format!(
                    "class `{}` satisfies the target rule by itself",
                    class.name
                ));
            }
        }
        if self.forgettable.is_empty() {
            return bad("no forgettable concept declared".into());
        }
        for f in &self.forgettable {
            if self.target_rule.contains(f) {
                return bad(format!(
                    "forgettable concept {f} is part of the target rule"
                ));
            }
            if !self.classes.iter().any(|c| c.concepts.contains(f)) {
                return bad(format!("forgettable concept {f} marks no source class"));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class `{name}`")))
    }

    /// Classes that carry a forgettable concept.
    pub fn forgotten_classes(&self) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&i| {
                self.classes[i]
                    .concepts
                    .iter()
                    .any(|c| self.forgettable.contains(c))
            })
            .collect()
    }

    fn concept_spec(&self, c: Concept) -> &ConceptSpec {
        self.concepts
            .iter()
            .find(|s| s.concept == c)
            .expect("validated spec")
    }
}

pub fn flags_of(concepts: &[Concept]) -> [bool; NUM_CONCEPTS] {
    let mut f = [false; NUM_CONCEPTS];
    for c in concepts {
        f[c.index()] = true;
    }
    f
}

fn rule_holds(rule: &[Concept], flags: &[bool; NUM_CONCEPTS]) -> bool {
    rule.iter().all(|c| flags[c.index()])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub id: String,
    /// Row-major `CANVAS x CANVAS`, values are multiples of 1/255.
    pub pixels: Vec<f32>,
    /// `None` for probe images, which belong to no source class.
    pub source_class: Option<usize>,
    pub target_label: u8,
    pub concepts: [bool; NUM_CONCEPTS],
}

impl LabeledImage {
    pub fn has(&self, c: Concept) -> bool {
        self.concepts[c.index()]
    }
}

/// Target labels from concept flags: 1 iff the whole rule is present.
pub fn binarize_target_labels(images: &[LabeledImage], task: &TaskSpec) -> Vec<u8> {
    images
        .iter()
        .map(|im| u8::from(rule_holds(&task.target_rule, &im.concepts)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Source training and validation images per class; validation gets a
    /// quarter.
    pub n_per_class: usize,
    /// Source test images per class. Kept apart from `n_per_class` so the
    /// McNemar comparisons have enough discordant pairs without growing the
    /// training set.
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    /// Target images per (source class, label) pair, before splitting.
    pub target_per_class: usize,
    /// Images in the concept-probe set.
    pub n_probe: usize,
    /// Pixel noise of source and probe images.
    pub noise_sigma: f64,
    /// Pixel noise of target images; the target domain is a noisier camera.
    pub target_noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_per_class: 200,
            test_per_class: default_test_per_class(),
            target_per_class: 100,
            n_probe: 240,
            noise_sigma: 0.05,
            target_noise_sigma: 0.2,
            seed: 7,
        }
    }
}

fn default_test_per_class() -> usize {
    200
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 4 {
            return Err(Error::Dataset("n_per_class must be at least 4".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::Dataset("test_per_class must be at least 1".into()));
        }
        if self.target_per_class < 3 {
            return Err(Error::Dataset("target_per_class must be at least 3".into()));
        }
        if self.n_probe < 8 {
            return Err(Error::Dataset("n_probe must be at least 8".into()));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("target_noise_sigma", self.target_noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Dataset(format!("{name} {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = &LabeledImage> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// `(train, val, test)` sizes for `n` images: val and test get a fifth each.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = (n / 5).max(1);
    (n - 2 * held, held, held)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub config: GenConfig,
    pub source: Splits,
    pub target: Splits,
    /// Images with independently balanced concept flags, for probing.
    pub probe: Vec<LabeledImage>,
}

/// Render concepts with per-glyph jitter and intensity, then noise, then
/// quantize to 8 bits.
fn render<R: Rng + ?Sized>(
    spec: &TaskSpec,
    flags: &[bool; NUM_CONCEPTS],
    sigma: f64,
    rng: &mut R,
) -> Vec<f32> {
    let mut canvas = vec![0.0f32; CANVAS * CANVAS];
    for c in Concept::ALL {
        let cs = spec.concept_spec(c);
        // draw the randomness for every concept so flags don't shift streams
        let dx = rng.random_range(-cs.jitter_px..=cs.jitter_px);
        let dy = rng.random_range(-cs.jitter_px..=cs.jitter_px);
        let [lo, hi] = cs.intensity;
        let intensity = if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        if flags[c.index()] {
            for s in c.strokes() {
                s.shifted(f64::from(dx), f64::from(dy))
                    .draw(&mut canvas, f64::from(intensity));
            }
        }
    }
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("sigma validated");
        for px in &mut canvas {
            *px += noise.sample(rng) as f32;
        }
    }
    for px in &mut canvas {
        *px = f32::from(pgm::quantize(f64::from(*px))) / 255.0;
    }
    canvas
}

struct Generator<'a> {
    spec: &'a TaskSpec,
    config: &'a GenConfig,
}

impl Generator<'_> {
    /// Draw a unique image within `seen`; retries reseed deterministically.
    fn unique(
        &self,
        path: &[u64],
        flags: &[bool; NUM_CONCEPTS],
        sigma: f64,
        seen: &mut HashSet<Vec<u8>>,
    ) -> Result<Vec<f32>> {
        for attempt in 0..64u64 {
            let mut full = path.to_vec();
            full.push(attempt);
            let mut rng = rng_for(self.config.seed, &full);
            let px = render(self.spec, flags, sigma, &mut rng);
            let key: Vec<u8> = px.iter().map(|&v| pgm::quantize(f64::from(v))).collect();
            if seen.insert(key) {
                return Ok(px);
            }
        }
        Err(Error::Dataset(
            "could not draw a unique image; add noise or jitter".into(),
        ))
    }

    fn source(&self) -> Result<Splits> {
        let n_val = (self.config.n_per_class / 4).max(1);
        let n_train = self.config.n_per_class - n_val;
        let mut splits = Splits::default();
        let mut seen = [HashSet::new(), HashSet::new(), HashSet::new()];
        for (ci, class) in self.spec.classes.iter().enumerate() {
            for i in 0..self.config.n_per_class + self.config.test_per_class {
                let s = usize::from(i >= n_train) + usize::from(i >= n_train + n_val);
                let mut flags = flags_of(&class.concepts);
                let mut coin = rng_for(self.config.seed, &[tag("nuisance"), ci as u64, i as u64]);
                for n in &self.spec.nuisance {
                    flags[n.index()] = coin.random_bool(0.5);
                }
                let px = self.unique(
                    &[tag("source"), ci as u64, i as u64],
                    &flags,
                    self.config.noise_sigma,
                    &mut seen[s],
                )?;
                let image = LabeledImage {
                    id: String::new(),
                    pixels: px,
                    source_class: Some(ci),
                    target_label: u8::from(rule_holds(&self.spec.target_rule, &flags)),
                    concepts: flags,
                };
                split_mut(&mut splits, s).push(image);
            }
        }
        name_ids(&mut splits, "src");
        Ok(splits)
    }

    /// Every source class contributes the same number of negatives (its own
    /// concepts) and positives (its concepts plus the rule), in every split.
    fn target(&self) -> Result<Splits> {
        let (n_train, n_val, _) = split_sizes(self.config.target_per_class);
        let mut splits = Splits::default();
        let mut seen = [HashSet::new(), HashSet::new(), HashSet::new()];
        for (ci, class) in self.spec.classes.iter().enumerate() {
            for label in [0u8, 1] {
                let mut concepts = class.concepts.clone();
                if label == 1 {
                    concepts.extend(&self.spec.target_rule);
                }
                let flags = flags_of(&concepts);
                for i in 0..self.config.target_per_class {
                    let s = usize::from(i >= n_train) + usize::from(i >= n_train + n_val);
                    let path = [tag("target"), ci as u64, u64::from(label), i as u64];
                    let px =
                        self.unique(&path, &flags, self.config.target_noise_sigma, &mut seen[s])?;
                    split_mut(&mut splits, s).push(LabeledImage {
                        id: String::new(),
                        pixels: px,
                        source_class: Some(ci),
                        target_label: label,
                        concepts: flags,
                    });
                }
            }
        }
        name_ids(&mut splits, "tgt");
        Ok(splits)
    }

    /// Each concept is present in exactly half of the probe images, assigned
    /// by an independent shuffle per concept.
    fn probe(&self) -> Result<Vec<LabeledImage>> {
        let n = self.config.n_probe;
        let mut columns = Vec::with_capacity(NUM_CONCEPTS);
        for c in Concept::ALL {
            let mut col: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
            col.shuffle(&mut rng_for(
                self.config.seed,
                &[tag("probe-flags"), c.index() as u64],
            ));
            columns.push(col);
        }
        let mut seen = HashSet::new();
        (0..n)
            .map(|i| {
                let mut flags = [false; NUM_CONCEPTS];
                for (f, col) in flags.iter_mut().zip(&columns) {
                    *f = col[i];
                }
                let px = self.unique(
                    &[tag("probe"), i as u64],
                    &flags,
                    self.config.noise_sigma,
                    &mut seen,
                )?;
                Ok(LabeledImage {
                    id: format!("probe-{:05}", i + 1),
                    pixels: px,
                    source_class: None,
                    target_label: u8::from(rule_holds(&self.spec.target_rule, &flags)),
                    concepts: flags,
                })
            })
            .collect()
    }
}

fn split_mut(splits: &mut Splits, s: usize) -> &mut Vec<LabeledImage> {
    match s {
        0 => &mut splits.train,
        1 => &mut splits.val,
        _ => &mut splits.test,
    }
}

fn name_ids(splits: &mut Splits, prefix: &str) {
    for (name, list) in [
        ("train", &mut splits.train),
        ("val", &mut splits.val),
        ("test", &mut splits.test),
    ] {
        for (i, im) in list.iter_mut().enumerate() {
            im.id = format!("{prefix}-{name}-{:05}", i + 1);
        }
    }
}

pub fn generate_dataset(spec: &TaskSpec, config: &GenConfig) -> Result<Dataset> {
    spec.validate()?;
    config.validate()?;
    let g = Generator { spec, config };
    Ok(Dataset {
        spec: spec.clone(),
        config: config.clone(),
        source: g.source()?,
        target: g.target()?,
        probe: g.probe()?,
    })
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    task: TaskSpec,
    generation: GenConfig,
}

const LABELS_HEADER: &str = "id,source_class,target_label,C1,C2,C3,C4,C5,C6";

impl Dataset {
    pub fn all_images(&self) -> impl Iterator<Item = &LabeledImage> {
        self.source
            .iter()
            .chain(self.target.iter())
            .chain(&self.probe)
    }

    /// Per-class counts of the source training split.
    pub fn source_train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.spec.classes.len()];
        for im in &self.source.train {
            counts[im.source_class.expect("source image")] += 1;
        }
        counts
    }

    /// Writes `images/<id>.pgm`, `labels.csv` and `spec.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).with_path(&images)?;
        let mut csv = String::from(LABELS_HEADER);
        csv.push('\n');
        for im in self.all_images() {
            pgm::write_unit(
                &images.join(format!("{}.pgm", im.id)),
                CANVAS,
                CANVAS,
                &im.pixels.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
            )?;
            let class = im.source_class.map(|c| c.to_string()).unwrap_or_default();
            csv.push_str(&format!("{},{class},{}", im.id, im.target_label));
            for f in im.concepts {
                csv.push_str(if f { ",1" } else { ",0" });
            }
            csv.push('\n');
        }
        let labels = dir.join("labels.csv");
        std::fs::write(&labels, csv).with_path(&labels)?;
        let spec = dir.join("spec.json");
        let json = serde_json::to_string_pretty(&SpecFile {
            task: self.spec.clone(),
            generation: self.config.clone(),
        })?;
        std::fs::write(&spec, json + "\n").with_path(&spec)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let spec_path = dir.join("spec.json");
        let file: SpecFile =
            serde_json::from_str(&std::fs::read_to_string(&spec_path).with_path(&spec_path)?)?;
        file.task.validate()?;
        let labels_path = dir.join("labels.csv");
        let text = std::fs::read_to_string(&labels_path).with_path(&labels_path)?;
        let mut lines = text.lines();
        if lines.next() != Some(LABELS_HEADER) {
            return Err(Error::Dataset(format!(
                "{}: unexpected header",
                labels_path.display()
            )));
        }
        let mut ds = Dataset {
            spec: file.task,
            config: file.generation,
            source: Splits::default(),
            target: Splits::default(),
            probe: Vec::new(),
        };
        for (n, line) in lines.enumerate() {
            let bad = |m: &str| Error::Dataset(format!("{}:{}: {m}", labels_path.display(), n + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 + NUM_CONCEPTS {
                return Err(bad("wrong column count"));
            }
            let id = cols[0].to_string();
            let source_class = match cols[1] {
                "" => None,
                s => Some(s.parse::<usize>().map_err(|_| bad("bad source_class"))?),
            };
            if source_class.is_some_and(|c| c >= ds.spec.classes.len()) {
                return Err(bad("source_class out of range"));
            }
            let target_label = match cols[2] {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad("target_label must be 0 or 1")),
            };
            let mut concepts = [false; NUM_CONCEPTS];
            for (f, s) in concepts.iter_mut().zip(&cols[3..]) {
                *f = match *s {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("concept flags must be 0 or 1")),
                };
            }
            let (w, h, px) = pgm::read(&dir.join("images").join(format!("{id}.pgm")))?;
            if (w, h) != (CANVAS, CANVAS) {
                return Err(bad("image is not 48x48"));
            }
            let image = LabeledImage {
                pixels: px.iter().map(|&b| f32::from(b) / 255.0).collect(),
                id,
                source_class,
                target_label,
                concepts,
            };
            let parts: Vec<&str> = image.id.splitn(3, '-').collect();
            let splits = match parts[0] {
                "src" => &mut ds.source,
                "tgt" => &mut ds.target,
                "probe" => {
                    ds.probe.push(image);
                    continue;
                }
                _ => return Err(bad("id must start with src-, tgt- or probe-")),
            };
            match parts.get(1) {
                Some(&"train") => splits.train.push(image),
                Some(&"val") => splits.val.push(image),
                Some(&"test") => splits.test.push(image),
                _ => return Err(bad("id names no split")),
            }
        }
        Ok(ds)
    }
}

/// Stack images into an `[N, 48, 48, 1]` batch.
pub fn to_tensor<'a>(images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<Tensor<f32>> {
    let px: Vec<&[f32]> = images.into_iter().map(|im| im.pixels.as_slice()).collect();
    if px.is_empty() {
        return Err(Error::InvalidArgument("no images to stack".into()));
    }
    Tensor::stack(&[CANVAS, CANVAS, 1], &px)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            n_per_class: 6,
            test_per_class: 2,
            target_per_class: 4,
            n_probe: 16,
            noise_sigma: 0.05,
            target_noise_sigma: 0.1,
            seed: 11,
        }
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = TaskSpec::default();
        spec.validate().unwrap();
        let names: Vec<_> = spec
            .forgotten_classes()
            .iter()
            .map(|&i| spec.classes[i].name.clone())
            .collect();
        assert_eq!(names, ["surprise", "contempt"]);
    }

    #[test]
    fn concept_regions_barely_overlap() {
        let area = |c: Concept| {
            let mut m = vec![false; CANVAS * CANVAS];
            for (x0, y0, x1, y1) in c.region_boxes(2) {
                for y in y0.max(0)..=y1.min(47) {
                    for x in x0.max(0)..=x1.min(47) {
                        m[y as usize * CANVAS + x as usize] = true;
                    }
                }
            }
            m
        };
        for a in Concept::ALL {
            for b in Concept::ALL.into_iter().filter(|&b| b > a) {
                let (ma, mb) = (area(a), area(b));
                let both = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
                let smaller = ma
                    .iter()
                    .filter(|x| **x)
                    .count()
                    .min(mb.iter().filter(|x| **x).count());
                assert!(
                    (both as f64) < 0.25 * smaller as f64,
                    "{a} and {b} overlap {both}/{smaller}"
                );
            }
        }
    }

    #[test]
    fn glyphs_are_mirror_symmetric() {
        let mut canvas = vec![0.0f32; CANVAS * CANVAS];
        for c in Concept::ALL {
            for s in c.strokes() {
                s.draw(&mut canvas, 1.0);
            }
        }
        for row in canvas.chunks(CANVAS) {
            for x in 0..CANVAS {
                assert!((row[x] - row[CANVAS - 1 - x]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = TaskSpec::default();
        s.classes[0].concepts.clear();
        assert!(s.validate().is_err());
        let mut s = TaskSpec::default();
        s.classes[0].concepts.push(Concept::C6);
        assert!(s.validate().is_err(), "class satisfies the rule natively");
        let mut s = TaskSpec::default();
        s.forgettable = vec![Concept::C6];
        assert!(s.validate().is_err());
        let mut s = TaskSpec::default();
        s.nuisance = vec![Concept::C4];
        assert!(s.validate().is_err(), "nuisance concept marks a class");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&TaskSpec::default(), &small()).unwrap();
        let b = generate_dataset(&TaskSpec::default(), &small()).unwrap();
        assert_eq!(a, b);
        let mut cfg = small();
        cfg.noise_sigma = 0.0;
        let a = generate_dataset(&TaskSpec::default(), &cfg).unwrap();
        let b = generate_dataset(&TaskSpec::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_sizes_and_balance() {
        let ds = generate_dataset(&TaskSpec::default(), &small()).unwrap();
        assert_eq!(split_sizes(6), (4, 1, 1));
        assert_eq!(
            (
                ds.source.train.len(),
                ds.source.val.len(),
                ds.source.test.len()
            ),
            (40, 8, 16)
        );
        for split in [&ds.target.train, &ds.target.val, &ds.target.test] {
            let pos = split.iter().filter(|im| im.target_label == 1).count();
            assert_eq!(2 * pos, split.len());
        }
        for c in Concept::ALL {
            assert_eq!(ds.probe.iter().filter(|im| im.has(c)).count(), 8);
        }
    }

    #[test]
    fn flags_follow_the_class_spec() {
        let ds = generate_dataset(&TaskSpec::default(), &small()).unwrap();
        let mut with_nuisance = 0;
        for im in ds.source.iter() {
            let class = &ds.spec.classes[im.source_class.unwrap()];
            let mut want = flags_of(&class.concepts);
            for n in &ds.spec.nuisance {
                want[n.index()] = im.has(*n);
                with_nuisance += usize::from(im.has(*n));
            }
            assert_eq!(im.concepts, want);
            assert_eq!(
                im.target_label,
                u8::from(rule_holds(&ds.spec.target_rule, &im.concepts))
            );
        }
        assert!(with_nuisance > 0);
        let labels = binarize_target_labels(&ds.target.train, &ds.spec);
        let stored: Vec<u8> = ds.target.train.iter().map(|im| im.target_label).collect();
        assert_eq!(labels, stored);
    }

    #[test]
    fn binarize_edge_cases() {
        let ds = generate_dataset(&TaskSpec::default(), &small()).unwrap();
        let mut spec = ds.spec.clone();
        spec.target_rule.clear();
        assert!(binarize_target_labels(&ds.source.train, &spec)
            .iter()
            .all(|&l| l == 1));
        spec.target_rule = vec![Concept::C2];
        let labels = binarize_target_labels(&ds.source.train, &spec);
        for (im, l) in ds.source.train.iter().zip(labels) {
            assert_eq!(l == 1, im.has(Concept::C2));
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let ds = generate_dataset(&TaskSpec::default(), &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn concept_names_parse() {
        assert_eq!("c3".parse::<Concept>().unwrap(), Concept::C3);
        assert_eq!("cheek-dimple".parse::<Concept>().unwrap(), Concept::C3);
        assert!("C7".parse::<Concept>().is_err());
    }
}

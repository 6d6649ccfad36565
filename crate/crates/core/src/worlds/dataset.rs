use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::condition::{Attribute, ConditionCode, Selector, Task};
use super::edit::{make_triplet_with, EditTriplet};
use super::reasoning::{ReasoningBase, ReasoningFormat};
use super::scene::{Instance, SceneSpec, ShapeKind};
use super::{BACKGROUND_COLORS, SHAPE_COLORS};
use crate::{CofError, Result};

const MAX_ATTEMPTS: usize = 10_000;
const SIZES: [u32; 3] = [6, 8, 10];
/// Geometry of an instance introduced by `add`: static, fixed size, in one
/// of two slots on the left or right edge.
const ADD_SIZE: u32 = 8;

/// Parameters of the procedural benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Instances stay fully inside the canvas for this many frames, so the
    /// same scene can be re-rendered longer for extrapolation.
    pub frames_max: usize,
    pub reasoning_frames: usize,
    pub tasks: Vec<Task>,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Largest per-axis speed in quarter pixels per frame.
    pub max_speed_q: i32,
    /// Probability of a leftmost/rightmost selector for tasks that allow others.
    pub positional_fraction: f64,
    pub format: ReasoningFormat,
    pub base: ReasoningBase,
    pub triptych: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            frames: 9,
            frames_max: 9,
            reasoning_frames: 4,
            tasks: Task::ALL.to_vec(),
            min_instances: 2,
            max_instances: 3,
            max_speed_q: 2,
            positional_fraction: 0.5,
            format: ReasoningFormat::ProgressiveGray,
            base: ReasoningBase::Source,
            triptych: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CofError::Config(m.to_string()));
        if self.tasks.is_empty() {
            return bad("no tasks requested");
        }
        if self.min_instances < 1 || self.min_instances > self.max_instances {
            return bad("instance count range is empty");
        }
        if self.frames == 0 || self.frames_max < self.frames {
            return bad("frames_max must be at least frames");
        }
        if self.reasoning_frames == 0 || self.reasoning_frames > self.frames {
            return bad("reasoning frames must be in 1..=frames");
        }
        if self.height < 2 * ADD_SIZE as usize || self.width < 4 * ADD_SIZE as usize {
            return bad("canvas too small for the benchmark shapes");
        }
        if !(0.0..=1.0).contains(&self.positional_fraction) {
            return bad("positional_fraction outside [0, 1]");
        }
        Ok(())
    }
}

/// Deterministic, index-addressable triplet generator.
#[derive(Clone, Debug)]
pub struct BenchmarkSampler {
    cfg: SamplerConfig,
}

impl BenchmarkSampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    /// Scene (rendered at `frames`) and condition for sample `index`.
    pub fn scene(&self, index: u64) -> Result<(SceneSpec, ConditionCode)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);
        let task = *self.cfg.tasks.choose(&mut rng).expect("validated non-empty");
        for _ in 0..MAX_ATTEMPTS {
            if let Some(found) = self.attempt(task, index, &mut rng) {
                return Ok(found);
            }
        }
        Err(CofError::Generation(format!(
            "no valid {} scene after {MAX_ATTEMPTS} attempts",
            task.name()
        )))
    }

    pub fn triplet(&self, index: u64) -> Result<EditTriplet> {
        let (spec, cond) = self.scene(index)?;
        make_triplet_with(&spec, &cond, self.cfg.reasoning_frames, &self.cfg.format, self.cfg.base)
    }

    pub fn triplets(&self, count: usize) -> Result<Vec<EditTriplet>> {
        (0..count as u64).map(|i| self.triplet(i)).collect()
    }

    fn random_instance(&self, rng: &mut ChaCha8Rng) -> Instance {
        let c = &self.cfg;
        let size = *SIZES.choose(rng).expect("non-empty");
        let s = size as i32;
        let span = c.frames_max as i32 - 1;
        let vx_q = rng.random_range(-c.max_speed_q..=c.max_speed_q);
        let vy_q = rng.random_range(-c.max_speed_q..=c.max_speed_q);
        // Start range that keeps the whole sweep inside the canvas.
        let range = |v: i32, extent: usize| {
            let lo = -(v * span).div_euclid(4).min(0);
            let hi = extent as i32 - s - (v * span).div_euclid(4).max(0);
            (lo, hi)
        };
        let (xl, xh) = range(vx_q, c.width);
        let (yl, yh) = range(vy_q, c.height);
        Instance {
            kind: *ShapeKind::ALL.choose(rng).expect("non-empty"),
            color: rng.random_range(0..SHAPE_COLORS.len()),
            size,
            x: if xh >= xl { rng.random_range(xl..=xh) } else { -1000 },
            y: if yh >= yl { rng.random_range(yl..=yh) } else { -1000 },
            vx_q,
            vy_q,
        }
    }

    fn add_instance(&self, rng: &mut ChaCha8Rng, left: bool) -> Instance {
        let s = ADD_SIZE as i32;
        Instance {
            kind: *ShapeKind::ALL.choose(rng).expect("non-empty"),
            color: rng.random_range(0..SHAPE_COLORS.len()),
            size: ADD_SIZE,
            x: if left { 1 } else { self.cfg.width as i32 - s - 1 },
            y: (self.cfg.height as i32 - s) / 2,
            vx_q: 0,
            vy_q: 0,
        }
    }

    fn attempt(&self, task: Task, index: u64, rng: &mut ChaCha8Rng) -> Option<(SceneSpec, ConditionCode)> {
        let c = &self.cfg;
        let n = rng.random_range(c.min_instances..=c.max_instances);
        let mut instances: Vec<Instance> = (0..n).map(|_| self.random_instance(rng)).collect();
        let selector;
        let chosen;
        if task == Task::Add {
            let left = rng.random_bool(0.5);
            selector = if left { Selector::Leftmost } else { Selector::Rightmost };
            instances.pop();
            let added = self.add_instance(rng, left);
            chosen = rng.random_range(0..=instances.len());
            instances.insert(chosen, added);
        } else {
            chosen = rng.random_range(0..n);
            selector = if rng.random_bool(c.positional_fraction) {
                if rng.random_bool(0.5) {
                    Selector::Leftmost
                } else {
                    Selector::Rightmost
                }
            } else {
                match rng.random_range(0..3) {
                    0 => Selector::Largest,
                    1 => Selector::Smallest,
                    _ => Selector::Color(instances[chosen].color),
                }
            };
        }
        let spec = SceneSpec {
            instances,
            background: rng.random_range(0..BACKGROUND_COLORS.len()),
            frames: c.frames_max,
            height: c.height,
            width: c.width,
            seed: index,
        };
        if !self.well_separated(&spec) {
            return None;
        }
        if selector.resolve(&spec.instances).ok()? != chosen {
            return None;
        }
        let current = spec.instances[chosen];
        let attribute = match task {
            Task::Remove => Attribute::None,
            Task::Add => Attribute::ShapeColor(current.kind, current.color),
            Task::Swap => {
                let others: Vec<ShapeKind> = ShapeKind::ALL.into_iter().filter(|&k| k != current.kind).collect();
                Attribute::Shape(*others.choose(rng)?)
            }
            Task::Recolor => {
                let others: Vec<usize> = (0..SHAPE_COLORS.len()).filter(|&k| k != current.color).collect();
                Attribute::Color(*others.choose(rng)?)
            }
        };
        let cond = ConditionCode {
            task,
            selector,
            attribute,
            triptych: c.triptych,
        };
        Some((spec.with_frames(c.frames), cond))
    }

    /// Every instance stays inside the canvas for `frames_max` frames and
    /// swept boxes keep a one-pixel gap.
    fn well_separated(&self, spec: &SceneSpec) -> bool {
        let f = spec.frames;
        if !spec
            .instances
            .iter()
            .all(|i| (0..f).all(|fr| i.inside(fr, spec.height, spec.width)))
        {
            return false;
        }
        let boxes: Vec<_> = spec.instances.iter().map(|i| i.swept_box(f)).collect();
        for a in 0..boxes.len() {
            for b in a + 1..boxes.len() {
                let (ax0, ay0, ax1, ay1) = boxes[a];
                let (bx0, by0, bx1, by1) = boxes[b];
                let apart = ax1 < bx0 || bx1 < ax0 || ay1 < by0 || by1 < ay0;
                if !apart {
                    return false;
                }
            }
        }
        true
    }
}

//! Structured instruction codes and their learned embeddings.

use cof_tensor::{Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Instance, ShapeKind};
use super::SHAPE_COLORS;
use crate::{CofError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Remove,
    Add,
    Swap,
    Recolor,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Remove, Task::Add, Task::Swap, Task::Recolor];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Remove => "remove",
            Task::Add => "add",
            Task::Swap => "swap",
            Task::Recolor => "recolor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| CofError::Invalid(format!("unknown task {s:?}")))
    }
}

/// Which instance an instruction refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Leftmost,
    Rightmost,
    Largest,
    Smallest,
    Color(usize),
}

/// Minimum separation, in doubled pixels, between the selected instance and
/// the runner-up for positional selectors.
const POSITION_MARGIN_X2: i64 = 4;

impl Selector {
    pub const COUNT: usize = 4 + SHAPE_COLORS.len();

    pub fn index(self) -> usize {
        match self {
            Selector::Leftmost => 0,
            Selector::Rightmost => 1,
            Selector::Largest => 2,
            Selector::Smallest => 3,
            Selector::Color(k) => 4 + k,
        }
    }

    pub fn is_positional(self) -> bool {
        matches!(self, Selector::Leftmost | Selector::Rightmost)
    }

    pub fn name(self) -> String {
        match self {
            Selector::Leftmost => "leftmost".into(),
            Selector::Rightmost => "rightmost".into(),
            Selector::Largest => "largest".into(),
            Selector::Smallest => "smallest".into(),
            Selector::Color(k) => format!("color:{k}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let sel = match s {
            "leftmost" => Selector::Leftmost,
            "rightmost" => Selector::Rightmost,
            "largest" => Selector::Largest,
            "smallest" => Selector::Smallest,
            other => {
                let k = other
                    .strip_prefix("color:")
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| CofError::Invalid(format!("unknown selector {s:?}")))?;
                Selector::Color(k)
            }
        };
        sel.check()?;
        Ok(sel)
    }

    fn check(self) -> Result<()> {
        match self {
            Selector::Color(k) if k >= SHAPE_COLORS.len() => Err(CofError::Invalid(format!("unknown color id {k}"))),
            _ => Ok(()),
        }
    }

    /// Index of the unique instance this selector names.
    pub fn resolve(self, instances: &[Instance]) -> Result<usize> {
        let ambiguous = || CofError::AmbiguousSelector(self.name());
        if instances.is_empty() {
            return Err(ambiguous());
        }
        let extreme = |key: &dyn Fn(&Instance) -> i64, margin: i64| -> Result<usize> {
            let mut order: Vec<usize> = (0..instances.len()).collect();
            order.sort_by_key(|&i| key(&instances[i]));
            if order.len() > 1 && key(&instances[order[1]]) - key(&instances[order[0]]) < margin {
                return Err(ambiguous());
            }
            Ok(order[0])
        };
        match self {
            Selector::Leftmost => extreme(&|i| i.center_x2(), POSITION_MARGIN_X2),
            Selector::Rightmost => extreme(&|i| -i.center_x2(), POSITION_MARGIN_X2),
            Selector::Largest => extreme(&|i| -(i.size as i64), 1),
            Selector::Smallest => extreme(&|i| i.size as i64, 1),
            Selector::Color(k) => {
                let hits: Vec<usize> = (0..instances.len()).filter(|&i| instances[i].color == k).collect();
                match hits.as_slice() {
                    [one] => Ok(*one),
                    _ => Err(ambiguous()),
                }
            }
        }
    }
}

/// New appearance requested by an edit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    None,
    Color(usize),
    Shape(ShapeKind),
    ShapeColor(ShapeKind, usize),
}

impl Attribute {
    pub const COUNT: usize = 1 + SHAPE_COLORS.len() + 3 + 3 * SHAPE_COLORS.len();

    pub fn index(self) -> usize {
        let nc = SHAPE_COLORS.len();
        match self {
            Attribute::None => 0,
            Attribute::Color(k) => 1 + k,
            Attribute::Shape(s) => 1 + nc + s.index(),
            Attribute::ShapeColor(s, k) => 1 + nc + 3 + s.index() * nc + k,
        }
    }

    fn check(self) -> Result<()> {
        match self {
            Attribute::Color(k) | Attribute::ShapeColor(_, k) if k >= SHAPE_COLORS.len() => {
                Err(CofError::Invalid(format!("unknown color id {k}")))
            }
            _ => Ok(()),
        }
    }
}

/// Structured stand-in for a text instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionCode {
    pub task: Task,
    pub selector: Selector,
    pub attribute: Attribute,
    /// Three-part layout (scene / grounding / edit) instead of one direct slot.
    pub triptych: bool,
}

impl ConditionCode {
    pub fn validate(&self) -> Result<()> {
        self.selector.check()?;
        self.attribute.check()?;
        let ok = match self.task {
            Task::Remove => self.attribute == Attribute::None,
            Task::Add => matches!(self.attribute, Attribute::ShapeColor(..)),
            Task::Swap => matches!(self.attribute, Attribute::Shape(_)),
            Task::Recolor => matches!(self.attribute, Attribute::Color(_)),
        };
        if !ok {
            return Err(CofError::Invalid(format!(
                "attribute {:?} does not fit task {}",
                self.attribute,
                self.task.name()
            )));
        }
        Ok(())
    }
}

/// Learned lookup tables, one per condition field and layout slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionTables<T> {
    pub scene: T,
    pub ground_selector: T,
    pub edit_task: T,
    pub edit_selector: T,
    pub edit_attribute: T,
    pub direct_task: T,
    pub direct_selector: T,
    pub direct_attribute: T,
}

impl<T> ConditionTables<T> {
    pub const NAMES: [&'static str; 8] = [
        "cond.scene",
        "cond.ground_selector",
        "cond.edit_task",
        "cond.edit_selector",
        "cond.edit_attribute",
        "cond.direct_task",
        "cond.direct_selector",
        "cond.direct_attribute",
    ];

    pub fn rows() -> [usize; 8] {
        [
            1,
            Selector::COUNT,
            Task::ALL.len(),
            Selector::COUNT,
            Attribute::COUNT,
            Task::ALL.len(),
            Selector::COUNT,
            Attribute::COUNT,
        ]
    }

    pub fn into_vec(self) -> Vec<T> {
        vec![
            self.scene,
            self.ground_selector,
            self.edit_task,
            self.edit_selector,
            self.edit_attribute,
            self.direct_task,
            self.direct_selector,
            self.direct_attribute,
        ]
    }

    pub fn from_vec(v: Vec<T>) -> Result<Self> {
        let mut it = v.into_iter();
        let mut next = || {
            it.next()
                .ok_or_else(|| CofError::Shape("too few condition tables".into()))
        };
        Ok(Self {
            scene: next()?,
            ground_selector: next()?,
            edit_task: next()?,
            edit_selector: next()?,
            edit_attribute: next()?,
            direct_task: next()?,
            direct_selector: next()?,
            direct_attribute: next()?,
        })
    }
}

impl ConditionTables<Tensor> {
    pub fn init<R: Rng + ?Sized>(width: usize, std: f64, rng: &mut R) -> Result<Self> {
        let tables = Self::rows()
            .into_iter()
            .map(|rows| Tensor::trunc_normal([rows, width], std, rng).map_err(Into::into))
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(tables)
    }
}

/// Embeds a condition as a `[3, width]` tensor: one row per sequence segment
/// (source, reasoning, target).
///
/// The triptych layout gives each segment its own slot (scene, grounding,
/// edit); the direct layout repeats a single instruction row.
pub fn embed_condition(tape: &mut Tape, tables: &ConditionTables<Var>, code: &ConditionCode) -> Result<Var> {
    code.validate()?;
    let task = code.task.index();
    let sel = code.selector.index();
    let attr = code.attribute.index();
    if code.triptych {
        let scene = tape.gather_rows(tables.scene, &[0])?;
        let ground = tape.gather_rows(tables.ground_selector, &[sel])?;
        let t = tape.gather_rows(tables.edit_task, &[task])?;
        let s = tape.gather_rows(tables.edit_selector, &[sel])?;
        let a = tape.gather_rows(tables.edit_attribute, &[attr])?;
        let edit = tape.add(t, s)?;
        let edit = tape.add(edit, a)?;
        Ok(tape.concat(&[scene, ground, edit], 0)?)
    } else {
        let t = tape.gather_rows(tables.direct_task, &[task])?;
        let s = tape.gather_rows(tables.direct_selector, &[sel])?;
        let a = tape.gather_rows(tables.direct_attribute, &[attr])?;
        let row = tape.add(t, s)?;
        let row = tape.add(row, a)?;
        Ok(tape.gather_rows(row, &[0, 0, 0])?)
    }
}

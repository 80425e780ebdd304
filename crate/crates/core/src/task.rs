//! Observation masks for controllable generation: prediction, in-betweening,
//! completion, trajectory guidance and dense joint control.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::skeleton::SkeletonSpec;
use crate::tensor::Matrix;

/// Default observed prefix for prediction, in frames.
pub const DEFAULT_PREDICT_FRAMES: usize = 30;
/// Default observed prefix and suffix for in-betweening, in frames.
pub const DEFAULT_INBETWEEN_FRAMES: usize = 10;

/// A `frames x joints` boolean grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellMask {
    pub frames: usize,
    pub joints: usize,
    pub cells: Vec<bool>,
}

impl CellMask {
    pub fn filled(frames: usize, joints: usize, v: bool) -> Self {
        Self { frames, joints, cells: vec![v; frames * joints] }
    }

    /// Every frame repeats the per-joint validity bits.
    pub fn from_joint_validity(frames: usize, valid: &[bool]) -> Self {
        let mut cells = Vec::with_capacity(frames * valid.len());
        for _ in 0..frames {
            cells.extend_from_slice(valid);
        }
        Self { frames, joints: valid.len(), cells }
    }

    pub fn get(&self, frame: usize, joint: usize) -> bool {
        self.cells[frame * self.joints + joint]
    }

    pub fn set(&mut self, frame: usize, joint: usize, v: bool) {
        self.cells[frame * self.joints + joint] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Expands joints to feature columns: a cell covers every column its joint owns.
    pub fn to_columns(&self, skeleton: &SkeletonSpec) -> Matrix {
        let owner = skeleton.layout().column_joints(skeleton);
        let mut m = Matrix::zeros(self.frames, owner.len());
        for f in 0..self.frames {
            let row = m.row_mut(f);
            for (c, &j) in owner.iter().enumerate() {
                if self.get(f, j) {
                    row[c] = 1.0;
                }
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TaskKind {
    Predict,
    Inbetween,
    Complete,
    Trajectory,
    Dense,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] =
        [TaskKind::Predict, TaskKind::Inbetween, TaskKind::Complete, TaskKind::Trajectory, TaskKind::Dense];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Predict => "predict",
            TaskKind::Inbetween => "inbetween",
            TaskKind::Complete => "complete",
            TaskKind::Trajectory => "trajectory",
            TaskKind::Dense => "dense",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown task kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskMaskSpec {
    pub kind: TaskKind,
    /// Observed leading frames (predict, inbetween).
    pub prefix: usize,
    /// Observed trailing frames (inbetween).
    pub suffix: usize,
    /// Observed `(frame, joint)` cells (complete).
    pub cells: Vec<(usize, usize)>,
    /// Controlled joints (trajectory); empty means the root.
    pub joints: Vec<usize>,
}

impl TaskMaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        let (prefix, suffix) = match kind {
            TaskKind::Predict => (DEFAULT_PREDICT_FRAMES, 0),
            TaskKind::Inbetween => (DEFAULT_INBETWEEN_FRAMES, DEFAULT_INBETWEEN_FRAMES),
            _ => (0, 0),
        };
        Self { kind, prefix, suffix, cells: Vec::new(), joints: Vec::new() }
    }

    pub fn predict(prefix: usize) -> Self {
        Self { prefix, ..Self::new(TaskKind::Predict) }
    }

    pub fn inbetween(prefix: usize, suffix: usize) -> Self {
        Self { prefix, suffix, ..Self::new(TaskKind::Inbetween) }
    }

    pub fn complete(cells: Vec<(usize, usize)>) -> Self {
        Self { cells, ..Self::new(TaskKind::Complete) }
    }

    pub fn trajectory(joints: Vec<usize>) -> Self {
        Self { joints, ..Self::new(TaskKind::Trajectory) }
    }

    pub fn dense() -> Self {
        Self::new(TaskKind::Dense)
    }
}

/// A task mask paired with its kind, which decides how joints map to columns.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskMask {
    pub kind: TaskKind,
    pub mask: CellMask,
}

pub fn make_task_mask(spec: &TaskMaskSpec, skeleton: &SkeletonSpec, frames: usize) -> Result<TaskMask> {
    let n = skeleton.joint_count();
    if frames == 0 {
        bail!(InvalidArgument, "task mask needs at least one frame");
    }
    let mut mask = CellMask::filled(frames, n, false);
    match spec.kind {
        TaskKind::Predict => {
            if spec.prefix == 0 || spec.prefix > frames {
                bail!(InvalidArgument, "prediction prefix {} must be in 1..={frames}", spec.prefix);
            }
            mask.cells[..spec.prefix * n].fill(true);
        }
        TaskKind::Inbetween => {
            if spec.prefix + spec.suffix == 0 || spec.prefix + spec.suffix > frames {
                bail!(
                    InvalidArgument,
                    "in-between context {}+{} must be non-empty and fit {frames} frames",
                    spec.prefix,
                    spec.suffix
                );
            }
            mask.cells[..spec.prefix * n].fill(true);
            mask.cells[(frames - spec.suffix) * n..].fill(true);
        }
        TaskKind::Complete => {
            if spec.cells.is_empty() {
                bail!(InvalidArgument, "completion needs at least one observed cell");
            }
            for &(f, j) in &spec.cells {
                if f >= frames || j >= n {
                    bail!(InvalidArgument, "observed cell ({f}, {j}) outside {frames} x {n}");
                }
                mask.set(f, j, true);
            }
        }
        TaskKind::Trajectory => {
            let joints: &[usize] = if spec.joints.is_empty() { &[0] } else { &spec.joints };
            for &j in joints {
                if j >= n {
                    bail!(InvalidArgument, "controlled joint {j} outside skeleton of {n}");
                }
                for f in 0..frames {
                    mask.set(f, j, true);
                }
            }
        }
        TaskKind::Dense => mask.cells.fill(true),
    }
    Ok(TaskMask { kind: spec.kind, mask })
}

impl TaskMask {
    pub fn frames(&self) -> usize {
        self.mask.frames
    }

    /// Feature cells observed under this mask, gated by joint-level `keep`.
    ///
    /// Temporal kinds observe every column of an observed joint. Trajectory and
    /// dense control observe positions only: the four root columns for the
    /// root and the root-relative position of any other joint.
    pub fn observed_columns(&self, skeleton: &SkeletonSpec, keep: &[bool]) -> Matrix {
        let layout = skeleton.layout();
        let n = skeleton.joint_count();
        match self.kind {
            TaskKind::Predict | TaskKind::Inbetween | TaskKind::Complete => {
                let mut gated = self.mask.clone();
                for f in 0..gated.frames {
                    for (j, &k) in keep.iter().enumerate().take(n) {
                        if !k {
                            gated.set(f, j, false);
                        }
                    }
                }
                gated.to_columns(skeleton)
            }
            TaskKind::Trajectory | TaskKind::Dense => {
                let mut m = Matrix::zeros(self.frames(), layout.dim());
                for f in 0..self.frames() {
                    let row = m.row_mut(f);
                    for j in 0..n {
                        if !self.mask.get(f, j) || !keep[j] {
                            continue;
                        }
                        let cols = if j == 0 { layout.root() } else { layout.position_of(j) };
                        row[cols].fill(1.0);
                    }
                }
                m
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_shapes_and_counts() {
        let s = SkeletonSpec::desk();
        let n = s.joint_count();
        let dense = make_task_mask(&TaskMaskSpec::dense(), &s, 150).unwrap();
        assert_eq!(dense.mask.count(), 150 * n);
        let p = make_task_mask(&TaskMaskSpec::predict(30), &s, 150).unwrap();
        assert!((0..30).all(|f| (0..n).all(|j| p.mask.get(f, j))));
        assert!((30..150).all(|f| (0..n).all(|j| !p.mask.get(f, j))));
        let ib = make_task_mask(&TaskMaskSpec::inbetween(10, 10), &s, 50).unwrap();
        assert_eq!(ib.mask.count(), 20 * n);
    }

    #[test]
    fn degenerate_specs_rejected() {
        let s = SkeletonSpec::desk();
        assert!(make_task_mask(&TaskMaskSpec::predict(0), &s, 10).is_err());
        assert!(make_task_mask(&TaskMaskSpec::inbetween(0, 0), &s, 10).is_err());
        assert!(make_task_mask(&TaskMaskSpec::complete(vec![]), &s, 10).is_err());
        assert!(make_task_mask(&TaskMaskSpec::complete(vec![(10, 0)]), &s, 10).is_err());
    }

    #[test]
    fn trajectory_observes_root_columns() {
        let s = SkeletonSpec::desk();
        let t = make_task_mask(&TaskMaskSpec::trajectory(vec![]), &s, 4).unwrap();
        let cols = t.observed_columns(&s, &vec![true; s.joint_count()]);
        assert_eq!(cols.sum(), 4.0 * 4.0);
        assert_eq!(&cols.row(0)[..4], &[1.0; 4]);
    }

    #[test]
    fn kind_names_parse() {
        for k in TaskKind::ALL {
            assert_eq!(k.as_str().parse::<TaskKind>().unwrap(), k);
        }
    }
}

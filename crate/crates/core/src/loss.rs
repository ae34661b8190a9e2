//! Per-task training losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Segmentation,
    Depth,
    Normals,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Segmentation => "segmentation",
            TaskKind::Depth => "depth",
            TaskKind::Normals => "normals",
        }
    }
}

/// Labels for one task over a batch.
#[derive(Clone, Debug)]
pub enum TaskTarget<T> {
    /// Class index per pixel, `N*H*W` entries in NCHW pixel order.
    Segmentation(Vec<usize>),
    /// `[N,1,H,W]`
    Depth(Tensor<T>),
    /// `[N,3,H,W]`, unit norm per pixel.
    Normals(Tensor<T>),
}

impl<T> TaskTarget<T> {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskTarget::Segmentation(_) => TaskKind::Segmentation,
            TaskTarget::Depth(_) => TaskKind::Depth,
            TaskTarget::Normals(_) => TaskKind::Normals,
        }
    }
}

/// Records the loss of `pred` against `target` for the given task on the tape.
///
/// Segmentation uses mean per-pixel cross-entropy, depth the mean absolute
/// error, normals the mean of `1 - cos` between normalized prediction and
/// ground truth.
pub fn loss_for_task<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &TaskTarget<T>,
    kind: TaskKind,
) -> Result<Var> {
    if target.kind() != kind {
        return Err(Error::invalid(
            "loss_for_task",
            format!("{} target given for {} task", target.kind().name(), kind.name()),
        ));
    }
    let shape = tape.value(pred).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("loss_for_task", "prediction rank", 4, shape.len()));
    }
    match target {
        TaskTarget::Segmentation(labels) => tape.cross_entropy(pred, labels),
        TaskTarget::Depth(gt) => {
            if shape[1] != 1 {
                return Err(Error::shape("loss_for_task", "depth channels", 1, shape[1]));
            }
            tape.l1_loss(pred, gt)
        }
        TaskTarget::Normals(gt) => tape.cosine_normal_loss(pred, gt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_correct_class_gives_vanishing_loss() {
        let mut tape = Tape::<f64>::new();
        // two classes, 1 pixel, correct class 1 with a huge margin
        let logits = tape.leaf(Tensor::from_f64(&[1, 2, 1, 1], &[-50.0, 50.0]).unwrap());
        let l = loss_for_task(&mut tape, logits, &TaskTarget::Segmentation(vec![1]), TaskKind::Segmentation).unwrap();
        assert!(tape.value(l).item() < 1e-30);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 4, 2, 2]));
        let l = loss_for_task(&mut tape, logits, &TaskTarget::Segmentation(vec![0, 1, 2, 3]), TaskKind::Segmentation).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_class_index_rejected() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 2, 1, 1]));
        let err = loss_for_task(&mut tape, logits, &TaskTarget::Segmentation(vec![2]), TaskKind::Segmentation);
        assert!(matches!(err, Err(Error::InvalidLabel { index: 2, classes: 2 })));
    }

    #[test]
    fn depth_exact_prediction_is_zero() {
        let gt = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[0.2, 0.4, 0.6, 1.0]).unwrap();
        let mut tape = Tape::new();
        let pred = tape.leaf(gt.clone());
        let l = loss_for_task(&mut tape, pred, &TaskTarget::Depth(gt), TaskKind::Depth).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn normals_aligned_and_antipodal() {
        // pixel 0: pred == gt; pixel 1: pred == -gt  -> (0 + 2) / 2
        let gt = Tensor::<f64>::from_f64(&[1, 3, 1, 2], &[0., 1., 0., 0., 1., 0.]).unwrap();
        let pred = Tensor::<f64>::from_f64(&[1, 3, 1, 2], &[0., -1., 0., 0., 1., 0.]).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(pred);
        let l = loss_for_task(&mut tape, p, &TaskTarget::Normals(gt), TaskKind::Normals).unwrap();
        assert!((tape.value(l).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_prediction_normal_is_finite() {
        let gt = Tensor::<f64>::from_f64(&[1, 3, 1, 1], &[0., 0., 1.]).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::zeros(&[1, 3, 1, 1]));
        let l = loss_for_task(&mut tape, p, &TaskTarget::Normals(gt), TaskKind::Normals).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        let g = tape.backward(l).unwrap();
        assert!(g.get(p).unwrap().is_finite());
    }

    #[test]
    fn kind_mismatch_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::zeros(&[1, 1, 1, 1]));
        let t = TaskTarget::Depth(Tensor::zeros(&[1, 1, 1, 1]));
        assert!(loss_for_task(&mut tape, p, &t, TaskKind::Normals).is_err());
    }
}

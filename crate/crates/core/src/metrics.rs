//! Evaluation metrics for segmentation, depth and surface normals.
//!
//! Threshold comparisons are inclusive (`<=`; angles allow [`ANGLE_SLACK_DEG`]). mIoU averages only over classes
//! present in the prediction or the ground truth. The median angle is the
//! lower-middle element for even pixel counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];
pub const ANGLE_THRESHOLDS: [f64; 3] = [11.25, 22.5, 30.0];
/// Lower clamp on predicted depth before forming ratios.
pub const DEPTH_EPS: f64 = 1e-6;
/// Lower clamp on the predicted normal's norm.
pub const NORMAL_EPS: f64 = 1e-8;
/// Slack on the angle thresholds: `acos` cannot return a threshold exactly
/// (11.25° comes back as 11.250000000000002°), so "within" means `<= t + slack`.
pub const ANGLE_SLACK_DEG: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_err: f64,
    pub rel_err: f64,
    pub delta_within: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    pub angle_mean_deg: f64,
    pub angle_median_deg: f64,
    pub within: [f64; 3],
}

/// All task metrics for one evaluation. Metrics of tasks the model lacks are
/// NaN (serialized as JSON `null`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MetricsJson", from = "MetricsJson")]
pub struct MetricsReport {
    pub pixel_accuracy: f64,
    pub miou: f64,
    pub depth_abs_err: f64,
    pub depth_rel_err: f64,
    pub delta_within: [f64; 3],
    pub angle_mean_deg: f64,
    pub angle_median_deg: f64,
    pub normals_within: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsJson {
    pixel_accuracy: Option<f64>,
    miou: Option<f64>,
    depth_abs_err: Option<f64>,
    depth_rel_err: Option<f64>,
    delta_within: [Option<f64>; 3],
    angle_mean_deg: Option<f64>,
    angle_median_deg: Option<f64>,
    normals_within: [Option<f64>; 3],
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

impl From<MetricsReport> for MetricsJson {
    fn from(r: MetricsReport) -> Self {
        MetricsJson {
            pixel_accuracy: opt(r.pixel_accuracy),
            miou: opt(r.miou),
            depth_abs_err: opt(r.depth_abs_err),
            depth_rel_err: opt(r.depth_rel_err),
            delta_within: r.delta_within.map(opt),
            angle_mean_deg: opt(r.angle_mean_deg),
            angle_median_deg: opt(r.angle_median_deg),
            normals_within: r.normals_within.map(opt),
        }
    }
}

impl From<MetricsJson> for MetricsReport {
    fn from(j: MetricsJson) -> Self {
        let v = |o: Option<f64>| o.unwrap_or(f64::NAN);
        MetricsReport {
            pixel_accuracy: v(j.pixel_accuracy),
            miou: v(j.miou),
            depth_abs_err: v(j.depth_abs_err),
            depth_rel_err: v(j.depth_rel_err),
            delta_within: j.delta_within.map(v),
            angle_mean_deg: v(j.angle_mean_deg),
            angle_median_deg: v(j.angle_median_deg),
            normals_within: j.normals_within.map(v),
        }
    }
}

/// One scalar column of a [`MetricsReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PixelAccuracy,
    Miou,
    DepthAbsErr,
    DepthRelErr,
    Delta1,
    Delta2,
    Delta3,
    AngleMean,
    AngleMedian,
    Within11,
    Within22,
    Within30,
}

impl Metric {
    pub const ALL: [Metric; 12] = [
        Metric::PixelAccuracy,
        Metric::Miou,
        Metric::DepthAbsErr,
        Metric::DepthRelErr,
        Metric::Delta1,
        Metric::Delta2,
        Metric::Delta3,
        Metric::AngleMean,
        Metric::AngleMedian,
        Metric::Within11,
        Metric::Within22,
        Metric::Within30,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PixelAccuracy => "pixel_accuracy",
            Metric::Miou => "miou",
            Metric::DepthAbsErr => "depth_abs_err",
            Metric::DepthRelErr => "depth_rel_err",
            Metric::Delta1 => "delta_1.25",
            Metric::Delta2 => "delta_1.25^2",
            Metric::Delta3 => "delta_1.25^3",
            Metric::AngleMean => "angle_mean",
            Metric::AngleMedian => "angle_median",
            Metric::Within11 => "within_11.25",
            Metric::Within22 => "within_22.5",
            Metric::Within30 => "within_30",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(
            self,
            Metric::DepthAbsErr | Metric::DepthRelErr | Metric::AngleMean | Metric::AngleMedian
        )
    }

    /// Whether `a` is strictly better than `b` under this metric's direction.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::PixelAccuracy => self.pixel_accuracy,
            Metric::Miou => self.miou,
            Metric::DepthAbsErr => self.depth_abs_err,
            Metric::DepthRelErr => self.depth_rel_err,
            Metric::Delta1 => self.delta_within[0],
            Metric::Delta2 => self.delta_within[1],
            Metric::Delta3 => self.delta_within[2],
            Metric::AngleMean => self.angle_mean_deg,
            Metric::AngleMedian => self.angle_median_deg,
            Metric::Within11 => self.normals_within[0],
            Metric::Within22 => self.normals_within[1],
            Metric::Within30 => self.normals_within[2],
        }
    }

    pub fn values(&self) -> [f64; 12] {
        Metric::ALL.map(|m| self.get(m))
    }

    pub fn from_values(v: &[f64]) -> Option<Self> {
        (v.len() == 12).then(|| MetricsReport {
            pixel_accuracy: v[0],
            miou: v[1],
            depth_abs_err: v[2],
            depth_rel_err: v[3],
            delta_within: [v[4], v[5], v[6]],
            angle_mean_deg: v[7],
            angle_median_deg: v[8],
            normals_within: [v[9], v[10], v[11]],
        })
    }

    pub fn csv_header() -> String {
        Metric::ALL.map(Metric::name).join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().map(fmt_value).join(",")
    }

    pub fn nan() -> Self {
        MetricsReport {
            pixel_accuracy: f64::NAN,
            miou: f64::NAN,
            depth_abs_err: f64::NAN,
            depth_rel_err: f64::NAN,
            delta_within: [f64::NAN; 3],
            angle_mean_deg: f64::NAN,
            angle_median_deg: f64::NAN,
            normals_within: [f64::NAN; 3],
        }
    }
}

/// Fixed-precision rendering used by every CSV writer.
pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, "pixel count", b, a));
    }
    if a == 0 {
        return Err(Error::Empty(op));
    }
    Ok(())
}

/// `(pixel_accuracy, miou)`.
pub fn seg_metrics(pred: &[usize], gt: &[usize], classes: usize) -> Result<(f64, f64)> {
    let mut acc = SegAccumulator::new(classes);
    acc.add(pred, gt)?;
    Ok(acc.finish())
}

pub fn depth_metrics(pred: &[f64], gt: &[f64]) -> Result<DepthMetrics> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt)?;
    Ok(acc.finish())
}

/// Angles between (ε-normalized) predictions and unit ground-truth normals.
pub fn normal_metrics(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<NormalMetrics> {
    let mut acc = NormalAccumulator::default();
    acc.add(pred, gt)?;
    Ok(acc.finish())
}

#[derive(Clone, Debug)]
pub struct SegAccumulator {
    classes: usize,
    correct: u64,
    total: u64,
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl SegAccumulator {
    pub fn new(classes: usize) -> Self {
        SegAccumulator {
            classes,
            correct: 0,
            total: 0,
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        check_len("seg_metrics", pred.len(), gt.len())?;
        for (&p, &g) in pred.iter().zip(gt) {
            if p >= self.classes || g >= self.classes {
                return Err(Error::InvalidLabel {
                    index: p.max(g),
                    classes: self.classes,
                });
            }
            self.total += 1;
            if p == g {
                self.correct += 1;
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> (f64, f64) {
        let acc = self.correct as f64 / self.total as f64;
        let ious: Vec<f64> = (0..self.classes)
            .filter_map(|c| {
                let denom = self.tp[c] + self.fp[c] + self.fn_[c];
                (denom > 0).then(|| self.tp[c] as f64 / denom as f64)
            })
            .collect();
        (acc, ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

#[derive(Clone, Debug, Default)]
pub struct DepthAccumulator {
    n: u64,
    abs: f64,
    rel: f64,
    within: [u64; 3],
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: &[f64], gt: &[f64]) -> Result<()> {
        check_len("depth_metrics", pred.len(), gt.len())?;
        for (&p, &g) in pred.iter().zip(gt) {
            if g <= 0.0 {
                return Err(Error::invalid("depth_metrics", "ground-truth depth must be > 0"));
            }
            let err = (p - g).abs();
            self.abs += err;
            self.rel += err / g;
            let pc = p.max(DEPTH_EPS);
            let delta = (pc / g).max(g / pc);
            for (w, &t) in self.within.iter_mut().zip(&DELTA_THRESHOLDS) {
                if delta <= t {
                    *w += 1;
                }
            }
            self.n += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> DepthMetrics {
        let n = self.n as f64;
        DepthMetrics {
            abs_err: self.abs / n,
            rel_err: self.rel / n,
            delta_within: self.within.map(|w| w as f64 / n),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct NormalAccumulator {
    angles: Vec<f64>,
}

/// Angle in degrees between an ε-normalized prediction and a unit ground truth.
pub fn angle_deg(pred: [f64; 3], gt: [f64; 3]) -> f64 {
    let norm = pred.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORMAL_EPS);
    let cos = pred.iter().zip(gt).map(|(p, g)| p * g).sum::<f64>() / norm;
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

impl NormalAccumulator {
    pub fn add(&mut self, pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<()> {
        check_len("normal_metrics", pred.len(), gt.len())?;
        self.angles.extend(pred.iter().zip(gt).map(|(&p, &g)| angle_deg(p, g)));
        Ok(())
    }

    pub fn finish(&self) -> NormalMetrics {
        let n = self.angles.len() as f64;
        let mut sorted = self.angles.clone();
        sorted.sort_by(f64::total_cmp);
        let within = ANGLE_THRESHOLDS.map(|t| self.angles.iter().filter(|&&a| a <= t + ANGLE_SLACK_DEG).count() as f64 / n);
        NormalMetrics {
            angle_mean_deg: self.angles.iter().sum::<f64>() / n,
            angle_median_deg: sorted[(sorted.len() - 1) / 2],
            within,
        }
    }
}

/// Streams per-batch predictions into a full [`MetricsReport`].
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    pub seg: Option<SegAccumulator>,
    pub depth: Option<DepthAccumulator>,
    pub normals: Option<NormalAccumulator>,
}

impl MetricsAccumulator {
    pub fn new(seg_classes: Option<usize>, depth: bool, normals: bool) -> Self {
        MetricsAccumulator {
            seg: seg_classes.map(SegAccumulator::new),
            depth: depth.then(DepthAccumulator::default),
            normals: normals.then(NormalAccumulator::default),
        }
    }

    pub fn finish(&self) -> MetricsReport {
        let mut r = MetricsReport::nan();
        if let Some(s) = &self.seg {
            (r.pixel_accuracy, r.miou) = s.finish();
        }
        if let Some(d) = &self.depth {
            let m = d.finish();
            r.depth_abs_err = m.abs_err;
            r.depth_rel_err = m.rel_err;
            r.delta_within = m.delta_within;
        }
        if let Some(n) = &self.normals {
            let m = n.finish();
            r.angle_mean_deg = m.angle_mean_deg;
            r.angle_median_deg = m.angle_median_deg;
            r.normals_within = m.within;
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seg_perfect_and_disjoint() {
        let gt = [0, 1, 2, 1];
        assert_eq!(seg_metrics(&gt, &gt, 3).unwrap(), (1.0, 1.0));
        let (acc, miou) = seg_metrics(&[1, 0, 0, 0], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!((acc, miou), (0.0, 0.0));
    }

    #[test]
    fn seg_hand_counted_confusion() {
        // gt=[[0,0],[1,1]], pred=[[0,1],[1,1]]
        let (acc, miou) = seg_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(acc, 0.75);
        assert!((miou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((miou - 0.5833).abs() < 1e-4);
    }

    #[test]
    fn seg_absent_class_excluded() {
        // class 2 appears nowhere, so the mean is over classes 0 and 1 only
        let (_, miou) = seg_metrics(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(miou, 1.0);
    }

    #[test]
    fn seg_errors() {
        assert!(seg_metrics(&[0], &[0, 1], 2).is_err());
        assert!(seg_metrics(&[2], &[0], 2).is_err());
    }

    #[test]
    fn depth_exact_and_boundary() {
        let gt = [0.3, 0.6, 1.0];
        let m = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((m.abs_err, m.rel_err, m.delta_within), (0.0, 0.0, [1.0; 3]));

        let m = depth_metrics(&[1.25], &[1.0]).unwrap();
        assert_eq!(m.delta_within, [1.0; 3]);
        assert!((m.abs_err - 0.25).abs() < 1e-15 && (m.rel_err - 0.25).abs() < 1e-15);
    }

    #[test]
    fn depth_nonpositive_prediction_clamped() {
        let m = depth_metrics(&[-1.0], &[0.5]).unwrap();
        assert_eq!(m.delta_within, [0.0; 3]);
        assert!(m.abs_err == 1.5);
    }

    #[test]
    fn normals_identity_and_antipodal() {
        let gt = [[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]];
        let m = normal_metrics(&gt, &gt).unwrap();
        assert!(m.angle_mean_deg < 1e-6 && m.angle_median_deg < 1e-6);
        assert_eq!(m.within, [1.0; 3]);
        let neg: Vec<[f64; 3]> = gt.iter().map(|v| v.map(|x| -x)).collect();
        let m = normal_metrics(&neg, &gt).unwrap();
        assert!((m.angle_mean_deg - 180.0).abs() < 1e-9);
        assert!((m.angle_median_deg - 180.0).abs() < 1e-9);
        assert_eq!(m.within, [0.0; 3]);
    }

    #[test]
    fn normals_threshold_rotation() {
        // rotate +z about x by exactly 11.25° and 30°
        let rot = |deg: f64| {
            let r = deg.to_radians();
            [0.0, r.sin(), r.cos()]
        };
        let gt = [[0.0, 0.0, 1.0]; 2];
        let m = normal_metrics(&[rot(11.25), rot(30.0)], &gt).unwrap();
        assert_eq!(m.within, [0.5, 0.5, 1.0]);
        // lower-middle median for even counts
        assert!((m.angle_median_deg - 11.25).abs() < 1e-9);
    }

    #[test]
    fn metric_names_roundtrip() {
        for m in Metric::ALL {
            assert_eq!(Metric::from_name(m.name()), Some(m));
        }
        assert_eq!(MetricsReport::csv_header().split(',').count(), 12);
    }
}

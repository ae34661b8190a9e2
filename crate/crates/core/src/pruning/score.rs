use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FilterCoord, MtlModel};
use crate::tensor::Scalar;
use crate::train::BatchGrads;

/// Which task pairs enter the CosPrune sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Each unordered pair `i < j` once.
    #[default]
    Unordered,
    /// Every ordered pair including `i == j`: `2·unordered + T` for nonzero gradients.
    Full,
}

/// Filter-importance criterion. Low accumulated scores are pruned first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "CriterionRepr")]
pub enum Criterion {
    Cosprune {
        #[serde(default)]
        pairs: PairMode,
    },
    TaylorSquared,
    TaylorRaw,
    Random {
        seed: u64,
    },
}

// serde ignores unknown keys on unit variants of internally tagged enums, so
// parsing goes through a flat struct that rejects them
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CriterionRepr {
    kind: String,
    pairs: Option<PairMode>,
    seed: Option<u64>,
}

impl TryFrom<CriterionRepr> for Criterion {
    type Error = String;

    fn try_from(r: CriterionRepr) -> std::result::Result<Self, String> {
        let c = match (r.kind.as_str(), r.seed) {
            ("cosprune", None) => Criterion::Cosprune {
                pairs: r.pairs.unwrap_or_default(),
            },
            ("random", Some(seed)) if r.pairs.is_none() => Criterion::Random { seed },
            ("random", None) => return Err("criterion `random` needs `seed`".into()),
            ("taylor_squared", None) if r.pairs.is_none() => Criterion::TaylorSquared,
            ("taylor_raw", None) if r.pairs.is_none() => Criterion::TaylorRaw,
            ("cosprune" | "random" | "taylor_squared" | "taylor_raw", _) => {
                return Err(format!("unexpected field for criterion `{}`", r.kind))
            }
            (other, _) => return Err(format!("unknown criterion `{other}`")),
        };
        Ok(c)
    }
}

impl Criterion {
    pub fn cosprune() -> Self {
        Criterion::Cosprune {
            pairs: PairMode::Unordered,
        }
    }

    /// Whether scoring needs one gradient per task (otherwise the total suffices).
    pub fn needs_task_gradients(&self) -> bool {
        matches!(self, Criterion::Cosprune { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Cosprune { .. } => "cosprune",
            Criterion::TaylorSquared => "taylor_squared",
            Criterion::TaylorRaw => "taylor_raw",
            Criterion::Random { .. } => "random",
        }
    }

    pub fn is_taylor(&self) -> bool {
        matches!(self, Criterion::TaylorSquared | Criterion::TaylorRaw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaylorVariant {
    Raw,
    Squared,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.to_f64v() * y.to_f64v()).sum()
}

/// Summed pairwise cosine similarity of per-task gradients. Zero-norm vectors
/// contribute 0 to all of their pairs; fewer than two tasks score 0.
pub fn score_cosprune<T: Scalar>(grads: &[&[T]], pairs: PairMode) -> f64 {
    let norms: Vec<f64> = grads.iter().map(|g| dot(g, g).sqrt()).collect();
    let cos = |i: usize, j: usize| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            dot(grads[i], grads[j]) / (norms[i] * norms[j])
        }
    };
    let t = grads.len();
    let s = sorted_sum((0..t).flat_map(|i| (i + 1..t).map(move |j| (i, j))).map(|(i, j)| cos(i, j)).collect());
    match pairs {
        PairMode::Unordered => s,
        PairMode::Full => 2.0 * s + sorted_sum((0..t).map(|i| cos(i, i)).collect()),
    }
}

// summing in value order makes the result independent of task order, bit for bit
fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// First-order Taylor importance `W·g`, optionally squared.
pub fn score_taylor<T: Scalar>(weights: &[T], total_grad: &[T], variant: TaylorVariant) -> Result<f64> {
    if weights.len() != total_grad.len() {
        return Err(Error::shape("score_taylor", "filter length", weights.len(), total_grad.len()));
    }
    let d = dot(weights, total_grad);
    Ok(match variant {
        TaylorVariant::Raw => d,
        TaylorVariant::Squared => d * d,
    })
}

fn total_filter_grad<'a, T: Scalar>(model: &MtlModel<T>, total: &'a [crate::Tensor<T>], c: FilterCoord) -> &'a [T] {
    let w = &total[model.weight_param_index(c.layer)];
    let len = w.numel() / w.dim(0);
    &w.data()[c.filter * len..(c.filter + 1) * len]
}

/// Per-filter scores of one batch for every alive filter.
///
/// `rng` is only drawn from by [`Criterion::Random`].
pub fn batch_scores<T: Scalar>(
    criterion: &Criterion,
    model: &MtlModel<T>,
    grads: &BatchGrads<T>,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeMap<FilterCoord, f64>> {
    let mut out = BTreeMap::new();
    for c in model.filters() {
        let s = match criterion {
            Criterion::Cosprune { pairs } => {
                let tg = grads
                    .per_task
                    .as_ref()
                    .ok_or_else(|| Error::invalid("batch_scores", "cosprune needs per-task gradients"))?;
                score_cosprune(&tg.filter_grads(model, c), *pairs)
            }
            Criterion::TaylorSquared => {
                score_taylor(model.filter_weights(c)?, total_filter_grad(model, &grads.total, c), TaylorVariant::Squared)?
            }
            Criterion::TaylorRaw => {
                score_taylor(model.filter_weights(c)?, total_filter_grad(model, &grads.total, c), TaylorVariant::Raw)?
            }
            Criterion::Random { .. } => rng.gen::<f64>(),
        };
        out.insert(c, s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosprune_trivial_cases() {
        let g = [1.0f64, 2.0, -0.5];
        let neg = g.map(|x| -x);
        assert!((score_cosprune(&[&g[..], &g[..]], PairMode::Unordered) - 1.0).abs() < 1e-12);
        assert!((score_cosprune(&[&g[..], &neg[..]], PairMode::Unordered) + 1.0).abs() < 1e-12);
        let (a, b) = ([1.0f64, 0.0], [0.0f64, 3.0]);
        assert_eq!(score_cosprune(&[&a[..], &b[..]], PairMode::Unordered), 0.0);
        assert!((score_cosprune(&[&g[..], &g[..], &g[..]], PairMode::Unordered) - 3.0).abs() < 1e-12);
        assert_eq!(score_cosprune(&[&g[..]], PairMode::Unordered), 0.0);
    }

    #[test]
    fn cosprune_full_pairs_is_affine_in_unordered() {
        let (a, b, c) = ([0.3f64, -1.0], [2.0f64, 0.5], [-0.7f64, 0.1]);
        let gs = [&a[..], &b[..], &c[..]];
        let u = score_cosprune(&gs, PairMode::Unordered);
        let f = score_cosprune(&gs, PairMode::Full);
        assert!((f - (2.0 * u + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn cosprune_zero_vector_contributes_nothing() {
        let (z, a) = ([0.0f64; 2], [1.0f64, 1.0]);
        let s = score_cosprune(&[&z[..], &a[..], &a[..]], PairMode::Unordered);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(score_cosprune(&[&z[..], &z[..]], PairMode::Full).abs() < 1e-12);
    }

    #[test]
    fn taylor_cases() {
        let w = [1.0f64, -2.0, 3.0];
        let g = [0.1f64, 0.1, 0.1];
        assert!((score_taylor(&w, &g, TaylorVariant::Raw).unwrap() - 0.2).abs() < 1e-12);
        assert!((score_taylor(&w, &g, TaylorVariant::Squared).unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(score_taylor(&[0.0f64; 3], &g, TaylorVariant::Raw).unwrap(), 0.0);
        assert_eq!(score_taylor(&[1.0f64, 1.0], &[1.0, -1.0], TaylorVariant::Squared).unwrap(), 0.0);
        assert!(score_taylor(&w, &g[..2], TaylorVariant::Raw).is_err());
    }

    #[test]
    fn criterion_json_forms() {
        let c: Criterion = serde_json::from_str(r#"{"kind":"cosprune"}"#).unwrap();
        assert_eq!(c, Criterion::cosprune());
        let c: Criterion = serde_json::from_str(r#"{"kind":"cosprune","pairs":"full"}"#).unwrap();
        assert_eq!(c, Criterion::Cosprune { pairs: PairMode::Full });
        let c: Criterion = serde_json::from_str(r#"{"kind":"random","seed":4}"#).unwrap();
        assert_eq!(c, Criterion::Random { seed: 4 });
        assert!(serde_json::from_str::<Criterion>(r#"{"kind":"taylor_raw","x":1}"#).is_err());
        assert!(serde_json::from_str::<Criterion>(r#"{"kind":"taylor_raw","seed":1}"#).is_err());
        assert!(serde_json::from_str::<Criterion>(r#"{"kind":"random"}"#).is_err());
        assert!(serde_json::from_str::<Criterion>(r#"{"kind":"magnitude"}"#).is_err());
        for c in [Criterion::cosprune(), Criterion::TaylorSquared, Criterion::TaylorRaw, Criterion::Random { seed: 2 }] {
            assert_eq!(serde_json::from_str::<Criterion>(&serde_json::to_string(&c).unwrap()).unwrap(), c);
        }
    }
}

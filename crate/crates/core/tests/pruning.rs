use std::collections::BTreeMap;

use cosprune::data::{generate, split, DatasetConfig, Sample};
use cosprune::model::{FilterCoord, ModelSpec, MtlModel};
use cosprune::pruning::{
    removable_filters, run_iterative, score_taylor, select_victims, Criterion, ImportanceAccumulator, PruneConfig,
    StopRule, TaylorVariant,
};
use cosprune::Error;
use proptest::prelude::*;

fn desk() -> MtlModel<f32> {
    MtlModel::build(&ModelSpec::desk(4), 0).unwrap()
}

fn with_scores(model: &MtlModel<f32>, f: impl Fn(usize, FilterCoord) -> f64) -> ImportanceAccumulator {
    let mut acc = ImportanceAccumulator::new(model);
    let batch: BTreeMap<FilterCoord, f64> = model.filters().into_iter().enumerate().map(|(i, c)| (c, f(i, c))).collect();
    acc.accumulate(&batch).unwrap();
    acc
}

#[test]
fn accumulator_linearity_and_reset() {
    let model = desk();
    let mut acc = ImportanceAccumulator::new(&model);
    assert!(acc.is_zero());
    assert_eq!(acc.scores.keys().copied().collect::<Vec<_>>(), model.filters());
    let c: BTreeMap<FilterCoord, f64> = model.filters().into_iter().map(|f| (f, 0.25)).collect();
    for _ in 0..10 {
        acc.accumulate(&c).unwrap();
    }
    assert!(acc.scores.values().all(|&s| (s - 2.5).abs() < 1e-12));
    assert_eq!(acc.batches_seen, 10);

    let mut acc = ImportanceAccumulator::new(&model);
    let s: BTreeMap<FilterCoord, f64> = model.filters().into_iter().enumerate().map(|(i, f)| (f, i as f64 - 7.5)).collect();
    let neg: BTreeMap<FilterCoord, f64> = s.iter().map(|(&k, &v)| (k, -v)).collect();
    let zeros: BTreeMap<FilterCoord, f64> = s.keys().map(|&k| (k, 0.0)).collect();
    acc.accumulate(&s).unwrap();
    let snapshot = acc.scores.clone();
    acc.accumulate(&zeros).unwrap();
    assert_eq!(acc.scores, snapshot);
    acc.accumulate(&neg).unwrap();
    assert!(acc.scores.values().all(|&v| v == 0.0));

    acc.reset(&model);
    assert!(acc.is_zero());
}

#[test]
fn accumulator_rejects_foreign_keys() {
    let model = desk();
    let mut acc = ImportanceAccumulator::new(&model);
    let pruned = model.apply_prune(&[FilterCoord::new(0, 0)]).unwrap();
    let batch: BTreeMap<FilterCoord, f64> = pruned.filters().into_iter().map(|c| (c, 1.0)).collect();
    assert!(matches!(acc.accumulate(&batch), Err(Error::KeyMismatch(_))));
}

#[test]
fn increasing_scores_pick_first_coordinates() {
    let model = desk();
    let acc = with_scores(&model, |i, _| i as f64);
    assert_eq!(select_victims(&acc, 4, &model).unwrap(), model.filters()[..4].to_vec());
}

#[test]
fn equal_scores_pick_smallest_coordinates() {
    let model = desk();
    let acc = with_scores(&model, |_, _| -1.0);
    assert_eq!(select_victims(&acc, 5, &model).unwrap(), model.filters()[..5].to_vec());
}

#[test]
fn floor_is_respected_and_exhaustion_reported() {
    let model = MtlModel::<f32>::build(&ModelSpec::tiny(3), 0).unwrap();
    // layer 0 scores lowest, but only two of its three filters may go
    let acc = with_scores(&model, |_, c| if c.layer == 0 { -10.0 } else { c.filter as f64 });
    let v = select_victims(&acc, 3, &model).unwrap();
    assert_eq!(v, vec![FilterCoord::new(0, 0), FilterCoord::new(0, 1), FilterCoord::new(1, 0)]);
    assert_eq!(removable_filters(&model), 2 + 2 + 3);
    assert!(matches!(
        select_victims(&acc, 8, &model),
        Err(Error::NotEnoughFilters { available: 7, requested: 8 })
    ));
    assert!(select_victims(&acc, 0, &model).is_err());
}

#[test]
fn taylor_sign_behaviour() {
    let w = [0.5f64, -1.0, 2.0];
    let g = [0.3f64, 0.2, -0.4];
    let neg = g.map(|x| -x);
    let raw = score_taylor(&w, &g, TaylorVariant::Raw).unwrap();
    assert_eq!(score_taylor(&w, &neg, TaylorVariant::Raw).unwrap(), -raw);
    let sq = score_taylor(&w, &g, TaylorVariant::Squared).unwrap();
    assert!(sq >= 0.0);
    assert_eq!(score_taylor(&w, &neg, TaylorVariant::Squared).unwrap(), sq);
}

/// Repeatedly takes the smallest (score, coordinate) whose layer is above the floor.
fn oracle(scores: &BTreeMap<FilterCoord, f64>, counts: &[usize], floor: usize, p: usize) -> Option<Vec<FilterCoord>> {
    let mut left = scores.clone();
    let mut alive = counts.to_vec();
    let mut out = Vec::new();
    while out.len() < p {
        let best = left
            .iter()
            .filter(|(c, _)| alive[c.layer] > floor)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(b.0)))
            .map(|(&c, _)| c)?;
        left.remove(&best);
        alive[best.layer] -= 1;
        out.push(best);
    }
    Some(out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_matches_brute_force(values in proptest::collection::vec(-3i32..3, 10), p in 1usize..9, floor in 1usize..3) {
        let mut spec = ModelSpec::tiny(3);
        spec.min_filters_per_layer = floor;
        let model = MtlModel::<f32>::build(&spec, 0).unwrap();
        // coarse integer scores force plenty of ties
        let acc = with_scores(&model, |i, _| values[i] as f64 * 0.5);
        let expected = oracle(&acc.scores, &model.alive_counts(), floor, p);
        match (select_victims(&acc, p, &model), expected) {
            (Ok(v), Some(e)) => prop_assert_eq!(v, e),
            (Err(Error::NotEnoughFilters { .. }), None) => {}
            (got, want) => prop_assert!(false, "got {:?}, oracle {:?}", got, want),
        }
    }
}

fn tiny_data() -> (Vec<Sample>, Vec<usize>, Vec<usize>) {
    let samples = generate(&DatasetConfig {
        n_samples: 40,
        height: 8,
        width: 8,
        classes: 3,
        ..DatasetConfig::desk(9)
    })
    .unwrap();
    let (train, val) = split(samples.len(), 0.25, 9).unwrap();
    (samples, train, val)
}

fn run(criterion: Criterion, stop: StopRule, max_events: Option<usize>) -> (Vec<Vec<FilterCoord>>, Vec<usize>, Vec<bool>) {
    let (samples, train, val) = tiny_data();
    let model = MtlModel::<f32>::build(&ModelSpec::tiny(3), 1).unwrap();
    let mut cfg = PruneConfig::new(criterion, 1, 1, stop);
    cfg.max_events = max_events;
    cfg.batch_size = 8;
    let mut zeroed = Vec::new();
    let out = run_iterative(model, &samples, &train, &val, &cfg, |probe| {
        zeroed.push(probe.accumulator.is_zero() && probe.optimizer_fresh && probe.lr == cfg.eta0);
        Ok(())
    })
    .unwrap();
    let params = out.levels().iter().map(|l| l.params).collect();
    (out.history.victim_sequence(), params, zeroed)
}

#[test]
fn three_events_strictly_shrink_and_reset() {
    for criterion in [Criterion::cosprune(), Criterion::TaylorSquared, Criterion::Random { seed: 3 }] {
        let (victims, params, zeroed) = run(criterion, StopRule::MinAliveFilters { filters: 0 }, Some(3));
        assert_eq!(victims.len(), 3);
        assert!(victims.iter().all(|v| v.len() == 1));
        assert_eq!(params.len(), 4);
        assert!(params.windows(2).all(|w| w[1] < w[0]), "{params:?}");
        assert_eq!(zeroed, vec![true; 3]);
    }
}

#[test]
fn same_config_same_victims() {
    for criterion in [Criterion::cosprune(), Criterion::TaylorRaw, Criterion::Random { seed: 3 }] {
        let a = run(criterion, StopRule::MinAliveFilters { filters: 0 }, Some(2));
        let b = run(criterion, StopRule::MinAliveFilters { filters: 0 }, Some(2));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}

#[test]
fn stop_rules_end_the_loop() {
    // ten filters: stop once eight are alive
    let (victims, ..) = run(Criterion::TaylorSquared, StopRule::MinAliveFilters { filters: 8 }, None);
    assert_eq!(victims.len(), 2);
    // the floor caps the loop at seven removals
    let (victims, ..) = run(Criterion::TaylorSquared, StopRule::MinAliveFilters { filters: 0 }, None);
    assert_eq!(victims.len(), 7);
    let (_, params, _) = run(Criterion::TaylorSquared, StopRule::BackboneReduction { fraction: 0.3 }, None);
    let spec = ModelSpec::tiny(3);
    let full = MtlModel::<f32>::build(&spec, 1).unwrap().count_params();
    let last = *params.last().unwrap();
    assert!(full.total - last >= (0.3 * full.backbone as f64) as usize);
    let (_, params, _) = run(Criterion::TaylorSquared, StopRule::TargetParams { params: full.total - 200 }, None);
    assert!(*params.last().unwrap() <= full.total - 200);
    assert!(params[params.len() - 2] > full.total - 200);
}

#[test]
fn invalid_config_is_a_config_error() {
    let (samples, train, val) = tiny_data();
    let model = MtlModel::<f32>::build(&ModelSpec::tiny(3), 1).unwrap();
    let cfg = PruneConfig::new(Criterion::cosprune(), 0, 1, StopRule::BackboneReduction { fraction: 0.5 });
    let err = run_iterative(model, &samples, &train, &val, &cfg, |_| Ok(())).err().unwrap();
    assert!(err.is_config(), "{err}");
}

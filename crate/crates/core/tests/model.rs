use cosprune::data::{generate, Batch, DatasetConfig, Sample};
use cosprune::loss::TaskKind;
use cosprune::model::{
    conv_flops, conv_params, load_checkpoint, removed_params, save_checkpoint, FilterCoord, HeadSpec, ModelSpec, MtlModel,
};
use proptest::prelude::*;

fn samples(n: usize, h: usize, classes: usize) -> Vec<Sample> {
    generate(&DatasetConfig {
        n_samples: n,
        height: h,
        width: h,
        classes,
        ..DatasetConfig::desk(3)
    })
    .unwrap()
}

#[test]
fn build_is_seed_deterministic() {
    let spec = ModelSpec::desk(4);
    let a = MtlModel::<f32>::build(&spec, 1).unwrap();
    let b = MtlModel::<f32>::build(&spec, 1).unwrap();
    let c = MtlModel::<f32>::build(&spec, 2).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn desk_param_count_matches_hand_recount() {
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 0).unwrap();
    // backbone 3→8→8→16→16→32→32, 3×3 kernels with bias
    let widths = [3, 8, 8, 16, 16, 32, 32];
    let backbone: usize = widths.windows(2).map(|w| 9 * w[0] * w[1] + w[1]).sum();
    assert_eq!(backbone, 18_184);
    // each head: three dilated 3×3 branches 32→8, then a 1×1 projection 24→out
    let head = |out: usize| 3 * (9 * 32 * 8 + 8) + 24 * out + out;
    let heads = head(4) + head(1) + head(3);
    let counts = model.count_params();
    assert_eq!(counts.backbone, backbone);
    assert_eq!(counts.heads, heads);
    assert_eq!(counts.total, 39_192);
}

#[test]
fn single_pointwise_conv_closed_form() {
    assert_eq!(conv_params(1, 1, 1), 2);
    assert_eq!(conv_flops(1, 1, 1, 4, 4), 32);
}

#[test]
fn forward_shapes_per_task() {
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 0).unwrap();
    let data = samples(1, 32, 4);
    let out = model.forward_all(&Batch::<f32>::from_samples(&data).images).unwrap();
    let shapes: Vec<&[usize]> = out.iter().map(|t| t.shape()).collect();
    assert_eq!(shapes, vec![&[1, 4, 32, 32][..], &[1, 1, 32, 32], &[1, 3, 32, 32]]);
}

#[test]
fn duplicated_image_gives_duplicated_rows() {
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 5).unwrap();
    let data = samples(1, 32, 4);
    let out = model.forward_all(&Batch::<f32>::from_samples([&data[0], &data[0]]).images).unwrap();
    for t in out {
        let half = t.numel() / 2;
        assert_eq!(t.data()[..half], t.data()[half..]);
    }
}

#[test]
fn head_order_does_not_change_outputs() {
    let model = MtlModel::<f64>::build(&ModelSpec::tiny(3), 2).unwrap();
    let images = Batch::<f64>::from_samples(&samples(2, 8, 3)).images;
    let a = model.record_with_order(&images, &[0, 1, 2]).unwrap();
    let b = model.record_with_order(&images, &[2, 0, 1]).unwrap();
    for t in 0..3 {
        assert_eq!(a.tape.value(a.outputs[t]).data(), b.tape.value(b.outputs[t]).data());
    }
}

#[test]
fn single_task_gradient_equals_total() {
    let mut spec = ModelSpec::tiny(3);
    spec.heads.retain(|h| h.task == TaskKind::Depth);
    let model = MtlModel::<f64>::build(&spec, 0).unwrap();
    let batch = Batch::<f64>::from_samples(&samples(3, 8, 3));
    let tg = model.task_gradients(&batch).unwrap();
    let (_, total) = model.total_gradients(&batch).unwrap();
    for c in model.filters() {
        let idx = model.weight_param_index(c.layer);
        let len = total[idx].numel() / total[idx].dim(0);
        let reference = &total[idx].data()[c.filter * len..(c.filter + 1) * len];
        let g = tg.filter_grads(&model, c);
        assert_eq!(g.len(), 1);
        for (a, b) in g[0].iter().zip(reference) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn task_gradient_sum_identity_double() {
    let model = MtlModel::<f64>::build(&ModelSpec::tiny(3), 4).unwrap();
    let batch = Batch::<f64>::from_samples(&samples(4, 8, 3));
    let tg = model.task_gradients(&batch).unwrap();
    let (_, total) = model.total_gradients(&batch).unwrap();
    for c in model.filters() {
        let idx = model.weight_param_index(c.layer);
        let len = total[idx].numel() / total[idx].dim(0);
        let reference = &total[idx].data()[c.filter * len..(c.filter + 1) * len];
        let g = tg.filter_grads(&model, c);
        for (j, r) in reference.iter().enumerate() {
            let s: f64 = g.iter().map(|v| v[j]).sum();
            assert!((s - r).abs() <= 1e-10 * r.abs().max(1.0), "{c:?}[{j}]: {s} vs {r}");
        }
    }
}

#[test]
fn empty_prune_is_identity() {
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 3).unwrap();
    let same = model.apply_prune(&[]).unwrap();
    assert_eq!(same.checksum(), model.checksum());
    assert_eq!(same.alive_counts(), model.alive_counts());
}

#[test]
fn one_filter_param_delta_closed_form() {
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 3).unwrap();
    let before = model.count_params().total;
    // layer 2: 3×3 over 8 inputs + bias, plus its input slice in layer 3 (16 filters of 3×3)
    let pruned = model.apply_prune(&[FilterCoord::new(2, 5)]).unwrap();
    assert_eq!(before - pruned.count_params().total, 9 * 8 + 1 + 9 * 16);
    // last layer: its input slice in every head branch (3 heads × 3 branches × 8 mids × 3×3)
    let pruned = model.apply_prune(&[FilterCoord::new(5, 0)]).unwrap();
    assert_eq!(before - pruned.count_params().total, 9 * 32 + 1 + 3 * 3 * 8 * 9);
}

#[test]
fn masking_everything_zeroes_features_and_is_idempotent() {
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 8).unwrap();
    let all = model.filters();
    let masked = model.mask_prune(&all).unwrap();
    let images = Batch::<f32>::from_samples(&samples(2, 32, 4)).images;
    assert!(masked.features(&images).unwrap().data().iter().all(|&v| v == 0.0));
    let victims = [FilterCoord::new(0, 0), FilterCoord::new(4, 7)];
    let once = model.mask_prune(&victims).unwrap();
    let twice = once.mask_prune(&victims).unwrap();
    assert_eq!(once.checksum(), twice.checksum());
}

#[test]
fn prune_rejects_unknown_and_floor_breaking_victims() {
    let model = MtlModel::<f32>::build(&ModelSpec::tiny(3), 0).unwrap();
    assert!(model.apply_prune(&[FilterCoord::new(0, 9)]).is_err());
    let whole_layer: Vec<FilterCoord> = (0..3).map(|f| FilterCoord::new(0, f)).collect();
    assert!(model.apply_prune(&whole_layer).is_err());
    let pruned = model.apply_prune(&[FilterCoord::new(0, 1)]).unwrap();
    // coordinates are current positions, so the old index 2 is now 1
    assert!(!pruned.contains(FilterCoord::new(0, 2)));
    assert_eq!(pruned.origin()[0], vec![0, 2]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 6).unwrap();
    let pruned = model.apply_prune(&[FilterCoord::new(1, 3), FilterCoord::new(5, 30)]).unwrap();
    save_checkpoint(&pruned, dir.path(), Some("history.jsonl")).unwrap();
    let (loaded, manifest) = load_checkpoint::<f32>(dir.path()).unwrap();
    assert_eq!(loaded.checksum(), pruned.checksum());
    assert_eq!(loaded.origin(), pruned.origin());
    assert_eq!(manifest.pruned_spec(), pruned.current_spec());
    assert_eq!(manifest.prune_history.as_deref(), Some("history.jsonl"));
    let images = Batch::<f32>::from_samples(&samples(1, 32, 4)).images;
    let (a, b) = (loaded.forward_all(&images).unwrap(), pruned.forward_all(&images).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x.max_abs_diff(y) == 0.0));
}

#[test]
fn head_spec_json_is_strict() {
    let h = HeadSpec::desk(TaskKind::Normals, 4);
    let text = serde_json::to_string(&h).unwrap();
    assert_eq!(serde_json::from_str::<HeadSpec>(&text).unwrap(), h);
    assert!(serde_json::from_str::<HeadSpec>(&text.replace("}", r#","extra":1}"#)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn removal_matches_masking_for_any_victim_set(seed in 0u64..1000, picks in proptest::collection::vec(any::<bool>(), 10)) {
        let model = MtlModel::<f64>::build(&ModelSpec::tiny(3), seed).unwrap();
        let filters = model.filters();
        let mut victims = Vec::new();
        let mut alive = model.alive_counts();
        for (c, pick) in filters.iter().zip(&picks) {
            if *pick && alive[c.layer] > 1 {
                alive[c.layer] -= 1;
                victims.push(*c);
            }
        }
        let images = Batch::<f64>::from_samples(&samples(2, 8, 3)).images;
        let pruned = model.apply_prune(&victims).unwrap();
        let a = pruned.forward_all(&images).unwrap();
        let b = model.mask_prune(&victims).unwrap().forward_all(&images).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.shape(), y.shape());
            prop_assert!(x.max_abs_diff(y) <= 1e-5);
        }
        prop_assert_eq!(
            pruned.count_params().total + removed_params(&model, &victims).unwrap(),
            model.count_params().total
        );
        if !victims.is_empty() {
            prop_assert!(pruned.count_params().total < model.count_params().total);
        }
    }
}

mod support;

use burnscar::autodiff::{bce_value, dice_value, focal_value, Adam, LossKind};
use burnscar::bamcd::{scene_tiles, train, BamCdConfig, BamCdModel, Combine, Mode, Sharing, SkipMode};
use burnscar::container::Container;
use burnscar::raster::{BandId, BitemporalSample, RasterPatch};
use burnscar::Error;
use support::oracles::{bamcd_param_count, stitch_sources};

fn tiny() -> BamCdConfig {
    BamCdConfig {
        stem_width: 4,
        widths: vec![4, 8],
        blocks: vec![1, 1],
        reduction: 2,
        batch_size: 2,
        epochs: 2,
        ..BamCdConfig::mini()
    }
}

fn samples(seed: u64, n: usize, size: usize) -> Vec<BitemporalSample> {
    use burnscar::raster::{generate_synthetic_dataset, SyntheticConfig};
    let config = SyntheticConfig {
        patch_size: size,
        radius: (3.0, 6.0),
        positive_probability: 1.0,
        ..SyntheticConfig::default()
    };
    generate_synthetic_dataset(seed, &config, (n, 0, 0)).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn output_is_one_probability_per_pixel() {
    let model = BamCdModel::build(&tiny()).unwrap();
    let s = &samples(1, 1, 16)[0];
    let p = model.forward(&s.pre, &s.post).unwrap();
    assert_eq!(p.len(), 256);
    assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn parameter_counts_match_layer_oracle() {
    let mini = BamCdConfig::mini();
    let want = bamcd_param_count(9, 16, &[16, 32, 64, 128], &[1, 1, 1, 1], 2, true);
    assert_eq!(want, 1_016_029);
    assert_eq!(mini.parameter_count(), want);
    assert_eq!(BamCdModel::build(&mini).unwrap().trainable_parameter_count(), want);

    let pseudo = BamCdConfig { sharing: Sharing::PseudoSiamese, ..tiny() };
    let want = bamcd_param_count(9, 4, &[4, 8], &[1, 1], 2, false);
    assert_eq!(BamCdModel::build(&pseudo).unwrap().trainable_parameter_count(), want);

    let full = BamCdConfig::paper_like();
    assert_eq!(full.parameter_count(), bamcd_param_count(10, 64, &[256, 512, 1024, 2048], &[3, 4, 23, 3], 16, true));
}

#[test]
fn siamese_streams_share_every_parameter() {
    let shared = BamCdModel::build(&tiny()).unwrap();
    assert_eq!(shared.encoder_param_ids(0), shared.encoder_param_ids(1));
    let pseudo = BamCdModel::build(&BamCdConfig { sharing: Sharing::PseudoSiamese, ..tiny() }).unwrap();
    let (a, b) = (pseudo.encoder_param_ids(0), pseudo.encoder_param_ids(1));
    assert_eq!(a.len(), b.len());
    assert!(a.iter().all(|id| !b.contains(id)));
}

#[test]
fn eval_forward_is_repeatable_and_side_effect_free() {
    let model = BamCdModel::build(&tiny()).unwrap();
    let s = samples(2, 2, 16);
    let first = model.forward(&s[0].pre, &s[0].post).unwrap();
    model.forward_batch(&[&s[1].pre], &[&s[1].post], Mode::Train).unwrap();
    assert_eq!(bits(&first), bits(&model.forward(&s[0].pre, &s[0].post).unwrap()));
}

#[test]
fn batch_results_do_not_depend_on_batch_mates_in_eval() {
    let model = BamCdModel::build(&tiny()).unwrap();
    let s = samples(3, 3, 16);
    let alone = model.forward(&s[1].pre, &s[1].post).unwrap();
    let batch = model
        .forward_batch(&[&s[0].pre, &s[1].pre, &s[2].pre], &[&s[0].post, &s[1].post, &s[2].post], Mode::Eval)
        .unwrap();
    assert_eq!(bits(&alone), bits(&batch[1]));
}

#[test]
fn train_step_reports_the_selected_loss() {
    let s = samples(4, 2, 16);
    let batch: Vec<&BitemporalSample> = s.iter().collect();
    let target: Vec<f64> = s.iter().flat_map(|x| x.truth.labels().iter().map(|&l| f64::from(l))).collect();
    for loss in [LossKind::Bce, LossKind::Dice, LossKind::Focal { alpha: 0.25, gamma: 2.0 }, LossKind::BceDice] {
        let mut model = BamCdModel::build(&BamCdConfig { loss, ..tiny() }).unwrap();
        let probs: Vec<f64> = model
            .forward_batch(&[&s[0].pre, &s[1].pre], &[&s[0].post, &s[1].post], Mode::Train)
            .unwrap()
            .concat();
        let want = match loss {
            LossKind::Bce => bce_value(&probs, &target),
            LossKind::Dice => dice_value(&probs, &target),
            LossKind::Focal { alpha, gamma } => focal_value(&probs, &target, alpha, gamma),
            LossKind::BceDice => bce_value(&probs, &target) + dice_value(&probs, &target),
        };
        let got = model.train_step(&batch, &mut Adam::new(1e-3)).unwrap();
        assert!((got - want).abs() < 1e-12, "{}: {got} vs {want}", loss.name());
    }
}

#[test]
fn gradients_reach_every_trainable_parameter() {
    for (combine, skip) in [(Combine::Max, SkipMode::Concat), (Combine::Add, SkipMode::Difference)] {
        let mut model = BamCdModel::build(&BamCdConfig { combine, skip, ..tiny() }).unwrap();
        let s = samples(5, 2, 16);
        let before = model.params().clone();
        model.train_step(&s.iter().collect::<Vec<_>>(), &mut Adam::new(1e-3)).unwrap();
        for (i, e) in model.params().entries().iter().enumerate() {
            let old = &before.entries()[i];
            if e.trainable {
                assert!(e.grad.iter().any(|g| *g != 0.0), "no gradient reaches {}", e.name);
                assert_ne!(e.value.data(), old.value.data(), "{} did not move", e.name);
            } else if e.name.ends_with("running_mean") {
                assert_ne!(e.value.data(), old.value.data(), "{} not updated", e.name);
            }
        }
    }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let cfg = BamCdConfig { epochs: 0, ..tiny() };
    let model = BamCdModel::build(&cfg).unwrap();
    let s = samples(6, 3, 16);
    let out = train(model.clone(), &s[..2], &s[2..]).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.best_epoch, None);
    assert_eq!(out.model.to_container().to_bytes(), model.to_container().to_bytes());
}

#[test]
fn training_is_reproducible_and_keeps_best_epoch() {
    let s = samples(7, 5, 16);
    let run = || train(BamCdModel::build(&tiny()).unwrap(), &s[..3], &s[3..]).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.trace.len(), 2);
    assert_eq!(a.trace[0].epoch, 1);
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_f1_burnt.to_bits(), y.val_f1_burnt.to_bits());
    }
    let best = a.best_epoch.unwrap();
    let max = a.trace.iter().map(|r| r.val_f1_burnt).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.trace[best - 1].val_f1_burnt, max);
    assert_eq!(a.trace.iter().position(|r| r.val_f1_burnt == max), Some(best - 1));
}

#[test]
fn scene_prediction_stitches_tiles() {
    let model = BamCdModel::build(&tiny()).unwrap();
    let s = &samples(8, 1, 40)[0];
    let whole = model.predict_scene(&s.pre, &s.post, 40).unwrap();
    assert_eq!(whole, model.predict_mask(&s.pre, &s.post).unwrap());

    let stitched = model.predict_scene(&s.pre, &s.post, 16).unwrap();
    assert_eq!(scene_tiles(40, 40, 16).len(), 9);
    let sources = stitch_sources(40, 40, 16);
    let mut tiles = std::collections::HashMap::new();
    for (i, &(r, c, y, x)) in sources.iter().enumerate() {
        let tile = tiles.entry((r, c)).or_insert_with(|| {
            model
                .predict_mask(&s.pre.window(r, c, 16, 16), &s.post.window(r, c, 16, 16))
                .unwrap()
        });
        assert_eq!(stitched.labels()[i], tile.get(y, x), "pixel {i}");
    }
    assert!(model.predict_scene(&s.pre, &s.post, 48).is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let mut model = BamCdModel::build(&BamCdConfig { sharing: Sharing::PseudoSiamese, ..tiny() }).unwrap();
    let s = samples(9, 2, 16);
    model.train_step(&s.iter().collect::<Vec<_>>(), &mut Adam::new(1e-3)).unwrap();
    let bytes = model.to_container().to_bytes();
    let back = BamCdModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(
        bits(&back.forward(&s[0].pre, &s[0].post).unwrap()),
        bits(&model.forward(&s[0].pre, &s[0].post).unwrap())
    );
    assert!(BamCdModel::from_container(&Container::from_bytes(&bytes[..bytes.len() / 2]).unwrap_or_default()).is_err());
}

#[test]
fn band_storage_order_does_not_matter() {
    let model = BamCdModel::build(&tiny()).unwrap();
    let s = &samples(10, 1, 16)[0];
    let reversed: Vec<BandId> = BandId::ALL.iter().rev().copied().collect();
    let (pre, post) = (s.pre.select_bands(&reversed).unwrap(), s.post.select_bands(&reversed).unwrap());
    assert_eq!(bits(&model.forward(&pre, &post).unwrap()), bits(&model.forward(&s.pre, &s.post).unwrap()));
}

#[test]
fn bad_inputs_are_rejected() {
    let model = BamCdModel::build(&tiny()).unwrap();
    let s = &samples(11, 1, 16)[0];
    let missing = s.pre.select_bands(&[BandId::B02, BandId::B03]).unwrap();
    assert!(matches!(model.forward(&missing, &missing), Err(Error::MissingBand { .. })));
    let odd = RasterPatch::zeros(15, 15, BandId::ALL.to_vec()).unwrap();
    assert!(model.forward(&odd, &odd).is_err());
    let cfg = BamCdConfig { widths: vec![4], ..tiny() };
    assert!(BamCdModel::build(&cfg).is_err());
}

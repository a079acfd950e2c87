use lookout::checkpoint::{decode, encode, explorer_header, restore};
use lookout::dataset::{synth_generate_at, PanoramaSample, SynthSpec};
use lookout::episode::{run_batch, EpisodeConfig, EpisodeInput};
use lookout::nets::{ClassificationMode, ExplorerModel, Profile};
use lookout::trainer::{TrainConfig, TrainModel, Trainer};
use lookout::Error;

fn micro(count: usize) -> Vec<PanoramaSample> {
    let spec = SynthSpec {
        count,
        seed: 3,
        ..SynthSpec::default()
    };
    synth_generate_at(&spec, &Profile::Micro.geometry()).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        glimpses: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        profile: Profile::Micro,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn explorer(t: &Trainer) -> &ExplorerModel {
    t.explorer().expect("explorer model")
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let data = micro(4);
    let mut t = Trainer::new(TrainConfig {
        learning_rate: 0.0,
        ..config()
    })
    .unwrap();
    let before = explorer(&t).store.flat_values().unwrap();
    t.step(&data).unwrap();
    t.step(&data).unwrap();
    assert_eq!(explorer(&t).store.flat_values().unwrap(), before);
    assert_eq!(t.iteration, 2);
}

#[test]
fn training_is_deterministic() {
    let data = micro(8);
    let run = || {
        let mut t = Trainer::new(config()).unwrap();
        let mut rows = Vec::new();
        t.train_epoch(&data, &mut |_, m| {
            rows.push(m.csv_row());
            Ok(())
        })
        .unwrap();
        (rows, explorer(&t).store.flat_values().unwrap())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let data = micro(8);
    let mut t = Trainer::new(config()).unwrap();
    let recon_terms =
        |m: &lookout::trainer::IterationMetrics| m.local_mean.unwrap() + m.scales.unwrap().iter().sum::<f64>();
    let first = recon_terms(&t.step(&data[..4]).unwrap());
    let mut last = first;
    for _ in 0..30 {
        last = recon_terms(&t.step(&data[..4]).unwrap());
    }
    assert!(last < 0.8 * first, "reconstruction loss {first} -> {last}");
}

#[test]
fn recording_steps_does_not_change_the_objective() {
    let data = micro(3);
    let model = ExplorerModel::new(
        Profile::Micro.architecture(),
        ClassificationMode::Off,
        26,
        candle_core::DType::F32,
        2,
    )
    .unwrap();
    model.store.perturb(1, 0.05).unwrap();
    let inputs: Vec<EpisodeInput<'_>> = data
        .iter()
        .enumerate()
        .map(|(i, s)| EpisodeInput {
            panorama: &s.pixels,
            label: s.label,
            seed: i as u64,
        })
        .collect();
    let mut cfg = EpisodeConfig::train(4);
    let plain = run_batch(&model, &inputs, &cfg).unwrap();
    cfg.record_steps = true;
    let recorded = run_batch(&model, &inputs, &cfg).unwrap();
    let trajectories =
        |r: &lookout::episode::Rollout| r.episodes.iter().map(|e| e.trajectory.clone()).collect::<Vec<_>>();
    assert_eq!(trajectories(&plain), trajectories(&recorded));
    assert_eq!(
        plain.loss.to_scalar::<f32>().unwrap(),
        recorded.loss.to_scalar::<f32>().unwrap()
    );
    let ga = plain.loss.backward().unwrap();
    let gb = recorded.loss.backward().unwrap();
    for p in model.store.params() {
        let a: Vec<f32> = ga
            .get(p.var.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let b: Vec<f32> = gb
            .get(p.var.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(a, b, "{}", p.name);
    }
    assert!(plain.episodes[0].steps[0].recon.is_none());
    assert!(recorded.episodes[0].steps.iter().all(|s| s.recon.is_some()));
}

#[test]
fn resumed_training_continues_counters_and_values() {
    let data = micro(8);
    let mut t = Trainer::new(config()).unwrap();
    t.train_epoch(&data, &mut |_, _| Ok(())).unwrap();
    let bytes = encode(
        &explorer_header(explorer(&t), "micro", t.iteration, t.epoch),
        &explorer(&t).store,
    )
    .unwrap();
    let (header, values) = decode(&bytes).unwrap();
    assert_eq!((header.iteration, header.epoch), (2, 1));

    let fresh = ExplorerModel::new(
        header.architecture.clone(),
        header.classification,
        header.classes,
        candle_core::DType::F32,
        99,
    )
    .unwrap();
    restore(&fresh.store, &header, &values).unwrap();
    assert_eq!(
        fresh.store.flat_values().unwrap(),
        explorer(&t).store.flat_values().unwrap()
    );
    let mut resumed =
        Trainer::with_model(config(), TrainModel::Explorer(fresh), header.iteration, header.epoch).unwrap();
    let mut seen = Vec::new();
    resumed
        .train_epoch(&data, &mut |_, m| {
            seen.push((m.iteration, m.epoch));
            Ok(())
        })
        .unwrap();
    assert_eq!(seen, vec![(3, 1), (4, 1)]);
    assert_eq!(resumed.epoch, 2);
}

#[test]
fn non_finite_input_is_reported_as_divergence() {
    let mut data = micro(2);
    data[0].pixels.set(10, 10, 0, f32::NAN);
    let mut t = Trainer::new(config()).unwrap();
    match t.step(&data) {
        Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 1),
        other => panic!("expected divergence, got {:?}", other.map(|m| m.total)),
    }
    assert_eq!(t.iteration, 0);
}

#[test]
fn full_image_classifier_learns_a_fixed_batch() {
    let data = micro(4);
    let mut t = Trainer::new(TrainConfig {
        classification: ClassificationMode::UpperBound,
        ..config()
    })
    .unwrap();
    let first = t.step(&data).unwrap();
    assert!(first.local_mean.is_none());
    let mut last = first.total;
    for _ in 0..15 {
        last = t.step(&data).unwrap().total;
    }
    assert!(last < first.total, "{} -> {last}", first.total);
}

#[test]
fn transfer_copies_shared_blocks_and_keeps_a_fresh_classifier() {
    let data = micro(4);
    let mut source = Trainer::new(config()).unwrap();
    source.step(&data).unwrap();
    let cfg = TrainConfig {
        classification: ClassificationMode::FromRecon,
        ..config()
    };
    let t = Trainer::transfer(cfg.clone(), source.model.store()).unwrap();
    let fresh = Trainer::new(cfg).unwrap();
    assert_eq!((t.iteration, t.epoch), (0, 0));
    let src = source.model.store();
    let (src_vals, vals, fresh_vals) = (
        src.flat_values().unwrap(),
        t.model.store().flat_values().unwrap(),
        fresh.model.store().flat_values().unwrap(),
    );
    let mut shared = 0;
    for (i, p) in t.model.store().params().iter().enumerate() {
        match src.params().iter().position(|q| q.name == p.name) {
            Some(j) => {
                assert_eq!(vals[i], src_vals[j], "{}", p.name);
                shared += 1;
            }
            None => {
                assert!(p.name.starts_with("classifier"), "{}", p.name);
                assert_eq!(vals[i], fresh_vals[i], "{}", p.name);
            }
        }
    }
    assert_eq!(shared, src.params().len());
}

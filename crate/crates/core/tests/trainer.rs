mod common;

use std::collections::BTreeSet;

use common::{small_config, synth_pair};
use munit::trainer::{lr_schedule, Trainer, TrainConfig};
use munit::MunitError;

fn trained(config: TrainConfig, steps: u64) -> Trainer {
    let mut t = Trainer::new(config).unwrap();
    let mut streams = t.streams(synth_pair(8, t.config().image_size, 1)).unwrap();
    for _ in 0..steps {
        t.step_once(&mut streams).unwrap();
    }
    t
}

fn param_bits(t: &Trainer) -> Vec<Vec<u32>> {
    t.model()
        .params()
        .entries()
        .iter()
        .map(|e| e.tensor.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn ten_steps_log_finite_terms() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small_config()).unwrap();
    let mut streams = t.streams(synth_pair(8, 16, 1)).unwrap();
    t.run(&mut streams, dir.path()).unwrap();
    assert_eq!(t.step(), 10);
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 11);
    let header: Vec<&str> = lines[0].split(',').collect();
    for name in ["step", "lr", "gan_1", "recon_x2", "recon_s1", "dis_2", "gen_total", "dis_total"] {
        assert!(header.contains(&name), "missing column {name}");
    }
    for row in &lines[1..] {
        for v in row.split(',') {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
    assert!(dir.path().join("ckpt_final.json").exists());
    assert!(dir.path().join("ckpt_final.bin").exists());
}

#[test]
fn hundred_steps_are_bit_reproducible() {
    let a = trained(small_config(), 100);
    let b = trained(small_config(), 100);
    assert_eq!(param_bits(&a), param_bits(&b));
    let other = trained(TrainConfig { seed: 1, ..small_config() }, 100);
    assert_ne!(param_bits(&a), param_bits(&other));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("mid");
    let full = trained(small_config(), 20);

    let mut first = Trainer::new(small_config()).unwrap();
    let images = synth_pair(8, 16, 1);
    let mut streams = first.streams(images.clone()).unwrap();
    for _ in 0..7 {
        first.step_once(&mut streams).unwrap();
    }
    first.save(&stem).unwrap();
    drop(first);

    let mut resumed = Trainer::load(&stem).unwrap();
    assert_eq!(resumed.step(), 7);
    let mut streams = resumed.streams(images).unwrap();
    for _ in 7..20 {
        resumed.step_once(&mut streams).unwrap();
    }
    assert_eq!(param_bits(&full), param_bits(&resumed));
    assert_eq!(full.optimizers(), resumed.optimizers());
    assert_eq!(full.rng().state(), resumed.rng().state());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let t = trained(small_config(), 3);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    t.save(&a).unwrap();
    Trainer::load(&a).unwrap().save(&b).unwrap();
    for ext in ["json", "bin"] {
        let x = std::fs::read(a.with_extension(ext)).unwrap();
        let y = std::fs::read(b.with_extension(ext)).unwrap();
        assert_eq!(x, y, "{ext} differs");
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = trained(small_config(), 1);
    let stem = dir.path().join("c");
    t.save(&stem).unwrap();
    let json_path = stem.with_extension("json");
    let json = std::fs::read_to_string(&json_path).unwrap();

    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let off = v["entries"][1]["offset"].as_u64().unwrap();
    v["entries"][1]["offset"] = (off + 4).into();
    std::fs::write(&json_path, v.to_string()).unwrap();
    assert!(matches!(Trainer::load(&stem), Err(MunitError::Checkpoint { .. })));

    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["version"] = "munit-ckpt-v0".into();
    std::fs::write(&json_path, v.to_string()).unwrap();
    assert!(matches!(Trainer::load(&stem), Err(MunitError::Checkpoint { .. })));

    std::fs::write(&json_path, &json).unwrap();
    let bin = stem.with_extension("bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes.pop();
    std::fs::write(&bin, bytes).unwrap();
    assert!(Trainer::load(&stem).is_err());
}

#[test]
fn updates_stay_inside_their_parameter_group() {
    let t0 = Trainer::new(small_config()).unwrap();
    let t1 = trained(small_config(), 1);
    let groups: BTreeSet<&str> = t0.model().params().entries().iter().map(|e| e.group.as_str()).collect();
    assert_eq!(groups, BTreeSet::from(["dis", "gen"]));
    let opt = t0.optimizers();
    let gen: BTreeSet<_> = opt.gen.ids.iter().collect();
    let dis: BTreeSet<_> = opt.dis.ids.iter().collect();
    assert!(gen.is_disjoint(&dis));
    assert_eq!(gen.len() + dis.len(), t0.model().params().len());
    for (a, b) in t0.model().params().entries().iter().zip(t1.model().params().entries()) {
        assert!(a.tensor.data() != b.tensor.data(), "{} was not updated", a.name);
        assert!(a.name.starts_with(&a.group[..3]));
    }
}

#[test]
fn schedule_values() {
    assert_eq!(lr_schedule(0, 1e-4, 10_000).unwrap(), 1e-4);
    assert_eq!(lr_schedule(9_999, 1e-4, 10_000).unwrap(), 1e-4);
    assert_eq!(lr_schedule(10_000, 1e-4, 10_000).unwrap(), 5e-5);
    assert_eq!(lr_schedule(20_000, 1e-4, 10_000).unwrap(), 2.5e-5);
    assert!(lr_schedule(0, 1e-4, 0).is_err());
}

#[test]
fn non_finite_images_are_rejected() {
    let t = Trainer::new(small_config()).unwrap();
    let [mut a, b] = synth_pair(2, 16, 1);
    a[1].data_mut()[0] = f32::NAN;
    assert!(matches!(t.streams([a, b]), Err(MunitError::Dataset(_))));
}

#[test]
fn overflowing_loss_names_the_term_and_step() {
    let mut t = Trainer::new(small_config()).unwrap();
    let mut streams = t.streams(synth_pair(4, 16, 1)).unwrap();
    t.step_once(&mut streams).unwrap();
    let store = t.model_mut().params_mut();
    let id = store.find("dis1.scale0.score.w").expect("score layer");
    store.get_mut(id).data_mut().iter_mut().for_each(|w| *w = 1e30);
    match t.step_once(&mut streams) {
        Err(MunitError::NonFiniteLoss { term, step }) => {
            assert_eq!(term, "dis_1");
            assert_eq!(step, 1);
        }
        other => panic!("expected a non-finite loss, got {:?}", other.map(|_| ())),
    }
}

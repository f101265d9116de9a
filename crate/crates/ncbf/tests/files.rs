//! File formats: round trips, headers, corruption and version handling.

use ncbf::config::{DatasetConfig, PlantConfig, TrainFile, SCHEMA_VERSION};
use ncbf::files::{
    read_checkpoint, read_csv_columns, read_weights, to_json_bytes, write_checkpoint, write_loss_csv, write_weights,
    FileError, Header,
};
use ncbf_core::sampling::build_epsilon_net;
use ncbf_core::systems::benchmark;
use ncbf_core::trainer::{TrainConfig, Trainer};
use ncbf_core::{Architecture, Nets, Sequential};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn header() -> Header {
    Header::new("sha256:test".into())
}

fn small_state() -> (ncbf_core::trainer::TrainState, Vec<ncbf_core::trainer::EpochRecord>) {
    let bm = benchmark("dc_motor").unwrap();
    let region = &bm.region;
    let ds = ncbf::config::DatasetConfig {
        epsilon: 0.05,
        coarse: true,
        cap: None,
    }
    .build(&Sequential, region)
    .unwrap();
    let mut cfg = TrainConfig::new(Architecture::uniform(vec![3]), 2, 0);
    cfg.batch_size = 4096;
    let mut t = Trainer::new(&Sequential, &ds, &bm.system, region, cfg).unwrap();
    t.run_for(2).unwrap();
    let state = t.state().clone();
    let history = state.history.clone();
    (state, history)
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (state, _) = small_state();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    write_checkpoint(&a, &state, &header()).unwrap();
    let loaded = read_checkpoint(&a).unwrap();
    assert_eq!(loaded.header, header());
    assert_eq!(loaded.body.state, state);
    write_checkpoint(&b, &loaded.body.state, &loaded.header).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn truncated_checkpoint_is_reported_as_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let (state, _) = small_state();
    let path = dir.path().join("ckpt.json");
    write_checkpoint(&path, &state, &header()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match read_checkpoint(&path) {
        Err(FileError::Corrupt { path: p, .. }) => assert_eq!(p, path),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_file_error_names_the_path() {
    let path = Path::new("/nonexistent/dir/ckpt.json");
    let err = read_checkpoint(path).unwrap_err();
    assert!(matches!(err, FileError::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/dir/ckpt.json"));
}

#[test]
fn weights_round_trip_with_digests() {
    let dir = tempfile::tempdir().unwrap();
    let bm = benchmark("pendulum").unwrap();
    let nets = Nets::random(&Architecture::uniform(vec![5, 3]), &bm.system, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let written = write_weights(dir.path(), &nets, &header()).unwrap();
    let (back, read) = read_weights(dir.path()).unwrap();
    assert_eq!(back, nets);
    assert_eq!(written, read);
    assert_eq!(written.len(), 3);
}

#[test]
fn loss_csv_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let (_, history) = small_state();
    let path = dir.path().join("losses.csv");
    write_loss_csv(&path, &header(), &history).unwrap();
    let cols = read_csv_columns(&path).unwrap();
    assert_eq!(cols["epoch"], vec![0.0, 1.0, 2.0]);
    for (r, (l_cbf, eta)) in history.iter().zip(cols["l_cbf"].iter().zip(&cols["eta"])) {
        assert_eq!(r.losses.l_cbf.to_bits(), l_cbf.to_bits());
        assert_eq!(r.losses.eta.to_bits(), eta.to_bits());
    }
}

#[test]
fn shipped_configs_load_and_round_trip() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(root.join("plants")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = PlantConfig::load(&path).unwrap();
        cfg.resolve().unwrap();
        let again: PlantConfig = serde_json::from_slice(&to_json_bytes(&cfg)).unwrap();
        assert_eq!(again, cfg);
    }
    for entry in std::fs::read_dir(root.join("train")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = TrainFile::load(&path).unwrap_or_else(|e| panic!("{e}"));
        cfg.training.validate().unwrap();
        let again: TrainFile = serde_json::from_slice(&to_json_bytes(&cfg)).unwrap();
        assert_eq!(again, cfg);
    }
}

#[test]
fn unknown_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plant.json");
    std::fs::write(&path, format!(r#"{{"schema_version": {}, "benchmark": "dc_motor"}}"#, SCHEMA_VERSION + 1)).unwrap();
    assert!(matches!(PlantConfig::load(&path), Err(FileError::Version { .. })));
    std::fs::write(&path, r#"{"schema_version": 1, "benchmark": "dc_motor", "typo": 3}"#).unwrap();
    assert!(matches!(PlantConfig::load(&path), Err(FileError::Corrupt { .. })));
}

#[test]
fn constant_overrides_mark_the_source() {
    let mut cfg = PlantConfig::for_benchmark("dc_motor");
    cfg.constants = Some(ncbf::config::ConstantsOverride {
        source: "bench measurement".into(),
        l_x: Some(12.5),
        l_u: None,
        l_h: None,
        m_f: None,
        m_h: None,
    });
    let b = cfg.resolve().unwrap();
    assert_eq!(b.system.constants.l_x, 12.5);
    assert_eq!(b.system.constants.source, ncbf_core::systems::ConstantSource::Estimated);
}

#[test]
fn exact_epsilon_net_refuses_coarse_radius_unless_asked() {
    let bm = benchmark("dc_motor").unwrap();
    let exact = DatasetConfig {
        epsilon: 0.05,
        coarse: false,
        cap: None,
    };
    assert!(exact.build(&Sequential, &bm.region).is_err());
    assert!(build_epsilon_net(&bm.region, bm.region.rho() / 2.0, 10).is_err());
}

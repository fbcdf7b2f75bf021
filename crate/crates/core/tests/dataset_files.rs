use proptest::prelude::*;
use sha2::{Digest, Sha256};

use roomgeo::acoustics::PhysicalConstants;
use roomgeo::dataset::{generate, manifest_path, BetaMode, DatasetFile, DatasetSpec, Manifest, Record};

fn small_spec(seed: u64, mode: BetaMode) -> DatasetSpec {
    let mut spec = DatasetSpec {
        n_rooms: 3,
        rirs_per_room: 2,
        mode,
        seed,
        ..DatasetSpec::default()
    };
    spec.sim.constants = PhysicalConstants {
        rir_len: 512,
        ..PhysicalConstants::default()
    };
    spec
}

fn record_strategy(rir_len: usize) -> impl Strategy<Value = Record> {
    let v3 = || prop::array::uniform3(0.5f64..20.0);
    (
        v3(),
        prop::array::uniform6(0.0f64..1.0),
        prop::option::of(0.1f64..2.0),
        v3(),
        v3(),
        prop::collection::vec(-1.0f32..1.0, rir_len),
    )
        .prop_map(|(dims, beta, rt60, source, receiver, samples)| {
            let mut label = dims;
            label.sort_by(f64::total_cmp);
            Record {
                dims,
                label,
                beta,
                rt60_target: rt60.unwrap_or(f64::NAN),
                source,
                receiver,
                samples,
            }
        })
}

fn same_records(a: &DatasetFile, b: &DatasetFile) -> bool {
    // NaN targets in fixed mode defeat `==`, so compare bit patterns.
    let bits = |r: &Record| {
        (
            r.dims.map(f64::to_bits),
            r.label.map(f64::to_bits),
            r.beta.map(f64::to_bits),
            r.rt60_target.to_bits(),
            r.source.map(f64::to_bits),
            r.receiver.map(f64::to_bits),
            r.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
        )
    };
    a.fs == b.fs
        && a.rir_len == b.rir_len
        && a.mode == b.mode
        && a.records.len() == b.records.len()
        && a.records.iter().zip(&b.records).all(|(x, y)| bits(x) == bits(y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bytes_round_trip(
        fixed in any::<bool>(),
        records in (1usize..64).prop_flat_map(|len| prop::collection::vec(record_strategy(len), 0..6).prop_map(move |r| (len, r))),
    ) {
        let (len, records) = records;
        let file = DatasetFile {
            fs: 8000,
            rir_len: len,
            mode: if fixed { BetaMode::FixedBeta } else { BetaMode::VaryingRt60 },
            records,
        };
        let bytes = file.to_bytes().unwrap();
        let back = DatasetFile::from_bytes(&bytes).unwrap();
        prop_assert!(same_records(&file, &back));
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn save_load_and_manifest_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.rird");
    let spec = small_spec(21, BetaMode::VaryingRt60);
    let file = generate(&spec).unwrap();
    let manifest = file.save(&path, Some(&spec)).unwrap();

    let loaded = DatasetFile::load(&path).unwrap();
    assert!(same_records(&file, &loaded));

    let on_disk = std::fs::read(&path).unwrap();
    assert_eq!(manifest.sha256, hex::encode(Sha256::digest(&on_disk)));
    assert_eq!(manifest.record_count, 6);

    let reread = Manifest::load(manifest_path(&path)).unwrap();
    assert_eq!(reread.spec.as_ref(), Some(&spec));
    assert_eq!(reread.sha256, manifest.sha256);
    assert!(!reread.generator.is_empty());

    let mut corrupted = on_disk.clone();
    let last = corrupted.len() - 1;
    corrupted[last] ^= 1;
    assert_ne!(hex::encode(Sha256::digest(&corrupted)), manifest.sha256);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [BetaMode::FixedBeta, BetaMode::VaryingRt60] {
        let a = generate(&small_spec(5, mode)).unwrap().save(dir.path().join("a.rird"), None).unwrap();
        let b = generate(&small_spec(5, mode)).unwrap().save(dir.path().join("b.rird"), None).unwrap();
        let c = generate(&small_spec(6, mode)).unwrap().save(dir.path().join("c.rird"), None).unwrap();
        assert_eq!(a.sha256, b.sha256);
        assert_ne!(a.sha256, c.sha256);
        assert_eq!(
            std::fs::read(dir.path().join("a.rird")).unwrap(),
            std::fs::read(dir.path().join("b.rird")).unwrap()
        );
    }
}

#[test]
fn stored_samples_match_the_simulator() {
    let spec = small_spec(8, BetaMode::VaryingRt60);
    let file = generate(&spec).unwrap();
    for r in &file.records {
        let rir = roomgeo::simulator::simulate_rir(&r.room().unwrap(), &r.pair(), &spec.sim).unwrap();
        let expected: Vec<f32> = rir.samples.iter().map(|&v| v as f32).collect();
        assert_eq!(r.samples, expected);
    }
}

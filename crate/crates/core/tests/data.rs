mod common;

use std::io::Write;
use std::path::{Path, PathBuf};

use ecsim::data::{
    content_hash, load, parse_libsvm, partition, synth_logreg, write_libsvm, Dataset, DatasetSource, LabelMap,
    LoadOptions, ParseOptions, SynthSpec,
};
use ecsim::{Error, Loss, Objective, SparseRow};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn parse_str(s: &str) -> ecsim::Result<Dataset> {
    parse_libsvm(s.as_bytes(), &ParseOptions::default())
}

#[test]
fn parse_single_line() {
    let d = parse_str("+1 1:0.5 3:2.0").unwrap();
    assert_eq!(d.labels, vec![1.0]);
    assert_eq!(d.d, 3);
    assert_eq!(d.rows[0].to_dense(3), vec![0.5, 0.0, 2.0]);
}

#[test]
fn parse_zero_one_labels() {
    let d = parse_str("0 2:1").unwrap();
    assert_eq!(d.labels, vec![-1.0]);
    assert_eq!(d.rows[0].to_dense(d.d), vec![0.0, 1.0]);
}

#[test]
fn empty_input_is_empty_dataset() {
    let d = parse_str("").unwrap();
    assert!(d.is_empty());
    assert_eq!(d.d, 0);
}

#[test]
fn dimension_override() {
    let opts = ParseOptions {
        dim: Some(10),
        ..ParseOptions::default()
    };
    assert_eq!(parse_libsvm("+1 3:1".as_bytes(), &opts).unwrap().d, 10);
    let opts = ParseOptions {
        dim: Some(2),
        ..ParseOptions::default()
    };
    assert!(matches!(
        parse_libsvm("+1 3:1".as_bytes(), &opts),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn valid_fixtures() {
    let small = parse_libsvm(
        std::fs::File::open(fixture("small.libsvm"))
            .map(std::io::BufReader::new)
            .unwrap(),
        &ParseOptions::default(),
    )
    .unwrap();
    assert_eq!(small.len(), 8);
    assert_eq!(small.d, 5);
    assert_eq!(small.labels.iter().filter(|&&y| y > 0.0).count(), 4);
    assert_eq!(small.rows[4].to_dense(5), vec![0.1, 0.2, 0.3, 0.4, 0.5]);

    let zo = std::fs::read_to_string(fixture("zero_one.libsvm")).unwrap();
    let zo = parse_str(&zo).unwrap();
    assert_eq!(zo.labels, vec![1.0, -1.0, 1.0, -1.0]);
    assert_eq!(zo.d, 3);
    assert_eq!(zo.rows[1].to_dense(3), vec![0.0, -1.0, 0.0]);

    let wide = parse_str(&std::fs::read_to_string(fixture("sparse_wide.libsvm")).unwrap()).unwrap();
    assert_eq!(wide.d, 120);
    assert_eq!(wide.rows[1].nnz(), 0);
    assert_eq!(wide.rows[2].indices(), &[0, 59, 118]);
    assert_eq!(wide.rows[2].values(), &[1.0, -4.0, 0.125]);
    assert_eq!(wide.rows[3].values(), &[350.0]);
}

#[test]
fn malformed_fixtures_report_lines() {
    let cases = [
        ("bad_zero_index.libsvm", 1),
        ("bad_descending.libsvm", 2),
        ("bad_missing_colon.libsvm", 2),
        ("bad_value.libsvm", 3),
        ("bad_label.libsvm", 1),
    ];
    for (name, line) in cases {
        let text = std::fs::read_to_string(fixture(name)).unwrap();
        match parse_str(&text) {
            Err(Error::Parse { line: l, message }) => assert_eq!(l, line, "{name}: {message}"),
            other => panic!("{name}: expected parse error, got {other:?}"),
        }
    }
}

#[test]
fn gzip_input_is_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let plain = std::fs::read(fixture("small.libsvm")).unwrap();
    let gz_path = dir.path().join("small.libsvm.gz");
    let mut enc =
        flate2::write::GzEncoder::new(std::fs::File::create(&gz_path).unwrap(), flate2::Compression::default());
    enc.write_all(&plain).unwrap();
    enc.finish().unwrap();
    let a = load(
        &DatasetSource::File(fixture("small.libsvm")),
        2,
        0,
        &LoadOptions::default(),
    )
    .unwrap();
    let b = load(&DatasetSource::File(gz_path), 2, 0, &LoadOptions::default()).unwrap();
    assert_eq!(a.shards, b.shards);
    assert_eq!(a.content_hash, b.content_hash);
    assert_eq!(a.content_hash, content_hash(&plain));
}

#[test]
fn content_hash_is_git_blob_hash() {
    // `printf 'hello\n' | git hash-object --stdin`
    assert_eq!(content_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

#[test]
fn partition_even_split() {
    let data = Dataset {
        rows: (0..100).map(|k| SparseRow::new([(0, k as f64 + 1.0)])).collect(),
        labels: (0..100).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        d: 1,
    };
    let (shards, kept) = partition(&data, 20, 3).unwrap();
    assert_eq!(kept, 100);
    assert_eq!(shards.len(), 20);
    assert!(shards.iter().all(|s| s.len() == 5));
    let mut seen: Vec<(i64, i64)> = shards
        .iter()
        .flat_map(|s| {
            s.rows
                .iter()
                .zip(&s.labels)
                .map(|(r, y)| (r.values()[0] as i64, *y as i64))
        })
        .collect();
    seen.sort();
    let expect: Vec<(i64, i64)> = (0..100).map(|k| (k + 1, if k % 2 == 0 { 1 } else { -1 })).collect();
    assert_eq!(seen, expect);
    let (again, _) = partition(&data, 20, 3).unwrap();
    assert_eq!(shards, again);
    let (other, _) = partition(&data, 20, 4).unwrap();
    assert_ne!(shards, other);
}

#[test]
fn partition_truncates_to_multiple() {
    let data = Dataset {
        rows: vec![SparseRow::default(); 49_702],
        labels: vec![1.0; 49_702],
        d: 1,
    };
    let (shards, kept) = partition(&data, 20, 0).unwrap();
    assert_eq!(kept, 49_700);
    assert!(shards.iter().all(|s| s.len() == 2485));
    assert!(matches!(partition(&data, 0, 0), Err(Error::Usage(_))));
}

#[test]
fn synthetic_noiseless_labels_follow_direction() {
    let data = synth_logreg(&SynthSpec::new(3, 20, 6, 4)).unwrap();
    for s in &data.shards {
        for (r, &y) in s.rows.iter().zip(&s.labels) {
            let score = r.dot(&data.true_direction);
            assert_eq!(y, if score >= 0.0 { 1.0 } else { -1.0 });
        }
    }
    let again = synth_logreg(&SynthSpec::new(3, 20, 6, 4)).unwrap();
    assert_eq!(data.shards, again.shards);
}

fn fit_angle(m: usize, seed: u64) -> f64 {
    let data = synth_logreg(&SynthSpec::new(2, m, 2, seed)).unwrap();
    let u = data.true_direction.clone();
    let obj = Objective::new(data.shards, 2, 1e-3, Loss::Logistic).unwrap();
    let sol = obj.solve_reference(1e-10).unwrap();
    let cos = (sol.x_star[0] * u[0] + sol.x_star[1] * u[1]) / sol.x_star.norm();
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

#[test]
fn synthetic_fit_recovers_direction() {
    // six points leave the direction loose, so judge the typical instance
    let mut angles: Vec<f64> = (0..31).map(|s| fit_angle(3, s)).collect();
    angles.sort_by(f64::total_cmp);
    assert!(angles[15] < 15.0, "median angle {}", angles[15]);
    for seed in 0..10 {
        let a = fit_angle(100, seed);
        assert!(a < 15.0, "seed {seed}: angle {a}");
    }
}

#[test]
fn synth_descriptor_and_data_dir() {
    let src = DatasetSource::parse("synth:m=5,d=3,seed=2,sep=4,heavy=1,scale=3,margin=0.5").unwrap();
    let loaded = load(&src, 2, 0, &LoadOptions::default()).unwrap();
    assert_eq!(loaded.shards.len(), 2);
    assert_eq!(loaded.d, 3);
    assert!(DatasetSource::parse("synth:d=3").is_err());
    assert!(DatasetSource::parse("synth:m=2,d=3,color=1").is_err());

    let missing = DatasetSource::File(PathBuf::from("no_such_file.libsvm"));
    assert!(matches!(missing.resolve(), Err(Error::Io { .. })));
}

#[test]
fn normalize_gives_unit_rows() {
    let opts = LoadOptions {
        normalize: true,
        ..LoadOptions::default()
    };
    let loaded = load(&DatasetSource::File(fixture("small.libsvm")), 4, 0, &opts).unwrap();
    for s in &loaded.shards {
        for r in &s.rows {
            assert!((r.norm_sq() - 1.0).abs() < 1e-12);
        }
    }
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    let row = (
        prop_oneof![Just(1.0), Just(-1.0)],
        prop::collection::btree_map(0usize..30, -1e6f64..1e6, 0..8),
    );
    prop::collection::vec(row, 0..20).prop_map(|rows| {
        let mut data = Dataset::default();
        for (y, entries) in rows {
            data.rows
                .push(SparseRow::new(entries.into_iter().filter(|(_, v)| *v != 0.0)));
            data.labels.push(y);
        }
        data.d = data.rows.iter().map(|r| r.min_dim()).max().unwrap_or(0);
        data
    })
}

proptest! {
    #[test]
    fn libsvm_round_trip(data in dataset_strategy()) {
        let mut buf = Vec::new();
        write_libsvm(&data, &mut buf).unwrap();
        let back = parse_libsvm(&buf[..], &ParseOptions { dim: None, labels: LabelMap::Binary }).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn partition_preserves_multiset(count in 1usize..60, n in 1usize..8, seed in any::<u64>()) {
        prop_assume!(count >= n);
        let data = Dataset {
            rows: (0..count).map(|k| SparseRow::new([(0, k as f64 + 1.0)])).collect(),
            labels: vec![1.0; count],
            d: 1,
        };
        let (shards, kept) = partition(&data, n, seed).unwrap();
        prop_assert_eq!(kept, count / n * n);
        let mut seen: Vec<i64> = shards.iter().flat_map(|s| s.rows.iter().map(|r| r.values()[0] as i64)).collect();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), kept);
    }
}

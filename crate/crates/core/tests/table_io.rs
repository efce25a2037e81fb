use std::collections::BTreeSet;

use rlt_core::synth::{self, SynthSpec};
use rlt_core::table::{self, Column, SplitPlan, Table, TableError};

fn small(rows_per_day: usize, seed: u64) -> Table {
    let spec = SynthSpec {
        n_rows_per_day: rows_per_day,
        seed,
        ..SynthSpec::default()
    };
    synth::generate(&spec).unwrap().0
}

#[test]
fn split_partitions_exactly_the_planned_days() {
    // 1000 rows over days 45..=67; the last day is cut short.
    let full = small(44, 3);
    let data = full.take_rows(&(0..1000).collect::<Vec<_>>());
    assert_eq!(data.n_rows(), 1000);

    let plan = SplitPlan::new(45..=65, 66, Some(67)).unwrap();
    let parts = table::split(&data, &plan).unwrap();
    let days = data.days().unwrap();
    // Brute-force scan oracle.
    let count = |pred: &dyn Fn(u16) -> bool| days.iter().filter(|&&d| pred(d)).count();
    assert_eq!(parts.train.n_rows(), count(&|d| (45..=65).contains(&d)));
    assert_eq!(parts.valid.n_rows(), count(&|d| d == 66));
    assert_eq!(parts.test.n_rows(), count(&|d| d == 67));
    assert_eq!(parts.train.n_rows() + parts.valid.n_rows() + parts.test.n_rows(), 1000);
    let train_days: BTreeSet<u16> = days.iter().copied().filter(|d| *d <= 65).collect();
    assert_eq!(parts.train.day_set(), train_days);
    assert_eq!(parts.valid.day_set(), BTreeSet::from([66]));
    assert_eq!(parts.test.day_set(), BTreeSet::from([67]));

    // Row ids are preserved in order within each part.
    let ids = data.row_ids().unwrap();
    let expected: Vec<&String> = ids
        .iter()
        .zip(days)
        .filter(|(_, &d)| d == 66)
        .map(|(id, _)| id)
        .collect();
    let got: Vec<&String> = parts.valid.row_ids().unwrap().iter().collect();
    assert_eq!(got, expected);
}

#[test]
fn split_rejects_a_validation_day_without_rows() {
    let data = small(20, 1);
    let plan = SplitPlan::new(45..=60, 70, None).unwrap();
    assert!(table::split(&data, &plan).is_err());
}

fn checksums(t: &Table) -> Vec<u64> {
    // FNV-1a over each column's canonical byte encoding.
    fn fnv(bytes: impl Iterator<Item = u8>) -> u64 {
        bytes.fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
        })
    }
    t.iter()
        .map(|(_, col)| match col {
            Column::RowId(v) => fnv(v.iter().flat_map(|s| s.bytes().chain([0]))),
            Column::Day(v) => fnv(v.iter().flat_map(|d| d.to_le_bytes())),
            Column::Categorical(c) => fnv(c.codes.iter().flat_map(|x| x.to_le_bytes()).chain(
                c.dictionary
                    .iter()
                    .flat_map(|s| s.bytes().chain([0]).collect::<Vec<_>>()),
            )),
            Column::Continuous(v) => fnv(v.iter().flat_map(|x| x.to_bits().to_le_bytes())),
            Column::Binary(v) | Column::Label(v) => fnv(v.iter().copied()),
        })
        .collect()
}

#[test]
fn binary_round_trip_preserves_column_checksums_on_100k_rows() {
    let data = small(4348, 11);
    assert!(data.n_rows() >= 100_000);
    let before = checksums(&data);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.rlt");
    table::save_binary(&data, &path).unwrap();
    let back = table::load_binary(&path).unwrap();
    assert_eq!(checksums(&back), before);
    assert_eq!(back.schema(), data.schema());
}

#[test]
fn corrupted_magic_is_rejected() {
    let data = small(10, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.rlt");
    table::save_binary(&data, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(table::load_binary(&path), Err(TableError::BadMagic)));
}

#[test]
fn ingesting_twice_assigns_identical_codes() {
    let (data, truth) = synth::generate(&SynthSpec {
        n_rows_per_day: 30,
        ..SynthSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = synth::write_dataset(&data, &truth, dir.path()).unwrap();
    let schema = table::Schema::from_json_file(&files.schema).unwrap();
    let a = table::ingest_csv_files(&[&files.train, &files.test], &schema).unwrap();
    let b = table::ingest_csv_files(&[&files.train, &files.test], &schema).unwrap();
    assert_eq!(checksums(&a[0]), checksums(&b[0]));
    assert_eq!(checksums(&a[1]), checksums(&b[1]));
    // Train and test share dictionaries, so they concatenate back to the source.
    let joined = Table::concat(&a).unwrap();
    assert_eq!(joined.n_rows(), data.n_rows());
    for name in ["f_2", "f_5"] {
        let (x, y) = (
            joined.require(name).unwrap().as_categorical().unwrap(),
            data.require(name).unwrap().as_categorical().unwrap(),
        );
        assert!((0..data.n_rows()).all(|r| x.token(r) == y.token(r)));
    }
}

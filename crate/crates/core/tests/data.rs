use std::io::Write;

use randprune::data::{
    generate_synthetic, load_csv, prepare, DataError, LabelColumn, SyntheticKind,
};

#[test]
fn csv_file_round_trips_synthetic_data() {
    let data = generate_synthetic(SyntheticKind::Blobs { centers: 3 }, 90, 0.5, 4).unwrap();
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "x0,class,x1").unwrap();
    for (i, &label) in data.labels().iter().enumerate() {
        let row = data.inputs().row(i);
        writeln!(file, "{},{label},{}", row[0], row[1]).unwrap();
    }
    file.flush().unwrap();

    for label in [LabelColumn::Name("class".into()), LabelColumn::Index(1)] {
        let back = load_csv(file.path(), &label).unwrap();
        assert_eq!(back, data);
    }
    let split = prepare(
        &load_csv(file.path(), &LabelColumn::Index(1)).unwrap(),
        0.2,
        1,
    )
    .unwrap();
    assert_eq!(split.train.len() + split.val.len(), 90);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_csv(dir.path().join("absent.csv"), &LabelColumn::Index(0)).unwrap_err();
    assert!(matches!(err, DataError::Io(_)));
}

#[test]
fn ragged_rows_are_rejected() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(file, "a,b,label\n1,2,0\n3,1\n").unwrap();
    file.flush().unwrap();
    assert!(load_csv(file.path(), &LabelColumn::Name("label".into())).is_err());
}

use super::*;

fn d(s: &str) -> NaiveDate {
    parse_date(s).unwrap()
}

fn days(start: &str, n: usize) -> Vec<NaiveDate> {
    let s = d(start);
    (0..n).map(|i| s + chrono::Duration::days(i as i64)).collect()
}

/// One location, one variable equal to the day index.
fn counting_dataset(n: usize, test: Option<(usize, usize)>) -> Dataset {
    let dates = days("2020-01-01", n);
    let test_range = test.map(|(a, b)| DateRange::new(dates[a], dates[b]).unwrap());
    Dataset::new(
        dates,
        vec!["x".into()],
        vec!["v".into()],
        (0..n).map(|i| vec![i as f64]).collect(),
        ("x", "v"),
        test_range,
    )
    .unwrap()
}

fn write_csv(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn window_counts() {
    let ds = counting_dataset(20, None);
    assert_eq!(make_windows(&ds, 10, 1, 0..20).unwrap().len(), 10);

    let ds = counting_dataset(11, None);
    let w = make_windows(&ds, 10, 1, 0..11).unwrap();
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].target, 10.0); // 11th day
    assert_eq!(w[0].target_date, d("2020-01-11"));

    let ds = counting_dataset(15, None);
    assert!(make_windows(&ds, 10, 6, 0..15).unwrap().is_empty());
    assert!(matches!(
        require_windows(&ds, 10, 6, 0..15),
        Err(Error::RangeTooShort { len: 15, needed: 16 })
    ));
    assert!(make_windows(&ds, 10, 1, 0..16).is_err());
}

#[test]
fn window_layout() {
    let ds = counting_dataset(30, None);
    for (t, q) in [(10, 1), (10, 6), (3, 2)] {
        let w = make_windows(&ds, t, q, 5..25).unwrap();
        assert_eq!(w.len(), 20 - t - q + 1);
        for win in &w {
            let start = win.window_id;
            assert_eq!(win.inputs.len(), t);
            assert_eq!(win.target, (start + t - 1 + q) as f64);
            // inputs are z-scored day indices; de-normalize to check order
            for (k, x) in win.inputs.iter().enumerate() {
                let raw = ds.stats.denormalize_value(0, x[0]);
                assert!((raw - (start + k) as f64).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn no_leakage_across_test_boundary() {
    let ds = counting_dataset(60, Some((40, 59)));
    let train = make_windows(&ds, 10, 3, ds.train_range()).unwrap();
    let test_start = ds.test_range.unwrap().start;
    assert!(!train.is_empty());
    assert!(train.iter().all(|w| w.target_date < test_start));
    assert_eq!(train.last().unwrap().target_date, d("2020-02-09")); // day 39

    let test = make_windows(&ds, 10, 3, ds.test_indices().unwrap()).unwrap();
    assert_eq!(test.len(), 20 - 13 + 1);
    assert!(test.iter().all(|w| ds.test_range.unwrap().contains(w.target_date)));
}

#[test]
fn stats_ignore_test_rows() {
    let a = counting_dataset(50, Some((40, 49)));
    let b = counting_dataset(80, Some((40, 79)));
    assert_eq!(a.stats, b.stats);
    assert!((a.stats.mean[0] - 19.5).abs() < 1e-12);
}

#[test]
fn zero_variance_column_maps_to_zero_and_round_trip() {
    let stats = NormStats::fit(&[vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 6.0]]);
    let z = stats.normalize(&[3.0, 4.0]);
    assert_eq!(z[0], 0.0);
    let row = [3.0, -7.25];
    let back = stats.denormalize(&stats.normalize(&row));
    assert!((back[1] - row[1]).abs() < 1e-12);
}

#[test]
fn loads_two_identical_locations() {
    let dir = tempfile::tempdir().unwrap();
    let body = "date,temp,hum\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n2020-01-04,7,8\n2020-01-05,9,10\n";
    let a = write_csv(dir.path(), "a.csv", body);
    let b = write_csv(dir.path(), "b.csv", body);
    let m = Manifest {
        locations: vec![("a".into(), a), ("b".into(), b)],
        target_location: "b".into(),
        target_variable: "hum".into(),
        test_range: None,
        date_range: None,
    };
    let ds = load_dataset(&m, MissingPolicy::Error).unwrap();
    assert_eq!((ds.len(), ds.locations(), ds.vars()), (5, 2, 2));
    assert_eq!(ds.values[1], vec![3.0, 4.0, 3.0, 4.0]);
    assert_eq!(ds.target_col, 3);
}

#[test]
fn disjoint_dates_name_the_offender() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_csv(dir.path(), "a.csv", "date,t\n2020-01-01,1\n2020-01-02,2\n");
    let b = write_csv(dir.path(), "b.csv", "date,t\n2021-03-01,1\n2021-03-02,2\n");
    let m = Manifest {
        locations: vec![("a".into(), a), ("b".into(), b)],
        target_location: "a".into(),
        target_variable: "t".into(),
        test_range: None,
        date_range: None,
    };
    let err = load_dataset(&m, MissingPolicy::Error).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::DateAlignment(_)));
    assert!(msg.contains("2021-03-01") && msg.contains("2020-01-01"), "{msg}");
}

#[test]
fn gaps_in_the_day_axis_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_csv(dir.path(), "a.csv", "date,t\n2020-01-01,1\n2020-01-03,2\n");
    let m = Manifest {
        locations: vec![("a".into(), a)],
        target_location: "a".into(),
        target_variable: "t".into(),
        test_range: None,
        date_range: None,
    };
    assert!(matches!(load_dataset(&m, MissingPolicy::Error), Err(Error::DateAlignment(_))));
}

#[test]
fn missing_value_policies() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_csv(dir.path(), "a.csv", "date,t,u\n2020-01-01,1,5\n2020-01-02,,6\n2020-01-03,3,NA\n");
    let mut m = Manifest {
        locations: vec![("a".into(), a)],
        target_location: "a".into(),
        target_variable: "t".into(),
        test_range: None,
        date_range: None,
    };
    assert!(matches!(load_dataset(&m, MissingPolicy::Error), Err(Error::MissingValue { row: 3, .. })));
    let ds = load_dataset(&m, MissingPolicy::Ffill).unwrap();
    assert_eq!(ds.values, vec![vec![1.0, 5.0], vec![1.0, 6.0], vec![3.0, 6.0]]);

    let lead = write_csv(dir.path(), "lead.csv", "date,t,u\n2020-01-01,,5\n2020-01-02,2,6\n");
    m.locations = vec![("a".into(), lead)];
    assert!(matches!(load_dataset(&m, MissingPolicy::Ffill), Err(Error::MissingValue { row: 2, .. })));
}

#[test]
fn bad_cells_and_unknown_variables() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_csv(dir.path(), "a.csv", "date,t\n2020-01-01,1\n2020-01-02,abc\n");
    let m = Manifest {
        locations: vec![("a".into(), a)],
        target_location: "a".into(),
        target_variable: "t".into(),
        test_range: None,
        date_range: None,
    };
    assert!(matches!(load_dataset(&m, MissingPolicy::Error), Err(Error::BadCell { .. })));

    let good = write_csv(dir.path(), "g.csv", "date,t\n2020-01-01,1\n");
    let other = write_csv(dir.path(), "o.csv", "date,w\n2020-01-01,1\n");
    let m = Manifest {
        locations: vec![("a".into(), good.clone()), ("b".into(), other)],
        target_location: "a".into(),
        target_variable: "t".into(),
        test_range: None,
        date_range: None,
    };
    assert!(matches!(load_dataset(&m, MissingPolicy::Error), Err(Error::UnknownVariable(_))));

    let m = Manifest {
        locations: vec![("a".into(), good)],
        target_location: "a".into(),
        target_variable: "nope".into(),
        test_range: None,
        date_range: None,
    };
    assert!(matches!(load_dataset(&m, MissingPolicy::Error), Err(Error::UnknownVariable(_))));
}

#[test]
fn manifest_parsing() {
    let text = "# cities\nbrussels,data/b.csv\nantwerp, /abs/a.csv\ntarget=brussels:tmax\ntest_start=2013-11-15,test_end=2013-12-15\n";
    let m = Manifest::parse(text, Path::new("/base")).unwrap();
    assert_eq!(m.locations[0], ("brussels".into(), PathBuf::from("/base/data/b.csv")));
    assert_eq!(m.locations[1].1, PathBuf::from("/abs/a.csv"));
    assert_eq!(m.target_variable, "tmax");
    assert_eq!(m.test_range.unwrap().start, d("2013-11-15"));
    let again = Manifest::parse(&m.to_text(Path::new("/base")), Path::new("/base")).unwrap();
    assert_eq!(again, m);

    assert!(Manifest::parse("a,x.csv\n", Path::new(".")).is_err());
    assert!(matches!(
        Manifest::parse("a,x.csv\ntarget=b:t\n", Path::new(".")),
        Err(Error::UnknownLocation(_))
    ));
    assert!(Manifest::parse("a,x.csv\ntarget=a:t\ntest_start=2020-01-01\n", Path::new(".")).is_err());
    assert!(Manifest::parse("a,x.csv\na,y.csv\ntarget=a:t\n", Path::new(".")).is_err());
}

#[test]
fn manifest_order_is_slice_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_csv(dir.path(), "a.csv", "date,t\n2020-01-01,1\n2020-01-02,2\n");
    let b = write_csv(dir.path(), "b.csv", "date,t\n2020-01-01,10\n2020-01-02,20\n");
    let mk = |locs: Vec<(String, PathBuf)>| Manifest {
        locations: locs,
        target_location: "a".into(),
        target_variable: "t".into(),
        test_range: None,
        date_range: None,
    };
    let ab = load_dataset(&mk(vec![("a".into(), a.clone()), ("b".into(), b.clone())]), MissingPolicy::Error).unwrap();
    let ba = load_dataset(&mk(vec![("b".into(), b), ("a".into(), a)]), MissingPolicy::Error).unwrap();
    assert_eq!(ab.values[0], vec![1.0, 10.0]);
    assert_eq!(ba.values[0], vec![10.0, 1.0]);
    assert_eq!(ab.target_col, 0);
    assert_eq!(ba.target_col, 1);
}

#[test]
fn date_range_restricts_loading() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_csv(dir.path(), "a.csv", "date,t\n2020-01-01,1\n2020-01-02,2\n2020-01-03,3\n2020-01-04,4\n");
    let m = Manifest {
        locations: vec![("a".into(), a)],
        target_location: "a".into(),
        target_variable: "t".into(),
        test_range: None,
        date_range: Some(DateRange::parse("2020-01-02,2020-01-03").unwrap()),
    };
    let ds = load_dataset(&m, MissingPolicy::Error).unwrap();
    assert_eq!(ds.values, vec![vec![2.0], vec![3.0]]);
}

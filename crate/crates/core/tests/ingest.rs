use irtlong::data::{ingest_csv, write_csv};
use irtlong::family::RatioFamily;
use irtlong::link::CdfKind;
use irtlong::model::{FixedEffect, ItemSpec, ModelSpec};
use irtlong::Error;

fn spec() -> ModelSpec {
    ModelSpec::new(
        RatioFamily::Cumulative,
        CdfKind::Logistic,
        vec![ItemSpec::new("q1", 4), ItemSpec::new("q2", 4)],
    )
    .with_fixed_effects(vec![FixedEffect::covariate("group"), FixedEffect::time()])
}

const COMPLETE: &str = "\
subject,visit,time,item,response,group
a,0,0,q1,0,0
a,0,0,q2,1,0
a,1,2.5,q1,2,0
a,1,2.5,q2,3,0
b,0,0,q1,1,1
b,0,0,q2,1,1
b,1,2,q1,3,1
b,1,2,q2,0,1
";

#[test]
fn complete_two_by_two_by_two() {
    let (data, report) = ingest_csv(COMPLETE.as_bytes(), &spec()).unwrap();
    assert_eq!(data.n_observations(), 8);
    assert_eq!(report.rows, 8);
    assert_eq!(report.subjects, 2);
    assert_eq!(report.items, 2);
    assert_eq!(report.missing, 0);
    let a = &data.subjects()[0];
    assert_eq!(a.visits[1].time, 2.5);
    assert_eq!(a.visits[1].responses, vec![Some(2), Some(3)]);
    assert_eq!(data.subjects()[1].visits[0].covariates, vec![1.0]);
}

#[test]
fn out_of_range_category_names_item_bounds_and_line() {
    let text = COMPLETE.replace("b,1,2,q1,3,1", "b,1,2,q1,4,1");
    let err = ingest_csv(text.as_bytes(), &spec()).unwrap_err();
    match err {
        Error::Parse { line, message } => {
            assert_eq!(line, 8);
            assert!(
                message.contains("q1") && message.contains("0..=3"),
                "{message}"
            );
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_cell_is_counted_not_fatal() {
    let text = COMPLETE.replace("a,1,2.5,q2,3,0", "a,1,2.5,q2,,0");
    let (data, report) = ingest_csv(text.as_bytes(), &spec()).unwrap();
    assert_eq!(report.missing, 1);
    assert_eq!(data.n_observations(), 7);
    assert_eq!(data.subjects()[0].visits[1].responses[1], None);
}

#[test]
fn duplicate_observation_rejected() {
    let text = format!("{COMPLETE}a,0,0,q1,2,0\n");
    assert!(matches!(
        ingest_csv(text.as_bytes(), &spec()),
        Err(Error::Parse { line: 10, .. })
    ));
}

#[test]
fn malformed_rows_report_their_line() {
    for (bad, line) in [
        ("a,x,0,q1,1,0", 2),
        ("a,0,zero,q1,1,0", 2),
        ("a,0,0,q9,1,0", 2),
        ("a,0,0,q1,one,0", 2),
    ] {
        let text = format!("subject,visit,time,item,response,group\n{bad}\n");
        match ingest_csv(text.as_bytes(), &spec()) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{bad}"),
            other => panic!("{bad}: {other:?}"),
        }
    }
    let text = "subject,visit,time,item,group\na,0,0,q1,0\n";
    assert!(matches!(
        ingest_csv(text.as_bytes(), &spec()),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn reversed_items_are_reflected_and_written_back() {
    let mut s = spec();
    s.items[1].reversed = true;
    let (data, _) = ingest_csv(COMPLETE.as_bytes(), &s).unwrap();
    assert_eq!(
        data.subjects()[0].visits[0].responses,
        vec![Some(0), Some(2)]
    );
    let mut buf = Vec::new();
    write_csv(&data, &s, &mut buf).unwrap();
    let (again, _) = ingest_csv(buf.as_slice(), &s).unwrap();
    assert_eq!(again, data);
}

#[test]
fn row_order_does_not_matter() {
    let mut lines: Vec<&str> = COMPLETE.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    let shuffled = format!("{header}\n{}\n", lines.join("\n"));
    let (a, _) = ingest_csv(COMPLETE.as_bytes(), &spec()).unwrap();
    let (b, _) = ingest_csv(shuffled.as_bytes(), &spec()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.fingerprint(), b.fingerprint());
}

#[test]
fn extra_columns_are_reported() {
    let text = COMPLETE
        .replace("group\n", "group,site\n")
        .replace(",0\n", ",0,x\n")
        .replace(",1\n", ",1,y\n");
    let (_, report) = ingest_csv(text.as_bytes(), &spec()).unwrap();
    assert_eq!(report.ignored_columns, vec!["site".to_string()]);
}

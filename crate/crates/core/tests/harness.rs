use std::collections::BTreeMap;
use std::fs;

use pointkit::api;
use pointkit::eval::{
    emit_report, load_dataset, load_responses, score, EmitOptions, RejectKind, ReportFormat, ScoreOptions,
    ScoreReport, METRIC_ACCURACY, METRIC_ACCURACY_ANY,
};
use pointkit::geometry::{ImageMeta, Mask};
use pointkit::parser::TaskKind;
use pointkit::reward::PresetTable;
use serde_json::{json, Value};

#[test]
fn dataset_with_bitmap_masks_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let dims = ImageMeta::new(8, 8).unwrap();
    let mut bits = vec![false; 64];
    for y in 2..5 {
        for x in 3..6 {
            bits[y * 8 + x] = true;
        }
    }
    Mask::from_bitmap(dims, bits).unwrap().write_bitmap(dir.path().join("m.png")).unwrap();
    let lines = [
        r#"{"id":"a","task":"OFG","width":8,"height":8,"question":"handle","verification":{"kind":"mask","mask":{"width":8,"height":8,"bitmap":"m.png"}}}"#,
        r#"{"id":"b","task":"OFG","width":8,"height":8,"verification":{"kind":"mask","mask":{"width":8,"height":8,"bitmap":"missing.png"}}}"#,
        r#"{"id":"c","task":"OFG","width":8,"height":8,"verification":{"kind":"mask","mask":{"width":8,"height":8,"bitmap":"m.png"}}}"#,
    ];
    fs::write(dir.path().join("d.jsonl"), lines.join("\n")).unwrap();
    fs::write(
        dir.path().join("r.jsonl"),
        [
            json!({"id": "a", "response": "<think>t</think><answer><point>[[4, 3], [7, 7]]</point></answer>"}).to_string(),
            json!({"id": "c", "response": "<think>t</think><answer><point>[[3.5, 2.5]]</point></answer>"}).to_string(),
        ]
        .join("\n"),
    )
    .unwrap();

    let ds = load_dataset(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(ds.records.len(), 2);
    assert_eq!(ds.rejects.len(), 1);
    assert_eq!((ds.rejects[0].line, ds.rejects[0].kind), (2, RejectKind::SchemaViolation));

    let responses = load_responses(dir.path().join("r.jsonl")).unwrap();
    let report = score(&ds.records, &responses, &PresetTable::builtin(), &ScoreOptions::default()).unwrap();
    let acc = report.row(TaskKind::OFG, METRIC_ACCURACY).unwrap();
    let any = report.row(TaskKind::OFG, METRIC_ACCURACY_ANY).unwrap();
    // record a: one of two points inside (mean 0.5, any 1); record c: inside
    assert_eq!(acc.value, 0.75);
    assert_eq!(any.value, 1.0);

    // aggregates are recomputable from the per-record breakdown
    assert_eq!(ScoreReport::aggregate(&report.records), report.rows);

    let out = dir.path().join("report.md");
    emit_report(&report, EmitOptions::new(ReportFormat::Markdown), &out).unwrap();
    let md = fs::read_to_string(&out).unwrap();
    assert!(md.contains("| OFG | accuracy | 75.00 | 2 | 0 |"), "{md}");

    let err = emit_report(&report, EmitOptions::new(ReportFormat::Csv), dir.path().join("no/such/dir/r.csv"));
    assert_eq!(err.unwrap_err().code(), "Unwritable");
}

#[test]
fn missing_responses_lower_accuracy() {
    let line = r#"{"id":"ID","task":"REG","width":10,"height":10,"verification":{"kind":"mask","mask":{"width":10,"height":10,"rle":[0,100]}}}"#;
    let text: Vec<String> = (0..4).map(|i| line.replace("ID", &i.to_string())).collect();
    let ds = pointkit::eval::parse_dataset(&text.join("\n"), None).unwrap();
    let mut responses = BTreeMap::new();
    responses.insert("0".to_string(), "<think>t</think><answer><point>[[1, 1]]</point></answer>".to_string());
    let report = score(&ds.records, &responses, &PresetTable::builtin(), &ScoreOptions::default()).unwrap();
    let row = report.row(TaskKind::REG, METRIC_ACCURACY).unwrap();
    assert_eq!((row.value, row.n, row.format_failures), (0.25, 4, 3));
}

fn batch_inputs(i: usize) -> (String, &'static str, &'static str) {
    let raw = format!("<think>t</think><answer><point>[[{}, {}]]</point></answer>", i % 50, (i * 7) % 50);
    let verification = r#"{"kind":"mask","mask":{"width":50,"height":50,"boxes":[[10,10,30,30]]}}"#;
    let preset = r#"{"task":"RRG","weights":{"format":0.1,"mask":0.6,"dis":0.3}}"#;
    (raw, verification, preset)
}

#[test]
fn api_calls_are_stateless() {
    let singles: Vec<String> = (0..1000)
        .map(|i| {
            let (r, v, p) = batch_inputs(i);
            api::score_response(&r, v, p).unwrap()
        })
        .collect();
    let again: Vec<String> = (0..1000)
        .rev()
        .map(|i| {
            let (r, v, p) = batch_inputs(i);
            api::score_response(&r, v, p).unwrap()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    assert_eq!(singles, again);
}

#[test]
fn api_is_reentrant_across_threads() {
    let expected: Vec<String> = (0..200)
        .map(|i| {
            let (r, v, p) = batch_inputs(i);
            api::score_response(&r, v, p).unwrap()
        })
        .collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                s.spawn(|| {
                    (0..200)
                        .map(|i| {
                            let (r, v, p) = batch_inputs(i);
                            api::score_response(&r, v, p).unwrap()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}

#[test]
fn api_results_match_direct_kernel_calls() {
    let v: Value = serde_json::from_str(&api::group_advantages("[1,0,0,0]", None).unwrap()).unwrap();
    let direct = pointkit::grpo::group_advantages(&[1.0, 0.0, 0.0, 0.0], 1e-8).unwrap();
    let via: Vec<f64> = serde_json::from_value(v).unwrap();
    assert_eq!(
        via.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        direct.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    let a = r#"{"points":[[0,0],[10,0]],"width":20,"height":20}"#;
    let b = r#"{"points":[[0,0],[0,10]],"width":20,"height":20}"#;
    assert_eq!(api::trace_rmse(a, b).unwrap(), 10.0);
    let err: Value = serde_json::from_str(&api::dispatch("trace_rmse", r#"{"a":{"points":[],"width":1,"height":1},"b":"x"}"#)).unwrap();
    assert_eq!(err["error"]["code"], "BadRequest");
}

mod common;

use std::collections::BTreeMap;

use common::*;
use rethink_core::domain::{Benchmark, MockModelSpec};
use rethink_core::metrics::round_report;
use rethink_core::orchestrator::run_benchmark;
use rethink_core::report::{render_report, write_report, ANALYSIS_JSON, PLOT_DATA, REPORT_CSV, REPORT_MARKDOWN};
use rethink_core::store::{Manifest, RunStore};
use rethink_core::verification::Verifier;

fn spec() -> MockModelSpec {
    MockModelSpec::new(0.55, 0.9, 0.35, 5).unwrap()
}

async fn finished_store(dir: &std::path::Path, rounds: u32) -> RunStore {
    let tasks = mixed_tasks();
    let mut store = create_store(dir, &tasks, &spec(), &params(4, rounds));
    run_benchmark(&mut store, &CountingBackend::new(spec()), &Verifier::default(), 8).await.unwrap();
    store
}

fn csv_values(csv: &str) -> BTreeMap<(String, String, String), f64> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ((f[0].to_string(), f[1].to_string(), f[2].to_string()), f[3].parse().unwrap())
        })
        .collect()
}

#[tokio::test]
async fn rendering_is_pure_and_files_match() {
    let dir = tempfile::tempdir().unwrap();
    let store = finished_store(dir.path(), 3).await;
    let a = render_report(&store).unwrap();
    let reopened = RunStore::open(dir.path()).unwrap();
    assert_eq!(render_report(&reopened).unwrap(), a);
    let (written, reports) = write_report(&store).unwrap();
    assert_eq!(written, a);
    assert_eq!(std::fs::read_to_string(reports.join(REPORT_MARKDOWN)).unwrap(), a.markdown);
    assert_eq!(std::fs::read_to_string(reports.join(REPORT_CSV)).unwrap(), a.csv);
    assert_eq!(std::fs::read_to_string(reports.join(PLOT_DATA)).unwrap(), a.plot_data);
    assert_eq!(std::fs::read_to_string(reports.join(ANALYSIS_JSON)).unwrap(), a.analysis);
    assert!(!a.markdown.contains("Warning"));
    serde_json::from_str::<serde_json::Value>(&a.plot_data).unwrap();
    let analysis: serde_json::Value = serde_json::from_str(&a.analysis).unwrap();
    assert_eq!(analysis["analysis"]["pairs"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn markdown_numbers_are_rounded_csv_values() {
    let dir = tempfile::tempdir().unwrap();
    let store = finished_store(dir.path(), 2).await;
    let bundle = render_report(&store).unwrap();
    let csv = csv_values(&bundle.csv);
    let benchmarks = [Benchmark::Aime24, Benchmark::Math500, Benchmark::GpqaDiamond];
    let table: Vec<&str> = bundle
        .markdown
        .lines()
        .skip_while(|l| !l.starts_with("## pass@1"))
        .filter(|l| l.starts_with("| 1 ") || l.starts_with("| 2 "))
        .take(2)
        .collect();
    assert_eq!(table.len(), 2);
    for row in table {
        let cells: Vec<&str> = row.trim_matches('|').split('|').map(str::trim).collect();
        let round = cells[0];
        for (i, b) in benchmarks.iter().enumerate() {
            let v = csv[&("pass_at_1".to_string(), b.to_string(), round.to_string())];
            assert_eq!(cells[i + 1], format!("{:.1}", round_report(&v)));
        }
        let avg = csv[&("pass_at_1".to_string(), "average".to_string(), round.to_string())];
        assert_eq!(cells[4], format!("{:.1}", round_report(&avg)));
    }
    // Half-way values round away from zero.
    assert_eq!(format!("{:.1}", round_report(&77.95f64)), "78.0");
    assert_eq!(format!("{:.1}", round_report(&79.15f64)), "79.2");
}

#[tokio::test]
async fn single_round_has_empty_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let store = finished_store(dir.path(), 1).await;
    let bundle = render_report(&store).unwrap();
    let analysis = bundle.markdown.split("## Analysis").nth(1).unwrap();
    assert!(!analysis.contains("Trajector"));
    assert!(!analysis.contains('|'));
    let json: serde_json::Value = serde_json::from_str(&bundle.analysis).unwrap();
    assert!(json["analysis"]["pairs"].as_array().unwrap().is_empty());
    assert!(json["analysis"]["transition_fit"].is_null());
}

#[tokio::test]
async fn incomplete_store_gets_warning_banner() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = integer_tasks(3);
    let p = params(2, 3);
    let manifest = Manifest::new(&tasks, params_map(&tasks, &p), rethink_core::backend::BackendDescriptor::Mock { spec: spec() }, None);
    let mut store = RunStore::create(dir.path(), manifest, tasks).unwrap();
    run_benchmark(&mut store, &CountingBackend::fail_after(spec(), 10), &Verifier::default(), 2).await.unwrap();
    let bundle = render_report(&store).unwrap();
    assert!(bundle.markdown.contains("> **Warning:** incomplete run. 10 of 18 records"));
    assert!(bundle.markdown.contains("| 1 |"));
}

use dxdistill_wasm::{graph_nodes, link_and_measure, match_tests, prune_trajectory};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn chained_ungrounded_shifts_are_pruned_in_one_pass() {
    let v = parse(prune_trajectory(r#"{"dtc": [2, 1, 1, 0], "rac": [[5, 1], [5, 1], [0, 0]], "tau": 3}"#));
    assert_eq!(v["after_dtc"]["retained_turns"], serde_json::json!([1, 2, 3, 4]));
    assert_eq!(v["outcome"]["retained_turns"], serde_json::json!([3, 4]));
    assert_eq!(v["rac_values"], serde_json::json!([5.0, 5.0, 0.0]));
}

#[test]
fn a_worse_ending_is_discarded() {
    let v = parse(prune_trajectory(r#"{"dtc": [1, 2, 3], "tau": 3}"#));
    assert_eq!(v["outcome"]["decision"], "discarded");
}

#[test]
fn bad_prune_input_is_an_error_object() {
    assert!(parse(prune_trajectory("{}"))["error"].is_string());
    assert!(parse(prune_trajectory(r#"{"dtc": [], "tau": 3}"#))["error"].is_string());
    assert!(parse(prune_trajectory(r#"{"dtc": [1], "rac": [[1, 1]], "tau": 3}"#))["error"].is_string());
}

#[test]
fn links_and_measures_on_the_bundled_graphs() {
    let v = parse(link_and_measure("disease", "iron-deficiency anaemia", "Iron deficiency anemia"));
    assert_eq!(v["hops"], 0);
    let v = parse(link_and_measure("disease", "Gout", "Pulmonary embolism"));
    assert_eq!(v["hops"], "unreachable");
    let v = parse(link_and_measure("test_disease", "CBC", "zzz nothing"));
    assert_eq!(v["a"]["name"], "Complete blood count");
    assert!(v["hops"].is_null());
    assert!(parse(link_and_measure("other", "a", "b"))["error"].is_string());
    assert!(parse(graph_nodes("disease")).as_array().unwrap().len() > 10);
}

#[test]
fn matching_follows_the_equivalence_and_compound_rules() {
    let v = parse(match_tests("CBC\nMRI Brain\nChest CT", "Complete Blood Count\nMRI Brain T1\nTSH, Free T4"));
    assert_eq!(v["report"]["gt_uncovered"], serde_json::json!(["TSH, Free T4"]));
    assert!((v["precision"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((v["recall"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!(parse(match_tests("CBC", "  \n"))["error"].is_string());
}

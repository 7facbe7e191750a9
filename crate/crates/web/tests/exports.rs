use dfmnmf_web::{explore_joint_diag, Demo};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn demo_separates_and_exposes_signals() {
    let mut demo = Demo::new(3, 1.0, 0).unwrap();
    assert_eq!(demo.n_sources(), 3);
    assert!(demo.estimate(0).is_empty());
    assert!(demo.spectrogram("estimate", 0).is_err());

    let summary = parse(&demo.separate("distributed", 5, 0).unwrap());
    assert_eq!(summary["iterations"], 5);
    assert_eq!(summary["channels"], 12);
    assert_eq!(summary["cost_trace"].as_array().unwrap().len(), 6);
    assert!(summary["mean_improvement_db"].as_f64().unwrap().is_finite());

    let n = demo.mixture().len();
    assert_eq!(demo.image(2).len(), n);
    assert_eq!(demo.estimate(2).len(), n);
    assert!(demo.image(3).is_empty());
    let spec = demo.spectrogram("estimate", 1).unwrap();
    assert_eq!(spec.len() % demo.n_bins(), 0);
    assert!(demo.spectrogram("nothing", 0).is_err());
}

#[test]
fn demo_single_uses_first_subarray() {
    let mut demo = Demo::new(3, 1.0, 1).unwrap();
    let summary = parse(&demo.separate("single", 2, 0).unwrap());
    assert_eq!(summary["channels"], 4);
    assert!(demo.separate("bogus", 2, 0).is_err());
    assert!(Demo::new(4, 1.0, 0).is_err());
}

#[test]
fn explorer_follows_the_weakest_block() {
    let ok = parse(&explore_joint_diag("3,2,3", "", 4, 0).unwrap());
    assert_eq!(ok["channels"], 8);
    assert_eq!(ok["assembled_diagonalizable"], true);

    let bad = parse(&explore_joint_diag("3,2,3", "1", 4, 0).unwrap());
    let verdicts: Vec<bool> = bad["blocks"].as_array().unwrap().iter().map(|b| b["diagonalizable"].as_bool().unwrap()).collect();
    assert_eq!(verdicts, vec![true, false, true]);
    assert_eq!(bad["assembled_diagonalizable"], false);

    assert!(explore_joint_diag("3,2", "2", 4, 0).is_err());
    assert!(explore_joint_diag("3,a", "", 4, 0).is_err());
    assert!(explore_joint_diag("3,2", "", 0, 0).is_err());
}

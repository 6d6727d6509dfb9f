use specmarket::verify::{run, VerifyOptions};

fn only(ids: &[u32]) -> VerifyOptions {
    VerifyOptions {
        only: Some(ids.to_vec()),
        ..VerifyOptions::default()
    }
}

#[test]
fn biased_solver_is_caught() {
    let mut opts = only(&[1, 12]);
    opts.theta_bias = 0.01;
    let report = run(&opts).unwrap();
    // the biased θ no longer clears the market either
    assert_eq!(report.failed(), vec![1, 12]);
    assert!(report.to_string().contains("failed criteria: 1, 12"));
}

#[test]
fn reports_repeat_exactly() {
    let opts = only(&[2, 4, 13]);
    let a = run(&opts).unwrap();
    let b = run(&opts).unwrap();
    assert!(a.passed(), "{a}");
    assert_eq!(a.to_string(), b.to_string());
}

#[test]
fn reduced_paths_still_run() {
    let mut opts = only(&[11]);
    opts.paths = 5_000;
    let report = run(&opts).unwrap();
    assert_eq!(report.outcomes.len(), 1);
    assert!(report.outcomes[0].detail.contains("agent 1"));
}

use dvpdsim_core::acceptance::{run_all, AcceptanceSetup};

#[test]
fn all_criteria_pass() {
    let results = run_all(&AcceptanceSetup::reference());
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn corrupted_anchors_fail_calibration_check() {
    let mut setup = AcceptanceSetup::reference();
    setup.anchors.points[1].efficiency = 0.80;
    let results = run_all(&setup);
    let c2 = results.iter().find(|r| r.id == "2").unwrap();
    println!("{c2}");
    assert!(!c2.passed);
    assert!(results.iter().find(|r| r.id == "1").unwrap().passed);
}

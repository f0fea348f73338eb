mod support;

use moew::driver::{same_outcome, select_best, Experiment, RepeatOutcome};

fn run(jobs: usize) -> Vec<RepeatOutcome> {
    Experiment::new(support::tiny_toy_config(2, jobs)).unwrap().run().unwrap()
}

fn assert_same(a: &[RepeatOutcome], b: &[RepeatOutcome]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.methods.len(), y.methods.len());
        for (m, n) in x.methods.iter().zip(&y.methods) {
            assert_eq!(m.records.len(), n.records.len());
            for (r, s) in m.records.iter().zip(&n.records) {
                assert!(same_outcome(r, s), "{r:?} vs {s:?}");
            }
            assert_eq!(m.best_params, n.best_params);
        }
    }
}

#[test]
fn concurrent_matches_sequential() {
    assert_same(&run(1), &run(4));
}

#[test]
fn reruns_are_bitwise_identical() {
    assert_same(&run(2), &run(2));
}

#[test]
fn every_method_selects_its_own_best() {
    for o in run(1) {
        assert_eq!(o.methods.len(), 3);
        for m in &o.methods {
            assert_eq!(select_best(&m.records), Some(m.best));
        }
        // The first candidate of the search is always the importance-only weighting.
        let search = &o.methods[0];
        assert!(search.records[0].alpha.iter().all(|&a| a == 0.0));
        assert!(search.best_record().val_metric >= search.records[0].val_metric);
        assert!(search.noise_variance.unwrap() >= 0.0);
    }
}

use entrpo::metrics::{run_verify, verify_instance};
use entrpo::tabular::{self, TabularPolicy};

#[test]
fn hundred_instances_pass_every_check() {
    let report = run_verify(100, 7).unwrap();
    assert!(report.all_passed(), "{report}");
    assert_eq!(report.performance_difference.checked, 300);
    assert_eq!(report.m_identity.checked, 600);
    assert_eq!(report.policy_iteration.checked, 20 * 3 * 10);
}

#[test]
fn instances_respect_size_limits() {
    for i in 0..50 {
        let (mdp, pairs) = verify_instance(3, i);
        assert!((2..=5).contains(&mdp.n_states()));
        assert!((2..=3).contains(&mdp.n_actions()));
        assert_eq!(pairs.len(), 3);
    }
}

#[test]
fn identical_policies_give_zero_bound_terms() {
    let (mdp, pairs) = verify_instance(1, 0);
    let pi = &pairs[0].0;
    let check = tabular::check_lower_bound(&mdp, pi, pi).unwrap();
    assert_eq!(check.max_kl, 0.0);
    assert!((check.lhs - check.rhs).abs() < 1e-10);
}

#[test]
fn policy_iteration_never_decreases_eta_from_uniform() {
    for i in 0..10 {
        let (mdp, _) = verify_instance(11, i);
        for c in [0.0, 0.5, 1.0, 10.0, 100.0] {
            let mut pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
            let mut eta = tabular::eta(&mdp, &pi).unwrap();
            for _ in 0..10 {
                pi = tabular::exact_policy_iteration_step(&mdp, &pi, c).unwrap();
                let next = tabular::eta(&mdp, &pi).unwrap();
                assert!(next >= eta - 1e-12, "instance {i}, C={c}: {eta} -> {next}");
                eta = next;
            }
        }
    }
}

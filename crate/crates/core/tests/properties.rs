mod common;

use proptest::prelude::*;
use wire::analytics::{pool, reconstruct_counts, Counts, ResolutionProfile};
use wire::compiler::{budget_from_sizes, compile};
use wire::evaluation::Regime;
use wire::pyrule::parse_rule;
use wire::registry::{builtin_registry, project_surface};
use wire::triage::solver::{brute_force, solve, Domains, SolveOutcome, SolverLimits};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn valid_programs_compile_one_clause_per_call((src, leaves) in common::program()) {
        let reg = builtin_registry();
        let ast = parse_rule(&src, &reg).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
        let set = compile(&ast, &reg).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
        prop_assert_eq!(set.clauses.len(), leaves);
        for c in &set.clauses {
            let again = project_surface(&c.primitive, &c.args, &reg).unwrap();
            prop_assert_eq!(&again, &c.surface);
        }
    }

    #[test]
    fn illegal_constructs_are_rejected((src, stmt) in common::illegal_program()) {
        let reg = builtin_registry();
        match parse_rule(&src, &reg) {
            Ok(_) => prop_assert!(false, "accepted `{}`:\n{}", stmt, src),
            Err(e) => prop_assert!(e.rejected().is_some(), "`{}` gave {}:\n{}", stmt, e, src),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn solver_agrees_with_enumeration(gamma in common::collision_query()) {
        let domains = Domains::from_registry(&builtin_registry());
        let expected = brute_force(&gamma, &domains);
        match solve(&gamma, &domains, &SolverLimits::default()) {
            SolveOutcome::Sat(env) => {
                prop_assert!(expected, "solver SAT, enumeration UNSAT: {:?}", gamma);
                prop_assert_eq!(gamma.eval(&env), Some(true));
            }
            SolveOutcome::Unsat => prop_assert!(!expected, "solver UNSAT, enumeration SAT: {:?}", gamma),
            SolveOutcome::Undecided(r) => prop_assert!(false, "undecided: {}", r),
        }
    }
}

proptest! {
    #[test]
    fn budget_matches_pair_enumeration(sizes in prop::collection::vec(0u64..8, 0..12)) {
        let owners: Vec<usize> = sizes.iter().enumerate().flat_map(|(i, &n)| std::iter::repeat_n(i, n as usize)).collect();
        let mut pairs = 0u64;
        for i in 0..owners.len() {
            for j in i + 1..owners.len() {
                pairs += u64::from(owners[i] != owners[j]);
            }
        }
        prop_assert_eq!(budget_from_sizes(&sizes), pairs);
    }

    #[test]
    fn pooling_is_count_linear(parts in prop::collection::vec((0u64..50, 0u64..50, 0u64..50, 0u64..50), 1..6)) {
        let profiles: Vec<ResolutionProfile> = parts
            .iter()
            .map(|&(n11, n10, n01, n00)| ResolutionProfile::from_counts("p", [Regime::Pot].into(), Counts { n11, n10, n01, n00 }))
            .collect();
        let pooled = pool(&profiles, "all", false).unwrap();
        let sum = parts.iter().fold(Counts::default(), |acc, &(n11, n10, n01, n00)| {
            Counts { n11: acc.n11 + n11, n10: acc.n10 + n10, n01: acc.n01 + n01, n00: acc.n00 + n00 }
        });
        prop_assert_eq!(pooled.n, sum);
        prop_assert_eq!(pooled.g, sum.total());
        if let Some(q) = pooled.q {
            let cells = q.cells();
            prop_assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let nj = pooled.non_joint.unwrap();
            let d = pooled.delta_src.unwrap();
            prop_assert!((0.0..=1.0).contains(&nj));
            prop_assert!(d.abs() <= nj + 1e-12);
            prop_assert!((nj - (1.0 - cells[0])).abs() < 1e-12);
        } else {
            prop_assert_eq!(sum.total(), 0);
        }
    }

    #[test]
    fn reconstruction_conserves_counts(g in 1u64..20_000, w in prop::collection::vec(1u32..1000, 4)) {
        let total: u32 = w.iter().sum();
        let q: [f64; 4] = std::array::from_fn(|i| (f64::from(w[i]) * 1000.0 / f64::from(total)).round() / 10.0);
        let c = reconstruct_counts(g, q);
        prop_assert_eq!(c.total(), g);
        let got = [c.n11, c.n10, c.n01, c.n00];
        for i in 0..4 {
            let exact = q[i] / 100.0 * g as f64;
            prop_assert!((got[i] as f64 - exact).abs() <= 1.0 + g as f64 * 0.002);
        }
    }
}

proptest! {
    #[test]
    fn witness_cascade_discipline(
        script in prop::collection::vec(prop::array::uniform3(any::<bool>()), 1..20),
        corpus in prop::collection::vec("[a-z ]{3,30}", 0..8),
        max_witnesses in 1usize..12,
        attempts in 0usize..6,
    ) {
        use wire::witness::{realize, CorpusRetrieval, StubSynthesis, WitnessAdapters, WitnessBudget};
        let (triage, clauses) = common::triage_source(common::IMAGE_POLICY);
        let mut lines = corpus.join("\n");
        lines.push_str("\nplease make an image request for a poster\n");
        let retrieval = CorpusRetrieval::from_text(&lines);
        let verifier = common::ScriptedVerifier { script, next: Default::default() };
        let adapters = WitnessAdapters { retrieval: &retrieval, synthesis: &StubSynthesis, verifier: &verifier };
        let budget = WitnessBudget { max_witnesses, synthesis_attempts: attempts, ..WitnessBudget::default() };
        let (summary, log) = realize("p", &triage.candidates[0], &clauses, &Default::default(), &adapters, &budget);
        common::check_witness_log(&log, max_witnesses).map_err(TestCaseError::fail)?;
        prop_assert_eq!(summary.accepted, log.iter().filter(|r| r.accepted).count());
        prop_assert_eq!(summary.attempts, log.len());
    }
}

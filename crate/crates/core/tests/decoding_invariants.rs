use capcal::backend::SimulatedLm;
use capcal::baselines::{psc_rerank, PscConfig};
use capcal::calibration::{
    decode, sliding_window_rerank, CalibrationConfig, LlmRanker, Method, PriorMode, WindowConfig,
};
use capcal::prompting::{PlaceholderKind, PlaceholderPolicy, PromptTemplate};
use capcal::{validate_permutation, IdentifierScheme, Query, RerankTask};
use proptest::prelude::*;

const KINDS: [PlaceholderKind; 8] = [
    PlaceholderKind::FixedString,
    PlaceholderKind::Passage1Copy,
    PlaceholderKind::SingleSpace,
    PlaceholderKind::SpaceX20,
    PlaceholderKind::RandomX20,
    PlaceholderKind::SpaceLen1,
    PlaceholderKind::RandomLen1,
    PlaceholderKind::SpaceLenI,
];

#[derive(Debug, Clone)]
struct Case {
    relevance: Vec<f64>,
    bias: Vec<f64>,
    temperature: f64,
    scheme: IdentifierScheme,
    kind: usize,
    beta: f64,
    lockstep: bool,
}

fn case(max_n: usize) -> impl Strategy<Value = Case> {
    (2..=max_n).prop_flat_map(|n| {
        (
            proptest::collection::vec(-3.0..3.0f64, n),
            proptest::collection::vec(-3.0..3.0f64, 0..=n),
            0.2..3.0f64,
            any::<bool>(),
            0..KINDS.len(),
            0.0..4.0f64,
            any::<bool>(),
        )
            .prop_map(|(relevance, bias, temperature, alpha, kind, beta, lockstep)| Case {
                relevance,
                bias,
                temperature,
                scheme: if alpha {
                    IdentifierScheme::Alphabetic
                } else {
                    IdentifierScheme::Numeric
                },
                kind,
                beta,
                lockstep,
            })
    })
}

fn build(c: &Case) -> (RerankTask, SimulatedLm) {
    let task = RerankTask::with_cap(
        Query::new("q", "a test query").unwrap(),
        (0..c.relevance.len())
            .map(|i| (format!("d{i}"), format!("passage number {i}")))
            .collect(),
        c.scheme,
        PlaceholderPolicy::of_kind(KINDS[c.kind]),
        usize::MAX,
    )
    .unwrap();
    let mut lm = SimulatedLm::new(c.bias.clone(), c.temperature).with_task(&task);
    for (i, r) in c.relevance.iter().enumerate() {
        lm = lm.with_relevance("q", &format!("d{i}"), *r);
    }
    (task, lm)
}

fn capcal(c: &Case) -> Method {
    let mut cfg = CalibrationConfig::with_beta(c.beta);
    if !c.lockstep {
        cfg.prior_mode = PriorMode::StaticRenormalized;
    }
    Method::CapCal(cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn every_decoder_emits_a_permutation(c in case(12)) {
        let (task, lm) = build(&c);
        let tpl = PromptTemplate::default();
        let n = task.len();
        for method in [Method::Base, capcal(&c)] {
            let out = decode(&lm, &task, &tpl, &method).unwrap();
            prop_assert!(validate_permutation(&out.permutation, n));
            prop_assert_eq!(out.trace.len(), n);
            for (k, step) in out.trace.iter().enumerate() {
                prop_assert_eq!(step.step_index, k + 1);
                prop_assert_eq!(step.remaining.len(), n - k);
                prop_assert!(step.remaining.contains(&step.chosen));
                prop_assert!(step.entropy_h >= 0.0);
                prop_assert!(step.entropy_h <= (step.remaining.len() as f64).ln() + 1e-12);
                let mass: f64 = step.p_main.values().sum();
                prop_assert!(mass <= 1.0 + 1e-9);
            }
        }
        let method = capcal(&c);
        let ranker = LlmRanker { backend: &lm, template: &tpl, method: &method };
        let psc = psc_rerank(&task, &PscConfig { k_permutations: 3, ..PscConfig::default() }, &ranker).unwrap();
        prop_assert!(validate_permutation(&psc.permutation, n));
    }

    #[test]
    fn zero_beta_matches_base(c in case(10)) {
        let (task, lm) = build(&c);
        let tpl = PromptTemplate::default();
        let base = decode(&lm, &task, &tpl, &Method::Base).unwrap();
        let zero = decode(&lm, &task, &tpl, &Method::CapCal(CalibrationConfig::with_beta(0.0))).unwrap();
        prop_assert_eq!(base.permutation, zero.permutation);
    }

    #[test]
    fn unbiased_model_is_left_alone(mut c in case(10)) {
        // With no position bias the content-free prompt is uniform, so the
        // correction vanishes.
        c.bias.clear();
        let (task, lm) = build(&c);
        let tpl = PromptTemplate::default();
        let base = decode(&lm, &task, &tpl, &Method::Base).unwrap();
        let cal = decode(&lm, &task, &tpl, &capcal(&c)).unwrap();
        prop_assert_eq!(base.permutation, cal.permutation);
    }

    #[test]
    fn windows_cover_long_lists(c in case(40), size in 2usize..8, stride_frac in 0.1..0.95f64) {
        let (task, lm) = build(&c);
        let stride = ((size as f64 * stride_frac) as usize).clamp(1, size - 1);
        let window = WindowConfig { size, stride, cap: 20 };
        let method = capcal(&c);
        let ranker = LlmRanker { backend: &lm, template: &PromptTemplate::default(), method: &method };
        let perm = sliding_window_rerank(&task, &window, &ranker).unwrap();
        prop_assert!(validate_permutation(&perm, task.len()));
    }
}

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spatial_core::data::{consistency_check, Consistency};
use spatial_core::eval::{run_episode, EpisodeLimits, OracleAgent, DEFAULT_MARGIN};
use spatial_core::grammar::{check_tag_balance, parse_trajectory, render_trajectory, GrammarConfig, NormalizedAnswer, DEFAULT_TAGS};
use spatial_core::reward::{
    combine, correctness_reward, format_reward_default, group_advantages, RewardParts, RewardWeights,
};
use spatial_core::samples::{random_reward_group, random_tag_soup, random_trajectory};
use spatial_core::skills::{execute_skill, SkillStatus, Toolbox};
use spatial_core::grammar::parse_action_call;
use spatial_core::world::{generate_qa, generate_scene, SceneParams, SceneStore, TaskType};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn render_then_parse_is_identity(seed in any::<u64>()) {
        let cfg = GrammarConfig::default();
        let t = random_trajectory(&mut rng(seed));
        let text = render_trajectory(&t, &cfg);
        let back = parse_trajectory(&text, &cfg).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(render_trajectory(&back, &cfg), text);
    }

    #[test]
    fn format_reward_tracks_balance(seed in any::<u64>()) {
        let soup = random_tag_soup(&mut rng(seed));
        let report = check_tag_balance(&soup.text, &DEFAULT_TAGS);
        prop_assert_eq!(report.balanced, soup.balanced, "{}", soup.text);
        prop_assert_eq!(format_reward_default::<f64>(&soup.text) == 0.0, soup.balanced);
    }

    #[test]
    fn advantages_are_standardized(seed in any::<u64>(), g in 2usize..16) {
        let group = random_reward_group(&mut rng(seed), g);
        let adv = group_advantages(&group).unwrap();
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn combine_is_linear(
        f in -1.0f64..=0.0, c in 0.0f64..=1.0, t in 0.0f64..=1.0,
        f2 in -1.0f64..=0.0, c2 in 0.0f64..=1.0, t2 in 0.0f64..=1.0,
    ) {
        let w = RewardWeights::default();
        let a = RewardParts { format: f, correct: c, tool: t };
        let b = RewardParts { format: f2, correct: c2, tool: t2 };
        let lhs = combine(a + b, &w);
        let rhs = combine(a, &w) + combine(b, &w);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn correctness_decreases_with_error(gt in 0.1f64..50.0, e1 in 0.0f64..10.0, e2 in 0.0f64..10.0) {
        let (near, far) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let r = |e: f64| correctness_reward(&NormalizedAnswer::Number(gt + e), &NormalizedAnswer::Number(gt), 1.0);
        prop_assert!(r(near) >= r(far));
        prop_assert!(r(far) > 0.0 && r(near) <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn episodes_are_deterministic(seed in 0u64..10_000, task in 0usize..5) {
        let scene = generate_scene(seed, &SceneParams::new(5, 320, 240)).unwrap();
        let Ok(qa) = generate_qa(&scene, TaskType::ALL[task], seed) else { return Ok(()) };
        let tb = Toolbox::in_process(SceneStore::new([scene]));
        let a = run_episode(&mut OracleAgent, &qa, &tb, &EpisodeLimits::default(), seed, DEFAULT_MARGIN).unwrap();
        let b = run_episode(&mut OracleAgent, &qa, &tb, &EpisodeLimits::default(), seed, DEFAULT_MARGIN).unwrap();
        prop_assert_eq!(&a.transcript, &b.transcript);
        prop_assert!(a.answer_correct);
    }

    #[test]
    fn per_query_flags_follow_scene_membership(seed in 0u64..10_000, extra in 0usize..12) {
        let scene = generate_scene(seed, &SceneParams::new(4, 320, 240)).unwrap();
        let present = scene.objects[0].label.clone();
        let queried = spatial_core::world::DEFAULT_VOCAB[extra].to_string();
        let tb = Toolbox::in_process(SceneStore::new([scene.clone()]));
        let mut ctx = tb.start_episode("p", &scene.id, seed).unwrap();
        let call = format!(r#"SegmentObjects(img_path="image-0", text_labels=["{present}", "{queried}"])"#);
        let r = execute_skill(&tb.registry, &parse_action_call(&call).unwrap()[0], &mut ctx).unwrap();
        for (label, found) in &r.per_query {
            prop_assert_eq!(*found, scene.multiplicity(label) > 0);
        }
        let expected = if scene.multiplicity(&queried) > 0 { Consistency::Complete } else { Consistency::Partial };
        prop_assert_eq!(consistency_check(&[present.as_str(), queried.as_str()], &r), expected);
        prop_assert_ne!(r.status, SkillStatus::Failed);
    }
}

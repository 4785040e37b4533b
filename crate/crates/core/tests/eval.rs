use spatial_core::eval::{
    compute_metrics, run_episode, score_answer, Agent, AgentError, AgentView, CallOutcome, EpisodeLimits,
    EpisodeRecord, MetricsError, OracleAgent, Termination, ToolCallRecord, BUDGET_EXHAUSTED, DEFAULT_MARGIN,
};
use spatial_core::grammar::{parse_trajectory, ActionCall, GrammarConfig, NormalizedAnswer, Trajectory};
use spatial_core::reward::format_reward_default;
use spatial_core::skills::{SkillStatus, Toolbox};
use spatial_core::world::{generate_qa, generate_scene, SceneParams, SceneStore, TaskType};

fn record(calls: &[(&str, CallOutcome)], correct: bool) -> EpisodeRecord {
    let scene = generate_scene(1, &SceneParams::new(4, 320, 240)).unwrap();
    let qa = generate_qa(&scene, TaskType::Count, 1).unwrap();
    let tool_calls: Vec<ToolCallRecord> = calls
        .iter()
        .map(|(name, outcome)| ToolCallRecord {
            call: ActionCall::new(*name),
            outcome: *outcome,
            status: Some(match outcome {
                CallOutcome::Success => SkillStatus::Complete,
                CallOutcome::Partial => SkillStatus::Partial,
                CallOutcome::Failed => SkillStatus::Failed,
            }),
            error: None,
        })
        .collect();
    EpisodeRecord {
        episode_id: "e".into(),
        agent: "crafted".into(),
        qa,
        transcript: String::new(),
        trajectory: Trajectory::new(vec![]),
        n_calls: tool_calls.len(),
        tool_calls,
        answer: None,
        answer_correct: correct,
        wall_ms: 0,
        termination: Termination::Answered,
        agent_error: None,
    }
}

#[test]
fn boundary_ratios() {
    let n = NormalizedAnswer::Number;
    assert!(score_answer(&n(5.0), &n(4.0), 0.25).unwrap());
    assert!(score_answer(&n(3.0), &n(4.0), 0.25).unwrap());
    assert!(!score_answer(&n(5.01), &n(4.0), 0.25).unwrap());
    assert!(score_answer(&n(5.0f32 as f64), &n(4.0), 0.25f32).unwrap());
    assert!(score_answer(&NormalizedAnswer::Choice('B'), &NormalizedAnswer::Choice('B'), 0.25).unwrap());
    assert!(score_answer(&n(1.0), &n(0.0), 0.25).is_err());
}

#[test]
fn tool_sr_and_conditioned_accuracy() {
    let mut recs: Vec<EpisodeRecord> = (0..9).map(|i| record(&[("CountObjects", CallOutcome::Success)], i < 8)).collect();
    recs.push(record(&[("CountObjects", CallOutcome::Failed)], false));
    let m = compute_metrics(&recs).unwrap();
    assert_eq!(m.tool_sr, Some(0.9));
    assert_eq!(m.acc_w_suc, Some(8.0 / 9.0));
    assert_eq!(m.acc_w_uns, Some(0.0));
    assert_eq!(m.acc_no_call, None);
}

#[test]
fn multistep_rate() {
    let one = [("SegmentObjects", CallOutcome::Success)];
    let two = [("SegmentObjects", CallOutcome::Success), ("Get3DPoint", CallOutcome::Success)];
    let recs: Vec<EpisodeRecord> = (0..10).map(|i| record(if i < 2 { &two } else { &one }, true)).collect();
    assert_eq!(compute_metrics(&recs).unwrap().multistep_rate, 0.2);
}

#[test]
fn usage_distribution_fixture() {
    let mut recs = Vec::new();
    for (name, k) in [("SegmentObjects", 370), ("EstimateSize", 123), ("Get3DPoint", 64), ("CountObjects", 443)] {
        recs.extend((0..k).map(|_| record(&[(name, CallOutcome::Success)], true)));
    }
    let m = compute_metrics(&recs).unwrap();
    let pct = |k: &str| (m.usage_distribution[k] * 1000.0).round() / 10.0;
    assert_eq!(pct("SegmentObjects"), 37.0);
    assert_eq!(pct("EstimateSize"), 12.3);
    assert_eq!(pct("Get3DPoint"), 6.4);
    assert!((m.usage_distribution.values().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(m.to_table().contains("37.0%"));
}

#[test]
fn empty_input_is_an_error() {
    assert_eq!(compute_metrics(&[]), Err(MetricsError::EmptyInput));
}

fn count_setup() -> (Toolbox, spatial_core::world::QAItem) {
    let scene = generate_scene(5, &SceneParams::new(5, 320, 240)).unwrap();
    let qa = generate_qa(&scene, TaskType::Count, 2).unwrap();
    (Toolbox::in_process(SceneStore::new([scene])), qa)
}

#[test]
fn oracle_on_count_item() {
    let (tb, qa) = count_setup();
    let rec = run_episode(&mut OracleAgent, &qa, &tb, &EpisodeLimits::default(), 1, DEFAULT_MARGIN).unwrap();
    assert_eq!(rec.n_calls, 1);
    assert_eq!(rec.tool_calls[0].outcome, CallOutcome::Success);
    assert!(rec.answer_correct);
    assert_eq!(rec.termination, Termination::Answered);
    let reparsed = parse_trajectory(&rec.transcript, &GrammarConfig::default()).unwrap();
    assert_eq!(reparsed, rec.trajectory);
    assert_eq!(format_reward_default::<f64>(&rec.transcript), 0.0);
}

#[test]
fn zero_budget_rejects_the_call_and_continues() {
    let (tb, qa) = count_setup();
    let limits = EpisodeLimits { max_calls: 0, ..EpisodeLimits::default() };
    let rec = run_episode(&mut OracleAgent, &qa, &tb, &limits, 1, DEFAULT_MARGIN).unwrap();
    assert_eq!(rec.n_calls, 0);
    assert!(rec.transcript.contains(BUDGET_EXHAUSTED));
    assert_eq!(rec.termination, Termination::Answered);
}

struct Unreachable;

impl Agent for Unreachable {
    fn name(&self) -> &str {
        "unreachable"
    }
    fn act(&mut self, _: &AgentView<'_>) -> Result<String, AgentError> {
        Err(AgentError("connection refused".into()))
    }
}

#[test]
fn agent_error_is_an_incorrect_zero_call_episode() {
    let (tb, qa) = count_setup();
    let rec = run_episode(&mut Unreachable, &qa, &tb, &EpisodeLimits::default(), 1, DEFAULT_MARGIN).unwrap();
    assert_eq!(rec.termination, Termination::AgentError);
    assert!(!rec.answer_correct);
    assert_eq!(rec.n_calls, 0);
    assert_eq!(rec.agent_error.as_deref(), Some("connection refused"));
}

struct Chatty;

impl Agent for Chatty {
    fn name(&self) -> &str {
        "chatty"
    }
    fn act(&mut self, _: &AgentView<'_>) -> Result<String, AgentError> {
        Ok(r#"<analy>again</analy><action>CountObjects(img_path="image-0", text_labels=["chair"])</action>"#.into())
    }
}

#[test]
fn turn_limit_ends_a_looping_agent() {
    let (tb, qa) = count_setup();
    let limits = EpisodeLimits { max_calls: 3, max_turns: 5, deadline: None };
    let rec = run_episode(&mut Chatty, &qa, &tb, &limits, 1, DEFAULT_MARGIN).unwrap();
    assert_eq!(rec.termination, Termination::TurnLimit);
    assert_eq!(rec.n_calls, 3);
    assert_eq!(rec.transcript.matches(BUDGET_EXHAUSTED).count(), 2);
    assert!(!rec.answer_correct);
    assert!(parse_trajectory(&rec.transcript, &GrammarConfig::default()).is_ok());
}

#[test]
fn malformed_output_ends_the_episode() {
    struct Broken;
    impl Agent for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn act(&mut self, _: &AgentView<'_>) -> Result<String, AgentError> {
            Ok("<analy>unclosed".into())
        }
    }
    let (tb, qa) = count_setup();
    let rec = run_episode(&mut Broken, &qa, &tb, &EpisodeLimits::default(), 1, DEFAULT_MARGIN).unwrap();
    assert_eq!(rec.termination, Termination::MalformedOutput);
    assert_eq!(format_reward_default::<f64>(&rec.transcript), -1.0);
}

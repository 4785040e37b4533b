use spatial_core::eval::{compute_metrics, run_eval, Agent, EpisodeLimits, NoToolAgent, OracleAgent, DEFAULT_MARGIN};
use spatial_core::skills::Toolbox;
use spatial_core::world::{generate_qa_set, generate_scenes, SceneStore, TaskType};

#[test]
fn oracle_agent_solves_every_task_type() {
    let scenes = generate_scenes(40, 7, (4, 8), 320, 240).unwrap();
    let items = generate_qa_set(&scenes, 100, &TaskType::ALL, 11);
    assert_eq!(items.len(), 100);
    let toolbox = Toolbox::in_process(SceneStore::new(scenes));
    let make = || Box::new(OracleAgent) as Box<dyn Agent>;
    let records = run_eval(&items, &toolbox, &make, &EpisodeLimits::default(), 3, DEFAULT_MARGIN, 4).unwrap();
    let failures: Vec<_> = records.iter().filter(|r| !r.answer_correct).map(|r| (&r.qa, &r.transcript)).collect();
    assert!(failures.is_empty(), "{:#?}", failures.first());
    let report = compute_metrics(&records).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.tool_sr, Some(1.0));
}

#[test]
fn no_tool_agent_never_calls() {
    let scenes = generate_scenes(10, 1, (4, 6), 320, 240).unwrap();
    let items = generate_qa_set(&scenes, 20, &TaskType::ALL, 2);
    let toolbox = Toolbox::in_process(SceneStore::new(scenes));
    let make = || Box::new(NoToolAgent) as Box<dyn Agent>;
    let records = run_eval(&items, &toolbox, &make, &EpisodeLimits::default(), 0, DEFAULT_MARGIN, 2).unwrap();
    assert!(records.iter().all(|r| r.n_calls == 0));
    assert_eq!(compute_metrics(&records).unwrap().acc_no_call.is_some(), true);
}

use btforge_core::sim::{
    feedback_message, run, tick_once, SimOutcome, TickStatus, DEFAULT_TICK_BUDGET,
};
use btforge_core::{gear, Atom, BehaviorTree, BtNode, GroundedAction, WorldState};
use btforge_testkit::{
    all_atoms, random_state, random_tree, reference_execution, reference_tree, rng, GearModel,
};
use proptest::prelude::*;

fn a(pred: &str, args: &[&str]) -> Atom {
    Atom::new(pred, args.iter().copied())
}

fn g(name: &str, args: &[&str]) -> GroundedAction {
    GroundedAction::new(name, args.iter().copied())
}

/// Insertion tree that never acquires the gear.
fn shallow_tree() -> BehaviorTree {
    let goal = a("is_inserted_to", &["gear1", "shaft1"]);
    BehaviorTree::new(
        goal.clone(),
        BtNode::selector(vec![
            BtNode::condition(goal),
            BtNode::sequence(vec![
                BtNode::selector(vec![
                    BtNode::condition(a("hold", &["left_hand", "clampgripper"])),
                    BtNode::sequence(vec![
                        BtNode::action(g("put_down", &["left_hand", "parallelgripper", "shaft3"])),
                        BtNode::action(g(
                            "change_tool",
                            &["left_hand", "parallelgripper", "clampgripper"],
                        )),
                    ]),
                ]),
                BtNode::action(g(
                    "insert",
                    &["left_hand", "clampgripper", "gear1", "shaft1"],
                )),
            ]),
        ]),
    )
}

#[test]
fn reference_tree_single_tick() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let tick = tick_once(&reference_tree(), &s0, &d).unwrap();
    assert_eq!(tick.status, TickStatus::Success);
    assert_eq!(tick.executed, reference_execution());
    assert!(tick.violations.is_empty());
    assert!(tick.state.contains(&goal));
    // post-order: the root reports last
    assert_eq!(tick.trace.last().unwrap().node_id, 0);
}

#[test]
fn satisfied_goal_ticks_without_events() {
    let d = gear::domain();
    let (s0, _) = gear::reference_world(&d);
    let goal = a("hold", &["left_hand", "parallelgripper"]);
    let tree = BehaviorTree::new(
        goal.clone(),
        BtNode::selector(vec![BtNode::condition(goal.clone())]),
    );
    let tick = tick_once(&tree, &s0, &d).unwrap();
    assert_eq!(tick.status, TickStatus::Success);
    assert!(tick.executed.is_empty());
    let report = run(&tree, &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    assert_eq!(report.outcome, SimOutcome::GoalReached);
    assert!(report.executed.is_empty());
    assert_eq!(report.ticks, 1);
}

#[test]
fn failing_action_records_violation() {
    let d = gear::domain();
    let put_down = g("put_down", &["left_hand", "clampgripper", "gear1"]);
    let tree = BehaviorTree::new(
        a("is_empty", &["clampgripper"]),
        BtNode::sequence(vec![BtNode::action(put_down.clone())]),
    );
    let tick = tick_once(&tree, &WorldState::new(), &d).unwrap();
    assert_eq!(tick.status, TickStatus::Failure);
    assert_eq!(tick.violations.len(), 2);
    assert_eq!(tick.violations[0].action, put_down);
    assert_eq!(
        tick.violations[0].missing,
        a("hold", &["left_hand", "clampgripper"])
    );
    assert_eq!(tick.violations[0].node_id, 1);
}

#[test]
fn run_reference() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let report = run(&reference_tree(), &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    assert_eq!(report.outcome, SimOutcome::GoalReached);
    assert_eq!(report.executed, reference_execution());
    assert_eq!(report.ticks, 1);
    assert!(report.final_state.contains(&goal));
}

#[test]
fn shallow_tree_fails_on_missing_grip() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let report = run(&shallow_tree(), &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    assert_eq!(report.outcome, SimOutcome::Failed);
    assert!(report
        .violations
        .iter()
        .any(|v| v.missing == a("hold", &["clampgripper", "gear1"])));
    assert_eq!(report.executed.len(), 2);
    // the second tick finds the tool already changed and fails without acting
    assert_eq!(report.ticks, 2);
}

#[test]
fn shallow_tree_feedback_is_frozen() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let report = run(&shallow_tree(), &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    assert_eq!(
        feedback_message(&report),
        "Simulation: execution failed after 2 tick(s). \
         Executed actions: put_down(left_hand, parallelgripper, shaft3), change_tool(left_hand, parallelgripper, clampgripper). \
         Action insert(left_hand, clampgripper, gear1, shaft1) could not run because its precondition hold(clampgripper, gear1) does not hold. \
         The goal is_inserted_to(gear1, shaft1) was not reached. \
         Revise the behavior tree so that every action's preconditions are achieved before it runs."
    );
}

#[test]
fn feedback_on_success() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let report = run(&reference_tree(), &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    let msg = feedback_message(&report);
    assert!(msg.contains("execution succeeded"));
    assert!(msg.contains("is_inserted_to(gear1, shaft1)"));
}

#[test]
fn stall_and_wrong_success() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let stall = BehaviorTree::new(
        goal.clone(),
        BtNode::selector(vec![BtNode::condition(goal.clone())]),
    );
    let report = run(&stall, &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    assert_eq!(report.outcome, SimOutcome::Stalled);
    assert!(feedback_message(&report).contains("stalled"));

    let off_target = BehaviorTree::new(
        goal.clone(),
        BtNode::sequence(vec![BtNode::action(g(
            "put_down",
            &["left_hand", "parallelgripper", "shaft3"],
        ))]),
    );
    let report = run(&off_target, &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    assert_eq!(report.outcome, SimOutcome::Failed);
    assert!(report.violations.is_empty());
}

#[test]
fn budget_exceeded_on_livelock() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    // swap tools back and forth forever
    let swap = |from: &str, to: &str| {
        BtNode::sequence(vec![
            BtNode::condition(a("hold", &["left_hand", from])),
            BtNode::action(g("change_tool", &["left_hand", from, to])),
        ])
    };
    let tree = BehaviorTree::new(
        goal.clone(),
        BtNode::sequence(vec![
            BtNode::selector(vec![
                BtNode::action(g("put_down", &["left_hand", "parallelgripper", "shaft3"])),
                swap("parallelgripper", "clampgripper"),
                swap("clampgripper", "parallelgripper"),
            ]),
            BtNode::condition(goal.clone()),
        ]),
    );
    let report = run(&tree, &s0, &d, &goal, 10);
    assert_eq!(report.outcome, SimOutcome::BudgetExceeded);
    assert_eq!(report.ticks, 10);
    assert!(feedback_message(&report).contains("did not terminate"));
}

#[test]
fn unknown_symbol_is_a_fault() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let tree = BehaviorTree::new(
        goal.clone(),
        BtNode::selector(vec![BtNode::condition(a("is_welded", &["gear1"]))]),
    );
    assert!(tick_once(&tree, &s0, &d).is_err());
    let report = run(&tree, &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    assert_eq!(report.outcome, SimOutcome::Failed);
    assert!(report.fault.is_some());
}

#[test]
fn report_json_shape() {
    let d = gear::domain();
    let (s0, goal) = gear::reference_world(&d);
    let report = run(&reference_tree(), &s0, &d, &goal, DEFAULT_TICK_BUDGET);
    let v: serde_json::Value =
        serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(v["final"], "GoalReached");
    assert_eq!(v["trace"][0]["status"], "FAILURE");
    assert_eq!(v["trace"][0]["node_id"], 1);
    assert!(v.get("fault").is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn deterministic_and_sound(seed in any::<u64>()) {
        let d = gear::domain();
        let model = GearModel::new(&d);
        let mut r = rng(seed);
        let atoms = all_atoms(&d);
        let actions = d.ground_actions();
        let tree = random_tree(&atoms, &actions, 4, &mut r);
        let s = random_state(&d, &mut r);
        let goal = tree.target().clone();
        let first = run(&tree, &s, &d, &goal, 20);
        let second = run(&tree, &s, &d, &goal, 20);
        prop_assert_eq!(&first, &second);
        let end = model.replay(&s, &first.executed);
        prop_assert!(end.is_some(), "executed sequence not replayable");
        let end: WorldState = end.unwrap().into_iter().collect();
        prop_assert_eq!(&end, &first.final_state);
        if first.outcome == SimOutcome::GoalReached {
            prop_assert!(first.final_state.contains(&goal));
        }
    }
}

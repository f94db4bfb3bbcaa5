//! Runs one full episode on a four-way intersection: the rule driver in the
//! student slot, rule-based NPC traffic around it, and a printed outcome.

use std::sync::Arc;

use traffic_curriculum::baseline::{rule_policy, BaselineNpcActor, RuleParams};
use traffic_curriculum::lane_graph::build_x_intersection;
use traffic_curriculum::ppo::NpcActor;
use traffic_curriculum::rng::stream;
use traffic_curriculum::sim::spawn_world;

fn main() {
    let graph = Arc::new(build_x_intersection(30.0, 3.5).unwrap().dilate(2));
    let mut rng = stream(7, "example.simulate");
    let mut world = spawn_world(graph, 3, &mut rng, 0.1, 300).unwrap();
    let params = RuleParams::default();
    let mut npcs = BaselineNpcActor { params };

    while !world.episode_over() {
        let npc_actions = npcs.act(&world, &mut rng);
        let student_action = rule_policy(&world, 0, &params);
        let events = world.step_episode(&npc_actions, student_action).unwrap();
        for e in events {
            println!("step {:3}: agent {} -> {:?}", world.step_count, e.agent, e.cause);
        }
    }

    let outcome = world.outcome(0.0);
    println!(
        "student: {:?} after {} steps, route progress {:.2}, mean speed {:.2} m/s",
        outcome.student_cause, outcome.steps, outcome.route_progress, outcome.mean_velocity
    );
}

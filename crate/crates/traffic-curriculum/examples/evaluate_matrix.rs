//! Evaluates the scripted rule driver against rule traffic on the hold-out
//! maps and prints the aggregated report plus a velocity-profile excerpt.

use std::sync::Arc;

use traffic_curriculum::baseline::{BaselineNpcActor, RuleParams, RuleStudentActor};
use traffic_curriculum::eval::{evaluate, velocity_profiles};
use traffic_curriculum::lane_graph::{generate_map_set, LaneGraph};
use traffic_curriculum::ppo::RolloutParams;
use traffic_curriculum::rewards::RewardParams;

fn main() {
    let (_, holdout) = generate_map_set(0);
    let holdout: Vec<Arc<LaneGraph>> = holdout.into_iter().map(|g| Arc::new(g.dilate(2))).collect();
    let env = RolloutParams {
        npc_count: 4,
        dt: 0.1,
        max_steps: 300,
    };

    let mut student = RuleStudentActor { params: RuleParams::default() };
    let mut traffic = BaselineNpcActor { params: RuleParams::default() };
    let ev = evaluate(
        &mut student,
        &mut traffic,
        &holdout,
        &env,
        &RewardParams::default(),
        20,
        1,
    )
    .unwrap();

    let r = &ev.report;
    println!("episodes {} (seed {})", r.episodes, r.seed);
    println!("SR {:.2}  CR {:.2}  OR {:.2}  TR {:.2}", r.success_rate, r.collision_rate, r.offroad_rate, r.timeout_rate);
    println!("route progress {:.3} +/- {:.3}", r.route_progress.mean, r.route_progress.std);
    println!("velocity       {:.3} +/- {:.3} m/s", r.velocity.mean, r.velocity.std);
    println!("reward         {:.3} +/- {:.3}", r.reward.mean, r.reward.std);
    println!("npc velocity   {:.3} +/- {:.3} m/s", r.npc_velocity.mean, r.npc_velocity.std);

    let csv = velocity_profiles(&ev.playbacks).unwrap();
    println!("\nvelocity profile CSV ({} rows), first lines:", csv.lines().count() - 1);
    for line in csv.lines().take(5) {
        println!("  {line}");
    }
}

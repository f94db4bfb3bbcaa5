//! Runs the teacher's graph network over a live scene at two commanded
//! difficulties and shows the per-NPC action distributions shifting.

use std::sync::Arc;

use traffic_curriculum::lane_graph::build_x_intersection;
use traffic_curriculum::nn::params::ParameterStore;
use traffic_curriculum::observation::build_teacher_obs;
use traffic_curriculum::rng::stream;
use traffic_curriculum::sim::spawn_world;
use traffic_curriculum::teacher::{TeacherConfig, TeacherPolicy};

fn main() {
    let graph = Arc::new(build_x_intersection(30.0, 3.5).unwrap().dilate(2));
    let mut rng = stream(11, "example.teacher");
    let world = spawn_world(graph, 3, &mut rng, 0.1, 300).unwrap();

    let mut store = ParameterStore::new();
    let policy = TeacherPolicy::new(&mut store, &mut rng, TeacherConfig::default());

    for lambda in [1.0, -1.0] {
        let out = policy.forward(&store, &build_teacher_obs(&world, lambda));
        println!("lambda = {lambda:+.1} ({} NPCs, cached_map = {}):", out.per_npc.len(), out.cached_map);
        for npc in &out.per_npc {
            let probs: Vec<String> = npc
                .log_probs
                .iter()
                .map(|lp| format!("{:.3}", lp.exp()))
                .collect();
            println!("  npc {}: value {:+.3}, action probs [{}]", npc.world_index, npc.value, probs.join(", "));
        }
    }

    // The second call with the same map hits the scenario-encoding cache.
    let again = policy.forward(&store, &build_teacher_obs(&world, 0.0));
    assert!(again.cached_map);
    println!("map encoding served from cache on repeat calls");
}

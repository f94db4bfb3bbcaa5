//! Tabulates the NPC reward blend across difficulty and distance: far from
//! the student an NPC is paid for its own driving; nearby, the student's
//! reward dominates with a sign set by the commanded difficulty.

use traffic_curriculum::rewards::{npc_reward, rbf_kernel, RewardParams};

fn main() {
    let params = RewardParams::default();
    // A decently driving NPC next to a decently driving student.
    let (r_npc, r_student) = (0.4, 0.5);

    println!("kernel: sigma = {} m", params.sigma);
    for d in [0.0, 2.5, 5.0, 10.0, 20.0] {
        println!("  d = {d:5.1} m -> weight {:.4}", rbf_kernel(d, params.sigma));
    }

    println!("\nlambda    d=1m                     d=15m");
    for lambda in [1.0, 0.5, 0.0, -0.5, -1.0] {
        let near = npc_reward(lambda, 1.0, r_npc, r_student, &params);
        let far = npc_reward(lambda, 15.0, r_npc, r_student, &params);
        println!(
            "{lambda:+.2}    int {:+.3} ext {:+.3} = {:+.3}   int {:+.3} ext {:+.3} = {:+.3}",
            near.intrinsic, near.extrinsic, near.total, far.intrinsic, far.extrinsic, far.total
        );
    }

    // The epsilon floor keeps both shares alive at the extremes: a fully
    // adversarial NPC still weakly cares about its own driving.
    let extreme = npc_reward(-1.0, 20.0, r_npc, r_student, &params);
    assert!(extreme.intrinsic.abs() > 0.0);
    println!("\nepsilon floor at lambda=-1, d=20m: intrinsic {:+.4}", extreme.intrinsic);
}

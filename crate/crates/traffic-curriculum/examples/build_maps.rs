//! Builds the procedural train/hold-out map pools, prints per-map stats,
//! and round-trips one map through its JSON document form.

use traffic_curriculum::lane_graph::{generate_map_set, LaneGraph};

fn describe(tag: &str, maps: &[LaneGraph]) {
    for g in maps {
        let (lo, hi) = g
            .drivable_region()
            .junction_box()
            .expect("intersection maps have a junction");
        println!(
            "{tag} map {}: {} nodes, junction {:.1} x {:.1} m",
            g.map_id(),
            g.nodes().len(),
            hi.x - lo.x,
            hi.y - lo.y,
        );
    }
}

fn main() {
    let (train, holdout) = generate_map_set(0);
    let train: Vec<LaneGraph> = train.into_iter().map(|g| g.dilate(2)).collect();
    let holdout: Vec<LaneGraph> = holdout.into_iter().map(|g| g.dilate(2)).collect();
    describe("train", &train);
    describe("holdout", &holdout);

    // Maps serialize to a versioned JSON document and rebuild identically.
    let json = train[0].to_json();
    let back = LaneGraph::from_json(&json).expect("roundtrip");
    assert_eq!(back.map_id(), train[0].map_id());
    println!("json roundtrip ok ({} bytes)", json.len());
}

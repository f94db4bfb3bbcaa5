//! Runs a miniature end-to-end curriculum (tiny networks, two rounds) and
//! prints the resulting phase-by-phase metrics CSV.

use std::sync::Arc;

use traffic_curriculum::curriculum::{log_csv, CurriculumLab, LabParams, PhaseConfig};
use traffic_curriculum::lane_graph::build_t_intersection;
use traffic_curriculum::ppo::{PpoConfig, RolloutParams};
use traffic_curriculum::teacher::TeacherConfig;

fn main() {
    let params = LabParams {
        seed: 17,
        teacher_cfg: TeacherConfig {
            embed: 8,
            msg_hidden: 8,
            head_hidden: 8,
            map_layers: 1,
            ..TeacherConfig::default()
        },
        student_hidden: 8,
        teacher_ppo: PpoConfig {
            steps_per_iter: 64,
            minibatch: 16,
            epochs: 1,
            ..PpoConfig::default()
        },
        student_ppo: PpoConfig {
            steps_per_iter: 64,
            minibatch: 16,
            epochs: 1,
            ..PpoConfig::default()
        },
        env: RolloutParams {
            npc_count: 2,
            dt: 0.1,
            max_steps: 60,
        },
        rewards: Default::default(),
        phase: PhaseConfig {
            n_teacher: 2,
            n_student: 2,
            n_recalibrate: 9,
            total_rounds: 2,
            ..PhaseConfig::default()
        },
    };
    let maps = vec![Arc::new(build_t_intersection(25.0, 3.5).unwrap().dilate(2))];

    let mut lab = CurriculumLab::new(&params, maps);
    lab.run_with(|lab| {
        println!(
            "finished a phase: round {}, next phase {}, level index {}",
            lab.state.round, lab.state.phase, lab.state.current_index
        );
        Ok(())
    })
    .unwrap();

    println!("\n{}", log_csv(&lab.log));
}

//! The student driver: a plain MLP actor-critic over the fixed-size ego
//! observation. Deliberately simple — the student is the thing being
//! trained and evaluated, not the object of architectural interest.

use rand_chacha::ChaCha8Rng;

use crate::nn::layers::CategoricalHead;
use crate::nn::params::ParameterStore;
use crate::nn::tape::{Tape, ValueId};
use crate::observation::{StudentObservation, STUDENT_OBS_DIM};
use crate::sim::ACTION_COUNT;

pub struct StudentPolicy {
    head: CategoricalHead,
}

impl StudentPolicy {
    /// Registers all parameters under the `student.` prefix.
    pub fn new(store: &mut ParameterStore, rng: &mut ChaCha8Rng, hidden: usize) -> Self {
        StudentPolicy {
            head: CategoricalHead::new(store, rng, "student.head", STUDENT_OBS_DIM, hidden, ACTION_COUNT),
        }
    }

    /// Returns (log-probabilities, value) tape nodes for one observation.
    pub fn forward_tape(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        obs: &StudentObservation,
    ) -> (ValueId, ValueId) {
        let x = tape.constant(obs.to_vector());
        self.head.forward(store, tape, x)
    }

    /// No-grad inference convenience.
    pub fn forward(&self, store: &ParameterStore, obs: &StudentObservation) -> (Vec<f64>, f64) {
        let mut tape = Tape::new();
        let (lp, v) = self.forward_tape(store, &mut tape, obs);
        (tape.value(lp).to_vec(), tape.scalar(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_graph::build_x_intersection;
    use crate::observation::build_student_obs;
    use crate::rng::stream;
    use crate::sim::spawn_world;
    use std::sync::Arc;

    #[test]
    fn policy_normalizes_over_actions() {
        let mut store = ParameterStore::new();
        let mut rng = stream(21, "student-init");
        let policy = StudentPolicy::new(&mut store, &mut rng, 32);
        let graph = Arc::new(build_x_intersection(25.0, 3.5).unwrap().dilate(2));
        let mut wr = stream(21, "student-world");
        let world = spawn_world(graph, 2, &mut wr, 0.1, 300).unwrap();
        let (lp, v) = policy.forward(&store, &build_student_obs(&world));
        assert_eq!(lp.len(), ACTION_COUNT);
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(v.is_finite());
    }
}

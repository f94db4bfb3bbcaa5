//! Gradient verification helpers shared by unit and integration tests.

use crate::nn::params::ParameterStore;
use crate::nn::tape::{Tape, ValueId};

/// Compares tape gradients against central finite differences for every
/// parameter coordinate. `f` must rebuild the same scalar loss from the
/// store each call. Panics with a description of the worst offender if any
/// coordinate exceeds `tol` in relative error (with an absolute floor).
pub fn finite_difference_check<F>(store: &mut ParameterStore, mut f: F, step: f64, tol: f64)
where
    F: FnMut(&ParameterStore, &mut Tape) -> ValueId,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape);
    let grads = tape.backward(loss);

    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let len = store.get(&name).data.len();
        let zero = vec![0.0; len];
        let analytic = grads.get(&name).unwrap_or(&zero).clone();
        for i in 0..len {
            let orig = store.get(&name).data[i];

            let mut bumped = store.get(&name).data.clone();
            bumped[i] = orig + step;
            store.set(&name, bumped);
            let mut t = Tape::new();
            let l = f(store, &mut t);
            let plus = t.scalar(l);

            let mut bumped = store.get(&name).data.clone();
            bumped[i] = orig - step;
            store.set(&name, bumped);
            let mut t = Tape::new();
            let l = f(store, &mut t);
            let minus = t.scalar(l);

            let mut restore = store.get(&name).data.clone();
            restore[i] = orig;
            store.set(&name, restore);

            let numeric = (plus - minus) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
            let err = (analytic[i] - numeric).abs() / denom;
            assert!(
                err <= tol,
                "gradient mismatch at {name}[{i}]: analytic {} vs numeric {} (rel err {err:.3e})",
                analytic[i],
                numeric
            );
        }
    }
}

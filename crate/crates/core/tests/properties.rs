//! Property-based checks of the contracts that hold for *every* input:
//! the q-deviate compression bound, error-feedback conservation, and the
//! norm identities the rest of the stack leans on.

use compams_core::compressor::{
    compress, deviation, resolve_k, spans_from_lens, CompressorSpec,
};
use compams_core::numerics::ParamVector;
use compams_core::objectives::{Shard, StochasticObjective};
use compams_core::worker::WorkerState;
use proptest::collection::vec as pvec;
use proptest::prelude::*;

fn finite_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    pvec(-1e6..1e6f64, dim)
}

proptest! {
    #[test]
    fn norm2_sq_equals_norm2_squared(xs in pvec(-1e3..1e3f64, 1..64)) {
        let v = ParamVector::from_vec(xs);
        let a = v.norm2_sq();
        let b = v.norm2() * v.norm2();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn top_k_satisfies_q_deviate_bound(
        xs in finite_vec(40),
        k in 1usize..=40,
    ) {
        let x = ParamVector::from_vec(xs);
        let spec = CompressorSpec::TopK { k };
        let q_sq = deviation(&spec, 40).unwrap().q_sq();
        let out = compress(&spec, &x).unwrap();
        let resid = out.sub(&x).unwrap().norm2_sq();
        prop_assert!(resid <= q_sq * x.norm2_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn block_sign_satisfies_q_deviate_bound(
        xs in finite_vec(36),
        layout in prop::sample::select(vec![
            vec![36usize],
            vec![9, 9, 9, 9],
            vec![1, 7, 12, 16],
        ]),
    ) {
        let x = ParamVector::from_vec(xs);
        let spec = CompressorSpec::BlockSign { blocks: spans_from_lens(&layout) };
        let q_sq = deviation(&spec, 36).unwrap().q_sq();
        let out = compress(&spec, &x).unwrap();
        let resid = out.sub(&x).unwrap().norm2_sq();
        prop_assert!(resid <= q_sq * x.norm2_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn top_k_is_idempotent_for_all_inputs(
        xs in finite_vec(24),
        k in 1usize..=24,
    ) {
        let spec = CompressorSpec::TopK { k };
        let once = compress(&spec, &ParamVector::from_vec(xs)).unwrap();
        let twice = compress(&spec, &once).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn resolve_k_stays_in_range(ratio in 1e-6..1.0f64, d in 1usize..5000) {
        let k = resolve_k(ratio, d).unwrap();
        prop_assert!(k >= 1 && k <= d);
        // ceil semantics: k-1 < ratio * d <= k (up to the max(1, .) floor)
        prop_assert!(ratio * d as f64 <= k as f64);
    }

    #[test]
    fn error_feedback_conserves_gradient_mass(
        seed in 0u64..1000,
        k in 1usize..=8,
        rounds in 1usize..40,
    ) {
        // noiseless quadratic: worker gradients depend only on theta
        let dim = 8;
        let obj = StochasticObjective::quadratic(vec![1.0; dim], vec![0.4; dim], 0.0);
        let spec = CompressorSpec::TopK { k };
        let mut w = WorkerState::new(0, dim, seed, Shard::Component(0), 1);
        let theta = ParamVector::from_vec((0..dim).map(|j| (j as f64) * 0.3 - 1.0).collect());
        for _ in 0..rounds {
            w.local_step(&obj, &theta, &spec).unwrap();
        }
        prop_assert!(w.conservation_residual() < 1e-9);
    }
}

/// Worker draws are a function of the worker's own stream, so evaluation
/// order across workers cannot change any output.
#[test]
fn worker_outputs_do_not_depend_on_evaluation_order() {
    let dim = 12;
    let obj = StochasticObjective::quadratic(vec![1.0; dim], vec![0.0; dim], 0.7);
    let spec = CompressorSpec::TopK { k: 3 };
    let theta = ParamVector::constant(dim, 0.5);
    let seed = 31;

    let run = |order: &[usize]| -> Vec<ParamVector> {
        let mut workers: Vec<WorkerState> =
            (0..4).map(|i| WorkerState::new(i, dim, seed, Shard::Component(0), 1)).collect();
        let mut sent = vec![ParamVector::zeros(dim); 4];
        for _ in 0..5 {
            for &i in order {
                let (s, _) = workers[i].local_step(&obj, &theta, &spec).unwrap();
                sent[i] = s;
            }
        }
        sent
    };

    let forward = run(&[0, 1, 2, 3]);
    let backward = run(&[3, 2, 1, 0]);
    assert_eq!(forward, backward);
}

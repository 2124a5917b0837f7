//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records primitives against a borrowed [`ParamStore`];
//! [`Graph::backward`] returns [`Gradients`] that the caller folds into the
//! store with [`ParamStore::accumulate`] before an [`Optimizer`] step.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, GRAD_CHECK_STEP};
pub use graph::{argmax, dropout_mask, log_sigmoid, log_sum_exp, sigmoid, softmax, Graph, NodeId};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{0}: empty operand set")]
    Empty(&'static str),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("optimizer step without populated gradients")]
    NoGradients,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
}

impl AutodiffError {
    pub(crate) fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Self {
        AutodiffError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input_vector(vec![0.0, 0.0]).unwrap();
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn dot_of_unit_vectors() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input_vector(vec![1.0, 0.0]).unwrap();
        let b = g.input_vector(vec![1.0, 0.0]).unwrap();
        let d = g.dot(a, b).unwrap();
        assert_eq!(g.scalar(d).unwrap(), 1.0);
    }

    #[test]
    fn matmul_against_hand_arithmetic() {
        // [[1,2,3],[4,5,6]] x [7,8,9]^T = [50, 122]
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap()).unwrap();
        let b = g.input(Tensor::matrix(3, 1, vec![7., 8., 9.]).unwrap()).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c).data(), &[50.0, 122.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.input(Tensor::zeros(&[2])).unwrap();
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn linear_loss_gradient_is_the_constant() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![0.3, -0.2, 0.9])).unwrap();
        let mut g = Graph::new(&store);
        let pn = g.param(p);
        let c = g.input_vector(vec![1.5, -2.0, 0.25]).unwrap();
        let loss = g.dot(pn, c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn tanh_derivative_at_origin_is_one() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.0)).unwrap();
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        let y = g.tanh(xn).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        let y = g.tanh(xn).unwrap();
        assert!(matches!(g.backward(y), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn gradients_accumulate_across_backward_passes() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![0.4, -1.1])).unwrap();
        let run = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let xn = g.param(x);
            let t = g.tanh(xn).unwrap();
            let l = g.sum(t).unwrap();
            g.backward(l).unwrap()
        };
        let once = run(&store);
        store.accumulate(&once).unwrap();
        let single = store.get(x).grad.clone();
        let twice = run(&store);
        store.accumulate(&twice).unwrap();
        for (a, b) in store.get(x).grad.data().iter().zip(single.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![0.1, 0.2])).unwrap();
        let report = grad_check(&mut store, |g| g.constant(3.0)).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w1 = store.add("w1", Tensor::uniform(&[4, 3], 0.8, &mut rng)).unwrap();
        let w2 = store.add("w2", Tensor::uniform(&[4, 4], 0.8, &mut rng)).unwrap();
        let w3 = store.add("w3", Tensor::uniform(&[4], 0.8, &mut rng)).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = grad_check(&mut store, |g| {
            let xn = g.input_vector(x.clone())?;
            let (a, b, c) = (g.param(w1), g.param(w2), g.param(w3));
            let h1 = g.matmul(a, xn)?;
            let h1 = g.tanh(h1)?;
            let h2 = g.matmul(b, h1)?;
            let h2 = g.sigmoid(h2)?;
            g.dot(h2, c)
        })
        .unwrap();
        assert!(report.passes(1e-3), "{report:?}");
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(2.0)).unwrap();
        let mut grads = Gradients::default();
        grads.slots = vec![Some(Tensor::scalar(1.0))];
        store.accumulate(&grads).unwrap();
        let mut opt = Optimizer::adam(0.001, &store).with_clip(None);
        opt.step(&mut store).unwrap();
        assert_abs_diff_eq!(store.value(w).data()[0], 2.0 - 0.001, epsilon = 1e-10);
        assert_eq!(store.get(w).grad.data(), &[0.0]);
    }

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut grads = Gradients::default();
        grads.slots = vec![Some(Tensor::scalar(2.0))];
        store.accumulate(&grads).unwrap();
        let mut opt = Optimizer::sgd(0.5, &store).with_clip(None);
        opt.step(&mut store).unwrap();
        assert_eq!(store.value(w).data(), &[2.0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0, -1.0])).unwrap();
        store.accumulate(&Gradients { slots: vec![Some(Tensor::zeros(&[2]))] }).unwrap();
        let mut opt = Optimizer::adam(0.001, &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.value(w).data(), &[1.0, -1.0]);
    }

    #[test]
    fn step_without_gradients_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        let mut opt = Optimizer::sgd(0.1, &store);
        assert!(matches!(opt.step(&mut store), Err(AutodiffError::NoGradients)));
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.0, 0.0])).unwrap();
        store
            .accumulate(&Gradients { slots: vec![Some(Tensor::vector(vec![30.0, 40.0]))] })
            .unwrap();
        let mut opt = Optimizer::sgd(1.0, &store);
        opt.step(&mut store).unwrap();
        assert_abs_diff_eq!(store.value(w).data()[0], -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(store.value(w).data()[1], -4.0, epsilon = 1e-12);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let store = ParamStore::new();
        let mut g = Graph::training(&store, 0.0, 1);
        let x = g.input_vector(vec![1.0, 2.0, 3.0]).unwrap();
        let y = g.dropout(x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_keeps_about_one_minus_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let rate = 0.3;
        let mask = dropout_mask(n, rate, &mut rng);
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64;
        let sigma = (n as f64 * rate * (1.0 - rate)).sqrt();
        assert!((kept - n as f64 * (1.0 - rate)).abs() < 3.0 * sigma);
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.7).abs() < 1e-12));
    }

    #[test]
    fn non_finite_outputs_are_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input_vector(vec![f64::MAX, 1.0]).unwrap();
        assert!(matches!(g.scale(x, 10.0), Err(AutodiffError::NonFinite("scale"))));
    }
}

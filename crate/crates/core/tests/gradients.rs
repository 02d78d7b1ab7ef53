mod common;

use nalgebra::DVector;
use tsnet::learning::backward::{ibp_backward, inverted_step, lrc_backward, pinv_apply, ss_backward};
use tsnet::learning::loss::{loss_and_grad, one_hot, LossKind};
use tsnet::network::{forward, init_weights, ss_forward, ts_forward};
use tsnet::{DenseTensor, Mode, NetworkSpec};

use common::*;

fn score_gradient(out: &[f64], label: usize) -> Vec<f64> {
    loss_and_grad(out, &one_hot(label, out.len()), LossKind::SoftmaxCrossEntropy)
        .unwrap()
        .1
}

#[test]
fn inverted_step_matches_dense_pseudoinverse() {
    let mut r = rng(20);
    for (n, d) in [(3, 2), (4, 3), (2, 5)] {
        let w = gaussian_matrix(&mut r, n, d);
        let jp = pseudo_inverse(&contraction_jacobian(&w, 3));
        let g = gaussian_vec(&mut r, 3 * n * d);
        let got = inverted_step(&DenseTensor::new(vec![3, n, d], g.clone()).unwrap(), &w).unwrap();
        let want = jp.transpose() * DVector::from_vec(g);
        for (a, b) in got.data().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "{n}x{d}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_rows_map_to_zero_like_the_pseudoinverse() {
    let w = DenseTensor::from_rows(&[[1.0, 2.0], [0.0, 0.0], [-1.0, 0.5]]).unwrap();
    let jp = pseudo_inverse(&contraction_jacobian(&w, 1));
    let g = vec![0.3, -1.2, 2.0];
    let got = pinv_apply(&DenseTensor::vector(g.clone()).unwrap(), &w).unwrap();
    let want = &jp * DVector::from_vec(g);
    for (a, b) in got.data().iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pseudoinverse_is_a_right_inverse_of_contraction() {
    // J J^+ = I when every row of W is nonzero
    let mut r = rng(21);
    let w = gaussian_matrix(&mut r, 4, 3);
    let a_prev = DenseTensor::new(vec![2, 4, 3], gaussian_vec(&mut r, 24)).unwrap();
    let target = tsnet::tensor::contract(&a_prev, &w).unwrap();
    let lifted = pinv_apply(&target, &w).unwrap();
    let back = tsnet::tensor::contract(&lifted, &w).unwrap();
    assert!(back.max_abs_diff(&target) < 1e-12);
}

#[test]
fn ss_gradients_match_finite_differences() {
    let spec = NetworkSpec::new(vec![5, 4, 3], Mode::Ss, 3).unwrap();
    let w = init_weights(&spec, 0.8, 30).unwrap();
    let mut r = rng(30);
    let mut checked = 0;
    for _ in 0..5 {
        let x = gaussian_vec(&mut r, 5);
        let trace = ss_forward(&w, &x).unwrap();
        if trace.boundary_margin() < 1e-3 {
            continue;
        }
        let g = ss_backward(&trace, &w, &score_gradient(&trace.output, 2)).unwrap();
        for (t, grad) in g.tensors().enumerate() {
            for k in 0..grad.len() {
                if let Some(fd) = central_difference(&w, t, k, &x, 2, 1e-5) {
                    assert!(rel_err(grad.data()[k], fd, 1e-6) < 1e-4, "tensor {t} entry {k}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn ibp_analysis_gradient_is_exact() {
    let spec = NetworkSpec::new(vec![3, 4, 2], Mode::Ts, 2).unwrap();
    let w = init_weights(&spec, 0.8, 31).unwrap();
    let mut r = rng(31);
    let x = gaussian_vec(&mut r, 3);
    let trace = ts_forward(&w, &x).unwrap();
    let g = ibp_backward(&trace, &w, &score_gradient(&trace.output, 0)).unwrap();
    let wz = g.analysis.as_ref().unwrap();
    let t = w.tensors().count() - 1;
    for k in 0..wz.len() {
        let fd = central_difference(&w, t, k, &x, 0, 1e-5).unwrap();
        assert!(rel_err(wz.data()[k], fd, 1e-6) < 1e-4);
    }
}

#[test]
fn lrc_gradients_match_finite_differences() {
    let spec = NetworkSpec::new(vec![3, 4, 3], Mode::TsLrc, 3)
        .unwrap()
        .with_rotation_widths(vec![5, 2])
        .unwrap();
    let w = init_weights(&spec, 0.8, 32).unwrap();
    let mut r = rng(32);
    let x = gaussian_vec(&mut r, 3);
    let trace = forward(&w, &x, true).unwrap();
    let g = lrc_backward(&trace, &w, &score_gradient(&trace.output, 1)).unwrap();
    for (t, grad) in g.tensors().enumerate() {
        for k in 0..grad.len() {
            if let Some(fd) = central_difference(&w, t, k, &x, 1, 1e-5) {
                assert!(rel_err(grad.data()[k], fd, 1e-6) < 1e-4, "tensor {t} entry {k}");
            }
        }
    }
}

#[test]
fn a_small_step_along_the_negative_gradient_descends() {
    for mode in [Mode::Ss, Mode::TsLrc] {
        let spec = NetworkSpec::new(vec![4, 6, 3], mode, 3).unwrap();
        let w = init_weights(&spec, 0.8, 33).unwrap();
        let mut r = rng(33);
        // an input that switches on at least one unit per layer
        let (x, trace) = loop {
            let x = gaussian_vec(&mut r, 4);
            let trace = forward(&w, &x, true).unwrap();
            if trace.masks.iter().all(|m| m.contains(&true)) {
                break (x, trace);
            }
        };
        let g_out = score_gradient(&trace.output, 1);
        let grads = match mode {
            Mode::Ss => ss_backward(&trace, &w, &g_out).unwrap(),
            _ => lrc_backward(&trace, &w, &g_out).unwrap(),
        };
        let mut stepped = w.clone();
        for (p, g) in stepped.tensors_mut().zip(grads.tensors()) {
            p.data_mut().iter_mut().zip(g.data()).for_each(|(v, d)| *v -= 1e-3 * d);
        }
        let (after, before) = (example_loss(&stepped, &x, 1), example_loss(&w, &x, 1));
        assert!(after < before, "{mode}: {after} vs {before}, grad {}", grads.max_abs());
    }
}

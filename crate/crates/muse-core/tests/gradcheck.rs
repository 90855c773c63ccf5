//! Finite-difference verification of every differentiable primitive, run in
//! f64 with h = 1e-5. The oracle only evaluates forward passes.

use muse_core::rng::SeedRng;
use muse_core::tensor::gradcheck::{finite_diff_check, rand_input, rand_param};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn assert_ok(name: &str, result: Result<muse_core::tensor::gradcheck::GradCheck, String>) {
    let check = result.unwrap_or_else(|e| panic!("{name}: {e}"));
    assert!(
        check.max_rel_err < TOL,
        "{name}: max rel err {} over {} entries",
        check.max_rel_err,
        check.checked
    );
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(11);
    let x = rand_param(&[2, 3, 8, 8], &mut rng, 1.0);
    let w = rand_param(&[4, 3, 3, 3], &mut rng, 0.3);
    let b = rand_param(&[4], &mut rng, 0.3);
    assert_ok(
        "conv2d s1 p1",
        finite_diff_check(&[&x, &w, &b], || {
            x.conv2d(&w, Some(&b), 1, 1).unwrap().softplus().mean()
        }, H),
    );
    assert_ok(
        "conv2d s2 p0",
        finite_diff_check(&[&x, &w, &b], || {
            x.conv2d(&w, Some(&b), 2, 0).unwrap().softplus().mean()
        }, H),
    );
    let w1 = rand_param(&[5, 3, 1, 1], &mut rng, 0.5);
    assert_ok(
        "conv2d pointwise",
        finite_diff_check(&[&x, &w1], || {
            x.conv2d(&w1, None, 1, 0).unwrap().softplus().mean()
        }, H),
    );
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(12);
    let x = rand_param(&[4, 6], &mut rng, 1.0);
    let w = rand_param(&[5, 6], &mut rng, 0.5);
    let b = rand_param(&[5], &mut rng, 0.5);
    assert_ok(
        "linear",
        finite_diff_check(&[&x, &w, &b], || {
            x.linear(&w, &b).unwrap().softplus().mean()
        }, H),
    );
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(13);
    let x = rand_param(&[3, 2, 4, 4], &mut rng, 1.0);
    let g = rand_param(&[2], &mut rng, 0.5);
    let b = rand_param(&[2], &mut rng, 0.5);
    assert_ok(
        "batchnorm2d train",
        finite_diff_check(&[&x, &g, &b], || {
            let (y, _, _) = x.batchnorm2d_train(&g, &b, 1e-5).unwrap();
            y.softplus().mean()
        }, H),
    );
    assert_ok(
        "batchnorm2d eval",
        finite_diff_check(&[&x, &g, &b], || {
            x.batchnorm2d_eval(&g, &b, &[0.3, -0.2], &[1.5, 0.7], 1e-5)
                .unwrap()
                .softplus()
                .mean()
        }, H),
    );
}

#[test]
fn pooling_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(14);
    let x = rand_param(&[2, 3, 6, 6], &mut rng, 1.0);
    assert_ok(
        "global_avg_pool",
        finite_diff_check(&[&x], || {
            x.global_avg_pool().unwrap().softplus().mean()
        }, H),
    );
    assert_ok(
        "max_pool2d",
        finite_diff_check(&[&x], || {
            x.max_pool2d(2, 2).unwrap().softplus().mean()
        }, H),
    );
}

#[test]
fn activation_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(15);
    let x = rand_param(&[4, 7], &mut rng, 2.0);
    assert_ok(
        "softplus",
        finite_diff_check(&[&x], || x.softplus().mul(&x.softplus()).unwrap().mean(), H),
    );
    // keep inputs away from the relu kink so central differences are valid
    {
        let mut d = x.data_mut();
        for v in d.iter_mut() {
            if v.abs() < 0.05 {
                *v = 0.1 * v.signum();
            }
        }
    }
    assert_ok("relu", finite_diff_check(&[&x], || x.relu().mean(), H));
}

#[test]
fn softmax_family_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(16);
    let x = rand_param(&[5, 9], &mut rng, 2.0);
    assert_ok(
        "log_softmax",
        finite_diff_check(&[&x], || {
            x.log_softmax().unwrap().mul(&x.log_softmax().unwrap()).unwrap().mean()
        }, H),
    );
    assert_ok(
        "nll_pick_mean",
        finite_diff_check(&[&x], || {
            x.log_softmax().unwrap().nll_pick_mean(&[0, 3, 8, 2, 4]).unwrap()
        }, H),
    );
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(17);
    let a = rand_param(&[3, 5], &mut rng, 1.0);
    let b = rand_param(&[3, 5], &mut rng, 1.0);
    assert_ok(
        "add/sub/mul/scale/add_scalar",
        finite_diff_check(&[&a, &b], || {
            a.add(&b)
                .unwrap()
                .mul(&a.sub(&b).unwrap())
                .unwrap()
                .scale(0.7)
                .add_scalar(1.3)
                .softplus()
                .mean()
        }, H),
    );
}

#[test]
fn selection_gradients_match_finite_differences() {
    let mut rng = SeedRng::new(18);
    let x = rand_param(&[4, 3], &mut rng, 1.0);
    assert_ok(
        "index_select",
        finite_diff_check(&[&x], || {
            x.index_select(&[1, 2, 3, 0]).unwrap().mul(&x).unwrap().mean()
        }, H),
    );
    let local = rand_param(&[2, 4, 3, 3], &mut rng, 1.0);
    let global = rand_param(&[2, 4], &mut rng, 1.0);
    assert_ok(
        "score_local_global",
        finite_diff_check(&[&local, &global], || {
            local.score_local_global(&global).unwrap().softplus().mean()
        }, H),
    );
}

#[test]
fn composite_network_gradients_match_finite_differences() {
    // conv -> relu -> pool -> linear stack, checked end to end
    let mut rng = SeedRng::new(19);
    let x = rand_input(&[2, 2, 6, 6], &mut rng, 1.0);
    let w1 = rand_param(&[3, 2, 3, 3], &mut rng, 0.4);
    let b1 = rand_param(&[3], &mut rng, 0.2);
    let w2 = rand_param(&[4, 3], &mut rng, 0.4);
    let b2 = rand_param(&[4], &mut rng, 0.2);
    let g = rand_param(&[3], &mut rng, 0.5);
    let be = rand_param(&[3], &mut rng, 0.5);
    let check = finite_diff_check(
        &[&w1, &b1, &w2, &b2, &g, &be],
        || {
            let h = x.conv2d(&w1, Some(&b1), 1, 1).unwrap();
            let (h, _, _) = h.batchnorm2d_train(&g, &be, 1e-5).unwrap();
            let h = h.softplus();
            let h = h.global_avg_pool().unwrap();
            let h = h.linear(&w2, &b2).unwrap();
            h.log_softmax().unwrap().nll_pick_mean(&[1, 3]).unwrap()
        },
        H,
    )
    .unwrap();
    assert!(
        check.max_rel_err < 1e-5,
        "composite: max rel err {}",
        check.max_rel_err
    );
}

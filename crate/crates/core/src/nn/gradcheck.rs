//! Central finite-difference checks for every tape operation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// Checks every scalar of every parameter; returns the worst relative error.
fn check(params: &mut Params, loss: impl Fn(&mut Graph, &Params) -> Var) -> f64 {
    let mut g = Graph::new();
    let l = loss(&mut g, params);
    let grads = g.backward(l, params.len());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        for i in 0..n {
            let orig = params.get(id).as_slice().unwrap()[i];
            params.get_mut(id).as_slice_mut().unwrap()[i] = orig + h;
            let mut gp = Graph::new();
            let lp = loss(&mut gp, params);
            let plus = gp.scalar(lp);
            params.get_mut(id).as_slice_mut().unwrap()[i] = orig - h;
            let mut gm = Graph::new();
            let lm = loss(&mut gm, params);
            let minus = gm.scalar(lm);
            params.get_mut(id).as_slice_mut().unwrap()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[i]);
            let scale = numeric.abs().max(analytic.abs()).max(1e-4);
            worst = worst.max((numeric - analytic).abs() / scale);
        }
    }
    worst
}

#[test]
fn linear_relu_tanh_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = Params::new();
    let lin = Linear::new(&mut p, &mut rng, "l", 3, 4);
    let x = random(&mut rng, 5, 3);
    let target = random(&mut rng, 5, 4);
    let worst = check(&mut p, |g, p| {
        let xv = g.constant(x.clone());
        let y = lin.forward(g, p, xv);
        let y = g.tanh(y);
        let y = g.relu(y);
        let t = g.constant(target.clone());
        g.mse(y, t)
    });
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn conv_instance_norm_l1() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = Params::new();
    let conv = Conv1d::new(&mut p, &mut rng, "c", 3, 4, 3);
    let x = p.add("x", random(&mut rng, 7, 3));
    let target = random(&mut rng, 7, 4);
    let worst = check(&mut p, |g, p| {
        let xv = g.param(p, x);
        let y = conv.forward(g, p, xv);
        let y = g.instance_norm(y, 1e-5);
        let y = g.affine(y, 1.5, 0.3);
        let t = g.constant(target.clone());
        g.l1(y, t)
    });
    assert!(worst < 1e-5, "worst {worst}");
}

#[test]
fn lstm_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = Params::new();
    let fwd = Lstm::new(&mut p, &mut rng, "f", 3, 2, false);
    let bwd = Lstm::new(&mut p, &mut rng, "b", 3, 2, true);
    let x = p.add("x", random(&mut rng, 6, 3));
    let target = random(&mut rng, 6, 4);
    let worst = check(&mut p, |g, p| {
        let xv = g.param(p, x);
        let a = fwd.forward(g, p, xv);
        let b = bwd.forward(g, p, xv);
        let y = g.concat_cols(&[a, b]);
        let t = g.constant(target.clone());
        g.mse(y, t)
    });
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn split_projection_lstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = Params::new();
    let lstm = Lstm::new(&mut p, &mut rng, "l", 5, 3, false);
    let code = p.add("code", random(&mut rng, 2, 3));
    let spk = p.add("spk", random(&mut rng, 1, 2));
    let target = random(&mut rng, 6, 3);
    let worst = check(&mut p, |g, p| {
        let c = g.param(p, code);
        let e = g.param(p, spk);
        let w = g.param(p, lstm.w_ih);
        let wc = g.slice_rows(w, 0, 3);
        let ws = g.slice_rows(w, 3, 5);
        let pc = g.matmul(c, wc);
        let ps = g.matmul(e, ws);
        let up = g.gather_rows(pc, vec![0, 0, 0, 1, 1, 1]);
        let xp = g.add_row(up, ps);
        let b = g.param(p, lstm.b);
        let xp = g.add_row(xp, b);
        let w_hh = g.param(p, lstm.w_hh);
        let y = g.lstm_projected(xp, w_hh, false);
        let t = g.constant(target.clone());
        g.mse(y, t)
    });
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn pooling_gather_normalize_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = Params::new();
    let x = p.add("x", random(&mut rng, 5, 4));
    let head = Linear::new(&mut p, &mut rng, "head", 4, 3);
    let target = vec![0.1, 0.7, 0.2];
    let worst = check(&mut p, |g, p| {
        let xv = g.param(p, x);
        let pooled = g.max_pool_rows(xv, 2);
        let picked = g.gather_rows(pooled, vec![0, 2, 2, 1]);
        let m = g.mean_rows(picked);
        let n = g.l2_normalize_rows(m);
        let logits = head.forward(g, p, n);
        g.soft_cross_entropy(logits, &target)
    });
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn weighted_sum_and_sub() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = Params::new();
    let a = p.add("a", random(&mut rng, 2, 2));
    let b = p.add("b", random(&mut rng, 2, 2));
    let worst = check(&mut p, |g, p| {
        let av = g.param(p, a);
        let bv = g.param(p, b);
        let d = g.sub(av, bv);
        let s = g.add(d, av);
        let z = g.constant(Array2::zeros((2, 2)));
        let l1 = g.mse(s, z);
        let l2 = g.l1(d, z);
        g.weighted_sum(&[(l1, 1.0), (l2, 0.1)])
    });
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn param_reuse_accumulates() {
    let mut p = Params::new();
    let w = p.add("w", ndarray::array![[2.0]]);
    let mut g = Graph::new();
    let a = g.param(&p, w);
    let b = g.param(&p, w);
    assert_eq!(a, b);
    let prod = g.matmul(a, b);
    let z = g.constant(Array2::zeros((1, 1)));
    let loss = g.mse(prod, z);
    // d/dw (w^2)^2 = 4 w^3
    let grads = g.backward(loss, p.len());
    assert!((grads.get(w).unwrap()[[0, 0]] - 32.0).abs() < 1e-12);
}

use nowcast_nn::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Gru, Linear};
use nowcast_nn::{Adam, Graph, Mode, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Compares analytic parameter gradients with central differences for every
/// scalar of every parameter.
fn check<F>(store: &mut ParamStore<f64>, build: F)
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss);
    let h = 1e-6;
    let ids: Vec<_> = store.param_ids().collect();
    for id in ids {
        let analytic = grads.get(id).expect("every parameter participates").clone();
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let mut gp = Graph::new();
            let lp = build(&mut gp, store);
            let fp = gp.value(lp).item();
            store.get_mut(id).data_mut()[k] = orig - h;
            let mut gm = Graph::new();
            let lm = build(&mut gm, store);
            let fm = gm.value(lm).item();
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            assert!(
                err < 1e-5,
                "{}[{k}]: analytic {a} vs numeric {numeric}",
                store.entry(id).name
            );
        }
    }
}

#[test]
fn conv_bn_relu_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "c", 2, 3, 3, 2, 1, true, &mut rng);
    let bn = BatchNorm2d::new(&mut store, "bn", 3);
    let x = random_tensor(&[2, 2, 5, 6], &mut rng);
    let target = random_tensor(&[2, 3, 3, 3], &mut rng);
    // Move gamma/beta off their trivial init so their gradients are generic.
    *store.get_mut(bn.gamma) = random_tensor(&[3], &mut rng);
    *store.get_mut(bn.beta) = random_tensor(&[3], &mut rng);
    check(&mut store, |g, s| {
        let xi = g.input(x.clone());
        let y = conv.forward(g, s, xi);
        let y = bn.forward(g, s, y, Mode::Train);
        let y = g.relu(y);
        g.mse(y, target.clone())
    });
}

#[test]
fn transposed_conv_and_eval_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let up = ConvTranspose2d::new(&mut store, "up", 3, 2, 2, 2, 0, true, &mut rng);
    let up4 = ConvTranspose2d::new(&mut store, "up4", 2, 2, 4, 2, 1, false, &mut rng);
    let bn = BatchNorm2d::new(&mut store, "bn", 2);
    *store.get_mut(bn.running_mean) = random_tensor(&[2], &mut rng);
    let x = random_tensor(&[2, 3, 3, 4], &mut rng);
    let target = random_tensor(&[2, 2, 12, 16], &mut rng);
    check(&mut store, |g, s| {
        let xi = g.input(x.clone());
        let y = up.forward(g, s, xi);
        let y = bn.forward(g, s, y, Mode::Eval);
        let y = g.tanh(y);
        let y = up4.forward(g, s, y);
        g.mse(y, target.clone())
    });
}

#[test]
fn pointwise_conv_concat_reshape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let a = Conv2d::new(&mut store, "a", 2, 2, 1, 1, 0, true, &mut rng);
    let b = Conv2d::new(&mut store, "b", 2, 1, 3, 1, 1, false, &mut rng);
    let lin = Linear::new(&mut store, "lin", 12, 6, true, &mut rng);
    let x = random_tensor(&[2, 2, 2, 2], &mut rng);
    check(&mut store, |g, s| {
        let xi = g.input(x.clone());
        let ya = a.forward(g, s, xi);
        let yb = b.forward(g, s, xi);
        let cat = g.concat(ya, yb);
        let flat = g.reshape(cat, &[2, 12]);
        let z = lin.forward(g, s, flat);
        let z = g.sigmoid(z);
        let z = g.scale(z, 0.7);
        let sq = g.mul(z, z);
        g.sum(sq)
    });
}

#[test]
fn gru_through_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", 3, 4, &mut rng);
    let xs: Vec<_> = (0..3).map(|_| random_tensor(&[2, 3], &mut rng)).collect();
    let target = random_tensor(&[2, 4], &mut rng);
    check(&mut store, |g, s| {
        let vars: Vec<_> = xs.iter().map(|x| g.input(x.clone())).collect();
        let h = gru.run(g, s, &vars);
        g.mse(h, target.clone())
    });
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut store = ParamStore::new();
    let w = store.add_param("w", Tensor::from_vec(&[1, 1], vec![3.0]));
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(&[1, 1], vec![2.0]));
    let w1 = g.param(&store, w);
    let y = g.linear(x, w1, None);
    let w2 = g.param(&store, w);
    assert_eq!(w1, w2);
    let z = g.linear(y, w2, None);
    let loss = g.sum(z);
    // z = w^2 x, dz/dw = 2 w x = 12
    assert_eq!(g.backward(loss).get(w).unwrap().data(), &[12.0]);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add_param("w", Tensor::from_vec(&[2], vec![3.0, -2.0]));
    let mut opt = Adam::new(0.1);
    for _ in 0..500 {
        let mut g = Graph::new();
        let p = g.param(&store, w);
        let loss = g.mse(p, Tensor::from_vec(&[2], vec![1.0, 0.5]));
        let grads = g.backward(loss);
        opt.step(&mut store, &grads);
    }
    let v = store.get(w).data();
    assert!(
        (v[0] - 1.0).abs() < 1e-3 && (v[1] - 0.5).abs() < 1e-3,
        "{v:?}"
    );
}

#[test]
fn running_stats_follow_momentum() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm2d::new(&mut store, "bn", 1);
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]));
    bn.forward(&mut g, &store, x, Mode::Train);
    store.apply_running_stats(g.running_updates());
    assert!((store.get(bn.running_mean).item() - 0.25).abs() < 1e-12);
    // unbiased variance of 1..4 is 5/3
    assert!((store.get(bn.running_var).item() - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
}

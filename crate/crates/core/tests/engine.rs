use lsdm::engine::{Activation, Adam, AdamConfig, Graph, MlpSpec, Network, Tensor};
use lsdm::Rng;

/// `mean((net(x) − y)²)` and its parameter gradients.
fn loss_and_grads(net: &Network, x: &Tensor, y: &Tensor) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let b = net.bind(&mut g);
    let xi = g.constant(x.clone());
    let yi = g.constant(y.clone());
    let out = b.forward(&mut g, xi).unwrap();
    let d = g.sub(out, yi);
    let sq = g.square(d);
    let loss = g.mean(sq);
    let grads = g.grad_values(loss, &b.params()).unwrap();
    (g.value(loss).item(), grads)
}

#[test]
fn parameter_gradients_match_central_differences() {
    let mut rng = Rng::new(17);
    let h = 1e-6;
    for act in [Activation::Tanh, Activation::Sigmoid, Activation::LeakyRelu(0.1)] {
        let mut net = Network::build(&MlpSpec::new(&[3, 5, 4, 2], act, Activation::Linear), &mut rng).unwrap();
        for b in net.params_mut().into_iter().skip(1).step_by(2) {
            b.data_mut().iter_mut().for_each(|v| *v = 0.1 * rng.normal());
        }
        let x = Tensor::new(6, 3, rng.normal_vec(18)).unwrap();
        let y = Tensor::new(6, 2, rng.normal_vec(12)).unwrap();
        let (_, grads) = loss_and_grads(&net, &x, &y);
        for (k, grad) in grads.iter().enumerate() {
            for i in 0..grad.len() {
                let mut up = net.clone();
                let mut down = net.clone();
                up.params_mut()[k].data_mut()[i] += h;
                down.params_mut()[k].data_mut()[i] -= h;
                let fd = (loss_and_grads(&up, &x, &y).0 - loss_and_grads(&down, &x, &y).0) / (2.0 * h);
                let ad = grad.data()[i];
                assert!((fd - ad).abs() <= 1e-6 * ad.abs().max(1e-3), "{act:?} param {k}[{i}]: {fd} vs {ad}");
            }
        }
    }
}

#[test]
fn graph_forward_matches_direct_forward() {
    let mut rng = Rng::new(3);
    let net = Network::build(&MlpSpec::new(&[2, 16, 16, 1], Activation::LeakyRelu(0.2), Activation::Tanh), &mut rng).unwrap();
    let x = Tensor::new(50, 2, rng.normal_vec(100)).unwrap();
    let mut g = Graph::new();
    let b = net.bind(&mut g);
    let xi = g.constant(x.clone());
    let out = b.forward(&mut g, xi).unwrap();
    let direct = net.forward(&x).unwrap();
    for (a, b) in g.value(out).data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn adam_fits_a_linear_map() {
    let mut rng = Rng::new(8);
    let mut net = Network::build(&MlpSpec::new(&[2, 1], Activation::Linear, Activation::Linear), &mut rng).unwrap();
    let x = Tensor::new(64, 2, rng.normal_vec(128)).unwrap();
    let y = Tensor::column(&x.row_iter().map(|r| 2.0 * r[0] - r[1] + 0.5).collect::<Vec<_>>());
    let mut opt = Adam::new(AdamConfig::new(0.05, 0.9, 0.999), &net.param_shapes()).unwrap();
    let start = loss_and_grads(&net, &x, &y).0;
    for _ in 0..500 {
        let (_, grads) = loss_and_grads(&net, &x, &y);
        opt.step(&mut net.params_mut(), &grads).unwrap();
    }
    let end = loss_and_grads(&net, &x, &y).0;
    assert!(end < 1e-6 && end < start, "{start} -> {end}");
}

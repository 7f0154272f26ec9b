//! Central finite-difference checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shufa_autograd::{Graph, StyleRoute, Tensor, Var};

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn eval(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars);
    g.value(out).data()[0]
}

fn check(build: &Build, inputs: Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fd = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let tol = 1e-6 * (1.0 + a.abs().max(fd.abs()));
            assert!((a - fd).abs() <= tol, "input {k} elem {i}: analytic {a} vs fd {fd}");
        }
    }
}

#[test]
fn conv2d_all_strides() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let build: Box<Build> = Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            let y2 = g.scale(y, 0.5);
            let sq = g.row_distance(y2, y).unwrap();
            g.sum(sq)
        });
        check(
            &build,
            vec![
                random(&[2, 2, 5, 4], &mut rng),
                random(&[3, 2, 3, 3], &mut rng),
                random(&[3], &mut rng),
            ],
        );
    }
}

#[test]
fn pooling_and_linear_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let build: Box<Build> = Box::new(|g, v| {
        let p = g.max_pool2(v[0]).unwrap();
        let gap = g.global_avg_pool(p).unwrap();
        let l = g.linear(gap, v[1], Some(v[2])).unwrap();
        let s = g.softmax(l);
        let z = g.constant(Tensor::zeros(&[2, 4]));
        let d = g.row_distance(s, z).unwrap();
        g.sum(d)
    });
    check(
        &build,
        vec![
            random(&[2, 3, 4, 4], &mut rng),
            random(&[4, 3], &mut rng),
            random(&[4], &mut rng),
        ],
    );
}

#[test]
fn relu_abs_and_hinge_pieces() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let build: Box<Build> = Box::new(|g, v| {
        let r = g.relu(v[0]);
        let a = g.abs(v[1]);
        let d = g.sub(r, a).unwrap();
        let s = g.add_scalar(d, 0.3);
        let m = g.mean(s);
        let sl = g.slice_items(v[0], 1, 2).unwrap();
        let ss = g.sum(sl);
        let sum = g.add(m, ss).unwrap();
        g.scale(sum, 2.0)
    });
    check(&build, vec![random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)]);
}

#[test]
fn grid_scale_both_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let build: Box<Build> = Box::new(|g, v| {
        let y = g.grid_scale(v[0], v[1], &[0, 2, 5, 7], &[0, 1, 3, 4]).unwrap();
        let z = g.constant(Tensor::full(&[2, 2, 7, 4], 0.1));
        let d = g.row_distance(y, z).unwrap();
        g.sum(d)
    });
    check(&build, vec![random(&[2, 2, 7, 4], &mut rng), random(&[2, 9], &mut rng)]);
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let build: Box<Build> = Box::new(|g, v| g.cross_entropy(v[0], &[2, 0, 1]).unwrap());
    check(&build, vec![random(&[3, 4], &mut rng)]);
}

#[test]
fn style_distance_routes_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &route in &[StyleRoute::Spatial, StyleRoute::Channel, StyleRoute::Auto] {
        let build: Box<Build> = Box::new(move |g, v| {
            let d = g.style_distance(v[0], v[1], route).unwrap();
            g.sum(d)
        });
        check(
            &build,
            vec![random(&[2, 3, 2, 3], &mut rng), random(&[2, 3, 2, 3], &mut rng)],
        );
    }
    // both routes compute the same quantity
    for shape in [[3, 2, 3, 3], [3, 7, 2, 2]] {
        let a = random(&shape, &mut rng);
        let b = random(&shape, &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let s = g.style_distance(va, vb, StyleRoute::Spatial).unwrap();
        let c = g.style_distance(va, vb, StyleRoute::Channel).unwrap();
        for (x, y) in g.value(s).data().iter().zip(g.value(c).data()) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }
}

#[test]
fn explicit_style_and_gram_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let build: Box<Build> = Box::new(|g, v| {
        let s = g.style_matrix(v[0]).unwrap();
        let gm = g.gram_matrix(v[0]).unwrap();
        let zs = g.constant(Tensor::full(&[2, 4, 4], 0.2));
        let zg = g.constant(Tensor::full(&[2, 3, 3], -0.1));
        let d1 = g.row_distance(s, zs).unwrap();
        let d2 = g.row_distance(gm, zg).unwrap();
        let t = g.add(d1, d2).unwrap();
        g.sum(t)
    });
    check(&build, vec![random(&[2, 3, 2, 2], &mut rng)]);
}

#[test]
fn frozen_leaves_receive_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::new();
    let x = g.leaf(random(&[1, 1, 4, 4], &mut rng), true);
    let w = g.leaf(random(&[2, 1, 3, 3], &mut rng), false);
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_some());
    assert!(grads.get(w).is_none());
}

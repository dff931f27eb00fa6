//! Hand-computed values for the loss, the optimizer and the probe.

use clipdesk_core::autodiff::Tape;
use clipdesk_core::probe::{train_probe, FrozenSplit, Shots};
use clipdesk_core::trainer::{adam_update, contrastive_loss, similarity_matrix, AdamHyper, AdamMoments};
use clipdesk_core::Tensor;

fn hyper(lr: f64) -> AdamHyper {
    AdamHyper {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    }
}

#[test]
fn adam_two_scalar_steps() {
    // values from 50-digit decimal arithmetic
    let mut m = AdamMoments::zeros(1);
    let mut p = [1.0];
    adam_update(&mut m, 1, &mut p, &[0.5], &hyper(0.1)).unwrap();
    assert!((p[0] - 0.900_000_002).abs() < 1e-12, "{}", p[0]);
    adam_update(&mut m, 2, &mut p, &[-0.25], &hyper(0.1)).unwrap();
    assert!((p[0] - 0.873_366_298_707_846_2).abs() < 1e-12, "{}", p[0]);
}

#[test]
fn adam_moments_carry_over() {
    let mut carried = AdamMoments::zeros(1);
    let mut a = [1.0];
    adam_update(&mut carried, 1, &mut a, &[0.5], &hyper(0.1)).unwrap();
    let start = a[0];
    adam_update(&mut carried, 2, &mut a, &[-0.25], &hyper(0.1)).unwrap();

    let mut fresh = AdamMoments::zeros(1);
    let mut b = [start];
    adam_update(&mut fresh, 2, &mut b, &[-0.25], &hyper(0.1)).unwrap();
    assert_ne!(a[0].to_bits(), b[0].to_bits());
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut m = AdamMoments::zeros(3);
    let mut p = [0.5, -1.0, 2.0];
    for step in 1..=10 {
        adam_update(&mut m, step, &mut p, &[0.0; 3], &hyper(0.1)).unwrap();
    }
    assert_eq!(p, [0.5, -1.0, 2.0]);
}

#[test]
fn uniform_similarities_give_ln_n() {
    let s = Tensor::matrix(4, 4, vec![3.7; 16]).unwrap();
    assert!((contrastive_loss(&s).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-9);
    let one = Tensor::matrix(1, 1, vec![-2.0]).unwrap();
    assert_eq!(contrastive_loss(&one).unwrap(), 0.0);
}

#[test]
fn diagonal_plus_ten_off_minus_ten() {
    let mut data = vec![-10.0; 9];
    for i in 0..3 {
        data[i * 4] = 10.0;
    }
    let got = contrastive_loss(&Tensor::matrix(3, 3, data).unwrap()).unwrap();
    // ln(1 + 2e⁻²⁰) in 50-digit decimal arithmetic
    assert!((got - 4.122_307_236_380_407_2e-9).abs() < 1e-10, "{got}");
    // and in plain f64 scalar arithmetic
    let row = -(10f64.exp() / (10f64.exp() + 2.0 * (-10f64).exp())).ln();
    assert!((got - row).abs() < 1e-10);
}

#[test]
fn identical_embeddings_give_constant_similarity() {
    let v = vec![vec![0.6, 0.8]; 4];
    let s = similarity_matrix(&v, &v, 1.5).unwrap();
    for x in s.data() {
        assert!((x - 1.5f64.exp()).abs() < 1e-12);
    }
    assert!((contrastive_loss(&s).unwrap() - 4f64.ln()).abs() < 1e-9);
}

#[test]
fn backward_sums_path_products() {
    // f = a·b + a·b: two paths, each contributing bᵀ to df/da and aᵀ to df/db
    let mut tape = Tape::new();
    let a = tape.param(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = tape.param(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let p1 = tape.matmul(a, b).unwrap();
    let p2 = tape.matmul(a, b).unwrap();
    let s = tape.add(p1, p2).unwrap();
    let f = tape.sum(s).unwrap();
    tape.backward(f).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[6.0, 8.0]);
    assert_eq!(tape.grad(b).unwrap(), &[2.0, 4.0]);
}

#[test]
fn independent_tapes_match_sequential_runs() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let y = tape.log_softmax_rows(x).unwrap();
        let y = tape.nll(y, &[1, 0]).unwrap();
        tape.backward(y).unwrap();
        tape.grad(x).unwrap().to_vec()
    };
    let sequential = run();
    let threads: Vec<_> = (0..4).map(|_| std::thread::spawn(run)).collect();
    for t in threads {
        assert_eq!(t.join().unwrap(), sequential);
    }
}

#[test]
fn separable_toy_probe() {
    let embs = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
    let train = FrozenSplit {
        embs,
        labels: vec![0, 1, 0, 1],
    };
    let classes = vec!["pos".to_string(), "neg".to_string()];
    let probe = train_probe(&train, &classes, Shots::All, 1e-3, 1).unwrap();
    assert_eq!(probe.accuracy(&train).unwrap(), 1.0);
    let shrunk = train_probe(&train, &classes, Shots::All, 1e6, 1).unwrap();
    assert!(shrunk.weight_norm() < 1e-2);
}

mod common;

use cornerstr::data::PAD;
use cornerstr::losses::{cc_loss, cc_valid, ce_loss, total_loss, CcOptions};
use cornerstr::tensor::{grad_check, GradCheckInput};
use cornerstr::{Error, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use common::rng;

fn unit_rows(r: &mut impl Rng, n: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(v.iter().map(|x| x / norm));
    }
    out
}

fn opts(tau: f64) -> CcOptions {
    CcOptions {
        tau,
        ..CcOptions::default()
    }
}

fn cc(x: &[f64], d: usize, labels: &[usize], valid: &[bool], o: &CcOptions) -> cornerstr::Result<f64> {
    let t = Tensor::new(&[labels.len(), d], x.to_vec())?;
    cc_loss(&t, labels, valid, o)?.item()
}

/// Direct double loop: each ratio is formed from explicit exponentials.
fn cc_oracle(x: &[f64], d: usize, labels: &[usize], valid: &[bool], tau: f64, raw_sum: bool) -> f64 {
    let n = labels.len();
    let dot = |i: usize, j: usize| (0..d).map(|k| x[i * d + k] * x[j * d + k]).sum::<f64>() / tau;
    let (mut total, mut anchors) = (0.0, 0);
    for i in (0..n).filter(|&i| valid[i]) {
        let pos: Vec<usize> = (0..n).filter(|&p| p != i && valid[p] && labels[p] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..n).filter(|&j| j != i && valid[j]).map(|j| dot(i, j).exp()).sum();
        let term: f64 = pos.iter().map(|&p| (dot(i, p).exp() / denom).ln()).sum();
        total -= term / pos.len() as f64;
        anchors += 1;
    }
    if raw_sum || anchors == 0 {
        total
    } else {
        total / anchors as f64
    }
}

#[test]
fn contrastive_matches_double_loop() {
    let mut r = rng(1);
    for trial in 0..20 {
        let d = 8;
        let labels: Vec<usize> = (0..12).map(|_| r.random_range(0..5)).collect();
        let valid = cc_valid(&labels, false);
        let x = unit_rows(&mut r, 12, d);
        for raw_sum in [false, true] {
            let o = CcOptions { tau: 0.5, include_pad: false, raw_sum };
            let got = cc(&x, d, &labels, &valid, &o).unwrap();
            let want = cc_oracle(&x, d, &labels, &valid, 0.5, raw_sum);
            assert!((got - want).abs() < 1e-10, "trial {trial}: {got} vs {want}");
        }
    }
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let mut r = rng(2);
    let (rows, v) = (9, 7);
    let logits: Vec<f64> = (0..rows * v).map(|_| r.random_range(-4.0..4.0)).collect();
    let targets: Vec<usize> = (0..rows).map(|_| r.random_range(0..v)).collect();
    let mask: Vec<bool> = (0..rows).map(|i| i % 4 != 3).collect();
    let got = ce_loss(&Tensor::new(&[3, 3, v], logits.clone()).unwrap(), &targets, &mask).unwrap().item().unwrap();
    let mut sum = 0.0;
    for i in (0..rows).filter(|&i| mask[i]) {
        let row = &logits[i * v..(i + 1) * v];
        let z: f64 = row.iter().map(|a| a.exp()).sum();
        sum -= (row[targets[i]].exp() / z).ln();
    }
    let want = sum / mask.iter().filter(|&&m| m).count() as f64;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn lower_temperature_penalizes_imperfect_clusters_more() {
    // every anchor's negative is closer than its positive
    let deg = |a: f64| [a.to_radians().cos(), a.to_radians().sin()];
    let x: Vec<f64> = [deg(0.0), deg(120.0), deg(30.0), deg(150.0)].concat();
    let labels = [3, 3, 4, 4];
    let valid = [true; 4];
    let losses: Vec<f64> = [0.15, 0.1, 0.05]
        .iter()
        .map(|&t| cc(&x, 2, &labels, &valid, &opts(t)).unwrap())
        .collect();
    assert!(losses[0] < losses[1] && losses[1] < losses[2], "{losses:?}");
}

#[test]
fn contrastive_is_permutation_symmetric_and_nonnegative() {
    let mut r = rng(3);
    let d = 6;
    for _ in 0..20 {
        let n = 10;
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let valid = cc_valid(&labels, false);
        let x = unit_rows(&mut r, n, d);
        let base = cc(&x, d, &labels, &valid, &opts(0.1)).unwrap();
        assert!(base >= 0.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let pv: Vec<bool> = perm.iter().map(|&i| valid[i]).collect();
        let shuffled = cc(&px, d, &pl, &pv, &opts(0.1)).unwrap();
        assert!((base - shuffled).abs() < 1e-12, "{base} vs {shuffled}");
    }
}

#[test]
fn contrastive_gradient_passes_check() {
    let mut r = rng(4);
    let labels = [3, 3, 4, 4, 4, 5, 5, 3];
    let x = GradCheckInput::new(&[8, 5], (0..40).map(|_| r.random_range(-1.0..1.0)).collect());
    let f = |t: &[Tensor]| {
        let z = t[0].l2_normalize(1, 1e-12)?;
        cc_loss(&z, &labels, &[true; 8], &opts(0.1))
    };
    let e = grad_check(f, &[x], 1e-5).unwrap();
    assert!(e <= 1e-4, "{e}");
}

#[test]
fn invalid_inputs_are_rejected() {
    let x = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    for tau in [0.0, -0.1, f64::NAN] {
        assert!(matches!(cc_loss(&x, &[3, 3], &[true; 2], &opts(tau)), Err(Error::Param(_))));
    }
    assert!(matches!(ce_loss(&x, &[0, 1], &[false, false]), Err(Error::Contract(_))));
    assert!(matches!(ce_loss(&x, &[0], &[true]), Err(Error::Dimension(_))));
}

#[test]
fn padding_joins_only_when_requested() {
    let mut r = rng(5);
    let d = 4;
    let labels = [5, 5, 6, PAD, PAD, 6];
    let x = unit_rows(&mut r, 6, d);
    for include_pad in [false, true] {
        let valid = cc_valid(&labels, include_pad);
        assert_eq!(valid[3], include_pad);
        let o = CcOptions { tau: 0.1, include_pad, raw_sum: false };
        let got = cc(&x, d, &labels, &valid, &o).unwrap();
        assert!((got - cc_oracle(&x, d, &labels, &valid, 0.1, false)).abs() < 1e-10);
    }
    let without = cc(&x, d, &labels, &cc_valid(&labels, false), &opts(0.1)).unwrap();
    let with = cc(&x, d, &labels, &cc_valid(&labels, true), &opts(0.1)).unwrap();
    assert_ne!(without, with);
}

#[test]
fn total_combines_linearly() {
    let mut r = rng(6);
    for _ in 0..100 {
        let (ce, cc, lambda) = (r.random_range(0.0..5.0), r.random_range(0.0..5.0), r.random_range(0.0..1.0));
        let rep = total_loss(ce, cc, lambda, 0.1);
        assert!((rep.total - (ce + lambda * cc)).abs() < 1e-12);
    }
    assert_eq!(total_loss(1.7, 123.0, 0.0, 0.1).total, 1.7);
}

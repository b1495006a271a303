//! Operations checked against independent reference computations.

mod common;

use approx::assert_relative_eq;
use avfuse_core::fusion::{early_fuse, late_fuse};
use avfuse_core::metrics::Evaluator;
use avfuse_core::postprocess::{
    apply_chain, median_filter, tune_chain, ChainData, SearchSpace, Step,
};
use avfuse_core::svr::{
    grid_search, train_svr, GridSpec, Kernel, Objective, SmoOptions, SvrHyperParams,
};
use avfuse_core::timeseries::{
    apply_mask_for_training, impute_predictions, scan_delay, shift_gold, FeatureStream,
};
use avfuse_core::{ccc, mae, pearson, AffectDimension, AffectTrace, FrameMask, Matrix};
use common::*;
use rand::Rng;

fn random_pair(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let g: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let p = g.iter().map(|&x| 0.7 * x + 0.1 + 0.3 * normal(&mut r)).collect();
    (p, g)
}

#[test]
fn metrics_match_loop_oracles() {
    let (p, g) = random_pair(1, 1000);
    assert!(close(mae(&p, &g).unwrap(), mae_oracle(&p, &g), 1e-12));
    assert!(close(pearson(&p, &g).unwrap(), pearson_oracle(&p, &g), 1e-12));
    let rep = ccc(&p, &g).unwrap();
    assert!(close(rep.ccc, ccc_oracle(&p, &g), 1e-12));
    let m = moments(&p, &g);
    assert!(close(rep.var_pred, m.var_p, 1e-12));
    assert!(close(rep.var_gold, m.var_g, 1e-12));
    assert!(close(rep.mean_pred, m.mean_p, 1e-12));
    assert!(close(rep.mean_gold, m.mean_g, 1e-12));
}

#[test]
fn ccc_reproduces_from_its_stored_moments() {
    for seed in 0..50 {
        let (p, g) = random_pair(100 + seed, 500);
        let r = ccc(&p, &g).unwrap();
        let rebuilt = 2.0 * r.pearson * r.var_pred.sqrt() * r.var_gold.sqrt()
            / (r.var_pred + r.var_gold + (r.mean_pred - r.mean_gold).powi(2));
        assert!(close(r.ccc, rebuilt, 1e-12), "{} vs {rebuilt}", r.ccc);
    }
}

#[test]
fn compensated_moments_survive_large_offsets() {
    // constant offset of 1e6 on 1e5 frames: naive sums lose digits, centred
    // oracle values do not depend on the offset
    let (p, g) = random_pair(7, 100_000);
    let base = ccc(&p, &g).unwrap().ccc;
    let shift = |xs: &[f64]| xs.iter().map(|x| x + 1e6).collect::<Vec<_>>();
    let shifted = ccc(&shift(&p), &shift(&g)).unwrap().ccc;
    assert!((base - shifted).abs() < 1e-9, "{base} vs {shifted}");
}

#[test]
fn impute_matches_index_walk() {
    for seed in 0..100 {
        let mut r = rng(200 + seed);
        let n = r.random_range(1..300);
        let mask = FrameMask {
            valid: (0..n).map(|_| r.random_bool(0.6)).collect(),
        };
        let pred: Vec<f64> = (0..mask.valid_count()).map(|_| normal(&mut r)).collect();
        let fill = r.random_range(-1.0..1.0);
        let mut want = Vec::with_capacity(n);
        let (mut k, mut last) = (0, fill);
        for t in 0..n {
            if mask.valid[t] {
                last = pred[k];
                k += 1;
            }
            want.push(last);
        }
        assert_eq!(impute_predictions(&pred, &mask, fill).unwrap(), want);
    }
}

#[test]
fn shift_and_mask_index_arithmetic() {
    let mut r = rng(3);
    let vals: Vec<f64> = (0..200).map(|_| r.random_range(-1.0..1.0)).collect();
    let g = AffectTrace::gold(AffectDimension::Arousal, 0.04, vals.clone(), "s").unwrap();
    for d in [0, 1, 17, 199] {
        let s = shift_gold(&g, d).unwrap();
        assert_eq!(s.len(), 200 - d);
        for t in 0..s.len() {
            assert_eq!(s.values[t], vals[t + d]);
        }
    }
    assert!(shift_gold(&g, 200).unwrap_err().to_string().contains("delay exceeds trace"));

    // 22% invalid frames leave 78% of the rows
    let n = 1000;
    let mut valid = vec![true; n];
    for t in rand::seq::index::sample(&mut r, n, 220) {
        valid[t] = false;
    }
    let frames = Matrix::from_vec(n, 2, (0..2 * n).map(|i| i as f64).collect()).unwrap();
    let stream = FeatureStream::new("v", frames, FrameMask { valid: valid.clone() }, 0.04).unwrap();
    let gold = AffectTrace::gold(AffectDimension::Arousal, 0.04, vec![0.5; n], "s").unwrap();
    let (x, y) = apply_mask_for_training(&stream, &gold).unwrap();
    assert_eq!(x.rows(), 780);
    assert_eq!(y.len(), 780);
    let kept: Vec<usize> = (0..n).filter(|&t| valid[t]).collect();
    for (row, &t) in kept.iter().enumerate() {
        assert_eq!(x.row(row), stream.frames.row(t));
    }
}

#[test]
fn late_fuse_matches_frame_loop() {
    let mut r = rng(4);
    let preds: Vec<Vec<f64>> = (0..3).map(|_| (0..500).map(|_| normal(&mut r)).collect()).collect();
    let refs: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
    let uniform = late_fuse(&refs, None).unwrap();
    let w = [0.2, 0.5, 0.3];
    let weighted = late_fuse(&refs, Some(&w)).unwrap();
    for t in 0..500 {
        let avg = (preds[0][t] + preds[1][t] + preds[2][t]) / 3.0;
        let wsum = w[0] * preds[0][t] + w[1] * preds[1][t] + w[2] * preds[2][t];
        assert!((uniform[t] - avg).abs() <= 1e-12);
        assert!((weighted[t] - wsum).abs() <= 1e-12);
    }
}

#[test]
fn early_fuse_concatenates_50_and_88() {
    let mk = |name: &str, dim: usize, valid: Vec<bool>| {
        let n = valid.len();
        FeatureStream::new(name, Matrix::zeros(n, dim), FrameMask { valid }, 0.04).unwrap()
    };
    let video = mk("video-fc50", 50, vec![true, false, true]);
    let audio = mk("audio-egemaps", 88, vec![true, true, false]);
    let fused = early_fuse(&[&video, &audio]).unwrap();
    assert_eq!(fused.dim(), 138);
    assert_eq!(fused.mask.valid, vec![true, false, false]);
}

fn random_problem(seed: u64, n: usize, d: usize) -> (Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut r) * 3.0 + 1.0).collect()).collect();
    let y = rows.iter().map(|x| (0.3 * x[0] - 0.1 * x[d - 1]).tanh() + 0.05 * normal(&mut r)).collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn predict_matches_double_loop_kernel_sum() {
    for kernel in [Kernel::Linear, Kernel::Rbf { gamma: 0.3 }] {
        let (x, y) = random_problem(5, 120, 4);
        let model = train_svr(&x, &y, &SvrHyperParams::new(1.0, 0.05, kernel).unwrap(), &SmoOptions::default()).unwrap();
        let (xt, _) = random_problem(6, 40, 4);
        let got = model.predict(&xt).unwrap();
        for i in 0..xt.rows() {
            let z: Vec<f64> = (0..4)
                .map(|k| (xt.get(i, k) - model.standardizer.mean[k]) / model.standardizer.std[k])
                .collect();
            let mut f = model.bias;
            for s in 0..model.n_support() {
                let sv = model.support_vectors.row(s);
                let kv = match kernel {
                    Kernel::Linear => (0..4).map(|k| sv[k] * z[k]).sum::<f64>(),
                    Kernel::Rbf { gamma } => (-gamma * (0..4).map(|k| (sv[k] - z[k]).powi(2)).sum::<f64>()).exp(),
                };
                f += model.dual_coefs[s] * kv;
            }
            assert!((got[i] - f).abs() <= 1e-10, "{kernel}: {} vs {f}", got[i]);
        }
        let twice = Matrix::from_rows(&[xt.row(0), xt.row(0)]).unwrap();
        let p = model.predict(&twice).unwrap();
        assert_eq!(p[0], p[1]);
    }
}

#[test]
fn standardized_training_rows_have_unit_moments() {
    let (x, y) = random_problem(8, 200, 3);
    let model = train_svr(&x, &y, &SvrHyperParams::linear(1.0, 0.1).unwrap(), &SmoOptions::default()).unwrap();
    let z = model.standardizer.transform(&x).unwrap();
    for k in 0..3 {
        let col: Vec<f64> = (0..200).map(|i| z.get(i, k)).collect();
        let m = moments(&col, &col);
        assert_relative_eq!(m.mean_p, 0.0, epsilon = 1e-12);
        assert_relative_eq!(m.var_p, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn five_point_instance_matches_dense_qp() {
    let xs = [-1.0, -0.3, 0.2, 0.9, 1.5];
    let y = [-0.8, -0.1, 0.35, 0.5, 1.0];
    let x = Matrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
    let opts = SmoOptions {
        tol: 1e-10,
        ..SmoOptions::default()
    };
    let model = train_svr(&x, &y, &SvrHyperParams::linear(1.0, 0.1).unwrap(), &opts).unwrap();
    let z = standardize(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
    let k: Vec<Vec<f64>> = z.iter().map(|a| z.iter().map(|b| a[0] * b[0]).collect()).collect();
    let (_, best) = qp_oracle(&k, &y, 1.0, 0.1);
    assert!((model.info.dual_objective - best).abs() <= 1e-6, "{} vs {best}", model.info.dual_objective);
}

#[test]
fn grid_matches_sequential_loop() {
    let (xt, yt) = random_problem(9, 150, 3);
    let (xd, yd) = random_problem(10, 80, 3);
    let grid = GridSpec {
        c_values: vec![0.01, 0.1, 1.0],
        epsilon_values: vec![0.01, 0.2],
        kernels: vec![Kernel::Linear, Kernel::Rbf { gamma: 0.5 }],
    };
    let opts = SmoOptions::default();
    let result = grid_search(&grid, (&xt, &yt), (&xd, &yd), Objective::Ccc, &opts).unwrap();
    let mut best: Option<(f64, f64, f64, usize)> = None;
    for (i, hyper) in grid.cells().unwrap().iter().enumerate() {
        let m = train_svr(&xt, &yt, hyper, &opts).unwrap();
        let score = ccc(&m.predict(&xd).unwrap(), &yd).unwrap().ccc;
        assert_eq!(result.table[i].score, Some(score));
        let better = match best {
            None => true,
            Some((s, c, e, _)) => score > s || (score == s && (hyper.c, hyper.epsilon) < (c, e)),
        };
        if better {
            best = Some((score, hyper.c, hyper.epsilon, i));
        }
    }
    assert_eq!(result.best_index, best.unwrap().3);
}

#[test]
fn delay_scan_finds_injected_lag() {
    let mut r = rng(11);
    let vals = smooth_trace(&mut r, 600);
    let gold = AffectTrace::gold(AffectDimension::Arousal, 0.04, vals.clone(), "s").unwrap();
    // prediction at t anticipates gold at t + 10
    let pred: Vec<f64> = (0..600).map(|t| vals[(t + 10).min(599)]).collect();
    let scan = scan_delay(&gold, &pred, &(0..=20).collect::<Vec<_>>()).unwrap();
    assert_eq!(scan.best_delay, 10);
    assert_eq!(scan.ccc_per_delay.len(), 21);

    let noise: Vec<f64> = (0..600).map(|_| normal(&mut r)).collect();
    let scan = scan_delay(&gold, &noise, &(0..=20).collect::<Vec<_>>()).unwrap();
    for (d, c) in scan.ccc_per_delay {
        assert!(c.abs() < 0.1, "delay {d}: {c}");
    }
}

#[test]
fn tuner_leaves_perfect_predictions_alone() {
    let mut r = rng(12);
    let gold = smooth_trace(&mut r, 500);
    let train = smooth_trace(&mut r, 500);
    let data = ChainData {
        raw_dev_pred: &gold,
        gold_dev: &gold,
        dev_segments: &[],
        raw_train_pred: &train,
        gold_train: &train,
        frame_period_s: 0.04,
    };
    let tuned = tune_chain(data, &SearchSpace::default(), &Evaluator::global()).unwrap();
    assert!(tuned.params.step_order.is_empty(), "{:?}", tuned.params);
    assert_eq!(tuned.table.len(), 64);
}

#[test]
fn tuner_undoes_shrinkage_and_impulses() {
    let mut r = rng(13);
    let noisy = |g: &[f64], r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        g.iter()
            .map(|&v| {
                let impulse = if r.random_bool(0.05) { r.random_range(-1.0..1.0) } else { 0.0 };
                0.5 * v + impulse
            })
            .collect()
    };
    let gold_dev: Vec<f64> = smooth_trace(&mut r, 2000).iter().map(|v| v - 0.1).collect();
    let gold_train: Vec<f64> = smooth_trace(&mut r, 2000).iter().map(|v| v - 0.1).collect();
    let pred_dev = noisy(&gold_dev, &mut r);
    let pred_train = noisy(&gold_train, &mut r);
    let data = ChainData {
        raw_dev_pred: &pred_dev,
        gold_dev: &gold_dev,
        dev_segments: &[],
        raw_train_pred: &pred_train,
        gold_train: &gold_train,
        frame_period_s: 0.04,
    };
    let tuned = tune_chain(data, &SearchSpace::default(), &Evaluator::global()).unwrap();
    let p = &tuned.params;
    assert!(p.step_order.contains(&Step::Median), "{p:?}");
    assert!(p.step_order.contains(&Step::Scale), "{p:?}");
    let beta = p.beta.unwrap();
    assert!((beta - 2.0).abs() < 0.5, "beta {beta}");
    let out = apply_chain(p, &pred_dev, &[], 0.04).unwrap();
    assert!(ccc(&out.output, &gold_dev).unwrap().ccc > ccc(&pred_dev, &gold_dev).unwrap().ccc);
}

#[test]
fn median_window_in_seconds() {
    let x = [0.0, 0.0, 10.0, 0.0, 0.0];
    // 0.12 s at 25 fps is three frames
    assert_eq!(median_filter(&x, 0.12, 0.04, true).unwrap(), vec![0.0; 5]);
    assert!(median_filter(&x, 0.12, 0.04, false).is_err());
}

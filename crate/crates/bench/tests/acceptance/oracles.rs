//! Independent recomputations used by the acceptance criteria. Each returns
//! the worst discrepancy it found (or a description of the first mismatch)
//! instead of asserting, so the runner can print a verdict line.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use supremix::analysis::compute_nlfd;
use supremix::loss::supremix_loss;
use supremix::mixgen::{enumerate_mix_pos, make_mix_neg};
use supremix::rng;
use supremix::{
    group_by_label, AnchorContrastSet, LabelRange, LabeledBatch, LossConfig, MixKind, MixNegConfig, MixPosConfig,
    MixSpace, MixedEmbedding, QuantizationRule, WindowMode,
};

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Absolute error of the library loss against hand-written arithmetic on a
/// three-sample batch with labels (0, 0, 1), range [0, 2] and one Mix-neg.
pub fn three_sample_loss_error() -> f64 {
    let z = [unit([1.0, 0.2]), unit([0.7, 0.6]), unit([-0.3, 1.0])];
    let batch = LabeledBatch::new(Array2::from_shape_fn((3, 2), |(i, k)| z[i][k]), vec![0.0, 0.0, 1.0]).unwrap();
    let lambda = 0.4;
    let m = unit([
        lambda * z[0][0] + (1.0 - lambda) * z[2][0],
        lambda * z[0][1] + (1.0 - lambda) * z[2][1],
    ]);
    let mix = MixedEmbedding {
        vector: Array1::from(m.to_vec()),
        mixed_label: 1.0 - lambda,
        kind: MixKind::MixNeg,
        source_a: 0,
        source_b: 2,
        lambda,
    };
    let set = |anchor: usize, pos: Vec<usize>, neg: Vec<usize>, mixes: Vec<MixedEmbedding>| AnchorContrastSet {
        anchor_index: anchor,
        positive_real: pos,
        positive_mix: vec![],
        negative_real: neg,
        negative_mix: mixes,
        mix_neg_dropped: 0,
    };
    let sets = vec![
        set(0, vec![1], vec![2], vec![mix]),
        set(1, vec![0], vec![2], vec![]),
        set(2, vec![], vec![0, 1], vec![]),
    ];
    let tau = 0.25;
    let cfg = LossConfig {
        tau,
        use_dm: true,
        use_mix_neg: true,
        use_mix_pos: false,
        range: LabelRange::new(0.0, 2.0).unwrap(),
        mix_space: MixSpace::Normalized,
    };
    // Positive weight 1/2; negatives (1 + |Δm|)/2.
    let e = |a: [f64; 2], b: [f64; 2]| (dot(a, b) / tau).exp();
    let s0 = 0.5 * e(z[0], z[1]) + 1.0 * e(z[0], z[2]) + 0.5 * (1.0 + (1.0 - lambda)) * e(z[0], m);
    let s1 = 0.5 * e(z[1], z[0]) + 1.0 * e(z[1], z[2]);
    let expected = (s0.ln() - dot(z[0], z[1]) / tau) / 2.0 + (s1.ln() - dot(z[1], z[0]) / tau) / 2.0;
    (supremix_loss(&batch, &sets, &cfg).unwrap().loss - expected).abs()
}

/// Mix-neg and Mix-pos counts against enumeration over all sample pairs on
/// `configs` random label groupings; `Err` names the first mismatch.
pub fn mixture_count_mismatch(configs: u64) -> Result<usize, String> {
    let mut r = rng::stream(31);
    let mut anchors = 0;
    for config in 0..configs {
        let ranks = r.random_range(2..=7);
        let step = [0.25, 1.0, 3.0][r.random_range(0..3)];
        let mut labels = Vec::new();
        for rank in 0..ranks {
            labels.extend(std::iter::repeat_n(rank as f64 * step, r.random_range(1..=4)));
        }
        labels.shuffle(&mut r);
        let n = labels.len();
        let raw = Array2::from_shape_fn((n, 4), |_| r.random_range(-1.0..1.0));
        let batch = LabeledBatch::normalized(&raw, labels.clone()).unwrap();
        let groups = group_by_label(&labels, QuantizationRule::exact()).unwrap();
        let width = r.random_range(1..=3) as i64;
        let mode = if config % 2 == 0 {
            WindowMode::Rank
        } else {
            WindowMode::LabelDistance
        };
        let pos_cfg = MixPosConfig {
            gamma: match mode {
                WindowMode::Rank => width as f64,
                WindowMode::LabelDistance => width as f64 * step,
            },
            window_mode: mode,
            max_pos_per_anchor: usize::MAX,
        };
        let rank = |i: usize| (labels[i] / step).round() as i64;
        for anchor in 0..n {
            let mut rr = rng::substream(config, &[anchor as u64]);
            let negs = make_mix_neg(anchor, &batch, &groups, &MixNegConfig::default(), &mut rr).unwrap();
            let want_neg = (0..n).filter(|&j| rank(j) != rank(anchor)).count();
            if negs.len() != want_neg {
                return Err(format!(
                    "config {config} anchor {anchor}: {} Mix-neg, expected {want_neg}",
                    negs.len()
                ));
            }
            let mut want_pos = 0;
            for lo in 0..n {
                for hi in 0..n {
                    let below = rank(anchor) - rank(lo);
                    let above = rank(hi) - rank(anchor);
                    if (1..=width).contains(&below) && (1..=width).contains(&above) {
                        want_pos += 1;
                    }
                }
            }
            let pos = enumerate_mix_pos(anchor, &batch, &groups, &pos_cfg, &mut rr).unwrap();
            if pos.len() != want_pos {
                return Err(format!(
                    "config {config} anchor {anchor}: {} Mix-pos, expected {want_pos}",
                    pos.len()
                ));
            }
            anchors += 1;
        }
    }
    Ok(anchors)
}

/// NLFD against a plain all-pairs nearest-neighbor scan; returns the largest
/// factor error, or `Err` on a neighbor or count mismatch.
pub fn nlfd_scan_error(instances: usize) -> Result<f64, String> {
    let mut r = rng::stream(101);
    let mut worst = 0.0f64;
    for instance in 0..instances {
        let n = r.random_range(4..=120);
        let d = r.random_range(1..=6);
        let x = Array2::from_shape_fn((n, d), |_| r.random_range(-3.0..3.0));
        let t: Vec<f64> = (0..n).map(|_| r.random_range(0..8) as f64).collect();
        let got = compute_nlfd(&x, &t).map_err(|e| e.to_string())?;

        let mut s = vec![vec![0.0; d]; n];
        for k in 0..d {
            let mean = (0..n).map(|i| x[[i, k]]).sum::<f64>() / n as f64;
            let sd = ((0..n).map(|i| (x[[i, k]] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            for i in 0..n {
                s[i][k] = if sd > 0.0 { (x[[i, k]] - mean) / sd } else { 0.0 };
            }
        }
        let mut expected = Vec::new();
        for i in 0..n {
            let (mut best, mut arg) = (f64::INFINITY, usize::MAX);
            for j in (0..n).filter(|&j| j != i) {
                let dist = s[i]
                    .iter()
                    .zip(&s[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist < best {
                    (best, arg) = (dist, j);
                }
            }
            if got.neighbors[i] != arg {
                return Err(format!(
                    "instance {instance} point {i}: neighbor {} vs {arg}",
                    got.neighbors[i]
                ));
            }
            let dt = (t[i] - t[arg]).abs();
            if dt > 0.0 && best > 0.0 {
                expected.push(dt / best * (d as f64).sqrt());
            }
        }
        if expected.len() != got.factors.len() {
            return Err(format!(
                "instance {instance}: {} factors vs {}",
                got.factors.len(),
                expected.len()
            ));
        }
        for (g, e) in got.factors.iter().zip(&expected) {
            worst = worst.max((g - e).abs() / e.max(1.0));
        }
    }
    Ok(worst)
}

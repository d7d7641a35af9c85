//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.
//!
//! Criteria 6 and 7 share one full 40 x 30 run (and its repeat), which takes
//! several minutes on a single core.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use valence_core::cohort::{generate_synthetic_cohort, ParticipantId, Question, SynthConfig};
use valence_core::embedder::{conv3x3_same, max_pool2x2, EmbedderWeights};
use valence_core::harness::{
    chance_baseline, embedder_weights, f1_from_predictions, f1_scores, featurize, run_experiment, temporal_split,
    train_model, Dataset, ExperimentConfig, FeatureBlock, FeatureConfig, FeatureMode, InstanceKey, ModelKind,
    Parents, SensingVariant, SplitName, TrainOverride,
};
use valence_core::mobility::{dbscan, haversine, GeoPoint};
use valence_core::nn::{adam_step, gradient_check, Activation, AdamConfig, AdamState, LayerSpec, LossKind, Model, ModelSpec};
use valence_core::rocket::{rocket_features, sample_kernels, RandomKernel};
use valence_core::sonify::{
    normalize_series, patchify, resample_16k, synthesize_waveform, LogMelFrontEnd, TransformConfig, FRAME_HOP_S,
};
use valence_core::{Seed, Timestamp};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- criterion 1

fn random_batch(rng: &mut impl Rng, n: usize, width: usize) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_simple_fn((n, width), || rng.random_range(-1.5..1.5));
    let mut y = Array2::zeros((n, 4));
    for i in 0..n {
        y[[i, i % 4]] = 1.0;
    }
    (x, y)
}

fn gradcheck_case(name: &str, layers: Vec<LayerSpec>, input_bn: bool, loss: LossKind, seed: u64) -> (String, f64) {
    let spec = ModelSpec {
        input_width: 6,
        input_dropout: 0.0,
        input_batch_norm: input_bn,
        layers,
        loss,
        seed: Seed(seed),
    };
    let model = Model::<f64>::build(&spec).expect("valid spec");
    let (x, y) = random_batch(&mut Seed(seed).rng(), 10, 6);
    let r = gradient_check(&model, &x, &y).expect("gradient check");
    assert!(r.all_finite, "{name}: non-finite gradient");
    (name.to_string(), r.max_rel_error)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let head = |kind: LossKind| LayerSpec::new(4, kind.head(), 0.0, false);
    let l = LayerSpec::new;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for loss in [LossKind::SoftmaxCrossEntropy, LossKind::SigmoidCrossEntropy] {
        let cases = [
            ("relu", vec![l(5, Activation::Relu, 0.0, false), head(loss)], false),
            ("tanh", vec![l(5, Activation::Tanh, 0.0, false), head(loss)], false),
            ("bn-relu", vec![l(5, Activation::Relu, 0.0, true), head(loss)], true),
            (
                "bn-tanh-relu",
                vec![l(5, Activation::Tanh, 0.0, true), l(4, Activation::Relu, 0.0, true), head(loss)],
                true,
            ),
            ("identity", vec![l(5, Activation::None, 0.0, false), head(loss)], false),
        ];
        for (i, (name, layers, bn)) in cases.into_iter().enumerate() {
            let (n, e) = gradcheck_case(name, layers, bn, loss, 100 + i as u64);
            worst = worst.max(e);
            lines.push(format!("{n}/{loss:?}={e:.1e}"));
        }
    }
    let mut linear_worst = 0.0f64;
    for loss in [LossKind::SoftmaxCrossEntropy, LossKind::SigmoidCrossEntropy] {
        let (_, e) = gradcheck_case("linear", vec![head(loss)], false, loss, 7);
        linear_worst = linear_worst.max(e);
    }
    let elapsed = t0.elapsed();
    outcome(
        worst < 1e-3 && linear_worst < 1e-5 && elapsed < Duration::from_secs(30),
        format!(
            "max rel err {worst:.2e} (< 1e-3), pure linear {linear_worst:.2e} (< 1e-5), {:.1}s (< 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn rocket_oracle(series: &[f64], k: &RandomKernel) -> (f64, f64) {
    let pad = if k.padding { (k.weights.len() - 1) * k.dilation / 2 } else { 0 };
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(series);
    padded.extend(std::iter::repeat_n(0.0, pad));
    let span = (k.weights.len() - 1) * k.dilation;
    let outs: Vec<f64> = (0..padded.len() - span)
        .map(|j| k.bias + (0..k.weights.len()).map(|i| k.weights[i] * padded[j + i * k.dilation]).sum::<f64>())
        .collect();
    let max = outs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max, outs.iter().filter(|&&v| v > 0.0).count() as f64 / outs.len() as f64)
}

fn dbscan_oracle(points: &[GeoPoint], eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| haversine(&points[i], &points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|r| r.iter().filter(|&&b| b).count() >= min_samples).collect();
    // connected components of the core graph, numbered by smallest core index
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && adj[i][j] && comp[j] == usize::MAX {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(comp[i])
            } else {
                (0..n).filter(|&j| core[j] && adj[i][j]).map(|j| comp[j]).min()
            }
        })
        .collect()
}

fn conv_oracle(x: &Array3<f64>, w: &Array4<f64>, b: &[f64]) -> Array3<f64> {
    let (c_in, h, wd) = x.dim();
    let c_out = w.shape()[0];
    let mut out = Array3::zeros((c_out, h, wd));
    for o in 0..c_out {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b[o];
                for c in 0..c_in {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < wd as isize {
                                s += w[[o, c, ky, kx]] * x[[c, sy as usize, sx as usize]];
                            }
                        }
                    }
                }
                out[[o, y, xx]] = s;
            }
        }
    }
    out
}

fn pool_oracle(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::from_elem((c, h / 2, w / 2), f64::NEG_INFINITY);
    for k in 0..c {
        for y in 0..(h / 2) * 2 {
            for xx in 0..(w / 2) * 2 {
                let o = &mut out[[k, y / 2, xx / 2]];
                *o = o.max(x[[k, y, xx]]);
            }
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let mut rng = Seed(2).derive("acceptance-oracles").rng();

    let mut rocket_err = 0.0f64;
    for case in 0..1000u64 {
        let len = rng.random_range(11..=48);
        let series: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k = sample_kernels(Seed(case), 1, len).expect("kernel").remove(0);
        let got = rocket_features(&series, std::slice::from_ref(&k)).expect("features");
        let (max, ppv) = rocket_oracle(&series, &k);
        rocket_err = rocket_err.max((got[0] - max).abs()).max((got[1] - ppv).abs());
    }

    let mut dbscan_mismatch = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let centers: Vec<(f64, f64)> = (0..rng.random_range(1..6))
            .map(|_| (rng.random_range(40.0..40.02), rng.random_range(-74.0..-73.98)))
            .collect();
        let points: Vec<GeoPoint> = (0..n)
            .map(|i| {
                let (la, lo) = centers[rng.random_range(0..centers.len())];
                let spread = if rng.random_bool(0.2) { 0.01 } else { 0.0008 };
                GeoPoint::new(
                    la + rng.random_range(-spread..spread),
                    lo + rng.random_range(-spread..spread),
                    Timestamp::from_secs(i as i64 * 60),
                )
                .expect("valid point")
            })
            .collect();
        let eps = rng.random_range(20.0..150.0);
        let min_samples = rng.random_range(1..8);
        if dbscan(&points, eps, min_samples) != dbscan_oracle(&points, eps, min_samples) {
            dbscan_mismatch += 1;
        }
    }

    let mut conv_err = 0.0f64;
    for _ in 0..20 {
        let (c_in, c_out, h, w) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(2..12), rng.random_range(2..12));
        let x = Array3::from_shape_simple_fn((c_in, h, w), || rng.random_range(-1.0..1.0));
        let k = Array4::from_shape_simple_fn((c_out, c_in, 3, 3), || rng.random_range(-1.0..1.0));
        let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv3x3_same(x.view(), k.view(), &b);
        conv_err = conv_err.max((&y - &conv_oracle(&x, &k, &b)).mapv(f64::abs).fold(0.0, |a, &v| a.max(v)));
        let p = max_pool2x2(y.view());
        conv_err = conv_err.max((&p - &pool_oracle(&y)).mapv(f64::abs).fold(0.0, |a, &v| a.max(v)));
    }

    // two Adam steps against the closed-form unroll
    let cfg = AdamConfig {
        learning_rate: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let p0 = vec![0.5, -1.25, 2.0];
    let (g1, g2) = (vec![0.1, -0.3, 0.02], vec![-0.2, 0.4, 0.05]);
    let mut p = p0.clone();
    let mut st = AdamState::<f64>::zeros(&[3]);
    adam_step(&mut [&mut p[..]], &[g1.clone()], &mut st, &cfg).expect("step");
    adam_step(&mut [&mut p[..]], &[g2.clone()], &mut st, &cfg).expect("step");
    let mut adam_err = 0.0f64;
    for i in 0..3 {
        let m1 = 0.1 * g1[i];
        let v1 = 0.001 * g1[i] * g1[i];
        let q1 = p0[i] - 0.01 * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2[i];
        let v2 = 0.999 * v1 + 0.001 * g2[i] * g2[i];
        let q2 = q1 - 0.01 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        adam_err = adam_err.max((p[i] - q2).abs());
    }

    outcome(
        rocket_err <= 1e-12 && dbscan_mismatch == 0 && conv_err <= 1e-9 && adam_err <= 1e-12,
        format!(
            "rocket {rocket_err:.1e} over 1000 cases, dbscan {dbscan_mismatch}/100 mismatches, conv/pool {conv_err:.1e}, adam {adam_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_3() -> Outcome {
    let mut worst_z = 0.0f64;
    let mut rho_sum = 0.0;
    let front = LogMelFrontEnd::new(Default::default()).expect("front end");
    let frames_per_s = (1.0 / FRAME_HOP_S).round() as usize;
    for s in 0..20u64 {
        let mut rng = Seed(s).derive("acceptance-sonify").rng();
        let raw: Vec<f64> = (0..24).map(|_| rng.random_range(-5.0..5.0)).collect();
        let series = normalize_series(&raw).expect("series");
        let cfg = TransformConfig::default().with_seed(Seed(1000 + s));
        let wave = synthesize_waveform(&series, &cfg).expect("waveform");
        let rate = cfg.sample_rate_hz as usize;
        for (i, &x) in series.values().iter().enumerate() {
            let seg = &wave.samples[i * rate..(i + 1) * rate];
            let mean = seg.iter().map(|&v| v as f64).sum::<f64>() / rate as f64;
            let sigma = (cfg.epsilon * x.abs()).max(cfg.sigma2_floor).sqrt();
            worst_z = worst_z.max((mean - x).abs() / (sigma / (rate as f64).sqrt()));
        }
        let mel = front.compute(&resample_16k(&wave).expect("resample")).expect("log-mel");
        // frames wholly inside second i
        let window = (front.config().window_s * front.config().sample_rate_hz as f64) as usize;
        let hop = (FRAME_HOP_S * front.config().sample_rate_hz as f64) as usize;
        let energy: Vec<f64> = (0..24)
            .map(|i| {
                let first = i * frames_per_s;
                let last = ((i + 1) * front.config().sample_rate_hz as usize - window) / hop;
                let rows = mel.slice(ndarray::s![first..=last.min(mel.nrows() - 1), ..]);
                rows.iter().map(|&v| v as f64).sum::<f64>() / rows.len() as f64
            })
            .collect();
        let abs: Vec<f64> = series.values().iter().map(|v| v.abs()).collect();
        rho_sum += spearman(&abs, &energy);
    }
    let rho = rho_sum / 20.0;
    outcome(
        worst_z <= 4.0 && rho > 0.8,
        format!("worst segment-mean deviation {worst_z:.2} sigma/sqrt(n) (<= 4), mean Spearman {rho:.3} (> 0.8)"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let seed = Seed(4);
    let cohort = generate_synthetic_cohort(&SynthConfig::new(6, 8, seed)).expect("cohort");
    let fcfg = FeatureConfig::new(seed);
    let weights = EmbedderWeights::random_init(&fcfg.embedder).expect("weights");
    let features = featurize(
        &cohort,
        &fcfg,
        &weights,
        &[FeatureMode::AudioText, FeatureMode::SensingVggish, FeatureMode::SensingRocket],
    )
    .expect("features");
    let w = |b: FeatureBlock| features.block(b).expect("block").ncols();
    let data = Dataset::new(&features);
    let mut ecfg = ExperimentConfig::new(seed);
    for k in ["audio_text", "sensing_vggish"] {
        ecfg.overrides.insert(
            k.into(),
            TrainOverride {
                batch_size: None,
                epochs: Some(1),
            },
        );
    }
    let q = Question::Negativeness;
    let a = train_model(&data, ModelKind::AudioText, q, &ecfg, None).expect("audio-text").checkpoint;
    let s = train_model(&data, ModelKind::Sensing(SensingVariant::Vggish), q, &ecfg, None)
        .expect("sensing")
        .checkpoint;
    let parents = Parents {
        audio_text: &a,
        sensing: &s,
    };
    let overall = data
        .inputs(ModelKind::Overall(SensingVariant::Vggish), SplitName::Train, None)
        .expect("overall inputs")
        .ncols();
    let hybrid = data
        .inputs(ModelKind::Hybrid(SensingVariant::Vggish), SplitName::Train, Some(parents))
        .expect("hybrid inputs")
        .ncols();

    let series: Vec<f64> = (0..24).map(|h| (h as f64).sin()).collect();
    let wave = synthesize_waveform(&normalize_series(&series).unwrap(), &TransformConfig::default()).unwrap();
    let mel = LogMelFrontEnd::new(Default::default()).unwrap().compute(&resample_16k(&wave).unwrap()).unwrap();
    let patches = patchify(&mel).unwrap().len();

    let got = [
        w(FeatureBlock::Audio),
        w(FeatureBlock::Text),
        w(FeatureBlock::SensingVggish),
        w(FeatureBlock::SensingRocket),
        overall,
        hybrid,
    ];
    let pass = got == [128, 768, 896, 896, 1792, 64] && mel.dim() == (2398, 64) && patches == 24;
    outcome(
        pass,
        format!(
            "audio/text/sensing-vggish/sensing-rocket/overall/hybrid = {}; 24 s -> {} frames -> {patches} patches",
            got.map(|v| v.to_string()).join("/"),
            mel.nrows()
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let mut rng = Seed(5).derive("acceptance-metrics").rng();
    let mut micro_gap = 0.0f64;
    let mut top2_violations = 0;
    let mut majority_gap = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let acc = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / n as f64;
        micro_gap = micro_gap.max((f1_from_predictions(&truth, &pred).micro - acc).abs());

        let mut probs = Array2::from_shape_simple_fn((n, 4), || rng.random_range(0.0..1.0));
        for mut r in probs.rows_mut() {
            let s = r.sum();
            r.mapv_inplace(|v| v / s);
        }
        let f = f1_scores(&probs, &truth).expect("scores");
        if f.top2.micro < f.top1.micro || f.top2.macro_ < f.top1.macro_ - 1e-12 {
            top2_violations += 1;
        }

        let mut counts = [0usize; 4];
        truth.iter().for_each(|&t| counts[t] += 1);
        let mode = (0..4).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        let majority = f1_from_predictions(&truth, &vec![mode; n]).micro;
        majority_gap = majority_gap.max((majority - counts[mode] as f64 / n as f64).abs());
    }
    let chance_ok = chance_baseline(&[0, 0, 1, 2]).is_ok();
    outcome(
        micro_gap <= 1e-12 && top2_violations == 0 && majority_gap <= 1e-12 && chance_ok,
        format!(
            "|micro-F1 - accuracy| max {micro_gap:.1e}, top-2 < top-1 in {top2_violations}/1000, majority gap {majority_gap:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- criteria 6 and 7

struct FullRun {
    report_json: String,
    checkpoint_bytes: BTreeMap<String, Vec<u8>>,
    elapsed: Duration,
    split_digests: Vec<String>,
    top_split_digest: String,
    margins: BTreeMap<String, f64>,
    hybrid_wins: usize,
}

fn full_run() -> FullRun {
    let t0 = Instant::now();
    let seed = Seed(7);
    let cohort = generate_synthetic_cohort(&SynthConfig::new(40, 30, seed)).expect("cohort");
    let fcfg = FeatureConfig::new(seed);
    assert_eq!(fcfg.embedder.width_divisor, 8);
    let weights = embedder_weights(&fcfg.embedder, None).expect("random-init embedder");
    let features = featurize(&cohort, &fcfg, &weights, &[FeatureMode::AudioText, FeatureMode::SensingVggish])
        .expect("features");
    let out = run_experiment(&features, &ExperimentConfig::new(seed)).expect("experiment");
    let elapsed = t0.elapsed();

    let report = out.report;
    let mut margins = BTreeMap::new();
    let mut hybrid_wins = 0;
    let mut split_digests = Vec::new();
    for (q, qr) in &report.questions {
        let score = |k: &str| qr.models[k].top1.micro;
        margins.insert(q.clone(), score("hybrid_vggish") - qr.chance.top1.micro);
        if score("hybrid_vggish") >= score("audio_text") && score("hybrid_vggish") >= score("sensing_vggish") {
            hybrid_wins += 1;
        }
        split_digests.extend(qr.models.values().map(|e| e.split_digest.clone()));
    }
    let checkpoint_bytes = out
        .checkpoints
        .iter()
        .map(|((q, k), c)| (format!("{q}/{k}"), c.to_archive().and_then(|a| a.to_bytes()).expect("archive")))
        .collect();
    FullRun {
        report_json: report.to_json().expect("json"),
        checkpoint_bytes,
        elapsed,
        split_digests,
        top_split_digest: report.split_digest.clone(),
        margins,
        hybrid_wins,
    }
}

fn criterion_6(run: &FullRun) -> Outcome {
    let all_margins = run.margins.values().all(|&m| m >= 0.10);
    let fast = run.elapsed < Duration::from_secs(15 * 60);
    let margins: Vec<String> = run.margins.iter().map(|(q, m)| format!("{q} {m:+.3}")).collect();
    outcome(
        all_margins && run.hybrid_wins >= 3 && fast,
        format!(
            "hybrid over chance: {} (>= +0.10); hybrid >= single-modality on {}/4 (>= 3); {:.0}s on {} thread(s) (< 900s)",
            margins.join(", "),
            run.hybrid_wins,
            run.elapsed.as_secs_f64(),
            rayon::current_num_threads()
        ),
    )
}

fn criterion_7(a: &FullRun, b: &FullRun) -> Outcome {
    let same_report = a.report_json == b.report_json;
    let same_ck = a.checkpoint_bytes == b.checkpoint_bytes;
    outcome(
        same_report && same_ck,
        format!(
            "report identical: {same_report}; {} checkpoints identical: {same_ck}",
            a.checkpoint_bytes.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(run: &FullRun) -> Outcome {
    let mut rng = Seed(8).derive("acceptance-split").rng();
    let mut violations = 0;
    for _ in 0..1000 {
        let mut keys = Vec::new();
        for p in 0..rng.random_range(1..12) {
            let pid = ParticipantId::new(&format!("p{p:02}")).unwrap();
            for _ in 0..rng.random_range(0..30) {
                keys.push(InstanceKey {
                    participant_id: pid.clone(),
                    ema_timestamp: Timestamp::from_secs(rng.random_range(0..10_000_000)),
                });
            }
        }
        keys.sort();
        keys.dedup();
        // shuffled input order must not matter
        for i in (1..keys.len()).rev() {
            keys.swap(i, rng.random_range(0..=i));
        }
        let split = temporal_split(&keys);
        let latest = |idx: &[usize], pid: &ParticipantId| {
            idx.iter().filter(|&&i| &keys[i].participant_id == pid).map(|&i| keys[i].ema_timestamp).max()
        };
        let earliest = |idx: &[usize], pid: &ParticipantId| {
            idx.iter().filter(|&&i| &keys[i].participant_id == pid).map(|&i| keys[i].ema_timestamp).min()
        };
        let mut pids: Vec<&ParticipantId> = keys.iter().map(|k| &k.participant_id).collect();
        pids.sort();
        pids.dedup();
        for pid in pids {
            let ordered = |a: Option<Timestamp>, b: Option<Timestamp>| match (a, b) {
                (Some(a), Some(b)) => a < b,
                _ => true,
            };
            let (tr, va, te) = (&split.train, &split.validation, &split.test);
            if !ordered(latest(tr, pid), earliest(va, pid))
                || !ordered(latest(va, pid), earliest(te, pid))
                || !ordered(latest(tr, pid), earliest(te, pid))
            {
                violations += 1;
            }
        }
        if split.train.len() + split.validation.len() + split.test.len() != keys.len() {
            violations += 1;
        }
    }
    let same_hash = run.split_digests.iter().all(|d| *d == run.top_split_digest);
    outcome(
        violations == 0 && same_hash,
        format!(
            "ordering violations {violations} over 1000 cohorts; split hash identical across {} model entries: {same_hash}",
            run.split_digests.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |n: u8, name: &'static str, o: Outcome| {
        println!("[{}] criterion {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient check", criterion_1());
    report(2, "oracle equivalence", criterion_2());
    report(3, "sonification statistics", criterion_3());
    report(4, "shape contract", criterion_4());
    report(5, "metric identities", criterion_5());
    let first = full_run();
    report(6, "end-to-end", criterion_6(&first));
    let second = full_run();
    report(7, "determinism", criterion_7(&first, &second));
    report(8, "split hygiene", criterion_8(&first));
    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance criteria, one pass/fail line each.
//!
//! `LPM_ACCEPTANCE_ONLY=a,b` runs a subset by name. `LPM_ACCEPTANCE_CACHE`
//! names a directory where the trained desk models are stored and reused
//! across runs (development only; a clean run trains from scratch).

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lpm_acceptance as oracle;
use lpm_core::autodiff::{GroupPoolKind, Tape, Tensor2, Var};
use lpm_core::distances::{chamfer, emd_approx, emd_exact, DistanceKind};
use lpm_core::edit::{exchange_part, fuse_global, interpolate_part};
use lpm_core::generative::{exchange_variants, gradient_penalty, VaeConfig};
use lpm_core::metrics::{coverage, jsd, jsd_distributions, mmd, tmd, SAMPLE_FACTOR};
use lpm_core::model::{
    cross_entropy, recon_loss, train, EncodeResult, LpmModel, ModelConfig, SegHead, StepOptions, TrainConfig,
    TrainHistory,
};
use lpm_core::pointcloud::{resample, Dataset, LabeledCloud, Point, Split, SynthSpec};
use lpm_core::autodiff::{Activation, LayerSpec, Mlp, ParamStore};

const K: usize = 4;
const N: usize = 256;
const L: usize = 64;
const DATA_SEED: u64 = 7;
const MODEL_SEED: u64 = 1;
const TRAIN_SIZE: usize = 512;
const TEST_SIZE: usize = 128;

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

type Check = fn() -> Outcome;

fn main() {
    let criteria: Vec<(&str, Option<Duration>, Check)> = vec![
        ("pooling-equivalence", Some(Duration::from_secs(10)), pooling_equivalence),
        ("permutation-invariance", Some(Duration::from_secs(10)), permutation_invariance),
        ("gradient-checks", Some(Duration::from_secs(60)), gradient_checks),
        ("emd-oracle", Some(Duration::from_secs(120)), emd_oracle),
        ("chamfer-properties", Some(Duration::from_secs(5)), chamfer_properties),
        ("desk-training", None, desk_training),
        ("pooling-ablation", None, pooling_ablation),
        ("edit-locality", None, edit_locality),
        ("tmd-trend", Some(Duration::from_secs(300)), tmd_trend),
        ("metric-oracles", None, metric_oracles),
        ("generative-sanity", None, generative_sanity),
        ("downsampling-robustness", None, downsampling_robustness),
    ];
    let only: Option<Vec<String>> = std::env::var("LPM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (name, limit, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == name)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = result.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit_note = match limit {
            Some(l) if !in_time => format!(" (over the {}s limit)", l.as_secs()),
            _ => String::new(),
        };
        println!(
            "{} {name}: {} [{:.1}s]{limit_note}",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn desk_config() -> ModelConfig {
    ModelConfig::desk(K)
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn pooling_equivalence() -> Outcome {
    let model = LpmModel::<f32>::new(desk_config(), MODEL_SEED).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clouds: Vec<LabeledCloud> = (0..1000)
        .map(|i| {
            let padding = if i % 3 == 0 { rng.random_range(0..N - K) } else { 0 };
            oracle::random_cloud(&mut rng, N, K, padding)
        })
        .collect();
    let mut mismatches = 0;
    for chunk in clouds.chunks(50) {
        for (c, enc) in chunk.iter().zip(model.encode_batch(chunk).unwrap()) {
            let mut direct = vec![f32::NEG_INFINITY; L];
            for (r, &label) in c.labels.iter().enumerate() {
                if label != 0 {
                    for (d, &v) in direct.iter_mut().zip(enc.point_features.row(r)) {
                        *d = d.max(v);
                    }
                }
            }
            if bits(&direct) != bits(&enc.global.0) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 1000 clouds differ from the direct column max"))
}

fn permuted_result(enc: &EncodeResult, perm: &[usize]) -> EncodeResult {
    let cols = enc.point_features.cols();
    let data = perm.iter().flat_map(|&i| enc.point_features.row(i).to_vec()).collect();
    EncodeResult {
        point_features: Tensor2::from_vec(perm.len(), cols, data).unwrap(),
        parts: enc.parts.clone(),
        global: enc.global.clone(),
        labels: perm.iter().map(|&i| enc.labels[i]).collect(),
    }
}

fn permutation_invariance() -> Outcome {
    let model = LpmModel::<f32>::new(desk_config(), MODEL_SEED).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for i in 0..200 {
        let padding = if i % 4 == 0 { rng.random_range(0..N / 2) } else { 0 };
        let cloud = oracle::random_cloud(&mut rng, N, K, padding);
        let base = model.encode(&cloud).unwrap();
        let perms: Vec<Vec<usize>> = (0..5)
            .map(|_| {
                let mut p: Vec<usize> = (0..N).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let shuffled: Vec<LabeledCloud> = perms.iter().map(|p| cloud.permuted(p)).collect();
        for (p, enc) in perms.iter().zip(model.encode_batch(&shuffled).unwrap()) {
            if enc != permuted_result(&base, p) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 1000 permuted encodings differ"))
}

/// `|a − n| / max(|a|, |n|, 1e-5)`; the floor keeps entries whose true
/// gradient is near zero from dividing rounding noise by nothing.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

type Graph = dyn for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> lpm_core::Result<Var>;

/// Scalar `Σ out ⊙ R` with fixed pseudo-random `R`.
fn reduce<'t>(tape: &mut Tape<'t, f64>, out: Var) -> Var {
    let (r, c) = tape.value(out).shape();
    if r * c == 1 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64((r * 131 + c) as u64);
    let weights = Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let weighted = tape.mul_const(out, weights).unwrap();
    let flat = tape.reshape(weighted, 1, r * c).unwrap();
    let ones = tape.input(Tensor2::filled(r * c, 1, 1.0));
    tape.linear(flat, ones, None).unwrap()
}

fn loss_and_grads(inputs: &[Tensor2<f64>], graph: &Graph) -> (f64, Vec<Tensor2<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input_with_grad(t.clone())).collect();
    let out = graph(&mut tape, &vars).unwrap();
    let loss = reduce(&mut tape, out);
    let value = tape.value(loss).data()[0];
    let g = tape.backward(loss, 1.0).unwrap();
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.wrt(*v).cloned().unwrap_or_else(|| Tensor2::zeros(t.rows(), t.cols())))
        .collect();
    (value, grads)
}

/// Largest relative error over every input entry.
fn op_error(inputs: Vec<Tensor2<f64>>, graph: &Graph) -> f64 {
    const STEP: f64 = 1e-6;
    let (_, analytic) = loss_and_grads(&inputs, graph);
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        for e in 0..inputs[i].len() {
            let mut probe = inputs.clone();
            let x = probe[i].data()[e];
            probe[i].data_mut()[e] = x + STEP;
            let plus = loss_and_grads(&probe, graph).0;
            probe[i].data_mut()[e] = x - STEP;
            let minus = loss_and_grads(&probe, graph).0;
            worst = worst.max(rel_err(analytic[i].data()[e], (plus - minus) / (2.0 * STEP)));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2<f64> {
    Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut t = |r, c| rand_tensor(&mut rng, r, c);
    let groups = vec![Some(0), Some(2), None, Some(0), Some(2), Some(1), None, Some(1)];
    let groups_mean = groups.clone();
    let labels = vec![1, 2, 0, 3, 1, 2, 3, 0];
    let targets: Vec<Vec<Point>> = {
        let mut r = ChaCha8Rng::seed_from_u64(14);
        (0..2).map(|_| oracle::random_points(&mut r, 8)).collect()
    };
    let targets_emd = targets.clone();
    let ops: Vec<(&str, Vec<Tensor2<f64>>, Box<Graph>)> = vec![
        ("linear", vec![t(8, 5), t(5, 3), t(1, 3)], Box::new(|tp, v| tp.linear(v[0], v[1], Some(v[2])))),
        ("relu", vec![t(8, 5)], Box::new(|tp, v| Ok(tp.relu(v[0])))),
        ("leaky-relu", vec![t(8, 5)], Box::new(|tp, v| Ok(tp.leaky_relu(v[0], 0.2)))),
        (
            "batch-norm",
            vec![t(8, 5), t(1, 5), t(1, 5)],
            Box::new(|tp, v| Ok(tp.batch_norm(v[0], v[1], v[2], 1e-5)?.0)),
        ),
        (
            "column-affine",
            vec![t(8, 5)],
            Box::new(|tp, v| tp.column_affine(v[0], vec![0.5, -1.5, 2.0, 0.1, 1.0], &[0.3; 5])),
        ),
        (
            "max-pool",
            vec![t(8, 5)],
            Box::new(move |tp, v| Ok(tp.group_pool(v[0], &groups, 3, GroupPoolKind::Max)?.0)),
        ),
        (
            "mean-pool",
            vec![t(8, 5)],
            Box::new(move |tp, v| Ok(tp.group_pool(v[0], &groups_mean, 3, GroupPoolKind::Mean)?.0)),
        ),
        ("gather-rows", vec![t(4, 3)], Box::new(|tp, v| tp.gather_rows(v[0], vec![3, 0, 0, 2, 1]))),
        ("concat", vec![t(4, 3), t(4, 2)], Box::new(|tp, v| tp.concat_cols(v[0], v[1]))),
        ("reshape", vec![t(4, 6)], Box::new(|tp, v| tp.reshape(v[0], 3, 8))),
        ("add", vec![t(4, 3), t(4, 3)], Box::new(|tp, v| tp.add(v[0], v[1]))),
        ("mul", vec![t(4, 3), t(4, 3)], Box::new(|tp, v| tp.mul(v[0], v[1]))),
        ("scale", vec![t(4, 3)], Box::new(|tp, v| Ok(tp.scale(v[0], -1.7)))),
        ("exp", vec![t(4, 3)], Box::new(|tp, v| Ok(tp.exp(v[0])))),
        (
            "cross-entropy",
            vec![t(8, 4)],
            Box::new(move |tp, v| Ok(cross_entropy(tp, v[0], &labels)?.node)),
        ),
        (
            "chamfer-loss",
            vec![t(2, 24)],
            Box::new(move |tp, v| Ok(recon_loss(tp, v[0], &targets, DistanceKind::Chamfer)?.0)),
        ),
        (
            "emd-loss",
            vec![t(2, 24)],
            Box::new(move |tp, v| Ok(recon_loss(tp, v[0], &targets_emd, DistanceKind::EmdApprox)?.0)),
        ),
    ];
    let mut worst = (0.0f64, "");
    for (name, inputs, graph) in &ops {
        let e = op_error(inputs.clone(), graph.as_ref());
        if e > worst.0 || e.is_nan() {
            worst = (e, name);
        }
    }

    let mut cloud_rng = ChaCha8Rng::seed_from_u64(15);
    let clouds = vec![
        oracle::random_cloud(&mut cloud_rng, 8, K, 0),
        oracle::random_cloud(&mut cloud_rng, 8, K, 2),
    ];
    // A bijection needs equal cardinality, so the transport loss gets full clouds.
    let full = vec![
        oracle::random_cloud(&mut cloud_rng, 8, K, 0),
        oracle::random_cloud(&mut cloud_rng, 8, K, 0),
    ];
    let small = ModelConfig {
        feature_size: 8,
        points: 8,
        encoder_hidden: vec![6, 7],
        seg_hidden: vec![6, 5],
        decoder_hidden: vec![9, 10],
        ..ModelConfig::desk(K)
    };
    let variants: Vec<(&str, ModelConfig, StepOptions, usize, &[LabeledCloud])> = vec![
        ("desk network", ModelConfig { points: 8, ..desk_config() }, StepOptions { vae_noise: false, ..StepOptions::new(DistanceKind::Chamfer) }, 12, &clouds),
        ("max pooling", small.clone(), StepOptions { vae_noise: false, ..StepOptions::new(DistanceKind::Chamfer) }, usize::MAX, &clouds),
        (
            "mean pooling",
            ModelConfig { pooling: GroupPoolKind::Mean, ..small.clone() },
            StepOptions::new(DistanceKind::Chamfer),
            usize::MAX,
            &clouds,
        ),
        (
            "no batch norm, point-only head",
            ModelConfig { batch_norm: false, segmentation: SegHead::PointOnly, ..small.clone() },
            StepOptions::new(DistanceKind::Chamfer),
            usize::MAX,
            &clouds,
        ),
        (
            "variational head",
            ModelConfig { vae: Some(VaeConfig { beta: 0.1 }), ..small.clone() },
            StepOptions::new(DistanceKind::Chamfer),
            usize::MAX,
            &clouds,
        ),
        ("emd loss", small.clone(), StepOptions::new(DistanceKind::EmdApprox), usize::MAX, &full),
    ];
    let mut model_worst = (0.0f64, String::new());
    for (name, config, opts, entries, batch) in variants {
        let model = LpmModel::<f64>::new(config, 3).unwrap();
        let report = model.check_gradients(batch, &opts, 1e-6, entries).unwrap();
        if report.max_rel_error > model_worst.0 || report.max_rel_error.is_nan() {
            model_worst = (report.max_rel_error, format!("{name} at {}", report.worst));
        }
    }
    let pass = worst.0 <= 1e-4 && model_worst.0 <= 1e-4;
    outcome(
        pass,
        format!(
            "{} ops, worst {:.2e} ({}); full network worst {:.2e} ({}); limit 1e-4",
            ops.len(),
            worst.0,
            worst.1,
            model_worst.0,
            model_worst.1
        ),
    )
}

fn emd_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..200 {
        let a = oracle::random_points(&mut rng, 64);
        let b = oracle::random_points(&mut rng, 64);
        let exact = emd_exact(&a, &b).unwrap();
        let approx = emd_approx(&a, &b).unwrap();
        worst_ratio = worst_ratio.max((approx - exact).abs() / exact);
    }
    let mut worst_brute: f64 = 0.0;
    for n in 1..=6 {
        for _ in 0..30 {
            let a = oracle::random_points(&mut rng, n);
            let b = oracle::random_points(&mut rng, n);
            worst_brute = worst_brute.max((emd_exact(&a, &b).unwrap() - oracle::emd(&a, &b)).abs());
        }
    }
    outcome(
        worst_ratio <= 0.01 && worst_brute <= 1e-9,
        format!(
            "approximation worst {:.3}% (limit 1%); exact vs brute force worst {worst_brute:.1e} (limit 1e-9)",
            100.0 * worst_ratio
        ),
    )
}

fn chamfer_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut bad = 0;
    for i in 0..1000 {
        let a = oracle::random_points(&mut rng, 1 + i % 97);
        let b = oracle::random_points(&mut rng, 1 + (i * 7) % 131);
        let (ab, ba) = (chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        if ab != ba || ab < 0.0 || chamfer(&a, &a).unwrap() != 0.0 || chamfer(&b, &b).unwrap() != 0.0 {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 1000 pairs violate symmetry, non-negativity or identity"))
}

struct Desk {
    train: Dataset,
    test: Vec<LabeledCloud>,
}

fn desk_data() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| {
        let all = SynthSpec::chair(N, DATA_SEED).generate(TRAIN_SIZE + TEST_SIZE).unwrap();
        let mut samples = all.samples;
        let test = samples.split_off(TRAIN_SIZE);
        Desk {
            train: Dataset::new(all.category, all.parts, samples, Split::Train).unwrap(),
            test,
        }
    })
}

struct Trained {
    model: LpmModel,
    history: TrainHistory,
    /// Wall time of the run, absent when loaded from the cache.
    took: Option<Duration>,
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("LPM_ACCEPTANCE_CACHE").map(PathBuf::from)
}

fn train_desk(pooling: GroupPoolKind, tag: &str, use_cache: bool) -> Trained {
    let cache = cache_dir().filter(|_| use_cache);
    if let Some(dir) = &cache {
        let (m, h) = (dir.join(format!("{tag}.lpm")), dir.join(format!("{tag}.history.json")));
        if m.exists() && h.exists() {
            return Trained {
                model: LpmModel::load(&m).unwrap(),
                history: serde_json::from_slice(&std::fs::read(h).unwrap()).unwrap(),
                took: None,
            };
        }
    }
    let mut model = LpmModel::new(ModelConfig { pooling, ..desk_config() }, MODEL_SEED).unwrap();
    let cfg = TrainConfig {
        seed: MODEL_SEED,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let history = train(&mut model, &desk_data().train, &cfg).unwrap();
    let took = start.elapsed();
    if let Some(dir) = &cache {
        std::fs::create_dir_all(dir).unwrap();
        model.save(&dir.join(format!("{tag}.lpm"))).unwrap();
        std::fs::write(dir.join(format!("{tag}.history.json")), serde_json::to_vec(&history).unwrap()).unwrap();
    }
    Trained {
        model,
        history,
        took: Some(took),
    }
}

fn max_model() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| train_desk(GroupPoolKind::Max, "max", true))
}

fn held_out_accuracy(model: &LpmModel, clouds: &[LabeledCloud]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for c in clouds {
        for (p, &l) in model.predict_labels(c).unwrap().iter().zip(&c.labels) {
            if l != 0 {
                total += 1;
                hit += usize::from(*p == l);
            }
        }
    }
    hit as f64 / total as f64
}

fn desk_training() -> Outcome {
    let t = max_model();
    let first = t.history.first().unwrap().recon;
    let last = t.history.last().unwrap().recon;
    let ratio = last / first;
    let acc = held_out_accuracy(&t.model, &desk_data().test);
    let again = train_desk(GroupPoolKind::Max, "max-repeat", false);
    let same = again.history == t.history && again.model.store().weight_ids().iter().all(|&id| {
        again.model.store().get(id) == t.model.store().get(id)
    });
    let limit = Duration::from_secs(15 * 60);
    let times: Vec<Duration> = [t.took, again.took].into_iter().flatten().collect();
    let in_time = times.iter().all(|d| *d <= limit);
    outcome(
        ratio <= 0.1 && acc >= 0.95 && same && in_time,
        format!(
            "{} epochs, final/first recon {last:.4}/{first:.4} = {ratio:.4} (limit 0.1); held-out point accuracy {:.2}% (limit 95%); repeat run identical: {same}; run times {:?}s (limit 900s each)",
            t.history.epochs.len(),
            100.0 * acc,
            times.iter().map(|d| d.as_secs()).collect::<Vec<_>>()
        ),
    )
}

fn pooling_ablation() -> Outcome {
    let max = max_model();
    let mean = train_desk(GroupPoolKind::Mean, "mean", true);
    let (a, b) = (mean.history.last().unwrap().recon, max.history.last().unwrap().recon);
    outcome(a >= b, format!("final train recon: mean pooling {a:.4}, max pooling {b:.4}"))
}

fn edit_locality() -> Outcome {
    let model = LpmModel::<f32>::new(desk_config(), MODEL_SEED).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let clouds: Vec<LabeledCloud> = (0..20)
        .map(|i| {
            let mut c = oracle::random_cloud(&mut rng, N, K, 0);
            if i % 3 == 0 {
                // Drop one part entirely.
                let gone = 1 + i % K;
                for l in c.labels.iter_mut() {
                    if *l == gone {
                        *l = 1 + gone % K;
                    }
                }
            }
            c
        })
        .collect();
    let encoded = model.encode_batch(&clouds).unwrap();
    let mut fuse_bad = 0;
    for e in &encoded {
        if bits(&fuse_global(&e.parts).unwrap().0) != bits(&e.global.0) {
            fuse_bad += 1;
        }
    }
    let mut bad = 0;
    let mut ops = 0;
    while ops < 100 {
        let (a, b) = (&encoded[rng.random_range(0..20)].parts, &encoded[rng.random_range(0..20)].parts);
        let part = rng.random_range(1..=K);
        let exchange = ops % 2 == 0;
        let edited = if exchange {
            exchange_part(a, b, part)
        } else {
            interpolate_part(a, b, rng.random_range(0.0..=1.0), part)
        };
        let Ok(edited) = edited else {
            continue;
        };
        ops += 1;
        for p in 1..=K {
            let row = edited.row(p).unwrap();
            let ok = if p == part {
                !exchange || (bits(row) == bits(b.row(p).unwrap()) && edited.present[p - 1])
            } else {
                bits(row) == bits(a.row(p).unwrap()) && edited.present[p - 1] == a.present[p - 1]
            };
            if !ok {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0 && fuse_bad == 0,
        format!("{bad} row violations over {ops} edits; {fuse_bad} of 20 fused globals differ from the encoder's"),
    )
}

fn tmd_trend() -> Outcome {
    let t = max_model();
    let data = desk_data();
    let pool: Vec<_> = t.model.encode_batch(&data.train.samples).unwrap().into_iter().map(|e| e.parts).collect();
    let bases: Vec<_> = t.model.encode_batch(&data.test[..20]).unwrap().into_iter().map(|e| e.parts).collect();
    let mut scores = Vec::new();
    for changed in 1..=K {
        let mut groups = Vec::new();
        for (i, base) in bases.iter().enumerate() {
            let variants = exchange_variants(base, &pool, changed, 10, 100 + i as u64).unwrap();
            let globals: Vec<_> = variants.iter().map(|v| t.model.fuse(v).unwrap()).collect();
            groups.push(t.model.decode_batch(&globals).unwrap());
        }
        scores.push(tmd(&groups).unwrap());
    }
    let inversions: Vec<f64> = scores
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| (w[0] - w[1]) / w[0])
        .collect();
    let pass = inversions.len() <= 1 && inversions.iter().all(|&r| r <= 0.05);
    outcome(
        pass,
        format!(
            "TMD for 1..4 exchanged parts: {}; {} inversion(s)",
            scores.iter().map(|s| format!("{s:.5}")).collect::<Vec<_>>().join(", "),
            inversions.len()
        ),
    )
}

fn emd_exact_fn(a: &[Point], b: &[Point]) -> f64 {
    oracle::emd(a, b)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut worst: f64 = 0.0;
    let mut note = |name: &str, got: f64, want: f64| {
        let e = (got - want).abs();
        if e > 1e-9 || e.is_nan() {
            println!("  {name}: {got} vs {want}");
        }
        worst = worst.max(e);
    };
    for trial in 0..20 {
        let n = 5 + trial % 2;
        let samples: Vec<Vec<Point>> = (0..5).map(|_| oracle::random_points(&mut rng, n)).collect();
        let reference: Vec<Vec<Point>> = (0..5).map(|_| oracle::random_points(&mut rng, n)).collect();
        note("mmd-cd", mmd(&samples, &reference, DistanceKind::Chamfer).unwrap(), oracle::mmd(&samples, &reference, oracle::chamfer));
        note("mmd-emd", mmd(&samples, &reference, DistanceKind::EmdExact).unwrap(), oracle::mmd(&samples, &reference, emd_exact_fn));
        note("cov-cd", coverage(&samples, &reference, DistanceKind::Chamfer).unwrap(), oracle::coverage(&samples, &reference, oracle::chamfer));
        note("cov-emd", coverage(&samples, &reference, DistanceKind::EmdExact).unwrap(), oracle::coverage(&samples, &reference, emd_exact_fn));
        for res in [2, 5, 28] {
            let want = oracle::jsd(&oracle::histogram(&samples, res), &oracle::histogram(&reference, res));
            note("jsd", jsd(&samples, &reference, res).unwrap().value, want);
        }
        let groups: Vec<Vec<Vec<Point>>> = (0..5).map(|_| (0..4).map(|_| oracle::random_points(&mut rng, n)).collect()).collect();
        note("tmd", tmd(&groups).unwrap(), oracle::tmd(&groups));
    }
    let cloud = oracle::random_points(&mut rng, 64);
    let same = jsd(&[cloud.clone()], &[cloud], 28).unwrap().value;
    let corner_a = vec![vec![[-0.99, -0.99, -0.99]; 5]];
    let corner_b = vec![vec![[0.99, 0.99, 0.99]; 5]];
    let disjoint = jsd(&corner_a, &corner_b, 28).unwrap().value;
    let p = [1.0, 0.0];
    let q = [0.0, 1.0];
    let disjoint_dist = jsd_distributions(&p, &q).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let pass = worst <= 1e-9 && same.abs() <= 1e-12 && (disjoint - ln2).abs() <= 1e-12 && (disjoint_dist - ln2).abs() <= 1e-12;
    outcome(
        pass,
        format!("worst deviation from brute force {worst:.1e} (limit 1e-9); JSD identical {same:.1e}, disjoint single-bin {disjoint:.15} (ln 2 = {ln2:.15})"),
    )
}

fn generative_sanity() -> Outcome {
    const VAE_EPOCHS: usize = 60;
    let t = max_model();
    let data = desk_data();
    let mut vae = t.model.clone();
    vae.attach_vae(VaeConfig { beta: 0.1 }, &data.train.samples).unwrap();
    let cfg = TrainConfig {
        epochs: VAE_EPOCHS,
        seed: MODEL_SEED,
        ..TrainConfig::default()
    };
    train(&mut vae, &data.train, &cfg).unwrap();
    let encoded = vae.encode_batch(&data.test).unwrap();
    let globals: Vec<_> = encoded.into_iter().map(|e| e.global).collect();
    let reference = vae.decode_batch(&globals).unwrap();
    let prior = vae.sample_prior(SAMPLE_FACTOR * reference.len(), 5).unwrap();
    let globals: Vec<_> = prior.iter().map(|p| vae.fuse(p).unwrap()).collect();
    let samples = vae.decode_batch(&globals).unwrap();
    let cov = coverage(&samples, &reference, DistanceKind::Chamfer).unwrap();

    let mut worst_gp: f64 = 0.0;
    for d in [K * L, 1, 7, 100] {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let critic = Mlp::new(&mut store, "critic", &[LayerSpec::new(d, 1, Activation::None, false)], &mut rng).unwrap();
        let (w, b) = critic.layer_params(0);
        *store.get_mut(w) = Tensor2::filled(d, 1, 1.0);
        *store.get_mut(b) = Tensor2::filled(1, 1, 0.3);
        let x = rand_tensor(&mut rng, 6, d);
        let (gp, _) = gradient_penalty(&critic, &store, &x).unwrap();
        worst_gp = worst_gp.max((gp - ((d as f64).sqrt() - 1.0).powi(2)).abs());
    }
    outcome(
        cov > 30.0 && worst_gp == 0.0,
        format!(
            "prior samples cover {cov:.1}% of {} held-out reconstructions (limit > 30%) after {VAE_EPOCHS} epochs at beta 0.1; linear-critic penalty deviation {worst_gp:e}",
            reference.len()
        ),
    )
}

fn downsampling_robustness() -> Outcome {
    let t = max_model();
    let test = &desk_data().test;
    let mut means = Vec::new();
    for m in [N, 128, 64, 32] {
        let inputs: Vec<LabeledCloud> = test
            .iter()
            .enumerate()
            .map(|(i, c)| resample(&resample(c, m, 1000 + i as u64), N, 0))
            .collect();
        let enc = t.model.encode_batch(&inputs).unwrap();
        let globals: Vec<_> = enc.into_iter().map(|e| e.global).collect();
        let decoded = t.model.decode_batch(&globals).unwrap();
        let total: f64 = decoded.iter().zip(test).map(|(d, c)| chamfer(d, &c.real_points()).unwrap()).sum();
        means.push(total / test.len() as f64);
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let ratio = means[1] / means[0];
    outcome(
        monotone && ratio <= 3.0,
        format!(
            "mean CD at 256/128/64/32 input points: {}; 128-point ratio {ratio:.2} (limit 3)",
            means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

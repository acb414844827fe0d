//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kster::adapter::{forward_step, loss_and_grad, step_loss, AdapterParams, NeighborSet};
use kster::basemodel::StepContext;
use kster::basemodel::BaseModel;
use kster::evalbench::bleu::{bleu, bleu_text, paired_bootstrap};
use kster::evalbench::config::{Ablation, ExperimentConfig};
use kster::evalbench::harness::{build_store, prepare, run_damt, Mdmt};
use kster::evalbench::synth::Split;
use kster::kernels::{fixed_kernel_distribution, knnmt_distribution, KernelKind};
use kster::pipeline::{retrieve, RetrievalMode};
use kster::vecstore::{fp16_decode, fp16_encode, Datastore, ExampleRecord, IvfPqIndex, IvfPqParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

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

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

struct Instance {
    q: Vec<f64>,
    set: NeighborSet,
    p_m: Vec<f64>,
    y: u32,
}

/// Random query, keys at their true L2 distances, softmax model distribution;
/// the gold token is a neighbor value 60% of the time.
fn instance(rng: &mut ChaCha8Rng, d: usize, k: usize, vocab: usize) -> Instance {
    let q: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let keys: Vec<f64> = (0..k * d).map(|_| normal(rng)).collect();
    let distances: Vec<f64> = keys
        .chunks_exact(d)
        .map(|kr| kr.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let values: Vec<u32> = (0..k).map(|_| rng.random_range(0..vocab as u32)).collect();
    let logits: Vec<f64> = (0..vocab).map(|_| normal(rng)).collect();
    let y = if k > 0 && rng.random_bool(0.6) {
        values[rng.random_range(0..k)]
    } else {
        rng.random_range(0..vocab as u32)
    };
    Instance {
        q,
        set: NeighborSet::new(d, keys, values, distances).unwrap(),
        p_m: softmax(&logits),
        y,
    }
}

fn loss_at(inst: &Instance, params: &AdapterParams) -> f64 {
    let (p, _) = forward_step(params, &inst.q, &inst.set, &inst.p_m).unwrap();
    step_loss(&p, inst.y).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (d, h, k, vocab, eps) = (8, 8, 4, 12, 1e-4);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for kind in [KernelKind::Gaussian, KernelKind::Laplacian] {
        for mode in Ablation::ALL {
            let learnable = mode.learnable();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + kind.as_u8() as u64);
            let mut done = 0;
            while done < 20 {
                let inst = instance(&mut rng, d, k, vocab);
                let mut params = AdapterParams::init(d, h, kind, rng.random(), Some(&inst.set.distances)).unwrap();
                let lay = params.layout;
                for i in lay.b2() {
                    params.data[i] = 0.5 * normal(&mut rng);
                }
                params.data[lay.b3()] = normal(&mut rng);
                params.data[lay.b1()] += 0.3 * normal(&mut rng);
                if !learnable.kernel {
                    params.force_bandwidth(rng.random_range(0.5..4.0)).unwrap();
                }
                if !learnable.weight {
                    params.force_mixing(rng.random_range(0.1..0.9)).unwrap();
                }
                let (_, tape) = forward_step(&params, &inst.q, &inst.set, &inst.p_m).unwrap();
                // Central differences are meaningless across a ReLU kink.
                if learnable.weight && tape.hidden_pre.iter().any(|a| a.abs() <= 1e-3) {
                    continue;
                }
                let (_, grad) = loss_and_grad(&params, &inst.q, &inst.set, &inst.p_m, inst.y).unwrap();
                let mut p = params.clone();
                for range in learnable.ranges(&lay) {
                    for i in range {
                        let orig = p.data[i];
                        p.data[i] = orig + eps;
                        let up = loss_at(&inst, &p);
                        p.data[i] = orig - eps;
                        let down = loss_at(&inst, &p);
                        p.data[i] = orig;
                        let fd = (up - down) / (2.0 * eps);
                        let a = grad.data[i];
                        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
                    }
                }
                done += 1;
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!("{checked} instances, max rel err {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_hand): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (d, k, vocab) = (rng.random_range(2..16), rng.random_range(1..20), rng.random_range(3..40));
        let inst = instance(&mut rng, d, k, vocab);
        let temperature = rng.random_range(0.05..50.0);
        let lambda = rng.random_range(0.0..1.0);
        let mut params = AdapterParams::init(d, d, KernelKind::Gaussian, rng.random(), None).unwrap();
        params.force_bandwidth(temperature).unwrap();
        params.force_mixing(lambda).unwrap();
        let (p, _) = forward_step(&params, &inst.q, &inst.set, &inst.p_m).unwrap();
        let reference = knnmt_distribution(&inst.p_m, &inst.set.values, &inst.set.distances, temperature, lambda).unwrap();
        worst = worst.max(total_variation(&p, &reference));

        let w: Vec<f64> = inst.set.distances.iter().map(|d| (-d * d / temperature).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut hand: Vec<f64> = inst.p_m.iter().map(|x| (1.0 - lambda) * x).collect();
        for (&v, wj) in inst.set.values.iter().zip(&w) {
            hand[v as usize] += lambda * wj / z;
        }
        worst_hand = worst_hand.max(total_variation(&p, &hand));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && worst_hand <= 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "max TV {worst:.1e} (library), {worst_hand:.1e} (hand), {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let (mut singles, mut empties) = (0, 0);
    for i in 0..10_000 {
        let k = match i % 10 {
            0 => 0,
            1 => 1,
            _ => rng.random_range(2..32),
        };
        let (d, vocab) = (rng.random_range(1..12), rng.random_range(2..50));
        let inst = instance(&mut rng, d, k, vocab);
        let kind = if rng.random_bool(0.5) { KernelKind::Gaussian } else { KernelKind::Laplacian };
        let mut params = AdapterParams::init(d, rng.random_range(1..12), kind, rng.random(), None).unwrap();
        let lay = params.layout;
        params.data[lay.b1()] = rng.random_range(-8.0..8.0);
        params.data[lay.b3()] = rng.random_range(-6.0..6.0);
        let (p, tape) = forward_step(&params, &inst.q, &inst.set, &inst.p_m).unwrap();
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
        if k == 0 {
            empties += 1;
            if !tape.degenerate || !tape.p_e.is_empty() || tape.lambda != 0.0 {
                return outcome(false, "empty retrieval is not degenerate");
            }
        } else {
            singles += usize::from(k == 1);
            worst = worst.max((tape.p_e.total() - 1.0).abs());
        }
    }
    outcome(
        worst <= 1e-6,
        format!("max |sum-1| {worst:.1e} over 10000 ({singles} with k=1, {empties} empty: p = p_m, p_e empty)"),
    )
}

fn count_distribution(values: &[u32]) -> BTreeMap<u32, f64> {
    let mut m = BTreeMap::new();
    for &v in values {
        *m.entry(v).or_insert(0.0) += 1.0 / values.len() as f64;
    }
    m
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut flat, mut sharp): (f64, f64) = (0.0, 1.0);
    for trial in 0..200 {
        let kind = if trial % 2 == 0 { KernelKind::Gaussian } else { KernelKind::Laplacian };
        let k = rng.random_range(1..24);
        let d = 4;
        let inst = instance(&mut rng, d, k, 10);
        let mut params = AdapterParams::zeros(d, 4, kind);
        params.force_bandwidth(1e9).unwrap();
        let (_, tape) = forward_step(&params, &inst.q, &inst.set, &inst.p_m).unwrap();
        let direct = fixed_kernel_distribution(&inst.set.values, &inst.set.distances, 1e9, kind).unwrap();
        for (v, c) in count_distribution(&inst.set.values) {
            flat = flat.max((tape.p_e.get(v) - c).abs()).max((direct.get(v) - c).abs());
        }

        // Distinct distances on a 0.05 grid, shuffled.
        let mut distances: Vec<f64> = (0..k).map(|j| 0.1 + 0.05 * j as f64).collect();
        for j in (1..k).rev() {
            distances.swap(j, rng.random_range(0..=j));
        }
        let values: Vec<u32> = (0..k).map(|_| rng.random_range(0..10)).collect();
        let nearest = values[distances.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        let keys = vec![0.0; k * d];
        let set = NeighborSet::new(d, keys, values.clone(), distances.clone()).unwrap();
        params.force_bandwidth(1e-6).unwrap();
        let (_, tape) = forward_step(&params, &inst.q[..d], &set, &inst.p_m).unwrap();
        let direct = fixed_kernel_distribution(&values, &distances, 1e-6, kind).unwrap();
        sharp = sharp.min(tape.p_e.get(nearest)).min(direct.get(nearest));
    }
    outcome(
        flat <= 1e-6 && sharp >= 1.0 - 1e-6,
        format!("sigma=1e9 max dev {flat:.1e}; sigma=1e-6 min p_e(nearest) {sharp}"),
    )
}

fn store_from(keys: &[Vec<f32>]) -> Datastore {
    let recs: Vec<ExampleRecord> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| ExampleRecord {
            key: k.clone(),
            value: i as u32,
            domain: None,
        })
        .collect();
    Datastore::build(&recs, keys[0].len()).unwrap()
}

/// Sorted (squared distance, id) over decoded keys.
fn brute_force(ds: &Datastore, q: &[f32], k: usize) -> Vec<u64> {
    let mut all: Vec<(f64, u64)> = (0..ds.len() as u64)
        .map(|id| (ds.key(id).iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum(), id))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|x| x.1).collect()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact_ok = true;
    for s in 0..5 {
        let (n, d) = (200 + 300 * s, 4 + 4 * s);
        // Coarse values produce exact distance ties, exercising the id tie-break.
        let keys: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3..=3) as f32 * 0.5).collect())
            .collect();
        let ds = store_from(&keys);
        for _ in 0..50 {
            let q: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let k = rng.random_range(1..40);
            let got: Vec<u64> = ds.exact_search(&q, k).unwrap().iter().map(|n| n.id).collect();
            exact_ok &= got == brute_force(&ds, &q, k);
        }
    }

    // 64 Gaussian centres with low-rank spread and isotropic noise.
    let (n, d) = (50_000, 32);
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    let centres: Vec<Vec<f32>> = (0..64).map(|_| (0..d).map(|_| unit.sample(&mut rng)).collect()).collect();
    let basis: Vec<f32> = (0..d * 4).map(|_| unit.sample(&mut rng)).collect();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let c = &centres[rng.random_range(0..64)];
        let z: Vec<f32> = (0..4).map(|_| unit.sample(rng)).collect();
        (0..d)
            .map(|i| c[i] + 0.3 * (0..4).map(|l| basis[i * 4 + l] * z[l]).sum::<f32>() + 0.01 * unit.sample(rng))
            .collect()
    };
    let keys: Vec<Vec<f32>> = (0..n).map(|_| draw(&mut rng)).collect();
    let queries: Vec<Vec<f32>> = (0..50).map(|_| draw(&mut rng)).collect();
    let ds = store_from(&keys);
    let index = IvfPqIndex::train(&ds, &IvfPqParams { nlist: 64, m: 4, iters: 10, seed: 1 }).unwrap();
    let ds = ds.with_index(index).unwrap();
    let (mut hits, mut overlap) = (0usize, 0usize);
    for q in &queries {
        let truth = brute_force(&ds, q, 16);
        let approx: Vec<u64> = ds.ivfpq_search(q, 16, 16).unwrap().iter().map(|n| n.id).collect();
        hits += usize::from(approx.contains(&truth[0]));
        overlap += truth.iter().filter(|id| approx.contains(id)).count();
    }
    let recall = hits as f64 / queries.len() as f64;

    // At most 8 values per coordinate and 4 lists: every codebook is the set
    // of distinct residual subvectors, so quantization is lossless.
    let grid: Vec<Vec<f32>> = (0..3000)
        .map(|_| (0..8).map(|_| rng.random_range(0..8) as f32 * 0.25).collect())
        .collect();
    let small = store_from(&grid);
    let index = IvfPqIndex::train(&small, &IvfPqParams { nlist: 4, m: 8, iters: 10, seed: 2 }).unwrap();
    let small = small.with_index(index).unwrap();
    let mut lossless_ok = true;
    for _ in 0..50 {
        let q: Vec<f32> = (0..8).map(|_| rng.random_range(0.0..2.0)).collect();
        let a = small.exact_search(&q, 16).unwrap();
        let b = small.ivfpq_search(&q, 16, 4).unwrap();
        lossless_ok &= a.iter().map(|n| n.id).eq(b.iter().map(|n| n.id));
        lossless_ok &= a.iter().zip(&b).all(|(x, y)| (x.distance - y.distance).abs() <= 1e-5 * x.distance.max(1.0));
    }
    let elapsed = start.elapsed();
    outcome(
        exact_ok && recall >= 0.90 && lossless_ok && elapsed < Duration::from_secs(60),
        format!(
            "exact={exact_ok} recall@16={recall:.2} (top-16 overlap {:.2}) lossless={lossless_ok} {:.1}s",
            overlap as f64 / (16 * queries.len()) as f64,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut mismatches = 0;
    let mut crate_mismatches = 0;
    for bits in 0..=u16::MAX {
        let x = fp16_decode(bits);
        if x.is_nan() {
            continue;
        }
        mismatches += usize::from(fp16_encode(x) != bits);
        crate_mismatches += usize::from(half::f16::from_bits(bits).to_f32().to_bits() != x.to_bits());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        let x: f32 = StandardNormal.sample(&mut rng);
        let h = fp16_encode(x);
        crate_mismatches += usize::from(half::f16::from_f32(x).to_bits() != h);
        // Subnormal halves have absolute, not relative, precision.
        if x.abs() >= 6.103_515_6e-5 {
            worst = worst.max(((fp16_decode(h) as f64 - x as f64) / x as f64).abs());
        }
    }
    outcome(
        mismatches == 0 && worst <= 2f64.powi(-11) && crate_mismatches == 0,
        format!("{mismatches} round-trip mismatches, max rel err {worst:.3e}, {crate_mismatches} disagreements with `half`"),
    )
}

fn criterion_7() -> Outcome {
    let params = AdapterParams::zeros(512, 512, KernelKind::Gaussian);
    let (d, h) = (512, 512);
    let oracle = (2 * d + 1) + (h * 2 * d + h) + (h + 1);
    let count = params.parameter_count();
    outcome(count == 526_338 && count == oracle, format!("{count} parameters"))
}

fn criterion_8() -> Outcome {
    let cfg = ExperimentConfig::default();
    let p = prepare(&cfg, 8).unwrap();
    let store = build_store(&p, &cfg, &[1], 8).unwrap();
    let train = p.task.union(Split::Train, &[1]).unwrap();
    let mut checked = 0;
    let mut ok = true;
    for (n, s) in train.sentences.iter().enumerate().step_by(7) {
        for i in 0..=s.tgt.len() {
            let q = p
                .base
                .step(StepContext {
                    sentence: n,
                    source: &s.src,
                    prefix: &s.tgt[..i],
                })
                .unwrap()
                .q;
            let inference = retrieve(&store, &q, 16, None, RetrievalMode::Inference).unwrap();
            let training = retrieve(&store, &q, 16, None, RetrievalMode::Training).unwrap();
            let dropped = inference[0].id;
            ok &= inference[0].distance == 0.0;
            ok &= training.len() == 16;
            ok &= training.iter().all(|h| h.id != dropped);
            ok &= training[..15] == inference[1..];
            checked += 1;
        }
    }
    outcome(ok, format!("{checked} training queries"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

struct Desk {
    base_in: Vec<f64>,
    kster_in: Vec<f64>,
    degradation_kster: Vec<f64>,
    degradation_knnmt: Vec<f64>,
    with_dropout: Vec<f64>,
    without_dropout: Vec<f64>,
    cells: Vec<[f64; 4]>,
    contrastive_base: Vec<f64>,
    contrastive_kster: Vec<f64>,
    elapsed: Duration,
}

fn desk_runs() -> Desk {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mut desk = Desk {
        base_in: vec![],
        kster_in: vec![],
        degradation_kster: vec![],
        degradation_knnmt: vec![],
        with_dropout: vec![],
        without_dropout: vec![],
        cells: vec![],
        contrastive_base: vec![],
        contrastive_kster: vec![],
        elapsed: Duration::ZERO,
    };
    for seed in 1..=3 {
        let p = prepare(&cfg, seed).unwrap();
        let mut seed_base = vec![];
        let mut seed_kster = vec![];
        let mut deg_kster = vec![];
        let mut deg_knnmt = vec![];
        for domain in p.task.specific_domains() {
            let r = run_damt(&p, &cfg, domain, seed).unwrap();
            seed_base.push(r.base_in);
            seed_kster.push(r.kster_in);
            deg_kster.push(r.kster_general - r.base_general);
            deg_knnmt.push(r.knnmt_general - r.base_general);
        }
        desk.base_in.push(mean(&seed_base));
        desk.kster_in.push(mean(&seed_kster));
        desk.degradation_kster.push(mean(&deg_kster));
        desk.degradation_knnmt.push(mean(&deg_knnmt));

        let mdmt = Mdmt::new(&p, &cfg, seed).unwrap();
        let dropout = mdmt.dropout(&cfg, KernelKind::Laplacian, seed).unwrap();
        desk.with_dropout.push(dropout.with_dropout);
        desk.without_dropout.push(dropout.without_dropout);
        desk.cells.push(mdmt.ablation(&cfg, KernelKind::Gaussian, seed).unwrap().losses);
        let c = mdmt.contrastive(&cfg, KernelKind::Gaussian, seed).unwrap();
        desk.contrastive_base.push(c.base);
        desk.contrastive_kster.push(c.kster);
    }
    desk.elapsed = start.elapsed();
    desk
}

fn criterion_9(desk: &Desk) -> Outcome {
    let (base, kster) = (mean(&desk.base_in), mean(&desk.kster_in));
    let a = kster < base;
    let (dk, dn) = (mean(&desk.degradation_kster), mean(&desk.degradation_knnmt));
    let b = dk <= dn;
    let (with, without) = (mean(&desk.with_dropout), mean(&desk.without_dropout));
    let c = without > with;
    let cell = |a: Ablation| mean(&desk.cells.iter().map(|c| c[Ablation::ALL.iter().position(|&x| x == a).unwrap()]).collect::<Vec<_>>());
    let (none, kernel, weight, both) = (cell(Ablation::None), cell(Ablation::Kernel), cell(Ablation::Weight), cell(Ablation::Both));
    let best_single = kernel.min(weight);
    let d = both <= best_single * 1.02 && best_single <= none * 1.02;
    let time = desk.elapsed < Duration::from_secs(300);
    outcome(
        a && b && c && d && time,
        format!(
            "(a) ppl {kster:.2} < {base:.2}: {a}; (b) general ppl increase {dk:.2} <= kNN-MT {dn:.2}: {b}; \
             (c) loss without dropout {without:.4} > with {with:.4}: {c}; \
             (d) both {both:.4} kernel {kernel:.4} weight {weight:.4} none {none:.4}: {d}; {:.0}s",
            desk.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_10(desk: &Desk) -> Outcome {
    let (base, kster) = (mean(&desk.contrastive_base), mean(&desk.contrastive_kster));
    outcome(kster >= base, format!("accuracy kster {kster:.3} vs base {base:.3}"))
}

fn criterion_11() -> Outcome {
    let refs = vec![vec!["a", "b", "c"], vec!["d", "e", "f", "g", "h"]];
    let identity = bleu(&refs, &refs, 4).unwrap();
    let fixture = bleu_text(&["a b c d"], &["a b c d e"]).unwrap();
    let expected = 100.0 * (-0.25f64).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let refs: Vec<Vec<u32>> = (0..50).map(|_| (0..8).map(|_| rng.random_range(0..30)).collect()).collect();
    let worse: Vec<Vec<u32>> = refs.iter().map(|r| r.iter().map(|t| t + 100).collect()).collect();
    let p = paired_bootstrap(&refs, &worse, &refs, 1000, 3).unwrap();
    outcome(
        identity == 100.0 && (fixture - expected).abs() <= 1e-6 && p == 0.0,
        format!("identity {identity}, fixture {fixture:.6} (expected {expected:.6}), dominance p={p}"),
    )
}

fn pipeline_metrics(dir: &Path) -> Result<Vec<u8>, String> {
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        "train_sentences = 60\ngeneral_train_sentences = 300\ndev_sentences = 20\ntest_sentences = 20\nepochs = 4\nindex = \"ivfpq\"\n",
    )
    .map_err(|e| e.to_string())?;
    let d = dir.to_str().unwrap();
    let steps: [&[&str]; 9] = [
        &["gen-data", "--config", config.to_str().unwrap(), "--seed", "12"],
        &["build-base"],
        &["build-datastore", "--domain", "d1"],
        &["train", "--domain", "d1"],
        &["translate", "--domain", "d1"],
        &["score", "--domain", "d1"],
        &["eval", "--domain", "d1"],
        &["attribution", "--domain", "d1"],
        &["ablate"],
    ];
    let mut all = Vec::new();
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_kster"))
            .args(args)
            .args(["--dir", d])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
        all.extend_from_slice(&out.stdout);
    }
    all.extend(std::fs::read(dir.join("translations.jsonl")).map_err(|e| e.to_string())?);
    Ok(all)
}

fn criterion_12() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline_metrics(a.path()), pipeline_metrics(b.path())) {
        (Ok(x), Ok(y)) => outcome(x == y && !x.is_empty(), format!("{} bytes of metrics and translations, identical: {}", x.len(), x == y)),
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn main() {
    let desk = desk_runs();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient correctness", criterion_1()),
        (2, "kNN-MT degeneracy", criterion_2()),
        (3, "normalization", criterion_3()),
        (4, "bandwidth limits", criterion_4()),
        (5, "retrieval", criterion_5()),
        (6, "fp16", criterion_6()),
        (7, "parameter count", criterion_7()),
        (8, "retrieval dropout mechanics", criterion_8()),
        (9, "desk-scale adaptation direction", criterion_9(&desk)),
        (10, "contrastive direction", criterion_10(&desk)),
        (11, "metrics", criterion_11()),
        (12, "CLI determinism", criterion_12()),
    ];
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

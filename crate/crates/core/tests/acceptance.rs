//! End-to-end acceptance checks. Each test prints one PASS/FAIL line before
//! asserting, so `cargo test --test acceptance -- --nocapture` gives a
//! readable summary.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;

use tcrl::clustering::{dbscan, PseudoLabeling};
use tcrl::data::{gen_synthetic, Image};
use tcrl::encoder::{Activation, EncoderConfig, FeatureEncoder, MlpEncoder};
use tcrl::losses::{
    baseline_ccl, batch_hard_triplet, hcl, hybrid_contrast, id_loss, proxy_term, weighted_cluster_contrast, wrccl,
    LossConfig,
};
use tcrl::memory::{init_banks, momentum_blend, update_instance, ClusterBank};
use tcrl::numerics::{cosine_sim, grad_check, l2_normalize};
use tcrl::pipeline::{evaluate, file_sha256, score, write_epoch, write_header, EvalReport, Meta, TrainConfig, Trainer};
use tcrl::rng::{derive, Rng};

fn report(criterion: u32, ok: bool, detail: &str) {
    println!("{} criterion {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

fn unit_rows(rng: &mut Rng, n: usize, d: usize) -> Array2<f64> {
    let flat: Vec<f64> = (0..n).flat_map(|_| unit(rng, d)).collect();
    Array2::from_shape_vec((n, d), flat).unwrap()
}

const GRAD_TOL: f64 = 1e-4;
const GRAD_CONFIGS: usize = 100;

/// Draws (D, K) from the grid the gradient suite covers.
fn dims(rng: &mut Rng) -> (usize, usize) {
    ([4, 16, 64][rng.random_range(0..3)], [2, 5][rng.random_range(0..2)])
}

/// Returns the worst relative error over `GRAD_CONFIGS` draws of `case`.
fn worst_over<F: FnMut(&mut Rng) -> f64>(tag: u64, mut case: F) -> f64 {
    (0..GRAD_CONFIGS as u64).map(|i| case(&mut derive(tag, &[i]))).fold(0.0, f64::max)
}

fn pcl_case(rng: &mut Rng) -> f64 {
    let (d, _) = dims(rng);
    let c = unit(rng, d);
    let q = unit(rng, d);
    let t = proxy_term(&q, &c).unwrap();
    grad_check(|x| proxy_term(x, &c).unwrap().loss, &q, &t.grad).unwrap()
}

fn hcl_case(rng: &mut Rng) -> f64 {
    let (d, k) = dims(rng);
    let n = rng.random_range(k.max(3)..=64);
    // the first k rows cover every label; outliers get no bank row
    let raw: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if i < k {
                Some(i)
            } else if rng.random_bool(0.1) {
                None
            } else {
                Some(rng.random_range(0..k))
            }
        })
        .collect();
    let labeling = PseudoLabeling::from_labels(&raw);
    let f = unit_rows(rng, n, d);
    let (_, bank, _) = init_banks(f.view(), f.view(), &labeling).unwrap();
    let y = rng.random_range(0..k);
    let tau = [0.05, 0.1, 1.0][rng.random_range(0..3)];
    let q = unit(rng, d);
    let t = hcl(&q, &bank, y, tau).unwrap();
    assert!(!t.degenerate);
    grad_check(|x| hcl(x, &bank, y, tau).unwrap().loss, &q, &t.grad).unwrap()
}

fn cluster_case(rng: &mut Rng, weighted: bool) -> f64 {
    let (d, k) = dims(rng);
    let bank = ClusterBank::from_rows(unit_rows(rng, k, d)).unwrap();
    let y = rng.random_range(0..k);
    let tau = [0.05, 0.1, 1.0][rng.random_range(0..3)];
    let q = unit(rng, d);
    if weighted {
        let w = rng.random_range(0.0..1.0);
        let t = wrccl(&q, &bank, y, w, tau).unwrap();
        grad_check(|x| weighted_cluster_contrast(x, bank.rows(), y, w, tau).unwrap().loss, &q, &t.grad).unwrap()
    } else {
        let t = baseline_ccl(&q, &bank, y, tau).unwrap();
        grad_check(|x| baseline_ccl(x, &bank, y, tau).unwrap().loss, &q, &t.grad).unwrap()
    }
}

fn id_triplet_case(rng: &mut Rng) -> f64 {
    let (d, k) = dims(rng);
    let b = 2 * k + rng.random_range(0..6);
    let labels: Vec<usize> = (0..b).map(|i| if i < 2 * k { i / 2 } else { rng.random_range(0..k) }).collect();
    let feats = unit_rows(rng, b, d);
    let anchor = rng.random_range(0..b);

    let head = Array2::from_shape_simple_fn((k, d), || rng.random_range(-3.0..3.0));
    let q = feats.row(anchor).to_vec();
    let y = labels[anchor];
    let id = id_loss(&q, head.view(), y).unwrap();
    let e_q = grad_check(|x| id_loss(x, head.view(), y).unwrap().loss, &q, &id.grad_q).unwrap();
    let flat_head = head.as_slice().unwrap();
    let e_head = grad_check(
        |x| id_loss(&q, Array2::from_shape_vec((k, d), x.to_vec()).unwrap().view(), y).unwrap().loss,
        flat_head,
        id.grad_head.as_slice().unwrap(),
    )
    .unwrap();

    let margin = 0.3;
    let t = batch_hard_triplet(anchor, feats.view(), &labels, margin).unwrap();
    let e_t = grad_check(
        |x| {
            let m = Array2::from_shape_vec((b, d), x.to_vec()).unwrap();
            batch_hard_triplet(anchor, m.view(), &labels, margin).unwrap().loss
        },
        feats.as_slice().unwrap(),
        t.grad.as_slice().unwrap(),
    )
    .unwrap();
    e_q.max(e_head).max(e_t)
}

fn encoder_case(rng: &mut Rng) -> f64 {
    let cfg = EncoderConfig {
        height: 8,
        width: 8,
        channels: [1, 3][rng.random_range(0..2)],
        hidden: rng.random_range(3..=8),
        dim: [4, 16][rng.random_range(0..2)],
        activation: if rng.random_bool(0.5) { Activation::Relu } else { Activation::Identity },
        ..Default::default()
    };
    let mut enc = MlpEncoder::new(cfg.clone(), rng).unwrap();
    // fresh biases are zero; a fully dead hidden layer would then put the
    // output exactly on the normalization floor, where there is no derivative
    for block in enc.param_blocks_mut() {
        block.iter_mut().for_each(|p| *p += rng.random_range(-0.1..0.1));
    }
    let n = rng.random_range(1..=3);
    let images: Vec<Image> = (0..n)
        .map(|_| {
            let px = (0..cfg.input_len()).map(|_| rng.random_range(0.0..1.0)).collect();
            Image::new(8, 8, cfg.channels, px).unwrap()
        })
        .collect();
    let refs: Vec<&Image> = images.iter().collect();
    let (f, cache) = enc.encode(&refs).unwrap();
    let upstream = Array2::from_shape_simple_fn(f.dim(), || rng.random_range(-1.0..1.0));
    let grads = enc.backward(&cache, upstream.view()).unwrap();
    let mut worst = 0.0f64;
    for (blk, (params, g)) in enc.param_blocks().iter().zip(&grads).enumerate() {
        let probe = |x: &[f64]| {
            let mut e = enc.clone();
            e.param_blocks_mut()[blk].copy_from_slice(x);
            (&e.features(&refs).unwrap() * &upstream).sum()
        };
        worst = worst.max(grad_check(probe, params, g).unwrap());
    }
    worst
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let results = [
        ("PCL", worst_over(11, pcl_case)),
        ("HCL", worst_over(12, hcl_case)),
        ("WRCCL", worst_over(13, |r| cluster_case(r, true))),
        ("CCL", worst_over(14, |r| cluster_case(r, false))),
        ("ID+Triplet", worst_over(15, id_triplet_case)),
        ("encoder", worst_over(16, encoder_case)),
    ];
    let secs = start.elapsed().as_secs_f64();
    let ok = results.iter().all(|(_, e)| *e <= GRAD_TOL) && secs <= 60.0;
    let detail: Vec<String> = results.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect();
    report(1, ok, &format!("{GRAD_CONFIGS} configs each, worst rel. error [{}], {secs:.1}s", detail.join(", ")));
    assert!(ok);
}

/// Brute-force DBSCAN: core components by transitive closure, border points
/// claimed by the adjacent component whose lowest core index is smallest.
fn dbscan_oracle(dist: &Array2<f64>, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = dist.nrows();
    let near = |i: usize, j: usize| i == j || dist[[i, j]] <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut reach = Array2::from_shape_fn((n, n), |(i, j)| core[i] && core[j] && near(i, j));
    for m in 0..n {
        for i in 0..n {
            if reach[[i, m]] {
                for j in 0..n {
                    if reach[[m, j]] {
                        reach[[i, j]] = true;
                    }
                }
            }
        }
    }
    let root = |i: usize| (0..n).find(|&j| reach[[i, j]]).unwrap();
    (0..n)
        .map(|i| if core[i] { Some(root(i)) } else { (0..n).filter(|&j| core[j] && near(i, j)).map(root).min() })
        .collect()
}

#[test]
fn criterion_2_dbscan_matches_oracle() {
    let mut mismatches = Vec::new();
    for inst in 0..50u64 {
        let mut rng = derive(21, &[inst]);
        let n = rng.random_range(1..=200);
        let d = rng.random_range(2..=6);
        let modes = rng.random_range(1..=6);
        let centers = unit_rows(&mut rng, modes, d);
        let spread = rng.random_range(0.05..0.6);
        let flat: Vec<f64> = (0..n)
            .flat_map(|_| {
                let c = centers.row(rng.random_range(0..centers.nrows())).to_vec();
                let v: Vec<f64> = c.iter().map(|x| x + spread * rng.random_range(-1.0..1.0)).collect();
                l2_normalize(&v).unwrap()
            })
            .collect();
        let f = Array2::from_shape_vec((n, d), flat).unwrap();
        let dist = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 - f.row(i).dot(&f.row(j)) });
        let eps = rng.random_range(0.02..0.4);
        let min_pts = rng.random_range(1..=6);
        let got = dbscan(dist.view(), eps, min_pts).unwrap().canonical();
        let want = PseudoLabeling::from_labels(&dbscan_oracle(&dist, eps, min_pts)).canonical();
        if got != want {
            mismatches.push(inst);
        }
    }
    report(2, mismatches.is_empty(), &format!("50 instances, N <= 200, mismatches {mismatches:?}"));
    assert!(mismatches.is_empty());
}

/// Ranks by counting: an entry's rank is one plus the number of admissible
/// entries that beat it on similarity or tie with a lower index.
fn eval_oracle(q: &Array2<f64>, qm: &[Meta], g: &Array2<f64>, gm: &[Meta], max_rank: usize) -> Option<EvalReport> {
    let mut aps = Vec::new();
    let mut firsts = Vec::new();
    let mut skipped = Vec::new();
    for (qi, &this) in qm.iter().enumerate() {
        let admissible: Vec<usize> = (0..g.nrows()).filter(|&gi| gm[gi] != this).collect();
        let sim: Vec<f64> =
            (0..g.nrows()).map(|gi| cosine_sim(&q.row(qi).to_vec(), &g.row(gi).to_vec()).unwrap()).collect();
        let rank_of =
            |gi: usize| 1 + admissible.iter().filter(|&&o| sim[o] > sim[gi] || (sim[o] == sim[gi] && o < gi)).count();
        let mut pos: Vec<usize> = admissible.iter().filter(|&&gi| gm[gi].0 == this.0).map(|&gi| rank_of(gi)).collect();
        if pos.is_empty() {
            skipped.push(qi);
            continue;
        }
        pos.sort_unstable();
        let precision: Vec<f64> = pos.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).collect();
        aps.push(precision.iter().sum::<f64>() / pos.len() as f64);
        firsts.push(pos[0]);
    }
    if aps.is_empty() {
        return None;
    }
    let n = aps.len() as f64;
    Some(EvalReport {
        map: aps.iter().sum::<f64>() / n,
        cmc: (1..=max_rank).map(|r| firsts.iter().filter(|&&f| f <= r).count() as f64 / n).collect(),
        per_query_ap: aps,
        skipped_queries: skipped,
    })
}

#[test]
fn criterion_3_eval_matches_oracle() {
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for inst in 0..100u64 {
        let mut rng = derive(31, &[inst]);
        let d = rng.random_range(2..=4);
        let ids = rng.random_range(1..=6);
        // small integer features so that ties are common
        let (nq, ng) = (rng.random_range(1..=8), rng.random_range(1..=50));
        let mut feat = |n: usize| {
            Array2::from_shape_fn((n, d), |_| rng.random_range(-2..=2) as f64).mapv(|v| if v == 0.0 { 1.0 } else { v })
        };
        let (q, g) = (feat(nq), feat(ng));
        let mut meta =
            |n: usize| -> Vec<Meta> { (0..n).map(|_| (rng.random_range(0..ids), rng.random_range(0..3))).collect() };
        let (qm, gm) = (meta(nq), meta(ng));
        let max_rank = 25;
        let want = eval_oracle(&q, &qm, &g, &gm, max_rank);
        let got = score(q.view(), &qm, g.view(), &gm, max_rank).ok();
        if got != want {
            mismatches.push(inst);
        }
        checked += usize::from(want.is_some());
    }
    report(
        3,
        mismatches.is_empty(),
        &format!("100 instances ({checked} scorable), gallery <= 50, mismatches {mismatches:?}"),
    );
    assert!(mismatches.is_empty());
}

#[test]
fn criterion_4_loss_spot_values() {
    let rows = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let hcl_v = hybrid_contrast(&[1.0, 0.0], rows.view(), &[0, 1], 0, 1.0).unwrap().loss;
    let hcl_want = (1.0 + (-1.0f64).exp()).ln();

    let w = 0.7;
    let centroids = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let q = l2_normalize(&[1.0, 1.0]).unwrap();
    let wr = weighted_cluster_contrast(&q, centroids.view(), 0, w, 0.05).unwrap().loss;

    let c = l2_normalize(&[0.3, -0.2, 0.9]).unwrap();
    let p = proxy_term(&c, &c).unwrap().loss;

    let errs = [(hcl_v - hcl_want).abs(), (wr - w * 2f64.ln()).abs(), p.abs()];
    let ok = errs.iter().all(|e| *e <= 1e-9);
    report(4, ok, &format!("HCL {hcl_v:.12} vs {hcl_want:.12}, WRCCL {wr:.12} vs w ln 2, PCL at centroid {p:e}"));
    assert!(ok);
}

#[test]
fn criterion_5_bank_algebra() {
    let blended = momentum_blend(&[1.0, 0.0], &[0.0, 1.0], 0.1);
    let mid_ok = blended == vec![0.1, 0.9];

    let f = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
    let labeling = PseudoLabeling::from_labels(&[Some(0)]);
    let q = [0.6, 0.8];
    let (_, mut keep, _) = init_banks(f.view(), f.view(), &labeling).unwrap();
    update_instance(&mut keep, 0, &q, 1.0).unwrap();
    let (_, mut take, _) = init_banks(f.view(), f.view(), &labeling).unwrap();
    update_instance(&mut take, 0, &q, 0.0).unwrap();
    let ends_ok = keep.row(0) == [1.0, 0.0] && take.row(0) == q;

    let ok = mid_ok && ends_ok;
    report(
        5,
        ok,
        &format!(
            "m=0.1 blend {blended:?}; m=1 keeps row: {}; m=0 takes q: {}",
            keep.row(0) == [1.0, 0.0],
            take.row(0) == q
        ),
    );
    assert!(ok);
}

struct Run {
    base: f64,
    trained: f64,
}

fn train_and_eval(seed: u64, loss: LossConfig) -> tcrl::Result<Run> {
    let data = gen_synthetic(20, 20, 32, 32, seed)?;
    let cfg = TrainConfig { seed, loss, ..Default::default() };
    let mut t = Trainer::new(cfg, data.train)?;
    let base = evaluate(t.encoder(), &data.query, &data.gallery, 25)?.map;
    t.run(|_| Ok(()))?;
    let trained = evaluate(t.encoder(), &data.query, &data.gallery, 25)?.map;
    Ok(Run { base, trained })
}

#[test]
fn criterion_6_desk_scale_learning() {
    let mut gains = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let start = Instant::now();
        match train_and_eval(seed, LossConfig::default()) {
            Ok(r) => {
                lines.push(format!(
                    "seed {seed}: random-init mAP {:.3} -> trained {:.3} ({:.1}s)",
                    r.base,
                    r.trained,
                    start.elapsed().as_secs_f64()
                ));
                gains.push(r.trained - r.base);
            }
            Err(e) => {
                lines.push(format!("seed {seed}: aborted: {e}"));
                gains.push(0.0);
            }
        }
    }
    for l in &lines {
        println!("  {l}");
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let ok = mean >= 0.30;
    report(6, ok, &format!("mean mAP gain {mean:.3} over 3 seeds (bar 0.30)"));
    assert!(ok);
}

#[test]
fn criterion_7_ablation_trend() {
    let none = LossConfig::none();
    let rows: [(&str, LossConfig); 6] = [
        ("TCRL", LossConfig::default()),
        ("CCL", LossConfig { baseline_ccl: true, ..none.clone() }),
        ("PCL only", LossConfig { enable_pcl: true, ..none.clone() }),
        ("HCL only", LossConfig { enable_hcl: true, ..none.clone() }),
        ("WRCCL only", LossConfig { enable_wrccl: true, ..none.clone() }),
        ("ID+Triplet", LossConfig { baseline_id: true, baseline_triplet: true, ..none.clone() }),
    ];
    let mut means = Vec::new();
    for (name, loss) in &rows {
        let maps: Vec<Option<f64>> =
            (0..5).map(|seed| train_and_eval(seed, loss.clone()).ok().map(|r| r.trained)).collect();
        let mean = maps.iter().map(|m| m.unwrap_or(0.0)).sum::<f64>() / maps.len() as f64;
        let shown: Vec<String> = maps.iter().map(|m| m.map_or("abort".into(), |v| format!("{v:.3}"))).collect();
        println!("  {name:<11} mean mAP {mean:.3}  per seed [{}]", shown.join(", "));
        means.push((*name, mean));
    }
    let mut order = means.clone();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let order: Vec<String> = order.iter().map(|(n, m)| format!("{n} {m:.3}")).collect();
    println!("  ordering (recorded only): {}", order.join(" > "));
    let ok = means[0].1 >= means[1].1;
    report(7, ok, &format!("TCRL {:.3} vs CCL {:.3} over 5 seeds", means[0].1, means[1].1));
    assert!(ok);
}

fn full_run(dir: &std::path::Path) -> tcrl::Result<(Vec<u8>, String)> {
    let data = gen_synthetic(20, 20, 32, 32, 0)?;
    let cfg = TrainConfig::default();
    let mut telemetry = Vec::new();
    write_header(&mut telemetry, &cfg)?;
    let mut t = Trainer::new(cfg, data.train)?;
    t.run(|s| write_epoch(&mut telemetry, s))?;
    let path = dir.join("final.ckpt");
    t.checkpoint().save(&path)?;
    Ok((telemetry, file_sha256(&path)?))
}

#[test]
fn criterion_8_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (tel_a, hash_a) = full_run(a.path()).unwrap();
    let (tel_b, hash_b) = full_run(b.path()).unwrap();
    let lines = tel_a.iter().filter(|&&c| c == b'\n').count();
    let ok = tel_a == tel_b && hash_a == hash_b;
    report(
        8,
        ok,
        &format!("telemetry {} lines identical: {}; checkpoint sha256 {hash_a} vs {hash_b}", lines, tel_a == tel_b),
    );
    assert!(ok);
}

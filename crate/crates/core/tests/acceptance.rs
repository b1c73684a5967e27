//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use proto_anchor::classifier;
use proto_anchor::harness::{run_pipeline, sweep_k};
use proto_anchor::metrics::{average_precision, mean_average_precision};
use proto_anchor::prototype::{build_supervised, build_text_anchored};
use proto_anchor::search::{cosine, knn};
use proto_anchor::store::{load_table, write_table};
use proto_anchor::synth::generate_synthetic;
use proto_anchor::{EmbeddingTable, Head, PipelineConfig, RowMeta, ScoreMatrix, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ids(n: usize) -> Vec<RowMeta> {
    (0..n).map(|i| RowMeta::new(format!("r{i}"))).collect()
}

fn random_table(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingTable {
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    for _ in 0..n {
        // Occasionally duplicate an earlier row to exercise the tie rule.
        if !rows.is_empty() && rng.random_bool(0.1) {
            let j = rng.random_range(0..rows.len());
            rows.push(rows[j].clone());
            continue;
        }
        loop {
            let r: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            if r.iter().any(|&x| x != 0.0) {
                rows.push(r);
                break;
            }
        }
    }
    EmbeddingTable::from_rows(&rows, ids(n)).unwrap()
}

/// Scores every row with a plain sequential sum and sorts.
fn sort_oracle(query: &[f32], table: &EmbeddingTable) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = (0..table.len())
        .map(|i| {
            let mut s = 0.0f64;
            for (a, b) in query.iter().zip(table.row(i)) {
                s += *a as f64 * *b as f64;
            }
            (i, s.clamp(-1.0, 1.0))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
}

fn knn_exactness() -> Outcome {
    let start = Instant::now();
    let mut checks = 0usize;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=200);
        let dim = rng.random_range(1..=16);
        let table = random_table(&mut rng, n, dim);
        let query_src = if rng.random_bool(0.3) {
            table.row(rng.random_range(0..n)).to_vec()
        } else {
            (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
        };
        let Ok(q) = EmbeddingTable::from_rows(&[query_src], ids(1)) else {
            continue;
        };
        let oracle = sort_oracle(q.row(0), &table);
        for k in [1, rng.random_range(1..=n), n] {
            let got = knn(q.row(0), &table, k).map_err(|e| e.to_string())?;
            ensure(got.len() == k, || format!("seed {seed}: {} results for k={k}", got.len()))?;
            for (g, o) in got.iter().zip(&oracle) {
                ensure(g.row == o.0 && (g.score - o.1).abs() < 1e-12, || {
                    format!("seed {seed} k={k}: got row {} ({}), oracle row {} ({})", g.row, g.score, o.0, o.1)
                })?;
            }
            checks += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{checks} knn calls matched the sort oracle in {elapsed:.2?}"))
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    EmbeddingTable::from_rows(&[v], ids(1)).unwrap().row(0).to_vec()
}

fn cosine_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut worst_self = 0.0f64;
    for i in 0..100_000 {
        let dim = 1 + i % 32;
        let a = unit(&mut rng, dim);
        let b = unit(&mut rng, dim);
        let c = cosine(&a, &b).map_err(|e| e.to_string())?;
        ensure((-1.0..=1.0).contains(&c), || format!("cosine {c} out of range"))?;
        ensure(cosine(&a, &b).unwrap() == cosine(&b, &a).unwrap(), || "asymmetric".into())?;
        let s = cosine(&a, &a).unwrap();
        worst_self = worst_self.max((s - 1.0).abs());
    }
    ensure(worst_self <= 1e-6, || format!("self-cosine off by {worst_self}"))?;

    // Argmax invariance under query rescaling before normalization.
    let protos_src: Vec<Vec<f32>> = (0..8).map(|_| unit(&mut rng, 12)).collect();
    let meta = (0..8)
        .map(|c| RowMeta::new(format!("s{c}")).with_labels([format!("c{c}")]))
        .collect();
    let names: Vec<String> = (0..8).map(|c| format!("c{c}")).collect();
    let protos = build_supervised(&EmbeddingTable::from_rows(&protos_src, meta).unwrap(), &names)
        .map_err(|e| e.to_string())?;
    let raw: Vec<Vec<f32>> = (0..500)
        .map(|_| (0..12).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
        .collect();
    let mut reference: Option<Vec<String>> = None;
    for alpha in [1e-3f32, 1.0, 1e3] {
        let scaled: Vec<Vec<f32>> = raw.iter().map(|r| r.iter().map(|x| x * alpha).collect()).collect();
        let q = EmbeddingTable::from_rows(&scaled, ids(scaled.len())).unwrap();
        let (labels, _) = classifier::classify_single(&q, &protos, 1.0).map_err(|e| e.to_string())?;
        match &reference {
            None => reference = Some(labels),
            Some(r) => ensure(r == &labels, || format!("argmax changed at alpha {alpha}"))?,
        }
    }
    Ok(format!("1e5 pairs in [-1,1], max |cos(a,a)-1| = {worst_self:.1e}; argmax stable over 3 scales"))
}

/// Precision at every rank recomputed from scratch; rank from pairwise counts.
fn brute_ap(scores: &[f64], pos: &[bool]) -> f64 {
    let n = scores.len();
    let rank_of = |i: usize| {
        1 + (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let ranks: Vec<usize> = (0..n).map(rank_of).collect();
    let p = pos.iter().filter(|&&x| x).count() as f64;
    let mut total = 0.0;
    for i in (0..n).filter(|&i| pos[i]) {
        let r = ranks[i];
        let hits = (0..n).filter(|&j| pos[j] && ranks[j] <= r).count();
        total += hits as f64 / r as f64;
    }
    total / p
}

fn ap_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0..20) as f64) / 20.0)
            .collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        if !pos.iter().any(|&p| p) {
            let i = rng.random_range(0..n);
            pos[i] = true;
        }
        let ap = average_precision(&scores, &pos).map_err(|e| e.to_string())?;
        worst = worst.max((ap - brute_ap(&scores, &pos)).abs());
    }
    ensure(worst <= 1e-12, || format!("AP differs from brute force by {worst}"))?;

    let truth = vec![true, false, false, true, false, false, false, true, true];
    let m = ScoreMatrix {
        query_ids: (0..3).map(|i| format!("q{i}")).collect(),
        class_names: (0..3).map(|i| format!("c{i}")).collect(),
        scores: truth.iter().map(|&t| if t { 0.9 } else { 0.1 }).collect(),
        head: Head::ProtoMulti,
    };
    let perfect = mean_average_precision(&m, &truth).map_err(|e| e.to_string())?.map;
    ensure(perfect == 1.0, || format!("perfect-ranking mAP = {perfect}"))?;

    let hand = average_precision(&[0.9, 0.8, 0.1], &[false, true, true]).unwrap();
    ensure((hand - 0.583_333_333_333_333_3).abs() <= 1e-9, || format!("hand AP = {hand}"))?;
    Ok(format!("1000 instances within {worst:.1e}; perfect mAP 1.0; hand AP {hand:.6}"))
}

fn prototype_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let audio = random_table(&mut rng, 60, 6);
    let text = random_table(&mut rng, 7, 6);
    let p1 = build_text_anchored(&text, &audio, 1).map_err(|e| e.to_string())?;
    for c in 0..text.len() {
        let nn = knn(text.row(c), &audio, 1).unwrap()[0].row;
        ensure(p1.vector(c) == audio.row(nn), || format!("k=1 prototype {c} differs from its neighbor"))?;
    }

    let text = EmbeddingTable::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]], ids(2)).unwrap();
    let audio = EmbeddingTable::from_rows(
        &[[1.0f32, 0.1], [1.0, -0.1], [0.1, 1.0], [-0.1, 1.0]],
        ids(4),
    )
    .unwrap();
    let p = build_text_anchored(&text, &audio, 2).map_err(|e| e.to_string())?;
    let v = p.vector(0);
    ensure((v[0] - 1.0).abs() <= 1e-6 && v[1].abs() <= 1e-6, || format!("hand prototype {v:?}"))?;

    let meta = vec![
        RowMeta::new("a").with_labels(["x"]),
        RowMeta::new("b").with_labels(["x"]),
    ];
    let audio = EmbeddingTable::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]], meta).unwrap();
    let s = build_supervised(&audio, &["x".to_owned()]).map_err(|e| e.to_string())?;
    let h = std::f32::consts::FRAC_1_SQRT_2;
    let sv = s.vector(0);
    ensure((sv[0] - h).abs() <= 1e-6 && (sv[1] - h).abs() <= 1e-6, || format!("supervised {sv:?}"))?;
    Ok(format!("k=1 exact; hand prototype ({:.7}, {:.7}); supervised ({:.7}, {:.7})", v[0], v[1], sv[0], sv[1]))
}

fn method_direction() -> Outcome {
    let data = generate_synthetic(&SynthSpec::reference()).map_err(|e| e.to_string())?;
    let proto = run_pipeline(&data.audio, &data.text, &PipelineConfig::default())
        .map_err(|e| e.to_string())?
        .aggregate;
    let zs_cfg = PipelineConfig::default().with_head(Head::ZeroshotSingle);
    let zs = run_pipeline(&data.audio, &data.text, &zs_cfg).map_err(|e| e.to_string())?.aggregate;
    ensure(proto >= zs, || format!("prototypical {proto:.4} < zero-shot {zs:.4}"))?;

    let (mut better, mut total) = (0usize, 0usize);
    for seed in 0..10 {
        let d = generate_synthetic(&SynthSpec::reference().with_seed(seed)).map_err(|e| e.to_string())?;
        let p = build_text_anchored(&d.text, &d.audio, 35).map_err(|e| e.to_string())?;
        for c in 0..d.text.len() {
            let mu = d.means.row(c);
            if cosine(p.vector(c), mu).unwrap() >= cosine(d.text.row(c), mu).unwrap() {
                better += 1;
            }
            total += 1;
        }
    }
    let frac = better as f64 / total as f64;
    ensure(frac >= 0.95, || format!("prototype closer to the true mean for only {frac:.3} of classes"))?;
    Ok(format!(
        "accuracy proto {proto:.4} >= zero-shot {zs:.4}; prototype beats anchor for {better}/{total} classes"
    ))
}

fn k_plateau() -> Outcome {
    let data = generate_synthetic(&SynthSpec::reference()).map_err(|e| e.to_string())?;
    let ks: Vec<usize> = (20..=50).step_by(5).collect();
    let rows = sweep_k(&data.audio, &data.text, &ks, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let max = rows.iter().map(|r| r.1).fold(f64::MIN, f64::max);
    let min = rows.iter().map(|r| r.1).fold(f64::MAX, f64::min);
    let table: Vec<String> = rows.iter().map(|(k, m)| format!("{k}:{m:.4}")).collect();
    ensure(max - min <= 0.02, || format!("spread {:.4} > 0.02 ({})", max - min, table.join(" ")))?;
    Ok(format!("spread {:.4} over {}", max - min, table.join(" ")))
}

fn determinism_and_round_trips() -> Outcome {
    let spec = SynthSpec::reference();
    let a = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let b = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    ensure(a == b, || "synthetic generation not deterministic".into())?;

    for head in [Head::ProtoSingle, Head::ZeroshotSingle] {
        let cfg = PipelineConfig::default().with_head(head);
        let r1 = run_pipeline(&a.audio, &a.text, &cfg).map_err(|e| e.to_string())?.to_json();
        let r2 = run_pipeline(&b.audio, &b.text, &cfg).map_err(|e| e.to_string())?.to_json();
        ensure(r1 == r2, || format!("{head} reports differ"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (name, table) in [("audio", &a.audio), ("text", &a.text)] {
        let m = dir.path().join(format!("{name}.embt"));
        let j = dir.path().join(format!("{name}.jsonl"));
        write_table(table, &m, &j).map_err(|e| e.to_string())?;
        let back = load_table(&m, &j).map_err(|e| e.to_string())?;
        let same_bits = back
            .as_slice()
            .iter()
            .zip(table.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same_bits && back.meta() == table.meta(), || format!("{name} round trip lossy"))?;
    }
    Ok("generator, reports and EMBT round trip are bit-identical".into())
}

fn main() -> ExitCode {
    let suite_start = Instant::now();
    let criteria: [Criterion; 7] = [
        ("knn-exactness", knn_exactness),
        ("cosine-contracts", cosine_contracts),
        ("ap-map-oracle", ap_oracle),
        ("prototype-correctness", prototype_correctness),
        ("method-direction", method_direction),
        ("k-plateau", k_plateau),
        ("determinism-round-trips", determinism_and_round_trips),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        match check() {
            Ok(detail) => println!("PASS {name} ({:.2?}): {detail}", t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.2?}): {why}", t.elapsed());
            }
        }
    }
    let total = suite_start.elapsed();
    if total < Duration::from_secs(60) {
        println!("PASS suite-runtime: {total:.2?} < 60s");
    } else {
        failed += 1;
        println!("FAIL suite-runtime: {total:.2?} >= 60s");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

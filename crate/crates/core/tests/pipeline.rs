//! Harness-level tests on synthetic tasks.

use std::collections::HashMap;

use proto_anchor::harness::{self, anchors_for_template, lookup_from_table, run_pipeline, run_pipeline_detailed, sweep_k, sweep_prompts};
use proto_anchor::synth::{class_name, generate_synthetic};
use proto_anchor::{
    CaseMode, EmbeddingTable, Error, Head, Metric, PipelineConfig, PoolPolicy, PromptTemplate,
    PrototypeSource, RowMeta, SynthSpec,
};

fn spec() -> SynthSpec {
    SynthSpec {
        n_classes: 6,
        dim: 24,
        per_class: 25,
        audio_noise: 0.15,
        anchor_noise: 0.15,
        seed: 11,
        multilabel_overlap: 0.0,
        folds: 5,
    }
}

#[test]
fn prototypes_never_touch_the_evaluated_fold() {
    let d = generate_synthetic(&spec()).unwrap();
    let run = run_pipeline_detailed(&d.audio, &d.text, &PipelineConfig::default().with_k(10)).unwrap();
    assert_eq!(run.prototypes.len(), 5);
    for (fold, protos) in &run.prototypes {
        for p in protos.provenance() {
            for &m in &p.members {
                assert_ne!(d.audio.meta()[m].fold, Some(*fold), "fold {fold} leaked row {m}");
            }
        }
    }

    let all = PipelineConfig::default().with_k(10).with_pool(PoolPolicy::AllAudio);
    let run = run_pipeline_detailed(&d.audio, &d.text, &all).unwrap();
    let first = run.prototypes[0].1.as_slice().to_vec();
    assert!(run.prototypes.iter().all(|(_, p)| p.as_slice() == first));
}

#[test]
fn noise_free_k1_is_perfect_for_every_head() {
    let d = generate_synthetic(&SynthSpec {
        audio_noise: 0.0,
        anchor_noise: 0.0,
        ..spec()
    })
    .unwrap();
    for cfg in [
        PipelineConfig::default().with_k(1),
        PipelineConfig::default().with_k(1).with_pool(PoolPolicy::AllAudio),
        PipelineConfig::default().with_prototypes(PrototypeSource::Supervised),
        PipelineConfig::default().with_head(Head::ZeroshotSingle),
    ] {
        let r = run_pipeline(&d.audio, &d.text, &cfg).unwrap();
        assert_eq!(r.aggregate, 1.0, "{cfg:?}");
        assert_eq!(r.metric, Metric::Accuracy);
        assert_eq!(r.n_queries, 150);
    }
}

#[test]
fn fold_mean_is_unweighted() {
    let d = generate_synthetic(&SynthSpec { per_class: 7, folds: 4, ..spec() }).unwrap();
    let r = run_pipeline(&d.audio, &d.text, &PipelineConfig::default().with_k(5)).unwrap();
    assert_eq!(r.per_fold.len(), 4);
    let mean = r.per_fold.iter().map(|f| f.value).sum::<f64>() / 4.0;
    assert!((r.aggregate - mean).abs() < 1e-15);
}

#[test]
fn single_point_sweep_equals_direct_run() {
    let d = generate_synthetic(&spec()).unwrap();
    let cfg = PipelineConfig::default();
    for k in [1, 7, 30] {
        let sweep = sweep_k(&d.audio, &d.text, &[k], &cfg).unwrap();
        let direct = run_pipeline(&d.audio, &d.text, &cfg.clone().with_k(k)).unwrap();
        assert_eq!(sweep, vec![(k, direct.aggregate)]);
    }
    let many = sweep_k(&d.audio, &d.text, &[30, 1, 7, 7], &cfg).unwrap();
    assert_eq!(many.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 7, 30]);
    assert!(sweep_k(&d.audio, &d.text, &[], &cfg).is_err());
    assert!(matches!(sweep_k(&d.audio, &d.text, &[121], &cfg), Err(Error::Bounds(_))));
}

#[test]
fn runs_are_deterministic() {
    let d = generate_synthetic(&spec()).unwrap();
    let cfg = PipelineConfig::default().with_k(9);
    let a = run_pipeline(&d.audio, &d.text, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_pipeline(&d.audio, &d.text, &cfg).unwrap());
    assert_eq!(a.to_json(), b.to_json());
}

fn lookup_for(d: &proto_anchor::SynthData, templates: &[(PromptTemplate, Option<usize>)]) -> HashMap<String, Vec<f32>> {
    // Each template maps class c to the text anchor of class (c + shift).
    let n = d.text.len();
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (t, shift) in templates {
        for c in 0..n {
            let key = t.render(&class_name(c));
            if meta.iter().any(|m: &RowMeta| m.id == key) {
                continue;
            }
            let src = shift.map_or(c, |s| (c + s) % n);
            rows.push(d.text.row(src).to_vec());
            meta.push(RowMeta::new(key));
        }
    }
    lookup_from_table(&EmbeddingTable::from_rows(&rows, meta).unwrap())
}

#[test]
fn standard_prompt_sweep_reports_every_template() {
    let d = generate_synthetic(&spec()).unwrap();
    let names: Vec<String> = (0..d.text.len()).map(class_name).collect();
    let templates = PromptTemplate::standard_set();
    assert_eq!(templates.len(), 5);
    let paired: Vec<_> = templates
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), if i == 2 { Some(1) } else { None }))
        .collect();
    let lookup = lookup_for(&d, &paired);
    let cfg = PipelineConfig::default().with_k(10);
    let rows = sweep_prompts(&d.audio, &names, &templates, &lookup, &cfg).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1));

    let direct = run_pipeline(&d.audio, &d.text, &cfg).unwrap().aggregate;
    let worst = rows.last().unwrap();
    assert_eq!(worst.0, templates[2]);
    for (t, m) in &rows[..4] {
        assert_eq!(*m, direct, "{}", t.display_key());
    }
    assert!(worst.1 < direct);

    let csv = harness::prompt_sweep_csv(&rows).unwrap();
    assert!(csv.starts_with("prompt,metric\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn case_modes_are_distinct_sweep_rows() {
    let d = generate_synthetic(&spec()).unwrap();
    let names: Vec<String> = (0..d.text.len()).map(|c| format!("Dog{c}")).collect();
    let preserve = PromptTemplate::new("{}", CaseMode::Preserve).unwrap();
    let lower = PromptTemplate::new("{}", CaseMode::Lowercase).unwrap();
    assert_eq!(preserve.render("Dog0"), "Dog0");
    assert_eq!(lower.render("Dog0"), "dog0");
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for c in 0..names.len() {
        rows.push(d.text.row(c).to_vec());
        meta.push(RowMeta::new(preserve.render(&names[c])));
        rows.push(d.text.row((c + 1) % names.len()).to_vec());
        meta.push(RowMeta::new(lower.render(&names[c])));
    }
    let lookup = lookup_from_table(&EmbeddingTable::from_rows(&rows, meta).unwrap());
    let audio = relabel(&d.audio, &names);
    let out = sweep_prompts(&audio, &names, &[lower.clone(), preserve.clone()], &lookup, &PipelineConfig::default().with_k(10)).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].0, preserve);
    assert!(out[0].1 > out[1].1);
    assert_ne!(out[0].0.display_key(), out[1].0.display_key());

    let missing = PromptTemplate::new("A {}", CaseMode::Preserve).unwrap();
    assert!(matches!(
        anchors_for_template(&names, &missing, &lookup),
        Err(Error::MissingEmbedding { .. })
    ));
}

fn relabel(audio: &EmbeddingTable, names: &[String]) -> EmbeddingTable {
    let meta = audio
        .meta()
        .iter()
        .map(|m| {
            let c: usize = m.single_label().unwrap()["class_".len()..].parse().unwrap();
            RowMeta { labels: Some(vec![names[c].clone()]), ..m.clone() }
        })
        .collect();
    EmbeddingTable::new(audio.dim(), audio.as_slice().to_vec(), meta).unwrap()
}

#[test]
fn multi_label_task_is_scored_by_map() {
    let s = SynthSpec {
        multilabel_overlap: 0.4,
        folds: 2,
        ..spec()
    };
    let d = generate_synthetic(&s).unwrap();
    let proto = run_pipeline(&d.audio, &d.text, &PipelineConfig::default().with_head(Head::ProtoMulti).with_k(10)).unwrap();
    let zs = run_pipeline(&d.audio, &d.text, &PipelineConfig::default().with_head(Head::ZeroshotMulti)).unwrap();
    for r in [&proto, &zs] {
        assert_eq!(r.metric, Metric::Map);
        assert_eq!(r.n_queries, 75);
        assert_eq!(r.excluded_classes, Some(0));
        assert!(r.aggregate > 0.5 && r.aggregate <= 1.0, "{}", r.aggregate);
    }

    let bad = generate_synthetic(&SynthSpec { folds: 3, ..s }).unwrap();
    assert!(matches!(
        run_pipeline(&bad.audio, &bad.text, &PipelineConfig::default().with_head(Head::ProtoMulti)),
        Err(Error::Contract(_))
    ));
}

#[test]
fn esc50_shaped_protocol() {
    let d = generate_synthetic(&SynthSpec {
        n_classes: 50,
        per_class: 40,
        dim: 32,
        ..SynthSpec::reference()
    })
    .unwrap();
    assert_eq!(d.audio.len(), 2000);
    let r = run_pipeline(&d.audio, &d.text, &PipelineConfig::default()).unwrap();
    assert_eq!(r.per_fold.len(), 5);
    assert_eq!(r.n_queries, 2000);
    assert!((0.0..=1.0).contains(&r.aggregate));
}

#[test]
fn missing_folds_or_labels_are_contract_errors() {
    let d = generate_synthetic(&spec()).unwrap();
    let mut meta = d.audio.meta().to_vec();
    meta[3].fold = None;
    let no_fold = EmbeddingTable::new(d.audio.dim(), d.audio.as_slice().to_vec(), meta).unwrap();
    assert!(matches!(run_pipeline(&no_fold, &d.text, &PipelineConfig::default()), Err(Error::Contract(_))));

    let mut meta = d.audio.meta().to_vec();
    meta[0].labels = Some(vec!["class_00".into(), "class_01".into()]);
    let two = EmbeddingTable::new(d.audio.dim(), d.audio.as_slice().to_vec(), meta).unwrap();
    assert!(matches!(run_pipeline(&two, &d.text, &PipelineConfig::default()), Err(Error::Contract(_))));
}

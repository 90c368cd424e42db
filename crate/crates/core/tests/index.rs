mod common;

use std::fs;

use common::*;
use ndarray::Array1;
use phrase_index::corpus::{CorpusStore, Document};
use phrase_index::dense::{Encoder, ToyEncoder};
use phrase_index::index::{
    apply_filter, build_index, estimate_index_size, files, load_index, IndexConfig, QuantizationParams,
};
use phrase_index::search::{embed_query, exact_search, SearchConfig, Strategy};
use phrase_index::sparse::fit_tfidf;
use phrase_index::training::FilterModel;
use phrase_index::Error;
use tempfile::tempdir;

fn keep_all() -> FilterModel {
    FilterModel::keep_all(16)
}

#[test]
fn three_tokens_two_wide_window() {
    let corpus = CorpusStore::from_documents(vec![Document::new("a", "A", &["x y z"])]).unwrap();
    let dir = tempdir().unwrap();
    let index = build_toy(&dir.path().join("idx"), &corpus, &small_encoder(1), &keep_all(), 2, None);
    let c = &index.manifest().counts;
    assert_eq!((c.start_rows, c.end_rows, c.phrases), (3, 3, 5));
    let spans: Vec<(usize, usize)> = index.phrases().map(|p| (p.span.i, p.span.j)).collect();
    assert_eq!(spans, [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
}

#[test]
fn discard_all_filter_is_an_empty_index() {
    let corpus = CorpusStore::from_documents(vec![Document::new("a", "A", &["x y z"])]).unwrap();
    let params = small_encoder(1);
    let filter = FilterModel {
        threshold: 1.0,
        ..keep_all()
    };
    let dir = tempdir().unwrap();
    let out = dir.path().join("idx");
    let err = build_index(
        &corpus,
        &ToyEncoder::new(params.clone()).unwrap(),
        &params,
        &fit_tfidf(&corpus).unwrap(),
        &filter,
        &IndexConfig::default(),
        &out,
    )
    .unwrap_err();
    assert!(matches!(err, Error::EmptyIndex));
    assert!(err.to_string().contains("empty index"));
    assert!(!out.exists());
}

#[test]
fn filter_survival_examples() {
    let params = small_encoder(2);
    let enc = ToyEncoder::new(params).unwrap();
    let tokens = phrase_index::corpus::tokenize("one two three four");
    let h = enc.encode_paragraph("d", 0, &tokens).unwrap();
    let all = apply_filter(&h, &keep_all());
    assert!(all.start.iter().chain(&all.end).all(|&k| k));
    let half = FilterModel {
        threshold: 0.5,
        ..keep_all()
    };
    assert_eq!(apply_filter(&h, &half), all);
    assert_eq!(all.survival(), (1.0, 1.0));
}

/// A filter keeping exactly the starts whose first coordinate is positive.
fn sign_filter(d_b: usize) -> FilterModel {
    let mut w = Array1::zeros(d_b);
    w[0] = 1e6;
    FilterModel {
        w_start: w.clone(),
        b_start: 0.0,
        w_end: w,
        b_end: 0.0,
        threshold: 0.5,
    }
}

#[test]
fn dedup_accounting_and_round_trip_on_random_builds() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let corpus = random_corpus(&mut r, 12, 40);
        let params = small_encoder(seed);
        for filter in [keep_all(), sign_filter(16)] {
            let dir = tempdir().unwrap();
            let index = build_toy(&dir.path().join("idx"), &corpus, &params, &filter, 5, None);
            let c = index.manifest().counts.clone();
            assert_eq!(c.start_rows + c.end_rows, 2 * c.surviving_tokens);
            assert_eq!(c.tokens, corpus.n_tokens() as u64);
            assert_eq!(index.phrases().count() as u64, c.phrases);
            let oracle = Oracle::new(&corpus, &ToyEncoder::new(params.clone()).unwrap(), &filter, 5, 1 << 24);
            assert_eq!(oracle.n_phrases() as u64, c.phrases);
            if filter.threshold == 0.0 {
                assert_eq!(c.surviving_tokens, c.tokens);
            }
        }
    }
}

#[test]
fn stored_scores_within_quantization_bound() {
    let mut r = rng(20);
    let corpus = random_corpus(&mut r, 20, 60);
    let params = small_encoder(9);
    let dir = tempdir().unwrap();
    let index = build_toy(&dir.path().join("idx"), &corpus, &params, &keep_all(), 4, None);
    let oracle = Oracle::new(&corpus, &ToyEncoder::new(params).unwrap(), &keep_all(), 4, 1 << 24);
    let stored: Vec<_> = index.phrases().collect();
    assert_eq!(stored.len(), oracle.raw.len());
    for _ in 0..20 {
        let q = random_query(&mut r, 16, Default::default());
        let a: Vec<f64> = q.dense.a.to_vec();
        let b: Vec<f64> = q.dense.b.to_vec();
        let bound = index.start_quant().error_bound(&a) + index.end_quant().error_bound(&b);
        for (rec, (_, _, _, _, fa, fb, fc)) in stored.iter().zip(&oracle.raw) {
            let float = q.dense.a.dot(&Array1::from(fa.clone())) + q.dense.b.dot(&Array1::from(fb.clone())) + q.dense.c * fc;
            let da = index.dequantized_start(rec.start_ptr as usize);
            let db = index.dequantized_end(rec.end_ptr as usize);
            let indexed = q.dense.a.dot(&Array1::from(da)) + q.dense.b.dot(&Array1::from(db)) + q.dense.c * f64::from(rec.coherency);
            assert!((indexed - float).abs() <= bound + 1e-6, "{indexed} vs {float}, bound {bound}");
        }
    }
}

#[test]
fn truncated_section_names_itself() {
    let mut r = rng(3);
    let corpus = random_corpus(&mut r, 4, 20);
    let dir = tempdir().unwrap();
    let out = dir.path().join("idx");
    build_toy(&out, &corpus, &small_encoder(3), &keep_all(), 3, None);
    for name in [files::STARTS, files::COHERENCY, files::PHRASES] {
        let path = out.join(name);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match load_index(&out) {
            Err(Error::Checksum(section)) => assert_eq!(section, name),
            other => panic!("expected checksum error for {name}, got {other:?}"),
        }
        fs::write(&path, &bytes).unwrap();
    }
    let path = out.join(files::CORPUS);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] ^= 0x20;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_index(&out), Err(Error::Checksum(s)) if s == files::CORPUS));
}

#[test]
fn concurrent_loads_agree() {
    let mut r = rng(4);
    let corpus = random_corpus(&mut r, 6, 30);
    let dir = tempdir().unwrap();
    let out = dir.path().join("idx");
    build_toy(&out, &corpus, &small_encoder(4), &keep_all(), 3, None);
    let question = random_question(&mut r);
    let cfg = SearchConfig {
        strategy: Strategy::Exact,
        ..SearchConfig::default()
    };
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                s.spawn(|| {
                    let index = load_index(&out).unwrap();
                    let q = embed_query(&index, &question).unwrap();
                    exact_search(&index, &q, &cfg).unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            let mut bytes = fs::read(e.path()).unwrap();
            if name == files::MANIFEST {
                let mut m: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                m["created_at"] = 0.into();
                bytes = serde_json::to_vec(&m).unwrap();
            }
            (name, bytes)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn builds_are_byte_identical() {
    let mut r = rng(5);
    let corpus = random_corpus(&mut r, 10, 30);
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    build_toy(&a, &corpus, &small_encoder(5), &sign_filter(16), 4, Some(3));
    build_toy(&b, &corpus, &small_encoder(5), &sign_filter(16), 4, Some(3));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn rebuild_replaces_previous_index() {
    let mut r = rng(6);
    let small = random_corpus(&mut r, 2, 10);
    let large = random_corpus(&mut r, 5, 10);
    let dir = tempdir().unwrap();
    let out = dir.path().join("idx");
    build_toy(&out, &small, &small_encoder(6), &keep_all(), 3, None);
    let index = build_toy(&out, &large, &small_encoder(6), &keep_all(), 3, None);
    assert_eq!(index.manifest().counts.docs, 5);
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn width_mismatch_rejected() {
    let corpus = CorpusStore::from_documents(vec![Document::new("a", "A", &["x y"])]).unwrap();
    let params = small_encoder(1);
    let dir = tempdir().unwrap();
    let err = build_index(
        &corpus,
        &ToyEncoder::new(params.clone()).unwrap(),
        &params,
        &fit_tfidf(&corpus).unwrap(),
        &FilterModel::keep_all(8),
        &IndexConfig::default(),
        &dir.path().join("idx"),
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn quantization_on_random_vectors() {
    let mut r = rng(7);
    use rand::Rng;
    let rows = ndarray::Array2::from_shape_fn((200, 8), |_| r.random_range(-3.0..3.0));
    let p = QuantizationParams::fit(rows.view()).unwrap();
    for _ in 0..1000 {
        let v: Vec<f64> = (0..8).map(|k| r.random_range(p.offset[k] - 127.0 * p.scale[k]..=p.offset[k] + 127.0 * p.scale[k])).collect();
        let back = p.dequantize(&p.quantize(&v));
        for k in 0..8 {
            assert!((back[k] - v[k]).abs() <= p.scale[k] / 2.0 * (1.0 + 1e-9));
        }
    }
}

#[test]
fn storage_estimate_chain() {
    let e = estimate_index_size(60_000_000_000, 3_000_000_000, 480, 5.0 / 12.0, 4).unwrap();
    let tb = |b: f64| b / 1e12;
    assert!((tb(e.naive as f64) - 240.0).abs() / 240.0 <= 0.05);
    assert!((tb(e.pointer as f64) - 12.0).abs() / 12.0 <= 0.05);
    assert!((tb(e.filtered) - 5.0).abs() / 5.0 <= 0.05);
    assert!((tb(e.quantized) - 1.2).abs() / 1.2 <= 0.05);
    assert_eq!(e.naive * (2 * 3_000_000_000 * 480), e.pointer * (60_000_000_000 * 961));
}

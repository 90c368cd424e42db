//! Seeded synthetic fact corpora for tests, examples and benchmarks.
//!
//! Every paragraph is filler text interleaved with sentences of the form
//! `the <attribute> of <entity> is <value> .` and each fact yields the
//! question `what is the <attribute> of <entity> ?`. Entities are unique
//! across the corpus, so every question has exactly one gold paragraph.
//!
//! [`planted_suite`] additionally produces document encodings in which each
//! gold span carries its own question's vector, for end-to-end retrieval
//! checks through the precomputed-embedding path.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{tokenize, CorpusStore, Document, QaExample};
use crate::dense::{question_dense, Encoder, EncoderConfig, ToyEncoder, ToyEncoderParams};

const FILLER: &[&str] = &[
    "river", "stone", "market", "winter", "lantern", "harbor", "meadow", "copper", "signal", "orchard", "valley",
    "thunder", "mirror", "canvas", "garden", "engine", "island", "ladder", "forest", "candle", "bridge", "feather",
    "planet", "violin", "desert", "anchor", "basket", "glacier", "whistle", "compass",
];
const ATTRIBUTES: &[&str] = &["color", "capital", "founder", "mascot", "motto", "currency", "anthem", "emblem"];
const VALUES: &[&str] = &[
    "amber", "cobalt", "juniper", "marble", "saffron", "topaz", "velvet", "walnut", "zephyr", "quartz", "indigo",
    "cedar", "onyx", "pewter", "sienna", "tundra",
];

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect()
}

/// Builds `n_docs` documents of `paras_per_doc` paragraphs with
/// `facts_per_para` facts each, plus one question per fact.
pub fn fact_corpus(n_docs: usize, paras_per_doc: usize, facts_per_para: usize, seed: u64) -> (CorpusStore, Vec<QaExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    let mut qa = Vec::new();
    let mut entity = 0usize;
    for d in 0..n_docs {
        let doc_id = format!("doc{d:04}");
        let mut paragraphs = Vec::with_capacity(paras_per_doc);
        for p in 0..paras_per_doc {
            let n = rng.random_range(3..8);
            let mut text = filler(&mut rng, n).join(" ");
            for _ in 0..facts_per_para {
                let name = format!("ent{entity}");
                entity += 1;
                let attr = *ATTRIBUTES.choose(&mut rng).unwrap();
                let value = *VALUES.choose(&mut rng).unwrap();
                text.push_str(&format!(" the {attr} of {name} is "));
                let start = text.chars().count();
                text.push_str(value);
                let end = text.chars().count();
                text.push_str(" . ");
                let n = rng.random_range(3..8);
                text.push_str(&filler(&mut rng, n).join(" "));
                qa.push(QaExample {
                    question: format!("what is the {attr} of {name} ?"),
                    answers: vec![value.to_string()],
                    doc_id: Some(doc_id.clone()),
                    answer_span: Some([p, start, end]),
                });
            }
            paragraphs.push(text);
        }
        let refs: Vec<&str> = paragraphs.iter().map(String::as_str).collect();
        docs.push(Document::new(doc_id, format!("Document {d}"), &refs));
    }
    let store = CorpusStore::from_documents(docs).expect("generated corpus is valid");
    (store, qa)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub n_docs: usize,
    /// One paragraph per question.
    pub questions_per_doc: usize,
    pub encoder: EncoderConfig,
    /// Standard deviation of every non-planted coordinate.
    pub noise: f64,
    /// Adds one distractor document per gold document. A distractor repeats
    /// the question's relation word but not its entity, and carries the gold
    /// span's vectors verbatim on a different answer, so the dense score
    /// cannot separate them. Distractors come first in the corpus, so dense
    /// ties resolve against the gold document.
    pub distractors: bool,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_docs: 50,
            questions_per_doc: 2,
            encoder: EncoderConfig::new(32, 4),
            noise: 0.3,
            distractors: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSuite {
    pub corpus: CorpusStore,
    pub qa: Vec<QaExample>,
    /// Encodes questions; the planted rows are its outputs.
    pub question_encoder: ToyEncoderParams,
    /// Document id to `T x d` encodings, paragraphs concatenated.
    pub embeddings: BTreeMap<String, Array2<f64>>,
}

struct PlantedParagraph {
    text: String,
    /// Token span and the question whose vectors it carries.
    plant: (usize, usize, usize),
}

fn planted_paragraph(rng: &mut ChaCha8Rng, subject: &str, relation: &str, answer: &str, question: usize) -> PlantedParagraph {
    let n = rng.random_range(3..8);
    let mut text = filler(rng, n).join(" ");
    text.push_str(&format!(" the {relation} of {subject} is "));
    let start = text.chars().count();
    text.push_str(answer);
    let end = text.chars().count();
    text.push_str(" . ");
    let n = rng.random_range(3..8);
    text.push_str(&filler(rng, n).join(" "));
    let para = crate::corpus::Paragraph::new(text.clone());
    let (i, j) = para.token_span_for_chars(start, end).expect("answer lies on token boundaries");
    PlantedParagraph {
        text,
        plant: (i, j, question),
    }
}

/// Builds a corpus, its questions, and document encodings whose gold start
/// and end rows equal the question's start and end vectors under
/// `question_encoder`. The coherency rows at the gold start and end are
/// zero. Every other coordinate is Gaussian noise.
pub fn planted_suite(cfg: &PlantedConfig) -> PlantedSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let question_encoder = ToyEncoderParams::new(cfg.encoder, cfg.seed ^ 0x9e37_79b9);
    let encoder = ToyEncoder::new(question_encoder.clone()).expect("valid encoder config");
    let mut qa = Vec::new();
    let mut gold = Vec::new();
    let mut decoys = Vec::new();
    for d in 0..cfg.n_docs {
        let mut paras = Vec::new();
        let mut decoy_paras = Vec::new();
        for _ in 0..cfg.questions_per_doc {
            let n = qa.len();
            let (subject, relation) = (format!("ent{n}"), format!("prop{n}"));
            let answer = (0..=n % 3).map(|k| format!("val{n}x{k}")).collect::<Vec<_>>().join(" ");
            let decoy = (0..=n % 3).map(|k| format!("alt{n}x{k}")).collect::<Vec<_>>().join(" ");
            let para = planted_paragraph(&mut rng, &subject, &relation, &answer, n);
            qa.push(QaExample {
                question: format!("which {relation} of {subject} ?"),
                answers: vec![answer],
                doc_id: Some(format!("gold{d:04}")),
                answer_span: None,
            });
            paras.push(para);
            if cfg.distractors {
                decoy_paras.push(planted_paragraph(&mut rng, "something", &relation, &decoy, n));
            }
        }
        gold.push((format!("gold{d:04}"), paras));
        if cfg.distractors {
            decoys.push((format!("decoy{d:04}"), decoy_paras));
        }
    }

    let targets: Vec<_> = qa
        .iter()
        .map(|q| {
            let h = encoder.encode_question(&tokenize(&q.question)).expect("non-empty question");
            question_dense(&h).expect("marker row")
        })
        .collect();
    let d_b = cfg.encoder.d_b;
    let mut docs = Vec::new();
    let mut embeddings = BTreeMap::new();
    for (id, paras) in decoys.into_iter().chain(gold) {
        let texts: Vec<&str> = paras.iter().map(|p| p.text.as_str()).collect();
        let doc = Document::new(id.clone(), id.clone(), &texts);
        let mut h = Array2::from_shape_fn((doc.n_tokens(), cfg.encoder.d), |_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            cfg.noise * x
        });
        let mut offset = 0;
        for (p, para) in paras.iter().zip(&doc.paragraphs) {
            let (i, j, q) = p.plant;
            h.row_mut(offset + i).slice_mut(ndarray::s![..d_b]).assign(&targets[q].a);
            h.row_mut(offset + j).slice_mut(ndarray::s![d_b..2 * d_b]).assign(&targets[q].b);
            let d_c = cfg.encoder.d_c;
            h.row_mut(offset + i).slice_mut(ndarray::s![2 * d_b..2 * d_b + d_c]).fill(0.0);
            h.row_mut(offset + j).slice_mut(ndarray::s![2 * d_b + d_c..]).fill(0.0);
            offset += para.len();
        }
        embeddings.insert(id, h);
        docs.push(doc);
    }
    PlantedSuite {
        corpus: CorpusStore::from_documents(docs).expect("generated corpus is valid"),
        qa,
        question_encoder,
        embeddings,
    }
}

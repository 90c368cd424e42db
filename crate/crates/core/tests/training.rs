use phrase_index::dense::EncoderConfig;
use phrase_index::synthetic::fact_corpus;
use phrase_index::training::{Trainer, TrainingConfig};

#[test]
fn training_halves_the_loss() {
    let (corpus, qa) = fact_corpus(25, 2, 2, 11);
    let cfg = TrainingConfig {
        encoder: EncoderConfig::new(24, 8),
        n_features: 1024,
        epochs: 5,
        ..TrainingConfig::default()
    };
    let outcome = Trainer::new(&corpus, cfg).unwrap().run(&qa, |m| eprintln!("{}", serde_json::to_string(m).unwrap())).unwrap();
    let first = outcome.epochs.first().unwrap().loss.total;
    let last = outcome.epochs.last().unwrap().loss.total;
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

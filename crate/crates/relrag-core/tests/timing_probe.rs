use std::time::Instant;

use relrag_core::eval::{evaluate, AblationVariant, EvalOptions};
use relrag_core::model::TinyLm;
use relrag_core::{generate_corpus, train, CorpusSpec, ModelConfig, Split, TrainOptions, TrainSchedule};

#[test]
fn probe() {
    let spec = CorpusSpec {
        n_train: 600,
        n_dev: 0,
        n_test: 200,
        unique_answers: true,
        ..CorpusSpec::default()
    };
    let cfg = ModelConfig::default();
    let examples = generate_corpus(&spec, &cfg, 19).unwrap();
    let opts = EvalOptions { max_new_tokens: 4, ..EvalOptions::default() };

    for epochs in [6usize, 12, 18] {
        for variant in AblationVariant::ALL {
            let schedule = TrainSchedule {
                learning_rate: 1e-3,
                epochs,
                batch_size: 8,
                seed: 0,
                ..TrainSchedule::default()
            };
            let options = variant.apply(&TrainOptions::default());
            let mut model = TinyLm::new(cfg.clone(), 0).unwrap();
            let t0 = Instant::now();
            train(&mut model, &examples, &schedule, &options).unwrap();
            let (report, _) = evaluate(&model, &examples, Split::Test, &opts).unwrap();
            println!(
                "ep {epochs:>2} {:<18} em {:.3} f1 {:.3} hit {:.3} jacc {:.3}  ({:.1}s)",
                variant.label(),
                report.em,
                report.f1,
                report.hit_at_1,
                report.jacc,
                t0.elapsed().as_secs_f64(),
            );
        }
    }
}

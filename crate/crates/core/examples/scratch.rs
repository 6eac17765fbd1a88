// scratch driver for pipeline calibration (not part of the deliverable test suite)
use difem::experiments::config::UniaxialConfig;
use difem::experiments::uniaxial;
use difem::train::{train_loop, AdamState, TrainOptions, TrainProblem};

fn main() {
    let cfg = UniaxialConfig::default();
    let dataset = uniaxial::generate_dataset(&cfg).unwrap();
    let model = uniaxial::fresh_model(&cfg).unwrap();
    let mut trainer = uniaxial::UniaxialTrainer::new(&cfg, &dataset, model).unwrap();
    let mut state = AdamState::new(trainer.params().len());
    let opts = TrainOptions::new(cfg.epochs, cfg.adam, vec![]).unwrap();
    let t0 = std::time::Instant::now();
    let history = train_loop(&mut trainer, &opts, &mut state, |_, _, _| Ok(())).unwrap();
    let dt = t0.elapsed();
    for r in history.records.iter().step_by(20) {
        println!("epoch {:3}  train {:.4e}  test {:.4e}", r.epoch, r.train_loss, r.test_loss);
    }
    let last = history.records.last().unwrap();
    println!("epoch {:3}  train {:.4e}  test {:.4e}", last.epoch, last.train_loss, last.test_loss);
    println!("{} epochs in {:.2?}", cfg.epochs, dt);
    println!("decrease factor epoch1/final: {:.1}", history.records[0].train_loss / last.train_loss);
    let rows = uniaxial::modulus_comparison(&cfg, &dataset, &trainer.model).unwrap();
    let mut worst: f64 = 0.0;
    for (tr, e_model, e_truth) in &rows {
        let rel = (e_model - e_truth).abs() / e_truth;
        worst = worst.max(rel);
        println!("tr {:+.5e}  E_model {:.4e}  E_truth {:.4e}  rel {:.3e}", tr, e_model, e_truth, rel);
    }
    println!("worst modulus rel error: {:.4}", worst);
}

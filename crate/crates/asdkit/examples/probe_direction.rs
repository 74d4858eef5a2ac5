// scratch probe for generator tuning
use asdkit::eval::{run_experiment, DataSource, ExperimentConfig};
use asdkit::model::ModelKind;
use asdkit::synth::GenConfig;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(25);
    let train: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(16);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let gen = GenConfig {
        kinds: vec!["stationary_a".into(), "stationary_b".into(), "nonstat_a".into(), "nonstat_b".into()],
        snrs_db: vec![0],
        train_count: train,
        test_normal: 12,
        test_anomalous: 12,
        ..GenConfig::default()
    };
    let cfg = ExperimentConfig {
        models: vec![ModelKind::Ae, ModelKind::Idnn, ModelKind::Pdnn],
        trials: 2,
        master_seed: seed,
        epochs,
        ..ExperimentConfig::new(DataSource::Synthetic(gen))
    };
    let t0 = Instant::now();
    let result = run_experiment(&cfg).unwrap();
    println!("elapsed: {:.1}s (epochs {epochs}, train {train}, seed {seed})", t0.elapsed().as_secs_f64());
    for cell in &result.cells {
        println!("{:<6} {:<14} {} dB: mean {:.3} (trials {:?})",
            cell.model.name(), cell.kind, cell.snr_db, cell.mean(),
            cell.aucs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
}

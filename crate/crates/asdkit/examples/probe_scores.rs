// scratch probe: per-model normal/anomalous segment score distributions
use asdkit::dsp::{extract_log_mel, FeatureParams};
use asdkit::eval::{roc_auc, ScoreRecord};
use asdkit::manifest::{Label, Split};
use asdkit::model::*;
use asdkit::synth::{gen_mixed_clip, GenConfig};
use asdkit::windowing::{apply_norm, fit_norm_stats, make_windows, WindowSet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).cloned().unwrap_or("nonstat_a".into());
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(25);
    let train_n: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(16);
    let snr: i32 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);
    let features = FeatureParams::default();
    let gen = GenConfig { train_count: train_n, test_normal: 12, test_anomalous: 12, seed: 7, ..GenConfig::default() };

    // data
    let mut train_specs = Vec::new();
    for i in 0..gen.train_count {
        let clip = gen_mixed_clip(&kind, snr, Label::Normal, Split::Train, i, &gen).unwrap();
        train_specs.push(extract_log_mel(&clip, &features).unwrap());
    }
    let mut test = Vec::new();
    for (label, count) in [(Label::Normal, gen.test_normal), (Label::Anomalous, gen.test_anomalous)] {
        for i in 0..count {
            let clip = gen_mixed_clip(&kind, snr, label, Split::Test, i, &gen).unwrap();
            test.push((label, extract_log_mel(&clip, &features).unwrap()));
        }
    }

    for mk in [ModelKind::Ae, ModelKind::Idnn, ModelKind::Pdnn] {
        let regime = mk.regime();
        let mut combined: Option<WindowSet> = None;
        for s in &train_specs {
            let ws = make_windows(s, 5, regime).unwrap();
            match combined.as_mut() { Some(acc) => acc.append(&ws).unwrap(), None => combined = Some(ws) }
        }
        let raw = combined.unwrap();
        let stats = fit_norm_stats(&raw).unwrap();
        let ws = apply_norm(&raw, &stats).unwrap();
        let cfg = TrainConfig { epochs, batch_size: 64, seed: 11, ..TrainConfig::default() };
        let model = train(build_model(&ModelSpec::new(mk, 5, 64), 13).unwrap(), &ws, &cfg).unwrap();

        let mut records = Vec::new();
        let (mut n_scores, mut a_scores) = (Vec::new(), Vec::new());
        for (i, (label, spec)) in test.iter().enumerate() {
            let s = score_segment(&model, spec).unwrap();
            records.push(ScoreRecord { segment_id: format!("{i}"), label: *label, score: s });
            match label { Label::Normal => n_scores.push(s), Label::Anomalous => a_scores.push(s) }
        }
        let stat = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            (m, sd)
        };
        let (nm, ns) = stat(&n_scores);
        let (am, asd) = stat(&a_scores);
        let auc = roc_auc(&records).unwrap();
        println!("{:<5} {kind} {snr}dB ep{epochs}: AUC {auc:.3} | normal {nm:.2}±{ns:.2} anomalous {am:.2}±{asd:.2} | sep {(am-nm)/ns:.2}σ",
            mk.name(), (am-nm)/ns.max(1e-9));
    }
}

//! Fixture calibration, staged:
//!   A) feature knobs against the feature-only probe (empty graph,
//!      identity metric),
//!   B) graph knobs against the plain-GCN baseline at fixed features,
//!   C) a confirmation run printing plain / jlgcn / feature-only on the
//!      shipped preset.

use jlgcn::data::{synth_citation, CitationSynthSpec};
use jlgcn::layer::{LayerMode, RInit};
use jlgcn::train::{train_node_bundle, Precision, TrainConfig};

fn feat_only(bundle: &jlgcn::data::DatasetBundle, epochs: usize, seeds: u64) -> f64 {
    let mut cfg = TrainConfig::citation_defaults();
    cfg.precision = Precision::F32;
    cfg.epochs = epochs;
    cfg.eval_every = 4;
    cfg.seeds = (0..seeds).collect();
    cfg.r_init = RInit::Identity;
    cfg.perturb.edge_missing = 1.0;
    train_node_bundle(&cfg, bundle)
        .unwrap()
        .report
        .aggregate
        .mean_selected_test_acc
}

fn plain(bundle: &jlgcn::data::DatasetBundle, epochs: usize, seeds: u64) -> f64 {
    let mut cfg = TrainConfig::citation_defaults();
    cfg.mode = LayerMode::PlainGcn;
    cfg.precision = Precision::F32;
    cfg.epochs = epochs;
    cfg.seeds = (0..seeds).collect();
    train_node_bundle(&cfg, bundle)
        .unwrap()
        .report
        .aggregate
        .mean_selected_test_acc
}

fn jlgcn_acc(bundle: &jlgcn::data::DatasetBundle, epochs: usize, seeds: u64) -> f64 {
    let mut cfg = TrainConfig::citation_defaults();
    cfg.precision = Precision::F32;
    cfg.epochs = epochs;
    cfg.seeds = (0..seeds).collect();
    train_node_bundle(&cfg, bundle)
        .unwrap()
        .report
        .aggregate
        .mean_selected_test_acc
}

fn main() {
    let stage = std::env::args().nth(1).unwrap_or_else(|| "a".into());
    match stage.as_str() {
        // Stage A: feature-only accuracy vs word knobs.
        "a" => {
            for &words in &[12usize, 16, 20] {
                for &bias in &[0.6f64, 0.7] {
                    let mut spec = CitationSynthSpec::cora_analog(0);
                    spec.words_per_doc = words;
                    spec.topic_bias = bias;
                    spec.confusion = 0.2;
                    let bundle = synth_citation(&spec).unwrap();
                    let acc = feat_only(&bundle, 50, 1);
                    println!("A words={words} bias={bias}: feat_only={acc:.4}");
                }
            }
        }
        // Stage B: plain GCN vs graph knobs at fixed feature knobs.
        "b" => {
            let words: usize = std::env::args().nth(2).unwrap().parse().unwrap();
            let bias: f64 = std::env::args().nth(3).unwrap().parse().unwrap();
            for &homophily in &[0.7f64, 0.8] {
                for &isolated in &[0.15f64, 0.3] {
                    let mut spec = CitationSynthSpec::cora_analog(0);
                    spec.words_per_doc = words;
                    spec.topic_bias = bias;
                    spec.confusion = 0.2;
                    spec.homophily = homophily;
                    spec.isolated = isolated;
                    let bundle = synth_citation(&spec).unwrap();
                    let acc = plain(&bundle, 150, 2);
                    println!("B homophily={homophily} isolated={isolated}: plain={acc:.4}");
                }
            }
        }
        // Stage C: confirm the shipped preset with longer runs.
        "c" => {
            let spec = CitationSynthSpec::cora_analog(0);
            let bundle = synth_citation(&spec).unwrap();
            let p = plain(&bundle, 300, 3);
            let j = jlgcn_acc(&bundle, 300, 3);
            let f = feat_only(&bundle, 80, 3);
            println!("C plain={p:.4} jlgcn={j:.4} feat_only={f:.4}");
        }
        other => eprintln!("unknown stage {other}"),
    }
}

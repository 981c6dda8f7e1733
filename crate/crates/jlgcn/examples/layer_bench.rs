use jlgcn::data::{synth_citation, CitationSynthSpec};
use jlgcn::layer::{GlrSignalSource, LayerMode, LayerState, RInit};
use jlgcn::linalg::{DenseMatrix, Rng};
use std::time::Instant;

fn main() {
    let bundle = synth_citation(&CitationSynthSpec::cora_analog(0)).unwrap();
    let feats: DenseMatrix<f32> = bundle.features.cast();
    let graph0: DenseMatrix<f32> = bundle.adjacency();
    let mut rng = Rng::new(1);
    let mut l1 = LayerState::<f32>::new_jlgcn(
        LayerMode::Jlgcn, 1433, 16, 16, RInit::Random, GlrSignalSource::Input, &mut rng,
    ).unwrap();
    l1.set_static_source(true);
    let mut l2 = LayerState::<f32>::new_jlgcn(
        LayerMode::Jlgcn, 16, 7, 16, RInit::Random, GlrSignalSource::Input, &mut rng,
    ).unwrap();

    // warm static stats
    let out1 = l1.forward_split(&feats, &feats, &graph0, true, true).unwrap();

    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let _ = l1.forward_split(&feats, &feats, &graph0, true, true).unwrap();
    }
    println!("L1 fwd: {:.3}s", t.elapsed().as_secs_f64() / reps as f64);

    let z1 = out1.features.leaky_relu(0.2);
    let t = Instant::now();
    for _ in 0..reps {
        let _ = l2.forward_split(&z1, &z1, &out1.graph, true, true).unwrap();
    }
    println!("L2 fwd: {:.3}s", t.elapsed().as_secs_f64() / reps as f64);

    let up1 = DenseMatrix::<f32>::glorot_init(2708, 16, &mut rng);
    let up2 = DenseMatrix::<f32>::glorot_init(2708, 7, &mut rng);
    let ug = DenseMatrix::<f32>::glorot_init(2708, 2708, &mut rng).scale(0.01);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = l2.backward(&up2, None, 1e-4, true, true).unwrap();
    }
    println!("L2 bwd (full): {:.3}s", t.elapsed().as_secs_f64() / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = l1.backward(&up1, Some(&ug), 1e-4, false, false).unwrap();
    }
    println!("L1 bwd (no input grads): {:.3}s", t.elapsed().as_secs_f64() / reps as f64);
}

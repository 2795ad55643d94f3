//! Train the tiny network for a few epochs on a fresh simulated dataset,
//! then evaluate it with ground-truth and self-fed past poses.
//!
//! `cargo run --release --example train_tiny -- [epochs]`

use nowcast::armsim::{generate_dataset, Dataset, SimConfig, Split, WindowSpec};
use nowcast::augment::AugmentParams;
use nowcast::metrics::DEFAULT_THRESHOLDS_CM;
use nowcast::model::{ModelConfig, Network};
use nowcast::train::{evaluate_both, open_output, TrainConfig, Trainer};

fn main() -> nowcast::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .map_or(2, |s| s.parse().expect("epochs"));
    let root = std::env::temp_dir().join("nowcast_train_example");
    let data = root.join("data");
    let mut sim = SimConfig::tiny();
    sim.n_sequences = 5;
    sim.duration_s = 5.0;
    generate_dataset(&sim, 11, &data)?;

    let ds = Dataset::open(&data)?;
    let m = ds.manifest().clone();
    let window = WindowSpec::default();
    let train = ds
        .samples(Split::Train, &window)
        .collect::<nowcast::Result<Vec<_>>>()?;
    let val = ds
        .samples(Split::Val, &window)
        .collect::<nowcast::Result<Vec<_>>>()?;
    println!(
        "{} training and {} validation samples",
        train.len(),
        val.len()
    );

    let net = Network::<f32>::new(ModelConfig::tiny(), m.normalization, 0)?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (out, mut log) = open_output(
        &root.join("run"),
        serde_json::json!({"example": "train_tiny"}),
    )?;
    let mut trainer = Trainer::new(net, config, AugmentParams::default(), window.clone())?;
    let summary = trainer.fit(&train, &val, Some(&out), &mut log)?;
    for r in summary.log.iter().filter(|r| r.split != "step") {
        println!(
            "epoch {} {:<5} rpe {:.5} rpf {:.5} lr {:.0e}{}",
            r.epoch,
            r.split,
            r.loss_rpe,
            r.loss_rpf,
            r.lr,
            r.add_cm
                .map_or(String::new(), |a| format!(" ADD {a:.2} cm"))
        );
    }
    println!("checkpoints in {}", out.dir.display());

    let test: Vec<_> = m
        .split_indices(Split::Test)
        .into_iter()
        .map(|k| ds.load_sequence(k))
        .collect::<nowcast::Result<_>>()?;
    let (gt, auto, gap) = evaluate_both(
        &trainer.net,
        &test,
        &window,
        &DEFAULT_THRESHOLDS_CM,
        &m.joint_names,
    )?;
    for ((g, a), d) in gt.per_horizon.iter().zip(&auto.per_horizon).zip(&gap) {
        let add = |h: &nowcast::metrics::HorizonScores| {
            h.scores.as_ref().map_or(f64::NAN, |s| s.add_mean)
        };
        println!(
            "t+{:.1}s  gt_past {:.2} cm  autoregressive {:.2} cm  gap {:+.2}",
            g.offset_s,
            add(g),
            add(a),
            d.add_gap_cm.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

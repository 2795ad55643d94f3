//! Feed a network its own estimates over a sequence, the way it runs online.

use nowcast::armsim::{generate_dataset, Dataset, SimConfig, WindowSpec};
use nowcast::model::{ModelConfig, Network};
use nowcast::spdh::Pose3D;
use nowcast::train::{rollout, RolloutState};

fn main() -> nowcast::Result<()> {
    // The pose buffer alone: 10 slots refreshed every third frame.
    let mut state = RolloutState::new(10, 3)?;
    for n in 0..40 {
        state.push(Pose3D::new(
            vec![[0.0, 0.0, 2.0 + n as f64 * 0.01]],
            n as f64 / 30.0,
        ));
    }
    let history = state.history().expect("filled");
    println!(
        "after 40 frames the next history spans t = {:.3} .. {:.3} s (warmup: {})",
        history[0].timestamp,
        history[history.len() - 1].timestamp,
        state.is_warmup()
    );

    let dir = std::env::temp_dir().join("nowcast_rollout_example");
    let mut sim = SimConfig::tiny();
    sim.n_sequences = 1;
    sim.duration_s = 2.0;
    let m = generate_dataset(&sim, 3, &dir)?;
    let seq = Dataset::open(&dir)?.load_sequence(0)?;
    // Untrained weights: the numbers are meaningless, the bookkeeping is not.
    let net = Network::<f32>::new(ModelConfig::tiny(), m.normalization, 0)?;
    let window = WindowSpec::default();
    let frames = rollout(&net, &seq, &window)?;
    for f in frames.iter().step_by(15) {
        println!(
            "frame {:>2} t={:.3}s warmup={:<5} forecasts at {:?}",
            f.frame,
            f.current.timestamp,
            f.warmup,
            f.future
                .iter()
                .map(|p| format!("{:.2}", p.timestamp))
                .collect::<Vec<_>>()
        );
    }
    Ok(())
}

//! Write a small simulated dataset and read a training sample back.
//!
//! `cargo run --example generate_dataset -- /tmp/arm_data`

use std::path::PathBuf;

use nowcast::armsim::{generate_dataset, Dataset, SimConfig, Split, WindowSpec};

fn main() -> nowcast::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("nowcast_example_data"));
    let mut sim = SimConfig::tiny();
    sim.n_sequences = 3;
    sim.duration_s = 4.0;

    let manifest = generate_dataset(&sim, 42, &out)?;
    println!(
        "{} sequences x {:?} frames at {} Hz into {}",
        manifest.n_sequences,
        manifest.frames_per_sequence,
        manifest.frame_rate,
        out.display()
    );
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("  {split:?}: sequences {:?}", manifest.split_indices(split));
    }

    let ds = Dataset::open(&out)?;
    let window = WindowSpec::default();
    let seq = ds.load_sequence(0)?;
    let frames = seq.window_frames(&window)?;
    println!(
        "sequence 0: {} frames, {} usable with full history and future",
        seq.len(),
        frames.len()
    );
    let s = seq.sample(frames.start, &window)?;
    println!(
        "sample at frame {}: {} valid pixels, {} past poses at {} Hz, futures at {:?} s",
        s.frame,
        s.depth.valid_count(),
        s.past.poses.len(),
        s.past.rate,
        s.future
            .iter()
            .map(|p| p.timestamp - s.current.timestamp)
            .collect::<Vec<_>>()
    );
    Ok(())
}

//! Apply the training-time augmentation to one sample and report what changed.

use nowcast::armsim::{generate_dataset, Dataset, SimConfig, WindowSpec};
use nowcast::augment::{augment_sample, sample_transform, AugmentParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nowcast::Result<()> {
    let dir = std::env::temp_dir().join("nowcast_augment_example");
    let mut sim = SimConfig::tiny();
    sim.n_sequences = 1;
    sim.duration_s = 4.0;
    generate_dataset(&sim, 5, &dir)?;
    let seq = Dataset::open(&dir)?.load_sequence(0)?;
    let window = WindowSpec::default();
    let sample = seq.sample(seq.window_frames(&window)?.start, &window)?;

    let params = AugmentParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = sample_transform(&params, &mut rng);
    println!(
        "a sampled transform: translation {:?}",
        t.translation.as_slice()
    );

    for attempt in 0..4 {
        match augment_sample(&sample, &params, &mut rng) {
            Ok(a) => {
                let moved = (a.current.point(4) - sample.current.point(4)).norm();
                println!(
                    "attempt {attempt}: valid pixels {} -> {}, end effector moved {:.1} cm",
                    sample.depth.valid_count(),
                    a.depth.valid_count(),
                    moved * 100.0
                );
            }
            Err(e) => println!("attempt {attempt}: rejected ({e})"),
        }
    }

    let same = augment_sample(&sample, &AugmentParams::none(), &mut rng)?;
    println!(
        "zero-parameter augmentation is the identity: {}",
        same == sample
    );
    Ok(())
}

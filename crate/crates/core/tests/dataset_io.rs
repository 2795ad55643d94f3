use nowcast::armsim::{
    generate_dataset, load_samples, read_dpt, read_poses, Dataset, SimConfig, Split, WindowSpec,
    MANIFEST_VERSION,
};
use nowcast::geometry::project_point;
use nowcast::Error;

fn tiny(sequences: usize, seconds: f64) -> SimConfig {
    let mut sim = SimConfig::tiny();
    sim.n_sequences = sequences;
    sim.duration_s = seconds;
    sim
}

#[test]
fn layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&tiny(3, 2.0), 1, dir.path()).unwrap();
    assert_eq!(m.version, MANIFEST_VERSION);
    assert_eq!(m.frames_per_sequence, vec![60; 3]);
    assert_eq!(m.joints, 5);
    for k in 0..3 {
        let seq = dir.path().join(format!("seq_{k:03}"));
        assert!(seq.join("depth_00000.dpt").exists() && seq.join("depth_00059.dpt").exists());
        assert_eq!(read_poses(&seq.join("poses.json")).unwrap().len(), 60);
    }
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.manifest(), &m);
    let seq = ds.load_sequence(2).unwrap();
    assert_eq!(
        seq.depth[5].values,
        read_dpt(&dir.path().join("seq_002/depth_00005.dpt"))
            .unwrap()
            .values
    );
    assert!(ds.load_sequence(3).is_err());
}

#[test]
fn poses_project_into_the_frames() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&tiny(2, 3.0), 4, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let (mut inside, mut total) = (0, 0);
    for k in 0..2 {
        let seq = ds.load_sequence(k).unwrap();
        for (depth, pose) in seq.depth.iter().zip(&seq.poses) {
            assert!(depth.valid_count() > 0);
            for j in 0..pose.len() {
                total += 1;
                let (u, v) = project_point(&pose.point(j), &seq.intrinsics).unwrap();
                if seq.intrinsics.contains(u, v) {
                    inside += 1;
                }
            }
        }
    }
    assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total}");
}

#[test]
fn windows_follow_the_split() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&tiny(5, 4.0), 2, dir.path()).unwrap();
    let w = WindowSpec::default();
    let all = load_samples(dir.path(), Split::All, &w).unwrap();
    let test = load_samples(dir.path(), Split::Test, &w).unwrap();
    // 120 frames, 30 frames of history, 60 of future.
    assert_eq!(all.len(), 5 * 30);
    assert!(test.iter().all(|s| s.sequence == 4));
    let s = &all[0];
    assert_eq!(s.frame, 30);
    assert_eq!(s.past.poses.len(), 10);
    for pair in s.past.poses.windows(2) {
        assert!((pair[1].timestamp - pair[0].timestamp - 0.1).abs() < 1e-9);
    }
    assert!((s.current.timestamp - s.past.poses[9].timestamp - 0.1).abs() < 1e-9);
    let offsets: Vec<f64> = s
        .future
        .iter()
        .map(|p| p.timestamp - s.current.timestamp)
        .collect();
    for (o, e) in offsets.iter().zip([0.5, 1.0, 1.5, 2.0]) {
        assert!((o - e).abs() < 1e-9);
    }
}

#[test]
fn broken_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&tiny(2, 1.0), 3, dir.path()).unwrap();
    let frame = dir.path().join("seq_001/depth_00004.dpt");
    let bytes = std::fs::read(&frame).unwrap();
    std::fs::write(&frame, &bytes[..bytes.len() - 3]).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert!(ds.load_sequence(0).is_ok());
    match ds.load_sequence(1) {
        Err(Error::Parse { path, .. }) => assert_eq!(path, frame),
        other => panic!("{other:?}"),
    }
    std::fs::write(dir.path().join("manifest.json"), "{\"version\": 1,").unwrap();
    assert!(matches!(
        Dataset::open(dir.path()),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(
        Dataset::open(dir.path().join("absent")),
        Err(Error::Io { .. })
    ));
}

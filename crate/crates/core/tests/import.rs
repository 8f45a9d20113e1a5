use std::fs;
use std::path::Path;

use xrid_core::bvh::{import_dir, ThreePointConfig};
use xrid_core::io::{read_take, resolve};

fn clip(frames: usize) -> String {
    let mut s = String::from(
        "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 100 0\n  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n\
         \x20 JOINT b_head\n  {\n    OFFSET 0 60 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n    End Site\n    {\n      OFFSET 0 10 0\n    }\n  }\n\
         \x20 JOINT b_l_wrist_twist\n  {\n    OFFSET 30 20 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n  }\n\
         \x20 JOINT b_r_wrist_twist\n  {\n    OFFSET -30 20 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n  }\n}\nMOTION\n",
    );
    s += &format!("Frames: {frames}\nFrame Time: 0.0111111\n");
    for i in 0..frames {
        let x = i as f64;
        s += &format!("{x} 0 0 0 0 {} 0 {} 0 0 0 0 0 0 0\n", x * 0.5, x);
    }
    s
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

#[test]
fn imports_subjects_and_sessions() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write(&src.path().join("p1/a.bvh"), &clip(4));
    write(&src.path().join("p1/notes.txt"), "ignored");
    write(&src.path().join("p2/day1/b.bvh"), &clip(6));
    write(&src.path().join("p2/day2/c.BVH"), &clip(3));

    let manifest = import_dir(src.path(), out.path(), &ThreePointConfig::default(), |s| s.take_id != "c").unwrap();
    assert_eq!(manifest.subjects.len(), 2);
    let b = manifest.take("p2", "b").unwrap();
    assert_eq!(b.session.as_deref(), Some("day1"));
    assert_eq!(b.frame_count, 6);
    assert!(b.two_subject_scene);
    assert!(!manifest.take("p2", "c").unwrap().two_subject_scene);
    assert!(manifest.take("p1", "a").unwrap().session.is_none());

    let take = read_take(&resolve(out.path(), &manifest.take("p1", "a").unwrap().path)).unwrap();
    assert_eq!(take.len(), 4);
    // Root moves 1 cm per frame along x; head sits 1.6 m up.
    let h = take.frames[2].head.position;
    assert!((h.x - 0.02).abs() < 1e-9 && (h.y - 1.6).abs() < 1e-9, "{h:?}");
    assert!(out.path().join("manifest.json").exists());
}

#[test]
fn duplicate_take_names_are_rejected() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write(&src.path().join("p1/s1/a.bvh"), &clip(2));
    write(&src.path().join("p1/s2/a.bvh"), &clip(2));
    let err = import_dir(src.path(), out.path(), &ThreePointConfig::default(), |_| true).unwrap_err();
    assert!(err.to_string().contains("two takes named a"), "{err}");
}

#[test]
fn missing_joint_names_the_alternatives() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write(&src.path().join("p1/a.bvh"), &clip(2));
    let cfg = ThreePointConfig {
        head: "Head".into(),
        ..ThreePointConfig::default()
    };
    let err = import_dir(src.path(), out.path(), &cfg, |_| true).unwrap_err();
    assert!(err.to_string().contains("b_head"), "{err}");
}

#[test]
fn empty_directory_is_an_error() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    assert!(import_dir(src.path(), out.path(), &ThreePointConfig::default(), |_| true).is_err());
}

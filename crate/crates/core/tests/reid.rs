use std::fs;

use chrono::NaiveDate;

use occluface::data::load_dataset;
use occluface::data::synthetic::{fixture, write_tree};
use occluface::model::{build_network, NetworkConfig};
use occluface::reid::{read_log, run_batch, FixedClock, Gallery};

#[test]
fn enroll_from_disk_then_process_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let model = build_network(&NetworkConfig::toy(), 0).unwrap();
    let size = model.config.input_size;
    let root = dir.path().join("data");
    write_tree(&root, &fixture(&[0, 1, 2], 1, 0, size)).unwrap();
    let ds = load_dataset(&root, size).unwrap();
    assert_eq!(ds.images.len(), 15);

    let at = NaiveDate::from_ymd_opt(2022, 3, 1).unwrap().and_hms_opt(8, 0, 0).unwrap();
    let mut g = Gallery::new(model.config.hidden_size);
    for person in ds.persons() {
        let imgs: Vec<_> = ds.images.iter().filter(|i| i.person == person).cloned().collect();
        assert_eq!(g.enroll(person, &imgs, &model, at).unwrap(), 5);
    }
    let gpath = dir.path().join("g.fgal");
    g.save(&gpath).unwrap();
    let g = Gallery::load(&gpath).unwrap();
    assert_eq!(g.len(), 3);

    let inbox = dir.path().join("inbox");
    fs::create_dir(&inbox).unwrap();
    for (i, img) in fixture(&[1], 1, 50, size).iter().enumerate() {
        let src = write_tree(&dir.path().join(format!("tmp{i}")), std::slice::from_ref(img)).unwrap();
        fs::copy(&src[0], inbox.join(format!("{i}.ppm"))).unwrap();
    }
    fs::write(inbox.join("junk.ppm"), b"P6\n1 1\n").unwrap();
    fs::write(inbox.join("notes.txt"), b"ignored").unwrap();

    let log = dir.path().join("log.csv");
    let clock = FixedClock(at);
    let s = run_batch(&model, &g, &inbox, &log, 0.0, &clock).unwrap();
    assert_eq!(s.processed, 6);
    assert_eq!(s.errored, 1);
    assert_eq!(s.passed + s.failed_gate, 5);
    let logged = if log.exists() { read_log(&log).unwrap().len() } else { 0 };
    assert_eq!(logged, s.passed);
    for o in &s.outcomes {
        assert!((0.0..=100.0).contains(&o.result.score));
        assert_eq!(o.logged.is_some(), o.result.passed);
    }

    let strict = run_batch(&model, &g, &inbox, &dir.path().join("none.csv"), 100.0, &clock).unwrap();
    assert_eq!(strict.passed, 0);
    assert!(!dir.path().join("none.csv").exists());
}

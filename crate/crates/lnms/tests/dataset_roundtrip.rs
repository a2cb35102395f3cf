use lnms::dataset::{read_dataset, write_dataset};
use lnms_core::synth::{generate_split, Split, SynthConfig};
use lnms_core::Frame;

fn assert_close(a: f64, b: f64) {
    assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
}

fn assert_frames_match(a: &[Frame], b: &[Frame]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!((x.frame_id.as_str(), x.width, x.height), (y.frame_id.as_str(), y.width, y.height));
        assert_eq!(x.annotations.len(), y.annotations.len());
        assert_eq!(x.detections.len(), y.detections.len());
        for (p, q) in x.annotations.iter().zip(&y.annotations) {
            assert_eq!(p.object_id, q.object_id);
            for (u, v) in [(p.bbox.x, q.bbox.x), (p.bbox.y, q.bbox.y), (p.bbox.w, q.bbox.w), (p.bbox.h, q.bbox.h)] {
                assert_close(u, v);
            }
        }
        for (p, q) in x.detections.iter().zip(&y.detections) {
            assert_close(p.score, q.score);
            for (u, v) in [(p.bbox.x, q.bbox.x), (p.bbox.y, q.bbox.y), (p.bbox.w, q.bbox.w), (p.bbox.h, q.bbox.h)] {
                assert_close(u, v);
            }
        }
    }
}

#[test]
fn generated_split_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test.jsonl");
    let frames = generate_split(&SynthConfig::default(), Split::Test, 20).unwrap();
    write_dataset(&path, &frames).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_frames_match(&frames, &back);
    // shortest round-trip float formatting makes this exact
    assert_eq!(frames, back);
}

#[test]
fn empty_dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    write_dataset(&path, &[]).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
    assert!(read_dataset(&path).unwrap().is_empty());
}

#[test]
fn io_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let err = read_dataset(&missing).unwrap_err().to_string();
    assert!(err.contains("nope.jsonl"), "{err}");
    let err = write_dataset(&dir.path().join("no/such/dir.jsonl"), &[]).unwrap_err().to_string();
    assert!(err.contains("dir.jsonl"), "{err}");
}

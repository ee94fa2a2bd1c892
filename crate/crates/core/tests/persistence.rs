use std::sync::Arc;

use promptloop::fixtures;
use promptloop::pipeline::{load_record, persist_record, Backends, Pipeline, PipelineConfig, RECORD_FILE};

fn pipeline(out: &std::path::Path) -> Pipeline {
    let backends = Backends {
        llm: Arc::new(fixtures::llm()),
        vqa: Arc::new(fixtures::vqa()),
        t2i: Arc::new(fixtures::t2i()),
        embed: None,
    };
    Pipeline::new(backends, PipelineConfig::default(), out).unwrap()
}

#[test]
fn a_run_reloads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let record = pipeline(dir.path()).run_single(fixtures::PROMPT);
    assert!(record.is_completed(), "{:?}", record.status);
    let loaded = load_record(&record.run_dir.join(RECORD_FILE)).unwrap();
    assert_eq!(loaded, record);
    assert_eq!(loaded.final_prompt(), fixtures::DECORATED);
    for entry in &loaded.image_refs {
        assert!(entry.image.path().unwrap().is_file());
    }
}

#[test]
fn records_move_with_their_images() {
    let dir = tempfile::tempdir().unwrap();
    let record = pipeline(&dir.path().join("a")).run_single(fixtures::PROMPT);
    let moved = persist_record(&record, &dir.path().join("b")).unwrap();
    std::fs::remove_dir_all(dir.path().join("a")).unwrap();
    let loaded = load_record(&moved).unwrap();
    assert_eq!(loaded.normalized(), record.normalized());
    for entry in &loaded.image_refs {
        assert!(entry.image.path().unwrap().starts_with(dir.path().join("b")));
        assert!(entry.image.path().unwrap().is_file());
    }
}

#[test]
fn garbage_record_is_a_schema_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(RECORD_FILE);
    std::fs::write(&path, "{\"run_id\": 3}").unwrap();
    let err = load_record(&path).unwrap_err().to_string();
    assert!(err.contains("run_id"), "{err}");
}

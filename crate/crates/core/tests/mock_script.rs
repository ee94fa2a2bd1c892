use promptloop::backends::{
    answer_binary, content_digest, BackendError, BinaryAnswer, ImageGenRequest, ImageRef, ModelBackend,
    ScriptedBackend, TextGenRequest, VqaRequest,
};

const SCRIPT: &str = r#"{
  "name": "vqa",
  "rules": [
    { "op": "vqa", "input": "Is there a fence?", "image": "IMAGE",
      "replies": [ { "text": "No." }, { "text": "Yes, now there is." } ] },
    { "op": "vqa", "input": "*", "reply": { "text": "yes" } },
    { "op": "text", "label": "tuples", "reply": { "error": { "kind": "auth", "message": "bad key" } } }
  ]
}"#;

fn image_at(dir: &std::path::Path, bytes: &[u8]) -> ImageRef {
    let path = dir.join(format!("{}.png", &content_digest(bytes)[..8]));
    std::fs::write(&path, bytes).unwrap();
    ImageRef::from_file(&path).unwrap()
}

#[test]
fn image_matcher_separates_pictures() {
    let dir = tempfile::tempdir().unwrap();
    let first = image_at(dir.path(), &promptloop::fixtures::first_image());
    let other = image_at(dir.path(), b"not really a png");
    let script = SCRIPT.replace("IMAGE", &content_digest(&promptloop::fixtures::first_image()));
    let vqa = ScriptedBackend::from_script_str(&script).unwrap();

    let ask = |img: &ImageRef| answer_binary(&vqa, &VqaRequest::new(img.clone(), "Is there a fence?")).unwrap();
    assert_eq!(ask(&other), BinaryAnswer::Yes);
    assert_eq!(ask(&first), BinaryAnswer::No);
    // same request again walks the reply list
    assert_eq!(ask(&first), BinaryAnswer::Yes);
    assert_eq!(ask(&first), BinaryAnswer::Yes);
    assert_eq!(vqa.journal().len(), 4);

    vqa.reset();
    assert_eq!(ask(&first), BinaryAnswer::No);
}

#[test]
fn scripted_failures_surface_as_backend_errors() {
    let vqa = ScriptedBackend::from_script_str(&SCRIPT.replace("IMAGE", "0")).unwrap();
    let err = vqa.complete(&TextGenRequest::new("tuples", "preamble", "input")).unwrap_err();
    assert!(matches!(err, BackendError::AuthFailure(_)), "{err:?}");
    assert!(!err.is_retryable());
    // no image rule and synthesis off
    let dir = tempfile::tempdir().unwrap();
    let err = vqa
        .generate_image(&ImageGenRequest::new("a fence", 0, 64, 64), &dir.path().join("x"))
        .unwrap_err();
    assert!(matches!(err, BackendError::MockMiss { .. }), "{err:?}");
}

#[test]
fn synthesized_images_depend_only_on_the_request() {
    let dir = tempfile::tempdir().unwrap();
    let t2i = ScriptedBackend::new("t2i").synthesize_images(true);
    let gen = |prompt: &str, seed: u64, stem: &str| {
        let img = t2i
            .generate_image(&ImageGenRequest::new(prompt, seed, 64, 64), &dir.path().join(stem))
            .unwrap();
        std::fs::read(img.path().unwrap()).unwrap()
    };
    assert_eq!(gen("a fence", 1, "a"), gen("a fence", 1, "b"));
    assert_ne!(gen("a fence", 1, "c"), gen("a fence", 2, "d"));
    assert_ne!(gen("a fence", 1, "e"), gen("a gate", 1, "f"));
}

#[test]
fn malformed_scripts_are_rejected() {
    for bad in [
        "",
        r#"{"rules": [{"op": "paint"}]}"#,
        r#"{"rules": [{"op": "text"}]}"#,
        r#"{"rules": [{"op": "text", "reply": {"text": "a"}, "colour": 1}]}"#,
    ] {
        assert!(ScriptedBackend::from_script_str(bad).is_err(), "{bad}");
    }
}

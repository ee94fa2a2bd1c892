//! A canned end-to-end scenario: a motorcycle next to a white fence, where
//! the image generated from the raw prompt shows no fence.
//!
//! Used by the test suites and handy for trying the pipeline offline.

use std::io::Cursor;

use crate::backends::{content_digest, Reply, Rule, ScriptedBackend};
use crate::scene_graph::{parse_dependencies, parse_questions, parse_tuples, SceneGraph};
use crate::templates::Stage;

pub const PROMPT: &str = "A blue motorcycle parked next to a white fence.";

pub const TUPLES: &str = "\
1 | entity - whole (motorcycle)
2 | attribute - color (motorcycle, blue)
3 | entity - whole (fence)
4 | attribute - color (fence, white)
5 | relation - spatial (motorcycle, fence, next to)";

pub const QUESTIONS: &str = "\
1 | Is there a motorcycle?
2 | Is the motorcycle blue?
3 | Is there a fence?
4 | Is the fence white?
5 | Is the motorcycle next to the fence?";

pub const DEPENDENCIES: &str = "\
1 | 0
2 | 1
3 | 0
4 | 3
5 | 1, 3";

pub const EXPANSION: &str = "\
6 | attribute - material (fence, wooden)
7 | attribute - state (fence, clearly visible)";

pub const REGENERATED: &str = "A blue motorcycle parked beside a clearly visible white wooden fence.";

pub const DECORATION: &str = "quality: best quality, light: soft lighting";

pub const DECORATED: &str =
    "A blue motorcycle parked beside a clearly visible white wooden fence., best quality, soft lighting";

pub fn graph() -> SceneGraph {
    SceneGraph::build(
        PROMPT,
        parse_tuples(TUPLES).expect("fixture tuples"),
        parse_questions(QUESTIONS).expect("fixture questions"),
        parse_dependencies(DEPENDENCIES).expect("fixture dependencies"),
    )
    .expect("fixture graph")
}

/// Text model answering every stage with the fixture blocks.
pub fn llm() -> ScriptedBackend {
    let stage = |s: Stage, text: &str| Rule::text().label(s.as_str()).reply(Reply::text(text));
    ScriptedBackend::new("llm").with_rules([
        stage(Stage::Tuples, TUPLES),
        stage(Stage::Questions, QUESTIONS),
        stage(Stage::Dependencies, DEPENDENCIES),
        stage(Stage::Expansion, EXPANSION),
        stage(Stage::Regeneration, REGENERATED),
        stage(Stage::Decoration, DECORATION),
    ])
}

/// The picture the text-to-image mock returns for [`PROMPT`].
pub fn first_image() -> Vec<u8> {
    let img = image::RgbImage::from_fn(4, 4, |x, y| image::Rgb([40 * x as u8, 40 * y as u8, 200]));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory png encoding");
    out.into_inner()
}

/// VQA model that sees no fence in [`first_image`] and everything in any
/// other image.
pub fn vqa() -> ScriptedBackend {
    ScriptedBackend::new("vqa").with_rules([
        Rule::vqa()
            .image_digest(content_digest(&first_image()))
            .input_exact("Is there a fence?")
            .reply(Reply::text("No, there is no fence.")),
        Rule::vqa().reply(Reply::text("Yes")),
    ])
}

/// VQA model that answers every question with yes.
pub fn vqa_all_yes() -> ScriptedBackend {
    ScriptedBackend::new("vqa").with_rule(Rule::vqa().reply(Reply::text("yes")))
}

/// Text-to-image model: [`first_image`] for the raw prompt, a synthesized
/// picture for anything else.
pub fn t2i() -> ScriptedBackend {
    ScriptedBackend::new("t2i")
        .synthesize_images(true)
        .with_rule(Rule::image().input_exact(PROMPT).reply(Reply::image(&first_image())))
}

//! Rendered prompts compared against checked-in copies. Set
//! `UPDATE_GOLDEN=1` to rewrite the copies after an intended change.

use std::path::PathBuf;

use viddiff::prompts::{self, json_inline, PROMPT_SET_VERSION};

fn check(name: &str, rendered: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, rendered).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(rendered, want, "{name} drifted; bump PROMPT_SET_VERSION if intended");
}

#[test]
fn prompt_set_version_is_pinned() {
    assert_eq!(PROMPT_SET_VERSION, 1);
}

#[test]
fn proposer_prompts() {
    check("proposer_differences", &prompts::proposer_differences("a weighted squat", 5));
    check("proposer_stages", &prompts::proposer_stages("a weighted squat", 3));
    let stages = json_inline(&serde_json::json!({"stages": [{"name": "descent", "description": "hips lower"}]}));
    let diffs = json_inline(&serde_json::json!({"depth": "the squat is deeper"}));
    check("proposer_linking", &prompts::proposer_linking("a weighted squat", &stages, &diffs));
}

#[test]
fn differencer_prompts() {
    check("frame_differencer_many", &prompts::frame_differencer("a weighted squat", 4, Some(0.25), "the squat is deeper"));
    check("frame_differencer_one", &prompts::frame_differencer("a weighted squat", 1, None, "the squat is deeper"));
}

#[test]
fn evaluator_prompts() {
    let d0 = json_inline(&serde_json::json!({"0": "the squat is deeper", "1": "the stance is wider"}));
    let d1 = json_inline(&serde_json::json!({"0": "the squat is shallower"}));
    check("open_matching", &prompts::open_matching("a weighted squat", &d0, &d1, r#"["0", "1"]"#, r#"["0"]"#, "1"));
    let pairs = json_inline(&[["the squat is deeper", "the squat is shallower"]]);
    check("opposite_statements", &prompts::opposite_statements(&pairs));
}

#[test]
fn baseline_prompts() {
    let rep = prompts::video_rep_frames(12, 10, 4.0);
    check("video_rep_frames", &rep);
    let annotated = json_inline(&serde_json::json!({"0": "the squat is deeper"}));
    check("baseline_closed", &prompts::baseline_closed("a weighted squat", &rep, &annotated));
    check("baseline_open", &prompts::baseline_open("a weighted squat", prompts::VIDEO_REP_NATIVE.text, 6));
}

#[test]
fn every_template_hash_is_stable() {
    let listing: String = prompts::ALL_TEMPLATES
        .iter()
        .map(|t| format!("{} {}\n", t.name, t.sha256()))
        .collect();
    check("template_hashes", &listing);
}

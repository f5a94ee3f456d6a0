//! Per-category frame rate policy and the stride it induces.
//!
//! ```bash
//! cargo run --example subsample_fps
//! ```

use viddiff::dataset::{default_fps, plan_subsample, Diagnostics, FpsOverrides, apply_plan};
use viddiff::model::{ActionSpec, Category, Split, VideoClip};

fn clip(native_fps: f64, frames: usize) -> VideoClip {
    VideoClip {
        clip_id: "demo".into(),
        frame_paths: (0..frames).map(|i| format!("demo/frame_{i:06}.png").into()).collect(),
        native_fps,
        sampled_fps: native_fps,
        duration_s: frames as f64 / native_fps,
    }
}

fn main() -> viddiff::error::Result<()> {
    for c in Category::ALL {
        println!("{:>8}: {} fps", c.as_str(), default_fps(c));
    }

    let plan = plan_subsample(&clip(30.0, 90), 4.0)?;
    println!("30 fps -> 4 fps: stride {}, {} frames, achieved {:.2} fps, exact {}", plan.stride, plan.indices.len(), plan.achieved_fps, plan.exact);
    println!("native frame 47 lands at sampled position {}", plan.sampled_position(47));

    let diags = Diagnostics::new();
    let sampled = apply_plan(&clip(30.0, 90), &plan, &diags);
    println!("sampled clip: {} frames at {} fps", sampled.len(), sampled.sampled_fps);
    for d in diags.snapshot() {
        println!("warning: {} {}", d.scope, d.message);
    }

    let overrides = FpsOverrides::parse(["fitness=6"])?;
    let action = ActionSpec {
        action_key: "fitness_0".into(),
        description: "a squat".into(),
        category: Category::Fitness,
        split: Split::Easy,
        fps_policy: default_fps(Category::Fitness),
    };
    println!("fitness with override: {} fps", overrides.target_fps(&action));
    Ok(())
}

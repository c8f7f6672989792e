use saliency_core::agent::{Agent, AgentConfig, PerceptionParams, Variant};
use saliency_core::env::{CategorySpec, EnvConfig, Gallery, Role, Shape, SpriteSpec};
use saliency_core::raster::BBox;
use saliency_rl::demo::{dump_frames, pipeline_demo, DumpPolicy};

fn one_sprite(velocity: [i32; 2]) -> EnvConfig {
    EnvConfig {
        categories: vec![CategorySpec {
            name: "t".into(),
            role: Role::Target,
            sprite: SpriteSpec { shape: Shape::Disc, width: 16, height: 16, color: [230, 40, 40], accent: [250, 210, 60] },
            count: 1,
            velocity,
            random_direction: false,
        }],
        ..EnvConfig::default()
    }
}

/// First seed whose sprite starts fully inside the viewport, clear of the edges.
fn inside_seed(env: &EnvConfig) -> u64 {
    (0..).find(|&s| Gallery::reset(env, s).unwrap().1.truth.mask.bbox_of(1).is_some_and(|b| b.area() == 256 && b.x0 > 16 && b.x1() < 96)).unwrap()
}

#[test]
fn static_scene_has_no_segments() {
    let env = one_sprite([0, 0]);
    let tmp = tempfile::tempdir().unwrap();
    dump_frames(&env, inside_seed(&env), 1, DumpPolicy::Noop, tmp.path()).unwrap();
    let res = pipeline_demo(tmp.path(), &tmp.path().join("out"), &PerceptionParams::default(), None, 0).unwrap();
    assert_eq!(res.len(), 1);
    assert!(!res[0].skipped);
    assert!(res[0].boxes.is_empty(), "{:?}", res[0].boxes);
}

#[test]
fn moving_sprite_is_segmented_every_frame() {
    let env = one_sprite([3, 0]);
    let seed = inside_seed(&env);
    let tmp = tempfile::tempdir().unwrap();
    dump_frames(&env, seed, 4, DumpPolicy::Noop, tmp.path()).unwrap();
    let res = pipeline_demo(tmp.path(), &tmp.path().join("out"), &PerceptionParams::default(), None, 0).unwrap();
    assert_eq!(res.len(), 4);
    let (mut g, first) = Gallery::reset(&env, seed).unwrap();
    let mut truth = vec![first.truth.mask.bbox_of(1).unwrap()];
    for _ in 0..4 {
        truth.push(g.step(saliency_core::env::Action::Noop).unwrap().truth.mask.bbox_of(1).unwrap());
    }
    for r in &res {
        assert!(!r.skipped && !r.boxes.is_empty(), "frame {}", r.frame);
        // the textureless disc interior can split into several segments, all on the sprite
        let near = BBox::new(truth[r.frame - 1].x0 - 8, truth[r.frame - 1].y0 - 8, 32, 32);
        for (b, _) in &r.boxes {
            assert!(b.intersects(&near), "frame {}: {:?} far from {:?}", r.frame, b, truth[r.frame - 1]);
        }
        let (cx, cy) = truth[r.frame - 1].center();
        let (cx, cy) = (cx as i32, cy as i32);
        let covered = r.boxes.iter().any(|(b, _)| b.contains(cx, cy) || b.intersection_area(&truth[r.frame - 1]) > 0);
        assert!(covered, "frame {}: {:?}", r.frame, r.boxes);
    }
}

#[test]
fn single_frame_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    dump_frames(&EnvConfig::default(), 0, 0, DumpPolicy::Noop, tmp.path()).unwrap();
    let err = pipeline_demo(tmp.path(), &tmp.path().join("out"), &PerceptionParams::default(), None, 0).unwrap_err();
    assert!(err.to_string().contains("need at least two frames"), "{err}");
}

#[test]
fn full_exploration_gives_the_same_stream_for_every_variant() {
    let stream = |variant| {
        let mut c = AgentConfig::new(variant, EnvConfig { episode_length: 16, ..EnvConfig::default() });
        c.agent.warmup = 1000;
        let mut agent = Agent::new(c, 7).unwrap();
        (0..48).map(|_| agent.train_env_step().unwrap().reward.to_bits()).collect::<Vec<_>>()
    };
    let base = stream(Variant::Baseline);
    assert_eq!(stream(Variant::Oracle), base);
    assert_eq!(stream(Variant::Proposed), base);
}

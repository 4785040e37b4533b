use spatial_core::grammar::{parse_action_call, ActionCall};
use spatial_core::image::ImageRef;
use spatial_core::skills::{execute_skill, SkillError, SkillName, SkillStatus, Toolbox};
use spatial_core::tools::{BBox, ExecContext};
use spatial_core::world::{
    generate_scenes, normalize_label, Camera, NoiseConfig, SceneObject, SceneSpec, SceneStore, SCENE_SCHEMA,
};

fn object(label: &str, b: [f64; 4], depth: f64, z: f64, focal: f64, c: [f64; 2]) -> SceneObject {
    let bbox = BBox::new(b[0], b[1], b[2], b[3]);
    let [cx, cy] = bbox.center();
    SceneObject {
        label: label.into(),
        bbox,
        mean_depth: depth,
        size_m: [bbox.width() * z / focal, bbox.height() * z / focal],
        point3d: [(cx - c[0]) * z / focal, (cy - c[1]) * z / focal, z],
        instance_id: 0,
    }
}

fn scene(id: &str, objects: &[(&str, [f64; 4], f64, f64)]) -> SceneSpec {
    let (w, h) = (640u32, 480u32);
    let camera = Camera { focal_px: 512.0, cx: 320.0, cy: 240.0 };
    let objects = objects
        .iter()
        .enumerate()
        .map(|(i, (l, b, d, z))| {
            let mut o = object(l, *b, *d, *z, camera.focal_px, [camera.cx, camera.cy]);
            o.instance_id = i as u32;
            o
        })
        .collect();
    SceneSpec {
        schema: SCENE_SCHEMA.into(),
        id: id.into(),
        image_size: [w, h],
        camera,
        background_depth: 0.95,
        seed: 0,
        objects,
    }
}

fn run(tb: &Toolbox, scene_id: &str, call: &str) -> (Result<spatial_core::skills::SkillResult, SkillError>, ExecContext) {
    let mut ctx = tb.start_episode("ep", scene_id, 1).unwrap();
    let call: ActionCall = parse_action_call(call).unwrap().remove(0);
    (execute_skill(&tb.registry, &call, &mut ctx), ctx)
}

fn numbers_after(text: &str, label: &str) -> Vec<f64> {
    let line = text.lines().find(|l| l.starts_with(&format!("{label}:"))).unwrap_or_else(|| panic!("{label} in {text}"));
    line[label.len() + 1..]
        .split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter(|s| !s.is_empty() && *s != "-" && *s != ".")
        .map(|s| s.parse().unwrap())
        .collect()
}

fn fixtures() -> Toolbox {
    Toolbox::in_process(SceneStore::new([
        scene("people", &[("person", [40.0, 60.0, 140.0, 300.0], 0.30, 2.0), ("frisbee", [400.0, 100.0, 460.0, 140.0], 0.70, 5.5)]),
        scene("dining", &[("table", [20.0, 300.0, 200.0, 420.0], 0.4, 3.0), ("table", [380.0, 310.0, 600.0, 440.0], 0.6, 4.0), ("lamp", [250.0, 40.0, 290.0, 120.0], 0.5, 3.5)]),
        scene("lounge", &[("sofa", [100.0, 200.0, 400.0, 380.0], 0.45, 3.0)]),
    ]))
}

#[test]
fn estimate_depth_reports_stored_means() {
    let tb = fixtures();
    let (r, ctx) = run(&tb, "people", r#"EstimateDepth(img_path="image-0", text_labels=["a person", "a frisbee"])"#);
    let r = r.unwrap();
    assert_eq!(r.status, SkillStatus::Complete);
    assert_eq!(r.hints.len(), 1);
    assert_eq!(r.hints[0].visual, Some(ImageRef(1)));
    assert!(ctx.store.get(ImageRef(1)).is_some());
    assert!((numbers_after(&r.text(), "a person")[0] - 0.30).abs() <= 1e-6);
    assert!((numbers_after(&r.text(), "a frisbee")[0] - 0.70).abs() <= 1e-6);
}

#[test]
fn count_objects_reports_both_tables() {
    let tb = fixtures();
    let (r, _) = run(&tb, "dining", r#"CountObjects(img_path="image-0", text_labels=["table"])"#);
    let r = r.unwrap();
    assert_eq!(r.status, SkillStatus::Complete);
    let nums = numbers_after(&r.text(), "table");
    assert_eq!(nums, vec![2.0, 110.0, 360.0, 490.0, 375.0], "{}", r.text());
}

#[test]
fn missing_refrigerator_gives_partial() {
    let tb = fixtures();
    let (r, _) = run(&tb, "lounge", r#"SegmentObjects(img_path="image-0", text_labels=["refrigerator", "sofa"])"#);
    let r = r.unwrap();
    assert_eq!(r.status, SkillStatus::Partial);
    assert_eq!(r.per_query.get("refrigerator"), Some(&false));
    assert_eq!(r.per_query.get("sofa"), Some(&true));
    assert!(r.hints[0].visual.is_some());
}

#[test]
fn nothing_found_is_failed_without_visual() {
    let tb = fixtures();
    let (r, ctx) = run(&tb, "lounge", r#"Get3DPoint(img_path="image-0", text_labels=["piano"])"#);
    let r = r.unwrap();
    assert_eq!(r.status, SkillStatus::Failed);
    assert!(r.visuals().is_empty());
    assert_eq!(ctx.store.len(), 1);
}

#[test]
fn zoom_crop_renders_requested_region() {
    let tb = fixtures();
    let (r, ctx) = run(&tb, "people", r#"ZoomCrop(img_path="image-0", box=[100, 200, 300, 400])"#);
    let r = r.unwrap();
    assert_eq!(r.status, SkillStatus::Complete);
    let crop = ctx.store.get(r.visuals()[0]).unwrap();
    assert_eq!(crop.raster.dimensions(), (200, 200));
    let base = ctx.store.get(ImageRef::INPUT).unwrap();
    assert_eq!(crop.raster.get_pixel(0, 0), base.raster.get_pixel(100, 200));
    assert!(r.text().contains("[100, 200, 300, 400]"), "{}", r.text());
}

#[test]
fn zoom_crop_rejects_box_and_center_together() {
    let tb = fixtures();
    let (r, _) = run(&tb, "people", r#"ZoomCrop(img_path="image-0", box=[1, 2, 30, 40], center=[50, 50])"#);
    assert!(matches!(r, Err(SkillError::OverconstrainedRoi)));
    let (r, _) = run(&tb, "people", r#"ZoomCrop(img_path="image-0")"#);
    assert!(matches!(r, Err(SkillError::OverconstrainedRoi)));
}

#[test]
fn unknown_skill_and_bad_args_are_errors() {
    let tb = fixtures();
    let (r, _) = run(&tb, "people", r#"Teleport(img_path="image-0")"#);
    assert!(matches!(r, Err(SkillError::UnknownSkill(_))));
    let (r, _) = run(&tb, "people", r#"CountObjects(img_path="image-0", text_labels="table")"#);
    assert!(matches!(r, Err(SkillError::ArgValidation(_))));
    let (r, _) = run(&tb, "people", r#"CountObjects(img_path="image-7", text_labels=["table"])"#);
    assert!(r.is_err() || r.unwrap().status == SkillStatus::Failed);
}

#[test]
fn forced_failure_uses_the_fixed_wording() {
    let tb = fixtures().with_failures(NoiseConfig::with_failures(1.0));
    let (r, ctx) = run(&tb, "people", r#"Get3DPoint(img_path="image-0", text_labels=["person"])"#);
    let r = r.unwrap();
    assert_eq!(r.status, SkillStatus::Failed);
    let kind = r.error.as_ref().unwrap().kind;
    assert_eq!(r.text(), format!("Tool Get3DPoint failed: {kind}."));
    assert!(r.visuals().is_empty());
    assert_eq!(ctx.store.len(), 1);
}

#[test]
fn every_skill_descriptor_resolves_in_the_registry() {
    let tb = fixtures();
    for s in SkillName::ALL {
        let d = s.descriptor();
        assert!(!d.atomic_sequence.is_empty());
        d.check(&tb.registry).unwrap();
    }
}

#[test]
fn oracle_agreement_over_generated_scenes() {
    let scenes = generate_scenes(25, 300, (2, 8), 320, 240).unwrap();
    let tb = Toolbox::in_process(SceneStore::new(scenes.clone()));
    for scene in &scenes {
        let mut labels: Vec<String> = scene.objects.iter().map(|o| normalize_label(&o.label)).collect();
        labels.dedup();
        labels.sort();
        labels.dedup();
        let list = labels.iter().map(|l| format!("\"{l}\"")).collect::<Vec<_>>().join(", ");
        let (count, _) = run(&tb, &scene.id, &format!("CountObjects(img_path=\"image-0\", text_labels=[{list}])"));
        let count = count.unwrap();
        for l in &labels {
            assert_eq!(numbers_after(&count.text(), l)[0] as usize, scene.multiplicity(l));
        }
        for o in scene.objects.iter().filter(|o| scene.multiplicity(&o.label) == 1) {
            let q = format!("text_labels=[\"{}\"]", o.label);
            let (depth, _) = run(&tb, &scene.id, &format!("EstimateDepth(img_path=\"image-0\", {q})"));
            let field = scene.depth_field();
            let visible_mean = {
                let b = o.bbox;
                let (mut s, mut n) = (0.0, 0.0);
                for y in b.y1 as u32..b.y2 as u32 {
                    for x in b.x1 as u32..b.x2 as u32 {
                        s += f64::from(field.values[(y * field.width + x) as usize]);
                        n += 1.0;
                    }
                }
                s / n
            };
            assert!((numbers_after(&depth.unwrap().text(), &o.label)[0] - visible_mean).abs() < 5e-5);
            let (p, _) = run(&tb, &scene.id, &format!("Get3DPoint(img_path=\"image-0\", {q})"));
            let xyz = numbers_after(&p.unwrap().text(), &o.label);
            assert_eq!(xyz, o.point3d.to_vec());
            let (size, _) = run(&tb, &scene.id, &format!("EstimateSize(img_path=\"image-0\", {q})"));
            let nums = numbers_after(&size.unwrap().text(), &o.label);
            assert_eq!(nums[..2], o.bbox.center());
            assert_eq!(nums[2..4], [o.bbox.width(), o.bbox.height()]);
        }
    }
}

#[test]
fn image_ids_grow_one_per_visual() {
    let tb = fixtures();
    let mut ctx = tb.start_episode("ep", "dining", 3).unwrap();
    let calls = [
        r#"SegmentObjects(img_path="image-0", text_labels=["lamp"])"#,
        r#"EstimateDepth(img_path="image-0")"#,
        r#"CountObjects(img_path="image-1", text_labels=["table"])"#,
        r#"ZoomCrop(img_path="image-0", center=[300, 200], zoom_factor=2.0)"#,
        r#"Get3DPoint(img_path="image-0", text_labels=["lamp", "table"])"#,
    ];
    for (k, c) in calls.iter().enumerate() {
        let call = parse_action_call(c).unwrap().remove(0);
        let r = execute_skill(&tb.registry, &call, &mut ctx).unwrap();
        assert_ne!(r.status, SkillStatus::Failed, "{c}: {}", r.text());
        assert_eq!(r.visuals(), vec![ImageRef(k as u32 + 1)]);
    }
    assert_eq!(ctx.store.len(), calls.len() + 1);
}

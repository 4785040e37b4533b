use std::sync::Arc;
use std::time::{Duration, Instant};

use spatial_core::grammar::{parse_action_call, ArgValue};
use spatial_core::image::ImageRef;
use spatial_core::protocol::{InjectMode, ResponseStatus, ToolRequest, TransportError, WireImage, PROTOCOL_VERSION};
use spatial_core::skills::{execute_skill, SkillStatus, Toolbox};
use spatial_core::tools::{AtomicOutput, ToolError, ToolErrorKind};
use spatial_core::world::{generate_scenes, oracle_detect, NoiseConfig, SceneStore, SceneView};
use spatial_transport::{MockServer, RemoteBackend, RetryPolicy};

fn scenes(n: usize) -> SceneStore {
    SceneStore::new(generate_scenes(n, 900, (2, 7), 320, 240).unwrap())
}

fn request(id: &str, atomic: &str, scene: &str, args: &[(&str, ArgValue)]) -> ToolRequest {
    ToolRequest {
        protocol: PROTOCOL_VERSION.into(),
        request_id: id.into(),
        atomic_name: atomic.into(),
        image: WireImage { reference: Some(SceneView::of(scene)), b64: None },
        args: args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        inputs: vec![],
        seed: 0,
        deadline_ms: 5_000,
    }
}

#[test]
fn detect_round_trip_matches_the_oracle() {
    let store = scenes(3);
    let server = MockServer::start(store.clone(), "127.0.0.1:0").unwrap();
    let client = RemoteBackend::new(&server.url()).unwrap();
    for id in store.ids() {
        let scene = store.get(id).unwrap();
        let labels: Vec<String> = scene.objects.iter().map(|o| o.label.clone()).collect();
        let req = request(
            &format!("r-{id}"),
            "detect_objects",
            id,
            &[("image", ArgValue::Text("image-0".into())), ("text_labels", ArgValue::TextList(labels.clone()))],
        );
        let resp = client.call(&req, None).unwrap();
        assert_eq!(resp.status, ResponseStatus::Ok);
        let expected = oracle_detect(scene, &labels, &NoiseConfig::off(), 0).unwrap();
        assert_eq!(resp.payload, Some(AtomicOutput::Detections { detections: expected }));
    }
}

#[test]
fn injected_empty_and_unknown_atomic() {
    let store = scenes(1);
    let id = store.ids().next().unwrap().to_string();
    let server = MockServer::start(store, "127.0.0.1:0").unwrap();
    let client = RemoteBackend::new(&server.url()).unwrap();
    let args = [("image", ArgValue::Text("image-0".into()))];
    let resp = client.call(&request("e", "depth_estimate", &id, &args), Some(InjectMode::Empty)).unwrap();
    assert_eq!(resp.status, ResponseStatus::Empty);
    let resp = client.call(&request("u", "teleport", &id, &args), None).unwrap();
    assert_eq!(resp.status, ResponseStatus::Error);
    assert_eq!(resp.error_detail.as_deref(), Some("unknown operation"));
    let health = client.health().unwrap();
    assert_eq!(health["protocol"], PROTOCOL_VERSION);
    assert_eq!(health["atomics"].as_array().unwrap().len(), 6);
}

#[test]
fn sleeping_past_the_deadline_is_a_timeout() {
    let store = scenes(1);
    let id = store.ids().next().unwrap().to_string();
    let server = MockServer::start(store, "127.0.0.1:0").unwrap();
    let client = RemoteBackend::new(&server.url()).unwrap();
    let mut req = request("t", "depth_estimate", &id, &[("image", ArgValue::Text("image-0".into()))]);
    req.deadline_ms = 50;
    let started = Instant::now();
    let err = client.call(&req, Some(InjectMode::Timeout)).unwrap_err();
    assert!(matches!(err, TransportError::DeadlineExceeded(_)), "{err:?}");
    assert!(started.elapsed() < Duration::from_millis(50 + 200));
    assert_eq!(ToolError::from(err).kind, ToolErrorKind::Timeout);
}

#[test]
fn refused_connection_is_backend_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = RemoteBackend::new(&format!("http://127.0.0.1:{port}"))
        .unwrap()
        .with_retry(RetryPolicy { max_attempts: 2, backoff: Duration::from_millis(5) });
    let err = client.call(&request("c", "segment", "s", &[]), None).unwrap_err();
    assert!(matches!(err, TransportError::ConnectFailed(_)), "{err:?}");
    assert_eq!(ToolError::from(err).kind, ToolErrorKind::BackendUnavailable);
}

#[test]
fn unavailable_server_is_retried_then_reported() {
    let store = scenes(1);
    let id = store.ids().next().unwrap().to_string();
    let server = MockServer::start(store, "127.0.0.1:0").unwrap();
    let client = RemoteBackend::new(&server.url()).unwrap();
    let req = request("x", "depth_estimate", &id, &[("image", ArgValue::Text("image-0".into()))]);
    let err = client.call(&req, Some(InjectMode::Unavailable)).unwrap_err();
    assert!(matches!(err, TransportError::ConnectFailed(_)));
    assert_eq!(server.executed(), 0);
}

#[test]
fn repeated_request_id_executes_once() {
    let store = scenes(1);
    let id = store.ids().next().unwrap().to_string();
    let server = MockServer::start(store, "127.0.0.1:0").unwrap();
    let client = RemoteBackend::new(&server.url()).unwrap();
    let req = request("same", "depth_estimate", &id, &[("image", ArgValue::Text("image-0".into()))]);
    let a = client.call(&req, None).unwrap();
    let b = client.call(&req, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(server.executed(), 1);
}

#[test]
fn error_mapping_is_injective() {
    let kinds: Vec<ToolErrorKind> = [
        TransportError::ConnectFailed("a".into()),
        TransportError::DeadlineExceeded("b".into()),
        TransportError::MalformedResponse("c".into()),
    ]
    .into_iter()
    .map(|e| ToolError::from(e).kind)
    .collect();
    assert_eq!(kinds, vec![ToolErrorKind::BackendUnavailable, ToolErrorKind::Timeout, ToolErrorKind::ExecutionError]);
}

fn skill_calls(scene: &spatial_core::world::SceneSpec) -> Vec<String> {
    let mut labels: Vec<String> = scene.objects.iter().map(|o| o.label.clone()).collect();
    labels.sort();
    labels.dedup();
    labels.push("unicorn".into());
    let list = labels.iter().map(|l| format!("\"{l}\"")).collect::<Vec<_>>().join(", ");
    let b = scene.objects[0].bbox;
    vec![
        format!("SegmentObjects(img_path=\"image-0\", text_labels=[{list}])"),
        format!("EstimateDepth(img_path=\"image-0\", text_labels=[{list}])"),
        "EstimateDepth(img_path=\"image-0\")".to_string(),
        format!("EstimateSize(img_path=\"image-0\", text_labels=[{list}])"),
        format!("CountObjects(img_path=\"image-0\", text_labels=[{list}])"),
        format!("ZoomCrop(img_path=\"image-0\", box=[{}, {}, {}, {}], zoom_factor=1.5)", b.x1, b.y1, b.x2, b.y2),
        format!("Get3DPoint(img_path=\"image-6\", text_labels=[{list}])"),
        format!("CountObjects(img_path=\"image-6\", text_labels=[{list}])"),
    ]
}

#[test]
fn remote_skills_equal_in_process_skills() {
    let store = scenes(12);
    let server = MockServer::start(store.clone(), "127.0.0.1:0").unwrap();
    let local = Toolbox::in_process(store.clone());
    let remote = Toolbox::with_backend(store.clone(), Arc::new(RemoteBackend::new(&server.url()).unwrap()));
    for id in store.ids() {
        let scene = store.get(id).unwrap();
        let mut a = local.start_episode("a", id, 5).unwrap();
        let mut b = remote.start_episode("b", id, 5).unwrap();
        for call in skill_calls(scene) {
            let call = parse_action_call(&call).unwrap().remove(0);
            let ra = execute_skill(&local.registry, &call, &mut a).unwrap();
            let rb = execute_skill(&remote.registry, &call, &mut b).unwrap();
            assert_eq!(ra.text().as_bytes(), rb.text().as_bytes());
            assert_eq!(ra.status, rb.status);
            assert_ne!(ra.status, SkillStatus::Failed, "{}", ra.text());
        }
        assert_eq!(a.store.len(), b.store.len());
        for k in 0..a.store.len() as u32 {
            let (x, y) = (a.store.get(ImageRef(k)).unwrap(), b.store.get(ImageRef(k)).unwrap());
            assert!(x.raster.as_raw() == y.raster.as_raw(), "image-{k} differs in scene {id}");
        }
    }
}

#[test]
fn injected_failures_keep_their_kind_over_the_wire() {
    let store = scenes(1);
    let id = store.ids().next().unwrap().to_string();
    let server = MockServer::start(store.clone(), "127.0.0.1:0").unwrap();
    let backend = RemoteBackend::new(&server.url()).unwrap().with_retry(RetryPolicy { max_attempts: 2, backoff: Duration::from_millis(1) });
    let remote = Toolbox::with_backend(store, Arc::new(backend));
    for kind in [ToolErrorKind::EmptyReturn, ToolErrorKind::ExecutionError, ToolErrorKind::Timeout, ToolErrorKind::BackendUnavailable] {
        let noise = NoiseConfig { failure_kinds: vec![(kind, 1.0)], ..NoiseConfig::with_failures(1.0) };
        let tb = remote.clone().with_failures(noise);
        let mut ctx = tb.start_episode("f", &id, 1).unwrap();
        ctx.budget = Some(Duration::from_millis(100));
        let call = parse_action_call("Get3DPoint(img_path=\"image-0\", text_labels=[\"chair\"])").unwrap().remove(0);
        let r = execute_skill(&tb.registry, &call, &mut ctx).unwrap();
        assert_eq!(r.status, SkillStatus::Failed);
        assert_eq!(r.error.unwrap().kind, kind);
    }
}

#[test]
fn bind_failure_is_reported() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    assert!(matches!(MockServer::start(scenes(1), &addr), Err(spatial_transport::ServeError::BindFailed { .. })));
}

#[test]
fn inline_images_are_accepted() {
    let store = scenes(1);
    let id = store.ids().next().unwrap().to_string();
    let scene = store.get(&id).unwrap().clone();
    let server = MockServer::start(store, "127.0.0.1:0").unwrap();
    let client = RemoteBackend::new(&server.url()).unwrap();
    let mut req = request("i", "render", &id, &[("image", ArgValue::Text("image-0".into())), ("style", ArgValue::Text("depth".into()))]);
    req.image = WireImage { reference: None, b64: Some(spatial_core::tools::encode_png_b64(&scene.render())) };
    req.inputs = vec![AtomicOutput::DepthField { depth: scene.depth_field() }];
    let resp = client.call(&req, None).unwrap();
    assert_eq!(resp.status, ResponseStatus::Ok, "{:?}", resp.error_detail);
}

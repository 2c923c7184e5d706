//! Seeded protocol fuzzer shared by the teleop tests and the acceptance run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use avr_core::gimbal::{focal_from_zoom, PAN_RANGE, TILT_RANGE, ZOOM_RANGE};
use avr_core::virtual_camera::{make_scene_with, SceneConfig};
use avr_core::FrameSize;
use avr_teleop::protocol::SCHEMA;
use avr_teleop::{Outbound, Role, Session, SessionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub messages: usize,
    pub ticks: usize,
    pub frames: u64,
    pub errors: usize,
    pub states: usize,
    pub violations: Vec<String>,
}

pub fn small_session(root: &Path, seed: u64) -> Session {
    let scene = make_scene_with(
        SceneConfig {
            world_size: 256,
            ..SceneConfig::default()
        },
        seed,
        2,
    )
    .expect("scene");
    let cfg = SessionConfig {
        out_size: FrameSize { width: 64, height: 36 },
        record_root: root.to_path_buf(),
        seed,
        ..SessionConfig::default()
    };
    Session::with_scene(cfg, Arc::new(scene))
}

pub fn sub_schema(def: &str) -> jsonschema::Validator {
    let mut schema: Value = serde_json::from_str(SCHEMA).expect("schema parses");
    let obj = schema.as_object_mut().unwrap();
    obj.remove("oneOf");
    obj.remove("$id");
    obj.insert("$ref".into(), json!(format!("#/$defs/{def}")));
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.random_range(0..if depth > 1 { 6 } else { 8 }) {
        0 => Value::Null,
        1 => json!(rng.random_bool(0.5)),
        2 => json!(rng.random_range(-5i64..5)),
        3 => json!(rng.random_range(-200.0..200.0)),
        4 => json!(["hello", "pose", "zoom", "record", "step", "rate", "start", "stop", "", "..", "a b"]
            [rng.random_range(0..11)]),
        5 => json!(rng.random_range(-1e6..1e6) as i64),
        6 => Value::Array((0..rng.random_range(0..5)).map(|_| random_value(rng, depth + 1)).collect()),
        _ => {
            let mut m = serde_json::Map::new();
            for _ in 0..rng.random_range(0..3) {
                m.insert(format!("k{}", rng.random_range(0..4)), random_value(rng, depth + 1));
            }
            Value::Object(m)
        }
    }
}

/// A well-formed message of a random type, with values that are sometimes
/// out of range.
fn template(rng: &mut ChaCha8Rng, clock: &mut f64) -> Value {
    match rng.random_range(0..6) {
        0 => json!({
            "type": "hello",
            "role": if rng.random_bool(0.5) { "operator" } else { "viewer" },
            "proto": if rng.random_bool(0.9) { 1 } else { 2 },
        }),
        1 | 2 => {
            *clock += if rng.random_bool(0.05) {
                -rng.random_range(0.0..50.0)
            } else {
                rng.random_range(0.0..20.0)
            };
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            json!({"type": "pose", "q": q, "t_ms": clock.max(0.0)})
        }
        3 => json!({"type": "zoom", "mode": "step", "dir": if rng.random_bool(0.5) { 1 } else { -1 }}),
        4 => json!({"type": "zoom", "mode": "rate", "v": rng.random_range(-2.5..2.5)}),
        _ => {
            let mut m = json!({"type": "record", "action": if rng.random_bool(0.5) { "start" } else { "stop" }});
            if rng.random_bool(0.3) {
                m["name"] = json!(format!("fz_{}", rng.random_range(0..1000)));
            }
            m
        }
    }
}

fn mutate(rng: &mut ChaCha8Rng, mut v: Value) -> Value {
    let obj = v.as_object_mut().unwrap();
    let keys: Vec<String> = obj.keys().cloned().collect();
    match rng.random_range(0..4) {
        0 => {
            obj.remove(&keys[rng.random_range(0..keys.len())]);
        }
        1 => {
            let k = &keys[rng.random_range(0..keys.len())];
            obj.insert(k.clone(), random_value(rng, 0));
        }
        2 => {
            obj.insert(format!("extra{}", rng.random_range(0..3)), random_value(rng, 0));
        }
        _ => {
            obj.insert("type".into(), random_value(rng, 1));
        }
    }
    v
}

fn next_input(rng: &mut ChaCha8Rng, clock: &mut f64) -> Vec<u8> {
    match rng.random_range(0..10) {
        0 => (0..rng.random_range(0..48)).map(|_| rng.random::<u8>()).collect(),
        1 => {
            let mut b = template(rng, clock).to_string().into_bytes();
            let at = rng.random_range(0..=b.len());
            b.insert(at, 0xff);
            b
        }
        2 => {
            let s = template(rng, clock).to_string();
            s[..rng.random_range(0..s.len())].as_bytes().to_vec()
        }
        3 => random_value(rng, 0).to_string().into_bytes(),
        4..=6 => {
            let t = template(rng, clock);
            mutate(rng, t).to_string().into_bytes()
        }
        _ => template(rng, clock).to_string().into_bytes(),
    }
}

fn check_outbound(m: &Outbound, outbound: &jsonschema::Validator, report: &mut FuzzReport, next_state: &mut u64, next_frame: &mut u64) {
    let v: Value = serde_json::from_str(&m.to_json()).unwrap();
    if !outbound.is_valid(&v) {
        report.violations.push(format!("outbound fails schema: {v}"));
    }
    match *m {
        Outbound::State { pan, tilt, zoom, focal_mm, seq } => {
            report.states += 1;
            let in_range = (PAN_RANGE.0..=PAN_RANGE.1).contains(&pan)
                && (TILT_RANGE.0..=TILT_RANGE.1).contains(&tilt)
                && (ZOOM_RANGE.0..=ZOOM_RANGE.1).contains(&zoom);
            let focal_ok = focal_from_zoom(zoom).is_ok_and(|f| (f - focal_mm).abs() < 1e-9);
            if !in_range || !focal_ok {
                report.violations.push(format!("bad state {v}"));
            }
            if seq != *next_state {
                report.violations.push(format!("state seq {seq}, expected {next_state}"));
            }
            *next_state = seq + 1;
        }
        Outbound::Frame { seq, .. } => {
            if seq != *next_frame {
                report.violations.push(format!("frame seq {seq}, expected {next_frame}"));
            }
            *next_frame = seq + 1;
        }
        Outbound::Error { .. } => report.errors += 1,
        Outbound::Record { .. } => {}
    }
}

/// Feeds `n` fuzzed messages, interleaved with clock ticks, to one session.
pub fn run(n: usize, seed: u64, root: &Path) -> FuzzReport {
    let inbound = sub_schema("inbound");
    let outbound = sub_schema("outbound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = small_session(root, seed);
    let mut report = FuzzReport::default();
    let (mut pose_clock, mut tick_clock) = (0.0f64, 0.0f64);
    let (mut next_state, mut next_frame) = (0u64, 0u64);

    for i in 0..n {
        if rng.random_bool(0.3) {
            tick_clock += if rng.random_bool(0.03) { -5.0 } else { rng.random_range(0.0..25.0) };
            report.ticks += 1;
            match catch_unwind(AssertUnwindSafe(|| session.tick(tick_clock))) {
                Ok(out) => {
                    for m in &out {
                        check_outbound(m, &outbound, &mut report, &mut next_state, &mut next_frame);
                    }
                }
                Err(_) => report.violations.push(format!("tick {tick_clock} panicked")),
            }
        }
        let bytes = next_input(&mut rng, &mut pose_clock);
        let role = if rng.random_bool(0.8) { Role::Operator } else { Role::Viewer };
        report.messages += 1;
        let out = match catch_unwind(AssertUnwindSafe(|| session.handle_bytes(role, &bytes))) {
            Ok(out) => out,
            Err(_) => {
                report.violations.push(format!("message {i} panicked: {:?}", String::from_utf8_lossy(&bytes)));
                continue;
            }
        };
        let schema_valid = std::str::from_utf8(&bytes)
            .ok()
            .and_then(|t| serde_json::from_str::<Value>(t).ok())
            .is_some_and(|v| inbound.is_valid(&v));
        if !schema_valid && !out.iter().any(|m| matches!(m, Outbound::Error { .. })) {
            report
                .violations
                .push(format!("schema-invalid message {i} got no error: {:?}", String::from_utf8_lossy(&bytes)));
        }
        for m in &out {
            check_outbound(m, &outbound, &mut report, &mut next_state, &mut next_frame);
        }
    }
    report.frames = next_frame;
    if session.frames_emitted() != next_frame {
        report.violations.push("frame counter disagrees with emitted frames".into());
    }
    report
}

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use brickguide::plan::{parse_plan, Rotation};
use brickguide::scene::{Action, NoiseConfig};
use brickguide::session::{Mode, Session, SessionConfig};
use brickguide_server::Server;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

const PLAN: &str = "PLAN demo\nPART 2x4 0 0 0 0\nPART 2x2 0 0 1 0\nPART 2x4 2 0 0 0\n";

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Running {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

fn config(mode: Mode, tick_hz: u32) -> SessionConfig {
    let mut cfg = SessionConfig::new(parse_plan(PLAN).unwrap());
    cfg.mode = mode;
    cfg.tick_hz = tick_hz;
    cfg
}

async fn serve(cfg: SessionConfig) -> Running {
    let server = Server::bind(cfg, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = server.local_addr();
    let (tx, rx) = oneshot::channel();
    tokio::spawn(server.run(async {
        let _ = rx.await;
    }));
    Running { addr, stop: Some(tx) }
}

async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session"))
        .await
        .unwrap();
    ws
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::text(v.to_string())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("message within 5 s")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn recv_type(ws: &mut Ws, ty: &str) -> Value {
    loop {
        let v = recv(ws).await;
        if v["type"] == ty {
            return v;
        }
    }
}

async fn hello(ws: &mut Ws, role: &str) -> Value {
    send(ws, json!({"v": 1, "sid": "demo", "type": "HELLO", "role": role})).await;
    recv_type(ws, "SNAPSHOT").await
}

fn action(kind: &str, a: &Action) -> Value {
    match a {
        Action::Pick { id } | Action::Remove { id } => {
            json!({"v": 1, "sid": "demo", "type": "ACTION", "action": kind, "id": id})
        }
        Action::Place { id, x, y, layer, rot } => json!({
            "v": 1, "sid": "demo", "type": "ACTION", "action": "place",
            "id": id, "x": x, "y": y, "layer": layer, "rot": rot.degrees()
        }),
    }
}

async fn place_step0(ws: &mut Ws) {
    send(ws, action("pick", &Action::Pick { id: 0 })).await;
    let place = Action::Place {
        id: 0,
        x: 0,
        y: 0,
        layer: 0,
        rot: Rotation::R0,
    };
    send(ws, action("place", &place)).await;
}

#[tokio::test]
async fn display_gets_snapshot_within_a_second() {
    let srv = serve(config(Mode::Sim, 15)).await;
    let start = Instant::now();
    let mut ws = connect(srv.addr).await;
    let snap = hello(&mut ws, "display").await;
    assert!(start.elapsed() < Duration::from_secs(1));
    assert_eq!(snap["v"], 1);
    assert_eq!(snap["sid"], "demo");
    assert_eq!(snap["plan"], "demo");
    assert_eq!(snap["steps"].as_array().unwrap().len(), 3);
    // History replay follows the snapshot.
    assert_eq!(recv(&mut ws).await["kind"], "SESSION_STARTED");
    let started = recv(&mut ws).await;
    assert_eq!(started["kind"], "STEP_STARTED");
    assert_eq!(started["step_index"], 0);
}

#[tokio::test]
async fn periodic_snapshots_arrive_without_hello_replies() {
    let srv = serve(config(Mode::Sim, 60)).await;
    let mut ws = connect(srv.addr).await;
    hello(&mut ws, "display").await;
    for _ in 0..2 {
        let next = recv_type(&mut ws, "SNAPSHOT").await;
        // Taken right after tick 15k, so the frame counter reads 15k + 1.
        assert_eq!(next["frame"].as_u64().unwrap() % 15, 1);
    }
}

#[tokio::test]
async fn other_paths_are_refused() {
    let srv = serve(config(Mode::Sim, 15)).await;
    let res = tokio_tungstenite::connect_async(format!("ws://{}/other", srv.addr)).await;
    assert!(res.is_err());
}

#[tokio::test]
async fn actor_completes_step_zero_within_k_plus_one_ticks() {
    let srv = serve(config(Mode::Sim, 30)).await;
    let mut ws = connect(srv.addr).await;
    hello(&mut ws, "actor").await;
    let h = recv_type(&mut ws, "HIGHLIGHTS").await;
    assert_eq!(h["step_index"], 0);
    assert_eq!(h["label"], "2x4");
    let sent_after = recv_type(&mut ws, "HIGHLIGHTS").await["frame"].as_u64().unwrap();
    place_step0(&mut ws).await;
    let done = loop {
        let v = recv_type(&mut ws, "EVENT").await;
        if v["kind"] == "STEP_COMPLETED" {
            break v;
        }
    };
    assert_eq!(done["step_index"], 0);
    let frame = done["frame"].as_u64().unwrap();
    // Actions land at the first tick after receipt; K = 5 hits follow.
    assert!(
        frame > sent_after && frame <= sent_after + 1 + 5 + 1,
        "{sent_after} -> {frame}"
    );
    let next = recv(&mut ws).await;
    assert_eq!(
        (next["kind"].as_str(), next["step_index"].as_u64()),
        (Some("STEP_STARTED"), Some(1))
    );
}

#[tokio::test]
async fn illegal_transitions_are_reported_to_the_actor() {
    let srv = serve(config(Mode::Sim, 30)).await;
    let mut ws = connect(srv.addr).await;
    hello(&mut ws, "actor").await;
    send(&mut ws, action("remove", &Action::Remove { id: 0 })).await;
    let err = recv_type(&mut ws, "ERROR").await;
    assert_eq!(err["code"], "ACTION");
}

#[tokio::test]
async fn mode_and_role_errors_keep_the_connection() {
    let srv = serve(config(Mode::Sim, 30)).await;
    let mut ws = connect(srv.addr).await;
    send(&mut ws, action("pick", &Action::Pick { id: 0 })).await;
    assert_eq!(recv_type(&mut ws, "ERROR").await["code"], "ROLE");
    hello(&mut ws, "display").await;
    send(&mut ws, action("pick", &Action::Pick { id: 0 })).await;
    assert_eq!(recv_type(&mut ws, "ERROR").await["code"], "ROLE");
    send(
        &mut ws,
        json!({"v": 1, "sid": "demo", "type": "DETECTIONS", "frame": 1, "boxes": []}),
    )
    .await;
    assert_eq!(recv_type(&mut ws, "ERROR").await["code"], "MODE");
    ws.send(Message::text("{oops")).await.unwrap();
    assert_eq!(recv_type(&mut ws, "ERROR").await["code"], "MALFORMED");
    // Still served.
    hello(&mut ws, "display").await;

    let ext = serve(config(Mode::External, 30)).await;
    let mut ws = connect(ext.addr).await;
    hello(&mut ws, "actor").await;
    send(&mut ws, action("pick", &Action::Pick { id: 0 })).await;
    assert_eq!(recv_type(&mut ws, "ERROR").await["code"], "MODE");
}

#[tokio::test]
async fn every_subscriber_sees_every_event_once_in_order() {
    let srv = serve(config(Mode::Sim, 60)).await;
    let mut actor = connect(srv.addr).await;
    let mut display = connect(srv.addr).await;
    hello(&mut actor, "actor").await;
    hello(&mut display, "display").await;
    place_step0(&mut actor).await;

    async fn events_until_step1(ws: &mut Ws) -> Vec<(String, Option<u64>)> {
        let mut out = Vec::new();
        loop {
            let v = recv_type(ws, "EVENT").await;
            out.push((v["kind"].as_str().unwrap().to_string(), v["step_index"].as_u64()));
            if v["kind"] == "STEP_STARTED" && v["step_index"] == 1 {
                return out;
            }
        }
    }
    let a = events_until_step1(&mut actor).await;
    let d = events_until_step1(&mut display).await;
    assert_eq!(a, d);
    assert_eq!(a.len(), 4);

    // A late subscriber gets the same history replayed.
    let mut late = connect(srv.addr).await;
    hello(&mut late, "display").await;
    assert_eq!(events_until_step1(&mut late).await, a);
}

#[tokio::test]
async fn detector_drives_external_session() {
    // Render what a noise-free camera would see after step 0 is placed.
    let mut reference = Session::new(config(Mode::Sim, 30)).unwrap();
    reference.enqueue_action(None, Action::Pick { id: 0 });
    reference.enqueue_action(
        None,
        Action::Place {
            id: 0,
            x: 0,
            y: 0,
            layer: 0,
            rot: Rotation::R0,
        },
    );
    let boxes: Vec<Value> = reference
        .tick()
        .detections
        .iter()
        .map(|b| json!({"x0": b.x_min, "y0": b.y_min, "x1": b.x_max, "y1": b.y_max, "cls": b.class_id, "conf": b.confidence}))
        .collect();
    assert!(!boxes.is_empty());
    let mut cfg = config(Mode::External, 30);
    cfg.noise = NoiseConfig::zero(0);
    let srv = serve(cfg).await;
    let mut ws = connect(srv.addr).await;
    hello(&mut ws, "detector").await;

    let mut completed_after = None;
    for frame in 1..=40u64 {
        send(
            &mut ws,
            json!({"v": 1, "sid": "demo", "type": "DETECTIONS", "frame": frame, "boxes": boxes}),
        )
        .await;
        // One frame per tick: wait for the tick that consumed it.
        let v = recv_type(&mut ws, "HIGHLIGHTS").await;
        if v["step_index"] == 1 {
            completed_after = Some(frame);
            break;
        }
    }
    let frames = completed_after.expect("step 0 completes");
    assert!(frames >= 5, "needs K frames, got {frames}");
}

use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use motion_studio_core::protocol::{ClientMessage, Envelope, ServerMessage, PROTOCOL_VERSION};
use motion_studio_core::sim_exec::SimMode;
use motion_studio_core::{Channel, InputEvent, Keyframe, RobotModel, Sequence, Target};
use motion_studio_server::client::TcpClient;
use motion_studio_server::{start, ServerConfig, ServerError, ServerHandle};
use tokio_tungstenite::tungstenite::Message;

const T: Duration = Duration::from_secs(5);

fn server(fast: bool) -> ServerHandle {
    let mut cfg = ServerConfig::new(RobotModel::planar_two_link());
    cfg.port = 0;
    cfg.tcp_port = Some(0);
    cfg.fast = fast;
    start(cfg).unwrap()
}

fn connect(h: &ServerHandle) -> (TcpClient, u64) {
    let mut c = TcpClient::connect(h.tcp_addr().unwrap()).unwrap();
    let hello = c.recv(T).unwrap();
    assert_eq!(hello.seq_no, 1);
    match hello.message {
        ServerMessage::Hello {
            protocol_version,
            client_id,
            ..
        } => {
            assert_eq!(protocol_version, PROTOCOL_VERSION);
            (c, client_id)
        }
        other => panic!("expected hello, got {other:?}"),
    }
}

fn wave(model: &RobotModel) -> Sequence {
    let home = model.initial_configuration();
    Sequence::new(
        "wave",
        model.name.clone(),
        vec![Channel::new(
            Target::Joint(0),
            vec![
                Keyframe::linear(0.0, home[0]),
                Keyframe::linear(0.5, home[0] + 0.3),
                Keyframe::linear(1.0, home[0]),
            ],
        )],
    )
    .unwrap()
}

#[test]
fn second_pilot_is_denied_and_role_frees_on_disconnect() {
    let h = server(true);
    let (mut a, id_a) = connect(&h);
    let (mut b, _) = connect(&h);
    assert_eq!(
        a.request(ClientMessage::PilotAcquire {}, T).unwrap(),
        ServerMessage::PilotGranted { client_id: id_a }
    );
    assert_eq!(
        b.request(ClientMessage::PilotAcquire {}, T).unwrap(),
        ServerMessage::PilotDenied { holder: id_a }
    );
    drop(a);
    b.recv_until(
        T,
        |e| matches!(e.message, ServerMessage::PilotReleased { client_id } if client_id == id_a),
    )
    .unwrap();
    assert!(matches!(
        b.request(ClientMessage::PilotAcquire {}, T).unwrap(),
        ServerMessage::PilotGranted { .. }
    ));
}

#[test]
fn malformed_frames_get_errors_and_session_continues() {
    let h = server(true);
    let (mut c, _) = connect(&h);
    c.send_raw(r#"{"type":"seq_play","seq_no":1,"payload":{"seq_id":"x"}}"#)
        .unwrap();
    match c.reply_to(1, T).unwrap() {
        ServerMessage::Error { reason, seq_no } => {
            assert_eq!(seq_no, Some(1));
            assert!(reason.contains("seq_play"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
    c.send_raw(r#"{"type":"moonwalk","seq_no":2}"#).unwrap();
    match c.reply_to(2, T).unwrap() {
        ServerMessage::Error { reason, seq_no } => {
            assert_eq!(seq_no, Some(2));
            assert!(reason.contains("moonwalk"));
        }
        other => panic!("{other:?}"),
    }
    c.send_raw("{not json").unwrap();
    c.recv_until(T, |e| {
        matches!(e.message, ServerMessage::Error { seq_no: None, .. })
    })
    .unwrap();
    // rejected frames do not consume sequence numbers, so 1 is still free
    let seq = c.send(ClientMessage::ConfigGet {}).unwrap();
    assert_eq!(seq, 1);
    assert!(matches!(
        c.reply_to(seq, T).unwrap(),
        ServerMessage::Config { .. }
    ));
}

#[test]
fn non_increasing_seq_no_is_rejected() {
    let h = server(true);
    let (mut c, _) = connect(&h);
    c.send_raw(r#"{"type":"config_get","seq_no":5}"#).unwrap();
    c.reply_to(5, T).unwrap();
    c.send_raw(r#"{"type":"config_get","seq_no":5}"#).unwrap();
    assert!(matches!(
        c.reply_to(5, T).unwrap(),
        ServerMessage::Error { .. }
    ));
}

#[test]
fn non_pilot_motion_commands_are_refused() {
    let h = server(true);
    let (mut c, _) = connect(&h);
    for m in [
        ClientMessage::Input(InputEvent::axis(0.0, "stick_y", 1.0)),
        ClientMessage::PresetGoto {
            name: "zero".into(),
        },
        ClientMessage::FaultClear {},
        ClientMessage::SeqPlay {
            seq_id: 1,
            rate: None,
        },
        ClientMessage::SeqStop {},
    ] {
        assert_eq!(c.request(m, T).unwrap(), ServerMessage::NotPilot {});
    }
}

#[test]
fn upload_play_fetch_analyze() {
    let h = server(true);
    let model = RobotModel::planar_two_link();
    let (mut c, _) = connect(&h);
    c.request(ClientMessage::PilotAcquire {}, T).unwrap();
    let seq_id = match c
        .request(
            ClientMessage::SeqUpload {
                sequence: wave(&model),
            },
            T,
        )
        .unwrap()
    {
        ServerMessage::SeqUploaded {
            seq_id, duration, ..
        } => {
            assert_eq!(duration, 1.0);
            seq_id
        }
        other => panic!("{other:?}"),
    };
    let play = c
        .send(ClientMessage::SeqPlay { seq_id, rate: None })
        .unwrap();
    assert!(matches!(
        c.reply_to(play, T).unwrap(),
        ServerMessage::PlayStarted { .. }
    ));
    let mut saw_playing = false;
    let log_id = loop {
        let env = c.recv(T).unwrap();
        match env.message {
            ServerMessage::Snapshot(s) => {
                saw_playing |= matches!(s.mode, SimMode::Playing { .. });
            }
            ServerMessage::PlayDone {
                log_id, completed, ..
            } => {
                assert!(completed);
                break log_id;
            }
            _ => {}
        }
    };
    assert!(saw_playing);
    let snap = c
        .recv_until(T, |e| matches!(e.message, ServerMessage::Snapshot(_)))
        .unwrap();
    if let ServerMessage::Snapshot(s) = snap.message {
        assert_eq!(s.mode, SimMode::Teleop);
    }
    match c.request(ClientMessage::LogFetch { log_id }, T).unwrap() {
        ServerMessage::Log { log, .. } => {
            assert_eq!(log.rows.len(), 101);
            assert_eq!(log.sequence, "wave");
        }
        other => panic!("{other:?}"),
    }
    match c
        .request(
            ClientMessage::Analyze {
                log_id,
                config: None,
                impressions: None,
                meaning: None,
                intended: None,
            },
            T,
        )
        .unwrap()
    {
        ServerMessage::Report { report, .. } => assert_eq!(report.log.rows, 101),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        c.request(ClientMessage::LogFetch { log_id: 999 }, T)
            .unwrap(),
        ServerMessage::Error { .. }
    ));
}

#[test]
fn play_while_playing_is_busy() {
    let h = server(false);
    let model = RobotModel::planar_two_link();
    let (mut c, _) = connect(&h);
    c.request(ClientMessage::PilotAcquire {}, T).unwrap();
    let seq_id = match c
        .request(
            ClientMessage::SeqUpload {
                sequence: wave(&model),
            },
            T,
        )
        .unwrap()
    {
        ServerMessage::SeqUploaded { seq_id, .. } => seq_id,
        other => panic!("{other:?}"),
    };
    let first = c
        .request(ClientMessage::SeqPlay { seq_id, rate: None }, T)
        .unwrap();
    assert!(matches!(first, ServerMessage::PlayStarted { .. }));
    let second = c
        .request(ClientMessage::SeqPlay { seq_id, rate: None }, T)
        .unwrap();
    assert!(matches!(second, ServerMessage::Busy { .. }), "{second:?}");
    let stop = c.send(ClientMessage::SeqStop {}).unwrap();
    c.reply_to(stop, T).unwrap();
    let done = c
        .recv_until(T, |e| matches!(e.message, ServerMessage::PlayDone { .. }))
        .unwrap();
    assert!(matches!(
        done.message,
        ServerMessage::PlayDone {
            completed: false,
            ..
        }
    ));
}

#[test]
fn realtime_snapshots_advance_monotonically() {
    let h = server(false);
    let (mut c, _) = connect(&h);
    let start = Instant::now();
    let mut last_t = -1.0;
    let mut last_seq = 1;
    let mut count = 0;
    while start.elapsed() < Duration::from_secs(2) {
        let env = c.recv(T).unwrap();
        assert!(env.seq_no > last_seq);
        last_seq = env.seq_no;
        if let ServerMessage::Snapshot(s) = env.message {
            assert!(s.t > last_t);
            last_t = s.t;
            count += 1;
        }
    }
    let rate = count as f64 / start.elapsed().as_secs_f64();
    assert!((40.0..=60.0).contains(&rate), "snapshot rate {rate}");
}

#[test]
fn joint_jog_moves_the_arm_in_real_time() {
    let h = server(false);
    let (mut c, _) = connect(&h);
    c.request(ClientMessage::PilotAcquire {}, T).unwrap();
    let q0 = match c
        .recv_until(T, |e| matches!(e.message, ServerMessage::Snapshot(_)))
        .unwrap()
        .message
    {
        ServerMessage::Snapshot(s) => s.q[0],
        _ => unreachable!(),
    };
    c.send(ClientMessage::Input(InputEvent::axis(0.0, "stick_y", 1.0)))
        .unwrap();
    std::thread::sleep(Duration::from_millis(300));
    c.send(ClientMessage::Input(InputEvent::axis(0.0, "stick_y", 0.0)))
        .unwrap();
    std::thread::sleep(Duration::from_millis(200));
    // drain frames queued while sleeping; keep the newest snapshot
    let mut q1 = q0;
    let until = Instant::now() + Duration::from_millis(300);
    while Instant::now() < until {
        if let Ok(env) = c.recv(Duration::from_millis(50)) {
            if let ServerMessage::Snapshot(s) = env.message {
                q1 = s.q[0];
            }
        }
    }
    // about 0.3 s at 1 rad/s
    assert!(q1 - q0 > 0.1, "{q0} -> {q1}");
}

#[test]
fn port_in_use_is_reported() {
    let h = server(true);
    let mut cfg = ServerConfig::new(RobotModel::planar_two_link());
    cfg.port = h.ws_addr().port();
    assert!(matches!(start(cfg), Err(ServerError::Bind { .. })));
}

#[test]
fn websocket_endpoint_speaks_the_protocol() {
    let h = server(true);
    let url = h.ws_url();
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async move {
        let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
            .await
            .unwrap();
        let first = ws.next().await.unwrap().unwrap();
        let hello = Envelope::<ServerMessage>::decode(first.to_text().unwrap()).unwrap();
        assert!(matches!(hello.message, ServerMessage::Hello { .. }));
        let req = Envelope::new(1, ClientMessage::PilotAcquire {}).encode();
        ws.send(Message::text(req)).await.unwrap();
        loop {
            let msg = ws.next().await.unwrap().unwrap();
            let env = Envelope::<ServerMessage>::decode(msg.to_text().unwrap()).unwrap();
            if env.re == Some(1) {
                assert!(matches!(env.message, ServerMessage::PilotGranted { .. }));
                break;
            }
        }
        let bad = format!(
            "ws://{}/elsewhere",
            url.trim_start_matches("ws://").trim_end_matches("/ws")
        );
        assert!(tokio_tungstenite::connect_async(bad.as_str())
            .await
            .is_err());
    });
}

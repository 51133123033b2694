use std::io::Cursor;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use sb2g_core::session::{
    replay_commands, ClientMessage, EndReason, Envelope, ServerMessage, SessionConfig, SessionMode, PROTOCOL_VERSION,
};
use sb2g_core::types::Gait;
use sb2g_core::{replay, run, Method, Trace, WorldScenario};
use sb2g_server::Server;
use tokio::time::timeout;
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

const LIMIT: Duration = Duration::from_secs(60);

fn office() -> WorldScenario {
    WorldScenario::bundled("office-small").unwrap()
}

fn text(m: ClientMessage, tick: u64) -> Message {
    Message::text(Envelope::new(tick, m).to_json())
}

/// Fixed schedule keyed on the tick the client last saw.
fn schedule(tick: u64) -> Option<ClientMessage> {
    match tick {
        0..=5 => Some(ClientMessage::CmdVel {
            vx: 0.8,
            vy: 0.0,
            omega: 0.0,
        }),
        150..=155 => Some(ClientMessage::CmdVel {
            vx: 0.3,
            vy: 0.0,
            omega: 0.5,
        }),
        250..=255 => Some(ClientMessage::SetGait { mode: Gait::Walk }),
        300..=305 => Some(ClientMessage::TriggerInspect { object_id: 1 }),
        400..=405 => Some(ClientMessage::CmdVel {
            vx: 0.0,
            vy: 0.0,
            omega: 0.0,
        }),
        _ => None,
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_teleop_session_replays_headlessly() {
    let scenario = office();
    let config = SessionConfig {
        budget: 60.0,
        ..SessionConfig::new(SessionMode::Teleop, 3)
    };
    let server = Server::bind("127.0.0.1:0", &scenario, config, 40.0).await.unwrap();
    let url = format!("ws://{}", server.local_addr().unwrap());
    let handle = tokio::spawn(server.run());

    let (mut ws, _) = connect_async(url).await.unwrap();
    ws.send(text(ClientMessage::Start, 0)).await.unwrap();
    let mut snapshots = 0;
    let mut end = None;
    let client = async {
        while let Some(frame) = ws.next().await {
            let Message::Text(t) = frame.unwrap() else { continue };
            let env: Envelope<ServerMessage> = serde_json::from_str(&t).unwrap();
            assert_eq!(env.format_version, PROTOCOL_VERSION);
            match env.message {
                ServerMessage::Snapshot(s) => {
                    snapshots += 1;
                    assert!(s.beliefs.iter().all(|b| (b.labels.iter().sum::<f64>() - 1.0).abs() < 1e-9));
                    if let Some(cmd) = schedule(env.tick) {
                        ws.send(text(cmd, env.tick)).await.unwrap();
                    }
                }
                ServerMessage::SessionEnd { reason, summary } => {
                    end = Some((reason, summary));
                    break;
                }
                ServerMessage::Event { .. } => {}
            }
        }
    };
    timeout(LIMIT, client).await.expect("session finished in time");
    let (reason, summary) = end.expect("session_end received");
    assert_eq!(reason, EndReason::Budget);
    assert!(snapshots >= 500, "{snapshots} snapshots");

    let out = timeout(LIMIT, handle).await.unwrap().unwrap().unwrap();
    assert_eq!(out.summary, *summary);
    assert!((out.summary.duration - 60.0).abs() < 1e-9);
    assert!(!out.commands.is_empty());

    // the trace has the batch schema and audits clean
    let trace = Trace::read(Cursor::new(&out.trace)).unwrap();
    assert_eq!(trace.header.method, "teleop");
    assert_eq!(trace.ticks().count(), 601);
    let report = replay(&trace).unwrap();
    assert!(report.identical(), "first mismatch at line {:?}", report.first_mismatch);
    assert!(report.violations.is_empty(), "{:?}", report.violations);

    // the same commands at the same ticks, without a network, give the same run
    let headless = replay_commands(&scenario, config, &out.commands).unwrap();
    assert_eq!(headless.hash, out.hash);
    assert_eq!(headless.summary.inspected, out.summary.inspected);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn autonomous_session_matches_batch_run() {
    let scenario = office();
    let config = SessionConfig {
        budget: 40.0,
        ..SessionConfig::new(SessionMode::Autonomous, 5)
    };
    let server = Server::bind("127.0.0.1:0", &scenario, config, 100.0).await.unwrap();
    let url = format!("ws://{}", server.local_addr().unwrap());
    let handle = tokio::spawn(server.run());
    let (mut ws, _) = connect_async(url).await.unwrap();
    ws.send(text(ClientMessage::Start, 0)).await.unwrap();
    // a spectator may try to drive; it is ignored
    ws.send(text(ClientMessage::TriggerInspect { object_id: 1 }, 0)).await.unwrap();
    let drain = async { while let Some(Ok(_)) = ws.next().await {} };
    timeout(LIMIT, drain).await.unwrap();
    let out = timeout(LIMIT, handle).await.unwrap().unwrap().unwrap();

    let mut batch_scenario = scenario.clone();
    batch_scenario.budget = 40.0;
    let batch = run(&batch_scenario, Method::Sb2g, 5, Vec::new()).unwrap();
    assert_eq!(out.hash, batch.hash);
    assert_eq!(out.summary, batch.summary);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn idle_robot_stays_put_and_lost_client_aborts() {
    let scenario = office();
    let config = SessionConfig {
        budget: 60.0,
        disconnect_grace: 0.3,
        ..SessionConfig::new(SessionMode::Teleop, 1)
    };
    let server = Server::bind("127.0.0.1:0", &scenario, config, 10.0).await.unwrap();
    let url = format!("ws://{}", server.local_addr().unwrap());
    let handle = tokio::spawn(server.run());
    tokio::time::sleep(Duration::from_millis(200)).await;

    let (mut ws, _) = connect_async(url).await.unwrap();
    // nobody has pressed start: the robot has not moved
    let first = loop {
        let Message::Text(t) = ws.next().await.unwrap().unwrap() else { continue };
        let env: Envelope<ServerMessage> = serde_json::from_str(&t).unwrap();
        if let ServerMessage::Snapshot(s) = env.message {
            break (env.tick, s);
        }
    };
    assert_eq!(first.0, 0);
    let start = scenario.start.position;
    assert_eq!((first.1.estimate[0], first.1.estimate[1]), (start.x, start.y));
    assert!(!first.1.running);

    ws.send(text(ClientMessage::Start, 0)).await.unwrap();
    ws.send(text(
        ClientMessage::CmdVel {
            vx: 0.5,
            vy: 0.0,
            omega: 0.0,
        },
        0,
    ))
    .await
    .unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    ws.close(None).await.unwrap();
    drop(ws);

    let out = timeout(LIMIT, handle).await.unwrap().unwrap().unwrap();
    assert_eq!(out.reason, EndReason::Aborted);
    assert!(out.summary.duration < 60.0);
    let trace = Trace::read(Cursor::new(&out.trace)).unwrap();
    assert!(trace.summary().is_some());
}

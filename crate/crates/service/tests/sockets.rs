mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::{config, frame, vital, Fixture};
use icare_client::{AlarmSender, BulkSender, BusReceiver, LiveFeed};
use icare_core::api::LiveEvent;
use icare_core::gateway::{Gateway, GatewayConfig};
use icare_core::protocol::{decode_sms, BulkFrame, SmsMessage, VitalChannel};
use icare_service::ServiceConfig;
use tokio::time::timeout;

const WAIT: Duration = Duration::from_secs(5);

async fn next_event(feed: &mut LiveFeed) -> LiveEvent {
    timeout(WAIT, feed.next())
        .await
        .expect("live event in time")
        .expect("feed open")
        .expect("event decodes")
}

async fn next_line(bus: &mut BusReceiver) -> String {
    timeout(WAIT, bus.next_line())
        .await
        .expect("bus line in time")
        .expect("bus open")
        .expect("line decodes")
}

#[tokio::test]
async fn intake_dispatches_once_per_episode_and_audits() {
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let mut cfg = ServiceConfig::ephemeral(config());
    cfg.audit_log = Some(audit.clone());
    let f = Fixture::with_config(cfg).await;
    f.clock.set(52);

    let mut ec = AlarmSender::connect(f.service.addrs.sms_intake).await.unwrap();
    let line = "ALARM|50|E01|S-ECG-1|38.88000,121.52000";
    assert_eq!(ec.send(line).await.unwrap(), "OK 1");
    assert_eq!(ec.send(line).await.unwrap(), "DUP");
    assert!(ec.send("ALARM|garbage").await.unwrap().starts_with("ERR "));
    assert!(ec
        .send("ADVICE|1|E01|D01|not an alarm")
        .await
        .unwrap()
        .starts_with("ERR "));
    // A second episode from the same sensor is a new dispatch.
    assert_eq!(ec.send("ALARM|400|E01|S-ECG-1|38.88000,121.52000").await.unwrap(), "OK 2");
    assert_eq!(ec.send("ALARM|10|E02|QUICK|1.00000,-2.50000").await.unwrap(), "OK 3");

    let d = f.client("D01").dispatches(Some("E01")).await.unwrap();
    assert_eq!(d.iter().map(|d| d.alarm_ts).collect::<Vec<_>>(), vec![400, 50]);
    assert_eq!(d[1].location.to_wire(), "38.88000,121.52000");
    assert_eq!(d[1].received_at, 52);
    // Callers only see dispatches for subjects they may view.
    assert_eq!(f.client("D01").dispatches(None).await.unwrap().len(), 2);
    assert!(f.client("D02").dispatches(None).await.unwrap().is_empty());
    assert_eq!(f.client("E02").dispatches(None).await.unwrap().len(), 1);

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&audit)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let kinds: Vec<_> = lines.iter().map(|l| l["audit"].as_str().unwrap()).collect();
    assert_eq!(kinds, vec!["dispatched", "duplicate", "rejected", "rejected", "dispatched", "dispatched"]);
    f.service.shutdown().await;
}

#[tokio::test]
async fn bus_forwards_queued_then_live_lines_to_the_gateway() {
    let f = Fixture::start().await;
    let d01 = f.client("D01");
    f.clock.set(100);
    let stored = d01.set_threshold("E01", VitalChannel::EcgHr, 40.0, 140.0).await.unwrap();

    // The gateway connects after the edit: the line was held for it.
    let mut bus = BusReceiver::connect(f.service.addrs.sms_bus, "E01").await.unwrap();
    let line = next_line(&mut bus).await;
    assert_eq!(line, "THRESH|100|E01|ECG_HR|40|140|D01");

    let mut cfg = GatewayConfig::new("E01", [VitalChannel::EcgHr]);
    cfg.alarm_targets = vec!["EC".into()];
    let mut gw = Gateway::new(cfg, 0).unwrap();
    gw.handle_sms_line(&line, 101).unwrap();
    let t = gw.threshold(VitalChannel::EcgHr).unwrap();
    assert_eq!((t.low, t.high), (stored.low, stored.high));

    f.clock.set(200);
    d01.send_advice("E01", "fewer stairs").await.unwrap();
    match decode_sms(&next_line(&mut bus).await).unwrap() {
        SmsMessage::Advice { ts, text, .. } => assert_eq!((ts, text.as_str()), (200, "fewer stairs")),
        other => panic!("{other:?}"),
    }

    // Nothing else is waiting.
    assert!(timeout(Duration::from_millis(200), bus.next_line()).await.is_err());
    f.service.shutdown().await;
}

#[tokio::test]
async fn bus_rejects_a_missing_hello() {
    let f = Fixture::start().await;
    let err = BusReceiver::connect(f.service.addrs.sms_bus, "").await;
    assert!(err.is_err());
    f.service.shutdown().await;
}

#[tokio::test]
async fn live_feed_pushes_vitals_thresholds_and_dispatches() {
    let f = Fixture::start().await;
    let mut feed = f.client("F01").live("E01").await.unwrap();
    let mut other = f.client("E02").live("E02").await.unwrap();

    let mut bulk = BulkSender::connect(f.service.addrs.bulk).await.unwrap();
    bulk.send(&frame(1, "E01", 0..2)).await.unwrap();
    for seq in 0..2 {
        match next_event(&mut feed).await {
            LiveEvent::Vital(r) => assert_eq!(r.seq, seq),
            e => panic!("{e:?}"),
        }
    }
    // Duplicates are not pushed again.
    bulk.send(&frame(2, "E01", 0..3)).await.unwrap();
    match next_event(&mut feed).await {
        LiveEvent::Vital(r) => assert_eq!(r.seq, 2),
        e => panic!("{e:?}"),
    }

    f.client("D01")
        .set_threshold("E01", VitalChannel::EcgHr, 50.0, 100.0)
        .await
        .unwrap();
    assert!(matches!(next_event(&mut feed).await, LiveEvent::Threshold(t) if t.high == 100.0));

    let mut ec = AlarmSender::connect(f.service.addrs.sms_intake).await.unwrap();
    ec.send("ALARM|50|E01|S-ECG-1|38.88000,121.52000").await.unwrap();
    match next_event(&mut feed).await {
        LiveEvent::Dispatch(d) => assert_eq!((d.dispatch_id, d.alarm_ts), (1, 50)),
        e => panic!("{e:?}"),
    }

    // E02's feed saw none of it.
    bulk.send(&BulkFrame::new(3, vec![vital("E02", "S-X", 0, 1.0)], vec![])).await.unwrap();
    match next_event(&mut other).await {
        LiveEvent::Vital(r) => assert_eq!(r.elder_id, "E02"),
        e => panic!("{e:?}"),
    }
    feed.close().await.unwrap();
    f.service.shutdown().await;
}

#[tokio::test]
async fn live_feed_refuses_outsiders() {
    let f = Fixture::start().await;
    let err = f.client("F02").live("E01").await.err().expect("refused");
    assert_eq!(err.status(), Some(403));
    let err = f.anonymous().live("E01").await.err().expect("refused");
    assert_eq!(err.status(), Some(401));
    f.service.shutdown().await;
}

#[tokio::test]
async fn malformed_and_oversized_frames() {
    let f = Fixture::start().await;
    let mut bulk = BulkSender::connect(f.service.addrs.bulk).await.unwrap();
    let ack = bulk.send_payload(b"{not json".to_vec()).await.unwrap();
    assert_eq!(ack.accepted, 0);
    // Unknown subject: whole frame rejected.
    let ack = bulk.send(&frame(5, "NOPE", 0..3)).await.unwrap();
    assert_eq!((ack.frame_id, ack.accepted), (5, 0));
    // The connection survives rejected payloads.
    assert_eq!(bulk.send(&frame(6, "E01", 0..1)).await.unwrap().accepted, 1);

    // A header above the limit closes the connection without an ack.
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut raw = tokio::net::TcpStream::connect(f.service.addrs.bulk).await.unwrap();
    raw.write_all(&u32::MAX.to_be_bytes()).await.unwrap();
    let mut buf = [0u8; 16];
    let n = timeout(WAIT, raw.read(&mut buf)).await.unwrap().unwrap_or(0);
    assert_eq!(n, 0);
    f.service.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_ingest_is_a_set_union() {
    let f = Fixture::start().await;
    let addr = f.service.addrs.bulk;
    let mut tasks = Vec::new();
    for worker in 0..8u64 {
        tasks.push(tokio::spawn(async move {
            let mut bulk = BulkSender::connect(addr).await.unwrap();
            for i in 0..10u64 {
                let start = (worker * 7 + i * 3) % 50;
                let ack = bulk.send(&frame(worker * 100 + i, "E01", start..start + 10)).await.unwrap();
                assert_eq!(ack.accepted, 10);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let mut expected = BTreeSet::new();
    for worker in 0..8u64 {
        for i in 0..10u64 {
            let start = (worker * 7 + i * 3) % 50;
            expected.extend(start..start + 10);
        }
    }
    let view = f.client("E01").vitals("E01", None).await.unwrap();
    let got: BTreeSet<u64> = view.records.iter().map(|r| r.seq).collect();
    assert_eq!(got, expected);
    assert_eq!(view.records.len(), expected.len());
    f.service.shutdown().await;
}

#[tokio::test]
async fn journal_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("server.jsonl");
    let cfg = || {
        let mut c = ServiceConfig::ephemeral(config());
        c.journal = Some(journal.clone());
        c
    };

    let f = Fixture::with_config(cfg()).await;
    let mut bulk = BulkSender::connect(f.service.addrs.bulk).await.unwrap();
    bulk.send(&frame(1, "E01", 0..4)).await.unwrap();
    f.client("D01")
        .set_threshold("E01", VitalChannel::EcgHr, 45.0, 110.0)
        .await
        .unwrap();
    f.client("E01").grant("E01", "F02").await.unwrap();
    let before = f.client("E01").vitals("E01", None).await.unwrap();
    drop(bulk);
    f.service.shutdown().await;

    let f = Fixture::with_config(cfg()).await;
    assert_eq!(f.client("E01").vitals("E01", None).await.unwrap(), before);
    assert_eq!(f.client("F02").vitals("E01", None).await.unwrap(), before);
    // Lines already delivered before the restart are not replayed to the bus.
    assert_eq!(f.service.state.bus.queued("E01"), 0);
    f.service.shutdown().await;
}

mod common;

use common::*;
use rapport_core::protocol::MessageType;
use serde_json::json;

fn frame(sid: &str, ch: &str, seq: u64, v: f64) -> String {
    msg(MessageType::SignalFrame, sid, json!({"ch": ch, "seq": seq, "t_ms": seq * 250, "v": v}))
}

fn consent(sid: &str, ch: &str, share: bool) -> String {
    msg(MessageType::ConsentSet, sid, json!({"channel": ch, "share": share}))
}

async fn lesson_over(mut teacher: Conn, mut student: Conn) {
    let sid = "kanji";
    let t = teacher.join(sid, "sensei", "TEACHER").await;
    let s = student.join(sid, "gakusei", "STUDENT").await;
    assert_eq!((t.as_str(), s.as_str()), ("p1", "p2"));
    let presence = teacher.expect(MessageType::Presence).await;
    assert_eq!(presence.seq, Some(2));
    assert_eq!(presence.payload["participant"], "p2");

    teacher.send(&consent(sid, "SC", true)).await;
    student.send(&consent(sid, "SC", true)).await;
    for conn in [&mut teacher, &mut student] {
        let a = conn.expect(MessageType::ConsentState).await;
        let b = conn.expect(MessageType::ConsentState).await;
        assert_eq!((a.seq, b.seq), (Some(3), Some(4)));
    }

    // BVP is not shared, so only the SC frame reaches the teacher
    student.send(&frame(sid, "BVP", 1, 0.5)).await;
    student.send(&frame(sid, "SC", 1, 6.1)).await;
    let got = teacher.expect(MessageType::SignalFrame).await;
    assert_eq!(got.payload["ch"], "SC");
    assert_eq!(got.payload["participant"], "p2");
    assert_eq!(got.from, "p2");
    // the sender always sees its own frames
    assert_eq!(student.expect(MessageType::SignalFrame).await.payload["ch"], "BVP");

    student.send(&msg(MessageType::LessonAdvance, sid, json!({}))).await;
    let err = student.expect(MessageType::Error).await;
    assert_eq!(err.payload["code"], "not-teacher");
    teacher.send(&msg(MessageType::LessonAdvance, sid, json!({}))).await;
    for conn in [&mut teacher, &mut student] {
        let st = conn.expect(MessageType::LessonState).await;
        assert_eq!(st.payload["phase"], "TEACH(1)");
        assert_eq!(st.seq, Some(5));
    }

    let op = json!({"kind": "STROKE_BEGIN", "board_id": "teacher", "stroke_id": "s1", "point": [0.2, 0.3], "t_ms": 10});
    teacher.send(&msg(MessageType::BoardOp, sid, op)).await;
    let seen = student.expect(MessageType::BoardOp).await;
    assert_eq!((seen.seq, seen.from.as_str()), (Some(6), "p1"));

    teacher.send(&msg(MessageType::Ping, sid, json!({"n": 1}))).await;
    assert_eq!(teacher.expect(MessageType::Pong).await.payload["n"], 1);

    drop(student);
    let left = teacher.expect(MessageType::Presence).await;
    assert_eq!(left.payload["joined"], false);
}

#[tokio::test]
async fn lesson_over_the_ndjson_socket() {
    let server = start_default().await;
    lesson_over(Conn::socket(&server).await, Conn::socket(&server).await).await;
}

#[tokio::test]
async fn lesson_over_web_sockets() {
    let server = start_default().await;
    lesson_over(Conn::ws(&server).await, Conn::ws(&server).await).await;
}

#[tokio::test]
async fn bindings_interoperate() {
    let server = start_default().await;
    lesson_over(Conn::socket(&server).await, Conn::ws(&server).await).await;
}

#[tokio::test]
async fn join_errors() {
    let server = start_default().await;
    let mut c = Conn::socket(&server).await;
    c.send("not json").await;
    assert_eq!(c.recv().await.payload["code"], "malformed");
    c.send(&msg(MessageType::Ping, "x", json!({}))).await;
    assert_eq!(c.recv().await.payload["code"], "not-joined");
    c.send(&join_msg("nowhere", "gakusei", "STUDENT")).await;
    let e = c.recv().await;
    assert_eq!(e.payload["code"], "unknown-session");
    assert_eq!(e.payload["to"], "gakusei");

    let mut t = Conn::socket(&server).await;
    t.join("room", "sensei", "TEACHER").await;
    let mut t2 = Conn::ws(&server).await;
    t2.send(&join_msg("room", "other", "TEACHER")).await;
    assert_eq!(t2.recv().await.payload["code"], "duplicate-teacher");
    // a refused connection may try again
    assert_eq!(t2.join("room", "other", "OBSERVER").await, "p2");
    t2.send(&msg(MessageType::Ping, "elsewhere", json!({}))).await;
    assert_eq!(t2.expect(MessageType::Error).await.payload["code"], "wrong-session");
}

#[tokio::test]
async fn session_ends_with_its_last_member() {
    let server = start_default().await;
    let client = reqwest::Client::new();
    let mut t = Conn::socket(&server).await;
    t.join("brief", "sensei", "TEACHER").await;
    let list: serde_json::Value =
        client.get(format!("{}/api/sessions", server.base_url())).send().await.unwrap().json().await.unwrap();
    assert_eq!(list[0]["sid"], "brief");
    drop(t);
    let gone = async {
        loop {
            let r = client.get(format!("{}/api/sessions/brief", server.base_url())).send().await.unwrap();
            if r.status() == 404 {
                break;
            }
            tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        }
    };
    tokio::time::timeout(WAIT, gone).await.unwrap();
    let mut s = Conn::socket(&server).await;
    s.send(&join_msg("brief", "gakusei", "STUDENT")).await;
    assert_eq!(s.recv().await.payload["code"], "unknown-session");
}

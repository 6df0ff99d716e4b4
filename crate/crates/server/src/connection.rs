//! One client connection, independent of transport: lines of text in,
//! lines of text out.

use std::sync::Arc;

use futures::{Sink, SinkExt, Stream, StreamExt};
use rapport_core::protocol::{parse_envelope, Envelope, ErrorPayload, MessageType, SERVER_ID};
use rapport_core::session::join_request;
use tracing::debug;

use crate::hub::{Hub, Membership};
use crate::outbound::Outbox;

fn error(sid: &str, to: &str, code: &str, message: impl Into<String>, request: Option<MessageType>) -> Envelope {
    Envelope::new(
        MessageType::Error,
        sid,
        SERVER_ID,
        ErrorPayload { code: code.into(), message: message.into(), to: to.into(), request_type: request },
    )
}

/// Drive a connection until the peer goes away or the server drops it.
pub async fn serve<I, O, E>(hub: Arc<Hub>, mut incoming: I, mut outgoing: O)
where
    I: Stream<Item = String> + Unpin,
    O: Sink<String, Error = E> + Unpin + Send + 'static,
    E: std::fmt::Debug,
{
    let outbox = Arc::new(Outbox::new(hub.config().outbound_queue));
    let writer = {
        let outbox = outbox.clone();
        tokio::spawn(async move {
            while let Some(env) = outbox.next().await {
                if let Err(e) = outgoing.send(env.to_text()).await {
                    debug!(error = ?e, "write failed");
                    break;
                }
            }
            outbox.close();
            let _ = outgoing.close().await;
        })
    };

    let mut member: Option<Membership> = None;
    loop {
        let line = tokio::select! {
            line = incoming.next() => match line {
                Some(line) => line,
                None => break,
            },
            _ = outbox.closed() => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let me = member.as_ref().map(|m| m.participant.as_str()).unwrap_or_default();
        let sid = member.as_ref().map(|m| m.sid.as_str()).unwrap_or_default();
        let env = match parse_envelope(&line) {
            Ok(env) => env,
            Err(e) => {
                outbox.push(error(sid, me, e.code(), e.to_string(), None));
                continue;
            }
        };
        match &member {
            Some(m) => {
                if !env.sid.is_empty() && env.sid != m.sid {
                    outbox.push(error(sid, me, "wrong-session", format!("connection is in session {}", m.sid), Some(env.kind)));
                } else if !m.send(env).await {
                    break;
                }
            }
            None if env.kind == MessageType::Join => match join_request(&env) {
                Ok(_) if env.sid.is_empty() => {
                    outbox.push(error("", "", "schema", "JOIN needs a session id", Some(MessageType::Join)));
                }
                Ok(req) => member = hub.join(&env.sid, &req.name, req.role, outbox.clone()).await,
                Err(e) => {
                    outbox.push(error(&env.sid, "", e.code(), e.to_string(), Some(MessageType::Join)));
                }
            },
            None => {
                outbox.push(error(&env.sid, "", "not-joined", "send JOIN first", Some(env.kind)));
            }
        }
    }
    if let Some(m) = member {
        m.leave().await;
    }
    outbox.close();
    let _ = writer.await;
}

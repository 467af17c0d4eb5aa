use std::sync::{Arc, Mutex};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use super::ControlMessage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrokerError {
    #[error("broker unreachable: {0}")]
    Unreachable(String),
    #[error("broker connection lost: {0}")]
    Disconnected(String),
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum BrokerEvent {
    Message {
        topic: String,
        message: ControlMessage,
    },
    /// The transport was re-established; messages may have been missed.
    Reconnected,
}

/// Stream of events for the topics given at subscription time.
pub struct Subscription {
    rx: Receiver<BrokerEvent>,
    // keeps transport resources alive for as long as the subscription
    _guard: Option<Box<dyn Send>>,
}

impl Subscription {
    pub fn new(rx: Receiver<BrokerEvent>) -> Self {
        Self { rx, _guard: None }
    }

    pub fn with_guard(rx: Receiver<BrokerEvent>, guard: Box<dyn Send>) -> Self {
        Self {
            rx,
            _guard: Some(guard),
        }
    }

    /// `Ok(None)` on timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<BrokerEvent>, BrokerError> {
        match self.rx.recv_timeout(timeout) {
            Ok(ev) => Ok(Some(ev)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(BrokerError::Disconnected("subscription closed".into())),
        }
    }

    pub fn try_recv(&self) -> Option<BrokerEvent> {
        self.rx.try_recv().ok()
    }
}

/// Topic-based publish/subscribe. Delivery is at-least-once and FIFO per
/// publisher per topic; subscribers never see messages published before
/// they subscribed.
pub trait Broker: Send + Sync {
    fn publish(&self, topic: &str, message: &ControlMessage) -> Result<(), BrokerError>;
    fn subscribe(&self, topics: &[String]) -> Result<Subscription, BrokerError>;
}

impl<B: Broker + ?Sized> Broker for Arc<B> {
    fn publish(&self, topic: &str, message: &ControlMessage) -> Result<(), BrokerError> {
        (**self).publish(topic, message)
    }

    fn subscribe(&self, topics: &[String]) -> Result<Subscription, BrokerError> {
        (**self).subscribe(topics)
    }
}

struct Subscriber {
    topics: Vec<String>,
    tx: Sender<BrokerEvent>,
}

/// Broker for agents and controller living in one process.
#[derive(Default)]
pub struct InProcessBroker {
    subscribers: Mutex<Vec<Subscriber>>,
}

impl InProcessBroker {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub(crate) fn fan_out(&self, topic: &str, message: &ControlMessage) {
        let mut subs = self.subscribers.lock().expect("subscriber lock");
        subs.retain(|s| {
            if !s.topics.iter().any(|t| t == topic) {
                return true;
            }
            s.tx.send(BrokerEvent::Message {
                topic: topic.to_owned(),
                message: message.clone(),
            })
            .is_ok()
        });
    }
}

impl Broker for InProcessBroker {
    fn publish(&self, topic: &str, message: &ControlMessage) -> Result<(), BrokerError> {
        self.fan_out(topic, message);
        Ok(())
    }

    fn subscribe(&self, topics: &[String]) -> Result<Subscription, BrokerError> {
        let (tx, rx) = unbounded();
        self.subscribers.lock().expect("subscriber lock").push(Subscriber {
            topics: topics.to_vec(),
            tx,
        });
        Ok(Subscription::new(rx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Payload;

    pub(crate) fn msg(sender: &str, seq: u64) -> ControlMessage {
        ControlMessage {
            run_id: None,
            sender_id: sender.into(),
            sent_at_ms: 0,
            seq,
            payload: Payload::StartPhase { phase: seq as usize },
        }
    }

    fn drain(sub: &Subscription) -> Vec<ControlMessage> {
        let mut out = Vec::new();
        while let Some(BrokerEvent::Message { message, .. }) = sub.try_recv() {
            out.push(message);
        }
        out
    }

    #[test]
    fn round_trip_once_in_order() {
        let b = InProcessBroker::new();
        let sub = b.subscribe(&["t".into()]).unwrap();
        for i in 0..5 {
            b.publish("t", &msg("a", i)).unwrap();
        }
        b.publish("other", &msg("a", 99)).unwrap();
        let got: Vec<u64> = drain(&sub).iter().map(|m| m.seq).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn two_publishers_keep_their_own_order() {
        let b = InProcessBroker::new();
        let sub = b.subscribe(&["t".into()]).unwrap();
        let handles: Vec<_> = ["a", "b"]
            .into_iter()
            .map(|name| {
                let b = Arc::clone(&b);
                std::thread::spawn(move || {
                    for i in 0..100 {
                        b.publish("t", &msg(name, i)).unwrap();
                    }
                })
            })
            .collect();
        handles.into_iter().for_each(|h| h.join().unwrap());
        let got = drain(&sub);
        assert_eq!(got.len(), 200);
        for name in ["a", "b"] {
            let seqs: Vec<u64> = got.iter().filter(|m| m.sender_id == name).map(|m| m.seq).collect();
            assert_eq!(seqs, (0..100).collect::<Vec<_>>());
        }
    }

    #[test]
    fn late_subscriber_sees_no_history() {
        let b = InProcessBroker::new();
        b.publish("t", &msg("a", 0)).unwrap();
        let sub = b.subscribe(&["t".into()]).unwrap();
        assert!(drain(&sub).is_empty());
        b.publish("t", &msg("a", 1)).unwrap();
        assert_eq!(drain(&sub).len(), 1);
    }
}

//! Broker wrapper that duplicates, delays and drops messages, for testing
//! the controller and agent state machines.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::broker::{Broker, BrokerError, Subscription};
use super::ControlMessage;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaultPlan {
    pub seed: u64,
    /// Probability a message is delivered twice.
    pub duplicate: f64,
    /// Probability a message is held back, letting other publishers overtake.
    pub hold: f64,
    /// Sender whose messages vanish after it has published this many.
    pub drop_sender: Option<(String, u64)>,
}

struct State {
    rng: ChaCha8Rng,
    held: BTreeMap<String, Vec<(String, ControlMessage)>>,
    published: BTreeMap<String, u64>,
}

/// Held messages are released in order by a background flusher, so one
/// publisher's messages never overtake each other.
pub struct FaultyBroker {
    inner: Arc<dyn Broker>,
    plan: FaultPlan,
    state: Arc<Mutex<State>>,
    stop: Arc<AtomicBool>,
}

impl FaultyBroker {
    pub fn new(inner: Arc<dyn Broker>, plan: FaultPlan) -> Arc<Self> {
        let state = Arc::new(Mutex::new(State {
            rng: ChaCha8Rng::seed_from_u64(plan.seed),
            held: BTreeMap::new(),
            published: BTreeMap::new(),
        }));
        let stop = Arc::new(AtomicBool::new(false));
        let (s2, stop2, inner2) = (Arc::clone(&state), Arc::clone(&stop), Arc::clone(&inner));
        std::thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(1));
                let mut st = s2.lock().expect("fault state lock");
                let held = std::mem::take(&mut st.held);
                for (topic, m) in held.into_values().flatten() {
                    let _ = inner2.publish(&topic, &m);
                }
            }
        });
        Arc::new(Self {
            inner,
            plan,
            state,
            stop,
        })
    }
}

impl Drop for FaultyBroker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

impl Broker for FaultyBroker {
    fn publish(&self, topic: &str, message: &ControlMessage) -> Result<(), BrokerError> {
        let mut st = self.state.lock().expect("fault state lock");
        let sender = message.sender_id.clone();
        let count = st.published.entry(sender.clone()).or_insert(0);
        *count += 1;
        let count = *count;
        if let Some((victim, after)) = &self.plan.drop_sender {
            if *victim == sender && count > *after {
                return Ok(());
            }
        }
        let copies = if st.rng.random_bool(self.plan.duplicate.clamp(0.0, 1.0)) {
            2
        } else {
            1
        };
        let hold =
            st.held.get(&sender).is_some_and(|q| !q.is_empty()) || st.rng.random_bool(self.plan.hold.clamp(0.0, 1.0));
        for _ in 0..copies {
            if hold {
                st.held
                    .entry(sender.clone())
                    .or_default()
                    .push((topic.to_owned(), message.clone()));
            } else {
                self.inner.publish(topic, message)?;
            }
        }
        Ok(())
    }

    fn subscribe(&self, topics: &[String]) -> Result<Subscription, BrokerError> {
        self.inner.subscribe(topics)
    }
}

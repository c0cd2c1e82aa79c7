//! In-process publish/subscribe fan-out.
//!
//! Each subscriber gets its own unbounded queue; publishing clones the message
//! into every live queue. Subscribers that were dropped are pruned lazily.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Mutex;

pub struct Bus<T> {
    subscribers: Mutex<Vec<Sender<T>>>,
}

impl<T: Clone> Default for Bus<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone> Bus<T> {
    pub fn new() -> Self {
        Self { subscribers: Mutex::new(Vec::new()) }
    }

    pub fn subscribe(&self) -> Subscription<T> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.lock().expect("bus lock").push(tx);
        Subscription { rx }
    }

    /// Returns the number of subscribers the message reached.
    pub fn publish(&self, msg: &T) -> usize {
        let mut subs = self.subscribers.lock().expect("bus lock");
        subs.retain(|tx| tx.send(msg.clone()).is_ok());
        subs.len()
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().expect("bus lock").len()
    }
}

pub struct Subscription<T> {
    rx: Receiver<T>,
}

impl<T> Subscription<T> {
    /// All messages queued so far, oldest first.
    pub fn drain(&self) -> Vec<T> {
        let mut out = Vec::new();
        while let Ok(m) = self.rx.try_recv() {
            out.push(m);
        }
        out
    }

    pub fn recv_timeout(&self, timeout: std::time::Duration) -> Option<T> {
        self.rx.recv_timeout(timeout).ok()
    }
}

//! Operator input as an alert source.
//!
//! Wraps any [`Environment`] and merges in alerts typed by a human:
//! each non-empty line read from the input becomes an alert whose atom
//! is the trimmed line and whose payload is empty. This is how a run
//! waits for a go/no-go decision — put a watchpoint on `GO` and the
//! graph holds until someone types it.
//!
//! Reading happens on a background thread so the engine's polling loop
//! never blocks on a quiet terminal. Pending lines make the wrapper
//! report an event due immediately, which is what wakes the engine out
//! of its idle wait. The wrapper reports itself exhausted only when the
//! inner environment is exhausted *and* the input has reached
//! end-of-file with nothing left in flight — closing stdin is how an
//! operator lets a simulated run wind down.
//!
//! Operator alerts obey the same stream discipline as every other
//! alert: a line typed while no watchpoint matches it is consumed by
//! the next round and dropped. Graphs that wait on a human should gate
//! the decision behind a watchpoint that is already active — for
//! example an entry node watching for `GO`.

use std::cell::{Cell, RefCell};
use std::collections::VecDeque;
use std::io::BufRead;
use std::sync::mpsc::{Receiver, TryRecvError};

use crate::env::{Alert, DispatchStatus, Environment};
use crate::graph::NodeId;
use crate::time::Timestamp;

pub struct InteractiveEnvironment<E> {
    inner: E,
    lines: Receiver<String>,
    // Interior mutability: `next_event_time` and `is_exhausted` take
    // `&self` but must see lines the reader thread has already produced.
    buffered: RefCell<VecDeque<String>>,
    input_open: Cell<bool>,
    observed_now: Cell<Timestamp>,
}

impl<E: Environment> InteractiveEnvironment<E> {
    /// Wraps `inner`, taking atoms from the process's standard input.
    pub fn over_stdin(inner: E) -> Self {
        Self::over_reader(inner, std::io::BufReader::new(std::io::stdin()))
    }

    /// Wraps `inner`, taking atoms from an arbitrary line source. The
    /// reader moves to a background thread, so it must be `Send`.
    pub fn over_reader(inner: E, reader: impl BufRead + Send + 'static) -> Self {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                let atom = line.trim();
                if atom.is_empty() {
                    continue;
                }
                if tx.send(atom.to_string()).is_err() {
                    break; // the environment was dropped
                }
            }
            // Dropping the sender marks end-of-input.
        });
        InteractiveEnvironment {
            inner,
            lines: rx,
            buffered: RefCell::new(VecDeque::new()),
            input_open: Cell::new(true),
            observed_now: Cell::new(Timestamp::ZERO),
        }
    }

    /// Pulls every line the reader thread has produced so far into the
    /// local buffer and updates the end-of-input flag.
    fn poll_input(&self) {
        if !self.input_open.get() {
            return;
        }
        let mut buffered = self.buffered.borrow_mut();
        loop {
            match self.lines.try_recv() {
                Ok(atom) => buffered.push_back(atom),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.input_open.set(false);
                    break;
                }
            }
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Environment> Environment for InteractiveEnvironment<E> {
    /// Inner alerts first, then operator lines in the order typed.
    fn get_alerts(&mut self) -> Vec<Alert> {
        let mut alerts = self.inner.get_alerts();
        self.poll_input();
        let mut buffered = self.buffered.borrow_mut();
        if !buffered.is_empty() {
            let now = self.inner.get_time();
            self.observed_now.set(now);
            for atom in buffered.drain(..) {
                alerts.push(Alert::new(atom, "", now));
            }
        }
        alerts
    }

    fn get_time(&mut self) -> Timestamp {
        let now = self.inner.get_time();
        self.observed_now.set(now);
        now
    }

    fn execute(&mut self, command: &str, node: &NodeId) -> DispatchStatus {
        self.inner.execute(command, node)
    }

    fn next_event_time(&self) -> Option<Timestamp> {
        self.poll_input();
        if self.buffered.borrow().is_empty() {
            self.inner.next_event_time()
        } else {
            // A typed line is due immediately. The freshest time this
            // wrapper has seen is "now" as far as the engine knows.
            let due = self.observed_now.get();
            match self.inner.next_event_time() {
                Some(t) if t < due => Some(t),
                _ => Some(due),
            }
        }
    }

    fn advance_to(&mut self, t: Timestamp) {
        self.inner.advance_to(t)
    }

    fn is_exhausted(&self) -> bool {
        self.poll_input();
        !self.input_open.get() && self.buffered.borrow().is_empty() && self.inner.is_exhausted()
    }
}

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("queue is closed")]
pub struct QueueClosed;

struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

/// Bounded multi-producer queue. `push` never blocks: when full, the oldest
/// item is evicted and handed back so the caller can account for it.
pub struct FrameQueue<T> {
    bound: usize,
    inner: Mutex<Inner<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<T> FrameQueue<T> {
    pub fn new(bound: usize) -> Self {
        assert!(bound > 0, "queue bound must be positive");
        FrameQueue {
            bound,
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(bound),
                closed: false,
                dropped: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner<T>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    /// Drop-oldest push. Returns the evicted item, if any.
    pub fn push(&self, item: T) -> Result<Option<T>, QueueClosed> {
        let mut g = self.lock();
        if g.closed {
            return Err(QueueClosed);
        }
        let evicted = if g.items.len() >= self.bound {
            g.dropped += 1;
            g.items.pop_front()
        } else {
            None
        };
        g.items.push_back(item);
        drop(g);
        self.not_empty.notify_one();
        Ok(evicted)
    }

    /// Waits for room instead of evicting.
    pub fn push_blocking(&self, item: T) -> Result<(), QueueClosed> {
        let mut g = self.lock();
        while g.items.len() >= self.bound && !g.closed {
            g = self.not_full.wait(g).unwrap_or_else(|e| e.into_inner());
        }
        if g.closed {
            return Err(QueueClosed);
        }
        g.items.push_back(item);
        drop(g);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Blocks until an item is available. `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut g = self.lock();
        loop {
            if let Some(item) = g.items.pop_front() {
                drop(g);
                self.not_full.notify_one();
                return Some(item);
            }
            if g.closed {
                return None;
            }
            g = self.not_empty.wait(g).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let mut g = self.lock();
        if g.items.is_empty() && !g.closed {
            g = self
                .not_empty
                .wait_timeout_while(g, timeout, |i| i.items.is_empty() && !i.closed)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        let item = g.items.pop_front();
        drop(g);
        if item.is_some() {
            self.not_full.notify_one();
        }
        item
    }

    /// Rejects further pushes; queued items can still be popped.
    pub fn close(&self) {
        self.lock().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items evicted by `push` so far.
    pub fn dropped(&self) -> u64 {
        self.lock().dropped
    }
}

//! The per-session storage worker: raw frames, pipeline outputs and state
//! events are written off the rendering path through a bounded channel.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tokio::sync::{mpsc, oneshot};

use areval_core::model::Frame;
use areval_core::pipeline::{persist_output, FrameOutput, PipelineError, StateEvent};
use areval_core::store::{SessionHandle, SessionStore, StoreError};

/// Where a session's data goes. The disk implementation is the normal one;
/// tests wrap it to inject latency.
pub trait StorageBackend: Send + Sync {
    fn append_frame(&self, handle: &mut SessionHandle, frame: &Frame) -> Result<(), StoreError>;
    fn persist(&self, out: &FrameOutput) -> Result<(), PipelineError>;
    fn record_event(&self, session_id: &str, event: &StateEvent) -> Result<(), StoreError>;
}

pub struct DiskStorage {
    store: SessionStore,
}

impl DiskStorage {
    pub fn new(store: SessionStore) -> Self {
        DiskStorage { store }
    }
}

impl StorageBackend for DiskStorage {
    fn append_frame(&self, handle: &mut SessionHandle, frame: &Frame) -> Result<(), StoreError> {
        self.store.append_frame(handle, frame)
    }

    fn persist(&self, out: &FrameOutput) -> Result<(), PipelineError> {
        persist_output(&self.store, out)
    }

    fn record_event(&self, session_id: &str, event: &StateEvent) -> Result<(), StoreError> {
        self.store.append_event(session_id, event)
    }
}

pub enum StorageJob {
    Frame(Arc<Frame>),
    Output(Box<FrameOutput>),
    Event(StateEvent),
    Flush(oneshot::Sender<()>),
}

#[derive(Debug, Default)]
pub struct StorageCounters {
    pub frames_stored: AtomicU64,
    pub outputs_stored: AtomicU64,
    /// Outputs skipped because the channel was full.
    pub outputs_dropped: AtomicU64,
    pub failures: AtomicU64,
    pub last_error: Mutex<Option<String>>,
}

impl StorageCounters {
    fn fail(&self, what: &str, e: impl std::fmt::Display) {
        log::error!("storage: {what}: {e}");
        self.failures.fetch_add(1, Ordering::Relaxed);
        *self.last_error.lock().unwrap_or_else(|e| e.into_inner()) = Some(format!("{what}: {e}"));
    }
}

pub struct StorageWorker {
    tx: mpsc::Sender<StorageJob>,
    counters: Arc<StorageCounters>,
    thread: Option<JoinHandle<()>>,
}

impl StorageWorker {
    pub fn spawn(backend: Arc<dyn StorageBackend>, mut handle: SessionHandle, bound: usize) -> Self {
        let (tx, mut rx) = mpsc::channel::<StorageJob>(bound.max(1));
        let counters = Arc::new(StorageCounters::default());
        let c = counters.clone();
        let thread = std::thread::Builder::new()
            .name(format!("storage-{}", handle.session_id))
            .spawn(move || {
                while let Some(job) = rx.blocking_recv() {
                    match job {
                        StorageJob::Frame(f) => match backend.append_frame(&mut handle, &f) {
                            Ok(()) => {
                                c.frames_stored.fetch_add(1, Ordering::Relaxed);
                            }
                            Err(e) => c.fail(&format!("frame {}", f.index), e),
                        },
                        StorageJob::Output(out) => match backend.persist(&out) {
                            Ok(()) => {
                                c.outputs_stored.fetch_add(1, Ordering::Relaxed);
                            }
                            Err(e) => c.fail(&format!("outputs of frame {}", out.frame_index), e),
                        },
                        StorageJob::Event(ev) => {
                            if let Err(e) = backend.record_event(&handle.session_id, &ev) {
                                c.fail("event", e);
                            }
                        }
                        StorageJob::Flush(done) => {
                            let _ = done.send(());
                        }
                    }
                }
            })
            .expect("spawn storage worker");
        StorageWorker {
            tx,
            counters,
            thread: Some(thread),
        }
    }

    pub fn counters(&self) -> &Arc<StorageCounters> {
        &self.counters
    }

    pub fn sender(&self) -> mpsc::Sender<StorageJob> {
        self.tx.clone()
    }

    /// Queues a captured frame, waiting for room: capture data is never
    /// dropped.
    pub async fn submit_frame(&self, frame: Arc<Frame>) -> bool {
        self.tx.send(StorageJob::Frame(frame)).await.is_ok()
    }

    /// Waits until every job queued so far has been handled.
    pub async fn flush(&self) {
        let (done, wait) = oneshot::channel();
        if self.tx.send(StorageJob::Flush(done)).await.is_ok() {
            let _ = wait.await;
        }
    }

    /// Drains outstanding jobs and stops the thread.
    pub fn shutdown(self) {
        let StorageWorker { tx, thread, .. } = self;
        drop(tx);
        if let Some(t) = thread {
            let _ = t.join();
        }
    }
}

/// Sender half used by the rendering worker.
#[derive(Clone)]
pub struct OutputSink {
    tx: mpsc::Sender<StorageJob>,
    counters: Arc<StorageCounters>,
}

impl OutputSink {
    pub fn new(worker: &StorageWorker) -> Self {
        OutputSink {
            tx: worker.sender(),
            counters: worker.counters.clone(),
        }
    }

    /// Never blocks the caller; outputs can be regenerated by replay, so a
    /// full channel drops them.
    pub fn output(&self, out: FrameOutput) {
        if self.tx.try_send(StorageJob::Output(Box::new(out))).is_err() {
            self.counters.outputs_dropped.fetch_add(1, Ordering::Relaxed);
            log::warn!("storage channel full; composite outputs dropped");
        }
    }

    /// Events are needed for deterministic replay, so this waits for room.
    pub fn event(&self, ev: StateEvent) {
        if self.tx.blocking_send(StorageJob::Event(ev)).is_err() {
            log::warn!("storage worker gone; event lost");
        }
    }
}

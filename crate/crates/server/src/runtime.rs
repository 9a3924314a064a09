//! Per-session runtime: live ingest (queue → rendering worker → storage
//! worker), replay drivers and subscriber fan-out.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;
use tokio::sync::broadcast;

use areval_core::model::{ExperimentProtocol, Frame, SessionManifest};
use areval_core::pipeline::{
    FrameOutput, FrameProcessor, FrameQueue, InteractiveState, PipelineError, ReplayCursor, StateEvent,
};
use areval_core::store::SessionHandle;
use areval_core::wire::{ControlCommand, Envelope, ReplayMode};

use crate::storage::{OutputSink, StorageBackend, StorageWorker};
use crate::AppState;

/// Encoded envelopes fanned out to viewers.
pub type Broadcast = Arc<Vec<u8>>;

const SUBSCRIBER_BUFFER: usize = 64;

#[derive(Debug, Default)]
pub struct RuntimeCounters {
    pub frames_received: AtomicU64,
    pub frames_dropped: AtomicU64,
    pub frames_processed: AtomicU64,
    pub envelopes_emitted: AtomicU64,
    pub renderer_inits: AtomicU64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RuntimeStats {
    pub session_id: String,
    pub live: bool,
    pub replay_active: bool,
    pub frames_received: u64,
    pub frames_dropped: u64,
    pub frames_processed: u64,
    pub envelopes_emitted: u64,
    pub renderer_inits: u64,
    pub frames_stored: u64,
    pub outputs_stored: u64,
    pub outputs_dropped: u64,
    pub storage_failures: u64,
    pub queue_len: usize,
}

struct LiveIngest {
    queue: Arc<FrameQueue<Arc<Frame>>>,
    next_index: u64,
    render: Option<JoinHandle<()>>,
    storage: StorageWorker,
}

struct ReplayDriver {
    cursor: Arc<Mutex<ReplayCursor>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    /// Next frame a video run starts from.
    position: Arc<AtomicU64>,
}

impl ReplayDriver {
    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct SessionRuntime {
    pub session_id: String,
    manifest: Arc<SessionManifest>,
    outputs: broadcast::Sender<Broadcast>,
    live: tokio::sync::Mutex<Option<LiveIngest>>,
    pending_controls: Arc<Mutex<Vec<ControlCommand>>>,
    protocol: Arc<RwLock<ExperimentProtocol>>,
    replay: Mutex<Option<ReplayDriver>>,
    counters: Arc<RuntimeCounters>,
    storage_counters: Mutex<Option<Arc<crate::storage::StorageCounters>>>,
}

fn emit(tx: &broadcast::Sender<Broadcast>, counters: &RuntimeCounters, out: &FrameOutput) {
    for env in out.envelopes() {
        match env.encode() {
            Ok(bytes) => {
                counters.envelopes_emitted.fetch_add(1, Ordering::Relaxed);
                // no subscribers is fine
                let _ = tx.send(Arc::new(bytes));
            }
            Err(e) => log::error!("cannot encode output envelope: {e}"),
        }
    }
}

impl SessionRuntime {
    pub fn new(manifest: Arc<SessionManifest>, protocol: ExperimentProtocol) -> Self {
        let (outputs, _) = broadcast::channel(SUBSCRIBER_BUFFER);
        SessionRuntime {
            session_id: manifest.session_id.clone(),
            manifest,
            outputs,
            live: tokio::sync::Mutex::new(None),
            pending_controls: Arc::new(Mutex::new(Vec::new())),
            protocol: Arc::new(RwLock::new(protocol)),
            replay: Mutex::new(None),
            counters: Arc::new(RuntimeCounters::default()),
            storage_counters: Mutex::new(None),
        }
    }

    pub fn manifest(&self) -> &Arc<SessionManifest> {
        &self.manifest
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Broadcast> {
        self.outputs.subscribe()
    }

    pub fn protocol(&self) -> ExperimentProtocol {
        self.protocol.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set_protocol(&self, p: ExperimentProtocol) {
        *self.protocol.write().unwrap_or_else(|e| e.into_inner()) = p;
    }

    pub fn counters(&self) -> &RuntimeCounters {
        &self.counters
    }

    pub async fn stats(&self) -> RuntimeStats {
        let live = self.live.lock().await;
        let c = &self.counters;
        let sc = self.storage_counters.lock().unwrap_or_else(|e| e.into_inner()).clone();
        let sget = |f: fn(&crate::storage::StorageCounters) -> &AtomicU64| {
            sc.as_ref().map_or(0, |s| f(s).load(Ordering::Relaxed))
        };
        RuntimeStats {
            session_id: self.session_id.clone(),
            live: live.is_some(),
            replay_active: self.replay_active(),
            frames_received: c.frames_received.load(Ordering::Relaxed),
            frames_dropped: c.frames_dropped.load(Ordering::Relaxed),
            frames_processed: c.frames_processed.load(Ordering::Relaxed),
            envelopes_emitted: c.envelopes_emitted.load(Ordering::Relaxed),
            renderer_inits: c.renderer_inits.load(Ordering::Relaxed),
            frames_stored: sget(|s| &s.frames_stored),
            outputs_stored: sget(|s| &s.outputs_stored),
            outputs_dropped: sget(|s| &s.outputs_dropped),
            storage_failures: sget(|s| &s.failures),
            queue_len: live.as_ref().map_or(0, |l| l.queue.len()),
        }
    }

    fn replay_active(&self) -> bool {
        self.replay
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .as_ref()
            .is_some_and(|d| d.thread.as_ref().is_some_and(|t| !t.is_finished()))
    }

    /// Starts live ingest if it is not running. `handle` is the store's
    /// writer handle for this session.
    pub async fn start_live(&self, app: &Arc<AppState>, handle: SessionHandle) -> Result<(), PipelineError> {
        let mut live = self.live.lock().await;
        if live.is_some() {
            return Ok(());
        }
        let next_index = handle.frame_count();
        let mut processor = FrameProcessor::new(
            self.manifest.clone(),
            app.registry.clone(),
            app.config.asset_root.as_deref(),
        )?;
        self.counters.renderer_inits.fetch_add(1, Ordering::Relaxed);
        let storage = StorageWorker::spawn(app.storage.clone(), handle, app.storage_bound());
        *self.storage_counters.lock().unwrap_or_else(|e| e.into_inner()) = Some(storage.counters().clone());
        let queue = Arc::new(FrameQueue::<Arc<Frame>>::new(app.config.queue_bound));
        let sink = OutputSink::new(&storage);
        let (q, pending, protocol, tx, counters) = (
            queue.clone(),
            self.pending_controls.clone(),
            self.protocol.clone(),
            self.outputs.clone(),
            self.counters.clone(),
        );
        let render = std::thread::Builder::new()
            .name(format!("render-{}", self.session_id))
            .spawn(move || {
                while let Some(frame) = q.pop() {
                    let controls: Vec<ControlCommand> = std::mem::take(&mut *pending.lock().unwrap_or_else(|e| e.into_inner()));
                    for c in controls {
                        match processor.apply_control(&c) {
                            Ok(()) => sink.event(StateEvent {
                                frame_index: frame.index,
                                command: c,
                            }),
                            Err(e) => log::warn!("control rejected at frame {}: {e}", frame.index),
                        }
                    }
                    let proto = protocol.read().unwrap_or_else(|e| e.into_inner()).clone();
                    let out = processor.process(&frame, &proto);
                    counters.frames_processed.fetch_add(1, Ordering::Relaxed);
                    emit(&tx, &counters, &out);
                    sink.output(out);
                }
            })
            .expect("spawn render worker");
        *live = Some(LiveIngest {
            queue,
            next_index,
            render: Some(render),
            storage,
        });
        Ok(())
    }

    pub async fn is_live(&self) -> bool {
        self.live.lock().await.is_some()
    }

    /// Accepts a captured frame: enqueues it for rendering (dropping the
    /// oldest queued frame when full) and hands it to the storage worker.
    pub async fn ingest(&self, frame: Frame) -> Result<(), PipelineError> {
        let mut guard = self.live.lock().await;
        let live = guard
            .as_mut()
            .ok_or_else(|| PipelineError::InvalidControl("session is not receiving frames".into()))?;
        if frame.index != live.next_index {
            return Err(areval_core::store::StoreError::OutOfOrderFrame {
                expected: live.next_index,
                got: frame.index,
            }
            .into());
        }
        let (tw, th) = self.manifest.target_resolution;
        let (dw, dh) = self.manifest.depth_resolution;
        if (frame.rgb.width(), frame.rgb.height()) != (tw, th) || (frame.depth.width(), frame.depth.height()) != (dw, dh) {
            return Err(areval_core::store::StoreError::InvalidFrame(format!(
                "frame {} is {}x{} rgb / {}x{} depth, manifest says {tw}x{th} / {dw}x{dh}",
                frame.index,
                frame.rgb.width(),
                frame.rgb.height(),
                frame.depth.width(),
                frame.depth.height()
            ))
            .into());
        }
        let frame = Arc::new(frame);
        live.next_index += 1;
        self.counters.frames_received.fetch_add(1, Ordering::Relaxed);
        match live.queue.push(frame.clone()) {
            Ok(Some(old)) => {
                self.counters.frames_dropped.fetch_add(1, Ordering::Relaxed);
                log::debug!("live queue full; dropped frame {}", old.index);
            }
            Ok(None) => {}
            Err(_) => log::warn!("live queue closed; frame {} not rendered", frame.index),
        }
        if !live.storage.submit_frame(frame).await {
            log::error!("storage worker gone");
        }
        Ok(())
    }

    /// Stops live ingest after the rendering worker drained its queue and
    /// the storage worker wrote everything.
    pub async fn finish_live(&self) {
        let taken = self.live.lock().await.take();
        if let Some(mut live) = taken {
            live.queue.close();
            let render = live.render.take();
            let storage = live.storage;
            let _ = tokio::task::spawn_blocking(move || {
                if let Some(r) = render {
                    let _ = r.join();
                }
                storage.shutdown();
            })
            .await;
        }
    }

    /// Flushes queued storage jobs without stopping ingest.
    pub async fn flush_storage(&self) {
        if let Some(live) = self.live.lock().await.as_ref() {
            live.storage.flush().await;
        }
    }

    /// Validates a state command against the manifest. Live sessions apply
    /// it before the next processed frame; an open replay applies it to
    /// subsequent replayed frames.
    pub fn control(&self, cmd: ControlCommand) -> Result<(), PipelineError> {
        InteractiveState::default().apply(&cmd, &self.manifest)?;
        let replay = self.replay.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = replay.as_ref() {
            d.cursor.lock().unwrap_or_else(|e| e.into_inner()).add_control(cmd.clone())?;
        }
        drop(replay);
        self.pending_controls.lock().unwrap_or_else(|e| e.into_inner()).push(cmd);
        Ok(())
    }

    fn cursor(&self, app: &Arc<AppState>) -> Result<Arc<Mutex<ReplayCursor>>, PipelineError> {
        let mut replay = self.replay.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = replay.as_ref() {
            return Ok(d.cursor.clone());
        }
        let cursor = ReplayCursor::open(
            &app.store,
            &app.registry,
            &self.session_id,
            self.protocol(),
            app.config.asset_root.as_deref(),
        )?;
        self.counters.renderer_inits.fetch_add(1, Ordering::Relaxed);
        let d = ReplayDriver {
            cursor: Arc::new(Mutex::new(cursor)),
            stop: Arc::new(AtomicBool::new(false)),
            thread: None,
            position: Arc::new(AtomicU64::new(0)),
        };
        let c = d.cursor.clone();
        *replay = Some(d);
        Ok(c)
    }

    /// Frame-by-frame step: processes frame `index` and broadcasts it.
    pub fn seek(&self, app: &Arc<AppState>, index: u64) -> Result<FrameOutput, PipelineError> {
        self.stop_replay();
        let cursor = self.cursor(app)?;
        let out = cursor.lock().unwrap_or_else(|e| e.into_inner()).seek(index)?;
        if let Some(d) = self.replay.lock().unwrap_or_else(|e| e.into_inner()).as_ref() {
            d.position.store(index + 1, Ordering::SeqCst);
        }
        emit(&self.outputs, &self.counters, &out);
        Ok(out)
    }

    pub fn stop_replay(&self) {
        if let Some(d) = self.replay.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            d.halt();
        }
    }

    /// Switches replay mode. Video plays from the current position at `fps`
    /// in the background; frame-by-frame stops playback and waits for seeks.
    pub fn replay_mode(&self, app: &Arc<AppState>, mode: ReplayMode, fps: f64) -> Result<(), PipelineError> {
        self.stop_replay();
        if mode == ReplayMode::FrameByFrame {
            self.cursor(app)?;
            return Ok(());
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(PipelineError::InvalidControl(format!("fps must be > 0, got {fps}")));
        }
        let cursor = self.cursor(app)?;
        let mut replay = self.replay.lock().unwrap_or_else(|e| e.into_inner());
        let d = replay.as_mut().expect("cursor created above");
        d.stop.store(false, Ordering::SeqCst);
        let (stop, position, tx, counters) = (d.stop.clone(), d.position.clone(), self.outputs.clone(), self.counters.clone());
        d.thread = Some(std::thread::spawn(move || {
            let start = Instant::now();
            let first = position.load(Ordering::SeqCst);
            let mut n = 0u32;
            loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let index = first + n as u64;
                let due = start + Duration::from_secs_f64(n as f64 / fps);
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
                let mut c = cursor.lock().unwrap_or_else(|e| e.into_inner());
                if index >= c.frame_count() {
                    break;
                }
                match c.seek(index) {
                    Ok(out) => {
                        drop(c);
                        emit(&tx, &counters, &out);
                        position.store(index + 1, Ordering::SeqCst);
                    }
                    Err(e) => {
                        log::error!("replay stopped at frame {index}: {e}");
                        if let Ok(b) = Envelope::error(e.code(), e.to_string()).encode() {
                            let _ = tx.send(Arc::new(b));
                        }
                        break;
                    }
                }
                n += 1;
            }
        }));
        Ok(())
    }

    /// Runs a whole replay on the calling thread, broadcasting every output.
    pub fn run_replay(
        &self,
        app: &Arc<AppState>,
        protocol: &ExperimentProtocol,
        options: &areval_core::pipeline::ReplayOptions,
    ) -> Result<areval_core::pipeline::ReplaySummary, PipelineError> {
        self.counters.renderer_inits.fetch_add(1, Ordering::Relaxed);
        areval_core::pipeline::replay(
            &app.store,
            &app.registry,
            &self.session_id,
            protocol,
            options,
            app.config.asset_root.as_deref(),
            |out| {
                emit(&self.outputs, &self.counters, out);
                true
            },
        )
    }

    /// Drops the replay cursor so the next replay sees newly stored frames
    /// and the current protocol.
    pub fn reset_replay(&self) {
        let mut replay = self.replay.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = replay.as_mut() {
            d.halt();
        }
        *replay = None;
    }
}

impl Drop for SessionRuntime {
    fn drop(&mut self) {
        if let Some(d) = self.replay.get_mut().unwrap_or_else(|e| e.into_inner()).as_mut() {
            d.halt();
        }
    }
}

/// Storage backend handle type used by [`AppState`].
pub type SharedStorage = Arc<dyn StorageBackend>;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{validate_protocol, FrameOutput, FrameProcessor, InteractiveState, PipelineError, StateEvent};
use crate::gateway::{ModelRegistry, Prediction};
use crate::model::ExperimentProtocol;
use crate::store::{SessionStore, StoredResult};

/// Writes predictions, composites and metric rows of one processed frame.
pub fn persist_output(store: &SessionStore, out: &FrameOutput) -> Result<(), PipelineError> {
    let sid = &out.session_id;
    for (model_id, p) in &out.predictions {
        let r = match p {
            Prediction::Depth(d) => StoredResult::Depth(d.clone()),
            Prediction::Lighting(m) => StoredResult::EnvMap(m.clone()),
        };
        store.store_result(sid, model_id, out.frame_index, &r)?;
    }
    let mut rows: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for e in &out.entries {
        if let Some(png) = e.composite_png() {
            store.write_composite(sid, &e.model_id, e.task, out.frame_index, png)?;
        }
        rows.entry(e.model_id.as_str()).or_default().extend(e.metrics.iter());
    }
    for (model_id, rows) in rows {
        if !rows.is_empty() {
            store.append_metrics(sid, model_id, &rows)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// As fast as processing allows.
    Unpaced,
    /// Frame `i` is released no earlier than `start + i / fps`.
    Video { fps: f64 },
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub pacing: Pacing,
    pub persist: bool,
    /// Re-applies state changes recorded in `events.jsonl` at their frames.
    pub apply_recorded_events: bool,
    pub initial_state: Vec<crate::wire::ControlCommand>,
    pub first_frame: u64,
    pub last_frame: Option<u64>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            pacing: Pacing::Unpaced,
            persist: true,
            apply_recorded_events: true,
            initial_state: Vec::new(),
            first_frame: 0,
            last_frame: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplaySummary {
    pub frames: u64,
    pub composites: usize,
    pub errors: usize,
    pub elapsed: Duration,
}

impl ReplaySummary {
    pub fn fps(&self) -> f64 {
        let s = self.elapsed.as_secs_f64();
        if s > 0.0 {
            self.frames as f64 / s
        } else {
            f64::INFINITY
        }
    }
}

/// Frame-addressable replay of one stored session.
pub struct ReplayCursor {
    store: SessionStore,
    session_id: String,
    frame_count: u64,
    protocol: ExperimentProtocol,
    processor: FrameProcessor,
    events: Vec<StateEvent>,
    initial: Vec<crate::wire::ControlCommand>,
    apply_events: bool,
    persist: bool,
}

impl ReplayCursor {
    pub fn open(
        store: &SessionStore,
        registry: &ModelRegistry,
        session_id: &str,
        protocol: ExperimentProtocol,
        asset_root: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        validate_protocol(&protocol, registry)?;
        let manifest = store.load_manifest(session_id)?;
        let frame_count = store.frame_count(session_id)?;
        let events = store.read_events::<StateEvent>(session_id)?;
        let processor = FrameProcessor::new(manifest, registry.clone(), asset_root)?;
        Ok(ReplayCursor {
            store: store.clone(),
            session_id: session_id.to_string(),
            frame_count,
            protocol,
            processor,
            events,
            initial: Vec::new(),
            apply_events: true,
            persist: false,
        })
    }

    pub fn with_recorded_events(mut self, apply: bool) -> Self {
        self.apply_events = apply;
        self
    }

    pub fn with_persist(mut self, persist: bool) -> Self {
        self.persist = persist;
        self
    }

    /// Commands applied before any recorded event.
    pub fn with_initial_state(mut self, commands: Vec<crate::wire::ControlCommand>) -> Self {
        self.initial = commands;
        self
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Adds a viewer command on top of the recorded state; it holds for
    /// every frame processed afterwards.
    pub fn add_control(&mut self, cmd: crate::wire::ControlCommand) -> Result<(), PipelineError> {
        self.processor.apply_control(&cmd)?;
        self.initial.push(cmd);
        Ok(())
    }

    pub fn set_protocol(&mut self, protocol: ExperimentProtocol) -> Result<(), PipelineError> {
        validate_protocol(&protocol, self.processor.registry())?;
        self.protocol = protocol;
        Ok(())
    }

    pub fn processor_mut(&mut self) -> &mut FrameProcessor {
        &mut self.processor
    }

    pub fn state(&self) -> &InteractiveState {
        self.processor.state()
    }

    /// Rebuilds interactive state as it stood when frame `index` was
    /// processed: initial commands, then recorded events up to `index`.
    fn restore_state(&mut self, index: u64) -> Result<(), PipelineError> {
        self.processor.reset_state();
        for c in &self.initial {
            self.processor.apply_control(c)?;
        }
        if self.apply_events {
            for ev in self.events.iter().filter(|e| e.frame_index <= index) {
                if let Err(e) = self.processor.apply_control(&ev.command) {
                    log::warn!("recorded event at frame {} ignored: {e}", ev.frame_index);
                }
            }
        }
        Ok(())
    }

    /// Processes frame `index` with the state in force at that frame.
    pub fn seek(&mut self, index: u64) -> Result<FrameOutput, PipelineError> {
        if index >= self.frame_count {
            return Err(PipelineError::SeekOutOfRange {
                index,
                frame_count: self.frame_count,
            });
        }
        self.restore_state(index)?;
        self.process_loaded(index)
    }

    fn process_loaded(&mut self, index: u64) -> Result<FrameOutput, PipelineError> {
        let frame = Arc::new(self.store.load_frame(&self.session_id, index)?);
        let out = self.processor.process(&frame, &self.protocol);
        if self.persist {
            persist_output(&self.store, &out)?;
        }
        Ok(out)
    }
}

/// Replays a stored session through `protocol`, handing each frame's output
/// to `sink` in order. The sink returns `false` to stop early. With
/// persistence on, metric files of the protocol's models are rewritten from
/// scratch so repeated replays produce identical files.
pub fn replay(
    store: &SessionStore,
    registry: &ModelRegistry,
    session_id: &str,
    protocol: &ExperimentProtocol,
    options: &ReplayOptions,
    asset_root: Option<&Path>,
    mut sink: impl FnMut(&FrameOutput) -> bool,
) -> Result<ReplaySummary, PipelineError> {
    let mut cursor = ReplayCursor::open(store, registry, session_id, protocol.clone(), asset_root)?
        .with_recorded_events(options.apply_recorded_events)
        .with_persist(options.persist)
        .with_initial_state(options.initial_state.clone());
    if cursor.frame_count == 0 {
        return Err(PipelineError::EmptySession(session_id.to_string()));
    }
    let last = options.last_frame.unwrap_or(u64::MAX).min(cursor.frame_count - 1);
    if options.first_frame > last {
        return Err(PipelineError::SeekOutOfRange {
            index: options.first_frame,
            frame_count: cursor.frame_count,
        });
    }
    if options.persist {
        let mut models: Vec<&str> = protocol.entries.iter().map(|e| e.model_id.as_str()).collect();
        models.sort_unstable();
        models.dedup();
        for m in models {
            store.reset_metrics(session_id, m)?;
        }
    }
    let start = Instant::now();
    let mut summary = ReplaySummary {
        frames: 0,
        composites: 0,
        errors: 0,
        elapsed: Duration::ZERO,
    };
    cursor.restore_state(options.first_frame)?;
    for (n, index) in (options.first_frame..=last).enumerate() {
        if index > options.first_frame && cursor.apply_events {
            let due: Vec<_> = cursor
                .events
                .iter()
                .filter(|e| e.frame_index == index)
                .map(|e| e.command.clone())
                .collect();
            for c in due {
                if let Err(e) = cursor.processor.apply_control(&c) {
                    log::warn!("recorded event at frame {index} ignored: {e}");
                }
            }
        }
        if let Pacing::Video { fps } = options.pacing {
            let due = start + Duration::from_secs_f64(n as f64 / fps.max(1e-3));
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        let out = cursor.process_loaded(index)?;
        summary.frames += 1;
        summary.composites += out.entries.iter().filter(|e| e.composite_png().is_some()).count();
        summary.errors += out.entries.iter().filter(|e| e.is_error()).count();
        if !sink(&out) {
            break;
        }
    }
    summary.elapsed = start.elapsed();
    Ok(summary)
}

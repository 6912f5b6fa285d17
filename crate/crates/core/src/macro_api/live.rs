//! Backend for a real game window. OS input injection and screen capture are
//! supplied by the embedding program through [`InputSink`] and
//! [`ScreenCapture`]; this module only converts coordinates, paces input and
//! probes for crashes.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Child;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};

use super::{Backend, BackendEvent, CrashReport, InputContext, Key, MacroError, Primitive};
use crate::annotation::{Frame, FrameSource};

pub trait InputSink: Send {
    fn key_down(&mut self, key: Key) -> Result<(), String>;
    fn key_up(&mut self, key: Key) -> Result<(), String>;
    fn type_text(&mut self, text: &str) -> Result<(), String>;
    /// Left click at a pixel position inside the game window.
    fn click(&mut self, x: u32, y: u32) -> Result<(), String>;
}

pub trait ScreenCapture: Send {
    /// Encoded image of the game window.
    fn capture(&mut self) -> Result<Vec<u8>, String>;
}

/// Records what it was asked to do; useful for dry runs and tests.
#[derive(Debug, Default, Clone)]
pub struct RecordingSink {
    pub calls: Vec<String>,
}

impl InputSink for RecordingSink {
    fn key_down(&mut self, key: Key) -> Result<(), String> {
        self.calls.push(format!("down {key}"));
        Ok(())
    }
    fn key_up(&mut self, key: Key) -> Result<(), String> {
        self.calls.push(format!("up {key}"));
        Ok(())
    }
    fn type_text(&mut self, text: &str) -> Result<(), String> {
        self.calls.push(format!("type {text}"));
        Ok(())
    }
    fn click(&mut self, x: u32, y: u32) -> Result<(), String> {
        self.calls.push(format!("click {x} {y}"));
        Ok(())
    }
}

/// Detects a crash by the game process exiting with failure or by a new file
/// appearing in the crash-report directory.
pub struct CrashProbe {
    crash_dir: Option<PathBuf>,
    baseline: BTreeSet<String>,
    process: Option<Child>,
}

impl CrashProbe {
    pub fn new(crash_dir: Option<PathBuf>, process: Option<Child>) -> Self {
        let baseline = crash_dir.as_deref().map(list_dir).unwrap_or_default();
        Self { crash_dir, baseline, process }
    }

    pub fn check(&mut self, tick: u64) -> Option<CrashReport> {
        if let Some(dir) = &self.crash_dir {
            if let Some(new) = list_dir(dir).difference(&self.baseline).next() {
                let id = new.rsplit_once('.').map(|(stem, _)| stem).unwrap_or(new);
                return Some(CrashReport { crash_id: id.to_string(), tick });
            }
        }
        if let Some(child) = &mut self.process {
            if let Ok(Some(status)) = child.try_wait() {
                if !status.success() {
                    let code = status.code().map_or_else(|| "signal".to_string(), |c| c.to_string());
                    return Some(CrashReport { crash_id: format!("process-exit-{code}"), tick });
                }
            }
        }
        None
    }
}

fn list_dir(dir: &std::path::Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default()
}

pub struct LiveBackend {
    sink: Box<dyn InputSink>,
    capture: Box<dyn ScreenCapture>,
    probe: CrashProbe,
    width: u32,
    height: u32,
    started: Instant,
    started_at: DateTime<Utc>,
    sequence: u64,
    crashed: Option<CrashReport>,
    /// Real-time pause between primitives, letting the game catch up.
    pub settle: Duration,
    pub chat_key: Key,
}

impl LiveBackend {
    pub fn new(sink: Box<dyn InputSink>, capture: Box<dyn ScreenCapture>, probe: CrashProbe, width: u32, height: u32) -> Self {
        Self {
            sink,
            capture,
            probe,
            width,
            height,
            started: Instant::now(),
            started_at: Utc::now(),
            sequence: 0,
            crashed: None,
            settle: Duration::from_millis(100),
            chat_key: super::DEFAULT_CHAT_KEY,
        }
    }

    fn tick(&self) -> u64 {
        (self.started.elapsed().as_millis() / 50) as u64
    }

    /// Pixel under a normalized point, clamped to the window.
    pub fn to_pixels(&self, x: f64, y: f64) -> (u32, u32) {
        let px = (x * f64::from(self.width)).floor().clamp(0.0, f64::from(self.width.saturating_sub(1)));
        let py = (y * f64::from(self.height)).floor().clamp(0.0, f64::from(self.height.saturating_sub(1)));
        (px as u32, py as u32)
    }

    fn probe(&mut self) -> Vec<BackendEvent> {
        if self.crashed.is_none() {
            self.crashed = self.probe.check(self.tick());
            if let Some(c) = &self.crashed {
                return vec![BackendEvent::Crash { crash_id: c.crash_id.clone(), tick: c.tick }];
            }
        }
        Vec::new()
    }
}

impl Backend for LiveBackend {
    fn context(&self) -> InputContext {
        if self.crashed.is_some() {
            InputContext::Crashed
        } else {
            InputContext::Unknown
        }
    }

    fn ui_epoch(&self) -> u64 {
        // Any input may change the screen.
        self.sequence
    }

    fn apply(&mut self, input: &Primitive) -> Result<Vec<BackendEvent>, MacroError> {
        let err = |e: String| MacroError::BackendError(e);
        let detail = match input {
            Primitive::Press { keys, hold_seconds } => {
                for k in keys {
                    self.sink.key_down(*k).map_err(err)?;
                }
                if let Some(t) = hold_seconds {
                    std::thread::sleep(Duration::from_secs_f64(*t));
                }
                for k in keys.iter().rev() {
                    self.sink.key_up(*k).map_err(err)?;
                }
                format!("press {}", keys.iter().map(|k| k.name()).collect::<Vec<_>>().join("+"))
            }
            Primitive::Write { text } => {
                self.sink.type_text(text).map_err(err)?;
                format!("write {} chars", text.chars().count())
            }
            Primitive::Click { point } => {
                let (x, y) = self.to_pixels(point.x, point.y);
                self.sink.click(x, y).map_err(err)?;
                format!("click {x},{y}")
            }
        };
        self.sequence += 1;
        std::thread::sleep(self.settle);
        let mut events = vec![BackendEvent::Input { detail }];
        events.extend(self.probe());
        Ok(events)
    }

    fn idle(&mut self, ticks: u64) -> Vec<BackendEvent> {
        std::thread::sleep(Duration::from_millis(ticks * 50));
        self.probe()
    }

    fn now(&self) -> DateTime<Utc> {
        self.started_at + chrono::Duration::from_std(self.started.elapsed()).unwrap_or_default()
    }

    fn observe(&mut self) -> Frame {
        self.sequence += 1;
        let image = match self.capture.capture() {
            Ok(bytes) => bytes,
            Err(e) => {
                tracing::warn!("screen capture failed: {e}");
                Vec::new()
            }
        };
        Frame { source: FrameSource::Live, image: Some(image), sim_elements: None, captured_at: self.now(), sequence: self.sequence }
    }

    fn crash(&self) -> Option<CrashReport> {
        self.crashed.clone()
    }

    fn chat_key(&self) -> Key {
        self.chat_key
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    struct Shared(Arc<Mutex<RecordingSink>>);
    impl InputSink for Shared {
        fn key_down(&mut self, key: Key) -> Result<(), String> {
            self.0.lock().unwrap().key_down(key)
        }
        fn key_up(&mut self, key: Key) -> Result<(), String> {
            self.0.lock().unwrap().key_up(key)
        }
        fn type_text(&mut self, text: &str) -> Result<(), String> {
            self.0.lock().unwrap().type_text(text)
        }
        fn click(&mut self, x: u32, y: u32) -> Result<(), String> {
            self.0.lock().unwrap().click(x, y)
        }
    }

    struct Blank;
    impl ScreenCapture for Blank {
        fn capture(&mut self) -> Result<Vec<u8>, String> {
            Ok(vec![0u8; 4])
        }
    }

    #[test]
    fn inputs_reach_the_sink_in_order() {
        let sink = Arc::new(Mutex::new(RecordingSink::default()));
        let mut b = LiveBackend::new(Box::new(Shared(sink.clone())), Box::new(Blank), CrashProbe::new(None, None), 1000, 500);
        b.settle = Duration::ZERO;
        b.apply(&Primitive::Press { keys: vec![Key::Shift, Key::W], hold_seconds: None }).unwrap();
        b.apply(&Primitive::Click { point: crate::annotation::Point::new(0.505, 0.09) }).unwrap();
        b.apply(&Primitive::Click { point: crate::annotation::Point::new(1.0, 1.0) }).unwrap();
        assert_eq!(sink.lock().unwrap().calls, vec!["down shift", "down w", "up w", "up shift", "click 505 45", "click 999 499"]);
        assert_eq!(b.observe().source, FrameSource::Live);
    }

    #[test]
    fn new_crash_report_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("old.txt"), "").unwrap();
        let mut probe = CrashProbe::new(Some(dir.path().to_path_buf()), None);
        assert_eq!(probe.check(1), None);
        std::fs::write(dir.path().join("crash-2024-01-01_00.00.00-client.txt"), "").unwrap();
        assert_eq!(probe.check(2).unwrap().crash_id, "crash-2024-01-01_00.00.00-client");
    }
}

//! Gesture kernels and state machines over timestamped controller events.
//!
//! Everything here is a pure fold: [`GestureEngine::process`] consumes a
//! merged, validated event stream and returns the commands it produces, and
//! [`format_commands`] renders them in the golden-file text form.
//!
//! Button map: right trackpad translates (or grabs a committed selection
//! volume when pressed inside one), left trackpad rotates, both trackpads
//! scale, right trigger selects, left menu opens the carousel and left
//! lateral advances it.

use std::fmt::Write as _;

use nalgebra::{Quaternion, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Vec3};
use crate::spatialquery::SelectionVolume;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InteractionError {
    #[error("controller position coincides with the rotation center")]
    CoincidentWithCenter,
    #[error("velocity needs at least two samples at distinct times")]
    InsufficientSamples,
    #[error("the carousel has no items")]
    EmptyCarousel,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp does not increase for {device:?}")]
    NonMonotonicTime { line: usize, device: Device },
    #[error("line {line}: {kind:?} of {device:?} {button:?} breaks press/release alternation")]
    PairingViolation {
        line: usize,
        device: Device,
        button: Button,
        kind: EventKind,
    },
}

pub type Result<T, E = InteractionError> = std::result::Result<T, E>;

const QUATERNION_TOL: f64 = 1e-9;
/// Slack for timing comparisons against thresholds.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point3,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn at(position: Point3) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Pointing direction: the controller's local −Z.
    pub fn forward(&self) -> Vec3 {
        self.orientation * -Vec3::z()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Left,
    Right,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Press,
    Release,
    Move,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Button {
    Trigger,
    Trackpad,
    Menu,
    Lateral,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub timestamp: f64,
    pub device: Device,
    pub kind: EventKind,
    pub button: Button,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GestureCommand {
    Translate { t: f64, delta: Vec3 },
    TranslateSlide { t: f64, velocity: Vec3 },
    StopSlide { t: f64 },
    Rotate { t: f64, rotation: UnitQuaternion<f64> },
    Scale { t: f64, factor: f64 },
    SelectSingle { t: f64, origin: Point3, direction: Vec3 },
    BeginVolume { t: f64, anchor: Point3 },
    UpdateVolume { t: f64, corner: Point3 },
    CommitVolume { t: f64 },
    DeleteVolume { t: f64, linear: Vec3, angular: Vec3 },
    CarouselNext { t: f64, front: usize, item: String },
    CarouselSelect { t: f64, item: String },
}

// ---------------------------------------------------------------------------
// Kernels

/// Rotation about `c` carrying the direction of `p0` onto that of `p1`.
pub fn arcball_rotation(p0: &Point3, p1: &Point3, c: &Point3) -> Result<UnitQuaternion<f64>> {
    let (a, b) = (p0 - c, p1 - c);
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(InteractionError::CoincidentWithCenter);
    }
    let (v0, v1) = (a.normalize(), b.normalize());
    let cross = v0.cross(&v1);
    let theta = cross.norm().atan2(v0.dot(&v1));
    if theta == 0.0 {
        return Ok(UnitQuaternion::identity());
    }
    let axis = if cross.norm() > 1e-12 {
        cross.normalize()
    } else if v0.dot(&v1) > 0.0 {
        return Ok(UnitQuaternion::identity());
    } else {
        // antiparallel: first of x̂, ŷ not parallel to v0
        let e = if v0.cross(&Vec3::x()).norm() > 1e-12 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        e.cross(&v0).normalize()
    };
    Ok(UnitQuaternion::from_axis_angle(&Unit::new_unchecked(axis), theta))
}

/// Least-squares slope of position against time over the last `window`
/// samples.
pub fn estimate_velocity(samples: &[(f64, Point3)], window: usize) -> Result<Vec3> {
    let recent = &samples[samples.len().saturating_sub(window.max(2))..];
    if recent.len() < 2 {
        return Err(InteractionError::InsufficientSamples);
    }
    let n = recent.len() as f64;
    let t_mean = recent.iter().map(|s| s.0).sum::<f64>() / n;
    let p_mean = recent.iter().map(|s| s.1.coords).sum::<Vec3>() / n;
    let mut stt = 0.0;
    let mut stp = Vec3::zeros();
    for (t, p) in recent {
        let dt = t - t_mean;
        stt += dt * dt;
        stp += (p.coords - p_mean) * dt;
    }
    if stt <= 0.0 {
        return Err(InteractionError::InsufficientSamples);
    }
    Ok(stp / stt)
}

/// Angular velocity from the first and last orientation of a window.
pub fn angular_velocity(samples: &[(f64, UnitQuaternion<f64>)]) -> Vec3 {
    match (samples.first(), samples.last()) {
        (Some(a), Some(b)) if b.0 > a.0 => (b.1 * a.1.inverse()).scaled_axis() / (b.0 - a.0),
        _ => Vec3::zeros(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarouselState {
    items: Vec<String>,
    front: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarouselAction {
    Next,
    Select,
}

impl CarouselState {
    pub fn new(items: Vec<String>) -> Result<Self> {
        if items.is_empty() {
            return Err(InteractionError::EmptyCarousel);
        }
        Ok(Self { items, front: 0 })
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn front(&self) -> usize {
        self.front
    }

    pub fn front_item(&self) -> &str {
        &self.items[self.front]
    }
}

/// One carousel action; `Select` returns the front item.
pub fn carousel_step(state: &CarouselState, action: CarouselAction) -> Result<(CarouselState, Option<String>)> {
    if state.items.is_empty() {
        return Err(InteractionError::EmptyCarousel);
    }
    Ok(match action {
        CarouselAction::Next => (
            CarouselState {
                items: state.items.clone(),
                front: (state.front + 1) % state.items.len(),
            },
            None,
        ),
        CarouselAction::Select => (state.clone(), Some(state.front_item().to_string())),
    })
}

/// Despawn kinematics of a thrown volume: `p + v·t`.
pub fn thrown_position(p: &Point3, velocity: &Vec3, t: f64) -> Point3 {
    p + velocity * t
}

// ---------------------------------------------------------------------------
// Trace files

fn parse_token<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| InteractionError::Parse {
        line,
        message: format!("bad {what} '{tok}'"),
    })
}

fn parse_device(tok: &str, line: usize) -> Result<Device> {
    match tok {
        "left" => Ok(Device::Left),
        "right" => Ok(Device::Right),
        "head" => Ok(Device::Head),
        _ => Err(InteractionError::Parse {
            line,
            message: format!("bad device '{tok}'"),
        }),
    }
}

fn parse_kind(tok: &str, line: usize) -> Result<EventKind> {
    match tok {
        "press" => Ok(EventKind::Press),
        "release" => Ok(EventKind::Release),
        "move" => Ok(EventKind::Move),
        _ => Err(InteractionError::Parse {
            line,
            message: format!("bad kind '{tok}'"),
        }),
    }
}

fn parse_button(tok: &str, line: usize) -> Result<Button> {
    match tok {
        "trigger" => Ok(Button::Trigger),
        "trackpad" => Ok(Button::Trackpad),
        "menu" => Ok(Button::Menu),
        "lateral" => Ok(Button::Lateral),
        "none" => Ok(Button::None),
        _ => Err(InteractionError::Parse {
            line,
            message: format!("bad button '{tok}'"),
        }),
    }
}

/// Parses a trace (`t device kind button x y z qw qx qy qz` per line, `#`
/// comments), validates it and merges the device streams by timestamp.
pub fn parse_trace(text: &str) -> Result<Vec<ControllerEvent>> {
    let mut events = Vec::new();
    let mut last_time: [Option<f64>; 3] = [None; 3];
    let mut held = std::collections::BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tok: Vec<&str> = content.split_whitespace().collect();
        if tok.len() != 11 {
            return Err(InteractionError::Parse {
                line,
                message: format!("expected 11 fields, found {}", tok.len()),
            });
        }
        let timestamp: f64 = parse_token(tok[0], line, "timestamp")?;
        let device = parse_device(tok[1], line)?;
        let kind = parse_kind(tok[2], line)?;
        let button = parse_button(tok[3], line)?;
        let mut nums = [0.0f64; 7];
        for (slot, t) in nums.iter_mut().zip(&tok[4..]) {
            *slot = parse_token(t, line, "number")?;
        }
        if !timestamp.is_finite() || nums.iter().any(|v| !v.is_finite()) {
            return Err(InteractionError::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        let q = Quaternion::new(nums[3], nums[4], nums[5], nums[6]);
        if (q.norm() - 1.0).abs() > QUATERNION_TOL {
            return Err(InteractionError::Parse {
                line,
                message: format!("orientation norm {} is not 1", q.norm()),
            });
        }
        let slot = &mut last_time[device as usize];
        if slot.is_some_and(|prev| timestamp <= prev) {
            return Err(InteractionError::NonMonotonicTime { line, device });
        }
        *slot = Some(timestamp);
        let button_ok = match kind {
            EventKind::Move => button == Button::None,
            _ => button != Button::None && device != Device::Head,
        };
        if !button_ok {
            return Err(InteractionError::Parse {
                line,
                message: format!("{kind:?} with button {button:?} on {device:?}"),
            });
        }
        let paired = match kind {
            EventKind::Press => held.insert((device, button)),
            EventKind::Release => held.remove(&(device, button)),
            EventKind::Move => true,
        };
        if !paired {
            return Err(InteractionError::PairingViolation {
                line,
                device,
                button,
                kind,
            });
        }
        events.push(ControllerEvent {
            timestamp,
            device,
            kind,
            button,
            pose: Pose {
                position: Point3::new(nums[0], nums[1], nums[2]),
                orientation: UnitQuaternion::from_quaternion(q),
            },
        });
    }
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(events)
}

fn f6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s.chars().all(|c| matches!(c, '-' | '0' | '.')) {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn v6(v: &[f64]) -> String {
    v.iter().map(|x| f6(*x)).collect::<Vec<_>>().join(" ")
}

/// Golden-file text form, one command per line.
pub fn format_commands(cmds: &[GestureCommand]) -> String {
    let mut out = String::new();
    for c in cmds {
        let line = match c {
            GestureCommand::Translate { t, delta } => format!("TRANSLATE {} {}", f6(*t), v6(delta.as_slice())),
            GestureCommand::TranslateSlide { t, velocity } => {
                format!("TRANSLATE_SLIDE {} {}", f6(*t), v6(velocity.as_slice()))
            }
            GestureCommand::StopSlide { t } => format!("STOP_SLIDE {}", f6(*t)),
            GestureCommand::Rotate { t, rotation } => {
                let q = rotation.quaternion();
                format!("ROTATE {} {}", f6(*t), v6(&[q.w, q.i, q.j, q.k]))
            }
            GestureCommand::Scale { t, factor } => format!("SCALE {} {}", f6(*t), f6(*factor)),
            GestureCommand::SelectSingle { t, origin, direction } => format!(
                "SELECT_SINGLE {} {} {}",
                f6(*t),
                v6(origin.coords.as_slice()),
                v6(direction.as_slice())
            ),
            GestureCommand::BeginVolume { t, anchor } => {
                format!("BEGIN_VOLUME {} {}", f6(*t), v6(anchor.coords.as_slice()))
            }
            GestureCommand::UpdateVolume { t, corner } => {
                format!("UPDATE_VOLUME {} {}", f6(*t), v6(corner.coords.as_slice()))
            }
            GestureCommand::CommitVolume { t } => format!("COMMIT_VOLUME {}", f6(*t)),
            GestureCommand::DeleteVolume { t, linear, angular } => format!(
                "DELETE_VOLUME {} {} {}",
                f6(*t),
                v6(linear.as_slice()),
                v6(angular.as_slice())
            ),
            GestureCommand::CarouselNext { t, front, item } => {
                format!("CAROUSEL_NEXT {} {front} {item}", f6(*t))
            }
            GestureCommand::CarouselSelect { t, item } => format!("CAROUSEL_SELECT {} {item}", f6(*t)),
        };
        let _ = writeln!(out, "{line}");
    }
    out
}

// ---------------------------------------------------------------------------
// Engine

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureConfig {
    /// Translation slide threshold (m/s).
    pub v_slide: f64,
    /// Throw-away threshold (m/s).
    pub v_throw: f64,
    /// Press duration separating single from group selection (s).
    pub t_single: f64,
    /// Rotation slide threshold (rad/s).
    pub omega_slide: f64,
    /// Samples in the velocity fit.
    pub window: usize,
    /// Time after a translate press over which the slide decision is made (s).
    pub slide_decision: f64,
    /// Minimum controller separation for a scale gesture (m).
    pub min_scale_distance: f64,
    pub center: Point3,
    pub carousel_items: Vec<String>,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            v_slide: 0.4,
            v_throw: 1.5,
            t_single: 0.3,
            omega_slide: 1.0,
            window: 5,
            slide_decision: 0.1,
            min_scale_distance: 0.01,
            center: Point3::origin(),
            carousel_items: ["realizations", "threshold", "clusters", "seed"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
struct TranslateState {
    t0: f64,
    samples: Vec<(f64, Point3)>,
    decided: bool,
    slide: Option<(f64, Vec3)>,
}

#[derive(Debug, Clone)]
struct GrabState {
    volume: usize,
    samples: Vec<(f64, Pose)>,
}

#[derive(Debug, Clone)]
enum TriggerState {
    Pending { t0: f64, anchor: Point3 },
    Growing { anchor: Point3, corner: Point3 },
    Carousel,
}

/// Single-hand gesture on a trackpad.
#[derive(Debug, Clone)]
enum PadState {
    Translate(TranslateState),
    Grab(GrabState),
    Rotate(Vec<(f64, Point3)>),
    /// Held after a bimanual scale ended; ignored until released.
    Locked,
}

#[derive(Debug, Clone)]
pub struct GestureEngine {
    config: GestureConfig,
    center: Point3,
    poses: [Option<Pose>; 3],
    left_pad: Option<PadState>,
    right_pad: Option<PadState>,
    scale: Option<Option<f64>>,
    rotation_slide: Option<(f64, Vec3)>,
    trigger: Option<TriggerState>,
    carousel: CarouselState,
    carousel_open: bool,
    volumes: Vec<SelectionVolume>,
}

impl GestureEngine {
    pub fn new(config: GestureConfig) -> Result<Self> {
        let carousel = CarouselState::new(config.carousel_items.clone())?;
        Ok(Self {
            center: config.center,
            config,
            poses: [None; 3],
            left_pad: None,
            right_pad: None,
            scale: None,
            rotation_slide: None,
            trigger: None,
            carousel,
            carousel_open: false,
            volumes: Vec::new(),
        })
    }

    /// Model center, moved by translations.
    pub fn center(&self) -> Point3 {
        self.center
    }

    /// Committed selection volumes that have not been thrown away.
    pub fn volumes(&self) -> &[SelectionVolume] {
        &self.volumes
    }

    pub fn carousel(&self) -> &CarouselState {
        &self.carousel
    }

    pub fn process(&mut self, events: &[ControllerEvent]) -> Vec<GestureCommand> {
        let mut out = Vec::new();
        for e in events {
            self.step(e, &mut out);
        }
        out
    }

    fn step(&mut self, e: &ControllerEvent, out: &mut Vec<GestureCommand>) {
        let t = e.timestamp;
        if let Some((last, omega)) = self.rotation_slide {
            if t > last {
                out.push(GestureCommand::Rotate {
                    t,
                    rotation: UnitQuaternion::from_scaled_axis(omega * (t - last)),
                });
                self.rotation_slide = Some((t, omega));
            }
            if e.device == Device::Left && e.kind == EventKind::Press {
                out.push(GestureCommand::StopSlide { t });
                self.rotation_slide = None;
            }
        }
        if let Some(TriggerState::Pending { t0, anchor }) = self.trigger {
            if t >= t0 + self.config.t_single - TIME_EPS {
                out.push(GestureCommand::BeginVolume { t, anchor });
                self.trigger = Some(TriggerState::Growing { anchor, corner: anchor });
            }
        }
        self.poses[e.device as usize] = Some(e.pose);

        match (e.device, e.kind, e.button) {
            (Device::Head, ..) => {}
            (_, EventKind::Move, _) => self.on_move(e, out),
            (d, EventKind::Press, Button::Trackpad) => self.pad_press(d, e, out),
            (d, EventKind::Release, Button::Trackpad) => self.pad_release(d, e, out),
            (Device::Right, EventKind::Press, Button::Trigger) => {
                if self.carousel_open {
                    out.push(GestureCommand::CarouselSelect {
                        t,
                        item: self.carousel.front_item().to_string(),
                    });
                    self.trigger = Some(TriggerState::Carousel);
                } else {
                    self.trigger = Some(TriggerState::Pending {
                        t0: t,
                        anchor: e.pose.position,
                    });
                }
            }
            (Device::Right, EventKind::Release, Button::Trigger) => match self.trigger.take() {
                Some(TriggerState::Pending { .. }) => out.push(GestureCommand::SelectSingle {
                    t,
                    origin: e.pose.position,
                    direction: e.pose.forward(),
                }),
                Some(TriggerState::Growing { anchor, corner }) => {
                    let free = e.pose.position;
                    if free != corner {
                        out.push(GestureCommand::UpdateVolume { t, corner: free });
                    }
                    out.push(GestureCommand::CommitVolume { t });
                    self.volumes.push(SelectionVolume::new(anchor, free));
                }
                _ => {}
            },
            (Device::Left, EventKind::Press, Button::Menu) => {
                self.carousel_open = !self.carousel_open;
            }
            (Device::Left, EventKind::Press, Button::Lateral) if self.carousel_open => {
                let front = (self.carousel.front + 1) % self.carousel.items.len();
                self.carousel.front = front;
                out.push(GestureCommand::CarouselNext {
                    t,
                    front,
                    item: self.carousel.front_item().to_string(),
                });
            }
            _ => {}
        }
    }

    fn pad(&mut self, d: Device) -> &mut Option<PadState> {
        if d == Device::Left {
            &mut self.left_pad
        } else {
            &mut self.right_pad
        }
    }

    fn controller_distance(&self) -> Option<f64> {
        let l = self.poses[Device::Left as usize]?;
        let r = self.poses[Device::Right as usize]?;
        Some((l.position - r.position).norm())
    }

    fn on_move(&mut self, e: &ControllerEvent, out: &mut Vec<GestureCommand>) {
        let t = e.timestamp;
        if let Some(Some(d0)) = self.scale {
            if let Some(d) = self.controller_distance() {
                out.push(GestureCommand::Scale { t, factor: d / d0 });
            }
            return;
        }
        match e.device {
            Device::Right => {
                if let Some(TriggerState::Growing { corner, .. }) = &mut self.trigger {
                    *corner = e.pose.position;
                    out.push(GestureCommand::UpdateVolume {
                        t,
                        corner: e.pose.position,
                    });
                }
                match &mut self.right_pad {
                    Some(PadState::Translate(_)) => self.translate_sample(e, false, out),
                    Some(PadState::Grab(g)) => g.samples.push((t, e.pose)),
                    _ => {}
                }
            }
            Device::Left => {
                if let Some(PadState::Rotate(samples)) = &mut self.left_pad {
                    samples.push((t, e.pose.position));
                }
            }
            Device::Head => {}
        }
    }

    fn translate_sample(&mut self, e: &ControllerEvent, release: bool, out: &mut Vec<GestureCommand>) {
        let cfg = &self.config;
        let Some(PadState::Translate(tr)) = &mut self.right_pad else {
            return;
        };
        let t = e.timestamp;
        let p = e.pose.position;
        if tr.decided {
            if tr.slide.is_none() {
                let last = tr.samples.last().map_or(p, |s| s.1);
                tr.samples.push((t, p));
                let delta = p - last;
                if delta.norm() > 0.0 {
                    self.center += delta;
                    out.push(GestureCommand::Translate { t, delta });
                }
            }
            return;
        }
        let deadline = tr.t0 + cfg.slide_decision;
        if t <= deadline + TIME_EPS {
            tr.samples.push((t, p));
        }
        if t < deadline - TIME_EPS && !release {
            return;
        }
        tr.decided = true;
        let velocity = estimate_velocity(&tr.samples, cfg.window).unwrap_or_else(|_| Vec3::zeros());
        if velocity.norm() > cfg.v_slide {
            tr.slide = Some((t, velocity));
            out.push(GestureCommand::TranslateSlide { t, velocity });
            return;
        }
        if t > deadline + TIME_EPS {
            tr.samples.push((t, p));
        }
        for w in tr.samples.windows(2) {
            let delta = w[1].1 - w[0].1;
            if delta.norm() > 0.0 {
                self.center += delta;
                out.push(GestureCommand::Translate { t: w[1].0, delta });
            }
        }
    }

    fn end_translate(&mut self, tr: TranslateState, t: f64, out: &mut Vec<GestureCommand>) {
        if let Some((t_start, v)) = tr.slide {
            self.center += v * (t - t_start);
            out.push(GestureCommand::StopSlide { t });
        }
    }

    fn pad_press(&mut self, d: Device, e: &ControllerEvent, out: &mut Vec<GestureCommand>) {
        let t = e.timestamp;
        let other = if d == Device::Left { Device::Right } else { Device::Left };
        let other_active = matches!(
            self.pad(other),
            Some(PadState::Translate(_) | PadState::Grab(_) | PadState::Rotate(_))
        );
        if other_active {
            if let Some(PadState::Translate(tr)) = self.pad(other).take() {
                self.end_translate(tr, t, out);
            }
            *self.pad(other) = None;
            let d0 = self
                .controller_distance()
                .filter(|&d0| d0 > self.config.min_scale_distance);
            self.scale = Some(d0);
            return;
        }
        let state = match d {
            Device::Right => {
                let p = e.pose.position;
                match self.volumes.iter().rposition(|v| v.contains(&p)) {
                    Some(volume) => PadState::Grab(GrabState {
                        volume,
                        samples: vec![(t, e.pose)],
                    }),
                    None => PadState::Translate(TranslateState {
                        t0: t,
                        samples: vec![(t, p)],
                        decided: false,
                        slide: None,
                    }),
                }
            }
            _ => PadState::Rotate(vec![(t, e.pose.position)]),
        };
        *self.pad(d) = Some(state);
    }

    fn pad_release(&mut self, d: Device, e: &ControllerEvent, out: &mut Vec<GestureCommand>) {
        let t = e.timestamp;
        if self.scale.take().is_some() {
            let other = if d == Device::Left { Device::Right } else { Device::Left };
            *self.pad(other) = Some(PadState::Locked);
            *self.pad(d) = None;
            return;
        }
        if matches!(self.pad(d), Some(PadState::Translate(_))) {
            self.translate_sample(e, true, out);
        }
        if let Some(PadState::Grab(g)) = self.pad(d) {
            g.samples.push((t, e.pose));
        }
        match self.pad(d).take() {
            Some(PadState::Translate(tr)) => self.end_translate(tr, t, out),
            Some(PadState::Grab(g)) => self.release_grab(g, t, out),
            Some(PadState::Rotate(mut samples)) => {
                samples.push((t, e.pose.position));
                self.release_rotate(&samples, t, out);
            }
            _ => {}
        }
    }

    fn release_grab(&mut self, g: GrabState, t: f64, out: &mut Vec<GestureCommand>) {
        let w = self.config.window;
        let recent = &g.samples[g.samples.len().saturating_sub(w)..];
        let positions: Vec<(f64, Point3)> = recent.iter().map(|(t, p)| (*t, p.position)).collect();
        let linear = estimate_velocity(&positions, w).unwrap_or_else(|_| Vec3::zeros());
        if linear.norm() > self.config.v_throw {
            let orientations: Vec<_> = recent.iter().map(|(t, p)| (*t, p.orientation)).collect();
            out.push(GestureCommand::DeleteVolume {
                t,
                linear,
                angular: angular_velocity(&orientations),
            });
            self.volumes.remove(g.volume);
        }
    }

    fn release_rotate(&mut self, samples: &[(f64, Point3)], t: f64, out: &mut Vec<GestureCommand>) {
        let c = self.center;
        let (p0, p1) = (samples[0].1, samples[samples.len() - 1].1);
        let Ok(rotation) = arcball_rotation(&p0, &p1, &c) else {
            return;
        };
        out.push(GestureCommand::Rotate { t, rotation });
        let recent = &samples[samples.len().saturating_sub(self.config.window)..];
        let (first, last) = (recent[0], recent[recent.len() - 1]);
        if last.0 <= first.0 {
            return;
        }
        if let Ok(q) = arcball_rotation(&first.1, &last.1, &c) {
            let omega = q.scaled_axis() / (last.0 - first.0);
            if omega.norm() > self.config.omega_slide {
                self.rotation_slide = Some((t, omega));
            }
        }
    }
}

/// Parses a trace, folds it through a fresh engine and renders the commands.
pub fn replay_trace(text: &str, config: &GestureConfig) -> Result<String> {
    let events = parse_trace(text)?;
    let mut engine = GestureEngine::new(config.clone())?;
    Ok(format_commands(&engine.process(&events)))
}

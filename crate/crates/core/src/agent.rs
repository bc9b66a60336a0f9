//! The composed online pilot. Per frame:
//! selector → greedy main object → naive action → regressor → new angle.
//! Each step sees only the current observation and the carried state.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PilotError, Result};
use crate::geometry::{apply_action, ViewingAngle};
use crate::model::PilotModel;
use crate::observation::{EpisodeReader, FrameObservation, StreamItem};
use crate::regressor::{naive_action, RegressorState};
use crate::selector::{select_greedy, SelectorState};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub selector: SelectorState,
    pub regressor: RegressorState,
    /// `l_{t-1}`
    pub current_angle: ViewingAngle,
}

impl AgentState {
    /// Zero recurrent states, looking at `init`.
    pub fn new(model: &PilotModel, init: ViewingAngle) -> Self {
        AgentState {
            selector: SelectorState::zeros(model.arch.hidden_selector),
            regressor: RegressorState::zeros(model.arch.hidden_regressor),
            current_angle: init,
        }
    }
}

/// Test and ablation hooks for a single step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepOptions {
    /// Use this slot instead of the selector's greedy choice.
    pub force_index: Option<usize>,
    /// Emit the naive action directly (`Δ = Δ̂`), skipping the regressor.
    pub bypass_regressor: bool,
}

pub fn pilot_step(
    obs: &FrameObservation,
    state: &AgentState,
    model: &PilotModel,
) -> Result<(ViewingAngle, usize, AgentState)> {
    pilot_step_with(obs, state, model, StepOptions::default())
}

pub fn pilot_step_with(
    obs: &FrameObservation,
    state: &AgentState,
    model: &PilotModel,
    opts: StepOptions,
) -> Result<(ViewingAngle, usize, AgentState)> {
    let (sel_state, dist) = model.selector.forward(obs, &state.selector)?;
    let index = match opts.force_index {
        Some(i) if i >= obs.dims().n => {
            return Err(PilotError::invalid(format!("forced index {i} out of range")))
        }
        Some(i) => i,
        None => select_greedy(&dist),
    };
    let target = obs.object(index);
    let naive = naive_action(target.position, state.current_angle);
    let (reg_state, action) = if opts.bypass_regressor {
        (state.regressor.clone(), naive)
    } else {
        model.regressor.forward(&target.motion, naive, &state.regressor)?
    };
    let angle = apply_action(state.current_angle, action);
    Ok((
        angle,
        index,
        AgentState {
            selector: sel_state,
            regressor: reg_state,
            current_angle: angle,
        },
    ))
}

/// Pilots a sequence of frames from `init`. Returns the trajectory and the
/// selected slot per frame.
pub fn pilot_episode(
    frames: &[FrameObservation],
    model: &PilotModel,
    init: ViewingAngle,
) -> Result<(Vec<ViewingAngle>, Vec<usize>)> {
    pilot_episode_with(frames, model, init, |_| StepOptions::default())
}

pub fn pilot_episode_with(
    frames: &[FrameObservation],
    model: &PilotModel,
    init: ViewingAngle,
    options: impl Fn(usize) -> StepOptions,
) -> Result<(Vec<ViewingAngle>, Vec<usize>)> {
    if frames.is_empty() {
        return Err(PilotError::invalid("cannot pilot an empty episode"));
    }
    let mut state = AgentState::new(model, init);
    let mut traj = Vec::with_capacity(frames.len());
    let mut picks = Vec::with_capacity(frames.len());
    for (t, obs) in frames.iter().enumerate() {
        let (angle, index, next) = pilot_step_with(obs, &state, model, options(t))?;
        traj.push(angle);
        picks.push(index);
        state = next;
    }
    Ok((traj, picks))
}

// ---------------------------------------------------------------------------
// Trajectory files
// ---------------------------------------------------------------------------

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub format_version: u32,
    /// Identifier (content hash) of the checkpoint that produced the file.
    pub checkpoint: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub frame_index: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub selected_object_index: usize,
}

pub fn write_trajectory_header<W: Write>(out: &mut W, header: &TrajectoryHeader) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, header)?;
    out.write_all(b"\n")
}

pub fn write_trajectory_record<W: Write>(out: &mut W, rec: &TrajectoryRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, rec)?;
    out.write_all(b"\n")
}

/// Counts reported by [`pilot_stream`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StreamSummary {
    pub episodes: usize,
    pub frames: usize,
}

/// Pilots every episode of an episode stream, writing a trajectory file as
/// it goes. Only one frame and the agent state are held at a time, so memory
/// does not grow with episode length. Each episode starts from its first
/// ground-truth angle.
///
/// `input_name` and `output_name` label I/O errors.
pub fn pilot_stream<R: BufRead, W: Write>(
    input: R,
    model: &PilotModel,
    checkpoint_id: &str,
    out: &mut W,
    input_name: &Path,
    output_name: &Path,
) -> Result<StreamSummary> {
    let wio = |e| PilotError::io(output_name, e);
    write_trajectory_header(
        out,
        &TrajectoryHeader {
            format_version: TRAJECTORY_FORMAT_VERSION,
            checkpoint: checkpoint_id.to_string(),
        },
    )
    .map_err(wio)?;
    let mut reader = EpisodeReader::new(input);
    let mut summary = StreamSummary::default();
    let mut state: Option<AgentState> = None;
    let mut frame_index = 0;
    loop {
        let item = reader.next_item().map_err(|e| match e {
            PilotError::Parse { line, message } => PilotError::Parse {
                line,
                message: format!("{}: {message}", input_name.display()),
            },
            other => other,
        })?;
        match item {
            None => break,
            Some(StreamItem::Header(h)) => {
                model.arch.check_obs(h.dims())?;
                summary.episodes += 1;
                state = None;
                frame_index = 0;
            }
            Some(StreamItem::Frame(entry)) => {
                let current = state.get_or_insert_with(|| AgentState::new(model, entry.gt));
                let (angle, index, next) = pilot_step(&entry.frame, current, model)?;
                *current = next;
                write_trajectory_record(
                    out,
                    &TrajectoryRecord {
                        episode: summary.episodes - 1,
                        frame_index,
                        azimuth: angle.azimuth(),
                        elevation: angle.elevation(),
                        selected_object_index: index,
                    },
                )
                .map_err(wio)?;
                frame_index += 1;
                summary.frames += 1;
            }
        }
    }
    out.flush().map_err(wio)?;
    Ok(summary)
}

/// One piloted episode: the trajectory and the selected slot per frame.
pub type PilotedEpisode = (Vec<ViewingAngle>, Vec<usize>);

/// Reads a trajectory file into per-episode `(trajectory, selections)`.
pub fn read_trajectories<R: BufRead>(input: R) -> Result<(TrajectoryHeader, Vec<PilotedEpisode>)> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, message: String| PilotError::Parse { line, message };
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing trajectory header".into()))?;
    let first = first.map_err(|e| parse_err(1, e.to_string()))?;
    let header: TrajectoryHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format_version != TRAJECTORY_FORMAT_VERSION {
        return Err(PilotError::Version {
            found: header.format_version,
            expected: TRAJECTORY_FORMAT_VERSION,
        });
    }
    let mut out: Vec<(Vec<ViewingAngle>, Vec<usize>)> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
        let rec: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        if rec.episode == out.len() {
            out.push((Vec::new(), Vec::new()));
        }
        if rec.episode + 1 != out.len() {
            return Err(parse_err(i + 1, format!("out-of-order episode {}", rec.episode)));
        }
        let entry = out.last_mut().expect("episode entry exists");
        if rec.frame_index != entry.0.len() {
            return Err(parse_err(i + 1, format!("out-of-order frame {}", rec.frame_index)));
        }
        entry.0.push(ViewingAngle::new(rec.azimuth, rec.elevation));
        entry.1.push(rec.selected_object_index);
    }
    Ok((header, out))
}

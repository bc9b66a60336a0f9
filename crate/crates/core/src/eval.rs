//! Metrics (mean overlap, mean velocity difference), baseline pilots, the
//! offline dynamic-programming path optimizer, benchmark tables and the
//! sensitivity sweep over the number of candidate slots.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{pilot_episode, pilot_episode_with, StepOptions};
use crate::error::{PilotError, Result};
use crate::geometry::{angular_distance, angular_offset, nfov_iou, NFoV, ViewingAngle};
use crate::model::{Architecture, PilotModel};
use crate::observation::Episode;
use crate::training::{reward, train, TrainConfig, DEFAULT_ETA};

/// Mean per-frame IoU of default-span NFoVs centered on `pred` and `gt`.
pub fn mean_overlap(pred: &[ViewingAngle], gt: &[ViewingAngle]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(PilotError::invalid(format!(
            "trajectory lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(PilotError::invalid("mean overlap of an empty trajectory"));
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sum += nfov_iou(&NFoV::new(*p), &NFoV::new(*g))?;
    }
    Ok(sum / pred.len() as f64)
}

/// Mean of `||v_t - v_{t-1}||` over `t = 3..T` (degrees per frame), where
/// `v_t` is the wrap-aware offset from frame `t-1` to `t`.
pub fn mean_velocity_difference(pred: &[ViewingAngle]) -> Result<f64> {
    if pred.len() < 3 {
        return Err(PilotError::invalid(format!(
            "velocity difference needs at least 3 frames, got {}",
            pred.len()
        )));
    }
    let v: Vec<_> = pred.windows(2).map(|w| angular_offset(w[0], w[1])).collect();
    let sum: f64 = v.windows(2).map(|w| w[1].sub(&w[0]).norm()).sum();
    Ok(sum / (v.len() - 1) as f64)
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Holds the initial viewing angle for the whole episode.
pub fn center_hold(ep: &Episode) -> Vec<ViewingAngle> {
    vec![ep.init_angle(); ep.len()]
}

/// Looks at the highest-score detection of every frame.
pub fn greedy_salient(ep: &Episode) -> Vec<ViewingAngle> {
    // slot 0 holds the top-score object
    ep.frames().iter().map(|f| f.object(0).position).collect()
}

/// Greedy selector with the regressor bypassed: jumps straight to the
/// chosen object's position each frame.
pub fn selector_only(ep: &Episode, model: &PilotModel) -> Result<Vec<ViewingAngle>> {
    model.arch.check_obs(ep.dims())?;
    let opts = StepOptions {
        force_index: None,
        bypass_regressor: true,
    };
    Ok(pilot_episode_with(ep.frames(), model, ep.init_angle(), |_| opts)?.0)
}

pub fn full_agent(ep: &Episode, model: &PilotModel) -> Result<Vec<ViewingAngle>> {
    model.arch.check_obs(ep.dims())?;
    Ok(pilot_episode(ep.frames(), model, ep.init_angle())?.0)
}

pub fn gt_replay(ep: &Episode) -> Vec<ViewingAngle> {
    ep.gt().to_vec()
}

/// Grid and smoothness weight of the offline path optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    /// Cell size in degrees (azimuth and elevation).
    pub cell: f64,
    /// Penalty per degree moved between consecutive frames.
    pub smooth_weight: f64,
    pub eta: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            cell: 30.0,
            smooth_weight: 1.0,
            eta: DEFAULT_ETA,
        }
    }
}

impl DpConfig {
    /// Cell centers, azimuth-major.
    pub fn grid(&self) -> Result<Vec<ViewingAngle>> {
        if !(self.cell > 0.0 && self.cell <= 180.0) {
            return Err(PilotError::Config(format!("dp cell size {} must be in (0, 180]", self.cell)));
        }
        if !(self.smooth_weight >= 0.0) || !(self.eta > 0.0) {
            return Err(PilotError::Config("dp smooth_weight must be >= 0 and eta > 0".into()));
        }
        let n_az = (360.0 / self.cell).round().max(1.0) as usize;
        let n_el = (180.0 / self.cell).round().max(1.0) as usize;
        let (da, de) = (360.0 / n_az as f64, 180.0 / n_el as f64);
        let mut cells = Vec::with_capacity(n_az * n_el);
        for a in 0..n_az {
            for e in 0..n_el {
                cells.push(ViewingAngle::new(a as f64 * da, -90.0 + (e as f64 + 0.5) * de));
            }
        }
        Ok(cells)
    }
}

/// Maximizes `sum_t unary[t][c_t] - sum_{t>0} pair[c_{t-1}][c_t]`. Among
/// optimal paths the lexicographically smallest is returned, with its value.
pub fn dp_optimal_path(unary: &[Vec<f64>], pair: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let c = check_dp(unary, pair)?;
    let t_len = unary.len();
    // value-to-go from each cell at each frame
    let mut togo = vec![vec![0.0; c]; t_len];
    togo[t_len - 1].clone_from(&unary[t_len - 1]);
    for t in (0..t_len - 1).rev() {
        for i in 0..c {
            let best = (0..c)
                .map(|j| togo[t + 1][j] - pair[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            togo[t][i] = unary[t][i] + best;
        }
    }
    let mut path = Vec::with_capacity(t_len);
    let mut cur = argmax_first((0..c).map(|i| togo[0][i]));
    path.push(cur);
    for row in &togo[1..] {
        cur = argmax_first((0..c).map(|j| row[j] - pair[cur][j]));
        path.push(cur);
    }
    let value = path_value(unary, pair, &path);
    Ok((path, value))
}

/// Exhaustive enumeration in lexicographic order; keeps the first optimum.
pub fn brute_force_path(unary: &[Vec<f64>], pair: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let c = check_dp(unary, pair)?;
    let t_len = unary.len();
    let total = c.checked_pow(t_len as u32).filter(|&n| n <= 10_000_000);
    let Some(total) = total else {
        return Err(PilotError::invalid("instance too large to enumerate"));
    };
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut path = vec![0usize; t_len];
    for code in 0..total {
        let mut r = code;
        for t in (0..t_len).rev() {
            path[t] = r % c;
            r /= c;
        }
        let v = path_value(unary, pair, &path);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((path.clone(), v));
        }
    }
    Ok(best.expect("at least one path"))
}

pub fn path_value(unary: &[Vec<f64>], pair: &[Vec<f64>], path: &[usize]) -> f64 {
    let mut v = 0.0;
    for (t, &c) in path.iter().enumerate() {
        v += unary[t][c];
        if t > 0 {
            v -= pair[path[t - 1]][c];
        }
    }
    v
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn check_dp(unary: &[Vec<f64>], pair: &[Vec<f64>]) -> Result<usize> {
    let c = unary.first().map(|u| u.len()).unwrap_or(0);
    if c == 0 {
        return Err(PilotError::invalid("dp needs at least one frame and one cell"));
    }
    if unary.iter().any(|u| u.len() != c) || pair.len() != c || pair.iter().any(|p| p.len() != c) {
        return Err(PilotError::invalid("dp unary/pairwise shapes disagree"));
    }
    if unary.iter().flatten().chain(pair.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(PilotError::invalid("dp values must be finite"));
    }
    Ok(c)
}

/// Unary and pairwise tables of the offline path problem over `cells`:
/// unary = score times reward of the cell against the nearest real
/// detection, pairwise = weight times angular distance between cells.
pub fn dp_problem(
    frames: &[crate::observation::FrameObservation],
    cells: &[ViewingAngle],
    cfg: &DpConfig,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let unary = frames
        .iter()
        .map(|f| {
            let real: Vec<_> = f.objects().iter().filter(|o| o.score > 0.0).collect();
            cells
                .iter()
                .map(|&cell| {
                    let nearest = real.iter().min_by(|a, b| {
                        angular_distance(cell, a.position).total_cmp(&angular_distance(cell, b.position))
                    });
                    nearest.map_or(0.0, |o| o.score * reward(cell, o.position, cfg.eta))
                })
                .collect()
        })
        .collect();
    let pair = cells
        .iter()
        .map(|&a| cells.iter().map(|&b| cfg.smooth_weight * angular_distance(a, b)).collect())
        .collect();
    (unary, pair)
}

/// Offline view-path optimizer over the configured grid (see
/// [`dp_problem`]). Consumes the whole episode, so it is not an online
/// method.
pub fn offline_dp(ep: &Episode, cfg: &DpConfig) -> Result<Vec<ViewingAngle>> {
    let cells = cfg.grid()?;
    let (unary, pair) = dp_problem(ep.frames(), &cells, cfg);
    let (path, _) = dp_optimal_path(&unary, &pair)?;
    Ok(path.into_iter().map(|c| cells[c]).collect())
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Agent,
    SelectorOnly,
    CenterHold,
    GreedySalient,
    OfflineDp,
    GtReplay,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Agent,
        Method::SelectorOnly,
        Method::CenterHold,
        Method::GreedySalient,
        Method::OfflineDp,
        Method::GtReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Agent => "agent",
            Method::SelectorOnly => "selector_only",
            Method::CenterHold => "center_hold",
            Method::GreedySalient => "greedy_salient",
            Method::OfflineDp => "offline_dp",
            Method::GtReplay => "gt_replay",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::Agent | Method::SelectorOnly)
    }

    pub fn valid_names() -> String {
        Method::ALL.map(Method::name).join(", ")
    }

    pub fn run(self, ep: &Episode, model: Option<&PilotModel>, dp: &DpConfig) -> Result<Vec<ViewingAngle>> {
        let need = || model.ok_or_else(|| PilotError::Config(format!("method {} needs a checkpoint", self.name())));
        match self {
            Method::Agent => full_agent(ep, need()?),
            Method::SelectorOnly => selector_only(ep, need()?),
            Method::CenterHold => Ok(center_hold(ep)),
            Method::GreedySalient => Ok(greedy_salient(ep)),
            Method::OfflineDp => offline_dp(ep, dp),
            Method::GtReplay => Ok(gt_replay(ep)),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PilotError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| PilotError::invalid(format!("unknown method '{s}'; valid methods: {}", Method::valid_names())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub mo: f64,
    /// Degrees per frame.
    pub mvd: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub method: String,
    pub episode: usize,
    pub mo: f64,
    pub mvd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub rows: Vec<BenchmarkRow>,
    pub per_episode: Vec<EpisodeScore>,
    pub notes: Vec<String>,
}

impl Benchmark {
    pub fn row(&self, method: Method) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method.name())
    }

    /// Plain-text rendering of the table.
    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(16);
        let mut s = format!("{:<w$} {:>8} {:>10} {:>9}\n", "method", "MO", "MVD(deg/f)", "episodes");
        for r in &self.rows {
            s.push_str(&format!("{:<w$} {:>8.4} {:>10.4} {:>9}\n", r.method, r.mo, r.mvd, r.episodes));
        }
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}

/// MO and MVD of one trajectory against its episode's ground truth.
pub fn score_trajectory(pred: &[ViewingAngle], gt: &[ViewingAngle]) -> Result<(f64, f64)> {
    Ok((mean_overlap(pred, gt)?, mean_velocity_difference(pred)?))
}

/// Aggregates per-episode scores into one row per method (episode means).
pub fn aggregate(methods: &[String], per_episode: Vec<EpisodeScore>) -> Benchmark {
    let rows = methods
        .iter()
        .map(|m| {
            let scores: Vec<_> = per_episode.iter().filter(|s| &s.method == m).collect();
            let n = scores.len().max(1) as f64;
            BenchmarkRow {
                method: m.clone(),
                mo: scores.iter().map(|s| s.mo).sum::<f64>() / n,
                mvd: scores.iter().map(|s| s.mvd).sum::<f64>() / n,
                episodes: scores.len(),
            }
        })
        .collect();
    Benchmark {
        rows,
        per_episode,
        notes: vec!["MVD is in degrees per frame".into()],
    }
}

/// Scores every method on every episode. Episodes are spread over `jobs`
/// worker threads; results are collected in episode order, so the output
/// does not depend on `jobs`.
pub fn benchmark(
    methods: &[Method],
    episodes: &[Episode],
    model: Option<&PilotModel>,
    dp: &DpConfig,
    jobs: usize,
) -> Result<Benchmark> {
    if episodes.is_empty() {
        return Err(PilotError::invalid("benchmark needs at least one episode"));
    }
    if methods.is_empty() {
        return Err(PilotError::invalid("benchmark needs at least one method"));
    }
    let score_one = |(i, ep): (usize, &Episode)| -> Result<Vec<EpisodeScore>> {
        methods
            .iter()
            .map(|&m| {
                let (mo, mvd) = score_trajectory(&m.run(ep, model, dp)?, ep.gt())?;
                Ok(EpisodeScore {
                    method: m.name().to_string(),
                    episode: i,
                    mo,
                    mvd,
                })
            })
            .collect()
    };
    let per: Vec<Result<Vec<EpisodeScore>>> = if jobs <= 1 {
        episodes.iter().enumerate().map(score_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| PilotError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| episodes.par_iter().enumerate().map(score_one).collect())
    };
    let mut flat = Vec::with_capacity(episodes.len() * methods.len());
    for r in per {
        flat.extend(r?);
    }
    let names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let mut bench = aggregate(&names, flat);
    if methods.contains(&Method::OfflineDp) {
        bench.notes.push(format!(
            "offline_dp is a whole-episode dynamic-programming analog of an offline autocam method \
             ({}-degree grid, smoothness weight {}), not an online pilot",
            dp.cell, dp.smooth_weight
        ));
    }
    Ok(bench)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub n: usize,
    pub mo: f64,
    pub mvd: f64,
}

/// Largest minus smallest MO across the sweep.
pub fn mo_spread(rows: &[SensitivityRow]) -> f64 {
    let max = rows.iter().map(|r| r.mo).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.mo).fold(f64::INFINITY, f64::min);
    if rows.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Trains and evaluates one agent per slot count `n`, on the same data and
/// seeds, re-slotting every episode to `n` candidates.
pub fn sensitivity_sweep(
    train_set: &[Episode],
    test_set: &[Episode],
    n_values: &[usize],
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<Vec<SensitivityRow>> {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(PilotError::invalid("sensitivity sweep needs slot counts >= 1"));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let reslot = |eps: &[Episode]| eps.iter().map(|e| e.with_slots(n)).collect::<Result<Vec<_>>>();
        let (tr, te) = (reslot(train_set)?, reslot(test_set)?);
        let arch_n = Architecture { n, ..arch };
        let trained = train(&tr, arch_n, cfg, None, None)?;
        let bench = benchmark(&[Method::Agent], &te, Some(&trained.model), &DpConfig::default(), 1)?;
        let row = &bench.rows[0];
        rows.push(SensitivityRow {
            n,
            mo: row.mo,
            mvd: row.mvd,
        });
    }
    Ok(rows)
}

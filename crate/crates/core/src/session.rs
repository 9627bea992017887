//! The optimization session: safe seeding, propose/measure/refit steps,
//! convergence, final scan, journaling and persistence.

use serde::{Deserialize, Serialize};

use crate::acquisition::{
    apply_weights, fit_models, propose_next, reference_point, AcquisitionConfig, Proposal, SearchContext,
    SteeringState,
};
use crate::error::{Error, Result};
use crate::gp::{GpFitConfig, GpModel, GpSnapshot};
use crate::params::{ControlParams, ParameterGrid};
use crate::pareto::{hypervolume_any, non_dominated, ParetoFront, ReferencePoint};
use crate::problem::{Problem, SyntheticProblem};
use crate::rewards::{evaluate_rewards, RewardConfig, RewardName, RewardVector};
use crate::rng::derive_seed;
use crate::seeding::{
    default_drive_samples, measure_thresholds, sample_indices, SafetyBoundary, DEFAULT_DRIVE_SAMPLES,
    DEFAULT_SAFETY_MARGIN,
};
use crate::sim::{full_scan, scan_line, CantileverModel, SampleProfile, ScanImage, ScanLinePair, DEFAULT_PIXELS};

pub const SCHEMA_VERSION: u32 = 1;
/// Simulated time for one trace/retrace pair, seconds.
pub const LINE_PERIOD_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Consecutive active steps that must all fall below the tolerance.
    pub window: usize,
    /// Relative fixed-reference hypervolume gain; 0 disables the check.
    pub tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window: 5,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub problem: Problem,
    pub grid: ParameterGrid,
    pub model: CantileverModel,
    pub rewards: RewardConfig,
    pub include_similarity: bool,
    pub pixels_per_line: usize,
    pub final_scan_lines: usize,
    pub drive_samples: usize,
    pub safety_margin: f64,
    pub gp: GpFitConfig,
    pub acquisition: AcquisitionConfig,
    pub n_seeds: usize,
    pub max_steps: usize,
    pub convergence: ConvergenceConfig,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            problem: Problem::default(),
            grid: ParameterGrid::spm_default(),
            model: CantileverModel::default(),
            rewards: RewardConfig {
                distance_log_floor: Some(std::f64::consts::E),
                ..RewardConfig::default()
            },
            include_similarity: false,
            pixels_per_line: DEFAULT_PIXELS,
            final_scan_lines: 64,
            drive_samples: DEFAULT_DRIVE_SAMPLES,
            safety_margin: DEFAULT_SAFETY_MARGIN,
            gp: GpFitConfig::default(),
            acquisition: AcquisitionConfig::default(),
            n_seeds: 10,
            max_steps: 50,
            convergence: ConvergenceConfig::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    /// A two-parameter session on one of the closed-form problems.
    pub fn synthetic(problem: SyntheticProblem) -> Self {
        Self {
            problem: Problem::Synthetic { problem },
            grid: ParameterGrid::unit_square(101),
            acquisition: AcquisitionConfig::for_objectives(2, 0.2),
            max_steps: 20,
            ..Self::default()
        }
    }

    pub fn reward_names(&self) -> Vec<String> {
        match self.problem {
            Problem::Microscope { .. } => RewardName::canonical(self.include_similarity)
                .iter()
                .map(|n| n.as_str().to_string())
                .collect(),
            Problem::Synthetic { problem } => problem.reward_names(),
        }
    }

    pub fn n_objectives(&self) -> usize {
        self.reward_names().len()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let dim = match self.problem {
            Problem::Microscope { .. } => 3,
            Problem::Synthetic { .. } => 2,
        };
        if self.grid.dim() != dim {
            return Err(Error::InvalidConfig(format!(
                "this problem needs a {dim}-axis grid, got {}",
                self.grid.dim()
            )));
        }
        if let Problem::Synthetic { .. } = self.problem {
            for a in &self.grid.axes {
                if a.min < 0.0 || a.max > 1.0 {
                    return Err(Error::InvalidAxis {
                        axis: a.name.clone(),
                        reason: "must lie within [0, 1]".into(),
                    });
                }
            }
        }
        self.model.validate()?;
        self.rewards.validate()?;
        self.gp.validate()?;
        self.acquisition.validate(self.n_objectives())?;
        if self.n_seeds < 2 {
            return Err(Error::InvalidConfig("n_seeds must be at least 2".into()));
        }
        if self.pixels_per_line < 2 || self.final_scan_lines < 1 {
            return Err(Error::InvalidConfig("scan sizes too small".into()));
        }
        if self.drive_samples < 2 {
            return Err(Error::InvalidConfig("drive_samples must be at least 2".into()));
        }
        if !(self.safety_margin >= 0.0 && self.safety_margin < 1.0) {
            return Err(Error::InvalidConfig("safety_margin must lie in [0, 1)".into()));
        }
        if self.convergence.window < 1 || !(self.convergence.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("convergence window must be >= 1 and tolerance >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Seeding,
    Active,
    Converged,
    MaxSteps,
    Finalized,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Seeding => "seeding",
            Self::Active => "active",
            Self::Converged => "converged",
            Self::MaxSteps => "max-steps",
            Self::Finalized => "finalized",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Seed,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub iteration: usize,
    pub kind: ObservationKind,
    pub grid_index: usize,
    pub params: Vec<f64>,
    /// Raw, unweighted rewards.
    pub rewards: RewardVector,
    /// Running minimum height (nm) used for the distance reward.
    #[serde(default)]
    pub global_min_height: Option<f64>,
    /// y position (nm) of each scan line in the batch.
    #[serde(default)]
    pub line_positions: Vec<f64>,
    /// Simulated instrument time at the end of the acquisition, seconds.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalLog {
    pub seed: u64,
    pub weights: Vec<f64>,
    pub reference: ReferencePoint,
    pub chosen_index: usize,
    pub score: f64,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub observation: Observation,
    #[serde(default)]
    pub proposal: Option<ProposalLog>,
    #[serde(default)]
    pub scan: Option<Vec<ScanLinePair>>,
    pub hv_current_ref: f64,
    #[serde(default)]
    pub hv_fixed_ref: Option<f64>,
    /// Observation indices on the front after this acquisition.
    pub front: Vec<usize>,
}

/// One append-only journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalRecord {
    Created { schema_version: u32, config: SessionConfig },
    Seed(ObservationRecord),
    Step(ObservationRecord),
    Steering { steering: SteeringState, proposal: Option<Proposal> },
    Finalized {
        grid_index: usize,
        params: Vec<f64>,
        score: f64,
        predicted_rewards: Vec<f64>,
    },
}

impl JournalRecord {
    pub fn observation(&self) -> Option<&ObservationRecord> {
        match self {
            Self::Seed(r) | Self::Step(r) => Some(r),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Created { .. } => "created",
            Self::Seed(_) => "seed",
            Self::Step(_) => "step",
            Self::Steering { .. } => "steering",
            Self::Finalized { .. } => "finalized",
        }
    }
}

/// Serializes records as JSON lines.
pub fn journal_to_jsonl(records: &[JournalRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<JournalRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("journal line {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HvHistory {
    /// Per observation, under the reference in force when it was acquired.
    pub current_ref: Vec<f64>,
    /// Per observation, under the reference frozen at the end of seeding.
    pub fixed_ref: Vec<f64>,
    pub fixed_reference: Option<ReferencePoint>,
    pub current_reference: Option<ReferencePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    /// Reward weights the models were fitted under.
    pub weights: Vec<f64>,
    pub models: Vec<GpSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngInfo {
    pub master_seed: u64,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScan {
    pub grid_index: usize,
    pub params: Vec<f64>,
    pub score: f64,
    pub predicted_rewards: Vec<f64>,
    pub image: Option<ScanImage>,
}

/// Outcome of a steering change: the optimum to try next and what the
/// models expect there (raw reward units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringOutcome {
    pub proposal: Proposal,
    pub predicted_rewards: Vec<f64>,
}

/// GP means and variances on a 2-D slice of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSlice {
    pub reward: String,
    pub axis_names: [String; 2],
    pub axis_values: [Vec<f64>; 2],
    /// Value of the remaining axis, snapped to the grid, if there is one.
    pub fixed_value: Option<f64>,
    /// Row-major, first axis slowest.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub config: SessionConfig,
    pub status: Status,
    pub boundary: Option<SafetyBoundary>,
    pub observations: Vec<Observation>,
    pub global_min_height: Option<f64>,
    pub models: Option<ModelSet>,
    pub pareto_front: ParetoFront,
    pub hv_history: HvHistory,
    pub steering: SteeringState,
    pub rng: RngInfo,
    pub final_scan: Option<FinalScan>,
    pub journal: Vec<JournalRecord>,
    #[serde(skip)]
    safe: Vec<usize>,
    #[serde(skip)]
    fitted: Vec<GpModel>,
}

const REQUIRED_SECTIONS: [&str; 13] = [
    "schema_version",
    "config",
    "status",
    "boundary",
    "observations",
    "global_min_height",
    "models",
    "pareto_front",
    "hv_history",
    "steering",
    "rng",
    "final_scan",
    "journal",
];

/// Callback invoked after each journal append.
pub type Hook<'a> = &'a mut dyn FnMut(&SessionState, &JournalRecord);

impl SessionState {
    /// Builds the safety boundary and admissible grid; no measurements yet.
    pub fn create(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let k = config.n_objectives();
        let mut s = Self {
            schema_version: SCHEMA_VERSION,
            steering: SteeringState::neutral(k),
            rng: RngInfo {
                master_seed: config.seed,
                scheme: "splitmix64-derived chacha8".into(),
            },
            status: Status::Seeding,
            boundary: None,
            observations: Vec::new(),
            global_min_height: None,
            models: None,
            pareto_front: ParetoFront::default(),
            hv_history: HvHistory::default(),
            final_scan: None,
            journal: Vec::new(),
            safe: Vec::new(),
            fitted: Vec::new(),
            config,
        };
        s.build_mask()?;
        s.journal.push(JournalRecord::Created {
            schema_version: SCHEMA_VERSION,
            config: s.config.clone(),
        });
        Ok(s)
    }

    fn build_mask(&mut self) -> Result<()> {
        let cfg = &self.config;
        match cfg.problem {
            Problem::Microscope { .. } => {
                let drives = default_drive_samples(&cfg.grid, cfg.drive_samples);
                let boundary = measure_thresholds(&cfg.model, &drives, cfg.safety_margin)?;
                self.safe = boundary.safe_indices(&cfg.grid);
                self.boundary = Some(boundary);
            }
            Problem::Synthetic { .. } => {
                self.safe = (0..cfg.grid.len()).collect();
                self.boundary = None;
            }
        }
        if self.safe.len() < cfg.n_seeds {
            return Err(Error::Infeasible(format!(
                "{} admissible grid points for {} seeds",
                self.safe.len(),
                cfg.n_seeds
            )));
        }
        Ok(())
    }

    /// Sorted flat indices of admissible grid points.
    pub fn safe_indices(&self) -> &[usize] {
        &self.safe
    }

    pub fn n_objectives(&self) -> usize {
        self.config.n_objectives()
    }

    pub fn active_steps(&self) -> usize {
        self.observations.iter().filter(|o| o.kind == ObservationKind::Step).count()
    }

    pub fn raw_rewards(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.rewards.values.clone()).collect()
    }

    fn observed_x(&self) -> Vec<Vec<f64>> {
        self.observations
            .iter()
            .map(|o| self.config.grid.normalize_unchecked(&o.params))
            .collect()
    }

    fn observed_index(&self) -> Vec<usize> {
        self.observations.iter().map(|o| o.grid_index).collect()
    }

    fn fit_config(&self) -> GpFitConfig {
        GpFitConfig {
            seed: derive_seed(self.config.seed, "gp", self.config.gp.seed),
            ..self.config.gp.clone()
        }
    }

    /// Seed for the proposal that would produce observation `n`.
    fn acquisition_seed(&self, n: usize) -> u64 {
        derive_seed(
            derive_seed(self.config.seed, "acquire", self.config.acquisition.seed),
            "proposal",
            n as u64,
        )
    }

    /// Grid indices of the seed points, in acquisition order.
    pub fn seed_indices(&self) -> Result<Vec<usize>> {
        sample_indices(&self.safe, self.config.n_seeds, derive_seed(self.config.seed, "seeding", 0))
    }

    fn check_status(&self, op: &'static str, allowed: &[Status]) -> Result<()> {
        if allowed.contains(&self.status) {
            Ok(())
        } else {
            Err(Error::InvalidState {
                op,
                status: self.status.to_string(),
            })
        }
    }

    /// Scans or evaluates grid point `index` as observation number
    /// `observations.len()`.
    fn measure(&self, index: usize) -> Result<(RewardVector, Option<Vec<ScanLinePair>>, Option<f64>, Vec<f64>, f64)> {
        let cfg = &self.config;
        let point = cfg.grid.point(index);
        let n = self.observations.len();
        match cfg.problem {
            Problem::Microscope { sample } => {
                let profile = SampleProfile::from_preset(sample);
                let p = ControlParams::from_slice(&point)?;
                let lines = cfg.rewards.n_lines_avg;
                let first = n * lines;
                let rows = cfg.pixels_per_line;
                let mut batch = Vec::with_capacity(lines);
                let mut ys = Vec::with_capacity(lines);
                for j in 0..lines {
                    let counter = first + j;
                    let y = ((counter % rows) as f64 + 0.5) * profile.extent.1 / rows as f64;
                    let seed = derive_seed(cfg.seed, "scan-line", counter as u64);
                    batch.push(scan_line(&profile, &p, y, &cfg.model, cfg.pixels_per_line, seed)?);
                    ys.push(y);
                }
                let batch_min = batch.iter().map(ScanLinePair::min_height).fold(f64::INFINITY, f64::min);
                let gmin = self.global_min_height.map_or(batch_min, |g| g.min(batch_min));
                let rewards = evaluate_rewards(&batch, gmin, &cfg.rewards, cfg.include_similarity)?;
                let t = (first + lines) as f64 * LINE_PERIOD_S;
                Ok((rewards, Some(batch), Some(gmin), ys, t))
            }
            Problem::Synthetic { problem } => {
                let values = problem.evaluate(&point)?;
                let rewards = RewardVector {
                    values,
                    names: problem.reward_names(),
                };
                Ok((rewards, None, None, Vec::new(), (n + 1) as f64))
            }
        }
    }

    fn refit(&mut self) -> Result<()> {
        let scaled = apply_weights(&self.raw_rewards(), &self.steering.weights)?;
        let models = fit_models(&self.observed_x(), &scaled, &self.fit_config())?;
        self.models = Some(ModelSet {
            weights: self.steering.weights.clone(),
            models: models.iter().map(GpModel::snapshot).collect(),
        });
        self.fitted = models;
        Ok(())
    }

    /// Makes the cached models match the stored snapshots, refitting when
    /// steering weights changed since the last fit.
    fn ensure_models(&mut self) -> Result<()> {
        let Some(set) = &self.models else {
            return Err(Error::InvalidState {
                op: "models",
                status: self.status.to_string(),
            });
        };
        if set.weights != self.steering.weights {
            return self.refit();
        }
        if self.fitted.len() != set.models.len() {
            let scaled = apply_weights(&self.raw_rewards(), &set.weights)?;
            let x = self.observed_x();
            self.fitted = set
                .models
                .iter()
                .enumerate()
                .map(|(d, snap)| {
                    let y: Vec<f64> = scaled.iter().map(|r| r[d]).collect();
                    GpModel::from_snapshot(&x, &y, snap)
                })
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn hv_current(&self) -> Result<(f64, ReferencePoint)> {
        let scaled = apply_weights(&self.raw_rewards(), &self.steering.weights)?;
        let r = reference_point(&scaled, &self.config.acquisition, &self.steering)?;
        Ok((hypervolume_any(&scaled, &r.coords), r))
    }

    fn fixed_series(&self, reference: &ReferencePoint) -> Vec<f64> {
        let raw = self.raw_rewards();
        (1..=raw.len()).map(|n| hypervolume_any(&raw[..n], &reference.coords)).collect()
    }

    /// Appends one measured observation and brings every derived quantity
    /// up to date. Used identically by live runs and journal replay.
    fn ingest(
        &mut self,
        kind: ObservationKind,
        observation: Observation,
        scan: Option<Vec<ScanLinePair>>,
        proposal: Option<ProposalLog>,
    ) -> Result<JournalRecord> {
        if observation.iteration != self.observations.len() {
            return Err(Error::InvalidInput(format!(
                "observation {} arrives after {} observations",
                observation.iteration,
                self.observations.len()
            )));
        }
        if observation.rewards.len() != self.n_objectives() {
            return Err(Error::InvalidInput("reward vector has the wrong length".into()));
        }
        if let Some(g) = observation.global_min_height {
            self.global_min_height = Some(g);
        }
        self.observations.push(observation);
        let raw = self.raw_rewards();
        let params: Vec<Vec<f64>> = self.observations.iter().map(|o| o.params.clone()).collect();
        self.pareto_front = ParetoFront::from_observations(&params, &raw)?;
        let (hv, reference) = self.hv_current()?;
        self.hv_history.current_ref.push(hv);
        self.hv_history.current_reference = Some(reference);

        let mut hv_fixed = None;
        match kind {
            ObservationKind::Seed => {
                if self.observations.len() == self.config.n_seeds {
                    let neutral = SteeringState::neutral(self.n_objectives());
                    let fixed = reference_point(&raw, &self.config.acquisition, &neutral)?;
                    self.hv_history.fixed_ref = self.fixed_series(&fixed);
                    self.hv_history.fixed_reference = Some(fixed);
                    self.refit()?;
                    self.status = if self.config.max_steps == 0 {
                        Status::MaxSteps
                    } else {
                        Status::Active
                    };
                    hv_fixed = self.hv_history.fixed_ref.last().copied();
                }
            }
            ObservationKind::Step => {
                let fixed = self.hv_history.fixed_reference.clone().expect("fixed reference set after seeding");
                let v = hypervolume_any(&raw, &fixed.coords);
                self.hv_history.fixed_ref.push(v);
                hv_fixed = Some(v);
                self.refit()?;
                if self.converged() {
                    self.status = Status::Converged;
                } else if self.active_steps() >= self.config.max_steps {
                    self.status = Status::MaxSteps;
                }
            }
        }
        let record = ObservationRecord {
            observation: self.observations.last().cloned().expect("just pushed"),
            proposal,
            scan,
            hv_current_ref: hv,
            hv_fixed_ref: hv_fixed,
            front: self.pareto_front.sources(),
        };
        let record = match kind {
            ObservationKind::Seed => JournalRecord::Seed(record),
            ObservationKind::Step => JournalRecord::Step(record),
        };
        self.journal.push(record.clone());
        Ok(record)
    }

    /// Relative fixed-reference gain stayed under the tolerance for the last
    /// `window` active steps.
    fn converged(&self) -> bool {
        let c = &self.config.convergence;
        let series = &self.hv_history.fixed_ref;
        if c.tolerance <= 0.0 || self.active_steps() < c.window {
            return false;
        }
        let n = series.len();
        (n - c.window..n).all(|t| {
            let (prev, cur) = (series[t - 1], series[t]);
            prev > 0.0 && (cur - prev) / prev < c.tolerance
        })
    }

    fn acquire(&mut self, kind: ObservationKind, index: usize, proposal: Option<ProposalLog>) -> Result<JournalRecord> {
        let (rewards, scan, gmin, ys, t) = self.measure(index)?;
        let observation = Observation {
            iteration: self.observations.len(),
            kind,
            grid_index: index,
            params: self.config.grid.point(index),
            rewards,
            global_min_height: gmin,
            line_positions: ys,
            timestamp: t,
        };
        self.ingest(kind, observation, scan, proposal)
    }

    pub fn run_seeding(&mut self) -> Result<()> {
        self.run_seeding_with(&mut |_, _| {})
    }

    /// Acquires the remaining seed points, then fits the first models.
    pub fn run_seeding_with(&mut self, hook: Hook<'_>) -> Result<()> {
        self.check_status("run_seeding", &[Status::Seeding])?;
        let seeds = self.seed_indices()?;
        for &idx in &seeds[self.observations.len()..] {
            let rec = self.acquire(ObservationKind::Seed, idx, None)?;
            hook(self, &rec);
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        self.step_with(&mut |_, _| {})
    }

    /// One propose, measure, refit cycle.
    pub fn step_with(&mut self, hook: Hook<'_>) -> Result<()> {
        self.check_status("step", &[Status::Active])?;
        self.ensure_models()?;
        let seed = self.acquisition_seed(self.observations.len());
        let scaled = apply_weights(&self.raw_rewards(), &self.steering.weights)?;
        let x = self.observed_x();
        let idx = self.observed_index();
        let ctx = SearchContext {
            grid: &self.config.grid,
            safe: &self.safe,
            observed_x: &x,
            observed_index: &idx,
        };
        let p = propose_next(&ctx, &self.fitted, &scaled, &self.config.acquisition, &self.steering, seed)?;
        if let Some(b) = &self.boundary {
            if !b.is_safe(&ControlParams::from_slice(&p.point)?) {
                return Err(Error::Infeasible(format!("proposal {} violates the safety boundary", p.index)));
            }
        }
        let log = ProposalLog {
            seed,
            weights: self.steering.weights.clone(),
            reference: p.reference.clone(),
            chosen_index: p.index,
            score: p.score,
            n_candidates: p.n_candidates,
        };
        let rec = self.acquire(ObservationKind::Step, p.index, Some(log))?;
        hook(self, &rec);
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(&mut |_, _| {})
    }

    /// Seeds if needed, then steps until converged or out of budget.
    pub fn run_with(&mut self, hook: Hook<'_>) -> Result<()> {
        self.check_status("run", &[Status::Seeding, Status::Active])?;
        if self.status == Status::Seeding {
            self.run_seeding_with(hook)?;
        }
        while self.status == Status::Active {
            self.step_with(hook)?;
        }
        Ok(())
    }

    /// Argmax-qNEHI point after refitting under `steering`, using the seed
    /// the next step would use.
    pub fn propose_optimum(&self, steering: &SteeringState) -> Result<Proposal> {
        if self.models.is_none() {
            return Err(Error::InvalidState {
                op: "propose_optimum",
                status: self.status.to_string(),
            });
        }
        steering.validate(self.n_objectives())?;
        let x = self.observed_x();
        let idx = self.observed_index();
        let ctx = SearchContext {
            grid: &self.config.grid,
            safe: &self.safe,
            observed_x: &x,
            observed_index: &idx,
        };
        let seed = self.acquisition_seed(self.observations.len());
        let scaled = apply_weights(&self.raw_rewards(), &steering.weights)?;
        let fit_cfg = self.fit_config();
        let reuse = self.models.as_ref().is_some_and(|m| m.weights == steering.weights)
            && self.fitted.len() == self.n_objectives();
        let models = if reuse {
            self.fitted.clone()
        } else {
            fit_models(&x, &scaled, &fit_cfg)?
        };
        propose_next(&ctx, &models, &scaled, &self.config.acquisition, steering, seed)
    }

    /// Per-reward GP means at `point` under `steering`, in raw units.
    fn predicted_rewards(&self, point: &[f64], steering: &SteeringState) -> Result<Vec<f64>> {
        let scaled = apply_weights(&self.raw_rewards(), &steering.weights)?;
        let x = self.observed_x();
        let models = if self.models.as_ref().is_some_and(|m| m.weights == steering.weights)
            && self.fitted.len() == self.n_objectives()
        {
            self.fitted.clone()
        } else {
            fit_models(&x, &scaled, &self.fit_config())?
        };
        let u = self.config.grid.normalize_unchecked(point);
        Ok(models
            .iter()
            .zip(&steering.weights)
            .map(|(m, w)| m.predict(std::slice::from_ref(&u)).0[0] / w)
            .collect())
    }

    /// The optimum `steering` would select, without storing or journaling it.
    pub fn preview_steering(&self, steering: &SteeringState) -> Result<SteeringOutcome> {
        let proposal = self.propose_optimum(steering)?;
        let predicted_rewards = self.predicted_rewards(&proposal.point, steering)?;
        Ok(SteeringOutcome {
            proposal,
            predicted_rewards,
        })
    }

    /// Stores new steering, journals it and returns the steered optimum.
    pub fn set_steering(&mut self, steering: SteeringState) -> Result<SteeringOutcome> {
        self.set_steering_with(steering, &mut |_, _| {})
    }

    pub fn set_steering_with(&mut self, steering: SteeringState, hook: Hook<'_>) -> Result<SteeringOutcome> {
        steering.validate(self.n_objectives())?;
        if self.models.is_none() {
            return Err(Error::InvalidState {
                op: "set_steering",
                status: self.status.to_string(),
            });
        }
        self.ensure_models()?;
        let SteeringOutcome {
            proposal,
            predicted_rewards: predicted,
        } = self.preview_steering(&steering)?;
        self.steering = steering.clone();
        let rec = JournalRecord::Steering {
            steering,
            proposal: Some(proposal.clone()),
        };
        self.journal.push(rec.clone());
        hook(self, &rec);
        Ok(SteeringOutcome {
            proposal,
            predicted_rewards: predicted,
        })
    }

    /// Scans the whole sample at the steered optimum and closes the session.
    pub fn final_scan(&mut self) -> Result<&FinalScan> {
        self.final_scan_with(&mut |_, _| {})
    }

    pub fn final_scan_with(&mut self, hook: Hook<'_>) -> Result<&FinalScan> {
        self.check_status("final_scan", &[Status::Converged, Status::MaxSteps])?;
        self.ensure_models()?;
        let steering = self.steering.clone();
        let p = self.propose_optimum(&steering)?;
        let predicted = self.predicted_rewards(&p.point, &steering)?;
        let rec = JournalRecord::Finalized {
            grid_index: p.index,
            params: p.point,
            score: p.score,
            predicted_rewards: predicted,
        };
        self.finalize(&rec)?;
        hook(self, &rec);
        Ok(self.final_scan.as_ref().expect("just stored"))
    }

    /// Scans at the point chosen in `rec` and closes the session.
    fn finalize(&mut self, rec: &JournalRecord) -> Result<()> {
        let JournalRecord::Finalized {
            grid_index,
            params,
            score,
            predicted_rewards,
        } = rec
        else {
            return Err(Error::InvalidInput("not a finalized record".into()));
        };
        if *grid_index >= self.config.grid.len() || self.config.grid.point(*grid_index) != *params {
            return Err(Error::Parse(format!("final params do not match grid point {grid_index}")));
        }
        let image = match self.config.problem {
            Problem::Microscope { sample } => Some(full_scan(
                &SampleProfile::from_preset(sample),
                &ControlParams::from_slice(params)?,
                self.config.final_scan_lines,
                self.config.pixels_per_line,
                &self.config.model,
                derive_seed(self.config.seed, "final-scan", 0),
            )?),
            Problem::Synthetic { .. } => None,
        };
        self.final_scan = Some(FinalScan {
            grid_index: *grid_index,
            params: params.clone(),
            score: *score,
            predicted_rewards: predicted_rewards.clone(),
            image,
        });
        self.status = Status::Finalized;
        self.journal.push(rec.clone());
        Ok(())
    }

    /// Scan lines recorded for observation `iteration`.
    pub fn scan_batch(&self, iteration: usize) -> Option<&Vec<ScanLinePair>> {
        self.journal
            .iter()
            .filter_map(JournalRecord::observation)
            .find(|r| r.observation.iteration == iteration)
            .and_then(|r| r.scan.as_ref())
    }

    /// GP means and variances of reward `reward` over the first two grid
    /// axes, with the third axis (if any) fixed at the grid value nearest to
    /// `fixed`. Raw reward units.
    pub fn predict_slice(&self, reward: &str, fixed: Option<f64>, resolution: usize) -> Result<PredictionSlice> {
        let names = self.config.reward_names();
        let k = names
            .iter()
            .position(|n| n == reward)
            .ok_or_else(|| Error::InvalidInput(format!("unknown reward `{reward}`")))?;
        if resolution < 2 {
            return Err(Error::InvalidInput("resolution must be at least 2".into()));
        }
        let set = self.models.as_ref().ok_or_else(|| Error::InvalidState {
            op: "predict_slice",
            status: self.status.to_string(),
        })?;
        let model = if self.fitted.len() == set.models.len() {
            self.fitted[k].clone()
        } else {
            let scaled = apply_weights(&self.raw_rewards(), &set.weights)?;
            let y: Vec<f64> = scaled.iter().map(|r| r[k]).collect();
            GpModel::from_snapshot(&self.observed_x(), &y, &set.models[k])?
        };
        let w = set.weights[k];
        let grid = &self.config.grid;
        let axis = |a: usize| -> Vec<f64> {
            let ax = &grid.axes[a];
            (0..resolution)
                .map(|i| ax.min + ax.span() * i as f64 / (resolution - 1) as f64)
                .collect()
        };
        let (a0, a1) = (axis(0), axis(1));
        let fixed_value = (grid.dim() > 2).then(|| {
            let ax = &grid.axes[2];
            ax.value(ax.nearest(fixed.unwrap_or(0.5 * (ax.min + ax.max))))
        });
        let mut pts = Vec::with_capacity(resolution * resolution);
        for &u in &a0 {
            for &v in &a1 {
                let mut p = vec![u, v];
                if let Some(g) = fixed_value {
                    p.push(g);
                }
                pts.push(grid.normalize_unchecked(&p));
            }
        }
        let (mean, var) = model.predict(&pts);
        Ok(PredictionSlice {
            reward: reward.to_string(),
            axis_names: [grid.axes[0].name.clone(), grid.axes[1].name.clone()],
            axis_values: [a0, a1],
            fixed_value,
            mean: mean.iter().map(|m| m / w).collect(),
            variance: var.iter().map(|v| v / (w * w)).collect(),
        })
    }

    pub fn export_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses an exported session and restores its in-memory caches.
    pub fn import_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Parse("session document must be a JSON object".into()))?;
        let found = obj
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse("missing section `schema_version`".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: SCHEMA_VERSION,
            });
        }
        if let Some(missing) = REQUIRED_SECTIONS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(Error::Parse(format!("missing section `{missing}`")));
        }
        let mut s: Self = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        s.config.validate()?;
        s.build_mask()?;
        if s.models.is_some() {
            s.ensure_models()?;
        }
        Ok(s)
    }

    /// Rebuilds a session by replaying journal records in order.
    pub fn from_journal(records: &[JournalRecord]) -> Result<Self> {
        let Some(JournalRecord::Created { schema_version, config }) = records.first() else {
            return Err(Error::Parse("journal must start with a `created` record".into()));
        };
        if *schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: *schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut s = Self::create(config.clone())?;
        for (line, rec) in records.iter().enumerate().skip(1) {
            s.replay(rec).map_err(|e| Error::Parse(format!("journal record {}: {e}", line + 1)))?;
        }
        Ok(s)
    }

    fn replay(&mut self, rec: &JournalRecord) -> Result<()> {
        match rec {
            JournalRecord::Created { .. } => Err(Error::Parse("duplicate `created` record".into())),
            JournalRecord::Seed(r) => {
                self.check_status("seed", &[Status::Seeding])?;
                self.ingest(ObservationKind::Seed, r.observation.clone(), r.scan.clone(), r.proposal.clone())?;
                Ok(())
            }
            JournalRecord::Step(r) => {
                self.check_status("step", &[Status::Active])?;
                self.ensure_models()?;
                self.ingest(ObservationKind::Step, r.observation.clone(), r.scan.clone(), r.proposal.clone())?;
                Ok(())
            }
            JournalRecord::Steering { steering, proposal } => {
                steering.validate(self.n_objectives())?;
                self.steering = steering.clone();
                self.journal.push(JournalRecord::Steering {
                    steering: steering.clone(),
                    proposal: proposal.clone(),
                });
                Ok(())
            }
            JournalRecord::Finalized { .. } => {
                self.check_status("final_scan", &[Status::Converged, Status::MaxSteps])?;
                self.finalize(rec)
            }
        }
    }

    pub fn journal_jsonl(&self) -> Result<String> {
        journal_to_jsonl(&self.journal)
    }

    /// Journal lines from record `from` onwards.
    pub fn journal_tail(&self, from: usize) -> Result<String> {
        journal_to_jsonl(&self.journal[from.min(self.journal.len())..])
    }

    pub fn observations_csv(&self) -> String {
        let mut head: Vec<String> = vec!["iteration".into()];
        match self.config.problem {
            Problem::Microscope { .. } => {
                head.extend(["drive_nm", "setpoint_pct", "i_gain"].map(String::from));
            }
            Problem::Synthetic { .. } => {
                head.extend(self.config.grid.axes.iter().map(|a| a.name.clone()));
            }
        }
        head.extend(self.config.reward_names().iter().map(|n| format!("reward_{n}")));
        head.extend(["hv_current_ref", "hv_fixed_ref"].map(String::from));
        let mut out = head.join(",");
        out.push('\n');
        for (i, o) in self.observations.iter().enumerate() {
            let mut row = vec![o.iteration.to_string()];
            match self.config.problem {
                Problem::Microscope { .. } => {
                    row.push(o.params[0].to_string());
                    row.push((o.params[1] * 100.0).to_string());
                    row.push(o.params[2].to_string());
                }
                Problem::Synthetic { .. } => row.extend(o.params.iter().map(f64::to_string)),
            }
            row.extend(o.rewards.values.iter().map(f64::to_string));
            row.push(self.hv_history.current_ref.get(i).map_or(String::new(), f64::to_string));
            row.push(self.hv_history.fixed_ref.get(i).map_or(String::new(), f64::to_string));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Findings from re-checking a session against its journal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked_observations: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn close_all(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y))
}

impl SessionState {
    /// Replays the journal, recomputing every reward from the recorded scan
    /// data, and compares it with both the journal and the stored state.
    pub fn verify(&self) -> VerifyReport {
        let mut report = VerifyReport::default();
        let mut problem = |msg: String| report.problems.push(msg);
        let cfg = &self.config;
        let mut running_min: Option<f64> = None;
        let mut raw: Vec<Vec<f64>> = Vec::new();
        let mut weights = vec![1.0; cfg.n_objectives()];
        let mut override_ref: Option<ReferencePoint> = None;
        let mut n_checked = 0;

        for rec in &self.journal {
            match rec {
                JournalRecord::Steering { steering, .. } => {
                    weights = steering.weights.clone();
                    override_ref = steering.ref_override.clone();
                }
                JournalRecord::Seed(r) | JournalRecord::Step(r) => {
                    let o = &r.observation;
                    let i = raw.len();
                    if o.iteration != i {
                        problem(format!("observation index {} found where {i} was expected", o.iteration));
                    }
                    let expected = match cfg.problem {
                        Problem::Microscope { .. } => match &r.scan {
                            Some(batch) => {
                                let bmin = batch.iter().map(ScanLinePair::min_height).fold(f64::INFINITY, f64::min);
                                let g = running_min.map_or(bmin, |m: f64| m.min(bmin));
                                running_min = Some(g);
                                if o.global_min_height.is_none_or(|h| !close(h, g)) {
                                    problem(format!("iteration {i}: global minimum height disagrees with scan data"));
                                }
                                evaluate_rewards(batch, g, &cfg.rewards, cfg.include_similarity).map(|v| v.values)
                            }
                            None => Err(Error::InvalidInput("missing scan data".into())),
                        },
                        Problem::Synthetic { problem: p } => p.evaluate(&o.params),
                    };
                    match expected {
                        Ok(values) => {
                            for (n, (got, want)) in o.rewards.values.iter().zip(&values).enumerate() {
                                if !close(*got, *want) {
                                    problem(format!(
                                        "iteration {i}: reward `{}` journaled as {got} but recomputes to {want}",
                                        o.rewards.names.get(n).map_or("?", String::as_str)
                                    ));
                                }
                            }
                            if let Some(stored) = self.observations.get(i) {
                                for (n, (got, want)) in stored.rewards.values.iter().zip(&values).enumerate() {
                                    if !close(*got, *want) {
                                        problem(format!(
                                            "iteration {i}: reward `{}` stored as {got} but recomputes to {want}",
                                            stored.rewards.names.get(n).map_or("?", String::as_str)
                                        ));
                                    }
                                }
                                if stored.params != o.params || stored.grid_index != o.grid_index {
                                    problem(format!("iteration {i}: stored parameters differ from the journal"));
                                }
                            } else {
                                problem(format!("iteration {i}: journaled but missing from observations"));
                            }
                            if values.len() != cfg.n_objectives() {
                                problem(format!("iteration {i}: wrong reward count"));
                            }
                            raw.push(values);
                        }
                        Err(e) => {
                            problem(format!("iteration {i}: cannot recompute rewards: {e}"));
                            raw.push(o.rewards.values.clone());
                        }
                    }
                    if let Some(b) = &self.boundary {
                        if let Ok(p) = ControlParams::from_slice(&o.params) {
                            if !b.is_safe(&p) {
                                problem(format!("iteration {i}: parameters violate the safety boundary"));
                            }
                        }
                    }
                    match non_dominated(&raw) {
                        Ok(front) if front == r.front => {}
                        _ => problem(format!("iteration {i}: journaled Pareto front does not match the rewards")),
                    }
                    let steer = SteeringState {
                        weights: weights.clone(),
                        ref_override: override_ref.clone(),
                    };
                    if let Ok(scaled) = apply_weights(&raw, &weights) {
                        if let Ok(rf) = reference_point(&scaled, &cfg.acquisition, &steer) {
                            let hv = hypervolume_any(&scaled, &rf.coords);
                            if !close(hv, r.hv_current_ref) {
                                problem(format!("iteration {i}: journaled hypervolume {} recomputes to {hv}", r.hv_current_ref));
                            }
                            if self.hv_history.current_ref.get(i).is_none_or(|v| !close(*v, hv)) {
                                problem(format!("iteration {i}: stored hypervolume recomputes to {hv}"));
                            }
                        }
                    }
                    n_checked += 1;
                }
                _ => {}
            }
        }
        if n_checked != self.observations.len() {
            problem(format!(
                "{} observations stored but {n_checked} journaled",
                self.observations.len()
            ));
        }
        if raw.len() >= cfg.n_seeds {
            let neutral = SteeringState::neutral(cfg.n_objectives());
            if let Ok(rf) = reference_point(&raw[..cfg.n_seeds], &cfg.acquisition, &neutral) {
                let series: Vec<f64> = (1..=raw.len()).map(|n| hypervolume_any(&raw[..n], &rf.coords)).collect();
                if !close_all(&series, &self.hv_history.fixed_ref) {
                    problem("fixed-reference hypervolume series does not match the rewards".into());
                }
                if series.windows(2).any(|w| w[1] < w[0]) {
                    problem("fixed-reference hypervolume decreases".into());
                }
            }
        }
        if let Ok(front) = non_dominated(&raw) {
            if front != self.pareto_front.sources() {
                problem("stored Pareto front does not match the rewards".into());
            }
        }
        if running_min.is_some() && self.global_min_height.zip(running_min).is_none_or(|(a, b)| !close(a, b)) {
            problem("stored global minimum height does not match the scan data".into());
        }
        report.checked_observations = n_checked;
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spm() -> SessionConfig {
        SessionConfig {
            grid: ParameterGrid::spm_with_resolution([20, 20, 10]),
            pixels_per_line: 64,
            final_scan_lines: 4,
            n_seeds: 4,
            max_steps: 2,
            acquisition: AcquisitionConfig {
                candidate_subsample: 64,
                mc_samples: 32,
                ..AcquisitionConfig::default()
            },
            gp: GpFitConfig {
                restarts: 2,
                max_iters: 50,
                ..GpFitConfig::default()
            },
            seed: 11,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn fresh_session() {
        let s = SessionState::create(small_spm()).unwrap();
        assert_eq!(s.status, Status::Seeding);
        assert!(s.observations.is_empty());
        assert_eq!(s.journal.len(), 1);
        assert_eq!(
            s.export_json().unwrap(),
            SessionState::create(small_spm()).unwrap().export_json().unwrap()
        );
    }

    #[test]
    fn infeasible_grid_is_rejected() {
        let mut cfg = small_spm();
        cfg.grid.axes[1].min = 0.001;
        cfg.grid.axes[1].max = 0.5;
        cfg.grid.axes[0].min = 60.0;
        assert!(matches!(SessionState::create(cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn validation_names_the_axis() {
        let mut cfg = small_spm();
        cfg.grid.axes[2].min = 300.0;
        let err = SessionState::create(cfg).unwrap_err().to_string();
        assert!(err.contains("i_gain"), "{err}");
    }

    #[test]
    fn lifecycle_and_bookkeeping() {
        let mut s = SessionState::create(small_spm()).unwrap();
        assert!(s.step().is_err());
        s.run_seeding().unwrap();
        assert_eq!(s.status, Status::Active);
        assert_eq!(s.observations.len(), 4);
        assert_eq!(s.models.as_ref().unwrap().models.len(), 3);
        assert_eq!(s.hv_history.fixed_ref.len(), 4);
        let before = *s.hv_history.fixed_ref.last().unwrap();
        s.step().unwrap();
        assert_eq!(s.observations.len(), 5);
        assert_eq!(s.hv_history.current_ref.len(), 5);
        assert!(*s.hv_history.fixed_ref.last().unwrap() >= before);
        s.run().unwrap();
        assert!(matches!(s.status, Status::MaxSteps | Status::Converged));
        assert!(s.observations.len() <= 6);
        s.final_scan().unwrap();
        assert_eq!(s.status, Status::Finalized);
        assert!(s.final_scan().is_err());
        let img = s.final_scan.as_ref().unwrap().image.as_ref().unwrap();
        assert_eq!(img.n_lines, 4);
        let report = s.verify();
        assert!(report.ok(), "{:?}", report.problems);
    }

    #[test]
    fn zero_budget_stops_after_seeding() {
        let mut cfg = small_spm();
        cfg.max_steps = 0;
        let mut s = SessionState::create(cfg).unwrap();
        s.run().unwrap();
        assert_eq!(s.status, Status::MaxSteps);
        assert_eq!(s.observations.len(), 4);
        assert_eq!(s.observations_csv().lines().count(), 5);
    }

    #[test]
    fn round_trips_and_replays() {
        let mut s = SessionState::create(small_spm()).unwrap();
        s.run_seeding().unwrap();
        s.step().unwrap();
        let json = s.export_json().unwrap();
        let back = SessionState::import_json(&json).unwrap();
        assert_eq!(back.export_json().unwrap(), json);
        let replayed = SessionState::from_journal(&parse_jsonl(&s.journal_jsonl().unwrap()).unwrap()).unwrap();
        assert_eq!(replayed.export_json().unwrap(), json);
        let mut a = s.clone();
        let mut b = back;
        a.step().unwrap();
        b.step().unwrap();
        assert_eq!(a.observations, b.observations);
    }

    #[test]
    fn import_reports_problems() {
        let s = SessionState::create(small_spm()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s.export_json().unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("hv_history");
        let err = SessionState::import_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("hv_history"), "{err}");
        v["schema_version"] = serde_json::json!(0);
        assert!(matches!(
            SessionState::import_json(&v.to_string()),
            Err(Error::SchemaVersion { found: 0, expected: 1 })
        ));
        let text = s.export_json().unwrap();
        assert!(matches!(SessionState::import_json(&text[..text.len() / 2]), Err(Error::Parse(_))));
    }

    #[test]
    fn verify_catches_tampering() {
        let mut s = SessionState::create(small_spm()).unwrap();
        s.run_seeding().unwrap();
        assert!(s.verify().ok());
        let mut t = s.clone();
        t.observations[2].rewards.values[1] += 0.01;
        let r = t.verify();
        assert!(!r.ok());
        assert!(r.problems.iter().any(|p| p.contains("iteration 2")), "{:?}", r.problems);
    }

    #[test]
    fn synthetic_session_runs() {
        let mut cfg = SessionConfig::synthetic(SyntheticProblem::Opposed);
        cfg.max_steps = 3;
        let mut s = SessionState::create(cfg).unwrap();
        s.run().unwrap();
        assert_eq!(s.observations.len(), 13);
        assert_eq!(s.pareto_front.len(), 13);
        assert!(s.verify().ok());
        let csv = s.observations_csv();
        assert!(csv.starts_with("iteration,x1,x2,reward_reward_1,reward_reward_3,"));
    }

    #[test]
    fn neutral_steering_matches_the_next_step() {
        let mut s = SessionState::create(small_spm()).unwrap();
        s.run_seeding().unwrap();
        let out = s.set_steering(SteeringState::neutral(3)).unwrap();
        assert_eq!(out.predicted_rewards.len(), 3);
        s.step().unwrap();
        assert_eq!(s.observations.last().unwrap().grid_index, out.proposal.index);
        assert_eq!(s.journal.iter().filter(|r| r.name() == "steering").count(), 1);
    }

    #[test]
    fn prediction_slice_shape() {
        let mut s = SessionState::create(small_spm()).unwrap();
        assert!(s.predict_slice("height_difference", Some(100.0), 5).is_err());
        s.run_seeding().unwrap();
        let p = s.predict_slice("height_difference", Some(100.0), 5).unwrap();
        assert_eq!(p.mean.len(), 25);
        assert!(p.variance.iter().all(|v| *v >= 0.0));
        assert!(s.predict_slice("nope", None, 5).is_err());
    }
}

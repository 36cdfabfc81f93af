//! Separable direct bundle adjustment.
//!
//! Map intensities enter the cost linearly, so for fixed poses each cell's
//! optimum is the weighted mean of its samples. Substituting that mean back
//! leaves a pose-only problem (the weighted intensity variance at every map
//! cell) which is solved by Gauss-Newton on SE(2) with the first pose held
//! fixed. The normal equations only have one 3x3 block per pair of
//! co-visible keyframes, whatever the number of map cells.

use std::time::Instant;

use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapgrid::{build_map, GridLayout, GridMap};
use crate::normal::{BlockAccumulator, NormalSystem};
use crate::preprocess::CumulativeMask;
use crate::scan::{LinearizedSample, Scan, WeightModel};
use crate::se2::{Pose2, Twist2};
use crate::trajectory::Trajectory;

/// Cells handled per parallel work item. Fixed so that floating-point sums
/// are identical for any thread count.
const CELL_CHUNK: usize = 512;

/// Damping used for the first retry when the configured damping is zero.
pub const INITIAL_RETRY_DAMPING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Full derivative of the reduced residuals, including the dependence of
    /// the cell mean (and of the weights) on every observing pose.
    #[default]
    ExactVarpro,
    /// Cell means and weights frozen at the linearization point.
    MeanFixed,
}

impl std::str::FromStr for JacobianMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact_varpro" | "exact-varpro" => Ok(Self::ExactVarpro),
            "mean_fixed" | "mean-fixed" => Ok(Self::MeanFixed),
            _ => Err(format!("unknown jacobian mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub update_tolerance: f64,
    pub cost_rel_tolerance: f64,
    pub damping: f64,
    pub jacobian_mode: JacobianMode,
    /// Times the damping is raised tenfold before an iteration gives up.
    pub max_damping_retries: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            update_tolerance: 1e-6,
            cost_rel_tolerance: 1e-9,
            damping: 0.0,
            jacobian_mode: JacobianMode::ExactVarpro,
            max_damping_retries: 5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.update_tolerance > 0.0 && self.cost_rel_tolerance > 0.0) || self.damping < 0.0 {
            return Err(Error::InvalidInput(
                "solver tolerances must be positive and damping nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn next_damping(lambda: f64) -> f64 {
        if lambda > 0.0 {
            lambda * 10.0
        } else {
            INITIAL_RETRY_DAMPING
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    UpdateTolerance,
    CostTolerance,
    /// No damped step lowered the cost.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Cost at the start and after every accepted iteration.
    pub costs: Vec<f64>,
    pub update_norms: Vec<f64>,
    pub h_nnz: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    pub termination: Termination,
    pub jacobian_mode: JacobianMode,
}

/// Input to [`solve_ba`]. Pose 0 anchors the gauge.
#[derive(Debug, Clone)]
pub struct BAProblem {
    pub scans: Vec<Scan>,
    pub init_poses: Trajectory,
    pub wm: WeightModel,
    pub layout: GridLayout,
    pub masks: Option<Vec<CumulativeMask>>,
}

impl BAProblem {
    pub fn new(
        scans: Vec<Scan>,
        init_poses: Trajectory,
        wm: WeightModel,
        layout: GridLayout,
        masks: Option<Vec<CumulativeMask>>,
    ) -> Result<Self> {
        if scans.len() != init_poses.len() {
            return Err(Error::InvalidInput(format!(
                "{} scans but {} initial poses",
                scans.len(),
                init_poses.len()
            )));
        }
        if scans.len() < 2 {
            return Err(Error::InvalidInput(
                "bundle adjustment needs at least two scans".into(),
            ));
        }
        if let Some(m) = &masks {
            if m.len() != scans.len() {
                return Err(Error::InvalidInput(format!(
                    "{} scans but {} masks",
                    scans.len(),
                    m.len()
                )));
            }
        }
        Ok(Self {
            scans,
            init_poses,
            wm,
            layout,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    fn mask(&self, n: usize) -> Option<&CumulativeMask> {
        self.masks.as_ref().map(|m| &m[n])
    }

    /// Linearized valid samples of one cell, in scan order.
    fn linearize_cell(
        &self,
        cell: usize,
        candidates: &[u32],
        poses: &[Pose2],
        out: &mut Vec<(usize, LinearizedSample)>,
    ) {
        out.clear();
        let m = self.layout.center_of(cell);
        for &n in candidates {
            let n = n as usize;
            if let Some(s) = self.scans[n].sample_linearized(&m, &poses[n], &self.wm, self.mask(n)) {
                out.push((n, s));
            }
        }
    }

    /// Weighted-variance cost of one cell (zero for fewer than two samples).
    fn cell_cost(&self, cell: usize, candidates: &[u32], poses: &[Pose2]) -> f64 {
        let m = self.layout.center_of(cell);
        let mut buf = [(0.0, 0.0); 64];
        let mut spill = Vec::new();
        let mut k = 0;
        for &n in candidates {
            let n = n as usize;
            let s = self.scans[n].sample(&m, &poses[n], &self.wm, self.mask(n));
            if s.valid {
                if k < buf.len() {
                    buf[k] = (s.intensity, s.weight);
                } else {
                    spill.push((s.intensity, s.weight));
                }
                k += 1;
            }
        }
        if k < 2 {
            return 0.0;
        }
        let samples = buf[..k.min(buf.len())].iter().chain(spill.iter());
        let (mut sw, mut swi) = (0.0, 0.0);
        for &(i, w) in samples.clone() {
            sw += w;
            swi += w * i;
        }
        let mean = swi / sw;
        samples.map(|&(i, w)| w * (mean - i) * (mean - i)).sum()
    }
}

/// Which scans may see each cell: a CSR list built from the image
/// footprints at some reference poses, grown by one map cell.
#[derive(Debug, Clone)]
pub struct Covisibility {
    pub cells: Vec<usize>,
    offsets: Vec<usize>,
    scans: Vec<u32>,
    reference: Vec<Pose2>,
}

impl Covisibility {
    pub fn compute(problem: &BAProblem, poses: &[Pose2]) -> Self {
        let margin = problem.layout.resolution_m;
        let mut pairs: Vec<(usize, u32)> = problem
            .scans
            .par_iter()
            .zip(poses.par_iter())
            .enumerate()
            .map(|(n, (s, p))| {
                problem
                    .layout
                    .cells_in_footprint(s, p, margin)
                    .into_iter()
                    .map(|c| (c, n as u32))
                    .collect::<Vec<_>>()
            })
            .flatten()
            .collect();
        pairs.par_sort_unstable();
        let mut cells = Vec::new();
        let mut offsets = vec![0];
        let mut scans = Vec::with_capacity(pairs.len());
        let mut i = 0;
        while i < pairs.len() {
            let c = pairs[i].0;
            let mut j = i;
            while j < pairs.len() && pairs[j].0 == c {
                j += 1;
            }
            if j - i >= 2 {
                cells.push(c);
                scans.extend(pairs[i..j].iter().map(|p| p.1));
                offsets.push(scans.len());
            }
            i = j;
        }
        Self {
            cells,
            offsets,
            scans,
            reference: poses.to_vec(),
        }
    }

    pub fn candidates(&self, k: usize) -> &[u32] {
        &self.scans[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// True once any footprint corner has moved more than half a map cell.
    pub fn is_stale(&self, problem: &BAProblem, poses: &[Pose2]) -> bool {
        let limit = 0.5 * problem.layout.resolution_m;
        self.reference.iter().zip(poses).zip(&problem.scans).any(|((a, b), s)| {
            let radius = s.half_extent_m().norm();
            let rel = a.between(b);
            rel.translation_norm() + rel.theta.abs() * radius > limit
        })
    }
}

/// Residuals and Jacobian blocks of one cell.
#[derive(Debug, Clone)]
pub struct CellLinearization {
    pub cell: usize,
    /// Observing scans, in the order of `residuals`.
    pub scans: Vec<usize>,
    /// `sqrt(w_n) (mean - i_n)`.
    pub residuals: Vec<f64>,
    /// `jacobian[r][c]` is `d residuals[r] / d xi_{scans[c]}`.
    pub jacobian: Vec<Vec<Vector3<f64>>>,
    pub mean: f64,
}

/// Per-cell quantities shared by the residual stream and the assembly.
struct CellTerms {
    sqrt_w: Vec<f64>,
    residuals: Vec<f64>,
    /// d(mean)/d(xi_k); zero in mean-fixed mode.
    a: Vec<Vector3<f64>>,
    /// Own-pose part of d(residual_k)/d(xi_k).
    d: Vec<Vector3<f64>>,
    weight_sum: f64,
    mean: f64,
    /// Whether residuals depend on other poses than their own.
    coupled: bool,
}

fn cell_terms(samples: &[(usize, LinearizedSample)], mode: JacobianMode) -> CellTerms {
    let weight_sum: f64 = samples.iter().map(|(_, s)| s.weight).sum();
    let mean = samples
        .iter()
        .map(|(_, s)| s.weight * s.intensity)
        .sum::<f64>()
        / weight_sum;
    let mut t = CellTerms {
        sqrt_w: Vec::with_capacity(samples.len()),
        residuals: Vec::with_capacity(samples.len()),
        a: Vec::with_capacity(samples.len()),
        d: Vec::with_capacity(samples.len()),
        weight_sum,
        mean,
        coupled: mode == JacobianMode::ExactVarpro,
    };
    for (_, s) in samples {
        let sw = s.weight.sqrt();
        let r = mean - s.intensity;
        t.sqrt_w.push(sw);
        t.residuals.push(sw * r);
        match mode {
            JacobianMode::ExactVarpro => {
                t.a.push((s.d_intensity * s.weight - s.d_weight * r) / weight_sum);
                t.d.push(-s.d_intensity * sw + s.d_weight * (r / (2.0 * sw)));
            }
            JacobianMode::MeanFixed => {
                t.a.push(Vector3::zeros());
                t.d.push(-s.d_intensity * sw);
            }
        }
    }
    t
}

/// Adds one cell's `J^T J` and `-J^T e` to `acc`. Scan `n` maps to state
/// `n - 1`; scan 0 is the fixed anchor.
fn accumulate_cell(samples: &[(usize, LinearizedSample)], t: &CellTerms, acc: &mut BlockAccumulator) {
    let k_count = samples.len();
    let sum_sqrt_w_e: f64 = t.sqrt_w.iter().zip(&t.residuals).map(|(s, e)| s * e).sum();
    for k in 0..k_count {
        let nk = samples[k].0;
        acc.cost += t.residuals[k] * t.residuals[k];
        if nk == 0 {
            continue;
        }
        let (ak, dk) = (t.a[k], t.d[k]);
        acc.add_rhs(nk - 1, &-(ak * sum_sqrt_w_e + dk * t.residuals[k]));
        for (l, &(nl, _)) in samples.iter().enumerate().take(k + 1) {
            if nl == 0 || (k != l && !t.coupled) {
                continue;
            }
            let al = t.a[l];
            let mut block = ak * al.transpose() * t.weight_sum
                + ak * t.d[l].transpose() * t.sqrt_w[l]
                + dk * al.transpose() * t.sqrt_w[k];
            if k == l {
                block += dk * dk.transpose();
            }
            acc.add_block(nk - 1, nl - 1, &block);
        }
    }
    acc.residuals += k_count;
}

/// Reduced cost at `poses` over the cells of `covis`.
pub fn reduced_cost(problem: &BAProblem, covis: &Covisibility, poses: &[Pose2]) -> f64 {
    let idx: Vec<usize> = (0..covis.len()).collect();
    let parts: Vec<f64> = idx
        .par_chunks(CELL_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&k| problem.cell_cost(covis.cells[k], covis.candidates(k), poses))
                .sum()
        })
        .collect();
    parts.iter().sum()
}

/// Residual/Jacobian stream: one entry per cell with at least two valid
/// samples.
pub fn residuals_and_jacobians(
    problem: &BAProblem,
    covis: &Covisibility,
    poses: &[Pose2],
    mode: JacobianMode,
) -> Vec<CellLinearization> {
    let mut buf = Vec::new();
    let mut out = Vec::new();
    for k in 0..covis.len() {
        problem.linearize_cell(covis.cells[k], covis.candidates(k), poses, &mut buf);
        if buf.len() < 2 {
            continue;
        }
        let t = cell_terms(&buf, mode);
        let scans: Vec<usize> = buf.iter().map(|(n, _)| *n).collect();
        let jacobian = (0..buf.len())
            .map(|r| {
                (0..buf.len())
                    .map(|c| {
                        let mut j = t.a[c] * t.sqrt_w[r];
                        if r == c {
                            j += t.d[c];
                        }
                        j
                    })
                    .collect()
            })
            .collect();
        out.push(CellLinearization {
            cell: covis.cells[k],
            scans,
            residuals: t.residuals,
            jacobian,
            mean: t.mean,
        });
    }
    out
}

/// Normal equations from an explicit residual stream (reference path for
/// [`linearize`]).
pub fn assemble(stream: &[CellLinearization], n_poses: usize) -> NormalSystem {
    let mut sys = NormalSystem::new(n_poses - 1);
    for cl in stream {
        for (r, e) in cl.residuals.iter().enumerate() {
            for (c, &nc) in cl.scans.iter().enumerate() {
                if nc == 0 {
                    continue;
                }
                let jc = cl.jacobian[r][c];
                sys.add_rhs(nc - 1, &(-jc * *e));
                for (d, &nd) in cl.scans.iter().enumerate().take(c + 1) {
                    if nd == 0 {
                        continue;
                    }
                    let jd = cl.jacobian[r][d];
                    sys.add_block(nc - 1, nd - 1, &(jc * jd.transpose()));
                }
            }
        }
    }
    sys
}

/// Cost and normal equations at `poses`, evaluated in parallel over cells.
pub fn linearize(
    problem: &BAProblem,
    covis: &Covisibility,
    poses: &[Pose2],
    mode: JacobianMode,
) -> (f64, NormalSystem) {
    let idx: Vec<usize> = (0..covis.len()).collect();
    let partials: Vec<BlockAccumulator> = idx
        .par_chunks(CELL_CHUNK)
        .map(|chunk| {
            let mut acc = BlockAccumulator::default();
            let mut buf = Vec::new();
            for &k in chunk {
                problem.linearize_cell(covis.cells[k], covis.candidates(k), poses, &mut buf);
                if buf.len() < 2 {
                    continue;
                }
                let t = cell_terms(&buf, mode);
                accumulate_cell(&buf, &t, &mut acc);
            }
            acc
        })
        .collect();
    let mut sys = NormalSystem::new(problem.len() - 1);
    let mut cost = 0.0;
    for p in &partials {
        sys.merge(p);
        cost += p.cost;
    }
    (cost, sys)
}

/// Gradient of the reduced cost with respect to the free poses, `2 J^T e`.
pub fn reduced_gradient(problem: &BAProblem, poses: &[Pose2]) -> Vec<Vector3<f64>> {
    let covis = Covisibility::compute(problem, poses);
    let (_, sys) = linearize(problem, &covis, poses, JacobianMode::ExactVarpro);
    sys.rhs().iter().map(|b| -2.0 * b).collect()
}

/// Doublings tried after an accepted step.
pub const MAX_STEP_EXPANSIONS: usize = 3;

/// Keeps doubling an accepted update while the cost keeps dropping. The
/// Gauss-Newton model overestimates curvature when residuals stay large, so
/// the plain step often stops short. `cost_of` returns `None` when a trial
/// leaves the region where costs are comparable.
pub(crate) fn extrapolate(
    poses: &[Pose2],
    dx: &DVector<f64>,
    accepted: Vec<Pose2>,
    accepted_cost: f64,
    mut cost_of: impl FnMut(&[Pose2]) -> Option<f64>,
) -> (Vec<Pose2>, f64, f64) {
    let (mut best, mut best_cost, mut scale) = (accepted, accepted_cost, 1.0);
    for _ in 0..MAX_STEP_EXPANSIONS {
        let trial = apply_update(poses, &(dx * (2.0 * scale)));
        match cost_of(&trial) {
            Some(c) if c < best_cost => {
                best = trial;
                best_cost = c;
                scale *= 2.0;
            }
            _ => break,
        }
    }
    (best, best_cost, scale)
}

/// Damping for the next iteration after a step accepted with `lambda`.
pub(crate) fn relax_damping(lambda: f64, floor: f64) -> f64 {
    let next = lambda / 10.0;
    if next < INITIAL_RETRY_DAMPING {
        floor
    } else {
        next.max(floor)
    }
}

pub(crate) fn apply_update(poses: &[Pose2], dx: &DVector<f64>) -> Vec<Pose2> {
    let mut out = poses.to_vec();
    for (s, p) in out.iter_mut().enumerate().skip(1) {
        let xi = Vector3::new(dx[3 * (s - 1)], dx[3 * (s - 1) + 1], dx[3 * (s - 1) + 2]);
        *p = p.apply_perturbation(&Twist2::from_vector(&xi));
    }
    out
}

#[derive(Debug, Clone)]
pub struct BAOutput {
    pub trajectory: Trajectory,
    pub map: GridMap,
    pub report: ConvergenceReport,
    /// Block sparsity of the last normal system, both triangles.
    pub hessian_pattern: Vec<(usize, usize)>,
}

/// Damped Gauss-Newton on the reduced objective followed by one closed-form
/// map build at the final poses.
pub fn solve_ba(problem: &BAProblem, config: &SolverConfig) -> Result<BAOutput> {
    config.validate()?;
    let start = Instant::now();
    let mode = config.jacobian_mode;
    let mut poses = problem.init_poses.pose_list();
    let mut covis = Covisibility::compute(problem, &poses);
    let (mut cost, mut sys) = linearize(problem, &covis, &poses, mode);
    let mut report = ConvergenceReport {
        iterations: 0,
        costs: vec![cost],
        update_norms: Vec::new(),
        h_nnz: sys.nnz(),
        wall_time_s: 0.0,
        converged: false,
        termination: Termination::MaxIterations,
        jacobian_mode: mode,
    };
    let mut pattern = sys.block_pattern();

    // Damping that succeeded last is reused, relaxed tenfold per accepted step.
    let mut carried = config.damping;
    'outer: for iter in 0..config.max_iterations {
        report.iterations = iter + 1;
        let mut lambda = carried;
        let mut retries = 0;
        loop {
            let dx = match sys.solve(lambda) {
                Ok(dx) => dx,
                Err(failed) => {
                    if retries >= config.max_damping_retries {
                        let mut states = sys.weak_states();
                        if states.is_empty() {
                            states.push(failed);
                        }
                        return Err(Error::RankDeficient {
                            states: states.into_iter().map(|s| s + 1).collect(),
                        });
                    }
                    lambda = SolverConfig::next_damping(lambda);
                    retries += 1;
                    continue;
                }
            };
            let step = dx.norm();
            if step < config.update_tolerance {
                report.update_norms.push(step);
                report.converged = true;
                report.termination = Termination::UpdateTolerance;
                break 'outer;
            }
            let candidate = apply_update(&poses, &dx);
            // compare both poses on the same cell set
            let (refreshed, base_cost) = if covis.is_stale(problem, &candidate) {
                let fresh = Covisibility::compute(problem, &candidate);
                let base = reduced_cost(problem, &fresh, &poses);
                (Some(fresh), base)
            } else {
                (None, cost)
            };
            let new_cost = reduced_cost(problem, refreshed.as_ref().unwrap_or(&covis), &candidate);
            if new_cost <= base_cost {
                if let Some(fresh) = refreshed {
                    covis = fresh;
                }
                carried = relax_damping(lambda, config.damping);
                let (candidate, new_cost, scale) =
                    extrapolate(&poses, &dx, candidate, new_cost, |trial| {
                        (!covis.is_stale(problem, trial)).then(|| reduced_cost(problem, &covis, trial))
                    });
                let step = step * scale;
                let rel = (base_cost - new_cost) / base_cost.max(f64::MIN_POSITIVE);
                poses = candidate;
                let (c, s) = linearize(problem, &covis, &poses, mode);
                cost = c;
                sys = s;
                report.h_nnz = sys.nnz();
                pattern = sys.block_pattern();
                report.costs.push(cost);
                report.update_norms.push(step);
                if rel < config.cost_rel_tolerance {
                    report.converged = true;
                    report.termination = Termination::CostTolerance;
                    break 'outer;
                }
                break;
            }
            if retries >= config.max_damping_retries {
                report.converged = true;
                report.termination = Termination::Stalled;
                break 'outer;
            }
            lambda = SolverConfig::next_damping(lambda);
            retries += 1;
        }
    }

    let map = build_map(
        &problem.scans,
        &poses,
        &problem.wm,
        problem.masks.as_deref(),
        problem.layout,
    )?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(BAOutput {
        trajectory: problem.init_poses.with_poses(&poses),
        map,
        report,
        hessian_pattern: pattern,
    })
}

//! Anomaly-aware Monte-Carlo initialization of interaction parameters
//! against a pluggable configurational-likelihood oracle.
//!
//! The search runs a joint translation-scale sweep, then alternating rounds
//! of translation and scale sampling with rotation pinned to identity. The
//! scale guard switches to a reduced camera radius and scale range when the
//! estimate hugs the lower range limit, and translation candidates are
//! scored by a visibility-corrected likelihood that penalizes occluded
//! placements.

use nalgebra::Vector3;
use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::field::{
    flatten_scene, InteractionParams, InteractionStatus, ObjectField, PairTransform, Scene,
};
use crate::grid::SpatialGrid;
use crate::physics::contact_angle;
use crate::render::{render, visibility_flat, Camera, RenderOptions, RenderedImage};
use crate::{Error, Result};

/// What an oracle can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleCaps {
    ScoreOnly,
    ScoreAndResidual,
}

/// One scoring request. Transport-backed oracles read the rendered views and
/// prompt; synthetic test oracles read the candidate configuration directly.
pub struct ScoreRequest<'a> {
    pub views: &'a [RenderedImage],
    pub prompt: &'a str,
    pub translation: Vector3<f64>,
    pub scale: f64,
    pub seed: u64,
}

/// Configurational likelihood oracle: lower scores are better. Scoring must
/// be pure given (views, prompt, seed).
pub trait CLFOracle: Sync {
    fn capabilities(&self) -> OracleCaps;
    fn concurrency_limit(&self) -> usize {
        8
    }
    fn score(&self, req: &ScoreRequest<'_>) -> Result<f64>;
    /// Score plus per-view residual images for backpropagation.
    fn score_with_residual(&self, _req: &ScoreRequest<'_>) -> Result<(f64, Vec<Vec<[f64; 3]>>)> {
        Err(Error::Oracle("oracle does not provide residuals".into()))
    }
}

/// Knobs for the structured initialization.
#[derive(Debug, Clone)]
pub struct InitConfig {
    pub camera_radius_primary: f64,
    pub camera_radius_reduced: f64,
    pub scale_range_primary: (f64, f64),
    pub scale_range_reduced: (f64, f64),
    /// Switch to the reduced radius and range when the scale estimate falls
    /// below this (lower limit + 0.05 at the primary radius).
    pub scale_switch_threshold: f64,
    pub scale_samples: usize,
    pub scale_top_k: usize,
    pub translation_samples: usize,
    pub joint_samples: usize,
    pub alternating_rounds: usize,
    pub visibility_exponent: f64,
    /// Translation candidates live on a sphere of this factor times the
    /// anchor's bounding radius.
    pub sphere_radius_factor: f64,
    /// All-pruned recovery: inflate the sphere by 10% and resample, up to
    /// this many attempts.
    pub resample_attempts: usize,
    pub render_width: usize,
    pub render_height: usize,
    pub camera_fov: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            camera_radius_primary: 4.5,
            camera_radius_reduced: 2.5,
            scale_range_primary: (0.3, 0.7),
            scale_range_reduced: (0.2, 0.6),
            scale_switch_threshold: 0.35,
            scale_samples: 50,
            scale_top_k: 5,
            translation_samples: 50,
            joint_samples: 150,
            alternating_rounds: 3,
            visibility_exponent: 0.5,
            sphere_radius_factor: 1.2,
            resample_attempts: 3,
            render_width: 128,
            render_height: 128,
            camera_fov: 40.0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.scale_range_primary, self.scale_range_reduced] {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::Validation("scale ranges must be ordered and positive".into()));
            }
        }
        if self.scale_samples == 0
            || self.translation_samples == 0
            || self.joint_samples == 0
            || self.scale_top_k == 0
        {
            return Err(Error::Validation("sample counts must be >= 1".into()));
        }
        if !(self.visibility_exponent > 0.0 && self.visibility_exponent <= 1.0) {
            return Err(Error::Validation("visibility exponent must be in (0,1]".into()));
        }
        Ok(())
    }

    /// The 8 fixed initialization cameras: elevations {30, 60} degrees by
    /// azimuths {0, 90, 180, 270}, at the given radius around `target`.
    /// Negative elevations are excluded throughout.
    pub fn init_cameras(&self, target: Vector3<f64>, radius: f64) -> Vec<Camera> {
        let mut cams = Vec::with_capacity(8);
        for elevation in [30.0, 60.0] {
            for azimuth in [0.0, 90.0, 180.0, 270.0] {
                cams.push(Camera::orbit(
                    target,
                    radius,
                    azimuth,
                    elevation,
                    self.camera_fov,
                    self.render_width,
                    self.render_height,
                ));
            }
        }
        cams
    }
}

/// Visibility-corrected translation likelihood: f / max(v/s^2, eps)^gamma.
/// Lower visibility strictly increases the value for positive f, penalizing
/// occluded placements.
pub fn f_trans(f: f64, visibility: f64, s: f64, gamma: f64) -> f64 {
    const EPS: f64 = 1e-8;
    f / (visibility / (s * s)).max(EPS).powf(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneReason {
    Intersection,
    BelowFloor,
    OutOfRange,
}

/// One evaluated candidate configuration.
#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub translation: Vector3<f64>,
    pub scale: f64,
    pub f: Option<f64>,
    pub f_trans: Option<f64>,
    pub visibility: Option<f64>,
    pub pruned: Option<PruneReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Joint,
    Translation(usize),
    Scale(usize),
}

/// Per-stage record of a structured initialization.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub stage: Stage,
    pub candidates: Vec<CandidateScore>,
    pub chosen_translation: Vector3<f64>,
    pub chosen_scale: f64,
    pub radius_switched: bool,
    pub scored_calls: usize,
    pub pruned_count: usize,
}

#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub params: InteractionParams,
    pub trace: Vec<StageTrace>,
    pub total_scored_calls: usize,
    pub total_pruned: usize,
}

struct SearchContext<'a> {
    scene: &'a Scene,
    anchor_id: &'a str,
    child_id: &'a str,
    prompt: String,
    child_local: ObjectField,
    outer: PairTransform,
    /// Grid over the anchor's world-space means, for intersection pruning.
    anchor_grid: SpatialGrid,
    floor: f64,
    /// Sphere center and base radius in the anchor's local frame.
    sphere_center: Vector3<f64>,
    sphere_radius: f64,
    look_at: Vector3<f64>,
    seed: u64,
}

struct SearchState {
    reduced: bool,
    translation: Vector3<f64>,
    scale: f64,
    rng: rand_chacha::ChaCha8Rng,
}

fn build_context<'a>(
    scene: &'a Scene,
    anchor_id: &'a str,
    child_id: &'a str,
    config: &InitConfig,
    seed: u64,
) -> Result<SearchContext<'a>> {
    let anchor_local = scene.object(anchor_id)?;
    let child_local = scene.object(child_id)?.clone();
    let prompt = scene.interaction(anchor_id, child_id)?.prompt.clone();
    // Flatten with a provisional identity pair to locate the anchor chain.
    let trial = scene.with_trial_params(anchor_id, child_id, &PairTransform::identity())?;
    let flat = flatten_scene(&trial)?;
    let outer = flat.span(child_id)?.outer;
    let anchor_world = flat.object_world(anchor_id)?;
    let anchor_means: Vec<Vector3<f64>> = anchor_world.gaussians().iter().map(|g| g.mean).collect();
    let anchor_grid = SpatialGrid::build(&anchor_means);
    Ok(SearchContext {
        scene,
        anchor_id,
        child_id,
        prompt,
        child_local,
        outer,
        anchor_grid,
        floor: anchor_world.floor_height(),
        sphere_center: anchor_local.geometric_center(),
        sphere_radius: config.sphere_radius_factor * anchor_local.bounding_radius(),
        look_at: anchor_world.geometric_center(),
        seed,
    })
}

impl SearchContext<'_> {
    fn pair(&self, t: Vector3<f64>, s: f64) -> PairTransform {
        PairTransform {
            rotation: nalgebra::UnitQuaternion::identity(),
            translation: t,
            scale: s,
        }
    }

    fn child_world(&self, t: Vector3<f64>, s: f64) -> ObjectField {
        crate::field::apply_transform(&self.child_local, &self.outer.compose(&self.pair(t, s)))
    }

    fn prune(&self, t: Vector3<f64>, s: f64) -> Option<PruneReason> {
        let child = self.child_world(t, s);
        let min_y = child
            .gaussians()
            .iter()
            .map(|g| g.mean.y)
            .fold(f64::INFINITY, f64::min);
        if min_y < self.floor - 1e-9 {
            return Some(PruneReason::BelowFloor);
        }
        let q = child.geometric_center();
        for g in child.gaussians() {
            let (ni, _) = self.anchor_grid.nearest(&g.mean);
            if contact_angle(&g.mean, &self.anchor_grid.point(ni), &q) > std::f64::consts::FRAC_PI_2 {
                return Some(PruneReason::Intersection);
            }
        }
        None
    }

    /// Render the 8 init cameras on the trial configuration and score it.
    /// Returns (f, visibility) where visibility is computed only on demand.
    fn evaluate(
        &self,
        t: Vector3<f64>,
        s: f64,
        oracle: &dyn CLFOracle,
        cameras: &[Camera],
        need_visibility: bool,
    ) -> Result<(f64, Option<f64>)> {
        let trial = self.scene.with_trial_params(self.anchor_id, self.child_id, &self.pair(t, s))?;
        let flat = flatten_scene(&trial)?;
        let opts = RenderOptions::default();
        let mut views = Vec::with_capacity(cameras.len());
        for cam in cameras {
            views.push(render(flat.field(), cam, &opts)?);
        }
        let req = ScoreRequest {
            views: &views,
            prompt: &self.prompt,
            translation: t,
            scale: s,
            seed: self.seed,
        };
        let f = oracle.score(&req)?;
        let v = if need_visibility {
            Some(visibility_flat(&flat, self.child_id, cameras, &opts)?)
        } else {
            None
        };
        Ok((f, v))
    }
}

/// Evaluate candidates in waves of the oracle's concurrency limit; selection
/// later is a deterministic reduction over the ordered results.
fn evaluate_candidates(
    ctx: &SearchContext<'_>,
    oracle: &dyn CLFOracle,
    cameras: &[Camera],
    gamma: f64,
    need_visibility: bool,
    candidates: &[(Vector3<f64>, f64)],
    prune: bool,
) -> Result<Vec<CandidateScore>> {
    let limit = oracle.concurrency_limit().max(1);
    let mut out: Vec<CandidateScore> = Vec::with_capacity(candidates.len());
    let mut failures = 0usize;
    for chunk in candidates.chunks(limit) {
        let results: Vec<CandidateScore> = chunk
            .par_iter()
            .map(|&(t, s)| {
                if prune {
                    if let Some(reason) = ctx.prune(t, s) {
                        return CandidateScore {
                            translation: t,
                            scale: s,
                            f: None,
                            f_trans: None,
                            visibility: None,
                            pruned: Some(reason),
                        };
                    }
                }
                match ctx.evaluate(t, s, oracle, cameras, need_visibility) {
                    Ok((f, v)) => {
                        let ft = v.map(|v| f_trans(f, v, s, gamma));
                        CandidateScore {
                            translation: t,
                            scale: s,
                            f: Some(f),
                            f_trans: ft,
                            visibility: v,
                            pruned: None,
                        }
                    }
                    Err(_) => CandidateScore {
                        translation: t,
                        scale: s,
                        f: None,
                        f_trans: None,
                        visibility: None,
                        pruned: None,
                    },
                }
            })
            .collect();
        for c in &results {
            if c.pruned.is_none() && c.f.is_none() {
                failures += 1;
            }
        }
        out.extend(results);
    }
    let scored = out.iter().filter(|c| c.f.is_some()).count();
    if failures > 0 && failures > (scored + failures) / 2 {
        return Err(Error::Oracle(format!(
            "oracle failed on {failures} of {} scored candidates",
            scored + failures
        )));
    }
    Ok(out)
}

fn uniform_sphere_dir(rng: &mut rand_chacha::ChaCha8Rng) -> Vector3<f64> {
    use rand::Rng;
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0f64..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}

fn active_scale_range(config: &InitConfig, reduced: bool) -> (f64, f64) {
    if reduced {
        config.scale_range_reduced
    } else {
        config.scale_range_primary
    }
}

fn active_radius(config: &InitConfig, reduced: bool) -> f64 {
    if reduced {
        config.camera_radius_reduced
    } else {
        config.camera_radius_primary
    }
}

/// Scale sampling step: fresh uniform scales in the active range plus the
/// incumbent, scored at the fixed translation; returns the mean of the
/// top-k, guarded by the scale-anomaly radius switch.
fn sample_scale_step(
    ctx: &SearchContext<'_>,
    oracle: &dyn CLFOracle,
    config: &InitConfig,
    state: &mut SearchState,
    round: usize,
) -> Result<StageTrace> {
    use rand::Rng;
    let (lo, hi) = active_scale_range(config, state.reduced);
    let cameras = config.init_cameras(ctx.look_at, active_radius(config, state.reduced));
    let mut candidates: Vec<(Vector3<f64>, f64)> = (0..config.scale_samples - 1)
        .map(|_| (state.translation, state.rng.random_range(lo..hi)))
        .collect();
    candidates.push((state.translation, state.scale));
    let scores = evaluate_candidates(ctx, oracle, &cameras, config.visibility_exponent, false, &candidates, false)?;

    let mut ranked: Vec<(usize, f64, f64)> = scores
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.f.map(|f| (i, f, c.scale)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    if ranked.is_empty() {
        return Err(Error::Oracle("no scored scale candidates".into()));
    }
    let k = config.scale_top_k.min(ranked.len());
    let top_mean_scale = ranked[..k].iter().map(|r| r.2).sum::<f64>() / k as f64;
    let top_mean_f = ranked[..k].iter().map(|r| r.1).sum::<f64>() / k as f64;
    // Keep the incumbent when its own score beats the top-k mean; for a
    // convex noise-free likelihood this makes each round non-worsening.
    let incumbent_f = scores.last().and_then(|c| c.f);
    let accept_new = match incumbent_f {
        Some(fi) => top_mean_f <= fi,
        None => true,
    };
    if accept_new {
        state.scale = top_mean_scale;
    }

    let mut switched = false;
    if !state.reduced && state.scale < config.scale_switch_threshold {
        state.reduced = true;
        switched = true;
    }
    let pruned_count = scores.iter().filter(|c| c.pruned.is_some()).count();
    let scored_calls = scores.iter().filter(|c| c.f.is_some()).count();
    Ok(StageTrace {
        stage: Stage::Scale(round),
        candidates: scores,
        chosen_translation: state.translation,
        chosen_scale: state.scale,
        radius_switched: switched,
        scored_calls,
        pruned_count,
    })
}

/// Translation sampling step: uniform sphere-surface candidates around the
/// anchor plus the incumbent, pruned for intersection and below-floor, then
/// selected by the visibility-corrected likelihood.
fn sample_translation_step(
    ctx: &SearchContext<'_>,
    oracle: &dyn CLFOracle,
    config: &InitConfig,
    state: &mut SearchState,
    round: usize,
) -> Result<StageTrace> {
    let cameras = config.init_cameras(ctx.look_at, active_radius(config, state.reduced));
    let mut radius = ctx.sphere_radius;
    let mut attempt = 0;
    loop {
        let fresh = config.translation_samples - 1;
        let mut candidates: Vec<(Vector3<f64>, f64)> = (0..fresh)
            .map(|_| (ctx.sphere_center + radius * uniform_sphere_dir(&mut state.rng), state.scale))
            .collect();
        candidates.push((state.translation, state.scale));
        let scores = evaluate_candidates(
            ctx,
            oracle,
            &cameras,
            config.visibility_exponent,
            true,
            &candidates,
            true,
        )?;
        let best = scores
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.f_trans.map(|ft| (i, ft)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let pruned_count = scores.iter().filter(|c| c.pruned.is_some()).count();
        let scored_calls = scores.iter().filter(|c| c.f.is_some()).count();
        match best {
            Some((i, _)) => {
                state.translation = scores[i].translation;
                return Ok(StageTrace {
                    stage: Stage::Translation(round),
                    candidates: scores,
                    chosen_translation: state.translation,
                    chosen_scale: state.scale,
                    radius_switched: false,
                    scored_calls,
                    pruned_count,
                });
            }
            None => {
                attempt += 1;
                if attempt > config.resample_attempts {
                    return Err(Error::Sampling(format!(
                        "all translation candidates pruned after {attempt} attempts"
                    )));
                }
                radius *= 1.1;
            }
        }
    }
}

/// Joint step: fresh (t, s) pairs drawn under both samplers' constraints;
/// the single best candidate by the visibility-corrected likelihood wins.
fn joint_step(
    ctx: &SearchContext<'_>,
    oracle: &dyn CLFOracle,
    config: &InitConfig,
    state: &mut SearchState,
) -> Result<StageTrace> {
    use rand::Rng;
    let (lo, hi) = active_scale_range(config, state.reduced);
    let cameras = config.init_cameras(ctx.look_at, active_radius(config, state.reduced));
    let mut radius = ctx.sphere_radius;
    let mut attempt = 0;
    loop {
        let candidates: Vec<(Vector3<f64>, f64)> = (0..config.joint_samples)
            .map(|_| {
                let t = ctx.sphere_center + radius * uniform_sphere_dir(&mut state.rng);
                let s = state.rng.random_range(lo..hi);
                (t, s)
            })
            .collect();
        let scores = evaluate_candidates(
            ctx,
            oracle,
            &cameras,
            config.visibility_exponent,
            true,
            &candidates,
            true,
        )?;
        let best = scores
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.f_trans.map(|ft| (i, ft)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let pruned_count = scores.iter().filter(|c| c.pruned.is_some()).count();
        let scored_calls = scores.iter().filter(|c| c.f.is_some()).count();
        match best {
            Some((i, _)) => {
                state.translation = scores[i].translation;
                state.scale = scores[i].scale;
                return Ok(StageTrace {
                    stage: Stage::Joint,
                    candidates: scores,
                    chosen_translation: state.translation,
                    chosen_scale: state.scale,
                    radius_switched: false,
                    scored_calls,
                    pruned_count,
                });
            }
            None => {
                attempt += 1;
                if attempt > config.resample_attempts {
                    return Err(Error::Sampling(format!(
                        "all joint candidates pruned after {attempt} attempts"
                    )));
                }
                radius *= 1.1;
            }
        }
    }
}

/// Structured Monte-Carlo initialization of one interaction: joint sampling,
/// then alternating translation and scale rounds, rotation fixed to the
/// identity quaternion throughout.
pub fn structured_init(
    scene: &Scene,
    anchor_id: &str,
    child_id: &str,
    oracle: &dyn CLFOracle,
    config: &InitConfig,
    seed: u64,
) -> Result<InitOutcome> {
    config.validate()?;
    let interaction = scene.interaction(anchor_id, child_id)?;
    if interaction.status != InteractionStatus::Unset {
        return Err(Error::Validation(format!(
            "interaction {anchor_id},{child_id} is already {:?}",
            interaction.status
        )));
    }
    let ctx = build_context(scene, anchor_id, child_id, config, seed)?;
    let mut state = SearchState {
        reduced: false,
        translation: ctx.sphere_center,
        scale: 0.5 * (config.scale_range_primary.0 + config.scale_range_primary.1),
        rng: <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
    };
    let mut trace = Vec::new();
    trace.push(joint_step(&ctx, oracle, config, &mut state)?);
    for round in 0..config.alternating_rounds {
        trace.push(sample_translation_step(&ctx, oracle, config, &mut state, round)?);
        trace.push(sample_scale_step(&ctx, oracle, config, &mut state, round)?);
    }
    let total_scored_calls = trace.iter().map(|t| t.scored_calls).sum();
    let total_pruned = trace.iter().map(|t| t.pruned_count).sum();
    let mut params = interaction.clone();
    params.rotation = nalgebra::Quaternion::new(1.0, 0.0, 0.0, 0.0);
    params.translation = state.translation;
    params.scale = state.scale;
    params.status = InteractionStatus::Initialized;
    Ok(InitOutcome {
        params,
        trace,
        total_scored_calls,
        total_pruned,
    })
}

/// Standalone scale sampling (one step), exposed for tests and tooling.
pub fn sample_scale(
    scene: &Scene,
    anchor_id: &str,
    child_id: &str,
    oracle: &dyn CLFOracle,
    config: &InitConfig,
    seed: u64,
) -> Result<(f64, bool)> {
    let interaction = scene.interaction(anchor_id, child_id)?;
    let ctx = build_context(scene, anchor_id, child_id, config, seed)?;
    let mut state = SearchState {
        reduced: false,
        translation: interaction.translation,
        scale: interaction.scale,
        rng: <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
    };
    let trace = sample_scale_step(&ctx, oracle, config, &mut state, 0)?;
    Ok((state.scale, trace.radius_switched))
}

/// Standalone translation sampling (one step).
pub fn sample_translation(
    scene: &Scene,
    anchor_id: &str,
    child_id: &str,
    oracle: &dyn CLFOracle,
    config: &InitConfig,
    seed: u64,
) -> Result<Vector3<f64>> {
    let interaction = scene.interaction(anchor_id, child_id)?;
    let ctx = build_context(scene, anchor_id, child_id, config, seed)?;
    let mut state = SearchState {
        reduced: false,
        translation: interaction.translation,
        scale: interaction.scale,
        rng: <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
    };
    sample_translation_step(&ctx, oracle, config, &mut state, 0)?;
    Ok(state.translation)
}

/// Standalone joint sampling (one step, no averaging).
pub fn joint_init(
    scene: &Scene,
    anchor_id: &str,
    child_id: &str,
    oracle: &dyn CLFOracle,
    config: &InitConfig,
    seed: u64,
) -> Result<(Vector3<f64>, f64)> {
    let ctx = build_context(scene, anchor_id, child_id, config, seed)?;
    let mut state = SearchState {
        reduced: false,
        translation: ctx.sphere_center,
        scale: 0.5 * (config.scale_range_primary.0 + config.scale_range_primary.1),
        rng: <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
    };
    joint_step(&ctx, oracle, config, &mut state)?;
    Ok((state.translation, state.scale))
}

/// Synthetic configurational likelihood with a planted optimum:
/// ||t - target_t||^2 + 10 (s - target_s)^2 + Gaussian noise, the noise
/// deterministic per (candidate, seed).
pub struct SyntheticClf {
    pub target_t: Vector3<f64>,
    pub target_s: f64,
    pub noise_sd: f64,
    base_seed: u64,
    calls: AtomicUsize,
}

pub fn synthetic_clf(target_t: Vector3<f64>, target_s: f64, noise_sd: f64, seed: u64) -> SyntheticClf {
    SyntheticClf {
        target_t,
        target_s,
        noise_sd,
        base_seed: seed,
        calls: AtomicUsize::new(0),
    }
}

impl SyntheticClf {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn noise(&self, t: &Vector3<f64>, s: f64, seed: u64, view: u64) -> f64 {
        if self.noise_sd == 0.0 {
            return 0.0;
        }
        // FNV-1a over the candidate bits, both seeds, and the view index.
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.base_seed);
        eat(seed);
        eat(view);
        eat(t.x.to_bits());
        eat(t.y.to_bits());
        eat(t.z.to_bits());
        eat(s.to_bits());
        // Box-Muller from two uniforms derived from the hash.
        let u1 = ((h >> 11) as f64 / (1u64 << 53) as f64).max(1e-12);
        let h2 = h.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(31);
        let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        self.noise_sd * z
    }
}

impl CLFOracle for SyntheticClf {
    fn capabilities(&self) -> OracleCaps {
        OracleCaps::ScoreOnly
    }

    /// Per-view scores are averaged, matching how view-backed likelihoods
    /// aggregate over the init cameras; with no views attached a single
    /// noise draw is used.
    fn score(&self, req: &ScoreRequest<'_>) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let d = req.translation - self.target_t;
        let ds = req.scale - self.target_s;
        let base = d.norm_squared() + 10.0 * ds * ds;
        let noise = if req.views.is_empty() {
            self.noise(&req.translation, req.scale, req.seed, 0)
        } else {
            let sum: f64 = (0..req.views.len())
                .map(|v| self.noise(&req.translation, req.scale, req.seed, v as u64))
                .sum();
            sum / req.views.len() as f64
        };
        Ok(base + noise)
    }
}

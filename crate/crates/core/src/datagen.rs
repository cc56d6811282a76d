//! Random load profiles, rod excitation, surrogate training transients,
//! and last-minute-change scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};
use crate::io::hash_json;
use crate::ocp::{axial_offset, ControlBox, CostKind, OcpSpec};
use crate::optim::StepRule;
use crate::pwr::{PwrModel, Trajectory};
use crate::warmstart::{shift_init, refine_full, BcExample, Perturbation, Scenario};

/// Ramp-and-hold load profile family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSampling {
    pub min_segments: usize,
    pub max_segments: usize,
    /// Load levels as fractions of `p_nom`.
    pub level_min: f64,
    pub level_max: f64,
    /// Ramp rate bounds in fractions of `p_nom` per minute.
    pub rate_min: f64,
    pub rate_max: f64,
}

impl Default for LoadSampling {
    fn default() -> Self {
        Self {
            min_segments: 1,
            max_segments: 4,
            level_min: 0.3,
            level_max: 1.0,
            rate_min: 0.005,
            rate_max: 0.05,
        }
    }
}

/// One hold level reached from the previous one by a linear ramp starting at
/// `start_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSegment {
    pub start_s: f64,
    pub level: f64,
    /// Ramp rate in load units per second.
    pub rate: f64,
}

/// Builds the piecewise ramp-and-hold profile sampled at the start of each
/// control interval.
pub fn ramp_and_hold(initial: f64, segments: &[LoadSegment], n: usize, dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut level = initial;
    let mut t_prev = 0.0;
    let mut seg = 0;
    let mut target = initial;
    let mut rate = 0.0;
    for k in 0..n {
        let t = k as f64 * dt;
        // advance through every breakpoint passed since the previous sample
        loop {
            let next_break = segments.get(seg).map_or(f64::INFINITY, |s| s.start_s);
            let upto = t.min(next_break);
            if upto > t_prev {
                let span = upto - t_prev;
                let delta = target - level;
                level += delta.signum() * (rate * span).min(delta.abs());
                t_prev = upto;
            }
            if next_break <= t {
                target = segments[seg].level;
                rate = segments[seg].rate;
                seg += 1;
            } else {
                break;
            }
        }
        out.push(level);
    }
    out
}

pub fn sample_load_profile(rng: &mut ChaCha8Rng, n: usize, dt: f64, p_nom: f64, cfg: &LoadSampling) -> Vec<f64> {
    let segments = rng.gen_range(cfg.min_segments..=cfg.max_segments.max(cfg.min_segments));
    let initial = p_nom * rng.gen_range(cfg.level_min..=cfg.level_max);
    let horizon = n as f64 * dt;
    let mut starts: Vec<f64> = (1..segments).map(|_| rng.gen_range(0.0..horizon)).collect();
    starts.sort_by(f64::total_cmp);
    let segs: Vec<LoadSegment> = starts
        .into_iter()
        .map(|start_s| LoadSegment {
            start_s,
            level: p_nom * rng.gen_range(cfg.level_min..=cfg.level_max),
            rate: p_nom * rng.gen_range(cfg.rate_min..=cfg.rate_max) / 60.0,
        })
        .collect();
    ramp_and_hold(initial, &segs, n, dt)
        .into_iter()
        .map(|v| v.clamp(cfg.level_min * p_nom, cfg.level_max * p_nom))
        .collect()
}

/// Zero-mean bounded random walk on the rod speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RodExcitation {
    /// Steps between speed changes (3 × 10 min = 30 min).
    pub hold_steps: usize,
    /// Standard deviation of a speed increment, as a fraction of `u_max`.
    pub step_std: f64,
    /// Half-width of the rod band around `h_ref` outside which the walk is
    /// turned back toward the band.
    pub band_half_width: f64,
}

impl Default for RodExcitation {
    fn default() -> Self {
        Self {
            hold_steps: 3,
            step_std: 0.5,
            band_half_width: 150.0,
        }
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let mut x = (v - lo).rem_euclid(2.0 * span);
    if x > span {
        x = 2.0 * span - x;
    }
    lo + x
}

/// Rod-speed sequence of length `n` starting from position `h0`.
pub fn sample_rod_speeds(rng: &mut ChaCha8Rng, model: &PwrModel, h0: f64, n: usize, dt: f64, cfg: &RodExcitation) -> Vec<f64> {
    let p = model.params();
    let sigma = cfg.step_std * p.u_max.abs().min(p.u_min.abs());
    let normal = rand_distr::Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut u = 0.0;
    let mut h = h0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k % cfg.hold_steps.max(1) == 0 {
            u = reflect(u + rng.sample(normal), p.u_min, p.u_max);
            let off = h - p.h_ref;
            if off.abs() > cfg.band_half_width && off * u > 0.0 {
                u = -u;
            }
        }
        out.push(u);
        h = (h + u * dt).clamp(p.h_min, p.h_max);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SurrogateTraining,
    BcTraining,
    BenchSuite,
}

/// Bookkeeping shared by every generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub count: usize,
    pub dt: f64,
    pub horizon: usize,
    pub seed: u64,
    pub params_hash: String,
    /// Simulator RK4 sub-steps spent producing the dataset, retries included.
    pub simulator_calls: u64,
    pub retries: usize,
    pub files: Vec<String>,
}

impl DatasetManifest {
    pub fn calls_per_item(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.simulator_calls as f64 / self.count as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.files.is_empty() && self.files.len() != self.count {
            return Err(SdoError::Dataset(format!(
                "manifest lists {} files for {} items",
                self.files.len(),
                self.count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateDataConfig {
    pub count: usize,
    pub steps: usize,
    pub load: LoadSampling,
    pub rods: RodExcitation,
    pub max_retries: usize,
}

impl Default for SurrogateDataConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            steps: 144,
            load: LoadSampling::default(),
            rods: RodExcitation::default(),
            max_retries: 3,
        }
    }
}

/// Random transients from steady state: a sampled load profile and a rod
/// random walk, `steps` intervals each. The model's counter is charged for
/// every simulation, failed attempts included.
pub fn gen_surrogate_trajectories(
    model: &PwrModel,
    cfg: &SurrogateDataConfig,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Trajectory>, usize)> {
    if cfg.count == 0 {
        return Err(SdoError::Config("dataset count must be >= 1".into()));
    }
    let p_nom = model.params().p_nom;
    let mut out = Vec::with_capacity(cfg.count);
    let mut retries = 0;
    for i in 0..cfg.count {
        let mut attempt = 0;
        loop {
            let w = sample_load_profile(rng, cfg.steps, dt, p_nom, &cfg.load);
            let x0 = model.steady_state(w[0]);
            let traj = x0.and_then(|x0| {
                let u = sample_rod_speeds(rng, model, x0.h_cr, cfg.steps, dt, &cfg.rods);
                model.simulate(&x0, &u, &w, dt)
            });
            match traj {
                Ok(t) => {
                    out.push(t);
                    break;
                }
                Err(e) if attempt < cfg.max_retries => {
                    log::warn!("trajectory {i}: {e}; resampling");
                    attempt += 1;
                    retries += 1;
                }
                Err(e) => return Err(SdoError::Dataset(format!("trajectory {i} failed {} times: {e}", attempt + 1))),
            }
        }
    }
    Ok((out, retries))
}

/// Distribution of last-minute-change scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Initial steady-state load range, fractions of `p_nom`.
    pub w0_min: f64,
    pub w0_max: f64,
    /// Intervals simulated under random rod motion before the change.
    pub prefix_steps: usize,
    pub prefix_rods: RodExcitation,
    /// Closed-loop intervals after the random prefix, each solved from the
    /// shifted previous solution; the last solve is the pre-change plan.
    pub closed_loop_steps: usize,
    pub load: LoadSampling,
    /// Projected-descent iterations used to solve the pre-change problem.
    pub expert_iterations: usize,
    /// New level range and minimum size of a load change.
    pub change_level_min: f64,
    pub change_level_max: f64,
    pub change_min_size: f64,
    /// Latest start of the changed ramp, in hours after the change.
    pub change_start_max_h: f64,
    /// Scenarios starting with `|AO - ao_ref|` above this are resampled.
    pub max_start_ao_offset: f64,
    pub history: usize,
    pub max_retries: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            w0_min: 0.5,
            w0_max: 1.0,
            prefix_steps: 36,
            prefix_rods: RodExcitation {
                hold_steps: 3,
                step_std: 0.3,
                band_half_width: 60.0,
            },
            closed_loop_steps: 6,
            load: LoadSampling {
                min_segments: 2,
                max_segments: 3,
                level_min: 0.5,
                ..LoadSampling::default()
            },
            expert_iterations: 50,
            change_level_min: 0.3,
            change_level_max: 1.0,
            change_min_size: 0.15,
            change_start_max_h: 2.0,
            max_start_ao_offset: 0.03,
            history: 2,
            max_retries: 20,
        }
    }
}

/// Draws one scenario: steady state, random prefix, pre-change solve at
/// `k - 1`, first move applied, then the requested perturbation at `k`.
pub fn sample_scenario(
    model: &PwrModel,
    base: &OcpSpec,
    cfg: &ScenarioConfig,
    perturbation: Perturbation,
    id: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Scenario> {
    base.validate()?;
    let p = model.params();
    let (n, dt) = (base.horizon, base.dt);
    let bx = ControlBox::from_params(p);
    let rule = StepRule::default();
    let mut last_err = None;
    for _ in 0..=cfg.max_retries {
        let w0 = p.p_nom * rng.gen_range(cfg.w0_min..=cfg.w0_max);
        let m = cfg.closed_loop_steps.max(1);
        let total = cfg.prefix_steps + m + n;
        let mut load = LoadSampling { ..cfg.load.clone() };
        load.level_min = load.level_min.min(w0 / p.p_nom);
        let mut full = sample_load_profile(rng, total, dt, p.p_nom, &load);
        // pin the profile start to the steady-state load
        let shift = w0 - full[0];
        for v in &mut full {
            *v = (*v + shift).clamp(cfg.load.level_min.min(w0) * p.p_nom, p.p_nom);
        }
        let prev_kind = if rng.gen_bool(0.5) {
            CostKind::AxialOffsetTarget
        } else {
            CostKind::BoronSmoothness
        };
        let attempt = (|| -> Result<Option<Scenario>> {
            let x_start = model.steady_state(full[0])?;
            let u_pre = sample_rod_speeds(rng, model, x_start.h_cr, cfg.prefix_steps, dt, &cfg.prefix_rods);
            let prefix = model.simulate(&x_start, &u_pre, &full[..cfg.prefix_steps], dt)?;
            let mut past = prefix.states;
            let mut x_prev = past.last().expect("non-empty prefix").clone();
            let mut plan = vec![0.0; n];
            let mut t = cfg.prefix_steps;
            let prev_spec = base.clone().with_cost(prev_kind);
            let (mut prev_w, mut x_now);
            loop {
                prev_w = full[t..t + n].to_vec();
                let u0 = if t == cfg.prefix_steps { plan.clone() } else { shift_init(&plan, &bx).into_inner() };
                plan = refine_full(model, &u0, &x_prev, &prev_w, &prev_spec, cfg.expert_iterations, &rule, 1)?
                    .u
                    .into_inner();
                x_now = model.step(&x_prev, plan[0], prev_w[0], dt)?;
                past.push(x_now.clone());
                t += 1;
                if t == cfg.prefix_steps + m {
                    break;
                }
                x_prev = x_now;
            }
            let ao = axial_offset(&x_now.power)?;
            if (ao - base.ao_ref).abs() > cfg.max_start_ao_offset {
                return Ok(None);
            }
            let forecast = full[t..t + n].to_vec();
            let (w, spec) = match perturbation {
                Perturbation::CostChange => (forecast, prev_spec.clone().with_cost(prev_kind.swapped())),
                Perturbation::LoadChange => {
                    let current = prev_w[0];
                    let mut level = current;
                    for _ in 0..100 {
                        level = p.p_nom * rng.gen_range(cfg.change_level_min..=cfg.change_level_max);
                        if (level - current).abs() >= cfg.change_min_size * p.p_nom {
                            break;
                        }
                    }
                    let seg = LoadSegment {
                        start_s: rng.gen_range(0.0..=cfg.change_start_max_h * 3600.0),
                        level,
                        rate: p.p_nom * rng.gen_range(cfg.load.rate_min..=cfg.load.rate_max) / 60.0,
                    };
                    (ramp_and_hold(current, &[seg], n, dt), prev_spec.clone())
                }
            };
            let history = past[past.len().saturating_sub(cfg.history.max(1))..].to_vec();
            Ok(Some(Scenario {
                id,
                history,
                w,
                spec,
                perturbation,
                prev_w,
                prev_spec,
                prev_solution: plan,
            }))
        })();
        match attempt {
            Ok(Some(s)) => {
                debug_assert!(s.prev_solution.iter().all(|&u| bx.contains(u)));
                return Ok(s);
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("scenario {id}: {e}; resampling");
                last_err = Some(e);
            }
        }
    }
    Err(SdoError::Dataset(format!(
        "scenario {id}: no admissible draw after {} attempts{}",
        cfg.max_retries + 1,
        last_err.map(|e| format!(" (last error: {e})")).unwrap_or_default()
    )))
}

/// Benchmark suite with an even split of the two perturbation kinds.
pub fn gen_bench_suite(
    model: &PwrModel,
    base: &OcpSpec,
    cfg: &ScenarioConfig,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Scenario>> {
    if count == 0 {
        return Err(SdoError::Config("scenario count must be >= 1".into()));
    }
    (0..count)
        .map(|i| {
            let kind = if i % 2 == 0 {
                Perturbation::LoadChange
            } else {
                Perturbation::CostChange
            };
            sample_scenario(model, base, cfg, kind, i, rng)
        })
        .collect()
}

/// Scenarios labelled with an expert solution of their (post-change)
/// problem: `expert_iterations` projected-descent steps from the cold start.
pub fn gen_bc_examples(
    model: &PwrModel,
    base: &OcpSpec,
    cfg: &ScenarioConfig,
    count: usize,
    expert_iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BcExample>> {
    let rule = StepRule::default();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let kind = if rng.gen_bool(0.5) {
            Perturbation::LoadChange
        } else {
            Perturbation::CostChange
        };
        let scenario = sample_scenario(model, base, cfg, kind, i, rng)?;
        let n = scenario.spec.horizon;
        match refine_full(model, &vec![0.0; n], scenario.x0(), &scenario.w, &scenario.spec, expert_iterations, &rule, 1) {
            Ok(r) => out.push(BcExample {
                scenario,
                u_star: r.u.into_inner(),
            }),
            Err(e) => log::warn!("expert solve for example {i} failed: {e}"),
        }
    }
    Ok(out)
}

/// Seed of the stream used for one dataset kind, so that datasets drawn
/// from the same run seed are independent.
pub fn stream_seed(seed: u64, kind: DatasetKind) -> u64 {
    let salt: u64 = match kind {
        DatasetKind::SurrogateTraining => 0x5u64 << 56 | 0x0001,
        DatasetKind::BcTraining => 0xbu64 << 56 | 0x0002,
        DatasetKind::BenchSuite => 0xeu64 << 56 | 0x0003,
    };
    seed ^ salt
}

fn manifest(model: &PwrModel, kind: DatasetKind, count: usize, dt: f64, horizon: usize, seed: u64, retries: usize) -> Result<DatasetManifest> {
    Ok(DatasetManifest {
        kind,
        count,
        dt,
        horizon,
        seed,
        params_hash: hash_json(model.params())?,
        simulator_calls: model.counter().get(),
        retries,
        files: Vec::new(),
    })
}

/// Surrogate training transients with their call accounting.
pub fn surrogate_dataset(
    model: &PwrModel,
    cfg: &SurrogateDataConfig,
    dt: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, DatasetManifest)> {
    let model = model.detached();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, DatasetKind::SurrogateTraining));
    let (trajs, retries) = gen_surrogate_trajectories(&model, cfg, dt, &mut rng)?;
    let m = manifest(&model, DatasetKind::SurrogateTraining, trajs.len(), dt, cfg.steps, seed, retries)?;
    Ok((trajs, m))
}

/// Benchmark scenarios; the calls cover scenario construction.
pub fn bench_dataset(
    model: &PwrModel,
    base: &OcpSpec,
    cfg: &ScenarioConfig,
    count: usize,
    seed: u64,
) -> Result<(Vec<Scenario>, DatasetManifest)> {
    let model = model.detached();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, DatasetKind::BenchSuite));
    let suite = gen_bench_suite(&model, base, cfg, count, &mut rng)?;
    let m = manifest(&model, DatasetKind::BenchSuite, suite.len(), base.dt, base.horizon, seed, 0)?;
    Ok((suite, m))
}

/// Behaviour-cloning examples; the calls cover scenario construction and
/// the expert solves.
pub fn bc_dataset(
    model: &PwrModel,
    base: &OcpSpec,
    cfg: &ScenarioConfig,
    count: usize,
    expert_iterations: usize,
    seed: u64,
) -> Result<(Vec<BcExample>, DatasetManifest)> {
    let model = model.detached();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, DatasetKind::BcTraining));
    let ex = gen_bc_examples(&model, base, cfg, count, expert_iterations, &mut rng)?;
    let failed = count - ex.len();
    let m = manifest(&model, DatasetKind::BcTraining, ex.len(), base.dt, base.horizon, seed, failed)?;
    Ok((ex, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_segment_is_constant() {
        let cfg = LoadSampling {
            max_segments: 1,
            level_min: 1.0,
            level_max: 1.0,
            ..LoadSampling::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = sample_load_profile(&mut rng, 144, 600.0, 1.0, &cfg);
        assert!(w.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn profiles_stay_in_range_and_respect_ramp_rate() {
        let cfg = LoadSampling::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let w = sample_load_profile(&mut rng, 144, 600.0, 1.0, &cfg);
            assert!(w.iter().all(|v| (0.3..=1.0).contains(v)));
            for pair in w.windows(2) {
                assert!((pair[1] - pair[0]).abs() <= 0.05 / 60.0 * 600.0 + 1e-12);
            }
        }
    }

    #[test]
    fn profiles_are_reproducible() {
        let cfg = LoadSampling::default();
        let a = sample_load_profile(&mut ChaCha8Rng::seed_from_u64(7), 48, 600.0, 1.0, &cfg);
        let b = sample_load_profile(&mut ChaCha8Rng::seed_from_u64(7), 48, 600.0, 1.0, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn ramp_reaches_and_holds_level() {
        // 1.0 -> 0.7 at 1 %/min starting at t = 600 s: 30 min of ramp
        let seg = LoadSegment {
            start_s: 600.0,
            level: 0.7,
            rate: 0.01 / 60.0,
        };
        let w = ramp_and_hold(1.0, &[seg], 8, 600.0);
        let expected = [1.0, 1.0, 0.9, 0.8, 0.7, 0.7, 0.7, 0.7];
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn reflection_stays_in_box() {
        for v in [-0.3, -0.05, 0.0, 0.049, 0.07, 0.26] {
            let r = reflect(v, -0.05, 0.05);
            assert!((-0.05..=0.05).contains(&r));
        }
        assert!((reflect(0.07, -0.05, 0.05) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn rod_walk_is_admissible() {
        let model = PwrModel::new(Default::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = sample_rod_speeds(&mut rng, &model, 500.0, 500, 600.0, &RodExcitation::default());
        let p = model.params();
        assert!(u.iter().all(|v| (p.u_min..=p.u_max).contains(v)));
        for chunk in u.chunks(3) {
            assert!(chunk.iter().all(|v| *v == chunk[0]));
        }
    }
}

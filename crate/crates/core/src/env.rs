//! Slice-allocation environment.
//!
//! Every step each mobile device (MD) produces one task intent. The network
//! assigns one slice per MD; an assignment succeeds when the slice's uplink
//! rate and CPU rate meet both of the intent's deadlines. Rewards are `+rho`
//! per satisfied MD and `-rho` otherwise; the team reward is their sum.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AppClass {
    Urllc,
    Embb,
}

impl AppClass {
    pub fn index(self) -> usize {
        match self {
            AppClass::Urllc => 0,
            AppClass::Embb => 1,
        }
    }
}

/// One task request generated by an MD at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentInstance {
    pub app_class: AppClass,
    /// Task size in bits.
    pub task_size_bits: f64,
    /// CPU cycles needed per task bit.
    pub cycles_per_bit: f64,
    /// Maximum tolerated uplink time (s).
    pub uplink_deadline_s: f64,
    /// Maximum tolerated computation time (s).
    pub compute_deadline_s: f64,
    /// Carried for completeness; not scored.
    pub storage_bits: f64,
    /// Carried for completeness; not scored.
    pub reliability: f64,
}

/// Closed interval `[min, max]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::Config(format!("{name}: bounds must be finite")));
        }
        if self.min <= 0.0 {
            return Err(Error::Config(format!(
                "{name}: lower bound must be positive, got {}",
                self.min
            )));
        }
        if self.min > self.max {
            return Err(Error::Config(format!(
                "{name}: min {} > max {}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

impl TryFrom<[f64; 2]> for UniformRange {
    type Error = String;
    fn try_from(v: [f64; 2]) -> std::result::Result<Self, String> {
        Ok(Self::new(v[0], v[1]))
    }
}

impl From<UniformRange> for [f64; 2] {
    fn from(r: UniformRange) -> Self {
        [r.min, r.max]
    }
}

/// Sampling ranges for every intent field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentRanges {
    pub task_size_bits: UniformRange,
    pub cycles_per_bit: UniformRange,
    pub uplink_deadline_s: UniformRange,
    pub compute_deadline_s: UniformRange,
    pub storage_bits: UniformRange,
    pub reliability: UniformRange,
}

impl Default for IntentRanges {
    fn default() -> Self {
        Self {
            task_size_bits: UniformRange::new(100.0, 500.0),
            cycles_per_bit: UniformRange::new(1e2, 5e4),
            uplink_deadline_s: UniformRange::new(1e-2, 5e-2),
            compute_deadline_s: UniformRange::new(1e-2, 5e-2),
            storage_bits: UniformRange::new(200.0, 600.0),
            reliability: UniformRange::new(5e-5, 1e-2),
        }
    }
}

impl IntentRanges {
    pub fn validate(&self) -> Result<()> {
        self.task_size_bits.validate("task_size_bits")?;
        self.cycles_per_bit.validate("cycles_per_bit")?;
        self.uplink_deadline_s.validate("uplink_deadline_s")?;
        self.compute_deadline_s.validate("compute_deadline_s")?;
        self.storage_bits.validate("storage_bits")?;
        self.reliability.validate("reliability")?;
        Ok(())
    }

    /// The hardest intent the ranges can produce (largest task, most cycles,
    /// tightest deadlines).
    pub fn worst_case(&self) -> IntentInstance {
        IntentInstance {
            app_class: AppClass::Urllc,
            task_size_bits: self.task_size_bits.max,
            cycles_per_bit: self.cycles_per_bit.max,
            uplink_deadline_s: self.uplink_deadline_s.min,
            compute_deadline_s: self.compute_deadline_s.min,
            storage_bits: self.storage_bits.max,
            reliability: self.reliability.min,
        }
    }
}

/// Draws one intent. Fields are drawn in declaration order so a given rng
/// state always yields the same intent.
pub fn sample_intent<R: Rng + ?Sized>(rng: &mut R, ranges: &IntentRanges) -> IntentInstance {
    let app_class = if rng.gen_bool(0.5) {
        AppClass::Urllc
    } else {
        AppClass::Embb
    };
    IntentInstance {
        app_class,
        task_size_bits: ranges.task_size_bits.sample(rng),
        cycles_per_bit: ranges.cycles_per_bit.sample(rng),
        uplink_deadline_s: ranges.uplink_deadline_s.sample(rng),
        compute_deadline_s: ranges.compute_deadline_s.sample(rng),
        storage_bits: ranges.storage_bits.sample(rng),
        reliability: ranges.reliability.sample(rng),
    }
}

/// Capabilities of one network slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    /// 1-based identifier, unique within a catalog.
    pub slice_id: usize,
    pub uplink_rate_bps: f64,
    pub cpu_rate_hz: f64,
}

/// Time to push the task over the slice's uplink.
pub fn uplink_time(intent: &IntentInstance, slice: &SliceSpec) -> Result<f64> {
    if !(slice.uplink_rate_bps > 0.0) {
        return Err(Error::Domain(format!(
            "slice {} has non-positive uplink rate {}",
            slice.slice_id, slice.uplink_rate_bps
        )));
    }
    Ok(intent.task_size_bits / slice.uplink_rate_bps)
}

/// Time to execute the task on the slice's CPU share.
pub fn compute_time(intent: &IntentInstance, slice: &SliceSpec) -> Result<f64> {
    if !(slice.cpu_rate_hz > 0.0) {
        return Err(Error::Domain(format!(
            "slice {} has non-positive cpu rate {}",
            slice.slice_id, slice.cpu_rate_hz
        )));
    }
    Ok(intent.task_size_bits * intent.cycles_per_bit / slice.cpu_rate_hz)
}

/// Both deadlines met, boundaries inclusive.
pub fn is_satisfied(intent: &IntentInstance, slice: &SliceSpec) -> Result<bool> {
    let up = uplink_time(intent, slice)?;
    let comp = compute_time(intent, slice)?;
    Ok(up <= intent.uplink_deadline_s && comp <= intent.compute_deadline_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCatalog {
    slices: Vec<SliceSpec>,
}

impl SliceCatalog {
    /// Builds a catalog, checking ids and rates. Coverage against an intent
    /// range is checked separately by [`SliceCatalog::check_coverage`].
    pub fn new(slices: Vec<SliceSpec>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::Config("slice catalog is empty".into()));
        }
        for (i, s) in slices.iter().enumerate() {
            if !(s.uplink_rate_bps > 0.0 && s.uplink_rate_bps.is_finite()) {
                return Err(Error::Config(format!(
                    "slice {}: uplink rate must be positive",
                    s.slice_id
                )));
            }
            if !(s.cpu_rate_hz > 0.0 && s.cpu_rate_hz.is_finite()) {
                return Err(Error::Config(format!(
                    "slice {}: cpu rate must be positive",
                    s.slice_id
                )));
            }
            if slices[..i].iter().any(|o| o.slice_id == s.slice_id) {
                return Err(Error::Config(format!("duplicate slice id {}", s.slice_id)));
            }
        }
        Ok(Self { slices })
    }

    /// `m` slices with uplink rates log-spaced over [5e3, 1e5] bps and CPU
    /// rates log-spaced over [1e6, 5e9] Hz, weakest first.
    pub fn log_spaced(m: usize) -> Result<Self> {
        Self::log_spaced_between(m, (5e3, 1e5), (1e6, 5e9))
    }

    pub fn log_spaced_between(m: usize, rate: (f64, f64), cpu: (f64, f64)) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("number of slices must be >= 1".into()));
        }
        let interp = |lo: f64, hi: f64, i: usize| {
            if m == 1 {
                hi
            } else {
                let frac = i as f64 / (m - 1) as f64;
                (lo.ln() + frac * (hi.ln() - lo.ln())).exp()
            }
        };
        let slices = (0..m)
            .map(|i| SliceSpec {
                slice_id: i + 1,
                uplink_rate_bps: interp(rate.0, rate.1, i),
                cpu_rate_hz: interp(cpu.0, cpu.1, i),
            })
            .collect();
        Self::new(slices)
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[SliceSpec] {
        &self.slices
    }

    /// Slice by 0-based position.
    pub fn get(&self, index: usize) -> Option<&SliceSpec> {
        self.slices.get(index)
    }

    /// The catalog must be able to serve the hardest intent of `ranges`.
    pub fn check_coverage(&self, ranges: &IntentRanges) -> Result<()> {
        let need_rate = ranges.task_size_bits.max / ranges.uplink_deadline_s.min;
        let need_cpu =
            ranges.task_size_bits.max * ranges.cycles_per_bit.max / ranges.compute_deadline_s.min;
        let max_rate = self
            .slices
            .iter()
            .map(|s| s.uplink_rate_bps)
            .fold(f64::MIN, f64::max);
        let max_cpu = self
            .slices
            .iter()
            .map(|s| s.cpu_rate_hz)
            .fold(f64::MIN, f64::max);
        if max_rate < need_rate || max_cpu < need_cpu {
            return Err(Error::Config(format!(
                "catalog does not cover the worst-case intent: needs rate >= {need_rate:.4e} bps and cpu >= {need_cpu:.4e} Hz, \
                 has {max_rate:.4e} bps / {max_cpu:.4e} Hz"
            )));
        }
        let worst = ranges.worst_case();
        let mut any = false;
        for s in &self.slices {
            any |= is_satisfied(&worst, s)?;
        }
        if !any {
            return Err(Error::Config(
                "no single slice satisfies the worst-case intent".into(),
            ));
        }
        Ok(())
    }

    /// Per-slice feasibility for one intent, in catalog order.
    pub fn feasibility_mask(&self, intent: &IntentInstance) -> Result<Vec<bool>> {
        self.slices
            .iter()
            .map(|s| is_satisfied(intent, s))
            .collect()
    }

    /// 0-based indices of slices that satisfy `intent`.
    pub fn feasible_indices(&self, intent: &IntentInstance) -> Result<Vec<usize>> {
        Ok(self
            .feasibility_mask(intent)?
            .into_iter()
            .enumerate()
            .filter_map(|(i, ok)| ok.then_some(i))
            .collect())
    }
}

/// One slice per MD (0-based catalog positions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub slice_for_md: Vec<usize>,
}

impl Allocation {
    pub fn new(slice_for_md: Vec<usize>) -> Self {
        Self { slice_for_md }
    }

    /// Builds from explicit `(md, slice)` pairs, rejecting missing or duplicate MDs.
    pub fn from_pairs(num_mds: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut out: Vec<Option<usize>> = vec![None; num_mds];
        for &(md, slice) in pairs {
            let slot = out.get_mut(md).ok_or_else(|| {
                Error::Contract(format!("md index {md} out of range 0..{num_mds}"))
            })?;
            if slot.is_some() {
                return Err(Error::Contract(format!("md {md} allocated twice")));
            }
            *slot = Some(slice);
        }
        let slice_for_md = out
            .into_iter()
            .enumerate()
            .map(|(md, s)| s.ok_or_else(|| Error::Contract(format!("md {md} has no slice"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { slice_for_md })
    }

    /// Builds from a binary N x M association matrix with exactly one 1 per row.
    pub fn from_matrix(matrix: &[Vec<u8>]) -> Result<Self> {
        let mut slice_for_md = Vec::with_capacity(matrix.len());
        for (n, row) in matrix.iter().enumerate() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter_map(|(m, &y)| (y != 0).then_some(m))
                .collect();
            if ones.len() != 1 {
                return Err(Error::Contract(format!(
                    "row {n} of the association matrix has {} ones, expected 1",
                    ones.len()
                )));
            }
            slice_for_md.push(ones[0]);
        }
        Ok(Self { slice_for_md })
    }

    pub fn to_matrix(&self, num_slices: usize) -> Vec<Vec<u8>> {
        self.slice_for_md
            .iter()
            .map(|&s| (0..num_slices).map(|m| u8::from(m == s)).collect())
            .collect()
    }

    pub fn validate(&self, num_mds: usize, num_slices: usize) -> Result<()> {
        if self.slice_for_md.len() != num_mds {
            return Err(Error::Contract(format!(
                "allocation covers {} MDs, expected {num_mds}",
                self.slice_for_md.len()
            )));
        }
        if let Some((md, s)) = self
            .slice_for_md
            .iter()
            .enumerate()
            .find(|(_, &s)| s >= num_slices)
        {
            return Err(Error::Contract(format!(
                "md {md} assigned slice index {s} >= {num_slices}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub per_md_success: Vec<bool>,
    pub per_md_reward: Vec<f64>,
    pub team_reward: f64,
    /// Downlink bit per MD, equal to its success flag.
    pub downlink: Vec<bool>,
}

impl StepOutcome {
    pub fn successes(&self) -> usize {
        self.per_md_success.iter().filter(|&&s| s).count()
    }
}

/// Scores an allocation against the current intents.
pub fn score_allocation(
    catalog: &SliceCatalog,
    intents: &[IntentInstance],
    allocation: &Allocation,
    rho: f64,
) -> Result<StepOutcome> {
    allocation.validate(intents.len(), catalog.len())?;
    let per_md_success = intents
        .iter()
        .zip(&allocation.slice_for_md)
        .map(|(intent, &s)| is_satisfied(intent, &catalog.slices()[s]))
        .collect::<Result<Vec<bool>>>()?;
    let per_md_reward: Vec<f64> = per_md_success
        .iter()
        .map(|&ok| if ok { rho } else { -rho })
        .collect();
    let team_reward = per_md_reward.iter().sum();
    Ok(StepOutcome {
        downlink: per_md_success.clone(),
        per_md_success,
        per_md_reward,
        team_reward,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub num_mds: usize,
    pub episode_len: usize,
    pub reward_rho: f64,
    pub ranges: IntentRanges,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            num_mds: 5,
            episode_len: 15,
            reward_rho: 1.0,
            ranges: IntentRanges::default(),
        }
    }
}

/// Seeded environment instance. Owns its rng; nothing is shared between instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlicingEnv {
    params: EnvParams,
    catalog: SliceCatalog,
    rng: ChaCha8Rng,
    step: usize,
    intents: Vec<IntentInstance>,
    done: bool,
}

impl SlicingEnv {
    pub fn new(params: EnvParams, catalog: SliceCatalog, seed: u64) -> Result<Self> {
        Self::with_rng(params, catalog, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(params: EnvParams, catalog: SliceCatalog, rng: ChaCha8Rng) -> Result<Self> {
        params.ranges.validate()?;
        if params.num_mds == 0 {
            return Err(Error::Config("num_mds must be >= 1".into()));
        }
        if params.episode_len == 0 {
            return Err(Error::Config("episode_len must be >= 1".into()));
        }
        if !(params.reward_rho > 0.0) {
            return Err(Error::Config("reward_rho must be positive".into()));
        }
        catalog.check_coverage(&params.ranges)?;
        let mut env = Self {
            params,
            catalog,
            rng,
            step: 0,
            intents: Vec::new(),
            done: true,
        };
        env.reset();
        Ok(env)
    }

    /// Starts a new episode and draws fresh intents for every MD.
    pub fn reset(&mut self) -> &[IntentInstance] {
        self.step = 0;
        self.done = false;
        self.draw_intents();
        &self.intents
    }

    fn draw_intents(&mut self) {
        let ranges = self.params.ranges;
        let rng = &mut self.rng;
        self.intents = (0..self.params.num_mds)
            .map(|_| sample_intent(rng, &ranges))
            .collect();
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn catalog(&self) -> &SliceCatalog {
        &self.catalog
    }

    pub fn num_mds(&self) -> usize {
        self.params.num_mds
    }

    pub fn intents(&self) -> &[IntentInstance] {
        &self.intents
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Applies an allocation to the current intents. Returns the outcome and
    /// whether the episode has ended; on non-terminal steps the next intents
    /// are drawn.
    pub fn step(&mut self, allocation: &Allocation) -> Result<(StepOutcome, bool)> {
        if self.done {
            return Err(Error::Contract(format!(
                "episode already finished after {} steps; call reset",
                self.params.episode_len
            )));
        }
        let outcome = score_allocation(
            &self.catalog,
            &self.intents,
            allocation,
            self.params.reward_rho,
        )?;
        self.step += 1;
        self.done = self.step >= self.params.episode_len;
        if !self.done {
            self.draw_intents();
        }
        Ok((outcome, self.done))
    }
}

/// Per-episode success accounting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub successes: usize,
    /// Intents scored in the episode (`N * T`).
    pub decisions: usize,
    pub team_reward_sum: f64,
    pub steps: usize,
}

impl EpisodeStats {
    pub fn record(&mut self, outcome: &StepOutcome) {
        self.successes += outcome.successes();
        self.decisions += outcome.per_md_success.len();
        self.team_reward_sum += outcome.team_reward;
        self.steps += 1;
    }

    pub fn normalized_success(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.successes as f64 / self.decisions as f64
        }
    }

    pub fn normalized_failure(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            (self.decisions - self.successes) as f64 / self.decisions as f64
        }
    }

    pub fn mean_team_reward(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.team_reward_sum / self.steps as f64
        }
    }
}

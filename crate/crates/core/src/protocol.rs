//! Discrete message protocol and observation encoding.
//!
//! MDs send one uplink symbol per step from a vocabulary of opaque indices;
//! the environment answers with a one-bit downlink. Each agent observes its
//! current inputs plus a depth-`l` history of past exchanges. Observation
//! layouts are fixed for a given `(l, |U|, M)` and documented in
//! `docs/observation-layout.md`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{Allocation, IntentInstance, IntentRanges, StepOutcome, UniformRange};
use crate::error::{Error, Result};

/// Width of the encoded intent: four normalized scalars and a 2-way class one-hot.
pub const INTENT_FEATURES: usize = 6;
pub const DOWNLINK_SIZE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    uplink_size: usize,
}

impl Vocabulary {
    pub fn new(uplink_size: usize) -> Result<Self> {
        if uplink_size < 2 {
            return Err(Error::Config(format!(
                "uplink vocabulary needs >= 2 symbols, got {uplink_size}"
            )));
        }
        Ok(Self { uplink_size })
    }

    pub fn uplink_size(&self) -> usize {
        self.uplink_size
    }

    pub fn downlink_size(&self) -> usize {
        DOWNLINK_SIZE
    }

    pub fn check(&self, symbol: usize) -> Result<()> {
        if symbol >= self.uplink_size {
            return Err(Error::Contract(format!(
                "uplink symbol {symbol} outside vocabulary of size {}",
                self.uplink_size
            )));
        }
        Ok(())
    }
}

/// Named segments of an observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    CurrentIntent,
    CurrentUplink,
    PastUplink,
    PastDownlink,
    PastIntent,
    PastAllocation,
    PastSuccess,
}

impl Block {
    /// True for blocks that carry uplink messages.
    pub fn is_message(self) -> bool {
        matches!(
            self,
            Block::CurrentUplink | Block::PastUplink | Block::PastDownlink
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<(Block, usize)>,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|(_, w)| w).sum()
    }

    /// Start offset and width of the first block of kind `block`.
    pub fn span(&self, block: Block) -> Option<(usize, usize)> {
        let mut off = 0;
        for &(b, w) in &self.blocks {
            if b == block {
                return Some((off, w));
            }
            off += w;
        }
        None
    }
}

/// `[intent_t | U_{t-1..t-l} | D_{t-1..t-l} | I_{t-1..t-l}]`
pub fn md_layout(history_len: usize, vocab: &Vocabulary) -> Layout {
    Layout {
        blocks: vec![
            (Block::CurrentIntent, INTENT_FEATURES),
            (Block::PastUplink, history_len * vocab.uplink_size()),
            (Block::PastDownlink, history_len),
            (Block::PastIntent, history_len * INTENT_FEATURES),
        ],
    }
}

/// Per-MD channel of the network observation:
/// `[U_t | U_{t-1..t-l} | D_{t-1..t-l} | a_{t-1..t-l}]`
pub fn net_channel_layout(history_len: usize, vocab: &Vocabulary, num_slices: usize) -> Layout {
    Layout {
        blocks: vec![
            (Block::CurrentUplink, vocab.uplink_size()),
            (Block::PastUplink, history_len * vocab.uplink_size()),
            (Block::PastDownlink, history_len),
            (Block::PastAllocation, history_len * num_slices),
        ],
    }
}

/// Observation of a device that picks its own slice without messaging:
/// `[intent_t | own slice_{t-1..t-l} | success_{t-1..t-l}]`
pub fn self_selection_layout(history_len: usize, num_slices: usize) -> Layout {
    Layout {
        blocks: vec![
            (Block::CurrentIntent, INTENT_FEATURES),
            (Block::PastAllocation, history_len * num_slices),
            (Block::PastSuccess, history_len),
        ],
    }
}

fn normalize(v: f64, r: &UniformRange, name: &str) -> f64 {
    let clamped = if r.contains(v) {
        v
    } else {
        log::warn!("{name} = {v} outside [{}, {}], clamping", r.min, r.max);
        v.clamp(r.min, r.max)
    };
    if r.max > r.min {
        (clamped - r.min) / (r.max - r.min)
    } else {
        0.0
    }
}

/// Min-max normalizes size, cycles/bit and both deadlines against the range
/// endpoints, then appends the app-class one-hot.
pub fn encode_intent_features(
    intent: &IntentInstance,
    ranges: &IntentRanges,
) -> [f64; INTENT_FEATURES] {
    let mut out = [0.0; INTENT_FEATURES];
    out[0] = normalize(
        intent.task_size_bits,
        &ranges.task_size_bits,
        "task_size_bits",
    );
    out[1] = normalize(
        intent.cycles_per_bit,
        &ranges.cycles_per_bit,
        "cycles_per_bit",
    );
    out[2] = normalize(
        intent.uplink_deadline_s,
        &ranges.uplink_deadline_s,
        "uplink_deadline_s",
    );
    out[3] = normalize(
        intent.compute_deadline_s,
        &ranges.compute_deadline_s,
        "compute_deadline_s",
    );
    out[4 + intent.app_class.index()] = 1.0;
    out
}

/// Depth-`l` FIFO of past exchanges for one MD. Front is the most recent entry;
/// empty slots encode as zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer {
    depth: usize,
    uplink: VecDeque<Option<usize>>,
    downlink: VecDeque<Option<bool>>,
    allocation: VecDeque<Option<usize>>,
    intents: VecDeque<Option<[f64; INTENT_FEATURES]>>,
}

impl HistoryBuffer {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            uplink: VecDeque::from(vec![None; depth]),
            downlink: VecDeque::from(vec![None; depth]),
            allocation: VecDeque::from(vec![None; depth]),
            intents: VecDeque::from(vec![None; depth]),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.depth);
    }

    pub fn push(
        &mut self,
        uplink: Option<usize>,
        downlink: bool,
        allocation: usize,
        intent: [f64; INTENT_FEATURES],
    ) {
        if self.depth == 0 {
            return;
        }
        fn rotate<T>(q: &mut VecDeque<T>, v: T) {
            q.pop_back();
            q.push_front(v);
        }
        rotate(&mut self.uplink, uplink);
        rotate(&mut self.downlink, Some(downlink));
        rotate(&mut self.allocation, Some(allocation));
        rotate(&mut self.intents, Some(intent));
    }

    pub fn uplink(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.uplink.iter().copied()
    }

    pub fn downlink(&self) -> impl Iterator<Item = Option<bool>> + '_ {
        self.downlink.iter().copied()
    }

    pub fn allocations(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.allocation.iter().copied()
    }

    pub fn intents(&self) -> impl Iterator<Item = Option<[f64; INTENT_FEATURES]>> + '_ {
        self.intents.iter().copied()
    }
}

fn push_one_hot(out: &mut Vec<f64>, index: Option<usize>, width: usize) {
    let start = out.len();
    out.resize(start + width, 0.0);
    if let Some(i) = index {
        if i < width {
            out[start + i] = 1.0;
        }
    }
}

fn push_bits(out: &mut Vec<f64>, bits: impl Iterator<Item = Option<bool>>) {
    out.extend(bits.map(|b| if b == Some(true) { 1.0 } else { 0.0 }));
}

/// MD observation following [`md_layout`].
pub fn build_md_observation(
    history: &HistoryBuffer,
    intent_features: &[f64; INTENT_FEATURES],
    vocab: &Vocabulary,
) -> Vec<f64> {
    let l = history.depth();
    let mut out =
        Vec::with_capacity(INTENT_FEATURES + l * (vocab.uplink_size() + 1 + INTENT_FEATURES));
    out.extend_from_slice(intent_features);
    for u in history.uplink() {
        push_one_hot(&mut out, u, vocab.uplink_size());
    }
    push_bits(&mut out, history.downlink());
    for i in history.intents() {
        out.extend_from_slice(&i.unwrap_or([0.0; INTENT_FEATURES]));
    }
    out
}

/// Network observation, one channel per MD following [`net_channel_layout`].
pub fn build_net_observation(
    histories: &[HistoryBuffer],
    current_msgs: &[usize],
    vocab: &Vocabulary,
    num_slices: usize,
) -> Result<Vec<Vec<f64>>> {
    if histories.len() != current_msgs.len() {
        return Err(Error::Contract(format!(
            "{} histories but {} uplink messages",
            histories.len(),
            current_msgs.len()
        )));
    }
    histories
        .iter()
        .zip(current_msgs)
        .map(|(h, &msg)| {
            vocab.check(msg)?;
            let mut out =
                Vec::with_capacity(net_channel_layout(h.depth(), vocab, num_slices).dim());
            push_one_hot(&mut out, Some(msg), vocab.uplink_size());
            for u in h.uplink() {
                push_one_hot(&mut out, u, vocab.uplink_size());
            }
            push_bits(&mut out, h.downlink());
            for a in h.allocations() {
                push_one_hot(&mut out, a, num_slices);
            }
            Ok(out)
        })
        .collect()
}

/// Observation for the self-selection baseline, following [`self_selection_layout`].
pub fn build_self_observation(
    history: &HistoryBuffer,
    intent_features: &[f64; INTENT_FEATURES],
    num_slices: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(self_selection_layout(history.depth(), num_slices).dim());
    out.extend_from_slice(intent_features);
    for a in history.allocations() {
        push_one_hot(&mut out, a, num_slices);
    }
    push_bits(&mut out, history.downlink());
    out
}

/// Records one completed step in every MD's history: its uplink symbol, the
/// downlink bit, the slice it got and the intent it had.
pub fn exchange_round(
    histories: &mut [HistoryBuffer],
    md_msgs: Option<&[usize]>,
    allocation: &Allocation,
    outcome: &StepOutcome,
    intent_features: &[[f64; INTENT_FEATURES]],
) -> Result<()> {
    let n = histories.len();
    let lens = [
        allocation.slice_for_md.len(),
        outcome.downlink.len(),
        intent_features.len(),
        md_msgs.map_or(n, <[usize]>::len),
    ];
    if lens.iter().any(|&len| len != n) {
        return Err(Error::Contract(format!(
            "inconsistent MD counts in exchange round: {n} vs {lens:?}"
        )));
    }
    for (i, h) in histories.iter_mut().enumerate() {
        h.push(
            md_msgs.map(|m| m[i]),
            outcome.downlink[i],
            allocation.slice_for_md[i],
            intent_features[i],
        );
    }
    Ok(())
}

//! Synthetic two-sided marketplace with known position effects.
//!
//! Each user is randomized into `control` or `treatment`. A request shows a
//! set of distinct items ranked by
//!
//! ```text
//! score = relevance + rank_noise + 1(treatment) * instrument_strength * shift(unit)
//! ```
//!
//! and the response probability of the item at position `k` is
//!
//! ```text
//! p = base_rate + confound_strength * relevance + c_i * (k - 1)
//! ```
//!
//! so `c_i` is exactly the coefficient on position that 2SLS targets. True
//! relevance drives both the rank and the response (confounding); the arm only
//! reaches the response through the rank (exclusion). The additive confounder
//! is one admissible choice among many; nothing downstream depends on it.
//!
//! Relevance is arcsine-distributed (Beta(1/2, 1/2)) on `[0, 1]`, which
//! spreads adjacent ranks further apart than a uniform draw and lets strong
//! confounding fit inside the probability bounds.
//!
//! All randomness comes from [`SplitMix64`] streams keyed by entity, so the
//! output is identical however the users are scheduled.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    check_user_arms, Dataset, DatasetBuilder, Provenance, Schema,
};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const CONTROL: &str = "control";
pub const TREATMENT: &str = "treatment";

// Stream tags.
const ARM: u64 = 1;
const REQUEST: u64 = 2;
const PAIR: u64 = 3;
const IMPRESSION: u64 = 4;
const SLOPE: u64 = 5;
const ITEM_SHIFT: u64 = 6;
const REASON_SHIFT: u64 = 7;

/// Number of leading requests whose full potential-outcome curves are kept in [`SimTruth`].
const AUDIT_REQUESTS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketplaceMode {
    /// At most one positive response per request.
    Ads,
    /// Any number of positive responses; variable session depth; per-pair reasons.
    Pymk,
}

/// Which entity carries the arm's ranking shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstrumentUnit {
    Item,
    Reason,
}

fn default_rank_noise_sd() -> f64 {
    0.05
}

fn default_relevance_noise_sd() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_users: u64,
    pub n_items: u64,
    pub requests_per_user: u64,
    pub slots_per_request: u32,
    /// Mean of the per-item slopes `c_i` (response change per position step down).
    pub effect_slope_mean: f64,
    pub effect_slope_sd: f64,
    /// Weight of true relevance in the response probability. Negative values
    /// flip the direction of confounding.
    pub confound_strength: f64,
    /// Magnitude of the treatment arm's shift on the ranking score.
    pub instrument_strength: f64,
    /// Fraction of shift units whose rank improves under treatment.
    pub instrument_share_negative: f64,
    pub base_rate: f64,
    pub marketplace_mode: MarketplaceMode,
    pub n_reasons: u32,
    pub seed: u64,
    /// Standard deviation of the ranking-score noise.
    #[serde(default = "default_rank_noise_sd")]
    pub rank_noise_sd: f64,
    /// Standard deviation of the noise separating `relevance_score` from true relevance.
    #[serde(default = "default_relevance_noise_sd")]
    pub relevance_noise_sd: f64,
    /// Defaults to `item` in ads mode and `reason` in pymk mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument_unit: Option<InstrumentUnit>,
    /// Shallowest pymk session; defaults to `max(1, 3 * slots / 10)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_session_depth: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_users: 10_000,
            n_items: 200,
            requests_per_user: 1,
            slots_per_request: 10,
            effect_slope_mean: -0.04,
            effect_slope_sd: 0.0,
            confound_strength: 0.5,
            instrument_strength: 0.5,
            instrument_share_negative: 0.5,
            base_rate: 0.43,
            marketplace_mode: MarketplaceMode::Pymk,
            n_reasons: 22,
            seed: 0,
            rank_noise_sd: default_rank_noise_sd(),
            relevance_noise_sd: default_relevance_noise_sd(),
            instrument_unit: None,
            min_session_depth: None,
        }
    }
}

impl SimConfig {
    pub fn instrument_unit(&self) -> InstrumentUnit {
        self.instrument_unit.unwrap_or(match self.marketplace_mode {
            MarketplaceMode::Ads => InstrumentUnit::Item,
            MarketplaceMode::Pymk => InstrumentUnit::Reason,
        })
    }

    pub fn min_session_depth(&self) -> u32 {
        self.min_session_depth
            .unwrap_or_else(|| (3 * self.slots_per_request / 10).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.n_users < 1
            || self.n_items < 1
            || self.requests_per_user < 1
            || self.slots_per_request < 1
            || self.n_reasons < 1
        {
            return bad("all counts must be at least 1");
        }
        if u64::from(self.slots_per_request) > self.n_items {
            return bad("slots_per_request exceeds n_items; items in a request are distinct");
        }
        if self.n_users.checked_mul(self.requests_per_user).is_none() {
            return bad("n_users * requests_per_user overflows");
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad("base_rate must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.instrument_share_negative) {
            return bad("instrument_share_negative must lie in [0, 1]");
        }
        let finite = [
            self.effect_slope_mean,
            self.effect_slope_sd,
            self.confound_strength,
            self.instrument_strength,
            self.rank_noise_sd,
            self.relevance_noise_sd,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("real parameters must be finite");
        }
        if self.effect_slope_sd < 0.0 || self.rank_noise_sd < 0.0 || self.relevance_noise_sd < 0.0
        {
            return bad("standard deviations must be non-negative");
        }
        if let Some(d) = self.min_session_depth {
            if d < 1 || d > self.slots_per_request {
                return bad("min_session_depth must lie in [1, slots_per_request]");
            }
        }
        Ok(())
    }
}

/// Direction and size of the treatment's ranking shift for one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEffect {
    /// `-1` when the unit's rank improves (position decreases) under treatment, `+1` otherwise.
    pub direction: i8,
    /// Uniform on `[0, 1)`; multiplied by `instrument_strength`.
    pub magnitude: f64,
}

impl ShiftEffect {
    /// Additive change of the ranking score under treatment.
    fn score_shift(&self, strength: f64) -> f64 {
        -(self.direction as f64) * strength * self.magnitude
    }
}

/// Pre-clipping response probabilities of one impression at every position of its request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCurve {
    pub request_id: u64,
    pub item_id: u64,
    /// `probabilities[k - 1]` is the response probability at position `k`.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// `slopes[i - 1]` is `c_i` for item id `i`.
    pub slopes: Vec<f64>,
    pub item_shifts: Vec<ShiftEffect>,
    /// `reason_shifts[r]` belongs to reason `r{r:02}`.
    pub reason_shifts: Vec<ShiftEffect>,
    pub instrument_unit: InstrumentUnit,
    pub audit: Vec<AuditCurve>,
    pub n_rows: usize,
    pub clip_events: usize,
    pub clip_rate: f64,
}

impl SimTruth {
    pub fn mean_slope(&self) -> f64 {
        self.slopes.iter().sum::<f64>() / self.slopes.len() as f64
    }
}

/// Analytic system-level effect: mean over items of `c_i * (k2 - k1)`.
pub fn ground_truth_tau(truth: &SimTruth, k1: u32, k2: u32) -> f64 {
    truth.mean_slope() * (f64::from(k2) - f64::from(k1))
}

pub fn reason_label(r: u32) -> String {
    format!("r{r:02}")
}

fn shift_effect(seed: u64, tag: u64, id: u64, share_negative: f64) -> ShiftEffect {
    let mut g = SplitMix64::for_key(seed, &[tag, id]);
    let direction = if g.next_f64() < share_negative { -1 } else { 1 };
    ShiftEffect {
        direction,
        magnitude: g.next_f64(),
    }
}

/// Robert Floyd's algorithm: `k` distinct values from `1..=n`, sorted.
fn sample_distinct(g: &mut SplitMix64, n: u64, k: u64) -> Vec<u64> {
    let mut chosen = HashSet::with_capacity(k as usize);
    for j in (n - k + 1)..=n {
        let t = 1 + g.below(j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let mut out: Vec<u64> = chosen.into_iter().collect();
    out.sort_unstable();
    out
}

struct Impression {
    item_id: u64,
    relevance: f64,
    reason: Option<u32>,
    score: f64,
    outcome_draw: f64,
    observed_relevance: f64,
}

struct GeneratedRow {
    request_id: u64,
    user_id: u64,
    item_id: u64,
    position: u32,
    outcome: u8,
    treated: bool,
    reason: Option<u32>,
    relevance_score: f64,
    session_depth: Option<u32>,
}

struct UserOutput {
    rows: Vec<GeneratedRow>,
    audit: Vec<AuditCurve>,
    clip_events: usize,
}

struct Generator<'a> {
    cfg: &'a SimConfig,
    slopes: Vec<f64>,
    item_shifts: Vec<ShiftEffect>,
    reason_shifts: Vec<ShiftEffect>,
    unit: InstrumentUnit,
}

impl Generator<'_> {
    fn user(&self, user_id: u64) -> UserOutput {
        let cfg = self.cfg;
        let seed = cfg.seed;
        let treated = SplitMix64::for_key(seed, &[ARM, user_id]).next_f64() < 0.5;
        let pymk = cfg.marketplace_mode == MarketplaceMode::Pymk;
        let slots = cfg.slots_per_request;
        let mut out = UserOutput {
            rows: Vec::new(),
            audit: Vec::new(),
            clip_events: 0,
        };

        for r in 0..cfg.requests_per_user {
            let request_id = (user_id - 1) * cfg.requests_per_user + r + 1;
            let mut g = SplitMix64::for_key(seed, &[REQUEST, request_id]);
            let depth = if pymk {
                let lo = cfg.min_session_depth();
                let base = lo + g.below(u64::from(slots - lo + 1)) as u32;
                let deeper = g.next_f64() < (0.5 * cfg.instrument_strength.abs()).min(1.0);
                if treated && deeper {
                    (base + 1).min(slots)
                } else {
                    base
                }
            } else {
                slots
            };

            let mut shown: Vec<Impression> = sample_distinct(&mut g, cfg.n_items, u64::from(depth))
                .into_iter()
                .map(|item_id| {
                    let mut pair = SplitMix64::for_key(seed, &[PAIR, user_id, item_id]);
                    let u: f64 = pair.next_f64();
                    let relevance = (std::f64::consts::FRAC_PI_2 * u).sin().powi(2);
                    let reason = pymk.then(|| pair.below(u64::from(cfg.n_reasons)) as u32);
                    let mut imp = SplitMix64::for_key(seed, &[IMPRESSION, request_id, item_id]);
                    let shift = match (self.unit, reason) {
                        (InstrumentUnit::Reason, Some(rs)) => self.reason_shifts[rs as usize],
                        _ => self.item_shifts[(item_id - 1) as usize],
                    };
                    let score = relevance
                        + cfg.rank_noise_sd * imp.next_normal()
                        + if treated {
                            shift.score_shift(cfg.instrument_strength)
                        } else {
                            0.0
                        };
                    let outcome_draw = imp.next_f64();
                    let observed_relevance =
                        (relevance + cfg.relevance_noise_sd * imp.next_normal()).clamp(0.0, 1.0);
                    Impression {
                        item_id,
                        relevance,
                        reason,
                        score,
                        outcome_draw,
                        observed_relevance,
                    }
                })
                .collect();

            // Descending score; ties broken by item id.
            shown.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id)));

            let mut clicked = false;
            for (k, imp) in shown.iter().enumerate() {
                let position = k as u32 + 1;
                let slope = self.slopes[(imp.item_id - 1) as usize];
                let mean = cfg.base_rate + cfg.confound_strength * imp.relevance;
                let p = mean + slope * f64::from(position - 1);
                if !(0.0..=1.0).contains(&p) {
                    out.clip_events += 1;
                }
                let mut outcome = u8::from(imp.outcome_draw < p.clamp(0.0, 1.0));
                if !pymk {
                    // First success in position order wins.
                    if clicked {
                        outcome = 0;
                    }
                    clicked |= outcome == 1;
                }
                if request_id <= AUDIT_REQUESTS {
                    out.audit.push(AuditCurve {
                        request_id,
                        item_id: imp.item_id,
                        probabilities: (1..=depth)
                            .map(|kk| mean + slope * f64::from(kk - 1))
                            .collect(),
                    });
                }
                out.rows.push(GeneratedRow {
                    request_id,
                    user_id,
                    item_id: imp.item_id,
                    position,
                    outcome,
                    treated,
                    reason: imp.reason,
                    relevance_score: imp.observed_relevance,
                    session_depth: pymk.then_some(depth),
                });
            }
        }
        out
    }
}

/// Generates a dataset and its ground truth.
///
/// Rows are ordered by `(user_id, request_id, position)`.
pub fn simulate(config: &SimConfig) -> Result<(Dataset, SimTruth)> {
    config.validate()?;
    let unit = config.instrument_unit();
    let seed = config.seed;
    let slopes = (1..=config.n_items)
        .map(|i| {
            let z = SplitMix64::for_key(seed, &[SLOPE, i]).next_normal();
            config.effect_slope_mean + config.effect_slope_sd * z
        })
        .collect();
    let item_shifts = (1..=config.n_items)
        .map(|i| shift_effect(seed, ITEM_SHIFT, i, config.instrument_share_negative))
        .collect();
    let reason_shifts = (0..config.n_reasons)
        .map(|r| shift_effect(seed, REASON_SHIFT, u64::from(r), config.instrument_share_negative))
        .collect();
    let gen = Generator {
        cfg: config,
        slopes,
        item_shifts,
        reason_shifts,
        unit,
    };

    let per_user: Vec<UserOutput> = (1..=config.n_users)
        .into_par_iter()
        .map(|u| gen.user(u))
        .collect();

    let pymk = config.marketplace_mode == MarketplaceMode::Pymk;
    let schema = Schema {
        has_reason: pymk,
        has_relevance_score: true,
        has_session_depth: pymk,
    };
    let n_rows: usize = per_user.iter().map(|u| u.rows.len()).sum();
    let reasons: Vec<String> = (0..config.n_reasons).map(reason_label).collect();
    let provenance = Provenance::new(format!("simulate(seed={seed})"));
    let mut b = DatasetBuilder::with_capacity(schema, provenance, n_rows);
    let mut audit = Vec::new();
    let mut clip_events = 0;
    for u in per_user {
        for r in &u.rows {
            b.push_parts(
                r.request_id,
                r.user_id,
                r.item_id,
                r.position,
                r.outcome,
                if r.treated { TREATMENT } else { CONTROL },
                r.reason.map(|x| reasons[x as usize].as_str()),
                Some(r.relevance_score),
                r.session_depth,
            );
        }
        clip_events += u.clip_events;
        audit.extend(u.audit);
    }
    let ds = b.finish();
    debug_assert!(check_user_arms((0..ds.len()).map(|i| (ds.user_ids()[i], ds.arm(i)))).is_ok());

    let truth = SimTruth {
        slopes: gen.slopes,
        item_shifts: gen.item_shifts,
        reason_shifts: gen.reason_shifts,
        instrument_unit: unit,
        audit,
        n_rows,
        clip_events,
        clip_rate: if n_rows == 0 {
            0.0
        } else {
            clip_events as f64 / n_rows as f64
        },
    };
    Ok((ds, truth))
}

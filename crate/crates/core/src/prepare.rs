//! From raw impressions to estimation-ready designs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::datamodel::{Dataset, SessionDataset, SessionObservation};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::hash_key;
use crate::specs::{InstrumentExpr, Level, ModelSpec};

pub const INTERCEPT: &str = "const";

/// Seed used to break ties when a sliced request holds the item more than once.
const SLICE_DEDUP_SEED: u64 = 0;

/// Row indices grouped by request id, each group in canonical row order.
fn requests(ds: &Dataset) -> BTreeMap<u64, Vec<usize>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &r) in ds.request_ids().iter().enumerate() {
        groups.entry(r).or_default().push(i);
    }
    for rows in groups.values_mut() {
        rows.sort_by(|&a, &b| canonical_cmp(ds, a, b));
    }
    groups
}

/// Total order on rows by content, so choices never depend on file order.
fn canonical_cmp(ds: &Dataset, a: usize, b: usize) -> std::cmp::Ordering {
    let key = |i: usize| {
        (
            ds.positions()[i],
            ds.item_ids()[i],
            ds.user_ids()[i],
            ds.outcomes()[i],
            ds.arm(i),
            ds.reason(i),
            ds.session_depth(i),
        )
    };
    key(a)
        .cmp(&key(b))
        .then_with(|| {
            let (x, y) = (ds.relevance_score(a), ds.relevance_score(b));
            x.map(f64::to_bits).cmp(&y.map(f64::to_bits))
        })
}

/// Keeps one row per request, chosen by the smallest `hash(seed, request_id, ordinal)`.
fn keep_one_per_request(ds: &Dataset, seed: u64) -> Vec<usize> {
    let mut kept: Vec<usize> = requests(ds)
        .into_iter()
        .map(|(request, rows)| {
            let pick = (0..rows.len())
                .min_by_key(|&ord| hash_key(seed, &[request, ord as u64]))
                .expect("request groups are non-empty");
            rows[pick]
        })
        .collect();
    kept.sort_unstable();
    kept
}

/// Randomly keeps one row in each request so that observations are independent.
///
/// Rows keep their original relative order. Identical (as a multiset) for
/// any permutation of the input.
pub fn sample_one_per_request(ds: &Dataset, seed: u64) -> Dataset {
    let kept = keep_one_per_request(ds, seed);
    ds.select(
        &kept,
        ds.provenance()
            .derive(format!("sample_one_per_request(seed={seed})")),
    )
}

/// Rows of a single item, at most one per request.
pub fn slice_by_item(ds: &Dataset, item_id: u64) -> Result<Dataset> {
    let rows: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.item_ids()[i] == item_id)
        .collect();
    if rows.is_empty() {
        return Err(Error::UnknownItem(item_id));
    }
    let slice = ds.select(&rows, ds.provenance().derive(format!("slice_by_item({item_id})")));
    if slice.n_requests() == slice.len() {
        return Ok(slice);
    }
    let kept = keep_one_per_request(&slice, SLICE_DEDUP_SEED);
    Ok(slice.select(&kept, slice.provenance().clone()))
}

/// Item ids by descending row count, ties by ascending id, truncated to `n`.
pub fn top_items(ds: &Dataset, n: usize) -> Vec<u64> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &item in ds.item_ids() {
        *counts.entry(item).or_default() += 1;
    }
    let mut ranked: Vec<(u64, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(item, _)| item).collect()
}

/// One row per request: how many items sat in the top `top_cut` positions,
/// how many below, and the number of positive outcomes.
pub fn aggregate_sessions(ds: &Dataset, top_cut: u32) -> SessionDataset {
    let mut rows = Vec::new();
    for (request_id, idx) in requests(ds) {
        let first = idx[0];
        let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
        let (mut top, mut bottom, mut invites) = (0u32, 0u32, 0u32);
        for &i in &idx {
            if ds.positions()[i] <= top_cut {
                top += 1;
            } else {
                bottom += 1;
            }
            invites += u32::from(ds.outcomes()[i]);
            if let Some(r) = ds.reason(i) {
                *reasons.entry(r).or_default() += 1;
            }
        }
        // BTreeMap iterates in ascending order, so `max_by_key` keeping the
        // first maximum needs a reversed walk.
        let reason_mode = reasons
            .iter()
            .rev()
            .max_by_key(|(_, &c)| c)
            .map(|(r, _)| (*r).to_owned());
        rows.push(SessionObservation {
            request_id,
            user_id: ds.user_ids()[first],
            arm: ds.arm(first).to_owned(),
            reason_mode,
            n_top_spot: top,
            n_bottom_spot: bottom,
            invite_total: invites,
        });
    }
    SessionDataset {
        rows,
        top_cut,
        provenance: ds
            .provenance()
            .derive(format!("aggregate_sessions(top_cut={top_cut})")),
    }
}

/// Column access shared by edge- and session-level tables.
pub trait Frame {
    fn level(&self) -> Level;
    fn n_rows(&self) -> usize;
    /// A numeric column by canonical name; `None` entries are missing values.
    fn numeric(&self, column: &str) -> Result<Vec<Option<f64>>>;
    fn cluster_ids(&self, column: &str) -> Result<Vec<u64>>;
    fn arm_of(&self, row: usize) -> &str;
    fn reason_of(&self, row: usize) -> Option<&str>;
}

impl Frame for Dataset {
    fn level(&self) -> Level {
        Level::Edge
    }

    fn n_rows(&self) -> usize {
        self.len()
    }

    fn numeric(&self, column: &str) -> Result<Vec<Option<f64>>> {
        let missing = || Error::MissingColumn(column.to_owned());
        let schema = self.schema();
        Ok(match column {
            "position" => self.positions().iter().map(|&p| Some(f64::from(p))).collect(),
            "outcome" => self.outcomes().iter().map(|&o| Some(f64::from(o))).collect(),
            "relevance_score" if schema.has_relevance_score => {
                (0..self.len()).map(|i| self.relevance_score(i)).collect()
            }
            "session_depth" if schema.has_session_depth => (0..self.len())
                .map(|i| self.session_depth(i).map(f64::from))
                .collect(),
            _ => return Err(missing()),
        })
    }

    fn cluster_ids(&self, column: &str) -> Result<Vec<u64>> {
        match column {
            "user_id" => Ok(self.user_ids().to_vec()),
            "request_id" => Ok(self.request_ids().to_vec()),
            "item_id" => Ok(self.item_ids().to_vec()),
            _ => Err(Error::MissingColumn(column.to_owned())),
        }
    }

    fn arm_of(&self, row: usize) -> &str {
        self.arm(row)
    }

    fn reason_of(&self, row: usize) -> Option<&str> {
        self.reason(row)
    }
}

impl Frame for SessionDataset {
    fn level(&self) -> Level {
        Level::Session
    }

    fn n_rows(&self) -> usize {
        self.len()
    }

    fn numeric(&self, column: &str) -> Result<Vec<Option<f64>>> {
        let get: fn(&SessionObservation) -> u32 = match column {
            "n_top_spot" => |s| s.n_top_spot,
            "n_bottom_spot" => |s| s.n_bottom_spot,
            "invite_total" => |s| s.invite_total,
            _ => return Err(Error::MissingColumn(column.to_owned())),
        };
        Ok(self.rows.iter().map(|s| Some(f64::from(get(s)))).collect())
    }

    fn cluster_ids(&self, column: &str) -> Result<Vec<u64>> {
        match column {
            "user_id" => Ok(self.rows.iter().map(|s| s.user_id).collect()),
            "request_id" => Ok(self.rows.iter().map(|s| s.request_id).collect()),
            _ => Err(Error::MissingColumn(column.to_owned())),
        }
    }

    fn arm_of(&self, row: usize) -> &str {
        &self.rows[row].arm
    }

    fn reason_of(&self, row: usize) -> Option<&str> {
        self.rows[row].reason_mode.as_deref()
    }
}

/// Estimation-ready arrays for one specification.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub outcome_name: String,
    pub y: Vec<f64>,
    /// Endogenous regressors (empty for OLS).
    pub endogenous: Matrix,
    pub endogenous_names: Vec<String>,
    /// Excluded instruments (empty for OLS).
    pub instruments: Matrix,
    pub instrument_names: Vec<String>,
    /// Exogenous regressors; the last column is the intercept.
    pub controls: Matrix,
    pub control_names: Vec<String>,
    pub clusters: Vec<u64>,
    /// `source_rows[k]` is the frame row behind design row `k`.
    pub source_rows: Vec<usize>,
    pub dropped_rows: usize,
}

impl DesignMatrix {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Coefficient names in fit order: endogenous, then controls, intercept last.
    pub fn coefficient_names(&self) -> Vec<String> {
        self.endogenous_names
            .iter()
            .chain(&self.control_names)
            .cloned()
            .collect()
    }

    /// Assembles a design from raw columns, appending the intercept to the controls.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        outcome_name: &str,
        y: Vec<f64>,
        endogenous: Vec<(String, Vec<f64>)>,
        instruments: Vec<(String, Vec<f64>)>,
        controls: Vec<(String, Vec<f64>)>,
        clusters: Vec<u64>,
    ) -> Result<Self> {
        let n = y.len();
        let split = |cols: Vec<(String, Vec<f64>)>| -> (Vec<String>, Matrix) {
            let (names, data): (Vec<String>, Vec<Vec<f64>>) = cols.into_iter().unzip();
            let m = if data.is_empty() {
                Matrix::zeros(n, 0)
            } else {
                Matrix::from_columns(&data)
            };
            (names, m)
        };
        let mut controls = controls;
        controls.push((INTERCEPT.to_owned(), vec![1.0; n]));
        let (endogenous_names, endogenous) = split(endogenous);
        let (instrument_names, instruments) = split(instruments);
        let (control_names, controls) = split(controls);
        assert!(
            endogenous.nrows() == n
                && instruments.nrows() == n
                && controls.nrows() == n
                && clusters.len() == n,
            "design columns differ in length"
        );
        let d = DesignMatrix {
            outcome_name: outcome_name.to_owned(),
            y,
            endogenous,
            endogenous_names,
            instruments,
            instrument_names,
            controls,
            control_names,
            clusters,
            source_rows: (0..n).collect(),
            dropped_rows: 0,
        };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        let (kw, kz, kx) = (
            self.endogenous.ncols(),
            self.instruments.ncols(),
            self.controls.ncols(),
        );
        if kz < kw {
            return Err(Error::Underidentified {
                instruments: kz,
                endogenous: kw,
            });
        }
        let columns = (kw + kx).max(kz + kx);
        if self.n_obs() < columns {
            return Err(Error::Underdetermined {
                rows: self.n_obs(),
                columns,
            });
        }
        let named = self
            .endogenous_names
            .iter()
            .zip(self.endogenous.columns())
            .chain(self.instrument_names.iter().zip(self.instruments.columns()));
        for (name, col) in named {
            if is_constant(col) {
                return Err(Error::ConstantColumn(name.clone()));
            }
        }
        Ok(())
    }
}

fn is_constant(col: &[f64]) -> bool {
    col.first().is_none_or(|&v0| col.iter().all(|&v| v == v0))
}

/// Materializes the outcome, endogenous, instrument, and control columns of a spec.
///
/// Rows with any missing named value are dropped and counted. Interaction
/// instruments expand to one treated-arm indicator per observed reason; with
/// only treated-arm indicators the set is never collinear with the intercept,
/// so no level is dropped.
pub fn build_design<F: Frame + ?Sized>(frame: &F, spec: &ModelSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    if frame.level() != spec.level {
        return Err(Error::InvalidSpec(format!(
            "{}: spec is {:?}-level but the data is {:?}-level",
            spec.name,
            spec.level,
            frame.level()
        )));
    }
    let n = frame.n_rows();
    let outcome = frame.numeric(&spec.outcome)?;
    let endog: Vec<Vec<Option<f64>>> = spec
        .endogenous
        .iter()
        .map(|c| frame.numeric(c))
        .collect::<Result<_>>()?;
    let controls: Vec<Vec<Option<f64>>> = spec
        .controls
        .iter()
        .map(|c| frame.numeric(c))
        .collect::<Result<_>>()?;
    let clusters = frame.cluster_ids(&spec.cluster)?;
    let needs_reason = spec.instruments == InstrumentExpr::ArmXReason;

    let keep: Vec<usize> = (0..n)
        .filter(|&i| {
            outcome[i].is_some()
                && endog.iter().all(|c| c[i].is_some())
                && controls.iter().all(|c| c[i].is_some())
                && (!needs_reason || frame.reason_of(i).is_some())
        })
        .collect();
    let pick = |col: &[Option<f64>]| -> Vec<f64> { keep.iter().map(|&i| col[i].unwrap()).collect() };
    let treated: Vec<f64> = keep
        .iter()
        .map(|&i| f64::from(u8::from(frame.arm_of(i) == spec.treatment_arm)))
        .collect();
    let arm_label = format!("arm={}", spec.treatment_arm);

    let instruments: Vec<(String, Vec<f64>)> = match spec.instruments {
        InstrumentExpr::None => Vec::new(),
        InstrumentExpr::Arm => vec![(arm_label, treated)],
        InstrumentExpr::ArmXReason => {
            let levels: BTreeSet<&str> = keep.iter().filter_map(|&i| frame.reason_of(i)).collect();
            levels
                .into_iter()
                .map(|level| {
                    let col = keep
                        .iter()
                        .zip(&treated)
                        .map(|(&i, &t)| if frame.reason_of(i) == Some(level) { t } else { 0.0 })
                        .collect();
                    (format!("{arm_label}×reason={level}"), col)
                })
                .collect()
        }
    };

    let mut d = DesignMatrix::from_parts(
        &spec.outcome,
        pick(&outcome),
        spec.endogenous.iter().cloned().zip(endog.iter().map(|c| pick(c))).collect(),
        instruments,
        spec.controls.iter().cloned().zip(controls.iter().map(|c| pick(c))).collect(),
        keep.iter().map(|&i| clusters[i]).collect(),
    )?;
    d.dropped_rows = n - keep.len();
    d.source_rows = keep;
    Ok(d)
}

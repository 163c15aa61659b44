use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::FitResult;

pub const POSITION: &str = "position";

/// A fit on one item's slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFit {
    pub item_id: u64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemEffect {
    pub item_id: u64,
    /// Position slope of the item.
    pub slope: f64,
    pub tau_hat: f64,
}

/// Average effect of moving every item from position `k1` to `k2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub k1: u32,
    pub k2: u32,
    pub tau_hat: f64,
    /// Absent for a single item.
    pub se: Option<f64>,
    pub n_items: usize,
    pub per_item: Vec<ItemEffect>,
}

/// `tau_i = c_i (k2 - k1)` per item, their mean, and its standard error `sd / sqrt(N)`.
pub fn aggregate_effect(fits: &[ItemFit], k1: u32, k2: u32) -> Result<EffectEstimate> {
    if fits.is_empty() {
        return Err(Error::EmptyInput);
    }
    let shift = f64::from(k2) - f64::from(k1);
    let mut per_item = fits
        .iter()
        .map(|f| {
            let slope = f.fit.coefficient(POSITION)?;
            Ok(ItemEffect {
                item_id: f.item_id,
                slope,
                tau_hat: slope * shift,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    per_item.sort_by_key(|e| e.item_id);
    let n = per_item.len();
    let tau_hat = per_item.iter().map(|e| e.tau_hat).sum::<f64>() / n as f64;
    let se = (n > 1).then(|| {
        let ss: f64 = per_item.iter().map(|e| (e.tau_hat - tau_hat).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    });
    Ok(EffectEstimate {
        k1,
        k2,
        tau_hat,
        se,
        n_items: n,
        per_item,
    })
}

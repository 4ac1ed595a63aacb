//! Leaderboard aggregation: fractional ranks per metric combined by a
//! weighted mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingWeights {
    pub dsc: f64,
    pub fpv: f64,
    pub fnv: f64,
}

impl Default for RankingWeights {
    fn default() -> Self {
        RankingWeights {
            dsc: 0.5,
            fpv: 0.25,
            fnv: 0.25,
        }
    }
}

impl RankingWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.dsc, self.fpv, self.fnv];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || ((w.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("ranking weights {w:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamMetrics {
    pub team: String,
    pub dsc: f64,
    pub fpv: f64,
    pub fnv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub team: String,
    pub dsc: f64,
    pub fpv: f64,
    pub fnv: f64,
    pub rank_dsc: f64,
    pub rank_fpv: f64,
    pub rank_fnv: f64,
    pub score: f64,
}

/// 1-based ranks, ascending in `key`; tied values share the mean of the
/// positions they occupy.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks DSC descending and FPV/FNV ascending, scores each team by the
/// weighted mean of its ranks, and sorts by score then team name.
pub fn rank_teams(teams: &[TeamMetrics], weights: &RankingWeights) -> Result<Vec<LeaderboardRow>> {
    weights.validate()?;
    if teams.is_empty() {
        return Err(Error::InvalidParameter("no teams to rank".into()));
    }
    for t in teams {
        for (metric, v) in [("dsc", t.dsc), ("fpv", t.fpv), ("fnv", t.fnv)] {
            if !v.is_finite() {
                return Err(Error::InvalidMetric {
                    team: t.team.clone(),
                    metric,
                });
            }
        }
    }
    let neg_dsc: Vec<f64> = teams.iter().map(|t| -t.dsc).collect();
    let rd = fractional_ranks(&neg_dsc);
    let rp = fractional_ranks(&teams.iter().map(|t| t.fpv).collect::<Vec<_>>());
    let rn = fractional_ranks(&teams.iter().map(|t| t.fnv).collect::<Vec<_>>());
    let mut rows: Vec<LeaderboardRow> = teams
        .iter()
        .enumerate()
        .map(|(i, t)| LeaderboardRow {
            team: t.team.clone(),
            dsc: t.dsc,
            fpv: t.fpv,
            fnv: t.fnv,
            rank_dsc: rd[i],
            rank_fpv: rp[i],
            rank_fnv: rn[i],
            score: weights.dsc * rd[i] + weights.fpv * rp[i] + weights.fnv * rn[i],
        })
        .collect();
    rows.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.team.cmp(&b.team)));
    Ok(rows)
}

//! Per-referent agreement statistics over binned proposals.
//!
//! The two headline numbers are the agreement index A(r) = Σ(|P_i|/|P|)²
//! and the agreement rate AR(r) = Σ C(|P_i|,2) / C(|P|,2): matching proposal
//! pairs over total pairs. Both are computed from integer class counts with
//! a single final division, so results are the correctly rounded values of
//! the underlying rationals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ProposalTable, ReferentId, SpeechTable};

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("referent `{referent}`: no proposals")]
    NoProposals { referent: ReferentId },
    #[error("referent `{referent}`: insufficient participants ({found}, need at least 2)")]
    InsufficientParticipants { referent: ReferentId, found: usize },
    #[error("referent `{referent}`: table is not classic (one trial-0 proposal per participant)")]
    NotClassic { referent: ReferentId },
    #[error("degenerate category distribution: chance agreement is 1 but mean agreement rate is {ar_mean}")]
    DegenerateCategories { ar_mean: f64 },
    #[error("no proposal tables given")]
    NoTables,
}

/// Agreement statistics for one referent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementScore {
    pub referent: ReferentId,
    /// A(r): sum of squared class proportions.
    pub agreement_index: f64,
    /// AR(r): matching pairs over total pairs.
    pub agreement_rate: f64,
    /// Equivalence-class sizes |P_i| in lexicographic bin order.
    pub class_sizes: Vec<usize>,
}

/// Chance agreement and Fleiss' kappa over a set of referents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceAgreement {
    /// Expected agreement under the observed category usage.
    pub p_e: f64,
    /// Per-category usage proportions, aligned with `categories`.
    pub pi_k: Vec<f64>,
    pub kappa: f64,
    /// Number of referents (items).
    pub m: usize,
    /// Number of distinct categories across all tables.
    pub q: usize,
    /// Category labels, lexicographic.
    pub categories: Vec<String>,
    /// counts[i][k]: participants proposing category k for referent i.
    pub counts: Vec<Vec<usize>>,
    /// Row sums of `counts`.
    pub row_totals: Vec<usize>,
}

/// One row of an extracted consensus set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEntry {
    pub referent: ReferentId,
    /// Modal bin; ties broken lexicographically.
    pub top_bin: String,
    pub support_count: usize,
    pub agreement_rate: f64,
    pub accepted: bool,
    /// All bins sharing the modal count when there was a tie; empty otherwise.
    pub tied_bins: Vec<String>,
}

/// The accepted referent→input mapping extracted from high-agreement referents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSet {
    pub threshold: f64,
    pub entries: Vec<ConsensusEntry>,
}

fn require_classic(table: &ProposalTable) -> Result<(), AgreementError> {
    if table.entries.is_empty() {
        return Err(AgreementError::NoProposals {
            referent: table.referent.clone(),
        });
    }
    if !table.is_classic() {
        return Err(AgreementError::NotClassic {
            referent: table.referent.clone(),
        });
    }
    Ok(())
}

/// A(r) from pre-binned class sizes.
pub fn agreement_index_from_class_sizes(class_sizes: &[usize]) -> f64 {
    let n: usize = class_sizes.iter().sum();
    let sq_sum: u64 = class_sizes.iter().map(|&c| (c as u64) * (c as u64)).sum();
    sq_sum as f64 / ((n as u64) * (n as u64)) as f64
}

/// AR(r) from pre-binned class sizes; `None` when fewer than 2 proposals.
pub fn agreement_rate_from_class_sizes(class_sizes: &[usize]) -> Option<f64> {
    let n: u64 = class_sizes.iter().map(|&c| c as u64).sum();
    if n < 2 {
        return None;
    }
    let matching: u64 = class_sizes.iter().map(|&c| (c as u64) * (c as u64 - 1) / 2).sum();
    let total = n * (n - 1) / 2;
    Some(matching as f64 / total as f64)
}

/// Agreement index A(r) = Σ (|P_i|/|P|)².
pub fn agreement_index(table: &ProposalTable) -> Result<f64, AgreementError> {
    require_classic(table)?;
    Ok(agreement_index_from_class_sizes(&table.class_sizes()))
}

/// Agreement rate AR(r) = Σ C(|P_i|,2) / C(|P|,2).
pub fn agreement_rate(table: &ProposalTable) -> Result<f64, AgreementError> {
    require_classic(table)?;
    let sizes = table.class_sizes();
    agreement_rate_from_class_sizes(&sizes).ok_or_else(|| {
        AgreementError::InsufficientParticipants {
            referent: table.referent.clone(),
            found: table.proposal_count(),
        }
    })
}

/// Both metrics plus the class sizes, for reporting.
pub fn agreement_score(table: &ProposalTable) -> Result<AgreementScore, AgreementError> {
    Ok(AgreementScore {
        referent: table.referent.clone(),
        agreement_index: agreement_index(table)?,
        agreement_rate: agreement_rate(table)?,
        class_sizes: table.class_sizes(),
    })
}

pub(crate) fn kappa_from(p_e: f64, ar_mean: f64) -> Result<f64, AgreementError> {
    const TOL: f64 = 1e-12;
    if p_e >= 1.0 - TOL {
        if ar_mean >= 1.0 - TOL {
            // Saturated: everything agrees and chance predicts it; 1 by convention.
            return Ok(1.0);
        }
        return Err(AgreementError::DegenerateCategories { ar_mean });
    }
    Ok((ar_mean - p_e) / (1.0 - p_e))
}

/// Chance agreement and kappa from a counts matrix: `counts[i][k]` is the
/// number of participants proposing category k for referent i.
pub fn chance_agreement_from_counts(
    counts: Vec<Vec<usize>>,
    categories: Vec<String>,
) -> Result<ChanceAgreement, AgreementError> {
    let m = counts.len();
    if m == 0 {
        return Err(AgreementError::NoTables);
    }
    let q = categories.len();
    let row_totals: Vec<usize> = counts.iter().map(|row| row.iter().sum()).collect();

    let mut pi_k = vec![0.0f64; q];
    let mut ar_sum = 0.0f64;
    for (i, (row, &n_i)) in counts.iter().zip(&row_totals).enumerate() {
        if n_i < 2 {
            return Err(AgreementError::InsufficientParticipants {
                referent: ReferentId(format!("item {i}")),
                found: n_i,
            });
        }
        for (k, &n_ik) in row.iter().enumerate() {
            pi_k[k] += n_ik as f64 / n_i as f64;
        }
        ar_sum += agreement_rate_from_class_sizes(row).expect("row total checked above");
    }
    for pk in &mut pi_k {
        *pk /= m as f64;
    }
    let p_e: f64 = pi_k.iter().map(|p| p * p).sum();
    let ar_mean = ar_sum / m as f64;
    let kappa = kappa_from(p_e, ar_mean)?;

    Ok(ChanceAgreement {
        p_e,
        pi_k,
        kappa,
        m,
        q,
        categories,
        counts,
        row_totals,
    })
}

/// Chance agreement P_e, per-category proportions π_k, and Fleiss' kappa
/// over the given referent tables. π_k = (1/m) Σ_i n_ik/n_i; P_e = Σ π_k²;
/// κ = (AR̄ − P_e)/(1 − P_e) with AR̄ the unweighted mean per-referent
/// agreement rate.
pub fn chance_agreement(tables: &[ProposalTable]) -> Result<ChanceAgreement, AgreementError> {
    if tables.is_empty() {
        return Err(AgreementError::NoTables);
    }
    let mut categories: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for table in tables {
        require_classic(table)?;
        if table.proposal_count() < 2 {
            return Err(AgreementError::InsufficientParticipants {
                referent: table.referent.clone(),
                found: table.proposal_count(),
            });
        }
        for entry in &table.entries {
            categories.insert(entry.bin.clone());
        }
    }
    let labels: Vec<String> = categories.into_iter().collect();
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let counts: Vec<Vec<usize>> = tables
        .iter()
        .map(|table| {
            let mut row = vec![0usize; labels.len()];
            for entry in &table.entries {
                row[index[entry.bin.as_str()]] += 1;
            }
            row
        })
        .collect();

    chance_agreement_from_counts(counts, labels)
}

/// Max-consensus: percent of participants giving the modal utterance.
pub fn max_consensus(table: &SpeechTable) -> Result<f64, AgreementError> {
    let n = table.proposal_count();
    if n == 0 {
        return Err(AgreementError::NoProposals {
            referent: table.referent.clone(),
        });
    }
    let modal = table
        .utterance_counts()
        .values()
        .copied()
        .max()
        .expect("non-empty table");
    Ok(100.0 * modal as f64 / n as f64)
}

/// Consensus-distinct ratio: percent of distinct utterances proposed by more
/// than `baseline` participants.
pub fn consensus_distinct_ratio(
    table: &SpeechTable,
    baseline: usize,
) -> Result<f64, AgreementError> {
    let counts = table.utterance_counts();
    if counts.is_empty() {
        return Err(AgreementError::NoProposals {
            referent: table.referent.clone(),
        });
    }
    let distinct = counts.len();
    let over = counts.values().filter(|&&c| c > baseline).count();
    Ok(100.0 * over as f64 / distinct as f64)
}

/// Takes the top proposal for each referent and marks it accepted when its
/// AR(r) meets the threshold. Modal ties break lexicographically by bin
/// label; the full tied set is recorded on the entry.
pub fn extract_consensus_set(
    tables: &[ProposalTable],
    threshold: f64,
) -> Result<ConsensusSet, AgreementError> {
    let mut entries = Vec::with_capacity(tables.len());
    for table in tables {
        require_classic(table)?;
        let ar = agreement_rate(table)?;
        let counts = table.class_counts();
        let modal = counts.values().copied().max().expect("non-empty table");
        let mut tied: Vec<String> = counts
            .iter()
            .filter(|(_, &c)| c == modal)
            .map(|(bin, _)| bin.to_string())
            .collect();
        // BTreeMap iterates lexicographically, so the first tied bin wins.
        let top_bin = tied[0].clone();
        if tied.len() == 1 {
            tied.clear();
        }
        entries.push(ConsensusEntry {
            referent: table.referent.clone(),
            top_bin,
            support_count: modal,
            agreement_rate: ar,
            accepted: ar >= threshold,
            tied_bins: tied,
        });
    }
    Ok(ConsensusSet { threshold, entries })
}

/// Bonferroni correction: divides alpha by the number of tests performed.
pub fn bonferroni(alpha: f64, test_count: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
    assert!(test_count >= 1, "test_count must be at least 1");
    alpha / test_count as f64
}

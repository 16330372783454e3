//! Study data model shared by every analysis module.
//!
//! All types are immutable after construction and safe to share across
//! threads. Constructors enforce structural invariants (finite coordinates,
//! frame counts); cross-referencing problems between a [`Study`] and its
//! tables are collected by [`validate_study`] rather than thrown.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifies one participant within a study.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(pub String);

/// Identifies one referent (the command participants propose inputs for).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferentId(pub String);

impl ParticipantId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl ReferentId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ReferentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParticipantId {
    fn from(s: &str) -> Self {
        ParticipantId(s.to_string())
    }
}

impl From<&str> for ReferentId {
    fn from(s: &str) -> Self {
        ReferentId(s.to_string())
    }
}

/// Normalizes a bin label: trimmed and lowercased. Two proposals fall in the
/// same equivalence class exactly when their normalized labels are equal;
/// binning semantics beyond that belong to the human raters.
pub fn normalize_bin(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Normalizes an utterance: lowercase, internal whitespace collapsed to a
/// single space, leading/trailing punctuation stripped.
pub fn normalize_utterance(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// One elicitation study: who took part and which referents were shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub participants: Vec<ParticipantId>,
    pub referents: Vec<ReferentId>,
    pub metadata: BTreeMap<String, String>,
}

impl Study {
    pub fn new(
        id: impl Into<String>,
        participants: Vec<ParticipantId>,
        referents: Vec<ReferentId>,
    ) -> Self {
        Study {
            id: id.into(),
            participants,
            referents,
            metadata: BTreeMap::new(),
        }
    }

    /// Number of participants N.
    pub fn participant_count(&self) -> usize {
        self.participants.len()
    }
}

/// One binned proposal: which participant proposed it, on which trial, and
/// which equivalence class the raters assigned it to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalEntry {
    pub participant: ParticipantId,
    /// Trial index; classic (non-production) studies use trial 0 only.
    pub trial: u32,
    /// Normalized bin label (see [`normalize_bin`]).
    pub bin: String,
}

/// All binned proposals recorded for one referent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalTable {
    pub referent: ReferentId,
    pub entries: Vec<ProposalEntry>,
}

impl ProposalTable {
    /// Builds a table, normalizing bin labels on the way in.
    pub fn new(
        referent: ReferentId,
        entries: impl IntoIterator<Item = (ParticipantId, u32, String)>,
    ) -> Self {
        let entries = entries
            .into_iter()
            .map(|(participant, trial, bin)| ProposalEntry {
                participant,
                trial,
                bin: normalize_bin(&bin),
            })
            .collect();
        ProposalTable { referent, entries }
    }

    /// Convenience constructor for classic studies: one trial-0 proposal per
    /// participant, with synthetic participant ids.
    pub fn from_class_sizes(referent: ReferentId, class_sizes: &[usize]) -> Self {
        let mut entries = Vec::new();
        let mut p = 0usize;
        for (class, &size) in class_sizes.iter().enumerate() {
            for _ in 0..size {
                entries.push((
                    ParticipantId(format!("p{p:03}")),
                    0,
                    format!("bin{class:03}"),
                ));
                p += 1;
            }
        }
        ProposalTable::new(referent, entries)
    }

    /// True when every participant contributed exactly one trial-0 proposal.
    pub fn is_classic(&self) -> bool {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .all(|e| e.trial == 0 && seen.insert(&e.participant))
    }

    /// Total number of proposals in the table.
    pub fn proposal_count(&self) -> usize {
        self.entries.len()
    }

    /// Sizes of the equivalence classes, keyed by bin label, in
    /// lexicographic label order.
    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.bin.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Class sizes |P_i| in lexicographic bin-label order.
    pub fn class_sizes(&self) -> Vec<usize> {
        self.class_counts().into_values().collect()
    }
}

/// All elicited utterances recorded for one referent, one per participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechTable {
    pub referent: ReferentId,
    pub entries: Vec<(ParticipantId, String)>,
}

impl SpeechTable {
    /// Builds a table, normalizing utterances on the way in.
    pub fn new(
        referent: ReferentId,
        entries: impl IntoIterator<Item = (ParticipantId, String)>,
    ) -> Self {
        let entries = entries
            .into_iter()
            .map(|(p, u)| (p, normalize_utterance(&u)))
            .collect();
        SpeechTable { referent, entries }
    }

    pub fn proposal_count(&self) -> usize {
        self.entries.len()
    }

    /// Utterance frequencies in lexicographic utterance order.
    pub fn utterance_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, u) in &self.entries {
            *counts.entry(u.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// One captured skeleton pose: J joints, each a 3-vector in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub joints: Vec<[f64; 3]>,
}

impl Frame {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Frame { joints }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }
}

/// A time-ordered sequence of skeleton frames for one gesture proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub participant: ParticipantId,
    pub referent: ReferentId,
    pub trial: u32,
    pub frames: Vec<Frame>,
    pub frame_rate: f64,
}

impl Trajectory {
    pub fn new(
        participant: ParticipantId,
        referent: ReferentId,
        trial: u32,
        frames: Vec<Frame>,
        frame_rate: f64,
    ) -> Result<Self, ModelError> {
        if frames.len() < 2 {
            return Err(ModelError::TooFewFrames { found: frames.len() });
        }
        if !(frame_rate > 0.0) || !frame_rate.is_finite() {
            return Err(ModelError::InvalidFrameRate { rate: frame_rate });
        }
        let joint_count = frames[0].joint_count();
        if joint_count == 0 {
            return Err(ModelError::NoJoints);
        }
        for (i, frame) in frames.iter().enumerate() {
            if frame.joint_count() != joint_count {
                return Err(ModelError::JointCountMismatch {
                    frame: i,
                    expected: joint_count,
                    found: frame.joint_count(),
                });
            }
            for joint in &frame.joints {
                if joint.iter().any(|c| !c.is_finite()) {
                    return Err(ModelError::NonFiniteCoordinate { frame: i });
                }
            }
        }
        Ok(Trajectory {
            participant,
            referent,
            trial,
            frames,
            frame_rate,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].joint_count()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Duration in seconds spanned by the frames.
    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 / self.frame_rate
    }
}

/// Structural errors raised by type constructors.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("trajectory needs at least 2 frames, found {found}")]
    TooFewFrames { found: usize },
    #[error("frame rate must be positive and finite, got {rate}")]
    InvalidFrameRate { rate: f64 },
    #[error("frames must contain at least one joint")]
    NoJoints,
    #[error("frame {frame} has {found} joints, expected {expected}")]
    JointCountMismatch {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("frame {frame} contains a non-finite coordinate")]
    NonFiniteCoordinate { frame: usize },
}

/// What went wrong, attached to the offending ids so reports are actionable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateParticipantId { participant: ParticipantId },
    DuplicateReferentId { referent: ReferentId },
    TooFewParticipants { found: usize },
    UnknownParticipant {
        referent: ReferentId,
        participant: ParticipantId,
    },
    UnknownReferent { referent: ReferentId },
    DuplicateEntry {
        referent: ReferentId,
        participant: ParticipantId,
        trial: u32,
    },
    NonContiguousTrials {
        referent: ReferentId,
        participant: ParticipantId,
        trials: Vec<u32>,
    },
    MissingProposal {
        referent: ReferentId,
        participant: ParticipantId,
    },
    EmptyBinLabel {
        referent: ReferentId,
        participant: ParticipantId,
        trial: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateParticipantId { participant } => {
                write!(f, "duplicate participant id `{participant}`")
            }
            Violation::DuplicateReferentId { referent } => {
                write!(f, "duplicate referent id `{referent}`")
            }
            Violation::TooFewParticipants { found } => {
                write!(f, "study needs at least 2 participants, found {found}")
            }
            Violation::UnknownParticipant {
                referent,
                participant,
            } => write!(
                f,
                "referent `{referent}`: unknown participant `{participant}`"
            ),
            Violation::UnknownReferent { referent } => {
                write!(f, "table references referent `{referent}` not in the study")
            }
            Violation::DuplicateEntry {
                referent,
                participant,
                trial,
            } => write!(
                f,
                "referent `{referent}`: duplicate entry for `{participant}` trial {trial}"
            ),
            Violation::NonContiguousTrials {
                referent,
                participant,
                trials,
            } => write!(
                f,
                "referent `{referent}`: `{participant}` has non-contiguous trials {trials:?}"
            ),
            Violation::MissingProposal {
                referent,
                participant,
            } => write!(
                f,
                "referent `{referent}`: no proposal from `{participant}`"
            ),
            Violation::EmptyBinLabel {
                referent,
                participant,
                trial,
            } => write!(
                f,
                "referent `{referent}`: empty bin label from `{participant}` trial {trial}"
            ),
        }
    }
}

/// Outcome of [`validate_study`]; an empty violation list means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Cross-checks proposal tables against the study roster. Pure: identical
/// inputs always yield the identical report. All problems are reported, not
/// thrown.
pub fn validate_study(study: &Study, tables: &[ProposalTable]) -> ValidationReport {
    let mut violations = Vec::new();

    let mut seen_participants = HashSet::new();
    for p in &study.participants {
        if !seen_participants.insert(p) {
            violations.push(Violation::DuplicateParticipantId {
                participant: p.clone(),
            });
        }
    }
    let mut seen_referents = HashSet::new();
    for r in &study.referents {
        if !seen_referents.insert(r) {
            violations.push(Violation::DuplicateReferentId {
                referent: r.clone(),
            });
        }
    }
    if study.participants.len() < 2 {
        violations.push(Violation::TooFewParticipants {
            found: study.participants.len(),
        });
    }

    let roster: HashSet<&ParticipantId> = study.participants.iter().collect();

    for table in tables {
        if !seen_referents.contains(&table.referent) {
            violations.push(Violation::UnknownReferent {
                referent: table.referent.clone(),
            });
        }

        let mut trials_by_participant: HashMap<&ParticipantId, Vec<u32>> = HashMap::new();
        for entry in &table.entries {
            if !roster.contains(&entry.participant) {
                violations.push(Violation::UnknownParticipant {
                    referent: table.referent.clone(),
                    participant: entry.participant.clone(),
                });
            }
            if entry.bin.is_empty() {
                violations.push(Violation::EmptyBinLabel {
                    referent: table.referent.clone(),
                    participant: entry.participant.clone(),
                    trial: entry.trial,
                });
            }
            trials_by_participant
                .entry(&entry.participant)
                .or_default()
                .push(entry.trial);
        }

        // Iterate the roster (then strangers) in a fixed order so the report
        // is deterministic.
        let mut known: Vec<&ParticipantId> = study.participants.iter().collect();
        let mut strangers: Vec<&ParticipantId> = trials_by_participant
            .keys()
            .filter(|p| !roster.contains(*p))
            .copied()
            .collect();
        strangers.sort();
        known.extend(strangers);

        for participant in known {
            let Some(trials) = trials_by_participant.get(participant) else {
                if roster.contains(participant) {
                    violations.push(Violation::MissingProposal {
                        referent: table.referent.clone(),
                        participant: participant.clone(),
                    });
                }
                continue;
            };
            let mut sorted = trials.clone();
            sorted.sort_unstable();
            let mut duplicated = false;
            for w in sorted.windows(2) {
                if w[0] == w[1] && !duplicated {
                    violations.push(Violation::DuplicateEntry {
                        referent: table.referent.clone(),
                        participant: participant.clone(),
                        trial: w[0],
                    });
                    duplicated = true;
                }
            }
            sorted.dedup();
            let contiguous = sorted
                .iter()
                .enumerate()
                .all(|(i, &t)| t == i as u32);
            if !contiguous {
                violations.push(Violation::NonContiguousTrials {
                    referent: table.referent.clone(),
                    participant: participant.clone(),
                    trials: sorted,
                });
            }
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(n: usize, referents: &[&str]) -> Study {
        Study::new(
            "s",
            (0..n).map(|i| ParticipantId(format!("p{i:02}"))).collect(),
            referents.iter().map(|r| ReferentId(r.to_string())).collect(),
        )
    }

    fn classic_table(referent: &str, participants: &[&str], bins: &[&str]) -> ProposalTable {
        ProposalTable::new(
            ReferentId(referent.to_string()),
            participants
                .iter()
                .zip(bins)
                .map(|(p, b)| (ParticipantId(p.to_string()), 0, b.to_string())),
        )
    }

    #[test]
    fn well_formed_study_yields_empty_report() {
        let study = study(20, &["r0", "r1", "r2"]);
        let tables: Vec<ProposalTable> = study
            .referents
            .iter()
            .map(|r| {
                ProposalTable::new(
                    r.clone(),
                    study
                        .participants
                        .iter()
                        .map(|p| (p.clone(), 0, "swipe".to_string())),
                )
            })
            .collect();
        let report = validate_study(&study, &tables);
        assert!(report.is_valid(), "unexpected violations: {:?}", report.violations);
    }

    #[test]
    fn unknown_participant_is_reported() {
        let study = study(2, &["r0"]);
        let table = classic_table("r0", &["p00", "p01", "P99"], &["a", "a", "b"]);
        let report = validate_study(&study, &table.clone().into_iter_once());
        let unknown: Vec<_> = report
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::UnknownParticipant { participant, .. } if participant.as_str() == "P99"))
            .collect();
        assert_eq!(unknown.len(), 1);
    }

    // Helper so the test above reads naturally.
    trait IntoOnce {
        fn into_iter_once(self) -> Vec<ProposalTable>;
    }
    impl IntoOnce for ProposalTable {
        fn into_iter_once(self) -> Vec<ProposalTable> {
            vec![self]
        }
    }

    #[test]
    fn non_contiguous_trials_are_reported() {
        let study = study(2, &["r0"]);
        let table = ProposalTable::new(
            ReferentId("r0".into()),
            vec![
                (ParticipantId("p00".into()), 0, "a".to_string()),
                (ParticipantId("p00".into()), 2, "a".to_string()),
                (ParticipantId("p01".into()), 0, "b".to_string()),
            ],
        );
        let report = validate_study(&study, &[table]);
        let hits: Vec<_> = report
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::NonContiguousTrials { trials, .. } if trials == &vec![0, 2]))
            .collect();
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn missing_proposal_and_duplicates_are_reported() {
        let study = study(3, &["r0"]);
        let table = ProposalTable::new(
            ReferentId("r0".into()),
            vec![
                (ParticipantId("p00".into()), 0, "a".to_string()),
                (ParticipantId("p00".into()), 0, "a".to_string()),
                (ParticipantId("p01".into()), 0, "b".to_string()),
            ],
        );
        let report = validate_study(&study, &[table]);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateEntry { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MissingProposal { participant, .. } if participant.as_str() == "p02")));
    }

    #[test]
    fn validation_is_pure() {
        let study = study(2, &["r0", "r0"]);
        let tables = vec![classic_table("r1", &["p00", "zz"], &["a", ""])];
        let a = validate_study(&study, &tables);
        let b = validate_study(&study, &tables);
        assert_eq!(a, b);
        assert!(!a.is_valid());
    }

    #[test]
    fn bin_labels_are_normalized() {
        let table = classic_table("r0", &["p00", "p01"], &["  Swipe Left ", "swipe left"]);
        assert_eq!(table.class_sizes(), vec![2]);
    }

    #[test]
    fn utterance_normalization_policy() {
        assert_eq!(normalize_utterance("  Move   LEFT! "), "move left");
        assert_eq!(normalize_utterance("...move, left..."), "move, left");
        assert_eq!(normalize_utterance("LEFT"), "left");
        assert_eq!(normalize_utterance("!!!"), "");
    }

    #[test]
    fn trajectory_constructor_enforces_invariants() {
        let p = ParticipantId("p".into());
        let r = ReferentId("r".into());
        let frame = |y: f64| Frame::new(vec![[0.0, y, 0.0]]);

        assert_eq!(
            Trajectory::new(p.clone(), r.clone(), 0, vec![frame(0.0)], 30.0),
            Err(ModelError::TooFewFrames { found: 1 })
        );
        assert_eq!(
            Trajectory::new(p.clone(), r.clone(), 0, vec![frame(0.0), frame(1.0)], 0.0),
            Err(ModelError::InvalidFrameRate { rate: 0.0 })
        );
        let ragged = vec![frame(0.0), Frame::new(vec![[0.0, 1.0, 0.0], [0.0, 2.0, 0.0]])];
        assert!(matches!(
            Trajectory::new(p.clone(), r.clone(), 0, ragged, 30.0),
            Err(ModelError::JointCountMismatch { .. })
        ));
        let bad = vec![frame(0.0), Frame::new(vec![[f64::NAN, 0.0, 0.0]])];
        assert!(matches!(
            Trajectory::new(p, r, 0, bad, 30.0),
            Err(ModelError::NonFiniteCoordinate { frame: 1 })
        ));
    }

    #[test]
    fn classic_detection() {
        let classic = classic_table("r0", &["p00", "p01"], &["a", "b"]);
        assert!(classic.is_classic());
        let production = ProposalTable::new(
            ReferentId("r0".into()),
            vec![
                (ParticipantId("p00".into()), 0, "a".to_string()),
                (ParticipantId("p00".into()), 1, "b".to_string()),
            ],
        );
        assert!(!production.is_classic());
    }
}

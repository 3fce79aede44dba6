//! Six-person lineups built from embedding similarity, the strict match rule,
//! and the evaluations layered on top of them.
//!
//! A lineup pairs a probe image with its identity's designated mugshot (the
//! target) and five decoy mugshots. Every other identity is ranked by the
//! cosine similarity of its mugshot to the probe embedding, descending, with
//! ties broken by ascending `identity_id`; the policy's rank offset `n`
//! selects ranks `n-4 ..= n` (1-based) as decoys. The match is correct only if
//! the target's similarity strictly exceeds every decoy's.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{DegradationGrid, DegradationSpec, Family};
use crate::embed::{
    self, cosine_similarity, BackendDescriptor, BaselineEmbedder, Embedding, EmbeddingArchive,
};
use crate::error::{Error, Result};
use crate::manifest::{self, DatasetManifest, ImageRecord, ProbeFilter};

pub const DECOY_COUNT: usize = 5;

/// Which similarity ranks fill the decoy slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineupPolicy {
    /// Decoys are the `rank_offset-4 ..= rank_offset` most similar identities.
    pub rank_offset: usize,
}

impl Default for LineupPolicy {
    fn default() -> Self {
        Self {
            rank_offset: DECOY_COUNT,
        }
    }
}

impl LineupPolicy {
    pub fn with_offset(rank_offset: usize) -> Result<Self> {
        let p = Self { rank_offset };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank_offset < DECOY_COUNT {
            return Err(Error::param(format!(
                "rank offset {} must be at least {DECOY_COUNT}",
                self.rank_offset
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineup {
    pub probe_id: String,
    pub probe_identity: String,
    pub target_id: String,
    pub target_similarity: f64,
    pub decoy_ids: Vec<String>,
    pub decoy_identities: Vec<String>,
    pub decoy_similarities: Vec<f64>,
}

impl Lineup {
    /// Structural invariants every constructed lineup must satisfy.
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Setup(format!("lineup for '{}': {m}", self.probe_id)));
        if self.probe_id == self.target_id {
            return fail("probe and target are the same image".into());
        }
        if self.decoy_ids.len() != DECOY_COUNT
            || self.decoy_identities.len() != DECOY_COUNT
            || self.decoy_similarities.len() != DECOY_COUNT
        {
            return fail(format!("expected {DECOY_COUNT} decoys"));
        }
        for (i, d) in self.decoy_identities.iter().enumerate() {
            if *d == self.probe_identity {
                return fail(format!("decoy '{d}' shares the probe identity"));
            }
            if self.decoy_identities[..i].contains(d) {
                return fail(format!("decoy identity '{d}' repeated"));
            }
        }
        let in_range = |s: f64| (-1.0..=1.0).contains(&s);
        if !in_range(self.target_similarity) || !self.decoy_similarities.iter().all(|&s| in_range(s)) {
            return fail("similarity outside [-1, 1]".into());
        }
        Ok(())
    }

    pub fn max_decoy_similarity(&self) -> f64 {
        self.decoy_similarities
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub lineup: Lineup,
    pub correct: bool,
    /// Target similarity minus the best decoy similarity.
    pub margin: f64,
}

/// Strict rule: the target must beat every decoy; a tie is a miss.
pub fn evaluate_lineup(lineup: Lineup) -> MatchOutcome {
    let correct = lineup
        .decoy_similarities
        .iter()
        .all(|&d| lineup.target_similarity > d);
    let margin = lineup.target_similarity - lineup.max_decoy_similarity();
    MatchOutcome {
        lineup,
        correct,
        margin,
    }
}

/// Designated mugshots and their embeddings, ordered by identity.
#[derive(Debug, Clone)]
pub struct Gallery {
    identities: Vec<String>,
    image_ids: Vec<String>,
    embeddings: Vec<Embedding>,
}

impl Gallery {
    pub fn new(archive: &EmbeddingArchive, mugshots: &BTreeMap<String, ImageRecord>) -> Result<Self> {
        let mut g = Gallery {
            identities: Vec::with_capacity(mugshots.len()),
            image_ids: Vec::with_capacity(mugshots.len()),
            embeddings: Vec::with_capacity(mugshots.len()),
        };
        for (identity, rec) in mugshots {
            g.embeddings.push(archive.require(&rec.image_id)?.clone());
            g.identities.push(identity.clone());
            g.image_ids.push(rec.image_id.clone());
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    fn position(&self, identity: &str) -> Option<usize> {
        self.identities
            .binary_search_by(|id| id.as_str().cmp(identity))
            .ok()
    }

    /// Number of identities a probe of `identity` can draw decoys from.
    pub fn others(&self, identity: &str) -> usize {
        self.len() - usize::from(self.position(identity).is_some())
    }

    /// Builds the lineup for `probe` given its (possibly degraded) embedding.
    pub fn lineup(&self, probe: &ImageRecord, probe_emb: &Embedding, policy: &LineupPolicy) -> Result<Lineup> {
        policy.validate()?;
        let target = self.position(&probe.identity_id).ok_or_else(|| {
            Error::Setup(format!(
                "identity '{}' of probe '{}' has no mugshot",
                probe.identity_id, probe.image_id
            ))
        })?;
        if self.image_ids[target] == probe.image_id {
            return Err(Error::Setup(format!(
                "probe '{}' is its identity's designated mugshot",
                probe.image_id
            )));
        }
        let n = policy.rank_offset;
        if self.len() - 1 < n {
            return Err(Error::Setup(format!(
                "rank offset {n} needs {n} other identities with mugshots, only {} available",
                self.len() - 1
            )));
        }
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(self.len() - 1);
        for (i, e) in self.embeddings.iter().enumerate() {
            if i != target {
                ranked.push((cosine_similarity(probe_emb, e)?, i));
            }
        }
        // Identities are stored in ascending order, so index order is the tie-break.
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let picked = &ranked[n - DECOY_COUNT..n];
        let lineup = Lineup {
            probe_id: probe.image_id.clone(),
            probe_identity: probe.identity_id.clone(),
            target_id: self.image_ids[target].clone(),
            target_similarity: cosine_similarity(probe_emb, &self.embeddings[target])?,
            decoy_ids: picked.iter().map(|&(_, i)| self.image_ids[i].clone()).collect(),
            decoy_identities: picked.iter().map(|&(_, i)| self.identities[i].clone()).collect(),
            decoy_similarities: picked.iter().map(|&(s, _)| s).collect(),
        };
        lineup.check()?;
        Ok(lineup)
    }
}

/// Builds one lineup. Prefer [`Gallery`] when building many.
pub fn build_lineup(
    probe: &ImageRecord,
    archive: &EmbeddingArchive,
    mugshots: &BTreeMap<String, ImageRecord>,
    policy: &LineupPolicy,
) -> Result<Lineup> {
    let gallery = Gallery::new(archive, mugshots)?;
    gallery.lineup(probe, archive.require(&probe.image_id)?, policy)
}

/// An outcome with the grouping attributes of its probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredProbe {
    pub outcome: MatchOutcome,
    pub race: String,
    pub gender: String,
}

impl ScoredProbe {
    pub fn attribute(&self, key: &str) -> Option<&str> {
        match key {
            "race" => Some(&self.race),
            "gender" => Some(&self.gender),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedProbe {
    pub probe_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset_id: String,
    pub backend_id: String,
    pub policy: LineupPolicy,
    /// Sorted by probe id.
    pub outcomes: Vec<ScoredProbe>,
    pub skipped: Vec<SkippedProbe>,
    pub n_probes: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

impl EvalResult {
    /// Mean over lineups of the mean decoy similarity.
    pub fn mean_decoy_similarity(&self) -> f64 {
        let sum: f64 = self
            .outcomes
            .iter()
            .map(|o| {
                let s = &o.outcome.lineup.decoy_similarities;
                s.iter().sum::<f64>() / s.len() as f64
            })
            .sum();
        sum / self.outcomes.len() as f64
    }

    /// Per-lineup CSV: `probe_id,target_id,decoy_ids,target_sim,max_decoy_sim,correct`.
    /// Decoy ids are joined with `;`.
    pub fn lineups_csv(&self) -> String {
        let mut out = String::from("probe_id,target_id,decoy_ids,target_sim,max_decoy_sim,correct\n");
        for p in &self.outcomes {
            let l = &p.outcome.lineup;
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{}",
                l.probe_id,
                l.target_id,
                l.decoy_ids.join(";"),
                l.target_similarity,
                l.max_decoy_similarity(),
                p.outcome.correct
            );
        }
        out
    }

    /// Aggregate view without the per-lineup detail.
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            dataset_id: self.dataset_id.clone(),
            backend_id: self.backend_id.clone(),
            rank_offset: self.policy.rank_offset,
            n_probes: self.n_probes,
            n_correct: self.n_correct,
            n_skipped: self.skipped.len(),
            accuracy: self.accuracy,
            chance: crate::stats::CHANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dataset_id: String,
    pub backend_id: String,
    pub rank_offset: usize,
    pub n_probes: usize,
    pub n_correct: usize,
    pub n_skipped: usize,
    pub accuracy: f64,
    pub chance: f64,
}

/// Evaluates `probes` against the mugshot gallery using embeddings in `archive`.
pub fn evaluate_probes(
    manifest: &DatasetManifest,
    archive: &EmbeddingArchive,
    policy: &LineupPolicy,
    probes: &[&ImageRecord],
) -> Result<EvalResult> {
    policy.validate()?;
    let mugshots = manifest::select_mugshots(manifest);
    let gallery = Gallery::new(archive, &mugshots)?;
    if gallery.len() < policy.rank_offset + 1 {
        return Err(Error::Setup(format!(
            "rank offset {} needs {} identities with mugshots, manifest has {}",
            policy.rank_offset,
            policy.rank_offset + 1,
            gallery.len()
        )));
    }

    let mut skipped = Vec::new();
    let mut eligible = Vec::with_capacity(probes.len());
    for &p in probes {
        match mugshots.get(&p.identity_id) {
            None => skipped.push(SkippedProbe {
                probe_id: p.image_id.clone(),
                reason: format!("identity '{}' has no mugshot", p.identity_id),
            }),
            Some(m) if m.image_id == p.image_id => skipped.push(SkippedProbe {
                probe_id: p.image_id.clone(),
                reason: "probe is the designated mugshot".into(),
            }),
            Some(_) => eligible.push(p),
        }
    }
    if eligible.is_empty() {
        return Err(Error::EmptyEvaluation);
    }

    let mut outcomes: Vec<ScoredProbe> = eligible
        .par_iter()
        .map(|p| {
            let lineup = gallery.lineup(p, archive.require(&p.image_id)?, policy)?;
            Ok(ScoredProbe {
                outcome: evaluate_lineup(lineup),
                race: p.race.clone(),
                gender: p.gender.clone(),
            })
        })
        .collect::<Result<_>>()?;
    outcomes.sort_by(|a, b| a.outcome.lineup.probe_id.cmp(&b.outcome.lineup.probe_id));
    skipped.sort_by(|a, b| a.probe_id.cmp(&b.probe_id));

    let n_correct = outcomes.iter().filter(|o| o.outcome.correct).count();
    Ok(EvalResult {
        dataset_id: manifest.dataset_id.clone(),
        backend_id: archive.backend_id().to_string(),
        policy: *policy,
        n_probes: outcomes.len(),
        n_correct,
        accuracy: n_correct as f64 / outcomes.len() as f64,
        outcomes,
        skipped,
    })
}

/// Embeddings for designated mugshots (always clean) and the given probes.
fn embed_for_eval(
    manifest: &DatasetManifest,
    backend: &BackendDescriptor,
    probes: &[&ImageRecord],
    degradation: Option<&DegradationSpec>,
) -> Result<EmbeddingArchive> {
    match backend {
        BackendDescriptor::Baseline { seed } => {
            let embedder = BaselineEmbedder::new(*seed);
            let mugshots = manifest::select_mugshots(manifest);
            let gallery: Vec<&ImageRecord> = mugshots.values().collect();
            let mut archive = embed::embed_records(manifest, &gallery, &embedder, None)?;
            archive.merge_from(&embed::embed_records(manifest, probes, &embedder, degradation)?)?;
            Ok(archive)
        }
        BackendDescriptor::Archive { .. } => embed::batch_embed(manifest, backend, degradation),
    }
}

/// Full evaluation: one lineup per eligible probe passing `filter`.
pub fn run_eval(
    manifest: &DatasetManifest,
    backend: &BackendDescriptor,
    policy: &LineupPolicy,
    filter: &ProbeFilter,
    degradation: Option<&DegradationSpec>,
) -> Result<EvalResult> {
    manifest.check_lineup_feasible()?;
    policy.validate()?;
    filter.validate()?;
    let probes = manifest::filter_probes(manifest, filter);
    if probes.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let archive = embed_for_eval(manifest, backend, &probes, degradation)?;
    evaluate_probes(manifest, &archive, policy, &probes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: f64,
    pub accuracy: f64,
    pub n_probes: usize,
}

/// Accuracy against degradation level, points in severity order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyCurve {
    pub family: Family,
    pub dataset_id: String,
    pub points: Vec<CurvePoint>,
}

impl AccuracyCurve {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::param(format!(
                "{} curve needs at least 2 points, has {}",
                self.family,
                self.points.len()
            )));
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|p| !(0.0..=1.0).contains(&p.accuracy) || !p.level.is_finite())
        {
            return Err(Error::param(format!(
                "{} curve point ({}, {}) is invalid",
                self.family, p.level, p.accuracy
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.level).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accuracy).collect()
    }
}

/// Accuracy at each grid level with degraded probes and clean mugshots.
///
/// Probe embeddings are recomputed per level and lineups rebuilt from them, so
/// degradation affects decoy choice as well as the match decision. Noise
/// levels use `seed` mixed with each probe's id.
pub fn sweep_degradation(
    manifest: &DatasetManifest,
    backend: &BackendDescriptor,
    grid: &DegradationGrid,
    policy: &LineupPolicy,
    seed: u64,
) -> Result<AccuracyCurve> {
    let BackendDescriptor::Baseline { seed: embed_seed } = backend else {
        return Err(Error::param(
            "degradation sweeps re-embed probe pixels and need the baseline backend",
        ));
    };
    manifest.check_lineup_feasible()?;
    policy.validate()?;
    let probes = manifest::filter_probes(manifest, &ProbeFilter::default());
    if probes.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let embedder = BaselineEmbedder::new(*embed_seed);
    let mugshots = manifest::select_mugshots(manifest);
    let gallery: Vec<&ImageRecord> = mugshots.values().collect();
    let clean = embed::embed_records(manifest, &gallery, &embedder, None)?;

    let mut points = Vec::with_capacity(grid.levels().len());
    for &level in grid.levels() {
        let spec = DegradationSpec::new(grid.family(), level).with_seed(seed);
        let mut archive = clean.clone();
        archive.merge_from(&embed::embed_records(manifest, &probes, &embedder, Some(&spec))?)?;
        let result = evaluate_probes(manifest, &archive, policy, &probes)?;
        log::info!(
            "{} level {level}: accuracy {:.4} over {} probes",
            grid.family(),
            result.accuracy,
            result.n_probes
        );
        points.push(CurvePoint {
            level,
            accuracy: result.accuracy,
            n_probes: result.n_probes,
        });
    }
    Ok(AccuracyCurve {
        family: grid.family(),
        dataset_id: manifest.dataset_id.clone(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankOffsetPoint {
    pub rank_offset: usize,
    pub accuracy: f64,
    pub n_probes: usize,
    pub mean_decoy_similarity: f64,
}

/// Accuracy and mean probe–decoy similarity for each rank offset.
pub fn sweep_rank_offset(
    manifest: &DatasetManifest,
    backend: &BackendDescriptor,
    base: &LineupPolicy,
    offsets: &[usize],
) -> Result<Vec<RankOffsetPoint>> {
    manifest.check_lineup_feasible()?;
    base.validate()?;
    let identities = manifest::select_mugshots(manifest).len();
    for &n in offsets {
        LineupPolicy::with_offset(n)?;
        if n >= identities {
            return Err(Error::Setup(format!(
                "rank offset {n} exceeds the {} other identities available",
                identities.saturating_sub(1)
            )));
        }
    }
    let probes = manifest::filter_probes(manifest, &ProbeFilter::default());
    if probes.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let archive = embed_for_eval(manifest, backend, &probes, None)?;
    offsets
        .iter()
        .map(|&n| {
            let policy = LineupPolicy { rank_offset: n };
            let r = evaluate_probes(manifest, &archive, &policy, &probes)?;
            Ok(RankOffsetPoint {
                rank_offset: n,
                accuracy: r.accuracy,
                n_probes: r.n_probes,
                mean_decoy_similarity: r.mean_decoy_similarity(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub key: String,
    pub group: String,
    pub accuracy: f64,
    pub n: usize,
}

/// Keys accepted by [`subgroup_accuracy`].
pub const SUBGROUP_KEYS: [&str; 2] = ["race", "gender"];

/// Accuracy per value of `key` (`race` or `gender`), groups in sorted order.
pub fn subgroup_accuracy(result: &EvalResult, key: &str) -> Result<Vec<SubgroupRow>> {
    if !SUBGROUP_KEYS.contains(&key) {
        return Err(Error::param(format!(
            "unknown subgroup key '{key}'; expected one of {SUBGROUP_KEYS:?}"
        )));
    }
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in &result.outcomes {
        let g = groups.entry(p.attribute(key).unwrap_or_default()).or_default();
        g.0 += usize::from(p.outcome.correct);
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(group, (correct, n))| SubgroupRow {
            key: key.to_string(),
            group: group.to_string(),
            accuracy: correct as f64 / n as f64,
            n,
        })
        .collect())
}

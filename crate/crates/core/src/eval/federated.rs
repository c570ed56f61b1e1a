//! Per-subset evaluation restricted to the levels each subset annotates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{association_recall_at_k, average_precision, greedy_correspondence, ApResult, ImageDetections, ImageLinks};
use crate::data::corpus::Corpus;
use crate::data::profile::DatasetProfile;
use crate::data::scene::HierScene;
use crate::error::Result;
use crate::inference::{one_step_inference, InferenceResult};
use crate::level::{Level, LevelPair};
use crate::mask::Mask;
use crate::model::checkpoint::checkpoint_id;
use crate::model::AimsModel;

pub const RECALL_TOP_K: usize = 100;
/// IoU at which predictions are tied to ground truths for association recall.
pub const LINK_MATCH_IOU: f64 = 0.5;
/// Predictions with less than this fraction of their area inside the annotated region are ignored.
pub const MIN_ANNOTATED_OVERLAP: f64 = 0.5;

/// One image's predictions plus the annotations of its covered levels only.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub subset: String,
    pub result: InferenceResult,
    pub ground_truth: BTreeMap<Level, Vec<Mask>>,
    /// Ground-truth links `(coarse, fine)` for covered pairs.
    pub links: BTreeMap<LevelPair, Vec<(usize, usize)>>,
    pub annotated_region: Mask,
}

impl EvalRecord {
    /// Copies only the annotations `profile` covers.
    pub fn new(profile: &DatasetProfile, scene: &HierScene, result: InferenceResult) -> Self {
        let mut ground_truth = BTreeMap::new();
        for level in Level::ALL.into_iter().filter(|&l| profile.covers(l)) {
            let masks = match level {
                Level::Part => scene.parts.iter().map(|p| p.mask.clone()).collect(),
                Level::Entity => scene.entities.clone(),
                Level::Relation => scene.relations.iter().map(|r| r.mask.clone()).collect(),
            };
            ground_truth.insert(level, masks);
        }
        let mut links = BTreeMap::new();
        for pair in LevelPair::ALL {
            if !(profile.covers(pair.coarse()) && profile.covers(pair.fine())) {
                continue;
            }
            let g = match pair {
                LevelPair::EntityPart => scene.assoc_ep(),
                LevelPair::RelationEntity => scene.assoc_re(),
            };
            let pairs = g.indexed_iter().filter(|(_, &v)| v == 1).map(|((c, f), _)| (c, f)).collect();
            links.insert(pair, pairs);
        }
        EvalRecord { subset: profile.name.clone(), result, ground_truth, links, annotated_region: scene.annotated_region.clone() }
    }

    /// Kept predictions of `level` that fall mostly inside the annotated region.
    fn predictions(&self, level: Level) -> Vec<(usize, f64, Mask)> {
        let Some(r) = self.result.level(level) else { return vec![] };
        r.masks
            .iter()
            .zip(&r.scores)
            .enumerate()
            .filter(|(_, (m, _))| {
                let inside = m.and(&self.annotated_region).count() as f64;
                inside >= MIN_ANNOTATED_OVERLAP * m.count() as f64
            })
            .map(|(i, (m, &s))| (i, s, m.clone()))
            .collect()
    }

    fn detections(&self, level: Level) -> Option<ImageDetections> {
        let gts = self.ground_truth.get(&level)?;
        let predictions = self.predictions(level).into_iter().map(|(_, s, m)| (s, m)).collect();
        Some(ImageDetections { predictions, ground_truths: gts.clone() })
    }

    /// Ground-truth index per kept prediction of `level` at [`LINK_MATCH_IOU`].
    fn correspondence(&self, level: Level) -> Vec<Option<usize>> {
        let n = self.result.level(level).map_or(0, |r| r.len());
        let mut out = vec![None; n];
        let Some(gts) = self.ground_truth.get(&level) else { return out };
        let preds = self.predictions(level);
        let scored: Vec<(f64, Mask)> = preds.iter().map(|(_, s, m)| (*s, m.clone())).collect();
        for ((i, _, _), g) in preds.iter().zip(greedy_correspondence(&scored, gts, LINK_MATCH_IOU)) {
            out[*i] = g;
        }
        out
    }

    /// Every kept coarse/fine pair is a candidate link, ranked by its composite score;
    /// the association threshold plays no part in recall.
    fn image_links(&self, pair: LevelPair) -> Option<ImageLinks> {
        let ground_truth = self.links.get(&pair)?.clone();
        let mut predicted = Vec::new();
        if let (Some(a), Some(c), Some(f)) =
            (self.result.association(pair), self.result.level(pair.coarse()), self.result.level(pair.fine()))
        {
            for (i, row) in a.scores.iter().enumerate() {
                for (j, &logit) in row.iter().enumerate() {
                    predicted.push((crate::autograd::sigmoid(logit) * c.scores[i] * f.scores[j], i, j));
                }
            }
        }
        Some(ImageLinks {
            predicted,
            ground_truth,
            coarse_match: self.correspondence(pair.coarse()),
            fine_match: self.correspondence(pair.fine()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub subset: String,
    pub images: usize,
    /// `None` marks a covered level without any ground truth in this subset.
    pub ap: BTreeMap<Level, Option<ApResult>>,
    pub ar: BTreeMap<LevelPair, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederatedReport {
    pub checkpoint_id: String,
    pub recall_top_k: usize,
    pub subsets: Vec<SubsetReport>,
}

impl FederatedReport {
    pub fn subset(&self, name: &str) -> Option<&SubsetReport> {
        self.subsets.iter().find(|s| s.subset == name)
    }
}

/// Metrics of one subset from its records. Levels and pairs are those present in the records.
pub fn evaluate_records(subset: &str, records: &[EvalRecord], k: usize) -> SubsetReport {
    let levels: Vec<Level> =
        Level::ALL.into_iter().filter(|l| records.iter().any(|r| r.ground_truth.contains_key(l))).collect();
    let pairs: Vec<LevelPair> =
        LevelPair::ALL.into_iter().filter(|p| records.iter().any(|r| r.links.contains_key(p))).collect();
    let ap = levels
        .iter()
        .map(|&l| {
            let dets: Vec<ImageDetections> = records.iter().filter_map(|r| r.detections(l)).collect();
            (l, average_precision(&dets))
        })
        .collect();
    let ar = pairs
        .iter()
        .map(|&p| {
            let links: Vec<ImageLinks> = records.iter().filter_map(|r| r.image_links(p)).collect();
            (p, association_recall_at_k(&links, k))
        })
        .collect();
    SubsetReport { subset: subset.to_string(), images: records.len(), ap, ar }
}

/// One-step inference over every eval split, scored at the levels each subset covers.
pub fn federated_evaluate(model: &AimsModel, corpus: &Corpus) -> Result<FederatedReport> {
    let mut subsets = Vec::new();
    for split in corpus.splits() {
        let records = split
            .eval
            .iter()
            .map(|scene| Ok(EvalRecord::new(&split.profile, scene, one_step_inference(model, &scene.image)?)))
            .collect::<Result<Vec<_>>>()?;
        subsets.push(evaluate_records(&split.profile.name, &records, RECALL_TOP_K));
    }
    Ok(FederatedReport { checkpoint_id: checkpoint_id(model), recall_top_k: RECALL_TOP_K, subsets })
}

use std::collections::BTreeMap;

use crate::boxfit::OrientedBox3D;
use crate::cluster::TrackedBox2D;
use crate::geom::FrameSet;

use super::PipelineError;

/// Where a label came from: the initial geometric pass or a learner
/// iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GenerationTag {
    PseudoInitial,
    Predicted(u32),
}

impl GenerationTag {
    pub fn advance(self) -> Self {
        match self {
            GenerationTag::PseudoInitial => GenerationTag::Predicted(1),
            GenerationTag::Predicted(n) => GenerationTag::Predicted(n + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub track_id: u64,
    pub tag: GenerationTag,
    pub bbox: OrientedBox3D,
    /// Whether the fitted length passed the completeness check.
    pub complete: bool,
}

/// Labels keyed by `(track_id, tag)`, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    labels: BTreeMap<(u64, GenerationTag), Label>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Result<Self, PipelineError> {
        let mut set = Self::new();
        for l in labels {
            set.insert(l)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, mut label: Label) -> Result<(), PipelineError> {
        label.bbox.track_id = Some(label.track_id);
        let key = (label.track_id, label.tag);
        if self.labels.contains_key(&key) {
            return Err(PipelineError::Input(format!("duplicate label for track {} ({:?})", key.0, key.1)));
        }
        self.labels.insert(key, label);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.labels.values()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, track_id: u64, tag: GenerationTag) -> Option<&Label> {
        self.labels.get(&(track_id, tag))
    }

    /// Most recent label of every track.
    pub fn latest(&self) -> BTreeMap<u64, &Label> {
        let mut out = BTreeMap::new();
        for l in self.labels.values() {
            out.insert(l.track_id, l);
        }
        out
    }

    pub fn into_labels(self) -> Vec<Label> {
        self.labels.into_values().collect()
    }
}

/// Anchor frame of every track: the frame with the largest 2D box area, ties
/// to the earlier frame.
pub fn anchor_frames(boxes: &[TrackedBox2D]) -> BTreeMap<u64, u32> {
    let mut best: BTreeMap<u64, (f64, u32)> = BTreeMap::new();
    for b in boxes {
        let area = b.bbox.area();
        let e = best.entry(b.track_id).or_insert((area, b.frame_id));
        if area > e.0 || (area == e.0 && b.frame_id < e.1) {
            *e = (area, b.frame_id);
        }
    }
    best.into_iter().map(|(t, (_, f))| (t, f)).collect()
}

/// Keeps 3D geometry only for labels whose center depth at the track's anchor
/// frame lies in `[min_m, max_m]`. Everything else is demoted to 2D-only,
/// including labels whose track has no box in `frames`.
pub fn select_by_depth(
    labels: &LabelSet,
    range: (f64, f64),
    frames: &FrameSet,
    boxes: &[TrackedBox2D],
) -> LabelSet {
    let anchors = anchor_frames(boxes);
    let mut out = labels.clone();
    for l in out.labels.values_mut() {
        let depth = anchors
            .get(&l.track_id)
            .and_then(|f| frames.get(*f))
            .map(|frame| frame.depth_of(&l.bbox.center));
        let keep = matches!(depth, Some(d) if range.0 <= d && d <= range.1);
        if !keep {
            l.bbox.has_3d = false;
        }
    }
    out
}

/// Initial labels plus every predicted 3D label with `score >= score_floor`.
/// A track with an initial 3D label keeps it; a track whose initial label is
/// 2D-only takes the prediction instead.
pub fn merge_keep_initial(initial: &LabelSet, predicted: &LabelSet, score_floor: f64) -> LabelSet {
    let mut out = initial.clone();
    let initial_3d: std::collections::BTreeSet<u64> =
        initial.iter().filter(|l| l.bbox.has_3d).map(|l| l.track_id).collect();
    // iteration is in (track, tag) order, so the latest qualifying tag wins
    let mut chosen: BTreeMap<u64, &Label> = BTreeMap::new();
    for p in predicted.iter() {
        if p.bbox.has_3d && p.bbox.score >= score_floor && !initial_3d.contains(&p.track_id) {
            chosen.insert(p.track_id, p);
        }
    }
    for (track, p) in chosen {
        out.labels.retain(|k, _| k.0 != track);
        out.labels.insert((track, p.tag), p.clone());
    }
    out
}

/// The last iteration's predictions, with every tag advanced one generation.
/// If two labels of a track advance to the same tag, the later one wins.
pub fn merge_replace(predicted_last: &LabelSet) -> LabelSet {
    let mut out = LabelSet::new();
    for l in predicted_last.iter() {
        let mut next = l.clone();
        next.tag = l.tag.advance();
        out.labels.insert((next.track_id, next.tag), next);
    }
    out
}

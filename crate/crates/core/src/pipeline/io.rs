//! JSON-Lines records for every entity the CLI stages exchange. Field names
//! are frozen; see `docs/formats.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::boxfit::OrientedBox3D;
use crate::cluster::{ClusterSource, ObjectCluster, TrackedBox2D};
use crate::geom::{Box2D, CameraFrame, CameraIntrinsics, FrameSet, Pixel, Point3, Pose};
use crate::triangulate::{ObservationTrack, WorldPoint};

use super::labels::{GenerationTag, Label, LabelSet};
use super::scene::{SceneBundle, Truth, TruthObject, TruthPoint, TruthState};
use super::PipelineError;

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const BOXES_FILE: &str = "boxes2d.jsonl";
pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const POINTS_FILE: &str = "points.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const PR_CURVES_FILE: &str = "pr_curves.csv";

fn write_float<W: ?Sized + io::Write>(w: &mut W, v: f64) -> io::Result<()> {
    // 17 significant digits round-trip every f64
    write!(w, "{v:.16e}")
}

/// Compact JSON with every float written to 17 significant digits.
struct CompactFloats;

impl Formatter for CompactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write_float(w, v)
    }
}

struct PrettyFloats<'a>(PrettyFormatter<'a>);

impl Formatter for PrettyFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write_float(w, v)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CompactFloats);
    value.serialize(&mut ser).expect("records serialize");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PrettyFloats(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("records serialize");
    let mut s = String::from_utf8(buf).expect("JSON is UTF-8");
    s.push('\n');
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        out.write_all(to_json_line(&item).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

fn p3(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn to_p3(a: [f64; 3]) -> Point3 {
    Point3::new(a[0], a[1], a[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&CameraFrame> for FrameRecord {
    fn from(f: &CameraFrame) -> Self {
        let r = f.pose.rotation();
        let t = f.pose.translation();
        let k = &f.intrinsics;
        Self {
            frame_id: f.frame_id,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [t.x, t.y, t.z],
        }
    }
}

impl TryFrom<FrameRecord> for CameraFrame {
    type Error = PipelineError;
    fn try_from(r: FrameRecord) -> Result<Self, PipelineError> {
        let bad = |e: crate::geom::GeomError| PipelineError::Input(format!("frame {}: {e}", r.frame_id));
        let intrinsics = CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height).map_err(bad)?;
        let pose = Pose::new(Matrix3::from_row_slice(&r.rotation), Vector3::from(r.translation)).map_err(bad)?;
        Ok(CameraFrame { frame_id: r.frame_id, intrinsics, pose })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box2DRecord {
    pub track_id: u64,
    pub frame_id: u32,
    pub class_label: String,
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl From<&TrackedBox2D> for Box2DRecord {
    fn from(b: &TrackedBox2D) -> Self {
        Self {
            track_id: b.track_id,
            frame_id: b.frame_id,
            class_label: b.class_label.clone(),
            u_min: b.bbox.u_min,
            v_min: b.bbox.v_min,
            u_max: b.bbox.u_max,
            v_max: b.bbox.v_max,
        }
    }
}

impl TryFrom<Box2DRecord> for TrackedBox2D {
    type Error = PipelineError;
    fn try_from(r: Box2DRecord) -> Result<Self, PipelineError> {
        let bbox = Box2D::new(r.u_min, r.v_min, r.u_max, r.v_max)
            .map_err(|e| PipelineError::Input(format!("box of track {} frame {}: {e}", r.track_id, r.frame_id)))?;
        Ok(TrackedBox2D { track_id: r.track_id, frame_id: r.frame_id, bbox, class_label: r.class_label })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub point_id: u64,
    pub frame_id: u32,
    pub u: f64,
    pub v: f64,
}

/// One record per observation, grouped by point id in order of appearance.
pub fn observation_records(tracks: &[ObservationTrack]) -> Vec<ObservationRecord> {
    let mut sorted: Vec<&ObservationTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.point_id);
    sorted
        .into_iter()
        .flat_map(|t| {
            t.observations.iter().map(|(f, px)| ObservationRecord { point_id: t.point_id, frame_id: *f, u: px.u, v: px.v })
        })
        .collect()
}

pub fn tracks_from_records(records: Vec<ObservationRecord>) -> Vec<ObservationTrack> {
    let mut by_point: BTreeMap<u64, Vec<(u32, Pixel)>> = BTreeMap::new();
    for r in records {
        by_point.entry(r.point_id).or_default().push((r.frame_id, Pixel::new(r.u, r.v)));
    }
    by_point.into_iter().map(|(point_id, observations)| ObservationTrack { point_id, observations }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub frame_id: u32,
    pub center: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthRecord {
    Object {
        track_id: u64,
        class_label: String,
        moving: bool,
        l: f64,
        w: f64,
        h: f64,
        states: Vec<StateRecord>,
    },
    Point {
        point_id: u64,
        object_id: Option<u64>,
        position: [f64; 3],
    },
}

pub fn truth_records(truth: &Truth) -> Vec<TruthRecord> {
    let objects = truth.objects.iter().map(|o| TruthRecord::Object {
        track_id: o.track_id,
        class_label: o.class_label.clone(),
        moving: o.moving,
        l: o.l,
        w: o.w,
        h: o.h,
        states: o
            .states
            .iter()
            .map(|s| StateRecord { frame_id: s.frame_id, center: p3(&s.center), yaw: s.yaw })
            .collect(),
    });
    let points = truth.points.iter().map(|p| TruthRecord::Point {
        point_id: p.point_id,
        object_id: p.object_id,
        position: p3(&p.position),
    });
    objects.chain(points).collect()
}

pub fn truth_from_records(records: Vec<TruthRecord>) -> Truth {
    let mut truth = Truth::default();
    for r in records {
        match r {
            TruthRecord::Object { track_id, class_label, moving, l, w, h, states } => truth.objects.push(TruthObject {
                track_id,
                class_label,
                moving,
                l,
                w,
                h,
                states: states
                    .into_iter()
                    .map(|s| TruthState { frame_id: s.frame_id, center: to_p3(s.center), yaw: s.yaw })
                    .collect(),
            }),
            TruthRecord::Point { point_id, object_id, position } => {
                truth.points.push(TruthPoint { point_id, object_id, position: to_p3(position) })
            }
        }
    }
    truth
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    PseudoInitial,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub track_id: u64,
    pub tag: TagKind,
    /// Learner iteration for predicted labels, null otherwise.
    pub iteration: Option<u32>,
    pub class_label: String,
    pub has_3d: bool,
    pub complete: bool,
    pub center: [f64; 3],
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub score: f64,
}

impl From<&Label> for LabelRecord {
    fn from(l: &Label) -> Self {
        let (tag, iteration) = match l.tag {
            GenerationTag::PseudoInitial => (TagKind::PseudoInitial, None),
            GenerationTag::Predicted(n) => (TagKind::Predicted, Some(n)),
        };
        let b = &l.bbox;
        Self {
            track_id: l.track_id,
            tag,
            iteration,
            class_label: b.class_label.clone(),
            has_3d: b.has_3d,
            complete: l.complete,
            center: p3(&b.center),
            l: b.l,
            w: b.w,
            h: b.h,
            yaw: b.yaw,
            score: b.score,
        }
    }
}

impl TryFrom<LabelRecord> for Label {
    type Error = PipelineError;
    fn try_from(r: LabelRecord) -> Result<Self, PipelineError> {
        let tag = match (r.tag, r.iteration) {
            (TagKind::PseudoInitial, None) => GenerationTag::PseudoInitial,
            (TagKind::Predicted, Some(n)) => GenerationTag::Predicted(n),
            _ => {
                return Err(PipelineError::Input(format!(
                    "label of track {}: iteration must be set exactly for predicted labels",
                    r.track_id
                )))
            }
        };
        if r.has_3d && !(r.l > 0.0 && r.w > 0.0 && r.h > 0.0) {
            return Err(PipelineError::Input(format!("label of track {} has a non-positive size", r.track_id)));
        }
        let bbox = OrientedBox3D {
            center: to_p3(r.center),
            w: r.w,
            h: r.h,
            l: r.l,
            yaw: r.yaw,
            score: r.score,
            track_id: Some(r.track_id),
            class_label: r.class_label,
            has_3d: r.has_3d,
        };
        Ok(Label { track_id: r.track_id, tag, bbox, complete: r.complete })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRecord {
    pub point_id: u64,
    pub position: [f64; 3],
    pub residual_rms: f64,
    pub n_views: usize,
}

impl From<&WorldPoint> for PointRecord {
    fn from(p: &WorldPoint) -> Self {
        Self { point_id: p.point_id, position: p3(&p.position), residual_rms: p.residual_rms, n_views: p.n_views }
    }
}

impl From<PointRecord> for WorldPoint {
    fn from(r: PointRecord) -> Self {
        WorldPoint { point_id: r.point_id, position: to_p3(r.position), residual_rms: r.residual_rms, n_views: r.n_views }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRecord {
    pub track_id: u64,
    pub source: ClusterSource,
    pub mean_residual_px: f64,
    pub point_ids: Vec<u64>,
    pub points: Vec<[f64; 3]>,
}

impl From<&ObjectCluster> for ClusterRecord {
    fn from(c: &ObjectCluster) -> Self {
        Self {
            track_id: c.matched_track_id.unwrap_or_default(),
            source: c.source,
            mean_residual_px: c.mean_residual_px,
            point_ids: c.point_ids.clone(),
            points: c.points.iter().map(p3).collect(),
        }
    }
}

impl TryFrom<ClusterRecord> for ObjectCluster {
    type Error = PipelineError;
    fn try_from(r: ClusterRecord) -> Result<Self, PipelineError> {
        if r.point_ids.len() != r.points.len() {
            return Err(PipelineError::Input(format!("cluster of track {}: ids and points differ in length", r.track_id)));
        }
        if r.point_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PipelineError::Input(format!("cluster of track {}: point ids must be strictly increasing", r.track_id)));
        }
        Ok(ObjectCluster {
            point_ids: r.point_ids,
            points: r.points.into_iter().map(to_p3).collect(),
            source: r.source,
            matched_track_id: Some(r.track_id),
            mean_residual_px: r.mean_residual_px,
        })
    }
}

pub fn write_scene(dir: &Path, scene: &SceneBundle) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(FRAMES_FILE), scene.frames.iter().map(FrameRecord::from))?;
    write_jsonl(&dir.join(BOXES_FILE), scene.tracks2d.iter().map(Box2DRecord::from))?;
    write_jsonl(&dir.join(OBSERVATIONS_FILE), observation_records(&scene.obs_tracks))?;
    if let Some(truth) = &scene.truth {
        write_jsonl(&dir.join(TRUTH_FILE), truth_records(truth))?;
    }
    Ok(())
}

/// Reads a scene directory. `truth.jsonl` is optional.
pub fn read_scene(dir: &Path) -> Result<SceneBundle, PipelineError> {
    let frames: Vec<CameraFrame> =
        read_jsonl::<FrameRecord>(&dir.join(FRAMES_FILE))?.into_iter().map(CameraFrame::try_from).collect::<Result<_, _>>()?;
    let frames = FrameSet::new(frames).map_err(|e| PipelineError::Input(e.to_string()))?;
    let tracks2d =
        read_jsonl::<Box2DRecord>(&dir.join(BOXES_FILE))?.into_iter().map(TrackedBox2D::try_from).collect::<Result<_, _>>()?;
    let obs_tracks = tracks_from_records(read_jsonl(&dir.join(OBSERVATIONS_FILE))?);
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() { Some(truth_from_records(read_jsonl(&truth_path)?)) } else { None };
    let scene = SceneBundle { frames, tracks2d, obs_tracks, truth };
    scene.validate()?;
    Ok(scene)
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> io::Result<()> {
    write_jsonl(path, labels.iter().map(LabelRecord::from))
}

pub fn read_labels(path: &Path) -> Result<LabelSet, PipelineError> {
    let labels = read_jsonl::<LabelRecord>(path)?.into_iter().map(Label::try_from).collect::<Result<Vec<_>, _>>()?;
    LabelSet::from_labels(labels)
}

pub fn write_points(path: &Path, points: &[WorldPoint]) -> io::Result<()> {
    write_jsonl(path, points.iter().map(PointRecord::from))
}

pub fn read_points(path: &Path) -> Result<Vec<WorldPoint>, PipelineError> {
    Ok(read_jsonl::<PointRecord>(path)?.into_iter().map(WorldPoint::from).collect())
}

pub fn write_clusters<'a>(path: &Path, clusters: impl IntoIterator<Item = &'a ObjectCluster>) -> io::Result<()> {
    write_jsonl(path, clusters.into_iter().map(ClusterRecord::from))
}

pub fn read_clusters(path: &Path) -> Result<BTreeMap<u64, ObjectCluster>, PipelineError> {
    let mut out = BTreeMap::new();
    for r in read_jsonl::<ClusterRecord>(path)? {
        let track = r.track_id;
        if out.insert(track, ObjectCluster::try_from(r)?).is_some() {
            return Err(PipelineError::Input(format!("two clusters for track {track}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_digits() {
        let line = to_json_line(&ObservationRecord { point_id: 1, frame_id: 2, u: 0.1, v: -3.0 });
        assert_eq!(line, r#"{"point_id":1,"frame_id":2,"u":1.0000000000000001e-1,"v":-3.0000000000000000e0}"#);
        let back: ObservationRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.u, 0.1);
    }

    #[test]
    fn label_tag_consistency() {
        let mut r = LabelRecord {
            track_id: 3,
            tag: TagKind::Predicted,
            iteration: None,
            class_label: "vehicle".into(),
            has_3d: true,
            complete: true,
            center: [1.0, 2.0, 0.5],
            l: 4.0,
            w: 2.0,
            h: 1.5,
            yaw: 0.1,
            score: 0.7,
        };
        assert!(Label::try_from(r.clone()).is_err());
        r.iteration = Some(2);
        let l = Label::try_from(r.clone()).unwrap();
        assert_eq!(l.tag, GenerationTag::Predicted(2));
        assert_eq!(LabelRecord::from(&l), r);
    }
}

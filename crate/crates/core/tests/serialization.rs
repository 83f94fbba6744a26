use std::fmt::Debug;

use proptest::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use monolabel::boxfit::OrientedBox3D;
use monolabel::cluster::ClusterSource;
use monolabel::geom::Point3;
use monolabel::pipeline::io::{
    self, Box2DRecord, ClusterRecord, FrameRecord, LabelRecord, ObservationRecord, PointRecord, StateRecord, TagKind,
    TruthRecord,
};
use monolabel::pipeline::{simulate, GenerationTag, Label, LabelSet, SimConfig};

fn round_trip<T: Serialize + DeserializeOwned + PartialEq + Debug>(value: &T) -> Result<(), TestCaseError> {
    let line = io::to_json_line(value);
    prop_assert!(!line.contains('\n'));
    let back: T = serde_json::from_str(&line).map_err(|e| TestCaseError::fail(format!("{e}: {line}")))?;
    prop_assert_eq!(&back, value);
    Ok(())
}

fn real() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e4..1e4f64,
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        Just(0.1),
        Just(-0.0),
    ]
}

fn p3() -> impl Strategy<Value = [f64; 3]> {
    [real(), real(), real()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn frame_records(id in any::<u32>(), k in [real(), real(), real(), real()], size in (1..10_000u32, 1..10_000u32),
                     rotation in [real(), real(), real(), real(), real(), real(), real(), real(), real()], t in p3()) {
        round_trip(&FrameRecord { frame_id: id, fx: k[0], fy: k[1], cx: k[2], cy: k[3], width: size.0, height: size.1, rotation, translation: t })?;
    }

    #[test]
    fn box_and_observation_records(track in any::<u64>(), frame in any::<u32>(), class in "[a-z_ ]{0,12}", b in [real(), real(), real(), real()]) {
        round_trip(&Box2DRecord { track_id: track, frame_id: frame, class_label: class, u_min: b[0], v_min: b[1], u_max: b[2], v_max: b[3] })?;
        round_trip(&ObservationRecord { point_id: track, frame_id: frame, u: b[0], v: b[1] })?;
    }

    #[test]
    fn truth_records(track in any::<u64>(), moving in any::<bool>(), size in p3(), states in prop::collection::vec((any::<u32>(), p3(), real()), 0..5),
                     object in prop::option::of(any::<u64>()), position in p3()) {
        round_trip(&TruthRecord::Object {
            track_id: track,
            class_label: "vehicle".into(),
            moving,
            l: size[0],
            w: size[1],
            h: size[2],
            states: states.into_iter().map(|(frame_id, center, yaw)| StateRecord { frame_id, center, yaw }).collect(),
        })?;
        round_trip(&TruthRecord::Point { point_id: track, object_id: object, position })?;
    }

    #[test]
    fn point_and_cluster_records(id in any::<u64>(), position in p3(), rms in real(), views in 2..500usize,
                                 points in prop::collection::vec(p3(), 0..20), gpc in any::<bool>()) {
        round_trip(&PointRecord { point_id: id, position, residual_rms: rms, n_views: views })?;
        let point_ids = (0..points.len() as u64).map(|i| i * 7 + 2).collect();
        let source = if gpc { ClusterSource::Gpc } else { ClusterSource::Lpc };
        round_trip(&ClusterRecord { track_id: id, source, mean_residual_px: rms, point_ids, points })?;
    }

    #[test]
    fn label_records(track in any::<u64>(), iteration in prop::option::of(any::<u32>()), has_3d in any::<bool>(), complete in any::<bool>(),
                     center in p3(), size in (0.01..20.0f64, 0.01..5.0f64, 0.01..5.0f64), yaw in real(), score in 0.0..=1.0f64) {
        let tag = iteration.map_or(GenerationTag::PseudoInitial, GenerationTag::Predicted);
        let mut bbox = OrientedBox3D::new(Point3::new(center[0], center[1], center[2]), size.0, size.1, size.2, yaw);
        bbox.has_3d = has_3d;
        bbox.score = score;
        bbox.class_label = "vehicle".into();
        bbox.track_id = Some(track);
        let label = Label { track_id: track, tag, bbox, complete };
        let record = LabelRecord::from(&label);
        prop_assert_eq!(record.tag, if iteration.is_some() { TagKind::Predicted } else { TagKind::PseudoInitial });
        round_trip(&record)?;
        let back = Label::try_from(serde_json::from_str::<LabelRecord>(&io::to_json_line(&record)).unwrap()).unwrap();
        prop_assert_eq!(back, label);
    }
}

#[test]
fn scene_and_labels_survive_the_file_system() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(&SimConfig { seed: 4, n_objects: 5, n_frames: 8, moving_fraction: 0.4, ..SimConfig::default() }).unwrap();
    io::write_scene(dir.path(), &scene).unwrap();
    let back = io::read_scene(dir.path()).unwrap();
    assert_eq!(back.frames, scene.frames);
    assert_eq!(back.tracks2d, scene.tracks2d);
    assert_eq!(back.obs_tracks, scene.obs_tracks);
    assert_eq!(back.truth, scene.truth);

    let labels = LabelSet::from_labels(scene.truth.as_ref().unwrap().objects.iter().enumerate().map(|(i, o)| {
        let mut bbox = o.box_at(0).unwrap();
        bbox.score = 0.25 * i as f64 / 3.0;
        let tag = if i % 2 == 0 { GenerationTag::PseudoInitial } else { GenerationTag::Predicted(i as u32) };
        Label { track_id: o.track_id, tag, bbox, complete: i % 3 == 0 }
    }))
    .unwrap();
    let path = dir.path().join("labels.jsonl");
    io::write_labels(&path, &labels).unwrap();
    assert_eq!(io::read_labels(&path).unwrap(), labels);
}

#[test]
fn unknown_fields_are_rejected() {
    let line = r#"{"point_id":1,"frame_id":0,"u":1.0,"v":2.0,"w":3.0}"#;
    assert!(serde_json::from_str::<ObservationRecord>(line).is_err());
    let bad_tag = r#"{"track_id":1,"tag":"pseudo_initial","iteration":2,"class_label":"car","has_3d":true,"complete":true,"center":[0,0,0],"l":1,"w":1,"h":1,"yaw":0,"score":1}"#;
    let record: LabelRecord = serde_json::from_str(bad_tag).unwrap();
    assert!(Label::try_from(record).is_err());
}

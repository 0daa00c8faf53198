use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::GrayImage;
use prost::Message;
use tract_onnx::pb::{
    tensor_proto::DataType, tensor_shape_proto::dimension::Value as Dim, tensor_shape_proto::Dimension, type_proto,
    AttributeProto, GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorProto, TensorShapeProto, TypeProto,
    ValueInfoProto,
};
use vo_core::frontend::{FeatureExtractor, FeatureSet};
use vo_core::geometry::PixelPoint;
use vo_core::matcher::FeatureMatcher;
use vo_core::model_runtime::*;

fn value_info(name: &str, dt: DataType, dims: &[Option<i64>]) -> ValueInfoProto {
    let dim = dims
        .iter()
        .enumerate()
        .map(|(i, d)| Dimension {
            value: Some(match d {
                Some(v) => Dim::DimValue(*v),
                None => Dim::DimParam(format!("{name}_{i}")),
            }),
            ..Default::default()
        })
        .collect();
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            value: Some(type_proto::Value::TensorType(type_proto::Tensor {
                elem_type: dt as i32,
                shape: Some(TensorShapeProto { dim }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn float_tensor(name: &str, dims: &[i64], data: &[f32]) -> TensorProto {
    TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: DataType::Float as i32,
        float_data: data.to_vec(),
        ..Default::default()
    }
}

fn int_tensor(name: &str, dims: &[i64], data: &[i64]) -> TensorProto {
    TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: DataType::Int64 as i32,
        int64_data: data.to_vec(),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], outputs: &[&str], attribute: Vec<AttributeProto>) -> NodeProto {
    NodeProto {
        op_type: op.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: outputs.iter().map(|s| s.to_string()).collect(),
        attribute,
        ..Default::default()
    }
}

fn write_model(path: &Path, graph: GraphProto) {
    let model = ModelProto {
        ir_version: 8,
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "test".into(),
        graph: Some(graph),
        ..Default::default()
    };
    std::fs::write(path, model.encode_to_vec()).unwrap();
}

const DIM: usize = 4;

/// Extractor emitting four fixed keypoints (one outside a 64×48 image) with
/// unnormalized descriptors scaled by `1 + mean(image)`.
fn extractor_model(dir: &Path) -> PathBuf {
    let path = dir.join("extractor.onnx");
    let keypoints = [10.0, 5.0, 20.0, 30.0, 70.0, 10.0, 63.0, 47.0];
    let scores = [0.9, 0.8, 0.7, 0.6];
    let desc = [
        3.0, 0.0, 0.0, 4.0, //
        0.0, 2.0, 0.0, 0.0, //
        1.0, 1.0, 1.0, 1.0, //
        0.0, 0.0, 5.0, 5.0,
    ];
    let keepdims = AttributeProto {
        name: "keepdims".into(),
        i: 0,
        r#type: 2,
        ..Default::default()
    };
    let graph = GraphProto {
        name: "extractor".into(),
        node: vec![
            node("Identity", &["kp_c"], &["keypoints"], vec![]),
            node("Identity", &["sc_c"], &["scores"], vec![]),
            node("ReduceMean", &["image"], &["mean"], vec![keepdims]),
            node("Add", &["mean", "one"], &["gain"], vec![]),
            node("Mul", &["desc_c", "gain"], &["descriptors"], vec![]),
        ],
        initializer: vec![
            float_tensor("kp_c", &[4, 2], &keypoints),
            float_tensor("sc_c", &[4], &scores),
            float_tensor("desc_c", &[4, DIM as i64], &desc),
            float_tensor("one", &[], &[1.0]),
        ],
        input: vec![value_info("image", DataType::Float, &[Some(1), Some(1), None, None])],
        output: vec![
            value_info("keypoints", DataType::Float, &[Some(4), Some(2)]),
            value_info("scores", DataType::Float, &[Some(4)]),
            value_info("descriptors", DataType::Float, &[Some(4), Some(DIM as i64)]),
        ],
        ..Default::default()
    };
    write_model(&path, graph);
    path
}

fn matcher_inputs() -> Vec<ValueInfoProto> {
    vec![
        value_info("kpts0", DataType::Float, &[None, Some(2)]),
        value_info("kpts1", DataType::Float, &[None, Some(2)]),
        value_info("desc0", DataType::Float, &[None, Some(DIM as i64)]),
        value_info("desc1", DataType::Float, &[None, Some(DIM as i64)]),
    ]
}

/// Matcher returning fixed raw pairs, including a duplicate `index_b` and an
/// out-of-range index.
fn matcher_model(dir: &Path) -> PathBuf {
    let path = dir.join("matcher.onnx");
    let pairs = [0, 1, 1, 1, 2, 0, 9, 0];
    let scores = [0.6, 0.9, 0.8, 0.99];
    let graph = GraphProto {
        name: "matcher".into(),
        node: vec![
            node("Identity", &["pairs_c"], &["matches"], vec![]),
            node("Identity", &["scores_c"], &["scores"], vec![]),
        ],
        initializer: vec![
            int_tensor("pairs_c", &[4, 2], &pairs),
            float_tensor("scores_c", &[4], &scores),
        ],
        input: matcher_inputs(),
        output: vec![
            value_info("matches", DataType::Int64, &[Some(4), Some(2)]),
            value_info("scores", DataType::Float, &[Some(4)]),
        ],
        ..Default::default()
    };
    write_model(&path, graph);
    path
}

/// Matcher whose graph cannot execute: its scores add a [N,2] input to a
/// length-3 vector.
fn broken_matcher_model(dir: &Path) -> PathBuf {
    let path = dir.join("broken.onnx");
    let graph = GraphProto {
        name: "broken".into(),
        node: vec![
            node("Identity", &["pairs_c"], &["matches"], vec![]),
            node("Add", &["kpts0", "three"], &["scores"], vec![]),
        ],
        initializer: vec![
            int_tensor("pairs_c", &[1, 2], &[0, 0]),
            float_tensor("three", &[3], &[1.0, 2.0, 3.0]),
        ],
        input: matcher_inputs(),
        output: vec![
            value_info("matches", DataType::Int64, &[Some(1), Some(2)]),
            value_info("scores", DataType::Float, &[None]),
        ],
        ..Default::default()
    };
    write_model(&path, graph);
    path
}

fn feature_set(n: usize) -> FeatureSet {
    let mut desc = vec![0f32; n * DIM];
    for i in 0..n {
        desc[i * DIM + i % DIM] = 1.0;
    }
    FeatureSet::new(
        (0..n).map(|i| PixelPoint::new(i as f64, i as f64)).collect(),
        vec![1.0; n],
        desc,
        DIM,
        (64, 48),
    )
    .unwrap()
}

#[test]
fn extractor_output_is_sanitized_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let h = load_model(&extractor_model(dir.path()), ModelKind::Extractor, Device::Cpu).unwrap();
    assert_eq!(h.device, Device::Cpu);
    assert_eq!(h.sha256.len(), 64);
    let image = GrayImage::from_fn(64, 48, |x, y| image::Luma([((x * 7 + y * 3) % 256) as u8]));
    let fs = run_extractor(&h, &image).unwrap();
    assert_eq!(fs.len(), 3, "keypoint at u = 70 lies outside a 64-wide image");
    assert_eq!(fs.descriptor_dim(), DIM);
    for i in 0..fs.len() {
        let norm: f32 = fs.descriptor(i).iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-4);
    }
    assert_eq!(fs.keypoints()[0], PixelPoint::new(10.0, 5.0));
    assert_eq!(fs.keypoints()[2], PixelPoint::new(63.0, 47.0));
    assert_eq!(fs.descriptor(0), &[0.6, 0.0, 0.0, 0.8]);
    assert_eq!(run_extractor(&h, &image).unwrap(), fs);

    let bigger = GrayImage::new(80, 60);
    assert_eq!(run_extractor(&h, &bigger).unwrap().len(), 4);
}

#[test]
fn learned_extractor_wraps_handle() {
    let dir = tempfile::tempdir().unwrap();
    let h = Arc::new(load_model(&extractor_model(dir.path()), ModelKind::Extractor, Device::Cpu).unwrap());
    let ex = LearnedExtractor::new(h.clone()).unwrap();
    assert_eq!(ex.extract(&GrayImage::new(64, 48)).unwrap().len(), 3);
    assert!(LearnedMatcher::new(h).is_err());
}

#[test]
fn extractor_declared_as_matcher_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_model(&extractor_model(dir.path()), ModelKind::Matcher, Device::Cpu).unwrap_err();
    assert!(matches!(err, ModelError::SignatureMismatch { .. }), "{err}");
    let err = load_model(&matcher_model(dir.path()), ModelKind::Extractor, Device::Cpu).unwrap_err();
    assert!(matches!(err, ModelError::SignatureMismatch { .. }), "{err}");
}

#[test]
fn unreadable_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.onnx");
    std::fs::write(&junk, b"not a model").unwrap();
    let err = load_model(&junk, ModelKind::Extractor, Device::Cpu).unwrap_err();
    assert!(matches!(err, ModelError::ModelFileUnreadable { .. }), "{err}");
    let err = load_model(&dir.path().join("missing.onnx"), ModelKind::Extractor, Device::Cpu).unwrap_err();
    assert!(matches!(err, ModelError::ModelFileUnreadable { .. }), "{err}");
}

#[test]
fn gpu_request_falls_back_to_cpu() {
    let dir = tempfile::tempdir().unwrap();
    let h = load_model(&extractor_model(dir.path()), ModelKind::Extractor, Device::Gpu).unwrap();
    assert_eq!(h.device, Device::Cpu);
}

#[test]
fn matcher_output_is_made_one_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let h = load_model(&matcher_model(dir.path()), ModelKind::Matcher, Device::Cpu).unwrap();
    let m = run_matcher(&h, &feature_set(3), &feature_set(2), 0.0).unwrap();
    assert_eq!(m.pairs(), &[(1, 1), (2, 0)]);
    assert_eq!(m.confidences(), &[0.9, 0.8]);

    let m = run_matcher(&h, &feature_set(3), &feature_set(2), 0.85).unwrap();
    assert_eq!(m.pairs(), &[(1, 1)]);

    let wrapped = LearnedMatcher::new(Arc::new(h)).unwrap();
    let m = wrapped.match_sets(&feature_set(3), &feature_set(2), 0.0).unwrap();
    assert!(m.is_one_to_one());
    assert_eq!(m.len(), 2);
}

#[test]
fn empty_input_skips_inference() {
    let dir = tempfile::tempdir().unwrap();
    let h = load_model(&broken_matcher_model(dir.path()), ModelKind::Matcher, Device::Cpu).unwrap();
    assert!(run_matcher(&h, &feature_set(2), &feature_set(2), 0.0).is_err());
    let empty = FeatureSet::empty((64, 48), DIM);
    assert!(run_matcher(&h, &empty, &feature_set(2), 0.0).unwrap().is_empty());
    assert!(run_matcher(&h, &feature_set(2), &empty, 0.0).unwrap().is_empty());
}

use hoi_head::classifier::ClassifierWeights;
use hoi_head::dataio::{read_matrix, Dtype, Role, Sidecar};
use hoi_head::labelspace::{gerundize, make_prompt, ClassList, GerundTable, HoiLabel};
use hoi_head::Error;

/// Bytes as an external writer would lay them out: `<4sBBHQQ` then
/// little-endian float32 rows.
fn external_container(rows: &[Vec<f32>]) -> Vec<u8> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut out = b"DEFR".to_vec();
    out.extend([1u8, 0u8]);
    out.extend(0u16.to_le_bytes());
    out.extend((rows.len() as u64).to_le_bytes());
    out.extend((cols as u64).to_le_bytes());
    for v in rows.iter().flatten() {
        out.extend(v.to_le_bytes());
    }
    out
}

fn unit_rows(c: usize, d: usize) -> Vec<Vec<f32>> {
    (0..c)
        .map(|i| {
            let raw: Vec<f64> = (0..d).map(|j| ((i * 31 + j * 17) % 13) as f64 - 6.0 + 0.5).collect();
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| (v / n) as f32).collect()
        })
        .collect()
}

#[test]
fn exported_embeddings_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let classes = ClassList::parse("ride bicycle\neat apple\nno_interaction bicycle\nhop_on elephant\n").unwrap();
    let prompts = classes.prompts(GerundTable::builtin());
    let path = dir.path().join("E.bin");
    std::fs::write(&path, external_container(&unit_rows(prompts.len(), 8))).unwrap();
    let sidecar = serde_json::json!({
        "role": "embeddings",
        "classes_sha256": classes.sha256(),
        "encoder_name": "some-text-encoder",
        "pooling": "mean",
        "prompts_sha256": "00ff",
        "normalize": true,
    });
    std::fs::write(Sidecar::path_for(&path), sidecar.to_string()).unwrap();

    let (m, dtype) = read_matrix(&path).unwrap();
    assert_eq!(dtype, Dtype::F32);
    assert_eq!(m.rows(), prompts.len());
    for r in m.iter_rows() {
        assert!((hoi_head::matrix::norm(r) - 1.0).abs() < 1e-5);
    }
    let meta = Sidecar::read(&path).unwrap().unwrap();
    assert_eq!(meta.role, Role::Embeddings);
    assert_eq!(meta.classes_sha256, classes.sha256());
    assert_eq!(meta.extra["encoder_name"], "some-text-encoder");
    assert_eq!(meta.extra["pooling"], "mean");
    let w = ClassifierWeights::from_embeddings(&m, 100.0).unwrap();
    assert_eq!((w.classes(), w.dim()), (4, 8));
}

#[test]
fn exported_file_with_extra_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("E.bin");
    let mut bytes = external_container(&unit_rows(3, 4));
    bytes.extend([0u8; 4]);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(read_matrix(&path), Err(Error::TrailingBytes(4))));
}

#[test]
fn sidecar_with_unknown_role_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("E.bin");
    std::fs::write(Sidecar::path_for(&path), r#"{"role":"logits","classes_sha256":"x"}"#).unwrap();
    assert!(matches!(Sidecar::read(&path), Err(Error::Sidecar(_))));
}

#[test]
fn hico_verb_gerunds() {
    let text = include_str!("fixtures/hico_gerunds.txt");
    let mut n = 0;
    for line in text.lines() {
        let (verb, expected) = line.split_once(' ').unwrap();
        assert_eq!(gerundize(verb), expected.replace('_', " "), "{verb}");
        n += 1;
    }
    assert_eq!(n, 116);
}

#[test]
fn prompt_examples() {
    let label = |verb: &str, object: &str| HoiLabel {
        verb: verb.into(),
        object: object.into(),
        index: 0,
    };
    assert_eq!(make_prompt(&label("ride", "bicycle")).text, "a person riding a bicycle");
    assert_eq!(make_prompt(&label("eat", "apple")).text, "a person eating an apple");
    assert_eq!(make_prompt(&label("no_interaction", "bicycle")).text, "a person and a bicycle");
    assert_eq!(make_prompt(&label("hop_on", "elephant")).text, "a person hopping on an elephant");
    assert_eq!(make_prompt(&label("hold", "hair_drier")).text, "a person holding a hair drier");
}

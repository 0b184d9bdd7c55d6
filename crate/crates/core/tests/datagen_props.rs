use avvp_core::datagen::{generate, load_dataset, save_dataset, Dataset, FloatEncoding, GenConfig};
use avvp_core::model::{predict, ModelConfig, ModelParams};

/// With no noise, projecting a segment onto each prototype and thresholding
/// at half the prototype's squared norm recovers the labels exactly.
#[test]
fn noiseless_features_are_linearly_decodable() {
    let cfg = GenConfig {
        noise: 0.0,
        n_videos: 100,
        ..GenConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let (pa, pv) = cfg.prototypes();
    let mut checked = 0;
    for v in &ds.videos {
        let gt = v.segment_gt.as_ref().unwrap();
        for (feats, protos, grid) in [(&v.audio, &pa, gt.audio()), (&v.visual, &pv, gt.visual())] {
            for t in 0..ds.segments {
                for c in 0..ds.classes {
                    let dot: f64 = feats.row(t).iter().zip(protos.row(c)).map(|(a, b)| a * b).sum();
                    let norm2: f64 = protos.row(c).iter().map(|x| x * x).sum();
                    assert_eq!(dot > 0.5 * norm2, grid.get(t, c), "video {} t={t} c={c}", v.id);
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 100 * 2 * 10 * 5);
}

#[test]
fn saved_bytes_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&GenConfig {
        n_videos: 20,
        ..GenConfig::default()
    })
    .unwrap();
    for enc in [FloatEncoding::Decimal, FloatEncoding::Hex] {
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        save_dataset(&ds, &a, enc).unwrap();
        save_dataset(&generate(&GenConfig { n_videos: 20, ..GenConfig::default() }).unwrap(), &b, enc).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(load_dataset(&a).unwrap(), ds);
    }
}

#[test]
fn wide_features_run_through_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        n_videos: 2,
        audio_dim: 768,
        visual_dim: 768,
        ..GenConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let path = dir.path().join("wide.avvp");
    save_dataset(&ds, &path, FloatEncoding::Hex).unwrap();
    let back: Dataset = load_dataset(&path).unwrap();
    assert_eq!((back.audio_dim, back.visual_dim), (768, 768));
    let params = ModelParams::init(&ModelConfig {
        audio_dim: 768,
        visual_dim: 768,
        ..ModelConfig::default()
    })
    .unwrap();
    for v in &back.videos {
        let p = predict(&params, v).unwrap();
        assert!(p.p_video.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}

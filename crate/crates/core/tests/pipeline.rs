use slicefuse::checkpoint::Checkpoint;
use slicefuse::crf::{crf_predict, fit_crf, CrfGrid};
use slicefuse::data::{generate_synthetic, select, split_patients, SyntheticConfig, VolumeRecord};
use slicefuse::descriptor::StoredDescriptors;
use slicefuse::fusion::{fuse_predict, HeadMode};
use slicefuse::metrics::{metrics_report, EmrMode};
use slicefuse::mlp::mlp_predict;
use slicefuse::slice_head::{base_logits, head_predict};
use slicefuse::training::{train_mlp, train_stage1, train_stage2, FusionOptions, TrainConfig, TrainError};
use slicefuse::{LabelMatrix, Tensor};

fn small_data(seed: u64) -> Vec<VolumeRecord> {
    let cfg = SyntheticConfig { mu: 2.5, ..SyntheticConfig::uniform(48, 12, 5, 3, 0.9, 0.3, seed) };
    generate_synthetic(&cfg).unwrap()
}

fn quick_cfg() -> TrainConfig {
    TrainConfig { lr: 1e-3, max_epochs: 5, seed: 3, ..TrainConfig::default() }
}

fn stack(records: &[VolumeRecord], preds: &[Tensor]) -> (LabelMatrix, Tensor) {
    let b = records[0].labels.cols();
    let rows: usize = records.iter().map(|r| r.slices()).sum();
    let y = records.iter().flat_map(|r| r.labels.data().to_vec()).collect();
    let p = preds.iter().flat_map(|t| t.data().to_vec()).collect();
    (LabelMatrix::new(rows, b, y).unwrap(), Tensor::matrix(rows, b, p).unwrap())
}

#[test]
fn train_save_load_predict() {
    let records = small_data(21);
    let split = split_patients(&records, [0.6, 0.2, 0.2], 1).unwrap();
    let (train, val, test) = (select(&records, &split.train), select(&records, &split.val), select(&records, &split.test));
    let cfg = quick_cfg();
    let src = StoredDescriptors;

    let (head, h1) = train_stage1(&train, &val, &src, &cfg).unwrap();
    let opts = FusionOptions { hidden: 6, head_mode: HeadMode::Concat };
    let (fusion, h2) = train_stage2(&train, &val, &src, Some(&head), opts, &cfg).unwrap();
    let (mlp, _) = train_mlp(&train, &val, &src, 16, &cfg).unwrap();
    assert_eq!(h1.len(), cfg.max_epochs);
    assert_eq!(h2.len(), cfg.max_epochs);

    let val_logits: Vec<(Tensor, LabelMatrix)> =
        val.iter().map(|r| (base_logits(&head, &r.descriptors).unwrap(), r.labels.clone())).collect();
    let crf = fit_crf(&val_logits, &CrfGrid::default()).unwrap();

    let ck = Checkpoint { fusion: Some(fusion.clone()), head: Some(head.clone()), mlp: Some(mlp.clone()), crf: Some(crf.clone()) };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("all.sfck");
    ck.write(&path).unwrap();
    let back = Checkpoint::read(&path).unwrap();

    for r in &test {
        let d = &r.descriptors;
        assert!(fuse_predict(back.fusion.as_ref().unwrap(), d).unwrap().bitwise_eq(&fuse_predict(&fusion, d).unwrap()));
        assert!(head_predict(back.head.as_ref().unwrap(), d).unwrap().bitwise_eq(&head_predict(&head, d).unwrap()));
        assert!(mlp_predict(back.mlp.as_ref().unwrap(), d).unwrap().bitwise_eq(&mlp_predict(&mlp, d).unwrap()));
        let logits = base_logits(&head, d).unwrap();
        assert_eq!(crf_predict(back.crf.as_ref().unwrap(), &logits).unwrap(), crf_predict(&crf, &logits).unwrap());
    }

    let preds: Vec<Tensor> = test.iter().map(|r| fuse_predict(&fusion, &r.descriptors).unwrap()).collect();
    let (y, p) = stack(&test, &preds);
    let report = metrics_report(&y, &p, EmrMode::Strict).unwrap();
    assert!(report.ap_comparable);
    assert!((0.0..=1.0).contains(&report.map_micro));
    assert!(report.map_micro > 0.4, "fused micro-mAP {}", report.map_micro);
}

#[test]
fn training_is_reproducible() {
    let records = small_data(22);
    let split = split_patients(&records, [0.6, 0.2, 0.2], 2).unwrap();
    let (train, val) = (select(&records, &split.train), select(&records, &split.val));
    let cfg = quick_cfg();
    let (head, _) = train_stage1(&train, &val, &StoredDescriptors, &cfg).unwrap();
    let opts = FusionOptions { hidden: 4, head_mode: HeadMode::Symmetric };
    let run = || train_stage2(&train, &val, &StoredDescriptors, Some(&head), opts, &cfg).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(Checkpoint { fusion: Some(a), ..Checkpoint::default() }.encode(), Checkpoint { fusion: Some(b), ..Checkpoint::default() }.encode());
}

#[test]
fn stage2_requires_stage1() {
    let records = small_data(23);
    let opts = FusionOptions { hidden: 4, head_mode: HeadMode::Concat };
    let err = train_stage2(&records[..10], &records[10..], &StoredDescriptors, None, opts, &quick_cfg()).unwrap_err();
    assert!(matches!(err, TrainError::MissingStage1));
}

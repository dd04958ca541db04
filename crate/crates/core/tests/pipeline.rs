//! End-to-end: train on synthetic data, pack, serialize, and check that every
//! path predicts the same classes.

use std::path::PathBuf;

use mpdc_core::container::{decode_model, encode_model, encode_packed, ModelFile};
use mpdc_core::dataio::{load_idx, mnist_paths, synth_blobs, BlobSpec};
use mpdc_core::decompose::blockify;
use mpdc_core::linalg::MacCounter;
use mpdc_core::pack::{compression_report, pack_model, packed_forward};
use mpdc_core::train::{evaluate, forward, predictions, train, Architecture, MaskAlignment, TrainConfig};

fn blob_arch(alignment: MaskAlignment) -> Architecture {
    Architecture::new(vec![8, 32, 16, 4], &[(1, 4), (2, 4)])
        .unwrap()
        .with_alignment(alignment)
}

#[test]
fn train_pack_serialize_agree() {
    let spec = BlobSpec::new(60, 4, 8, 8.0, 21);
    let data = synth_blobs(&spec).unwrap();
    let test = synth_blobs(&BlobSpec { seed: 22, ..spec }).unwrap();
    for alignment in [MaskAlignment::Independent, MaskAlignment::Aligned] {
        let out = train(&TrainConfig::new(16, 0.1, 40, 4), &blob_arch(alignment), &data, Some(&test)).unwrap();
        let model = out.model;
        assert!(model.conforms_to_masks());
        let acc = evaluate(&model, &test).unwrap();
        assert!(acc > 0.8, "accuracy {acc}");

        let batch = test.batch(&(0..test.len()).collect::<Vec<_>>());
        let dense_pred = predictions(forward(&model, &batch).unwrap().logits());
        let packed = pack_model(&model).unwrap();
        let packed_logits = packed_forward(&packed, &batch, &mut MacCounter::new()).unwrap();
        assert!(forward(&model, &batch).unwrap().logits().max_abs_diff(&packed_logits) <= 1e-9);
        assert_eq!(predictions(&packed_logits), dense_pred);
        if alignment == MaskAlignment::Aligned {
            assert_eq!(packed.interior_gathers(), 0);
        }

        let ModelFile::Dense(reloaded) = decode_model(&encode_model(&model)).unwrap() else {
            panic!("dense container");
        };
        assert_eq!(predictions(forward(&reloaded, &batch).unwrap().logits()), dense_pred);
        let ModelFile::Packed(repacked) = decode_model(&encode_packed(&packed)).unwrap() else {
            panic!("packed container");
        };
        let again = packed_forward(&repacked, &batch, &mut MacCounter::new()).unwrap();
        assert_eq!(again, packed_logits);
    }
}

#[test]
fn trained_masks_are_recoverable() {
    let data = synth_blobs(&BlobSpec::new(30, 4, 8, 8.0, 1)).unwrap();
    let model = train(&TrainConfig::new(16, 0.1, 3, 2), &blob_arch(MaskAlignment::Independent), &data, None)
        .unwrap()
        .model;
    // The learned support sits inside the mask; the mask support itself
    // decomposes back into its k blocks.
    for layer in model.layers().iter().filter(|l| l.mask().is_some()) {
        let mask = layer.mask().unwrap();
        let b = blockify(mask.rows(), mask.cols(), &mask.support_sorted()).unwrap();
        assert_eq!(b.pattern.k(), mask.k());
        assert!(layer.weights().support().iter().all(|&(r, c)| mask.contains(r, c)));
    }
}

#[test]
fn lenet_accounting() {
    let model = mpdc_core::train::init_model(&Architecture::lenet_300_100(10), 3).unwrap();
    let r = compression_report(&model).unwrap();
    assert_eq!((r.stored_weights, r.dense_weights, r.biases), (27520, 266200, 410));
    assert_eq!(r.weight_ratio, 266200.0 / 27520.0);
    assert_eq!(r.param_ratio, 266610.0 / 27930.0);
    let per_layer: Vec<(usize, usize)> = r.layers.iter().map(|l| (l.stored_weights, l.dense_weights)).collect();
    assert_eq!(per_layer, vec![(23520, 235200), (3000, 30000), (1000, 1000)]);
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MPDC_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

#[test]
fn mnist_files_parse_when_present() {
    let [(tri, trl), (tei, tel)] = mnist_paths(mnist_dir());
    if !tri.exists() {
        eprintln!("MNIST not found under {}; skipping", mnist_dir().display());
        return;
    }
    let train = load_idx(&tri, &trl).unwrap();
    let test = load_idx(&tei, &tel).unwrap();
    assert_eq!((train.len(), train.dim()), (60000, 784));
    assert_eq!((test.len(), test.dim()), (10000, 784));
    assert!(train.labels().iter().chain(test.labels()).all(|&l| l < 10));
    assert!(train.features().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(load_idx(&tei, &tel).unwrap(), test);
}

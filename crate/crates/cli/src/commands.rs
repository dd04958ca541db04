use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mpdc_core::container::{read_model, write_mask, write_model, write_packed, ModelFile};
use mpdc_core::dataio::{load_idx, mnist_paths, synth_blobs, BlobSpec, Dataset};
use mpdc_core::decompose::{bipartite_components, blockify};
use mpdc_core::linalg::MacCounter;
use mpdc_core::maskgen::{make_mask, sparsity_to_k};
use mpdc_core::pack::{compression_report, pack_model, packed_forward_with, PackedModel};
use mpdc_core::rng::derive_layer_seeds;
use mpdc_core::train::{evaluate, predictions, train_with, EpochMetrics};

use crate::bench::{run_bench, BenchParams};
use crate::config::ConfigFile;
use crate::{resolve_threads, BenchArgs, CliError, DataArgs, DecomposeArgs, EvalArgs, GenMaskArgs, PackArgs, PackMode, TrainArgs};

fn log(msg: impl std::fmt::Display) {
    eprintln!("[mpdc] {msg}");
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

pub fn gen_mask(a: &GenMaskArgs) -> Result<Value, CliError> {
    let k = match (a.k, a.sparsity) {
        (Some(k), _) => k,
        (None, Some(s)) => sparsity_to_k(s)?,
        (None, None) => return Err(CliError::Usage("give --k or --sparsity".into())),
    };
    let seeds = derive_layer_seeds(a.seed, 1)?[0];
    let mask = make_mask(a.rows, a.cols, k, seeds.row_seed, seeds.col_seed)?;
    write_mask(&a.out, &mask)?;
    if let Some(path) = &a.support_out {
        let mut text = format!("{} {}\n", a.rows, a.cols);
        for (r, c) in mask.support_sorted() {
            text.push_str(&format!("{r} {c}\n"));
        }
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(json!({
        "m": mask.rows(),
        "n": mask.cols(),
        "k": mask.k(),
        "density": mask.density(),
        "nnz": mask.nnz(),
        "row_seed": mask.row_seed(),
        "col_seed": mask.col_seed(),
        "out": a.out,
    }))
}

/// MNIST directory from the flag, `MPDC_MNIST_DIR`, or `./data/mnist`.
pub fn mnist_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("MPDC_MNIST_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Train and test splits with `dim` features and at most `classes` labels.
pub fn load_data(a: &DataArgs, dim: usize, classes: usize) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = if a.synthetic {
        let spec = BlobSpec::new(a.blob_per_class, classes, dim, a.blob_separation, a.blob_seed);
        let test = BlobSpec {
            seed: a.blob_seed.wrapping_add(1),
            ..spec
        };
        (synth_blobs(&spec)?, synth_blobs(&test)?)
    } else {
        let dir = mnist_dir(a.data_dir.as_deref());
        let [(tri, trl), (tei, tel)] = mnist_paths(&dir);
        if !tri.exists() || !tei.exists() {
            return Err(CliError::Usage(format!(
                "MNIST IDX files not found in {} (set --data-dir or MPDC_MNIST_DIR)",
                dir.display()
            )));
        }
        (load_idx(&tri, &trl)?, load_idx(&tei, &tel)?)
    };
    if train.dim() != dim {
        return Err(CliError::Usage(format!(
            "data has {} features but the network expects {dim}",
            train.dim()
        )));
    }
    if let Some(&bad) = train.labels().iter().chain(test.labels()).find(|&&l| l >= classes) {
        return Err(CliError::Usage(format!("label {bad} does not fit {classes} outputs")));
    }
    let train = a.train_limit.map_or(train.clone(), |n| train.truncated(n));
    let test = a.eval_limit.map_or(test.clone(), |n| test.truncated(n));
    Ok((train, test))
}

pub fn train(a: &TrainArgs, stream: &mut dyn Write) -> Result<Value, CliError> {
    let mut cfg = ConfigFile::load(&a.config)?;
    if a.no_permute {
        cfg.permute = false;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.mask_trials == 0 {
        return Err(CliError::Usage("--mask-trials must be at least 1".into()));
    }
    let arch = cfg.architecture()?;
    let base = cfg.train_config()?;
    let dims = arch.layer_dims();
    let (train_set, test_set) = load_data(&a.data, dims[0], dims[dims.len() - 1])?;
    log(format_args!(
        "training on {} samples, evaluating on {}",
        train_set.len(),
        test_set.len()
    ));

    let mut accuracies = Vec::with_capacity(a.mask_trials);
    let mut first = None;
    for trial in 0..a.mask_trials {
        let mut config = base.clone();
        config.master_seed = base.master_seed.wrapping_add(trial as u64);
        let mut write_err = None;
        let outcome = train_with(&config, &arch, &train_set, Some(&test_set), |m: &EpochMetrics| {
            log(format_args!(
                "trial {trial} epoch {} loss {:.5} eval {:.4}",
                m.epoch,
                m.train_loss,
                m.eval_acc.unwrap_or(f64::NAN)
            ));
            let line = json!({
                "trial": trial,
                "epoch": m.epoch,
                "train_loss": m.train_loss,
                "eval_acc": m.eval_acc,
            });
            if let Err(e) = writeln!(stream, "{line}") {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(CliError::Io("metrics stream".into(), e));
        }
        let acc = match outcome.history.last().and_then(|m| m.eval_acc) {
            Some(acc) => acc,
            None => evaluate(&outcome.model, &test_set)?,
        };
        accuracies.push(acc);
        if trial == 0 {
            write_model(&a.out, &outcome.model)?;
            first = Some(outcome.model);
        }
    }
    let model = first.expect("at least one trial");
    let min = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(json!({
        "model": a.out,
        "trials": a.mask_trials,
        "epochs": base.epochs,
        "permute": arch.permute(),
        "accuracies": accuracies,
        "min_acc": min,
        "mean_acc": mean,
        "max_acc": max,
        "train_samples": train_set.len(),
        "test_samples": test_set.len(),
        "nonzero_weights": model.layers().iter().map(|l| l.weights().nnz()).collect::<Vec<_>>(),
    }))
}

pub fn pack(a: &PackArgs) -> Result<Value, CliError> {
    let model = match read_model(&a.model)? {
        ModelFile::Dense(m) => m,
        ModelFile::Packed(_) => return Err(CliError::Usage("model is already packed".into())),
    };
    let packed = pack_model(&model)?;
    if a.mode == PackMode::Aligned && packed.interior_gathers() > 0 {
        return Err(CliError::Usage(format!(
            "aligned mode: {} interior boundaries still need a gather; train with \"align_masks\": true",
            packed.interior_gathers()
        )));
    }
    write_packed(&a.out, &packed)?;
    let mut report = serde_json::to_value(compression_report(&model)?).expect("report serializes");
    report["mode"] = json!(match a.mode {
        PackMode::Independent => "independent",
        PackMode::Aligned => "aligned",
    });
    report["out"] = json!(a.out);
    Ok(report)
}

const EVAL_CHUNK: usize = 1000;

/// Packed-path predictions for every sample of `data`.
pub fn packed_predictions(packed: &PackedModel, data: &Dataset, threads: usize) -> Result<Vec<usize>, CliError> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for idx in all.chunks(EVAL_CHUNK) {
        let logits = packed_forward_with(packed, &data.batch(idx), &mut MacCounter::new(), threads)?;
        out.extend(predictions(&logits));
    }
    Ok(out)
}

fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

pub fn eval(a: &EvalArgs) -> Result<Value, CliError> {
    let threads = resolve_threads(a.threads)?;
    let file = read_model(&a.model)?;
    let (d_in, d_out) = match &file {
        ModelFile::Dense(m) => (m.input_dim(), m.output_dim()),
        ModelFile::Packed(p) => (p.input_dim(), p.output_dim()),
    };
    let (_, test) = load_data(&a.data, d_in, d_out)?;
    match file {
        ModelFile::Dense(model) => {
            let dense = evaluate(&model, &test)?;
            let packed = packed_predictions(&pack_model(&model)?, &test, threads)?;
            let dense_preds: Vec<usize> = {
                let all: Vec<usize> = (0..test.len()).collect();
                let mut v = Vec::with_capacity(test.len());
                for idx in all.chunks(EVAL_CHUNK) {
                    v.extend(predictions(mpdc_core::train::forward(&model, &test.batch(idx))?.logits()));
                }
                v
            };
            let mismatches = dense_preds.iter().zip(&packed).filter(|(a, b)| a != b).count();
            Ok(json!({
                "mode": "dense",
                "samples": test.len(),
                "accuracy": dense,
                "packed_accuracy": accuracy(&packed, test.labels()),
                "prediction_mismatches": mismatches,
            }))
        }
        ModelFile::Packed(packed) => {
            let preds = packed_predictions(&packed, &test, threads)?;
            Ok(json!({
                "mode": "packed",
                "samples": test.len(),
                "accuracy": accuracy(&preds, test.labels()),
            }))
        }
    }
}

pub fn bench(a: &BenchArgs) -> Result<Value, CliError> {
    let report = run_bench(BenchParams {
        m: a.m,
        n: a.n,
        k: a.k,
        reps: a.reps,
        batch: a.batch,
        threads: resolve_threads(a.threads)?,
        seed: a.seed,
    })?;
    log(format_args!(
        "dense median {:.4}s, packed median {:.4}s, speedup {:.2}x",
        report.dense.median_s, report.packed.median_s, report.speedup
    ));
    Ok(serde_json::to_value(report).expect("report serializes"))
}

/// Parses the support text format: header `m n`, then `row col` lines.
pub fn parse_support(text: &str) -> Result<(usize, usize, Vec<(usize, usize)>), CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let pair = |line: usize, l: &str| -> Result<(usize, usize), CliError> {
        let fields: Vec<&str> = l.split_whitespace().collect();
        let bad = |message: String| CliError::Parse { line, message };
        if fields.len() != 2 {
            return Err(bad(format!("expected two integers, found {:?}", l)));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("{s:?} is not a nonnegative integer")));
        Ok((num(fields[0])?, num(fields[1])?))
    };
    let (line, header) = lines.next().ok_or(CliError::Parse {
        line: 1,
        message: "missing \"m n\" header".into(),
    })?;
    let (m, n) = pair(line, header)?;
    let mut support = Vec::new();
    for (line, l) in lines {
        let (r, c) = pair(line, l)?;
        if r >= m || c >= n {
            return Err(CliError::Parse {
                line,
                message: format!("entry ({r}, {c}) outside {m}x{n}"),
            });
        }
        support.push((r, c));
    }
    Ok((m, n, support))
}

pub fn decompose(a: &DecomposeArgs) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(&a.support).map_err(io_err(&a.support))?;
    let (m, n, support) = parse_support(&text)?;
    let set = bipartite_components(m, n, &support)?;
    let blocks = blockify(m, n, &support)?;
    let shapes: Vec<[usize; 2]> = set.components.iter().map(|c| [c.rows.len(), c.cols.len()]).collect();
    Ok(json!({
        "m": m,
        "n": n,
        "nnz": support.len(),
        "k": set.components.len(),
        "block_shapes": shapes,
        "components": set.components,
        "isolated_rows": set.isolated_rows,
        "isolated_cols": set.isolated_cols,
        "p_row": blocks.p_row.as_slice(),
        "p_col": blocks.p_col.as_slice(),
        "row_bounds": blocks.pattern.row_bounds(),
        "col_bounds": blocks.pattern.col_bounds(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_parsing() {
        let (m, n, s) = parse_support("# comment\n2 3\n0 1\n\n1 2\n").unwrap();
        assert_eq!((m, n), (2, 3));
        assert_eq!(s, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn support_errors_carry_line_numbers() {
        let err = parse_support("2 2\n0 0\n0 x\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        let err = parse_support("2 2\n0 5\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }));
        let err = parse_support("2 2 2\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 1, .. }));
        assert!(parse_support("").is_err());
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]), 0.5);
        assert_eq!(accuracy(&[], &[]), 0.0);
    }
}
